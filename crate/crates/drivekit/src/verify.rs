//! Engine verification suite: central finite-difference checks for every
//! differentiable operation, attention invariants against an independent
//! scalar-loop oracle, and optimizer closed forms. Backs the `gradcheck`
//! subcommand.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::gradcheck::check_gradient;
use crate::nn::{bind_params, register_gru, FwdCtx, Mode, ParamStore};
use crate::perception::{msa_forward, EncodeTrace, EncoderConfig};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl SuiteCheck {
    fn from_worst(name: &str, worst_rel: f64, tol: f64) -> SuiteCheck {
        SuiteCheck {
            name: name.to_string(),
            passed: worst_rel < tol,
            detail: format!("worst relative error {worst_rel:.3e} (tolerance {tol:.0e})"),
        }
    }
}

fn rng(tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(0xd21e ^ tag)
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Weighted-sum projection of a node, giving a scalar loss with a dense,
/// non-uniform upstream gradient.
fn project<S: Scalar>(tape: &mut Tape<S>, node: NodeId, weights: &[f64]) -> NodeId {
    let shape = tape.shape(node).to_vec();
    let w = tape.constant(Tensor::from_f64_slice(shape, weights));
    let prod = tape.mul(node, w).expect("projection shapes agree");
    tape.sum_all(prod)
}

/// Finite-difference check of one differentiable-input op at f64.
/// `build` maps the input node to the output node on a fresh tape.
fn fd_input_check<B>(name: &str, shape: Vec<usize>, x0: Vec<f64>, tol: f64, build: B) -> SuiteCheck
where
    B: Fn(&mut Tape<f64>, NodeId) -> NodeId,
{
    let out_weights = {
        let mut tape: Tape<f64> = Tape::new();
        let x = tape.constant(Tensor::new(shape.clone(), x0.clone()));
        let out = build(&mut tape, x);
        let n = tape.value(out).numel();
        rand_vec(&mut rng(name.len() as u64), n, 1.0)
    };

    let mut tape: Tape<f64> = Tape::new();
    let x = tape.leaf(Tensor::new(shape.clone(), x0.clone()), true);
    let out = build(&mut tape, x);
    let loss = project(&mut tape, out, &out_weights);
    tape.backward(loss).expect("scalar loss");
    let analytic = tape.grad(x).unwrap().to_vec();

    let worst = check_gradient(&x0, &analytic, &[], 1e-6, |xv| {
        let mut t: Tape<f64> = Tape::new();
        let xn = t.constant(Tensor::new(shape.clone(), xv.to_vec()));
        let out = build(&mut t, xn);
        let loss = project(&mut t, out, &out_weights);
        t.data(loss)[0]
    });
    SuiteCheck::from_worst(name, worst.rel_error, tol)
}

fn elementwise_checks(out: &mut Vec<SuiteCheck>) {
    let mut r = rng(1);
    // keep relu/abs probes away from their kinks
    let x: Vec<f64> = (0..12)
        .map(|_| {
            let v: f64 = r.gen_range(0.2..1.5);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect();

    out.push(fd_input_check("relu", vec![12], x.clone(), 1e-5, |t, x| {
        t.relu(x)
    }));
    out.push(fd_input_check("sigmoid", vec![12], x.clone(), 1e-5, |t, x| {
        t.sigmoid(x)
    }));
    out.push(fd_input_check("tanh", vec![12], x.clone(), 1e-5, |t, x| {
        t.tanh(x)
    }));
    out.push(fd_input_check("abs", vec![12], x.clone(), 1e-5, |t, x| {
        t.abs(x)
    }));
    out.push(fd_input_check("scale", vec![12], x.clone(), 1e-5, |t, x| {
        t.scale(x, 1.7)
    }));
    out.push(fd_input_check("softmax", vec![2, 6], x.clone(), 1e-5, |t, x| {
        t.softmax(x)
    }));
    out.push(fd_input_check("sum_axis0", vec![3, 4], x.clone(), 1e-5, |t, x| {
        t.sum_axis0(x)
    }));
    out.push(fd_input_check("reshape", vec![3, 4], x.clone(), 1e-5, |t, x| {
        t.reshape(x, vec![2, 6])
    }));
    out.push(fd_input_check("slice_cols", vec![3, 4], x.clone(), 1e-5, |t, x| {
        t.slice_cols(x, 1, 2)
    }));
    out.push(fd_input_check("gather", vec![12], x, 1e-5, |t, x| {
        let idx = std::sync::Arc::new(vec![0u32, 5, 5, 11, 3]);
        t.gather(x, idx)
    }));
}

fn binary_checks(out: &mut Vec<SuiteCheck>) {
    let mut r = rng(2);
    let a0 = rand_vec(&mut r, 12, 1.0);
    let b0 = rand_vec(&mut r, 12, 1.0);
    let b0c = b0.clone();
    out.push(fd_input_check("add", vec![12], a0.clone(), 1e-5, move |t, x| {
        let b = t.constant(Tensor::new(vec![12], b0c.clone()));
        t.add(x, b).unwrap()
    }));
    let b0c = b0.clone();
    out.push(fd_input_check("sub", vec![12], a0.clone(), 1e-5, move |t, x| {
        let b = t.constant(Tensor::new(vec![12], b0c.clone()));
        t.sub(b, x).unwrap()
    }));
    let b0c = b0.clone();
    out.push(fd_input_check("mul", vec![12], a0.clone(), 1e-5, move |t, x| {
        let b = t.constant(Tensor::new(vec![12], b0c.clone()));
        t.mul(x, b).unwrap()
    }));
    let row = rand_vec(&mut r, 4, 1.0);
    out.push(fd_input_check(
        "add_row_broadcast (row grad)",
        vec![4],
        row.clone(),
        1e-5,
        {
            let a0 = a0.clone();
            move |t, x| {
                let a = t.constant(Tensor::new(vec![3, 4], a0.clone()));
                t.add_row_broadcast(a, x).unwrap()
            }
        },
    ));
    let chan = rand_vec(&mut r, 3, 1.0);
    out.push(fd_input_check(
        "add_chan_broadcast (chan grad)",
        vec![3],
        chan,
        1e-5,
        move |t, x| {
            let a = t.constant(Tensor::new(vec![3, 2, 2], a0.clone()));
            t.add_chan_broadcast(a, x).unwrap()
        },
    ));
    let c0 = rand_vec(&mut r, 6, 1.0);
    out.push(fd_input_check("concat_cols", vec![3, 2], c0, 1e-5, |t, x| {
        let other = t.constant(Tensor::ones(vec![3, 3]));
        t.concat_cols(&[x, other])
    }));
}

fn matmul_checks(out: &mut Vec<SuiteCheck>) {
    let mut r = rng(3);
    let a0 = rand_vec(&mut r, 12, 1.0);
    let b0 = rand_vec(&mut r, 8, 1.0);
    let b0c = b0.clone();
    out.push(fd_input_check("matmul (lhs grad)", vec![3, 4], a0.clone(), 1e-5, move |t, x| {
        let b = t.constant(Tensor::new(vec![4, 2], b0c.clone()));
        t.matmul(x, b).unwrap()
    }));
    let a0c = a0.clone();
    out.push(fd_input_check("matmul (rhs grad)", vec![4, 2], b0.clone(), 1e-5, move |t, x| {
        let a = t.constant(Tensor::new(vec![3, 4], a0c.clone()));
        t.matmul(a, x).unwrap()
    }));
    let k0 = rand_vec(&mut r, 8, 1.0);
    out.push(fd_input_check("matmul_bt", vec![3, 4], a0, 1e-5, move |t, x| {
        let b = t.constant(Tensor::new(vec![2, 4], k0.clone()));
        t.matmul_bt(x, b).unwrap()
    }));
}

fn conv_pool_checks(out: &mut Vec<SuiteCheck>) {
    let mut r = rng(4);
    let x0 = rand_vec(&mut r, 2 * 6 * 5, 1.0);
    let k0 = rand_vec(&mut r, 3 * 2 * 3 * 3, 0.6);
    let k0c = k0.clone();
    out.push(fd_input_check(
        "conv2d (input grad)",
        vec![2, 6, 5],
        x0.clone(),
        1e-5,
        move |t, x| {
            let k = t.constant(Tensor::new(vec![3, 2, 3, 3], k0c.clone()));
            t.conv2d(x, k, 2, 1).unwrap()
        },
    ));
    let x0c = x0.clone();
    out.push(fd_input_check(
        "conv2d (kernel grad)",
        vec![3, 2, 3, 3],
        k0,
        1e-5,
        move |t, k| {
            let x = t.constant(Tensor::new(vec![2, 6, 5], x0c.clone()));
            t.conv2d(x, k, 2, 1).unwrap()
        },
    ));
    out.push(fd_input_check(
        "maxpool2d",
        vec![1, 6, 6],
        rand_vec(&mut r, 36, 1.0),
        1e-5,
        |t, x| t.maxpool2d(x, 3, 2, 1),
    ));
    out.push(fd_input_check(
        "global_avg_pool",
        vec![2, 3, 3],
        rand_vec(&mut r, 18, 1.0),
        1e-5,
        |t, x| t.global_avg_pool(x),
    ));
}

fn norm_checks(out: &mut Vec<SuiteCheck>) {
    let mut r = rng(5);
    let x0 = rand_vec(&mut r, 2 * 4 * 3, 1.0);
    let gamma = rand_vec(&mut r, 2, 1.0);
    let beta = rand_vec(&mut r, 2, 0.5);
    let (g, b) = (gamma.clone(), beta.clone());
    out.push(fd_input_check(
        "batch_norm train (input grad)",
        vec![2, 4, 3],
        x0.clone(),
        1e-4,
        move |t, x| {
            let gn = t.constant(Tensor::new(vec![2], g.clone()));
            let bn = t.constant(Tensor::new(vec![2], b.clone()));
            t.batch_norm_train(x, gn, bn, 1e-5).0
        },
    ));
    let x0c = x0.clone();
    let b2 = beta.clone();
    out.push(fd_input_check(
        "batch_norm train (gamma grad)",
        vec![2],
        gamma.clone(),
        1e-5,
        move |t, g| {
            let x = t.constant(Tensor::new(vec![2, 4, 3], x0c.clone()));
            let bn = t.constant(Tensor::new(vec![2], b2.clone()));
            t.batch_norm_train(x, g, bn, 1e-5).0
        },
    ));
    let g2 = gamma.clone();
    out.push(fd_input_check(
        "batch_norm eval (input grad)",
        vec![2, 4, 3],
        x0.clone(),
        1e-5,
        move |t, x| {
            let gn = t.constant(Tensor::new(vec![2], g2.clone()));
            let bn = t.constant(Tensor::new(vec![2], beta.clone()));
            t.batch_norm_eval(x, gn, bn, &[0.1, -0.2], &[1.3, 0.7], 1e-5)
        },
    ));

    let ln_x = rand_vec(&mut r, 3 * 5, 1.0);
    let ln_g = rand_vec(&mut r, 5, 1.0);
    let ln_b = rand_vec(&mut r, 5, 0.5);
    let (g3, b3) = (ln_g.clone(), ln_b.clone());
    out.push(fd_input_check(
        "layer_norm (input grad)",
        vec![3, 5],
        ln_x.clone(),
        1e-4,
        move |t, x| {
            let gn = t.constant(Tensor::new(vec![5], g3.clone()));
            let bn = t.constant(Tensor::new(vec![5], b3.clone()));
            t.layer_norm(x, gn, bn, 1e-5)
        },
    ));
    out.push(fd_input_check(
        "layer_norm (gamma grad)",
        vec![5],
        ln_g,
        1e-5,
        move |t, g| {
            let x = t.constant(Tensor::new(vec![3, 5], ln_x.clone()));
            let bn = t.constant(Tensor::new(vec![5], ln_b.clone()));
            t.layer_norm(x, g, bn, 1e-5)
        },
    ));
}

fn gru_check(out: &mut Vec<SuiteCheck>) {
    let mut store = ParamStore::new();
    register_gru(&mut store, "gru", 3, 4, 77);
    let mut r = rng(6);
    let x0 = rand_vec(&mut r, 3, 1.0);
    let h0 = rand_vec(&mut r, 4, 1.0);
    let h0c = h0.clone();
    let store2 = store.clone();
    out.push(fd_input_check("gru_cell (x grad)", vec![1, 3], x0.clone(), 1e-5, move |t, x| {
        let bound = bind_params(t, &store2, false);
        let h = t.constant(Tensor::new(vec![1, 4], h0c.clone()));
        let mut ctx = FwdCtx::new(t, &store2, &bound, Mode::Eval);
        ctx.gru_cell(x, h, "gru").unwrap()
    }));
    out.push(fd_input_check("gru_cell (h grad)", vec![1, 4], h0, 1e-5, move |t, h| {
        let bound = bind_params(t, &store, false);
        let x = t.constant(Tensor::new(vec![1, 3], x0.clone()));
        let mut ctx = FwdCtx::new(t, &store, &bound, Mode::Eval);
        ctx.gru_cell(x, h, "gru").unwrap()
    }));
}

/// 3-token single-head attention against a scalar-loop evaluation of the
/// formula: (Q,K,V) = z·W, A = softmax(QKᵀ/√d), out = (A·V)·W_msa.
fn attention_oracle_check() -> SuiteCheck {
    let cfg = EncoderConfig {
        patch_size: 4,
        token_dim: 16,
        num_layers: 1,
        num_heads: 1,
        mlp_hidden: 8,
        scale_num: 1,
        scale_den: 8,
    };
    let mut store = ParamStore::new();
    store.register(
        "enc0.head0.w_qkv",
        vec![16, 48],
        crate::nn::Init::HeUniform { fan_in: 16 },
        9,
    );
    store.register(
        "enc0.w_msa",
        vec![16, 16],
        crate::nn::Init::HeUniform { fan_in: 16 },
        9,
    );

    let mut r = rng(7);
    let z0 = rand_vec(&mut r, 3 * 16, 1.0);

    // tape path
    let mut tape: Tape<f64> = Tape::new();
    let bound = bind_params(&mut tape, &store, false);
    let z = tape.constant(Tensor::new(vec![3, 16], z0.clone()));
    let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
    let mut trace = EncodeTrace::default();
    let out = msa_forward(&mut ctx, z, "enc0", &cfg, &mut trace).unwrap();
    let got = tape.data(out).to_vec();

    // independent scalar-loop oracle
    let w_qkv: Vec<f64> = store
        .get("enc0.head0.w_qkv")
        .data
        .iter()
        .map(|&v| v as f64)
        .collect();
    let w_msa: Vec<f64> = store
        .get("enc0.w_msa")
        .data
        .iter()
        .map(|&v| v as f64)
        .collect();
    let (n, d, dh) = (3usize, 16usize, 16usize);
    let mut q = vec![0.0; n * dh];
    let mut k = vec![0.0; n * dh];
    let mut v = vec![0.0; n * dh];
    for i in 0..n {
        for j in 0..dh {
            let (mut sq, mut sk, mut sv) = (0.0, 0.0, 0.0);
            for p in 0..d {
                let zt = z0[i * d + p];
                sq += zt * w_qkv[p * (3 * dh) + j];
                sk += zt * w_qkv[p * (3 * dh) + dh + j];
                sv += zt * w_qkv[p * (3 * dh) + 2 * dh + j];
            }
            q[i * dh + j] = sq;
            k[i * dh + j] = sk;
            v[i * dh + j] = sv;
        }
    }
    let scale = 1.0 / (dh as f64).sqrt();
    let mut sa = vec![0.0; n * dh];
    let mut worst_row_sum = 0.0f64;
    for i in 0..n {
        let mut scores = [0.0f64; 3];
        for (jj, s) in scores.iter_mut().enumerate() {
            let mut acc = 0.0;
            for p in 0..dh {
                acc += q[i * dh + p] * k[jj * dh + p];
            }
            *s = acc * scale;
        }
        let mx = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = scores.iter().map(|s| (s - mx).exp()).collect();
        let total: f64 = exps.iter().sum();
        let attn: Vec<f64> = exps.iter().map(|e| e / total).collect();
        worst_row_sum = worst_row_sum.max((attn.iter().sum::<f64>() - 1.0).abs());
        for p in 0..dh {
            let mut acc = 0.0;
            for (jj, a) in attn.iter().enumerate() {
                acc += a * v[jj * dh + p];
            }
            sa[i * dh + p] = acc;
        }
    }
    let mut expect = vec![0.0; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut acc = 0.0;
            for p in 0..dh {
                acc += sa[i * dh + p] * w_msa[p * d + j];
            }
            expect[i * d + j] = acc;
        }
    }

    let mut worst = worst_row_sum;
    for (a, e) in got.iter().zip(expect.iter()) {
        worst = worst.max((a - e).abs());
    }
    SuiteCheck {
        name: "attention vs scalar-loop oracle".into(),
        passed: worst < 1e-6,
        detail: format!("worst absolute deviation {worst:.3e} (tolerance 1e-6)"),
    }
}

fn adamw_checks(out: &mut Vec<SuiteCheck>) {
    use crate::optim::{AdamWConfig, OptimizerState};
    let mut state = OptimizerState::new();
    let mut p = vec![1.0f32];
    state.step(
        &AdamWConfig {
            lr: 0.1,
            weight_decay: 0.0,
            ..AdamWConfig::default()
        },
        &mut [("p", &mut p, &[1.0f32])],
    );
    let first = (p[0] - 0.9).abs();
    out.push(SuiteCheck {
        name: "adamw first-step closed form".into(),
        passed: first < 1e-6,
        detail: format!("|θ₁ − 0.9| = {first:.3e}"),
    });

    let mut state = OptimizerState::new();
    let mut p = vec![1.0f32];
    state.step(
        &AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            ..AdamWConfig::default()
        },
        &mut [("p", &mut p, &[0.0f32])],
    );
    let decay = (p[0] - 0.999).abs();
    out.push(SuiteCheck {
        name: "adamw decoupled decay closed form".into(),
        passed: decay < 1e-7,
        detail: format!("|θ₁ − 0.999| = {decay:.3e}"),
    });
}

/// The full engine verification suite.
pub fn run_engine_suite() -> Vec<SuiteCheck> {
    let mut out = Vec::new();
    matmul_checks(&mut out);
    conv_pool_checks(&mut out);
    norm_checks(&mut out);
    elementwise_checks(&mut out);
    binary_checks(&mut out);
    gru_check(&mut out);
    out.push(attention_oracle_check());
    adamw_checks(&mut out);
    out
}
