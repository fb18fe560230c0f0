//! Named-parameter store and the layer helpers the policy network is
//! assembled from. Parameters are owned as f32 master copies; every forward
//! pass binds them onto a fresh tape at the working precision.

use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::scalar::Scalar;
use crate::tape::{BnBatchStats, NodeId, Tape};
use crate::tensor::{ParamValue, Tensor, TensorError};
use crate::util::fnv1a64;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f32 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy)]
pub enum Init {
    HeUniform { fan_in: usize },
    Uniform { limit: f64 },
    Zeros,
    Ones,
}

/// Ordered (name → value) parameter map. Running batch-norm statistics live
/// here too, under `.running_mean` / `.running_var` suffixes; they are saved
/// in checkpoints but skipped by the optimizer.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    map: BTreeMap<String, ParamValue>,
}

pub fn is_trainable(name: &str) -> bool {
    !name.ends_with(".running_mean") && !name.ends_with(".running_var")
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Create and initialize a parameter. The RNG stream is derived from
    /// (seed, name), so initialization does not depend on registration order.
    pub fn register(&mut self, name: &str, shape: Vec<usize>, init: Init, seed: u64) {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0f32; n],
            Init::Ones => vec![1.0f32; n],
            Init::HeUniform { fan_in } => {
                let limit = (6.0 / fan_in as f64).sqrt();
                self.uniform_data(name, seed, n, limit)
            }
            Init::Uniform { limit } => self.uniform_data(name, seed, n, limit),
        };
        let prev = self.map.insert(name.to_string(), ParamValue { shape, data });
        assert!(prev.is_none(), "duplicate parameter {name}");
    }

    fn uniform_data(&self, name: &str, seed: u64, n: usize, limit: f64) -> Vec<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ fnv1a64(name.as_bytes()));
        (0..n)
            .map(|_| rng.gen_range(-limit..limit) as f32)
            .collect()
    }

    pub fn insert(&mut self, name: String, value: ParamValue) {
        self.map.insert(name, value);
    }

    pub fn get(&self, name: &str) -> &ParamValue {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut ParamValue {
        self.map
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamValue)> {
        self.map.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.map.keys()
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.map.values().map(|p| p.numel()).sum()
    }
}

/// Tape leaves for every trainable parameter of one forward pass.
pub struct BoundParams {
    nodes: BTreeMap<String, NodeId>,
}

impl BoundParams {
    pub fn node(&self, name: &str) -> NodeId {
        *self
            .nodes
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }
}

/// Register every trainable parameter as a tape leaf. `requires_grad`
/// is false for pure inference passes.
pub fn bind_params<S: Scalar>(
    tape: &mut Tape<S>,
    store: &ParamStore,
    requires_grad: bool,
) -> BoundParams {
    let mut nodes = BTreeMap::new();
    for (name, value) in store.iter() {
        if is_trainable(name) {
            let id = tape.leaf(value.to_tensor::<S>(), requires_grad);
            nodes.insert(name.clone(), id);
        }
    }
    BoundParams { nodes }
}

/// Everything a layer needs during one forward pass. Batch-norm statistic
/// snapshots pile up in `bn_updates` so the trainer can fold them into the
/// running averages after the tape is dropped.
pub struct FwdCtx<'a, S: Scalar> {
    pub tape: &'a mut Tape<S>,
    pub store: &'a ParamStore,
    pub bound: &'a BoundParams,
    pub mode: Mode,
    pub bn_updates: Vec<(String, BnBatchStats<S>)>,
}

impl<'a, S: Scalar> FwdCtx<'a, S> {
    pub fn new(
        tape: &'a mut Tape<S>,
        store: &'a ParamStore,
        bound: &'a BoundParams,
        mode: Mode,
    ) -> Self {
        FwdCtx {
            tape,
            store,
            bound,
            mode,
            bn_updates: Vec::new(),
        }
    }

    /// x[rows,in] · W[in,out] + b[out]
    pub fn linear(&mut self, x: NodeId, prefix: &str) -> Result<NodeId, TensorError> {
        let w = self.bound.node(&format!("{prefix}.weight"));
        let b = self.bound.node(&format!("{prefix}.bias"));
        let y = self.tape.matmul(x, w)?;
        self.tape.add_row_broadcast(y, b)
    }

    /// Bias-free convolution; batch norm supplies the shift.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        prefix: &str,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId, TensorError> {
        let w = self.bound.node(&format!("{prefix}.weight"));
        self.tape.conv2d(x, w, stride, pad)
    }

    pub fn batch_norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let gamma = self.bound.node(&format!("{prefix}.weight"));
        let beta = self.bound.node(&format!("{prefix}.bias"));
        match self.mode {
            Mode::Train => {
                let (y, stats) = self.tape.batch_norm_train(x, gamma, beta, BATCH_NORM_EPS);
                self.bn_updates.push((prefix.to_string(), stats));
                y
            }
            Mode::Eval => {
                let rm: Vec<S> = self
                    .store
                    .get(&format!("{prefix}.running_mean"))
                    .data
                    .iter()
                    .map(|&v| S::from_f64(v as f64))
                    .collect();
                let rv: Vec<S> = self
                    .store
                    .get(&format!("{prefix}.running_var"))
                    .data
                    .iter()
                    .map(|&v| S::from_f64(v as f64))
                    .collect();
                self.tape
                    .batch_norm_eval(x, gamma, beta, &rm, &rv, BATCH_NORM_EPS)
            }
        }
    }

    pub fn layer_norm(&mut self, x: NodeId, prefix: &str) -> NodeId {
        let gamma = self.bound.node(&format!("{prefix}.weight"));
        let beta = self.bound.node(&format!("{prefix}.bias"));
        self.tape.layer_norm(x, gamma, beta, LAYER_NORM_EPS)
    }

    /// Standard GRU update on row vectors x[1,d_in], h[1,d_h]:
    ///   z = σ(x·Wzx + h·Wzh + bz)
    ///   r = σ(x·Wrx + h·Wrh + br)
    ///   n = tanh(x·Wnx + bnx + r ⊙ (h·Wnh + bnh))
    ///   h' = (1−z) ⊙ n + z ⊙ h
    pub fn gru_cell(&mut self, x: NodeId, h: NodeId, prefix: &str) -> Result<NodeId, TensorError> {
        let gate = |ctx: &mut Self, x: NodeId, h: NodeId, g: &str| -> Result<NodeId, TensorError> {
            let wx = ctx.bound.node(&format!("{prefix}.w_{g}x"));
            let wh = ctx.bound.node(&format!("{prefix}.w_{g}h"));
            let b = ctx.bound.node(&format!("{prefix}.b_{g}"));
            let xt = ctx.tape.matmul(x, wx)?;
            let ht = ctx.tape.matmul(h, wh)?;
            let s = ctx.tape.add(xt, ht)?;
            ctx.tape.add_row_broadcast(s, b)
        };
        let z_pre = gate(self, x, h, "z")?;
        let z = self.tape.sigmoid(z_pre);
        let r_pre = gate(self, x, h, "r")?;
        let r = self.tape.sigmoid(r_pre);

        let wnx = self.bound.node(&format!("{prefix}.w_nx"));
        let wnh = self.bound.node(&format!("{prefix}.w_nh"));
        let bnx = self.bound.node(&format!("{prefix}.b_nx"));
        let bnh = self.bound.node(&format!("{prefix}.b_nh"));
        let xn = self.tape.matmul(x, wnx)?;
        let xn = self.tape.add_row_broadcast(xn, bnx)?;
        let hn = self.tape.matmul(h, wnh)?;
        let hn = self.tape.add_row_broadcast(hn, bnh)?;
        let rhn = self.tape.mul(r, hn)?;
        let n_pre = self.tape.add(xn, rhn)?;
        let n = self.tape.tanh(n_pre);

        let dh = self.tape.shape(h)[1];
        let ones = self.tape.constant(Tensor::ones(vec![1, dh]));
        let one_minus_z = self.tape.sub(ones, z)?;
        let a = self.tape.mul(one_minus_z, n)?;
        let b = self.tape.mul(z, h)?;
        self.tape.add(a, b)
    }
}

/// Register the three weight matrices, hidden matrices and biases of one GRU
/// cell, uniform ±1/√d_h per the initialization scheme.
pub fn register_gru(store: &mut ParamStore, prefix: &str, d_in: usize, d_h: usize, seed: u64) {
    let limit = 1.0 / (d_h as f64).sqrt();
    for g in ["z", "r", "n"] {
        store.register(
            &format!("{prefix}.w_{g}x"),
            vec![d_in, d_h],
            Init::Uniform { limit },
            seed,
        );
        store.register(
            &format!("{prefix}.w_{g}h"),
            vec![d_h, d_h],
            Init::Uniform { limit },
            seed,
        );
    }
    store.register(&format!("{prefix}.b_z"), vec![d_h], Init::Zeros, seed);
    store.register(&format!("{prefix}.b_r"), vec![d_h], Init::Zeros, seed);
    store.register(&format!("{prefix}.b_nx"), vec![d_h], Init::Zeros, seed);
    store.register(&format!("{prefix}.b_nh"), vec![d_h], Init::Zeros, seed);
}

pub fn register_linear(store: &mut ParamStore, prefix: &str, d_in: usize, d_out: usize, seed: u64) {
    store.register(
        &format!("{prefix}.weight"),
        vec![d_in, d_out],
        Init::HeUniform { fan_in: d_in },
        seed,
    );
    store.register(&format!("{prefix}.bias"), vec![d_out], Init::Zeros, seed);
}

pub fn register_conv(
    store: &mut ParamStore,
    prefix: &str,
    cout: usize,
    cin: usize,
    k: usize,
    seed: u64,
) {
    store.register(
        &format!("{prefix}.weight"),
        vec![cout, cin, k, k],
        Init::HeUniform { fan_in: cin * k * k },
        seed,
    );
}

pub fn register_norm(store: &mut ParamStore, prefix: &str, c: usize, seed: u64) {
    store.register(&format!("{prefix}.weight"), vec![c], Init::Ones, seed);
    store.register(&format!("{prefix}.bias"), vec![c], Init::Zeros, seed);
}

pub fn register_batch_norm(store: &mut ParamStore, prefix: &str, c: usize, seed: u64) {
    register_norm(store, prefix, c, seed);
    store.register(
        &format!("{prefix}.running_mean"),
        vec![c],
        Init::Zeros,
        seed,
    );
    store.register(&format!("{prefix}.running_var"), vec![c], Init::Ones, seed);
}

/// Fold one pass's batch statistics into the running averages.
pub fn apply_bn_updates<S: Scalar>(store: &mut ParamStore, updates: &[(String, BnBatchStats<S>)]) {
    let m = BATCH_NORM_MOMENTUM;
    for (prefix, stats) in updates {
        let rm = store.get_mut(&format!("{prefix}.running_mean"));
        for (r, &b) in rm.data.iter_mut().zip(stats.mean.iter()) {
            *r = (1.0 - m) * *r + m * b.to_f64() as f32;
        }
        let rv = store.get_mut(&format!("{prefix}.running_var"));
        for (r, &b) in rv.data.iter_mut().zip(stats.var.iter()) {
            *r = (1.0 - m) * *r + m * b.to_f64() as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gru_fixture(zeroed: bool) -> ParamStore {
        let mut store = ParamStore::new();
        register_gru(&mut store, "gru", 2, 3, 7);
        if zeroed {
            let names: Vec<String> = store.names().cloned().collect();
            for n in names {
                let p = store.get_mut(&n);
                p.data.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        store
    }

    #[test]
    fn gru_zero_everything_is_fixed_point() {
        let store = gru_fixture(true);
        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let x = tape.constant(Tensor::zeros(vec![1, 2]));
        let h = tape.constant(Tensor::zeros(vec![1, 3]));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
        let h2 = ctx.gru_cell(x, h, "gru").unwrap();
        assert_eq!(tape.data(h2), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn gru_zero_weights_unit_hidden_halves() {
        // z = σ(0) = 0.5, n = 0 → h' = 0.5·h
        let store = gru_fixture(true);
        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let x = tape.constant(Tensor::zeros(vec![1, 2]));
        let h = tape.constant(Tensor::ones(vec![1, 3]));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
        let h2 = ctx.gru_cell(x, h, "gru").unwrap();
        for &v in tape.data(h2) {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn gru_gradient_matches_finite_differences() {
        let store = gru_fixture(false);
        let x0 = vec![0.3f64, -0.7];
        let h0 = vec![0.1f64, 0.4, -0.2];

        let eval = |xv: &[f64]| -> f64 {
            let mut tape: Tape<f64> = Tape::new();
            let bound = bind_params(&mut tape, &store, false);
            let x = tape.constant(Tensor::new(vec![1, 2], xv.to_vec()));
            let h = tape.constant(Tensor::new(vec![1, 3], h0.clone()));
            let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
            let h2 = ctx.gru_cell(x, h, "gru").unwrap();
            let s = tape.sum_all(h2);
            tape.data(s)[0]
        };

        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let x = tape.leaf(Tensor::new(vec![1, 2], x0.clone()), true);
        let h = tape.constant(Tensor::new(vec![1, 3], h0.clone()));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
        let h2 = ctx.gru_cell(x, h, "gru").unwrap();
        let s = tape.sum_all(h2);
        tape.backward(s).unwrap();
        let analytic = tape.grad(x).unwrap().to_vec();

        let worst = crate::gradcheck::check_gradient(&x0, &analytic, &[], 1e-6, eval);
        assert!(worst.rel_error < 1e-4, "{worst:?}");
    }

    #[test]
    fn gru_shape_mismatch_is_dimension_error() {
        let store = gru_fixture(false);
        let mut tape: Tape<f64> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let x = tape.constant(Tensor::zeros(vec![1, 5])); // wrong d_in
        let h = tape.constant(Tensor::zeros(vec![1, 3]));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Eval);
        assert!(matches!(
            ctx.gru_cell(x, h, "gru"),
            Err(TensorError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn init_is_registration_order_independent() {
        let mut a = ParamStore::new();
        a.register("p", vec![4], Init::HeUniform { fan_in: 4 }, 99);
        a.register("q", vec![4], Init::HeUniform { fan_in: 4 }, 99);
        let mut b = ParamStore::new();
        b.register("q", vec![4], Init::HeUniform { fan_in: 4 }, 99);
        b.register("p", vec![4], Init::HeUniform { fan_in: 4 }, 99);
        assert_eq!(a.get("p"), b.get("p"));
        assert_eq!(a.get("q"), b.get("q"));
    }

    #[test]
    fn bn_running_stats_move_toward_batch_stats() {
        let mut store = ParamStore::new();
        register_batch_norm(&mut store, "bn", 1, 3);
        let mut tape: Tape<f32> = Tape::new();
        let bound = bind_params(&mut tape, &store, false);
        let x = tape.constant(Tensor::new(vec![1, 1, 4], vec![1.0, 2.0, 3.0, 4.0]));
        let mut ctx = FwdCtx::new(&mut tape, &store, &bound, Mode::Train);
        let _ = ctx.batch_norm(x, "bn");
        let updates = std::mem::take(&mut ctx.bn_updates);
        apply_bn_updates(&mut store, &updates);
        let rm = store.get("bn.running_mean").data[0];
        // mean of batch is 2.5; running = 0.9·0 + 0.1·2.5
        assert!((rm - 0.25).abs() < 1e-6);
    }
}
