//! Perception: per-sensor residual backbone, feature fusion, patch +
//! positional + velocity embedding, and the multi-head self-attention
//! encoder that produces the 16-dimensional scene code.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::nn::{
    register_batch_norm, register_conv, register_linear, register_norm, FwdCtx, ParamStore,
};
use crate::scalar::Scalar;
use crate::tape::{NodeId, Tape};
use crate::tensor::{Tensor, TensorError};

/// Side length of the square camera / BEV rasters.
pub const INPUT_SIDE: usize = 256;
/// Per-stream backbone output dimension.
pub const BACKBONE_DIM: usize = 400;
/// Side of the fused feature map (4 × 400 = 1600 = 40²).
pub const FUSED_SIDE: usize = 40;
/// Reference stage widths at scale 1: stem and the four residual stages.
pub const FULL_SCALE_CHANNELS: [usize; 5] = [64, 64, 128, 256, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Patch side P; the fused map divides into (40/P)² tokens.
    pub patch_size: usize,
    /// Token dimension D = P²·C with C = 1 for the fused map.
    pub token_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub mlp_hidden: usize,
    /// Backbone channel scale as a rational; stage widths are
    /// ⌈scale · (64, 64, 128, 256, 512)⌉.
    pub scale_num: u32,
    pub scale_den: u32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            patch_size: 4,
            token_dim: 16,
            num_layers: 4,
            num_heads: 4,
            mlp_hidden: 64,
            scale_num: 1,
            scale_den: 8,
        }
    }
}

impl EncoderConfig {
    /// Full-scale preset whose backbone reproduces the reference shape chain.
    pub fn full_scale() -> Self {
        EncoderConfig {
            scale_num: 1,
            scale_den: 1,
            ..EncoderConfig::default()
        }
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.num_heads
    }

    pub fn num_tokens(&self) -> usize {
        (FUSED_SIDE / self.patch_size) * (FUSED_SIDE / self.patch_size)
    }

    pub fn stage_channels(&self) -> [usize; 5] {
        let mut out = [0usize; 5];
        for (o, c) in out.iter_mut().zip(FULL_SCALE_CHANNELS.iter()) {
            *o = ((c * self.scale_num as usize) + self.scale_den as usize - 1)
                / self.scale_den as usize;
        }
        out
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        if FUSED_SIDE % self.patch_size != 0 {
            return Err(TensorError::Config(format!(
                "patch size {} does not divide the {}-wide fused map",
                self.patch_size, FUSED_SIDE
            )));
        }
        if self.token_dim != self.patch_size * self.patch_size {
            return Err(TensorError::Config(format!(
                "token dim {} must equal patch_size² = {}",
                self.token_dim,
                self.patch_size * self.patch_size
            )));
        }
        if self.token_dim % self.num_heads != 0 {
            return Err(TensorError::Config(format!(
                "token dim {} not divisible by {} heads",
                self.token_dim, self.num_heads
            )));
        }
        if self.scale_num == 0 || self.scale_den == 0 {
            return Err(TensorError::Config("channel scale must be positive".into()));
        }
        Ok(())
    }
}

/// One tick of sensor input: three camera rasters and the palette-coded
/// semantic BEV, all values in [0,1], plus the current speed.
#[derive(Debug, Clone)]
pub struct SensorBundle<S: Scalar> {
    pub image_center: Tensor<S>,
    pub image_right: Tensor<S>,
    pub image_left: Tensor<S>,
    pub semantic_bev: Tensor<S>,
    pub speed: f64,
}

impl<S: Scalar> SensorBundle<S> {
    pub fn new(
        image_center: Tensor<S>,
        image_right: Tensor<S>,
        image_left: Tensor<S>,
        semantic_bev: Tensor<S>,
        speed: f64,
    ) -> Result<Self, TensorError> {
        let want = vec![3, INPUT_SIDE, INPUT_SIDE];
        for (name, t) in [
            ("image_center", &image_center),
            ("image_right", &image_right),
            ("image_left", &image_left),
            ("semantic_bev", &semantic_bev),
        ] {
            if t.shape != want {
                return Err(TensorError::Config(format!(
                    "{name} must be {want:?}, got {:?}",
                    t.shape
                )));
            }
        }
        if !(speed >= 0.0) {
            return Err(TensorError::Config(format!("speed must be ≥ 0, got {speed}")));
        }
        Ok(SensorBundle {
            image_center,
            image_right,
            image_left,
            semantic_bev,
            speed,
        })
    }
}

/// 16-dimensional encoder output consumed by the waypoint head.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneCode {
    pub vector: Vec<f64>,
}

pub const STREAM_PREFIXES: [&str; 4] = [
    "backbone.center",
    "backbone.right",
    "backbone.left",
    "backbone.sem",
];

/// Register one backbone's parameters under `prefix`.
fn register_backbone(store: &mut ParamStore, prefix: &str, cfg: &EncoderConfig, seed: u64) {
    let ch = cfg.stage_channels();
    register_conv(store, &format!("{prefix}.stem.conv"), ch[0], 3, 7, seed);
    register_batch_norm(store, &format!("{prefix}.stem.bn"), ch[0], seed);
    let mut cin = ch[0];
    for (i, &cout) in ch.iter().enumerate().skip(1) {
        let p = format!("{prefix}.stage{i}");
        register_conv(store, &format!("{p}.conv1"), cout, cin, 3, seed);
        register_batch_norm(store, &format!("{p}.bn1"), cout, seed);
        register_conv(store, &format!("{p}.conv2"), cout, cout, 3, seed);
        register_batch_norm(store, &format!("{p}.bn2"), cout, seed);
        let stride = if i == 1 { 1 } else { 2 };
        if stride != 1 || cin != cout {
            register_conv(store, &format!("{p}.skip.conv"), cout, cin, 1, seed);
            register_batch_norm(store, &format!("{p}.skip.bn"), cout, seed);
        }
        cin = cout;
    }
    register_linear(store, &format!("{prefix}.proj"), ch[4], BACKBONE_DIM, seed);
}

/// Register the whole perception block: four backbones, patch/positional/
/// velocity embeddings and the encoder layers.
pub fn register_perception(store: &mut ParamStore, cfg: &EncoderConfig, seed: u64) {
    for prefix in STREAM_PREFIXES {
        register_backbone(store, prefix, cfg, seed);
    }
    let d = cfg.token_dim;
    let n = cfg.num_tokens();
    store.register(
        "embed.patch.weight",
        vec![d, d],
        crate::nn::Init::HeUniform { fan_in: d },
        seed,
    );
    store.register(
        "embed.pos",
        vec![n, d],
        crate::nn::Init::Uniform { limit: 0.02 },
        seed,
    );
    // He scaling is meaningless at fan-in 1; keep the velocity term small
    // so the token sum stays O(1) at road speeds
    store.register(
        "embed.vel.weight",
        vec![1, d],
        crate::nn::Init::Uniform { limit: 0.05 },
        seed,
    );
    store.register("embed.vel.bias", vec![d], crate::nn::Init::Zeros, seed);
    for l in 0..cfg.num_layers {
        let p = format!("enc{l}");
        register_norm(store, &format!("{p}.ln1"), d, seed);
        register_norm(store, &format!("{p}.ln2"), d, seed);
        for h in 0..cfg.num_heads {
            store.register(
                &format!("{p}.head{h}.w_qkv"),
                vec![d, 3 * cfg.head_dim()],
                crate::nn::Init::HeUniform { fan_in: d },
                seed,
            );
        }
        store.register(
            &format!("{p}.w_msa"),
            vec![d, d],
            crate::nn::Init::HeUniform { fan_in: d },
            seed,
        );
        register_linear(store, &format!("{p}.mlp.fc1"), d, cfg.mlp_hidden, seed);
        register_linear(store, &format!("{p}.mlp.fc2"), cfg.mlp_hidden, d, seed);
    }
    // closing layer norm of the encoder, applied to the token sum; keeps
    // the scene code O(1) under random initialization
    register_norm(store, "enc.final_ln", d, seed);
}

/// Node ids of intermediate tensors worth probing from tests: per-stage
/// backbone outputs of the most recent stream and every attention matrix.
#[derive(Debug, Default)]
pub struct EncodeTrace {
    pub stage_shapes: Vec<Vec<usize>>,
    pub attention: Vec<NodeId>,
}

fn basic_block<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    x: NodeId,
    prefix: &str,
    stride: usize,
    has_skip: bool,
) -> Result<NodeId, TensorError> {
    let y = ctx.conv2d(x, &format!("{prefix}.conv1"), stride, 1)?;
    let y = ctx.batch_norm(y, &format!("{prefix}.bn1"));
    let y = ctx.tape.relu(y);
    let y = ctx.conv2d(y, &format!("{prefix}.conv2"), 1, 1)?;
    let y = ctx.batch_norm(y, &format!("{prefix}.bn2"));
    let shortcut = if has_skip {
        let s = ctx.conv2d(x, &format!("{prefix}.skip.conv"), stride, 0)?;
        ctx.batch_norm(s, &format!("{prefix}.skip.bn"))
    } else {
        x
    };
    let sum = ctx.tape.add(y, shortcut)?;
    Ok(ctx.tape.relu(sum))
}

/// conv-bn-relu stem → maxpool → four residual stages → global average
/// pool → flatten → linear projection to a 400-vector.
pub fn backbone_forward<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    image: NodeId,
    prefix: &str,
    cfg: &EncoderConfig,
    trace: &mut EncodeTrace,
) -> Result<NodeId, TensorError> {
    let shape = ctx.tape.shape(image).to_vec();
    if shape != [3, INPUT_SIDE, INPUT_SIDE] {
        return Err(TensorError::ShapeMismatch {
            op: "backbone_forward",
            lhs: shape,
            rhs: vec![3, INPUT_SIDE, INPUT_SIDE],
        });
    }
    trace.stage_shapes.clear();
    let x = ctx.conv2d(image, &format!("{prefix}.stem.conv"), 2, 3)?;
    let x = ctx.batch_norm(x, &format!("{prefix}.stem.bn"));
    let x = ctx.tape.relu(x);
    trace.stage_shapes.push(ctx.tape.shape(x).to_vec());
    let mut x = ctx.tape.maxpool2d(x, 3, 2, 1);
    trace.stage_shapes.push(ctx.tape.shape(x).to_vec());
    let ch = cfg.stage_channels();
    let mut cin = ch[0];
    for (i, &cout) in ch.iter().enumerate().skip(1) {
        let stride = if i == 1 { 1 } else { 2 };
        let has_skip = stride != 1 || cin != cout;
        x = basic_block(ctx, x, &format!("{prefix}.stage{i}"), stride, has_skip)?;
        trace.stage_shapes.push(ctx.tape.shape(x).to_vec());
        cin = cout;
    }
    let pooled = ctx.tape.global_avg_pool(x);
    trace.stage_shapes.push(ctx.tape.shape(pooled).to_vec());
    let flat = ctx.tape.reshape(pooled, vec![1, ch[4]]);
    let proj = ctx.linear(flat, &format!("{prefix}.proj"))?;
    trace.stage_shapes.push(vec![BACKBONE_DIM]);
    Ok(ctx.tape.reshape(proj, vec![BACKBONE_DIM]))
}

/// Concatenate the four 400-vectors in (center, right, left, semantic)
/// order and reshape row-major to a 1×40×40 map.
pub fn fuse_and_reshape<S: Scalar>(
    tape: &mut Tape<S>,
    f_center: NodeId,
    f_right: NodeId,
    f_left: NodeId,
    f_sem: NodeId,
) -> NodeId {
    let cat = tape.concat_flat(&[f_center, f_right, f_left, f_sem]);
    tape.reshape(cat, vec![1, FUSED_SIDE, FUSED_SIDE])
}

/// Index table mapping token-major patch layout back into the fused map.
fn patch_index_table(cfg: &EncoderConfig) -> Arc<Vec<u32>> {
    let p = cfg.patch_size;
    let per_side = FUSED_SIDE / p;
    let mut idx = Vec::with_capacity(FUSED_SIDE * FUSED_SIDE);
    for pr in 0..per_side {
        for pc in 0..per_side {
            for i in 0..p {
                for j in 0..p {
                    idx.push(((pr * p + i) * FUSED_SIDE + pc * p + j) as u32);
                }
            }
        }
    }
    Arc::new(idx)
}

/// Non-overlapping P×P patches, flattened, linearly embedded, plus the
/// learned positional table and the velocity embedding broadcast to every
/// token. Returns the [N, D] token matrix.
pub fn patch_embed<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    fused: NodeId,
    speed: f64,
    cfg: &EncoderConfig,
) -> Result<NodeId, TensorError> {
    cfg.validate()?;
    let n = cfg.num_tokens();
    let d = cfg.token_dim;
    let idx = patch_index_table(cfg);
    let gathered = ctx.tape.gather(fused, idx);
    let tokens = ctx.tape.reshape(gathered, vec![n, d]);
    let e = ctx.bound.node("embed.patch.weight");
    let embedded = ctx.tape.matmul(tokens, e)?;
    let pos = ctx.bound.node("embed.pos");
    let with_pos = ctx.tape.add(embedded, pos)?;
    let speed_in = ctx
        .tape
        .constant(Tensor::new(vec![1, 1], vec![S::from_f64(speed)]));
    let vel = ctx.linear(speed_in, "embed.vel")?;
    let vel_row = ctx.tape.reshape(vel, vec![d]);
    ctx.tape.add_row_broadcast(with_pos, vel_row)
}

/// Multi-head self-attention: per head (Q,K,V) = z·W_qkv split, scores
/// scaled by 1/√D_h inside the softmax, heads concatenated and projected.
pub fn msa_forward<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    z: NodeId,
    prefix: &str,
    cfg: &EncoderConfig,
    trace: &mut EncodeTrace,
) -> Result<NodeId, TensorError> {
    let dh = cfg.head_dim();
    let inv_sqrt = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let w = ctx.bound.node(&format!("{prefix}.head{h}.w_qkv"));
        let qkv = ctx.tape.matmul(z, w)?;
        let q = ctx.tape.slice_cols(qkv, 0, dh);
        let k = ctx.tape.slice_cols(qkv, dh, dh);
        let v = ctx.tape.slice_cols(qkv, 2 * dh, dh);
        let scores = ctx.tape.matmul_bt(q, k)?;
        let scaled = ctx.tape.scale(scores, S::from_f64(inv_sqrt));
        let attn = ctx.tape.softmax(scaled);
        trace.attention.push(attn);
        let sa = ctx.tape.matmul(attn, v)?;
        heads.push(sa);
    }
    let cat = ctx.tape.concat_cols(&heads);
    let w_msa = ctx.bound.node(&format!("{prefix}.w_msa"));
    ctx.tape.matmul(cat, w_msa)
}

/// Pre-norm residual block: z' = MSA(LN(z)) + z; out = MLP(LN(z')) + z'.
pub fn encoder_layer<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    z: NodeId,
    prefix: &str,
    cfg: &EncoderConfig,
    trace: &mut EncodeTrace,
) -> Result<NodeId, TensorError> {
    let normed = ctx.layer_norm(z, &format!("{prefix}.ln1"));
    let attended = msa_forward(ctx, normed, prefix, cfg, trace)?;
    let z_mid = ctx.tape.add(attended, z)?;
    let normed2 = ctx.layer_norm(z_mid, &format!("{prefix}.ln2"));
    let h = ctx.linear(normed2, &format!("{prefix}.mlp.fc1"))?;
    let h = ctx.tape.relu(h);
    let h = ctx.linear(h, &format!("{prefix}.mlp.fc2"))?;
    ctx.tape.add(h, z_mid)
}

/// Full perception pass: four backbones → fuse → patch embed → encoder
/// stack → token sum. Returns the 16-dim scene-code node.
pub fn encode_scene<S: Scalar>(
    ctx: &mut FwdCtx<'_, S>,
    bundle: &SensorBundle<S>,
    cfg: &EncoderConfig,
    trace: &mut EncodeTrace,
) -> Result<NodeId, TensorError> {
    let center = ctx.tape.constant(bundle.image_center.clone());
    let right = ctx.tape.constant(bundle.image_right.clone());
    let left = ctx.tape.constant(bundle.image_left.clone());
    let sem = ctx.tape.constant(bundle.semantic_bev.clone());
    let f_c = backbone_forward(ctx, center, STREAM_PREFIXES[0], cfg, trace)?;
    let f_r = backbone_forward(ctx, right, STREAM_PREFIXES[1], cfg, trace)?;
    let f_l = backbone_forward(ctx, left, STREAM_PREFIXES[2], cfg, trace)?;
    let f_s = backbone_forward(ctx, sem, STREAM_PREFIXES[3], cfg, trace)?;
    let fused = fuse_and_reshape(ctx.tape, f_c, f_r, f_l, f_s);
    let mut z = patch_embed(ctx, fused, bundle.speed, cfg)?;
    for l in 0..cfg.num_layers {
        z = encoder_layer(ctx, z, &format!("enc{l}"), cfg, trace)?;
    }
    let summed = ctx.tape.sum_axis0(z);
    let row = ctx.tape.reshape(summed, vec![1, cfg.token_dim]);
    let normed = ctx.layer_norm(row, "enc.final_ln");
    Ok(ctx.tape.reshape(normed, vec![cfg.token_dim]))
}
