//! Feature network, correlation pyramid, convolutional GRU refinement and
//! disparity upsampling.

pub mod layers;

use crate::autograd::{Element, Graph, Tensor, Var};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::params::{Binder, ParamStore};
use crate::sample::StereoSample;

use layers::{conv, conv_relu, init_residual, residual};

/// Left and right quarter-resolution features `[C_f, H/4, W/4]`.
#[derive(Clone, Copy, Debug)]
pub struct FeaturePair {
    pub left: Var,
    pub right: Var,
}

/// Correlation volumes `[h, w, D_j]`, level `j` pooled `j` times along the
/// disparity axis.
#[derive(Clone, Debug)]
pub struct CorrelationPyramid {
    pub levels: Vec<Var>,
}

#[derive(Clone, Copy, Debug)]
pub struct GruState {
    pub hidden: Var,
    /// Detached quarter-resolution disparity `[1, h, w]`.
    pub disparity: Var,
}

/// Context contributions to the update, computed once per forward pass.
#[derive(Clone, Copy, Debug)]
pub struct GruContext {
    pub z: Var,
    pub r: Var,
    pub q: Var,
}

pub fn corr_channels(cfg: &ModelConfig) -> usize {
    cfg.levels * (2 * cfg.radius + 1)
}

pub fn init_feature_net<S: Element>(store: &mut ParamStore<S>, seed: u64, cfg: &ModelConfig) {
    let [c1, c2] = cfg.feature_widths;
    store.init_conv(seed, "fnet.stem", 3, c1, 7, true);
    init_residual(store, seed, "fnet.res1a", c1, c1, 1);
    init_residual(store, seed, "fnet.res1b", c1, c1, 1);
    store.init_conv(seed, "fnet.down", c1, c2, 3, true);
    init_residual(store, seed, "fnet.res2a", c2, c2, 1);
    init_residual(store, seed, "fnet.res2b", c2, c2, 1);
    store.init_conv(seed, "fnet.out", c2, cfg.feature_channels, 1, true);
}

/// Init gain of the last delta-head conv. Full-scale updates push most
/// pixels below zero on the first steps, where the clamp stops all gradient.
pub const DELTA_HEAD_GAIN: f64 = 0.05;

pub fn init_gru<S: Element>(store: &mut ParamStore<S>, seed: u64, cfg: &ModelConfig) {
    let ch = cfg.hidden;
    let c3 = cfg.context_widths[2];
    store.init_conv(seed, "gru.hinit", c3, ch, 3, true);
    store.init_conv(seed, "gru.cinj", c3, ch, 3, true);
    store.init_conv(seed, "gru.motion1", corr_channels(cfg) + 1, ch, 3, true);
    store.init_conv(seed, "gru.motion2", ch, ch - 1, 3, true);
    for gate in ["z", "r", "q"] {
        store.init_conv(seed, &format!("gru.{gate}"), 2 * ch, ch, 3, true);
        store.init_conv(seed, &format!("gru.{gate}_ctx"), ch, ch, 3, false);
    }
    store.init_conv(seed, "gru.head1", ch, ch, 3, true);
    store.init_conv_scaled(seed, "gru.head2", ch, 1, 3, true, DELTA_HEAD_GAIN);
}

/// Records `2x - 1` of a `[3, H, W]` image as a constant.
pub fn image_input<S: Element>(g: &mut Graph<S>, img: &Tensor<f32>) -> Result<Var> {
    let data = img.data().iter().map(|&v| S::of(2.0 * v as f64 - 1.0)).collect();
    g.constant(img.shape(), data)
}

fn encode<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, x: Var) -> Result<Var> {
    let x = conv_relu(g, p, "fnet.stem", x, 2)?;
    let x = residual(g, p, "fnet.res1a", x, 1)?;
    let x = residual(g, p, "fnet.res1b", x, 1)?;
    let x = conv_relu(g, p, "fnet.down", x, 2)?;
    let x = residual(g, p, "fnet.res2a", x, 1)?;
    let x = residual(g, p, "fnet.res2b", x, 1)?;
    conv(g, p, "fnet.out", x, 1)
}

/// Shared-weight encoder applied to both images of a sample.
pub fn feature_net<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, sample: &StereoSample) -> Result<FeaturePair> {
    sample.check_network_size()?;
    let l = image_input(g, &sample.left)?;
    let r = image_input(g, &sample.right)?;
    Ok(FeaturePair {
        left: encode(g, p, l)?,
        right: encode(g, p, r)?,
    })
}

pub fn build_corr<S: Element>(g: &mut Graph<S>, pair: FeaturePair, depth: usize, levels: usize) -> Result<CorrelationPyramid> {
    let w = g.shape(pair.left).get(2).copied().unwrap_or(0);
    if depth == 0 || depth > w {
        return Err(Error::contract(format!("max disparity {depth} outside 1..={w}")));
    }
    let mut out = vec![g.correlation(pair.left, pair.right, depth)?];
    for _ in 1..levels {
        let prev = *out.last().unwrap();
        out.push(g.pool_last_axis(prev)?);
    }
    Ok(CorrelationPyramid { levels: out })
}

/// Samples every level around `d / 2^j` and stacks the results into
/// `[levels * (2r + 1), h, w]`.
pub fn corr_lookup<S: Element>(g: &mut Graph<S>, pyr: &CorrelationPyramid, disparity: Var, radius: usize) -> Result<Var> {
    let d = g.value(disparity).to_vec();
    let mut feats = Vec::with_capacity(pyr.levels.len());
    for (j, &vol) in pyr.levels.iter().enumerate() {
        let scale = S::of(1.0 / (1u64 << j) as f64);
        let centers: Vec<S> = d.iter().map(|&v| v * scale).collect();
        feats.push(g.corr_lookup(vol, &centers, radius)?);
    }
    g.concat(&feats)
}

/// Hidden-state initialisation and per-step context injection from the
/// final context features.
pub fn gru_init<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, f3: Var) -> Result<(Var, GruContext)> {
    let h = conv(g, p, "gru.hinit", f3, 1)?;
    let hidden = g.tanh(h)?;
    let inj = conv_relu(g, p, "gru.cinj", f3, 1)?;
    let ctx = GruContext {
        z: conv(g, p, "gru.z_ctx", inj, 1)?,
        r: conv(g, p, "gru.r_ctx", inj, 1)?,
        q: conv(g, p, "gru.q_ctx", inj, 1)?,
    };
    Ok((hidden, ctx))
}

/// One refinement step. Returns the next state and the raw delta.
pub fn gru_update<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    state: GruState,
    corr_feat: Var,
    ctx: &GruContext,
) -> Result<(GruState, Var)> {
    let m_in = g.concat(&[corr_feat, state.disparity])?;
    let m = conv_relu(g, p, "gru.motion1", m_in, 1)?;
    let m = conv_relu(g, p, "gru.motion2", m, 1)?;
    let motion = g.concat(&[m, state.disparity])?;

    let hx = g.concat(&[state.hidden, motion])?;
    let z = conv(g, p, "gru.z", hx, 1)?;
    let z = g.add(z, ctx.z)?;
    let z = g.sigmoid(z)?;
    let r = conv(g, p, "gru.r", hx, 1)?;
    let r = g.add(r, ctx.r)?;
    let r = g.sigmoid(r)?;
    let rh = g.mul(r, state.hidden)?;
    let rhx = g.concat(&[rh, motion])?;
    let q = conv(g, p, "gru.q", rhx, 1)?;
    let q = g.add(q, ctx.q)?;
    let q = g.tanh(q)?;
    let keep = g.one_minus(z)?;
    let a = g.mul(keep, state.hidden)?;
    let b = g.mul(z, q)?;
    let hidden = g.add(a, b)?;

    let d = conv_relu(g, p, "gru.head1", hidden, 1)?;
    let delta = conv(g, p, "gru.head2", d, 1)?;
    let moved = g.add(state.disparity, delta)?;
    let disparity = g.relu(moved)?;
    Ok((GruState { hidden, disparity }, delta))
}

/// Bilinear x4 resize of a `[1, h, w]` quarter-resolution map with values
/// scaled by 4, returned as `[4h, 4w]`.
pub fn upsample_disparity<S: Element>(g: &mut Graph<S>, d: Var) -> Result<Var> {
    let s = g.shape(d).to_vec();
    if s.len() != 3 || s[0] != 1 {
        return Err(Error::contract(format!("disparity must be [1, h, w], got {s:?}")));
    }
    let up = g.interp_bilinear(d, 4 * s[1], 4 * s[2])?;
    let up = g.scale(up, 4.0)?;
    g.reshape(up, &[4 * s[1], 4 * s[2]])
}
