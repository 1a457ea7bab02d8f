//! Selective knowledge transfer around the context residual blocks:
//! per-teacher experts and alignment heads, top-k pixel gating, aligned
//! distillation losses and gated fusion of expert features.

use crate::autograd::{Element, Graph, Var};
use crate::config::{Ablation, ModelConfig};
use crate::error::{Error, Result};
use crate::net::layers::{conv, conv_relu, init_residual, residual};
use crate::params::{Binder, ParamStore, ALIGN_PREFIX};
use crate::teachers::{TeacherFeatures, TeacherKind};

pub const NORM_EPS: f64 = 1e-5;

/// Static description of context block `index` (1-based).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ContextBlock {
    pub index: usize,
    pub stride: usize,
    pub c_in: usize,
    pub c_out: usize,
}

impl ContextBlock {
    pub fn all(cfg: &ModelConfig) -> [ContextBlock; 3] {
        let c = cfg.context_widths;
        [
            ContextBlock { index: 1, stride: 1, c_in: cfg.context_stem, c_out: c[0] },
            ContextBlock { index: 2, stride: 2, c_in: c[0], c_out: c[1] },
            ContextBlock { index: 3, stride: 2, c_in: c[1], c_out: c[2] },
        ]
    }

    fn residual_name(&self) -> String {
        format!("cnet.block{}", self.index)
    }

    pub fn expert_name(&self, t: &TeacherKind) -> String {
        format!("dlskt.block{}.expert.{t}", self.index)
    }

    pub fn align_name(&self, t: &TeacherKind) -> String {
        format!("{ALIGN_PREFIX}block{}.{t}", self.index)
    }

    pub fn gate_name(&self) -> String {
        format!("dlskt.block{}.gate", self.index)
    }
}

/// Per-block auxiliary values of one forward pass.
#[derive(Clone, Debug, Default)]
pub struct BlockOutputs {
    pub experts: Vec<Var>,
    /// `[T, h, w]` gate weights, when fusion is active.
    pub gates: Option<Var>,
    /// Per-teacher distillation losses in teacher order.
    pub kd: Vec<Var>,
    pub kd_total: Option<Var>,
}

#[derive(Clone, Debug, Default)]
pub struct DlsktOutputs {
    pub teachers: Vec<TeacherKind>,
    pub blocks: Vec<BlockOutputs>,
}

impl DlsktOutputs {
    pub fn kd_count(&self) -> usize {
        self.blocks.iter().map(|b| b.kd.len()).sum()
    }
}

pub fn init_context_net<S: Element>(store: &mut ParamStore<S>, seed: u64, cfg: &ModelConfig) {
    store.init_conv(seed, "cnet.stem", 3, cfg.context_stem, 7, true);
    for b in ContextBlock::all(cfg) {
        let name = b.residual_name();
        init_residual(store, seed, &format!("{name}.unit1"), b.c_in, b.c_out, b.stride);
        init_residual(store, seed, &format!("{name}.unit2"), b.c_out, b.c_out, 1);
    }
    let arm = cfg.ablation;
    if !arm.has_experts() {
        return;
    }
    for b in ContextBlock::all(cfg) {
        for t in &cfg.teachers {
            store.init_conv(seed, &b.expert_name(t), b.c_in, b.c_out, 3, false);
            if arm.distills() {
                let a = b.align_name(t);
                store.init_conv(seed, &format!("{a}.conv1"), b.c_out, b.c_out, 3, true);
                store.init_conv(seed, &format!("{a}.conv2"), b.c_out, b.c_out, 3, true);
                store.init_conv(seed, &format!("{a}.conv3"), b.c_out, cfg.teacher_channels, 3, true);
            }
        }
        if arm.learned_gates() {
            store.init_conv(seed, &b.gate_name(), b.c_in, cfg.teachers.len(), 3, true);
        }
    }
}

/// Residual block `B_i`: two residual units, the first carrying the stride.
pub fn block_forward<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, block: &ContextBlock, f: Var) -> Result<Var> {
    let name = block.residual_name();
    let x = residual(g, p, &format!("{name}.unit1"), f, block.stride)?;
    residual(g, p, &format!("{name}.unit2"), x, 1)
}

/// `relu(instance_norm(conv3x3(f)))` with the block's stride.
pub fn expert_forward<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    block: &ContextBlock,
    teacher: &TeacherKind,
    f: Var,
) -> Result<Var> {
    let s = g.shape(f);
    if s.len() != 3 || s[0] != block.c_in {
        return Err(Error::contract(format!(
            "block {} expert expects [{}, h, w] input, got {s:?}",
            block.index, block.c_in
        )));
    }
    let y = conv(g, p, &block.expert_name(teacher), f, block.stride)?;
    let y = g.instance_norm(y, NORM_EPS)?;
    g.relu(y)
}

pub fn align_forward<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    block: &ContextBlock,
    teacher: &TeacherKind,
    e: Var,
) -> Result<Var> {
    let a = block.align_name(teacher);
    let y = conv_relu(g, p, &format!("{a}.conv1"), e, 1)?;
    let y = conv_relu(g, p, &format!("{a}.conv2"), y, 1)?;
    conv(g, p, &format!("{a}.conv3"), y, 1)
}

/// Teacher map as a gradient-free constant, bilinearly resized to `h x w`.
pub fn teacher_target<S: Element>(g: &mut Graph<S>, feat: &TeacherFeatures, h: usize, w: usize) -> Result<Var> {
    let data = feat.map.data().iter().map(|&v| S::of(v as f64)).collect();
    let t = g.constant(feat.map.shape(), data)?;
    let s = feat.map.shape();
    if s[1] == h && s[2] == w {
        Ok(t)
    } else {
        g.interp_bilinear(t, h, w)
    }
}

/// MSE between the aligned expert features and the teacher map.
pub fn kd_loss<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    block: &ContextBlock,
    e: Var,
    feat: &TeacherFeatures,
) -> Result<Var> {
    if feat.stage != block.index {
        return Err(Error::contract(format!(
            "teacher stage {} paired with block {}",
            feat.stage, block.index
        )));
    }
    let a = align_forward(g, p, block, &feat.kind, e)?;
    let s = g.shape(a).to_vec();
    if feat.channels() != s[0] {
        return Err(Error::contract(format!(
            "teacher {} has {} channels, alignment head produces {}",
            feat.kind,
            feat.channels(),
            s[0]
        )));
    }
    let t = teacher_target(g, feat, s[1], s[2])?;
    g.mse(a, t)
}

/// Per-teacher losses and their sum for one block. `experts[k]` pairs with
/// `teachers[k]`; `feats` must contain every teacher kind.
pub fn multi_kd_loss<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    block: &ContextBlock,
    teachers: &[TeacherKind],
    experts: &[Var],
    feats: &[TeacherFeatures],
) -> Result<(Vec<Var>, Var)> {
    if experts.len() != teachers.len() {
        return Err(Error::contract("one expert feature per teacher required"));
    }
    let mut losses = Vec::with_capacity(teachers.len());
    for (t, &e) in teachers.iter().zip(experts) {
        let feat = feats
            .iter()
            .find(|f| &f.kind == t)
            .ok_or_else(|| Error::contract(format!("missing features of teacher {t} for block {}", block.index)))?;
        losses.push(kd_loss(g, p, block, e, feat)?);
    }
    let mut total = losses[0];
    for &l in &losses[1..] {
        total = g.add(total, l)?;
    }
    Ok((losses, total))
}

/// Per-pixel indicator of the `k` largest entries along axis 0 of a
/// `[T, h, w]` buffer. Ties go to the lower index.
pub fn top_k_mask<S: Element>(values: &[S], teachers: usize, k: usize) -> Vec<S> {
    let plane = values.len() / teachers;
    let mut mask = vec![S::zero(); values.len()];
    let mut order: Vec<usize> = Vec::with_capacity(teachers);
    for px in 0..plane {
        order.clear();
        order.extend(0..teachers);
        order.sort_by(|&a, &b| {
            values[b * plane + px]
                .partial_cmp(&values[a * plane + px])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        for &t in order.iter().take(k) {
            mask[t * plane + px] = S::one();
        }
    }
    mask
}

/// Softmax over the teacher axis followed by KeepTopK (no renormalisation).
/// The selection mask is a constant of the graph.
pub fn keep_top_k<S: Element>(g: &mut Graph<S>, logits: Var, k: usize) -> Result<Var> {
    let t = g.shape(logits)[0];
    if k == 0 || k > t {
        return Err(Error::contract(format!("top-k {k} outside 1..={t}")));
    }
    let soft = g.softmax(logits, 0)?;
    if k == t {
        return Ok(soft);
    }
    let mask = top_k_mask(g.value(soft), t, k);
    let shape = g.shape(soft).to_vec();
    let m = g.constant(&shape, mask)?;
    g.mul(soft, m)
}

pub fn gate<S: Element>(g: &mut Graph<S>, p: &mut Binder<S>, block: &ContextBlock, f: Var, k: usize) -> Result<Var> {
    let logits = conv(g, p, &block.gate_name(), f, block.stride)?;
    keep_top_k(g, logits, k)
}

/// Dense `1/T` gates of the requested spatial size.
pub fn uniform_gate<S: Element>(g: &mut Graph<S>, teachers: usize, h: usize, w: usize) -> Result<Var> {
    g.constant(&[teachers, h, w], vec![S::of(1.0 / teachers as f64); teachers * h * w])
}

/// `b + sum_x e_x * gates[x]`, each gate slice broadcast over channels.
pub fn selective_fuse<S: Element>(g: &mut Graph<S>, b: Var, experts: &[Var], gates: Var) -> Result<Var> {
    let gs = g.shape(gates).to_vec();
    let bs = g.shape(b).to_vec();
    if gs.len() != 3 || gs[0] != experts.len() || gs[1..] != bs[1..] {
        return Err(Error::contract(format!(
            "gates {gs:?} incompatible with {} experts of shape {bs:?}",
            experts.len()
        )));
    }
    let mut acc: Option<Var> = None;
    for (x, &e) in experts.iter().enumerate() {
        if g.shape(e) != bs.as_slice() {
            return Err(Error::contract(format!(
                "expert feature {:?} differs from block output {bs:?}",
                g.shape(e)
            )));
        }
        let gx = g.slice(gates, x, 1)?;
        let term = g.mul(gx, e)?;
        acc = Some(match acc {
            Some(a) => g.add(a, term)?,
            None => term,
        });
    }
    match acc {
        Some(a) => g.add(b, a),
        None => Ok(b),
    }
}

/// One context block with its knowledge-transfer branches: the residual
/// output, fused with gated expert features when the arm fuses, plus the
/// block's auxiliary values. `feats` are this block's teacher maps.
pub fn dlskt_block<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    cfg: &ModelConfig,
    block: &ContextBlock,
    f: Var,
    feats: Option<&[TeacherFeatures]>,
) -> Result<(Var, BlockOutputs)> {
    let arm = cfg.ablation;
    let b = block_forward(g, p, block, f)?;
    let mut bo = BlockOutputs::default();
    if arm.has_experts() {
        for t in &cfg.teachers {
            bo.experts.push(expert_forward(g, p, block, t, f)?);
        }
    }
    if arm.distills() {
        if let Some(feats) = feats {
            let (kd, total) = multi_kd_loss(g, p, block, &cfg.teachers, &bo.experts, feats)?;
            bo.kd = kd;
            bo.kd_total = Some(total);
        }
    }
    let out = if arm.fuses() {
        let bs = g.shape(b).to_vec();
        let gates = match arm {
            Ablation::NoSelection => uniform_gate(g, cfg.teachers.len(), bs[1], bs[2])?,
            _ => gate(g, p, block, f, cfg.top_k)?,
        };
        bo.gates = Some(gates);
        selective_fuse(g, b, &bo.experts, gates)?
    } else {
        b
    };
    Ok((out, bo))
}

/// Context encoder over the left image (`[3, H, W]`, already normalised).
/// `teacher_feats[i]` holds the stage-`i + 1` maps; pass `None` to skip
/// distillation (evaluation).
pub fn context_forward<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    cfg: &ModelConfig,
    image: Var,
    teacher_feats: Option<&[Vec<TeacherFeatures>]>,
) -> Result<(Var, DlsktOutputs)> {
    let mut f = conv_relu(g, p, "cnet.stem", image, 1)?;
    let mut out = DlsktOutputs {
        teachers: cfg.teachers.clone(),
        blocks: Vec::with_capacity(3),
    };
    for block in ContextBlock::all(cfg) {
        let feats = match teacher_feats {
            Some(all) => Some(
                all.get(block.index - 1)
                    .ok_or_else(|| Error::contract(format!("no teacher maps for block {}", block.index)))?
                    .as_slice(),
            ),
            None => None,
        };
        let (next, bo) = dlskt_block(g, p, cfg, &block, f, feats)?;
        f = next;
        out.blocks.push(bo);
    }
    Ok((f, out))
}
