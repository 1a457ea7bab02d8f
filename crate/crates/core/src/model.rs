//! Full network assembly: parameters, teacher wiring and the iterative
//! forward pass.

use crate::autograd::{Element, Graph, Var};
use crate::config::ModelConfig;
use crate::dlskt::{context_forward, init_context_net, DlsktOutputs};
use crate::error::{Error, Result};
use crate::net::{self, GruState};
use crate::params::{Binder, ParamStore};
use crate::sample::StereoSample;
use crate::teachers::{self, FileTeacher, TeacherFeatures, TeacherProvider};

/// Every parameter the configuration calls for, initialised from `seed`.
pub fn init_params<S: Element>(cfg: &ModelConfig, seed: u64) -> ParamStore<S> {
    let mut store = ParamStore::new();
    net::init_feature_net(&mut store, seed, cfg);
    init_context_net(&mut store, seed, cfg);
    net::init_gru(&mut store, seed, cfg);
    store
}

/// Teacher sources in configuration order.
pub fn providers(cfg: &ModelConfig) -> Result<Vec<Box<dyn TeacherProvider>>> {
    cfg.teachers
        .iter()
        .map(|t| match &cfg.teacher_dir {
            Some(dir) => Ok(Box::new(FileTeacher { dir: dir.clone(), kind: t.clone() }) as Box<dyn TeacherProvider>),
            None => teachers::synthetic(t, cfg.teacher_seed, cfg.depth_noise)
                .ok_or_else(|| Error::Config(format!("no synthetic emulator for teacher `{t}`"))),
        })
        .collect()
}

/// Stage-indexed teacher maps for one sample: `out[i]` is stage `i + 1`.
pub fn teacher_maps(providers: &[Box<dyn TeacherProvider>], sample: &StereoSample) -> Result<Vec<Vec<TeacherFeatures>>> {
    (1..=3)
        .map(|stage| providers.iter().map(|p| p.stage_features(sample, stage)).collect())
        .collect()
}

pub struct ForwardOutput {
    /// Full-resolution `[H, W]` predictions, one per iteration.
    pub predictions: Vec<Var>,
    pub aux: DlsktOutputs,
}

/// Runs the feature net, correlation pyramid, context encoder and `iters`
/// GRU updates. Distillation terms are built only when `teacher_feats` is
/// given.
pub fn forward<S: Element>(
    g: &mut Graph<S>,
    p: &mut Binder<S>,
    cfg: &ModelConfig,
    sample: &StereoSample,
    teacher_feats: Option<&[Vec<TeacherFeatures>]>,
    iters: usize,
) -> Result<ForwardOutput> {
    if iters == 0 {
        return Err(Error::contract("forward needs at least one iteration"));
    }
    let pair = net::feature_net(g, p, sample)?;
    let pyr = net::build_corr(g, pair, cfg.max_disp, cfg.levels)?;
    let img = net::image_input(g, &sample.left)?;
    let (f3, aux) = context_forward(g, p, cfg, img, teacher_feats)?;
    let (hidden, ctx) = net::gru_init(g, p, f3)?;
    let s = g.shape(f3).to_vec();
    let mut state = GruState {
        hidden,
        disparity: g.constant(&[1, s[1], s[2]], vec![S::zero(); s[1] * s[2]])?,
    };
    let mut predictions = Vec::with_capacity(iters);
    for _ in 0..iters {
        let d0 = g.detach(state.disparity);
        state.disparity = d0;
        let corr = net::corr_lookup(g, &pyr, d0, cfg.radius)?;
        let (next, _delta) = net::gru_update(g, p, state, corr, &ctx)?;
        predictions.push(net::upsample_disparity(g, next.disparity)?);
        state = next;
    }
    Ok(ForwardOutput { predictions, aux })
}

/// Configuration plus parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct StereoModel {
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
}

impl StereoModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = init_params(&config, seed);
        Ok(StereoModel { config, params })
    }

    /// Evaluation-mode prediction with `iters` updates (no distillation).
    pub fn predict(&self, sample: &StereoSample, iters: usize) -> Result<Vec<f32>> {
        let mut g = Graph::<f32>::new();
        let mut p = Binder::new(&self.params);
        let out = forward(&mut g, &mut p, &self.config, sample, None, iters)?;
        Ok(g.value(*out.predictions.last().unwrap()).to_vec())
    }
}
