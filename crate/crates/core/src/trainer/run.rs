use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::optim::{align_lr, one_cycle_lr, AdamW};
use super::{prediction_loss, total_loss};
use crate::autograd::Graph;
use crate::config::RunConfig;
use crate::data::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{self, forward, StereoModel};
use crate::params::Binder;
use crate::sample::StereoSample;
use crate::teachers::TeacherFeatures;

pub const LOG_FILE: &str = "train_log.csv";
pub const CHECKPOINT_FILE: &str = "final.ckpt";
pub const LAST_GOOD_FILE: &str = "last_good.ckpt";

/// Stream tag mixed into the batch-sampling seed.
const BATCH_STREAM: u64 = 0xB47C_4000;

/// Loss components of one optimiser step, averaged over its samples.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr_main: f64,
    pub lr_align: f64,
    pub l_p: f64,
    pub l1_per_iter: Vec<f64>,
    /// `kd[j][t]`: block `j + 1`, teacher `t`.
    pub kd: [Vec<f64>; 3],
    pub kd_block: [f64; 3],
    pub l_aio: f64,
    pub val_epe: Option<f64>,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub checkpoint_path: PathBuf,
    pub log_path: PathBuf,
    /// `(step, validation EPE)` of every probe, starting with step 0.
    pub probes: Vec<(usize, f64)>,
}

/// Pixel-weighted validation EPE of `model` over `samples`.
pub fn probe_epe(model: &StereoModel, samples: &[StereoSample], iters: usize) -> Result<f64> {
    let mut reports = Vec::with_capacity(samples.len());
    for s in samples {
        let pred = model.predict(s, iters)?;
        let gt = s.gt()?;
        let pred = crate::Tensor::new(gt.shape(), pred)?;
        reports.push(metrics::evaluate(&pred, gt, &s.valid_mask()?)?);
    }
    Ok(metrics::aggregate(&reports, None)?.epe)
}

fn log_header(cfg: &RunConfig) -> String {
    let mut h = String::from("step,lr_main,lr_align,l_p");
    for i in 1..=cfg.model.train_iters {
        let _ = write!(h, ",l1_iter{i}");
    }
    if cfg.model.ablation.distills() {
        for j in 1..=3 {
            for t in &cfg.model.teachers {
                let _ = write!(h, ",kd_block{j}_{t}");
            }
        }
    }
    h.push_str(",kd_block1,kd_block2,kd_block3,l_aio,val_epe");
    h
}

fn log_row(r: &StepRecord, cfg: &RunConfig) -> String {
    let mut s = format!("{},{},{},{}", r.step, r.lr_main, r.lr_align, r.l_p);
    if r.l1_per_iter.is_empty() {
        // probe-only row
        s = format!("{},{},{},", r.step, r.lr_main, r.lr_align);
        for _ in 0..cfg.model.train_iters {
            s.push(',');
        }
        if cfg.model.ablation.distills() {
            s.push_str(&",".repeat(3 * cfg.model.teachers.len()));
        }
        s.push_str(",,,,");
    } else {
        for v in &r.l1_per_iter {
            let _ = write!(s, ",{v}");
        }
        if cfg.model.ablation.distills() {
            for block in &r.kd {
                for v in block {
                    let _ = write!(s, ",{v}");
                }
            }
        }
        for v in r.kd_block {
            let _ = write!(s, ",{v}");
        }
        let _ = write!(s, ",{}", r.l_aio);
    }
    match r.val_epe {
        Some(e) => {
            let _ = write!(s, ",{e}");
        }
        None => s.push(','),
    }
    s
}

struct Accum {
    n: usize,
    rec: StepRecord,
}

impl Accum {
    fn new(cfg: &RunConfig, step: usize, lr_main: f64, lr_align: f64) -> Self {
        let t = cfg.model.teachers.len();
        Accum {
            n: 0,
            rec: StepRecord {
                step,
                lr_main,
                lr_align,
                l1_per_iter: vec![0.0; cfg.model.train_iters],
                kd: [vec![0.0; t], vec![0.0; t], vec![0.0; t]],
                ..Default::default()
            },
        }
    }

    fn finish(mut self) -> StepRecord {
        let n = self.n as f64;
        let r = &mut self.rec;
        r.l1_per_iter.iter_mut().for_each(|v| *v /= n);
        r.kd.iter_mut().flatten().for_each(|v| *v /= n);
        r.kd_block.iter_mut().for_each(|v| *v /= n);
        r.l_p /= n;
        r.l_aio /= n;
        self.rec
    }
}

/// Forward, loss and backward for one sample; gradients are added to the
/// model's parameter buffers.
fn sample_step(
    model: &mut StereoModel,
    cfg: &RunConfig,
    sample: &StereoSample,
    feats: Option<&[Vec<TeacherFeatures>]>,
    acc: &mut Accum,
) -> Result<bool> {
    let mut g = Graph::<f32>::new();
    let mut p = Binder::new(&model.params);
    let out = forward(&mut g, &mut p, &cfg.model, sample, feats, cfg.model.train_iters)?;
    let gt_t = sample.gt()?;
    let gt = g.constant(gt_t.shape(), gt_t.data().to_vec())?;
    let valid = sample.valid_mask()?;
    let (per_iter, l_p) = prediction_loss(&mut g, &out.predictions, gt, valid.data(), cfg.loss.gamma_p)?;
    let mut kd_blocks = [None; 3];
    for (j, b) in out.aux.blocks.iter().enumerate() {
        kd_blocks[j] = b.kd_total;
    }
    let total = total_loss(&mut g, l_p, &kd_blocks, cfg.loss.gamma_kd)?;
    let l_aio = g.scalar(total) as f64;
    if !l_aio.is_finite() {
        return Ok(false);
    }

    let r = &mut acc.rec;
    for (dst, &l) in r.l1_per_iter.iter_mut().zip(&per_iter) {
        *dst += g.scalar(l) as f64;
    }
    for (j, b) in out.aux.blocks.iter().enumerate() {
        for (dst, &k) in r.kd[j].iter_mut().zip(&b.kd) {
            *dst += g.scalar(k) as f64;
        }
        if let Some(k) = b.kd_total {
            r.kd_block[j] += g.scalar(k) as f64;
        }
    }
    r.l_p += g.scalar(l_p) as f64;
    r.l_aio += l_aio;
    acc.n += 1;

    g.backward(total)?;
    let bound: Vec<(String, crate::Var)> = p.bound().map(|(n, v)| (n.to_string(), v)).collect();
    drop(p);
    for (name, v) in bound {
        if let Some(grad) = g.grad(v) {
            if grad.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGrad(name));
            }
            model.params.get_mut(&name)?.accumulate_grad(grad);
        }
    }
    Ok(true)
}

fn manifest(cfg: &RunConfig, split: Split) -> Result<DatasetManifest> {
    DatasetManifest::load(cfg.data.dir.join(DatasetManifest::file_name(split)))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Runs the seeded training loop described by `cfg`, writing the CSV log
/// and checkpoints under `cfg.output_dir`. `progress` sees every logged row.
pub fn train(cfg: &RunConfig, mut progress: impl FnMut(&StepRecord)) -> Result<TrainOutcome> {
    cfg.validate()?;
    let train_set = manifest(cfg, Split::Train)?.load_all()?;
    if train_set.is_empty() {
        return Err(Error::Config("training manifest is empty".into()));
    }
    let val = manifest(cfg, Split::Val)?;
    let probe_n = cfg.train.probe_samples.min(val.len());
    let probe_set: Vec<StereoSample> = (0..probe_n).map(|i| val.load_sample(i)).collect::<Result<_>>()?;
    if probe_set.is_empty() {
        return Err(Error::Config("validation probe is empty".into()));
    }

    let teacher_cache: Option<Vec<Vec<Vec<TeacherFeatures>>>> = if cfg.model.ablation.distills() {
        let providers = model::providers(&cfg.model)?;
        Some(
            train_set
                .iter()
                .map(|s| model::teacher_maps(&providers, s))
                .collect::<Result<_>>()?,
        )
    } else {
        None
    };

    let out_dir = &cfg.output_dir;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join(LOG_FILE);
    let mut log = log_header(cfg);
    log.push('\n');

    let mut model = StereoModel::new(cfg.model.clone(), cfg.seed)?;
    let mut opt = AdamW::new(&model.params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ BATCH_STREAM);
    let total = cfg.optim.steps;
    let iters = cfg.model.eval_iters;

    let epe0 = probe_epe(&model, &probe_set, iters)?;
    let mut probes = vec![(0, epe0)];
    let row0 = StepRecord {
        step: 0,
        lr_main: one_cycle_lr(0, total, cfg.optim.peak_lr, cfg.optim.warm_frac),
        lr_align: align_lr(0, total, &cfg.optim),
        val_epe: Some(epe0),
        ..Default::default()
    };
    progress(&row0);
    log.push_str(&log_row(&row0, cfg));
    log.push('\n');

    for step in 1..=total {
        let lr_main = one_cycle_lr(step, total, cfg.optim.peak_lr, cfg.optim.warm_frac);
        let lr_align = align_lr(step, total, &cfg.optim);
        let mut acc = Accum::new(cfg, step, lr_main, lr_align);
        model.params.zero_grads();
        for _ in 0..cfg.optim.batch {
            let i = rng.gen_range(0..train_set.len());
            let feats = teacher_cache.as_ref().map(|c| c[i].as_slice());
            if !sample_step(&mut model, cfg, &train_set[i], feats, &mut acc)? {
                model.params.zero_grads();
                let last_good = out_dir.join(LAST_GOOD_FILE);
                Checkpoint::new(model, opt).save(&last_good)?;
                write_file(&log_path, &log)?;
                return Err(Error::Diverged { step, last_good });
            }
        }
        opt.update(&mut model.params, &cfg.optim, lr_main, lr_align, cfg.optim.batch as f64)?;
        model.params.zero_grads();

        let mut rec = acc.finish();
        let probe_now = step == total || (cfg.train.probe_every > 0 && step % cfg.train.probe_every == 0);
        if probe_now {
            let e = probe_epe(&model, &probe_set, iters)?;
            probes.push((step, e));
            rec.val_epe = Some(e);
        }
        progress(&rec);
        log.push_str(&log_row(&rec, cfg));
        log.push('\n');
        if cfg.train.checkpoint_every > 0 && step % cfg.train.checkpoint_every == 0 && step != total {
            let p = out_dir.join(format!("step{step:06}.ckpt"));
            Checkpoint::new(model.clone(), opt.clone()).save(p)?;
        }
    }

    write_file(&log_path, &log)?;
    let checkpoint = Checkpoint::new(model, opt);
    let checkpoint_path = out_dir.join(CHECKPOINT_FILE);
    checkpoint.save(&checkpoint_path)?;
    Ok(TrainOutcome {
        checkpoint,
        checkpoint_path,
        log_path,
        probes,
    })
}
