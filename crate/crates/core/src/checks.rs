//! Finite-difference gradient checks over every differentiable op and the
//! two composite blocks of the network, all in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{grad_check_with_fault, GradCheckReport, Graph, LossKind, Tensor, Var};
use crate::config::ModelConfig;
use crate::dlskt::{dlskt_block, ContextBlock};
use crate::error::Result;
use crate::model::init_params;
use crate::net::{gru_update, GruContext, GruState};
use crate::params::{Binder, ParamStore};
use crate::teachers::TeacherFeatures;

pub const OP_EPS: f64 = 1e-4;
pub const OP_TOL: f64 = 1e-4;
pub const COMPOSITE_EPS: f64 = 1e-6;
pub const COMPOSITE_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub composite: bool,
    pub tolerance: f64,
    pub report: GradCheckReport,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.report.passes(self.tolerance)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {:<24} max_rel_err={:.3e} tol={:.0e} checked={}",
            if self.passed() { "PASS" } else { "FAIL" },
            self.name,
            self.report.max_rel_error,
            self.tolerance,
            self.report.checked
        )
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[-1, 1)`.
pub fn uniform(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Values with magnitude in `[0.1, 1)`, keeping kinks out of reach of the
/// finite-difference step.
pub fn away_from_zero(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.1..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// `sum(y * R)` with a fixed random `R`, so every output element carries a
/// distinct weight.
fn project(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = g.shape(y).to_vec();
    let r = uniform(&shape, seed);
    let c = g.constant(&shape, r.into_data())?;
    let p = g.mul(y, c)?;
    g.sum(p)
}

type Build = Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>>;

struct OpCase {
    name: &'static str,
    inputs: Vec<Tensor<f64>>,
    build: Build,
}

fn case(name: &'static str, inputs: Vec<Tensor<f64>>, build: impl Fn(&mut Graph<f64>, &[Var]) -> Result<Var> + 'static) -> OpCase {
    OpCase {
        name,
        inputs,
        build: Box::new(build),
    }
}

fn op_cases() -> Vec<OpCase> {
    let centers: Vec<f64> = {
        let mut r = rng(91);
        (0..12).map(|_| r.gen_range(-1.5..5.5)).collect()
    };
    let mask: Vec<f64> = (0..12).map(|i| if i % 3 == 0 { 0.0 } else { 1.0 }).collect();
    let mask_l1 = mask.clone();
    let pred = uniform(&[3, 4], 40);
    let mut target = pred.clone();
    {
        let off = away_from_zero(&[3, 4], 41);
        target.data_mut().iter_mut().zip(off.data()).for_each(|(t, o)| *t += o);
    }
    let t_mse = target.clone();
    let t_l1 = target;

    vec![
        case("conv2d", vec![uniform(&[2, 5, 5], 1), uniform(&[3, 2, 3, 3], 2), uniform(&[3], 3)], |g, v| {
            let y = g.conv2d(v[0], v[1], Some(v[2]), 1, 1)?;
            project(g, y, 100)
        }),
        case("conv2d_stride2", vec![uniform(&[2, 6, 7], 4), uniform(&[3, 2, 3, 3], 5)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 2, 1)?;
            project(g, y, 101)
        }),
        case("conv2d_batched", vec![uniform(&[2, 2, 4, 4], 6), uniform(&[2, 2, 1, 1], 7)], |g, v| {
            let y = g.conv2d(v[0], v[1], None, 1, 0)?;
            project(g, y, 102)
        }),
        case("avg_pool2", vec![uniform(&[2, 5, 6], 8)], |g, v| {
            let y = g.avg_pool2(v[0])?;
            project(g, y, 103)
        }),
        case("interp_bilinear", vec![uniform(&[2, 3, 4], 9)], |g, v| {
            let y = g.interp_bilinear(v[0], 7, 5)?;
            project(g, y, 104)
        }),
        case("add", vec![uniform(&[2, 3], 10), uniform(&[2, 3], 11)], |g, v| {
            let y = g.add(v[0], v[1])?;
            project(g, y, 105)
        }),
        case("sub", vec![uniform(&[2, 3], 12), uniform(&[2, 3], 13)], |g, v| {
            let y = g.sub(v[0], v[1])?;
            project(g, y, 106)
        }),
        case("mul", vec![uniform(&[2, 3], 14), uniform(&[2, 3], 15)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 107)
        }),
        case("mul_broadcast", vec![uniform(&[1, 3, 4], 16), uniform(&[3, 3, 4], 17)], |g, v| {
            let y = g.mul(v[0], v[1])?;
            project(g, y, 108)
        }),
        case("relu", vec![away_from_zero(&[3, 4], 18)], |g, v| {
            let y = g.relu(v[0])?;
            project(g, y, 109)
        }),
        case("sigmoid", vec![uniform(&[3, 4], 19)], |g, v| {
            let y = g.sigmoid(v[0])?;
            project(g, y, 110)
        }),
        case("tanh", vec![uniform(&[3, 4], 20)], |g, v| {
            let y = g.tanh(v[0])?;
            project(g, y, 111)
        }),
        case("scale", vec![uniform(&[5], 21)], |g, v| {
            let y = g.scale(v[0], -2.5)?;
            project(g, y, 112)
        }),
        case("add_scalar", vec![uniform(&[5], 22)], |g, v| {
            let y = g.add_scalar(v[0], 0.75)?;
            let y = g.mul(y, y)?;
            project(g, y, 113)
        }),
        case("one_minus", vec![uniform(&[5], 23)], |g, v| {
            let y = g.one_minus(v[0])?;
            let y = g.mul(y, y)?;
            project(g, y, 114)
        }),
        case("softmax_axis0", vec![uniform(&[3, 2, 4], 24)], |g, v| {
            let y = g.softmax(v[0], 0)?;
            project(g, y, 115)
        }),
        case("softmax_axis2", vec![uniform(&[2, 3, 4], 25)], |g, v| {
            let y = g.softmax(v[0], 2)?;
            project(g, y, 116)
        }),
        case("loss_mse", vec![pred.clone()], move |g, v| {
            let t = g.constant(&[3, 4], t_mse.data().to_vec())?;
            g.loss(LossKind::Mse, v[0], t, Some(&mask))
        }),
        case("loss_l1", vec![pred], move |g, v| {
            let t = g.constant(&[3, 4], t_l1.data().to_vec())?;
            g.loss(LossKind::L1, v[0], t, Some(&mask_l1))
        }),
        case("sum", vec![uniform(&[2, 3], 26)], |g, v| {
            let y = g.mul(v[0], v[0])?;
            g.sum(y)
        }),
        case("mean", vec![uniform(&[2, 3], 27)], |g, v| {
            let y = g.mul(v[0], v[0])?;
            g.mean(y)
        }),
        case("concat", vec![uniform(&[1, 2, 3], 28), uniform(&[2, 2, 3], 29)], |g, v| {
            let y = g.concat(&[v[0], v[1]])?;
            project(g, y, 117)
        }),
        case("slice", vec![uniform(&[4, 2, 3], 30)], |g, v| {
            let y = g.slice(v[0], 1, 2)?;
            project(g, y, 118)
        }),
        case("reshape", vec![uniform(&[2, 6], 31)], |g, v| {
            let y = g.reshape(v[0], &[3, 4])?;
            project(g, y, 119)
        }),
        case("instance_norm", vec![uniform(&[2, 3, 4], 32)], |g, v| {
            let y = g.instance_norm(v[0], 1e-5)?;
            project(g, y, 120)
        }),
        case("correlation", vec![uniform(&[3, 3, 5], 33), uniform(&[3, 3, 5], 34)], |g, v| {
            let y = g.correlation(v[0], v[1], 4)?;
            project(g, y, 121)
        }),
        case("pool_last_axis", vec![uniform(&[2, 3, 5], 35)], |g, v| {
            let y = g.pool_last_axis(v[0])?;
            project(g, y, 122)
        }),
        case("corr_lookup", vec![uniform(&[3, 4, 6], 36)], move |g, v| {
            let y = g.corr_lookup(v[0], &centers, 2)?;
            project(g, y, 123)
        }),
    ]
}

/// Tiny configuration for the composite checks.
pub fn composite_config() -> ModelConfig {
    ModelConfig {
        feature_widths: [3, 4],
        feature_channels: 4,
        context_stem: 3,
        context_widths: [4, 4, 4],
        hidden: 4,
        max_disp: 2,
        radius: 1,
        levels: 1,
        teacher_channels: 2,
        top_k: 2,
        ..ModelConfig::default()
    }
}

fn block_check(fault: Option<&str>) -> Result<GradCheckReport> {
    let cfg = composite_config();
    let store: ParamStore<f64> = init_params(&cfg, 5);
    let block = ContextBlock::all(&cfg)[0];
    let names: Vec<String> = store
        .names()
        .filter(|n| {
            n.starts_with("cnet.block1.") || n.starts_with("dlskt.block1.") || n.starts_with("align.block1.")
        })
        .map(str::to_string)
        .collect();
    let (h, w) = (5, 6);
    let feats: Vec<TeacherFeatures> = cfg
        .teachers
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let map = uniform(&[cfg.teacher_channels, h, w], 300 + i as u64).cast::<f32>();
            TeacherFeatures::new(t.clone(), 1, map)
        })
        .collect::<Result<_>>()?;
    let mut inputs = vec![uniform(&[block.c_in, h, w], 200)];
    for n in &names {
        // bump biases off zero so relu inputs do not collect at the kink
        let t = store.get(n)?;
        let mut t = t.clone().with_requires_grad(false);
        if n.ends_with(".b") {
            t = uniform(t.shape(), 400 + inputs.len() as u64);
            t.data_mut().iter_mut().for_each(|v| *v *= 0.2);
        }
        inputs.push(t);
    }
    let build = move |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let mut p = Binder::new(&store);
        for (n, &var) in names.iter().zip(&v[1..]) {
            p.bind(n.clone(), var);
        }
        let (out, aux) = dlskt_block(g, &mut p, &cfg, &block, v[0], Some(&feats))?;
        let y = project(g, out, 500)?;
        let kd = aux.kd_total.expect("distilling arm");
        g.add(y, kd)
    };
    grad_check_with_fault(build, &inputs, COMPOSITE_EPS, fault)
}

fn gru_check(fault: Option<&str>) -> Result<GradCheckReport> {
    let cfg = composite_config();
    let store: ParamStore<f64> = init_params(&cfg, 6);
    let names: Vec<String> = store
        .names()
        .filter(|n| n.starts_with("gru.") && !n.starts_with("gru.hinit") && !n.starts_with("gru.cinj") && !n.contains("_ctx"))
        .map(str::to_string)
        .collect();
    let ch = cfg.hidden;
    let corr_ch = crate::net::corr_channels(&cfg);
    let (h, w) = (3, 4);
    let disparity: Vec<f64> = {
        let mut r = rng(600);
        (0..h * w).map(|_| r.gen_range(1.5..3.0)).collect()
    };
    let mut inputs = vec![
        uniform(&[ch, h, w], 601),
        uniform(&[corr_ch, h, w], 602),
        uniform(&[ch, h, w], 603),
        uniform(&[ch, h, w], 604),
        uniform(&[ch, h, w], 605),
    ];
    for n in &names {
        let t = store.get(n)?;
        let mut t = t.clone().with_requires_grad(false);
        if n.ends_with(".b") {
            t = uniform(t.shape(), 700 + inputs.len() as u64);
            t.data_mut().iter_mut().for_each(|v| *v *= 0.2);
        }
        inputs.push(t);
    }
    let build = move |g: &mut Graph<f64>, v: &[Var]| -> Result<Var> {
        let mut p = Binder::new(&store);
        for (n, &var) in names.iter().zip(&v[5..]) {
            p.bind(n.clone(), var);
        }
        let state = GruState {
            hidden: v[0],
            disparity: g.constant(&[1, h, w], disparity.clone())?,
        };
        let ctx = GruContext { z: v[2], r: v[3], q: v[4] };
        let (next, _) = gru_update(g, &mut p, state, v[1], &ctx)?;
        let a = project(g, next.hidden, 800)?;
        let b = project(g, next.disparity, 801)?;
        g.add(a, b)
    };
    grad_check_with_fault(build, &inputs, COMPOSITE_EPS, fault)
}

/// Runs every check. With `fault`, the backward rule of that op name is
/// deliberately corrupted in the analytic pass.
pub fn gradcheck_suite(fault: Option<&str>) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for c in op_cases() {
        let report = grad_check_with_fault(c.build, &c.inputs, OP_EPS, fault)?;
        out.push(CheckResult {
            name: c.name.to_string(),
            composite: false,
            tolerance: OP_TOL,
            report,
        });
    }
    for (name, report) in [("dlskt_block", block_check(fault)?), ("gru_block", gru_check(fault)?)] {
        out.push(CheckResult {
            name: name.to_string(),
            composite: true,
            tolerance: COMPOSITE_TOL,
            report,
        });
    }
    Ok(out)
}
