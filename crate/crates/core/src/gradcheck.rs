//! Central-difference checks of the analytic loss and network-op gradients.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::diffnet::{Tape, Tensor, Var};
use crate::error::Result;
use crate::expand::ExpandedLabel;
use crate::grid::{ImageGrid, SaliencyMap, ScribbleMap, BACKGROUND, FOREGROUND};
use crate::loss::{l_ce_expanded, l_lsc, l_pce, l_ppa, l_smooth, l_ssc, ScribbleParams};

pub const LOSS_STEP: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-4;
pub const OP_STEP: f64 = 1e-6;
pub const OP_TOLERANCE: f64 = 1e-6;
/// Probes closer than this to an `|a - b|` kink of `l_lsc` are redrawn.
pub const KINK_MARGIN: f64 = 1e-3;

const SIDE: usize = 8;

/// Largest relative error seen for one function.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.max_rel_err.is_finite() && self.max_rel_err < self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradReport {
    pub checks: Vec<GradCheck>,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(GradCheck::passed)
    }
}

impl fmt::Display for GradReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "function\tprobes\tmax_rel_err\ttolerance\tstatus")?;
        for c in &self.checks {
            writeln!(
                f,
                "{}\t{}\t{:.3e}\t{:.0e}\t{}",
                c.name,
                c.probes,
                c.max_rel_err,
                c.tolerance,
                if c.passed() { "ok" } else { "FAIL" }
            )?;
        }
        Ok(())
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-10 {
        0.0
    } else {
        (analytic - numeric).abs() / scale
    }
}

fn random_map(r: &mut ChaCha8Rng, h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::new(h, w, (0..h * w).map(|_| r.gen_range(0.05..0.95)).collect()).unwrap()
}

fn random_rgb(r: &mut ChaCha8Rng) -> ImageGrid {
    ImageGrid::new(SIDE, SIDE, 3, (0..3 * SIDE * SIDE).map(|_| r.gen::<f64>()).collect()).unwrap()
}

fn random_scribble(r: &mut ChaCha8Rng) -> ScribbleMap {
    let labels = (0..SIDE * SIDE)
        .map(|_| match r.gen_range(0..4) {
            0 => FOREGROUND,
            1 => BACKGROUND,
            _ => 0,
        })
        .collect();
    ScribbleMap::new(SIDE, SIDE, labels).unwrap()
}

fn random_binary(r: &mut ChaCha8Rng) -> SaliencyMap {
    SaliencyMap::new(SIDE, SIDE, (0..SIDE * SIDE).map(|_| r.gen_range(0..2) as f64).collect()).unwrap()
}

fn nudged(m: &SaliencyMap, i: usize, d: f64) -> SaliencyMap {
    let mut v = m.values().to_vec();
    v[i] += d;
    SaliencyMap::new(m.height(), m.width(), v).unwrap()
}

/// Five-point central difference of `f` along coordinate `i` of `m`.
fn central(m: &SaliencyMap, i: usize, f: &dyn Fn(&SaliencyMap) -> f64) -> f64 {
    let at = |d: f64| f(&nudged(m, i, d * LOSS_STEP));
    (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * LOSS_STEP)
}

/// True when `p[i]` is within `KINK_MARGIN` of a window neighbor.
fn near_kink(p: &SaliencyMap, i: usize, window: usize) -> bool {
    let (h, w) = (p.height() as isize, p.width() as isize);
    let r = (window / 2) as isize;
    let (y, x) = ((i as isize) / w, (i as isize) % w);
    for dy in -r..=r {
        for dx in -r..=r {
            let (yy, xx) = (y + dy, x + dx);
            if (dy, dx) == (0, 0) || yy < 0 || xx < 0 || yy >= h || xx >= w {
                continue;
            }
            if (p.values()[i] - p.values()[(yy * w + xx) as usize]).abs() < KINK_MARGIN {
                return true;
            }
        }
    }
    false
}

/// Finite-difference check of every loss term at `probes` random points.
/// Each probe draws fresh inputs and one coordinate.
pub fn check_losses(seed: u64, probes: usize) -> Result<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let params = ScribbleParams::default();
    let lsc = params.lsc;
    let ssc = params.ssc;
    let half = ((SIDE as f64 * ssc.scale).round() as usize).max(1);
    let names = ["l_pce", "l_lsc", "l_smooth", "l_ssc(full)", "l_ssc(scaled)", "l_ce", "l_ppa"];
    let mut worst = [0.0f64; 7];
    for _ in 0..probes {
        let rgb = random_rgb(&mut r);
        let scribble = random_scribble(&mut r);
        let pred = random_map(&mut r, SIDE, SIDE);
        let scaled = random_map(&mut r, half, half);
        let target = random_binary(&mut r);
        let expanded = ExpandedLabel::from_binary_map(target.clone())?;
        let pseudo = random_map(&mut r, SIDE, SIDE);
        let i = r.gen_range(0..SIDE * SIDE);
        let j = r.gen_range(0..half * half);

        let g = l_pce(&pred, &scribble)?.grad[i];
        let n = central(&pred, i, &|p| l_pce(p, &scribble).unwrap().value);
        worst[0] = worst[0].max(rel_err(g, n));

        let mut k = i;
        let mut lsc_pred = pred.clone();
        while near_kink(&lsc_pred, k, lsc.window) {
            lsc_pred = random_map(&mut r, SIDE, SIDE);
            k = r.gen_range(0..SIDE * SIDE);
        }
        let lf = |p: &SaliencyMap| l_lsc(p, &rgb, lsc.window, lsc.sigma_xy, lsc.sigma_rgb).unwrap();
        let n = central(&lsc_pred, k, &|p| lf(p).value);
        worst[1] = worst[1].max(rel_err(lf(&lsc_pred).grad[k], n));

        let g = l_smooth(&pred, &rgb, params.smooth_alpha)?.grad[i];
        let n = central(&pred, i, &|p| l_smooth(p, &rgb, params.smooth_alpha).unwrap().value);
        worst[2] = worst[2].max(rel_err(g, n));

        let sf = |a: &SaliencyMap, b: &SaliencyMap| l_ssc(a, b, ssc.scale, ssc.ssim_window, ssc.lambda).unwrap();
        let base = sf(&pred, &scaled);
        let n = central(&pred, i, &|p| sf(p, &scaled).value);
        worst[3] = worst[3].max(rel_err(base.grad_full[i], n));
        let n = central(&scaled, j, &|b| sf(&pred, b).value);
        worst[4] = worst[4].max(rel_err(base.grad_scaled[j], n));

        let g = l_ce_expanded(&pred, &expanded)?.grad[i];
        let n = central(&pred, i, &|p| l_ce_expanded(p, &expanded).unwrap().value);
        worst[5] = worst[5].max(rel_err(g, n));

        let g = l_ppa(&pred, &pseudo)?.grad[i];
        let n = central(&pred, i, &|p| l_ppa(p, &pseudo).unwrap().value);
        worst[6] = worst[6].max(rel_err(g, n));
    }
    Ok(GradReport {
        checks: names
            .iter()
            .zip(worst)
            .map(|(name, e)| GradCheck {
                name: name.to_string(),
                probes,
                max_rel_err: e,
                tolerance: LOSS_TOLERANCE,
            })
            .collect(),
    })
}

fn random_tensor(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Inputs away from the relu kink.
fn away_from_zero(r: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let mut t = random_tensor(r, shape);
    for v in t.data_mut() {
        if v.abs() < KINK_MARGIN {
            *v = if *v < 0.0 { -0.5 } else { 0.5 };
        }
    }
    t
}

type Build = fn(&mut Tape<f64>, &[Var]) -> Result<Var>;

/// Compare the tape gradient of `sum(weight * op(inputs))` with central
/// differences along one random coordinate of every input.
fn probe_op(r: &mut ChaCha8Rng, inputs: Vec<Tensor<f64>>, build: Build) -> Result<f64> {
    let eval = |xs: &[Tensor<f64>]| -> Result<(Tape<f64>, Vec<Var>, Var)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
        let out = build(&mut tape, &vars)?;
        Ok((tape, vars, out))
    };
    let (tape, vars, out) = eval(&inputs)?;
    let weight = random_tensor(r, tape.value(out).shape());
    let dot = |t: &Tensor<f64>| t.data().iter().zip(weight.data()).map(|(a, b)| a * b).sum::<f64>();
    let grads = tape.backward(&[(out, weight.clone())])?;
    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let idx = r.gen_range(0..inputs[k].data().len());
        let analytic = grads.get(*v).map_or(0.0, |g| g.data()[idx]);
        let mut shifted = inputs.clone();
        shifted[k].data_mut()[idx] += OP_STEP;
        let (tp, _, op) = eval(&shifted)?;
        let plus = dot(tp.value(op));
        shifted[k].data_mut()[idx] -= 2.0 * OP_STEP;
        let (tm, _, om) = eval(&shifted)?;
        let minus = dot(tm.value(om));
        worst = worst.max(rel_err(analytic, (plus - minus) / (2.0 * OP_STEP)));
    }
    Ok(worst)
}

/// Finite-difference check of every tape op in double precision.
pub fn check_ops(seed: u64, probes: usize) -> Result<GradReport> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    let mut run = |name: &str, make: &dyn Fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>, build: Build| -> Result<()> {
        let mut worst = 0.0f64;
        for _ in 0..probes {
            let inputs = make(&mut r);
            worst = worst.max(probe_op(&mut r, inputs, build)?);
        }
        checks.push(GradCheck {
            name: name.to_string(),
            probes,
            max_rel_err: worst,
            tolerance: OP_TOLERANCE,
        });
        Ok(())
    };
    let conv_inputs = |r: &mut ChaCha8Rng| {
        vec![
            random_tensor(r, [2, 3, 5, 6]),
            random_tensor(r, [4, 3, 3, 3]),
            random_tensor(r, [1, 4, 1, 1]),
        ]
    };
    run("conv2d", &conv_inputs, |t, v| t.conv2d(v[0], v[1], v[2], 1))?;
    run("conv2d(stride 2)", &conv_inputs, |t, v| t.conv2d(v[0], v[1], v[2], 2))?;
    run("relu", &|r| vec![away_from_zero(r, [2, 3, 4, 4])], |t, v| t.relu(v[0]))?;
    run("sigmoid", &|r| vec![random_tensor(r, [2, 3, 4, 4])], |t, v| t.sigmoid(v[0]))?;
    run("up2", &|r| vec![random_tensor(r, [2, 3, 3, 5])], |t, v| t.up2(v[0]))?;
    run(
        "concat",
        &|r| vec![random_tensor(r, [2, 2, 3, 3]), random_tensor(r, [2, 3, 3, 3])],
        |t, v| t.concat(&[v[0], v[1]]),
    )?;
    run(
        "add",
        &|r| vec![random_tensor(r, [2, 3, 3, 3]), random_tensor(r, [2, 3, 3, 3])],
        |t, v| t.add(v[0], v[1]),
    )?;
    run("scale", &|r| vec![random_tensor(r, [1, 2, 3, 3])], |t, v| t.scale(v[0], -1.7))?;
    run("add_scalar", &|r| vec![random_tensor(r, [1, 2, 3, 3])], |t, v| t.add_scalar(v[0], 0.3))?;
    run(
        "conv-relu-up2-sigmoid",
        &|r| {
            vec![
                random_tensor(r, [1, 2, 4, 4]),
                random_tensor(r, [3, 2, 3, 3]),
                random_tensor(r, [1, 3, 1, 1]),
            ]
        },
        |t, v| {
            let c = t.conv2d(v[0], v[1], v[2], 1)?;
            let a = t.sigmoid(c)?;
            let u = t.up2(a)?;
            t.scale(u, 2.0)
        },
    )?;
    Ok(GradReport { checks })
}
