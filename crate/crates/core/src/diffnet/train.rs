use std::fmt;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{scheduled_lr, Adam};
use super::network::{Forward, Network, NetworkConfig};
use super::tape::{Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::expand::ExpandedLabel;
use crate::grid::{resize_bilinear, ImageGrid, SaliencyMap, ScribbleMap};
use crate::loss::{l_ce_expanded, l_ppa, l_scribble, l_total, LossParts, ScribbleParams, TotalParts};
use crate::refine::{aggregate_pseudo_label, ParParams};

/// Which dense targets supervise training besides the scribbles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Supervision {
    /// Scribble losses only.
    Baseline,
    /// Adds the refined average of the two expanded labels as a target for R.
    Expanded,
    /// Full model: prediction heads learn the expanded labels and their
    /// refined average supervises R.
    Predicted,
}

impl Supervision {
    pub fn name(self) -> &'static str {
        match self {
            Supervision::Baseline => "baseline",
            Supervision::Expanded => "expanded",
            Supervision::Predicted => "predicted",
        }
    }
}

impl std::str::FromStr for Supervision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "baseline" => Ok(Supervision::Baseline),
            "expanded" => Ok(Supervision::Expanded),
            "predicted" => Ok(Supervision::Predicted),
            _ => Err(Error::Config(format!("unknown supervision mode {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub network: NetworkConfig,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub warmup_epochs: usize,
    pub deterministic: bool,
    pub augment: bool,
    pub supervision: Supervision,
    pub scribble: ScribbleParams,
    pub par: ParParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: NetworkConfig::default(),
            lr: 5e-5,
            batch: 8,
            epochs: 60,
            lr_drop_epoch: 40,
            warmup_epochs: 0,
            deterministic: true,
            augment: true,
            supervision: Supervision::Predicted,
            scribble: ScribbleParams::default(),
            par: ParParams::default(),
        }
    }
}

/// One training example at network resolution.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub stem: String,
    pub rgb: ImageGrid,
    pub thermal: ImageGrid,
    pub scribble: ScribbleMap,
    pub expanded_rgb: ExpandedLabel,
    pub expanded_thermal: ExpandedLabel,
}

impl TrainSample {
    fn transformed(&self, flip: bool, quarter_turns: usize) -> Result<TrainSample> {
        let square = self.rgb.height() == self.rgb.width();
        let turns = if square { quarter_turns % 4 } else { 0 };
        let map = |m: &SaliencyMap| -> Result<SaliencyMap> {
            let m = if flip { m.flip_horizontal() } else { m.clone() };
            m.rotate90(turns)
        };
        let img = |g: &ImageGrid| -> Result<ImageGrid> {
            let g = if flip { g.flip_horizontal() } else { g.clone() };
            g.rotate90(turns)
        };
        let s = if flip {
            self.scribble.flip_horizontal()
        } else {
            self.scribble.clone()
        };
        Ok(TrainSample {
            stem: self.stem.clone(),
            rgb: img(&self.rgb)?,
            thermal: img(&self.thermal)?,
            scribble: s.rotate90(turns)?,
            expanded_rgb: ExpandedLabel::from_binary_map(map(self.expanded_rgb.map())?)?,
            expanded_thermal: ExpandedLabel::from_binary_map(map(self.expanded_thermal.map())?)?,
        })
    }
}

/// Mean loss terms over one epoch. Disabled terms are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub pce: f64,
    pub lsc: f64,
    pub smooth: f64,
    pub ssc: f64,
    pub ce_rgb: Option<f64>,
    pub ce_thermal: Option<f64>,
    pub ppa: Option<f64>,
    pub total: f64,
}

impl EpochLog {
    pub const HEADER: &'static str = "epoch\tL_pce\tL_lsc\tL_sl\tL_ssc\tL_ce_x\tL_ce_t\tL_ppa\tL";
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.6}"));
        write!(
            f,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{:.6}",
            self.epoch,
            self.pce,
            self.lsc,
            self.smooth,
            self.ssc,
            opt(self.ce_rgb),
            opt(self.ce_thermal),
            opt(self.ppa),
            self.total
        )
    }
}

/// Result of one sample's forward and backward pass.
struct SampleGrad {
    grads: Vec<Tensor<f32>>,
    parts: LossParts,
}

fn to_map(t: &Tensor<f32>) -> Result<SaliencyMap> {
    SaliencyMap::from_clamped(t.height(), t.width(), t.to_f64())
}

fn seed(shape: [usize; 4], g: &[f64]) -> Result<Tensor<f32>> {
    Tensor::from_vec(shape, g.iter().map(|&v| v as f32).collect())
}

fn scaled_size(n: usize, scale: f64) -> usize {
    ((n as f64) * scale).round() as usize
}

/// Forward both scales, evaluate the loss, and pull gradients back to every parameter.
fn sample_step(net: &Network<f32>, s: &TrainSample, cfg: &TrainConfig, dense: bool) -> Result<SampleGrad> {
    let (h, w) = (s.rgb.height(), s.rgb.width());
    let heads = dense && cfg.supervision == Supervision::Predicted;
    let mut tape = Tape::new();
    let p = net.bind(&mut tape);
    let xr = tape.constant(Tensor::from_planes(3, h, w, s.rgb.data())?);
    let xt = tape.constant(Tensor::from_planes(3, h, w, s.thermal.data())?);
    let out: Forward = net.forward(&mut tape, &p, xr, xt, heads)?;

    let scale = cfg.scribble.ssc.scale;
    let (sh, sw) = (scaled_size(h, scale), scaled_size(w, scale));
    let rs = resize_bilinear(&s.rgb, sh, sw)?;
    let ts = resize_bilinear(&s.thermal, sh, sw)?;
    let xrs = tape.constant(Tensor::from_planes(3, sh, sw, rs.data())?);
    let xts = tape.constant(Tensor::from_planes(3, sh, sw, ts.data())?);
    let fxs = net.encoder(&mut tape, &p, super::Modality::Rgb, xrs)?;
    let fts = net.encoder(&mut tape, &p, super::Modality::Thermal, xts)?;
    let r_scaled = net.decoder(&mut tape, &p, &fxs, &fts)?;

    let r = to_map(tape.value(out.saliency))?;
    let r_s = to_map(tape.value(r_scaled))?;
    let scribble = l_scribble(&r, &s.scribble, &s.rgb, &r_s, &cfg.scribble)?;

    let (mut ce_x, mut ce_t, mut ppa) = (None, None, None);
    if dense {
        match cfg.supervision {
            Supervision::Baseline => {}
            Supervision::Expanded => {
                let target = aggregate_pseudo_label(s.expanded_rgb.map(), s.expanded_thermal.map(), &s.rgb, &cfg.par)?;
                ppa = Some(l_ppa(&r, &target)?);
            }
            Supervision::Predicted => {
                // Plain values leave the tape here, so the target carries no gradient.
                let px = to_map(tape.value(out.pred_rgb.expect("heads enabled")))?;
                let pt = to_map(tape.value(out.pred_thermal.expect("heads enabled")))?;
                ce_x = Some(l_ce_expanded(&px, &s.expanded_rgb)?);
                ce_t = Some(l_ce_expanded(&pt, &s.expanded_thermal)?);
                let target = aggregate_pseudo_label(&px, &pt, &s.rgb, &cfg.par)?;
                ppa = Some(l_ppa(&r, &target)?);
            }
        }
    }
    let total = l_total(TotalParts {
        scribble: &scribble,
        ce_x: ce_x.as_ref(),
        ce_t: ce_t.as_ref(),
        ppa: ppa.as_ref(),
    });
    if !total.value.is_finite() {
        return Err(Error::Numeric(format!("non-finite loss on {}", s.stem)));
    }

    let mut seeds: Vec<(Var, Tensor<f32>)> = vec![
        (out.saliency, seed([1, 1, h, w], &total.grad_r)?),
        (r_scaled, seed([1, 1, sh, sw], &total.grad_r_scaled)?),
    ];
    if let (Some(v), Some(g)) = (out.pred_rgb, total.grad_px.as_ref()) {
        seeds.push((v, seed([1, 1, h, w], g)?));
    }
    if let (Some(v), Some(g)) = (out.pred_thermal, total.grad_pt.as_ref()) {
        seeds.push((v, seed([1, 1, h, w], g)?));
    }
    let mut grads = tape.backward(&seeds)?;
    let grads = p
        .vars()
        .iter()
        .zip(net.params().tensors())
        .map(|(&v, t)| grads.take(v).unwrap_or_else(|| Tensor::zeros(t.shape())))
        .collect();
    Ok(SampleGrad {
        grads,
        parts: total.parts,
    })
}

/// Trained network, per-epoch log, and optimizer step count.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub network: Network<f32>,
    pub log: Vec<EpochLog>,
    pub steps: u64,
}

#[derive(Default)]
struct Running {
    n: usize,
    pce: f64,
    lsc: f64,
    smooth: f64,
    ssc: f64,
    ce_x: f64,
    ce_t: f64,
    ppa: f64,
    total: f64,
}

impl Running {
    fn add(&mut self, p: &LossParts) {
        self.n += 1;
        self.pce += p.pce;
        self.lsc += p.lsc;
        self.smooth += p.smooth;
        self.ssc += p.ssc;
        self.ce_x += p.ce_x.unwrap_or(0.0);
        self.ce_t += p.ce_t.unwrap_or(0.0);
        self.ppa += p.ppa.unwrap_or(0.0);
        self.total += p.total;
    }

    fn finish(&self, epoch: usize, heads: bool, ppa: bool) -> EpochLog {
        let n = self.n.max(1) as f64;
        EpochLog {
            epoch,
            pce: self.pce / n,
            lsc: self.lsc / n,
            smooth: self.smooth / n,
            ssc: self.ssc / n,
            ce_rgb: heads.then_some(self.ce_x / n),
            ce_thermal: heads.then_some(self.ce_t / n),
            ppa: ppa.then_some(self.ppa / n),
            total: self.total / n,
        }
    }
}

fn check_samples(samples: &[TrainSample], size: usize) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::data("<dataset>", "no training samples"));
    }
    for s in samples {
        let dims = [
            (s.rgb.height(), s.rgb.width()),
            (s.thermal.height(), s.thermal.width()),
            (s.scribble.height(), s.scribble.width()),
            (s.expanded_rgb.map().height(), s.expanded_rgb.map().width()),
            (s.expanded_thermal.map().height(), s.expanded_thermal.map().width()),
        ];
        if dims.iter().any(|&d| d != (size, size)) {
            return Err(Error::data(&s.stem, format!("sample is not {size}x{size}: {dims:?}")));
        }
        if s.rgb.channels() != 3 || s.thermal.channels() != 3 {
            return Err(Error::data(&s.stem, "images must have 3 channels"));
        }
    }
    Ok(())
}

/// Gradients of one mini-batch, summed in item order and averaged.
fn batch_step(net: &Network<f32>, items: &[TrainSample], cfg: &TrainConfig, dense: bool) -> Result<(Vec<Tensor<f32>>, Vec<LossParts>)> {
    let results: Vec<Result<SampleGrad>> = if cfg.deterministic {
        items.iter().map(|s| sample_step(net, s, cfg, dense)).collect()
    } else {
        crate::par::map_slice(items, |s| sample_step(net, s, cfg, dense))
    };
    let mut acc: Option<Vec<Tensor<f32>>> = None;
    let mut parts = Vec::with_capacity(items.len());
    for r in results {
        let sg = r?;
        match acc.as_mut() {
            None => acc = Some(sg.grads),
            Some(a) => {
                for (x, g) in a.iter_mut().zip(&sg.grads) {
                    x.add_assign(g);
                }
            }
        }
        parts.push(sg.parts);
    }
    let mut acc = acc.expect("non-empty batch");
    let inv = 1.0 / items.len() as f32;
    for t in &mut acc {
        for v in t.data_mut() {
            *v *= inv;
        }
    }
    Ok((acc, parts))
}

/// Train from scratch. `on_epoch` sees each epoch's log line as it completes.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainOutcome> {
    let net = Network::<f32>::new(cfg.network.clone())?;
    train_from(net, samples, cfg, on_epoch)
}

/// Continue training an existing network.
pub fn train_from(
    mut net: Network<f32>,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    validate(cfg)?;
    check_samples(samples, cfg.network.input_size)?;
    let mut adam = Adam::new(net.params().tensors());
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.network.seed ^ (0x5EED_0000 + epoch as u64));
        order.shuffle(&mut rng);
        let dense = epoch >= cfg.warmup_epochs && cfg.supervision != Supervision::Baseline;
        let lr = scheduled_lr(cfg.lr, epoch, cfg.lr_drop_epoch);
        let mut running = Running::default();
        for chunk in order.chunks(cfg.batch) {
            let items: Vec<TrainSample> = chunk
                .iter()
                .map(|&i| {
                    if cfg.augment {
                        let flip = rng.gen_bool(0.5);
                        let turns = rng.gen_range(0..4);
                        samples[i].transformed(flip, turns)
                    } else {
                        Ok(samples[i].clone())
                    }
                })
                .collect::<Result<_>>()?;
            let (grads, parts) = batch_step(&net, &items, cfg, dense)?;
            adam.step(net.params_mut().tensors_mut(), &grads, lr)?;
            for p in &parts {
                running.add(p);
            }
        }
        let heads = dense && cfg.supervision == Supervision::Predicted;
        let entry = running.finish(epoch + 1, heads, dense);
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome {
        network: net,
        log,
        steps: adam.steps(),
    })
}

fn validate(cfg: &TrainConfig) -> Result<()> {
    cfg.network.validate()?;
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    if !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config(format!("learning rate {} must be positive", cfg.lr)));
    }
    let s = scaled_size(cfg.network.input_size, cfg.scribble.ssc.scale);
    if s == 0 || !s.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "scaled input {s} (image size {} times {}) must be a positive multiple of 16",
            cfg.network.input_size, cfg.scribble.ssc.scale
        )));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BACKGROUND, FOREGROUND};

    fn tiny_cfg(supervision: Supervision) -> TrainConfig {
        TrainConfig {
            network: NetworkConfig {
                input_size: 32,
                stage_channels: [4, 4, 8, 8],
                seed: 11,
            },
            lr: 1e-3,
            batch: 2,
            epochs: 2,
            lr_drop_epoch: 0,
            supervision,
            ..TrainConfig::default()
        }
    }

    fn sample(k: usize) -> TrainSample {
        let n = 32;
        let inside = |y: usize, x: usize| (8 + k..24).contains(&y) && (8..24 - k).contains(&x);
        let mut rgb = vec![0.2; 3 * n * n];
        let mut th = vec![0.1; 3 * n * n];
        let mut gt = vec![0.0; n * n];
        let mut sc = ScribbleMap::unknown(n, n);
        for y in 0..n {
            for x in 0..n {
                let i = y * n + x;
                if inside(y, x) {
                    rgb[i] = 0.9;
                    th[i] = 0.8;
                    th[n * n + i] = 0.8;
                    th[2 * n * n + i] = 0.8;
                    gt[i] = 1.0;
                }
            }
        }
        for x in 12..20 - k {
            sc.set(16 * n + x, FOREGROUND);
            sc.set(2 * n + x, BACKGROUND);
        }
        let e = ExpandedLabel::from_binary_map(SaliencyMap::new(n, n, gt).unwrap()).unwrap();
        TrainSample {
            stem: format!("s{k}"),
            rgb: ImageGrid::new(n, n, 3, rgb).unwrap(),
            thermal: ImageGrid::new(n, n, 3, th).unwrap(),
            scribble: sc,
            expanded_rgb: e.clone(),
            expanded_thermal: e,
        }
    }

    #[test]
    fn fixed_seed_is_bit_exact() {
        let data: Vec<TrainSample> = (0..3).map(sample).collect();
        let cfg = tiny_cfg(Supervision::Predicted);
        let a = train(&data, &cfg, |_| {}).unwrap();
        let b = train(&data, &cfg, |_| {}).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.network.params(), b.network.params());
        assert_eq!(a.steps, 4);
        let line = a.log[0].to_string();
        assert_eq!(line.split('\t').count(), 9);
    }

    #[test]
    fn baseline_logs_only_scribble_terms() {
        let data: Vec<TrainSample> = (0..2).map(sample).collect();
        let out = train(&data, &tiny_cfg(Supervision::Baseline), |_| {}).unwrap();
        for e in &out.log {
            assert!(e.ce_rgb.is_none() && e.ce_thermal.is_none() && e.ppa.is_none());
            assert!((e.total - (e.pce + e.lsc + e.smooth + e.ssc)).abs() < 1e-9);
            assert!(e.to_string().ends_with(&format!("-\t-\t-\t{:.6}", e.total)));
        }
        // heads never see a gradient without dense supervision
        let init = Network::<f32>::new(tiny_cfg(Supervision::Baseline).network).unwrap();
        let idx = init.params().index_of("predict_rgb.out.weight").unwrap();
        assert_eq!(init.params().tensors()[idx], out.network.params().tensors()[idx]);
    }

    #[test]
    fn warmup_delays_dense_terms() {
        let data: Vec<TrainSample> = (0..2).map(sample).collect();
        let cfg = TrainConfig {
            warmup_epochs: 1,
            ..tiny_cfg(Supervision::Predicted)
        };
        let out = train(&data, &cfg, |_| {}).unwrap();
        assert!(out.log[0].ppa.is_none());
        assert!(out.log[1].ppa.is_some() && out.log[1].ce_rgb.is_some());
    }

    #[test]
    fn pseudo_target_is_detached() {
        // Head gradients from the full step must equal those from the head losses alone.
        let s = sample(1);
        let cfg = tiny_cfg(Supervision::Predicted);
        let net = Network::<f32>::new(cfg.network.clone()).unwrap();
        let full = sample_step(&net, &s, &cfg, true).unwrap();

        let mut tape = Tape::new();
        let p = net.bind(&mut tape);
        let xr = tape.constant(Tensor::from_planes(3, 32, 32, s.rgb.data()).unwrap());
        let xt = tape.constant(Tensor::from_planes(3, 32, 32, s.thermal.data()).unwrap());
        let out = net.forward(&mut tape, &p, xr, xt, true).unwrap();
        let px = to_map(tape.value(out.pred_rgb.unwrap())).unwrap();
        let pt = to_map(tape.value(out.pred_thermal.unwrap())).unwrap();
        let gx = l_ce_expanded(&px, &s.expanded_rgb).unwrap().grad;
        let gt = l_ce_expanded(&pt, &s.expanded_thermal).unwrap().grad;
        let mut g = tape
            .backward(&[
                (out.pred_rgb.unwrap(), seed([1, 1, 32, 32], &gx).unwrap()),
                (out.pred_thermal.unwrap(), seed([1, 1, 32, 32], &gt).unwrap()),
            ])
            .unwrap();
        for (i, name) in net.params().names().iter().enumerate() {
            if name.starts_with("predict_") {
                let only_heads = g.take(p.vars()[i]).unwrap();
                assert_eq!(only_heads, full.grads[i], "{name}");
            }
        }
    }

    #[test]
    fn rejects_bad_sizes() {
        let data = vec![sample(0)];
        let cfg = TrainConfig {
            network: NetworkConfig {
                input_size: 64,
                ..tiny_cfg(Supervision::Baseline).network
            },
            ..tiny_cfg(Supervision::Baseline)
        };
        assert!(matches!(train(&data, &cfg, |_| {}), Err(Error::Data { .. })));
        assert!(train(&[], &tiny_cfg(Supervision::Baseline), |_| {}).is_err());
    }
}
