//! Flat `key=value` run configuration with `#` comments.

use std::fmt;
use std::path::Path;

use crate::diffnet::{NetworkConfig, Supervision, TrainConfig};
use crate::error::{Error, Result};
use crate::loss::{LscParams, ScribbleParams, SscParams};
use crate::refine::ParParams;
use crate::superpixel::SlicParams;

/// Every tunable of a run. `Display` prints a parseable echo.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub image_size: usize,
    pub stage_channels: [usize; 4],
    pub superpixels: usize,
    pub slic_compactness: f64,
    pub slic_iters: usize,
    pub par_iters: usize,
    pub par_sigma_color: f64,
    pub par_sigma_pos: f64,
    pub par_dilations: Vec<usize>,
    pub lsc_window: usize,
    pub lsc_sigma_xy: f64,
    pub lsc_sigma_rgb: f64,
    pub smooth_alpha: f64,
    pub ssc_scale: f64,
    pub ssc_lambda: f64,
    pub ssim_window: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub lr_drop_epoch: usize,
    pub seed: u64,
    pub warmup_epochs: usize,
    pub deterministic: bool,
    pub augment: bool,
    pub supervision: Supervision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            image_size: 64,
            stage_channels: [16, 32, 64, 128],
            superpixels: 40,
            slic_compactness: 10.0,
            slic_iters: 10,
            par_iters: 10,
            par_sigma_color: 0.1,
            par_sigma_pos: 6.0,
            par_dilations: vec![1, 2, 4, 8],
            lsc_window: 5,
            lsc_sigma_xy: 3.0,
            lsc_sigma_rgb: 0.1,
            smooth_alpha: 10.0,
            ssc_scale: 0.5,
            ssc_lambda: 0.85,
            ssim_window: 11,
            lr: 5e-5,
            batch: 8,
            epochs: 60,
            lr_drop_epoch: 40,
            seed: 7,
            warmup_epochs: 0,
            deterministic: true,
            augment: true,
            supervision: Supervision::Predicted,
        }
    }
}

fn bad(key: &str, value: &str, why: &str) -> Error {
    Error::Config(format!("{key}={value}: {why}"))
}

fn parse_usize(key: &str, v: &str, lo: usize, hi: usize) -> Result<usize> {
    let n: usize = v.parse().map_err(|_| bad(key, v, "expected a non-negative integer"))?;
    if n < lo || n > hi {
        return Err(bad(key, v, &format!("must be in [{lo}, {hi}]")));
    }
    Ok(n)
}

fn parse_f64(key: &str, v: &str, lo: f64, hi: f64, open_lo: bool) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| bad(key, v, "expected a number"))?;
    let ok = x.is_finite() && (if open_lo { x > lo } else { x >= lo }) && x <= hi;
    if !ok {
        let l = if open_lo { "(" } else { "[" };
        return Err(bad(key, v, &format!("must be in {l}{lo}, {hi}]")));
    }
    Ok(x)
}

fn parse_list(key: &str, v: &str, lo: usize, hi: usize) -> Result<Vec<usize>> {
    v.split(',').map(|p| parse_usize(key, p.trim(), lo, hi)).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, v, "expected true or false")),
    }
}

fn odd(key: &str, v: &str, n: usize) -> Result<usize> {
    if n.is_multiple_of(2) {
        return Err(bad(key, v, "must be odd"));
    }
    Ok(n)
}

impl RunConfig {
    /// Apply one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "image_size" => {
                let n = parse_usize(key, v, 16, 4096)?;
                if n % 16 != 0 {
                    return Err(bad(key, v, "must be a multiple of 16"));
                }
                self.image_size = n;
            }
            "stage_channels" => {
                let l = parse_list(key, v, 2, 1024)?;
                self.stage_channels = l
                    .try_into()
                    .map_err(|_| bad(key, v, "needs exactly four stage widths"))?;
            }
            "superpixels" => self.superpixels = parse_usize(key, v, 1, 1 << 20)?,
            "slic_compactness" => self.slic_compactness = parse_f64(key, v, 0.0, 1000.0, true)?,
            "slic_iters" => self.slic_iters = parse_usize(key, v, 1, 1000)?,
            "par_iters" => self.par_iters = parse_usize(key, v, 0, 1000)?,
            "par_sigma_color" => self.par_sigma_color = parse_f64(key, v, 0.0, 100.0, true)?,
            "par_sigma_pos" => self.par_sigma_pos = parse_f64(key, v, 0.0, 1000.0, true)?,
            "par_dilations" => self.par_dilations = parse_list(key, v, 1, 256)?,
            "lsc_window" => self.lsc_window = odd(key, v, parse_usize(key, v, 1, 31)?)?,
            "lsc_sigma_xy" => self.lsc_sigma_xy = parse_f64(key, v, 0.0, 1000.0, true)?,
            "lsc_sigma_rgb" => self.lsc_sigma_rgb = parse_f64(key, v, 0.0, 100.0, true)?,
            "smooth_alpha" => self.smooth_alpha = parse_f64(key, v, 0.0, 1000.0, false)?,
            "ssc_scale" => self.ssc_scale = parse_f64(key, v, 0.0, 1.0, true)?,
            "ssc_lambda" => self.ssc_lambda = parse_f64(key, v, 0.0, 1.0, false)?,
            "ssim_window" => self.ssim_window = odd(key, v, parse_usize(key, v, 1, 63)?)?,
            "lr" => self.lr = parse_f64(key, v, 0.0, 10.0, true)?,
            "batch" => self.batch = parse_usize(key, v, 1, 4096)?,
            "epochs" => self.epochs = parse_usize(key, v, 0, 1_000_000)?,
            "lr_drop_epoch" => self.lr_drop_epoch = parse_usize(key, v, 0, 1_000_000)?,
            "seed" => self.seed = v.parse().map_err(|_| bad(key, v, "expected an unsigned integer"))?,
            "warmup_epochs" => self.warmup_epochs = parse_usize(key, v, 0, 1_000_000)?,
            "deterministic" => self.deterministic = parse_bool(key, v)?,
            "augment" => self.augment = parse_bool(key, v)?,
            "supervision" => self.supervision = v.parse()?,
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` pair given as one string.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k, v)
    }

    /// Apply every setting in config-file text on top of `self`.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            self.set_pair(line)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
        }
        self.check()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = RunConfig::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Cross-key constraints.
    pub fn check(&self) -> Result<()> {
        let scaled = (self.image_size as f64 * self.ssc_scale).round() as usize;
        if scaled == 0 || !scaled.is_multiple_of(16) {
            return Err(Error::Config(format!(
                "image_size {} times ssc_scale {} gives {scaled}, which is not a multiple of 16",
                self.image_size, self.ssc_scale
            )));
        }
        if self.superpixels > self.image_size * self.image_size {
            return Err(Error::Config(format!(
                "superpixels {} exceeds the {} pixels of an image",
                self.superpixels,
                self.image_size * self.image_size
            )));
        }
        Ok(())
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let list = |l: &[usize]| l.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        [
            ("image_size", self.image_size.to_string()),
            ("stage_channels", list(&self.stage_channels)),
            ("superpixels", self.superpixels.to_string()),
            ("slic_compactness", self.slic_compactness.to_string()),
            ("slic_iters", self.slic_iters.to_string()),
            ("par_iters", self.par_iters.to_string()),
            ("par_sigma_color", self.par_sigma_color.to_string()),
            ("par_sigma_pos", self.par_sigma_pos.to_string()),
            ("par_dilations", list(&self.par_dilations)),
            ("lsc_window", self.lsc_window.to_string()),
            ("lsc_sigma_xy", self.lsc_sigma_xy.to_string()),
            ("lsc_sigma_rgb", self.lsc_sigma_rgb.to_string()),
            ("smooth_alpha", self.smooth_alpha.to_string()),
            ("ssc_scale", self.ssc_scale.to_string()),
            ("ssc_lambda", self.ssc_lambda.to_string()),
            ("ssim_window", self.ssim_window.to_string()),
            ("lr", self.lr.to_string()),
            ("batch", self.batch.to_string()),
            ("epochs", self.epochs.to_string()),
            ("lr_drop_epoch", self.lr_drop_epoch.to_string()),
            ("seed", self.seed.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("deterministic", self.deterministic.to_string()),
            ("augment", self.augment.to_string()),
            ("supervision", self.supervision.name().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig {
            input_size: self.image_size,
            stage_channels: self.stage_channels,
            seed: self.seed,
        }
    }

    pub fn slic(&self) -> SlicParams {
        SlicParams {
            superpixels: self.superpixels,
            compactness: self.slic_compactness,
            iters: self.slic_iters,
        }
    }

    pub fn par(&self) -> ParParams {
        ParParams {
            sigma_color: self.par_sigma_color,
            sigma_pos: self.par_sigma_pos,
            dilations: self.par_dilations.clone(),
            iters: self.par_iters,
        }
    }

    pub fn scribble(&self) -> ScribbleParams {
        ScribbleParams {
            lsc: LscParams {
                window: self.lsc_window,
                sigma_xy: self.lsc_sigma_xy,
                sigma_rgb: self.lsc_sigma_rgb,
            },
            smooth_alpha: self.smooth_alpha,
            ssc: SscParams {
                scale: self.ssc_scale,
                ssim_window: self.ssim_window,
                lambda: self.ssc_lambda,
            },
        }
    }

    pub fn train(&self) -> TrainConfig {
        TrainConfig {
            network: self.network(),
            lr: self.lr,
            batch: self.batch,
            epochs: self.epochs,
            lr_drop_epoch: self.lr_drop_epoch,
            warmup_epochs: self.warmup_epochs,
            deterministic: self.deterministic,
            augment: self.augment,
            supervision: self.supervision,
            scribble: self.scribble(),
            par: self.par(),
        }
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.pairs() {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_roundtrips() {
        let mut c = RunConfig::default();
        c.set("lr", "0.0003").unwrap();
        c.set("par_dilations", "1, 3").unwrap();
        c.set("supervision", "baseline").unwrap();
        let back = RunConfig::parse(&c.to_string()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::parse(&RunConfig::default().to_string()).unwrap(), RunConfig::default());
    }

    #[test]
    fn comments_and_blank_lines() {
        let c = RunConfig::parse("# run\n\nepochs=3 # short\nseed = 11\n").unwrap();
        assert_eq!(c.epochs, 3);
        assert_eq!(c.seed, 11);
    }

    #[test]
    fn rejects_unknown_and_out_of_range() {
        for text in [
            "colour=1",
            "lr=-1",
            "lsc_window=4",
            "image_size=40",
            "stage_channels=8,16",
            "deterministic=maybe",
            "batch=0",
            "ssc_scale=0.3",
            "noequals",
        ] {
            let e = RunConfig::parse(text).unwrap_err();
            assert!(matches!(e, Error::Config(_)), "{text}: {e}");
            assert!(e.is_usage());
        }
    }

    #[test]
    fn defaults_match_documented_values() {
        let c = RunConfig::default();
        assert_eq!(c.superpixels, 40);
        assert_eq!(c.lr, 5e-5);
        assert_eq!(c.image_size, 64);
        assert_eq!(c.lr_drop_epoch, 40);
    }
}
