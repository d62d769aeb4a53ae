//! End-to-end steps shared by the CLI: expansion caching, pseudo labels,
//! training data assembly and batch inference.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::dataset::{Dataset, Sample};
use crate::diffnet::{Checkpoint, Network, TrainSample};
use crate::error::{Error, Result};
use crate::expand::{expand_scribble, ExpandedLabel};
use crate::grid::{resize_bilinear, SaliencyMap};
use crate::refine::aggregate_pseudo_label;
use crate::superpixel::{slic_segment, SlicParams};

pub const EXPANDED_RGB_DIR: &str = "expanded_rgb";
pub const EXPANDED_THERMAL_DIR: &str = "expanded_thermal";
pub const PSEUDO_DIR: &str = "pseudo";

/// Expanded labels of both modalities for one stem.
#[derive(Debug, Clone, PartialEq)]
pub struct Expansion {
    pub rgb: ExpandedLabel,
    pub thermal: ExpandedLabel,
}

/// SLIC plus scribble expansion on each modality.
pub fn expand_sample(sample: &Sample, slic: &SlicParams) -> Result<Expansion> {
    let run = |img| -> Result<ExpandedLabel> {
        let seg = slic_segment(img, slic.superpixels, slic.compactness, slic.iters)?;
        expand_scribble(&seg, &sample.scribble)
    };
    Ok(Expansion {
        rgb: run(&sample.rgb)?,
        thermal: run(&sample.thermal)?,
    })
}

/// How many stems were expanded versus read back from the cache.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExpansionStats {
    pub computed: usize,
    pub reused: usize,
}

fn cache_paths(root: &Path, stem: &str) -> (PathBuf, PathBuf) {
    let file = format!("{stem}.png");
    (
        root.join(EXPANDED_RGB_DIR).join(&file),
        root.join(EXPANDED_THERMAL_DIR).join(&file),
    )
}

fn read_cached(path: &Path, size: usize) -> Option<ExpandedLabel> {
    let m = crate::io::read_saliency(path).ok()?;
    if m.height() != size || m.width() != size {
        return None;
    }
    ExpandedLabel::from_binary_map(m).ok()
}

/// Expanded labels for every stem, cached under the dataset root.
/// Existing cache files are reused unless `force` is set.
pub fn precompute_expansions(ds: &Dataset, cfg: &RunConfig, force: bool) -> Result<(Vec<Expansion>, ExpansionStats)> {
    let slic = cfg.slic();
    let size = cfg.image_size;
    let results = crate::par::map_slice(&ds.samples, |s| -> Result<(Expansion, bool)> {
        let (pr, pt) = cache_paths(ds.root(), &s.stem);
        if !force {
            if let (Some(rgb), Some(thermal)) = (read_cached(&pr, size), read_cached(&pt, size)) {
                return Ok((Expansion { rgb, thermal }, false));
            }
        }
        let e = expand_sample(s, &slic).map_err(|e| Error::data(&s.stem, e.to_string()))?;
        crate::io::write_saliency(&pr, e.rgb.map())?;
        crate::io::write_saliency(&pt, e.thermal.map())?;
        Ok((e, true))
    });
    let mut stats = ExpansionStats::default();
    let mut out = Vec::with_capacity(results.len());
    for r in results {
        let (e, computed) = r?;
        if computed {
            stats.computed += 1;
        } else {
            stats.reused += 1;
        }
        out.push(e);
    }
    Ok((out, stats))
}

pub fn training_samples(ds: &Dataset, expansions: &[Expansion]) -> Vec<TrainSample> {
    ds.samples
        .iter()
        .zip(expansions)
        .map(|(s, e)| TrainSample {
            stem: s.stem.clone(),
            rgb: s.rgb.clone(),
            thermal: s.thermal.clone(),
            scribble: s.scribble.clone(),
            expanded_rgb: e.rgb.clone(),
            expanded_thermal: e.thermal.clone(),
        })
        .collect()
}

/// Aggregated pseudo label per stem. With a network the prediction heads
/// supply the two inputs, otherwise the expanded labels do.
pub fn pseudo_labels(
    ds: &Dataset,
    expansions: &[Expansion],
    cfg: &RunConfig,
    net: Option<&Network<f32>>,
) -> Result<Vec<SaliencyMap>> {
    let par = cfg.par();
    let idx: Vec<usize> = (0..ds.samples.len()).collect();
    crate::par::map_slice(&idx, |&i| -> Result<SaliencyMap> {
        let s = &ds.samples[i];
        let (a, b) = match net {
            Some(n) => n.predict_labels(&s.rgb, &s.thermal)?,
            None => (expansions[i].rgb.map().clone(), expansions[i].thermal.map().clone()),
        };
        aggregate_pseudo_label(&a, &b, &s.rgb, &par).map_err(|e| Error::data(&s.stem, e.to_string()))
    })
    .into_iter()
    .collect()
}

/// Checkpoint metadata as a run config (unknown keys are rejected).
pub fn checkpoint_config(ck: &Checkpoint) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    for (k, v) in &ck.config {
        cfg.set(k, v)
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
    }
    Ok(cfg)
}

pub fn load_network(path: &Path) -> Result<(RunConfig, Network<f32>)> {
    let ck = Checkpoint::load(path)?;
    let cfg = checkpoint_config(&ck)?;
    let net = Network::from_params(cfg.network(), ck.params)?;
    Ok((cfg, net))
}

/// Saliency for every stem, resized back to the size of its files.
pub fn infer_dataset(net: &Network<f32>, ds: &Dataset) -> Result<Vec<SaliencyMap>> {
    crate::par::map_slice(&ds.samples, |s| -> Result<SaliencyMap> {
        let r = net.infer(&s.rgb, &s.thermal).map_err(|e| Error::data(&s.stem, e.to_string()))?;
        let (h, w) = s.original;
        let g = resize_bilinear(&r.to_grid(), h, w)?;
        SaliencyMap::from_clamped(h, w, g.into_data())
    })
    .into_iter()
    .collect()
}

/// Write one map per stem as `<dir>/<stem>.png`.
pub fn write_maps(dir: &Path, ds: &Dataset, maps: &[SaliencyMap]) -> Result<()> {
    for (s, m) in ds.samples.iter().zip(maps) {
        crate::io::write_saliency(&dir.join(format!("{}.png", s.stem)), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::load_dataset;
    use crate::expand::iou;
    use crate::synth::{generate_dataset, Profile};

    #[test]
    fn cache_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(3, dir.path(), Profile::Clean, 2, 32).unwrap();
        let cfg = RunConfig {
            image_size: 32,
            ..RunConfig::default()
        };
        let ds = load_dataset(dir.path(), 32).unwrap();
        let (a, st) = precompute_expansions(&ds, &cfg, false).unwrap();
        assert_eq!(st, ExpansionStats { computed: 3, reused: 0 });
        let path = dir.path().join(EXPANDED_RGB_DIR).join("s0001.png");
        let before = std::fs::read(&path).unwrap();
        let modified = std::fs::metadata(&path).unwrap().modified().unwrap();
        let (b, st) = precompute_expansions(&ds, &cfg, false).unwrap();
        assert_eq!(st, ExpansionStats { computed: 0, reused: 3 });
        assert_eq!(a, b);
        assert_eq!(std::fs::read(&path).unwrap(), before);
        assert_eq!(std::fs::metadata(&path).unwrap().modified().unwrap(), modified);
        let (_, st) = precompute_expansions(&ds, &cfg, true).unwrap();
        assert_eq!(st.computed, 3);
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn clean_expansions_cover_objects() {
        let dir = tempfile::tempdir().unwrap();
        generate_dataset(20, dir.path(), Profile::Clean, 4, 64).unwrap();
        let cfg = RunConfig::default();
        let ds = load_dataset(dir.path(), 64).unwrap();
        let (ex, _) = precompute_expansions(&ds, &cfg, false).unwrap();
        let n = ds.len() as f64;
        let (mut r, mut t) = (0.0, 0.0);
        for (s, e) in ds.samples.iter().zip(&ex) {
            let gt = s.gt.as_ref().unwrap();
            r += iou(e.rgb.map(), gt) / n;
            t += iou(e.thermal.map(), gt) / n;
        }
        assert!(r >= 0.6 && t >= 0.6, "rgb {r} thermal {t}");
    }
}
