//! Dataset directory scanning and loading.
//!
//! Layout: `<root>/{rgb,thermal,scribble,gt}/<stem>.png`.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::grid::{resize_bilinear, resize_nearest_labels, ImageGrid, SaliencyMap, ScribbleMap};

pub const RGB_DIR: &str = "rgb";
pub const THERMAL_DIR: &str = "thermal";
pub const SCRIBBLE_DIR: &str = "scribble";
pub const GT_DIR: &str = "gt";

/// File paths of one stem.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StemFiles {
    pub stem: String,
    pub rgb: PathBuf,
    pub thermal: PathBuf,
    pub scribble: PathBuf,
    pub gt: Option<PathBuf>,
}

/// Stems found under a dataset root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub stems: Vec<StemFiles>,
}

fn stems_in(dir: &Path) -> Result<BTreeSet<String>> {
    if !dir.is_dir() {
        return Ok(BTreeSet::new());
    }
    Ok(crate::metrics::png_stems(dir)?.into_iter().map(|(s, _)| s).collect())
}

/// Find every stem and check that rgb, thermal and scribble files exist for it.
pub fn scan_dataset(root: &Path) -> Result<DatasetIndex> {
    if !root.is_dir() {
        return Err(Error::data("<dataset>", format!("{} is not a directory", root.display())));
    }
    let rgb = stems_in(&root.join(RGB_DIR))?;
    let thermal = stems_in(&root.join(THERMAL_DIR))?;
    let scribble = stems_in(&root.join(SCRIBBLE_DIR))?;
    let gt = stems_in(&root.join(GT_DIR))?;
    let all: BTreeSet<&String> = rgb.iter().chain(&thermal).chain(&scribble).collect();
    if all.is_empty() {
        return Err(Error::data("<dataset>", format!("no images under {}", root.display())));
    }
    let mut stems = Vec::with_capacity(all.len());
    for stem in all {
        for (set, what) in [(&rgb, "rgb"), (&thermal, "thermal"), (&scribble, "scribble")] {
            if !set.contains(stem) {
                return Err(Error::data(stem, format!("missing {what} file")));
            }
        }
        let file = format!("{stem}.png");
        stems.push(StemFiles {
            stem: stem.clone(),
            rgb: root.join(RGB_DIR).join(&file),
            thermal: root.join(THERMAL_DIR).join(&file),
            scribble: root.join(SCRIBBLE_DIR).join(&file),
            gt: gt.contains(stem).then(|| root.join(GT_DIR).join(&file)),
        });
    }
    Ok(DatasetIndex {
        root: root.to_path_buf(),
        stems,
    })
}

/// One stem resized to the working resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub stem: String,
    pub rgb: ImageGrid,
    pub thermal: ImageGrid,
    pub scribble: ScribbleMap,
    pub gt: Option<SaliencyMap>,
    /// Height and width of the files on disk.
    pub original: (usize, usize),
}

fn tag(stem: &str, e: Error) -> Error {
    match e {
        Error::Data { .. } => e,
        other => Error::data(stem, other.to_string()),
    }
}

/// Load, validate and resize one stem to `size`×`size`.
pub fn load_sample(files: &StemFiles, size: usize) -> Result<Sample> {
    let stem = &files.stem;
    let rgb = crate::io::read_rgb(&files.rgb).map_err(|e| tag(stem, e))?;
    let thermal = crate::io::read_thermal(&files.thermal).map_err(|e| tag(stem, e))?;
    let scribble = crate::io::read_scribble(&files.scribble).map_err(|e| tag(stem, e))?;
    let gt = match &files.gt {
        Some(p) => Some(crate::io::read_mask(p).map_err(|e| tag(stem, e))?),
        None => None,
    };
    let (h, w) = (rgb.height(), rgb.width());
    let mut sizes = vec![
        ("thermal", thermal.height(), thermal.width()),
        ("scribble", scribble.height(), scribble.width()),
    ];
    if let Some(g) = &gt {
        sizes.push(("gt", g.height(), g.width()));
    }
    for (what, hh, ww) in sizes {
        if (hh, ww) != (h, w) {
            return Err(Error::data(
                stem,
                format!("{what} is {hh}x{ww} but rgb is {h}x{w}"),
            ));
        }
    }
    let rgb = resize_bilinear(&rgb, size, size)?;
    let thermal = resize_bilinear(&thermal, size, size)?;
    let scribble = ScribbleMap::new(size, size, resize_nearest_labels(scribble.labels(), h, w, size, size))?;
    let gt = match gt {
        Some(g) => Some(SaliencyMap::new(size, size, resize_nearest_labels(g.values(), h, w, size, size))?),
        None => None,
    };
    Ok(Sample {
        stem: stem.clone(),
        rgb,
        thermal,
        scribble,
        gt,
        original: (h, w),
    })
}

/// Scanned and fully loaded dataset.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub index: DatasetIndex,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn root(&self) -> &Path {
        &self.index.root
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Scan `root` and load every stem at `size`×`size`.
pub fn load_dataset(root: &Path, size: usize) -> Result<Dataset> {
    let index = scan_dataset(root)?;
    let samples = crate::par::map_slice(&index.stems, |f| load_sample(f, size))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { index, samples })
}
