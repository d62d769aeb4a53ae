//! Seeded paired RGB/thermal scenes with ground truth and scribbles.

use std::fmt;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, SaliencyMap, ScribbleMap, BACKGROUND, FOREGROUND};

/// Smallest object area as a fraction of the canvas.
pub const MIN_OBJECT_FRACTION: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rectangle { y0: usize, x0: usize, y1: usize, x1: usize },
    /// Star-shaped polygon around a centre, radii per evenly spaced angle.
    Blob { cy: f64, cx: f64, radii: [f64; 8], phase: f64 },
}

impl Shape {
    fn contains(&self, y: usize, x: usize) -> bool {
        let (py, px) = (y as f64, x as f64);
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((py - cy) / ry, (px - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rectangle { y0, x0, y1, x1 } => (y0..y1).contains(&y) && (x0..x1).contains(&x),
            Shape::Blob { cy, cx, radii, phase } => {
                let (dy, dx) = (py - cy, px - cx);
                let r = (dy * dy + dx * dx).sqrt();
                let n = radii.len() as f64;
                let t = ((dy.atan2(dx) - phase).rem_euclid(std::f64::consts::TAU)) / std::f64::consts::TAU * n;
                let i = t.floor() as usize % radii.len();
                let f = t - t.floor();
                let edge = radii[i] * (1.0 - f) + radii[(i + 1) % radii.len()] * f;
                r <= edge
            }
        }
    }

    fn mask(&self, size: usize) -> Vec<bool> {
        (0..size * size).map(|i| self.contains(i / size, i % size)).collect()
    }
}

/// Everything needed to render one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub seed: u64,
    pub size: usize,
    pub rgb_degradation: f64,
    pub thermal_degradation: f64,
    pub texture: f64,
}

impl SceneSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        SceneSpec {
            seed,
            size,
            rgb_degradation: 0.0,
            thermal_degradation: 0.0,
            texture: 0.06,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.size < 16 {
            return Err(Error::param(format!("canvas size {} is below 16", self.size)));
        }
        for (name, v) in [
            ("rgb_degradation", self.rgb_degradation),
            ("thermal_degradation", self.thermal_degradation),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::param(format!("{name} {v} outside [0,1]")));
            }
        }
        if !(0.0..=0.2).contains(&self.texture) {
            return Err(Error::param(format!("texture amplitude {} outside [0,0.2]", self.texture)));
        }
        Ok(())
    }
}

/// Rendered scene: both modalities share one geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub rgb: ImageGrid,
    pub thermal: ImageGrid,
    pub gt: SaliencyMap,
    pub shapes: Vec<Shape>,
}

fn random_shape(rng: &mut ChaCha8Rng, size: usize) -> Shape {
    let s = size as f64;
    let min_area = (MIN_OBJECT_FRACTION * s * s).ceil() as usize;
    loop {
        let shape = match rng.gen_range(0..3) {
            0 => {
                let ry = rng.gen_range(0.12..0.26) * s;
                let rx = rng.gen_range(0.12..0.26) * s;
                Shape::Ellipse {
                    cy: rng.gen_range(ry + 1.0..s - ry - 2.0),
                    cx: rng.gen_range(rx + 1.0..s - rx - 2.0),
                    ry,
                    rx,
                }
            }
            1 => {
                let hh = (rng.gen_range(0.11..0.24) * s) as usize;
                let hw = (rng.gen_range(0.11..0.24) * s) as usize;
                let y0 = rng.gen_range(1..size - 2 * hh - 1);
                let x0 = rng.gen_range(1..size - 2 * hw - 1);
                Shape::Rectangle {
                    y0,
                    x0,
                    y1: y0 + 2 * hh,
                    x1: x0 + 2 * hw,
                }
            }
            _ => {
                let big = rng.gen_range(0.16..0.26) * s;
                let mut radii = [0.0; 8];
                for r in &mut radii {
                    *r = big * rng.gen_range(0.65..1.0);
                }
                Shape::Blob {
                    cy: rng.gen_range(big + 1.0..s - big - 2.0),
                    cx: rng.gen_range(big + 1.0..s - big - 2.0),
                    radii,
                    phase: rng.gen_range(0.0..std::f64::consts::TAU),
                }
            }
        };
        if shape.mask(size).iter().filter(|&&m| m).count() >= min_area {
            return shape;
        }
    }
}

/// Roughly Gaussian noise from a sum of uniforms.
fn noise(rng: &mut ChaCha8Rng, sigma: f64) -> f64 {
    let u: f64 = (0..4).map(|_| rng.gen::<f64>()).sum::<f64>() - 2.0;
    u * sigma * (3.0f64).sqrt()
}

struct Texture {
    waves: Vec<(f64, f64, f64)>,
    amp: f64,
}

impl Texture {
    fn new(rng: &mut ChaCha8Rng, amp: f64, size: usize) -> Self {
        let waves = (0..3)
            .map(|_| {
                let f = std::f64::consts::TAU / size as f64 * rng.gen_range(1.0..5.0);
                let a = rng.gen_range(0.0..std::f64::consts::TAU);
                (f * a.cos(), f * a.sin(), rng.gen_range(0.0..std::f64::consts::TAU))
            })
            .collect();
        Texture { waves, amp }
    }

    fn at(&self, y: usize, x: usize) -> f64 {
        let s: f64 = self
            .waves
            .iter()
            .map(|(fy, fx, ph)| (fy * y as f64 + fx * x as f64 + ph).sin())
            .sum();
        self.amp * s / self.waves.len() as f64
    }
}

fn contrasting(rng: &mut ChaCha8Rng, base: f64) -> f64 {
    let d = rng.gen_range(0.38..0.5);
    if base < 0.5 {
        base + d
    } else {
        base - d
    }
}

/// Render a scene from its spec.
pub fn generate_scene(spec: &SceneSpec) -> Result<Scene> {
    spec.validate()?;
    let n = spec.size;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = rng.gen_range(1..=3);
    let shapes: Vec<Shape> = (0..count).map(|_| random_shape(&mut rng, n)).collect();
    // owner[i] = index of the topmost object covering pixel i
    let mut owner: Vec<Option<usize>> = vec![None; n * n];
    for (k, s) in shapes.iter().enumerate() {
        for (o, m) in owner.iter_mut().zip(s.mask(n)) {
            if m {
                *o = Some(k);
            }
        }
    }

    let bg_rgb: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.12..0.88));
    let obj_rgb: Vec<[f64; 3]> = (0..count)
        .map(|_| std::array::from_fn(|c| contrasting(&mut rng, bg_rgb[c])))
        .collect();
    let bg_heat = rng.gen_range(0.08..0.3);
    let obj_heat: Vec<f64> = (0..count).map(|_| rng.gen_range(0.72..0.95)).collect();
    let tex_rgb = Texture::new(&mut rng, spec.texture, n);
    let tex_th = Texture::new(&mut rng, spec.texture * 0.5, n);

    let dr = spec.rgb_degradation;
    let dt = spec.thermal_degradation;
    let keep_r = 1.0 - 0.95 * dr;
    let keep_t = 1.0 - 0.95 * dt;
    let sig_r = 0.01 + 0.1 * dr;
    let sig_t = 0.01 + 0.1 * dt;
    let mut rgb = vec![0.0; 3 * n * n];
    let mut th = vec![0.0; n * n];
    for i in 0..n * n {
        let (y, x) = (i / n, i % n);
        let t = tex_rgb.at(y, x);
        for c in 0..3 {
            let clean = match owner[i] {
                Some(k) => bg_rgb[c] + keep_r * (obj_rgb[k][c] - bg_rgb[c]),
                None => bg_rgb[c],
            };
            rgb[c * n * n + i] = (clean + t + noise(&mut rng, sig_r)).clamp(0.0, 1.0);
        }
        let heat = match owner[i] {
            Some(k) => bg_heat + keep_t * (obj_heat[k] - bg_heat),
            None => bg_heat,
        };
        th[i] = (heat + tex_th.at(y, x) + noise(&mut rng, sig_t)).clamp(0.0, 1.0);
    }
    let gt: Vec<f64> = owner.iter().map(|o| if o.is_some() { 1.0 } else { 0.0 }).collect();
    Ok(Scene {
        rgb: ImageGrid::new(n, n, 3, rgb)?,
        thermal: ImageGrid::gray_to_rgb(&th, n, n)?,
        gt: SaliencyMap::new(n, n, gt)?,
        shapes,
    })
}

/// Pixels of `mask` whose whole (2r+1)² window is also in `mask` and inside the image.
fn erode(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    for y in r..h.saturating_sub(r) {
        for x in r..w.saturating_sub(r) {
            out[y * w + x] = (y - r..=y + r).all(|yy| (x - r..=x + r).all(|xx| mask[yy * w + xx]));
        }
    }
    out
}

fn components(mask: &[bool], h: usize, w: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; h * w];
    let mut out = Vec::new();
    for start in 0..h * w {
        if !mask[start] || seen[start] {
            continue;
        }
        let mut comp = vec![start];
        seen[start] = true;
        let mut head = 0;
        while head < comp.len() {
            let i = comp[head];
            head += 1;
            let (y, x) = (i / w, i % w);
            let nb = [
                (y > 0).then(|| i - w),
                (y + 1 < h).then(|| i + w),
                (x > 0).then(|| i - 1),
                (x + 1 < w).then(|| i + 1),
            ];
            for j in nb.into_iter().flatten() {
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    comp.push(j);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Persistent random walk over `allowed`, marking up to `length` distinct pixels.
fn walk(rng: &mut ChaCha8Rng, allowed: &[bool], cells: &[usize], h: usize, w: usize, length: usize, out: &mut Vec<usize>) {
    if cells.is_empty() || length == 0 {
        return;
    }
    let mut cur = cells[rng.gen_range(0..cells.len())];
    let mut angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let mut visited = std::collections::HashSet::new();
    visited.insert(cur);
    out.push(cur);
    let mut budget = 20 * length;
    while visited.len() < length && budget > 0 {
        budget -= 1;
        angle += noise(rng, 0.35);
        let (y, x) = ((cur / w) as f64, (cur % w) as f64);
        let ny = (y + angle.sin()).round();
        let nx = (x + angle.cos()).round();
        if ny < 0.0 || nx < 0.0 || ny >= h as f64 || nx >= w as f64 || !allowed[ny as usize * w + nx as usize] {
            angle += std::f64::consts::PI * rng.gen_range(0.5..1.5);
            continue;
        }
        cur = ny as usize * w + nx as usize;
        if visited.insert(cur) {
            out.push(cur);
        }
    }
}

/// Random-walk scribbles: foreground well inside each object, background away from all objects.
pub fn synth_scribble(gt: &SaliencyMap, seed: u64) -> Result<ScribbleMap> {
    let (h, w) = (gt.height(), gt.width());
    let fg: Vec<bool> = gt.values().iter().map(|&v| v >= 0.5).collect();
    let bg: Vec<bool> = fg.iter().map(|&f| !f).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5C21_BB1E);
    let mut out = ScribbleMap::unknown(h, w);

    for comp in components(&fg, h, w) {
        let mut inside = vec![false; h * w];
        for &i in &comp {
            inside[i] = true;
        }
        let length = ((0.15 * comp.len() as f64).round() as usize).max(1);
        let mut cells = Vec::new();
        let mut allowed = Vec::new();
        for r in [2, 1, 0] {
            allowed = erode(&inside, h, w, r);
            cells = (0..h * w).filter(|&i| allowed[i]).collect();
            if !cells.is_empty() {
                break;
            }
        }
        if cells.is_empty() {
            cells = comp.clone();
            allowed = inside;
        }
        let mut marked = Vec::new();
        walk(&mut rng, &allowed, &cells, h, w, length, &mut marked);
        for i in marked {
            out.set(i, FOREGROUND);
        }
    }

    let far = erode(&bg, h, w, 2);
    let cells: Vec<usize> = (0..h * w).filter(|&i| far[i]).collect();
    let length = ((0.04 * cells.len() as f64).round() as usize).max(1);
    let mut marked = Vec::new();
    walk(&mut rng, &far, &cells, h, w, length, &mut marked);
    for i in marked {
        out.set(i, BACKGROUND);
    }
    Ok(out)
}

/// Which modality a dataset degrades.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Clean,
    DegradedRgb,
    DegradedThermal,
    Mixed,
}

impl Profile {
    pub fn name(self) -> &'static str {
        match self {
            Profile::Clean => "clean",
            Profile::DegradedRgb => "degraded-rgb",
            Profile::DegradedThermal => "degraded-thermal",
            Profile::Mixed => "mixed",
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Profile::Clean),
            "degraded-rgb" => Ok(Profile::DegradedRgb),
            "degraded-thermal" => Ok(Profile::DegradedThermal),
            "mixed" => Ok(Profile::Mixed),
            _ => Err(Error::Config(format!(
                "unknown profile {s:?} (clean, degraded-rgb, degraded-thermal, mixed)"
            ))),
        }
    }
}

/// Per-stem seed derived from the dataset seed.
pub fn stem_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

pub fn stem_name(index: usize) -> String {
    format!("s{index:04}")
}

/// A generated sample with its manifest flag.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub stem: String,
    pub flag: &'static str,
    pub scene: Scene,
    pub scribble: ScribbleMap,
}

/// Spec and flag for sample `index` of a dataset.
pub fn sample_spec(seed: u64, index: usize, size: usize, profile: Profile) -> (SceneSpec, &'static str) {
    let s = stem_seed(seed, index);
    let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xF1A6);
    let strong = rng.gen_range(0.8..=1.0);
    let mild = rng.gen_range(0.0..0.1);
    let mut spec = SceneSpec::new(s, size);
    let degrade_rgb = match profile {
        Profile::Clean => None,
        Profile::DegradedRgb => Some(true),
        Profile::DegradedThermal => Some(false),
        Profile::Mixed => Some(rng.gen_bool(0.5)),
    };
    let flag = match degrade_rgb {
        None => "clean",
        Some(true) => {
            spec.rgb_degradation = strong;
            spec.thermal_degradation = mild;
            "rgb-degraded"
        }
        Some(false) => {
            spec.thermal_degradation = strong;
            spec.rgb_degradation = mild;
            "thermal-degraded"
        }
    };
    (spec, flag)
}

/// Generate sample `index` of a dataset in memory.
pub fn generate_sample(seed: u64, index: usize, size: usize, profile: Profile) -> Result<SyntheticSample> {
    let (spec, flag) = sample_spec(seed, index, size, profile);
    let scene = generate_scene(&spec)?;
    let scribble = synth_scribble(&scene.gt, spec.seed)?;
    Ok(SyntheticSample {
        stem: stem_name(index),
        flag,
        scene,
        scribble,
    })
}

/// Stems and flags of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl fmt::Display for Manifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (stem, flag) in &self.entries {
            writeln!(f, "{stem}\t{flag}")?;
        }
        Ok(())
    }
}

pub const MANIFEST_FILE: &str = "manifest.txt";

/// Write `n` samples as `rgb/`, `thermal/`, `scribble/`, `gt/` PNG trees plus a manifest.
pub fn generate_dataset(n: usize, out_dir: &Path, profile: Profile, seed: u64, size: usize) -> Result<Manifest> {
    if n == 0 {
        return Err(Error::param("dataset size must be at least 1"));
    }
    let written = crate::par::map_range(n, |i| -> Result<(String, String)> {
        let s = generate_sample(seed, i, size, profile)?;
        let file = format!("{}.png", s.stem);
        crate::io::write_rgb(&out_dir.join("rgb").join(&file), &s.scene.rgb)?;
        crate::io::write_gray(&out_dir.join("thermal").join(&file), &s.scene.thermal)?;
        crate::io::write_scribble(&out_dir.join("scribble").join(&file), &s.scribble)?;
        crate::io::write_saliency(&out_dir.join("gt").join(&file), &s.scene.gt)?;
        Ok((s.stem, s.flag.to_string()))
    });
    let manifest = Manifest {
        entries: written.into_iter().collect::<Result<_>>()?,
    };
    crate::io::write_atomic(&out_dir.join(MANIFEST_FILE), manifest.to_string().as_bytes())?;
    Ok(manifest)
}
