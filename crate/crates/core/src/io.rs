//! PNG reading and writing for images, scribbles, saliency maps and labels.

use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageEncoder};

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, SaliencyMap, ScribbleMap, BACKGROUND, FOREGROUND, UNKNOWN};
use crate::superpixel::SuperpixelMap;

fn decode(path: &Path) -> Result<DynamicImage> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn planar_rgb(img: &image::RgbImage) -> Result<ImageGrid> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px[c] as f64 / 255.0;
        }
    }
    ImageGrid::new(h, w, 3, data)
}

/// 8-bit RGB image as a 3-channel grid in [0,1].
pub fn read_rgb(path: &Path) -> Result<ImageGrid> {
    planar_rgb(&decode(path)?.to_rgb8())
}

/// Thermal image; grayscale input is replicated to three channels.
pub fn read_thermal(path: &Path) -> Result<ImageGrid> {
    let img = decode(path)?;
    if img.color().has_color() {
        return planar_rgb(&img.to_rgb8());
    }
    let g = img.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    let gray: Vec<f64> = g.pixels().map(|p| p[0] as f64 / 255.0).collect();
    ImageGrid::gray_to_rgb(&gray, h, w)
}

/// Scribble PNG: 0 unknown, 128 background, 255 foreground.
pub fn read_scribble(path: &Path) -> Result<ScribbleMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma8(g) = img else {
        return Err(Error::Format(format!(
            "{}: scribble must be 8-bit grayscale",
            path.display()
        )));
    };
    let (w, h) = (g.width() as usize, g.height() as usize);
    let mut labels = Vec::with_capacity(w * h);
    for (i, p) in g.pixels().enumerate() {
        labels.push(match p[0] {
            0 => UNKNOWN,
            128 => BACKGROUND,
            255 => FOREGROUND,
            v => {
                return Err(Error::Format(format!(
                    "invalid scribble value {v} at ({}, {})",
                    i / w,
                    i % w
                )))
            }
        });
    }
    ScribbleMap::new(h, w, labels)
}

/// Grayscale map scaled to [0,1].
pub fn read_saliency(path: &Path) -> Result<SaliencyMap> {
    let g = decode(path)?.to_luma8();
    let (w, h) = (g.width() as usize, g.height() as usize);
    SaliencyMap::new(h, w, g.pixels().map(|p| p[0] as f64 / 255.0).collect())
}

/// Ground truth mask, binarized at 0.5.
pub fn read_mask(path: &Path) -> Result<SaliencyMap> {
    Ok(read_saliency(path)?.binarize(0.5))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode_png(w: usize, h: usize, color: image::ExtendedColorType, buf: &[u8]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    image::codecs::png::PngEncoder::new(&mut out)
        .write_image(buf, w as u32, h as u32, color)
        .map_err(|e| Error::Format(format!("png encode: {e}")))?;
    Ok(out)
}

/// Write `bytes` to `path` through a temp file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

pub fn write_saliency(path: &Path, map: &SaliencyMap) -> Result<()> {
    let buf: Vec<u8> = map.values().iter().map(|&v| to_u8(v)).collect();
    write_atomic(path, &encode_png(map.width(), map.height(), image::ExtendedColorType::L8, &buf)?)
}

pub fn write_rgb(path: &Path, img: &ImageGrid) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::dim(format!("expected 3 channels, got {}", img.channels())));
    }
    let n = img.pixels();
    let mut buf = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..3 {
            buf.push(to_u8(img.data()[c * n + i]));
        }
    }
    write_atomic(path, &encode_png(img.width(), img.height(), image::ExtendedColorType::Rgb8, &buf)?)
}

/// First channel as an 8-bit grayscale PNG.
pub fn write_gray(path: &Path, img: &ImageGrid) -> Result<()> {
    let buf: Vec<u8> = img.channel(0).iter().map(|&v| to_u8(v)).collect();
    write_atomic(path, &encode_png(img.width(), img.height(), image::ExtendedColorType::L8, &buf)?)
}

pub fn write_scribble(path: &Path, s: &ScribbleMap) -> Result<()> {
    let buf: Vec<u8> = s
        .labels()
        .iter()
        .map(|&l| match l {
            FOREGROUND => 255,
            BACKGROUND => 128,
            _ => 0,
        })
        .collect();
    write_atomic(path, &encode_png(s.width(), s.height(), image::ExtendedColorType::L8, &buf)?)
}

/// Superpixel ids as 16-bit grayscale.
pub fn write_labels16(path: &Path, seg: &SuperpixelMap) -> Result<()> {
    if seg.count() > u16::MAX as usize + 1 {
        return Err(Error::Range(format!("{} labels do not fit 16 bits", seg.count())));
    }
    let mut buf = Vec::with_capacity(2 * seg.labels().len());
    for &l in seg.labels() {
        buf.extend_from_slice(&(l as u16).to_ne_bytes());
    }
    write_atomic(path, &encode_png(seg.width(), seg.height(), image::ExtendedColorType::L16, &buf)?)
}

/// Color-coded superpixel visualization.
pub fn write_label_colors(path: &Path, seg: &SuperpixelMap) -> Result<()> {
    let mut buf = Vec::with_capacity(3 * seg.labels().len());
    for &l in seg.labels() {
        let hsh = (l as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        buf.extend_from_slice(&[(hsh >> 16) as u8, (hsh >> 32) as u8, (hsh >> 48) as u8]);
    }
    write_atomic(path, &encode_png(seg.width(), seg.height(), image::ExtendedColorType::Rgb8, &buf)?)
}

/// Read back a 16-bit label PNG.
pub fn read_labels16(path: &Path) -> Result<SuperpixelMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma16(g) = img else {
        return Err(Error::Format(format!("{}: labels must be 16-bit grayscale", path.display())));
    };
    let (w, h) = (g.width() as usize, g.height() as usize);
    SuperpixelMap::from_labels(h, w, g.pixels().map(|p| p[0] as u32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scribble_roundtrip_and_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.png");
        let s = ScribbleMap::new(2, 3, vec![0, 1, 2, 2, 1, 0]).unwrap();
        write_scribble(&p, &s).unwrap();
        assert_eq!(read_scribble(&p).unwrap(), s);

        let bad = dir.path().join("bad.png");
        let img = image::GrayImage::from_raw(2, 1, vec![0, 77]).unwrap();
        img.save(&bad).unwrap();
        let err = read_scribble(&bad).unwrap_err().to_string();
        assert!(err.contains("invalid scribble value 77"), "{err}");
    }

    #[test]
    fn saliency_quantizes_by_rounding() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.png");
        let m = SaliencyMap::new(1, 3, vec![0.0, 0.5, 1.0]).unwrap();
        write_saliency(&p, &m).unwrap();
        let back = read_saliency(&p).unwrap();
        assert_eq!(back.values(), &[0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn thermal_gray_is_replicated() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.png");
        let g = ImageGrid::gray_to_rgb(&[0.2, 0.4, 0.6, 0.8], 2, 2).unwrap();
        write_gray(&p, &g).unwrap();
        let t = read_thermal(&p).unwrap();
        assert_eq!(t.channels(), 3);
        assert_eq!(t.channel(0), t.channel(2));
        let rgb = read_rgb(&p).unwrap();
        assert_eq!(rgb, t);
    }

    #[test]
    fn labels16_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("l.png");
        let seg = SuperpixelMap::from_labels(2, 2, vec![0, 1, 300, 2]);
        assert!(seg.is_err());
        let labels: Vec<u32> = (0..600).collect();
        let seg = SuperpixelMap::from_labels(20, 30, labels).unwrap();
        write_labels16(&p, &seg).unwrap();
        assert_eq!(read_labels16(&p).unwrap(), seg);
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(read_rgb(Path::new("/nonexistent/x.png")), Err(Error::Io { .. })));
    }
}
