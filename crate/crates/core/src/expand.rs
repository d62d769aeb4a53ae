//! Foreground scribble expansion: every superpixel touched by a foreground
//! stroke becomes foreground in the expanded label.

use crate::error::Result;
use crate::grid::{check_same_dims, SaliencyMap, ScribbleMap, FOREGROUND};
use crate::superpixel::SuperpixelMap;

/// Binary label that is a union of whole superpixels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpandedLabel(SaliencyMap);

impl ExpandedLabel {
    /// Wrap a map whose values are all exactly 0 or 1.
    pub fn from_binary_map(map: SaliencyMap) -> Result<Self> {
        if map.values().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(crate::error::Error::Range(
                "expanded label must be binary".into(),
            ));
        }
        Ok(Self(map))
    }

    pub fn map(&self) -> &SaliencyMap {
        &self.0
    }

    pub fn into_map(self) -> SaliencyMap {
        self.0
    }

    pub fn ones(&self) -> usize {
        self.0.values().iter().filter(|&&v| v == 1.0).count()
    }
}

/// `1` where the scribble marks foreground, `0` elsewhere.
pub fn extract_foreground(scribble: &ScribbleMap) -> SaliencyMap {
    let v = scribble
        .labels()
        .iter()
        .map(|&l| if l == FOREGROUND { 1.0 } else { 0.0 })
        .collect();
    SaliencyMap::from_raw(scribble.height(), scribble.width(), v)
}

/// Union of the masks of every superpixel that contains at least one
/// foreground scribble pixel. Background strokes play no part.
pub fn expand_scribble(seg: &SuperpixelMap, scribble: &ScribbleMap) -> Result<ExpandedLabel> {
    check_same_dims(seg, scribble, "expand_scribble")?;
    let mut hit = vec![false; seg.count()];
    for (&l, &s) in seg.labels().iter().zip(scribble.labels()) {
        if s == FOREGROUND {
            hit[l as usize] = true;
        }
    }
    let v = seg
        .labels()
        .iter()
        .map(|&l| if hit[l as usize] { 1.0 } else { 0.0 })
        .collect();
    Ok(ExpandedLabel(SaliencyMap::from_raw(
        seg.height(),
        seg.width(),
        v,
    )))
}

/// Intersection-over-union of two maps binarized at 0.5.
pub fn iou(a: &SaliencyMap, b: &SaliencyMap) -> f64 {
    let (mut inter, mut union) = (0usize, 0usize);
    for (&x, &y) in a.values().iter().zip(b.values()) {
        let (x, y) = (x >= 0.5, y >= 0.5);
        inter += (x && y) as usize;
        union += (x || y) as usize;
    }
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{BACKGROUND, UNKNOWN};

    fn blocks_4x4() -> SuperpixelMap {
        let labels = (0..16)
            .map(|i| {
                let (y, x) = (i / 4, i % 4);
                ((y / 2) * 2 + x / 2) as u32
            })
            .collect();
        SuperpixelMap::from_labels(4, 4, labels).unwrap()
    }

    #[test]
    fn foreground_only() {
        let mut s = ScribbleMap::unknown(1, 3);
        assert!(extract_foreground(&s).values().iter().all(|&v| v == 0.0));
        s.set(0, FOREGROUND);
        s.set(1, BACKGROUND);
        assert_eq!(extract_foreground(&s).values(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_corner_blocks() {
        let seg = blocks_4x4();
        let mut s = ScribbleMap::unknown(4, 4);
        s.set(0, FOREGROUND);
        s.set(15, FOREGROUND);
        s.set(3, BACKGROUND);
        let e = expand_scribble(&seg, &s).unwrap();
        assert_eq!(e.ones(), 8);
        for i in 0..16 {
            let (y, x) = (i / 4, i % 4);
            let expect = (y < 2 && x < 2) || (y >= 2 && x >= 2);
            assert_eq!(e.map().values()[i] == 1.0, expect);
        }
    }

    #[test]
    fn empty_and_single_segment() {
        let seg = blocks_4x4();
        let s = ScribbleMap::unknown(4, 4);
        assert_eq!(expand_scribble(&seg, &s).unwrap().ones(), 0);

        let one = SuperpixelMap::from_labels(4, 4, vec![0; 16]).unwrap();
        let mut s = ScribbleMap::new(4, 4, vec![UNKNOWN; 16]).unwrap();
        s.set(9, FOREGROUND);
        assert_eq!(expand_scribble(&one, &s).unwrap().ones(), 16);
    }

    #[test]
    fn dimension_mismatch() {
        let seg = blocks_4x4();
        assert!(expand_scribble(&seg, &ScribbleMap::unknown(3, 4)).is_err());
    }
}
