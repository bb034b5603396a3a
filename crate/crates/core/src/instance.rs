//! Image-text training pairs and region geometry.

use crate::error::{Error, Result};

pub const CLS_ID: u32 = 0;
pub const SEP_ID: u32 = 1;
pub const MASK_ID: u32 = 2;
/// First id of the real vocabulary; everything below is a special token.
pub const FIRST_WORD_ID: u32 = 3;

/// One detected region with its pre-extracted ROI feature.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionInput {
    pub feat: Vec<f32>,
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f32; 4],
    pub img_w: u32,
    pub img_h: u32,
    pub cls_probs: Vec<f32>,
}

impl RegionInput {
    /// Index of the most confident detector class (first one on ties).
    pub fn class_id(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.cls_probs.iter().enumerate() {
            if p > self.cls_probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn location(&self) -> Result<[f64; 7]> {
        let b = self.bbox.map(f64::from);
        location_vector(b, self.img_w, self.img_h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingInstance {
    pub id: String,
    pub tokens: Vec<u32>,
    pub regions: Vec<RegionInput>,
}

impl TrainingInstance {
    pub fn num_tokens(&self) -> usize {
        self.tokens.len()
    }

    pub fn num_regions(&self) -> usize {
        self.regions.len()
    }
}

/// `[x1/W, y1/H, x2/W, y2/H, w, h, w*h]` with `w`, `h` the normalized box size.
pub fn location_vector(bbox: [f64; 4], img_w: u32, img_h: u32) -> Result<[f64; 7]> {
    let [x1, y1, x2, y2] = bbox;
    if img_w == 0 || img_h == 0 {
        return Err(Error::InvalidBox(format!("image size {img_w}x{img_h}")));
    }
    let (iw, ih) = (f64::from(img_w), f64::from(img_h));
    let ok = bbox.iter().all(|v| v.is_finite())
        && 0.0 <= x1
        && x1 < x2
        && x2 <= iw
        && 0.0 <= y1
        && y1 < y2
        && y2 <= ih;
    if !ok {
        return Err(Error::InvalidBox(format!(
            "{bbox:?} not a nonempty box inside {img_w}x{img_h}"
        )));
    }
    let w = (x2 - x1) / iw;
    let h = (y2 - y1) / ih;
    Ok([x1 / iw, y1 / ih, x2 / iw, y2 / ih, w, h, w * h])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn full_image_box() {
        assert_eq!(
            location_vector([0.0, 0.0, 640.0, 480.0], 640, 480).unwrap(),
            [0.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0]
        );
    }

    #[test]
    fn quarter_box() {
        assert_eq!(
            location_vector([0.0, 0.0, 320.0, 240.0], 640, 480).unwrap(),
            [0.0, 0.0, 0.5, 0.5, 0.5, 0.5, 0.25]
        );
    }

    #[test]
    fn one_pixel_wide_box() {
        let v = location_vector([10.0, 20.0, 11.0, 70.0], 100, 100).unwrap();
        assert!((v[4] - 0.01).abs() < 1e-15);
        assert_eq!(v[6], v[4] * v[5]);
        assert!((v[6] - 0.01 * 0.5).abs() < 1e-15);
    }

    #[test]
    fn invalid_boxes() {
        for b in [
            [10.0, 0.0, 10.0, 5.0],
            [0.0, 0.0, 101.0, 5.0],
            [-1.0, 0.0, 5.0, 5.0],
            [0.0, 6.0, 5.0, 5.0],
            [0.0, 0.0, f64::NAN, 5.0],
        ] {
            assert!(matches!(location_vector(b, 100, 100), Err(Error::InvalidBox(_))));
        }
        assert!(location_vector([0.0, 0.0, 1.0, 1.0], 0, 100).is_err());
    }

    #[test]
    fn class_id_is_argmax() {
        let r = RegionInput {
            feat: vec![0.0],
            bbox: [0.0, 0.0, 1.0, 1.0],
            img_w: 1,
            img_h: 1,
            cls_probs: vec![0.2, 0.5, 0.3],
        };
        assert_eq!(r.class_id(), 1);
    }

    proptest! {
        #[test]
        fn in_bounds_boxes_map_into_unit_cube(
            w in 1u32..2000, h in 1u32..2000,
            fx in 0.0f64..1.0, fy in 0.0f64..1.0, fw in 0.001f64..1.0, fh in 0.001f64..1.0,
        ) {
            let (iw, ih) = (f64::from(w), f64::from(h));
            let x1 = fx * iw * 0.999;
            let y1 = fy * ih * 0.999;
            let x2 = x1 + (iw - x1) * fw;
            let y2 = y1 + (ih - y1) * fh;
            prop_assume!(x1 < x2 && y1 < y2);
            let v = location_vector([x1, y1, x2, y2], w, h).unwrap();
            prop_assert!(v.iter().all(|&c| (0.0..=1.0).contains(&c)));
            prop_assert_eq!(v[6], v[4] * v[5]);
        }
    }
}
