//! Frame-level preprocessing on `[channels, height, width]` float images.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Guards the contrast normalization of constant channels.
pub const GCN_EPS: f64 = 1e-8;

/// Axis-aligned box in pixels; `x`, `y` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    /// Intersect with a `width` x `height` image.
    pub fn clamp_to(self, width: u32, height: u32) -> BBox {
        let x0 = self.x.clamp(0, i64::from(width));
        let y0 = self.y.clamp(0, i64::from(height));
        let x1 = (self.x + i64::from(self.w)).clamp(0, i64::from(width));
        let y1 = (self.y + i64::from(self.h)).clamp(0, i64::from(height));
        BBox {
            x: x0,
            y: y0,
            w: (x1 - x0) as u32,
            h: (y1 - y0) as u32,
        }
    }

    /// The square of side `max(w, h)` obtained by growing the shorter side
    /// symmetrically (any odd pixel goes to the right/bottom).
    pub fn squared(self) -> BBox {
        let side = self.w.max(self.h);
        BBox {
            x: self.x - i64::from((side - self.w) / 2),
            y: self.y - i64::from((side - self.h) / 2),
            w: side,
            h: side,
        }
    }
}

pub fn rgb_to_tensor(img: &RgbImage) -> Tensor<f64> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let mut data = vec![0.0; 3 * h * w];
    for (x, y, px) in img.enumerate_pixels() {
        for c in 0..3 {
            data[(c * h + y as usize) * w + x as usize] = f64::from(px[c]);
        }
    }
    Tensor::from_vec(&[3, h, w], data).expect("image extents are positive")
}

fn chw(img: &Tensor<f64>) -> Result<(usize, usize, usize)> {
    match *img.shape() {
        [c, h, w] => Ok((c, h, w)),
        ref s => Err(Error::InvalidShape {
            shape: s.to_vec(),
            reason: "images are [channels, height, width]".into(),
        }),
    }
}

/// Crop `bbox` grown to a square; pixels outside the frame are zero.
pub fn crop_square(frame: &Tensor<f64>, bbox: BBox) -> Result<Tensor<f64>> {
    if bbox.w == 0 || bbox.h == 0 {
        return Err(Error::InvalidBox {
            x: bbox.x,
            y: bbox.y,
            w: bbox.w,
            h: bbox.h,
        });
    }
    let (c, h, w) = chw(frame)?;
    let sq = bbox.squared();
    let side = sq.w as usize;
    let src = frame.data();
    let mut out = vec![0.0; c * side * side];
    for ch in 0..c {
        for r in 0..side {
            let sy = sq.y + r as i64;
            if sy < 0 || sy >= h as i64 {
                continue;
            }
            for col in 0..side {
                let sx = sq.x + col as i64;
                if sx < 0 || sx >= w as i64 {
                    continue;
                }
                out[(ch * side + r) * side + col] = src[(ch * h + sy as usize) * w + sx as usize];
            }
        }
    }
    Tensor::from_vec(&[c, side, side], out)
}

/// Source coordinate and blend weight along one axis, pixel centres aligned
/// (not corners).
fn sample_axis(dst: usize, src_len: usize, dst_len: usize) -> (usize, usize, f64) {
    let scale = src_len as f64 / dst_len as f64;
    let s = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
    let i0 = (s.floor() as usize).min(src_len - 1);
    let i1 = (i0 + 1).min(src_len - 1);
    (i0, i1, s - i0 as f64)
}

/// Bilinear resize to `target` x `target`.
pub fn resize_bilinear(img: &Tensor<f64>, target: usize) -> Result<Tensor<f64>> {
    let (c, h, w) = chw(img)?;
    if target == 0 {
        return Err(Error::InvalidInput("resize target must be positive".into()));
    }
    let cols: Vec<_> = (0..target).map(|x| sample_axis(x, w, target)).collect();
    let src = img.data();
    let mut out = Vec::with_capacity(c * target * target);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for y in 0..target {
            let (y0, y1, fy) = sample_axis(y, h, target);
            for &(x0, x1, fx) in &cols {
                let (a, b) = (plane[y0 * w + x0], plane[y0 * w + x1]);
                let (p, q) = (plane[y1 * w + x0], plane[y1 * w + x1]);
                let top = a + fx * (b - a);
                let bottom = p + fx * (q - p);
                out.push(top + fy * (bottom - top));
            }
        }
    }
    Tensor::from_vec(&[c, target, target], out)
}

/// Global contrast normalization per channel (axis 0) over every other axis:
/// subtract the mean, divide by `max(stddev, GCN_EPS)`.
pub fn gcn(x: &Tensor<f64>) -> Tensor<f64> {
    let channels = x.shape()[0];
    let block = x.len() / channels;
    let mut out = x.clone();
    for chunk in out.data_mut().chunks_mut(block) {
        let n = chunk.len() as f64;
        let mean = chunk.iter().sum::<f64>() / n;
        let var = chunk.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let denom = var.sqrt().max(GCN_EPS);
        for v in chunk.iter_mut() {
            *v = (*v - mean) / denom;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::RngState;

    fn ramp(c: usize, h: usize, w: usize) -> Tensor<f64> {
        Tensor::from_vec(&[c, h, w], (0..c * h * w).map(|v| v as f64).collect()).unwrap()
    }

    #[test]
    fn square_box_is_unchanged() {
        let img = ramp(3, 300, 300);
        let bbox = BBox { x: 100, y: 100, w: 100, h: 100 };
        let crop = crop_square(&img, bbox).unwrap();
        assert_eq!(crop.shape(), &[3, 100, 100]);
        assert_eq!(crop.get(&[1, 0, 0]).unwrap(), img.get(&[1, 100, 100]).unwrap());
        assert_eq!(crop.get(&[2, 99, 99]).unwrap(), img.get(&[2, 199, 199]).unwrap());
    }

    #[test]
    fn narrow_box_grows_symmetrically() {
        let img = ramp(3, 300, 300);
        let bbox = BBox { x: 120, y: 50, w: 60, h: 100 };
        assert_eq!(bbox.squared(), BBox { x: 100, y: 50, w: 100, h: 100 });
        let crop = crop_square(&img, bbox).unwrap();
        assert_eq!(crop.shape(), &[3, 100, 100]);
        assert_eq!(crop.get(&[0, 0, 20]).unwrap(), img.get(&[0, 50, 120]).unwrap());
        assert_eq!(crop.get(&[0, 0, 0]).unwrap(), img.get(&[0, 50, 100]).unwrap());
    }

    #[test]
    fn zero_area_box_rejected() {
        let img = ramp(3, 8, 8);
        assert!(matches!(
            crop_square(&img, BBox { x: 1, y: 1, w: 0, h: 4 }),
            Err(Error::InvalidBox { .. })
        ));
    }

    #[test]
    fn clamp_box() {
        let b = BBox { x: -5, y: 2, w: 10, h: 20 }.clamp_to(8, 8);
        assert_eq!(b, BBox { x: 0, y: 2, w: 5, h: 6 });
    }

    #[test]
    fn identity_and_constant_resize() {
        let mut rng = RngState::new(3);
        let img = Tensor::from_vec(&[3, 128, 128], (0..3 * 128 * 128).map(|_| rng.uniform(0.0, 255.0)).collect()).unwrap();
        assert_eq!(resize_bilinear(&img, 128).unwrap(), img);
        let flat = Tensor::new(&[3, 2, 2], 7.25).unwrap();
        let big = resize_bilinear(&flat, 128).unwrap();
        assert_eq!(big.shape(), &[3, 128, 128]);
        assert!(big.data().iter().all(|&v| v == 7.25));
    }

    #[test]
    fn gcn_cases() {
        let constant = Tensor::new(&[3, 5, 4, 4], 7.0).unwrap();
        assert!(gcn(&constant).data().iter().all(|&v| v == 0.0));
        let two = Tensor::from_vec(&[1, 4], vec![0.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(gcn(&two).data(), &[-1.0, 1.0, -1.0, 1.0]);
    }
}
