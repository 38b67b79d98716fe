use rand::Rng as _;

use super::TrainError;
use crate::image::Image;
use crate::rng::Rng;

/// Random-resized-crop ranges: area as a fraction of the source, aspect as
/// width over height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropParams {
    pub area: (f64, f64),
    pub aspect: (f64, f64),
}

impl CropParams {
    pub fn full() -> Self {
        Self {
            area: (1.0, 1.0),
            aspect: (1.0, 1.0),
        }
    }
}

fn uniform(rng: &mut Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Crops a random rectangle and rescales it bilinearly to `r x r`.
///
/// Up to ten draws look for a box that fits; otherwise the whole image is
/// used. The rng is advanced the same way regardless of the ranges.
pub fn varres_transform(
    x: &Image,
    r: usize,
    params: &CropParams,
    rng: &mut Rng,
) -> Result<Image, TrainError> {
    let (h, w) = (x.height(), x.width());
    if r == 0 || r > h || r > w {
        return Err(TrainError::InvalidResolution {
            target: r,
            source_side: h.min(w),
        });
    }
    let area = (h * w) as f64;
    let (log_lo, log_hi) = (params.aspect.0.ln(), params.aspect.1.ln());
    for _ in 0..10 {
        let target = area * uniform(rng, params.area);
        let ratio = uniform(rng, (log_lo, log_hi)).exp();
        let cw = (target * ratio).sqrt().round() as usize;
        let ch = (target / ratio).sqrt().round() as usize;
        if cw == 0 || ch == 0 || cw > w || ch > h {
            continue;
        }
        let top = rng.random_range(0..=h - ch);
        let left = rng.random_range(0..=w - cw);
        return Ok(x.crop(top, left, ch, cw).resize_bilinear(r, r));
    }
    Ok(x.resize_bilinear(r, r))
}

/// Random horizontal flip and a zero-padded random shift of up to `pad` pixels.
pub fn standard_augment(x: &Image, pad: usize, rng: &mut Rng) -> Image {
    let flipped = if rng.random_bool(0.5) {
        x.flip_horizontal()
    } else {
        x.clone()
    };
    if pad == 0 {
        return flipped;
    }
    let dy = rng.random_range(0..=2 * pad);
    let dx = rng.random_range(0..=2 * pad);
    flipped.pad_crop(pad, dy, dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    fn test_image() -> Image {
        let mut rng = make_rng(11);
        let data = (0..3 * 32 * 32).map(|_| rng.random::<f32>()).collect();
        Image::new(3, 32, 32, data)
    }

    /// Direct per-pixel bilinear sampling, written independently of the
    /// tap tables used by `Image::resize_bilinear`.
    fn reference_bilinear(img: &Image, out: usize) -> Vec<f32> {
        let (h, w) = (img.height() as f64, img.width() as f64);
        let mut v = Vec::new();
        for c in 0..img.channels() {
            for oy in 0..out {
                for ox in 0..out {
                    let sy = ((oy as f64 + 0.5) * h / out as f64 - 0.5).clamp(0.0, h - 1.0);
                    let sx = ((ox as f64 + 0.5) * w / out as f64 - 0.5).clamp(0.0, w - 1.0);
                    let (y0, x0) = (sy.floor(), sx.floor());
                    let (y1, x1) = ((y0 + 1.0).min(h - 1.0), (x0 + 1.0).min(w - 1.0));
                    let (fy, fx) = (sy - y0, sx - x0);
                    let p = |y: f64, x: f64| img.get(c, y as usize, x as usize) as f64;
                    let val = p(y0, x0) * (1.0 - fy) * (1.0 - fx)
                        + p(y0, x1) * (1.0 - fy) * fx
                        + p(y1, x0) * fy * (1.0 - fx)
                        + p(y1, x1) * fy * fx;
                    v.push(val as f32);
                }
            }
        }
        v
    }

    #[test]
    fn full_crop_matches_reference_resampler() {
        let img = test_image();
        let out = varres_transform(&img, 24, &CropParams::full(), &mut make_rng(0)).unwrap();
        assert_eq!(out.shape(), [3, 24, 24]);
        let want = reference_bilinear(&img, 24);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((a - b).abs() < 1e-4, "{a} vs {b}");
        }
    }

    #[test]
    fn same_size_full_crop_is_identity() {
        let img = test_image();
        let out = varres_transform(&img, 32, &CropParams::full(), &mut make_rng(0)).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn deterministic_and_sized() {
        let img = test_image();
        let p = CropParams {
            area: (0.35, 1.0),
            aspect: (0.75, 4.0 / 3.0),
        };
        let a = varres_transform(&img, 24, &p, &mut make_rng(5)).unwrap();
        let b = varres_transform(&img, 24, &p, &mut make_rng(5)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.shape(), [3, 24, 24]);
        let c = varres_transform(&img, 24, &p, &mut make_rng(6)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn larger_target_rejected() {
        let img = test_image();
        assert!(matches!(
            varres_transform(&img, 33, &CropParams::full(), &mut make_rng(0)),
            Err(TrainError::InvalidResolution { target: 33, .. })
        ));
    }

    #[test]
    fn standard_augment_keeps_shape() {
        let img = test_image();
        let mut rng = make_rng(1);
        for _ in 0..10 {
            assert_eq!(standard_augment(&img, 4, &mut rng).shape(), [3, 32, 32]);
        }
        let plain = standard_augment(&img, 0, &mut rng);
        assert!(plain == img || plain == img.flip_horizontal());
    }
}
