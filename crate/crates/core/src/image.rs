//! Planar float images and the geometric ops used for augmentation.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// A `channels x height x width` image with values in `[0, 1]`, stored planar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), channels * height * width, "image buffer size");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    /// SHA-256 over the shape and the little-endian pixel bytes.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        self.hash_into(&mut h);
        h.finalize().into()
    }

    pub fn hash_into(&self, h: &mut Sha256) {
        for d in self.shape() {
            h.update((d as u64).to_le_bytes());
        }
        for v in &self.data {
            h.update(v.to_le_bytes());
        }
    }

    pub fn flip_horizontal(&self) -> Image {
        let mut out = self.clone();
        for c in 0..self.channels {
            for y in 0..self.height {
                let row = &mut out.data[(c * self.height + y) * self.width..][..self.width];
                row.reverse();
            }
        }
        out
    }

    /// Sub-rectangle copy. Panics if the box leaves the image.
    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Image {
        assert!(top + height <= self.height && left + width <= self.width, "crop box");
        let mut data = Vec::with_capacity(self.channels * height * width);
        for c in 0..self.channels {
            for y in top..top + height {
                let start = (c * self.height + y) * self.width + left;
                data.extend_from_slice(&self.data[start..start + width]);
            }
        }
        Image::new(self.channels, height, width, data)
    }

    /// Zero-pads by `pad` on every side and crops back to the original size
    /// at offset `(dy, dx)` into the padded canvas.
    pub fn pad_crop(&self, pad: usize, dy: usize, dx: usize) -> Image {
        assert!(dy <= 2 * pad && dx <= 2 * pad, "pad-crop offset");
        let mut out = Image::filled(self.channels, self.height, self.width, 0.0);
        for c in 0..self.channels {
            for y in 0..self.height {
                let sy = y as isize + dy as isize - pad as isize;
                if sy < 0 || sy >= self.height as isize {
                    continue;
                }
                for x in 0..self.width {
                    let sx = x as isize + dx as isize - pad as isize;
                    if sx < 0 || sx >= self.width as isize {
                        continue;
                    }
                    out.set(c, y, x, self.get(c, sy as usize, sx as usize));
                }
            }
        }
        out
    }

    /// Bilinear resampling with half-pixel centers and edge clamping, without
    /// antialiasing.
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Image {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        let ys = axis_taps(self.height, out_h);
        let xs = axis_taps(self.width, out_w);
        let mut data = Vec::with_capacity(self.channels * out_h * out_w);
        for c in 0..self.channels {
            let plane = self.plane(c);
            for &(y0, y1, ly) in &ys {
                let r0 = &plane[y0 * self.width..][..self.width];
                let r1 = &plane[y1 * self.width..][..self.width];
                for &(x0, x1, lx) in &xs {
                    let top = r0[x0] + (r0[x1] - r0[x0]) * lx;
                    let bottom = r1[x0] + (r1[x1] - r1[x0]) * lx;
                    data.push(top + (bottom - top) * ly);
                }
            }
        }
        Image::new(self.channels, out_h, out_w, data)
    }
}

fn axis_taps(in_len: usize, out_len: usize) -> Vec<(usize, usize, f32)> {
    let scale = in_len as f32 / out_len as f32;
    (0..out_len)
        .map(|o| {
            let src = ((o as f32 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src as usize).min(in_len - 1);
            let i1 = if i0 + 1 < in_len { i0 + 1 } else { i0 };
            (i0, i1, src - i0 as f32)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Image {
        let data = (0..2 * 4 * 5).map(|v| v as f32 / 40.0).collect();
        Image::new(2, 4, 5, data)
    }

    #[test]
    fn flip_twice_is_identity() {
        let img = ramp();
        assert_eq!(img.flip_horizontal().flip_horizontal(), img);
        assert_eq!(img.flip_horizontal().get(1, 2, 0), img.get(1, 2, 4));
    }

    #[test]
    fn crop_and_pad() {
        let img = ramp();
        let c = img.crop(1, 2, 2, 3);
        assert_eq!(c.shape(), [2, 2, 3]);
        assert_eq!(c.get(1, 0, 0), img.get(1, 1, 2));
        assert_eq!(img.pad_crop(2, 2, 2), img);
        let shifted = img.pad_crop(1, 0, 0);
        assert_eq!(shifted.get(0, 0, 0), 0.0);
        assert_eq!(shifted.get(0, 1, 1), img.get(0, 0, 0));
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp();
        assert_eq!(img.resize_bilinear(4, 5), img);
    }

    #[test]
    fn downsample_by_two_averages_pairs() {
        // Half-pixel centers put each output sample midway between two inputs.
        let img = Image::new(1, 1, 4, vec![0.0, 1.0, 2.0, 3.0]);
        let out = img.resize_bilinear(1, 2);
        assert_eq!(out.data(), &[0.5, 2.5]);
    }
}
