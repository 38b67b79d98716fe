//! A small convolutional network with hand-written backpropagation.
//!
//! Activations are stored channel-major (`[channel][sample][row][col]`) so a
//! 3x3 convolution over a whole batch is one im2col followed by one GEMM whose
//! output is already in that layout.

mod conv;
mod network;
mod optim;

pub use conv::Conv2d;
pub use network::{ArchSpec, FeatureExtractor, Grads, LinearHead, Network};
pub use optim::{cosine_lr, Sgd};

use crate::image::Image;

/// Batch activations, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Act {
    pub c: usize,
    pub n: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl Act {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Self {
            c,
            n,
            h,
            w,
            data: vec![0.0; c * n * h * w],
        }
    }

    /// Packs same-shaped images into a batch, applying per-channel
    /// `(x - mean) / std` normalization.
    pub fn from_images(images: &[&Image], mean: &[f32], std: &[f32]) -> Self {
        assert!(!images.is_empty(), "empty batch");
        let [c, h, w] = images[0].shape();
        assert!(mean.len() == c && std.len() == c, "normalization stats");
        let n = images.len();
        let mut act = Act::zeros(c, n, h, w);
        let hw = h * w;
        for (ni, img) in images.iter().enumerate() {
            assert_eq!(img.shape(), [c, h, w], "mixed image shapes in batch");
            for ci in 0..c {
                let (m, s) = (mean[ci], std[ci]);
                let dst = &mut act.data[(ci * n + ni) * hw..][..hw];
                for (d, &v) in dst.iter_mut().zip(img.plane(ci)) {
                    *d = (v - m) / s;
                }
            }
        }
        act
    }

    pub fn same_shape(&self, other: &Act) -> bool {
        (self.c, self.n, self.h, self.w) == (other.c, other.n, other.h, other.w)
    }
}

/// `C = A * B + beta * C` over strided row/column views.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    beta: f32,
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    assert!(k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len(), "gemm A bounds");
    assert!(k == 0 || (k - 1) * rsb + (n - 1) * csb < b.len(), "gemm B bounds");
    assert!((m - 1) * rsc + (n - 1) * csc < c.len(), "gemm C bounds");
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is uniquely borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_matches_naive() {
        let (m, k, n) = (3, 4, 5);
        let a: Vec<f32> = (0..m * k).map(|v| v as f32 * 0.5 - 2.0).collect();
        let b: Vec<f32> = (0..k * n).map(|v| (v % 7) as f32 - 3.0).collect();
        let mut c = vec![1.0; m * n];
        gemm(m, k, n, &a, (k, 1), &b, (n, 1), 0.0, &mut c, (n, 1));
        for i in 0..m {
            for j in 0..n {
                let want: f32 = (0..k).map(|t| a[i * k + t] * b[t * n + j]).sum();
                assert!((c[i * n + j] - want).abs() < 1e-4);
            }
        }
        // Transposed view of A: (k x m) read as its transpose.
        let mut ct = vec![0.0; k * n];
        gemm(k, m, n, &a, (1, k), &c, (n, 1), 0.0, &mut ct, (n, 1));
        for i in 0..k {
            for j in 0..n {
                let want: f32 = (0..m).map(|t| a[t * k + i] * c[t * n + j]).sum();
                assert!((ct[i * n + j] - want).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn batch_packing_is_channel_major() {
        let a = Image::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let b = Image::new(2, 1, 2, vec![5.0, 6.0, 7.0, 8.0]);
        let act = Act::from_images(&[&a, &b], &[0.0, 1.0], &[1.0, 2.0]);
        assert_eq!(act.data, vec![1.0, 2.0, 5.0, 6.0, 1.0, 1.5, 3.0, 3.5]);
    }
}
