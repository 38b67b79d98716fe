use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{gemm, Act};
use crate::rng::Rng;

/// 3x3 convolution with unit padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `out_ch x (in_ch * 9)`, row-major.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv2d {
    /// He-normal weights scaled by `gain`, zero bias.
    pub fn init(in_ch: usize, out_ch: usize, stride: usize, gain: f32, rng: &mut Rng) -> Self {
        let fan_in = (in_ch * 9) as f32;
        let normal = Normal::new(0.0, gain * (2.0 / fan_in).sqrt()).expect("finite std");
        let weight = (0..out_ch * in_ch * 9).map(|_| normal.sample(rng)).collect();
        // Consume one draw so layer initializations stay aligned if bias init changes.
        let _: u32 = rng.random();
        Self {
            in_ch,
            out_ch,
            stride,
            weight,
            bias: vec![0.0; out_ch],
        }
    }

    pub fn out_size(&self, len: usize) -> usize {
        (len - 1) / self.stride + 1
    }

    fn k(&self) -> usize {
        self.in_ch * 9
    }

    /// Output plus the im2col buffer when `keep_cols` is set.
    pub fn forward(&self, x: &Act, keep_cols: bool) -> (Act, Option<Vec<f32>>) {
        assert_eq!(x.c, self.in_ch, "conv input channels");
        let (ho, wo) = (self.out_size(x.h), self.out_size(x.w));
        let m = x.n * ho * wo;
        let cols = im2col(x, self.stride, ho, wo);
        let mut out = Act::zeros(self.out_ch, x.n, ho, wo);
        for (o, row) in out.data.chunks_mut(m).enumerate() {
            row.fill(self.bias[o]);
        }
        gemm(
            self.out_ch,
            self.k(),
            m,
            &self.weight,
            (self.k(), 1),
            &cols,
            (m, 1),
            1.0,
            &mut out.data,
            (m, 1),
        );
        (out, keep_cols.then_some(cols))
    }

    /// Accumulates weight and bias gradients; returns the input gradient when
    /// `need_dx` is set.
    pub fn backward(
        &self,
        in_shape: (usize, usize, usize, usize),
        cols: &[f32],
        dout: &Act,
        dweight: &mut [f32],
        dbias: &mut [f32],
        need_dx: bool,
    ) -> Option<Act> {
        let m = dout.n * dout.h * dout.w;
        let k = self.k();
        for (o, row) in dout.data.chunks(m).enumerate() {
            dbias[o] += row.iter().sum::<f32>();
        }
        gemm(
            self.out_ch,
            m,
            k,
            &dout.data,
            (m, 1),
            cols,
            (1, m),
            1.0,
            dweight,
            (k, 1),
        );
        if !need_dx {
            return None;
        }
        let mut dcols = vec![0.0; k * m];
        gemm(
            k,
            self.out_ch,
            m,
            &self.weight,
            (1, k),
            &dout.data,
            (m, 1),
            0.0,
            &mut dcols,
            (m, 1),
        );
        let (c, n, h, w) = in_shape;
        Some(col2im(&dcols, c, n, h, w, self.stride, dout.h, dout.w))
    }
}

fn im2col(x: &Act, stride: usize, ho: usize, wo: usize) -> Vec<f32> {
    let m = x.n * ho * wo;
    let hw = x.h * x.w;
    let mut cols = vec![0.0f32; x.c * 9 * m];
    for ci in 0..x.c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((ci * 9) + ky * 3 + kx) * m..][..m];
                for ni in 0..x.n {
                    let plane = &x.data[(ci * x.n + ni) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= x.h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * x.w..][..x.w];
                        let dst = &mut row[(ni * ho + oy) * wo..][..wo];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < x.w as isize {
                                *d = src[ix as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcols: &[f32],
    c: usize,
    n: usize,
    h: usize,
    w: usize,
    stride: usize,
    ho: usize,
    wo: usize,
) -> Act {
    let m = n * ho * wo;
    let hw = h * w;
    let mut dx = Act::zeros(c, n, h, w);
    for ci in 0..c {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[((ci * 9) + ky * 3 + kx) * m..][..m];
                for ni in 0..n {
                    let plane = &mut dx.data[(ci * n + ni) * hw..][..hw];
                    for oy in 0..ho {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..][..w];
                        let src = &row[(ni * ho + oy) * wo..][..wo];
                        for (ox, &g) in src.iter().enumerate() {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += g;
                            }
                        }
                    }
                }
            }
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::make_rng;

    /// Direct 3x3 convolution, one output at a time.
    fn naive(conv: &Conv2d, x: &Act) -> Act {
        let (ho, wo) = (conv.out_size(x.h), conv.out_size(x.w));
        let mut out = Act::zeros(conv.out_ch, x.n, ho, wo);
        for o in 0..conv.out_ch {
            for ni in 0..x.n {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias[o];
                        for ci in 0..conv.in_ch {
                            for ky in 0..3 {
                                for kx in 0..3 {
                                    let iy = (oy * conv.stride + ky) as isize - 1;
                                    let ix = (ox * conv.stride + kx) as isize - 1;
                                    if iy < 0 || ix < 0 || iy >= x.h as isize || ix >= x.w as isize
                                    {
                                        continue;
                                    }
                                    let v = x.data[((ci * x.n + ni) * x.h + iy as usize) * x.w
                                        + ix as usize];
                                    acc += v * conv.weight[(o * conv.in_ch + ci) * 9 + ky * 3 + kx];
                                }
                            }
                        }
                        out.data[((o * x.n + ni) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn random_act(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Act {
        let mut rng = make_rng(seed);
        let mut a = Act::zeros(c, n, h, w);
        for v in &mut a.data {
            *v = rng.random_range(-1.0..1.0);
        }
        a
    }

    #[test]
    fn forward_matches_direct_convolution() {
        let mut rng = make_rng(1);
        for stride in [1, 2] {
            let mut conv = Conv2d::init(3, 4, stride, 1.0, &mut rng);
            conv.bias = vec![0.1, -0.2, 0.3, 0.0];
            let x = random_act(3, 2, 7, 6, 2);
            let (got, _) = conv.forward(&x, false);
            let want = naive(&conv, &x);
            assert_eq!((got.h, got.w), (want.h, want.w));
            for (a, b) in got.data.iter().zip(&want.data) {
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = make_rng(3);
        for stride in [1, 2] {
            let conv = Conv2d::init(2, 3, stride, 1.0, &mut rng);
            let x = random_act(2, 2, 5, 5, 4);
            let probe = {
                let (o, _) = conv.forward(&x, false);
                random_act(o.c, o.n, o.h, o.w, 5)
            };
            // Scalar objective: <probe, conv(x)>.
            let objective = |conv: &Conv2d, x: &Act| -> f64 {
                let (o, _) = conv.forward(x, false);
                o.data.iter().zip(&probe.data).map(|(a, b)| (*a as f64) * (*b as f64)).sum()
            };
            let (_, cols) = conv.forward(&x, true);
            let mut dw = vec![0.0; conv.weight.len()];
            let mut db = vec![0.0; conv.bias.len()];
            let dx = conv
                .backward((x.c, x.n, x.h, x.w), &cols.unwrap(), &probe, &mut dw, &mut db, true)
                .unwrap();
            let h = 1e-2f32;
            for i in (0..conv.weight.len()).step_by(5) {
                let mut p = conv.clone();
                p.weight[i] += h;
                let mut m = conv.clone();
                m.weight[i] -= h;
                let fd = (objective(&p, &x) - objective(&m, &x)) / (2.0 * h as f64);
                assert!((fd - dw[i] as f64).abs() < 1e-2, "dw[{i}] {fd} vs {}", dw[i]);
            }
            for i in (0..x.data.len()).step_by(7) {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fd = (objective(&conv, &xp) - objective(&conv, &xm)) / (2.0 * h as f64);
                assert!((fd - dx.data[i] as f64).abs() < 1e-2, "dx[{i}]");
            }
            let sum: f32 = probe.data.chunks(probe.n * probe.h * probe.w).next().unwrap().iter().sum();
            assert!((db[0] - sum).abs() < 1e-4);
        }
    }
}
