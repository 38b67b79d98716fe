use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Act, Conv2d};
use crate::rng::Rng;

/// Shape of a residual CNN: a stride-2 stem, then per stage a stride-2
/// downsampling conv followed by `blocks` residual blocks, global average
/// pooling and a linear head.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub in_channels: usize,
    pub stem: usize,
    pub widths: Vec<usize>,
    pub blocks: usize,
    pub classes: usize,
}

impl ArchSpec {
    pub fn feature_dim(&self) -> usize {
        *self.widths.last().unwrap_or(&self.stem)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResBlock {
    a: Conv2d,
    b: Conv2d,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Stage {
    down: Conv2d,
    blocks: Vec<ResBlock>,
}

/// Image to `d`-dimensional feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    stem: Conv2d,
    stages: Vec<Stage>,
}

/// `logits = weight * features + bias`; row `i` of `weight` is class `i`'s prototype.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearHead {
    pub classes: usize,
    pub dim: usize,
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LinearHead {
    pub fn prototype(&self, class: usize) -> &[f32] {
        &self.weight[class * self.dim..(class + 1) * self.dim]
    }

    pub fn prototype_mut(&mut self, class: usize) -> &mut [f32] {
        &mut self.weight[class * self.dim..(class + 1) * self.dim]
    }

    /// Logits for an `n x dim` feature matrix, written as `n x classes`.
    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        let n = features.len() / self.dim;
        let mut out = vec![0.0; n * self.classes];
        for (f, o) in features.chunks(self.dim).zip(out.chunks_mut(self.classes)) {
            for (i, oi) in o.iter_mut().enumerate() {
                *oi = self.bias[i] + dot(self.prototype(i), f);
            }
        }
        out
    }
}

#[inline]
pub(crate) fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Feature extractor plus linear head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    spec: ArchSpec,
    extractor: FeatureExtractor,
    head: LinearHead,
}

/// Parameter gradients, shaped like the network they belong to.
#[derive(Debug, Clone)]
pub struct Grads(Network);

impl Grads {
    pub fn slices(&self) -> Vec<&[f32]> {
        self.0.params()
    }
}

struct ConvTape {
    in_shape: (usize, usize, usize, usize),
    cols: Vec<f32>,
}

struct BlockTape {
    first: ConvTape,
    mid: Act,
    second: ConvTape,
    out: Act,
}

struct StageTape {
    down: ConvTape,
    out: Act,
    blocks: Vec<BlockTape>,
}

/// Intermediate values kept by a training forward pass.
pub struct Tape {
    stem: ConvTape,
    stem_out: Act,
    stages: Vec<StageTape>,
    pooled_hw: usize,
    features: Vec<f32>,
}

impl Tape {
    pub fn features(&self) -> &[f32] {
        &self.features
    }
}

fn relu(a: &mut Act) {
    for v in &mut a.data {
        *v = v.max(0.0);
    }
}

fn relu_backward(grad: &mut Act, out: &Act) {
    for (g, &o) in grad.data.iter_mut().zip(&out.data) {
        if o <= 0.0 {
            *g = 0.0;
        }
    }
}

fn conv_step(conv: &Conv2d, x: &Act, tape: bool) -> (Act, Option<ConvTape>) {
    let (mut out, cols) = conv.forward(x, tape);
    relu(&mut out);
    let t = cols.map(|cols| ConvTape {
        in_shape: (x.c, x.n, x.h, x.w),
        cols,
    });
    (out, t)
}

impl FeatureExtractor {
    fn init(spec: &ArchSpec, rng: &mut Rng) -> Self {
        let stem = Conv2d::init(spec.in_channels, spec.stem, 2, 1.0, rng);
        let mut prev = spec.stem;
        let stages = spec
            .widths
            .iter()
            .map(|&w| {
                let down = Conv2d::init(prev, w, 2, 1.0, rng);
                prev = w;
                let blocks = (0..spec.blocks)
                    .map(|_| ResBlock {
                        a: Conv2d::init(w, w, 1, 1.0, rng),
                        b: Conv2d::init(w, w, 1, 0.2, rng),
                    })
                    .collect();
                Stage { down, blocks }
            })
            .collect();
        Self { stem, stages }
    }

    fn convs(&self) -> Vec<&Conv2d> {
        let mut out = vec![&self.stem];
        for s in &self.stages {
            out.push(&s.down);
            for b in &s.blocks {
                out.push(&b.a);
                out.push(&b.b);
            }
        }
        out
    }

    fn convs_mut(&mut self) -> Vec<&mut Conv2d> {
        let mut out = vec![&mut self.stem];
        for s in &mut self.stages {
            out.push(&mut s.down);
            for b in &mut s.blocks {
                out.push(&mut b.a);
                out.push(&mut b.b);
            }
        }
        out
    }

    fn run(&self, x: &Act, keep: bool) -> (Act, Option<Tape>) {
        let (stem_out, stem_tape) = conv_step(&self.stem, x, keep);
        let mut h = stem_out.clone();
        let mut stage_tapes = Vec::new();
        for stage in &self.stages {
            let (out, down_tape) = conv_step(&stage.down, &h, keep);
            h = out;
            let stage_out = if keep { h.clone() } else { Act::zeros(0, 0, 0, 0) };
            let mut block_tapes = Vec::new();
            for block in &stage.blocks {
                let (mid, first) = conv_step(&block.a, &h, keep);
                let (mut y, cols) = block.b.forward(&mid, keep);
                for (v, &skip) in y.data.iter_mut().zip(&h.data) {
                    *v = (*v + skip).max(0.0);
                }
                if keep {
                    block_tapes.push(BlockTape {
                        first: first.expect("tape"),
                        second: ConvTape {
                            in_shape: (mid.c, mid.n, mid.h, mid.w),
                            cols: cols.expect("tape"),
                        },
                        mid,
                        out: y.clone(),
                    });
                }
                h = y;
            }
            if keep {
                stage_tapes.push(StageTape {
                    down: down_tape.expect("tape"),
                    out: stage_out,
                    blocks: block_tapes,
                });
            }
        }
        let tape = stem_tape.map(|stem| Tape {
            stem,
            stem_out,
            stages: stage_tapes,
            pooled_hw: h.h * h.w,
            features: Vec::new(),
        });
        (h, tape)
    }

    /// `n x d` pooled features.
    pub fn features(&self, x: &Act) -> Vec<f32> {
        let (h, _) = self.run(x, false);
        pool(&h)
    }

    /// SHA-256 over every extractor parameter.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for conv in self.convs() {
            for v in conv.weight.iter().chain(&conv.bias) {
                hasher.update(v.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

/// Global average pool to `n x c`.
fn pool(h: &Act) -> Vec<f32> {
    let hw = h.h * h.w;
    let mut out = vec![0.0; h.n * h.c];
    for ci in 0..h.c {
        for ni in 0..h.n {
            let plane = &h.data[(ci * h.n + ni) * hw..][..hw];
            out[ni * h.c + ci] = plane.iter().sum::<f32>() / hw as f32;
        }
    }
    out
}

impl Network {
    pub fn init(spec: ArchSpec, rng: &mut Rng) -> Self {
        assert!(!spec.widths.is_empty(), "at least one stage");
        let extractor = FeatureExtractor::init(&spec, rng);
        let dim = spec.feature_dim();
        let bound = 1.0 / (dim as f32).sqrt();
        let head = LinearHead {
            classes: spec.classes,
            dim,
            weight: (0..spec.classes * dim)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
            bias: (0..spec.classes)
                .map(|_| rng.random_range(-bound..bound))
                .collect(),
        };
        Self {
            spec,
            extractor,
            head,
        }
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn classes(&self) -> usize {
        self.spec.classes
    }

    pub fn feature_dim(&self) -> usize {
        self.head.dim
    }

    pub fn extractor(&self) -> &FeatureExtractor {
        &self.extractor
    }

    pub fn head(&self) -> &LinearHead {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut LinearHead {
        &mut self.head
    }

    /// Features and logits, both row-major per sample.
    pub fn forward(&self, x: &Act) -> (Vec<f32>, Vec<f32>) {
        let feats = self.extractor.features(x);
        let logits = self.head.logits(&feats);
        (feats, logits)
    }

    pub fn logits(&self, x: &Act) -> Vec<f32> {
        self.forward(x).1
    }

    /// Logits plus the tape needed by [`Network::backward`].
    pub fn forward_train(&self, x: &Act) -> (Vec<f32>, Tape) {
        let (h, tape) = self.extractor.run(x, true);
        let mut tape = tape.expect("tape requested");
        tape.features = pool(&h);
        let logits = self.head.logits(&tape.features);
        (logits, tape)
    }

    /// Gradients of a loss whose logit gradient is `dlogits` (`n x classes`).
    pub fn backward(&self, tape: Tape, dlogits: &[f32]) -> Grads {
        let mut g = self.zeros_like();
        let (classes, dim) = (self.head.classes, self.head.dim);
        let n = dlogits.len() / classes;
        let mut dfeat = vec![0.0f32; n * dim];
        for ((dl, f), df) in dlogits
            .chunks(classes)
            .zip(tape.features.chunks(dim))
            .zip(dfeat.chunks_mut(dim))
        {
            for (i, &d) in dl.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.head.bias[i] += d;
                let gw = &mut g.head.weight[i * dim..(i + 1) * dim];
                for ((gwj, &fj), (dfj, &wj)) in gw
                    .iter_mut()
                    .zip(f)
                    .zip(df.iter_mut().zip(self.head.prototype(i)))
                {
                    *gwj += d * fj;
                    *dfj += d * wj;
                }
            }
        }

        // Unpool.
        let hw = tape.pooled_hw;
        let last = match tape.stages.last() {
            Some(s) => s.blocks.last().map(|b| &b.out).unwrap_or(&s.out),
            None => &tape.stem_out,
        };
        let mut grad = Act::zeros(last.c, last.n, last.h, last.w);
        for ci in 0..grad.c {
            for ni in 0..grad.n {
                let v = dfeat[ni * dim + ci] / hw as f32;
                grad.data[(ci * grad.n + ni) * hw..][..hw].fill(v);
            }
        }

        for (si, (stage, st)) in self
            .extractor
            .stages
            .iter()
            .zip(&tape.stages)
            .enumerate()
            .rev()
        {
            for (bi, (block, bt)) in stage.blocks.iter().zip(&st.blocks).enumerate().rev() {
                relu_backward(&mut grad, &bt.out);
                let gb = &mut g.extractor.stages[si].blocks[bi];
                let mut dmid = block
                    .b
                    .backward(
                        bt.second.in_shape,
                        &bt.second.cols,
                        &grad,
                        &mut gb.b.weight,
                        &mut gb.b.bias,
                        true,
                    )
                    .expect("dx");
                relu_backward(&mut dmid, &bt.mid);
                let dx = block
                    .a
                    .backward(
                        bt.first.in_shape,
                        &bt.first.cols,
                        &dmid,
                        &mut gb.a.weight,
                        &mut gb.a.bias,
                        true,
                    )
                    .expect("dx");
                for (g0, d) in grad.data.iter_mut().zip(&dx.data) {
                    *g0 += d;
                }
            }
            relu_backward(&mut grad, &st.out);
            let gs = &mut g.extractor.stages[si].down;
            grad = stage
                .down
                .backward(
                    st.down.in_shape,
                    &st.down.cols,
                    &grad,
                    &mut gs.weight,
                    &mut gs.bias,
                    true,
                )
                .expect("dx");
        }
        relu_backward(&mut grad, &tape.stem_out);
        let gs = &mut g.extractor.stem;
        self.extractor.stem.backward(
            tape.stem.in_shape,
            &tape.stem.cols,
            &grad,
            &mut gs.weight,
            &mut gs.bias,
            false,
        );
        Grads(g)
    }

    fn zeros_like(&self) -> Network {
        let mut z = self.clone();
        for p in z.params_mut() {
            p.fill(0.0);
        }
        z
    }

    /// Every parameter buffer in a fixed order.
    pub fn params(&self) -> Vec<&[f32]> {
        let mut out = Vec::new();
        for c in self.extractor.convs() {
            out.push(c.weight.as_slice());
            out.push(c.bias.as_slice());
        }
        out.push(&self.head.weight);
        out.push(&self.head.bias);
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut [f32]> {
        let mut out = Vec::new();
        for c in self.extractor.convs_mut() {
            out.push(c.weight.as_mut_slice());
            out.push(c.bias.as_mut_slice());
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }
}
