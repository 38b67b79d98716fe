//! Seeded synthetic task for offline runs.
//!
//! The target task is ten classes of shapes and textures. The candidate pool
//! has its own, disjoint classes: some are visual relatives of the target
//! classes and say so in their names ("striped circle", "ring of dots"),
//! others are unrelated textures with unrelated names. Every image is a pure
//! function of `(seed, split, class, index)`, so pool images are rendered on
//! demand and never stored.

use std::f32::consts::PI;
use std::sync::Arc;

use rand::{Rng as _, SeedableRng};
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::{DataError, ImageRef, ImageSource, LabeledDataset};
use crate::image::Image;
use crate::rng::Rng;
use crate::selection::{OODPool, PoolClass};

pub const TARGET_CLASSES: [&str; 10] = [
    "circle",
    "square",
    "triangle",
    "cross",
    "ring",
    "horizontal stripes",
    "vertical stripes",
    "diagonal stripes",
    "checkerboard",
    "dots",
];

pub const POOL_CLASSES: [&str; 20] = [
    "striped circle",
    "hollow square",
    "rounded square",
    "double circle",
    "triangle outline",
    "diagonal cross",
    "concentric rings",
    "wavy horizontal stripes",
    "broken vertical stripes",
    "checkerboard patch",
    "scattered dots",
    "ring of dots",
    "static noise",
    "color gradient",
    "plain fill",
    "soft clouds",
    "pixel mosaic",
    "ink blot",
    "zigzag line",
    "sunset horizon",
];

/// Which slice of the synthetic world an image belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
    Pool,
}

impl Split {
    fn tag(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Pool => "pool",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            "pool" => Some(Split::Pool),
            _ => None,
        }
    }
}

/// Generator for the synthetic task at a given square resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fixture {
    pub seed: u64,
    pub resolution: usize,
}

impl Fixture {
    pub fn new(seed: u64, resolution: usize) -> Self {
        Self { seed, resolution }
    }

    pub fn target_names() -> Vec<String> {
        TARGET_CLASSES.iter().map(|s| s.to_string()).collect()
    }

    pub fn key(split: Split, class: usize, index: usize) -> ImageRef {
        ImageRef(format!("{}/{class}/{index}", split.tag()))
    }

    fn image_rng(&self, split: Split, class: usize, index: usize) -> Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(split.tag().as_bytes());
        h.update((class as u64).to_le_bytes());
        h.update((index as u64).to_le_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest);
        Rng::from_seed(seed)
    }

    pub fn render(&self, split: Split, class: usize, index: usize) -> Image {
        let mut rng = self.image_rng(split, class, index);
        let mut canvas = Canvas::new(self.resolution);
        match split {
            Split::Train | Split::Test => draw_target(class, &mut canvas, &mut rng),
            Split::Pool => draw_pool(class, &mut canvas, &mut rng),
        }
        canvas.finish(&mut rng)
    }

    /// Balanced labeled split of the target task, class-major order.
    pub fn target_split(&self, split: Split, per_class: usize) -> LabeledDataset {
        assert!(split != Split::Pool, "pool is not a labeled target split");
        let mut refs = Vec::new();
        let mut images = Vec::new();
        let mut labels = Vec::new();
        for class in 0..TARGET_CLASSES.len() {
            for i in 0..per_class {
                refs.push(Self::key(split, class, i));
                images.push(self.render(split, class, i));
                labels.push(class);
            }
        }
        LabeledDataset::new(Self::target_names(), self.resolution, refs, images, labels)
            .expect("fixture labels and shapes are consistent")
    }

    /// Lazily rendered candidate pool with `per_class` images per class.
    pub fn pool(&self, per_class: usize) -> OODPool {
        let classes = POOL_CLASSES
            .iter()
            .enumerate()
            .map(|(c, name)| PoolClass {
                name: name.to_string(),
                refs: (0..per_class).map(|i| Self::key(Split::Pool, c, i)).collect(),
            })
            .collect();
        OODPool::new(classes, Arc::new(*self)).expect("fixture pool names are unique")
    }
}

impl ImageSource for Fixture {
    fn load(&self, r: &ImageRef) -> Result<Image, DataError> {
        let bad = || DataError::UnknownRef(r.0.clone());
        let mut parts = r.as_str().split('/');
        let split = parts.next().and_then(Split::parse).ok_or_else(bad)?;
        let class: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let index: usize = parts.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let limit = match split {
            Split::Pool => POOL_CLASSES.len(),
            _ => TARGET_CLASSES.len(),
        };
        if class >= limit || parts.next().is_some() {
            return Err(bad());
        }
        Ok(self.render(split, class, index))
    }
}

type Rgb = [f32; 3];

struct Canvas {
    side: usize,
    px: Vec<Rgb>,
}

fn luminance(c: Rgb) -> f32 {
    0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]
}

fn random_color(rng: &mut Rng) -> Rgb {
    [rng.random(), rng.random(), rng.random()]
}

/// Background and foreground colors with a clear luminance gap.
fn palette(rng: &mut Rng) -> (Rgb, Rgb) {
    let bg = random_color(rng);
    loop {
        let fg = random_color(rng);
        if (luminance(fg) - luminance(bg)).abs() > 0.3 {
            return (bg, fg);
        }
    }
}

impl Canvas {
    fn new(side: usize) -> Self {
        Self {
            side,
            px: vec![[0.0; 3]; side * side],
        }
    }

    /// Pixel-center coordinates in a 32-unit frame.
    fn unit(&self) -> f32 {
        32.0 / self.side as f32
    }

    fn fill(&mut self, c: Rgb) {
        self.px.fill(c);
    }

    fn paint(&mut self, c: Rgb, inside: impl Fn(f32, f32) -> bool) {
        let u = self.unit();
        for y in 0..self.side {
            for x in 0..self.side {
                let (fx, fy) = ((x as f32 + 0.5) * u, (y as f32 + 0.5) * u);
                if inside(fx, fy) {
                    self.px[y * self.side + x] = c;
                }
            }
        }
    }

    fn shade(&mut self, f: impl Fn(f32, f32) -> Rgb) {
        let u = self.unit();
        for y in 0..self.side {
            for x in 0..self.side {
                let (fx, fy) = ((x as f32 + 0.5) * u, (y as f32 + 0.5) * u);
                self.px[y * self.side + x] = f(fx, fy);
            }
        }
    }

    /// Adds mild sensor noise and quantizes to 8-bit levels.
    fn finish(self, rng: &mut Rng) -> Image {
        let noise = Normal::new(0.0f32, 0.03).expect("finite");
        let n = self.side * self.side;
        let mut data = vec![0.0f32; 3 * n];
        for (i, p) in self.px.iter().enumerate() {
            for c in 0..3 {
                let v = (p[c] + noise.sample(rng)).clamp(0.0, 1.0);
                data[c * n + i] = super::quantize(v) as f32 / 255.0;
            }
        }
        Image::new(3, self.side, self.side, data)
    }
}

fn stripe(v: f32, period: f32, phase: f32) -> bool {
    (v + phase).rem_euclid(period) < period / 2.0
}

fn in_triangle(x: f32, y: f32, cx: f32, top: f32, base: f32, height: f32) -> bool {
    let t = (y - top) / height;
    (0.0..=1.0).contains(&t) && (x - cx).abs() <= t * base / 2.0
}

fn draw_target(class: usize, cv: &mut Canvas, rng: &mut Rng) {
    let (bg, fg) = palette(rng);
    cv.fill(bg);
    match class {
        0 => {
            let r = rng.random_range(6.0..11.0);
            let (cx, cy) = (rng.random_range(r + 1.0..31.0 - r), rng.random_range(r + 1.0..31.0 - r));
            cv.paint(fg, |x, y| (x - cx).hypot(y - cy) <= r);
        }
        1 => {
            let s = rng.random_range(10.0..20.0);
            let (l, t) = (rng.random_range(1.0..31.0 - s), rng.random_range(1.0..31.0 - s));
            cv.paint(fg, |x, y| x >= l && x <= l + s && y >= t && y <= t + s);
        }
        2 => {
            let base = rng.random_range(14.0..26.0);
            let height = rng.random_range(12.0..22.0);
            let cx = rng.random_range(base / 2.0 + 1.0..31.0 - base / 2.0);
            let top = rng.random_range(1.0..31.0 - height);
            cv.paint(fg, |x, y| in_triangle(x, y, cx, top, base, height));
        }
        3 => {
            let len = rng.random_range(8.0..13.0);
            let t = rng.random_range(1.5..3.0);
            let (cx, cy) = (rng.random_range(len + 1.0..31.0 - len), rng.random_range(len + 1.0..31.0 - len));
            cv.paint(fg, |x, y| {
                let (dx, dy) = ((x - cx).abs(), (y - cy).abs());
                (dx <= t && dy <= len) || (dy <= t && dx <= len)
            });
        }
        4 => {
            let r = rng.random_range(8.0..13.0);
            let w = rng.random_range(2.0..3.5);
            let (cx, cy) = (rng.random_range(r + 1.0..31.0 - r), rng.random_range(r + 1.0..31.0 - r));
            cv.paint(fg, |x, y| {
                let d = (x - cx).hypot(y - cy);
                d <= r && d >= r - w
            });
        }
        5 | 6 => {
            let p = rng.random_range(4.0..8.0);
            let phase = rng.random_range(0.0..p);
            let horizontal = class == 5;
            cv.paint(fg, |x, y| stripe(if horizontal { y } else { x }, p, phase));
        }
        7 => {
            let p = rng.random_range(5.0..9.0);
            let phase = rng.random_range(0.0..p);
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            cv.paint(fg, |x, y| stripe((x + sign * y) / 2f32.sqrt(), p, phase));
        }
        8 => {
            let cell = rng.random_range(3.0..7.0);
            let (ox, oy) = (rng.random_range(0.0..cell), rng.random_range(0.0..cell));
            cv.paint(fg, |x, y| {
                (((x + ox) / cell).floor() + ((y + oy) / cell).floor()) as i64 % 2 == 0
            });
        }
        9 => {
            let s = rng.random_range(6.0..9.0);
            let r = rng.random_range(1.5..2.5);
            let (ox, oy) = (rng.random_range(0.0..s), rng.random_range(0.0..s));
            cv.paint(fg, |x, y| {
                let gx = ((x + ox) / s).round() * s - ox;
                let gy = ((y + oy) / s).round() * s - oy;
                (x - gx).hypot(y - gy) <= r
            });
        }
        _ => panic!("target class {class} out of range"),
    }
}

fn draw_pool(class: usize, cv: &mut Canvas, rng: &mut Rng) {
    let (bg, fg) = palette(rng);
    cv.fill(bg);
    match class {
        // striped circle
        0 => {
            let r = rng.random_range(7.0..12.0);
            let (cx, cy) = (rng.random_range(r + 1.0..31.0 - r), rng.random_range(r + 1.0..31.0 - r));
            let p = rng.random_range(3.0..6.0);
            let fg2 = random_color(rng);
            let vertical = rng.random_bool(0.5);
            cv.paint(fg, |x, y| (x - cx).hypot(y - cy) <= r);
            cv.paint(fg2, |x, y| {
                (x - cx).hypot(y - cy) <= r && stripe(if vertical { x } else { y }, p, 0.0)
            });
        }
        // hollow square
        1 => {
            let s = rng.random_range(12.0..24.0);
            let w = rng.random_range(1.5..3.0);
            let (l, t) = (rng.random_range(1.0..31.0 - s), rng.random_range(1.0..31.0 - s));
            cv.paint(fg, |x, y| {
                let inside = x >= l && x <= l + s && y >= t && y <= t + s;
                let core = x >= l + w && x <= l + s - w && y >= t + w && y <= t + s - w;
                inside && !core
            });
        }
        // rounded square
        2 => {
            let a = rng.random_range(6.0..11.0);
            let (cx, cy) = (rng.random_range(a + 1.0..31.0 - a), rng.random_range(a + 1.0..31.0 - a));
            cv.paint(fg, |x, y| ((x - cx) / a).powi(4) + ((y - cy) / a).powi(4) <= 1.0);
        }
        // double circle
        3 => {
            let r1 = rng.random_range(4.0..7.0);
            let r2 = rng.random_range(4.0..7.0);
            let c1 = (rng.random_range(r1 + 1.0..16.0), rng.random_range(r1 + 1.0..31.0 - r1));
            let c2 = (rng.random_range(16.0..31.0 - r2), rng.random_range(r2 + 1.0..31.0 - r2));
            cv.paint(fg, |x, y| {
                (x - c1.0).hypot(y - c1.1) <= r1 || (x - c2.0).hypot(y - c2.1) <= r2
            });
        }
        // triangle outline
        4 => {
            let base = rng.random_range(16.0..28.0);
            let height = rng.random_range(14.0..26.0);
            let cx = rng.random_range(base / 2.0 + 1.0..31.0 - base / 2.0);
            let top = rng.random_range(1.0..31.0 - height);
            let w = rng.random_range(2.0..3.5);
            cv.paint(fg, |x, y| {
                in_triangle(x, y, cx, top, base, height)
                    && !in_triangle(x, y, cx, top + 2.0 * w, base - 3.0 * w, height - 3.0 * w)
            });
        }
        // diagonal cross
        5 => {
            let len = rng.random_range(7.0..12.0);
            let t = rng.random_range(1.5..3.0);
            let (cx, cy) = (rng.random_range(len + 1.0..31.0 - len), rng.random_range(len + 1.0..31.0 - len));
            cv.paint(fg, |x, y| {
                let (dx, dy) = (x - cx, y - cy);
                dx.abs() <= len
                    && dy.abs() <= len
                    && ((dx - dy).abs() <= t * 1.4 || (dx + dy).abs() <= t * 1.4)
            });
        }
        // concentric rings
        6 => {
            let p = rng.random_range(3.0..6.0);
            let (cx, cy) = (rng.random_range(10.0..22.0), rng.random_range(10.0..22.0));
            cv.paint(fg, |x, y| stripe((x - cx).hypot(y - cy), p, 0.0));
        }
        // wavy horizontal stripes
        7 => {
            let p = rng.random_range(4.0..8.0);
            let amp = rng.random_range(1.0..3.0);
            let freq = rng.random_range(0.15..0.4);
            let phase = rng.random_range(0.0..p);
            cv.paint(fg, |x, y| stripe(y + amp * (x * freq).sin(), p, phase));
        }
        // broken vertical stripes
        8 => {
            let p = rng.random_range(4.0..8.0);
            let gap = rng.random_range(5.0..9.0);
            let phase = rng.random_range(0.0..p);
            let shift = rng.random_range(0.0..gap);
            cv.paint(fg, |x, y| stripe(x, p, phase) && (y + shift).rem_euclid(gap) > 1.5);
        }
        // checkerboard patch
        9 => {
            let s = rng.random_range(12.0..22.0);
            let cell = rng.random_range(2.5..5.0);
            let (l, t) = (rng.random_range(1.0..31.0 - s), rng.random_range(1.0..31.0 - s));
            cv.paint(fg, |x, y| {
                x >= l
                    && x <= l + s
                    && y >= t
                    && y <= t + s
                    && (((x - l) / cell).floor() + ((y - t) / cell).floor()) as i64 % 2 == 0
            });
        }
        // scattered dots
        10 => {
            let count = rng.random_range(6..16);
            let dots: Vec<(f32, f32, f32)> = (0..count)
                .map(|_| {
                    (
                        rng.random_range(2.0..30.0),
                        rng.random_range(2.0..30.0),
                        rng.random_range(1.2..2.8),
                    )
                })
                .collect();
            cv.paint(fg, |x, y| dots.iter().any(|&(dx, dy, r)| (x - dx).hypot(y - dy) <= r));
        }
        // ring of dots
        11 => {
            let big = rng.random_range(7.0..12.0);
            let count = rng.random_range(6..12);
            let r = rng.random_range(1.5..2.5);
            let (cx, cy) = (rng.random_range(big + 3.0..29.0 - big), rng.random_range(big + 3.0..29.0 - big));
            let start = rng.random_range(0.0..2.0 * PI);
            let dots: Vec<(f32, f32)> = (0..count)
                .map(|k| {
                    let a = start + 2.0 * PI * k as f32 / count as f32;
                    (cx + big * a.cos(), cy + big * a.sin())
                })
                .collect();
            cv.paint(fg, |x, y| dots.iter().any(|&(dx, dy)| (x - dx).hypot(y - dy) <= r));
        }
        // static noise
        12 => {
            let side = cv.side;
            for i in 0..side * side {
                cv.px[i] = random_color(rng);
            }
        }
        // color gradient
        13 => {
            let angle = rng.random_range(0.0..2.0 * PI);
            let (ca, sa) = (angle.cos(), angle.sin());
            cv.shade(|x, y| {
                let t = (((x - 16.0) * ca + (y - 16.0) * sa) / 45.0 + 0.5).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| bg[c] + (fg[c] - bg[c]) * t)
            });
        }
        // plain fill
        14 => {}
        // soft clouds
        15 => {
            let waves: Vec<(f32, f32, f32, f32)> = (0..4)
                .map(|_| {
                    (
                        rng.random_range(0.05..0.25),
                        rng.random_range(0.05..0.25),
                        rng.random_range(0.0..2.0 * PI),
                        rng.random_range(0.3..1.0),
                    )
                })
                .collect();
            cv.shade(|x, y| {
                let v: f32 = waves.iter().map(|&(fx, fy, ph, a)| a * (fx * x + fy * y + ph).sin()).sum();
                let t = (v / 4.0 + 0.5).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| bg[c] + (fg[c] - bg[c]) * t)
            });
        }
        // pixel mosaic
        16 => {
            let cell = rng.random_range(4..9);
            let cells = 32usize.div_ceil(cell);
            let colors: Vec<Rgb> = (0..cells * cells).map(|_| random_color(rng)).collect();
            cv.shade(|x, y| {
                let (i, j) = ((x as usize) / cell, (y as usize) / cell);
                colors[(j * cells + i).min(colors.len() - 1)]
            });
        }
        // ink blot
        17 => {
            let (cx, cy) = (rng.random_range(11.0..21.0), rng.random_range(11.0..21.0));
            let lobes: Vec<(f32, f32, f32)> = (0..rng.random_range(3..7))
                .map(|_| {
                    let a = rng.random_range(0.0..2.0 * PI);
                    let d = rng.random_range(0.0..6.0);
                    (cx + d * a.cos(), cy + d * a.sin(), rng.random_range(3.0..7.0))
                })
                .collect();
            cv.paint(fg, |x, y| lobes.iter().any(|&(lx, ly, r)| (x - lx).hypot(y - ly) <= r));
        }
        // zigzag line
        18 => {
            let p = rng.random_range(6.0..12.0);
            let amp = rng.random_range(3.0..8.0);
            let cy = rng.random_range(10.0..22.0);
            let t = rng.random_range(1.2..2.5);
            cv.paint(fg, |x, y| {
                let tri = 2.0 * ((x / p).rem_euclid(1.0) - 0.5).abs();
                (y - (cy + amp * (2.0 * tri - 1.0))).abs() <= t
            });
        }
        // sunset horizon
        19 => {
            let h = rng.random_range(8.0..24.0);
            cv.paint(fg, |_, y| y > h);
        }
        _ => panic!("pool class {class} out of range"),
    }
}
