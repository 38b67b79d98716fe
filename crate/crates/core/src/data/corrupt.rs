use rand_distr::{Distribution, Normal};

use super::LabeledDataset;
use crate::rng::Rng;

/// Adds i.i.d. `N(0, sigma^2)` noise to every pixel and clips to `[0, 1]`.
/// Labels and references are unchanged; `sigma == 0` returns an exact copy.
pub fn corrupt_gaussian(dataset: &LabeledDataset, sigma: f64, rng: &mut Rng) -> LabeledDataset {
    assert!(sigma >= 0.0 && sigma.is_finite(), "noise sigma must be >= 0");
    let mut out = dataset.clone();
    if sigma == 0.0 {
        return out;
    }
    let normal = Normal::new(0.0f32, sigma as f32).expect("finite sigma");
    for img in &mut out.images {
        for v in img.data_mut() {
            *v = (*v + normal.sample(rng)).clamp(0.0, 1.0);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageRef;
    use crate::image::Image;
    use crate::rng::make_rng;

    fn gray(n: usize) -> LabeledDataset {
        LabeledDataset::new(
            vec!["a".into(), "b".into()],
            16,
            (0..n).map(|i| ImageRef(format!("g{i}"))).collect(),
            (0..n).map(|_| Image::filled(3, 16, 16, 0.5)).collect(),
            (0..n).map(|i| i % 2).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let d = gray(4);
        assert_eq!(corrupt_gaussian(&d, 0.0, &mut make_rng(1)), d);
    }

    #[test]
    fn empirical_std_matches_sigma() {
        let d = gray(20);
        let noisy = corrupt_gaussian(&d, 0.1, &mut make_rng(2));
        let xs: Vec<f64> = noisy
            .images
            .iter()
            .flat_map(|i| i.data().iter().map(|&v| v as f64))
            .collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64;
        let std = var.sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
        assert_eq!(noisy.labels, d.labels);
    }

    #[test]
    fn deterministic_under_seed() {
        let d = gray(3);
        let a = corrupt_gaussian(&d, 0.05, &mut make_rng(9));
        let b = corrupt_gaussian(&d, 0.05, &mut make_rng(9));
        assert_eq!(a, b);
        assert!(a.images.iter().flat_map(|i| i.data()).all(|v| (0.0..=1.0).contains(v)));
    }
}
