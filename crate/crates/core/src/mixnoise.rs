//! Finite Gaussian mixtures used to corrupt PMU power channels.

use std::f64::consts::PI;

use crate::error::{DseError, Result};
use crate::matstat::RngStream;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

/// Weighted sum of normal densities. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
}

impl GaussianMixture {
    pub fn new(components: Vec<Component>) -> Result<Self> {
        if components.is_empty() {
            return Err(DseError::InvalidParameter("mixture needs at least one component".into()));
        }
        for (i, c) in components.iter().enumerate() {
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(DseError::InvalidParameter(format!(
                    "component {i}: weight must be positive, got {}",
                    c.weight
                )));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(DseError::InvalidParameter(format!(
                    "component {i}: variance must be positive, got {}",
                    c.variance
                )));
            }
            if !c.mean.is_finite() {
                return Err(DseError::InvalidParameter(format!("component {i}: mean must be finite")));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(DseError::InvalidParameter(format!(
                "mixture weights sum to {total}, expected 1"
            )));
        }
        Ok(GaussianMixture { components })
    }

    /// Convenience constructor from `(weight, mean, variance)` triples.
    pub fn from_triples(triples: &[(f64, f64, f64)]) -> Result<Self> {
        GaussianMixture::new(
            triples
                .iter()
                .map(|&(weight, mean, variance)| Component { weight, mean, variance })
                .collect(),
        )
    }

    pub fn normal(mean: f64, variance: f64) -> Result<Self> {
        GaussianMixture::from_triples(&[(1.0, mean, variance)])
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    /// Draws a component by weight, then a deviate from it.
    pub fn sample(&self, rng: &mut RngStream) -> f64 {
        let c = &self.components[self.pick_component(rng.uniform())];
        c.mean + c.variance.sqrt() * rng.standard_normal()
    }

    /// Index of the component selected by a uniform draw `u ∈ [0, 1)`.
    pub fn pick_component(&self, u: f64) -> usize {
        let mut acc = 0.0;
        for (i, c) in self.components.iter().enumerate() {
            acc += c.weight;
            if u < acc {
                return i;
            }
        }
        self.components.len() - 1
    }

    pub fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|c| {
                let d = x - c.mean;
                c.weight * (-0.5 * d * d / c.variance).exp() / (2.0 * PI * c.variance).sqrt()
            })
            .sum()
    }

    /// Mean and variance of the mixture.
    pub fn moments(&self) -> (f64, f64) {
        let mean: f64 = self.components.iter().map(|c| c.weight * c.mean).sum();
        let second: f64 = self
            .components
            .iter()
            .map(|c| c.weight * (c.variance + c.mean * c.mean))
            .sum();
        (mean, second - mean * mean)
    }

    pub fn max_std(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.variance.sqrt())
            .fold(0.0, f64::max)
    }
}

/// Zero-mean bimodal mixture reported for field PMU power measurements:
/// weights 0.9 / 0.1, variances 1e-4 / 1e-3.
pub fn paper_bimodal() -> GaussianMixture {
    GaussianMixture::from_triples(&[(0.9, 0.0, 1e-4), (0.1, 0.0, 1e-3)]).expect("valid mixture")
}

/// Per-channel measurement noise, independent across channels and time.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub pt: GaussianMixture,
    pub qt: GaussianMixture,
    /// Terminal voltage is delivered clean unless this is set.
    pub vt: Option<GaussianMixture>,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            pt: paper_bimodal(),
            qt: paper_bimodal(),
            vt: None,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_mixtures() {
        assert!(GaussianMixture::new(vec![]).is_err());
        assert!(GaussianMixture::from_triples(&[(0.5, 0.0, 1.0), (0.4, 0.0, 1.0)]).is_err());
        assert!(GaussianMixture::from_triples(&[(1.0, 0.0, 0.0)]).is_err());
        assert!(GaussianMixture::from_triples(&[(1.2, 0.0, 1.0), (-0.2, 0.0, 1.0)]).is_err());
    }

    #[test]
    fn paper_mixture_shape() {
        let g = paper_bimodal();
        assert_eq!(g.components().len(), 2);
        assert_eq!(g.components()[0].weight, 0.9);
        assert_eq!(g.components()[1].weight, 0.1);
        let total: f64 = g.components().iter().map(|c| c.weight).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let (m, v) = g.moments();
        assert_eq!(m, 0.0);
        assert!((v - 1.9e-4).abs() < 1e-18);
    }

    #[test]
    fn moments_closed_forms() {
        let g = GaussianMixture::normal(0.3, 2.0).unwrap();
        assert_eq!(g.moments(), (0.3, 2.0 + 0.09 - 0.09));
        let a = 1.5;
        let g = GaussianMixture::from_triples(&[(0.5, a, 0.2), (0.5, -a, 0.2)]).unwrap();
        let (m, v) = g.moments();
        assert_eq!(m, 0.0);
        assert!((v - (0.2 + a * a)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_sample_is_mean() {
        let g = GaussianMixture::normal(0.0, 1e-30).unwrap();
        let mut rng = RngStream::new(1);
        for _ in 0..100 {
            assert!(g.sample(&mut rng).abs() < 1e-12);
        }
    }

    #[test]
    fn pdf_values() {
        let g = GaussianMixture::normal(0.0, 1.0).unwrap();
        assert!((g.pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-15);
        let expected = 0.9 / (2.0 * PI * 1e-4_f64).sqrt() + 0.1 / (2.0 * PI * 1e-3_f64).sqrt();
        assert!((paper_bimodal().pdf(0.0) - expected).abs() < 1e-12);
        // 0.9/sqrt(2π·1e-4) + 0.1/sqrt(2π·1e-3), evaluated by hand
        assert!((paper_bimodal().pdf(0.0) - 37.166_371_497).abs() < 1e-8);
    }

    #[test]
    fn sampling_is_deterministic() {
        let g = paper_bimodal();
        let run = |seed| {
            let mut rng = RngStream::new(seed);
            (0..50).map(|_| g.sample(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(5), run(5));
    }

    #[test]
    fn pick_component_edges() {
        let g = paper_bimodal();
        assert_eq!(g.pick_component(0.0), 0);
        assert_eq!(g.pick_component(0.899), 0);
        assert_eq!(g.pick_component(0.9), 1);
        assert_eq!(g.pick_component(0.999_999), 1);
    }
}
