use dse_core::matstat::RngStream;
use dse_core::mixnoise::{paper_bimodal, GaussianMixture};
use proptest::prelude::*;

const DRAWS: usize = 1_000_000;

fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let inner: f64 = (1..n).map(|k| f(lo + k as f64 * h)).sum();
    h * (0.5 * f(lo) + inner + 0.5 * f(hi))
}

#[test]
fn bimodal_sample_moments() {
    let m = paper_bimodal();
    let (mean, var) = m.moments();
    assert_eq!(mean, 0.0);
    assert!((var - 1.9e-4).abs() < 1e-18);
    let mut rng = RngStream::new(2019);
    let xs: Vec<f64> = (0..DRAWS).map(|_| m.sample(&mut rng)).collect();
    let emp_mean = xs.iter().sum::<f64>() / DRAWS as f64;
    let emp_var = xs.iter().map(|x| (x - emp_mean).powi(2)).sum::<f64>() / (DRAWS - 1) as f64;
    assert!(((emp_var - var) / var).abs() <= 0.02, "variance {emp_var:e}");
    assert!(emp_mean.abs() <= 3.0 * (var / DRAWS as f64).sqrt());
}

#[test]
fn bimodal_component_frequencies() {
    let m = paper_bimodal();
    let mut rng = RngStream::new(7);
    let wide = (0..DRAWS).filter(|_| m.pick_component(rng.uniform()) == 1).count();
    let p = wide as f64 / DRAWS as f64;
    let se = (0.1 * 0.9 / DRAWS as f64).sqrt();
    assert!((p - 0.1).abs() <= 3.0 * se, "wide component frequency {p}");
}

#[test]
fn bimodal_pdf_integrates_to_one() {
    let m = paper_bimodal();
    let half_width = 12.0 * m.max_std();
    let total = trapezoid(|x| m.pdf(x), -half_width, half_width, 200_000);
    assert!((total - 1.0).abs() <= 1e-6, "integral {total}");
}

fn mixture() -> impl Strategy<Value = GaussianMixture> {
    prop::collection::vec((0.05f64..1.0, -1.0f64..1.0, 0.01f64..1.0), 1..=5).prop_map(|raw| {
        let total: f64 = raw.iter().map(|c| c.0).sum();
        let mut triples: Vec<(f64, f64, f64)> = raw.iter().map(|&(w, m, v)| (w / total, m, v)).collect();
        let head: f64 = triples[1..].iter().map(|t| t.0).sum();
        triples[0].0 = 1.0 - head;
        GaussianMixture::from_triples(&triples).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn closed_form_moments_match_sampling(m in mixture(), seed in 0u64..10_000) {
        let (mean, var) = m.moments();
        let n = 200_000;
        let mut rng = RngStream::new(seed);
        let xs: Vec<f64> = (0..n).map(|_| m.sample(&mut rng)).collect();
        let emp_mean = xs.iter().sum::<f64>() / n as f64;
        let emp_var = xs.iter().map(|x| (x - emp_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        prop_assert!((emp_mean - mean).abs() <= 4.0 * (var / n as f64).sqrt());
        prop_assert!(((emp_var - var) / var).abs() <= 0.05);
    }

    #[test]
    fn pdf_is_a_density(m in mixture()) {
        let lo = m.components().iter().map(|c| c.mean - 12.0 * c.variance.sqrt()).fold(f64::INFINITY, f64::min);
        let hi = m.components().iter().map(|c| c.mean + 12.0 * c.variance.sqrt()).fold(f64::NEG_INFINITY, f64::max);
        let total = trapezoid(|x| m.pdf(x), lo, hi, 100_000);
        prop_assert!((total - 1.0).abs() <= 1e-6);
        prop_assert!(m.pdf(hi * 10.0 + 100.0) >= 0.0);
    }
}

#[test]
fn invalid_weights_are_rejected() {
    assert!(GaussianMixture::from_triples(&[(0.5, 0.0, 1.0), (0.4, 0.0, 1.0)]).is_err());
    assert!(GaussianMixture::from_triples(&[(1.0, 0.0, 0.0)]).is_err());
    assert!(GaussianMixture::from_triples(&[(1.2, 0.0, 1.0), (-0.2, 0.0, 1.0)]).is_err());
}
