//! Leon-Perron operators (hold with probability lambda, resample from pi
//! otherwise), the pushforward of an observable onto its value support, and
//! the grid discretization that reduces bounded observables to simple ones.
//!
//! These are the reduction steps that turn an MGF envelope question about an
//! arbitrary chain into a finite eigenvalue computation.

use crate::chain::{validate_chain, FiniteChain, Observable, StationaryDist};
use crate::error::Error;
use crate::linalg::{jacobi_max_eigenvalue, Mat};
use crate::rng::SplitMix64;

/// Values closer than this are merged into one support point.
const MERGE_TOL: f64 = 1e-14;
const DIST_TOL: f64 = 1e-12;

/// A simple (finitely-valued) centered function: support values with their
/// probabilities and a sup-norm bound.
#[derive(Debug, Clone)]
pub struct SimpleFunction {
    values: Vec<f64>,
    weights: Vec<f64>,
    c: f64,
}

impl SimpleFunction {
    pub fn new(values: Vec<f64>, weights: Vec<f64>, c: f64) -> Result<Self, Error> {
        if values.len() != weights.len() || values.is_empty() {
            return Err(Error::DimensionMismatch(
                "values and weights must be equal-length and nonempty".into(),
            ));
        }
        if !(c >= 0.0) {
            return Err(Error::DomainError(format!("bound must be nonnegative, got {c}")));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > DIST_TOL {
            return Err(Error::DomainError(format!(
                "weights sum to {sum:.17}, not 1"
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
            return Err(Error::DomainError(format!("negative weight {w}")));
        }
        let slack = 1e-12 * c.max(1.0);
        if let Some(v) = values.iter().find(|v| v.abs() > c + slack) {
            return Err(Error::OutOfBound {
                value: *v,
                bound: c,
            });
        }
        let mean: f64 = values.iter().zip(&weights).map(|(y, w)| y * w).sum();
        if mean.abs() > DIST_TOL {
            return Err(Error::DomainError(format!(
                "simple function has mean {mean:.3e}, expected 0"
            )));
        }
        Ok(SimpleFunction { values, weights, c })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Second moment under the weights.
    pub fn sigma2(&self) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(y, w)| w * y * y)
            .sum()
    }
}

/// The Leon-Perron transition matrix `lambda I + (1 - lambda) 1 mu^T`.
pub fn lp_matrix(lambda: f64, mu: &[f64]) -> Result<FiniteChain, Error> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::DomainError(format!(
            "lambda must be in [0, 1), got {lambda}"
        )));
    }
    let sum: f64 = mu.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL {
        return Err(Error::DomainError(format!(
            "mu sums to {sum:.17}, not 1"
        )));
    }
    let n = mu.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| (1.0 - lambda) * mu[j] + if i == j { lambda } else { 0.0 })
                .collect()
        })
        .collect();
    validate_chain(&rows)
}

/// Push an observable forward onto its value support:
/// `mu_j = pi({x : f(x) = y_j})`, with values equal within 1e-14 merged.
pub fn pushforward(pi: &StationaryDist, f: &Observable) -> SimpleFunction {
    let mut pairs: Vec<(f64, f64)> = f
        .values()
        .iter()
        .copied()
        .zip(pi.as_slice().iter().copied())
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut values = Vec::new();
    let mut weights = Vec::new();
    for (y, w) in pairs {
        match values.last_mut() {
            Some(last) if (y - *last as f64).abs() <= MERGE_TOL => {
                let last_w = weights.last_mut().unwrap();
                // weight-averaged representative of the merged support point
                let merged = (*last * *last_w + y * w) / (*last_w + w);
                *last = merged;
                *last_w += w;
            }
            _ => {
                values.push(y);
                weights.push(w);
            }
        }
    }
    SimpleFunction {
        values,
        weights,
        c: f.c(),
    }
}

/// Snap one value onto the ceiling grid with spacing `h = c/3k`:
/// `ceil((v + c)/h) * h - c`, clipped into [-c, c].
pub(crate) fn snap_to_grid(v: f64, c: f64, h: f64) -> f64 {
    (((v + c) / h).ceil() * h - c).min(c)
}

/// Grid-discretize a weighted sample of a bounded centered function and
/// return the normalized per-point values
/// `(f_k - mean(f_k)) / (1 + 1/3k)`.
///
/// For centered input the output satisfies `sup|out| <= c`, exact weighted
/// mean 0, and `sup|out - f| < c/k`.
pub fn discretize_values(
    values: &[f64],
    weights: &[f64],
    c: f64,
    k: usize,
) -> Result<Vec<f64>, Error> {
    if k == 0 {
        return Err(Error::DomainError("k must be at least 1".into()));
    }
    if !(c > 0.0) {
        return Err(Error::DomainError(format!("bound must be positive, got {c}")));
    }
    if values.len() != weights.len() || values.is_empty() {
        return Err(Error::DimensionMismatch(
            "values and weights must be equal-length and nonempty".into(),
        ));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > DIST_TOL || weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::DomainError("weights must form a distribution".into()));
    }
    if let Some(v) = values.iter().find(|v| v.abs() > c) {
        return Err(Error::OutOfBound {
            value: *v,
            bound: c,
        });
    }
    let h = c / (3.0 * k as f64);
    let snapped: Vec<f64> = values.iter().map(|&v| snap_to_grid(v, c, h)).collect();
    let mean: f64 = snapped.iter().zip(weights).map(|(v, w)| v * w).sum();
    let scale = 1.0 + 1.0 / (3.0 * k as f64);
    Ok(snapped.iter().map(|v| (v - mean) / scale).collect())
}

/// Grid-discretize and push forward onto the (merged) grid support.
pub fn discretize(
    values: &[f64],
    weights: &[f64],
    c: f64,
    k: usize,
) -> Result<SimpleFunction, Error> {
    let normalized = discretize_values(values, weights, c, k)?;
    let mut pairs: Vec<(f64, f64)> = normalized
        .into_iter()
        .zip(weights.iter().copied())
        .filter(|&(_, w)| w > 0.0)
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut out_values = Vec::new();
    let mut out_weights: Vec<f64> = Vec::new();
    for (y, w) in pairs {
        match out_values.last() {
            Some(&last) if (y - last as f64).abs() <= MERGE_TOL => {
                *out_weights.last_mut().unwrap() += w;
            }
            _ => {
                out_values.push(y);
                out_weights.push(w);
            }
        }
    }
    SimpleFunction::new(out_values, out_weights, c)
}

/// Mu-weighted norm of `E^{ty/2} Q E^{ty/2}` for the Leon-Perron matrix
/// `Q = lambda I + (1 - lambda) 1 mu^T`: the top eigenvalue of
/// `lambda E^{ty} + (1 - lambda) u u^T` with `u_j = e^{t y_j/2} sqrt(mu_j)`.
pub fn lp_perturbed_norm(lambda: f64, simple: &SimpleFunction, t: f64) -> Result<f64, Error> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::DomainError(format!(
            "lambda must be in [0, 1), got {lambda}"
        )));
    }
    let k = simple.len();
    let u: Vec<f64> = simple
        .values()
        .iter()
        .zip(simple.weights())
        .map(|(y, w)| (0.5 * t * y).exp() * w.sqrt())
        .collect();
    let mut m = Mat::outer(&u, &u).scale(1.0 - lambda);
    for j in 0..k {
        m[(j, j)] += lambda * (t * simple.values()[j]).exp();
    }
    jacobi_max_eigenvalue(&m)
}

/// Envelope on the norm of the tilted Leon-Perron operator:
/// `exp((sigma^2/c^2)(e^{tc} - 1 - tc) + sigma^2 lambda t^2/(1 - lambda - 5ct))`.
pub fn lemma31_bound(t: f64, sigma2: f64, c: f64, lambda: f64) -> Result<f64, Error> {
    if !(0.0..1.0).contains(&lambda) {
        return Err(Error::DomainError(format!(
            "lambda must be in [0, 1), got {lambda}"
        )));
    }
    let limit = (1.0 - lambda) / (5.0 * c);
    if !(0.0..limit).contains(&t) {
        return Err(Error::OutOfRange { t, limit });
    }
    let (g1, g2) = crate::bounds::g_components(t, sigma2, c, lambda);
    Ok((g1 + g2).exp())
}

/// Product MGF envelope for time-varying observables on a shared pi:
/// the product over steps of the tilted Leon-Perron norms of each pushed
/// forward observable.
pub fn mgf_envelope_timevarying(
    lambda: f64,
    pi: &StationaryDist,
    observables: &[Observable],
    t: f64,
) -> Result<f64, Error> {
    if !(t >= 0.0) {
        return Err(Error::DomainError(format!("t must be nonnegative, got {t}")));
    }
    let mut product = 1.0;
    for f in observables {
        if pi.mean(f.values()).abs() > DIST_TOL {
            return Err(Error::DomainError(
                "observable is not centered under the shared pi".into(),
            ));
        }
        product *= lp_perturbed_norm(lambda, &pushforward(pi, f), t)?;
    }
    Ok(product)
}

/// Deterministic random fixtures for tests: a centered weighted sample.
#[cfg(test)]
fn random_centered_sample(rng: &mut SplitMix64, len: usize) -> (Vec<f64>, Vec<f64>, f64) {
    let mut weights: Vec<f64> = (0..len).map(|_| 0.05 + rng.next_f64()).collect();
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    let raw: Vec<f64> = (0..len).map(|_| rng.next_in(-1.0, 1.0)).collect();
    let mean: f64 = raw.iter().zip(&weights).map(|(v, w)| v * w).sum();
    let values: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let c = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (values, weights, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{make_observable, stationary};
    use crate::spectral::{l2_gap, tilted_top_eigenvalue};

    #[test]
    fn lp_matrix_pure_resampling_is_rank_one() {
        let chain = lp_matrix(0.0, &[0.3, 0.7]).unwrap();
        for i in 0..2 {
            assert_eq!(chain.row(i), &[0.3, 0.7]);
        }
    }

    #[test]
    fn lp_matrix_entrywise() {
        let chain = lp_matrix(0.5, &[0.5, 0.5]).unwrap();
        assert_eq!(chain.row(0), &[0.75, 0.25]);
        assert_eq!(chain.row(1), &[0.25, 0.75]);
    }

    #[test]
    fn lp_matrix_gap_equals_lambda() {
        for lambda in [0.0, 0.3, 0.8] {
            let chain = lp_matrix(lambda, &[0.2, 0.5, 0.3]).unwrap();
            let pi = stationary(&chain).unwrap();
            assert!((l2_gap(&chain, &pi).unwrap() - lambda).abs() < 1e-12);
            // stationary distribution is mu itself
            for (a, b) in pi.as_slice().iter().zip([0.2, 0.5, 0.3]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pushforward_identity_support() {
        let pi = StationaryDist::from_weights(&[0.5, 0.5]).unwrap();
        let f = make_observable(&[1.0, -1.0], &pi, None).unwrap();
        let s = pushforward(&pi, &f);
        assert_eq!(s.values(), &[-1.0, 1.0]);
        assert_eq!(s.weights(), &[0.5, 0.5]);
    }

    #[test]
    fn pushforward_merges_equal_values() {
        let pi = StationaryDist::from_weights(&[0.25, 0.5, 0.25]).unwrap();
        let f = make_observable(&[0.5, 0.5, -1.5], &pi, None).unwrap();
        let s = pushforward(&pi, &f);
        assert_eq!(s.len(), 2);
        assert_eq!(s.weights(), &[0.25, 0.75]);
        assert!((s.values()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn pushforward_preserves_sigma2() {
        let mut rng = SplitMix64::new(0xABCD);
        for _ in 0..20 {
            let (values, weights, _c) = random_centered_sample(&mut rng, 6);
            let pi = StationaryDist::from_weights(&weights).unwrap();
            let f = make_observable(&values, &pi, None).unwrap();
            let s = pushforward(&pi, &f);
            assert!((s.sigma2() - f.sigma2()).abs() < 1e-12);
        }
    }

    #[test]
    fn grid_snap_reference_points() {
        let h = 1.0 / 3.0;
        assert!((snap_to_grid(0.5, 1.0, h) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(snap_to_grid(-1.0, 1.0, h), -1.0);
        assert_eq!(snap_to_grid(1.0, 1.0, h), 1.0);
    }

    #[test]
    fn discretize_properties_over_random_draws() {
        let mut rng = SplitMix64::new(0x00D15C);
        for trial in 0..100 {
            let len = 2 + (rng.next_u64() % 7) as usize;
            let (values, weights, c) = random_centered_sample(&mut rng, len);
            if c < 1e-3 {
                continue;
            }
            let k = 1 + (trial % 50);
            let out = discretize_values(&values, &weights, c, k).unwrap();
            let mean: f64 = out.iter().zip(&weights).map(|(v, w)| v * w).sum();
            assert!(mean.abs() < 1e-12);
            for (o, v) in out.iter().zip(&values) {
                assert!(o.abs() <= c * (1.0 + 1e-12), "sup bound violated");
                assert!((o - v).abs() < c / k as f64, "approximation bound violated");
            }
        }
    }

    #[test]
    fn discretize_error_shrinks_with_k() {
        let mut rng = SplitMix64::new(7);
        let (values, weights, c) = random_centered_sample(&mut rng, 5);
        let sup_err = |k: usize| {
            let out = discretize_values(&values, &weights, c, k).unwrap();
            out.iter()
                .zip(&values)
                .map(|(o, v)| (o - v).abs())
                .fold(0.0, f64::max)
        };
        assert!(sup_err(32) <= sup_err(2));
    }

    #[test]
    fn discretize_rejects_out_of_bound_values() {
        let err = discretize_values(&[1.5, -0.5], &[0.5, 0.5], 1.0, 3).unwrap_err();
        assert!(matches!(err, Error::OutOfBound { .. }));
    }

    #[test]
    fn lp_perturbed_norm_rank_one_is_mgf() {
        let s = SimpleFunction::new(vec![1.0, -1.0], vec![0.5, 0.5], 1.0).unwrap();
        let v = lp_perturbed_norm(0.0, &s, 0.1).unwrap();
        assert!((v - (0.1f64).cosh()).abs() < 1e-13);
    }

    #[test]
    fn lp_perturbed_norm_at_zero_tilt_is_one() {
        let s = SimpleFunction::new(vec![0.5, -0.5], vec![0.5, 0.5], 0.5).unwrap();
        for lambda in [0.0, 0.4, 0.9] {
            assert!((lp_perturbed_norm(lambda, &s, 0.0).unwrap() - 1.0).abs() < 1e-13);
        }
    }

    #[test]
    fn lp_perturbed_norm_matches_eigencurve_route() {
        let s = SimpleFunction::new(vec![0.75, -0.25], vec![0.25, 0.75], 0.75).unwrap();
        for &t in &[-0.1, -0.05, 0.05, 0.1] {
            let lambda = 0.45;
            let direct = lp_perturbed_norm(lambda, &s, t).unwrap();
            let chain = lp_matrix(lambda, s.weights()).unwrap();
            let pi = StationaryDist::from_weights(s.weights()).unwrap();
            let via_chain = tilted_top_eigenvalue(chain.transition(), &pi, s.values(), t).unwrap();
            assert!((direct - via_chain).abs() < 1e-12);
        }
    }

    #[test]
    fn pushforward_norm_equals_original_space_norm() {
        // Lemma 3.2 equality surface: the Leon-Perron operator built on the
        // original states and the pushforward chain give the same norm.
        let pi = StationaryDist::from_weights(&[0.15, 0.35, 0.3, 0.2]).unwrap();
        let f = make_observable(&[0.5, 0.5, -0.25, -1.0], &pi, None).unwrap();
        let lambda = 0.35;
        let lp_original = lp_matrix(lambda, pi.as_slice()).unwrap();
        let s = pushforward(&pi, &f);
        assert!(s.len() < 4);
        for &t in &[-0.1, -0.05, 0.05, 0.1] {
            let original =
                tilted_top_eigenvalue(lp_original.transition(), &pi, f.values(), t).unwrap();
            let pushed = lp_perturbed_norm(lambda, &s, t).unwrap();
            assert!((original - pushed).abs() < 1e-10, "t={t}");
        }
    }

    #[test]
    fn lemma31_reference_values() {
        let v = lemma31_bound(0.1, 1.0, 1.0, 0.0).unwrap();
        assert!((v - 1.0051843).abs() < 1e-6);
        assert!((0.1f64).cosh() <= v);
        assert_eq!(lemma31_bound(0.0, 1.0, 1.0, 0.4).unwrap(), 1.0);
        let v = lemma31_bound(0.1, 1.0, 1.0, 0.4).unwrap();
        assert!((v - 1.046206).abs() < 1e-5);
    }

    #[test]
    fn lemma31_dominates_lp_norm_on_grid() {
        let mut rng = SplitMix64::new(0xFACE);
        for _ in 0..10 {
            let (values, weights, c) = random_centered_sample(&mut rng, 4);
            if c < 1e-3 {
                continue;
            }
            let s = SimpleFunction::new(values, weights, c).unwrap();
            for lambda in [0.0, 0.3, 0.6] {
                let limit = (1.0 - lambda) / (5.0 * c);
                for j in 1..=9 {
                    let t = 0.99 * limit * j as f64 / 9.0;
                    let norm = lp_perturbed_norm(lambda, &s, t).unwrap();
                    let bound = lemma31_bound(t, s.sigma2(), c, lambda).unwrap();
                    assert!(norm <= bound * (1.0 + 1e-12), "lambda={lambda} t={t}");
                }
            }
        }
    }

    #[test]
    fn envelope_timevarying_is_product_of_factors() {
        let pi = StationaryDist::from_weights(&[0.5, 0.5]).unwrap();
        let f = make_observable(&[1.0, -1.0], &pi, None).unwrap();
        let g = make_observable(&[-1.0, 1.0], &pi, None).unwrap();
        let t = 0.05;
        let lambda = 0.4;
        let product =
            mgf_envelope_timevarying(lambda, &pi, &[f.clone(), g.clone(), f.clone()], t).unwrap();
        let a = lp_perturbed_norm(lambda, &pushforward(&pi, &f), t).unwrap();
        let b = lp_perturbed_norm(lambda, &pushforward(&pi, &g), t).unwrap();
        assert!((product - a * b * a).abs() < 1e-12);
        assert_eq!(
            mgf_envelope_timevarying(lambda, &pi, &[f.clone()], 0.0).unwrap(),
            1.0
        );
    }
}
