//! Finite-state Markov chains: validation, stationary distributions,
//! pi-weighted geometry, adjoints, and centered observables.
//!
//! All tolerances are fixed constants so that test baselines stay bit-stable.

use crate::error::Error;
use crate::linalg::{lu_factor, Mat};
use crate::rng::SplitMix64;

/// Row-sum and centering tolerance.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Minimum stationary probability; below this the weighted inner product is
/// numerically meaningless.
pub const SUPPORT_FLOOR: f64 = 1e-14;
/// Componentwise residual allowed on pi^T P = pi^T.
pub const STATIONARY_RESIDUAL_TOL: f64 = 1e-10;
/// Detailed-balance tolerance for reversibility checks.
pub const REVERSIBILITY_TOL: f64 = 1e-10;

const POWER_AGREE_TOL: f64 = 1e-8;
const POWER_MAX_ITERS: usize = 50_000;
const POWER_SEED: u64 = 0x5EED_0001;

/// A validated row-stochastic transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteChain {
    n_states: usize,
    transition: Mat,
}

impl FiniteChain {
    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn transition(&self) -> &Mat {
        &self.transition
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.transition.row(i)
    }

    /// First detailed-balance violation `pi(x)P(x,y) != pi(y)P(y,x)`, if any.
    pub fn reversibility_violation(&self, pi: &StationaryDist) -> Option<(usize, usize)> {
        let n = self.n_states;
        let p = &self.transition;
        let w = pi.as_slice();
        for x in 0..n {
            for y in x + 1..n {
                if (w[x] * p[(x, y)] - w[y] * p[(y, x)]).abs() > REVERSIBILITY_TOL {
                    return Some((x, y));
                }
            }
        }
        None
    }

    pub fn is_reversible(&self, pi: &StationaryDist) -> bool {
        self.reversibility_violation(pi).is_none()
    }
}

/// Strictly positive stationary distribution of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDist {
    pi: Vec<f64>,
}

impl StationaryDist {
    /// Validate an externally supplied distribution (used for Leon-Perron
    /// constructions where pi is part of the model, not solved for).
    pub fn from_weights(pi: &[f64]) -> Result<Self, Error> {
        let sum: f64 = pi.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::DomainError(format!(
                "distribution sums to {sum:.17}, not 1"
            )));
        }
        for (i, &w) in pi.iter().enumerate() {
            if !(w >= SUPPORT_FLOOR) {
                return Err(Error::DegenerateSupport { state: i, value: w });
            }
        }
        Ok(StationaryDist { pi: pi.to_vec() })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.pi
    }

    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Expectation of `f` under pi.
    pub fn mean(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.pi.len());
        self.pi.iter().zip(f).map(|(w, v)| w * v).sum()
    }

    /// Weighted inner product `<a, b>_pi`.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        assert_eq!(a.len(), self.pi.len());
        assert_eq!(b.len(), self.pi.len());
        self.pi
            .iter()
            .zip(a.iter().zip(b))
            .map(|(w, (x, y))| w * x * y)
            .sum()
    }

    /// The projection onto constants, `Pi = 1 pi^T` (every row equals pi).
    pub fn projection(&self) -> Mat {
        let ones = vec![1.0; self.pi.len()];
        Mat::outer(&ones, &self.pi)
    }
}

/// A bounded, pi-centered observable with its variance.
#[derive(Debug, Clone, PartialEq)]
pub struct Observable {
    values: Vec<f64>,
    c: f64,
    sigma2: f64,
}

impl Observable {
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }
}

/// Validate a square row-stochastic matrix.
///
/// Rows are scanned left to right: a negative entry is reported before the
/// row-sum defect of the same row.
pub fn validate_chain(rows: &[Vec<f64>]) -> Result<FiniteChain, Error> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::DimensionMismatch("empty matrix".into()));
    }
    for row in rows {
        if row.len() != n {
            return Err(Error::NotSquare {
                rows: n,
                cols: row.len(),
            });
        }
    }
    for (i, row) in rows.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if !(p >= 0.0) {
                return Err(Error::NegativeEntry { row: i, col: j });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::RowSumViolation { row: i, sum });
        }
    }
    Ok(FiniteChain {
        n_states: n,
        transition: Mat::from_rows(rows),
    })
}

pub fn chain_from_mat(m: Mat) -> Result<FiniteChain, Error> {
    let rows: Vec<Vec<f64>> = (0..m.rows()).map(|i| m.row(i).to_vec()).collect();
    validate_chain(&rows)
}

/// Solve for the unique stationary distribution.
///
/// One row of `P^T - I` is replaced by the all-ones normalization row and the
/// dense system is solved by LU with partial pivoting. Uniqueness is then
/// certified by an independently seeded power iteration on the lazy chain
/// `(P + I)/2` (aperiodic, same stationary distribution); disagreement beyond
/// 1e-8 reports `NonUniqueStationary`.
pub fn stationary(chain: &FiniteChain) -> Result<StationaryDist, Error> {
    let n = chain.n_states;
    let p = &chain.transition;
    let mut a = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = p[(j, i)] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = vec![0.0; n];
    b[n - 1] = 1.0;
    let factors = lu_factor(&a).map_err(|e| match e {
        Error::SingularSolve => Error::NonUniqueStationary,
        other => other,
    })?;
    let mut pi = factors.solve(&b);
    let total: f64 = pi.iter().sum();
    for w in pi.iter_mut() {
        *w /= total;
    }
    for (i, &w) in pi.iter().enumerate() {
        if !(w >= SUPPORT_FLOOR) {
            return Err(Error::DegenerateSupport { state: i, value: w });
        }
    }
    // residual of the invariance equation
    let pip = p.vecmat(&pi);
    for i in 0..n {
        if (pip[i] - pi[i]).abs() > STATIONARY_RESIDUAL_TOL {
            return Err(Error::NonUniqueStationary);
        }
    }
    // second, independently seeded route: power iteration on the lazy chain
    let mut rng = SplitMix64::new(POWER_SEED);
    let mut v: Vec<f64> = (0..n).map(|_| 0.5 + rng.next_f64()).collect();
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
    for _ in 0..POWER_MAX_ITERS {
        let vp = p.vecmat(&v);
        let mut next: Vec<f64> = (0..n).map(|i| 0.5 * (vp[i] + v[i])).collect();
        let s: f64 = next.iter().sum();
        next.iter_mut().for_each(|x| *x /= s);
        let step = v
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        v = next;
        if step < 1e-14 {
            break;
        }
    }
    let disagreement = v
        .iter()
        .zip(&pi)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if disagreement > POWER_AGREE_TOL {
        return Err(Error::NonUniqueStationary);
    }
    Ok(StationaryDist { pi })
}

/// Adjoint (time reversal) of the chain in the pi-weighted space:
/// `P*(x,y) = pi(y) P(y,x) / pi(x)`.
pub fn adjoint(chain: &FiniteChain, pi: &StationaryDist) -> Result<Mat, Error> {
    let n = chain.n_states;
    if pi.len() != n {
        return Err(Error::DimensionMismatch(
            "pi length does not match chain".into(),
        ));
    }
    let w = pi.as_slice();
    for (i, &x) in w.iter().enumerate() {
        if !(x >= SUPPORT_FLOOR) {
            return Err(Error::DegenerateSupport { state: i, value: x });
        }
    }
    let p = &chain.transition;
    let mut out = Mat::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            out[(x, y)] = w[y] * p[(y, x)] / w[x];
        }
    }
    Ok(out)
}

/// Additive reversiblization `R = (P + P*)/2`; self-adjoint and row-stochastic.
pub fn additive_reversiblization(chain: &FiniteChain, pi: &StationaryDist) -> Result<Mat, Error> {
    let adj = adjoint(chain, pi)?;
    Ok(chain.transition.add(&adj).scale(0.5))
}

/// Center `raw` under pi and package it with its bound and variance.
///
/// `c_opt`, when given, must dominate `max|raw - pi(raw)|`; otherwise the
/// bound defaults to that maximum.
pub fn make_observable(
    raw: &[f64],
    pi: &StationaryDist,
    c_opt: Option<f64>,
) -> Result<Observable, Error> {
    if raw.len() != pi.len() {
        return Err(Error::DimensionMismatch(
            "observable length does not match pi".into(),
        ));
    }
    let mean = pi.mean(raw);
    let values: Vec<f64> = raw.iter().map(|v| v - mean).collect();
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let c = match c_opt {
        Some(c) => {
            if c < max_abs {
                return Err(Error::BoundTooSmall {
                    required: max_abs,
                    given: c,
                });
            }
            c
        }
        None => max_abs,
    };
    let sigma2 = pi.inner(&values, &values);
    Ok(Observable { values, c, sigma2 })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn two_state(p: f64) -> FiniteChain {
        validate_chain(&[vec![1.0 - p, p], vec![p, 1.0 - p]]).unwrap()
    }

    fn birth_death() -> FiniteChain {
        validate_chain(&[
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap()
    }

    fn three_cycle() -> FiniteChain {
        validate_chain(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn accepts_symmetric_stochastic_matrix() {
        assert!(validate_chain(&[vec![0.7, 0.3], vec![0.3, 0.7]]).is_ok());
    }

    #[test]
    fn rejects_row_sum_defect() {
        let err = validate_chain(&[vec![0.7, 0.2], vec![0.3, 0.7]]).unwrap_err();
        match err {
            Error::RowSumViolation { row, sum } => {
                assert_eq!(row, 0);
                assert!((sum - 0.9).abs() < 1e-15);
            }
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn rejects_negative_entry() {
        let err = validate_chain(&[vec![1.1, -0.1], vec![0.3, 0.7]]).unwrap_err();
        assert_eq!(err, Error::NegativeEntry { row: 0, col: 1 });
    }

    #[test]
    fn stationary_of_symmetric_two_state_is_uniform() {
        let pi = stationary(&two_state(0.3)).unwrap();
        assert!((pi.as_slice()[0] - 0.5).abs() < 1e-14);
        assert!((pi.as_slice()[1] - 0.5).abs() < 1e-14);
    }

    #[test]
    fn stationary_of_birth_death_chain() {
        let pi = stationary(&birth_death()).unwrap();
        let expected = [0.25, 0.5, 0.25];
        for (a, b) in pi.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-13);
        }
    }

    #[test]
    fn identity_chain_is_non_unique() {
        let chain = validate_chain(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert_eq!(stationary(&chain).unwrap_err(), Error::NonUniqueStationary);
    }

    #[test]
    fn absorbing_state_degenerates_support() {
        let chain = validate_chain(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        assert!(matches!(
            stationary(&chain),
            Err(Error::DegenerateSupport { .. }) | Err(Error::NonUniqueStationary)
        ));
    }

    #[test]
    fn stationary_residual_is_tight() {
        for chain in [two_state(0.3), birth_death(), three_cycle()] {
            let pi = stationary(&chain).unwrap();
            let pip = chain.transition().vecmat(pi.as_slice());
            for (a, b) in pip.iter().zip(pi.as_slice()) {
                assert!((a - b).abs() <= STATIONARY_RESIDUAL_TOL);
            }
        }
    }

    #[test]
    fn adjoint_fixes_reversible_chain() {
        let chain = two_state(0.3);
        let pi = stationary(&chain).unwrap();
        let adj = adjoint(&chain, &pi).unwrap();
        assert!(adj.sub(chain.transition()).max_abs() < 1e-14);
    }

    #[test]
    fn adjoint_reverses_cycle() {
        let chain = three_cycle();
        let pi = stationary(&chain).unwrap();
        let adj = adjoint(&chain, &pi).unwrap();
        let reversed = validate_chain(&[
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
        ])
        .unwrap();
        assert!(adj.sub(reversed.transition()).max_abs() < 1e-13);
    }

    #[test]
    fn adjoint_of_projection_is_projection() {
        let pi = StationaryDist::from_weights(&[0.25, 0.5, 0.25]).unwrap();
        let proj = pi.projection();
        let chain = chain_from_mat(proj.clone()).unwrap();
        let adj = adjoint(&chain, &pi).unwrap();
        assert!(adj.sub(&proj).max_abs() < 1e-14);
    }

    #[test]
    fn adjoint_is_involution() {
        let chain = three_cycle();
        let pi = stationary(&chain).unwrap();
        let adj = adjoint(&chain, &pi).unwrap();
        let adj_chain = chain_from_mat(adj).unwrap();
        let back = adjoint(&adj_chain, &pi).unwrap();
        assert!(back.sub(chain.transition()).max_abs() < 1e-12);
    }

    #[test]
    fn reversiblization_of_cycle_is_symmetric_walk() {
        let chain = three_cycle();
        let pi = stationary(&chain).unwrap();
        let r = additive_reversiblization(&chain, &pi).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 0.0 } else { 0.5 };
                assert!((r[(i, j)] - expect).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn reversiblization_satisfies_detailed_balance() {
        let chain = birth_death();
        let pi = stationary(&chain).unwrap();
        let r = additive_reversiblization(&chain, &pi).unwrap();
        let w = pi.as_slice();
        for x in 0..3 {
            for y in 0..3 {
                assert!((w[x] * r[(x, y)] - w[y] * r[(y, x)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn observable_centering_and_variance() {
        let pi = StationaryDist::from_weights(&[0.5, 0.5]).unwrap();
        let f = make_observable(&[2.0, 0.0], &pi, None).unwrap();
        assert_eq!(f.values(), &[1.0, -1.0]);
        assert!((f.sigma2() - 1.0).abs() < 1e-15);
        assert!((f.c() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn observable_already_centered() {
        let pi = StationaryDist::from_weights(&[0.25, 0.5, 0.25]).unwrap();
        let f = make_observable(&[1.0, 0.0, -1.0], &pi, None).unwrap();
        assert_eq!(f.values(), &[1.0, 0.0, -1.0]);
        assert!((f.sigma2() - 0.5).abs() < 1e-15);
        assert!((f.c() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn observable_rejects_small_bound() {
        let pi = StationaryDist::from_weights(&[0.5, 0.5]).unwrap();
        let err = make_observable(&[1.0, -1.0], &pi, Some(0.5)).unwrap_err();
        assert!(matches!(err, Error::BoundTooSmall { .. }));
    }

    #[test]
    fn observable_variance_below_c_squared() {
        let pi = StationaryDist::from_weights(&[0.1, 0.2, 0.3, 0.4]).unwrap();
        let f = make_observable(&[3.0, -1.0, 0.5, 2.0], &pi, None).unwrap();
        assert!(pi.mean(f.values()).abs() <= 1e-12);
        assert!(f.sigma2() <= f.c() * f.c() + 1e-15);
    }
}
