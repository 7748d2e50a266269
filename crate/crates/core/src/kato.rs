//! Perturbation series for the largest eigenvalue of the tilted operator
//! `P E^{tf}` on reversible chains, with the coefficient and radius bounds
//! that power the MGF envelopes.
//!
//! The eigenvalue curve itself (`eigencurve`) is computed exactly by a
//! symmetric eigensolve and serves as the oracle the series is validated
//! against.

use std::collections::HashMap;

use crate::chain::{FiniteChain, Observable, StationaryDist};
use crate::error::Error;
use crate::linalg::Mat;
use crate::spectral::{
    reduced_resolvent, right_gap, tilted_top_eigenvalue, weighted_operator_norm,
};

/// Maximum supported series order. Keeps the composition enumeration under
/// ~1e5 trace terms.
pub const MAX_ORDER: usize = 8;

/// Truncated eigenvalue series with a convergence-radius lower bound.
#[derive(Debug, Clone)]
pub struct KatoSeries {
    /// Coefficients beta^(0) .. beta^(order).
    pub coefficients: Vec<f64>,
    pub order: usize,
    /// Lower bound on the convergence radius, `(1 - l)/((3 - l) c)` with
    /// `l = lambda_plus ∨ 0`.
    pub t0_lower: f64,
}

impl KatoSeries {
    /// Evaluate the truncated series at tilt `t`.
    pub fn eval(&self, t: f64) -> f64 {
        let mut acc = 0.0;
        for &b in self.coefficients.iter().rev() {
            acc = acc * t + b;
        }
        acc
    }
}

fn require_reversible(chain: &FiniteChain, pi: &StationaryDist) -> Result<(), Error> {
    if let Some((row, col)) = chain.reversibility_violation(pi) {
        return Err(Error::NotReversible { row, col });
    }
    Ok(())
}

/// Largest eigenvalue of `P diag(e^{t f})` for a reversible chain; equals the
/// pi-weighted norm of `E^{tf/2} P E^{tf/2}` by Perron-Frobenius.
pub fn eigencurve(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    t: f64,
) -> Result<f64, Error> {
    require_reversible(chain, pi)?;
    tilted_top_eigenvalue(chain.transition(), pi, f.values(), t)
}

/// Compositions of `total` into `parts` positive integers.
fn compositions_positive(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(parts);
    fn rec(remaining: usize, parts_left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            if remaining >= 1 {
                current.push(remaining);
                out.push(current.clone());
                current.pop();
            }
            return;
        }
        // keep at least 1 for each remaining part
        for v in 1..=remaining.saturating_sub(parts_left - 1) {
            current.push(v);
            rec(remaining - v, parts_left - 1, current, out);
            current.pop();
        }
    }
    if parts >= 1 {
        rec(total, parts, &mut current, &mut out);
    }
    out
}

/// Compositions of `total` into `parts` nonnegative integers.
fn compositions_nonneg(total: usize, parts: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current = Vec::with_capacity(parts);
    fn rec(remaining: usize, parts_left: usize, current: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts_left == 1 {
            current.push(remaining);
            out.push(current.clone());
            current.pop();
            return;
        }
        for v in 0..=remaining {
            current.push(v);
            rec(remaining - v, parts_left - 1, current, out);
            current.pop();
        }
    }
    if parts >= 1 {
        rec(total, parts, &mut current, &mut out);
    }
    out
}

fn trace(m: &Mat) -> f64 {
    (0..m.rows()).map(|i| m[(i, i)]).sum()
}

/// Series coefficients beta^(0) .. beta^(order) by direct enumeration of the
/// composition sums:
///
/// ```text
/// beta^(n) = sum_{p=1}^{n} (1/p) sum_{v, k} -tr(P D^{v1} Z^(k1) ... P D^{vp} Z^(kp))
///                                            / (v1! ... vp!)
/// ```
///
/// over positive compositions `v` of `n` and nonnegative compositions `k` of
/// `p - 1`, with `Z^(0) = -Pi` and `Z^(k) = Z^k` otherwise. Composition lists
/// are memoized per `(n, p)`; summation order is fixed for reproducibility.
pub fn kato_coefficients(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    order: usize,
) -> Result<KatoSeries, Error> {
    if order > MAX_ORDER {
        return Err(Error::OrderTooHigh {
            order,
            cap: MAX_ORDER,
        });
    }
    require_reversible(chain, pi)?;
    let n_states = chain.n_states();
    let z = reduced_resolvent(chain, pi)?;
    let p = chain.transition();

    // Z^(k): Z^(0) = -Pi, Z^(k) = Z^k
    let mut z_pow: Vec<Mat> = Vec::with_capacity(order.max(1));
    z_pow.push(pi.projection().scale(-1.0));
    if order >= 1 {
        z_pow.push(z.matrix().clone());
        for k in 2..order {
            let next = z_pow[k - 1].matmul(z.matrix());
            z_pow.push(next);
        }
    }

    // P D^v for v = 1..order
    let fv = f.values();
    let mut p_dv: Vec<Mat> = Vec::with_capacity(order + 1);
    p_dv.push(p.clone()); // v = 0 placeholder, unused
    for v in 1..=order.max(1) {
        let mut m = Mat::zeros(n_states, n_states);
        for i in 0..n_states {
            for j in 0..n_states {
                m[(i, j)] = p[(i, j)] * fv[j].powi(v as i32);
            }
        }
        p_dv.push(m);
    }

    // factor matrices W[v][k] = P D^v Z^(k)
    let mut factors: HashMap<(usize, usize), Mat> = HashMap::new();
    let factor = |factors: &mut HashMap<(usize, usize), Mat>, v: usize, k: usize| -> Mat {
        factors
            .entry((v, k))
            .or_insert_with(|| p_dv[v].matmul(&z_pow[k]))
            .clone()
    };

    let mut v_comp_cache: HashMap<(usize, usize), Vec<Vec<usize>>> = HashMap::new();
    let mut k_comp_cache: HashMap<usize, Vec<Vec<usize>>> = HashMap::new();

    let factorials: Vec<f64> = {
        let mut f = vec![1.0f64; order + 1];
        for i in 1..=order {
            f[i] = f[i - 1] * i as f64;
        }
        f
    };

    let mut coefficients = vec![0.0f64; order + 1];
    coefficients[0] = 1.0;
    for n in 1..=order {
        let mut beta = 0.0;
        for parts in 1..=n {
            let v_comps = v_comp_cache
                .entry((n, parts))
                .or_insert_with(|| compositions_positive(n, parts))
                .clone();
            let k_comps = k_comp_cache
                .entry(parts)
                .or_insert_with(|| compositions_nonneg(parts - 1, parts))
                .clone();
            let mut part_sum = 0.0;
            for v in &v_comps {
                let v_factorial: f64 = v.iter().map(|&vi| factorials[vi]).product();
                for k in &k_comps {
                    let mut acc = factor(&mut factors, v[0], k[0]);
                    for i in 1..parts {
                        acc = acc.matmul(&factor(&mut factors, v[i], k[i]));
                    }
                    part_sum += -trace(&acc) / v_factorial;
                }
            }
            beta += part_sum / parts as f64;
        }
        coefficients[n] = beta;
    }

    let lambda_plus = right_gap(chain, pi)?;
    let t0_lower = convergence_radius(f.c(), lambda_plus.max(0.0))?;
    Ok(KatoSeries {
        coefficients,
        order,
        t0_lower,
    })
}

/// Exact rational with 64-bit numerator/denominator and overflow checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(mut a: i64, mut b: i64) -> i64 {
    a = a.abs();
    b = b.abs();
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Result<Self, Error> {
        if den == 0 {
            return Err(Error::DomainError("zero denominator".into()));
        }
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den).max(1);
        Ok(Rational {
            num: sign * (num / g),
            den: (den / g).abs(),
        })
    }

    pub fn from_integer(n: i64) -> Self {
        Rational { num: n, den: 1 }
    }

    pub fn checked_add(self, other: Rational) -> Result<Rational, Error> {
        let num = self
            .num
            .checked_mul(other.den)
            .and_then(|a| other.num.checked_mul(self.den).and_then(|b| a.checked_add(b)))
            .ok_or(Error::RationalOverflow)?;
        let den = self
            .den
            .checked_mul(other.den)
            .ok_or(Error::RationalOverflow)?;
        Rational::new(num, den)
    }

    pub fn checked_mul(self, other: Rational) -> Result<Rational, Error> {
        let num = self
            .num
            .checked_mul(other.num)
            .ok_or(Error::RationalOverflow)?;
        let den = self
            .den
            .checked_mul(other.den)
            .ok_or(Error::RationalOverflow)?;
        Rational::new(num, den)
    }

    /// The integer value, when the reduced denominator is 1.
    pub fn as_integer(&self) -> Option<i64> {
        (self.den == 1).then_some(self.num)
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// Exact comparison against an integer.
    pub fn le_integer(&self, rhs: i64) -> Result<bool, Error> {
        let scaled = rhs.checked_mul(self.den).ok_or(Error::RationalOverflow)?;
        Ok(self.num <= scaled)
    }
}

fn binomial_i64(n: u64, k: u64) -> Result<i64, Error> {
    if k > n {
        return Ok(0);
    }
    let k = k.min(n - k);
    let mut acc: i64 = 1;
    for i in 1..=k {
        // exact at every step: acc * (n - k + i) is divisible by i
        acc = acc
            .checked_mul((n - k + i) as i64)
            .ok_or(Error::RationalOverflow)?;
        acc /= i as i64;
    }
    Ok(acc)
}

/// `sum_{p=1}^{n} (1/p) C(n-1, p-1) C(2p-2, p-1)` in exact arithmetic.
///
/// The value is always an integer: `(1/p) C(2p-2, p-1)` is the (p-1)-th
/// Catalan number.
pub fn combinatorial_weight(n: usize) -> Result<Rational, Error> {
    if n < 3 {
        return Err(Error::DomainError(format!(
            "combinatorial weight defined for n >= 3, got {n}"
        )));
    }
    let mut acc = Rational::from_integer(0);
    for p in 1..=n {
        let a = binomial_i64((n - 1) as u64, (p - 1) as u64)?;
        let b = binomial_i64((2 * p - 2) as u64, (p - 1) as u64)?;
        let term = Rational::new(a.checked_mul(b).ok_or(Error::RationalOverflow)?, p as i64)?;
        acc = acc.checked_add(term)?;
    }
    Ok(acc)
}

/// `(1 - lambda_plus) / ((3 - lambda_plus) c)`, the convergence-radius lower
/// bound of the series.
pub fn convergence_radius(c: f64, lambda_plus: f64) -> Result<f64, Error> {
    if lambda_plus < 0.0 {
        return Err(Error::NegativeLambdaPlus(lambda_plus));
    }
    if lambda_plus >= 1.0 {
        return Err(Error::DomainError(format!(
            "lambda_plus must be below 1, got {lambda_plus}"
        )));
    }
    if !(c > 0.0) {
        return Err(Error::DomainError(format!("c must be positive, got {c}")));
    }
    Ok((1.0 - lambda_plus) / ((3.0 - lambda_plus) * c))
}

/// Upper bound on `|beta^(n)|`:
///
/// `|pi(f^n)|/n! + (sigma^2 |||P - Pi|||_pi / 5c) (5c/(1 - lambda_plus))^{n-1}`
/// for n >= 3, and `sigma^2/2 + |||P - Pi|||_pi sigma^2/(1 - lambda_plus)`
/// for n = 2. Requires a reversible chain with `lambda_plus >= 0`.
pub fn coefficient_bound(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
) -> Result<f64, Error> {
    if n < 2 {
        return Err(Error::DomainError(format!(
            "coefficient bound defined for n >= 2, got {n}"
        )));
    }
    require_reversible(chain, pi)?;
    let lambda_plus = right_gap(chain, pi)?;
    if lambda_plus < 0.0 {
        return Err(Error::NegativeLambdaPlus(lambda_plus));
    }
    let deviation = chain.transition().sub(&pi.projection());
    let norm = weighted_operator_norm(&deviation, pi)?;
    let sigma2 = f.sigma2();
    if n == 2 {
        return Ok(0.5 * sigma2 + norm * sigma2 / (1.0 - lambda_plus));
    }
    let c = f.c();
    let moment: f64 = pi
        .as_slice()
        .iter()
        .zip(f.values())
        .map(|(w, v)| w * v.powi(n as i32))
        .sum();
    let factorial: f64 = (1..=n).map(|i| i as f64).product();
    let ratio = 5.0 * c / (1.0 - lambda_plus);
    Ok(moment.abs() / factorial + (sigma2 * norm / (5.0 * c)) * ratio.powi(n as i32 - 1))
}

/// MGF-envelope bound on the eigencurve:
/// `exp((sigma^2/c^2)(e^{tc} - 1 - tc) + sigma^2 |||P - Pi|||_pi t^2 / (1 - lambda_plus - 5ct))`.
pub fn lemma33_bound(
    t: f64,
    sigma2: f64,
    c: f64,
    lambda_plus: f64,
    norm_p_minus_pi: f64,
) -> Result<f64, Error> {
    if lambda_plus < 0.0 {
        return Err(Error::NegativeLambdaPlus(lambda_plus));
    }
    if lambda_plus >= 1.0 {
        return Err(Error::DomainError(format!(
            "lambda_plus must be below 1, got {lambda_plus}"
        )));
    }
    let limit = (1.0 - lambda_plus) / (5.0 * c);
    if !(0.0..limit).contains(&t) {
        return Err(Error::OutOfRange { t, limit });
    }
    let g1 = crate::bounds::g_components(t, sigma2, c, 0.0).0;
    let tail = sigma2 * norm_p_minus_pi * t * t / (1.0 - lambda_plus - 5.0 * c * t);
    Ok((g1 + tail).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain::{make_observable, stationary, validate_chain};
    use crate::spectral::asymptotic_variance;

    fn two_state() -> (FiniteChain, StationaryDist, Observable) {
        let chain = validate_chain(&[vec![0.7, 0.3], vec![0.3, 0.7]]).unwrap();
        let pi = stationary(&chain).unwrap();
        let f = make_observable(&[1.0, -1.0], &pi, None).unwrap();
        (chain, pi, f)
    }

    fn birth_death() -> (FiniteChain, StationaryDist, Observable) {
        let chain = validate_chain(&[
            vec![0.5, 0.5, 0.0],
            vec![0.25, 0.5, 0.25],
            vec![0.0, 0.5, 0.5],
        ])
        .unwrap();
        let pi = stationary(&chain).unwrap();
        let f = make_observable(&[1.0, 0.0, -1.0], &pi, None).unwrap();
        (chain, pi, f)
    }

    #[test]
    fn eigencurve_at_zero_is_one() {
        let (chain, pi, f) = two_state();
        let v = eigencurve(&chain, &pi, &f, 0.0).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eigencurve_two_state_closed_form() {
        let (chain, pi, f) = two_state();
        let v = eigencurve(&chain, &pi, &f, 0.1).unwrap();
        // 2x2 closed form (T + sqrt(T^2 - 4 det))/2 with T = 1.4 cosh(0.1)
        let tr = 1.4 * (0.1f64).cosh();
        let expect = 0.5 * (tr + (tr * tr - 1.6).sqrt());
        assert!((v - expect).abs() < 1e-13);
        assert!((v - 1.0115879).abs() < 1e-7);
    }

    #[test]
    fn eigencurve_of_projection_chain_is_pi_mgf() {
        let pi = StationaryDist::from_weights(&[0.5, 0.5]).unwrap();
        let chain = crate::chain::chain_from_mat(pi.projection()).unwrap();
        let f = make_observable(&[1.0, -1.0], &pi, None).unwrap();
        let v = eigencurve(&chain, &pi, &f, 0.1).unwrap();
        assert!((v - (0.1f64).cosh()).abs() < 1e-13);
    }

    #[test]
    fn eigencurve_rejects_nonreversible() {
        let chain = validate_chain(&[
            vec![0.2, 0.5, 0.3],
            vec![0.4, 0.1, 0.5],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let pi = stationary(&chain).unwrap();
        let f = make_observable(&[1.0, 0.0, -1.0], &pi, None).unwrap();
        assert!(matches!(
            eigencurve(&chain, &pi, &f, 0.1),
            Err(Error::NotReversible { .. })
        ));
    }

    #[test]
    fn series_head_identities_two_state() {
        let (chain, pi, f) = two_state();
        let series = kato_coefficients(&chain, &pi, &f, 4).unwrap();
        assert_eq!(series.coefficients[0], 1.0);
        assert!(series.coefficients[1].abs() < 1e-12);
        assert!((series.coefficients[2] - 7.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn beta2_is_half_asymptotic_variance() {
        let (chain, pi, f) = birth_death();
        let series = kato_coefficients(&chain, &pi, &f, 2).unwrap();
        let asy = asymptotic_variance(&chain, &pi, &f).unwrap();
        assert!((series.coefficients[2] - 0.5 * asy).abs() < 1e-10);
    }

    #[test]
    fn series_matches_eigencurve_to_high_order() {
        for (chain, pi, f) in [two_state(), birth_death()] {
            let series = kato_coefficients(&chain, &pi, &f, 6).unwrap();
            for &t in &[0.005f64, 0.01, 0.02] {
                assert!(t < series.t0_lower);
                let exact = eigencurve(&chain, &pi, &f, t).unwrap();
                let err = (exact - series.eval(t)).abs();
                assert!(err <= 10.0 * t.powi(7), "t={t}, err={err}");
            }
        }
    }

    #[test]
    fn series_error_contracts_when_t_halves() {
        let (chain, pi, f) = two_state();
        let series = kato_coefficients(&chain, &pi, &f, 6).unwrap();
        let err_at = |t: f64| (eigencurve(&chain, &pi, &f, t).unwrap() - series.eval(t)).abs();
        assert!(err_at(0.01) <= err_at(0.02) / 50.0);
        assert!(err_at(0.005) <= err_at(0.01) / 50.0);
    }

    #[test]
    fn rejects_order_above_cap() {
        let (chain, pi, f) = two_state();
        assert!(matches!(
            kato_coefficients(&chain, &pi, &f, 9),
            Err(Error::OrderTooHigh { .. })
        ));
    }

    #[test]
    fn combinatorial_weight_small_values() {
        assert_eq!(combinatorial_weight(3).unwrap().as_integer(), Some(5));
        assert_eq!(combinatorial_weight(4).unwrap().as_integer(), Some(15));
        assert!(combinatorial_weight(2).is_err());
    }

    #[test]
    fn combinatorial_weight_below_power_of_five() {
        for n in 3..=20 {
            let w = combinatorial_weight(n).unwrap();
            let bound = 5i64.checked_pow(n as u32 - 2).unwrap();
            assert!(w.le_integer(bound).unwrap(), "n={n}");
            assert!(w.as_integer().is_some(), "n={n} should be integer-valued");
        }
    }

    #[test]
    fn coefficient_bound_two_state() {
        let (chain, pi, f) = two_state();
        let b3 = coefficient_bound(&chain, &pi, &f, 3).unwrap();
        assert!((b3 - 0.08 * (5.0f64 / 0.6).powi(2)).abs() < 1e-10);
        let b2 = coefficient_bound(&chain, &pi, &f, 2).unwrap();
        assert!((b2 - (0.5 + 0.4 / 0.6)).abs() < 1e-12);
        // equality at n = 2 for this chain: |beta^(2)| = 7/6
        let series = kato_coefficients(&chain, &pi, &f, 2).unwrap();
        assert!((series.coefficients[2].abs() - b2).abs() < 1e-10);
    }

    #[test]
    fn coefficients_respect_bound() {
        let (chain, pi, f) = two_state();
        let series = kato_coefficients(&chain, &pi, &f, 6).unwrap();
        for n in 2..=6 {
            let bound = coefficient_bound(&chain, &pi, &f, n).unwrap();
            assert!(
                series.coefficients[n].abs() <= bound + 1e-10,
                "n={n}: |beta|={} bound={bound}",
                series.coefficients[n].abs()
            );
        }
    }

    #[test]
    fn coefficient_bound_rejects_negative_lambda_plus() {
        let chain = validate_chain(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let pi = stationary(&chain).unwrap();
        let f = make_observable(&[1.0, -1.0], &pi, None).unwrap();
        assert!(matches!(
            coefficient_bound(&chain, &pi, &f, 3),
            Err(Error::NegativeLambdaPlus(_))
        ));
    }

    #[test]
    fn convergence_radius_values() {
        assert!((convergence_radius(1.0, 0.0).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((convergence_radius(1.0, 0.4).unwrap() - 0.230769230769230).abs() < 1e-12);
        let r1 = convergence_radius(1.0, 0.3).unwrap();
        let r2 = convergence_radius(2.0, 0.3).unwrap();
        assert!((r1 - 2.0 * r2).abs() < 1e-15);
    }

    #[test]
    fn lemma33_reference_value_and_domination() {
        let v = lemma33_bound(0.1, 1.0, 1.0, 0.4, 0.4).unwrap();
        assert!((v - 1.046206).abs() < 1e-5);
        let (chain, pi, f) = two_state();
        let curve = eigencurve(&chain, &pi, &f, 0.1).unwrap();
        assert!(curve <= v);
    }

    #[test]
    fn lemma33_at_zero_tilt_is_one() {
        assert_eq!(lemma33_bound(0.0, 1.0, 1.0, 0.4, 0.4).unwrap(), 1.0);
    }

    #[test]
    fn lemma33_without_dependence_is_bennett_envelope() {
        let t = 0.1;
        let v = lemma33_bound(t, 1.0, 1.0, 0.0, 0.0).unwrap();
        let g1 = crate::bounds::g_components(t, 1.0, 1.0, 0.0).0;
        assert_eq!(v, g1.exp());
    }

    #[test]
    fn lemma33_rejects_tilt_past_pole() {
        assert!(matches!(
            lemma33_bound(0.13, 1.0, 1.0, 0.4, 0.4),
            Err(Error::OutOfRange { .. })
        ));
    }

    #[test]
    fn eigencurve_below_lemma33_on_grid() {
        let (chain, pi, f) = birth_death();
        let lambda_plus = right_gap(&chain, &pi).unwrap();
        let dev = chain.transition().sub(&pi.projection());
        let norm = weighted_operator_norm(&dev, &pi).unwrap();
        let limit = (1.0 - lambda_plus) / (5.0 * f.c());
        for j in 0..9 {
            let t = 0.99 * limit * (j + 1) as f64 / 9.0;
            let curve = eigencurve(&chain, &pi, &f, t).unwrap();
            let bound = lemma33_bound(t, f.sigma2(), f.c(), lambda_plus, norm).unwrap();
            assert!(curve <= bound * (1.0 + 1e-12), "t={t}");
        }
    }
}
