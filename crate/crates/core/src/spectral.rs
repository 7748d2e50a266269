//! Pi-weighted operator norms, the two spectral gaps, the reduced resolvent,
//! and the asymptotic-variance identities.
//!
//! All symmetric eigenproblems go through the deterministic Jacobi solver in
//! `linalg`; singular values are obtained from the symmetrized Gram matrix to
//! avoid power-iteration starting-vector nondeterminism.

use crate::chain::{FiniteChain, Observable, StationaryDist};
use crate::error::Error;
use crate::linalg::{condition_1norm, jacobi_eigh, jacobi_max_eigenvalue, lu_factor, Mat};

/// Gap parameters this close to 1 are treated as "gap absent".
pub const GAP_ABSENT_TOL: f64 = 1e-12;

/// Summary of a chain's spectral quantities for one observable.
#[derive(Debug, Clone)]
pub struct SpectralReport {
    /// Operator norm of `P - Pi`; the L2 gap is `1 - lambda`.
    pub lambda: f64,
    /// Top of the spectrum of the additive reversiblization on mean-zero
    /// functions; the right gap is `1 - lambda_plus`.
    pub lambda_plus: f64,
    pub sigma2: f64,
    /// `<(2Z - I)f, f>_pi`; absent when the chain has no L2 gap.
    pub sigma2_asy: Option<f64>,
}

/// Reduced resolvent `Z = (I - P + Pi)^{-1} - Pi`.
#[derive(Debug, Clone)]
pub struct ReducedResolvent {
    z: Mat,
}

impl ReducedResolvent {
    pub fn matrix(&self) -> &Mat {
        &self.z
    }

    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        self.z.matvec(v)
    }
}

/// Similarity transform `D^{1/2} A D^{-1/2}` with `D = diag(pi)`.
fn weighted_similarity(a: &Mat, pi: &StationaryDist) -> Mat {
    let n = pi.len();
    let w = pi.as_slice();
    let mut b = Mat::zeros(n, n);
    for i in 0..n {
        let si = w[i].sqrt();
        for j in 0..n {
            b[(i, j)] = si * a[(i, j)] / w[j].sqrt();
        }
    }
    b
}

fn symmetrize(m: &Mat) -> Mat {
    m.add(&m.transpose()).scale(0.5)
}

/// Pi-weighted operator norm `|||A|||_pi`: the largest singular value of
/// `D^{1/2} A D^{-1/2}`, computed as the square root of the top eigenvalue of
/// the symmetrized Gram matrix.
pub fn weighted_operator_norm(a: &Mat, pi: &StationaryDist) -> Result<f64, Error> {
    let b = weighted_similarity(a, pi);
    let gram = symmetrize(&b.transpose().matmul(&b));
    let top = jacobi_max_eigenvalue(&gram)?;
    Ok(top.max(0.0).sqrt())
}

/// `lambda(P) = |||P - Pi|||_pi`, clamped into [0, 1].
///
/// A value of 1 means the chain has no L2 gap; it is returned as-is and
/// rejected downstream by the bound evaluators.
pub fn l2_gap(chain: &FiniteChain, pi: &StationaryDist) -> Result<f64, Error> {
    let deviation = chain.transition().sub(&pi.projection());
    let norm = weighted_operator_norm(&deviation, pi)?;
    Ok(norm.clamp(0.0, 1.0))
}

/// `lambda_plus`: the largest eigenvalue of the additive reversiblization
/// restricted to mean-zero functions.
///
/// The rank-one `sqrt(pi) sqrt(pi)^T` projector is subtracted before the
/// eigensolve; the deflated direction is identified by its overlap with
/// `sqrt(pi)` and removed from the spectrum.
pub fn right_gap(chain: &FiniteChain, pi: &StationaryDist) -> Result<f64, Error> {
    let n = chain.n_states();
    if n == 1 {
        return Ok(0.0);
    }
    let r = crate::chain::additive_reversiblization(chain, pi)?;
    let s = symmetrize(&weighted_similarity(&r, pi));
    let sq: Vec<f64> = pi.as_slice().iter().map(|w| w.sqrt()).collect();
    let deflated = s.sub(&Mat::outer(&sq, &sq));
    let (vals, vecs) = jacobi_eigh(&deflated)?;
    let mut best = 0usize;
    let mut best_overlap = -1.0;
    for j in 0..n {
        let overlap: f64 = (0..n).map(|i| vecs[(i, j)] * sq[i]).sum::<f64>().abs();
        if overlap > best_overlap {
            best_overlap = overlap;
            best = j;
        }
    }
    // The deflated direction must either be cleanly identified or sit in a
    // degenerate near-zero cluster where any member is interchangeable.
    if best_overlap <= 1.0 - 1e-10 && vals[best].abs() > 1e-9 {
        return Err(Error::EigensolverFailure { sweeps: 0 });
    }
    let lambda_plus = vals
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != best)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(lambda_plus.clamp(-1.0, 1.0))
}

/// `Z = (I - P + Pi)^{-1} - Pi`, the reduced resolvent at eigenvalue 1.
pub fn reduced_resolvent(
    chain: &FiniteChain,
    pi: &StationaryDist,
) -> Result<ReducedResolvent, Error> {
    let lambda = l2_gap(chain, pi)?;
    if lambda >= 1.0 - GAP_ABSENT_TOL {
        return Err(Error::NoGap { lambda });
    }
    let n = chain.n_states();
    let proj = pi.projection();
    let m = Mat::identity(n).sub(chain.transition()).add(&proj);
    let factors = lu_factor(&m)?;
    let cond = condition_1norm(&m, &factors);
    if cond > 1e12 {
        eprintln!("warning: resolvent solve is ill-conditioned (estimate {cond:.3e})");
    }
    let z = factors.inverse().sub(&proj);
    Ok(ReducedResolvent { z })
}

/// Asymptotic variance `<(2Z - I)f, f>_pi` of the running sum of `f`.
pub fn asymptotic_variance(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
) -> Result<f64, Error> {
    let z = reduced_resolvent(chain, pi)?;
    Ok(asymptotic_variance_with(&z, pi, f))
}

pub fn asymptotic_variance_with(z: &ReducedResolvent, pi: &StationaryDist, f: &Observable) -> f64 {
    let zf = z.apply(f.values());
    2.0 * pi.inner(&zf, f.values()) - pi.inner(f.values(), f.values())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SecondMomentMethod {
    /// `<[n(2Z - I) - 2 Z^2 P (I - P^n)] f, f>_pi`; reversible chains only.
    ClosedForm,
    /// Double sum of autocovariances; valid for any chain with an L2 gap.
    DirectSum,
}

/// `E_pi[(sum_{i=1}^n f(X_i))^2]` for a stationary start.
pub fn finite_horizon_second_moment(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    method: SecondMomentMethod,
) -> Result<f64, Error> {
    assert!(n >= 1, "horizon must be positive");
    let p = chain.transition();
    match method {
        SecondMomentMethod::DirectSum => {
            // n*sigma^2 + 2 * sum_{k=1}^{n-1} (n-k) <(P - Pi)^k f, f>_pi,
            // with explicit recentering each step to stop constant drift.
            let sigma2 = pi.inner(f.values(), f.values());
            let mut acc = n as f64 * sigma2;
            let mut v = f.values().to_vec();
            for k in 1..n {
                v = p.matvec(&v);
                let mean = pi.mean(&v);
                v.iter_mut().for_each(|x| *x -= mean);
                acc += 2.0 * (n - k) as f64 * pi.inner(&v, f.values());
            }
            Ok(acc)
        }
        SecondMomentMethod::ClosedForm => {
            if let Some((row, col)) = chain.reversibility_violation(pi) {
                return Err(Error::NotReversible { row, col });
            }
            let z = reduced_resolvent(chain, pi)?;
            let fv = f.values();
            let zf = z.apply(fv);
            // w = (I - P^n) f
            let mut pnf = fv.to_vec();
            for _ in 0..n {
                pnf = p.matvec(&pnf);
            }
            let w: Vec<f64> = fv.iter().zip(&pnf).map(|(a, b)| a - b).collect();
            let zzpw = z.apply(&z.apply(&p.matvec(&w)));
            let combined: Vec<f64> = (0..fv.len())
                .map(|i| n as f64 * (2.0 * zf[i] - fv[i]) - 2.0 * zzpw[i])
                .collect();
            Ok(pi.inner(&combined, fv))
        }
    }
}

/// Full spectral summary for one observable.
pub fn spectral_report(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
) -> Result<SpectralReport, Error> {
    let lambda = l2_gap(chain, pi)?;
    let lambda_plus = right_gap(chain, pi)?;
    let sigma2_asy = if lambda < 1.0 - GAP_ABSENT_TOL {
        Some(asymptotic_variance(chain, pi, f)?)
    } else {
        None
    };
    Ok(SpectralReport {
        lambda,
        lambda_plus,
        sigma2: f.sigma2(),
        sigma2_asy,
    })
}

/// Top eigenvalue of the tilted operator `P E^{tf}` of a reversible chain,
/// computed on the symmetric similarity transform
/// `D^{1/2} E^{tf/2} P E^{tf/2} D^{-1/2}`.
pub(crate) fn tilted_top_eigenvalue(
    p: &Mat,
    pi: &StationaryDist,
    values: &[f64],
    t: f64,
) -> Result<f64, Error> {
    let n = pi.len();
    let w = pi.as_slice();
    let mut m = Mat::zeros(n, n);
    for i in 0..n {
        let left = w[i].sqrt() * (0.5 * t * values[i]).exp();
        for j in 0..n {
            m[(i, j)] = left * p[(i, j)] * (0.5 * t * values[j]).exp() / w[j].sqrt();
        }
    }
    jacobi_max_eigenvalue(&symmetrize(&m))
}
