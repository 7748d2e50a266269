//! Exact transfer-matrix oracles (MGF and tail) and seeded Monte Carlo for
//! finite and Leon-Perron chains.
//!
//! Every Monte Carlo result is a pure function of its inputs and the
//! `TrialPlan`: trial i draws from a SplitMix64 stream seeded by an avalanche
//! mix of `(base_seed, i)`, and reductions use a fixed order, so output is
//! identical for any thread count.

use rayon::prelude::*;

use crate::chain::{FiniteChain, Observable, StationaryDist};
use crate::error::Error;
use crate::leonperron::SimpleFunction;
use crate::rng::SplitMix64;

/// Ties at exactly the threshold count as non-exceedance; thresholds within
/// this relative distance of an exact lattice point are treated as ties.
const TIE_TOL: f64 = 1e-9;

/// Path-enumeration work cap: `n_states^n <= 2^30`.
const ENUM_CAP_LOG2: f64 = 30.0;
/// Lattice-DP work cap (table cells times steps).
const DP_OPS_CAP: f64 = 2e9;

/// A reproducible simulation plan.
#[derive(Debug, Clone, Copy)]
pub struct TrialPlan {
    pub base_seed: u64,
    pub trials: usize,
    /// Path length per trial.
    pub n: usize,
}

/// Monte Carlo tail estimate with an exact 99% Clopper-Pearson interval.
#[derive(Debug, Clone, Copy)]
pub struct TailEstimate {
    pub successes: u64,
    pub trials: u64,
    pub point: f64,
    pub cp_low: f64,
    pub cp_high: f64,
}

impl TailEstimate {
    /// Bound-domination verdict: the estimate is consistent with a
    /// theoretical tail bound iff the lower confidence limit stays below it.
    pub fn dominates(&self, theoretical_bound: f64) -> bool {
        self.cp_low <= theoretical_bound
    }
}

/// What to simulate: a finite chain with an observable, or a Leon-Perron
/// chain given directly by its hold probability and innovation distribution.
#[derive(Debug, Clone, Copy)]
pub enum Sampler<'a> {
    Chain {
        chain: &'a FiniteChain,
        pi: &'a StationaryDist,
        f: &'a Observable,
    },
    LeonPerron {
        lambda: f64,
        innovation: &'a SimpleFunction,
    },
}

impl Sampler<'_> {
    /// Sum of the observable along trial `trial_index`'s path of length `n`.
    fn path_sum(&self, n: usize, base_seed: u64, trial_index: u64) -> f64 {
        match self {
            Sampler::Chain { chain, pi, f } => {
                let mut rng = SplitMix64::for_trial(base_seed, trial_index);
                let values = f.values();
                let mut state = sample_index(pi.as_slice(), rng.next_f64());
                let mut acc = values[state];
                for _ in 1..n {
                    state = sample_index(chain.row(state), rng.next_f64());
                    acc += values[state];
                }
                acc
            }
            Sampler::LeonPerron { lambda, innovation } => {
                let mut rng = SplitMix64::for_trial(base_seed, trial_index);
                let values = innovation.values();
                let weights = innovation.weights();
                let mut y = values[sample_index(weights, rng.next_f64())];
                let mut acc = y;
                for _ in 1..n {
                    if rng.next_f64() >= *lambda {
                        y = values[sample_index(weights, rng.next_f64())];
                    }
                    acc += y;
                }
                acc
            }
        }
    }
}

/// Inverse-CDF draw from a probability vector.
fn sample_index(weights: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        cum += w;
        if u < cum {
            return i;
        }
    }
    weights.len() - 1
}

/// Fixed-order pairwise summation; deterministic and accurate for long sums.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    if xs.len() <= 8 {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

/// Log of the exact stationary MGF `E_pi[exp(t sum_{i=1}^n f(X_i))]`,
/// computed by transfer-matrix products with rescaling so intermediates never
/// overflow.
pub fn exact_mgf_log(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    t: f64,
) -> f64 {
    assert!(n >= 1, "n must be positive");
    let p = chain.transition();
    let tilt: Vec<f64> = f.values().iter().map(|v| (t * v).exp()).collect();
    let mut w = vec![1.0f64; chain.n_states()];
    let mut log_scale = 0.0f64;
    for _ in 1..n {
        let ew: Vec<f64> = tilt.iter().zip(&w).map(|(a, b)| a * b).collect();
        w = p.matvec(&ew);
        let m = w.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
        if m > 1e300 {
            w.iter_mut().for_each(|x| *x /= m);
            log_scale += m.ln();
        }
    }
    let total: f64 = pi
        .as_slice()
        .iter()
        .zip(tilt.iter().zip(&w))
        .map(|(p, (e, w))| p * e * w)
        .sum();
    log_scale + total.ln()
}

/// Exact stationary MGF; overflows to infinity only if the value itself
/// exceeds f64 range.
pub fn exact_mgf(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    t: f64,
) -> f64 {
    exact_mgf_log(chain, pi, f, n, t).exp()
}

/// Smallest integer strictly above the (possibly tie-snapped) threshold.
fn integer_exceedance_floor(threshold: f64) -> i64 {
    let nearest = threshold.round();
    if (threshold - nearest).abs() <= TIE_TOL * threshold.abs().max(1.0) {
        nearest as i64 + 1
    } else {
        threshold.floor() as i64 + 1
    }
}

/// Try to express all values as integer multiples of `1/d` for a small `d`.
fn lattice_scale(values: &[f64]) -> Option<i64> {
    'outer: for d in 1..=64i64 {
        for &v in values {
            let scaled = v * d as f64;
            if scaled.round() != scaled || scaled.abs() > 2f64.powi(40) {
                continue 'outer;
            }
        }
        return Some(d);
    }
    None
}

fn exact_tail_lattice(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    eps_list: &[f64],
    d: i64,
) -> Result<Vec<f64>, Error> {
    let n_states = chain.n_states();
    let keys: Vec<i64> = f.values().iter().map(|v| (v * d as f64).round() as i64).collect();
    let min_k = *keys.iter().min().unwrap();
    let max_k = *keys.iter().max().unwrap();
    let lo = (n as i64) * min_k.min(0);
    let hi = (n as i64) * max_k.max(0);
    let size = (hi - lo + 1) as usize;
    let ops = n as f64 * (n_states * n_states) as f64 * size as f64;
    if ops > DP_OPS_CAP {
        return Err(Error::TooLarge {
            states: n_states,
            n,
        });
    }
    let idx = |state: usize, sum: i64| state * size + (sum - lo) as usize;
    let mut dist = vec![0.0f64; n_states * size];
    for x in 0..n_states {
        dist[idx(x, keys[x])] = pi.as_slice()[x];
    }
    let p = chain.transition();
    let mut next = vec![0.0f64; n_states * size];
    for step in 1..n {
        next.iter_mut().for_each(|v| *v = 0.0);
        let reach_lo = lo.max((step as i64) * min_k);
        let reach_hi = hi.min((step as i64) * max_k);
        for x in 0..n_states {
            for s in reach_lo..=reach_hi {
                let mass = dist[idx(x, s)];
                if mass == 0.0 {
                    continue;
                }
                for y in 0..n_states {
                    let p_xy = p[(x, y)];
                    if p_xy > 0.0 {
                        next[idx(y, s + keys[y])] += mass * p_xy;
                    }
                }
            }
        }
        std::mem::swap(&mut dist, &mut next);
    }
    Ok(eps_list
        .iter()
        .map(|&eps| {
            let k_min = integer_exceedance_floor(n as f64 * eps * d as f64);
            let mut tail = 0.0;
            for x in 0..n_states {
                for s in k_min.max(lo)..=hi {
                    tail += dist[idx(x, s)];
                }
            }
            tail.min(1.0)
        })
        .collect())
}

fn exact_tail_enumerate(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    eps_list: &[f64],
) -> Result<Vec<f64>, Error> {
    let n_states = chain.n_states();
    if n as f64 * (n_states as f64).log2() > ENUM_CAP_LOG2 {
        return Err(Error::TooLarge {
            states: n_states,
            n,
        });
    }
    let thresholds: Vec<f64> = eps_list
        .iter()
        .map(|&eps| {
            let tau = n as f64 * eps;
            tau + TIE_TOL * tau.abs().max(1.0)
        })
        .collect();
    let values = f.values();
    let p = chain.transition();
    let mut tails = vec![0.0f64; eps_list.len()];
    // iterative DFS over paths with incremental probability and sum
    struct Frame {
        state: usize,
        prob: f64,
        sum: f64,
    }
    let mut stack: Vec<(Frame, usize)> = Vec::with_capacity(n + 1);
    for x0 in 0..n_states {
        let p0 = pi.as_slice()[x0];
        if p0 == 0.0 {
            continue;
        }
        stack.push((
            Frame {
                state: x0,
                prob: p0,
                sum: values[x0],
            },
            1,
        ));
        while let Some((frame, depth)) = stack.pop() {
            if depth == n {
                for (tail, &thr) in tails.iter_mut().zip(&thresholds) {
                    if frame.sum > thr {
                        *tail += frame.prob;
                    }
                }
                continue;
            }
            for y in 0..n_states {
                let p_xy = p[(frame.state, y)];
                if p_xy > 0.0 {
                    stack.push((
                        Frame {
                            state: y,
                            prob: frame.prob * p_xy,
                            sum: frame.sum + values[y],
                        },
                        depth + 1,
                    ));
                }
            }
        }
    }
    Ok(tails.into_iter().map(|t| t.min(1.0)).collect())
}

/// Exact stationary tail probabilities `P(sum f(X_i)/n > eps)` for several
/// thresholds at once, sharing one dynamic program or enumeration pass.
///
/// Lattice-valued observables go through an exact DP over (state, running
/// sum); anything else is enumerated, capped at `n_states^n <= 2^30`.
/// Ties at exactly `eps` count as non-exceedance.
pub fn exact_tail_multi(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    eps_list: &[f64],
) -> Result<Vec<f64>, Error> {
    assert!(n >= 1, "n must be positive");
    match lattice_scale(f.values()) {
        Some(d) => match exact_tail_lattice(chain, pi, f, n, eps_list, d) {
            Err(Error::TooLarge { .. }) => exact_tail_enumerate(chain, pi, f, n, eps_list),
            other => other,
        },
        None => exact_tail_enumerate(chain, pi, f, n, eps_list),
    }
}

/// Single-threshold variant of `exact_tail_multi`.
pub fn exact_tail(
    chain: &FiniteChain,
    pi: &StationaryDist,
    f: &Observable,
    n: usize,
    eps: f64,
) -> Result<f64, Error> {
    Ok(exact_tail_multi(chain, pi, f, n, &[eps])?[0])
}

/// Sample one stationary path of states; deterministic in
/// `(plan.base_seed, trial_index)`.
pub fn sample_chain_path(
    chain: &FiniteChain,
    pi: &StationaryDist,
    plan: &TrialPlan,
    trial_index: u64,
) -> Vec<usize> {
    let mut rng = SplitMix64::for_trial(plan.base_seed, trial_index);
    let mut path = Vec::with_capacity(plan.n);
    let mut state = sample_index(pi.as_slice(), rng.next_f64());
    path.push(state);
    for _ in 1..plan.n {
        state = sample_index(chain.row(state), rng.next_f64());
        path.push(state);
    }
    path
}

/// Sample one Leon-Perron value path `Y_i = B_i Y_{i-1} + (1 - B_i) f(Z_i)`
/// with `B_i ~ Bernoulli(lambda)` and `Z_i ~ mu`.
pub fn sample_lp_path(
    lambda: f64,
    innovation: &SimpleFunction,
    plan: &TrialPlan,
    trial_index: u64,
) -> Vec<f64> {
    let mut rng = SplitMix64::for_trial(plan.base_seed, trial_index);
    let values = innovation.values();
    let weights = innovation.weights();
    let mut path = Vec::with_capacity(plan.n);
    let mut y = values[sample_index(weights, rng.next_f64())];
    path.push(y);
    for _ in 1..plan.n {
        if rng.next_f64() >= lambda {
            y = values[sample_index(weights, rng.next_f64())];
        }
        path.push(y);
    }
    path
}

fn per_trial_sums(sampler: &Sampler, plan: &TrialPlan) -> Vec<f64> {
    (0..plan.trials as u64)
        .into_par_iter()
        .map(|i| sampler.path_sum(plan.n, plan.base_seed, i))
        .collect()
}

/// Monte Carlo estimate of `P(sum f(X_i)/n > eps)` with an exact 99%
/// Clopper-Pearson interval.
pub fn estimate_tail(sampler: &Sampler, eps: f64, plan: &TrialPlan) -> Result<TailEstimate, Error> {
    if plan.trials < 100 {
        return Err(Error::DomainError(format!(
            "need at least 100 trials, got {}",
            plan.trials
        )));
    }
    let threshold = plan.n as f64 * eps;
    let sums = per_trial_sums(sampler, plan);
    let successes = sums.iter().filter(|&&s| s > threshold).count() as u64;
    let trials = plan.trials as u64;
    let (cp_low, cp_high) = clopper_pearson(successes, trials, 0.01);
    Ok(TailEstimate {
        successes,
        trials,
        point: successes as f64 / trials as f64,
        cp_low,
        cp_high,
    })
}

/// Unbiased sample variance of `S_n / sqrt(n)` across trials.
pub fn scaled_variance(sampler: &Sampler, plan: &TrialPlan) -> Result<f64, Error> {
    if plan.trials < 1000 {
        return Err(Error::DomainError(format!(
            "need at least 1000 trials, got {}",
            plan.trials
        )));
    }
    let sqrt_n = (plan.n as f64).sqrt();
    let xs: Vec<f64> = per_trial_sums(sampler, plan)
        .into_iter()
        .map(|s| s / sqrt_n)
        .collect();
    let mean = pairwise_sum(&xs) / xs.len() as f64;
    let sq: Vec<f64> = xs.iter().map(|x| (x - mean) * (x - mean)).collect();
    Ok(pairwise_sum(&sq) / (xs.len() - 1) as f64)
}

// ---------------------------------------------------------------------------
// Exact binomial interval machinery: regularized incomplete beta and its
// inverse, by Lentz continued fractions and bisection.
// ---------------------------------------------------------------------------

fn ln_gamma(x: f64) -> f64 {
    // Lanczos, g = 7, 9 coefficients
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // reflection
        return std::f64::consts::PI.ln() - (std::f64::consts::PI * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        a += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

fn betacf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 3e-16;
    const FPMIN: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < FPMIN {
        d = FPMIN;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < FPMIN {
            d = FPMIN;
        }
        c = 1.0 + aa / c;
        if c.abs() < FPMIN {
            c = FPMIN;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Regularized incomplete beta function `I_x(a, b)`.
pub fn inc_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_bt = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let bt = ln_bt.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        bt * betacf(a, b, x) / a
    } else {
        1.0 - bt * betacf(b, a, 1.0 - x) / b
    }
}

/// Quantile of the Beta(a, b) distribution by bisection (deterministic).
pub fn beta_inv(p: f64, a: f64, b: f64) -> f64 {
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if inc_beta(mid, a, b) < p {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact two-sided Clopper-Pearson interval at level `1 - alpha`.
pub fn clopper_pearson(successes: u64, trials: u64, alpha: f64) -> (f64, f64) {
    assert!(trials >= 1 && successes <= trials);
    let s = successes as f64;
    let n = trials as f64;
    let low = if successes == 0 {
        0.0
    } else {
        beta_inv(alpha / 2.0, s, n - s + 1.0)
    };
    let high = if successes == trials {
        1.0
    } else {
        beta_inv(1.0 - alpha / 2.0, s + 1.0, n - s)
    };
    (low, high)
}
