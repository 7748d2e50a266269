//! Closed-form tail and MGF bound evaluators, classical baselines, Fenchel
//! conjugates, and the numeric Chernoff optimizer.
//!
//! Two exponent components drive everything:
//!
//! ```text
//! g1(t) = (sigma^2/c^2) (e^{tc} - 1 - tc)
//! g2(t) = sigma^2 lambda t^2 / (1 - lambda - 5ct)   for t < (1-lambda)/(5c)
//! ```
//!
//! The MGF envelope is exp(n (g1 + g2)); the tail bound is the closed-form
//! relaxation exp(-n eps^2 / (2 (A1 sigma^2 + A2 c eps))); the Chernoff
//! optimizer computes the exact conjugate sup_t { t eps - g1 - g2 } by
//! golden-section search.

use crate::error::Error;

/// Gap parameters below this threshold take the independent-case branch
/// (`A2 = 1/3`). The A2 coefficient is discontinuous at lambda = 0; the cliff
/// is kept as printed rather than smoothed.
pub const LAMBDA_ZERO_TOL: f64 = 1e-12;

/// Which spectral quantity parametrizes the bound.
///
/// `Lambda` is the general (time-dependent observables) route; `LambdaPlus`
/// is the sharper route for a single time-independent observable, where the
/// effective parameter is `lambda_plus` clamped below at 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GapParam {
    Lambda(f64),
    LambdaPlus(f64),
}

impl GapParam {
    /// The value substituted into g2 and A1 (`lambda` or `lambda_plus ∨ 0`).
    pub fn effective(&self) -> f64 {
        match *self {
            GapParam::Lambda(l) => l,
            GapParam::LambdaPlus(lp) => lp.max(0.0),
        }
    }

    pub fn validate(&self) -> Result<(), Error> {
        match *self {
            GapParam::Lambda(l) => {
                if !(0.0..).contains(&l) || l.is_nan() {
                    return Err(Error::DomainError(format!(
                        "lambda must be in [0, 1), got {l}"
                    )));
                }
                if l >= 1.0 {
                    return Err(Error::NoGap { lambda: l });
                }
            }
            GapParam::LambdaPlus(lp) => {
                if !(-1.0..).contains(&lp) || lp.is_nan() {
                    return Err(Error::DomainError(format!(
                        "lambda_plus must be in [-1, 1), got {lp}"
                    )));
                }
                if lp >= 1.0 {
                    return Err(Error::NoGap { lambda: lp });
                }
            }
        }
        Ok(())
    }
}

/// Identifier carried by every evaluated bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Hoeffding,
    Bennett,
    Bernstein,
    Thm11,
    Thm12,
    Thm11Chernoff,
    Thm12Chernoff,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            BoundKind::Hoeffding => "hoeffding",
            BoundKind::Bennett => "bennett",
            BoundKind::Bernstein => "bernstein",
            BoundKind::Thm11 => "thm11",
            BoundKind::Thm12 => "thm12",
            BoundKind::Thm11Chernoff => "thm11-chernoff",
            BoundKind::Thm12Chernoff => "thm12-chernoff",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BoundValue {
    /// Upper bound on the tail probability, in (0, 1] (0 is the degenerate
    /// sigma^2 = 0 sentinel).
    pub probability_bound: f64,
    /// Per-step exponent: `probability_bound = exp(-n * exponent)`.
    pub exponent: f64,
    pub kind: BoundKind,
}

impl BoundValue {
    fn from_exponent(kind: BoundKind, n: u64, exponent: f64) -> Self {
        BoundValue {
            probability_bound: (-(n as f64) * exponent).exp(),
            exponent,
            kind,
        }
    }
}

/// A tail-probability question: `P(sum f(X_i)/n > eps)` under the given
/// variance, bound, and gap parameter.
#[derive(Debug, Clone, Copy)]
pub struct BoundQuery {
    pub n: u64,
    pub eps: f64,
    pub sigma2: f64,
    pub c: f64,
    pub gap: GapParam,
}

impl BoundQuery {
    pub fn new(n: u64, eps: f64, sigma2: f64, c: f64, gap: GapParam) -> Result<Self, Error> {
        if n == 0 {
            return Err(Error::DomainError("n must be positive".into()));
        }
        if !(eps > 0.0) {
            return Err(Error::DomainError(format!("eps must be positive, got {eps}")));
        }
        if !(c > 0.0) {
            return Err(Error::DomainError(format!("c must be positive, got {c}")));
        }
        if !(sigma2 >= 0.0) {
            return Err(Error::DomainError(format!(
                "sigma2 must be nonnegative, got {sigma2}"
            )));
        }
        if sigma2 > c * c * (1.0 + 1e-12) {
            return Err(Error::DomainError(format!(
                "sigma2 = {sigma2} exceeds c^2 = {}",
                c * c
            )));
        }
        gap.validate()?;
        Ok(BoundQuery { n, eps, sigma2, c, gap })
    }
}

/// `h1(u) = (1+u) log(1+u) - u`, the Bennett rate function.
pub fn bennett_h1(u: f64) -> f64 {
    (1.0 + u) * u.ln_1p() - u
}

/// `h2(u) = sqrt(1+u) + u/2 + 1`.
pub fn h2(u: f64) -> f64 {
    (1.0 + u).sqrt() + 0.5 * u + 1.0
}

/// `e^x - 1 - x`, series-stabilized for small |x|.
fn expm1m(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // x^2/2 + x^3/6 + x^4/24 + x^5/120; truncation below 1e-19 relative
        let x2 = x * x;
        x2 * (0.5 + x * (1.0 / 6.0 + x * (1.0 / 24.0 + x / 120.0)))
    } else {
        x.exp_m1() - x
    }
}

/// The two exponent components at tilt `t`.
///
/// `g2` diverges at `t = (1 - lambda)/(5c)`; the divergence is encoded as an
/// infinity sentinel so optimizers restrict their search automatically.
pub fn g_components(t: f64, sigma2: f64, c: f64, lambda: f64) -> (f64, f64) {
    let g1 = (sigma2 / (c * c)) * expm1m(t * c);
    let g2 = if t < (1.0 - lambda) / (5.0 * c) {
        sigma2 * lambda * t * t / (1.0 - lambda - 5.0 * c * t)
    } else {
        f64::INFINITY
    };
    (g1, g2)
}

fn admissible_t_limit(c: f64, lam_bar: f64) -> f64 {
    (1.0 - lam_bar) / (5.0 * c)
}

/// MGF envelope `exp(n (g1 + g2))` with the effective gap parameter
/// substituted into g2. Errors with `OutOfRange` outside `[0, (1-l)/(5c))`.
pub fn mgf_bound(n: u64, t: f64, sigma2: f64, c: f64, gap: GapParam) -> Result<f64, Error> {
    gap.validate()?;
    let lam_bar = gap.effective();
    let limit = admissible_t_limit(c, lam_bar);
    if !(0.0..limit).contains(&t) {
        return Err(Error::OutOfRange { t, limit });
    }
    let (g1, g2) = g_components(t, sigma2, c, lam_bar);
    Ok(((n as f64) * (g1 + g2)).exp())
}

fn bernstein_exponent(eps: f64, sigma2: f64, c: f64) -> f64 {
    eps * eps / (2.0 * (sigma2 + c * eps / 3.0))
}

/// Closed-form tail bound `exp(-n eps^2 / (2 (A1 sigma^2 + A2 c eps)))`.
///
/// `A1 = (1 + l)/(1 - l)` and `A2 = 1/3` when the effective gap parameter is
/// (numerically) zero, else `5/(1 - l)`. At l = 0 this is exactly the
/// classical Bernstein bound, sharing its arithmetic path bit-for-bit.
pub fn tail_bound(query: &BoundQuery) -> Result<BoundValue, Error> {
    query.gap.validate()?;
    let lam_bar = query.gap.effective();
    let kind = match query.gap {
        GapParam::Lambda(_) => BoundKind::Thm11,
        GapParam::LambdaPlus(_) => BoundKind::Thm12,
    };
    let exponent = if lam_bar < LAMBDA_ZERO_TOL {
        bernstein_exponent(query.eps, query.sigma2, query.c)
    } else {
        let a1 = (1.0 + lam_bar) / (1.0 - lam_bar);
        let a2 = 5.0 / (1.0 - lam_bar);
        query.eps * query.eps / (2.0 * (a1 * query.sigma2 + a2 * query.c * query.eps))
    };
    Ok(BoundValue::from_exponent(kind, query.n, exponent))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClassicalKind {
    Hoeffding,
    Bennett,
    Bernstein,
}

/// The three classical independent-case bounds.
pub fn classical_bound(
    kind: ClassicalKind,
    n: u64,
    eps: f64,
    sigma2: f64,
    c: f64,
) -> Result<BoundValue, Error> {
    if !(eps > 0.0) {
        return Err(Error::DomainError(format!("eps must be positive, got {eps}")));
    }
    if !(c > 0.0) {
        return Err(Error::DomainError(format!("c must be positive, got {c}")));
    }
    match kind {
        ClassicalKind::Hoeffding => {
            let exponent = eps * eps / (2.0 * c * c);
            Ok(BoundValue::from_exponent(BoundKind::Hoeffding, n, exponent))
        }
        ClassicalKind::Bennett => {
            // sigma^2 = 0 limit: the bound collapses to 0 for any eps > 0.
            if sigma2 == 0.0 {
                return Ok(BoundValue {
                    probability_bound: 0.0,
                    exponent: f64::INFINITY,
                    kind: BoundKind::Bennett,
                });
            }
            let exponent = (sigma2 / (c * c)) * bennett_h1(c * eps / sigma2);
            Ok(BoundValue::from_exponent(BoundKind::Bennett, n, exponent))
        }
        ClassicalKind::Bernstein => {
            let exponent = bernstein_exponent(eps, sigma2, c);
            Ok(BoundValue::from_exponent(BoundKind::Bernstein, n, exponent))
        }
    }
}

/// Closed-form conjugates `(g1*, g2*)` at the split `(eps1, eps2)`.
///
/// `g1*(e) = (sigma^2/c^2) h1(c e / sigma^2)`;
/// `g2*(e) = (1-lambda) e^2 / (2 lambda sigma^2 h2(5 c e / (lambda sigma^2)))`.
/// For lambda = 0, g2 vanishes identically and its conjugate is the
/// indicator limit (0 at eps2 = 0, +inf otherwise).
pub fn conjugate_closed_forms(
    eps1: f64,
    eps2: f64,
    sigma2: f64,
    c: f64,
    lambda: f64,
) -> (f64, f64) {
    let g1_star = if eps1 == 0.0 {
        0.0
    } else if sigma2 == 0.0 {
        f64::INFINITY
    } else {
        (sigma2 / (c * c)) * bennett_h1(c * eps1 / sigma2)
    };
    let g2_star = if eps2 == 0.0 {
        0.0
    } else if lambda <= 0.0 || sigma2 == 0.0 {
        f64::INFINITY
    } else {
        let u = 5.0 * c * eps2 / (lambda * sigma2);
        (1.0 - lambda) * eps2 * eps2 / (2.0 * lambda * sigma2 * h2(u))
    };
    (g1_star, g2_star)
}

const FENCHEL_GRID: usize = 128;

/// Numeric Fenchel conjugate `sup { t eps - g(t) : t in (0, t_max) }`.
///
/// A coarse scan brackets the maximum of the concave objective, then
/// golden-section search refines the bracket to `1e-12 * t_max`. A strict
/// interior dip in the scan (impossible for convex `g`) reports
/// `NonConcaveDetected`.
pub fn fenchel_numeric<G>(g: G, eps: f64, t_max: f64) -> Result<f64, Error>
where
    G: Fn(f64) -> f64,
{
    if !(eps > 0.0) || !(t_max > 0.0) {
        return Err(Error::DomainError(
            "fenchel_numeric requires eps > 0 and t_max > 0".into(),
        ));
    }
    let phi = |t: f64| t * eps - g(t);
    let step = t_max / FENCHEL_GRID as f64;
    let mut grid = Vec::with_capacity(FENCHEL_GRID);
    for i in 0..FENCHEL_GRID {
        let t = i as f64 * step;
        grid.push((t, phi(t)));
    }
    let finite_max = grid
        .iter()
        .map(|&(_, v)| v)
        .filter(|v| v.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    let dip_tol = 1e-12 * (1.0 + finite_max.abs());
    let mut best_idx = 0;
    for (i, &(_, v)) in grid.iter().enumerate() {
        if v > grid[best_idx].1 {
            best_idx = i;
        }
    }
    // concavity sanity: no finite value may sit strictly below both a
    // predecessor and a successor
    let mut running_max = f64::NEG_INFINITY;
    for k in 0..grid.len() {
        let v = grid[k].1;
        if !v.is_finite() {
            continue;
        }
        if running_max > v + dip_tol
            && grid[k + 1..]
                .iter()
                .any(|&(_, later)| later.is_finite() && later > v + dip_tol)
        {
            return Err(Error::NonConcaveDetected);
        }
        running_max = running_max.max(v);
    }
    let mut a = if best_idx == 0 { 0.0 } else { grid[best_idx - 1].0 };
    let mut b = if best_idx + 1 < grid.len() {
        grid[best_idx + 1].0
    } else {
        t_max * (1.0 - 1e-14)
    };
    let gr = ((5.0f64).sqrt() - 1.0) / 2.0;
    let mut c1 = b - gr * (b - a);
    let mut c2 = a + gr * (b - a);
    let mut f1 = phi(c1);
    let mut f2 = phi(c2);
    let tol = 1e-12 * t_max;
    while b - a > tol {
        if f1 >= f2 {
            b = c2;
            c2 = c1;
            f2 = f1;
            c1 = b - gr * (b - a);
            f1 = phi(c1);
        } else {
            a = c1;
            c1 = c2;
            f1 = f2;
            c2 = a + gr * (b - a);
            f2 = phi(c2);
        }
    }
    let refined = phi(0.5 * (a + b));
    Ok(refined.max(f1).max(f2).max(grid[best_idx].1))
}

/// Chernoff-optimized bound `exp(-n sup_t { t eps - g1(t) - g2(t) })`.
///
/// Always at least as sharp as `tail_bound`, which relaxes the same supremum.
pub fn chernoff_optimize(query: &BoundQuery) -> Result<BoundValue, Error> {
    query.gap.validate()?;
    let lam_bar = query.gap.effective();
    let kind = match query.gap {
        GapParam::Lambda(_) => BoundKind::Thm11Chernoff,
        GapParam::LambdaPlus(_) => BoundKind::Thm12Chernoff,
    };
    let (sigma2, c, eps) = (query.sigma2, query.c, query.eps);
    if sigma2 == 0.0 {
        // g1 = g2 = 0: the supremum is unbounded and the tail is empty.
        return Ok(BoundValue {
            probability_bound: 0.0,
            exponent: f64::INFINITY,
            kind,
        });
    }
    let exponent = if lam_bar < LAMBDA_ZERO_TOL {
        // pure Bennett objective; window chosen past the analytic optimum
        // t* = log(1 + c eps / sigma^2)/c
        let t_star = (c * eps / sigma2).ln_1p() / c;
        let t_max = 2.0 * t_star + 1.0 / c;
        fenchel_numeric(|t| g_components(t, sigma2, c, 0.0).0, eps, t_max)?
    } else {
        let t_max = admissible_t_limit(c, lam_bar);
        fenchel_numeric(
            |t| {
                let (g1, g2) = g_components(t, sigma2, c, lam_bar);
                g1 + g2
            },
            eps,
            t_max,
        )?
    };
    Ok(BoundValue::from_exponent(kind, query.n, exponent))
}

/// One row of the variance-proxy comparison tables.
#[derive(Debug, Clone)]
pub struct ProxyRow {
    /// 1 = time-dependent observables, 2 = time-independent observable.
    pub table: u8,
    pub kind: &'static str,
    pub reference: &'static str,
    pub condition: &'static str,
    pub proxy: f64,
    pub note: Option<&'static str>,
}

/// Variance proxies of this work's bounds and the literature baselines,
/// evaluated at the given parameters.
pub fn proxy_table(sigma2: f64, c: f64, lambda: f64, lambda_plus: f64) -> Vec<ProxyRow> {
    let lp0 = lambda_plus.max(0.0);
    let c2 = c * c;
    let ratio_l = (1.0 + lambda) / (1.0 - lambda);
    let ratio_lp = (1.0 + lp0) / (1.0 - lp0);
    let row = |table, kind, reference, condition, proxy| ProxyRow {
        table,
        kind,
        reference,
        condition,
        proxy,
        note: None,
    };
    vec![
        row(1, "Hoeffding", "Hoeffding 1963", "independent", c2),
        row(1, "Hoeffding", "Fan-Jiang-Sun 2018", "general", ratio_l * c2),
        row(1, "Bernstein", "Bernstein 1946", "independent", sigma2),
        row(1, "Bennett", "Bennett 1962", "independent", sigma2),
        row(
            1,
            "Bernstein",
            "Paulin 2015 (3.22)",
            "finite, reversible",
            4.0 * sigma2 / (1.0 - lambda * lambda),
        ),
        row(1, "Bernstein", "Theorem 1.1", "general", ratio_l * sigma2),
        row(2, "Hoeffding", "Hoeffding 1963", "independent", c2),
        row(
            2,
            "Hoeffding",
            "Leon-Perron 2004",
            "finite, reversible",
            ratio_lp * c2,
        ),
        row(2, "Hoeffding", "Miasojedow 2014", "general", ratio_l * c2),
        row(2, "Hoeffding", "Fan-Jiang-Sun 2018", "general", ratio_lp * c2),
        row(2, "Bernstein", "Bernstein 1946", "independent", sigma2),
        row(2, "Bennett", "Bennett 1962", "independent", sigma2),
        row(
            2,
            "Chernoff",
            "Lezaud 1998 (1)",
            "finite, reversible",
            2.0 * sigma2 / (1.0 - lp0),
        ),
        row(
            2,
            "Chernoff",
            "Lezaud 1998 (13)",
            "general",
            4.0 * sigma2 / (1.0 - lambda),
        ),
        ProxyRow {
            table: 2,
            kind: "Bernstein",
            reference: "Paulin 2015 (3.20)",
            condition: "finite, reversible",
            proxy: (ratio_lp + 0.8) * sigma2,
            note: Some("asymptotic variance replaced by its worst case"),
        },
        row(
            2,
            "Bernstein",
            "Paulin 2015 (3.21)",
            "finite, reversible",
            2.0 * sigma2 / (1.0 - lp0),
        ),
        row(2, "Bernstein", "Theorem 1.2", "general", ratio_lp * sigma2),
    ]
}
