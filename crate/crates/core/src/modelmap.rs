//! The truncated model map `X -> mu - A |X|^nu`: critical orbit, bifurcation
//! curves (closed form and by root finding) and regime charts.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub mu: f64,
    pub a: f64,
    pub nu: f64,
}

impl ModelParams {
    pub fn new(mu: f64, a: f64, nu: f64) -> Result<Self> {
        if !(nu > 0.0) || !mu.is_finite() || !a.is_finite() || !nu.is_finite() {
            return Err(Error::Domain(format!("bad model parameters mu={mu} A={a} nu={nu}")));
        }
        Ok(ModelParams { mu, a, nu })
    }

    /// `(mu, A) -> (-mu, -A)`. The mirrored map is conjugate to this one by
    /// `X -> -X`, so both have the same regime.
    pub fn mirrored(&self) -> Self {
        ModelParams { mu: -self.mu, a: -self.a, nu: self.nu }
    }
}

#[inline]
pub fn step(x: f64, p: &ModelParams) -> f64 {
    p.mu - p.a * x.abs().powf(p.nu)
}

#[inline]
pub fn slope(x: f64, p: &ModelParams) -> f64 {
    -p.a * p.nu * x.abs().powf(p.nu - 1.0) * x.signum()
}

fn iterate(x: f64, p: &ModelParams, n: usize) -> f64 {
    (0..n).fold(x, |x, _| step(x, p))
}

/// Side from which the critical point is approached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ZeroSide {
    Plus,
    /// The mirror image of the `Plus` orbit; its kneading is the complement.
    Minus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CriticalOrbit {
    /// `orbit[0] = 0`, then `N` iterates.
    pub orbit: Vec<f64>,
    pub symbols: Vec<u8>,
    pub diverged: bool,
}

pub const DIVERGENCE_RADIUS: f64 = 1e6;

pub fn critical_orbit(p: &ModelParams, n: usize, side: ZeroSide) -> Result<CriticalOrbit> {
    if n == 0 {
        return Err(Error::Domain("need at least one iterate".into()));
    }
    let mut orbit = vec![0.0];
    let mut x = 0.0;
    let mut diverged = false;
    for _ in 0..n {
        x = step(x, p);
        if !x.is_finite() || x.abs() > DIVERGENCE_RADIUS {
            diverged = true;
            break;
        }
        orbit.push(x);
    }
    let symbols = match side {
        ZeroSide::Plus => orbit[1..].iter().map(|&x| u8::from(x >= 0.0)).collect(),
        ZeroSide::Minus => {
            for x in orbit.iter_mut() {
                *x = -*x;
            }
            orbit[1..].iter().map(|&x| u8::from(x > 0.0)).collect()
        }
    };
    Ok(CriticalOrbit { orbit, symbols, diverged })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CurveKind {
    L1,
    L2,
    L1La,
    L2La,
    LSn,
    LPd,
    LLac,
}

impl CurveKind {
    pub const ALL: [CurveKind; 7] =
        [CurveKind::L1, CurveKind::L2, CurveKind::L1La, CurveKind::L2La, CurveKind::LSn, CurveKind::LPd, CurveKind::LLac];

    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::L1 => "l1",
            CurveKind::L2 => "l2",
            CurveKind::L1La => "l1_LA",
            CurveKind::L2La => "l2_LA",
            CurveKind::LSn => "l_SN",
            CurveKind::LPd => "l_PD",
            CurveKind::LLac => "l_lac",
        }
    }

    pub fn is_analytic(&self) -> bool {
        matches!(self, CurveKind::L1 | CurveKind::L2 | CurveKind::L1La)
    }
}

fn check_range(a: f64, nu: f64) -> Result<()> {
    if !(nu > 0.0 && nu < 1.0) {
        return Err(Error::Domain(format!("curve formulas need 0 < nu < 1, got {nu}")));
    }
    if !(a > 0.0) {
        return Err(Error::Domain(format!("curve formulas need A > 0, got {a}")));
    }
    Ok(())
}

pub fn analytic_curve(kind: CurveKind, a: f64, nu: f64) -> Result<f64> {
    check_range(a, nu)?;
    let e = 1.0 / (1.0 - nu);
    match kind {
        CurveKind::L1 => Ok(0.0),
        CurveKind::L2 => Ok(a.powf(e)),
        CurveKind::L1La => Ok((a / 2.0).powf(e)),
        _ => Err(Error::Domain(format!("{} has no closed form here", kind.as_str()))),
    }
}

/// Positive point where `|f'| = 1`, `(A nu)^(1/(1-nu))`.
pub fn unit_slope_point(a: f64, nu: f64) -> f64 {
    (a * nu).powf(1.0 / (1.0 - nu))
}

/// Bisection to the last representable bracket.
fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// The fixed point on the decreasing branch (`x > 0`), for `mu > 0`.
pub fn decreasing_fixed_point(p: &ModelParams) -> Option<f64> {
    (p.mu > 0.0 && p.a > 0.0).then(|| bisect(|x| step(x, p) - x, 0.0, p.mu))
}

/// Fixed points on the increasing branch (`x < 0`), found by dense sampling
/// of `f(x) - x` on `[-r, 0)`.
pub fn increasing_fixed_points(p: &ModelParams, r: f64, samples: usize) -> Vec<f64> {
    let g = |x: f64| step(x, p) - x;
    let xs: Vec<f64> = (0..=samples).map(|k| -r + r * k as f64 / samples as f64).filter(|x| *x < 0.0).collect();
    xs.windows(2).filter(|w| g(w[0]) * g(w[1]) < 0.0).map(|w| bisect(g, w[0], w[1])).collect()
}

/// The period-2 orbit `p1 < 0 < p2` with the smallest `p2`, if any.
pub fn straddling_period_two(p: &ModelParams) -> Option<(f64, f64)> {
    if !(p.mu > 0.0 && p.a > 0.0) {
        return None;
    }
    // p2 > z0 puts p1 = f(p2) below zero.
    let z0 = (p.mu / p.a).powf(1.0 / p.nu);
    let q = |x: f64| step(step(x, p), p) - x;
    let hi = z0 + 4.0 * p.mu.max(z0);
    // Geometric spacing away from z0, where p2 sits close to l2.
    let n = 4000;
    let mut prev = (z0, q(z0));
    for k in 0..=n {
        let x = z0 + (hi - z0) * 10f64.powf(-14.0 * (1.0 - k as f64 / n as f64));
        let v = q(x);
        if prev.1 * v < 0.0 {
            let p2 = bisect(q, prev.0, x);
            return Some((step(p2, p), p2));
        }
        prev = (x, v);
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub kind: CurveKind,
    pub params: ModelParams,
    /// Defining residual at the returned point.
    pub residual: f64,
}

/// Defining residual of a numeric curve as a function of `mu` at fixed
/// `(A, nu)`.
pub fn curve_residual(kind: CurveKind, p: &ModelParams) -> Result<f64> {
    let us = unit_slope_point(p.a, p.nu);
    Ok(match kind {
        // f(x) = x at the point where f' = 1 (x < 0).
        CurveKind::LSn => step(-us, p) + us,
        // f(x) = x at the point where f' = -1 (x > 0).
        CurveKind::LPd => step(us, p) - us,
        CurveKind::LLac => {
            let xs = decreasing_fixed_point(p).ok_or_else(|| Error::Domain("no decreasing-branch fixed point".into()))?;
            iterate(0.0, p, 3) - xs
        }
        CurveKind::L2La => {
            let (p1, _) = straddling_period_two(p).ok_or_else(|| Error::Domain("no straddling period-2 orbit".into()))?;
            iterate(0.0, p, 3) - p1
        }
        CurveKind::L1 => p.mu,
        CurveKind::L2 => iterate(0.0, p, 2),
        CurveKind::L1La => iterate(0.0, p, 3) - iterate(0.0, p, 2),
    })
}

/// Default `mu` bracket for a numeric curve at `(A, nu)`.
pub fn default_bracket(kind: CurveKind, a: f64, nu: f64) -> Result<(f64, f64)> {
    let l1la = analytic_curve(CurveKind::L1La, a, nu)?;
    let l2 = analytic_curve(CurveKind::L2, a, nu)?;
    Ok(match kind {
        CurveKind::LSn | CurveKind::LPd => (0.0, 2.0 * l2 + 1.0),
        _ => (l1la * (1.0 + 1e-9), l2 * (1.0 - 1e-6)),
    })
}

/// Root of the defining residual in `mu` on `bracket`, with `(A, nu)` fixed.
pub fn solve_curve(kind: CurveKind, a: f64, nu: f64, bracket: (f64, f64)) -> Result<CurvePoint> {
    check_range(a, nu)?;
    let r = |mu: f64| -> Result<f64> { curve_residual(kind, &ModelParams::new(mu, a, nu)?) };
    let (lo, hi) = bracket;
    let (rlo, rhi) = (r(lo)?, r(hi)?);
    if rlo * rhi > 0.0 {
        let samples: Vec<String> = (0..=4)
            .map(|k| {
                let mu = lo + (hi - lo) * k as f64 / 4.0;
                format!("{mu:.6e}:{:.3e}", r(mu).unwrap_or(f64::NAN))
            })
            .collect();
        return Err(Error::NoSignChange(format!("{} residual on [{lo}, {hi}]: {}", kind.as_str(), samples.join(" "))));
    }
    // Residual evaluation may fail inside the bracket; treat that as NaN so
    // the bisection still narrows.
    let mu = bisect(|m| r(m).unwrap_or(f64::NAN), lo, hi);
    let params = ModelParams::new(mu, a, nu)?;
    Ok(CurvePoint { kind, params, residual: curve_residual(kind, &params)? })
}

/// Any curve at `(A, nu)`: closed form where one exists, else root finding on
/// the default bracket.
pub fn curve_point(kind: CurveKind, a: f64, nu: f64) -> Result<CurvePoint> {
    if kind.is_analytic() {
        let params = ModelParams::new(analytic_curve(kind, a, nu)?, a, nu)?;
        return Ok(CurvePoint { kind, params, residual: curve_residual(kind, &params)? });
    }
    solve_curve(kind, a, nu, default_bracket(kind, a, nu)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    StablePeriodic,
    ChaoticCandidate,
    Escaped,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::StablePeriodic => "stable_periodic",
            Regime::ChaoticCandidate => "chaotic_candidate",
            Regime::Escaped => "escaped",
        }
    }
}

pub const MAX_PERIOD: usize = 64;
pub const CYCLE_TOL: f64 = 1e-9;

/// Iterates the critical orbit past `n_transient`, then looks for a cycle of
/// period at most 64 among the next `n_probe` iterates.
pub fn classify_regime(p: &ModelParams, n_transient: usize, n_probe: usize) -> Regime {
    let mut x = 0.0;
    for _ in 0..n_transient {
        x = step(x, p);
        if !x.is_finite() || x.abs() > DIVERGENCE_RADIUS {
            return Regime::Escaped;
        }
    }
    let n_probe = n_probe.max(2 * MAX_PERIOD);
    let mut tail = Vec::with_capacity(n_probe);
    for _ in 0..n_probe {
        x = step(x, p);
        if !x.is_finite() || x.abs() > DIVERGENCE_RADIUS {
            return Regime::Escaped;
        }
        tail.push(x);
    }
    let start = n_probe - MAX_PERIOD;
    for k in 1..=MAX_PERIOD {
        if (start..n_probe).all(|i| (tail[i] - tail[i - k]).abs() < CYCLE_TOL) {
            return Regime::StablePeriodic;
        }
    }
    Regime::ChaoticCandidate
}

/// Second chart axis next to `mu`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ChartAxis {
    /// Vary `nu` at fixed `A`.
    Nu { a: f64 },
    /// Vary `A` at fixed `nu`.
    A { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeChartSpec {
    pub axis: ChartAxis,
    pub mu: (f64, f64),
    pub other: (f64, f64),
    pub n_mu: usize,
    pub n_other: usize,
    pub n_transient: usize,
    pub n_probe: usize,
}

impl RegimeChartSpec {
    pub fn params_at(&self, i: usize, j: usize) -> (f64, f64, ModelParams) {
        let t = |lo: f64, hi: f64, k: usize, n: usize| if n <= 1 { lo } else { lo + (hi - lo) * k as f64 / (n - 1) as f64 };
        let mu = t(self.mu.0, self.mu.1, i, self.n_mu);
        let o = t(self.other.0, self.other.1, j, self.n_other);
        let p = match self.axis {
            ChartAxis::Nu { a } => ModelParams { mu, a, nu: o },
            ChartAxis::A { nu } => ModelParams { mu, a: o, nu },
        };
        (mu, o, p)
    }
}

/// Row-major cells `(mu, other, regime)`, `mu` varying fastest.
pub fn regime_chart(spec: &RegimeChartSpec) -> Vec<(f64, f64, Regime)> {
    (0..spec.n_mu * spec.n_other)
        .into_par_iter()
        .map(|k| {
            let (mu, o, p) = spec.params_at(k % spec.n_mu, k / spec.n_mu);
            (mu, o, classify_regime(&p, spec.n_transient, spec.n_probe))
        })
        .collect()
}

pub fn write_curves_csv<W: Write>(mut w: W, points: &[CurvePoint]) -> Result<()> {
    writeln!(w, "kind,mu,A,nu")?;
    for c in points {
        writeln!(w, "{},{},{},{}", c.kind.as_str(), c.params.mu, c.params.a, c.params.nu)?;
    }
    Ok(())
}

pub fn write_regime_csv<W: Write>(mut w: W, cells: &[(f64, f64, Regime)]) -> Result<()> {
    writeln!(w, "mu,A_or_nu,regime")?;
    for (mu, o, r) in cells {
        writeln!(w, "{mu},{o},{}", r.as_str())?;
    }
    Ok(())
}
