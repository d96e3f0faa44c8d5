//! Vector fields of the Shimizu-Morioka family and the Lorenz system.
//!
//! The three supported fields are
//!
//! * Shimizu-Morioka: `x' = y`, `y' = x - λy - xz`, `z' = -αz + x²`;
//! * extended Shimizu-Morioka: same with an extra `-Bx³` in `y'`;
//! * Lorenz: `x' = σ(y - x)`, `y' = x(r - z) - y`, `z' = xy - bz`.
//!
//! All three commute with the axial symmetry `(x, y, z) -> (-x, -y, z)`.

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;

use crate::error::{Error, Result};

/// A phase-space point `(x, y, z)`.
pub type State = Vector3<f64>;

/// Which vector field a [`SystemParams`] describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemId {
    ShimizuMorioka,
    ExtendedSM,
    Lorenz,
}

/// Parameters of one supported vector field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SystemParams {
    ShimizuMorioka { alpha: f64, lambda: f64 },
    ExtendedSM { alpha: f64, lambda: f64, b_cubic: f64 },
    Lorenz { b: f64, sigma: f64, r: f64 },
}

impl SystemParams {
    pub fn shimizu_morioka(alpha: f64, lambda: f64) -> Result<Self> {
        let p = SystemParams::ShimizuMorioka { alpha, lambda };
        p.validate()?;
        Ok(p)
    }

    pub fn extended_sm(alpha: f64, lambda: f64, b_cubic: f64) -> Result<Self> {
        let p = SystemParams::ExtendedSM { alpha, lambda, b_cubic };
        p.validate()?;
        Ok(p)
    }

    pub fn lorenz(b: f64, sigma: f64, r: f64) -> Result<Self> {
        let p = SystemParams::Lorenz { b, sigma, r };
        p.validate()?;
        Ok(p)
    }

    pub fn system_id(&self) -> SystemId {
        match self {
            SystemParams::ShimizuMorioka { .. } => SystemId::ShimizuMorioka,
            SystemParams::ExtendedSM { .. } => SystemId::ExtendedSM,
            SystemParams::Lorenz { .. } => SystemId::Lorenz,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            SystemParams::ShimizuMorioka { alpha, lambda } => {
                check_finite(&[alpha, lambda])?;
                if alpha <= 0.0 {
                    return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
                }
            }
            SystemParams::ExtendedSM { alpha, lambda, b_cubic } => {
                check_finite(&[alpha, lambda, b_cubic])?;
                if alpha <= 0.0 {
                    return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
                }
            }
            SystemParams::Lorenz { b, sigma, r } => check_finite(&[b, sigma, r])?,
        }
        Ok(())
    }

    /// `(alpha, lambda)` for the Shimizu-Morioka variants.
    pub fn alpha_lambda(&self) -> Option<(f64, f64)> {
        match *self {
            SystemParams::ShimizuMorioka { alpha, lambda }
            | SystemParams::ExtendedSM { alpha, lambda, .. } => Some((alpha, lambda)),
            SystemParams::Lorenz { .. } => None,
        }
    }

    /// Same system with `(alpha, lambda)` replaced; Lorenz parameters are returned unchanged.
    pub fn with_alpha_lambda(&self, alpha: f64, lambda: f64) -> Self {
        match *self {
            SystemParams::ShimizuMorioka { .. } => SystemParams::ShimizuMorioka { alpha, lambda },
            SystemParams::ExtendedSM { b_cubic, .. } => {
                SystemParams::ExtendedSM { alpha, lambda, b_cubic }
            }
            p @ SystemParams::Lorenz { .. } => p,
        }
    }

    /// Unchecked right-hand side; callers on hot paths validate once up front.
    #[inline]
    pub fn rhs(&self, s: &State) -> State {
        let (x, y, z) = (s[0], s[1], s[2]);
        match *self {
            SystemParams::ShimizuMorioka { alpha, lambda } => {
                State::new(y, x - lambda * y - x * z, -alpha * z + x * x)
            }
            SystemParams::ExtendedSM { alpha, lambda, b_cubic } => State::new(
                y,
                x - lambda * y - x * z - b_cubic * x * x * x,
                -alpha * z + x * x,
            ),
            SystemParams::Lorenz { b, sigma, r } => {
                State::new(sigma * (y - x), x * (r - z) - y, x * y - b * z)
            }
        }
    }

    /// Unchecked Jacobian of [`SystemParams::rhs`].
    #[inline]
    pub fn jacobian_at(&self, s: &State) -> Matrix3<f64> {
        let (x, y, z) = (s[0], s[1], s[2]);
        match *self {
            SystemParams::ShimizuMorioka { alpha, lambda } => Matrix3::new(
                0.0, 1.0, 0.0, //
                1.0 - z, -lambda, -x, //
                2.0 * x, 0.0, -alpha,
            ),
            SystemParams::ExtendedSM { alpha, lambda, b_cubic } => Matrix3::new(
                0.0, 1.0, 0.0, //
                1.0 - z - 3.0 * b_cubic * x * x, -lambda, -x, //
                2.0 * x, 0.0, -alpha,
            ),
            SystemParams::Lorenz { b, sigma, r } => Matrix3::new(
                -sigma, sigma, 0.0, //
                r - z, -1.0, -x, //
                y, x, -b,
            ),
        }
    }
}

fn check_finite(values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("parameters"))
    }
}

fn check_state(s: &State) -> Result<()> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("state"))
    }
}

/// Time derivative at `s`, with parameter and state validation.
pub fn vector_field(p: &SystemParams, s: &State) -> Result<State> {
    p.validate()?;
    check_state(s)?;
    Ok(p.rhs(s))
}

/// Jacobian matrix of the vector field at `s`.
pub fn jacobian(p: &SystemParams, s: &State) -> Result<Matrix3<f64>> {
    p.validate()?;
    check_state(s)?;
    Ok(p.jacobian_at(s))
}

/// The axial symmetry `(x, y, z) -> (-x, -y, z)`.
pub fn apply_symmetry(s: &State) -> State {
    State::new(-s[0], -s[1], s[2])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EquilibriumKind {
    Origin,
    Plus,
    Minus,
}

/// Location and linearisation of one equilibrium.
///
/// `gamma`, `lambda_s` and `lambda_ss` are the real parts of the sorted
/// eigenvalues; they carry their usual saddle meaning only when
/// `saddle_index` is `Some`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumReport {
    pub kind: EquilibriumKind,
    pub location: State,
    /// Sorted by real part descending, ties by imaginary part descending.
    pub eigenvalues: [Complex64; 3],
    pub gamma: f64,
    pub lambda_s: f64,
    pub lambda_ss: f64,
    pub saddle_index: Option<f64>,
    pub a2_condition_holds: bool,
}

impl EquilibriumReport {
    fn new(p: &SystemParams, kind: EquilibriumKind, location: State, mut ev: [Complex64; 3]) -> Self {
        sort_eigenvalues(&mut ev);
        let all_real = ev.iter().all(|z| z.im == 0.0);
        let (gamma, lambda_s, lambda_ss) = (ev[0].re, ev[1].re, ev[2].re);
        let saddle = all_real && gamma > 0.0 && 0.0 > lambda_s && lambda_s > lambda_ss;
        let saddle_index = saddle.then(|| -lambda_s / gamma);
        let a2_condition_holds = saddle && location[0] == 0.0 && location[1] == 0.0 && {
            let j = p.jacobian_at(&location);
            let ez = State::z();
            (j * ez - ez * lambda_s).norm() < 1e-9
        };
        EquilibriumReport {
            kind,
            location,
            eigenvalues: ev,
            gamma,
            lambda_s,
            lambda_ss,
            saddle_index,
            a2_condition_holds,
        }
    }

    /// True when every eigenvalue has negative real part.
    pub fn is_stable(&self) -> bool {
        self.eigenvalues[0].re < 0.0
    }
}

fn sort_eigenvalues(ev: &mut [Complex64; 3]) {
    ev.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
}

/// Equilibria `O`, `O+`, `O-` (in that order).
///
/// For the Shimizu-Morioka origin the eigenvalues come from the closed form
/// `{-α, (-λ ± √(λ²+4))/2}`; every other equilibrium goes through the cubic
/// solver on its characteristic polynomial.
pub fn equilibria(p: &SystemParams) -> Result<Vec<EquilibriumReport>> {
    p.validate()?;
    let mut out = Vec::with_capacity(3);
    match *p {
        SystemParams::ShimizuMorioka { alpha, lambda } => {
            let root = (lambda * lambda + 4.0).sqrt();
            let ev = [
                Complex64::new(-alpha, 0.0),
                Complex64::new((-lambda + root) / 2.0, 0.0),
                Complex64::new((-lambda - root) / 2.0, 0.0),
            ];
            out.push(EquilibriumReport::new(p, EquilibriumKind::Origin, State::zeros(), ev));
            let x = alpha.sqrt();
            // Characteristic polynomial at O±: s³ + (λ+α)s² + αλ s + 2α.
            let ev = cubic_roots(lambda + alpha, alpha * lambda, 2.0 * alpha);
            out.push(EquilibriumReport::new(p, EquilibriumKind::Plus, State::new(x, 0.0, 1.0), ev));
            out.push(EquilibriumReport::new(p, EquilibriumKind::Minus, State::new(-x, 0.0, 1.0), ev));
        }
        SystemParams::ExtendedSM { alpha, b_cubic, .. } => {
            out.push(report_via_polynomial(p, EquilibriumKind::Origin, State::zeros()));
            let denom = 1.0 + alpha * b_cubic;
            if denom > 0.0 {
                let x2 = alpha / denom;
                let x = x2.sqrt();
                let z = x2 / alpha;
                out.push(report_via_polynomial(p, EquilibriumKind::Plus, State::new(x, 0.0, z)));
                out.push(report_via_polynomial(p, EquilibriumKind::Minus, State::new(-x, 0.0, z)));
            }
        }
        SystemParams::Lorenz { b, r, .. } => {
            out.push(report_via_polynomial(p, EquilibriumKind::Origin, State::zeros()));
            if b * (r - 1.0) > 0.0 {
                let c = (b * (r - 1.0)).sqrt();
                out.push(report_via_polynomial(p, EquilibriumKind::Plus, State::new(c, c, r - 1.0)));
                out.push(report_via_polynomial(p, EquilibriumKind::Minus, State::new(-c, -c, r - 1.0)));
            }
        }
    }
    Ok(out)
}

/// Report for the saddle at the origin.
pub fn origin_report(p: &SystemParams) -> Result<EquilibriumReport> {
    Ok(equilibria(p)?.swap_remove(0))
}

fn report_via_polynomial(p: &SystemParams, kind: EquilibriumKind, location: State) -> EquilibriumReport {
    let (a, b, c) = characteristic_polynomial(&p.jacobian_at(&location));
    EquilibriumReport::new(p, kind, location, cubic_roots(a, b, c))
}

/// Coefficients `(a, b, c)` of the monic characteristic polynomial `s³ + a s² + b s + c`.
pub fn characteristic_polynomial(j: &Matrix3<f64>) -> (f64, f64, f64) {
    let trace = j.trace();
    let minors = j[(0, 0)] * j[(1, 1)] - j[(0, 1)] * j[(1, 0)]
        + j[(0, 0)] * j[(2, 2)] - j[(0, 2)] * j[(2, 0)]
        + j[(1, 1)] * j[(2, 2)] - j[(1, 2)] * j[(2, 1)];
    (-trace, minors, -j.determinant())
}

/// Evaluates `s³ + a s² + b s + c`.
pub fn eval_cubic(a: f64, b: f64, c: f64, s: Complex64) -> Complex64 {
    ((s + a) * s + b) * s + c
}

/// Roots of the monic real cubic `s³ + a s² + b s + c`.
///
/// One real root is taken from the Cardano / trigonometric form and
/// Newton-polished, the remaining quadratic factor is solved with the
/// cancellation-free formula, and every root gets a final complex Newton pass.
pub fn cubic_roots(a: f64, b: f64, c: f64) -> [Complex64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + c;
    let disc = (q / 2.0).powi(2) + (p / 3.0).powi(3);
    let t = if disc > 0.0 {
        let sq = disc.sqrt();
        (-q / 2.0 + sq).cbrt() + (-q / 2.0 - sq).cbrt()
    } else if p == 0.0 {
        0.0
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        m * (arg.acos() / 3.0).cos()
    };
    let mut r = t - a / 3.0;
    for _ in 0..4 {
        let f = ((r + a) * r + b) * r + c;
        let df = (3.0 * r + 2.0 * a) * r + b;
        if df == 0.0 {
            break;
        }
        let next = r - f / df;
        if !next.is_finite() {
            break;
        }
        r = next;
    }
    // s³ + a s² + b s + c = (s - r)(s² + p1 s + p0)
    let p1 = a + r;
    let p0 = b + p1 * r;
    let (q1, q2) = quadratic_roots(p1, p0);
    let complex_pair = q1.im != 0.0;
    let mut roots = [Complex64::new(r, 0.0), q1, q2];
    let polish = if complex_pair { 2 } else { 3 };
    for z in roots.iter_mut().take(polish) {
        for _ in 0..2 {
            let f = eval_cubic(a, b, c, *z);
            let df = (*z * 3.0 + 2.0 * a) * *z + b;
            if df.norm() == 0.0 {
                break;
            }
            let next = *z - f / df;
            if next.re.is_finite() && next.im.is_finite() && eval_cubic(a, b, c, next).norm() <= f.norm() {
                *z = next;
            }
        }
        if z.im.abs() < 1e-14 * z.re.abs().max(1.0) {
            z.im = 0.0;
        }
    }
    if complex_pair {
        roots[2] = roots[1].conj();
    }
    roots
}

fn quadratic_roots(b: f64, c: f64) -> (Complex64, Complex64) {
    let disc = b * b - 4.0 * c;
    if disc >= 0.0 {
        let sq = disc.sqrt();
        let qq = -0.5 * (b + b.signum() * sq);
        if qq == 0.0 {
            return (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        }
        let r1 = qq;
        let r2 = c / qq;
        (Complex64::new(r1, 0.0), Complex64::new(r2, 0.0))
    } else {
        let re = -b / 2.0;
        let im = (-disc).sqrt() / 2.0;
        (Complex64::new(re, im), Complex64::new(re, -im))
    }
}

/// Unit eigenvector of `j` for the real eigenvalue `ev`, taken as the
/// largest cross product of two rows of `j - ev I`.
pub fn real_eigenvector(j: &Matrix3<f64>, ev: f64) -> Option<State> {
    let m = j - Matrix3::identity() * ev;
    let rows = [m.row(0).transpose(), m.row(1).transpose(), m.row(2).transpose()];
    let candidates = [rows[0].cross(&rows[1]), rows[0].cross(&rows[2]), rows[1].cross(&rows[2])];
    let best = candidates.into_iter().max_by(|a, b| a.norm().total_cmp(&b.norm()))?;
    let n = best.norm();
    (n > 0.0).then(|| best / n)
}

/// Eigenvectors `(e_u, e_s, e_ss)` of the saddle at the origin, ordered
/// like its eigenvalues; `e_u` is oriented with `x > 0`.
pub fn origin_eigenbasis(p: &SystemParams) -> Result<[State; 3]> {
    let o = origin_report(p)?;
    if o.saddle_index.is_none() {
        return Err(Error::Domain("origin is not a saddle with real spectrum".into()));
    }
    let j = p.jacobian_at(&State::zeros());
    let mut out = [State::zeros(); 3];
    for (k, ev) in [o.gamma, o.lambda_s, o.lambda_ss].into_iter().enumerate() {
        out[k] = real_eigenvector(&j, ev)
            .ok_or_else(|| Error::Domain("repeated eigenvalue at the origin".into()))?;
    }
    if out[0][0] < 0.0 {
        out[0] = -out[0];
    }
    Ok(out)
}

/// Closed-form curves in the `(α, λ)` plane of the Shimizu-Morioka system.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AnalyticCurve {
    /// Andronov-Hopf bifurcation of `O±`: `α = (2 - λ²)/λ`.
    Hopf,
    /// Constant saddle index `ν(O) = ν₀`: `α = ν₀(√(λ²+4) - λ)/2`.
    SaddleIndexLevel(f64),
}

/// `α` on the given curve at parameter `λ`.
pub fn analytic_curve(kind: AnalyticCurve, lambda: f64) -> Result<f64> {
    if !lambda.is_finite() || lambda <= 0.0 {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    match kind {
        AnalyticCurve::Hopf => {
            if lambda >= std::f64::consts::SQRT_2 {
                return Err(Error::Domain(format!("Hopf curve needs lambda < sqrt(2), got {lambda}")));
            }
            Ok((2.0 - lambda * lambda) / lambda)
        }
        AnalyticCurve::SaddleIndexLevel(nu) => {
            if !(nu > 0.0) {
                return Err(Error::Domain(format!("saddle index level must be positive, got {nu}")));
            }
            Ok(nu * ((lambda * lambda + 4.0).sqrt() - lambda) / 2.0)
        }
    }
}

/// `λ` on the Hopf curve at fixed `α`: the positive root of `λ² + αλ - 2 = 0`.
pub fn hopf_lambda(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("alpha must be positive, got {alpha}")));
    }
    Ok((-alpha + (alpha * alpha + 8.0).sqrt()) / 2.0)
}

/// Largest real part among the eigenvalues of `O+`.
fn leading_real_part_plus(alpha: f64, lambda: f64) -> Result<f64> {
    let p = SystemParams::shimizu_morioka(alpha, lambda)?;
    Ok(equilibria(&p)?[1].eigenvalues[0].re)
}

fn bisect_sign<F: Fn(f64) -> Result<f64>>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> Result<f64> {
    let mut flo = f(lo)?;
    let fhi = f(hi)?;
    if flo.signum() == fhi.signum() {
        return Err(Error::NoSignChange(format!(
            "f({lo}) = {flo:e}, f({hi}) = {fhi:e}"
        )));
    }
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid)?;
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Numeric Hopf crossing in `λ` at fixed `α`, located by bisection on the
/// sign of the leading real part of the `O+` spectrum.
pub fn hopf_scan_lambda(alpha: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    bisect_sign(|l| leading_real_part_plus(alpha, l), lo, hi, tol)
}

/// Numeric Hopf crossing in `α` at fixed `λ`.
pub fn hopf_scan_alpha(lambda: f64, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    bisect_sign(|a| leading_real_part_plus(a, lambda), lo, hi, tol)
}

/// Parameters of the extended Shimizu-Morioka system conjugate to Lorenz `(b, σ, r)`.
pub fn lorenz_to_extended_sm(b: f64, sigma: f64, r: f64) -> Result<(f64, f64, f64)> {
    check_finite(&[b, sigma, r])?;
    let s = sigma * (r - 1.0);
    if !(s > 0.0) {
        return Err(Error::Domain(format!("sigma (r - 1) must be positive, got {s}")));
    }
    let denom = 2.0 * sigma - b;
    if denom == 0.0 {
        return Err(Error::Domain("2 sigma - b vanishes".into()));
    }
    let root = s.sqrt();
    Ok((b / root, (1.0 + sigma) / root, root / denom))
}

/// Change of coordinates and time taking Lorenz orbits to extended
/// Shimizu-Morioka orbits.
#[derive(Debug, Clone, Copy)]
pub struct LorenzConjugacy {
    pub sigma: f64,
    pub target: SystemParams,
    /// `t_new = time_scale * t`.
    pub time_scale: f64,
    x_scale: f64,
    y_scale: f64,
    z_scale: f64,
}

impl LorenzConjugacy {
    pub fn new(b: f64, sigma: f64, r: f64) -> Result<Self> {
        let (alpha, lambda, b_cubic) = lorenz_to_extended_sm(b, sigma, r)?;
        let s = sigma * (r - 1.0);
        let k2 = sigma - b / 2.0;
        if !(k2 > 0.0) {
            return Err(Error::Domain(format!("sigma - b/2 must be positive, got {k2}")));
        }
        let k = k2.sqrt();
        Ok(LorenzConjugacy {
            sigma,
            target: SystemParams::ExtendedSM { alpha, lambda, b_cubic },
            time_scale: s.sqrt(),
            x_scale: k / s.powf(0.75),
            y_scale: k * sigma / s.powf(1.25),
            z_scale: sigma / s,
        })
    }

    /// Image of a Lorenz state.
    pub fn map_state(&self, s: &State) -> State {
        let (x, y, z) = (s[0], s[1], s[2]);
        State::new(
            self.x_scale * x,
            self.y_scale * (y - x),
            self.z_scale * (z - x * x / (2.0 * self.sigma)),
        )
    }

    /// Derivative of the mapped state with respect to the new time, given
    /// the Lorenz state and its Lorenz-time derivative.
    pub fn map_velocity(&self, s: &State, ds: &State) -> State {
        let x = s[0];
        let d = State::new(
            self.x_scale * ds[0],
            self.y_scale * (ds[1] - ds[0]),
            self.z_scale * (ds[2] - x * ds[0] / self.sigma),
        );
        d / self.time_scale
    }
}
