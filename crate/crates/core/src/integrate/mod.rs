//! Adaptive integration of the flow and its variational equations, section
//! crossings on the dense output, and seeding of the unstable separatrices.

pub mod dopri;
mod section;

use std::io::Write;
use std::time::Instant;

use nalgebra::Matrix3;

use crate::dynsys::{origin_eigenbasis, origin_report, SystemParams, State};
use crate::error::{Error, Result};
use dopri::{DenseStep, Dopri5, OdeSystem, StepControl, StepFailure};

pub use section::{
    detect_crossings, CrossingEvent, Direction, Predicate, SectionKind, SectionSpec, SectionWalker,
    WalkEvent,
};

#[derive(Debug, Clone, Copy)]
pub struct IntegratorConfig {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    /// Upper bound on integration time for open-ended runs (event walks).
    pub max_time: f64,
    pub escape_radius: f64,
    pub min_step: f64,
    pub initial_step: f64,
    /// Wall-clock deadline; runs past it fail with [`Error::Timeout`].
    pub deadline: Option<Instant>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            abs_tol: 1e-10,
            rel_tol: 1e-10,
            max_step: 0.5,
            max_time: 1e6,
            escape_radius: 1e3,
            min_step: 1e-13,
            initial_step: 1e-3,
            deadline: None,
        }
    }
}

impl IntegratorConfig {
    pub fn with_tol(tol: f64) -> Self {
        IntegratorConfig { abs_tol: tol, rel_tol: tol, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let tol_ok = |t: f64| t > 0.0 && t <= 1e-2;
        if !tol_ok(self.abs_tol) || !tol_ok(self.rel_tol) {
            return Err(Error::Domain(format!(
                "tolerances must lie in (0, 1e-2], got abs={} rel={}",
                self.abs_tol, self.rel_tol
            )));
        }
        if !(self.max_step > 0.0) || !(self.max_time > 0.0) || !(self.escape_radius > 0.0) {
            return Err(Error::Domain("max_step, max_time and escape_radius must be positive".into()));
        }
        if !(self.min_step > 0.0 && self.min_step < self.max_step) {
            return Err(Error::Domain("min_step must lie in (0, max_step)".into()));
        }
        Ok(())
    }

    fn control(&self) -> StepControl {
        StepControl {
            abs_tol: self.abs_tol,
            rel_tol: self.rel_tol,
            max_step: self.max_step,
            min_step: self.min_step,
        }
    }
}

/// The vector field as an [`OdeSystem`]; `sign = -1` runs time backwards.
#[derive(Debug, Clone, Copy)]
pub struct Field {
    pub params: SystemParams,
    pub sign: f64,
}

impl OdeSystem<3> for Field {
    #[inline]
    fn eval(&self, y: &[f64; 3], dy: &mut [f64; 3]) {
        let f = self.params.rhs(&State::from(*y));
        for i in 0..3 {
            dy[i] = self.sign * f[i];
        }
    }
}

/// Flow plus tangent map: `y[0..3]` is the state and `y[3..12]` holds the
/// three tangent vectors one after another, each obeying `v' = J v`.
#[derive(Debug, Clone, Copy)]
pub struct Variational {
    pub params: SystemParams,
}

impl OdeSystem<12> for Variational {
    #[inline]
    fn eval(&self, y: &[f64; 12], dy: &mut [f64; 12]) {
        let s = State::new(y[0], y[1], y[2]);
        let f = self.params.rhs(&s);
        let j = self.params.jacobian_at(&s);
        dy[0] = f[0];
        dy[1] = f[1];
        dy[2] = f[2];
        for k in 0..3 {
            let o = 3 + 3 * k;
            for r in 0..3 {
                dy[o + r] = j[(r, 0)] * y[o] + j[(r, 1)] * y[o + 1] + j[(r, 2)] * y[o + 2];
            }
        }
    }
}

pub fn pack_variational(s: &State, m: &Matrix3<f64>) -> [f64; 12] {
    let mut y = [0.0; 12];
    y[..3].copy_from_slice(s.as_slice());
    y[3..].copy_from_slice(m.as_slice());
    y
}

pub fn unpack_variational(y: &[f64; 12]) -> (State, Matrix3<f64>) {
    (State::new(y[0], y[1], y[2]), Matrix3::from_column_slice(&y[3..]))
}

/// Everything needed to resume a run bit-for-bit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Snapshot<const N: usize> {
    pub t: f64,
    pub y: [f64; N],
    pub h: f64,
}

/// Stepper wrapper that enforces escape and deadline checks.
pub struct Stepper<const N: usize, F> {
    inner: Dopri5<N, F>,
    cfg: IntegratorConfig,
}

pub type Flow = Stepper<3, Field>;
pub type VarFlow = Stepper<12, Variational>;

fn state_of<const N: usize>(y: &[f64; N]) -> State {
    State::new(y[0], y[1], y[2])
}

impl<const N: usize, F: OdeSystem<N>> Stepper<N, F> {
    pub fn with_system(f: F, y0: [f64; N], cfg: &IntegratorConfig) -> Result<Self> {
        cfg.validate()?;
        if y0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        Ok(Stepper { inner: Dopri5::new(f, 0.0, y0, cfg.control(), cfg.initial_step), cfg: *cfg })
    }

    pub fn t(&self) -> f64 {
        self.inner.t()
    }

    pub fn y(&self) -> &[f64; N] {
        self.inner.y()
    }

    pub fn state(&self) -> State {
        state_of(self.inner.y())
    }

    pub fn config(&self) -> &IntegratorConfig {
        &self.cfg
    }

    pub fn accepted_steps(&self) -> u64 {
        self.inner.accepted
    }

    pub fn snapshot(&self) -> Snapshot<N> {
        Snapshot { t: self.inner.t(), y: *self.inner.y(), h: self.inner.h() }
    }

    pub fn restore(&mut self, s: &Snapshot<N>) {
        self.inner.restore(s.t, s.y, s.h);
    }

    pub fn reset(&mut self, y: [f64; N]) {
        self.inner.reset_state(y);
    }

    pub fn step(&mut self, t_limit: Option<f64>) -> Result<&DenseStep<N>> {
        if let Some(d) = self.cfg.deadline {
            if Instant::now() >= d {
                return Err(Error::Timeout);
            }
        }
        let t = self.inner.t();
        let prev = state_of(self.inner.y());
        match self.inner.step(t_limit) {
            Ok(_) => {}
            Err(StepFailure::Underflow) | Err(StepFailure::NonFinite) => {
                return Err(Error::StepUnderflow { t, state: prev });
            }
        }
        let s = state_of(self.inner.y());
        if s.norm() > self.cfg.escape_radius {
            return Err(Error::Escape { t: self.inner.t(), radius: self.cfg.escape_radius, state: s });
        }
        Ok(self.inner.last())
    }

    /// Integrates up to exactly `t_end`.
    pub fn advance_to(&mut self, t_end: f64) -> Result<()> {
        while self.inner.t() < t_end {
            self.step(Some(t_end))?;
        }
        Ok(())
    }
}

impl Flow {
    pub fn new(p: &SystemParams, s0: State, cfg: &IntegratorConfig) -> Result<Self> {
        p.validate()?;
        Self::with_system(Field { params: *p, sign: 1.0 }, s0.into(), cfg)
    }

    pub fn backward(p: &SystemParams, s0: State, cfg: &IntegratorConfig) -> Result<Self> {
        p.validate()?;
        Self::with_system(Field { params: *p, sign: -1.0 }, s0.into(), cfg)
    }

    pub fn params(&self) -> &SystemParams {
        &self.inner.system().params
    }
}

impl VarFlow {
    pub fn new(p: &SystemParams, s0: State, m0: Matrix3<f64>, cfg: &IntegratorConfig) -> Result<Self> {
        p.validate()?;
        Self::with_system(Variational { params: *p }, pack_variational(&s0, &m0), cfg)
    }

    pub fn tangent(&self) -> Matrix3<f64> {
        unpack_variational(self.inner.y()).1
    }

    pub fn set_tangent(&mut self, m: &Matrix3<f64>) {
        let s = self.state();
        self.inner.reset_state(pack_variational(&s, m));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub state: State,
    pub tangent: Option<Matrix3<f64>>,
}

fn check_horizon(t_end: f64, s0: &State) -> Result<()> {
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(Error::Domain(format!("integration time must be positive, got {t_end}")));
    }
    if s0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial state"));
    }
    Ok(())
}

/// Samples at every accepted step on `[0, t_end]`, starting with `s0`.
pub fn integrate(p: &SystemParams, s0: State, cfg: &IntegratorConfig, t_end: f64) -> Result<Vec<TrajectorySample>> {
    check_horizon(t_end, &s0)?;
    let mut flow = Flow::new(p, s0, cfg)?;
    let mut out = vec![TrajectorySample { t: 0.0, state: s0, tangent: None }];
    while flow.t() < t_end {
        flow.step(Some(t_end))?;
        out.push(TrajectorySample { t: flow.t(), state: flow.state(), tangent: None });
    }
    Ok(out)
}

/// Samples on the uniform grid `0, dt, 2dt, …` read off the dense output.
pub fn integrate_sampled(
    p: &SystemParams,
    s0: State,
    cfg: &IntegratorConfig,
    t_end: f64,
    dt: f64,
) -> Result<Vec<TrajectorySample>> {
    check_horizon(t_end, &s0)?;
    if !(dt > 0.0) {
        return Err(Error::Domain("sampling interval must be positive".into()));
    }
    let mut flow = Flow::new(p, s0, cfg)?;
    let n = (t_end / dt).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(TrajectorySample { t: 0.0, state: s0, tangent: None });
    let mut k = 1;
    while flow.t() < t_end && k <= n {
        let st = flow.step(Some(t_end))?;
        while k <= n && (k as f64) * dt <= st.t1 {
            let t = k as f64 * dt;
            out.push(TrajectorySample { t, state: State::from(st.eval(t)), tangent: None });
            k += 1;
        }
    }
    Ok(out)
}

/// Final state and tangent map after time `t_end`, starting from `(s0, m0)`.
pub fn integrate_variational(
    p: &SystemParams,
    s0: State,
    m0: Matrix3<f64>,
    cfg: &IntegratorConfig,
    t_end: f64,
) -> Result<TrajectorySample> {
    check_horizon(t_end, &s0)?;
    let mut flow = VarFlow::new(p, s0, m0, cfg)?;
    flow.advance_to(t_end)?;
    Ok(TrajectorySample { t: flow.t(), state: flow.state(), tangent: Some(flow.tangent()) })
}

/// State after integrating backwards in time for `t_end` units.
pub fn integrate_backward(p: &SystemParams, s0: State, cfg: &IntegratorConfig, t_end: f64) -> Result<State> {
    check_horizon(t_end, &s0)?;
    let mut flow = Flow::backward(p, s0, cfg)?;
    flow.advance_to(t_end)?;
    Ok(flow.state())
}

pub fn write_trajectory_csv<W: Write>(mut w: W, samples: &[TrajectorySample]) -> Result<()> {
    writeln!(w, "t,x,y,z")?;
    for s in samples {
        writeln!(w, "{},{},{},{}", s.t, s.state[0], s.state[1], s.state[2])?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Branch {
    Plus,
    Minus,
}

/// Starting point `±ε e_u` on the unstable separatrix `Γ±` of the origin.
pub fn separatrix_seed(p: &SystemParams, branch: Branch, eps: f64) -> Result<State> {
    if !(1e-9..=1e-3).contains(&eps) {
        return Err(Error::Domain(format!("separatrix offset must lie in [1e-9, 1e-3], got {eps}")));
    }
    let o = origin_report(p)?;
    if !(o.gamma > 0.0) {
        return Err(Error::Domain("origin has no unstable direction".into()));
    }
    let eu = origin_eigenbasis(p)?[0];
    Ok(match branch {
        Branch::Plus => eu * eps,
        Branch::Minus => -eu * eps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::apply_symmetry;
    use proptest::prelude::*;

    fn sm() -> SystemParams {
        SystemParams::shimizu_morioka(0.4, 0.9).unwrap()
    }

    fn on_attractor() -> State {
        let s = separatrix_seed(&sm(), Branch::Plus, 1e-6).unwrap();
        let mut f = Flow::new(&sm(), s, &IntegratorConfig::default()).unwrap();
        f.advance_to(200.0).unwrap();
        f.state()
    }

    #[test]
    fn equilibrium_stays_put() {
        let tr = integrate(&sm(), State::zeros(), &IntegratorConfig::default(), 50.0).unwrap();
        assert!(tr.iter().all(|s| s.state == State::zeros()));
        let op = State::new(0.4f64.sqrt(), 0.0, 1.0);
        let tr = integrate(&sm(), op, &IntegratorConfig::default(), 50.0).unwrap();
        assert!(tr.iter().all(|s| (s.state - op).norm() < 1e-12));
    }

    #[test]
    fn stays_in_pilot_box() {
        // Pilot run box: |x| < 2.2, |y| < 1.9, 0 < z < 2.8 (from one reference run, with margin).
        let tr = integrate(&sm(), on_attractor(), &IntegratorConfig::default(), 1e3).unwrap();
        for s in &tr {
            assert!(s.state[0].abs() < 2.2 && s.state[1].abs() < 1.9, "{:?}", s.state);
            assert!(s.state[2] > 0.0 && s.state[2] < 2.8, "{:?}", s.state);
        }
    }

    #[test]
    fn self_convergence() {
        let s0 = State::new(0.1, 0.2, 0.3);
        let end = |tol: f64| integrate(&sm(), s0, &IntegratorConfig::with_tol(tol), 50.0).unwrap().last().unwrap().state;
        let coarse = end(1e-8);
        let fine = end(5e-9);
        assert!((coarse[0] - fine[0]).abs() < 10.0 * 1e-8, "{}", (coarse[0] - fine[0]).abs());
    }

    #[test]
    fn forward_then_backward_returns() {
        let s0 = on_attractor();
        let cfg = IntegratorConfig::default();
        let tr = integrate(&sm(), s0, &cfg, 2.0).unwrap();
        let back = integrate_backward(&sm(), tr.last().unwrap().state, &cfg, 2.0).unwrap();
        assert!((back - s0).norm() < 100.0 * 1e-10, "{}", (back - s0).norm());
    }

    #[test]
    fn sampled_grid_is_uniform() {
        let tr = integrate_sampled(&sm(), State::new(0.1, 0.0, 0.0), &IntegratorConfig::default(), 5.0, 0.25).unwrap();
        assert_eq!(tr.len(), 21);
        for (k, s) in tr.iter().enumerate() {
            assert!((s.t - 0.25 * k as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn escape_is_reported() {
        let p = SystemParams::shimizu_morioka(0.4, -1.0).unwrap();
        let r = integrate(&p, State::new(1.0, 1.0, 0.0), &IntegratorConfig::default(), 1e3);
        assert!(matches!(r, Err(Error::Escape { .. })), "{r:?}");
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = IntegratorConfig::default();
        cfg.abs_tol = 0.5;
        assert!(integrate(&sm(), State::zeros(), &cfg, 1.0).is_err());
        assert!(integrate(&sm(), State::zeros(), &IntegratorConfig::default(), -1.0).is_err());
        let nan = State::new(f64::NAN, 0.0, 0.0);
        assert!(integrate(&sm(), nan, &IntegratorConfig::default(), 1.0).is_err());
    }

    #[test]
    fn variational_matches_finite_difference() {
        let s0 = on_attractor();
        let cfg = IntegratorConfig::default();
        let out = integrate_variational(&sm(), s0, Matrix3::identity(), &cfg, 1.0).unwrap();
        let m = out.tangent.unwrap();
        let h = 1e-6;
        for k in 0..3 {
            let mut d = State::zeros();
            d[k] = h;
            let plus = integrate(&sm(), s0 + d, &cfg, 1.0).unwrap().last().unwrap().state;
            let minus = integrate(&sm(), s0 - d, &cfg, 1.0).unwrap().last().unwrap().state;
            let col = (plus - minus) / (2.0 * h);
            assert!((col - m.column(k)).norm() < 1e-4, "{k}: {}", (col - m.column(k)).norm());
        }
    }

    #[test]
    fn separatrix_seed_construction() {
        let p = sm();
        let s = separatrix_seed(&p, Branch::Plus, 1e-6).unwrap();
        assert!(s[0] > 0.0);
        assert!((s.norm() - 1e-6).abs() < 1e-15);
        let m = separatrix_seed(&p, Branch::Minus, 1e-6).unwrap();
        assert_eq!(m, apply_symmetry(&s));
        let eu = s / s.norm();
        let gamma = (-0.9 + 4.81f64.sqrt()) / 2.0;
        assert!((p.jacobian_at(&State::zeros()) * eu - eu * gamma).norm() < 1e-10);
        assert!((gamma - 0.646586).abs() < 1e-6);
        assert!(separatrix_seed(&p, Branch::Plus, 1e-2).is_err());
        assert!(separatrix_seed(&p, Branch::Plus, 1e-12).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn symmetric_image_is_an_orbit(x in -1.5f64..1.5, y in -1.0f64..1.0, z in 0.0f64..2.0) {
            let cfg = IntegratorConfig::default();
            let s0 = State::new(x, y, z);
            let a = integrate_sampled(&sm(), s0, &cfg, 5.0, 0.5).unwrap();
            let b = integrate_sampled(&sm(), apply_symmetry(&s0), &cfg, 5.0, 0.5).unwrap();
            for (u, v) in a.iter().zip(&b) {
                prop_assert!((apply_symmetry(&u.state) - v.state).norm() < 1e-8);
            }
        }
    }
}
