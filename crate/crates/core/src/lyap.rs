//! Lyapunov spectra by repeated orthonormalisation of the tangent flow, and
//! covariant Lyapunov vectors by the forward-QR / backward-triangular method.
//!
//! The backward pass needs the orthonormal frames of the forward pass in
//! reverse order. Only the triangular factors are kept for the whole run;
//! frames are regenerated segment by segment from stepper snapshots, which
//! replays the exact same step sequence.

use std::io::Write;

use nalgebra::{Matrix3, Vector3};

use crate::dynsys::{SystemParams, State};
use crate::error::{Error, Result};
use crate::integrate::{IntegratorConfig, Snapshot, VarFlow};

/// Modified Gram-Schmidt on the columns of `m`: returns `(Q, R)` with
/// `m = Q R`, `R` upper triangular with non-negative diagonal.
pub fn mgs_qr(m: &Matrix3<f64>) -> (Matrix3<f64>, Matrix3<f64>) {
    let mut q = *m;
    let mut r = Matrix3::zeros();
    for k in 0..3 {
        let nk = q.column(k).norm();
        r[(k, k)] = nk;
        let col = if nk > 0.0 { q.column(k) / nk } else { q.column(k).into_owned() };
        q.set_column(k, &col);
        for j in k + 1..3 {
            let d = q.column(k).dot(&q.column(j));
            r[(k, j)] = d;
            let upd = q.column(j) - q.column(k) * d;
            q.set_column(j, &upd);
        }
    }
    (q, r)
}

/// Tangent-flow runner that orthonormalises every `renorm` time units.
pub struct TangentRunner {
    flow: VarFlow,
    renorm: f64,
    steps: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct TangentCheckpoint {
    snap: Snapshot<12>,
    steps: u64,
}

impl TangentRunner {
    pub fn new(p: &SystemParams, s0: State, q0: Matrix3<f64>, renorm: f64, cfg: &IntegratorConfig) -> Result<Self> {
        if !(renorm > 0.0) {
            return Err(Error::Domain("renormalisation interval must be positive".into()));
        }
        let (q, _) = mgs_qr(&q0);
        Ok(TangentRunner { flow: VarFlow::new(p, s0, q, cfg)?, renorm, steps: 0 })
    }

    pub fn t(&self) -> f64 {
        self.flow.t()
    }

    pub fn state(&self) -> State {
        self.flow.state()
    }

    /// Current orthonormal frame.
    pub fn q(&self) -> Matrix3<f64> {
        self.flow.tangent()
    }

    /// Advances one interval and returns the triangular factor of that interval.
    pub fn advance(&mut self) -> Result<Matrix3<f64>> {
        self.steps += 1;
        // Interval ends are computed from the counter so replays land on the same times.
        let t_end = self.steps as f64 * self.renorm;
        self.flow.advance_to(t_end)?;
        let (q, r) = mgs_qr(&self.flow.tangent());
        if (0..3).any(|k| !(r[(k, k)] > 0.0) || !r[(k, k)].is_finite()) {
            return Err(Error::Degenerate("tangent frame collapsed"));
        }
        self.flow.set_tangent(&q);
        Ok(r)
    }

    pub fn checkpoint(&self) -> TangentCheckpoint {
        TangentCheckpoint { snap: self.flow.snapshot(), steps: self.steps }
    }

    pub fn restore(&mut self, c: &TangentCheckpoint) {
        self.flow.restore(&c.snap);
        self.steps = c.steps;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LyapConfig {
    pub t_total: f64,
    pub renorm_interval: f64,
    pub transient: f64,
    /// Number of partial estimates kept in the convergence history.
    pub history_points: usize,
    /// Allowed spread of each exponent over the second half of the history.
    pub convergence_tol: f64,
    pub integrator: IntegratorConfig,
}

impl Default for LyapConfig {
    fn default() -> Self {
        LyapConfig {
            t_total: 1e4,
            renorm_interval: 0.5,
            transient: 1e3,
            history_points: 100,
            convergence_tol: 0.005,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovSpectrum {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub t_total: f64,
    pub renorm_interval: f64,
    /// `(elapsed accumulation time, partial estimates)`.
    pub history: Vec<(f64, [f64; 3])>,
    pub converged: bool,
}

impl LyapunovSpectrum {
    pub fn exponents(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn sum(&self) -> f64 {
        self.l1 + self.l2 + self.l3
    }

    fn from_sums(sums: [f64; 3], t: f64, renorm: f64, history: Vec<(f64, [f64; 3])>, tol: f64) -> Self {
        let tail = &history[history.len() / 2..];
        let converged = !tail.is_empty()
            && (0..3).all(|i| {
                let (lo, hi) = tail.iter().fold((f64::MAX, f64::MIN), |(lo, hi), (_, e)| (lo.min(e[i]), hi.max(e[i])));
                hi - lo <= tol
            });
        LyapunovSpectrum {
            l1: sums[0] / t,
            l2: sums[1] / t,
            l3: sums[2] / t,
            t_total: t,
            renorm_interval: renorm,
            history,
            converged,
        }
    }
}

fn intervals(len: f64, renorm: f64) -> u64 {
    (len / renorm).round() as u64
}

/// Lyapunov spectrum along the orbit of `s0`.
///
/// The tangent frame is evolved (but not accumulated) during the transient.
pub fn lyapunov_spectrum(p: &SystemParams, s0: State, cfg: &LyapConfig) -> Result<LyapunovSpectrum> {
    if !(cfg.t_total > 0.0) || !(cfg.transient >= 0.0) {
        return Err(Error::Domain("spectrum needs T > 0 and a non-negative transient".into()));
    }
    let mut run = TangentRunner::new(p, s0, Matrix3::identity(), cfg.renorm_interval, &cfg.integrator)?;
    for _ in 0..intervals(cfg.transient, cfg.renorm_interval) {
        run.advance()?;
    }
    let n = intervals(cfg.t_total, cfg.renorm_interval).max(1);
    let every = (n / cfg.history_points.max(1) as u64).max(1);
    let mut sums = [0.0; 3];
    let mut history = Vec::new();
    for k in 1..=n {
        let r = run.advance()?;
        for i in 0..3 {
            sums[i] += r[(i, i)].ln();
        }
        if k % every == 0 || k == n {
            let t = k as f64 * cfg.renorm_interval;
            history.push((t, sums.map(|v| v / t)));
        }
    }
    let t = n as f64 * cfg.renorm_interval;
    Ok(LyapunovSpectrum::from_sums(sums, t, cfg.renorm_interval, history, cfg.convergence_tol))
}

/// Attractor point plus covariant vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClvFrame {
    pub t: f64,
    pub point: State,
    pub v1: Vector3<f64>,
    pub v2: Vector3<f64>,
    pub v3: Vector3<f64>,
    /// Unit normal of `span(V1, V2)`.
    pub n_cu: Vector3<f64>,
}

impl ClvFrame {
    /// Unit normal of `span(V2, V3)`.
    pub fn n_cs(&self) -> Vector3<f64> {
        self.v2.cross(&self.v3).normalize()
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ClvConfig {
    /// Forward transient that lets the orthonormal frame settle.
    pub transient_fwd: f64,
    /// Length of the window whose frames are emitted.
    pub window: f64,
    /// Extra forward integration past the window used to converge the backward pass.
    pub transient_bwd: f64,
    pub renorm_interval: f64,
    /// Emit every `stride`-th renormalisation point of the window.
    pub stride: usize,
    /// Starting tangent frame (orthonormalised); identity when absent.
    pub initial_frame: Option<Matrix3<f64>>,
    /// Renormalisation intervals per replay segment.
    pub segment_len: usize,
    pub integrator: IntegratorConfig,
}

impl Default for ClvConfig {
    fn default() -> Self {
        ClvConfig {
            transient_fwd: 1e3,
            window: 1e4,
            transient_bwd: 1e3,
            renorm_interval: 0.5,
            stride: 1,
            initial_frame: None,
            segment_len: 4096,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ClvRun {
    pub frames: Vec<ClvFrame>,
    /// Frames rejected for degenerate triangular coefficients.
    pub dropped: usize,
    /// Spectrum accumulated over the window.
    pub spectrum: LyapunovSpectrum,
}

const DEGENERATE: f64 = 1e-12;

fn normalise_columns(c: &mut Matrix3<f64>) -> bool {
    for k in 0..3 {
        let n = c.column(k).norm();
        if !(n > 0.0) || !n.is_finite() {
            return false;
        }
        let col = c.column(k) / n;
        c.set_column(k, &col);
    }
    true
}

/// One backward step `C(k) = R(k+1)^{-1} C(k+1)` on upper-triangular `C`.
fn back_step(r: &Matrix3<f64>, c: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let scale = r[(0, 0)].abs().max(r[(1, 1)].abs()).max(r[(2, 2)].abs());
    if (0..3).any(|k| r[(k, k)].abs() < DEGENERATE * scale) {
        return None;
    }
    let mut out = r.solve_upper_triangular(c)?;
    normalise_columns(&mut out).then_some(out)
}

/// Covariant Lyapunov vectors along the orbit of `s0`.
///
/// Times in the emitted frames are measured from `s0`; the window starts
/// after `transient_fwd`.
pub fn covariant_vectors(p: &SystemParams, s0: State, cfg: &ClvConfig) -> Result<ClvRun> {
    if !(cfg.window > 0.0) || cfg.transient_fwd < 0.0 || cfg.transient_bwd < 0.0 {
        return Err(Error::Domain("CLV window must be positive and transients non-negative".into()));
    }
    if cfg.stride == 0 || cfg.segment_len == 0 {
        return Err(Error::Domain("stride and segment length must be at least 1".into()));
    }
    let q0 = cfg.initial_frame.unwrap_or_else(Matrix3::identity);
    let mut run = TangentRunner::new(p, s0, q0, cfg.renorm_interval, &cfg.integrator)?;
    for _ in 0..intervals(cfg.transient_fwd, cfg.renorm_interval) {
        run.advance()?;
    }

    let n_win = intervals(cfg.window, cfg.renorm_interval) as usize;
    let n_bwd = intervals(cfg.transient_bwd, cfg.renorm_interval) as usize;
    // Frame k of the window sits after k intervals; r[k] maps frame k to k+1.
    let mut checkpoints = Vec::new();
    let mut r_factors: Vec<Matrix3<f64>> = Vec::with_capacity(n_win + n_bwd);
    let mut sums = [0.0; 3];
    let mut history = Vec::new();
    let every = (n_win / 100).max(1);
    for k in 0..n_win + n_bwd {
        if k < n_win && k % cfg.segment_len == 0 {
            checkpoints.push(run.checkpoint());
        }
        let r = run.advance()?;
        if k < n_win {
            for i in 0..3 {
                sums[i] += r[(i, i)].ln();
            }
            if (k + 1) % every == 0 || k + 1 == n_win {
                let t = (k + 1) as f64 * cfg.renorm_interval;
                history.push((t, sums.map(|v| v / t)));
            }
        }
        r_factors.push(r);
    }
    let t_win = n_win as f64 * cfg.renorm_interval;
    let spectrum = LyapunovSpectrum::from_sums(sums, t_win, cfg.renorm_interval, history, 0.005);

    // Backward transient: from the far end down to frame n_win.
    let mut c = Matrix3::identity();
    for r in r_factors[n_win..].iter().rev() {
        c = back_step(r, &c).unwrap_or_else(Matrix3::identity);
    }

    let mut frames_rev = Vec::new();
    let mut dropped = 0usize;
    let mut c_valid = true;
    for (seg, cp) in checkpoints.iter().enumerate().rev() {
        let start = seg * cfg.segment_len;
        let end = (start + cfg.segment_len).min(n_win);
        // Replay this segment to regenerate frames start..end (frame `end`
        // belongs to the next segment or the tail).
        run.restore(cp);
        let mut qs = Vec::with_capacity(end - start + 1);
        qs.push((run.t(), run.state(), run.q()));
        for _ in start..end {
            run.advance()?;
            qs.push((run.t(), run.state(), run.q()));
        }
        for k in (start..=end).rev() {
            if k < end || k == n_win {
                if k < end {
                    match back_step(&r_factors[k], &c) {
                        Some(next) => {
                            c = next;
                            c_valid = true;
                        }
                        None => {
                            c = Matrix3::identity();
                            c_valid = false;
                        }
                    }
                }
                if k % cfg.stride != 0 {
                    continue;
                }
                let (t, point, q) = qs[k - start];
                if !c_valid {
                    dropped += 1;
                    continue;
                }
                let v = q * c;
                let (v1, v2, v3) = (v.column(0).normalize(), v.column(1).normalize(), v.column(2).normalize());
                // span(V1, V2) is the span of the first two orthonormal vectors,
                // so its normal is the third one even where V1 and V2 nearly coincide.
                let n_cu = q.column(2).normalize();
                frames_rev.push(ClvFrame { t, point, v1, v2, v3, n_cu });
            }
        }
    }
    frames_rev.reverse();
    Ok(ClvRun { frames: frames_rev, dropped, spectrum })
}

pub fn write_clv_csv<W: Write>(mut w: W, frames: &[ClvFrame]) -> Result<()> {
    writeln!(w, "t,x,y,z,v1x,v1y,v1z,v2x,v2y,v2z,v3x,v3y,v3z")?;
    for f in frames {
        write!(w, "{},{},{},{}", f.t, f.point[0], f.point[1], f.point[2])?;
        for v in [f.v1, f.v2, f.v3] {
            write!(w, ",{},{},{}", v[0], v[1], v[2])?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn write_spectrum_csv<W: Write>(mut w: W, rows: &[(f64, f64, LyapunovSpectrum)]) -> Result<()> {
    writeln!(w, "alpha,lambda,L1,L2,L3,T")?;
    for (a, l, s) in rows {
        writeln!(w, "{},{},{},{},{},{}", a, l, s.l1, s.l2, s.l3, s.t_total)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynsys::equilibria;
    use crate::integrate::{integrate_sampled, integrate_variational, separatrix_seed, Branch, Flow};
    use proptest::prelude::*;

    fn sm(alpha: f64, lambda: f64) -> SystemParams {
        SystemParams::shimizu_morioka(alpha, lambda).unwrap()
    }

    fn attractor(p: &SystemParams, settle: f64) -> State {
        let mut f = Flow::new(p, separatrix_seed(p, Branch::Plus, 1e-6).unwrap(), &IntegratorConfig::default()).unwrap();
        f.advance_to(settle).unwrap();
        f.state()
    }

    fn line_angle(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
        a.normalize().cross(&b.normalize()).norm().asin()
    }

    proptest! {
        #[test]
        fn mgs_factors(v in prop::collection::vec(-3.0f64..3.0, 9)) {
            let m = Matrix3::from_column_slice(&v);
            prop_assume!(m.determinant().abs() > 1e-3);
            let (q, r) = mgs_qr(&m);
            prop_assert!((q.transpose() * q - Matrix3::identity()).norm() < 1e-10);
            prop_assert!((q * r - m).norm() < 1e-10);
            for i in 0..3 {
                prop_assert!(r[(i, i)] > 0.0);
                for j in 0..i {
                    prop_assert_eq!(r[(i, j)], 0.0);
                }
            }
        }
    }

    #[test]
    fn reference_spectrum() {
        let p = sm(0.4, 0.9);
        let s = lyapunov_spectrum(&p, attractor(&p, 500.0), &LyapConfig::default()).unwrap();
        assert!(s.l1 >= s.l2 && s.l2 >= s.l3);
        assert!(s.l1 > 0.0);
        assert!(s.l2.abs() < 0.01, "{}", s.l2);
        assert!((s.sum() + 1.3).abs() < 0.02, "{}", s.sum());
        assert!(!s.history.is_empty());
        assert_eq!(s.history.last().unwrap().0, s.t_total);
    }

    #[test]
    fn sum_matches_time_averaged_divergence() {
        // Oracle: average of trace(J) sampled along the same orbit.
        let p = sm(0.5, 0.7);
        let s0 = attractor(&p, 300.0);
        let samples = integrate_sampled(&p, s0, &IntegratorConfig::default(), 2000.0, 0.05).unwrap();
        let avg = samples.iter().map(|s| p.jacobian_at(&s.state).trace()).sum::<f64>() / samples.len() as f64;
        let cfg = LyapConfig { t_total: 2000.0, transient: 0.0, ..Default::default() };
        let sp = lyapunov_spectrum(&p, s0, &cfg).unwrap();
        assert!((sp.sum() - avg).abs() < 0.02, "{} vs {avg}", sp.sum());
    }

    #[test]
    fn stable_equilibrium_has_negative_top_exponent() {
        let p = sm(0.4, 1.3);
        let o_plus = equilibria(&p).unwrap()[1].location;
        let cfg = LyapConfig { t_total: 500.0, transient: 100.0, ..Default::default() };
        let s = lyapunov_spectrum(&p, o_plus + State::new(1e-3, -1e-3, 1e-3), &cfg).unwrap();
        assert!(s.l1 < 0.0, "{}", s.l1);
    }

    #[test]
    fn exponents_stable_under_renorm_and_start() {
        let p = sm(0.4, 0.9);
        let cfg = LyapConfig { t_total: 5000.0, transient: 500.0, ..Default::default() };
        let a = lyapunov_spectrum(&p, attractor(&p, 500.0), &cfg).unwrap();
        let b = lyapunov_spectrum(&p, attractor(&p, 500.0), &LyapConfig { renorm_interval: 0.25, ..cfg }).unwrap();
        let c = lyapunov_spectrum(&p, attractor(&p, 731.0), &cfg).unwrap();
        for (x, y) in a.exponents().iter().zip(b.exponents()).chain(a.exponents().iter().zip(c.exponents())) {
            assert!((x - y).abs() < 0.01, "{:?} {:?} {:?}", a.exponents(), b.exponents(), c.exponents());
        }
    }

    #[test]
    fn argument_checks() {
        let p = sm(0.4, 0.9);
        let s0 = attractor(&p, 10.0);
        assert!(lyapunov_spectrum(&p, s0, &LyapConfig { t_total: 0.0, ..Default::default() }).is_err());
        assert!(covariant_vectors(&p, s0, &ClvConfig { stride: 0, ..Default::default() }).is_err());
        assert!(TangentRunner::new(&p, s0, Matrix3::identity(), 0.0, &IntegratorConfig::default()).is_err());
    }

    fn short_run(stride: usize) -> (SystemParams, ClvRun) {
        let p = sm(0.4, 0.9);
        let cfg = ClvConfig { transient_fwd: 200.0, window: 200.0, transient_bwd: 200.0, renorm_interval: 0.1, stride, segment_len: 300, ..Default::default() };
        let run = covariant_vectors(&p, attractor(&p, 200.0), &cfg).unwrap();
        (p, run)
    }

    #[test]
    fn frames_are_unit_with_orthogonal_normal() {
        let (_, run) = short_run(1);
        assert_eq!(run.frames.len(), 2001);
        assert_eq!(run.dropped, 0);
        for f in &run.frames {
            for v in [f.v1, f.v2, f.v3, f.n_cu] {
                assert!((v.norm() - 1.0).abs() < 1e-12);
            }
            assert!(f.n_cu.dot(&f.v1).abs() < 1e-9 && f.n_cu.dot(&f.v2).abs() < 1e-9);
        }
    }

    #[test]
    fn vectors_are_covariant() {
        let (p, run) = short_run(5);
        let cfg = IntegratorConfig::default();
        let (mut bad, mut total) = (0, 0);
        let mut log_growth = 0.0;
        let mut span = 0.0;
        for w in run.frames.windows(2) {
            let dt = w[1].t - w[0].t;
            let m = integrate_variational(&p, w[0].point, Matrix3::identity(), &cfg, dt).unwrap().tangent.unwrap();
            let (p1, p3) = (m * w[0].v1, m * w[0].v3);
            total += 1;
            if line_angle(&p3, &w[1].v3) > 1e-3 || line_angle(&p1, &w[1].v1) > 1e-3 {
                bad += 1;
            }
            log_growth += p3.norm().ln();
            span += dt;
        }
        assert!(bad * 100 <= total, "{bad} of {total} frames off");
        // Oracle for the contracting rate: growth of pushed V3 along the orbit.
        assert!((log_growth / span - run.spectrum.l3).abs() < 0.05, "{} vs {}", log_growth / span, run.spectrum.l3);
    }

    #[test]
    fn leading_vector_matches_benettin_frame() {
        let p = sm(0.4, 0.9);
        let s0 = attractor(&p, 200.0);
        let cfg = ClvConfig { transient_fwd: 200.0, window: 50.0, transient_bwd: 200.0, renorm_interval: 0.1, ..Default::default() };
        let run = covariant_vectors(&p, s0, &cfg).unwrap();
        let mut tr = TangentRunner::new(&p, s0, Matrix3::identity(), 0.1, &IntegratorConfig::default()).unwrap();
        for _ in 0..2000 {
            tr.advance().unwrap();
        }
        for f in run.frames.iter().take(300) {
            assert!((tr.t() - f.t).abs() < 1e-9);
            assert!(line_angle(&tr.q().column(0).into(), &f.v1) < 1e-3);
            tr.advance().unwrap();
        }
    }

    #[test]
    fn replay_segments_do_not_change_frames() {
        let p = sm(0.4, 0.9);
        let s0 = attractor(&p, 200.0);
        let base = ClvConfig { transient_fwd: 50.0, window: 60.0, transient_bwd: 100.0, renorm_interval: 0.1, ..Default::default() };
        let a = covariant_vectors(&p, s0, &base).unwrap();
        let b = covariant_vectors(&p, s0, &ClvConfig { segment_len: 37, ..base }).unwrap();
        assert_eq!(a.frames, b.frames);
    }

    #[test]
    fn csv_schemas() {
        let (_, run) = short_run(100);
        let mut buf = Vec::new();
        write_clv_csv(&mut buf, &run.frames).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,x,y,z,v1x,v1y,v1z,v2x,v2y,v2z,v3x,v3y,v3z\n"));
        assert_eq!(text.lines().nth(1).unwrap().split(',').count(), 13);
        let mut buf = Vec::new();
        write_spectrum_csv(&mut buf, &[(0.4, 0.9, run.spectrum.clone())]).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("alpha,lambda,L1,L2,L3,T\n0.4,0.9,"));
    }
}
