//! Dormand-Prince 5(4) stepper with Hairer's continuous extension.
//!
//! Generic over the state dimension so the same core drives the bare flow
//! (3 components) and the flow plus its 3×3 tangent map (12 components).

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;

const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 10.0;

/// Step-size control settings for [`Dopri5`].
#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_step: f64,
    pub min_step: f64,
}

/// One accepted step together with its dense-output polynomial.
#[derive(Debug, Clone)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub t1: f64,
    pub y0: [f64; N],
    pub y1: [f64; N],
    rcont: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    fn empty(t: f64, y: [f64; N]) -> Self {
        DenseStep { t0: t, t1: t, y0: y, y1: y, rcont: [[0.0; N]; 5] }
    }

    pub fn h(&self) -> f64 {
        self.t1 - self.t0
    }

    /// Interpolated state at fraction `theta ∈ [0, 1]` of the step.
    #[inline]
    pub fn eval_theta(&self, theta: f64) -> [f64; N] {
        let th1 = 1.0 - theta;
        let r = &self.rcont;
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = r[0][i] + theta * (r[1][i] + th1 * (r[2][i] + theta * (r[3][i] + th1 * r[4][i])));
        }
        out
    }

    /// Interpolated state at time `t ∈ [t0, t1]`.
    pub fn eval(&self, t: f64) -> [f64; N] {
        let h = self.h();
        if h == 0.0 {
            return self.y1;
        }
        self.eval_theta((t - self.t0) / h)
    }
}

/// Failure of a single step attempt.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepFailure {
    Underflow,
    NonFinite,
}

/// Right-hand side of an autonomous system in `N` dimensions.
pub trait OdeSystem<const N: usize> {
    fn eval(&self, y: &[f64; N], dy: &mut [f64; N]);
}

impl<const N: usize, F: Fn(&[f64; N], &mut [f64; N])> OdeSystem<N> for F {
    #[inline]
    fn eval(&self, y: &[f64; N], dy: &mut [f64; N]) {
        self(y, dy)
    }
}

/// Adaptive Dormand-Prince 5(4) stepper for an autonomous system.
pub struct Dopri5<const N: usize, F> {
    f: F,
    ctrl: StepControl,
    t: f64,
    y: [f64; N],
    k1: [f64; N],
    h: f64,
    last: DenseStep<N>,
    pub accepted: u64,
    pub rejected: u64,
}

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

impl<const N: usize, F: OdeSystem<N>> Dopri5<N, F> {
    pub fn new(f: F, t0: f64, y0: [f64; N], ctrl: StepControl, h0: f64) -> Self {
        let mut k1 = [0.0; N];
        f.eval(&y0, &mut k1);
        Dopri5 {
            f,
            ctrl,
            t: t0,
            y: y0,
            k1,
            h: h0.min(ctrl.max_step),
            last: DenseStep::empty(t0, y0),
            accepted: 0,
            rejected: 0,
        }
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[f64; N] {
        &self.y
    }

    /// Suggested size of the next step.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn system(&self) -> &F {
        &self.f
    }

    pub fn last(&self) -> &DenseStep<N> {
        &self.last
    }

    /// Puts the stepper back at `(t, y)` with step suggestion `h`, as if it
    /// had just arrived there.
    pub fn restore(&mut self, t: f64, y: [f64; N], h: f64) {
        self.t = t;
        self.h = h;
        self.reset_state(y);
    }

    /// Replaces the current state (e.g. after renormalising tangent vectors).
    pub fn reset_state(&mut self, y: [f64; N]) {
        self.y = y;
        self.f.eval(&self.y, &mut self.k1);
        self.last = DenseStep::empty(self.t, y);
    }

    /// Takes one accepted step, never passing `t_limit` when given.
    pub fn step(&mut self, t_limit: Option<f64>) -> Result<&DenseStep<N>, StepFailure> {
        let f = &self.f;
        let mut clipped = false;
        let mut h = self.h;
        if let Some(tl) = t_limit {
            let rem = tl - self.t;
            if rem <= h {
                h = rem;
                clipped = true;
            }
        }
        let y = &self.y.clone();
        let k1 = &self.k1.clone();
        let mut k2 = [0.0; N];
        let mut k3 = [0.0; N];
        let mut k4 = [0.0; N];
        let mut k5 = [0.0; N];
        let mut k6 = [0.0; N];
        let mut k7 = [0.0; N];
        loop {
            if h < self.ctrl.min_step && !clipped {
                return Err(StepFailure::Underflow);
            }
            f.eval(&axpy(y, h, &[(A21, k1)]), &mut k2);
            f.eval(&axpy(y, h, &[(A31, k1), (A32, &k2)]), &mut k3);
            f.eval(&axpy(y, h, &[(A41, k1), (A42, &k2), (A43, &k3)]), &mut k4);
            f.eval(&axpy(y, h, &[(A51, k1), (A52, &k2), (A53, &k3), (A54, &k4)]), &mut k5);
            f.eval(&axpy(y, h, &[(A61, k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]), &mut k6);
            let y1 = axpy(y, h, &[(A71, k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
            f.eval(&y1, &mut k7);

            let mut err = 0.0;
            for i in 0..N {
                let e = h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sk = self.ctrl.abs_tol + self.ctrl.rel_tol * y[i].abs().max(y1[i].abs());
                err += (e / sk) * (e / sk);
            }
            let err = (err / N as f64).sqrt();
            if !err.is_finite() || y1.iter().any(|v| !v.is_finite()) {
                if h < self.ctrl.min_step {
                    return Err(StepFailure::NonFinite);
                }
                h *= MIN_FACTOR;
                clipped = false;
                self.rejected += 1;
                continue;
            }
            let factor = if err == 0.0 {
                MAX_FACTOR
            } else {
                (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, MAX_FACTOR)
            };
            if err <= 1.0 {
                let mut rcont = [[0.0; N]; 5];
                for i in 0..N {
                    let dy = y1[i] - y[i];
                    let bspl = h * k1[i] - dy;
                    rcont[0][i] = y[i];
                    rcont[1][i] = dy;
                    rcont[2][i] = bspl;
                    rcont[3][i] = dy - h * k7[i] - bspl;
                    rcont[4][i] = h
                        * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let t0 = self.t;
                let t1 = match t_limit {
                    Some(tl) if clipped => tl,
                    _ => t0 + h,
                };
                self.last = DenseStep { t0, t1, y0: *y, y1, rcont };
                self.t = t1;
                self.y = y1;
                self.k1 = k7;
                let h_new = (h * factor).min(self.ctrl.max_step);
                // A step shortened only to land on t_limit keeps the previous suggestion.
                self.h = if clipped { self.h.max(h_new) } else { h_new };
                self.h = self.h.min(self.ctrl.max_step);
                self.accepted += 1;
                return Ok(&self.last);
            }
            self.rejected += 1;
            h *= factor.min(1.0);
            clipped = false;
        }
    }
}
