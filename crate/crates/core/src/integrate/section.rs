use std::collections::VecDeque;

use crate::dynsys::{SystemParams, State};
use crate::error::{Error, Result};

use super::dopri::DenseStep;
use super::{Flow, IntegratorConfig};

/// Scalar event function whose zero set is the section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SectionKind {
    /// `g = z - c`.
    PlaneZ(f64),
    /// `g = y` (for the Shimizu-Morioka family this is `ẋ = 0`).
    PlaneY0,
    /// `g = ż`; a downward crossing marks a local maximum of `z`.
    ZLocalMax,
}

/// Crossing orientation: upward means `g` goes from negative to positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Upward,
    Downward,
    Both,
}

/// Extra condition evaluated at the crossing point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Predicate {
    None,
    ZDotPositive,
    ZDotNegative,
    XPositive,
    XNegative,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionSpec {
    pub kind: SectionKind,
    pub direction: Direction,
    pub predicate: Predicate,
}

impl SectionSpec {
    pub fn new(kind: SectionKind, direction: Direction) -> Self {
        SectionSpec { kind, direction, predicate: Predicate::None }
    }

    pub fn with_predicate(mut self, predicate: Predicate) -> Self {
        self.predicate = predicate;
        self
    }

    #[inline]
    pub fn g(&self, p: &SystemParams, s: &State) -> f64 {
        match self.kind {
            SectionKind::PlaneZ(c) => s[2] - c,
            SectionKind::PlaneY0 => s[1],
            SectionKind::ZLocalMax => p.rhs(s)[2],
        }
    }

    pub fn accepts(&self, p: &SystemParams, s: &State, sign: i8) -> bool {
        let dir_ok = match self.direction {
            Direction::Upward => sign > 0,
            Direction::Downward => sign < 0,
            Direction::Both => true,
        };
        dir_ok
            && match self.predicate {
                Predicate::None => true,
                Predicate::ZDotPositive => p.rhs(s)[2] > 0.0,
                Predicate::ZDotNegative => p.rhs(s)[2] < 0.0,
                Predicate::XPositive => s[0] > 0.0,
                Predicate::XNegative => s[0] < 0.0,
            }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CrossingEvent {
    pub time: f64,
    pub state: State,
    /// `+1` for an upward crossing, `-1` for a downward one.
    pub direction_sign: i8,
}

const EVENT_TOL: f64 = 1e-12;
const SUBSAMPLES: usize = 4;

fn refine(p: &SystemParams, sec: &SectionSpec, st: &DenseStep<3>, mut lo: f64, mut hi: f64, g_lo: f64) -> (f64, State) {
    let mut mid_s = State::from(st.eval_theta(hi));
    let mut t_mid = hi;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        mid_s = State::from(st.eval_theta(mid));
        t_mid = mid;
        let gm = sec.g(p, &mid_s);
        if gm.abs() < EVENT_TOL || hi - lo < 1e-16 {
            break;
        }
        if (gm < 0.0) == (g_lo < 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (st.t0 + t_mid * st.h(), mid_s)
}

/// All crossings inside one dense step, given `g` at its left end.
pub(crate) fn crossings_in_step(
    p: &SystemParams,
    sec: &SectionSpec,
    st: &DenseStep<3>,
    g_start: f64,
    out: &mut VecDeque<CrossingEvent>,
) -> f64 {
    let mut th_prev = 0.0;
    let mut g_prev = g_start;
    for k in 1..=SUBSAMPLES {
        let th = k as f64 / SUBSAMPLES as f64;
        let s = if k == SUBSAMPLES { State::from(st.y1) } else { State::from(st.eval_theta(th)) };
        let g = sec.g(p, &s);
        // A crossing is a strict sign change; exact zeros at sample points
        // count on the side they leave.
        if (g_prev < 0.0 && g >= 0.0 && g > 0.0) || (g_prev > 0.0 && g < 0.0) || (g_prev < 0.0 && g == 0.0) {
            let sign: i8 = if g_prev < 0.0 { 1 } else { -1 };
            let (t, state) = refine(p, sec, st, th_prev, th, g_prev);
            if sec.accepts(p, &state, sign) {
                out.push_back(CrossingEvent { time: t, state, direction_sign: sign });
            }
        }
        if g != 0.0 {
            g_prev = g;
        }
        th_prev = th;
    }
    g_prev
}

/// Crossings of the orbit of `s0` with the section over `[0, t_end]`.
pub fn detect_crossings(
    p: &SystemParams,
    s0: State,
    section: &SectionSpec,
    cfg: &IntegratorConfig,
    t_end: f64,
) -> Result<Vec<CrossingEvent>> {
    if !(t_end > 0.0) {
        return Err(Error::Domain("integration time must be positive".into()));
    }
    let mut w = SectionWalker::new(p, s0, *section, cfg)?;
    let mut out = Vec::new();
    loop {
        match w.next_event(t_end)? {
            WalkEvent::Crossing(e) => out.push(e),
            _ => return Ok(out),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WalkEvent {
    Crossing(CrossingEvent),
    /// The time limit was reached before the next crossing.
    TimeLimit,
    /// The orbit entered the trap with this index.
    Captured(usize),
}

/// Integrates an orbit and hands out section crossings one at a time.
pub struct SectionWalker {
    flow: Flow,
    section: SectionSpec,
    params: SystemParams,
    g_prev: f64,
    queue: VecDeque<CrossingEvent>,
    traps: Vec<(State, f64)>,
    captured: Option<usize>,
}

impl SectionWalker {
    pub fn new(p: &SystemParams, s0: State, section: SectionSpec, cfg: &IntegratorConfig) -> Result<Self> {
        let flow = Flow::new(p, s0, cfg)?;
        let g_prev = section.g(p, &s0);
        Ok(SectionWalker { flow, section, params: *p, g_prev, queue: VecDeque::new(), traps: Vec::new(), captured: None })
    }

    /// Stops the walk once the orbit comes within `radius` of `centre`.
    pub fn add_trap(&mut self, centre: State, radius: f64) {
        self.traps.push((centre, radius));
    }

    pub fn flow(&self) -> &Flow {
        &self.flow
    }

    pub fn t(&self) -> f64 {
        self.flow.t()
    }

    pub fn next_event(&mut self, t_max: f64) -> Result<WalkEvent> {
        loop {
            if let Some(e) = self.queue.pop_front() {
                return Ok(WalkEvent::Crossing(e));
            }
            if let Some(k) = self.captured {
                return Ok(WalkEvent::Captured(k));
            }
            if self.flow.t() >= t_max {
                return Ok(WalkEvent::TimeLimit);
            }
            let st = self.flow.step(Some(t_max))?;
            self.g_prev = crossings_in_step(&self.params, &self.section, st, self.g_prev, &mut self.queue);
            let s = State::from(st.y1);
            self.captured = self.traps.iter().position(|(c, r)| (s - c).norm() < *r);
        }
    }
}
