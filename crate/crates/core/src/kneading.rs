//! Kneading sequences of the unstable separatrix, their binary codes, and
//! location of homoclinic loops by bisection on a symbol change.
//!
//! Symbols come from the extrema of `x` (zeros of `y = ẋ`): a maximum with
//! `x > 0` gives 1, a minimum with `x < 0` gives 0, and every other extremum
//! is a within-wing oscillation and is ignored.

use std::fmt;
use std::io::Write;

use crate::dynsys::{equilibria, SystemParams, State};
use crate::error::{Error, Result};
use crate::integrate::{separatrix_seed, Branch, Direction, IntegratorConfig, SectionKind, SectionSpec, SectionWalker, WalkEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Termination {
    Completed,
    Escape,
    EquilibriumCapture,
    /// The time budget ran out before `N` symbols were found.
    TimeLimit,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::Completed => "completed",
            Termination::Escape => "escape",
            Termination::EquilibriumCapture => "equilibrium_capture",
            Termination::TimeLimit => "time_limit",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KneadingSequence {
    pub symbols: Vec<u8>,
    /// Number of leading symbols that codes built from this sequence ignore.
    pub skip: usize,
    pub params: SystemParams,
    pub termination: Termination,
    /// Symbol repeated forever after capture: 1 near `O+`, 0 near `O-`.
    pub capture_symbol: Option<u8>,
}

impl KneadingSequence {
    pub fn get(&self, index: usize) -> Option<u8> {
        self.symbols.get(index).copied()
    }

    /// The symbols, extended to length `n` with the capture symbol when the
    /// orbit ended in a stable equilibrium.
    pub fn extended(&self, n: usize) -> Vec<u8> {
        let mut v = self.symbols.clone();
        if let Some(c) = self.capture_symbol {
            v.resize(v.len().max(n), c);
        }
        v
    }
}

impl fmt::Display for KneadingSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in &self.symbols {
            write!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct KneadingConfig {
    pub n_symbols: usize,
    pub skip: usize,
    pub eps: f64,
    pub branch: Branch,
    pub max_time: f64,
    pub capture_radius: f64,
    pub integrator: IntegratorConfig,
}

impl Default for KneadingConfig {
    fn default() -> Self {
        KneadingConfig {
            n_symbols: 16,
            skip: 1,
            eps: 1e-6,
            branch: Branch::Plus,
            max_time: 5e3,
            capture_radius: 1e-4,
            integrator: IntegratorConfig::default(),
        }
    }
}

/// Walker along a separatrix that stops near stable equilibria.
pub(crate) fn separatrix_walker(
    p: &SystemParams,
    branch: Branch,
    eps: f64,
    section: SectionSpec,
    capture_radius: f64,
    cfg: &IntegratorConfig,
) -> Result<SectionWalker> {
    let seed = separatrix_seed(p, branch, eps)?;
    let mut w = SectionWalker::new(p, seed, section, cfg)?;
    for eq in equilibria(p)?.iter().skip(1) {
        if eq.is_stable() {
            w.add_trap(eq.location, capture_radius);
        }
    }
    Ok(w)
}

fn symbol_of(state: &State, direction_sign: i8) -> Option<u8> {
    match direction_sign {
        -1 if state[0] > 0.0 => Some(1),
        1 if state[0] < 0.0 => Some(0),
        _ => None,
    }
}

pub fn kneading_sequence(p: &SystemParams, cfg: &KneadingConfig) -> Result<KneadingSequence> {
    if cfg.n_symbols == 0 {
        return Err(Error::Domain("need at least one symbol".into()));
    }
    let section = SectionSpec::new(SectionKind::PlaneY0, Direction::Both);
    let mut w = separatrix_walker(p, cfg.branch, cfg.eps, section, cfg.capture_radius, &cfg.integrator)?;
    let mut symbols = Vec::with_capacity(cfg.n_symbols);
    let mut capture_symbol = None;
    let termination = loop {
        if symbols.len() >= cfg.n_symbols {
            break Termination::Completed;
        }
        match w.next_event(cfg.max_time) {
            Ok(WalkEvent::Crossing(e)) => symbols.extend(symbol_of(&e.state, e.direction_sign)),
            Ok(WalkEvent::Captured(_)) => {
                capture_symbol = Some(u8::from(w.flow().state()[0] > 0.0));
                break Termination::EquilibriumCapture;
            }
            Ok(WalkEvent::TimeLimit) => break Termination::TimeLimit,
            Err(Error::Escape { .. }) => break Termination::Escape,
            Err(e) => return Err(e),
        }
    };
    Ok(KneadingSequence { symbols, skip: cfg.skip, params: *p, termination, capture_symbol })
}

/// Binary fraction `Σ s[skip+i] 2^-(i+1)` over a window of `k_n` symbols.
pub fn kneading_code(seq: &KneadingSequence, k_n: usize, skip: usize) -> Result<f64> {
    code_of(&seq.symbols, k_n, skip)
}

pub fn code_of(symbols: &[u8], k_n: usize, skip: usize) -> Result<f64> {
    if symbols.len() < skip + k_n {
        return Err(Error::ShortSequence { needed: skip + k_n, got: symbols.len() });
    }
    let mut code = 0.0;
    let mut w = 0.5;
    for &s in &symbols[skip..skip + k_n] {
        code += w * s as f64;
        w *= 0.5;
    }
    Ok(code)
}

#[derive(Debug, Clone, PartialEq)]
pub struct HomoclinicPoint {
    pub params: SystemParams,
    /// Final bracket `[s_a, s_b]` as fractions of the segment.
    pub bracket: (f64, f64),
    pub seq_a: KneadingSequence,
    pub seq_b: KneadingSequence,
    pub iterations: usize,
    pub diagnostic: Option<String>,
}

fn lerp(a: &SystemParams, b: &SystemParams, s: f64) -> Result<SystemParams> {
    let (Some((a1, l1)), Some((a2, l2))) = (a.alpha_lambda(), b.alpha_lambda()) else {
        return Err(Error::Domain("bisection needs (alpha, lambda) parameters".into()));
    };
    Ok(a.with_alpha_lambda(a1 + s * (a2 - a1), l1 + s * (l2 - l1)))
}

fn param_distance(a: &SystemParams, b: &SystemParams) -> f64 {
    match (a.alpha_lambda(), b.alpha_lambda()) {
        (Some((a1, l1)), Some((a2, l2))) => (a2 - a1).hypot(l2 - l1),
        _ => f64::NAN,
    }
}

/// Bisects the segment `p_a → p_b` on the symbol at absolute position
/// `symbol_index` until the bracket is shorter than `tol` in parameter space.
pub fn homoclinic_bisect(
    p_a: &SystemParams,
    p_b: &SystemParams,
    symbol_index: usize,
    tol: f64,
    cfg: &KneadingConfig,
) -> Result<HomoclinicPoint> {
    if !(tol > 0.0) {
        return Err(Error::Domain("bisection tolerance must be positive".into()));
    }
    let cfg = KneadingConfig { n_symbols: cfg.n_symbols.max(symbol_index + 1), ..*cfg };
    let symbol_at = |s: f64| -> Result<(Option<u8>, KneadingSequence)> {
        let seq = kneading_sequence(&lerp(p_a, p_b, s)?, &cfg)?;
        Ok((seq.extended(symbol_index + 1).get(symbol_index).copied(), seq))
    };
    let (sym_a, mut seq_a) = symbol_at(0.0)?;
    let (sym_b, mut seq_b) = symbol_at(1.0)?;
    if sym_a == sym_b {
        return Err(Error::NoSignChange(format!(
            "symbol {symbol_index} is {sym_a:?} at both ends of the segment"
        )));
    }
    // Coarse look for several flips on the segment; bisection follows the first.
    let coarse = 8;
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut flips = 0;
    let mut prev = sym_a;
    let mut first: Option<(f64, f64, KneadingSequence, KneadingSequence)> = None;
    let mut prev_seq = seq_a.clone();
    for k in 1..=coarse {
        let s = k as f64 / coarse as f64;
        let (sym, seq) = if k == coarse { (sym_b, seq_b.clone()) } else { symbol_at(s)? };
        if sym != prev {
            flips += 1;
            if first.is_none() {
                first = Some(((k - 1) as f64 / coarse as f64, s, prev_seq.clone(), seq.clone()));
            }
        }
        prev = sym;
        prev_seq = seq;
    }
    if let Some((a, b, sa, sb)) = first {
        lo = a;
        hi = b;
        seq_a = sa;
        seq_b = sb;
    }
    let left = seq_a.extended(symbol_index + 1).get(symbol_index).copied();
    let len = param_distance(p_a, p_b);
    let mut iterations = 0;
    while (hi - lo) * len > tol {
        let mid = 0.5 * (lo + hi);
        let (sym, seq) = symbol_at(mid)?;
        if sym == left {
            lo = mid;
            seq_a = seq;
        } else {
            hi = mid;
            seq_b = seq;
        }
        iterations += 1;
    }
    let diagnostic = (flips > 1).then(|| format!("{flips} symbol flips on the coarse grid; returned the first"));
    Ok(HomoclinicPoint { params: lerp(p_a, p_b, 0.5 * (lo + hi))?, bracket: (lo, hi), seq_a, seq_b, iterations, diagnostic })
}

/// Closest approach of the separatrix to the origin after it first leaves
/// the ball of radius `leave`.
pub fn closest_return(p: &SystemParams, eps: f64, leave: f64, t_max: f64, cfg: &IntegratorConfig) -> Result<f64> {
    let mut flow = crate::integrate::Flow::new(p, separatrix_seed(p, Branch::Plus, eps)?, cfg)?;
    let mut left = false;
    let mut best = f64::INFINITY;
    while flow.t() < t_max {
        let st = flow.step(Some(t_max))?;
        for k in 1..=8 {
            let r = State::from(st.eval_theta(k as f64 / 8.0)).norm();
            if left {
                best = best.min(r);
            } else if r > leave {
                left = true;
            }
        }
    }
    Ok(best)
}

pub fn write_sequences<W: Write>(mut w: W, seqs: &[KneadingSequence]) -> Result<()> {
    writeln!(w, "alpha,lambda,symbols")?;
    for s in seqs {
        let (a, l) = s.params.alpha_lambda().unwrap_or((f64::NAN, f64::NAN));
        writeln!(w, "{a},{l},{s}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sm(alpha: f64, lambda: f64) -> SystemParams {
        SystemParams::shimizu_morioka(alpha, lambda).unwrap()
    }

    #[test]
    fn code_examples() {
        assert_eq!(code_of(&[1, 1, 1, 1], 4, 0).unwrap(), 0.9375);
        assert_eq!(code_of(&[0; 6], 6, 0).unwrap(), 0.0);
        assert_eq!(code_of(&[1, 0], 2, 0).unwrap(), 0.5);
        assert_eq!(code_of(&[1, 1, 0], 2, 1).unwrap(), 0.5);
        assert!(matches!(code_of(&[1, 0], 2, 1), Err(Error::ShortSequence { needed: 3, got: 2 })));
    }

    proptest! {
        #[test]
        fn code_is_injective_and_monotone(a in prop::collection::vec(0u8..2, 20), b in prop::collection::vec(0u8..2, 20)) {
            let (ca, cb) = (code_of(&a, 20, 0).unwrap(), code_of(&b, 20, 0).unwrap());
            prop_assert_eq!(ca == cb, a == b);
            prop_assert_eq!(ca.partial_cmp(&cb), Some(a.cmp(&b)));
        }
    }

    #[test]
    fn first_symbol_is_one() {
        let s = kneading_sequence(&sm(0.4, 0.9), &KneadingConfig::default()).unwrap();
        assert_eq!(s.termination, Termination::Completed);
        assert_eq!(s.symbols.len(), 16);
        assert_eq!(s.get(0), Some(1));
        assert!(s.symbols.iter().all(|&b| b <= 1));
        assert!(s.symbols.contains(&0));
    }

    #[test]
    fn stable_equilibria_capture_the_separatrix() {
        let cfg = KneadingConfig { n_symbols: 400, ..Default::default() };
        let s = kneading_sequence(&sm(0.4, 1.3), &cfg).unwrap();
        assert_eq!(s.termination, Termination::EquilibriumCapture);
        assert!(s.symbols.len() < 400);
        assert_eq!(s.capture_symbol, Some(1));
        let ext = s.extended(500);
        assert_eq!(ext.len(), 500);
        assert!(ext[s.symbols.len()..].iter().all(|&b| b == 1));
    }

    #[test]
    fn minus_branch_is_the_complement() {
        for (a, l) in [(0.4, 0.9), (0.5, 0.7), (0.3, 1.0), (0.61, 0.65)] {
            let plus = kneading_sequence(&sm(a, l), &KneadingConfig::default()).unwrap();
            let minus = kneading_sequence(&sm(a, l), &KneadingConfig { branch: Branch::Minus, ..Default::default() }).unwrap();
            assert_eq!(plus.symbols.len(), minus.symbols.len());
            for (x, y) in plus.symbols.iter().zip(&minus.symbols) {
                assert_eq!(x + y, 1, "({a}, {l}): {plus} vs {minus}");
            }
        }
    }

    #[test]
    fn sequences_survive_tolerance_halving() {
        for (a, l) in [(0.4, 0.9), (0.5, 0.7)] {
            let base = kneading_sequence(&sm(a, l), &KneadingConfig::default()).unwrap();
            let fine = KneadingConfig { integrator: IntegratorConfig::with_tol(5e-11), ..Default::default() };
            assert_eq!(base.symbols, kneading_sequence(&sm(a, l), &fine).unwrap().symbols);
        }
    }

    #[test]
    fn butterfly_bisection_nests() {
        let cfg = KneadingConfig::default();
        let (pa, pb) = (sm(0.4, 1.19), sm(0.4, 1.22));
        let coarse = homoclinic_bisect(&pa, &pb, 1, 1e-3, &cfg).unwrap();
        let fine = homoclinic_bisect(&pa, &pb, 1, 1e-6, &cfg).unwrap();
        let l = |h: &HomoclinicPoint| h.params.alpha_lambda().unwrap().1;
        assert!((l(&fine) - 1.2054).abs() < 1e-3, "{}", l(&fine));
        let (lo, hi) = (1.19 + 0.03 * coarse.bracket.0, 1.19 + 0.03 * coarse.bracket.1);
        assert!(lo <= l(&fine) && l(&fine) <= hi);
        assert!(fine.bracket.0 >= coarse.bracket.0 && fine.bracket.1 <= coarse.bracket.1);
        // The coarse scan leaves a bracket of 1/8; each step halves it.
        let width = fine.bracket.1 - fine.bracket.0;
        assert!((width - 0.125 / 2f64.powi(fine.iterations as i32)).abs() < 1e-15);
        assert_ne!(fine.seq_a.extended(2)[1], fine.seq_b.extended(2)[1]);
    }

    #[test]
    fn bisection_needs_a_symbol_change() {
        let r = homoclinic_bisect(&sm(0.4, 0.9), &sm(0.4, 0.91), 0, 1e-4, &KneadingConfig::default());
        assert!(matches!(r, Err(Error::NoSignChange(_))));
        assert!(homoclinic_bisect(&sm(0.4, 0.9), &sm(0.4, 0.91), 0, 0.0, &KneadingConfig::default()).is_err());
    }

    #[test]
    fn separatrix_returns_close_to_origin_at_butterfly() {
        let cfg = KneadingConfig::default();
        let h = homoclinic_bisect(&sm(0.4, 1.19), &sm(0.4, 1.22), 1, 1e-9, &cfg).unwrap();
        let near = closest_return(&h.params, 1e-6, 0.5, 40.0, &cfg.integrator).unwrap();
        let far = closest_return(&sm(0.4, 1.1), 1e-6, 0.5, 40.0, &cfg.integrator).unwrap();
        assert!(near < 0.05 && far > 5.0 * near, "{near} {far}");
    }

    #[test]
    fn sequence_dump() {
        let s = kneading_sequence(&sm(0.4, 0.9), &KneadingConfig { n_symbols: 4, ..Default::default() }).unwrap();
        let mut buf = Vec::new();
        write_sequences(&mut buf, &[s.clone()]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("alpha,lambda,symbols\n0.4,0.9,{s}\n"));
    }
}
