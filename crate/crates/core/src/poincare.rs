//! Section portraits and 1D Poincaré maps collected along the separatrix.

use std::io::Write;

use crate::dynsys::{SystemParams, State};
use crate::error::{Error, Result};
use crate::integrate::{Branch, IntegratorConfig, SectionKind, SectionSpec, WalkEvent};
use crate::kneading::{separatrix_walker, Termination};

#[derive(Debug, Clone, Copy)]
pub struct PoincareConfig {
    /// Crossings discarded before collection starts.
    pub transient_events: usize,
    pub eps: f64,
    pub branch: Branch,
    pub max_time: f64,
    pub capture_radius: f64,
    pub integrator: IntegratorConfig,
}

impl Default for PoincareConfig {
    fn default() -> Self {
        PoincareConfig {
            transient_events: 100,
            eps: 1e-6,
            branch: Branch::Plus,
            max_time: 1e5,
            capture_radius: 1e-4,
            integrator: IntegratorConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortraitPoint {
    /// In-plane coordinates: `(x, y)` for horizontal planes, `(x, z)` otherwise.
    pub a: f64,
    pub b: f64,
    pub dir: i8,
    pub state: State,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SectionPortrait {
    pub section: SectionSpec,
    pub points: Vec<PortraitPoint>,
    pub termination: Termination,
}

fn plane_coords(kind: SectionKind, s: &State) -> (f64, f64) {
    match kind {
        SectionKind::PlaneZ(_) => (s[0], s[1]),
        SectionKind::PlaneY0 | SectionKind::ZLocalMax => (s[0], s[2]),
    }
}

/// Collects up to `n_events` crossings after the transient. Capture, escape
/// or the time budget end the walk early and are reported in `termination`.
pub fn section_portrait(p: &SystemParams, section: &SectionSpec, n_events: usize, cfg: &PoincareConfig) -> Result<SectionPortrait> {
    if n_events == 0 {
        return Err(Error::Domain("need at least one event".into()));
    }
    let mut w = separatrix_walker(p, cfg.branch, cfg.eps, *section, cfg.capture_radius, &cfg.integrator)?;
    let mut points = Vec::with_capacity(n_events);
    let mut seen = 0usize;
    let termination = loop {
        if points.len() >= n_events {
            break Termination::Completed;
        }
        match w.next_event(cfg.max_time) {
            Ok(WalkEvent::Crossing(e)) => {
                seen += 1;
                if seen > cfg.transient_events {
                    let (a, b) = plane_coords(section.kind, &e.state);
                    points.push(PortraitPoint { a, b, dir: e.direction_sign, state: e.state, time: e.time });
                }
            }
            Ok(WalkEvent::Captured(_)) => break Termination::EquilibriumCapture,
            Ok(WalkEvent::TimeLimit) => break Termination::TimeLimit,
            Err(Error::Escape { .. }) => break Termination::Escape,
            Err(e) => return Err(e),
        }
    };
    Ok(SectionPortrait { section: *section, points, termination })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Folding {
    AbsFold,
    None,
}

/// Which pre-images are kept.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Side {
    Positive,
    Negative,
    /// Crossings with `y > 0`; on a horizontal plane this picks one of the
    /// two symmetric arcs.
    YPositive,
    Any,
    /// Keep `lo <= x_n <= hi`, used to pick one cloud of a multi-cloud
    /// section.
    Band(f64, f64),
}

impl Side {
    pub fn keeps(&self, s: &State) -> bool {
        let x = s[0];
        match *self {
            Side::YPositive => s[1] > 0.0,
            Side::Positive => x > 0.0,
            Side::Negative => x < 0.0,
            Side::Any => true,
            Side::Band(lo, hi) => (lo..=hi).contains(&x),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OneDMapData {
    pub pairs: Vec<(f64, f64)>,
    pub stride: usize,
    pub folding: Folding,
    pub side: Side,
    pub termination: Termination,
}

/// Pairs `(x_k, f(x_{k+stride}))` from one orbit, with `f` the folding.
pub fn map_from_portrait(portrait: &SectionPortrait, stride: usize, folding: Folding, side: Side) -> Result<OneDMapData> {
    if !(1..=2).contains(&stride) {
        return Err(Error::Domain(format!("stride must be 1 or 2, got {stride}")));
    }
    let pts = &portrait.points;
    let pairs = pts
        .iter()
        .zip(pts.iter().skip(stride))
        .filter(|(a, _)| side.keeps(&a.state))
        .map(|(a, b)| {
            let y = b.state[0];
            (a.state[0], if folding == Folding::AbsFold { y.abs() } else { y })
        })
        .collect();
    Ok(OneDMapData { pairs, stride, folding, side, termination: portrait.termination })
}

/// Collects enough crossings for `n_pairs` pairs before side filtering and
/// then filters. The result may hold fewer pairs than requested.
pub fn one_d_map(
    p: &SystemParams,
    section: &SectionSpec,
    stride: usize,
    folding: Folding,
    side: Side,
    n_pairs: usize,
    cfg: &PoincareConfig,
) -> Result<OneDMapData> {
    if n_pairs < 100 {
        return Err(Error::Domain(format!("need at least 100 pairs, got {n_pairs}")));
    }
    if !(1..=2).contains(&stride) {
        return Err(Error::Domain(format!("stride must be 1 or 2, got {stride}")));
    }
    let portrait = section_portrait(p, section, n_pairs + stride, cfg)?;
    map_from_portrait(&portrait, stride, folding, side)
}

fn range(v: impl Iterator<Item = f64>) -> (f64, f64) {
    v.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

/// Number of clusters of pre-images separated by gaps wider than
/// `gap_frac` of their range.
pub fn component_count(data: &OneDMapData, gap_frac: f64) -> usize {
    let mut xs: Vec<f64> = data.pairs.iter().map(|p| p.0).collect();
    count_clusters(&mut xs, gap_frac)
}

pub fn count_clusters(xs: &mut [f64], gap_frac: f64) -> usize {
    if xs.is_empty() {
        return 0;
    }
    xs.sort_by(f64::total_cmp);
    let span = xs[xs.len() - 1] - xs[0];
    if span <= 0.0 {
        return 1;
    }
    1 + xs.windows(2).filter(|w| w[1] - w[0] > gap_frac * span).count()
}

/// Pairs sorted into equal-width pre-image bins, plus the image range.
fn bin_pairs(data: &OneDMapData, bins: usize) -> (Vec<Vec<(f64, f64)>>, f64) {
    let (lo, hi) = range(data.pairs.iter().map(|p| p.0));
    let (ilo, ihi) = range(data.pairs.iter().map(|p| p.1));
    let mut cells = vec![Vec::new(); bins];
    let width = (hi - lo).max(f64::MIN_POSITIVE);
    for &(x, y) in &data.pairs {
        let k = (((x - lo) / width * bins as f64) as usize).min(bins - 1);
        cells[k].push((x, y));
    }
    (cells, ihi - ilo)
}

/// Range of the residuals of a least-squares line through one bin.
fn detrended_range(cell: &[(f64, f64)]) -> f64 {
    let n = cell.len() as f64;
    let (mx, my) = cell.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / n, b + p.1 / n));
    let (sxy, sxx) = cell.iter().fold((0.0, 0.0), |(a, b), p| (a + (p.0 - mx) * (p.1 - my), b + (p.0 - mx).powi(2)));
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let (lo, hi) = range(cell.iter().map(|p| p.1 - my - slope * (p.0 - mx)));
    hi - lo
}

fn local_extrema(means: &[Option<f64>]) -> Vec<usize> {
    let filled: Vec<(usize, f64)> = means.iter().enumerate().filter_map(|(i, m)| m.map(|m| (i, m))).collect();
    filled
        .windows(3)
        .filter(|w| (w[1].1 - w[0].1) * (w[2].1 - w[1].1) <= 0.0)
        .map(|w| w[1].0)
        .collect()
}

/// Largest vertical spread of the images around the local trend within one
/// pre-image bin, as a fraction of the image range. Small values mean the
/// graph is close to a single-valued function. Bins with fewer than
/// `min_count` pairs, and bins next to a turning point of the graph (kinks
/// and the discontinuity), are ignored.
pub fn fiber_spread(data: &OneDMapData, bins: usize, min_count: usize) -> f64 {
    if data.pairs.len() < 2 || bins == 0 {
        return 0.0;
    }
    let (cells, span) = bin_pairs(data, bins);
    if span <= 0.0 {
        return 0.0;
    }
    let means: Vec<Option<f64>> = cells
        .iter()
        .map(|c| (!c.is_empty()).then(|| c.iter().map(|p| p.1).sum::<f64>() / c.len() as f64))
        .collect();
    let mut skip = vec![false; bins];
    for i in local_extrema(&means) {
        for j in i.saturating_sub(1)..=(i + 1).min(bins - 1) {
            skip[j] = true;
        }
    }
    cells
        .iter()
        .zip(&skip)
        .filter(|(c, s)| !**s && c.len() >= min_count.max(2))
        .map(|(c, _)| detrended_range(c) / span)
        .fold(0.0, f64::max)
}

/// Turning points of the graph smoothed by a moving average over `window`
/// consecutive pre-images, found by a hysteresis walk: a reversal counts
/// once the graph has moved `rel_tol` of the image range against the
/// current trend. Returns `(maxima, minima)`.
pub fn turning_points(data: &OneDMapData, window: usize, rel_tol: f64) -> (usize, usize) {
    let w = window.max(1);
    if data.pairs.len() < 2 * w {
        return (0, 0);
    }
    let mut pts = data.pairs.clone();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (ilo, ihi) = range(pts.iter().map(|p| p.1));
    let mut sum: f64 = pts[..w].iter().map(|p| p.1).sum();
    let mut smooth = vec![sum / w as f64];
    for k in w..pts.len() {
        sum += pts[k].1 - pts[k - w].1;
        smooth.push(sum / w as f64);
    }
    let thr = rel_tol * (ihi - ilo);
    let (mut maxima, mut minima) = (0, 0);
    let mut trend = 0i8;
    let mut ext = smooth[0];
    for &m in &smooth[1..] {
        match trend {
            0 if (m - ext).abs() > thr => {
                trend = if m > ext { 1 } else { -1 };
                ext = m;
            }
            0 => {}
            1 if m > ext => ext = m,
            1 if ext - m > thr => {
                maxima += 1;
                trend = -1;
                ext = m;
            }
            -1 if m < ext => ext = m,
            -1 if m - ext > thr => {
                minima += 1;
                trend = 1;
                ext = m;
            }
            _ => {}
        }
    }
    (maxima, minima)
}

/// A Lorenz-like folded map has one interior maximum (the image of the
/// discontinuity). A second prominent maximum is the hook that appears
/// once the branch next to the discontinuity develops a critical point.
pub fn has_hook(data: &OneDMapData, window: usize, rel_tol: f64) -> bool {
    turning_points(data, window, rel_tol).0 >= 2
}

pub fn write_portrait_csv<W: Write>(mut w: W, portrait: &SectionPortrait) -> Result<()> {
    writeln!(w, "x,y,dir")?;
    for q in &portrait.points {
        writeln!(w, "{},{},{}", q.a, q.b, q.dir)?;
    }
    Ok(())
}

pub fn write_map_csv<W: Write>(mut w: W, data: &OneDMapData) -> Result<()> {
    writeln!(w, "xn,xim")?;
    for (x, y) in &data.pairs {
        writeln!(w, "{x},{y}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::integrate::{Direction, Predicate};
    use proptest::prelude::*;

    fn sm(alpha: f64, lambda: f64) -> SystemParams {
        SystemParams::shimizu_morioka(alpha, lambda).unwrap()
    }

    fn z1(direction: Direction) -> SectionSpec {
        SectionSpec::new(SectionKind::PlaneZ(1.0), direction)
    }

    #[test]
    fn z1_portrait_has_both_directions_on_the_plane() {
        let pr = section_portrait(&sm(0.4, 0.9), &z1(Direction::Both), 800, &PoincareConfig::default()).unwrap();
        assert_eq!(pr.termination, Termination::Completed);
        assert_eq!(pr.points.len(), 800);
        assert!(pr.points.iter().any(|q| q.dir > 0) && pr.points.iter().any(|q| q.dir < 0));
        assert!(pr.points.iter().all(|q| (q.state[2] - 1.0).abs() < 1e-9));
        assert!(pr.points.windows(2).all(|w| w[0].time < w[1].time));
    }

    #[test]
    fn stable_regime_ends_in_capture() {
        let cfg = PoincareConfig { transient_events: 0, ..Default::default() };
        let pr = section_portrait(&sm(0.4, 1.3), &z1(Direction::Both), 10_000, &cfg).unwrap();
        assert_eq!(pr.termination, Termination::EquilibriumCapture);
        assert!(pr.points.len() < 10_000);
    }

    #[test]
    fn minus_separatrix_portrait_is_the_mirror_image() {
        let cfg = PoincareConfig::default();
        let plus = section_portrait(&sm(0.4, 0.9), &z1(Direction::Downward), 300, &cfg).unwrap();
        let minus = section_portrait(&sm(0.4, 0.9), &z1(Direction::Downward), 300, &PoincareConfig { branch: Branch::Minus, ..cfg }).unwrap();
        for (p, m) in plus.points.iter().zip(&minus.points) {
            assert!((p.a + m.a).abs() < 1e-6 && (p.b + m.b).abs() < 1e-6, "{p:?} {m:?}");
        }
    }

    #[test]
    fn stride_two_composes_stride_one() {
        let sec = SectionSpec::new(SectionKind::PlaneY0, Direction::Both).with_predicate(Predicate::ZDotPositive);
        let pr = section_portrait(&sm(0.61, 0.65), &sec, 400, &PoincareConfig::default()).unwrap();
        let one = map_from_portrait(&pr, 1, Folding::None, Side::Any).unwrap();
        let two = map_from_portrait(&pr, 2, Folding::None, Side::Any).unwrap();
        assert_eq!(one.pairs.len(), 399);
        assert_eq!(two.pairs.len(), 398);
        for k in 0..two.pairs.len() {
            assert_eq!(one.pairs[k].1, one.pairs[k + 1].0);
            assert_eq!(two.pairs[k], (one.pairs[k].0, one.pairs[k + 1].1));
        }
        let p = sm(0.61, 0.65);
        assert!(pr.points.iter().all(|q| q.state[1].abs() < 1e-9 && p.rhs(&q.state)[2] > 0.0));
    }

    #[test]
    fn map_argument_checks() {
        let p = sm(0.4, 0.9);
        let cfg = PoincareConfig::default();
        assert!(one_d_map(&p, &z1(Direction::Downward), 1, Folding::AbsFold, Side::Any, 99, &cfg).is_err());
        assert!(one_d_map(&p, &z1(Direction::Downward), 3, Folding::AbsFold, Side::Any, 100, &cfg).is_err());
        assert!(section_portrait(&p, &z1(Direction::Downward), 0, &cfg).is_err());
    }

    #[test]
    fn reference_map_is_one_dimensional() {
        let d = one_d_map(&sm(0.4, 0.9), &z1(Direction::Downward), 1, Folding::AbsFold, Side::YPositive, 3000, &PoincareConfig::default())
            .unwrap();
        assert!(d.pairs.len() > 1000);
        assert!(d.pairs.iter().all(|p| p.1 >= 0.0));
        let s = fiber_spread(&d, 100, 5);
        assert!(s < 0.05, "{s}");
        assert!(!has_hook(&d, 10, 0.02));
    }

    #[test]
    fn synthetic_gap_gives_two_clusters() {
        let gap = 0.05;
        let mut xs: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).filter(|x| !(0.4..0.4 + 3.0 * gap).contains(x)).collect();
        assert_eq!(count_clusters(&mut xs, gap), 2);
        let mut uniform: Vec<f64> = (0..=400).map(|k| k as f64 / 400.0).collect();
        assert_eq!(count_clusters(&mut uniform, gap), 1);
        assert_eq!(count_clusters(&mut [], gap), 0);
        assert_eq!(count_clusters(&mut [2.0, 2.0], gap), 1);
    }

    proptest! {
        #[test]
        fn cluster_count_is_affine_invariant(
            xs in prop::collection::vec(-5.0f64..5.0, 100..300),
            scale in prop::sample::select(vec![0.25, 0.5, 2.0, 4.0, -1.0]),
            shift in prop::sample::select(vec![-3.0, 0.0, 0.5, 16.0]),
        ) {
            // Power-of-two scales and dyadic shifts keep the arithmetic exact.
            let mut a = xs.clone();
            let mut b: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
            prop_assert_eq!(count_clusters(&mut a, 0.05), count_clusters(&mut b, 0.05));
        }
    }

    #[test]
    fn turning_points_of_synthetic_graphs() {
        let data = |f: &dyn Fn(f64) -> f64| OneDMapData {
            pairs: (0..1000).map(|k| k as f64 / 1000.0).map(|x| (x, f(x))).collect(),
            stride: 1,
            folding: Folding::None,
            side: Side::Any,
            termination: Termination::Completed,
        };
        let tent = data(&|x| 1.0 - (2.0 * x - 1.0).abs());
        assert_eq!(turning_points(&tent, 5, 0.02), (1, 0));
        assert!(!has_hook(&tent, 5, 0.02));
        let hook = data(&|x| (6.0 * std::f64::consts::PI * x).sin());
        assert!(has_hook(&hook, 5, 0.02));
        assert!(fiber_spread(&tent, 50, 5) < 1e-12);
    }

    #[test]
    fn csv_schemas() {
        let pr = section_portrait(&sm(0.4, 0.9), &z1(Direction::Downward), 3, &PoincareConfig::default()).unwrap();
        let mut buf = Vec::new();
        write_portrait_csv(&mut buf, &pr).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,dir\n"));
        assert_eq!(text.lines().count(), 4);
        let d = map_from_portrait(&pr, 1, Folding::AbsFold, Side::Any).unwrap();
        let mut buf = Vec::new();
        write_map_csv(&mut buf, &d).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("xn,xim\n"));
    }
}
