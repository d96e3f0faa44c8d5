use std::fmt::Write as _;
use std::path::Path;

use lorenz_atlas::chartscan::{self, Axis, JobKind, Plane, ScanOptions};
use lorenz_atlas::dynsys::{State, SystemParams};
use lorenz_atlas::integrate::{self, separatrix_seed, Branch, Direction, IntegratorConfig, Predicate, SectionKind, SectionSpec};
use lorenz_atlas::kneading::{self, KneadingConfig};
use lorenz_atlas::lyap::{self, ClvConfig, LyapConfig};
use lorenz_atlas::modelmap::{self, ChartAxis, CurveKind, RegimeChartSpec};
use lorenz_atlas::poincare::{self, Folding, PoincareConfig, Side};
use lorenz_atlas::pseudohyp::{self, ScanAxis, ShortSegmentConfig, Subspace, SubspacePair, TraceConfig, TraceLine, VerdictConfig};

use crate::config::{Config, ConfigError};

pub const COMMANDS: [&str; 14] = [
    "simulate",
    "spectrum",
    "clv",
    "angles",
    "continuity",
    "verdict",
    "kneading",
    "bisect-homoclinic",
    "portrait",
    "map1d",
    "modelmap-curves",
    "modelmap-chart",
    "chart",
    "trace-a0",
];

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numeric(lorenz_atlas::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Numeric(lorenz_atlas::Error::Domain(_)) => 2,
            CliError::Numeric(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Numeric(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.0)
    }
}

impl From<lorenz_atlas::Error> for CliError {
    fn from(e: lorenz_atlas::Error) -> Self {
        CliError::Numeric(e)
    }
}

type Res<T> = Result<T, CliError>;
type Schema = Vec<(&'static str, String)>;

fn kv(pairs: &[(&'static str, &str)]) -> Schema {
    pairs.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

fn common() -> Schema {
    kv(&[("out", "-"), ("abs_tol", "1e-10"), ("rel_tol", "1e-10"), ("max_step", "0.5")])
}

fn system() -> Schema {
    kv(&[("alpha", "0.4"), ("lambda", "0.9"), ("b_cubic", "0"), ("eps", "1e-6")])
}

fn clv_keys(window: &str, renorm: &str) -> Schema {
    kv(&[
        ("settle", "500"),
        ("transient_fwd", "1000"),
        ("transient_bwd", "1000"),
        ("window", window),
        ("renorm", renorm),
        ("stride", "1"),
    ])
}

fn section_keys(section: &str, level: &str, direction: &str, predicate: &str) -> Schema {
    kv(&[
        ("section", section),
        ("z_level", level),
        ("direction", direction),
        ("predicate", predicate),
        ("branch", "plus"),
        ("transient_events", "100"),
        ("max_time", "1e5"),
    ])
}

/// Keys and defaults accepted by `command`.
pub fn schema(command: &str) -> Option<Schema> {
    let mut s = common();
    let parts: Vec<Schema> = match command {
        "simulate" => vec![system(), kv(&[("t_end", "100"), ("dt", "0.01"), ("branch", "plus"), ("x0", ""), ("y0", ""), ("z0", "")])],
        "spectrum" => vec![system(), kv(&[("t_total", "1e4"), ("renorm", "0.5"), ("transient", "1000"), ("settle", "500")])],
        "clv" => vec![system(), clv_keys("1000", "0.1")],
        "angles" => vec![system(), clv_keys("1e4", "0.1"), kv(&[("pair", "ss_cu"), ("bins", "90")])],
        "continuity" => vec![
            system(),
            clv_keys("2000", "0.1"),
            kv(&[("subspace", "ecu"), ("pair_budget", "500000"), ("seed", "0"), ("rho_frac", "0.05"), ("phi_tol", "0.2")]),
        ],
        "verdict" => vec![
            system(),
            clv_keys("1e4", "0.1"),
            kv(&[
                ("beta_threshold", "0.005"),
                ("chaos_threshold", "0.005"),
                ("pair_budget", "500000"),
                ("seed", "0"),
                ("rho_frac", "0.05"),
                ("phi_tol", "0.2"),
                ("bins", "90"),
            ]),
        ],
        "kneading" => vec![
            system(),
            kv(&[("n_symbols", "16"), ("skip", "1"), ("k_n", "15"), ("branch", "plus"), ("max_time", "5000"), ("capture_radius", "1e-4")]),
        ],
        "bisect-homoclinic" => vec![kv(&[
            ("alpha_a", "0.4"),
            ("lambda_a", "1.19"),
            ("alpha_b", "0.4"),
            ("lambda_b", "1.22"),
            ("b_cubic", "0"),
            ("eps", "1e-6"),
            ("symbol_index", "1"),
            ("tol", "1e-6"),
            ("n_symbols", "16"),
            ("max_time", "5000"),
            ("capture_radius", "1e-4"),
        ])],
        "portrait" => vec![system(), section_keys("z", "1", "down", "none"), kv(&[("n_events", "5000")])],
        "map1d" => vec![
            system(),
            section_keys("z", "1", "down", "none"),
            kv(&[
                ("stride", "1"),
                ("folding", "abs"),
                ("side", "ypos"),
                ("band_lo", "-inf"),
                ("band_hi", "inf"),
                ("n_pairs", "2000"),
                ("gap_frac", "0.05"),
                ("bins", "100"),
                ("min_count", "5"),
                ("window", "10"),
                ("hook_tol", "0.02"),
            ]),
        ],
        "modelmap-curves" => vec![kv(&[("a", "0.63"), ("nu", "0.8"), ("kinds", "all")])],
        "modelmap-chart" => vec![kv(&[
            ("axis", "nu"),
            ("a", "0.63"),
            ("nu", "0.8"),
            ("mu_lo", "-0.15"),
            ("mu_hi", "0.15"),
            ("other_lo", ""),
            ("other_hi", ""),
            ("n_mu", "400"),
            ("n_other", "400"),
            ("n_transient", "2000"),
            ("n_probe", "256"),
        ])],
        "chart" => vec![kv(&[
            ("preset", "fig6a"),
            ("job", ""),
            ("n", "50"),
            ("seed", "0"),
            ("checkpoint", ""),
            ("stop_after", ""),
            ("cell_timeout", "30"),
            ("batch", "64"),
            ("axis1_lo", ""),
            ("axis1_hi", ""),
            ("axis2_lo", ""),
            ("axis2_hi", ""),
        ])],
        "trace-a0" => vec![kv(&[
            ("alpha", "0.4"),
            ("b_cubic", "0"),
            ("eps", "1e-6"),
            ("from", "1.0"),
            ("to", "0.6"),
            ("beta_threshold", "0.005"),
            ("resolution", "21"),
            ("tol", "1e-4"),
            ("skip_arc", "0.1"),
            ("window", "300"),
            ("renorm", "0.01"),
            ("transient_bwd", "200"),
        ])],
        _ => return None,
    };
    for p in parts {
        s.extend(p);
    }
    Some(s)
}

fn integrator(c: &Config) -> Res<IntegratorConfig> {
    let ic = IntegratorConfig { abs_tol: c.f64("abs_tol")?, rel_tol: c.f64("rel_tol")?, max_step: c.f64("max_step")?, ..Default::default() };
    ic.validate()?;
    Ok(ic)
}

fn params_with(alpha: f64, lambda: f64, b: f64) -> Res<SystemParams> {
    Ok(if b == 0.0 { SystemParams::shimizu_morioka(alpha, lambda)? } else { SystemParams::extended_sm(alpha, lambda, b)? })
}

fn params(c: &Config) -> Res<SystemParams> {
    params_with(c.f64("alpha")?, c.f64("lambda")?, c.f64("b_cubic")?)
}

fn branch(c: &Config) -> Res<Branch> {
    Ok(match c.choice("branch", &["plus", "minus"])?.as_str() {
        "plus" => Branch::Plus,
        _ => Branch::Minus,
    })
}

fn clv_config(c: &Config) -> Res<ClvConfig> {
    Ok(ClvConfig {
        transient_fwd: c.f64("transient_fwd")?,
        window: c.f64("window")?,
        transient_bwd: c.f64("transient_bwd")?,
        renorm_interval: c.f64("renorm")?,
        stride: c.usize("stride")?,
        integrator: integrator(c)?,
        ..Default::default()
    })
}

fn start_point(c: &Config, p: &SystemParams) -> Res<State> {
    Ok(pseudohyp::attractor_point(p, c.f64("eps")?, c.f64("settle")?, &integrator(c)?)?)
}

fn frames(c: &Config) -> Res<Vec<lyap::ClvFrame>> {
    let p = params(c)?;
    let s0 = start_point(c, &p)?;
    let run = lyap::covariant_vectors(&p, s0, &clv_config(c)?)?;
    if run.dropped > 0 {
        eprintln!("{} degenerate frames dropped", run.dropped);
    }
    Ok(run.frames)
}

fn section(c: &Config) -> Res<SectionSpec> {
    let kind = match c.choice("section", &["z", "y0", "zmax"])?.as_str() {
        "z" => SectionKind::PlaneZ(c.f64("z_level")?),
        "y0" => SectionKind::PlaneY0,
        _ => SectionKind::ZLocalMax,
    };
    let direction = match c.choice("direction", &["up", "down", "both"])?.as_str() {
        "up" => Direction::Upward,
        "down" => Direction::Downward,
        _ => Direction::Both,
    };
    let predicate = match c.choice("predicate", &["none", "zdot_pos", "zdot_neg", "x_pos", "x_neg"])?.as_str() {
        "zdot_pos" => Predicate::ZDotPositive,
        "zdot_neg" => Predicate::ZDotNegative,
        "x_pos" => Predicate::XPositive,
        "x_neg" => Predicate::XNegative,
        _ => Predicate::None,
    };
    Ok(SectionSpec::new(kind, direction).with_predicate(predicate))
}

fn poincare_config(c: &Config) -> Res<PoincareConfig> {
    Ok(PoincareConfig {
        transient_events: c.usize("transient_events")?,
        eps: c.f64("eps")?,
        branch: branch(c)?,
        max_time: c.f64("max_time")?,
        integrator: integrator(c)?,
        ..Default::default()
    })
}

fn csv<F>(f: F) -> Res<String>
where
    F: FnOnce(&mut Vec<u8>) -> lorenz_atlas::Result<()>,
{
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(String::from_utf8(buf).expect("writers emit UTF-8"))
}

/// Runs `c.command()` and returns the output body (without the header).
pub fn run(c: &Config) -> Res<String> {
    match c.command() {
        "simulate" => simulate(c),
        "spectrum" => spectrum(c),
        "clv" => {
            let f = frames(c)?;
            csv(|w| lyap::write_clv_csv(w, &f))
        }
        "angles" => angles(c),
        "continuity" => continuity(c),
        "verdict" => verdict(c),
        "kneading" => knead(c),
        "bisect-homoclinic" => bisect(c),
        "portrait" => portrait(c),
        "map1d" => map1d(c),
        "modelmap-curves" => curves(c),
        "modelmap-chart" => regime_chart(c),
        "chart" => chart(c),
        "trace-a0" => trace(c),
        other => Err(CliError::Config(format!("unknown subcommand '{other}'"))),
    }
}

fn simulate(c: &Config) -> Res<String> {
    let p = params(c)?;
    let s0 = match (c.opt_f64("x0")?, c.opt_f64("y0")?, c.opt_f64("z0")?) {
        (Some(x), Some(y), Some(z)) => State::new(x, y, z),
        (None, None, None) => separatrix_seed(&p, branch(c)?, c.f64("eps")?)?,
        _ => return Err(CliError::Config("give all of x0, y0, z0 or none".into())),
    };
    let samples = integrate::integrate_sampled(&p, s0, &integrator(c)?, c.f64("t_end")?, c.f64("dt")?)?;
    csv(|w| integrate::write_trajectory_csv(w, &samples))
}

fn spectrum(c: &Config) -> Res<String> {
    let p = params(c)?;
    let cfg = LyapConfig {
        t_total: c.f64("t_total")?,
        renorm_interval: c.f64("renorm")?,
        transient: c.f64("transient")?,
        integrator: integrator(c)?,
        ..Default::default()
    };
    let s = lyap::lyapunov_spectrum(&p, start_point(c, &p)?, &cfg)?;
    if !s.converged {
        eprintln!("spectrum not converged over the second half of the run");
    }
    let (a, l) = (c.f64("alpha")?, c.f64("lambda")?);
    csv(|w| lyap::write_spectrum_csv(w, &[(a, l, s)]))
}

fn angles(c: &Config) -> Res<String> {
    let pair = match c.choice("pair", &["ss_cu", "u_cs"])?.as_str() {
        "ss_cu" => SubspacePair::SsVsCu,
        _ => SubspacePair::UVsCs,
    };
    let stats = pseudohyp::angle_statistics(&frames(c)?, pair, c.usize("bins")?)?;
    let mut s = format!("# beta_min {}\n# samples {}\n", stats.beta_min, stats.sample_count);
    s += &csv(|w| pseudohyp::write_histogram_csv(w, &stats))?;
    Ok(s)
}

fn continuity(c: &Config) -> Res<String> {
    let sub = match c.choice("subspace", &["ess", "ecu", "eu", "ecs"])?.as_str() {
        "ess" => Subspace::Ess,
        "ecu" => Subspace::Ecu,
        "eu" => Subspace::Eu,
        _ => Subspace::Ecs,
    };
    let cloud = pseudohyp::continuity_diagram(&frames(c)?, sub, c.usize("pair_budget")?, c.get("seed")?)?;
    let o = pseudohyp::classify_orientability(&cloud, c.f64("rho_frac")?, c.f64("phi_tol")?);
    let mut s = format!("# orientability {}\n# diameter {}\n", o.as_str(), cloud.diameter);
    s += &csv(|w| pseudohyp::write_cloud_csv(w, &cloud))?;
    Ok(s)
}

fn verdict(c: &Config) -> Res<String> {
    let p = params(c)?;
    let cfg = VerdictConfig {
        eps: c.f64("eps")?,
        settle: c.f64("settle")?,
        clv: clv_config(c)?,
        beta_threshold: c.f64("beta_threshold")?,
        chaos_threshold: c.f64("chaos_threshold")?,
        pair_budget: c.usize("pair_budget")?,
        rng_seed: c.get("seed")?,
        rho_frac: c.f64("rho_frac")?,
        phi_tol: c.f64("phi_tol")?,
        bins: c.usize("bins")?,
    };
    let v = pseudohyp::verdict(&p, &cfg)?;
    if let Some(d) = &v.diagnostic {
        eprintln!("{d}");
    }
    csv(|w| pseudohyp::write_verdict_csv(w, &[v]))
}

fn kneading_config(c: &Config) -> Res<KneadingConfig> {
    Ok(KneadingConfig {
        n_symbols: c.usize("n_symbols")?,
        eps: c.f64("eps")?,
        max_time: c.f64("max_time")?,
        capture_radius: c.f64("capture_radius")?,
        integrator: integrator(c)?,
        ..Default::default()
    })
}

fn knead(c: &Config) -> Res<String> {
    let p = params(c)?;
    let (skip, k_n) = (c.usize("skip")?, c.usize("k_n")?);
    let cfg = KneadingConfig { skip, branch: branch(c)?, ..kneading_config(c)? };
    let seq = kneading::kneading_sequence(&p, &cfg)?;
    let mut s = format!("# termination {}\n", seq.termination.as_str());
    match kneading::code_of(&seq.extended(skip + k_n), k_n, skip) {
        Ok(code) => writeln!(s, "# code {code}").unwrap(),
        Err(e) => eprintln!("no code: {e}"),
    }
    s += &csv(|w| kneading::write_sequences(w, &[seq]))?;
    Ok(s)
}

fn bisect(c: &Config) -> Res<String> {
    let b = c.f64("b_cubic")?;
    let pa = params_with(c.f64("alpha_a")?, c.f64("lambda_a")?, b)?;
    let pb = params_with(c.f64("alpha_b")?, c.f64("lambda_b")?, b)?;
    let h = kneading::homoclinic_bisect(&pa, &pb, c.usize("symbol_index")?, c.f64("tol")?, &kneading_config(c)?)?;
    if let Some(d) = &h.diagnostic {
        eprintln!("{d}");
    }
    let (a, l) = h.params.alpha_lambda().unwrap_or((f64::NAN, f64::NAN));
    let mut s = String::from("alpha,lambda,s_lo,s_hi,iterations,seq_a,seq_b\n");
    writeln!(s, "{a},{l},{},{},{},{},{}", h.bracket.0, h.bracket.1, h.iterations, h.seq_a, h.seq_b).unwrap();
    Ok(s)
}

fn portrait(c: &Config) -> Res<String> {
    let pr = poincare::section_portrait(&params(c)?, &section(c)?, c.usize("n_events")?, &poincare_config(c)?)?;
    let mut s = format!("# termination {}\n", pr.termination.as_str());
    s += &csv(|w| poincare::write_portrait_csv(w, &pr))?;
    Ok(s)
}

fn map1d(c: &Config) -> Res<String> {
    let folding = match c.choice("folding", &["abs", "none"])?.as_str() {
        "abs" => Folding::AbsFold,
        _ => Folding::None,
    };
    let side = match c.choice("side", &["pos", "neg", "ypos", "any", "band"])?.as_str() {
        "pos" => Side::Positive,
        "neg" => Side::Negative,
        "ypos" => Side::YPositive,
        "any" => Side::Any,
        _ => Side::Band(c.get("band_lo")?, c.get("band_hi")?),
    };
    let d = poincare::one_d_map(&params(c)?, &section(c)?, c.usize("stride")?, folding, side, c.usize("n_pairs")?, &poincare_config(c)?)?;
    let (maxima, minima) = poincare::turning_points(&d, c.usize("window")?, c.f64("hook_tol")?);
    let mut s = String::new();
    writeln!(s, "# termination {}", d.termination.as_str()).unwrap();
    writeln!(s, "# components {}", poincare::component_count(&d, c.f64("gap_frac")?)).unwrap();
    writeln!(s, "# fiber_spread {}", poincare::fiber_spread(&d, c.usize("bins")?, c.usize("min_count")?)).unwrap();
    writeln!(s, "# turning_points {maxima} {minima}").unwrap();
    s += &csv(|w| poincare::write_map_csv(w, &d))?;
    Ok(s)
}

fn curves(c: &Config) -> Res<String> {
    let (a, nu) = (c.f64("a")?, c.f64("nu")?);
    let kinds: Vec<CurveKind> = match c.raw("kinds") {
        "all" => CurveKind::ALL.to_vec(),
        list => list
            .split(',')
            .map(|k| {
                CurveKind::ALL
                    .into_iter()
                    .find(|c| c.as_str() == k.trim())
                    .ok_or_else(|| CliError::Config(format!("unknown curve '{k}'")))
            })
            .collect::<Res<_>>()?,
    };
    let mut pts = Vec::new();
    for k in kinds {
        match modelmap::curve_point(k, a, nu) {
            Ok(p) => pts.push(p),
            Err(e) => eprintln!("{}: {e}", k.as_str()),
        }
    }
    csv(|w| modelmap::write_curves_csv(w, &pts))
}

fn regime_chart(c: &Config) -> Res<String> {
    let (axis, default_other) = match c.choice("axis", &["nu", "a"])?.as_str() {
        "nu" => (ChartAxis::Nu { a: c.f64("a")? }, (0.5, 1.0)),
        _ => (ChartAxis::A { nu: c.f64("nu")? }, (0.3, 0.9)),
    };
    let spec = RegimeChartSpec {
        axis,
        mu: (c.f64("mu_lo")?, c.f64("mu_hi")?),
        other: (c.opt_f64("other_lo")?.unwrap_or(default_other.0), c.opt_f64("other_hi")?.unwrap_or(default_other.1)),
        n_mu: c.usize("n_mu")?,
        n_other: c.usize("n_other")?,
        n_transient: c.usize("n_transient")?,
        n_probe: c.usize("n_probe")?,
    };
    let cells = modelmap::regime_chart(&spec);
    csv(|w| modelmap::write_regime_csv(w, &cells))
}

fn chart(c: &Config) -> Res<String> {
    let pr = chartscan::preset(c.raw("preset"))?;
    let job = match c.raw("job") {
        "" => None,
        j => Some(JobKind::parse(j)?),
    };
    let mut spec = pr.spec(Some(c.usize("n")?), job, c.get("seed")?);
    spec.cell_timeout = c.opt_f64("cell_timeout")?;
    spec.batch = c.usize("batch")?;
    let n = spec.axis1.n;
    let ax = |name: &str, lo: &str, hi: &str, d: &Axis| -> Res<Axis> {
        Ok(Axis::new(name, c.opt_f64(lo)?.unwrap_or(d.lo), c.opt_f64(hi)?.unwrap_or(d.hi), n))
    };
    spec.axis1 = ax(&spec.axis1.name.clone(), "axis1_lo", "axis1_hi", &spec.axis1)?;
    spec.axis2 = ax(&spec.axis2.name.clone(), "axis2_lo", "axis2_hi", &spec.axis2)?;
    let checkpoint = match c.raw("checkpoint") {
        "" => None,
        p => Some(Path::new(p)),
    };
    let grid = chartscan::scan(&spec, &ScanOptions { checkpoint, stop_after: c.opt_usize("stop_after")? })?;
    if !grid.is_complete() {
        eprintln!("{} cells pending", grid.pending());
    }
    let plane = match spec.plane {
        Plane::AlphaLambda => "alpha_lambda",
        Plane::Rotated => "rotated",
    };
    let mut s = format!("# plane {plane}\n# job {}\n# grid_hash {}\n", spec.job.kind().as_str(), grid.hash);
    s += &csv(|w| chartscan::write_grid_csv(w, &grid))?;
    Ok(s)
}

fn trace(c: &Config) -> Res<String> {
    let base = params_with(0.4, 0.9, c.f64("b_cubic")?)?;
    let cfg = TraceConfig {
        beta_threshold: c.f64("beta_threshold")?,
        resolution: c.usize("resolution")?,
        tol: c.f64("tol")?,
        segment: ShortSegmentConfig {
            eps: c.f64("eps")?,
            skip_arc: c.f64("skip_arc")?,
            window: c.f64("window")?,
            renorm_interval: c.f64("renorm")?,
            transient_bwd: c.f64("transient_bwd")?,
            integrator: integrator(c)?,
        },
    };
    let (from, to) = (c.f64("from")?, c.f64("to")?);
    let lines = c
        .raw("alpha")
        .split(',')
        .map(|a| {
            let fixed = a.trim().parse::<f64>().map_err(|_| CliError::Config(format!("bad alpha '{a}'")))?;
            Ok(TraceLine { fixed, from, to })
        })
        .collect::<Res<Vec<_>>>()?;
    let t = pseudohyp::trace_tangency_curve(&base, ScanAxis::Lambda, &lines, &cfg)?;
    let mut s = String::new();
    for (a, why) in &t.skipped {
        writeln!(s, "# skipped alpha={a}: {why}").unwrap();
    }
    s.push_str("alpha,lambda,beta_min\n");
    for p in &t.points {
        writeln!(s, "{},{},{}", p.alpha, p.lambda, p.beta_min).unwrap();
    }
    Ok(s)
}
