//! Parameter charts: grids of independent cell jobs, run in batches on a
//! worker pool, with a line-oriented checkpoint so an interrupted scan can
//! resume without recomputing finished cells.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::time::{Duration, Instant};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::dynsys::SystemParams;
use crate::error::{Error, Result};
use crate::kneading::{code_of, kneading_sequence, KneadingConfig};
use crate::lyap::{lyapunov_spectrum, LyapConfig};
use crate::pseudohyp::{attractor_point, short_segment_beta_min, verdict, ShortSegmentConfig, Verdict, VerdictConfig};

/// Rotated chart coordinates: `(u, v) -> (alpha, lambda)`.
pub fn rotate_params(u: f64, v: f64) -> (f64, f64) {
    let alpha = 0.87567 * u + 0.48291 * v + 0.47746;
    let lambda = 0.48291 * u - 0.87567 * v + 0.5704;
    (alpha, lambda)
}

pub fn unrotate_params(alpha: f64, lambda: f64) -> (f64, f64) {
    // Solve the 2x2 system exactly; the matrix is only nearly orthogonal.
    let (a, b, c, d) = (0.87567, 0.48291, 0.48291, -0.87567);
    let (x, y) = (alpha - 0.47746, lambda - 0.5704);
    let det = a * d - b * c;
    ((d * x - b * y) / det, (a * y - c * x) / det)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Axis {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Axis {
    pub fn new(name: &str, lo: f64, hi: f64, n: usize) -> Self {
        Axis { name: name.to_string(), lo, hi, n }
    }

    pub fn value(&self, k: usize) -> f64 {
        if self.n <= 1 {
            self.lo
        } else {
            self.lo + (self.hi - self.lo) * k as f64 / (self.n - 1) as f64
        }
    }
}

/// Meaning of the two chart axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Plane {
    AlphaLambda,
    /// Axes are `(u, v)` mapped by [`rotate_params`].
    Rotated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JobKind {
    Lyapunov,
    Kneading,
    Verdict,
    ShortBeta,
}

impl JobKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            JobKind::Lyapunov => "lyapunov",
            JobKind::Kneading => "kneading",
            JobKind::Verdict => "verdict",
            JobKind::ShortBeta => "short_beta",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "lyapunov" => JobKind::Lyapunov,
            "kneading" => JobKind::Kneading,
            "verdict" => JobKind::Verdict,
            "short_beta" => JobKind::ShortBeta,
            _ => return Err(Error::Domain(format!("unknown chart job '{s}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub enum Job {
    /// Value: top exponent along `Γ+` after `settle`.
    Lyapunov { cfg: LyapConfig, eps: f64, settle: f64 },
    /// Value: kneading code of the retained window.
    Kneading { cfg: KneadingConfig, k_n: usize, skip: usize },
    /// Value: 2 for a Lorenz attractor, 1 for a tangency, 0 otherwise.
    Verdict { cfg: VerdictConfig },
    /// Value: short-segment minimal angle.
    ShortBeta { cfg: ShortSegmentConfig },
}

impl Job {
    pub fn kind(&self) -> JobKind {
        match self {
            Job::Lyapunov { .. } => JobKind::Lyapunov,
            Job::Kneading { .. } => JobKind::Kneading,
            Job::Verdict { .. } => JobKind::Verdict,
            Job::ShortBeta { .. } => JobKind::ShortBeta,
        }
    }

    /// Desk-scale defaults for chart cells.
    pub fn default_for(kind: JobKind, beta_threshold: f64, k_n: usize, skip: usize) -> Self {
        match kind {
            JobKind::Lyapunov => Job::Lyapunov {
                cfg: LyapConfig { t_total: 2000.0, transient: 200.0, ..Default::default() },
                eps: 1e-6,
                settle: 100.0,
            },
            JobKind::Kneading => Job::Kneading {
                cfg: KneadingConfig { n_symbols: skip + k_n, skip, max_time: 2000.0, ..Default::default() },
                k_n,
                skip,
            },
            JobKind::Verdict => Job::Verdict { cfg: VerdictConfig { beta_threshold, ..Default::default() } },
            JobKind::ShortBeta => Job::ShortBeta { cfg: ShortSegmentConfig::default() },
        }
    }

    fn set_deadline(&mut self, d: Option<Instant>) {
        match self {
            Job::Lyapunov { cfg, .. } => cfg.integrator.deadline = d,
            Job::Kneading { cfg, .. } => cfg.integrator.deadline = d,
            Job::Verdict { cfg } => cfg.clv.integrator.deadline = d,
            Job::ShortBeta { cfg } => cfg.integrator.deadline = d,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ChartSpec {
    pub axis1: Axis,
    pub axis2: Axis,
    pub plane: Plane,
    pub job: Job,
    pub preset_id: Option<String>,
    pub seed: u64,
    /// Per-cell wall-clock budget in seconds.
    pub cell_timeout: Option<f64>,
    /// Cells per checkpointed batch. Does not affect results.
    pub batch: usize,
}

impl ChartSpec {
    pub fn n_cells(&self) -> usize {
        self.axis1.n * self.axis2.n
    }

    /// `(i, j)` of cell `k`; the first axis varies fastest.
    pub fn cell_ij(&self, k: usize) -> (usize, usize) {
        (k % self.axis1.n, k / self.axis1.n)
    }

    pub fn cell_coords(&self, k: usize) -> (f64, f64) {
        let (i, j) = self.cell_ij(k);
        (self.axis1.value(i), self.axis2.value(j))
    }

    pub fn cell_params(&self, k: usize) -> Result<SystemParams> {
        let (a, b) = self.cell_coords(k);
        let (alpha, lambda) = match self.plane {
            Plane::AlphaLambda => (a, b),
            Plane::Rotated => rotate_params(a, b),
        };
        SystemParams::shimizu_morioka(alpha, lambda)
    }

    /// SHA-256 over everything that determines cell values.
    pub fn config_hash(&self) -> String {
        let canon = format!(
            "{:?}|{:?}|{:?}|{:?}|{}|{:?}",
            self.axis1, self.axis2, self.plane, self.job, self.seed, self.cell_timeout
        );
        Sha256::digest(canon.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for ax in [&self.axis1, &self.axis2] {
            if ax.n == 0 || !ax.lo.is_finite() || !ax.hi.is_finite() {
                return Err(Error::Domain(format!("bad axis {}", ax.name)));
            }
        }
        if self.batch == 0 {
            return Err(Error::Domain("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// Seed of cell `k`: the first word of stream `k` of a generator keyed by
/// the global seed, so it does not depend on execution order.
pub fn cell_seed(seed: u64, k: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(k as u64);
    rng.next_u64()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellStatus {
    Pending,
    Ok,
    Failed,
    Timeout,
}

impl CellStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            CellStatus::Pending => "pending",
            CellStatus::Ok => "ok",
            CellStatus::Failed => "failed",
            CellStatus::Timeout => "timeout",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "pending" => CellStatus::Pending,
            "ok" => CellStatus::Ok,
            "failed" => CellStatus::Failed,
            "timeout" => CellStatus::Timeout,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cell {
    pub status: CellStatus,
    pub value: f64,
}

impl Cell {
    const PENDING: Cell = Cell { status: CellStatus::Pending, value: f64::NAN };

    fn same_bits(&self, other: &Cell) -> bool {
        self.status == other.status && self.value.to_bits() == other.value.to_bits()
    }
}

#[derive(Debug, Clone)]
pub struct ChartGrid {
    pub spec: ChartSpec,
    pub hash: String,
    pub cells: Vec<Cell>,
}

impl ChartGrid {
    pub fn new(spec: ChartSpec) -> Self {
        let hash = spec.config_hash();
        let cells = vec![Cell::PENDING; spec.n_cells()];
        ChartGrid { spec, hash, cells }
    }

    pub fn pending(&self) -> usize {
        self.cells.iter().filter(|c| c.status == CellStatus::Pending).count()
    }

    pub fn is_complete(&self) -> bool {
        self.pending() == 0
    }

    pub fn at(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i + self.spec.axis1.n * j]
    }

    /// Bitwise equality of all cells.
    pub fn same_cells(&self, other: &ChartGrid) -> bool {
        self.cells.len() == other.cells.len() && self.cells.iter().zip(&other.cells).all(|(a, b)| a.same_bits(b))
    }
}

fn timed_out(e: &Error) -> bool {
    matches!(e, Error::Timeout)
}

pub fn run_cell(spec: &ChartSpec, k: usize) -> Cell {
    let mut job = spec.job;
    job.set_deadline(spec.cell_timeout.map(|s| Instant::now() + Duration::from_secs_f64(s)));
    let value = spec.cell_params(k).and_then(|p| match job {
        Job::Lyapunov { cfg, eps, settle } => {
            let s0 = attractor_point(&p, eps, settle, &cfg.integrator)?;
            Ok(lyapunov_spectrum(&p, s0, &cfg)?.l1)
        }
        Job::Kneading { cfg, k_n, skip } => {
            let seq = kneading_sequence(&p, &cfg)?;
            code_of(&seq.extended(skip + k_n), k_n, skip)
        }
        Job::Verdict { cfg } => {
            let cfg = VerdictConfig { rng_seed: cell_seed(spec.seed, k), ..cfg };
            Ok(match verdict(&p, &cfg)?.verdict {
                Verdict::LorenzAttractor => 2.0,
                Verdict::TangencyDetected => 1.0,
                Verdict::NotChaotic => 0.0,
            })
        }
        Job::ShortBeta { cfg } => Ok(short_segment_beta_min(&p, &cfg)?.beta_min),
    });
    match value {
        Ok(v) => Cell { status: CellStatus::Ok, value: v },
        Err(e) if timed_out(&e) => Cell { status: CellStatus::Timeout, value: f64::NAN },
        Err(_) => Cell { status: CellStatus::Failed, value: f64::NAN },
    }
}

const CHECKPOINT_MAGIC: &str = "# lorenz-atlas checkpoint v1";

fn checkpoint_line(k: usize, c: &Cell) -> String {
    format!("{k} {} {:016x}", c.status.as_str(), c.value.to_bits())
}

pub fn write_checkpoint<W: Write>(mut w: W, grid: &ChartGrid) -> Result<()> {
    writeln!(w, "{CHECKPOINT_MAGIC}")?;
    writeln!(w, "# hash {}", grid.hash)?;
    writeln!(w, "# cells {} {}", grid.spec.axis1.n, grid.spec.axis2.n)?;
    for (k, c) in grid.cells.iter().enumerate() {
        if c.status != CellStatus::Pending {
            writeln!(w, "{}", checkpoint_line(k, c))?;
        }
    }
    Ok(())
}

/// Loads finished cells from a checkpoint written for the same spec.
pub fn read_checkpoint(path: &Path, spec: &ChartSpec) -> Result<ChartGrid> {
    let mut grid = ChartGrid::new(spec.clone());
    let reader = BufReader::new(File::open(path)?);
    let mut lines = reader.lines();
    let bad = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if lines.next().transpose()?.as_deref() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    let hash_line = lines.next().transpose()?.ok_or_else(|| bad("missing hash"))?;
    if hash_line.strip_prefix("# hash ") != Some(grid.hash.as_str()) {
        return Err(bad("written for a different configuration"));
    }
    let _dims = lines.next().transpose()?.ok_or_else(|| bad("missing dimensions"))?;
    for line in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        // A torn final line from an interrupted write is ignored.
        let parsed = (f.len() == 3)
            .then(|| Some((f[0].parse::<usize>().ok()?, CellStatus::parse(f[1])?, u64::from_str_radix(f[2], 16).ok()?)))
            .flatten();
        match parsed {
            Some((k, status, bits)) if k < grid.cells.len() && f[2].len() == 16 => {
                grid.cells[k] = Cell { status, value: f64::from_bits(bits) };
            }
            _ => continue,
        }
    }
    Ok(grid)
}

#[derive(Debug, Clone, Default)]
pub struct ScanOptions<'a> {
    pub checkpoint: Option<&'a Path>,
    /// Stop after computing this many cells in this call.
    pub stop_after: Option<usize>,
}

/// Computes every pending cell, resuming from the checkpoint when one exists.
pub fn scan(spec: &ChartSpec, opts: &ScanOptions) -> Result<ChartGrid> {
    spec.validate()?;
    let mut grid = match opts.checkpoint {
        Some(path) if path.exists() => read_checkpoint(path, spec)?,
        _ => ChartGrid::new(spec.clone()),
    };
    let mut sink = match opts.checkpoint {
        Some(path) => {
            let fresh = !path.exists();
            let f = OpenOptions::new().create(true).append(true).open(path)?;
            let mut w = BufWriter::new(f);
            if fresh {
                writeln!(w, "{CHECKPOINT_MAGIC}")?;
                writeln!(w, "# hash {}", grid.hash)?;
                writeln!(w, "# cells {} {}", spec.axis1.n, spec.axis2.n)?;
                w.flush()?;
            }
            Some(w)
        }
        None => None,
    };
    let mut todo: Vec<usize> = (0..grid.cells.len()).filter(|&k| grid.cells[k].status == CellStatus::Pending).collect();
    if let Some(n) = opts.stop_after {
        todo.truncate(n);
    }
    for batch in todo.chunks(spec.batch) {
        let done: Vec<(usize, Cell)> = batch.par_iter().map(|&k| (k, run_cell(spec, k))).collect();
        for (k, c) in done {
            grid.cells[k] = c;
            if let Some(w) = sink.as_mut() {
                writeln!(w, "{}", checkpoint_line(k, &c))?;
            }
        }
        if let Some(w) = sink.as_mut() {
            w.flush()?;
        }
    }
    Ok(grid)
}

pub fn write_grid_csv<W: Write>(mut w: W, grid: &ChartGrid) -> Result<()> {
    writeln!(w, "axis1,axis2,value,status")?;
    for (k, c) in grid.cells.iter().enumerate() {
        let (a, b) = grid.spec.cell_coords(k);
        writeln!(w, "{a},{b},{},{}", c.value, c.status.as_str())?;
    }
    Ok(())
}

/// Named chart configuration. The parameter windows are approximate;
/// thresholds and kneading windows are exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub id: &'static str,
    pub plane: Plane,
    pub axis1: (f64, f64),
    pub axis2: (f64, f64),
    pub resolution: usize,
    pub beta_threshold: f64,
    pub k_n: usize,
    pub skip: usize,
    pub job: JobKind,
    pub approximate: bool,
}

pub const PRESET_IDS: [&str; 7] = ["fig6a", "fig6b", "fig12a", "fig12b", "fig14", "fig16a", "fig16b"];

pub fn preset(id: &str) -> Result<Preset> {
    let base = |id, plane, axis1, axis2, beta_threshold, k_n, skip, job| Preset {
        id,
        plane,
        axis1,
        axis2,
        resolution: 400,
        beta_threshold,
        k_n,
        skip,
        job,
        approximate: true,
    };
    use JobKind::*;
    use Plane::*;
    Ok(match id {
        "fig6a" => base("fig6a", AlphaLambda, (0.2, 1.0), (0.5, 1.3), 0.005, 15, 1, Lyapunov),
        "fig6b" => base("fig6b", AlphaLambda, (0.2, 1.0), (0.5, 1.3), 0.005, 15, 1, Kneading),
        "fig12a" => base("fig12a", AlphaLambda, (0.45, 0.7), (0.55, 0.7), 0.0006, 28, 1, Lyapunov),
        "fig12b" => base("fig12b", AlphaLambda, (0.45, 0.7), (0.55, 0.7), 0.0006, 28, 1, Kneading),
        "fig14" => base("fig14", Rotated, (-0.002, 0.002), (-0.0015, 0.0005), 0.00024, 40, 3, Lyapunov),
        "fig16a" => base("fig16a", Rotated, (-0.0006, 0.0002), (-0.0009, -0.0004), 0.00005, 40, 3, Lyapunov),
        "fig16b" => base("fig16b", Rotated, (-0.0004, 0.0), (-0.0008, -0.0006), 0.00002, 40, 3, Lyapunov),
        _ => return Err(Error::Domain(format!("unknown preset '{id}'"))),
    })
}

impl Preset {
    /// Chart spec at `n x n` cells (the preset resolution when `None`),
    /// optionally with another job.
    pub fn spec(&self, n: Option<usize>, job: Option<JobKind>, seed: u64) -> ChartSpec {
        let n = n.unwrap_or(self.resolution);
        let (n1, n2) = match self.plane {
            Plane::AlphaLambda => ("alpha", "lambda"),
            Plane::Rotated => ("u", "v"),
        };
        ChartSpec {
            axis1: Axis::new(n1, self.axis1.0, self.axis1.1, n),
            axis2: Axis::new(n2, self.axis2.0, self.axis2.1, n),
            plane: self.plane,
            job: Job::default_for(job.unwrap_or(self.job), self.beta_threshold, self.k_n, self.skip),
            preset_id: Some(self.id.to_string()),
            seed,
            cell_timeout: Some(30.0),
            batch: 64,
        }
    }
}
