//! Run orchestration: configuration, chunked work distribution over worker
//! threads, per-worker checkpoints, progress and table emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{report, AccumulatorBank, BankMeta, ManifoldReport, Region, VolumeReport};
use crate::lds::{PointStream, SequenceKind, SequenceSpec, MAX_INDEX};
use crate::linalg::TensorSplit;
use crate::measures::{
    calibrate_flag_constants, simplex_integral, BoundaryPolicy, CalibrationRow, Manifold, MetricKind,
};
use crate::sampling::{SpectrumSampler, StateSampler};
use crate::separability::Classifier;

pub const DEFAULT_CHUNK: u64 = 1_000_000;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    #[default]
    Volume,
    Hyperarea,
    Both,
}

impl Mode {
    pub fn manifolds(self) -> Vec<Manifold> {
        match self {
            Mode::Volume => vec![Manifold::Volume],
            Mode::Hyperarea => vec![Manifold::Hyperarea],
            Mode::Both => vec![Manifold::Volume, Manifold::Hyperarea],
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "volume" => Ok(Mode::Volume),
            "hyperarea" => Ok(Mode::Hyperarea),
            "both" => Ok(Mode::Both),
            _ => Err(Error::Config(format!("unknown mode '{s}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    #[default]
    Table,
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "table" => Ok(OutputFormat::Table),
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            _ => Err(Error::Config(format!("unsupported format '{s}'"))),
        }
    }
}

/// Command-line spelling of a sequence kind.
pub fn parse_sequence(s: &str) -> Result<SequenceKind> {
    match s {
        "gfaure" => Ok(SequenceKind::GeneralizedFaure),
        "halton" => Ok(SequenceKind::Halton),
        "mc" => Ok(SequenceKind::PseudoRandom),
        _ => Err(Error::Config(format!("unknown sequence '{s}' (gfaure, halton, mc)"))),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub n: usize,
    pub mode: Mode,
    pub sequence: SequenceKind,
    /// Scrambling seed (quasi-random) or stream key (pseudo-random).
    pub seed: u64,
    /// Points per manifold, taken from indices `1..=points`.
    pub points: u64,
    pub workers: usize,
    pub metrics: Vec<MetricKind>,
    pub boundary_policy: BoundaryPolicy,
    pub spectrum_sampler: SpectrumSampler,
    /// `None` evaluates the default splits for `n`.
    pub splits: Option<Vec<TensorSplit>>,
    pub chunk_size: u64,
    /// Directory for per-worker checkpoint files, written after every chunk.
    pub checkpoint: Option<PathBuf>,
    pub resume: bool,
    pub out: Option<PathBuf>,
    pub format: OutputFormat,
    /// Also evaluate the small-N quadrature suite and report it.
    pub oracle_run: bool,
    /// Multiplies the flag constants during calibration (test hook).
    pub calibration_perturbation: f64,
    /// Print progress lines to stderr.
    pub progress: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            n: 6,
            mode: Mode::Volume,
            sequence: SequenceKind::GeneralizedFaure,
            seed: 0,
            points: DEFAULT_CHUNK,
            workers: 1,
            metrics: MetricKind::ALL.to_vec(),
            boundary_policy: BoundaryPolicy::Auto,
            spectrum_sampler: SpectrumSampler::Hyperspherical,
            splits: None,
            chunk_size: DEFAULT_CHUNK,
            checkpoint: None,
            resume: false,
            out: None,
            format: OutputFormat::Table,
            oracle_run: false,
            calibration_perturbation: 1.0,
            progress: false,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=6).contains(&self.n) {
            return Err(Error::Config(format!("N = {} outside 2..=6", self.n)));
        }
        if self.points == 0 || self.points >= MAX_INDEX {
            return Err(Error::Config(format!("points = {} outside 1..2^40", self.points)));
        }
        if self.workers == 0 {
            return Err(Error::Config("at least one worker is required".into()));
        }
        if self.chunk_size == 0 {
            return Err(Error::Config("chunk size must be positive".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::Config("empty metric set".into()));
        }
        for (i, k) in self.metrics.iter().enumerate() {
            if self.metrics[..i].contains(k) {
                return Err(Error::Config(format!("metric {k} listed twice")));
            }
        }
        if let BoundaryPolicy::Epsilon { epsilon } = self.boundary_policy {
            if !(epsilon > 0.0 && epsilon < 1.0) {
                return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1)")));
            }
        }
        if self.mode != Mode::Volume && self.boundary_policy == BoundaryPolicy::Limit {
            if let Some(k) = self.metrics.iter().find(|k| !k.finite_at_zero()) {
                return Err(Error::DivergentBoundary(k.name()));
            }
        }
        if self.resume && self.checkpoint.is_none() {
            return Err(Error::Config("--resume needs --checkpoint".into()));
        }
        let splits = self.splits();
        if splits.len() > 2 {
            return Err(Error::Config("at most two splits".into()));
        }
        for s in &splits {
            s.check(self.n)?;
        }
        Ok(())
    }

    pub fn splits(&self) -> Vec<TensorSplit> {
        self.splits.clone().unwrap_or_else(|| TensorSplit::defaults_for(self.n))
    }

    fn sampler(&self, manifold: Manifold) -> Result<StateSampler> {
        Ok(StateSampler::new(self.n, manifold, self.metrics.clone(), self.boundary_policy)?
            .with_spectrum_sampler(self.spectrum_sampler))
    }

    /// The run identity shared by every bank and checkpoint of this run.
    /// Point and worker counts are not part of it, so a run can be extended.
    pub fn meta(&self) -> Result<BankMeta> {
        let mut sequences = BTreeMap::new();
        for m in self.mode.manifolds() {
            let dim = self.sampler(m)?.cube_dimension();
            sequences.insert(m, SequenceSpec::new(self.sequence, dim, self.seed));
        }
        Ok(BankMeta {
            n: self.n,
            metrics: self.metrics.clone(),
            boundary_policy: self.boundary_policy,
            spectrum_sampler: self.spectrum_sampler,
            splits: self.splits(),
            sequences,
        })
    }

    pub fn config_hash(&self) -> Result<String> {
        Ok(self.meta()?.config_hash())
    }
}

/// Quadrature check of the Kubo-Mori/Bures volume ratio.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRatio {
    pub n: usize,
    pub ratio: f64,
    pub conjectured: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub report: VolumeReport,
    pub bank: AccumulatorBank,
    pub calibration: Vec<CalibrationRow>,
    pub oracle: Vec<QuadratureRatio>,
}

pub const ORACLE_ORDER: usize = 200;

/// KM/Bures volume ratios for N = 2, 3 by quadrature.
pub fn quadrature_km_ratios() -> Result<Vec<QuadratureRatio>> {
    let mut out = Vec::new();
    for n in [2usize, 3] {
        let b = simplex_integral(MetricKind::Bures, n, Manifold::Volume, BoundaryPolicy::Limit, ORACLE_ORDER)?;
        let k = simplex_integral(MetricKind::KuboMori, n, Manifold::Volume, BoundaryPolicy::Limit, ORACLE_ORDER)?;
        out.push(QuadratureRatio {
            n,
            ratio: k / b,
            conjectured: crate::measures::conjecture::km_ratio(n),
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Task {
    manifold: Manifold,
    start: u64,
    end: u64,
}

fn worker_file(dir: &Path, worker: usize) -> PathBuf {
    dir.join(format!("worker-{worker}.json"))
}

const BASE_FILE: &str = "base.json";

fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.exists() {
        return Ok(Vec::new());
    }
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    Ok(files)
}

/// Loads and merges every checkpoint file in `dir`, then consolidates them
/// into a single base file so that new worker files can start empty.
fn resume_from(dir: &Path, meta: &BankMeta) -> Result<AccumulatorBank> {
    let hash = meta.config_hash();
    let mut bank = AccumulatorBank::new(meta.clone());
    let files = checkpoint_files(dir)?;
    for f in &files {
        let part = AccumulatorBank::load_for(f, &hash)?;
        bank = bank.merge(&part).map_err(|e| Error::Checkpoint {
            path: f.clone(),
            reason: e.to_string(),
        })?;
    }
    bank.save(&dir.join(BASE_FILE))?;
    for f in &files {
        if f.file_name().is_some_and(|n| n != BASE_FILE) {
            fs::remove_file(f)?;
        }
    }
    Ok(bank)
}

fn plan(config: &RunConfig, done: &AccumulatorBank) -> Vec<Task> {
    let mut tasks = Vec::new();
    for m in config.mode.manifolds() {
        let covered = done.part(m).map(|p| p.covered.clone()).unwrap_or_default();
        let last = config.points + 1;
        let mut start = 1;
        while start < last {
            let end = (start + config.chunk_size).min(last);
            for (a, b) in covered.missing(start, end) {
                tasks.push(Task { manifold: m, start: a, end: b });
            }
            start = end;
        }
    }
    tasks
}

struct Worker {
    meta: BankMeta,
    samplers: BTreeMap<Manifold, StateSampler>,
    classifier: Classifier,
}

impl Worker {
    fn chunk(&self, task: Task) -> Result<AccumulatorBank> {
        let sampler = &self.samplers[&task.manifold];
        let mut stream = PointStream::new(self.meta.sequences[&task.manifold].clone())?;
        stream.skip_to(task.start)?;
        let mut bank = AccumulatorBank::new(self.meta.clone());
        let mut coords = vec![0.0; sampler.cube_dimension()];
        for _ in task.start..task.end {
            let index = stream.next_into(&mut coords)?;
            let sample = sampler.sample(&coords, index)?;
            let flags = self.classifier.classify(sample.rho.matrix())?;
            bank.accumulate(&sample, &flags)?;
        }
        bank.seal_chunk(task.manifold)?;
        Ok(bank)
    }
}

/// Running per-manifold totals for progress lines only.
struct Progress {
    total: u64,
    state: Mutex<BTreeMap<Manifold, (u64, f64)>>,
}

impl Progress {
    fn record(&self, chunk: &AccumulatorBank, task: Task, meta: &BankMeta) {
        let Some(slot) = meta.metrics.iter().position(|&k| k == MetricKind::Bures) else {
            return;
        };
        let Some(trace) = chunk.part(task.manifold).and_then(|p| p.trace.first()) else {
            return;
        };
        let mut state = self.state.lock().unwrap();
        let entry = state.entry(task.manifold).or_insert((0, 0.0));
        entry.0 += task.end - task.start;
        entry.1 += trace.sums[slot];
        let known = crate::measures::analytic_bures_volume(crate::measures::AnalyticParams::complex(
            meta.n,
            task.manifold.rank_deficiency(),
        ))
        .map(|v| v.value)
        .unwrap_or(f64::NAN);
        let c = crate::measures::flag_constant(meta.n, task.manifold);
        eprintln!(
            "[{}] {}/{} points, running bures ratio {:.6}",
            task.manifold,
            entry.0,
            self.total,
            c * entry.1 / entry.0 as f64 / known
        );
    }
}

/// Calibrates, samples every configured manifold over indices `1..=points`
/// and returns the merged report. Output is written when `out` is set.
pub fn run(config: &RunConfig) -> Result<RunOutcome> {
    config.validate()?;
    let calibration = calibrate_flag_constants(config.calibration_perturbation)?;
    let oracle = if config.oracle_run {
        quadrature_km_ratios()?
    } else {
        Vec::new()
    };
    let meta = config.meta()?;

    let base = match &config.checkpoint {
        Some(dir) if config.resume => resume_from(dir, &meta)?,
        Some(dir) => {
            if let Some(existing) = checkpoint_files(dir)?.first() {
                return Err(Error::Checkpoint {
                    path: existing.clone(),
                    reason: "checkpoint directory is not empty; pass --resume or choose another directory".into(),
                });
            }
            fs::create_dir_all(dir)?;
            AccumulatorBank::new(meta.clone())
        }
        None => AccumulatorBank::new(meta.clone()),
    };

    let tasks = plan(config, &base);
    let mut samplers = BTreeMap::new();
    for m in config.mode.manifolds() {
        samplers.insert(m, config.sampler(m)?);
    }
    let worker = Worker {
        meta: meta.clone(),
        samplers,
        classifier: Classifier::new(config.splits()),
    };
    let next = AtomicUsize::new(0);
    let progress = Progress {
        total: config.points,
        state: Mutex::new(BTreeMap::new()),
    };

    let banks: Vec<Result<AccumulatorBank>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.workers)
            .map(|w| {
                let (worker, tasks, next, progress) = (&worker, &tasks, &next, &progress);
                scope.spawn(move || -> Result<AccumulatorBank> {
                    let mut bank = AccumulatorBank::new(worker.meta.clone());
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(&task) = tasks.get(i) else { break };
                        let chunk = worker.chunk(task)?;
                        if config.progress {
                            progress.record(&chunk, task, &worker.meta);
                        }
                        bank = bank.merge(&chunk)?;
                        if let Some(dir) = &config.checkpoint {
                            bank.save(&worker_file(dir, w))?;
                        }
                    }
                    Ok(bank)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });

    let mut bank = base;
    for b in banks {
        bank = bank.merge(&b?)?;
    }
    let report = report(&bank)?;
    if let Some(out) = &config.out {
        fs::write(out, emit_tables(&report, config.format)?)?;
    }
    Ok(RunOutcome {
        report,
        bank,
        calibration,
        oracle,
    })
}

// ---------------------------------------------------------------------------
// Emission

/// A ratio block: a title and the per-(metric, manifold) value.
struct Block {
    title: &'static str,
    value: fn(&crate::estimator::MetricReport) -> Option<f64>,
}

fn blocks(separable: bool) -> Vec<Block> {
    let mut out = vec![
        Block {
            title: "Table 1. Estimates scaled by the known Bures value",
            value: |m| m.ratio_to_known_bures,
        },
        Block {
            title: "Table 2. Estimates scaled by the estimated Bures value",
            value: |m| m.ratio_to_estimated_bures,
        },
    ];
    if separable {
        out.extend([
            Block {
                title: "Table 3. Separable (split A) estimates scaled by the Bures separable estimate",
                value: |m| m.region_ratio(Region::SepA),
            },
            Block {
                title: "Table 4. Separable (split B) estimates scaled by the Bures separable estimate",
                value: |m| m.region_ratio(Region::SepB),
            },
            Block {
                title: "Table 5. Separable under either split",
                value: |m| m.region_ratio(Region::SepEither),
            },
            Block {
                title: "Table 6. Separable under both splits",
                value: |m| m.region_ratio(Region::SepBoth),
            },
            Block {
                title: "Table 7. Pooled (mean of splits A and B)",
                value: |m| m.pooled_ratio,
            },
        ]);
    }
    out
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| format!("{v:.6e}"))
}

fn table(report: &VolumeReport) -> String {
    let mut s = String::new();
    let separable = !report.splits.is_empty();
    let splits: Vec<String> = report.splits.iter().map(|x| x.to_string()).collect();
    let _ = writeln!(s, "N = {}", report.n);
    let _ = writeln!(s, "boundary policy: {}", report.boundary_policy);
    let _ = writeln!(s, "spectrum sampler: {:?}", report.spectrum_sampler);
    if separable {
        let _ = writeln!(s, "splits: A = {}", splits.join(", B = "));
    }
    let _ = writeln!(s, "config hash: {}", report.config_hash);
    for mr in &report.manifolds {
        let _ = writeln!(
            s,
            "{}: {} points, {:?}, flag constant {:.10e}, known Bures {:.10e}",
            mr.manifold, mr.samples, mr.sequence, mr.flag_constant, mr.known_bures
        );
    }

    let _ = writeln!(s, "\nAbsolute estimates");
    for mr in &report.manifolds {
        let _ = writeln!(s, "  {}", mr.manifold);
        for m in &mr.metrics {
            let Some(total) = m.region(Region::Total) else { continue };
            let se = total.std_error.map_or(String::new(), |e| format!(" ± {e:.3e}"));
            let _ = writeln!(s, "    {:<14} {:.6e}{se}", m.metric.name(), total.estimate);
        }
    }

    let header: Vec<String> = report.manifolds.iter().map(|m| m.manifold.name().to_string()).collect();
    for block in blocks(separable) {
        let _ = writeln!(s, "\n{}", block.title);
        let _ = writeln!(s, "  {:<14} {}", "metric", header.iter().map(|h| format!("{h:>14}")).collect::<String>());
        for kind in report.manifolds.first().map(|m| m.metrics.iter().map(|x| x.metric).collect::<Vec<_>>()).unwrap_or_default() {
            let cells: String = report
                .manifolds
                .iter()
                .map(|mr| format!("{:>14}", fmt_opt(mr.metric(kind).and_then(block.value))))
                .collect();
            let _ = writeln!(s, "  {:<14} {cells}", kind.name());
        }
    }

    if separable {
        let _ = writeln!(s, "\nSeparability probabilities (pooled; split A, split B, either, both)");
        for mr in &report.manifolds {
            let _ = writeln!(s, "  {}", mr.manifold);
            for m in &mr.metrics {
                let regions: Vec<String> = Region::ALL[1..].iter().map(|r| fmt_opt(m.probability(*r))).collect();
                let _ = writeln!(s, "    {:<14} {}  ({})", m.metric.name(), fmt_opt(m.pooled_probability), regions.join(", "));
            }
            if let Some(b) = mr.metric(MetricKind::Bures) {
                let raw: Vec<String> = b
                    .regions
                    .iter()
                    .skip(1)
                    .map(|r| format!("{} {:.4}%", r.region.name(), 100.0 * r.raw_fraction))
                    .collect();
                let _ = writeln!(s, "    raw pass fractions: {}", raw.join(", "));
            }
        }
    }

    for mr in report.manifolds.iter().filter(|m| m.sequence.is_quasi_random()) {
        print_convergence(&mut s, mr);
    }

    let _ = writeln!(s, "\nClosed-form Bures values");
    for a in &report.analytic {
        let _ = writeln!(
            s,
            "  N={} n={} dim={:<3} ln {:.12} value {:.12e}",
            a.n, a.rank_deficiency, a.dimension, a.ln_value, a.value
        );
    }
    let _ = writeln!(s, "\nConjecture diagnostics");
    for c in &report.conjectures {
        let ratio = c.estimate.map(|e| e / c.conjectured);
        let _ = writeln!(
            s,
            "  {:<34} estimate {:>14} conjectured {:.6e} ratio {}",
            c.name,
            fmt_opt(c.estimate),
            c.conjectured,
            fmt_opt(ratio)
        );
    }
    if !report.warnings.is_empty() {
        let _ = writeln!(s, "\nWarnings");
        for w in &report.warnings {
            let _ = writeln!(s, "  {w}");
        }
    }
    s
}

fn print_convergence(s: &mut String, mr: &ManifoldReport) {
    let _ = writeln!(s, "\nConvergence of the {} Bures ratio (quasi-random; no error bars)", mr.manifold);
    for p in &mr.convergence {
        let _ = writeln!(s, "  {:>12} {:.8}", p.points, p.bures_ratio);
    }
    if let Some(d) = mr.sequential_difference {
        let _ = writeln!(s, "  last sequential difference {d:.3e}");
    }
}

fn csv(report: &VolumeReport) -> String {
    let blocks = blocks(!report.splits.is_empty());
    let mut s = String::from("key");
    for i in 1..=blocks.len() {
        let _ = write!(s, ",table{i}");
    }
    s.push('\n');
    for mr in &report.manifolds {
        for m in &mr.metrics {
            let _ = write!(s, "{}/{}", m.metric.name(), mr.manifold.name());
            for b in &blocks {
                let _ = write!(s, ",{}", (b.value)(m).map_or(String::new(), |v| format!("{v:e}")));
            }
            s.push('\n');
        }
    }
    s
}

/// Renders the report; JSON round-trips to an identical [`VolumeReport`].
pub fn emit_tables(report: &VolumeReport, format: OutputFormat) -> Result<String> {
    Ok(match format {
        OutputFormat::Table => table(report),
        OutputFormat::Csv => csv(report),
        OutputFormat::Json => serde_json::to_string_pretty(report)?,
    })
}
