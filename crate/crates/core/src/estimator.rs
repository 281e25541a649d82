//! Mergeable accumulation of weighted, separability-gated sums, checkpoint
//! persistence and the volume report.
//!
//! Sums are kept exactly (see [`ExactSum`]), so merging is associative and
//! commutative bit for bit: any partition of the index range, merged in any
//! order, reproduces the single-stream bank.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::lds::{SequenceKind, SequenceSpec};
use crate::linalg::TensorSplit;
use crate::measures::{
    analytic_bures_volume, conjecture, flag_constant, AnalyticParams, BoundaryPolicy, Manifold, MetricKind,
};
use crate::sampling::{SpectrumSampler, StateSample};
use crate::separability::SeparabilityFlags;

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const BIN_BITS: u32 = 32;
const BIN_COUNT: usize = 68;
/// Bin k holds multiples of 2^(32k - 1074).
const BIN_EXP_OFFSET: i32 = 1074;
/// Additions allowed between carry propagations.
const CARRY_INTERVAL: u32 = 1 << 30;

/// Exact sum of finite doubles in a fixed-point superaccumulator.
///
/// Each double is split into at most three signed 32-bit limbs; 64-bit bins
/// absorb 2^30 additions before carries are propagated. The rounded value
/// is a pure function of the exact sum.
#[derive(Clone, Debug)]
pub struct ExactSum {
    bins: [i64; BIN_COUNT],
    pending: u32,
}

impl Default for ExactSum {
    fn default() -> Self {
        Self {
            bins: [0; BIN_COUNT],
            pending: 0,
        }
    }
}

impl PartialEq for ExactSum {
    fn eq(&self, other: &Self) -> bool {
        self.normalized().bins == other.normalized().bins
    }
}

impl ExactSum {
    pub fn add(&mut self, x: f64) {
        assert!(x.is_finite(), "non-finite value {x} added to an exact sum");
        if x == 0.0 {
            return;
        }
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp_field = ((bits >> 52) & 0x7ff) as i32;
        let frac = bits & ((1u64 << 52) - 1);
        // x = mant · 2^(shift - 1074)
        let (mant, shift) = if exp_field == 0 {
            (frac, 0)
        } else {
            (frac | (1u64 << 52), exp_field - 1)
        };
        let k0 = (shift as u32 / BIN_BITS) as usize;
        let wide = (mant as u128) << (shift as u32 % BIN_BITS);
        for (i, bin) in self.bins[k0..k0 + 3].iter_mut().enumerate() {
            let limb = ((wide >> (BIN_BITS as usize * i)) & 0xffff_ffff) as i64;
            if negative {
                *bin -= limb;
            } else {
                *bin += limb;
            }
        }
        self.pending += 1;
        if self.pending >= CARRY_INTERVAL {
            self.propagate();
        }
    }

    pub fn merge(&mut self, other: &ExactSum) {
        self.propagate();
        let o = other.normalized();
        for (a, b) in self.bins.iter_mut().zip(o.bins.iter()) {
            *a += *b;
        }
        self.propagate();
    }

    fn propagate(&mut self) {
        for k in 0..BIN_COUNT - 1 {
            let carry = self.bins[k] >> BIN_BITS;
            self.bins[k] -= carry << BIN_BITS;
            self.bins[k + 1] += carry;
        }
        self.pending = 0;
    }

    fn normalized(&self) -> ExactSum {
        let mut s = self.clone();
        s.propagate();
        s
    }

    fn negated(&self) -> ExactSum {
        let mut s = self.clone();
        s.bins.iter_mut().for_each(|b| *b = -*b);
        s.propagate();
        s
    }

    /// The exact sum rounded to a double.
    pub fn value(&self) -> f64 {
        let s = self.normalized();
        if s.bins[BIN_COUNT - 1] < 0 {
            return -s.negated().value();
        }
        let Some(top) = s.bins.iter().rposition(|&b| b != 0) else {
            return 0.0;
        };
        let low = top.saturating_sub(2);
        let mut head: u128 = 0;
        for k in (low..=top).rev() {
            head = (head << BIN_BITS) | s.bins[k] as u128;
        }
        // Sticky bit for the discarded limbs keeps the rounding exact.
        if s.bins[..low].iter().any(|&b| b != 0) {
            head |= 1;
        }
        let exp = (BIN_BITS as i32) * low as i32 - BIN_EXP_OFFSET;
        let half = exp / 2;
        head as f64 * 2f64.powi(half) * 2f64.powi(exp - half)
    }

    /// Normalized nonzero bins, the lossless serialized form.
    fn limbs(&self) -> Vec<(u16, i64)> {
        let s = self.normalized();
        s.bins
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0)
            .map(|(k, &b)| (k as u16, b))
            .collect()
    }

    fn from_limbs(limbs: &[(u16, i64)]) -> Result<Self> {
        let mut s = ExactSum::default();
        for &(k, b) in limbs {
            let slot = s
                .bins
                .get_mut(k as usize)
                .ok_or_else(|| Error::Mismatch(format!("limb index {k} out of range")))?;
            *slot = b;
        }
        Ok(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Region {
    Total,
    SepA,
    SepB,
    SepEither,
    SepBoth,
}

impl Region {
    pub const ALL: [Region; 5] = [Region::Total, Region::SepA, Region::SepB, Region::SepEither, Region::SepBoth];

    pub fn name(self) -> &'static str {
        match self {
            Region::Total => "total",
            Region::SepA => "sep-a",
            Region::SepB => "sep-b",
            Region::SepEither => "sep-either",
            Region::SepBoth => "sep-both",
        }
    }

    pub fn contains(self, flags: &SeparabilityFlags) -> bool {
        match self {
            Region::Total => true,
            Region::SepA => flags.pass_a,
            Region::SepB => flags.pass_b,
            Region::SepEither => flags.either(),
            Region::SepBoth => flags.both(),
        }
    }

    fn from_name(s: &str) -> Option<Region> {
        Region::ALL.into_iter().find(|r| r.name() == s)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Cell {
    pub passes: u64,
    pub sum_w: ExactSum,
    pub sum_w2: ExactSum,
}

impl Cell {
    fn merge(&mut self, other: &Cell) {
        self.passes += other.passes;
        self.sum_w.merge(&other.sum_w);
        self.sum_w2.merge(&other.sum_w2);
    }
}

/// Per-chunk total sums, one per metric, for convergence diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkTrace {
    pub start: u64,
    pub end: u64,
    pub sums: Vec<f64>,
}

/// Sorted, disjoint, coalesced half-open index ranges.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RangeSet(Vec<(u64, u64)>);

impl RangeSet {
    pub fn ranges(&self) -> &[(u64, u64)] {
        &self.0
    }

    pub fn len(&self) -> u64 {
        self.0.iter().map(|(a, b)| b - a).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn overlaps(&self, other: &RangeSet) -> bool {
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() && j < other.0.len() {
            let (a0, a1) = self.0[i];
            let (b0, b1) = other.0[j];
            if a0 < b1 && b0 < a1 {
                return true;
            }
            if a1 <= b1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        false
    }

    pub fn insert(&mut self, start: u64, end: u64) {
        if start >= end {
            return;
        }
        if let Some(last) = self.0.last_mut() {
            if last.1 == start {
                last.1 = end;
                return;
            }
        }
        self.0.push((start, end));
        self.0.sort_unstable();
        let mut merged: Vec<(u64, u64)> = Vec::with_capacity(self.0.len());
        for &(a, b) in &self.0 {
            match merged.last_mut() {
                Some(last) if a <= last.1 => last.1 = last.1.max(b),
                _ => merged.push((a, b)),
            }
        }
        self.0 = merged;
    }

    fn union(&mut self, other: &RangeSet) {
        for &(a, b) in &other.0 {
            self.insert(a, b);
        }
    }

    /// Parts of `[start, end)` not yet covered.
    pub fn missing(&self, start: u64, end: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        let mut cursor = start;
        for &(a, b) in &self.0 {
            if b <= cursor {
                continue;
            }
            if a >= end {
                break;
            }
            if a > cursor {
                out.push((cursor, a.min(end)));
            }
            cursor = cursor.max(b);
        }
        if cursor < end {
            out.push((cursor, end));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifoldPart {
    pub sequence: SequenceSpec,
    pub samples: u64,
    pub covered: RangeSet,
    /// `metrics.len() × 5` cells, metric-major.
    pub cells: Vec<Cell>,
    pub trace: Vec<ChunkTrace>,
}

impl ManifoldPart {
    fn new(sequence: SequenceSpec, metrics: usize) -> Self {
        Self {
            sequence,
            samples: 0,
            covered: RangeSet::default(),
            cells: vec![Cell::default(); metrics * Region::ALL.len()],
            trace: Vec::new(),
        }
    }
}

/// Identity of a run: everything that must agree for banks to merge.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankMeta {
    pub n: usize,
    pub metrics: Vec<MetricKind>,
    pub boundary_policy: BoundaryPolicy,
    pub spectrum_sampler: SpectrumSampler,
    pub splits: Vec<TensorSplit>,
    pub sequences: BTreeMap<Manifold, SequenceSpec>,
}

impl BankMeta {
    /// SHA-256 of the canonical (key-sorted) JSON form.
    pub fn config_hash(&self) -> String {
        let value = serde_json::to_value(self).expect("metadata serializes");
        let canonical = serde_json::to_string(&value).expect("value serializes");
        hex::encode(Sha256::digest(canonical.as_bytes()))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccumulatorBank {
    meta: BankMeta,
    parts: BTreeMap<Manifold, ManifoldPart>,
}

impl AccumulatorBank {
    pub fn new(meta: BankMeta) -> Self {
        let parts = meta
            .sequences
            .iter()
            .map(|(m, seq)| (*m, ManifoldPart::new(seq.clone(), meta.metrics.len())))
            .collect();
        Self { meta, parts }
    }

    pub fn meta(&self) -> &BankMeta {
        &self.meta
    }

    pub fn part(&self, manifold: Manifold) -> Option<&ManifoldPart> {
        self.parts.get(&manifold)
    }

    pub fn parts(&self) -> impl Iterator<Item = (&Manifold, &ManifoldPart)> {
        self.parts.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.parts.values().all(|p| p.samples == 0)
    }

    fn metric_slot(&self, kind: MetricKind) -> Option<usize> {
        self.meta.metrics.iter().position(|&k| k == kind)
    }

    pub fn cell(&self, kind: MetricKind, region: Region, manifold: Manifold) -> Option<&Cell> {
        let slot = self.metric_slot(kind)?;
        let r = Region::ALL.iter().position(|&x| x == region)?;
        self.parts.get(&manifold).map(|p| &p.cells[slot * Region::ALL.len() + r])
    }

    pub fn accumulate(&mut self, sample: &StateSample, flags: &SeparabilityFlags) -> Result<()> {
        let manifold = sample.weights.manifold;
        let metrics = &self.meta.metrics;
        let part = self
            .parts
            .get_mut(&manifold)
            .ok_or_else(|| Error::Mismatch(format!("bank has no {manifold} accumulator")))?;
        if sample.weights.weights.len() != metrics.len()
            || sample.weights.weights.iter().zip(metrics).any(|((k, _), m)| k != m)
        {
            return Err(Error::Mismatch("sample metric set differs from the bank's".into()));
        }
        let regions = Region::ALL.map(|r| r.contains(flags));
        for (slot, (_, w)) in sample.weights.weights.iter().enumerate() {
            let w2 = w * w;
            let cells = &mut part.cells[slot * Region::ALL.len()..(slot + 1) * Region::ALL.len()];
            for (cell, &hit) in cells.iter_mut().zip(regions.iter()) {
                if hit {
                    cell.passes += 1;
                    cell.sum_w.add(*w);
                    cell.sum_w2.add(w2);
                }
            }
        }
        part.samples += 1;
        part.covered.insert(sample.index, sample.index + 1);
        Ok(())
    }

    /// Records the per-metric totals of this bank as one trace chunk; the
    /// bank must cover a single contiguous range.
    pub fn seal_chunk(&mut self, manifold: Manifold) -> Result<()> {
        let part = self
            .parts
            .get_mut(&manifold)
            .ok_or_else(|| Error::Mismatch(format!("bank has no {manifold} accumulator")))?;
        let &[(start, end)] = part.covered.ranges() else {
            return Err(Error::Mismatch("a sealed chunk must cover one contiguous range".into()));
        };
        let sums = part
            .cells
            .chunks(Region::ALL.len())
            .map(|c| c[0].sum_w.value())
            .collect();
        part.trace = vec![ChunkTrace { start, end, sums }];
        Ok(())
    }

    pub fn merge(mut self, other: &AccumulatorBank) -> Result<AccumulatorBank> {
        if self.meta != other.meta {
            return Err(Error::Mismatch("bank metadata differs".into()));
        }
        for (m, theirs) in &other.parts {
            let ours = self.parts.get_mut(m).expect("same metadata implies same manifolds");
            if ours.covered.overlaps(&theirs.covered) {
                return Err(Error::Overlap(format!("{m} index ranges intersect")));
            }
            ours.samples += theirs.samples;
            ours.covered.union(&theirs.covered);
            for (a, b) in ours.cells.iter_mut().zip(&theirs.cells) {
                a.merge(b);
            }
            ours.trace.extend(theirs.trace.iter().cloned());
            ours.trace.sort_by_key(|t| t.start);
        }
        Ok(self)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = CheckpointFile::from_bank(self);
        let text = serde_json::to_string_pretty(&file)?;
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, text)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    /// Loads a checkpoint, verifying its format version and that its stored
    /// configuration hash matches its metadata.
    pub fn load(path: &Path) -> Result<AccumulatorBank> {
        let fail = |reason: String| Error::Checkpoint {
            path: path.to_path_buf(),
            reason,
        };
        let text = fs::read_to_string(path).map_err(|e| fail(e.to_string()))?;
        let file: CheckpointFile = serde_json::from_str(&text).map_err(|e| fail(format!("corrupt file: {e}")))?;
        if file.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(fail(format!(
                "format version {} (expected {CHECKPOINT_FORMAT_VERSION})",
                file.format_version
            )));
        }
        let hash = file.meta.config_hash();
        if file.config_hash != hash {
            return Err(fail(format!("configuration hash {} does not match metadata ({hash})", file.config_hash)));
        }
        file.into_bank().map_err(|e| fail(e.to_string()))
    }

    /// [`load`](Self::load), additionally requiring a specific configuration.
    pub fn load_for(path: &Path, config_hash: &str) -> Result<AccumulatorBank> {
        let bank = Self::load(path)?;
        if bank.meta.config_hash() != config_hash {
            return Err(Error::Checkpoint {
                path: path.to_path_buf(),
                reason: "checkpoint belongs to a different configuration".into(),
            });
        }
        Ok(bank)
    }
}

fn hex_f64(x: f64) -> String {
    format!("{:016x}", x.to_bits())
}

fn parse_hex_f64(s: &str) -> Result<f64> {
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|e| Error::Mismatch(format!("bad hex double '{s}': {e}")))
}

#[derive(Serialize, Deserialize)]
struct SumRecord {
    /// Rounded value, IEEE-754 bits in hex (informational).
    value: String,
    /// Exact state: `[bin, limb]` pairs, bin k weighing 2^(32k-1074).
    limbs: Vec<(u16, i64)>,
}

impl SumRecord {
    fn from_sum(s: &ExactSum) -> Self {
        Self {
            value: hex_f64(s.value()),
            limbs: s.limbs(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct CellRecord {
    key: String,
    passes: u64,
    sum_w: SumRecord,
    sum_w2: SumRecord,
}

#[derive(Serialize, Deserialize)]
struct TraceRecord {
    start: u64,
    end: u64,
    sums: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct PartRecord {
    samples: u64,
    covered: RangeSet,
    trace: Vec<TraceRecord>,
}

/// On-disk checkpoint: metadata block plus a flat cell array keyed
/// `metric/region/manifold`.
#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format_version: u32,
    config_hash: String,
    meta: BankMeta,
    parts: BTreeMap<Manifold, PartRecord>,
    cells: Vec<CellRecord>,
}

impl CheckpointFile {
    fn from_bank(bank: &AccumulatorBank) -> Self {
        let mut cells = Vec::new();
        let mut parts = BTreeMap::new();
        for (m, part) in &bank.parts {
            for (slot, kind) in bank.meta.metrics.iter().enumerate() {
                for (r, region) in Region::ALL.iter().enumerate() {
                    let cell = &part.cells[slot * Region::ALL.len() + r];
                    cells.push(CellRecord {
                        key: format!("{}/{}/{}", kind.name(), region.name(), m.name()),
                        passes: cell.passes,
                        sum_w: SumRecord::from_sum(&cell.sum_w),
                        sum_w2: SumRecord::from_sum(&cell.sum_w2),
                    });
                }
            }
            parts.insert(
                *m,
                PartRecord {
                    samples: part.samples,
                    covered: part.covered.clone(),
                    trace: part
                        .trace
                        .iter()
                        .map(|t| TraceRecord {
                            start: t.start,
                            end: t.end,
                            sums: t.sums.iter().map(|x| hex_f64(*x)).collect(),
                        })
                        .collect(),
                },
            );
        }
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config_hash: bank.meta.config_hash(),
            meta: bank.meta.clone(),
            parts,
            cells,
        }
    }

    fn into_bank(self) -> Result<AccumulatorBank> {
        let mut bank = AccumulatorBank::new(self.meta);
        for (m, rec) in self.parts {
            let part = bank
                .parts
                .get_mut(&m)
                .ok_or_else(|| Error::Mismatch(format!("{m} part without a sequence")))?;
            part.samples = rec.samples;
            part.covered = rec.covered;
            part.trace = rec
                .trace
                .into_iter()
                .map(|t| {
                    Ok(ChunkTrace {
                        start: t.start,
                        end: t.end,
                        sums: t.sums.iter().map(|s| parse_hex_f64(s)).collect::<Result<_>>()?,
                    })
                })
                .collect::<Result<_>>()?;
        }
        for rec in self.cells {
            let mut it = rec.key.split('/');
            let (Some(k), Some(r), Some(m), None) = (it.next(), it.next(), it.next(), it.next()) else {
                return Err(Error::Mismatch(format!("bad cell key '{}'", rec.key)));
            };
            let kind: MetricKind = k.parse()?;
            let region = Region::from_name(r).ok_or_else(|| Error::Mismatch(format!("bad region '{r}'")))?;
            let manifold = match m {
                "volume" => Manifold::Volume,
                "hyperarea" => Manifold::Hyperarea,
                _ => return Err(Error::Mismatch(format!("bad manifold '{m}'"))),
            };
            let slot = bank
                .metric_slot(kind)
                .ok_or_else(|| Error::Mismatch(format!("metric {kind} not in metadata")))?;
            let ri = Region::ALL.iter().position(|&x| x == region).unwrap();
            let part = bank
                .parts
                .get_mut(&manifold)
                .ok_or_else(|| Error::Mismatch(format!("cell for absent manifold {m}")))?;
            part.cells[slot * Region::ALL.len() + ri] = Cell {
                passes: rec.passes,
                sum_w: ExactSum::from_limbs(&rec.sum_w.limbs)?,
                sum_w2: ExactSum::from_limbs(&rec.sum_w2.limbs)?,
            };
        }
        Ok(bank)
    }
}

pub fn checkpoint_save(bank: &AccumulatorBank, path: &Path) -> Result<()> {
    bank.save(path)
}

pub fn checkpoint_load(path: &Path) -> Result<AccumulatorBank> {
    AccumulatorBank::load(path)
}

// ---------------------------------------------------------------------------
// Report

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionEstimate {
    pub region: Region,
    /// Flag constant × Σw / samples.
    pub estimate: f64,
    /// Plain Monte Carlo standard error (pseudo-random streams only).
    pub std_error: Option<f64>,
    pub passes: u64,
    /// Fraction of samples in the region.
    pub raw_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: MetricKind,
    pub regions: Vec<RegionEstimate>,
    /// Mean of the two split estimates.
    pub pooled: Option<f64>,
    /// Total estimate over the closed-form Bures value.
    pub ratio_to_known_bures: Option<f64>,
    /// Total estimate over the estimated Bures value.
    pub ratio_to_estimated_bures: Option<f64>,
    /// Region estimate over the Bures estimate of the same region.
    pub region_ratios: Vec<(Region, Option<f64>)>,
    pub pooled_ratio: Option<f64>,
    /// Separable over total, per separable region.
    pub probabilities: Vec<(Region, Option<f64>)>,
    pub pooled_probability: Option<f64>,
}

impl MetricReport {
    pub fn region(&self, region: Region) -> Option<&RegionEstimate> {
        self.regions.iter().find(|r| r.region == region)
    }

    pub fn estimate(&self, region: Region) -> Option<f64> {
        self.region(region).map(|r| r.estimate)
    }

    pub fn region_ratio(&self, region: Region) -> Option<f64> {
        self.region_ratios.iter().find(|(r, _)| *r == region).and_then(|(_, v)| *v)
    }

    pub fn probability(&self, region: Region) -> Option<f64> {
        self.probabilities.iter().find(|(r, _)| *r == region).and_then(|(_, v)| *v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    pub points: u64,
    pub bures_ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldReport {
    pub manifold: Manifold,
    pub sequence: SequenceKind,
    pub samples: u64,
    pub flag_constant: f64,
    pub known_bures: f64,
    pub metrics: Vec<MetricReport>,
    /// Cumulative Bures/known ratio after each chunk in index order.
    pub convergence: Vec<ConvergencePoint>,
    /// |last - previous| of the cumulative Bures ratio.
    pub sequential_difference: Option<f64>,
}

impl ManifoldReport {
    pub fn metric(&self, kind: MetricKind) -> Option<&MetricReport> {
        self.metrics.iter().find(|m| m.metric == kind)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticRow {
    pub n: usize,
    pub rank_deficiency: usize,
    pub dimension: usize,
    pub ln_value: f64,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConjectureRow {
    pub name: String,
    pub estimate: Option<f64>,
    pub conjectured: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeReport {
    pub n: usize,
    pub boundary_policy: BoundaryPolicy,
    pub spectrum_sampler: SpectrumSampler,
    pub splits: Vec<TensorSplit>,
    pub config_hash: String,
    pub manifolds: Vec<ManifoldReport>,
    pub analytic: Vec<AnalyticRow>,
    pub conjectures: Vec<ConjectureRow>,
    pub warnings: Vec<String>,
}

impl VolumeReport {
    pub fn manifold(&self, m: Manifold) -> Option<&ManifoldReport> {
        self.manifolds.iter().find(|r| r.manifold == m)
    }
}

fn ratio(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(a), Some(b)) if b != 0.0 && a.is_finite() && b.is_finite() => Some(a / b),
        _ => None,
    }
}

fn manifold_report(bank: &AccumulatorBank, manifold: Manifold, part: &ManifoldPart) -> Result<ManifoldReport> {
    let n = bank.meta.n;
    let c = flag_constant(n, manifold);
    let known = analytic_bures_volume(AnalyticParams::complex(n, manifold.rank_deficiency()))?.value;
    let samples = part.samples as f64;
    let pseudo = part.sequence.kind == SequenceKind::PseudoRandom;
    let separable = !bank.meta.splits.is_empty();
    let mut metrics = Vec::new();
    for (slot, &kind) in bank.meta.metrics.iter().enumerate() {
        let mut regions = Vec::new();
        for (r, &region) in Region::ALL.iter().enumerate() {
            if region != Region::Total && !separable {
                continue;
            }
            let cell = &part.cells[slot * Region::ALL.len() + r];
            let mean = cell.sum_w.value() / samples;
            let std_error = (pseudo && part.samples > 1).then(|| {
                let var = (cell.sum_w2.value() / samples - mean * mean).max(0.0) * samples / (samples - 1.0);
                c * (var / samples).sqrt()
            });
            regions.push(RegionEstimate {
                region,
                estimate: c * mean,
                std_error,
                passes: cell.passes,
                raw_fraction: cell.passes as f64 / samples,
            });
        }
        let get = |r: Region| regions.iter().find(|e| e.region == r).map(|e| e.estimate);
        let pooled = match (get(Region::SepA), get(Region::SepB)) {
            (Some(a), Some(b)) => Some(0.5 * (a + b)),
            _ => None,
        };
        metrics.push(MetricReport {
            metric: kind,
            pooled,
            regions,
            ratio_to_known_bures: None,
            ratio_to_estimated_bures: None,
            region_ratios: Vec::new(),
            pooled_ratio: None,
            probabilities: Vec::new(),
            pooled_probability: None,
        });
    }
    let bures = metrics.iter().find(|m| m.metric == MetricKind::Bures).cloned();
    for m in metrics.iter_mut() {
        let total = m.estimate(Region::Total);
        m.ratio_to_known_bures = ratio(total, Some(known));
        m.ratio_to_estimated_bures = ratio(total, bures.as_ref().and_then(|b| b.estimate(Region::Total)));
        if separable {
            for region in &Region::ALL[1..] {
                let own = m.estimate(*region);
                m.region_ratios
                    .push((*region, ratio(own, bures.as_ref().and_then(|b| b.estimate(*region)))));
                m.probabilities.push((*region, ratio(own, total)));
            }
            m.pooled_ratio = ratio(m.pooled, bures.as_ref().and_then(|b| b.pooled));
            m.pooled_probability = ratio(m.pooled, total);
        }
    }
    let bures_slot = bank.meta.metrics.iter().position(|&k| k == MetricKind::Bures);
    let mut convergence = Vec::new();
    if let Some(slot) = bures_slot {
        let mut points = 0u64;
        let mut sum = 0.0;
        for t in &part.trace {
            points += t.end - t.start;
            sum += t.sums[slot];
            convergence.push(ConvergencePoint {
                points,
                bures_ratio: c * sum / points as f64 / known,
            });
        }
    }
    let sequential_difference = match convergence.as_slice() {
        [.., a, b] => Some((b.bures_ratio - a.bures_ratio).abs()),
        _ => None,
    };
    Ok(ManifoldReport {
        manifold,
        sequence: part.sequence.kind,
        samples: part.samples,
        flag_constant: c,
        known_bures: known,
        metrics,
        convergence,
        sequential_difference,
    })
}

fn conjectures(n: usize, manifolds: &[ManifoldReport]) -> Vec<ConjectureRow> {
    let mut rows = Vec::new();
    let Some(vol) = manifolds.iter().find(|m| m.manifold == Manifold::Volume) else {
        return rows;
    };
    let total = |k: MetricKind| vol.metric(k).and_then(|m| m.estimate(Region::Total));
    let bures = total(MetricKind::Bures);
    rows.push(ConjectureRow {
        name: "kubo-mori/bures volume ratio".into(),
        estimate: ratio(total(MetricKind::KuboMori), bures),
        conjectured: conjecture::km_ratio(n),
    });
    let dim = Manifold::Volume.dimension(n);
    let sd_scale = conjecture::rescale(conjecture::SD_SCALE, dim);
    // The SD volume is a hyper-hemisphere of radius 1: Bures closed form × 2^dim.
    rows.push(ConjectureRow {
        name: "SD volume (4 × Bures)".into(),
        estimate: bures.map(|b| b * sd_scale),
        conjectured: vol.known_bures * sd_scale,
    });
    if n == 4 {
        let pooled = |k: MetricKind| vol.metric(k).and_then(|m| m.pooled);
        rows.push(ConjectureRow {
            name: "separable SD volume vs σ_Ag/3".into(),
            estimate: pooled(MetricKind::Bures).map(|b| b * sd_scale),
            conjectured: conjecture::SILVER_MEAN / 3.0,
        });
        rows.push(ConjectureRow {
            name: "separable 4×KM volume vs 10σ_Ag".into(),
            estimate: pooled(MetricKind::KuboMori).map(|b| b * sd_scale),
            conjectured: 10.0 * conjecture::SILVER_MEAN,
        });
    }
    rows
}

/// Builds the full report from a bank.
pub fn report(bank: &AccumulatorBank) -> Result<VolumeReport> {
    if bank.is_empty() {
        return Err(Error::Empty);
    }
    let n = bank.meta.n;
    let mut manifolds = Vec::new();
    for (m, part) in &bank.parts {
        if part.samples > 0 {
            manifolds.push(manifold_report(bank, *m, part)?);
        }
    }
    let mut analytic = Vec::new();
    for k in [0, 1, n - 1] {
        if analytic.iter().any(|r: &AnalyticRow| r.rank_deficiency == k) {
            continue;
        }
        let p = AnalyticParams::complex(n, k);
        let v = analytic_bures_volume(p)?;
        analytic.push(AnalyticRow {
            n,
            rank_deficiency: k,
            dimension: p.dimension(),
            ln_value: v.ln_value,
            value: v.value,
        });
    }
    let mut warnings = Vec::new();
    if !bank.meta.splits.is_empty() {
        for mr in &manifolds {
            let Some(b) = mr.metric(MetricKind::Bures).and_then(|m| m.pooled_probability) else {
                continue;
            };
            for m in &mr.metrics {
                if let Some(p) = m.pooled_probability {
                    if m.metric != MetricKind::Bures && p > b {
                        warnings.push(format!(
                            "{}: {} separability probability {p:.4e} exceeds Bures {b:.4e}",
                            mr.manifold, m.metric
                        ));
                    }
                }
            }
        }
    }
    Ok(VolumeReport {
        n,
        boundary_policy: bank.meta.boundary_policy,
        spectrum_sampler: bank.meta.spectrum_sampler,
        splits: bank.meta.splits.clone(),
        config_hash: bank.meta.config_hash(),
        conjectures: conjectures(n, &manifolds),
        manifolds,
        analytic,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lds::{PointStream, SequenceKind};
    use crate::sampling::StateSampler;
    use crate::separability::Classifier;
    use proptest::prelude::*;

    fn meta(n: usize, kind: SequenceKind) -> BankMeta {
        let mut sequences = BTreeMap::new();
        for m in [Manifold::Volume, Manifold::Hyperarea] {
            let sampler = StateSampler::new(n, m, vec![], BoundaryPolicy::Auto).unwrap();
            sequences.insert(m, SequenceSpec::new(kind, sampler.cube_dimension(), 9));
        }
        BankMeta {
            n,
            metrics: MetricKind::ALL.to_vec(),
            boundary_policy: BoundaryPolicy::Auto,
            spectrum_sampler: SpectrumSampler::Hyperspherical,
            splits: TensorSplit::defaults_for(n),
            sequences,
        }
    }

    /// Fills a bank over `[start, end)` of one manifold's stream.
    fn fill(bank: &mut AccumulatorBank, manifold: Manifold, start: u64, end: u64) {
        let meta = bank.meta().clone();
        let sampler = StateSampler::new(meta.n, manifold, meta.metrics.clone(), meta.boundary_policy).unwrap();
        let classifier = Classifier::new(meta.splits.clone());
        let mut stream = PointStream::new(meta.sequences[&manifold].clone().with_start_index(start)).unwrap();
        let mut buf = vec![0.0; sampler.cube_dimension()];
        for _ in start..end {
            let idx = stream.next_into(&mut buf).unwrap();
            let s = sampler.sample(&buf, idx).unwrap();
            let flags = classifier.classify(s.rho.matrix()).unwrap();
            bank.accumulate(&s, &flags).unwrap();
        }
    }

    #[test]
    fn exact_sum_basics() {
        let mut s = ExactSum::default();
        for x in [1e300, 1.0, -1e300, 1e-300, 5e-324] {
            s.add(x);
        }
        assert_eq!(s.value(), 1.0);
        let mut t = ExactSum::default();
        t.add(0.1);
        t.add(0.2);
        // Correctly rounded 0.1 + 0.2 (exact sum of the two doubles).
        assert_eq!(t.value(), 0.30000000000000004);
        let mut neg = ExactSum::default();
        neg.add(-2.5);
        neg.add(1.0);
        assert_eq!(neg.value(), -1.5);
        assert_eq!(ExactSum::default().value(), 0.0);
        let mut big = ExactSum::default();
        big.add(f64::MAX);
        assert_eq!(big.value(), f64::MAX);
        let mut tiny = ExactSum::default();
        tiny.add(5e-324);
        tiny.add(5e-324);
        assert_eq!(tiny.value(), 1e-323);
    }

    #[test]
    fn exact_sum_survives_carry_propagation() {
        let mut s = ExactSum::default();
        s.pending = CARRY_INTERVAL - 3;
        for _ in 0..10 {
            s.add(f64::from_bits(0x3fef_ffff_ffff_ffff));
        }
        assert_eq!(s.value(), 10.0 * f64::from_bits(0x3fef_ffff_ffff_ffff));
    }

    proptest! {
        #[test]
        fn exact_sum_is_order_independent(xs in prop::collection::vec(-1e10f64..1e10, 1..200)) {
            let mut fwd = ExactSum::default();
            xs.iter().for_each(|x| fwd.add(*x));
            let mut rev = ExactSum::default();
            xs.iter().rev().for_each(|x| rev.add(*x));
            prop_assert_eq!(fwd.value().to_bits(), rev.value().to_bits());
            let (a, b) = xs.split_at(xs.len() / 2);
            let mut left = ExactSum::default();
            a.iter().for_each(|x| left.add(*x));
            let mut right = ExactSum::default();
            b.iter().for_each(|x| right.add(*x));
            right.merge(&left);
            prop_assert_eq!(right.value().to_bits(), fwd.value().to_bits());
            // Close to the naive sum.
            let naive: f64 = xs.iter().sum();
            prop_assert!((fwd.value() - naive).abs() <= 1e-6 * xs.iter().map(|x| x.abs()).sum::<f64>());
        }

        #[test]
        fn exact_sum_round_trips_through_limbs(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 0..50)) {
            let mut s = ExactSum::default();
            xs.iter().for_each(|x| s.add(*x / 1e10));
            let back = ExactSum::from_limbs(&s.limbs()).unwrap();
            prop_assert_eq!(back.value().to_bits(), s.value().to_bits());
            prop_assert!(back == s);
        }
    }

    #[test]
    fn range_set() {
        let mut r = RangeSet::default();
        r.insert(10, 20);
        r.insert(20, 30);
        r.insert(0, 5);
        assert_eq!(r.ranges(), &[(0, 5), (10, 30)]);
        assert_eq!(r.missing(0, 40), vec![(5, 10), (30, 40)]);
        assert_eq!(r.missing(12, 25), vec![]);
        let mut other = RangeSet::default();
        other.insert(5, 10);
        assert!(!r.overlaps(&other));
        other.insert(29, 31);
        assert!(r.overlaps(&other));
        assert_eq!(r.len(), 25);
    }

    #[test]
    fn only_total_for_non_passing_sample() {
        let mut bank = AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom));
        let sampler = StateSampler::new(6, Manifold::Volume, MetricKind::ALL.to_vec(), BoundaryPolicy::Auto).unwrap();
        let s = sampler.sample(&vec![0.37; sampler.cube_dimension()], 1).unwrap();
        bank.accumulate(&s, &SeparabilityFlags::NONE).unwrap();
        for kind in MetricKind::ALL {
            for region in Region::ALL {
                let cell = bank.cell(kind, region, Manifold::Volume).unwrap();
                assert_eq!(cell.passes, (region == Region::Total) as u64);
            }
        }
        let both = SeparabilityFlags { pass_a: true, pass_b: true };
        bank.accumulate(&s, &both).unwrap();
        for region in Region::ALL {
            assert!(bank.cell(MetricKind::Bures, region, Manifold::Volume).unwrap().passes >= 1);
        }
    }

    #[test]
    fn mismatched_sample_is_rejected() {
        let mut m = meta(6, SequenceKind::PseudoRandom);
        m.sequences.remove(&Manifold::Hyperarea);
        let mut bank = AccumulatorBank::new(m);
        let sampler = StateSampler::new(6, Manifold::Hyperarea, MetricKind::ALL.to_vec(), BoundaryPolicy::Auto).unwrap();
        let s = sampler.sample(&vec![0.4; sampler.cube_dimension()], 1).unwrap();
        assert!(matches!(bank.accumulate(&s, &SeparabilityFlags::NONE), Err(Error::Mismatch(_))));
    }

    #[test]
    fn inclusion_exclusion_and_monotonicity() {
        let mut bank = AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom));
        fill(&mut bank, Manifold::Volume, 1, 20_001);
        for kind in MetricKind::ALL {
            let v = |r| bank.cell(kind, r, Manifold::Volume).unwrap().sum_w.clone();
            let mut lhs = v(Region::SepEither);
            lhs.merge(&v(Region::SepBoth));
            let mut rhs = v(Region::SepA);
            rhs.merge(&v(Region::SepB));
            assert!(lhs == rhs, "{kind}: inclusion-exclusion violated");
            let x = |r| v(r).value();
            assert!(x(Region::SepBoth) <= x(Region::SepA).min(x(Region::SepB)));
            assert!(x(Region::SepA).max(x(Region::SepB)) <= x(Region::SepEither));
            assert!(x(Region::SepEither) <= x(Region::Total));
            let p = |r| bank.cell(kind, r, Manifold::Volume).unwrap().passes;
            assert_eq!(p(Region::SepEither) + p(Region::SepBoth), p(Region::SepA) + p(Region::SepB));
        }
    }

    #[test]
    fn merge_identity_commutativity_and_partitions() {
        let m = meta(6, SequenceKind::GeneralizedFaure);
        let mut whole = AccumulatorBank::new(m.clone());
        fill(&mut whole, Manifold::Volume, 1, 4001);
        fill(&mut whole, Manifold::Hyperarea, 1, 1001);

        let empty = AccumulatorBank::new(m.clone());
        assert_eq!(whole.clone().merge(&empty).unwrap(), whole);

        let mut parts = Vec::new();
        for k in 0..8u64 {
            let mut b = AccumulatorBank::new(m.clone());
            fill(&mut b, Manifold::Volume, 1 + 500 * k, 1 + 500 * (k + 1));
            if k < 2 {
                fill(&mut b, Manifold::Hyperarea, 1 + 500 * k, 1 + 500 * (k + 1));
            }
            parts.push(b);
        }
        let forward = parts.iter().fold(AccumulatorBank::new(m.clone()), |acc, b| acc.merge(b).unwrap());
        let backward = parts.iter().rev().fold(AccumulatorBank::new(m.clone()), |acc, b| acc.merge(b).unwrap());
        assert_eq!(forward, whole);
        assert_eq!(backward, whole);
        assert_eq!(
            serde_json::to_string(&report(&forward).unwrap()).unwrap(),
            serde_json::to_string(&report(&whole).unwrap()).unwrap()
        );
        let ab = parts[0].clone().merge(&parts[1]).unwrap();
        let ba = parts[1].clone().merge(&parts[0]).unwrap();
        assert_eq!(ab, ba);
    }

    #[test]
    fn merge_errors() {
        let m = meta(6, SequenceKind::PseudoRandom);
        let mut a = AccumulatorBank::new(m.clone());
        fill(&mut a, Manifold::Volume, 1, 11);
        let mut b = AccumulatorBank::new(m.clone());
        fill(&mut b, Manifold::Volume, 5, 15);
        assert!(matches!(a.clone().merge(&b), Err(Error::Overlap(_))));
        let mut other_meta = m.clone();
        other_meta.boundary_policy = BoundaryPolicy::BuresPair;
        assert!(matches!(a.merge(&AccumulatorBank::new(other_meta)), Err(Error::Mismatch(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_guards() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.json");
        let m = meta(6, SequenceKind::PseudoRandom);
        let mut bank = AccumulatorBank::new(m.clone());
        fill(&mut bank, Manifold::Volume, 1, 501);
        bank.seal_chunk(Manifold::Volume).unwrap();
        checkpoint_save(&bank, &path).unwrap();
        let back = checkpoint_load(&path).unwrap();
        assert_eq!(back, bank);
        assert_eq!(
            serde_json::to_string(&report(&back).unwrap()).unwrap(),
            serde_json::to_string(&report(&bank).unwrap()).unwrap()
        );
        assert!(AccumulatorBank::load_for(&path, &m.config_hash()).is_ok());
        assert!(AccumulatorBank::load_for(&path, "deadbeef").is_err());

        let text = std::fs::read_to_string(&path).unwrap();
        let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
        json["config_hash"] = serde_json::Value::String("0".repeat(64));
        std::fs::write(&path, json.to_string()).unwrap();
        let err = checkpoint_load(&path).unwrap_err();
        assert!(err.to_string().contains("configuration hash"), "{err}");

        json["config_hash"] = serde_json::Value::String(m.config_hash());
        json["format_version"] = serde_json::json!(99);
        std::fs::write(&path, json.to_string()).unwrap();
        assert!(checkpoint_load(&path).unwrap_err().to_string().contains("format version"));

        std::fs::write(&path, "{ not json").unwrap();
        assert!(checkpoint_load(&path).unwrap_err().to_string().contains("corrupt"));
    }

    #[test]
    fn resume_equals_uninterrupted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.json");
        let m = meta(6, SequenceKind::PseudoRandom);
        let mut first = AccumulatorBank::new(m.clone());
        fill(&mut first, Manifold::Volume, 1, 1001);
        first.save(&path).unwrap();
        let mut second = AccumulatorBank::new(m.clone());
        fill(&mut second, Manifold::Volume, 1001, 2001);
        let resumed = AccumulatorBank::load(&path).unwrap().merge(&second).unwrap();
        let mut straight = AccumulatorBank::new(m);
        fill(&mut straight, Manifold::Volume, 1, 2001);
        assert_eq!(resumed, straight);
    }

    #[test]
    fn config_hash_is_stable() {
        let m = meta(6, SequenceKind::PseudoRandom);
        assert_eq!(m.config_hash(), meta(6, SequenceKind::PseudoRandom).config_hash());
        assert_ne!(m.config_hash(), meta(6, SequenceKind::Halton).config_hash());
        assert_eq!(m.config_hash().len(), 64);
    }

    #[test]
    fn report_structure() {
        assert!(matches!(report(&AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom))), Err(Error::Empty)));
        let mut bank = AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom));
        fill(&mut bank, Manifold::Volume, 1, 3001);
        let r = report(&bank).unwrap();
        let vol = r.manifold(Manifold::Volume).unwrap();
        assert!(r.manifold(Manifold::Hyperarea).is_none());
        let bures = vol.metric(MetricKind::Bures).unwrap();
        assert_eq!(bures.ratio_to_estimated_bures, Some(1.0));
        let (a, b) = (bures.estimate(Region::SepA).unwrap(), bures.estimate(Region::SepB).unwrap());
        assert_eq!(bures.pooled, Some(0.5 * (a + b)));
        for m in &vol.metrics {
            for (_, p) in &m.probabilities {
                if let Some(p) = p {
                    assert!((0.0..=1.0).contains(p));
                }
            }
            assert!(m.regions.iter().all(|e| e.std_error.is_some()));
            // Both scalings agree after renormalizing by the Bures estimate.
            let known = m.ratio_to_known_bures.unwrap();
            let est = m.ratio_to_estimated_bures.unwrap();
            let bures_known = bures.ratio_to_known_bures.unwrap();
            assert!((known / bures_known - est).abs() <= 1e-12 * est);
        }
        let km = r.conjectures.iter().find(|c| c.name.starts_with("kubo-mori")).unwrap();
        assert_eq!(km.conjectured, 32768.0);
        assert_eq!(r.analytic.len(), 3);
    }

    #[test]
    fn seal_chunk_requires_contiguity() {
        let mut bank = AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom));
        fill(&mut bank, Manifold::Volume, 1, 11);
        let mut gap = AccumulatorBank::new(meta(6, SequenceKind::PseudoRandom));
        fill(&mut gap, Manifold::Volume, 20, 30);
        let mut joined = bank.merge(&gap).unwrap();
        assert!(joined.seal_chunk(Manifold::Volume).is_err());
    }
}
