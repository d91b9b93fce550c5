//! Tabular architecture search.
//!
//! An architecture picks one operation per edge. A [`ScoreTable`] stands in for
//! the accuracy of a trained network, so the search isolates the gradient
//! estimator: every step draws `n_paths` architectures with the
//! discrepancy-corrected categorical sampler (one sampler per edge, reset
//! every step), looks their scores up, forms the LOORF gradient of the edge
//! logits and takes an optimizer step. Edges whose best operation is clearly
//! ahead are pruned and never revisited.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::estimators::loorf_values;
use crate::fmt_num;
use crate::optim::{Optimizer, OptimizerKind};
use crate::prob_core::{softmax, softmax_values, CategoricalRow, SampleMatrix};
use crate::sampler::{db_sample_categorical_with, seeded_rng};

/// Operation labels of the five-operation cell space.
pub const CELL_OPS: [&str; 5] = ["none", "skip_connect", "nor_conv_1x1", "nor_conv_3x3", "avg_pool_3x3"];

/// Largest table that is generated or scanned exhaustively.
pub const MAX_TABLE_ENTRIES: u128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SearchSpace {
    n_e: usize,
    op_names: Vec<String>,
}

impl SearchSpace {
    pub fn new(n_e: usize, op_names: Vec<String>) -> Result<Self> {
        if n_e == 0 {
            return Err(Error::InvalidParameter("search space needs at least one edge".into()));
        }
        if op_names.len() < 2 {
            return Err(Error::InvalidParameter("search space needs at least two operations".into()));
        }
        let mut seen = HashSet::new();
        for name in &op_names {
            if name.is_empty() || name.parse::<usize>().is_ok() || name.contains([',', ';', '|']) {
                return Err(Error::InvalidParameter(format!("bad operation name '{name}'")));
            }
            if !seen.insert(name) {
                return Err(Error::InvalidParameter(format!("duplicate operation name '{name}'")));
            }
        }
        let space = Self { n_e, op_names };
        space.size()?;
        Ok(space)
    }

    /// `n_op` operations per edge; the five-operation cell names when
    /// `n_op == 5`, otherwise `op0, op1, ...`.
    pub fn with_ops(n_e: usize, n_op: usize) -> Result<Self> {
        let names = if n_op == CELL_OPS.len() {
            CELL_OPS.iter().map(|s| s.to_string()).collect()
        } else {
            (0..n_op).map(|k| format!("op{k}")).collect()
        };
        Self::new(n_e, names)
    }

    pub fn n_e(&self) -> usize {
        self.n_e
    }

    pub fn n_op(&self) -> usize {
        self.op_names.len()
    }

    pub fn op_names(&self) -> &[String] {
        &self.op_names
    }

    /// `n_op^n_e`, guarded by [`MAX_TABLE_ENTRIES`].
    pub fn size(&self) -> Result<usize> {
        let size = (self.n_op() as u128).checked_pow(self.n_e as u32).unwrap_or(u128::MAX);
        if size > MAX_TABLE_ENTRIES {
            return Err(Error::TooLarge { what: "architecture count", size, limit: MAX_TABLE_ENTRIES });
        }
        Ok(size as usize)
    }

    /// Mixed-radix index with edge 0 most significant.
    pub fn encode(&self, arch: &[usize]) -> usize {
        arch.iter().fold(0, |acc, &o| acc * self.n_op() + o)
    }

    pub fn decode(&self, mut index: usize) -> Vec<usize> {
        let mut arch = vec![0; self.n_e];
        for slot in arch.iter_mut().rev() {
            *slot = index % self.n_op();
            index /= self.n_op();
        }
        arch
    }

    /// Operation index from a number or a name.
    pub fn resolve_op(&self, token: &str) -> Option<usize> {
        match token.parse::<usize>() {
            Ok(k) if k < self.n_op() => Some(k),
            Ok(_) => None,
            Err(_) => self.op_names.iter().position(|n| n == token),
        }
    }

    pub fn format_arch(&self, arch: &[usize]) -> String {
        arch.iter().map(|&o| self.op_names[o].as_str()).collect::<Vec<_>>().join("|")
    }
}

/// Scores indexed by [`SearchSpace::encode`]; `None` for absent entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    space: SearchSpace,
    scores: Vec<Option<f64>>,
    higher_is_better: bool,
}

impl ScoreTable {
    pub fn space(&self) -> &SearchSpace {
        &self.space
    }

    pub fn higher_is_better(&self) -> bool {
        self.higher_is_better
    }

    pub fn len(&self) -> usize {
        self.scores.iter().filter(|s| s.is_some()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_exhaustive(&self) -> bool {
        self.scores.iter().all(Option::is_some)
    }

    pub fn score(&self, arch: &[usize]) -> Option<f64> {
        if arch.len() != self.space.n_e || arch.iter().any(|&o| o >= self.space.n_op()) {
            return None;
        }
        self.scores[self.space.encode(arch)]
    }

    fn better(&self, a: f64, b: f64) -> bool {
        if self.higher_is_better {
            a > b
        } else {
            a < b
        }
    }

    /// Best present architecture; the lowest index wins ties.
    pub fn best(&self) -> Option<(Vec<usize>, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in self.scores.iter().enumerate() {
            if let Some(s) = *s {
                if best.is_none_or(|(_, b)| self.better(s, b)) {
                    best = Some((i, s));
                }
            }
        }
        best.map(|(i, s)| (self.space.decode(i), s))
    }

    /// One plus the number of entries strictly better than `score`.
    pub fn rank_of(&self, score: f64) -> usize {
        1 + self.scores.iter().flatten().filter(|&&s| self.better(s, score)).count()
    }

    /// CSV with metadata comments, a header and one row per present entry.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n", crate::BUILD_ID);
        let _ = writeln!(out, "# ops={}", self.space.op_names.join(";"));
        let _ = writeln!(out, "# higher_is_better={}", self.higher_is_better);
        if let Some((arch, s)) = self.best() {
            let _ = writeln!(out, "# argmax={}", self.space.format_arch(&arch));
            let _ = writeln!(out, "# best_score={}", fmt_num(s));
        }
        let header: Vec<String> = (1..=self.space.n_e).map(|e| format!("op_{e}")).chain(["score".into()]).collect();
        out.push_str(&header.join(","));
        out.push('\n');
        for (i, s) in self.scores.iter().enumerate() {
            if let Some(s) = s {
                for o in self.space.decode(i) {
                    out.push_str(&self.space.op_names[o]);
                    out.push(',');
                }
                out.push_str(&fmt_num(*s));
                out.push('\n');
            }
        }
        out
    }
}

/// `score(a) = sum_e u_e[a_e] + sum_{e<e'} V_{ee'}[a_e, a_e']` with
/// `u ~ N(0, 1)` and `V ~ N(0, 0.25^2)`, drawn from `seed`.
pub fn generate_synthetic_table(space: &SearchSpace, seed: u64) -> Result<ScoreTable> {
    let size = space.size()?;
    let (n_e, n_op) = (space.n_e(), space.n_op());
    let mut rng = seeded_rng(seed);
    let unary_law = Normal::new(0.0, 1.0).expect("valid normal");
    let pair_law = Normal::new(0.0, 0.25).expect("valid normal");
    let unary: Vec<Vec<f64>> = (0..n_e).map(|_| (0..n_op).map(|_| unary_law.sample(&mut rng)).collect()).collect();
    let mut pairs = Vec::new();
    for e in 0..n_e {
        for e2 in e + 1..n_e {
            let v: Vec<f64> = (0..n_op * n_op).map(|_| pair_law.sample(&mut rng)).collect();
            pairs.push((e, e2, v));
        }
    }
    let scores = (0..size)
        .map(|i| {
            let arch = space.decode(i);
            let mut s: f64 = arch.iter().enumerate().map(|(e, &o)| unary[e][o]).sum();
            for (e, e2, v) in &pairs {
                s += v[arch[*e] * n_op + arch[*e2]];
            }
            Some(s)
        })
        .collect();
    Ok(ScoreTable { space: space.clone(), scores, higher_is_better: true })
}

/// Parses a score table.
///
/// `space` fixes the operation names; without it they come from an `# ops=`
/// comment, else from the five-operation cell names when every entry is one
/// of them, else `op0..` sized by the largest numeric index. With
/// `exhaustive` every architecture must be present.
pub fn parse_table(text: &str, space: Option<&SearchSpace>, exhaustive: bool) -> Result<ScoreTable> {
    let mut meta_ops: Option<Vec<String>> = None;
    let mut higher_is_better = true;
    for (k, line) in text.lines().enumerate() {
        let Some(comment) = line.trim_start().strip_prefix('#') else { continue };
        let Some((key, value)) = comment.split_once('=') else { continue };
        let value = value.trim();
        match key.trim() {
            "ops" => meta_ops = Some(value.split(';').map(|s| s.trim().to_string()).collect()),
            "higher_is_better" => {
                higher_is_better = value.parse().map_err(|_| Error::TableParse {
                    line: k + 1,
                    message: format!("higher_is_better must be true or false, got '{value}'"),
                })?
            }
            _ => {}
        }
    }

    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Table(format!("cannot read header: {e}")))?.clone();
    let header_line = reader.position().line() as usize;
    let cols: Vec<&str> = headers.iter().collect();
    let n_e = cols.len().saturating_sub(1);
    let expected: Vec<String> = (1..=n_e).map(|e| format!("op_{e}")).chain(["score".into()]).collect();
    if n_e == 0 || cols != expected.iter().map(String::as_str).collect::<Vec<_>>() {
        return Err(Error::TableParse {
            line: header_line.max(1),
            message: format!("header must be {}, got {}", expected.join(","), cols.join(",")),
        });
    }

    let mut records = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            Error::TableParse { line, message: e.to_string() }
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != n_e + 1 {
            return Err(Error::TableParse {
                line,
                message: format!("expected {} fields, got {}", n_e + 1, rec.len()),
            });
        }
        let ops: Vec<String> = rec.iter().take(n_e).map(str::to_string).collect();
        let raw = &rec[n_e];
        let score: f64 = raw
            .parse()
            .map_err(|_| Error::TableParse { line, message: format!("score '{raw}' is not a number") })?;
        if !score.is_finite() {
            return Err(Error::TableParse { line, message: format!("score {score} is not finite") });
        }
        records.push((line, ops, score));
    }

    let space = match (space, meta_ops) {
        (Some(s), _) => {
            if s.n_e() != n_e {
                return Err(Error::DimensionMismatch { expected: s.n_e(), got: n_e });
            }
            s.clone()
        }
        (None, Some(names)) => SearchSpace::new(n_e, names)?,
        (None, None) => infer_space(n_e, &records)?,
    };

    let size = space.size()?;
    let mut scores = vec![None; size];
    for (line, ops, score) in &records {
        let mut arch = Vec::with_capacity(n_e);
        for tok in ops {
            let o = space
                .resolve_op(tok)
                .ok_or_else(|| Error::TableParse { line: *line, message: format!("unknown operation '{tok}'") })?;
            arch.push(o);
        }
        let slot = &mut scores[space.encode(&arch)];
        if slot.is_some() {
            return Err(Error::TableParse {
                line: *line,
                message: format!("duplicate architecture {}", space.format_arch(&arch)),
            });
        }
        *slot = Some(*score);
    }
    let table = ScoreTable { space, scores, higher_is_better };
    if exhaustive && !table.is_exhaustive() {
        let missing: Vec<String> = table
            .scores
            .iter()
            .enumerate()
            .filter(|(_, s)| s.is_none())
            .map(|(i, _)| table.space.format_arch(&table.space.decode(i)))
            .collect();
        let shown = missing.iter().take(10).cloned().collect::<Vec<_>>().join(", ");
        let more = if missing.len() > 10 { format!(" and {} more", missing.len() - 10) } else { String::new() };
        return Err(Error::Table(format!("{} architectures missing: {shown}{more}", missing.len())));
    }
    Ok(table)
}

fn infer_space(n_e: usize, records: &[(usize, Vec<String>, f64)]) -> Result<SearchSpace> {
    let tokens = || records.iter().flat_map(|(_, ops, _)| ops.iter());
    if tokens().all(|t| t.parse::<usize>().is_ok()) {
        let max = tokens().filter_map(|t| t.parse::<usize>().ok()).max().unwrap_or(0);
        return SearchSpace::with_ops(n_e, (max + 1).max(2));
    }
    if tokens().all(|t| t.parse::<usize>().is_ok() || CELL_OPS.contains(&t.as_str())) {
        return SearchSpace::with_ops(n_e, CELL_OPS.len());
    }
    let (line, tok) = records
        .iter()
        .find_map(|(line, ops, _)| {
            ops.iter().find(|t| t.parse::<usize>().is_err() && !CELL_OPS.contains(&t.as_str())).map(|t| (*line, t))
        })
        .expect("some token is unresolved");
    Err(Error::TableParse { line, message: format!("unknown operation '{tok}' (no '# ops=' metadata)") })
}

pub fn load_table(path: &Path, space: Option<&SearchSpace>, exhaustive: bool) -> Result<ScoreTable> {
    parse_table(&std::fs::read_to_string(path)?, space, exhaustive)
}

pub fn write_table(table: &ScoreTable, path: &Path) -> Result<()> {
    std::fs::write(path, table.to_csv())?;
    Ok(())
}

/// Per-edge logits and the edges already fixed by pruning.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchDistribution {
    logits: Vec<Vec<f64>>,
    pruned: Vec<Option<usize>>,
}

impl ArchDistribution {
    pub fn uniform(space: &SearchSpace) -> Self {
        Self { logits: vec![vec![0.0; space.n_op()]; space.n_e()], pruned: vec![None; space.n_e()] }
    }

    pub fn from_logits(logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.is_empty() || logits.iter().any(|r| r.len() < 2 || r.len() != logits[0].len()) {
            return Err(Error::InvalidParameter("logits must be a non-empty rectangle with >= 2 columns".into()));
        }
        for row in &logits {
            softmax(row)?;
        }
        let n_e = logits.len();
        Ok(Self { logits, pruned: vec![None; n_e] })
    }

    pub fn logits(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub fn pruned(&self) -> &[Option<usize>] {
        &self.pruned
    }

    pub fn probs(&self, edge: usize) -> Vec<f64> {
        softmax_values(&self.logits[edge])
    }

    fn active_edges(&self) -> Vec<usize> {
        (0..self.logits.len()).filter(|&e| self.pruned[e].is_none()).collect()
    }

    pub fn all_pruned(&self) -> bool {
        self.pruned.iter().all(Option::is_some)
    }

    /// Entropy of the edge's softmax; zero once pruned.
    pub fn entropy(&self, edge: usize) -> f64 {
        if self.pruned[edge].is_some() {
            return 0.0;
        }
        -self.probs(edge).iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
    }

    /// Per-edge argmax (lowest index on ties); pruned edges keep their op.
    pub fn argmax(&self) -> Vec<usize> {
        (0..self.logits.len()).map(|e| self.pruned[e].unwrap_or_else(|| top_two(&self.probs(e)).0)).collect()
    }
}

/// Index of the largest entry (lowest index on ties) and the gap to the
/// runner-up.
fn top_two(probs: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (k, &q) in probs.iter().enumerate() {
        if q > probs[best] {
            best = k;
        }
    }
    let second = probs.iter().enumerate().filter(|&(k, _)| k != best).map(|(_, &q)| q).fold(f64::MIN, f64::max);
    (best, probs[best] - second)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    pub n_paths: usize,
    pub alpha: f64,
    pub warmup_steps: usize,
    pub train_steps: usize,
    pub prune_threshold: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Maximum number of table lookups.
    pub eval_budget: Option<u64>,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            n_paths: 5,
            alpha: 1.0,
            warmup_steps: 50,
            train_steps: 3000,
            prune_threshold: 0.8,
            optimizer: OptimizerKind::adam(1e-3, 0.5, 0.999),
            seed: 0,
            eval_budget: None,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_paths < 2 {
            return Err(Error::TooFewSamples { required: 2, got: self.n_paths });
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::InvalidParameter(format!("alpha must be finite and >= 0, got {}", self.alpha)));
        }
        if !(self.prune_threshold > 0.0 && self.prune_threshold <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "prune threshold must lie in (0, 1], got {}",
                self.prune_threshold
            )));
        }
        if self.eval_budget == Some(0) {
            return Err(Error::InvalidParameter("evaluation budget must be positive".into()));
        }
        self.optimizer.validate()
    }
}

/// Lookup counter checked against the configured budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Budget {
    pub used: u64,
    pub limit: Option<u64>,
}

impl Budget {
    fn spend(&mut self, k: u64) -> Result<()> {
        if let Some(limit) = self.limit {
            if self.used + k > limit {
                return Err(Error::BudgetExhausted { used: self.used, budget: limit });
            }
        }
        self.used += k;
        Ok(())
    }
}

/// A step's sampled architectures and, when some edge is still free, the
/// one-hot batch over the free edges.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub archs: Vec<Vec<usize>>,
    pub samples: Option<SampleMatrix>,
    pub active_edges: Vec<usize>,
}

/// Draws `cfg.n_paths` architectures. Each free edge runs its own
/// discrepancy-corrected sampler over the paths; pruned edges are fixed.
pub fn sample_paths<R: Rng + ?Sized>(dist: &ArchDistribution, cfg: &SearchConfig, rng: &mut R) -> Result<PathBatch> {
    let active = dist.active_edges();
    let fixed: Vec<usize> = dist.pruned.iter().map(|p| p.unwrap_or(0)).collect();
    if active.is_empty() {
        return Ok(PathBatch { archs: vec![fixed; cfg.n_paths], samples: None, active_edges: active });
    }
    let rows: Vec<CategoricalRow> = active.iter().map(|&e| softmax(&dist.logits[e])).collect::<Result<_>>()?;
    let samples = db_sample_categorical_with(&rows, cfg.alpha, cfg.n_paths, rng);
    let archs = (0..cfg.n_paths)
        .map(|i| {
            let mut arch = fixed.clone();
            for (&e, o) in active.iter().zip(samples.indices(i)) {
                arch[e] = o;
            }
            arch
        })
        .collect();
    Ok(PathBatch { archs, samples: Some(samples), active_edges: active })
}

fn lookup(table: &ScoreTable, arch: &[usize]) -> Result<f64> {
    table
        .score(arch)
        .ok_or_else(|| Error::Table(format!("architecture {} is not in the table", table.space.format_arch(arch))))
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    pub archs: Vec<Vec<usize>>,
    pub scores: Vec<f64>,
    /// LOORF gradient of the free edges' logits, edge-major.
    pub gradient: Vec<f64>,
}

impl StepReport {
    fn best_score(&self, higher_is_better: bool) -> f64 {
        let pick = if higher_is_better { f64::max } else { f64::min };
        self.scores.iter().copied().reduce(pick).unwrap_or(f64::NAN)
    }
}

fn sample_and_score<R: Rng + ?Sized>(
    dist: &ArchDistribution,
    table: &ScoreTable,
    cfg: &SearchConfig,
    rng: &mut R,
    budget: &mut Budget,
) -> Result<(PathBatch, Vec<f64>)> {
    budget.spend(cfg.n_paths as u64)?;
    let batch = sample_paths(dist, cfg, rng)?;
    let scores = batch.archs.iter().map(|a| lookup(table, a)).collect::<Result<_>>()?;
    Ok((batch, scores))
}

/// One search update: sample, score, LOORF over the one-hot batch, optimizer
/// step toward better scores. LOORF with the score `x - p` already gives the
/// gradient with respect to the logits.
pub fn search_step<R: Rng + ?Sized>(
    dist: &mut ArchDistribution,
    table: &ScoreTable,
    cfg: &SearchConfig,
    opt: &mut Optimizer,
    rng: &mut R,
    budget: &mut Budget,
) -> Result<StepReport> {
    let (batch, scores) = sample_and_score(dist, table, cfg, rng, budget)?;
    let Some(samples) = &batch.samples else {
        return Ok(StepReport { archs: batch.archs, scores, gradient: Vec::new() });
    };
    let p: Vec<f64> = batch.active_edges.iter().flat_map(|&e| dist.probs(e)).collect();
    let gradient = loorf_values(samples, &p, &scores)?.grad;

    let n_op = table.space.n_op();
    let mut params: Vec<f64> = dist.logits.iter().flatten().copied().collect();
    let mut direction = vec![0.0; params.len()];
    for (k, &e) in batch.active_edges.iter().enumerate() {
        direction[e * n_op..(e + 1) * n_op].copy_from_slice(&gradient[k * n_op..(k + 1) * n_op]);
    }
    if table.higher_is_better {
        opt.ascend(&mut params, &direction);
    } else {
        opt.descend(&mut params, &direction);
    }
    for &e in &batch.active_edges {
        dist.logits[e].copy_from_slice(&params[e * n_op..(e + 1) * n_op]);
    }
    Ok(StepReport { archs: batch.archs, scores, gradient })
}

/// Fixes every free edge whose top-1 minus top-2 softmax probability exceeds
/// the threshold. Returns the newly pruned edges.
pub fn maybe_prune(dist: &mut ArchDistribution, threshold: f64) -> Vec<usize> {
    let mut newly = Vec::new();
    for e in dist.active_edges() {
        let (best, gap) = top_two(&dist.probs(e));
        if gap > threshold {
            dist.pruned[e] = Some(best);
            newly.push(e);
        }
    }
    newly
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Train,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Self::Warmup => "warmup",
            Self::Train => "train",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub step: usize,
    pub phase: Phase,
    /// Per-edge entropy after the step.
    pub entropy: Vec<f64>,
    pub best_sampled: f64,
    /// Edges fixed so far.
    pub pruned: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub found: Vec<usize>,
    pub found_score: f64,
    pub best: Vec<usize>,
    pub best_score: f64,
    /// Non-negative distance to the best score in the table's direction.
    pub regret: f64,
    /// 1 for the best architecture.
    pub rank: usize,
    pub table_size: usize,
    pub warmup_steps: usize,
    pub train_steps_run: usize,
    pub lookups: u64,
    pub final_dist: ArchDistribution,
    pub trajectory: Vec<TrajectoryRecord>,
}

impl SearchResult {
    /// Whether the found architecture is within the best `fraction` of the
    /// table.
    pub fn in_top_fraction(&self, fraction: f64) -> bool {
        self.rank as f64 <= (fraction * self.table_size as f64).ceil()
    }

    pub fn summary(&self, table: &ScoreTable, cfg: &SearchConfig) -> String {
        let space = table.space();
        let pruned: Vec<String> =
            self.final_dist.pruned.iter().enumerate().filter(|(_, p)| p.is_some()).map(|(e, _)| (e + 1).to_string()).collect();
        let lines = [
            format!("build={}", crate::BUILD_ID),
            format!("edges={}", space.n_e()),
            format!("ops={}", space.op_names().join(";")),
            format!("table_size={}", self.table_size),
            format!("higher_is_better={}", table.higher_is_better()),
            format!("seed={}", cfg.seed),
            format!("n_paths={}", cfg.n_paths),
            format!("alpha={}", cfg.alpha),
            format!("prune_threshold={}", cfg.prune_threshold),
            format!("optimizer={}", cfg.optimizer.name()),
            format!("lr={}", cfg.optimizer.lr()),
            format!("warmup_steps={}", self.warmup_steps),
            format!("train_steps={}", cfg.train_steps),
            format!("train_steps_run={}", self.train_steps_run),
            format!("lookups={}", self.lookups),
            format!("found={}", space.format_arch(&self.found)),
            format!("found_score={}", fmt_num(self.found_score)),
            format!("best={}", space.format_arch(&self.best)),
            format!("best_score={}", fmt_num(self.best_score)),
            format!("regret={}", fmt_num(self.regret)),
            format!("rank={}", self.rank),
            format!("pruned_edges={}", if pruned.is_empty() { "-".into() } else { pruned.join(";") }),
        ];
        lines.join("\n") + "\n"
    }

    pub fn trajectory_csv(&self, table: &ScoreTable) -> String {
        let n_e = table.space().n_e();
        let mut out = format!("# {}\n", crate::BUILD_ID);
        let mut header = vec!["step".to_string(), "phase".into()];
        header.extend((1..=n_e).map(|e| format!("entropy_{e}")));
        header.extend(["best_sampled".into(), "pruned".into()]);
        out.push_str(&header.join(","));
        out.push('\n');
        for r in &self.trajectory {
            let mut fields = vec![r.step.to_string(), r.phase.name().to_string()];
            fields.extend(r.entropy.iter().map(|&h| fmt_num(h)));
            fields.push(fmt_num(r.best_sampled));
            let pruned: Vec<String> = r.pruned.iter().map(|e| (e + 1).to_string()).collect();
            fields.push(if pruned.is_empty() { "-".into() } else { pruned.join(";") });
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }
}

fn record(step: usize, phase: Phase, dist: &ArchDistribution, best_sampled: f64) -> TrajectoryRecord {
    TrajectoryRecord {
        step,
        phase,
        entropy: (0..dist.logits.len()).map(|e| dist.entropy(e)).collect(),
        best_sampled,
        pruned: (0..dist.pruned.len()).filter(|&e| dist.pruned[e].is_some()).collect(),
    }
}

/// Warm-up steps sample without updating, then training steps update and
/// prune until every edge is fixed or the steps run out.
pub fn run_search(table: &ScoreTable, cfg: &SearchConfig) -> Result<SearchResult> {
    cfg.validate()?;
    if !table.is_exhaustive() {
        return Err(Error::Table("search needs an exhaustive table to report regret".into()));
    }
    let (best, best_score) = table.best().ok_or_else(|| Error::Table("empty table".into()))?;
    let space = table.space();
    let mut dist = ArchDistribution::uniform(space);
    let mut opt = Optimizer::new(cfg.optimizer, space.n_e() * space.n_op())?;
    let mut rng = seeded_rng(cfg.seed);
    let mut budget = Budget { used: 0, limit: cfg.eval_budget };
    let mut trajectory = Vec::with_capacity(cfg.warmup_steps + cfg.train_steps);

    for step in 0..cfg.warmup_steps {
        let (_, scores) = sample_and_score(&dist, table, cfg, &mut rng, &mut budget)?;
        let pick = if table.higher_is_better { f64::max } else { f64::min };
        let best_sampled = scores.into_iter().reduce(pick).unwrap_or(f64::NAN);
        trajectory.push(record(step, Phase::Warmup, &dist, best_sampled));
    }
    let mut train_steps_run = 0;
    for k in 0..cfg.train_steps {
        if dist.all_pruned() {
            break;
        }
        let report = search_step(&mut dist, table, cfg, &mut opt, &mut rng, &mut budget)?;
        maybe_prune(&mut dist, cfg.prune_threshold);
        train_steps_run += 1;
        trajectory.push(record(cfg.warmup_steps + k, Phase::Train, &dist, report.best_score(table.higher_is_better)));
    }

    let found = dist.argmax();
    let found_score = lookup(table, &found)?;
    let regret = if table.higher_is_better { best_score - found_score } else { found_score - best_score };
    Ok(SearchResult {
        rank: table.rank_of(found_score),
        found,
        found_score,
        best,
        best_score,
        regret,
        table_size: space.size()?,
        warmup_steps: cfg.warmup_steps,
        train_steps_run,
        lookups: budget.used,
        final_dist: dist,
        trajectory,
    })
}
