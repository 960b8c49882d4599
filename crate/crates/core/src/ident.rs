//! Cross-comparison of every AM photograph against every PM mesh, per-AM
//! rankings, ranking statistics and CMC curves.
//!
//! Scores are only ever compared within one AM row: landmark RMSE values
//! depend on the photograph's resolution, so ranking across rows would be
//! meaningless.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{AmCase, PmCase};
use crate::mvmo::OptimizerConfig;
use crate::pnpf::{score_landmark_comparison, SolverOptions};
use crate::regfit::{region_outcome, DEFAULT_RESTARTS};
use crate::score::{ComparisonScore, Method};

#[derive(Debug, Error)]
pub enum IdentError {
    #[error("missing score for AM {am_id} against PM {pm_id}")]
    MissingScores { am_id: String, pm_id: String },
    #[error("score for AM {found} passed to the ranking of AM {expected}")]
    MixedRows { expected: String, found: String },
    #[error("duplicate score for AM {am_id} against PM {pm_id}")]
    DuplicateCell { am_id: String, pm_id: String },
    #[error("truth '{truth}' of AM {am_id} is not among the candidates")]
    UnknownTruth { am_id: String, truth: String },
    #[error("empty input")]
    EmptyInput,
    #[error("position {position} outside 1..={n}")]
    PositionOutOfRange { position: usize, n: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("score matrix: {0}")]
    Csv(String),
}

/// A candidate in one AM's ranked list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate {
    pub pm_id: String,
    /// `None` when unscorable.
    pub score: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmRanking {
    pub am_id: String,
    pub candidates: Vec<RankedCandidate>,
    /// 1-based position of the true PM, when the truth is known.
    pub correct_position: Option<usize>,
}

/// Orders one AM row: ascending score, unscorable entries last, ties broken
/// by PM id. `pm_ids` lists every PM that must have a cell in `scores`.
pub fn build_ranking(
    am_id: &str,
    scores: &[ComparisonScore],
    pm_ids: &[String],
    truth: Option<&str>,
) -> Result<AmRanking, IdentError> {
    let mut by_pm: HashMap<&str, &ComparisonScore> = HashMap::with_capacity(scores.len());
    for s in scores {
        if s.am_id != am_id {
            return Err(IdentError::MixedRows {
                expected: am_id.to_string(),
                found: s.am_id.clone(),
            });
        }
        if by_pm.insert(&s.pm_id, s).is_some() {
            return Err(IdentError::DuplicateCell {
                am_id: am_id.to_string(),
                pm_id: s.pm_id.clone(),
            });
        }
    }
    let mut candidates = Vec::with_capacity(pm_ids.len());
    for pm in pm_ids {
        let s = by_pm.get(pm.as_str()).ok_or_else(|| IdentError::MissingScores {
            am_id: am_id.to_string(),
            pm_id: pm.clone(),
        })?;
        let score = (!s.unscorable && s.score.is_finite()).then_some(s.score);
        candidates.push(RankedCandidate {
            pm_id: pm.clone(),
            score,
        });
    }
    candidates.sort_by(compare_candidates);
    let correct_position = match truth {
        None => None,
        Some(t) => Some(
            candidates
                .iter()
                .position(|c| c.pm_id == t)
                .ok_or_else(|| IdentError::UnknownTruth {
                    am_id: am_id.to_string(),
                    truth: t.to_string(),
                })?
                + 1,
        ),
    };
    Ok(AmRanking {
        am_id: am_id.to_string(),
        candidates,
        correct_position,
    })
}

fn compare_candidates(a: &RankedCandidate, b: &RankedCandidate) -> Ordering {
    let by_score = match (a.score, b.score) {
        (Some(x), Some(y)) => x.total_cmp(&y),
        (Some(_), None) => Ordering::Less,
        (None, Some(_)) => Ordering::Greater,
        (None, None) => Ordering::Equal,
    };
    by_score.then_with(|| a.pm_id.cmp(&b.pm_id))
}

/// Summary of correct positions over a cohort.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub struct RankingStatistics {
    pub avg: f64,
    pub min: f64,
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub p95: f64,
    pub p99: f64,
    pub max: f64,
}

/// Percentile of an ascending slice with linear interpolation at index
/// `q (n - 1)`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = q * (sorted.len() - 1) as f64;
    let lo = idx.floor() as usize;
    let hi = idx.ceil() as usize;
    sorted[lo] + (idx - lo as f64) * (sorted[hi] - sorted[lo])
}

/// [`percentile`] at a whole percentage, with the interpolation index kept
/// in integer arithmetic so that e.g. the 95th percentile of
/// `[1, 1, 1, 2, 6]` is exactly `5.2`.
pub fn percentile_pct(sorted: &[f64], pct: u32) -> f64 {
    let num = pct as usize * (sorted.len() - 1);
    let (lo, rem) = (num / 100, num % 100);
    if rem == 0 {
        sorted[lo]
    } else {
        sorted[lo] + (sorted[lo + 1] - sorted[lo]) * rem as f64 / 100.0
    }
}

pub fn ranking_statistics(positions: &[usize]) -> Result<RankingStatistics, IdentError> {
    if positions.is_empty() {
        return Err(IdentError::EmptyInput);
    }
    let mut v: Vec<f64> = positions.iter().map(|&p| p as f64).collect();
    v.sort_by(f64::total_cmp);
    Ok(RankingStatistics {
        avg: v.iter().sum::<f64>() / v.len() as f64,
        min: v[0],
        q1: percentile_pct(&v, 25),
        q2: percentile_pct(&v, 50),
        q3: percentile_pct(&v, 75),
        p95: percentile_pct(&v, 95),
        p99: percentile_pct(&v, 99),
        max: v[v.len() - 1],
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmcPoint {
    pub k: usize,
    pub fraction: f64,
}

/// Fraction of positions `<= k` for `k = 1..=n`.
pub fn cmc_curve(positions: &[usize], n: usize) -> Result<Vec<CmcPoint>, IdentError> {
    if positions.is_empty() {
        return Err(IdentError::EmptyInput);
    }
    let mut hist = vec![0usize; n + 1];
    for &p in positions {
        if p == 0 || p > n {
            return Err(IdentError::PositionOutOfRange { position: p, n });
        }
        hist[p] += 1;
    }
    let total = positions.len() as f64;
    let mut acc = 0;
    Ok((1..=n)
        .map(|k| {
            acc += hist[k];
            CmcPoint {
                k,
                fraction: acc as f64 / total,
            }
        })
        .collect())
}

/// Every scored cell of a run, keyed by manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    pub method: Method,
    pub am_ids: Vec<String>,
    pub pm_ids: Vec<String>,
    cells: BTreeMap<(usize, usize), ComparisonScore>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    am_id: String,
    pm_id: String,
    method: String,
    score: f64,
    unscorable: bool,
    seed: Option<u64>,
    evaluations: u64,
}

impl ScoreMatrix {
    pub fn new(method: Method, am_ids: Vec<String>, pm_ids: Vec<String>) -> Self {
        Self {
            method,
            am_ids,
            pm_ids,
            cells: BTreeMap::new(),
        }
    }

    fn index(&self, am: &str, pm: &str) -> Option<(usize, usize)> {
        let i = self.am_ids.iter().position(|a| a == am)?;
        let j = self.pm_ids.iter().position(|p| p == pm)?;
        Some((i, j))
    }

    /// Inserts a cell, replacing any previous value for the same pair.
    pub fn insert(&mut self, s: ComparisonScore) -> Result<(), IdentError> {
        let key = self.index(&s.am_id, &s.pm_id).ok_or_else(|| {
            IdentError::Csv(format!("cell ({}, {}) is not part of the cohort", s.am_id, s.pm_id))
        })?;
        self.cells.insert(key, s);
        Ok(())
    }

    pub fn get(&self, am: &str, pm: &str) -> Option<&ComparisonScore> {
        self.index(am, pm).and_then(|k| self.cells.get(&k))
    }

    pub fn contains(&self, am: &str, pm: &str) -> bool {
        self.get(am, pm).is_some()
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn is_complete(&self) -> bool {
        self.cells.len() == self.am_ids.len() * self.pm_ids.len()
    }

    /// Cells in AM-major manifest order.
    pub fn cells(&self) -> impl Iterator<Item = &ComparisonScore> {
        self.cells.values()
    }

    /// The cells of one AM row.
    pub fn row(&self, am: &str) -> Vec<ComparisonScore> {
        match self.am_ids.iter().position(|a| a == am) {
            Some(i) => self
                .cells
                .range((i, 0)..(i + 1, 0))
                .map(|(_, s)| s.clone())
                .collect(),
            None => Vec::new(),
        }
    }

    /// Writes `am_id,pm_id,method,score,unscorable,seed,evaluations` rows in
    /// manifest order. Unscorable scores are written as `inf`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<(), IdentError> {
        let mut wr = csv::Writer::from_writer(w);
        for s in self.cells() {
            wr.serialize(CsvRow {
                am_id: s.am_id.clone(),
                pm_id: s.pm_id.clone(),
                method: s.method.to_string(),
                score: s.score,
                unscorable: s.unscorable,
                seed: s.seed,
                evaluations: s.evaluations,
            })
            .map_err(|e| IdentError::Csv(e.to_string()))?;
        }
        wr.flush().map_err(|e| IdentError::Csv(e.to_string()))
    }

    /// Reads a score CSV. Row and column order follow first appearance.
    pub fn read_csv<R: Read>(r: R) -> Result<Self, IdentError> {
        let mut rd = csv::Reader::from_reader(r);
        let mut rows = Vec::new();
        for rec in rd.deserialize::<CsvRow>() {
            rows.push(rec.map_err(|e| IdentError::Csv(e.to_string()))?);
        }
        let first = rows.first().ok_or(IdentError::EmptyInput)?;
        let method: Method = first.method.parse().map_err(IdentError::Csv)?;
        let mut am_ids: Vec<String> = Vec::new();
        let mut pm_ids: Vec<String> = Vec::new();
        for r in &rows {
            if !am_ids.contains(&r.am_id) {
                am_ids.push(r.am_id.clone());
            }
            if !pm_ids.contains(&r.pm_id) {
                pm_ids.push(r.pm_id.clone());
            }
        }
        let mut m = ScoreMatrix::new(method, am_ids, pm_ids);
        for r in rows {
            let row_method: Method = r.method.parse().map_err(IdentError::Csv)?;
            if row_method != method {
                return Err(IdentError::Csv("rows mix registration methods".into()));
            }
            if m.contains(&r.am_id, &r.pm_id) {
                return Err(IdentError::DuplicateCell {
                    am_id: r.am_id,
                    pm_id: r.pm_id,
                });
            }
            m.insert(ComparisonScore {
                am_id: r.am_id,
                pm_id: r.pm_id,
                method,
                score: if r.unscorable { f64::INFINITY } else { r.score },
                unscorable: r.unscorable || !r.score.is_finite(),
                seed: r.seed,
                evaluations: r.evaluations,
                restarts: 0,
                params: None,
                note: None,
            })?;
        }
        Ok(m)
    }
}

/// Rankings and statistics of a scored cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingReport {
    pub method: Method,
    pub n_am: usize,
    pub n_pm: usize,
    pub rankings: Vec<AmRanking>,
    /// Absent when no AM case has a known truth.
    pub statistics: Option<RankingStatistics>,
    pub cmc: Vec<CmcPoint>,
}

impl RankingReport {
    /// Correct positions of the AM cases with a known truth, in AM order.
    pub fn positions(&self) -> Vec<usize> {
        self.rankings.iter().filter_map(|r| r.correct_position).collect()
    }
}

/// Ranks every AM row of `matrix`. `truth` maps AM ids to their true PM.
/// Incomplete rows are an error unless `allow_partial`, in which case they
/// are ranked over the PM cases they do have.
pub fn build_report(
    matrix: &ScoreMatrix,
    truth: &HashMap<String, String>,
    allow_partial: bool,
) -> Result<RankingReport, IdentError> {
    let mut rankings = Vec::with_capacity(matrix.am_ids.len());
    for am in &matrix.am_ids {
        let row = matrix.row(am);
        if row.is_empty() && allow_partial {
            continue;
        }
        let pm_ids: Vec<String> = if allow_partial {
            row.iter().map(|s| s.pm_id.clone()).collect()
        } else {
            matrix.pm_ids.clone()
        };
        let t = truth.get(am).map(String::as_str);
        let t = t.filter(|t| !allow_partial || pm_ids.iter().any(|p| p == t));
        rankings.push(build_ranking(am, &row, &pm_ids, t)?);
    }
    let positions: Vec<usize> = rankings.iter().filter_map(|r| r.correct_position).collect();
    let (statistics, cmc) = if positions.is_empty() {
        (None, Vec::new())
    } else {
        (
            Some(ranking_statistics(&positions)?),
            cmc_curve(&positions, matrix.pm_ids.len())?,
        )
    };
    Ok(RankingReport {
        method: matrix.method,
        n_am: matrix.am_ids.len(),
        n_pm: matrix.pm_ids.len(),
        rankings,
        statistics,
        cmc,
    })
}

/// Everything needed to score one cell, independent of every other cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CellConfig {
    pub method: Method,
    pub optimizer: OptimizerConfig,
    pub restarts: usize,
    pub solver: SolverOptions,
    pub base_seed: u64,
}

impl Default for CellConfig {
    fn default() -> Self {
        Self {
            method: Method::Regions,
            optimizer: OptimizerConfig::default(),
            restarts: DEFAULT_RESTARTS,
            solver: SolverOptions::default(),
            base_seed: 0,
        }
    }
}

/// FNV-1a over the bytes, used to fold case ids into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of one cell: a function of the base seed and the two case ids only,
/// so a cell's result does not depend on scheduling or cohort composition.
pub fn cell_seed(base_seed: u64, am_id: &str, pm_id: &str) -> u64 {
    let mut key = Vec::with_capacity(am_id.len() + pm_id.len() + 1);
    key.extend_from_slice(am_id.as_bytes());
    key.push(0);
    key.extend_from_slice(pm_id.as_bytes());
    // keep headroom so that restart seeds seed + r never wrap
    splitmix64(base_seed ^ fnv1a(&key)) >> 8
}

/// Scores one (AM, PM) pair. Any failure becomes an unscorable cell.
pub fn evaluate_cell(am: &AmCase, pm: &PmCase, cfg: &CellConfig) -> ComparisonScore {
    let unscorable = |reason: String| ComparisonScore::unscorable(&am.id, &pm.id, cfg.method, reason);
    match cfg.method {
        Method::Regions => {
            let seg = match &am.segmentation {
                Ok(s) => s,
                Err(e) => return unscorable(format!("AM segmentation: {e}")),
            };
            let mesh = match &pm.mesh {
                Ok(m) => m,
                Err(e) => return unscorable(format!("PM mesh: {e}")),
            };
            let optimizer = OptimizerConfig {
                seed: cell_seed(cfg.base_seed, &am.id, &pm.id),
                ..cfg.optimizer.clone()
            };
            let outcome = region_outcome(seg, mesh, &am.intrinsics, &optimizer, cfg.restarts);
            ComparisonScore::from_outcome(&am.id, &pm.id, cfg.method, outcome)
        }
        Method::Landmarks(subset) => {
            let l2 = match &am.landmarks {
                Ok(l) => l,
                Err(e) => return unscorable(format!("AM landmarks: {e}")),
            };
            let l3 = match &pm.landmarks {
                Ok(l) => l,
                Err(e) => return unscorable(format!("PM landmarks: {e}")),
            };
            let outcome = score_landmark_comparison(l3, l2, subset, &am.intrinsics, &cfg.solver);
            ComparisonScore::from_outcome(&am.id, &pm.id, cfg.method, outcome)
        }
    }
}

/// Cells per progress callback; the CLI checkpoints at this granularity.
pub const CHECKPOINT_INTERVAL: usize = 100;

/// Scores every (AM, PM) cell not already in `done` on `workers` threads.
/// After each batch of up to [`CHECKPOINT_INTERVAL`] cells, `on_batch`
/// receives the new cells in manifest order. Cells are independent, so the
/// result does not depend on `workers`.
pub fn run_cohort(
    am_cases: &[AmCase],
    pm_cases: &[PmCase],
    cfg: &CellConfig,
    workers: usize,
    done: Option<&ScoreMatrix>,
    mut on_batch: impl FnMut(&[ComparisonScore]) -> Result<(), IdentError>,
) -> Result<ScoreMatrix, IdentError> {
    if workers == 0 {
        return Err(IdentError::InvalidConfig("workers must be >= 1".into()));
    }
    let am_ids: Vec<String> = am_cases.iter().map(|a| a.id.clone()).collect();
    let pm_ids: Vec<String> = pm_cases.iter().map(|p| p.id.clone()).collect();
    let mut matrix = ScoreMatrix::new(cfg.method, am_ids, pm_ids);
    let mut pending = Vec::new();
    for am in am_cases {
        for pm in pm_cases {
            match done.and_then(|d| d.get(&am.id, &pm.id)) {
                Some(s) => matrix.insert(s.clone())?,
                None => pending.push((am, pm)),
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| IdentError::InvalidConfig(e.to_string()))?;
    for batch in pending.chunks(CHECKPOINT_INTERVAL) {
        let scored: Vec<ComparisonScore> = pool.install(|| {
            batch
                .par_iter()
                .map(|(am, pm)| evaluate_cell(am, pm, cfg))
                .collect()
        });
        on_batch(&scored)?;
        for s in scored {
            matrix.insert(s)?;
        }
    }
    Ok(matrix)
}

/// Truth pairing of the AM cases that have one.
pub fn truth_map(am_cases: &[AmCase]) -> HashMap<String, String> {
    am_cases
        .iter()
        .filter_map(|a| a.truth.clone().map(|t| (a.id.clone(), t)))
        .collect()
}
