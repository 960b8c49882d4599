//! Likelihood ratios from kernel density estimates of the match and
//! non-match score populations, and the log-likelihood-ratio cost.
//!
//! `h0` is the same-source hypothesis (the AM and PM cases belong to the
//! same person) and `h1` the different-source one, so `LR > 1` supports a
//! match.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ident::{percentile, ScoreMatrix};

/// Default lower bound applied to both densities before taking their ratio.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-12;

/// Points on each sampled density curve.
pub const DENSITY_CURVE_POINTS: usize = 256;

#[derive(Debug, Error, PartialEq)]
pub enum LrError {
    #[error("bandwidth must be positive and finite, got {0}")]
    NonpositiveBandwidth(f64),
    #[error("empty {0} population")]
    EmptyPopulation(&'static str),
    #[error("likelihood ratios must be positive and finite, got {0}")]
    NonpositiveLr(f64),
    #[error("need at least 2 positive and 2 negative scores, have {positives} and {negatives}")]
    TooFewScores { positives: usize, negatives: usize },
    #[error("non-finite score {0}")]
    NonFiniteScore(f64),
    #[error("writing table: {0}")]
    Io(String),
}

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian kernel density estimate at `x`.
pub fn kde_pdf(samples: &[f64], bandwidth: f64, x: f64) -> Result<f64, LrError> {
    if !(bandwidth > 0.0) || !bandwidth.is_finite() {
        return Err(LrError::NonpositiveBandwidth(bandwidth));
    }
    if samples.is_empty() {
        return Err(LrError::EmptyPopulation("sample"));
    }
    Ok(kde_unchecked(samples, bandwidth, x))
}

fn kde_unchecked(samples: &[f64], h: f64, x: f64) -> f64 {
    let sum: f64 = samples
        .iter()
        .map(|s| {
            let z = (x - s) / h;
            (-0.5 * z * z).exp()
        })
        .sum();
    sum * INV_SQRT_2PI / (samples.len() as f64 * h)
}

/// Silverman's rule of thumb, `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
///
/// Falls back to whichever spread is positive when the other is zero, and
/// to `1e-3 max(1, |mean|)` for a population of identical values.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64, LrError> {
    let n = samples.len();
    if n == 0 {
        return Err(LrError::EmptyPopulation("sample"));
    }
    let mean = samples.iter().sum::<f64>() / n as f64;
    let sd = if n > 1 {
        (samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (percentile(&sorted, 0.75) - percentile(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => return Ok(1e-3 * mean.abs().max(1.0)),
    };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// How each population's bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthRule {
    Silverman,
    /// The same fixed bandwidth, in score units, for both populations.
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrOptions {
    pub bandwidth: BandwidthRule,
    pub floor: f64,
    /// Evaluate each comparison with its own score left out of its
    /// population. Off by default (in-sample evaluation).
    pub leave_one_out: bool,
}

impl Default for LrOptions {
    fn default() -> Self {
        Self {
            bandwidth: BandwidthRule::Silverman,
            floor: DEFAULT_DENSITY_FLOOR,
            leave_one_out: false,
        }
    }
}

/// Fitted densities of the match (`h0`) and non-match (`h1`) populations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrModel {
    pub h0_scores: Vec<f64>,
    pub h1_scores: Vec<f64>,
    pub bandwidth_h0: f64,
    pub bandwidth_h1: f64,
    pub floor: f64,
}

impl LrModel {
    pub fn fit(h0_scores: Vec<f64>, h1_scores: Vec<f64>, opts: &LrOptions) -> Result<Self, LrError> {
        if h0_scores.len() < 2 || h1_scores.len() < 2 {
            return Err(LrError::TooFewScores {
                positives: h0_scores.len(),
                negatives: h1_scores.len(),
            });
        }
        if let Some(&s) = h0_scores.iter().chain(&h1_scores).find(|s| !s.is_finite()) {
            return Err(LrError::NonFiniteScore(s));
        }
        let (bandwidth_h0, bandwidth_h1) = match opts.bandwidth {
            BandwidthRule::Silverman => (silverman_bandwidth(&h0_scores)?, silverman_bandwidth(&h1_scores)?),
            BandwidthRule::Fixed(h) => (h, h),
        };
        for h in [bandwidth_h0, bandwidth_h1] {
            if !(h > 0.0) || !h.is_finite() {
                return Err(LrError::NonpositiveBandwidth(h));
            }
        }
        Ok(Self {
            h0_scores,
            h1_scores,
            bandwidth_h0,
            bandwidth_h1,
            floor: opts.floor,
        })
    }

    pub fn pdf_h0(&self, x: f64) -> f64 {
        kde_unchecked(&self.h0_scores, self.bandwidth_h0, x)
    }

    pub fn pdf_h1(&self, x: f64) -> f64 {
        kde_unchecked(&self.h1_scores, self.bandwidth_h1, x)
    }

    /// `max(pdf_h0, floor) / max(pdf_h1, floor)`.
    pub fn likelihood_ratio(&self, score: f64) -> f64 {
        self.pdf_h0(score).max(self.floor) / self.pdf_h1(score).max(self.floor)
    }

    /// LR of a score that is itself a member of one population, evaluated
    /// with that one sample removed. Bandwidths stay those of the full fit.
    fn likelihood_ratio_without(&self, score: f64, positive: bool, index: usize) -> f64 {
        let drop = |v: &[f64]| -> Vec<f64> {
            v.iter()
                .enumerate()
                .filter(|&(i, _)| i != index)
                .map(|(_, &s)| s)
                .collect()
        };
        let (p0, p1) = if positive {
            (kde_unchecked(&drop(&self.h0_scores), self.bandwidth_h0, score), self.pdf_h1(score))
        } else {
            (self.pdf_h0(score), kde_unchecked(&drop(&self.h1_scores), self.bandwidth_h1, score))
        };
        p0.max(self.floor) / p1.max(self.floor)
    }
}

/// Log-likelihood-ratio cost. `lr_h0` are the LRs of same-source
/// comparisons, `lr_h1` those of different-source ones.
pub fn cllr(lr_h0: &[f64], lr_h1: &[f64]) -> Result<f64, LrError> {
    if lr_h0.is_empty() {
        return Err(LrError::EmptyPopulation("h0"));
    }
    if lr_h1.is_empty() {
        return Err(LrError::EmptyPopulation("h1"));
    }
    if let Some(&v) = lr_h0.iter().chain(lr_h1).find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(LrError::NonpositiveLr(v));
    }
    // ln_1p keeps precision for LRs far from 1
    let a: f64 = lr_h0.iter().map(|lr| (1.0 / lr).ln_1p()).sum::<f64>() / lr_h0.len() as f64;
    let b: f64 = lr_h1.iter().map(|lr| lr.ln_1p()).sum::<f64>() / lr_h1.len() as f64;
    Ok(0.5 * (a + b) / std::f64::consts::LN_2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrRow {
    pub am_id: String,
    pub pm_id: String,
    pub score: f64,
    pub positive: bool,
    pub lr: f64,
    pub log10_lr: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPoint {
    pub score: f64,
    pub pdf_h0: f64,
    pub pdf_h1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrReport {
    pub cllr: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Cells left out because they were unscorable or their AM had no truth.
    pub n_excluded: usize,
    pub bandwidth_h0: f64,
    pub bandwidth_h1: f64,
    pub floor: f64,
    pub leave_one_out: bool,
    pub rows: Vec<LrRow>,
    pub density: Vec<DensityPoint>,
}

/// Splits the scored cells into match and non-match populations using
/// `truth` (AM id to true PM id), fits both densities, and reports the LR
/// of every comparison with the resulting `C_llr`.
pub fn fit_and_report(
    matrix: &ScoreMatrix,
    truth: &HashMap<String, String>,
    opts: &LrOptions,
) -> Result<LrReport, LrError> {
    let mut cells = Vec::new();
    let mut excluded = 0;
    for s in matrix.cells() {
        match truth.get(&s.am_id) {
            Some(t) if !s.unscorable && s.score.is_finite() => cells.push((s, *t == s.pm_id)),
            _ => excluded += 1,
        }
    }
    let h0: Vec<f64> = cells.iter().filter(|c| c.1).map(|c| c.0.score).collect();
    let h1: Vec<f64> = cells.iter().filter(|c| !c.1).map(|c| c.0.score).collect();
    let model = LrModel::fit(h0, h1, opts)?;

    let (mut i0, mut i1) = (0, 0);
    let mut rows = Vec::with_capacity(cells.len());
    for (s, positive) in cells {
        let lr = if opts.leave_one_out {
            let idx = if positive { &mut i0 } else { &mut i1 };
            let v = model.likelihood_ratio_without(s.score, positive, *idx);
            *idx += 1;
            v
        } else {
            model.likelihood_ratio(s.score)
        };
        rows.push(LrRow {
            am_id: s.am_id.clone(),
            pm_id: s.pm_id.clone(),
            score: s.score,
            positive,
            lr,
            log10_lr: lr.log10(),
        });
    }
    let lr0: Vec<f64> = rows.iter().filter(|r| r.positive).map(|r| r.lr).collect();
    let lr1: Vec<f64> = rows.iter().filter(|r| !r.positive).map(|r| r.lr).collect();
    let cllr = cllr(&lr0, &lr1)?;
    Ok(LrReport {
        cllr,
        n_positive: lr0.len(),
        n_negative: lr1.len(),
        n_excluded: excluded,
        bandwidth_h0: model.bandwidth_h0,
        bandwidth_h1: model.bandwidth_h1,
        floor: model.floor,
        leave_one_out: opts.leave_one_out,
        rows,
        density: density_curves(&model),
    })
}

/// Both densities sampled over the pooled score range padded by three
/// bandwidths.
pub fn density_curves(model: &LrModel) -> Vec<DensityPoint> {
    let all = model.h0_scores.iter().chain(&model.h1_scores);
    let lo = all.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = all.copied().fold(f64::NEG_INFINITY, f64::max);
    let pad = 3.0 * model.bandwidth_h0.max(model.bandwidth_h1);
    let (lo, hi) = (lo - pad, hi + pad);
    (0..DENSITY_CURVE_POINTS)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (DENSITY_CURVE_POINTS - 1) as f64;
            DensityPoint {
                score: x,
                pdf_h0: model.pdf_h0(x),
                pdf_h1: model.pdf_h1(x),
            }
        })
        .collect()
}

impl LrReport {
    /// `am_id,pm_id,score,LR,log10LR`.
    pub fn write_table<W: Write>(&self, w: W) -> Result<(), LrError> {
        let mut wr = csv::Writer::from_writer(w);
        let io = |e: csv::Error| LrError::Io(e.to_string());
        wr.write_record(["am_id", "pm_id", "score", "LR", "log10LR"]).map_err(io)?;
        for r in &self.rows {
            wr.write_record([
                r.am_id.clone(),
                r.pm_id.clone(),
                r.score.to_string(),
                r.lr.to_string(),
                r.log10_lr.to_string(),
            ])
            .map_err(io)?;
        }
        wr.flush().map_err(|e| LrError::Io(e.to_string()))
    }

    /// `score,pdf_h0,pdf_h1`.
    pub fn write_density<W: Write>(&self, w: W) -> Result<(), LrError> {
        let mut wr = csv::Writer::from_writer(w);
        for p in &self.density {
            wr.serialize(p).map_err(|e| LrError::Io(e.to_string()))?;
        }
        wr.flush().map_err(|e| LrError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::score::{ComparisonScore, Method};

    #[test]
    fn kernel_peak() {
        let h = 0.7;
        let v = kde_pdf(&[2.0], h, 2.0).unwrap();
        assert!((v - 1.0 / (h * (2.0 * std::f64::consts::PI).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn symmetric_samples_give_even_density() {
        for x in [0.1, 0.5, 2.0, 7.0] {
            let a = kde_pdf(&[-1.0, 1.0], 0.4, x).unwrap();
            let b = kde_pdf(&[-1.0, 1.0], 0.4, -x).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn bad_bandwidth_rejected() {
        assert_eq!(kde_pdf(&[1.0], 0.0, 0.0), Err(LrError::NonpositiveBandwidth(0.0)));
        assert!(kde_pdf(&[1.0], -1.0, 0.0).is_err());
    }

    #[test]
    fn lr_examples() {
        let opts = LrOptions {
            bandwidth: BandwidthRule::Fixed(1.0),
            ..Default::default()
        };
        let m = LrModel::fit(vec![0.0, 0.0], vec![10.0, 10.0], &opts).unwrap();
        assert!((m.likelihood_ratio(5.0) - 1.0).abs() < 1e-12);
        assert!(m.likelihood_ratio(0.5) > 1e6);
        let same = LrModel::fit(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], &opts).unwrap();
        for x in [-4.0, 0.0, 1.5, 9.0] {
            assert_eq!(same.likelihood_ratio(x), 1.0);
        }
    }

    #[test]
    fn cllr_examples() {
        assert_eq!(cllr(&[1.0; 5], &[1.0; 3]).unwrap(), 1.0);
        let v = cllr(&[3.0], &[1.0 / 3.0]).unwrap();
        assert!((v - (4.0f64 / 3.0).log2()).abs() < 1e-12, "{v}");
        assert!(cllr(&[1e6], &[1e-6]).unwrap() < 1e-5);
        assert_eq!(cllr(&[], &[1.0]), Err(LrError::EmptyPopulation("h0")));
        assert_eq!(cllr(&[1.0], &[0.0]), Err(LrError::NonpositiveLr(0.0)));
    }

    #[test]
    fn silverman_fallbacks() {
        assert!(silverman_bandwidth(&[2.0, 2.0, 2.0]).unwrap() > 0.0);
        // IQR zero, sd positive
        let h = silverman_bandwidth(&[1.0, 1.0, 1.0, 1.0, 1.0, 9.0]).unwrap();
        assert!(h > 0.0);
    }

    fn cell(am: &str, pm: &str, score: f64) -> ComparisonScore {
        ComparisonScore {
            am_id: am.into(),
            pm_id: pm.into(),
            method: Method::Regions,
            score,
            unscorable: !score.is_finite(),
            seed: None,
            evaluations: 0,
            restarts: 0,
            params: None,
            note: None,
        }
    }

    fn cohort(n: usize) -> (ScoreMatrix, HashMap<String, String>) {
        let ids: Vec<String> = (0..n).map(|i| format!("S{i}")).collect();
        let mut m = ScoreMatrix::new(Method::Regions, ids.clone(), ids.clone());
        for (i, a) in ids.iter().enumerate() {
            for (j, p) in ids.iter().enumerate() {
                let s = if i == j { 0.01 + 0.001 * i as f64 } else { 0.1 + 0.01 * ((i * 7 + j) % 5) as f64 };
                m.insert(cell(a, p, s)).unwrap();
            }
        }
        let truth = ids.iter().map(|i| (i.clone(), i.clone())).collect();
        (m, truth)
    }

    #[test]
    fn report_needs_two_positives() {
        let (m, _) = cohort(3);
        let truth: HashMap<_, _> = [("S0".to_string(), "S0".to_string())].into();
        assert!(matches!(
            fit_and_report(&m, &truth, &LrOptions::default()),
            Err(LrError::TooFewScores { positives: 1, .. })
        ));
    }

    #[test]
    fn separated_cohort_has_low_cllr_in_both_modes() {
        let (m, truth) = cohort(6);
        let a = fit_and_report(&m, &truth, &LrOptions::default()).unwrap();
        let loo = LrOptions {
            leave_one_out: true,
            ..Default::default()
        };
        let b = fit_and_report(&m, &truth, &loo).unwrap();
        assert!(a.cllr < 0.05, "{}", a.cllr);
        assert_ne!(a.rows, b.rows);
        assert!(b.rows.iter().all(|r| r.lr > 0.0));
        assert_eq!(a.n_positive, 6);
        assert_eq!(a.n_negative, 30);
        let mut buf = Vec::new();
        a.write_table(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("am_id,pm_id,score,LR,log10LR\n"));
    }

    #[test]
    fn unscorable_cells_are_excluded() {
        let (mut m, truth) = cohort(4);
        m.insert(cell("S0", "S1", f64::INFINITY)).unwrap();
        let r = fit_and_report(&m, &truth, &LrOptions::default()).unwrap();
        assert_eq!(r.n_excluded, 1);
        assert_eq!(r.n_negative, 11);
    }
}
