//! Subcommand implementations. Each takes fully resolved arguments, so the
//! binary only parses flags and maps errors onto exit codes.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use image::Rgb;
use odontoreg::ident::{build_report, run_cohort, CellConfig, CmcPoint};
use odontoreg::lr::{fit_and_report, LrOptions, LrReport};
use odontoreg::manifest::load_cases;
use odontoreg::overlay::render_overlay;
use odontoreg::synth::{write_cohort, CohortSpec};
use odontoreg::{
    CameraParams, ComparisonScore, Manifest, Method, RankingReport, RankingStatistics, ScoreMatrix,
    SegmentationImage,
};
use serde::{Deserialize, Serialize};

use crate::config::{IntrinsicsConfig, RunConfig};
use crate::error::{io_err, CliError};
use crate::plot::{line_chart, Series};

pub const RUN_FILE: &str = "run.json";
pub const CELLS_FILE: &str = "cells.jsonl";
pub const SCORES_FILE: &str = "scores.csv";
pub const TRUTH_FILE: &str = "truth.json";

const COHORT_OUTPUTS: &[&str] = &["am", "pm", "truth", "manifest.json", "cohort.json"];
const RUN_OUTPUTS: &[&str] = &[RUN_FILE, CELLS_FILE, SCORES_FILE, TRUTH_FILE];

fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text =
        serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn is_empty_dir(dir: &Path) -> Result<bool, CliError> {
    match fs::read_dir(dir) {
        Ok(mut it) => Ok(it.next().is_none()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(true),
        Err(e) => Err(io_err(dir, e)),
    }
}

/// Removes the named entries of `dir`; nothing else in it is touched.
fn remove_outputs(dir: &Path, names: &[&str]) -> Result<(), CliError> {
    for name in names {
        let p = dir.join(name);
        let res = if p.is_dir() {
            fs::remove_dir_all(&p)
        } else if p.exists() {
            fs::remove_file(&p)
        } else {
            Ok(())
        };
        res.map_err(|e| io_err(&p, e))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- synth

/// Writes a synthetic cohort into `out` and returns the manifest path. A
/// non-empty `out` is refused unless `force`, which replaces the cohort
/// files and leaves anything else in place.
pub fn cmd_synth(spec: &CohortSpec, out: &Path, force: bool) -> Result<PathBuf, CliError> {
    if spec.counts.total() == 0 {
        return Err(CliError::Data("cohort spec has no cases".into()));
    }
    if !is_empty_dir(out)? {
        if !force {
            return Err(CliError::Usage(format!(
                "{} is not empty; pass --force to overwrite",
                out.display()
            )));
        }
        remove_outputs(out, COHORT_OUTPUTS)?;
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_cohort(spec, out).map_err(data)
}

// -------------------------------------------------------------- compare

/// Everything a run's cells depend on. A checkpoint is resumed only when
/// this matches exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub manifest_path: PathBuf,
    pub manifest: Manifest,
    pub intrinsics: IntrinsicsConfig,
    pub cell: CellConfig,
}

impl RunRecord {
    fn same_run(&self, other: &RunRecord) -> bool {
        self.manifest == other.manifest
            && self.intrinsics == other.intrinsics
            && self.cell == other.cell
    }
}

/// Summary of a finished comparison run.
#[derive(Debug, Clone)]
pub struct CompareOutcome {
    pub matrix: ScoreMatrix,
    /// Cells restored from an earlier checkpoint.
    pub resumed: usize,
    /// Cells scored by this invocation.
    pub computed: usize,
}

/// Reads a cell checkpoint. A torn final line (interrupted write) is
/// dropped; any other unreadable line is an error.
pub fn read_cells(path: &Path) -> Result<Vec<ComparisonScore>, CliError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path, e)),
    };
    let lines: Vec<String> = BufReader::new(file)
        .lines()
        .collect::<Result<_, _>>()
        .map_err(|e| io_err(path, e))?;
    let mut cells = Vec::with_capacity(lines.len());
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ComparisonScore>(line) {
            Ok(c) => cells.push(c),
            Err(_) if i + 1 == lines.len() => break,
            Err(e) => return Err(io_err(path, format!("line {}: {e}", i + 1))),
        }
    }
    Ok(cells)
}

fn write_cells(path: &Path, cells: &[ComparisonScore]) -> Result<(), CliError> {
    let tmp = path.with_extension("jsonl.tmp");
    {
        let mut w = BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?);
        for c in cells {
            append_cell(&mut w, c).map_err(|e| io_err(&tmp, e))?;
        }
        w.flush().map_err(|e| io_err(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| io_err(path, e))
}

fn append_cell(w: &mut impl Write, c: &ComparisonScore) -> std::io::Result<()> {
    serde_json::to_writer(&mut *w, c)?;
    w.write_all(b"\n")
}

/// Scores every (AM, PM) pair of the manifest into `out`.
///
/// Writes `run.json`, a `cells.jsonl` checkpoint appended every
/// [`odontoreg::ident::CHECKPOINT_INTERVAL`] cells, `truth.json` and finally
/// `scores.csv`. Rerunning on the same directory with the same manifest and
/// configuration scores only the missing cells. A directory holding a
/// different run is refused unless `force`.
pub fn cmd_compare(
    manifest_path: &Path,
    cfg: &RunConfig,
    out: &Path,
    force: bool,
    mut progress: impl FnMut(usize, usize),
) -> Result<CompareOutcome, CliError> {
    cfg.validate()?;
    let manifest = Manifest::load(manifest_path).map_err(data)?;
    let template = cfg.intrinsics.for_image(2, 2);
    let (am, pm) = load_cases(&manifest, cfg.method, &template).map_err(data)?;

    let record = RunRecord {
        manifest_path: manifest_path.to_path_buf(),
        // base_dir is not serialized, so keep it out of the comparison
        manifest: Manifest {
            base_dir: PathBuf::new(),
            ..manifest.clone()
        },
        intrinsics: cfg.intrinsics,
        cell: cfg.cell_config(),
    };
    let run_path = out.join(RUN_FILE);
    let cells_path = out.join(CELLS_FILE);
    let mut done_cells = Vec::new();
    if force {
        remove_outputs(out, RUN_OUTPUTS)?;
    } else if run_path.exists() {
        let previous: RunRecord = read_json(&run_path)?;
        if !previous.same_run(&record) {
            return Err(CliError::Usage(format!(
                "{} holds a run with a different manifest or configuration; pass --force to replace it",
                out.display()
            )));
        }
        done_cells = read_cells(&cells_path)?;
    } else if !is_empty_dir(out)? {
        return Err(CliError::Usage(format!(
            "{} is not empty; pass --force to overwrite",
            out.display()
        )));
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_json(&run_path, &record)?;
    let truth: BTreeMap<&str, &str> = manifest
        .am
        .iter()
        .filter_map(|a| a.truth.as_deref().map(|t| (a.id.as_str(), t)))
        .collect();
    write_json(&out.join(TRUTH_FILE), &truth)?;

    let mut done = ScoreMatrix::new(cfg.method, manifest.am_ids(), manifest.pm_ids());
    for c in done_cells {
        // cells of cases outside the manifest cannot be inserted and are dropped
        let _ = done.insert(c);
    }
    let resumed = done.len();
    // drop any torn tail before appending
    write_cells(&cells_path, &done.cells().cloned().collect::<Vec<_>>())?;

    let total = am.len() * pm.len();
    let mut file = OpenOptions::new()
        .append(true)
        .open(&cells_path)
        .map_err(|e| io_err(&cells_path, e))?;
    let mut scored = resumed;
    progress(scored, total);
    let matrix = run_cohort(&am, &pm, &cfg.cell_config(), cfg.workers(), Some(&done), |batch| {
        let mut w = BufWriter::new(&mut file);
        for c in batch {
            append_cell(&mut w, c).map_err(|e| odontoreg::ident::IdentError::Csv(e.to_string()))?;
        }
        w.flush()
            .and_then(|_| w.get_ref().sync_data())
            .map_err(|e| odontoreg::ident::IdentError::Csv(e.to_string()))?;
        scored += batch.len();
        progress(scored, total);
        Ok(())
    })
    .map_err(data)?;
    drop(file);

    write_cells(&cells_path, &matrix.cells().cloned().collect::<Vec<_>>())?;
    let scores_path = out.join(SCORES_FILE);
    let tmp = out.join("scores.csv.tmp");
    matrix
        .write_csv(BufWriter::new(File::create(&tmp).map_err(|e| io_err(&tmp, e))?))
        .map_err(data)?;
    fs::rename(&tmp, &scores_path).map_err(|e| io_err(&scores_path, e))?;
    Ok(CompareOutcome {
        computed: matrix.len() - resumed,
        matrix,
        resumed,
    })
}

// --------------------------------------------------------------- inputs

/// A score matrix with the truth needed to rank it.
#[derive(Debug, Clone)]
pub struct ScoredRun {
    pub matrix: ScoreMatrix,
    pub truth: HashMap<String, String>,
}

/// Loads the scores of a run directory written by [`cmd_compare`], or a
/// bare score CSV. A run directory without `scores.csv` (an interrupted
/// run) is read from its checkpoint. `manifest`, when given, supplies the
/// truth and the expected case lists.
pub fn load_scores(input: &Path, manifest: Option<&Path>) -> Result<ScoredRun, CliError> {
    let manifest = manifest
        .map(|p| Manifest::load(p).map_err(data))
        .transpose()?;
    let (matrix, mut truth) = if input.is_dir() {
        let record: RunRecord = read_json(&input.join(RUN_FILE))?;
        let truth: HashMap<String, String> = read_json(&input.join(TRUTH_FILE))?;
        let m = manifest.as_ref().unwrap_or(&record.manifest);
        let mut matrix = ScoreMatrix::new(record.cell.method, m.am_ids(), m.pm_ids());
        let scores = input.join(SCORES_FILE);
        if scores.exists() {
            let csv = ScoreMatrix::read_csv(File::open(&scores).map_err(|e| io_err(&scores, e))?)
                .map_err(|e| io_err(&scores, e))?;
            for c in csv.cells() {
                matrix.insert(c.clone()).map_err(|e| io_err(&scores, e))?;
            }
        } else {
            for c in read_cells(&input.join(CELLS_FILE))? {
                matrix.insert(c).map_err(data)?;
            }
        }
        (matrix, truth)
    } else {
        let matrix = ScoreMatrix::read_csv(File::open(input).map_err(|e| io_err(input, e))?)
            .map_err(|e| io_err(input, e))?;
        let matrix = match &manifest {
            Some(m) => {
                let mut full = ScoreMatrix::new(matrix.method, m.am_ids(), m.pm_ids());
                for c in matrix.cells() {
                    full.insert(c.clone()).map_err(|e| io_err(input, e))?;
                }
                full
            }
            None => matrix,
        };
        (matrix, HashMap::new())
    };
    if let Some(m) = &manifest {
        truth = m
            .am
            .iter()
            .filter_map(|a| a.truth.clone().map(|t| (a.id.clone(), t)))
            .collect();
    }
    Ok(ScoredRun { matrix, truth })
}

// --------------------------------------------------------------- report

/// LR summary without the per-comparison rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSummary {
    pub cllr: f64,
    pub n_positive: usize,
    pub n_negative: usize,
    pub n_excluded: usize,
    pub bandwidth_h0: f64,
    pub bandwidth_h1: f64,
    pub floor: f64,
    pub leave_one_out: bool,
}

impl From<&LrReport> for LrSummary {
    fn from(r: &LrReport) -> Self {
        Self {
            cllr: r.cllr,
            n_positive: r.n_positive,
            n_negative: r.n_negative,
            n_excluded: r.n_excluded,
            bandwidth_h0: r.bandwidth_h0,
            bandwidth_h1: r.bandwidth_h1,
            floor: r.floor,
            leave_one_out: r.leave_one_out,
        }
    }
}

/// Contents of `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub method: Method,
    pub n_am: usize,
    pub n_pm: usize,
    pub n_cells: usize,
    pub complete: bool,
    pub statistics: Option<RankingStatistics>,
    pub cmc: Vec<CmcPoint>,
    pub rankings: Vec<RankingEntry>,
    pub lr: Option<LrSummary>,
    /// Why no LR could be fitted, when `lr` is absent.
    pub lr_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub am_id: String,
    pub truth: Option<String>,
    pub correct_position: Option<usize>,
    /// PM ids from best to worst.
    pub ranking: Vec<String>,
}

fn check_complete(matrix: &ScoreMatrix, allow_partial: bool) -> Result<(), CliError> {
    if !matrix.is_complete() && !allow_partial {
        return Err(CliError::Data(format!(
            "score matrix has {} of {} cells; pass --allow-partial to report anyway",
            matrix.len(),
            matrix.am_ids.len() * matrix.pm_ids.len()
        )));
    }
    Ok(())
}

/// Ranks every AM row and fits the LR model, writing into `out`:
/// `report.json`, `statistics.csv`, `rankings.csv`, `cmc.csv`, `cmc.png`
/// and the [`cmd_lr`] files when an LR model can be fitted.
pub fn cmd_report(
    run: &ScoredRun,
    lr_opts: &LrOptions,
    out: &Path,
    allow_partial: bool,
) -> Result<ReportFile, CliError> {
    check_complete(&run.matrix, allow_partial)?;
    let ranking = build_report(&run.matrix, &run.truth, allow_partial).map_err(data)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let (lr, lr_error) = match fit_and_report(&run.matrix, &run.truth, lr_opts) {
        Ok(r) => {
            write_lr_files(&r, out)?;
            (Some(LrSummary::from(&r)), None)
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let file = report_file(&run.matrix, &ranking, &run.truth, lr, lr_error);
    write_json(&out.join("report.json"), &file)?;
    write_statistics(&out.join("statistics.csv"), ranking.statistics.as_ref())?;
    write_rankings(&out.join("rankings.csv"), &file.rankings)?;
    write_cmc(out, &ranking.cmc)?;
    Ok(file)
}

fn report_file(
    matrix: &ScoreMatrix,
    ranking: &RankingReport,
    truth: &HashMap<String, String>,
    lr: Option<LrSummary>,
    lr_error: Option<String>,
) -> ReportFile {
    ReportFile {
        method: ranking.method,
        n_am: ranking.n_am,
        n_pm: ranking.n_pm,
        n_cells: matrix.len(),
        complete: matrix.is_complete(),
        statistics: ranking.statistics,
        cmc: ranking.cmc.clone(),
        rankings: ranking
            .rankings
            .iter()
            .map(|r| RankingEntry {
                am_id: r.am_id.clone(),
                truth: truth.get(&r.am_id).cloned(),
                correct_position: r.correct_position,
                ranking: r.candidates.iter().map(|c| c.pm_id.clone()).collect(),
            })
            .collect(),
        lr,
        lr_error,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    csv::Writer::from_path(path).map_err(|e| io_err(path, e))
}

fn write_statistics(path: &Path, stats: Option<&RankingStatistics>) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| io_err(path, e);
    w.write_record(["AVG", "MIN", "Q1", "Q2", "Q3", "P95", "P99", "MAX"])
        .map_err(err)?;
    if let Some(s) = stats {
        let v = [s.avg, s.min, s.q1, s.q2, s.q3, s.p95, s.p99, s.max];
        w.write_record(v.iter().map(|x| x.to_string())).map_err(err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_rankings(path: &Path, rows: &[RankingEntry]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    let err = |e: csv::Error| io_err(path, e);
    w.write_record(["am_id", "truth", "correct_position", "best_pm"])
        .map_err(err)?;
    for r in rows {
        w.write_record([
            r.am_id.clone(),
            r.truth.clone().unwrap_or_default(),
            r.correct_position.map(|p| p.to_string()).unwrap_or_default(),
            r.ranking.first().cloned().unwrap_or_default(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_cmc(out: &Path, cmc: &[CmcPoint]) -> Result<(), CliError> {
    let path = out.join("cmc.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["k", "fraction"]).map_err(|e| io_err(&path, e))?;
    for p in cmc {
        w.write_record([p.k.to_string(), p.fraction.to_string()])
            .map_err(|e| io_err(&path, e))?;
    }
    w.flush().map_err(|e| io_err(&path, e))?;
    let pts: Vec<(f64, f64)> = cmc.iter().map(|p| (p.k as f64, p.fraction)).collect();
    let x_max = pts.last().map_or(1.0, |p| p.0.max(2.0));
    let img = line_chart(
        &[Series {
            points: &pts,
            color: Rgb([0, 90, 200]),
        }],
        (1.0, x_max),
        (0.0, 1.0),
    );
    let png = out.join("cmc.png");
    img.save(&png).map_err(|e| io_err(&png, e))
}

fn write_lr_files(r: &LrReport, out: &Path) -> Result<(), CliError> {
    let table = out.join("lr.csv");
    r.write_table(BufWriter::new(File::create(&table).map_err(|e| io_err(&table, e))?))
        .map_err(|e| io_err(&table, e))?;
    let dens = out.join("density.csv");
    r.write_density(BufWriter::new(File::create(&dens).map_err(|e| io_err(&dens, e))?))
        .map_err(|e| io_err(&dens, e))?;
    let h0: Vec<(f64, f64)> = r.density.iter().map(|d| (d.score, d.pdf_h0)).collect();
    let h1: Vec<(f64, f64)> = r.density.iter().map(|d| (d.score, d.pdf_h1)).collect();
    let x = (
        r.density.first().map_or(0.0, |d| d.score),
        r.density.last().map_or(1.0, |d| d.score),
    );
    let y_max = r
        .density
        .iter()
        .map(|d| d.pdf_h0.max(d.pdf_h1))
        .fold(0.0, f64::max);
    let img = line_chart(
        &[
            Series {
                points: &h0,
                color: Rgb([0, 160, 0]),
            },
            Series {
                points: &h1,
                color: Rgb([200, 0, 0]),
            },
        ],
        x,
        (0.0, if y_max > 0.0 { y_max * 1.05 } else { 1.0 }),
    );
    let png = out.join("density.png");
    img.save(&png).map_err(|e| io_err(&png, e))?;
    write_json(&out.join("lr.json"), &LrSummary::from(r))
}

/// Fits the LR model alone, writing `lr.json`, `lr.csv`, `density.csv` and
/// `density.png` into `out`.
pub fn cmd_lr(
    run: &ScoredRun,
    lr_opts: &LrOptions,
    out: &Path,
    allow_partial: bool,
) -> Result<LrReport, CliError> {
    check_complete(&run.matrix, allow_partial)?;
    let r = fit_and_report(&run.matrix, &run.truth, lr_opts).map_err(data)?;
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    write_lr_files(&r, out)?;
    Ok(r)
}

// -------------------------------------------------------------- overlay

/// Where the registration parameters of an overlay come from.
#[derive(Debug, Clone)]
pub enum ParamsSource {
    /// The stored cell of a run directory.
    Run(PathBuf),
    /// A JSON file holding one set of camera parameters.
    File(PathBuf),
}

/// Renders the overlay of one (AM, PM) pair at stored parameters into the
/// PNG `out`. A cell without parameters is a MissingParams data error.
pub fn cmd_overlay(
    manifest_path: &Path,
    am_id: &str,
    pm_id: &str,
    params: Option<&ParamsSource>,
    intrinsics: &IntrinsicsConfig,
    out: &Path,
) -> Result<CameraParams, CliError> {
    let missing = |why: String| CliError::Data(format!("MissingParams: {why}"));
    let params = match params {
        None => return Err(missing("pass --run DIR or --params FILE".into())),
        Some(ParamsSource::File(p)) => read_json::<CameraParams>(p)?,
        Some(ParamsSource::Run(dir)) => {
            let cells = read_cells(&dir.join(CELLS_FILE))?;
            let cell = cells
                .iter()
                .find(|c| c.am_id == am_id && c.pm_id == pm_id)
                .ok_or_else(|| missing(format!("no cell for AM {am_id} against PM {pm_id}")))?;
            cell.params
                .ok_or_else(|| missing(format!("cell AM {am_id} against PM {pm_id} has no parameters")))?
        }
    };
    let manifest = Manifest::load(manifest_path).map_err(data)?;
    let am = manifest
        .am
        .iter()
        .find(|a| a.id == am_id)
        .ok_or_else(|| CliError::Data(format!("unknown AM case {am_id}")))?;
    let pm = manifest
        .pm
        .iter()
        .find(|p| p.id == pm_id)
        .ok_or_else(|| CliError::Data(format!("unknown PM case {pm_id}")))?;
    let seg_path = am
        .segmentation
        .as_ref()
        .map(|p| manifest.resolve(p))
        .ok_or_else(|| CliError::Data(format!("case {am_id}: no segmentation listed")))?;
    let seg = SegmentationImage::load_png(&seg_path)
        .map_err(|e| CliError::Data(format!("case {am_id}: {e}")))?;
    let mesh = odontoreg::mesh::load_mesh(&manifest.resolve(&pm.mesh))
        .map_err(|e| CliError::Data(format!("case {pm_id}: {e}")))?;
    let photo = match &am.photo {
        Some(p) => {
            let p = manifest.resolve(p);
            Some(image::open(&p).map_err(|e| io_err(&p, e))?.to_rgb8())
        }
        None => None,
    };
    let ic = intrinsics.for_image(am.image_size[0], am.image_size[1]);
    let img = render_overlay(&seg, &mesh, &params, &ic, photo.as_ref());
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    img.save_with_format(out, image::ImageFormat::Png)
        .map_err(|e| io_err(out, e))?;
    Ok(params)
}
