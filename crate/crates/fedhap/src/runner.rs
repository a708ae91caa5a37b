//! Experiment runner: resolves a run config into a dataset and a federation
//! run, evaluates retrieval on the configured cadence, and writes the
//! report files (`metrics.json`, `rounds.csv`, `config_echo.json`, optional
//! round snapshots). Also hosts the sweep driver and the synthetic-data
//! generator entry point used by the CLI.

use crate::data::{generate_synthetic, load_csv, save_csv, split_indices, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::eval::{
    mean_average_precision, pr_at_topn, precision_recall_curve, CodeDatabase, MapReport, PrPoint,
    TopNPoint,
};
use crate::federation::{
    run_federation, Ablation, FederationConfig, RoundRecord, RoundState,
};
use crate::model::DistanceMetric;
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

fn default_eval_every() -> usize {
    5
}

/// A complete experiment description: the federation config flattened into
/// the same key namespace, a dataset source (exactly one of `dataset_csv`
/// or `synthetic`), and reporting knobs.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunConfig {
    #[serde(flatten)]
    pub federation: FederationConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synthetic: Option<SyntheticSpec>,
    /// Evaluate mAP every this many rounds (round 0 and the final round are
    /// always evaluated; 0 means only those two).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Truncate the mAP ranking to this many items; absent = full ranking.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map_topn: Option<usize>,
    /// Write a round-state snapshot every this many rounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_every: Option<usize>,
    /// Output directory; the CLI `--out` flag overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn synthetic_demo(seed: u64) -> Self {
        RunConfig {
            federation: FederationConfig {
                seed,
                ..FederationConfig::default()
            },
            dataset_csv: None,
            synthetic: Some(SyntheticSpec::benchmark(seed)),
            eval_every: default_eval_every(),
            map_topn: None,
            snapshot_every: None,
            out: None,
        }
    }

    /// Parses a config from JSON, rejecting unknown keys by name.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(text)?;
        let obj = value
            .as_object()
            .ok_or_else(|| Error::config("config must be a JSON object"))?;
        for key in obj.keys() {
            if !KNOWN_KEYS.contains(&key.as_str()) {
                return Err(Error::config(format!(
                    "unknown config key '{key}' (known keys: {})",
                    KNOWN_KEYS.join(", ")
                )));
            }
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.federation.validate()?;
        match (&self.dataset_csv, &self.synthetic) {
            (Some(_), Some(_)) => Err(Error::config(
                "config must name exactly one of dataset_csv or synthetic, not both",
            )),
            (None, None) => Err(Error::config(
                "config must name a dataset: dataset_csv or synthetic",
            )),
            _ => Ok(()),
        }?;
        if self.map_topn == Some(0) {
            return Err(Error::config("map_topn must be positive"));
        }
        if self.snapshot_every == Some(0) {
            return Err(Error::config("snapshot_every must be positive"));
        }
        Ok(())
    }

    pub fn resolve_dataset(&self) -> Result<Dataset> {
        match (&self.dataset_csv, &self.synthetic) {
            (Some(path), None) => load_csv(path),
            (None, Some(spec)) => generate_synthetic(spec),
            _ => Err(Error::config("config must name exactly one dataset source")),
        }
    }
}

/// Every key a config file may use: the flattened federation keys plus the
/// runner's own. A unit test keeps this list in sync with the structs.
const KNOWN_KEYS: &[&str] = &[
    "clients",
    "rounds",
    "local_epochs",
    "code_bits",
    "lr",
    "mu",
    "lambda",
    "distance",
    "margin_a",
    "batch_size",
    "partition",
    "ablation",
    "seed",
    "head_hidden",
    "disc_hidden",
    "generator_loss",
    "round0_prototypes",
    "weighted_fedavg",
    "weighted_prototypes",
    "dataset_csv",
    "synthetic",
    "eval_every",
    "map_topn",
    "snapshot_every",
    "out",
];

/// What `metrics.json` holds after a successful run.
#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub version: u32,
    pub round0_map: f64,
    pub final_map: f64,
    pub final_report: MapReport,
    pub pr_curve: Vec<PrPoint>,
    pub pr_at_topn: Vec<TopNPoint>,
}

const REPORT_VERSION: u32 = 1;
const TOPN_TABLE: &[usize] = &[1, 5, 10, 20, 50, 100, 200, 500];

struct EvalSets {
    queries_feat: Vec<usize>,
    db_feat: Vec<usize>,
}

fn encode_eval_sets(
    state: &RoundState,
    dataset: &Dataset,
    sets: &EvalSets,
) -> Result<(CodeDatabase, CodeDatabase)> {
    let queries = CodeDatabase::encode(
        &state.head,
        dataset.classes(),
        sets.queries_feat
            .iter()
            .map(|&i| (dataset.feature(i), dataset.label(i))),
    )?;
    let db = CodeDatabase::encode(
        &state.head,
        dataset.classes(),
        sets.db_feat
            .iter()
            .map(|&i| (dataset.feature(i), dataset.label(i))),
    )?;
    Ok((queries, db))
}

#[derive(Serialize)]
struct Snapshot<'a> {
    version: u32,
    round: usize,
    head: &'a crate::nn::Network,
    disc: &'a crate::nn::Network,
    prototypes: &'a crate::prototypes::PrototypeSet,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct Diagnostic<'a> {
    version: u32,
    error: String,
    last_completed_round: Option<usize>,
    config: &'a RunConfig,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

fn fmt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders the per-round history as CSV. Cells for skipped evaluations and
/// never-computed loss terms stay empty. Float formatting is the shortest
/// round-trip form, so equal runs produce byte-equal files.
fn rounds_csv(history: &[RoundRecord]) -> String {
    let mut out = String::from("round,map,tl_local,tl_global,quan,adv_d,adv_g\n");
    for rec in history {
        let losses = rec.losses;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            rec.round,
            fmt_cell(rec.map.map(|m| m.map)),
            fmt_cell(losses.map(|l| l.tl_local)),
            fmt_cell(losses.and_then(|l| l.tl_global)),
            fmt_cell(losses.map(|l| l.quan)),
            fmt_cell(losses.and_then(|l| l.adv_d)),
            fmt_cell(losses.and_then(|l| l.adv_g)),
        );
    }
    out
}

fn build_pool(jobs: Option<usize>, clients: usize) -> Result<rayon::ThreadPool> {
    let hardware = std::thread::available_parallelism()
        .map(|n| n.get())
        .unwrap_or(1);
    let threads = match jobs {
        Some(0) => return Err(Error::usage("--jobs must be positive")),
        Some(n) => n,
        None => clients.max(1).min(hardware),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::config(format!("cannot build thread pool: {e}")))
}

/// Executes one experiment into `out_dir`: runs the federation, evaluates
/// on the configured cadence, and writes `config_echo.json`, `rounds.csv`
/// and `metrics.json` (plus optional snapshots). On a training abort it
/// writes `diagnostic.json` before returning the error.
pub fn execute_run(cfg: &RunConfig, out_dir: &Path, jobs: Option<usize>) -> Result<RunSummary> {
    cfg.validate()?;
    let dataset = cfg.resolve_dataset()?;
    let splits = split_indices(&dataset)?;
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("config_echo.json"), cfg)?;

    let sets = EvalSets {
        queries_feat: splits.query.clone(),
        db_feat: splits.db.clone(),
    };
    let total_rounds = cfg.federation.rounds;
    let should_eval = |round: usize| {
        round == 0
            || round == total_rounds
            || (cfg.eval_every > 0 && round % cfg.eval_every == 0)
    };
    let pool = build_pool(jobs, cfg.federation.clients)?;
    log::info!(
        "run: {} clients, {} rounds, {} bits, ablation {:?}, {} threads",
        cfg.federation.clients,
        total_rounds,
        cfg.federation.code_bits,
        cfg.federation.ablation,
        pool.current_num_threads()
    );

    let mut last_round = None;
    let outcome = pool.install(|| {
        run_federation(&cfg.federation, &dataset, &splits.train, |state, _| {
            let map = if should_eval(state.round) {
                let (queries, db) = encode_eval_sets(state, &dataset, &sets)?;
                let report = mean_average_precision(&queries, &db, cfg.map_topn)?;
                log::info!("round {}: mAP {:.4}", state.round, report.map);
                Some(report)
            } else {
                None
            };
            if let Some(every) = cfg.snapshot_every {
                if state.round > 0 && state.round % every == 0 {
                    let snap = Snapshot {
                        version: REPORT_VERSION,
                        round: state.round,
                        head: state.head.net(),
                        disc: state.disc.net(),
                        prototypes: &state.prototypes,
                        config: cfg,
                    };
                    write_json(
                        &out_dir.join(format!("snapshot_round_{:04}.json", state.round)),
                        &snap,
                    )?;
                }
            }
            last_round = Some(state.round);
            Ok(map)
        })
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(err) => {
            let diag = Diagnostic {
                version: REPORT_VERSION,
                error: err.to_string(),
                last_completed_round: last_round,
                config: cfg,
            };
            write_json(&out_dir.join("diagnostic.json"), &diag)?;
            return Err(err);
        }
    };

    std::fs::write(out_dir.join("rounds.csv"), rounds_csv(&outcome.history))?;

    let round0_map = outcome.history[0].map.expect("round 0 always evaluated").map;
    let final_report = outcome
        .history
        .last()
        .and_then(|r| r.map)
        .expect("final round always evaluated");
    let (queries, db) = pool.install(|| encode_eval_sets(&outcome.state, &dataset, &sets))?;
    let ns: Vec<usize> = TOPN_TABLE.iter().copied().filter(|&n| n <= db.len()).collect();
    let (pr_curve, topn) = pool.install(|| -> Result<_> {
        Ok((
            precision_recall_curve(&queries, &db)?,
            pr_at_topn(&queries, &db, &ns)?,
        ))
    })?;
    let summary = RunSummary {
        version: REPORT_VERSION,
        round0_map,
        final_map: final_report.map,
        final_report,
        pr_curve,
        pr_at_topn: topn,
    };
    write_json(&out_dir.join("metrics.json"), &summary)?;
    log::info!(
        "done: mAP {:.4} -> {:.4}, reports in {}",
        summary.round0_map,
        summary.final_map,
        out_dir.display()
    );
    Ok(summary)
}

/// What a sweep varies between runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Ablation,
    Clients,
    Bits,
    Distance,
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ablation" => Ok(SweepAxis::Ablation),
            "clients" => Ok(SweepAxis::Clients),
            "bits" => Ok(SweepAxis::Bits),
            "distance" => Ok(SweepAxis::Distance),
            other => Err(Error::usage(format!(
                "unknown sweep axis '{other}' (valid: ablation, clients, bits, distance)"
            ))),
        }
    }
}

const ABLATION_NAMES: [(&str, Ablation); 4] = [
    ("full", Ablation::Full),
    ("no_prototypes", Ablation::NoPrototypes),
    ("adversarial_only", Ablation::AdversarialOnly),
    ("triplet_only", Ablation::TripletOnly),
];

fn parse_ablation(s: &str) -> Result<Ablation> {
    ABLATION_NAMES
        .iter()
        .find(|(name, _)| *name == s)
        .map(|&(_, a)| a)
        .ok_or_else(|| {
            let names: Vec<&str> = ABLATION_NAMES.iter().map(|(n, _)| *n).collect();
            Error::usage(format!(
                "unknown ablation '{s}' (valid: {})",
                names.join(", ")
            ))
        })
}

fn parse_distance(s: &str) -> Result<DistanceMetric> {
    match s {
        "cosine" => Ok(DistanceMetric::Cosine),
        "euclidean" => Ok(DistanceMetric::Euclidean),
        other => Err(Error::usage(format!(
            "unknown distance '{other}' (valid: cosine, euclidean)"
        ))),
    }
}

fn parse_count(s: &str, what: &str) -> Result<usize> {
    let n: usize = s
        .parse()
        .map_err(|_| Error::usage(format!("{what} value '{s}' is not a positive integer")))?;
    if n == 0 {
        return Err(Error::usage(format!("{what} value must be positive")));
    }
    Ok(n)
}

/// Applies one parsed axis value to a copy of the base config.
fn apply_axis(base: &RunConfig, axis: SweepAxis, value: &str) -> Result<RunConfig> {
    let mut cfg = base.clone();
    match axis {
        SweepAxis::Ablation => cfg.federation.ablation = parse_ablation(value)?,
        SweepAxis::Clients => cfg.federation.clients = parse_count(value, "clients")?,
        SweepAxis::Bits => cfg.federation.code_bits = parse_count(value, "bits")?,
        SweepAxis::Distance => {
            cfg.federation.distance = parse_distance(value)?;
            // A pinned margin rarely suits both metrics; the sweep re-derives
            // the metric default unless the config pinned one explicitly.
        }
    }
    Ok(cfg)
}

/// One row of the sweep's combined CSV.
#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub value: String,
    pub final_map: Option<f64>,
    pub status: String,
}

/// Runs the base config once per axis value into per-value subdirectories
/// and writes a combined `sweep.csv`. All runs share the base seed. A
/// failing run is recorded in its row and the remaining values still run;
/// the first failure is returned after the sweep finishes.
pub fn execute_sweep(
    base: &RunConfig,
    axis: SweepAxis,
    values: &[String],
    out_dir: &Path,
    jobs: Option<usize>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::usage("sweep needs at least one value"));
    }
    let axis_name = match axis {
        SweepAxis::Ablation => "ablation",
        SweepAxis::Clients => "clients",
        SweepAxis::Bits => "bits",
        SweepAxis::Distance => "distance",
    };
    // Validate every value before spending time on any run.
    for v in values {
        apply_axis(base, axis, v)?;
    }
    std::fs::create_dir_all(out_dir)?;
    let mut rows = Vec::with_capacity(values.len());
    let mut first_error = None;
    for v in values {
        let cfg = apply_axis(base, axis, v)?;
        let sub = out_dir.join(format!("{axis_name}-{v}"));
        match execute_run(&cfg, &sub, jobs) {
            Ok(summary) => rows.push(SweepRow {
                value: v.clone(),
                final_map: Some(summary.final_map),
                status: "ok".to_string(),
            }),
            Err(err) => {
                log::error!("sweep value '{v}' failed: {err}");
                rows.push(SweepRow {
                    value: v.clone(),
                    final_map: None,
                    status: format!("error: {}", err.to_string().replace([',', '\n'], ";")),
                });
                first_error.get_or_insert(err);
            }
        }
    }
    let mut csv = String::from("value,final_map,status\n");
    for row in &rows {
        let _ = writeln!(csv, "{},{},{}", row.value, fmt_cell(row.final_map), row.status);
    }
    std::fs::write(out_dir.join("sweep.csv"), csv)?;
    match first_error {
        Some(err) => Err(err),
        None => Ok(rows),
    }
}

/// Reads a synthetic spec (JSON) and writes the generated dataset as CSV.
pub fn generate_data_file(spec_path: &Path, out_csv: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec_path)?;
    let spec: SyntheticSpec = serde_json::from_str(&text)?;
    let dataset = generate_synthetic(&spec)?;
    if let Some(parent) = out_csv.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    save_csv(&dataset, out_csv)?;
    log::info!(
        "wrote {} samples ({} dims, {} classes) to {}",
        dataset.len(),
        dataset.dim(),
        dataset.classes(),
        out_csv.display()
    );
    Ok(())
}
