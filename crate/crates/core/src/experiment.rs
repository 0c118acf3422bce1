//! End-to-end experiment commands: generate a bundle, train on it, evaluate
//! learned embeddings and sweep a parameter over a grid.
//!
//! All commands share one flat JSON configuration; unknown keys are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bundle::{
    read_bundle, read_json, read_matrix, write_bundle, write_file, write_history, write_json,
    write_matrix, HISTORY_FILE, ITEMS_LEARNED_FILE, USERS_LEARNED_FILE,
};
use crate::datagen::{apply_gaussian_noise, apply_swap_noise, generate_dataset, GenConfig};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport};
use crate::model::{AffinityParams, Dataset, EmbeddingMatrix};
use crate::trainer::{train, InitScheme, TrainConfig, TrainOutcome};

pub const EVAL_FILE: &str = "eval.json";
pub const SWEEP_FILE: &str = "sweep.csv";

pub const SWEEP_HEADER: [&str; 9] = [
    "grid_param",
    "grid_value",
    "repeat",
    "seed",
    "final_loss",
    "final_f1_micro",
    "final_f1_macro",
    "final_mean_embed_dist",
    "error",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Epsilon,
    GaussRho,
    SwapRho,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Epsilon => "epsilon",
            SweepParam::GaussRho => "gauss_rho",
            SweepParam::SwapRho => "swap_rho",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [SweepParam::Epsilon, SweepParam::GaussRho, SweepParam::SwapRho]
            .into_iter()
            .find(|p| p.name() == name)
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    // generation
    pub n: usize,
    pub m: usize,
    pub d: usize,
    pub k: usize,
    pub alpha: f64,
    pub cluster_spread: f64,
    pub dirichlet_conc: f64,
    pub extra_spots_per_item: usize,
    pub seed: u64,
    // training
    pub epsilon: f64,
    pub sinkhorn_iters: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub joint_users: bool,
    pub init_scheme: InitScheme,
    // noise
    pub swap_rho: f64,
    pub gauss_rho: f64,
    // sweeps
    pub sweep_param: SweepParam,
    pub epsilon_values: Vec<f64>,
    pub rho_values: Vec<f64>,
    pub repeats: usize,
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let gen = GenConfig::default();
        let tr = TrainConfig::default();
        ExperimentConfig {
            n: gen.n,
            m: gen.m,
            d: gen.d,
            k: gen.k,
            alpha: gen.alpha,
            cluster_spread: gen.cluster_spread,
            dirichlet_conc: gen.dirichlet_conc,
            extra_spots_per_item: gen.extra_spots_per_item,
            seed: gen.seed,
            epsilon: tr.epsilon,
            sinkhorn_iters: tr.sinkhorn_iters,
            learning_rate: tr.learning_rate,
            epochs: tr.epochs,
            adam_beta1: tr.adam_beta1,
            adam_beta2: tr.adam_beta2,
            adam_eps: tr.adam_eps,
            joint_users: tr.joint_users,
            init_scheme: tr.init_scheme,
            swap_rho: 0.0,
            gauss_rho: 0.0,
            sweep_param: SweepParam::Epsilon,
            epsilon_values: vec![0.05, 0.1, 0.5, 1.0, 2.0],
            rho_values: vec![0.0, 0.2, 0.4, 0.6],
            repeats: 5,
            out_dir: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn gen_config(&self) -> GenConfig {
        GenConfig {
            n: self.n,
            m: self.m,
            d: self.d,
            k: self.k,
            alpha: self.alpha,
            cluster_spread: self.cluster_spread,
            dirichlet_conc: self.dirichlet_conc,
            extra_spots_per_item: self.extra_spots_per_item,
            seed: self.seed,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            sinkhorn_iters: self.sinkhorn_iters,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            adam_beta1: self.adam_beta1,
            adam_beta2: self.adam_beta2,
            adam_eps: self.adam_eps,
            seed: self.seed,
            joint_users: self.joint_users,
            init_scheme: self.init_scheme,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.gen_config().validate()?;
        self.train_config().validate()?;
        for (name, rho) in [("swap_rho", self.swap_rho), ("gauss_rho", self.gauss_rho)] {
            if !(0.0..=1.0).contains(&rho) {
                return Err(Error::param(name, format!("{rho} is outside [0, 1]")));
            }
        }
        if self.repeats == 0 {
            return Err(Error::param("repeats", "must be at least 1"));
        }
        Ok(())
    }

    /// The grid used by [`run_sweep`], validated for the chosen parameter.
    pub fn sweep_grid(&self) -> Result<Vec<f64>> {
        let (field, grid) = match self.sweep_param {
            SweepParam::Epsilon => ("epsilon_values", &self.epsilon_values),
            SweepParam::GaussRho | SweepParam::SwapRho => ("rho_values", &self.rho_values),
        };
        if grid.is_empty() {
            return Err(Error::param(field, "grid must not be empty"));
        }
        for &v in grid {
            let ok = match self.sweep_param {
                SweepParam::Epsilon => v > 0.0 && v.is_finite(),
                _ => (0.0..=1.0).contains(&v),
            };
            if !ok {
                return Err(Error::param(field, format!("{v} is not a valid {}", self.sweep_param)));
            }
        }
        Ok(grid.clone())
    }
}

/// Generates a dataset and writes it as a bundle under `out`.
pub fn run_generate(cfg: &ExperimentConfig, out: &Path) -> Result<Dataset> {
    cfg.validate()?;
    let gen = cfg.gen_config();
    let dataset = generate_dataset(&gen)?;
    write_bundle(out, &dataset, &gen)?;
    Ok(dataset)
}

/// Outcome of one noisy training + evaluation run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains on `dataset` with the configured noise and evaluates against the
/// clean matching.
///
/// Swap noise perturbs the matching used for training. Gaussian noise
/// perturbs the user embeddings used to recover the matching afterwards; in
/// joint mode the learned users take their place.
pub fn run_single(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<RunResult> {
    cfg.validate()?;
    let train_cfg = cfg.train_config();
    let mut training = dataset.clone();
    if cfg.swap_rho > 0.0 {
        training.matching = apply_swap_noise(&dataset.matching, cfg.swap_rho, cfg.seed)?.matching;
    }
    let outcome = train(&training, &train_cfg)?;
    let eval_users = match &outcome.users {
        Some(learned) => learned.clone(),
        None => apply_gaussian_noise(&dataset.users, cfg.gauss_rho, cfg.seed)?,
    };
    let params = AffinityParams::new(cfg.alpha, cfg.epsilon)?;
    let report = evaluate(dataset, &outcome.items, &eval_users, params)?;
    Ok(RunResult { outcome, report })
}

/// Trains on a bundle and writes `history.csv`, `items_learned.csv`,
/// `users_learned.csv` (joint mode) and `eval.json` under `out`.
pub fn run_train(bundle: &Path, cfg: &ExperimentConfig, out: &Path) -> Result<RunResult> {
    let (dataset, _) = read_bundle(bundle)?;
    let run = run_single(&dataset, cfg)?;
    write_history(&out.join(HISTORY_FILE), &run.outcome.history)?;
    write_matrix(&out.join(ITEMS_LEARNED_FILE), run.outcome.items.values())?;
    if let Some(users) = &run.outcome.users {
        write_matrix(&out.join(USERS_LEARNED_FILE), users.values())?;
    }
    write_json(&out.join(EVAL_FILE), &run.report)?;
    Ok(run)
}

/// Evaluates stored item embeddings (and optionally stored user embeddings)
/// against a bundle and writes `eval.json`.
pub fn run_evaluate(
    bundle: &Path,
    items_path: &Path,
    users_path: Option<&Path>,
    cfg: &ExperimentConfig,
    out: &Path,
) -> Result<EvalReport> {
    cfg.validate()?;
    let (dataset, _) = read_bundle(bundle)?;
    let items = EmbeddingMatrix::new(read_matrix(items_path, Some(dataset.dim()))?)?;
    let users = match users_path {
        Some(p) => EmbeddingMatrix::new(read_matrix(p, Some(dataset.dim()))?)?,
        None => apply_gaussian_noise(&dataset.users, cfg.gauss_rho, cfg.seed)?,
    };
    let report = evaluate(&dataset, &items, &users, AffinityParams::new(cfg.alpha, cfg.epsilon)?)?;
    write_json(&out.join(EVAL_FILE), &report)?;
    Ok(report)
}

/// Mixes a master seed with grid and repeat indices (SplitMix64 finalizer).
pub fn derive_seed(master: u64, grid_index: usize, repeat: usize) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(mix(mix(master) ^ grid_index as u64) ^ repeat as u64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub grid_param: SweepParam,
    pub grid_value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub final_loss: Option<f64>,
    pub final_f1_micro: Option<f64>,
    pub final_f1_macro: Option<f64>,
    pub final_mean_embed_dist: Option<f64>,
    pub error: Option<String>,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        self.error.is_some()
    }
}

/// Runs every `(grid value, repeat)` pair of the configured sweep, up to
/// `jobs` at a time. Rows come back sorted by grid index, then repeat.
pub fn sweep(dataset: &Dataset, cfg: &ExperimentConfig, jobs: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let grid = cfg.sweep_grid()?;
    let points: Vec<(usize, f64, usize)> = grid
        .iter()
        .enumerate()
        .flat_map(|(g, &v)| (0..cfg.repeats).map(move |r| (g, v, r)))
        .collect();

    let run_point = |&(g, value, repeat): &(usize, f64, usize)| -> SweepRow {
        let seed = derive_seed(cfg.seed, g, repeat);
        let mut point = cfg.clone();
        point.seed = seed;
        match cfg.sweep_param {
            SweepParam::Epsilon => point.epsilon = value,
            SweepParam::GaussRho => point.gauss_rho = value,
            SweepParam::SwapRho => point.swap_rho = value,
        }
        let mut row = SweepRow {
            grid_param: cfg.sweep_param,
            grid_value: value,
            repeat,
            seed,
            final_loss: None,
            final_f1_micro: None,
            final_f1_macro: None,
            final_mean_embed_dist: None,
            error: None,
        };
        match run_single(dataset, &point) {
            Ok(run) => {
                row.final_loss = run.outcome.history.last().map(|r| r.loss);
                row.final_f1_micro = Some(run.report.f1_micro);
                row.final_f1_macro = Some(run.report.f1_macro);
                row.final_mean_embed_dist = run.report.mean_embed_dist;
            }
            Err(e) => row.error = Some(e.to_string()),
        }
        row
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::Domain(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(|| points.par_iter().map(run_point).collect()))
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn sweep_to_csv(rows: &[SweepRow]) -> String {
    let mut wtr = csv::WriterBuilder::new().from_writer(Vec::new());
    wtr.write_record(SWEEP_HEADER).expect("in-memory write");
    for r in rows {
        wtr.write_record([
            r.grid_param.name().to_string(),
            r.grid_value.to_string(),
            r.repeat.to_string(),
            r.seed.to_string(),
            opt(r.final_loss),
            opt(r.final_f1_micro),
            opt(r.final_f1_macro),
            opt(r.final_mean_embed_dist),
            r.error.clone().unwrap_or_default(),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(source) => Error::io(path, source),
        other => parse_err(0, format!("{other:?}")),
    })?;
    let header = reader
        .headers()
        .map_err(|e| parse_err(1, e.to_string()))?
        .clone();
    if header.iter().ne(SWEEP_HEADER) {
        return Err(parse_err(1, "unexpected sweep.csv header".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let real = |idx: usize| -> Result<Option<f64>> {
            let field = record[idx].trim();
            if field.is_empty() {
                return Ok(None);
            }
            field
                .parse()
                .map(Some)
                .map_err(|_| parse_err(line, format!("`{field}` is not a number in column {}", SWEEP_HEADER[idx])))
        };
        let grid_param = SweepParam::parse(record[0].trim())
            .ok_or_else(|| parse_err(line, format!("unknown grid parameter `{}`", &record[0])))?;
        let grid_value = real(1)?.ok_or_else(|| parse_err(line, "missing grid value".into()))?;
        let int = |idx: usize| -> Result<u64> {
            record[idx]
                .trim()
                .parse()
                .map_err(|_| parse_err(line, format!("`{}` is not an integer in column {}", &record[idx], SWEEP_HEADER[idx])))
        };
        let error = record[8].trim();
        rows.push(SweepRow {
            grid_param,
            grid_value,
            repeat: int(2)? as usize,
            seed: int(3)?,
            final_loss: real(4)?,
            final_f1_micro: real(5)?,
            final_f1_macro: real(6)?,
            final_mean_embed_dist: real(7)?,
            error: (!error.is_empty()).then(|| error.to_string()),
        });
    }
    Ok(rows)
}

/// Runs the sweep over a bundle and writes `sweep.csv`.
pub fn run_sweep(bundle: &Path, cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<Vec<SweepRow>> {
    let (dataset, _) = read_bundle(bundle)?;
    let rows = sweep(&dataset, cfg, jobs)?;
    write_file(&out.join(SWEEP_FILE), &sweep_to_csv(&rows))?;
    Ok(rows)
}

/// Mean final micro-F1 per grid value, in grid order, over successful rows.
pub fn mean_f1_by_grid(rows: &[SweepRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64, usize)> = Vec::new();
    for r in rows {
        let Some(f1) = r.final_f1_micro else { continue };
        match out.iter_mut().find(|(v, _, _)| *v == r.grid_value) {
            Some(entry) => {
                entry.1 += f1;
                entry.2 += 1;
            }
            None => out.push((r.grid_value, f1, 1)),
        }
    }
    out.into_iter().map(|(v, s, c)| (v, s / c as f64)).collect()
}
