//! Experiment sweeps over the plan, the channel-mismatch study and the
//! figure-table report. Everything persists under one output directory:
//!
//! ```text
//! models/<model-id>.ckpt       trained weights
//! models/<model-id>.log.json   training log
//! cells/<cell-id>.csv          one evaluated row, written atomically
//! results.csv                  every sweep row in plan order
//! comparison.csv               adaptive minus baseline per cell and seed
//! mismatch.csv                 assumed-vs-actual state rows
//! report/*.csv                 seed-averaged figure tables
//! ```
//!
//! Existing checkpoints and cell files are reused, so an interrupted sweep
//! resumes where it stopped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::config::{DataSource, ExperimentConfig};
use super::dataset::{generate_synthetic, load_manifest, write_atomic, Dataset, Split};
use super::experiment::{evaluate, train, Condition};
use super::metrics::{psnr_from_mse, read_csv, read_results, rows_to_csv, write_results, ResultRow};
use super::HarnessError;
use crate::fading::{ChannelState, Environment, EnvironmentTables};
use crate::jscc::{ChannelContext, JsccModel, ModelKind};

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    let ds = match &cfg.data {
        DataSource::Synthetic(p) => generate_synthetic(p, cfg.seed)?,
        DataSource::Directory { path } => Dataset::load(path)?,
        DataSource::Manifest { path } => load_manifest(path)?,
    };
    if ds.shape != cfg.architecture.input_shape {
        return Err(HarnessError::Config(format!(
            "dataset images are {:?}, architecture expects {:?}",
            ds.shape, cfg.architecture.input_shape
        )));
    }
    Ok(ds)
}

/// What a model was trained for.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub environment: Environment,
    /// Baseline models serve one elevation and state; adaptive models cover
    /// every planned elevation and state of their environment.
    pub elevation_deg: Option<f64>,
    pub state: Option<ChannelState>,
    pub ratio: f64,
    pub seed: u64,
}

impl ModelSpec {
    pub fn baseline(environment: Environment, elevation_deg: f64, state: ChannelState, ratio: f64, seed: u64) -> Self {
        Self { kind: ModelKind::Baseline, environment, elevation_deg: Some(elevation_deg), state: Some(state), ratio, seed }
    }

    pub fn adaptive(environment: Environment, ratio: f64, seed: u64) -> Self {
        Self { kind: ModelKind::Adaptive, environment, elevation_deg: None, state: None, ratio, seed }
    }

    pub fn id(&self) -> String {
        let mut s = format!("{}_{}", self.kind, self.environment);
        if let Some(e) = self.elevation_deg {
            s.push_str(&format!("_e{e}"));
        }
        if let Some(st) = self.state {
            s.push_str(&format!("_{st}"));
        }
        format!("{s}_r{}_s{}", self.ratio, self.seed)
    }
}

/// Shared state of one experiment run.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub dataset: Dataset,
    pub tables: EnvironmentTables,
    pub out: PathBuf,
}

impl Session {
    pub fn open(cfg: ExperimentConfig, out: &Path) -> Result<Self, HarnessError> {
        cfg.validate()?;
        let dataset = load_dataset(&cfg)?;
        let tables = cfg.tables()?;
        fs::create_dir_all(out)?;
        Ok(Self { cfg, dataset, tables, out: out.to_path_buf() })
    }

    /// Link-budget SNR (plus the plan offset) and the tabulated Loo
    /// parameters for one condition.
    pub fn condition(&self, env: Environment, elevation_deg: f64, state: ChannelState) -> Result<Condition, HarnessError> {
        let snr = self.cfg.link.snr_at(elevation_deg).map_err(|e| HarnessError::Config(e.to_string()))?.snr_db
            + self.cfg.plan.snr_offset_db;
        Ok(Condition { state, snr_db: snr, loo: Some(self.tables.lookup(env, elevation_deg, state)?) })
    }

    fn training_conditions(&self, spec: &ModelSpec) -> Result<Vec<Condition>, HarnessError> {
        match spec.kind {
            ModelKind::Baseline => Ok(vec![self.condition(
                spec.environment,
                spec.elevation_deg.ok_or_else(|| HarnessError::Config("baseline spec lacks an elevation".into()))?,
                spec.state.ok_or_else(|| HarnessError::Config("baseline spec lacks a state".into()))?,
            )?]),
            ModelKind::Adaptive => {
                let mut out = Vec::new();
                for &e in &self.cfg.plan.elevations {
                    for &s in &self.cfg.plan.states {
                        out.push(self.condition(spec.environment, e, s)?);
                    }
                }
                Ok(out)
            }
        }
    }

    pub fn model_path(&self, spec: &ModelSpec) -> PathBuf {
        self.out.join("models").join(format!("{}.ckpt", spec.id()))
    }

    /// Loads the checkpoint for `spec`, training and saving it first if
    /// it does not exist yet.
    pub fn model(&self, spec: &ModelSpec) -> Result<JsccModel<f32>, HarnessError> {
        let path = self.model_path(spec);
        if path.exists() {
            return Ok(JsccModel::load(&path)?);
        }
        let arch = self.cfg.architecture_for_ratio(spec.ratio)?;
        let attention = match spec.kind {
            ModelKind::Adaptive => crate::jscc::AttentionConfig { enabled: true, ..self.cfg.attention.clone() },
            ModelKind::Baseline => crate::jscc::AttentionConfig { enabled: false, ..self.cfg.attention.clone() },
        };
        let init = JsccModel::new(arch, attention, spec.seed)?;
        let conditions = self.training_conditions(spec)?;
        let (model, log) = train(init, &self.dataset, &conditions, &self.cfg.channel, &self.cfg.plan.train, spec.seed)?;
        let mut bytes = Vec::new();
        model.write_checkpoint(&mut bytes)?;
        write_atomic(&path, &bytes)?;
        let log_json = serde_json::to_vec_pretty(&log).map_err(|e| HarnessError::Data(e.to_string()))?;
        write_atomic(&path.with_extension("log.json"), &log_json)?;
        Ok(model)
    }

    /// Trains every missing model, independent specs in parallel.
    pub fn prepare_models(&self, specs: &[ModelSpec]) -> Result<(), HarnessError> {
        let mut seen = BTreeSet::new();
        let unique: Vec<&ModelSpec> = specs.iter().filter(|s| seen.insert(s.id())).collect();
        unique.par_iter().map(|s| self.model(s).map(|_| ())).collect::<Result<Vec<_>, _>>()?;
        Ok(())
    }

    /// Evaluates `spec` on the test split with the channel in `actual`
    /// while the model assumes `assumed_state`.
    pub fn evaluate_row(
        &self,
        spec: &ModelSpec,
        environment: Environment,
        elevation_deg: f64,
        assumed_state: ChannelState,
        actual_state: ChannelState,
    ) -> Result<ResultRow, HarnessError> {
        let model = self.model(spec)?;
        let actual = self.condition(environment, elevation_deg, actual_state)?;
        let assumed: ChannelContext = self.condition(environment, elevation_deg, assumed_state)?.context();
        let idx = self.dataset.indices(Split::Test);
        let out = evaluate(&model, &self.dataset, &idx, &actual, &assumed, &self.cfg.channel, &self.cfg.plan.eval, self.cfg.seed)?;
        let row = ResultRow {
            environment: environment.to_string(),
            elevation_deg,
            state_trained: assumed_state.to_string(),
            state_actual: actual_state.to_string(),
            ratio: model.architecture.compression_ratio(),
            channel_filters: model.architecture.channel_filters,
            kind: spec.kind.to_string(),
            seed: spec.seed,
            snr_db: actual.snr_db,
            realizations: out.realizations,
            mse: out.mse,
            psnr_db: psnr_from_mse(out.mse),
        };
        row.check()?;
        Ok(row)
    }

    /// A persisted row, or a freshly evaluated one written atomically.
    fn cell(
        &self,
        cell_id: &str,
        spec: &ModelSpec,
        env: Environment,
        elevation: f64,
        assumed: ChannelState,
        actual: ChannelState,
    ) -> Result<ResultRow, HarnessError> {
        let path = self.out.join("cells").join(format!("{cell_id}.csv"));
        if path.exists() {
            if let Some(row) = read_results(&path)?.into_iter().next() {
                return Ok(row);
            }
        }
        let row = self.evaluate_row(spec, env, elevation, assumed, actual)?;
        write_results(&path, std::slice::from_ref(&row))?;
        Ok(row)
    }
}

fn spec_for(kind: ModelKind, env: Environment, elevation: f64, state: ChannelState, ratio: f64, seed: u64) -> ModelSpec {
    match kind {
        ModelKind::Baseline => ModelSpec::baseline(env, elevation, state, ratio, seed),
        ModelKind::Adaptive => ModelSpec::adaptive(env, ratio, seed),
    }
}

/// Adaptive-minus-baseline PSNR for one cell and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub environment: String,
    pub elevation_deg: f64,
    pub state: String,
    pub ratio: f64,
    pub seed: u64,
    pub psnr_baseline_db: f64,
    pub psnr_adaptive_db: f64,
    pub gap_db: f64,
}

pub struct SweepOutput {
    pub rows: Vec<ResultRow>,
    pub comparison: Vec<ComparisonRow>,
}

/// Trains and evaluates every (environment, elevation, state, ratio, kind,
/// seed) cell of the plan. Writes `results.csv` and, when both model kinds
/// are planned, `comparison.csv`.
pub fn sweep(session: &Session) -> Result<SweepOutput, HarnessError> {
    let plan = &session.cfg.plan;
    let mut cells = Vec::new();
    for &env in &plan.environments {
        for &elevation in &plan.elevations {
            for &state in &plan.states {
                for &ratio in &plan.ratios {
                    for &kind in &plan.kinds {
                        for &seed in &plan.seeds {
                            cells.push((env, elevation, state, ratio, kind, seed));
                        }
                    }
                }
            }
        }
    }
    let specs: Vec<ModelSpec> = cells.iter().map(|&(e, el, st, r, k, s)| spec_for(k, e, el, st, r, s)).collect();
    session.prepare_models(&specs)?;
    let rows = cells
        .par_iter()
        .zip(&specs)
        .map(|(&(env, el, st, ratio, kind, seed), spec)| {
            let id = format!("sweep_{}_{env}_e{el}_{st}_r{ratio}_s{seed}", kind);
            session.cell(&id, spec, env, el, st, st)
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_results(&session.out.join("results.csv"), &rows)?;
    let comparison = comparison_rows(&rows);
    if !comparison.is_empty() {
        write_atomic(&session.out.join("comparison.csv"), &rows_to_csv(&comparison)?)?;
    }
    Ok(SweepOutput { rows, comparison })
}

pub fn comparison_rows(rows: &[ResultRow]) -> Vec<ComparisonRow> {
    let key = |r: &ResultRow| (r.environment.clone(), r.elevation_deg.to_bits(), r.state_actual.clone(), r.ratio.to_bits(), r.seed);
    let mut base = BTreeMap::new();
    let mut adapt = BTreeMap::new();
    for r in rows.iter().filter(|r| r.state_trained == r.state_actual) {
        match r.kind.as_str() {
            "baseline" => base.insert(key(r), r),
            "adaptive" => adapt.insert(key(r), r),
            _ => None,
        };
    }
    // plan order, taken from the first appearance of each baseline row
    let mut out = Vec::new();
    let mut done = BTreeSet::new();
    for r in rows {
        let k = key(r);
        if let (Some(b), Some(a)) = (base.get(&k), adapt.get(&k)) {
            if done.insert(k) {
                out.push(ComparisonRow {
                    environment: b.environment.clone(),
                    elevation_deg: b.elevation_deg,
                    state: b.state_actual.clone(),
                    ratio: b.ratio,
                    seed: b.seed,
                    psnr_baseline_db: b.psnr_db,
                    psnr_adaptive_db: a.psnr_db,
                    gap_db: a.psnr_db - b.psnr_db,
                });
            }
        }
    }
    out
}

/// Assumed/actual state pairs: both mismatch directions and their matched
/// controls.
pub const MISMATCH_PAIRS: [(ChannelState, ChannelState); 4] = [
    (ChannelState::DeepShadow, ChannelState::Los),
    (ChannelState::Los, ChannelState::DeepShadow),
    (ChannelState::Los, ChannelState::Los),
    (ChannelState::DeepShadow, ChannelState::DeepShadow),
];

/// Evaluates each model (baseline: the one trained for the assumed state;
/// adaptive: its context set to the assumed state) while the channel is in
/// the actual state. Writes `mismatch.csv`.
pub fn mismatch(session: &Session) -> Result<Vec<ResultRow>, HarnessError> {
    let plan = &session.cfg.plan;
    let mut jobs = Vec::new();
    for &env in &plan.environments {
        for &el in &plan.elevations {
            for &ratio in &plan.ratios {
                for &kind in &plan.kinds {
                    for &seed in &plan.seeds {
                        for &(assumed, actual) in &MISMATCH_PAIRS {
                            jobs.push((env, el, ratio, kind, seed, assumed, actual));
                        }
                    }
                }
            }
        }
    }
    let specs: Vec<ModelSpec> = jobs.iter().map(|&(e, el, r, k, s, a, _)| spec_for(k, e, el, a, r, s)).collect();
    session.prepare_models(&specs)?;
    let rows = jobs
        .par_iter()
        .zip(&specs)
        .map(|(&(env, el, ratio, kind, seed, assumed, actual), spec)| {
            if assumed == actual {
                let id = format!("sweep_{kind}_{env}_e{el}_{actual}_r{ratio}_s{seed}");
                session.cell(&id, spec, env, el, assumed, actual)
            } else {
                let id = format!("mismatch_{kind}_{env}_e{el}_{assumed}_as_{actual}_r{ratio}_s{seed}");
                session.cell(&id, spec, env, el, assumed, actual)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    write_results(&session.out.join("mismatch.csv"), &rows)?;
    Ok(rows)
}

/// Seed-averaged PSNR for one figure point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub environment: String,
    pub elevation_deg: f64,
    pub state_trained: String,
    pub state_actual: String,
    pub ratio: f64,
    pub kind: String,
    pub seeds: usize,
    pub psnr_mean_db: f64,
    pub psnr_sd_db: f64,
    pub mse_mean: f64,
}

pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, u64, String, String, u64, String), Vec<&ResultRow>> = BTreeMap::new();
    for r in rows {
        let k = (r.environment.clone(), r.elevation_deg.to_bits(), r.state_trained.clone(), r.state_actual.clone(), r.ratio.to_bits(), r.kind.clone());
        if !groups.contains_key(&k) {
            order.push(k.clone());
        }
        groups.entry(k).or_default().push(r);
    }
    order
        .into_iter()
        .map(|k| {
            let g = &groups[&k];
            let n = g.len() as f64;
            let mean = g.iter().map(|r| r.psnr_db).sum::<f64>() / n;
            let sd = if g.len() > 1 { (g.iter().map(|r| (r.psnr_db - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() } else { 0.0 };
            AggregateRow {
                environment: k.0.clone(),
                elevation_deg: g[0].elevation_deg,
                state_trained: k.2.clone(),
                state_actual: k.3.clone(),
                ratio: g[0].ratio,
                kind: k.5.clone(),
                seeds: g.len(),
                psnr_mean_db: mean,
                psnr_sd_db: sd,
                mse_mean: g.iter().map(|r| r.mse).sum::<f64>() / n,
            }
        })
        .collect()
}

/// Mean adaptive-minus-baseline gap per cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub environment: String,
    pub elevation_deg: f64,
    pub state: String,
    pub ratio: f64,
    pub seeds: usize,
    pub psnr_baseline_db: f64,
    pub psnr_adaptive_db: f64,
    pub gap_db: f64,
}

/// Writes `report/states.csv`, `report/ratios.csv`, `report/comparison.csv`
/// and `report/mismatch.csv` from whatever result files exist in `out`.
/// Returns the files written.
pub fn report(out: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let dir = out.join("report");
    let mut written = Vec::new();
    let results = out.join("results.csv");
    if results.exists() {
        let rows = read_results(&results)?;
        let agg = aggregate(&rows);
        let p = dir.join("states.csv");
        write_atomic(&p, &rows_to_csv(&agg)?)?;
        written.push(p);
        let mut by_ratio = agg.clone();
        by_ratio.sort_by(|a, b| {
            (&a.environment, a.elevation_deg.to_bits(), &a.state_actual, &a.kind, a.ratio.to_bits())
                .cmp(&(&b.environment, b.elevation_deg.to_bits(), &b.state_actual, &b.kind, b.ratio.to_bits()))
        });
        let p = dir.join("ratios.csv");
        write_atomic(&p, &rows_to_csv(&by_ratio)?)?;
        written.push(p);
        let cmp = comparison_rows(&rows);
        if !cmp.is_empty() {
            let mut groups: Vec<(String, u64, String, u64)> = Vec::new();
            let mut acc: BTreeMap<(String, u64, String, u64), Vec<&ComparisonRow>> = BTreeMap::new();
            for c in &cmp {
                let k = (c.environment.clone(), c.elevation_deg.to_bits(), c.state.clone(), c.ratio.to_bits());
                if !acc.contains_key(&k) {
                    groups.push(k.clone());
                }
                acc.entry(k).or_default().push(c);
            }
            let gaps: Vec<GapRow> = groups
                .into_iter()
                .map(|k| {
                    let g = &acc[&k];
                    let n = g.len() as f64;
                    GapRow {
                        environment: k.0.clone(),
                        elevation_deg: g[0].elevation_deg,
                        state: k.2.clone(),
                        ratio: g[0].ratio,
                        seeds: g.len(),
                        psnr_baseline_db: g.iter().map(|c| c.psnr_baseline_db).sum::<f64>() / n,
                        psnr_adaptive_db: g.iter().map(|c| c.psnr_adaptive_db).sum::<f64>() / n,
                        gap_db: g.iter().map(|c| c.gap_db).sum::<f64>() / n,
                    }
                })
                .collect();
            let p = dir.join("comparison.csv");
            write_atomic(&p, &rows_to_csv(&gaps)?)?;
            written.push(p);
        }
    }
    let mm = out.join("mismatch.csv");
    if mm.exists() {
        let rows = read_results(&mm)?;
        let p = dir.join("mismatch.csv");
        write_atomic(&p, &rows_to_csv(&aggregate(&rows))?)?;
        written.push(p);
    }
    if written.is_empty() {
        return Err(HarnessError::Data(format!("no results.csv or mismatch.csv in {}", out.display())));
    }
    Ok(written)
}

/// Reads a comparison CSV back, e.g. to verify a report.
pub fn read_comparison(path: &Path) -> Result<Vec<ComparisonRow>, HarnessError> {
    read_csv(path)
}
