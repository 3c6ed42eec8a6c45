//! Stage drivers. Every stage reads its inputs from the output directory,
//! writes its artifacts under `<out>/<stage>/`, and overwrites them on
//! re-runs, so stages can be resumed or repeated one at a time.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use enf_core::demo::{at_resolution, initialize, multitask_graph};
use enf_core::engine::{self, evaluate, train, Net};
use enf_core::prune::{iterative_prune, PruneCriterion, TraceStep};
use enf_core::quant::{
    calibrate, fold_batchnorm, select_mixed_precision, sqnr_db, CalibStats, MixedOutcome, MixedTargets, QAssignment,
    QuantError, QuantizedNet,
};
use enf_core::socsim::{build_schedule, lower_bounds, simulate, LowerBounds, Schedule, ScheduleMode, SimReport};
use enf_core::taskbench::{generate_dataset, DatasetSpec, MetricsReport, Sample};
use enf_core::{Graph, Task};
use serde::{Deserialize, Serialize};

use crate::config::{DataManifest, PipelineConfig, Stage};
use crate::error::CliError;
use crate::export::{export_sample, write_csv, HistoryRow, LayerRow, TraceRow};
use crate::format::{join_graph, load_model, save_model, GraphFile};
use crate::{read_json, write_json};

/// Network versions compared by `schedule`, `simulate` and `report`.
pub const VERSIONS: [&str; 4] = ["unpruned", "pruned", "chained", "mixed"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSummary {
    pub flops: u64,
    pub params: u64,
    pub epochs: usize,
    pub metrics: MetricsReport,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PruneSummary {
    pub criterion: PruneCriterion,
    pub target_flops: u64,
    pub prune_steps: usize,
    pub model: ModelSummary,
    pub trace: Vec<TraceStep>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MixedResult {
    pub targets: MixedTargets,
    pub reached: bool,
    pub outcome: MixedOutcome,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct QuantSummary {
    pub calib_samples: usize,
    pub sqnr_db: BTreeMap<String, f64>,
    /// Validation metrics per precision (`float32`, `int16`, `mixed`).
    pub metrics: BTreeMap<String, MetricsReport>,
    /// Saturated values per tensor of the 16-bit run.
    pub saturated: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AccuracyRow {
    pub version: String,
    pub precision: String,
    pub flops: u64,
    pub params: u64,
    pub det_map: f64,
    pub seg_miou: f64,
    pub soil_f1: f64,
    pub geo_mean: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CostRow {
    pub version: String,
    pub fps: f64,
    pub runtime_ms: f64,
    pub bandwidth_gbps: f64,
    pub footprint_mb: f64,
    pub core_runs: u64,
    pub utilization: f64,
    pub compute_lb_ms: f64,
    pub transfer_lb_ms: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub config_hash: String,
    pub seed: u64,
    pub deploy_image: usize,
    pub cameras: usize,
    pub accuracy: Vec<AccuracyRow>,
    pub cost: Vec<CostRow>,
    pub prune: PruneReport,
    pub mixed: MixedReport,
    pub sqnr_db: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct PruneReport {
    pub criterion: PruneCriterion,
    pub flops_ratio: f64,
    pub params_removed: f64,
    pub steps: usize,
    pub finetune_epochs: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct MixedReport {
    pub targets: MixedTargets,
    pub reached: bool,
    pub eight_bit: Vec<String>,
}

#[derive(Serialize)]
struct CurveRow {
    step: usize,
    flops_ratio: f64,
    params_ratio: f64,
    geo_mean: Option<f64>,
}

/// One pipeline invocation: an effective config and its output root.
pub struct Run {
    pub config: PipelineConfig,
    pub out: PathBuf,
    pub hash: String,
}

fn say(stage: Stage, msg: impl AsRef<str>) {
    eprintln!("[{}] {}", stage.name(), msg.as_ref());
}

impl Run {
    pub fn new(config: PipelineConfig, out: PathBuf) -> Self {
        let hash = config.hash();
        Run { config, out, hash }
    }

    fn dir(&self, stage: Stage) -> Result<PathBuf, CliError> {
        let d = self.out.join(stage.dir());
        fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
        Ok(d)
    }

    /// Path of an artifact another stage should have produced.
    fn require(&self, producer: Stage, file: &str) -> Result<PathBuf, CliError> {
        let p = self.out.join(producer.dir()).join(file);
        if p.is_file() {
            Ok(p)
        } else {
            Err(CliError::MissingArtifact { stage: producer.name(), path: p })
        }
    }

    /// Run one stage; on failure leave `<out>/<stage>/error.json`.
    pub fn stage(&self, stage: Stage) -> Result<(), CliError> {
        let result = match stage {
            Stage::GenData => self.gen_data(),
            Stage::Train => self.train(),
            Stage::Prune => self.prune(),
            Stage::Quantize => self.quantize(),
            Stage::Schedule => self.schedule(),
            Stage::Simulate => self.simulate(),
            Stage::Report => self.report(),
        };
        let err_path = self.out.join(stage.dir()).join("error.json");
        match &result {
            Ok(()) => {
                if err_path.exists() {
                    fs::remove_file(&err_path).map_err(|e| CliError::io(&err_path, e))?;
                }
            }
            Err(e) => {
                say(stage, format!("failed: {e}"));
                if fs::create_dir_all(self.out.join(stage.dir())).is_ok() {
                    // best effort: the original error matters more than this one
                    let _ = write_json(&err_path, &e.record(stage.name()));
                }
            }
        }
        result
    }

    /// Every enabled stage in order, stopping after `until`.
    pub fn pipeline(&self, until: Option<Stage>) -> Result<(), CliError> {
        for stage in Stage::ALL {
            if self.config.stages.contains(&stage) {
                self.stage(stage)?;
            } else {
                say(stage, "disabled, reusing artifacts on disk");
            }
            if Some(stage) == until {
                break;
            }
        }
        Ok(())
    }

    fn manifest(&self) -> Result<DataManifest, CliError> {
        read_json(&self.require(Stage::GenData, "manifest.json")?)
    }

    fn split(spec: &DatasetSpec) -> Result<Vec<Sample>, CliError> {
        Ok(generate_dataset(spec)?)
    }

    fn gen_data(&self) -> Result<(), CliError> {
        let dir = self.dir(Stage::GenData)?;
        let m = self.config.manifest();
        let export = self.config.data.export_pgm;
        for (name, spec) in [("train", &m.train), ("val", &m.val), ("test", &m.test)] {
            let head = DatasetSpec { n_samples: export.clamp(1, spec.n_samples), ..*spec };
            let samples = Self::split(&head)?;
            if export > 0 {
                let d = dir.join("pgm").join(name);
                fs::create_dir_all(&d).map_err(|e| CliError::io(&d, e))?;
                for (i, s) in samples.iter().enumerate() {
                    export_sample(&d, &format!("{i:05}"), s, spec.n_classes)?;
                }
            }
        }
        write_json(&dir.join("manifest.json"), &m)?;
        say(Stage::GenData, format!("{} / {} / {} samples at {}px", m.train.n_samples, m.val.n_samples, m.test.n_samples, m.train.image_size));
        Ok(())
    }

    fn initial_graph(&self) -> Result<Graph, CliError> {
        let seed = self.config.seed;
        match &self.config.model.graph {
            Some(p) => {
                let file: GraphFile = read_json(p)?;
                if file.weights.is_some() {
                    load_model(p)
                } else {
                    Ok(initialize(&join_graph(&file, None)?, seed))
                }
            }
            None => {
                let g = multitask_graph(&self.config.model.spec).map_err(|e| CliError::InvalidGraph(e.to_string()))?;
                Ok(initialize(&g, seed))
            }
        }
    }

    fn summary(graph: &Graph, epochs: usize, val: &[Sample]) -> Result<ModelSummary, CliError> {
        let flops = graph.count_flops().map_err(|e| CliError::InvalidGraph(e.to_string()))?;
        let metrics = evaluate(&Net::compile(graph)?, val)?;
        Ok(ModelSummary { flops, params: graph.count_params(), epochs, metrics })
    }

    fn train(&self) -> Result<(), CliError> {
        let m = self.manifest()?;
        let dir = self.dir(Stage::Train)?;
        let (train_set, val) = (Self::split(&m.train)?, Self::split(&m.val)?);
        let g0 = self.initial_graph()?;
        let cfg = self.config.train_config();
        say(Stage::Train, format!("{} epochs, {} params, {:.1} MFLOP", cfg.epochs, g0.count_params(), g0.count_flops().unwrap_or(0) as f64 / 1e6));
        let (g, history) = train(&g0, &train_set, &val, &cfg, &self.config.loss_weights)?;
        let summary = Self::summary(&g, cfg.epochs, &val)?;
        save_model(&g, &dir, "model")?;
        write_csv(&dir.join("history.csv"), HistoryRow::rows(0, &history))?;
        write_json(&dir.join("summary.json"), &summary)?;
        say(Stage::Train, format!("geo_mean {:.2}", summary.metrics.geo_mean));
        Ok(())
    }

    fn prune(&self) -> Result<(), CliError> {
        let m = self.manifest()?;
        let g = load_model(&self.require(Stage::Train, "model.json")?)?;
        let dir = self.dir(Stage::Prune)?;
        let (train_set, val) = (Self::split(&m.train)?, Self::split(&m.val)?);
        let flops = g.count_flops().map_err(|e| CliError::InvalidGraph(e.to_string()))?;
        let schedule = self.config.prune.schedule(flops);
        let cfg = self.config.train_config();
        let (pruned, trace) = iterative_prune(&g, &train_set, &val, &schedule, &cfg, &self.config.loss_weights)?;
        let summary = PruneSummary {
            criterion: schedule.criterion,
            target_flops: schedule.target_flops,
            prune_steps: trace.prune_steps,
            model: Self::summary(&pruned, trace.epochs, &val)?,
            trace: trace.steps.clone(),
        };
        save_model(&pruned, &dir, "model")?;
        write_csv(&dir.join("trace.csv"), trace.steps.iter().map(TraceRow::from))?;
        let rows = trace.histories.iter().enumerate().flat_map(|(i, h)| HistoryRow::rows(i + 1, h));
        write_csv(&dir.join("history.csv"), rows)?;
        write_json(&dir.join("summary.json"), &summary)?;
        say(
            Stage::Prune,
            format!(
                "{} steps, FLOPs {:.1}% of base, geo_mean {:.2}",
                trace.prune_steps,
                100.0 * summary.model.flops as f64 / flops as f64,
                summary.model.metrics.geo_mean
            ),
        );
        Ok(())
    }

    fn deploy(&self, graph: &Graph) -> Result<Graph, CliError> {
        Ok(at_resolution(&fold_batchnorm(graph)?, self.config.deploy.image))
    }

    fn quantize(&self) -> Result<(), CliError> {
        let m = self.manifest()?;
        let pruned = load_model(&self.require(Stage::Prune, "model.json")?)?;
        let dir = self.dir(Stage::Quantize)?;
        let folded = fold_batchnorm(&pruned)?;
        let calib: Vec<Sample> = Self::split(&DatasetSpec { n_samples: m.calib, ..m.train })?;
        let (val, test) = (Self::split(&m.val)?, Self::split(&m.test)?);
        let stats: CalibStats = calibrate(&folded, &calib)?;
        let qa16 = QAssignment::uniform(&stats, &folded, 16)?;
        let qa8 = QAssignment::uniform(&stats, &folded, 8)?;

        let hw = self.config.hardware()?;
        let targets = self.config.deploy.targets;
        let deployed = self.deploy(&pruned)?;
        let (outcome, reached) =
            match select_mixed_precision(&deployed, &qa16, &stats, &hw, ScheduleMode::Chained, targets) {
                Ok(o) => (o, true),
                Err(QuantError::TargetUnreachable { best }) => (*best, false),
                Err(e) => return Err(e.into()),
            };

        let flat = |outs: Vec<BTreeMap<Task, Vec<f32>>>| -> Vec<f32> { outs.into_iter().flat_map(|o| o.into_values().flatten()).collect() };
        let float = flat(test.iter().map(|s| engine::forward(&folded, s)).collect::<Result<_, _>>()?);
        let mut sqnr = BTreeMap::new();
        let mut metrics = BTreeMap::from([("float32".to_string(), evaluate(&Net::compile(&folded)?, &val)?)]);
        let mut saturated = BTreeMap::new();
        for (name, qa) in [("int16", &qa16), ("int8", &qa8), ("mixed", &outcome.assignment)] {
            let net = QuantizedNet::compile(&folded, qa)?;
            let outs = test.iter().map(|s| net.forward(s).map(|o| o.heads)).collect::<Result<_, _>>()?;
            sqnr.insert(name.to_string(), sqnr_db(&float, &flat(outs)));
            if name != "int8" {
                let (mr, sat) = net.evaluate(&val)?;
                metrics.insert(name.to_string(), mr);
                if name == "int16" {
                    saturated = sat;
                }
            }
        }
        write_json(&dir.join("calib.json"), &stats)?;
        write_json(&dir.join("assignment_16.json"), &qa16)?;
        write_json(&dir.join("mixed.json"), &MixedResult { targets, reached, outcome: outcome.clone() })?;
        write_json(&dir.join("summary.json"), &QuantSummary { calib_samples: calib.len(), sqnr_db: sqnr.clone(), metrics, saturated })?;
        say(
            Stage::Quantize,
            format!(
                "SQNR int16 {:.1} dB, int8 {:.1} dB; mixed targets {} with {} maps at 8 bits",
                sqnr["int16"],
                sqnr["int8"],
                if reached { "met" } else { "unreachable" },
                outcome.eight_bit.len()
            ),
        );
        Ok(())
    }

    fn schedule(&self) -> Result<(), CliError> {
        let mixed: MixedResult = read_json(&self.require(Stage::Quantize, "mixed.json")?)?;
        let unpruned = self.deploy(&load_model(&self.require(Stage::Train, "model.json")?)?)?;
        let pruned = self.deploy(&load_model(&self.require(Stage::Prune, "model.json")?)?)?;
        let dir = self.dir(Stage::Schedule)?;
        let hw = self.config.hardware()?;
        let qa16 = QAssignment::default();
        let versions = [
            (&unpruned, ScheduleMode::Naive, &qa16),
            (&pruned, ScheduleMode::Naive, &qa16),
            (&pruned, ScheduleMode::Chained, &qa16),
            (&pruned, ScheduleMode::Chained, &mixed.outcome.assignment),
        ];
        let mut bounds = BTreeMap::new();
        for (name, (g, mode, qa)) in VERSIONS.iter().zip(versions) {
            let s = build_schedule(g, &hw, qa, mode)?;
            write_json(&dir.join(format!("{name}.json")), &s)?;
            bounds.insert(name.to_string(), lower_bounds(g, &hw, qa).map_err(|e| CliError::InvalidGraph(e.to_string()))?);
            say(Stage::Schedule, format!("{name}: {} exec nodes", s.nodes.len()));
        }
        write_json(&dir.join("bounds.json"), &bounds)
    }

    fn simulate(&self) -> Result<(), CliError> {
        self.require(Stage::Quantize, "mixed.json")?;
        let schedules = VERSIONS
            .iter()
            .map(|v| read_json::<Schedule>(&self.require(Stage::Schedule, &format!("{v}.json"))?))
            .collect::<Result<Vec<_>, _>>()?;
        let dir = self.dir(Stage::Simulate)?;
        let hw = self.config.hardware()?;
        for (name, s) in VERSIONS.iter().zip(&schedules) {
            let r = simulate(s, &hw);
            write_json(&dir.join(format!("{name}.json")), &r)?;
            write_csv(&dir.join(format!("{name}_layers.csv")), r.per_layer.iter().map(LayerRow::from))?;
            say(Stage::Simulate, format!("{name}: {:.2} FPS, {:.3} GBps, {:.2} MB", r.fps, r.bandwidth_gbps, r.footprint_mb));
        }
        Ok(())
    }

    fn report(&self) -> Result<(), CliError> {
        let base: ModelSummary = read_json(&self.require(Stage::Train, "summary.json")?)?;
        let pruned: PruneSummary = read_json(&self.require(Stage::Prune, "summary.json")?)?;
        let quant: QuantSummary = read_json(&self.require(Stage::Quantize, "summary.json")?)?;
        let mixed: MixedResult = read_json(&self.require(Stage::Quantize, "mixed.json")?)?;
        let bounds: BTreeMap<String, LowerBounds> = read_json(&self.require(Stage::Schedule, "bounds.json")?)?;
        let sims = VERSIONS
            .iter()
            .map(|v| read_json::<SimReport>(&self.require(Stage::Simulate, &format!("{v}.json"))?))
            .collect::<Result<Vec<_>, _>>()?;
        let hw = self.config.hardware()?;

        let row = |version: &str, precision: &str, s: &ModelSummary, m: &MetricsReport| AccuracyRow {
            version: version.into(),
            precision: precision.into(),
            flops: s.flops,
            params: s.params,
            det_map: m.det_map,
            seg_miou: m.seg_miou,
            soil_f1: m.soil_f1,
            geo_mean: m.geo_mean,
        };
        let p = &pruned.model;
        let mut accuracy = vec![row("unpruned", "float32", &base, &base.metrics), row("pruned", "float32", p, &p.metrics)];
        for prec in ["int16", "mixed"] {
            if let Some(m) = quant.metrics.get(prec) {
                accuracy.push(row("pruned", prec, p, m));
            }
        }
        let cost: Vec<CostRow> = VERSIONS
            .iter()
            .zip(&sims)
            .map(|(v, r)| CostRow {
                version: v.to_string(),
                fps: r.fps,
                runtime_ms: r.runtime_s * 1e3,
                bandwidth_gbps: r.bandwidth_gbps,
                footprint_mb: r.footprint_mb,
                core_runs: r.core_runs,
                utilization: r.utilization,
                compute_lb_ms: bounds[*v].compute_lb_s * 1e3,
                transfer_lb_ms: bounds[*v].transfer_lb_s * 1e3,
            })
            .collect();
        let report = Report {
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            deploy_image: self.config.deploy.image,
            cameras: hw.cameras_per_frame,
            prune: PruneReport {
                criterion: pruned.criterion,
                flops_ratio: p.flops as f64 / base.flops as f64,
                params_removed: 1.0 - p.params as f64 / base.params as f64,
                steps: pruned.prune_steps,
                finetune_epochs: p.epochs,
            },
            mixed: MixedReport { targets: mixed.targets, reached: mixed.reached, eight_bit: mixed.outcome.eight_bit.clone() },
            sqnr_db: quant.sqnr_db,
            accuracy,
            cost,
        };
        let dir = self.dir(Stage::Report)?;
        write_csv(&dir.join("accuracy.csv"), &report.accuracy)?;
        write_csv(&dir.join("cost.csv"), &report.cost)?;
        let (f0, p0) = pruned.trace.first().map_or((base.flops, base.params), |s| (s.flops, s.params));
        let curve = pruned.trace.iter().map(|s| CurveRow {
            step: s.step,
            flops_ratio: s.flops as f64 / f0 as f64,
            params_ratio: s.params as f64 / p0 as f64,
            geo_mean: s.metrics.map(|m| m.geo_mean),
        });
        write_csv(&dir.join("prune_curve.csv"), curve)?;
        write_json(&self.out.join("report.json"), &report)?;
        for r in &report.cost {
            say(Stage::Report, format!("{:<9} {:7.2} FPS {:6.3} GBps {:7.3} MB", r.version, r.fps, r.bandwidth_gbps, r.footprint_mb));
        }
        Ok(())
    }
}

/// Output root: `--out`, else the config's `out_dir`, else `./out`.
pub fn out_dir(cli: Option<&Path>, config: &PipelineConfig) -> PathBuf {
    cli.map(Path::to_path_buf).or_else(|| config.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"))
}
