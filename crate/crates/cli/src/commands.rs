use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use lka_core::deviation::{apex_dataset, fit_linear, LinearFit};
use lka_core::diagnosis::{diagnose, episode_factors, tally_factors, EpisodeDiagnosis};
use lka_core::dynamics::{SweepPoint, VehicleCapability};
use lka_core::geometry::load_profile;
use lka_core::readiness::io::{read_features_csv, read_labeled_csv, write_labeled_csv};
use lka_core::readiness::{
    evaluate, generate_synthetic, linear_grid, partial_dependence, steepest_rise, train, variable_importance, Dataset,
    DependencePoint, ImportanceReport, Metrics, OutcomeClass, ReadinessModel, Schema, TrainParams,
};
use lka_core::rules::{audit_profile, AuditReport, SpeedMode};
use lka_core::telemetry::{curate, load_log, segment_episodes, Episode, TelemetryRecord};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::markdown::{audit_markdown, fit_markdown, metrics_markdown};
use crate::output::{csv_bytes, OutputDir};
use crate::svg::Chart;
use crate::{
    AnalyzeArgs, AuditArgs, Common, CurateArgs, Format, LogArgs, PredictArgs, ReportArgs, SimulateArgs, TrainArgs,
    DEFAULT_SEED, EXIT_OK, EXIT_VIOLATIONS,
};

/// Settings shared by every subcommand after flags and config are merged.
pub struct Context {
    pub out: OutputDir,
    pub seed: u64,
}

impl Context {
    pub fn new(common: &Common, cfg: &RunConfig) -> anyhow::Result<Self> {
        let dir = common.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("."));
        let formats = if common.format.is_empty() { cfg.formats.clone().unwrap_or_default() } else { common.format.clone() };
        Ok(Self { out: OutputDir::new(dir, &formats)?, seed: common.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED) })
    }
}

fn warn(msg: impl std::fmt::Display) {
    eprintln!("warning: {msg}");
}

pub fn load_capability(path: &Path) -> anyhow::Result<VehicleCapability> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading capability {}", path.display()))?;
    let mut cap: VehicleCapability =
        serde_json::from_str(&text).with_context(|| format!("parsing capability {}", path.display()))?;
    if cap.name.is_empty() {
        cap.name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    }
    cap.validate()?;
    Ok(cap)
}

fn capability_or_default(flag: Option<&PathBuf>, cfg: &RunConfig) -> anyhow::Result<VehicleCapability> {
    match flag.or(cfg.capability.as_ref()) {
        Some(p) => load_capability(p),
        None => Ok(VehicleCapability::default()),
    }
}

fn pick_logs<'a>(flag: &'a LogArgs, cfg: &'a [PathBuf]) -> anyhow::Result<&'a [PathBuf]> {
    let logs = if flag.logs.is_empty() { cfg } else { &flag.logs };
    if logs.is_empty() {
        bail!("no telemetry logs given (use --log or the config file)");
    }
    Ok(logs)
}

fn read_logs(paths: &[PathBuf]) -> anyhow::Result<Vec<Vec<TelemetryRecord>>> {
    paths.iter().map(|p| load_log(p).with_context(|| format!("loading {}", p.display()))).collect()
}

pub fn cmd_audit(ctx: &Context, cfg: &RunConfig, args: &AuditArgs) -> anyhow::Result<u8> {
    let geometry = args.geometry.as_ref().or(cfg.audit.geometry.as_ref()).context("no geometry file given (--geometry)")?;
    let cap_path = args.capability.as_ref().or(cfg.capability.as_ref()).context("no capability file given (--capability)")?;
    let cap = load_capability(cap_path)?;
    let profile = load_profile(geometry).with_context(|| format!("loading geometry {}", geometry.display()))?;
    let mut rules = cfg.audit.rules;
    if let Some(b) = args.budget {
        rules.budget_fraction = b;
    }
    if let Some(m) = args.merge_gap {
        rules.merge_gap_m = m;
    }
    let mode = match args.speed.or(cfg.audit.speed_mps) {
        Some(v) => SpeedMode::Fixed(v),
        None => SpeedMode::Posted,
    };
    let report = audit_profile(&cap, &profile, mode, &rules)?;
    ctx.out.put_json("audit_report.json", &report)?;
    ctx.out.put("audit_report.md", Format::Md, audit_markdown(&report, &cap, &profile, &rules).as_bytes())?;
    let c = &report.summary;
    println!("audit {}: {} violation(s), {} advisory", report.profile_name, c.violations, c.advisories);
    Ok(if report.has_violations() { EXIT_VIOLATIONS } else { EXIT_OK })
}

#[derive(Debug, Serialize)]
struct LogEpisodes<'a> {
    log: String,
    episodes: &'a [Episode],
}

#[derive(Debug, Serialize)]
struct DiagnosedEpisode {
    log: String,
    #[serde(flatten)]
    diagnosis: EpisodeDiagnosis,
    factors: BTreeSet<String>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct FitSummary {
    pub n_points: usize,
    pub fit: Option<LinearFit>,
    pub reference: LinearFit,
}

/// Writes the scatter CSV, the fit JSON and the plot for `(kappa, deviation)` pairs.
fn write_scatter(ctx: &Context, points: &[(f64, f64)], title: &str) -> anyhow::Result<Option<LinearFit>> {
    let fit = match fit_linear(points) {
        Ok(f) => Some(f),
        Err(e) => {
            warn(format!("no deviation fit: {e}"));
            None
        }
    };
    let csv = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["kappa_inv_m", "deviation_m"])?;
        for (k, d) in points {
            w.write_record([format!("{k:.8}"), format!("{d:.6}")])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.put("deviation_scatter.csv", Format::Csv, &csv)?;
    ctx.out.put_json("deviation_fit.json", &FitSummary { n_points: points.len(), fit, reference: LinearFit::REFERENCE })?;
    let chart = Chart {
        title,
        x_label: "curvature [1/m]",
        y_label: "lateral deviation [m]",
        points,
        line: fit.map(|f| (f.slope, f.intercept)),
    };
    ctx.out.put("deviation_scatter.svg", Format::Svg, chart.render().as_bytes())?;
    Ok(fit)
}

pub fn cmd_analyze(ctx: &Context, cfg: &RunConfig, args: &AnalyzeArgs) -> anyhow::Result<u8> {
    let paths = pick_logs(&args.logs, &cfg.analyze.logs)?;
    let cap = capability_or_default(args.capability.as_ref(), cfg)?;
    let logs = read_logs(paths)?;
    let a = &cfg.analyze;

    let mut all_episodes = Vec::new();
    let mut diagnosed = Vec::new();
    let mut labeled = Vec::new();
    let mut scatter = Vec::new();
    for (path, log) in paths.iter().zip(&logs) {
        let name = path.display().to_string();
        let episodes = segment_episodes(log, &a.segment).with_context(|| format!("segmenting {name}"))?;
        for (id, ep) in episodes.iter().enumerate().filter(|(_, e)| e.is_failure()) {
            match diagnose(ep, log, &cap, &a.diagnosis) {
                Ok(label) => {
                    let factors = episode_factors(ep, log, &a.diagnosis);
                    labeled.push((label.clone(), factors.clone()));
                    diagnosed.push(DiagnosedEpisode {
                        log: name.clone(),
                        diagnosis: EpisodeDiagnosis { episode_id: id, label },
                        factors,
                    });
                }
                Err(e) => warn(format!("{name} episode {id}: {e}")),
            }
        }
        match apex_dataset(log) {
            Ok(pts) => scatter.extend(pts),
            Err(e) => warn(format!("{name}: {e}")),
        }
        all_episodes.push((name, episodes));
    }

    let listing: Vec<LogEpisodes> = all_episodes.iter().map(|(log, e)| LogEpisodes { log: log.clone(), episodes: e }).collect();
    ctx.out.put_json("episodes.json", &listing)?;
    ctx.out.put_json("diagnoses.json", &diagnosed)?;
    let tally = tally_factors(&labeled);
    ctx.out.put_json("factor_tally.json", &tally.report())?;
    ctx.out.put("factor_tally.csv", Format::Csv, &csv_bytes(|b| tally.write_csv(b))?)?;
    if !scatter.is_empty() {
        write_scatter(ctx, &scatter, "Lateral deviation vs curvature")?;
    }
    let failures: usize = all_episodes.iter().map(|(_, e)| e.iter().filter(|x| x.is_failure()).count()).sum();
    println!("analyzed {} log(s): {} failure episode(s), {} diagnosed", logs.len(), failures, diagnosed.len());
    Ok(EXIT_OK)
}

pub fn cmd_curate(ctx: &Context, cfg: &RunConfig, args: &CurateArgs) -> anyhow::Result<u8> {
    let paths = pick_logs(&args.logs, &cfg.curate.logs)?;
    let logs = read_logs(paths)?;
    let episodes = logs
        .iter()
        .zip(paths)
        .map(|(log, p)| segment_episodes(log, &cfg.curate.segment).with_context(|| format!("segmenting {}", p.display())))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let ratio = args.ratio.or(cfg.curate.normal_sample_ratio).unwrap_or(1.0);
    let set = curate(&episodes, ratio, ctx.seed)?;
    for w in &set.warnings {
        warn(w);
    }
    #[derive(Serialize)]
    struct Curated<'a> {
        logs: Vec<String>,
        seed: u64,
        normal_sample_ratio: f64,
        #[serde(flatten)]
        set: &'a lka_core::telemetry::CuratedSet,
    }
    let logs_named = paths.iter().map(|p| p.display().to_string()).collect();
    ctx.out.put_json("curated.json", &Curated { logs: logs_named, seed: ctx.seed, normal_sample_ratio: ratio, set: &set })?;
    println!("curated {} failure and {} normal episode(s)", set.failures.len(), set.normals.len());
    Ok(EXIT_OK)
}

pub fn cmd_fit(ctx: &Context, cfg: &RunConfig, args: &LogArgs) -> anyhow::Result<u8> {
    let paths = pick_logs(args, &cfg.fit.logs)?;
    let logs = read_logs(paths)?;
    let mut points = Vec::new();
    for (p, log) in paths.iter().zip(&logs) {
        match apex_dataset(log) {
            Ok(pts) => points.extend(pts),
            Err(e) => warn(format!("{}: {e}", p.display())),
        }
    }
    if points.is_empty() {
        bail!("no curves found in any log");
    }
    let fit = fit_linear(&points)?;
    write_scatter(ctx, &points, "Lateral deviation vs curvature")?;
    println!(
        "fit over {} apex samples: slope {:.4} m², intercept {:.4} m, R² {:.4}",
        points.len(),
        fit.slope,
        fit.intercept,
        fit.r_squared
    );
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SweepSummary {
    pub capability: VehicleCapability,
    pub sweep: lka_core::dynamics::CurvatureSweep,
    pub points: Vec<SweepPoint>,
    pub fit: Option<LinearFit>,
    pub warnings: Vec<String>,
}

pub fn cmd_simulate(ctx: &Context, cfg: &RunConfig, args: &SimulateArgs) -> anyhow::Result<u8> {
    let cap = capability_or_default(args.capability.as_ref(), cfg)?;
    let mut sweep = cfg.simulate.sweep.clone();
    if !args.kappas.is_empty() {
        sweep.kappas = args.kappas.clone();
    }
    if let Some(v) = args.speed {
        sweep.v = v;
    }
    if sweep.kappas.is_empty() {
        bail!("the sweep has no curvatures");
    }
    let points = sweep.run(&cap);
    let mut warnings = Vec::new();
    for p in &points {
        if let Some(e) = &p.error {
            warnings.push(format!("kappa {}: {e}", p.kappa));
        }
    }
    let ok: Vec<(f64, f64)> = points.iter().filter_map(|p| p.steady_state_deviation.map(|d| (p.kappa, d))).collect();
    let fit = match fit_linear(&ok) {
        Ok(f) => Some(f),
        Err(e) => {
            warnings.push(format!("no fit: {e}"));
            None
        }
    };
    for w in &warnings {
        warn(w);
    }

    let csv = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["kappa_inv_m", "steady_state_deviation_m", "saturated_fraction", "max_abs_offset_m", "error"])?;
        for p in &points {
            w.write_record([
                format!("{}", p.kappa),
                p.steady_state_deviation.map(|d| format!("{d:.8}")).unwrap_or_default(),
                format!("{:.6}", p.saturated_fraction),
                format!("{:.6}", p.max_abs_offset),
                p.error.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.put("sweep_summary.csv", Format::Csv, &csv)?;
    let chart = Chart {
        title: "Simulated steady-state deviation vs curvature",
        x_label: "curvature [1/m]",
        y_label: "steady-state deviation [m]",
        points: &ok,
        line: fit.map(|f| (f.slope, f.intercept)),
    };
    ctx.out.put("sweep.svg", Format::Svg, chart.render().as_bytes())?;
    if args.trace || cfg.simulate.trace {
        for (i, &k) in sweep.kappas.iter().enumerate() {
            if let Ok(r) = sweep.run_one(&cap, k) {
                ctx.out.put(&format!("trace_{i:02}.csv"), Format::Csv, &csv_bytes(|b| r.write_trace_csv(b))?)?;
            }
        }
    }
    let summary = SweepSummary { capability: cap, sweep, points, fit, warnings };
    ctx.out.put_json("sweep_summary.json", &summary)?;
    match fit {
        Some(f) => println!("sweep of {} curvatures: slope {:.4} m², R² {:.4}", summary.points.len(), f.slope, f.r_squared),
        None => println!("sweep of {} curvatures: no fit", summary.points.len()),
    }
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct DependenceCurve {
    pub feature: String,
    pub class: OutcomeClass,
    pub points: Vec<DependencePoint>,
    /// Grid interval with the steepest rise of `class` probability.
    pub knee: Option<(f64, f64)>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TrainSummary {
    pub source: String,
    pub seed: u64,
    pub params: TrainParams,
    pub n_train: usize,
    pub n_test: usize,
    pub metrics: Metrics,
    pub importance: ImportanceReport,
}

fn load_training(ctx: &Context, cfg: &RunConfig, args: &TrainArgs) -> anyhow::Result<(String, Dataset, Dataset)> {
    let t = &cfg.train;
    let test_fraction = args.test_fraction.unwrap_or(t.test_fraction);
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        bail!("test fraction must lie in (0, 1), got {test_fraction}");
    }
    if let Some(path) = args.data.as_ref().or(t.data.as_ref()) {
        let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
        let rows = read_labeled_csv(file).with_context(|| format!("reading {}", path.display()))?;
        let (train_set, test_set) = Dataset::from_labeled(&rows).split(test_fraction);
        if test_set.is_empty() {
            bail!("{} has too few rows to hold out a test set", path.display());
        }
        return Ok((path.display().to_string(), train_set, test_set));
    }
    let n = args.n.unwrap_or(t.n_synthetic);
    let n_test = ((n as f64) * test_fraction / (1.0 - test_fraction)).round().max(1.0) as usize;
    let train_rows = generate_synthetic(n, ctx.seed, &t.generator)?;
    let test_rows = generate_synthetic(n_test, ctx.seed.wrapping_add(1000), &t.generator)?;
    ctx.out.put("training_data.csv", Format::Csv, &csv_bytes(|b| write_labeled_csv(&train_rows, b))?)?;
    Ok(("synthetic".into(), Dataset::from_labeled(&train_rows), Dataset::from_labeled(&test_rows)))
}

pub fn cmd_train(ctx: &Context, cfg: &RunConfig, args: &TrainArgs) -> anyhow::Result<u8> {
    let (source, train_set, test_set) = load_training(ctx, cfg, args)?;
    let mut params = cfg.train.params;
    params.seed = ctx.seed;
    if let Some(n) = args.trees {
        params.n_trees = n;
    }
    let model = train(&train_set, &params)?;
    let metrics = evaluate(&model, &test_set)?;
    let importance = variable_importance(&model);

    let background = &test_set.rows[..test_set.len().min(cfg.train.pd_background.max(1))];
    let mut curves = Vec::new();
    for (feature, class) in [("kappa", OutcomeClass::Deviation), ("speed", OutcomeClass::Disengagement)] {
        let Some(col) = model.schema.index_of(feature) else { continue };
        let (lo, hi) = train_set.rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), r| (lo.min(r[col]), hi.max(r[col])));
        let points = partial_dependence(&model, feature, &linear_grid(lo, hi, cfg.train.pd_grid), background)?;
        let knee = steepest_rise(&points, class.index());
        curves.push(DependenceCurve { feature: feature.into(), class, points, knee });
    }

    ctx.out.put_always("model.json", model.to_json().as_bytes())?;
    let summary = TrainSummary {
        source,
        seed: ctx.seed,
        params,
        n_train: train_set.len(),
        n_test: test_set.len(),
        metrics: metrics.clone(),
        importance: importance.clone(),
    };
    ctx.out.put_json("metrics.json", &summary)?;
    ctx.out.put("confusion.csv", Format::Csv, &csv_bytes(|b| metrics.write_confusion_csv(b))?)?;
    ctx.out.put_json("partial_dependence.json", &curves)?;
    ctx.out.put("metrics.md", Format::Md, metrics_markdown(&metrics, Some(&importance)).as_bytes())?;
    println!("trained {} trees on {} rows: held-out accuracy {:.4}", params.n_trees, train_set.len(), metrics.accuracy);
    Ok(EXIT_OK)
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    row: usize,
    class: OutcomeClass,
    probabilities: [f64; 3],
}

pub fn cmd_predict(ctx: &Context, cfg: &RunConfig, args: &PredictArgs) -> anyhow::Result<u8> {
    let model_path = args.model.as_ref().or(cfg.predict.model.as_ref()).context("no model given (--model)")?;
    let features = args.features.as_ref().or(cfg.predict.features.as_ref()).context("no feature file given (--features)")?;
    let model = ReadinessModel::load(model_path)?;
    if model.schema != Schema::readiness() {
        bail!("model {} was trained on a different feature schema", model_path.display());
    }
    let file = std::fs::File::open(features).with_context(|| format!("opening {}", features.display()))?;
    let rows = read_features_csv(file).with_context(|| format!("reading {}", features.display()))?;
    let preds: Vec<PredictionRow> = rows
        .iter()
        .enumerate()
        .map(|(i, fv)| {
            let p = model.predict(fv);
            PredictionRow { row: i + 1, class: p.class, probabilities: p.probabilities }
        })
        .collect();
    let csv = csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["row", "class", "p_normal", "p_deviation", "p_disengagement"])?;
        for p in &preds {
            let mut rec = vec![p.row.to_string(), p.class.name().to_string()];
            rec.extend(p.probabilities.iter().map(|x| format!("{x:.6}")));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    })?;
    ctx.out.put("predictions.csv", Format::Csv, &csv)?;
    ctx.out.put_json("predictions.json", &preds)?;
    println!("classified {} segment(s)", preds.len());
    Ok(EXIT_OK)
}

pub fn cmd_report(ctx: &Context, cfg: &RunConfig, args: &ReportArgs) -> anyhow::Result<u8> {
    let inputs = if args.inputs.is_empty() { &cfg.report.inputs } else { &args.inputs };
    if inputs.is_empty() {
        bail!("no report inputs given (use --input)");
    }
    let mut md = String::from("# LKA analysis report\n\n");
    for path in inputs {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let name = path.display();
        if value.get("findings").is_some() {
            let r: AuditReport = serde_json::from_value(value)?;
            md.push_str(&format!("## Audit of {} ({})\n\n", r.profile_name, name));
            md.push_str(&format!(
                "{} violation(s), {} advisory finding(s).\n\n",
                r.summary.violations, r.summary.advisories
            ));
            for f in &r.findings {
                md.push_str(&format!("- {} {:.1}–{:.1} m: {}\n", f.rule.label(), f.x_start, f.x_end, f.message));
            }
            md.push('\n');
        } else if value.get("sweep").is_some() {
            let s: SweepSummary = serde_json::from_value(value)?;
            match &s.fit {
                Some(f) => md.push_str(&fit_markdown(&format!("Simulated curvature sweep ({name})"), f)),
                None => md.push_str(&format!("## Simulated curvature sweep ({name})\n\nNo fit.\n\n")),
            }
            for w in &s.warnings {
                md.push_str(&format!("- warning: {w}\n"));
            }
        } else if value.get("n_points").is_some() {
            let s: FitSummary = serde_json::from_value(value)?;
            match &s.fit {
                Some(f) => md.push_str(&fit_markdown(&format!("Telemetry deviation fit ({name})"), f)),
                None => md.push_str(&format!("## Telemetry deviation fit ({name})\n\nNo fit.\n\n")),
            }
        } else if value.get("metrics").is_some() {
            let s: TrainSummary = serde_json::from_value(value)?;
            md.push_str(&metrics_markdown(&s.metrics, Some(&s.importance)));
        } else {
            bail!("{name} is not an output of audit, fit, simulate or train");
        }
    }
    ctx.out.put_always("report.md", md.as_bytes())?;
    Ok(EXIT_OK)
}
