//! One function per subcommand. Each checks its inputs exist, does its work
//! and records a [`RunManifest`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use geoecon_core::eval::{
    delta_field, kfold_eval, oob_eval, predictor_correlations, residual_field, sample_data, write_correlations,
    write_reports, DiagnosticField, EvalReport, Evaluation, FieldKind, ModelSpec, Normalization, ReportTable,
    SampleData,
};
use geoecon_core::features::{build_feature_matrix, native_cadence, FeatureMatrix, SeriesSet};
use geoecon_core::gridstore::{load_cells, load_economy, load_series, CellTable, TableFormat, VariableId};
use geoecon_core::learners::{ForestParams, GbParams};
use geoecon_core::select::{run_selection, SelectionReport};
use geoecon_core::synthworld::{generate, oracle_check, GroundTruth};
use geoecon_core::target::{build_target, stationarity_probe, tercile_split, Sample, TargetVector};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{require, CliError, CliResult};
use crate::render::Raster;
use crate::{
    Cli, Command, EvaluateArgs, FeaturesArgs, FileFormat, IngestArgs, ModelKind, PredictorSet, RenderArgs,
    RenderMode, SelectArgs, SynthArgs, TargetArgs, TrainArgs,
};

/// Provenance record written to `manifest_<command>.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: Option<PathBuf>,
    pub seed: u64,
    pub threads: usize,
    pub sample: Option<String>,
    pub normalization: String,
    pub out_dir: PathBuf,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub stages: Vec<String>,
    /// Seconds since the Unix epoch at completion.
    pub finished_at: u64,
}

/// Resolved settings shared by every command.
pub struct Ctx {
    pub cfg: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub threads: usize,
    pub sample: Option<Sample>,
    pub normalization: Normalization,
}

impl Ctx {
    pub fn new(cli: &Cli) -> CliResult<Ctx> {
        let cfg = match &cli.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let sample = cli
            .sample
            .clone()
            .or_else(|| cfg.sample.clone())
            .map(|s| Sample::from_str(&s).map_err(|e| CliError::Usage(e.to_string())))
            .transpose()?;
        let normalization = if cli.global_sd {
            Normalization::Global
        } else {
            cfg.normalization()
        };
        Ok(Ctx {
            seed: cli.seed.or(cfg.seed).unwrap_or(0),
            out: cli
                .out
                .clone()
                .or_else(|| cfg.out.clone())
                .unwrap_or_else(|| PathBuf::from("geoecon-out")),
            threads: cli.threads.or(cfg.threads).unwrap_or(0),
            config_path: cli.config.clone(),
            sample,
            normalization,
            cfg,
        })
    }

    pub fn world_dir(&self) -> PathBuf {
        self.out.join("world")
    }
    pub fn data_dir(&self) -> PathBuf {
        self.out.join("data")
    }
    pub fn features_path(&self) -> PathBuf {
        self.out.join("features.geof")
    }
    pub fn target_path(&self) -> PathBuf {
        self.out.join("target.csv")
    }
    pub fn selection_dir(&self) -> PathBuf {
        self.out.join("selection")
    }
    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    fn mkdir(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Internal(format!("{}: {e}", dir.display())))
    }

    fn folds(&self, flag: Option<usize>) -> usize {
        flag.or(self.cfg.folds).unwrap_or(5)
    }

    fn forest(&self, trees: Option<usize>) -> ForestParams {
        let mut p = self.cfg.rf;
        if let Some(n) = trees {
            p.n_trees = n;
        }
        p.seed = self.seed;
        p
    }

    fn gb(&self) -> GbParams {
        self.cfg.gb
    }

    fn spec(&self, kind: ModelKind, trees: Option<usize>) -> ModelSpec {
        match kind {
            ModelKind::Rf => ModelSpec::Rf(self.forest(trees)),
            ModelKind::Gb => ModelSpec::Gb(self.gb()),
            ModelKind::Ml => ModelSpec::Ols,
        }
    }

    fn load_target(&self, path: Option<&PathBuf>) -> CliResult<(PathBuf, TargetVector)> {
        let path = path.cloned().unwrap_or_else(|| self.target_path());
        require(&path)?;
        let t = TargetVector::load_csv(&path)?;
        Ok((path, t))
    }

    fn load_features(&self) -> CliResult<FeatureMatrix> {
        let path = self.features_path();
        require(&path)?;
        Ok(FeatureMatrix::load(&path)?)
    }

    fn load_cells(&self) -> CliResult<CellTable> {
        let path = self.data_dir().join("cells.geof");
        require(&path)?;
        Ok(load_cells(&path, TableFormat::Binary)?)
    }

    /// Predictors to model: the configured list, else every column.
    fn predictor_names(&self, features: &FeatureMatrix) -> Vec<String> {
        self.cfg
            .features
            .predictors
            .clone()
            .unwrap_or_else(|| features.names().to_vec())
    }
}

/// Collects paths for the manifest while a command runs.
#[derive(Default)]
struct Record {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    stages: Vec<String>,
}

impl Record {
    fn input(&mut self, p: &Path) {
        self.inputs.push(p.to_path_buf());
    }
    fn output(&mut self, p: &Path) {
        self.outputs.push(p.to_path_buf());
    }
    fn stage(&mut self, s: &str) {
        log::info!("stage: {s}");
        self.stages.push(s.to_string());
    }
}

pub fn run(cli: &Cli) -> CliResult<()> {
    let ctx = Ctx::new(cli)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.threads)
        .build()
        .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
    let mut rec = Record::default();
    pool.install(|| match &cli.command {
        Command::Synth(a) => synth(&ctx, a, &mut rec),
        Command::Ingest(a) => ingest(&ctx, a, &mut rec),
        Command::Features(a) => features(&ctx, a, &mut rec),
        Command::Target(a) => target(&ctx, a, &mut rec),
        Command::Select(a) => select(&ctx, a, &mut rec),
        Command::Train(a) => train(&ctx, a, &mut rec),
        Command::Evaluate(a) => evaluate(&ctx, a, &mut rec),
        Command::Render(a) => render(&ctx, a, &mut rec),
    })?;
    write_manifest(&ctx, cli.command.name(), rec)
}

fn write_manifest(ctx: &Ctx, command: &str, rec: Record) -> CliResult<()> {
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: ctx.config_path.clone(),
        seed: ctx.seed,
        threads: ctx.threads,
        sample: ctx.sample.map(|s| s.code().to_string()),
        normalization: ctx.normalization.code().to_string(),
        out_dir: ctx.out.clone(),
        inputs: rec.inputs,
        outputs: rec.outputs,
        stages: rec.stages,
        finished_at: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    ctx.mkdir(&ctx.out)?;
    let path = ctx.out.join(format!("manifest_{command}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(&path, &(text + "\n"))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::Internal(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    write_text(path, &(text + "\n"))
}

fn synth(ctx: &Ctx, a: &SynthArgs, rec: &mut Record) -> CliResult<()> {
    let mut config = ctx.cfg.world.clone();
    if let Some(n) = a.n_cells {
        config.n_cells = n;
    }
    if let Some(s) = a.noise_sd {
        config.noise_sd = s;
    }
    rec.stage("generate");
    let world = generate(&config, ctx.seed)?;
    let format = match a.format {
        FileFormat::Csv => TableFormat::Csv,
        FileFormat::Binary => TableFormat::Binary,
    };
    rec.stage("write");
    let files = world.write(&ctx.world_dir(), format)?;
    rec.output(&files.cells);
    rec.output(&files.economy);
    for v in world.series.keys() {
        rec.output(&files.series[v]);
    }
    rec.output(&files.truth);
    println!(
        "synth: {} cells, {} series, {} economy records -> {}",
        world.cells.len(),
        world.series.len(),
        world.economy.len(),
        ctx.world_dir().display()
    );
    Ok(())
}

/// `dir/stem.csv` if present, else `dir/stem.geof`.
fn find_table(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["csv", "geof"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.exists())
}

fn series_stem(v: VariableId) -> String {
    format!("series_{}", v.code().to_lowercase())
}

fn ingest(ctx: &Ctx, a: &IngestArgs, rec: &mut Record) -> CliResult<()> {
    let inputs = &ctx.cfg.inputs;
    let src = a
        .series_dir
        .clone()
        .or_else(|| inputs.series_dir.clone())
        .unwrap_or_else(|| ctx.world_dir());
    let pick = |flag: &Option<PathBuf>, cfg: &Option<PathBuf>, stem: &str| {
        flag.clone()
            .or_else(|| cfg.clone())
            .or_else(|| find_table(&ctx.world_dir(), stem))
            .unwrap_or_else(|| ctx.world_dir().join(format!("{stem}.csv")))
    };
    let cells_path = pick(&a.cells, &inputs.cells, "cells");
    let economy_path = pick(&a.economy, &inputs.economy, "economy");
    require(&cells_path)?;
    require(&economy_path)?;
    require(&src)?;
    let years = a.years.clone().unwrap_or_else(|| ctx.cfg.years());

    rec.stage("cells");
    rec.input(&cells_path);
    let cells = load_cells(&cells_path, TableFormat::from_path(&cells_path))?;
    rec.stage("economy");
    rec.input(&economy_path);
    let economy = load_economy(&economy_path, &years)?;
    let unknown = economy.unknown_cells(&cells);
    if !unknown.is_empty() {
        log::warn!("{} economy cells are not in the cell table", unknown.len());
    }
    rec.stage("series");
    let mut series = SeriesSet::new();
    for v in VariableId::ALL {
        if let Some(path) = find_table(&src, &series_stem(v)) {
            rec.input(&path);
            series.insert(v, load_series(&path, v, native_cadence(v), &cells)?);
        }
    }
    if series.is_empty() {
        return Err(CliError::MissingInput(src.join("series_<variable>.csv")));
    }

    let data = ctx.data_dir();
    ctx.mkdir(&data)?;
    let cells_out = data.join("cells.geof");
    cells.write(&cells_out, TableFormat::Binary)?;
    rec.output(&cells_out);
    let econ_out = data.join("economy.geof");
    economy.write(&econ_out, TableFormat::Binary)?;
    rec.output(&econ_out);
    for (v, s) in &series {
        let p = data.join(format!("{}.geof", series_stem(*v)));
        s.write(&p, TableFormat::Binary)?;
        rec.output(&p);
    }
    println!(
        "ingest: {} cells, {} economy records over {} cells, {} series -> {}",
        cells.len(),
        economy.len(),
        economy.distinct_cells(),
        series.len(),
        data.display()
    );
    Ok(())
}

fn features(ctx: &Ctx, a: &FeaturesArgs, rec: &mut Record) -> CliResult<()> {
    let cells = ctx.load_cells()?;
    rec.input(&ctx.data_dir().join("cells.geof"));
    let mut series = SeriesSet::new();
    for v in VariableId::ALL {
        let p = ctx.data_dir().join(format!("{}.geof", series_stem(v)));
        if p.exists() {
            rec.input(&p);
            series.insert(v, load_series(&p, v, native_cadence(v), &cells)?);
        }
    }
    rec.stage("features");
    let matrix = build_feature_matrix(&cells, &series, &ctx.cfg.feature_config()?)?;
    let out = ctx.features_path();
    ctx.mkdir(&ctx.out)?;
    matrix.write(&out, TableFormat::Binary)?;
    rec.output(&out);
    if a.csv {
        let p = ctx.out.join("features.csv");
        matrix.write(&p, TableFormat::Csv)?;
        rec.output(&p);
    }
    println!(
        "features: {} cells x {} predictors, {} missing values -> {}",
        matrix.n_rows(),
        matrix.n_cols(),
        matrix.missing_count(),
        out.display()
    );

    let truth_path = a.truth.clone().or_else(|| {
        let p = ctx.world_dir().join("truth.json");
        p.exists().then_some(p)
    });
    if let Some(p) = truth_path {
        require(&p)?;
        rec.stage("oracle");
        rec.input(&p);
        let truth = GroundTruth::read_json(&p)?;
        let report = oracle_check(&truth, &matrix);
        let out = ctx.out.join("oracle.json");
        write_json(&out, &report)?;
        rec.output(&out);
        println!(
            "oracle: {} checks, {} mismatches{}",
            report.checked,
            report.mismatches.len(),
            report
                .mismatches
                .first()
                .map(|m| format!(" (first: cell {} '{}')", m.cell_id, m.feature))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn target(ctx: &Ctx, a: &TargetArgs, rec: &mut Record) -> CliResult<()> {
    let econ_path = ctx.data_dir().join("economy.geof");
    require(&econ_path)?;
    rec.input(&econ_path);
    let years = ctx.cfg.years();
    let economy = load_economy(&econ_path, &years)?;
    ctx.mkdir(&ctx.out)?;
    rec.stage("target");
    let t = tercile_split(&build_target(&economy, &years))?;
    t.write_csv(&ctx.target_path())?;
    rec.output(&ctx.target_path());
    let th = t.thresholds().unwrap_or([f64::NAN; 2]);
    println!(
        "target: {} of {} cells included, tercile thresholds {:.3} / {:.3}",
        t.n_included(),
        t.entries().len(),
        th[0],
        th[1]
    );
    if a.stationarity {
        rec.stage("stationarity");
        let probe = stationarity_probe(&economy, &years)?;
        for (name, tv) in [("target_plus.csv", &probe.plus), ("target_minus.csv", &probe.minus)] {
            let p = ctx.out.join(name);
            tercile_split(tv)?.write_csv(&p)?;
            rec.output(&p);
        }
    }
    Ok(())
}

fn select(ctx: &Ctx, a: &SelectArgs, rec: &mut Record) -> CliResult<()> {
    let matrix = ctx.load_features()?;
    rec.input(&ctx.features_path());
    let (tpath, target) = ctx.load_target(a.target.as_ref())?;
    rec.input(&tpath);
    let sample = ctx.sample.unwrap_or(Sample::All);
    let names = ctx.predictor_names(&matrix);
    let data = sample_data(&matrix, &target, sample, &names, ctx.normalization)?;
    let params = ctx.cfg.selection_params(a.quick, ctx.seed)?;
    rec.stage("stage_a");
    rec.stage("stage_b");
    rec.stage("stage_c");
    let report = run_selection(&data.design, &data.y, &params)?;

    let dir = ctx.out.join(&a.name);
    ctx.mkdir(&dir)?;
    let table = dir.join("selection.csv");
    report.write_csv(&table)?;
    let curve = dir.join("curve.csv");
    report.write_curve(&curve)?;
    let corr = dir.join("correlations.csv");
    write_correlations(&corr, &predictor_correlations(&data.design, &data.y, &report.ranked_names())?)?;
    let json = dir.join("selection.json");
    write_json(&json, &report)?;
    for p in [&table, &curve, &corr, &json] {
        rec.output(p);
    }
    println!("select ({sample}, {} cells):", data.y.len());
    println!("{:>4}  {:<24} {:>8} {:>8}", "step", "predictor", "nMAE", "CORR");
    for (i, s) in report.ranking.iter().enumerate() {
        println!("{:>4}  {:<24} {:>8.3} {:>8.3}", i + 1, s.name, s.nmae, s.corr);
    }
    Ok(())
}

/// Ranked predictors of a previous `select` run, if any.
fn load_selection(ctx: &Ctx) -> CliResult<Option<(PathBuf, SelectionReport)>> {
    let p = ctx.selection_dir().join("selection.json");
    if !p.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&p).map_err(|e| CliError::Internal(format!("{}: {e}", p.display())))?;
    let report = serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
    Ok(Some((p, report)))
}

fn train(ctx: &Ctx, a: &TrainArgs, rec: &mut Record) -> CliResult<()> {
    let matrix = ctx.load_features()?;
    rec.input(&ctx.features_path());
    let (tpath, target) = ctx.load_target(a.target.as_ref())?;
    rec.input(&tpath);
    let names = match a.predictors {
        PredictorSet::All => ctx.predictor_names(&matrix),
        PredictorSet::Selected => {
            let (p, report) = load_selection(ctx)?
                .ok_or_else(|| CliError::MissingInput(ctx.selection_dir().join("selection.json")))?;
            rec.input(&p);
            report.ranked_names()
        }
    };
    let sample = ctx.sample.unwrap_or(Sample::All);
    let data = sample_data(&matrix, &target, sample, &names, ctx.normalization)?;
    let spec = ctx.spec(a.model, None);
    rec.stage("fit");
    let model = spec.fit(&data.design, &data.y)?;
    let dir = ctx.out.join("models");
    ctx.mkdir(&dir)?;
    let stem = format!("{}_{}", spec.id().to_lowercase(), sample.code());
    let bin = dir.join(format!("{stem}.geom"));
    model.write(&bin)?;
    let json = dir.join(format!("{stem}.json"));
    write_text(&json, &(model.to_json() + "\n"))?;
    rec.output(&bin);
    rec.output(&json);
    println!(
        "train: {} on {} cells x {} predictors -> {}",
        spec.id(),
        data.y.len(),
        data.design.n_cols(),
        bin.display()
    );
    Ok(())
}

/// The same rows restricted to the first `k` of `names`.
fn with_columns(data: &SampleData, names: &[String]) -> CliResult<SampleData> {
    Ok(SampleData {
        design: data.design.select_columns(names)?,
        ..data.clone()
    })
}

fn evaluate(ctx: &Ctx, a: &EvaluateArgs, rec: &mut Record) -> CliResult<()> {
    let matrix = ctx.load_features()?;
    rec.input(&ctx.features_path());
    let (tpath, target) = ctx.load_target(a.target.as_ref())?;
    rec.input(&tpath);
    let all = ctx.predictor_names(&matrix);
    let ranked = match load_selection(ctx)? {
        Some((p, report)) => {
            rec.input(&p);
            Some(report.ranked_names())
        }
        None => None,
    };
    let mut sets: Vec<(String, Vec<String>)> = vec![("all".to_string(), all)];
    if let Some(r) = &ranked {
        sets.push((format!("top{}", r.len()), r.clone()));
    }
    let samples: Vec<Sample> = ctx.sample.map_or(Sample::ALL.to_vec(), |s| vec![s]);
    let folds = ctx.folds(a.folds);
    let forest = ctx.forest(a.trees);
    // Diagnostic fields come from the RF on the last (most selective) set.
    let field_set = sets.len() - 1;

    let fields_dir = ctx.eval_dir().join("fields");
    ctx.mkdir(&fields_dir)?;
    let mut reports: Vec<EvalReport> = Vec::new();
    for &sample in &samples {
        let mut field_eval: Option<Evaluation> = None;
        let mut field_data: Option<SampleData> = None;
        for (si, (label, names)) in sets.iter().enumerate() {
            rec.stage(&format!("{}/{label}", sample.code()));
            let data = sample_data(&matrix, &target, sample, names, ctx.normalization)?;
            for &kind in &a.models {
                let spec = ctx.spec(kind, a.trees);
                let ev = match kfold_eval(&spec, &data, folds, ctx.seed, label) {
                    Ok(ev) => ev,
                    Err(e) if kind == ModelKind::Ml => {
                        log::warn!("{sample} {label}: ML skipped: {e}");
                        continue;
                    }
                    Err(e) => return Err(e.into()),
                };
                reports.push(ev.report.clone());
                if kind == ModelKind::Rf && si == field_set {
                    field_eval = Some(ev);
                }
            }
            if a.models.contains(&ModelKind::Rf) && !a.no_oob {
                reports.push(oob_eval(&forest, &data, label)?.report);
            }
            if si == field_set {
                field_data = Some(data);
            }
        }

        let Some(ev) = field_eval else { continue };
        let prediction = ev.prediction_field();
        let observed = ev.observed_field();
        let residual = residual_field(&prediction, &observed)?;
        for f in [&prediction, &observed, &residual] {
            let p = fields_dir.join(format!("{}_{}.csv", sample.code(), f.kind.code()));
            f.write_csv(&p)?;
            rec.output(&p);
        }

        if let (Some(r), Some(data)) = (&ranked, &field_data) {
            let mut cache: BTreeMap<usize, DiagnosticField> = BTreeMap::new();
            for &n in a.delta_steps.iter().filter(|&&n| n >= 2 && n <= r.len()) {
                for k in [n - 1, n] {
                    if !cache.contains_key(&k) {
                        let sub = with_columns(data, &r[..k])?;
                        let e = kfold_eval(&ModelSpec::Rf(forest), &sub, folds, ctx.seed, &format!("top{k}"))?;
                        cache.insert(k, e.prediction_field());
                    }
                }
                let d = delta_field(&cache[&(n - 1)], &cache[&n], &observed)?;
                let p = fields_dir.join(format!("{}_{}_{n}.csv", sample.code(), FieldKind::Delta.code()));
                d.write_csv(&p)?;
                rec.output(&p);
            }
        }
    }

    let table = ctx.eval_dir().join("table.csv");
    write_reports(&table, &reports)?;
    rec.output(&table);
    let pretty = ReportTable(&reports).to_string();
    let txt = ctx.eval_dir().join("table.txt");
    write_text(&txt, &pretty)?;
    rec.output(&txt);
    print!("{pretty}");
    Ok(())
}

fn render(ctx: &Ctx, a: &RenderArgs, rec: &mut Record) -> CliResult<()> {
    let cells = ctx.load_cells()?;
    rec.input(&ctx.data_dir().join("cells.geof"));
    let (name, ids, values, use_target_thresholds) = if let Some(path) = &a.field {
        require(path)?;
        rec.input(path);
        let f = DiagnosticField::load_csv(path)?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("field").to_string();
        let target_scale = matches!(f.kind, FieldKind::Observed | FieldKind::Prediction);
        (stem, f.cell_ids, f.values, target_scale)
    } else {
        let name = a.predictor.clone().unwrap_or_default();
        let matrix = ctx.load_features()?;
        rec.input(&ctx.features_path());
        let j = matrix
            .column_index(&name)
            .ok_or_else(|| CliError::Validation(format!("unknown predictor '{name}'")))?;
        let (ids, vals): (Vec<i64>, Vec<f64>) = matrix
            .cell_ids()
            .iter()
            .zip(matrix.column(j))
            .filter(|(_, v)| v.is_finite())
            .map(|(&id, &v)| (id, v))
            .unzip();
        let stem: String = name
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        (format!("predictor_{stem}"), ids, vals, false)
    };
    let mut points = Vec::with_capacity(ids.len());
    for (id, v) in ids.iter().zip(&values) {
        let cell = cells
            .get(*id)
            .ok_or_else(|| CliError::Validation(format!("cell {id} is not in the cell table")))?;
        points.push((cell.lat, cell.lon, *v));
    }
    rec.stage("rasterize");
    let raster = Raster::from_points(&points)?;

    let thresholds = match &a.thresholds {
        Some(t) => [t[0], t[1]],
        None if use_target_thresholds && ctx.target_path().exists() => {
            rec.input(&ctx.target_path());
            TargetVector::load_csv(&ctx.target_path())?
                .thresholds()
                .unwrap_or_else(|| raster.terciles())
        }
        None => raster.terciles(),
    };
    let (bytes, ext) = match a.mode {
        RenderMode::Gray => (raster.to_pgm(), "pgm"),
        RenderMode::Tercile => (raster.to_ppm(thresholds), "ppm"),
        RenderMode::Ascii => (raster.to_ascii(3, 6).into_bytes(), "txt"),
    };
    let out = match &a.output {
        Some(p) => p.clone(),
        None => ctx.out.join("maps").join(format!("{name}.{ext}")),
    };
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        ctx.mkdir(dir)?;
    }
    std::fs::write(&out, bytes).map_err(|e| CliError::Internal(format!("{}: {e}", out.display())))?;
    rec.output(&out);
    println!("render: {} cells -> {}", raster.n_set(), out.display());
    Ok(())
}
