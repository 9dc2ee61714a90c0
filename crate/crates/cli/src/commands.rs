use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use effalign::bridge::{
    BridgeError, BridgeModel, CachingTransport, FixtureTransport, HttpTransport, PromptTemplate,
    RecordingTransport, RetryPolicy, Transport, WireEndpoint,
};
use effalign::effects::{data_effect, write_effect_table, EffectRow};
use effalign::ingest::{ingest_survey, write_survey, IngestMode, IngestReport};
use effalign::metrics::{
    attribute_heterogeneity, context_alignment_score, diagnose, equity_report, equity_svg, granularity_sweep,
    heterogeneity_svg, GapDefinition, LabelCounts, ScoreTable,
};
use effalign::objective::{gradient_check, total_loss, LossConfig, Schedule, TrainingSet};
use effalign::seed::stream_rng;
use effalign::surrogate::{
    generate_population, holdout_split, shapes, train, write_loss_curve, EffectDesign, Sampling, SurrogateModel,
    SyntheticSpec,
};
use effalign::survey::{load_catalog, AttributeSchema, Dataset, EditContext, Question};
use effalign::{DifferentiableModel, ResponseModel};
use rand::Rng;
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::CliError;
use crate::{Cli, Command, CommonArgs, DiagnoseArgs, EquityArgs, EvaluateArgs, GradcheckArgs, ModelArgs, SyntheticArgs, TrainArgs};

pub(crate) fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut config = match &cli.common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    apply_common(&mut config, &cli.common);
    match cli.command {
        Command::Ingest => ingest(&config),
        Command::EstimateEffects => estimate_effects(&config),
        Command::GenerateSynthetic(args) => {
            apply_synthetic(&mut config, &args)?;
            generate_synthetic(&config)
        }
        Command::Train(args) => {
            apply_train(&mut config, &args)?;
            train_cmd(&config, args.init.as_deref())
        }
        Command::Evaluate(args) => evaluate(config, args),
        Command::Sweep(args) => sweep(config, args),
        Command::EquityReport(args) => equity(config, args),
        Command::Diagnose(args) => diagnose_cmd(config, args),
        Command::Gradcheck(args) => gradcheck(&config, &args),
    }
}

fn apply_common(config: &mut RunConfig, common: &CommonArgs) {
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    if let Some(out) = &common.out {
        config.paths.output = out.clone();
    }
    if let Some(p) = &common.survey {
        config.paths.survey = Some(p.clone());
    }
    if let Some(p) = &common.catalog {
        config.paths.catalog = Some(p.clone());
    }
    if let Some(p) = &common.schema {
        config.paths.schema = Some(p.clone());
    }
    if common.lenient {
        config.data.mode = IngestMode::Lenient;
    }
    if let Some(m) = common.min_support {
        config.data.min_support = m;
    }
    if let Some(t) = common.threads {
        config.metrics.threads = t;
    }
    if common.svg {
        config.metrics.svg = true;
    }
}

fn parse_enum<T: serde::de::DeserializeOwned>(flag: &str, value: &str) -> Result<T, CliError> {
    serde_json::from_value(serde_json::Value::String(value.to_string()))
        .map_err(|_| CliError::usage(format!("invalid value `{value}` for --{flag}")))
}

fn apply_synthetic(config: &mut RunConfig, args: &SyntheticArgs) -> Result<(), CliError> {
    let s = &mut config.synthetic;
    if let Some(c) = &args.countries {
        s.countries = c.clone();
    }
    if let Some(v) = args.cell_size {
        s.cell_size = v;
    }
    if let Some(v) = args.questions {
        s.questions = v;
    }
    if let Some(v) = args.options {
        s.options = v;
    }
    if let Some(v) = &args.sampling {
        s.sampling = parse_enum::<Sampling>("sampling", v)?;
    }
    Ok(())
}

fn apply_train(config: &mut RunConfig, args: &TrainArgs) -> Result<(), CliError> {
    let t = &mut config.trainer;
    if let Some(v) = args.learning_rate {
        t.learning_rate = v;
    }
    if let Some(v) = args.epochs_stage1 {
        t.epochs_stage1 = v;
    }
    if let Some(v) = args.epochs_stage2 {
        t.epochs_stage2 = v;
    }
    for h in &args.holdout {
        t.holdout.push(h.split(',').map(|s| s.trim().to_string()).collect());
    }
    if let Some(v) = &args.schedule {
        config.loss.schedule = parse_enum::<Schedule>("schedule", v)?;
    }
    if let Some(v) = args.alpha {
        config.loss.alpha = v;
    }
    if let Some(v) = args.beta {
        config.loss.beta = v;
    }
    Ok(())
}

fn apply_model_args(config: &mut RunConfig, args: &ModelArgs) {
    if let Some(e) = &args.endpoint {
        config.bridge.endpoint = Some(e.clone());
    }
    if let Some(f) = &args.fixtures {
        config.bridge.fixtures = Some(f.clone());
    }
    if let Some(m) = args.max_in_flight {
        config.bridge.max_in_flight = m;
    }
}

// ---- file helpers ----

fn require<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    value
        .as_deref()
        .ok_or_else(|| CliError::usage(format!("missing --{flag} (or paths.{flag} in the config file)")))
}

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::io(path, e))
}

fn create(config: &RunConfig, name: &str) -> Result<(PathBuf, BufWriter<File>), CliError> {
    let dir = &config.paths.output;
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    Ok((path, BufWriter::new(file)))
}

fn finish(path: &Path, mut w: BufWriter<File>) -> Result<(), CliError> {
    w.flush().map_err(|e| CliError::io(path, e))?;
    println!("wrote {}", path.display());
    Ok(())
}

fn write_text(config: &RunConfig, name: &str, text: &str) -> Result<PathBuf, CliError> {
    let (path, mut w) = create(config, name)?;
    w.write_all(text.as_bytes()).map_err(|e| CliError::io(&path, e))?;
    finish(&path, w)?;
    Ok(path)
}

/// Writes `{config_hash, seed, <body fields>}` as pretty JSON.
fn write_json<T: Serialize>(config: &RunConfig, name: &str, body: &T) -> Result<PathBuf, CliError> {
    let mut value = serde_json::json!({ "config_hash": config.hash(), "seed": config.seed });
    let body = serde_json::to_value(body).map_err(|e| CliError::new("json", e.to_string()))?;
    match body {
        serde_json::Value::Object(map) => value.as_object_mut().expect("object").extend(map),
        other => {
            value["report"] = other;
        }
    }
    let mut text = serde_json::to_string_pretty(&value).expect("json value serializes");
    text.push('\n');
    write_text(config, name, &text)
}

fn write_csv<F>(config: &RunConfig, name: &str, body: F) -> Result<PathBuf, CliError>
where
    F: FnOnce(&[String], &mut BufWriter<File>) -> effalign::Result<()>,
{
    let (path, mut w) = create(config, name)?;
    body(&config.provenance(), &mut w)?;
    finish(&path, w)?;
    Ok(path)
}

// ---- inputs ----

fn load_schema(config: &RunConfig) -> Result<AttributeSchema, CliError> {
    match &config.paths.schema {
        Some(p) => {
            open(p)?;
            Ok(AttributeSchema::load(p)?)
        }
        None => Ok(AttributeSchema::default()),
    }
}

fn load_questions(config: &RunConfig) -> Result<Vec<Question>, CliError> {
    let p = require(&config.paths.catalog, "catalog")?;
    open(p)?;
    Ok(load_catalog(p)?)
}

fn load_dataset(config: &RunConfig) -> Result<(Dataset, IngestReport), CliError> {
    let schema = load_schema(config)?;
    let questions = load_questions(config)?;
    let path = require(&config.paths.survey, "survey")?;
    let file = open(path)?;
    ingest_survey(std::io::BufReader::new(file), &schema, &questions, config.data.mode).map_err(|e| {
        let e = CliError::from(e);
        CliError::new(e.code, format!("{}: {}", path.display(), e.message))
    })
}

fn contexts(config: &RunConfig, dataset: &Dataset) -> Result<Vec<EditContext>, CliError> {
    let contexts = dataset.enumerate_contexts(config.data.min_support);
    if contexts.is_empty() {
        return Err(CliError::new(
            "empty-contexts",
            format!(
                "no edit has at least {} respondents on both sides; lower --min-support",
                config.data.min_support
            ),
        ));
    }
    Ok(contexts)
}

// ---- ingest / effects / synthetic ----

fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let (dataset, report) = load_dataset(config)?;
    #[derive(Serialize)]
    struct Out<'a> {
        survey: String,
        mode: IngestMode,
        countries: Vec<String>,
        ingest: &'a IngestReport,
    }
    write_json(
        config,
        "ingest_report.json",
        &Out {
            survey: require(&config.paths.survey, "survey")?.display().to_string(),
            mode: config.data.mode,
            countries: dataset.countries(),
            ingest: &report,
        },
    )?;
    println!("kept {} of {} rows, dropped {}", report.records_kept, report.rows_read, report.dropped.len());
    Ok(())
}

fn estimate_effects(config: &RunConfig) -> Result<(), CliError> {
    let (dataset, _) = load_dataset(config)?;
    let contexts = contexts(config, &dataset)?;
    let rows = contexts
        .into_iter()
        .map(|context| Ok(EffectRow { data: data_effect(&dataset, &context)?, context, model: None }))
        .collect::<effalign::Result<Vec<_>>>()?;
    write_csv(config, "effects.csv", |pre, w| write_effect_table(dataset.schema(), &rows, pre, w))?;
    println!("{} edits", rows.len());
    Ok(())
}

fn synthetic_questions(config: &RunConfig) -> Vec<Question> {
    let s = &config.synthetic;
    (1..=s.questions)
        .map(|i| Question {
            id: format!("Q{i}"),
            topic: format!("topic{}", (i - 1) % s.topics.max(1) + 1),
            prompt_text: format!("Synthetic item {i}."),
            options: (1..=s.options).map(|k| format!("Option {k}")).collect(),
        })
        .collect()
}

fn generate_synthetic(config: &RunConfig) -> Result<(), CliError> {
    let schema = load_schema(config)?;
    let s = &config.synthetic;
    let design = EffectDesign {
        min_magnitude: s.min_magnitude,
        max_magnitude: s.max_magnitude,
        base_scale: s.base_scale,
        country_scale: s.country_scale,
    };
    let mut spec = SyntheticSpec::random(
        &schema,
        synthetic_questions(config),
        s.countries.clone(),
        design,
        s.cell_size,
        config.seed,
    )?;
    spec.sampling = s.sampling;
    let (dataset, _) = generate_population(&spec)?;
    write_text(config, "synthetic_spec.json", &(spec.to_json() + "\n"))?;
    write_text(config, "schema.json", &(serde_json::to_string_pretty(&schema).expect("schema serializes") + "\n"))?;
    write_text(
        config,
        "questions.json",
        &(serde_json::to_string_pretty(&spec.questions).expect("questions serialize") + "\n"),
    )?;
    write_csv(config, "survey.csv", |pre, w| {
        for line in pre {
            writeln!(w, "# {line}")?;
        }
        write_survey(&dataset, w)
    })?;
    println!("{} respondents", dataset.records().len());
    Ok(())
}

// ---- training ----

fn train_cmd(config: &RunConfig, init: Option<&Path>) -> Result<(), CliError> {
    let (dataset, _) = load_dataset(config)?;
    let schema = dataset.schema().clone();
    let all = contexts(config, &dataset)?;
    let held = config
        .trainer
        .holdout
        .iter()
        .map(|labels| schema.assignment_from_labels(labels))
        .collect::<effalign::Result<Vec<_>>>()?;
    let (train_ctx, test_ctx) = holdout_split(&schema, &all, &held)?;
    if train_ctx.is_empty() {
        return Err(CliError::new("empty-contexts", "every edit is held out; nothing left to train on"));
    }
    let set = TrainingSet::build(&dataset, &train_ctx)?;
    let model = match init {
        Some(p) => {
            open(p)?;
            let (m, _) = SurrogateModel::load(p)?;
            m.check_compatible(&dataset)?;
            m
        }
        None => SurrogateModel::for_dataset(&dataset)?,
    };
    let trainer = config.trainer.trainer_config(config.seed);
    let outcome = train(model, &set, &config.loss, &trainer)?;

    let metadata = |stage: &str| {
        BTreeMap::from([
            ("config_hash".to_string(), config.hash()),
            ("seed".to_string(), config.seed.to_string()),
            ("stage".to_string(), stage.to_string()),
        ])
    };
    let stage1_name = match config.loss.schedule {
        Schedule::Sequential => "anchor",
        Schedule::Joint => "joint_stage1",
    };
    let checkpoint = |m: &SurrogateModel, stage: &str| {
        serde_json::to_string_pretty(&m.to_checkpoint(metadata(stage))).expect("checkpoint serializes") + "\n"
    };
    write_text(config, "checkpoint.json", &checkpoint(&outcome.model, "final"))?;
    write_text(config, "checkpoint_stage1.json", &checkpoint(&outcome.stage1_model, stage1_name))?;
    write_csv(config, "loss_curve.csv", |pre, w| write_loss_curve(&outcome.curve, pre, w))?;

    #[derive(Serialize)]
    struct SetSummary {
        contexts: usize,
        anchor_loss: f64,
        ce_loss: f64,
        alignment_score: f64,
        stage1_alignment_score: f64,
    }
    let summarize = |ctx: &[EditContext]| -> Result<Option<SetSummary>, CliError> {
        if ctx.is_empty() {
            return Ok(None);
        }
        let s = TrainingSet::build(&dataset, ctx)?;
        let r = total_loss(&outcome.model, &s, &LossConfig::default())?;
        Ok(Some(SetSummary {
            contexts: ctx.len(),
            anchor_loss: r.anchor_loss,
            ce_loss: r.ce_loss,
            alignment_score: context_alignment_score(&outcome.model, &dataset, ctx)?.value,
            stage1_alignment_score: context_alignment_score(&outcome.stage1_model, &dataset, ctx)?.value,
        }))
    };
    #[derive(Serialize)]
    struct Out {
        loss: LossConfig,
        trainer: effalign::surrogate::TrainerConfig,
        holdout: Vec<Vec<String>>,
        steps: usize,
        train: Option<SetSummary>,
        held_out: Option<SetSummary>,
    }
    let out = Out {
        loss: config.loss,
        trainer,
        holdout: config.trainer.holdout.clone(),
        steps: outcome.curve.len(),
        train: summarize(&train_ctx)?,
        held_out: summarize(&test_ctx)?,
    };
    if let Some(t) = &out.train {
        println!("train ce_loss={:.6} score={:.4}", t.ce_loss, t.alignment_score);
    }
    write_json(config, "train_report.json", &out)?;
    Ok(())
}

// ---- models for evaluation ----

enum BridgeTransport {
    Replay(FixtureTransport),
    Live(CachingTransport<HttpTransport>),
    Record(RecordingTransport<CachingTransport<HttpTransport>>, PathBuf),
}

impl Transport for BridgeTransport {
    fn post(&self, body: &[u8]) -> Result<Vec<u8>, BridgeError> {
        match self {
            BridgeTransport::Replay(t) => t.post(body),
            BridgeTransport::Live(t) => t.post(body),
            BridgeTransport::Record(t, _) => t.post(body),
        }
    }
}

enum LoadedModel {
    Surrogate(SurrogateModel),
    Bridge(Box<BridgeModel<WireEndpoint<BridgeTransport>>>),
    Empirical,
}

impl LoadedModel {
    fn as_model<'a>(&'a self, dataset: &'a Dataset) -> &'a (dyn ResponseModel + Sync) {
        match self {
            LoadedModel::Surrogate(m) => m,
            LoadedModel::Bridge(m) => m.as_ref(),
            LoadedModel::Empirical => dataset,
        }
    }

    fn default_name(&self) -> &'static str {
        match self {
            LoadedModel::Surrogate(_) => "surrogate",
            LoadedModel::Bridge(_) => "endpoint",
            LoadedModel::Empirical => "empirical",
        }
    }

    /// Persists recorded fixtures, if recording.
    fn finish(&self) -> Result<(), CliError> {
        if let LoadedModel::Bridge(m) = self {
            if let BridgeTransport::Record(t, path) = m.endpoint().transport() {
                t.save(path)?;
                println!("wrote {}", path.display());
            }
        }
        Ok(())
    }

    fn threads(&self, config: &RunConfig) -> usize {
        match self {
            LoadedModel::Bridge(_) => config.bridge.max_in_flight,
            _ => config.metrics.threads,
        }
    }
}

fn load_model(config: &RunConfig, args: &ModelArgs, dataset: &Dataset) -> Result<LoadedModel, CliError> {
    if args.empirical {
        return Ok(LoadedModel::Empirical);
    }
    if let Some(p) = &args.checkpoint {
        open(p)?;
        let (m, _) = SurrogateModel::load(p)?;
        m.check_compatible(dataset)?;
        return Ok(LoadedModel::Surrogate(m));
    }
    let b = &config.bridge;
    let transport = match (&b.endpoint, &b.fixtures) {
        (None, None) => {
            return Err(CliError::usage("a model is required: --checkpoint, --endpoint, --fixtures or --empirical"))
        }
        (None, Some(f)) => {
            open(f)?;
            BridgeTransport::Replay(FixtureTransport::load(f)?)
        }
        (Some(url), fixtures) => {
            let retry = RetryPolicy {
                attempts: b.attempts,
                initial_backoff: Duration::from_millis(b.initial_backoff_ms),
                max_backoff: Duration::from_millis(b.max_backoff_ms),
            };
            let http = CachingTransport::new(HttpTransport::new(url, Duration::from_secs(b.timeout_secs), retry)?);
            match fixtures {
                Some(f) => BridgeTransport::Record(RecordingTransport::new(http), f.clone()),
                None => BridgeTransport::Live(http),
            }
        }
    };
    let schema = dataset.schema().clone();
    let template = match &b.template {
        Some(p) => {
            let file = open(p)?;
            serde_json::from_reader(std::io::BufReader::new(file))
                .map_err(|e| CliError::new("config", format!("{}: {e}", p.display())))?
        }
        None if schema == AttributeSchema::default() => PromptTemplate::default_for_default_schema(),
        None => PromptTemplate::from_schema_labels(&schema),
    };
    let model = BridgeModel::new(WireEndpoint::new(transport), template, schema, dataset.questions())?;
    Ok(LoadedModel::Bridge(Box::new(model)))
}

fn evaluate(mut config: RunConfig, args: EvaluateArgs) -> Result<(), CliError> {
    apply_model_args(&mut config, &args.model);
    if !args.granularities.is_empty() {
        config.metrics.granularities = args.granularities.clone();
    }
    let (dataset, _) = load_dataset(&config)?;
    let loaded = load_model(&config, &args.model, &dataset)?;
    let name = args.model.model_name.clone().unwrap_or_else(|| loaded.default_name().to_string());
    let table = granularity_sweep(
        &name,
        loaded.as_model(&dataset),
        &dataset,
        &config.metrics.granularities,
        loaded.threads(&config),
    )?;
    loaded.finish()?;
    let scores = table.score_table();
    write_csv(&config, "scores.csv", |pre, w| scores.write_csv(pre, w))?;
    #[derive(Serialize)]
    struct Out {
        model: String,
        granularities: Vec<usize>,
        personas_scored: usize,
        personas_skipped: usize,
    }
    write_json(
        &config,
        "evaluate_report.json",
        &Out {
            model: name,
            granularities: config.metrics.granularities.clone(),
            personas_scored: table.personas.len(),
            personas_skipped: table.skipped_total(),
        },
    )?;
    Ok(())
}

fn sweep(mut config: RunConfig, args: ModelArgs) -> Result<(), CliError> {
    apply_model_args(&mut config, &args);
    let (dataset, _) = load_dataset(&config)?;
    config.metrics.granularities = (1..=dataset.schema().len()).collect();
    let loaded = load_model(&config, &args, &dataset)?;
    let name = args.model_name.clone().unwrap_or_else(|| loaded.default_name().to_string());
    let table = granularity_sweep(
        &name,
        loaded.as_model(&dataset),
        &dataset,
        &config.metrics.granularities,
        loaded.threads(&config),
    )?;
    loaded.finish()?;
    let scores = table.score_table();
    write_csv(&config, "sweep_scores.csv", |pre, w| scores.write_csv(pre, w))?;
    let schema = dataset.schema().clone();
    write_csv(&config, "sweep_personas.csv", |pre, w| {
        for line in pre {
            writeln!(w, "# {line}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        let mut header = vec!["country".to_string(), "granularity".into()];
        header.extend(schema.names().map(str::to_string));
        header.extend(["questions".to_string(), "score".into()]);
        csv.write_record(&header)?;
        for p in &table.personas {
            let mut row = vec![p.persona.country.clone(), p.persona.granularity().to_string()];
            row.extend(schema.names().map(|n| p.persona.level(n).map(|l| l.to_string()).unwrap_or_default()));
            row.extend([p.score.question_count.to_string(), p.score.value.to_string()]);
            csv.write_record(&row)?;
        }
        csv.flush()?;
        Ok(())
    })?;
    #[derive(Serialize)]
    struct Out<'a> {
        model: &'a str,
        personas_scored: usize,
        skipped: &'a BTreeMap<String, BTreeMap<usize, usize>>,
    }
    write_json(
        &config,
        "sweep_report.json",
        &Out { model: &name, personas_scored: table.personas.len(), skipped: &table.skipped },
    )?;
    Ok(())
}

fn equity(mut config: RunConfig, args: EquityArgs) -> Result<(), CliError> {
    if let Some(g) = &args.gap {
        config.tiers.gap = parse_enum::<GapDefinition>("gap", g)?;
    }
    if let Some(b) = &args.baseline {
        config.tiers.baseline = Some(b.clone());
    }
    let mut table = ScoreTable::default();
    for p in &args.scores {
        let t = ScoreTable::read_csv(open(p)?).map_err(|e| {
            let e = CliError::from(e);
            CliError::new(e.code, format!("{}: {}", p.display(), e.message))
        })?;
        table.merge(&t);
    }
    let report = equity_report(&table, &config.tiers.tier_config(), config.tiers.baseline.as_deref())?;
    for m in &report.models {
        println!("{}: mean gap {:.4}", m.model, m.mean_gap);
    }
    write_json(&config, "equity_report.json", &report)?;
    if config.metrics.svg {
        write_text(&config, "equity.svg", &equity_svg(&report))?;
    }
    Ok(())
}

fn diagnose_cmd(mut config: RunConfig, args: DiagnoseArgs) -> Result<(), CliError> {
    apply_model_args(&mut config, &args.model);
    if let Some(e) = args.epsilon {
        config.metrics.epsilon = e;
    }
    let (dataset, _) = load_dataset(&config)?;
    let contexts = contexts(&config, &dataset)?;
    let loaded = load_model(&config, &args.model, &dataset)?;
    let diagnosis = diagnose(
        loaded.as_model(&dataset),
        &dataset,
        &contexts,
        config.metrics.epsilon,
        config.metrics.scalarization,
        loaded.threads(&config),
    )?;
    loaded.finish()?;
    let heterogeneity = attribute_heterogeneity(&dataset, config.data.min_support, config.metrics.scalarization)?;
    write_csv(&config, "diagnosis_counts.csv", |pre, w| diagnosis.write_counts_csv(pre, w))?;
    write_csv(&config, "diagnosis_cells.csv", |pre, w| diagnosis.write_rows_csv(pre, w))?;
    write_csv(&config, "heterogeneity.csv", |pre, w| heterogeneity.write_csv(pre, w))?;
    let totals = diagnosis.totals();
    #[derive(Serialize)]
    struct Out {
        epsilon: f64,
        totals: LabelCounts,
        by_country: BTreeMap<String, LabelCounts>,
        dominant_attribute: BTreeMap<String, BTreeMap<String, String>>,
    }
    let mut dominant: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
    for ((country, topic), a) in heterogeneity.dominant() {
        dominant.entry(country).or_default().insert(topic, a);
    }
    write_json(
        &config,
        "diagnose_report.json",
        &Out {
            epsilon: config.metrics.epsilon,
            totals,
            by_country: diagnosis.counts_by_country(),
            dominant_attribute: dominant,
        },
    )?;
    if config.metrics.svg {
        write_text(&config, "heterogeneity.svg", &heterogeneity_svg(&heterogeneity))?;
    }
    println!(
        "flipped={} stereotyping={} erasure={} aligned={}",
        totals.flipped, totals.stereotyping, totals.erasure, totals.aligned
    );
    Ok(())
}

// ---- gradient check ----

/// Small synthetic dataset used when no survey is given.
fn default_gradcheck_data(config: &RunConfig) -> Result<Dataset, CliError> {
    let schema = load_schema(config)?;
    let questions: Vec<Question> = (1..=3)
        .map(|i| Question {
            id: format!("Q{i}"),
            topic: "gradcheck".into(),
            prompt_text: format!("Item {i}."),
            options: (1..=4).map(|k| format!("Option {k}")).collect(),
        })
        .collect();
    let spec = SyntheticSpec::random(
        &schema,
        questions,
        vec!["AAA".into(), "BBB".into()],
        EffectDesign::default(),
        20,
        config.seed,
    )?;
    Ok(generate_population(&spec)?.0)
}

fn gradcheck(config: &RunConfig, args: &GradcheckArgs) -> Result<(), CliError> {
    if !(args.step > 0.0 && args.tolerance > 0.0) {
        return Err(CliError::usage("--step and --tolerance must be positive"));
    }
    let dataset = match &config.paths.survey {
        Some(_) => load_dataset(config)?.0,
        None => default_gradcheck_data(config)?,
    };
    let contexts = contexts(config, &dataset)?;
    let set = TrainingSet::build(&dataset, &contexts)?;
    let mut points: Vec<SurrogateModel> = Vec::new();
    match &args.checkpoint {
        Some(p) => {
            open(p)?;
            let (m, _) = SurrogateModel::load(p)?;
            m.check_compatible(&dataset)?;
            points.push(m);
        }
        None => {
            let mut rng = stream_rng(config.seed, "gradcheck");
            for _ in 0..args.points.max(1) {
                let mut m = SurrogateModel::zeros(dataset.schema(), &shapes(dataset.questions()), &dataset.countries())?;
                for p in m.parameters_mut() {
                    *p = rng.random_range(-1.0..1.0);
                }
                points.push(m);
            }
        }
    }
    let stages = [
        ("anchor", config.loss.with_weights(1.0, 0.0)),
        ("effects", config.loss.with_weights(0.0, 1.0)),
        ("weighted", config.loss),
    ];
    #[derive(Serialize)]
    struct Row {
        point: usize,
        objective: &'static str,
        max_relative_error: f64,
        worst_parameter: usize,
        analytic: f64,
        numeric: f64,
    }
    let mut rows = Vec::new();
    for (i, m) in points.iter().enumerate() {
        for (name, loss) in &stages {
            let c = gradient_check(m, &set, loss, args.step)?;
            rows.push(Row {
                point: i,
                objective: name,
                max_relative_error: c.max_relative_error,
                worst_parameter: c.worst_parameter,
                analytic: c.analytic,
                numeric: c.numeric,
            });
        }
    }
    let worst = rows.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let parameters = points[0].parameters().len();
    #[derive(Serialize)]
    struct Out<'a> {
        parameters: usize,
        contexts: usize,
        step: f64,
        tolerance: f64,
        max_relative_error: f64,
        checks: &'a [Row],
    }
    write_json(
        config,
        "gradcheck.json",
        &Out {
            parameters,
            contexts: contexts.len(),
            step: args.step,
            tolerance: args.tolerance,
            max_relative_error: worst,
            checks: &rows,
        },
    )?;
    println!("max_relative_error={worst:.3e} parameters={parameters} points={}", points.len());
    if worst > args.tolerance {
        return Err(CliError::new(
            "gradcheck",
            format!("max relative error {worst:.3e} exceeds tolerance {:.1e}", args.tolerance),
        ));
    }
    Ok(())
}
