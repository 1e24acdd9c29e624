use std::collections::{HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use madgate_core::backend::{Backend, HttpBackend, LiveConfig, ScriptedBackend};
use madgate_core::classifier::{load_model, save_model, train_with_observer, LabeledExample, NetworkConfig, TrainConfig};
use madgate_core::debate::DebateConfig;
use madgate_core::eval::{
    compute_metrics, extract_example, ingest_dataset, render_report, EvalRecord, Extraction, MetricsReport, Pipeline,
    PipelineMode, RecordStatus,
};
use madgate_core::features::{ConfidenceSource, FeatureExtractor, Lexicons, FEATURE_COUNT};
use madgate_core::loss::{CalibrationTerm, LossConfig};
use madgate_core::protocol::{Modality, TemplateSet};

use crate::{AssetArgs, BackendArgs, CalibrationArg, ExtractArgs, FormatArg, ModalityArg, ModeArg, ReportArgs, RunArgs, SourceArg, TrainArgs};

pub enum Status {
    AllSucceeded,
    PartialFailure(usize),
}

impl Status {
    fn from_failures(n: usize) -> Self {
        if n == 0 {
            Status::AllSucceeded
        } else {
            Status::PartialFailure(n)
        }
    }
}

impl From<ModalityArg> for Modality {
    fn from(m: ModalityArg) -> Self {
        match m {
            ModalityArg::Qa => Modality::Qa,
            ModalityArg::Vqa => Modality::Vqa,
        }
    }
}

impl From<SourceArg> for ConfidenceSource {
    fn from(s: SourceArg) -> Self {
        match s {
            SourceArg::Final => ConfidenceSource::Final,
            SourceArg::Initial => ConfidenceSource::Initial,
        }
    }
}

impl From<ModeArg> for PipelineMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Selective => PipelineMode::Selective,
            ModeArg::AlwaysDebate => PipelineMode::AlwaysDebate,
            ModeArg::NeverDebate => PipelineMode::NeverDebate,
        }
    }
}

impl From<CalibrationArg> for CalibrationTerm {
    fn from(c: CalibrationArg) -> Self {
        match c {
            CalibrationArg::Ece => CalibrationTerm::Ece,
            CalibrationArg::Bce => CalibrationTerm::Bce,
            CalibrationArg::Mse => CalibrationTerm::Mse,
        }
    }
}

/// Backend settings as echoed into reports; never includes a credential.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendEcho {
    Script { path: String },
    Live(LiveConfig),
}

fn open_backend(args: &BackendArgs) -> Result<(Box<dyn Backend>, BackendEcho)> {
    match (&args.script, &args.live_config) {
        (Some(path), None) => {
            let backend = ScriptedBackend::from_file(path)?;
            Ok((Box::new(backend), BackendEcho::Script { path: path.display().to_string() }))
        }
        (None, Some(path)) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let config: LiveConfig = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let backend = HttpBackend::new(config.clone())?;
            Ok((Box::new(backend), BackendEcho::Live(config)))
        }
        _ => bail!("exactly one of --script or --live-config is required"),
    }
}

fn open_lexicons(dir: Option<&Path>) -> Result<Lexicons> {
    match dir {
        Some(d) => Lexicons::load(d).with_context(|| format!("loading lexicons from {}", d.display())),
        None => Ok(Lexicons::shipped()),
    }
}

fn open_templates(assets: &AssetArgs) -> Result<TemplateSet> {
    let modality = assets.modality.into();
    match &assets.templates {
        Some(d) => TemplateSet::load(d, modality).with_context(|| format!("loading templates from {}", d.display())),
        None => Ok(TemplateSet::shipped(modality)),
    }
}

fn display(p: &Option<PathBuf>) -> Option<String> {
    p.as_ref().map(|p| p.display().to_string())
}

/// Successful examples in a journal, latest line per id winning, in order of
/// first appearance. A torn final line from an interrupted run is ignored.
fn read_journal(path: &Path) -> Result<Vec<(String, madgate_core::eval::ExtractedExample)>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let lines: Vec<String> = BufReader::new(file).lines().collect::<Result<_, _>>()?;
    let mut order: Vec<String> = Vec::new();
    let mut latest: HashMap<String, madgate_core::eval::ExtractedExample> = HashMap::new();
    for (i, line) in lines.iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let entry: Extraction = match serde_json::from_str(line) {
            Ok(e) => e,
            Err(e) if i + 1 == lines.len() => {
                tracing::warn!("ignoring torn last line of {}: {e}", path.display());
                continue;
            }
            Err(e) => bail!("{}:{}: {e}", path.display(), i + 1),
        };
        if let Extraction::Example(ex) = entry {
            if !latest.contains_key(&ex.id) {
                order.push(ex.id.clone());
            }
            latest.insert(ex.id.clone(), ex);
        }
    }
    Ok(order
        .into_iter()
        .map(|id| {
            let ex = latest.remove(&id).expect("recorded");
            (id, ex)
        })
        .collect())
}

pub fn extract(args: ExtractArgs) -> Result<Status> {
    let records = ingest_dataset(&args.dataset)?;
    let (backend, _) = open_backend(&args.backend)?;
    let templates = open_templates(&args.assets)?;
    let extractor = FeatureExtractor::new(open_lexicons(args.assets.lexicons.as_deref())?)
        .with_confidence_source(args.confidence_source.into());

    let done: HashSet<String> = if args.out.exists() {
        read_journal(&args.out)?.into_iter().map(|(id, _)| id).collect()
    } else {
        HashSet::new()
    };
    if let Some(parent) = args.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let mut journal = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&args.out)
        .with_context(|| format!("opening {}", args.out.display()))?;
    // Start on a fresh line if a previous run was cut off mid-write.
    if fs::read(&args.out)?.last().is_some_and(|b| *b != b'\n') {
        journal.write_all(b"\n")?;
    }

    let (mut written, mut failed) = (0, 0);
    for rec in records.iter().filter(|r| !done.contains(&r.id)) {
        let entry = extract_example(rec, &extractor, backend.as_ref(), &templates)?;
        if let Extraction::Failed { id, error } = &entry {
            tracing::warn!("record {id}: {error}");
            failed += 1;
        } else {
            written += 1;
        }
        serde_json::to_writer(&mut journal, &entry)?;
        journal.write_all(b"\n")?;
        journal.flush()?;
    }
    println!(
        "extracted {written}, already present {}, failed {failed} -> {}",
        records.iter().filter(|r| done.contains(&r.id)).count(),
        args.out.display()
    );
    Ok(Status::from_failures(failed))
}

/// The confidence the examples carry as `p_llm`, read back from the
/// journal. Examples where both confidences agree fit either source.
fn infer_confidence_source(examples: &[LabeledExample]) -> Result<ConfidenceSource> {
    let value = |z: &madgate_core::features::FeatureVector, name| z.get(name).expect("named feature");
    let fits = |name| examples.iter().all(|e| e.features.p_llm == value(&e.features, name));
    match (fits("FinalConfidence"), fits("InitialConfidence")) {
        (true, _) => Ok(ConfidenceSource::Final),
        (false, true) => Ok(ConfidenceSource::Initial),
        (false, false) => bail!("examples mix confidence sources; re-extract them with one --confidence-source"),
    }
}

#[derive(Serialize)]
struct TrainEcho<'a> {
    examples: String,
    out: String,
    loss: &'a LossConfig,
    train: &'a TrainConfig,
}

pub fn train(args: TrainArgs) -> Result<Status> {
    let journal = read_journal(&args.examples)?;
    ensure!(!journal.is_empty(), "{} holds no extracted examples", args.examples.display());
    let examples: Vec<LabeledExample> = journal.into_iter().map(|(_, e)| e.example).collect();
    let lexicons = open_lexicons(args.lexicons.as_deref())?;

    let loss = LossConfig {
        alpha0: args.alpha0,
        alpha1: args.alpha1,
        gamma: args.gamma,
        lambda: args.lambda,
        mu: args.mu,
        bins: args.bins,
        tau: args.tau,
        calibration_term: args.calibration_term.into(),
    };
    loss.validate()?;
    let mut train_cfg = TrainConfig {
        epochs: args.epochs,
        batch_size: args.batch_size,
        validation_fraction: args.validation_fraction,
        seed: args.seed,
        network: NetworkConfig {
            input_dim: FEATURE_COUNT,
            hidden: args.hidden.clone(),
            dropout: args.dropout,
            ..NetworkConfig::default()
        },
        lexicon_version: lexicons.version.clone(),
        confidence_source: infer_confidence_source(&examples)?,
        ..TrainConfig::default()
    };
    train_cfg.adam.learning_rate = args.lr;

    let echo = TrainEcho {
        examples: args.examples.display().to_string(),
        out: args.out.display().to_string(),
        loss: &loss,
        train: &train_cfg,
    };
    println!("{}", serde_json::to_string_pretty(&echo)?);

    let metrics_path = args
        .metrics
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.metrics.jsonl", args.out.display())));
    let mut log = File::create(&metrics_path).with_context(|| format!("creating {}", metrics_path.display()))?;
    let mut log_err = None;
    let outcome = train_with_observer(&examples, &loss, &train_cfg, |m| {
        let line = serde_json::to_string(m).expect("metrics serialize");
        if let Err(e) = writeln!(log, "{line}") {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e).with_context(|| format!("writing {}", metrics_path.display()));
    }
    save_model(&outcome.best_model, &args.out)?;
    let best = &outcome.history[outcome.best_epoch - 1];
    println!(
        "trained on {} examples; kept epoch {} (val loss {}, val accuracy {}) -> {}",
        examples.len(),
        outcome.best_epoch,
        best.val_loss.map_or("n/a".into(), |v| format!("{v:.4}")),
        best.val_accuracy.map_or("n/a".into(), |v| format!("{:.1}%", 100.0 * v)),
        args.out.display()
    );
    Ok(Status::AllSucceeded)
}

/// Every setting a run used, defaults materialized.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEcho {
    pub dataset: String,
    pub model: String,
    pub backend: BackendEcho,
    pub templates: Option<String>,
    pub modality: Modality,
    pub lexicons: Option<String>,
    pub lexicon_version: String,
    pub confidence_source: ConfidenceSource,
    pub mode: PipelineMode,
    pub tau: f64,
    pub tau_override: Option<f64>,
    pub counterfactual: Option<String>,
    pub workers: usize,
    pub debate: DebateConfig,
    pub loss: LossConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunEcho,
    pub metrics: MetricsReport,
    pub records: Vec<EvalRecord>,
}

fn file_stem_for(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

pub fn run(args: RunArgs) -> Result<Status> {
    if let Some(t) = args.tau {
        ensure!((0.0..=1.0).contains(&t), "--tau must lie in [0, 1], got {t}");
    }
    ensure!(args.workers >= 1, "--workers must be positive");
    ensure!(args.max_rounds >= 1, "--max-rounds must be positive");
    let records = ingest_dataset(&args.dataset)?;
    let lexicons = open_lexicons(args.assets.lexicons.as_deref())?;
    let mut model = load_model(&args.model, &lexicons.version)?;
    if let Some(t) = args.tau {
        model = model.with_tau(t);
    }
    let templates = open_templates(&args.assets)?;
    let (backend, backend_echo) = open_backend(&args.backend)?;
    let extractor = FeatureExtractor::new(lexicons.clone()).with_confidence_source(model.confidence_source);

    let counterfactual = match &args.counterfactual {
        None => None,
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let report: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            ensure!(
                report.config.mode == PipelineMode::AlwaysDebate,
                "{} is a {} run; the counterfactual must be always-debate",
                path.display(),
                report.config.mode
            );
            Some(report.records.into_iter().map(|r| (r.id.clone(), r)).collect::<HashMap<_, _>>())
        }
    };

    let debate = DebateConfig {
        max_rounds: args.max_rounds,
        ..DebateConfig::default()
    };
    let mode: PipelineMode = args.mode.into();
    let pipeline = Pipeline {
        model: &model,
        extractor: &extractor,
        backend: backend.as_ref(),
        templates: &templates,
        debate,
        mode,
        workers: args.workers,
    };
    let mut results = pipeline.run(&records, counterfactual.as_ref())?;
    let metrics = compute_metrics(&results)?;

    fs::create_dir_all(args.out_dir.join("transcripts"))?;
    for r in &mut results {
        if let Some(t) = r.transcript.take() {
            let path = args.out_dir.join("transcripts").join(format!("{}.txt", file_stem_for(&r.id)));
            fs::write(&path, t.render() + "\n").with_context(|| format!("writing {}", path.display()))?;
        }
    }
    let failed = results.iter().filter(|r| r.status == RecordStatus::Failed).count();
    let report = RunReport {
        config: RunEcho {
            dataset: args.dataset.display().to_string(),
            model: args.model.display().to_string(),
            backend: backend_echo,
            templates: display(&args.assets.templates),
            modality: args.assets.modality.into(),
            lexicons: display(&args.assets.lexicons),
            lexicon_version: lexicons.version.clone(),
            confidence_source: model.confidence_source,
            mode,
            tau: model.tau,
            tau_override: args.tau,
            counterfactual: display(&args.counterfactual),
            workers: args.workers,
            debate,
            loss: model.loss,
            seed: args.seed,
        },
        metrics,
        records: results,
    };
    let json_path = args.out_dir.join("report.json");
    fs::write(&json_path, serde_json::to_string_pretty(&report)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    let text = format!("Mode {} at tau {}\n\n{}", report.config.mode, report.config.tau, render_report(&report.metrics));
    fs::write(args.out_dir.join("report.txt"), &text)?;
    print!("{text}");
    Ok(Status::from_failures(failed))
}

pub fn report(args: ReportArgs) -> Result<Status> {
    let text = fs::read_to_string(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    let report: RunReport = serde_json::from_str(&text).with_context(|| format!("parsing {}", args.input.display()))?;
    match args.format {
        FormatArg::Text => print!(
            "Mode {} at tau {}\n\n{}",
            report.config.mode,
            report.config.tau,
            render_report(&report.metrics)
        ),
        FormatArg::Json => println!("{}", serde_json::to_string_pretty(&report.metrics)?),
    }
    Ok(Status::AllSucceeded)
}
