use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::{json, Value};

use chive::config::ChiveConfig;
use chive::corpus::{generate, split, Corpus, CorpusConfig, CorpusItem};
use chive::decoder::{DurationMode, ProsodicPrediction};
use chive::evaluation::{
    evaluate, ordering_report, posterior, predict, random_embedding, transfer_correlation, EmbeddingSource,
    MetricReport,
};
use chive::linguistic::{UtteranceDocument, FRAME_SHIFT_MS};
use chive::model::{Model, ModelKind};
use chive::parallel::par_map;
use chive::training::{
    objective_grad_check, resume_checkpoint, train, AdamConfig, LossWeights, ObjectiveCheckConfig, OutputPaths,
    TrainConfig, Trainer,
};
use chive::variational::SentenceProsodyEmbedding;

use crate::cli::*;
use crate::error::{CliError, CliResult};

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn emit(out: Option<&Path>, text: &str) -> CliResult<()> {
    match out {
        Some(p) => write_file(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn finite(name: &str, v: f64) -> CliResult<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(CliError::validation(format!("--{name} must be finite")))
    }
}

pub fn run(command: Command) -> CliResult<()> {
    match command {
        Command::GenCorpus(a) => gen_corpus(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval_cmd(a),
        Command::Synthesize(a) => synthesize(a),
        Command::Transfer(a) => transfer(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Params(a) => params(a),
    }
}

fn gen_corpus(a: GenCorpusArgs) -> CliResult<()> {
    let config = CorpusConfig {
        utterances: a.utterances,
        seed: a.common.seed,
        words: (a.min_words, a.max_words),
        noise_scale: a.noise_scale,
        ..CorpusConfig::default()
    };
    config.validate()?;
    let corpus = generate(&config)?;
    corpus.write_dir(&a.out)?;
    emit(
        None,
        &pretty(&json!({
            "out": a.out,
            "utterances": corpus.items.len(),
            "seed": config.seed,
            "feature_dims": corpus.feature_dims(),
        })),
    )
}

fn select(corpus: &Corpus, part: SplitPart, fraction: f64, seed: u64) -> CliResult<Vec<CorpusItem>> {
    if part == SplitPart::All {
        return Ok(corpus.items.clone());
    }
    let s = split(corpus, fraction, seed)?;
    Ok(match part {
        SplitPart::Train => corpus.subset(&s.train),
        _ => corpus.subset(&s.eval),
    })
}

fn chive_config(dims: chive::linguistic::FeatureDims, toy: bool) -> ChiveConfig {
    if toy {
        ChiveConfig::toy(dims)
    } else {
        ChiveConfig::new(dims)
    }
}

/// Drops metrics rows logged after the step a run resumes from.
fn truncate_metrics(path: &Path, step: u64) -> CliResult<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = std::fs::read_to_string(path)?;
    let mut kept = String::new();
    for line in text.lines() {
        let row: Value = serde_json::from_str(line)
            .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
        if row["step"].as_u64().is_some_and(|s| s <= step) {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, &kept)
}

fn train_cmd(a: TrainArgs) -> CliResult<()> {
    for (name, v) in [
        ("learning-rate", a.learning_rate),
        ("duration-weight", a.duration_weight),
        ("f0c0-weight", a.f0c0_weight),
        ("kl-weight", a.kl_weight),
        ("clip-norm", a.clip_norm),
        ("train-fraction", a.train_fraction),
    ] {
        finite(name, v)?;
    }
    let seed = a.common.seed;
    let config = TrainConfig {
        batch_size: a.batch_size as usize,
        max_steps: a.steps,
        eval_interval: a.eval_interval,
        eval_limit: a.eval_limit,
        seed,
        clip_norm: a.clip_norm,
        adam: AdamConfig {
            learning_rate: a.learning_rate,
            ..AdamConfig::default()
        },
        weights: LossWeights {
            duration: a.duration_weight,
            f0c0: a.f0c0_weight,
            kl: a.kl_weight,
            kl_warmup_steps: a.kl_warmup,
        },
        jobs: a.common.jobs as usize,
        data_init: !a.no_data_init,
    };
    config.validate()?;
    let corpus = Corpus::read_dir(&a.corpus)?;
    let split_seed = a.split_seed.unwrap_or(seed);
    let parts = split(&corpus, a.train_fraction, split_seed)?;
    let train_items = corpus.subset(&parts.train);
    let eval_items = corpus.subset(&parts.eval);
    let paths = OutputPaths { dir: a.out.clone() };
    let resumed = if a.resume { resume_checkpoint(&a.out)? } else { None };
    if resumed.is_none() && [paths.last(), paths.best(), paths.metrics()].iter().any(|p| p.exists()) {
        return Err(CliError::validation(format!(
            "{} already holds a run; pass --resume or choose another --out",
            a.out.display()
        )));
    }
    create_dir(&a.out)?;
    let ids = |items: &[CorpusItem]| items.iter().map(|it| it.tree.utterance_id.clone()).collect::<Vec<_>>();
    write_file(
        &a.out.join("split.json"),
        &pretty(&json!({
            "train_fraction": a.train_fraction,
            "seed": split_seed,
            "train": ids(&train_items),
            "eval": ids(&eval_items),
        })),
    )?;
    let mut trainer = match resumed {
        Some(ck) => {
            let t = Trainer::resume(&ck, config, train_items)?;
            truncate_metrics(&paths.metrics(), t.step())?;
            t
        }
        None => {
            let base = chive_config(corpus.feature_dims(), a.toy);
            let model = match ModelKind::from(a.model) {
                ModelKind::Chive => Model::chive(base, seed)?,
                ModelKind::Baseline => Model::baseline(Model::matched_baseline_config(&base)?, seed)?,
            };
            Trainer::new(model, config, train_items)?
        }
    };
    let verbose = a.verbose;
    let summary = train(&mut trainer, &eval_items, Some(&paths), |row| {
        if verbose {
            eprintln!("{}", serde_json::to_string(row).expect("row serializes"));
        }
    })?;
    emit(
        None,
        &pretty(&json!({
            "out": a.out,
            "model": trainer.model.kind(),
            "parameters": trainer.model.parameter_count(),
            "train_utterances": trainer.data().len(),
            "eval_utterances": eval_items.len(),
            "final_step": summary.final_step,
            "best_step": summary.best_step,
            "best_logf0_rmse": summary.best_logf0_rmse,
        })),
    )
}

fn table(rows: &[(&str, &MetricReport)]) -> String {
    let mut s = MetricReport::table_header();
    s.push('\n');
    for (label, r) in rows {
        s.push_str(&r.table_row(label));
        s.push('\n');
    }
    s
}

fn eval_cmd(a: EvalArgs) -> CliResult<()> {
    finite("train-fraction", a.train_fraction)?;
    let seed = a.common.seed;
    let jobs = a.common.jobs as usize;
    let model = Model::load(&a.checkpoint)?;
    let corpus = Corpus::read_dir(&a.corpus)?;
    let mut items = select(&corpus, a.split, a.train_fraction, a.split_seed.unwrap_or(seed))?;
    if let Some(limit) = a.limit {
        items.truncate(limit);
    }
    if items.is_empty() {
        return Err(CliError::validation("nothing to evaluate: the selected split is empty"));
    }
    let random_seed = a.random_seed.unwrap_or(seed);
    let out = a.out.as_deref();
    let single = |source: EmbeddingSource| -> CliResult<()> {
        let ev = evaluate(&model, &items, source, jobs)?;
        match a.format {
            Format::Json => emit(out, &pretty(&json!({"source": source, "report": ev.report}))),
            Format::Table => emit(out, &table(&[(&source.to_string(), &ev.report)])),
        }
    };
    match a.mode {
        EvalMode::Encoded => single(EmbeddingSource::Encoded),
        EvalMode::Zero => single(EmbeddingSource::Zero),
        EvalMode::Random => single(EmbeddingSource::Random { seed: random_seed }),
        EvalMode::Ordering => {
            let r = ordering_report(&model, &items, random_seed, jobs)?;
            match a.format {
                Format::Json => emit(out, &pretty(&serde_json::to_value(&r).expect("report serializes"))),
                Format::Table => {
                    let mut s = table(&[("encoded", &r.encoded), ("zero", &r.zero), ("random", &r.random)]);
                    s.push_str(&format!(
                        "zero - encoded  {:.4} (bootstrap se {:.4})\nrandom - zero   {:.4} (bootstrap se {:.4})\nverdict         {}\n",
                        r.zero_minus_encoded.value,
                        r.zero_minus_encoded.bootstrap_se,
                        r.random_minus_zero.value,
                        r.random_minus_zero.bootstrap_se,
                        if r.ordered { "ordered" } else { "not converged" }
                    ));
                    emit(out, &s)
                }
            }
        }
        EvalMode::Transfer => {
            let r = transfer_correlation(&model, &items, a.pairs, random_seed, jobs)?;
            match a.format {
                Format::Json => emit(
                    out,
                    &pretty(&json!({"pair_count": r.pairs.len(), "correlation": r.correlation, "pairs": r.pairs})),
                ),
                Format::Table => emit(
                    out,
                    &format!("pairs        {}\ncorrelation  {:.4}\n", r.pairs.len(), r.correlation),
                ),
            }
        }
    }
}

fn duration_mode(d: Durations, doc: &UtteranceDocument) -> CliResult<DurationMode> {
    match d {
        Durations::Free => Ok(DurationMode::FreeRunning),
        Durations::Teacher if doc.tree.has_durations() => Ok(DurationMode::TeacherForced),
        Durations::Teacher => Err(CliError::validation(format!(
            "{}: teacher-forced durations need phone durations in the document",
            doc.tree.utterance_id
        ))),
    }
}

fn reference_embedding(model: &Model, doc: &UtteranceDocument) -> CliResult<SentenceProsodyEmbedding> {
    let targets = doc.targets.as_ref().ok_or_else(|| {
        CliError::validation(format!(
            "{}: a reference needs phone durations and frame streams",
            doc.tree.utterance_id
        ))
    })?;
    Ok(SentenceProsodyEmbedding(posterior(model, &doc.tree, targets)?.mu))
}

/// Writes `<id>.contour.json`, `<id>.contour.csv` and `<id>.embedding.json`.
fn write_contour(
    dir: &Path,
    utterance_id: &str,
    source: &str,
    embedding: &SentenceProsodyEmbedding,
    pred: &ProsodicPrediction,
) -> CliResult<Vec<PathBuf>> {
    create_dir(dir)?;
    let frame_ms: Vec<f64> = (0..pred.frame_count()).map(|t| t as f64 * FRAME_SHIFT_MS).collect();
    let contour = json!({
        "utterance_id": utterance_id,
        "source": source,
        "duration_mode": pred.mode,
        "frame_shift_ms": FRAME_SHIFT_MS,
        "durations_raw": pred.durations_raw,
        "durations": pred.durations_realized,
        "frame_ms": frame_ms,
        "log_f0": pred.log_f0,
        "c0": pred.c0,
    });
    let json_path = dir.join(format!("{utterance_id}.contour.json"));
    write_file(&json_path, &pretty(&contour))?;

    let csv_path = dir.join(format!("{utterance_id}.contour.csv"));
    write_file(&csv_path, &pred.contour_csv())?;

    let emb_path = dir.join(format!("{utterance_id}.embedding.json"));
    write_file(&emb_path, &format!("{}\n", embedding.to_json()))?;
    Ok(vec![json_path, csv_path, emb_path])
}

fn synthesize(a: SynthesizeArgs) -> CliResult<()> {
    let model = Model::load(&a.checkpoint)?;
    let doc = UtteranceDocument::read(&a.input)?;
    let dim = model.latent_dim();
    let (source, embedding) = match &a.embedding {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::validation(format!("{}: {e}", path.display())))?;
            ("file".to_string(), SentenceProsodyEmbedding::from_json(&text)?)
        }
        None => match a.mode {
            SynthMode::Encoded => ("encoded".to_string(), reference_embedding(&model, &doc)?),
            SynthMode::Zero => ("zero".to_string(), SentenceProsodyEmbedding::zeros(dim)),
            SynthMode::Random => (
                format!("random(seed={})", a.common.seed),
                random_embedding(a.common.seed, 0, dim),
            ),
        },
    };
    let mode = duration_mode(a.durations, &doc)?;
    let pred = predict(&model, &doc.tree, &embedding, mode)?;
    let files = write_contour(&a.out, &doc.tree.utterance_id, &source, &embedding, &pred)?;
    emit(
        None,
        &pretty(&json!({"utterance_id": doc.tree.utterance_id, "source": source, "frames": pred.frame_count(), "files": files})),
    )
}

fn transfer(a: TransferArgs) -> CliResult<()> {
    let model = Model::load(&a.checkpoint)?;
    let reference = UtteranceDocument::read(&a.reference)?;
    let target = UtteranceDocument::read(&a.target)?;
    let embedding = reference_embedding(&model, &reference)?;
    let mode = duration_mode(a.durations, &target)?;
    let pred = predict(&model, &target.tree, &embedding, mode)?;
    let source = format!("transfer({})", reference.tree.utterance_id);
    let files = write_contour(&a.out, &target.tree.utterance_id, &source, &embedding, &pred)?;
    emit(
        None,
        &pretty(&json!({
            "reference": reference.tree.utterance_id,
            "target": target.tree.utterance_id,
            "frames": pred.frame_count(),
            "files": files,
        })),
    )
}

fn gradcheck(a: GradcheckArgs) -> CliResult<()> {
    let defaults = ObjectiveCheckConfig::default();
    let config = ObjectiveCheckConfig {
        trees: a.trees,
        samples_per_tree: a.samples,
        epsilon: a.epsilon.unwrap_or(defaults.epsilon),
        seed: a.common.seed,
        ..defaults
    };
    if config.trees == 0 || config.samples_per_tree == 0 {
        return Err(CliError::validation("--trees and --samples must be positive"));
    }
    if !(config.epsilon > 0.0 && config.epsilon.is_finite()) {
        return Err(CliError::validation("--epsilon must be positive"));
    }
    finite("threshold", a.threshold)?;
    let kinds = match a.model {
        GradcheckModel::Chive => vec![ModelKind::Chive],
        GradcheckModel::Baseline => vec![ModelKind::Baseline],
        GradcheckModel::Both => vec![ModelKind::Chive, ModelKind::Baseline],
    };
    let reports = par_map(&kinds, a.common.jobs as usize, |_, kind| objective_grad_check(*kind, &config))?;
    let worst = reports.iter().map(|r| r.max_relative_error).fold(0.0, f64::max);
    let passed = worst < a.threshold;
    match a.format {
        Format::Json => {
            let models: Vec<Value> = reports
                .iter()
                .map(|r| {
                    let worst_tree = r
                        .trees
                        .iter()
                        .max_by(|x, y| x.max_relative_error.total_cmp(&y.max_relative_error));
                    json!({
                        "model": r.model,
                        "parameters": r.parameters,
                        "trees": r.trees.len(),
                        "words": r.trees.iter().map(|t| t.words).collect::<Vec<_>>(),
                        "max_relative_error": r.max_relative_error,
                        "worst": worst_tree.and_then(|t| t.worst.clone()),
                    })
                })
                .collect();
            emit(
                None,
                &pretty(&json!({
                    "epsilon": config.epsilon,
                    "threshold": a.threshold,
                    "max_relative_error": worst,
                    "passed": passed,
                    "models": models,
                })),
            )?;
        }
        Format::Table => {
            let mut s = String::from("model     parameters  trees  max_rel_error\n");
            for r in &reports {
                s.push_str(&format!(
                    "{:<9} {:>10}  {:>5}  {:.3e}\n",
                    r.model.to_string(),
                    r.parameters,
                    r.trees.len(),
                    r.max_relative_error
                ));
            }
            emit(None, &s)?;
        }
    }
    if passed {
        Ok(())
    } else {
        Err(CliError::numeric(format!(
            "gradient check failed: max relative error {worst:e} >= {}",
            a.threshold
        )))
    }
}

/// Parameter counts grouped by the first two components of the name.
fn module_counts(model: &Model) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (_, name, t) in model.store.iter() {
        let key: Vec<&str> = name.split('.').take(2).collect();
        *out.entry(key.join(".")).or_insert(0) += t.len();
    }
    out
}

fn params(a: ParamsArgs) -> CliResult<()> {
    let dims = match &a.corpus {
        Some(dir) => Corpus::read_dir(dir)?.feature_dims(),
        None => CorpusConfig::default().feature_dims(),
    };
    let base = chive_config(dims, a.toy);
    let matched = Model::matched_baseline_config(&base)?;
    let chive = Model::chive(base.clone(), a.common.seed)?;
    let baseline = Model::baseline(matched, a.common.seed)?;
    let ratio = baseline.parameter_count() as f64 / chive.parameter_count() as f64;
    match a.format {
        Format::Json => emit(
            None,
            &pretty(&json!({
                "feature_dims": dims,
                "chive": {"total": chive.parameter_count(), "modules": module_counts(&chive), "config": base},
                "baseline": {"total": baseline.parameter_count(), "modules": module_counts(&baseline), "config": matched},
                "baseline_over_chive": ratio,
            })),
        ),
        Format::Table => {
            let mut s = String::new();
            for (label, m) in [("chive", &chive), ("baseline", &baseline)] {
                s.push_str(&format!("{label:<28} {:>9}\n", m.parameter_count()));
                for (module, n) in module_counts(m) {
                    s.push_str(&format!("  {module:<26} {n:>9}\n"));
                }
            }
            s.push_str(&format!("baseline / chive             {ratio:.4}\n"));
            emit(None, &s)
        }
    }
}
