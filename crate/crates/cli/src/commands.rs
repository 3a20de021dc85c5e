use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clmn_core::concept_layer::ConceptSpec;
use clmn_core::data::{load_jsonl, write_jsonl, ConceptRecord};
use clmn_core::metrics::MetricsReport;
use clmn_core::reasoner::{ExtractedRule, Thresholds};
use clmn_core::training::{fit, Checkpoint};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

pub const MANIFEST: &str = "manifest.json";
pub const CHECKPOINT: &str = "checkpoint.json";
const SPLITS: [&str; 3] = ["train.jsonl", "val.jsonl", "test.jsonl"];

/// Written next to generated data; lets later commands recover the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub seed: u64,
    pub noise: f64,
    pub sizes: [usize; 3],
    pub concepts: ConceptSpec,
    pub n_classes: usize,
    /// Planted rule text per class.
    pub rules: Vec<String>,
}

pub struct Dataset {
    pub spec: ConceptSpec,
    pub n_classes: usize,
    pub train: Vec<ConceptRecord>,
    pub val: Vec<ConceptRecord>,
    pub test: Vec<ConceptRecord>,
}

fn split_paths(dir: &Path) -> [PathBuf; 3] {
    SPLITS.map(|s| dir.join(s))
}

/// Fails unless every split file exists; runs before any output is written.
fn require_data(config: &RunConfig) -> Result<()> {
    for p in split_paths(&config.data) {
        if !p.is_file() {
            bail!("dataset file {} not found (run `clmn generate` or pass --data)", p.display());
        }
    }
    Ok(())
}

fn require_checkpoint(config: &RunConfig) -> Result<PathBuf> {
    let p = config.out.join(CHECKPOINT);
    if !p.is_file() {
        bail!("checkpoint {} not found (run `clmn train` first)", p.display());
    }
    Ok(p)
}

fn schema(config: &RunConfig) -> Result<(ConceptSpec, usize)> {
    let manifest = config.data.join(MANIFEST);
    if manifest.is_file() {
        let m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest)?)
            .with_context(|| format!("reading {}", manifest.display()))?;
        return Ok((m.concepts, m.n_classes));
    }
    match (&config.concepts, config.n_classes) {
        (Some(spec), Some(n)) => Ok((spec.clone(), n)),
        _ => bail!(
            "{} has no {MANIFEST}; set [concepts] and n_classes in the config",
            config.data.display()
        ),
    }
}

pub fn load_dataset(config: &RunConfig) -> Result<Dataset> {
    require_data(config)?;
    let (spec, n_classes) = schema(config)?;
    let [train, val, test] = split_paths(&config.data).map(|p| {
        load_jsonl(&p, &spec, Some(n_classes)).with_context(|| format!("loading {}", p.display()))
    });
    Ok(Dataset {
        spec,
        n_classes,
        train: train?,
        val: val?,
        test: test?,
    })
}

pub fn generate(config: &RunConfig) -> Result<Manifest> {
    let task = config.planted_task()?;
    let p = &config.planted;
    let seed = config.train.seed;
    let mut records = task.generate(p.n_train + p.n_val + p.n_test, seed)?;
    let test = records.split_off(p.n_train + p.n_val);
    let val = records.split_off(p.n_train);
    let train = records;

    fs::create_dir_all(&config.data)
        .with_context(|| format!("creating {}", config.data.display()))?;
    for (path, recs) in split_paths(&config.data).iter().zip([&train, &val, &test]) {
        write_jsonl(path, recs).with_context(|| format!("writing {}", path.display()))?;
    }
    let manifest = Manifest {
        seed,
        noise: p.noise,
        sizes: [train.len(), val.len(), test.len()],
        concepts: task.spec.clone(),
        n_classes: task.n_classes(),
        rules: task.rendered_rules()?,
    };
    fs::write(
        config.data.join(MANIFEST),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(manifest)
}

pub fn rules_text(rules: &[ExtractedRule]) -> String {
    let mut out = String::new();
    for r in rules {
        let _ = writeln!(out, "class {}: {}", r.class, r.rendered);
    }
    out
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub test: MetricsReport,
    pub rules: Vec<ExtractedRule>,
}

fn train_and_evaluate(config: &RunConfig, data: &Dataset) -> Result<TrainOutcome> {
    let checkpoint = fit(&config.train, &data.spec, data.n_classes, &data.train, &data.val)?;
    let test = checkpoint.model.evaluate(&data.test)?;
    let rules = checkpoint.model.extract_rules(&data.train, Thresholds::default())?;
    Ok(TrainOutcome {
        checkpoint,
        test,
        rules,
    })
}

pub fn train(config: &RunConfig) -> Result<TrainOutcome> {
    let data = load_dataset(config)?;
    let outcome = train_and_evaluate(config, &data)?;
    fs::create_dir_all(&config.out)?;
    outcome.checkpoint.save(config.out.join(CHECKPOINT))?;
    fs::write(config.out.join("history.jsonl"), outcome.checkpoint.history_jsonl()?)?;
    fs::write(
        config.out.join("metrics.json"),
        serde_json::to_string_pretty(&outcome.test)? + "\n",
    )?;
    fs::write(config.out.join("rules.txt"), rules_text(&outcome.rules))?;
    Ok(outcome)
}

pub fn evaluate(config: &RunConfig) -> Result<MetricsReport> {
    let ck_path = require_checkpoint(config)?;
    require_data(config)?;
    let checkpoint = Checkpoint::load(&ck_path)?;
    let test = load_jsonl(
        config.data.join(SPLITS[2]),
        &checkpoint.model.spec,
        Some(checkpoint.model.n_classes),
    )?;
    let report = checkpoint.model.evaluate(&test)?;
    fs::write(
        config.out.join("evaluation.json"),
        serde_json::to_string_pretty(&report)? + "\n",
    )?;
    Ok(report)
}

pub fn format_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.4}"))
        .collect::<Vec<_>>()
        .join("\t")
}

pub fn ablation_header() -> String {
    let mut cols = vec!["alpha1", "alpha2"];
    cols.extend(MetricsReport::HEADER);
    cols.join("\t")
}

/// One train/evaluate per grid cell, same seed; returns the TSV table.
pub fn ablate(config: &RunConfig) -> Result<String> {
    let data = load_dataset(config)?;
    let mut table = ablation_header() + "\n";
    for &(alpha1, alpha2) in &config.grid {
        let mut cell = config.clone();
        cell.train.alpha1 = alpha1;
        cell.train.alpha2 = alpha2;
        let outcome = train_and_evaluate(&cell, &data)?;
        let mut row = vec![alpha1, alpha2];
        row.extend(outcome.test.values());
        table.push_str(&format_row(&row));
        table.push('\n');
    }
    fs::create_dir_all(&config.out)?;
    fs::write(config.out.join("ablation.tsv"), &table)?;
    Ok(table)
}

/// Explanation blocks for the first `n` test examples, preceded by the rules
/// extracted from the training split.
pub fn explain(config: &RunConfig, n: usize) -> Result<String> {
    let ck_path = require_checkpoint(config)?;
    require_data(config)?;
    let checkpoint = Checkpoint::load(&ck_path)?;
    let model = &checkpoint.model;
    let load = |name: &str| load_jsonl(config.data.join(name), &model.spec, Some(model.n_classes));
    let train = load(SPLITS[0])?;
    let test = load(SPLITS[2])?;
    let rules = model.extract_rules(&train, Thresholds::default())?;
    let explanations = model.explain(&test[..n.min(test.len())])?;

    let mut text = String::from("extracted rules\n");
    text.push_str(&rules_text(&rules));
    let mut jsonl = String::new();
    for (i, e) in explanations.iter().enumerate() {
        let _ = write!(text, "\nexample {i}\n{}", e.to_text());
        jsonl.push_str(&serde_json::to_string(e)?);
        jsonl.push('\n');
    }
    fs::write(config.out.join("explanations.txt"), &text)?;
    fs::write(config.out.join("explanations.jsonl"), jsonl)?;
    Ok(text)
}
