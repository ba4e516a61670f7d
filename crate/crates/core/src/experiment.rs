//! Repeated train/decode/evaluate runs over fixed data splits.
//!
//! An experiment directory is named after a hash of its configuration and
//! holds `config.json`, one `runs/seed-<s>/` directory per seed (checkpoint,
//! training log, decoded predictions, evaluation report) and the
//! `summary.csv` / `summary.json` tables. Nothing time-dependent is written,
//! so rerunning an identical configuration reproduces every byte.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{
    build_training_set, load_corpus, save_corpus, split_train_test, write_text_atomic, CorpusFormat,
    Essay, SamplingPolicy, TrainingSetting,
};
use crate::embedding::{load_embedding_dir, pseudo_embed, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::eval::{evaluate, permutation_test, EvalReport, RunSeries};
use crate::model::{predict, train, write_training_log, Checkpoint, ModelConfig, TrainConfig};
use crate::tree::ArgTree;

/// Per-run metrics carried into the summary, in column order.
pub const SUMMARY_METRICS: [&str; 6] = [
    "accuracy",
    "f1_macro",
    "mar_dset",
    "qact_macro_f1",
    "avg_depth",
    "leaf_ratio",
];

pub const DEFAULT_RESAMPLES: usize = 10_000;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    /// In-domain essay JSONL. Split into train and test unless `test` is set.
    pub in_domain: PathBuf,
    /// Out-of-domain essay JSONL, used by the P+I and SS settings.
    pub out_domain: Option<PathBuf>,
    pub test: Option<PathBuf>,
    /// Directory of embedding files. Without one, pseudo-embeddings of
    /// `model.input_dim` columns are generated.
    pub embedding_dir: Option<PathBuf>,
    pub pseudo_embedding_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub setting: TrainingSetting,
    pub policy: SamplingPolicy,
    pub runs: usize,
    /// One seed per run; empty means `0..runs`.
    pub seeds: Vec<u64>,
    pub train_fraction: f64,
    pub split_seed: u64,
    /// Parent of the hashed experiment directory. Not part of the hash.
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            in_domain: PathBuf::new(),
            out_domain: None,
            test: None,
            embedding_dir: None,
            pseudo_embedding_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            setting: TrainingSetting::InDomain,
            policy: SamplingPolicy::default(),
            runs: 20,
            seeds: Vec::new(),
            train_fraction: 0.8,
            split_seed: 0,
            output_dir: PathBuf::from("experiments"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn resolved_seeds(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.runs as u64).collect()
        } else {
            self.seeds.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if !self.seeds.is_empty() && self.seeds.len() != self.runs {
            return Err(Error::Config(format!(
                "{} seeds listed for {} runs",
                self.seeds.len(),
                self.runs
            )));
        }
        let mut seen = self.resolved_seeds();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.runs {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        if self.setting != TrainingSetting::InDomain && self.out_domain.is_none() {
            return Err(Error::Config(format!(
                "setting {} needs an out-of-domain corpus",
                self.setting.as_str()
            )));
        }
        let paths = [Some(&self.in_domain), self.out_domain.as_ref(), self.test.as_ref()];
        for p in paths.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::Config(format!("no such corpus file: {}", p.display())));
            }
        }
        if let Some(d) = &self.embedding_dir {
            if !d.is_dir() {
                return Err(Error::Config(format!("no such embedding directory: {}", d.display())));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form, output directory excluded.
    pub fn hash(&self) -> Result<String> {
        let mut canonical = self.clone();
        canonical.output_dir = PathBuf::new();
        let digest = Sha256::digest(serde_json::to_vec(&canonical)?);
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn experiment_dir(&self) -> Result<PathBuf> {
        let hash = self.hash()?;
        Ok(self.output_dir.join(format!("{}-{}", self.setting.as_str().replace('+', "p"), &hash[..16])))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run: usize,
    pub seed: u64,
    pub best_epoch: usize,
    pub epochs_trained: usize,
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub metric: String,
    pub baseline_mean: f64,
    pub mean: f64,
    pub p_value: f64,
    pub significant: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub config_hash: String,
    pub setting: TrainingSetting,
    pub n_train_essays: usize,
    pub n_train_sentences: usize,
    pub n_test_essays: usize,
    pub runs: Vec<RunSummary>,
    pub mean: BTreeMap<String, f64>,
    pub significance: Vec<Significance>,
}

impl ExperimentSummary {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join("summary.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn series(&self, metric: &str) -> RunSeries {
        RunSeries::new(
            metric,
            self.runs.iter().map(|r| r.metrics[metric]).collect(),
        )
    }

    /// One row per run, then a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("run,seed,best_epoch,epochs_trained");
        for m in SUMMARY_METRICS {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        for r in &self.runs {
            write!(out, "{},{},{},{}", r.run, r.seed, r.best_epoch, r.epochs_trained).unwrap();
            for m in SUMMARY_METRICS {
                write!(out, ",{}", r.metrics[m]).unwrap();
            }
            out.push('\n');
        }
        out.push_str("mean,,,");
        for m in SUMMARY_METRICS {
            write!(out, ",{}", self.mean[m]).unwrap();
        }
        out.push('\n');
        out
    }

    pub fn significance_csv(&self) -> String {
        let mut out = String::from("metric,baseline_mean,mean,p_value,significant\n");
        for s in &self.significance {
            writeln!(
                out,
                "{},{},{},{},{}",
                s.metric, s.baseline_mean, s.mean, s.p_value, s.significant
            )
            .unwrap();
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub dir: PathBuf,
    pub summary: ExperimentSummary,
}

/// Training and test essays with their embeddings, fixed across runs.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Vec<Essay>,
    pub test: Vec<Essay>,
    pub train_embeddings: Vec<EmbeddingMatrix>,
    pub test_embeddings: Vec<EmbeddingMatrix>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let in_domain = load_corpus(&cfg.in_domain, CorpusFormat::Essay)?;
    let (in_train, test) = match &cfg.test {
        Some(p) => (in_domain, load_corpus(p, CorpusFormat::Essay)?),
        None => split_train_test(&in_domain, cfg.train_fraction, cfg.split_seed)?,
    };
    let out_domain = match &cfg.out_domain {
        Some(p) => load_corpus(p, CorpusFormat::Essay)?,
        None => Vec::new(),
    };
    let train = build_training_set(&in_train, &out_domain, cfg.setting, &cfg.policy);
    if train.is_empty() || test.is_empty() {
        return Err(Error::Config(format!(
            "{} training and {} test essays; both must be non-empty",
            train.len(),
            test.len()
        )));
    }
    let store = match &cfg.embedding_dir {
        Some(d) => Some(load_embedding_dir(d)?),
        None => None,
    };
    let embed = |essays: &[Essay]| -> Result<Vec<EmbeddingMatrix>> {
        essays
            .iter()
            .map(|e| lookup(store.as_ref(), e, cfg))
            .collect()
    };
    Ok(PreparedData {
        train_embeddings: embed(&train)?,
        test_embeddings: embed(&test)?,
        train,
        test,
    })
}

fn lookup(
    store: Option<&HashMap<String, EmbeddingMatrix>>,
    essay: &Essay,
    cfg: &ExperimentConfig,
) -> Result<EmbeddingMatrix> {
    let m = match store {
        None => pseudo_embed(essay, cfg.model.input_dim, cfg.pseudo_embedding_seed),
        Some(map) => map
            .get(&essay.essay_id)
            .cloned()
            .ok_or_else(|| Error::validation(&essay.essay_id, "no embeddings found"))?,
    };
    m.check_pairing(essay, cfg.model.input_dim)?;
    Ok(m)
}

/// Summary metrics of one evaluation report.
pub fn report_metrics(r: &EvalReport) -> BTreeMap<String, f64> {
    [
        ("accuracy", r.accuracy),
        ("f1_macro", r.f1_macro),
        ("mar_dset", r.mar_dset),
        ("qact_macro_f1", r.qact.macro_f1),
        ("avg_depth", r.shape.avg_depth),
        ("leaf_ratio", r.shape.leaf_ratio),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

fn run_once(
    cfg: &ExperimentConfig,
    data: &PreparedData,
    run: usize,
    seed: u64,
    dir: &Path,
) -> Result<(RunSummary, EvalReport)> {
    let model = ModelConfig {
        seed,
        ..cfg.model.clone()
    };
    let outcome = train(&model, &cfg.train, &data.train, &data.train_embeddings)?;
    let mut predicted = Vec::with_capacity(data.test.len());
    let mut pred_trees: Vec<ArgTree> = Vec::with_capacity(data.test.len());
    for (essay, emb) in data.test.iter().zip(&data.test_embeddings) {
        let tree = predict(&outcome.params, &model, emb)?;
        predicted.push(essay.with_tree(tree.clone())?);
        pred_trees.push(tree);
    }
    let gold: Vec<ArgTree> = data.test.iter().map(|e| e.gold.clone()).collect();
    let report = evaluate(&pred_trees, &gold)?;

    let run_dir = dir.join("runs").join(format!("seed-{seed}"));
    fs::create_dir_all(&run_dir).map_err(|e| Error::io(&run_dir, e))?;
    Checkpoint::new(model, outcome.params).save(run_dir.join("checkpoint.json"))?;
    write_training_log(run_dir.join("training_log.csv"), &outcome.log)?;
    save_corpus(run_dir.join("predictions.jsonl"), &predicted)?;
    write_text_atomic(
        &run_dir.join("eval.json"),
        &serde_json::to_string_pretty(&report)?,
    )?;
    let summary = RunSummary {
        run,
        seed,
        best_epoch: outcome.best_epoch,
        epochs_trained: outcome.log.len(),
        metrics: report_metrics(&report),
    };
    Ok((summary, report))
}

/// Paired permutation tests of every summary metric against a baseline.
pub fn compare_to_baseline(
    summary: &ExperimentSummary,
    baseline: &ExperimentSummary,
) -> Result<Vec<Significance>> {
    if summary.runs.len() != baseline.runs.len() {
        return Err(Error::Argument(format!(
            "baseline has {} runs, experiment has {}",
            baseline.runs.len(),
            summary.runs.len()
        )));
    }
    SUMMARY_METRICS
        .iter()
        .map(|&m| {
            let r = permutation_test(
                &summary.series(m),
                &baseline.series(m),
                DEFAULT_ALPHA,
                DEFAULT_RESAMPLES,
                0,
            )?;
            Ok(Significance {
                metric: m.to_string(),
                baseline_mean: baseline.mean[m],
                mean: summary.mean[m],
                p_value: r.p_value,
                significant: r.significant,
            })
        })
        .collect()
}

/// Trains, decodes and evaluates once per seed and writes the experiment
/// directory. A failing run aborts with its seed attached to the error.
pub fn run_experiment(cfg: &ExperimentConfig, baseline_dir: Option<&Path>) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let baseline = baseline_dir.map(ExperimentSummary::load).transpose()?;
    let data = prepare_data(cfg)?;
    let dir = cfg.experiment_dir()?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut stored = cfg.clone();
    stored.output_dir = PathBuf::new();
    write_text_atomic(&dir.join("config.json"), &serde_json::to_string_pretty(&stored)?)?;

    let mut runs = Vec::new();
    for (run, seed) in cfg.resolved_seeds().into_iter().enumerate() {
        let (summary, _) = run_once(cfg, &data, run, seed, &dir).map_err(|e| Error::Run {
            seed,
            source: Box::new(e),
        })?;
        runs.push(summary);
    }
    let mean = SUMMARY_METRICS
        .iter()
        .map(|&m| {
            let total: f64 = runs.iter().map(|r| r.metrics[m]).sum();
            (m.to_string(), total / runs.len() as f64)
        })
        .collect();
    let mut summary = ExperimentSummary {
        config_hash: cfg.hash()?,
        setting: cfg.setting,
        n_train_essays: data.train.len(),
        n_train_sentences: data.train.iter().map(Essay::len).sum(),
        n_test_essays: data.test.len(),
        runs,
        mean,
        significance: Vec::new(),
    };
    if let Some(b) = &baseline {
        summary.significance = compare_to_baseline(&summary, b)?;
        write_text_atomic(&dir.join("significance.csv"), &summary.significance_csv())?;
    }
    write_text_atomic(&dir.join("summary.csv"), &summary.to_csv())?;
    write_text_atomic(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary)?)?;
    Ok(ExperimentOutcome { dir, summary })
}
