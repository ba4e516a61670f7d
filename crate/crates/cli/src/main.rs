use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use arglink::corpus::{
    load_corpus, load_predictions, save_corpus, selective_sample, CorpusFormat, Essay,
    SamplingPolicy, TrainingSetting,
};
use arglink::embedding::{load_embedding_dir, pseudo_embed, EmbeddingMatrix};
use arglink::eval::{evaluate, EvalReport};
use arglink::experiment::{prepare_data, run_experiment, ExperimentConfig};
use arglink::model::{predict, train, write_training_log, Checkpoint};
use arglink::report::{build_report, load_system};
use arglink::tree::{shape_stats, ArgTree};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

#[derive(Parser)]
#[command(name = "arglink", version, about = "Sentence-level argumentative link prediction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert segment-annotated essays to the sentence-level essay format.
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Input format: `segment`, or `essay` for a normalising pass-through.
        #[arg(long, default_value = "segment")]
        format: CorpusFormat,
    },
    /// Keep essays within the sentence and non-AC limits.
    Sample {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = "essay")]
        format: CorpusFormat,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Train one model and write its checkpoint and training log.
    Train {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Predict trees for a corpus with a trained checkpoint.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value = "essay")]
        format: CorpusFormat,
        /// Embedding directory; pseudo-embeddings are used without one.
        #[arg(long)]
        embeddings: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        pseudo_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score predicted trees against gold trees, matched by essay id.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Directory for eval.json, per_distance.csv and per_depth.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train, decode and evaluate once per seed and summarise the runs.
    Experiment {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        runs: Option<usize>,
        /// Experiment directory of a baseline with the same number of runs;
        /// adds paired permutation tests to the summary.
        #[arg(long)]
        baseline_dir: Option<PathBuf>,
    },
    /// Build comparison tables from experiment or evaluation directories.
    ///
    /// The first directory is the baseline. Written files:
    ///
    ///   table1_links.csv    system, runs, accuracy, f1_macro, mar_dset, p_* columns, significant
    ///   table2_qact.csv     system, runs, major_claim, ac_non_leaf, ac_leaf, non_ac, macro_f1, p_*, significant
    ///   table3_shape.csv    gold row, then system, runs, avg_depth, std_depth, leaf_ratio, std_leaf_ratio, p_avg_depth, p_leaf_ratio, significant
    ///   fig6_distance.csv   system, distance, f1, runs_present
    ///   fig6_distance_ranges.csv  system, range, f1, runs_present
    ///   fig7_depth.csv      system, depth, f1, runs_present
    ///   report.json         all tables
    ///
    /// Metric cells are means over runs. p_* columns hold permutation-test
    /// p-values against the baseline and stay empty when either side has
    /// fewer than two runs or the run counts differ; `significant` lists the
    /// metrics with p < 0.05.
    #[command(verbatim_doc_comment)]
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct PolicyArgs {
    #[arg(long = "policy.max-sentences")]
    max_sentences: Option<usize>,
    #[arg(long = "policy.max-non-acs")]
    max_non_acs: Option<usize>,
}

impl PolicyArgs {
    fn apply(&self, mut p: SamplingPolicy) -> SamplingPolicy {
        if let Some(v) = self.max_sentences {
            p.max_sentences = v;
        }
        if let Some(v) = self.max_non_acs {
            p.max_non_acs = v;
        }
        p
    }
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON). Flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// In-domain essay corpus.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    out_domain: Option<PathBuf>,
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Training setting: I, P+I or SS.
    #[arg(long)]
    setting: Option<TrainingSetting>,
    /// Model seed; for experiments, the first of `runs` consecutive seeds.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    policy: PolicyArgs,
}

impl RunArgs {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.corpus {
            cfg.in_domain = p.clone();
        }
        if let Some(p) = &self.out_domain {
            cfg.out_domain = Some(p.clone());
        }
        if let Some(p) = &self.embeddings {
            cfg.embedding_dir = Some(p.clone());
        }
        if let Some(s) = self.setting {
            cfg.setting = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
        cfg.policy = self.policy.apply(cfg.policy);
        if cfg.in_domain.as_os_str().is_empty() {
            bail!("no in-domain corpus: pass --corpus or set in_domain in --config");
        }
        Ok(cfg)
    }
}

fn cmd_convert(input: &Path, out: &Path, format: CorpusFormat) -> Result<()> {
    let essays = load_corpus(input, format)?;
    save_corpus(out, &essays)?;
    eprintln!("wrote {} essays to {}", essays.len(), out.display());
    Ok(())
}

#[derive(Serialize)]
struct SampleStats {
    total: usize,
    kept: usize,
    max_sentences: usize,
    max_non_acs: usize,
    shape_all: Option<arglink::tree::ShapeStats>,
    shape_kept: Option<arglink::tree::ShapeStats>,
}

fn cmd_sample(input: &Path, out: Option<&Path>, format: CorpusFormat, policy: SamplingPolicy) -> Result<()> {
    let essays = load_corpus(input, format)?;
    let kept = selective_sample(&essays, &policy);
    let shape = |es: &[Essay]| {
        let trees: Vec<ArgTree> = es.iter().map(|e| e.gold.clone()).collect();
        shape_stats(&trees).ok()
    };
    if let Some(p) = out {
        save_corpus(p, &kept)?;
    }
    let stats = SampleStats {
        total: essays.len(),
        kept: kept.len(),
        max_sentences: policy.max_sentences,
        max_non_acs: policy.max_non_acs,
        shape_all: shape(&essays),
        shape_kept: shape(&kept),
    };
    println!("{}", serde_json::to_string_pretty(&stats)?);
    Ok(())
}

fn cmd_train(args: &RunArgs) -> Result<()> {
    let mut cfg = args.config()?;
    let seed = args.seed.unwrap_or(cfg.model.seed);
    cfg.model.seed = seed;
    cfg.runs = 1;
    cfg.seeds = vec![seed];
    cfg.validate()?;
    let data = prepare_data(&cfg)?;
    let dir = cfg.output_dir.join(format!("train-{}", &cfg.hash()?[..16]));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    let outcome = train(&cfg.model, &cfg.train, &data.train, &data.train_embeddings)?;
    Checkpoint::new(cfg.model.clone(), outcome.params).save(dir.join("checkpoint.json"))?;
    write_training_log(dir.join("training_log.csv"), &outcome.log)?;
    save_corpus(dir.join("test.jsonl"), &data.test)?;
    let mut stored = cfg.clone();
    stored.output_dir = PathBuf::new();
    fs::write(dir.join("config.json"), serde_json::to_string_pretty(&stored)?)?;
    eprintln!(
        "trained on {} essays ({} held out for selection); best epoch {} with validation accuracy {}",
        outcome.n_train, outcome.n_validation, outcome.best_epoch, outcome.best_validation_accuracy
    );
    println!("{}", dir.display());
    Ok(())
}

fn cmd_decode(
    checkpoint: &Path,
    corpus: &Path,
    format: CorpusFormat,
    embeddings: Option<&Path>,
    pseudo_seed: u64,
    out: &Path,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let essays = load_corpus(corpus, format)?;
    let store: Option<HashMap<String, EmbeddingMatrix>> = embeddings.map(load_embedding_dir).transpose()?;
    let mut predicted = Vec::with_capacity(essays.len());
    for e in &essays {
        let m = match &store {
            Some(s) => s
                .get(&e.essay_id)
                .cloned()
                .with_context(|| format!("no embeddings for essay {}", e.essay_id))?,
            None => pseudo_embed(e, ck.config.input_dim, pseudo_seed),
        };
        m.check_pairing(e, ck.config.input_dim)?;
        let tree = predict(&ck.params, &ck.config, &m)?;
        predicted.push(e.with_tree(tree)?);
    }
    save_corpus(out, &predicted)?;
    eprintln!("decoded {} essays to {}", predicted.len(), out.display());
    Ok(())
}

fn aligned_trees(pred: &[Essay], gold: &[Essay]) -> Result<(Vec<ArgTree>, Vec<ArgTree>)> {
    let by_id: HashMap<&str, &Essay> = pred.iter().map(|e| (e.essay_id.as_str(), e)).collect();
    if by_id.len() != pred.len() {
        bail!("duplicate essay ids among predictions");
    }
    let mut p = Vec::with_capacity(gold.len());
    for g in gold {
        let e = by_id
            .get(g.essay_id.as_str())
            .with_context(|| format!("no prediction for essay {}", g.essay_id))?;
        if e.len() != g.len() {
            bail!("essay {}: {} predicted sentences vs {} gold", g.essay_id, e.len(), g.len());
        }
        p.push(e.gold.clone());
    }
    if pred.len() != gold.len() {
        bail!("{} predicted essays vs {} gold essays", pred.len(), gold.len());
    }
    Ok((p, gold.iter().map(|e| e.gold.clone()).collect()))
}

fn write_series<K: ToString>(path: &Path, key: &str, rows: impl IntoIterator<Item = (K, f64)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
    w.write_record([key, "f1"])?;
    for (k, v) in rows {
        w.write_record([k.to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_eval(pred: &Path, gold: &Path, out: &Path) -> Result<EvalReport> {
    let predicted = load_predictions(pred)?;
    let gold_essays = load_corpus(gold, CorpusFormat::Essay)?;
    let (p, g) = aligned_trees(&predicted, &gold_essays)?;
    let report = evaluate(&p, &g)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    fs::write(out.join("eval.json"), serde_json::to_string_pretty(&report)?)?;
    let distances = report
        .per_distance_f1
        .iter()
        .map(|(d, v)| (d.to_string(), *v))
        .chain(report.distance_range_f1.iter().map(|(k, v)| (k.clone(), *v)));
    write_series(&out.join("per_distance.csv"), "distance", distances)?;
    write_series(
        &out.join("per_depth.csv"),
        "depth",
        report.per_depth_f1.iter().map(|(d, v)| (d.as_str(), *v)),
    )?;
    println!(
        "essays {} sentences {} accuracy {:.4} f1_macro {:.4} mar_dset {:.4} qact_macro_f1 {:.4}",
        report.n_essays, report.n_sentences, report.accuracy, report.f1_macro, report.mar_dset, report.qact.macro_f1
    );
    Ok(report)
}

fn cmd_experiment(args: &RunArgs, runs: Option<usize>, baseline: Option<&Path>) -> Result<()> {
    let mut cfg = args.config()?;
    if let Some(r) = runs {
        cfg.runs = r;
        if cfg.seeds.len() != r {
            cfg.seeds.clear();
        }
    }
    if let Some(s) = args.seed {
        cfg.seeds = (s..s + cfg.runs as u64).collect();
    }
    let outcome = run_experiment(&cfg, baseline)?;
    print!("{}", outcome.summary.to_csv());
    if !outcome.summary.significance.is_empty() {
        print!("{}", outcome.summary.significance_csv());
    }
    eprintln!("experiment directory: {}", outcome.dir.display());
    Ok(())
}

fn cmd_report(dirs: &[PathBuf], out: &Path) -> Result<()> {
    let systems = dirs.iter().map(load_system).collect::<arglink::Result<Vec<_>>>()?;
    let report = build_report(&systems)?;
    for p in report.write(out)? {
        println!("{}", p.display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Convert { input, out, format } => cmd_convert(&input, &out, format),
        Command::Sample { input, out, format, policy } => {
            cmd_sample(&input, out.as_deref(), format, policy.apply(SamplingPolicy::default()))
        }
        Command::Train { run } => cmd_train(&run),
        Command::Decode { checkpoint, corpus, format, embeddings, pseudo_seed, out } => {
            cmd_decode(&checkpoint, &corpus, format, embeddings.as_deref(), pseudo_seed, &out)
        }
        Command::Eval { pred, gold, out } => cmd_eval(&pred, &gold, &out).map(|_| ()),
        Command::Experiment { run, runs, baseline_dir } => {
            cmd_experiment(&run, runs, baseline_dir.as_deref())
        }
        Command::Report { dirs, out } => cmd_report(&dirs, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
