//! Acceptance checks, one line per criterion. Runs without the libtest
//! harness so the lines are always printed; exits non-zero on any failure.

mod common;

use std::fs;
use std::path::Path;
use std::time::Instant;

use arglink::corpus::{
    save_corpus, segment_to_sentence, selective_sample, Essay, SamplingPolicy, SourceCorpus,
    TrainingSetting,
};
use arglink::decoder::{brute_force_decode, decode, tree_score};
use arglink::embedding::pseudo_embed;
use arglink::eval::{link_accuracy, mar_dset, mar_dset_vector, permutation_test, RunSeries};
use arglink::experiment::{run_experiment, ExperimentConfig};
use arglink::model::loss::{mtl_loss, mtl_loss_log_sigma, mtl_sigma_gradient};
use arglink::model::{
    forward, loss, loss_and_gradients, predict, train, ModelConfig, ModelParams, Mode, Targets, TrainConfig,
};
use arglink::tree::{ArgTree, QactLabel};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn mar_exactness() -> Outcome {
    let (a, b) = common::substructure_pair();
    let v = mar_dset_vector(&b, &a).map_err(|e| e.to_string())?;
    ensure(v == [0, 0, 1, 1, 0], format!("vector {v:?}"))?;
    let s = mar_dset(&b, &a).map_err(|e| e.to_string())?;
    ensure(s == 0.4, format!("score {s}"))?;
    ensure(mar_dset(&a, &b).unwrap() == 0.4, "asymmetric score")?;
    ensure(mar_dset(&a, &a).unwrap() == 1.0, "identical trees below 1")?;
    Ok(format!("v={v:?} score={s}"))
}

fn decoder_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut cases = 0;
    for k in 0..1500 {
        let n = 2 + k % 5;
        let integral = k % 3 == 0;
        let g = Array2::from_shape_fn((n, n), |_| {
            if integral {
                rng.gen_range(-2..=2) as f64
            } else {
                rng.gen_range(-4.0..4.0)
            }
        });
        let fast = decode(&g).map_err(|e| e.to_string())?;
        let slow = brute_force_decode(&g).map_err(|e| e.to_string())?;
        let (sf, ss) = (tree_score(&g, fast.heads()), tree_score(&g, slow.heads()));
        ensure(sf == ss, format!("case {k}: score {sf} vs {ss}"))?;
        ensure(
            fast.heads() == slow.heads(),
            format!("case {k}: heads {:?} vs {:?}", fast.heads(), slow.heads()),
        )?;
        cases += 1;
    }
    Ok(format!("{cases} matrices, scores and head vectors identical"))
}

fn gradient_verification() -> Outcome {
    let config = ModelConfig {
        input_dim: 4,
        dense1_units: 5,
        lstm_units: 3,
        lstm_stacks: 3,
        proj_units: 3,
        use_spos: true,
        use_qact_head: true,
        use_nd_head: true,
        seed: 21,
        ..ModelConfig::default()
    };
    let tree = ArgTree::from_heads(vec![2, 2, 2]).unwrap();
    let essay = common::synthetic_essay("fd", tree.clone(), SourceCorpus::InDomain);
    let emb = pseudo_embed(&essay, config.input_dim, 4);
    let targets = Targets::from_tree(&tree);
    let mut params = ModelParams::init(&config);
    for (k, s) in params.log_sigma.iter_mut().enumerate() {
        *s = 0.1 * (k as f64 + 1.0);
    }
    let mut checked = 0;
    for train_mode in [false, true] {
        let run = |p: &ModelParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mode = if train_mode { Mode::Train(&mut rng) } else { Mode::Eval };
            forward(p, &config, &emb, mode)
        };
        let out = run(&params).map_err(|e| e.to_string())?;
        let (_, grads) = loss_and_gradients(&params, &config, &out, &targets).map_err(|e| e.to_string())?;
        let f = |p: &ModelParams| {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mode = if train_mode { Mode::Train(&mut rng) } else { Mode::Eval };
            loss(p, &config, &emb, &targets, mode).unwrap().total
        };
        let bad = common::gradient_mismatches(&params, &f, &grads);
        ensure(bad.is_empty(), format!("{} mismatches, first {:?}", bad.len(), bad.first()))?;
        checked += params.parameter_count();
    }
    Ok(format!("{checked} scalar gradients (eval and dropout modes) within tolerance"))
}

fn mtl_identity() -> Outcome {
    let losses: [f64; 3] = [0.7, 1.9, 0.25];
    let total = mtl_loss(&losses, &[1.0; 3]).map_err(|e| e.to_string())?;
    let half: f64 = losses.iter().sum::<f64>() / 2.0;
    ensure((total - half).abs() <= 1e-12, format!("{total} vs {half}"))?;
    let mut worst = 0.0f64;
    for sigmas in [[1.0f64, 1.0, 1.0], [0.5, 1.3, 2.2], [1.7, 0.8, 1.1]] {
        let grad = mtl_sigma_gradient(&losses, &sigmas);
        for t in 0..3 {
            let (l, s) = (losses[t], sigmas[t]);
            let closed = -l / s.powi(3) + 1.0 / s;
            worst = worst.max((grad[t] - closed).abs());
            ensure((grad[t] - closed).abs() <= 1e-8, format!("sigma {s}: {} vs {closed}", grad[t]))?;
            // independent check: central difference of the combined loss
            let h = 1e-6;
            let mut up = sigmas;
            up[t] += h;
            let mut down = sigmas;
            down[t] -= h;
            let numeric = (mtl_loss(&losses, &up).unwrap() - mtl_loss(&losses, &down).unwrap()) / (2.0 * h);
            ensure((numeric - closed).abs() <= 1e-6, format!("finite difference {numeric} vs {closed}"))?;
        }
        let logs: Vec<f64> = sigmas.iter().map(|s| s.ln()).collect();
        let (via_log, _, d_log) = mtl_loss_log_sigma(&losses, &logs);
        ensure((via_log - mtl_loss(&losses, &sigmas).unwrap()).abs() <= 1e-12, "log-sigma form disagrees")?;
        for t in 0..3 {
            ensure((d_log[t] - sigmas[t] * grad[t]).abs() <= 1e-8, "log-sigma chain rule")?;
        }
    }
    Ok(format!("loss at sigma=1 equals half-sum; worst sigma-gradient error {worst:.1e}"))
}

fn overfit_sanity() -> Outcome {
    let essays = common::synthetic_corpus(1, 5, 4..=8);
    let config = ModelConfig {
        input_dim: 32,
        dense1_units: 64,
        lstm_units: 32,
        lstm_stacks: 3,
        proj_units: 32,
        use_spos: true,
        use_qact_head: true,
        use_nd_head: true,
        seed: 3,
        ..ModelConfig::default()
    };
    let embs: Vec<_> = essays.iter().map(|e| pseudo_embed(e, config.input_dim, 0)).collect();
    let tcfg = TrainConfig {
        epochs: 300,
        validation_fraction: 0.0,
        patience: None,
        ..TrainConfig::default()
    };
    let out = train(&config, &tcfg, &essays, &embs).map_err(|e| e.to_string())?;
    let pred: Vec<_> = embs.iter().map(|m| predict(&out.params, &config, m).unwrap()).collect();
    let gold: Vec<_> = essays.iter().map(|e| e.gold.clone()).collect();
    let acc = link_accuracy(&pred, &gold).map_err(|e| e.to_string())?;
    let first = out.log.iter().find(|l| l.validation_accuracy >= 0.95).map(|l| l.epoch);
    ensure(acc >= 0.95, format!("training accuracy {acc:.3}"))?;
    Ok(format!("training accuracy {acc:.3}, first reached 95% at epoch {first:?}"))
}

fn selective_sampling() -> Outcome {
    // pool straddling both thresholds: 15..=18 sentences x 0..=3 non-ACs
    let mut pool = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for n in 15..=18 {
        for non_ac in 0..=3 {
            let tree = common::random_tree(&mut rng, n, non_ac);
            pool.push(common::synthetic_essay(&format!("pec-{n}-{non_ac}"), tree, SourceCorpus::OutDomain));
        }
    }
    let kept = selective_sample(&pool, &SamplingPolicy::default());
    let oracle: Vec<&str> = pool
        .iter()
        .filter(|e| {
            let h = e.gold.heads();
            let isolated = (0..h.len())
                .filter(|&i| h[i] == i && !(0..h.len()).any(|j| j != i && h[j] == i))
                .count();
            h.len() <= 17 && isolated <= 2
        })
        .map(|e| e.essay_id.as_str())
        .collect();
    let got: Vec<&str> = kept.iter().map(|e| e.essay_id.as_str()).collect();
    ensure(got == oracle, format!("kept {got:?}, oracle {oracle:?}"))?;
    ensure(got.len() == 9, format!("expected 9 of 16, kept {}", got.len()))?;
    Ok(format!(
        "kept {} of {} synthetic essays, matching the oracle; real-corpus count not checked (corpus not supplied)",
        got.len(),
        pool.len()
    ))
}

fn conversion() -> Outcome {
    let fixture = common::conversion_fixture();
    let essay = segment_to_sentence(&fixture).map_err(|e| e.to_string())?;
    ensure(essay.len() == 3, format!("{} sentences", essay.len()))?;
    let tokens = |s: &str| s.split_whitespace().count();
    let before = tokens(common::CONVERSION_SENTENCE);
    let after: usize = essay.sentences.iter().map(|s| tokens(&s.text)).sum();
    ensure(before == after, format!("{before} tokens became {after}"))?;
    ensure(
        essay.sentences[0].text.starts_with("To conclude, art could play"),
        format!("first piece {:?}", essay.sentences[0].text),
    )?;
    ensure(essay.gold.heads() == [1, 1, 1], format!("heads {:?}", essay.gold.heads()))?;
    Ok(format!("3 sentences, {after} tokens preserved"))
}

fn qact_derivation() -> Outcome {
    let q = common::annotation_example().derive_qact();
    let expect = [
        (1, QactLabel::MajorClaim),
        (9, QactLabel::AcNonLeaf),
        (16, QactLabel::AcLeaf),
    ];
    for (i, label) in expect {
        ensure(q[i] == label, format!("S{} is {} not {}", i + 1, q[i], label))?;
    }
    Ok("S2 major_claim, S10 ac_non_leaf, S17 ac_leaf".into())
}

fn permutation_exact() -> Outcome {
    let p = |a: &[f64], b: &[f64]| {
        permutation_test(
            &RunSeries::new("m", a.to_vec()),
            &RunSeries::new("m", b.to_vec()),
            0.05,
            10_000,
            0,
        )
        .unwrap()
    };
    // |±1 ±2 ±3| over the 8 sign patterns: 6,4,2,0,0,2,4,6
    let r1 = p(&[1.0, 2.0, 3.0], &[0.0; 3]);
    ensure(r1.exact && r1.p_value == 0.25, format!("shift series p={}", r1.p_value))?;
    let r2 = p(&[1.0, -2.0, 3.0], &[0.0; 3]);
    ensure(r2.p_value == 0.75, format!("mixed series p={}", r2.p_value))?;
    let r3 = p(&[0.4, 0.5, 0.6], &[0.4, 0.5, 0.6]);
    ensure(r3.p_value == 1.0, format!("identical series p={}", r3.p_value))?;
    Ok(format!("p = {}, {}, {}", r1.p_value, r2.p_value, r3.p_value))
}

fn write_fixture_corpora(dir: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    let in_domain = common::synthetic_corpus(31, 10, 3..=7);
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let out_domain: Vec<Essay> = (0..6)
        .map(|k| {
            let n = rng.gen_range(3..=20);
            let non_ac = rng.gen_range(0..=3.min(n - 1));
            let tree = common::random_tree(&mut rng, n, non_ac);
            common::synthetic_essay(&format!("out-{k}"), tree, SourceCorpus::OutDomain)
        })
        .collect();
    let (a, b) = (dir.join("in.jsonl"), dir.join("out.jsonl"));
    save_corpus(&a, &in_domain).unwrap();
    save_corpus(&b, &out_domain).unwrap();
    (a, b)
}

fn end_to_end_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (in_path, out_path) = write_fixture_corpora(tmp.path());
    let cfg = |out: &str| ExperimentConfig {
        in_domain: in_path.clone(),
        out_domain: Some(out_path.clone()),
        model: ModelConfig {
            input_dim: 8,
            dense1_units: 8,
            lstm_units: 4,
            lstm_stacks: 2,
            proj_units: 4,
            use_qact_head: true,
            use_nd_head: true,
            ..ModelConfig::default()
        },
        train: TrainConfig {
            epochs: 3,
            ..TrainConfig::default()
        },
        setting: TrainingSetting::SelectiveSampling,
        runs: 2,
        output_dir: tmp.path().join(out),
        ..ExperimentConfig::default()
    };
    let first = run_experiment(&cfg("a"), None).map_err(|e| e.to_string())?;
    let again = run_experiment(&cfg("a"), None).map_err(|e| e.to_string())?;
    let other = run_experiment(&cfg("b"), None).map_err(|e| e.to_string())?;
    let read = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    for f in ["summary.csv", "summary.json", "config.json"] {
        let x = read(&first.dir, f);
        ensure(x == read(&again.dir, f), format!("{f} differs on rerun"))?;
        ensure(x == read(&other.dir, f), format!("{f} differs across output roots"))?;
    }
    let csv = String::from_utf8(read(&first.dir, "summary.csv")).unwrap();
    ensure(csv.lines().count() == 4, format!("summary has {} lines", csv.lines().count()))?;
    ensure(csv.lines().last().unwrap().starts_with("mean,"), "no mean row")?;
    Ok(format!("2 runs, summaries byte-identical across 3 invocations ({} bytes)", csv.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("mar_dset_exactness", mar_exactness),
        ("decoder_oracle_equivalence", decoder_oracle),
        ("gradient_verification", gradient_verification),
        ("mtl_loss_identity", mtl_identity),
        ("overfit_sanity", overfit_sanity),
        ("selective_sampling", selective_sampling),
        ("conversion", conversion),
        ("qact_derivation", qact_derivation),
        ("permutation_exact_p_values", permutation_exact),
        ("end_to_end_determinism", end_to_end_determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {name} [{secs:.2}s]: {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name} [{secs:.2}s]: {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
