use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::network::{forward, loss_and_gradients, predict, Mode, Targets};
use super::{AdamConfig, AdamState, ModelConfig, ModelParams};
use crate::corpus::{write_atomic, Essay};
use crate::embedding::EmbeddingMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub adam: AdamConfig,
    /// Share of the training essays held out for model selection. With 0
    /// (or too few essays to hold any out) selection uses the training set.
    pub validation_fraction: f64,
    /// Stop after this many epochs without a validation improvement.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            adam: AdamConfig::default(),
            validation_fraction: 0.1,
            patience: Some(10),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub link_loss: f64,
    pub qact_loss: Option<f64>,
    pub nd_loss: Option<f64>,
    pub total_loss: f64,
    pub sigmas: Vec<f64>,
    pub validation_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_validation_accuracy: f64,
    pub n_train: usize,
    pub n_validation: usize,
}

fn accuracy(
    params: &ModelParams,
    config: &ModelConfig,
    items: &[(&Essay, &EmbeddingMatrix)],
) -> Result<f64> {
    let (mut hit, mut total) = (0usize, 0usize);
    for (essay, emb) in items {
        let tree = predict(params, config, emb)?;
        hit += tree
            .heads()
            .iter()
            .zip(essay.gold.heads())
            .filter(|(a, b)| a == b)
            .count();
        total += essay.len();
    }
    Ok(if total == 0 { 0.0 } else { hit as f64 / total as f64 })
}

/// Trains one essay per optimiser step and keeps the parameters with the
/// best validation link accuracy (earliest epoch on ties).
///
/// `embeddings[k]` must belong to `essays[k]`. Every source of randomness
/// (initialisation, held-out slice, shuffling, dropout) derives from
/// `config.seed`.
pub fn train(
    config: &ModelConfig,
    tcfg: &TrainConfig,
    essays: &[Essay],
    embeddings: &[EmbeddingMatrix],
) -> Result<TrainOutcome> {
    config.validate()?;
    if essays.len() != embeddings.len() {
        return Err(Error::Argument(format!(
            "{} essays but {} embedding matrices",
            essays.len(),
            embeddings.len()
        )));
    }
    if essays.is_empty() {
        return Err(Error::Argument("no training essays".into()));
    }
    for (e, m) in essays.iter().zip(embeddings) {
        if e.essay_id != m.essay_id {
            return Err(Error::validation(
                &e.essay_id,
                format!("paired with embeddings of {}", m.essay_id),
            ));
        }
        m.check_pairing(e, config.input_dim)?;
    }

    let mut order: Vec<usize> = (0..essays.len()).collect();
    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    order.shuffle(&mut split_rng);
    let n_val = (essays.len() as f64 * tcfg.validation_fraction).round() as usize;
    let n_val = if n_val >= essays.len() { 0 } else { n_val };
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    train_idx.sort_unstable();
    let pair = |&k: &usize| (&essays[k], &embeddings[k]);
    let train_items: Vec<_> = train_idx.iter().map(pair).collect();
    let val_items: Vec<_> = if n_val == 0 {
        train_items.clone()
    } else {
        let mut v = val_idx.to_vec();
        v.sort_unstable();
        v.iter().map(pair).collect()
    };
    let targets: Vec<Targets> = train_items
        .iter()
        .map(|(e, _)| Targets::from_tree(&e.gold))
        .collect();

    let mut params = ModelParams::init(config);
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(3));

    let mut best = (params.clone(), 0usize, f64::NEG_INFINITY);
    let mut log = Vec::with_capacity(tcfg.epochs);
    let mut since_best = 0usize;
    let mut steps: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=tcfg.epochs {
        steps.shuffle(&mut shuffle_rng);
        let mut sums = [0.0f64; 4];
        for &k in &steps {
            let (_, emb) = train_items[k];
            let out = forward(&params, config, emb, Mode::Train(&mut dropout_rng))?;
            let (l, grads) = loss_and_gradients(&params, config, &out, &targets[k])?;
            sums[0] += l.link;
            sums[1] += l.qact.unwrap_or(0.0);
            sums[2] += l.depth.unwrap_or(0.0);
            sums[3] += l.total;
            adam.step(&mut params, &grads, &tcfg.adam);
        }
        let denom = steps.len() as f64;
        let val_acc = accuracy(&params, config, &val_items)?;
        log.push(EpochLog {
            epoch,
            link_loss: sums[0] / denom,
            qact_loss: config.use_qact_head.then_some(sums[1] / denom),
            nd_loss: config.use_nd_head.then_some(sums[2] / denom),
            total_loss: sums[3] / denom,
            sigmas: params.sigmas(),
            validation_accuracy: val_acc,
        });
        if val_acc > best.2 {
            best = (params.clone(), epoch, val_acc);
            since_best = 0;
        } else {
            since_best += 1;
            if tcfg.patience.is_some_and(|p| since_best >= p) {
                break;
            }
        }
    }

    let (params, best_epoch, best_validation_accuracy) = best;
    Ok(TrainOutcome {
        params,
        log,
        best_epoch,
        best_validation_accuracy,
        n_train: train_items.len(),
        n_validation: if n_val == 0 { 0 } else { val_items.len() },
    })
}

/// Per-epoch CSV: losses, task sigmas (link, qact, nd) and validation accuracy.
pub fn write_training_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut text =
        String::from("epoch,link_loss,qact_loss,nd_loss,total_loss,sigma_link,sigma_qact,sigma_nd,validation_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for e in log {
        let mut sig = e.sigmas.iter().copied();
        let link_sigma = sig.next();
        let qact_sigma = e.qact_loss.and_then(|_| sig.next());
        let nd_sigma = e.nd_loss.and_then(|_| sig.next());
        writeln!(
            text,
            "{},{},{},{},{},{},{},{},{}",
            e.epoch,
            e.link_loss,
            opt(e.qact_loss),
            opt(e.nd_loss),
            e.total_loss,
            opt(link_sigma),
            opt(qact_sigma),
            opt(nd_sigma),
            e.validation_accuracy
        )
        .unwrap();
    }
    write_atomic(path, |w| w.write_all(text.as_bytes()).map_err(|e| Error::io(path, e)))
}
