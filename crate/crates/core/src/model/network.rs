//! Forward and backward passes of the biaffine linker.
//!
//! Shapes, for an essay of `N` sentences:
//!
//! ```text
//! X (N x D[+1 spos]) -> dense1 + tanh (N x 512) -> dropout
//!   -> BiLSTM x stacks (N x 2H), dropout after each layer = context C
//!   -> source = tanh(C Ws + bs), target = tanh(C Wt + bt) (N x P), dropout
//!   -> G[i, j] = f(source_i, target_j)                  (N x N)
//! C -> QACT logits (N x 4), depth logits (N x 6)
//! ```

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::loss::{cross_entropy_with_grad, link_loss_with_grad, mtl_loss_log_sigma};
use super::params::{Dense, LstmCell, ModelParams};
use super::ModelConfig;
use crate::decoder;
use crate::embedding::{concat_spos, spos, EmbeddingMatrix};
use crate::error::{Error, Result};
use crate::tree::ArgTree;

/// Dropout is active only in training mode, with masks drawn from the
/// supplied generator in a fixed order.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone)]
struct DirectionCache {
    /// Post-activation gates `[i, f, g, o]`, `N x 4H`.
    gates: Array2<f64>,
    cells: Array2<f64>,
    tanh_cells: Array2<f64>,
    hidden: Array2<f64>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Array2<f64>,
    forward: DirectionCache,
    backward: DirectionCache,
    mask: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
struct ForwardCache {
    input: Array2<f64>,
    dense1: Array2<f64>,
    dense1_mask: Option<Array2<f64>>,
    layers: Vec<LayerCache>,
    context: Array2<f64>,
    source_act: Array2<f64>,
    source_mask: Option<Array2<f64>>,
    source: Array2<f64>,
    target_act: Array2<f64>,
    target_mask: Option<Array2<f64>>,
    target: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `G`: cell `(i, j)` scores sentence `i` pointing at sentence `j`.
    pub scores: Array2<f64>,
    pub qact_logits: Option<Array2<f64>>,
    pub nd_logits: Option<Array2<f64>>,
    cache: Option<ForwardCache>,
}

impl ForwardOutput {
    /// Drops the intermediates kept for the backward pass.
    pub fn without_cache(mut self) -> Self {
        self.cache = None;
        self
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }
}

/// Gold labels for the three tasks, derived from a gold tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Targets {
    pub heads: Vec<usize>,
    pub qact: Vec<usize>,
    pub depth: Vec<usize>,
}

impl Targets {
    pub fn from_tree(tree: &ArgTree) -> Self {
        Targets {
            heads: tree.heads().to_vec(),
            qact: tree.derive_qact().into_iter().map(|q| q.index()).collect(),
            depth: tree.node_depths().into_iter().map(|d| d.index()).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub link: f64,
    pub qact: Option<f64>,
    pub depth: Option<f64>,
    pub total: f64,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn ensure_finite(a: &Array2<f64>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("layer {layer}")))
    }
}

fn affine(x: ArrayView2<f64>, layer: &Dense) -> Array2<f64> {
    x.dot(&layer.weight) + &layer.bias
}

fn dropout(x: Array2<f64>, rate: f64, mode: &mut Mode) -> (Array2<f64>, Option<Array2<f64>>) {
    match mode {
        Mode::Train(rng) if rate > 0.0 => {
            let keep = 1.0 / (1.0 - rate);
            let mask = Array2::from_shape_simple_fn(x.raw_dim(), || {
                if rng.gen::<f64>() < rate {
                    0.0
                } else {
                    keep
                }
            });
            (&x * &mask, Some(mask))
        }
        _ => (x, None),
    }
}

fn unmask(grad: Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => grad * m,
        None => grad,
    }
}

fn lstm_direction(cell: &LstmCell, x: ArrayView2<f64>, reverse: bool) -> DirectionCache {
    let n = x.nrows();
    let h = cell.hidden();
    let projected = x.dot(&cell.w_input) + &cell.bias;
    let mut gates = Array2::zeros((n, 4 * h));
    let mut cells = Array2::zeros((n, h));
    let mut tanh_cells = Array2::zeros((n, h));
    let mut hidden = Array2::zeros((n, h));
    let mut h_prev = Array1::<f64>::zeros(h);
    let mut c_prev = Array1::<f64>::zeros(h);
    for step in 0..n {
        let t = if reverse { n - 1 - step } else { step };
        let z = &projected.row(t) + &h_prev.dot(&cell.w_hidden);
        for k in 0..h {
            let i = sigmoid(z[k]);
            let f = sigmoid(z[h + k]);
            let g = z[2 * h + k].tanh();
            let o = sigmoid(z[3 * h + k]);
            let c = f * c_prev[k] + i * g;
            let tc = c.tanh();
            gates[[t, k]] = i;
            gates[[t, h + k]] = f;
            gates[[t, 2 * h + k]] = g;
            gates[[t, 3 * h + k]] = o;
            cells[[t, k]] = c;
            tanh_cells[[t, k]] = tc;
            hidden[[t, k]] = o * tc;
        }
        h_prev.assign(&hidden.row(t));
        c_prev.assign(&cells.row(t));
    }
    DirectionCache {
        gates,
        cells,
        tanh_cells,
        hidden,
    }
}

/// Backpropagation through time for one direction. Accumulates parameter
/// gradients into `grads` and returns the gradient of the layer input.
fn lstm_direction_backward(
    cell: &LstmCell,
    x: ArrayView2<f64>,
    cache: &DirectionCache,
    d_hidden: ArrayView2<f64>,
    reverse: bool,
    grads: &mut LstmCell,
) -> Array2<f64> {
    let n = x.nrows();
    let h = cell.hidden();
    let mut d_pre = Array2::<f64>::zeros((n, 4 * h));
    let mut h_prev_rows = Array2::<f64>::zeros((n, h));
    let mut dh_next = Array1::<f64>::zeros(h);
    let mut dc_next = Array1::<f64>::zeros(h);
    let w_hidden_t = cell.w_hidden.t();
    for step in (0..n).rev() {
        let t = if reverse { n - 1 - step } else { step };
        let prev = if reverse {
            (t + 1 < n).then_some(t + 1)
        } else {
            t.checked_sub(1)
        };
        if let Some(p) = prev {
            h_prev_rows.row_mut(t).assign(&cache.hidden.row(p));
        }
        for k in 0..h {
            let i = cache.gates[[t, k]];
            let f = cache.gates[[t, h + k]];
            let g = cache.gates[[t, 2 * h + k]];
            let o = cache.gates[[t, 3 * h + k]];
            let tc = cache.tanh_cells[[t, k]];
            let c_prev = prev.map_or(0.0, |p| cache.cells[[p, k]]);
            let dh = d_hidden[[t, k]] + dh_next[k];
            let d_o = dh * tc;
            let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
            d_pre[[t, k]] = dc * g * i * (1.0 - i);
            d_pre[[t, h + k]] = dc * c_prev * f * (1.0 - f);
            d_pre[[t, 2 * h + k]] = dc * i * (1.0 - g * g);
            d_pre[[t, 3 * h + k]] = d_o * o * (1.0 - o);
            dc_next[k] = dc * f;
        }
        dh_next = d_pre.row(t).dot(&w_hidden_t);
    }
    grads.w_input += &x.t().dot(&d_pre);
    grads.w_hidden += &h_prev_rows.t().dot(&d_pre);
    grads.bias += &d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
    d_pre.dot(&cell.w_input.t())
}

fn check_shapes(params: &ModelParams, config: &ModelConfig) -> Result<()> {
    let expect = |what: &str, got: (usize, usize), want: (usize, usize)| {
        if got == want {
            Ok(())
        } else {
            Err(Error::Config(format!("{what} is {got:?}, config implies {want:?}")))
        }
    };
    expect(
        "dense1.weight",
        params.dense1.weight.dim(),
        (config.dense_input_dim(), config.dense1_units),
    )?;
    if params.lstm.len() != config.lstm_stacks {
        return Err(Error::Config(format!(
            "{} LSTM layers, config says {}",
            params.lstm.len(),
            config.lstm_stacks
        )));
    }
    expect(
        "biaffine.u",
        params.biaffine.u.dim(),
        (config.proj_units, config.proj_units),
    )?;
    if params.qact_head.is_some() != config.use_qact_head
        || params.nd_head.is_some() != config.use_nd_head
    {
        return Err(Error::Config("auxiliary heads do not match the config".into()));
    }
    expect("log_sigma", params.log_sigma.dim(), (1, config.task_count_weighted()))
}

/// Input features: the embeddings, plus the position column when enabled.
pub fn features(config: &ModelConfig, emb: &EmbeddingMatrix) -> Result<Array2<f64>> {
    if emb.dim() != config.input_dim {
        return Err(Error::Config(format!(
            "essay {}: embedding dim {} but input_dim is {}",
            emb.essay_id,
            emb.dim(),
            config.input_dim
        )));
    }
    Ok(if config.use_spos {
        concat_spos(emb, &spos(emb.n()))?.rows
    } else {
        emb.rows.clone()
    })
}

pub fn forward(
    params: &ModelParams,
    config: &ModelConfig,
    emb: &EmbeddingMatrix,
    mut mode: Mode,
) -> Result<ForwardOutput> {
    check_shapes(params, config)?;
    let input = features(config, emb)?;
    let rate = config.dropout_rate;

    let dense1 = affine(input.view(), &params.dense1).mapv_into(f64::tanh);
    ensure_finite(&dense1, "dense1")?;
    let (mut z, dense1_mask) = dropout(dense1.clone(), rate, &mut mode);

    let mut layers = Vec::with_capacity(params.lstm.len());
    for (l, layer) in params.lstm.iter().enumerate() {
        let fwd = lstm_direction(&layer.forward, z.view(), false);
        let bwd = lstm_direction(&layer.backward, z.view(), true);
        let y = concatenate(Axis(1), &[fwd.hidden.view(), bwd.hidden.view()])
            .expect("equal row counts");
        ensure_finite(&y, &format!("lstm.{l}"))?;
        let (out, mask) = dropout(y, rate, &mut mode);
        layers.push(LayerCache {
            input: std::mem::replace(&mut z, out),
            forward: fwd,
            backward: bwd,
            mask,
        });
    }
    let context = z;

    let source_act = affine(context.view(), &params.source).mapv_into(f64::tanh);
    ensure_finite(&source_act, "source")?;
    let (source, source_mask) = dropout(source_act.clone(), rate, &mut mode);
    let target_act = affine(context.view(), &params.target).mapv_into(f64::tanh);
    ensure_finite(&target_act, "target")?;
    let (target, target_mask) = dropout(target_act.clone(), rate, &mut mode);

    let p = config.proj_units;
    let w = &params.biaffine.w;
    let source_lin: Array1<f64> = source.dot(&w.slice(s![0, ..p]));
    let target_lin: Array1<f64> = target.dot(&w.slice(s![0, p..]));
    let mut scores = source.dot(&params.biaffine.u).dot(&target.t());
    let b = params.biaffine.b[[0, 0]];
    Zip::indexed(&mut scores).for_each(|(i, j), g| *g += source_lin[i] + target_lin[j] + b);
    ensure_finite(&scores, "biaffine")?;

    let qact_logits = params.qact_head.as_ref().map(|h| affine(context.view(), h));
    let nd_logits = params.nd_head.as_ref().map(|h| affine(context.view(), h));
    for (logits, name) in [(&qact_logits, "qact"), (&nd_logits, "nd")] {
        if let Some(l) = logits {
            ensure_finite(l, name)?;
        }
    }

    Ok(ForwardOutput {
        scores,
        qact_logits,
        nd_logits,
        cache: Some(ForwardCache {
            input,
            dense1,
            dense1_mask,
            layers,
            context,
            source_act,
            source_mask,
            source,
            target_act,
            target_mask,
            target,
        }),
    })
}

/// Upstream gradients for the three network outputs.
pub struct OutputGrads {
    pub scores: Array2<f64>,
    pub qact: Option<Array2<f64>>,
    pub nd: Option<Array2<f64>>,
}

/// Gradients of every network tensor given output gradients. `log_sigma`
/// is left at zero; the loss layer fills it.
pub fn backward(
    params: &ModelParams,
    output: &ForwardOutput,
    upstream: &OutputGrads,
) -> Result<ModelParams> {
    let cache = output
        .cache
        .as_ref()
        .ok_or_else(|| Error::State("backward called without a forward cache".into()))?;
    let mut grads = params.zeros_like();
    let p = params.biaffine.u.nrows();
    let d_g = &upstream.scores;
    let (src, tgt) = (&cache.source, &cache.target);
    let u = &params.biaffine.u;
    let w_src = params.biaffine.w.slice(s![0, ..p]);
    let w_tgt = params.biaffine.w.slice(s![0, p..]);

    let row_sums = d_g.sum_axis(Axis(1));
    let col_sums = d_g.sum_axis(Axis(0));
    let dg_t = d_g.dot(tgt);
    grads.biaffine.u = src.t().dot(&dg_t);
    let mut d_src = dg_t.dot(&u.t());
    let mut d_tgt = d_g.t().dot(src).dot(u);
    for i in 0..d_src.nrows() {
        d_src.row_mut(i).scaled_add(row_sums[i], &w_src);
        d_tgt.row_mut(i).scaled_add(col_sums[i], &w_tgt);
    }
    grads
        .biaffine
        .w
        .slice_mut(s![0, ..p])
        .assign(&src.t().dot(&row_sums));
    grads
        .biaffine
        .w
        .slice_mut(s![0, p..])
        .assign(&tgt.t().dot(&col_sums));
    grads.biaffine.b[[0, 0]] = d_g.sum();

    let ctx = &cache.context;
    let mut d_ctx = Array2::<f64>::zeros(ctx.raw_dim());
    let projections = [
        (d_src, &cache.source_mask, &cache.source_act, &params.source, &mut grads.source),
        (d_tgt, &cache.target_mask, &cache.target_act, &params.target, &mut grads.target),
    ];
    for (d_out, mask, act, layer, g) in projections {
        let d_pre = unmask(d_out, mask) * act.mapv(|a| 1.0 - a * a);
        g.weight = ctx.t().dot(&d_pre);
        g.bias = d_pre.sum_axis(Axis(0)).insert_axis(Axis(0));
        d_ctx += &d_pre.dot(&layer.weight.t());
    }
    for (d_logits, head, g) in [
        (&upstream.qact, &params.qact_head, &mut grads.qact_head),
        (&upstream.nd, &params.nd_head, &mut grads.nd_head),
    ] {
        if let (Some(d), Some(h), Some(g)) = (d_logits, head, g.as_mut()) {
            g.weight = ctx.t().dot(d);
            g.bias = d.sum_axis(Axis(0)).insert_axis(Axis(0));
            d_ctx += &d.dot(&h.weight.t());
        }
    }

    let mut d_y = d_ctx;
    for (l, layer) in cache.layers.iter().enumerate().rev() {
        let d_pre = unmask(d_y, &layer.mask);
        let h = params.lstm[l].forward.hidden();
        let g = &mut grads.lstm[l];
        let d_in_f = lstm_direction_backward(
            &params.lstm[l].forward,
            layer.input.view(),
            &layer.forward,
            d_pre.slice(s![.., ..h]),
            false,
            &mut g.forward,
        );
        let d_in_b = lstm_direction_backward(
            &params.lstm[l].backward,
            layer.input.view(),
            &layer.backward,
            d_pre.slice(s![.., h..]),
            true,
            &mut g.backward,
        );
        d_y = d_in_f + d_in_b;
    }

    let d_a1 = unmask(d_y, &cache.dense1_mask) * cache.dense1.mapv(|a| 1.0 - a * a);
    grads.dense1.weight = cache.input.t().dot(&d_a1);
    grads.dense1.bias = d_a1.sum_axis(Axis(0)).insert_axis(Axis(0));
    Ok(grads)
}

/// Task losses and their multi-task combination, with the gradient of the
/// combined loss with respect to each network output and to `log_sigma`.
fn losses(
    params: &ModelParams,
    config: &ModelConfig,
    output: &ForwardOutput,
    targets: &Targets,
) -> (LossBreakdown, OutputGrads, Vec<f64>) {
    let (link, d_scores) = link_loss_with_grad(output.scores.view(), &targets.heads, config.margin);
    let qact = output
        .qact_logits
        .as_ref()
        .map(|l| cross_entropy_with_grad(l.view(), &targets.qact));
    let depth = output
        .nd_logits
        .as_ref()
        .map(|l| cross_entropy_with_grad(l.view(), &targets.depth));

    let mut task_losses = vec![link];
    task_losses.extend(qact.as_ref().map(|q| q.0));
    task_losses.extend(depth.as_ref().map(|d| d.0));

    let (total, weights, d_log_sigma) = if task_losses.len() == 1 {
        (link, vec![1.0], Vec::new())
    } else {
        let log_sigma: Vec<f64> = params.log_sigma.iter().copied().collect();
        mtl_loss_log_sigma(&task_losses, &log_sigma)
    };
    let mut w = weights.into_iter();
    let link_w = w.next().unwrap();
    let grads = OutputGrads {
        scores: d_scores * link_w,
        qact: qact.as_ref().map(|q| &q.1 * w.next().unwrap()),
        nd: depth.as_ref().map(|d| &d.1 * w.next().unwrap()),
    };
    let breakdown = LossBreakdown {
        link,
        qact: qact.map(|q| q.0),
        depth: depth.map(|d| d.0),
        total,
    };
    (breakdown, grads, d_log_sigma)
}

/// Combined training loss for one essay.
pub fn loss(
    params: &ModelParams,
    config: &ModelConfig,
    emb: &EmbeddingMatrix,
    targets: &Targets,
    mode: Mode,
) -> Result<LossBreakdown> {
    let out = forward(params, config, emb, mode)?;
    Ok(losses(params, config, &out, targets).0)
}

/// Loss breakdown and gradients of the combined loss for every tensor.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    output: &ForwardOutput,
    targets: &Targets,
) -> Result<(LossBreakdown, ModelParams)> {
    let (breakdown, upstream, d_log_sigma) = losses(params, config, output, targets);
    let mut grads = backward(params, output, &upstream)?;
    for (g, d) in grads.log_sigma.iter_mut().zip(d_log_sigma) {
        *g = d;
    }
    Ok((breakdown, grads))
}

/// Eval-mode forward pass followed by arborescence decoding.
pub fn predict(params: &ModelParams, config: &ModelConfig, emb: &EmbeddingMatrix) -> Result<ArgTree> {
    let out = forward(params, config, emb, Mode::Eval)?;
    decoder::decode(&out.scores)
}
