//! Column-wise pruning in the Winograd domain.
//!
//! Each of the t³ domain positions corresponds to one column of the weight
//! matrix and one multiply per tile·channel pair, so dropping a column
//! removes work uniformly across the whole layer. Importance is accumulated
//! into a score sequence while the low-rank factors train (stage 1), a fixed
//! binary mask keeps the top-l columns, and training continues under the
//! mask (stage 2). [`finalize_layer`] then folds everything into a compact
//! inference-only layer that touches only the kept columns.

use crate::error::{Error, Result};
use crate::layer::CompactLayer;
use crate::layer::WinogradLayer;
use crate::parallel::thread_count;
use crate::rng::Rng;
use crate::tensor::{Element, Matrix};
use crate::trainer::{
    attach_lowrank, batch_grads, evaluate, sgd_step, GradSlot, Layer, Mode, Model,
    ModelGrads, SynthDataset,
};

// ── importance indicators ───────────────────────────────────────────────────

/// Which statistic a score step accumulates per column. "Update" is the
/// low-rank product `G_r·G_c`; "full" is `G_W + G_r·G_c`; the gradient term
/// is the product of the factor gradients `dG_r·dG_c`, which has the same
/// `(C_o·C_i) x t³` shape as the weights.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Indicator {
    /// |G_r·G_c| column sums.
    MagDelta,
    /// |G_W + G_r·G_c| column sums.
    MagFull,
    /// |dG_r·dG_c| column sums.
    Grad,
    /// |G_r·G_c| ⊙ |dG_r·dG_c| column-sum product.
    DeltaGrad,
    /// |G_W + G_r·G_c| ⊙ |dG_r·dG_c| column-sum product (default).
    FullGrad,
}

impl Indicator {
    pub fn name(self) -> &'static str {
        match self {
            Indicator::MagDelta => "mag-delta",
            Indicator::MagFull => "mag-full",
            Indicator::Grad => "grad",
            Indicator::DeltaGrad => "delta-grad",
            Indicator::FullGrad => "full-grad",
        }
    }
}

impl std::str::FromStr for Indicator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mag-delta" => Ok(Indicator::MagDelta),
            "mag-full" => Ok(Indicator::MagFull),
            "grad" => Ok(Indicator::Grad),
            "delta-grad" => Ok(Indicator::DeltaGrad),
            "full-grad" => Ok(Indicator::FullGrad),
            other => Err(Error::Config(format!(
                "unknown indicator {other:?} (expected mag-delta, mag-full, grad, \
                 delta-grad, or full-grad)"
            ))),
        }
    }
}

/// Accumulating per-column importance for one layer. Entries are sums of
/// non-negative terms, so they never decrease.
#[derive(Clone, Debug)]
pub struct ScoreState {
    pub s: Vec<f64>,
    pub indicator: Indicator,
}

impl ScoreState {
    pub fn new(len: usize, indicator: Indicator) -> Self {
        ScoreState {
            s: vec![0.0; len],
            indicator,
        }
    }
}

/// Column sums of |a + b| in f64 (pass `None` for plain |a|).
fn abs_col_sums<S: Element>(a: &Matrix<S>, b: Option<&Matrix<S>>) -> Vec<f64> {
    let mut sums = vec![0.0; a.cols()];
    for u in 0..a.rows() {
        let row = a.row(u);
        match b {
            Some(bm) => {
                let brow = bm.row(u);
                for (j, (x, y)) in row.iter().zip(brow).enumerate() {
                    sums[j] += (*x + *y).to_f64().abs();
                }
            }
            None => {
                for (j, x) in row.iter().enumerate() {
                    sums[j] += x.to_f64().abs();
                }
            }
        }
    }
    sums
}

/// Accumulate one iteration's importance into `st.s`.
///
/// With the default indicator the added term for column j is
/// `(1/(C_i²·C_o²)) · Σ_u|G_W + G_r·G_c|(u,j) · Σ_v|dG_r·dG_c|(v,j)`;
/// magnitude-only indicators keep just their magnitude column sums and the
/// gradient-only indicator keeps just the gradient column sums, each
/// normalized by `1/(C_i·C_o)` (one factor per row sum). The normalizer is a
/// shared positive constant, so it never changes the ranking — it only keeps
/// scores comparable across layer widths. Gradients are the ones from before
/// the optimizer step that consumed them.
pub fn score_step<S: Element>(
    st: &mut ScoreState,
    layer: &WinogradLayer<S>,
    d_g_r: &Matrix<S>,
    d_g_c: &Matrix<S>,
) -> Result<()> {
    if d_g_r.rows() != layer.g_r.rows() || d_g_r.cols() != layer.g_r.cols() {
        return Err(Error::Shape(format!(
            "d_g_r is {}x{}, factors are {}x{}",
            d_g_r.rows(),
            d_g_r.cols(),
            layer.g_r.rows(),
            layer.g_r.cols()
        )));
    }
    if d_g_c.rows() != layer.g_c.rows() || d_g_c.cols() != layer.g_c.cols() {
        return Err(Error::Shape(format!(
            "d_g_c is {}x{}, factors are {}x{}",
            d_g_c.rows(),
            d_g_c.cols(),
            layer.g_c.rows(),
            layer.g_c.cols()
        )));
    }
    if st.s.len() != layer.g_w.cols() {
        return Err(Error::Shape(format!(
            "score length {} != column count {}",
            st.s.len(),
            layer.g_w.cols()
        )));
    }
    let rows = layer.g_w.rows() as f64; // C_i·C_o
    let magnitude = |full: bool| -> Vec<f64> {
        let update = layer.g_r.matmul(&layer.g_c);
        if full {
            abs_col_sums(&layer.g_w, Some(&update))
        } else {
            abs_col_sums(&update, None)
        }
    };
    let gradient = || -> Vec<f64> { abs_col_sums(&d_g_r.matmul(d_g_c), None) };
    let term: Vec<f64> = match st.indicator {
        Indicator::MagDelta => magnitude(false).into_iter().map(|m| m / rows).collect(),
        Indicator::MagFull => magnitude(true).into_iter().map(|m| m / rows).collect(),
        Indicator::Grad => gradient().into_iter().map(|g| g / rows).collect(),
        Indicator::DeltaGrad => magnitude(false)
            .into_iter()
            .zip(gradient())
            .map(|(m, g)| m * g / (rows * rows))
            .collect(),
        Indicator::FullGrad => magnitude(true)
            .into_iter()
            .zip(gradient())
            .map(|(m, g)| m * g / (rows * rows))
            .collect(),
    };
    for (s, t) in st.s.iter_mut().zip(term) {
        *s += t;
    }
    Ok(())
}

// ── mask construction ───────────────────────────────────────────────────────

/// Keep the `l` highest-scoring columns. Ties break toward the lower index.
/// Returns the binary mask and the sorted kept-location set.
pub fn build_mask(scores: &[f64], l: usize) -> Result<(Vec<bool>, Vec<usize>)> {
    if l == 0 || l > scores.len() {
        return Err(Error::Rank(format!(
            "kept-column count {l} outside 1..={}",
            scores.len()
        )));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    // descending score; the index itself is the tie-break because the sort
    // below is stable over the ascending-index initial order
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut kept: Vec<usize> = order[..l].to_vec();
    kept.sort_unstable();
    let mut mask = vec![false; scores.len()];
    for &i in &kept {
        mask[i] = true;
    }
    Ok((mask, kept))
}

/// Kept-column count for a sparsity in [0, 1): `round((1−sparsity)·t³)`,
/// clamped to at least one column.
pub fn sparsity_to_kept(sparsity: f64, t3: usize) -> Result<usize> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::Config(format!(
            "sparsity {sparsity} outside [0, 1)"
        )));
    }
    Ok((((1.0 - sparsity) * t3 as f64).round() as usize).clamp(1, t3))
}

// ── two-stage pipeline ──────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct PruneConfig {
    /// Fraction of columns to drop, in [0, 1).
    pub sparsity: f64,
    /// Epochs of stage 1 (factor training + score accumulation).
    pub score_epochs: usize,
    /// Epochs of stage 2 (factor training under the fixed masks).
    pub retrain_epochs: usize,
    /// Ranks for [`attach_lowrank`]; leave empty to keep factors already on
    /// the model.
    pub rank_plan: Vec<usize>,
    /// Scale of the SVD initialization when `rank_plan` is used.
    pub alpha: f64,
    pub indicator: Indicator,
    pub lr: f64,
    pub momentum: f64,
    /// Divide lr by 10 every this many epochs, counted across both stages.
    pub lr_decay_every: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl PruneConfig {
    pub fn new(sparsity: f64, retrain_epochs: usize) -> Self {
        PruneConfig {
            sparsity,
            score_epochs: 2,
            retrain_epochs,
            rank_plan: Vec::new(),
            alpha: 0.1,
            indicator: Indicator::FullGrad,
            lr: 1e-3,
            momentum: 0.9,
            lr_decay_every: 15,
            batch_size: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Score,
    Retrain,
}

#[derive(Clone, Debug)]
pub struct PruneEpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub lr: f64,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_loss: f64,
    pub eval_acc: f64,
    /// Kept-column count per Winograd layer (network order).
    pub kept: Vec<usize>,
}

/// Two-stage pruning: train the low-rank factors while accumulating column
/// scores, then fix the top-l masks and keep training the factors under
/// them. One optimizer, momentum buffer, and lr schedule span both stages;
/// scores use each batch's averaged gradients before the step that consumes
/// them. The model is left with masks installed (not yet compacted).
pub fn prune_pipeline<S: Element>(
    model: &mut Model<S>,
    train_ds: &SynthDataset<S>,
    eval_ds: Option<&SynthDataset<S>>,
    cfg: &PruneConfig,
) -> Result<Vec<PruneEpochLog>> {
    if train_ds.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    if !cfg.rank_plan.is_empty() {
        attach_lowrank(model, &cfg.rank_plan, cfg.alpha)?;
    }
    {
        let wl = model.winograd_layers();
        if wl.is_empty() {
            return Err(Error::Config("model has no Winograd layers to prune".into()));
        }
        if let Some(l) = wl.iter().find(|l| l.rank() == 0) {
            return Err(Error::Rank(format!(
                "layer {}->{} has no low-rank factors; pass a rank plan",
                l.c_in, l.c_out
            )));
        }
    }
    let t3 = model.winograd_layers()[0].spec.t3();
    let kept_target = sparsity_to_kept(cfg.sparsity, t3)?;
    let threads = thread_count();
    let shuffler = Rng::new(cfg.seed);
    let mut velocity = ModelGrads::zeros_like(model);
    let mut scores: Vec<ScoreState> = model
        .winograd_layers()
        .iter()
        .map(|l| ScoreState::new(l.spec.t3(), cfg.indicator))
        .collect();
    let total_epochs = cfg.score_epochs + cfg.retrain_epochs;
    let mut logs = Vec::with_capacity(total_epochs);
    for epoch in 0..total_epochs {
        if epoch == cfg.score_epochs {
            install_masks(model, &scores, kept_target)?;
        }
        let scoring = epoch < cfg.score_epochs;
        let lr = if cfg.lr_decay_every == 0 {
            cfg.lr
        } else {
            cfg.lr * 0.1f64.powi((epoch / cfg.lr_decay_every) as i32)
        };
        let mut order: Vec<usize> = (0..train_ds.len()).collect();
        shuffler.split(epoch as u64).shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let (l, c, mut grads) = batch_grads(model, train_ds, batch, threads)?;
            loss_sum += l;
            correct += c;
            grads.scale(1.0 / batch.len() as f64);
            if scoring {
                accumulate_scores(model, &grads, &mut scores)?;
            }
            sgd_step(model, &grads, &mut velocity, lr, cfg.momentum, Mode::Lr);
        }
        // masks built right after the last scoring epoch even when
        // retrain_epochs is zero
        if cfg.retrain_epochs == 0 && epoch + 1 == cfg.score_epochs {
            install_masks(model, &scores, kept_target)?;
        }
        let (eval_loss, eval_acc) = match eval_ds {
            Some(ds) => evaluate(model, ds)?,
            None => (f64::NAN, f64::NAN),
        };
        logs.push(PruneEpochLog {
            epoch,
            stage: if scoring { Stage::Score } else { Stage::Retrain },
            lr,
            train_loss: loss_sum / train_ds.len() as f64,
            train_acc: correct as f64 / train_ds.len() as f64,
            eval_loss,
            eval_acc,
            kept: model.winograd_layers().iter().map(|l| l.kept()).collect(),
        });
    }
    Ok(logs)
}

fn install_masks<S: Element>(
    model: &mut Model<S>,
    scores: &[ScoreState],
    kept: usize,
) -> Result<()> {
    for (layer, st) in model.winograd_layers_mut().into_iter().zip(scores) {
        let (mask, _) = build_mask(&st.s, kept)?;
        layer.set_mask(mask)?;
    }
    Ok(())
}

fn accumulate_scores<S: Element>(
    model: &Model<S>,
    grads: &ModelGrads<S>,
    scores: &mut [ScoreState],
) -> Result<()> {
    let mut w = 0;
    for (layer, slot) in model.layers.iter().zip(&grads.slots) {
        if let (Layer::Winograd(l), GradSlot::Winograd { d_g_r, d_g_c, .. }) = (layer, slot) {
            score_step(&mut scores[w], l, d_g_r, d_g_c)?;
            w += 1;
        }
    }
    Ok(())
}

// ── compaction ──────────────────────────────────────────────────────────────

/// Fold the trained factors and mask into a compact inference layer: the kept
/// columns of `(G_W + G_r·G_c) ⊙ M` paired with their locations.
pub fn finalize_layer<S: Element>(layer: &WinogradLayer<S>) -> Result<CompactLayer<S>> {
    CompactLayer::from_layer(layer)
}

/// [`finalize_layer`] applied to every Winograd layer of a model.
pub fn finalize_model<S: Element>(model: &Model<S>) -> Result<Model<S>> {
    let layers = model
        .layers
        .iter()
        .map(|layer| match layer {
            Layer::Winograd(l) => Ok(Layer::WinogradCompact(finalize_layer(l)?)),
            other => Ok(other.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Model { layers })
}
