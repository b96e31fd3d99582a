//! Conditional RBMs for sequences.
//!
//! The previous `T` visible frames act through directed links as dynamic
//! biases: `G[tau]` (d x d) shifts the visible biases and `Q[tau]` (d x p)
//! shifts the hidden biases,
//!
//! ```text
//! b_hat = b + sum_tau G[tau]^T v(t - tau - 1)
//! c_hat = c + sum_tau Q[tau]^T v(t - tau - 1)
//! ```
//!
//! where `tau` is a zero-based lag index. With the history fixed, the model is
//! an ordinary RBM with biases `(b_hat, c_hat)`, so every sampler and
//! conditional from the RBM modules applies unchanged.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::gibbs::{self, ChainState};
use crate::model::{frobenius, Dataset, Error, RbmParams, Result, RngStream, TrainConfig, UnitFamily};
use crate::oracle;
use crate::trainer::{
    cd_gradients, epoch_batches, initial_rbm, outer_add, param_distance, row_seeds, squared_error, stats_from_chains,
    EpochRecord, GradientSet, PhaseStats, RbmVelocity, TrainReport, Velocity, CHAIN_STREAM, SHUFFLE_STREAM,
};
use crate::units;

#[derive(Debug, Clone, PartialEq)]
pub struct CrbmParams {
    pub base: RbmParams,
    /// Past-visible to current-visible links, one d x d matrix per lag.
    pub history_visible: Vec<Array2<f64>>,
    /// Past-visible to current-hidden links, one d x p matrix per lag.
    pub history_hidden: Vec<Array2<f64>>,
}

impl CrbmParams {
    /// Wraps an RBM with all history links set to zero.
    pub fn from_rbm(base: RbmParams, history_len: usize) -> Result<Self> {
        if history_len == 0 {
            return Err(Error::Dimension("history length must be positive".into()));
        }
        let (d, p) = (base.d(), base.p());
        Ok(Self {
            base,
            history_visible: vec![Array2::zeros((d, d)); history_len],
            history_hidden: vec![Array2::zeros((d, p)); history_len],
        })
    }

    pub fn history_len(&self) -> usize {
        self.history_visible.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        let (d, p) = (self.base.d(), self.base.p());
        let t = self.history_len();
        if t == 0 || self.history_hidden.len() != t {
            return Err(Error::Dimension(format!(
                "{} visible-history and {} hidden-history matrices; need the same positive count",
                t,
                self.history_hidden.len()
            )));
        }
        for (lag, (g, q)) in self.history_visible.iter().zip(&self.history_hidden).enumerate() {
            if g.dim() != (d, d) {
                return Err(Error::Dimension(format!("G[{lag}] is {:?}, expected ({d}, {d})", g.dim())));
            }
            if q.dim() != (d, p) {
                return Err(Error::Dimension(format!("Q[{lag}] is {:?}, expected ({d}, {p})", q.dim())));
            }
            if g.iter().chain(q.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!("non-finite history link at lag {lag}")));
            }
        }
        Ok(())
    }
}

/// The `T` most recent frames, most recent first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    frames: Vec<Array1<f64>>,
}

impl History {
    pub fn new(frames: Vec<Array1<f64>>) -> Result<Self> {
        let d = frames.first().map(Array1::len).ok_or_else(|| Error::Dimension("empty history".into()))?;
        if frames.iter().any(|f| f.len() != d) {
            return Err(Error::Dimension("history frames differ in length".into()));
        }
        Ok(Self { frames })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Array1<f64>] {
        &self.frames
    }

    /// Pushes a new most-recent frame and drops the oldest.
    pub fn shift(&mut self, frame: Array1<f64>) {
        self.frames.insert(0, frame);
        self.frames.pop();
    }
}

/// A training example: a history and the frame that followed it.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub history: History,
    pub target: Array1<f64>,
}

/// Sequences of visible frames sharing one unit family.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceDataset {
    sequences: Vec<Dataset>,
}

impl SequenceDataset {
    pub fn new(sequences: Vec<Dataset>) -> Result<Self> {
        if let Some(first) = sequences.first() {
            let (d, family) = (first.d(), first.family());
            if sequences.iter().any(|s| s.d() != d || s.family() != family) {
                return Err(Error::Dimension("sequences differ in dimension or unit family".into()));
            }
        }
        Ok(Self { sequences })
    }

    pub fn sequences(&self) -> &[Dataset] {
        &self.sequences
    }

    pub fn d(&self) -> Option<usize> {
        self.sequences.first().map(Dataset::d)
    }

    pub fn family(&self) -> Option<UnitFamily> {
        self.sequences.first().map(Dataset::family)
    }

    /// Slides a window of `history_len + 1` frames over each sequence in turn.
    pub fn windows(&self, history_len: usize) -> Vec<Window> {
        let mut out = vec![];
        for seq in &self.sequences {
            for t in history_len..seq.n() {
                let frames = (1..=history_len).map(|lag| seq.row(t - lag).to_owned()).collect();
                out.push(Window { history: History { frames }, target: seq.row(t).to_owned() });
            }
        }
        out
    }
}

fn check_history(params: &CrbmParams, history: &History) -> Result<()> {
    if history.len() != params.history_len() {
        return Err(Error::Dimension(format!(
            "history holds {} frames, model expects {}",
            history.len(),
            params.history_len()
        )));
    }
    if let Some(f) = history.frames.iter().find(|f| f.len() != params.base.d()) {
        return Err(Error::Dimension(format!("history frame has length {}, expected {}", f.len(), params.base.d())));
    }
    Ok(())
}

/// Visible and hidden biases shifted by the history links.
pub fn effective_biases(params: &CrbmParams, history: &History) -> Result<(Array1<f64>, Array1<f64>)> {
    check_history(params, history)?;
    Ok(effective_biases_unchecked(params, history))
}

fn effective_biases_unchecked(params: &CrbmParams, history: &History) -> (Array1<f64>, Array1<f64>) {
    let mut b_hat = params.base.visible_bias.clone();
    let mut c_hat = params.base.hidden_bias.clone();
    for ((g, q), frame) in params.history_visible.iter().zip(&params.history_hidden).zip(&history.frames) {
        b_hat += &g.t().dot(frame);
        c_hat += &q.t().dot(frame);
    }
    (b_hat, c_hat)
}

/// The RBM obtained by fixing the history.
pub fn conditioned(params: &CrbmParams, history: &History) -> Result<RbmParams> {
    check_history(params, history)?;
    Ok(conditioned_unchecked(params, history))
}

fn conditioned_unchecked(params: &CrbmParams, history: &History) -> RbmParams {
    let (b_hat, c_hat) = effective_biases_unchecked(params, history);
    params.base.with_biases(b_hat, c_hat)
}

/// CD estimates for every parameter group, each divided by the window count.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmGradients {
    pub base: GradientSet,
    pub history_visible: Vec<Array2<f64>>,
    pub history_hidden: Vec<Array2<f64>>,
}

struct WindowStats {
    positive: PhaseStats,
    negative: PhaseStats,
    chains: Vec<ChainState>,
    history_visible: Vec<Array2<f64>>,
    history_hidden: Vec<Array2<f64>>,
}

/// Positive and negative phases over a batch of windows. Chains run with the
/// history clamped, one seeded RNG per window drawn in window order.
fn window_stats(params: &CrbmParams, windows: &[&Window], k: usize, rng: &mut impl RngCore) -> WindowStats {
    let (d, p, t) = (params.base.d(), params.base.p(), params.history_len());
    let seeds = row_seeds(rng, windows.len());
    let per_window: Vec<(Array1<f64>, ChainState)> = seeds
        .par_iter()
        .zip(windows.par_iter())
        .map(|(&seed, w)| {
            let cond = conditioned_unchecked(params, &w.history);
            let h_hat = units::cond_mean_hidden_unchecked(&cond, w.target.view());
            let chain = gibbs::chain_unchecked(&cond, w.target.view(), k, &mut ChaCha8Rng::seed_from_u64(seed));
            (h_hat, chain)
        })
        .collect();

    let mut positive = PhaseStats::zeros(d, p);
    let mut history_visible = vec![Array2::zeros((d, d)); t];
    let mut history_hidden = vec![Array2::zeros((d, p)); t];
    let mut chains = Vec::with_capacity(windows.len());
    for (w, (h_hat, chain)) in windows.iter().zip(per_window) {
        positive.add_row(w.target.view(), h_hat.view());
        let dv = &w.target - &chain.v;
        let dh = &h_hat - &chain.h;
        for (lag, frame) in w.history.frames.iter().enumerate() {
            outer_add(&mut history_visible[lag], frame.view(), dv.view());
            outer_add(&mut history_hidden[lag], frame.view(), dh.view());
        }
        chains.push(chain);
    }
    let negative = stats_from_chains(d, p, &chains);
    WindowStats { positive, negative, chains, history_visible, history_hidden }
}

fn check_windows(params: &CrbmParams, windows: &[&Window]) -> Result<()> {
    for w in windows {
        check_history(params, &w.history)?;
        params.base.check_visible(w.target.view())?;
    }
    Ok(())
}

/// CD-k gradients of a CRBM over a batch of windows.
pub fn crbm_gradients(params: &CrbmParams, windows: &[Window], k: usize, rng: &mut impl RngCore) -> Result<CrbmGradients> {
    params.validate()?;
    if k == 0 {
        return Err(Error::Config("number of Gibbs steps must be positive".into()));
    }
    let refs: Vec<&Window> = windows.iter().collect();
    check_windows(params, &refs)?;
    let stats = window_stats(params, &refs, k, rng);
    let m = windows.len().max(1) as f64;
    Ok(CrbmGradients {
        base: cd_gradients(&stats.positive, &stats.negative)?,
        history_visible: stats.history_visible.into_iter().map(|g| g / m).collect(),
        history_hidden: stats.history_hidden.into_iter().map(|q| q / m).collect(),
    })
}

/// Mean squared error of the mean-field reconstruction `E[v | E[h | v, history], history]`.
pub fn reconstruction_error(params: &CrbmParams, windows: &[Window]) -> Result<f64> {
    params.validate()?;
    let mut total = 0.0;
    for w in windows {
        let cond = conditioned(params, &w.history)?;
        let h = units::cond_mean_hidden(&cond, w.target.view())?;
        let v = units::cond_mean_visible(&cond, h.view())?;
        total += squared_error(w.target.view(), v.view());
    }
    Ok(total / windows.len().max(1) as f64)
}

/// `sum log P(target | history)` by enumeration (binary units only).
pub fn exact_conditional_loglik(params: &CrbmParams, windows: &[Window]) -> Result<f64> {
    let mut total = 0.0;
    for w in windows {
        let cond = conditioned(params, &w.history)?;
        let row = w.target.view().insert_axis(Axis(0));
        total += oracle::exact_loglik_weighted(&cond, row, &[1.0])?;
    }
    Ok(total)
}

/// Options specific to CRBM training.
#[derive(Debug, Clone, PartialEq)]
pub struct CrbmOptions {
    pub history_len: usize,
    /// When false, `G` and `Q` stay at zero.
    pub learn_history: bool,
}

/// Mini-batch CD-k training over sliding windows.
pub fn train_crbm(
    config: &TrainConfig,
    hidden_units: usize,
    hidden_family: UnitFamily,
    sequences: &SequenceDataset,
    options: &CrbmOptions,
) -> Result<(CrbmParams, TrainReport)> {
    let d = sequences.d().ok_or_else(|| Error::Dimension("no sequences to train on".into()))?;
    let family = sequences.family().unwrap_or(UnitFamily::Binary);
    let base = initial_rbm(config, d, hidden_units, family, hidden_family)?;
    let params = CrbmParams::from_rbm(base, options.history_len)?;
    train_crbm_from(config, params, sequences, options)
}

pub fn train_crbm_from(
    config: &TrainConfig,
    mut params: CrbmParams,
    sequences: &SequenceDataset,
    options: &CrbmOptions,
) -> Result<(CrbmParams, TrainReport)> {
    params.validate()?;
    if options.history_len != params.history_len() {
        return Err(Error::Config(format!(
            "history length {} does not match the model's {}",
            options.history_len,
            params.history_len()
        )));
    }
    if let Some(family) = sequences.family() {
        if family != params.base.visible_family {
            return Err(Error::Config(format!(
                "sequences hold {family} values but the model's visible units are {}",
                params.base.visible_family
            )));
        }
    }
    let windows = sequences.windows(params.history_len());
    if windows.is_empty() {
        return Err(Error::Dimension(format!(
            "no sequence is longer than the history length {}",
            params.history_len()
        )));
    }
    check_windows(&params, &windows.iter().collect::<Vec<_>>())?;
    config.validate(windows.len())?;

    let (d, p, t) = (params.base.d(), params.base.p(), params.history_len());
    let mut shuffle_rng = RngStream::new(config.seed, SHUFFLE_STREAM).rng();
    let mut chain_rng = RngStream::new(config.seed, CHAIN_STREAM).rng();
    let mut velocity = RbmVelocity::new(d, p);
    let mut vel_g: Vec<_> = (0..t).map(|_| Velocity::new(ndarray::Ix2(d, d))).collect();
    let mut vel_q: Vec<_> = (0..t).map(|_| Velocity::new(ndarray::Ix2(d, p))).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let before = params.clone();
        let mut recon = 0.0;
        let mut grad_norm = 0.0;
        let batches = epoch_batches(windows.len(), config.batch_size, &mut shuffle_rng);
        for batch_idx in &batches {
            let batch: Vec<&Window> = batch_idx.iter().map(|&i| &windows[i]).collect();
            let stats = window_stats(&params, &batch, config.cd_steps, &mut chain_rng);
            recon += batch.iter().zip(&stats.chains).map(|(w, c)| squared_error(w.target.view(), c.v.view())).sum::<f64>();
            let grad = cd_gradients(&stats.positive, &stats.negative)?;
            let m = batch.len() as f64;
            let mut norm_sq = grad.norm().powi(2);
            velocity.step(&mut params.base, &grad, config);
            if options.learn_history {
                for lag in 0..t {
                    let dg = &stats.history_visible[lag] / m;
                    let dq = &stats.history_hidden[lag] / m;
                    norm_sq += frobenius(dg.view()).powi(2) + frobenius(dq.view()).powi(2);
                    vel_g[lag].step(&mut params.history_visible[lag], &dg, config);
                    vel_q[lag].step(&mut params.history_hidden[lag], &dq, config);
                }
            }
            grad_norm += norm_sq.sqrt();
        }
        let mut moved = param_distance(&before.base, &params.base).powi(2);
        for lag in 0..t {
            moved += frobenius((&before.history_visible[lag] - &params.history_visible[lag]).view()).powi(2)
                + frobenius((&before.history_hidden[lag] - &params.history_hidden[lag]).view()).powi(2);
        }
        report.epochs.push(EpochRecord {
            epoch,
            recon_error: recon / windows.len() as f64,
            grad_norm: grad_norm / batches.len() as f64,
            loglik: if config.track_loglik { exact_conditional_loglik(&params, &windows).ok() } else { None },
            seconds: started.elapsed().as_secs_f64(),
        });
        if moved.sqrt() < config.convergence_tol {
            break;
        }
    }
    Ok((params, report))
}

/// Autoregressive rollout: each new frame is the end of a `k`-sweep chain
/// started from the most recent frame, run with the current history clamped.
pub fn generate_sequence(
    params: &CrbmParams,
    seed_history: &History,
    steps: usize,
    k: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<Array1<f64>>> {
    params.validate()?;
    check_history(params, seed_history)?;
    if k == 0 {
        return Err(Error::Config("number of Gibbs steps must be positive".into()));
    }
    let mut history = seed_history.clone();
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let cond = conditioned_unchecked(params, &history);
        let start: ArrayView1<f64> = history.frames[0].view();
        let frame = gibbs::chain_unchecked(&cond, start, k, rng).v;
        history.shift(frame.clone());
        out.push(frame);
    }
    Ok(out)
}
