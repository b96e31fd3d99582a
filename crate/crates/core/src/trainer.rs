//! Contrastive-divergence training.
//!
//! Each mini-batch contributes a positive phase (data rows paired with the
//! conditional hidden means) and a negative phase (the end points of k-sweep
//! Gibbs chains started at the data rows). The gradient is their difference
//! divided by the batch size, and parameters move up the log-likelihood.
//!
//! Every negative-phase chain runs on its own RNG, seeded from the batch
//! stream in row order, so results do not depend on the rayon worker count.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gibbs::{self, ChainState};
use crate::model::{frobenius, init_params, BmParams, Dataset, Error, RbmParams, Result, RngStream, TrainConfig, UnitFamily};
use crate::oracle;
use crate::units;

/// Stream ids under `TrainConfig::seed`: initialization, shuffling, CD chains, clamped BM sweeps.
pub const INIT_STREAM: u64 = 0;
pub const SHUFFLE_STREAM: u64 = 1;
pub const CHAIN_STREAM: u64 = 2;
pub const CLAMPED_STREAM: u64 = 3;

/// Clamped single-site sweeps used to estimate `E[h h^T | v]` in a BM.
pub const DEFAULT_CLAMPED_SWEEPS: usize = 20;

/// Log-likelihood gradients (or their estimates) for every parameter group.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub dw: Array2<f64>,
    pub db: Array1<f64>,
    pub dc: Array1<f64>,
    pub dl: Option<Array2<f64>>,
    pub dj: Option<Array2<f64>>,
}

impl GradientSet {
    pub fn zeros(d: usize, p: usize) -> Self {
        Self { dw: Array2::zeros((d, p)), db: Array1::zeros(d), dc: Array1::zeros(p), dl: None, dj: None }
    }

    fn entries(&self) -> impl Iterator<Item = &f64> {
        self.dw
            .iter()
            .chain(self.db.iter())
            .chain(self.dc.iter())
            .chain(self.dl.iter().flat_map(|m| m.iter()))
            .chain(self.dj.iter().flat_map(|m| m.iter()))
    }

    pub fn norm(&self) -> f64 {
        self.entries().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.entries().fold(0.0, |acc, x| acc.max(x.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            dw: &self.dw * factor,
            db: &self.db * factor,
            dc: &self.dc * factor,
            dl: self.dl.as_ref().map(|m| m * factor),
            dj: self.dj.as_ref().map(|m| m * factor),
        }
    }

    /// Cosine of the angle between two gradients viewed as flat vectors.
    pub fn cosine_similarity(&self, other: &GradientSet) -> f64 {
        let dot: f64 = self.entries().zip(other.entries()).map(|(a, b)| a * b).sum();
        dot / (self.norm() * other.norm())
    }
}

/// Sums `sum v h^T`, `sum v`, `sum h` over `count` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStats {
    pub vh: Array2<f64>,
    pub v: Array1<f64>,
    pub h: Array1<f64>,
    pub count: usize,
}

impl PhaseStats {
    pub fn zeros(d: usize, p: usize) -> Self {
        Self { vh: Array2::zeros((d, p)), v: Array1::zeros(d), h: Array1::zeros(p), count: 0 }
    }

    pub fn add_row(&mut self, v: ArrayView1<f64>, h: ArrayView1<f64>) {
        outer_add(&mut self.vh, v, h);
        self.v += &v;
        self.h += &h;
        self.count += 1;
    }
}

/// Lateral second moments `sum v v^T` and `sum h h^T` over `count` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LateralStats {
    pub vv: Array2<f64>,
    pub hh: Array2<f64>,
    pub count: usize,
}

impl LateralStats {
    pub fn zeros(d: usize, p: usize) -> Self {
        Self { vv: Array2::zeros((d, d)), hh: Array2::zeros((p, p)), count: 0 }
    }
}

pub(crate) fn outer_add(acc: &mut Array2<f64>, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &x) in a.iter().enumerate() {
        acc.row_mut(i).scaled_add(x, &b);
    }
}

pub(crate) fn check_batch(params: &RbmParams, batch: ArrayView2<f64>) -> Result<()> {
    if batch.ncols() != params.d() {
        return Err(Error::Dimension(format!("batch has {} columns, model expects {}", batch.ncols(), params.d())));
    }
    Ok(())
}

/// Data-side statistics with `h_hat_i = E[h | v_i]`.
pub fn positive_stats(params: &RbmParams, batch: ArrayView2<f64>) -> Result<PhaseStats> {
    check_batch(params, batch)?;
    let mut stats = PhaseStats::zeros(params.d(), params.p());
    for v in batch.rows() {
        let h_hat = units::cond_mean_hidden_unchecked(params, v);
        stats.add_row(v, h_hat.view());
    }
    Ok(stats)
}

/// Draws one chain seed per row from `rng`, in row order.
pub(crate) fn row_seeds(rng: &mut impl RngCore, rows: usize) -> Vec<u64> {
    (0..rows).map(|_| rng.next_u64()).collect()
}

/// Runs a k-sweep chain from every row, one seeded RNG per row.
pub fn negative_chains(
    params: &RbmParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<ChainState>> {
    check_batch(params, batch)?;
    if k == 0 {
        return Err(Error::Config("number of Gibbs steps must be positive".into()));
    }
    let seeds = row_seeds(rng, batch.nrows());
    Ok(seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| gibbs::chain_unchecked(params, batch.row(r), k, &mut ChaCha8Rng::seed_from_u64(seed)))
        .collect())
}

pub(crate) fn stats_from_chains(d: usize, p: usize, chains: &[ChainState]) -> PhaseStats {
    let mut stats = PhaseStats::zeros(d, p);
    for chain in chains {
        stats.add_row(chain.v.view(), chain.h.view());
    }
    stats
}

/// Reconstruction-side statistics `sum v~ h~^T` from k-sweep chains started at the rows.
pub fn negative_stats(params: &RbmParams, batch: ArrayView2<f64>, k: usize, rng: &mut impl RngCore) -> Result<PhaseStats> {
    let chains = negative_chains(params, batch, k, rng)?;
    Ok(stats_from_chains(params.d(), params.p(), &chains))
}

/// `(positive - negative) / m` for `W`, `b` and `c`.
pub fn cd_gradients(positive: &PhaseStats, negative: &PhaseStats) -> Result<GradientSet> {
    if positive.vh.dim() != negative.vh.dim() {
        return Err(Error::Dimension(format!(
            "positive stats are {:?}, negative stats are {:?}",
            positive.vh.dim(),
            negative.vh.dim()
        )));
    }
    let m = positive.count.max(1) as f64;
    Ok(GradientSet {
        dw: (&positive.vh - &negative.vh) / m,
        db: (&positive.v - &negative.v) / m,
        dc: (&positive.h - &negative.h) / m,
        dl: None,
        dj: None,
    })
}

fn symmetrize_zero_diag(m: &mut Array2<f64>) {
    let sym = (&*m + &m.t()) * 0.5;
    m.assign(&sym);
    m.diag_mut().fill(0.0);
}

/// Lateral gradients `(dL, dJ)` from data and reconstruction second moments,
/// divided by the batch size, symmetrized, with zero diagonals.
pub fn bm_gradients(positive: &LateralStats, negative: &LateralStats) -> Result<(Array2<f64>, Array2<f64>)> {
    if positive.vv.dim() != negative.vv.dim() || positive.hh.dim() != negative.hh.dim() {
        return Err(Error::Dimension("lateral statistics have mismatched shapes".into()));
    }
    let m = positive.count.max(1) as f64;
    let mut dl = (&positive.vv - &negative.vv) / m;
    let mut dj = (&positive.hh - &negative.hh) / m;
    symmetrize_zero_diag(&mut dl);
    symmetrize_zero_diag(&mut dj);
    Ok((dl, dj))
}

/// One line of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean squared difference between data rows and their reconstructions.
    pub recon_error: f64,
    /// Mean gradient norm over the epoch's mini-batches.
    pub grad_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub loglik: Option<f64>,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

impl TrainReport {
    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("epoch records serialize") + "\n")
            .collect()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.epochs.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Plain or momentum gradient-ascent state for one parameter array.
#[derive(Debug, Clone)]
pub(crate) struct Velocity<D: ndarray::Dimension> {
    v: ndarray::Array<f64, D>,
}

impl<D: ndarray::Dimension> Velocity<D> {
    pub(crate) fn new(shape: D) -> Self {
        Self { v: ndarray::Array::zeros(shape) }
    }

    /// `velocity = momentum * velocity + lr * (grad - decay * param)`, then `param += velocity`.
    pub(crate) fn step(&mut self, param: &mut ndarray::Array<f64, D>, grad: &ndarray::Array<f64, D>, config: &TrainConfig) {
        let decayed = grad - &(&*param * config.weight_decay);
        self.v *= config.momentum;
        self.v.scaled_add(config.learning_rate, &decayed);
        *param += &self.v;
    }
}

pub(crate) struct RbmVelocity {
    w: Velocity<ndarray::Ix2>,
    b: Velocity<ndarray::Ix1>,
    c: Velocity<ndarray::Ix1>,
}

impl RbmVelocity {
    pub(crate) fn new(d: usize, p: usize) -> Self {
        Self {
            w: Velocity::new(ndarray::Ix2(d, p)),
            b: Velocity::new(ndarray::Ix1(d)),
            c: Velocity::new(ndarray::Ix1(p)),
        }
    }

    pub(crate) fn step(&mut self, params: &mut RbmParams, grad: &GradientSet, config: &TrainConfig) {
        self.w.step(&mut params.weights, &grad.dw, config);
        self.b.step(&mut params.visible_bias, &grad.db, config);
        self.c.step(&mut params.hidden_bias, &grad.dc, config);
    }
}

pub(crate) fn param_distance(a: &RbmParams, b: &RbmParams) -> f64 {
    let dw = frobenius((&a.weights - &b.weights).view());
    let db: f64 = (&a.visible_bias - &b.visible_bias).iter().map(|x| x * x).sum();
    let dc: f64 = (&a.hidden_bias - &b.hidden_bias).iter().map(|x| x * x).sum();
    (dw * dw + db + dc).sqrt()
}

/// Shuffled mini-batches of row indices for one epoch.
pub(crate) fn epoch_batches(n: usize, m: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);
    order.chunks(m).map(<[usize]>::to_vec).collect()
}

pub(crate) fn squared_error(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

pub(crate) fn tracked_loglik(params: &RbmParams, rows: ArrayView2<f64>, track: bool) -> Option<f64> {
    if !track {
        return None;
    }
    let weights = vec![1.0; rows.nrows()];
    oracle::exact_loglik_weighted(params, rows, &weights).ok()
}

/// Random initialization followed by [`train_rbm_from`].
pub fn train_rbm(
    config: &TrainConfig,
    hidden_units: usize,
    hidden_family: UnitFamily,
    dataset: &Dataset,
) -> Result<(RbmParams, TrainReport)> {
    let params = initial_rbm(config, dataset.d(), hidden_units, dataset.family(), hidden_family)?;
    train_rbm_from(config, params, dataset)
}

pub(crate) fn initial_rbm(
    config: &TrainConfig,
    d: usize,
    p: usize,
    visible_family: UnitFamily,
    hidden_family: UnitFamily,
) -> Result<RbmParams> {
    let mut rng = RngStream::new(config.seed, INIT_STREAM).rng();
    init_params(d, p, visible_family, hidden_family, config.init_scale, &mut rng)
}

/// CD-k training starting from `params`.
pub fn train_rbm_from(config: &TrainConfig, params: RbmParams, dataset: &Dataset) -> Result<(RbmParams, TrainReport)> {
    if dataset.family() != params.visible_family {
        return Err(Error::Config(format!(
            "dataset holds {} values but the model's visible units are {}",
            dataset.family(),
            params.visible_family
        )));
    }
    fit_rows(config, params, dataset.rows())
}

/// Training loop over raw rows; the caller vouches for the value domain.
pub(crate) fn fit_rows(config: &TrainConfig, mut params: RbmParams, rows: ArrayView2<f64>) -> Result<(RbmParams, TrainReport)> {
    params.validate()?;
    check_batch(&params, rows)?;
    config.validate(rows.nrows())?;
    let (d, p) = (params.d(), params.p());
    let mut shuffle_rng = RngStream::new(config.seed, SHUFFLE_STREAM).rng();
    let mut chain_rng = RngStream::new(config.seed, CHAIN_STREAM).rng();
    let mut velocity = RbmVelocity::new(d, p);
    let mut report = TrainReport::default();

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let before = params.clone();
        let mut recon = 0.0;
        let mut grad_norm = 0.0;
        let batches = epoch_batches(rows.nrows(), config.batch_size, &mut shuffle_rng);
        for batch_idx in &batches {
            let batch = rows.select(Axis(0), batch_idx);
            let positive = positive_stats(&params, batch.view())?;
            let chains = negative_chains(&params, batch.view(), config.cd_steps, &mut chain_rng)?;
            let negative = stats_from_chains(d, p, &chains);
            recon += batch.rows().into_iter().zip(&chains).map(|(v, c)| squared_error(v, c.v.view())).sum::<f64>();
            let grad = cd_gradients(&positive, &negative)?;
            grad_norm += grad.norm();
            velocity.step(&mut params, &grad, config);
        }
        report.epochs.push(EpochRecord {
            epoch,
            recon_error: recon / rows.nrows() as f64,
            grad_norm: grad_norm / batches.len() as f64,
            loglik: tracked_loglik(&params, rows, config.track_loglik),
            seconds: started.elapsed().as_secs_f64(),
        });
        if param_distance(&before, &params) < config.convergence_tol {
            break;
        }
    }
    Ok((params, report))
}

/// Extra knobs for Boltzmann-machine training.
#[derive(Debug, Clone, PartialEq)]
pub struct BmOptions {
    /// When false, `L` and `J` stay at their initial values.
    pub learn_lateral: bool,
    pub clamped_sweeps: usize,
}

impl Default for BmOptions {
    fn default() -> Self {
        Self { learn_lateral: true, clamped_sweeps: DEFAULT_CLAMPED_SWEEPS }
    }
}

fn has_nonzero(m: &Array2<f64>) -> bool {
    m.iter().any(|&x| x != 0.0)
}

/// Positive phase of a binary BM: `v_i`, `E[h | v_i]`, `v_i v_i^T` and
/// `E[h h^T | v_i]`. Without hidden-hidden links the hidden moments are exact;
/// otherwise they are averages over clamped single-site sweeps.
pub fn bm_positive_stats(
    params: &BmParams,
    batch: ArrayView2<f64>,
    clamped_sweeps: usize,
    rng: &mut impl RngCore,
) -> Result<(PhaseStats, LateralStats)> {
    check_batch(&params.base, batch)?;
    let (d, p) = (params.base.d(), params.base.p());
    let mut stats = PhaseStats::zeros(d, p);
    let mut lateral = LateralStats::zeros(d, p);
    let exact = !has_nonzero(&params.lateral_hidden);
    let seeds = if exact { vec![0; batch.nrows()] } else { row_seeds(rng, batch.nrows()) };
    let sweeps = clamped_sweeps.max(1);
    let moments: Vec<(Array1<f64>, Array2<f64>)> = seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let v = batch.row(r);
            if exact {
                let mean = units::cond_mean_hidden_unchecked(&params.base, v);
                let mut hh = Array2::zeros((p, p));
                outer_add(&mut hh, mean.view(), mean.view());
                hh.diag_mut().assign(&mean);
                (mean, hh)
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let v = v.to_owned();
                let mut h = Array1::zeros(p);
                let mut mean = Array1::zeros(p);
                let mut hh = Array2::zeros((p, p));
                for _ in 0..sweeps {
                    gibbs::clamped_hidden_scan(params, &v, &mut h, &mut rng);
                    mean += &h;
                    outer_add(&mut hh, h.view(), h.view());
                }
                (mean / sweeps as f64, hh / sweeps as f64)
            }
        })
        .collect();
    for (v, (mean, hh)) in batch.rows().into_iter().zip(moments) {
        stats.add_row(v, mean.view());
        outer_add(&mut lateral.vv, v, v);
        lateral.hh += &hh;
        lateral.count += 1;
    }
    Ok((stats, lateral))
}

/// Negative phase of a binary BM. Without lateral links the chain is the RBM
/// block sampler; otherwise each row starts with a clamped hidden scan followed
/// by `k` single-site sweeps.
pub fn bm_negative_chains(
    params: &BmParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut impl RngCore,
) -> Result<Vec<ChainState>> {
    if !params.has_lateral_links() {
        return negative_chains(&params.base, batch, k, rng);
    }
    check_batch(&params.base, batch)?;
    if k == 0 {
        return Err(Error::Config("number of Gibbs steps must be positive".into()));
    }
    let p = params.base.p();
    let seeds = row_seeds(rng, batch.nrows());
    Ok(seeds
        .par_iter()
        .enumerate()
        .map(|(r, &seed)| {
            let v = batch.row(r);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = v.to_owned();
            let mut h = Array1::zeros(p);
            gibbs::clamped_hidden_scan(params, &v, &mut h, &mut rng);
            for _ in 0..k {
                gibbs::bm_sweep_in_place(params, &mut v, &mut h, &mut rng);
            }
            ChainState { v, h, sweep: k }
        })
        .collect())
}

fn lateral_from_chains(d: usize, p: usize, chains: &[ChainState]) -> LateralStats {
    let mut lateral = LateralStats::zeros(d, p);
    for c in chains {
        outer_add(&mut lateral.vv, c.v.view(), c.v.view());
        outer_add(&mut lateral.hh, c.h.view(), c.h.view());
        lateral.count += 1;
    }
    lateral
}

pub fn bm_negative_stats(
    params: &BmParams,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut impl RngCore,
) -> Result<(PhaseStats, LateralStats)> {
    let chains = bm_negative_chains(params, batch, k, rng)?;
    let (d, p) = (params.base.d(), params.base.p());
    Ok((stats_from_chains(d, p, &chains), lateral_from_chains(d, p, &chains)))
}

/// Trains a binary Boltzmann machine from a zero-lateral random start.
pub fn train_bm(
    config: &TrainConfig,
    hidden_units: usize,
    dataset: &Dataset,
    options: &BmOptions,
) -> Result<(BmParams, TrainReport)> {
    let base = initial_rbm(config, dataset.d(), hidden_units, dataset.family(), UnitFamily::Binary)?;
    train_bm_from(config, BmParams::from_rbm(base), dataset, options)
}

pub fn train_bm_from(
    config: &TrainConfig,
    mut params: BmParams,
    dataset: &Dataset,
    options: &BmOptions,
) -> Result<(BmParams, TrainReport)> {
    params.validate()?;
    if dataset.family() != UnitFamily::Binary || params.base.visible_family != UnitFamily::Binary || params.base.hidden_family != UnitFamily::Binary {
        return Err(Error::UnsupportedFamily("Boltzmann machine training supports binary units only".into()));
    }
    let rows = dataset.rows();
    check_batch(&params.base, rows)?;
    config.validate(rows.nrows())?;
    let (d, p) = (params.base.d(), params.base.p());
    let mut shuffle_rng = RngStream::new(config.seed, SHUFFLE_STREAM).rng();
    let mut chain_rng = RngStream::new(config.seed, CHAIN_STREAM).rng();
    let mut clamped_rng = RngStream::new(config.seed, CLAMPED_STREAM).rng();
    let mut velocity = RbmVelocity::new(d, p);
    let mut vel_l = Velocity::new(ndarray::Ix2(d, d));
    let mut vel_j = Velocity::new(ndarray::Ix2(p, p));
    let mut report = TrainReport::default();

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let before = params.clone();
        let mut recon = 0.0;
        let mut grad_norm = 0.0;
        let batches = epoch_batches(rows.nrows(), config.batch_size, &mut shuffle_rng);
        for batch_idx in &batches {
            let batch = rows.select(Axis(0), batch_idx);
            let (positive, pos_lateral) = bm_positive_stats(&params, batch.view(), options.clamped_sweeps, &mut clamped_rng)?;
            let chains = bm_negative_chains(&params, batch.view(), config.cd_steps, &mut chain_rng)?;
            let negative = stats_from_chains(d, p, &chains);
            let neg_lateral = lateral_from_chains(d, p, &chains);
            recon += batch.rows().into_iter().zip(&chains).map(|(v, c)| squared_error(v, c.v.view())).sum::<f64>();
            let mut grad = cd_gradients(&positive, &negative)?;
            let (dl, dj) = bm_gradients(&pos_lateral, &neg_lateral)?;
            velocity.step(&mut params.base, &grad, config);
            if options.learn_lateral {
                vel_l.step(&mut params.lateral_visible, &dl, config);
                vel_j.step(&mut params.lateral_hidden, &dj, config);
                symmetrize_zero_diag(&mut params.lateral_visible);
                symmetrize_zero_diag(&mut params.lateral_hidden);
                grad.dl = Some(dl);
                grad.dj = Some(dj);
            }
            grad_norm += grad.norm();
        }
        let moved = param_distance(&before.base, &params.base).powi(2)
            + frobenius((&before.lateral_visible - &params.lateral_visible).view()).powi(2)
            + frobenius((&before.lateral_hidden - &params.lateral_hidden).view()).powi(2);
        report.epochs.push(EpochRecord {
            epoch,
            recon_error: recon / rows.nrows() as f64,
            grad_norm: grad_norm / batches.len() as f64,
            loglik: if config.track_loglik { oracle::bm_exact_loglik(&params, dataset).ok() } else { None },
            seconds: started.elapsed().as_secs_f64(),
        });
        if moved.sqrt() < config.convergence_tol {
            break;
        }
    }
    Ok((params, report))
}
