//! Gibbs samplers.
//!
//! RBMs use the block form: every hidden unit is drawn given the whole visible
//! layer, then every visible unit given the whole hidden layer. Boltzmann
//! machines with lateral links have no such factorization and fall back to a
//! sequential single-site scan in ascending index order, visible layer first.

use ndarray::{Array1, ArrayView1};
use rand::Rng;

use crate::model::{BmParams, Dataset, Error, RbmParams, Result, UnitFamily};
use crate::units::{self, sample_binary, sigmoid};

pub const DEFAULT_BURN_IN: usize = 100;
pub const DEFAULT_THIN: usize = 1;

/// State of a chain after `sweep` full sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainState {
    pub v: Array1<f64>,
    pub h: Array1<f64>,
    pub sweep: usize,
}

pub fn sample_hidden(params: &RbmParams, v: ArrayView1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let mean = units::cond_mean_hidden_unchecked(params, v);
    units::sample_units(params.hidden_family, mean.view(), rng)
}

pub fn sample_visible(params: &RbmParams, h: ArrayView1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    let mean = units::cond_mean_visible_unchecked(params, h);
    units::sample_units(params.visible_family, mean.view(), rng)
}

/// One block sweep: `h ~ P(h | v)`, then `v_next ~ P(v | h)`.
pub fn gibbs_sweep_rbm(
    params: &RbmParams,
    v: ArrayView1<f64>,
    rng: &mut impl Rng,
) -> Result<(Array1<f64>, Array1<f64>)> {
    params.check_visible(v)?;
    Ok(sweep_unchecked(params, v, rng))
}

fn sweep_unchecked(params: &RbmParams, v: ArrayView1<f64>, rng: &mut impl Rng) -> (Array1<f64>, Array1<f64>) {
    let h = sample_hidden(params, v, rng);
    let v_next = sample_visible(params, h.view(), rng);
    (h, v_next)
}

/// Runs `k_sweeps` block sweeps from `v0`. The returned hidden state is the
/// one sampled in the last sweep, paired with the visible state drawn from it.
pub fn gibbs_chain(
    params: &RbmParams,
    v0: ArrayView1<f64>,
    k_sweeps: usize,
    rng: &mut impl Rng,
) -> Result<ChainState> {
    if k_sweeps == 0 {
        return Err(Error::Config("a chain needs at least one sweep".into()));
    }
    params.check_visible(v0)?;
    Ok(chain_unchecked(params, v0, k_sweeps, rng))
}

pub(crate) fn chain_unchecked(
    params: &RbmParams,
    v0: ArrayView1<f64>,
    k_sweeps: usize,
    rng: &mut impl Rng,
) -> ChainState {
    let (mut h, mut v) = sweep_unchecked(params, v0, rng);
    for _ in 1..k_sweeps {
        let (h_next, v_next) = sweep_unchecked(params, v.view(), rng);
        h = h_next;
        v = v_next;
    }
    ChainState { v, h, sweep: k_sweeps }
}

fn require_binary_bm(params: &BmParams) -> Result<()> {
    let base = &params.base;
    if base.visible_family != UnitFamily::Binary || base.hidden_family != UnitFamily::Binary {
        return Err(Error::UnsupportedFamily(format!(
            "Boltzmann machine sampling supports binary units only, got {}/{}",
            base.visible_family, base.hidden_family
        )));
    }
    Ok(())
}

/// `P(v_i = 1 | rest) = sigmoid(b_i + W_i: h + 2 L_i: v)`, using `l_ii = 0`.
fn visible_site_prob(params: &BmParams, v: &Array1<f64>, h: &Array1<f64>, i: usize) -> f64 {
    let base = &params.base;
    let pre = base.visible_bias[i] + base.weights.row(i).dot(h) + 2.0 * params.lateral_visible.row(i).dot(v);
    sigmoid(pre)
}

fn hidden_site_prob(params: &BmParams, v: &Array1<f64>, h: &Array1<f64>, j: usize) -> f64 {
    let base = &params.base;
    let pre = base.hidden_bias[j] + base.weights.column(j).dot(v) + 2.0 * params.lateral_hidden.row(j).dot(h);
    sigmoid(pre)
}

/// Resamples every hidden unit in ascending order with the visible layer clamped.
pub(crate) fn clamped_hidden_scan(params: &BmParams, v: &Array1<f64>, h: &mut Array1<f64>, rng: &mut impl Rng) {
    for j in 0..h.len() {
        let prob = hidden_site_prob(params, v, h, j);
        h[j] = sample_binary(prob, rng);
    }
}

/// One sequential scan over all visible then all hidden units of a binary BM.
pub fn gibbs_sweep_bm(
    params: &BmParams,
    v: ArrayView1<f64>,
    h: ArrayView1<f64>,
    rng: &mut impl Rng,
) -> Result<(Array1<f64>, Array1<f64>)> {
    require_binary_bm(params)?;
    params.base.check_visible(v)?;
    params.base.check_hidden(h)?;
    let mut v = v.to_owned();
    let mut h = h.to_owned();
    bm_sweep_in_place(params, &mut v, &mut h, rng);
    Ok((v, h))
}

pub(crate) fn bm_sweep_in_place(params: &BmParams, v: &mut Array1<f64>, h: &mut Array1<f64>, rng: &mut impl Rng) {
    for i in 0..v.len() {
        let prob = visible_site_prob(params, v, h, i);
        v[i] = sample_binary(prob, rng);
    }
    clamped_hidden_scan(params, v, h, rng);
}

/// Random starting point for a visible layer: fair coins for binary units,
/// zeros otherwise.
pub fn initial_visible(family: UnitFamily, d: usize, rng: &mut impl Rng) -> Array1<f64> {
    match family {
        UnitFamily::Binary => Array1::from_shape_simple_fn(d, || sample_binary(0.5, rng)),
        UnitFamily::Gaussian | UnitFamily::Poisson => Array1::zeros(d),
    }
}

fn check_schedule(thin: usize) -> Result<()> {
    if thin == 0 {
        return Err(Error::Config("thinning interval must be at least 1".into()));
    }
    Ok(())
}

/// Draws visible samples from one persistent chain: `burn_in` sweeps are
/// discarded, then every `thin`-th visible state is kept.
pub fn generate(
    params: &RbmParams,
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    check_schedule(thin)?;
    params.validate()?;
    let d = params.d();
    if n_samples == 0 {
        return Ok(Dataset::empty(d, params.visible_family));
    }
    let mut v = initial_visible(params.visible_family, d, rng);
    for _ in 0..burn_in {
        v = sweep_unchecked(params, v.view(), rng).1;
    }
    let mut rows = ndarray::Array2::zeros((n_samples, d));
    for mut out in rows.rows_mut() {
        for _ in 0..thin {
            v = sweep_unchecked(params, v.view(), rng).1;
        }
        out.assign(&v);
    }
    Dataset::new(rows, params.visible_family)
}

/// [`generate`] for a binary Boltzmann machine using single-site sweeps.
pub fn generate_bm(
    params: &BmParams,
    n_samples: usize,
    burn_in: usize,
    thin: usize,
    rng: &mut impl Rng,
) -> Result<Dataset> {
    check_schedule(thin)?;
    require_binary_bm(params)?;
    params.validate()?;
    let (d, p) = (params.base.d(), params.base.p());
    if n_samples == 0 {
        return Ok(Dataset::empty(d, UnitFamily::Binary));
    }
    let mut v = initial_visible(UnitFamily::Binary, d, rng);
    let mut h = Array1::zeros(p);
    for _ in 0..burn_in {
        bm_sweep_in_place(params, &mut v, &mut h, rng);
    }
    let mut rows = ndarray::Array2::zeros((n_samples, d));
    for mut out in rows.rows_mut() {
        for _ in 0..thin {
            bm_sweep_in_place(params, &mut v, &mut h, rng);
        }
        out.assign(&v);
    }
    Dataset::new(rows, UnitFamily::Binary)
}
