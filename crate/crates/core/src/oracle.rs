//! Exact answers by brute-force enumeration.
//!
//! Everything here sums over the full configuration space, in log space, and
//! never uses the factorized conditionals from [`crate::units`]. That keeps
//! it usable as an independent reference for the samplers and trainers.
//!
//! Configurations are indexed by integers: bit `k` of the index is the value
//! of unit `k`. Joint tables use index `v_index + (h_index << d)`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::model::{BmParams, Dataset, Error, RbmParams, Result, UnitFamily};
use crate::trainer::GradientSet;

/// Largest `d + p` (or site count) the oracle will enumerate.
pub const ENUMERATION_CAP: usize = 24;

/// Thermodynamic summary of a Boltzmann distribution at inverse temperature `beta`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThermoReport {
    pub beta: f64,
    pub log_z: f64,
    pub z: f64,
    /// `-(1/beta) ln Z`; undefined at `beta = 0`.
    pub free_energy: Option<f64>,
    pub internal_energy: f64,
    pub entropy: f64,
}

/// Pairwise spin system with Hamiltonian `-sum J_ij x_i x_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct IsingModel {
    num_sites: usize,
    couplings: Vec<(usize, usize, f64)>,
}

impl IsingModel {
    pub fn new(num_sites: usize, couplings: Vec<(usize, usize, f64)>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for &(i, j, coupling) in &couplings {
            if i == j {
                return Err(Error::Invariant(format!("self-coupling at site {i}")));
            }
            if i >= num_sites || j >= num_sites {
                return Err(Error::Dimension(format!("coupling ({i},{j}) outside {num_sites} sites")));
            }
            if !seen.insert((i.min(j), i.max(j))) {
                return Err(Error::Invariant(format!("pair ({i},{j}) declared twice")));
            }
            if !coupling.is_finite() {
                return Err(Error::Invariant(format!("coupling ({i},{j}) is not finite")));
            }
        }
        Ok(Self { num_sites, couplings })
    }

    /// Every pair coupled with the same strength.
    pub fn homogeneous(num_sites: usize, coupling: f64) -> Self {
        let couplings = (0..num_sites)
            .flat_map(|i| ((i + 1)..num_sites).map(move |j| (i, j, coupling)))
            .collect();
        Self { num_sites, couplings }
    }

    pub fn num_sites(&self) -> usize {
        self.num_sites
    }

    pub fn couplings(&self) -> &[(usize, usize, f64)] {
        &self.couplings
    }

    /// Energies of all `2^n` spin configurations; bit `k` set means spin `k` is +1.
    pub fn energy_table(&self) -> Result<Vec<f64>> {
        check_cap(self.num_sites)?;
        Ok((0..1usize << self.num_sites)
            .map(|index| {
                let spins = spin_config(index, self.num_sites);
                self.energy_unchecked(&spins)
            })
            .collect())
    }

    fn energy_unchecked(&self, spins: &[f64]) -> f64 {
        -self.couplings.iter().map(|&(i, j, c)| c * spins[i] * spins[j]).sum::<f64>()
    }
}

/// Spins in {-1, +1} decoded from the bits of `index`.
pub fn spin_config(index: usize, n: usize) -> Vec<f64> {
    (0..n).map(|k| if (index >> k) & 1 == 1 { 1.0 } else { -1.0 }).collect()
}

/// Units in {0, 1} decoded from the bits of `index`.
pub fn binary_config(index: usize, n: usize) -> Array1<f64> {
    Array1::from_shape_fn(n, |k| ((index >> k) & 1) as f64)
}

/// Inverse of [`binary_config`]; `None` if any entry is not 0 or 1.
pub fn config_index(x: ArrayView1<f64>) -> Option<usize> {
    x.iter().enumerate().try_fold(0usize, |acc, (k, &value)| {
        if value == 1.0 {
            Some(acc | (1 << k))
        } else if value == 0.0 {
            Some(acc)
        } else {
            None
        }
    })
}

pub fn ising_energy(model: &IsingModel, spins: &[f64]) -> Result<f64> {
    if spins.len() != model.num_sites {
        return Err(Error::Dimension(format!("{} spins for {} sites", spins.len(), model.num_sites)));
    }
    if let Some(k) = spins.iter().position(|&s| s != 1.0 && s != -1.0) {
        return Err(Error::Domain(format!("spin {k} = {} is not +1 or -1", spins[k])));
    }
    Ok(model.energy_unchecked(spins))
}

pub fn log_sum_exp(xs: impl IntoIterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Partition function, free energy, internal energy and entropy of the
/// distribution `P(x) ∝ exp(-beta E(x))` over the given energy table.
pub fn boltzmann_quantities(energies: &[f64], beta: f64) -> Result<ThermoReport> {
    if energies.is_empty() {
        return Err(Error::Dimension("energy table has no states".into()));
    }
    if !(beta.is_finite() && beta >= 0.0) {
        return Err(Error::Config(format!("beta must be non-negative, got {beta}")));
    }
    if let Some(e) = energies.iter().find(|e| !e.is_finite()) {
        return Err(Error::Invariant(format!("non-finite energy {e}")));
    }
    let log_weights: Vec<f64> = energies.iter().map(|e| -beta * e).collect();
    let log_z = log_sum_exp(log_weights.iter().copied());
    let mut internal_energy = 0.0;
    let mut entropy = 0.0;
    for (&lw, &e) in log_weights.iter().zip(energies) {
        let log_prob = lw - log_z;
        let prob = log_prob.exp();
        internal_energy += prob * e;
        entropy -= prob * log_prob;
    }
    let free_energy = (beta > 0.0).then(|| -log_z / beta);
    Ok(ThermoReport { beta, log_z, z: log_z.exp(), free_energy, internal_energy, entropy })
}

fn check_cap(bits: usize) -> Result<()> {
    if bits > ENUMERATION_CAP {
        return Err(Error::Capacity { bits, cap: ENUMERATION_CAP });
    }
    Ok(())
}

fn require_binary(params: &RbmParams) -> Result<()> {
    if params.visible_family != UnitFamily::Binary || params.hidden_family != UnitFamily::Binary {
        return Err(Error::UnsupportedFamily(format!(
            "enumeration needs binary units, model is {}/{}",
            params.visible_family, params.hidden_family
        )));
    }
    check_cap(params.d() + params.p())
}

/// `-E(v, h)` for every configuration, shape `(2^d, 2^p)`, summed term by term.
fn neg_energy_grid(params: &RbmParams, lateral: Option<(&Array2<f64>, &Array2<f64>)>) -> Array2<f64> {
    let (d, p) = (params.d(), params.p());
    let mut grid = Array2::zeros((1 << d, 1 << p));
    for vi in 0..1usize << d {
        for hi in 0..1usize << p {
            let mut acc = 0.0;
            for i in (0..d).filter(|i| (vi >> i) & 1 == 1) {
                acc += params.visible_bias[i];
                for j in (0..p).filter(|j| (hi >> j) & 1 == 1) {
                    acc += params.weights[[i, j]];
                }
            }
            for j in (0..p).filter(|j| (hi >> j) & 1 == 1) {
                acc += params.hidden_bias[j];
            }
            if let Some((l, jm)) = lateral {
                for a in (0..d).filter(|a| (vi >> a) & 1 == 1) {
                    for b in (0..d).filter(|b| (vi >> b) & 1 == 1) {
                        acc += l[[a, b]];
                    }
                }
                for a in (0..p).filter(|a| (hi >> a) & 1 == 1) {
                    for b in (0..p).filter(|b| (hi >> b) & 1 == 1) {
                        acc += jm[[a, b]];
                    }
                }
            }
            grid[[vi, hi]] = acc;
        }
    }
    grid
}

fn rbm_grid(params: &RbmParams) -> Result<Array2<f64>> {
    require_binary(params)?;
    Ok(neg_energy_grid(params, None))
}

fn bm_grid(params: &BmParams) -> Result<Array2<f64>> {
    params.validate()?;
    require_binary(&params.base)?;
    Ok(neg_energy_grid(&params.base, Some((&params.lateral_visible, &params.lateral_hidden))))
}

fn visible_index(params: &RbmParams, v: ArrayView1<f64>) -> Result<usize> {
    params.check_visible(v)?;
    config_index(v).ok_or_else(|| Error::Domain(format!("visible vector {v} is not binary")))
}

/// Exact Boltzmann distribution over a `(2^d, 2^p)` grid of negative energies.
struct Enumerated {
    grid: Array2<f64>,
    log_z: f64,
    /// `log sum_h exp(-E(v, h))` for every visible configuration.
    log_v: Array1<f64>,
    d: usize,
    p: usize,
}

impl Enumerated {
    fn new(grid: Array2<f64>, d: usize, p: usize) -> Self {
        let log_v = Array1::from_iter(grid.rows().into_iter().map(|row| log_sum_exp(row.iter().copied())));
        let log_z = log_sum_exp(log_v.iter().copied());
        Self { grid, log_z, log_v, d, p }
    }

    fn joint(&self, vi: usize, hi: usize) -> f64 {
        (self.grid[[vi, hi]] - self.log_z).exp()
    }

    fn cond_hidden(&self, vi: usize) -> Vec<f64> {
        self.grid.row(vi).iter().map(|&ne| (ne - self.log_v[vi]).exp()).collect()
    }

    fn loglik(&self, indices: &[usize], weights: &[f64]) -> f64 {
        let n: f64 = weights.iter().sum();
        indices.iter().zip(weights).map(|(&vi, &w)| w * self.log_v[vi]).sum::<f64>() - n * self.log_z
    }

    /// Conditional moments `E[h | v]` and `E[h h^T | v]`.
    fn hidden_moments(&self, vi: usize) -> (Array1<f64>, Array2<f64>) {
        let mut mean = Array1::zeros(self.p);
        let mut second = Array2::zeros((self.p, self.p));
        for (hi, prob) in self.cond_hidden(vi).into_iter().enumerate() {
            let h = binary_config(hi, self.p);
            mean.scaled_add(prob, &h);
            add_outer(&mut second, prob, h.view(), h.view());
        }
        (mean, second)
    }

    fn joint_moments(&self) -> JointMoments {
        let (d, p) = (self.d, self.p);
        let mut m = JointMoments {
            vh: Array2::zeros((d, p)),
            v: Array1::zeros(d),
            h: Array1::zeros(p),
            vv: Array2::zeros((d, d)),
            hh: Array2::zeros((p, p)),
        };
        for vi in 0..1usize << d {
            let v = binary_config(vi, d);
            for hi in 0..1usize << p {
                let prob = self.joint(vi, hi);
                let h = binary_config(hi, p);
                add_outer(&mut m.vh, prob, v.view(), h.view());
                add_outer(&mut m.vv, prob, v.view(), v.view());
                add_outer(&mut m.hh, prob, h.view(), h.view());
                m.v.scaled_add(prob, &v);
                m.h.scaled_add(prob, &h);
            }
        }
        m
    }
}

fn add_outer(acc: &mut Array2<f64>, scale: f64, a: ArrayView1<f64>, b: ArrayView1<f64>) {
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            acc[[i, j]] += scale * x * y;
        }
    }
}

/// Moments of the model's joint distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMoments {
    /// `E[v h^T]`
    pub vh: Array2<f64>,
    pub v: Array1<f64>,
    pub h: Array1<f64>,
    /// `E[v v^T]`
    pub vv: Array2<f64>,
    /// `E[h h^T]`
    pub hh: Array2<f64>,
}

pub fn rbm_log_partition(params: &RbmParams) -> Result<f64> {
    Ok(log_sum_exp(rbm_grid(params)?.iter().copied()))
}

/// Sum of `exp(-E(v, h))` over all `2^(d+p)` configurations.
pub fn rbm_partition(params: &RbmParams) -> Result<f64> {
    rbm_log_partition(params).map(f64::exp)
}

pub fn exact_joint(params: &RbmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
    let grid = rbm_grid(params)?;
    let vi = visible_index(params, v)?;
    params.check_hidden(h)?;
    let hi = config_index(h).ok_or_else(|| Error::Domain(format!("hidden vector {h} is not binary")))?;
    let log_z = log_sum_exp(grid.iter().copied());
    Ok((grid[[vi, hi]] - log_z).exp())
}

pub fn exact_marginal_visible(params: &RbmParams, v: ArrayView1<f64>) -> Result<f64> {
    let vi = visible_index(params, v)?;
    Ok(marginal_visible_table(params)?[vi])
}

/// `P(h | v)` for every hidden configuration. `v` may be any real vector.
pub fn exact_cond_hidden(params: &RbmParams, v: ArrayView1<f64>) -> Result<Vec<f64>> {
    require_binary(params)?;
    params.check_visible(v)?;
    let p = params.p();
    let log_weights: Vec<f64> = (0..1usize << p)
        .map(|hi| {
            let h = binary_config(hi, p);
            -crate::model::energy_unchecked(params, v, h.view())
        })
        .collect();
    let log_norm = log_sum_exp(log_weights.iter().copied());
    Ok(log_weights.iter().map(|lw| (lw - log_norm).exp()).collect())
}

/// Full joint table indexed by `v_index + (h_index << d)`.
pub fn joint_table(params: &RbmParams) -> Result<Vec<f64>> {
    let e = Enumerated::new(rbm_grid(params)?, params.d(), params.p());
    Ok(grid_to_joint(&e))
}

/// `P(v)` for every visible configuration.
pub fn marginal_visible_table(params: &RbmParams) -> Result<Vec<f64>> {
    let e = Enumerated::new(rbm_grid(params)?, params.d(), params.p());
    Ok(e.log_v.iter().map(|lv| (lv - e.log_z).exp()).collect())
}

fn grid_to_joint(e: &Enumerated) -> Vec<f64> {
    let mut table = vec![0.0; 1 << (e.d + e.p)];
    for vi in 0..1usize << e.d {
        for hi in 0..1usize << e.p {
            table[vi + (hi << e.d)] = e.joint(vi, hi);
        }
    }
    table
}

pub fn joint_moments(params: &RbmParams) -> Result<JointMoments> {
    Ok(Enumerated::new(rbm_grid(params)?, params.d(), params.p()).joint_moments())
}

fn dataset_indices(params: &RbmParams, rows: ArrayView2<f64>) -> Result<Vec<usize>> {
    rows.rows().into_iter().map(|row| visible_index(params, row)).collect()
}

/// `sum_i log P(v_i)`.
pub fn exact_loglik(params: &RbmParams, dataset: &Dataset) -> Result<f64> {
    let weights = vec![1.0; dataset.n()];
    exact_loglik_weighted(params, dataset.rows(), &weights)
}

/// Log-likelihood of rows carrying non-negative multiplicities.
pub fn exact_loglik_weighted(params: &RbmParams, rows: ArrayView2<f64>, weights: &[f64]) -> Result<f64> {
    check_weights(rows, weights)?;
    let e = Enumerated::new(rbm_grid(params)?, params.d(), params.p());
    Ok(e.loglik(&dataset_indices(params, rows)?, weights))
}

/// Exact gradient of [`exact_loglik`] with respect to `W`, `b` and `c`.
pub fn exact_loglik_grad(params: &RbmParams, dataset: &Dataset) -> Result<GradientSet> {
    let weights = vec![1.0; dataset.n()];
    exact_loglik_grad_weighted(params, dataset.rows(), &weights)
}

pub fn exact_loglik_grad_weighted(
    params: &RbmParams,
    rows: ArrayView2<f64>,
    weights: &[f64],
) -> Result<GradientSet> {
    check_weights(rows, weights)?;
    let (d, p) = (params.d(), params.p());
    let e = Enumerated::new(rbm_grid(params)?, d, p);
    let indices = dataset_indices(params, rows)?;
    let n: f64 = weights.iter().sum();

    let mut grad = GradientSet::zeros(d, p);
    for (&vi, &w) in indices.iter().zip(weights) {
        let v = binary_config(vi, d);
        let (h_mean, _) = e.hidden_moments(vi);
        add_outer(&mut grad.dw, w, v.view(), h_mean.view());
        grad.db.scaled_add(w, &v);
        grad.dc.scaled_add(w, &h_mean);
    }
    let m = e.joint_moments();
    grad.dw.scaled_add(-n, &m.vh);
    grad.db.scaled_add(-n, &m.v);
    grad.dc.scaled_add(-n, &m.h);
    Ok(grad)
}

fn check_weights(rows: ArrayView2<f64>, weights: &[f64]) -> Result<()> {
    if rows.nrows() != weights.len() {
        return Err(Error::Dimension(format!("{} rows but {} weights", rows.nrows(), weights.len())));
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::Domain("row weights must be finite and non-negative".into()));
    }
    Ok(())
}

pub fn bm_log_partition(params: &BmParams) -> Result<f64> {
    Ok(log_sum_exp(bm_grid(params)?.iter().copied()))
}

/// Joint table of the full Boltzmann machine, indexed like [`joint_table`].
pub fn bm_joint_table(params: &BmParams) -> Result<Vec<f64>> {
    let e = Enumerated::new(bm_grid(params)?, params.base.d(), params.base.p());
    Ok(grid_to_joint(&e))
}

pub fn bm_marginal_visible_table(params: &BmParams) -> Result<Vec<f64>> {
    let e = Enumerated::new(bm_grid(params)?, params.base.d(), params.base.p());
    Ok(e.log_v.iter().map(|lv| (lv - e.log_z).exp()).collect())
}

pub fn bm_joint_moments(params: &BmParams) -> Result<JointMoments> {
    Ok(Enumerated::new(bm_grid(params)?, params.base.d(), params.base.p()).joint_moments())
}

pub fn bm_exact_loglik(params: &BmParams, dataset: &Dataset) -> Result<f64> {
    let e = Enumerated::new(bm_grid(params)?, params.base.d(), params.base.p());
    let indices = dataset_indices(&params.base, dataset.rows())?;
    Ok(e.loglik(&indices, &vec![1.0; indices.len()]))
}

/// Exact log-likelihood gradient of a Boltzmann machine, lateral terms included.
/// Lateral gradients treat every off-diagonal entry as its own parameter and
/// have zero diagonals.
pub fn bm_exact_loglik_grad(params: &BmParams, dataset: &Dataset) -> Result<GradientSet> {
    let (d, p) = (params.base.d(), params.base.p());
    let e = Enumerated::new(bm_grid(params)?, d, p);
    let indices = dataset_indices(&params.base, dataset.rows())?;
    let n = indices.len() as f64;

    let mut grad = GradientSet::zeros(d, p);
    let mut dl = Array2::zeros((d, d));
    let mut dj = Array2::zeros((p, p));
    for &vi in &indices {
        let v = binary_config(vi, d);
        let (h_mean, hh) = e.hidden_moments(vi);
        add_outer(&mut grad.dw, 1.0, v.view(), h_mean.view());
        add_outer(&mut dl, 1.0, v.view(), v.view());
        grad.db += &v;
        grad.dc += &h_mean;
        dj += &hh;
    }
    let m = e.joint_moments();
    grad.dw.scaled_add(-n, &m.vh);
    grad.db.scaled_add(-n, &m.v);
    grad.dc.scaled_add(-n, &m.h);
    dl.scaled_add(-n, &m.vv);
    dj.scaled_add(-n, &m.hh);
    dl.diag_mut().fill(0.0);
    dj.diag_mut().fill(0.0);
    grad.dl = Some(dl);
    grad.dj = Some(dj);
    Ok(grad)
}

/// Total-variation distance between two distributions on the same index set.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
