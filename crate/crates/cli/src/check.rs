use boltzmann::oracle::{self, binary_config};
use boltzmann::{bm_energy, units, BmParams, Dataset, RbmParams, Result};
use ndarray::{Array1, Array2};
use serde::Serialize;

pub const PROB_TOL: f64 = 1e-10;
pub const FD_EPS: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;
const BETAS: [f64; 3] = [0.1, 1.0, 10.0];

#[derive(Debug, Clone, Serialize)]
pub struct CheckRecord {
    pub check: String,
    pub passed: bool,
    pub max_error: f64,
    pub tolerance: f64,
}

fn record(check: &str, max_error: f64, tolerance: f64) -> CheckRecord {
    CheckRecord { check: check.into(), passed: max_error <= tolerance, max_error, tolerance }
}

fn max_abs_diff(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Every visible configuration, used when no data is given.
pub fn all_visible(d: usize) -> Array2<f64> {
    let mut rows = Array2::zeros((1 << d, d));
    for (i, mut row) in rows.rows_mut().into_iter().enumerate() {
        row.assign(&binary_config(i, d));
    }
    rows
}

fn normalization(joint: &[f64], marginal: &[f64], d: usize) -> CheckRecord {
    let total_err = (joint.iter().sum::<f64>() - 1.0).abs();
    let mut summed = vec![0.0; marginal.len()];
    for (idx, p) in joint.iter().enumerate() {
        summed[idx & ((1 << d) - 1)] += p;
    }
    let err = max_abs_diff(summed, marginal.iter().copied()).max(total_err).max((marginal.iter().sum::<f64>() - 1.0).abs());
    record("normalization", err, PROB_TOL)
}

fn thermodynamics(energies: &[f64]) -> Result<CheckRecord> {
    let mut err: f64 = 0.0;
    for beta in BETAS {
        let t = oracle::boltzmann_quantities(energies, beta)?;
        let f = t.free_energy.expect("beta is positive");
        err = err.max((t.entropy - (-beta * f + beta * t.internal_energy)).abs());
    }
    Ok(record("thermodynamic_identity", err, PROB_TOL))
}

/// Conditionals from the factorized formulas against conditionals read off
/// the enumerated joint, in both directions.
fn factorization(params: &RbmParams, joint: &[f64]) -> Result<CheckRecord> {
    let (d, p) = (params.d(), params.p());
    let mut err: f64 = 0.0;
    for vi in 0..1usize << d {
        let v = binary_config(vi, d);
        let formula = units::cond_mean_hidden(params, v.view())?;
        let mut num = Array1::<f64>::zeros(p);
        let mut den = 0.0;
        for hi in 0..1usize << p {
            let w = joint[vi + (hi << d)];
            num.scaled_add(w, &binary_config(hi, p));
            den += w;
        }
        if den > 0.0 {
            err = err.max(max_abs_diff(formula.iter().copied(), (num / den).iter().copied()));
        }
    }
    for hi in 0..1usize << p {
        let h = binary_config(hi, p);
        let formula = units::cond_mean_visible(params, h.view())?;
        let mut num = Array1::<f64>::zeros(d);
        let mut den = 0.0;
        for vi in 0..1usize << d {
            let w = joint[vi + (hi << d)];
            num.scaled_add(w, &binary_config(vi, d));
            den += w;
        }
        if den > 0.0 {
            err = err.max(max_abs_diff(formula.iter().copied(), (num / den).iter().copied()));
        }
    }
    Ok(record("factorization", err, PROB_TOL))
}

fn fd_error(analytic: f64, plus: f64, minus: f64) -> f64 {
    ((plus - minus) / (2.0 * FD_EPS) - analytic).abs()
}

fn rbm_gradient(params: &RbmParams, data: &Dataset) -> Result<CheckRecord> {
    let n = data.n() as f64;
    let grad = oracle::exact_loglik_grad(params, data)?.scaled(1.0 / n);
    let ll = |q: &RbmParams| oracle::exact_loglik(q, data).map(|x| x / n);
    let mut err: f64 = 0.0;
    let mut q = params.clone();
    for ((i, j), &g) in grad.dw.indexed_iter() {
        let orig = q.weights[[i, j]];
        q.weights[[i, j]] = orig + FD_EPS;
        let plus = ll(&q)?;
        q.weights[[i, j]] = orig - FD_EPS;
        let minus = ll(&q)?;
        q.weights[[i, j]] = orig;
        err = err.max(fd_error(g, plus, minus));
    }
    for (i, &g) in grad.db.indexed_iter() {
        let orig = q.visible_bias[i];
        q.visible_bias[i] = orig + FD_EPS;
        let plus = ll(&q)?;
        q.visible_bias[i] = orig - FD_EPS;
        let minus = ll(&q)?;
        q.visible_bias[i] = orig;
        err = err.max(fd_error(g, plus, minus));
    }
    for (j, &g) in grad.dc.indexed_iter() {
        let orig = q.hidden_bias[j];
        q.hidden_bias[j] = orig + FD_EPS;
        let plus = ll(&q)?;
        q.hidden_bias[j] = orig - FD_EPS;
        let minus = ll(&q)?;
        q.hidden_bias[j] = orig;
        err = err.max(fd_error(g, plus, minus));
    }
    Ok(record("gradient_finite_difference", err, FD_TOL))
}

pub fn check_rbm(params: &RbmParams, data: &Dataset) -> Result<Vec<CheckRecord>> {
    let joint = oracle::joint_table(params)?;
    let marginal = oracle::marginal_visible_table(params)?;
    let (d, p) = (params.d(), params.p());
    let energies: Vec<f64> = (0..joint.len())
        .map(|idx| boltzmann::energy(params, binary_config(idx & ((1 << d) - 1), d).view(), binary_config(idx >> d, p).view()))
        .collect::<Result<_>>()?;
    Ok(vec![
        normalization(&joint, &marginal, d),
        factorization(params, &joint)?,
        thermodynamics(&energies)?,
        rbm_gradient(params, data)?,
    ])
}

/// Symmetric perturbation of a lateral entry moves the log-likelihood by
/// twice the reported gradient entry.
fn bm_gradient(params: &BmParams, data: &Dataset) -> Result<CheckRecord> {
    let n = data.n() as f64;
    let grad = oracle::bm_exact_loglik_grad(params, data)?.scaled(1.0 / n);
    let ll = |q: &BmParams| oracle::bm_exact_loglik(q, data).map(|x| x / n);
    let mut err: f64 = 0.0;
    let mut probe = |set: &dyn Fn(&mut BmParams, f64), g: f64| -> Result<()> {
        let shifted = |e: f64| {
            let mut q = params.clone();
            set(&mut q, e);
            ll(&q)
        };
        err = err.max(fd_error(g, shifted(FD_EPS)?, shifted(-FD_EPS)?));
        Ok(())
    };
    for ((i, j), &g) in grad.dw.indexed_iter() {
        probe(&|q, e| q.base.weights[[i, j]] += e, g)?;
    }
    for (i, &g) in grad.db.indexed_iter() {
        probe(&|q, e| q.base.visible_bias[i] += e, g)?;
    }
    for (j, &g) in grad.dc.indexed_iter() {
        probe(&|q, e| q.base.hidden_bias[j] += e, g)?;
    }
    if let Some(dl) = &grad.dl {
        for ((i, j), &g) in dl.indexed_iter().filter(|((i, j), _)| i < j) {
            probe(
                &|q, e| {
                    q.lateral_visible[[i, j]] += e;
                    q.lateral_visible[[j, i]] += e;
                },
                2.0 * g,
            )?;
        }
    }
    if let Some(dj) = &grad.dj {
        for ((i, j), &g) in dj.indexed_iter().filter(|((i, j), _)| i < j) {
            probe(
                &|q, e| {
                    q.lateral_hidden[[i, j]] += e;
                    q.lateral_hidden[[j, i]] += e;
                },
                2.0 * g,
            )?;
        }
    }
    Ok(record("gradient_finite_difference", err, FD_TOL))
}

pub fn check_bm(params: &BmParams, data: &Dataset) -> Result<Vec<CheckRecord>> {
    let joint = oracle::bm_joint_table(params)?;
    let marginal = oracle::bm_marginal_visible_table(params)?;
    let (d, p) = (params.base.d(), params.base.p());
    let energies: Vec<f64> = (0..joint.len())
        .map(|idx| bm_energy(params, binary_config(idx & ((1 << d) - 1), d).view(), binary_config(idx >> d, p).view()))
        .collect::<Result<_>>()?;
    let mut records = vec![normalization(&joint, &marginal, d)];
    if !params.has_lateral_links() {
        records.push(factorization(&params.base, &joint)?);
    }
    records.push(thermodynamics(&energies)?);
    records.push(bm_gradient(params, data)?);
    Ok(records)
}
