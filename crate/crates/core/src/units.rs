//! Conditional distributions of each unit family.
//!
//! Both directions share one shape: an affine pre-activation followed by a
//! family-specific link to the conditional mean. Binary units use the
//! logistic sigmoid, Gaussian units use the pre-activation itself with unit
//! variance, Poisson units use a softmax across the layer (optionally scaled
//! by `poisson_total_count`).

use ndarray::{Array1, ArrayView1};
use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::model::{RbmParams, Result, UnitFamily};

/// Rates below this are treated as exactly zero when sampling Poisson units.
pub const MIN_POISSON_RATE: f64 = 1e-300;

/// `c + W^T v`
pub fn hidden_pre_activation(params: &RbmParams, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    params.check_visible(v)?;
    Ok(hidden_pre_activation_unchecked(params, v))
}

/// `b + W h`
pub fn visible_pre_activation(params: &RbmParams, h: ArrayView1<f64>) -> Result<Array1<f64>> {
    params.check_hidden(h)?;
    Ok(visible_pre_activation_unchecked(params, h))
}

pub(crate) fn hidden_pre_activation_unchecked(params: &RbmParams, v: ArrayView1<f64>) -> Array1<f64> {
    &params.hidden_bias + &params.weights.t().dot(&v)
}

pub(crate) fn visible_pre_activation_unchecked(params: &RbmParams, h: ArrayView1<f64>) -> Array1<f64> {
    &params.visible_bias + &params.weights.dot(&h)
}

/// Logistic function in the two-branch form that only exponentiates
/// non-positive arguments.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Elementwise `P(unit = 1)` for binary units.
pub fn binary_cond_prob(pre_activation: ArrayView1<f64>) -> Array1<f64> {
    pre_activation.mapv(sigmoid)
}

/// Mean of the unit-variance normal conditional.
pub fn gaussian_cond(pre_activation: ArrayView1<f64>) -> Array1<f64> {
    pre_activation.to_owned()
}

/// Conditional variance of Gaussian units.
pub const GAUSSIAN_VARIANCE: f64 = 1.0;

/// Softmax of the pre-activations, scaled by `total_count`.
pub fn poisson_rates(pre_activation: ArrayView1<f64>, total_count: f64) -> Array1<f64> {
    let max = pre_activation.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps = pre_activation.mapv(|x| (x - max).exp());
    let z = exps.sum();
    exps.mapv(|e| total_count * e / z)
}

/// Poisson rates of the visible units given hidden state `h`.
pub fn poisson_cond_visible(params: &RbmParams, h: ArrayView1<f64>) -> Result<Array1<f64>> {
    let pre = visible_pre_activation(params, h)?;
    Ok(poisson_rates(pre.view(), params.poisson_total_count))
}

/// Poisson rates of the hidden units given visible state `v`.
pub fn poisson_cond_hidden(params: &RbmParams, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let pre = hidden_pre_activation(params, v)?;
    Ok(poisson_rates(pre.view(), params.poisson_total_count))
}

/// Conditional mean of a layer given its pre-activations.
pub fn family_mean(family: UnitFamily, pre_activation: ArrayView1<f64>, total_count: f64) -> Array1<f64> {
    match family {
        UnitFamily::Binary => binary_cond_prob(pre_activation),
        UnitFamily::Gaussian => gaussian_cond(pre_activation),
        UnitFamily::Poisson => poisson_rates(pre_activation, total_count),
    }
}

/// `E[h | v]` for the model's hidden family.
pub fn cond_mean_hidden(params: &RbmParams, v: ArrayView1<f64>) -> Result<Array1<f64>> {
    params.check_visible(v)?;
    Ok(cond_mean_hidden_unchecked(params, v))
}

/// `E[v | h]` for the model's visible family.
pub fn cond_mean_visible(params: &RbmParams, h: ArrayView1<f64>) -> Result<Array1<f64>> {
    params.check_hidden(h)?;
    Ok(cond_mean_visible_unchecked(params, h))
}

pub(crate) fn cond_mean_hidden_unchecked(params: &RbmParams, v: ArrayView1<f64>) -> Array1<f64> {
    let pre = hidden_pre_activation_unchecked(params, v);
    family_mean(params.hidden_family, pre.view(), params.poisson_total_count)
}

pub(crate) fn cond_mean_visible_unchecked(params: &RbmParams, h: ArrayView1<f64>) -> Array1<f64> {
    let pre = visible_pre_activation_unchecked(params, h);
    family_mean(params.visible_family, pre.view(), params.poisson_total_count)
}

/// Draws one binary unit: 1 iff `u <= prob` with `u` uniform on (0, 1].
pub fn sample_binary(prob: f64, rng: &mut impl Rng) -> f64 {
    // 1 - [0, 1) keeps prob = 0 from ever firing.
    let u = 1.0 - rng.random::<f64>();
    if u <= prob {
        1.0
    } else {
        0.0
    }
}

/// Draws a layer given its conditional means (probabilities, normal means or
/// Poisson rates, depending on the family). One RNG draw per unit, in index
/// order.
pub fn sample_units(family: UnitFamily, means: ArrayView1<f64>, rng: &mut impl Rng) -> Array1<f64> {
    match family {
        UnitFamily::Binary => means.mapv(|p| sample_binary(p, rng)),
        UnitFamily::Gaussian => means.mapv(|m| m + rng.sample::<f64, _>(StandardNormal)),
        UnitFamily::Poisson => means.mapv(|rate| sample_poisson(rate, rng)),
    }
}

fn sample_poisson(rate: f64, rng: &mut impl Rng) -> f64 {
    if rate < MIN_POISSON_RATE {
        return 0.0;
    }
    // Poisson::new only fails for non-positive or non-finite rates.
    Poisson::new(rate).map(|dist| dist.sample(rng)).unwrap_or(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, RngStream};
    use crate::oracle;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn random_binary(d: usize, p: usize, seed: u64) -> RbmParams {
        let mut rng = RngStream::new(seed, 0).rng();
        let mut params = init_params(d, p, UnitFamily::Binary, UnitFamily::Binary, 1.0, &mut rng).unwrap();
        params.visible_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        params.hidden_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        params
    }

    fn bits(index: usize, n: usize) -> Array1<f64> {
        Array1::from_shape_fn(n, |k| ((index >> k) & 1) as f64)
    }

    #[test]
    fn pre_activation_examples() {
        let zero = RbmParams::zeros(3, 2);
        assert_eq!(hidden_pre_activation(&zero, array![1.0, 0.0, 1.0].view()).unwrap(), Array1::<f64>::zeros(2));
        let mut params = RbmParams::zeros(2, 2);
        params.weights = Array2::eye(2);
        assert_eq!(hidden_pre_activation(&params, array![1.0, 0.0].view()).unwrap(), array![1.0, 0.0]);
    }

    #[test]
    fn pre_activation_matches_loop() {
        let params = random_binary(4, 3, 2);
        let v = array![0.3, -1.0, 2.0, 0.5];
        let h = array![1.0, -0.5, 0.25];
        let hid = hidden_pre_activation(&params, v.view()).unwrap();
        let vis = visible_pre_activation(&params, h.view()).unwrap();
        for j in 0..3 {
            let mut acc = params.hidden_bias[j];
            for i in 0..4 {
                acc += v[i] * params.weights[[i, j]];
            }
            assert!((hid[j] - acc).abs() < 1e-12);
        }
        for i in 0..4 {
            let mut acc = params.visible_bias[i];
            for j in 0..3 {
                acc += params.weights[[i, j]] * h[j];
            }
            assert!((vis[i] - acc).abs() < 1e-12);
        }
        assert!(hidden_pre_activation(&params, h.view()).is_err());
    }

    #[test]
    fn sigmoid_saturation() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!((sigmoid(40.0) - 1.0).abs() < 1e-12);
        assert!(sigmoid(-40.0) < 1e-12);
        for x in [700.0, -700.0, 1e308, -1e308] {
            assert!(sigmoid(x).is_finite());
        }
    }

    #[test]
    fn sigmoid_matches_enumerated_conditional() {
        let params = random_binary(2, 2, 17);
        for vi in 0..4 {
            let v = bits(vi, 2);
            let pre = hidden_pre_activation(&params, v.view()).unwrap();
            let probs = binary_cond_prob(pre.view());
            let table = oracle::exact_cond_hidden(&params, v.view()).unwrap();
            for j in 0..2 {
                let enumerated: f64 = (0..4).filter(|hi| (hi >> j) & 1 == 1).map(|hi| table[hi]).sum();
                assert!((probs[j] - enumerated).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_mean_and_sampling() {
        let zero = RbmParams::zeros(2, 3);
        let pre = hidden_pre_activation(&zero, array![0.0, 0.0].view()).unwrap();
        assert_eq!(gaussian_cond(pre.view()), Array1::<f64>::zeros(3));
        assert_eq!(GAUSSIAN_VARIANCE, 1.0);

        let mut rng = RngStream::new(4, 0).rng();
        let n = 100_000;
        let means = array![2.0];
        let draws: Vec<f64> = (0..n).map(|_| sample_units(UnitFamily::Gaussian, means.view(), &mut rng)[0]).collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
        assert!((1.99..=2.01).contains(&mean), "mean = {mean}");
        assert!((0.98..=1.02).contains(&var), "var = {var}");
    }

    #[test]
    fn poisson_rates_examples() {
        let mut params = RbmParams::zeros(4, 2);
        params.visible_family = UnitFamily::Poisson;
        let rates = poisson_cond_visible(&params, array![1.0, 0.0].view()).unwrap();
        assert!(rates.iter().all(|&r| r == 0.25));

        let params = random_binary(3, 2, 5);
        let h = array![0.7, -0.2];
        let rates = poisson_cond_visible(&params, h.view()).unwrap();
        assert!((rates.sum() - 1.0).abs() < 1e-12);
        let pre = visible_pre_activation(&params, h.view()).unwrap();
        let denom: f64 = pre.iter().map(|x| x.exp()).sum();
        for i in 0..3 {
            assert!((rates[i] - pre[i].exp() / denom).abs() < 1e-12);
        }
        let hidden = poisson_cond_hidden(&params, array![1.0, 2.0, 0.0].view()).unwrap();
        assert!((hidden.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn poisson_rates_survive_large_inputs() {
        let rates = poisson_rates(array![1000.0, 999.0, -1000.0].view(), 1.0);
        assert!(rates.iter().all(|r| r.is_finite()));
        assert!((rates.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cond_mean_hidden_examples() {
        let zero = RbmParams::zeros(2, 3);
        let v = array![1.0, 0.0];
        assert_eq!(cond_mean_hidden(&zero, v.view()).unwrap(), Array1::<f64>::from_elem(3, 0.5));
        let mut gauss = zero.clone();
        gauss.hidden_family = UnitFamily::Gaussian;
        assert_eq!(cond_mean_hidden(&gauss, v.view()).unwrap(), Array1::<f64>::zeros(3));
        let mut pois = zero;
        pois.hidden_family = UnitFamily::Poisson;
        let m = cond_mean_hidden(&pois, v.view()).unwrap();
        assert!(m.iter().all(|&r| (r - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn cond_mean_hidden_matches_enumeration() {
        let params = random_binary(3, 3, 23);
        for vi in 0..8 {
            let v = bits(vi, 3);
            let mean = cond_mean_hidden(&params, v.view()).unwrap();
            let table = oracle::exact_cond_hidden(&params, v.view()).unwrap();
            let mut expected = Array1::<f64>::zeros(3);
            for (hi, &prob) in table.iter().enumerate() {
                expected.scaled_add(prob, &bits(hi, 3));
            }
            for j in 0..3 {
                assert!((mean[j] - expected[j]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn binary_sampling_extremes_and_frequency() {
        let mut rng = RngStream::new(8, 0).rng();
        for _ in 0..10_000 {
            assert_eq!(sample_binary(1.0, &mut rng), 1.0);
            assert_eq!(sample_binary(0.0, &mut rng), 0.0);
        }
        let n = 100_000;
        let ones: f64 = (0..n).map(|_| sample_binary(0.3, &mut rng)).sum();
        let freq = ones / n as f64;
        assert!((0.29..=0.31).contains(&freq), "freq = {freq}");
    }

    #[test]
    fn poisson_degenerate_rate() {
        let mut rng = RngStream::new(1, 0).rng();
        let draws = sample_units(UnitFamily::Poisson, array![1e-301, 0.0].view(), &mut rng);
        assert_eq!(draws, array![0.0, 0.0]);
    }

    #[test]
    fn cond_means_match_sample_averages() {
        let n = 100_000;
        let cases = [
            (UnitFamily::Binary, array![0.2, 0.7]),
            (UnitFamily::Gaussian, array![-0.5, 1.5]),
            (UnitFamily::Poisson, array![0.3, 2.5]),
        ];
        let mut rng = RngStream::new(12, 0).rng();
        for (family, means) in cases {
            let mut sum = Array1::<f64>::zeros(2);
            let mut sum_sq = Array1::<f64>::zeros(2);
            for _ in 0..n {
                let x = sample_units(family, means.view(), &mut rng);
                sum_sq += &x.mapv(|a| a * a);
                sum += &x;
            }
            for k in 0..2 {
                let mean = sum[k] / n as f64;
                let var = sum_sq[k] / n as f64 - mean * mean;
                let se = (var / n as f64).sqrt();
                assert!((mean - means[k]).abs() < 3.0 * se + 1e-12, "{family}: {mean} vs {}", means[k]);
            }
        }
    }

    proptest! {
        #[test]
        fn factorized_conditional_equals_enumeration(d in 1usize..6, p in 1usize..5, seed in 0u64..10_000) {
            let params = random_binary(d, p, seed);
            let mut rng = RngStream::new(seed, 1).rng();
            let v = Array1::from_shape_simple_fn(d, || if rng.random::<bool>() { 1.0 } else { 0.0 });
            let probs = binary_cond_prob(hidden_pre_activation(&params, v.view()).unwrap().view());
            let table = oracle::exact_cond_hidden(&params, v.view()).unwrap();
            for (hi, &prob) in table.iter().enumerate() {
                let product: f64 = (0..p)
                    .map(|j| if (hi >> j) & 1 == 1 { probs[j] } else { 1.0 - probs[j] })
                    .product();
                prop_assert!((product - prob).abs() < 1e-10);
            }
        }

        #[test]
        fn poisson_rates_shift_invariant(
            xs in proptest::collection::vec(-20.0f64..20.0, 1..8),
            shift in -50.0f64..50.0,
        ) {
            let a = Array1::from(xs.clone());
            let b = a.mapv(|x| x + shift);
            let ra = poisson_rates(a.view(), 1.0);
            let rb = poisson_rates(b.view(), 1.0);
            prop_assert!(ra.iter().all(|&r| r > 0.0));
            prop_assert!((ra.sum() - 1.0).abs() < 1e-12);
            for (x, y) in ra.iter().zip(rb.iter()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
