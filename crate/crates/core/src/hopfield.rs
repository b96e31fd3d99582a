//! Hopfield associative memory.
//!
//! Weights come from summed Hebbian outer products. Recall updates one unit at
//! a time in ascending index order and a unit switches on when its weighted
//! input reaches the threshold (ties switch on).
//!
//! Networks in the `{0, 1}` convention are handled by mapping states through
//! `2x - 1` for weights, inputs and energies, and mapping back on output.

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::model::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convention {
    PlusMinusOne,
    ZeroOne,
}

impl Convention {
    fn contains(self, x: f64) -> bool {
        match self {
            Convention::PlusMinusOne => x == 1.0 || x == -1.0,
            Convention::ZeroOne => x == 1.0 || x == 0.0,
        }
    }

    fn to_spin(self, x: f64) -> f64 {
        match self {
            Convention::PlusMinusOne => x,
            Convention::ZeroOne => 2.0 * x - 1.0,
        }
    }

    fn state_of_spin(self, s: f64) -> f64 {
        match self {
            Convention::PlusMinusOne => s,
            Convention::ZeroOne => (s + 1.0) / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HopfieldNet {
    weights: Array2<f64>,
    pub threshold: f64,
    pub convention: Convention,
}

/// Outcome of [`HopfieldNet::recall`].
#[derive(Debug, Clone, PartialEq)]
pub struct Recall {
    pub state: Array1<f64>,
    pub sweeps: usize,
    /// True when the last sweep flipped no unit.
    pub converged: bool,
}

impl HopfieldNet {
    /// Wraps a weight matrix, which must be symmetric with a zero diagonal.
    pub fn new(weights: Array2<f64>, threshold: f64, convention: Convention) -> Result<Self> {
        let (rows, cols) = weights.dim();
        if rows != cols || rows == 0 {
            return Err(Error::Dimension(format!("weights are {rows}x{cols}, expected a non-empty square matrix")));
        }
        for i in 0..rows {
            if weights[[i, i]] != 0.0 {
                return Err(Error::Invariant(format!("w[{i},{i}] must be zero")));
            }
            for j in (i + 1)..rows {
                if weights[[i, j]] != weights[[j, i]] {
                    return Err(Error::Invariant(format!("weights not symmetric at ({i},{j})")));
                }
            }
        }
        Ok(Self { weights, threshold, convention })
    }

    pub fn d(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    fn check_state(&self, state: ArrayView1<f64>) -> Result<()> {
        if state.len() != self.d() {
            return Err(Error::Dimension(format!("state has {} units, network has {}", state.len(), self.d())));
        }
        if let Some(i) = state.iter().position(|&x| !self.convention.contains(x)) {
            return Err(Error::Domain(format!("unit {i} = {} is outside the {:?} domain", state[i], self.convention)));
        }
        Ok(())
    }

    fn spins(&self, state: ArrayView1<f64>) -> Array1<f64> {
        state.mapv(|x| self.convention.to_spin(x))
    }

    /// Updates unit `i` in place on a spin vector; returns whether it flipped.
    fn update_spin(&self, spins: &mut Array1<f64>, i: usize) -> bool {
        let input = self.weights.row(i).dot(spins);
        let next = if input >= self.threshold { 1.0 } else { -1.0 };
        let flipped = spins[i] != next;
        spins[i] = next;
        flipped
    }

    /// Returns `state` with unit `i` set by the threshold rule.
    pub fn update_unit(&self, state: ArrayView1<f64>, i: usize) -> Result<Array1<f64>> {
        self.check_state(state)?;
        if i >= self.d() {
            return Err(Error::Dimension(format!("unit {i} out of range for {} units", self.d())));
        }
        let mut spins = self.spins(state);
        self.update_spin(&mut spins, i);
        Ok(spins.mapv(|s| self.convention.state_of_spin(s)))
    }

    /// Asynchronous sweeps until a sweep changes nothing or `max_sweeps` is reached.
    pub fn recall(&self, probe: ArrayView1<f64>, max_sweeps: usize) -> Result<Recall> {
        self.check_state(probe)?;
        let mut spins = self.spins(probe);
        let mut sweeps = 0;
        let mut converged = false;
        while sweeps < max_sweeps {
            sweeps += 1;
            let mut flipped = false;
            for i in 0..self.d() {
                flipped |= self.update_spin(&mut spins, i);
            }
            if !flipped {
                converged = true;
                break;
            }
        }
        Ok(Recall { state: spins.mapv(|s| self.convention.state_of_spin(s)), sweeps, converged })
    }

    /// `-sum_{i<j} w_ij x_i x_j` with states mapped to spins.
    pub fn energy(&self, state: ArrayView1<f64>) -> Result<f64> {
        self.check_state(state)?;
        Ok(self.spin_energy(&self.spins(state)))
    }

    fn spin_energy(&self, spins: &Array1<f64>) -> f64 {
        let n = self.d();
        let mut e = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                e -= self.weights[[i, j]] * spins[i] * spins[j];
            }
        }
        e
    }
}

/// Sums `x x^T` over the patterns, diagonal cleared.
pub fn hebbian_train(patterns: &[Array1<f64>], convention: Convention) -> Result<HopfieldNet> {
    let d = patterns.first().map(Array1::len).ok_or_else(|| Error::Dimension("no patterns to store".into()))?;
    let mut weights = Array2::zeros((d, d));
    for (k, pattern) in patterns.iter().enumerate() {
        if pattern.len() != d {
            return Err(Error::Dimension(format!("pattern {k} has {} units, expected {d}", pattern.len())));
        }
        if let Some(i) = pattern.iter().position(|&x| !convention.contains(x)) {
            return Err(Error::Domain(format!("pattern {k} unit {i} = {} is outside the {convention:?} domain", pattern[i])));
        }
        let spins = pattern.mapv(|x| convention.to_spin(x));
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    weights[[i, j]] += spins[i] * spins[j];
                }
            }
        }
    }
    HopfieldNet::new(weights, 0.0, convention)
}

/// Energy of a network state; see [`HopfieldNet::energy`].
pub fn hopfield_energy(net: &HopfieldNet, state: ArrayView1<f64>) -> Result<f64> {
    net.energy(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::RngStream;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn random_net(d: usize, rng: &mut impl Rng) -> HopfieldNet {
        let mut w = Array2::zeros((d, d));
        for i in 0..d {
            for j in (i + 1)..d {
                w[[i, j]] = rng.random_range(-1.0..1.0);
                w[[j, i]] = w[[i, j]];
            }
        }
        HopfieldNet::new(w, 0.0, Convention::PlusMinusOne).unwrap()
    }

    fn random_spins(d: usize, rng: &mut impl Rng) -> Array1<f64> {
        Array1::from_shape_simple_fn(d, || if rng.random::<bool>() { 1.0 } else { -1.0 })
    }

    #[test]
    fn hebbian_single_pattern() {
        let net = hebbian_train(&[array![1.0, -1.0]], Convention::PlusMinusOne).unwrap();
        assert_eq!(net.weights(), &array![[0.0, -1.0], [-1.0, 0.0]]);
        let net = hebbian_train(&[array![1.0, 0.0]], Convention::ZeroOne).unwrap();
        assert_eq!(net.weights()[[0, 1]], -1.0);
    }

    #[test]
    fn hebbian_orthogonal_patterns_match_loop() {
        let a = array![1.0, 1.0, -1.0, -1.0];
        let b = array![1.0, -1.0, 1.0, -1.0];
        let net = hebbian_train(&[a.clone(), b.clone()], Convention::PlusMinusOne).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expected = if i == j { 0.0 } else { a[i] * a[j] + b[i] * b[j] };
                assert_eq!(net.weights()[[i, j]], expected);
            }
        }
    }

    #[test]
    fn hebbian_rejects_bad_patterns() {
        assert!(hebbian_train(&[], Convention::PlusMinusOne).is_err());
        assert!(hebbian_train(&[array![1.0, 0.0]], Convention::PlusMinusOne).is_err());
        assert!(hebbian_train(&[array![1.0, 1.0], array![1.0]], Convention::PlusMinusOne).is_err());
    }

    #[test]
    fn stored_pattern_and_its_negation_are_fixed_points() {
        for d in 3..9 {
            let pattern = Array1::from_shape_fn(d, |i| if i % 3 == 0 { 1.0 } else { -1.0 });
            let net = hebbian_train(std::slice::from_ref(&pattern), Convention::PlusMinusOne).unwrap();
            let r = net.recall(pattern.view(), 10).unwrap();
            assert_eq!((r.state, r.sweeps, r.converged), (pattern.clone(), 1, true));
            let neg = -&pattern;
            let r = net.recall(neg.view(), 10).unwrap();
            assert_eq!(r.state, neg);
        }
    }

    #[test]
    fn zero_weights_tie_goes_to_plus_one() {
        let net = HopfieldNet::new(Array2::zeros((4, 4)), 0.0, Convention::PlusMinusOne).unwrap();
        let r = net.recall(array![-1.0, 1.0, -1.0, -1.0].view(), 5).unwrap();
        assert_eq!(r.state, Array1::<f64>::ones(4));
        let net = HopfieldNet::new(Array2::zeros((2, 2)), 0.0, Convention::ZeroOne).unwrap();
        assert_eq!(net.update_unit(array![0.0, 0.0].view(), 1).unwrap(), array![0.0, 1.0]);
    }

    #[test]
    fn recall_repairs_corrupted_probe() {
        let pattern = array![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let net = hebbian_train(std::slice::from_ref(&pattern), Convention::ZeroOne).unwrap();
        let mut probe = pattern.clone();
        probe[0] = 0.0;
        probe[4] = 1.0;
        assert_eq!(net.recall(probe.view(), 10).unwrap().state, pattern);
    }

    #[test]
    fn energy_examples() {
        for d in 2..8 {
            let pattern = Array1::from_shape_fn(d, |i| if i % 2 == 0 { 1.0 } else { -1.0 });
            let net = hebbian_train(std::slice::from_ref(&pattern), Convention::PlusMinusOne).unwrap();
            let expected = -((d * (d - 1)) as f64) / 2.0;
            assert_eq!(hopfield_energy(&net, pattern.view()).unwrap(), expected);
        }
        let zero = HopfieldNet::new(Array2::zeros((3, 3)), 0.0, Convention::PlusMinusOne).unwrap();
        assert_eq!(zero.energy(array![1.0, -1.0, 1.0].view()).unwrap(), 0.0);
    }

    #[test]
    fn energy_matches_full_double_sum() {
        let mut rng = RngStream::new(31, 0).rng();
        for _ in 0..20 {
            let net = random_net(6, &mut rng);
            let s = random_spins(6, &mut rng);
            let mut full = 0.0;
            for i in 0..6 {
                for j in 0..6 {
                    full += net.weights()[[i, j]] * s[i] * s[j];
                }
            }
            assert!((net.energy(s.view()).unwrap() + 0.5 * full).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_asymmetric_weights() {
        assert!(HopfieldNet::new(array![[0.0, 1.0], [2.0, 0.0]], 0.0, Convention::PlusMinusOne).is_err());
        assert!(HopfieldNet::new(array![[1.0, 0.0], [0.0, 0.0]], 0.0, Convention::PlusMinusOne).is_err());
    }

    proptest! {
        #[test]
        fn asynchronous_updates_never_raise_energy(seed in 0u64..100_000, d in 2usize..11) {
            let mut rng = RngStream::new(seed, 0).rng();
            let net = random_net(d, &mut rng);
            let mut spins = random_spins(d, &mut rng);
            let limit = d * (1 << d);
            let mut converged = false;
            for _ in 0..limit {
                let mut flipped = false;
                for i in 0..d {
                    let before = net.spin_energy(&spins);
                    flipped |= net.update_spin(&mut spins, i);
                    prop_assert!(net.spin_energy(&spins) <= before + 1e-12);
                }
                if !flipped {
                    converged = true;
                    break;
                }
            }
            prop_assert!(converged);
        }
    }
}
