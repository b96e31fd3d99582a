//! Parameter containers, unit families, datasets and the energy functions.

use std::fmt;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invariant violation: {0}")]
    Invariant(String),
    #[error("value domain violation: {0}")]
    Domain(String),
    #[error("unsupported unit family: {0}")]
    UnsupportedFamily(String),
    #[error("enumeration capacity exceeded: {bits} bits requested, cap is {cap}")]
    Capacity { bits: usize, cap: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },
    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

/// Value domain of a layer of units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitFamily {
    /// Values in {0, 1}.
    Binary,
    /// Real values, unit conditional variance.
    Gaussian,
    /// Non-negative integer counts.
    Poisson,
}

impl UnitFamily {
    pub fn contains(self, x: f64) -> bool {
        match self {
            UnitFamily::Binary => x == 0.0 || x == 1.0,
            UnitFamily::Gaussian => x.is_finite(),
            UnitFamily::Poisson => x.is_finite() && x >= 0.0 && x.fract() == 0.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            UnitFamily::Binary => "binary",
            UnitFamily::Gaussian => "gaussian",
            UnitFamily::Poisson => "poisson",
        }
    }
}

impl fmt::Display for UnitFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for UnitFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(UnitFamily::Binary),
            "gaussian" => Ok(UnitFamily::Gaussian),
            "poisson" => Ok(UnitFamily::Poisson),
            other => Err(Error::Config(format!("unknown unit family `{other}`"))),
        }
    }
}

/// Weights and biases of a restricted Boltzmann machine.
///
/// `weights[[i, j]]` links visible unit `i` with hidden unit `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    pub weights: Array2<f64>,
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    pub visible_family: UnitFamily,
    pub hidden_family: UnitFamily,
    /// Multiplier applied to softmax rates of Poisson layers. 1.0 keeps rates
    /// normalized across units.
    pub poisson_total_count: f64,
}

impl RbmParams {
    pub fn new(
        weights: Array2<f64>,
        visible_bias: Array1<f64>,
        hidden_bias: Array1<f64>,
        visible_family: UnitFamily,
        hidden_family: UnitFamily,
    ) -> Result<Self> {
        let params = Self {
            weights,
            visible_bias,
            hidden_bias,
            visible_family,
            hidden_family,
            poisson_total_count: 1.0,
        };
        params.validate()?;
        Ok(params)
    }

    /// All-zero binary model, the canonical degenerate fixture.
    pub fn zeros(d: usize, p: usize) -> Self {
        Self {
            weights: Array2::zeros((d, p)),
            visible_bias: Array1::zeros(d),
            hidden_bias: Array1::zeros(p),
            visible_family: UnitFamily::Binary,
            hidden_family: UnitFamily::Binary,
            poisson_total_count: 1.0,
        }
    }

    pub fn d(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn p(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        let (d, p) = (self.visible_bias.len(), self.hidden_bias.len());
        if d == 0 || p == 0 {
            return Err(Error::Dimension(format!("d = {d}, p = {p}; both must be positive")));
        }
        if self.weights.dim() != (d, p) {
            return Err(Error::Dimension(format!(
                "weights are {:?}, expected ({d}, {p})",
                self.weights.dim()
            )));
        }
        let finite = self.weights.iter().all(|x| x.is_finite())
            && self.visible_bias.iter().all(|x| x.is_finite())
            && self.hidden_bias.iter().all(|x| x.is_finite());
        if !finite {
            return Err(Error::Invariant("non-finite parameter entry".into()));
        }
        if !(self.poisson_total_count.is_finite() && self.poisson_total_count > 0.0) {
            return Err(Error::Invariant(format!(
                "poisson_total_count must be positive, got {}",
                self.poisson_total_count
            )));
        }
        Ok(())
    }

    /// Copy of the model with both bias vectors replaced.
    pub fn with_biases(&self, visible_bias: Array1<f64>, hidden_bias: Array1<f64>) -> Self {
        Self { visible_bias, hidden_bias, ..self.clone() }
    }

    pub(crate) fn check_visible(&self, v: ArrayView1<f64>) -> Result<()> {
        if v.len() != self.d() {
            return Err(Error::Dimension(format!(
                "visible vector has length {}, expected {}",
                v.len(),
                self.d()
            )));
        }
        Ok(())
    }

    pub(crate) fn check_hidden(&self, h: ArrayView1<f64>) -> Result<()> {
        if h.len() != self.p() {
            return Err(Error::Dimension(format!(
                "hidden vector has length {}, expected {}",
                h.len(),
                self.p()
            )));
        }
        Ok(())
    }
}

/// RBM extended with symmetric zero-diagonal lateral couplings.
#[derive(Debug, Clone, PartialEq)]
pub struct BmParams {
    pub base: RbmParams,
    /// Visible-visible couplings (d x d).
    pub lateral_visible: Array2<f64>,
    /// Hidden-hidden couplings (p x p).
    pub lateral_hidden: Array2<f64>,
}

impl BmParams {
    pub fn new(base: RbmParams, lateral_visible: Array2<f64>, lateral_hidden: Array2<f64>) -> Result<Self> {
        let bm = Self { base, lateral_visible, lateral_hidden };
        bm.validate()?;
        Ok(bm)
    }

    /// Boltzmann machine with no lateral links.
    pub fn from_rbm(base: RbmParams) -> Self {
        let (d, p) = (base.d(), base.p());
        Self { base, lateral_visible: Array2::zeros((d, d)), lateral_hidden: Array2::zeros((p, p)) }
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        check_lateral("L", self.lateral_visible.view(), self.base.d())?;
        check_lateral("J", self.lateral_hidden.view(), self.base.p())
    }

    pub fn has_lateral_links(&self) -> bool {
        self.lateral_visible.iter().chain(self.lateral_hidden.iter()).any(|&x| x != 0.0)
    }
}

fn check_lateral(name: &str, m: ArrayView2<f64>, n: usize) -> Result<()> {
    if m.dim() != (n, n) {
        return Err(Error::Dimension(format!("{name} is {:?}, expected ({n}, {n})", m.dim())));
    }
    for i in 0..n {
        if m[[i, i]] != 0.0 {
            return Err(Error::Invariant(format!("{name}[{i},{i}] = {} but diagonal must be zero", m[[i, i]])));
        }
        for j in (i + 1)..n {
            if m[[i, j]] != m[[j, i]] {
                return Err(Error::Invariant(format!("{name} is not symmetric at ({i},{j})")));
            }
            if !m[[i, j]].is_finite() {
                return Err(Error::Invariant(format!("{name}[{i},{j}] is not finite")));
            }
        }
    }
    Ok(())
}

/// Rows of visible vectors sharing one unit family.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    rows: Array2<f64>,
    family: UnitFamily,
}

impl Dataset {
    /// Builds a dataset, rejecting any entry outside the family's domain.
    pub fn new(rows: Array2<f64>, family: UnitFamily) -> Result<Self> {
        let offending: Vec<String> = rows
            .indexed_iter()
            .filter(|(_, &x)| !family.contains(x))
            .take(8)
            .map(|((r, c), x)| format!("row {r} col {c}: {x}"))
            .collect();
        if !offending.is_empty() {
            return Err(Error::Domain(format!(
                "values outside the {family} domain: {}",
                offending.join(", ")
            )));
        }
        Ok(Self { rows, family })
    }

    pub fn from_rows(rows: &[Vec<f64>], family: UnitFamily) -> Result<Self> {
        let d = rows.first().map_or(0, Vec::len);
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != d) {
            return Err(Error::Dimension(format!("row {i} has length {}, expected {d}", r.len())));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let rows = Array2::from_shape_vec((rows.len(), d), flat)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        Self::new(rows, family)
    }

    pub fn empty(d: usize, family: UnitFamily) -> Self {
        Self { rows: Array2::zeros((0, d)), family }
    }

    pub fn n(&self) -> usize {
        self.rows.nrows()
    }

    pub fn d(&self) -> usize {
        self.rows.ncols()
    }

    pub fn family(&self) -> UnitFamily {
        self.family
    }

    pub fn rows(&self) -> ArrayView2<'_, f64> {
        self.rows.view()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.rows.row(i)
    }

    pub fn is_empty(&self) -> bool {
        self.n() == 0
    }

    pub fn into_rows(self) -> Array2<f64> {
        self.rows
    }
}

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Streams with the same seed and distinct ids are independent ChaCha streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngStream {
    pub seed: u64,
    pub stream_id: u64,
}

impl RngStream {
    pub const fn new(seed: u64, stream_id: u64) -> Self {
        Self { seed, stream_id }
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream_id);
        rng
    }
}

/// Hyper-parameters shared by the contrastive-divergence trainers and the
/// fine-tuning loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub cd_steps: usize,
    pub max_epochs: usize,
    pub init_scale: f64,
    pub seed: u64,
    /// Training stops once an epoch moves the parameters by less than this
    /// (Euclidean norm over all parameters). Zero disables early stopping.
    pub convergence_tol: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    /// Record the exact log-likelihood per epoch when the model is small
    /// enough to enumerate.
    #[serde(default)]
    pub track_loglik: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            batch_size: 10,
            cd_steps: 1,
            max_epochs: 100,
            init_scale: 0.01,
            seed: 0,
            convergence_tol: 0.0,
            momentum: 0.0,
            weight_decay: 0.0,
            track_loglik: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate must be non-negative, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if self.batch_size > n {
            return Err(Error::Config(format!("batch size {} exceeds dataset size {n}", self.batch_size)));
        }
        if self.cd_steps == 0 {
            return Err(Error::Config("number of Gibbs steps must be positive".into()));
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(format!("init scale must be non-negative, got {}", self.init_scale)));
        }
        if self.convergence_tol.is_nan() || self.convergence_tol < 0.0 {
            return Err(Error::Config("convergence tolerance must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        Ok(())
    }
}

/// Gaussian(0, init_scale^2) weights and zero biases.
pub fn init_params(
    d: usize,
    p: usize,
    visible_family: UnitFamily,
    hidden_family: UnitFamily,
    init_scale: f64,
    rng: &mut impl rand::Rng,
) -> Result<RbmParams> {
    if d == 0 || p == 0 {
        return Err(Error::Dimension(format!("d = {d}, p = {p}; both must be positive")));
    }
    if !(init_scale.is_finite() && init_scale >= 0.0) {
        return Err(Error::Config(format!("init scale must be non-negative, got {init_scale}")));
    }
    let normal = Normal::new(0.0, init_scale).map_err(|e| Error::Config(e.to_string()))?;
    let weights = Array2::from_shape_simple_fn((d, p), || normal.sample(rng));
    Ok(RbmParams {
        weights,
        visible_bias: Array1::zeros(d),
        hidden_bias: Array1::zeros(p),
        visible_family,
        hidden_family,
        poisson_total_count: 1.0,
    })
}

/// `E(v, h) = -b.v - c.h - v.W.h`
pub fn energy(params: &RbmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
    params.check_visible(v)?;
    params.check_hidden(h)?;
    Ok(energy_unchecked(params, v, h))
}

pub(crate) fn energy_unchecked(params: &RbmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> f64 {
    -params.visible_bias.dot(&v) - params.hidden_bias.dot(&h) - v.dot(&params.weights.dot(&h))
}

/// RBM energy plus `-v.L.v - h.J.h`, with no one-half factors.
pub fn bm_energy(params: &BmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> Result<f64> {
    params.validate()?;
    params.base.check_visible(v)?;
    params.base.check_hidden(h)?;
    Ok(bm_energy_unchecked(params, v, h))
}

pub(crate) fn bm_energy_unchecked(params: &BmParams, v: ArrayView1<f64>, h: ArrayView1<f64>) -> f64 {
    energy_unchecked(&params.base, v, h)
        - v.dot(&params.lateral_visible.dot(&v))
        - h.dot(&params.lateral_hidden.dot(&h))
}

/// Euclidean norm of all entries of a matrix.
pub(crate) fn frobenius(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn loop_energy(params: &RbmParams, v: &[f64], h: &[f64]) -> f64 {
        let mut e = 0.0;
        for i in 0..v.len() {
            e -= params.visible_bias[i] * v[i];
        }
        for j in 0..h.len() {
            e -= params.hidden_bias[j] * h[j];
        }
        for i in 0..v.len() {
            for j in 0..h.len() {
                e -= v[i] * params.weights[[i, j]] * h[j];
            }
        }
        e
    }

    fn random_params(d: usize, p: usize, rng: &mut impl Rng) -> RbmParams {
        let mut params = init_params(d, p, UnitFamily::Binary, UnitFamily::Binary, 1.0, rng).unwrap();
        params.visible_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        params.hidden_bias.mapv_inplace(|_| rng.random_range(-1.0..1.0));
        params
    }

    #[test]
    fn zero_scale_init_is_all_zero() {
        let mut rng = RngStream::new(3, 0).rng();
        let params = init_params(3, 2, UnitFamily::Binary, UnitFamily::Binary, 0.0, &mut rng).unwrap();
        assert_eq!(params, RbmParams::zeros(3, 2));
    }

    #[test]
    fn init_small_scale_and_zero_biases() {
        let mut rng = RngStream::new(7, 0).rng();
        let params = init_params(1, 1, UnitFamily::Binary, UnitFamily::Binary, 0.01, &mut rng).unwrap();
        assert!(params.weights[[0, 0]].abs() < 0.1);
        assert_eq!(params.visible_bias[0], 0.0);
        assert_eq!(params.hidden_bias[0], 0.0);
    }

    #[test]
    fn init_empirical_std() {
        let mut rng = RngStream::new(11, 0).rng();
        let params = init_params(100, 100, UnitFamily::Binary, UnitFamily::Binary, 0.01, &mut rng).unwrap();
        let n = params.weights.len() as f64;
        let mean = params.weights.sum() / n;
        let var = params.weights.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let std = var.sqrt();
        assert!((0.009..=0.011).contains(&std), "std = {std}");
    }

    #[test]
    fn init_rejects_zero_dimensions() {
        let mut rng = RngStream::new(0, 0).rng();
        assert!(matches!(
            init_params(0, 2, UnitFamily::Binary, UnitFamily::Binary, 0.01, &mut rng),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn energy_examples() {
        let zero = RbmParams::zeros(2, 1);
        assert_eq!(energy(&zero, array![1.0, 1.0].view(), array![1.0].view()).unwrap(), 0.0);

        let mut params = RbmParams::zeros(2, 1);
        params.visible_bias = array![1.0, 0.0];
        params.hidden_bias = array![1.0];
        assert_eq!(energy(&params, array![1.0, 0.0].view(), array![1.0].view()).unwrap(), -2.0);
    }

    #[test]
    fn energy_shape_mismatch() {
        let params = RbmParams::zeros(2, 1);
        assert!(matches!(
            energy(&params, array![1.0].view(), array![1.0].view()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn energy_matches_loop_oracle() {
        let mut rng = RngStream::new(5, 0).rng();
        for _ in 0..50 {
            let params = random_params(4, 3, &mut rng);
            let v: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let got = energy(&params, ArrayView1::from(&v), ArrayView1::from(&h)).unwrap();
            assert!((got - loop_energy(&params, &v, &h)).abs() < 1e-12);
        }
    }

    #[test]
    fn bm_energy_examples() {
        let mut rng = RngStream::new(9, 0).rng();
        let base = random_params(3, 2, &mut rng);
        let bm = BmParams::from_rbm(base.clone());
        let v = array![1.0, 0.0, 1.0];
        let h = array![0.0, 1.0];
        assert_eq!(bm_energy(&bm, v.view(), h.view()).unwrap(), energy(&base, v.view(), h.view()).unwrap());

        let mut bm = BmParams::from_rbm(RbmParams::zeros(2, 1));
        bm.lateral_visible = array![[0.0, 0.5], [0.5, 0.0]];
        assert_eq!(bm_energy(&bm, array![1.0, 1.0].view(), array![0.0].view()).unwrap(), -1.0);
    }

    #[test]
    fn bm_energy_matches_loop_oracle() {
        let mut rng = RngStream::new(10, 0).rng();
        for _ in 0..30 {
            let base = random_params(3, 3, &mut rng);
            let mut l = Array2::<f64>::zeros((3, 3));
            let mut jm = Array2::<f64>::zeros((3, 3));
            for i in 0..3 {
                for j in (i + 1)..3 {
                    l[[i, j]] = rng.random_range(-1.0..1.0);
                    l[[j, i]] = l[[i, j]];
                    jm[[i, j]] = rng.random_range(-1.0..1.0);
                    jm[[j, i]] = jm[[i, j]];
                }
            }
            let bm = BmParams::new(base.clone(), l.clone(), jm.clone()).unwrap();
            let v: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut expected = loop_energy(&base, &v, &h);
            for i in 0..3 {
                for j in 0..3 {
                    expected -= v[i] * l[[i, j]] * v[j] + h[i] * jm[[i, j]] * h[j];
                }
            }
            let got = bm_energy(&bm, ArrayView1::from(&v), ArrayView1::from(&h)).unwrap();
            assert!((got - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn bm_rejects_bad_lateral() {
        let base = RbmParams::zeros(2, 1);
        let asym = array![[0.0, 1.0], [0.5, 0.0]];
        assert!(matches!(
            BmParams::new(base.clone(), asym, Array2::zeros((1, 1))),
            Err(Error::Invariant(_))
        ));
        let diag = array![[1.0, 0.0], [0.0, 0.0]];
        assert!(matches!(BmParams::new(base, diag, Array2::zeros((1, 1))), Err(Error::Invariant(_))));
    }

    #[test]
    fn dataset_rejects_out_of_domain() {
        assert!(Dataset::from_rows(&[vec![0.0, 1.0], vec![0.5, 1.0]], UnitFamily::Binary).is_err());
        assert!(Dataset::from_rows(&[vec![0.0, 3.0]], UnitFamily::Poisson).is_ok());
        assert!(Dataset::from_rows(&[vec![-1.0]], UnitFamily::Poisson).is_err());
        assert!(Dataset::from_rows(&[vec![-1.5]], UnitFamily::Gaussian).is_ok());
    }

    #[test]
    fn rng_streams_reproduce_and_differ() {
        use rand::RngCore;
        let a: Vec<u64> = (0..4).map({
            let mut r = RngStream::new(1, 0).rng();
            move |_| r.next_u64()
        }).collect();
        let b: Vec<u64> = (0..4).map({
            let mut r = RngStream::new(1, 0).rng();
            move |_| r.next_u64()
        }).collect();
        let c: Vec<u64> = (0..4).map({
            let mut r = RngStream::new(1, 1).rng();
            move |_| r.next_u64()
        }).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    proptest! {
        #[test]
        fn energy_bilinear_in_v(alpha in -3.0f64..3.0, seed in 0u64..1000) {
            let mut rng = RngStream::new(seed, 0).rng();
            let mut params = random_params(3, 2, &mut rng);
            params.hidden_bias.fill(0.0);
            let v = Array1::from_shape_simple_fn(3, || rng.random_range(-1.0..1.0));
            let h = Array1::from_shape_simple_fn(2, || rng.random_range(-1.0..1.0));
            let base = energy(&params, v.view(), h.view()).unwrap();
            let scaled = energy(&params, (&v * alpha).view(), h.view()).unwrap();
            prop_assert!((scaled - alpha * base).abs() < 1e-10);
        }
    }
}
