//! Deep belief networks: greedy stacking of RBMs, unrolling into an
//! autoencoder, and backprop fine-tuning on squared reconstruction error.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::gibbs;
use crate::model::{init_params, Dataset, Error, RbmParams, Result, RngStream, TrainConfig, UnitFamily};
use crate::trainer::{epoch_batches, fit_rows, initial_rbm, EpochRecord, TrainReport, INIT_STREAM, SHUFFLE_STREAM};
use crate::units;

/// Stream used for sampled upward propagation between greedy stages.
pub const PROPAGATION_STREAM: u64 = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct DbnSpec {
    /// `p_1, ..., p_l` with `p_1` the data dimension.
    pub layer_sizes: Vec<usize>,
    /// Hidden family of each of the `l - 1` RBMs.
    pub hidden_families: Vec<UnitFamily>,
}

impl DbnSpec {
    /// All hidden layers binary.
    pub fn binary(layer_sizes: Vec<usize>) -> Result<Self> {
        let hidden_families = vec![UnitFamily::Binary; layer_sizes.len().saturating_sub(1)];
        let spec = Self { layer_sizes, hidden_families };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Dimension(format!("a DBN needs at least 2 layers, got {}", self.layer_sizes.len())));
        }
        if let Some(pos) = self.layer_sizes.iter().position(|&s| s == 0) {
            return Err(Error::Dimension(format!("layer {pos} has zero units")));
        }
        if self.hidden_families.len() != self.layer_sizes.len() - 1 {
            return Err(Error::Dimension(format!(
                "{} hidden families for {} layer pairs",
                self.hidden_families.len(),
                self.layer_sizes.len() - 1
            )));
        }
        Ok(())
    }
}

/// How representations move up between greedy stages.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// Conditional means `E[h | v]`.
    #[default]
    Mean,
    /// One draw `h ~ P(h | v)` per row.
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DbnStack {
    pub layers: Vec<RbmParams>,
}

impl DbnStack {
    pub fn new(layers: Vec<RbmParams>) -> Result<Self> {
        let stack = Self { layers };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("empty RBM stack".into()));
        }
        for layer in &self.layers {
            layer.validate()?;
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].p() != pair[1].d() {
                return Err(Error::Dimension(format!(
                    "layer {l} has {} hidden units but layer {} has {} visible units",
                    pair[0].p(),
                    l + 1,
                    pair[1].d()
                )));
            }
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].d()).chain(self.layers.iter().map(RbmParams::p)).collect()
    }

    /// Conditional-mean representation at the top of the stack.
    pub fn propagate_up(&self, rows: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.validate()?;
        if rows.ncols() != self.layers[0].d() {
            return Err(Error::Dimension(format!("data has {} columns, stack expects {}", rows.ncols(), self.layers[0].d())));
        }
        Ok(self.layers.iter().fold(rows.to_owned(), |x, layer| mean_up(layer, x.view())))
    }
}

fn mean_up(layer: &RbmParams, rows: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros((rows.nrows(), layer.p()));
    for (v, mut h) in rows.rows().into_iter().zip(out.rows_mut()) {
        h.assign(&units::cond_mean_hidden_unchecked(layer, v));
    }
    out
}

fn sample_up(layer: &RbmParams, rows: ArrayView2<f64>, rng: &mut impl Rng) -> Array2<f64> {
    let mut out = Array2::zeros((rows.nrows(), layer.p()));
    for (v, mut h) in rows.rows().into_iter().zip(out.rows_mut()) {
        h.assign(&gibbs::sample_hidden(layer, v, rng));
    }
    out
}

/// Greedy layer-wise training. Stage `l` trains with seed `config.seed + l`.
pub fn pretrain(spec: &DbnSpec, dataset: &Dataset, config: &TrainConfig, propagation: Propagation) -> Result<DbnStack> {
    pretrain_with_reports(spec, dataset, config, propagation).map(|(stack, _)| stack)
}

pub fn pretrain_with_reports(
    spec: &DbnSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    propagation: Propagation,
) -> Result<(DbnStack, Vec<TrainReport>)> {
    spec.validate()?;
    if dataset.d() != spec.layer_sizes[0] {
        return Err(Error::Dimension(format!(
            "data dimension {} differs from first layer size {}",
            dataset.d(),
            spec.layer_sizes[0]
        )));
    }
    let mut rows = dataset.rows().to_owned();
    let mut visible_family = dataset.family();
    let mut layers = vec![];
    let mut reports = vec![];
    for (l, pair) in spec.layer_sizes.windows(2).enumerate() {
        let stage = TrainConfig { seed: config.seed.wrapping_add(l as u64), ..config.clone() };
        let hidden_family = spec.hidden_families[l];
        let init = initial_rbm(&stage, pair[0], pair[1], visible_family, hidden_family)?;
        let (params, report) = fit_rows(&stage, init, rows.view())?;
        if l + 2 < spec.layer_sizes.len() {
            rows = match propagation {
                Propagation::Mean => mean_up(&params, rows.view()),
                Propagation::Sample => {
                    sample_up(&params, rows.view(), &mut RngStream::new(stage.seed, PROPAGATION_STREAM).rng())
                }
            };
        }
        visible_family = hidden_family;
        layers.push(params);
        reports.push(report);
    }
    Ok((DbnStack { layers }, reports))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Sigmoid,
    Identity,
}

impl Activation {
    fn for_family(family: UnitFamily) -> Result<Self> {
        match family {
            UnitFamily::Binary => Ok(Self::Sigmoid),
            UnitFamily::Gaussian => Ok(Self::Identity),
            UnitFamily::Poisson => Err(Error::UnsupportedFamily(
                "poisson layers have no elementwise activation; unrolling supports binary and gaussian layers".into(),
            )),
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        if self == Self::Sigmoid {
            z.mapv_inplace(units::sigmoid);
        }
    }

    /// Derivative expressed through the activation output.
    fn derivative(self, a: &Array2<f64>) -> Array2<f64> {
        match self {
            Self::Sigmoid => a.mapv(|y| y * (1.0 - y)),
            Self::Identity => Array2::ones(a.raw_dim()),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sigmoid => "sigmoid",
            Self::Identity => "identity",
        }
    }
}

/// `y = f(x W + bias)` applied to row vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// in x out
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGradient {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Feed-forward autoencoder; `code_layer` counts the encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
    pub code_layer: usize,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>, code_layer: usize) -> Result<Self> {
        let mlp = Self { layers, code_layer };
        mlp.validate()?;
        Ok(mlp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Dimension("network has no layers".into()));
        }
        if self.code_layer == 0 || self.code_layer > self.layers.len() {
            return Err(Error::Dimension(format!(
                "code layer {} outside 1..={}",
                self.code_layer,
                self.layers.len()
            )));
        }
        for (l, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.outputs() {
                return Err(Error::Dimension(format!(
                    "layer {l}: bias has length {}, weights have {} columns",
                    layer.bias.len(),
                    layer.outputs()
                )));
            }
            if layer.weights.iter().chain(layer.bias.iter()).any(|x| !x.is_finite()) {
                return Err(Error::Invariant(format!("layer {l} has non-finite parameters")));
            }
        }
        for (l, pair) in self.layers.windows(2).enumerate() {
            if pair[0].outputs() != pair[1].inputs() {
                return Err(Error::Dimension(format!(
                    "layer {l} emits {} values but layer {} takes {}",
                    pair[0].outputs(),
                    l + 1,
                    pair[1].inputs()
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs()
    }

    pub fn code_dim(&self) -> usize {
        self.layers[self.code_layer - 1].outputs()
    }

    fn check_input(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension(format!("input has {} columns, network expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    /// Outputs of every layer, input first.
    fn activations(&self, x: ArrayView2<f64>, upto: usize) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for layer in &self.layers[..upto] {
            let mut z = acts[acts.len() - 1].dot(&layer.weights) + &layer.bias;
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x, self.layers.len()).pop().expect("at least the input"))
    }

    pub fn encode(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(x)?;
        Ok(self.activations(x, self.code_layer).pop().expect("at least the input"))
    }

    pub fn reconstruct(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.forward(x)
    }

    pub fn reconstruct_row(&self, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x.insert_axis(Axis(0)))?.row(0).to_owned())
    }

    /// Mean over all entries of `(reconstruct(x) - x)^2`; zero for no rows.
    pub fn mse(&self, x: ArrayView2<f64>) -> Result<f64> {
        self.check_autoencoder(x)?;
        if x.is_empty() {
            return Ok(0.0);
        }
        let out = self.forward(x)?;
        Ok((&out - &x).mapv(|e| e * e).mean().unwrap_or(0.0))
    }

    fn check_autoencoder(&self, x: ArrayView2<f64>) -> Result<()> {
        self.check_input(x)?;
        if self.output_dim() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "reconstruction loss needs equal input and output sizes, got {} and {}",
                self.input_dim(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Gradient of [`Mlp::mse`] by reverse-mode differentiation.
    pub fn gradients(&self, x: ArrayView2<f64>) -> Result<Vec<LayerGradient>> {
        self.check_autoencoder(x)?;
        let acts = self.activations(x, self.layers.len());
        let scale = 2.0 / (x.nrows() * x.ncols()).max(1) as f64;
        let out = &acts[acts.len() - 1];
        let mut delta = (out - &x) * scale;
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            delta *= &layer.activation.derivative(&acts[l + 1]);
            grads.push(LayerGradient { weights: acts[l].t().dot(&delta), bias: delta.sum_axis(Axis(0)) });
            if l > 0 {
                delta = delta.dot(&layer.weights.t());
            }
        }
        grads.reverse();
        Ok(grads)
    }
}

fn stack_families(stack: &DbnStack) -> Result<()> {
    stack.validate()?;
    for layer in &stack.layers {
        Activation::for_family(layer.visible_family)?;
        Activation::for_family(layer.hidden_family)?;
    }
    Ok(())
}

/// Encoder from the stack in order, decoder from the transposed weights and
/// visible biases in reverse order.
pub fn unroll_autoencoder(stack: &DbnStack) -> Result<Mlp> {
    stack_families(stack)?;
    let encoder = stack.layers.iter().map(|rbm| DenseLayer {
        weights: rbm.weights.clone(),
        bias: rbm.hidden_bias.clone(),
        activation: Activation::for_family(rbm.hidden_family).expect("checked"),
    });
    let decoder = stack.layers.iter().rev().map(|rbm| DenseLayer {
        weights: rbm.weights.t().to_owned(),
        bias: rbm.visible_bias.clone(),
        activation: Activation::for_family(rbm.visible_family).expect("checked"),
    });
    Mlp::new(encoder.chain(decoder).collect(), stack.layers.len())
}

/// The unrolled autoencoder of a freshly initialized, untrained stack.
pub fn random_autoencoder(spec: &DbnSpec, visible_family: UnitFamily, config: &TrainConfig) -> Result<Mlp> {
    spec.validate()?;
    let mut family = visible_family;
    let mut layers = vec![];
    for (l, pair) in spec.layer_sizes.windows(2).enumerate() {
        let mut rng = RngStream::new(config.seed.wrapping_add(l as u64), INIT_STREAM).rng();
        layers.push(init_params(pair[0], pair[1], family, spec.hidden_families[l], config.init_scale, &mut rng)?);
        family = spec.hidden_families[l];
    }
    unroll_autoencoder(&DbnStack::new(layers)?)
}

/// Mini-batch gradient descent on [`Mlp::mse`], using `learning_rate`,
/// `batch_size`, `max_epochs`, `momentum`, `weight_decay`, `seed` and
/// `convergence_tol` from the config. The recorded error is the full-data MSE
/// after each epoch.
pub fn finetune(mlp: &Mlp, dataset: &Dataset, config: &TrainConfig) -> Result<(Mlp, TrainReport)> {
    mlp.validate()?;
    let x = dataset.rows();
    mlp.check_autoencoder(x)?;
    config.validate(dataset.n())?;
    let mut net = mlp.clone();
    let mut vel: Vec<(Array2<f64>, Array1<f64>)> =
        net.layers.iter().map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len()))).collect();
    let mut shuffle_rng = RngStream::new(config.seed, SHUFFLE_STREAM).rng();
    let mut report = TrainReport::default();
    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        let mut grad_norm = 0.0;
        let mut moved = 0.0;
        let batches = epoch_batches(dataset.n(), config.batch_size, &mut shuffle_rng);
        for idx in &batches {
            let batch = x.select(Axis(0), idx);
            let grads = net.gradients(batch.view())?;
            let mut norm_sq = 0.0;
            for ((layer, g), (vw, vb)) in net.layers.iter_mut().zip(&grads).zip(&mut vel) {
                norm_sq += g.weights.iter().chain(g.bias.iter()).map(|v| v * v).sum::<f64>();
                *vw *= config.momentum;
                vw.scaled_add(-config.learning_rate, &(&g.weights + &(&layer.weights * config.weight_decay)));
                *vb *= config.momentum;
                vb.scaled_add(-config.learning_rate, &(&g.bias + &(&layer.bias * config.weight_decay)));
                layer.weights += &*vw;
                layer.bias += &*vb;
                moved += vw.iter().chain(vb.iter()).map(|v| v * v).sum::<f64>();
            }
            grad_norm += norm_sq.sqrt();
        }
        report.epochs.push(EpochRecord {
            epoch,
            recon_error: net.mse(x)?,
            grad_norm: grad_norm / batches.len() as f64,
            loglik: None,
            seconds: started.elapsed().as_secs_f64(),
        });
        if moved.sqrt() < config.convergence_tol {
            break;
        }
    }
    Ok((net, report))
}

/// Binary rows near one of two complementary prototypes: the first half of
/// the units on for one cluster, the second half for the other, each bit
/// flipped with probability `flip`. Returns the data and each row's cluster.
pub fn two_cluster_dataset(d: usize, n: usize, flip: f64, seed: u64) -> Result<(Dataset, Vec<usize>)> {
    if !(0.0..=1.0).contains(&flip) {
        return Err(Error::Config(format!("flip probability must lie in [0, 1], got {flip}")));
    }
    let mut rng = RngStream::new(seed, 0).rng();
    let mut rows = Array2::zeros((n, d));
    let mut labels = Vec::with_capacity(n);
    for mut row in rows.rows_mut() {
        let cluster = usize::from(rng.random::<bool>());
        for (i, x) in row.iter_mut().enumerate() {
            let on = (i < d / 2) == (cluster == 0);
            *x = if on != rng.random_bool(flip) { 1.0 } else { 0.0 };
        }
        labels.push(cluster);
    }
    Ok((Dataset::new(rows, UnitFamily::Binary)?, labels))
}
