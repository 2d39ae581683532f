//! Dense multilayer perceptron with exact gradients and an SGD-with-momentum
//! optimizer.
//!
//! Parameters live in a single flat [`ParamVector`] in canonical order:
//! layers in order, each layer's `out × in` weight matrix row-major, followed
//! by its bias. All aggregation rules operate on that vector directly.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngStream;

/// Hidden-layer nonlinearity. The output layer is always softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture descriptor: `[input, hidden..., classes]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpArch {
    layer_sizes: Vec<usize>,
    activation: Activation,
}

impl MlpArch {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Config(
                "an MLP needs at least an input and an output layer".into(),
            ));
        }
        if layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        Ok(MlpArch {
            layer_sizes,
            activation,
        })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of affine layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    /// `(out, in)` for each affine layer.
    pub fn layer_dims(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_sizes.windows(2).map(|w| (w[1], w[0]))
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().map(|(o, i)| o * i + o).sum()
    }
}

/// Flat parameter vector; the vector space all aggregation happens in.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        ParamVector(values)
    }

    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &ParamVector) -> Result<()> {
        check_len("param vector", self.len(), other.len())?;
        for (x, y) in self.0.iter_mut().zip(&other.0) {
            *x += a * y;
        }
        Ok(())
    }

    pub fn scale(&mut self, a: f64) {
        for x in &mut self.0 {
            *x *= a;
        }
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        check_len("param vector", self.len(), other.len())?;
        Ok(ParamVector(
            self.0.iter().zip(&other.0).map(|(x, y)| x - y).collect(),
        ))
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum()
    }

    pub fn max_abs_diff(&self, other: &ParamVector) -> f64 {
        assert_eq!(self.len(), other.len(), "param vector lengths");
        self.0
            .iter()
            .zip(&other.0)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|x| x.is_finite())
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

/// Borrowed view of one affine layer inside a parameter vector.
#[derive(Debug, Clone, Copy)]
pub struct LayerView<'a> {
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major `out_dim × in_dim`.
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

/// An MLP: architecture plus its parameters in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    arch: MlpArch,
    params: ParamVector,
}

impl MlpModel {
    pub fn zeros(arch: MlpArch) -> Self {
        let n = arch.param_count();
        MlpModel {
            arch,
            params: ParamVector::zeros(n),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_glorot(arch: MlpArch, rng: &mut RngStream) -> Self {
        let mut values = Vec::with_capacity(arch.param_count());
        for (out_dim, in_dim) in arch.layer_dims() {
            let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
            values.extend((0..out_dim * in_dim).map(|_| (2.0 * rng.uniform() - 1.0) * limit));
            values.extend(std::iter::repeat(0.0).take(out_dim));
        }
        MlpModel {
            arch,
            params: ParamVector(values),
        }
    }

    /// Inverse of [`MlpModel::flatten`].
    pub fn unflatten(params: ParamVector, arch: &MlpArch) -> Result<Self> {
        check_len("parameter vector", arch.param_count(), params.len())?;
        Ok(MlpModel {
            arch: arch.clone(),
            params,
        })
    }

    pub fn flatten(&self) -> ParamVector {
        self.params.clone()
    }

    pub fn into_params(self) -> ParamVector {
        self.params
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn layers(&self) -> Vec<LayerView<'_>> {
        let mut views = Vec::with_capacity(self.arch.depth());
        let mut offset = 0;
        let p = self.params.as_slice();
        for (out_dim, in_dim) in self.arch.layer_dims() {
            let w_end = offset + out_dim * in_dim;
            let b_end = w_end + out_dim;
            views.push(LayerView {
                out_dim,
                in_dim,
                weights: &p[offset..w_end],
                bias: &p[w_end..b_end],
            });
            offset = b_end;
        }
        views
    }

    /// Softmax class probabilities, one row per input row.
    pub fn forward(&self, batch: &Matrix) -> Result<Matrix> {
        check_len("input features", self.arch.input_dim(), batch.cols())?;
        let cache = self.forward_cached(batch);
        let logits = cache.pre.last().unwrap();
        let mut probs = logits.clone();
        for i in 0..probs.rows() {
            softmax_in_place(probs.row_mut(i));
        }
        Ok(probs)
    }

    fn forward_cached(&self, batch: &Matrix) -> ForwardCache {
        let layers = self.layers();
        let depth = layers.len();
        let mut pre = Vec::with_capacity(depth);
        let mut post: Vec<Matrix> = Vec::with_capacity(depth);
        for (l, layer) in layers.iter().enumerate() {
            let input = if l == 0 { batch } else { &post[l - 1] };
            let mut z = Matrix::zeros(input.rows(), layer.out_dim);
            for r in 0..input.rows() {
                let x = input.row(r);
                let zr = z.row_mut(r);
                for (o, zo) in zr.iter_mut().enumerate() {
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    *zo = layer.bias[o] + dot(w, x);
                }
            }
            if l + 1 < depth {
                let act = self.arch.activation;
                let mut a = z.clone();
                for v in a.as_mut_slice() {
                    *v = act.apply(*v);
                }
                post.push(a);
            }
            pre.push(z);
        }
        ForwardCache { pre, post }
    }
}

struct ForwardCache {
    /// Pre-activations per layer; the last entry holds the logits.
    pre: Vec<Matrix>,
    /// Hidden activations (one fewer than `pre`).
    post: Vec<Matrix>,
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

/// Log-softmax via the max-shifted log-sum-exp.
fn log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    row.iter().map(|v| v - lse).collect()
}

/// Optimizer and regularization settings for one training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub step_size: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Proximal coefficient; zero disables the proximal term.
    pub prox_mu: f64,
    pub batch_size: usize,
}

impl SgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size >= 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size {} must be >= 0", self.step_size)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) || !(self.prox_mu >= 0.0) {
            return Err(Error::Config("weight_decay and prox_mu must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Total training objective and its gradient in canonical parameter order:
/// batch-mean soft cross-entropy, plus `weight_decay/2 ‖w‖²`, plus
/// `prox_mu/2 ‖w − anchor‖²` when an anchor is given.
///
/// Hard labels are passed as one-hot target rows.
pub fn loss_and_grad(
    model: &MlpModel,
    batch: &Matrix,
    targets: &Matrix,
    anchor: Option<&ParamVector>,
    cfg: &SgdConfig,
) -> Result<(f64, ParamVector)> {
    let arch = model.arch();
    check_len("input features", arch.input_dim(), batch.cols())?;
    check_len("target columns", arch.class_count(), targets.cols())?;
    check_len("target rows", batch.rows(), targets.rows())?;
    if let Some(a) = anchor {
        check_len("proximal anchor", model.params().len(), a.len())?;
    }
    if batch.rows() == 0 {
        return Err(Error::Capacity("empty batch".into()));
    }
    if !batch.is_finite() || !targets.is_finite() {
        return Err(Error::Numeric("batch"));
    }
    if !model.params().is_finite() {
        return Err(Error::Numeric("model parameters"));
    }

    let cache = model.forward_cached(batch);
    let layers = model.layers();
    let depth = layers.len();
    let rows = batch.rows();
    let inv_rows = 1.0 / rows as f64;

    // Output residual (p − p̂)/J and the cross-entropy term.
    let logits = &cache.pre[depth - 1];
    let mut delta = Matrix::zeros(rows, arch.class_count());
    let mut ce = 0.0;
    for r in 0..rows {
        let logp = log_softmax(logits.row(r));
        let t = targets.row(r);
        let d = delta.row_mut(r);
        for c in 0..logp.len() {
            if t[c] != 0.0 {
                ce -= t[c] * logp[c];
            }
            d[c] = (logp[c].exp() - t[c]) * inv_rows;
        }
    }
    ce *= inv_rows;

    let mut grad = vec![0.0; arch.param_count()];
    let offsets: Vec<usize> = {
        let mut acc = 0;
        arch.layer_dims()
            .map(|(o, i)| {
                let start = acc;
                acc += o * i + o;
                start
            })
            .collect()
    };

    for l in (0..depth).rev() {
        let layer = &layers[l];
        let input = if l == 0 { batch } else { &cache.post[l - 1] };
        let start = offsets[l];
        let (gw, rest) = grad[start..].split_at_mut(layer.out_dim * layer.in_dim);
        let gb = &mut rest[..layer.out_dim];
        for r in 0..rows {
            let d = delta.row(r);
            let x = input.row(r);
            for o in 0..layer.out_dim {
                let dv = d[o];
                if dv == 0.0 {
                    continue;
                }
                gb[o] += dv;
                let gw_row = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (g, xv) in gw_row.iter_mut().zip(x) {
                    *g += dv * xv;
                }
            }
        }
        if l > 0 {
            let z_prev = &cache.pre[l - 1];
            let a_prev = &cache.post[l - 1];
            let mut next = Matrix::zeros(rows, layer.in_dim);
            for r in 0..rows {
                let d = delta.row(r);
                let nr = next.row_mut(r);
                for o in 0..layer.out_dim {
                    let dv = d[o];
                    if dv == 0.0 {
                        continue;
                    }
                    let w = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (n, wv) in nr.iter_mut().zip(w) {
                        *n += dv * wv;
                    }
                }
                let zr = z_prev.row(r);
                let ar = a_prev.row(r);
                for i in 0..layer.in_dim {
                    nr[i] *= arch.activation().derivative(zr[i], ar[i]);
                }
            }
            delta = next;
        }
    }

    let w = model.params().as_slice();
    let mut loss = ce;
    if cfg.weight_decay > 0.0 {
        let mut sq = 0.0;
        for (g, wv) in grad.iter_mut().zip(w) {
            *g += cfg.weight_decay * wv;
            sq += wv * wv;
        }
        loss += 0.5 * cfg.weight_decay * sq;
    }
    if let (Some(anchor), true) = (anchor, cfg.prox_mu > 0.0) {
        let mut sq = 0.0;
        for ((g, wv), av) in grad.iter_mut().zip(w).zip(anchor.as_slice()) {
            let diff = wv - av;
            *g += cfg.prox_mu * diff;
            sq += diff * diff;
        }
        loss += 0.5 * cfg.prox_mu * sq;
    }

    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::Numeric("loss or gradient"));
    }
    Ok((loss, ParamVector(grad)))
}

/// SGD with heavy-ball momentum: `buf ← m·buf + g; w ← w − η·buf`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    momentum: f64,
    buffer: ParamVector,
}

impl Sgd {
    pub fn new(param_count: usize, momentum: f64) -> Self {
        Sgd {
            momentum,
            buffer: ParamVector::zeros(param_count),
        }
    }

    pub fn buffer(&self) -> &ParamVector {
        &self.buffer
    }

    pub fn step(&mut self, params: &mut ParamVector, grad: &ParamVector, step_size: f64) -> Result<()> {
        sgd_step(params, &mut self.buffer, grad, self.momentum, step_size)
    }
}

/// One momentum-SGD update on raw vectors.
pub fn sgd_step(
    params: &mut ParamVector,
    buffer: &mut ParamVector,
    grad: &ParamVector,
    momentum: f64,
    step_size: f64,
) -> Result<()> {
    check_len("momentum buffer", params.len(), buffer.len())?;
    check_len("gradient", params.len(), grad.len())?;
    for ((w, b), g) in params
        .0
        .iter_mut()
        .zip(buffer.0.iter_mut())
        .zip(&grad.0)
    {
        *b = momentum * *b + g;
        *w -= step_size * *b;
    }
    Ok(())
}

/// One-hot encode hard labels as a `labels.len() × classes` target matrix.
pub fn one_hot(labels: &[usize], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (r, &y) in labels.iter().enumerate() {
        m.row_mut(r)[y] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn arch(sizes: &[usize], act: Activation) -> MlpArch {
        MlpArch::new(sizes.to_vec(), act).unwrap()
    }

    fn plain(step: f64) -> SgdConfig {
        SgdConfig {
            step_size: step,
            momentum: 0.0,
            weight_decay: 0.0,
            prox_mu: 0.0,
            batch_size: 1,
        }
    }

    fn random_matrix(rows: usize, cols: usize, rng: &mut RngStream) -> Matrix {
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.normal()).collect())
    }

    fn random_targets(rows: usize, classes: usize, rng: &mut RngStream) -> Matrix {
        let mut m = Matrix::zeros(rows, classes);
        for r in 0..rows {
            let q = rng.dirichlet(&vec![1.0; classes]);
            m.row_mut(r).copy_from_slice(&q);
        }
        m
    }

    /// Independent loss evaluation: forward pass, explicit `ln p`, explicit
    /// penalties. Shares no code with the backward pass.
    fn reference_loss(
        model: &MlpModel,
        x: &Matrix,
        t: &Matrix,
        anchor: Option<&ParamVector>,
        cfg: &SgdConfig,
    ) -> f64 {
        let p = model.forward(x).unwrap();
        let mut ce = 0.0;
        for r in 0..x.rows() {
            for c in 0..t.cols() {
                ce -= t.row(r)[c] * p.row(r)[c].ln();
            }
        }
        ce /= x.rows() as f64;
        let w = model.params().as_slice();
        let wd: f64 = w.iter().map(|v| v * v).sum();
        let prox: f64 = anchor.map_or(0.0, |a| {
            w.iter().zip(a.as_slice()).map(|(x, y)| (x - y).powi(2)).sum()
        });
        ce + 0.5 * cfg.weight_decay * wd + 0.5 * cfg.prox_mu * prox
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(arch(&[4, 6, 5], Activation::Relu));
        let mut rng = RngStream::from_seed(1);
        let x = random_matrix(7, 4, &mut rng);
        let p = m.forward(&x).unwrap();
        for row in p.iter_rows() {
            for &v in row {
                assert!((v - 0.2).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn two_logit_softmax_is_logistic() {
        // Single affine layer: logits = (x, -x).
        let a = arch(&[1, 2], Activation::Relu);
        let m = MlpModel::unflatten(vec![1.0, -1.0, 0.0, 0.0].into(), &a).unwrap();
        for &t in &[-3.0, -0.5, 0.0, 0.7, 4.0] {
            let p = m.forward(&Matrix::from_rows(&[[t]])).unwrap();
            let sigma = 1.0 / (1.0 + (-2.0 * t).exp());
            assert!((p.row(0)[0] - sigma).abs() < 1e-14);
            assert!((p.row(0)[1] - (1.0 - sigma)).abs() < 1e-14);
        }
    }

    #[test]
    fn forward_rejects_wrong_width() {
        let m = MlpModel::zeros(arch(&[3, 2], Activation::Tanh));
        let err = m.forward(&Matrix::zeros(2, 4)).unwrap_err();
        assert!(matches!(err, Error::Shape { expected: 3, actual: 4, .. }));
    }

    #[test]
    fn param_count_and_zero_flatten() {
        let a = arch(&[2, 3], Activation::Relu);
        assert_eq!(a.param_count(), 9);
        let flat = MlpModel::zeros(a).flatten();
        assert_eq!(flat, ParamVector::zeros(9));
    }

    #[test]
    fn unflatten_rejects_wrong_length() {
        let a = arch(&[2, 3], Activation::Relu);
        assert!(MlpModel::unflatten(ParamVector::zeros(8), &a).is_err());
    }

    #[test]
    fn self_targets_give_zero_output_residual() {
        // Single layer: gradient is exactly (p − p̂) ⊗ x, so it vanishes.
        let a = arch(&[3, 4], Activation::Relu);
        let mut rng = RngStream::from_seed(2);
        let m = MlpModel::init_glorot(a, &mut rng);
        let x = random_matrix(5, 3, &mut rng);
        let t = m.forward(&x).unwrap();
        let (_, g) = loss_and_grad(&m, &x, &t, None, &plain(0.1)).unwrap();
        assert!(g.as_slice().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn prox_at_anchor_contributes_nothing() {
        let a = arch(&[2, 5, 3], Activation::Tanh);
        let mut rng = RngStream::from_seed(3);
        let m = MlpModel::init_glorot(a, &mut rng);
        let x = random_matrix(4, 2, &mut rng);
        let t = random_targets(4, 3, &mut rng);
        let base = loss_and_grad(&m, &x, &t, None, &plain(0.1)).unwrap();
        let cfg = SgdConfig {
            prox_mu: 2.0,
            ..plain(0.1)
        };
        let with = loss_and_grad(&m, &x, &t, Some(m.params()), &cfg).unwrap();
        assert_eq!(base.0, with.0);
        assert_eq!(base.1, with.1);
    }

    #[test]
    fn anchor_length_checked() {
        let a = arch(&[2, 3], Activation::Tanh);
        let m = MlpModel::zeros(a);
        let x = Matrix::zeros(1, 2);
        let t = one_hot(&[0], 3);
        let bad = ParamVector::zeros(3);
        assert!(loss_and_grad(&m, &x, &t, Some(&bad), &plain(0.1)).is_err());
    }

    #[test]
    fn non_finite_input_is_numeric_error() {
        let a = arch(&[2, 3], Activation::Tanh);
        let m = MlpModel::zeros(a);
        let x = Matrix::from_rows(&[[f64::NAN, 0.0]]);
        let t = one_hot(&[0], 3);
        assert!(matches!(
            loss_and_grad(&m, &x, &t, None, &plain(0.1)),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn hard_targets_reduce_to_nll() {
        let a = arch(&[2, 4, 3], Activation::Relu);
        let mut rng = RngStream::from_seed(4);
        let m = MlpModel::init_glorot(a, &mut rng);
        let x = random_matrix(6, 2, &mut rng);
        let labels = [0, 2, 1, 1, 0, 2];
        let (loss, _) = loss_and_grad(&m, &x, &one_hot(&labels, 3), None, &plain(0.1)).unwrap();
        let p = m.forward(&x).unwrap();
        let nll = -labels
            .iter()
            .enumerate()
            .map(|(r, &y)| p.row(r)[y].ln())
            .sum::<f64>()
            / 6.0;
        assert!((loss - nll).abs() < 1e-12);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = RngStream::derive(0, "fd-unit", 0, 0);
        let a = arch(&[2, 5, 3], Activation::Tanh);
        let m = MlpModel::init_glorot(a.clone(), &mut rng);
        let x = random_matrix(6, 2, &mut rng);
        let t = random_targets(6, 3, &mut rng);
        let anchor = ParamVector::new((0..a.param_count()).map(|_| rng.normal()).collect());
        let cfg = SgdConfig {
            weight_decay: 0.05,
            prox_mu: 0.3,
            ..plain(0.1)
        };
        let (loss, g) = loss_and_grad(&m, &x, &t, Some(&anchor), &cfg).unwrap();
        assert!((loss - reference_loss(&m, &x, &t, Some(&anchor), &cfg)).abs() < 1e-12);
        let h = 1e-5;
        for k in 0..a.param_count() {
            let mut plus = m.clone();
            plus.params_mut().as_mut_slice()[k] += h;
            let mut minus = m.clone();
            minus.params_mut().as_mut_slice()[k] -= h;
            let fd = (reference_loss(&plus, &x, &t, Some(&anchor), &cfg)
                - reference_loss(&minus, &x, &t, Some(&anchor), &cfg))
                / (2.0 * h);
            let an = g.as_slice()[k];
            let err = (fd - an).abs();
            assert!(err <= 1e-8 || err / an.abs().max(fd.abs()) <= 1e-5, "coord {k}: {an} vs {fd}");
        }
    }

    #[test]
    fn plain_sgd_step() {
        let mut w = ParamVector::new(vec![1.0]);
        let mut buf = ParamVector::zeros(1);
        sgd_step(&mut w, &mut buf, &ParamVector::new(vec![2.0]), 0.0, 0.1).unwrap();
        assert!((w.as_slice()[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn momentum_unrolls() {
        let mut w = ParamVector::new(vec![0.0]);
        let mut opt = Sgd::new(1, 0.9);
        let g = ParamVector::new(vec![1.0]);
        opt.step(&mut w, &g, 1.0).unwrap();
        assert_eq!(w.as_slice()[0], -1.0);
        opt.step(&mut w, &g, 1.0).unwrap();
        assert!((w.as_slice()[0] - (-2.9)).abs() < 1e-15);
    }

    #[test]
    fn zero_grad_zero_buffer_is_noop() {
        let mut w = ParamVector::new(vec![0.3, -1.2]);
        let before = w.clone();
        let mut opt = Sgd::new(2, 0.9);
        opt.step(&mut w, &ParamVector::zeros(2), 0.5).unwrap();
        assert_eq!(w, before);
    }

    #[test]
    fn sgd_length_mismatch() {
        let mut w = ParamVector::zeros(2);
        let mut buf = ParamVector::zeros(2);
        assert!(sgd_step(&mut w, &mut buf, &ParamVector::zeros(3), 0.0, 0.1).is_err());
    }

    #[test]
    fn textbook_update_when_unregularized() {
        let a = arch(&[2, 3, 2], Activation::Relu);
        let mut rng = RngStream::from_seed(8);
        let m = MlpModel::init_glorot(a, &mut rng);
        let x = random_matrix(3, 2, &mut rng);
        let t = one_hot(&[0, 1, 1], 2);
        let (_, g) = loss_and_grad(&m, &x, &t, None, &plain(0.05)).unwrap();
        let mut w = m.flatten();
        Sgd::new(w.len(), 0.0).step(&mut w, &g, 0.05).unwrap();
        let expected: Vec<f64> = m
            .params()
            .as_slice()
            .iter()
            .zip(g.as_slice())
            .map(|(p, gv)| p - 0.05 * gv)
            .collect();
        assert_eq!(w.as_slice(), expected.as_slice());
    }

    proptest! {
        #[test]
        fn flatten_roundtrip(values in proptest::collection::vec(-1e3f64..1e3, 17)) {
            let a = arch(&[3, 2, 3], Activation::Tanh);
            prop_assert_eq!(a.param_count(), 17);
            let v = ParamVector::new(values);
            let m = MlpModel::unflatten(v.clone(), &a).unwrap();
            prop_assert_eq!(m.flatten(), v);
        }

        #[test]
        fn softmax_rows_normalized(seed in any::<u64>(), scale in 0.1f64..50.0) {
            let mut rng = RngStream::from_seed(seed);
            let a = arch(&[3, 7, 4], Activation::Relu);
            let mut m = MlpModel::init_glorot(a, &mut rng);
            m.params_mut().scale(scale);
            let x = random_matrix(5, 3, &mut rng);
            let p = m.forward(&x).unwrap();
            for row in p.iter_rows() {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| v >= 0.0));
            }
        }
    }
}
