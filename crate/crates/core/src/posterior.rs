//! Global-model distributions fitted to one round of client weights, and
//! the model sets used as ensemble teachers.
//!
//! Two constructions are supported:
//!
//! * a diagonal Gaussian whose mean is the data-size-weighted client average
//!   and whose per-coordinate variance is the weighted spread around it;
//! * convex combinations of client weights with Dirichlet coefficients,
//!   reweighted by client data size.

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::nn::ParamVector;
use crate::rng::RngStream;

/// One round's client weights aligned with their local dataset sizes.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientWeightSet {
    weights: Vec<ParamVector>,
    data_sizes: Vec<f64>,
}

impl ClientWeightSet {
    pub fn new(weights: Vec<ParamVector>, data_sizes: Vec<usize>) -> Result<Self> {
        Self::with_real_sizes(weights, data_sizes.into_iter().map(|s| s as f64).collect())
    }

    /// Sizes given as positive reals; scaling them by a constant is a no-op
    /// for every operation in this module.
    pub fn with_real_sizes(weights: Vec<ParamVector>, data_sizes: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Capacity("client weight set is empty".into()));
        }
        check_len("client data sizes", weights.len(), data_sizes.len())?;
        let len = weights[0].len();
        for w in &weights[1..] {
            check_len("client parameter vector", len, w.len())?;
        }
        if data_sizes.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("client data sizes must be positive".into()));
        }
        Ok(ClientWeightSet {
            weights,
            data_sizes,
        })
    }

    pub fn weights(&self) -> &[ParamVector] {
        &self.weights
    }

    pub fn data_sizes(&self) -> &[f64] {
        &self.data_sizes
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn param_len(&self) -> usize {
        self.weights[0].len()
    }

    /// `|D_i| / |D|` for each client.
    pub fn fractions(&self) -> Vec<f64> {
        let total: f64 = self.data_sizes.iter().sum();
        self.data_sizes.iter().map(|s| s / total).collect()
    }

    /// `Σ_i λ_i w_i`.
    pub fn combine(&self, lambda: &[f64]) -> Result<ParamVector> {
        check_len("mixing coefficients", self.len(), lambda.len())?;
        let mut out = ParamVector::zeros(self.param_len());
        for (w, &l) in self.weights.iter().zip(lambda) {
            out.axpy(l, w)?;
        }
        Ok(out)
    }
}

/// Data-size-weighted average of client weights. A single client is returned
/// unchanged.
pub fn weighted_average(clients: &ClientWeightSet) -> ParamVector {
    if clients.len() == 1 {
        return clients.weights[0].clone();
    }
    clients
        .combine(&clients.fractions())
        .expect("set invariants guarantee aligned lengths")
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPosterior {
    pub mu: ParamVector,
    /// Per-coordinate variance.
    pub sigma_diag: ParamVector,
}

pub fn fit_gaussian(clients: &ClientWeightSet) -> GaussianPosterior {
    let mu = weighted_average(clients);
    let mut var = vec![0.0; mu.len()];
    for (w, f) in clients.weights.iter().zip(clients.fractions()) {
        for ((v, x), m) in var.iter_mut().zip(w.as_slice()).zip(mu.as_slice()) {
            let d = x - m;
            *v += f * d * d;
        }
    }
    GaussianPosterior {
        mu,
        sigma_diag: ParamVector::new(var),
    }
}

impl GaussianPosterior {
    /// `μ + √σ² ⊙ z` with `z` standard normal.
    pub fn sample(&self, rng: &mut RngStream) -> ParamVector {
        ParamVector::new(
            self.mu
                .as_slice()
                .iter()
                .zip(self.sigma_diag.as_slice())
                .map(|(&m, &v)| m + v.sqrt() * rng.normal())
                .collect(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletPosterior {
    pub alpha: Vec<f64>,
    pub clients: ClientWeightSet,
}

impl DirichletPosterior {
    pub fn new(alpha: Vec<f64>, clients: ClientWeightSet) -> Result<Self> {
        check_len("dirichlet concentration", clients.len(), alpha.len())?;
        if alpha.iter().any(|&a| !(a > 0.0 && a.is_finite())) {
            return Err(Error::Config("dirichlet concentration must be positive".into()));
        }
        Ok(DirichletPosterior { alpha, clients })
    }

    pub fn symmetric(alpha: f64, clients: ClientWeightSet) -> Result<Self> {
        Self::new(vec![alpha; clients.len()], clients)
    }

    /// Mixing coefficients `λ_i ∝ γ_i |D_i|` with `γ ~ Dir(α)`.
    pub fn sample_coefficients(&self, rng: &mut RngStream) -> Vec<f64> {
        loop {
            let gamma = rng.dirichlet(&self.alpha);
            let scaled: Vec<f64> = gamma
                .iter()
                .zip(&self.clients.data_sizes)
                .map(|(g, s)| g * s)
                .collect();
            let total: f64 = scaled.iter().sum();
            if total > 0.0 {
                return scaled.into_iter().map(|x| x / total).collect();
            }
        }
    }

    pub fn sample(&self, rng: &mut RngStream) -> ParamVector {
        if self.clients.len() == 1 {
            return self.clients.weights[0].clone();
        }
        let lambda = self.sample_coefficients(rng);
        self.clients
            .combine(&lambda)
            .expect("set invariants guarantee aligned lengths")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PosteriorKind {
    Gaussian,
    Dirichlet { alpha: f64 },
}

impl Default for PosteriorKind {
    fn default() -> Self {
        PosteriorKind::Dirichlet { alpha: 0.5 }
    }
}

/// Which members go into the ensemble teacher.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelSetSpec {
    pub posterior: PosteriorKind,
    /// Posterior samples `M`.
    pub samples: usize,
    pub include_avg: bool,
    pub include_clients: bool,
}

impl Default for ModelSetSpec {
    fn default() -> Self {
        ModelSetSpec {
            posterior: PosteriorKind::default(),
            samples: 10,
            include_avg: true,
            include_clients: true,
        }
    }
}

impl ModelSetSpec {
    pub fn size(&self, clients: usize) -> usize {
        self.samples + usize::from(self.include_avg) + if self.include_clients { clients } else { 0 }
    }
}

/// Ensemble members in fixed order: weighted average, then clients, then
/// posterior samples. Sample `m` draws from its own child stream.
pub fn build_model_set(
    clients: &ClientWeightSet,
    spec: &ModelSetSpec,
    rng: &mut RngStream,
) -> Result<Vec<ParamVector>> {
    if spec.size(clients.len()) == 0 {
        return Err(Error::Config("model set would be empty".into()));
    }
    let mut set = Vec::with_capacity(spec.size(clients.len()));
    if spec.include_avg {
        set.push(weighted_average(clients));
    }
    if spec.include_clients {
        set.extend(clients.weights.iter().cloned());
    }
    if spec.samples > 0 {
        let base = rng.next_u64();
        let stream = |m: usize| RngStream::derive(base, "posterior-sample", m as u64, 0);
        match spec.posterior {
            PosteriorKind::Gaussian => {
                let g = fit_gaussian(clients);
                set.extend((0..spec.samples).map(|m| g.sample(&mut stream(m))));
            }
            PosteriorKind::Dirichlet { alpha } => {
                let d = DirichletPosterior::symmetric(alpha, clients.clone())?;
                set.extend((0..spec.samples).map(|m| d.sample(&mut stream(m))));
            }
        }
    }
    Ok(set)
}
