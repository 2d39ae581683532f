//! Client-side local training and server-side aggregation strategies.

use serde::{Deserialize, Serialize};

use crate::data::{LabeledDataset, UnlabeledDataset};
use crate::distill::{distill_sgd, distill_swa, make_pseudo_set, PseudoLabeledDataset, SwaSchedule};
use crate::error::{check_len, Error, Result};
use crate::nn::{one_hot, MlpArch, MlpModel, ParamVector, SgdConfig};
use crate::posterior::{build_model_set, weighted_average, ClientWeightSet, ModelSetSpec};
use crate::rng::RngStream;
use crate::train::{batches_per_epoch, Loop};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    pub local_epochs: usize,
    pub base_step_size: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Zero trains FedAvg-style; positive adds the FedProx proximal term.
    pub prox_mu: f64,
    pub batch_size: usize,
    /// Apply the round-wise decay of [`local_lr`]; off keeps `base_step_size`.
    pub lr_decay: bool,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            local_epochs: 2,
            base_step_size: 0.01,
            momentum: 0.9,
            weight_decay: 5e-4,
            prox_mu: 0.0,
            batch_size: 40,
            lr_decay: true,
        }
    }
}

impl ClientConfig {
    pub fn sgd(&self, step_size: f64) -> SgdConfig {
        SgdConfig {
            step_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            prox_mu: self.prox_mu,
            batch_size: self.batch_size,
        }
    }

    /// Local step size for 0-based `round` of `total_rounds`.
    pub fn step_size(&self, round: usize, total_rounds: usize) -> f64 {
        if self.lr_decay {
            local_lr(round, total_rounds, self.base_step_size)
        } else {
            self.base_step_size
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.local_epochs == 0 {
            return Err(Error::Config("local_epochs must be positive".into()));
        }
        self.sgd(self.base_step_size).validate()
    }
}

/// Round-wise local step size: full rate below 30% of the rounds, a tenth
/// until 60%, a hundredth afterwards.
pub fn local_lr(round: usize, total_rounds: usize, base: f64) -> f64 {
    let r = round as f64;
    let total = total_rounds as f64;
    if r < 0.3 * total {
        base
    } else if r < 0.6 * total {
        base * 0.1
    } else {
        base * 0.01
    }
}

/// `⌈epochs · ⌈n / batch⌉⌉`
pub fn local_step_count(examples: usize, batch_size: usize, epochs: f64) -> usize {
    (epochs * batches_per_epoch(examples, batch_size) as f64).ceil() as usize
}

/// Trains a copy of `global` on one client's data.
///
/// `effective_epochs` may be fractional (stragglers). When `prox_mu > 0` the
/// proximal term is anchored at `global`.
pub fn client_update(
    global: &ParamVector,
    arch: &MlpArch,
    data: &LabeledDataset,
    cfg: &ClientConfig,
    effective_epochs: f64,
    step_size: f64,
    rng: &mut RngStream,
) -> Result<ParamVector> {
    if data.is_empty() {
        return Err(Error::Capacity("client has no training data".into()));
    }
    check_len("client classes", arch.class_count(), data.class_count())?;
    let sgd = cfg.sgd(step_size);
    sgd.validate()?;
    let mut model = MlpModel::unflatten(global.clone(), arch)?;
    let targets = one_hot(data.labels(), data.class_count());
    let anchor = (cfg.prox_mu > 0.0).then_some(global);
    let steps = local_step_count(data.len(), cfg.batch_size, effective_epochs);
    Loop {
        features: data.features(),
        targets: &targets,
        cfg: &sgd,
        anchor,
    }
    .run(&mut model, steps, rng, |_| step_size, |_, _| {})?;
    Ok(model.into_params())
}

/// Distillation settings shared by the distilling strategies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Rate for plain SGD distillation.
    pub step_size: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Pseudo-label sharpening exponent; `1.0` leaves targets unchanged.
    pub sharpen_power: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            momentum: 0.9,
            weight_decay: 0.0,
            step_size: 1e-3,
            batch_size: 128,
            epochs: 20,
            sharpen_power: 2.0,
        }
    }
}

impl DistillConfig {
    pub fn sharpening(&self) -> Option<f64> {
        (self.sharpen_power != 1.0).then_some(self.sharpen_power)
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            step_size: self.step_size,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            prox_mu: 0.0,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ServerStrategy {
    FedAvg,
    FedAvgM {
        server_momentum: f64,
    },
    /// Distil the plain client ensemble with SGD.
    VDistill {
        #[serde(default)]
        distill: DistillConfig,
    },
    /// Distil a Bayesian model ensemble with SWA.
    FedBe {
        #[serde(default)]
        model_set: ModelSetSpec,
        #[serde(default)]
        swa: SwaSchedule,
        #[serde(default)]
        distill: DistillConfig,
        /// Server momentum applied to the distillation initialization; zero
        /// starts from the plain weighted average.
        #[serde(default)]
        server_momentum: f64,
    },
}

impl ServerStrategy {
    pub fn needs_unlabeled(&self) -> bool {
        matches!(self, ServerStrategy::VDistill { .. } | ServerStrategy::FedBe { .. })
    }

    pub fn name(&self) -> &'static str {
        match self {
            ServerStrategy::FedAvg => "fed_avg",
            ServerStrategy::FedAvgM { .. } => "fed_avg_m",
            ServerStrategy::VDistill { .. } => "v_distill",
            ServerStrategy::FedBe { .. } => "fed_be",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let check_momentum = |m: f64| {
            if (0.0..1.0).contains(&m) {
                Ok(())
            } else {
                Err(Error::Config(format!("server momentum {m} outside [0, 1)")))
            }
        };
        match self {
            ServerStrategy::FedAvg => Ok(()),
            ServerStrategy::FedAvgM { server_momentum } => check_momentum(*server_momentum),
            ServerStrategy::VDistill { distill } => distill.sgd().validate(),
            ServerStrategy::FedBe {
                swa,
                distill,
                server_momentum,
                ..
            } => {
                check_momentum(*server_momentum)?;
                swa.validate()?;
                distill.sgd().validate()
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub global: ParamVector,
    pub momentum_buffer: ParamVector,
    pub round: usize,
}

impl ServerState {
    pub fn new(global: ParamVector) -> Self {
        let n = global.len();
        ServerState {
            global,
            momentum_buffer: ParamVector::zeros(n),
            round: 0,
        }
    }
}

/// The new server state plus the teacher artifacts of a distilling round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub state: ServerState,
    pub ensemble: Option<Vec<ParamVector>>,
    pub teacher: Option<PseudoLabeledDataset>,
}

/// `buf ← m·buf + (global − avg); global ← global − buf`, evaluated as
/// `avg − m·buf_old` so that zero momentum yields `avg` exactly.
fn momentum_update(state: &ServerState, avg: &ParamVector, momentum: f64) -> Result<(ParamVector, ParamVector)> {
    let delta = state.global.sub(avg)?;
    let mut buffer = state.momentum_buffer.clone();
    buffer.scale(momentum);
    buffer.axpy(1.0, &delta)?;
    let mut global = avg.clone();
    global.axpy(-momentum, &state.momentum_buffer)?;
    Ok((global, buffer))
}

/// One server aggregation. Only client weights, their data sizes, and the
/// unlabeled pool are visible here.
pub fn server_round(
    state: &ServerState,
    clients: &ClientWeightSet,
    strategy: &ServerStrategy,
    unlabeled: Option<&UnlabeledDataset>,
    arch: &MlpArch,
    rng: &mut RngStream,
) -> Result<RoundOutcome> {
    check_len("client parameter vector", state.global.len(), clients.param_len())?;
    let pool = || {
        unlabeled.ok_or_else(|| {
            Error::Config(format!("strategy {} needs an unlabeled server pool", strategy.name()))
        })
    };
    let avg = weighted_average(clients);
    let mut buffer = state.momentum_buffer.clone();
    let mut ensemble = None;
    let mut teacher = None;
    let global = match strategy {
        ServerStrategy::FedAvg => avg,
        ServerStrategy::FedAvgM { server_momentum } => {
            let (g, b) = momentum_update(state, &avg, *server_momentum)?;
            buffer = b;
            g
        }
        ServerStrategy::VDistill { distill } => {
            let u = pool()?;
            let members = clients.weights().to_vec();
            let t = make_pseudo_set(&members, arch, u, distill.sharpening())?;
            let w = distill_sgd(&avg, arch, &t, distill.epochs, &distill.sgd(), rng)?;
            ensemble = Some(members);
            teacher = Some(t);
            w
        }
        ServerStrategy::FedBe {
            model_set,
            swa,
            distill,
            server_momentum,
        } => {
            let u = pool()?;
            let init = if *server_momentum > 0.0 {
                let (g, b) = momentum_update(state, &avg, *server_momentum)?;
                buffer = b;
                g
            } else {
                avg
            };
            let members = build_model_set(clients, model_set, rng)?;
            let t = make_pseudo_set(&members, arch, u, distill.sharpening())?;
            let sched = SwaSchedule {
                epochs: distill.epochs,
                batch_size: distill.batch_size,
                ..swa.clone()
            };
            let w = distill_swa(&init, arch, &t, &sched, &distill.sgd(), rng)?;
            ensemble = Some(members);
            teacher = Some(t);
            w
        }
    };
    if !global.is_finite() {
        return Err(Error::Numeric("aggregated global model"));
    }
    Ok(RoundOutcome {
        state: ServerState {
            global,
            momentum_buffer: buffer,
            round: state.round + 1,
        },
        ensemble,
        teacher,
    })
}
