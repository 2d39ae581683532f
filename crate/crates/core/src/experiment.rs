//! Multi-round simulation driver, the ensemble monitor, and the one-round
//! comparison study.
//!
//! Every random draw comes from `RngStream::derive(seed, tag, a, b)` with
//! `(a, b)` set to logical indices (round, client, sample), so neither the
//! thread count nor the evaluation cadence can change a result.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use crate::checkpoint;
use crate::config::{DatasetConfig, ExperimentConfig, Heterogeneity};
use crate::data::{
    generate_swiss_roll, partition, read_labeled_csv, split_labeled, LabeledDataset, Partition,
    UnlabeledDataset,
};
use crate::distill::{distill_sgd, distill_swa, ensemble_predict, make_pseudo_set, SwaSchedule};
use crate::error::{Error, Result};
use crate::fed::{client_update, server_round, DistillConfig, ServerState, ServerStrategy};
use crate::metrics::{accuracy, confidence_histogram, ConfidenceHistogram, HISTOGRAM_HEADER};
use crate::nn::{MlpArch, MlpModel, ParamVector};
use crate::posterior::{build_model_set, weighted_average, ClientWeightSet, ModelSetSpec};
use crate::rng::RngStream;

pub const METRICS_HEADER: &str = "round,global_acc,ensemble_acc,teacher_acc,mean_client_acc,wall_ms";

/// One evaluated round. `round` is 1-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub global_test_acc: f64,
    pub ensemble_test_acc: Option<f64>,
    pub teacher_pseudo_acc: Option<f64>,
    pub mean_client_acc: f64,
    pub wall_ms: Option<u64>,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl RoundRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.round,
            self.global_test_acc,
            opt(self.ensemble_test_acc),
            opt(self.teacher_pseudo_acc),
            self.mean_client_acc,
            opt(self.wall_ms)
        )
    }
}

/// Data after generation, server split, and client partitioning.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub partition: Partition,
    pub test: LabeledDataset,
    pub server_pool: Option<UnlabeledDataset>,
    /// Labels of the server pool, used only for teacher diagnostics.
    pub server_labels: Option<Vec<usize>>,
    pub arch: MlpArch,
}

fn sub_seed(master: u64, tag: &str, sub: u64) -> u64 {
    RngStream::derive(master, tag, sub, 0).next_u64()
}

pub fn prepare_data(cfg: &ExperimentConfig) -> Result<PreparedData> {
    let (train, test) = match &cfg.dataset {
        DatasetConfig::SwissRoll(spec) => {
            let mut spec = spec.clone();
            spec.seed = sub_seed(cfg.seed, "dataset", spec.seed);
            generate_swiss_roll(&spec)?
        }
        DatasetConfig::Csv {
            train,
            test,
            class_count,
        } => {
            let train = read_labeled_csv(train, *class_count)?;
            let test = read_labeled_csv(test, Some(train.class_count()))?;
            (train, test)
        }
    };
    if train.dim() != test.dim() {
        return Err(Error::Config("train and test feature widths differ".into()));
    }
    let (client_pool, server_pool, server_labels) = if cfg.server_pool_fraction > 0.0 {
        let seed = sub_seed(cfg.seed, "server-pool", 0);
        let (pool, held) = split_labeled(&train, cfg.server_pool_fraction, seed)?;
        let labels = held.labels().to_vec();
        (pool, Some(UnlabeledDataset::new(held.features().clone())?), Some(labels))
    } else {
        (train, None, None)
    };
    let mut pspec = cfg.partition.clone();
    pspec.seed = sub_seed(cfg.seed, "partition", pspec.seed);
    let partition = partition(&client_pool, &pspec)?;
    let arch = cfg.model.arch(test.dim(), test.class_count())?;
    Ok(PreparedData {
        partition,
        test,
        server_pool,
        server_labels,
        arch,
    })
}

/// Per-run results.
#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub records: Vec<RoundRecord>,
    pub final_model: MlpModel,
    /// `(tag, histogram, models pooled)` on the test set after the last round.
    pub histograms: Vec<(String, ConfidenceHistogram, usize)>,
}

fn thread_pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn model_acc(w: &ParamVector, arch: &MlpArch, test: &LabeledDataset) -> Result<f64> {
    let probs = MlpModel::unflatten(w.clone(), arch)?.forward(test.features())?;
    accuracy(&probs, test.labels())
}

fn pooled_histogram(
    models: &[ParamVector],
    arch: &MlpArch,
    test: &LabeledDataset,
    bins: usize,
) -> Result<ConfidenceHistogram> {
    let mut pooled = ConfidenceHistogram::empty(arch.class_count(), bins);
    for w in models {
        let probs = MlpModel::unflatten(w.clone(), arch)?.forward(test.features())?;
        pooled.merge(&confidence_histogram(&probs, test.labels(), bins)?)?;
    }
    Ok(pooled)
}

struct Outputs {
    metrics: BufWriter<File>,
}

impl Outputs {
    fn open(dir: &Path, cfg: &ExperimentConfig) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("config.resolved"), cfg.to_toml())?;
        let mut metrics = BufWriter::new(File::create(dir.join("metrics.csv"))?);
        writeln!(metrics, "{METRICS_HEADER}")?;
        metrics.flush()?;
        Ok(Outputs { metrics })
    }

    fn record(&mut self, r: &RoundRecord) -> Result<()> {
        writeln!(self.metrics, "{}", r.csv_line())?;
        self.metrics.flush()?;
        Ok(())
    }
}

pub fn write_histograms(path: impl AsRef<Path>, hists: &[(String, ConfidenceHistogram, usize)]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HISTOGRAM_HEADER}")?;
    for (tag, h, models) in hists {
        let n = *models as f64;
        for k in 0..h.bins() {
            writeln!(
                out,
                "{},{},{},{},{}",
                h.bin_edges[k],
                h.bin_edges[k + 1],
                h.correct_counts[k] as f64 / n,
                h.incorrect_counts[k] as f64 / n,
                tag
            )?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Runs the full simulation described by `cfg`, writing outputs when
/// `cfg.output_dir` is set.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let data = prepare_data(cfg)?;
    let pool = thread_pool(cfg.threads)?;
    pool.install(|| run_prepared(cfg, &data))
}

/// FedAvg with a Bayesian ensemble built and scored every evaluated round,
/// never fed back into training.
pub fn monitor_bayesian_ensemble(cfg: &ExperimentConfig, spec: ModelSetSpec) -> Result<ExperimentOutput> {
    if cfg.strategy != ServerStrategy::FedAvg {
        return Err(Error::Config("monitoring requires the fed_avg strategy".into()));
    }
    let cfg = ExperimentConfig {
        monitor: Some(spec),
        ..cfg.clone()
    };
    run_experiment(&cfg)
}

fn run_prepared(cfg: &ExperimentConfig, data: &PreparedData) -> Result<ExperimentOutput> {
    let arch = &data.arch;
    let clients = &data.partition.clients;
    let n_clients = clients.len();
    let mut outputs = match &cfg.output_dir {
        Some(dir) => Some(Outputs::open(dir, cfg)?),
        None => None,
    };

    let init = MlpModel::init_glorot(arch.clone(), &mut RngStream::derive(cfg.seed, "init", 0, 0));
    let mut state = ServerState::new(init.into_params());
    let mut records = Vec::new();
    let mut last_clients: Vec<ParamVector> = Vec::new();
    let mut last_ensemble: Option<(Vec<ParamVector>, usize)> = None;
    let mut last_teacher = None;
    let per_round = cfg.clients_per_round().min(n_clients);

    for r in 0..cfg.rounds {
        let started = Instant::now();
        let mut sampled = if per_round == n_clients {
            (0..n_clients).collect::<Vec<_>>()
        } else {
            RngStream::derive(cfg.seed, "client-sample", r as u64, 0)
                .sample_without_replacement(n_clients, per_round)
        };
        sampled.sort_unstable();
        sampled.retain(|&i| {
            let empty = clients[i].is_empty();
            if empty {
                warn!("round {}: client {i} has no data and is skipped", r + 1);
            }
            !empty
        });
        if sampled.is_empty() {
            return Err(Error::Round {
                round: r + 1,
                source: Box::new(Error::Capacity("no sampled client holds data".into())),
            });
        }

        let step_size = cfg.client.step_size(r, cfg.rounds);
        let round_err = |e: Error| Error::Round {
            round: r + 1,
            source: Box::new(e),
        };
        let updates: Vec<ParamVector> = sampled
            .par_iter()
            .map(|&i| {
                let epochs = match cfg.heterogeneity {
                    Heterogeneity::Off => cfg.client.local_epochs as f64,
                    Heterogeneity::Uniform { max_epochs } => {
                        let u = RngStream::derive(cfg.seed, "straggler", r as u64, i as u64).uniform();
                        max_epochs * (1.0 - u)
                    }
                };
                let mut rng = RngStream::derive(cfg.seed, "client", r as u64, i as u64);
                client_update(&state.global, arch, &clients[i], &cfg.client, epochs, step_size, &mut rng)
            })
            .collect::<Result<_>>()
            .map_err(round_err)?;
        let sizes = sampled.iter().map(|&i| clients[i].len()).collect();
        let weight_set = ClientWeightSet::new(updates, sizes).map_err(round_err)?;

        let monitor_set = match &cfg.monitor {
            Some(spec) => {
                let mut rng = RngStream::derive(cfg.seed, "monitor", r as u64, 0);
                Some((build_model_set(&weight_set, spec, &mut rng).map_err(round_err)?, spec.samples))
            }
            None => None,
        };

        let mut server_rng = RngStream::derive(cfg.seed, "server", r as u64, 0);
        let outcome = server_round(
            &state,
            &weight_set,
            &cfg.strategy,
            data.server_pool.as_ref(),
            arch,
            &mut server_rng,
        )
        .map_err(round_err)?;
        state = outcome.state;

        let ensemble = monitor_set.or_else(|| {
            let samples = match &cfg.strategy {
                ServerStrategy::FedBe { model_set, .. } => model_set.samples,
                _ => 0,
            };
            outcome.ensemble.map(|e| (e, samples))
        });

        let evaluate = (r + 1) % cfg.eval_every == 0 || r + 1 == cfg.rounds;
        if evaluate {
            let global_acc = model_acc(&state.global, arch, &data.test).map_err(round_err)?;
            let ensemble_acc = match &ensemble {
                Some((members, _)) => {
                    let probs = ensemble_predict(members, arch, data.test.features()).map_err(round_err)?;
                    Some(accuracy(&probs, data.test.labels()).map_err(round_err)?)
                }
                None => None,
            };
            let teacher_acc = match (&outcome.teacher, &data.server_labels) {
                (Some(t), Some(labels)) => Some(accuracy(t.soft_targets(), labels).map_err(round_err)?),
                _ => None,
            };
            let client_accs: Vec<f64> = weight_set
                .weights()
                .par_iter()
                .map(|w| model_acc(w, arch, &data.test))
                .collect::<Result<_>>()
                .map_err(round_err)?;
            let record = RoundRecord {
                round: r + 1,
                global_test_acc: global_acc,
                ensemble_test_acc: ensemble_acc,
                teacher_pseudo_acc: teacher_acc,
                mean_client_acc: client_accs.iter().sum::<f64>() / client_accs.len() as f64,
                wall_ms: cfg.record_wall_time.then(|| started.elapsed().as_millis() as u64),
            };
            info!("{}", record.csv_line());
            if let Some(out) = outputs.as_mut() {
                out.record(&record)?;
            }
            records.push(record);
        }

        last_clients = weight_set.weights().to_vec();
        last_ensemble = ensemble;
        last_teacher = outcome.teacher;
    }

    let final_model = MlpModel::unflatten(state.global, arch)?;
    let bins = cfg.histogram_bins;
    let mut histograms = vec![
        (
            "global".to_string(),
            pooled_histogram(std::slice::from_ref(final_model.params()), arch, &data.test, bins)?,
            1,
        ),
        (
            "clients".to_string(),
            pooled_histogram(&last_clients, arch, &data.test, bins)?,
            last_clients.len(),
        ),
    ];
    if let Some((members, samples)) = &last_ensemble {
        let probs = ensemble_predict(members, arch, data.test.features())?;
        histograms.push((
            "ensemble".to_string(),
            confidence_histogram(&probs, data.test.labels(), bins)?,
            1,
        ));
        if *samples > 0 {
            let sampled = &members[members.len() - samples..];
            histograms.push((
                "samples".to_string(),
                pooled_histogram(sampled, arch, &data.test, bins)?,
                *samples,
            ));
        }
    }

    if let Some(dir) = &cfg.output_dir {
        checkpoint::save(&final_model, dir.join("final.fbe1"))?;
        write_histograms(dir.join("confidence_hist.csv"), &histograms)?;
        if cfg.dump_pseudo_labels {
            match &last_teacher {
                Some(t) => t.write_csv(dir.join("pseudo_labels.csv"))?,
                None => warn!("no pseudo-labeled set to dump for strategy {}", cfg.strategy.name()),
            }
        }
    }

    Ok(ExperimentOutput {
        records,
        final_model,
        histograms,
    })
}

/// Settings for the one-round comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct OneRoundOptions {
    pub local_epochs: usize,
    /// Model set for the Bayesian ensemble.
    pub bayes: ModelSetSpec,
    pub distill: DistillConfig,
    pub swa: SwaSchedule,
}

impl OneRoundOptions {
    /// Distillation settings taken from the configured strategy when it has
    /// them.
    pub fn from_config(cfg: &ExperimentConfig, local_epochs: usize) -> Self {
        let (bayes, distill, swa) = match &cfg.strategy {
            ServerStrategy::FedBe {
                model_set,
                distill,
                swa,
                ..
            } => (*model_set, distill.clone(), swa.clone()),
            ServerStrategy::VDistill { distill } => {
                (ModelSetSpec::default(), distill.clone(), SwaSchedule::default())
            }
            _ => (ModelSetSpec::default(), DistillConfig::default(), SwaSchedule::default()),
        };
        OneRoundOptions {
            local_epochs,
            bayes,
            distill,
            swa,
        }
    }
}

/// Test accuracies of one round of training combined seven ways. The
/// distilled entries are `None` without a server pool.
#[derive(Debug, Clone, PartialEq)]
pub struct OneRoundReport {
    pub weight_average: f64,
    pub client_ensemble: f64,
    pub client_ensemble_sgd: Option<f64>,
    pub client_ensemble_swa: Option<f64>,
    pub bayes_ensemble: f64,
    pub bayes_ensemble_sgd: Option<f64>,
    pub bayes_ensemble_swa: Option<f64>,
    pub client_accs: Vec<f64>,
}

impl OneRoundReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,none,sgd,swa\n");
        s.push_str(&format!("weight_average,{},,\n", self.weight_average));
        s.push_str(&format!(
            "client_ensemble,{},{},{}\n",
            self.client_ensemble,
            opt(self.client_ensemble_sgd),
            opt(self.client_ensemble_swa)
        ));
        s.push_str(&format!(
            "bayes_ensemble,{},{},{}\n",
            self.bayes_ensemble,
            opt(self.bayes_ensemble_sgd),
            opt(self.bayes_ensemble_swa)
        ));
        s
    }
}

pub fn run_one_round_study(cfg: &ExperimentConfig, opts: &OneRoundOptions) -> Result<OneRoundReport> {
    let mut cfg = cfg.clone();
    cfg.rounds = 1;
    cfg.validate()?;
    if opts.local_epochs == 0 {
        return Err(Error::Config("one-round study needs local_epochs > 0".into()));
    }
    let data = prepare_data(&cfg)?;
    thread_pool(cfg.threads)?.install(|| one_round(&cfg, &data, opts))
}

fn one_round(cfg: &ExperimentConfig, data: &PreparedData, opts: &OneRoundOptions) -> Result<OneRoundReport> {
    let arch = &data.arch;
    let test = &data.test;
    let init = MlpModel::init_glorot(arch.clone(), &mut RngStream::derive(cfg.seed, "init", 0, 0)).into_params();
    let members: Vec<usize> = (0..data.partition.clients.len())
        .filter(|&i| !data.partition.clients[i].is_empty())
        .collect();
    let weights: Vec<ParamVector> = members
        .par_iter()
        .map(|&i| {
            let mut rng = RngStream::derive(cfg.seed, "client", 0, i as u64);
            client_update(
                &init,
                arch,
                &data.partition.clients[i],
                &cfg.client,
                opts.local_epochs as f64,
                cfg.client.base_step_size,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let sizes = members.iter().map(|&i| data.partition.clients[i].len()).collect();
    let set = ClientWeightSet::new(weights, sizes)?;
    let avg = weighted_average(&set);

    let ensemble_acc = |models: &[ParamVector]| -> Result<f64> {
        accuracy(&ensemble_predict(models, arch, test.features())?, test.labels())
    };
    let client_models = set.weights().to_vec();
    let bayes_models =
        build_model_set(&set, &opts.bayes, &mut RngStream::derive(cfg.seed, "one-round-posterior", 0, 0))?;

    let distilled = |models: &[ParamVector], tag: u64| -> Result<(Option<f64>, Option<f64>)> {
        let Some(pool) = &data.server_pool else {
            return Ok((None, None));
        };
        let teacher = make_pseudo_set(models, arch, pool, opts.distill.sharpening())?;
        let sgd = distill_sgd(
            &avg,
            arch,
            &teacher,
            opts.distill.epochs,
            &opts.distill.sgd(),
            &mut RngStream::derive(cfg.seed, "one-round-sgd", tag, 0),
        )?;
        let sched = SwaSchedule {
            epochs: opts.distill.epochs,
            batch_size: opts.distill.batch_size,
            ..opts.swa.clone()
        };
        let swa = distill_swa(
            &avg,
            arch,
            &teacher,
            &sched,
            &opts.distill.sgd(),
            &mut RngStream::derive(cfg.seed, "one-round-swa", tag, 0),
        )?;
        Ok((Some(model_acc(&sgd, arch, test)?), Some(model_acc(&swa, arch, test)?)))
    };
    let (client_sgd, client_swa) = distilled(&client_models, 0)?;
    let (bayes_sgd, bayes_swa) = distilled(&bayes_models, 1)?;

    let report = OneRoundReport {
        weight_average: model_acc(&avg, arch, test)?,
        client_ensemble: ensemble_acc(&client_models)?,
        client_ensemble_sgd: client_sgd,
        client_ensemble_swa: client_swa,
        bayes_ensemble: ensemble_acc(&bayes_models)?,
        bayes_ensemble_sgd: bayes_sgd,
        bayes_ensemble_swa: bayes_swa,
        client_accs: client_models
            .iter()
            .map(|w| model_acc(w, arch, test))
            .collect::<Result<_>>()?,
    };
    if let Some(dir) = &cfg.output_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("one_round.csv"), report.to_csv())?;
    }
    Ok(report)
}
