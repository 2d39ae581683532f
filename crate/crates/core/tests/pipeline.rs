use std::path::{Path, PathBuf};
use std::process::Command;

use fedbe::checkpoint;
use fedbe::config::{DatasetConfig, ExperimentConfig, Heterogeneity};
use fedbe::data::{generate_swiss_roll, read_labeled_csv, write_labeled_csv, PartitionKind, SwissRollSpec};
use fedbe::error::Error;
use fedbe::experiment::{prepare_data, run_experiment, run_one_round_study, OneRoundOptions, METRICS_HEADER};
use fedbe::fed::{DistillConfig, ServerStrategy};
use fedbe::metrics::{accuracy, HISTOGRAM_HEADER};
use fedbe::posterior::{ModelSetSpec, PosteriorKind};

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn config(name: &str) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::load(config_path(name)).unwrap();
    cfg.threads = 1;
    cfg
}

fn small_fedbe(rounds: usize) -> ExperimentConfig {
    let mut cfg = config("swiss_roll_fedbe.toml");
    cfg.rounds = rounds;
    if let DatasetConfig::SwissRoll(spec) = &mut cfg.dataset {
        spec.train_per_class = 200;
        spec.test_per_class = 100;
    }
    cfg.partition.step_major_count = 120;
    cfg.partition.step_minor_count = 15;
    cfg
}

#[test]
fn one_round_with_a_single_client() {
    let mut cfg = config("swiss_roll_fedavg.toml");
    cfg.partition.kind = PartitionKind::Iid;
    cfg.partition.client_count = 1;
    cfg.monitor = None;
    let opts = OneRoundOptions::from_config(&cfg, 3);
    let report = run_one_round_study(&cfg, &opts).unwrap();
    assert_eq!(report.client_accs.len(), 1);
    assert_eq!(report.client_ensemble, report.client_accs[0]);
    assert_eq!(report.weight_average, report.client_accs[0]);
    assert!(report.client_ensemble_sgd.is_none(), "no pool, no distillation");
}

#[test]
fn one_round_bayes_set_without_samples_is_the_client_ensemble() {
    let cfg = small_fedbe(1);
    let mut opts = OneRoundOptions::from_config(&cfg, 3);
    opts.bayes = ModelSetSpec {
        samples: 0,
        include_avg: false,
        include_clients: true,
        posterior: PosteriorKind::Gaussian,
    };
    let report = run_one_round_study(&cfg, &opts).unwrap();
    assert_eq!(report.bayes_ensemble, report.client_ensemble);
    assert!(report.bayes_ensemble_swa.is_some());
    assert!(report.to_csv().starts_with("method,none,sgd,swa\n"));
}

#[test]
fn run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_fedbe(3);
    cfg.output_dir = Some(dir.path().to_path_buf());
    cfg.dump_pseudo_labels = true;
    let out = run_experiment(&cfg).unwrap();
    assert_eq!(out.records.len(), 3);

    let metrics = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = metrics.lines().collect();
    assert_eq!(lines[0], METRICS_HEADER);
    assert_eq!(lines.len(), 4);
    for (line, rec) in lines[1..].iter().zip(&out.records) {
        assert_eq!(*line, rec.csv_line());
        assert!(rec.ensemble_test_acc.is_some() && rec.teacher_pseudo_acc.is_some());
        assert!(rec.wall_ms.is_none());
    }

    let resolved = ExperimentConfig::load(dir.path().join("config.resolved")).unwrap();
    assert_eq!(resolved, cfg);

    let model = checkpoint::load(dir.path().join("final.fbe1")).unwrap();
    assert_eq!(model.params().as_slice(), out.final_model.params().as_slice());
    let test = prepare_data(&cfg).unwrap().test;
    let acc = accuracy(&model.forward(test.features()).unwrap(), test.labels()).unwrap();
    assert_eq!(acc, out.records.last().unwrap().global_test_acc);

    let hist = std::fs::read_to_string(dir.path().join("confidence_hist.csv")).unwrap();
    let mut rows = hist.lines();
    assert_eq!(rows.next(), Some(HISTOGRAM_HEADER));
    for tag in ["global", "clients", "ensemble", "samples"] {
        let total: f64 = hist
            .lines()
            .skip(1)
            .filter(|l| l.ends_with(&format!(",{tag}")))
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                f[2].parse::<f64>().unwrap() + f[3].parse::<f64>().unwrap()
            })
            .sum();
        assert!((total - test.len() as f64).abs() < 1e-9, "{tag}: {total}");
    }

    let pseudo = std::fs::read_to_string(dir.path().join("pseudo_labels.csv")).unwrap();
    let mut pl = pseudo.lines();
    assert_eq!(pl.next(), Some("x0,x1,p0,p1,p2"));
    assert_eq!(pl.count(), 120, "20% of 600 training points");
}

#[test]
fn eval_every_thins_records_but_keeps_the_last_round() {
    let mut cfg = config("swiss_roll_fedavg.toml");
    cfg.rounds = 7;
    cfg.eval_every = 3;
    let out = run_experiment(&cfg).unwrap();
    let rounds: Vec<usize> = out.records.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![3, 6, 7]);

    let mut every = cfg.clone();
    every.eval_every = 1;
    let full = run_experiment(&every).unwrap();
    assert_eq!(full.records[5], out.records[1], "evaluation cadence does not change training");
    assert_eq!(full.final_model, out.final_model);
}

#[test]
fn csv_datasets_round_trip_and_train() {
    let dir = tempfile::tempdir().unwrap();
    let spec = SwissRollSpec {
        train_per_class: 60,
        test_per_class: 30,
        turns: 0.62,
        ..Default::default()
    };
    let (train, test) = generate_swiss_roll(&spec).unwrap();
    let (tp, sp) = (dir.path().join("train.csv"), dir.path().join("test.csv"));
    write_labeled_csv(&train, &tp).unwrap();
    write_labeled_csv(&test, &sp).unwrap();
    let back = read_labeled_csv(&tp, None).unwrap();
    assert_eq!(back.features().as_slice(), train.features().as_slice());
    assert_eq!(back.labels(), train.labels());

    let mut cfg = config("swiss_roll_fedavg.toml");
    cfg.dataset = DatasetConfig::Csv {
        train: tp,
        test: sp,
        class_count: None,
    };
    cfg.partition.kind = PartitionKind::Dirichlet;
    cfg.partition.client_count = 4;
    cfg.rounds = 2;
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    assert!(a.records.iter().all(|r| r.ensemble_test_acc.is_some()));
}

#[test]
fn every_strategy_and_client_variant_runs() {
    let base = small_fedbe(2);
    let distill = DistillConfig {
        epochs: 2,
        ..Default::default()
    };
    let strategies = [
        ServerStrategy::FedAvg,
        ServerStrategy::FedAvgM { server_momentum: 0.9 },
        ServerStrategy::VDistill { distill },
    ];
    for strategy in strategies {
        let cfg = ExperimentConfig {
            strategy: strategy.clone(),
            ..base.clone()
        };
        let out = run_experiment(&cfg).unwrap();
        assert!(out.final_model.params().is_finite(), "{strategy:?}");
        let has_teacher = out.records[0].teacher_pseudo_acc.is_some();
        assert_eq!(has_teacher, strategy.needs_unlabeled(), "{strategy:?}");
    }

    let mut prox = base.clone();
    prox.client.prox_mu = 0.1;
    prox.participation_fraction = 0.5;
    prox.heterogeneity = Heterogeneity::Uniform { max_epochs: 2.0 };
    prox.strategy = ServerStrategy::FedAvg;
    let a = run_experiment(&prox).unwrap();
    let b = run_experiment(&prox).unwrap();
    assert_eq!(a.records, b.records);
}

#[test]
fn step_split_over_capacity_is_a_capacity_error() {
    let mut cfg = config("swiss_roll_fedavg.toml");
    cfg.partition.step_major_count = 390;
    match run_experiment(&cfg) {
        Err(Error::Capacity(msg)) => assert!(msg.contains("class"), "{msg}"),
        other => panic!("expected a capacity error, got {other:?}"),
    }
}

#[test]
fn distilling_strategy_without_pool_is_rejected() {
    let mut cfg = small_fedbe(1);
    cfg.server_pool_fraction = 0.0;
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

fn fedbench(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fedbench")).args(args).output().unwrap()
}

#[test]
fn cli_run_and_monitor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_path("swiss_roll_fedavg.toml");
    let out_dir = dir.path().join("run");
    let out = fedbench(&[
        "run",
        "--config",
        cfg.to_str().unwrap(),
        "--seed",
        "3",
        "--threads",
        "2",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    let written = std::fs::read_to_string(out_dir.join("metrics.csv")).unwrap();
    assert_eq!(stdout, written);
    assert_eq!(ExperimentConfig::load(out_dir.join("config.resolved")).unwrap().seed, 3);

    let out = fedbench(&["monitor", "--config", cfg.to_str().unwrap(), "--samples", "4"]);
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().skip(1).all(|l| !l.split(',').nth(2).unwrap().is_empty()));
}

#[test]
fn cli_reports_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "rounds = 0\n").unwrap();
    let out = fedbench(&["run", "--config", bad.to_str().unwrap()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.toml"));
}
