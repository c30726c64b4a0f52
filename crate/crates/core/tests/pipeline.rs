use sarid::decode::{decode_all, snippet_plan};
use sarid::experiment::{
    median, oracle_counts, report_csv, run_convergence_sweep, run_experiment, run_seed,
    write_report, ExperimentConfig, RunRecord,
};
use sarid::ptm::estimate_ptm;
use sarid::sigma::SigmaObjective;
use sarid::simulate::{
    noise_to_output_ratio, sample_markov_chain, simulate, InputKind, SimulationOptions,
};
use sarid::veronese::{AccumulateOptions, VeroneseSpec};
use sarid::{NoiseSpec, SarModel, TransitionMatrix};

fn example_ptm() -> TransitionMatrix {
    TransitionMatrix::from_rows(&[vec![0.1837, 0.8163], vec![0.3424, 0.6576]]).unwrap()
}

fn gaussian_run(sigma2: f64, len: usize, seed: u64) -> sarid::Dataset {
    let opts = SimulationOptions::new(len, seed).with_input(InputKind::Gaussian);
    simulate(
        &SarModel::two_mode_example(),
        &example_ptm(),
        &NoiseSpec::normal(sigma2).unwrap(),
        &opts,
    )
    .unwrap()
}

fn without_time(runs: &[RunRecord]) -> Vec<RunRecord> {
    runs.iter()
        .cloned()
        .map(|mut r| {
            r.wall_time = 0.0;
            r
        })
        .collect()
}

#[test]
fn chain_frequencies_follow_the_matrix() {
    let p = example_ptm();
    let delta = sample_markov_chain(&p, 1_000_000, &[0.5, 0.5], 9).unwrap();
    let mut n = [[0u64; 2]; 2];
    for w in delta.windows(2) {
        n[w[0]][w[1]] += 1;
    }
    for (i, counts) in n.iter().enumerate() {
        let row = (counts[0] + counts[1]) as f64;
        for (j, &c) in counts.iter().enumerate() {
            let f = c as f64 / row;
            assert!((f - p.get(i, j)).abs() < 0.005, "P[{i}][{j}] freq {f}");
        }
    }
}

#[test]
fn noise_ratio_at_low_noise() {
    let g: Vec<f64> = (1..=5)
        .map(|s| noise_to_output_ratio(&gaussian_run(0.01, 1_000_000, s)).unwrap())
        .collect();
    let m = median(&g).unwrap();
    assert!((m - 0.0888).abs() < 0.03, "gamma {g:?}");
}

#[test]
fn corrected_matrix_is_nearly_singular_at_true_sigma() {
    let spec = VeroneseSpec::for_model(2, 1, 1).unwrap();
    let clean = gaussian_run(0.0, 10_000, 4);
    let obj = SigmaObjective::from_dataset(&clean, &spec, AccumulateOptions::default()).unwrap();
    let m = obj.matrix(0.0).unwrap();
    let sv = m.singular_values();
    assert!(sv.min() <= 1e-8 * sv.max());

    let noisy = gaussian_run(0.01, 1_000_000, 4);
    let obj = SigmaObjective::from_dataset(&noisy, &spec, AccumulateOptions::default()).unwrap();
    let at_zero = obj.eval(0.0).unwrap().0;
    let at_truth = obj.eval(0.1).unwrap().0;
    assert!(
        at_truth * 10.0 <= at_zero,
        "at 0: {at_zero}, at 0.1: {at_truth}"
    );
}

#[test]
fn decoding_with_true_parameters() {
    let ds = gaussian_run(0.01, 300_003, 2);
    let plan = snippet_plan(ds.len(), 1, 2).unwrap();
    assert_eq!(plan.starts.len(), 100_001);
    let out = decode_all(&ds, &SarModel::two_mode_example(), 0.1, &plan).unwrap();
    let acc = out.accuracy(&ds).unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
    assert_eq!(out.counts.total(), 100_001);
}

#[test]
fn low_noise_experiment_recovers_coefficients() {
    let cfg = ExperimentConfig::new(vec![0.01], vec![1_000_000], vec![1, 2, 3, 4, 5]);
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.failures(), 0);
    for r in &rep.runs {
        assert!(
            r.max_coefficient_error.unwrap() <= 0.05,
            "seed {} error {:?}",
            r.seed,
            r.max_coefficient_error
        );
        let s = r.sigma_estimate.unwrap();
        assert!((s - 0.1).abs() < 0.02, "seed {} sigma {s}", r.seed);
    }
    assert!(rep.medians()[0].2.unwrap() <= 0.08);
}

#[test]
fn high_noise_runs_complete() {
    let cfg = ExperimentConfig::new(vec![0.29], vec![1_000_000], vec![1, 2, 3]);
    let rep = run_experiment(&cfg).unwrap();
    assert_eq!(rep.failures(), 0);
    for r in &rep.runs {
        let f = r.frobenius.unwrap();
        assert!(f.is_finite() && f < 0.5, "seed {} error {f}", r.seed);
        assert!(r.gamma.unwrap() > 0.3);
    }
}

#[test]
fn noiseless_runs_are_exact() {
    let cfg = ExperimentConfig::new(vec![0.0], vec![10_000], vec![1, 2]);
    let rep = run_experiment(&cfg).unwrap();
    for r in &rep.runs {
        assert!(r.ok(), "{:?}", r.error);
        assert_eq!(r.sigma_estimate, Some(0.0));
        assert_eq!(r.sigma_status.as_deref(), Some("threshold-hit"));
        assert_eq!(r.decode_accuracy, Some(1.0));
        let rs = run_seed(r.seed, 0.0, 10_000);
        assert_eq!(rs, r.run_seed);
        let model = cfg.model_for_run(rs).unwrap();
        let ptm = cfg.ptm_for_run(2, rs).unwrap();
        let ds = simulate(
            &model,
            &ptm,
            &NoiseSpec::normal(0.0).unwrap(),
            &SimulationOptions::new(10_000, rs).with_input(cfg.input_kind().unwrap()),
        )
        .unwrap();
        let oracle = estimate_ptm(&oracle_counts(&ds, 2, 2).unwrap(), 0.0).unwrap();
        assert_eq!(r.estimated_ptm.as_ref().unwrap(), &oracle.ptm.rows());
    }
}

#[test]
fn reports_are_reproducible() {
    let mut cfg = ExperimentConfig::new(vec![0.01, 0.05], vec![2_000, 5_000], vec![1, 2]);
    cfg.ptm = sarid::experiment::PtmSource::Named("uniform".into());
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&cfg).unwrap();
    assert_eq!(report_csv(&a).unwrap(), report_csv(&b).unwrap());

    let dir = tempfile::tempdir().unwrap();
    write_report(&a, dir.path(), "exp").unwrap();
    let first = std::fs::read(dir.path().join("exp.csv")).unwrap();
    write_report(&b, dir.path(), "exp").unwrap();
    assert_eq!(first, std::fs::read(dir.path().join("exp.csv")).unwrap());
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("exp.json")).unwrap()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), 8);
}

#[test]
fn sweep_runs_share_one_simulation() {
    let short = ExperimentConfig::new(vec![0.03], vec![500, 2_000], vec![3, 4]);
    let long = ExperimentConfig::new(vec![0.03], vec![500, 2_000, 8_000], vec![3, 4]);
    let a = run_convergence_sweep(&short).unwrap();
    let b = run_convergence_sweep(&long).unwrap();
    let pick = |rep: &sarid::experiment::ExperimentReport, n: usize| {
        without_time(
            &rep.runs
                .iter()
                .filter(|r| r.len == n)
                .cloned()
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(pick(&a, 500), pick(&b, 500));
    assert_eq!(pick(&a, 2_000), pick(&b, 2_000));
    for seed in [3, 4] {
        let rs: Vec<u64> = b
            .runs
            .iter()
            .filter(|r| r.seed == seed)
            .map(|r| r.run_seed)
            .collect();
        assert!(rs.iter().all(|&x| x == run_seed(seed, 0.03, 0)));
    }
    assert!(run_convergence_sweep(&ExperimentConfig::new(vec![0.03], vec![500], vec![1])).is_err());
}

#[test]
fn sweep_error_shrinks_with_length() {
    let cfg = ExperimentConfig::new(vec![0.03], vec![100, 1_000_000], vec![1, 2, 3, 4, 5]);
    let rep = run_convergence_sweep(&cfg).unwrap();
    let med = |n: usize| {
        let v: Vec<f64> = rep
            .runs
            .iter()
            .filter(|r| r.len == n)
            .filter_map(|r| r.frobenius)
            .collect();
        median(&v).unwrap()
    };
    let (small, large) = (med(100), med(1_000_000));
    assert!((small - 0.24).abs() <= 0.15, "N=100 median {small}");
    assert!((large - 0.066).abs() <= 0.04, "N=1e6 median {large}");
}
