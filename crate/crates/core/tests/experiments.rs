use std::collections::BTreeMap;

use mcsa_core::distributions::kl_gaussian;
use mcsa_core::experiments::{
    aggregate_quantiles, build_target, read_records, records_to_string, run_experiment, ExperimentConfig, RunRecord,
};
use mcsa_core::VariationalParams;

fn run(text: &str) -> Vec<RunRecord> {
    run_experiment(&ExperimentConfig::parse(text).unwrap()).unwrap().records
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

#[test]
fn zero_iterations_record_only_the_initial_kl() {
    let records = run("experiment = gaussian_convergence\ndim = 1\niterations = 0\nrepetitions = 3\nbudgets = 4\n");
    let cfg = ExperimentConfig::parse("experiment = gaussian_convergence\ndim = 1").unwrap();
    let initial = kl_gaussian(&build_target(&cfg, 0).unwrap(), &VariationalParams::standard(1)).unwrap();
    assert_eq!(records.len(), 4 * 3);
    for r in &records {
        assert_eq!(r.iteration, 0);
        assert_eq!(r.kl, Some(initial));
        assert!(!r.diverged);
    }
}

#[test]
fn same_seed_same_bytes() {
    let text = "experiment = variance_simulation\nnum_samples = 256\nbudgets = 4, 8\nseed = 3\n";
    let a = records_to_string(&run(text)).unwrap();
    let b = records_to_string(&run(text)).unwrap();
    assert_eq!(a, b);
    let c = records_to_string(&run(&text.replace("seed = 3", "seed = 4"))).unwrap();
    assert_ne!(a, c);
}

#[test]
fn csv_round_trips_for_every_experiment() {
    for text in [
        "experiment = gaussian_convergence\ndim = 2\niterations = 40\nrepetitions = 2\nmethods = MSC, ELBO\n",
        "experiment = variance_simulation\nnum_samples = 64\nbudgets = 4\n",
        "experiment = gradient_variance\ndim = 2\niterations = 20\nrepetitions = 1\nnum_chains = 4\nbudgets = 4\n",
        "experiment = stepsize_sweep\ndim = 2\niterations = 20\nrepetitions = 1\nstepsizes = 0.01, 10\n",
    ] {
        let records = run(text);
        let first = records_to_string(&records).unwrap();
        let parsed = read_records(&first).unwrap();
        assert_eq!(parsed, records);
        assert_eq!(records_to_string(&parsed).unwrap(), first);
        assert!(records.iter().all(|r| r.kl.is_none_or(|k| k >= 0.0)));
    }
}

#[test]
fn vanishing_stepsize_leaves_kl_unchanged() {
    let records = run(
        "experiment = stepsize_sweep\ndim = 5\niterations = 200\nrepetitions = 2\nstepsizes = 1e-12\noptimizers = sgd, adam\n",
    );
    let cfg = ExperimentConfig::parse("experiment = stepsize_sweep\ndim = 5").unwrap();
    let initial = kl_gaussian(&build_target(&cfg, 0).unwrap(), &VariationalParams::standard(5)).unwrap();
    for r in records {
        let kl = r.kl.unwrap();
        assert!((kl - initial).abs() <= 1e-6 * initial, "{kl} vs {initial}");
    }
}

#[test]
fn unstable_runs_are_marked_not_nan() {
    let records = run(
        "experiment = stepsize_sweep\ndim = 5\niterations = 300\nrepetitions = 2\nstepsizes = 10, 1000\noptimizers = sgd\n\
         methods = MSC, JSA, PMCSA, ELBO\n",
    );
    let text = records_to_string(&records).unwrap();
    assert!(!text.to_ascii_lowercase().contains("nan"));
    assert!(!text.contains("inf"));
    assert!(records.iter().any(|r| r.diverged));
    for r in &records {
        assert!(r.diverged || r.kl.is_some_and(f64::is_finite));
    }
}

#[test]
fn duplicated_replica_seeds_give_zero_variance() {
    let records = run(
        "experiment = gradient_variance\ndim = 3\niterations = 30\nrepetitions = 1\nnum_chains = 2\n\
         duplicate_replica_seeds = true\nbudgets = 4\n",
    );
    assert!(!records.is_empty());
    for r in records {
        assert_eq!(r.grad_variance, Some(0.0));
    }
}

#[test]
fn quantiles_of_one_to_hundred() {
    let mut csv = String::from("method,N,kl\n");
    for v in 1..=100 {
        csv.push_str(&format!("MSC,4,{v}\n"));
    }
    let out = aggregate_quantiles(&csv, &["method", "N"], "kl", &[0.5]).unwrap();
    let median: f64 = out.lines().nth(1).unwrap().split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(median, 50.5);
}

#[test]
fn cisrb_variance_grows_with_budget_when_far_from_target() {
    let records =
        run("experiment = variance_simulation\nmean_shifts = 4\nbudgets = 4, 64\nmethods = MSCRB\nseed = 11\n");
    let v: Vec<f64> = records.iter().map(|r| r.grad_variance.unwrap()).collect();
    assert!(v[1] > v[0], "{v:?}");
}

#[test]
fn pimh_variance_decreases_with_budget_at_zero_shift() {
    let records = run("experiment = variance_simulation\nmean_shifts = 0\nseed = 12\n");
    let pimh: Vec<f64> = records
        .iter()
        .filter(|r| r.method == "PIMH")
        .map(|r| r.grad_variance.unwrap())
        .collect();
    assert!(records.iter().all(|r| r.grad_variance.unwrap().is_finite()));
    assert!(pimh.windows(2).all(|w| w[1] < w[0]), "{pimh:?}");
}

fn median_trace(records: &[RunRecord], method: &str, n: usize) -> Vec<f64> {
    let mut by_iter: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == method && r.n == n) {
        by_iter
            .entry(r.iteration)
            .or_default()
            .push(r.kl.unwrap_or(f64::INFINITY));
    }
    by_iter.into_values().map(median).collect()
}

#[test]
fn desk_scale_convergence() {
    let records = run(
        "experiment = gaussian_convergence\ndim = 20\niterations = 5000\nrepetitions = 10\n\
         methods = MSC, PMCSA\nbudgets = 4, 64\nseed = 21\n",
    );
    let final_kl = |method: &str, n: usize| *median_trace(&records, method, n).last().unwrap();
    assert!(final_kl("PMCSA", 64) < final_kl("MSC", 64));
    let upticks = |n: usize| {
        median_trace(&records, "PMCSA", n)
            .windows(2)
            .filter(|w| w[1] > w[0])
            .count()
    };
    assert!(upticks(64) < upticks(4), "{} vs {}", upticks(64), upticks(4));
    for (method, n) in [("MSC", 4), ("MSC", 64), ("PMCSA", 4), ("PMCSA", 64)] {
        let trace = median_trace(&records, method, n);
        assert!(trace.last() < trace.first());
    }
}

#[test]
fn desk_scale_gradient_variance() {
    let records = run(
        "experiment = gradient_variance\ndim = 10\nnu = 100\niterations = 300\nrepetitions = 4\nnum_chains = 128\n\
         methods = MSC, PMCSA\nbudgets = 8, 32, 128\nseed = 22\n",
    );
    let last = records.iter().map(|r| r.iteration).max().unwrap();
    let final_var = |method: &str, n: usize| {
        median(
            records
                .iter()
                .filter(|r| r.method == method && r.n == n && r.iteration == last)
                .map(|r| r.grad_variance.unwrap())
                .collect(),
        )
    };
    let pm: Vec<f64> = [8, 32, 128].iter().map(|&n| final_var("PMCSA", n)).collect();
    let msc: Vec<f64> = [8, 32, 128].iter().map(|&n| final_var("MSC", n)).collect();
    assert!(pm[0] > pm[1] && pm[1] > pm[2], "{pm:?}");
    let spread = msc.iter().cloned().fold(0.0, f64::max) / msc.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread <= 2.0, "{msc:?}");
}

/// Number of (optimizer, γ) cells whose median final KL is below twice the
/// method's best median for that optimizer.
fn robust_cells(records: &[RunRecord], method: &str) -> usize {
    let mut cells: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.method == method) {
        cells
            .entry(r.experiment.clone())
            .or_default()
            .push(r.kl.filter(|_| !r.diverged).unwrap_or(f64::INFINITY));
    }
    let mut by_optimizer: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for (exp, kls) in cells {
        let optimizer = exp.split('/').nth(1).unwrap().to_string();
        by_optimizer.entry(optimizer).or_default().push(median(kls));
    }
    by_optimizer
        .values()
        .map(|meds| {
            let best = meds.iter().cloned().fold(f64::INFINITY, f64::min);
            meds.iter().filter(|&&m| m < 2.0 * best).count()
        })
        .sum()
}

#[test]
fn desk_scale_stepsize_sweep() {
    let records = run(
        "experiment = stepsize_sweep\ndim = 20\nnu = 100\niterations = 2000\nrepetitions = 5\n\
         methods = MSC, JSA, PMCSA\nseed = 23\n",
    );
    let pm = robust_cells(&records, "PMCSA");
    let msc = robust_cells(&records, "MSC");
    let jsa = robust_cells(&records, "JSA");
    println!("cells within 2x of the best: PMCSA {pm}, MSC {msc}, JSA {jsa}");
    assert!(pm > msc && pm > jsa, "PMCSA {pm}, MSC {msc}, JSA {jsa}");
}
