//! Prints one PASS/FAIL line per acceptance criterion and exits non-zero if
//! any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use sgshift_core::bench::{
    bound_accuracy, convergence_scaling, detection_power, determinism, fdr_control, knockoff_fidelity,
    method_ordering, method_sweep, recovery_elbow, solver_correctness, BenchOptions, CriterionOutcome,
    SWEEP_REPLICATES,
};
use sgshift_core::methods::Method;

const SEED: u64 = 20240601;
const RUNTIME_BUDGET: Duration = Duration::from_secs(600);

fn main() -> ExitCode {
    let opts = BenchOptions { seed: SEED, scale: 1.0 };
    let started = Instant::now();
    let mut outcomes: Vec<CriterionOutcome> = Vec::new();
    let mut report = |c: CriterionOutcome| {
        println!("{}", c.line());
        outcomes.push(c);
    };

    // the benchmark sweep runs on one thread so its timings are the
    // single-threaded runtime
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("thread pool");
    let sweep = single
        .install(|| method_sweep(&opts, &Method::ALL, SWEEP_REPLICATES))
        .expect("benchmark sweep");
    let runtime = sweep.elapsed[&Method::SgShiftK] + sweep.elapsed[&Method::SgShiftKA];
    let mut power = detection_power(&sweep);
    power.check("runtime_seconds_single_thread", runtime.as_secs_f64(), runtime <= RUNTIME_BUDGET);
    report(power);
    report(method_ordering(&sweep));

    report(fdr_control(&opts).expect("criterion 3"));
    report(convergence_scaling(&opts).expect("criterion 4"));
    report(knockoff_fidelity(&opts).expect("criterion 5"));
    report(recovery_elbow(&opts).expect("criterion 6"));
    report(solver_correctness(&opts).expect("criterion 7"));
    report(bound_accuracy().expect("criterion 8"));
    report(determinism(SEED).expect("criterion 9"));

    let failed: Vec<u32> = outcomes.iter().filter(|c| !c.passed).map(|c| c.id).collect();
    println!(
        "acceptance: {} of {} criteria passed in {:.0}s",
        outcomes.len() - failed.len(),
        outcomes.len(),
        started.elapsed().as_secs_f64()
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failed criteria {failed:?}");
        ExitCode::FAILURE
    }
}
