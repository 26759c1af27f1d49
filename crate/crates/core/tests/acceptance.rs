//! Prints one verdict line per acceptance criterion and fails if any fails.

use hexcool::analysis::default_threads;
use hexcool::validation::run_all;

fn main() {
    let outcomes = run_all(default_threads());
    for o in &outcomes {
        println!("{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
