//! Runs one named experiment and prints its report table.
//!
//! `cargo run --release -p mpgne --example bench -- nonmono18 [N]`

use mpgne::evaluate::bench::{run_experiment, Experiment};
use mpgne::evaluate::reports_to_table;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let name = args.first().map(String::as_str).unwrap_or("nonmono18");
    let n = args.get(1).map(|v| v.parse()).transpose()?;
    let exp = Experiment::named(name, n)?;
    let r = run_experiment(&exp)?;
    print!("{}", reports_to_table(&r.reports));
    println!("train {:.1}s (values {:.1}s)", r.train_seconds, r.value_seconds);
    if let Some(t) = r.solver_time {
        println!("solver {:.3e}s/solve, predict {:.3e}s/query", t, r.reports[0].predict_time);
    }
    Ok(())
}
