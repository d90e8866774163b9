//! Sweeps the fair and remunerative cane price over four levels and three
//! seeds, then writes the plot files to a temporary directory.
//!
//! cargo run --release --example frp_sweep

use canesim::output::emit_sweep;
use canesim::scenario::load_scenario;
use canesim::sweep::{run_sweep, Metric, SweepSpec};

fn main() -> canesim::Result<()> {
    let base = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/default.toml"))?;
    let spec = SweepSpec {
        base,
        param: "policy.frp".into(),
        values: vec![200.0, 275.0, 350.0, 450.0],
        seeds: vec![1, 2, 3],
    };
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let table = run_sweep(&spec, jobs)?;

    println!("{:>6} {:>8} {:>8}", "frp", "exit", "sd");
    for p in table.plot_points(Metric::ExitFraction) {
        println!("{:>6} {:>8.3} {:>8.3}", p.x, p.mean, p.sd);
    }

    let out = std::env::temp_dir().join("canesim-frp-sweep");
    for path in emit_sweep(&spec, &table, &out)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}
