//! Runs the default scenario and prints a few columns every ten steps.
//!
//! cargo run --release --example single_run [steps]

use canesim::farmer::FarmerType;
use canesim::scenario::load_scenario;
use canesim::sim::run;

fn main() -> canesim::Result<()> {
    let mut config = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/default.toml"))?;
    if let Some(steps) = std::env::args().nth(1) {
        config.steps = steps.parse().expect("steps must be an integer");
    }
    let frames = run(&config)?;
    let sugar = config.commodity_index("sugar").expect("default scenario sells sugar");

    println!("{:>5} {:>8} {:>8} {:>8} {:>10} {:>12}", "step", "exit", "exit_t1", "exit_t3", "sugar", "mill_dues");
    for f in frames.iter().filter(|f| f.step % 10 == 0 || f.step == config.steps) {
        println!(
            "{:>5} {:>8.3} {:>8.3} {:>8.3} {:>10.1} {:>12.0}",
            f.step,
            f.total_exit_fraction(),
            f.exit_fraction(FarmerType::Type1),
            f.exit_fraction(FarmerType::Type3),
            f.commodities[sugar].price,
            f.mill_dues
        );
    }
    Ok(())
}
