//! How much cane the mill must buy for a sugar target and an ethanol
//! blending requirement, and how the mill splits the juice.

use canesim::mill::{decide_ethanol_mode, ethanol_output, process, required_sugarcane, sugar_output};
use canesim::scenario::load_scenario;

fn main() -> canesim::Result<()> {
    let config = load_scenario(concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/default.toml"))?;
    let (y, costs) = (config.mill.yields, config.mill.costs);
    let mode = decide_ethanol_mode(costs.juice_ethanol_cost_per_unit(&y), config.policy.ethanol_price);
    println!("ethanol mode at price {}: {mode:?}", config.policy.ethanol_price);

    let sugar = 3000.0;
    println!("{:>10} {:>10} {:>9} {:>10} {:>10} {:>12}", "ethanol", "cane", "diverted", "sugar", "ethanol", "cost");
    for ethanol in [0.0, 20_000.0, 60_000.0, 120_000.0, 200_000.0] {
        let req = required_sugarcane(ethanol, sugar, &y, mode)?;
        let out = process(req.sugarcane, req.diversion, &y, &costs)?;
        assert!((ethanol_output(req.sugarcane, req.diversion, &y) - out.ethanol).abs() < 1e-6);
        assert!((sugar_output(req.sugarcane, req.diversion, &y) - out.sugar).abs() < 1e-6);
        println!(
            "{:>10} {:>10.1} {:>9.4} {:>10.1} {:>10.1} {:>12.0}",
            ethanol, req.sugarcane, req.diversion, out.sugar, out.ethanol, out.cost
        );
    }
    Ok(())
}
