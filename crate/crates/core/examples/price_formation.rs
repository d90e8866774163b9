//! The two pricing rules and the consumer response, on small hand-made
//! histories.

use canesim::market::{
    consumer_demand, sale_deviation_percent, set_price_absolute, set_price_trend, ConsumerState,
};

fn main() -> canesim::Result<()> {
    // Absolute pricing: sales close to stock hold the price near 4x the factor.
    let stocks = [1000.0; 4];
    for sold in [250.0, 500.0, 1000.0] {
        let price = set_price_absolute(&[sold; 4], &stocks, 875.0)?.expect("four steps of history");
        println!("sold {sold:>6} of 1000 each step -> price {price:.2}");
    }

    // Trend pricing: the newest deviation counts most.
    let usual = 1000.0;
    let sales = [950.0, 1050.0, 1100.0, 1020.0];
    let deviations: Vec<f64> = sales.iter().map(|s| sale_deviation_percent(*s, usual)).collect();
    let next = set_price_trend(100.0, &deviations);
    println!("deviations {deviations:?} move 100 to {next:.2}");

    // Consumers: a sharp price rise and heavy recent buying both cut demand.
    let consumer = ConsumerState { usual_demand: 10_000.0, demand_variation_limit: 0.6 };
    for (prev, now, past4) in [(150.0, 150.0, 40_000.0), (150.0, 250.0, 40_000.0), (150.0, 250.0, 48_000.0)] {
        let d = consumer_demand(now, prev, past4, &consumer);
        println!("price {prev}->{now}, past four steps bought {past4} -> demand {d:.0}");
    }
    Ok(())
}
