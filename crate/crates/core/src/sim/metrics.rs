use serde::{Deserialize, Serialize};

use super::SimulationState;
use crate::farmer::FarmerType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommodityFrame {
    pub price: f64,
    pub sales: f64,
    /// Stock left in the market after this step's trading.
    pub stock: f64,
    pub imports: f64,
    pub exports: f64,
}

/// Summary of one step. Per-type arrays are indexed Type1, Type2, Type3.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFrame {
    pub step: u32,
    pub farmers: [usize; 3],
    pub active: [usize; 3],
    pub mean_savings: [f64; 3],
    pub median_savings: [f64; 3],
    /// Cumulative count of farmers who have left farming.
    pub exited: [usize; 3],
    /// One entry per scenario commodity, in scenario order.
    pub commodities: Vec<CommodityFrame>,
    pub mill_dues: f64,
    pub mill_savings: f64,
    pub cane_purchased: f64,
    pub cane_dumped: f64,
    pub sugar_output: f64,
    pub ethanol_output: f64,
}

impl MetricsFrame {
    pub fn exit_fraction(&self, farmer_type: FarmerType) -> f64 {
        let i = farmer_type.index();
        if self.farmers[i] == 0 {
            0.0
        } else {
            self.exited[i] as f64 / self.farmers[i] as f64
        }
    }

    pub fn total_exit_fraction(&self) -> f64 {
        let total: usize = self.farmers.iter().sum();
        if total == 0 {
            0.0
        } else {
            self.exited.iter().sum::<usize>() as f64 / total as f64
        }
    }

    /// Column names of the time-series file for the given commodity ids.
    pub fn csv_header(commodity_ids: &[String]) -> Vec<String> {
        let mut h = vec!["step".to_string()];
        for t in FarmerType::ALL {
            let l = t.label();
            h.push(format!("farmers_{l}"));
            h.push(format!("active_{l}"));
            h.push(format!("exited_{l}"));
            h.push(format!("mean_savings_{l}"));
            h.push(format!("median_savings_{l}"));
        }
        for id in commodity_ids {
            for what in ["price", "sales", "stock", "imports", "exports"] {
                h.push(format!("{what}_{id}"));
            }
        }
        for c in [
            "mill_dues",
            "mill_savings",
            "cane_purchased",
            "cane_dumped",
            "sugar_output",
            "ethanol_output",
        ] {
            h.push(c.to_string());
        }
        h
    }

    pub fn csv_record(&self) -> Vec<String> {
        let mut r = vec![self.step.to_string()];
        for i in 0..3 {
            r.push(self.farmers[i].to_string());
            r.push(self.active[i].to_string());
            r.push(self.exited[i].to_string());
            r.push(cell(self.mean_savings[i]));
            r.push(cell(self.median_savings[i]));
        }
        for c in &self.commodities {
            for v in [c.price, c.sales, c.stock, c.imports, c.exports] {
                r.push(cell(v));
            }
        }
        for v in [
            self.mill_dues,
            self.mill_savings,
            self.cane_purchased,
            self.cane_dumped,
            self.sugar_output,
            self.ethanol_output,
        ] {
            r.push(cell(v));
        }
        r
    }
}

// Adding zero folds -0.0 into 0.0 so empty stocks print as "0".
fn cell(v: f64) -> String {
    (v + 0.0).to_string()
}

fn median(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

impl SimulationState {
    pub(crate) fn frame(&self) -> MetricsFrame {
        let mut farmers = [0usize; 3];
        let mut active = [0usize; 3];
        let mut exited = [0usize; 3];
        let mut savings: [Vec<f64>; 3] = Default::default();
        for f in &self.farmers {
            let i = f.farmer_type.index();
            farmers[i] += 1;
            if f.exited {
                exited[i] += 1;
            } else {
                active[i] += 1;
                savings[i].push(f.savings);
            }
        }
        let mut mean_savings = [0.0; 3];
        let mut median_savings = [0.0; 3];
        for i in 0..3 {
            if !savings[i].is_empty() {
                mean_savings[i] = savings[i].iter().sum::<f64>() / savings[i].len() as f64;
            }
            median_savings[i] = median(&mut savings[i]);
        }
        let commodities = self
            .markets
            .iter()
            .zip(&self.flows)
            .map(|(m, fl)| CommodityFrame {
                price: m.price(),
                sales: fl.sales,
                stock: m.current_stock(),
                imports: fl.imports,
                exports: fl.exports,
            })
            .collect();
        MetricsFrame {
            step: self.step,
            farmers,
            active,
            mean_savings,
            median_savings,
            exited,
            commodities,
            mill_dues: self.mill.dues.outstanding(),
            mill_savings: self.mill.savings,
            cane_purchased: self.mill_activity.cane_purchased,
            cane_dumped: self.mill_activity.cane_dumped,
            sugar_output: self.mill_activity.sugar,
            ethanol_output: self.mill_activity.ethanol,
        }
    }
}
