//! Static objects shared by every agent: crops, labor wages, storage
//! facilities and the inflation clock.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Index of a crop in the scenario's crop list.
pub type CropIdx = usize;

/// Where a harvested crop is sold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Outlet {
    /// Bought by the sugar mill at the fair and remunerative price.
    Mill,
    /// Consigned to the market agent and sold to consumers or exported.
    #[default]
    Market,
}

/// Agronomic and economic parameters of one crop. All per-hectare costs
/// and requirements are per time step unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CropSpec {
    pub id: String,
    #[serde(default)]
    pub outlet: Outlet,
    /// Steps after planting at which the crop stops yielding.
    pub end_cycle: u32,
    /// Steps between successive harvests.
    pub harvest_cycle: u32,
    pub fert_pest_cost: f64,
    pub labor_requirement: f64,
    pub water_requirement: f64,
    pub labor_flexibility: f64,
    pub water_flexibility: f64,
    /// Consecutive unpaid pesticide steps the crop survives.
    pub prone_to_pest: u32,
    /// Quantity per hectare per harvest under ideal conditions.
    pub produce: f64,
    /// One-time planting cost per hectare.
    pub initial_cost: f64,
    #[serde(default)]
    pub minimum_produce: Option<f64>,
    /// Government support price used to seed income expectations.
    #[serde(default)]
    pub msp: Option<f64>,
}

impl CropSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |what: &str| Err(Error::config(format!("crop `{}`: {what}", self.id)));
        if self.id.is_empty() {
            return Err(Error::config("crop with empty id"));
        }
        if self.end_cycle < 1 || self.harvest_cycle < 1 {
            return fail("end_cycle and harvest_cycle must be at least 1");
        }
        if self.harvest_cycle > self.end_cycle {
            return fail("harvest_cycle exceeds end_cycle");
        }
        if !self.end_cycle.is_multiple_of(self.harvest_cycle) {
            return fail("end_cycle must be a multiple of harvest_cycle");
        }
        if self.prone_to_pest < 1 {
            return fail("prone_to_pest must be at least 1");
        }
        let non_negative = [
            ("fert_pest_cost", self.fert_pest_cost),
            ("labor_requirement", self.labor_requirement),
            ("water_requirement", self.water_requirement),
            ("produce", self.produce),
            ("initial_cost", self.initial_cost),
            ("minimum_produce", self.minimum_produce.unwrap_or(0.0)),
            ("msp", self.msp.unwrap_or(0.0)),
        ];
        for (name, v) in non_negative {
            if !(v.is_finite() && v >= 0.0) {
                return fail(&format!("{name} must be finite and >= 0"));
            }
        }
        for (name, v) in [
            ("labor_flexibility", self.labor_flexibility),
            ("water_flexibility", self.water_flexibility),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return fail(&format!("{name} must lie in [0, 1]"));
            }
        }
        Ok(())
    }

    /// Number of harvests over the crop's lifetime.
    pub fn harvests_per_life(&self) -> u32 {
        self.end_cycle / self.harvest_cycle
    }

    pub fn needs_water(&self) -> bool {
        self.water_requirement > 0.0
    }
}

/// Labor is plentiful and modelled as an object: a wage per unit of labor
/// for each crop, rising with inflation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaborMarket {
    base_wages: Vec<f64>,
    wages: Vec<f64>,
}

impl LaborMarket {
    pub fn new(base_wages: Vec<f64>) -> Result<Self> {
        if base_wages.iter().any(|w| !(w.is_finite() && *w > 0.0)) {
            return Err(Error::config("labor wages must be positive"));
        }
        Ok(Self {
            wages: base_wages.clone(),
            base_wages,
        })
    }

    pub fn wage(&self, crop: CropIdx) -> f64 {
        self.wages[crop]
    }

    pub fn wages(&self) -> &[f64] {
        &self.wages
    }

    pub fn reprice(&mut self, clock: &InflationClock) {
        for (w, base) in self.wages.iter_mut().zip(&self.base_wages) {
            *w = clock.adjust(*base);
        }
    }
}

/// Per-crop storage facility parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageFacilitySpec {
    pub crop: String,
    pub capacity: f64,
    pub fee_multiplier: f64,
    /// Fraction of a stored lot lost each step.
    pub loss_rate: f64,
    /// Steps after which a lot is unusable and purged.
    pub expiration: u32,
}

impl StorageFacilitySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.capacity.is_finite() && self.capacity >= 0.0) {
            return Err(Error::config(format!("storage `{}`: capacity must be >= 0", self.crop)));
        }
        if !(self.fee_multiplier.is_finite() && self.fee_multiplier >= 0.0) {
            return Err(Error::config(format!("storage `{}`: fee_multiplier must be >= 0", self.crop)));
        }
        if !(0.0..1.0).contains(&self.loss_rate) {
            return Err(Error::config(format!("storage `{}`: loss_rate must lie in [0, 1)", self.crop)));
        }
        if self.expiration < 1 {
            return Err(Error::config(format!("storage `{}`: expiration must be >= 1", self.crop)));
        }
        Ok(())
    }
}

/// Shared per-step inflation. The index is built by repeated multiplication
/// so that it agrees bit-for-bit with [`apply_inflation`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InflationClock {
    rate_per_step: f64,
    current_step: u32,
    index: f64,
}

impl InflationClock {
    pub fn new(rate_per_step: f64) -> Result<Self> {
        if !(rate_per_step.is_finite() && rate_per_step >= 0.0) {
            return Err(Error::config("inflation rate must be >= 0"));
        }
        Ok(Self {
            rate_per_step,
            current_step: 0,
            index: 1.0,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate_per_step
    }

    pub fn step(&self) -> u32 {
        self.current_step
    }

    /// Cumulative price index since step 0.
    pub fn index(&self) -> f64 {
        self.index
    }

    pub fn advance(&mut self) {
        self.index *= 1.0 + self.rate_per_step;
        self.current_step += 1;
    }

    pub fn adjust(&self, base: f64) -> f64 {
        base * self.index
    }
}

/// Compounds `value` by `rate` once per step.
///
/// The factor is applied as `steps` successive multiplications rather than
/// through `powi`, so splitting a horizon into two calls gives exactly the
/// same result as one call over the whole horizon.
pub fn apply_inflation(value: f64, steps: i64, rate: f64) -> Result<f64> {
    if steps < 0 {
        return Err(Error::contract(format!("negative step count {steps}")));
    }
    if value < 0.0 || rate < 0.0 {
        return Err(Error::contract("value and rate must be non-negative"));
    }
    let factor = 1.0 + rate;
    Ok((0..steps).fold(value, |v, _| v * factor))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel_eq(a: f64, b: f64) -> bool {
        (a - b).abs() <= 1e-9 * b.abs().max(1.0)
    }

    pub(crate) fn cane() -> CropSpec {
        CropSpec {
            id: "sugarcane".into(),
            outlet: Outlet::Mill,
            end_cycle: 3,
            harvest_cycle: 3,
            fert_pest_cost: 500.0,
            labor_requirement: 10.0,
            water_requirement: 100.0,
            labor_flexibility: 0.8,
            water_flexibility: 0.8,
            prone_to_pest: 2,
            produce: 700.0,
            initial_cost: 1000.0,
            minimum_produce: None,
            msp: None,
        }
    }

    #[test]
    fn inflation_examples() {
        assert_eq!(apply_inflation(5000.0, 0, 0.0001).unwrap(), 5000.0);
        assert!(rel_eq(apply_inflation(5000.0, 1, 0.0001).unwrap(), 5000.5));
        assert!(rel_eq(apply_inflation(100.0, 2, 0.0001).unwrap(), 100.0 * 1.0001 * 1.0001));
        assert!(rel_eq(apply_inflation(100.0, 2, 0.0001).unwrap(), 100.020001));
    }

    #[test]
    fn negative_steps_rejected() {
        assert!(matches!(
            apply_inflation(1.0, -1, 0.0001),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn clock_matches_function() {
        let mut clock = InflationClock::new(0.0001).unwrap();
        for _ in 0..37 {
            clock.advance();
        }
        assert_eq!(clock.adjust(5000.0), 5000.0 * apply_inflation(1.0, 37, 0.0001).unwrap());
        assert_eq!(clock.index(), apply_inflation(1.0, 37, 0.0001).unwrap());
    }

    #[test]
    fn crop_validation() {
        assert!(cane().validate().is_ok());
        let mut c = cane();
        c.harvest_cycle = 4;
        assert!(c.validate().is_err());
        let mut c = cane();
        c.end_cycle = 5;
        c.harvest_cycle = 2;
        assert!(c.validate().is_err());
        let mut c = cane();
        c.water_flexibility = 1.5;
        assert!(c.validate().is_err());
        let mut c = cane();
        c.initial_cost = -1.0;
        assert!(c.validate().is_err());
        let mut c = cane();
        c.end_cycle = 6;
        assert!(c.validate().is_ok());
        assert_eq!(c.harvests_per_life(), 2);
    }

    #[test]
    fn wages_follow_clock() {
        let mut labor = LaborMarket::new(vec![200.0, 300.0]).unwrap();
        let mut clock = InflationClock::new(0.0001).unwrap();
        clock.advance();
        labor.reprice(&clock);
        assert!(rel_eq(labor.wage(0), 200.02));
        assert!(labor.wage(1) > 300.0);
        assert!(LaborMarket::new(vec![0.0]).is_err());
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inflation_composes(v in 0.0f64..1e7, a in 0i64..300, b in 0i64..300, r in 0.0f64..0.01) {
                let whole = apply_inflation(v, a + b, r).unwrap();
                let split = apply_inflation(apply_inflation(v, a, r).unwrap(), b, r).unwrap();
                prop_assert_eq!(whole, split);
            }

            #[test]
            fn inflation_monotone(v in 0.0f64..1e7, n in 0i64..300, r in 0.0f64..0.01) {
                let here = apply_inflation(v, n, r).unwrap();
                prop_assert!(apply_inflation(v, n + 1, r).unwrap() >= here);
                prop_assert!(apply_inflation(v + 1.0, n, r).unwrap() >= here);
            }
        }
    }
}
