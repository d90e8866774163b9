//! Scenario files: the full description of one experiment.
//!
//! Scenarios are TOML. Unknown keys are rejected and every optional field
//! has a default; see `scenarios/default.toml` for an annotated example.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::credit::LoanParams;
use crate::domain::{CropIdx, CropSpec, Outlet, StorageFacilitySpec};
use crate::error::{Error, Result};
use crate::farmer::{FarmerType, TypeProfile};
use crate::market::TradeParams;
use crate::mill::MillParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PricingMode {
    /// Price from the recent sale-to-stock ratio.
    #[default]
    Absolute,
    /// Previous price moved by recent sale deviations.
    Trend,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PopulationConfig {
    pub size: usize,
    pub type1_fraction: f64,
    pub type2_fraction: f64,
    pub type3_fraction: f64,
    /// Farmers are spread round-robin over this many localities.
    pub localities: u32,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            size: 500,
            type1_fraction: 0.7,
            type2_fraction: 0.2,
            type3_fraction: 0.1,
            localities: 10,
        }
    }
}

impl PopulationConfig {
    /// Head count of each type: floors for Type1 and Type2, the rest Type3.
    pub fn counts(&self) -> [usize; 3] {
        let n = self.size as f64;
        let t1 = (self.type1_fraction * n + 1e-9).floor() as usize;
        let t2 = ((self.type2_fraction * n + 1e-9).floor() as usize).min(self.size - t1);
        [t1, t2, self.size - t1 - t2]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FarmerProfiles {
    pub type1: TypeProfile,
    pub type2: TypeProfile,
    pub type3: TypeProfile,
}

impl Default for FarmerProfiles {
    fn default() -> Self {
        Self {
            type1: TypeProfile::type1(),
            type2: TypeProfile::type2(),
            type3: TypeProfile::type3(),
        }
    }
}

impl FarmerProfiles {
    pub fn get(&self, farmer_type: FarmerType) -> &TypeProfile {
        match farmer_type {
            FarmerType::Type1 => &self.type1,
            FarmerType::Type2 => &self.type2,
            FarmerType::Type3 => &self.type3,
        }
    }
}

/// Government levers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    /// Fair and remunerative price of cane, per unit.
    pub frp: f64,
    /// Ethanol the mill must supply each step.
    pub ethanol_requirement: f64,
    pub ethanol_price: f64,
    /// Fractional adjustment the policy agent makes to trade levers.
    #[serde(default = "default_policy_delta")]
    pub delta: f64,
}

fn default_policy_delta() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WaterConfig {
    pub agent_present: bool,
    /// Water agent price per unit of water.
    pub agent_price: f64,
    /// Water the agent can sell each step.
    pub agent_supply: f64,
    /// Lender's produce share for lending all the water a crop needs.
    pub share_factor: f64,
}

impl Default for WaterConfig {
    fn default() -> Self {
        Self {
            agent_present: true,
            agent_price: 2.0,
            agent_supply: 20_000.0,
            share_factor: 0.25,
        }
    }
}

/// A traded good: every market crop plus sugar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommoditySpec {
    pub id: String,
    /// Price at step 0, and the usual price for trade decisions.
    pub initial_price: f64,
    pub crop_mult_factor: f64,
    pub usual_demand: f64,
    #[serde(default = "default_variation_limit")]
    pub demand_variation_limit: f64,
    /// Stock held by the market agent at step 0.
    #[serde(default)]
    pub initial_stock: f64,
    pub trade: TradeParams,
}

fn default_variation_limit() -> f64 {
    0.5
}

/// The commodity the mill produces.
pub const SUGAR: &str = "sugar";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_steps")]
    pub steps: u32,
    #[serde(default = "default_months_per_step")]
    pub months_per_step: f64,
    #[serde(default = "default_inflation")]
    pub inflation_rate: f64,
    #[serde(default)]
    pub pricing_mode: PricingMode,
    /// Multiply per-step costs by the harvest cycle in the land rule.
    #[serde(default)]
    pub per_cycle_costs: bool,
    /// Relative standard deviation of consumer demand shocks.
    #[serde(default)]
    pub demand_noise: f64,
    #[serde(default)]
    pub population: PopulationConfig,
    #[serde(default)]
    pub farmers: FarmerProfiles,
    pub policy: PolicyConfig,
    #[serde(default)]
    pub water: WaterConfig,
    #[serde(default)]
    pub loans: LoanParams,
    pub mill: MillParams,
    pub crops: Vec<CropSpec>,
    /// Labor wage per unit of labor, by crop id.
    pub wages: BTreeMap<String, f64>,
    pub commodities: Vec<CommoditySpec>,
    #[serde(default)]
    pub storage: Vec<StorageFacilitySpec>,
}

fn default_seed() -> u64 {
    1
}
fn default_steps() -> u32 {
    50
}
fn default_months_per_step() -> f64 {
    4.0
}
fn default_inflation() -> f64 {
    0.0001
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn crop_index(&self, id: &str) -> Result<CropIdx> {
        self.crops
            .iter()
            .position(|c| c.id == id)
            .ok_or_else(|| Error::UnknownCrop(id.to_string()))
    }

    pub fn commodity_index(&self, id: &str) -> Option<usize> {
        self.commodities.iter().position(|c| c.id == id)
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.population;
        let total = p.type1_fraction + p.type2_fraction + p.type3_fraction;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!(
                "population fractions must sum to 1, got {total}"
            )));
        }
        if [p.type1_fraction, p.type2_fraction, p.type3_fraction].iter().any(|f| *f < 0.0) {
            return Err(Error::config("population fractions must be >= 0"));
        }
        if p.localities == 0 {
            return Err(Error::config("population.localities must be at least 1"));
        }
        if !(self.months_per_step.is_finite() && self.months_per_step > 0.0) {
            return Err(Error::config("months_per_step must be positive"));
        }
        if !(self.inflation_rate.is_finite() && self.inflation_rate >= 0.0) {
            return Err(Error::config("inflation_rate must be >= 0"));
        }
        if !(self.demand_noise.is_finite() && self.demand_noise >= 0.0) {
            return Err(Error::config("demand_noise must be >= 0"));
        }
        for t in FarmerType::ALL {
            self.farmers.get(t).validate(t.label())?;
        }
        let pol = &self.policy;
        if [pol.frp, pol.ethanol_requirement, pol.ethanol_price, pol.delta]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
        {
            return Err(Error::config("policy levers must be finite and >= 0"));
        }
        let w = &self.water;
        if [w.agent_price, w.agent_supply, w.share_factor]
            .iter()
            .any(|v| !(v.is_finite() && *v >= 0.0))
            || w.share_factor > 1.0
        {
            return Err(Error::config("water: prices and supply must be >= 0, share_factor in [0, 1]"));
        }
        self.loans.validate()?;
        self.mill.validate()?;

        if self.crops.is_empty() {
            return Err(Error::config("at least one crop is required"));
        }
        for (i, c) in self.crops.iter().enumerate() {
            c.validate()?;
            if self.crops[..i].iter().any(|d| d.id == c.id) {
                return Err(Error::config(format!("duplicate crop `{}`", c.id)));
            }
            match self.wages.get(&c.id) {
                Some(w) if w.is_finite() && *w > 0.0 => {}
                Some(_) => return Err(Error::config(format!("wage of `{}` must be positive", c.id))),
                None => return Err(Error::config(format!("no wage for crop `{}`", c.id))),
            }
            if c.outlet == Outlet::Market && self.commodity_index(&c.id).is_none() {
                return Err(Error::config(format!("market crop `{}` has no commodity entry", c.id)));
            }
        }
        for id in self.wages.keys() {
            self.crop_index(id)?;
        }
        if self.commodity_index(SUGAR).is_none() {
            return Err(Error::config("a `sugar` commodity is required"));
        }
        for (i, c) in self.commodities.iter().enumerate() {
            if self.commodities[..i].iter().any(|d| d.id == c.id) {
                return Err(Error::config(format!("duplicate commodity `{}`", c.id)));
            }
            if c.id != SUGAR {
                let crop = self.crop_index(&c.id)?;
                if self.crops[crop].outlet != Outlet::Market {
                    return Err(Error::config(format!("commodity `{}` names a mill crop", c.id)));
                }
            }
            let ok = c.initial_price > 0.0
                && c.crop_mult_factor >= 0.0
                && c.usual_demand > 0.0
                && c.demand_variation_limit >= 0.0
                && c.initial_stock >= 0.0
                && [c.initial_price, c.crop_mult_factor, c.usual_demand, c.demand_variation_limit, c.initial_stock]
                    .iter()
                    .all(|v| v.is_finite());
            if !ok {
                return Err(Error::config(format!(
                    "commodity `{}`: prices and usual demand must be positive",
                    c.id
                )));
            }
            c.trade.validate(&c.id)?;
        }
        for (i, s) in self.storage.iter().enumerate() {
            s.validate()?;
            let crop = self.crop_index(&s.crop)?;
            if self.crops[crop].outlet != Outlet::Market {
                return Err(Error::config(format!("storage for `{}`: only market crops are stored", s.crop)));
            }
            if self.storage[..i].iter().any(|d| d.crop == s.crop) {
                return Err(Error::config(format!("duplicate storage for `{}`", s.crop)));
            }
        }
        Ok(())
    }

    /// Sets one scalar field addressed by a dotted path and revalidates.
    ///
    /// Tables are addressed by key. Arrays of tables are addressed by the
    /// element's `id` (or `crop` for storage), for example
    /// `commodities.sugar.trade.export_price` or `storage.onion.capacity`.
    /// Booleans take 0 for false and any other value for true.
    pub fn with_param(&self, path: &str, value: f64) -> Result<Self> {
        let mut tree = serde_json::to_value(self).map_err(|e| Error::config(e.to_string()))?;
        let leaf = locate(&mut tree, path)?;
        *leaf = match leaf {
            Value::Bool(_) => Value::Bool(value != 0.0),
            Value::Number(n) if n.is_f64() => Value::from(value),
            Value::Number(_) => {
                if value.fract() != 0.0 || value < 0.0 {
                    return Err(Error::config(format!("`{path}` takes a non-negative integer, got {value}")));
                }
                Value::from(value as u64)
            }
            Value::Null => Value::from(value),
            _ => return Err(Error::config(format!("`{path}` is not a scalar parameter"))),
        };
        let config: Self = serde_json::from_value(tree).map_err(|e| Error::config(format!("`{path}`: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a scalar field by the same path syntax as [`Self::with_param`].
    pub fn param(&self, path: &str) -> Result<f64> {
        let mut tree = serde_json::to_value(self).map_err(|e| Error::config(e.to_string()))?;
        match locate(&mut tree, path)? {
            Value::Bool(b) => Ok(f64::from(u8::from(*b))),
            Value::Number(n) => Ok(n.as_f64().unwrap_or(f64::NAN)),
            _ => Err(Error::config(format!("`{path}` is not a scalar parameter"))),
        }
    }
}

fn locate<'a>(tree: &'a mut Value, path: &str) -> Result<&'a mut Value> {
    let mut node = tree;
    for seg in path.split('.') {
        node = match node {
            Value::Object(map) => map
                .get_mut(seg)
                .ok_or_else(|| Error::config(format!("unknown parameter `{path}` (no `{seg}`)")))?,
            Value::Array(items) => items
                .iter_mut()
                .find(|item| {
                    ["id", "crop"]
                        .iter()
                        .any(|k| item.get(k).and_then(Value::as_str) == Some(seg))
                })
                .ok_or_else(|| Error::config(format!("unknown parameter `{path}` (no element `{seg}`)")))?,
            _ => return Err(Error::config(format!("unknown parameter `{path}`"))),
        };
    }
    Ok(node)
}

/// Reads and validates a scenario file.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<ScenarioConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let config: ScenarioConfig = toml::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    config.validate()?;
    Ok(config)
}
