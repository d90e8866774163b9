//! The scheduler: population set-up, the fixed per-step phase pipeline,
//! money movement through the ledger, and per-step metrics.

mod checkpoint;
mod metrics;
mod step;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::credit::LoanAccount;
use crate::domain::{CropIdx, InflationClock, LaborMarket, Outlet};
use crate::error::{Error, Result};
use crate::farmer::{init_farmer, FarmerInit, FarmerState, FarmerType};
use crate::ledger::{Account, Ledger, TransferKind};
use crate::market::{ConsumerState, LotOwner, MarketBook, StorageLedger, TradeEvent, TradeParams};
use crate::mill::{CaneOffer, MillState};
use crate::rng::RngStreams;
use crate::scenario::{ScenarioConfig, SUGAR};

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use metrics::{CommodityFrame, MetricsFrame};

/// A farmer's open loans, at most one of each kind.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FarmerLoans {
    pub collateral: Option<LoanAccount>,
    pub credit: Option<LoanAccount>,
}

/// Cash held by the non-farmer agents.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Treasury {
    pub market: f64,
    pub loan_agent: f64,
    pub water_agent: f64,
    pub storage: f64,
    pub government: f64,
}

/// Per-commodity quantities moved during one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CommodityFlows {
    pub opening_stock: f64,
    pub production: f64,
    pub imports: f64,
    pub storage_withdrawals: f64,
    pub sales: f64,
    pub exports: f64,
    pub storage_deposits: f64,
}

impl CommodityFlows {
    pub fn expected_closing(&self) -> f64 {
        self.opening_stock + self.production + self.imports + self.storage_withdrawals
            - self.sales
            - self.exports
            - self.storage_deposits
    }
}

/// Mill activity in the current step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MillActivity {
    pub cane_offered: f64,
    pub cane_purchased: f64,
    pub cane_dumped: f64,
    pub sugar: f64,
    pub ethanol: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimOptions {
    /// Keep every transfer after its step closes.
    pub retain_ledger: bool,
}

/// Everything that evolves during a run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationState {
    pub config: ScenarioConfig,
    pub step: u32,
    pub clock: InflationClock,
    pub labor: LaborMarket,
    /// Ordered by id; a farmer's id is its index.
    pub farmers: Vec<FarmerState>,
    pub loans: Vec<FarmerLoans>,
    pub mill: MillState,
    /// One book per scenario commodity, in scenario order.
    pub markets: Vec<MarketBook>,
    pub consumers: Vec<ConsumerState>,
    pub trade: Vec<TradeParams>,
    pub trade_history: Vec<Vec<TradeEvent>>,
    pub storage: StorageLedger,
    /// Cane harvested last step, waiting for the mill.
    pub cane_offers: Vec<CaneOffer>,
    pub treasury: Treasury,
    pub rng: RngStreams,
    pub ledger: Ledger,
    pub flows: Vec<CommodityFlows>,
    pub mill_activity: MillActivity,
    pub metrics: Vec<MetricsFrame>,
}

impl SimulationState {
    /// Builds the initial state and records the step-0 frame.
    pub fn new(config: ScenarioConfig) -> Result<Self> {
        Self::with_options(config, SimOptions::default())
    }

    pub fn with_options(config: ScenarioConfig, options: SimOptions) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStreams::new(config.seed);
        let farmers = init_population(&config, &mut rng.population)?;
        let wages = config
            .crops
            .iter()
            .map(|c| config.wages[&c.id])
            .collect::<Vec<_>>();
        let crop_ids: Vec<String> = config.crops.iter().map(|c| c.id.clone()).collect();
        let n_commodities = config.commodities.len();
        let mut state = Self {
            step: 0,
            clock: InflationClock::new(config.inflation_rate)?,
            labor: LaborMarket::new(wages)?,
            loans: vec![FarmerLoans::default(); farmers.len()],
            farmers,
            mill: MillState::new(&config.mill),
            markets: config.commodities.iter().map(|c| MarketBook::new(c.initial_price)).collect(),
            consumers: config
                .commodities
                .iter()
                .map(|c| ConsumerState {
                    usual_demand: c.usual_demand,
                    demand_variation_limit: c.demand_variation_limit,
                })
                .collect(),
            trade: config.commodities.iter().map(|c| c.trade.clone()).collect(),
            trade_history: vec![Vec::new(); n_commodities],
            storage: StorageLedger::new(&crop_ids, &config.storage),
            cane_offers: Vec::new(),
            treasury: Treasury::default(),
            rng,
            ledger: Ledger::new(options.retain_ledger),
            flows: vec![CommodityFlows::default(); n_commodities],
            mill_activity: MillActivity::default(),
            metrics: Vec::new(),
            config,
        };
        for (m, c) in state.markets.iter_mut().zip(&state.config.commodities) {
            m.deposit(LotOwner::Market, c.initial_stock, 0);
        }
        let frame = state.frame();
        state.metrics.push(frame);
        // Step 0 is set-up only; transfers start at step 1.
        state.ledger.close_step();
        Ok(state)
    }

    pub fn crop_commodity(&self, crop: CropIdx) -> Option<usize> {
        let spec = &self.config.crops[crop];
        match spec.outlet {
            Outlet::Mill => None,
            Outlet::Market => self.config.commodity_index(&spec.id),
        }
    }

    pub fn commodity_crop(&self, commodity: usize) -> Option<CropIdx> {
        self.config.crop_index(&self.config.commodities[commodity].id).ok()
    }

    pub fn sugar_commodity(&self) -> usize {
        self.config
            .commodity_index(SUGAR)
            .expect("validated scenarios have a sugar commodity")
    }

    /// Current cash of an agent account; environment accounts have none.
    pub fn balance(&self, account: Account) -> Option<f64> {
        Some(match account {
            Account::Farmer(id) => self.farmers.get(id as usize)?.savings,
            Account::Mill => self.mill.savings,
            Account::Market => self.treasury.market,
            Account::LoanAgent => self.treasury.loan_agent,
            Account::WaterAgent => self.treasury.water_agent,
            Account::Storage => self.treasury.storage,
            Account::Government => self.treasury.government,
            Account::Env(_) => return None,
        })
    }

    fn balance_mut(&mut self, account: Account) -> Option<&mut f64> {
        Some(match account {
            Account::Farmer(id) => &mut self.farmers.get_mut(id as usize)?.savings,
            Account::Mill => &mut self.mill.savings,
            Account::Market => &mut self.treasury.market,
            Account::LoanAgent => &mut self.treasury.loan_agent,
            Account::WaterAgent => &mut self.treasury.water_agent,
            Account::Storage => &mut self.treasury.storage,
            Account::Government => &mut self.treasury.government,
            Account::Env(_) => return None,
        })
    }

    /// Moves money between two accounts and records it.
    pub(crate) fn transfer(&mut self, from: Account, to: Account, amount: f64, kind: TransferKind) {
        if amount <= 0.0 {
            return;
        }
        if let Some(b) = self.balance_mut(from) {
            *b -= amount;
        }
        if let Some(b) = self.balance_mut(to) {
            *b += amount;
        }
        self.ledger.post(from, to, amount, kind);
    }

    pub fn is_finished(&self) -> bool {
        self.step >= self.config.steps
    }

    /// Runs the remaining steps of the scenario.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    pub fn rng_state(&self) -> (&ChaCha8Rng, &ChaCha8Rng, &ChaCha8Rng) {
        (&self.rng.population, &self.rng.perception, &self.rng.demand)
    }
}

/// Creates the farmer population: floor shares of Type1 and Type2 and the
/// remainder Type3, with sequential ids and round-robin localities.
pub fn init_population(config: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Result<Vec<FarmerState>> {
    if config.population.size < 10 {
        return Err(Error::config(format!(
            "population size must be at least 10, got {}",
            config.population.size
        )));
    }
    let counts = config.population.counts();
    let expectations: Vec<f64> = config
        .crops
        .iter()
        .map(|c| match c.outlet {
            Outlet::Mill => config.policy.frp,
            Outlet::Market => c.msp.unwrap_or_else(|| {
                let k = config.commodity_index(&c.id).expect("validated");
                config.commodities[k].initial_price
            }),
        })
        .collect();
    let history_capacity = config.crops.iter().map(|c| c.harvest_cycle as usize).max().unwrap_or(1);
    let mut farmers = Vec::with_capacity(config.population.size);
    for (t, count) in FarmerType::ALL.into_iter().zip(counts) {
        for _ in 0..count {
            let id = farmers.len() as u32;
            let init = FarmerInit {
                profile: config.farmers.get(t),
                initial_expectations: &expectations,
                history_capacity,
                locality: id % config.population.localities,
            };
            farmers.push(init_farmer(id, t, &init, rng));
        }
    }
    Ok(farmers)
}

/// Initializes a scenario and runs it to the end, returning every frame.
pub fn run(config: &ScenarioConfig) -> Result<Vec<MetricsFrame>> {
    let mut state = SimulationState::new(config.clone())?;
    state.run_to_end()?;
    Ok(state.metrics)
}

#[cfg(test)]
pub(crate) mod tests;
