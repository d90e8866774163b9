//! Market, consumer, trade, policy and storage agents.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::{CropIdx, StorageFacilitySpec};
use crate::error::{Error, Result};
use crate::farmer::FarmerType;

/// Recency weights for the last four steps, newest first.
pub const RECENCY_WEIGHTS: [f64; 4] = [0.4, 0.3, 0.2, 0.1];
const PRICE_BASE_FLOOR: f64 = 0.1;

/// Who owns goods sitting in the market or in storage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LotOwner {
    Farmer(u32),
    Mill,
    /// Imported goods, owned by the market agent.
    Market,
}

/// Goods consigned to the market, sold first-in first-out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketLot {
    pub owner: LotOwner,
    pub quantity: f64,
    pub harvest_step: u32,
}

/// Price, sale and stock histories for one commodity, newest last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketBook {
    pub price_history: Vec<f64>,
    pub sale_history: Vec<f64>,
    /// Stock on offer at the moment of each step's sales.
    pub stock_history: Vec<f64>,
    /// What consumers asked to buy each step, before stock ran short.
    pub demand_history: Vec<f64>,
    pub lots: VecDeque<MarketLot>,
}

impl MarketBook {
    pub fn new(initial_price: f64) -> Self {
        Self {
            price_history: vec![initial_price],
            sale_history: Vec::new(),
            stock_history: Vec::new(),
            demand_history: Vec::new(),
            lots: VecDeque::new(),
        }
    }

    pub fn price(&self) -> f64 {
        *self.price_history.last().expect("price history is never empty")
    }

    pub fn current_stock(&self) -> f64 {
        self.lots.iter().map(|l| l.quantity).sum()
    }

    pub fn deposit(&mut self, owner: LotOwner, quantity: f64, harvest_step: u32) {
        if quantity > 0.0 {
            self.lots.push_back(MarketLot { owner, quantity, harvest_step });
        }
    }

    /// Removes up to `quantity` oldest-first and reports whose goods went.
    pub fn take(&mut self, quantity: f64) -> Vec<MarketLot> {
        let mut left = quantity;
        let mut out = Vec::new();
        while left > 0.0 {
            let Some(front) = self.lots.front_mut() else { break };
            if front.quantity <= left {
                left -= front.quantity;
                out.push(self.lots.pop_front().expect("front exists"));
            } else {
                front.quantity -= left;
                out.push(MarketLot { quantity: left, ..front.clone() });
                left = 0.0;
            }
        }
        out
    }

    /// Sum of the last four steps' sales, padding missing steps with `usual`.
    pub fn past4_sales(&self, usual: f64) -> f64 {
        let n = self.sale_history.len();
        let have = n.min(4);
        let recorded: f64 = self.sale_history[n - have..].iter().sum();
        recorded + (4 - have) as f64 * usual
    }
}

fn check_history(values: &[f64]) -> Result<()> {
    if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::contract("market history values must be finite and >= 0"));
    }
    Ok(())
}

/// Price from the sale-to-stock ratio of the last four steps.
///
/// Each step contributes twice its sale/stock ratio, weighted by recency;
/// the weighted sum is floored at 0.1, squared and scaled by
/// `crop_mult_factor`. Steps with no stock contribute nothing. Returns
/// `None` until four steps of history exist.
pub fn set_price_absolute(sales: &[f64], stocks: &[f64], crop_mult_factor: f64) -> Result<Option<f64>> {
    check_history(sales)?;
    check_history(stocks)?;
    if sales.len() < 4 || stocks.len() < 4 {
        return Ok(None);
    }
    let (ns, nk) = (sales.len(), stocks.len());
    let base: f64 = RECENCY_WEIGHTS
        .iter()
        .enumerate()
        .map(|(k, w)| {
            let sale = sales[ns - 1 - k];
            let stock = stocks[nk - 1 - k];
            let ratio = if stock > 0.0 { sale / stock } else { 0.0 };
            w * 2.0 * ratio
        })
        .sum();
    Ok(Some(crop_mult_factor * base.max(PRICE_BASE_FLOOR).powi(2)))
}

/// Percent deviation of a step's sale from the usual sale.
pub fn sale_deviation_percent(sale: f64, usual: f64) -> f64 {
    if usual > 0.0 {
        100.0 * (sale - usual) / usual
    } else {
        0.0
    }
}

/// Moves the previous price by the recency-weighted percent deviations of
/// the last four steps' sales. `deviations` is oldest first; only its last
/// four entries are used.
pub fn set_price_trend(previous_price: f64, deviations: &[f64]) -> f64 {
    let n = deviations.len();
    let change: f64 = RECENCY_WEIGHTS
        .iter()
        .enumerate()
        .take(n)
        .map(|(k, w)| w * deviations[n - 1 - k])
        .sum();
    previous_price * (1.0 + change / 100.0)
}

/// Consumer tastes for one commodity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsumerState {
    pub usual_demand: f64,
    /// Largest fractional move away from usual demand in one step.
    pub demand_variation_limit: f64,
}

/// Demand this step.
///
/// A price rise cuts demand by the rise as a fraction of the new price, and
/// a fall lifts it the same way. Sales above the usual four-step total cut
/// demand by the excess fraction; sales below lift it. The product is kept
/// within the variation band around usual demand.
pub fn consumer_demand(price_now: f64, price_prev: f64, past4_sales: f64, consumer: &ConsumerState) -> f64 {
    let usual = consumer.usual_demand;
    let price_factor = if price_now > 0.0 {
        1.0 - (price_now - price_prev) / price_now
    } else {
        1.0
    };
    let usual4 = 4.0 * usual;
    let stock_factor = 1.0 - (past4_sales - usual4) / usual4;
    let raw = price_factor.max(0.0) * stock_factor.max(0.0) * usual;
    let lim = consumer.demand_variation_limit;
    raw.clamp(usual * (1.0 - lim).max(0.0), usual * (1.0 + lim))
}

/// Import and export levers for one commodity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradeParams {
    /// Quantity imported per unit of price above the usual price.
    pub factor_of_import: f64,
    /// Quantity exported per unit of price below the usual price.
    pub factor_of_export: f64,
    pub maximum_import: f64,
    pub maximum_export: f64,
    pub import_tax: f64,
    pub export_tax: f64,
    /// World price paid per unit imported, before tax.
    pub import_price: f64,
    /// World price received per unit exported, before tax.
    pub export_price: f64,
}

impl TradeParams {
    pub fn validate(&self, commodity: &str) -> Result<()> {
        let v = [
            self.factor_of_import,
            self.factor_of_export,
            self.maximum_import,
            self.maximum_export,
            self.import_tax,
            self.export_tax,
            self.import_price,
            self.export_price,
        ];
        if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(Error::config(format!("trade parameters of `{commodity}` must be >= 0")));
        }
        Ok(())
    }
}

/// Trade volumes for one step: at most one of the two is non-zero.
pub fn import_export_step(price: f64, usual_price: f64, trade: &TradeParams) -> (f64, f64) {
    if price > usual_price {
        let import = (trade.factor_of_import * (price - usual_price)).min(trade.maximum_import);
        (import.max(0.0), 0.0)
    } else if price < usual_price {
        let export = (trade.factor_of_export * (usual_price - price)).min(trade.maximum_export);
        (0.0, export.max(0.0))
    } else {
        (0.0, 0.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TradeEvent {
    pub imported: bool,
    pub exported: bool,
}

pub const POLICY_WINDOW: usize = 5;
const POLICY_TRIGGER: usize = 2;

/// Policy agent: when more than two of the last five steps saw imports,
/// make importing easier and exporting dearer; mirror that for exports.
pub fn policy_step(history: &[TradeEvent], trade: &TradeParams, delta: f64) -> TradeParams {
    let window = &history[history.len().saturating_sub(POLICY_WINDOW)..];
    let imports = window.iter().filter(|e| e.imported).count();
    let exports = window.iter().filter(|e| e.exported).count();
    let mut out = trade.clone();
    let (down, up) = (1.0 - delta, 1.0 + delta);
    if imports > POLICY_TRIGGER {
        out.import_tax *= down;
        out.maximum_import *= up;
        out.factor_of_import *= up;
        out.export_tax *= up;
    }
    if exports > POLICY_TRIGGER {
        out.export_tax *= down;
        out.maximum_export *= up;
        out.factor_of_export *= up;
        out.import_tax *= up;
    }
    out
}

/// Storage fee per unit per step, priced like a commodity: requests play
/// the part of sales and remaining capacity the part of stock.
pub fn storage_price(requests: &[f64], remaining_capacity: &[f64], fee_multiplier: f64) -> Result<Option<f64>> {
    set_price_absolute(requests, remaining_capacity, fee_multiplier)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredLot {
    pub owner_id: u32,
    pub owner_type: FarmerType,
    pub crop: CropIdx,
    pub quantity: f64,
    pub age: u32,
    pub harvest_step: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StorageRequest {
    pub owner_id: u32,
    pub owner_type: FarmerType,
    pub crop: CropIdx,
    pub quantity: f64,
    pub harvest_step: u32,
}

/// Per-crop storage state. Crops without a facility have zero capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageLedger {
    pub lots: Vec<StoredLot>,
    pub capacity: Vec<f64>,
    pub loss_rate: Vec<f64>,
    pub expiration: Vec<u32>,
    pub base_fee_multiplier: Vec<f64>,
    pub fee_multiplier: Vec<f64>,
    pub fee: Vec<f64>,
    pub request_history: Vec<Vec<f64>>,
    pub remaining_history: Vec<Vec<f64>>,
}

impl StorageLedger {
    pub fn new(crop_ids: &[String], facilities: &[StorageFacilitySpec]) -> Self {
        let n = crop_ids.len();
        let mut s = Self {
            lots: Vec::new(),
            capacity: vec![0.0; n],
            loss_rate: vec![0.0; n],
            expiration: vec![1; n],
            base_fee_multiplier: vec![0.0; n],
            fee_multiplier: vec![0.0; n],
            fee: vec![0.0; n],
            request_history: vec![Vec::new(); n],
            remaining_history: vec![Vec::new(); n],
        };
        for f in facilities {
            if let Some(i) = crop_ids.iter().position(|c| *c == f.crop) {
                s.capacity[i] = f.capacity;
                s.loss_rate[i] = f.loss_rate;
                s.expiration[i] = f.expiration;
                s.base_fee_multiplier[i] = f.fee_multiplier;
                s.fee_multiplier[i] = f.fee_multiplier;
                s.fee[i] = f.fee_multiplier;
            }
        }
        s
    }

    pub fn occupied(&self, crop: CropIdx) -> f64 {
        self.lots.iter().filter(|l| l.crop == crop).map(|l| l.quantity).sum()
    }

    pub fn remaining(&self, crop: CropIdx) -> f64 {
        (self.capacity[crop] - self.occupied(crop)).max(0.0)
    }

    /// Reprices every crop's storage fee from its request history.
    pub fn reprice(&mut self) -> Result<()> {
        for crop in 0..self.capacity.len() {
            if let Some(fee) = storage_price(
                &self.request_history[crop],
                &self.remaining_history[crop],
                self.fee_multiplier[crop],
            )? {
                self.fee[crop] = fee;
            }
        }
        Ok(())
    }

    /// Admits requests by owner priority (Type3, then Type2, then Type1,
    /// ties by owner id) until each crop's capacity is used. Returns what was
    /// admitted and what was turned away. Also records this step's request
    /// volume and remaining capacity for pricing.
    pub fn admit(&mut self, requests: &[StorageRequest]) -> (Vec<StorageRequest>, Vec<StorageRequest>) {
        let mut order: Vec<StorageRequest> = requests.iter().copied().filter(|r| r.quantity > 0.0).collect();
        order.sort_by(|a, b| {
            b.owner_type
                .cmp(&a.owner_type)
                .then_with(|| a.owner_id.cmp(&b.owner_id))
        });
        let n = self.capacity.len();
        let mut requested = vec![0.0; n];
        let mut free: Vec<f64> = (0..n).map(|c| self.remaining(c)).collect();
        for (history, f) in self.remaining_history.iter_mut().zip(&free) {
            history.push(*f);
        }
        let (mut admitted, mut rejected) = (Vec::new(), Vec::new());
        for r in order {
            requested[r.crop] += r.quantity;
            let take = r.quantity.min(free[r.crop]);
            if take > 0.0 {
                free[r.crop] -= take;
                self.lots.push(StoredLot {
                    owner_id: r.owner_id,
                    owner_type: r.owner_type,
                    crop: r.crop,
                    quantity: take,
                    age: 0,
                    harvest_step: r.harvest_step,
                });
                admitted.push(StorageRequest { quantity: take, ..r });
            }
            if r.quantity > take {
                rejected.push(StorageRequest { quantity: r.quantity - take, ..r });
            }
        }
        for (history, r) in self.request_history.iter_mut().zip(requested) {
            history.push(r);
        }
        (admitted, rejected)
    }

    /// One step of spoilage and ageing; expired lots are purged and returned.
    pub fn age(&mut self) -> Vec<StoredLot> {
        for lot in &mut self.lots {
            lot.quantity *= 1.0 - self.loss_rate[lot.crop];
            lot.age += 1;
        }
        let expiration = &self.expiration;
        let (keep, purged): (Vec<_>, Vec<_>) = self
            .lots
            .drain(..)
            .partition(|l| l.age <= expiration[l.crop]);
        self.lots = keep;
        purged
    }

    /// Removes and returns all lots matching the predicate.
    pub fn withdraw(&mut self, mut pred: impl FnMut(&StoredLot) -> bool) -> Vec<StoredLot> {
        let (out, keep): (Vec<_>, Vec<_>) = self.lots.drain(..).partition(|l| pred(l));
        self.lots = keep;
        out
    }
}

/// Both admit and age in one call, in that order.
pub fn storage_admit_and_age(
    ledger: &mut StorageLedger,
    requests: &[StorageRequest],
) -> (Vec<StorageRequest>, Vec<StorageRequest>, Vec<StoredLot>) {
    let (admitted, rejected) = ledger.admit(requests);
    let purged = ledger.age();
    (admitted, rejected, purged)
}
