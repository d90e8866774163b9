//! The per-step phase pipeline.

use std::collections::BTreeMap;

use rand_distr::{Distribution, StandardNormal};

use super::{CommodityFlows, MillActivity, SimulationState};
use crate::credit::{early_close, record_payment, request_loan, LoanAccount, LoanKind};
use crate::domain::{CropIdx, Outlet};
use crate::error::{Error, Result};
use crate::farmer::{
    allocate_land, apply_pesticide_step, apply_resource_shortfall, check_exit, compute_total_expense,
    estimate_profit, evaluate_lender_offer, harvest, perceive, profit_terms, rank_crops, rescale_for_water,
    storage_decision, update_income_expectation, update_upper_limit, ExpenseInputs, FarmerType, LandBudget,
    LenderDecision, PlantingState, ProfitInputs, WaterMode, WaterPlan, WaterSource,
};
use crate::ledger::{Account, EnvAccount, TransferKind};
use crate::market::{
    consumer_demand, import_export_step, policy_step, sale_deviation_percent, set_price_absolute,
    set_price_trend, storage_admit_and_age, LotOwner, StorageRequest, TradeEvent,
};
use crate::mill::{
    acquire, decide_ethanol_mode, diversion_for, estimate_sugar_requirement, process, required_sugarcane,
    CaneOffer,
};
use crate::scenario::PricingMode;
use crate::water::{reallocate_round, water_agent_allocate, CropOffer, LenderPool, Payment, WaterRequest};

/// Smallest planting worth putting in the ground, in hectares.
const MIN_PLANTING: f64 = 1e-3;
/// Steps after harvest during which revenue counts towards income expectation.
const EXPECTATION_WINDOW: u32 = 2;
/// Steps after a crop ends during which its upper limit is revised.
const UPPER_LIMIT_WINDOW: u32 = 2;

/// A free farmer's land and profit estimate for every crop.
struct CropPlan {
    idx: usize,
    land: Vec<f64>,
    profit: Vec<f64>,
    water_price: f64,
}

impl SimulationState {
    /// Advances the simulation by one step.
    pub fn step(&mut self) -> Result<()> {
        self.step += 1;
        let opening = self.balances();
        for (flow, market) in self.flows.iter_mut().zip(&self.markets) {
            *flow = CommodityFlows {
                opening_stock: market.current_stock(),
                ..CommodityFlows::default()
            };
        }
        self.mill_activity = MillActivity::default();

        self.phase_inflation();
        self.phase_pricing()?;
        self.phase_consumers();
        self.phase_trade();
        self.phase_policy();
        self.phase_mill()?;
        self.phase_farmers()?;
        self.phase_planting()?;

        self.check_stock_flows()?;
        self.reconcile(&opening)?;
        let report = self.ledger.close_step();
        if !report.is_balanced() {
            return Err(Error::Ledger {
                step: self.step,
                detail: report.describe(),
            });
        }
        let frame = self.frame();
        self.metrics.push(frame);
        Ok(())
    }

    fn balances(&self) -> Vec<f64> {
        let t = &self.treasury;
        let mut out: Vec<f64> = self.farmers.iter().map(|f| f.savings).collect();
        out.extend([self.mill.savings, t.market, t.loan_agent, t.water_agent, t.storage, t.government]);
        out
    }

    fn account_slot(&self, account: Account) -> Option<usize> {
        let n = self.farmers.len();
        Some(match account {
            Account::Farmer(id) => id as usize,
            Account::Mill => n,
            Account::Market => n + 1,
            Account::LoanAgent => n + 2,
            Account::WaterAgent => n + 3,
            Account::Storage => n + 4,
            Account::Government => n + 5,
            Account::Env(_) => return None,
        })
    }

    /// Checks that every agent's cash moved by exactly its ledger entries
    /// and that no exited farmer took part in a transfer.
    fn reconcile(&self, opening: &[f64]) -> Result<()> {
        let mut deltas = vec![0.0; opening.len()];
        for t in self.ledger.current() {
            for (account, sign) in [(t.from, -1.0), (t.to, 1.0)] {
                if let Account::Farmer(id) = account {
                    let f = &self.farmers[id as usize];
                    if f.exited_at.is_some_and(|s| s < t.step) {
                        return Err(Error::Ledger {
                            step: self.step,
                            detail: format!("{:?} of {} involves farmer {id} who exited earlier", t.kind, t.amount),
                        });
                    }
                }
                if let Some(slot) = self.account_slot(account) {
                    deltas[slot] += sign * t.amount;
                }
            }
        }
        let closing = self.balances();
        for (slot, ((open, close), delta)) in opening.iter().zip(&closing).zip(&deltas).enumerate() {
            let moved = close - open;
            let tol = 1e-6 + 1e-9 * open.abs().max(close.abs());
            if (moved - delta).abs() > tol {
                return Err(Error::Ledger {
                    step: self.step,
                    detail: format!("account slot {slot} moved {moved} but the ledger records {delta}"),
                });
            }
        }
        Ok(())
    }

    fn check_stock_flows(&self) -> Result<()> {
        for (k, (flow, market)) in self.flows.iter().zip(&self.markets).enumerate() {
            let expected = flow.expected_closing();
            let actual = market.current_stock();
            if (expected - actual).abs() > 1e-6 * expected.abs().max(1.0) {
                return Err(Error::Contract(format!(
                    "stock of `{}` is {actual}, flows give {expected}",
                    self.config.commodities[k].id
                )));
            }
        }
        Ok(())
    }

    // Phase 1.
    fn phase_inflation(&mut self) {
        self.clock.advance();
        self.labor.reprice(&self.clock);
        let clock = &self.clock;
        for f in self.farmers.iter_mut().filter(|f| !f.exited) {
            f.per_person_charge = clock.adjust(f.base_per_person_charge);
            f.safety_buffer = clock.adjust(0.10 * f.initial_savings);
        }
        for (m, base) in self.storage.fee_multiplier.iter_mut().zip(&self.storage.base_fee_multiplier) {
            *m = clock.adjust(*base);
        }
    }

    // Phase 2.
    fn phase_pricing(&mut self) -> Result<()> {
        for (k, m) in self.markets.iter_mut().enumerate() {
            let spec = &self.config.commodities[k];
            let next = match self.config.pricing_mode {
                PricingMode::Absolute => {
                    set_price_absolute(&m.sale_history, &m.stock_history, spec.crop_mult_factor)?
                }
                PricingMode::Trend => {
                    let n = m.sale_history.len();
                    (n >= 4).then(|| {
                        let deviations: Vec<f64> = m.sale_history[n - 4..]
                            .iter()
                            .map(|s| sale_deviation_percent(*s, spec.usual_demand))
                            .collect();
                        set_price_trend(m.price(), &deviations)
                    })
                }
            };
            let price = next.unwrap_or_else(|| m.price());
            m.price_history.push(price);
        }
        self.storage.reprice()
    }

    // Phase 3.
    fn phase_consumers(&mut self) {
        self.release_stored_goods();
        for k in 0..self.markets.len() {
            let z: f64 = StandardNormal.sample(&mut self.rng.demand);
            let m = &self.markets[k];
            let price_now = m.price();
            let n = m.price_history.len();
            let price_prev = if n >= 2 { m.price_history[n - 2] } else { price_now };
            let consumer = &self.consumers[k];
            let past4 = m.past4_sales(consumer.usual_demand);
            let demand = consumer_demand(price_now, price_prev, past4, consumer)
                * (1.0 + self.config.demand_noise * z).max(0.0);
            let stock = m.current_stock();
            let sold = demand.min(stock);
            let lots = self.markets[k].take(sold);
            let crop = self.commodity_crop(k);
            for lot in lots {
                self.pay_lot_owner(
                    Account::Env(EnvAccount::Consumers),
                    lot.owner,
                    price_now * lot.quantity,
                    TransferKind::MarketSale,
                    crop,
                    lot.harvest_step,
                );
            }
            let m = &mut self.markets[k];
            m.sale_history.push(sold);
            m.stock_history.push(stock);
            m.demand_history.push(demand);
            self.flows[k].sales += sold;
        }
    }

    /// Owners take stored goods back to market once the price recovers to
    /// its recent average, or when the fee outgrows their storage budget;
    /// the rest pay this step's fee.
    fn release_stored_goods(&mut self) {
        let mut release = Vec::with_capacity(self.storage.lots.len());
        for i in 0..self.storage.lots.len() {
            let lot = &self.storage.lots[i];
            let (owner, crop, qty) = (lot.owner_id as usize, lot.crop, lot.quantity);
            let k = self.crop_commodity(crop).expect("stored crops are market crops");
            let history = &self.markets[k].price_history;
            let price = self.markets[k].price();
            let sigma = self.farmers[owner].info_noise_sigma;
            let seen = perceive(price, sigma, &mut self.rng.perception);
            let tail = &history[history.len().saturating_sub(crate::farmer::STORAGE_LOOKBACK)..];
            let average = tail.iter().sum::<f64>() / tail.len() as f64;
            let fee = self.storage.fee[crop] * qty;
            let budget = crate::farmer::STORAGE_BUDGET_FRACTION * self.farmers[owner].savings;
            let out = seen >= average || fee > budget;
            if !out {
                self.transfer(Account::Farmer(owner as u32), Account::Storage, fee, TransferKind::StorageFee);
            }
            release.push(out);
        }
        let mut flags = release.into_iter();
        let released = self.storage.withdraw(|_| flags.next().unwrap_or(false));
        for lot in released.into_iter().rev() {
            let k = self.crop_commodity(lot.crop).expect("stored crops are market crops");
            self.flows[k].storage_withdrawals += lot.quantity;
            self.markets[k].lots.push_front(crate::market::MarketLot {
                owner: LotOwner::Farmer(lot.owner_id),
                quantity: lot.quantity,
                harvest_step: lot.harvest_step,
            });
        }
    }

    fn pay_lot_owner(
        &mut self,
        payer: Account,
        owner: LotOwner,
        amount: f64,
        kind: TransferKind,
        crop: Option<CropIdx>,
        harvest_step: u32,
    ) {
        let to = match owner {
            LotOwner::Farmer(id) => Account::Farmer(id),
            LotOwner::Mill => Account::Mill,
            LotOwner::Market => Account::Market,
        };
        self.transfer(payer, to, amount, kind);
        if let (LotOwner::Farmer(id), Some(crop)) = (owner, crop) {
            self.credit_revenue(id as usize, |c| c == crop, harvest_step, amount);
        }
    }

    /// Adds revenue to the farmer's open harvest record, if the window is still open.
    fn credit_revenue(&mut self, idx: usize, crop: impl Fn(CropIdx) -> bool, harvest_step: u32, amount: f64) {
        if let Some(r) = self.farmers[idx]
            .expectations
            .open_harvests
            .iter_mut()
            .find(|r| r.step == harvest_step && crop(r.crop))
        {
            r.revenue += amount;
        }
    }

    // Phase 4.
    fn phase_trade(&mut self) {
        for k in 0..self.markets.len() {
            let usual = self.clock.adjust(self.config.commodities[k].initial_price);
            let price = self.markets[k].price();
            let trade = self.trade[k].clone();
            let (import, export) = import_export_step(price, usual, &trade);
            if import > 0.0 {
                let cost = trade.import_price * import;
                self.transfer(Account::Market, Account::Env(EnvAccount::ImportSellers), cost, TransferKind::ImportPurchase);
                self.transfer(Account::Market, Account::Government, trade.import_tax * cost, TransferKind::ImportTax);
                self.markets[k].deposit(LotOwner::Market, import, self.step);
                self.flows[k].imports += import;
            }
            let export = export.min(self.markets[k].current_stock());
            if export > 0.0 {
                let crop = self.commodity_crop(k);
                let tax = trade.export_tax.min(1.0);
                for lot in self.markets[k].take(export) {
                    let gross = trade.export_price * lot.quantity;
                    self.pay_lot_owner(
                        Account::Env(EnvAccount::ExportBuyers),
                        lot.owner,
                        gross * (1.0 - tax),
                        TransferKind::ExportSale,
                        crop,
                        lot.harvest_step,
                    );
                    self.transfer(
                        Account::Env(EnvAccount::ExportBuyers),
                        Account::Government,
                        gross * tax,
                        TransferKind::ExportTax,
                    );
                }
                self.flows[k].exports += export;
            }
            self.trade_history[k].push(TradeEvent {
                imported: import > 0.0,
                exported: export > 0.0,
            });
        }
    }

    // Phase 5.
    fn phase_policy(&mut self) {
        let delta = self.config.policy.delta;
        for (trade, history) in self.trade.iter_mut().zip(&self.trade_history) {
            *trade = policy_step(history, trade, delta);
        }
    }

    // Phase 6.
    fn phase_mill(&mut self) -> Result<()> {
        let cfg = &self.config;
        let params = &cfg.mill;
        let (yields, costs) = (params.yields, params.costs);
        let frp = cfg.policy.frp;
        let ethanol_requirement = cfg.policy.ethanol_requirement;
        let ethanol_price = cfg.policy.ethanol_price;
        let threshold = params.collection_threshold;
        let loan_params = cfg.loans.clone();
        let months = cfg.months_per_step;
        let sugar = self.sugar_commodity();

        // Sales are capped by stock, so an empty shelf would read as no
        // demand; the mill looks at what consumers asked for instead.
        let estimate = estimate_sugar_requirement(&self.markets[sugar].demand_history, params.initial_sugar_requirement);
        let sugar_needed = (estimate - self.markets[sugar].current_stock()).max(0.0);
        let mode = decide_ethanol_mode(costs.juice_ethanol_cost_per_unit(&yields), ethanol_price);
        let requirement = required_sugarcane(ethanol_requirement, sugar_needed, &yields, mode)?;

        self.service_mill_loan();
        let unit_processing = process(1.0, requirement.diversion, &yields, &costs)?.cost;
        let bill = requirement.sugarcane * (frp + unit_processing);
        if self.mill.loan.is_none() && bill > self.mill.spendable() {
            let amount = self.mill.credit_rating * loan_params.credit_unit;
            if amount > 0.0 {
                let rate = loan_params.rate_per_step(LoanKind::Credit, months);
                self.mill.loan = Some(LoanAccount::open(LoanKind::Credit, amount, rate, loan_params.term_steps, 0.0));
                self.transfer(Account::LoanAgent, Account::Mill, amount, TransferKind::LoanDisbursement);
            }
        }

        let offers: Vec<CaneOffer> = std::mem::take(&mut self.cane_offers)
            .into_iter()
            .filter(|o| !self.farmers[o.farmer_id as usize].exited)
            .collect();
        let offered: f64 = offers.iter().map(|o| o.quantity).sum();
        let funds = (self.mill.spendable() - requirement.sugarcane * unit_processing).max(0.0);
        let purchases = acquire(requirement.sugarcane, &offers, frp, funds, threshold);
        let mill_crops: Vec<bool> = (0..self.config.crops.len()).map(|c| is_mill_crop(&self.config, c)).collect();
        let mut bought = 0.0;
        for p in &purchases {
            bought += p.quantity;
            self.transfer(Account::Mill, Account::Farmer(p.farmer_id), p.paid, TransferKind::CanePayment);
            self.credit_revenue(p.farmer_id as usize, |c| mill_crops[c], p.harvest_step, p.paid);
            self.mill.dues.record(p, p.harvest_step, frp);
        }

        let diversion = diversion_for(bought, ethanol_requirement, &yields, mode);
        let output = process(bought, diversion, &yields, &costs)?;
        self.transfer(Account::Mill, Account::Env(EnvAccount::MillOperations), output.cost, TransferKind::Processing);
        self.transfer(
            Account::Env(EnvAccount::EthanolAgency),
            Account::Mill,
            output.ethanol * ethanol_price,
            TransferKind::EthanolSale,
        );
        self.markets[sugar].deposit(LotOwner::Mill, output.sugar, self.step);
        self.flows[sugar].production += output.sugar;

        let funds = self.mill.spendable();
        let farmers = &self.farmers;
        let payments = self.mill.dues.settle(funds, |id| farmers[id as usize].exited);
        for (id, amount) in payments {
            self.transfer(Account::Mill, Account::Farmer(id), amount, TransferKind::DuesSettlement);
        }

        self.mill.last_diversion = diversion;
        self.mill.mode = mode;
        self.mill_activity = MillActivity {
            cane_offered: offered,
            cane_purchased: bought,
            cane_dumped: offered - bought,
            sugar: output.sugar,
            ethanol: output.ethanol,
        };
        Ok(())
    }

    fn service_mill_loan(&mut self) {
        let Some(mut loan) = self.mill.loan.take() else { return };
        loan.accrue();
        let due = loan.amount_due();
        let can_pay = self.mill.spendable() >= due;
        if can_pay {
            self.transfer(Account::Mill, Account::LoanAgent, due, TransferKind::Installment);
        }
        let outcome = record_payment(&mut loan, can_pay, self.mill.credit_rating, &self.config.loans);
        self.mill.credit_rating = outcome.rating;
        if loan.is_active() {
            self.mill.loan = Some(loan);
        }
    }

    // Phase 7.
    fn phase_farmers(&mut self) -> Result<()> {
        let mut requests: Vec<StorageRequest> = Vec::new();
        for idx in 0..self.farmers.len() {
            if self.farmers[idx].exited {
                continue;
            }
            self.close_expectation_windows(idx);
            let family = self.farmers[idx].family_charge_per_step(self.config.months_per_step);
            self.transfer(
                Account::Farmer(idx as u32),
                Account::Env(EnvAccount::Household),
                family,
                TransferKind::FamilyExpense,
            );
            self.tend_crop(idx, &mut requests)?;
            let seized = self.service_loans(idx);
            self.request_operating_loan(idx);
            if seized || check_exit(&self.farmers[idx], self.config.months_per_step) {
                self.exit_farmer(idx, &mut requests);
            } else {
                self.farmers[idx].record_savings();
                self.revise_upper_limits(idx);
            }
        }
        // Produce offered to storage never reached the market; what storage
        // turns away goes there now.
        let (admitted, rejected, _spoiled) = storage_admit_and_age(&mut self.storage, &requests);
        for a in &admitted {
            let k = self.crop_commodity(a.crop).expect("stored crops are market crops");
            self.flows[k].storage_deposits += a.quantity;
        }
        for r in &rejected {
            let k = self.crop_commodity(r.crop).expect("stored crops are market crops");
            self.markets[k].deposit(LotOwner::Farmer(r.owner_id), r.quantity, r.harvest_step);
        }
        Ok(())
    }

    fn close_expectation_windows(&mut self, idx: usize) {
        let step = self.step;
        let e = &mut self.farmers[idx].expectations;
        let mut i = 0;
        while i < e.open_harvests.len() {
            let r = &e.open_harvests[i];
            if r.step + EXPECTATION_WINDOW < step {
                let r = e.open_harvests.remove(i);
                e.income_expectation[r.crop] =
                    update_income_expectation(e.income_expectation[r.crop], r.revenue, r.quantity);
            } else {
                i += 1;
            }
        }
    }

    fn revise_upper_limits(&mut self, idx: usize) {
        let step = self.step;
        let f = &mut self.farmers[idx];
        for (crop, spec) in self.config.crops.iter().enumerate() {
            let Some(ended) = f.expectations.last_cultivated[crop] else { continue };
            let since = step.saturating_sub(ended);
            if since == 0 || since > UPPER_LIMIT_WINDOW {
                continue;
            }
            let window = f.savings_window(spec.harvest_cycle as usize);
            if let Some(ul) = update_upper_limit(&window, f.expectations.last_allocated[crop], f.land) {
                f.expectations.upper_limit[crop] = ul;
            }
        }
    }

    /// Pays this step's crop bills, ages the crop and harvests when due.
    fn tend_crop(&mut self, idx: usize, requests: &mut Vec<StorageRequest>) -> Result<()> {
        let Some(mut p) = self.farmers[idx].planting.take() else { return Ok(()) };
        let id = Account::Farmer(idx as u32);
        let spec = self.config.crops[p.crop].clone();

        if let WaterSource::Agent { volume } = p.water {
            let bill = volume * self.config.water.agent_price;
            let paid = bill.min(self.farmers[idx].savings.max(0.0));
            self.transfer(id, Account::WaterAgent, paid, TransferKind::WaterCharge);
            if paid < bill {
                p.quality = apply_resource_shortfall(p.quality, spec.water_flexibility, paid, bill)?;
            }
        }
        let bill = spec.labor_requirement * self.labor.wage(p.crop) * p.land;
        let paid = bill.min(self.farmers[idx].savings.max(0.0));
        self.transfer(id, Account::Env(EnvAccount::Labor), paid, TransferKind::Labor);
        if paid < bill {
            p.quality = apply_resource_shortfall(p.quality, spec.labor_flexibility, paid, bill)?;
        }
        let bill = spec.fert_pest_cost * p.land;
        let can_pay = self.farmers[idx].savings >= bill;
        if can_pay {
            self.transfer(id, Account::Env(EnvAccount::FertPest), bill, TransferKind::FertPest);
        }
        apply_pesticide_step(&mut p, can_pay, spec.prone_to_pest);

        p.age += 1;
        p.steps_to_harvest = p.steps_to_harvest.saturating_sub(1);
        if p.steps_to_harvest == 0 {
            if p.is_dead() {
                p.steps_to_harvest = spec.harvest_cycle;
            } else {
                let crop = p.crop;
                let lender = p.lender_share().map(|(l, _)| l as usize);
                let mut y = harvest(&mut p, &spec)?;
                if let Some(l) = lender {
                    if self.farmers[l].exited {
                        y.farmer += y.lender;
                        y.lender = 0.0;
                    } else {
                        self.dispose_produce(l, crop, y.lender, requests);
                    }
                }
                self.farmers[idx].expectations.open_harvests.push(crate::farmer::HarvestRecord {
                    crop,
                    step: self.step,
                    quantity: y.farmer,
                    revenue: 0.0,
                });
                self.dispose_produce(idx, crop, y.farmer, requests);
            }
        }
        let f = &mut self.farmers[idx];
        if p.is_finished(&spec) {
            f.expectations.last_cultivated[p.crop] = Some(self.step);
        } else {
            f.planting = Some(p);
        }
        Ok(())
    }

    /// Sends produce to the mill queue or the market, diverting part of
    /// market produce into a storage request when prices are depressed.
    fn dispose_produce(&mut self, idx: usize, crop: CropIdx, quantity: f64, requests: &mut Vec<StorageRequest>) {
        if quantity <= 0.0 {
            return;
        }
        let f = &self.farmers[idx];
        match self.config.crops[crop].outlet {
            Outlet::Mill => self.cane_offers.push(CaneOffer {
                farmer_id: f.id,
                locality: f.locality,
                quantity,
                harvest_step: self.step,
            }),
            Outlet::Market => {
                let k = self.crop_commodity(crop).expect("validated market crop");
                let m = &self.markets[k];
                let store = if self.storage.capacity[crop] > 0.0 {
                    let seen = perceive(m.price(), f.info_noise_sigma, &mut self.rng.perception);
                    storage_decision(f.savings, seen, &m.price_history, self.storage.fee[crop], quantity)
                } else {
                    0.0
                };
                if store > 0.0 {
                    requests.push(StorageRequest {
                        owner_id: f.id,
                        owner_type: f.farmer_type,
                        crop,
                        quantity: store,
                        harvest_step: self.step,
                    });
                }
                let owner = LotOwner::Farmer(f.id);
                self.markets[k].deposit(owner, quantity - store, self.step);
                self.flows[k].production += quantity;
            }
        }
    }

    /// Installments (collateral first), seizure, then early closure.
    /// Returns true when the farmer's land was seized.
    fn service_loans(&mut self, idx: usize) -> bool {
        let params = self.config.loans.clone();
        let id = Account::Farmer(idx as u32);
        let mut seized = false;
        for kind in [LoanKind::Collateral, LoanKind::Credit] {
            let Some(mut loan) = self.loan_slot(idx, kind).take() else { continue };
            loan.accrue();
            let due = loan.amount_due();
            let can_pay = self.farmers[idx].savings >= due;
            if can_pay {
                self.transfer(id, Account::LoanAgent, due, TransferKind::Installment);
            }
            let outcome = record_payment(&mut loan, can_pay, self.farmers[idx].credit_rating, &params);
            self.farmers[idx].credit_rating = outcome.rating;
            if let Some(s) = outcome.seizure {
                self.transfer(
                    Account::Env(EnvAccount::LandBuyers),
                    Account::LoanAgent,
                    s.collateral_value,
                    TransferKind::CollateralSale,
                );
                self.transfer(Account::LoanAgent, id, s.refund, TransferKind::SeizureRefund);
                self.farmers[idx].land = 0.0;
                seized = true;
            }
            if loan.is_active() {
                *self.loan_slot(idx, kind) = Some(loan);
            }
        }
        if seized {
            return true;
        }
        let reserve = self.remaining_expense(idx) + self.farmers[idx].safety_buffer;
        for kind in [LoanKind::Collateral, LoanKind::Credit] {
            let savings = self.farmers[idx].savings;
            let close = match self.loan_slot(idx, kind) {
                Some(loan) => early_close(loan, savings, reserve),
                None => false,
            };
            if close {
                let mut loan = self.loan_slot(idx, kind).take().expect("checked above");
                let amount = loan.close();
                self.transfer(id, Account::LoanAgent, amount, TransferKind::LoanClosure);
            }
        }
        false
    }

    fn loan_slot(&mut self, idx: usize, kind: LoanKind) -> &mut Option<LoanAccount> {
        match kind {
            LoanKind::Collateral => &mut self.loans[idx].collateral,
            LoanKind::Credit => &mut self.loans[idx].credit,
        }
    }

    /// Money needed to carry the current crop to the end of its cycle.
    fn remaining_expense(&self, idx: usize) -> f64 {
        let f = &self.farmers[idx];
        let Some(p) = &f.planting else { return 0.0 };
        let spec = &self.config.crops[p.crop];
        let (water_per_ha, mode) = match p.water {
            WaterSource::Agent { volume } if p.land > 0.0 => {
                (volume * self.config.water.agent_price / p.land, WaterMode::WithWater)
            }
            _ => (0.0, WaterMode::WithoutWater),
        };
        compute_total_expense(
            &ExpenseInputs {
                remaining_steps: p.remaining_steps(spec),
                labor_per_ha: spec.labor_requirement * self.labor.wage(p.crop),
                water_per_ha,
                fert_pest_per_ha: spec.fert_pest_cost,
                family_per_step: f.family_charge_per_step(self.config.months_per_step),
                land: p.land,
                initial_cost_per_ha: spec.initial_cost,
                planted: true,
            },
            mode,
        )
    }

    fn request_operating_loan(&mut self, idx: usize) {
        let expense = self.remaining_expense(idx);
        let shortfall = expense - self.farmers[idx].savings;
        if shortfall > 0.0 {
            self.take_loans(idx, shortfall);
        }
    }

    /// Borrows up to `amount`, credit first, at most one open loan per kind.
    fn take_loans(&mut self, idx: usize, amount: f64) {
        let params = self.config.loans.clone();
        let months = self.config.months_per_step;
        let f = &self.farmers[idx];
        let rating = if self.loans[idx].credit.is_none() { f.credit_rating } else { 0.0 };
        let collateral = if self.loans[idx].collateral.is_none() {
            f.land * params.land_value_per_ha
        } else {
            0.0
        };
        let split = request_loan(amount, rating, collateral, params.credit_unit);
        for (kind, principal) in [(LoanKind::Credit, split.credit), (LoanKind::Collateral, split.collateral)] {
            if principal <= 0.0 {
                continue;
            }
            let rate = params.rate_per_step(kind, months);
            *self.loan_slot(idx, kind) = Some(LoanAccount::open(kind, principal, rate, params.term_steps, collateral));
            self.transfer(Account::LoanAgent, Account::Farmer(idx as u32), principal, TransferKind::LoanDisbursement);
        }
    }

    /// Freezes a farmer. Goods still in the market or storage are forfeited
    /// to the market agent and cane waiting for the mill is dropped.
    fn exit_farmer(&mut self, idx: usize, requests: &mut Vec<StorageRequest>) {
        let id = idx as u32;
        self.farmers[idx].mark_exited(self.step);
        for m in &mut self.markets {
            for lot in m.lots.iter_mut().filter(|l| l.owner == LotOwner::Farmer(id)) {
                lot.owner = LotOwner::Market;
            }
        }
        for lot in self.storage.withdraw(|l| l.owner_id == id) {
            let k = self.crop_commodity(lot.crop).expect("stored crops are market crops");
            self.flows[k].storage_withdrawals += lot.quantity;
            self.markets[k].deposit(LotOwner::Market, lot.quantity, lot.harvest_step);
        }
        let (pending, kept): (Vec<_>, Vec<_>) = std::mem::take(requests).into_iter().partition(|r| r.owner_id == id);
        *requests = kept;
        for r in pending {
            let k = self.crop_commodity(r.crop).expect("stored crops are market crops");
            self.markets[k].deposit(LotOwner::Market, r.quantity, r.harvest_step);
        }
        self.cane_offers.retain(|o| o.farmer_id != id);
    }

    // Phases 8 and 9.
    fn phase_planting(&mut self) -> Result<()> {
        let mut type1 = Vec::new();
        for idx in 0..self.farmers.len() {
            let f = &self.farmers[idx];
            if f.exited || f.planting.is_some() || f.land <= 0.0 {
                continue;
            }
            let farmer_type = f.farmer_type;
            let plan = self.plan_crops(idx);
            if farmer_type == FarmerType::Type1 {
                type1.push(plan);
            } else {
                let choice = self.best_crop(&plan, |_| true);
                if let Some(crop) = choice {
                    let source = if self.config.crops[crop].needs_water() {
                        WaterSource::Own
                    } else {
                        WaterSource::RainFed
                    };
                    self.plant(idx, crop, plan.land[crop], source);
                }
            }
        }
        if type1.is_empty() {
            return Ok(());
        }

        let mut unserved = Vec::new();
        let mut settled = Vec::new();
        if self.config.water.agent_present {
            let available = (self.config.water.agent_supply - self.agent_water_committed()).max(0.0);
            let asks: Vec<(u32, f64)> = type1
                .iter()
                .filter_map(|p| self.water_ask(p).map(|v| (p.idx as u32, v)))
                .collect();
            let grants = water_agent_allocate(available, &asks, self.config.water.agent_price);
            let granted: BTreeMap<u32, f64> = grants.iter().map(|g| (g.farmer_id, g.volume)).collect();
            for plan in type1 {
                match granted.get(&(plan.idx as u32)) {
                    Some(v) => settled.push((plan, Some(*v))),
                    None => unserved.push(plan),
                }
            }
        } else {
            unserved = type1;
        }
        for (plan, volume) in settled {
            self.plant_with_agent_water(&plan, volume.unwrap_or(0.0))?;
        }
        self.lender_market(unserved)
    }

    fn plan_crops(&mut self, idx: usize) -> CropPlan {
        let loan_params = &self.config.loans;
        let f = &self.farmers[idx];
        let water_price = if f.farmer_type == FarmerType::Type1 && self.config.water.agent_present {
            perceive(self.config.water.agent_price, f.info_noise_sigma, &mut self.rng.perception)
        } else {
            0.0
        };
        let mut loan_estimate = 0.0;
        if self.loans[idx].credit.is_none() {
            loan_estimate += f.credit_rating * loan_params.credit_unit;
        }
        if self.loans[idx].collateral.is_none() {
            loan_estimate += f.land * loan_params.land_value_per_ha;
        }
        let family = f.family_charge_per_step(self.config.months_per_step);
        let n = self.config.crops.len();
        let (mut land, mut profit) = (vec![0.0; n], vec![0.0; n]);
        for (i, crop) in self.config.crops.iter().enumerate() {
            let mode = f.farmer_type.water_mode();
            let wage = self.labor.wage(i);
            let budget = LandBudget {
                savings: f.savings,
                loan_estimate,
                safety_buffer: f.safety_buffer,
                family_charge_per_step: family,
                crop,
                wage,
                water_price,
                upper_limit: f.expectations.upper_limit[i],
                per_cycle_costs: self.config.per_cycle_costs,
            };
            land[i] = allocate_land(&budget, mode).min(f.land);
            let inputs = ProfitInputs {
                crop,
                land: land[i],
                income_expectation: f.expectations.income_expectation[i],
                wage,
                water_price,
            };
            profit[i] = estimate_profit(&inputs, mode);
        }
        CropPlan { idx, land, profit, water_price }
    }

    /// Most profitable eligible crop with positive profit and usable land.
    fn best_crop(&self, plan: &CropPlan, eligible: impl Fn(CropIdx) -> bool) -> Option<CropIdx> {
        let candidates: Vec<(CropIdx, f64)> = (0..plan.land.len())
            .filter(|&i| eligible(i) && plan.land[i] >= MIN_PLANTING && plan.profit[i] > 0.0)
            .map(|i| (i, plan.profit[i]))
            .collect();
        rank_crops(&candidates, &self.config.crops).first().copied()
    }

    fn rain_fed(&self, crop: CropIdx) -> bool {
        !self.config.crops[crop].needs_water()
    }

    /// Water asked of the water agent: enough for the best water-needing crop.
    fn water_ask(&self, plan: &CropPlan) -> Option<f64> {
        let crop = self.best_crop(plan, |i| !self.rain_fed(i))?;
        Some(self.config.crops[crop].water_requirement * plan.land[crop])
    }

    fn agent_water_committed(&self) -> f64 {
        self.farmers
            .iter()
            .filter(|f| !f.exited)
            .filter_map(|f| match f.planting.as_ref()?.water {
                WaterSource::Agent { volume } => Some(volume),
                _ => None,
            })
            .sum()
    }

    fn plant_with_agent_water(&mut self, plan: &CropPlan, received: f64) -> Result<()> {
        let crops = &self.config.crops;
        let plans: Vec<WaterPlan> = (0..crops.len())
            .filter(|&i| plan.land[i] >= MIN_PLANTING)
            .map(|i| WaterPlan {
                crop: i,
                land: plan.land[i],
                water_requested: crops[i].water_requirement * plan.land[i],
                needs_water: crops[i].needs_water(),
            })
            .collect();
        let rescaled = rescale_for_water(&plans, received)?;
        let f = &self.farmers[plan.idx];
        let mut adjusted = CropPlan {
            idx: plan.idx,
            land: vec![0.0; crops.len()],
            profit: vec![0.0; crops.len()],
            water_price: plan.water_price,
        };
        for (i, land) in rescaled {
            adjusted.land[i] = land;
            adjusted.profit[i] = estimate_profit(
                &ProfitInputs {
                    crop: &crops[i],
                    land,
                    income_expectation: f.expectations.income_expectation[i],
                    wage: self.labor.wage(i),
                    water_price: plan.water_price,
                },
                WaterMode::WithWater,
            );
        }
        if let Some(crop) = self.best_crop(&adjusted, |_| true) {
            let land = adjusted.land[crop];
            let source = if crops[crop].needs_water() {
                WaterSource::Agent {
                    volume: received.min(crops[crop].water_requirement * land),
                }
            } else {
                WaterSource::RainFed
            };
            self.plant(plan.idx, crop, land, source);
        }
        Ok(())
    }

    /// Type3 lenders allocate their spare water locality by locality: one
    /// round of crop-dictating allocation, the farmers' replies, then one
    /// reallocation round for those still unserved. Anyone left plants the
    /// best rain-fed crop.
    fn lender_market(&mut self, plans: Vec<CropPlan>) -> Result<()> {
        let crops = self.config.crops.clone();
        let share_factor = self.config.water.share_factor;
        let mut lent: BTreeMap<u32, f64> = BTreeMap::new();
        for f in self.farmers.iter().filter(|f| !f.exited) {
            if let Some(WaterSource::Lender { lender, volume, .. }) = f.planting.as_ref().map(|p| p.water) {
                *lent.entry(lender).or_insert(0.0) += volume;
            }
        }
        let mut pools_by_locality: BTreeMap<u32, Vec<LenderPool>> = BTreeMap::new();
        for f in self.farmers.iter().filter(|f| !f.exited && f.farmer_type == FarmerType::Type3) {
            let available = f.water_endowment - lent.get(&f.id).copied().unwrap_or(0.0);
            if available > 0.0 {
                pools_by_locality.entry(f.locality).or_default().push(LenderPool {
                    lender_id: f.id,
                    available_water: available,
                    committed_produce: vec![0.0; crops.len()],
                });
            }
        }
        let prices: Vec<f64> = (0..crops.len())
            .map(|i| match self.crop_commodity(i) {
                Some(k) => self.markets[k].price(),
                None => self.config.policy.frp,
            })
            .collect();
        let offers: Vec<CropOffer<'_>> = crops
            .iter()
            .enumerate()
            .filter(|(_, c)| c.needs_water())
            .map(|(i, c)| CropOffer {
                crop: i,
                id: &c.id,
                price: prices[i],
                produce: c.produce,
                minimum_produce: c.minimum_produce.unwrap_or(0.0),
            })
            .collect();

        let mut by_locality: BTreeMap<u32, Vec<CropPlan>> = BTreeMap::new();
        for plan in plans {
            by_locality.entry(self.farmers[plan.idx].locality).or_default().push(plan);
        }
        let mut leftovers = Vec::new();
        for (locality, plans) in by_locality {
            let Some(pools) = pools_by_locality.get_mut(&locality) else {
                leftovers.extend(plans);
                continue;
            };
            let mut requests: Vec<WaterRequest> = plans
                .iter()
                .map(|p| WaterRequest {
                    farmer_id: p.idx as u32,
                    water_requirement: (0..crops.len())
                        .map(|i| {
                            let wants = crops[i].needs_water() && p.land[i] >= MIN_PLANTING && p.profit[i] > 0.0;
                            if wants { crops[i].water_requirement * p.land[i] } else { 0.0 }
                        })
                        .collect(),
                    estimated_produce: (0..crops.len()).map(|i| crops[i].produce * p.land[i]).collect(),
                    land_willing: p.land.clone(),
                })
                .filter(|r| r.water_requirement.iter().any(|w| *w > 0.0))
                .collect();
            let mut decided: Vec<u32> = Vec::new();
            for _round in 0..2 {
                if requests.is_empty() {
                    break;
                }
                let allocations = reallocate_round(pools, &requests, &offers, share_factor);
                for (lender, a) in allocations {
                    let crop = a.crop.expect("lenders dictate the crop");
                    let plan = plans.iter().find(|p| p.idx as u32 == a.farmer_id).expect("request has a plan");
                    let need = crops[crop].water_requirement * plan.land[crop];
                    let land = plan.land[crop] * (a.volume / need).min(1.0);
                    let share = match a.payment {
                        Payment::ProduceShare(s) => s,
                        Payment::UnitPrice(_) => 0.0,
                    };
                    let f = &self.farmers[plan.idx];
                    let offered = profit_terms(
                        &ProfitInputs {
                            crop: &crops[crop],
                            land,
                            income_expectation: f.expectations.income_expectation[crop],
                            wage: self.labor.wage(crop),
                            water_price: 0.0,
                        },
                        WaterMode::WithoutWater,
                    );
                    let rain_fed: Vec<(CropIdx, f64)> = (0..crops.len())
                        .filter(|&i| self.rain_fed(i) && plan.land[i] >= MIN_PLANTING)
                        .map(|i| (i, plan.profit[i]))
                        .collect();
                    decided.push(a.farmer_id);
                    match evaluate_lender_offer(offered, share, &rain_fed) {
                        LenderDecision::Accept => {
                            let source = WaterSource::Lender { lender, volume: a.volume, share };
                            self.plant(plan.idx, crop, land, source);
                        }
                        LenderDecision::CounterNotify(alt) => {
                            let pool = pools.iter_mut().find(|p| p.lender_id == lender).expect("pool exists");
                            pool.available_water += a.volume;
                            pool.committed_produce[crop] -= a.produce;
                            self.plant(plan.idx, alt, plan.land[alt], WaterSource::RainFed);
                        }
                    }
                }
                requests.retain(|r| !decided.contains(&r.farmer_id));
            }
            leftovers.extend(plans.into_iter().filter(|p| !decided.contains(&(p.idx as u32))));
        }
        for plan in leftovers {
            if let Some(crop) = self.best_crop(&plan, |i| self.rain_fed(i)) {
                self.plant(plan.idx, crop, plan.land[crop], WaterSource::RainFed);
            }
        }
        Ok(())
    }

    /// Puts a crop in the ground, borrowing for the season's costs if needed
    /// and shrinking the planting to what the initial cost allows.
    fn plant(&mut self, idx: usize, crop: CropIdx, land: f64, water: WaterSource) -> bool {
        let spec = self.config.crops[crop].clone();
        let wage = self.labor.wage(crop);
        let family = self.farmers[idx].family_charge_per_step(self.config.months_per_step);
        let (water_per_ha, mode) = match water {
            WaterSource::Agent { volume } if land > 0.0 => {
                (volume * self.config.water.agent_price / land, WaterMode::WithWater)
            }
            _ => (0.0, WaterMode::WithoutWater),
        };
        let expense = compute_total_expense(
            &ExpenseInputs {
                remaining_steps: spec.end_cycle,
                labor_per_ha: spec.labor_requirement * wage,
                water_per_ha,
                fert_pest_per_ha: spec.fert_pest_cost,
                family_per_step: family,
                land,
                initial_cost_per_ha: spec.initial_cost,
                planted: false,
            },
            mode,
        );
        let shortfall = expense - self.farmers[idx].savings;
        if shortfall > 0.0 {
            self.take_loans(idx, shortfall);
        }
        let f = &self.farmers[idx];
        let affordable = if spec.initial_cost > 0.0 {
            f.savings.max(0.0) / spec.initial_cost
        } else {
            f64::INFINITY
        };
        let planted = land.min(affordable).min(f.land);
        if planted < MIN_PLANTING {
            return false;
        }
        let scale = planted / land;
        let water = match water {
            WaterSource::Agent { volume } => WaterSource::Agent { volume: volume * scale },
            WaterSource::Lender { lender, volume, share } => WaterSource::Lender {
                lender,
                volume: volume * scale,
                share,
            },
            other => other,
        };
        self.transfer(
            Account::Farmer(idx as u32),
            Account::Env(EnvAccount::Inputs),
            spec.initial_cost * planted,
            TransferKind::InitialCost,
        );
        let f = &mut self.farmers[idx];
        f.expectations.last_allocated[crop] = planted;
        f.planting = Some(PlantingState::new(crop, &spec, planted, self.step, water));
        true
    }
}

fn is_mill_crop(config: &crate::scenario::ScenarioConfig, crop: CropIdx) -> bool {
    config.crops[crop].outlet == Outlet::Mill
}
