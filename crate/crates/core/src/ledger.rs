//! Global double-entry transfer log.
//!
//! Every movement of money between two parties is recorded as one
//! [`Transfer`]: a debit on `from` and a credit of the same magnitude on
//! `to`. Money entering or leaving the modelled economy goes through named
//! environment accounts so that the net over all accounts is zero.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

/// Parties outside the simulated economy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvAccount {
    /// Households buying commodities from the market.
    Consumers,
    /// Foreign buyers paying for exports.
    ExportBuyers,
    /// Foreign sellers paid for imports.
    ImportSellers,
    /// Hired labor.
    Labor,
    /// Fertilizer and pesticide suppliers.
    FertPest,
    /// Seed and equipment suppliers.
    Inputs,
    /// Family subsistence spending.
    Household,
    /// The government agency buying ethanol.
    EthanolAgency,
    /// Mill processing and maintenance suppliers.
    MillOperations,
    /// Buyers of seized land.
    LandBuyers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Account {
    Farmer(u32),
    Mill,
    Market,
    LoanAgent,
    WaterAgent,
    Storage,
    Government,
    Env(EnvAccount),
}

impl fmt::Display for Account {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Account::Farmer(id) => write!(f, "farmer#{id}"),
            Account::Env(e) => write!(f, "env:{e:?}"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TransferKind {
    FamilyExpense,
    Labor,
    FertPest,
    WaterCharge,
    InitialCost,
    MarketSale,
    ExportSale,
    ExportTax,
    ImportPurchase,
    ImportTax,
    CanePayment,
    DuesSettlement,
    Processing,
    EthanolSale,
    LoanDisbursement,
    Installment,
    LoanClosure,
    CollateralSale,
    SeizureRefund,
    StorageFee,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transfer {
    pub step: u32,
    pub from: Account,
    pub to: Account,
    pub amount: f64,
    pub kind: TransferKind,
}

impl Transfer {
    fn problem(&self) -> Option<&'static str> {
        if !self.amount.is_finite() {
            Some("non-finite amount")
        } else if self.amount < 0.0 {
            Some("negative amount")
        } else if self.from == self.to {
            Some("self transfer")
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Ledger {
    step: u32,
    current: Vec<Transfer>,
    history: Vec<Transfer>,
    retain: bool,
}

impl Ledger {
    pub fn new(retain: bool) -> Self {
        Self {
            retain,
            ..Self::default()
        }
    }

    /// Records a transfer. Zero amounts are dropped.
    pub fn post(&mut self, from: Account, to: Account, amount: f64, kind: TransferKind) {
        if amount == 0.0 {
            return;
        }
        self.current.push(Transfer {
            step: self.step,
            from,
            to,
            amount,
            kind,
        });
    }

    pub fn step(&self) -> u32 {
        self.step
    }

    /// Transfers posted since the last [`Ledger::close_step`].
    pub fn current(&self) -> &[Transfer] {
        &self.current
    }

    /// Retained transfers from closed steps. Empty unless retention is on.
    pub fn history(&self) -> &[Transfer] {
        &self.history
    }

    pub fn retains(&self) -> bool {
        self.retain
    }

    /// Net change per account over the open step.
    pub fn current_deltas(&self) -> BTreeMap<Account, f64> {
        let mut out = BTreeMap::new();
        for t in &self.current {
            *out.entry(t.from).or_insert(0.0) -= t.amount;
            *out.entry(t.to).or_insert(0.0) += t.amount;
        }
        out
    }

    /// Audits the open step, moves it to history and starts the next step.
    pub fn close_step(&mut self) -> AuditReport {
        let report = audit_ledger(&self.current);
        if self.retain {
            self.history.append(&mut self.current);
        } else {
            self.current.clear();
        }
        self.step += 1;
        report
    }
}

/// One failed check found by [`audit_ledger`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Offence {
    pub transfer: Option<Transfer>,
    pub step: u32,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub transfers: usize,
    pub steps: usize,
    /// Net over all accounts per step, in exact fixed point (units of 2^-24).
    pub step_totals: BTreeMap<u32, i128>,
    pub offences: Vec<Offence>,
}

impl AuditReport {
    pub fn is_balanced(&self) -> bool {
        self.offences.is_empty() && self.step_totals.values().all(|t| *t == 0)
    }

    pub fn describe(&self) -> String {
        let mut parts: Vec<String> = self
            .offences
            .iter()
            .take(10)
            .map(|o| match &o.transfer {
                Some(t) => format!(
                    "step {}: {} ({} -> {}, {:?}, {})",
                    o.step, o.reason, t.from, t.to, t.kind, t.amount
                ),
                None => format!("step {}: {}", o.step, o.reason),
            })
            .collect();
        if self.offences.len() > 10 {
            parts.push(format!("... {} more", self.offences.len() - 10));
        }
        parts.join("; ")
    }
}

const FIXED_SCALE: f64 = (1u64 << 24) as f64;

fn to_fixed(amount: f64) -> i128 {
    (amount * FIXED_SCALE).round() as i128
}

/// Checks that every transfer is a well-formed debit/credit pair and that
/// the net of all account changes is zero for every step.
///
/// Account nets are accumulated in exact fixed-point arithmetic so the
/// per-step total is an exact integer rather than a rounded float.
pub fn audit_ledger(transfers: &[Transfer]) -> AuditReport {
    let mut report = AuditReport {
        transfers: transfers.len(),
        ..AuditReport::default()
    };
    let mut nets: BTreeMap<u32, BTreeMap<Account, i128>> = BTreeMap::new();
    for t in transfers {
        if let Some(reason) = t.problem() {
            report.offences.push(Offence {
                transfer: Some(*t),
                step: t.step,
                reason: reason.to_string(),
            });
            continue;
        }
        let fixed = to_fixed(t.amount);
        let step = nets.entry(t.step).or_default();
        *step.entry(t.from).or_insert(0) -= fixed;
        *step.entry(t.to).or_insert(0) += fixed;
    }
    report.steps = nets.len();
    for (step, accounts) in nets {
        let total: i128 = accounts.values().sum();
        if total != 0 {
            report.offences.push(Offence {
                transfer: None,
                step,
                reason: format!("accounts net to {total} fixed units"),
            });
        }
        report.step_totals.insert(step, total);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_ledger_is_balanced() {
        let report = audit_ledger(&[]);
        assert!(report.is_balanced());
        assert_eq!(report.transfers, 0);
    }

    #[test]
    fn single_payment_nets_to_zero() {
        let mut ledger = Ledger::new(true);
        ledger.post(Account::Farmer(1), Account::Mill, 100.0, TransferKind::MarketSale);
        let deltas = ledger.current_deltas();
        assert_eq!(deltas[&Account::Farmer(1)], -100.0);
        assert_eq!(deltas[&Account::Mill], 100.0);
        let report = ledger.close_step();
        assert!(report.is_balanced());
        assert_eq!(report.step_totals[&0], 0);
        assert_eq!(ledger.history().len(), 1);
        assert_eq!(ledger.step(), 1);
    }

    #[test]
    fn malformed_transfers_are_reported() {
        let bad = [
            Transfer {
                step: 0,
                from: Account::Mill,
                to: Account::Mill,
                amount: 5.0,
                kind: TransferKind::Processing,
            },
            Transfer {
                step: 0,
                from: Account::Mill,
                to: Account::Market,
                amount: -5.0,
                kind: TransferKind::Processing,
            },
            Transfer {
                step: 1,
                from: Account::Mill,
                to: Account::Market,
                amount: f64::NAN,
                kind: TransferKind::Processing,
            },
        ];
        let report = audit_ledger(&bad);
        assert!(!report.is_balanced());
        assert_eq!(report.offences.len(), 3);
        assert!(report.describe().contains("self transfer"));
    }

    #[test]
    fn zero_amounts_are_not_recorded() {
        let mut ledger = Ledger::new(false);
        ledger.post(Account::Mill, Account::Market, 0.0, TransferKind::Processing);
        assert!(ledger.current().is_empty());
    }
}
