//! Loan agent: credit and collateral loans, amortized installments, defaults
//! and collateral seizure.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LoanKind {
    /// Secured against land; repaid and closed first.
    Collateral,
    /// Unsecured, sized by credit rating.
    Credit,
}

/// Loan agent terms, from the scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LoanParams {
    /// Currency of credit per rating point.
    pub credit_unit: f64,
    pub credit_annual_rate: f64,
    pub collateral_annual_rate: f64,
    pub term_steps: u32,
    /// Collateral is seized once defaults exceed this count.
    pub default_limit: u32,
    pub penalty_fraction: f64,
    pub rating_reward: f64,
    pub rating_penalty: f64,
    /// Collateral value of one hectare of farm land.
    pub land_value_per_ha: f64,
}

impl Default for LoanParams {
    fn default() -> Self {
        Self {
            credit_unit: 1000.0,
            credit_annual_rate: 0.12,
            collateral_annual_rate: 0.08,
            term_steps: 6,
            default_limit: 4,
            penalty_fraction: 0.2,
            rating_reward: 2.0,
            rating_penalty: 8.0,
            land_value_per_ha: 200_000.0,
        }
    }
}

impl LoanParams {
    pub fn validate(&self) -> Result<()> {
        let non_negative = [
            self.credit_unit,
            self.credit_annual_rate,
            self.collateral_annual_rate,
            self.penalty_fraction,
            self.rating_reward,
            self.rating_penalty,
            self.land_value_per_ha,
        ];
        if non_negative.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::config("loan parameters must be finite and >= 0"));
        }
        if self.term_steps < 1 {
            return Err(Error::config("loan term must be at least one step"));
        }
        Ok(())
    }

    pub fn rate_per_step(&self, kind: LoanKind, months_per_step: f64) -> f64 {
        let annual = match kind {
            LoanKind::Credit => self.credit_annual_rate,
            LoanKind::Collateral => self.collateral_annual_rate,
        };
        annual_to_step_rate(annual, months_per_step)
    }
}

/// Simple (non-compounded) conversion of an annual rate to one step.
pub fn annual_to_step_rate(annual: f64, months_per_step: f64) -> f64 {
    annual * months_per_step / 12.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoanSplit {
    pub credit: f64,
    pub collateral: f64,
}

impl LoanSplit {
    pub fn total(&self) -> f64 {
        self.credit + self.collateral
    }
}

/// Splits an expense into a credit loan (preferred, capped by rating) and a
/// collateral loan for the rest, capped by the collateral's value. The sum
/// may fall short of the expense.
pub fn request_loan(expense: f64, credit_rating: f64, collateral_value: f64, credit_unit: f64) -> LoanSplit {
    let expense = expense.max(0.0);
    let cap = (credit_rating * credit_unit).max(0.0);
    let credit = expense.min(cap);
    let collateral = (expense - credit).min(collateral_value.max(0.0));
    LoanSplit { credit, collateral }
}

/// Level installment that amortizes `principal` over `term` steps.
pub fn compute_installment(principal: f64, rate_per_step: f64, term: u32) -> f64 {
    let n = term.max(1) as f64;
    if rate_per_step == 0.0 {
        return principal / n;
    }
    principal * rate_per_step / (1.0 - (1.0 + rate_per_step).powf(-n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoanAccount {
    pub kind: LoanKind,
    pub principal: f64,
    pub rate_per_step: f64,
    pub term: u32,
    pub installment: f64,
    pub defaults: u32,
    pub collateral_value: f64,
    pub outstanding: f64,
    pub closed: bool,
    pub seized: bool,
}

impl LoanAccount {
    pub fn open(kind: LoanKind, principal: f64, rate_per_step: f64, term: u32, collateral_value: f64) -> Self {
        Self {
            kind,
            principal,
            rate_per_step,
            term,
            installment: compute_installment(principal, rate_per_step, term),
            defaults: 0,
            collateral_value: if kind == LoanKind::Collateral { collateral_value } else { 0.0 },
            outstanding: principal,
            closed: false,
            seized: false,
        }
    }

    pub fn is_active(&self) -> bool {
        !self.closed
    }

    /// Adds one step of interest to the balance.
    pub fn accrue(&mut self) {
        if self.is_active() {
            self.outstanding *= 1.0 + self.rate_per_step;
        }
    }

    /// What is due this step.
    pub fn amount_due(&self) -> f64 {
        if self.is_active() {
            self.installment.min(self.outstanding)
        } else {
            0.0
        }
    }

    /// Pays off the whole balance and closes the account.
    pub fn close(&mut self) -> f64 {
        let paid = self.outstanding;
        self.outstanding = 0.0;
        self.closed = true;
        paid
    }
}

/// Collateral sale after too many defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Seizure {
    pub collateral_value: f64,
    /// Balance recovered by the lender.
    pub recovered: f64,
    /// Excess returned to the borrower.
    pub refund: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PaymentOutcome {
    pub rating: f64,
    /// Amount paid towards the balance.
    pub paid: f64,
    pub penalty: f64,
    pub seizure: Option<Seizure>,
}

/// Applies one installment outcome to an account.
///
/// On time: balance falls by the amount due and a credit loan's rating rises.
/// Default: a penalty is added to the balance and a credit loan's rating
/// falls (never below zero); a collateral loan past the default limit has
/// its collateral sold and is closed.
pub fn record_payment(account: &mut LoanAccount, paid: bool, rating: f64, params: &LoanParams) -> PaymentOutcome {
    if !account.is_active() {
        return PaymentOutcome { rating, paid: 0.0, penalty: 0.0, seizure: None };
    }
    if paid {
        let amount = account.amount_due();
        account.outstanding -= amount;
        if account.outstanding <= 1e-9 * account.principal.max(1.0) {
            account.outstanding = 0.0;
            account.closed = true;
        }
        let rating = match account.kind {
            LoanKind::Credit => rating + params.rating_reward,
            LoanKind::Collateral => rating,
        };
        return PaymentOutcome { rating, paid: amount, penalty: 0.0, seizure: None };
    }

    account.defaults += 1;
    let penalty = params.penalty_fraction * account.installment;
    account.outstanding += penalty;
    let rating = match account.kind {
        LoanKind::Credit => (rating - params.rating_penalty).max(0.0),
        LoanKind::Collateral => rating,
    };
    let seizure = if account.kind == LoanKind::Collateral && account.defaults > params.default_limit {
        let recovered = account.outstanding.min(account.collateral_value);
        let refund = (account.collateral_value - account.outstanding).max(0.0);
        account.outstanding = 0.0;
        account.closed = true;
        account.seized = true;
        Some(Seizure {
            collateral_value: account.collateral_value,
            recovered,
            refund,
        })
    } else {
        None
    };
    PaymentOutcome { rating, paid: 0.0, penalty, seizure }
}

/// Whether the borrower can pay the loan off and still keep `reserve_needed`.
pub fn early_close(account: &LoanAccount, savings: f64, reserve_needed: f64) -> bool {
    account.is_active() && savings - account.outstanding >= reserve_needed
}
