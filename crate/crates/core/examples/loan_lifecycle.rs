//! A farmer borrows for a season's bills, pays a few installments, then
//! defaults on the collateral loan until the land is seized.

use canesim::credit::{compute_installment, record_payment, request_loan, LoanAccount, LoanKind, LoanParams};

fn main() {
    let params = LoanParams::default();
    let mut rating = 20.0;
    let split = request_loan(60_000.0, rating, 1.5 * params.land_value_per_ha, params.credit_unit);
    println!("expense 60000 -> credit {} + collateral {}", split.credit, split.collateral);

    let rate = params.rate_per_step(LoanKind::Credit, 1.0);
    println!(
        "credit installment over {} steps at {rate}: {:.2}",
        params.term_steps,
        compute_installment(split.credit, rate, params.term_steps)
    );

    let mut credit = LoanAccount::open(LoanKind::Credit, split.credit, rate, params.term_steps, 0.0);
    let mut collateral = LoanAccount::open(
        LoanKind::Collateral,
        split.collateral,
        params.rate_per_step(LoanKind::Collateral, 1.0),
        params.term_steps,
        1.5 * params.land_value_per_ha,
    );

    for step in 1..=8 {
        credit.accrue();
        collateral.accrue();
        let pays = step <= 2;
        rating = record_payment(&mut credit, pays, rating, &params).rating;
        let outcome = record_payment(&mut collateral, pays, rating, &params);
        println!(
            "step {step}: paid={pays:<5} rating {rating:>4} credit left {:>9.2} collateral left {:>9.2}",
            credit.outstanding, collateral.outstanding
        );
        if let Some(s) = outcome.seizure {
            println!("  land seized: lender recovers {:.2}, farmer refunded {:.2}", s.recovered, s.refund);
        }
    }
}
