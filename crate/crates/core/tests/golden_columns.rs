//! Pinned CSV column sets. A change here is a change to the output format.

use canesim::output::sweep_header;
use canesim::sim::MetricsFrame;

#[test]
fn timeseries_columns() {
    let ids = vec!["sugar".to_string(), "fruit".to_string()];
    let want = "step,\
farmers_type1,active_type1,exited_type1,mean_savings_type1,median_savings_type1,\
farmers_type2,active_type2,exited_type2,mean_savings_type2,median_savings_type2,\
farmers_type3,active_type3,exited_type3,mean_savings_type3,median_savings_type3,\
price_sugar,sales_sugar,stock_sugar,imports_sugar,exports_sugar,\
price_fruit,sales_fruit,stock_fruit,imports_fruit,exports_fruit,\
mill_dues,mill_savings,cane_purchased,cane_dumped,sugar_output,ethanol_output";
    assert_eq!(MetricsFrame::csv_header(&ids).join(","), want);
}

#[test]
fn sweep_columns() {
    let want = "value,seed,exit_fraction,exit_fraction_type1,exit_fraction_type2,exit_fraction_type3,\
mean_final_savings_type1,mean_final_savings_type2,mean_final_savings_type3,mean_sugar_price,total_dues,error";
    assert_eq!(sweep_header().join(","), want);
}
