use super::*;
use crate::domain::{CropSpec, Outlet};
use crate::farmer::WaterSource;
use crate::ledger::audit_ledger;
use crate::scenario::tests::MINIMAL;

pub(crate) const DEFAULT_SCENARIO: &str = include_str!("../../../../scenarios/default.toml");

pub(crate) fn default_config(size: usize, steps: u32) -> ScenarioConfig {
    let mut c = ScenarioConfig::from_toml_str(DEFAULT_SCENARIO).unwrap();
    c.population.size = size;
    c.steps = steps;
    c
}

#[test]
fn population_split_and_ids() {
    let mut c = default_config(10_000, 0);
    let mut rng = RngStreams::new(3);
    let farmers = init_population(&c, &mut rng.population).unwrap();
    let count = |t| farmers.iter().filter(|f| f.farmer_type == t).count();
    assert_eq!(
        [count(FarmerType::Type1), count(FarmerType::Type2), count(FarmerType::Type3)],
        [7000, 2000, 1000]
    );
    assert!(farmers.iter().enumerate().all(|(i, f)| f.id as usize == i));

    c.population.size = 10;
    let farmers = init_population(&c, &mut RngStreams::new(3).population).unwrap();
    let types: Vec<_> = farmers.iter().map(|f| f.farmer_type).collect();
    assert_eq!(types.iter().filter(|t| **t == FarmerType::Type1).count(), 7);
    assert_eq!(types.iter().filter(|t| **t == FarmerType::Type2).count(), 2);
    assert_eq!(types.iter().filter(|t| **t == FarmerType::Type3).count(), 1);

    c.population.size = 9;
    assert!(init_population(&c, &mut RngStreams::new(3).population).is_err());
}

#[test]
fn same_seed_same_population() {
    let c = default_config(200, 0);
    let a = init_population(&c, &mut RngStreams::new(9).population).unwrap();
    let b = init_population(&c, &mut RngStreams::new(9).population).unwrap();
    assert_eq!(a, b);
}

#[test]
fn zero_steps_gives_initial_frame_only() {
    let frames = run(&default_config(50, 0)).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(frames[0].step, 0);
}

#[test]
fn zero_farmers_still_steps() {
    let mut s = SimulationState::new(default_config(10, 5)).unwrap();
    s.farmers.clear();
    s.loans.clear();
    s.run_to_end().unwrap();
    assert_eq!(s.metrics.len(), 6);
    assert!(s.metrics[1..].iter().all(|f| f.farmers == [0, 0, 0]));
    // Consumers still buy the opening stock and prices still form.
    assert!(s.metrics[1].commodities[0].sales > 0.0);
    assert_eq!(s.markets[0].price_history.len(), 6);
}

#[test]
fn rerun_is_identical() {
    let c = default_config(150, 30);
    let a = run(&c).unwrap();
    let b = run(&c).unwrap();
    assert_eq!(a, b);
    let ja = serde_json::to_string(&a).unwrap();
    let jb = serde_json::to_string(&b).unwrap();
    assert_eq!(ja, jb);
}

#[test]
fn different_seeds_differ() {
    let c = default_config(150, 10);
    let mut d = c.clone();
    d.seed = 2;
    assert_ne!(run(&c).unwrap(), run(&d).unwrap());
}

#[test]
fn successor_state_is_a_function_of_state() {
    let mut a = SimulationState::new(default_config(120, 20)).unwrap();
    for _ in 0..7 {
        a.step().unwrap();
    }
    let mut b = a.clone();
    a.step().unwrap();
    b.step().unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn ledger_balances_every_step() {
    let c = default_config(200, 40);
    let mut s = SimulationState::with_options(c, SimOptions { retain_ledger: true }).unwrap();
    s.run_to_end().unwrap();
    let report = audit_ledger(s.ledger.history());
    assert!(report.is_balanced(), "{}", report.describe());
    assert_eq!(report.step_totals.len() as u32, 40);
    assert!(report.transfers > 1000);
}

#[test]
fn exited_farmers_are_frozen() {
    let c = default_config(200, 40);
    let mut s = SimulationState::with_options(c, SimOptions { retain_ledger: true }).unwrap();
    s.run_to_end().unwrap();
    let exits: Vec<_> = s.farmers.iter().filter_map(|f| f.exited_at.map(|t| (f.id, t))).collect();
    assert!(!exits.is_empty());
    for t in s.ledger.history() {
        for account in [t.from, t.to] {
            if let Account::Farmer(id) = account {
                if let Some(&(_, at)) = exits.iter().find(|(i, _)| *i == id) {
                    assert!(t.step <= at, "farmer {id} exited at {at} but moved money at {}", t.step);
                }
            }
        }
    }
    for f in s.farmers.iter().filter(|f| f.exited) {
        assert!(f.planting.is_none());
    }
    for w in s.metrics.windows(2) {
        for i in 0..3 {
            assert!(w[1].exited[i] >= w[0].exited[i]);
        }
    }
}

#[test]
fn invariants_hold_each_step() {
    let mut s = SimulationState::new(default_config(200, 40)).unwrap();
    while !s.is_finished() {
        s.step().unwrap();
        for f in &s.farmers {
            if let Some(p) = &f.planting {
                assert!((0.0..=1.0).contains(&p.quality));
                assert!(p.land <= f.land + 1e-9);
            }
        }
        for c in 0..s.config.crops.len() {
            assert!(s.storage.occupied(c) <= s.storage.capacity[c] + 1e-9);
        }
    }
}

/// One Type2 farmer, one rain-fed market crop, bills always affordable.
fn ideal_type2() -> (SimulationState, CropSpec, f64) {
    let crop = CropSpec {
        id: "fruit".into(),
        outlet: Outlet::Market,
        end_cycle: 6,
        harvest_cycle: 2,
        fert_pest_cost: 100.0,
        labor_requirement: 1.0,
        water_requirement: 0.0,
        labor_flexibility: 0.5,
        water_flexibility: 0.0,
        prone_to_pest: 1,
        produce: 40.0,
        initial_cost: 1000.0,
        minimum_produce: None,
        msp: None,
    };
    let mut c = ScenarioConfig::from_toml_str(MINIMAL).unwrap();
    c.population.type1_fraction = 0.0;
    c.population.type2_fraction = 1.0;
    c.population.type3_fraction = 0.0;
    c.population.size = 10;
    c.crops = vec![crop.clone()];
    c.wages = [("fruit".to_string(), 100.0)].into_iter().collect();
    let mut fruit = c.commodities[0].clone();
    fruit.id = "fruit".into();
    fruit.initial_price = 500.0;
    c.commodities.push(fruit);
    c.steps = 20;
    let mut s = SimulationState::new(c).unwrap();
    s.farmers.truncate(1);
    s.loans.truncate(1);
    let land = s.farmers[0].land;
    (s, crop, land)
}

#[test]
fn ideal_type2_harvest_matches_closed_form() {
    let (mut s, crop, land) = ideal_type2();
    let fruit = s.config.commodity_index("fruit").unwrap();
    s.step().unwrap();
    let planting = s.farmers[0].planting.clone().expect("planted at step 1");
    assert_eq!(planting.water, WaterSource::RainFed);
    let allocated = planting.land;
    assert!(allocated > 0.0 && allocated <= land);
    let mut produced = 0.0;
    for _ in 0..crop.end_cycle {
        s.step().unwrap();
        produced += s.flows[fruit].production;
    }
    let expected = crop.produce * allocated * (crop.end_cycle as f64 / crop.harvest_cycle as f64);
    assert!((produced - expected).abs() <= 1e-9 * expected, "{produced} vs {expected}");
    assert!(s.farmers[0].planting.as_ref().is_none_or(|p| p.planted_at > 1));
}

#[test]
fn checkpoint_resume_matches_straight_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let c = default_config(120, 30);

    let straight = run(&c).unwrap();

    let mut half = c.clone();
    half.steps = 15;
    let mut s = SimulationState::new(half).unwrap();
    s.run_to_end().unwrap();
    assert_eq!(&s.metrics[..], &straight[..16]);
    save_checkpoint(&s, &path).unwrap();

    let mut resumed = load_checkpoint(&path).unwrap();
    resumed.config.steps = 30;
    resumed.run_to_end().unwrap();
    assert_eq!(resumed.metrics, straight);
}

#[test]
fn checkpoint_version_checked() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let s = SimulationState::new(default_config(10, 1)).unwrap();
    save_checkpoint(&s, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let bumped = text.replacen("\"version\":1", "\"version\":99", 1);
    std::fs::write(&path, bumped).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn demand_noise_leaves_other_streams_alone() {
    let quiet = default_config(100, 5);
    let mut noisy = quiet.clone();
    noisy.demand_noise = 0.2;
    let a = SimulationState::new(quiet).unwrap();
    let b = SimulationState::new(noisy).unwrap();
    assert_eq!(a.farmers, b.farmers);
    assert_eq!(a.rng.perception, b.rng.perception);
}
