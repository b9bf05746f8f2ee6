mod common;

use chrono::Datelike;
use common::small_synth;
use exmort::aggregate::StratumKey;
use exmort::excess::Period;
use exmort::synth::{generate_records, ground_truth_excess, ground_truth_excess_for, simulate_counts, Shock};

#[test]
fn no_shock_means_no_excess() {
    let (_, truth) = generate_records(&small_synth()).unwrap();
    assert_eq!(ground_truth_excess(&truth, Period::new(2012, 2013).unwrap()), 0.0);
}

#[test]
fn shock_masses_add_over_a_period() {
    let mut cfg = small_synth();
    cfg.shocks.push(Shock { year: 2012, mass: 100.0, first_week: 1, last_week: 10 });
    cfg.shocks.push(Shock { year: 2013, mass: 200.0, first_week: 40, last_week: 53 });
    let (records, truth) = generate_records(&cfg).unwrap();
    let both = Period::new(2012, 2013).unwrap();
    assert_eq!(ground_truth_excess(&truth, both), 300.0);
    assert_eq!(ground_truth_excess(&truth, Period::year(2013)), 200.0);
    assert_eq!(ground_truth_excess_for(&truth, both, StratumKey::TOTAL), 300.0);
    assert_eq!(records.iter().filter(|r| r.shock).count(), 300);
}

#[test]
fn bookkeeping_matches_the_records() {
    for seed in [3, 4, 5] {
        let mut cfg = small_synth();
        cfg.seed = seed;
        cfg.shocks.push(Shock { year: 2012, mass: 1234.4, first_week: 5, last_week: 9 });
        cfg.shocks.push(Shock { year: 2009, mass: 77.0, first_week: 53, last_week: 53 });
        let (records, truth) = generate_records(&cfg).unwrap();
        let counts = simulate_counts(&cfg).unwrap();
        assert_eq!(records.len() as u64, truth.total_records());
        for (y, c) in truth.years.iter().zip(&counts) {
            assert_eq!(y.year, c.year);
            let in_year: Vec<_> = records.iter().filter(|r| r.date.year() == y.year).collect();
            assert_eq!(in_year.len() as u64, y.illness_total + y.non_illness_total);
            assert_eq!(in_year.iter().filter(|r| r.shock).count() as u64, y.shock_mass);
            assert_eq!(y.illness_total, c.total());
            assert_eq!(y.shock_mass, c.shock_total());
        }
        let booked: u64 = truth.years.iter().map(|y| y.shock_mass).sum();
        assert_eq!(booked, 1234 + 77);
        assert_eq!(ground_truth_excess(&truth, Period::year(2012)), 1234.0);
        for key in StratumKey::full_grid() {
            let per_stratum: u64 = truth
                .strata
                .iter()
                .filter(|s| s.year == 2012 && s.sex == key.sex && s.age_group == key.age_group)
                .map(|s| s.shock)
                .sum();
            assert_eq!(ground_truth_excess_for(&truth, Period::year(2012), key), per_stratum as f64);
        }
    }
}

#[test]
fn same_seed_same_registry() {
    let cfg = small_synth();
    let a = generate_records(&cfg).unwrap();
    let b = generate_records(&cfg).unwrap();
    assert_eq!(a.0, b.0);
    let mut other = cfg.clone();
    other.seed += 1;
    assert_ne!(generate_records(&other).unwrap().0, a.0);
}

#[test]
fn invalid_configs_are_refused() {
    let mut cfg = small_synth();
    cfg.shocks.push(Shock { year: 2012, mass: -1.0, first_week: 1, last_week: 2 });
    assert!(generate_records(&cfg).is_err());
    let mut cfg = small_synth();
    cfg.registration_lag_pct = 1.0;
    assert!(generate_records(&cfg).is_err());
    let mut cfg = small_synth();
    cfg.trends[0].intercept = -1e6;
    assert!(simulate_counts(&cfg).is_err());
}
