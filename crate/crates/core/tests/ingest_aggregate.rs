mod common;

use std::collections::BTreeMap;

use chrono::Datelike;
use exmort::aggregate::{build_series, read_long, write_long, AgeGroup, SeriesMap, SexGroup, StratumKey};
use exmort::calendar::week_of;
use exmort::ingest::{
    canonicalize, non_illness_share_by_year, parse_registry, CanonicalRecord, CauseClass, IngestSchema, Sex,
};
use exmort::polyfit::{ols_fit, FitOptions};
use exmort::synth::{generate_records, write_registry, LinearTrend, SynthConfig};
use proptest::prelude::*;

fn ingest(csv: &str) -> (exmort::ingest::IngestOutcome, Vec<CanonicalRecord>) {
    let schema = IngestSchema::default();
    let out = parse_registry(csv.as_bytes(), &schema, "test").unwrap();
    let canon = canonicalize(&out.records, &schema.non_illness_prefixes);
    (out, canon)
}

const HEADER: &str = "occ_year,occ_month,occ_day,reg_year,sex,age,cause\n";

/// A registry row, valid or deliberately broken in one field.
fn row() -> impl Strategy<Value = (String, bool)> {
    let valid = (
        2018i32..=2021,
        1u32..=12,
        1u32..=31,
        0i32..=1,
        prop::sample::select(vec!["1", "2", "9", "m", "F"]),
        prop::option::of(0u32..=105),
        prop::sample::select(vec!["I21", "J18", "C34", "X59", "V89", "w10", "U071"]),
    )
        .prop_map(|(y, m, d, lag, sex, age, cause)| {
            let ok = chrono::NaiveDate::from_ymd_opt(y, m, d).is_some();
            let age = age.map_or("999".to_string(), |a| a.to_string());
            (format!("{y},{m},{d},{},{sex},{age},{cause}\n", y + lag), ok)
        });
    let broken = prop::sample::select(vec![
        "2019,2,30,2019,1,40,I21\n",
        "2019,1,5,2018,1,40,I21\n",
        "2019,1,5,2019,1,abc,I21\n",
        "2019,1,5,2019,1,40,\n",
        "x,1,5,2019,1,40,I21\n",
        "2019,1\n",
    ])
    .prop_map(|r| (r.to_string(), false));
    prop_oneof![4 => valid, 1 => broken]
}

fn grid_series(records: &[CanonicalRecord]) -> SeriesMap {
    build_series(records, 2018..=2021, &StratumKey::full_grid()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rows_are_accepted_or_rejected_never_lost(rows in prop::collection::vec(row(), 0..300)) {
        let csv: String = std::iter::once(HEADER.to_string()).chain(rows.iter().map(|r| r.0.clone())).collect();
        let (out, canon) = ingest(&csv);
        prop_assert_eq!(out.rows_read, rows.len() as u64);
        prop_assert_eq!(out.accepted() + out.rejected(), out.rows_read);
        prop_assert_eq!(out.accepted(), rows.iter().filter(|r| r.1).count() as u64);
        prop_assert_eq!(canon.len() as u64, out.accepted());
    }

    #[test]
    fn strata_add_up(rows in prop::collection::vec(row(), 0..400)) {
        let csv: String = std::iter::once(HEADER.to_string()).chain(rows.iter().map(|r| r.0.clone())).collect();
        let (_, canon) = ingest(&csv);
        let map = grid_series(&canon);
        for year in 2018..=2021 {
            let illness: Vec<&CanonicalRecord> = canon
                .iter()
                .filter(|r| r.occurrence_year == year && r.cause_class == CauseClass::Illness)
                .collect();
            for sex in SexGroup::ALL {
                let all = &map[&(year, StratumKey::new(sex, AgeGroup::All))];
                for w in 0..53 {
                    let get = |g: AgeGroup| {
                        let s = &map[&(year, StratumKey::new(sex, g))];
                        if w == 52 { s.week53_count } else { s.counts[w] }
                    };
                    let brackets: u64 = AgeGroup::BRACKETS.iter().map(|&g| get(g)).sum();
                    let unknown_age = illness
                        .iter()
                        .filter(|r| sex.contains(r.sex) && r.age_years.is_none() && r.week.get() as usize == w + 1)
                        .count() as u64;
                    prop_assert_eq!(brackets + unknown_age, get(AgeGroup::All));
                }
                prop_assert_eq!(all.total(), illness.iter().filter(|r| sex.contains(r.sex)).count() as u64);
            }
            for g in AgeGroup::GRID {
                let get = |sex| map[&(year, StratumKey::new(sex, g))].clone();
                let (both, male, female) = (get(SexGroup::Both), get(SexGroup::Male), get(SexGroup::Female));
                let unknown_sex = illness.iter().filter(|r| r.sex == Sex::Unknown && g.contains(r.age_years)).count() as u64;
                prop_assert_eq!(male.total() + female.total() + unknown_sex, both.total());
                for w in 0..52 {
                    prop_assert!(male.counts[w] + female.counts[w] <= both.counts[w]);
                }
            }
        }
    }

    #[test]
    fn order_does_not_matter(rows in prop::collection::vec(row(), 1..300), seed in any::<u64>()) {
        let csv: String = std::iter::once(HEADER.to_string()).chain(rows.iter().map(|r| r.0.clone())).collect();
        let (_, mut canon) = ingest(&csv);
        let before = grid_series(&canon);
        let mut state = seed | 1;
        for i in (1..canon.len()).rev() {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            canon.swap(i, (state % (i as u64 + 1)) as usize);
        }
        prop_assert_eq!(before, grid_series(&canon));
    }
}

#[test]
fn attribution_follows_occurrence_year() {
    let csv = format!("{HEADER}2019,12,31,2020,1,80,I21\n2019,12,30,2019,2,80,I21\n2020,1,1,2020,2,80,I21\n");
    let (out, canon) = ingest(&csv);
    assert_eq!(out.accepted(), 3);
    let map = build_series(&canon, 2019..=2020, &[StratumKey::TOTAL]).unwrap();
    let y2019 = &map[&(2019, StratumKey::TOTAL)];
    let y2020 = &map[&(2020, StratumKey::TOTAL)];
    // day 365 is the one-day week 53, day 364 closes week 52
    assert_eq!(y2019.week53_count, 1);
    assert_eq!(y2019.counts[51], 1);
    assert_eq!(y2019.total(), 2);
    assert_eq!(y2020.counts[0], 1);
    assert_eq!(y2020.total(), 1);
}

#[test]
fn long_format_round_trips() {
    let csv = format!("{HEADER}2019,3,3,2019,1,33,I21\n2019,12,31,2019,2,999,J18\n2020,7,7,2021,9,70,C34\n");
    let (_, canon) = ingest(&csv);
    let map = build_series(&canon, 2019..=2020, &StratumKey::full_grid()).unwrap();
    let mut buf = Vec::new();
    write_long(&map, &mut buf).unwrap();
    let back = read_long(buf.as_slice()).unwrap();
    for (key, s) in &map {
        if s.total() > 0 {
            assert_eq!(&back[key], s);
        }
    }
    assert_eq!(
        back.values().map(|s| s.total()).sum::<u64>(),
        map.values().map(|s| s.total()).sum::<u64>()
    );
}

fn small(cfg: SynthConfig) -> SynthConfig {
    let mut cfg = SynthConfig {
        reference_years: (2010, 2014),
        forecast_years: (2015, 2016),
        anchor_year: 2010,
        ..cfg
    };
    for t in &mut cfg.trends[..5] {
        t.intercept *= 0.1;
        t.slope *= 0.1;
    }
    cfg
}

#[test]
fn synthetic_registry_round_trips_against_ground_truth() {
    let cfg = small(SynthConfig::default());
    let (records, truth) = generate_records(&cfg).unwrap();
    let mut csv = Vec::new();
    write_registry(&records, &mut csv).unwrap();
    let (out, canon) = ingest(std::str::from_utf8(&csv).unwrap());
    assert_eq!(out.rejected(), 0);
    assert_eq!(out.accepted(), truth.total_records());

    let grid = StratumKey::full_grid();
    let map = build_series(&canon, cfg.years(), &grid).unwrap();
    for st in &truth.strata {
        let s = &map[&(st.year, StratumKey::new(st.sex, st.age_group))];
        assert_eq!(s.total(), st.illness_total, "{} {:?} {:?}", st.year, st.sex, st.age_group);
    }

    let shares = non_illness_share_by_year(&canon);
    let mut late_by_year: BTreeMap<i32, u64> = BTreeMap::new();
    for r in &records {
        *late_by_year.entry(r.date.year()).or_default() += u64::from(r.registration_year > r.date.year());
        assert_eq!(week_of(r.date).get(), {
            let d = r.date.ordinal();
            d.div_ceil(7).min(53) as u8
        });
    }
    let (mut late, mut all) = (0u64, 0u64);
    for y in &truth.years {
        assert_eq!(map[&(y.year, StratumKey::TOTAL)].total(), y.illness_total);
        let records_in_year = y.illness_total + y.non_illness_total;
        let share = 100.0 * y.non_illness_total as f64 / records_in_year as f64;
        assert!((shares[&y.year] - share).abs() < 1e-9);
        assert!((share - 11.0).abs() < 0.1, "{share}");
        assert_eq!(late_by_year[&y.year], y.late_registrations);
        late += y.late_registrations;
        all += records_in_year;
    }
    let lag = late as f64 / all as f64;
    // binomial sd over ~150k records is about 0.04 points
    assert!((lag - 0.026).abs() < 0.002, "{lag}");
}

#[test]
fn noiseless_registry_recovers_the_generator_curve() {
    // 900 + 5t − 20w + w² is integer at every week, so no rounding
    let mut cfg = small(SynthConfig::default());
    cfg.trends = vec![
        LinearTrend { slope: 5.0, intercept: 900.0 },
        LinearTrend::flat(-20.0),
        LinearTrend::flat(1.0),
        LinearTrend::flat(0.0),
        LinearTrend::flat(0.0),
        LinearTrend::flat(0.0),
    ];
    let (records, truth) = generate_records(&cfg).unwrap();
    let mut csv = Vec::new();
    write_registry(&records, &mut csv).unwrap();
    let (_, canon) = ingest(std::str::from_utf8(&csv).unwrap());
    let map = build_series(&canon, cfg.years(), &[StratumKey::TOTAL]).unwrap();
    for y in &truth.years {
        let fit = ols_fit(&map[&(y.year, StratumKey::TOTAL)], &FitOptions::default()).unwrap();
        let want = cfg.coefficients_at(y.year);
        for k in 0..3 {
            assert!((fit.coefficients[k] - want[k]).abs() <= 1e-6 * want[k].abs(), "{} k={k}", y.year);
        }
        for k in 3..5 {
            assert!(fit.coefficients[k].abs() < 1e-9, "{} k={k}: {}", y.year, fit.coefficients[k]);
        }
    }
}
