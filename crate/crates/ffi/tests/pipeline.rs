use std::ffi::{CStr, CString};
use std::ptr;

use exmort::aggregate::{build_series, StratumKey};
use exmort::config::{ConfigFile, Overrides, RunConfig};
use exmort::ingest::{canonicalize, parse_registry, write_canonical, IngestSchema};
use exmort::pipeline::run_grid;
use exmort::synth::{generate_registry, SynthConfig};
use exmort_ffi::*;

const CONFIG: &str = r#"
[run]
reference_years = "2000:2011"
forecast_years = "2012:2013"
strata = "both/all,male/all,female/all"
"#;

fn small_registry(dir: &std::path::Path) -> std::path::PathBuf {
    let mut cfg = SynthConfig {
        reference_years: (2000, 2011),
        forecast_years: (2012, 2013),
        anchor_year: 2000,
        ..SynthConfig::default()
    };
    for t in &mut cfg.trends[..5] {
        t.intercept *= 0.05;
        t.slope *= 0.05;
    }
    cfg.trends[5].intercept = 9.0;
    cfg.trends[5].slope = 0.1;
    let mut raw = Vec::new();
    generate_registry(&cfg, &mut raw).unwrap();
    let schema = IngestSchema::default();
    let outcome = parse_registry(raw.as_slice(), &schema, "synthetic").unwrap();
    let canonical = canonicalize(&outcome.records, &schema.non_illness_prefixes);
    let path = dir.join("canonical.csv");
    write_canonical(&canonical, std::fs::File::create(&path).unwrap()).unwrap();
    path
}

#[test]
fn pipeline_matches_library() {
    let dir = tempfile::tempdir().unwrap();
    let path = small_registry(dir.path());

    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    let c_cfg = CString::new(CONFIG).unwrap();
    let mut results: *mut ExmResults = ptr::null_mut();
    let status = unsafe { exm_pipeline_run(c_path.as_ptr(), c_cfg.as_ptr(), ptr::null(), &mut results) };
    assert_eq!(status, ExmStatus::Ok, "{:?}", unsafe { CStr::from_ptr(exm_last_error_message()) });

    let run = RunConfig::resolve(&ConfigFile::parse(CONFIG).unwrap(), &Overrides::default()).unwrap();
    let records = exmort::ingest::read_canonical_file(&path).unwrap();
    let series = build_series(&records, run.estimation.all_years(), &run.strata).unwrap();
    let grid = run_grid(&series, &run.strata, &run.estimation, None).unwrap();

    let n = unsafe { exm_results_len(results) };
    assert_eq!(n, 3 * 3);
    assert_eq!(n, grid.estimates.len());
    for (i, want) in grid.estimates.iter().enumerate() {
        let mut got = ExmEstimate::default();
        assert_eq!(unsafe { exm_results_get(results, i, &mut got) }, ExmStatus::Ok);
        assert_eq!(got.period_start, want.period.start);
        assert_eq!(got.period_end, want.period.end);
        assert_eq!(got.psi.to_bits(), want.psi.to_bits());
        assert_eq!(got.psi_lo.to_bits(), want.psi_ci.0.to_bits());
        assert_eq!(got.psi_hi.to_bits(), want.psi_ci.1.to_bits());
        assert_eq!(got.delta_psi_pct.to_bits(), want.delta_psi_pct.to_bits());
        assert_eq!(got.observed_total, want.observed_total);
        assert!(got.rate_per_100k.is_nan());
        let sex = [StratumKey::TOTAL.sex, exmort::SexGroup::Male, exmort::SexGroup::Female]
            .iter()
            .position(|&s| s == want.stratum.sex)
            .unwrap() as i32;
        assert_eq!(got.sex, sex);
        assert_eq!(got.age_group, 9);
    }
    let mut e = ExmEstimate::default();
    assert_eq!(unsafe { exm_results_get(results, n, &mut e) }, ExmStatus::InvalidArgument);
    unsafe { exm_results_free(results) };
}

#[test]
fn pipeline_reports_errors() {
    let missing = CString::new("/nonexistent/canonical.csv").unwrap();
    let mut results: *mut ExmResults = ptr::null_mut();
    let status = unsafe { exm_pipeline_run(missing.as_ptr(), ptr::null(), ptr::null(), &mut results) };
    assert_eq!(status, ExmStatus::Io);
    assert!(results.is_null());

    let bad = CString::new("[run]\nci_level = \"high\"\n").unwrap();
    let status = unsafe { exm_pipeline_run(missing.as_ptr(), bad.as_ptr(), ptr::null(), &mut results) };
    assert_eq!(status, ExmStatus::Config);
    let msg = unsafe { CStr::from_ptr(exm_last_error_message()) }.to_string_lossy();
    assert!(msg.contains("ci_level"), "{msg}");
}
