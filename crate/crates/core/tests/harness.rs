use nnlab::harness::config::parse_shape;
use nnlab::harness::corpus::{nyquist_levels, Sample};
use nnlab::harness::report::Status;
use nnlab::harness::{emit_tables, generate_corpus, run_experiment, CorpusKind, CorpusOptions, ExperimentKind, ExperimentSpec};

fn feasibility_bundle() -> nnlab::harness::ReportBundle {
    let spec = ExperimentSpec::parse("[experiment]\nname = feasibility-map\nseed = 3\n\n[feasibility]\nr = 2.0\ns = 1.1\n").unwrap();
    run_experiment(&spec).unwrap()
}

#[test]
fn feasibility_map_tabulates_the_threshold() {
    let b = feasibility_bundle();
    let t = b.table("feasibility").unwrap();
    assert_eq!(t.rows.len(), 20);
    // r - s = 0.9 crosses d / (2(2 - d)) at d = 3.6 / 2.8
    let cross = 3.6 / 2.8;
    for r in &t.rows {
        let d: f64 = r[0].parse().unwrap();
        let p: f64 = r[1].parse().unwrap();
        assert!((p - d / (2.0 * (2.0 - d))).abs() <= 1e-10 * p);
        assert_eq!(r[2] == "true", d < cross, "d = {d}");
        let area: f64 = r[3].parse().unwrap();
        assert_eq!(area > 0.0, d < cross);
    }
    assert_eq!(b.ledger.get(7).status, Status::Pass);
    assert_eq!(b.exit_code(), 0);
}

#[test]
fn bundle_has_documented_columns_and_full_ledger() {
    let b = feasibility_bundle();
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("nested").join("bundle");
    assert_eq!(emit_tables(&b, &out).unwrap(), 0);
    let readme = std::fs::read_to_string(out.join("README.md")).unwrap();
    for t in &b.tables {
        let csv = std::fs::read_to_string(out.join(format!("{}.csv", t.name))).unwrap();
        let header: Vec<&str> = csv.lines().next().unwrap().split(',').collect();
        for h in header {
            assert!(readme.contains(&format!("| {h} |")), "column {h} of {} undocumented", t.name);
        }
    }
    let ledger = std::fs::read_to_string(out.join("ledger.csv")).unwrap();
    for id in 1..=10 {
        assert_eq!(ledger.lines().filter(|l| l.starts_with(&format!("{id},"))).count(), 1, "criterion {id}");
    }
    let manifest = std::fs::read_to_string(out.join("manifest.txt")).unwrap();
    assert!(manifest.starts_with("experiment = feasibility-map\nseed = 3\n"));
}

#[test]
fn experiments_decide_their_own_criteria() {
    for k in ExperimentKind::ALL {
        let mut ids = k.criteria().to_vec();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), k.criteria().len());
    }
    let mut all: Vec<u8> = ExperimentKind::ALL.iter().flat_map(|k| k.criteria().iter().copied()).collect();
    all.sort_unstable();
    // determinism is judged across bundles, not inside one
    assert_eq!(all, (1..=9).collect::<Vec<_>>());
}

#[test]
fn unknown_keys_are_rejected() {
    let spec = ExperimentSpec::new(ExperimentKind::FeasibilityMap, 0).with_param("feasibility.rr", 2.0);
    assert!(run_experiment(&spec).is_err());
    let spec = ExperimentSpec { grid: Some(vec![8, 8]), ..ExperimentSpec::new(ExperimentKind::KamRun, 0) };
    assert!(run_experiment(&spec).is_err());
}

#[test]
fn shapes_parse() {
    assert_eq!(parse_shape("16x16x16x16").unwrap(), vec![16; 4]);
    assert_eq!(parse_shape("4096").unwrap(), vec![4096]);
    assert!(parse_shape("16x0").is_err());
    assert!(parse_shape("ax2").is_err());
}

#[test]
fn weierstrass_seed_zero_runs_to_nyquist() {
    let o = CorpusOptions { indices: vec![0.6], ..Default::default() };
    let w = generate_corpus(0, CorpusKind::Weierstrass, &o).unwrap();
    // 4096 points: 2^j <= 1024
    assert_eq!(nyquist_levels(o.points), 10);
    assert_eq!(w[0].meta("levels"), Some(11.0));
    let u = w[0].field().unwrap();
    // amplitudes sum to at most Σ 2^{-0.6 j}
    let bound: f64 = (0..=10).map(|j| 2f64.powf(-0.6 * j as f64)).sum();
    assert!(u.sup_norm() <= bound + 1e-12);
}

#[test]
fn diffeo_corpus_is_contractive() {
    let o = CorpusOptions { amplitude: 0.05, map_grid: 16, count: 4, ..Default::default() };
    for it in generate_corpus(0, CorpusKind::Diffeo, &o).unwrap() {
        assert!(matches!(it.sample, Sample::Map(_)));
        assert!(it.meta("theta").unwrap() < 0.5);
    }
}

#[test]
fn generated_structures_are_integrable() {
    let o = CorpusOptions { count: 2, acs_grid: 8, ..Default::default() };
    for it in generate_corpus(0, CorpusKind::Acs, &o).unwrap() {
        assert!(matches!(it.sample, Sample::Structure(_)));
        assert!(it.meta("residual").unwrap() < 1e-3 * it.meta("sup").unwrap().max(1e-300), "{:?}", it.meta);
    }
}
