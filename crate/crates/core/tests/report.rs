use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use audit_harness::audit::{AnovaSummary, AuditResults, Coverage, OverlapMatrix};
use audit_harness::report::{canonical_json, write_report, AuditReport, PipelineCounters, RunMetadata};

fn empty_report() -> AuditReport {
    AuditReport {
        metadata: RunMetadata {
            run_id: "empty".into(),
            config_hash: "0".repeat(64),
            region_map_hash: "1".repeat(64),
            people_hash: "2".repeat(64),
            seeds: BTreeMap::from([("sampling".into(), 1), ("training".into(), 2)]),
            corpus: Vec::new(),
            samples: 0,
            sample_size: 0,
            link_threshold: 0.85,
            strategies: Vec::new(),
            harness_version: "test".into(),
        },
        counters: PipelineCounters::default(),
        results: AuditResults {
            samples: Vec::new(),
            baseline_mean: BTreeMap::new(),
            removal: BTreeMap::new(),
            anova: AnovaSummary {
                all_samples: None,
                pairwise: Vec::new(),
                note: Some("no samples".into()),
            },
            overlap: OverlapMatrix::default(),
            retention: Vec::new(),
            top_terms: BTreeMap::new(),
            occupations: BTreeMap::new(),
            harm_strategies: Vec::new(),
            coverage: Coverage::default(),
        },
    }
}

fn read_tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for name in ["report.json", "report.md"] {
        out.insert(name.to_owned(), fs::read(dir.join(name)).unwrap());
    }
    for e in fs::read_dir(dir.join("tables")).unwrap() {
        let e = e.unwrap();
        out.insert(
            format!("tables/{}", e.file_name().to_string_lossy()),
            fs::read(e.path()).unwrap(),
        );
    }
    out
}

#[test]
fn empty_report_has_header_only_tables() {
    let dir = tempfile::tempdir().unwrap();
    let report = empty_report();
    write_report(dir.path(), &report).unwrap();
    let files = read_tree(dir.path());
    let tables: Vec<_> = files.iter().filter(|(k, _)| k.starts_with("tables/")).collect();
    assert!(tables.len() >= 5, "{:?}", files.keys());
    for (name, bytes) in tables {
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 1, "{name}: {text:?}");
        assert!(text.ends_with('\n'));
    }
    let back: AuditReport = serde_json::from_slice(&files["report.json"]).unwrap();
    assert_eq!(back, report);
}

#[test]
fn rendering_is_byte_stable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/report.json");
    let report: AuditReport = serde_json::from_str(&fs::read_to_string(&golden).unwrap()).unwrap();
    write_report(a.path(), &report).unwrap();
    write_report(b.path(), &report).unwrap();
    let (ta, tb) = (read_tree(a.path()), read_tree(b.path()));
    assert_eq!(ta, tb);
    // parsing and re-rendering the frozen report is a fixed point
    assert_eq!(ta["report.json"], fs::read(&golden).unwrap());
    assert_eq!(canonical_json(&report).unwrap().as_bytes(), &ta["report.json"][..]);
}
