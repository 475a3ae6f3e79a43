//! Report assembly and rendering (canonical JSON, CSV tables, Markdown).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::audit::{AuditResults, Ranked};
use crate::error::{Error, Result};
use crate::ingest::ParseStats;
use crate::kb::DemographicGroup;
use crate::linker::LinkStats;
use crate::strategies::perspective::AdapterCounters;
use crate::strategies::{StrategyCategory, StrategyId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyInfo {
    pub id: StrategyId,
    pub category: StrategyCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Where the scorer came from (lexicon file, model hash, adapter).
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub run_id: String,
    pub config_hash: String,
    pub region_map_hash: String,
    pub people_hash: String,
    pub seeds: std::collections::BTreeMap<String, u64>,
    pub corpus: Vec<InputFile>,
    pub samples: usize,
    pub sample_size: usize,
    pub link_threshold: f64,
    pub strategies: Vec<StrategyInfo>,
    pub harness_version: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineCounters {
    pub parse: ParseStats,
    pub documents_kept: u64,
    pub documents_dropped: std::collections::BTreeMap<String, u64>,
    pub linking: LinkStats,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity_adapter: Option<AdapterCounters>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub metadata: RunMetadata,
    pub counters: PipelineCounters,
    pub results: AuditResults,
}

/// Canonical JSON: keys sorted, two-space indent, floats in 17 significant
/// digits scientific notation so they parse back to the same bits.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

fn write_value(v: &Value, depth: usize, out: &mut String) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let f = n.as_f64().expect("f64 number");
                let _ = write!(out, "{f:.16e}");
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&serde_json::to_string(s).expect("string serializes")),
        Value::Array(a) => {
            if a.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push('[');
            for (i, x) in a.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(depth + 1, out);
                write_value(x, depth + 1, out);
            }
            newline(depth, out);
            out.push(']');
        }
        Value::Object(m) => {
            if m.is_empty() {
                out.push_str("{}");
                return;
            }
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                newline(depth + 1, out);
                out.push_str(&serde_json::to_string(k).expect("key serializes"));
                out.push_str(": ");
                write_value(&m[*k], depth + 1, out);
            }
            newline(depth, out);
            out.push('}');
        }
    }
}

fn newline(depth: usize, out: &mut String) {
    out.push('\n');
    for _ in 0..depth {
        out.push_str("  ");
    }
}

/// Rounds the exact binary value half to even at `decimals` places.
/// Negative values that round to zero keep their sign (`-0.0`).
pub fn format_half_even(x: f64, decimals: usize) -> String {
    format!("{x:.decimals$}")
}

fn pct(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_owned(), |v| format_half_even(v, 1))
}

fn frac_pct(x: Option<f64>) -> String {
    x.map_or_else(|| "N/A".to_owned(), |v| format_half_even(100.0 * v, 1))
}

fn group_headers() -> Vec<&'static str> {
    DemographicGroup::REPORTED.iter().map(|g| g.abbrev()).collect()
}

/// One CSV table: file stem and rows (header first).
pub struct Table {
    pub name: &'static str,
    pub rows: Vec<Vec<String>>,
}

pub fn tables(report: &AuditReport) -> Vec<Table> {
    let r = &report.results;
    let mut out = Vec::new();

    let mut header = vec!["strategy".to_owned(), "category".to_owned()];
    header.extend(group_headers().into_iter().map(str::to_owned));
    let mut rows = vec![header];
    let mut base = vec!["unfiltered".to_owned(), String::new()];
    base.extend(
        DemographicGroup::REPORTED
            .iter()
            .map(|g| format_half_even(r.baseline_mean.get(g).copied().unwrap_or(0.0), 1)),
    );
    if !r.samples.is_empty() {
        rows.push(base);
    }
    for (id, st) in &r.removal {
        let mut row = vec![id.name().to_owned(), category_label(id.category()).to_owned()];
        row.extend(DemographicGroup::REPORTED.iter().map(|&g| pct(st.percentage(g))));
        rows.push(row);
    }
    out.push(Table { name: "removal", rows });

    let mut header = vec!["sample".to_owned()];
    header.extend(group_headers().into_iter().map(str::to_owned));
    header.push("unknown".into());
    let mut rows = vec![header];
    for s in &r.samples {
        let mut row = vec![s.sample_id.clone()];
        row.extend(s.baseline.reported().iter().map(u64::to_string));
        row.push(s.baseline.get(DemographicGroup::Unknown).to_string());
        rows.push(row);
    }
    out.push(Table { name: "baseline", rows });

    let mut header = vec!["sample".to_owned(), "strategy".to_owned()];
    header.extend(group_headers().into_iter().map(str::to_owned));
    let mut rows = vec![header];
    for s in &r.samples {
        for (id, st) in &s.removal {
            let mut row = vec![s.sample_id.clone(), id.name().to_owned()];
            row.extend(DemographicGroup::REPORTED.iter().map(|&g| pct(st.percentage(g))));
            rows.push(row);
        }
    }
    out.push(Table {
        name: "removal_by_sample",
        rows,
    });

    let mut rows = vec![vec!["strategy".into(), "rank".into(), "term".into(), "count".into()]];
    for (id, terms) in &r.top_terms {
        push_ranked(&mut rows, id.name(), terms);
    }
    out.push(Table {
        name: "top_terms",
        rows,
    });

    let mut rows = vec![vec![
        "a".into(),
        "b".into(),
        "intersection".into(),
        "containment_a_in_b".into(),
        "containment_b_in_a".into(),
    ]];
    for p in &r.overlap.pairs {
        rows.push(vec![
            p.a.name().into(),
            p.b.name().into(),
            p.intersection.to_string(),
            frac_pct(p.containment_a_in_b),
            frac_pct(p.containment_b_in_a),
        ]);
    }
    out.push(Table { name: "overlap", rows });

    let mut rows = vec![vec!["strategy".into(), "flagged".into()]];
    for (id, n) in &r.overlap.sizes {
        rows.push(vec![id.name().into(), n.to_string()]);
    }
    for t in &r.overlap.triples {
        let names: Vec<&str> = t.strategies.iter().map(|s| s.name()).collect();
        rows.push(vec![names.join("&"), t.intersection.to_string()]);
    }
    out.push(Table {
        name: "overlap_sets",
        rows,
    });

    let mut rows = vec![vec!["strategy".into(), "kept".into(), "kept_toxic".into()]];
    for t in &r.retention {
        rows.push(vec![
            t.strategy.name().into(),
            frac_pct(t.kept_fraction),
            frac_pct(t.kept_toxic_fraction),
        ]);
    }
    out.push(Table {
        name: "retention",
        rows,
    });

    let mut rows = vec![vec![
        "group".into(),
        "list".into(),
        "rank".into(),
        "occupation".into(),
        "count".into(),
    ]];
    for (g, occ) in &r.occupations {
        for (label, list) in [("all", &occ.all), ("flagged", &occ.flagged)] {
            for (i, x) in list.iter().enumerate() {
                rows.push(vec![
                    g.abbrev().into(),
                    label.into(),
                    (i + 1).to_string(),
                    x.item.clone(),
                    x.count.to_string(),
                ]);
            }
        }
    }
    out.push(Table {
        name: "occupations",
        rows,
    });

    let mut rows = vec![vec![
        "scope".into(),
        "f".into(),
        "p".into(),
        "df_between".into(),
        "df_within".into(),
    ]];
    let fmt = |x: f64| format!("{x:.6}");
    if let Some(a) = &r.anova.all_samples {
        rows.push(vec![
            "all".into(),
            fmt(a.f),
            fmt(a.p),
            fmt(a.df_between),
            fmt(a.df_within),
        ]);
    }
    for p in &r.anova.pairwise {
        let a = &p.result;
        rows.push(vec![
            format!("{}|{}", p.a, p.b),
            fmt(a.f),
            fmt(a.p),
            fmt(a.df_between),
            fmt(a.df_within),
        ]);
    }
    out.push(Table { name: "anova", rows });

    out
}

fn push_ranked(rows: &mut Vec<Vec<String>>, key: &str, list: &[Ranked]) {
    for (i, x) in list.iter().enumerate() {
        rows.push(vec![
            key.into(),
            (i + 1).to_string(),
            x.item.clone(),
            x.count.to_string(),
        ]);
    }
}

fn category_label(c: StrategyCategory) -> &'static str {
    match c {
        StrategyCategory::RuleBased => "rule-based",
        StrategyCategory::ClassifierBased => "classifier-based",
        StrategyCategory::QualityBased => "quality-based",
    }
}

pub fn table_csv(t: &Table) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for row in &t.rows {
        w.write_record(row).map_err(|e| Error::Format(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Format(e.to_string()))
}

fn md_table(out: &mut String, rows: &[Vec<String>]) {
    let Some((head, body)) = rows.split_first() else {
        return;
    };
    let esc = |s: &str| s.replace('|', "\\|");
    let _ = writeln!(
        out,
        "| {} |",
        head.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | ")
    );
    let _ = writeln!(out, "|{}", "---|".repeat(head.len()));
    for r in body {
        let _ = writeln!(out, "| {} |", r.iter().map(|c| esc(c)).collect::<Vec<_>>().join(" | "));
    }
    out.push('\n');
}

pub fn markdown(report: &AuditReport) -> String {
    let m = &report.metadata;
    let r = &report.results;
    let t = tables(report);
    let get = |name: &str| &t.iter().find(|x| x.name == name).expect("table exists").rows;
    let mut out = String::new();
    let _ = writeln!(out, "# Filtering audit `{}`\n", m.run_id);
    let _ = writeln!(
        out,
        "{} samples of {} documents; link threshold {}; config `{}`.\n",
        m.samples,
        m.sample_size,
        m.link_threshold,
        &m.config_hash[..m.config_hash.len().min(12)]
    );
    out.push_str("## Mentions removed per group (%)\n\n");
    out.push_str("The `unfiltered` row is the mean number of linked mentions per sample.\n\n");
    md_table(&mut out, get("removal"));
    out.push_str("## Top matching lexicon terms\n\n");
    md_table(&mut out, get("top_terms"));
    out.push_str("## Quality filters: kept sentences vs kept harmful sentences (%)\n\n");
    let harm: Vec<&str> = r.harm_strategies.iter().map(|s| s.name()).collect();
    let _ = writeln!(out, "Harmful = flagged by any of: {}.\n", harm.join(", "));
    md_table(&mut out, get("retention"));
    out.push_str("## Classifier overlap\n\n");
    md_table(&mut out, get("overlap_sets"));
    md_table(&mut out, get("overlap"));
    out.push_str("## Occupations (all mentions vs mentions in harmful sentences)\n\n");
    let mut rows = vec![vec![
        "group".to_owned(),
        "top occupations".to_owned(),
        "top flagged".to_owned(),
    ]];
    for (g, occ) in &r.occupations {
        let join = |l: &[Ranked]| l.iter().map(|x| x.item.as_str()).collect::<Vec<_>>().join(", ");
        rows.push(vec![g.abbrev().into(), join(&occ.all), join(&occ.flagged)]);
    }
    md_table(&mut out, &rows);
    out.push_str("## Sample comparability (ANOVA)\n\n");
    if let Some(n) = &r.anova.note {
        let _ = writeln!(out, "Not computed: {n}\n");
    }
    md_table(&mut out, get("anova"));
    out.push_str("## Coverage\n\n");
    let c = &report.counters;
    let _ = writeln!(out, "- WARC/JSONL records read: {}", c.parse.records);
    let _ = writeln!(out, "- record errors: {}", c.parse.error_total());
    let _ = writeln!(out, "- documents kept by the gate: {}", c.documents_kept);
    let _ = writeln!(
        out,
        "- mention spans: {}, linked: {}, unlinked: {}",
        c.linking.spans, c.linking.linked, c.linking.unlinked
    );
    let _ = writeln!(
        out,
        "- linked mentions with unknown group: {}",
        r.coverage.unknown_group_mentions
    );
    for (id, n) in &r.coverage.unscored_units {
        if *n > 0 {
            let _ = writeln!(out, "- unscored units for {id}: {n}");
        }
    }
    out
}

/// Writes `report.json`, `report.md` and `tables/*.csv` under `dir`.
pub fn write_report(dir: &Path, report: &AuditReport) -> Result<()> {
    let tables_dir = dir.join("tables");
    fs::create_dir_all(&tables_dir).map_err(|e| Error::io(&tables_dir, e))?;
    let json = canonical_json(report)?;
    let p = dir.join("report.json");
    fs::write(&p, json).map_err(|e| Error::io(&p, e))?;
    for t in tables(report) {
        let p = tables_dir.join(format!("{}.csv", t.name));
        fs::write(&p, table_csv(&t)?).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join("report.md");
    fs::write(&p, markdown(report)).map_err(|e| Error::io(&p, e))?;
    Ok(())
}
