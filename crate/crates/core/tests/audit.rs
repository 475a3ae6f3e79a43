//! Full fixture run, then every aggregate in the report recomputed with flat
//! loops over the pipeline's own link and filter shards.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;

use audit_harness::config::RunConfig;
use audit_harness::kb::{DemographicGroup, PeopleIndex};
use audit_harness::linker::LinkedMention;
use audit_harness::pipeline::{read_jsonl, sample_shard, Pipeline, Stage};
use audit_harness::report::AuditReport;
use audit_harness::strategies::{StrategyCategory, StrategyId, StrategyVerdict};
use audit_harness::synth::{generate_people, write_fixture, SynthParams};

type Unit = (String, Option<usize>);

struct Run {
    _dir: tempfile::TempDir,
    report: AuditReport,
    linked: Vec<Vec<LinkedMention>>,
    verdicts: BTreeMap<StrategyId, Vec<Vec<StrategyVerdict>>>,
}

fn run() -> Run {
    let dir = tempfile::tempdir().unwrap();
    let layout = write_fixture(dir.path(), &SynthParams::default()).unwrap();
    let cfg = RunConfig::load(&dir.path().join(layout.config)).unwrap();
    let p = Pipeline::new(cfg.clone(), 2).unwrap();
    p.run_all().unwrap();
    let report: AuditReport =
        serde_json::from_str(&fs::read_to_string(cfg.run_output_dir().join("report.json")).unwrap()).unwrap();
    let mut linked = Vec::new();
    let mut verdicts: BTreeMap<StrategyId, Vec<Vec<StrategyVerdict>>> = BTreeMap::new();
    for i in 0..cfg.corpus.samples {
        linked.push(read_jsonl(&p.stage_dir(Stage::Link).join(sample_shard(i))).unwrap());
        for &id in &cfg.strategies.enabled {
            let path = p.stage_dir(Stage::Filter).join(id.name()).join(sample_shard(i));
            verdicts.entry(id).or_default().push(read_jsonl(&path).unwrap());
        }
    }
    Run {
        _dir: dir,
        report,
        linked,
        verdicts,
    }
}

fn unit_of(v: &StrategyVerdict) -> Unit {
    (v.unit.doc_id.clone(), v.unit.sentence)
}

fn mention_unit(m: &LinkedMention, id: StrategyId) -> Unit {
    let s = id.is_sentence_level().then_some(m.span.sentence_index);
    (m.span.doc_id.clone(), s)
}

fn flagged(vs: &[StrategyVerdict]) -> HashSet<Unit> {
    vs.iter().filter(|v| v.flagged && !v.unscored).map(unit_of).collect()
}

#[test]
fn report_matches_flat_recount() {
    let r = run();
    let res = &r.report.results;

    // baseline per sample
    assert_eq!(res.samples.len(), r.linked.len());
    for (s, linked) in res.samples.iter().zip(&r.linked) {
        let mut counts: BTreeMap<DemographicGroup, u64> = BTreeMap::new();
        for m in linked {
            *counts.entry(m.group).or_default() += 1;
        }
        for (g, c) in &counts {
            assert_eq!(s.baseline.get(*g), *c, "{} {g:?}", s.sample_id);
        }
        assert_eq!(s.baseline.total(), linked.len() as u64);
    }

    // pooled removal
    for (&id, samples) in &r.verdicts {
        let mut base: BTreeMap<DemographicGroup, u64> = BTreeMap::new();
        let mut removed: BTreeMap<DemographicGroup, u64> = BTreeMap::new();
        let mut excluded = 0;
        for (vs, linked) in samples.iter().zip(&r.linked) {
            let hit = flagged(vs);
            let unscored: HashSet<Unit> = vs.iter().filter(|v| v.unscored).map(unit_of).collect();
            for m in linked {
                let u = mention_unit(m, id);
                if unscored.contains(&u) {
                    excluded += 1;
                    continue;
                }
                *base.entry(m.group).or_default() += 1;
                if hit.contains(&u) {
                    *removed.entry(m.group).or_default() += 1;
                }
            }
        }
        let stats = &res.removal[&id];
        assert_eq!(stats.excluded_mentions, excluded);
        for g in DemographicGroup::REPORTED {
            let cell = &stats.groups[&g];
            let b = base.get(&g).copied().unwrap_or(0);
            let k = removed.get(&g).copied().unwrap_or(0);
            assert_eq!((cell.baseline, cell.removed), (b, k), "{id} {g:?}");
            let want = (b > 0).then(|| -100.0 * k as f64 / b as f64);
            match (cell.percentage, want) {
                (Some(a), Some(w)) => assert!((a - w).abs() <= 1e-12 * w.abs().max(1.0), "{id} {g:?}: {a} vs {w}"),
                (a, w) => assert_eq!(a, w),
            }
        }
    }

    // overlap among classifier strategies
    let classifier: Vec<StrategyId> = r
        .verdicts
        .keys()
        .copied()
        .filter(|id| id.category() == StrategyCategory::ClassifierBased)
        .collect();
    let sets: BTreeMap<StrategyId, HashSet<Unit>> = classifier
        .iter()
        .map(|&id| (id, r.verdicts[&id].iter().flat_map(|vs| flagged(vs)).collect()))
        .collect();
    for &a in &classifier {
        assert_eq!(res.overlap.sizes[&a], sets[&a].len() as u64);
        for &b in &classifier {
            if a < b {
                let inter = sets[&a].iter().filter(|u| sets[&b].contains(*u)).count() as u64;
                let p = res.overlap.pair(a, b).unwrap();
                assert_eq!(p.intersection, inter, "{a} & {b}");
            }
        }
    }
    let all = sets[&classifier[0]]
        .iter()
        .filter(|u| classifier.iter().all(|id| sets[id].contains(*u)))
        .count() as u64;
    assert_eq!(res.overlap.all, all);

    // retention under the quality filters
    let universe: BTreeSet<Unit> = r
        .linked
        .iter()
        .flatten()
        .map(|m| (m.span.doc_id.clone(), Some(m.span.sentence_index)))
        .collect();
    let harmful: HashSet<Unit> = r
        .verdicts
        .iter()
        .filter(|(id, _)| id.is_sentence_level())
        .flat_map(|(_, samples)| samples.iter().flat_map(|vs| flagged(vs)))
        .filter(|u| universe.contains(u))
        .collect();
    assert!(!harmful.is_empty());
    for ret in &res.retention {
        let removed_docs: HashSet<String> = r.verdicts[&ret.strategy]
            .iter()
            .flat_map(|vs| flagged(vs))
            .map(|(d, _)| d)
            .collect();
        let kept = universe.iter().filter(|u| !removed_docs.contains(&u.0)).count() as u64;
        let kept_harm = universe
            .iter()
            .filter(|u| harmful.contains(*u) && !removed_docs.contains(&u.0))
            .count() as u64;
        assert_eq!(ret.sentences, universe.len() as u64);
        assert_eq!(ret.kept_sentences, kept, "{}", ret.strategy);
        assert_eq!(ret.harmful_sentences, harmful.len() as u64);
        assert_eq!(ret.kept_harmful, kept_harm, "{}", ret.strategy);
    }
    assert_eq!(res.retention.len(), 2);

    // top matched terms per lexicon
    let k = r.report.results.top_terms.values().map(Vec::len).max().unwrap();
    for (id, ranked) in &res.top_terms {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for vs in &r.verdicts[id] {
            for v in vs {
                for t in v.matched_terms.iter().flatten() {
                    *counts.entry(t.clone()).or_default() += 1;
                }
            }
        }
        let mut all: Vec<(u64, String)> = counts.into_iter().map(|(t, c)| (c, t)).collect();
        all.sort_by(|a, b| b.0.cmp(&a.0).then_with(|| a.1.cmp(&b.1)));
        let want: Vec<(String, u64)> = all.into_iter().take(k).map(|(c, t)| (t, c)).collect();
        let got: Vec<(String, u64)> = ranked.iter().map(|x| (x.item.clone(), x.count)).collect();
        assert_eq!(got, want, "{id}");
    }

    // occupations among harmful-sentence mentions
    let params = SynthParams::default();
    let people = PeopleIndex::new(generate_people(params.seed, params.people));
    for g in DemographicGroup::REPORTED {
        let mut all: HashMap<String, u64> = HashMap::new();
        let mut hit: HashMap<String, u64> = HashMap::new();
        for m in r.linked.iter().flatten().filter(|m| m.group == g) {
            let harm = harmful.contains(&(m.span.doc_id.clone(), Some(m.span.sentence_index)));
            for occ in &people.get(&m.entity_id).unwrap().occupations {
                *all.entry(occ.clone()).or_default() += 1;
                if harm {
                    *hit.entry(occ.clone()).or_default() += 1;
                }
            }
        }
        let shift = &res.occupations[&g];
        for (ranked, counts) in [(&shift.all, &all), (&shift.flagged, &hit)] {
            for x in ranked {
                assert_eq!(counts[&x.item], x.count, "{g:?} {}", x.item);
            }
            let floor = ranked.last().map_or(0, |x| x.count);
            let above = counts.values().filter(|&&c| c > floor).count();
            assert!(above <= ranked.len());
        }
    }
}
