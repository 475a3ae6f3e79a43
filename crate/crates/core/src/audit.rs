//! Aggregate statistics over linked mentions and strategy verdicts.
//!
//! Counting is mention-level: every linked occurrence counts once. A mention
//! is removed by a strategy when the unit containing it is flagged (the
//! sentence for rule/classifier strategies, the document for quality ones).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kb::{DemographicGroup, PeopleIndex};
use crate::linker::LinkedMention;
use crate::stats::{anova_f, anova_pairwise, AnovaResult};
use crate::strategies::{StrategyCategory, StrategyId, StrategyVerdict, UnitRef};

const ALL_GROUPS: [DemographicGroup; 5] = [
    DemographicGroup::WesternMan,
    DemographicGroup::PostColonialMan,
    DemographicGroup::WesternWoman,
    DemographicGroup::PostColonialWoman,
    DemographicGroup::Unknown,
];

/// Mention count per group; all five groups are always present.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCounts(pub BTreeMap<DemographicGroup, u64>);

impl Default for GroupCounts {
    fn default() -> Self {
        GroupCounts(ALL_GROUPS.iter().map(|&g| (g, 0)).collect())
    }
}

impl GroupCounts {
    pub fn get(&self, g: DemographicGroup) -> u64 {
        self.0.get(&g).copied().unwrap_or(0)
    }

    pub fn add(&mut self, g: DemographicGroup, n: u64) {
        *self.0.entry(g).or_default() += n;
    }

    pub fn total(&self) -> u64 {
        self.0.values().sum()
    }

    pub fn merge(&mut self, o: &GroupCounts) {
        for (&g, &n) in &o.0 {
            self.add(g, n);
        }
    }

    /// Counts of the four reported groups, in table order.
    pub fn reported(&self) -> [u64; 4] {
        DemographicGroup::REPORTED.map(|g| self.get(g))
    }
}

pub fn baseline_counts(linked: &[LinkedMention]) -> GroupCounts {
    let mut c = GroupCounts::default();
    for m in linked {
        c.add(m.group, 1);
    }
    c
}

fn sentence_unit(m: &LinkedMention) -> UnitRef {
    UnitRef::sentence(&m.span.doc_id, m.span.sentence_index)
}

fn containing_unit(m: &LinkedMention, id: StrategyId) -> UnitRef {
    if id.is_sentence_level() {
        sentence_unit(m)
    } else {
        UnitRef::document(&m.span.doc_id)
    }
}

/// Flagged and unscored unit sets of one strategy's verdicts.
#[derive(Debug, Clone, Default)]
pub struct VerdictSets {
    pub flagged: HashSet<UnitRef>,
    pub unscored: HashSet<UnitRef>,
}

impl VerdictSets {
    pub fn from_verdicts(verdicts: &[StrategyVerdict]) -> Self {
        let mut s = VerdictSets::default();
        for v in verdicts {
            if v.unscored {
                s.unscored.insert(v.unit.clone());
            } else if v.flagged {
                s.flagged.insert(v.unit.clone());
            }
        }
        s
    }
}

/// Per-group mentions whose containing unit is flagged. Mentions in
/// unscored units are left out of both counts and returned separately.
pub fn removed_mentions(
    linked: &[LinkedMention],
    id: StrategyId,
    sets: &VerdictSets,
) -> (GroupCounts, GroupCounts, u64) {
    let mut baseline = GroupCounts::default();
    let mut removed = GroupCounts::default();
    let mut excluded = 0;
    for m in linked {
        let unit = containing_unit(m, id);
        if sets.unscored.contains(&unit) {
            excluded += 1;
            continue;
        }
        baseline.add(m.group, 1);
        if sets.flagged.contains(&unit) {
            removed.add(m.group, 1);
        }
    }
    (baseline, removed, excluded)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalCell {
    pub baseline: u64,
    pub removed: u64,
    /// `−100 · removed / baseline`; `None` when the baseline is zero.
    pub percentage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovalStats {
    pub strategy: StrategyId,
    pub groups: BTreeMap<DemographicGroup, RemovalCell>,
    /// Mentions left out because their unit could not be scored.
    pub excluded_mentions: u64,
}

pub fn removal_percentage(baseline: u64, removed: u64) -> Option<f64> {
    (baseline > 0).then(|| -100.0 * removed as f64 / baseline as f64)
}

pub fn removal_percentages(
    strategy: StrategyId,
    baseline: &GroupCounts,
    removed: &GroupCounts,
    excluded: u64,
) -> Result<RemovalStats> {
    let mut groups = BTreeMap::new();
    for g in ALL_GROUPS {
        let (b, r) = (baseline.get(g), removed.get(g));
        if r > b {
            return Err(Error::Stats(format!(
                "{strategy}: {g:?} removed {r} exceeds baseline {b}"
            )));
        }
        groups.insert(
            g,
            RemovalCell {
                baseline: b,
                removed: r,
                percentage: removal_percentage(b, r),
            },
        );
    }
    Ok(RemovalStats {
        strategy,
        groups,
        excluded_mentions: excluded,
    })
}

impl RemovalStats {
    pub fn percentage(&self, g: DemographicGroup) -> Option<f64> {
        self.groups.get(&g).and_then(|c| c.percentage)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairOverlap {
    pub a: StrategyId,
    pub b: StrategyId,
    pub intersection: u64,
    /// `|A∩B| / |A|`; `None` when A is empty.
    pub containment_a_in_b: Option<f64>,
    /// `|A∩B| / |B|`; `None` when B is empty.
    pub containment_b_in_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripleOverlap {
    pub strategies: [StrategyId; 3],
    pub intersection: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OverlapMatrix {
    pub sizes: BTreeMap<StrategyId, u64>,
    pub pairs: Vec<PairOverlap>,
    pub triples: Vec<TripleOverlap>,
    /// Units flagged by every strategy.
    pub all: u64,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl OverlapMatrix {
    pub fn pair(&self, a: StrategyId, b: StrategyId) -> Option<&PairOverlap> {
        self.pairs.iter().find(|p| p.a == a && p.b == b)
    }
}

/// Pairwise, triple-wise and all-way intersections of flagged-unit sets.
pub fn overlap_matrix<T: Ord + std::hash::Hash + Eq>(sets: &BTreeMap<StrategyId, HashSet<T>>) -> OverlapMatrix {
    let ids: Vec<StrategyId> = sets.keys().copied().collect();
    let inter = |members: &[StrategyId]| -> usize {
        let (first, rest) = members.split_first().expect("non-empty");
        sets[first]
            .iter()
            .filter(|u| rest.iter().all(|r| sets[r].contains(*u)))
            .count()
    };
    let mut m = OverlapMatrix {
        sizes: sets.iter().map(|(&k, v)| (k, v.len() as u64)).collect(),
        ..OverlapMatrix::default()
    };
    for i in 0..ids.len() {
        for j in i + 1..ids.len() {
            let n = inter(&[ids[i], ids[j]]);
            m.pairs.push(PairOverlap {
                a: ids[i],
                b: ids[j],
                intersection: n as u64,
                containment_a_in_b: ratio(n, sets[&ids[i]].len()),
                containment_b_in_a: ratio(n, sets[&ids[j]].len()),
            });
            for k in j + 1..ids.len() {
                m.triples.push(TripleOverlap {
                    strategies: [ids[i], ids[j], ids[k]],
                    intersection: inter(&[ids[i], ids[j], ids[k]]) as u64,
                });
            }
        }
    }
    m.all = if ids.is_empty() { 0 } else { inter(&ids) as u64 };
    m
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetentionStats {
    pub strategy: StrategyId,
    pub sentences: u64,
    pub kept_sentences: u64,
    pub kept_fraction: Option<f64>,
    pub harmful_sentences: u64,
    pub kept_harmful: u64,
    /// Share of harmful sentences in kept documents; `None` without any
    /// harmful sentence.
    pub kept_toxic_fraction: Option<f64>,
}

/// Retention of `universe` sentences under a document-level quality filter,
/// overall and among the `harmful` ones.
pub fn retention_of_harm(
    strategy: StrategyId,
    removed_docs: &HashSet<UnitRef>,
    universe: &BTreeSet<UnitRef>,
    harmful: &HashSet<UnitRef>,
) -> RetentionStats {
    let mut kept = 0usize;
    let mut harm = 0usize;
    let mut kept_harm = 0usize;
    for u in universe {
        let is_kept = !removed_docs.contains(&UnitRef::document(&u.doc_id));
        let is_harm = harmful.contains(u);
        kept += usize::from(is_kept);
        harm += usize::from(is_harm);
        kept_harm += usize::from(is_kept && is_harm);
    }
    RetentionStats {
        strategy,
        sentences: universe.len() as u64,
        kept_sentences: kept as u64,
        kept_fraction: ratio(kept, universe.len()),
        harmful_sentences: harm as u64,
        kept_harmful: kept_harm as u64,
        kept_toxic_fraction: ratio(kept_harm, harm),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Ranked {
    pub item: String,
    pub count: u64,
}

/// The `k` most frequent items, count descending then lexicographic.
pub fn rank_top_k(counts: HashMap<String, u64>, k: usize) -> Vec<Ranked> {
    let mut v: Vec<Ranked> = counts.into_iter().map(|(item, count)| Ranked { item, count }).collect();
    v.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.item.cmp(&b.item)));
    v.truncate(k);
    v
}

/// Every matched-term occurrence across lexicon verdicts, ranked.
pub fn top_matched_terms<'a, I>(verdicts: I, k: usize) -> Vec<Ranked>
where
    I: IntoIterator<Item = &'a StrategyVerdict>,
{
    let mut counts: HashMap<String, u64> = HashMap::new();
    for v in verdicts {
        for t in v.matched_terms.iter().flatten() {
            *counts.entry(t.clone()).or_default() += 1;
        }
    }
    rank_top_k(counts, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupOccupations {
    pub all: Vec<Ranked>,
    pub flagged: Vec<Ranked>,
}

pub type OccupationShift = BTreeMap<DemographicGroup, GroupOccupations>;

/// Most frequent occupations per reported group over all mentions and over
/// mentions in flagged sentences. A person with several occupations counts
/// once towards each.
pub fn occupation_shift(
    linked: &[LinkedMention],
    flagged: &HashSet<UnitRef>,
    people: &PeopleIndex,
    k: usize,
) -> OccupationShift {
    let mut all: BTreeMap<DemographicGroup, HashMap<String, u64>> = BTreeMap::new();
    let mut hit: BTreeMap<DemographicGroup, HashMap<String, u64>> = BTreeMap::new();
    for g in DemographicGroup::REPORTED {
        all.insert(g, HashMap::new());
        hit.insert(g, HashMap::new());
    }
    for m in linked {
        if !m.group.is_reported() {
            continue;
        }
        let Some(rec) = people.get(&m.entity_id) else {
            continue;
        };
        let is_flagged = flagged.contains(&sentence_unit(m));
        for occ in &rec.occupations {
            *all.get_mut(&m.group).unwrap().entry(occ.clone()).or_default() += 1;
            if is_flagged {
                *hit.get_mut(&m.group).unwrap().entry(occ.clone()).or_default() += 1;
            }
        }
    }
    DemographicGroup::REPORTED
        .into_iter()
        .map(|g| {
            (
                g,
                GroupOccupations {
                    all: rank_top_k(all.remove(&g).unwrap(), k),
                    flagged: rank_top_k(hit.remove(&g).unwrap(), k),
                },
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnova {
    pub a: String,
    pub b: String,
    pub result: AnovaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaSummary {
    /// One-way ANOVA with samples as groups and the four reported group
    /// counts of each sample as observations.
    pub all_samples: Option<AnovaResult>,
    pub pairwise: Vec<PairAnova>,
    /// Why a test could not be computed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Samples are the ANOVA groups; each contributes its reported group counts.
pub fn sample_anova(samples: &[(String, GroupCounts)]) -> AnovaSummary {
    let obs: Vec<Vec<f64>> = samples
        .iter()
        .map(|(_, c)| c.reported().iter().map(|&n| n as f64).collect())
        .collect();
    let all = anova_f(&obs);
    let pairwise = anova_pairwise(&obs);
    let note = match (&all, &pairwise) {
        (Err(e), _) | (_, Err(e)) => Some(e.to_string()),
        _ => None,
    };
    AnovaSummary {
        all_samples: all.ok(),
        pairwise: pairwise
            .map(|v| {
                v.into_iter()
                    .map(|(i, j, result)| PairAnova {
                        a: samples[i].0.clone(),
                        b: samples[j].0.clone(),
                        result,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        note,
    }
}

/// Linked mentions and verdicts of one sample.
pub struct SampleInput<'a> {
    pub sample_id: &'a str,
    pub linked: &'a [LinkedMention],
    pub verdicts: &'a BTreeMap<StrategyId, Vec<StrategyVerdict>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditOptions {
    /// Strategies whose flags define a harmful sentence; empty means every
    /// rule- and classifier-based strategy present.
    pub harm_strategies: Vec<StrategyId>,
    pub top_k: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            harm_strategies: Vec::new(),
            top_k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: String,
    pub baseline: GroupCounts,
    pub removal: BTreeMap<StrategyId, RemovalStats>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub mentions: u64,
    pub unknown_group_mentions: u64,
    pub unscored_units: BTreeMap<StrategyId, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditResults {
    pub samples: Vec<SampleSummary>,
    /// Mean mention count per group across samples.
    pub baseline_mean: BTreeMap<DemographicGroup, f64>,
    /// Removal pooled over samples: Σ removed / Σ baseline.
    pub removal: BTreeMap<StrategyId, RemovalStats>,
    pub anova: AnovaSummary,
    pub overlap: OverlapMatrix,
    pub retention: Vec<RetentionStats>,
    pub top_terms: BTreeMap<StrategyId, Vec<Ranked>>,
    pub occupations: OccupationShift,
    pub harm_strategies: Vec<StrategyId>,
    pub coverage: Coverage,
}

pub fn run_audit(samples: &[SampleInput<'_>], people: &PeopleIndex, opts: &AuditOptions) -> Result<AuditResults> {
    if samples.is_empty() {
        return Err(Error::Validation("audit needs at least one sample".into()));
    }
    let strategies: BTreeSet<StrategyId> = samples.iter().flat_map(|s| s.verdicts.keys().copied()).collect();
    let harm_strategies: Vec<StrategyId> = if opts.harm_strategies.is_empty() {
        strategies.iter().copied().filter(|s| s.is_sentence_level()).collect()
    } else {
        opts.harm_strategies.clone()
    };
    for h in &harm_strategies {
        if !h.is_sentence_level() {
            return Err(Error::Validation(format!("{h} cannot define harmful sentences")));
        }
    }

    let mut summaries = Vec::new();
    let mut pooled_base: BTreeMap<StrategyId, GroupCounts> = BTreeMap::new();
    let mut pooled_removed: BTreeMap<StrategyId, GroupCounts> = BTreeMap::new();
    let mut pooled_excluded: BTreeMap<StrategyId, u64> = BTreeMap::new();
    let mut flagged_all: BTreeMap<StrategyId, HashSet<UnitRef>> = BTreeMap::new();
    let mut harmful: HashSet<UnitRef> = HashSet::new();
    let mut universe: BTreeSet<UnitRef> = BTreeSet::new();
    let mut coverage = Coverage::default();
    let mut all_linked: Vec<&LinkedMention> = Vec::new();

    for s in samples {
        let baseline = baseline_counts(s.linked);
        coverage.mentions += baseline.total();
        coverage.unknown_group_mentions += baseline.get(DemographicGroup::Unknown);
        universe.extend(s.linked.iter().map(sentence_unit));
        all_linked.extend(s.linked.iter());
        let mut removal = BTreeMap::new();
        for &id in &strategies {
            let verdicts = s.verdicts.get(&id).map(Vec::as_slice).unwrap_or(&[]);
            let sets = VerdictSets::from_verdicts(verdicts);
            *coverage.unscored_units.entry(id).or_default() += sets.unscored.len() as u64;
            let (b, r, excluded) = removed_mentions(s.linked, id, &sets);
            debug_assert_eq!(r.total(), r.0.values().sum::<u64>());
            removal.insert(id, removal_percentages(id, &b, &r, excluded)?);
            pooled_base.entry(id).or_default().merge(&b);
            pooled_removed.entry(id).or_default().merge(&r);
            *pooled_excluded.entry(id).or_default() += excluded;
            if harm_strategies.contains(&id) {
                harmful.extend(sets.flagged.iter().cloned());
            }
            flagged_all.entry(id).or_default().extend(sets.flagged);
        }
        summaries.push(SampleSummary {
            sample_id: s.sample_id.to_owned(),
            baseline,
            removal,
        });
    }

    let n = summaries.len() as f64;
    let baseline_mean = ALL_GROUPS
        .iter()
        .map(|&g| (g, summaries.iter().map(|s| s.baseline.get(g) as f64).sum::<f64>() / n))
        .collect();

    let mut removal = BTreeMap::new();
    for &id in &strategies {
        removal.insert(
            id,
            removal_percentages(id, &pooled_base[&id], &pooled_removed[&id], pooled_excluded[&id])?,
        );
    }

    let anova = sample_anova(
        &summaries
            .iter()
            .map(|s| (s.sample_id.clone(), s.baseline.clone()))
            .collect::<Vec<_>>(),
    );

    let classifier_sets: BTreeMap<StrategyId, HashSet<UnitRef>> = flagged_all
        .iter()
        .filter(|(id, _)| id.category() == StrategyCategory::ClassifierBased)
        .map(|(&id, s)| (id, s.clone()))
        .collect();
    let overlap = overlap_matrix(&classifier_sets);

    // the universe holds scored sentences only, so harm is restricted to it
    harmful.retain(|u| universe.contains(u));
    let retention = strategies
        .iter()
        .filter(|id| id.category() == StrategyCategory::QualityBased)
        .map(|&id| retention_of_harm(id, &flagged_all[&id], &universe, &harmful))
        .collect();

    let mut top_terms = BTreeMap::new();
    for &id in &strategies {
        if id.category() == StrategyCategory::RuleBased {
            let verdicts = samples.iter().flat_map(|s| s.verdicts.get(&id).into_iter().flatten());
            top_terms.insert(id, top_matched_terms(verdicts, opts.top_k));
        }
    }

    let linked_owned: Vec<LinkedMention> = all_linked.into_iter().cloned().collect();
    let occupations = occupation_shift(&linked_owned, &harmful, people, opts.top_k);

    Ok(AuditResults {
        samples: summaries,
        baseline_mean,
        removal,
        anova,
        overlap,
        retention,
        top_terms,
        occupations,
        harm_strategies,
        coverage,
    })
}
