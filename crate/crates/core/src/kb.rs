//! People knowledge base: record parsing, demographic classification and the
//! name gazetteer used for offline linking.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::io::BufRead;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::matcher::{Match, TokenTrie};
use crate::text::{normalize_label, normalize_surface};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Man,
    Woman,
    Other,
    Unknown,
}

impl FromStr for Gender {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "man" | "male" => Ok(Gender::Man),
            "woman" | "female" => Ok(Gender::Woman),
            "other" => Ok(Gender::Other),
            "unknown" | "" => Ok(Gender::Unknown),
            other => Err(format!("unknown gender {other:?}")),
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::Man => "Man",
            Gender::Woman => "Woman",
            Gender::Other => "Other",
            Gender::Unknown => "Unknown",
        })
    }
}

/// The gender × origin cell a person is counted under. Table order is
/// w.m., p-c.m, w.w., p-c. w.; `Unknown` is kept out of group statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemographicGroup {
    WesternMan,
    PostColonialMan,
    WesternWoman,
    PostColonialWoman,
    Unknown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Western,
    PostColonial,
}

impl DemographicGroup {
    /// The four reported cells, in table column order.
    pub const REPORTED: [DemographicGroup; 4] = [
        DemographicGroup::WesternMan,
        DemographicGroup::PostColonialMan,
        DemographicGroup::WesternWoman,
        DemographicGroup::PostColonialWoman,
    ];

    pub fn from_axes(gender: Gender, origin: Option<Origin>) -> Self {
        match (gender, origin) {
            (Gender::Man, Some(Origin::Western)) => Self::WesternMan,
            (Gender::Man, Some(Origin::PostColonial)) => Self::PostColonialMan,
            (Gender::Woman, Some(Origin::Western)) => Self::WesternWoman,
            (Gender::Woman, Some(Origin::PostColonial)) => Self::PostColonialWoman,
            _ => Self::Unknown,
        }
    }

    /// Column abbreviation used in the rendered tables.
    pub fn abbrev(self) -> &'static str {
        match self {
            Self::WesternMan => "w.m.",
            Self::PostColonialMan => "p-c.m",
            Self::WesternWoman => "w.w.",
            Self::PostColonialWoman => "p-c. w.",
            Self::Unknown => "unknown",
        }
    }

    pub fn is_reported(self) -> bool {
        self != Self::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonRecord {
    pub entity_id: String,
    pub primary_name: String,
    pub aliases: Vec<String>,
    pub gender: Gender,
    pub birth_country: Option<String>,
    /// Sorted and deduplicated.
    pub citizenship: Vec<String>,
    pub ethnic_groups: Vec<String>,
    pub occupations: Vec<String>,
}

impl PersonRecord {
    /// Primary name followed by aliases.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.primary_name.as_str()).chain(self.aliases.iter().map(String::as_str))
    }

    /// One tab-separated line in the People Dataset layout (no newline).
    pub fn to_line(&self) -> String {
        [
            self.entity_id.clone(),
            self.primary_name.clone(),
            self.aliases.join("|"),
            self.gender.to_string(),
            self.birth_country.clone().unwrap_or_default(),
            self.citizenship.join("|"),
            self.ethnic_groups.join("|"),
            self.occupations.join("|"),
        ]
        .join("\t")
    }

    /// Parses one People Dataset line. Duplicate-id checks happen at the
    /// dataset level.
    pub fn parse_line(line: &str) -> std::result::Result<Self, String> {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 8 {
            return Err(format!("expected 8 fields, found {}", fields.len()));
        }
        let entity_id = fields[0].trim();
        if entity_id.is_empty() || entity_id.chars().any(char::is_whitespace) {
            return Err("missing or malformed entity id".into());
        }
        let primary_name = fields[1].trim();
        if primary_name.is_empty() {
            return Err("missing primary name".into());
        }
        let mut seen: HashSet<String> = HashSet::new();
        seen.insert(primary_name.to_lowercase());
        let aliases = split_list(fields[2])
            .filter(|a| seen.insert(a.to_lowercase()))
            .map(str::to_owned)
            .collect();
        let gender = fields[3].parse::<Gender>()?;
        let birth_country = match fields[4].trim() {
            "" => None,
            code => Some(country_code(code)?),
        };
        let mut citizenship = split_list(fields[5])
            .map(country_code)
            .collect::<std::result::Result<Vec<_>, _>>()?;
        citizenship.sort();
        citizenship.dedup();
        Ok(PersonRecord {
            entity_id: entity_id.to_owned(),
            primary_name: primary_name.to_owned(),
            aliases,
            gender,
            birth_country,
            citizenship,
            ethnic_groups: split_list(fields[6]).map(str::to_owned).collect(),
            occupations: split_list(fields[7]).map(str::to_owned).collect(),
        })
    }
}

fn split_list(field: &str) -> impl Iterator<Item = &str> {
    field.split('|').map(str::trim).filter(|s| !s.is_empty())
}

fn country_code(code: &str) -> std::result::Result<String, String> {
    let code = code.trim();
    if code.len() == 2 && code.chars().all(|c| c.is_ascii_alphabetic()) {
        Ok(code.to_ascii_uppercase())
    } else {
        Err(format!("bad country code {code:?}"))
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParsedRecords {
    pub records: Vec<PersonRecord>,
    pub skipped: usize,
}

/// Reads a People Dataset stream. Blank lines and `#` comments are ignored;
/// malformed lines (including duplicate ids and invalid UTF-8) are skipped
/// and counted. More than half the data lines malformed is fatal.
pub fn parse_person_records<R: BufRead>(mut reader: R) -> Result<ParsedRecords> {
    let mut out = ParsedRecords::default();
    let mut ids = HashSet::new();
    let mut buf = Vec::new();
    let mut data_lines = 0usize;
    loop {
        buf.clear();
        if reader.read_until(b'\n', &mut buf)? == 0 {
            break;
        }
        let Ok(line) = std::str::from_utf8(&buf) else {
            data_lines += 1;
            out.skipped += 1;
            continue;
        };
        let line = line.trim_end_matches(['\n', '\r']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        data_lines += 1;
        match PersonRecord::parse_line(line) {
            Ok(rec) if ids.insert(rec.entity_id.clone()) => out.records.push(rec),
            Ok(rec) => {
                log::debug!("duplicate entity id {}", rec.entity_id);
                out.skipped += 1;
            }
            Err(e) => {
                log::debug!("skipping malformed record: {e}");
                out.skipped += 1;
            }
        }
    }
    if out.skipped * 2 > data_lines {
        return Err(Error::Format(format!(
            "{} of {} people records are malformed",
            out.skipped, data_lines
        )));
    }
    Ok(out)
}

/// Which countries count as Western and which ethnic-group labels mark a
/// Post-colonial minority.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct RegionMap {
    pub western_countries: BTreeSet<String>,
    pub postcolonial_minority_labels: BTreeSet<String>,
}

const DEFAULT_REGIONS: &str = include_str!("../data/regions.txt");

impl RegionMap {
    pub fn default_map() -> Self {
        Self::parse(DEFAULT_REGIONS).expect("bundled region map parses")
    }

    /// `[western]` and `[minorities]` sections, one entry per line, `#`
    /// comments.
    pub fn parse(text: &str) -> Result<Self> {
        enum Section {
            None,
            Western,
            Minorities,
        }
        let mut map = RegionMap::default();
        let mut section = Section::None;
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            match line.to_ascii_lowercase().as_str() {
                "[western]" => section = Section::Western,
                "[minorities]" => section = Section::Minorities,
                _ => match section {
                    Section::Western => {
                        let code =
                            country_code(line).map_err(|e| Error::Format(format!("region map line {}: {e}", n + 1)))?;
                        map.western_countries.insert(code);
                    }
                    Section::Minorities => {
                        map.postcolonial_minority_labels.insert(normalize_label(line));
                    }
                    Section::None => {
                        return Err(Error::Format(format!(
                            "region map line {}: entry outside a section",
                            n + 1
                        )))
                    }
                },
            }
        }
        if map.is_empty() {
            return Err(Error::Format("region map is empty".into()));
        }
        Ok(map)
    }

    pub fn is_empty(&self) -> bool {
        self.western_countries.is_empty() && self.postcolonial_minority_labels.is_empty()
    }

    /// Canonical text form; entries sorted.
    pub fn to_canonical_string(&self) -> String {
        let mut s = String::from("[western]\n");
        for c in &self.western_countries {
            s.push_str(c);
            s.push('\n');
        }
        s.push_str("[minorities]\n");
        for l in &self.postcolonial_minority_labels {
            s.push_str(l);
            s.push('\n');
        }
        s
    }

    /// SHA-256 of the canonical form, hex encoded. Embedded in reports.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_canonical_string().as_bytes()))
    }

    fn origin_of_country(&self, code: &str) -> Origin {
        if self.western_countries.contains(code) {
            Origin::Western
        } else {
            Origin::PostColonial
        }
    }
}

/// Assigns a record to its demographic cell.
///
/// Origin precedence: a listed minority ethnic group, then birth country,
/// then citizenship (lexicographically first code, since the list is kept
/// sorted). Gender other than Man/Woman, or no origin signal, gives Unknown.
pub fn classify_group(record: &PersonRecord, map: &RegionMap) -> DemographicGroup {
    if !matches!(record.gender, Gender::Man | Gender::Woman) {
        return DemographicGroup::Unknown;
    }
    let minority = record
        .ethnic_groups
        .iter()
        .any(|g| map.postcolonial_minority_labels.contains(&normalize_label(g)));
    let origin = if minority {
        Some(Origin::PostColonial)
    } else if let Some(code) = &record.birth_country {
        Some(map.origin_of_country(code))
    } else {
        record.citizenship.iter().min().map(|c| map.origin_of_country(c))
    };
    DemographicGroup::from_axes(record.gender, origin)
}

/// Record counts per demographic cell, Unknown included.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KbStats {
    pub counts: BTreeMap<DemographicGroup, u64>,
    pub total: u64,
}

impl KbStats {
    pub fn get(&self, g: DemographicGroup) -> u64 {
        self.counts.get(&g).copied().unwrap_or(0)
    }
}

pub fn kb_stats(records: &[PersonRecord], map: &RegionMap) -> KbStats {
    let mut stats = KbStats::default();
    for g in DemographicGroup::REPORTED.iter().chain([&DemographicGroup::Unknown]) {
        stats.counts.insert(*g, 0);
    }
    for r in records {
        *stats.counts.entry(classify_group(r, map)).or_default() += 1;
        stats.total += 1;
    }
    stats
}

/// Normalized name → candidate entity ids, plus the token automaton used to
/// find those names in text. Immutable once built.
#[derive(Debug, Clone)]
pub struct Gazetteer {
    entries: BTreeMap<String, Vec<String>>,
    matcher: TokenTrie,
    /// pattern index in `matcher` → key in `entries`
    pattern_keys: Vec<String>,
}

impl Gazetteer {
    fn from_entries(entries: BTreeMap<String, Vec<String>>) -> Self {
        let mut matcher = TokenTrie::new();
        let mut pattern_keys = Vec::with_capacity(entries.len());
        for key in entries.keys() {
            let seq: Vec<&str> = key.split(' ').collect();
            if let Some(idx) = matcher.insert(&seq) {
                debug_assert_eq!(idx, pattern_keys.len());
                pattern_keys.push(key.clone());
            }
        }
        Gazetteer {
            entries,
            matcher,
            pattern_keys,
        }
    }

    /// Exact lookup on the normalized form of `surface`.
    pub fn lookup(&self, surface: &str) -> &[String] {
        self.entries
            .get(&normalize_surface(surface))
            .map(Vec::as_slice)
            .unwrap_or(&[])
    }

    /// Lookup of an already normalized key.
    pub fn lookup_normalized(&self, key: &str) -> &[String] {
        self.entries.get(key).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    /// Longest non-overlapping name matches over a normalized token list.
    pub fn find_names<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<(Match, &str)> {
        self.matcher
            .find_longest(tokens)
            .into_iter()
            .map(|m| (m, self.pattern_keys[m.pattern].as_str()))
            .collect()
    }

    /// `key TAB id|id|...` per line, keys sorted.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (k, ids) in &self.entries {
            s.push_str(k);
            s.push('\t');
            s.push_str(&ids.join("|"));
            s.push('\n');
        }
        s
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (k, ids) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("gazetteer line {}: missing tab", n + 1)))?;
            let ids: Vec<String> = ids.split('|').map(str::to_owned).collect();
            entries.insert(k.to_owned(), ids);
        }
        Ok(Self::from_entries(entries))
    }
}

/// Indexes every primary name and alias. A surface shared by several people
/// keeps all of their ids (sorted).
pub fn build_gazetteer(records: &[PersonRecord]) -> Gazetteer {
    let mut entries: BTreeMap<String, Vec<String>> = BTreeMap::new();
    for r in records {
        for name in r.names() {
            let key = normalize_surface(name);
            if key.is_empty() {
                continue;
            }
            entries.entry(key).or_default().push(r.entity_id.clone());
        }
    }
    for ids in entries.values_mut() {
        ids.sort();
        ids.dedup();
    }
    Gazetteer::from_entries(entries)
}

/// Id → record lookup over a parsed dataset.
#[derive(Debug, Clone, Default)]
pub struct PeopleIndex {
    records: Vec<PersonRecord>,
    by_id: HashMap<String, usize>,
}

impl PeopleIndex {
    pub fn new(records: Vec<PersonRecord>) -> Self {
        let by_id = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.entity_id.clone(), i))
            .collect();
        Self { records, by_id }
    }

    pub fn get(&self, id: &str) -> Option<&PersonRecord> {
        self.by_id.get(id).map(|&i| &self.records[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn records(&self) -> &[PersonRecord] {
        &self.records
    }
}
