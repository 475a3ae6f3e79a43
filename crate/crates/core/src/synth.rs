//! Seeded synthetic fixtures.
//!
//! Generates a small People Dataset, an English web corpus with planted
//! person mentions and planted harmful terms, and labelled training corpora
//! for the classifier and quality strategies. Harmful terms are planted more
//! often in sentences that mention people of one chosen group, and
//! independently of each document's quality style.

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::lang::profile_text;
use crate::ingest::warc::{WarcRecord, WarcWriter};
use crate::kb::{classify_group, DemographicGroup, Gender, PersonRecord, RegionMap};

pub const FUNCTION_WORDS: &[&str] = &[
    "the", "and", "was", "with", "for", "on", "in", "is", "a", "by", "from", "this", "that", "at", "as", "also",
    "later", "after", "during", "it", "were", "has", "had", "an", "which", "into", "over", "about", "their", "its",
    "when", "where", "while", "many", "several", "new", "most", "first", "other", "such", "these", "they", "there",
    "then", "both", "more",
];

pub const WIKI_WORDS: &[&str] = &[
    "history",
    "university",
    "century",
    "government",
    "region",
    "population",
    "river",
    "published",
    "studied",
    "research",
    "museum",
    "album",
    "theory",
    "science",
    "council",
    "district",
    "founded",
    "member",
    "national",
    "royal",
    "career",
    "award",
    "novel",
    "painting",
    "composer",
    "series",
    "league",
    "emperor",
    "dynasty",
    "province",
    "architecture",
    "treaty",
    "election",
    "parliament",
    "physics",
    "chemistry",
    "literature",
    "philosophy",
    "cathedral",
    "symphony",
    "journal",
    "institute",
    "professor",
    "archive",
    "documented",
    "described",
    "influential",
    "established",
    "located",
    "northern",
    "southern",
    "ancient",
    "medieval",
    "modern",
    "early",
    "significant",
    "notable",
    "international",
    "academy",
    "manuscript",
    "expedition",
    "colonial",
    "reform",
    "territory",
    "orchestra",
    "edition",
    "scholars",
];

const NEWS_WORDS: &[&str] = &[
    "reported",
    "officials",
    "announced",
    "statement",
    "week",
    "market",
    "company",
    "police",
    "city",
    "residents",
    "percent",
    "economy",
    "health",
    "school",
    "team",
    "game",
    "fans",
    "coach",
    "interview",
    "said",
    "told",
    "according",
    "local",
    "million",
    "budget",
    "plans",
    "project",
    "weather",
    "storm",
    "festival",
    "crowd",
    "minister",
    "talks",
    "agreement",
    "yesterday",
    "today",
    "monday",
    "friday",
    "spokesperson",
    "investigation",
    "hospital",
    "traffic",
    "prices",
    "workers",
    "union",
    "court",
    "judge",
    "trial",
    "vote",
    "campaign",
    "stadium",
    "season",
    "players",
    "victory",
    "schedule",
    "airport",
    "flights",
    "energy",
];

const SPAM_WORDS: &[&str] = &[
    "click",
    "buy",
    "cheap",
    "free",
    "offer",
    "discount",
    "shipping",
    "best",
    "online",
    "casino",
    "bonus",
    "subscribe",
    "limited",
    "sale",
    "price",
    "order",
    "deals",
    "win",
    "prize",
    "guaranteed",
    "amazing",
    "shop",
    "coupon",
    "pills",
    "loans",
    "credit",
    "instant",
    "download",
    "unlimited",
    "hurry",
    "exclusive",
    "promo",
    "cart",
    "checkout",
    "bargain",
    "lowest",
    "wholesale",
    "replica",
    "cashback",
    "jackpot",
    "voucher",
    "miracle",
    "trial",
    "signup",
    "lucky",
    "winner",
    "earn",
    "money",
    "fast",
    "easy",
    "rates",
    "hot",
    "now",
];

const INSULT_WORDS: &[&str] = &[
    "idiot",
    "moron",
    "stupid",
    "loser",
    "scum",
    "pathetic",
    "disgusting",
    "worthless",
    "dumb",
    "ugly",
    "filthy",
    "garbage",
    "hateful",
    "vile",
    "creep",
    "imbecile",
    "clown",
    "lowlife",
];

/// Weighted planting choices for the two bundled lexicons.
const PROFANITY_TERMS: &[(&str, u32)] = &[
    ("sex", 9),
    ("porn", 7),
    ("nude", 6),
    ("ass", 5),
    ("dick", 4),
    ("erotic", 2),
    ("naked", 2),
    ("sexy", 2),
    ("topless", 1),
    ("fetish", 1),
    ("boobs", 1),
    ("escort", 1),
];

const HATE_TERMS: &[(&str, u32)] = &[
    ("slave", 9),
    ("married to", 7),
    ("blacks", 6),
    ("dykes", 5),
    ("of white", 4),
    ("ghetto", 2),
    ("savages", 2),
    ("rednecks", 1),
    ("queers", 1),
    ("retard", 1),
];

const MAN_FIRST: &[&str] = &[
    "Arvid", "Bastian", "Corwin", "Dorian", "Emrys", "Florian", "Gideon", "Halvard", "Ingmar", "Jasper", "Konrad",
    "Lorcan", "Matthias", "Niklas", "Osric", "Perrin", "Quillon", "Roderick", "Severin", "Tobias", "Ulrich",
    "Valentin", "Wendel", "Xavier", "Yannick", "Zoltan",
];
const WOMAN_FIRST: &[&str] = &[
    "Adelina",
    "Brigitta",
    "Cosima",
    "Delphine",
    "Elodie",
    "Fenella",
    "Gisela",
    "Henrike",
    "Isolde",
    "Johanna",
    "Katrin",
    "Liesel",
    "Marisol",
    "Noemi",
    "Ottilie",
    "Perpetua",
    "Quirina",
    "Rosalind",
    "Sieglinde",
    "Theodora",
    "Ursula",
    "Viveka",
    "Wilhelmina",
    "Yvaine",
];
const PC_MAN_FIRST: &[&str] = &[
    "Abebe", "Babajide", "Chidubem", "Dayo", "Emeka", "Farhan", "Gopal", "Harun", "Idris", "Jomo", "Kwabena", "Lwazi",
    "Mandla", "Nnamdi", "Obinna", "Pranav", "Rashid", "Sipho",
];
const PC_WOMAN_FIRST: &[&str] = &[
    "Adaeze",
    "Bisola",
    "Chiamaka",
    "Damilola",
    "Ebele",
    "Funmilayo",
    "Ganesha",
    "Halima",
    "Ifeoma",
    "Jamila",
    "Kamala",
    "Lindiwe",
    "Makena",
    "Nkechi",
    "Oyelaran",
    "Priyanka",
];
const LAST: &[&str] = &[
    "Abernathy",
    "Brandvold",
    "Castellane",
    "Dunmore",
    "Eckhardt",
    "Falkenrath",
    "Gravenor",
    "Hollingsworth",
    "Isenberg",
    "Jarnefelt",
    "Kettleby",
    "Lindqvist",
    "Marchetti",
    "Nordahl",
    "Oakenshaw",
    "Pettersen",
    "Quennell",
    "Ravenscroft",
    "Stavros",
    "Thorvaldsen",
    "Underhill",
    "Vasquez",
    "Wetherby",
    "Yardley",
    "Zellweger",
    "Adeyemi",
    "Balogun",
    "Chatterjee",
    "Desai",
    "Eze",
    "Fofanah",
    "Gupta",
    "Haidari",
    "Iwu",
    "Jaiteh",
    "Kamau",
    "Lungu",
    "Mensah",
    "Nwosu",
    "Okonkwo",
];
const MIDDLE: &[&str] = &["Maren", "Leopold", "Aurelia", "Casimir", "Benedikt", "Solveig"];

const WESTERN_COUNTRIES: &[&str] = &["GB", "US", "FR", "DE", "IT", "SE", "NL", "ES", "CA", "AU", "IE", "NO"];
const POSTCOLONIAL_COUNTRIES: &[&str] = &["IN", "NG", "KE", "BR", "MX", "PK", "EG", "PH", "JM", "GH", "ZA", "DZ"];
const MINORITY_LABELS: &[(&str, &str)] = &[
    ("African Americans", "US"),
    ("Black British", "GB"),
    ("British Asians", "GB"),
    ("Afro-Germans", "DE"),
    ("Black French", "FR"),
];

const MAN_OCCUPATIONS: &[&str] = &[
    "politician",
    "actor",
    "footballer",
    "writer",
    "singer",
    "journalist",
    "businessperson",
    "film director",
    "scientist",
    "painter",
];
const WOMAN_OCCUPATIONS: &[&str] = &[
    "actor",
    "singer",
    "writer",
    "politician",
    "journalist",
    "model",
    "athlete",
    "film actor",
    "pornographic actor",
    "television presenter",
    "scientist",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DocKind {
    Wiki,
    News,
    Spam,
}

impl DocKind {
    fn words(self) -> &'static [&'static str] {
        match self {
            DocKind::Wiki => WIKI_WORDS,
            DocKind::News => NEWS_WORDS,
            DocKind::Spam => SPAM_WORDS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarmCategory {
    /// Terms from the profanity/sexual lexicon.
    Profanity,
    /// Terms from the hate lexicon.
    Hate,
    /// Insults found in no bundled lexicon.
    Insult,
}

impl HarmCategory {
    pub const ALL: [HarmCategory; 3] = [HarmCategory::Profanity, HarmCategory::Hate, HarmCategory::Insult];

    fn pick(self, rng: &mut ChaCha8Rng) -> &'static str {
        match self {
            HarmCategory::Profanity => weighted(rng, PROFANITY_TERMS),
            HarmCategory::Hate => weighted(rng, HATE_TERMS),
            HarmCategory::Insult => INSULT_WORDS.choose(rng).expect("non-empty"),
        }
    }
}

fn weighted(rng: &mut ChaCha8Rng, items: &[(&'static str, u32)]) -> &'static str {
    let total: u32 = items.iter().map(|(_, w)| w).sum();
    let mut x = rng.gen_range(0..total);
    for (t, w) in items {
        if x < *w {
            return t;
        }
        x -= w;
    }
    unreachable!("weights cover the range")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub seed: u64,
    pub people: usize,
    pub documents: usize,
    /// Probability that a sentence mentions a person.
    pub mention_rate: f64,
    pub biased_group: DemographicGroup,
    /// Harm planting rate in sentences mentioning other people.
    pub base_harm_rate: f64,
    /// Harm planting rate in sentences mentioning the biased group.
    pub biased_harm_rate: f64,
    /// Harm planting rate in sentences without mentions.
    pub background_harm_rate: f64,
    /// Add non-English, too-short and non-document records.
    pub noise: bool,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams {
            seed: 20240833,
            people: 200,
            documents: 1000,
            mention_rate: 0.4,
            biased_group: DemographicGroup::WesternWoman,
            base_harm_rate: 0.03,
            biased_harm_rate: 0.2,
            background_harm_rate: 0.02,
            noise: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MentionPlant {
    pub sentence: usize,
    pub entity_id: String,
    pub surface: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarmPlant {
    pub sentence: usize,
    pub category: HarmCategory,
    pub term: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDocument {
    pub doc_id: String,
    pub url: String,
    pub kind: DocKind,
    pub sentences: Vec<String>,
    pub mentions: Vec<MentionPlant>,
    pub harms: Vec<HarmPlant>,
}

impl SynthDocument {
    pub fn body(&self) -> String {
        self.sentences.join(" ")
    }
}

/// Every token of every bundled lexicon term.
pub fn lexicon_tokens() -> HashSet<String> {
    use crate::strategies::lexicon::{HATEBASE_STARTER, SHUTTERSTOCK_STARTER};
    let mut out = HashSet::new();
    for text in [SHUTTERSTOCK_STARTER, HATEBASE_STARTER] {
        for line in text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
        {
            out.extend(crate::text::token_norms(line));
        }
    }
    out
}

fn uuid(rng: &mut ChaCha8Rng) -> String {
    let a: u32 = rng.gen();
    let b: u16 = rng.gen();
    let c: u16 = rng.gen::<u16>() & 0x0fff;
    let d: u16 = rng.gen::<u16>() & 0x0fff;
    let e: u64 = rng.gen::<u64>() & 0xffff_ffff_ffff;
    format!("<urn:uuid:{a:08x}-{b:04x}-4{c:03x}-8{d:03x}-{e:012x}>")
}

/// Planned group mix of the generated dataset, as fractions.
const GROUP_MIX: [(DemographicGroup, f64); 5] = [
    (DemographicGroup::WesternMan, 0.45),
    (DemographicGroup::PostColonialMan, 0.15),
    (DemographicGroup::WesternWoman, 0.22),
    (DemographicGroup::PostColonialWoman, 0.10),
    (DemographicGroup::Unknown, 0.08),
];

pub fn generate_people(seed: u64, n: usize) -> Vec<PersonRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7065_6f70_6c65);
    let mut used: HashSet<String> = HashSet::new();
    let mut out = Vec::with_capacity(n);
    let mut quotas: Vec<DemographicGroup> = Vec::new();
    for (g, share) in GROUP_MIX {
        quotas.extend(std::iter::repeat_n(g, (share * n as f64).round() as usize));
    }
    while quotas.len() < n {
        quotas.push(DemographicGroup::WesternMan);
    }
    quotas.truncate(n);
    quotas.shuffle(&mut rng);
    for (i, group) in quotas.into_iter().enumerate() {
        let (gender, first_pool) = match group {
            DemographicGroup::WesternMan => (Gender::Man, MAN_FIRST),
            DemographicGroup::PostColonialMan => (Gender::Man, PC_MAN_FIRST),
            DemographicGroup::WesternWoman => (Gender::Woman, WOMAN_FIRST),
            DemographicGroup::PostColonialWoman => (Gender::Woman, PC_WOMAN_FIRST),
            DemographicGroup::Unknown => {
                if rng.gen_bool(0.5) {
                    (Gender::Other, MAN_FIRST)
                } else {
                    (Gender::Unknown, WOMAN_FIRST)
                }
            }
        };
        let name = loop {
            let cand = format!(
                "{} {}",
                first_pool.choose(&mut rng).unwrap(),
                LAST.choose(&mut rng).unwrap()
            );
            if used.insert(cand.to_lowercase()) {
                break cand;
            }
        };
        let mut aliases = Vec::new();
        if rng.gen_bool(0.2) {
            let (first, last) = name.split_once(' ').unwrap();
            let alias = format!("{first} {} {last}", MIDDLE.choose(&mut rng).unwrap());
            if used.insert(alias.to_lowercase()) {
                aliases.push(alias);
            }
        }
        let mut ethnic_groups = Vec::new();
        let (birth_country, mut citizenship) = match group {
            DemographicGroup::WesternMan | DemographicGroup::WesternWoman => {
                let c = WESTERN_COUNTRIES.choose(&mut rng).unwrap().to_string();
                (Some(c.clone()), vec![c])
            }
            DemographicGroup::PostColonialMan | DemographicGroup::PostColonialWoman => {
                if rng.gen_bool(0.3) {
                    let (label, country) = MINORITY_LABELS.choose(&mut rng).unwrap();
                    ethnic_groups.push(label.to_string());
                    (Some(country.to_string()), vec![country.to_string()])
                } else {
                    let c = POSTCOLONIAL_COUNTRIES.choose(&mut rng).unwrap().to_string();
                    (Some(c.clone()), vec![c])
                }
            }
            DemographicGroup::Unknown => {
                if gender == Gender::Unknown || rng.gen_bool(0.5) {
                    (Some(WESTERN_COUNTRIES.choose(&mut rng).unwrap().to_string()), vec![])
                } else {
                    (None, vec![])
                }
            }
        };
        if birth_country.is_some() && rng.gen_bool(0.15) {
            citizenship.push(WESTERN_COUNTRIES.choose(&mut rng).unwrap().to_string());
        }
        citizenship.sort();
        citizenship.dedup();
        let pool = if gender == Gender::Woman {
            WOMAN_OCCUPATIONS
        } else {
            MAN_OCCUPATIONS
        };
        let n_occ = rng.gen_range(1..=2);
        let mut occupations: Vec<String> = pool.choose_multiple(&mut rng, n_occ).map(|s| s.to_string()).collect();
        occupations.sort();
        out.push(PersonRecord {
            entity_id: format!("Q{}", 1000 + i),
            primary_name: name,
            aliases,
            gender,
            birth_country,
            citizenship,
            ethnic_groups,
            occupations,
        });
    }
    out
}

fn filler(rng: &mut ChaCha8Rng, kind: DocKind, len: usize) -> Vec<String> {
    let mut words = Vec::with_capacity(len);
    for _ in 0..len {
        // a minority of content words come from another style
        let style = if rng.gen_bool(0.15) {
            *[DocKind::Wiki, DocKind::News, DocKind::Spam].choose(rng).unwrap()
        } else {
            kind
        };
        let w = if rng.gen_bool(0.45) {
            FUNCTION_WORDS.choose(rng).unwrap()
        } else {
            style.words().choose(rng).unwrap()
        };
        words.push(w.to_string());
    }
    words
}

fn render(words: &[String]) -> String {
    let mut s = words.join(" ");
    if let Some(f) = s.get(0..1) {
        let up = f.to_uppercase();
        s.replace_range(0..1, &up);
    }
    s.push('.');
    s
}

/// Replaces one filler position outside `protect` with the planted term.
fn plant_term(rng: &mut ChaCha8Rng, words: &mut Vec<String>, protect: Option<(usize, usize)>, term: &str) {
    let free: Vec<usize> = (0..words.len())
        .filter(|i| protect.is_none_or(|(s, e)| *i < s || *i >= e))
        .collect();
    let at = *free.choose(rng).expect("sentence has filler");
    let parts: Vec<String> = term.split(' ').map(str::to_owned).collect();
    words.splice(at..=at, parts);
}

/// Generates `params.documents` documents mentioning `people`.
pub fn generate_documents(people: &[PersonRecord], regions: &RegionMap, params: &SynthParams) -> Vec<SynthDocument> {
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ 0x646f_6373);
    let groups: Vec<DemographicGroup> = people.iter().map(|p| classify_group(p, regions)).collect();
    let mut out = Vec::with_capacity(params.documents);
    for d in 0..params.documents {
        let kind = *[DocKind::Wiki, DocKind::News, DocKind::Spam].choose(&mut rng).unwrap();
        let n_sent = rng.gen_range(6..=11);
        let mut doc = SynthDocument {
            doc_id: uuid(&mut rng),
            url: format!("http://site{}.example/{:?}/{d}", rng.gen_range(0..200), kind).to_lowercase(),
            kind,
            sentences: Vec::with_capacity(n_sent),
            mentions: Vec::new(),
            harms: Vec::new(),
        };
        for si in 0..n_sent {
            let len = rng.gen_range(7..=13);
            let mut words = filler(&mut rng, kind, len);
            let mut protect = None;
            let mut rate = params.background_harm_rate;
            if !people.is_empty() && rng.gen_bool(params.mention_rate) {
                let pi = rng.gen_range(0..people.len());
                let p = &people[pi];
                let surface = if !p.aliases.is_empty() && rng.gen_bool(0.3) {
                    p.aliases[0].clone()
                } else {
                    p.primary_name.clone()
                };
                let name_words: Vec<String> = surface.split(' ').map(str::to_owned).collect();
                let at = rng.gen_range(0..=words.len());
                protect = Some((at, at + name_words.len()));
                words.splice(at..at, name_words);
                rate = if groups[pi] == params.biased_group {
                    params.biased_harm_rate
                } else {
                    params.base_harm_rate
                };
                doc.mentions.push(MentionPlant {
                    sentence: si,
                    entity_id: p.entity_id.clone(),
                    surface,
                });
            }
            if rng.gen_bool(rate) {
                let category = *HarmCategory::ALL.choose(&mut rng).unwrap();
                let term = category.pick(&mut rng);
                plant_term(&mut rng, &mut words, protect, term);
                doc.harms.push(HarmPlant {
                    sentence: si,
                    category,
                    term: term.to_owned(),
                });
            }
            doc.sentences.push(render(&words));
        }
        out.push(doc);
    }
    out
}

fn html_response(doc: &SynthDocument) -> Vec<u8> {
    let mut body =
        String::from("<!DOCTYPE html>\n<html><head><title>page</title><style>p{margin:0}</style></head><body>\n");
    for s in &doc.sentences {
        body.push_str("<p>");
        body.push_str(s);
        body.push_str("</p>\n");
    }
    body.push_str("<script>var x = 1;</script></body></html>\n");
    let mut out = format!(
        "HTTP/1.1 200 OK\r\nContent-Type: text/html; charset=utf-8\r\nContent-Length: {}\r\n\r\n",
        body.len()
    )
    .into_bytes();
    out.extend_from_slice(body.as_bytes());
    out
}

/// Writes documents as WARC records: mostly WET-style `conversion` records,
/// every fifth as an HTML `response`. With `noise`, adds a `warcinfo`
/// header, `request` records, non-English pages and pages with too few
/// sentences.
pub fn write_warc<W: Write>(docs: &[SynthDocument], seed: u64, noise: bool, out: W) -> Result<W> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7761_7263);
    let mut w = WarcWriter::new(out, true);
    let date = "2024-08-15T00:00:00Z";
    if noise {
        w.write(
            &WarcRecord::new(
                "warcinfo",
                b"software: synthetic fixture\r\nformat: WARC File Format 1.1\r\n".to_vec(),
            )
            .with_header("WARC-Record-ID", &uuid(&mut rng))
            .with_header("WARC-Date", date),
        )?;
    }
    for (i, d) in docs.iter().enumerate() {
        if noise && i % 10 == 3 {
            w.write(
                &WarcRecord::new(
                    "request",
                    format!("GET / HTTP/1.1\r\nHost: {}\r\n\r\n", d.url).into_bytes(),
                )
                .with_header("WARC-Record-ID", &uuid(&mut rng))
                .with_header("WARC-Target-URI", &d.url)
                .with_header("WARC-Date", date),
            )?;
        }
        let rec = if i % 5 == 4 {
            WarcRecord::new("response", html_response(d))
                .with_header("Content-Type", "application/http; msgtype=response")
        } else {
            WarcRecord::new("conversion", d.body().into_bytes()).with_header("Content-Type", "text/plain")
        };
        w.write(
            &rec.with_header("WARC-Record-ID", &d.doc_id)
                .with_header("WARC-Target-URI", &d.url)
                .with_header("WARC-Date", date),
        )?;
        if noise && i % 50 == 7 {
            let lang = ["fr", "de", "es", "it", "pt", "nl"][(i / 50) % 6];
            let text = profile_text(lang).expect("bundled profile");
            let start = rng.gen_range(0..text.len() / 2);
            let start = (start..text.len()).find(|&j| text.is_char_boundary(j)).unwrap();
            w.write(
                &WarcRecord::new("conversion", text.as_bytes()[start..].to_vec())
                    .with_header("WARC-Record-ID", &uuid(&mut rng))
                    .with_header("WARC-Target-URI", &format!("http://{lang}.example/{i}"))
                    .with_header("WARC-Date", date),
            )?;
        }
        if noise && i % 50 == 21 {
            let short: Vec<String> = (0..3).map(|_| render(&filler(&mut rng, d.kind, 8))).collect();
            w.write(
                &WarcRecord::new("conversion", short.join(" ").into_bytes())
                    .with_header("WARC-Record-ID", &uuid(&mut rng))
                    .with_header("WARC-Target-URI", &format!("http://short.example/{i}"))
                    .with_header("WARC-Date", date),
            )?;
        }
    }
    Ok(w.into_inner())
}

/// `label TAB sentence` lines: positives contain a term from one of
/// `categories`, negatives are plain filler of every style.
pub fn toxicity_corpus(seed: u64, categories: &[HarmCategory], per_class: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kinds = [DocKind::Wiki, DocKind::News, DocKind::Spam];
    let mut lines = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let kind = kinds[i % 3];
        let len = rng.gen_range(7..=15);
        let mut words = filler(&mut rng, kind, len);
        let label = if i % 2 == 0 {
            let cat = categories.choose(&mut rng).expect("at least one category");
            for _ in 0..rng.gen_range(1..=2) {
                let term = cat.pick(&mut rng);
                plant_term(&mut rng, &mut words, None, term);
            }
            1
        } else {
            0
        };
        lines.push(format!("{label}\t{}", render(&words)));
    }
    lines.join("\n") + "\n"
}

/// `label TAB document` lines: documents of `positive` styles against
/// documents of `negative` styles.
pub fn quality_corpus(seed: u64, positive: &[DocKind], negative: &[DocKind], per_class: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut lines = Vec::with_capacity(2 * per_class);
    for i in 0..2 * per_class {
        let (label, pool) = if i % 2 == 0 { (1, positive) } else { (0, negative) };
        let kind = *pool.choose(&mut rng).expect("non-empty style list");
        let n = rng.gen_range(6..=11);
        let doc: Vec<String> = (0..n)
            .map(|_| {
                let len = rng.gen_range(7..=13);
                render(&filler(&mut rng, kind, len))
            })
            .collect();
        lines.push(format!("{label}\t{}", doc.join(" ")));
    }
    lines.join("\n") + "\n"
}

/// Files written by [`write_fixture`], relative to its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureLayout {
    pub config: String,
    pub people: String,
    pub corpus: Vec<String>,
    pub truth: String,
}

pub const FIXTURE_SHARDS: usize = 2;

/// Writes a complete runnable fixture: People Dataset, a two-shard WARC
/// corpus, training corpora, ground truth and a config file.
pub fn write_fixture(dir: &Path, params: &SynthParams) -> Result<FixtureLayout> {
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    mk(&dir.join("corpus"))?;
    mk(&dir.join("train"))?;
    let write = |rel: &str, bytes: &[u8]| {
        let p = dir.join(rel);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    };

    let people = generate_people(params.seed, params.people);
    let mut tsv = String::from(
        "# entity_id\tprimary_name\taliases\tgender\tbirth_country\tcitizenship\tethnic_groups\toccupations\n",
    );
    for p in &people {
        tsv.push_str(&p.to_line());
        tsv.push('\n');
    }
    write("people.tsv", tsv.as_bytes())?;

    let docs = generate_documents(&people, &RegionMap::default_map(), params);
    let per = docs.len().div_ceil(FIXTURE_SHARDS).max(1);
    let mut corpus = Vec::new();
    for (i, chunk) in docs.chunks(per).enumerate() {
        let rel = format!("corpus/part-{i:05}.warc.gz");
        let bytes = write_warc(chunk, params.seed.wrapping_add(i as u64), params.noise, Vec::new())?;
        write(&rel, &bytes)?;
        corpus.push(rel);
    }
    let mut truth = String::new();
    for d in &docs {
        truth.push_str(&serde_json::to_string(d)?);
        truth.push('\n');
    }
    write("truth.jsonl", truth.as_bytes())?;

    let s = params.seed;
    write(
        "train/toxicity.tsv",
        toxicity_corpus(s ^ 1, &HarmCategory::ALL, 1500).as_bytes(),
    )?;
    write(
        "train/hate.tsv",
        toxicity_corpus(s ^ 2, &[HarmCategory::Hate, HarmCategory::Insult], 1500).as_bytes(),
    )?;
    write(
        "train/profanity.tsv",
        toxicity_corpus(s ^ 3, &[HarmCategory::Profanity], 1500).as_bytes(),
    )?;
    write(
        "train/quality_wiki.tsv",
        quality_corpus(s ^ 4, &[DocKind::Wiki], &[DocKind::News, DocKind::Spam], 600).as_bytes(),
    )?;
    write(
        "train/quality_webtext.tsv",
        quality_corpus(s ^ 5, &[DocKind::Wiki, DocKind::News], &[DocKind::Spam], 600).as_bytes(),
    )?;
    write("config.toml", fixture_config(params).as_bytes())?;
    Ok(FixtureLayout {
        config: "config.toml".into(),
        people: "people.tsv".into(),
        corpus,
        truth: "truth.jsonl".into(),
    })
}

/// Run configuration matching the files of [`write_fixture`].
pub fn fixture_config(params: &SynthParams) -> String {
    format!(
        r#"# Synthetic fixture run. Paths are relative to this file.
run_id = "synthetic"
work_dir = "work"
output_dir = "out"

[seeds]
sampling = {sampling}
training = {training}

[kb]
people = "people.tsv"

[corpus]
inputs = ["corpus/*.warc.gz"]
format = "warc"
samples = 5
sample_size = {sample_size}
calibration_size = {calibration}

[linking]
threshold = 0.85

[training]
dim = 1000
epochs = 10
learning_rate = 0.5

[strategies]
enabled = ["shutterstock", "hatebase", "perspective", "fasttext", "profanity", "quality_wiki", "quality_webtext"]

[strategies.perspective]
backend = "model"
train = "train/toxicity.tsv"
threshold = 0.8

[strategies.fasttext]
train = "train/hate.tsv"
threshold = 0.5

[strategies.profanity]
train = "train/profanity.tsv"
threshold = 0.8

[strategies.quality_wiki]
train = "train/quality_wiki.tsv"
target_removal = 0.15

[strategies.quality_webtext]
train = "train/quality_webtext.tsv"
target_removal = 0.45

[audit]
top_k = 5
"#,
        sampling = params.seed.wrapping_add(101),
        training = params.seed.wrapping_add(202),
        sample_size = (params.documents * 3 / 20).max(1),
        calibration = (params.documents * 3 / 20).max(1),
    )
}

/// Group of every person, in dataset order.
pub fn people_groups(people: &[PersonRecord], regions: &RegionMap) -> Vec<DemographicGroup> {
    people.iter().map(|p| classify_group(p, regions)).collect()
}

/// Distinct entity ids planted in `docs`.
pub fn planted_entities(docs: &[SynthDocument]) -> BTreeSet<String> {
    docs.iter()
        .flat_map(|d| d.mentions.iter().map(|m| m.entity_id.clone()))
        .collect()
}
