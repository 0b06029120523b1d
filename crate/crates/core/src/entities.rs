//! Four-class entity profiles and their count-based cosine similarity.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::LazyLock;

use chrono::NaiveDate;
use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityMention {
    pub surface: String,
    #[serde(rename = "label")]
    pub ner_label: String,
}

impl EntityMention {
    pub fn new(surface: impl Into<String>, ner_label: impl Into<String>) -> Self {
        EntityMention {
            surface: surface.into(),
            ner_label: ner_label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityClass {
    Geo,
    Org,
    Date,
    Qty,
}

impl EntityClass {
    pub const ALL: [EntityClass; 4] = [EntityClass::Geo, EntityClass::Org, EntityClass::Date, EntityClass::Qty];

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EntityClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EntityClass::Geo => "GEO",
            EntityClass::Org => "ORG",
            EntityClass::Date => "DATE",
            EntityClass::Qty => "QTY",
        })
    }
}

/// Maps a tagger label onto one of the four classes; `None` means the
/// mention is dropped.
pub fn classify_label(ner_label: &str) -> Option<EntityClass> {
    match ner_label.trim() {
        "LOC" | "GPE" => Some(EntityClass::Geo),
        "ORG" | "PERSON" | "FAC" | "EVENT" | "NORP" | "PRODUCT" | "WORK_OF_ART" => Some(EntityClass::Org),
        "DATE" | "TIME" => Some(EntityClass::Date),
        "QUANTITY" | "ORDINAL" | "CARDINAL" => Some(EntityClass::Qty),
        _ => None,
    }
}

/// Multiset of lowercased surfaces.
pub type EntityCounts = BTreeMap<String, u32>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntityProfile {
    classes: [EntityCounts; 4],
}

impl EntityProfile {
    pub fn class(&self, class: EntityClass) -> &EntityCounts {
        &self.classes[class.index()]
    }

    pub fn add(&mut self, class: EntityClass, surface: &str) {
        let key = surface.trim().to_lowercase();
        if !key.is_empty() {
            *self.classes[class.index()].entry(key).or_insert(0) += 1;
        }
    }

    pub fn is_empty(&self) -> bool {
        self.classes.iter().all(BTreeMap::is_empty)
    }
}

/// Routes mentions through [`classify_label`] and counts lowercased
/// surfaces. A publish date adds one DATE token in `YYYY-MM-DD` form.
pub fn build_profile(mentions: &[EntityMention], publish_date: Option<NaiveDate>) -> EntityProfile {
    let mut profile = EntityProfile::default();
    for m in mentions {
        if let Some(class) = classify_label(&m.ner_label) {
            profile.add(class, &m.surface);
        }
    }
    if let Some(date) = publish_date {
        profile.add(EntityClass::Date, &date.format("%Y-%m-%d").to_string());
    }
    profile
}

/// Cosine between two count vectors indexed by the union of their keys.
/// Returns 0 when either side is empty.
pub fn entity_cosine(a: &EntityCounts, b: &EntityCounts) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let (small, large) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let dot: f64 = small
        .iter()
        .filter_map(|(k, &x)| large.get(k).map(|&y| f64::from(x) * f64::from(y)))
        .sum();
    if dot <= 0.0 {
        return 0.0;
    }
    let norm = |m: &EntityCounts| m.values().map(|&c| f64::from(c) * f64::from(c)).sum::<f64>().sqrt();
    let score = dot / (norm(a) * norm(b));
    score.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EntityFeatureVector {
    pub geo: f64,
    pub org: f64,
    pub date: f64,
    pub qty: f64,
}

impl EntityFeatureVector {
    pub fn as_array(&self) -> [f64; 4] {
        [self.geo, self.org, self.date, self.qty]
    }
}

pub fn feature_vector(a: &EntityProfile, b: &EntityProfile) -> EntityFeatureVector {
    let cos = |c| entity_cosine(a.class(c), b.class(c));
    EntityFeatureVector {
        geo: cos(EntityClass::Geo),
        org: cos(EntityClass::Org),
        date: cos(EntityClass::Date),
        qty: cos(EntityClass::Qty),
    }
}

/// Lowercased surface → tagger label.
#[derive(Debug, Clone, Default)]
pub struct Gazetteer {
    entries: HashMap<String, String>,
    max_words: usize,
}

impl Gazetteer {
    pub fn new<I, S, L>(entries: I) -> Self
    where
        I: IntoIterator<Item = (S, L)>,
        S: AsRef<str>,
        L: Into<String>,
    {
        let mut gaz = Gazetteer::default();
        for (surface, label) in entries {
            let key = normalize_phrase(surface.as_ref());
            if key.is_empty() {
                continue;
            }
            gaz.max_words = gaz.max_words.max(key.split(' ').count());
            gaz.entries.insert(key, label.into());
        }
        gaz
    }

    /// Reads a `surface,label` CSV with header.
    pub fn load(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut rows = Vec::new();
        for record in reader.records() {
            let record = record?;
            match (record.get(0), record.get(1)) {
                (Some(s), Some(l)) => rows.push((s.to_owned(), l.trim().to_owned())),
                _ => return Err(Error::format("gazetteer", path, "expected `surface,label` rows")),
            }
        }
        Ok(Gazetteer::new(rows))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn normalize_phrase(s: &str) -> String {
    WORD.find_iter(&s.to_lowercase())
        .map(|m| m.as_str().to_owned())
        .collect::<Vec<_>>()
        .join(" ")
}

static WORD: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"[\p{L}\p{N}]+").unwrap());
static DATE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"\b(?:\d{4}-\d{2}-\d{2}|\d{1,2}/\d{1,2}/\d{2,4})\b").unwrap());
static NUMERAL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\b\d+(?:[.,]\d+)*\b").unwrap());
static ORDINAL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(
        r"(?i)\b(?:first|second|third|fourth|fifth|sixth|seventh|eighth|ninth|tenth|\d+(?:st|nd|rd|th))\b",
    )
    .unwrap()
});

/// Pattern-based English extractor used when no pre-extracted entities are
/// available: ISO and `d/m/y` dates, numerals and ordinals, and longest-match
/// gazetteer lookup for everything else. Mentions come out in text order.
pub fn fallback_extract(doc: &Document, gazetteer: &Gazetteer) -> Vec<EntityMention> {
    let text = doc.full_text();
    let mut found: Vec<(usize, EntityMention)> = Vec::new();
    let mut taken: Vec<(usize, usize)> = Vec::new();
    let overlaps = |taken: &[(usize, usize)], s: usize, e: usize| taken.iter().any(|&(ts, te)| s < te && ts < e);

    for m in DATE.find_iter(&text) {
        found.push((m.start(), EntityMention::new(m.as_str(), "DATE")));
        taken.push((m.start(), m.end()));
    }
    for m in ORDINAL.find_iter(&text) {
        if !overlaps(&taken, m.start(), m.end()) {
            found.push((m.start(), EntityMention::new(m.as_str(), "ORDINAL")));
            taken.push((m.start(), m.end()));
        }
    }
    for m in NUMERAL.find_iter(&text) {
        if !overlaps(&taken, m.start(), m.end()) {
            found.push((m.start(), EntityMention::new(m.as_str(), "CARDINAL")));
            taken.push((m.start(), m.end()));
        }
    }

    if !gazetteer.is_empty() {
        let lower = text.to_lowercase();
        let words: Vec<regex::Match<'_>> = WORD.find_iter(&lower).collect();
        let mut i = 0;
        while i < words.len() {
            let longest = (1..=gazetteer.max_words.min(words.len() - i)).rev().find_map(|n| {
                let phrase = words[i..i + n].iter().map(|w| w.as_str()).collect::<Vec<_>>().join(" ");
                gazetteer.entries.get(&phrase).map(|label| (n, phrase, label))
            });
            match longest {
                Some((n, phrase, label)) => {
                    let (s, e) = (words[i].start(), words[i + n - 1].end());
                    if !overlaps(&taken, s, e) {
                        found.push((s, EntityMention::new(phrase, label.clone())));
                    }
                    i += n;
                }
                None => i += 1,
            }
        }
    }

    found.sort_by_key(|(pos, _)| *pos);
    found.into_iter().map(|(_, m)| m).collect()
}

#[derive(Debug, Serialize, Deserialize)]
struct EntitiesLine {
    id: String,
    mentions: Vec<EntityMention>,
}

/// Reads the pre-extracted entities JSON-lines file into doc id → mentions.
pub fn load_entities(path: &Path) -> Result<BTreeMap<String, Vec<EntityMention>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BTreeMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: EntitiesLine = serde_json::from_str(&line)
            .map_err(|e| Error::format("entities", path, format!("line {}: {e}", idx + 1)))?;
        out.insert(parsed.id, parsed.mentions);
    }
    Ok(out)
}

pub fn write_entities(path: &Path, entities: &BTreeMap<String, Vec<EntityMention>>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for (id, mentions) in entities {
        let line = EntitiesLine {
            id: id.clone(),
            mentions: mentions.clone(),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}
