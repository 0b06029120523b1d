//! Deterministic synthetic corpus with a known similarity structure.
//!
//! Every pair starts from a document `A` on some topic. Its partner `B`
//! copies each content word from `A` with probability `v` (otherwise it draws
//! from a different topic) and each entity slot with probability `e`
//! (otherwise a fresh entity). The raw label is
//! `4 - 3 * clip(0.5 * v_hat + 0.5 * e_hat + noise)`, where `v_hat` and `e_hat`
//! are the realized copy fractions, so roughly half of the signal is carried
//! by named entities, dates and numbers.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{self, ArticlePair, Document, Split, SubScores};
use crate::entities::{self, EntityMention};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureConfig {
    pub pairs: usize,
    pub topics: usize,
    pub words_per_topic: usize,
    pub content_words: usize,
    pub filler_words: usize,
    pub places: usize,
    pub orgs: usize,
    /// Half-width of the uniform label noise on the normalized scale.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FixtureConfig {
    fn default() -> Self {
        FixtureConfig {
            pairs: 2000,
            topics: 40,
            words_per_topic: 120,
            content_words: 60,
            filler_words: 20,
            places: 400,
            orgs: 400,
            noise: 0.05,
            seed: 7,
        }
    }
}

/// Language pairs and their sampling weights.
const LANG_MIX: [((&str, &str), u32); 7] = [
    (("en", "en"), 50),
    (("de", "de"), 14),
    (("es", "es"), 10),
    (("de", "en"), 14),
    (("en", "es"), 6),
    (("ar", "ar"), 3),
    (("ar", "en"), 3),
];

fn filler(lang: &str) -> &'static [&'static str] {
    match lang {
        "de" => &["der", "die", "das", "und", "ist", "nicht", "mit", "auf", "wurde", "nach", "bei", "sagte"],
        "es" => &["el", "la", "de", "que", "y", "en", "los", "por", "con", "para", "fue", "dijo"],
        "ar" => &["في", "من", "على", "إلى", "أن", "عن", "مع", "قال", "هذا", "التي"],
        _ => &["the", "of", "and", "to", "in", "was", "for", "on", "with", "that", "said", "after"],
    }
}

const ONSETS: [&str; 16] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "tr"];
const NUCLEI: [&str; 6] = ["a", "e", "i", "o", "u", "ai"];
const PLACE_PREFIX: [&str; 4] = ["Port", "New", "Lake", "Upper"];
const ORG_SUFFIX: [&str; 4] = ["Holdings", "Party", "Institute", "Union"];

struct WordMint {
    used: HashSet<String>,
}

impl WordMint {
    fn word(&mut self, rng: &mut ChaCha8Rng, syllables: usize) -> String {
        loop {
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), NUCLEI.choose(rng).unwrap()))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn name(&mut self, rng: &mut ChaCha8Rng) -> String {
        let mut w = self.word(rng, 2);
        w[..1].make_ascii_uppercase();
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Place(usize),
    Org(usize),
    Date(NaiveDate),
    Qty(u32),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Latent {
    pub topic: usize,
    pub vocab_overlap: f64,
    pub entity_overlap: f64,
}

#[derive(Debug, Clone)]
pub struct Fixture {
    pub pairs: Vec<ArticlePair>,
    pub docs: BTreeMap<String, Document>,
    pub entities: BTreeMap<String, Vec<EntityMention>>,
    /// `(surface, tagger label)` entries covering every place and organization.
    pub gazetteer: Vec<(String, String)>,
    pub latent: BTreeMap<String, Latent>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixturePaths {
    pub pairs: PathBuf,
    pub docs: PathBuf,
    pub entities: PathBuf,
    pub gazetteer: PathBuf,
}

impl FixturePaths {
    pub fn in_dir(dir: &Path) -> Self {
        FixturePaths {
            pairs: dir.join("pairs.csv"),
            docs: dir.join("docs.jsonl"),
            entities: dir.join("entities.jsonl"),
            gazetteer: dir.join("gazetteer.csv"),
        }
    }
}

struct World {
    topics: Vec<Vec<String>>,
    places: Vec<(String, &'static str)>,
    orgs: Vec<(String, &'static str)>,
    base_date: NaiveDate,
}

impl World {
    fn build(cfg: &FixtureConfig, rng: &mut ChaCha8Rng) -> World {
        let mut mint = WordMint { used: HashSet::new() };
        let topics = (0..cfg.topics)
            .map(|_| (0..cfg.words_per_topic).map(|_| mint.word(rng, 3)).collect())
            .collect();
        let places = (0..cfg.places)
            .map(|i| {
                let name = mint.name(rng);
                match i % 3 {
                    0 => (format!("{} {name}", PLACE_PREFIX[i / 3 % PLACE_PREFIX.len()]), "GPE"),
                    1 => (name, "GPE"),
                    _ => (name, "LOC"),
                }
            })
            .collect();
        let orgs = (0..cfg.orgs)
            .map(|i| {
                let name = mint.name(rng);
                match i % 3 {
                    0 => (format!("{name} {}", ORG_SUFFIX[i / 3 % ORG_SUFFIX.len()]), "ORG"),
                    1 => (format!("{} {name}", mint.name(rng)), "PERSON"),
                    _ => (name, "ORG"),
                }
            })
            .collect();
        World {
            topics,
            places,
            orgs,
            base_date: NaiveDate::from_ymd_opt(2020, 1, 1).unwrap(),
        }
    }

    fn random_date(&self, rng: &mut ChaCha8Rng) -> NaiveDate {
        self.base_date + Days::new(rng.random_range(0..366))
    }

    fn fresh_slots(&self, rng: &mut ChaCha8Rng) -> Vec<Slot> {
        let places = rand::seq::index::sample(rng, self.places.len(), 4);
        let orgs = rand::seq::index::sample(rng, self.orgs.len(), 4);
        let mut slots: Vec<Slot> = places.into_iter().map(Slot::Place).collect();
        slots.extend(orgs.into_iter().map(Slot::Org));
        slots.push(Slot::Date(self.random_date(rng)));
        slots.push(Slot::Qty(rng.random_range(2..5000)));
        slots.push(Slot::Qty(rng.random_range(2..5000)));
        slots
    }

    fn replacement(&self, slot: Slot, rng: &mut ChaCha8Rng) -> Slot {
        loop {
            let fresh = match slot {
                Slot::Place(_) => Slot::Place(rng.random_range(0..self.places.len())),
                Slot::Org(_) => Slot::Org(rng.random_range(0..self.orgs.len())),
                Slot::Date(_) => Slot::Date(self.random_date(rng)),
                Slot::Qty(_) => Slot::Qty(rng.random_range(2..5000)),
            };
            if fresh != slot {
                return fresh;
            }
        }
    }

    fn mention(&self, slot: Slot) -> EntityMention {
        match slot {
            Slot::Place(i) => EntityMention::new(self.places[i].0.clone(), self.places[i].1),
            Slot::Org(i) => EntityMention::new(self.orgs[i].0.clone(), self.orgs[i].1),
            Slot::Date(d) => EntityMention::new(d.format("%Y-%m-%d").to_string(), "DATE"),
            Slot::Qty(q) => EntityMention::new(q.to_string(), "CARDINAL"),
        }
    }

    fn render(
        &self,
        id: String,
        lang: &str,
        content: &[String],
        slots: &[Slot],
        cfg: &FixtureConfig,
        rng: &mut ChaCha8Rng,
    ) -> (Document, Vec<EntityMention>) {
        let mentions: Vec<EntityMention> = slots.iter().map(|&s| self.mention(s)).collect();
        let mut chunks: Vec<String> = content.to_vec();
        chunks.extend(mentions.iter().map(|m| m.surface.clone()));
        let fill = filler(lang);
        chunks.extend((0..cfg.filler_words).map(|_| fill.choose(rng).unwrap().to_string()));
        chunks.shuffle(rng);
        let body = chunks
            .chunks(12)
            .map(|s| format!("{}.", s.join(" ")))
            .collect::<Vec<_>>()
            .join(" ");
        let mut title: Vec<String> = content.iter().take(6).cloned().collect();
        title.push(mentions[0].surface.clone());
        let publish_date = slots.iter().find_map(|s| match s {
            Slot::Date(d) => Some(*d),
            _ => None,
        });
        // text order over title then body, as a tagger would emit them
        let mut ordered = vec![mentions[0].clone()];
        let mut in_body = mentions.clone();
        in_body.sort_by_key(|m| body.find(&m.surface).unwrap_or(usize::MAX));
        ordered.extend(in_body);
        let doc = Document {
            id,
            lang: lang.to_owned(),
            title: title.join(" "),
            body,
            publish_date,
        };
        (doc, ordered)
    }
}

/// Builds the corpus. Identical configs give identical output.
pub fn generate(cfg: &FixtureConfig) -> Result<Fixture> {
    if cfg.topics < 2 || cfg.words_per_topic == 0 || cfg.content_words == 0 || cfg.places < 8 || cfg.orgs < 8 {
        return Err(Error::domain("fixture config", "need >= 2 topics, words, and >= 8 places and orgs"));
    }
    if !(0.0..0.5).contains(&cfg.noise) {
        return Err(Error::domain("fixture noise", format!("{} not in [0, 0.5)", cfg.noise)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let world = World::build(cfg, &mut rng);
    let lang_weights: Vec<u32> = LANG_MIX.iter().map(|(_, w)| *w).collect();
    let lang_dist = rand::distr::weighted::WeightedIndex::new(&lang_weights)
        .map_err(|e| Error::domain("language weights", e.to_string()))?;

    let mut fixture = Fixture {
        pairs: Vec::with_capacity(cfg.pairs),
        docs: BTreeMap::new(),
        entities: BTreeMap::new(),
        gazetteer: world
            .places
            .iter()
            .chain(&world.orgs)
            .map(|(s, l)| (s.clone(), (*l).to_owned()))
            .collect(),
        latent: BTreeMap::new(),
    };
    let mut next_id: u64 = 1_500_000_000;
    for _ in 0..cfg.pairs {
        let ((lang_a, lang_b), _) = LANG_MIX[rng.sample(&lang_dist)];
        let (lang_a, lang_b) = if rng.random_bool(0.5) { (lang_a, lang_b) } else { (lang_b, lang_a) };
        let topic = rng.random_range(0..cfg.topics);
        let other = (topic + rng.random_range(1..cfg.topics)) % cfg.topics;
        let v: f64 = rng.random();
        let e: f64 = rng.random();

        let content_a: Vec<String> = (0..cfg.content_words)
            .map(|_| world.topics[topic].choose(&mut rng).unwrap().clone())
            .collect();
        let mut copied_words = 0usize;
        let content_b: Vec<String> = (0..cfg.content_words)
            .map(|_| {
                if rng.random_bool(v) {
                    copied_words += 1;
                    content_a.choose(&mut rng).unwrap().clone()
                } else {
                    world.topics[other].choose(&mut rng).unwrap().clone()
                }
            })
            .collect();
        let slots_a = world.fresh_slots(&mut rng);
        let mut copied_slots = 0usize;
        let slots_b: Vec<Slot> = slots_a
            .iter()
            .map(|&s| {
                if rng.random_bool(e) {
                    copied_slots += 1;
                    s
                } else {
                    world.replacement(s, &mut rng)
                }
            })
            .collect();

        let v_hat = copied_words as f64 / cfg.content_words as f64;
        let e_hat = copied_slots as f64 / slots_a.len() as f64;
        let noise = if cfg.noise > 0.0 { rng.random_range(-cfg.noise..cfg.noise) } else { 0.0 };
        let s = (0.5 * v_hat + 0.5 * e_hat + noise).clamp(0.0, 1.0);
        let raw = ((4.0 - 3.0 * s) * 1e6).round() / 1e6;

        let id_a = next_id.to_string();
        let id_b = (next_id + 1).to_string();
        next_id += 2;
        let (doc_a, ents_a) = world.render(id_a.clone(), lang_a, &content_a, &slots_a, cfg, &mut rng);
        let (doc_b, ents_b) = world.render(id_b.clone(), lang_b, &content_b, &slots_b, cfg, &mut rng);
        let pair_id = format!("{id_a}_{id_b}");
        fixture.latent.insert(
            pair_id.clone(),
            Latent {
                topic,
                vocab_overlap: v_hat,
                entity_overlap: e_hat,
            },
        );
        fixture.pairs.push(ArticlePair {
            pair_id,
            doc_a: id_a.clone(),
            doc_b: id_b.clone(),
            langs: (lang_a.to_owned(), lang_b.to_owned()),
            overall_raw: Some(raw),
            sub_scores: SubScores::default(),
            split: Split::Train,
        });
        fixture.entities.insert(id_a.clone(), ents_a);
        fixture.entities.insert(id_b.clone(), ents_b);
        fixture.docs.insert(id_a, doc_a);
        fixture.docs.insert(id_b, doc_b);
    }
    Ok(fixture)
}

impl Fixture {
    pub fn languages(&self) -> BTreeSet<&str> {
        self.docs.values().map(|d| d.lang.as_str()).collect()
    }

    pub fn write(&self, dir: &Path) -> Result<FixturePaths> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let paths = FixturePaths::in_dir(dir);
        corpus::write_pairs(&paths.pairs, &self.pairs)?;
        corpus::write_documents(&paths.docs, self.docs.values())?;
        entities::write_entities(&paths.entities, &self.entities)?;
        let mut w = csv::Writer::from_path(&paths.gazetteer)?;
        w.write_record(["surface", "label"])?;
        for (s, l) in &self.gazetteer {
            w.write_record([s, l])?;
        }
        w.flush().map_err(|e| Error::io(&paths.gazetteer, e))?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::entities::{fallback_extract, Gazetteer};

    fn small() -> FixtureConfig {
        FixtureConfig {
            pairs: 60,
            ..FixtureConfig::default()
        }
    }

    #[test]
    fn deterministic_and_well_formed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.pairs, b.pairs);
        assert_eq!(a.docs, b.docs);
        assert_eq!(a.docs.len(), 120);
        for p in &a.pairs {
            let raw = p.overall_raw.unwrap();
            assert!((1.0..=4.0).contains(&raw));
            assert_eq!(corpus::split_pair_id(&p.pair_id), Some((p.doc_a.as_str(), p.doc_b.as_str())));
        }
        let other = generate(&FixtureConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.pairs, other.pairs);
    }

    #[test]
    fn roundtrips_through_loaders() {
        let fx = generate(&small()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = fx.write(dir.path()).unwrap();
        let corpus = corpus::load_corpus(&paths.pairs, &paths.docs).unwrap();
        assert!(corpus.report.errors.is_empty());
        assert_eq!(corpus.pairs, fx.pairs);
        assert_eq!(corpus.docs, fx.docs);
        assert_eq!(entities::load_entities(&paths.entities).unwrap(), fx.entities);
        assert_eq!(Gazetteer::load(&paths.gazetteer).unwrap().len(), fx.gazetteer.len());
    }

    #[test]
    fn fallback_extractor_recovers_english_mentions() {
        let fx = generate(&small()).unwrap();
        let gaz = Gazetteer::new(fx.gazetteer.iter().map(|(s, l)| (s.as_str(), l.clone())));
        let doc = fx.docs.values().find(|d| d.lang == "en").unwrap();
        let found = fallback_extract(doc, &gaz);
        assert_eq!(found.len(), fx.entities[&doc.id].len());
    }
}
