//! Article pairs and documents: loading, filtering, label normalization and
//! the train/dev split.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text;

pub const PAIRS_HEADER: [&str; 10] = [
    "pair_id",
    "lang1",
    "lang2",
    "overall",
    "geography",
    "entities",
    "time",
    "narrative",
    "style",
    "tone",
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub lang: String,
    pub title: String,
    pub body: String,
    pub publish_date: Option<NaiveDate>,
}

impl Document {
    /// Title and body joined by a single space.
    pub fn full_text(&self) -> String {
        match (self.title.is_empty(), self.body.is_empty()) {
            (true, _) => self.body.clone(),
            (false, true) => self.title.clone(),
            (false, false) => format!("{} {}", self.title, self.body),
        }
    }

    pub fn token_count(&self) -> usize {
        text::token_count(&self.title) + text::token_count(&self.body)
    }
}

/// Unordered language pair, stored in lexicographic order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LangPair(String, String);

impl LangPair {
    pub fn new(a: &str, b: &str) -> Self {
        let (a, b) = (a.trim().to_lowercase(), b.trim().to_lowercase());
        if a <= b {
            LangPair(a, b)
        } else {
            LangPair(b, a)
        }
    }

    pub fn first(&self) -> &str {
        &self.0
    }

    pub fn second(&self) -> &str {
        &self.1
    }

    pub fn is_monolingual(&self) -> bool {
        self.0 == self.1
    }

    pub fn involves(&self, lang: &str) -> bool {
        self.0 == lang || self.1 == lang
    }
}

impl fmt::Display for LangPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.0, self.1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Unlabeled,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Unlabeled => "unlabeled",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "dev" => Some(Split::Dev),
            "test" => Some(Split::Test),
            "unlabeled" => Some(Split::Unlabeled),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SubScores {
    pub geography: Option<f64>,
    pub entities: Option<f64>,
    pub time: Option<f64>,
    pub narrative: Option<f64>,
    pub style: Option<f64>,
    pub tone: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArticlePair {
    pub pair_id: String,
    pub doc_a: String,
    pub doc_b: String,
    /// Languages as given in the pairs file (`lang1`, `lang2`).
    pub langs: (String, String),
    pub overall_raw: Option<f64>,
    pub sub_scores: SubScores,
    pub split: Split,
}

impl ArticlePair {
    pub fn lang_pair(&self) -> LangPair {
        LangPair::new(&self.langs.0, &self.langs.1)
    }

    pub fn label(&self) -> Option<NormalizedLabel> {
        self.overall_raw.and_then(|x| normalize_label(x).ok())
    }
}

/// Similarity on `[0, 1]`, 1 meaning most similar.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct NormalizedLabel(f64);

impl NormalizedLabel {
    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(NormalizedLabel(value))
        } else {
            Err(Error::domain("normalized label", format!("{value} not in [0, 1]")))
        }
    }

    /// Clips into `[0, 1]`; NaN maps to 0.
    pub fn clipped(value: f64) -> Self {
        if value.is_nan() {
            NormalizedLabel(0.0)
        } else {
            NormalizedLabel(value.clamp(0.0, 1.0))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Maps the raw scale (1 = most similar, 4 = least) onto `[0, 1]` via `(4 - x) / 3`.
pub fn normalize_label(x: f64) -> Result<NormalizedLabel> {
    if !(1.0..=4.0).contains(&x) {
        return Err(Error::domain("raw label", format!("{x} not in [1, 4]")));
    }
    Ok(NormalizedLabel((4.0 - x) / 3.0))
}

pub fn denormalize_label(v: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&v) {
        return Err(Error::domain("normalized label", format!("{v} not in [0, 1]")));
    }
    Ok(4.0 - 3.0 * v)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowError {
    pub file: String,
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct LoadReport {
    pub errors: Vec<RowError>,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub pairs: Vec<ArticlePair>,
    pub docs: BTreeMap<String, Document>,
    pub report: LoadReport,
}

impl Corpus {
    pub fn doc(&self, id: &str) -> Result<&Document> {
        self.docs.get(id).ok_or_else(|| Error::UnknownDocument(id.to_owned()))
    }
}

/// Splits `"<doc_a>_<doc_b>"` at its single underscore.
pub fn split_pair_id(pair_id: &str) -> Option<(&str, &str)> {
    let mut parts = pair_id.split('_');
    match (parts.next(), parts.next(), parts.next()) {
        (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => Some((a, b)),
        _ => None,
    }
}

fn parse_score(field: &str, name: &str) -> std::result::Result<Option<f64>, String> {
    let field = field.trim();
    if field.is_empty() {
        return Ok(None);
    }
    let v: f64 = field
        .parse()
        .map_err(|_| format!("{name}: `{field}` is not a number"))?;
    if !(1.0..=4.0).contains(&v) {
        return Err(format!("{name}: {v} not in [1, 4]"));
    }
    Ok(Some(v))
}

fn parse_pair_record(record: &csv::StringRecord) -> std::result::Result<ArticlePair, String> {
    if record.len() != PAIRS_HEADER.len() {
        return Err(format!("expected {} fields, found {}", PAIRS_HEADER.len(), record.len()));
    }
    let pair_id = record[0].trim().to_owned();
    let (doc_a, doc_b) =
        split_pair_id(&pair_id).ok_or_else(|| format!("pair_id `{pair_id}` is not of the form <doc>_<doc>"))?;
    if doc_a == doc_b {
        return Err(format!("pair `{pair_id}` pairs a document with itself"));
    }
    let (lang1, lang2) = (record[1].trim(), record[2].trim());
    if lang1.is_empty() || lang2.is_empty() {
        return Err("missing language code".into());
    }
    let overall_raw = parse_score(&record[3], "overall")?;
    let sub_scores = SubScores {
        geography: parse_score(&record[4], "geography")?,
        entities: parse_score(&record[5], "entities")?,
        time: parse_score(&record[6], "time")?,
        narrative: parse_score(&record[7], "narrative")?,
        style: parse_score(&record[8], "style")?,
        tone: parse_score(&record[9], "tone")?,
    };
    Ok(ArticlePair {
        doc_a: doc_a.to_owned(),
        doc_b: doc_b.to_owned(),
        pair_id,
        langs: (lang1.to_owned(), lang2.to_owned()),
        split: if overall_raw.is_some() { Split::Train } else { Split::Unlabeled },
        overall_raw,
        sub_scores,
    })
}

/// Reads a pairs CSV. Malformed rows are skipped and reported.
pub fn load_pairs(path: &Path) -> Result<(Vec<ArticlePair>, Vec<RowError>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_reader(file);
    let header = reader.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    if names != PAIRS_HEADER {
        return Err(Error::format(
            "pairs",
            path,
            format!("header must be `{}`", PAIRS_HEADER.join(",")),
        ));
    }
    let file_name = path.display().to_string();
    let mut pairs = Vec::new();
    let mut errors = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                errors.push(RowError {
                    file: file_name.clone(),
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        match parse_pair_record(&record) {
            Ok(pair) if !seen.insert(pair.pair_id.clone()) => errors.push(RowError {
                file: file_name.clone(),
                line,
                message: format!("duplicate pair_id `{}`", pair.pair_id),
            }),
            Ok(pair) => pairs.push(pair),
            Err(message) => errors.push(RowError {
                file: file_name.clone(),
                line,
                message,
            }),
        }
    }
    Ok((pairs, errors))
}

#[derive(Debug, Serialize, Deserialize)]
struct DocumentLine {
    id: String,
    lang: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    publish_date: Option<String>,
}

fn parse_date(s: &str) -> std::result::Result<NaiveDate, String> {
    // Accepts a bare date or the date prefix of a full ISO-8601 timestamp.
    let head = s.get(..10).unwrap_or(s);
    NaiveDate::parse_from_str(head, "%Y-%m-%d").map_err(|_| format!("publish_date `{s}` is not ISO-8601"))
}

fn parse_document_line(line: &str) -> std::result::Result<Document, String> {
    let raw: DocumentLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if raw.id.trim().is_empty() {
        return Err("empty document id".into());
    }
    let publish_date = match raw.publish_date.as_deref().map(str::trim) {
        None | Some("") => None,
        Some(s) => Some(parse_date(s)?),
    };
    Ok(Document {
        id: raw.id.trim().to_owned(),
        lang: raw.lang.trim().to_lowercase(),
        title: raw.title.unwrap_or_default(),
        body: raw.text.unwrap_or_default(),
        publish_date,
    })
}

/// Reads a documents JSON-lines file. Blank lines are ignored; malformed and
/// duplicate-id lines are skipped and reported.
pub fn load_documents(path: &Path) -> Result<(BTreeMap<String, Document>, Vec<RowError>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let file_name = path.display().to_string();
    let mut docs = BTreeMap::new();
    let mut errors = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_document_line(&line) {
            Ok(doc) if docs.contains_key(&doc.id) => errors.push(RowError {
                file: file_name.clone(),
                line: line_no,
                message: format!("duplicate document id `{}`", doc.id),
            }),
            Ok(doc) => {
                docs.insert(doc.id.clone(), doc);
            }
            Err(message) => errors.push(RowError {
                file: file_name.clone(),
                line: line_no,
                message,
            }),
        }
    }
    Ok((docs, errors))
}

pub fn write_documents<'a>(path: &Path, docs: impl IntoIterator<Item = &'a Document>) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    for doc in docs {
        let line = DocumentLine {
            id: doc.id.clone(),
            lang: doc.lang.clone(),
            title: Some(doc.title.clone()),
            text: Some(doc.body.clone()),
            publish_date: doc.publish_date.map(|d| d.format("%Y-%m-%d").to_string()),
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

fn fmt_score(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_pairs<'a>(path: &Path, pairs: impl IntoIterator<Item = &'a ArticlePair>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(PAIRS_HEADER)?;
    for p in pairs {
        let s = &p.sub_scores;
        w.write_record([
            p.pair_id.clone(),
            p.langs.0.clone(),
            p.langs.1.clone(),
            fmt_score(p.overall_raw),
            fmt_score(s.geography),
            fmt_score(s.entities),
            fmt_score(s.time),
            fmt_score(s.narrative),
            fmt_score(s.style),
            fmt_score(s.tone),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Loads pairs and documents. Every surviving pair must reference two loaded
/// documents, otherwise the offending pair ids are returned as an error.
pub fn load_corpus(pairs_path: &Path, docs_path: &Path) -> Result<Corpus> {
    let (pairs, mut errors) = load_pairs(pairs_path)?;
    let (docs, doc_errors) = load_documents(docs_path)?;
    errors.extend(doc_errors);
    let missing: Vec<String> = pairs
        .iter()
        .filter(|p| !docs.contains_key(&p.doc_a) || !docs.contains_key(&p.doc_b))
        .map(|p| p.pair_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingDocuments { pair_ids: missing });
    }
    Ok(Corpus {
        pairs,
        docs,
        report: LoadReport { errors },
    })
}

fn usable(doc: Option<&Document>, min_tokens: usize) -> bool {
    doc.is_some_and(|d| !d.body.trim().is_empty() && d.token_count() >= min_tokens)
}

/// Keeps pairs whose two documents both have a non-empty body and at least
/// `min_tokens` tokens across title and body.
pub fn filter_pairs(pairs: &[ArticlePair], docs: &BTreeMap<String, Document>, min_tokens: usize) -> Vec<ArticlePair> {
    pairs
        .iter()
        .filter(|p| usable(docs.get(&p.doc_a), min_tokens) && usable(docs.get(&p.doc_b), min_tokens))
        .cloned()
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train: BTreeSet<String>,
    pub dev: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn split_of(&self, pair_id: &str) -> Option<Split> {
        if self.train.contains(pair_id) {
            Some(Split::Train)
        } else if self.dev.contains(pair_id) {
            Some(Split::Dev)
        } else {
            None
        }
    }

    /// Writes `pair_id,split` rows in pair-id order.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["pair_id", "split"])?;
        let mut rows: Vec<(&String, Split)> = self
            .train
            .iter()
            .map(|id| (id, Split::Train))
            .chain(self.dev.iter().map(|id| (id, Split::Dev)))
            .collect();
        rows.sort();
        for (id, split) in rows {
            w.write_record([id.as_str(), split.as_str()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let mut out = SplitAssignment::default();
        for record in reader.records() {
            let record = record?;
            let (id, split) = (record.get(0).unwrap_or(""), record.get(1).unwrap_or(""));
            match Split::parse(split) {
                Some(Split::Train) => out.train.insert(id.to_owned()),
                Some(Split::Dev) => out.dev.insert(id.to_owned()),
                _ => return Err(Error::format("split", path, format!("bad split `{split}` for `{id}`"))),
            };
        }
        Ok(out)
    }
}

/// Per language-pair stratum, `round_half_up(ratio * n)` pairs go to train and
/// the rest to dev. Pairs touching a held-out language all go to dev.
/// Unlabeled pairs are ignored.
pub fn stratified_split(
    pairs: &[ArticlePair],
    ratio: f64,
    held_out_dev_langs: &BTreeSet<String>,
    seed: u64,
) -> Result<SplitAssignment> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::domain("split ratio", format!("{ratio} not in (0, 1)")));
    }
    let mut strata: BTreeMap<LangPair, Vec<&str>> = BTreeMap::new();
    for p in pairs.iter().filter(|p| p.overall_raw.is_some()) {
        strata.entry(p.lang_pair()).or_default().push(&p.pair_id);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = SplitAssignment::default();
    for (lang_pair, mut ids) in strata {
        ids.sort_unstable();
        if held_out_dev_langs.iter().any(|l| lang_pair.involves(l)) {
            out.dev.extend(ids.into_iter().map(str::to_owned));
            continue;
        }
        ids.shuffle(&mut rng);
        let n_train = (ratio * ids.len() as f64 + 0.5).floor() as usize;
        let (train, dev) = ids.split_at(n_train.min(ids.len()));
        out.train.extend(train.iter().map(|s| (*s).to_owned()));
        out.dev.extend(dev.iter().map(|s| (*s).to_owned()));
    }
    Ok(out)
}

/// Sets each pair's `split` from the assignment. Labeled pairs absent from it
/// are marked as test.
pub fn apply_split(pairs: &mut [ArticlePair], assignment: &SplitAssignment) {
    for p in pairs.iter_mut() {
        if p.overall_raw.is_none() {
            p.split = Split::Unlabeled;
        } else {
            p.split = assignment.split_of(&p.pair_id).unwrap_or(Split::Test);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn doc(id: &str, title: &str, body: &str) -> Document {
        Document {
            id: id.into(),
            lang: "en".into(),
            title: title.into(),
            body: body.into(),
            publish_date: None,
        }
    }

    fn pair(a: &str, b: &str, l1: &str, l2: &str, overall: Option<f64>) -> ArticlePair {
        ArticlePair {
            pair_id: format!("{a}_{b}"),
            doc_a: a.into(),
            doc_b: b.into(),
            langs: (l1.into(), l2.into()),
            overall_raw: overall,
            sub_scores: SubScores::default(),
            split: Split::Train,
        }
    }

    #[test]
    fn normalize_boundaries() {
        assert_eq!(normalize_label(4.0).unwrap().value(), 0.0);
        assert_eq!(normalize_label(1.0).unwrap().value(), 1.0);
        assert_eq!(normalize_label(2.5).unwrap().value(), 0.5);
        assert!(normalize_label(0.99).is_err());
        assert!(normalize_label(4.01).is_err());
        assert!(normalize_label(f64::NAN).is_err());
    }

    #[test]
    fn denormalize_boundaries() {
        assert_eq!(denormalize_label(0.0).unwrap(), 4.0);
        assert_eq!(denormalize_label(1.0).unwrap(), 1.0);
        assert_eq!(denormalize_label(0.5).unwrap(), 2.5);
        assert!(denormalize_label(-0.1).is_err());
        assert!(denormalize_label(1.1).is_err());
    }

    proptest! {
        #[test]
        fn label_round_trip(x in 1.0f64..=4.0) {
            let back = denormalize_label(normalize_label(x).unwrap().value()).unwrap();
            prop_assert!((back - x).abs() < 1e-12);
        }

        #[test]
        fn normalize_strictly_decreasing(x in 1.0f64..4.0, dx in 1e-9f64..1.0) {
            let y = (x + dx).min(4.0);
            prop_assume!(y > x);
            prop_assert!(normalize_label(x).unwrap().value() > normalize_label(y).unwrap().value());
        }
    }

    #[test]
    fn filter_rules() {
        let ten = "one two three four five six seven eight nine ten";
        let nine = "one two three four five six seven eight nine";
        let docs: BTreeMap<_, _> = [
            doc("a", "", ten),
            doc("b", "", nine),
            doc("c", "Title only here and more and more words ten", ""),
            doc("d", "five", "six seven eight nine ten eleven twelve thirteen fourteen"),
        ]
        .into_iter()
        .map(|d| (d.id.clone(), d))
        .collect();
        let pairs = vec![
            pair("a", "d", "en", "en", Some(1.0)),
            pair("a", "b", "en", "en", Some(1.0)),
            pair("a", "c", "en", "en", Some(1.0)),
        ];
        let kept = filter_pairs(&pairs, &docs, 10);
        assert_eq!(kept.iter().map(|p| p.pair_id.as_str()).collect::<Vec<_>>(), vec!["a_d"]);
        // idempotent
        assert_eq!(filter_pairs(&kept, &docs, 10), kept);
    }

    #[test]
    fn split_single_stratum() {
        let pairs: Vec<_> = (0..100)
            .map(|i| pair(&format!("a{i}"), &format!("b{i}"), "en", "en", Some(2.0)))
            .collect();
        let s = stratified_split(&pairs, 0.8, &BTreeSet::new(), 7).unwrap();
        assert_eq!((s.train.len(), s.dev.len()), (80, 20));
        assert!(s.train.is_disjoint(&s.dev));
        assert_eq!(s, stratified_split(&pairs, 0.8, &BTreeSet::new(), 7).unwrap());
    }

    #[test]
    fn split_holds_out_arabic_and_rounds_half_up() {
        let mut pairs: Vec<_> = (0..10)
            .map(|i| pair(&format!("x{i}"), &format!("y{i}"), "ar", "ar", Some(2.0)))
            .collect();
        pairs.push(pair("p", "q", "en", "ar", Some(3.0)));
        // 5 * 0.7 = 3.5 rounds up to 4.
        pairs.extend((0..5).map(|i| pair(&format!("d{i}"), &format!("e{i}"), "en", "de", Some(1.0))));
        pairs.extend((0..2).map(|i| pair(&format!("f{i}"), &format!("g{i}"), "de", "en", Some(1.0))));
        pairs.push(pair("u", "v", "en", "en", None));
        let held: BTreeSet<String> = ["ar".to_string()].into();
        let s = stratified_split(&pairs, 0.7, &held, 1).unwrap();
        for i in 0..10 {
            assert!(s.dev.contains(&format!("x{i}_y{i}")));
        }
        assert!(s.dev.contains("p_q"));
        // (de,en) and (en,de) form one stratum of 7: round(4.9) = 5 to train.
        assert_eq!(s.train.len(), 5);
        assert_eq!(s.train.len() + s.dev.len(), pairs.len() - 1);
        assert!(stratified_split(&pairs, 1.0, &held, 1).is_err());
        assert!(stratified_split(&pairs, 0.0, &held, 1).is_err());
    }

    #[test]
    fn pair_id_parsing() {
        assert_eq!(split_pair_id("123_456"), Some(("123", "456")));
        assert_eq!(split_pair_id("123-de_456-fr"), Some(("123-de", "456-fr")));
        assert_eq!(split_pair_id("1_2_3"), None);
        assert_eq!(split_pair_id("_2"), None);
    }

    #[test]
    fn load_reports_and_missing_docs() {
        let dir = tempfile::tempdir().unwrap();
        let pairs_path = dir.path().join("pairs.csv");
        let docs_path = dir.path().join("docs.jsonl");
        std::fs::write(
            &pairs_path,
            "pair_id,lang1,lang2,overall,geography,entities,time,narrative,style,tone\n\
             a_b,en,en,2.5,,,,,,\n\
             b_c,en,de,1,1,2,3,4,1,1\n\
             bad,en,en,1,,,,,,\n\
             a_c,en,en,7,,,,,,\n",
        )
        .unwrap();
        std::fs::write(
            &docs_path,
            r#"{"id":"a","lang":"en","title":"T","text":"body","publish_date":"2021-05-01"}
{"id":"b","lang":"EN","title":null,"text":"body","publish_date":null}
{"id":"c","lang":"de","title":"T","text":"body","publish_date":"2020-01-02T10:00:00+00:00"}
not json
"#,
        )
        .unwrap();
        let corpus = load_corpus(&pairs_path, &docs_path).unwrap();
        assert_eq!(corpus.pairs.len(), 2);
        assert_eq!(corpus.docs.len(), 3);
        let lines: Vec<u64> = corpus.report.errors.iter().map(|e| e.line).collect();
        assert_eq!(lines, vec![4, 5, 4]);
        assert_eq!(corpus.docs["b"].lang, "en");
        assert_eq!(corpus.docs["c"].publish_date, NaiveDate::from_ymd_opt(2020, 1, 2));

        std::fs::write(
            &pairs_path,
            "pair_id,lang1,lang2,overall,geography,entities,time,narrative,style,tone\na_zz,en,en,2,,,,,,\n",
        )
        .unwrap();
        match load_corpus(&pairs_path, &docs_path) {
            Err(Error::MissingDocuments { pair_ids }) => assert_eq!(pair_ids, vec!["a_zz"]),
            other => panic!("expected missing-document error, got {other:?}"),
        }
    }
}
