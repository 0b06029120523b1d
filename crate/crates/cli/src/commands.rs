//! One function per subcommand. Each reads its declared inputs from the
//! config or the work directory, writes its outputs under the work directory
//! and records a run manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use newsim_core::augment::{
    self, AugmentSource, AugmentedPair, Bm25Index, Bm25Params, CandidatePair, DistributionReport,
};
use newsim_core::corpus::{self, ArticlePair, Document, Split, SplitAssignment};
use newsim_core::encoder::{
    narrative_similarity, prepare_document, train_siamese, EmbeddingProvider, HashedEncoder, PrecomputedStore,
    PreparedDocument, SiameseExample, TrainReport,
};
use newsim_core::entities::{self, build_profile, EntityMention, EntityProfile, Gazetteer};
use newsim_core::eval::{self, EvalReport};
use newsim_core::fixture::{self, FixtureConfig};
use newsim_core::fusion::{self, FeatureDumpRow, FeatureRow, FeatureSource, FusionMLP};
use newsim_core::corpus::NormalizedLabel;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{EncoderKind, PipelineConfig, SeedUse};
use crate::error::{CliError, CliResult};
use crate::manifest::RunRecorder;

/// Artifact layout under the work directory.
#[derive(Debug, Clone)]
pub struct Artifacts {
    root: PathBuf,
}

impl Artifacts {
    pub fn new(root: &Path) -> Self {
        Artifacts { root: root.to_owned() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn pairs(&self) -> PathBuf {
        self.root.join("ingest/pairs.csv")
    }
    pub fn docs(&self) -> PathBuf {
        self.root.join("ingest/docs.jsonl")
    }
    pub fn extra_docs(&self) -> PathBuf {
        self.root.join("ingest/extra_docs.jsonl")
    }
    pub fn split(&self) -> PathBuf {
        self.root.join("ingest/split.csv")
    }
    pub fn load_report(&self) -> PathBuf {
        self.root.join("ingest/load_report.json")
    }
    pub fn entities(&self) -> PathBuf {
        self.root.join("entities/entities.jsonl")
    }
    pub fn encoder(&self, tag: &str) -> PathBuf {
        self.root.join(format!("encoder/{tag}.bin"))
    }
    pub fn encoder_info(&self, tag: &str) -> PathBuf {
        self.root.join(format!("encoder/{tag}.json"))
    }
    pub fn candidates(&self) -> PathBuf {
        self.root.join("augment/candidates.csv")
    }
    pub fn plan(&self) -> PathBuf {
        self.root.join("augment/translation_plan.csv")
    }
    pub fn augmented(&self) -> PathBuf {
        self.root.join("augment/augmented.csv")
    }
    pub fn distribution(&self) -> PathBuf {
        self.root.join("augment/distribution.json")
    }
    pub fn fusion(&self, tag: &str) -> PathBuf {
        self.root.join(format!("fusion/{tag}.bin"))
    }
    pub fn predictions(&self, tag: &str, encoder_only: bool) -> PathBuf {
        if encoder_only {
            self.root.join(format!("score/{tag}-encoder.csv"))
        } else {
            self.root.join(format!("score/{tag}.csv"))
        }
    }
    pub fn features(&self, tag: &str) -> PathBuf {
        self.root.join(format!("score/{tag}-features.csv"))
    }
    pub fn eval_dir(&self, name: &str) -> PathBuf {
        self.root.join("eval").join(name)
    }
    pub fn significance(&self, name: &str) -> PathBuf {
        self.root.join(format!("significance/{name}.json"))
    }
}

fn require(path: &Path, what: &'static str, producer: &'static str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::MissingArtifact {
            what,
            path: path.to_owned(),
            producer,
        })
    }
}

fn require_input(path: &Path, key: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Config {
            key: key.to_owned(),
            message: format!("file {} does not exist", path.display()),
        })
    }
}

fn ensure_parent(path: &Path) -> CliResult<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

pub struct Context {
    pub cfg: PipelineConfig,
    pub art: Artifacts,
}

/// Ingested pairs (with splits applied) and every known document.
pub struct Ingested {
    pub pairs: Vec<ArticlePair>,
    pub docs: BTreeMap<String, Document>,
    pub extra_ids: BTreeSet<String>,
}

impl Ingested {
    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ArticlePair> {
        self.pairs.iter().filter(move |p| p.split == split)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalSplit {
    Dev,
    Test,
    AllLabeled,
}

impl EvalSplit {
    pub fn parse(s: &str) -> CliResult<Self> {
        match s {
            "dev" => Ok(EvalSplit::Dev),
            "test" => Ok(EvalSplit::Test),
            "all" => Ok(EvalSplit::AllLabeled),
            other => Err(CliError::Usage(format!("unknown split `{other}` (dev, test, all)"))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            EvalSplit::Dev => "dev",
            EvalSplit::Test => "test",
            EvalSplit::AllLabeled => "all",
        }
    }

    fn keeps(self, p: &ArticlePair) -> bool {
        p.overall_raw.is_some()
            && match self {
                EvalSplit::Dev => p.split == Split::Dev,
                EvalSplit::Test => p.split == Split::Test,
                EvalSplit::AllLabeled => true,
            }
    }
}

impl Context {
    pub fn new(cfg: PipelineConfig) -> Self {
        let art = Artifacts::new(&cfg.work_dir);
        Context { cfg, art }
    }

    fn load_ingested(&self) -> CliResult<Ingested> {
        let (pairs_path, docs_path, split_path) = (self.art.pairs(), self.art.docs(), self.art.split());
        for p in [&pairs_path, &docs_path, &split_path] {
            require(p, "ingested corpus", "ingest")?;
        }
        let (mut pairs, errors) = corpus::load_pairs(&pairs_path)?;
        if let Some(e) = errors.first() {
            return Err(CliError::Usage(format!("ingested pairs are corrupt: {}:{}: {}", e.file, e.line, e.message)));
        }
        let assignment = SplitAssignment::read(&split_path)?;
        corpus::apply_split(&mut pairs, &assignment);
        let (mut docs, _) = corpus::load_documents(&docs_path)?;
        let mut extra_ids = BTreeSet::new();
        if self.art.extra_docs().is_file() {
            let (extra, _) = corpus::load_documents(&self.art.extra_docs())?;
            for (id, d) in extra {
                extra_ids.insert(id.clone());
                docs.entry(id).or_insert(d);
            }
        }
        Ok(Ingested { pairs, docs, extra_ids })
    }

    fn provider(&self, tag: &str, rec: &mut RunRecorder) -> CliResult<EmbeddingProvider> {
        match self.cfg.encoder.kind {
            EncoderKind::Hashed => {
                let path = self.art.encoder(tag);
                require(&path, "encoder checkpoint", "train-encoder")?;
                rec.input(&path);
                Ok(EmbeddingProvider::Hashed(HashedEncoder::load(&path)?))
            }
            EncoderKind::Precomputed => {
                let path = self.cfg.data.embeddings.as_ref().expect("validated");
                require_input(path, "data.embeddings")?;
                rec.input(path);
                Ok(EmbeddingProvider::Precomputed(PrecomputedStore::load(path)?))
            }
        }
    }

    fn profiles(&self, docs: &BTreeMap<String, Document>, rec: &mut RunRecorder) -> CliResult<BTreeMap<String, EntityProfile>> {
        let path = self.art.entities();
        require(&path, "entity mentions", "extract-entities")?;
        rec.input(&path);
        let mentions = entities::load_entities(&path)?;
        Ok(docs
            .values()
            .map(|d| {
                let m = mentions.get(&d.id).map(Vec::as_slice).unwrap_or(&[]);
                (d.id.clone(), build_profile(m, d.publish_date))
            })
            .collect())
    }

    fn fusion_model(&self, tag: &str, rec: &mut RunRecorder) -> CliResult<FusionMLP> {
        let path = self.art.fusion(tag);
        require(&path, "fusion checkpoint", "train-fusion")?;
        rec.input(&path);
        Ok(FusionMLP::load(&path)?)
    }
}

fn feature_rows(source: &FeatureSource<'_>, pairs: &[(&str, &str)]) -> CliResult<Vec<FeatureRow>> {
    pairs
        .par_iter()
        .map(|(a, b)| source.feature_row(a, b))
        .collect::<Result<Vec<_>, _>>()
        .map_err(CliError::from)
}

#[derive(Debug, Serialize)]
struct LoadSummary {
    pairs_read: usize,
    pairs_kept: usize,
    documents: usize,
    extra_documents: usize,
    train: usize,
    dev: usize,
    test: usize,
    unlabeled: usize,
    row_errors: Vec<corpus::RowError>,
}

pub fn ingest(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("ingest", cfg);
    require_input(&cfg.data.pairs, "data.pairs")?;
    require_input(&cfg.data.docs, "data.docs")?;
    rec.input(&cfg.data.pairs);
    rec.input(&cfg.data.docs);

    let corpus = corpus::load_corpus(&cfg.data.pairs, &cfg.data.docs)?;
    for e in &corpus.report.errors {
        log::warn!("skipped {}:{}: {}", e.file, e.line, e.message);
    }
    let mut pairs = corpus::filter_pairs(&corpus.pairs, &corpus.docs, cfg.data.min_tokens);
    let held_out: BTreeSet<String> = cfg.split.held_out_langs.iter().cloned().collect();
    let assignment = corpus::stratified_split(&pairs, cfg.split.train_ratio, &held_out, cfg.seed_for(SeedUse::Split))?;
    corpus::apply_split(&mut pairs, &assignment);

    let mut row_errors = corpus.report.errors.clone();
    let mut extra_documents = 0;
    for path in [ctx.art.pairs(), ctx.art.docs(), ctx.art.split(), ctx.art.load_report()] {
        ensure_parent(&path)?;
    }
    corpus::write_pairs(&ctx.art.pairs(), &pairs)?;
    corpus::write_documents(&ctx.art.docs(), corpus.docs.values())?;
    assignment.write(&ctx.art.split())?;
    for p in [ctx.art.pairs(), ctx.art.docs(), ctx.art.split()] {
        rec.output(&p);
    }
    if let Some(extra) = &cfg.data.extra_docs {
        require_input(extra, "data.extra_docs")?;
        rec.input(extra);
        let (docs, errors) = corpus::load_documents(extra)?;
        extra_documents = docs.len();
        row_errors.extend(errors);
        corpus::write_documents(&ctx.art.extra_docs(), docs.values())?;
        rec.output(&ctx.art.extra_docs());
    } else if ctx.art.extra_docs().exists() {
        fs::remove_file(ctx.art.extra_docs()).map_err(|e| CliError::io(ctx.art.extra_docs(), e))?;
    }

    let count = |s: Split| pairs.iter().filter(|p| p.split == s).count();
    let summary = LoadSummary {
        pairs_read: corpus.pairs.len(),
        pairs_kept: pairs.len(),
        documents: corpus.docs.len(),
        extra_documents,
        train: count(Split::Train),
        dev: count(Split::Dev),
        test: count(Split::Test),
        unlabeled: count(Split::Unlabeled),
        row_errors,
    };
    write_json(&ctx.art.load_report(), &summary)?;
    rec.output(&ctx.art.load_report());
    log::info!(
        "ingested {} of {} pairs ({} train / {} dev)",
        summary.pairs_kept,
        summary.pairs_read,
        summary.train,
        summary.dev
    );
    rec.metric("pairs_kept", summary.pairs_kept);
    rec.metric("train", summary.train);
    rec.metric("dev", summary.dev);
    rec.metric("row_errors", summary.row_errors.len());
    rec.finish("ingest")?;
    Ok(())
}

pub fn extract_entities(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("extract-entities", cfg);
    let data = ctx.load_ingested()?;
    rec.input(&ctx.art.docs());

    let mentions: BTreeMap<String, Vec<EntityMention>> = if let Some(path) = &cfg.data.entities {
        require_input(path, "data.entities")?;
        rec.input(path);
        let mut all = entities::load_entities(path)?;
        let missing = data.docs.keys().filter(|id| !all.contains_key(*id)).count();
        if missing > 0 {
            log::warn!("{missing} documents have no pre-extracted entities; treating them as entity-free");
        }
        all.retain(|id, _| data.docs.contains_key(id));
        data.docs
            .keys()
            .map(|id| (id.clone(), all.remove(id).unwrap_or_default()))
            .collect()
    } else {
        let gazetteer = match &cfg.data.gazetteer {
            Some(path) => {
                require_input(path, "data.gazetteer")?;
                rec.input(path);
                Gazetteer::load(path)?
            }
            None => Gazetteer::default(),
        };
        let docs: Vec<&Document> = data.docs.values().collect();
        docs.par_iter()
            .map(|d| (d.id.clone(), entities::fallback_extract(d, &gazetteer)))
            .collect::<Vec<_>>()
            .into_iter()
            .collect()
    };
    let out = ctx.art.entities();
    ensure_parent(&out)?;
    entities::write_entities(&out, &mentions)?;
    rec.output(&out);
    let total: usize = mentions.values().map(Vec::len).sum();
    rec.metric("documents", mentions.len());
    rec.metric("mentions", total);
    rec.metric("documents_without_mentions", mentions.values().filter(|m| m.is_empty()).count());
    rec.finish("extract-entities")?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
struct EncoderInfo {
    augmented: bool,
}

type PreparedExample = (PreparedDocument, PreparedDocument, NormalizedLabel);

/// Labeled training-split pairs accepted by `keep`, plus pseudo-labeled pairs.
fn encoder_examples(
    cfg: &PipelineConfig,
    data: &Ingested,
    keep: impl Fn(&ArticlePair) -> bool,
    augmented: &[AugmentedPair],
) -> Vec<PreparedExample> {
    let max_len = cfg.encoder.max_seq_len;
    let prep = |id: &str| prepare_document(&data.docs[id], max_len);
    let mut out: Vec<PreparedExample> = data
        .in_split(Split::Train)
        .filter(|p| keep(p))
        .filter_map(|p| Some((prep(&p.doc_a), prep(&p.doc_b), p.label()?)))
        .collect();
    for p in augmented {
        if data.docs.contains_key(&p.doc_a) && data.docs.contains_key(&p.doc_b) {
            out.push((prep(&p.doc_a), prep(&p.doc_b), p.pseudo_label));
        } else {
            log::warn!("augmented pair {}/{} references unknown documents", p.doc_a, p.doc_b);
        }
    }
    out
}

fn fit_encoder(cfg: &PipelineConfig, examples: &[SiameseExample<'_>]) -> CliResult<(HashedEncoder, TrainReport)> {
    let mut encoder = HashedEncoder::new(cfg.encoder.feature_config(cfg.seed_for(SeedUse::EncoderInit)))?;
    let report = train_siamese(&mut encoder, examples, &cfg.encoder.train_config(cfg.seed_for(SeedUse::EncoderTrain)))?;
    Ok((encoder, report))
}

pub fn train_encoder(ctx: &Context, augmented: bool, tag: &str) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("train-encoder", cfg);
    let data = ctx.load_ingested()?;
    rec.input(&ctx.art.pairs());
    rec.input(&ctx.art.split());

    if cfg.encoder.kind == EncoderKind::Precomputed {
        let mut sink = RunRecorder::start("train-encoder", cfg);
        let provider = ctx.provider(tag, &mut sink)?;
        let missing: BTreeSet<&str> = data
            .pairs
            .iter()
            .flat_map(|p| [p.doc_a.as_str(), p.doc_b.as_str()])
            .filter(|id| provider.embed(&data.docs[*id]).is_err())
            .collect();
        if !missing.is_empty() {
            let shown: Vec<&str> = missing.iter().take(5).copied().collect();
            return Err(CliError::Usage(format!(
                "{} documents have no precomputed embedding (first: {})",
                missing.len(),
                shown.join(", ")
            )));
        }
        rec.input(cfg.data.embeddings.as_ref().expect("validated"));
        rec.metric("trained", false);
        rec.metric("dim", provider.dim());
        rec.finish(&format!("train-encoder-{tag}"))?;
        return Ok(());
    }

    let original = data.in_split(Split::Train).filter(|p| p.overall_raw.is_some()).count();
    let augmented_pairs = if augmented {
        let path = ctx.art.augmented();
        require(&path, "pseudo-labeled pairs", "self-label")?;
        rec.input(&path);
        augment::read_augmented(&path)?
    } else {
        Vec::new()
    };
    let prepared = encoder_examples(cfg, &data, |_| true, &augmented_pairs);
    let examples: Vec<SiameseExample<'_>> = prepared
        .iter()
        .map(|(a, b, label)| SiameseExample { a, b, label: *label })
        .collect();
    let (encoder, report) = fit_encoder(cfg, &examples)?;
    let out = ctx.art.encoder(tag);
    ensure_parent(&out)?;
    encoder.save(&out)?;
    rec.output(&out);
    let info_path = ctx.art.encoder_info(tag);
    write_json(&info_path, &EncoderInfo { augmented })?;
    rec.output(&info_path);
    log::info!(
        "encoder `{tag}`: {} examples ({} augmented), loss {:?}",
        examples.len(),
        examples.len() - original,
        report.epoch_losses
    );
    rec.metric("examples", examples.len());
    rec.metric("augmented_examples", examples.len() - original);
    rec.metric("epoch_losses", &report.epoch_losses);
    rec.metric("steps", report.steps);
    rec.metric("materialized_rows", encoder.materialized_rows());
    rec.finish(&format!("train-encoder-{tag}"))?;
    Ok(())
}

fn parse_lang_pair(s: &str) -> (String, String) {
    let (a, b) = s.split_once('-').expect("validated");
    (a.to_owned(), b.to_owned())
}

pub fn augment(ctx: &Context) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let acfg = &cfg.augment;
    let mut rec = RunRecorder::start("augment", cfg);
    let data = ctx.load_ingested()?;
    rec.input(&ctx.art.pairs());
    rec.input(&ctx.art.docs());

    let train: Vec<&ArticlePair> = data.in_split(Split::Train).collect();
    let train_ids: BTreeSet<&str> = train.iter().flat_map(|p| [p.doc_a.as_str(), p.doc_b.as_str()]).collect();
    let train_docs: Vec<&Document> = train_ids.iter().map(|id| &data.docs[*id]).collect();
    let exclusions = augment::exclusions_from(data.pairs.iter().filter(|p| p.overall_raw.is_some()));
    let queries: Vec<(String, Vec<String>)> =
        train_docs.iter().map(|d| (d.id.clone(), augment::title_query(d))).collect();
    let params = Bm25Params {
        k1: acfg.bm25_k1,
        b: acfg.bm25_b,
    };

    let mut candidates: Vec<CandidatePair> = Vec::new();
    if acfg.bm25_intra && !train_docs.is_empty() {
        let index = Bm25Index::build(train_docs.iter().copied(), params)?;
        candidates.extend(augment::sample_bm25_pairs(&index, &queries, acfg.k, &exclusions, AugmentSource::Bm25Intra));
    }
    if acfg.bm25_external {
        let external: Vec<&Document> = data.extra_ids.iter().map(|id| &data.docs[id]).collect();
        if external.is_empty() {
            log::warn!("augment.bm25_external is set but no extra documents were ingested");
        } else {
            let index = Bm25Index::build(external, params)?;
            candidates.extend(augment::sample_bm25_pairs(&index, &queries, acfg.k, &exclusions, AugmentSource::Bm25External));
        }
    }
    let bm25_count = candidates.len();
    if acfg.random {
        let ids: Vec<String> = train_ids.iter().map(|s| (*s).to_owned()).collect();
        let count = if acfg.random_count > 0 {
            acfg.random_count
        } else if bm25_count > 0 {
            bm25_count
        } else {
            acfg.k * ids.len()
        };
        candidates.extend(augment::sample_random_pairs(&ids, count, &exclusions, cfg.seed_for(SeedUse::Augment))?);
    }
    if acfg.translated {
        match &cfg.data.translation_plan {
            Some(plan_path) => {
                require_input(plan_path, "data.translation_plan")?;
                rec.input(plan_path);
                let plan = augment::read_plan(plan_path)?;
                candidates.extend(augment::translated_candidates(&plan, &data.pairs, &data.docs));
            }
            None => {
                let targets: BTreeMap<(String, String), f64> = acfg
                    .translation_targets
                    .iter()
                    .map(|(lp, w)| (parse_lang_pair(lp), *w))
                    .collect();
                let owned: Vec<ArticlePair> = train.iter().map(|p| (*p).clone()).collect();
                let plan = augment::make_translation_plan(&owned, &targets, acfg.translations_per_pair, cfg.seed_for(SeedUse::Augment))?;
                let out = ctx.art.plan();
                ensure_parent(&out)?;
                augment::write_plan(&out, &plan)?;
                rec.output(&out);
                rec.metric("translation_plan_entries", plan.len());
                log::info!("wrote {} translation plan entries; fulfil them with the export tool", plan.len());
            }
        }
    }

    let out = ctx.art.candidates();
    ensure_parent(&out)?;
    augment::write_candidates(&out, &candidates)?;
    rec.output(&out);
    let mut by_source: BTreeMap<String, usize> = BTreeMap::new();
    for c in &candidates {
        *by_source.entry(c.source.to_string()).or_default() += 1;
    }
    rec.metric("candidates", &by_source);
    rec.finish("augment")?;
    Ok(())
}

pub fn self_label(ctx: &Context, tag: &str) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("self-label", cfg);
    if cfg.encoder.kind == EncoderKind::Hashed {
        let path = ctx.art.encoder(tag);
        if !path.is_file() {
            return Err(CliError::MissingArtifact {
                what: "baseline encoder checkpoint (pseudo-labeling needs a model trained on the original training set)",
                path,
                producer: "train-encoder",
            });
        }
    }
    let cand_path = ctx.art.candidates();
    require(&cand_path, "augmentation candidates", "augment")?;
    rec.input(&cand_path);
    let data = ctx.load_ingested()?;
    let provider = ctx.provider(tag, &mut rec)?.cached(data.docs.values())?;
    let candidates = augment::read_candidates(&cand_path)?;

    let fusion_path = ctx.art.fusion(tag);
    let labeled = if fusion_path.is_file() {
        let mlp = ctx.fusion_model(tag, &mut rec)?;
        let profiles = ctx.profiles(&data.docs, &mut rec)?;
        let source = FeatureSource {
            provider: &provider,
            docs: &data.docs,
            profiles: &profiles,
        };
        rec.metric("labeler", "fusion");
        augment::self_label(|a, b| fusion::predict_pair(&mlp, &source, a, b), &candidates)
    } else {
        let docs = &data.docs;
        let embed = |id: &str| {
            docs.get(id)
                .ok_or_else(|| newsim_core::Error::UnknownDocument(id.to_owned()))
                .and_then(|d| provider.embed(d))
        };
        rec.metric("labeler", "encoder");
        augment::self_label(|a, b| narrative_similarity(&embed(a)?, &embed(b)?), &candidates)
    };

    let out = ctx.art.augmented();
    augment::write_augmented(&out, &labeled)?;
    rec.output(&out);

    let mut per_source: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for p in &labeled {
        per_source.entry(p.source.to_string()).or_default().push(p.pseudo_label.value());
    }
    let reports: BTreeMap<String, DistributionReport> = per_source
        .iter()
        .map(|(s, labels)| Ok((s.clone(), augment::distribution_report(labels, cfg.augment.bins)?)))
        .collect::<CliResult<_>>()?;
    write_json(&ctx.art.distribution(), &reports)?;
    rec.output(&ctx.art.distribution());
    for (s, r) in &reports {
        log::info!("{s}: normalized entropy {:.4}", r.normalized_entropy);
    }
    rec.metric("labeled", labeled.len());
    rec.metric(
        "normalized_entropy",
        reports.iter().map(|(s, r)| (s.clone(), r.normalized_entropy)).collect::<BTreeMap<_, _>>(),
    );
    rec.finish("self-label")?;
    Ok(())
}

pub fn train_fusion(ctx: &Context, tag: &str) -> CliResult<()> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("train-fusion", cfg);
    let data = ctx.load_ingested()?;
    rec.input(&ctx.art.pairs());
    rec.input(&ctx.art.split());
    let provider = ctx.provider(tag, &mut rec)?.cached(data.docs.values())?;
    let profiles = ctx.profiles(&data.docs, &mut rec)?;
    let source = FeatureSource {
        provider: &provider,
        docs: &data.docs,
        profiles: &profiles,
    };
    let train: Vec<(&ArticlePair, NormalizedLabel)> =
        data.in_split(Split::Train).filter_map(|p| Some((p, p.label()?))).collect();
    if train.is_empty() {
        return Err(CliError::Usage("no labeled training pairs; check the split".into()));
    }
    let ids: Vec<(&str, &str)> = train.iter().map(|(p, _)| (p.doc_a.as_str(), p.doc_b.as_str())).collect();
    let mut rows = feature_rows(&source, &ids)?;
    let seed = cfg.seed_for(SeedUse::Fusion);
    let folds = cfg.fusion.cross_fit_folds;
    if folds >= 2 && cfg.encoder.kind == EncoderKind::Hashed {
        let info_path = ctx.art.encoder_info(tag);
        require(&info_path, "encoder training record", "train-encoder")?;
        let text = fs::read_to_string(&info_path).map_err(|e| CliError::io(&info_path, e))?;
        let info: EncoderInfo = serde_json::from_str(&text)?;
        let augmented_pairs = if info.augmented {
            rec.input(&ctx.art.augmented());
            augment::read_augmented(&ctx.art.augmented())?
        } else {
            Vec::new()
        };
        let fold_of = fusion::fold_assignment(train.len(), folds, seed);
        let fold_by_id: BTreeMap<&str, usize> =
            train.iter().zip(&fold_of).map(|((p, _), f)| (p.pair_id.as_str(), *f)).collect();
        let narratives: Vec<Vec<(usize, f64)>> = (0..folds)
            .into_par_iter()
            .map(|k| -> CliResult<Vec<(usize, f64)>> {
                let prepared = encoder_examples(cfg, &data, |p| fold_by_id.get(p.pair_id.as_str()) != Some(&k), &augmented_pairs);
                let examples: Vec<SiameseExample<'_>> =
                    prepared.iter().map(|(a, b, label)| SiameseExample { a, b, label: *label }).collect();
                let (encoder, _) = fit_encoder(cfg, &examples)?;
                let fold_provider = EmbeddingProvider::Hashed(encoder);
                let fold_source = FeatureSource {
                    provider: &fold_provider,
                    docs: &data.docs,
                    profiles: &profiles,
                };
                (0..train.len())
                    .filter(|&i| fold_of[i] == k)
                    .map(|i| Ok((i, fold_source.narrative(ids[i].0, ids[i].1)?)))
                    .collect()
            })
            .collect::<CliResult<_>>()?;
        for (i, narrative) in narratives.into_iter().flatten() {
            rows[i].narrative = narrative;
        }
        rec.metric("cross_fit_folds", folds);
    }
    let mask = fusion::validation_mask(rows.len(), cfg.fusion.validation_fraction, seed);
    let (mut fit, mut val) = (Vec::new(), Vec::new());
    for ((row, (_, label)), is_val) in rows.into_iter().zip(&train).zip(mask) {
        if is_val { &mut val } else { &mut fit }.push((row, *label));
    }
    let (mlp, report) = fusion::train_fusion(&fit, &cfg.fusion.train_config(seed), Some(&val))?;
    let out = ctx.art.fusion(tag);
    ensure_parent(&out)?;
    mlp.save(&out)?;
    rec.output(&out);
    log::info!(
        "fusion `{tag}`: best epoch {} of {}, validation mse {:?}",
        report.best_epoch,
        report.epoch_losses.len(),
        report.validation_losses.get(report.best_epoch)
    );
    rec.metric("train_rows", fit.len());
    rec.metric("validation_rows", val.len());
    rec.metric("best_epoch", report.best_epoch);
    rec.metric("epochs_run", report.epoch_losses.len());
    rec.metric("train_mse", mlp.mse(&fit));
    if !val.is_empty() {
        rec.metric("validation_mse", mlp.mse(&val));
    }
    rec.finish(&format!("train-fusion-{tag}"))?;
    Ok(())
}

pub fn score(ctx: &Context, tag: &str, encoder_only: bool, dump_features: bool) -> CliResult<PathBuf> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("score", cfg);
    let data = ctx.load_ingested()?;
    rec.input(&ctx.art.pairs());
    let provider = ctx.provider(tag, &mut rec)?.cached(data.docs.values())?;
    let profiles = ctx.profiles(&data.docs, &mut rec)?;
    let mlp = if encoder_only { None } else { Some(ctx.fusion_model(tag, &mut rec)?) };
    let source = FeatureSource {
        provider: &provider,
        docs: &data.docs,
        profiles: &profiles,
    };
    let ids: Vec<(&str, &str)> = data.pairs.iter().map(|p| (p.doc_a.as_str(), p.doc_b.as_str())).collect();
    let rows = feature_rows(&source, &ids)?;
    let predict = |row: &FeatureRow| match &mlp {
        Some(m) => m.forward(row),
        None => NormalizedLabel::clipped(row.narrative).value(),
    };
    let predictions: BTreeMap<String, f64> =
        data.pairs.iter().zip(&rows).map(|(p, r)| (p.pair_id.clone(), predict(r))).collect();

    let out = ctx.art.predictions(tag, encoder_only);
    ensure_parent(&out)?;
    eval::write_predictions(&out, &predictions)?;
    rec.output(&out);
    if dump_features {
        let dump: Vec<FeatureDumpRow> = data
            .pairs
            .iter()
            .zip(&rows)
            .map(|(p, r)| FeatureDumpRow {
                pair_id: p.pair_id.clone(),
                narrative: r.narrative,
                geo: r.geo,
                org: r.org,
                date: r.date,
                qty: r.qty,
                label: p.label().map(NormalizedLabel::value),
                prediction: predictions[&p.pair_id],
            })
            .collect();
        let path = ctx.art.features(tag);
        fusion::write_feature_dump(&path, &dump)?;
        rec.output(&path);
    }
    rec.metric("pairs", predictions.len());
    rec.metric("encoder_only", encoder_only);
    let name = if encoder_only { format!("score-{tag}-encoder") } else { format!("score-{tag}") };
    rec.finish(&name)?;
    Ok(out)
}

#[derive(Debug, Serialize)]
struct EvaluationOutput<'a> {
    split: &'a str,
    #[serde(flatten)]
    report: &'a EvalReport,
    serious_mistakes: usize,
    serious_threshold: f64,
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "predictions".into())
}

pub fn evaluate(ctx: &Context, predictions: &Path, split: EvalSplit) -> CliResult<EvalReport> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("evaluate", cfg);
    require(predictions, "predictions file", "score")?;
    rec.input(predictions);
    rec.input(&ctx.art.pairs());
    let data = ctx.load_ingested()?;
    let preds = eval::read_predictions(predictions)?;
    let pairs: Vec<ArticlePair> = data.pairs.iter().filter(|p| split.keeps(p)).cloned().collect();
    let report = eval::per_language_breakdown(&pairs, &preds)?;
    let raw: BTreeMap<String, f64> = preds
        .iter()
        .map(|(k, v)| (k.clone(), 4.0 - 3.0 * NormalizedLabel::clipped(*v).value()))
        .collect();
    let mistakes = eval::serious_mistakes(&pairs, &raw, cfg.eval.serious_threshold);

    let name = format!("{}-{}", stem(predictions), split.name());
    let dir = ctx.art.eval_dir(&name);
    fs::create_dir_all(&dir).map_err(|e| CliError::io(&dir, e))?;
    let output = EvaluationOutput {
        split: split.name(),
        report: &report,
        serious_mistakes: mistakes.len(),
        serious_threshold: cfg.eval.serious_threshold,
    };
    let files = [
        dir.join("report.json"),
        dir.join("report.txt"),
        dir.join("per_language.csv"),
        dir.join("serious_mistakes.csv"),
    ];
    write_json(&files[0], &output)?;
    let text = report.to_text();
    fs::write(&files[1], &text).map_err(|e| CliError::io(&files[1], e))?;
    report.write_chart_csv(&files[2])?;
    eval::write_serious_mistakes(&files[3], &mistakes)?;
    for f in &files {
        rec.output(f);
    }
    print!("{text}");
    rec.metric("overall_pearson", report.overall_pearson);
    rec.metric("n", report.n);
    rec.metric("serious_mistakes", mistakes.len());
    rec.finish(&format!("evaluate-{name}"))?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct SignificanceOutput {
    pub model_a: String,
    pub model_b: String,
    pub split: String,
    pub n: usize,
    pub r12: f64,
    pub r13: f64,
    pub r23: f64,
    pub t: f64,
    pub df: usize,
    pub p_value: f64,
}

pub fn significance(ctx: &Context, a: &Path, b: &Path, split: EvalSplit) -> CliResult<SignificanceOutput> {
    let cfg = &ctx.cfg;
    let mut rec = RunRecorder::start("significance", cfg);
    require(a, "predictions file", "score")?;
    require(b, "predictions file", "score")?;
    rec.input(a);
    rec.input(b);
    rec.input(&ctx.art.pairs());
    let data = ctx.load_ingested()?;
    let (pa, pb) = (eval::read_predictions(a)?, eval::read_predictions(b)?);
    let (mut labels, mut xa, mut xb) = (Vec::new(), Vec::new(), Vec::new());
    for p in data.pairs.iter().filter(|p| split.keeps(p)) {
        let (Some(l), Some(va), Some(vb)) = (p.label(), pa.get(&p.pair_id), pb.get(&p.pair_id)) else {
            return Err(CliError::Usage(format!("pair `{}` is missing from a predictions file", p.pair_id)));
        };
        labels.push(l.value());
        xa.push(*va);
        xb.push(*vb);
    }
    let cmp = eval::compare_models(&labels, &xa, &xb)?;
    let out = SignificanceOutput {
        model_a: stem(a),
        model_b: stem(b),
        split: split.name().to_owned(),
        n: cmp.williams.n,
        r12: cmp.r12,
        r13: cmp.r13,
        r23: cmp.r23,
        t: cmp.williams.t,
        df: cmp.williams.df,
        p_value: cmp.williams.p_value,
    };
    let name = format!("{}-vs-{}-{}", out.model_a, out.model_b, out.split);
    let path = ctx.art.significance(&name);
    write_json(&path, &out)?;
    rec.output(&path);
    println!("{}", serde_json::to_string(&out)?);
    rec.metric("t", out.t);
    rec.metric("p_value", out.p_value);
    rec.finish(&format!("significance-{name}"))?;
    Ok(out)
}

/// Hyperparameters that suit the synthetic corpus: a smaller hashed encoder
/// and a learning rate sized for it rather than for Transformer fine-tuning.
pub fn fixture_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig {
        seed,
        ..PipelineConfig::default()
    };
    cfg.data.pairs = PathBuf::from("pairs.csv");
    cfg.data.docs = PathBuf::from("docs.jsonl");
    cfg.data.entities = Some(PathBuf::from("entities.jsonl"));
    cfg.data.gazetteer = Some(PathBuf::from("gazetteer.csv"));
    cfg.encoder.buckets = 1 << 16;
    cfg.encoder.dim = 64;
    cfg.encoder.learning_rate = 1e-2;
    cfg.fusion.cross_fit_folds = 2;
    cfg
}

pub fn generate_fixture(out: &Path, pairs: usize, seed: u64) -> CliResult<PathBuf> {
    let fx = fixture::generate(&FixtureConfig {
        pairs,
        seed,
        ..FixtureConfig::default()
    })?;
    fx.write(out)?;
    let config_path = out.join("newsim.toml");
    fs::write(&config_path, fixture_config(seed).to_toml()).map_err(|e| CliError::io(&config_path, e))?;
    Ok(config_path)
}

/// Runs every stage in order: baseline encoder and fusion, augmentation and
/// pseudo-labeling with the baseline model, augmented encoder and fusion,
/// scoring, evaluation and the fusion-versus-encoder significance test.
pub fn run_all(ctx: &Context) -> CliResult<SignificanceOutput> {
    ingest(ctx)?;
    extract_entities(ctx)?;
    train_encoder(ctx, false, "baseline")?;
    train_fusion(ctx, "baseline")?;
    augment(ctx)?;
    self_label(ctx, "baseline")?;
    train_encoder(ctx, true, "augmented")?;
    train_fusion(ctx, "augmented")?;
    let fused = score(ctx, "augmented", false, true)?;
    let encoder_only = score(ctx, "augmented", true, false)?;
    evaluate(ctx, &fused, EvalSplit::Dev)?;
    evaluate(ctx, &encoder_only, EvalSplit::Dev)?;
    significance(ctx, &fused, &encoder_only, EvalSplit::Dev)
}
