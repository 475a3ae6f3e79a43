//! Resumable stage runner.
//!
//! Stages run in a fixed order and each writes into `<work>/<stage>/` (the
//! audit writes into `<output>/<run-id>/`). Outputs are assembled in a
//! `.tmp` sibling and renamed into place on success; on failure the partial
//! directory moves to `<work>/quarantine/` next to an `error.json`. Every
//! completed stage leaves `<work>/manifests/<stage>.json` with the hashes of
//! its inputs, parameters and outputs, and a stage is skipped when all three
//! still match.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::audit::{run_audit, AuditOptions, SampleInput};
use crate::config::{Backend, RunConfig};
use crate::error::{Error, Result};
use crate::ingest::{document_gate, read_corpus, sample_indices, Document, GateStatus, ParseStats, StoredDocument};
use crate::kb::{build_gazetteer, kb_stats, parse_person_records, Gazetteer, PeopleIndex, PersonRecord, RegionMap};
use crate::linker::{LinkStats, LinkedMention, Linker, OnlineResolver};
use crate::report::{write_report, AuditReport, InputFile, PipelineCounters, RunMetadata, StrategyInfo};
use crate::strategies::lexicon::{HATEBASE_STARTER, SHUTTERSTOCK_STARTER};
use crate::strategies::linear::parse_labeled;
use crate::strategies::perspective::AdapterCounters;
use crate::strategies::quality::{quality_score, removal_rate};
use crate::strategies::{
    calibrate_threshold, train_linear, HashedLinearModel, Lexicon, PerspectiveAdapter, SentenceScorer, Strategy,
    StrategyCategory, StrategyId, StrategyVerdict, TrainParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    BuildKb,
    Ingest,
    Train,
    Link,
    Filter,
    Audit,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::BuildKb,
        Stage::Ingest,
        Stage::Train,
        Stage::Link,
        Stage::Filter,
        Stage::Audit,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::BuildKb => "build-kb",
            Stage::Ingest => "ingest",
            Stage::Train => "train",
            Stage::Link => "link",
            Stage::Filter => "filter",
            Stage::Audit => "audit",
        }
    }

    fn upstream(self) -> &'static [Stage] {
        match self {
            Stage::BuildKb | Stage::Ingest => &[],
            Stage::Train => &[Stage::Ingest],
            Stage::Link => &[Stage::BuildKb, Stage::Ingest],
            Stage::Filter => &[Stage::Ingest, Stage::Train, Stage::Link],
            Stage::Audit => &[Stage::BuildKb, Stage::Ingest, Stage::Train, Stage::Link, Stage::Filter],
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: Stage,
    pub params_hash: String,
    /// Input path (relative to the config directory) to SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub duration_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageOutcome {
    pub stage: Stage,
    pub skipped: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestStats {
    pub parse: ParseStats,
    pub documents_kept: u64,
    pub documents_dropped: BTreeMap<String, u64>,
    pub sampled: Vec<usize>,
    pub calibration: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub source: String,
    pub model_sha256: String,
    pub examples: usize,
    pub epoch_losses: Vec<f64>,
    pub train_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub target_removal: f64,
    pub threshold: f64,
    pub achieved_removal: f64,
    pub documents: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FilterStats {
    pub unscored: BTreeMap<StrategyId, u64>,
    pub toxicity_adapter: Option<AdapterCounters>,
}

#[derive(Debug, Serialize)]
struct ErrorRecord<'a> {
    stage: &'a str,
    error: String,
    exit_code: i32,
}

pub fn sample_shard(i: usize) -> String {
    format!("sample-{i:02}.jsonl")
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

fn sha256_bytes(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

/// Every file under `dir`, sorted by path.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let p = entry.map_err(|e| Error::io(&d, e))?.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), i + 1)))?);
    }
    Ok(out)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    for it in items {
        serde_json::to_writer(&mut w, it)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = crate::report::canonical_json(v)?;
    s.push('\n');
    fs::write(path, s).map_err(|e| Error::io(path, e))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn load_people(path: &Path) -> Result<Vec<PersonRecord>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(parse_person_records(BufReader::new(f))?.records)
}

fn load_documents(path: &Path) -> Result<Vec<Document>> {
    Ok(read_jsonl::<StoredDocument>(path)?
        .into_iter()
        .map(Document::from)
        .collect())
}

fn mkdirs(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn remove_dir(p: &Path) -> Result<()> {
    match fs::remove_dir_all(p) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(()),
        Err(e) => Err(Error::io(p, e)),
    }
}

fn tmp_sibling(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    dir.with_file_name(name)
}

pub struct Pipeline {
    cfg: RunConfig,
    pool: rayon::ThreadPool,
}

impl Pipeline {
    /// Validates `cfg` and sets up a worker pool of `jobs` threads (0 means
    /// one per core).
    pub fn new(cfg: RunConfig, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Validation(format!("cannot build worker pool: {e}")))?;
        Ok(Pipeline { cfg, pool })
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }

    pub fn work(&self) -> PathBuf {
        self.cfg.work_dir()
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        match stage {
            Stage::BuildKb => self.work().join("kb"),
            Stage::Audit => self.cfg.run_output_dir(),
            s => self.work().join(s.name()),
        }
    }

    pub fn manifest_path(&self, stage: Stage) -> PathBuf {
        self.work().join("manifests").join(format!("{}.json", stage.name()))
    }

    pub fn read_manifest(&self, stage: Stage) -> Option<Manifest> {
        read_json(&self.manifest_path(stage)).ok()
    }

    pub fn run_all(&self) -> Result<Vec<StageOutcome>> {
        Stage::ALL.iter().map(|&s| self.run(s)).collect()
    }

    pub fn run(&self, stage: Stage) -> Result<StageOutcome> {
        for up in stage.upstream() {
            if self.read_manifest(*up).is_none() {
                return Err(Error::Stage {
                    stage: stage.name().into(),
                    message: format!("no completed {up} stage; run it first"),
                });
            }
        }
        let (inputs, params) = self.stage_inputs(stage)?;
        self.execute(stage, inputs, params)
    }

    fn hash_inputs(&self, inputs: &[PathBuf]) -> Result<BTreeMap<String, String>> {
        inputs
            .iter()
            .map(|p| Ok((self.cfg.display_path(p), sha256_file(p)?)))
            .collect()
    }

    fn outputs_intact(&self, m: &Manifest) -> bool {
        let dir = self.stage_dir(m.stage);
        let Ok(files) = files_under(&dir) else {
            return false;
        };
        let current: Option<BTreeMap<String, String>> = files
            .iter()
            .map(|p| Some((self.cfg.display_path(p), sha256_file(p).ok()?)))
            .collect();
        current.as_ref() == Some(&m.outputs)
    }

    fn execute(&self, stage: Stage, inputs: Vec<PathBuf>, params: serde_json::Value) -> Result<StageOutcome> {
        let input_hashes = self.hash_inputs(&inputs)?;
        let params_hash = sha256_bytes(crate::report::canonical_json(&params)?.as_bytes());
        if let Some(m) = self.read_manifest(stage) {
            if m.inputs == input_hashes && m.params_hash == params_hash && self.outputs_intact(&m) {
                log::info!("{stage}: up to date");
                return Ok(StageOutcome { stage, skipped: true });
            }
        }
        log::info!("{stage}: running");
        let start = Instant::now();
        let dir = self.stage_dir(stage);
        let tmp = tmp_sibling(&dir);
        remove_dir(&tmp)?;
        mkdirs(&tmp)?;
        if let Err(e) = self.stage_body(stage, &tmp) {
            self.quarantine(stage, &tmp, &e);
            return Err(e);
        }
        remove_dir(&dir)?;
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        let outputs = files_under(&dir)?
            .iter()
            .map(|p| Ok((self.cfg.display_path(p), sha256_file(p)?)))
            .collect::<Result<_>>()?;
        let m = Manifest {
            stage,
            params_hash,
            inputs: input_hashes,
            outputs,
            duration_ms: start.elapsed().as_millis() as u64,
        };
        let mpath = self.manifest_path(stage);
        mkdirs(mpath.parent().expect("manifest dir"))?;
        let mtmp = mpath.with_extension("json.tmp");
        write_json(&mtmp, &m)?;
        fs::rename(&mtmp, &mpath).map_err(|e| Error::io(&mpath, e))?;
        Ok(StageOutcome { stage, skipped: false })
    }

    fn quarantine(&self, stage: Stage, tmp: &Path, err: &Error) {
        let root = self.work().join("quarantine");
        let mut k = 0;
        let target = loop {
            let t = root.join(format!("{}-{k:03}", stage.name()));
            if !t.exists() {
                break t;
            }
            k += 1;
        };
        let moved = mkdirs(&root).and_then(|_| fs::rename(tmp, &target).map_err(|e| Error::io(&target, e)));
        if moved.is_err() {
            let _ = mkdirs(&target);
        }
        let rec = ErrorRecord {
            stage: stage.name(),
            error: err.to_string(),
            exit_code: err.exit_code(),
        };
        if let Err(e) = write_json(&target.join("error.json"), &rec) {
            log::error!("could not write error record: {e}");
        }
        log::error!("{stage} failed; partial outputs in {}", target.display());
    }

    fn enabled(&self) -> &[StrategyId] {
        &self.cfg.strategies.enabled
    }

    /// Strategies that need a trained model.
    fn modelled(&self) -> Vec<StrategyId> {
        self.enabled()
            .iter()
            .copied()
            .filter(|&id| match id.category() {
                StrategyCategory::RuleBased => false,
                StrategyCategory::ClassifierBased => self.cfg.strategies.get(id).backend == Backend::Model,
                StrategyCategory::QualityBased => true,
            })
            .collect()
    }

    fn strategy_params(&self) -> serde_json::Value {
        let per: BTreeMap<StrategyId, _> = self
            .enabled()
            .iter()
            .map(|&id| (id, self.cfg.strategies.get(id).clone()))
            .collect();
        serde_json::json!({ "enabled": self.enabled(), "per": per })
    }

    fn dir_files(&self, stage: Stage) -> Result<Vec<PathBuf>> {
        files_under(&self.stage_dir(stage))
    }

    fn stage_inputs(&self, stage: Stage) -> Result<(Vec<PathBuf>, serde_json::Value)> {
        let cfg = &self.cfg;
        Ok(match stage {
            Stage::BuildKb => {
                let mut inputs = vec![cfg.resolve(&cfg.kb.people)];
                if let Some(r) = &cfg.kb.regions {
                    inputs.push(cfg.resolve(r));
                }
                (inputs, serde_json::json!({ "kb": cfg.kb }))
            }
            Stage::Ingest => (
                cfg.corpus_files()?,
                serde_json::json!({ "corpus": cfg.corpus, "seed": cfg.seeds.sampling }),
            ),
            Stage::Train => {
                let mut inputs = Vec::new();
                for id in self.modelled() {
                    let sc = cfg.strategies.get(id);
                    if let Some(p) = sc.model.as_ref().or(sc.train.as_ref()) {
                        inputs.push(cfg.resolve(p));
                    }
                }
                let cal = self.stage_dir(Stage::Ingest).join("calibration.jsonl");
                if cal.exists() {
                    inputs.push(cal);
                }
                (
                    inputs,
                    serde_json::json!({
                        "training": cfg.training,
                        "seed": cfg.seeds.training,
                        "strategies": self.strategy_params(),
                    }),
                )
            }
            Stage::Link => {
                let mut inputs = self.dir_files(Stage::BuildKb)?;
                inputs.extend(self.sample_files()?);
                (inputs, serde_json::json!({ "linking": cfg.linking }))
            }
            Stage::Filter => {
                let mut inputs = self.sample_files()?;
                inputs.extend(self.dir_files(Stage::Link)?);
                inputs.extend(self.dir_files(Stage::Train)?);
                for &id in self.enabled() {
                    if let Some(p) = &cfg.strategies.get(id).lexicon {
                        inputs.push(cfg.resolve(p));
                    }
                }
                (inputs, serde_json::json!({ "strategies": self.strategy_params() }))
            }
            Stage::Audit => {
                let mut inputs = cfg.corpus_files()?;
                inputs.extend(self.dir_files(Stage::BuildKb)?);
                inputs.push(self.stage_dir(Stage::Ingest).join("stats.json"));
                inputs.extend(self.dir_files(Stage::Train)?);
                inputs.extend(self.dir_files(Stage::Link)?);
                inputs.extend(self.dir_files(Stage::Filter)?);
                (inputs, serde_json::json!({ "config": cfg.hash(), "audit": cfg.audit }))
            }
        })
    }

    fn sample_files(&self) -> Result<Vec<PathBuf>> {
        let dir = self.stage_dir(Stage::Ingest);
        (0..self.cfg.corpus.samples)
            .map(|i| {
                let p = dir.join(sample_shard(i));
                if p.is_file() {
                    Ok(p)
                } else {
                    Err(Error::Stage {
                        stage: "ingest".into(),
                        message: format!("missing shard {}", p.display()),
                    })
                }
            })
            .collect()
    }

    fn stage_body(&self, stage: Stage, out: &Path) -> Result<()> {
        match stage {
            Stage::BuildKb => self.build_kb(out),
            Stage::Ingest => self.ingest(out),
            Stage::Train => self.train(out),
            Stage::Link => self.link(out),
            Stage::Filter => self.filter(out),
            Stage::Audit => self.audit(out),
        }
    }

    fn build_kb(&self, out: &Path) -> Result<()> {
        let cfg = &self.cfg;
        let people_path = cfg.resolve(&cfg.kb.people);
        let f = File::open(&people_path).map_err(|e| Error::io(&people_path, e))?;
        let parsed = parse_person_records(BufReader::new(f))?;
        let regions = match &cfg.kb.regions {
            Some(p) => RegionMap::parse(&read_text(&cfg.resolve(p))?)?,
            None => RegionMap::default_map(),
        };
        let mut tsv = String::new();
        for r in &parsed.records {
            tsv.push_str(&r.to_line());
            tsv.push('\n');
        }
        let w = |name: &str, s: &str| fs::write(out.join(name), s).map_err(|e| Error::io(out.join(name), e));
        w("people.tsv", &tsv)?;
        w("gazetteer.tsv", &build_gazetteer(&parsed.records).to_tsv())?;
        w("regions.txt", &regions.to_canonical_string())?;
        write_json(
            &out.join("stats.json"),
            &serde_json::json!({
                "groups": kb_stats(&parsed.records, &regions),
                "skipped_records": parsed.skipped,
                "region_map_hash": regions.content_hash(),
            }),
        )
    }

    fn ingest(&self, out: &Path) -> Result<()> {
        let cfg = &self.cfg;
        let files = cfg.corpus_files()?;
        let read: Vec<_> = self.pool.install(|| {
            files
                .par_iter()
                .map(|p| {
                    let f = File::open(p).map_err(|e| Error::io(p, e))?;
                    read_corpus(BufReader::new(f), cfg.corpus.format, &cfg.display_path(p))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut stats = IngestStats::default();
        let mut raw = Vec::new();
        for (docs, ps) in read {
            stats.parse.merge(&ps);
            raw.extend(docs);
        }
        let gated: Vec<Document> = self.pool.install(|| raw.par_iter().map(document_gate).collect());
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        for d in gated {
            if d.gate_status != GateStatus::Kept {
                *stats
                    .documents_dropped
                    .entry(format!("{:?}", d.gate_status))
                    .or_default() += 1;
            } else if !seen.insert(d.doc_id.clone()) {
                *stats.documents_dropped.entry("DuplicateId".into()).or_default() += 1;
            } else {
                kept.push(d);
            }
        }
        stats.documents_kept = kept.len() as u64;
        let c = &cfg.corpus;
        let needed = c.samples * c.sample_size + c.calibration_size;
        if needed > kept.len() {
            return Err(Error::Stage {
                stage: "ingest".into(),
                message: format!(
                    "{} samples of {} plus {} calibration documents need {needed} documents, only {} passed the gate",
                    c.samples,
                    c.sample_size,
                    c.calibration_size,
                    kept.len()
                ),
            });
        }
        let mut idx = sample_indices(kept.len(), needed, cfg.seeds.sampling);
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seeds.sampling.wrapping_add(1)));
        let mut chunks: Vec<Vec<usize>> = idx.chunks(c.sample_size).map(<[usize]>::to_vec).collect();
        let calibration: Vec<usize> = chunks.split_off(c.samples).concat();
        for (i, mut chunk) in chunks.into_iter().enumerate() {
            chunk.sort_unstable();
            let docs: Vec<StoredDocument> = chunk.iter().map(|&j| kept[j].to_stored()).collect();
            write_jsonl(&out.join(sample_shard(i)), &docs)?;
            stats.sampled.push(docs.len());
        }
        if c.calibration_size > 0 {
            let mut cal = calibration;
            cal.sort_unstable();
            let docs: Vec<StoredDocument> = cal.iter().map(|&j| kept[j].to_stored()).collect();
            write_jsonl(&out.join("calibration.jsonl"), &docs)?;
            stats.calibration = docs.len();
        }
        write_json(&out.join("stats.json"), &stats)
    }

    fn train(&self, out: &Path) -> Result<()> {
        let cfg = &self.cfg;
        let ids = self.modelled();
        mkdirs(&out.join("models"))?;
        let trained: Vec<(StrategyId, HashedLinearModel, TrainingReport)> = self.pool.install(|| {
            ids.par_iter()
                .map(|&id| {
                    let sc = cfg.strategies.get(id);
                    let offset = StrategyId::ALL.iter().position(|s| *s == id).unwrap() as u64;
                    if let Some(p) = &sc.model {
                        let p = cfg.resolve(p);
                        let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
                        let model = HashedLinearModel::read_from(BufReader::new(f))?;
                        let rep = TrainingReport {
                            source: cfg.display_path(&p),
                            model_sha256: sha256_bytes(&model.to_bytes()),
                            examples: model.meta.examples,
                            epoch_losses: Vec::new(),
                            train_accuracy: None,
                        };
                        return Ok((id, model, rep));
                    }
                    let p = cfg.resolve(sc.train.as_ref().expect("validated: model or train"));
                    let (pos, neg) = parse_labeled(&read_text(&p)?)?;
                    let params = TrainParams {
                        dim: cfg.training.dim,
                        epochs: cfg.training.epochs,
                        learning_rate: cfg.training.learning_rate,
                        seed: cfg.seeds.training.wrapping_add(offset),
                        positive_class: id.name().into(),
                    };
                    let outcome =
                        train_linear(&pos, &neg, &params).map_err(|e| Error::Training(format!("{id}: {e}")))?;
                    let model = outcome.model;
                    let correct = pos.iter().filter(|t| model.predict_proba(t) >= 0.5).count()
                        + neg.iter().filter(|t| model.predict_proba(t) < 0.5).count();
                    let rep = TrainingReport {
                        source: cfg.display_path(&p),
                        model_sha256: sha256_bytes(&model.to_bytes()),
                        examples: pos.len() + neg.len(),
                        epoch_losses: outcome.epoch_losses,
                        train_accuracy: Some(correct as f64 / (pos.len() + neg.len()) as f64),
                    };
                    Ok((id, model, rep))
                })
                .collect::<Result<Vec<_>>>()
        })?;
        let mut reports = BTreeMap::new();
        let mut calibration = BTreeMap::new();
        let cal_path = self.stage_dir(Stage::Ingest).join("calibration.jsonl");
        let cal_docs = if cal_path.exists() {
            load_documents(&cal_path)?
        } else {
            Vec::new()
        };
        for (id, model, rep) in trained {
            let path = out.join("models").join(format!("{}.bin", id.name()));
            fs::write(&path, model.to_bytes()).map_err(|e| Error::io(&path, e))?;
            if id.category() == StrategyCategory::QualityBased {
                let target = cfg.strategies.target_removal(id);
                let scores: Vec<f64> = self
                    .pool
                    .install(|| cal_docs.par_iter().map(|d| quality_score(d, &model)).collect());
                let threshold = calibrate_threshold(&scores, target)?;
                calibration.insert(
                    id,
                    CalibrationReport {
                        target_removal: target,
                        threshold,
                        achieved_removal: removal_rate(&scores, threshold),
                        documents: scores.len(),
                    },
                );
            }
            reports.insert(id, rep);
        }
        write_json(&out.join("training.json"), &reports)?;
        write_json(&out.join("calibration.json"), &calibration)
    }

    fn link(&self, out: &Path) -> Result<()> {
        let cfg = &self.cfg;
        let kb = self.stage_dir(Stage::BuildKb);
        let people = PeopleIndex::new(load_people(&kb.join("people.tsv"))?);
        let gaz = Gazetteer::from_tsv(&read_text(&kb.join("gazetteer.tsv"))?)?;
        let regions = RegionMap::parse(&read_text(&kb.join("regions.txt"))?)?;
        let resolver = match &cfg.linking.resolver {
            Some(r) => {
                let mut r = r.clone();
                r.cache = r.cache.map(|p| cfg.resolve(&p));
                Some(OnlineResolver::new(r)?)
            }
            None => None,
        };
        let mut linker = Linker::new(&gaz, &people, &regions, cfg.linking.threshold)?;
        linker.resolver = resolver.as_ref();
        linker.ner = cfg.linking.ner.as_ref();
        let mut per_sample = Vec::new();
        let mut total = LinkStats::default();
        for (i, path) in self.sample_files()?.iter().enumerate() {
            let docs = load_documents(path)?;
            let linked = self
                .pool
                .install(|| docs.par_iter().map(|d| linker.link(d)).collect::<Result<Vec<_>>>())?;
            let mut stats = LinkStats::default();
            let mut mentions = Vec::new();
            for (m, s) in linked {
                stats.merge(&s);
                mentions.extend(m);
            }
            write_jsonl(&out.join(sample_shard(i)), &mentions)?;
            total.merge(&stats);
            per_sample.push(stats);
        }
        write_json(
            &out.join("stats.json"),
            &serde_json::json!({ "samples": per_sample, "total": total }),
        )
    }

    fn build_strategies(&self) -> Result<(Vec<Strategy>, Option<Arc<PerspectiveAdapter>>)> {
        let cfg = &self.cfg;
        let train = self.stage_dir(Stage::Train);
        let calibration: BTreeMap<StrategyId, CalibrationReport> = read_json(&train.join("calibration.json"))?;
        let load_model = |id: StrategyId| -> Result<HashedLinearModel> {
            let p = train.join("models").join(format!("{}.bin", id.name()));
            let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
            HashedLinearModel::read_from(BufReader::new(f))
        };
        let mut adapter = None;
        let mut out = Vec::new();
        for &id in self.enabled() {
            let sc = cfg.strategies.get(id);
            let s = match id.category() {
                StrategyCategory::RuleBased => {
                    let text = match &sc.lexicon {
                        Some(p) => read_text(&cfg.resolve(p))?,
                        None if id == StrategyId::Hatebase => HATEBASE_STARTER.to_owned(),
                        None => SHUTTERSTOCK_STARTER.to_owned(),
                    };
                    Strategy::lexicon(id, Lexicon::parse(&text)?)?
                }
                StrategyCategory::ClassifierBased => {
                    let scorer = match sc.backend {
                        Backend::Model => SentenceScorer::Linear(load_model(id)?),
                        Backend::Perspective => {
                            let mut a = sc.adapter.clone().unwrap_or_default();
                            a.replay = a.replay.map(|p| cfg.resolve(&p));
                            a.cache = a.cache.map(|p| cfg.resolve(&p));
                            let a = Arc::new(PerspectiveAdapter::new(a)?);
                            adapter = Some(a.clone());
                            SentenceScorer::External(a)
                        }
                    };
                    Strategy::classifier(id, scorer, cfg.strategies.threshold(id))?
                }
                StrategyCategory::QualityBased => {
                    let tau = calibration.get(&id).ok_or_else(|| Error::Stage {
                        stage: "filter".into(),
                        message: format!("no calibrated threshold for {id}"),
                    })?;
                    Strategy::quality(id, load_model(id)?, tau.threshold)?
                }
            };
            out.push(s);
        }
        Ok((out, adapter))
    }

    fn filter(&self, out: &Path) -> Result<()> {
        let (strategies, adapter) = self.build_strategies()?;
        let link_dir = self.stage_dir(Stage::Link);
        let mut stats = FilterStats::default();
        for s in &strategies {
            mkdirs(&out.join(s.id().name()))?;
            stats.unscored.insert(s.id(), 0);
        }
        for (i, path) in self.sample_files()?.iter().enumerate() {
            let docs = load_documents(path)?;
            let linked: Vec<LinkedMention> = read_jsonl(&link_dir.join(sample_shard(i)))?;
            let mut mention_sentences: HashMap<&str, BTreeSet<usize>> = HashMap::new();
            for m in &linked {
                mention_sentences
                    .entry(m.span.doc_id.as_str())
                    .or_default()
                    .insert(m.span.sentence_index);
            }
            for s in &strategies {
                let verdicts: Vec<StrategyVerdict> = self.pool.install(|| {
                    docs.par_iter()
                        .map(|d| {
                            if s.id().is_sentence_level() {
                                mention_sentences
                                    .get(d.doc_id.as_str())
                                    .into_iter()
                                    .flatten()
                                    .filter_map(|&k| d.sentences.get(k))
                                    .map(|sent| s.judge_sentence(&d.doc_id, sent))
                                    .collect::<Vec<_>>()
                            } else {
                                vec![s.judge_document(d)]
                            }
                        })
                        .flatten()
                        .collect()
                });
                *stats.unscored.entry(s.id()).or_default() += verdicts.iter().filter(|v| v.unscored).count() as u64;
                write_jsonl(&out.join(s.id().name()).join(sample_shard(i)), &verdicts)?;
            }
        }
        if let Some(a) = adapter {
            a.save_cache()?;
            stats.toxicity_adapter = Some(a.counters());
        }
        write_json(&out.join("stats.json"), &stats)
    }

    fn audit(&self, out: &Path) -> Result<()> {
        let cfg = &self.cfg;
        let kb = self.stage_dir(Stage::BuildKb);
        let people_path = kb.join("people.tsv");
        let people = PeopleIndex::new(load_people(&people_path)?);
        let regions = RegionMap::parse(&read_text(&kb.join("regions.txt"))?)?;
        let link_dir = self.stage_dir(Stage::Link);
        let filter_dir = self.stage_dir(Stage::Filter);
        let n = cfg.corpus.samples;
        let mut linked = Vec::with_capacity(n);
        let mut verdicts = Vec::with_capacity(n);
        for i in 0..n {
            linked.push(read_jsonl::<LinkedMention>(&link_dir.join(sample_shard(i)))?);
            let mut per = BTreeMap::new();
            for &id in self.enabled() {
                per.insert(
                    id,
                    read_jsonl::<StrategyVerdict>(&filter_dir.join(id.name()).join(sample_shard(i)))?,
                );
            }
            verdicts.push(per);
        }
        let ids: Vec<String> = (0..n).map(|i| format!("sample-{i:02}")).collect();
        let inputs: Vec<SampleInput> = (0..n)
            .map(|i| SampleInput {
                sample_id: &ids[i],
                linked: &linked[i],
                verdicts: &verdicts[i],
            })
            .collect();
        let opts = AuditOptions {
            harm_strategies: cfg.harm_strategies(),
            top_k: cfg.audit.top_k,
        };
        let results = run_audit(&inputs, &people, &opts)?;

        let ingest: IngestStats = read_json(&self.stage_dir(Stage::Ingest).join("stats.json"))?;
        let link_stats: serde_json::Value = read_json(&link_dir.join("stats.json"))?;
        let filter_stats: FilterStats = read_json(&filter_dir.join("stats.json"))?;
        let train_dir = self.stage_dir(Stage::Train);
        let training: BTreeMap<StrategyId, TrainingReport> = read_json(&train_dir.join("training.json"))?;
        let calibration: BTreeMap<StrategyId, CalibrationReport> = read_json(&train_dir.join("calibration.json"))?;

        let strategies = self
            .enabled()
            .iter()
            .map(|&id| {
                let sc = cfg.strategies.get(id);
                let (threshold, source) = match id.category() {
                    StrategyCategory::RuleBased => (
                        None,
                        match &sc.lexicon {
                            Some(p) => format!("lexicon:{}", cfg.display_path(&cfg.resolve(p))),
                            None => format!("lexicon:bundled/{}", id.name()),
                        },
                    ),
                    StrategyCategory::ClassifierBased => (
                        Some(cfg.strategies.threshold(id)),
                        match sc.backend {
                            Backend::Perspective => {
                                format!("perspective:{}", sc.adapter.clone().unwrap_or_default().endpoint)
                            }
                            Backend::Model => format!("model:{}", training[&id].model_sha256),
                        },
                    ),
                    StrategyCategory::QualityBased => (
                        Some(calibration[&id].threshold),
                        format!("model:{}", training[&id].model_sha256),
                    ),
                };
                StrategyInfo {
                    id,
                    category: id.category(),
                    threshold,
                    source,
                }
            })
            .collect();
        let corpus = cfg
            .corpus_files()?
            .iter()
            .map(|p| {
                Ok(InputFile {
                    path: cfg.display_path(p),
                    sha256: sha256_file(p)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let metadata = RunMetadata {
            run_id: cfg.run_id.clone(),
            config_hash: cfg.hash(),
            region_map_hash: regions.content_hash(),
            people_hash: sha256_file(&people_path)?,
            seeds: BTreeMap::from([
                ("sampling".to_owned(), cfg.seeds.sampling),
                ("training".to_owned(), cfg.seeds.training),
            ]),
            corpus,
            samples: n,
            sample_size: cfg.corpus.sample_size,
            link_threshold: cfg.linking.threshold,
            strategies,
            harness_version: env!("CARGO_PKG_VERSION").to_owned(),
        };
        let counters = PipelineCounters {
            parse: ingest.parse,
            documents_kept: ingest.documents_kept,
            documents_dropped: ingest.documents_dropped,
            linking: serde_json::from_value(link_stats["total"].clone())?,
            toxicity_adapter: filter_stats.toxicity_adapter,
        };
        write_report(
            out,
            &AuditReport {
                metadata,
                counters,
                results,
            },
        )
    }
}
