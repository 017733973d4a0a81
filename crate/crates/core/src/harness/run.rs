//! The staged experiment runner.
//!
//! Output layout under `paths.out`:
//!
//! ```text
//! corpus.jsonl                 generated corpus (absent for external corpora)
//! split.json                   patient-level partition
//! vocab.txt                    built from training notes (absent if supplied)
//! pretrained.ckpt              masked-LM encoder (only if pretraining is on)
//! models/<key>/seed-<s>/       frozen pipeline of one replicate run
//! eval/metrics.json            per-model metrics, dummy baselines included
//! eval/<key>/seed-<s>.jsonl    test predictions
//! ablation/importance.json     keyword-ablation summary
//! ablation/topic_stats.json    topic statistics of the test notes
//! report/                      tables, report.json, radar.csv
//! manifest.json
//! ```

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModelKey};
use super::manifest::{sha256_file, sha256_str, Artifact, RunManifest, StageRecord, StageStatus};
use super::report::{emit_report, ExperimentReport, ReportFormat, TableRow, REPORT_VERSION};
use crate::ablation::{ablate_and_score, topic_stats, ImportanceReport, ImportanceSummary, Lexicon, TopicStats};
use crate::corpus::{generate_corpus_with, load_corpus, save_corpus, split_patients, Corpus, NoteSelection, Split};
use crate::encoder::{mix_seed, pretrain_mlm_nsp, EncoderModel, ModelConfig};
use crate::error::{Error, Result};
use crate::hierarchy::{build_concat_all, train_step1, train_step2, write_rep_cache, ConcatRepresentation, FrozenPipeline};
use crate::metrics::{dummy_predict, DummyKind, LabelDistribution, MetricsReport, Prediction, RunMetrics};
use crate::tokenizer::{build_vocab, make_mlm_instances, Vocabulary};

pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const SPLIT_FILE: &str = "split.json";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const METRICS_FILE: &str = "eval/metrics.json";
pub const IMPORTANCE_FILE: &str = "ablation/importance.json";
pub const TOPIC_STATS_FILE: &str = "ablation/topic_stats.json";
pub const REPORT_DIR: &str = "report";
/// Written instead of a model when a replicate run diverges.
const DIVERGED_FILE: &str = "diverged.txt";
const LOCK_FILE: &str = ".manifest.lock";

/// Table label of a trained model family.
pub fn row_name(key: ModelKey) -> String {
    match key {
        ModelKey::Single => "Encoder".into(),
        ModelKey::Ms(n) => format!("Encoder MS-{n}"),
    }
}

pub fn model_dir(key: ModelKey, seed: u64) -> PathBuf {
    PathBuf::from("models").join(key.to_string()).join(format!("seed-{seed}"))
}

pub fn predictions_file(key: ModelKey, seed: u64) -> PathBuf {
    PathBuf::from("eval").join(key.to_string()).join(format!("seed-{seed}.jsonl"))
}

/// Metrics of every evaluated model, keyed by table label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub n_test_patients: usize,
    pub test_positive_fraction: f64,
    pub train_distribution: LabelDistribution,
    pub models: BTreeMap<String, MetricsReport>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let json = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for p in predictions {
        serde_json::to_writer(&mut w, p)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Ok(serde_json::from_str(l)?))
        .collect()
}

/// Relative paths of every regular file below `dir`, sorted.
fn files_under(out: &Path, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![out.join(dir)];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).map_err(|e| Error::io(&d, e))? {
            let path = entry.map_err(|e| Error::io(&d, e))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                found.push(path.strip_prefix(out).expect("below out").to_path_buf());
            }
        }
    }
    found.sort();
    Ok(found)
}

/// Runs the stages of one experiment inside its output directory, skipping
/// stages whose manifest record is still fresh.
pub struct Experiment {
    config: ExperimentConfig,
    out: PathBuf,
    hash: String,
    manifest: RunManifest,
    corpus: Option<Arc<Corpus>>,
}

impl Experiment {
    /// Validates `config`, checks that referenced files exist and opens (or
    /// starts) the manifest in the output directory.
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        for (what, path) in [
            ("corpus", &config.paths.corpus),
            ("vocabulary", &config.paths.vocab),
            ("lexicon", &config.paths.lexicon),
        ] {
            if let Some(p) = path {
                if !p.is_file() {
                    return Err(Error::Config(format!("{what} file {} does not exist", p.display())));
                }
            }
        }
        let out = config.paths.out.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::Config(format!("output dir {}: {e}", out.display())))?;
        let hash = config.hash();
        let manifest = RunManifest::open(&out, &hash)?;
        Ok(Experiment {
            config,
            out,
            hash,
            manifest,
            corpus: None,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn out(&self) -> &Path {
        &self.out
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    /// Every stage in dependency order.
    pub fn run_all(&mut self) -> Result<ExperimentReport> {
        self.corpus_stage()?;
        self.split_stage()?;
        self.vocab_stage()?;
        self.pretrain_stage()?;
        for key in self.config.model_keys() {
            self.train_stage(key, None)?;
        }
        self.eval_stage()?;
        self.ablate_stage()?;
        self.report_stage()
    }

    fn stage_key(&self, name: &str, fragment: &impl Serialize, inputs: &[PathBuf]) -> Result<String> {
        let mut parts = vec![env!("CARGO_PKG_VERSION").to_string(), name.to_string(), serde_json::to_string(fragment)?];
        for path in inputs {
            let sum = sha256_file(path).map_err(|_| Error::Stage {
                stage: name.into(),
                message: format!("missing input {}; run the upstream stage first", path.display()),
            })?;
            parts.push(sum);
        }
        let refs: Vec<&str> = parts.iter().map(String::as_str).collect();
        Ok(sha256_str(&refs))
    }

    fn at(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.out.join(rel)
    }

    /// Re-reads the manifest under the lock, applies `f` and writes it back,
    /// so concurrent processes sharing an output directory do not lose
    /// records.
    fn update_manifest(&mut self, record: StageRecord) -> Result<()> {
        let lock_path = self.out.join(LOCK_FILE);
        let lock = File::create(&lock_path).map_err(|e| Error::io(&lock_path, e))?;
        lock.lock().map_err(|e| Error::io(&lock_path, e))?;
        let mut current = RunManifest::open(&self.out, &self.hash)?;
        current.record(record);
        current.save(&self.out)?;
        self.manifest = current;
        Ok(())
    }

    /// Runs `body` unless `name` is fresh under the key derived from
    /// `fragment` and the checksums of `inputs`. `body` returns the files it
    /// wrote, relative to the output directory.
    fn stage<F>(&mut self, name: &str, fragment: &impl Serialize, inputs: &[PathBuf], body: F) -> Result<()>
    where
        F: FnOnce(&mut Self) -> Result<Vec<PathBuf>>,
    {
        let key = self.stage_key(name, fragment, inputs)?;
        if self.manifest.is_fresh(&self.out, name, &key) {
            log::info!("stage {name}: up to date");
            return Ok(());
        }
        log::info!("stage {name}: running");
        let started = Instant::now();
        let result = body(self).and_then(|outputs| {
            outputs
                .into_iter()
                .map(|path| {
                    let sha256 = sha256_file(self.out.join(&path))?;
                    Ok(Artifact { path, sha256 })
                })
                .collect::<Result<Vec<_>>>()
        });
        let seconds = started.elapsed().as_secs_f64();
        match result {
            Ok(outputs) => self.update_manifest(StageRecord {
                name: name.into(),
                key,
                status: StageStatus::Complete,
                outputs,
                seconds,
            }),
            Err(e) => {
                let message = e.to_string();
                log::error!("stage {name} failed: {message}");
                self.update_manifest(StageRecord {
                    name: name.into(),
                    key,
                    status: StageStatus::Failed(message.clone()),
                    outputs: Vec::new(),
                    seconds,
                })?;
                Err(Error::Stage {
                    stage: name.into(),
                    message,
                })
            }
        }
    }

    fn lexicon(&self) -> Result<Lexicon> {
        match &self.config.paths.lexicon {
            Some(p) => Lexicon::load(p),
            None => Ok(Lexicon::sdoh()),
        }
    }

    pub fn corpus_path(&self) -> PathBuf {
        self.config.paths.corpus.clone().unwrap_or_else(|| self.out.join(CORPUS_FILE))
    }

    fn vocab_path(&self) -> PathBuf {
        self.config.paths.vocab.clone().unwrap_or_else(|| self.out.join(VOCAB_FILE))
    }

    /// The corpus, read once and shared.
    pub fn load_corpus(&mut self) -> Result<Arc<Corpus>> {
        if self.corpus.is_none() {
            self.corpus = Some(Arc::new(load_corpus(self.corpus_path())?));
        }
        Ok(Arc::clone(self.corpus.as_ref().expect("just loaded")))
    }

    pub fn load_split(&mut self) -> Result<Split> {
        let split = Split::load(self.out.join(SPLIT_FILE))?;
        split.validate(&*self.load_corpus()?)?;
        Ok(split)
    }

    /// Generates the corpus, or checks that the external one parses.
    pub fn corpus_stage(&mut self) -> Result<()> {
        if self.config.paths.corpus.is_some() {
            self.corpus = None;
            return self.load_corpus().map(|_| ()).map_err(|e| Error::Stage {
                stage: "corpus".into(),
                message: e.to_string(),
            });
        }
        let spec = self.config.generator.clone().expect("validated: generator or corpus path");
        let lexicon_input: Vec<PathBuf> = self.config.paths.lexicon.iter().cloned().collect();
        self.stage("corpus", &spec, &lexicon_input, |exp| {
            let corpus = generate_corpus_with(&spec, &exp.lexicon()?)?;
            save_corpus(&corpus, exp.out.join(CORPUS_FILE))?;
            exp.corpus = Some(Arc::new(corpus));
            Ok(vec![CORPUS_FILE.into()])
        })
    }

    pub fn split_stage(&mut self) -> Result<()> {
        let fragment = (self.config.seed, self.config.split.ratios);
        let inputs = vec![self.corpus_path()];
        self.stage("split", &fragment, &inputs, |exp| {
            let (ratios, seed) = (exp.config.split.ratios, exp.config.seed);
            let split = split_patients(&*exp.load_corpus()?, ratios, seed)?;
            split.save(exp.out.join(SPLIT_FILE))?;
            Ok(vec![SPLIT_FILE.into()])
        })
    }

    /// Builds the vocabulary from training notes only.
    pub fn vocab_stage(&mut self) -> Result<()> {
        if self.config.paths.vocab.is_some() {
            return Vocabulary::load(self.vocab_path()).map(|_| ()).map_err(|e| Error::Stage {
                stage: "vocab".into(),
                message: e.to_string(),
            });
        }
        let fragment = self.config.vocab.clone();
        let inputs = vec![self.corpus_path(), self.at(SPLIT_FILE)];
        self.stage("vocab", &fragment, &inputs, |exp| {
            let split = exp.load_split()?;
            let corpus = exp.load_corpus()?;
            let view = split.training_view(&corpus)?;
            let texts = view.train.iter().flat_map(|p| p.notes.iter().map(|n| n.text.as_str()));
            let vocab = build_vocab(texts, fragment.min_count, fragment.max_size)?;
            vocab.save(exp.out.join(VOCAB_FILE))?;
            Ok(vec![VOCAB_FILE.into()])
        })
    }

    fn model_config(&self, vocab: &Vocabulary, init_seed: u64) -> ModelConfig {
        ModelConfig {
            vocab_size: vocab.len(),
            seed: init_seed,
            ..self.config.model.clone()
        }
    }

    /// Masked-LM and next-sentence pretraining on training notes. A no-op
    /// when `pretrain.epochs` is zero.
    pub fn pretrain_stage(&mut self) -> Result<()> {
        if self.config.pretrain.epochs == 0 {
            return Ok(());
        }
        let fragment = (self.config.seed, self.config.model.clone(), self.config.pretrain.clone());
        let inputs = vec![self.corpus_path(), self.at(SPLIT_FILE), self.vocab_path()];
        self.stage("pretrain", &fragment, &inputs, |exp| {
            let vocab = Vocabulary::load(exp.vocab_path())?;
            let split = exp.load_split()?;
            let corpus = exp.load_corpus()?;
            let view = split.training_view(&corpus)?;
            let texts: Vec<&str> = view.train.iter().flat_map(|p| p.notes.iter().map(|n| n.text.as_str())).collect();
            let cfg = exp.config.pretrain.clone();
            let seed = mix_seed(&[exp.config.seed, cfg.seed, 0x5052]);
            let instances = make_mlm_instances(&vocab, &texts, cfg.mask_rate, exp.config.model.max_seq_len, seed)?;
            log::info!("pretraining on {} sentence-pair instances", instances.len());
            let mut model = EncoderModel::new(exp.model_config(&vocab, seed))?;
            let curve = pretrain_mlm_nsp(&mut model, &instances, &cfg)?;
            log::info!("pretraining loss by epoch: {curve:?}");
            model.save(exp.out.join(PRETRAINED_FILE))?;
            Ok(vec![PRETRAINED_FILE.into()])
        })
    }

    fn initial_encoder(&self, vocab: &Vocabulary, init_seed: u64) -> Result<EncoderModel> {
        if self.config.pretrain.epochs == 0 {
            return EncoderModel::new(self.model_config(vocab, init_seed));
        }
        let mut model = EncoderModel::load(self.out.join(PRETRAINED_FILE))?;
        if model.config().vocab_size != vocab.len() {
            return Err(Error::ModelMismatch("pretrained encoder and vocabulary disagree".into()));
        }
        model.reset_classifier(init_seed);
        Ok(model)
    }

    /// Trains `key` for one replicate seed, or for every configured seed.
    pub fn train_stage(&mut self, key: ModelKey, seed: Option<u64>) -> Result<()> {
        let seeds = match seed {
            Some(s) if !self.config.train.seeds.contains(&s) => {
                return Err(Error::Config(format!("seed {s} is not in train.seeds")));
            }
            Some(s) => vec![s],
            None => self.config.train.seeds.clone(),
        };
        for s in seeds {
            self.train_one(key, s)?;
        }
        Ok(())
    }

    fn train_one(&mut self, key: ModelKey, seed: u64) -> Result<()> {
        let name = format!("train/{key}/seed-{seed}");
        let hierarchy = match key {
            ModelKey::Single => None,
            ModelKey::Ms(_) => Some(self.config.hierarchy.clone()),
        };
        let fragment = (self.config.seed, self.config.model.clone(), self.config.train.clone(), hierarchy);
        let mut inputs = vec![self.corpus_path(), self.at(SPLIT_FILE), self.vocab_path()];
        if self.config.pretrain.epochs > 0 {
            inputs.push(self.at(PRETRAINED_FILE));
        }
        self.stage(&name, &fragment, &inputs, |exp| {
            let dir = model_dir(key, seed);
            let abs = exp.out.join(&dir);
            if abs.exists() {
                std::fs::remove_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
            }
            std::fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;
            match exp.fit_pipeline(key, seed, &abs) {
                Ok(pipeline) => pipeline.save(&abs)?,
                Err(Error::Divergence(msg)) => {
                    log::warn!("{key} seed {seed} diverged: {msg}");
                    let marker = abs.join(DIVERGED_FILE);
                    std::fs::write(&marker, msg + "\n").map_err(|e| Error::io(&marker, e))?;
                }
                Err(e) => return Err(e),
            }
            files_under(&exp.out, &dir)
        })
    }

    /// Step 1 (and for MS models Step 2) on the training view only.
    fn fit_pipeline(&mut self, key: ModelKey, seed: u64, dir: &Path) -> Result<FrozenPipeline> {
        let vocab = Vocabulary::load(self.vocab_path())?;
        let split = self.load_split()?;
        let init_seed = mix_seed(&[self.config.seed, seed]);
        let encoder = self.initial_encoder(&vocab, init_seed)?;
        let train_cfg = self.config.train.clone();
        let hierarchy = self.config.hierarchy.clone();
        let corpus = self.load_corpus()?;
        let view = split.training_view(&corpus)?;
        let selection = match key {
            ModelKey::Single => NoteSelection::Single,
            ModelKey::Ms(n) => NoteSelection::Longest(n),
        };
        let step1 = train_step1(encoder, &vocab, &view, selection, &train_cfg, seed)?;
        log::info!("{key} seed {seed}: step 1 best epoch {}", step1.best_epoch);
        let ModelKey::Ms(n) = key else {
            return FrozenPipeline::single(vocab, step1.model);
        };
        let encoder = step1.model;
        let reps = |patients: &[&crate::corpus::Patient]| -> Result<Vec<(ConcatRepresentation, crate::corpus::Label)>> {
            Ok(build_concat_all(&encoder, &vocab, patients, n)?
                .into_iter()
                .zip(patients.iter().map(|p| p.label))
                .collect())
        };
        let train = reps(&view.train)?;
        let valid = reps(&view.valid)?;
        if hierarchy.cache_representations {
            let all: Vec<ConcatRepresentation> = train.iter().chain(&valid).map(|(r, _)| r.clone()).collect();
            write_rep_cache(dir.join("reps.jsonl"), &all)?;
        }
        let ms = hierarchy.ms_config(n, mix_seed(&[self.config.seed, seed, n as u64]));
        let step2 = train_step2(&train, &valid, &ms, &hierarchy.train, seed)?;
        log::info!("{key} seed {seed}: step 2 best epoch {}", step2.best_epoch);
        FrozenPipeline::ms(vocab, encoder, step2.model)
    }

    /// The frozen pipeline of one replicate, or `None` if it diverged.
    pub fn load_pipeline(&self, key: ModelKey, seed: u64) -> Result<Option<FrozenPipeline>> {
        let dir = self.out.join(model_dir(key, seed));
        if dir.join(DIVERGED_FILE).exists() {
            return Ok(None);
        }
        FrozenPipeline::load(&dir).map(Some)
    }

    fn trained_inputs(&self) -> Vec<PathBuf> {
        let mut inputs = vec![self.corpus_path(), self.at(SPLIT_FILE)];
        for key in self.config.model_keys() {
            for &s in &self.config.train.seeds {
                let dir = model_dir(key, s);
                match self.manifest.stage(&format!("train/{key}/seed-{s}")) {
                    Some(record) => inputs.extend(record.outputs.iter().map(|a| self.at(&a.path))),
                    None => inputs.push(self.at(dir.join("encoder.ckpt"))),
                }
            }
        }
        inputs
    }

    /// Scores every model and the label-only baselines on the test split.
    pub fn eval_stage(&mut self) -> Result<()> {
        let inputs = self.trained_inputs();
        let fragment = (self.config.seed, self.config.train.seeds.clone(), self.config.model_keys());
        self.stage("eval", &fragment, &inputs, |exp| {
            let split = exp.load_split()?;
            let corpus = exp.load_corpus()?;
            let test = split.test_view(&corpus)?;
            let seeds = exp.config.train.seeds.clone();
            let keys = exp.config.model_keys();
            let root = exp.config.seed;
            let mut written = Vec::new();
            let mut runs: Vec<(ModelKey, u64, Vec<Prediction>)> = Vec::new();
            for key in &keys {
                for &s in &seeds {
                    if let Some(pipeline) = exp.load_pipeline(*key, s)? {
                        let preds = pipeline.predict(&test.patients)?;
                        let rel = predictions_file(*key, s);
                        write_predictions(&exp.out.join(&rel), &preds)?;
                        written.push(rel);
                        runs.push((*key, s, preds));
                    }
                }
            }
            let view = split.training_view(&corpus)?;
            let distribution = LabelDistribution::from_labels(view.train.iter().map(|p| p.label));
            let pairs: Vec<(&str, crate::corpus::Label)> =
                test.patients.iter().map(|p| (p.patient_id.as_str(), p.label)).collect();

            let mut models = BTreeMap::new();
            for (k, kind) in DummyKind::ALL.into_iter().enumerate() {
                let per_run = seeds
                    .iter()
                    .map(|&s| {
                        let preds = dummy_predict(kind, distribution, &pairs, mix_seed(&[root, s, 0xd0 + k as u64]));
                        RunMetrics::evaluate(s, &preds)
                    })
                    .collect::<Result<Vec<_>>>()?;
                models.insert(kind.display_name().to_string(), MetricsReport::from_runs(per_run, Vec::new())?);
            }
            for key in &keys {
                let per_run = runs
                    .iter()
                    .filter(|(k, _, _)| k == key)
                    .map(|(_, s, preds)| RunMetrics::evaluate(*s, preds))
                    .collect::<Result<Vec<_>>>()?;
                let diverged: Vec<u64> = seeds
                    .iter()
                    .copied()
                    .filter(|s| !per_run.iter().any(|r| r.seed == *s))
                    .collect();
                models.insert(row_name(*key), MetricsReport::from_runs(per_run, diverged)?);
            }
            let summary = EvalSummary {
                n_test_patients: pairs.len(),
                test_positive_fraction: pairs.iter().filter(|(_, l)| l.is_positive()).count() as f64 / pairs.len() as f64,
                train_distribution: distribution,
                models,
            };
            write_json(&exp.out.join(METRICS_FILE), &summary)?;
            written.push(METRICS_FILE.into());
            Ok(written)
        })
    }

    /// Keyword ablation of the configured model over every replicate seed.
    pub fn ablate_stage(&mut self) -> Result<()> {
        if !self.config.ablation.enabled {
            return Ok(());
        }
        let key = self.config.ablation.model;
        let mut inputs = self.trained_inputs();
        inputs.extend(self.config.paths.lexicon.iter().cloned());
        let fragment = (self.config.ablation.clone(), self.config.train.seeds.clone());
        self.stage("ablate", &fragment, &inputs, |exp| {
            let split = exp.load_split()?;
            let corpus = exp.load_corpus()?;
            let test = split.test_view(&corpus)?;
            let lexicon = exp.lexicon()?.without(&exp.config.ablation.exclude_topics);
            let mode = exp.config.ablation.f1_mode;
            let mut reports: Vec<ImportanceReport> = Vec::new();
            for s in exp.config.train.seeds.clone() {
                if let Some(pipeline) = exp.load_pipeline(key, s)? {
                    reports.push(ablate_and_score(&pipeline, &test.patients, &lexicon, mode)?);
                }
            }
            if reports.is_empty() {
                return Err(Error::Divergence(format!("every {key} run diverged; nothing to ablate")));
            }
            let summary = ImportanceSummary::from_reports(reports)?;
            let stats = topic_stats(&test.patients, &lexicon);
            write_json(&exp.out.join(IMPORTANCE_FILE), &summary)?;
            write_json(&exp.out.join(TOPIC_STATS_FILE), &stats)?;
            Ok(vec![IMPORTANCE_FILE.into(), TOPIC_STATS_FILE.into()])
        })
    }

    /// Assembles and writes the report from the evaluation and ablation
    /// outputs.
    pub fn report_stage(&mut self) -> Result<ExperimentReport> {
        let mut inputs = vec![self.at(METRICS_FILE)];
        if self.config.ablation.enabled {
            inputs.extend([self.at(IMPORTANCE_FILE), self.at(TOPIC_STATS_FILE)]);
        }
        let report = self.build_report()?;
        let fragment = self.hash.clone();
        self.stage("report", &fragment, &inputs, |exp| {
            let (written, _) = emit_report(&report, &exp.out.join(REPORT_DIR), &ReportFormat::ALL)?;
            Ok(written
                .into_iter()
                .map(|p| p.strip_prefix(&exp.out).map(Path::to_path_buf).unwrap_or(p))
                .collect())
        })?;
        Ok(report)
    }

    /// The report as `report_stage` would write it, without touching disk.
    pub fn build_report(&self) -> Result<ExperimentReport> {
        let eval: EvalSummary = read_json(&self.out.join(METRICS_FILE)).map_err(|e| Error::Stage {
            stage: "report".into(),
            message: format!("no evaluation results ({e}); run `eval` first"),
        })?;
        let (importance, topic_stats) = if self.config.ablation.enabled {
            let imp: ImportanceSummary = read_json(&self.out.join(IMPORTANCE_FILE))?;
            let stats: Vec<TopicStats> = read_json(&self.out.join(TOPIC_STATS_FILE))?;
            (Some(imp), stats)
        } else {
            (None, Vec::new())
        };
        let row = |name: &str| {
            eval.models
                .get(name)
                .map(|m| TableRow::from_report(name, m))
                .ok_or_else(|| Error::Stage {
                    stage: "report".into(),
                    message: format!("no metrics for `{name}`"),
                })
        };
        let mut table1 = DummyKind::ALL
            .iter()
            .map(|k| row(k.display_name()))
            .collect::<Result<Vec<_>>>()?;
        table1.push(row(&row_name(ModelKey::Single))?);
        let table2 = self
            .config
            .model_keys()
            .into_iter()
            .map(|k| row(&row_name(k)))
            .collect::<Result<Vec<_>>>()?;
        let mut notices = Vec::new();
        for (name, m) in &eval.models {
            if !m.diverged_seeds.is_empty() {
                notices.push(format!("{name}: seeds {:?} diverged and are excluded", m.diverged_seeds));
            }
            if m.zero_division {
                notices.push(format!("{name}: a class was never predicted; its precision counts as 0"));
            }
        }
        if importance.as_ref().is_none_or(|i| i.topics.is_empty()) {
            notices.push("radar.csv omitted: the ablation report is empty".into());
        }
        Ok(ExperimentReport {
            format_version: REPORT_VERSION,
            config_hash: self.hash.clone(),
            n_test_patients: eval.n_test_patients,
            test_positive_fraction: eval.test_positive_fraction,
            table1,
            table2,
            models: eval.models,
            importance,
            topic_stats,
            notices,
        })
    }
}

/// Every stage of `config` in dependency order.
pub fn run_experiment(config: ExperimentConfig) -> Result<(RunManifest, ExperimentReport)> {
    let mut experiment = Experiment::new(config)?;
    let report = experiment.run_all()?;
    Ok((experiment.manifest().clone(), report))
}
