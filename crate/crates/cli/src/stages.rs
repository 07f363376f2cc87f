//! Pipeline stages. Each reads its inputs from the run directory and writes its artifacts
//! there; unchanged stages are skipped.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use nlurank::calibration::{compare_schemes, curves_tsv, ComparisonTable, SchemeRun};
use nlurank::components::{train_components, ComponentBank, DomainComponents};
use nlurank::corpus::{load_corpus, read_jsonl, write_jsonl, Utterance};
use nlurank::decode::{EvaluationReport, NBestRecord};
use nlurank::experiment::{
    desync_experiment, evaluate_prepared, generate_splits, prepare, relative_improvement,
    rerank_training_sets, train_rerankers, tune_loss, ExperimentConfig, LossTuning, Splits,
    Workbench,
};
use nlurank::hypothesis::HypothesisRecord;
use nlurank::reranker::{LossConfig, TrainedReranker, TrainingScheme, WeightFile, WeightVector};
use nlurank::schema::SchemaSet;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::cache::Stage;

pub const SPLITS: [&str; 3] = ["train", "dev", "test"];

/// Resolved settings for one run directory.
pub struct Run {
    pub root: PathBuf,
    pub cfg: ExperimentConfig,
    pub schemas: SchemaSet,
    schema_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeEvaluation {
    pub scheme: TrainingScheme,
    pub report: EvaluationReport,
    /// Relative SemER improvement over the baseline in percent, when the baseline ran.
    pub relative_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub seed: u64,
    pub schemes: Vec<SchemeEvaluation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningFile {
    pub seed: u64,
    /// Absent when the search was off or R3 was not trained.
    pub tuning: Option<LossTuning>,
    /// Loss settings R3 was trained with.
    pub loss: LossConfig,
}

fn corpus_path(split: &str) -> PathBuf {
    PathBuf::from("corpus").join(format!("{split}.jsonl"))
}

fn component_path(domain: &str) -> PathBuf {
    PathBuf::from("components").join(format!("{domain}.json"))
}

fn weight_path(scheme: TrainingScheme, domain: &str) -> PathBuf {
    PathBuf::from("weights").join(scheme.as_str()).join(format!("{domain}.json"))
}

fn nbest_path(scheme: TrainingScheme) -> PathBuf {
    PathBuf::from("nbest").join(format!("{scheme}.jsonl"))
}

const TUNING_REPORT: &str = "reports/tuning.json";
const EVALUATION_REPORT: &str = "reports/evaluation.json";
const CALIBRATION_REPORT: &str = "reports/calibration.json";
const DESYNC_REPORT: &str = "reports/desync.json";
const HYPOTHESIS_DUMP: &str = "hypotheses/dev.jsonl";

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

impl Run {
    pub fn new(root: PathBuf, cfg: ExperimentConfig, schemas: SchemaSet) -> Result<Self> {
        cfg.validate(&schemas)?;
        let schema_text = schemas.to_toml_string()?;
        std::fs::create_dir_all(&root).with_context(|| format!("creating {}", root.display()))?;
        Ok(Self {
            root,
            cfg,
            schemas,
            schema_text,
        })
    }

    fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.root.join(rel)
    }

    /// The named config fields plus the schema text.
    fn settings(&self, fields: &[&str]) -> Result<Value> {
        let all = serde_json::to_value(&self.cfg)?;
        let mut out = Map::new();
        for f in fields {
            let v = all.get(*f).with_context(|| format!("unknown config field {f}"))?;
            out.insert((*f).to_string(), v.clone());
        }
        out.insert("schemas".into(), Value::String(self.schema_text.clone()));
        Ok(Value::Object(out))
    }

    /// Fails with a pointer to the producing stage when an input is missing.
    fn require(&self, inputs: &[PathBuf]) -> Result<()> {
        for rel in inputs {
            if !self.path(rel).exists() {
                let producer = match rel.components().next().and_then(|c| c.as_os_str().to_str()) {
                    Some("corpus") => "gen-corpus",
                    Some("components") => "train-components",
                    Some("weights") | Some("reports") => "train-reranker",
                    Some("nbest") => "evaluate",
                    _ => "the earlier stages",
                };
                bail!("{} is missing; run {producer} first", self.path(rel).display());
            }
        }
        Ok(())
    }

    fn domains(&self) -> Vec<String> {
        self.schemas.names().map(str::to_string).collect()
    }

    fn component_inputs(&self) -> Vec<PathBuf> {
        self.domains().iter().map(|d| component_path(d)).collect()
    }

    fn load_split(&self, split: &str) -> Result<Vec<Utterance>> {
        let path = self.path(corpus_path(split));
        if !path.exists() {
            bail!("{} is missing; run gen-corpus first", path.display());
        }
        Ok(load_corpus(&path, &self.schemas)?)
    }

    fn load_components(&self) -> Result<ComponentBank> {
        let mut domains = BTreeMap::new();
        for d in self.domains() {
            let path = self.path(component_path(&d));
            if !path.exists() {
                bail!("{} is missing; run train-components first", path.display());
            }
            let c: DomainComponents = read_json(&path)?;
            if c.domain != d {
                bail!("{} holds components for {}", path.display(), c.domain);
            }
            domains.insert(d, c);
        }
        Ok(ComponentBank { domains })
    }

    fn load_weight_files(&self, scheme: TrainingScheme) -> Result<BTreeMap<String, WeightFile>> {
        self.domains()
            .into_iter()
            .map(|d| {
                let path = self.path(weight_path(scheme, &d));
                if !path.exists() {
                    bail!("{} is missing; run train-reranker first", path.display());
                }
                let file = WeightFile::load(&path).with_context(|| format!("loading {}", path.display()))?;
                if file.domain != d || file.scheme != scheme {
                    bail!("{} holds {} weights for {}", path.display(), file.scheme, file.domain);
                }
                Ok((d, file))
            })
            .collect()
    }

    fn load_weights(&self, scheme: TrainingScheme) -> Result<BTreeMap<String, WeightVector>> {
        Ok(self
            .load_weight_files(scheme)?
            .into_iter()
            .map(|(d, f)| (d, f.weights()))
            .collect())
    }

    pub fn gen_corpus(&self) -> Result<bool> {
        let settings = self.settings(&["seed", "train_size", "dev_size", "test_size", "miscalibration"])?;
        Stage::new(&self.root, "gen-corpus", &settings, &[])?.run(|| {
            let Splits { train, dev, test } = generate_splits(&self.schemas, &self.cfg)?;
            let mut written = Vec::new();
            for (split, data) in SPLITS.iter().zip([&train, &dev, &test]) {
                let rel = corpus_path(split);
                ensure_parent(&self.path(&rel))?;
                write_jsonl(&self.path(&rel), data)?;
                written.push(rel);
            }
            Ok(written)
        })
    }

    pub fn train_components(&self) -> Result<bool> {
        let settings = self.settings(&["maxent"])?;
        let inputs = [corpus_path("train")];
        self.require(&inputs)?;
        Stage::new(&self.root, "train-components", &settings, &inputs)?.run(|| {
            let train = self.load_split("train")?;
            let bank = train_components(&self.schemas, &train, &self.cfg.maxent)?;
            let mut written = Vec::new();
            for (domain, c) in &bank.domains {
                let rel = component_path(domain);
                ensure_parent(&self.path(&rel))?;
                std::fs::write(self.path(&rel), serde_json::to_string(c)? + "\n")?;
                written.push(rel);
            }
            Ok(written)
        })
    }

    pub fn train_reranker(&self) -> Result<bool> {
        let settings = self.settings(&[
            "seed",
            "beams",
            "miscalibration",
            "schemes",
            "loss",
            "optimizer",
            "tuning",
        ])?;
        let mut inputs = vec![corpus_path("dev")];
        inputs.extend(self.component_inputs());
        self.require(&inputs)?;
        Stage::new(&self.root, "train-reranker", &settings, &inputs)?.run(|| {
            let dev_utts = self.load_split("dev")?;
            let bank = self.load_components()?;
            let decode = self.cfg.decode_config();
            let dev = prepare(&dev_utts, &self.schemas, &bank, &decode)?;
            let mut written = Vec::new();

            let dump = self.path(HYPOTHESIS_DUMP);
            ensure_parent(&dump)?;
            let mut w = std::io::BufWriter::new(std::fs::File::create(&dump)?);
            for (u, per_domain) in dev.utterances.iter().zip(&dev.hypotheses) {
                for (_, hyps) in per_domain {
                    for h in hyps {
                        serde_json::to_writer(&mut w, &HypothesisRecord::new(&u.id, h))?;
                        w.write_all(b"\n")?;
                    }
                }
            }
            w.flush()?;
            written.push(PathBuf::from(HYPOTHESIS_DUMP));

            let tuning = if self.cfg.schemes.contains(&TrainingScheme::R3) {
                tune_loss(&dev, &self.cfg)?
            } else {
                None
            };
            let mut train_cfg = self.cfg.train_config();
            if let Some(t) = &tuning {
                train_cfg.loss = t.apply(train_cfg.loss);
            }
            write_json(
                &self.path(TUNING_REPORT),
                &TuningFile {
                    seed: self.cfg.seed,
                    tuning,
                    loss: train_cfg.loss,
                },
            )?;
            written.push(PathBuf::from(TUNING_REPORT));

            let sets = rerank_training_sets(&dev, None)?;
            for &scheme in &self.cfg.schemes {
                for (domain, trained) in train_rerankers(scheme, &sets, &train_cfg)? {
                    let rel = weight_path(scheme, &domain);
                    ensure_parent(&self.path(&rel))?;
                    WeightFile::new(&trained, &train_cfg).save(&self.path(&rel))?;
                    written.push(rel);
                }
            }
            Ok(written)
        })
    }

    pub fn evaluate(&self) -> Result<bool> {
        let settings = self.settings(&["beams", "miscalibration", "n_best", "schemes", "rejection"])?;
        let mut inputs = vec![corpus_path("test")];
        inputs.extend(self.component_inputs());
        for &scheme in &self.cfg.schemes {
            inputs.extend(self.domains().iter().map(|d| weight_path(scheme, d)));
        }
        self.require(&inputs)?;
        Stage::new(&self.root, "evaluate", &settings, &inputs)?.run(|| {
            let test_utts = self.load_split("test")?;
            let bank = self.load_components()?;
            let decode = self.cfg.decode_config();
            let test = prepare(&test_utts, &self.schemas, &bank, &decode)?;
            let mut written = Vec::new();
            let mut schemes = Vec::new();
            for &scheme in &self.cfg.schemes {
                let weights = self.load_weights(scheme)?;
                let (report, nbests, _) = evaluate_prepared(&test, &weights, &decode)?;
                let rel = nbest_path(scheme);
                ensure_parent(&self.path(&rel))?;
                let records: Vec<NBestRecord> = nbests.iter().map(NBestRecord::from).collect();
                write_jsonl(&self.path(&rel), &records)?;
                written.push(rel);
                schemes.push(SchemeEvaluation {
                    scheme,
                    report,
                    relative_improvement: None,
                });
            }
            if let Some(base) = schemes
                .iter()
                .find(|s| s.scheme == TrainingScheme::Baseline)
                .map(|s| s.report.semer)
            {
                for s in &mut schemes {
                    s.relative_improvement = relative_improvement(base, s.report.semer).ok();
                }
            }
            write_json(
                &self.path(EVALUATION_REPORT),
                &EvaluationFile {
                    seed: self.cfg.seed,
                    schemes,
                },
            )?;
            written.push(PathBuf::from(EVALUATION_REPORT));
            Ok(written)
        })
    }

    pub fn calib_report(&self) -> Result<bool> {
        let settings = self.settings(&["schemes"])?;
        let mut inputs = vec![corpus_path("test")];
        inputs.extend(self.cfg.schemes.iter().map(|&s| nbest_path(s)));
        self.require(&inputs)?;
        Stage::new(&self.root, "calib-report", &settings, &inputs)?.run(|| {
            let test = self.load_split("test")?;
            let mut runs = Vec::new();
            for &scheme in &self.cfg.schemes {
                let nbests: Vec<NBestRecord> = read_jsonl(&self.path(nbest_path(scheme)))?;
                if nbests.len() != test.len() {
                    bail!("{} has {} lines for {} test utterances", nbest_path(scheme).display(), nbests.len(), test.len());
                }
                let records = nbests
                    .iter()
                    .zip(&test)
                    .map(|(nb, u)| nb.top_record(u))
                    .collect::<nlurank::Result<Vec<_>>>()?;
                runs.push(SchemeRun {
                    scheme: scheme.to_string(),
                    records,
                });
            }
            let table: ComparisonTable = compare_schemes(&runs)?;
            let mut written = vec![PathBuf::from(CALIBRATION_REPORT)];
            write_json(&self.path(CALIBRATION_REPORT), &table)?;
            for (scheme, reports) in &table.curves {
                let rel = PathBuf::from("curves").join(format!("{scheme}.tsv"));
                ensure_parent(&self.path(&rel))?;
                std::fs::write(self.path(&rel), curves_tsv(reports))?;
                written.push(rel);
            }
            Ok(written)
        })
    }

    /// R3 loss settings: the tuned ones when a tuning report exists, else the configured ones.
    fn r3_loss(&self) -> Result<(LossConfig, Vec<PathBuf>)> {
        let path = self.path(TUNING_REPORT);
        if path.exists() {
            let t: TuningFile = read_json(&path)?;
            Ok((t.loss, vec![PathBuf::from(TUNING_REPORT)]))
        } else {
            Ok((self.cfg.loss, Vec::new()))
        }
    }

    /// Full-data R3 weights from train-reranker, when they were trained with `loss`.
    fn r3_reference(&self, loss: &LossConfig) -> Result<Option<BTreeMap<String, TrainedReranker>>> {
        let present = self
            .domains()
            .iter()
            .all(|d| self.path(weight_path(TrainingScheme::R3, d)).exists());
        if !present {
            return Ok(None);
        }
        let files = self.load_weight_files(TrainingScheme::R3)?;
        let matches = files.values().all(|f| {
            f.training.loss == *loss && f.training.optimizer == self.cfg.optimizer && f.training.seed == self.cfg.seed
        });
        Ok(matches.then(|| files.into_iter().map(|(d, f)| (d, f.trained())).collect()))
    }

    pub fn desync(&self) -> Result<bool> {
        let (loss, mut inputs) = self.r3_loss()?;
        let reference = self.r3_reference(&loss)?;
        if reference.is_some() {
            inputs.extend(self.domains().iter().map(|d| weight_path(TrainingScheme::R3, d)));
        }
        let mut settings = self.settings(&["seed", "beams", "miscalibration", "optimizer", "desync_fraction"])?;
        settings["r3_loss"] = json!(loss);
        inputs.extend([corpus_path("dev"), corpus_path("test")]);
        inputs.extend(self.component_inputs());
        self.require(&inputs)?;
        Stage::new(&self.root, "desync-experiment", &settings, &inputs)?.run(|| {
            let bench = Workbench {
                splits: Splits {
                    train: Vec::new(),
                    dev: self.load_split("dev")?,
                    test: self.load_split("test")?,
                },
                components: self.load_components()?,
            };
            let report = desync_experiment(&self.schemas, &self.cfg, &bench, loss, reference.as_ref())?;
            write_json(&self.path(DESYNC_REPORT), &report)?;
            Ok(vec![PathBuf::from(DESYNC_REPORT)])
        })
    }

    pub fn write_config(&self) -> Result<()> {
        write_json(&self.path("config.json"), &self.cfg)
    }

    pub fn run_all(&self) -> Result<()> {
        self.write_config()?;
        self.gen_corpus()?;
        self.train_components()?;
        self.train_reranker()?;
        self.evaluate()?;
        self.calib_report()?;
        self.desync()?;
        Ok(())
    }

    pub fn calibration(&self) -> Result<ComparisonTable> {
        read_json(&self.path(CALIBRATION_REPORT))
    }

    pub fn evaluation(&self) -> Result<EvaluationFile> {
        read_json(&self.path(EVALUATION_REPORT))
    }

    pub fn desync_delta(&self) -> Result<f64> {
        let v: Value = read_json(&self.path(DESYNC_REPORT))?;
        v["relative_semer_delta"]
            .as_f64()
            .context("desync report without relative_semer_delta")
    }
}
