//! The study loop: mutate, run the model, score, evaluate relations, report.
//!
//! Every configured test case, and a baseline built from the unmodified
//! training split, goes through the same steps. A failure in one test case
//! turns that case into an inconclusive entry; the remaining cases still run.
//!
//! Output layout under `output_root`:
//!
//! ```text
//! <case>/mutated/     mutated dataset + manifest.json
//! <case>/generated/   model samples
//! <case>/record.json  MetricRecord
//! report.json         StudyReport
//! ```

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{load_dataset, AnnotatedDataset};
use crate::likert::{SessionStore, StdKind};
use crate::metrics::{builtin_classifier, inception_score, load_scores, mean_grey_tint, ISResult, DEFAULT_SPLITS};
use crate::modelio::{list_generated, load_generated, mock_generate, run_model, MockConfig, ModelCommand};
use crate::mrengine::{
    builtin_derivation_log, builtin_mrs, evaluate_all, load_mrs, mr01_for, validate_mr_set,
    with_thresholds, MRSpec, MetricRecord, MutationSummary, Records, Thresholds, BASELINE,
};
use crate::mutate::{apply_test_case, preset_by_name, to_sorted_json, Preset, TestCaseFile, TestCaseSpec, DEFAULT_SEED};
use crate::report::{CaseEntry, Environment, ReferenceRow, StudyReport, REPORT_FILE};
use crate::{seed, TOOL_VERSION};

pub const DEFAULT_CLASSES: usize = 10;
pub const TEST_CASE_PLACEHOLDER: &str = "{test_case}";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Mr(#[from] crate::mrengine::MrError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl PipelineError {
    /// Configuration problems, as opposed to failures while running.
    pub fn is_validation(&self) -> bool {
        matches!(self, PipelineError::Config(_) | PipelineError::Json(_) | PipelineError::Mr(_))
    }
}

/// A preset name such as `"TC03"` or an inline test-case definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TestCaseEntry {
    Preset(String),
    Custom(TestCaseFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Mock(MockConfig),
    Command(ModelCommand),
}

impl Default for ModelChoice {
    fn default() -> Self {
        ModelChoice::Mock(MockConfig::default())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierChoice {
    #[default]
    Builtin,
    /// Path to a scores file; `{test_case}` is replaced by the case name.
    Scores(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset_root: PathBuf,
    pub test_cases: Vec<TestCaseEntry>,
    #[serde(default, with = "model_repr")]
    pub model: ModelChoice,
    #[serde(default, with = "classifier_repr")]
    pub classifier: ClassifierChoice,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default = "default_splits")]
    pub n_splits: usize,
    /// Output classes of the built-in classifier.
    #[serde(default = "default_classes")]
    pub n_classes: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub output_root: PathBuf,
    /// Likert session directory; aggregates are attached by test-case name.
    #[serde(default)]
    pub likert_sessions: Option<PathBuf>,
    /// Additional relations in the MR file format.
    #[serde(default)]
    pub extra_mrs: Option<PathBuf>,
}

fn default_splits() -> usize {
    DEFAULT_SPLITS
}

fn default_classes() -> usize {
    DEFAULT_CLASSES
}

fn default_seed() -> u64 {
    DEFAULT_SEED
}

/// Accepts `"mock"` as shorthand for the default mock.
mod model_repr {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Name(String),
        Full(ModelChoice),
    }

    pub fn serialize<S: Serializer>(v: &ModelChoice, s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ModelChoice, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Name(n) if n == "mock" => Ok(ModelChoice::default()),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown model {n:?}; use \"mock\", {{\"mock\": {{..}}}} or {{\"command\": {{..}}}}"
            ))),
            Repr::Full(m) => Ok(m),
        }
    }
}

/// Accepts `"builtin"` or `{"scores": "path/{test_case}.txt"}`.
mod classifier_repr {
    use super::*;
    use serde::{Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Name(String),
        Full(ClassifierChoice),
    }

    pub fn serialize<S: Serializer>(v: &ClassifierChoice, s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<ClassifierChoice, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Name(n) if n == "builtin" => Ok(ClassifierChoice::Builtin),
            Repr::Name(n) => Err(serde::de::Error::custom(format!(
                "unknown classifier {n:?}; use \"builtin\" or {{\"scores\": \"path\"}}"
            ))),
            Repr::Full(c) => Ok(c),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let cfg: RunConfig = serde_json::from_str(&fs::read_to_string(path)?)?;
        Ok(cfg)
    }

    /// Resolves test-case entries. Presets take the run seed.
    pub fn specs(&self) -> Result<Vec<TestCaseSpec>, PipelineError> {
        if self.test_cases.is_empty() {
            return Err(PipelineError::Config("at least one test case is required".into()));
        }
        let mut names = BTreeSet::new();
        let mut out = Vec::new();
        for entry in &self.test_cases {
            let spec = match entry {
                TestCaseEntry::Preset(name) => {
                    let mut s = preset_by_name(name).map_err(|e| PipelineError::Config(e.to_string()))?;
                    s.seed = self.seed;
                    s
                }
                TestCaseEntry::Custom(file) => file.clone().into_spec().map_err(|e| PipelineError::Config(e.to_string()))?,
            };
            if spec.name == BASELINE || !names.insert(spec.name.clone()) {
                return Err(PipelineError::Config(format!("test case name {:?} is reserved or repeated", spec.name)));
            }
            out.push(spec);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        self.specs()?;
        if self.n_splits == 0 {
            return Err(PipelineError::Config("n_splits must be positive".into()));
        }
        if self.n_classes < 2 {
            return Err(PipelineError::Config("n_classes must be at least 2".into()));
        }
        if let ModelChoice::Command(c) = &self.model {
            c.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        }
        if let ClassifierChoice::Scores(t) = &self.classifier {
            if !t.contains(TEST_CASE_PLACEHOLDER) {
                return Err(PipelineError::Config(format!("scores path must contain {TEST_CASE_PLACEHOLDER}")));
            }
        }
        fs::create_dir_all(&self.output_root)
            .map_err(|e| PipelineError::Config(format!("output root {}: {e}", self.output_root.display())))?;
        Ok(())
    }

    fn describe_model(&self) -> String {
        match &self.model {
            ModelChoice::Mock(m) => format!(
                "mock (k_desat {}, k_is_noise {}, seed {}, size {})",
                m.k_desat, m.k_is_noise, m.seed, m.size
            ),
            ModelChoice::Command(c) => format!("command `{}` (timeout {} s)", c.template, c.timeout_secs),
        }
    }

    fn describe_classifier(&self) -> String {
        match &self.classifier {
            ClassifierChoice::Builtin => format!("builtin ({} classes, seed {})", self.n_classes, self.seed),
            ClassifierChoice::Scores(t) => format!("scores file {t}"),
        }
    }
}

type CaseResult<T> = Result<T, Box<dyn std::error::Error + Send + Sync>>;

fn clear_dir(dir: &Path) -> std::io::Result<()> {
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    Ok(())
}

fn run_case(cfg: &RunConfig, ds: &AnnotatedDataset, spec: &TestCaseSpec, baseline: bool) -> CaseResult<MetricRecord> {
    let case_dir = cfg.output_root.join(&spec.name);
    let mutated = case_dir.join("mutated");
    let generated = case_dir.join("generated");
    clear_dir(&mutated)?;
    clear_dir(&generated)?;
    let manifest = apply_test_case(ds, spec, &mutated)?;
    tracing::info!(
        case = %spec.name,
        placed = manifest.placements.len(),
        skipped = manifest.skips.len(),
        "mutation done"
    );

    let images = match &cfg.model {
        ModelChoice::Mock(m) => {
            let mock = MockConfig { seed: seed::derive(cfg.seed, m.seed), ..*m };
            mock_generate(&manifest, &mock, &generated)?
        }
        ModelChoice::Command(c) => run_model(c, &mutated, &generated)?.images,
    };
    let images = if images.is_empty() { list_generated(&generated)? } else { images };
    let rasters = load_generated(&images)?;
    let tint = mean_grey_tint(rasters.iter().map(|(_, img)| img))?;
    let scores = match &cfg.classifier {
        ClassifierChoice::Builtin => builtin_classifier(&rasters, cfg.n_classes, cfg.seed)?,
        ClassifierChoice::Scores(t) => load_scores(Path::new(&t.replace(TEST_CASE_PLACEHOLDER, &spec.name)))?,
    };
    let is_result: ISResult = inception_score(&scores, cfg.n_splits)?;

    let mut record = MetricRecord {
        test_case: spec.name.clone(),
        is_result,
        tint,
        likert_semantic: None,
        likert_realistic: None,
        n_generated: rasters.len(),
        mutation: (!baseline).then(|| MutationSummary {
            object_class: spec.object_class(),
            proportion: spec.proportion,
            occlusion_budget: spec.occlusion_budget,
            recolor: spec.recolor,
        }),
    };
    if let Some(dir) = &cfg.likert_sessions {
        attach_likert(&mut record, dir)?;
    }
    record.validate()?;
    fs::write(case_dir.join("record.json"), to_sorted_json(&record)?)?;
    Ok(record)
}

/// Uses the most recent session (highest id) for the record's test case.
fn attach_likert(record: &mut MetricRecord, dir: &Path) -> CaseResult<()> {
    let store = SessionStore::open(dir)?;
    if let Some(session) = store.list().into_iter().rev().find(|s| s.test_case == record.test_case) {
        let agg = store.aggregate(&session.id, StdKind::Sample)?;
        record.likert_semantic = agg.scale("semantic");
        record.likert_realistic = agg.scale("realistic");
    }
    Ok(())
}

fn relations(cfg: &RunConfig, specs: &[TestCaseSpec]) -> Result<Vec<MRSpec>, PipelineError> {
    let presets: BTreeSet<String> = Preset::ALL.iter().map(|p| p.to_string()).collect();
    let mut mrs = builtin_mrs();
    for spec in specs.iter().filter(|s| !presets.contains(&s.name)) {
        mrs.push(mr01_for(&format!("MR01/{}", spec.name), &spec.name));
    }
    if let Some(path) = &cfg.extra_mrs {
        mrs.extend(load_mrs(path)?);
    }
    let mrs = with_thresholds(mrs, cfg.thresholds);
    validate_mr_set(&mrs)?;
    Ok(mrs)
}

fn entry_for(name: &str, result: CaseResult<MetricRecord>) -> CaseEntry {
    match result {
        Ok(record) => CaseEntry::completed(record),
        Err(e) => {
            tracing::warn!(case = name, error = %e, "test case inconclusive");
            CaseEntry::inconclusive(name, e.to_string())
        }
    }
}

/// Runs the whole study and writes `report.json` under the output root.
pub fn run_pipeline(cfg: &RunConfig) -> Result<StudyReport, PipelineError> {
    cfg.validate()?;
    let specs = cfg.specs()?;
    let mrs = relations(cfg, &specs)?;
    let ds = load_dataset(&cfg.dataset_root)?;

    let base_spec = TestCaseSpec::identity(BASELINE, cfg.seed);
    let baseline = entry_for(BASELINE, run_case(cfg, &ds, &base_spec, true));
    let test_cases: Vec<CaseEntry> = specs
        .iter()
        .map(|s| entry_for(&s.name, run_case(cfg, &ds, s, false)))
        .collect();

    let mut report = StudyReport {
        environment: Environment {
            tool_version: TOOL_VERSION.to_string(),
            seed: cfg.seed,
            thresholds: cfg.thresholds,
            n_splits: cfg.n_splits,
            model: cfg.describe_model(),
            classifier: cfg.describe_classifier(),
        },
        references: Vec::new(),
        baseline,
        test_cases,
        verdicts: Vec::new(),
        anomalies: Vec::new(),
        derivation: Default::default(),
    };
    evaluate_report(&mut report, &mrs)?;
    fs::write(cfg.output_root.join(REPORT_FILE), report.to_json()?)?;
    Ok(report)
}

fn evaluate_report(report: &mut StudyReport, mrs: &[MRSpec]) -> Result<(), PipelineError> {
    let records: Records = report.records();
    let (verdicts, anomalies) = evaluate_all(mrs, &records);
    report.derivation = builtin_derivation_log(mrs, &verdicts)?;
    report.verdicts = verdicts;
    report.anomalies = anomalies;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct Table1Fixture {
    references: Vec<ReferenceRow>,
    records: Vec<MetricRecord>,
}

const TABLE1_FIXTURE: &str = include_str!("../fixtures/table1.json");

/// Published study results as records. Tint values are an ordinal encoding
/// of qualitative visual observations, not measurements.
pub fn table1_records() -> (Vec<ReferenceRow>, Records) {
    let f: Table1Fixture = serde_json::from_str(TABLE1_FIXTURE).expect("bundled fixture parses");
    let records = f.records.into_iter().map(|r| (r.test_case.clone(), r)).collect();
    (f.references, records)
}

/// Evaluates the built-in relations on the published results, default thresholds.
pub fn replay_table1() -> StudyReport {
    let (references, records) = table1_records();
    let mut records = records;
    let baseline = CaseEntry::completed(records.remove(BASELINE).expect("fixture has a baseline"));
    let mut test_cases: Vec<CaseEntry> = records.into_values().map(CaseEntry::completed).collect();
    test_cases.sort_by(|a, b| a.name.cmp(&b.name));
    let thresholds = Thresholds::default();
    let mut report = StudyReport {
        environment: Environment {
            tool_version: TOOL_VERSION.to_string(),
            seed: 0,
            thresholds,
            n_splits: DEFAULT_SPLITS,
            model: "published results".into(),
            classifier: "published results".into(),
        },
        references,
        baseline,
        test_cases,
        verdicts: Vec::new(),
        anomalies: Vec::new(),
        derivation: Default::default(),
    };
    evaluate_report(&mut report, &with_thresholds(builtin_mrs(), thresholds)).expect("built-in relations are valid");
    report
}
