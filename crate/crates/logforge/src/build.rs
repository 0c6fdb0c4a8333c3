//! The dataset build: split every source, build pairs, hold out test examples.

use std::collections::{BTreeMap, BTreeSet};

use logforge_core::instruct::{
    anomaly_pair_id, apply_calibration, build_anomaly_pairs, build_parsing_pairs,
    decomposition_pairs, BuildError, DecompositionResult, PromptTemplate,
};
use logforge_core::split::{
    balanced_random_subset, chronological_split, ratio_split, SplitError, SplitKind, SplitSpec,
};
use logforge_core::{
    Capability, Fraction, InstructionPair, LabeledTemplate, LogRecord, TemplateAnnotation,
};

use crate::dataset::{EvalExample, ManifestMeta, SplitRecord};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{domain}: {source}")]
    Split {
        domain: String,
        #[source]
        source: SplitError,
    },
    #[error(transparent)]
    Build(#[from] BuildError),
    #[error("no anomaly subset size configured for domain {0}")]
    MissingCount(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BuildSettings {
    pub seed: u64,
    pub parsing_fraction: Fraction,
    pub anomaly_fraction: Fraction,
    /// Subset size per anomaly domain.
    pub anomaly_counts: BTreeMap<String, usize>,
    pub irs_train_fraction: Fraction,
    pub irs_domain: String,
    pub parsing_template: PromptTemplate,
    pub anomaly_template: PromptTemplate,
}

impl Default for BuildSettings {
    fn default() -> Self {
        BuildSettings {
            seed: 42,
            parsing_fraction: Fraction::new(1, 10).expect("valid"),
            anomaly_fraction: Fraction::new(1, 10).expect("valid"),
            anomaly_counts: BTreeMap::new(),
            irs_train_fraction: Fraction::new(4, 5).expect("valid"),
            irs_domain: "Apache".into(),
            parsing_template: PromptTemplate::default_parsing(),
            anomaly_template: PromptTemplate::default_anomaly(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct IrsSource {
    pub results: Vec<DecompositionResult>,
    pub exclusions: BTreeSet<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BuildSources {
    pub parsing: Vec<(String, Vec<(LogRecord, TemplateAnnotation)>)>,
    pub anomaly: Vec<(String, Vec<LabeledTemplate>)>,
    pub irs: Option<IrsSource>,
}

#[derive(Debug, Clone, Default)]
pub struct BuiltDataset {
    pub train: Vec<InstructionPair>,
    pub meta: ManifestMeta,
}

impl BuiltDataset {
    pub fn test(&self) -> &[EvalExample] {
        &self.meta.test
    }
}

fn split_err(domain: &str) -> impl FnOnce(SplitError) -> PipelineError + '_ {
    move |source| PipelineError::Split {
        domain: domain.to_string(),
        source,
    }
}

fn ids(pairs: &[InstructionPair]) -> Vec<String> {
    pairs.iter().map(|p| p.id.clone()).collect()
}

pub fn build_dataset(
    sources: &BuildSources,
    settings: &BuildSettings,
) -> Result<BuiltDataset, PipelineError> {
    let mut out = BuiltDataset::default();
    out.meta.seed = settings.seed;
    let mut templates = Vec::new();

    if !sources.parsing.is_empty() {
        templates.push(settings.parsing_template.clone());
    }
    for (domain, rows) in &sources.parsing {
        let (train, test) =
            chronological_split(rows, settings.parsing_fraction).map_err(split_err(domain))?;
        let pairs = build_parsing_pairs(train, &settings.parsing_template)?;
        let examples: Vec<EvalExample> = test
            .iter()
            .map(|(r, t)| EvalExample {
                id: format!("parsing-{}-{}", r.domain, r.line_id),
                capability: Capability::Parsing,
                domain: domain.clone(),
                source: format!("{}:{}", r.domain, r.line_id),
                instruction: settings.parsing_template.render(&r.content),
                input: String::new(),
                reference: t.template.clone(),
                log: r.content.clone(),
            })
            .collect();
        out.meta.splits.push(SplitRecord {
            capability: Capability::Parsing,
            domain: domain.clone(),
            spec: SplitSpec {
                kind: SplitKind::Chronological,
                train_fraction: settings.parsing_fraction,
                abnormal_fraction_target: None,
                seed: settings.seed,
            },
            train_ids: ids(&pairs),
            test_ids: examples.iter().map(|e| e.id.clone()).collect(),
            train_keys: Vec::new(),
        });
        out.train.extend(pairs);
        out.meta.test.extend(examples);
    }

    if !sources.anomaly.is_empty() {
        templates.push(settings.anomaly_template.clone());
    }
    for (domain, items) in &sources.anomaly {
        let count = *settings
            .anomaly_counts
            .get(domain)
            .ok_or_else(|| PipelineError::MissingCount(domain.clone()))?;
        let (subset, remainder) =
            balanced_random_subset(items, count, settings.anomaly_fraction, settings.seed)
                .map_err(split_err(domain))?;
        let pairs = build_anomaly_pairs(&subset, &settings.anomaly_template)?;
        let examples: Vec<EvalExample> = remainder
            .iter()
            .map(|t| EvalExample {
                id: anomaly_pair_id(t),
                capability: Capability::Anomaly,
                domain: domain.clone(),
                source: format!("{}:{}", t.domain, t.template),
                instruction: settings.anomaly_template.render(&t.template),
                input: String::new(),
                reference: t.label.as_str().to_string(),
                log: t.template.clone(),
            })
            .collect();
        out.meta.splits.push(SplitRecord {
            capability: Capability::Anomaly,
            domain: domain.clone(),
            spec: SplitSpec {
                kind: SplitKind::BalancedRandom,
                train_fraction: Fraction::new(count as u64, items.len().max(1) as u64)
                    .expect("count never exceeds the item count here"),
                abnormal_fraction_target: Some(settings.anomaly_fraction),
                seed: settings.seed,
            },
            train_ids: ids(&pairs),
            test_ids: examples.iter().map(|e| e.id.clone()).collect(),
            train_keys: subset.iter().map(|t| t.template.clone()).collect(),
        });
        out.train.extend(pairs);
        out.meta.test.extend(examples);
    }

    if let Some(irs) = &sources.irs {
        let all: Vec<InstructionPair> = irs
            .results
            .iter()
            .flat_map(|r| decomposition_pairs(r, &settings.irs_domain))
            .collect();
        let (kept, _) = apply_calibration(all, &irs.exclusions)?;
        for capability in Capability::IRS {
            let pairs: Vec<InstructionPair> = kept
                .iter()
                .filter(|p| p.capability == capability)
                .cloned()
                .collect();
            let removed = irs.results.len() - pairs.len();
            out.meta.calibration_removed.insert(capability, removed);
            let (train, test) = ratio_split(&pairs, settings.irs_train_fraction, settings.seed);
            let examples: Vec<EvalExample> = test
                .iter()
                .map(|p| EvalExample {
                    id: p.id.clone(),
                    capability,
                    domain: p.domain.clone(),
                    source: p.provenance.source.clone(),
                    instruction: p.instruction.clone(),
                    input: p.input.clone(),
                    reference: p.response.clone(),
                    log: p.input.clone(),
                })
                .collect();
            out.meta.splits.push(SplitRecord {
                capability,
                domain: settings.irs_domain.clone(),
                spec: SplitSpec {
                    kind: SplitKind::RatioRandom,
                    train_fraction: settings.irs_train_fraction,
                    abnormal_fraction_target: None,
                    seed: settings.seed,
                },
                train_ids: ids(&train),
                test_ids: ids(&test),
                train_keys: Vec::new(),
            });
            out.train.extend(train);
            out.meta.test.extend(examples);
        }
    }

    out.meta.prompt_templates = templates;
    Ok(out)
}
