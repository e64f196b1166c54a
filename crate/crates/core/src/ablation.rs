//! Fusion-strategy, language and attribute ablations.

use std::collections::HashMap;

use crate::data::{Dialogue, EmotionLabel};
use crate::encoder::{EncoderConfig, LanguageFilter};
use crate::error::{Error, Result};
use crate::extract::{CsCache, EffectType};
use crate::fusion::FusionStrategy;
use crate::metrics::EvalReport;
use crate::train::{evaluate, split_instances, train, TrainConfig};

/// One trained-and-evaluated variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Condition {
    pub name: String,
    pub strategy: FusionStrategy,
    pub attributes: Vec<EffectType>,
    pub filter: LanguageFilter,
}

/// Which groups of conditions to run.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AblationPlan {
    pub strategies: Vec<FusionStrategy>,
    /// Restricted-input coffee rows; `All` entries are ignored.
    pub languages: Vec<LanguageFilter>,
    /// Coffee rows with a single attribute each, named `coffee_<attr>`.
    pub single_attributes: Vec<EffectType>,
    /// Coffee rows for every effect type, named `attr_<attr>`.
    pub sweep: bool,
}

impl Default for AblationPlan {
    fn default() -> Self {
        Self {
            strategies: FusionStrategy::ALL.to_vec(),
            languages: vec![LanguageFilter::EnglishOnly, LanguageFilter::HindiOnly],
            single_attributes: vec![EffectType::XWant, EffectType::OReact],
            sweep: true,
        }
    }
}

impl AblationPlan {
    /// Only the given strategy rows.
    pub fn strategies(strategies: &[FusionStrategy]) -> Self {
        Self {
            strategies: strategies.to_vec(),
            languages: Vec::new(),
            single_attributes: Vec::new(),
            sweep: false,
        }
    }

    /// Expand into conditions. Strategy rows use `base_attributes`.
    pub fn conditions(&self, base_attributes: &[EffectType]) -> Vec<Condition> {
        let mut out = Vec::new();
        for &strategy in &self.strategies {
            out.push(Condition {
                name: strategy.name().to_string(),
                strategy,
                attributes: base_attributes.to_vec(),
                filter: LanguageFilter::All,
            });
        }
        for &filter in &self.languages {
            let suffix = match filter {
                LanguageFilter::All => continue,
                LanguageFilter::EnglishOnly => "eng",
                LanguageFilter::HindiOnly => "hin",
            };
            out.push(Condition {
                name: format!("coffee_{suffix}"),
                strategy: FusionStrategy::Coffee,
                attributes: base_attributes.to_vec(),
                filter,
            });
        }
        for &attr in &self.single_attributes {
            out.push(Condition {
                name: format!("coffee_{}", attr.name()),
                strategy: FusionStrategy::Coffee,
                attributes: vec![attr],
                filter: LanguageFilter::All,
            });
        }
        if self.sweep {
            for attr in EffectType::ALL {
                out.push(Condition {
                    name: format!("attr_{}", attr.name()),
                    strategy: FusionStrategy::Coffee,
                    attributes: vec![attr],
                    filter: LanguageFilter::All,
                });
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub condition: Condition,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// Per-class F1 and weighted F1 per condition, four decimals.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("condition");
        for l in EmotionLabel::ALL {
            out.push(',');
            out.push_str(l.name());
        }
        out.push_str(",weighted_f1\n");
        for row in &self.rows {
            out.push_str(&row.condition.name);
            for f in row.report.per_class_f1 {
                out.push_str(&format!(",{f:.4}"));
            }
            out.push_str(&format!(",{:.4}\n", row.report.weighted_f1));
        }
        out
    }
}

/// Train each condition from `base` and score it on the test split.
/// Conditions that resolve to the same configuration are trained once.
pub fn run_ablation(
    corpus: &[Dialogue],
    base: &TrainConfig,
    enc: &EncoderConfig,
    cs: Option<&CsCache>,
    plan: &AblationPlan,
) -> Result<AblationTable> {
    let (_, _, test) = split_instances(corpus, base.context_window)?;
    if test.is_empty() {
        return Err(Error::EmptyInput("test split has no instances".into()));
    }
    let mut memo: HashMap<(FusionStrategy, Vec<EffectType>, LanguageFilter), EvalReport> =
        HashMap::new();
    let mut table = AblationTable::default();
    for condition in plan.conditions(&base.attributes) {
        let key = (
            condition.strategy,
            condition.attributes.clone(),
            condition.filter,
        );
        let report = match memo.get(&key) {
            Some(r) => r.clone(),
            None => {
                let cfg = TrainConfig {
                    strategy: condition.strategy,
                    attributes: condition.attributes.clone(),
                    filter: condition.filter,
                    ..base.clone()
                };
                let outcome = train(corpus, &cfg, *enc, cs)?;
                let report = evaluate(&outcome.model, &test, cs)?.0;
                memo.insert(key, report.clone());
                report
            }
        };
        table.rows.push(AblationRow { condition, report });
    }
    Ok(table)
}
