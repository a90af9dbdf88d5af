//! Rule registry matching kept mutations against known modeling techniques.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::config::{AttentionPattern, FieldValue};
use crate::search::RunLog;
use crate::trainer::ExperimentRecord;

type Matcher = dyn Fn(&[&ExperimentRecord]) -> Vec<usize> + Send + Sync;

/// A named rule. The matcher sees the run's kept records and returns the
/// indices of those implementing the technique.
pub struct TechniqueRule {
    pub name: String,
    pub description: String,
    matcher: Box<Matcher>,
}

impl std::fmt::Debug for TechniqueRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TechniqueRule").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TechniqueMatch {
    pub technique: String,
    pub matched: bool,
    /// Record indices that triggered the rule.
    pub triggered_by: Vec<usize>,
}

#[derive(Debug, Default)]
pub struct TechniqueRegistry {
    rules: Vec<TechniqueRule>,
}

fn number(v: &FieldValue) -> Option<f64> {
    match v {
        FieldValue::Int(i) => Some(*i as f64),
        FieldValue::Real(x) => Some(*x),
        _ => None,
    }
}

/// Direction of a numeric field's edit in one record, if it was edited.
fn direction(r: &ExperimentRecord, field: &str) -> Option<Ordering> {
    let e = r.mutation.edit(field)?;
    number(&e.new_value)?.partial_cmp(&number(&e.old_value)?)
}

fn each(pred: impl Fn(&ExperimentRecord) -> bool + Send + Sync + 'static) -> Box<Matcher> {
    Box::new(move |kept| kept.iter().filter(|r| pred(r)).map(|r| r.index).collect())
}

fn rebalance(kept: &[&ExperimentRecord]) -> Vec<usize> {
    let moved = |field: &str, dir: Ordering| -> Vec<usize> {
        kept.iter().filter(|r| direction(r, field) == Some(dir)).map(|r| r.index).collect()
    };
    let mut out = Vec::new();
    for (d, w) in [(Ordering::Less, Ordering::Greater), (Ordering::Greater, Ordering::Less)] {
        let (depth, width) = (moved("depth", d), moved("width", w));
        if !depth.is_empty() && !width.is_empty() {
            out.extend(depth);
            out.extend(width);
        }
    }
    out.sort_unstable();
    out.dedup();
    out
}

impl TechniqueRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// The five default techniques.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.rules.push(TechniqueRule {
            name: "local_attention".into(),
            description: "switch to windowed attention or shrink the window".into(),
            matcher: each(|r| {
                let windowed = r.mutation.edit("attention_pattern").is_some_and(|e| {
                    e.new_value == FieldValue::Text(AttentionPattern::Windowed.to_string()) && e.old_value != e.new_value
                });
                windowed || direction(r, "window_size") == Some(Ordering::Less)
            }),
        });
        reg.rules.push(TechniqueRule {
            name: "embedding_reduction".into(),
            description: "decrease model width".into(),
            matcher: each(|r| direction(r, "width") == Some(Ordering::Less)),
        });
        reg.rules.push(TechniqueRule {
            name: "positional_encoding".into(),
            description: "change the positional encoding".into(),
            matcher: each(|r| r.mutation.edit("positional").is_some_and(|e| e.old_value != e.new_value)),
        });
        reg.rules.push(TechniqueRule {
            name: "depth_width_rebalance".into(),
            description: "depth and width moved in opposite directions across the kept set".into(),
            matcher: Box::new(rebalance),
        });
        reg.rules.push(TechniqueRule {
            name: "small_data_regularization".into(),
            description: "increase weight decay".into(),
            matcher: each(|r| direction(r, "weight_decay") == Some(Ordering::Greater)),
        });
        reg
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        description: impl Into<String>,
        matcher: impl Fn(&[&ExperimentRecord]) -> Vec<usize> + Send + Sync + 'static,
    ) {
        self.rules.push(TechniqueRule { name: name.into(), description: description.into(), matcher: Box::new(matcher) });
    }

    pub fn rules(&self) -> &[TechniqueRule] {
        &self.rules
    }

    /// One entry per rule, in registration order.
    pub fn classify(&self, log: &RunLog) -> Vec<TechniqueMatch> {
        let kept: Vec<&ExperimentRecord> = log.kept_mutations().collect();
        self.rules
            .iter()
            .map(|rule| {
                let triggered_by = (rule.matcher)(&kept);
                TechniqueMatch { technique: rule.name.clone(), matched: !triggered_by.is_empty(), triggered_by }
            })
            .collect()
    }
}

/// [`TechniqueRegistry::standard`] applied to one run.
pub fn classify_techniques(log: &RunLog) -> Vec<TechniqueMatch> {
    TechniqueRegistry::standard().classify(log)
}
