//! Macro F1 over single-label predictions against gold label sets, and the
//! prefix-dialogue variant F1_c.
//!
//! Counting: for relation `r`, a prediction of `r` is a true positive when
//! `r` is in the instance's gold set and a false positive otherwise; every
//! instance with `r` in its gold set and a different prediction is a false
//! negative. Relations with no gold support and no predictions are left out
//! of the average.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_prefix_instance, DialogueInstance, RelationSet, Tokenizer, PREFIX_RULE};
use crate::model::{predict, Model};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationScore {
    pub relation: String,
    pub support: usize,
    pub predicted: usize,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Whether the relation counts toward the macro average.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroF1 {
    pub macro_f1: f64,
    pub rows: Vec<RelationScore>,
}

impl MacroF1 {
    pub fn included(&self) -> impl Iterator<Item = &RelationScore> {
        self.rows.iter().filter(|r| r.included)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Macro F1 over relation indices in `0..relations.len()`.
pub fn macro_f1_indices(predictions: &[usize], golds: &[Vec<usize>], relations: &RelationSet) -> Result<MacroF1> {
    if predictions.is_empty() {
        return Err(Error::invalid("macro F1 needs at least one prediction"));
    }
    if predictions.len() != golds.len() {
        return Err(Error::invalid(format!(
            "{} predictions but {} gold sets",
            predictions.len(),
            golds.len()
        )));
    }
    let n = relations.len();
    let check = |r: usize| {
        if r < n {
            Ok(())
        } else {
            Err(Error::UnknownRelation(format!("relation index {r}")))
        }
    };
    let (mut tp, mut fp, mut fn_, mut support) = (vec![0; n], vec![0; n], vec![0; n], vec![0; n]);
    for (&pred, gold) in predictions.iter().zip(golds) {
        check(pred)?;
        let mut seen = vec![false; n];
        for &g in gold {
            check(g)?;
            if std::mem::replace(&mut seen[g], true) {
                continue;
            }
            support[g] += 1;
            if g != pred {
                fn_[g] += 1;
            }
        }
        if seen[pred] {
            tp[pred] += 1;
        } else {
            fp[pred] += 1;
        }
    }

    let rows: Vec<RelationScore> = (0..n)
        .map(|r| {
            let precision = ratio(tp[r], tp[r] + fp[r]);
            let recall = ratio(tp[r], tp[r] + fn_[r]);
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            RelationScore {
                relation: relations.label(r).to_string(),
                support: support[r],
                predicted: tp[r] + fp[r],
                true_positives: tp[r],
                false_positives: fp[r],
                false_negatives: fn_[r],
                precision,
                recall,
                f1,
                included: support[r] + tp[r] + fp[r] > 0,
            }
        })
        .collect();
    let (sum, count) = rows.iter().filter(|r| r.included).fold((0.0, 0usize), |(s, c), r| (s + r.f1, c + 1));
    Ok(MacroF1 {
        macro_f1: sum / count as f64,
        rows,
    })
}

/// Macro F1 over relation labels; unknown labels are rejected.
pub fn macro_f1<P: AsRef<str>, G: AsRef<str>>(
    predictions: &[P],
    golds: &[Vec<G>],
    relations: &RelationSet,
) -> Result<MacroF1> {
    let preds = predictions
        .iter()
        .map(|p| relations.index_of(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let golds = golds
        .iter()
        .map(|set| set.iter().map(|g| relations.index_of(g.as_ref())).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    macro_f1_indices(&preds, &golds, relations)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub instances: usize,
    pub macro_f1: f64,
    pub f1_c: f64,
    pub rows: Vec<RelationScore>,
    pub prefix_rows: Vec<RelationScore>,
    pub prefix_rule: String,
    /// Instances whose arguments never both occur; scored on the full dialogue.
    pub flagged_prefixes: usize,
    pub fusion: String,
    pub literal_attention: bool,
    /// Free-form provenance supplied by the caller (config hash, ablation flags).
    pub metadata: BTreeMap<String, String>,
}

impl EvalReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.metadata {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        if !self.metadata.contains_key("fusion") {
            out.push_str(&format!("# fusion: {}\n", self.fusion));
        }
        out.push_str(&format!("# prefix rule: {}\n", self.prefix_rule));
        out.push_str(&format!(
            "# instances: {}, flagged prefixes: {}\n",
            self.instances, self.flagged_prefixes
        ));
        out.push_str(&format!("F1   {:.4}\nF1_c {:.4}\n\n", self.macro_f1, self.f1_c));
        out.push_str(&format!(
            "{:<40} {:>7} {:>5} {:>5} {:>5} {:>9} {:>9} {:>9}\n",
            "relation", "support", "tp", "fp", "fn", "precision", "recall", "f1"
        ));
        for r in self.rows.iter().filter(|r| r.included) {
            out.push_str(&format!(
                "{:<40} {:>7} {:>5} {:>5} {:>5} {:>9.4} {:>9.4} {:>9.4}\n",
                r.relation,
                r.support,
                r.true_positives,
                r.false_positives,
                r.false_negatives,
                r.precision,
                r.recall,
                r.f1
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn score(model: &Model, instances: &[DialogueInstance], tokenizer: &impl Tokenizer) -> Result<MacroF1> {
    let mut preds = Vec::with_capacity(instances.len());
    let mut golds = Vec::with_capacity(instances.len());
    for inst in instances {
        inst.validate(&model.relations)?;
        preds.push(predict(model, inst, tokenizer)?.relation_index);
        golds.push(
            inst.relations
                .iter()
                .map(|r| model.relations.index_of(r))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    macro_f1_indices(&preds, &golds, &model.relations)
}

/// Macro F1 with every instance cut to its argument-containing prefix.
pub fn evaluate_f1c(model: &Model, instances: &[DialogueInstance], tokenizer: &impl Tokenizer) -> Result<f64> {
    let prefixed: Vec<DialogueInstance> = instances.iter().map(|i| build_prefix_instance(i).instance).collect();
    Ok(score(model, &prefixed, tokenizer)?.macro_f1)
}

/// Full-dialogue and prefix scores in one report.
pub fn evaluate(model: &Model, instances: &[DialogueInstance], tokenizer: &impl Tokenizer) -> Result<EvalReport> {
    let full = score(model, instances, tokenizer)?;
    let mut flagged = 0;
    let prefixed: Vec<DialogueInstance> = instances
        .iter()
        .map(|i| {
            let p = build_prefix_instance(i);
            flagged += p.flagged as usize;
            p.instance
        })
        .collect();
    let prefix = score(model, &prefixed, tokenizer)?;
    Ok(EvalReport {
        instances: instances.len(),
        macro_f1: full.macro_f1,
        f1_c: prefix.macro_f1,
        rows: full.rows,
        prefix_rows: prefix.rows,
        prefix_rule: PREFIX_RULE.to_string(),
        flagged_prefixes: flagged,
        fusion: model.options.fusion.to_string(),
        literal_attention: model.options.literal_attention,
        metadata: BTreeMap::new(),
    })
}
