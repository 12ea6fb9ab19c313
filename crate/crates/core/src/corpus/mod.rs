//! DialogRE ingestion, speaker anonymization, input construction and the
//! dialogue-prefix rule used for the conversational F1 score.

mod input;
mod tokenize;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub use input::{align_trigger, build_input_sequence, Span, TokenizedInput};
pub use tokenize::{BasicTokenizer, Tokenizer, CLS, S1, S2, SEP, SPECIAL_TOKENS, UNK};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: String,
    pub text: String,
}

impl Turn {
    pub fn new(speaker: impl Into<String>, text: impl Into<String>) -> Self {
        Turn {
            speaker: speaker.into(),
            text: text.into(),
        }
    }

    /// Whether `name` is this turn's speaker or appears in its text (case-insensitive).
    pub fn mentions(&self, name: &str) -> bool {
        self.speaker == name || self.text.to_lowercase().contains(&name.to_lowercase())
    }
}

/// One annotated argument pair inside one dialogue.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DialogueInstance {
    pub turns: Vec<Turn>,
    pub arg1: String,
    pub arg2: String,
    /// Gold relation labels, at least one.
    pub relations: Vec<String>,
    /// Trigger text for each entry of `relations`; empty when unannotated.
    pub triggers: Vec<String>,
    /// Relation ids carried by the source file, if any.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relation_ids: Vec<i64>,
}

impl DialogueInstance {
    pub fn validate(&self, relations: &RelationSet) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::invalid("dialogue has no turns"));
        }
        if let Some(i) = self.turns.iter().position(|t| t.speaker.is_empty()) {
            return Err(Error::invalid(format!("turn {i} has an empty speaker")));
        }
        if self.relations.is_empty() {
            return Err(Error::invalid("argument pair has no relation label"));
        }
        if self.triggers.len() != self.relations.len() {
            return Err(Error::invalid("one trigger slot per relation is required"));
        }
        for label in &self.relations {
            relations.index_of(label)?;
        }
        Ok(())
    }

    /// The same instance with speakers and arguments rewritten by [`anonymize_speakers`].
    pub fn anonymized(&self) -> DialogueInstance {
        let anon = anonymize_speakers(self);
        DialogueInstance {
            turns: anon.turns,
            arg1: anon.arg1,
            arg2: anon.arg2,
            ..self.clone()
        }
    }
}

/// Ordered relation labels; position defines the class index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct RelationSet {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl RelationSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.len() < 2 {
            return Err(Error::RelationSet(format!(
                "need at least 2 relations, got {}",
                labels.len()
            )));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::RelationSet(format!("label at line {} is empty", i + 1)));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::RelationSet(format!("duplicate label `{label}`")));
            }
        }
        Ok(RelationSet { labels, index })
    }

    /// One label per line; blank lines are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(String::from)
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_lines(&self) -> String {
        let mut out = self.labels.join("\n");
        out.push('\n');
        out
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.index
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownRelation(label.to_string()))
    }

    pub fn label(&self, index: usize) -> &str {
        &self.labels[index]
    }
}

impl TryFrom<Vec<String>> for RelationSet {
    type Error = Error;

    fn try_from(labels: Vec<String>) -> Result<Self> {
        RelationSet::new(labels)
    }
}

impl From<RelationSet> for Vec<String> {
    fn from(set: RelationSet) -> Self {
        set.labels
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct AnnotationRecord {
    x: String,
    y: String,
    #[serde(default)]
    r: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    rid: Vec<i64>,
    #[serde(default)]
    t: Vec<String>,
}

/// Parses a DialogRE document: `[[utterances...], [records...]]` per entry.
pub fn parse_dialogre(text: &str, relations: &RelationSet) -> Result<Vec<DialogueInstance>> {
    parse_entries(text, Some(relations))
}

/// Parses argument pairs for prediction: records may carry no labels, and
/// labels that are present are not checked. Blank input yields no instances.
pub fn parse_dialogre_unlabeled(text: &str) -> Result<Vec<DialogueInstance>> {
    if text.trim().is_empty() {
        return Ok(Vec::new());
    }
    parse_entries(text, None)
}

fn parse_entries(text: &str, relations: Option<&RelationSet>) -> Result<Vec<DialogueInstance>> {
    let entries: Vec<Value> = serde_json::from_str(text)?;
    let mut instances = Vec::new();
    for (index, entry) in entries.into_iter().enumerate() {
        let malformed = |reason: String| Error::MalformedEntry { index, reason };
        let (utterances, records): (Vec<String>, Vec<AnnotationRecord>) =
            serde_json::from_value(entry).map_err(|e| malformed(e.to_string()))?;
        let turns = utterances
            .iter()
            .map(|u| split_speaker(u))
            .collect::<Option<Vec<_>>>()
            .ok_or_else(|| malformed("utterance without a `Speaker:` prefix".into()))?;
        if turns.is_empty() {
            return Err(malformed("dialogue has no utterances".into()));
        }
        for record in records {
            if let Some(relations) = relations {
                if record.r.is_empty() {
                    return Err(malformed("annotation record without relations".into()));
                }
                for label in &record.r {
                    relations.index_of(label)?;
                }
            }
            let mut triggers = record.t;
            triggers.resize(record.r.len(), String::new());
            instances.push(DialogueInstance {
                turns: turns.clone(),
                arg1: record.x,
                arg2: record.y,
                relations: record.r,
                triggers,
                relation_ids: record.rid,
            });
        }
    }
    Ok(instances)
}

pub fn load_dialogre(path: impl AsRef<Path>, relations: &RelationSet) -> Result<Vec<DialogueInstance>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_dialogre(&text, relations)
}

/// Serializes instances back to DialogRE format. Consecutive instances that
/// share identical turns are grouped under one dialogue entry.
pub fn to_dialogre_json(instances: &[DialogueInstance]) -> String {
    let mut entries: Vec<(Vec<String>, Vec<AnnotationRecord>)> = Vec::new();
    let mut last_turns: Option<&[Turn]> = None;
    for inst in instances {
        let record = AnnotationRecord {
            x: inst.arg1.clone(),
            y: inst.arg2.clone(),
            r: inst.relations.clone(),
            rid: inst.relation_ids.clone(),
            t: inst.triggers.clone(),
        };
        match (last_turns, entries.last_mut()) {
            (Some(turns), Some(entry)) if turns == inst.turns.as_slice() => entry.1.push(record),
            _ => {
                let utterances = inst
                    .turns
                    .iter()
                    .map(|t| format!("{}: {}", t.speaker, t.text))
                    .collect();
                entries.push((utterances, vec![record]));
            }
        }
        last_turns = Some(&inst.turns);
    }
    serde_json::to_string_pretty(&entries).expect("dialogre entries always serialize")
}

fn split_speaker(utterance: &str) -> Option<Turn> {
    let (speaker, text) = match utterance.split_once(": ") {
        Some(parts) => parts,
        None => (utterance.strip_suffix(':')?, ""),
    };
    let speaker = speaker.trim();
    if speaker.is_empty() {
        return None;
    }
    Some(Turn::new(speaker, text))
}

/// Turns and arguments after speaker rewriting.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnonymizedDialogue {
    pub turns: Vec<Turn>,
    pub arg1: String,
    pub arg2: String,
}

/// Rewrites speakers equal to `arg1` as `[S1]` and those equal to `arg2` as
/// `[S2]`. The first argument wins when both arguments name the same speaker.
/// An argument becomes its placeholder only if some speaker matched it.
pub fn anonymize_speakers(instance: &DialogueInstance) -> AnonymizedDialogue {
    let (a1, a2) = (instance.arg1.as_str(), instance.arg2.as_str());
    let turns = instance
        .turns
        .iter()
        .map(|turn| {
            let speaker = if turn.speaker == a1 {
                S1.to_string()
            } else if turn.speaker == a2 {
                S2.to_string()
            } else {
                turn.speaker.clone()
            };
            Turn::new(speaker, turn.text.clone())
        })
        .collect();
    let spoken = |a: &str| instance.turns.iter().any(|t| t.speaker == a);
    AnonymizedDialogue {
        turns,
        arg1: if spoken(a1) { S1.to_string() } else { a1.to_string() },
        arg2: if spoken(a2) { S2.to_string() } else { a2.to_string() },
    }
}

/// Result of cutting a dialogue down to its argument-containing prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PrefixInstance {
    pub instance: DialogueInstance,
    /// Set when an argument never occurs; the instance is then unchanged.
    pub flagged: bool,
}

/// Human-readable statement of the prefix rule, embedded in eval reports.
pub const PREFIX_RULE: &str = "shortest prefix of whole turns in which both arguments occur, \
     as a speaker or as a case-insensitive substring of an utterance";

/// Keeps the shortest prefix of whole turns in which both arguments occur.
pub fn build_prefix_instance(instance: &DialogueInstance) -> PrefixInstance {
    let first = |arg: &str| instance.turns.iter().position(|t| t.mentions(arg));
    match (first(&instance.arg1), first(&instance.arg2)) {
        (Some(i), Some(j)) => {
            let keep = i.max(j) + 1;
            PrefixInstance {
                instance: DialogueInstance {
                    turns: instance.turns[..keep].to_vec(),
                    ..instance.clone()
                },
                flagged: false,
            }
        }
        _ => PrefixInstance {
            instance: instance.clone(),
            flagged: true,
        },
    }
}

/// Counts gathered while turning raw instances into model inputs.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub instances: usize,
    pub training_examples: usize,
    pub aligned_triggers: usize,
    pub unaligned_triggers: usize,
    pub empty_triggers: usize,
    pub truncated_inputs: usize,
    pub flagged_prefixes: usize,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn relations() -> RelationSet {
        RelationSet::parse("per:girl/boyfriend\nper:friends\nper:spouse\n").unwrap()
    }

    fn instance(speakers: &[&str], arg1: &str, arg2: &str) -> DialogueInstance {
        DialogueInstance {
            turns: speakers.iter().map(|s| Turn::new(*s, "hello there")).collect(),
            arg1: arg1.into(),
            arg2: arg2.into(),
            relations: vec!["per:friends".into()],
            triggers: vec![String::new()],
            relation_ids: vec![],
        }
    }

    const TWO_RECORDS: &str = r#"[
      [["Speaker 1: Hey Monica!", "Speaker 2: Hi."],
       [{"x": "Speaker 1", "y": "Monica", "r": ["per:friends"], "rid": [4], "t": [""]},
        {"x": "Speaker 2", "y": "Monica", "r": ["per:spouse", "per:friends"], "t": ["married"]}]]
    ]"#;

    #[test]
    fn two_records_share_turns() {
        let insts = parse_dialogre(TWO_RECORDS, &relations()).unwrap();
        assert_eq!(insts.len(), 2);
        assert_eq!(insts[0].turns, insts[1].turns);
        assert_eq!(insts[0].turns[0], Turn::new("Speaker 1", "Hey Monica!"));
        // missing trigger slots are padded
        assert_eq!(insts[1].triggers, ["married", ""]);
        assert_eq!(insts[0].relation_ids, [4]);
    }

    #[test]
    fn empty_document_yields_nothing() {
        assert!(parse_dialogre("[]", &relations()).unwrap().is_empty());
    }

    #[test]
    fn malformed_entry_reports_index() {
        let doc = r#"[[["A: x"], []], [["no speaker prefix"], []]]"#;
        match parse_dialogre(doc, &relations()) {
            Err(Error::MalformedEntry { index, .. }) => assert_eq!(index, 1),
            other => panic!("unexpected {other:?}"),
        }
        let doc = r#"[[["A: x"], [{"x": "A"}]]]"#;
        assert!(matches!(
            parse_dialogre(doc, &relations()),
            Err(Error::MalformedEntry { index: 0, .. })
        ));
    }

    #[test]
    fn unknown_label_is_named() {
        let doc = r#"[[["A: x"], [{"x": "A", "y": "B", "r": ["per:pet"], "t": [""]}]]]"#;
        match parse_dialogre(doc, &relations()) {
            Err(Error::UnknownRelation(label)) => assert_eq!(label, "per:pet"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn speaker_split_at_first_colon_space() {
        assert_eq!(
            split_speaker("Ross: time: 5pm"),
            Some(Turn::new("Ross", "time: 5pm"))
        );
        assert_eq!(split_speaker("Ross:"), Some(Turn::new("Ross", "")));
        assert_eq!(split_speaker(": hi"), None);
    }

    #[test]
    fn relation_set_validation() {
        assert!(RelationSet::parse("a\n").is_err());
        assert!(RelationSet::parse("a\nb\na\n").is_err());
        let set = RelationSet::parse("a\n\nb\n").unwrap();
        assert_eq!(set.index_of("b").unwrap(), 1);
        assert_eq!(RelationSet::parse(&set.to_lines()).unwrap(), set);
    }

    #[test]
    fn anonymize_matching_speaker() {
        let anon = anonymize_speakers(&instance(&["S1", "S2"], "S1", "x"));
        assert_eq!(anon.turns[0].speaker, S1);
        assert_eq!(anon.turns[1].speaker, "S2");
        assert_eq!(anon.arg1, S1);
        assert_eq!(anon.arg2, "x");
    }

    #[test]
    fn anonymize_non_speaker_argument_verbatim() {
        let anon = anonymize_speakers(&instance(&["Ross", "Rachel"], "Carol", "Rachel"));
        assert_eq!(anon.turns[0].speaker, "Ross");
        assert_eq!(anon.turns[1].speaker, S2);
        assert_eq!(anon.arg1, "Carol");
        assert_eq!(anon.arg2, S2);
    }

    #[test]
    fn anonymize_same_speaker_both_args_first_case_wins() {
        let anon = anonymize_speakers(&instance(&["Ross", "Joey"], "Ross", "Ross"));
        assert_eq!(anon.turns[0].speaker, S1);
        assert_eq!(anon.arg1, S1);
        assert_eq!(anon.arg2, S2);
    }

    #[test]
    fn prefix_cuts_at_later_first_mention() {
        let mut inst = instance(&["Ross", "Joey", "Rachel", "Joey", "Ross", "Joey", "Ross"], "Ross", "Carol");
        inst.turns[2].text = "Carol is coming".into();
        let prefix = build_prefix_instance(&inst);
        assert!(!prefix.flagged);
        assert_eq!(prefix.instance.turns.len(), 3);
        assert_eq!(prefix.instance.relations, inst.relations);
    }

    #[test]
    fn prefix_single_turn_and_absent_argument() {
        let inst = instance(&["Ross", "Joey"], "Ross", "there");
        assert_eq!(build_prefix_instance(&inst).instance.turns.len(), 1);
        let inst = instance(&["Ross", "Joey"], "Carol", "Ross");
        let prefix = build_prefix_instance(&inst);
        assert!(prefix.flagged);
        assert_eq!(prefix.instance, inst);
    }
}
