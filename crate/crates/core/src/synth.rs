//! Deterministic synthetic dialogues in which a planted trigger phrase is
//! the only evidence for the relation between two speaking arguments.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{DialogueInstance, RelationSet, Turn};
use crate::knowledge::KnowledgeLexicon;
use crate::{Error, Result};

const NAMES: &[&str] = &[
    "Ross", "Rachel", "Monica", "Chandler", "Joey", "Phoebe", "Emily", "Carol", "Mike", "Janice", "Gunther", "Richard",
];

const FILLER: &[&str] = &[
    "hey , how are you doing ?",
    "i do not know what you mean",
    "what time is it ?",
    "that is so funny",
    "see you later then",
    "okay",
    "sure , why not",
    "really ?",
    "come on , just tell me",
    "i will get some coffee",
    "can you pass me that ?",
    "wait , what happened ?",
    "no way",
    "let us go outside",
    "this is going to be great",
    "i am so tired today",
];

const TEMPLATES: &[&str] = &[
    "it is all about {}",
    "did you hear about {} ?",
    "i was talking about {} yesterday",
    "so {} , right ?",
    "i keep thinking of {}",
];

struct Planted {
    relation: &'static str,
    triggers: &'static [&'static str],
    lexicon: &'static [&'static str],
}

const PLANTED: &[Planted] = &[
    Planted {
        relation: "per:girl/boyfriend",
        triggers: &["the engagement ring", "our first date", "my girlfriend"],
        lexicon: &["girlfriend", "boyfriend", "engagement", "date", "love", "couple"],
    },
    Planted {
        relation: "per:spouse",
        triggers: &["our wedding anniversary", "my husband", "married life"],
        lexicon: &["husband", "wife", "wedding", "married", "anniversary"],
    },
    Planted {
        relation: "per:siblings",
        triggers: &["our parents", "my little brother", "the family reunion"],
        lexicon: &["brother", "sister", "parents", "family", "reunion"],
    },
    Planted {
        relation: "per:roommate",
        triggers: &["the rent", "our apartment", "splitting the bills"],
        lexicon: &["apartment", "rent", "bills", "roommate", "lease"],
    },
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub min_turns: usize,
    pub max_turns: usize,
    /// When set, the two arguments speak the first two turns and this
    /// fraction of instances carries its trigger only after them.
    pub evidence_after_prefix: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_turns: 4,
            max_turns: 7,
            evidence_after_prefix: None,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.min_turns < 3 || self.max_turns < self.min_turns {
            return Err(Error::invalid(format!(
                "synthetic turns must satisfy 3 <= min_turns <= max_turns, got {}..{}",
                self.min_turns, self.max_turns
            )));
        }
        if let Some(f) = self.evidence_after_prefix {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::invalid(format!("evidence_after_prefix must lie in [0, 1], got {f}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub instances: Vec<DialogueInstance>,
    pub relations: RelationSet,
    pub lexicon: KnowledgeLexicon,
}

pub fn synth_relations() -> RelationSet {
    RelationSet::new(PLANTED.iter().map(|p| p.relation.to_string()).collect()).expect("distinct labels")
}

pub fn synth_lexicon() -> KnowledgeLexicon {
    let entries: BTreeMap<String, Vec<String>> = PLANTED
        .iter()
        .map(|p| (p.relation.to_string(), p.lexicon.iter().map(|w| w.to_string()).collect()))
        .collect();
    KnowledgeLexicon::new(entries, &synth_relations()).expect("complete lexicon")
}

pub fn generate(seed: u64, size: usize, config: &SynthConfig) -> Result<SynthCorpus> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let instances = (0..size).map(|i| instance(i, config, &mut rng)).collect();
    Ok(SynthCorpus {
        instances,
        relations: synth_relations(),
        lexicon: synth_lexicon(),
    })
}

fn instance(index: usize, config: &SynthConfig, rng: &mut ChaCha8Rng) -> DialogueInstance {
    let planted = &PLANTED[rng.gen_range(0..PLANTED.len())];
    let trigger = *planted.triggers.choose(rng).expect("non-empty");
    let cast: Vec<&str> = NAMES.choose_multiple(rng, 3).copied().collect();
    let (a1, a2) = (cast[0], cast[1]);
    let n = rng.gen_range(config.min_turns..=config.max_turns);

    let mut speakers: Vec<&str> = (0..n).map(|_| cast[rng.gen_range(0..3)]).collect();
    let trigger_turn = match config.evidence_after_prefix {
        Some(f) => {
            if rng.gen_bool(0.5) {
                speakers[0] = a1;
                speakers[1] = a2;
            } else {
                speakers[0] = a2;
                speakers[1] = a1;
            }
            // exactly floor(size * f) instances put the trigger after the prefix
            let after = ((index + 1) as f64 * f).floor() > (index as f64 * f).floor();
            if after {
                rng.gen_range(2..n)
            } else {
                rng.gen_range(0..2)
            }
        }
        None => {
            let slots: Vec<usize> = (0..n).collect();
            let picked: Vec<usize> = slots.choose_multiple(rng, 2).copied().collect();
            speakers[picked[0]] = a1;
            speakers[picked[1]] = a2;
            rng.gen_range(0..n)
        }
    };

    let turns = speakers
        .iter()
        .enumerate()
        .map(|(t, s)| {
            let text = if t == trigger_turn {
                TEMPLATES.choose(rng).expect("non-empty").replace("{}", trigger)
            } else {
                FILLER.choose(rng).expect("non-empty").to_string()
            };
            Turn::new(*s, text)
        })
        .collect();
    DialogueInstance {
        turns,
        arg1: a1.to_string(),
        arg2: a2.to_string(),
        relations: vec![planted.relation.to_string()],
        triggers: vec![trigger.to_string()],
        relation_ids: vec![],
    }
}

/// A hand-written seven-turn dialogue: `Speaker 1` and `Monica` are a
/// couple, and the engagement ring gives it away.
pub fn engagement_dialogue() -> DialogueInstance {
    let turns = [
        ("Speaker 1", "hey , have you seen my jacket ?"),
        ("Speaker 2", "it is on the chair"),
        ("Speaker 1", "thanks . i am meeting Monica tonight"),
        ("Speaker 3", "oh , big night ?"),
        ("Speaker 1", "i am going to give her the engagement ring"),
        ("Speaker 2", "wow , congratulations !"),
        ("Speaker 3", "she is going to love it"),
    ];
    DialogueInstance {
        turns: turns.iter().map(|(s, t)| Turn::new(*s, *t)).collect(),
        arg1: "Speaker 1".into(),
        arg2: "Monica".into(),
        relations: vec!["per:girl/boyfriend".into()],
        triggers: vec!["engagement ring".into()],
        relation_ids: vec![],
    }
}
