//! A synthetic dialogue task whose answer requires tracking facts across
//! turns.
//!
//! Each dialogue states facts of the form "anna has a red hat .", later
//! overrides one of them ("now anna has a blue hat ."), and ends with a
//! question about that overridden fact. The correct option restates the
//! current fact; the three distractors are the overridden (stale) value, a
//! value never stated for that fact, and the current value attributed to a
//! different person whose own value differs.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::mutual::{MutualRecord, Speaker, Utterance};
use crate::error::{Error, Result};

const PEOPLE: [&str; 12] = ["anna", "ben", "carl", "dora", "emma", "finn", "gina", "hugo", "ivy", "jack", "kate", "liam"];
const OBJECTS: [&str; 8] = ["hat", "car", "dog", "book", "phone", "bike", "coat", "cup"];
const COLORS: [&str; 10] = ["red", "blue", "green", "black", "white", "pink", "gray", "brown", "gold", "teal"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub entities: usize,
    pub attributes: usize,
    /// Distinct values each attribute can take.
    pub values: usize,
    /// Utterances per dialogue, including the update and the question.
    pub turns: usize,
    pub train_size: usize,
    pub val_size: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec { seed: 0, entities: 6, attributes: 3, values: 4, turns: 5, train_size: 2000, val_size: 500 }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values < 3 {
            return Err(Error::Spec(format!(
                "{} values per attribute; at least 3 are needed for a current, a stale and a never-stated value",
                self.values
            )));
        }
        if self.entities < 2 {
            return Err(Error::Spec("at least 2 entities are needed for the wrong-entity distractor".into()));
        }
        if self.attributes < 1 {
            return Err(Error::Spec("at least 1 attribute is needed".into()));
        }
        if self.turns < 4 {
            return Err(Error::Spec(format!("{} turns; at least 4 (two facts, an update, a question)", self.turns)));
        }
        let facts = self.turns - 2;
        if facts > self.entities * self.attributes {
            return Err(Error::Spec(format!(
                "{facts} distinct facts requested but only {} entity/attribute pairs exist",
                self.entities * self.attributes
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<MutualRecord>,
    pub val: Vec<MutualRecord>,
}

fn name(list: &[&str], prefix: &str, i: usize) -> String {
    list.get(i).map_or_else(|| format!("{prefix}{i}"), |s| s.to_string())
}

fn fact(e: &str, v: &str, a: &str) -> String {
    format!("{e} has a {v} {a} .")
}

/// Generate train and validation splits; a pure function of the spec.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let train = (0..spec.train_size).map(|i| one_dialogue(spec, &mut rng, format!("syn-train-{i}"))).collect();
    let val = (0..spec.val_size).map(|i| one_dialogue(spec, &mut rng, format!("syn-val-{i}"))).collect();
    Ok(SyntheticCorpus { train, val })
}

fn one_dialogue(spec: &SyntheticSpec, rng: &mut ChaCha8Rng, id: String) -> MutualRecord {
    let ent = |i| name(&PEOPLE, "person", i);
    let attr = |i| name(&OBJECTS, "thing", i);
    let val = |i| name(&COLORS, "shade", i);

    let e_q = rng.gen_range(0..spec.entities);
    let e_o = (e_q + rng.gen_range(1..spec.entities)) % spec.entities;
    let a_q = rng.gen_range(0..spec.attributes);

    let old = rng.gen_range(0..spec.values);
    let new = (old + rng.gen_range(1..spec.values)) % spec.values;
    let never = (0..spec.values).filter(|&v| v != old && v != new).collect::<Vec<_>>();
    let never = *never.choose(rng).expect("at least three values");
    let other_values: Vec<usize> = (0..spec.values).filter(|&v| v != new).collect();
    let other = *other_values.choose(rng).expect("at least two values");

    // (entity, attribute, value)
    let mut facts = vec![(e_q, a_q, old), (e_o, a_q, other)];
    let mut pairs: Vec<(usize, usize)> = (0..spec.entities)
        .flat_map(|e| (0..spec.attributes).map(move |a| (e, a)))
        .filter(|&p| p != (e_q, a_q) && p != (e_o, a_q))
        .collect();
    pairs.shuffle(rng);
    for &(e, a) in pairs.iter().take(spec.turns - 4) {
        facts.push((e, a, rng.gen_range(0..spec.values)));
    }
    facts.shuffle(rng);

    let mut texts: Vec<String> = facts.iter().map(|&(e, a, v)| fact(&ent(e), &val(v), &attr(a))).collect();
    let first = facts.iter().position(|&(e, a, _)| (e, a) == (e_q, a_q)).expect("queried fact present");
    let at = rng.gen_range(first + 1..=texts.len());
    texts.insert(at, format!("now {}", fact(&ent(e_q), &val(new), &attr(a_q))));
    texts.push(format!("what about {} 's {} ?", ent(e_q), attr(a_q)));

    let utterances = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| Utterance { speaker: Some(if i % 2 == 0 { Speaker::M } else { Speaker::F }), text })
        .collect();

    let correct = fact(&ent(e_q), &val(new), &attr(a_q));
    let mut distractors = vec![
        fact(&ent(e_q), &val(old), &attr(a_q)),
        fact(&ent(e_q), &val(never), &attr(a_q)),
        fact(&ent(e_o), &val(new), &attr(a_q)),
    ];
    distractors.shuffle(rng);
    let answer = rng.gen_range(0..4);
    distractors.insert(answer, correct);
    let options: [String; 4] = distractors.try_into().expect("four options");
    MutualRecord { id, utterances, options, answer }
}

/// For every option, whether it agrees with the facts as they stand at the
/// end of the dialogue. Works on the raw text only.
pub fn check_consistency(record: &MutualRecord) -> [bool; 4] {
    let mut state: HashMap<(String, String), String> = HashMap::new();
    for u in &record.utterances {
        let words: Vec<&str> = u.text.split_whitespace().collect();
        let body = match words.as_slice() {
            ["now", rest @ ..] => rest,
            all => all,
        };
        if let [e, "has", "a", v, a, "."] = body {
            state.insert((e.to_string(), a.to_string()), v.to_string());
        }
    }
    record.options.clone().map(|o| {
        let words: Vec<&str> = o.split_whitespace().collect();
        match words.as_slice() {
            [e, "has", "a", v, a, "."] => state.get(&(e.to_string(), a.to_string())).is_some_and(|cur| cur == v),
            _ => false,
        }
    })
}
