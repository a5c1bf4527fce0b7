//! Dialogue data: MuTual-format records, word-level vocabulary and a
//! synthetic consistency task.

mod example;
mod mutual;
mod synthetic;
mod vocab;

pub use example::DialogueExample;
pub use mutual::{load_records, parse_mutual, parse_mutual_with_id, write_jsonl, MutualRecord, Speaker, Utterance};
pub use synthetic::{check_consistency, gen_synthetic, SyntheticCorpus, SyntheticSpec};
pub use vocab::{split_words, Vocabulary, CLS, PAD, UNK};
