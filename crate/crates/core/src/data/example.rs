use super::mutual::MutualRecord;
use super::vocab::Vocabulary;
use crate::error::{Error, Result};

/// A tokenized dialogue with exactly four candidate responses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DialogueExample {
    pub id: String,
    pub utterances: Vec<Vec<u32>>,
    pub options: [Vec<u32>; 4],
    pub answer: usize,
}

impl DialogueExample {
    pub fn from_record(record: &MutualRecord, vocab: &Vocabulary) -> Result<Self> {
        let utterances = record.utterances.iter().map(|u| vocab.tokenize(&u.text)).collect();
        let options = [0, 1, 2, 3].map(|i| vocab.tokenize(&record.options[i]));
        let ex = DialogueExample { id: record.id.clone(), utterances, options, answer: record.answer };
        ex.validate(usize::MAX)?;
        Ok(ex)
    }

    pub fn from_records(records: &[MutualRecord], vocab: &Vocabulary) -> Result<Vec<Self>> {
        records.iter().map(|r| Self::from_record(r, vocab)).collect()
    }

    pub fn num_utterances(&self) -> usize {
        self.utterances.len()
    }

    /// Check the structural invariants against a turn limit.
    pub fn validate(&self, max_turns: usize) -> Result<()> {
        let fail = |reason: String| Error::Parse { id: self.id.clone(), reason };
        let n = self.utterances.len();
        if n == 0 || n > max_turns {
            return Err(fail(format!("{n} utterances, expected 1..={max_turns}")));
        }
        if let Some(i) = self.utterances.iter().position(Vec::is_empty) {
            return Err(fail(format!("utterance {i} has no tokens")));
        }
        if let Some(i) = self.options.iter().position(Vec::is_empty) {
            return Err(fail(format!("option {i} has no tokens")));
        }
        if self.answer > 3 {
            return Err(fail(format!("answer index {} out of range", self.answer)));
        }
        Ok(())
    }

    /// Reorder the options so that new slot `k` holds old option `perm[k]`;
    /// the gold index follows its option.
    pub fn permute_options(&self, perm: [usize; 4]) -> Self {
        let options = perm.map(|p| self.options[p].clone());
        let answer = perm.iter().position(|&p| p == self.answer).expect("perm is a permutation");
        DialogueExample { id: self.id.clone(), utterances: self.utterances.clone(), options, answer }
    }

    /// Keep the last `max_turns` utterances and the first `max_tokens`
    /// tokens of every sentence.
    pub fn truncated(&self, max_turns: usize, max_tokens: usize) -> Self {
        let skip = self.utterances.len().saturating_sub(max_turns);
        let cut = |s: &Vec<u32>| s[..s.len().min(max_tokens)].to_vec();
        DialogueExample {
            id: self.id.clone(),
            utterances: self.utterances[skip..].iter().map(cut).collect(),
            options: [0, 1, 2, 3].map(|i| cut(&self.options[i])),
            answer: self.answer,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::parse_mutual;

    #[test]
    fn tokenizes_and_validates() {
        let r = parse_mutual(r#"{"article":"m : hi . f : hello .","options":["a","b","c","d ."],"answers":"B"}"#).unwrap();
        let v = Vocabulary::build(["hi . hello . a b c d"]);
        let ex = DialogueExample::from_record(&r, &v).unwrap();
        assert_eq!(ex.num_utterances(), 2);
        assert_eq!(ex.options[3].len(), 2);
        assert!(ex.validate(1).is_err());
        assert!(ex.validate(12).is_ok());
    }

    #[test]
    fn empty_option_is_rejected() {
        let r = parse_mutual(r#"{"article":"m : hi .","options":["a","b","c","   "],"answers":"A"}"#).unwrap();
        let v = Vocabulary::build(["hi . a b c"]);
        assert!(DialogueExample::from_record(&r, &v).is_err());
    }

    #[test]
    fn permutation_tracks_the_answer() {
        let ex = DialogueExample {
            id: "p".into(),
            utterances: vec![vec![5]],
            options: [vec![10], vec![11], vec![12], vec![13]],
            answer: 1,
        };
        let p = ex.permute_options([2, 0, 3, 1]);
        assert_eq!(p.options[3], vec![11]);
        assert_eq!(p.answer, 3);
    }
}
