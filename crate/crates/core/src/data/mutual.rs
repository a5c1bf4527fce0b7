//! MuTual-layout records: `{"id", "article", "options": [4], "answers": "A".."D"}`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Speaker {
    M,
    F,
}

impl Speaker {
    fn marker(self) -> &'static str {
        match self {
            Speaker::M => "m : ",
            Speaker::F => "f : ",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    /// `None` for text that precedes the first speaker marker.
    pub speaker: Option<Speaker>,
    pub text: String,
}

/// A dialogue record at the text level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MutualRecord {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub options: [String; 4],
    pub answer: usize,
}

impl MutualRecord {
    /// The article with speaker markers re-inserted.
    pub fn article(&self) -> String {
        self.utterances
            .iter()
            .map(|u| match u.speaker {
                Some(s) => format!("{}{}", s.marker(), u.text),
                None => u.text.clone(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn to_json(&self) -> String {
        let letter = ["A", "B", "C", "D"][self.answer];
        serde_json::json!({
            "answers": letter,
            "options": self.options,
            "article": self.article(),
            "id": self.id,
        })
        .to_string()
    }
}

/// Split an article at `m : ` / `f : ` markers that start the text or
/// follow whitespace.
fn split_article(article: &str) -> Vec<Utterance> {
    let bytes = article.as_bytes();
    let mut cuts: Vec<(usize, Speaker)> = Vec::new();
    for i in 0..bytes.len() {
        let at_boundary = i == 0 || bytes[i - 1].is_ascii_whitespace();
        if !at_boundary || !article.is_char_boundary(i) {
            continue;
        }
        let rest = &article[i..];
        if rest.starts_with("m : ") {
            cuts.push((i, Speaker::M));
        } else if rest.starts_with("f : ") {
            cuts.push((i, Speaker::F));
        }
    }
    let mut out = Vec::new();
    let head_end = cuts.first().map_or(article.len(), |c| c.0);
    let head = article[..head_end].trim();
    if !head.is_empty() {
        out.push(Utterance { speaker: None, text: head.to_string() });
    }
    for (k, &(start, speaker)) in cuts.iter().enumerate() {
        let end = cuts.get(k + 1).map_or(article.len(), |c| c.0);
        let text = article[start + 4..end].trim();
        if !text.is_empty() {
            out.push(Utterance { speaker: Some(speaker), text: text.to_string() });
        }
    }
    out
}

/// Parse one MuTual JSON object.
pub fn parse_mutual(line: &str) -> Result<MutualRecord> {
    parse_mutual_with_id(line, "<unnamed>")
}

/// Parse one MuTual JSON object, using `fallback_id` when the record has
/// no `id` field.
pub fn parse_mutual_with_id(line: &str, fallback_id: &str) -> Result<MutualRecord> {
    let fail = |id: &str, reason: String| Error::Parse { id: id.to_string(), reason };
    let value: Value = serde_json::from_str(line).map_err(|e| fail(fallback_id, format!("invalid JSON: {e}")))?;
    let id = value.get("id").and_then(Value::as_str).unwrap_or(fallback_id).to_string();
    let article = value
        .get("article")
        .and_then(Value::as_str)
        .ok_or_else(|| fail(&id, "missing string field `article`".into()))?;
    let options = value
        .get("options")
        .and_then(Value::as_array)
        .ok_or_else(|| fail(&id, "missing array field `options`".into()))?;
    if options.len() != 4 {
        return Err(fail(&id, format!("expected 4 options, found {}", options.len())));
    }
    let mut opts: [String; 4] = Default::default();
    for (slot, o) in opts.iter_mut().zip(options) {
        *slot = o.as_str().ok_or_else(|| fail(&id, "option is not a string".into()))?.to_string();
    }
    let answer = match value.get("answers").and_then(Value::as_str) {
        Some("A") => 0,
        Some("B") => 1,
        Some("C") => 2,
        Some("D") => 3,
        Some(other) => return Err(fail(&id, format!("unknown answer letter `{other}`"))),
        None => return Err(fail(&id, "missing string field `answers`".into())),
    };
    let utterances = split_article(article);
    if utterances.is_empty() {
        return Err(fail(&id, "article has no utterances".into()));
    }
    Ok(MutualRecord { id, utterances, options: opts, answer })
}

/// Read records from a file holding one JSON object, a JSON-lines file, or
/// a directory of such files (visited in name order).
pub fn load_records(path: &Path) -> Result<Vec<MutualRecord>> {
    if path.is_dir() {
        let mut files: Vec<_> = fs::read_dir(path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        files.sort();
        let mut out = Vec::new();
        for f in files {
            out.extend(load_file(&f)?);
        }
        return Ok(out);
    }
    load_file(path)
}

fn load_file(path: &Path) -> Result<Vec<MutualRecord>> {
    let text = fs::read_to_string(path)?;
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("record").to_string();
    let trimmed = text.trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    // a whole-file object parses as a single JSON value; JSON-lines does not
    if serde_json::from_str::<Value>(trimmed).is_ok() {
        return Ok(vec![parse_mutual_with_id(trimmed, &stem)?]);
    }
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_mutual_with_id(l, &format!("{stem}:{}", i + 1)))
        .collect()
}

pub fn write_jsonl(records: &[MutualRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        writeln!(out, "{}", r.to_json())?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let r = parse_mutual(r#"{"article":"m : hi . f : hello .","options":["a","b","c","d"],"answers":"B"}"#).unwrap();
        assert_eq!(r.utterances.len(), 2);
        assert_eq!(r.utterances[0].text, "hi .");
        assert_eq!(r.utterances[1].text, "hello .");
        assert_eq!(r.utterances[1].speaker, Some(Speaker::F));
        assert_eq!(r.answer, 1);
    }

    #[test]
    fn domain_violations() {
        let bad_letter = r#"{"id":"x1","article":"m : hi .","options":["a","b","c","d"],"answers":"E"}"#;
        let e = parse_mutual(bad_letter).unwrap_err().to_string();
        assert!(e.contains("x1"), "{e}");
        assert!(parse_mutual(r#"{"article":"m : hi .","options":["a","b","c"],"answers":"A"}"#).is_err());
        assert!(parse_mutual(r#"{"options":["a","b","c","d"],"answers":"A"}"#).is_err());
        assert!(parse_mutual(r#"{"article":"  ","options":["a","b","c","d"],"answers":"A"}"#).is_err());
    }

    #[test]
    fn unmarked_prefix_is_utterance_text() {
        let r = parse_mutual(r#"{"article":"hello m : yes . x : no","options":["a","b","c","d"],"answers":"A"}"#).unwrap();
        assert_eq!(r.utterances[0].speaker, None);
        assert_eq!(r.utterances[0].text, "hello");
        assert_eq!(r.utterances[1].text, "yes . x : no");
    }

    #[test]
    fn markers_inside_words_do_not_split() {
        let r = parse_mutual(r#"{"article":"m : form : x","options":["a","b","c","d"],"answers":"A"}"#).unwrap();
        assert_eq!(r.utterances.len(), 1);
    }

    #[test]
    fn accepts_whole_file_and_jsonl() {
        let dir = tempfile::tempdir().unwrap();
        let one = r#"{"id":"dev_1","article":"m : a . f : b .","options":["a","b","c","d"],"answers":"C"}"#;
        fs::write(dir.path().join("dev_1.txt"), format!("{one}\n")).unwrap();
        let lines = format!("{one}\n\n{}\n", one.replace("dev_1", "dev_2"));
        fs::write(dir.path().join("more.jsonl"), lines).unwrap();
        let all = load_records(dir.path()).unwrap();
        let ids: Vec<_> = all.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["dev_1", "dev_1", "dev_2"]);
    }
}
