//! The subcommands, callable directly from tests.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use irrgn::data::{load_records, write_jsonl, DialogueExample, Vocabulary};
use irrgn::head::RankMetrics;
use irrgn::model::{Diagnostics, Irrgn};
use irrgn::tensor::{load_checkpoint, save_checkpoint};
use irrgn::train::{evaluate, prepare, train, EpochLog};
use irrgn::{ArcMode, ParameterStore};
use serde::Serialize;

use crate::run::{
    create_out_dir, load_splits, Dataset, RunConfig, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE, VOCAB_FILE,
};

#[derive(Clone, Debug, Serialize)]
pub struct TrainReport {
    pub best_epoch: usize,
    pub best: RankMetrics,
    pub epochs: Vec<EpochLog>,
    pub out: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Train one model, writing `config.json`, `vocab.json`, `log.jsonl` and the
/// best checkpoint into `cfg.out`.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let data = Dataset::build(cfg)?;
    create_out_dir(&cfg.out)?;
    write_json(&cfg.out.join(CONFIG_FILE), cfg)?;
    write_json(&cfg.out.join(VOCAB_FILE), &data.vocab)?;
    let (model, mut params) = Irrgn::init::<f64>(cfg.model.clone(), data.vocab.len())?;
    let mut log = BufWriter::new(File::create(cfg.out.join(LOG_FILE))?);
    let ckpt = cfg.out.join(CHECKPOINT_FILE);
    let outcome = train(&model, &mut params, &data.train, &data.val, &cfg.train, cfg.model.seed, |ev| {
        serde_json::to_writer(&mut log, ev.log)?;
        log.write_all(b"\n")?;
        log.flush()?;
        if ev.improved {
            save_checkpoint(ev.params, &ckpt)?;
        }
        Ok(())
    })
    .with_context(|| format!("training aborted; the last good checkpoint is kept in {}", cfg.out.display()))?;
    let report = TrainReport {
        best_epoch: outcome.best_epoch,
        best: outcome.best_metrics,
        epochs: outcome.logs,
        out: cfg.out.clone(),
    };
    write_json(&cfg.out.join("best.json"), &serde_json::json!({"epoch": report.best_epoch, "metrics": report.best}))?;
    Ok(report)
}

/// A trained run loaded back from its directory.
pub struct LoadedRun {
    pub config: RunConfig,
    pub vocab: Vocabulary,
    pub model: Irrgn,
    pub params: ParameterStore,
}

impl LoadedRun {
    pub fn open(dir: &Path, checkpoint: Option<&Path>) -> Result<Self> {
        let config = RunConfig::load(&dir.join(CONFIG_FILE))?;
        let text = fs::read_to_string(dir.join(VOCAB_FILE)).context("reading the run vocabulary")?;
        let vocab: Vocabulary = serde_json::from_str(&text)?;
        let (model, mut params) = Irrgn::init::<f64>(config.model.clone(), vocab.len())?;
        let ckpt = checkpoint.map_or_else(|| dir.join(CHECKPOINT_FILE), Path::to_path_buf);
        load_checkpoint(&ckpt, &mut params).with_context(|| format!("loading {}", ckpt.display()))?;
        Ok(LoadedRun { config, vocab, model, params })
    }

    /// Examples from `path`, or the run's own validation split.
    pub fn examples(&self, path: Option<&Path>) -> Result<Vec<DialogueExample>> {
        let records = match path {
            Some(p) => load_records(p)?,
            None => load_splits(&self.config.data)?.1,
        };
        Ok(prepare(&DialogueExample::from_records(&records, &self.vocab)?, &self.config.model))
    }
}

pub fn cmd_eval(run: &Path, checkpoint: Option<&Path>, data: Option<&Path>, workers: usize) -> Result<RankMetrics> {
    let loaded = LoadedRun::open(run, checkpoint)?;
    let examples = loaded.examples(data)?;
    if examples.is_empty() {
        bail!("no examples to evaluate");
    }
    Ok(evaluate(&loaded.model, &loaded.params, &examples, ArcMode::Hard, workers)?.metrics)
}

const LETTERS: [&str; 4] = ["A", "B", "C", "D"];

fn node_label(node: usize, utterances: usize) -> String {
    if node < utterances {
        format!("u{}", node + 1)
    } else {
        LETTERS[node - utterances].to_string()
    }
}

fn write_attention(path: &Path, att: &irrgn::Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["option", "A", "B", "C", "D"])?;
    for (r, label) in LETTERS.iter().enumerate() {
        let mut row = vec![label.to_string()];
        row.extend(att.row(r).iter().map(|x| x.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_arcs(path: &Path, diag: &Diagnostics, types: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["src".to_string(), "dst".to_string(), "hard_type".to_string()];
    header.extend((0..types).map(|r| format!("p{r}")));
    w.write_record(&header)?;
    for arc in &diag.arcs {
        let mut row = vec![
            node_label(arc.src, diag.num_utterances),
            node_label(arc.dst, diag.num_utterances),
            arc.kind.hard_type.to_string(),
        ];
        row.extend(arc.kind.probs.iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Files written by [`cmd_dump`].
#[derive(Clone, Debug, Default)]
pub struct DumpFiles {
    pub odc_before: Option<PathBuf>,
    pub odc_after: Option<PathBuf>,
    pub arcs: Option<PathBuf>,
}

/// Write the option attention maps and arc types of one example.
pub fn cmd_dump(run: &Path, id: &str, data: Option<&Path>, out: &Path) -> Result<DumpFiles> {
    let loaded = LoadedRun::open(run, None)?;
    let examples = loaded.examples(data)?;
    let ex = examples.iter().find(|e| e.id == id).with_context(|| format!("no example with id `{id}`"))?;
    let pred = loaded.model.predict(&loaded.params, ex, ArcMode::Hard)?;
    fs::create_dir_all(out)?;
    let mut files = DumpFiles::default();
    if let Some(att) = &pred.diagnostics.odc_before {
        let p = out.join("odc_before.csv");
        write_attention(&p, att)?;
        files.odc_before = Some(p);
    }
    if let Some(att) = &pred.diagnostics.odc_after {
        let p = out.join("odc_after.csv");
        write_attention(&p, att)?;
        files.odc_after = Some(p);
    }
    if loaded.model.urr.is_some() {
        let p = out.join("arcs.csv");
        write_arcs(&p, &pred.diagnostics, loaded.config.model.arc_types)?;
        files.arcs = Some(p);
    }
    Ok(files)
}

/// Gold-option self-attention before and after reasoning, per example.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelfAttention {
    pub id: String,
    pub gold: usize,
    pub before: f64,
    pub after: f64,
}

/// Self-attention of the gold option in both comparators over a dataset,
/// written to `out` as CSV. Returns the rows and the fraction where the
/// after-weight is larger.
pub fn cmd_self_attention(run: &Path, data: Option<&Path>, out: &Path) -> Result<(Vec<SelfAttention>, f64)> {
    let loaded = LoadedRun::open(run, None)?;
    let examples = loaded.examples(data)?;
    if examples.is_empty() {
        bail!("no examples");
    }
    let rows = gold_self_attention(&loaded.model, &loaded.params, &examples)?;
    let mut w = csv::Writer::from_path(out)?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    let frac = rows.iter().filter(|r| r.after > r.before).count() as f64 / rows.len() as f64;
    Ok((rows, frac))
}

pub fn gold_self_attention(model: &Irrgn, params: &ParameterStore, examples: &[DialogueExample]) -> Result<Vec<SelfAttention>> {
    examples
        .iter()
        .map(|ex| {
            let d = model.predict(params, ex, ArcMode::Hard)?.diagnostics;
            let (Some(b), Some(a)) = (d.odc_before, d.odc_after) else {
                bail!("the model has no option comparators to inspect");
            };
            Ok(SelfAttention { id: ex.id.clone(), gold: ex.answer, before: b.at(ex.answer, ex.answer), after: a.at(ex.answer, ex.answer) })
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    ArcTypes,
    RgcnLayers,
}

impl SweepAxis {
    pub fn symbol(self) -> &'static str {
        match self {
            SweepAxis::ArcTypes => "T",
            SweepAxis::RgcnLayers => "l",
        }
    }

    pub fn default_values(self) -> Vec<usize> {
        match self {
            SweepAxis::ArcTypes => (4..=12).collect(),
            SweepAxis::RgcnLayers => vec![1, 2, 3, 4],
        }
    }
}

impl std::str::FromStr for SweepAxis {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" | "arc-types" => Ok(SweepAxis::ArcTypes),
            "l" | "L" | "rgcn-layers" => Ok(SweepAxis::RgcnLayers),
            other => bail!("unknown sweep axis `{other}` (T or l)"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: usize,
    pub metrics: Option<RankMetrics>,
    pub error: Option<String>,
}

/// Train one model per axis value under `cfg.out/<axis>=<value>` and write
/// `sweep.md` and `sweep.csv`. Failed runs are recorded and skipped.
pub fn cmd_sweep(cfg: &RunConfig, axis: SweepAxis, values: &[usize]) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        bail!("sweep needs at least one value");
    }
    create_out_dir(&cfg.out)?;
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let mut run = cfg.clone();
        match axis {
            SweepAxis::ArcTypes => run.model.arc_types = value,
            SweepAxis::RgcnLayers => run.model.rgcn_layers = value,
        }
        run.out = cfg.out.join(format!("{}={value}", axis.symbol()));
        let result = run.model.validate().map_err(anyhow::Error::from).and_then(|_| cmd_train(&run));
        rows.push(match result {
            Ok(r) => SweepRow { value, metrics: Some(r.best), error: None },
            Err(e) => SweepRow { value, metrics: None, error: Some(format!("{e:#}")) },
        });
    }
    fs::write(cfg.out.join("sweep.md"), sweep_markdown(axis, &rows))?;
    let mut w = csv::Writer::from_path(cfg.out.join("sweep.csv"))?;
    w.write_record(["axis", "value", "r4_at_1", "r4_at_2", "mrr", "status"])?;
    for r in &rows {
        let (a, b, c) = r.metrics.map_or((String::new(), String::new(), String::new()), |m| {
            (m.r4_at_1.to_string(), m.r4_at_2.to_string(), m.mrr.to_string())
        });
        let status = r.error.clone().map_or("ok".to_string(), |e| format!("failed: {e}"));
        w.write_record([axis.symbol().to_string(), r.value.to_string(), a, b, c, status])?;
    }
    w.flush()?;
    Ok(rows)
}

fn signed(x: f64) -> String {
    if x == 0.0 {
        "0".to_string()
    } else {
        format!("{x:+.3}")
    }
}

/// Markdown table of a sweep. On the `T` axis with `T = 8` present, the
/// `T = 8` row is absolute and the others are signed offsets and deltas
/// relative to it.
pub fn sweep_markdown(axis: SweepAxis, rows: &[SweepRow]) -> String {
    let sym = axis.symbol();
    let mut md = format!("| {sym} | R4@1 | R4@2 | MRR |\n|---|---|---|---|\n");
    let reference = (axis == SweepAxis::ArcTypes)
        .then(|| rows.iter().find(|r| r.value == 8).and_then(|r| r.metrics))
        .flatten();
    let fmt_abs = |m: &RankMetrics| format!("{:.3} | {:.3} | {:.3}", m.r4_at_1, m.r4_at_2, m.mrr);
    match reference {
        Some(base) => {
            md.push_str(&format!("| 8 | {} |\n", fmt_abs(&base)));
            let mut others: Vec<&SweepRow> = rows.iter().filter(|r| r.value != 8).collect();
            others.sort_by_key(|r| (r.value < 8, r.value.abs_diff(8)));
            for r in others {
                let off = r.value as i64 - 8;
                let cells = match (&r.metrics, &r.error) {
                    (Some(m), _) => format!(
                        "{} | {} | {}",
                        signed(m.r4_at_1 - base.r4_at_1),
                        signed(m.r4_at_2 - base.r4_at_2),
                        signed(m.mrr - base.mrr)
                    ),
                    (None, e) => format!("failed: {} | | ", e.as_deref().unwrap_or("unknown")),
                };
                md.push_str(&format!("| {off:+} | {cells} |\n"));
            }
        }
        None => {
            let mut sorted: Vec<&SweepRow> = rows.iter().collect();
            sorted.sort_by_key(|r| std::cmp::Reverse(r.value));
            for r in sorted {
                let cells = match (&r.metrics, &r.error) {
                    (Some(m), _) => fmt_abs(m),
                    (None, e) => format!("failed: {} | | ", e.as_deref().unwrap_or("unknown")),
                };
                md.push_str(&format!("| {} | {cells} |\n", r.value));
            }
        }
    }
    md
}

/// Write the synthetic corpus as JSON-lines `train.jsonl` and `val.jsonl`.
pub fn cmd_gen_data(cfg: &RunConfig, out: &Path) -> Result<(PathBuf, PathBuf)> {
    let corpus = irrgn::data::gen_synthetic(&cfg.data.synthetic)?;
    fs::create_dir_all(out)?;
    let (t, v) = (out.join("train.jsonl"), out.join("val.jsonl"));
    write_jsonl(&corpus.train, &t)?;
    write_jsonl(&corpus.val, &v)?;
    Ok((t, v))
}
