//! Command-line front end: configuration, training runs, evaluation,
//! sweeps and diagnostic dumps.

pub mod args;
pub mod commands;
pub mod run;

use std::path::Path;

use anyhow::Result;
use clap::Parser;

use args::{Cli, Command, ConfigArgs};
use run::RunConfig;

/// Resolve a run configuration from the file, the named flags and the
/// dotted overrides, in that order.
pub fn resolve_config(args: &ConfigArgs, overrides: &[(String, String)]) -> Result<RunConfig> {
    let mut ov: Vec<(String, String)> = Vec::new();
    let mut set = |k: &str, v: String| ov.push((k.to_string(), v));
    if let Some(s) = args.seed {
        set("model.seed", s.to_string());
        set("data.synthetic.seed", s.to_string());
    }
    if let Some(a) = args.ablate {
        let m = irrgn::ModelConfig::default().with_ablation(a);
        set("model.odc_before", m.odc_before.to_string());
        set("model.odc_after", m.odc_after.to_string());
        set("model.urr", m.urr.to_string());
    }
    if let Some(m) = args.mode {
        set("model.mode", serde_json::to_string(&m)?);
    }
    if let Some(t) = args.arc_types {
        set("model.arc_types", t.to_string());
    }
    if let Some(l) = args.rgcn_layers {
        set("model.rgcn_layers", l.to_string());
    }
    if args.no_odc_before {
        set("model.odc_before", "false".into());
    }
    if args.no_odc_after {
        set("model.odc_after", "false".into());
    }
    if args.no_urr {
        set("model.urr", "false".into());
    }
    if let Some(o) = &args.out {
        set("out", serde_json::to_string(o)?);
    }
    ov.extend_from_slice(overrides);
    RunConfig::resolve(args.config.as_deref(), &ov)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// Entry point shared by the binary and the tests.
pub fn run(argv: Vec<String>) -> Result<()> {
    let (argv, overrides) = run::split_overrides(argv)?;
    let cli = Cli::parse_from(argv);
    let takes_overrides = matches!(cli.command, Command::Train(_) | Command::Sweep(_) | Command::GenData(_));
    if !overrides.is_empty() && !takes_overrides {
        anyhow::bail!("configuration overrides only apply to train, sweep and gen-data");
    }
    match cli.command {
        Command::Train(a) => {
            let cfg = resolve_config(&a, &overrides)?;
            let report = commands::cmd_train(&cfg)?;
            for e in &report.epochs {
                eprintln!("{}", serde_json::to_string(e)?);
            }
            print_json(&serde_json::json!({"best_epoch": report.best_epoch, "metrics": report.best, "out": report.out}))
        }
        Command::Eval(a) => {
            let m = commands::cmd_eval(&a.run, a.checkpoint.as_deref(), a.data.as_deref(), a.workers)?;
            if let Some(out) = &a.out {
                std::fs::write(out, serde_json::to_string_pretty(&m)? + "\n")?;
            }
            print_json(&m)
        }
        Command::Dump(a) => {
            if a.self_attention {
                let (_, frac) = commands::cmd_self_attention(&a.run, a.data.as_deref(), &a.out)?;
                print_json(&serde_json::json!({"file": a.out, "after_exceeds_before": frac}))
            } else {
                let id = a.id.as_deref().unwrap_or_default();
                let files = commands::cmd_dump(&a.run, id, a.data.as_deref(), &a.out)?;
                for p in [files.odc_before, files.odc_after, files.arcs].into_iter().flatten() {
                    println!("{}", p.display());
                }
                Ok(())
            }
        }
        Command::Sweep(a) => {
            let cfg = resolve_config(&a.config, &overrides)?;
            let values = if a.values.is_empty() { a.axis.default_values() } else { a.values };
            let rows = commands::cmd_sweep(&cfg, a.axis, &values)?;
            print!("{}", commands::sweep_markdown(a.axis, &rows));
            Ok(())
        }
        Command::GenData(a) => {
            let cfg = resolve_config(&a, &overrides)?;
            let out = a.out.as_deref().unwrap_or(Path::new("data"));
            let (t, v) = commands::cmd_gen_data(&cfg, out)?;
            println!("{}\n{}", t.display(), v.display());
            Ok(())
        }
    }
}
