use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::Args;
use portvm_core::replication::{check_assertions, run_failover_monitor, RunSummary, Scenario};
use portvm_core::speculation::{render_table, run_benchmark, BenchRow, SuiteConfig};
use portvm_core::validation::{load_corpus, load_rules, measure_overhead, OverheadReport, Validator};
use serde_json::json;

use crate::error::CliError;
use crate::inputs;

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Scenario file (TOML).
    pub scenario: PathBuf,
    /// Write the event log as JSON lines; `-` for stdout.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Print metrics as JSON.
    #[arg(long)]
    pub json: bool,
}

/// Optional `[validation]` section of a scenario.
struct ValidationSection {
    rules: PathBuf,
    corpus: PathBuf,
    chunk_delay: Duration,
}

struct Parsed {
    scenario: Scenario,
    speculation: Option<SuiteConfig>,
    validation: Option<ValidationSection>,
}

fn section_err(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Parse(format!("[{name}] section: {msg}"))
}

fn parse(path: &Path) -> Result<Parsed, CliError> {
    let text = inputs::read_text(path)?;
    let mut table: toml::Table = text.parse().map_err(|e| CliError::Parse(format!("{}: {e}", path.display())))?;
    let base = path.parent().unwrap_or(Path::new("."));

    let speculation = match table.remove("speculation") {
        None => None,
        Some(v) => {
            let s = toml::to_string(&v).map_err(|e| section_err("speculation", e))?;
            Some(SuiteConfig::from_toml_str(&s)?)
        }
    };
    let validation = match table.remove("validation") {
        None => None,
        Some(toml::Value::Table(mut t)) => {
            let mut path_field = |k: &str| match t.remove(k) {
                Some(toml::Value::String(s)) => Ok(base.join(s)),
                _ => Err(section_err("validation", format!("`{k}` must be a path string"))),
            };
            let rules = path_field("rules")?;
            let corpus = path_field("corpus")?;
            let delay_ms = match t.remove("chunk_delay_ms") {
                None => 1.0,
                Some(toml::Value::Integer(i)) => i as f64,
                Some(toml::Value::Float(f)) => f,
                Some(_) => return Err(section_err("validation", "`chunk_delay_ms` must be a number")),
            };
            if let Some(k) = t.keys().next() {
                return Err(section_err("validation", format!("unknown key `{k}`")));
            }
            if !(delay_ms >= 0.0 && delay_ms.is_finite()) {
                return Err(section_err("validation", "`chunk_delay_ms` must be non-negative"));
            }
            Some(ValidationSection { rules, corpus, chunk_delay: Duration::from_secs_f64(delay_ms / 1e3) })
        }
        Some(_) => return Err(section_err("validation", "must be a table")),
    };
    let rest = toml::to_string(&table).map_err(|e| CliError::Internal(e.to_string()))?;
    let scenario = Scenario::from_toml_str(&rest)?;
    Ok(Parsed { scenario, speculation, validation })
}

fn render_summary(s: &RunSummary) -> String {
    let mut out = format!("scenario {} ({} replicas)\n", s.scenario, s.replicas);
    out += &format!("active: {} -> {}\n", s.initial_active, s.final_active);
    for (t, r) in &s.active_timeline {
        out += &format!("  t={t:.3}s {r}\n");
    }
    let lat: Vec<String> = s.failover_latencies_ms.iter().map(|l| format!("{l:.3}")).collect();
    out += &format!("failovers: {} [{}] ms, max {:.3} ms\n", s.failovers, lat.join(", "), s.max_failover_latency_ms);
    out += &format!("max decision time: {:.3} ms\n", s.max_decision_wall_ms);
    out += &format!("mean sync fraction: {:.4}\n", s.mean_sync_fraction);
    out += &format!("functionality: {:.3}\n", s.functionality);
    match s.rounds_to_converge {
        Some(r) => out += &format!("converged after {r} rounds\n"),
        None => out += "did not converge\n",
    }
    out
}

fn render_overhead(r: &OverheadReport) -> String {
    format!(
        "validation over {} items: parallel overhead {:.3} s ({:.1}%), serial overhead {:.3} s ({:.1}%), equivalent: {}\n",
        r.items,
        r.parallel.overhead_secs,
        r.parallel.overhead_fraction * 100.0,
        r.serial.overhead_secs,
        r.serial.overhead_fraction * 100.0,
        r.equivalent
    )
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let parsed = parse(&a.scenario)?;
    let summary = run_failover_monitor(&parsed.scenario)?;
    match a.log.as_deref() {
        Some(p) if p == Path::new("-") => print!("{}", summary.log_jsonl()),
        Some(p) => inputs::write(p, summary.log_jsonl().as_bytes())?,
        None => {}
    }

    let bench: Option<Vec<BenchRow>> = parsed.speculation.as_ref().map(run_benchmark).transpose()?;
    let overhead = match &parsed.validation {
        None => None,
        Some(v) => {
            let rules = load_rules(&v.rules)?;
            let validators: Vec<&dyn Validator> = rules.iter().map(|r| r as &dyn Validator).collect();
            let items = load_corpus(&v.corpus)?;
            Some(measure_overhead(&items, &validators, v.chunk_delay)?)
        }
    };
    let failures = check_assertions(&parsed.scenario, &summary);

    if a.json {
        let doc = json!({
            "summary": summary,
            "speculation": bench,
            "validation": overhead,
            "failed_assertions": failures,
        });
        println!("{}", serde_json::to_string_pretty(&doc).map_err(|e| CliError::Internal(e.to_string()))?);
    } else {
        print!("{}", render_summary(&summary));
        if let Some(rows) = &bench {
            print!("{}", render_table(rows));
        }
        if let Some(r) = &overhead {
            print!("{}", render_overhead(r));
        }
        for f in &failures {
            println!("FAIL {f}");
        }
        if failures.is_empty() {
            println!("assertions passed");
        }
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(CliError::AssertionFailed(failures))
    }
}
