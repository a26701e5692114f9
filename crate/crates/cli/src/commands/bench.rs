use std::path::PathBuf;
use std::time::Duration;

use clap::Args;
use portvm_core::speculation::{render_table, run_benchmark, SuiteConfig};
use portvm_core::validation::{evaluate_corpus, load_corpus, load_rules, measure_overhead, Validator};

use crate::error::CliError;
use crate::inputs;

#[derive(Args, Debug)]
pub struct ValidateArgs {
    /// Validator rule file (TOML).
    #[arg(long)]
    pub rules: PathBuf,
    /// Labelled corpus (JSON lines).
    #[arg(long)]
    pub corpus: PathBuf,
    /// Also gate every item in parallel and serial mode and report the overhead.
    #[arg(long)]
    pub overhead: bool,
    /// Simulated generation time per chunk for --overhead.
    #[arg(long, default_value_t = 1.0)]
    pub chunk_delay_ms: f64,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct SpeculateBenchArgs {
    /// Benchmark suite (TOML); a small built-in suite when omitted.
    pub suite: Option<PathBuf>,
    /// Also write one JSON object per workload here.
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
}

fn to_json<T: serde::Serialize + ?Sized>(v: &T) -> Result<String, CliError> {
    serde_json::to_string(v).map_err(|e| CliError::Internal(e.to_string()))
}

pub fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let rules = load_rules(&a.rules)?;
    let validators: Vec<&dyn Validator> = rules.iter().map(|r| r as &dyn Validator).collect();
    let items = load_corpus(&a.corpus)?;
    let metrics = evaluate_corpus(&items, &validators)?;
    let overhead = if a.overhead {
        if !(a.chunk_delay_ms >= 0.0 && a.chunk_delay_ms.is_finite()) {
            return Err(CliError::Usage("--chunk-delay-ms must be non-negative".into()));
        }
        Some(measure_overhead(&items, &validators, Duration::from_secs_f64(a.chunk_delay_ms / 1e3))?)
    } else {
        None
    };
    if a.json {
        println!("{}", to_json(&serde_json::json!({ "categories": metrics, "overhead": overhead }))?);
        return Ok(());
    }
    println!("{} items, {} validators", items.len(), validators.len());
    println!("{:<20} {:>5} {:>5} {:>9} {:>9}", "category", "pos", "neg", "detect", "false+");
    for m in &metrics {
        println!(
            "{:<20} {:>5} {:>5} {:>8.1}% {:>8.1}%",
            m.category.name(),
            m.positives,
            m.negatives,
            m.detection_rate * 100.0,
            m.false_positive_rate * 100.0
        );
    }
    if let Some(r) = overhead {
        for (mode, t) in [("parallel", r.parallel), ("serial", r.serial)] {
            println!(
                "{mode:<8} elapsed {:.3} s, overhead {:.3} s ({:.1}%), {} streams blocked",
                t.elapsed_secs,
                t.overhead_secs,
                t.overhead_fraction * 100.0,
                t.blocked_streams
            );
        }
        println!("modes equivalent: {}", r.equivalent);
    }
    Ok(())
}

const DEFAULT_SUITE: &str = r#"
seed = 1
[[workload]]
name = "demo"
fast_ms = 5.0
ratio = 6.0
tasks = 10
inconsistent_fraction = 0.1
"#;

pub fn speculate_bench(a: SpeculateBenchArgs) -> Result<(), CliError> {
    let suite = match &a.suite {
        Some(p) => SuiteConfig::load(p)?,
        None => SuiteConfig::from_toml_str(DEFAULT_SUITE)?,
    };
    let rows = run_benchmark(&suite)?;
    print!("{}", render_table(&rows));
    if let Some(p) = &a.jsonl {
        let mut out = String::new();
        for r in &rows {
            out += &to_json(r)?;
            out.push('\n');
        }
        inputs::write(p, out.as_bytes())?;
    }
    Ok(())
}
