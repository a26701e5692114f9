use std::path::PathBuf;

use clap::Args;
use portvm_core::scheduler::{calibrate, decide, Calibration, Decision, LabelRegistry, Placement, WorkloadProfile};

use crate::error::CliError;
use crate::inputs;

#[derive(Args, Debug)]
pub struct DecideArgs {
    /// Workload profile (TOML).
    pub profile: PathBuf,
    /// Calibration file; the built-in reference calibration when omitted.
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    /// Data labels, comma separated; their strictest class replaces the profile's sensitivity.
    #[arg(long)]
    pub labels: Option<String>,
    /// Label table replacing the built-in one.
    #[arg(long, value_name = "FILE")]
    pub label_table: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct CalibrateArgs {
    /// Size of the large calibration workspace in bytes.
    #[arg(long, default_value_t = 64 << 20)]
    pub bytes: usize,
    /// Migrations per size; the median is kept.
    #[arg(long, default_value_t = 3)]
    pub repeats: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Write the calibration here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn decide_cmd(a: DecideArgs) -> Result<(), CliError> {
    let mut profile = WorkloadProfile::from_toml_str(&inputs::read_text(&a.profile)?)?;
    let cal = match &a.calibration {
        Some(p) => Calibration::load(p)?,
        None => Calibration::reference(),
    };
    if let Some(labels) = &a.labels {
        let reg = match &a.label_table {
            Some(p) => LabelRegistry::load(p)?,
            None => LabelRegistry::builtin(),
        };
        profile.sensitivity = reg.classify(labels.split(',').map(str::trim).filter(|s| !s.is_empty()))?;
    }
    let d = decide(&profile, &cal);
    if a.json {
        println!("{}", serde_json::to_string_pretty(&d).map_err(|e| CliError::Internal(e.to_string()))?);
    } else {
        print!("{}", render_decision(&d));
    }
    Ok(())
}

pub fn render_decision(d: &Decision) -> String {
    let mut s = match &d.placement {
        Placement::Stay { reason } => format!("stay ({})\n", reason.name()),
        Placement::Migrate { target, expected_net_speedup } => {
            format!("migrate to {target} (net speedup {expected_net_speedup:.3})\n")
        }
    };
    s += &format!("ratio {:.3}, migration time {:.3} s\n", d.ratio, d.migration_secs);
    for c in &d.conjuncts {
        s += &format!("  [{}] {}: {}\n", if c.holds { "ok" } else { "no" }, c.name, c.detail);
    }
    s
}

pub fn calibrate_cmd(a: CalibrateArgs) -> Result<(), CliError> {
    let cal = calibrate(a.bytes, a.repeats.max(1), a.seed)?;
    match &a.out {
        Some(p) => {
            cal.save(p)?;
            println!("wrote {}", p.display());
        }
        None => print!("{}", cal.to_toml()),
    }
    Ok(())
}
