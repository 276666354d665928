//! Generation of standalone matplotlib scripts for the CSV artifacts.

use std::path::Path;

use crate::artifacts::write_atomic;
use crate::error::CliError;

const PRELUDE: &str = r#"import csv
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def read_columns(name):
    with open(os.path.join(HERE, name), newline="") as f:
        rows = list(csv.DictReader(f))
    return {key: [float(r[key]) for r in rows] for key in rows[0]} if rows else {}

"#;

const BIFURCATION: &str = r#"
data = read_columns("branch.csv")
if not data:
    sys.exit("branch.csv has no rows")
fig, ax = plt.subplots(figsize=(5, 4))
ax.plot(data["mu"], data["amplitude_L2"], "o-", label="periodic branch")
ax.axvline(0.0, color="0.6", lw=0.8)
ax.set_xlabel("mu = lambda - lambda_o")
ax.set_ylabel("L2 amplitude")
ax.set_title("Bifurcation diagram")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "bifurcation.png"), dpi=150)
"#;

const RESONANCE: &str = r#"
data = read_columns("resonance.csv")
if not data:
    sys.exit("resonance.csv has no rows")
fig, ax = plt.subplots(figsize=(5, 4))
for k in sorted(set(int(k) for k in data["k"])):
    pts = [(v, a) for v, kk, a in zip(data["varpi"], data["k"], data["amplitude"]) if int(kk) == k and a > 0]
    if pts:
        ax.loglog([p[0] for p in pts], [p[1] for p in pts], "o-", label=f"k = {k}")
v0, v1 = min(data["varpi"]), max(data["varpi"])
a0 = max(data["amplitude"]) * v0
ax.loglog([v0, v1], [a0 / v0, a0 / v1], "k--", label="slope -1")
ax.set_xlabel("varpi")
ax.set_ylabel("|xi_k|")
ax.set_title("Resonant response against mass ratio")
ax.legend()
fig.tight_layout()
fig.savefig(os.path.join(HERE, "resonance.png"), dpi=150)
"#;

fn spectrum_script(files: &[String]) -> String {
    let list = files.iter().map(|f| format!("    {f:?},\n")).collect::<String>();
    format!(
        r#"
FILES = [
{list}]
fig, ax = plt.subplots(figsize=(5, 4))
for name in FILES:
    data = read_columns(name)
    if data:
        ax.plot(data["re"], data["im"], "o", label=name[len("spectrum_"):-len(".csv")])
ax.axvline(0.0, color="0.6", lw=0.8)
ax.set_xlabel("Re nu (decay rate)")
ax.set_ylabel("Im nu (frequency)")
ax.set_title("Spectrum near the imaginary axis")
ax.legend(title="lambda")
fig.tight_layout()
fig.savefig(os.path.join(HERE, "spectrum.png"), dpi=150)
"#
    )
}

/// Scripts written and warnings for the scripts skipped.
#[derive(Debug, Default)]
pub struct PlotOutcome {
    /// Script file names.
    pub written: Vec<String>,
    /// One line per skipped script.
    pub warnings: Vec<String>,
}

/// Writes one script per available artifact family into `dir`.
pub fn emit_plots(dir: &Path) -> Result<PlotOutcome, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Validation(format!("artifact directory {} does not exist", dir.display())));
    }
    let mut out = PlotOutcome::default();
    let emit = |script: &str, body: String, out: &mut PlotOutcome| -> Result<(), CliError> {
        write_atomic(&dir.join(script), format!("{PRELUDE}{body}").as_bytes())?;
        out.written.push(script.to_string());
        Ok(())
    };
    if dir.join("branch.csv").is_file() {
        emit("plot_bifurcation.py", BIFURCATION.to_string(), &mut out)?;
    } else {
        out.warnings.push("branch.csv missing: bifurcation diagram skipped".into());
    }
    let mut spectra: Vec<String> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("spectrum_") && n.ends_with(".csv"))
        .collect();
    spectra.sort();
    if spectra.is_empty() {
        out.warnings.push("no spectrum_<lambda>.csv: spectrum map skipped".into());
    } else {
        emit("plot_spectrum.py", spectrum_script(&spectra), &mut out)?;
    }
    if dir.join("resonance.csv").is_file() {
        emit("plot_resonance.py", RESONANCE.to_string(), &mut out)?;
    } else {
        out.warnings.push("resonance.csv missing: resonance scan skipped".into());
    }
    Ok(out)
}
