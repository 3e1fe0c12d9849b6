//! Cross-run tables built from finished run directories.

use std::path::{Path, PathBuf};

use crate::config::{ExperimentConfig, Preset};
use crate::error::{io_error, CliError};
use crate::manifest::{sha256_hex, Manifest, RunDir};

struct Run {
    dir: PathBuf,
    config: ExperimentConfig,
    manifest: Manifest,
}

impl Run {
    fn read(&self, name: &str) -> Result<String, CliError> {
        if self.manifest.file(name).is_none() {
            return Err(CliError::Merge(format!("{} has no {name}", self.dir.display())));
        }
        let path = self.dir.join(name);
        std::fs::read_to_string(&path).map_err(io_error(&path))
    }
}

/// Data rows of a CSV: comment lines and the header are dropped.
fn rows(text: &str) -> impl Iterator<Item = &str> {
    text.lines().filter(|l| !l.starts_with('#')).skip(1)
}

/// Splits off comment lines and the header of the first table.
fn preamble(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        out.push_str(line);
        out.push('\n');
        if !line.starts_with('#') {
            break;
        }
    }
    out
}

/// Merges run directories into `out`. Runs must share k̄ and bin width and
/// come from compatible presets. Output depends only on run contents, so
/// merging the same runs again reproduces the same files.
pub fn merge_runs(inputs: &[PathBuf], out: &Path) -> Result<Manifest, CliError> {
    if inputs.is_empty() {
        return Err(CliError::Merge("no run directories given".into()));
    }
    let mut runs = Vec::with_capacity(inputs.len());
    for dir in inputs {
        let manifest = Manifest::read(dir)?;
        manifest.verify(dir)?;
        let config = manifest
            .config
            .clone()
            .ok_or_else(|| CliError::Merge(format!("{} is itself a merged report", dir.display())))?;
        runs.push(Run { dir: dir.clone(), config, manifest });
    }
    // a stable order keeps the merged tables independent of argument order
    runs.sort_by(|a, b| {
        a.config
            .control_phase_rad
            .total_cmp(&b.config.control_phase_rad)
            .then(a.config.kick_strength.total_cmp(&b.config.kick_strength))
            .then(a.config.period_kicks.cmp(&b.config.period_kicks))
            .then(a.manifest.config_sha256.cmp(&b.manifest.config_sha256))
    });

    let first = &runs[0];
    for run in &runs[1..] {
        if run.config.kbar != first.config.kbar {
            return Err(CliError::Merge(format!(
                "kbar differs: {} in {} vs {} in {}",
                first.config.kbar,
                first.dir.display(),
                run.config.kbar,
                run.dir.display()
            )));
        }
        if run.manifest.bin_width != first.manifest.bin_width {
            return Err(CliError::Merge(format!(
                "bin width differs: {:?} in {} vs {:?} in {}",
                first.manifest.bin_width,
                first.dir.display(),
                run.manifest.bin_width,
                run.dir.display()
            )));
        }
    }
    let family = |p: Preset| match p {
        Preset::Pi0Trace | Preset::ContrastDynamics | Preset::Custom => Preset::ContrastDynamics,
        other => other,
    };
    if let Some(run) = runs.iter().find(|r| family(r.config.preset) != family(first.config.preset)) {
        return Err(CliError::Merge(format!(
            "cannot merge a {} run with a {} run",
            first.config.preset, run.config.preset
        )));
    }
    let mut writer = RunDir::create(out)?;
    match family(first.config.preset) {
        Preset::BetaG => {
            let texts = runs.iter().map(|r| r.read("beta_g.csv")).collect::<Result<Vec<_>, _>>()?;
            let mut table = preamble(&texts[0]);
            for text in &texts {
                for row in rows(text) {
                    table.push_str(row);
                    table.push('\n');
                }
            }
            writer.write("beta_g.csv", &table)?;
        }
        Preset::ContrastSweep => {
            let mut all: Vec<(f64, String)> = Vec::new();
            let mut header = String::new();
            for run in &runs {
                let text = run.read("sweep.csv")?;
                header = preamble(&text);
                for row in rows(&text) {
                    let phi: f64 = row.split(',').next().and_then(|s| s.parse().ok()).unwrap_or(f64::NAN);
                    all.push((phi, row.to_string()));
                }
            }
            all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let mut table = header;
            for (_, row) in all {
                table.push_str(&row);
                table.push('\n');
            }
            writer.write("sweep.csv", &table)?;
        }
        Preset::MapCheck => {
            let mut table = String::from("period,phi_rad,class,gauge_reducible,transverse_flux_rad\n");
            for run in &runs {
                let report: serde_json::Value = serde_json::from_str(&run.read("report.json")?)
                    .map_err(|e| CliError::Merge(format!("{}: {e}", run.dir.display())))?;
                table.push_str(&format!(
                    "{},{},{},{},{}\n",
                    report["period"], report["phi_rad"], report["class"].as_str().unwrap_or(""), report["gauge_reducible"], report["transverse_flux_rad"]
                ));
            }
            writer.write("map_checks.csv", &table)?;
        }
        _ => {
            let mut table = String::from("control_phase_rad,t,kind,contrast,background,stderr\n");
            for run in &runs {
                let text = run.read("contrasts.csv")?;
                for row in rows(&text) {
                    table.push_str(&format!("{},{row}\n", run.config.control_phase_rad));
                }
            }
            writer.write("contrasts.csv", &table)?;
        }
    }
    let mut sources = String::from("preset,config_sha256\n");
    for run in &runs {
        sources.push_str(&format!("{},{}\n", run.config.preset, run.manifest.config_sha256));
    }
    writer.write("sources.csv", &sources)?;
    let bin_width = first.manifest.bin_width;
    let checksum = sha256_hex(sources.as_bytes());
    writer.finish("merge", None, bin_width, Some(checksum))
}
