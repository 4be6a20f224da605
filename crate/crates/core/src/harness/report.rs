use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::criteria::{self, CriterionResult};
use super::svg::{chart, Panel};
use super::RunRecord;
use crate::error::{Error, Result};

pub const CSV_HEADER: &str = "scenario,objective,beta,eta,seed,mara_enabled,tau_rule,final_tv,answer_entropy,mode1_mass,mode2_mass,anchor_churn,steps,wall_ms,gradient_mode";

fn full(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_records_csv<W: Write>(records: &[RunRecord], mut out: W) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.objective.as_str(),
            r.beta,
            r.eta,
            r.seed,
            r.mara_enabled,
            r.tau_rule,
            full(r.final_tv),
            full(r.answer_entropy),
            full(r.mode1_mass),
            full(r.mode2_mass),
            r.anchor_churn,
            r.steps,
            r.wall_ms.map(|w| w.to_string()).unwrap_or_default(),
            r.gradient_mode,
        )?;
    }
    Ok(())
}

pub fn read_records_json(path: &Path) -> Result<Vec<RunRecord>> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

type GroupKey = (String, &'static str);

fn groups(records: &[RunRecord]) -> BTreeMap<GroupKey, Vec<&RunRecord>> {
    let mut out: BTreeMap<GroupKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        out.entry((r.scenario.clone(), r.objective.as_str())).or_default().push(r);
    }
    out
}

fn run_label(r: &RunRecord) -> String {
    let mut label = format!("{} β = {} seed {}", r.gradient_mode, r.beta, r.seed);
    if r.eta != 0.0 {
        let _ = write!(label, " η = {}", r.eta);
    }
    if r.mara_enabled {
        let _ = write!(label, " MARA {}", r.tau_rule);
    }
    let _ = write!(label, "  (TV {:.4})", r.final_tv);
    label
}

/// One panel per distinct (mode, MARA, β, η) using the lowest seed.
fn panels_for(records: &[&RunRecord]) -> Vec<Panel> {
    let mut seen = Vec::new();
    let mut panels = Vec::new();
    for r in records.iter().filter(|r| !r.failed()) {
        let key = (r.gradient_mode.clone(), r.mara_enabled, r.beta.to_bits(), r.eta.to_bits());
        if seen.contains(&key) {
            continue;
        }
        seen.push(key);
        panels.push(Panel { label: run_label(r), bars: r.final_masses.clone(), line: r.target_masses.clone() });
    }
    panels
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "-".into()
    } else {
        format!("{v:.4}")
    }
}

fn summary(records: &[RunRecord], results: &[CriterionResult]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Sweep summary\n");
    let failed = records.iter().filter(|r| r.failed()).count();
    let _ = writeln!(s, "{} runs, {} failed.\n", records.len(), failed);
    let _ = writeln!(s, "## Acceptance criteria\n");
    let _ = writeln!(s, "| # | criterion | measured | verdict |");
    let _ = writeln!(s, "|---|---|---|---|");
    for c in results {
        let _ = writeln!(s, "| {} | {} | {} | {} |", c.id, c.title, c.measured, c.verdict());
    }
    for ((scenario, objective), rs) in groups(records) {
        let _ = writeln!(s, "\n## {scenario} / {objective}\n");
        let _ = writeln!(s, "| mode | MARA | β | η | seeds | mean TV | mode 1 | mode 2 | target mode 1 | target mode 2 | churn |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|---|---|---|---|");
        let mut rows: BTreeMap<(String, bool, u64, u64), Vec<&RunRecord>> = BTreeMap::new();
        for r in &rs {
            rows.entry((r.gradient_mode.clone(), r.mara_enabled, r.beta.to_bits(), r.eta.to_bits())).or_default().push(r);
        }
        for ((mode, mara, _, _), cell) in rows {
            let ok: Vec<&&RunRecord> = cell.iter().filter(|r| !r.failed()).collect();
            let mean = |f: fn(&RunRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|r| f(r)).sum::<f64>() / ok.len() as f64
                }
            };
            let first = cell[0];
            let _ = writeln!(
                s,
                "| {mode} | {} | {} | {} | {}/{} | {} | {} | {} | {} | {} | {} |",
                if mara { "yes" } else { "no" },
                first.beta,
                first.eta,
                ok.len(),
                cell.len(),
                fmt(mean(|r| r.final_tv)),
                fmt(mean(|r| r.mode1_mass)),
                fmt(mean(|r| r.mode2_mass)),
                fmt(first.target_mode1_mass),
                fmt(first.target_mode2_mass),
                cell.iter().map(|r| r.anchor_churn).max().unwrap_or(0),
            );
        }
        for r in rs.iter().filter(|r| r.failed()) {
            let _ = writeln!(s, "\nfailed: β = {} seed {}: {}", r.beta, r.seed, r.error.as_deref().unwrap_or(""));
        }
    }
    s
}

/// Evaluates the acceptance criteria against `records` and writes the report.
pub fn emit_report(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    let results = criteria::evaluate(records);
    emit_report_with(records, &results, out_dir)
}

/// Writes records.csv, records.json, one SVG per (scenario, objective) and
/// summary.md. Returns the written paths.
pub fn emit_report_with(records: &[RunRecord], results: &[CriterionResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        return Err(Error::Precondition("cannot report on zero records".into()));
    }
    fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::new();

    let path = out_dir.join("records.csv");
    let mut csv = Vec::new();
    write_records_csv(records, &mut csv)?;
    fs::write(&path, csv)?;
    manifest.push(path);

    let path = out_dir.join("records.json");
    let json = serde_json::to_string_pretty(records).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, json + "\n")?;
    manifest.push(path);

    for ((scenario, objective), rs) in groups(records) {
        let panels = panels_for(&rs);
        if panels.is_empty() {
            continue;
        }
        let path = out_dir.join(format!("{scenario}_{objective}.svg"));
        fs::write(&path, chart(&format!("{scenario}: {objective} objective"), &panels))?;
        manifest.push(path);
    }

    let path = out_dir.join("summary.md");
    fs::write(&path, summary(records, results))?;
    manifest.push(path);
    Ok(manifest)
}
