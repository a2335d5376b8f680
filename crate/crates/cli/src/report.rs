//! `report`: Pareto fronts, hypervolumes and threshold minima per k and method.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use feir_core::pareto::{min_fairness_above_threshold, pareto_front, Metric, SolutionPoint};
use serde::{Deserialize, Serialize};

use crate::solutions::{canonical_cmp, load_solutions};

pub const PARETO_FILE: &str = "pareto.csv";
pub const HV_FILE: &str = "hv_table.csv";
/// Cell value for quantities that are undefined (no qualifying solution).
pub const UNDEFINED: &str = "—";

/// One fairness-or-competition axis against normalized utility.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub label: &'static str,
    pub metric: Metric,
    pub reference: (f64, f64),
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub fairness_reference: (f64, f64),
    pub fairness_threshold: f64,
    pub rank_reference: (f64, f64),
    pub gap_reference: (f64, f64),
    pub competition_threshold: f64,
}

impl Default for ReportConfig {
    fn default() -> Self {
        Self {
            fairness_reference: (1.0, 0.95),
            fairness_threshold: 0.95,
            rank_reference: (50.0, 0.9),
            gap_reference: (0.03, 0.9),
            competition_threshold: 0.9,
        }
    }
}

impl ReportConfig {
    /// Overall fairness and inferiority first, then the two competition measures.
    pub fn axes(&self) -> [Axis; 4] {
        [
            Axis {
                label: "g",
                metric: Metric::OverallNorm,
                reference: self.fairness_reference,
                threshold: self.fairness_threshold,
            },
            Axis {
                label: "i",
                metric: Metric::InferiorityNorm,
                reference: self.fairness_reference,
                threshold: self.fairness_threshold,
            },
            Axis {
                label: "rank",
                metric: Metric::MeanRank,
                reference: self.rank_reference,
                threshold: self.competition_threshold,
            },
            Axis {
                label: "gap",
                metric: Metric::MeanGap,
                reference: self.gap_reference,
                threshold: self.competition_threshold,
            },
        ]
    }
}

fn cell(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_else(|| UNDEFINED.to_string())
}

/// Methods in first-appearance order of the canonically sorted points.
fn methods(points: &[SolutionPoint]) -> Vec<String> {
    let mut seen = Vec::new();
    for p in points {
        if !seen.contains(&p.method) {
            seen.push(p.method.clone());
        }
    }
    seen
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub pareto: PathBuf,
    pub hv_table: PathBuf,
}

/// Writes the per-front point list.
pub fn write_pareto<W: Write>(points: &[SolutionPoint], cfg: &ReportConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "x_metric", "y_metric", "method", "x", "y", "weights", "seed"])?;
    let ks: BTreeSet<usize> = points.iter().map(|p| p.k).collect();
    for k in ks {
        for method in methods(points) {
            let subset: Vec<SolutionPoint> =
                points.iter().filter(|p| p.k == k && p.method == method).cloned().collect();
            for axis in cfg.axes() {
                let Ok(front) = pareto_front(&subset, axis.metric, Metric::UtilityNorm) else { continue };
                for fp in &front.points {
                    let src = &subset[fp.source];
                    w.write_record([
                        k.to_string(),
                        axis.metric.to_string(),
                        Metric::UtilityNorm.to_string(),
                        method.clone(),
                        fp.x.to_string(),
                        fp.y.to_string(),
                        src.params.label(),
                        src.seed.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per k with, for every axis and method, the hypervolume and
/// the threshold minimum.
pub fn write_hv_table<W: Write>(points: &[SolutionPoint], cfg: &ReportConfig, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let methods = methods(points);
    let axes = cfg.axes();
    let mut header = vec!["k".to_string()];
    for axis in &axes {
        for m in &methods {
            header.push(format!("HV({} vs u) {m}", axis.label));
        }
        for m in &methods {
            header.push(format!("min({}|{}) {m}", axis.label, axis.threshold));
        }
    }
    w.write_record(&header)?;
    let ks: BTreeSet<usize> = points.iter().map(|p| p.k).collect();
    for k in ks {
        let mut row = vec![k.to_string()];
        for axis in &axes {
            let subset = |m: &str| -> Vec<SolutionPoint> {
                points.iter().filter(|p| p.k == k && p.method == m).cloned().collect()
            };
            for m in &methods {
                let hv = pareto_front(&subset(m), axis.metric, Metric::UtilityNorm)
                    .ok()
                    .map(|f| f.hypervolume(axis.reference));
                row.push(cell(hv));
            }
            for m in &methods {
                row.push(cell(min_fairness_above_threshold(&subset(m), axis.metric, axis.threshold)));
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_report(solutions: &Path, out_dir: &Path, cfg: &ReportConfig) -> Result<ReportFiles> {
    let mut points = load_solutions(solutions)?;
    points.sort_by(canonical_cmp);
    fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let files = ReportFiles {
        pareto: out_dir.join(PARETO_FILE),
        hv_table: out_dir.join(HV_FILE),
    };
    let create = |p: &Path| fs::File::create(p).with_context(|| format!("creating {}", p.display()));
    write_pareto(&points, cfg, std::io::BufWriter::new(create(&files.pareto)?))?;
    write_hv_table(&points, cfg, std::io::BufWriter::new(create(&files.hv_table)?))?;
    Ok(files)
}
