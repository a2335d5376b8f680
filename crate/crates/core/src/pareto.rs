//! Solution sets, 2-D Pareto fronts and hypervolume.
//!
//! Fronts are always taken with the x metric minimized (an unfairness or
//! competition measure) and the y metric maximized (utility).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{argument, Error, Result};
use crate::losses::LossWeights;
use crate::metrics::{normalized_metrics, MetricsRecord};

/// Hyperparameters that produced a solution. Fields a method does not use are `None`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodParams {
    pub w1: Option<f64>,
    pub w2: Option<f64>,
    pub w3: Option<f64>,
    pub w4: Option<f64>,
    pub d: Option<usize>,
    pub epsilon: Option<f64>,
    pub tau: Option<f64>,
}

impl MethodParams {
    pub fn from_weights(w: &LossWeights) -> Self {
        Self {
            w1: Some(w.envy),
            w2: Some(w.inferiority),
            w3: Some(w.utility),
            w4: Some(w.penalty),
            ..Self::default()
        }
    }

    /// Compact `name=value` rendering of the fields that are set.
    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        let mut push = |name: &str, v: Option<String>| {
            if let Some(v) = v {
                parts.push(format!("{name}={v}"));
            }
        };
        push("w1", self.w1.map(|v| v.to_string()));
        push("w2", self.w2.map(|v| v.to_string()));
        push("w3", self.w3.map(|v| v.to_string()));
        push("w4", self.w4.map(|v| v.to_string()));
        push("d", self.d.map(|v| v.to_string()));
        push("epsilon", self.epsilon.map(|v| v.to_string()));
        push("tau", self.tau.map(|v| v.to_string()));
        parts.join(";")
    }
}

/// Metric values of an evaluated solution. Normalized fields are `None` when
/// the naive denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub utility: f64,
    pub utility_norm: Option<f64>,
    pub envy: f64,
    pub inferiority: f64,
    pub inferiority_norm: Option<f64>,
    pub overall_fairness: f64,
    pub overall_norm: Option<f64>,
    pub mean_rank: f64,
    pub mean_gap: f64,
    pub gini: f64,
}

/// One evaluated strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionPoint {
    pub method: String,
    pub params: MethodParams,
    pub k: usize,
    pub seed: u64,
    /// `None` when the run failed; `status` then carries the reason.
    pub metrics: Option<PointMetrics>,
    pub status: String,
}

pub const STATUS_OK: &str = "ok";

impl SolutionPoint {
    pub fn evaluated(
        method: impl Into<String>,
        params: MethodParams,
        seed: u64,
        record: &MetricsRecord,
        naive: &MetricsRecord,
    ) -> Self {
        let norm = normalized_metrics(&record.system(), &naive.system());
        Self {
            method: method.into(),
            params,
            k: record.k,
            seed,
            metrics: Some(PointMetrics {
                utility: record.utility,
                utility_norm: norm.utility,
                envy: record.envy,
                inferiority: record.inferiority,
                inferiority_norm: norm.inferiority,
                overall_fairness: record.overall_fairness,
                overall_norm: norm.overall_fairness,
                mean_rank: record.mean_rank,
                mean_gap: record.mean_gap,
                gini: record.gini,
            }),
            status: STATUS_OK.into(),
        }
    }

    pub fn failed(method: impl Into<String>, params: MethodParams, k: usize, seed: u64, reason: impl fmt::Display) -> Self {
        Self {
            method: method.into(),
            params,
            k,
            seed,
            metrics: None,
            status: format!("error: {reason}"),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.metrics.is_some()
    }

    pub fn metric(&self, metric: Metric) -> Option<f64> {
        let m = self.metrics.as_ref()?;
        match metric {
            Metric::Utility => Some(m.utility),
            Metric::UtilityNorm => m.utility_norm,
            Metric::Envy => Some(m.envy),
            Metric::Inferiority => Some(m.inferiority),
            Metric::InferiorityNorm => m.inferiority_norm,
            Metric::OverallFairness => Some(m.overall_fairness),
            Metric::OverallNorm => m.overall_norm,
            Metric::MeanRank => Some(m.mean_rank),
            Metric::MeanGap => Some(m.mean_gap),
            Metric::Gini => Some(m.gini),
        }
    }
}

/// A metric column of a solution set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Utility,
    UtilityNorm,
    Envy,
    Inferiority,
    InferiorityNorm,
    OverallFairness,
    OverallNorm,
    MeanRank,
    MeanGap,
    Gini,
}

impl Metric {
    pub const ALL: [Metric; 10] = [
        Metric::Utility,
        Metric::UtilityNorm,
        Metric::Envy,
        Metric::Inferiority,
        Metric::InferiorityNorm,
        Metric::OverallFairness,
        Metric::OverallNorm,
        Metric::MeanRank,
        Metric::MeanGap,
        Metric::Gini,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Utility => "utility",
            Metric::UtilityNorm => "utility_norm",
            Metric::Envy => "envy",
            Metric::Inferiority => "inferiority",
            Metric::InferiorityNorm => "inferiority_norm",
            Metric::OverallFairness => "overall_fairness",
            Metric::OverallNorm => "overall_norm",
            Metric::MeanRank => "mean_rank",
            Metric::MeanGap => "mean_gap",
            Metric::Gini => "gini",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| argument(format!("unknown metric {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontPoint {
    pub x: f64,
    pub y: f64,
    /// Index of the solution in the input slice.
    pub source: usize,
}

/// Non-dominated solutions, sorted by ascending x.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Front2D {
    pub x_metric: Metric,
    pub y_metric: Metric,
    pub points: Vec<FrontPoint>,
}

impl Front2D {
    pub fn xy(&self) -> Vec<(f64, f64)> {
        self.points.iter().map(|p| (p.x, p.y)).collect()
    }

    pub fn hypervolume(&self, reference: (f64, f64)) -> f64 {
        hypervolume_2d(&self.xy(), reference)
    }
}

/// Indices of the non-dominated points (minimize x, maximize y), sorted by
/// ascending x. Of several identical points only the first is kept.
pub fn front_indices(xy: &[(f64, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..xy.len()).collect();
    order.sort_by(|&a, &b| {
        xy[a].0
            .total_cmp(&xy[b].0)
            .then(xy[b].1.total_cmp(&xy[a].1))
            .then(a.cmp(&b))
    });
    let mut best_y = f64::NEG_INFINITY;
    let mut out = Vec::new();
    for i in order {
        if xy[i].1 > best_y {
            best_y = xy[i].1;
            out.push(i);
        }
    }
    out
}

/// Pareto front of the solutions for which both metrics are defined.
pub fn pareto_front(points: &[SolutionPoint], x: Metric, y: Metric) -> Result<Front2D> {
    let defined: Vec<(usize, (f64, f64))> = points
        .iter()
        .enumerate()
        .filter_map(|(i, p)| Some((i, (p.metric(x)?, p.metric(y)?))))
        .collect();
    if defined.is_empty() {
        return Err(argument(format!("no solution has both {x} and {y} defined")));
    }
    let xy: Vec<(f64, f64)> = defined.iter().map(|&(_, v)| v).collect();
    let points = front_indices(&xy)
        .into_iter()
        .map(|f| FrontPoint {
            x: xy[f].0,
            y: xy[f].1,
            source: defined[f].0,
        })
        .collect();
    Ok(Front2D {
        x_metric: x,
        y_metric: y,
        points,
    })
}

/// Area dominated by the points relative to `reference = (x_ref, y_ref)`:
/// the union of the boxes `[x, x_ref] × [y_ref, y]`. Points that do not
/// dominate the reference contribute nothing.
pub fn hypervolume_2d(xy: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let (x_ref, y_ref) = reference;
    let inside: Vec<(f64, f64)> = xy
        .iter()
        .copied()
        .filter(|&(x, y)| x <= x_ref && y >= y_ref)
        .collect();
    let front = front_indices(&inside);
    let mut area = 0.0;
    for (pos, &i) in front.iter().enumerate() {
        let (x, y) = inside[i];
        let next_x = front.get(pos + 1).map_or(x_ref, |&n| inside[n].0);
        area += (next_x - x) * (y - y_ref);
    }
    area
}

/// Smallest value of `phi` among solutions with normalized utility above `t`.
pub fn min_fairness_above_threshold(points: &[SolutionPoint], phi: Metric, t: f64) -> Option<f64> {
    points
        .iter()
        .filter(|p| p.metric(Metric::UtilityNorm).is_some_and(|u| u > t))
        .filter_map(|p| p.metric(phi))
        .reduce(f64::min)
}
