//! `solutions.csv`: one evaluated strategy per row.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use feir_core::pareto::{MethodParams, PointMetrics, SolutionPoint, STATUS_OK};

pub const COLUMNS: [&str; 20] = [
    "method",
    "w1",
    "w2",
    "w3",
    "w4",
    "d",
    "epsilon",
    "tau",
    "k",
    "seed",
    "utility",
    "utility_norm",
    "envy",
    "inferiority",
    "inferiority_norm",
    "overall_norm",
    "mean_rank",
    "mean_gap",
    "gini",
    "status",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn row(p: &SolutionPoint) -> Vec<String> {
    let params = &p.params;
    let m = p.metrics.as_ref();
    vec![
        p.method.clone(),
        opt(params.w1),
        opt(params.w2),
        opt(params.w3),
        opt(params.w4),
        opt(params.d),
        opt(params.epsilon),
        opt(params.tau),
        p.k.to_string(),
        p.seed.to_string(),
        opt(m.map(|m| m.utility)),
        opt(m.and_then(|m| m.utility_norm)),
        opt(m.map(|m| m.envy)),
        opt(m.map(|m| m.inferiority)),
        opt(m.and_then(|m| m.inferiority_norm)),
        opt(m.and_then(|m| m.overall_norm)),
        opt(m.map(|m| m.mean_rank)),
        opt(m.map(|m| m.mean_gap)),
        opt(m.map(|m| m.gini)),
        p.status.clone(),
    ]
}

pub fn write_solutions<W: Write>(points: &[SolutionPoint], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(COLUMNS)?;
    for p in points {
        w.write_record(row(p))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes through a temporary file so an interrupted run never leaves a truncated file.
pub fn save_solutions(points: &[SolutionPoint], path: &Path) -> Result<()> {
    let tmp = path.with_extension("csv.tmp");
    {
        let file = fs::File::create(&tmp).with_context(|| format!("creating {}", tmp.display()))?;
        write_solutions(points, std::io::BufWriter::new(file))?;
    }
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))
}

fn parse_opt<T: std::str::FromStr>(s: &str, column: &str, line: usize) -> Result<Option<T>> {
    if s.is_empty() {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|_| anyhow!("line {line}: column {column}: cannot parse {s:?}"))
}

fn parse_req<T: std::str::FromStr>(s: &str, column: &str, line: usize) -> Result<T> {
    parse_opt(s, column, line)?.ok_or_else(|| anyhow!("line {line}: column {column} is empty"))
}

/// Reads a solutions file, checking every row against the schema. A missing
/// column is reported by name.
pub fn read_solutions<R: Read>(input: R) -> Result<Vec<SolutionPoint>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h, i)).collect();
    if let Some(missing) = COLUMNS.iter().find(|c| !index.contains_key(*c)) {
        bail!("schema error: missing column {missing:?}");
    }
    let mut points = Vec::new();
    for (n, record) in r.records().enumerate() {
        let record = record?;
        let line = n + 2;
        let get = |c: &str| record.get(index[c]).unwrap_or("");
        let status = get("status").to_string();
        let params = MethodParams {
            w1: parse_opt(get("w1"), "w1", line)?,
            w2: parse_opt(get("w2"), "w2", line)?,
            w3: parse_opt(get("w3"), "w3", line)?,
            w4: parse_opt(get("w4"), "w4", line)?,
            d: parse_opt(get("d"), "d", line)?,
            epsilon: parse_opt(get("epsilon"), "epsilon", line)?,
            tau: parse_opt(get("tau"), "tau", line)?,
        };
        let metrics = if status == STATUS_OK {
            Some(PointMetrics {
                utility: parse_req(get("utility"), "utility", line)?,
                utility_norm: parse_opt(get("utility_norm"), "utility_norm", line)?,
                envy: parse_req(get("envy"), "envy", line)?,
                inferiority: parse_req(get("inferiority"), "inferiority", line)?,
                inferiority_norm: parse_opt(get("inferiority_norm"), "inferiority_norm", line)?,
                overall_fairness: parse_req::<f64>(get("envy"), "envy", line)?
                    + parse_req::<f64>(get("inferiority"), "inferiority", line)?,
                overall_norm: parse_opt(get("overall_norm"), "overall_norm", line)?,
                mean_rank: parse_req(get("mean_rank"), "mean_rank", line)?,
                mean_gap: parse_req(get("mean_gap"), "mean_gap", line)?,
                gini: parse_req(get("gini"), "gini", line)?,
            })
        } else {
            None
        };
        let method = get("method").to_string();
        if method.is_empty() {
            bail!("line {line}: column method is empty");
        }
        points.push(SolutionPoint {
            method,
            params,
            k: parse_req(get("k"), "k", line)?,
            seed: parse_req(get("seed"), "seed", line)?,
            metrics,
            status,
        });
    }
    Ok(points)
}

pub fn load_solutions(path: &Path) -> Result<Vec<SolutionPoint>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_solutions(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

/// Identity of a run: method, hyperparameters, k and seed.
pub fn run_key(p: &SolutionPoint) -> String {
    format!("{}|{}|{}|{}", p.method, p.params.label(), p.k, p.seed)
}

const METHOD_ORDER: [&str; 5] = ["naive", "feir", "shuffle", "ca", "rr"];

fn method_rank(m: &str) -> usize {
    METHOD_ORDER.iter().position(|x| *x == m).unwrap_or(METHOD_ORDER.len())
}

fn cmp_opt<T: PartialOrd>(a: Option<T>, b: Option<T>) -> Ordering {
    match (a, b) {
        (None, None) => Ordering::Equal,
        (None, Some(_)) => Ordering::Less,
        (Some(_), None) => Ordering::Greater,
        (Some(a), Some(b)) => a.partial_cmp(&b).unwrap_or(Ordering::Equal),
    }
}

/// Canonical row order: k, method, then hyperparameters, then seed.
pub fn canonical_cmp(a: &SolutionPoint, b: &SolutionPoint) -> Ordering {
    let (pa, pb) = (&a.params, &b.params);
    a.k.cmp(&b.k)
        .then(method_rank(&a.method).cmp(&method_rank(&b.method)))
        .then_with(|| a.method.cmp(&b.method))
        .then(cmp_opt(pa.w1, pb.w1))
        .then(cmp_opt(pa.w2, pb.w2))
        .then(cmp_opt(pa.w3, pb.w3))
        .then(cmp_opt(pa.w4, pb.w4))
        .then(cmp_opt(pa.d, pb.d))
        .then(cmp_opt(pa.epsilon, pb.epsilon))
        .then(cmp_opt(pa.tau, pb.tau))
        .then(a.seed.cmp(&b.seed))
}
