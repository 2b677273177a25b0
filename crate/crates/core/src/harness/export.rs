use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;

use super::{boxplot_svg, BiasSummary, Estimand, ReplicateResult};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            other => Err(Error::Config(format!("unknown export format `{other}`"))),
        }
    }
}

#[derive(Serialize)]
struct ReplicateRow<'a> {
    replicate: usize,
    estimand: &'a str,
    method: &'a str,
    estimate: Option<f64>,
    reference: Option<f64>,
    diff: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow<'a> {
    estimand: &'a str,
    method: &'a str,
    n: usize,
    n_failed: usize,
    mean: f64,
    sd: f64,
    se: f64,
    q1: f64,
    median: f64,
    q3: f64,
    t_stat: f64,
    p_value: f64,
}

/// Write the requested formats into `out_dir` and return the written paths.
pub fn export_results(
    results: &[ReplicateResult],
    summary: &BiasSummary,
    out_dir: &Path,
    formats: &[Format],
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut ordered: Vec<&ReplicateResult> = results.iter().collect();
    ordered.sort_by_key(|r| r.replicate);
    let mut written = Vec::new();

    if formats.contains(&Format::Csv) {
        let path = out_dir.join("replicates.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        for r in &ordered {
            for c in &r.cells {
                w.serialize(ReplicateRow {
                    replicate: r.replicate,
                    estimand: c.estimand.name(),
                    method: &c.method,
                    estimate: c.estimate,
                    reference: c.reference,
                    diff: c.diff,
                })
                .map_err(|e| Error::csv(&path, e))?;
            }
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);

        let path = out_dir.join("summary.csv");
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::csv(&path, e))?;
        for c in &summary.cells {
            w.serialize(SummaryRow {
                estimand: c.estimand.name(),
                method: &c.method,
                n: c.n,
                n_failed: c.n_failed,
                mean: c.mean,
                sd: c.sd,
                se: c.se,
                q1: c.q1,
                median: c.median,
                q3: c.q3,
                t_stat: c.t_stat,
                p_value: c.p_value,
            })
            .map_err(|e| Error::csv(&path, e))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if formats.contains(&Format::Json) {
        let path = out_dir.join("summary.json");
        let text = serde_json::to_string_pretty(summary).map_err(|e| Error::Parse(e.to_string()))?;
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
    }

    if formats.contains(&Format::Svg) {
        for e in Estimand::ALL {
            let mut methods: Vec<String> = Vec::new();
            let mut groups: Vec<Vec<f64>> = Vec::new();
            for r in &ordered {
                for c in r.cells.iter().filter(|c| c.estimand == e) {
                    let k = match methods.iter().position(|m| *m == c.method) {
                        Some(k) => k,
                        None => {
                            methods.push(c.method.clone());
                            groups.push(Vec::new());
                            methods.len() - 1
                        }
                    };
                    if let Some(d) = c.diff {
                        groups[k].push(d);
                    }
                }
            }
            if methods.is_empty() {
                continue;
            }
            let path = out_dir.join(format!("boxplot_{}.svg", e.name()));
            let svg = boxplot_svg(e.name(), &methods, &groups);
            fs::write(&path, svg).map_err(|err| Error::io(&path, err))?;
            written.push(path);
        }
    }
    Ok(written)
}
