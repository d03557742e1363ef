//! CSV and JSON persistence of sweep results.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::sweep::{MetricsRow, TimelinePoint};

pub const CSV_HEADER: [&str; 9] = ["L", "trial", "seed", "T", "e", "final_S", "node_iters", "timeline", "status"];

#[derive(Serialize, Deserialize)]
struct CsvRecord {
    #[serde(rename = "L")]
    nodes: usize,
    trial: usize,
    seed: u64,
    #[serde(rename = "T")]
    convergence_time: Option<f64>,
    #[serde(rename = "e")]
    final_error: Option<f64>,
    #[serde(rename = "final_S")]
    final_cost: Option<f64>,
    node_iters: String,
    timeline: String,
    status: String,
}

impl From<&MetricsRow> for CsvRecord {
    fn from(row: &MetricsRow) -> Self {
        let node_iters = row.node_iterations.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
        let timeline = row.timeline.iter().map(|p| format!("{}:{}", p.time, p.error)).collect::<Vec<_>>().join(";");
        Self {
            nodes: row.nodes,
            trial: row.trial,
            seed: row.seed,
            convergence_time: row.convergence_time,
            final_error: row.final_error,
            final_cost: row.final_cost,
            node_iters,
            timeline,
            status: row.failure.clone().unwrap_or_else(|| "ok".into()),
        }
    }
}

impl TryFrom<CsvRecord> for MetricsRow {
    type Error = anyhow::Error;

    fn try_from(rec: CsvRecord) -> Result<Self> {
        let node_iterations = split(&rec.node_iters).map(|s| s.parse().context("node_iters")).collect::<Result<_>>()?;
        let timeline = split(&rec.timeline)
            .map(|pair| {
                let Some((t, e)) = pair.split_once(':') else { bail!("timeline entry `{pair}` lacks ':'") };
                Ok(TimelinePoint { time: t.parse()?, error: e.parse()? })
            })
            .collect::<Result<_>>()?;
        Ok(MetricsRow {
            nodes: rec.nodes,
            trial: rec.trial,
            seed: rec.seed,
            convergence_time: rec.convergence_time,
            final_error: rec.final_error,
            final_cost: rec.final_cost,
            node_iterations,
            timeline,
            failure: (rec.status != "ok").then_some(rec.status),
        })
    }
}

fn split(s: &str) -> impl Iterator<Item = &str> {
    s.split(';').filter(|p| !p.is_empty())
}

pub fn write_csv<W: Write>(rows: &[MetricsRow], out: W) -> Result<()> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    writer.write_record(CSV_HEADER)?;
    for row in rows {
        writer.serialize(CsvRecord::from(row))?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    if header != CSV_HEADER {
        bail!("unexpected CSV header {header:?}");
    }
    reader.deserialize::<CsvRecord>().map(|rec| MetricsRow::try_from(rec?)).collect()
}

/// Statistics of all runs sharing one chain length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LengthSummary {
    pub nodes: usize,
    pub runs: usize,
    pub failures: usize,
    pub mean_t: f64,
    pub p10_t: f64,
    pub median_t: f64,
    pub p90_t: f64,
    pub mean_e: f64,
    /// Half-width of the normal 95% confidence interval of `mean_e`.
    pub ci95_e: f64,
    pub mean_final_cost: f64,
    /// Fraction of runs whose `e_θ` timeline never increases.
    pub monotone_fraction: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub lengths: Vec<LengthSummary>,
    /// Spearman rank correlation of mean `T` against `L`.
    pub t_trend: Option<f64>,
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Linear-interpolation percentile, `p` in `[0, 1]`.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation with average ranks for ties; `None` for fewer than two points
/// or a constant input.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return None;
    }
    Some(cov / (vx * vy).sqrt())
}

pub fn summarize(rows: &[MetricsRow]) -> Summary {
    let mut groups: BTreeMap<usize, Vec<&MetricsRow>> = BTreeMap::new();
    for row in rows {
        groups.entry(row.nodes).or_default().push(row);
    }
    let lengths: Vec<LengthSummary> = groups
        .into_iter()
        .map(|(nodes, group)| {
            let ok: Vec<&MetricsRow> = group.iter().copied().filter(|r| r.is_ok()).collect();
            let t: Vec<f64> = ok.iter().filter_map(|r| r.convergence_time).collect();
            let e: Vec<f64> = ok.iter().filter_map(|r| r.final_error).collect();
            let s: Vec<f64> = ok.iter().filter_map(|r| r.final_cost).collect();
            let ci95_e = if e.len() > 1 {
                let m = mean(&e);
                let var = e.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (e.len() - 1) as f64;
                1.96 * (var / e.len() as f64).sqrt()
            } else {
                f64::NAN
            };
            let monotone = ok.iter().filter(|r| r.timeline_nonincreasing()).count();
            LengthSummary {
                nodes,
                runs: group.len(),
                failures: group.len() - ok.len(),
                mean_t: mean(&t),
                p10_t: percentile(&t, 0.1),
                median_t: percentile(&t, 0.5),
                p90_t: percentile(&t, 0.9),
                mean_e: mean(&e),
                ci95_e,
                mean_final_cost: mean(&s),
                monotone_fraction: if ok.is_empty() { f64::NAN } else { monotone as f64 / ok.len() as f64 },
            }
        })
        .collect();
    let xs: Vec<f64> = lengths.iter().map(|l| l.nodes as f64).collect();
    let ts: Vec<f64> = lengths.iter().map(|l| l.mean_t).collect();
    let t_trend = if ts.iter().all(|t| t.is_finite()) { spearman(&xs, &ts) } else { None };
    Summary { lengths, t_trend }
}

/// Writes `metrics.csv`, `summary.json` and `config.toml` into `dir`.
pub fn emit_results(rows: &[MetricsRow], echo: &str, dir: &Path) -> Result<Summary> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv_path = dir.join("metrics.csv");
    let file = File::create(&csv_path).with_context(|| format!("creating {}", csv_path.display()))?;
    write_csv(rows, file)?;
    let summary = summarize(rows);
    let json_path = dir.join("summary.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&summary)? + "\n")
        .with_context(|| format!("writing {}", json_path.display()))?;
    std::fs::write(dir.join("config.toml"), echo).context("writing config echo")?;
    Ok(summary)
}
