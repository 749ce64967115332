//! Metric rows, aggregation and atomic CSV output.

use std::io::Write;
use std::path::Path;

use crate::error::Result;

/// One evaluated run.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricRow {
    pub method: String,
    pub seed: u64,
    pub purity: f64,
    pub nmi: f64,
    pub nll: Option<f64>,
}

/// All rows of one experiment invocation.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub rows: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub stderr: f64,
}

/// Sample mean and standard error (sample stddev / sqrt(n); 0 when n < 2).
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl RunReport {
    pub fn push(&mut self, row: MetricRow) {
        self.rows.push(row);
    }

    fn has_nll(&self) -> bool {
        self.rows.iter().any(|r| r.nll.is_some())
    }

    /// Per-method aggregates in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut methods: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !methods.contains(&r.method.as_str()) {
                methods.push(&r.method);
            }
        }
        let mut out = Vec::new();
        for m in methods {
            let rows: Vec<&MetricRow> = self.rows.iter().filter(|r| r.method == m).collect();
            let mut metrics: Vec<(&str, Vec<f64>)> = vec![
                ("purity", rows.iter().map(|r| r.purity).collect()),
                ("nmi", rows.iter().map(|r| r.nmi).collect()),
            ];
            let nll: Vec<f64> = rows.iter().filter_map(|r| r.nll).collect();
            if !nll.is_empty() {
                metrics.push(("nll", nll));
            }
            for (name, values) in metrics {
                let (mean, stderr) = mean_stderr(&values);
                out.push(Aggregate {
                    method: m.to_string(),
                    metric: name.to_string(),
                    mean,
                    stderr,
                });
            }
        }
        out
    }

    /// `metrics.csv`: method,seed,purity,nmi[,nll]. Numbers use shortest
    /// round-trip formatting so re-parsing is exact.
    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let with_nll = self.has_nll();
        let mut text = String::new();
        text.push_str(if with_nll {
            "method,seed,purity,nmi,nll\n"
        } else {
            "method,seed,purity,nmi\n"
        });
        for r in &self.rows {
            if with_nll {
                let nll = r.nll.map(|v| v.to_string()).unwrap_or_default();
                text.push_str(&format!("{},{},{},{},{}\n", r.method, r.seed, r.purity, r.nmi, nll));
            } else {
                text.push_str(&format!("{},{},{},{}\n", r.method, r.seed, r.purity, r.nmi));
            }
        }
        write_atomic(path, text.as_bytes())
    }

    /// `aggregate.csv`: method,metric,mean,stderr.
    pub fn write_aggregate_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = String::from("method,metric,mean,stderr\n");
        for a in self.aggregates() {
            text.push_str(&format!("{},{},{},{}\n", a.method, a.metric, a.mean, a.stderr));
        }
        write_atomic(path, text.as_bytes())
    }
}

/// Write via a temp file in the same directory plus an atomic rename, so an
/// interrupted run never leaves a partial file.
pub fn write_atomic(path: impl AsRef<Path>, bytes: &[u8]) -> Result<()> {
    let path = path.as_ref();
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// Parse a metrics.csv produced by [`RunReport::write_metrics_csv`].
pub fn parse_metrics_csv(text: &str) -> Result<RunReport> {
    use crate::error::CliError;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    let with_nll = header.ends_with(",nll");
    let mut report = RunReport::default();
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        let expect = if with_nll { 5 } else { 4 };
        if parts.len() != expect {
            return Err(CliError::Run(format!("bad metrics row: {line}")));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse().map_err(|e| CliError::Run(format!("bad number in `{line}`: {e}")))
        };
        report.push(MetricRow {
            method: parts[0].to_string(),
            seed: parts[1]
                .parse()
                .map_err(|e| CliError::Run(format!("bad seed in `{line}`: {e}")))?,
            purity: parse(parts[2])?,
            nmi: parse(parts[3])?,
            nll: if with_nll && !parts[4].is_empty() {
                Some(parse(parts[4])?)
            } else {
                None
            },
        });
    }
    Ok(report)
}
