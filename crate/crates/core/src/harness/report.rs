use std::io::{self, Write};

use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::error::Result;
use crate::harness::stats::MeanStderr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub config_hash: String,
    pub seed: u64,
    pub model: String,
    pub n_paths: usize,
    pub horizon: f64,
    pub alpha: f64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub metric: String,
    pub p: u32,
    #[serde(flatten)]
    pub stats: MeanStderr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRecord {
    pub epsilon: f64,
    pub fine_dt: f64,
    pub fine_steps: usize,
    pub coarse_steps: usize,
    pub metrics: Vec<MetricRecord>,
}

impl EpsilonRecord {
    pub fn metric(&self, name: &str, p: u32) -> Option<&MeanStderr> {
        self.metrics
            .iter()
            .find(|m| m.metric == name && m.p == p)
            .map(|m| &m.stats)
    }
}

/// Least-squares slope of `log mean` against `log ε`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateRecord {
    pub metric: String,
    pub p: u32,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub meta: ReportMeta,
    pub per_epsilon: Vec<EpsilonRecord>,
    pub rates: Vec<RateRecord>,
}

impl ConvergenceReport {
    pub fn series(&self, name: &str, p: u32) -> Vec<f64> {
        self.per_epsilon
            .iter()
            .filter_map(|r| r.metric(name, p).map(|s| s.mean))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderRecord {
    pub epsilon: f64,
    pub p: u32,
    pub gaps: Vec<f64>,
    pub level1_moments: Vec<f64>,
    pub level2_moments: Vec<f64>,
    pub level1_slope: f64,
    pub level1_ci: [f64; 2],
    pub level2_slope: f64,
    pub level2_ci: [f64; 2],
    /// Slope far from the rough-path target `p/2`.
    pub level1_degenerate: bool,
    /// Slope far from the rough-path target `p`.
    pub level2_degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderScalingReport {
    pub meta: ReportMeta,
    pub per_epsilon: Vec<HolderRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragingRecord {
    pub epsilon: f64,
    #[serde(flatten)]
    pub stats: MeanStderr,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AveragingReport {
    pub meta: ReportMeta,
    pub observable: crate::harness::config::ObservableConfig,
    pub per_epsilon: Vec<AveragingRecord>,
    /// Means strictly decrease down the ε ladder.
    pub decreasing: bool,
}

/// Pretty JSON with every float written to 17 significant digits.
struct Sig17Formatter<'a>(PrettyFormatter<'a>);

impl Formatter for Sig17Formatter<'_> {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if value.is_finite() {
            write!(writer, "{value:.16e}")
        } else {
            writer.write_all(b"null")
        }
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }

    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }

    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }

    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }

    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }

    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }

    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }

    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }

    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut ser =
        serde_json::Serializer::with_formatter(&mut out, Sig17Formatter(PrettyFormatter::new()));
    value.serialize(&mut ser)?;
    out.push(b'\n');
    Ok(out)
}

/// Rows of `epsilon,metric,mean,stderr,n`.
pub struct CsvTable {
    rows: Vec<(f64, String, MeanStderr)>,
}

impl CsvTable {
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epsilon,metric,mean,stderr,n")?;
        for (eps, metric, s) in &self.rows {
            writeln!(
                out,
                "{eps:.16e},{metric},{:.16e},{:.16e},{}",
                s.mean, s.stderr, s.n
            )?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        self.write(&mut out)?;
        Ok(out)
    }
}

impl From<&ConvergenceReport> for CsvTable {
    fn from(r: &ConvergenceReport) -> Self {
        let rows = r
            .per_epsilon
            .iter()
            .flat_map(|e| {
                e.metrics
                    .iter()
                    .map(move |m| (e.epsilon, format!("{}_p{}", m.metric, m.p), m.stats))
            })
            .collect();
        Self { rows }
    }
}

impl From<&AveragingReport> for CsvTable {
    fn from(r: &AveragingReport) -> Self {
        let rows = r
            .per_epsilon
            .iter()
            .map(|e| (e.epsilon, "averaging_error".to_string(), e.stats))
            .collect();
        Self { rows }
    }
}

impl From<&HolderScalingReport> for CsvTable {
    fn from(r: &HolderScalingReport) -> Self {
        let mut rows = Vec::new();
        for h in &r.per_epsilon {
            for (label, slope, ci) in [
                ("level1_slope", h.level1_slope, h.level1_ci),
                ("level2_slope", h.level2_slope, h.level2_ci),
            ] {
                // The half-width of the interval is reported in the stderr column.
                let stats = MeanStderr {
                    mean: slope,
                    stderr: 0.5 * (ci[1] - ci[0]),
                    n: h.gaps.len(),
                };
                rows.push((h.epsilon, format!("{label}_p{}", h.p), stats));
            }
        }
        Self { rows }
    }
}
