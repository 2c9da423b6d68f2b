use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::federation::Method;
use crate::harness::experiment::{write_csv, write_json};
use crate::privacy::{NoisePhase, NoiseTrace};

/// One line of `noise_trace.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub method: Method,
    /// Empty when DP is off.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub round: usize,
    pub layer: usize,
    pub phase: NoisePhase,
    pub norm_linear_b: f64,
    pub norm_linear_a: f64,
    pub norm_base: f64,
    pub norm_quadratic: f64,
}

impl TraceRow {
    pub fn new(method: Method, epsilon: Option<f64>, seed: u64, t: &NoiseTrace) -> Self {
        Self {
            method,
            epsilon,
            seed,
            round: t.round,
            layer: t.layer,
            phase: t.phase,
            norm_linear_b: t.norm_linear_b,
            norm_linear_a: t.norm_linear_a,
            norm_base: t.norm_base,
            norm_quadratic: t.norm_quadratic,
        }
    }
}

pub fn write_noise_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    if rows.is_empty() {
        let header = "method,epsilon,seed,round,layer,phase,norm_linear_b,norm_linear_a,norm_base,norm_quadratic\n";
        return fs::write(path, header).map_err(|e| Error::io(path, e));
    }
    write_csv(path, rows)
}

/// Reads a trace file, naming the line of the first malformed row.
pub fn read_noise_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::Trace { line: 0, reason: format!("{other:?}") },
        })?;
    let headers = reader.headers().map_err(|e| Error::Trace { line: 1, reason: e.to_string() })?.clone();
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let fallback = i as u64 + 2;
        let rec = rec.map_err(|e| Error::Trace {
            line: e.position().map_or(fallback, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = rec.position().map_or(fallback, |p| p.line());
        let row: TraceRow = rec.deserialize(Some(&headers)).map_err(|e| Error::Trace { line, reason: e.to_string() })?;
        let norms = [row.norm_linear_b, row.norm_linear_a, row.norm_base, row.norm_quadratic];
        if norms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Trace {
                line,
                reason: "norms must be finite and non-negative".into(),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Noise term plotted by a series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseTerm {
    /// `||s·ξ^B A||_F`, from rows that noised `B`.
    LinearB,
    /// `||s·B ξ^A||_F`, from rows that noised `A`.
    LinearA,
    /// `||s·ξ^B ξ^A||_F`, from all rows.
    Quadratic,
}

impl NoiseTerm {
    pub const ALL: [NoiseTerm; 3] = [NoiseTerm::LinearB, NoiseTerm::LinearA, NoiseTerm::Quadratic];

    pub fn as_str(self) -> &'static str {
        match self {
            NoiseTerm::LinearB => "linear_b",
            NoiseTerm::LinearA => "linear_a",
            NoiseTerm::Quadratic => "quadratic",
        }
    }

    fn value(self, r: &TraceRow) -> Option<f64> {
        match self {
            NoiseTerm::LinearB => (r.phase != NoisePhase::A).then_some(r.norm_linear_b),
            NoiseTerm::LinearA => (r.phase != NoisePhase::B).then_some(r.norm_linear_a),
            NoiseTerm::Quadratic => Some(r.norm_quadratic),
        }
    }
}

/// Per-round series, averaged over seeds and layers, with a fitted slope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSeries {
    pub method: Option<Method>,
    pub epsilon: Option<f64>,
    pub term: NoiseTerm,
    pub rounds: Vec<usize>,
    pub norms: Vec<f64>,
    /// Least-squares slope of norm against round; `None` with fewer than two
    /// distinct rounds.
    pub slope: Option<f64>,
    pub slope_defined: bool,
    pub mean: Option<f64>,
}

impl TraceSeries {
    pub fn from_points(method: Option<Method>, epsilon: Option<f64>, term: NoiseTerm, points: &[(usize, f64)]) -> Self {
        let slope = fit_slope(points);
        let mean = (!points.is_empty()).then(|| points.iter().map(|p| p.1).sum::<f64>() / points.len() as f64);
        Self {
            method,
            epsilon,
            term,
            rounds: points.iter().map(|p| p.0).collect(),
            norms: points.iter().map(|p| p.1).collect(),
            slope,
            slope_defined: slope.is_some(),
            mean,
        }
    }

    pub fn file_name(&self) -> String {
        let m = self.method.map_or("empty", Method::as_str);
        let e = self.epsilon.map_or("none".to_string(), |e| e.to_string());
        format!("{m}_eps{e}_{}.json", self.term.as_str())
    }
}

/// Ordinary least-squares slope.
pub fn fit_slope(points: &[(usize, f64)]) -> Option<f64> {
    let n = points.len() as f64;
    if points.len() < 2 {
        return None;
    }
    let mx = points.iter().map(|p| p.0 as f64).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 as f64 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = points.iter().map(|p| (p.0 as f64 - mx) * (p.1 - my)).sum();
    Some(sxy / sxx)
}

/// Groups rows by (method, epsilon, term) and averages each round.
pub fn trace_series(rows: &[TraceRow]) -> Vec<TraceSeries> {
    if rows.is_empty() {
        return NoiseTerm::ALL
            .iter()
            .map(|&t| TraceSeries::from_points(None, None, t, &[]))
            .collect();
    }
    // epsilon keyed by bit pattern so the map stays ordered and exact.
    let mut groups: BTreeMap<(Method, Option<u64>, NoiseTerm), BTreeMap<usize, (f64, usize)>> = BTreeMap::new();
    for r in rows {
        for term in NoiseTerm::ALL {
            let per_round = groups.entry((r.method, r.epsilon.map(f64::to_bits), term)).or_default();
            if let Some(v) = term.value(r) {
                let e = per_round.entry(r.round).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }
    groups
        .into_iter()
        .map(|((m, e, term), per_round)| {
            let points: Vec<(usize, f64)> = per_round.into_iter().map(|(t, (s, n))| (t, s / n as f64)).collect();
            TraceSeries::from_points(Some(m), e.map(f64::from_bits), term, &points)
        })
        .collect()
}

/// Writes one JSON series file per (method, epsilon, term) into `out_dir`.
pub fn emit_noise_trace_plotdata(trace: &Path, out_dir: &Path) -> Result<Vec<(PathBuf, TraceSeries)>> {
    let rows = read_noise_trace(trace)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    trace_series(&rows)
        .into_iter()
        .map(|s| {
            let path = out_dir.join(s.file_name());
            write_json(&path, &s)?;
            Ok((path, s))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(round: usize, v: f64) -> TraceRow {
        TraceRow {
            method: Method::JointLora,
            epsilon: Some(1.0),
            seed: 0,
            round,
            layer: 0,
            phase: NoisePhase::Both,
            norm_linear_b: v,
            norm_linear_a: 2.0 * v,
            norm_base: 1.0,
            norm_quadratic: 0.0,
        }
    }

    #[test]
    fn exact_line() {
        let s = fit_slope(&[(1, 1.0), (2, 2.0), (3, 3.0), (4, 4.0)]).unwrap();
        assert!((s - 1.0).abs() < 1e-9);
        assert_eq!(fit_slope(&[(1, 1.0)]), None);
        assert_eq!(fit_slope(&[(2, 1.0), (2, 3.0)]), None);
    }

    #[test]
    fn empty_rows_flag_undefined() {
        let s = trace_series(&[]);
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|x| x.norms.is_empty() && !x.slope_defined && x.slope.is_none()));
    }

    #[test]
    fn series_by_term() {
        let rows: Vec<TraceRow> = (1..=4).map(|t| row(t, t as f64)).collect();
        let s = trace_series(&rows);
        let a = s.iter().find(|x| x.term == NoiseTerm::LinearA).unwrap();
        assert!((a.slope.unwrap() - 2.0).abs() < 1e-12);
        let q = s.iter().find(|x| x.term == NoiseTerm::Quadratic).unwrap();
        assert_eq!(q.slope, Some(0.0));
    }

    #[test]
    fn csv_round_trip_and_bad_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows: Vec<TraceRow> = (1..=3).map(|t| row(t, t as f64 * 0.5)).collect();
        write_noise_trace(&p, &rows).unwrap();
        assert_eq!(read_noise_trace(&p).unwrap(), rows);

        let mut text = fs::read_to_string(&p).unwrap();
        text.push_str("joint-lora,1,0,4,0,both,abc,1,1,0\n");
        fs::write(&p, text).unwrap();
        match read_noise_trace(&p) {
            Err(Error::Trace { line, .. }) => assert_eq!(line, 5),
            other => panic!("expected trace error, got {other:?}"),
        }
    }
}
