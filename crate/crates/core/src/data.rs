//! Forecast samples: CSV ingestion and a seeded synthetic generator.
//!
//! CSV schema (header required, in this order):
//! `timestamp,ws10,wd10,ws100,wd100,load_kw,wind_kw`.

use std::f64::consts::PI;
use std::path::Path;

use chrono::{Duration, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Weibull};
use serde::{Deserialize, Serialize};

use crate::dispatch::DispatchSpec;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 7] = ["timestamp", "ws10", "wd10", "ws100", "wd100", "load_kw", "wind_kw"];
pub const N_FEATURES: usize = 4;

/// One hourly observation.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub timestamp: String,
    /// Wind speed / direction at 10 m and 100 m.
    pub features: [f64; N_FEATURES],
    /// kW.
    pub load: f64,
    /// Realised wind power, kW.
    pub wind: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    timestamp: String,
    ws10: f64,
    wd10: f64,
    ws100: f64,
    wd100: f64,
    load_kw: f64,
    wind_kw: f64,
}

impl From<Row> for Sample {
    fn from(r: Row) -> Self {
        Sample {
            timestamp: r.timestamp,
            features: [r.ws10, r.wd10, r.ws100, r.wd100],
            load: r.load_kw,
            wind: r.wind_kw,
        }
    }
}

impl From<&Sample> for Row {
    fn from(s: &Sample) -> Self {
        Row {
            timestamp: s.timestamp.clone(),
            ws10: s.features[0],
            wd10: s.features[1],
            ws100: s.features[2],
            wd100: s.features[3],
            load_kw: s.load,
            wind_kw: s.wind,
        }
    }
}

/// Problems with a sample relative to a dispatch spec, one message per column.
fn violations(s: &Sample, spec: &DispatchSpec) -> Vec<String> {
    let mut out = Vec::new();
    for (name, v) in ["ws10", "wd10", "ws100", "wd100"].iter().zip(s.features) {
        if !v.is_finite() {
            out.push(format!("{name} is not finite"));
        }
    }
    let c = spec.wind_capacity;
    if !(s.wind >= 0.0 && s.wind <= c) {
        out.push(format!("wind_kw = {} outside [0, {c}]", s.wind));
    }
    let [lo, hi] = spec.load_range;
    if !(s.load >= lo && s.load <= hi) {
        out.push(format!("load_kw = {} outside [{lo}, {hi}]", s.load));
    }
    out
}

/// Reads and validates a dataset; rows keep file order.
pub fn load_dataset(path: &Path, spec: &DispatchSpec) -> Result<Vec<Sample>> {
    let malformed = |reason: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => malformed(format!("{other:?}")),
    })?;
    let header = rdr.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != CSV_HEADER {
        return Err(malformed(format!(
            "header {:?} does not match {:?}",
            got, CSV_HEADER
        )));
    }
    let mut samples = Vec::new();
    let mut bad = Vec::new();
    for (i, rec) in rdr.deserialize::<Row>().enumerate() {
        // Line 1 is the header.
        let line = i + 2;
        let row = rec.map_err(|e| malformed(format!("line {line}: {e}")))?;
        let sample = Sample::from(row);
        bad.extend(violations(&sample, spec).into_iter().map(|v| format!("line {line}: {v}")));
        samples.push(sample);
    }
    if !bad.is_empty() {
        return Err(Error::SchemaViolation {
            path: path.to_path_buf(),
            violations: bad,
        });
    }
    Ok(samples)
}

pub fn write_dataset(path: &Path, samples: &[Sample]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::MalformedCsv {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    for s in samples {
        w.serialize(Row::from(s)).map_err(|e| Error::MalformedCsv {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Checks every sample against the spec's domain.
pub fn check_samples(samples: &[Sample], spec: &DispatchSpec) -> Result<()> {
    let bad: Vec<String> = samples
        .iter()
        .enumerate()
        .flat_map(|(i, s)| violations(s, spec).into_iter().map(move |v| format!("sample {i}: {v}")))
        .collect();
    if bad.is_empty() {
        Ok(())
    } else {
        Err(Error::SchemaViolation {
            path: "<memory>".into(),
            violations: bad,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Std-dev (m/s) of the hub-height speed error not visible in the features.
    pub speed_noise: f64,
    pub start: String,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_train: 2_000,
            n_test: 500,
            speed_noise: 1.5,
            start: "2022-01-01T00:00:00".into(),
        }
    }
}

/// Normalised turbine power curve: cubic ramp from 3 m/s to rated at 12 m/s,
/// cut-out at 25 m/s.
pub fn power_curve(speed: f64) -> f64 {
    const CUT_IN: f64 = 3.0;
    const RATED: f64 = 12.0;
    const CUT_OUT: f64 = 25.0;
    if !(CUT_IN..CUT_OUT).contains(&speed) {
        0.0
    } else if speed >= RATED {
        1.0
    } else {
        (speed.powi(3) - CUT_IN.powi(3)) / (RATED.powi(3) - CUT_IN.powi(3))
    }
}

/// Hourly synthetic series for `spec`; returns `(train, test)` in time order.
pub fn generate(spec: &DispatchSpec, cfg: &SyntheticConfig, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    let start = NaiveDateTime::parse_from_str(&cfg.start, "%Y-%m-%dT%H:%M:%S")
        .map_err(|e| Error::InvalidConfig(format!("start timestamp `{}`: {e}", cfg.start)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weibull = Weibull::new(8.0, 2.0).expect("valid weibull");
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let c = spec.wind_capacity;
    let [l_lo, l_hi] = spec.load_range;
    let l_mid = 0.5 * (l_lo + l_hi);
    let l_amp = 0.35 * (l_hi - l_lo);

    let n = cfg.n_train + cfg.n_test;
    let mut out = Vec::with_capacity(n);
    let mut ws100: f64 = weibull.sample(&mut rng);
    for t in 0..n {
        // AR(1) around a Weibull draw keeps consecutive hours correlated.
        ws100 = (0.7 * ws100 + 0.3 * weibull.sample(&mut rng)).max(0.0);
        let wd100: f64 = rng.random_range(0.0..360.0);
        let ws10 = (0.78 * ws100 + 0.3 * unit.sample(&mut rng)).max(0.0);
        let wd10 = (wd100 + 10.0 * unit.sample(&mut rng)).rem_euclid(360.0);
        let effective = ws100 * (1.0 + 0.1 * (wd100 * PI / 180.0).cos()) + cfg.speed_noise * unit.sample(&mut rng);
        let wind = (c * power_curve(effective)).clamp(0.0, c);
        let hour = (t % 24) as f64;
        let load = (l_mid + l_amp * (2.0 * PI * (hour - 8.0) / 24.0).sin() + unit.sample(&mut rng))
            .clamp(l_lo, l_hi);
        let ts = start + Duration::hours(t as i64);
        out.push(Sample {
            timestamp: ts.format("%Y-%m-%dT%H:%M:%S").to_string(),
            features: [ws10, wd10, ws100, wd100],
            load,
            wind,
        });
    }
    let test = out.split_off(cfg.n_train);
    Ok((out, test))
}
