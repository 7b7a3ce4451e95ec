//! Sample CSV ingestion and result emission.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalError, ResultRow};
use crate::channel::Sample;
use crate::geo::GeoPoint;

pub const SAMPLE_HEADER: [&str; 4] = ["lat_deg", "lon_deg", "height_m", "rsrp_db"];

#[derive(Debug, Serialize, Deserialize)]
struct SampleRecord {
    lat_deg: f64,
    lon_deg: f64,
    height_m: f64,
    rsrp_db: f64,
}

/// Reads `lat_deg,lon_deg,height_m,rsrp_db` rows. Line numbers in errors are
/// 1-based and count the header.
pub fn read_samples_csv<R: std::io::Read>(reader: R) -> Result<Vec<Sample>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| EvalError::Parse { line: 1, msg: e.to_string() })?
        .clone();
    if headers.iter().collect::<Vec<_>>() != SAMPLE_HEADER {
        return Err(EvalError::Parse {
            line: 1,
            msg: format!("expected header {}", SAMPLE_HEADER.join(",")),
        });
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.deserialize::<SampleRecord>().enumerate() {
        let line = k + 2;
        let r = rec.map_err(|e| EvalError::Parse { line, msg: e.to_string() })?;
        let location = GeoPoint::new(r.lat_deg, r.lon_deg, r.height_m)
            .map_err(|e| EvalError::Parse { line, msg: e.to_string() })?;
        if !r.rsrp_db.is_finite() {
            return Err(EvalError::Parse { line, msg: "non-finite rsrp_db".into() });
        }
        out.push(Sample::new(location, r.rsrp_db));
    }
    Ok(out)
}

pub fn load_samples_csv(path: impl AsRef<Path>) -> Result<Vec<Sample>, EvalError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))?;
    read_samples_csv(file)
}

pub fn write_samples_csv<W: Write>(writer: W, samples: &[Sample]) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_writer(writer);
    for s in samples {
        w.serialize(SampleRecord {
            lat_deg: s.location.lat_deg,
            lon_deg: s.location.lon_deg,
            height_m: s.location.height_m,
            rsrp_db: s.rsrp_db,
        })
        .map_err(|e| EvalError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResultFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ResultFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ResultFormat::Csv),
            "json" => Ok(ResultFormat::Json),
            _ => Err(format!("unknown format `{s}`")),
        }
    }
}

pub const RESULT_HEADER: &str = "method,M,R_or_N,train_heights,test_height,seed,rmse_db";
pub const AGGREGATE_HEADER: &str =
    "method,M,R_or_N,train_heights,test_height,n_seeds,median_rmse_db,q1_rmse_db,q3_rmse_db";

/// Per-seed rows, a blank line, then one aggregate row per result.
pub fn results_to_csv(rows: &[ResultRow]) -> String {
    let mut out = String::new();
    out.push_str(RESULT_HEADER);
    out.push('\n');
    for r in rows {
        for s in &r.seeds {
            out.push_str(&format!(
                "{},{},{},{},{},{},{:.6}\n",
                r.method, r.m, r.r_or_n, r.train_heights, r.test_height, s.seed, s.rmse_db
            ));
        }
    }
    out.push('\n');
    out.push_str(AGGREGATE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.6},{:.6},{:.6}\n",
            r.method,
            r.m,
            r.r_or_n,
            r.train_heights,
            r.test_height,
            r.seeds.len(),
            r.median_rmse_db,
            r.q1_rmse_db,
            r.q3_rmse_db
        ));
    }
    out
}

pub fn results_to_json(rows: &[ResultRow]) -> String {
    serde_json::to_string_pretty(rows).expect("plain structs serialize")
}

pub fn emit_results(rows: &[ResultRow], path: impl AsRef<Path>, format: ResultFormat) -> Result<(), EvalError> {
    let text = match format {
        ResultFormat::Csv => results_to_csv(rows),
        ResultFormat::Json => results_to_json(rows),
    };
    let path = path.as_ref();
    fs::write(path, text).map_err(|e| EvalError::Io(format!("{}: {e}", path.display())))
}
