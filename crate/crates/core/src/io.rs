//! File formats: dataset envelope + CSV body, fit and scaling reports,
//! population and prediction tables.
//!
//! Every table starts with a `#` comment carrying the tool version and the
//! SHA-256 of the input it was derived from.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::DesignSpec;
use crate::correlations::{Gamma3Prediction, RateCoefficients};
use crate::dynamics::{PopulationVector, Trajectory};
use crate::error::{Error, Result};
use crate::inference::{FitOptions, ParameterEstimate, ParameterStatus, RateFit, ScalingFit};
use crate::lab::{ReadoutModel, ShotDataset, Templates};

pub const TOOL_VERSION: &str = concat!("fewbody ", env!("CARGO_PKG_VERSION"));
pub const DATASET_FORMAT_VERSION: u32 = 1;
const BODY_HEADER: [&str; 3] = ["wait_time_s", "shot_index", "photon_count"];

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn provenance_line(input_sha256: &str) -> String {
    format!("# {TOOL_VERSION} input_sha256={input_sha256}\n")
}

fn json_error(e: serde_json::Error) -> Error {
    Error::Parse { line: e.line(), message: e.to_string() }
}

/// JSON side of a stored dataset; the shots live in the CSV named by `body`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetEnvelope {
    pub format_version: u32,
    pub seed: u64,
    pub design: DesignSpec,
    pub readout: ReadoutModel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub true_rates: Option<RateCoefficients>,
    /// File name of the CSV body, relative to the envelope.
    pub body: String,
    pub body_sha256: String,
}

fn dataset_body(ds: &ShotDataset) -> Result<Vec<u8>> {
    let mut out = format!("# {TOOL_VERSION} dataset seed={}\n", ds.seed).into_bytes();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(BODY_HEADER).map_err(csv_error)?;
    for (t, shots) in ds.design.wait_times.iter().zip(&ds.records) {
        for (s, p) in shots.iter().enumerate() {
            w.write_record([t.to_string(), s.to_string(), p.to_string()]).map_err(csv_error)?;
        }
    }
    out.extend(w.into_inner().map_err(|e| Error::Io(e.into_error()))?);
    Ok(out)
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        kind => Error::Parse { line, message: format!("{kind:?}") },
    }
}

/// Writes `<path>` (JSON envelope) and `<path stem>.csv` (shots).
pub fn write_dataset(ds: &ShotDataset, envelope_path: &Path) -> Result<PathBuf> {
    ds.validate()?;
    let body_path = envelope_path.with_extension("csv");
    let body_name = body_path
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::domain(format!("bad dataset path {}", envelope_path.display())))?
        .to_string();
    let body = dataset_body(ds)?;
    let envelope = DatasetEnvelope {
        format_version: DATASET_FORMAT_VERSION,
        seed: ds.seed,
        design: DesignSpec::from(&ds.design),
        readout: ds.readout,
        true_rates: ds.true_rates,
        body: body_name,
        body_sha256: sha256_hex(&body),
    };
    fs::write(&body_path, &body)?;
    fs::write(envelope_path, to_json(&envelope)?)?;
    Ok(body_path)
}

fn to_json<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

/// Reads a dataset back; the body must match its recorded digest.
pub fn read_dataset(envelope_path: &Path) -> Result<ShotDataset> {
    let text = fs::read(envelope_path)?;
    let env: DatasetEnvelope = serde_json::from_slice(&text).map_err(json_error)?;
    if env.format_version != DATASET_FORMAT_VERSION {
        return Err(Error::Parse { line: 1, message: format!("unsupported format_version {}", env.format_version) });
    }
    let body_path = envelope_path.with_file_name(&env.body);
    let body = fs::read(&body_path)?;
    let digest = sha256_hex(&body);
    if digest != env.body_sha256 {
        return Err(Error::Parse {
            line: 0,
            message: format!("{} does not match its recorded sha256", body_path.display()),
        });
    }
    let design = env.design.to_design()?;
    env.readout.validate()?;
    let records = parse_body(&body, &design.wait_times, design.shots_per_time)?;
    let ds = ShotDataset { seed: env.seed, design, readout: env.readout, true_rates: env.true_rates, records };
    ds.validate()?;
    Ok(ds)
}

fn parse_body(body: &[u8], wait_times: &[f64], shots_per_time: u32) -> Result<Vec<Vec<u32>>> {
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(body);
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(BODY_HEADER) {
        let line = header.position().map_or(1, |p| p.line() as usize);
        return Err(Error::Parse { line, message: format!("expected header {}", BODY_HEADER.join(",")) });
    }
    let mut records: Vec<Vec<u32>> = vec![Vec::new(); wait_times.len()];
    let mut time_index = 0;
    for row in rdr.records() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bad = |message: String| Error::Parse { line, message };
        let field = |i: usize| row.get(i).ok_or_else(|| bad(format!("missing column {}", BODY_HEADER[i])));
        let t: f64 = field(0)?.parse().map_err(|e| bad(format!("wait_time_s: {e}")))?;
        let shot: u32 = field(1)?.parse().map_err(|e| bad(format!("shot_index: {e}")))?;
        let photons: u32 = field(2)?.parse().map_err(|e| bad(format!("photon_count: {e}")))?;
        while time_index < wait_times.len() && wait_times[time_index] != t {
            if records[time_index].len() != shots_per_time as usize {
                return Err(bad(format!("wait time {t} s appears out of order")));
            }
            time_index += 1;
        }
        if time_index == wait_times.len() {
            return Err(bad(format!("wait time {t} s is not in the design")));
        }
        let group = &mut records[time_index];
        if shot as usize != group.len() {
            return Err(bad(format!("expected shot_index {}, found {shot}", group.len())));
        }
        group.push(photons);
    }
    Ok(records)
}

/// Reads per-atom-number templates from CSV columns photon_count,p0,p1,p2,p3.
/// Rows may be raw counts; each column is normalised.
pub fn read_templates(path: &Path) -> Result<Templates> {
    let bytes = fs::read(path)?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(bytes.as_slice());
    let expected = ["photon_count", "p0", "p1", "p2", "p3"];
    let header = rdr.headers().map_err(csv_error)?.clone();
    if header.iter().ne(expected) {
        return Err(Error::Parse { line: 1, message: format!("expected header {}", expected.join(",")) });
    }
    let mut cols: [Vec<f64>; 4] = Default::default();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let line = row.position().map_or(0, |p| p.line() as usize);
        let bin: usize = row[0].parse().map_err(|e| Error::Parse { line, message: format!("photon_count: {e}") })?;
        if bin != i {
            return Err(Error::Parse { line, message: format!("expected photon_count {i}, found {bin}") });
        }
        for (k, col) in cols.iter_mut().enumerate() {
            let v: f64 = row[k + 1].parse().map_err(|e| Error::Parse { line, message: format!("p{k}: {e}") })?;
            col.push(v);
        }
    }
    Templates::from_histograms(cols)
}

pub fn write_templates(t: &Templates, path: &Path) -> Result<()> {
    let mut s = format!("# {TOOL_VERSION}\nphoton_count,p0,p1,p2,p3\n");
    for c in 0..t.bins() {
        s += &format!("{c},{},{},{},{}\n", t.pmf(0)[c], t.pmf(1)[c], t.pmf(2)[c], t.pmf(3)[c]);
    }
    fs::write(path, s)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorEntry {
    pub value: f64,
    pub status: ParameterStatus,
    pub identifiable: bool,
    pub std_error: Option<f64>,
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl From<&ParameterEstimate> for ErrorEntry {
    fn from(p: &ParameterEstimate) -> Self {
        ErrorEntry {
            value: p.value,
            status: p.status,
            identifiable: p.identifiable(),
            std_error: p.std_error,
            lower: p.interval.map(|i| i[0]),
            upper: p.interval.map(|i| i[1]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportErrors {
    pub gamma1: ErrorEntry,
    pub gamma2: ErrorEntry,
    pub gamma2_tilde: ErrorEntry,
    pub gamma3: ErrorEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub tool: String,
    pub input_sha256: String,
    /// s⁻¹
    pub rates: RateCoefficients,
    pub initials: PopulationVector,
    /// Atom order (0..=3), absent when initials were held fixed.
    pub initial_std_errors: Option<[f64; 4]>,
    pub errors: ReportErrors,
    pub residual_norm: f64,
    pub degrees_of_freedom: usize,
    pub options: FitOptions,
    #[serde(rename = "power_mW")]
    pub power_mw: f64,
    #[serde(rename = "omega_perp_kHz")]
    pub omega_perp_khz: f64,
}

impl FitReport {
    pub fn new(fit: &RateFit, input_sha256: &str, power_mw: f64, omega_perp_khz: f64) -> Self {
        FitReport {
            tool: TOOL_VERSION.into(),
            input_sha256: input_sha256.into(),
            rates: fit.rates,
            initials: fit.fitted_initials,
            initial_std_errors: fit.initial_std_errors,
            errors: ReportErrors {
                gamma1: (&fit.errors.gamma1).into(),
                gamma2: (&fit.errors.gamma2).into(),
                gamma2_tilde: (&fit.errors.gamma2_tilde).into(),
                gamma3: (&fit.errors.gamma3).into(),
            },
            residual_norm: fit.residual_norm,
            degrees_of_freedom: fit.degrees_of_freedom,
            options: fit.options,
            power_mw,
            omega_perp_khz,
        }
    }
}

pub fn write_json<T: Serialize>(v: &T, path: &Path) -> Result<()> {
    fs::write(path, to_json(v)?)?;
    Ok(())
}

pub fn read_fit_report(path: &Path) -> Result<FitReport> {
    serde_json::from_slice(&fs::read(path)?).map_err(json_error)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub tool: String,
    pub input_sha256: String,
    pub selected_m: u32,
    /// s⁻¹·(rad/s)^−exponent
    #[serde(rename = "A")]
    pub amplitude: f64,
    pub exponent: f64,
    /// Weighted residual sum of squares, keyed by m.
    pub residuals_per_m: std::collections::BTreeMap<u32, f64>,
    pub aic: std::collections::BTreeMap<u32, f64>,
}

impl ScalingReport {
    pub fn new(fit: &ScalingFit, input_sha256: &str) -> Self {
        ScalingReport {
            tool: TOOL_VERSION.into(),
            input_sha256: input_sha256.into(),
            selected_m: fit.selected_m,
            amplitude: fit.amplitude,
            exponent: fit.exponent,
            residuals_per_m: fit.candidates.iter().map(|c| (c.m, c.weighted_rss)).collect(),
            aic: fit.candidates.iter().map(|c| (c.m, c.aic)).collect(),
        }
    }
}

/// Columns t_s, r3, r2, r1, r0.
pub fn trajectory_csv(traj: &Trajectory, input_sha256: &str) -> String {
    let mut s = provenance_line(input_sha256);
    s += "t_s,r3,r2,r1,r0\n";
    for (t, p) in traj.times.iter().zip(&traj.populations) {
        s += &format!("{t},{},{},{},{}\n", p.r3, p.r2, p.r1, p.r0);
    }
    s
}

/// One row of the prediction table; `gamma2` only when a pair-loss law is configured.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRow {
    pub prediction: Gamma3Prediction,
    pub gamma2: Option<f64>,
}

pub fn prediction_csv(rows: &[PredictionRow], input_sha256: &str) -> String {
    let with_gamma2 = rows.iter().any(|r| r.gamma2.is_some());
    let mut s = provenance_line(input_sha256);
    s += "power_mW,omega_perp_kHz,gamma3_thermal,gamma3_stg,gamma3_1d";
    s += if with_gamma2 { ",gamma2\n" } else { "\n" };
    for r in rows {
        let p = &r.prediction;
        s += &format!(
            "{},{},{:e},{:e},{:e}",
            p.power * 1e3,
            crate::config::angular_to_khz(p.omega_perp),
            p.gamma3_thermal,
            p.gamma3_stg,
            p.gamma3_1d
        );
        if with_gamma2 {
            s += &format!(",{:e}", r.gamma2.unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}
