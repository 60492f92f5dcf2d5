//! Chain trace CSV format. The header is part of the contract:
//! `theta_1,...,theta_R,accepted,log_likelihood`, one row per kept sample.
//! Floats are written with 17 significant digits so re-reading a trace
//! recovers every f64 bit-for-bit.

use std::io::{BufWriter, Write};
use std::path::Path;

use mlda::hierarchy::Trace;
use nalgebra::DVector;

use crate::error::{CliError, Result};

/// Formats a float so `str::parse::<f64>` round-trips it exactly.
pub fn format_float(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_header(n_params: usize) -> Vec<String> {
    let mut header: Vec<String> = (1..=n_params).map(|i| format!("theta_{i}")).collect();
    header.push("accepted".into());
    header.push("log_likelihood".into());
    header
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::config(format!("cannot create {}: {e}", path.display())))?;
    let mut out = BufWriter::new(file);
    writeln!(out, "{}", trace_header(trace.dim()).join(","))?;
    for sample in &trace.samples {
        for value in sample.theta.iter() {
            write!(out, "{},", format_float(*value))?;
        }
        writeln!(
            out,
            "{},{}",
            u8::from(sample.accepted),
            format_float(sample.log_likelihood)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// A trace read back from disk, with the parameter names from its header.
#[derive(Debug, Clone)]
pub struct TraceData {
    pub parameters: Vec<String>,
    pub trace: Trace,
}

impl TraceData {
    pub fn len(&self) -> usize {
        self.trace.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trace.is_empty()
    }

    /// Column of the named parameter, or a config error listing what exists.
    pub fn parameter_column(&self, name: &str) -> Result<Vec<f64>> {
        match self.parameters.iter().position(|p| p == name) {
            Some(index) => Ok(self.trace.parameter_column(index)),
            None => Err(CliError::config(format!(
                "unknown parameter {name:?}; trace has {}",
                self.parameters.join(", ")
            ))),
        }
    }
}

pub fn read_trace(path: &Path) -> Result<TraceData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;

    let header: Vec<String> = reader
        .headers()?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    validate_trace_header(&header, path)?;
    let n_params = header.len() - 2;

    let mut trace = Trace::default();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        if record.len() != header.len() {
            return Err(CliError::config(format!(
                "{} row {}: expected {} fields, found {}",
                path.display(),
                row + 1,
                header.len(),
                record.len()
            )));
        }
        let parse = |i: usize| -> Result<f64> {
            record[i].trim().parse::<f64>().map_err(|e| {
                CliError::config(format!(
                    "{} row {} column {}: {e}",
                    path.display(),
                    row + 1,
                    header[i]
                ))
            })
        };
        let mut theta = DVector::zeros(n_params);
        for i in 0..n_params {
            theta[i] = parse(i)?;
        }
        let accepted = match record[n_params].trim() {
            "0" => false,
            "1" => true,
            other => {
                return Err(CliError::config(format!(
                    "{} row {}: accepted must be 0 or 1, found {other:?}",
                    path.display(),
                    row + 1
                )))
            }
        };
        let log_likelihood = parse(n_params + 1)?;
        trace.push(theta, accepted, log_likelihood);
    }
    Ok(TraceData {
        parameters: header[..n_params].to_vec(),
        trace,
    })
}

fn validate_trace_header(header: &[String], path: &Path) -> Result<()> {
    let fail = |msg: String| {
        Err(CliError::config(format!(
            "{}: malformed trace header: {msg}",
            path.display()
        )))
    };
    if header.len() < 3 {
        return fail(format!("expected at least 3 columns, found {}", header.len()));
    }
    let n_params = header.len() - 2;
    let expected = trace_header(n_params);
    if header != expected.as_slice() {
        return fail(format!(
            "expected {:?}..., found {:?}...",
            &expected[..2.min(expected.len())],
            &header[..2.min(header.len())]
        ));
    }
    Ok(())
}

/// Reads several chain traces and checks they agree on parameters and length,
/// which the multi-chain diagnostics require.
pub fn read_consistent_traces(paths: &[std::path::PathBuf]) -> Result<Vec<TraceData>> {
    if paths.is_empty() {
        return Err(CliError::config("no trace files given or discovered"));
    }
    let mut traces = Vec::with_capacity(paths.len());
    for path in paths {
        traces.push(read_trace(path)?);
    }
    let first = &traces[0];
    for (path, trace) in paths.iter().zip(&traces).skip(1) {
        if trace.parameters != first.parameters {
            return Err(CliError::config(format!(
                "{} disagrees with {} on trace columns",
                path.display(),
                paths[0].display()
            )));
        }
        if trace.len() != first.len() {
            return Err(CliError::config(format!(
                "{} has {} samples but {} has {}",
                path.display(),
                trace.len(),
                paths[0].display(),
                first.len()
            )));
        }
    }
    Ok(traces)
}
