//! Persistence: sample batches as CSV with a JSON metadata sidecar, moment
//! records and sweep reports as JSON, and plot-ready CSV projections of sweep
//! reports.
//!
//! Every writer goes through write-to-temp-then-rename, so a failed run never
//! leaves a partial file behind, and all numeric formatting is fixed-width
//! scientific notation, so identical data produce identical bytes.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::bench::{SweepAxis, WorkingPointReport};
use crate::channel::{BatchMetadata, SampleBatch, SampleRecord};
use crate::error::{EntError, EntResult};

/// Header of the sample CSV format.
pub const SAMPLE_HEADER: &str = "pulse_index,symbol,x,p";

/// Header of the amplitude-sweep plot CSV.
pub const AMPLITUDE_HEADER: &str = "alpha,N,E_N,rate,rate_1sigma,rate_2sigma,rate_3sigma";

/// Header of the phase-noise-sweep plot CSV.
pub const PHASE_HEADER: &str = "tuning,var_x,var_p,rate";

/// Location of the metadata sidecar for a sample CSV: the same path with the
/// extension replaced by `meta.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("meta.json")
}

/// Writes `bytes`-producing content atomically: the closure streams into a
/// temporary file in the destination directory, which is renamed over the
/// final path only after a successful flush.
pub fn atomic_write_with<F>(path: &Path, write_fn: F) -> EntResult<()>
where
    F: FnOnce(&mut BufWriter<File>) -> EntResult<()>,
{
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let name = path
        .file_name()
        .ok_or_else(|| EntError::invalid(format!("not a file path: {}", path.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        name.to_string_lossy(),
        std::process::id()
    ));
    let result = (|| -> EntResult<()> {
        let mut writer = BufWriter::new(File::create(&tmp)?);
        write_fn(&mut writer)?;
        writer.flush()?;
        Ok(())
    })();
    match result {
        Ok(()) => {
            fs::rename(&tmp, path)?;
            Ok(())
        }
        Err(e) => {
            let _ = fs::remove_file(&tmp);
            Err(e)
        }
    }
}

/// Atomically writes a byte slice.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> EntResult<()> {
    atomic_write_with(path, |w| {
        w.write_all(bytes)?;
        Ok(())
    })
}

/// Serializes any document as pretty JSON (trailing newline), atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> EntResult<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    atomic_write(path, &bytes)
}

/// Reads a JSON document.
pub fn read_json<T: DeserializeOwned>(path: &Path) -> EntResult<T> {
    let file = File::open(path)?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Writes a sample batch: the CSV at `csv_path` (one line per pulse, x and p
/// with nine significant digits) plus the metadata sidecar next to it.
pub fn write_batch(csv_path: &Path, batch: &SampleBatch) -> EntResult<()> {
    atomic_write_with(csv_path, |w| {
        writeln!(w, "{SAMPLE_HEADER}")?;
        for r in &batch.records {
            writeln!(w, "{},{},{:.9e},{:.9e}", r.pulse_index, r.symbol, r.x, r.p)?;
        }
        Ok(())
    })?;
    write_json(&sidecar_path(csv_path), &batch.meta)
}

fn format_err(line: usize, msg: impl Into<String>) -> EntError {
    EntError::Format {
        line,
        msg: msg.into(),
    }
}

/// Reads a sample CSV. Line numbers in errors are 1-based and count the
/// header.
pub fn read_samples(csv_path: &Path) -> EntResult<Vec<SampleRecord>> {
    let reader = BufReader::new(File::open(csv_path)?);
    let mut records = Vec::new();
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file, expected header"))??;
    if header.trim_end() != SAMPLE_HEADER {
        return Err(format_err(
            1,
            format!("expected header `{SAMPLE_HEADER}`, got `{}`", header.trim_end()),
        ));
    }
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let mut next_field = |name: &str| {
            fields
                .next()
                .ok_or_else(|| format_err(line_no, format!("missing field `{name}`")))
        };
        let pulse_index: u64 = next_field("pulse_index")?
            .parse()
            .map_err(|e| format_err(line_no, format!("bad pulse_index: {e}")))?;
        let symbol: u8 = next_field("symbol")?
            .parse()
            .map_err(|e| format_err(line_no, format!("bad symbol: {e}")))?;
        if symbol > 1 {
            return Err(format_err(line_no, format!("symbol must be 0 or 1, got {symbol}")));
        }
        let x: f64 = next_field("x")?
            .parse()
            .map_err(|e| format_err(line_no, format!("bad x: {e}")))?;
        let p: f64 = next_field("p")?
            .parse()
            .map_err(|e| format_err(line_no, format!("bad p: {e}")))?;
        if !(x.is_finite() && p.is_finite()) {
            return Err(format_err(line_no, "non-finite quadrature value"));
        }
        if fields.next().is_some() {
            return Err(format_err(line_no, "too many fields, expected 4"));
        }
        records.push(SampleRecord {
            pulse_index,
            symbol,
            x,
            p,
        });
    }
    Ok(records)
}

/// Reads the metadata sidecar of a sample CSV, if one exists.
pub fn read_metadata(csv_path: &Path) -> EntResult<Option<BatchMetadata>> {
    let path = sidecar_path(csv_path);
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_json(&path)?))
}

/// Writes the Fig. 2/3-style projection of an amplitude sweep:
/// `alpha,N,E_N,rate,rate_1sigma,rate_2sigma,rate_3sigma`.
pub fn write_amplitude_csv(path: &Path, report: &WorkingPointReport) -> EntResult<()> {
    if report.axis != SweepAxis::Amplitude {
        return Err(EntError::invalid(
            "amplitude CSV requires an amplitude-axis report",
        ));
    }
    atomic_write_with(path, |w| {
        writeln!(w, "{AMPLITUDE_HEADER}")?;
        for row in &report.rows {
            if row.band_rates.len() < 3 {
                return Err(EntError::invalid(
                    "amplitude CSV requires 1σ/2σ/3σ band rates on every row",
                ));
            }
            writeln!(
                w,
                "{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e},{:.9e}",
                row.parameter,
                row.quant.negativity,
                row.quant.log_negativity,
                row.rate,
                row.band_rates[0],
                row.band_rates[1],
                row.band_rates[2],
            )?;
        }
        Ok(())
    })
}

/// Writes the Fig. 4-style projection of a phase-noise sweep:
/// `tuning,var_x,var_p,rate` with symbol-averaged state variances.
pub fn write_phase_csv(path: &Path, report: &WorkingPointReport) -> EntResult<()> {
    if report.axis != SweepAxis::PhaseTuning {
        return Err(EntError::invalid(
            "phase CSV requires a phase-tuning-axis report",
        ));
    }
    atomic_write_with(path, |w| {
        writeln!(w, "{PHASE_HEADER}")?;
        for row in &report.rows {
            let var_x = (row.record.symbols[0].var_x + row.record.symbols[1].var_x) / 2.0;
            let var_p = (row.record.symbols[0].var_p + row.record.symbols[1].var_p) / 2.0;
            writeln!(
                w,
                "{:.9e},{:.9e},{:.9e},{:.9e}",
                row.parameter, var_x, var_p, row.rate
            )?;
        }
        Ok(())
    })
}
