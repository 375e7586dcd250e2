//! On-disk formats: trace CSV and JSON artifacts.
//!
//! Traces are one row per (job, cage, minute):
//! `job_id,cage_id,minute,watts,cap_watts`, with `cap_watts` empty unless
//! the sample was recorded at a monitoring cap (in which case `watts`
//! repeats the cap value). Rows are grouped by job, cages and minutes
//! contiguous from zero; readers name the offending line when that fails.
//! Floats are written shortest-round-trip in both CSV and JSON, so a run
//! restarted from saved artifacts reproduces bit-identical numbers.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{JobSeries, PowerSample};
use crate::predict::PredictiveEnsemble;

const TRACE_HEADER: [&str; 5] = ["job_id", "cage_id", "minute", "watts", "cap_watts"];

#[derive(Debug, Serialize, Deserialize)]
struct TraceRow<'a> {
    job_id: std::borrow::Cow<'a, str>,
    cage_id: u32,
    minute: u32,
    watts: f64,
    cap_watts: Option<f64>,
}

/// Write traces as grouped CSV rows.
pub fn write_traces_to<W: Write>(jobs: &[JobSeries], writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(TRACE_HEADER)?;
    for job in jobs {
        job.validate()?;
        for (c, rep) in job.replicates.iter().enumerate() {
            for s in rep {
                w.serialize(TraceRow {
                    job_id: std::borrow::Cow::Borrowed(&job.job_id),
                    cage_id: c as u32,
                    minute: s.minute,
                    watts: s.watts,
                    cap_watts: s.censored_at,
                })?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_traces(jobs: &[JobSeries], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))?;
    write_traces_to(jobs, BufWriter::new(file))
}

/// Read grouped trace CSV. File order is preserved; structural problems
/// (interleaved jobs, minute gaps, cage jumps) are reported with the line
/// they first appear on.
pub fn read_traces_from<R: Read>(reader: R) -> Result<Vec<JobSeries>> {
    let mut r = csv::Reader::from_reader(reader);
    {
        let headers = r.headers()?;
        if headers.iter().ne(TRACE_HEADER) {
            return Err(Error::data(format!(
                "trace csv header must be exactly `{}`",
                TRACE_HEADER.join(",")
            )));
        }
    }
    let mut jobs: Vec<JobSeries> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, row) in r.deserialize::<TraceRow<'static>>().enumerate() {
        let row = row?;
        let line = i + 2; // header occupies line 1
        let sample =
            PowerSample { minute: row.minute, watts: row.watts, censored_at: row.cap_watts };
        let cage = row.cage_id as usize;
        match jobs.last_mut() {
            Some(job) if job.job_id == row.job_id.as_ref() => {
                if cage == job.replicates.len() {
                    if row.minute != 0 {
                        return Err(Error::data(format!(
                            "line {line}: job {} cage {cage} must start at minute 0",
                            job.job_id
                        )));
                    }
                    job.replicates.push(vec![sample]);
                } else if cage + 1 == job.replicates.len() {
                    let rep = job.replicates.last_mut().expect("nonempty");
                    if row.minute as usize != rep.len() {
                        return Err(Error::data(format!(
                            "line {line}: job {} cage {cage}: expected minute {}, found {}",
                            job.job_id,
                            rep.len(),
                            row.minute
                        )));
                    }
                    rep.push(sample);
                } else {
                    return Err(Error::data(format!(
                        "line {line}: job {} cage ids must be grouped and contiguous (found {cage})",
                        job.job_id
                    )));
                }
            }
            _ => {
                if !seen.insert(row.job_id.to_string()) {
                    return Err(Error::data(format!(
                        "line {line}: job {} appears in more than one block",
                        row.job_id
                    )));
                }
                if cage != 0 || row.minute != 0 {
                    return Err(Error::data(format!(
                        "line {line}: job {} must start at cage 0, minute 0",
                        row.job_id
                    )));
                }
                jobs.push(JobSeries::new(row.job_id.to_string(), vec![vec![sample]]));
            }
        }
    }
    if jobs.is_empty() {
        return Err(Error::data("trace csv contains no data rows"));
    }
    for job in &jobs {
        job.validate()?;
    }
    Ok(jobs)
}

pub fn read_traces(path: impl AsRef<Path>) -> Result<Vec<JobSeries>> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    read_traces_from(BufReader::new(file))
}

/// Pretty-printed JSON with a trailing newline.
pub fn save_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::data(format!("cannot open {}: {e}", path.display())))?;
    Ok(serde_json::from_reader(BufReader::new(file))?)
}

/// Flat export of a predictive ensemble: `realization,minute,watts`.
pub fn write_ensemble_csv_to<W: Write>(ens: &PredictiveEnsemble, writer: W) -> Result<()> {
    ens.validate()?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(writer);
    w.write_record(["realization", "minute", "watts"])?;
    for (r, trace) in ens.realizations.iter().enumerate() {
        for (t, watts) in trace.iter().enumerate() {
            w.write_record([r.to_string(), t.to_string(), format_float(*watts)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_ensemble_csv(ens: &PredictiveEnsemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path)
        .map_err(|e| Error::data(format!("cannot create {}: {e}", path.display())))?;
    write_ensemble_csv_to(ens, BufWriter::new(file))
}

/// Shortest representation that parses back to the same f64.
fn format_float(v: f64) -> String {
    serde_json::to_string(&v).expect("finite float")
}
