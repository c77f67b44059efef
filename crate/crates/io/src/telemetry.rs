//! Telemetry files: CSV with a fixed header, or one JSON frame per line.

use std::io::{self, BufRead, Read, Write};
use std::path::Path;

use microteleop_core::teleop::{FrameFlags, TelemetryFrame};
use serde::Serialize;
use thiserror::Error;

pub const CSV_HEADER: [&str; 14] = ["t", "qx", "qy", "qz", "dx", "dy", "dz", "fx_est", "fy_est", "fz_est", "Fux", "Fuy", "Fuz", "flags"];

pub const FLAG_SATURATION: u32 = 1;
pub const FLAG_CONTACT: u32 = 1 << 1;
pub const FLAG_ENGULFED: u32 = 1 << 2;
pub const FLAG_ADHESION_RELEASE: u32 = 1 << 3;
pub const FLAG_ADHESION: u32 = 1 << 4;
pub const FLAG_ACTUATION_LIMITED: u32 = 1 << 5;

#[derive(Debug, Error)]
pub enum TelemetryError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("no frames to write")]
    Empty,
    #[error("frame at t = {0} does not follow the previous one")]
    OutOfOrder(f64),
    #[error("bad telemetry header: {0}")]
    Header(String),
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// `.jsonl` and `.ndjson` mean JSON lines, anything else CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "ndjson") => Self::Jsonl,
            _ => Self::Csv,
        }
    }
}

pub fn flag_bits(f: &FrameFlags) -> u32 {
    [
        (f.saturation, FLAG_SATURATION),
        (f.contact, FLAG_CONTACT),
        (f.engulfed, FLAG_ENGULFED),
        (f.adhesion_release, FLAG_ADHESION_RELEASE),
        (f.adhesion, FLAG_ADHESION),
        (f.actuation_limited, FLAG_ACTUATION_LIMITED),
    ]
    .iter()
    .filter(|(on, _)| *on)
    .fold(0, |acc, (_, bit)| acc | bit)
}

pub fn flags_from_bits(bits: u32) -> FrameFlags {
    FrameFlags {
        saturation: bits & FLAG_SATURATION != 0,
        contact: bits & FLAG_CONTACT != 0,
        engulfed: bits & FLAG_ENGULFED != 0,
        adhesion_release: bits & FLAG_ADHESION_RELEASE != 0,
        adhesion: bits & FLAG_ADHESION != 0,
        actuation_limited: bits & FLAG_ACTUATION_LIMITED != 0,
    }
}

/// One CSV row: handle position, slave position, estimated contact force and
/// the force rendered on the handle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelemetryRow {
    pub t: f64,
    pub q: [f64; 3],
    pub d: [f64; 3],
    pub f_est: [f64; 3],
    pub f_u: [f64; 3],
    pub flags: u32,
}

impl From<&TelemetryFrame<f64>> for TelemetryRow {
    fn from(f: &TelemetryFrame<f64>) -> Self {
        Self {
            t: f.t,
            q: f.master_position.into(),
            d: f.slave_position.into(),
            f_est: f.f_predicted.into(),
            f_u: f.master_force.into(),
            flags: flag_bits(&f.flags),
        }
    }
}

impl TelemetryRow {
    fn record(&self) -> Vec<String> {
        let mut out: Vec<String> = std::iter::once(self.t)
            .chain(self.q)
            .chain(self.d)
            .chain(self.f_est)
            .chain(self.f_u)
            .map(|x| format!("{x:.16e}"))
            .collect();
        out.push(self.flags.to_string());
        out
    }
}

struct Counting<W> {
    inner: W,
    bytes: u64,
}

impl<W: Write> Write for Counting<W> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.bytes += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

enum Sink<W: Write> {
    Csv(Box<csv::Writer<Counting<W>>>),
    Jsonl(Counting<W>),
}

/// Streams frames to a writer, flushing every `frames_per_flush` frames.
pub struct TelemetryWriter<W: Write> {
    sink: Sink<W>,
    frames_per_flush: usize,
    pending: usize,
    last_t: Option<f64>,
}

impl<W: Write> TelemetryWriter<W> {
    pub fn new(inner: W, format: Format, frames_per_flush: usize) -> Result<Self, TelemetryError> {
        let out = Counting { inner, bytes: 0 };
        let sink = match format {
            Format::Csv => {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
                w.write_record(CSV_HEADER)?;
                Sink::Csv(Box::new(w))
            }
            Format::Jsonl => Sink::Jsonl(out),
        };
        Ok(Self { sink, frames_per_flush: frames_per_flush.max(1), pending: 0, last_t: None })
    }

    pub fn write_frame(&mut self, frame: &TelemetryFrame<f64>) -> Result<(), TelemetryError> {
        if self.last_t.is_some_and(|t| frame.t.partial_cmp(&t) != Some(std::cmp::Ordering::Greater)) {
            return Err(TelemetryError::OutOfOrder(frame.t));
        }
        self.last_t = Some(frame.t);
        match &mut self.sink {
            Sink::Csv(w) => w.write_record(TelemetryRow::from(frame).record())?,
            Sink::Jsonl(w) => {
                serde_json::to_writer(&mut *w, frame)?;
                w.write_all(b"\n")?;
            }
        }
        self.pending += 1;
        if self.pending >= self.frames_per_flush {
            self.flush()?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), TelemetryError> {
        self.pending = 0;
        match &mut self.sink {
            Sink::Csv(w) => w.flush()?,
            Sink::Jsonl(w) => w.flush()?,
        }
        Ok(())
    }

    /// Flushes and returns the number of bytes written.
    pub fn finish(mut self) -> Result<u64, TelemetryError> {
        self.flush()?;
        Ok(match self.sink {
            Sink::Csv(w) => w.into_inner().map_err(|e| e.into_error())?.bytes,
            Sink::Jsonl(w) => w.bytes,
        })
    }
}

/// Writes all `frames` and returns the byte count.
pub fn emit_telemetry<W: Write>(frames: &[TelemetryFrame<f64>], sink: W, format: Format) -> Result<u64, TelemetryError> {
    if frames.is_empty() {
        return Err(TelemetryError::Empty);
    }
    let mut w = TelemetryWriter::new(sink, format, usize::MAX)?;
    for f in frames {
        w.write_frame(f)?;
    }
    w.finish()
}

pub fn read_csv<R: Read>(input: R) -> Result<Vec<TelemetryRow>, TelemetryError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(input);
    let header = reader.headers()?.clone();
    if !header.iter().eq(CSV_HEADER) {
        return Err(TelemetryError::Header(header.iter().collect::<Vec<_>>().join(",")));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let bad = |message: String| TelemetryError::Row { line, message };
        let mut x = [0.0; 13];
        for (i, slot) in x.iter_mut().enumerate() {
            *slot = record[i].parse().map_err(|e| bad(format!("column {}: {e}", CSV_HEADER[i])))?;
        }
        let flags = record[13].parse().map_err(|e| bad(format!("column flags: {e}")))?;
        let v = |i: usize| [x[i], x[i + 1], x[i + 2]];
        rows.push(TelemetryRow { t: x[0], q: v(1), d: v(4), f_est: v(7), f_u: v(10), flags });
    }
    Ok(rows)
}

pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<TelemetryFrame<f64>>, TelemetryError> {
    let mut frames = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        frames.push(serde_json::from_str(&line).map_err(|e| TelemetryError::Row { line: i as u64 + 1, message: e.to_string() })?);
    }
    Ok(frames)
}

/// What can be read off the CSV columns alone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TelemetrySummary {
    pub frames: usize,
    pub duration: f64,
    pub peak_estimated_force: f64,
    pub peak_master_force: f64,
    pub saturated_frames: usize,
    pub contact_frames: usize,
    pub adhesion_releases: usize,
    pub engulfment_time: Option<f64>,
}

pub fn summarize(rows: &[TelemetryRow]) -> TelemetrySummary {
    let norm = |v: &[f64; 3]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let count = |bit: u32| rows.iter().filter(|r| r.flags & bit != 0).count();
    TelemetrySummary {
        frames: rows.len(),
        duration: rows.last().map_or(0.0, |r| r.t),
        peak_estimated_force: rows.iter().map(|r| norm(&r.f_est)).fold(0.0, f64::max),
        peak_master_force: rows.iter().map(|r| norm(&r.f_u)).fold(0.0, f64::max),
        saturated_frames: count(FLAG_SATURATION),
        contact_frames: count(FLAG_CONTACT),
        adhesion_releases: count(FLAG_ADHESION_RELEASE),
        engulfment_time: rows.iter().find(|r| r.flags & FLAG_ENGULFED != 0).map(|r| r.t),
    }
}
