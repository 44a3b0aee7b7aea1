//! Event data model, JSONL dataset I/O, splitting and validation.
//!
//! Dataset files hold one sequence per line:
//! `{"T": <horizon>, "events": [[t, m1, ..., m_d], ...]}`.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::rng::{tag, StreamKey};

/// One point `x = (t, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Event {
    pub time: f64,
    pub mark: Vec<f64>,
}

impl Event {
    pub fn new(time: f64, mark: Vec<f64>) -> Self {
        Event { time, mark }
    }

    pub fn time_only(time: f64) -> Self {
        Event { time, mark: Vec::new() }
    }
}

/// Ordered events on a horizon `[0, T)`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventSequence {
    pub events: Vec<Event>,
    pub horizon: f64,
}

impl EventSequence {
    pub fn new(events: Vec<Event>, horizon: f64) -> Self {
        EventSequence { events, horizon }
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.events.iter().map(|e| e.time)
    }

    /// `N_t`: number of events with time `<= t`.
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Gap of event `i` from its predecessor (or from 0 for the first event).
    pub fn gap(&self, i: usize) -> f64 {
        let prev = if i == 0 { 0.0 } else { self.events[i - 1].time };
        self.events[i].time - prev
    }
}

/// A problem found by [`validate_sequence`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NonMonotone {
        index: usize,
    },
    NegativeTime {
        index: usize,
    },
    BeyondHorizon {
        index: usize,
    },
    MarkLength {
        index: usize,
        expected: usize,
        found: usize,
    },
    NonFinite {
        index: usize,
    },
    BadHorizon,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NonMonotone { index } => write!(f, "non-monotone times at index {index}"),
            Violation::NegativeTime { index } => write!(f, "negative time at index {index}"),
            Violation::BeyondHorizon { index } => write!(f, "time ≥ horizon at index {index}"),
            Violation::MarkLength { index, expected, found } => {
                write!(f, "mark length {found} at index {index}, expected {expected}")
            }
            Violation::NonFinite { index } => write!(f, "non-finite value at index {index}"),
            Violation::BadHorizon => write!(f, "horizon must be positive and finite"),
        }
    }
}

/// Checks every sequence invariant and returns all violations found.
pub fn validate_sequence(seq: &EventSequence, mark_dim: usize) -> Vec<Violation> {
    let mut out = Vec::new();
    if !(seq.horizon.is_finite() && seq.horizon > 0.0) {
        out.push(Violation::BadHorizon);
    }
    let mut prev: Option<f64> = None;
    for (index, ev) in seq.events.iter().enumerate() {
        if !ev.time.is_finite() || ev.mark.iter().any(|m| !m.is_finite()) {
            out.push(Violation::NonFinite { index });
            continue;
        }
        if ev.time < 0.0 {
            out.push(Violation::NegativeTime { index });
        }
        if ev.time >= seq.horizon {
            out.push(Violation::BeyondHorizon { index });
        }
        if ev.mark.len() != mark_dim {
            out.push(Violation::MarkLength {
                index,
                expected: mark_dim,
                found: ev.mark.len(),
            });
        }
        if let Some(p) = prev {
            if ev.time <= p {
                out.push(Violation::NonMonotone { index });
            }
        }
        prev = Some(ev.time);
    }
    out
}

/// A collection of sequences sharing mark dimension and horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sequences: Vec<EventSequence>,
    pub mark_dim: usize,
    /// Optional `[lo, hi]` box per mark dimension.
    pub mark_bounds: Option<Vec<(f64, f64)>>,
}

impl Dataset {
    /// Builds a dataset, checking every invariant.
    pub fn new(sequences: Vec<EventSequence>, mark_dim: usize) -> Result<Self> {
        let ds = Dataset {
            sequences,
            mark_dim,
            mark_bounds: None,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn with_mark_bounds(mut self, bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.len() != self.mark_dim {
            return Err(Error::InvalidArgument(format!(
                "mark bounds have {} dimensions, dataset has {}",
                bounds.len(),
                self.mark_dim
            )));
        }
        self.mark_bounds = Some(bounds);
        self.validate()?;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn horizon(&self) -> Option<f64> {
        self.sequences.first().map(|s| s.horizon)
    }

    pub fn total_events(&self) -> usize {
        self.sequences.iter().map(|s| s.len()).sum()
    }

    pub fn validate(&self) -> Result<()> {
        let horizon = self.horizon();
        for (k, seq) in self.sequences.iter().enumerate() {
            if let Some(v) = validate_sequence(seq, self.mark_dim).first() {
                return Err(Error::InvalidSequence {
                    sequence: k,
                    message: v.to_string(),
                });
            }
            if Some(seq.horizon) != horizon {
                return Err(Error::InvalidSequence {
                    sequence: k,
                    message: format!(
                        "horizon {} differs from dataset horizon {}",
                        seq.horizon,
                        horizon.unwrap_or(f64::NAN)
                    ),
                });
            }
            if let Some(bounds) = &self.mark_bounds {
                for (i, ev) in seq.events.iter().enumerate() {
                    for (d, (&m, &(lo, hi))) in ev.mark.iter().zip(bounds).enumerate() {
                        if m < lo || m > hi {
                            return Err(Error::InvalidSequence {
                                sequence: k,
                                message: format!("mark {d} of event {i} outside [{lo}, {hi}]"),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Line {
    #[serde(rename = "T")]
    horizon: f64,
    events: Vec<Vec<f64>>,
}

fn parse_line(text: &str, line: usize) -> Result<EventSequence> {
    let raw: Line = serde_json::from_str(text).map_err(|e| Error::Parse {
        line,
        message: e.to_string(),
    })?;
    let mut events = Vec::with_capacity(raw.events.len());
    for (i, row) in raw.events.into_iter().enumerate() {
        let Some((&t, mark)) = row.split_first() else {
            return Err(Error::Parse {
                line,
                message: format!("event {i} is an empty array"),
            });
        };
        events.push(Event::new(t, mark.to_vec()));
    }
    Ok(EventSequence::new(events, raw.horizon))
}

/// Reads a JSONL dataset. Blank lines are skipped; line order is preserved.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut sequences = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        sequences.push(parse_line(&line, i + 1)?);
    }
    dataset_from_sequences(sequences)
}

/// Parses JSONL text held in memory.
pub fn parse_dataset(text: &str) -> Result<Dataset> {
    let mut sequences = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        sequences.push(parse_line(line, i + 1)?);
    }
    dataset_from_sequences(sequences)
}

fn dataset_from_sequences(sequences: Vec<EventSequence>) -> Result<Dataset> {
    let mark_dim = sequences
        .iter()
        .find_map(|s| s.events.first())
        .map_or(0, |e| e.mark.len());
    Dataset::new(sequences, mark_dim)
}

/// Formats a float with 17 significant digits, which round-trips every `f64`.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn write_number_array<W: Write>(out: &mut W, values: &[f64]) -> std::io::Result<()> {
    out.write_all(b"[")?;
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        out.write_all(fmt_f64(*v).as_bytes())?;
    }
    out.write_all(b"]")
}

/// Writes one JSONL line for `seq`.
pub fn write_sequence<W: Write>(out: &mut W, seq: &EventSequence) -> std::io::Result<()> {
    write!(out, "{{\"T\":{},\"events\":[", fmt_f64(seq.horizon))?;
    let mut row = Vec::new();
    for (i, ev) in seq.events.iter().enumerate() {
        if i > 0 {
            out.write_all(b",")?;
        }
        row.clear();
        row.push(ev.time);
        row.extend_from_slice(&ev.mark);
        write_number_array(out, &row)?;
    }
    out.write_all(b"]}\n")
}

pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if ds
        .sequences
        .iter()
        .flat_map(|s| s.events.iter())
        .any(|e| !e.time.is_finite() || e.mark.iter().any(|m| !m.is_finite()))
    {
        return Err(Error::Numeric("cannot serialize non-finite event values".into()));
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    for seq in &ds.sequences {
        write_sequence(&mut out, seq).map_err(|e| Error::io(path, e))?;
    }
    out.flush().map_err(|e| Error::io(path, e))
}

/// Seeded shuffle-and-split. Each part keeps the input's relative order.
pub fn split_dataset(ds: &Dataset, train_frac: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if ds.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot split a dataset with {} sequence(s)",
            ds.len()
        )));
    }
    if !(train_frac > 0.0 && train_frac < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_frac} not in (0, 1)"
        )));
    }
    let n = ds.len();
    let n_train = ((train_frac * n as f64).round() as usize).clamp(1, n - 1);
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut StreamKey::new(seed).derive(tag::SPLIT).rng());
    let mut train_idx = idx[..n_train].to_vec();
    let mut test_idx = idx[n_train..].to_vec();
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |ids: &[usize]| Dataset {
        sequences: ids.iter().map(|&i| ds.sequences[i].clone()).collect(),
        mark_dim: ds.mark_dim,
        mark_bounds: ds.mark_bounds.clone(),
    };
    Ok((pick(&train_idx), pick(&test_idx)))
}
