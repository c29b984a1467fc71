//! Survival-time extraction from observed pick-up and drop-off records.
//!
//! Drop-offs and pick-ups at a unit are sorted separately. Each drop-off, in
//! chronological order, is then paired with the first pick-up that happens
//! strictly after it and has not been paired yet. The gap between the two is
//! one survival-time sample. Pairing stops once pick-ups run out.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{FqmError, Result};

pub const NANOS_PER_SECOND: i64 = 1_000_000_000;
pub const NANOS_PER_HOUR: i64 = 3_600 * NANOS_PER_SECOND;

/// Absolute instant, nanoseconds since the Unix epoch (UTC).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Timestamp(pub i64);

impl Timestamp {
    pub fn from_seconds(secs: i64) -> Self {
        Timestamp(secs * NANOS_PER_SECOND)
    }

    /// Offset by a (possibly fractional) number of hours, rounded to the nanosecond.
    pub fn plus_hours(self, hours: f64) -> Self {
        Timestamp(self.0 + (hours * NANOS_PER_HOUR as f64).round() as i64)
    }

    /// `self - earlier` in hours.
    pub fn hours_since(self, earlier: Timestamp) -> f64 {
        (self.0 - earlier.0) as f64 / NANOS_PER_HOUR as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Pickup,
    Dropoff,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Pickup => "pickup",
            EventKind::Dropoff => "dropoff",
        }
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for EventKind {
    type Err = FqmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "pickup" | "pick-up" | "0" => Ok(EventKind::Pickup),
            "dropoff" | "drop-off" | "1" => Ok(EventKind::Dropoff),
            other => Err(FqmError::InvalidParameter(format!("unknown event kind `{other}`"))),
        }
    }
}

/// One observed record at a unit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TripEvent {
    pub vehicle_id: String,
    pub timestamp: Timestamp,
    pub kind: EventKind,
}

impl TripEvent {
    pub fn new(vehicle_id: impl Into<String>, timestamp: Timestamp, kind: EventKind) -> Self {
        Self {
            vehicle_id: vehicle_id.into(),
            timestamp,
            kind,
        }
    }
}

/// Half-open analysis window `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub start: Timestamp,
    pub end: Timestamp,
}

impl Window {
    pub fn new(start: Timestamp, end: Timestamp) -> Result<Self> {
        if start >= end {
            return Err(FqmError::InvalidParameter(format!(
                "window start {} must precede end {}",
                start.0, end.0
            )));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, t: Timestamp) -> bool {
        self.start <= t && t < self.end
    }

    pub fn hours(&self) -> f64 {
        self.end.hours_since(self.start)
    }

    /// Splits `[start, start + count * length)` into consecutive windows.
    pub fn consecutive(start: Timestamp, length_hours: f64, count: usize) -> Result<Vec<Window>> {
        (0..count)
            .map(|w| {
                Window::new(
                    start.plus_hours(length_hours * w as f64),
                    start.plus_hours(length_hours * (w + 1) as f64),
                )
            })
            .collect()
    }
}

/// Sorted drop-off and pick-up instants of one unit over one window.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventStream {
    pub unit_id: String,
    pub window: Window,
    pub dropoff_times: Vec<Timestamp>,
    pub pickup_times: Vec<Timestamp>,
}

impl EventStream {
    pub fn empty(unit_id: impl Into<String>, window: Window) -> Self {
        Self {
            unit_id: unit_id.into(),
            window,
            dropoff_times: Vec::new(),
            pickup_times: Vec::new(),
        }
    }

    pub fn n_dropoffs(&self) -> usize {
        self.dropoff_times.len()
    }

    pub fn n_pickups(&self) -> usize {
        self.pickup_times.len()
    }

    /// Adds one event; events outside the window are ignored and reported as `false`.
    pub fn push(&mut self, kind: EventKind, t: Timestamp) -> bool {
        if !self.window.contains(t) {
            return false;
        }
        match kind {
            EventKind::Pickup => self.pickup_times.push(t),
            EventKind::Dropoff => self.dropoff_times.push(t),
        }
        true
    }

    pub fn sort(&mut self) {
        self.dropoff_times.sort_unstable();
        self.pickup_times.sort_unstable();
    }
}

/// Partitions raw events by kind and sorts each side. Events outside the
/// window are left out.
pub fn split_events(unit_id: &str, events: &[TripEvent], window: Window) -> EventStream {
    let mut stream = EventStream::empty(unit_id, window);
    for e in events {
        stream.push(e.kind, e.timestamp);
    }
    stream.sort();
    stream
}

/// Survival-time samples (hours) with the pairing that produced them.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GvstCollection {
    samples: Vec<f64>,
    /// `(drop-off index, pick-up index)`, both 1-based within their window.
    matched_indices: Vec<(usize, usize)>,
    /// Samples that were zero and got clamped up to [`MIN_SAMPLE_HOURS`].
    clamped: usize,
}

/// Floor applied to zero-length samples (hours).
pub const MIN_SAMPLE_HOURS: f64 = 1e-9;

impl GvstCollection {
    /// Builds a collection from raw durations in hours.
    ///
    /// Zero durations are clamped to [`MIN_SAMPLE_HOURS`] and counted;
    /// negative or non-finite durations are rejected.
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        let mut clamped = 0;
        let mut out = Vec::with_capacity(samples.len());
        for y in samples {
            if !y.is_finite() {
                return Err(FqmError::InvalidParameter(format!("non-finite sample {y}")));
            }
            if y < 0.0 {
                return Err(FqmError::NegativeDuration(y));
            }
            if y < MIN_SAMPLE_HOURS {
                clamped += 1;
                out.push(MIN_SAMPLE_HOURS);
            } else {
                out.push(y);
            }
        }
        if clamped > 0 {
            log::warn!("{clamped} zero-length survival samples clamped to {MIN_SAMPLE_HOURS} h");
        }
        Ok(Self {
            samples: out,
            matched_indices: Vec::new(),
            clamped,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn matched_indices(&self) -> &[(usize, usize)] {
        &self.matched_indices
    }

    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sum(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub fn extend(&mut self, other: GvstCollection) {
        self.samples.extend(other.samples);
        self.matched_indices.extend(other.matched_indices);
        self.clamped += other.clamped;
    }

    /// Keeps only the first `n` samples.
    pub fn truncate(&mut self, n: usize) {
        self.samples.truncate(n);
        self.matched_indices.truncate(n);
    }
}

/// Applies the swap scheme to one window.
pub fn extract_gvst(stream: &EventStream) -> GvstCollection {
    let drops = &stream.dropoff_times;
    let picks = &stream.pickup_times;
    let mut out = GvstCollection {
        samples: Vec::with_capacity(drops.len().min(picks.len())),
        matched_indices: Vec::with_capacity(drops.len().min(picks.len())),
        clamped: 0,
    };
    // `next` is the 0-based index of the first pick-up not yet consumed.
    let mut next = 0usize;
    for (i, &td) in drops.iter().enumerate() {
        while next < picks.len() && picks[next] <= td {
            next += 1;
        }
        if next == picks.len() {
            break;
        }
        let y = picks[next].hours_since(td);
        out.samples.push(y);
        out.matched_indices.push((i + 1, next + 1));
        next += 1;
    }
    out
}

/// Observation of one unit over one or more windows: survival samples plus
/// the drop-off and pick-up counts needed by the estimators.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitObservation {
    pub gvst: GvstCollection,
    pub n_dropoffs: usize,
    pub n_pickups: usize,
    pub hours: f64,
}

impl UnitObservation {
    pub fn from_stream(stream: &EventStream) -> Self {
        Self {
            gvst: extract_gvst(stream),
            n_dropoffs: stream.n_dropoffs(),
            n_pickups: stream.n_pickups(),
            hours: stream.window.hours(),
        }
    }

    /// Extracts each window separately and concatenates the results.
    pub fn from_streams<'a>(streams: impl IntoIterator<Item = &'a EventStream>) -> Self {
        let mut obs = UnitObservation::default();
        for s in streams {
            obs.absorb(UnitObservation::from_stream(s));
        }
        obs
    }

    pub fn absorb(&mut self, other: UnitObservation) {
        self.gvst.extend(other.gvst);
        self.n_dropoffs += other.n_dropoffs;
        self.n_pickups += other.n_pickups;
        self.hours += other.hours;
    }

    /// Observed drop-off rate per hour.
    pub fn dropoff_rate(&self) -> f64 {
        if self.hours > 0.0 {
            self.n_dropoffs as f64 / self.hours
        } else {
            0.0
        }
    }

    /// Observed pick-up rate per hour.
    pub fn pickup_rate(&self) -> f64 {
        if self.hours > 0.0 {
            self.n_pickups as f64 / self.hours
        } else {
            0.0
        }
    }
}
