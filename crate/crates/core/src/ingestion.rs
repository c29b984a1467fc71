//! Trip and event files, spatial units, and unit selection.
//!
//! A trip contributes a pick-up at its start location and a drop-off at its
//! end location. Dock-based data identifies locations by station id;
//! dockless data carries coordinates, which are binned into square grid
//! cells.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDateTime};
use serde::{Deserialize, Serialize};

use crate::error::{FqmError, Result};
use crate::gvst::{EventKind, EventStream, Timestamp, TripEvent, UnitObservation, Window, NANOS_PER_SECOND};

pub const DEFAULT_CELL_SIZE_M: f64 = 800.0;
pub const DEFAULT_MIN_PICKUP_RATIO: f64 = 0.8;
const EARTH_RADIUS_M: f64 = 6_371_008.8;

/// Formats as ISO-8601 UTC with nanoseconds, e.g. `2024-01-01T00:00:00.000000000Z`.
pub fn format_timestamp(t: Timestamp) -> String {
    let secs = t.0.div_euclid(NANOS_PER_SECOND);
    let nanos = t.0.rem_euclid(NANOS_PER_SECOND) as u32;
    match DateTime::from_timestamp(secs, nanos) {
        Some(dt) => dt.format("%Y-%m-%dT%H:%M:%S%.9fZ").to_string(),
        None => format!("{}", t.0 as f64 / NANOS_PER_SECOND as f64),
    }
}

/// Parses an ISO-8601 date-time or a number of seconds since the Unix
/// epoch. Date-times without an explicit offset are read as local time at
/// `utc_offset_seconds` east of UTC.
pub fn parse_timestamp(text: &str, utc_offset_seconds: i32) -> Result<Timestamp> {
    let s = text.trim();
    if s.is_empty() {
        return Err(FqmError::InvalidParameter("empty timestamp".into()));
    }
    if let Some(t) = parse_epoch_seconds(s) {
        return Ok(t);
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return nanos_of(dt.timestamp(), dt.timestamp_subsec_nanos(), s);
    }
    for fmt in [
        "%Y-%m-%dT%H:%M:%S%.f",
        "%Y-%m-%d %H:%M:%S%.f",
        "%Y-%m-%dT%H:%M",
        "%Y-%m-%d %H:%M",
    ] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(s, fmt) {
            let utc = naive.and_utc();
            return nanos_of(
                utc.timestamp() - utc_offset_seconds as i64,
                utc.timestamp_subsec_nanos(),
                s,
            );
        }
    }
    Err(FqmError::InvalidParameter(format!("unrecognised timestamp '{s}'")))
}

fn parse_epoch_seconds(s: &str) -> Option<Timestamp> {
    if !s
        .bytes()
        .all(|b| b.is_ascii_digit() || b == b'.' || b == b'-' || b == b'+')
    {
        return None;
    }
    let (int_part, frac_part) = s.split_once('.').unwrap_or((s, ""));
    let secs: i64 = int_part.parse().ok()?;
    if frac_part.len() > 9 || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    let mut nanos: i64 = if frac_part.is_empty() {
        0
    } else {
        frac_part.parse().ok()?
    };
    for _ in frac_part.len()..9 {
        nanos *= 10;
    }
    if secs < 0 || int_part.starts_with('-') {
        nanos = -nanos;
    }
    secs.checked_mul(NANOS_PER_SECOND)?.checked_add(nanos).map(Timestamp)
}

fn nanos_of(secs: i64, nanos: u32, raw: &str) -> Result<Timestamp> {
    secs.checked_mul(NANOS_PER_SECOND)
        .and_then(|v| v.checked_add(nanos as i64))
        .map(Timestamp)
        .ok_or_else(|| FqmError::InvalidParameter(format!("timestamp out of range '{raw}'")))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TripSchema {
    /// `vehicle_id,start_time,end_time,start_station,end_station`
    Station,
    /// `vehicle_id,start_time,end_time,start_lat,start_lon,end_lat,end_lon`
    Dockless,
}

impl TripSchema {
    pub fn columns(self) -> &'static [&'static str] {
        match self {
            TripSchema::Station => &["vehicle_id", "start_time", "end_time", "start_station", "end_station"],
            TripSchema::Dockless => &[
                "vehicle_id",
                "start_time",
                "end_time",
                "start_lat",
                "start_lon",
                "end_lat",
                "end_lon",
            ],
        }
    }
}

impl std::str::FromStr for TripSchema {
    type Err = FqmError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "station" | "dock" | "docked" => Ok(TripSchema::Station),
            "dockless" | "grid" | "latlon" => Ok(TripSchema::Dockless),
            other => Err(FqmError::InvalidConfig(format!("unknown trip schema '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Station(String),
    Point { lat: f64, lon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRow {
    pub vehicle_id: String,
    pub start_time: Timestamp,
    pub end_time: Timestamp,
    pub start: Location,
    pub end: Location,
}

/// Rows read versus rows dropped, with the first few reasons.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParseReport {
    pub rows: usize,
    pub skipped: usize,
    /// `(line, reason)` for up to [`ParseReport::MAX_REASONS`] skipped rows.
    pub reasons: Vec<(u64, String)>,
}

impl ParseReport {
    pub const MAX_REASONS: usize = 50;

    fn skip(&mut self, line: u64, reason: String) {
        self.skipped += 1;
        if self.reasons.len() < Self::MAX_REASONS {
            self.reasons.push((line, reason));
        }
    }
}

fn column_indices(headers: &csv::StringRecord, wanted: &[&str]) -> Result<Vec<usize>> {
    wanted
        .iter()
        .map(|name| {
            headers
                .iter()
                .position(|h| h.trim().eq_ignore_ascii_case(name))
                .ok_or_else(|| FqmError::MissingColumn((*name).to_string()))
        })
        .collect()
}

fn parse_coord(s: &str, what: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("bad {what} '{s}'"))?;
    if !v.is_finite() {
        return Err(format!("bad {what} '{s}'"));
    }
    Ok(v)
}

/// Reads trips in the given schema. Rows that cannot be parsed, or end
/// before they start, are skipped and reported.
pub fn parse_trips<R: Read>(
    reader: R,
    schema: TripSchema,
    utc_offset_seconds: i32,
) -> Result<(Vec<TripRow>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let idx = column_indices(rdr.headers()?, schema.columns())?;
    let mut trips = Vec::new();
    let mut report = ParseReport::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.skip(line, e.to_string());
                continue;
            }
        };
        report.rows += 1;
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let parsed = (|| -> std::result::Result<TripRow, String> {
            let vehicle_id = field(0).to_string();
            if vehicle_id.is_empty() {
                return Err("empty vehicle id".into());
            }
            let start_time = parse_timestamp(field(1), utc_offset_seconds).map_err(|e| e.to_string())?;
            let end_time = parse_timestamp(field(2), utc_offset_seconds).map_err(|e| e.to_string())?;
            if end_time < start_time {
                return Err("end_time before start_time".into());
            }
            let (start, end) = match schema {
                TripSchema::Station => {
                    let (a, b) = (field(3), field(4));
                    if a.is_empty() || b.is_empty() {
                        return Err("empty station id".into());
                    }
                    (Location::Station(a.to_string()), Location::Station(b.to_string()))
                }
                TripSchema::Dockless => (
                    Location::Point {
                        lat: parse_coord(field(3), "start_lat")?,
                        lon: parse_coord(field(4), "start_lon")?,
                    },
                    Location::Point {
                        lat: parse_coord(field(5), "end_lat")?,
                        lon: parse_coord(field(6), "end_lon")?,
                    },
                ),
            };
            Ok(TripRow {
                vehicle_id,
                start_time,
                end_time,
                start,
                end,
            })
        })();
        match parsed {
            Ok(t) => trips.push(t),
            Err(reason) => {
                report.rows -= 1;
                report.skip(line, reason);
            }
        }
    }
    Ok((trips, report))
}

pub fn parse_trips_path(
    path: &Path,
    schema: TripSchema,
    utc_offset_seconds: i32,
) -> Result<(Vec<TripRow>, ParseReport)> {
    parse_trips(File::open(path)?, schema, utc_offset_seconds)
}

pub const EVENT_COLUMNS: [&str; 3] = ["vehicle_id", "timestamp", "event"];

/// Writes `vehicle_id,timestamp,event` rows.
pub fn write_events<W: Write>(events: &[TripEvent], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(EVENT_COLUMNS)?;
    for e in events {
        w.write_record([e.vehicle_id.as_str(), &format_timestamp(e.timestamp), e.kind.as_str()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_events_path(events: &[TripEvent], path: &Path) -> Result<()> {
    write_events(events, File::create(path)?)
}

/// Reads `vehicle_id,timestamp,event` rows; unparsable rows are skipped.
pub fn read_events<R: Read>(reader: R, utc_offset_seconds: i32) -> Result<(Vec<TripEvent>, ParseReport)> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let idx = column_indices(rdr.headers()?, &EVENT_COLUMNS)?;
    let mut events = Vec::new();
    let mut report = ParseReport::default();
    for (i, rec) in rdr.records().enumerate() {
        let line = i as u64 + 2;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                report.skip(line, e.to_string());
                continue;
            }
        };
        let field = |k: usize| rec.get(idx[k]).unwrap_or("");
        let parsed =
            parse_timestamp(field(1), utc_offset_seconds).and_then(|t| field(2).parse::<EventKind>().map(|k| (t, k)));
        match parsed {
            Ok((t, kind)) if !field(0).is_empty() => {
                report.rows += 1;
                events.push(TripEvent::new(field(0), t, kind));
            }
            Ok(_) => report.skip(line, "empty vehicle id".into()),
            Err(e) => report.skip(line, e.to_string()),
        }
    }
    Ok((events, report))
}

pub fn read_events_path(path: &Path, utc_offset_seconds: i32) -> Result<(Vec<TripEvent>, ParseReport)> {
    read_events(File::open(path)?, utc_offset_seconds)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min_lat: f64,
    pub min_lon: f64,
    pub max_lat: f64,
    pub max_lon: f64,
}

impl BoundingBox {
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        (self.min_lat..=self.max_lat).contains(&lat) && (self.min_lon..=self.max_lon).contains(&lon)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct GridCell {
    pub row: i64,
    pub col: i64,
}

impl GridCell {
    pub fn unit_id(&self) -> String {
        format!("cell_{}_{}", self.row, self.col)
    }
}

/// Square cells on a local equirectangular projection centred on the
/// bounding box. Cells are half-open: a point on a shared edge belongs to
/// the cell with the larger index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// South-west corner; cell `(0, 0)` starts here.
    pub origin: (f64, f64),
    pub cell_size_m: f64,
    pub bounds: BoundingBox,
}

impl GridSpec {
    pub fn new(bounds: BoundingBox, cell_size_m: f64) -> Result<Self> {
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(FqmError::InvalidConfig(format!(
                "cell size must be positive, got {cell_size_m}"
            )));
        }
        let ok = [bounds.min_lat, bounds.max_lat, bounds.min_lon, bounds.max_lon]
            .iter()
            .all(|v| v.is_finite());
        if !ok || bounds.min_lat >= bounds.max_lat || bounds.min_lon >= bounds.max_lon {
            return Err(FqmError::InvalidConfig("bounding box must have min < max".into()));
        }
        if bounds.min_lat < -90.0 || bounds.max_lat > 90.0 {
            return Err(FqmError::InvalidConfig("latitude outside [-90, 90]".into()));
        }
        Ok(Self {
            origin: (bounds.min_lat, bounds.min_lon),
            cell_size_m,
            bounds,
        })
    }

    fn centre_lat(&self) -> f64 {
        0.5 * (self.bounds.min_lat + self.bounds.max_lat)
    }

    /// Metres east and north of the origin.
    pub fn project(&self, lat: f64, lon: f64) -> (f64, f64) {
        let k = EARTH_RADIUS_M * std::f64::consts::PI / 180.0;
        let x = k * (lon - self.origin.1) * self.centre_lat().to_radians().cos();
        let y = k * (lat - self.origin.0);
        (x, y)
    }

    /// `None` for points outside the bounding box.
    pub fn cell_of(&self, lat: f64, lon: f64) -> Option<GridCell> {
        if !self.bounds.contains(lat, lon) {
            return None;
        }
        let (x, y) = self.project(lat, lon);
        Some(GridCell {
            row: (y / self.cell_size_m).floor() as i64,
            col: (x / self.cell_size_m).floor() as i64,
        })
    }
}

/// One unit observed over one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitWindow {
    pub unit_id: String,
    pub window: Window,
    pub capacity_k: usize,
}

impl UnitWindow {
    pub fn new(unit_id: impl Into<String>, window: Window, capacity_k: usize) -> Result<Self> {
        if capacity_k < 1 {
            return Err(FqmError::InvalidConfig("capacity must be at least 1".into()));
        }
        Ok(Self {
            unit_id: unit_id.into(),
            window,
            capacity_k,
        })
    }
}

/// Streams built from trips, one per requested unit window, in request order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StreamBuild {
    pub streams: Vec<EventStream>,
    /// Trip endpoints whose location matched none of the requested units.
    pub unmatched_endpoints: usize,
    /// Dockless endpoints outside the grid's bounding box.
    pub out_of_bounds: usize,
}

fn location_key(loc: &Location, grid: Option<&GridSpec>) -> std::result::Result<String, bool> {
    match (loc, grid) {
        (Location::Station(id), _) => Ok(id.clone()),
        (Location::Point { lat, lon }, Some(g)) => g.cell_of(*lat, *lon).map(|c| c.unit_id()).ok_or(true),
        (Location::Point { .. }, None) => Err(false),
    }
}

/// Builds pick-up and drop-off streams for each unit window. Dockless trips
/// need `grid`; their unit ids are [`GridCell::unit_id`] strings.
pub fn to_event_streams(trips: &[TripRow], units: &[UnitWindow], grid: Option<&GridSpec>) -> Result<StreamBuild> {
    if grid.is_none() && trips.iter().any(|t| matches!(t.start, Location::Point { .. })) {
        return Err(FqmError::InvalidConfig("dockless trips need a grid".into()));
    }
    let mut by_unit: HashMap<&str, Vec<usize>> = HashMap::new();
    for (i, u) in units.iter().enumerate() {
        by_unit.entry(u.unit_id.as_str()).or_default().push(i);
    }
    let mut build = StreamBuild {
        streams: units
            .iter()
            .map(|u| EventStream::empty(u.unit_id.clone(), u.window))
            .collect(),
        ..Default::default()
    };
    for trip in trips {
        for (loc, t, kind) in [
            (&trip.start, trip.start_time, EventKind::Pickup),
            (&trip.end, trip.end_time, EventKind::Dropoff),
        ] {
            match location_key(loc, grid) {
                Ok(key) => match by_unit.get(key.as_str()) {
                    Some(slots) => {
                        for &s in slots {
                            build.streams[s].push(kind, t);
                        }
                    }
                    None => build.unmatched_endpoints += 1,
                },
                Err(true) => build.out_of_bounds += 1,
                Err(false) => build.unmatched_endpoints += 1,
            }
        }
    }
    build.streams.iter_mut().for_each(EventStream::sort);
    Ok(build)
}

/// Per-unit capacity inferred from history: the largest number of vehicles
/// simultaneously idle at the unit, reconstructed from drop-off and pick-up
/// deltas and shifted so the running level never goes negative. At least 1.
pub fn infer_capacities(trips: &[TripRow], grid: Option<&GridSpec>) -> BTreeMap<String, usize> {
    let mut deltas: HashMap<String, Vec<(Timestamp, i64)>> = HashMap::new();
    for trip in trips {
        if let Ok(k) = location_key(&trip.start, grid) {
            deltas.entry(k).or_default().push((trip.start_time, -1));
        }
        if let Ok(k) = location_key(&trip.end, grid) {
            deltas.entry(k).or_default().push((trip.end_time, 1));
        }
    }
    deltas
        .into_iter()
        .map(|(unit, mut d)| {
            // at equal times, pick-ups first
            d.sort();
            let (mut level, mut lo, mut hi) = (0i64, 0i64, 0i64);
            for (_, v) in d {
                level += v;
                lo = lo.min(level);
                hi = hi.max(level);
            }
            (unit, ((hi - lo).max(1)) as usize)
        })
        .collect()
}

/// Concatenates per-window observations of the same unit. Each window is
/// extracted on its own, so the sample count is the sum over windows.
pub fn aggregate_windows(streams: &[EventStream]) -> BTreeMap<String, UnitObservation> {
    let mut out: BTreeMap<String, UnitObservation> = BTreeMap::new();
    for s in streams {
        out.entry(s.unit_id.clone())
            .or_default()
            .absorb(UnitObservation::from_stream(s));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedUnit {
    pub unit_id: String,
    pub n_dropoffs: usize,
    pub n_pickups: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UnitFilter {
    pub retained: BTreeMap<String, UnitObservation>,
    pub excluded: Vec<ExcludedUnit>,
}

/// Keeps units with at least one drop-off and `N_p / N_d ≥ min_ratio`.
pub fn filter_units(units: BTreeMap<String, UnitObservation>, min_ratio: f64) -> UnitFilter {
    let mut out = UnitFilter::default();
    for (id, obs) in units {
        let reason = if obs.n_dropoffs == 0 {
            Some("no drop-offs".to_string())
        } else if (obs.n_pickups as f64) < min_ratio * obs.n_dropoffs as f64 * (1.0 - 1e-12) {
            Some(format!(
                "pick-up/drop-off ratio {:.3} below {min_ratio}",
                obs.n_pickups as f64 / obs.n_dropoffs as f64
            ))
        } else {
            None
        };
        match reason {
            Some(reason) => out.excluded.push(ExcludedUnit {
                unit_id: id,
                n_dropoffs: obs.n_dropoffs,
                n_pickups: obs.n_pickups,
                reason,
            }),
            None => {
                out.retained.insert(id, obs);
            }
        }
    }
    out
}
