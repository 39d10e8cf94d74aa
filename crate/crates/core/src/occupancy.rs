//! Transit-schedule ingestion and the binary bus occupancy tensor.
//!
//! A GTFS subset (`stops.txt`, `trips.txt`, `stop_times.txt`) is reduced to a
//! set of well-separated locations, a uniform time grid, and a sparse
//! `L x T x B` tensor recording which bus (trip) passes near which location
//! in which slot. [`sampling_matrix`] collapses a bus subset to the `L x T`
//! indicator of covered cells.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs::File;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::haversine_m;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stop {
    pub id: String,
    pub lat: f64,
    pub lon: f64,
}

impl Stop {
    pub fn new(id: impl Into<String>, lat: f64, lon: f64) -> Result<Self> {
        if !(-90.0..=90.0).contains(&lat) || !(-180.0..=180.0).contains(&lon) {
            return Err(Error::arg(format!("coordinates out of range: ({lat}, {lon})")));
        }
        Ok(Stop {
            id: id.into(),
            lat,
            lon,
        })
    }

    pub fn distance_m(&self, other: &Stop) -> f64 {
        haversine_m(self.lat, self.lon, other.lat, other.lon)
    }
}

/// One scheduled arrival of a trip at a stop. Seconds are counted from
/// midnight and may exceed 24h for overnight service.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TimedVisit {
    pub trip_id: String,
    pub stop_id: String,
    pub arrival_secs: u32,
}

/// The parsed subset of a GTFS feed. Every trip id is treated as one bus.
#[derive(Clone, Debug, Default)]
pub struct GtfsFeed {
    pub stops: Vec<Stop>,
    pub trips: Vec<String>,
    pub visits: Vec<TimedVisit>,
}

/// Parses `H:MM:SS` / `HH:MM:SS` into seconds after midnight.
pub fn parse_gtfs_time(s: &str) -> Option<u32> {
    let mut parts = s.trim().split(':');
    let h: u32 = parts.next()?.parse().ok()?;
    let m: u32 = parts.next()?.parse().ok()?;
    let sec: u32 = parts.next()?.parse().ok()?;
    if parts.next().is_some() || m >= 60 || sec >= 60 {
        return None;
    }
    Some(h * 3600 + m * 60 + sec)
}

struct Table {
    path: PathBuf,
    reader: csv::Reader<File>,
    columns: HashMap<String, usize>,
}

impl Table {
    fn open(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file);
        let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
        let columns = headers
            .iter()
            .enumerate()
            .map(|(i, h)| (h.trim_start_matches('\u{feff}').to_string(), i))
            .collect();
        Ok(Table {
            path: path.to_path_buf(),
            reader,
            columns,
        })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.columns.get(name).copied().ok_or_else(|| Error::MissingColumn {
            path: self.path.clone(),
            column: name.to_string(),
        })
    }

    fn optional(&self, name: &str) -> Option<usize> {
        self.columns.get(name).copied()
    }

    /// Iterates records with their 1-based line numbers.
    fn rows(&mut self) -> impl Iterator<Item = Result<(u64, csv::StringRecord)>> + '_ {
        let path = self.path.clone();
        self.reader.records().map(move |rec| {
            let rec = rec.map_err(|e| csv_error(&path, e))?;
            let line = rec.position().map(|p| p.line()).unwrap_or(0);
            Ok((line, rec))
        })
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        kind => Error::Row {
            path: path.to_path_buf(),
            line,
            message: format!("{kind:?}"),
        },
    }
}

fn row_err(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Row {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Loads stops, trips and per-trip stop visits. Malformed rows are errors.
pub fn load_gtfs(stops_file: &Path, trips_file: &Path, stop_times_file: &Path) -> Result<GtfsFeed> {
    let mut table = Table::open(stops_file)?;
    let (id_col, lat_col, lon_col) = (
        table.column("stop_id")?,
        table.column("stop_lat")?,
        table.column("stop_lon")?,
    );
    let mut stops = Vec::new();
    let mut seen = HashSet::new();
    for row in table.rows() {
        let (line, rec) = row?;
        let id = rec.get(id_col).unwrap_or_default().to_string();
        let parse = |col: usize, what: &str| -> Result<f64> {
            rec.get(col)
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|_| row_err(stops_file, line, format!("unparseable {what}")))
        };
        let lat = parse(lat_col, "stop_lat")?;
        let lon = parse(lon_col, "stop_lon")?;
        if id.is_empty() {
            return Err(row_err(stops_file, line, "empty stop_id"));
        }
        let stop = Stop::new(id, lat, lon).map_err(|e| row_err(stops_file, line, e.to_string()))?;
        if !seen.insert(stop.id.clone()) {
            return Err(row_err(stops_file, line, format!("duplicate stop_id `{}`", stop.id)));
        }
        stops.push(stop);
    }

    let mut table = Table::open(trips_file)?;
    let trip_col = table.column("trip_id")?;
    let mut trips = Vec::new();
    let mut seen = HashSet::new();
    for row in table.rows() {
        let (line, rec) = row?;
        let id = rec.get(trip_col).unwrap_or_default().to_string();
        if id.is_empty() {
            return Err(row_err(trips_file, line, "empty trip_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(row_err(trips_file, line, format!("duplicate trip_id `{id}`")));
        }
        trips.push(id);
    }

    let mut table = Table::open(stop_times_file)?;
    let trip_col = table.column("trip_id")?;
    let stop_col = table.column("stop_id")?;
    let arr_col = table.column("arrival_time")?;
    let dep_col = table.optional("departure_time");
    let mut visits = Vec::new();
    for row in table.rows() {
        let (line, rec) = row?;
        let mut raw = rec.get(arr_col).unwrap_or_default();
        if raw.is_empty() {
            raw = dep_col.and_then(|c| rec.get(c)).unwrap_or_default();
        }
        let arrival_secs =
            parse_gtfs_time(raw).ok_or_else(|| row_err(stop_times_file, line, format!("unparseable time `{raw}`")))?;
        visits.push(TimedVisit {
            trip_id: rec.get(trip_col).unwrap_or_default().to_string(),
            stop_id: rec.get(stop_col).unwrap_or_default().to_string(),
            arrival_secs,
        });
    }

    Ok(GtfsFeed { stops, trips, visits })
}

/// Loads `stops.txt`, `trips.txt` and `stop_times.txt` from one directory.
pub fn load_gtfs_dir(dir: &Path) -> Result<GtfsFeed> {
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "GTFS directory not found"),
        ));
    }
    load_gtfs(
        &dir.join("stops.txt"),
        &dir.join("trips.txt"),
        &dir.join("stop_times.txt"),
    )
}

/// Selected locations; position in `stops` is the canonical location index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LocationSet {
    pub stops: Vec<Stop>,
    pub min_separation_m: f64,
}

impl LocationSet {
    pub fn len(&self) -> usize {
        self.stops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stops.is_empty()
    }

    /// Writes `index,stop_id,lat,lon` lines under a header.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,stop_id,lat,lon\n");
        for (i, s) in self.stops.iter().enumerate() {
            let _ = writeln!(out, "{i},{},{},{}", s.id, s.lat, s.lon);
        }
        out
    }

    pub fn from_csv(text: &str, min_separation_m: f64) -> Result<Self> {
        let mut stops = Vec::new();
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(Error::Format(format!("locations line {}: expected 4 fields", n + 1)));
            }
            let lat = f[2]
                .parse()
                .map_err(|_| Error::Format(format!("bad lat on line {}", n + 1)))?;
            let lon = f[3]
                .parse()
                .map_err(|_| Error::Format(format!("bad lon on line {}", n + 1)))?;
            stops.push(Stop::new(f[1], lat, lon)?);
        }
        Ok(LocationSet {
            stops,
            min_separation_m,
        })
    }
}

/// Greedy in-order thinning: a stop is kept iff it lies at least `d` meters
/// from every stop kept before it.
pub fn subsample_stops(stops: &[Stop], d: f64) -> Result<LocationSet> {
    if !(d > 0.0) {
        return Err(Error::arg(format!("separation must be positive, got {d}")));
    }
    if stops.is_empty() {
        return Err(Error::arg("no stops to subsample"));
    }
    let mut kept: Vec<Stop> = Vec::new();
    for stop in stops {
        if kept.iter().all(|k| k.distance_m(stop) >= d) {
            kept.push(stop.clone());
        }
    }
    Ok(LocationSet {
        stops: kept,
        min_separation_m: d,
    })
}

/// Returns the stops in a seeded random order, for subsampling sensitivity runs.
pub fn shuffle_stops(stops: &[Stop], seed: u64) -> Vec<Stop> {
    let mut out = stops.to_vec();
    out.shuffle(&mut crate::rng::seeded(seed, crate::rng::stream::STOP_SHUFFLE));
    out
}

/// Uniform slots `[start + i*slot, start + (i+1)*slot)` for `i < slots`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub start_secs: u32,
    pub end_secs: u32,
    pub slot_secs: u32,
    pub slots: usize,
}

impl TimeGrid {
    pub fn new(start_secs: u32, end_secs: u32, slot_minutes: u32) -> Result<Self> {
        if slot_minutes == 0 {
            return Err(Error::arg("slot length must be positive"));
        }
        let slot_secs = slot_minutes * 60;
        let slots = end_secs.saturating_sub(start_secs) / slot_secs;
        if slots == 0 {
            return Err(Error::arg("time grid has no complete slot"));
        }
        Ok(TimeGrid {
            start_secs,
            end_secs,
            slot_secs,
            slots: slots as usize,
        })
    }

    /// 06:00 to 22:00 in ten-minute slots (96 slots).
    pub fn daytime() -> Self {
        TimeGrid::new(6 * 3600, 22 * 3600, 10).expect("valid grid")
    }

    pub fn slot_of(&self, secs: u32) -> Option<usize> {
        if secs < self.start_secs {
            return None;
        }
        let slot = ((secs - self.start_secs) / self.slot_secs) as usize;
        (slot < self.slots).then_some(slot)
    }
}

/// Sparse binary `L x T x B` tensor. Entries are kept sorted by `(l, t, b)`
/// and a per-bus index sorted by `(t, l)` backs the gain computations.
#[derive(Clone, Debug, PartialEq)]
pub struct OccupancyTensor {
    locations: usize,
    slots: usize,
    buses: usize,
    entries: Vec<(usize, usize, usize)>,
    by_bus: Vec<Vec<(usize, usize)>>,
}

impl OccupancyTensor {
    /// Builds a tensor from `(l, t, b)` triples; duplicates collapse to one.
    pub fn new(locations: usize, slots: usize, buses: usize, mut entries: Vec<(usize, usize, usize)>) -> Result<Self> {
        if buses == 0 || locations == 0 || slots == 0 {
            return Err(Error::arg("tensor dimensions must be positive"));
        }
        if let Some(&(l, t, b)) = entries
            .iter()
            .find(|&&(l, t, b)| l >= locations || t >= slots || b >= buses)
        {
            return Err(Error::arg(format!(
                "entry ({l},{t},{b}) outside {locations}x{slots}x{buses}"
            )));
        }
        entries.sort_unstable();
        entries.dedup();
        let mut by_bus = vec![Vec::new(); buses];
        for &(l, t, b) in &entries {
            by_bus[b].push((t, l));
        }
        for cells in &mut by_bus {
            cells.sort_unstable();
        }
        Ok(OccupancyTensor {
            locations,
            slots,
            buses,
            entries,
            by_bus,
        })
    }

    pub fn n_locations(&self) -> usize {
        self.locations
    }

    pub fn n_slots(&self) -> usize {
        self.slots
    }

    pub fn n_buses(&self) -> usize {
        self.buses
    }

    pub fn entries(&self) -> &[(usize, usize, usize)] {
        &self.entries
    }

    /// Cells `(t, l)` covered by bus `b`, sorted by time then location.
    pub fn bus_cells(&self, b: usize) -> &[(usize, usize)] {
        &self.by_bus[b]
    }

    /// Fraction of the `L x T` grid covered by the full fleet.
    pub fn density(&self) -> f64 {
        let all: Vec<usize> = (0..self.buses).collect();
        let theta = sampling_matrix(self, &all).expect("full fleet is in range");
        theta.count_ones() as f64 / (self.locations * self.slots) as f64
    }

    /// Serializes as a `L,T,B` header line followed by sorted `l,t,b` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(16 * (self.entries.len() + 1));
        let _ = writeln!(out, "{},{},{}", self.locations, self.slots, self.buses);
        for &(l, t, b) in &self.entries {
            let _ = writeln!(out, "{l},{t},{b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or_else(|| Error::Format("empty tensor file".into()))?;
        let dims = parse_triple(header).ok_or_else(|| Error::Format("bad tensor header".into()))?;
        let mut entries = Vec::new();
        for (n, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let e =
                parse_triple(line).ok_or_else(|| Error::Format(format!("tensor line {}: expected l,t,b", n + 1)))?;
            entries.push(e);
        }
        let count = entries.len();
        let tensor = OccupancyTensor::new(dims.0, dims.1, dims.2, entries)?;
        if tensor.entries.len() != count {
            return Err(Error::Format("duplicate tensor entries".into()));
        }
        Ok(tensor)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

fn parse_triple(line: &str) -> Option<(usize, usize, usize)> {
    let mut it = line.trim().split(',').map(|f| f.trim().parse::<usize>());
    let out = (it.next()?.ok()?, it.next()?.ok()?, it.next()?.ok()?);
    it.next().is_none().then_some(out)
}

/// Marks `(l, t, b)` whenever bus `b` visits, during slot `t`, a stop within
/// `radius_m` (inclusive) of location `l`. Visits outside the grid or at
/// 24:00 or later are dropped.
pub fn build_occupancy(
    feed: &GtfsFeed,
    locations: &LocationSet,
    grid: &TimeGrid,
    radius_m: f64,
) -> Result<OccupancyTensor> {
    if !(radius_m > 0.0) {
        return Err(Error::arg(format!("radius must be positive, got {radius_m}")));
    }
    if locations.is_empty() {
        return Err(Error::arg("empty location set"));
    }
    let stop_index: HashMap<&str, usize> = feed.stops.iter().enumerate().map(|(i, s)| (s.id.as_str(), i)).collect();
    let bus_index: HashMap<&str, usize> = feed.trips.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();

    let mut near: HashMap<usize, Vec<usize>> = HashMap::new();
    let mut entries = Vec::new();
    for visit in &feed.visits {
        let &stop = stop_index
            .get(visit.stop_id.as_str())
            .ok_or_else(|| Error::Data(format!("visit references unknown stop `{}`", visit.stop_id)))?;
        let &bus = bus_index
            .get(visit.trip_id.as_str())
            .ok_or_else(|| Error::Data(format!("visit references unknown trip `{}`", visit.trip_id)))?;
        if visit.arrival_secs >= 24 * 3600 {
            continue;
        }
        let Some(slot) = grid.slot_of(visit.arrival_secs) else {
            continue;
        };
        let locs = near.entry(stop).or_insert_with(|| {
            let s = &feed.stops[stop];
            locations
                .stops
                .iter()
                .enumerate()
                .filter(|(_, loc)| loc.distance_m(s) <= radius_m)
                .map(|(l, _)| l)
                .collect()
        });
        entries.extend(locs.iter().map(|&l| (l, slot, bus)));
    }
    OccupancyTensor::new(locations.len(), grid.slots, feed.trips.len().max(1), entries)
}

/// Binary `L x T` coverage indicator, row-major by location.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SamplingMatrix {
    locations: usize,
    slots: usize,
    bits: Vec<bool>,
}

impl SamplingMatrix {
    pub fn zeros(locations: usize, slots: usize) -> Self {
        SamplingMatrix {
            locations,
            slots,
            bits: vec![false; locations * slots],
        }
    }

    pub fn n_locations(&self) -> usize {
        self.locations
    }

    pub fn n_slots(&self) -> usize {
        self.slots
    }

    pub fn get(&self, l: usize, t: usize) -> bool {
        self.bits[l * self.slots + t]
    }

    pub fn set(&mut self, l: usize, t: usize) {
        self.bits[l * self.slots + t] = true;
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    /// Number of sampled slots in row `l`.
    pub fn row_count(&self, l: usize) -> usize {
        self.bits[l * self.slots..(l + 1) * self.slots]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Locations sampled at slot `t` (the set theta_t).
    pub fn column(&self, t: usize) -> Vec<usize> {
        (0..self.locations).filter(|&l| self.get(l, t)).collect()
    }

    /// Observed `(l, t)` cells in row-major order.
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| (i / self.slots, i % self.slots))
    }

    pub fn or(&self, other: &SamplingMatrix) -> Result<SamplingMatrix> {
        if self.locations != other.locations || self.slots != other.slots {
            return Err(Error::arg("sampling matrix shapes differ"));
        }
        Ok(SamplingMatrix {
            locations: self.locations,
            slots: self.slots,
            bits: self.bits.iter().zip(&other.bits).map(|(a, b)| *a || *b).collect(),
        })
    }

    /// Entrywise `self <= other`.
    pub fn is_subset_of(&self, other: &SamplingMatrix) -> bool {
        self.bits.len() == other.bits.len() && self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// Logical OR of the selected buses' slices of the tensor.
pub fn sampling_matrix(tensor: &OccupancyTensor, subset: &[usize]) -> Result<SamplingMatrix> {
    let mut theta = SamplingMatrix::zeros(tensor.locations, tensor.slots);
    for &b in subset {
        if b >= tensor.buses {
            return Err(Error::arg(format!("bus {b} out of range (B = {})", tensor.buses)));
        }
        for &(t, l) in tensor.bus_cells(b) {
            theta.set(l, t);
        }
    }
    Ok(theta)
}
