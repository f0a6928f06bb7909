//! Trajectories: Geolife PLT parsing, directory loading and a seeded
//! synthetic generator.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{NaiveDate, NaiveDateTime, NaiveTime};
use geopubsub::geometry::{BoundingBox, Location};
use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Lines before the first data row of a PLT file.
pub const PLT_HEADER_LINES: usize = 6;

/// Days between 1899-12-30 (the PLT day count origin) and 1970-01-01.
const PLT_EPOCH_OFFSET_DAYS: f64 = 25_569.0;

#[derive(Debug, thiserror::Error)]
pub enum TrajectoryError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{source_name}: {found} valid waypoint(s), need at least 2")]
    TooFewWaypoints { source_name: String, found: usize },
    #[error("timestamps decrease at waypoint {0}")]
    TimeGoesBackwards(usize),
    #[error("no .plt files under {0}")]
    NoFiles(PathBuf),
    #[error("invalid trajectory source `{0}`; expected a directory or synthetic:<seed>")]
    InvalidSource(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    /// Seconds on the source's clock (Unix seconds for PLT files).
    pub time: f64,
    pub location: Location,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub id: u32,
    pub waypoints: Vec<Waypoint>,
}

impl Trajectory {
    pub fn new(id: u32, waypoints: Vec<Waypoint>) -> Result<Self, TrajectoryError> {
        if waypoints.len() < 2 {
            return Err(TrajectoryError::TooFewWaypoints { source_name: format!("trajectory {id}"), found: waypoints.len() });
        }
        if let Some(i) = waypoints.windows(2).position(|w| w[1].time < w[0].time) {
            return Err(TrajectoryError::TimeGoesBackwards(i + 1));
        }
        Ok(Trajectory { id, waypoints })
    }

    /// Seconds from the first to the last waypoint.
    pub fn span_secs(&self) -> f64 {
        self.waypoints.last().unwrap().time - self.waypoints[0].time
    }

    /// Seconds from the first waypoint to waypoint `i`.
    pub fn offset_secs(&self, i: usize) -> f64 {
        self.waypoints[i].time - self.waypoints[0].time
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }

    pub fn locations(&self) -> impl Iterator<Item = Location> + '_ {
        self.waypoints.iter().map(|w| w.location)
    }
}

fn row_time(fields: &[&str]) -> Option<f64> {
    let date = NaiveDate::parse_from_str(fields.get(5)?.trim(), "%Y-%m-%d").ok();
    let time = NaiveTime::parse_from_str(fields.get(6)?.trim(), "%H:%M:%S").ok();
    if let (Some(d), Some(t)) = (date, time) {
        return Some(NaiveDateTime::new(d, t).and_utc().timestamp() as f64);
    }
    let days: f64 = fields.get(4)?.trim().parse().ok()?;
    Some((days - PLT_EPOCH_OFFSET_DAYS) * 86_400.0)
}

fn parse_row(line: &str) -> Option<Waypoint> {
    let fields: Vec<&str> = line.split(',').collect();
    if fields.len() < 7 {
        return None;
    }
    let lat: f64 = fields[0].trim().parse().ok()?;
    let lon: f64 = fields[1].trim().parse().ok()?;
    let location = Location::new(lat, lon).ok()?;
    Some(Waypoint { time: row_time(&fields)?, location })
}

/// Parses PLT text: six header lines, then rows
/// `lat,lon,0,altitude,days,date,time`. Invalid rows and rows stepping back
/// in time are skipped with a warning.
pub fn parse_plt_str(text: &str, id: u32, source_name: &str) -> Result<Trajectory, TrajectoryError> {
    let mut waypoints: Vec<Waypoint> = Vec::new();
    for (n, line) in text.lines().enumerate().skip(PLT_HEADER_LINES) {
        if line.trim().is_empty() {
            continue;
        }
        match parse_row(line) {
            Some(w) if waypoints.last().is_some_and(|prev| w.time < prev.time) => {
                warn!("{source_name}:{}: timestamp goes backwards, row skipped", n + 1);
            }
            Some(w) => waypoints.push(w),
            None => warn!("{source_name}:{}: invalid row skipped: {line}", n + 1),
        }
    }
    if waypoints.len() < 2 {
        return Err(TrajectoryError::TooFewWaypoints { source_name: source_name.to_string(), found: waypoints.len() });
    }
    Ok(Trajectory { id, waypoints })
}

pub fn parse_plt(path: &Path, id: u32) -> Result<Trajectory, TrajectoryError> {
    let text = std::fs::read_to_string(path).map_err(|source| TrajectoryError::Io { path: path.to_path_buf(), source })?;
    parse_plt_str(&text, id, &path.display().to_string())
}

/// Loads every `.plt` file under `dir` in sorted path order, assigning ids
/// 0, 1, … to the files that parse. Stops after `limit` trajectories.
pub fn load_directory(dir: &Path, limit: Option<usize>) -> Result<Vec<Trajectory>, TrajectoryError> {
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in walkdir::WalkDir::new(dir) {
        let entry = entry.map_err(|e| TrajectoryError::Io {
            path: e.path().map_or_else(|| dir.to_path_buf(), Path::to_path_buf),
            source: e.into(),
        })?;
        let is_plt = entry.path().extension().is_some_and(|ext| ext.eq_ignore_ascii_case("plt"));
        if entry.file_type().is_file() && is_plt {
            paths.push(entry.into_path());
        }
    }
    if paths.is_empty() {
        return Err(TrajectoryError::NoFiles(dir.to_path_buf()));
    }
    paths.sort();
    let mut out = Vec::new();
    for path in paths {
        if limit.is_some_and(|n| out.len() >= n) {
            break;
        }
        match parse_plt(&path, out.len() as u32) {
            Ok(t) => out.push(t),
            Err(e @ TrajectoryError::TooFewWaypoints { .. }) => warn!("{e}; file skipped"),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Parameters of [`synthetic_trajectories`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub region: BoundingBox,
    pub waypoints: usize,
    pub cadence_secs: f64,
    pub max_speed_deg_per_sec: f64,
    /// Cluster centres; walks start near one and stay close to it.
    pub hotspots: usize,
    /// Walks drift back once farther than this from their hotspot.
    pub hotspot_radius: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            region: beijing_region(),
            waypoints: 600,
            cadence_secs: 1.0,
            max_speed_deg_per_sec: 0.001,
            hotspots: 8,
            hotspot_radius: 0.05,
        }
    }
}

/// A 0.5° × 0.5° box over central Beijing.
pub fn beijing_region() -> BoundingBox {
    BoundingBox::from_corners(39.75, 116.1, 40.25, 116.6).expect("valid box")
}

fn clamp_into(region: &BoundingBox, lat: f64, lon: f64) -> (f64, f64) {
    let (sw, ne) = (region.south_west(), region.north_east());
    (lat.clamp(sw.lat(), ne.lat()), lon.clamp(sw.lon(), ne.lon()))
}

/// Seeded random walks. Trajectory `i` depends only on `seed`, `i` and the
/// config, so asking for more trajectories keeps the first ones unchanged.
pub fn synthetic_trajectories(n: usize, seed: u64, config: &SyntheticConfig) -> Vec<Trajectory> {
    let region = &config.region;
    let (sw, ne) = (region.south_west(), region.north_east());
    let (height, width) = (ne.lat() - sw.lat(), ne.lon() - sw.lon());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hotspots: Vec<(f64, f64)> = (0..config.hotspots.max(1))
        .map(|_| {
            (sw.lat() + height * rng.random_range(0.1..0.9), sw.lon() + width * rng.random_range(0.1..0.9))
        })
        .collect();
    let step_max = config.max_speed_deg_per_sec * config.cadence_secs;

    (0..n)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(id as u64 + 1);
            let home = hotspots[rng.random_range(0..hotspots.len())];
            let spread = config.hotspot_radius * 0.5;
            let (mut lat, mut lon) = clamp_into(
                region,
                home.0 + rng.random_range(-spread..spread),
                home.1 + rng.random_range(-spread..spread),
            );
            let mut heading: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let mut waypoints = Vec::with_capacity(config.waypoints);
            for k in 0..config.waypoints.max(2) {
                waypoints.push(Waypoint {
                    time: k as f64 * config.cadence_secs,
                    location: Location::new(lat, lon).expect("clamped into region"),
                });
                let (dlat, dlon) = (home.0 - lat, home.1 - lon);
                if (dlat * dlat + dlon * dlon).sqrt() > config.hotspot_radius {
                    heading = dlat.atan2(dlon);
                } else {
                    heading += rng.random_range(-0.5..0.5);
                }
                let step = rng.random_range(0.0..=step_max);
                let (next_lat, next_lon) = (lat + step * heading.sin(), lon + step * heading.cos());
                let (clamped_lat, clamped_lon) = clamp_into(region, next_lat, next_lon);
                if (clamped_lat, clamped_lon) != (next_lat, next_lon) {
                    heading += std::f64::consts::PI;
                }
                (lat, lon) = (clamped_lat, clamped_lon);
            }
            Trajectory { id: id as u32, waypoints }
        })
        .collect()
}

/// Where trajectories come from: a PLT directory or the synthetic generator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TrajectorySource {
    Directory(PathBuf),
    Synthetic { seed: u64 },
}

impl TrajectorySource {
    pub fn load(&self, n: usize, synthetic: &SyntheticConfig) -> Result<Vec<Trajectory>, TrajectoryError> {
        match self {
            TrajectorySource::Directory(dir) => load_directory(dir, Some(n)),
            TrajectorySource::Synthetic { seed } => Ok(synthetic_trajectories(n, *seed, synthetic)),
        }
    }
}

impl FromStr for TrajectorySource {
    type Err = TrajectoryError;

    fn from_str(s: &str) -> Result<Self, TrajectoryError> {
        match s.strip_prefix("synthetic:") {
            Some(seed) => seed
                .parse()
                .map(|seed| TrajectorySource::Synthetic { seed })
                .map_err(|_| TrajectoryError::InvalidSource(s.to_string())),
            None if s.is_empty() => Err(TrajectoryError::InvalidSource(s.to_string())),
            None => Ok(TrajectorySource::Directory(PathBuf::from(s))),
        }
    }
}

impl fmt::Display for TrajectorySource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrajectorySource::Directory(dir) => write!(f, "{}", dir.display()),
            TrajectorySource::Synthetic { seed } => write!(f, "synthetic:{seed}"),
        }
    }
}
