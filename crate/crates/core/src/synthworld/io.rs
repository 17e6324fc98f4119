//! Directory layout: `manifest.txt`, `segments.csv`, `adjacency.csv`, `series.csv`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use chrono::NaiveDateTime;

use super::fcd::FcdProcess;
use super::flow::FlowField;
use super::graph::{RoadGraph, Segment};
use super::sensors::MissingnessMask;
use super::world::World;
use super::{INTERVAL_MINUTES, STEPS_PER_DAY};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SEGMENTS_FILE: &str = "segments.csv";
pub const ADJACENCY_FILE: &str = "adjacency.csv";
pub const SERIES_FILE: &str = "series.csv";
const FORMAT: &str = "taanp-world/1";
const EPOCH_FORMAT: &str = "%Y-%m-%dT%H:%M:%S";

const SEGMENT_COLUMNS: [&str; 6] = ["id", "class", "lanes", "length_m", "betweenness", "closeness"];
const ADJACENCY_COLUMNS: [&str; 2] = ["from_id", "to_id"];
const SERIES_COLUMNS: [&str; 7] = [
    "segment_id", "t_index", "flow", "valid_flag", "fcd_flow", "fcd_speed", "fcd_avail",
];

/// Render the four dataset files as strings, in file order.
pub fn render_dataset(world: &World) -> Vec<(&'static str, String)> {
    let g = &world.graph;
    let n_steps = world.n_steps();
    let mut manifest = String::new();
    let _ = writeln!(manifest, "format = {FORMAT}");
    let _ = writeln!(manifest, "epoch = {}", world.epoch.format(EPOCH_FORMAT));
    let _ = writeln!(manifest, "interval_minutes = {INTERVAL_MINUTES}");
    let _ = writeln!(manifest, "steps_per_day = {STEPS_PER_DAY}");
    let _ = writeln!(manifest, "n_segments = {}", g.len());
    let _ = writeln!(manifest, "n_steps = {n_steps}");
    let _ = writeln!(manifest, "noise_sigma = {}", world.flow.noise_sigma());

    let mut segments = SEGMENT_COLUMNS.join(",") + "\n";
    for (i, s) in g.segments().iter().enumerate() {
        let _ = writeln!(
            segments,
            "{},{},{},{},{},{}",
            s.id,
            s.class,
            s.lanes,
            s.length_m,
            g.betweenness()[i],
            g.closeness()[i]
        );
    }

    let mut adjacency = ADJACENCY_COLUMNS.join(",") + "\n";
    for &(a, b) in g.edges() {
        let _ = writeln!(adjacency, "{},{}", g.segment(a).id, g.segment(b).id);
    }

    let mut series = SERIES_COLUMNS.join(",") + "\n";
    for v in 0..g.len() {
        let id = g.segment(v).id;
        for t in 0..n_steps {
            let _ = writeln!(
                series,
                "{id},{t},{},{},{},{},{}",
                world.flow.y(v, t),
                world.missing.is_valid(v, t) as u8,
                world.fcd.flow(v, t),
                world.fcd.speed(v, t),
                world.fcd.available(v, t) as u8
            );
        }
    }
    vec![
        (MANIFEST_FILE, manifest),
        (SEGMENTS_FILE, segments),
        (ADJACENCY_FILE, adjacency),
        (SERIES_FILE, series),
    ]
}

/// Write the dataset files into `dir` (created if needed).
pub fn save_dataset(world: &World, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (name, body) in render_dataset(world) {
        let path = dir.join(name);
        crate::fsutil::write_atomic(&path, body.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Load a dataset directory. Ground-truth flow is unavailable on the result.
pub fn load_dataset(dir: &Path) -> Result<World> {
    let manifest = parse_manifest(&read(dir, MANIFEST_FILE)?)?;
    let entry = |key: &str| {
        manifest
            .get(key)
            .map(|(v, line)| (v.as_str(), *line))
            .ok_or_else(|| parse_err(MANIFEST_FILE, 0, 0, format!("missing key `{key}`")))
    };
    let value = |key: &str| -> Result<f64> {
        let (v, line) = entry(key)?;
        v.parse()
            .map_err(|_| parse_err(MANIFEST_FILE, line, 1, format!("`{key}` is not a number")))
    };
    let (format, line) = entry("format")?;
    if format != FORMAT {
        return Err(parse_err(MANIFEST_FILE, line, 1, format!("unsupported format `{format}`")));
    }
    let (epoch, line) = entry("epoch")?;
    let epoch = NaiveDateTime::parse_from_str(epoch, EPOCH_FORMAT)
        .map_err(|e| parse_err(MANIFEST_FILE, line, 1, format!("bad epoch: {e}")))?;
    if value("interval_minutes")? != INTERVAL_MINUTES as f64 || value("steps_per_day")? != STEPS_PER_DAY as f64 {
        return Err(Error::Integrity(format!(
            "only {INTERVAL_MINUTES}-minute intervals with {STEPS_PER_DAY} steps per day are supported"
        )));
    }
    let n_steps = value("n_steps")? as usize;
    let declared_segments = value("n_segments")? as usize;
    let noise_sigma = value("noise_sigma")?;

    // Segments.
    let mut reader = Table::open(dir, SEGMENTS_FILE, &SEGMENT_COLUMNS)?;
    let (mut segments, mut betweenness, mut closeness) = (Vec::new(), Vec::new(), Vec::new());
    let mut index: HashMap<u32, usize> = HashMap::new();
    while let Some(row) = reader.next_row()? {
        let id: u32 = row.parse(0)?;
        let class = row.parse_with(1, |s| s.parse())?;
        if index.insert(id, segments.len()).is_some() {
            return Err(Error::Integrity(format!("duplicate segment id {id}")));
        }
        segments.push(Segment {
            id,
            class,
            lanes: row.parse(2)?,
            length_m: row.parse(3)?,
        });
        betweenness.push(row.parse(4)?);
        closeness.push(row.parse(5)?);
    }
    if declared_segments != segments.len() {
        return Err(Error::Integrity(format!(
            "manifest declares {declared_segments} segments, segments file has {}",
            segments.len()
        )));
    }
    let lookup = |id: u32, file: &str| {
        index
            .get(&id)
            .copied()
            .ok_or_else(|| Error::Integrity(format!("unknown segment id {id} in {file}")))
    };

    let mut reader = Table::open(dir, ADJACENCY_FILE, &ADJACENCY_COLUMNS)?;
    let mut edges = Vec::new();
    while let Some(row) = reader.next_row()? {
        let a = lookup(row.parse(0)?, ADJACENCY_FILE)?;
        let b = lookup(row.parse(1)?, ADJACENCY_FILE)?;
        edges.push((a, b));
    }
    let graph = RoadGraph::with_scores(segments, edges, betweenness, closeness)?;

    let n = graph.len();
    let cells = n * n_steps;
    let mut y = vec![0.0; cells];
    let mut valid = vec![false; cells];
    let mut fcd_flow = vec![0.0; cells];
    let mut fcd_speed = vec![0.0; cells];
    let mut avail = vec![false; cells];
    let mut seen = vec![false; cells];
    let mut reader = Table::open(dir, SERIES_FILE, &SERIES_COLUMNS)?;
    while let Some(row) = reader.next_row()? {
        let seg = lookup(row.parse(0)?, SERIES_FILE)?;
        let t: usize = row.parse(1)?;
        if t >= n_steps {
            return Err(row.error(1, format!("t_index {t} beyond n_steps {n_steps}")));
        }
        let i = seg * n_steps + t;
        if std::mem::replace(&mut seen[i], true) {
            return Err(row.error(1, format!("duplicate row for segment index {seg}, t {t}")));
        }
        y[i] = row.parse(2)?;
        valid[i] = row.parse_flag(3)?;
        fcd_flow[i] = row.parse(4)?;
        fcd_speed[i] = row.parse(5)?;
        avail[i] = row.parse_flag(6)?;
    }
    if let Some(i) = seen.iter().position(|&s| !s) {
        return Err(Error::Integrity(format!(
            "series file lacks segment {} at t {}",
            graph.segment(i / n_steps).id,
            i % n_steps
        )));
    }

    let flow = FlowField::observed_only(n, n_steps, y, noise_sigma)?;
    let fcd = FcdProcess::from_parts(n_steps, fcd_flow, fcd_speed, avail)?;
    let missing = MissingnessMask::from_flags(n_steps, valid);
    World::new(graph, flow, fcd, missing, epoch)
}

fn read(dir: &Path, name: &str) -> Result<String> {
    let path = dir.join(name);
    fs::read_to_string(&path).map_err(|e| Error::io(path, e))
}

fn parse_err(file: &str, line: usize, column: usize, message: String) -> Error {
    Error::Parse {
        file: file.to_string(),
        line,
        column,
        message,
    }
}

/// `key = value` lines; `#` starts a comment. Values keep their line number.
pub fn parse_manifest(text: &str) -> Result<HashMap<String, (String, usize)>> {
    let mut out = HashMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| parse_err(MANIFEST_FILE, i + 1, 1, "expected `key = value`".into()))?;
        out.insert(k.trim().to_string(), (v.trim().to_string(), i + 1));
    }
    Ok(out)
}

/// CSV reader that maps header names to positions and reports line/column.
struct Table {
    file: &'static str,
    reader: csv::Reader<fs::File>,
    positions: Vec<usize>,
    record: csv::StringRecord,
}

struct Row<'a> {
    table: &'a Table,
    line: usize,
}

impl Table {
    fn open(dir: &Path, file: &'static str, columns: &[&str]) -> Result<Self> {
        let path = dir.join(file);
        let handle = fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(handle);
        let headers = reader
            .headers()
            .map_err(|e| parse_err(file, 1, 1, e.to_string()))?
            .clone();
        let positions = columns
            .iter()
            .map(|c| {
                headers
                    .iter()
                    .position(|h| h == *c)
                    .ok_or_else(|| parse_err(file, 1, 1, format!("missing column `{c}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            file,
            reader,
            positions,
            record: csv::StringRecord::new(),
        })
    }

    fn next_row(&mut self) -> Result<Option<Row<'_>>> {
        let more = self.reader.read_record(&mut self.record).map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            parse_err(self.file, line, 1, e.to_string())
        })?;
        if !more {
            return Ok(None);
        }
        let line = self.record.position().map_or(0, |p| p.line() as usize);
        Ok(Some(Row { table: self, line }))
    }
}

impl Row<'_> {
    fn error(&self, col: usize, message: String) -> Error {
        parse_err(self.table.file, self.line, self.table.positions[col] + 1, message)
    }

    fn parse_with<T>(&self, col: usize, f: impl Fn(&str) -> Result<T, String>) -> Result<T> {
        let pos = self.table.positions[col];
        let name = match self.table.file {
            SEGMENTS_FILE => SEGMENT_COLUMNS[col],
            ADJACENCY_FILE => ADJACENCY_COLUMNS[col],
            _ => SERIES_COLUMNS[col],
        };
        let raw = self
            .table
            .record
            .get(pos)
            .ok_or_else(|| self.error(col, format!("missing value for `{name}`")))?;
        f(raw).map_err(|m| self.error(col, format!("bad `{name}` value `{raw}`: {m}")))
    }

    fn parse<T: std::str::FromStr>(&self, col: usize) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.parse_with(col, |s| s.parse::<T>().map_err(|e| e.to_string()))
    }

    fn parse_flag(&self, col: usize) -> Result<bool> {
        self.parse_with(col, |s| match s {
            "0" => Ok(false),
            "1" => Ok(true),
            _ => Err("expected 0 or 1".into()),
        })
    }
}
