//! Export and re-import of solve artifacts, trajectories and plans.
//!
//! Everything data-bearing is CSV, one value per line with full grid
//! coordinates: human-diffable, language-neutral, and affordable at desk
//! scale. A JSON manifest records the scenario digest, grid metadata and
//! per-level timings; it is written before any field file, and downstream
//! commands refuse to combine fields with a scenario whose digest differs.
//! SVG heatmaps are a rendering of already-exported data, never a source.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::lattice::MemoryState;
use crate::scenario::Scenario;
use crate::sim::{ControlSignal, Trajectory};
use crate::solver::{LevelDiagnostics, SolveArtifacts, SpaceTimeGrid, ValueField};
use crate::synthesis::VisitingPlan;

#[derive(Debug)]
pub enum IoError {
    Io { path: String, source: String },
    Malformed { path: String, message: String },
    /// Fields on disk were produced from a different scenario document.
    DigestMismatch { expected: String, found: String },
    /// The field store lacks slices or states needed downstream.
    Incomplete { message: String },
}

impl fmt::Display for IoError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            IoError::Io { path, source } => write!(f, "{path}: {source}"),
            IoError::Malformed { path, message } => write!(f, "{path}: {message}"),
            IoError::DigestMismatch { expected, found } => write!(
                f,
                "scenario digest mismatch: fields were solved for {found}, current document is {expected}"
            ),
            IoError::Incomplete { message } => write!(f, "incomplete field store: {message}"),
        }
    }
}

impl std::error::Error for IoError {}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> IoError + '_ {
    move |e| IoError::Io { path: path.display().to_string(), source: e.to_string() }
}

/// Grid metadata as stored in the manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridMeta {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub nodes_per_dim: Vec<usize>,
    pub steps: usize,
    pub horizon: f64,
}

impl From<&SpaceTimeGrid> for GridMeta {
    fn from(g: &SpaceTimeGrid) -> Self {
        Self {
            lo: g.lo.clone(),
            hi: g.hi.clone(),
            nodes_per_dim: g.nodes_per_dim.clone(),
            steps: g.steps,
            horizon: g.horizon,
        }
    }
}

impl GridMeta {
    pub fn to_grid(&self) -> SpaceTimeGrid {
        SpaceTimeGrid::new(
            self.lo.clone(),
            self.hi.clone(),
            self.nodes_per_dim.clone(),
            self.steps,
            self.horizon,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LevelTiming {
    pub state: String,
    pub millis: f64,
    pub obstacle_active_max: f64,
    pub residual_max: f64,
    pub residual_mean: f64,
}

/// Run description written alongside the field files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub scenario_digest: String,
    pub grid: GridMeta,
    pub threads: Option<usize>,
    /// Time-slice indices exported per field.
    pub slices: Vec<usize>,
    /// Field bit strings in solve order.
    pub fields: Vec<String>,
    /// Wall-clock and diagnostic numbers per lattice level; the only
    /// run-dependent part of the output.
    pub timings: Vec<LevelTiming>,
}

/// Export knobs for [`save_artifacts`].
#[derive(Debug, Clone, Default)]
pub struct ExportOptions {
    /// Specific slice indices; `None` exports every slice (required for
    /// downstream interpolation).
    pub slices: Option<Vec<usize>>,
    /// Also render one SVG heatmap per (state, slice); d = 2 only.
    pub svg: bool,
    pub threads: Option<usize>,
}

pub fn field_file_name(p: &MemoryState, k: usize) -> String {
    format!("W_{p}_k{k}.csv")
}

/// Writes the manifest first, then one CSV per (state, slice).
pub fn save_artifacts(
    art: &SolveArtifacts,
    scenario: &Scenario,
    dir: &Path,
    options: &ExportOptions,
) -> Result<RunManifest, IoError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let grid = art.grid();
    let slices: Vec<usize> = match &options.slices {
        Some(list) => {
            let mut list = list.clone();
            list.sort_unstable();
            list.dedup();
            if let Some(&bad) = list.iter().find(|&&k| k > grid.steps) {
                return Err(IoError::Incomplete {
                    message: format!("slice {bad} beyond the last index {}", grid.steps),
                });
            }
            list
        }
        None => (0..=grid.steps).collect(),
    };

    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario_digest: scenario.digest(),
        grid: GridMeta::from(grid.as_ref()),
        threads: options.threads,
        slices: slices.clone(),
        fields: art.fields().iter().map(|f| f.p.to_string()).collect(),
        timings: art
            .diagnostics
            .iter()
            .map(|d: &LevelDiagnostics| LevelTiming {
                state: d.state.to_string(),
                millis: d.millis,
                obstacle_active_max: d.obstacle_active_max,
                residual_max: d.residual_max,
                residual_mean: d.residual_mean,
            })
            .collect(),
    };
    let manifest_path = dir.join("manifest.json");
    let mut text =
        serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    text.push('\n');
    fs::write(&manifest_path, text).map_err(io_err(&manifest_path))?;

    for field in art.fields() {
        for &k in &slices {
            let path = dir.join(field_file_name(&field.p, k));
            let mut out = String::new();
            write_field_slice(&mut out, grid, field, k);
            fs::write(&path, out).map_err(io_err(&path))?;
            if options.svg && grid.dim() == 2 {
                let svg_path = path.with_extension("svg");
                let svg = render_heatmap(grid, field.slice(k));
                fs::write(&svg_path, svg).map_err(io_err(&svg_path))?;
            }
        }
    }
    Ok(manifest)
}

fn write_field_slice(out: &mut String, grid: &SpaceTimeGrid, field: &ValueField, k: usize) {
    use fmt::Write;
    for axis in 1..=grid.dim() {
        let _ = write!(out, "x_{axis},");
    }
    out.push_str("value\n");
    let slice = field.slice(k);
    for i in 0..grid.n_nodes() {
        let x = grid.node_coord(i);
        for c in &x {
            let _ = write!(out, "{c},");
        }
        let _ = writeln!(out, "{}", slice[i]);
    }
}

/// Reads a field store back, verifying the digest and completeness.
pub fn load_artifacts(scenario: &Scenario, dir: &Path) -> Result<SolveArtifacts, IoError> {
    let manifest_path = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest_path).map_err(io_err(&manifest_path))?;
    let manifest: RunManifest = serde_json::from_str(&text).map_err(|e| IoError::Malformed {
        path: manifest_path.display().to_string(),
        message: e.to_string(),
    })?;

    let expected = scenario.digest();
    if manifest.scenario_digest != expected {
        return Err(IoError::DigestMismatch {
            expected,
            found: manifest.scenario_digest,
        });
    }
    let grid = manifest.grid.to_grid();
    let full: Vec<usize> = (0..=grid.steps).collect();
    if manifest.slices != full {
        return Err(IoError::Incomplete {
            message: "field store lacks some time slices; re-run solve without --slices".into(),
        });
    }
    let n_states = 1usize << scenario.n_targets();
    if manifest.fields.len() != n_states {
        return Err(IoError::Incomplete {
            message: format!(
                "expected {n_states} fields for {} targets, manifest lists {}",
                scenario.n_targets(),
                manifest.fields.len()
            ),
        });
    }

    let grid = Arc::new(grid);
    let n = grid.n_nodes();
    let mut art = SolveArtifacts::new(grid.clone(), scenario.n_targets());
    for state in &manifest.fields {
        let p = MemoryState::parse(state).map_err(|e| IoError::Malformed {
            path: manifest_path.display().to_string(),
            message: e,
        })?;
        let mut values = Vec::with_capacity((grid.steps + 1) * n);
        for k in 0..=grid.steps {
            let path = dir.join(field_file_name(&p, k));
            let text = fs::read_to_string(&path).map_err(io_err(&path))?;
            let mut count = 0usize;
            for (lineno, line) in text.lines().enumerate().skip(1) {
                if line.is_empty() {
                    continue;
                }
                let cell = line.rsplit(',').next().unwrap_or("");
                let value: f64 = cell.parse().map_err(|_| IoError::Malformed {
                    path: path.display().to_string(),
                    message: format!("line {}: bad value '{cell}'", lineno + 1),
                })?;
                if !value.is_finite() {
                    return Err(IoError::Malformed {
                        path: path.display().to_string(),
                        message: format!("line {}: non-finite value", lineno + 1),
                    });
                }
                values.push(value);
                count += 1;
            }
            if count != n {
                return Err(IoError::Malformed {
                    path: path.display().to_string(),
                    message: format!("expected {n} rows, found {count}"),
                });
            }
        }
        art.insert(ValueField::new(p, grid.clone(), values));
    }
    Ok(art)
}

/// Trajectory CSV: one row per sample, events inlined in the `event`
/// column (`kind detail`, several separated by `;`).
pub fn trajectory_csv(traj: &Trajectory, dim: usize) -> String {
    use fmt::Write;
    let mut out = String::from("time,");
    for axis in 1..=dim {
        let _ = write!(out, "x_{axis},");
    }
    out.push_str("memory,event,running_cost_so_far,total_discounted_cost\n");

    // Charges are booked in switch-event order; accumulate them into the
    // per-sample totals.
    let switch_samples: Vec<usize> = traj
        .events
        .iter()
        .filter(|e| e.kind == crate::sim::EventKind::Switch)
        .map(|e| e.sample)
        .collect();
    let mut total_so_far = vec![0.0f64; traj.times.len()];
    let mut acc = 0.0;
    let mut next_charge = 0usize;
    for i in 0..traj.times.len() {
        while next_charge < switch_samples.len() && switch_samples[next_charge] <= i {
            acc += traj.ledger.charges.get(next_charge).map_or(0.0, |(_, c)| *c);
            next_charge += 1;
        }
        total_so_far[i] = traj.running_cost_so_far[i] + acc;
    }

    for i in 0..traj.times.len() {
        let _ = write!(out, "{},", traj.times[i]);
        for c in &traj.states[i] {
            let _ = write!(out, "{c},");
        }
        let events: Vec<String> = traj
            .events
            .iter()
            .filter(|e| e.sample == i)
            .map(|e| {
                if e.detail.is_empty() {
                    e.kind.to_string()
                } else {
                    format!("{} {}", e.kind, e.detail)
                }
            })
            .collect();
        let _ = writeln!(
            out,
            "{},{},{},{}",
            traj.memory[i],
            events.join(";"),
            traj.running_cost_so_far[i],
            total_so_far[i]
        );
    }
    out
}

/// Plan CSV is the trajectory CSV (switch rows are samples carrying switch
/// events) and the summary line is machine-parseable.
pub fn plan_summary_line(plan: &VisitingPlan) -> String {
    let gap = plan.achieved_cost - plan.predicted_cost;
    format!(
        "predicted={} achieved={} gap={}",
        plan.predicted_cost, plan.achieved_cost, gap
    )
}

/// Parses a control CSV (`time,a_1,..,a_m`) into a piecewise-constant
/// signal; rows must be uniformly spaced.
pub fn parse_control_csv(
    text: &str,
    path: &Path,
    dim: usize,
    horizon: f64,
) -> Result<ControlSignal, IoError> {
    let malformed = |message: String| IoError::Malformed {
        path: path.display().to_string(),
        message,
    };
    let mut times = Vec::new();
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != dim + 1 {
            return Err(malformed(format!(
                "line {}: expected {} columns, found {}",
                lineno + 1,
                dim + 1,
                cells.len()
            )));
        }
        let mut row = Vec::with_capacity(dim + 1);
        for cell in &cells {
            row.push(cell.trim().parse::<f64>().map_err(|_| {
                malformed(format!("line {}: bad number '{cell}'", lineno + 1))
            })?);
        }
        times.push(row[0]);
        samples.push(row[1..].to_vec());
    }
    if samples.is_empty() {
        return Err(malformed("no control samples".into()));
    }
    let start = times[0];
    let dt = if times.len() >= 2 {
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(malformed("sample times must increase".into()));
        }
        for (i, w) in times.windows(2).enumerate() {
            if ((w[1] - w[0]) - dt).abs() > 1e-9 {
                return Err(malformed(format!(
                    "sample times must be uniformly spaced (row {})",
                    i + 2
                )));
            }
        }
        dt
    } else {
        let dt = horizon - start;
        if dt <= 0.0 {
            return Err(malformed("single-sample signal needs start < horizon".into()));
        }
        dt
    };
    Ok(ControlSignal::new(start, dt, samples))
}

/// Minimal SVG heatmap of one 2D slice (viridis-like ramp, low=dark).
pub fn render_heatmap(grid: &SpaceTimeGrid, slice: &[f64]) -> String {
    use fmt::Write;
    assert_eq!(grid.dim(), 2, "heatmaps are 2D only");
    let (nx, ny) = (grid.nodes_per_dim[0], grid.nodes_per_dim[1]);
    let cell = 6usize;
    let (w, h) = (nx * cell, ny * cell);
    let lo = slice.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = slice.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for i in 0..nx {
        for j in 0..ny {
            let v = slice[i * ny + j];
            let (r, g, b) = viridis((v - lo) / span);
            // SVG y axis points down; flip so x_2 grows upward.
            let _ = writeln!(
                out,
                r#"<rect x="{}" y="{}" width="{cell}" height="{cell}" fill="rgb({r},{g},{b})"/>"#,
                i * cell,
                (ny - 1 - j) * cell,
            );
        }
    }
    out.push_str("</svg>\n");
    out
}

fn viridis(u: f64) -> (u8, u8, u8) {
    const STOPS: [(f64, f64, f64); 5] = [
        (68.0, 1.0, 84.0),
        (59.0, 82.0, 139.0),
        (33.0, 145.0, 140.0),
        (94.0, 201.0, 98.0),
        (253.0, 231.0, 37.0),
    ];
    let u = u.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (u.floor() as usize).min(STOPS.len() - 2);
    let f = u - i as f64;
    let lerp = |a: f64, b: f64| (a + f * (b - a)).round() as u8;
    (
        lerp(STOPS[i].0, STOPS[i + 1].0),
        lerp(STOPS[i].1, STOPS[i + 1].1),
        lerp(STOPS[i].2, STOPS[i + 1].2),
    )
}

/// Writes `text` to `path`, creating parent directories.
pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    file.write_all(text.as_bytes()).map_err(io_err(path))
}

/// Scenario text from disk.
pub fn read_scenario_file(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(io_err(path))
}

pub fn out_path(dir: &Path, name: &str) -> PathBuf {
    dir.join(name)
}
