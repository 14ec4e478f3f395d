//! Executes one configured run: builds the model, runs the requested mode,
//! writes artifacts atomically, and records a manifest. Given the same
//! config and seed, every artifact except the manifest is byte-identical
//! across runs and thread counts.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use magnetorbit_core::angular::{
    direction_grid, extract_zones, scan_direction, DiagramCell, DirectionGrid, ScanBudget,
};
use magnetorbit_core::classifier::{classify_trajectory, Kind};
use magnetorbit_core::contour::{contour_lines, Window};
use magnetorbit_core::dispersion::Dispersion;
use magnetorbit_core::exponents::{
    estimate_exponents, plane_component_census, principal_growth_directions,
    record_displacements, CensusVerdict, DisplacementRecord, FrameSpec,
};
use magnetorbit_core::lattice::reciprocal_from_direct;
use magnetorbit_core::quasi::{
    integral_plane_numbers, strip_and_direction_test, trace_level_line, LineStop, QuasiError,
};
use magnetorbit_core::singular::{find_singular_points, SingularKind};
use magnetorbit_core::tracer::{StopReason, Tracer};
use magnetorbit_core::transport::{
    asymptotic_slope, conductivity_curve, BreakdownModel, CarrierFilter, SliceSampling,
    TransportParams,
};
use magnetorbit_core::{
    DirectLattice, FieldSetup, FourierDispersion, Harmonic, PlaneSlice, ReciprocalLattice,
    Trajectory, Vec2, Vec3,
};

use crate::config::{emit_config, CarriersConfig, Mode, RunConfig};
use crate::outputs::{
    atomic_write, fmt_float, svg_loglog, svg_plane_lines, svg_zone_map, write_csv, write_json,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{stage}: {detail}")]
    Numerical { stage: &'static str, detail: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

fn numerical(stage: &'static str, err: impl std::fmt::Display) -> PipelineError {
    PipelineError::Numerical {
        stage,
        detail: err.to_string(),
    }
}

#[derive(Serialize)]
pub struct StageTime {
    pub stage: String,
    pub wall_ms: f64,
}

/// Written as manifest.json on every run. Wall times vary between runs, so
/// the manifest is exempt from the byte-determinism invariant.
#[derive(Serialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub schema_version: u32,
    pub mode: String,
    pub config_sha256: String,
    pub rng_seed: u64,
    pub threads: usize,
    pub artifacts: Vec<String>,
    pub warnings: Vec<String>,
    pub stages: Vec<StageTime>,
}

impl RunManifest {
    fn record(&mut self, stage: &str, t: Instant) {
        self.stages.push(StageTime {
            stage: stage.into(),
            wall_ms: t.elapsed().as_secs_f64() * 1e3,
        });
    }

    fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }
}

/// Work-stealing map that preserves input order in the output, so results
/// are independent of the thread count.
fn parallel_map<I: Sync, O: Send>(
    items: &[I],
    threads: usize,
    f: impl Fn(&I) -> O + Sync,
) -> Vec<O> {
    let n = items.len();
    let workers = threads.max(1).min(n.max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<O>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let out = f(&items[i]);
                slots.lock().expect("worker panicked")[i] = Some(out);
            });
        }
    });
    slots
        .into_inner()
        .expect("worker panicked")
        .into_iter()
        .map(|o| o.expect("slot filled"))
        .collect()
}

fn build_periodic(
    cfg: &RunConfig,
) -> Result<(FourierDispersion, ReciprocalLattice, f64), PipelineError> {
    let model = cfg.model.as_ref().expect("validated: model present");
    let rows = model.lattice;
    let direct = DirectLattice::new(
        Vec3::from_array(rows[0]),
        Vec3::from_array(rows[1]),
        Vec3::from_array(rows[2]),
    );
    let recip = reciprocal_from_direct(&direct).map_err(|e| numerical("model", e))?;
    let harmonics: Vec<Harmonic> = model
        .harmonics
        .iter()
        .map(|h| Harmonic::new(h.k, h.amplitude, h.phase))
        .collect();
    Ok((
        FourierDispersion::new(recip.clone(), harmonics),
        recip,
        model.fermi,
    ))
}

fn field_setup(cfg: &RunConfig) -> FieldSetup {
    let b = cfg.field.b_hat.expect("validated: b_hat present");
    FieldSetup::from_direction(Vec3::from_array(b))
}

/// Midpoints of the largest level-set pieces inside a centered window.
fn auto_seeds(
    disp: &FourierDispersion,
    recip: &ReciprocalLattice,
    slice: &PlaneSlice,
    fermi: f64,
    window_cells: f64,
    grid_n: usize,
    branches: usize,
) -> Result<Vec<Vec2>, PipelineError> {
    let half = 0.5 * window_cells * recip.cell_scale();
    let window = Window::centered(half, half);
    let mut pieces = contour_lines(|r| disp.energy(slice.lift(r)) - fermi, window, grid_n, 0.0)
        .map_err(|e| numerical("seeding", e))?;
    pieces.sort_by(|a, b| b.arc_length().total_cmp(&a.arc_length()));
    if pieces.is_empty() {
        return Err(numerical(
            "seeding",
            "no level-set piece in the seeding window",
        ));
    }
    Ok(pieces
        .iter()
        .take(branches)
        .map(|p| p.points[p.points.len() / 2])
        .collect())
}

/// Extends past the flow-time budget until the arc target is reached; the
/// arc accrues at |grad| per unit s, so the span is re-estimated from the
/// measured rate.
fn trace_to_arc(
    tracer: &Tracer<f64, FourierDispersion>,
    p0: Vec3,
    arc_target: f64,
) -> Result<Trajectory, magnetorbit_core::tracer::TraceError> {
    let mut traj = tracer.trace(p0, arc_target)?;
    let mut extensions = 0;
    while matches!(traj.stop, StopReason::Budget)
        && traj.total_arc() < arc_target
        && extensions < 64
    {
        let rate = (traj.total_arc() / traj.total_s().max(1e-300)).max(1e-3);
        let extra = 1.05 * (arc_target - traj.total_arc()) / rate;
        tracer.extend(&mut traj, extra.max(1e-6))?;
        extensions += 1;
    }
    Ok(traj)
}

fn kind_label(kind: Kind) -> &'static str {
    match kind {
        Kind::Closed => "closed",
        Kind::PeriodicOpen => "periodic_open",
        Kind::TopologicallyRegular => "topologically_regular",
        Kind::Chaotic => "chaotic",
        Kind::Undetermined => "undetermined",
    }
}

fn trajectory_rows(trajs: &[Trajectory]) -> Vec<Vec<String>> {
    let mut rows = Vec::new();
    for (id, traj) in trajs.iter().enumerate() {
        for (j, p) in traj.points.iter().enumerate() {
            rows.push(vec![
                fmt_float(traj.s[j]),
                fmt_float(p.x),
                fmt_float(p.y),
                fmt_float(p.z),
                id.to_string(),
            ]);
        }
    }
    rows
}

const TRAJECTORY_HEADER: &str = "s,px,py,pz,branch_id";

struct Emitter<'a> {
    out_dir: &'a Path,
    manifest: &'a mut RunManifest,
}

impl<'a> Emitter<'a> {
    fn csv(
        &mut self,
        name: &str,
        header: &str,
        rows: Vec<Vec<String>>,
    ) -> Result<(), PipelineError> {
        write_csv(&self.out_dir.join(name), header, rows)?;
        self.manifest.artifacts.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<(), PipelineError> {
        write_json(&self.out_dir.join(name), value)?;
        self.manifest.artifacts.push(name.into());
        Ok(())
    }

    fn svg(&mut self, name: &str, text: &str) -> Result<(), PipelineError> {
        atomic_write(&self.out_dir.join(name), text.as_bytes())?;
        self.manifest.artifacts.push(name.into());
        Ok(())
    }
}

fn seeds_for_run(
    cfg: &RunConfig,
    disp: &FourierDispersion,
    recip: &ReciprocalLattice,
    slice: &PlaneSlice,
    fermi: f64,
) -> Result<Vec<Vec2>, PipelineError> {
    match &cfg.trace.seeds {
        Some(list) => Ok(list.iter().map(|s| Vec2::new(s[0], s[1])).collect()),
        None => auto_seeds(
            disp,
            recip,
            slice,
            fermi,
            cfg.trace.window_cells,
            cfg.trace.grid_n,
            cfg.trace.branches,
        ),
    }
}

fn mode_trace(cfg: &RunConfig, svg: bool, em: &mut Emitter) -> Result<(), PipelineError> {
    let (disp, recip, fermi) = build_periodic(cfg)?;
    let setup = field_setup(cfg);
    let slice = PlaneSlice::new(setup, cfg.trace.h);
    let tracer = Tracer::new(&disp, slice.clone(), fermi, Some(&recip), cfg.tracer.to_control());
    let seeds = seeds_for_run(cfg, &disp, &recip, &slice, fermi)?;

    let t = Instant::now();
    let mut trajs = Vec::new();
    for (i, &r) in seeds.iter().enumerate() {
        let p0 = tracer
            .project_seed(slice.lift(r))
            .map_err(|e| numerical("trace", format!("seed {i}: {e}")))?;
        let traj = tracer
            .trace(p0, cfg.trace.s_max)
            .map_err(|e| numerical("trace", format!("seed {i}: {e}")))?;
        trajs.push(traj);
    }
    em.manifest.record("trace_orbits", t);

    let t = Instant::now();
    let singular = find_singular_points(&disp, setup.b_hat, fermi, cfg.trace.singular_grid)
        .map_err(|e| numerical("singular", e))?;
    em.manifest.record("singular_points", t);

    em.csv("trajectories.csv", TRAJECTORY_HEADER, trajectory_rows(&trajs))?;
    let points: Vec<_> = singular
        .iter()
        .map(|p| {
            json!({
                "location": [p.p.x, p.p.y, p.p.z],
                "kind": match p.kind { SingularKind::Center => "center", SingularKind::Saddle => "saddle" },
                "index": match p.kind { SingularKind::Center => 1, SingularKind::Saddle => -1 },
                "height": p.height,
            })
        })
        .collect();
    em.json(
        "singular_points.json",
        &json!({"schema_version": 1, "points": points}),
    )?;
    if svg {
        let lines: Vec<(String, Vec<Vec2>)> = trajs
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("branch {i}"), t.planar(&slice)))
            .collect();
        em.svg("trajectories.svg", &svg_plane_lines(&lines))?;
    }
    Ok(())
}

fn mode_classify(cfg: &RunConfig, svg: bool, em: &mut Emitter) -> Result<(), PipelineError> {
    let (disp, recip, fermi) = build_periodic(cfg)?;
    let setup = field_setup(cfg);
    let slice = PlaneSlice::new(setup, cfg.trace.h);
    let tracer = Tracer::new(&disp, slice.clone(), fermi, Some(&recip), cfg.tracer.to_control());
    let seeds = seeds_for_run(cfg, &disp, &recip, &slice, fermi)?;
    let thresholds = cfg.classify.to_thresholds();
    let arc_target = cfg.classify.arc_cells * recip.cell_scale();

    let t = Instant::now();
    let mut trajs = Vec::new();
    let mut classes = Vec::new();
    for (i, &r) in seeds.iter().enumerate() {
        let p0 = tracer
            .project_seed(slice.lift(r))
            .map_err(|e| numerical("classify", format!("seed {i}: {e}")))?;
        let traj = trace_to_arc(&tracer, p0, arc_target)
            .map_err(|e| numerical("classify", format!("seed {i}: {e}")))?;
        classes.push(classify_trajectory(&traj, &recip, &slice, &thresholds));
        trajs.push(traj);
    }
    em.manifest.record("classify_orbits", t);

    let entries: Vec<_> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| {
            json!({
                "branch_id": i,
                "kind": kind_label(c.kind),
                "mean_direction": c.mean_direction.map(|d| [d.x, d.y, d.z]),
                "strip_width": c.strip_width,
                "m": c.m,
                "residuals": {
                    "direction_spread": c.direction_spread,
                    "m_angle": c.m_angle,
                    "width_exponent": c.width_exponent,
                    "period": c.period,
                    "shift": c.shift,
                },
                "trace_length": c.trace_arc,
            })
        })
        .collect();
    em.json(
        "classification.json",
        &json!({"schema_version": 1, "trajectories": entries}),
    )?;
    if svg {
        let lines: Vec<(String, Vec<Vec2>)> = trajs
            .iter()
            .zip(&classes)
            .enumerate()
            .map(|(i, (t, c))| (format!("branch {i}: {}", kind_label(c.kind)), t.planar(&slice)))
            .collect();
        em.svg("classified_orbits.svg", &svg_plane_lines(&lines))?;
    }
    Ok(())
}

fn mode_exponents(cfg: &RunConfig, em: &mut Emitter) -> Result<(), PipelineError> {
    let (disp, recip, fermi) = build_periodic(cfg)?;
    let setup = field_setup(cfg);
    let slice = PlaneSlice::new(setup, cfg.exponents.h);
    let tracer = Tracer::new(&disp, slice.clone(), fermi, Some(&recip), cfg.tracer.to_control());

    // Ensemble: starting points spread along the longest level-set piece.
    let half = 0.5 * cfg.trace.window_cells * recip.cell_scale();
    let window = Window::centered(half, half);
    let mut pieces = contour_lines(
        |r| disp.energy(slice.lift(r)) - fermi,
        window,
        cfg.trace.grid_n,
        0.0,
    )
    .map_err(|e| numerical("exponents", e))?;
    pieces.sort_by(|a, b| b.arc_length().total_cmp(&a.arc_length()));
    let carrier = pieces
        .first()
        .ok_or_else(|| numerical("exponents", "no level-set piece in the seeding window"))?;

    let t = Instant::now();
    let frame = FrameSpec {
        l0: cfg.exponents.l0,
        gamma: cfg.exponents.gamma,
        max_frames: cfg.exponents.max_frames,
    };
    let walks = cfg.exponents.walks;
    let mut records: Vec<DisplacementRecord<f64>> = Vec::new();
    for j in 0..walks {
        let idx = j * (carrier.points.len() - 1) / walks.max(1);
        let seed = carrier.points[idx];
        let p0 = match tracer.project_seed(slice.lift(seed)) {
            Ok(p) => p,
            Err(e) => {
                em.manifest.warn(format!("exponents: walk {j}: {e}"));
                continue;
            }
        };
        let traj = match tracer.trace(p0, cfg.exponents.s_max) {
            Ok(t) => t,
            Err(e) => {
                em.manifest.warn(format!("exponents: walk {j}: {e}"));
                continue;
            }
        };
        match record_displacements(&traj, &slice, frame, j as u64) {
            Ok(rec) => records.push(rec),
            Err(e) => em.manifest.warn(format!("exponents: walk {j}: {e}")),
        }
    }
    em.manifest.record("trace_walks", t);

    let t = Instant::now();
    let dirs = principal_growth_directions(&records).map_err(|e| numerical("exponents", e))?;
    let est = estimate_exponents(&records, dirs).map_err(|e| numerical("exponents", e))?;
    let windows: Vec<f64> = cfg
        .exponents
        .census_windows_cells
        .iter()
        .map(|c| c * recip.cell_scale())
        .collect();
    let census = plane_component_census(&disp, &slice, fermi, &windows);
    em.manifest.record("fit_exponents", t);

    let frame_count = records
        .iter()
        .map(|r| r.frame_lengths.len())
        .min()
        .unwrap_or(0);
    em.json(
        "exponents.json",
        &json!({
            "schema_version": 1,
            "nu2": est.nu2,
            "nu3": est.nu3,
            "dir_fast": [est.dir_fast.x, est.dir_fast.y],
            "dir_slow": [est.dir_slow.x, est.dir_slow.y],
            "residuals": {"envelope": est.envelope_residual},
            "frames": {
                "l0": cfg.exponents.l0,
                "gamma": cfg.exponents.gamma,
                "common_count": frame_count,
            },
            "census": {
                "verdict": match census.verdict {
                    CensusVerdict::SingleComponent => "single_component",
                    CensusVerdict::ManyComponents => "many_components",
                    CensusVerdict::Inconclusive => "inconclusive",
                },
                "window_sides": census.window_sides,
                "counts": census.counts,
            },
            "n_trajectories": est.n_trajectories,
        }),
    )
}

const TENSOR_COMPONENTS: [(&str, usize, usize); 9] = [
    ("xx", 0, 0),
    ("xy", 0, 1),
    ("xz", 0, 2),
    ("yx", 1, 0),
    ("yy", 1, 1),
    ("yz", 1, 2),
    ("zx", 2, 0),
    ("zy", 2, 1),
    ("zz", 2, 2),
];

fn mode_conductivity(cfg: &RunConfig, svg: bool, em: &mut Emitter) -> Result<(), PipelineError> {
    let (disp, recip, fermi) = build_periodic(cfg)?;
    let setup = field_setup(cfg);
    let tc = &cfg.transport;
    let params = TransportParams {
        lambdas: tc.lambdas.clone(),
        truncation: tc.truncation,
        breakdown: tc.kappa.map(|kappa| BreakdownModel { kappa }),
    };
    let mut sampling = SliceSampling::default();
    sampling.n_slices = tc.n_slices;
    sampling.span_cells = tc.span_cells;
    sampling.window_cells = tc.window_cells;
    sampling.grid_n = tc.grid_n;
    sampling.seed = cfg.rng_seed;
    sampling.jitter = tc.jitter;
    sampling.s_chunk = tc.s_chunk;
    sampling.max_chunks = tc.max_chunks;
    sampling.carriers = match tc.carriers {
        CarriersConfig::All => CarrierFilter::All,
        CarriersConfig::OpenOnly => CarrierFilter::OpenOnly,
    };
    sampling.ctrl = cfg.tracer.to_control();
    // The default cap keeps quadrature error below the slope tolerances.
    sampling.ctrl.max_step = sampling.ctrl.max_step.min(0.05);

    let t = Instant::now();
    let curve = conductivity_curve(&disp, &recip, setup, fermi, &params, &sampling)
        .map_err(|e| numerical("conductivity", e))?;
    em.manifest.record("conductivity_curve", t);
    if curve.truncated_runs > 0 {
        em.manifest.warn(format!(
            "conductivity: {} orbit runs hit the chunk cap before kernel truncation",
            curve.truncated_runs
        ));
    }

    let rows: Vec<Vec<String>> = curve
        .samples
        .iter()
        .map(|s| {
            let mut row = vec![fmt_float(s.lambda)];
            for i in 0..3 {
                for k in 0..3 {
                    row.push(fmt_float(s.sigma.m[i][k]));
                }
            }
            row
        })
        .collect();
    em.csv(
        "conductivity.csv",
        "lambda,sxx,sxy,sxz,syx,syy,syz,szx,szy,szz",
        rows,
    )?;

    let lambdas = curve.lambdas();
    let lmax = *lambdas.last().expect("validated: lambdas nonempty");
    let window = match tc.slope_window {
        Some([lo, hi]) => (lo, hi),
        None => (lmax / 10.0, lmax),
    };
    let mut components = Vec::new();
    for (name, i, k) in TENSOR_COMPONENTS {
        let values = curve.component(i, k);
        match asymptotic_slope(&lambdas, &values, window) {
            Ok(fit) => components.push(json!({
                "component": name,
                "envelope": {"slope": fit.envelope.0, "rms": fit.envelope.1},
                "least_squares": {"slope": fit.least_squares.0, "rms": fit.least_squares.1},
            })),
            Err(e) => em.manifest.warn(format!("slopes: {name}: {e}")),
        }
    }
    em.json(
        "slopes.json",
        &json!({
            "schema_version": 1,
            "window": [window.0, window.1],
            "components": components,
        }),
    )?;

    if svg {
        let series: Vec<(String, Vec<f64>)> = [("xx", 0, 0), ("yy", 1, 1), ("zz", 2, 2), ("xy", 0, 1)]
            .iter()
            .map(|&(name, i, k)| (name.to_string(), curve.component(i, k)))
            .collect();
        em.svg("conductivity.svg", &svg_loglog(&lambdas, &series, window))?;
    }
    Ok(())
}

fn mode_scan(
    cfg: &RunConfig,
    threads: usize,
    svg: bool,
    em: &mut Emitter,
) -> Result<(), PipelineError> {
    let (disp, recip, fermi) = build_periodic(cfg)?;
    let grid: DirectionGrid<f64> = match (cfg.field.b_hat, cfg.field.grid_resolution) {
        (Some(b), None) => DirectionGrid::from_directions(vec![Vec3::from_array(b).normalized()]),
        (None, Some(res)) => direction_grid(res),
        _ => unreachable!("validated: exactly one field source"),
    };
    let sc = &cfg.scan;
    let mut thresholds = cfg.classify.to_thresholds();
    thresholds.min_growth_exponent = sc.min_growth_exponent;
    let budget = ScanBudget {
        arc_cells: sc.arc_cells,
        n_slices: sc.n_slices,
        branches_per_slice: sc.branches_per_slice,
        span_cells: sc.span_cells,
        window_cells: sc.window_cells,
        grid_n: sc.grid_n,
        slab_cells: sc.slab_cells,
        thresholds,
        ctrl: cfg.tracer.to_control(),
    };

    let t = Instant::now();
    let cells: Vec<DiagramCell<f64>> = parallel_map(&grid.points, threads, |d| {
        scan_direction(&disp, &recip, fermi, *d, &budget)
    });
    em.manifest.record("scan_directions", t);

    let rows: Vec<Vec<String>> = cells
        .iter()
        .map(|c| {
            let m = c.regime.m();
            let cell_m = |i: usize| m.map(|v| v[i].to_string()).unwrap_or_default();
            vec![
                fmt_float(c.direction.z.acos()),
                fmt_float(c.direction.y.atan2(c.direction.x)),
                c.regime.label().to_string(),
                cell_m(0),
                cell_m(1),
                cell_m(2),
                c.rationality.map(|r| r.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    em.csv("diagram.csv", "theta,phi,regime,m1,m2,m3,rationality", rows)?;

    if svg {
        let zones = extract_zones(&cells);
        let dirs: Vec<(f64, f64, f64)> = cells
            .iter()
            .map(|c| (c.direction.x, c.direction.y, c.direction.z))
            .collect();
        let regimes: Vec<&'static str> = cells.iter().map(|c| c.regime.label()).collect();
        let zone_data: Vec<([i64; 3], Vec<(f64, f64, f64)>)> = zones
            .iter()
            .map(|z| {
                (
                    z.m,
                    z.boundary.iter().map(|d| (d.x, d.y, d.z)).collect(),
                )
            })
            .collect();
        em.svg("zones.svg", &svg_zone_map(&dirs, &regimes, &zone_data))?;
    }
    Ok(())
}

fn mode_quasi(cfg: &RunConfig, svg: bool, em: &mut Emitter) -> Result<(), PipelineError> {
    let qp_cfg = cfg.quasiperiodic.as_ref().expect("validated: quasiperiodic present");
    let qp = qp_cfg
        .build()
        .map_err(|e| numerical("quasi", e))?;
    let ctrl = cfg.tracer.to_control();

    let t = Instant::now();
    let mut lines = Vec::new();
    for (i, s) in cfg.quasi.seeds.iter().enumerate() {
        let line = trace_level_line(&qp, qp_cfg.level, Vec2::new(s[0], s[1]), cfg.quasi.l_max, &ctrl)
            .map_err(|e| numerical("quasi", format!("seed {i}: {e}")))?;
        lines.push(line);
    }
    em.manifest.record("trace_level_lines", t);

    let t = Instant::now();
    let mut rows = Vec::new();
    let mut reports = Vec::new();
    for (i, line) in lines.iter().enumerate() {
        for (j, p) in line.points.iter().enumerate() {
            rows.push(vec![
                fmt_float(line.arcs[j]),
                fmt_float(p.x),
                fmt_float(p.y),
                "0".into(),
                i.to_string(),
            ]);
        }
        let stop = match line.stop {
            LineStop::Closed => "closed",
            LineStop::Budget => "budget",
            LineStop::CriticalPoint => "critical_point",
        };
        let mut strip = serde_json::Value::Null;
        let mut mu = serde_json::Value::Null;
        let mut note = serde_json::Value::Null;
        match strip_and_direction_test(line, &qp) {
            Ok(fit) => {
                strip = json!({
                    "width": fit.width,
                    "mean_direction": [fit.mean_direction.x, fit.mean_direction.y],
                    "passes": fit.passes,
                });
                if fit.passes && qp.covectors().len() == 4 {
                    match integral_plane_numbers(line, &qp, cfg.quasi.m_max) {
                        Ok(m) => mu = json!(m),
                        Err(QuasiError::NoIntegralPlane) => {
                            note = json!("no integral plane within the search bound");
                        }
                        Err(e) => {
                            note = json!(e.to_string());
                            em.manifest.warn(format!("quasi: line {i}: {e}"));
                        }
                    }
                } else if !fit.passes {
                    note = json!("strip test failed");
                }
            }
            Err(e) => {
                note = json!(e.to_string());
                em.manifest.warn(format!("quasi: line {i}: {e}"));
            }
        }
        reports.push(json!({
            "branch_id": i,
            "stop": stop,
            "total_arc": line.total_arc(),
            "level": line.level,
            "strip": strip,
            "mu": mu,
            "note": note,
        }));
    }
    em.manifest.record("strip_tests", t);

    em.csv("quasi_lines.csv", TRAJECTORY_HEADER, rows)?;
    em.json(
        "quasi_report.json",
        &json!({"schema_version": 1, "lines": reports}),
    )?;
    if svg {
        let plot: Vec<(String, Vec<Vec2>)> = lines
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("line {i}"), l.points.clone()))
            .collect();
        em.svg("quasi_lines.svg", &svg_plane_lines(&plot))?;
    }
    Ok(())
}

/// Runs one mode end to end. Every artifact lands in `out_dir`; the return
/// value is the manifest that was written there as manifest.json.
pub fn run_pipeline(
    cfg: &RunConfig,
    out_dir: &Path,
    threads: usize,
    svg: bool,
) -> Result<RunManifest, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let emitted = emit_config(cfg);
    let mut hasher = Sha256::new();
    hasher.update(emitted.as_bytes());
    let mut manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        schema_version: cfg.schema_version,
        mode: cfg.mode.as_str().into(),
        config_sha256: format!("{:x}", hasher.finalize()),
        rng_seed: cfg.rng_seed,
        threads,
        artifacts: Vec::new(),
        warnings: Vec::new(),
        stages: Vec::new(),
    };
    let svg = svg || cfg.output.svg;

    let t = Instant::now();
    atomic_write(&out_dir.join("config.json"), emitted.as_bytes())?;
    manifest.artifacts.push("config.json".into());
    manifest.record("emit_config", t);

    let mut em = Emitter {
        out_dir,
        manifest: &mut manifest,
    };
    match cfg.mode {
        Mode::Trace => mode_trace(cfg, svg, &mut em)?,
        Mode::Classify => mode_classify(cfg, svg, &mut em)?,
        Mode::Exponents => mode_exponents(cfg, &mut em)?,
        Mode::Conductivity => mode_conductivity(cfg, svg, &mut em)?,
        Mode::Scan => mode_scan(cfg, threads, svg, &mut em)?,
        Mode::Quasi => mode_quasi(cfg, svg, &mut em)?,
    }

    let body = serde_json::to_value(&manifest).expect("manifest serializes");
    write_json(&out_dir.join("manifest.json"), &body)?;
    Ok(manifest)
}
