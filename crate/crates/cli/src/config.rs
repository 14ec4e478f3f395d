//! Run configuration: versioned JSON schema with strict keys, materialized
//! defaults, and value validation separated from shape validation.

use magnetorbit_core::classifier::ClassifyThresholds;
use magnetorbit_core::quasi::{QpHarmonic, QuasiperiodicFunction};
use magnetorbit_core::{StepControl, Vec2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

/// Shape errors (unknown keys, wrong types, missing fields) versus value
/// errors (well-formed JSON whose numbers violate an invariant).
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("value error: {key}: {reason}")]
    Value { key: String, reason: String },
}

fn value_err<T>(key: &str, reason: impl Into<String>) -> Result<T, ConfigError> {
    Err(ConfigError::Value {
        key: key.into(),
        reason: reason.into(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Trace,
    Classify,
    Exponents,
    Conductivity,
    Scan,
    Quasi,
}

impl Mode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::Trace => "trace",
            Mode::Classify => "classify",
            Mode::Exponents => "exponents",
            Mode::Conductivity => "conductivity",
            Mode::Scan => "scan",
            Mode::Quasi => "quasi",
        }
    }

    pub fn parse(s: &str) -> Option<Mode> {
        match s {
            "trace" => Some(Mode::Trace),
            "classify" => Some(Mode::Classify),
            "exponents" => Some(Mode::Exponents),
            "conductivity" => Some(Mode::Conductivity),
            "scan" => Some(Mode::Scan),
            "quasi" => Some(Mode::Quasi),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HarmonicConfig {
    pub k: [i32; 3],
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Periodic dispersion: direct-lattice rows, Fourier harmonics, Fermi level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub lattice: [[f64; 3]; 3],
    pub harmonics: Vec<HarmonicConfig>,
    pub fermi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QpHarmonicConfig {
    pub k: Vec<i64>,
    pub amplitude: f64,
    #[serde(default)]
    pub phase: f64,
}

/// Quasiperiodic planar potential: N covectors, torus offset, harmonics,
/// and the level whose lines are traced.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiModelConfig {
    pub covectors: Vec<[f64; 2]>,
    pub offset: Vec<f64>,
    pub harmonics: Vec<QpHarmonicConfig>,
    #[serde(default)]
    pub level: f64,
}

impl QuasiModelConfig {
    pub fn build(&self) -> Result<QuasiperiodicFunction<f64>, ConfigError> {
        let covectors: Vec<Vec2> = self
            .covectors
            .iter()
            .map(|c| Vec2::new(c[0], c[1]))
            .collect();
        let harmonics: Vec<QpHarmonic<f64>> = self
            .harmonics
            .iter()
            .map(|h| QpHarmonic::new(h.k.clone(), h.amplitude, h.phase))
            .collect();
        QuasiperiodicFunction::new(covectors, self.offset.clone(), harmonics)
            .map_err(|e| ConfigError::Value {
                key: "quasiperiodic".into(),
                reason: e.to_string(),
            })
    }
}

/// Either one fixed direction or a sphere-covering grid (scan mode only).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_hat: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_resolution: Option<usize>,
}

fn d_step_tol() -> f64 {
    1e-10
}
fn d_max_step() -> f64 {
    0.5
}
fn d_min_step() -> f64 {
    1e-12
}
fn d_tol_energy() -> f64 {
    1e-9
}
fn d_tol_plane() -> f64 {
    1e-9
}
fn d_tol_sing() -> f64 {
    1e-7
}
fn d_closure_tol() -> f64 {
    1e-6
}
fn d_closure_angle() -> f64 {
    1e-6
}
fn d_max_restarts() -> usize {
    100_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracerConfig {
    #[serde(default = "d_step_tol")]
    pub step_tol: f64,
    #[serde(default = "d_max_step")]
    pub max_step: f64,
    #[serde(default = "d_min_step")]
    pub min_step: f64,
    #[serde(default = "d_tol_energy")]
    pub tol_energy: f64,
    #[serde(default = "d_tol_plane")]
    pub tol_plane: f64,
    #[serde(default = "d_tol_sing")]
    pub tol_sing: f64,
    #[serde(default = "d_closure_tol")]
    pub closure_tol: f64,
    #[serde(default = "d_closure_angle")]
    pub closure_angle: f64,
    #[serde(default = "d_max_restarts")]
    pub max_restarts: usize,
}

impl Default for TracerConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty tracer section")
    }
}

impl TracerConfig {
    pub fn to_control(&self) -> StepControl {
        let mut ctrl = StepControl::default();
        ctrl.step_tol = self.step_tol;
        ctrl.max_step = self.max_step;
        ctrl.min_step = self.min_step;
        ctrl.tol_energy = self.tol_energy;
        ctrl.tol_plane = self.tol_plane;
        ctrl.tol_sing = self.tol_sing;
        ctrl.closure_tol = self.closure_tol;
        ctrl.closure_angle = self.closure_angle;
        ctrl.max_restarts = self.max_restarts;
        ctrl
    }
}

fn d_s_max() -> f64 {
    200.0
}
fn d_branches() -> usize {
    4
}
fn d_trace_window() -> f64 {
    1.5
}
fn d_trace_grid() -> usize {
    128
}
fn d_singular_grid() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    /// Plane offset along b_hat.
    #[serde(default)]
    pub h: f64,
    #[serde(default = "d_s_max")]
    pub s_max: f64,
    /// In-plane seed points; auto-seeded from the level set when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<Vec<[f64; 2]>>,
    /// Level-set pieces seeded when `seeds` is absent.
    #[serde(default = "d_branches")]
    pub branches: usize,
    #[serde(default = "d_trace_window")]
    pub window_cells: f64,
    #[serde(default = "d_trace_grid")]
    pub grid_n: usize,
    #[serde(default = "d_singular_grid")]
    pub singular_grid: usize,
}

impl Default for TraceConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty trace section")
    }
}

fn d_arc_cells() -> f64 {
    400.0
}
fn d_plateau_tol() -> f64 {
    0.05
}
fn d_plateau_count() -> usize {
    3
}
fn d_min_growth() -> f64 {
    0.1
}
fn d_growth_decades() -> f64 {
    1.0
}
fn d_tol_angle() -> f64 {
    1e-3
}
fn d_m_max() -> i64 {
    10
}
fn d_dyadic_levels() -> usize {
    12
}
fn d_min_arc_cells() -> f64 {
    10.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    /// Arc budget per orbit in reciprocal-cell units.
    #[serde(default = "d_arc_cells")]
    pub arc_cells: f64,
    #[serde(default = "d_plateau_tol")]
    pub plateau_tol: f64,
    #[serde(default = "d_plateau_count")]
    pub plateau_count: usize,
    #[serde(default = "d_min_growth")]
    pub min_growth_exponent: f64,
    #[serde(default = "d_growth_decades")]
    pub growth_decades: f64,
    #[serde(default = "d_tol_angle")]
    pub tol_angle: f64,
    #[serde(default = "d_m_max")]
    pub m_max: i64,
    #[serde(default = "d_dyadic_levels")]
    pub dyadic_levels: usize,
    #[serde(default = "d_min_arc_cells")]
    pub min_arc_cells: f64,
}

impl Default for ClassifyConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty classify section")
    }
}

impl ClassifyConfig {
    pub fn to_thresholds(&self) -> ClassifyThresholds<f64> {
        let mut th = ClassifyThresholds::default();
        th.plateau_tol = self.plateau_tol;
        th.plateau_count = self.plateau_count;
        th.min_growth_exponent = self.min_growth_exponent;
        th.growth_decades = self.growth_decades;
        th.tol_angle = self.tol_angle;
        th.m_max = self.m_max;
        th.dyadic_levels = self.dyadic_levels;
        th.min_arc_cells = self.min_arc_cells;
        th
    }
}

fn d_walks() -> usize {
    16
}
fn d_exp_s_max() -> f64 {
    2000.0
}
fn d_l0() -> f64 {
    1.0
}
fn d_gamma() -> f64 {
    2.0
}
fn d_max_frames() -> usize {
    48
}
fn d_census_windows() -> Vec<f64> {
    vec![8.0, 16.0, 32.0, 64.0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExponentsConfig {
    /// Plane offset along b_hat.
    #[serde(default)]
    pub h: f64,
    /// Ensemble size: starting points spread along one carrier.
    #[serde(default = "d_walks")]
    pub walks: usize,
    #[serde(default = "d_exp_s_max")]
    pub s_max: f64,
    /// First frame arc; frames grow geometrically by `gamma`.
    #[serde(default = "d_l0")]
    pub l0: f64,
    #[serde(default = "d_gamma")]
    pub gamma: f64,
    #[serde(default = "d_max_frames")]
    pub max_frames: usize,
    /// Census window sides in reciprocal-cell units, ascending.
    #[serde(default = "d_census_windows")]
    pub census_windows_cells: Vec<f64>,
}

impl Default for ExponentsConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty exponents section")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CarriersConfig {
    All,
    OpenOnly,
}

fn d_truncation() -> f64 {
    1e-8
}
fn d_n_slices() -> usize {
    48
}
fn d_span_cells() -> usize {
    32
}
fn d_tr_window() -> f64 {
    1.0
}
fn d_tr_grid() -> usize {
    192
}
fn d_jitter() -> bool {
    true
}
fn d_s_chunk() -> f64 {
    64.0
}
fn d_max_chunks() -> usize {
    64
}
fn d_carriers() -> CarriersConfig {
    CarriersConfig::All
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransportConfig {
    /// Mean free paths, strictly increasing.
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default = "d_truncation")]
    pub truncation: f64,
    /// Magnetic-breakdown rate; saddle mixing off when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    #[serde(default = "d_n_slices")]
    pub n_slices: usize,
    #[serde(default = "d_span_cells")]
    pub span_cells: usize,
    #[serde(default = "d_tr_window")]
    pub window_cells: f64,
    #[serde(default = "d_tr_grid")]
    pub grid_n: usize,
    #[serde(default = "d_jitter")]
    pub jitter: bool,
    #[serde(default = "d_s_chunk")]
    pub s_chunk: f64,
    #[serde(default = "d_max_chunks")]
    pub max_chunks: usize,
    #[serde(default = "d_carriers")]
    pub carriers: CarriersConfig,
    /// Lambda window for the slope report; defaults to the top decade.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slope_window: Option<[f64; 2]>,
}

impl Default for TransportConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty transport section")
    }
}

fn d_scan_arc() -> f64 {
    1e4
}
fn d_scan_slices() -> usize {
    8
}
fn d_scan_branches() -> usize {
    4
}
fn d_scan_span() -> f64 {
    1.0
}
fn d_scan_window() -> f64 {
    1.0
}
fn d_scan_grid() -> usize {
    96
}
fn d_slab_cells() -> f64 {
    1.0
}
fn d_scan_growth() -> f64 {
    0.25
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanConfig {
    #[serde(default = "d_scan_arc")]
    pub arc_cells: f64,
    #[serde(default = "d_scan_slices")]
    pub n_slices: usize,
    #[serde(default = "d_scan_branches")]
    pub branches_per_slice: usize,
    #[serde(default = "d_scan_span")]
    pub span_cells: f64,
    #[serde(default = "d_scan_window")]
    pub window_cells: f64,
    #[serde(default = "d_scan_grid")]
    pub grid_n: usize,
    /// Excursion cap along the claimed plane normal, in cells.
    #[serde(default = "d_slab_cells")]
    pub slab_cells: f64,
    /// Chaos flag threshold; looser than the classify default because scan
    /// budgets are short.
    #[serde(default = "d_scan_growth")]
    pub min_growth_exponent: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty scan section")
    }
}

fn d_l_max() -> f64 {
    1e4
}
fn d_quasi_m_max() -> i64 {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuasiConfig {
    /// Seed points in the plane, one level line each.
    #[serde(default)]
    pub seeds: Vec<[f64; 2]>,
    /// Arc budget per line.
    #[serde(default = "d_l_max")]
    pub l_max: f64,
    /// Integer search bound for the integral-plane quadruple.
    #[serde(default = "d_quasi_m_max")]
    pub m_max: i64,
}

impl Default for QuasiConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty quasi section")
    }
}

fn d_out_dir() -> String {
    "out".into()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "d_out_dir")]
    pub dir: String,
    #[serde(default)]
    pub svg: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty output section")
    }
}

fn d_schema_version() -> u32 {
    SCHEMA_VERSION
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "d_schema_version")]
    pub schema_version: u32,
    pub mode: Mode,
    /// Root of every random stream; streams are keyed (seed, stage, index).
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quasiperiodic: Option<QuasiModelConfig>,
    #[serde(default)]
    pub field: FieldConfig,
    #[serde(default)]
    pub tracer: TracerConfig,
    #[serde(default)]
    pub trace: TraceConfig,
    #[serde(default)]
    pub classify: ClassifyConfig,
    #[serde(default)]
    pub exponents: ExponentsConfig,
    #[serde(default)]
    pub transport: TransportConfig,
    #[serde(default)]
    pub scan: ScanConfig,
    #[serde(default)]
    pub quasi: QuasiConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl RunConfig {
    fn validate(&self) -> Result<(), ConfigError> {
        if self.schema_version != SCHEMA_VERSION {
            return value_err(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", self.schema_version),
            );
        }
        match self.mode {
            Mode::Quasi => {
                if self.quasiperiodic.is_none() {
                    return value_err("quasiperiodic", "required in quasi mode");
                }
                if self.model.is_some() {
                    return value_err("model", "must be absent in quasi mode");
                }
            }
            _ => {
                if self.model.is_none() {
                    return value_err("model", "required outside quasi mode");
                }
                if self.quasiperiodic.is_some() {
                    return value_err("quasiperiodic", "only allowed in quasi mode");
                }
            }
        }
        if let Some(model) = &self.model {
            if model.harmonics.is_empty() {
                return value_err("model.harmonics", "at least one harmonic required");
            }
        }
        if let Some(qp) = &self.quasiperiodic {
            let n = qp.covectors.len();
            if !(n == 3 || n == 4) {
                return value_err("quasiperiodic.covectors", "need 3 or 4 covectors");
            }
            if qp.offset.len() != n {
                return value_err("quasiperiodic.offset", "length must match covector count");
            }
            if qp.harmonics.is_empty() {
                return value_err("quasiperiodic.harmonics", "at least one harmonic required");
            }
            for h in &qp.harmonics {
                if h.k.len() != n {
                    return value_err(
                        "quasiperiodic.harmonics",
                        "integer vector length must match covector count",
                    );
                }
            }
            qp.build()?;
        }

        match self.mode {
            Mode::Scan => match (self.field.b_hat, self.field.grid_resolution) {
                (Some(_), Some(_)) => {
                    return value_err("field", "b_hat and grid_resolution are mutually exclusive")
                }
                (None, None) => {
                    return value_err("field", "scan needs b_hat or grid_resolution")
                }
                (None, Some(0)) => return value_err("field.grid_resolution", "must be positive"),
                _ => {}
            },
            Mode::Quasi => {}
            _ => {
                if self.field.b_hat.is_none() {
                    return value_err("field.b_hat", "required for this mode");
                }
            }
        }
        if let Some(b) = self.field.b_hat {
            let norm2 = b.iter().map(|x| x * x).sum::<f64>();
            if !(norm2 > 0.0) || !norm2.is_finite() {
                return value_err("field.b_hat", "must be a nonzero finite vector");
            }
        }

        let positive = [
            ("tracer.step_tol", self.tracer.step_tol),
            ("tracer.max_step", self.tracer.max_step),
            ("tracer.min_step", self.tracer.min_step),
            ("tracer.tol_energy", self.tracer.tol_energy),
            ("tracer.tol_plane", self.tracer.tol_plane),
            ("tracer.tol_sing", self.tracer.tol_sing),
            ("tracer.closure_tol", self.tracer.closure_tol),
            ("tracer.closure_angle", self.tracer.closure_angle),
            ("trace.s_max", self.trace.s_max),
            ("trace.window_cells", self.trace.window_cells),
            ("classify.arc_cells", self.classify.arc_cells),
            ("classify.plateau_tol", self.classify.plateau_tol),
            ("classify.tol_angle", self.classify.tol_angle),
            ("exponents.s_max", self.exponents.s_max),
            ("exponents.l0", self.exponents.l0),
            ("transport.truncation", self.transport.truncation),
            ("transport.window_cells", self.transport.window_cells),
            ("transport.s_chunk", self.transport.s_chunk),
            ("scan.arc_cells", self.scan.arc_cells),
            ("scan.span_cells", self.scan.span_cells),
            ("scan.window_cells", self.scan.window_cells),
            ("scan.slab_cells", self.scan.slab_cells),
            ("quasi.l_max", self.quasi.l_max),
        ];
        for (key, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return value_err(key, "must be positive and finite");
            }
        }
        if self.exponents.gamma <= 1.0 {
            return value_err("exponents.gamma", "must exceed 1");
        }
        if self.exponents.census_windows_cells.len() < 3 {
            return value_err("exponents.census_windows_cells", "need at least 3 windows");
        }
        if !self
            .exponents
            .census_windows_cells
            .windows(2)
            .all(|w| w[1] > w[0])
        {
            return value_err("exponents.census_windows_cells", "must be ascending");
        }

        if !self.transport.lambdas.is_empty() {
            if self.transport.lambdas.iter().any(|&l| !(l > 0.0)) {
                return value_err("transport.lambdas", "must be positive");
            }
            if !self.transport.lambdas.windows(2).all(|w| w[1] > w[0]) {
                return value_err("transport.lambdas", "must be strictly increasing");
            }
        }
        if self.mode == Mode::Conductivity && self.transport.lambdas.is_empty() {
            return value_err("transport.lambdas", "required in conductivity mode");
        }
        if let Some(k) = self.transport.kappa {
            if !(k > 0.0) || !k.is_finite() {
                return value_err("transport.kappa", "must be positive and finite");
            }
        }
        if let Some([lo, hi]) = self.transport.slope_window {
            if !(lo > 0.0 && hi > lo) {
                return value_err("transport.slope_window", "need 0 < lo < hi");
            }
        }

        if self.mode == Mode::Quasi && self.quasi.seeds.is_empty() {
            return value_err("quasi.seeds", "at least one seed required in quasi mode");
        }
        if self.quasi.m_max < 1 {
            return value_err("quasi.m_max", "must be at least 1");
        }
        if self.classify.m_max < 1 {
            return value_err("classify.m_max", "must be at least 1");
        }

        let grids = [
            ("trace.grid_n", self.trace.grid_n, 8),
            ("trace.singular_grid", self.trace.singular_grid, 4),
            ("transport.grid_n", self.transport.grid_n, 8),
            ("scan.grid_n", self.scan.grid_n, 8),
            ("trace.branches", self.trace.branches, 1),
            ("transport.n_slices", self.transport.n_slices, 1),
            ("transport.span_cells", self.transport.span_cells, 1),
            ("transport.max_chunks", self.transport.max_chunks, 1),
            ("scan.n_slices", self.scan.n_slices, 1),
            ("scan.branches_per_slice", self.scan.branches_per_slice, 1),
            ("exponents.walks", self.exponents.walks, 8),
            ("exponents.max_frames", self.exponents.max_frames, 4),
        ];
        for (key, v, min) in grids {
            if v < min {
                return value_err(key, format!("must be at least {min}"));
            }
        }
        Ok(())
    }
}

/// Strict parse: unknown keys and wrong shapes are schema errors, invariant
/// violations are value errors. Defaults are materialized on the result.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig =
        serde_json::from_str(text).map_err(|e| ConfigError::Schema(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

/// Canonical emission; `parse_config(emit_config(c))` returns `c` exactly.
pub fn emit_config(cfg: &RunConfig) -> String {
    let mut s = serde_json::to_string_pretty(cfg).expect("config serializes");
    s.push('\n');
    s
}
