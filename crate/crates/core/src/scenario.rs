//! JSON scenario documents.

use std::path::Path;

use serde::{de, Deserialize, Deserializer, Serialize};

use crate::geometry::{default_wheel_positions, Pose2, VehicleParams};
use crate::mpc::MpcConfig;
use crate::planner::{PlannerOptions, PlannerWeights};
use crate::sim::SimConfig;
use crate::sweptfield::SearchOptions;
use crate::worldmodel::{Region, Shape};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScenarioError {
    #[error("scenario file not found: {0}")]
    FileNotFound(String),
    #[error("cannot read scenario: {0}")]
    Io(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError { line: usize, column: usize, message: String },
    #[error("invalid scenario field `{0}`: {1}")]
    ValidationError(String, String),
}

impl ScenarioError {
    fn invalid(field: &str, why: impl Into<String>) -> Self {
        ScenarioError::ValidationError(field.to_string(), why.into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub length: f64,
    pub width: f64,
    #[serde(default = "default_axles")]
    pub axle_count: usize,
    /// Body-frame wheel positions; two per axle when omitted.
    #[serde(default)]
    pub wheel_positions: Option<Vec<[f64; 2]>>,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default = "default_omega_max")]
    pub omega_max: f64,
}

fn default_axles() -> usize {
    2
}
fn default_v_max() -> f64 {
    3.0
}
fn default_omega_max() -> f64 {
    1.0
}

impl VehicleSpec {
    pub fn to_params(&self) -> VehicleParams {
        VehicleParams {
            length: self.length,
            width: self.width,
            axle_count: self.axle_count,
            wheel_positions: self
                .wheel_positions
                .clone()
                .unwrap_or_else(|| default_wheel_positions(self.length, self.width, self.axle_count)),
            v_max: self.v_max,
            omega_max: self.omega_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorldSpec {
    pub bounds: Option<Region>,
    #[serde(default = "default_world_res")]
    pub resolution: f64,
    #[serde(default)]
    pub obstacles: Vec<Shape>,
}

fn default_world_res() -> f64 {
    0.2
}

/// Obstacle points fed to the stage-2 clearance cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObstacleSet {
    /// Occupied cells bordering free space.
    Boundary,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub weights: PlannerWeights,
    pub options: PlannerOptions,
}

impl StageSpec {
    pub fn stage1() -> Self {
        Self {
            weights: PlannerWeights::stage1_default(),
            options: PlannerOptions::stage1_default(),
        }
    }

    pub fn stage2() -> Self {
        Self {
            weights: PlannerWeights::stage2_default(),
            options: PlannerOptions::stage2_default(),
        }
    }
}

fn merge(base: &mut serde_json::Value, patch: serde_json::Value) {
    match (base, patch) {
        (serde_json::Value::Object(b), serde_json::Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Fills fields missing from the document with the given stage defaults.
fn overlay_stage<'de, D: Deserializer<'de>>(d: D, base: StageSpec) -> Result<StageSpec, D::Error> {
    let patch = serde_json::Value::deserialize(d)?;
    let mut v = serde_json::to_value(base).map_err(de::Error::custom)?;
    merge(&mut v, patch);
    serde_json::from_value(v).map_err(de::Error::custom)
}

fn stage1_overlay<'de, D: Deserializer<'de>>(d: D) -> Result<StageSpec, D::Error> {
    overlay_stage(d, StageSpec::stage1())
}

fn stage2_overlay<'de, D: Deserializer<'de>>(d: D) -> Result<StageSpec, D::Error> {
    overlay_stage(d, StageSpec::stage2())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlannerSpec {
    /// Obstacle inflation for the grid search; half the vehicle width when
    /// omitted.
    pub search_clearance: Option<f64>,
    /// Arc-length spacing of the search path resampling, metres.
    pub waypoint_spacing: f64,
    #[serde(deserialize_with = "stage1_overlay")]
    pub stage1: StageSpec,
    #[serde(deserialize_with = "stage2_overlay")]
    pub stage2: StageSpec,
    pub obstacle_set: ObstacleSet,
    /// Stage-2 reruns with a scaled obstacle weight when the result collides.
    pub feasibility_retries: usize,
    pub obstacle_weight_growth: f64,
}

impl Default for PlannerSpec {
    fn default() -> Self {
        Self {
            search_clearance: None,
            waypoint_spacing: 2.0,
            stage1: StageSpec::stage1(),
            stage2: StageSpec::stage2(),
            obstacle_set: ObstacleSet::Boundary,
            feasibility_retries: 2,
            obstacle_weight_growth: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub resolution: f64,
    /// Growth of the path bounding box; vehicle length plus the safety
    /// distance when omitted.
    pub margin: Option<f64>,
    pub search: SearchOptions,
    /// Worker threads, 0 for all cores. `SWEPTPLAN_THREADS` overrides it.
    pub threads: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            margin: None,
            search: SearchOptions::default(),
            threads: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrackSpec {
    pub sim: SimConfig,
    /// Uniform random perturbation bounds added to the initial pose,
    /// drawn from the scenario seed.
    pub initial_jitter: [f64; 3],
    /// Steady-state statistics start here; one prediction horizon when
    /// omitted.
    pub steady_state_from: Option<f64>,
}

impl Default for TrackSpec {
    fn default() -> Self {
        Self {
            sim: SimConfig::default(),
            initial_jitter: [0.0; 3],
            steady_state_from: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    pub svg: bool,
    pub footprints: usize,
    /// Also write wall-clock timings to `timing.json`.
    pub timing: bool,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            svg: true,
            footprints: 10,
            timing: false,
        }
    }
}

/// Document as written; optional blocks may be missing.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema: Option<u32>,
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    vehicle: Option<VehicleSpec>,
    #[serde(default)]
    world: Option<WorldSpec>,
    #[serde(default)]
    start: Option<Pose2>,
    #[serde(default)]
    goal: Option<Pose2>,
    #[serde(default)]
    planner: PlannerSpec,
    #[serde(default)]
    mpc: MpcConfig,
    #[serde(default)]
    track: TrackSpec,
    #[serde(default)]
    sweep: SweepSpec,
    #[serde(default)]
    output: OutputSpec,
    #[serde(default)]
    seed: u64,
}

/// Fully resolved scenario with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema: u32,
    pub name: String,
    pub vehicle: VehicleSpec,
    pub world: WorldSpec,
    pub start: Pose2,
    pub goal: Pose2,
    pub planner: PlannerSpec,
    pub mpc: MpcConfig,
    pub track: TrackSpec,
    pub sweep: SweepSpec,
    pub output: OutputSpec,
    pub seed: u64,
}

pub fn parse_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => ScenarioError::FileNotFound(path.display().to_string()),
        _ => ScenarioError::Io(e.to_string()),
    })?;
    parse_scenario_str(&text)
}

pub fn parse_scenario_str(text: &str) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = serde_json::from_str(text).map_err(|e| ScenarioError::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    resolve(file)
}

fn resolve(f: ScenarioFile) -> Result<Scenario, ScenarioError> {
    let schema = f.schema.ok_or_else(|| ScenarioError::invalid("schema", "missing"))?;
    if schema != SCHEMA_VERSION {
        return Err(ScenarioError::invalid("schema", format!("unsupported version {schema}")));
    }
    let mut vehicle = f.vehicle.ok_or_else(|| ScenarioError::invalid("vehicle", "missing"))?;
    if vehicle.wheel_positions.is_none() {
        vehicle.wheel_positions = Some(default_wheel_positions(vehicle.length, vehicle.width, vehicle.axle_count));
    }
    let world = f.world.ok_or_else(|| ScenarioError::invalid("world", "missing"))?;
    let start = f.start.ok_or_else(|| ScenarioError::invalid("start", "missing"))?;
    let goal = f.goal.ok_or_else(|| ScenarioError::invalid("goal", "missing"))?;
    let mut planner = f.planner;
    if planner.search_clearance.is_none() {
        planner.search_clearance = Some(0.5 * vehicle.width);
    }
    let mut sweep = f.sweep;
    if sweep.margin.is_none() {
        sweep.margin = Some(vehicle.length + planner.stage2.weights.safety_distance);
    }
    let mut track = f.track;
    if track.steady_state_from.is_none() {
        track.steady_state_from = Some(f.mpc.np as f64 * f.mpc.dt);
    }
    let s = Scenario {
        schema,
        name: f.name.unwrap_or_else(|| "scenario".to_string()),
        vehicle,
        world,
        start,
        goal,
        planner,
        mpc: f.mpc,
        track,
        sweep,
        output: f.output,
        seed: f.seed,
    };
    s.validate()?;
    Ok(s)
}

impl Scenario {
    pub fn vehicle_params(&self) -> VehicleParams {
        self.vehicle.to_params()
    }

    pub fn bounds(&self) -> Region {
        self.world.bounds.expect("validated scenario has bounds")
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.vehicle_params().validate().map_err(|e| ScenarioError::invalid("vehicle", e.to_string()))?;
        let bounds = self.world.bounds.ok_or_else(|| ScenarioError::invalid("world.bounds", "missing"))?;
        if bounds.is_degenerate() {
            return Err(ScenarioError::invalid("world.bounds", "empty region"));
        }
        if !(self.world.resolution > 0.0) {
            return Err(ScenarioError::invalid("world.resolution", "must be positive"));
        }
        for (name, p) in [("start", &self.start), ("goal", &self.goal)] {
            if !bounds.contains([p.x, p.y]) {
                return Err(ScenarioError::invalid(name, "outside world bounds"));
            }
        }
        if !(self.planner.waypoint_spacing > 0.0) {
            return Err(ScenarioError::invalid("planner.waypoint_spacing", "must be positive"));
        }
        if self.planner.search_clearance.is_some_and(|c| c < 0.0) {
            return Err(ScenarioError::invalid("planner.search_clearance", "must be nonnegative"));
        }
        if !(self.planner.obstacle_weight_growth >= 1.0) {
            return Err(ScenarioError::invalid("planner.obstacle_weight_growth", "must be at least 1"));
        }
        for (name, o) in [("planner.stage1.options", &self.planner.stage1.options), ("planner.stage2.options", &self.planner.stage2.options)] {
            if o.memory == 0 || !(o.min_duration > 0.0) || !(o.initial_speed > 0.0) || !(o.check_dt > 0.0) {
                return Err(ScenarioError::invalid(name, "memory, min_duration, initial_speed and check_dt must be positive"));
            }
        }
        self.mpc.validate().map_err(|e| ScenarioError::invalid("mpc", e.to_string()))?;
        let sim = &self.track.sim;
        if !(sim.settle_time >= 0.0) || !(sim.input_lag >= 0.0) || !(sim.reference_spacing > 0.0) {
            return Err(ScenarioError::invalid("track.sim", "settle_time, input_lag must be nonnegative and reference_spacing positive"));
        }
        if self.track.initial_jitter.iter().any(|j| !(*j >= 0.0)) {
            return Err(ScenarioError::invalid("track.initial_jitter", "must be nonnegative"));
        }
        if !(self.sweep.resolution > 0.0) {
            return Err(ScenarioError::invalid("sweep.resolution", "must be positive"));
        }
        if self.sweep.margin.is_some_and(|m| !(m >= 0.0)) {
            return Err(ScenarioError::invalid("sweep.margin", "must be nonnegative"));
        }
        if self.sweep.search.coarse_samples < 2 || !(self.sweep.search.time_tol > 0.0) {
            return Err(ScenarioError::invalid("sweep.search", "need coarse_samples >= 2 and positive time_tol"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "schema": 1,
        "vehicle": {"length": 4.0, "width": 2.0},
        "world": {"bounds": {"min": [-10, -10], "max": [10, 10]}},
        "start": {"x": -5, "y": 0, "phi": 0},
        "goal": {"x": 5, "y": 0, "phi": 0}
    }"#;

    #[test]
    fn minimal_file_gets_defaults() {
        let s = parse_scenario_str(MINIMAL).unwrap();
        assert_eq!(s.vehicle.axle_count, 2);
        assert_eq!(s.vehicle.wheel_positions.as_ref().unwrap().len(), 4);
        assert_eq!(s.planner.search_clearance, Some(1.0));
        assert_eq!(s.sweep.margin, Some(4.3));
        assert_eq!(s.mpc, MpcConfig::default());
        assert_eq!(s.planner.stage1, StageSpec::stage1());
        // the echo parses back to the same scenario
        let echo = serde_json::to_string(&s).unwrap();
        assert_eq!(parse_scenario_str(&echo).unwrap(), s);
    }

    #[test]
    fn partial_stage_keeps_stage_defaults() {
        let text = MINIMAL.replace(
            r#""schema": 1,"#,
            r#""schema": 1, "planner": {"stage1": {"weights": {"time": 5.0}}},"#,
        );
        let s = parse_scenario_str(&text).unwrap();
        assert_eq!(s.planner.stage1.weights.time, 5.0);
        assert_eq!(s.planner.stage1.weights.deviation, PlannerWeights::stage1_default().deviation);
        assert_eq!(s.planner.stage1.options, PlannerOptions::stage1_default());
        let bad = MINIMAL.replace(r#""schema": 1,"#, r#""schema": 1, "planner": {"stage2": {"weights": {"tme": 5.0}}},"#);
        assert!(matches!(parse_scenario_str(&bad), Err(ScenarioError::ParseError { .. })));
    }

    #[test]
    fn missing_vehicle() {
        let text = MINIMAL.replace(r#""vehicle": {"length": 4.0, "width": 2.0},"#, "");
        match parse_scenario_str(&text) {
            Err(ScenarioError::ValidationError(f, _)) => assert_eq!(f, "vehicle"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn unknown_key() {
        let text = MINIMAL.replace(r#""width": 2.0"#, r#""width": 2.0, "wheels_raidus": 0.3"#);
        match parse_scenario_str(&text) {
            Err(ScenarioError::ParseError { message, line, .. }) => {
                assert!(message.contains("wheels_raidus"), "{message}");
                assert_eq!(line, 3);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_file() {
        assert!(matches!(
            parse_scenario(Path::new("/nonexistent/scenario.json")),
            Err(ScenarioError::FileNotFound(_))
        ));
    }
}
