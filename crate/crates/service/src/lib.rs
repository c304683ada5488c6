//! JSON API over trained generators, surrogates and the open-water solver.
//!
//! | method | path             | body              |
//! |--------|------------------|-------------------|
//! | POST   | /api/generate    | [`GenerateRequest`] |
//! | POST   | /api/simulate    | design vector     |
//! | POST   | /api/geometry    | design vector     |
//! | GET    | /api/model-info  |                   |
//!
//! Request and response shapes are described by `schema/api.schema.json`.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use propforge_core::cfm::{sample_designs, CfmModel, DEFAULT_STEPS};
use propforge_core::config::Layout;
use propforge_core::geometry::{build_blade, export_sections, Bounds, DesignSpace, DesignVector, SectionSpec, BLADE_COUNTS};
use propforge_core::hydro::{simulate, InvalidLabels, LabelVector, OperatingGrid, TargetSpec};
use propforge_core::par::Execution;
use propforge_core::surrogate::{within_tolerance, SurrogateSet, DEFAULT_TOLERANCE};
use propforge_core::Error;

pub const MAX_COUNT: usize = 1000;
pub const MAX_STEPS: usize = 1000;

/// Checkpoints shared by every request.
#[derive(Debug)]
pub struct Models {
    pub cfm: CfmModel,
    pub surrogates: SurrogateSet,
    pub cfm_path: PathBuf,
    pub surrogate_dir: PathBuf,
}

impl Models {
    pub fn load(layout: &Layout) -> propforge_core::Result<Self> {
        let cfm_path = layout.cfm_checkpoint();
        let surrogate_dir = layout.models();
        Ok(Self { cfm: CfmModel::load(&cfm_path)?, surrogates: SurrogateSet::load(&surrogate_dir)?, cfm_path, surrogate_dir })
    }
}

#[derive(Debug)]
pub struct AppState {
    /// `Err` holds the reason generation is unavailable.
    pub models: Result<Models, String>,
    pub grid: OperatingGrid,
    pub execution: Execution,
}

impl AppState {
    /// Loads checkpoints from `data_dir`. Missing or unreadable checkpoints
    /// leave the simulator and geometry endpoints usable.
    pub fn from_data_dir(data_dir: &Path, grid: OperatingGrid) -> Self {
        let models = Models::load(&Layout::new(data_dir)).map_err(|e| e.to_string());
        if let Err(e) = &models {
            log::warn!("generation disabled: {e}");
        }
        Self { models, grid, execution: Execution::Parallel }
    }

    pub fn with_models(models: Models, grid: OperatingGrid) -> Self {
        Self { models: Ok(models), grid, execution: Execution::Parallel }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ApiError {
    pub error: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub field: Option<String>,
}

#[derive(Debug)]
pub struct Rejection {
    status: StatusCode,
    body: ApiError,
}

impl Rejection {
    fn bad_request(message: impl Into<String>, field: Option<&str>) -> Self {
        Self { status: StatusCode::BAD_REQUEST, body: ApiError { error: message.into(), field: field.map(str::to_string) } }
    }

    fn unavailable(message: &str) -> Self {
        Self { status: StatusCode::SERVICE_UNAVAILABLE, body: ApiError { error: message.into(), field: None } }
    }

    fn internal(message: impl Into<String>) -> Self {
        Self { status: StatusCode::INTERNAL_SERVER_ERROR, body: ApiError { error: message.into(), field: None } }
    }
}

impl From<Error> for Rejection {
    fn from(e: Error) -> Self {
        match &e {
            Error::Domain { field, .. } => Self::bad_request(e.to_string(), Some(field)),
            _ => Self::internal(e.to_string()),
        }
    }
}

impl IntoResponse for Rejection {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, Rejection>;

/// Extracts the offending field from a serde message such as
/// "missing field `count`" or "unknown field `colour`, expected ...".
fn serde_field(message: &str) -> Option<&str> {
    let start = message.find('`')? + 1;
    let len = message[start..].find('`')?;
    Some(&message[start..start + len])
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, Rejection> {
    serde_json::from_slice(body).map_err(|e| {
        let msg = e.to_string();
        let field = serde_field(&msg).map(str::to_string);
        Rejection::bad_request(format!("invalid request body: {msg}"), field.as_deref())
    })
}

fn parse_design(body: &Bytes) -> Result<DesignVector, Rejection> {
    let p: DesignVector = parse_body(body)?;
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub targets: TargetSpec,
    pub count: usize,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub tolerance: Option<f64>,
}

impl GenerateRequest {
    pub fn validate(&self) -> Result<(), Rejection> {
        self.targets.validate()?;
        if !(1..=MAX_COUNT).contains(&self.count) {
            return Err(Rejection::bad_request(format!("count must be between 1 and {MAX_COUNT}"), Some("count")));
        }
        if let Some(s) = self.steps {
            if !(1..=MAX_STEPS).contains(&s) {
                return Err(Rejection::bad_request(format!("steps must be between 1 and {MAX_STEPS}"), Some("steps")));
            }
        }
        if let Some(t) = self.tolerance {
            if !(t.is_finite() && t >= 0.0) {
                return Err(Rejection::bad_request("tolerance must be a non-negative number", Some("tolerance")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeneratedDesign {
    pub design: DesignVector,
    pub predicted: LabelVector,
    pub valid: bool,
    /// Design columns moved by rounding or clamping.
    pub clamped: Vec<String>,
    /// Label vector the sample was conditioned on; free labels are sampled.
    pub condition: LabelVector,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerateStats {
    pub count: usize,
    pub valid: usize,
    pub valid_fraction: f64,
    pub clamped: usize,
    pub mean_predicted: LabelVector,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub targets: TargetSpec,
    pub seed: u64,
    pub steps: usize,
    pub tolerance: f64,
    pub designs: Vec<GeneratedDesign>,
    pub stats: GenerateStats,
}

pub fn handle_generate(models: &Models, req: &GenerateRequest, exec: Execution) -> Result<GenerateResponse, Rejection> {
    req.validate()?;
    let steps = req.steps.unwrap_or(DEFAULT_STEPS);
    let seed = req.seed.unwrap_or(0);
    let tolerance = req.tolerance.unwrap_or(DEFAULT_TOLERANCE);
    let report = sample_designs(&models.cfm, &req.targets, req.count, steps, seed, exec)?;
    let predicted = models.surrogates.predict_batch(&report.designs)?;
    let designs: Vec<GeneratedDesign> = report
        .designs
        .iter()
        .zip(&predicted)
        .zip(report.clamped.iter().zip(&report.conditions))
        .map(|((d, p), (c, l))| GeneratedDesign {
            design: *d,
            predicted: *p,
            valid: within_tolerance(&req.targets, p, tolerance),
            clamped: c.names().into_iter().map(String::from).collect(),
            condition: *l,
        })
        .collect();
    let n = designs.len();
    let valid = designs.iter().filter(|d| d.valid).count();
    let mut mean = [0.0; 3];
    for p in &predicted {
        for (m, v) in mean.iter_mut().zip(p.to_array()) {
            *m += v / n as f64;
        }
    }
    Ok(GenerateResponse {
        targets: req.targets,
        seed,
        steps,
        tolerance,
        stats: GenerateStats {
            count: n,
            valid,
            valid_fraction: valid as f64 / n as f64,
            clamped: designs.iter().filter(|d| !d.clamped.is_empty()).count(),
            mean_predicted: LabelVector::from_array(mean),
        },
        designs,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CurvePayload {
    #[serde(rename = "J")]
    pub j: Vec<f64>,
    #[serde(rename = "kT")]
    pub kt: Vec<f64>,
    #[serde(rename = "kQ")]
    pub kq: Vec<f64>,
    /// `null` where kQ is not positive.
    pub eta: Vec<Option<f64>>,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum LabelsPayload {
    Valid(LabelVector),
    Invalid { invalid: InvalidLabels, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SimulateResponse {
    pub design: DesignVector,
    pub curve: CurvePayload,
    pub labels: LabelsPayload,
}

pub fn handle_simulate(p: &DesignVector, grid: &OperatingGrid) -> Result<SimulateResponse, Rejection> {
    p.validate()?;
    let sim = simulate(p, grid)?;
    let labels = match sim.labels {
        Ok(l) => LabelsPayload::Valid(l),
        Err(e) => LabelsPayload::Invalid { invalid: e, message: e.to_string() },
    };
    Ok(SimulateResponse {
        design: *p,
        curve: CurvePayload {
            j: sim.curve.grid.advance_ratios().to_vec(),
            eta: sim.curve.eta(),
            converged: sim.curve.all_converged(),
            kt: sim.curve.kt,
            kq: sim.curve.kq,
        },
        labels,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GeometryResponse {
    pub design: DesignVector,
    pub rows: Vec<SectionSpec>,
}

pub fn handle_geometry(p: &DesignVector) -> Result<GeometryResponse, Rejection> {
    let table = export_sections(&build_blade(p)?);
    Ok(GeometryResponse { design: *p, rows: table.rows })
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct NetworkInfo {
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub n_params: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LoadedModels {
    pub cfm_checkpoint: String,
    pub surrogate_dir: String,
    pub field: NetworkInfo,
    pub surrogates: Vec<NetworkInfo>,
    /// Per-label `[min, max]` of the generator's training labels.
    pub label_envelope: LabelEnvelope,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct LabelEnvelope {
    pub eta_star: [f64; 2],
    pub j_star: [f64; 2],
    pub kt_star: [f64; 2],
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct DesignRanges {
    pub n_blades: Vec<u8>,
    #[serde(rename = "P")]
    pub pitch: Bounds,
    pub w_rp: Bounds,
    pub w_c: Bounds,
    pub w_rc: Bounds,
    pub camber: Bounds,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelInfo {
    pub models_loaded: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub models: Option<LoadedModels>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unavailable_reason: Option<String>,
    pub design_ranges: DesignRanges,
    pub advance_ratios: Vec<f64>,
    pub max_count: usize,
    pub default_steps: usize,
    pub default_tolerance: f64,
}

fn network_info(m: &propforge_core::nn::MlpModel<f32>) -> NetworkInfo {
    let c = m.config();
    NetworkInfo { hidden_layers: c.hidden_layers, hidden_width: c.hidden_width, n_params: m.n_params() }
}

pub fn handle_model_info(state: &AppState) -> ModelInfo {
    let s = DesignSpace::FULL;
    let (models, reason) = match &state.models {
        Ok(m) => {
            let e = m.cfm.label_envelope;
            let loaded = LoadedModels {
                cfm_checkpoint: m.cfm_path.display().to_string(),
                surrogate_dir: m.surrogate_dir.display().to_string(),
                field: network_info(&m.cfm.field),
                surrogates: m.surrogates.models.iter().map(network_info).collect(),
                label_envelope: LabelEnvelope { eta_star: [e[0].0, e[0].1], j_star: [e[1].0, e[1].1], kt_star: [e[2].0, e[2].1] },
            };
            (Some(loaded), None)
        }
        Err(r) => (None, Some(r.clone())),
    };
    ModelInfo {
        models_loaded: models.is_some(),
        models,
        unavailable_reason: reason,
        design_ranges: DesignRanges {
            n_blades: BLADE_COUNTS.to_vec(),
            pitch: s.pitch,
            w_rp: s.w_rp,
            w_c: s.w_c,
            w_rc: s.w_rc,
            camber: s.camber,
        },
        advance_ratios: state.grid.advance_ratios().to_vec(),
        max_count: MAX_COUNT,
        default_steps: DEFAULT_STEPS,
        default_tolerance: DEFAULT_TOLERANCE,
    }
}

async fn generate(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<GenerateResponse> {
    let req: GenerateRequest = parse_body(&body)?;
    req.validate()?;
    if let Err(reason) = &state.models {
        return Err(Rejection::unavailable(reason));
    }
    let resp = tokio::task::spawn_blocking(move || {
        let models = state.models.as_ref().expect("checked above");
        handle_generate(models, &req, state.execution)
    })
    .await
    .map_err(|e| Rejection::internal(e.to_string()))??;
    Ok(Json(resp))
}

async fn simulate_route(State(state): State<Arc<AppState>>, body: Bytes) -> ApiResult<SimulateResponse> {
    let p = parse_design(&body)?;
    let resp =
        tokio::task::spawn_blocking(move || handle_simulate(&p, &state.grid)).await.map_err(|e| Rejection::internal(e.to_string()))??;
    Ok(Json(resp))
}

async fn geometry(body: Bytes) -> ApiResult<GeometryResponse> {
    let p = parse_design(&body)?;
    Ok(Json(handle_geometry(&p)?))
}

async fn model_info(State(state): State<Arc<AppState>>) -> Json<ModelInfo> {
    Json(handle_model_info(&state))
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/api/generate", post(generate))
        .route("/api/simulate", post(simulate_route))
        .route("/api/geometry", post(geometry))
        .route("/api/model-info", get(model_info))
        .with_state(state)
}

pub async fn serve(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}
