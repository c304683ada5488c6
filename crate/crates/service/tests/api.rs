use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use propforge_core::cfm::train_cfm;
use propforge_core::config::Layout;
use propforge_core::dataset::generate_dataset;
use propforge_core::hydro::OperatingGrid;
use propforge_core::nn::{NetSpec, TrainSchedule};
use propforge_core::par::Execution;
use propforge_core::surrogate::train_surrogates;
use propforge_service::{router, AppState, Models};

fn tiny(epochs: usize) -> NetSpec {
    NetSpec {
        hidden_layers: 2,
        hidden_width: 16,
        schedule: TrainSchedule { epochs, batch_size: 32, lr_initial: 1e-3, lr_drop_epoch: epochs / 2, lr_drop_factor: 0.1 },
    }
}

/// Checkpoints trained on a small simulated set, saved and reloaded.
fn trained_dir() -> &'static std::path::Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = generate_dataset(60, 3).unwrap().dataset;
        let layout = Layout::new(dir.path());
        train_cfm(&data, &tiny(40), 1).unwrap().model.save(&layout.cfm_checkpoint()).unwrap();
        train_surrogates(&data, &tiny(40), 2, Execution::Sequential).unwrap().set.save(&layout.models()).unwrap();
        dir
    })
    .path()
}

fn loaded() -> Arc<AppState> {
    static STATE: OnceLock<Arc<AppState>> = OnceLock::new();
    STATE.get_or_init(|| Arc::new(AppState::from_data_dir(trained_dir(), OperatingGrid::default()))).clone()
}

fn empty() -> Arc<AppState> {
    let dir = tempfile::tempdir().unwrap();
    Arc::new(AppState::from_data_dir(dir.path(), OperatingGrid::default()))
}

async fn call(state: Arc<AppState>, method: &str, path: &str, body: Option<String>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(path)
        .header("content-type", "application/json")
        .body(body.map(Body::from).unwrap_or_else(Body::empty))
        .unwrap();
    let resp = router(state).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(state: Arc<AppState>, path: &str, body: Value) -> (StatusCode, Value) {
    call(state, "POST", path, Some(body.to_string())).await
}

fn schema_validator(def: &str) -> jsonschema::Validator {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/api.schema.json")).unwrap();
    let mut schema: Value = serde_json::from_str(&text).unwrap();
    schema["$ref"] = json!(format!("#/$defs/{def}"));
    jsonschema::validator_for(&schema).unwrap()
}

fn assert_schema(def: &str, v: &Value) {
    let validator = schema_validator(def);
    let errors: Vec<String> = validator.iter_errors(v).map(|e| e.to_string()).collect();
    assert!(errors.is_empty(), "{def}: {errors:?}\n{v}");
}

fn design() -> Value {
    json!({"n_blades": 4, "P": 1.0, "w_rp": 0.7, "w_c": 0.8, "w_rc": 0.65, "camber": 0.02})
}

#[tokio::test]
async fn generate_returns_one_entry_per_requested_design() {
    let body = json!({"targets": {"j_star": 1.209, "kt_star": 0.1402}, "count": 100, "seed": 4});
    let (status, v) = post(loaded(), "/api/generate", body).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["designs"].as_array().unwrap().len(), 100);
    assert_eq!(v["stats"]["count"], 100);
    assert_eq!(v["tolerance"], 0.02);
    assert_eq!(v["steps"], 100);
    for d in v["designs"].as_array().unwrap() {
        assert!(d["valid"].is_boolean());
        assert_eq!(d["condition"]["j_star"], 1.209);
    }
    assert_schema("GenerateResponse", &v);
}

#[tokio::test]
async fn generate_is_deterministic_per_seed() {
    let body = json!({"targets": {"eta_star": 0.7}, "count": 7, "seed": 11, "steps": 20});
    let (_, a) = post(loaded(), "/api/generate", body.clone()).await;
    let (_, b) = post(loaded(), "/api/generate", body).await;
    assert_eq!(a, b);
    let (_, c) = post(loaded(), "/api/generate", json!({"targets": {"eta_star": 0.7}, "count": 7, "seed": 12, "steps": 20})).await;
    assert_ne!(a["designs"], c["designs"]);
    let etas: Vec<f64> = a["designs"].as_array().unwrap().iter().map(|d| d["condition"]["eta_star"].as_f64().unwrap()).collect();
    assert!(etas.iter().all(|e| *e == 0.7));
    let js: Vec<f64> = a["designs"].as_array().unwrap().iter().map(|d| d["condition"]["j_star"].as_f64().unwrap()).collect();
    assert!(js.windows(2).any(|w| w[0] != w[1]), "free labels are sampled per design");
}

#[tokio::test]
async fn generate_rejects_bad_requests() {
    for (body, field) in [
        (json!({"targets": {"j_star": 1.0}, "count": 0}), "count"),
        (json!({"targets": {"j_star": 1.0}, "count": 1001}), "count"),
        (json!({"targets": {}, "count": 3}), "targets"),
        (json!({"targets": {"j_star": -1.0}, "count": 3}), "j_star"),
        (json!({"targets": {"j_star": 1.0}}), "count"),
        (json!({"targets": {"j_star": 1.0}, "count": 3, "colour": 1}), "colour"),
        (json!({"targets": {"j_star": 1.0}, "count": 3, "steps": 0}), "steps"),
    ] {
        let (status, v) = post(loaded(), "/api/generate", body.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{body}");
        assert_eq!(v["field"], field, "{body}: {v}");
        assert_schema("ApiError", &v);
    }
}

#[tokio::test]
async fn generate_without_checkpoints_is_unavailable() {
    let (status, v) = post(empty(), "/api/generate", json!({"targets": {"j_star": 1.0}, "count": 5})).await;
    assert_eq!(status, StatusCode::SERVICE_UNAVAILABLE);
    assert!(v["error"].as_str().unwrap().contains("cfm checkpoint not found"), "{v}");
    let (status, _) = post(empty(), "/api/generate", json!({"targets": {"j_star": 1.0}, "count": 0})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn simulate_returns_curve_and_labels() {
    let (status, v) = post(empty(), "/api/simulate", design()).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["curve"]["J"].as_array().unwrap().len(), 28);
    assert_eq!(v["curve"]["kT"].as_array().unwrap().len(), 28);
    let eta = v["labels"]["eta_star"].as_f64().unwrap();
    assert!(eta > 0.0 && eta < 1.0);
    assert_schema("SimulateResponse", &v);
    let (_, again) = post(empty(), "/api/simulate", design()).await;
    assert_eq!(v, again);
}

#[tokio::test]
async fn simulate_reports_boundary_optimum_as_data() {
    let grid = OperatingGrid::uniform(0.25, 0.4, 0.05).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let state = Arc::new(AppState::from_data_dir(dir.path(), grid));
    let (status, v) = post(state, "/api/simulate", design()).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    assert_eq!(v["labels"]["invalid"]["reason"], "boundary_optimum", "{v}");
    assert_schema("SimulateResponse", &v);
}

#[tokio::test]
async fn simulate_rejects_designs_outside_the_box() {
    let mut p = design();
    p["n_blades"] = json!(7);
    let (status, v) = post(empty(), "/api/simulate", p).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "n_blades");
    let mut p = design();
    p["P"] = json!(1.7);
    let (status, v) = post(empty(), "/api/simulate", p).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "P");
}

#[tokio::test]
async fn geometry_has_ten_rows() {
    let (status, v) = post(empty(), "/api/geometry", design()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["rows"].as_array().unwrap().len(), 10);
    assert_schema("GeometryResponse", &v);
    let (_, again) = post(empty(), "/api/geometry", design()).await;
    assert_eq!(v, again);
}

#[tokio::test]
async fn malformed_geometry_body_names_the_field() {
    let (status, v) = call(empty(), "POST", "/api/geometry", Some("{\"n_blades\": 3}".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(v["field"], "P");
    let (status, v) = call(empty(), "POST", "/api/geometry", Some("not json".into())).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(v["error"].as_str().unwrap().starts_with("invalid request body"));
    let mut p = design();
    p["w_c"] = json!("wide");
    let (status, v) = post(empty(), "/api/geometry", p).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
}

#[tokio::test]
async fn model_info_describes_loaded_models() {
    let (status, v) = call(loaded(), "GET", "/api/model-info", None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["models_loaded"], true);
    assert_eq!(v["models"]["field"]["hidden_width"], 16);
    let env = &v["models"]["label_envelope"]["eta_star"];
    assert!(env[0].as_f64().unwrap() < env[1].as_f64().unwrap());
    assert_eq!(v["design_ranges"]["P"], json!({"lo": 0.5, "hi": 1.5}));
    assert_eq!(v["max_count"], 1000);
    assert_schema("ModelInfo", &v);

    let (_, v) = call(empty(), "GET", "/api/model-info", None).await;
    assert_eq!(v["models_loaded"], false);
    assert!(v["unavailable_reason"].as_str().unwrap().contains("not found"));
    assert_schema("ModelInfo", &v);
}

#[tokio::test]
async fn schema_accepts_requests_the_service_accepts() {
    let req = json!({"targets": {"eta_star": 0.8, "j_star": 1.0, "kt_star": 0.1}, "count": 5, "steps": 50, "seed": 1, "tolerance": 0.05});
    assert_schema("GenerateRequest", &req);
    assert_schema("DesignVector", &design());
    let validator = schema_validator("GenerateRequest");
    assert!(!validator.is_valid(&json!({"targets": {}, "count": 0})));
}

#[test]
fn models_load_from_a_data_directory() {
    let m = Models::load(&Layout::new(trained_dir())).unwrap();
    assert_eq!(m.cfm.field.config().hidden_layers, 2);
    let missing = Models::load(&Layout::new("/nonexistent/propforge")).unwrap_err();
    assert!(missing.to_string().starts_with("cfm checkpoint not found"));
}

#[tokio::test]
async fn unknown_route_is_not_found() {
    let (status, _) = call(empty(), "GET", "/api/nothing", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}
