use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use base64::Engine as _;
use http_body_util::BodyExt;
use octa_core::{Grid, Mode, SegTask, TaskName};
use octa_seg::imageio::{decode_mask, encode_gray8};
use octa_seg::model::{AdapterCheckpoint, LoraConfig, ModelConfig, SegModel};
use octa_seg::service::{export, router, Engine, Manifest, ServiceConfig};
use serde_json::{json, Value};
use tower::ServiceExt;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_side: 32,
        embed_dim: 32,
        num_heads: 4,
        encoder_depth: 2,
        decoder_dim: 16,
        decoder_heads: 2,
        decoder_depth: 1,
        stem_channels: 4,
        mid_channels: 8,
        ..ModelConfig::desk()
    }
}

fn serving_dir(tasks: &[SegTask]) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    for &task in tasks {
        let mut model = SegModel::new(tiny_model(), 1).unwrap();
        model.inject_lora(&LoraConfig::default()).unwrap();
        export(dir.path(), &AdapterCheckpoint::from_model(&model, Some(task)).unwrap(), None).unwrap();
    }
    dir
}

fn engine(dir: &tempfile::TempDir) -> Arc<Engine> {
    let cfg = ServiceConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    Arc::new(Engine::from_config(&cfg).unwrap())
}

fn png(w: usize, h: usize) -> Vec<u8> {
    encode_gray8(&Grid::from_fn(w, h, |x, y| ((x * 7 + y * 3) % 11) as f32 / 10.0)).unwrap()
}

const BOUNDARY: &str = "XtestBOUNDARYx";

fn multipart(image: &[u8], fields: &[(&str, &str)]) -> Request<Body> {
    let mut body = Vec::new();
    body.extend_from_slice(
        format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"image\"; filename=\"a.png\"\r\nContent-Type: image/png\r\n\r\n").as_bytes(),
    );
    body.extend_from_slice(image);
    body.extend_from_slice(b"\r\n");
    for (k, v) in fields {
        body.extend_from_slice(format!("--{BOUNDARY}\r\nContent-Disposition: form-data; name=\"{k}\"\r\n\r\n{v}\r\n").as_bytes());
    }
    body.extend_from_slice(format!("--{BOUNDARY}--\r\n").as_bytes());
    Request::post("/sessions")
        .header("content-type", format!("multipart/form-data; boundary={BOUNDARY}"))
        .body(Body::from(body))
        .unwrap()
}

async fn call(engine: &Arc<Engine>, req: Request<Body>) -> (StatusCode, Value) {
    let resp = router(engine.clone()).oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, value)
}

fn predict(id: &str, body: Value) -> Request<Body> {
    Request::post(format!("/sessions/{id}/predict"))
        .header("content-type", "application/json")
        .body(Body::from(body.to_string()))
        .unwrap()
}

async fn open(engine: &Arc<Engine>, w: usize, h: usize) -> String {
    let (status, body) = call(engine, multipart(&png(w, h), &[("task", "RV")])).await;
    assert_eq!(status, StatusCode::CREATED, "{body}");
    body["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn session_echoes_image_size() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let (status, body) = call(&e, multipart(&png(304, 304), &[("task", "rv")])).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!((body["width"].as_u64(), body["height"].as_u64()), (Some(304), Some(304)));
    assert_eq!(body["task"], "rv");
    assert_eq!(body["mode"], "global");
}

#[tokio::test]
async fn same_points_same_mask_and_one_encode() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let id = open(&e, 60, 40).await;
    let pts = json!({ "points": [{ "x": 10, "y": 12, "label": 1 }, { "x": 50.5, "y": 30, "label": 0 }] });
    let (s1, a) = call(&e, predict(&id, pts.clone())).await;
    let (s2, b) = call(&e, predict(&id, pts)).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(a["mask"], b["mask"]);
    assert_eq!(a["all_confidences"].as_array().unwrap().len(), 3);
    let (_, empty) = call(&e, predict(&id, json!({ "points": [] }))).await;
    assert!(empty["mask"].is_string());
    assert_eq!(e.encode_calls(), 1);
    assert_eq!(e.session_encode_calls(&id), Some(1));
    assert_eq!(e.predict_calls(), 3);

    let bytes = base64::engine::general_purpose::STANDARD.decode(a["mask"].as_str().unwrap()).unwrap();
    let mask = decode_mask(&bytes).unwrap();
    assert_eq!((mask.width(), mask.height()), (60, 40));
    assert_eq!((a["width"].as_u64(), a["height"].as_u64()), (Some(60), Some(40)));
}

#[tokio::test]
async fn bad_points_name_their_index() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let id = open(&e, 50, 50).await;
    let (status, body) = call(&e, predict(&id, json!({ "points": [{ "x": -1, "y": 5, "label": 1 }] }))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_point");
    assert_eq!(body["index"], 0);
    let pts = json!({ "points": [{ "x": 1, "y": 1, "label": 1 }, { "x": 3, "y": 50, "label": 0 }] });
    let (_, body) = call(&e, predict(&id, pts)).await;
    assert_eq!(body["index"], 1);
    let (_, body) = call(&e, predict(&id, json!({ "points": [{ "x": 1, "y": 1, "label": 2 }] }))).await;
    assert_eq!(body["index"], 0);
    let (status, body) = call(&e, predict(&id, json!({ "pts": [] }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "bad_request");
}

#[tokio::test]
async fn unknown_task_lists_known_tasks() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let (status, body) = call(&e, multipart(&png(40, 40), &[("task", "bones")])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let msg = body["message"].as_str().unwrap();
    for t in ["RV", "FAZ", "capillary", "artery", "vein"] {
        assert!(msg.contains(t), "{msg}");
    }
    assert_eq!(body["known_tasks"].as_array().unwrap().len(), 5);
    let (status, body) = call(&e, multipart(&png(40, 40), &[("task", "faz")])).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["available_tasks"], json!(["rv:global"]));
}

#[tokio::test]
async fn corrupt_image_is_a_client_error() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let (status, body) = call(&e, multipart(b"not a png", &[("task", "rv")])).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert_eq!(body["error"], "decode_error");
    assert_eq!(e.encode_calls(), 0);
}

#[tokio::test]
async fn tasks_and_health() {
    let empty = Arc::new(Engine::from_config(&ServiceConfig::default()).unwrap());
    let (status, body) = call(&empty, Request::get("/tasks").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["tasks"], json!([]));
    let (status, body) = call(&empty, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "ok");
    assert_eq!(body["models_loaded"], false);

    let dir = serving_dir(&[SegTask::global(TaskName::Rv), SegTask::global(TaskName::Faz)]);
    let e = engine(&dir);
    let (_, body) = call(&e, Request::get("/tasks").body(Body::empty()).unwrap()).await;
    let names: Vec<_> = body["tasks"].as_array().unwrap().iter().map(|t| t["task"].clone()).collect();
    assert_eq!(names, vec![json!("rv"), json!("faz")]);
    open(&e, 40, 40).await;
    let (_, body) = call(&e, Request::get("/health").body(Body::empty()).unwrap()).await;
    assert!(body["sessions"].as_u64().unwrap() >= 1);
    assert_eq!(body["models_loaded"], true);
}

#[tokio::test]
async fn delete_and_expiry() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let e = engine(&dir);
    let id = open(&e, 40, 40).await;
    let del = || Request::delete(format!("/sessions/{id}")).body(Body::empty()).unwrap();
    assert_eq!(call(&e, del()).await.0, StatusCode::NO_CONTENT);
    let (status, body) = call(&e, del()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "session_not_found");
    let (status, _) = call(&e, predict(&id, json!({ "points": [] }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);

    let cfg = ServiceConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    let short = Arc::new(Engine::from_config(&cfg).unwrap().with_ttl(Duration::from_millis(50)));
    let id = open(&short, 40, 40).await;
    std::thread::sleep(Duration::from_millis(80));
    assert_eq!(call(&short, predict(&id, json!({ "points": [] }))).await.0, StatusCode::NOT_FOUND);
    assert_eq!(short.session_count(), 0);
}

#[tokio::test]
async fn least_recently_used_session_is_evicted() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let cfg = ServiceConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        capacity: 2,
        ..ServiceConfig::default()
    };
    let e = Arc::new(Engine::from_config(&cfg).unwrap());
    let a = open(&e, 40, 40).await;
    let b = open(&e, 40, 40).await;
    assert_eq!(call(&e, predict(&a, json!({}))).await.0, StatusCode::OK);
    let c = open(&e, 40, 40).await;
    assert_eq!(e.session_count(), 2);
    assert_eq!(call(&e, predict(&b, json!({}))).await.0, StatusCode::NOT_FOUND);
    for id in [a, c] {
        assert_eq!(call(&e, predict(&id, json!({}))).await.0, StatusCode::OK);
    }
}

#[tokio::test]
async fn mode_selects_between_models() {
    let dir = serving_dir(&[SegTask::global(TaskName::Artery), SegTask::new(TaskName::Artery, Mode::Local).unwrap()]);
    let e = engine(&dir);
    let (_, body) = call(&e, multipart(&png(40, 40), &[("task", "artery")])).await;
    assert_eq!(body["mode"], "global");
    let (_, body) = call(&e, multipart(&png(40, 40), &[("task", "artery"), ("mode", "local")])).await;
    assert_eq!(body["mode"], "local");
}

#[test]
fn manifest_rejects_tampered_adapters() {
    let dir = serving_dir(&[SegTask::global(TaskName::Rv)]);
    let manifest = Manifest::read(dir.path()).unwrap();
    let path = dir.path().join(&manifest.models[0].file);
    let mut bytes = std::fs::read(&path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0xff;
    std::fs::write(&path, bytes).unwrap();
    let cfg = ServiceConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..ServiceConfig::default()
    };
    assert!(Engine::from_config(&cfg).is_err());
}
