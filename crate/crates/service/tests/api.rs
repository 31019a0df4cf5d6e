use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use geolens_core::pipeline::{execute, LensConfig, PipelineConfig};
use geolens_core::{ImageBuffer, Vec2};
use geolens_service::{router, AppState, CreatedSession, LensResponse, ServiceConfig};

fn app() -> Router {
    router(AppState::new(ServiceConfig::default()))
}

fn texture() -> ImageBuffer {
    ImageBuffer::checkerboard(80, 64, 8, [250, 250, 250, 255], [10, 60, 120, 255])
}

async fn send(app: &Router, method: Method, uri: &str, body: Vec<u8>) -> (StatusCode, Vec<u8>) {
    let req = Request::builder().method(method).uri(uri).body(Body::from(body)).unwrap();
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    (status, res.into_body().collect().await.unwrap().to_bytes().to_vec())
}

async fn create(app: &Router) -> String {
    let (status, body) = send(app, Method::POST, "/sessions?rows=24&cols=30", texture().to_png().unwrap()).await;
    assert_eq!(status, StatusCode::CREATED);
    let created: CreatedSession = serde_json::from_slice(&body).unwrap();
    assert_eq!((created.width, created.height, created.rows, created.cols), (80, 64, 24, 30));
    created.id
}

async fn put_lens(app: &Router, id: &str, lens: Value) -> (StatusCode, Value) {
    let (status, body) = send(app, Method::PUT, &format!("/sessions/{id}/lens"), lens.to_string().into_bytes()).await;
    (status, serde_json::from_slice(&body).unwrap())
}

fn lens(h0: f64, alpha: f64) -> Value {
    json!({
        "shape": { "kind": "circle", "center": [40.0, 32.0], "radius": 14.0 },
        "h0": h0,
        "alpha": alpha,
    })
}

#[tokio::test]
async fn health() {
    let (status, body) = send(&app(), Method::GET, "/healthz", vec![]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, b"ok");
}

#[tokio::test]
async fn flat_lens_returns_the_upload() {
    let app = app();
    let id = create(&app).await;
    let (status, report) = put_lens(&app, &id, lens(0.0, 0.0)).await;
    assert_eq!(status, StatusCode::OK, "{report}");
    assert_eq!(report["iterations"], 1);
    let (status, png) = send(&app, Method::GET, &format!("/sessions/{id}/result.png"), vec![]).await;
    assert_eq!(status, StatusCode::OK);
    let img = ImageBuffer::from_png(&png).unwrap();
    assert!(img.rms_difference(&texture()).unwrap() < 1.0 / 255.0);
    let (status, heat) = send(&app, Method::GET, &format!("/sessions/{id}/heatmap.png"), vec![]).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(ImageBuffer::from_png(&heat).unwrap().width(), 80);
}

#[tokio::test]
async fn alpha_change_reuses_the_factorization() {
    let app = app();
    let id = create(&app).await;
    let (_, first) = put_lens(&app, &id, lens(10.0, 0.0)).await;
    let first: LensResponse = serde_json::from_value(first).unwrap();
    assert!(!first.factor_cache_hit);
    assert!(first.factorization_ms > 0.0);

    let (status, second) = put_lens(&app, &id, lens(10.0, 0.5)).await;
    assert_eq!(status, StatusCode::OK);
    let second: LensResponse = serde_json::from_value(second).unwrap();
    assert!(second.factor_cache_hit);
    assert_eq!(second.factorization_ms, 0.0);
    assert!(second.iteration_ms.iter().sum::<f64>() > 0.0);
    assert_eq!(second.result_url, format!("/sessions/{id}/result.png"));

    // Heights enter the system matrix, so a new h0 needs a new factorization.
    let (_, third) = put_lens(&app, &id, lens(12.0, 0.5)).await;
    assert_eq!(third["factor_cache_hit"], false);

    let (_, info) = send(&app, Method::GET, &format!("/sessions/{id}"), vec![]).await;
    let info: Value = serde_json::from_slice(&info).unwrap();
    assert_eq!(info["lens"]["h0"], 12.0);
    assert_eq!(info["cached_factorizations"], 2);
}

#[tokio::test]
async fn results_match_the_engine_run_directly() {
    let app = app();
    let id = create(&app).await;
    let (status, _) = put_lens(&app, &id, lens(12.0, 0.1)).await;
    assert_eq!(status, StatusCode::OK);
    let (_, png) = send(&app, Method::GET, &format!("/sessions/{id}/result.png"), vec![]).await;

    let mut config = PipelineConfig::default_scenario(80, 64);
    config.mesh.rows = 24;
    config.mesh.cols = 30;
    config.solver.alpha = 0.1;
    config.lenses = vec![LensConfig::circle(Vec2::new(40.0, 32.0), 14.0, 12.0)];
    let direct = execute(&config, &texture(), None).unwrap();
    assert_eq!(ImageBuffer::from_png(&png).unwrap(), direct.image);
}

#[tokio::test]
async fn sessions_are_independent() {
    let app = app();
    let (a, b) = (create(&app).await, create(&app).await);
    assert_ne!(a, b);
    let (ra, rb) = tokio::join!(put_lens(&app, &a, lens(6.0, 0.0)), put_lens(&app, &b, lens(14.0, 0.0)));
    assert_eq!((ra.0, rb.0), (StatusCode::OK, StatusCode::OK));
    assert_ne!(ra.1["energy_trace"], rb.1["energy_trace"]);
}

#[tokio::test]
async fn unknown_and_deleted_sessions_are_404() {
    let app = app();
    let (status, _) = put_lens(&app, "nope", lens(1.0, 0.0)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = create(&app).await;
    let (status, _) = send(&app, Method::GET, &format!("/sessions/{id}/result.png"), vec![]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, Method::DELETE, &format!("/sessions/{id}"), vec![]).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = send(&app, Method::DELETE, &format!("/sessions/{id}"), vec![]).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = put_lens(&app, &id, lens(1.0, 0.0)).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn invalid_lenses_are_400_with_the_field() {
    let app = app();
    let id = create(&app).await;
    let cases = [
        (json!({ "shape": { "kind": "circle", "center": [1.0, 1.0], "radius": 3.0 } }), "h0"),
        (json!({ "shape": { "kind": "circle", "center": [1.0, 1.0], "radius": 3.0 }, "h0": 1.0, "gamma": 2 }), "gamma"),
        (json!({ "shape": { "kind": "circle", "center": [40.0, 30.0], "radius": -3.0 }, "h0": 1.0 }), "radius"),
        (json!({ "shape": { "kind": "circle", "center": [40.0, 30.0], "radius": 9.0 }, "h0": 1.0, "alpha": 3.0 }), "alpha"),
        (json!({ "shape": { "kind": "polygon_file", "path": "/etc/passwd" }, "h0": 1.0 }), "polygon_file"),
    ];
    for (body, field) in cases {
        let (status, err) = put_lens(&app, &id, body).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{err}");
        let message = err["error"].as_str().unwrap();
        assert!(message.contains(field), "{message} should name {field}");
    }
    let (status, _) = send(&app, Method::PUT, &format!("/sessions/{id}/lens"), b"{not json".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn bad_uploads_are_400() {
    let app = app();
    let (status, _) = send(&app, Method::POST, "/sessions", b"hello".to_vec()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = send(&app, Method::POST, "/sessions?rows=1", texture().to_png().unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let mut png = texture().to_png().unwrap();
    png.truncate(png.len() / 2);
    let (status, _) = send(&app, Method::POST, "/sessions", png).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);

    let small = router(AppState::new(ServiceConfig {
        max_side: 32,
        ..Default::default()
    }));
    let (status, body) = send(&small, Method::POST, "/sessions", texture().to_png().unwrap()).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    assert!(String::from_utf8_lossy(&body).contains("80x64"));

    let ppm = geolens_core::raster::encode_ppm(&texture());
    let (status, _) = send(&app, Method::POST, "/sessions", ppm).await;
    assert_eq!(status, StatusCode::CREATED);
}
