use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use image::{Rgb, RgbImage};
use metamorph::likert::http::{router, AppState};
use metamorph::likert::SessionStore;
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(sessions: &Path, static_dir: Option<&Path>) -> Router {
    router(Arc::new(AppState {
        store: SessionStore::open(sessions).unwrap(),
        static_dir: static_dir.map(Path::to_path_buf),
    }))
}

fn write_images(dir: &Path, n: usize) {
    std::fs::create_dir_all(dir).unwrap();
    for i in 0..n {
        RgbImage::from_pixel(4, 4, Rgb([i as u8, 0, 0]))
            .save(dir.join(format!("gen_{i:03}.png")))
            .unwrap();
    }
}

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder()
        .method(method)
        .uri(uri)
        .header("content-type", "application/json")
        .body(body.map_or_else(Body::empty, |b| Body::from(b.to_string())))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v)
}

async fn create(app: &Router, images: &Path, sample: usize) -> Value {
    let (st, v) = call(
        app,
        "POST",
        "/sessions",
        Some(json!({"test_case": "TC01", "images_dir": images, "sample_size": sample, "seed": 11})),
    )
    .await;
    assert_eq!(st, StatusCode::CREATED, "{v}");
    v
}

#[tokio::test]
async fn full_rating_flow() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("gen");
    write_images(&imgs, 8);
    let app = app(&tmp.path().join("sessions"), None);
    let s = create(&app, &imgs, 5).await;
    let id = s["id"].as_str().unwrap().to_string();
    assert_eq!(s["images"].as_array().unwrap().len(), 5);

    let (st, list) = call(&app, "GET", "/sessions", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(list[0]["id"], id.as_str());

    // Rate everything with values cycling 1..=5.
    let mut k = 0;
    loop {
        let (st, next) = call(&app, "GET", &format!("/sessions/{id}/next?rater=ann"), None).await;
        assert_eq!(st, StatusCode::OK);
        if next["done"] == true {
            assert_eq!(next["progress"], json!({"scored": 10, "total": 10}));
            break;
        }
        let body = json!({"rater": "ann", "image": next["image"], "scale": next["scale"], "value": k % 5 + 1});
        let (st, p) = call(&app, "POST", &format!("/sessions/{id}/scores"), Some(body)).await;
        assert_eq!(st, StatusCode::OK, "{p}");
        k += 1;
        assert_eq!(p["scored"], k);
    }

    let (st, agg) = call(&app, "GET", &format!("/sessions/{id}/aggregate"), None).await;
    assert_eq!(st, StatusCode::OK);
    // Prompts alternate scales, so each scale sees values 1,3,5,2,4 or 2,4,1,3,5.
    for scale in ["semantic", "realistic"] {
        assert_eq!(agg["scales"][scale]["n"], 5);
        assert_eq!(agg["scales"][scale]["summary"]["mean"], 3.0);
    }

    let (st, closed) = call(&app, "POST", &format!("/sessions/{id}/close"), None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(closed["status"], "closed");
    let img = s["images"][0]["id"].clone();
    let (st, _) = call(
        &app,
        "POST",
        &format!("/sessions/{id}/scores"),
        Some(json!({"rater": "ann", "image": img, "scale": "semantic", "value": 3})),
    )
    .await;
    assert_eq!(st, StatusCode::CONFLICT);
}

#[tokio::test]
async fn validation_and_lookup_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("gen");
    write_images(&imgs, 4);
    let app = app(&tmp.path().join("sessions"), None);
    let s = create(&app, &imgs, 2).await;
    let id = s["id"].as_str().unwrap();
    let img = s["images"][0]["id"].clone();
    let scores = format!("/sessions/{id}/scores");

    for value in [0, 6, -1] {
        let (st, v) = call(&app, "POST", &scores, Some(json!({"rater": "r", "image": img, "scale": "semantic", "value": value}))).await;
        assert_eq!(st, StatusCode::BAD_REQUEST, "{v}");
        assert!(v["error"].is_string());
    }
    let (st, _) = call(&app, "POST", &scores, Some(json!({"rater": "r", "image": img, "scale": "colour", "value": 3}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", &scores, Some(json!({"rater": "r", "image": "nope", "scale": "semantic", "value": 3}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "POST", &scores, Some(json!({"rater": "r"}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    let (st, _) = call(&app, "POST", "/sessions/s9999/scores", Some(json!({"rater": "r", "image": img, "scale": "semantic", "value": 3}))).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", "/sessions/s9999/aggregate", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
    let (st, _) = call(&app, "GET", &format!("/sessions/{id}/next"), None).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);

    let (st, v) = call(&app, "POST", "/sessions", Some(json!({"test_case": "x", "images_dir": imgs, "sample_size": 50}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST, "{v}");
    let (st, _) = call(&app, "POST", "/sessions", Some(json!({"test_case": "x", "images": []}))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn images_are_served_with_content_type() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("gen");
    write_images(&imgs, 3);
    let app = app(&tmp.path().join("sessions"), None);
    let s = create(&app, &imgs, 3).await;
    let img = s["images"][0]["id"].as_str().unwrap();
    let id = s["id"].as_str().unwrap();

    for uri in [format!("/images/{img}"), format!("/images/{img}?session={id}")] {
        let resp = app.clone().oneshot(Request::get(&uri).body(Body::empty()).unwrap()).await.unwrap();
        assert_eq!(resp.status(), StatusCode::OK);
        assert_eq!(resp.headers()["content-type"], "image/png");
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        assert_eq!(&bytes[..], &std::fs::read(imgs.join(format!("{img}.png"))).unwrap()[..]);
    }
    let (st, _) = call(&app, "GET", "/images/missing", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn scores_persist_across_restart() {
    let tmp = tempfile::tempdir().unwrap();
    let imgs = tmp.path().join("gen");
    write_images(&imgs, 3);
    let sessions = tmp.path().join("sessions");
    let (id, before) = {
        let app = app(&sessions, None);
        let s = create(&app, &imgs, 3).await;
        let id = s["id"].as_str().unwrap().to_string();
        for (i, v) in [2, 4, 5].into_iter().enumerate() {
            let body = json!({"rater": "r", "image": s["images"][i]["id"], "scale": "realistic", "value": v});
            assert_eq!(call(&app, "POST", &format!("/sessions/{id}/scores"), Some(body)).await.0, StatusCode::OK);
        }
        let (_, agg) = call(&app, "GET", &format!("/sessions/{id}/aggregate"), None).await;
        (id, agg)
    };
    let app = app(&sessions, None);
    let (_, after) = call(&app, "GET", &format!("/sessions/{id}/aggregate"), None).await;
    assert_eq!(before, after);
    assert_eq!(after["scales"]["realistic"]["n"], 3);
    assert_eq!(after["scales"]["semantic"]["summary"], Value::Null);
}

#[tokio::test]
async fn static_files_are_served_when_configured() {
    let tmp = tempfile::tempdir().unwrap();
    let web = tmp.path().join("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html></html>").unwrap();
    let app = app(&tmp.path().join("sessions"), Some(&web));
    let resp = app.clone().oneshot(Request::get("/").body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/html"));
    let (st, _) = call(&app, "GET", "/../secret", None).await;
    assert_eq!(st, StatusCode::NOT_FOUND);
}
