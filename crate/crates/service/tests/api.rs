use std::sync::{Arc, OnceLock};

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use qvsum_core::config::TrainingConfig;
use qvsum_core::dataset::{
    generate_synthetic, SeparabilityRule, SyntheticConfig, SyntheticDataset,
};
use qvsum_core::generator::train;
use qvsum_core::generator::InputSource;
use qvsum_core::manifest::Split;
use qvsum_service::{router, AppState, ErrorBody, ErrorCode, SummaryResponse, VideoEntry};

struct Fixture {
    ds: SyntheticDataset,
    state: Arc<AppState>,
}

/// A mult model trained on the query-match corpus, so the query decides
/// which frames are relevant.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let ds = generate_synthetic(&SyntheticConfig {
            n_pairs: 50,
            rule: SeparabilityRule::QueryMatch,
            ..Default::default()
        })
        .unwrap();
        let model = train(
            &ds.manifest,
            InputSource::Frames(&ds),
            &TrainingConfig::synthetic_ablation(),
        )
        .unwrap()
        .final_model;
        let test_pairs = ds.manifest.split_pairs(Split::Test).into_iter().cloned();
        let state = AppState::new(model, test_pairs, Box::new(ds.clone())).unwrap();
        Fixture {
            ds,
            state: Arc::new(state),
        }
    })
}

fn app() -> Router {
    router(fixture().state.clone(), None)
}

async fn send(req: Request<Body>) -> (StatusCode, Vec<u8>, Option<String>) {
    let resp = app().oneshot(req).await.unwrap();
    let status = resp.status();
    let ctype = resp
        .headers()
        .get(header::CONTENT_TYPE)
        .map(|v| v.to_str().unwrap().to_string());
    let body = resp
        .into_body()
        .collect()
        .await
        .unwrap()
        .to_bytes()
        .to_vec();
    (status, body, ctype)
}

async fn get(uri: &str) -> (StatusCode, Vec<u8>, Option<String>) {
    send(Request::get(uri).body(Body::empty()).unwrap()).await
}

async fn post(body: Value) -> (StatusCode, Vec<u8>) {
    let req = Request::post("/summarize")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from(body.to_string()))
        .unwrap();
    let (s, b, _) = send(req).await;
    (s, b)
}

fn error_code(body: &[u8]) -> ErrorCode {
    serde_json::from_slice::<ErrorBody>(body)
        .unwrap()
        .error
        .code
}

#[tokio::test]
async fn videos_are_sorted_and_stable() {
    let (status, body, _) = get("/videos").await;
    assert_eq!(status, StatusCode::OK);
    let videos: Vec<VideoEntry> = serde_json::from_slice(&body).unwrap();
    let test_ids = fixture().ds.manifest.split_assignment.ids(Split::Test);
    assert_eq!(videos.len(), test_ids.len());
    assert!(videos.windows(2).all(|w| w[0].video_id < w[1].video_id));
    let again = get("/videos").await.1;
    assert_eq!(body, again);
}

#[tokio::test]
async fn empty_service_lists_nothing() {
    let f = fixture();
    let state = AppState::new(f.state.model().clone(), [], Box::new(f.ds.clone())).unwrap();
    let resp = router(Arc::new(state), None)
        .oneshot(Request::get("/videos").body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let body = resp.into_body().collect().await.unwrap().to_bytes();
    assert_eq!(&body[..], b"[]");
}

fn first_video() -> VideoEntry {
    fixture().state.videos().remove(0)
}

#[tokio::test]
async fn summarize_is_deterministic_and_consistent() {
    let v = first_video();
    let payload = json!({"video_id": v.video_id, "query": v.default_query, "k": 7});
    let (s1, b1) = post(payload.clone()).await;
    let (s2, b2) = post(payload).await;
    assert_eq!((s1, s2), (StatusCode::OK, StatusCode::OK));
    assert_eq!(b1, b2);

    let r: SummaryResponse = serde_json::from_slice(&b1).unwrap();
    assert_eq!(r.scores.len(), 199);
    assert_eq!(r.mask.len(), 199);
    assert!(r.indices.len() <= 7);
    assert!(r.indices.windows(2).all(|w| w[0] < w[1]));
    for (s, m) in r.scores.iter().zip(&r.mask) {
        assert_eq!(*m, *s >= 2);
    }
    for &i in &r.indices {
        assert!(i < r.original_frame_count && r.mask[i]);
    }
    let relevant = (0..r.original_frame_count).filter(|&i| r.mask[i]).count();
    assert_eq!(r.indices.len(), relevant.min(7));
    assert_eq!(r.empty_summary, relevant == 0);
    assert_eq!(r.frame_urls.len(), r.indices.len());
    assert!(!r.oov_warning);
}

#[tokio::test]
async fn different_queries_give_different_summaries() {
    let f = fixture();
    let mut diverged = 0;
    for v in f.state.videos() {
        let mut sets = Vec::new();
        for concept in ["beach", "city", "forest", "snow"] {
            let (s, b) = post(json!({"video_id": v.video_id, "query": concept, "k": 7})).await;
            assert_eq!(s, StatusCode::OK);
            sets.push(
                serde_json::from_slice::<SummaryResponse>(&b)
                    .unwrap()
                    .indices,
            );
        }
        if sets.iter().any(|s| *s != sets[0]) {
            diverged += 1;
        }
    }
    assert!(diverged > 0);
}

#[tokio::test]
async fn request_errors() {
    let v = first_video();
    let (s, b) = post(json!({"video_id": "nope", "query": "beach", "k": 3})).await;
    assert_eq!(
        (s, error_code(&b)),
        (StatusCode::NOT_FOUND, ErrorCode::UnknownVideo)
    );
    for k in [0, -2] {
        let (s, b) = post(json!({"video_id": v.video_id, "query": "beach", "k": k})).await;
        assert_eq!(
            (s, error_code(&b)),
            (StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::InvalidK)
        );
    }
    let (s, b) = post(json!({"video_id": v.video_id, "query": "  ", "k": 3})).await;
    assert_eq!(
        (s, error_code(&b)),
        (StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::EmptyQuery)
    );
    let (s, b) = post(json!({"video_id": v.video_id, "k": 3})).await;
    assert_eq!(
        (s, error_code(&b)),
        (StatusCode::UNPROCESSABLE_ENTITY, ErrorCode::InvalidBody)
    );

    let req = Request::post("/summarize")
        .header(header::CONTENT_TYPE, "application/json")
        .body(Body::from("{not json"))
        .unwrap();
    let (s, b, _) = send(req).await;
    assert_eq!(
        (s, error_code(&b)),
        (StatusCode::BAD_REQUEST, ErrorCode::MalformedJson)
    );
    let req = Request::post("/summarize").body(Body::from("{}")).unwrap();
    let (s, b, _) = send(req).await;
    assert_eq!(
        (s, error_code(&b)),
        (
            StatusCode::UNSUPPORTED_MEDIA_TYPE,
            ErrorCode::UnsupportedMediaType
        )
    );
}

#[tokio::test]
async fn unknown_words_warn_but_succeed() {
    let v = first_video();
    let (s, b) = post(json!({"video_id": v.video_id, "query": "zzzz qqqq", "k": 3})).await;
    assert_eq!(s, StatusCode::OK);
    assert!(
        serde_json::from_slice::<SummaryResponse>(&b)
            .unwrap()
            .oov_warning
    );
}

#[tokio::test]
async fn first_policy_is_reported() {
    let v = first_video();
    let (s, b) =
        post(json!({"video_id": v.video_id, "query": v.default_query, "k": 2, "policy": "first"}))
            .await;
    assert_eq!(s, StatusCode::OK);
    let r: SummaryResponse = serde_json::from_slice(&b).unwrap();
    assert_eq!(
        r.selection_policy,
        qvsum_core::output::SelectionPolicy::First
    );
    let expected: Vec<usize> = (0..r.original_frame_count)
        .filter(|&i| r.mask[i])
        .take(2)
        .collect();
    assert_eq!(r.indices, expected);
}

#[tokio::test]
async fn frames_are_served_and_bounded() {
    let v = first_video();
    let (s, first, ctype) = get(&format!("/frames/{}/0", v.video_id)).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(ctype.as_deref(), Some("image/png"));
    assert_eq!(image::load_from_memory(&first).unwrap().width(), 128);
    assert_eq!(first, get(&format!("/frames/{}/0", v.video_id)).await.1);

    let last = v.original_frame_count - 1;
    assert_eq!(
        get(&format!("/frames/{}/{last}", v.video_id)).await.0,
        StatusCode::OK
    );
    for bad in [v.original_frame_count.to_string(), "-1".into(), "x".into()] {
        let (s, b, _) = get(&format!("/frames/{}/{bad}", v.video_id)).await;
        assert_eq!(
            (s, error_code(&b)),
            (StatusCode::NOT_FOUND, ErrorCode::FrameOutOfRange)
        );
    }
    let (s, b, _) = get("/frames/nope/0").await;
    assert_eq!(
        (s, error_code(&b)),
        (StatusCode::NOT_FOUND, ErrorCode::UnknownVideo)
    );
}

#[tokio::test]
async fn cors_preflight_is_answered() {
    let req = Request::builder()
        .method("OPTIONS")
        .uri("/summarize")
        .header(header::ORIGIN, "http://localhost:5173")
        .header(header::ACCESS_CONTROL_REQUEST_METHOD, "POST")
        .body(Body::empty())
        .unwrap();
    let resp = app().oneshot(req).await.unwrap();
    assert!(resp.status().is_success());
    assert_eq!(
        resp.headers()
            .get(header::ACCESS_CONTROL_ALLOW_ORIGIN)
            .unwrap(),
        "*"
    );
}
