mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use common::{pipeline, sgir, Pipeline};
use sgir_cli::server::router;
use sgir_cli::service::QueryService;
use sgir_cli::{load_corpus, load_database, load_vocab};

fn app(p: &Pipeline) -> Router {
    let svc = QueryService::new(load_database(&p.path("db.sgdb")).unwrap(), load_vocab(&p.path("vocab.json")).unwrap())
        .unwrap()
        .with_corpus(load_corpus(&p.path("corpus.jsonl")).unwrap())
        .unwrap();
    router(Arc::new(svc))
}

async fn call(app: &Router, req: Request<Body>) -> (StatusCode, Value, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    let v = serde_json::from_slice(&bytes).unwrap_or(Value::Null);
    (status, v, bytes)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post(body: impl Into<Body>) -> Request<Body> {
    Request::post("/api/query").header("content-type", "application/json").body(body.into()).unwrap()
}

fn class_names(vocab: &Value) -> Vec<String> {
    vocab["classes"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap().to_string()).collect()
}

#[tokio::test]
async fn health_and_vocab() {
    let p = pipeline(40);
    let app = app(&p);
    let (s, v, _) = call(&app, get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["status"], "ok");
    assert!(v["records"].as_u64().unwrap() > 0);

    let (s, v, _) = call(&app, get("/api/vocab")).await;
    assert_eq!(s, StatusCode::OK);
    let classes = v["classes"].as_array().unwrap();
    assert_eq!(classes.len(), 12);
    let heads = classes.iter().filter(|c| c["bucket"] == "head").count();
    assert_eq!(heads, 3); // ceil(0.2 * 12)
    let preds: Vec<_> = v["predicates"].as_array().unwrap().iter().map(|p| p["name"].as_str().unwrap()).collect();
    assert_eq!(preds.len(), 6);
}

#[tokio::test]
async fn query_returns_k_ranked_results_deterministically() {
    let p = pipeline(40);
    let app = app(&p);
    let (_, vocab, _) = call(&app, get("/api/vocab")).await;
    let names = class_names(&vocab);
    let body = json!({"subject": names[0], "predicate": "left of", "object": names[1], "mode": "s+p+o", "k": 5}).to_string();
    let (s, v, first) = call(&app, post(body.clone())).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let results = v["results"].as_array().unwrap();
    assert_eq!(results.len(), 5);
    for (i, r) in results.iter().enumerate() {
        assert_eq!(r["rank"], i + 1);
        let sim = r["similarity"].as_f64().unwrap();
        assert!(sim > 0.0);
    }
    let d: Vec<f64> = results.iter().map(|r| r["distance"].as_f64().unwrap()).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    let (_, _, second) = call(&app, post(body)).await;
    assert_eq!(first, second);
}

#[tokio::test]
async fn api_and_cli_rank_identically() {
    let p = pipeline(40);
    let app = app(&p);
    let (_, vocab, _) = call(&app, get("/api/vocab")).await;
    let names = class_names(&vocab);
    let body = json!({"subject": names[2], "object": names[0], "mode": "s+o", "k": 7}).to_string();
    let (_, v, _) = call(&app, post(body)).await;
    let api: Vec<u64> = v["results"].as_array().unwrap().iter().map(|r| r["record_id"].as_u64().unwrap()).collect();

    let (code, out) = sgir(&[
        "query", "--db", &p.s("db.sgdb"), "--vocab", &p.s("vocab.json"), "--subject", &names[2], "--object", &names[0],
        "--mode", "s+o", "-k", "7",
    ]);
    assert_eq!(code, 0);
    let cli: Vec<u64> = out.lines().skip(1).map(|l| l.split('\t').nth(1).unwrap().parse().unwrap()).collect();
    assert_eq!(api, cli);
}

#[tokio::test]
async fn unknown_labels_are_unprocessable() {
    let p = pipeline(30);
    let app = app(&p);
    let (s, v, _) = call(&app, post(json!({"subject": "unicorn", "mode": "s", "k": 3}).to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["token"], "unicorn");
    assert_eq!(v["field"], "subject");

    let (s, v, _) = call(&app, post(json!({"predicate": "beside", "mode": "p", "k": 3}).to_string())).await;
    assert_eq!(s, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(v["token"], "beside");
}

#[tokio::test]
async fn malformed_requests_are_bad_requests() {
    let p = pipeline(30);
    let app = app(&p);
    let (_, vocab, _) = call(&app, get("/api/vocab")).await;
    let a = class_names(&vocab)[0].clone();
    let cases = [
        "{not json".to_string(),
        json!({"subject": a, "k": 3}).to_string(),
        json!({"subject": a, "mode": "x", "k": 3}).to_string(),
        json!({"subject": a, "mode": "s", "k": 0}).to_string(),
        json!({"subject": a, "mode": "s", "k": -1}).to_string(),
        json!({"subject": a, "mode": "s+o", "k": 3}).to_string(),
        json!({"subject": a, "mode": "s", "k": 3, "extra": 1}).to_string(),
    ];
    for body in cases {
        let (s, v, _) = call(&app, post(body.clone())).await;
        assert_eq!(s, StatusCode::BAD_REQUEST, "{body}");
        assert!(v["error"].is_string());
    }
}

#[tokio::test]
async fn record_lookup() {
    let p = pipeline(30);
    let app = app(&p);
    let (s, v, _) = call(&app, get("/api/record/0")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(v["record_id"], 0);
    let bx = |k: &str| -> Vec<f64> {
        v[k].as_array().unwrap().iter().map(|c| c.as_f64().unwrap()).collect()
    };
    let (sb, ob, sup) = (bx("subject_box"), bx("object_box"), bx("superbox"));
    assert_eq!(sup[0], sb[0].min(ob[0]));
    assert_eq!(sup[1], sb[1].min(ob[1]));
    assert_eq!(sup[2], sb[2].max(ob[2]));
    assert_eq!(sup[3], sb[3].max(ob[3]));

    let (s, _, _) = call(&app, get("/api/record/999999")).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    let (s, _, _) = call(&app, get("/api/record/abc")).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
}
