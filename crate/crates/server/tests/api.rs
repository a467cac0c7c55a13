use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use projscope_server::{router, AppState, ServerConfig};

const PEOPLE: &str = "\
name,age,weight,height,income,group
ann,34,150,165,52000,a
bob,45,170,180,61000,b
cat,52,190,172,75000,a
dan,29,160,178,43000,b
eve,41,175,169,58000,a
fay,38,140,160,50000,b
gus,60,200,182,90000,a
hal,47,185,175,66000,b
ivy,33,130,158,47000,a
jon,55,210,185,81000,b
kim,26,125,162,39000,a
leo,50,178,177,70000,b
";

fn app(config: ServerConfig) -> Router {
    router(Arc::new(AppState::new(config)))
}

async fn send(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    let body = match body {
        Some(v) => {
            req = req.header(header::CONTENT_TYPE, "application/json");
            Body::from(v.to_string())
        }
        None => Body::empty(),
    };
    let resp = app.clone().oneshot(req.body(body).unwrap()).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let value = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
    };
    (status, value)
}

async fn upload(app: &Router, csv: &str) -> String {
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, "text/csv")
        .body(Body::from(csv.to_string()))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v: Value = serde_json::from_slice(&bytes).unwrap();
    v["session_id"].as_str().unwrap().to_string()
}

#[tokio::test]
async fn upload_reports_metadata() {
    let app = app(ServerConfig::default());
    let req = Request::post("/sessions")
        .body(Body::from(PEOPLE))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
    let v: Value = serde_json::from_slice(&resp.into_body().collect().await.unwrap().to_bytes()).unwrap();
    assert_eq!(v["revision"], 0);
    assert_eq!(v["table"]["n_rows"], 12);
    assert_eq!(v["table"]["id_column"], "name");
    assert_eq!(v["table"]["numeric"].as_array().unwrap().len(), 4);
    assert_eq!(v["table"]["categorical"][0]["name"], "group");

    let (status, body) = send(&app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "empty_input");
}

#[tokio::test]
async fn unknown_session_is_404() {
    let app = app(ServerConfig::default());
    let (status, _) = send(&app, Method::GET, "/sessions/nope/table", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, Method::DELETE, "/sessions/nope", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn backward_without_projection_is_409() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, body) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/backward"),
        Some(json!({"point": "ann", "delta_y": [1.0, 0.0]})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["reason"], "no_projection");
}

#[tokio::test]
async fn filter_parse_error_carries_offset() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, body) = send(&app, Method::PUT, &format!("/sessions/{id}/filter"), Some(json!({"expr": "age >"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["offset"], 5);
    assert_eq!(body["error"], "parse");

    let (status, body) = send(&app, Method::PUT, &format!("/sessions/{id}/filter"), Some(json!({"expr": "shoe > 3"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["names"], json!(["shoe"]));

    // failed filters leave the revision alone
    let (_, s) = send(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(s["session"]["revision"], 0);
}

#[tokio::test]
async fn filter_and_keyword_combine() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let uri = format!("/sessions/{id}/filter");
    let (status, body) = send(&app, Method::PUT, &uri, Some(json!({"expr": "age > 40 & weight<180"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, json!({"revision": 1, "matched": 3}));
    let (_, body) = send(&app, Method::PUT, &uri, Some(json!({"expr": "age > 40", "keyword": "eve"}))).await;
    assert_eq!(body["matched"], 1);
    let (_, body) = send(&app, Method::PUT, &uri, Some(json!({"expr": "", "keyword": ""}))).await;
    assert_eq!(body, json!({"revision": 3, "matched": 12}));
    let (_, body) = send(&app, Method::PUT, &uri, Some(json!({"expr": "group == \"a\""}))).await;
    assert_eq!(body["matched"], 6);
}

#[tokio::test]
async fn clustering_labels_join_table_rows() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, fit) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/clustering"),
        Some(json!({"method": "kmeans", "k": 3, "seed": 7})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fit["model"]["labels"].as_array().unwrap().len(), 12);
    assert_eq!(fit["profile"]["clusters"].as_array().unwrap().len(), 3);

    let (status, page) = send(&app, Method::GET, &format!("/sessions/{id}/table?limit=5&sort_by=age&dir=desc"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(page["total"], 12);
    let rows = page["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[0]["id"], "gus");
    for r in rows {
        let l = r["label"].as_u64().unwrap();
        assert!(l < 3);
    }
    let ages: Vec<f64> = rows.iter().map(|r| r["values"][0].as_f64().unwrap()).collect();
    assert!(ages.windows(2).all(|w| w[0] >= w[1]));

    let (status, _) = send(&app, Method::GET, &format!("/sessions/{id}/table?sort_by=shoe"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn repeated_fits_are_identical() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    for req in [
        json!({"method": "kmeans", "k": 4, "seed": 3}),
        json!({"method": "agglo", "k": 2, "linkage": "ward"}),
    ] {
        let (_, a) = send(&app, Method::POST, &format!("/sessions/{id}/clustering"), Some(req.clone())).await;
        let (_, b) = send(&app, Method::POST, &format!("/sessions/{id}/clustering"), Some(req)).await;
        assert_eq!(a, b);
    }
    let (_, a) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    let (_, b) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn stale_models_are_reported() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, proj) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(proj["revision"], 0);
    assert!(proj.get("labels").is_none());
    send(&app, Method::PUT, &format!("/sessions/{id}/filter"), Some(json!({"expr": "age > 30"}))).await;
    let (status, body) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/forward"),
        Some(json!({"point": "bob", "delta": {"age": 1}})),
    )
    .await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["reason"], "stale_model");
    assert_eq!(body["model_revision"], 0);
    assert_eq!(body["view_revision"], 1);
    assert!(body["hint"].as_str().unwrap().contains("projection"));

    // refit clears staleness
    let (status, _) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    assert_eq!(status, StatusCode::OK);
    let (status, _) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/forward"),
        Some(json!({"point": "bob", "delta": {"age": 1}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn projection_carries_current_labels() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    send(&app, Method::POST, &format!("/sessions/{id}/clustering"), Some(json!({"method": "kmeans", "k": 2}))).await;
    let (_, proj) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    assert_eq!(proj["labels"].as_array().unwrap().len(), 12);
    assert_eq!(proj["row_ids"][0], "ann");
    assert_eq!(proj["coords"].as_array().unwrap().len(), 12);
    assert_eq!(proj["model"]["feature_names"].as_array().unwrap().len(), 4);
}

#[tokio::test]
async fn forward_prolines_backward() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (_, proj) = send(&app, Method::POST, &format!("/sessions/{id}/projection"), Some(json!({"method": "pca"}))).await;
    let e: Vec<[f64; 2]> = serde_json::from_value(proj["model"]["E"].clone()).unwrap();

    let (status, fwd) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/forward"),
        Some(json!({"point": "ann", "delta": {"income": 100.0}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!((fwd["delta_y"][0].as_f64().unwrap() - 100.0 * e[3][0]).abs() < 1e-9);
    assert!((fwd["delta_y"][1].as_f64().unwrap() - 100.0 * e[3][1]).abs() < 1e-9);
    let y0 = proj["coords"][0][0].as_f64().unwrap();
    assert!((fwd["y"][0].as_f64().unwrap() - y0).abs() < 1e-9);

    let (status, pl) = send(&app, Method::POST, &format!("/sessions/{id}/prolines"), Some(json!({"point": "ann"}))).await;
    assert_eq!(status, StatusCode::OK);
    let lines = pl["prolines"].as_array().unwrap();
    assert_eq!(lines.len(), 4);
    assert_eq!(lines[0]["feature"], "income");
    assert_eq!(lines[0]["path"].as_array().unwrap().len(), 17);

    let (status, bp) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/backward"),
        Some(json!({"point": "ann", "delta_y": [10.0, -5.0], "constraints": {"fixed": ["age"], "bounds": [{"feature": "weight", "lb": -1, "ub": 1}]}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(bp["status"], "optimal");
    assert!(bp["kkt_residual"].as_f64().unwrap() <= 1e-6);
    assert!(bp["delta_x"]["age"].as_f64().unwrap().abs() < 1e-9);
    assert!(bp["delta_x"]["weight"].as_f64().unwrap().abs() <= 1.0 + 1e-10);
    assert_eq!(bp["changes"][0]["direction"], "unchanged");

    let (status, bp) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/backward"),
        Some(json!({"point": {"age": 30, "weight": 150, "height": 170, "income": 50000}, "delta_y": [1.0, 2.0]})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(bp["objective"].as_f64().unwrap() < 1e-18);

    let (status, body) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/backward"),
        Some(json!({"point": "ann", "delta_y": [1.0, 0.0], "constraints": {"bounds": [{"feature": "age", "lb": 1, "ub": 0}]}})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body["status"], "infeasible");

    let (status, _) = send(&app, Method::POST, &format!("/sessions/{id}/backward"), Some(json!({"point": "zed", "delta_y": [1.0, 0.0]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, body) = send(&app, Method::POST, &format!("/sessions/{id}/backward"), Some(json!({"point": "ann"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "invalid_request");
}

#[tokio::test]
async fn cmds_has_no_linear_model() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, proj) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/projection"),
        Some(json!({"method": "cmds", "distance": "manhattan"})),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    assert!(proj.get("model").is_none());
    let (status, body) = send(&app, Method::POST, &format!("/sessions/{id}/prolines"), Some(json!({"point": "ann"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["reason"], "no_projection");
    let (status, _) = send(
        &app,
        Method::POST,
        &format!("/sessions/{id}/projection"),
        Some(json!({"method": "pca", "distance": "cosine"})),
    )
    .await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn stats_routes() {
    let csv = "id,v,w\na,1,3\nb,2,1\nc,3,2\nd,5,9\ne,6,7\nf,7,8\n";
    let app = app(ServerConfig::default());
    let id = upload(&app, csv).await;
    let (status, _) = send(&app, Method::POST, &format!("/sessions/{id}/stats/anova"), Some(json!({"feature": "v", "cluster_ids": [0, 1]}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    send(&app, Method::PUT, &format!("/sessions/{id}/features"), Some(json!({"names": ["v"]}))).await;
    send(&app, Method::POST, &format!("/sessions/{id}/clustering"), Some(json!({"method": "agglomerative", "k": 2, "linkage": "single"}))).await;
    let (status, a) = send(&app, Method::POST, &format!("/sessions/{id}/stats/anova"), Some(json!({"feature": "v", "cluster_ids": [0, 1]}))).await;
    assert_eq!(status, StatusCode::OK);
    assert!((a["F"].as_f64().unwrap() - 24.0).abs() < 1e-12);
    assert_eq!((a["df1"].as_u64(), a["df2"].as_u64()), (Some(1), Some(4)));
    let (status, _) = send(&app, Method::POST, &format!("/sessions/{id}/stats/anova"), Some(json!({"feature": "v", "cluster_ids": [0, 5]}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let (status, body) = send(&app, Method::GET, &format!("/sessions/{id}/stats/correlations"), None).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    send(&app, Method::PUT, &format!("/sessions/{id}/features"), Some(json!({"names": ["v", "w"]}))).await;
    let (status, corr) = send(&app, Method::GET, &format!("/sessions/{id}/stats/correlations"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(corr.as_array().unwrap().len(), 1);
    assert_eq!(corr[0]["defined"], true);

    let (_, pts) = send(&app, Method::GET, &format!("/sessions/{id}/stats/points"), None).await;
    assert_eq!(pts[0]["mean"], 4.0);
}

#[tokio::test]
async fn export_current_view() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    send(&app, Method::PUT, &format!("/sessions/{id}/filter"), Some(json!({"expr": "age > 50"}))).await;
    send(&app, Method::PUT, &format!("/sessions/{id}/features"), Some(json!({"names": ["age"]}))).await;
    let resp = app
        .clone()
        .oneshot(Request::get(format!("/sessions/{id}/export.csv")).body(Body::empty()).unwrap())
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert!(resp.headers()[header::CONTENT_TYPE].to_str().unwrap().starts_with("text/csv"));
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    assert_eq!(text, "name,age,group\ncat,52,a\ngus,60,a\njon,55,b\n");
}

#[tokio::test]
async fn server_paths_stay_in_data_dir() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("people.csv"), PEOPLE).unwrap();
    std::fs::write(dir.path().join("semi.csv"), "a;b\n1;2\n3;5\n").unwrap();
    let app = app(ServerConfig {
        data_dir: Some(dir.path().to_path_buf()),
        ui_origin: None,
    });
    let (status, v) = send(&app, Method::POST, "/sessions", Some(json!({"path": "people.csv"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["table"]["n_rows"], 12);
    let (status, v) = send(&app, Method::POST, "/sessions", Some(json!({"path": "semi.csv", "delimiter": ";"}))).await;
    assert_eq!(status, StatusCode::CREATED);
    assert_eq!(v["table"]["numeric"].as_array().unwrap().len(), 2);
    let (status, _) = send(&app, Method::POST, "/sessions", Some(json!({"path": "../../etc/passwd"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);

    let id = upload(&app, PEOPLE).await;
    let (status, snap) = send(&app, Method::POST, &format!("/sessions/{id}/snapshot"), None).await;
    assert_eq!(status, StatusCode::OK);
    let written: Value = serde_json::from_str(&std::fs::read_to_string(snap["path"].as_str().unwrap()).unwrap()).unwrap();
    assert_eq!(written["session"]["session_id"], id.as_str());

    let no_dir = self::app(ServerConfig::default());
    let (status, _) = send(&no_dir, Method::POST, "/sessions", Some(json!({"path": "people.csv"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
}

#[tokio::test]
async fn multipart_upload() {
    let app = app(ServerConfig::default());
    let boundary = "XyZbOuNdArY";
    let body = format!(
        "--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"p.csv\"\r\nContent-Type: text/csv\r\n\r\n{PEOPLE}\r\n--{boundary}--\r\n"
    );
    let req = Request::post("/sessions")
        .header(header::CONTENT_TYPE, format!("multipart/form-data; boundary={boundary}"))
        .body(Body::from(body))
        .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    assert_eq!(resp.status(), StatusCode::CREATED);
}

#[tokio::test]
async fn delete_removes_session() {
    let app = app(ServerConfig::default());
    let id = upload(&app, PEOPLE).await;
    let (status, _) = send(&app, Method::DELETE, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NO_CONTENT);
    let (status, _) = send(&app, Method::GET, &format!("/sessions/{id}"), None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn sessions_are_isolated_under_concurrency() {
    let app = app(ServerConfig::default());
    let a = upload(&app, PEOPLE).await;
    let b = upload(&app, PEOPLE).await;
    let mut tasks = Vec::new();
    for i in 0..16 {
        let app = app.clone();
        let (id, expr) = if i % 2 == 0 { (a.clone(), "age > 40") } else { (b.clone(), "age < 40") };
        tasks.push(tokio::spawn(async move {
            send(&app, Method::PUT, &format!("/sessions/{id}/filter"), Some(json!({"expr": expr}))).await;
            send(&app, Method::POST, &format!("/sessions/{id}/clustering"), Some(json!({"method": "kmeans", "k": 2}))).await
        }));
    }
    for t in tasks {
        let (status, _) = t.await.unwrap();
        assert_eq!(status, StatusCode::OK);
    }
    let (_, sa) = send(&app, Method::GET, &format!("/sessions/{a}"), None).await;
    let (_, sb) = send(&app, Method::GET, &format!("/sessions/{b}"), None).await;
    assert_eq!(sa["session"]["revision"], 8);
    assert_eq!(sb["session"]["revision"], 8);
    assert_eq!(sa["session"]["n_selected"], 7);
    assert_eq!(sb["session"]["n_selected"], 5);
}
