use std::time::{Duration, Instant};

use mixdr_client::api::{CreateSession, SessionStatus};
use mixdr_client::{Client, ClientError};
use mixdr_core::classifier::Family;
use mixdr_core::data::{gen_mean_vs_variance, gen_scenario5, to_csv_string, LabeledDataset, MeanVarConfig};
use mixdr_core::dimred::{tune_lambda, KernelParts};
use mixdr_core::gmm::CovarianceModel;
use mixdr_core::pipeline::{basis_and_projection, default_d_eval, lambda_grid, FitSpec};
use mixdr_server::{serve, AppState, ServerConfig};
use reqwest::StatusCode;
use tokio::net::TcpListener;

async fn start(config: ServerConfig) -> Client {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve(listener, AppState::new(config), std::future::pending()));
    Client::new(format!("http://{addr}"))
}

fn edda_spec() -> FitSpec {
    FitSpec {
        family: Family::Edda,
        models: Some(vec![CovarianceModel::VVV, CovarianceModel::EEE]),
        ..FitSpec::default()
    }
}

fn request(ds: &LabeledDataset, fit: FitSpec) -> CreateSession {
    CreateSession {
        csv: to_csv_string(ds).unwrap(),
        label_column: None,
        fit,
        run_async: false,
    }
}

fn status_of(e: &ClientError) -> StatusCode {
    match e {
        ClientError::Api { status, .. } => *status,
        other => panic!("expected an API error, got {other}"),
    }
}

fn collinear_csv() -> String {
    let mut csv = String::from("a,b,class\n");
    for i in 0..40 {
        let a = (i as f64 * 0.37).sin() + if i % 2 == 0 { 1.0 } else { -1.0 };
        csv.push_str(&format!("{a},{},{}\n", 2.0 * a, if i % 2 == 0 { "x" } else { "y" }));
    }
    csv
}

fn meanvar(n: usize, seed: u64) -> LabeledDataset {
    gen_mean_vs_variance(n, seed, &MeanVarConfig::default()).unwrap()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn health_and_spec() {
    let c = start(ServerConfig::default()).await;
    let h = c.health().await.unwrap();
    assert_eq!(h.schema, "mixdr.health/v1");
    let spec = c.spec().await.unwrap();
    assert_eq!(spec["openapi"], "3.0.3");
    assert!(spec["paths"]["/sessions/{id}/projection"].is_object());
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn projection_matches_the_library_bit_for_bit() {
    let c = start(ServerConfig::default()).await;
    let ds = meanvar(200, 3);
    let spec = edda_spec();
    let info = c.create_session(&request(&ds, spec.clone())).await.unwrap();
    assert_eq!(info.schema, "mixdr.session/v1");
    assert_eq!(info.status, SessionStatus::Ready);
    assert_eq!(info.d, Some(1));
    assert!(info.selection_table.iter().filter(|r| r.selected).count() == 1);

    let outcome = spec.fit(&ds).unwrap();
    let parts = KernelParts::from_classifier(&outcome.classifier, &ds.x, spec.marginal).unwrap();
    let (basis, z) = basis_and_projection(&parts, &ds, 0.5).unwrap();

    let pr = c.projection(&info.session_id, 0.5, None).await.unwrap();
    assert_eq!(pr.schema, "mixdr.projection/v1");
    assert_eq!(pr.lambda, 0.5);
    assert_eq!(pr.dims, 1);
    assert_eq!(pr.eigenvalues, basis.eigenvalues);
    assert_eq!(pr.loc_part, basis.loc_part);
    assert_eq!(pr.disp_part, basis.disp_part);
    assert_eq!(pr.beta.len(), ds.p());
    assert_eq!(pr.points.len(), ds.n());
    for (i, pt) in pr.points.iter().enumerate() {
        assert_eq!(pt.z1, z[(i, 0)]);
        assert!(pt.z2.is_none());
        assert_eq!(pt.label, ds.y[i]);
        assert!((0.0..=0.5).contains(&pt.uncertainty));
    }
    // requests that round to the same λ share one answer
    let near = c.projection(&info.session_id, 0.50004, None).await.unwrap();
    assert_eq!(near, pr);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn lr_trace_matches_library_tuning() {
    let c = start(ServerConfig::default()).await;
    let ds = meanvar(200, 4);
    let spec = edda_spec();
    let info = c.create_session(&request(&ds, spec.clone())).await.unwrap();
    let trace = c.lr(&info.session_id, Some(21), None).await.unwrap();
    assert_eq!(trace.schema, "mixdr.lr/v1");
    assert_eq!(trace.grid.len(), 21);

    let outcome = spec.fit(&ds).unwrap();
    let cl = outcome.classifier;
    let parts = KernelParts::from_classifier(&cl, &ds.x, spec.marginal).unwrap();
    let idx = cl.class_indices(&ds.y).unwrap();
    let d = info.d.unwrap();
    let local = tune_lambda(&parts, &ds.x, &idx, &cl, &lambda_grid(21).unwrap(), default_d_eval(d), &spec.projection_em()).unwrap();
    assert_eq!(trace.argmax_lambda, local.argmax_lambda);
    assert_eq!(trace.lr_values, local.lr_values);
    assert_eq!(c.lr(&info.session_id, Some(21), None).await.unwrap(), trace);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn boundary_raster_payload() {
    let c = start(ServerConfig::default()).await;
    let ds = gen_scenario5(200, 7).unwrap();
    let info = c.create_session(&request(&ds, edda_spec())).await.unwrap();
    let b = c.boundary(&info.session_id, 0.5, Some(64)).await.unwrap();
    assert_eq!(b.schema, "mixdr.boundary/v1");
    assert_eq!(b.class_at_cell.len(), 64 * 64);
    assert_eq!(b.classes.len(), 4);
    assert!((b.max_uncertainty - 0.75).abs() < 1e-15);
    assert!(b.uncertainty_at_cell.iter().all(|u| (0.0..=b.max_uncertainty).contains(u)));
    assert!(b.class_at_cell.iter().all(|k| *k < 4));
    assert!(!b.segments.is_empty());
    assert_eq!(c.boundary(&info.session_id, 0.5, Some(64)).await.unwrap(), b);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn error_statuses() {
    let c = start(ServerConfig::default()).await;
    let ds = meanvar(120, 5);
    let id = c.create_session(&request(&ds, edda_spec())).await.unwrap().session_id;

    let e = c.projection("nope", 0.5, None).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::NOT_FOUND);
    assert_eq!(e.category(), Some("session.not_found"));
    for bad in [c.projection(&id, 1.5, None).await, c.projection(&id, -0.1, None).await, c.projection(&id, 0.5, Some(2)).await] {
        let e = bad.unwrap_err();
        assert_eq!(status_of(&e), StatusCode::UNPROCESSABLE_ENTITY);
        assert_eq!(e.category(), Some("request.out_of_range"));
    }
    for grid in [16, 257] {
        assert_eq!(status_of(&c.boundary(&id, 0.5, Some(grid)).await.unwrap_err()), StatusCode::UNPROCESSABLE_ENTITY);
    }
    // a one-direction basis has no plane to draw a boundary in
    assert_eq!(status_of(&c.boundary(&id, 0.5, Some(64)).await.unwrap_err()), StatusCode::UNPROCESSABLE_ENTITY);
    for steps in [0, 102] {
        assert_eq!(status_of(&c.lr(&id, Some(steps), None).await.unwrap_err()), StatusCode::UNPROCESSABLE_ENTITY);
    }
    assert_eq!(status_of(&c.lr(&id, Some(5), Some(2)).await.unwrap_err()), StatusCode::UNPROCESSABLE_ENTITY);

    let mut bad_csv = request(&ds, edda_spec());
    bad_csv.csv = "a,b,class\n1,NA,x\n".into();
    let e = c.create_session(&bad_csv).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(e.category(), Some("data.parse"));

    let mut single = request(&ds, edda_spec());
    single.csv = "a,b,class\n1,2,x\n2,1,x\n3,5,x\n0,1,x\n4,4,x\n2,2,x\n".into();
    let e = c.create_session(&single).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::UNPROCESSABLE_ENTITY);

    // b = 2a exactly: the marginal covariance is singular
    let mut collinear = request(&ds, edda_spec());
    collinear.csv = collinear_csv();
    let e = c.create_session(&collinear).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::CONFLICT, "{e}");

    c.delete(&id).await.unwrap();
    assert_eq!(status_of(&c.session(&id).await.unwrap_err()), StatusCode::NOT_FOUND);
    assert_eq!(status_of(&c.delete(&id).await.unwrap_err()), StatusCode::NOT_FOUND);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn oversized_dataset_is_rejected() {
    let c = start(ServerConfig::default()).await;
    let p = 2001;
    let mut csv: String = (0..p).map(|j| format!("x{j},")).collect();
    csv.push_str("class\n");
    for i in 0..3 {
        csv.extend((0..p).map(|j| format!("{},", (i * j) % 7)));
        csv.push_str(if i % 2 == 0 { "a\n" } else { "b\n" });
    }
    let req = CreateSession {
        csv,
        label_column: None,
        fit: edda_spec(),
        run_async: false,
    };
    let e = c.create_session(&req).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::PAYLOAD_TOO_LARGE);
    assert_eq!(e.category(), Some("request.too_large"));

    let tiny = start(ServerConfig {
        max_body_bytes: 1024,
        ..ServerConfig::default()
    })
    .await;
    let e = tiny.create_session(&request(&meanvar(200, 1), edda_spec())).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::PAYLOAD_TOO_LARGE);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn async_fit_polls_to_ready() {
    let c = start(ServerConfig::default()).await;
    let mut req = request(&gen_scenario5(200, 2).unwrap(), FitSpec::default());
    req.run_async = true;
    let info = c.create_session(&req).await.unwrap();
    assert_eq!(info.status, SessionStatus::Fitting);
    match c.projection(&info.session_id, 0.5, None).await {
        Err(e) => assert_eq!(e.category(), Some("session.not_ready")),
        // the fit may already have finished
        Ok(p) => assert_eq!(p.session_id, info.session_id),
    }
    let ready = c
        .wait_ready(&info.session_id, Duration::from_millis(20), Duration::from_secs(120))
        .await
        .unwrap();
    assert_eq!(ready.status, SessionStatus::Ready);
    assert_eq!(ready.family, Some(Family::Mclustda));
    assert!(!ready.selection_table.is_empty());
    let listed = c.sessions().await.unwrap();
    assert!(listed.sessions.iter().any(|s| s.session_id == info.session_id));
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn failed_async_fit_is_reported() {
    let c = start(ServerConfig::default()).await;
    let req = CreateSession {
        csv: collinear_csv(),
        label_column: None,
        fit: edda_spec(),
        run_async: true,
    };
    let info = c.create_session(&req).await.unwrap();
    let e = c
        .wait_ready(&info.session_id, Duration::from_millis(10), Duration::from_secs(30))
        .await
        .unwrap_err();
    assert!(matches!(e, ClientError::FitFailed { .. }), "{e}");
    let category = e.category().unwrap().to_string();
    assert!(category.starts_with("linalg") || category.starts_with("gmm"), "{category}");
    let e = c.projection(&info.session_id, 0.5, None).await.unwrap_err();
    assert_eq!(status_of(&e), StatusCode::CONFLICT);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_projections_do_not_cross_talk() {
    let c = start(ServerConfig::default()).await;
    let ds = gen_scenario5(300, 11).unwrap();
    let id = c.create_session(&request(&ds, edda_spec())).await.unwrap().session_id;
    let lambdas: Vec<f64> = (0..40).map(|i| (i % 20) as f64 / 19.0).collect();

    let handles: Vec<_> = lambdas
        .iter()
        .map(|&l| {
            let (c, id) = (c.clone(), id.clone());
            tokio::spawn(async move { c.projection(&id, l, None).await.unwrap() })
        })
        .collect();
    let mut concurrent = Vec::new();
    for h in handles {
        concurrent.push(h.await.unwrap());
    }
    // a fresh server answering one request at a time is the reference
    let reference = start(ServerConfig::default()).await;
    let rid = reference.create_session(&request(&ds, edda_spec())).await.unwrap().session_id;
    for (l, got) in lambdas.iter().zip(&concurrent) {
        let want = reference.projection(&rid, *l, None).await.unwrap();
        assert_eq!(got.lambda, want.lambda);
        assert_eq!(got.eigenvalues, want.eigenvalues);
        assert_eq!(got.beta, want.beta);
        assert_eq!(got.points, want.points);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn projection_latency_at_desk_scale() {
    let c = start(ServerConfig::default()).await;
    let ds = gen_mean_vs_variance(
        5000,
        9,
        &MeanVarConfig {
            noise_dims: 48,
            ..MeanVarConfig::default()
        },
    )
    .unwrap();
    let spec = FitSpec {
        family: Family::Edda,
        models: Some(vec![CovarianceModel::VVV]),
        ..FitSpec::default()
    };
    let id = c.create_session(&request(&ds, spec)).await.unwrap().session_id;
    let mut worst = Duration::ZERO;
    for l in [0.13, 0.57, 0.91] {
        let t = Instant::now();
        let pr = c.projection(&id, l, None).await.unwrap();
        worst = worst.max(t.elapsed());
        assert_eq!(pr.points.len(), 5000);
    }
    assert!(worst < Duration::from_millis(200), "slowest projection took {worst:?}");
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn cors_headers_are_sent() {
    let c = start(ServerConfig {
        cors_origins: vec!["http://localhost:5173".into()],
        ..ServerConfig::default()
    })
    .await;
    let resp = reqwest::Client::new()
        .get(format!("{}/health", c.base_url()))
        .header("Origin", "http://localhost:5173")
        .send()
        .await
        .unwrap();
    assert_eq!(
        resp.headers().get("access-control-allow-origin").unwrap(),
        "http://localhost:5173"
    );
    let resp = reqwest::Client::new()
        .get(format!("{}/nowhere", c.base_url()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let body: serde_json::Value = resp.json().await.unwrap();
    assert_eq!(body["schema"], "mixdr.error/v1");
}
