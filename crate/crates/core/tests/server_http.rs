mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use aiba::client::transport::sample_form;
use aiba::client::{HttpTransport, Transport, TransportError};
use aiba::protocol::wire::{IngestReceipt, ResponseDocument};
use aiba::protocol::{AnswerValue, LocalConfigStatus, PersonalInfoSchema};
use aiba::storage::census;
use common::*;
use reqwest::StatusCode;

async fn get(url: String) -> (StatusCode, Vec<u8>) {
    let resp = http().get(url).send().await.unwrap();
    (resp.status(), resp.bytes().await.unwrap().to_vec())
}

#[tokio::test]
async fn serves_installed_config_bytes() {
    let s = start_server(&[], &[CONFIG_7]).await;
    let (status, body) = get(format!("{}/config/7", s.url())).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(body, CONFIG_7.as_bytes());
    for alias in ["app_runtime_config_file_7.json", "app_runtime_config_file_7.csv"] {
        let (status, again) = get(format!("{}/{alias}", s.url())).await;
        assert_eq!(status, StatusCode::OK, "{alias}");
        assert_eq!(again, body);
    }
    assert_eq!(get(format!("{}/config/99", s.url())).await.0, StatusCode::NOT_FOUND);
    assert_eq!(get(format!("{}/other_3.json", s.url())).await.0, StatusCode::NOT_FOUND);
    // the default number always resolves
    let (status, default) = get(format!("{}/config/0", s.url())).await;
    assert_eq!(status, StatusCode::OK);
    let cfg = aiba::protocol::parse_runtime_config(&default, 0).unwrap();
    assert_eq!(cfg.mode, aiba::protocol::RecordingMode::FreeRecording);
}

#[tokio::test]
async fn admin_config_replaces_and_rejects_atomically() {
    let s = start_server(&[], &[CONFIG_7]).await;
    let post = |body: &'static str| {
        let url = format!("{}/admin/config", s.url());
        async move { http().post(url).body(body).send().await.unwrap().status() }
    };
    assert_eq!(post(CONFIG_7_V2).await, StatusCode::OK);
    assert_eq!(get(format!("{}/config/7", s.url())).await.1, CONFIG_7_V2.as_bytes());

    let broken = r#"{"config_number":7,"lists":[{"prompts":[{"text":"","seconds":3}]}]}"#;
    assert_eq!(post(broken).await, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(get(format!("{}/config/7", s.url())).await.1, CONFIG_7_V2.as_bytes());

    let eight = r#"{"config_number":8,"lists":[]}"#;
    assert_eq!(post(eight).await, StatusCode::OK);
    assert_eq!(get(format!("{}/config/8", s.url())).await.1, eight.as_bytes());

    // installed configs survive a restart
    let root = s.dir.path().to_owned();
    s.server.shutdown().await.unwrap();
    let again = start_at(&root, &[], &[]).await;
    assert_eq!(get(format!("{}/config/7", again.url())).await.1, CONFIG_7_V2.as_bytes());
    assert_eq!(get(format!("{}/config/8", again.url())).await.1, eight.as_bytes());
}

#[tokio::test]
async fn duplicate_upload_is_stored_once() {
    let s = start_server(&[], &[]).await;
    let t = HttpTransport::new(&s.url());
    let up = upload(hash(1), 1, t0());
    let a = audio(1, 2048);
    let first = t.send_sample(&up, Some(&a)).await.unwrap();
    assert_eq!(
        first,
        IngestReceipt {
            sample_id: up.sample_id,
            stored: true,
            duplicate: false,
            engine_dispatched: false
        }
    );
    let second = t.send_sample(&up, Some(&a)).await.unwrap();
    assert!(second.duplicate && !second.stored && !second.engine_dispatched);
    let stored = census(s.data_root()).unwrap();
    assert_eq!(stored.len(), 1);
    assert_eq!(stored[0].0, hash(1).to_string());
    assert_eq!(stored[0].1.meta.upload, up);
    assert_eq!(std::fs::read(stored[0].1.audio_path.as_ref().unwrap()).unwrap(), a.bytes);

    // dedup index outlives the process
    let root = s.dir.path().to_owned();
    s.server.shutdown().await.unwrap();
    let again = start_at(&root, &[], &[]).await;
    let third = HttpTransport::new(&again.url()).send_sample(&up, Some(&a)).await.unwrap();
    assert!(third.duplicate);
    assert_eq!(census(&root).unwrap().len(), 1);
}

#[tokio::test]
async fn schema_violations_are_rejected() {
    let s = start_server(&[], &[]).await;
    let t = HttpTransport::new(&s.url());
    // neither audio nor text
    let up = upload(hash(1), 1, t0());
    match t.send_sample(&up, None).await {
        Err(e @ TransportError::Status { status: 422, .. }) => assert!(e.is_permanent()),
        other => panic!("{other:?}"),
    }
    // text-only submission is fine
    let mut text = upload(hash(1), 2, t0());
    text.text_input = Some("tinc tos".into());
    assert!(t.send_sample(&text, None).await.unwrap().stored);

    // metadata that is not a SampleUpload
    let form = reqwest::multipart::Form::new().text("metadata", "{\"sample_id\":1}");
    let resp = http()
        .post(format!("{}/samples", s.url()))
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(census(s.data_root()).unwrap().len(), 1);
}

#[tokio::test]
async fn text_only_sidecar_is_flagged() {
    let s = start_server(&[], &[]).await;
    let mut up = upload(hash(4), 9, t0());
    up.text_input = Some("no puc gravar".into());
    let form = sample_form(&up, None).unwrap();
    let resp = http()
        .post(format!("{}/samples", s.url()))
        .multipart(form)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let stored = census(s.data_root()).unwrap();
    assert!(stored[0].1.meta.text_only);
    assert!(stored[0].1.audio_path.is_none());
}

#[tokio::test]
async fn status_documents() {
    let s = start_server(&[], &[]).await;
    let t = HttpTransport::new(&s.url());
    let mut status = LocalConfigStatus {
        study_code: Some("codi-1".into()),
        ..Default::default()
    };
    status.personal_info.insert("age".into(), AnswerValue::Text("90+".into()));
    t.send_status(&hash(3), &status).await.unwrap();
    status.language = "es".into();
    t.send_status(&hash(3), &status).await.unwrap();

    let rows: Vec<serde_json::Value> = http()
        .get(format!("{}/admin/status", s.url()))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["phone_hash"], hash(3).to_string());
    assert_eq!(rows[0]["status"]["language"], "es");
    assert!(rows[0]["received_at"].is_string());

    let mut bad = status.clone();
    bad.personal_info.insert("name".into(), AnswerValue::Text("Ana".into()));
    match t.send_status(&hash(3), &bad).await {
        Err(TransportError::Status { status: 422, .. }) => {}
        other => panic!("{other:?}"),
    }
    let resp = http()
        .post(format!("{}/status/not-a-hash", s.url()))
        .json(&status)
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn echo_engine_response_is_visible() {
    let s = start_server(&["1=echo"], &[]).await;
    let t = HttpTransport::new(&s.url());
    assert_eq!(t.fetch_response(&hash(5)).await.unwrap(), None);
    assert_eq!(get(format!("{}/response/{}", s.url(), hash(5))).await.0, StatusCode::NOT_FOUND);

    let mut up = upload(hash(5), 77, t0());
    up.engine_number = 1;
    let receipt = t.send_sample(&up, Some(&audio(2, 1500))).await.unwrap();
    assert!(receipt.engine_dispatched);
    s.server.state().dispatcher().wait_idle().await;
    let response = t.fetch_response(&hash(5)).await.unwrap().unwrap();
    let text = response.text.unwrap();
    assert!(text.contains(&up.sample_id.to_string()), "{text}");
    assert!(text.contains("1 total"), "{text}");

    let doc: ResponseDocument = http()
        .get(format!("{}/response/{}", s.url(), hash(5)))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(doc.audio_url, None);

    // a phone that only uses engine 0 never gets a response
    let other = upload(hash(6), 78, t0());
    assert!(!t.send_sample(&other, Some(&audio(3, 100))).await.unwrap().engine_dispatched);
    s.server.state().dispatcher().wait_idle().await;
    assert_eq!(t.fetch_response(&hash(6)).await.unwrap(), None);
}

#[tokio::test]
async fn unknown_engine_number_is_not_dispatched() {
    let s = start_server(&["1=echo"], &[]).await;
    let t = HttpTransport::new(&s.url());
    let mut up = upload(hash(5), 1, t0());
    up.engine_number = 9;
    assert!(!t.send_sample(&up, Some(&audio(1, 64))).await.unwrap().engine_dispatched);
}

#[tokio::test]
async fn remote_engine_round_trip() {
    // a second server acts as nothing but an endpoint: use an echo engine
    // behind a tiny axum app that answers with fixed text.
    use axum::routing::post;
    let app = axum::Router::new().route("/infer", post(|| async { "remote says hi" }));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });

    let spec = format!("2=remote:http://{addr}/infer");
    let s = start_server(&[spec.as_str()], &[]).await;
    let t = HttpTransport::new(&s.url());
    let mut up = upload(hash(8), 1, t0());
    up.engine_number = 2;
    assert!(t.send_sample(&up, Some(&audio(1, 64))).await.unwrap().engine_dispatched);
    s.server.state().dispatcher().wait_idle().await;
    let r = t.fetch_response(&hash(8)).await.unwrap().unwrap();
    assert_eq!(r.text.as_deref(), Some("remote says hi"));
}

#[tokio::test]
async fn response_audio_is_served() {
    let s = start_server(&[], &[]).await;
    let payload = audio(4, 333);
    s.server
        .state()
        .store()
        .store_response(&aiba::protocol::EngineResponse {
            phone_hash: hash(2),
            text: Some("listen".into()),
            audio: Some(payload.clone()),
            produced_at: t0(),
        })
        .unwrap();
    let t = HttpTransport::new(&s.url());
    let r = t.fetch_response(&hash(2)).await.unwrap().unwrap();
    assert_eq!(r.text.as_deref(), Some("listen"));
    let got = r.audio.unwrap();
    assert_eq!(got.bytes, payload.bytes);
    assert_eq!(got.media_type, "audio/wav");
}

#[tokio::test]
async fn personal_information_request_schema() {
    let s = start_server(&[], &[]).await;
    let schema: PersonalInfoSchema = http()
        .get(format!("{}/personal_information_request/1", s.url()))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(schema, aiba::protocol::covid_question_set());
}

#[tokio::test]
async fn export_endpoint_streams_zip() {
    let s = start_server(&[], &[]).await;
    let t = HttpTransport::new(&s.url());
    for i in 0..3 {
        t.send_sample(&upload(hash(1), i + 1, t0()), Some(&audio(i as u64, 100)))
            .await
            .unwrap();
    }
    let resp = http()
        .get(format!("{}/export/2026-03-01", s.url()))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    assert_eq!(resp.headers()["content-type"], "application/zip");
    let bytes = resp.bytes().await.unwrap();
    let zip = zip::ZipArchive::new(std::io::Cursor::new(bytes)).unwrap();
    assert_eq!(zip.len(), 4);
    assert_eq!(get(format!("{}/export/March-1", s.url())).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn concurrent_phones_stay_isolated() {
    let s = start_server(&[], &[]).await;
    let url = s.url();
    let mut tasks = Vec::new();
    for phone in 1..=8u128 {
        let url = url.clone();
        tasks.push(tokio::spawn(async move {
            let t = HttpTransport::new(&url);
            for i in 0..10u128 {
                let up = upload(hash(phone), phone * 1000 + i, t0());
                // every sample twice, concurrently with other phones
                let a = audio(i as u64, 256);
                t.send_sample(&up, Some(&a)).await.unwrap();
                t.send_sample(&up, Some(&a)).await.unwrap();
            }
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    let stored = census(s.data_root()).unwrap();
    assert_eq!(stored.len(), 80);
    let mut per_dir: BTreeMap<String, usize> = BTreeMap::new();
    for (dir, sample) in &stored {
        assert_eq!(*dir, sample.meta.upload.phone_hash.to_string());
        *per_dir.entry(dir.clone()).or_default() += 1;
    }
    assert!(per_dir.values().all(|&n| n == 10));
    tokio::time::sleep(Duration::from_millis(1)).await;
}
