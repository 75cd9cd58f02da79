use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use chainprobe::human_eval::{assign_annotators, router, CreateSession, EvalSample, Instructions, SessionService};
use serde_json::{json, Value};
use tower::ServiceExt;

fn create_request(pairs: usize, annotators: usize, per_chain: usize, cap: usize) -> CreateSession {
    let samples: Vec<EvalSample> = (0..pairs)
        .map(|i| EvalSample {
            ce_pair_id: format!("ce{i}"),
            maintained_chain_id: format!("ce{i}:openai/gpt-x@r1:0"),
            violated_chain_id: format!("ce{i}:openai/gpt-x@r1:3"),
            agreement_scores: (4, 3),
            length_delta: 1,
        })
        .collect();
    let people: Vec<String> = (0..annotators).map(|i| format!("tok{i}")).collect();
    let plan = assign_annotators(&samples, &people, per_chain, cap, 5).unwrap();
    let chains: BTreeMap<String, Vec<String>> = plan
        .chain_ids()
        .into_iter()
        .map(|c| (c, vec!["deforestation".into(), "soil erosion".into(), "nutrient loss in the soils".into()]))
        .collect();
    CreateSession { samples, plan, chains }
}

async fn call(app: &axum::Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value, String) {
    let builder = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => builder
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => builder.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX).await.unwrap();
    let text = String::from_utf8(bytes.to_vec()).unwrap();
    let json = serde_json::from_str(&text).unwrap_or(Value::Null);
    (status, json, text)
}

#[tokio::test]
async fn six_item_session_end_to_end() {
    let app = router(Arc::new(SessionService::in_memory(Instructions::builtin())));
    // One annotator judging six pairs alone.
    let req = create_request(6, 1, 1, 6);
    let (status, body, _) = call(&app, "POST", "/sessions", Some(serde_json::to_value(&req).unwrap())).await;
    assert_eq!(status, StatusCode::CREATED);
    let sid = body["session_id"].as_str().unwrap().to_string();

    let (status, body, _) = call(&app, "POST", &format!("/sessions/{sid}/survey"),
        Some(json!({"annotator_id": "tok0", "difficulty": 2, "can_construct_chain": "yes"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "SessionIncomplete");

    let mut submitted = 0;
    loop {
        let (status, next, raw) = call(&app, "GET", &format!("/sessions/{sid}/next-item?annotator=tok0"), None).await;
        assert_eq!(status, StatusCode::OK);
        assert!(!raw.contains("gpt-x") && !raw.contains("openai"), "model name leaked: {raw}");
        assert_eq!(next["instructions"]["examples"].as_array().unwrap().len(), 2);
        assert_eq!(next["progress"]["completed_items"], submitted / 2);
        if next["item"].is_null() {
            break;
        }
        for side in ["chain_a", "chain_b"] {
            let chain_ref = next["item"][side]["chain_ref"].as_str().unwrap();
            let (status, ack, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"),
                Some(json!({"annotator_id": "tok0", "chain_ref": chain_ref, "integrity": "yes", "coherence": "no"}))).await;
            assert_eq!(status, StatusCode::OK, "{ack}");
            submitted += 1;
            assert_eq!(ack["sequence"], submitted);
        }
    }
    assert_eq!(submitted, 12);

    let (status, _, _) = call(&app, "POST", &format!("/sessions/{sid}/survey"),
        Some(json!({"annotator_id": "tok0", "difficulty": 6, "can_construct_chain": "yes"}))).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    let (status, _, _) = call(&app, "POST", &format!("/sessions/{sid}/survey"),
        Some(json!({"annotator_id": "tok0", "difficulty": 3, "can_construct_chain": "no", "comparison_note": "too long"}))).await;
    assert_eq!(status, StatusCode::OK);

    let (_, _, annotations) = call(&app, "GET", &format!("/sessions/{sid}/annotations.csv"), None).await;
    assert_eq!(annotations.lines().count(), 13);
    let (_, _, surveys) = call(&app, "GET", &format!("/sessions/{sid}/surveys.csv"), None).await;
    assert_eq!(surveys.lines().count(), 2);
    let parsed = chainprobe::human_eval::annotations_from_csv(&annotations).unwrap();
    assert_eq!(parsed.len(), 12);

    // A single rater per chain cannot yield kappa, but the tallies are reported.
    let (status, report, _) = call(&app, "GET", &format!("/sessions/{sid}/report"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(report["integrity_tally"]["confirmed"], 12);
    assert_eq!(report["integrity"]["status"], "unavailable");
}

#[tokio::test]
async fn errors_are_surfaced_with_codes() {
    let app = router(Arc::new(SessionService::in_memory(Instructions::builtin())));
    let (status, body, _) = call(&app, "GET", "/sessions/nope/next-item?annotator=x", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert_eq!(body["error"], "UnknownSession");

    let req = create_request(2, 4, 4, 2);
    let (_, body, _) = call(&app, "POST", "/sessions", Some(serde_json::to_value(&req).unwrap())).await;
    let sid = body["session_id"].as_str().unwrap().to_string();

    let (status, body, _) = call(&app, "GET", &format!("/sessions/{sid}/report"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "IncompleteJudgments");
    assert_eq!(body["missing"].as_array().unwrap().len(), 16);

    let (_, next, _) = call(&app, "GET", &format!("/sessions/{sid}/next-item?annotator=tok1"), None).await;
    let chain_ref = next["item"]["chain_a"]["chain_ref"].as_str().unwrap().to_string();
    let sub = json!({"annotator_id": "tok1", "chain_ref": chain_ref, "integrity": "no", "coherence": "no"});
    let (_, first, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"), Some(sub.clone())).await;
    let (status, again, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"), Some(sub)).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(first, again);

    let (status, body, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"),
        Some(json!({"annotator_id": "tok1", "chain_ref": chain_ref, "integrity": "yes", "coherence": "no"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "DuplicateSubmission");

    let (status, body, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"),
        Some(json!({"annotator_id": "stranger", "chain_ref": chain_ref, "integrity": "yes", "coherence": "no"}))).await;
    assert_eq!(status, StatusCode::FORBIDDEN);
    assert_eq!(body["error"], "NotAssigned");

    let (status, _, _) = call(&app, "POST", &format!("/sessions/{sid}/close"), None).await;
    assert_eq!(status, StatusCode::OK);
    let chain_b = next["item"]["chain_b"]["chain_ref"].as_str().unwrap();
    let (status, body, _) = call(&app, "POST", &format!("/sessions/{sid}/judgments"),
        Some(json!({"annotator_id": "tok1", "chain_ref": chain_b, "integrity": "yes", "coherence": "no"}))).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "SessionClosed");
}
