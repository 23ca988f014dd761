//! Admin and consumer HTTP API, driven in-process.

mod common;

use axum::http::{Method, StatusCode};
use serde_json::json;

use common::{app, call, pipeline_with};
use gentext_core::model::{Property, ScoringEvent};
use gentext_core::pipeline::PipelineConfig;
use gentext_core::store::content_object_key;

fn match_start() -> ScoringEvent {
    ScoringEvent::new(
        "m1-start",
        Property::Tennis,
        "match_start",
        json!({"match_id": "m1", "player_one": "Casey Coldfield", "player_two": "Dana Dunmore"}),
    )
}

#[tokio::test]
async fn health_and_unknown_content() {
    let p = pipeline_with(PipelineConfig::builtin());
    let a = app(&p, None);
    assert_eq!(call(&a, Method::GET, "/healthz", None, None).await.0, StatusCode::OK);
    let (status, body) = call(&a, Method::GET, "/content/nope", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(body["error"].is_string());
}

#[tokio::test]
async fn personalize_after_a_batch() {
    let mut config = PipelineConfig::builtin();
    config.slots.variants_per_cell = 2;
    let p = pipeline_with(config);
    p.batch_slotgen().unwrap();
    let a = app(&p, None);
    let body = json!({
        "payload": {
            "user_id": "u7",
            "week": 5,
            "roster": [{"first_name": "Sam", "last_name": "Rivers", "position": "WR", "team": "Hawks",
                        "opponent": "Atlanta Falcons", "stats": {"next_game_projection": 15.55, "receptions": 6}}],
            "team_weaknesses": {"WR": 0.4}
        },
        "player": "Sam Rivers",
        "rationale": [
            {"stat_type": "next_game_projection", "percentile": 95},
            {"stat_type": "receptions", "percentile": 35}
        ]
    });
    let (status, out) = call(&a, Method::POST, "/personalize", Some(body), None).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    let sentences = out["sentences"].as_array().unwrap();
    assert_eq!(sentences.len(), 2, "{out}");
    assert!(sentences.iter().all(|s| !s.as_str().unwrap().contains('{')));

    let (status, _) = call(&a, Method::POST, "/personalize", Some(json!({"player": "x"})), None).await;
    assert!(status.is_client_error());
}

#[tokio::test]
async fn review_round_trip() {
    let p = pipeline_with(PipelineConfig::builtin());
    let a = app(&p, None);

    let (status, accepted) = call(&a, Method::POST, "/events", Some(serde_json::to_value(match_start()).unwrap()), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(accepted["accepted"], 1);
    p.drain().unwrap();

    let (status, list) = call(&a, Method::GET, "/review?state=pending_review", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(list.as_array().unwrap().len(), 1);
    assert_eq!(list[0]["content_id"], "m1-start");
    assert_eq!(call(&a, Method::GET, "/review?state=bogus", None, None).await.0, StatusCode::BAD_REQUEST);

    // Not public until approved.
    assert_eq!(call(&a, Method::GET, "/content/m1-start", None, None).await.0, StatusCode::NOT_FOUND);

    let edit = json!({"final_text": "Casey Coldfield opens against Dana Dunmore.", "revision": 9});
    let (status, conflict) = call(&a, Method::PUT, "/review/m1-start", Some(edit), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(conflict["revision"], 1);
    assert_eq!(conflict["state"], "pending_review");

    let edit = json!({"final_text": "Casey Coldfield opens against Dana Dunmore.", "revision": 1});
    let (status, item) = call(&a, Method::PUT, "/review/m1-start", Some(edit), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["revision"], 2);

    let (status, approved) = call(&a, Method::POST, "/review/m1-start/approve", Some(json!({"revision": 2})), None).await;
    assert_eq!(status, StatusCode::OK, "{approved}");
    assert_eq!(approved["item"]["state"], "published");
    assert_eq!(approved["purged"], true);
    assert!(p.cdn().purge_log().contains(&content_object_key("m1-start")));

    let (status, public) = call(&a, Method::GET, "/content/m1-start", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(public["text"], "Casey Coldfield opens against Dana Dunmore.");

    let (status, _) = call(&a, Method::POST, "/review/m1-start/approve", None, None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = call(&a, Method::POST, "/review/missing/approve", None, None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn reject_regenerates_a_new_revision() {
    let p = pipeline_with(PipelineConfig::builtin());
    p.submit(match_start()).unwrap();
    p.drain().unwrap();
    let a = app(&p, None);
    let (status, item) = call(&a, Method::POST, "/review/m1-start/reject", None, None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(item["state"], "rejected");
    p.drain().unwrap();
    let (_, item) = call(&a, Method::GET, "/review/m1-start", None, None).await;
    assert_eq!(item["state"], "pending_review");
    assert_eq!(item["revision"], 2);
}

#[tokio::test]
async fn purge_counts_only_cached_keys() {
    let p = pipeline_with(PipelineConfig::builtin());
    let key = content_object_key("k");
    p.store().put(gentext_core::store::Kind::Object, &key, b"{}").unwrap();
    p.cdn().fetch(&key).unwrap();
    let a = app(&p, None);
    let (status, out) = call(&a, Method::POST, "/purge", Some(json!({"keys": [key, "content/unknown.json"]})), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(out["purged"], 1);
}

#[tokio::test]
async fn story_modes() {
    let p = pipeline_with(PipelineConfig::builtin());
    let a = app(&p, None);
    let req = json!({"artist": "Juniper Vale", "mode": "categorical", "category": "achievements", "kinds": ["summary", "bullets"]});
    let (status, out) = call(&a, Method::POST, "/story", Some(req), None).await;
    assert_eq!(status, StatusCode::OK, "{out}");
    let passages = out["passages"].as_array().unwrap();
    assert!(!passages.is_empty());
    assert!(passages.iter().all(|s| s["passage"]["category"] == "achievements"));
    for item in out["items"].as_array().unwrap() {
        assert_eq!(item["state"], "pending_review");
        assert!(item["final_text"].as_str().unwrap().chars().count() <= 150);
    }

    let bad = json!({"artist": "Juniper Vale", "mode": "categorical", "kinds": ["headline"]});
    assert_eq!(call(&a, Method::POST, "/story", Some(bad), None).await.0, StatusCode::BAD_REQUEST);
    let unknown = json!({"artist": "Nobody Here", "mode": "free", "kinds": ["headline"]});
    assert_eq!(call(&a, Method::POST, "/story", Some(unknown), None).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn admin_token_guards_admin_routes_only() {
    let p = pipeline_with(PipelineConfig::builtin());
    let a = app(&p, Some("s3cret"));
    assert_eq!(call(&a, Method::GET, "/review", None, None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&a, Method::GET, "/review", None, Some("wrong")).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&a, Method::GET, "/review", None, Some("s3cret")).await.0, StatusCode::OK);
    assert_eq!(call(&a, Method::POST, "/purge", Some(json!({"keys": []})), None).await.0, StatusCode::UNAUTHORIZED);
    assert_eq!(call(&a, Method::GET, "/healthz", None, None).await.0, StatusCode::OK);
}

#[tokio::test]
async fn events_endpoint_rejects_unknown_scenes() {
    let p = pipeline_with(PipelineConfig::builtin());
    let a = app(&p, None);
    let e = json!({"event_id": "x", "property": "golf", "scene_type": "putt", "payload": {}});
    assert_eq!(call(&a, Method::POST, "/events", Some(e), None).await.0, StatusCode::BAD_REQUEST);
    assert_eq!(call(&a, Method::POST, "/events", Some(json!({"nope": 1})), None).await.0, StatusCode::BAD_REQUEST);
}
