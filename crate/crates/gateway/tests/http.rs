mod common;

use common::{fixture, policy, same_window, start, start_with_state, window_json};
use privsense_core::policy::{Category, PrivacyPolicy};
use privsense_gateway::{history_path, AppState, API_KEY_HEADER};
use reqwest::StatusCode;
use serde_json::{json, Value};

fn client() -> reqwest::Client {
    reqwest::Client::new()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn policy_get_returns_loaded_policy_and_fresh_metrics() {
    let srv = start(&policy(), None).await;
    let got: PrivacyPolicy = client().get(format!("{}/policy", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, policy());
    let m: Value = client().get(format!("{}/metrics", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(m["windows_seen"], 0);
    assert_eq!(m["windows_replaced"], 0);
    assert_eq!(m["policy_version"], 0);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn invalid_puts_are_rejected_with_issue_lists() {
    let srv = start(&policy(), None).await;
    let url = format!("{}/policy", srv.base);
    let cases = [
        (json!({"white":["walking"],"black":["walking"],"gray":["standing"]}).to_string(), "overlap"),
        (json!({"white":[],"black":["swinging"],"gray":[]}).to_string(), "gray_required"),
        (json!({"white":["dancing"],"black":[],"gray":[]}).to_string(), "unknown_class"),
        (json!({"white":[],"black":[]}).to_string(), "schema"),
        ("{not json".to_string(), "malformed"),
    ];
    for (body, kind) in cases {
        let r = client().put(&url).body(body).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST, "{kind}");
        let v: Value = r.json().await.unwrap();
        assert_eq!(v["policy_version"], 0);
        let kinds: Vec<&str> = v["issues"].as_array().unwrap().iter().map(|i| i["kind"].as_str().unwrap()).collect();
        assert!(kinds.contains(&kind), "{kind}: {v}");
    }
    let got: PrivacyPolicy = client().get(&url).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, policy());
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn valid_put_bumps_version_and_persists() {
    let srv = start(&policy(), None).await;
    let url = format!("{}/policy", srv.base);
    let new = PrivacyPolicy::new(&["walking"], &["swinging", "hammering", "knocking"], &["standing", "brushing"]);
    let r = client().put(&url).body(new.to_json()).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let v: Value = r.json().await.unwrap();
    assert_eq!(v["version"], 1);
    let got: PrivacyPolicy = client().get(&url).send().await.unwrap().json().await.unwrap();
    assert_eq!(got, PrivacyPolicy { version: 1, ..new.clone() });
    let on_disk = std::fs::read_to_string(&srv.config.policy).unwrap();
    assert_eq!(PrivacyPolicy::parse(&on_disk).unwrap(), got);
    let history = std::fs::read_to_string(history_path(&srv.config.policy)).unwrap();
    assert_eq!(history.lines().count(), 1);
    let acts: Value = client().get(format!("{}/activities", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(acts["policy_version"], 1);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn classify_ranks_every_class() {
    let srv = start(&policy(), None).await;
    let f = fixture();
    let w = &f.test[0];
    let r = client()
        .post(format!("{}/classify", srv.base))
        .json(&json!({ "window": window_json(w) }))
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let v: Value = r.json().await.unwrap();
    let top_k = v["top_k"].as_array().unwrap();
    assert_eq!(top_k.len(), f.class_names.len());
    let scores: Vec<f64> = top_k.iter().map(|p| p[1].as_f64().unwrap()).collect();
    assert!(scores.windows(2).all(|s| s[0] >= s[1]));
    assert_eq!(v["top1"], top_k[0][0]);
    let (expected, _) = f.classifier.classify(w, f.classifier.class_names()).unwrap();
    assert_eq!(v["top1"], expected.as_str());
    assert_eq!(v["policy_version"], 0);
    // a bare window body is accepted too
    let bare = client().post(format!("{}/classify", srv.base)).json(&window_json(w)).send().await.unwrap();
    assert_eq!(bare.status(), StatusCode::OK);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn shape_and_body_errors() {
    let srv = start(&policy(), None).await;
    let w = &fixture().test[0];
    let mut bad = window_json(w);
    bad["channels"] = json!(5);
    for row in bad["data"].as_array_mut().unwrap() {
        row.as_array_mut().unwrap().pop();
    }
    for ep in ["classify", "sanitize"] {
        let r = client().post(format!("{}/{ep}", srv.base)).json(&json!({ "window": bad })).send().await.unwrap();
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);
        let v: Value = r.json().await.unwrap();
        let msg = v["message"].as_str().unwrap();
        assert!(msg.contains("32 x 6") && msg.contains("32 x 5"), "{msg}");
        assert_eq!(v["policy_version"], 0);
        let r = client().post(format!("{}/{ep}", srv.base)).body("[1,2").send().await.unwrap();
        assert_eq!(r.status(), StatusCode::BAD_REQUEST);
    }
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn sanitize_follows_the_policy() {
    let srv = start(&policy(), None).await;
    let f = fixture();
    let url = format!("{}/sanitize", srv.base);
    let white = f.windows_detected_as("walking");
    let v: Value = client().post(&url).json(&json!({ "window": window_json(&white[0]) })).send().await.unwrap().json().await.unwrap();
    assert_eq!(v["action"], "passthrough");
    assert!(same_window(&v["window"], &white[0]));
    assert_eq!(v["replacement"], Value::Null);

    let black = f.windows_detected_as("swinging");
    let v: Value = client().post(&url).json(&json!({ "window": window_json(&black[0]) })).send().await.unwrap().json().await.unwrap();
    assert_eq!(v["action"], "replaced");
    assert_eq!(v["top1"], "swinging");
    let rep = v["replacement"].as_str().unwrap();
    assert!(policy().gray.contains(rep), "{rep}");
    assert!(!same_window(&v["window"], &black[0]));
    assert!(v["replacement_description"].as_str().is_some());

    let m: Value = client().get(format!("{}/metrics", srv.base)).send().await.unwrap().json().await.unwrap();
    assert_eq!(m["windows_seen"], 2);
    assert_eq!(m["windows_replaced"], 1);
    assert_eq!(m["replacements_per_class"][rep], 1);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn activities_match_categorize() {
    let srv = start(&policy(), None).await;
    let v: Value = client().get(format!("{}/activities", srv.base)).send().await.unwrap().json().await.unwrap();
    let list = v["activities"].as_array().unwrap();
    assert_eq!(list.len(), fixture().class_names.len());
    for (i, a) in list.iter().enumerate() {
        let name = a["name"].as_str().unwrap();
        assert_eq!(name, fixture().class_names[i]);
        let want: Category = policy().categorize(name);
        assert_eq!(a["category"], serde_json::to_value(want).unwrap());
    }
    assert_eq!(v["policy_version"], 0);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn unavailable_until_model_is_installed() {
    let (dir, config) = fixture().config(&policy());
    let state = AppState::new(None, None, 0);
    let srv = start_with_state(state.clone(), dir, config.clone()).await;
    for (method, ep) in [("GET", "policy"), ("GET", "metrics"), ("GET", "activities"), ("POST", "sanitize")] {
        let r = client()
            .request(method.parse().unwrap(), format!("{}/{ep}", srv.base))
            .body("{}")
            .send()
            .await
            .unwrap();
        assert_eq!(r.status(), StatusCode::SERVICE_UNAVAILABLE, "{ep}");
    }
    state.install(privsense_gateway::load_engine(&config).unwrap());
    let r = client().get(format!("{}/policy", srv.base)).send().await.unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn api_key_is_enforced_when_configured() {
    let srv = start(&policy(), Some("s3cret")).await;
    let url = format!("{}/policy", srv.base);
    assert_eq!(client().get(&url).send().await.unwrap().status(), StatusCode::UNAUTHORIZED);
    let wrong = client().get(&url).header(API_KEY_HEADER, "nope").send().await.unwrap();
    assert_eq!(wrong.status(), StatusCode::UNAUTHORIZED);
    let ok = client().get(&url).header(API_KEY_HEADER, "s3cret").send().await.unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    srv.stop().await;
}
