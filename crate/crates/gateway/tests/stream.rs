mod common;

use common::{fixture, policy, same_window, start, window_json};
use futures_util::{SinkExt, StreamExt};
use privsense_core::dataset::ImuWindow;
use privsense_core::policy::PrivacyPolicy;
use serde_json::{json, Value};
use tokio_tungstenite::tungstenite::Message;

type Ws = tokio_tungstenite::WebSocketStream<tokio_tungstenite::MaybeTlsStream<tokio::net::TcpStream>>;

async fn connect(url: &str) -> Ws {
    tokio_tungstenite::connect_async(url).await.unwrap().0
}

async fn send(ws: &mut Ws, text: String) {
    ws.send(Message::Text(text.into())).await.unwrap();
}

async fn recv(ws: &mut Ws) -> Option<Value> {
    loop {
        match ws.next().await? {
            Ok(Message::Text(t)) => return Some(serde_json::from_str(&t).unwrap()),
            Ok(Message::Close(_)) | Err(_) => return None,
            Ok(_) => continue,
        }
    }
}

async fn roundtrip(ws: &mut Ws, seq: u64, w: &ImuWindow) -> Value {
    send(ws, json!({ "seq": seq, "window": window_json(w) }).to_string()).await;
    recv(ws).await.expect("reply")
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn replies_keep_sequence_order() {
    let srv = start(&policy(), None).await;
    let mut ws = connect(&srv.ws).await;
    let windows = &fixture().test[..5];
    for (i, w) in windows.iter().enumerate() {
        send(&mut ws, json!({ "seq": i + 1, "window": window_json(w) }).to_string()).await;
    }
    for i in 1..=5u64 {
        let v = recv(&mut ws).await.unwrap();
        assert_eq!(v["seq"], i);
        assert_eq!(v["policy_version"], 0);
        assert!(v["action"] == "passthrough" || v["action"] == "replaced");
    }
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn mid_stream_policy_switch_applies_to_later_frames() {
    let srv = start(&policy(), None).await;
    let standing = fixture().windows_detected_as("standing");
    assert!(standing.len() >= 5);
    let mut ws = connect(&srv.ws).await;
    for seq in 1..=2 {
        let v = roundtrip(&mut ws, seq, &standing[seq as usize]).await;
        assert_eq!(v["action"], "passthrough");
        assert_eq!(v["policy_version"], 0);
        assert!(same_window(&v["window"], &standing[seq as usize]));
    }
    let stricter = PrivacyPolicy::new(&["walking", "knocking"], &["swinging", "hammering", "standing"], &["brushing"]);
    let r = reqwest::Client::new()
        .put(format!("{}/policy", srv.base))
        .body(stricter.to_json())
        .send()
        .await
        .unwrap();
    assert_eq!(r.status(), 200);
    for seq in 3..=5 {
        let v = roundtrip(&mut ws, seq, &standing[seq as usize]).await;
        assert_eq!(v["seq"], seq);
        assert_eq!(v["policy_version"], 1);
        assert_eq!(v["action"], "replaced");
        assert_eq!(v["replacement"], "brushing");
    }
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn malformed_frames_get_error_replies_then_close() {
    let srv = start(&policy(), None).await;
    let w = &fixture().test[0];
    let mut ws = connect(&srv.ws).await;

    send(&mut ws, "not json".into()).await;
    let v = recv(&mut ws).await.unwrap();
    assert!(v["error"].as_str().is_some());
    assert_eq!(v["seq"], Value::Null);

    let mut bad = window_json(w);
    bad["length"] = json!(31);
    send(&mut ws, json!({ "seq": 7, "window": bad }).to_string()).await;
    let v = recv(&mut ws).await.unwrap();
    assert_eq!(v["seq"], 7);
    assert!(v["error"].as_str().unwrap().contains("32 x 6"));

    // a good frame resets the malformed counter
    let v = roundtrip(&mut ws, 8, w).await;
    assert_eq!(v["seq"], 8);
    assert!(v.get("error").is_none());

    for seq in 9..=11 {
        send(&mut ws, json!({ "seq": seq, "window": "nope" }).to_string()).await;
        let v = recv(&mut ws).await.unwrap();
        assert_eq!(v["seq"], seq);
        assert!(v["error"].as_str().is_some());
    }
    assert!(recv(&mut ws).await.is_none(), "session must close after 3 malformed frames");
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn concurrent_sessions_sum_to_global_counters() {
    let srv = start(&policy(), None).await;
    let f = fixture();
    let mut tasks = Vec::new();
    for s in 0..2usize {
        let url = srv.ws.clone();
        let windows: Vec<ImuWindow> = f.test.iter().skip(s * 40).take(40).cloned().collect();
        tasks.push(tokio::spawn(async move {
            let mut ws = connect(&url).await;
            let mut replaced = 0u64;
            for (i, w) in windows.iter().enumerate() {
                let v = roundtrip(&mut ws, i as u64, w).await;
                assert_eq!(v["seq"], i as u64);
                replaced += (v["action"] == "replaced") as u64;
            }
            (windows.len() as u64, replaced)
        }));
    }
    let mut seen = 0;
    let mut replaced = 0;
    for t in tasks {
        let (s, r) = t.await.unwrap();
        seen += s;
        replaced += r;
    }
    let m: Value = reqwest::get(format!("{}/metrics", srv.base)).await.unwrap().json().await.unwrap();
    assert_eq!(m["windows_seen"], seen);
    assert_eq!(m["windows_replaced"], replaced);
    let per_class: u64 = m["replacements_per_class"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum();
    assert_eq!(per_class, replaced);
    srv.stop().await;
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn no_black_window_leaves_the_gateway_raw() {
    let srv = start(&policy(), None).await;
    let f = fixture();
    let mut ws = connect(&srv.ws).await;
    let mut checked = 0;
    for (i, w) in f.test.iter().enumerate().take(120) {
        let v = roundtrip(&mut ws, i as u64, w).await;
        let top1 = v["top1"].as_str().unwrap();
        if policy().black.contains(top1) {
            checked += 1;
            assert_eq!(v["action"], "replaced");
            assert!(!same_window(&v["window"], w));
            assert!(policy().gray.contains(v["replacement"].as_str().unwrap()));
        } else {
            assert!(same_window(&v["window"], w));
        }
    }
    assert!(checked > 10);
    srv.stop().await;
}
