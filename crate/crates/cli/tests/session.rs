use std::net::TcpListener;
use std::sync::Arc;
use std::thread;

use kinebasis::sim::SimConfig;
use kinebasis::training::Trainer;
use kinebasis::{AnyMlp, BasisProvider, SketchScene, TrainConfig};
use kinebasis_cli::session::{decode_f32, Session};
use serde_json::{json, Value};
use tungstenite::Message;

fn config() -> SimConfig {
    SimConfig {
        n_projection_points: 256,
        n_particles: 16,
        ..SimConfig::default()
    }
}

fn analytic_session() -> Session {
    Session::new(Arc::new(BasisProvider::analytic(10)), config())
}

fn neural_provider() -> BasisProvider {
    let cfg = TrainConfig {
        m: 2,
        b: 4,
        width: 16,
        n_layers: 3,
        ..TrainConfig::default()
    };
    let model = Trainer::<f64>::new(cfg).unwrap().model;
    BasisProvider::from(AnyMlp::F64(model))
}

fn send(s: &mut Session, msg: Value) -> Vec<Value> {
    s.handle_text(&msg.to_string())
}

fn curve() -> Value {
    json!({ "points": [[0.3, 0.3], [0.7, 0.3], [0.7, 0.7]], "closed": false, "speed": 1.0 })
}

fn domain(cx: f64) -> Value {
    json!({
        "dim": 2,
        "circles": [{ "c": [cx, 0.5], "r": 0.06 }, { "c": [0.6, 0.35], "r": 0.05 }],
        "corner_radius": 0.2,
        "blend_k": 30,
        "band_eps": 0.05
    })
}

#[test]
fn hello_reports_basis_header() {
    let mut s = analytic_session();
    let r = send(&mut s, json!({"type": "hello", "v": 1, "id": 1}));
    assert_eq!(r.len(), 1);
    assert_eq!(r[0]["type"], "hello_ok");
    assert_eq!(r[0]["b"], 10);
    assert_eq!(r[0]["dim"], 2);
    assert_eq!(r[0]["id"], 1);
    let r = send(&mut s, json!({"type": "hello", "v": 2, "id": 2}));
    assert_eq!(r[0]["type"], "error");
}

#[test]
fn add_curve_then_fit() {
    let mut s = analytic_session();
    let r = send(&mut s, json!({"type": "add_curve", "curve": curve(), "id": "a"}));
    assert_eq!(r[0]["type"], "scene_ok");
    assert_eq!(r[0]["curve_id"], 1);
    assert_eq!(r[0]["alpha"].as_array().unwrap().len(), 10);
    let r = send(&mut s, json!({"type": "fit", "id": "b"}));
    assert_eq!(r[0]["type"], "fit_ok");
    assert_eq!(r[0]["alpha"].as_array().unwrap().len(), 10);
    assert!(r[0]["residual"].as_f64().unwrap().is_finite());
}

#[test]
fn step_without_fit_is_an_error() {
    let mut s = analytic_session();
    for msg in [json!({"type": "step", "id": 5}), json!({"type": "play", "id": 6})] {
        let r = send(&mut s, msg.clone());
        assert_eq!(r.len(), 1);
        assert_eq!(r[0]["type"], "error");
        assert_eq!(r[0]["message"], "no coefficients");
        assert_eq!(r[0]["id"], msg["id"]);
    }
}

#[test]
fn bad_messages_get_errors_and_session_survives() {
    let mut s = analytic_session();
    let r = s.handle_text("{not json");
    assert_eq!(r[0]["type"], "error");
    assert_eq!(r[0]["id"], Value::Null);
    let r = send(&mut s, json!({"type": "teleport", "id": 9}));
    assert_eq!(r[0]["type"], "error");
    assert_eq!(r[0]["id"], 9);
    let r = send(&mut s, json!({"type": "remove_curve", "curve_id": 42, "id": 10}));
    assert_eq!(r[0]["type"], "error");
    let r = send(&mut s, json!({"type": "hello", "id": 11}));
    assert_eq!(r[0]["type"], "hello_ok");
}

#[test]
fn every_request_answered_once_with_matching_id() {
    let mut s = analytic_session();
    let script = [
        json!({"type": "hello"}),
        json!({"type": "add_curve", "curve": curve()}),
        json!({"type": "update_curve", "curve_id": 1, "curve": curve()}),
        json!({"type": "fit"}),
        json!({"type": "step", "n": 3}),
        json!({"type": "get_field", "nx": 8, "ny": 8}),
        json!({"type": "get_particles"}),
        json!({"type": "set_keyframes", "keyframes": []}),
        json!({"type": "pause"}),
        json!({"type": "reset"}),
        json!({"type": "remove_curve", "curve_id": 1}),
    ];
    for (i, mut msg) in script.into_iter().enumerate() {
        msg["id"] = json!(i);
        let replies = send(&mut s, msg);
        let with_id: Vec<_> = replies.iter().filter(|r| r.get("id").is_some()).collect();
        assert_eq!(with_id.len(), 1, "request {i}: {replies:?}");
        assert_eq!(with_id[0]["id"], i);
        assert_ne!(with_id[0]["type"], "error", "request {i}: {replies:?}");
    }
}

#[test]
fn step_streams_monotone_frames() {
    let mut s = analytic_session();
    send(&mut s, json!({"type": "add_curve", "curve": curve()}));
    let r = send(&mut s, json!({"type": "step", "n": 10, "id": 1}));
    assert_eq!(r.len(), 11);
    let times: Vec<f64> = r[..10].iter().map(|f| f["t"].as_f64().unwrap()).collect();
    assert!(times.windows(2).all(|w| w[1] > w[0]));
    assert_eq!(r[10]["type"], "step_ok");
}

#[test]
fn edits_while_playing_refit_on_next_tick() {
    let mut s = analytic_session();
    send(&mut s, json!({"type": "add_curve", "curve": curve()}));
    send(&mut s, json!({"type": "play", "dt": 0.01}));
    assert!(s.is_playing());
    let r = send(&mut s, json!({"type": "add_curve", "curve": curve()}));
    assert!(r[0].get("alpha").is_none());
    let frame = s.tick();
    assert_eq!(frame[0]["type"], "frame");
    assert!((frame[0]["t"].as_f64().unwrap() - 0.01).abs() < 1e-15);
    send(&mut s, json!({"type": "pause"}));
    assert!(s.tick().is_empty());
}

#[test]
fn binary_grid_decodes_to_json_values() {
    let mut plain = analytic_session();
    let mut binary = analytic_session();
    send(&mut binary, json!({"type": "hello", "binary_grid": true}));
    for s in [&mut plain, &mut binary] {
        send(s, json!({"type": "add_curve", "curve": curve()}));
    }
    let field = |s: &mut Session| send(s, json!({"type": "get_field", "nx": 6, "ny": 5})).remove(0);
    let (a, b) = (field(&mut plain), field(&mut binary));
    assert_eq!(b["grid"]["encoding"], "f32le_base64");
    let u = decode_f32(b["grid"]["u"].as_str().unwrap()).unwrap();
    let expected: Vec<f64> = a["grid"]["u"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert_eq!(u.len(), 30);
    for (x, y) in u.iter().zip(&expected) {
        assert_eq!(*x, *y as f32);
    }
}

#[test]
fn scene_json_is_a_fixpoint() {
    let mut s = Session::new(Arc::new(neural_provider()), config());
    let r = send(&mut s, json!({"type": "set_domain", "domain": domain(0.4)}));
    assert_eq!(r[0]["type"], "scene_ok");
    send(&mut s, json!({"type": "add_curve", "curve": curve()}));
    let first = serde_json::to_string(s.scene()).unwrap();
    let parsed: SketchScene = serde_json::from_str(&first).unwrap();
    let second = serde_json::to_string(&parsed).unwrap();
    assert_eq!(first, second);
    let r = send(&mut s, json!({"type": "set_domain", "domain": {"dim": 2, "circles": []}}));
    assert_eq!(r[0]["type"], "error");
}

#[test]
fn websocket_round_trip() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let provider = Arc::new(neural_provider());
    thread::spawn(move || kinebasis_cli::server::serve(listener, provider, config()));

    let (mut ws, _) = tungstenite::connect(format!("ws://{addr}")).unwrap();
    let mut next_id = 0;
    let mut request = |ws: &mut tungstenite::WebSocket<_>, mut msg: Value| -> Vec<Value> {
        next_id += 1;
        msg["id"] = json!(next_id);
        ws.send(Message::Text(msg.to_string().into())).unwrap();
        let mut replies = Vec::new();
        loop {
            let text = match ws.read().unwrap() {
                Message::Text(t) => t,
                _ => continue,
            };
            let v: Value = serde_json::from_str(text.as_str()).unwrap();
            let done = v.get("id").is_some();
            if done {
                assert_eq!(v["id"], next_id);
            }
            replies.push(v);
            if done {
                return replies;
            }
        }
    };

    let hello = request(&mut ws, json!({"type": "hello", "v": 1}));
    assert_eq!(hello[0]["b"], 4);
    assert_eq!(hello[0]["dim"], 2);
    request(&mut ws, json!({"type": "set_domain", "domain": domain(0.35)}));
    request(&mut ws, json!({"type": "set_domain", "domain": domain(0.4)}));
    request(&mut ws, json!({"type": "add_curve", "curve": curve()}));
    let fit = request(&mut ws, json!({"type": "fit"}));
    assert_eq!(fit[0]["type"], "fit_ok");
    assert_eq!(fit[0]["alpha"].as_array().unwrap().len(), 4);
    let steps = request(&mut ws, json!({"type": "step", "n": 10}));
    let frames: Vec<f64> = steps
        .iter()
        .filter(|m| m["type"] == "frame")
        .map(|m| m["t"].as_f64().unwrap())
        .collect();
    assert_eq!(frames.len(), 10);
    assert!(frames.windows(2).all(|w| w[1] > w[0]));
    let unknown = request(&mut ws, json!({"type": "nope"}));
    assert_eq!(unknown[0]["type"], "error");
    let field = request(&mut ws, json!({"type": "get_field", "nx": 4, "ny": 4}));
    assert_eq!(field[0]["grid"]["u"].as_array().unwrap().len(), 16);
    ws.close(None).ok();
}
