#![cfg(feature = "remote")]

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use clinqa_core::reader::{ReaderInput, RemoteReader};
use clinqa_core::Error;
use serde_json::{json, Value};

type Handler = Box<dyn Fn(usize, &Value) -> (u16, String) + Send>;

/// Minimal HTTP/1.1 server answering each connection through `handler`.
/// Returns the endpoint URL and the request bodies it received.
fn serve(handler: Handler) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/read", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (i, stream) in listener.incoming().enumerate() {
            let mut stream = stream.unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let req: Value = serde_json::from_slice(&body).unwrap();
            let (status, reply) = handler(i, &req);
            log.lock().unwrap().push(req);
            let resp = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            );
            stream.write_all(resp.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

/// Answers every input with its first character.
fn first_char_outputs(req: &Value) -> String {
    let outputs: Vec<Value> = req["inputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|inp| {
            let n = inp["context"].as_str().unwrap().chars().count();
            let mut start = vec![0.0; n + 1];
            start[1] = 1.0;
            json!({
                "qid": inp["qid"],
                "no_answer_prob": 0.0,
                "start_probs": start,
                "end_probs": start,
                "offsets": (0..n).map(|i| [i, i + 1]).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "outputs": outputs }).to_string()
}

fn batch() -> Vec<ReaderInput> {
    vec![
        ReaderInput { qid: "q1".into(), question: "Where?".into(), context: "腹腔见积液".into() },
        ReaderInput { qid: "q2".into(), question: "What?".into(), context: "ab".into() },
    ]
}

#[test]
fn round_trip_against_fixture_server() {
    let (url, seen) = serve(Box::new(|_, req| (200, first_char_outputs(req))));
    let reader = RemoteReader::new(&url, Duration::from_secs(5), 1).unwrap();
    let out = reader.read(&batch()).unwrap();
    assert_eq!(out.len(), 2);
    assert_eq!(out[0].qid, "q1");
    assert_eq!(out[0].offsets.len(), 5);
    let sent = &seen.lock().unwrap()[0];
    assert_eq!(sent["inputs"][0], json!({"qid": "q1", "question": "Where?", "context": "腹腔见积液"}));
}

#[test]
fn server_errors_are_retried() {
    let (url, seen) =
        serve(Box::new(|i, req| if i == 0 { (503, "busy".into()) } else { (200, first_char_outputs(req)) }));
    let reader = RemoteReader::new(&url, Duration::from_secs(5), 3).unwrap();
    assert_eq!(reader.read(&batch()).unwrap().len(), 2);
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn retries_give_up_with_transport_error() {
    let (url, seen) = serve(Box::new(|_, _| (500, "down".into())));
    let reader = RemoteReader::new(&url, Duration::from_secs(5), 2).unwrap();
    match reader.read(&batch()) {
        Err(Error::Transport { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn malformed_responses_name_the_field() {
    let cases: Vec<(&str, Handler)> = vec![
        ("outputs", Box::new(|_, _| (200, r#"{"outputs":[]}"#.into()))),
        ("outputs", Box::new(|_, _| (200, "not json".into()))),
        (
            "qid",
            Box::new(|_, req| {
                let mut v: Value = serde_json::from_str(&first_char_outputs(req)).unwrap();
                v["outputs"].as_array_mut().unwrap().reverse();
                (200, v.to_string())
            }),
        ),
        (
            "offsets",
            Box::new(|_, req| {
                let mut v: Value = serde_json::from_str(&first_char_outputs(req)).unwrap();
                v["outputs"][1]["offsets"] = json!([[0, 1], [1, 9]]);
                (200, v.to_string())
            }),
        ),
        ("status", Box::new(|_, _| (400, "bad request".into()))),
    ];
    for (field, handler) in cases {
        let (url, _) = serve(handler);
        let reader = RemoteReader::new(&url, Duration::from_secs(5), 3).unwrap();
        match reader.read(&batch()) {
            Err(Error::Protocol { field: f, .. }) => assert_eq!(f, field),
            other => panic!("expected protocol error on {field}, got {other:?}"),
        }
    }
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let reader = RemoteReader::new(&format!("http://127.0.0.1:{port}/read"), Duration::from_millis(500), 2).unwrap();
    assert!(matches!(reader.read(&batch()), Err(Error::Transport { attempts: 2, .. })));
}
