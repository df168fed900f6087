//! The HTTP client against an in-process stub server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use k2t_core::backends::{
    BackendConfig, BackendError, Backends, Embedder, Endpoint, MockBackend, NliLabel, NliModel, QuestionAnswerer,
    QuestionGenerator, RemoteBackend, SpanExtractor, TextGenerator,
};
use k2t_core::corpus::FactualTriple;
use k2t_core::mafe::{evaluate, MafeConfig};
use serde_json::{json, Value};

type Handler = dyn Fn(&str, &Value) -> (u16, String) + Send + Sync;

struct Stub {
    url: String,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
    max_in_flight: Arc<AtomicUsize>,
}

fn serve(handler: impl Fn(&str, &Value) -> (u16, String) + Send + Sync + 'static) -> Stub {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let handler: Arc<Handler> = Arc::new(handler);
    let requests = Arc::new(Mutex::new(Vec::new()));
    let in_flight = Arc::new(AtomicUsize::new(0));
    let max_in_flight = Arc::new(AtomicUsize::new(0));
    let stub = Stub { url, requests: requests.clone(), max_in_flight: max_in_flight.clone() };
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(stream) = stream else { continue };
            let (handler, requests, in_flight, max_in_flight) =
                (handler.clone(), requests.clone(), in_flight.clone(), max_in_flight.clone());
            thread::spawn(move || {
                let now = in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                max_in_flight.fetch_max(now, Ordering::SeqCst);
                handle(stream, &*handler, &requests);
                in_flight.fetch_sub(1, Ordering::SeqCst);
            });
        }
    });
    stub
}

fn handle(stream: TcpStream, handler: &Handler, requests: &Mutex<Vec<(String, Value)>>) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
    let mut length = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        if h.trim().is_empty() {
            break;
        }
        if let Some((name, value)) = h.split_once(':') {
            if name.eq_ignore_ascii_case("content-length") {
                length = value.trim().parse().unwrap();
            }
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let body: Value = serde_json::from_slice(&body).unwrap_or(Value::Null);
    requests.lock().unwrap().push((path.clone(), body.clone()));
    let (status, text) = handler(&path, &body);
    let mut stream = stream;
    let _ = write!(
        stream,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
        text.len()
    );
}

fn client(url: &str) -> RemoteBackend {
    RemoteBackend::new(BackendConfig { endpoint: Endpoint::Url(url.into()), timeout_secs: 5.0, max_concurrency: 4, retries: 2 })
        .unwrap()
}

fn ok(v: Value) -> (u16, String) {
    (200, v.to_string())
}

fn protocol_field(e: BackendError) -> String {
    match e {
        BackendError::Protocol { field, .. } => field,
        other => panic!("expected a protocol error, got {other}"),
    }
}

#[test]
fn endpoints_round_trip() {
    let stub = serve(|path, body| match path {
        "/v1/qg" => ok(json!({"question": "Who won?"})),
        "/v1/qa" => ok(json!({"answer": "Hawaii", "unanswerable": false, "confidence": 0.75})),
        "/v1/nli" => ok(json!({"label": "neutral", "probs": [0.2, 0.7, 0.1]})),
        "/v1/embed" if body["mode"] == "token" => ok(json!({"dim": 2, "vectors": [[[1.0, 0.0], [0.0, 1.0]]]})),
        "/v1/embed" => ok(json!({"dim": 3, "vectors": [[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]]})),
        "/v1/spans" => ok(json!({"spans": [{"start": 0, "end": 5}, {"start": 9, "end": 15}]})),
        "/v1/generate" => ok(json!({"text": "out", "truncated": true})),
        _ => (404, "{}".into()),
    });
    let c = client(&stub.url);
    assert_eq!(c.question("Obama won in Hawaii", 12, 18).unwrap(), "Who won?");
    let a = c.answer("q", "ctx").unwrap();
    assert_eq!((a.answer.as_str(), a.unanswerable, a.confidence), ("Hawaii", false, 0.75));
    let v = c.nli("p", "h").unwrap();
    assert_eq!(v.label, NliLabel::Neutral);
    assert_eq!(c.embed_tokens(&["a b".into()]).unwrap(), vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]]]);
    assert_eq!(c.embed_sequences(&["a".into(), "b".into()]).unwrap()[0], vec![1.0, 2.0, 3.0]);
    assert_eq!(c.spans("Obama was in Hawaii").unwrap(), vec![(0, 5), (9, 15)]);
    let g = c.generate(&["x".into()], 8).unwrap();
    assert_eq!((g.text.as_str(), g.truncated), ("out", true));

    let reqs = stub.requests.lock().unwrap().clone();
    assert_eq!(reqs[0], ("/v1/qg".into(), json!({"sentence": "Obama won in Hawaii", "answer_start": 12, "answer_end": 18})));
    assert_eq!(reqs[1].1, json!({"question": "q", "context": "ctx"}));
    assert_eq!(reqs[2].1, json!({"premise": "p", "hypothesis": "h"}));
    assert_eq!(reqs[3].1, json!({"texts": ["a b"], "mode": "token"}));
    assert_eq!(reqs[4].1, json!({"texts": ["a", "b"], "mode": "sequence"}));
    assert_eq!(reqs[5].1, json!({"sentence": "Obama was in Hawaii"}));
    assert_eq!(reqs[6].1, json!({"inputs": ["x"], "max_tokens": 8}));
}

#[test]
fn key_question_marks_the_key() {
    let stub = serve(|_, _| ok(json!({"question": "What is his place of birth?"})));
    let c = client(&stub.url);
    c.key_question("Barack Obama", "placeOfBirth").unwrap();
    let body = stub.requests.lock().unwrap()[0].1.clone();
    assert_eq!(body, json!({"sentence": "Barack Obama place of birth", "answer_start": 13, "answer_end": 27}));
}

#[test]
fn malformed_responses_name_the_field() {
    let stub = serve(|path, _| match path {
        "/v1/qa" => ok(json!({"answer": "x", "unanswerable": false})),
        "/v1/nli" => ok(json!({"label": "maybe", "probs": [0.2, 0.7, 0.1]})),
        "/v1/embed" => ok(json!({"dim": 3, "vectors": [[1.0, 2.0]]})),
        "/v1/spans" => ok(json!({"spans": [{"start": 0}]})),
        "/v1/generate" => ok(json!({"text": 5})),
        "/v1/qg" => (200, "not json".into()),
        _ => (404, "{}".into()),
    });
    let c = client(&stub.url);
    assert_eq!(protocol_field(c.answer("q", "c").unwrap_err()), "confidence");
    assert_eq!(protocol_field(c.nli("p", "h").unwrap_err()), "label");
    assert_eq!(protocol_field(c.embed_sequences(&["a".into()]).unwrap_err()), "vectors");
    assert_eq!(protocol_field(c.spans("abc").unwrap_err()), "spans.end");
    assert_eq!(protocol_field(c.generate(&["x".into()], 4).unwrap_err()), "text");
    assert_eq!(protocol_field(c.question("abc", 0, 1).unwrap_err()), "<body>");
}

#[test]
fn inconsistent_nli_and_spans_are_rejected() {
    let stub = serve(|path, _| match path {
        "/v1/nli" => ok(json!({"label": "entailment", "probs": [0.2, 0.7, 0.1]})),
        _ => ok(json!({"spans": [{"start": 2, "end": 9}]})),
    });
    let c = client(&stub.url);
    assert_eq!(protocol_field(c.nli("p", "h").unwrap_err()), "probs");
    assert_eq!(protocol_field(c.spans("abc").unwrap_err()), "spans");
    assert!(matches!(c.question("abc", 2, 9), Err(BackendError::InvalidRequest(_))));
}

#[test]
fn overload_and_server_errors_are_retried() {
    let calls = Arc::new(AtomicUsize::new(0));
    let seen = calls.clone();
    let stub = serve(move |_, _| {
        let n = seen.fetch_add(1, Ordering::SeqCst);
        match n {
            0 => (429, "{}".into()),
            1 => (503, "{}".into()),
            _ => ok(json!({"answer": "", "unanswerable": true, "confidence": 0.1})),
        }
    });
    assert!(client(&stub.url).answer("q", "").unwrap().unanswerable);
    assert_eq!(calls.load(Ordering::SeqCst), 3);

    let stub = serve(|_, _| (500, "boom".into()));
    match client(&stub.url).answer("q", "c") {
        Err(BackendError::Http { status: 500, body, .. }) => assert_eq!(body, "boom"),
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(stub.requests.lock().unwrap().len(), 3);

    let stub = serve(|_, _| (400, r#"{"error": "bad field question"}"#.into()));
    assert!(matches!(client(&stub.url).answer("q", "c"), Err(BackendError::Http { status: 400, .. })));
    assert_eq!(stub.requests.lock().unwrap().len(), 1);
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let c = client(&format!("http://127.0.0.1:{port}"));
    match c.answer("q", "c") {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn concurrency_bound_is_respected() {
    let stub = serve(|_, _| {
        thread::sleep(Duration::from_millis(30));
        ok(json!({"question": "q?"}))
    });
    let c = Arc::new(
        RemoteBackend::new(BackendConfig {
            endpoint: Endpoint::Url(stub.url.clone()),
            timeout_secs: 5.0,
            max_concurrency: 3,
            retries: 0,
        })
        .unwrap(),
    );
    let handles: Vec<_> = (0..16)
        .map(|_| {
            let c = c.clone();
            thread::spawn(move || c.question("abc", 0, 1).unwrap())
        })
        .collect();
    for h in handles {
        h.join().unwrap();
    }
    let max = stub.max_in_flight.load(Ordering::SeqCst);
    assert!(max <= 3, "{max} requests in flight");
    assert!(max >= 2, "requests never overlapped");
}

/// Serves the protocol by delegating to the mock backend.
fn mock_server() -> Stub {
    let m = MockBackend::default();
    serve(move |path, b| {
        let s = |k: &str| b[k].as_str().unwrap_or_default().to_string();
        let texts: Vec<String> = b["texts"].as_array().map(|a| a.iter().map(|t| t.as_str().unwrap().to_string()).collect()).unwrap_or_default();
        match path {
            "/v1/qg" => {
                let q = m.question(&s("sentence"), b["answer_start"].as_u64().unwrap() as usize, b["answer_end"].as_u64().unwrap() as usize);
                ok(json!({"question": q.unwrap()}))
            }
            "/v1/qa" => {
                let a = m.answer(&s("question"), &s("context")).unwrap();
                ok(json!({"answer": a.answer, "unanswerable": a.unanswerable, "confidence": a.confidence}))
            }
            "/v1/nli" => {
                let v = m.nli(&s("premise"), &s("hypothesis")).unwrap();
                ok(json!({"label": v.label, "probs": v.probs}))
            }
            "/v1/embed" if b["mode"] == "token" => ok(json!({"dim": m.embed_dim(), "vectors": m.embed_tokens(&texts).unwrap()})),
            "/v1/embed" => ok(json!({"dim": m.embed_dim(), "vectors": m.embed_sequences(&texts).unwrap()})),
            "/v1/spans" => {
                let spans: Vec<Value> = m.spans(&s("sentence")).unwrap().into_iter().map(|(a, e)| json!({"start": a, "end": e})).collect();
                ok(json!({ "spans": spans }))
            }
            _ => (404, "{}".into()),
        }
    })
}

#[test]
fn mafe_over_http_matches_in_process() {
    let stub = mock_server();
    let config = BackendConfig { endpoint: Endpoint::Url(stub.url.clone()), ..Default::default() };
    let remote = Backends::from_config(&config).unwrap();
    let hyp = "Kenny Jay 's sport was professional wrestling. He was born in 1937.";
    let reference = "Kenny Jay 's sport was professional wrestling in Minnesota. Kenny Jay retired in 1992.";
    let triples = [FactualTriple::new("Kenny Jay", "sport", "professional wrestling").unwrap()];
    let a = evaluate(hyp, reference, &triples, &remote, &MafeConfig::default()).unwrap();
    let b = evaluate(hyp, reference, &triples, &Backends::mock(), &MafeConfig::default()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.recall > 0.0 && a.precision > 0.0);
    assert!(stub.max_in_flight.load(Ordering::SeqCst) <= config.max_concurrency);
}
