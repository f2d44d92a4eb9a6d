//! The HTTP adapter against a throwaway local server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use m3c_core::backend::{AgentBackend, Embedder, RemoteBackend, RemoteConfig, RemoteEmbedder, TurnContext};
use m3c_core::{Session, SpeakerId, SpeakerProfile};
use serde_json::Value;

struct Seen {
    auth: Option<String>,
    body: Value,
}

/// Serves one canned `(status, body)` per connection, in order, and reports
/// each request it saw.
fn mock(replies: Vec<(u16, String)>) -> (String, mpsc::Receiver<Seen>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut len = 0;
            let mut auth = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap_or((line, ""));
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => len = value.trim().parse().unwrap(),
                    "authorization" => auth = Some(value.trim().to_owned()),
                    _ => {}
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            tx.send(Seen { auth, body: serde_json::from_slice(&body).unwrap() }).unwrap();
            let mut stream = reader.into_inner();
            write!(
                stream,
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
        }
    });
    (url, rx)
}

fn with_ctx<R>(f: impl FnOnce(&TurnContext<'_>) -> R) -> R {
    let people = vec![
        SpeakerProfile::new("A", "Alex", "friend"),
        SpeakerProfile::new("B", "Jamie", "sister"),
        SpeakerProfile::new("C", "Taylor", "colleague"),
    ];
    let session = Session {
        index: 0,
        main_speaker: SpeakerId::new("A"),
        partners: [SpeakerId::new("B"), SpeakerId::new("C")],
        modality_slots: [m3c_core::ItemId::new("x"), m3c_core::ItemId::new("y")],
        turns: vec![],
    };
    let items = Default::default();
    let ctx = TurnContext {
        session_index: session.index,
        turn_index: 0,
        speaker: &people[1],
        participants: &people,
        turns: &session.turns,
        items: &items,
        incoming: None,
        pending_item: None,
        opening_memory: None,
        nonce: 0,
    };
    f(&ctx)
}

#[test]
fn bid_uses_reported_token_probability() {
    let (url, seen) = mock(vec![(200, r#"{"content":"[YES]","token_probability":0.83}"#.into())]);
    let mut cfg = RemoteConfig::new(url, "m");
    cfg.token_probability = true;
    cfg.api_key = Some("sekrit".into());
    let backend = RemoteBackend::new(cfg).unwrap();
    let bid = with_ctx(|ctx| backend.decide_turn(ctx)).unwrap();
    assert_eq!(bid.probability(), Some(0.83));

    let req = seen.recv().unwrap();
    assert_eq!(req.auth.as_deref(), Some("Bearer sekrit"));
    assert_eq!(req.body["model"], "m");
    let messages = req.body["messages"].as_array().unwrap();
    assert_eq!(messages.last().unwrap()["role"], "user");
    // With token probabilities available the prompt does not ask for a confidence.
    assert!(!messages.last().unwrap()["content"].as_str().unwrap().contains("confidence"));
}

#[test]
fn self_reported_confidence_when_probabilities_are_absent() {
    let (url, seen) = mock(vec![(200, r#"{"content":"[YES] 0.6"}"#.into())]);
    let backend = RemoteBackend::new(RemoteConfig::new(url, "m")).unwrap();
    let bid = with_ctx(|ctx| backend.decide_turn(ctx)).unwrap();
    assert_eq!(bid.probability(), Some(0.6));
    let req = seen.recv().unwrap();
    assert!(req.body["messages"].to_string().contains("confidence"));
}

#[test]
fn transport_and_protocol_failures_are_typed() {
    let (url, _seen) = mock(vec![(500, r#"{"error":"boom"}"#.into()), (200, r#"{"text":"wrong shape"}"#.into())]);
    let backend = RemoteBackend::new(RemoteConfig::new(url, "m")).unwrap();
    let first = with_ctx(|ctx| backend.decide_turn(ctx)).unwrap_err();
    assert_eq!(first.code(), "TRANSPORT");
    let second = with_ctx(|ctx| backend.decide_turn(ctx)).unwrap_err();
    assert_eq!(second.code(), "BACKEND_PROTOCOL");
}

#[test]
fn unparseable_bid_is_a_protocol_error() {
    let (url, _seen) = mock(vec![(200, r#"{"content":"maybe later"}"#.into())]);
    let backend = RemoteBackend::new(RemoteConfig::new(url, "m")).unwrap();
    assert_eq!(with_ctx(|ctx| backend.decide_turn(ctx)).unwrap_err().code(), "BACKEND_PROTOCOL");
}

#[test]
fn embedder_checks_dimension() {
    let (url, seen) = mock(vec![(200, r#"{"embedding":[0.6,0.8,0.0]}"#.into()), (200, r#"{"embedding":[1.0]}"#.into())]);
    let mut cfg = RemoteConfig::new("http://unused", "chat");
    cfg.embedding_endpoint = Some(url);
    cfg.embedding_model = Some("emb".into());
    cfg.embedding_dim = Some(3);
    let embedder = RemoteEmbedder::new(&cfg).unwrap();
    assert_eq!(embedder.embed_text("harbour").unwrap().values(), [0.6, 0.8, 0.0]);
    let req = seen.recv().unwrap();
    assert_eq!((req.body["model"].as_str(), req.body["input"].as_str()), (Some("emb"), Some("harbour")));
    assert_eq!(embedder.embed_text("again").unwrap_err().code(), "BACKEND_PROTOCOL");
}

#[test]
fn unreachable_endpoint_is_transport() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let backend = RemoteBackend::new(RemoteConfig::new(format!("http://127.0.0.1:{port}/x"), "m")).unwrap();
    let err = with_ctx(|ctx| backend.decide_retrieval(ctx)).unwrap_err();
    assert!(matches!(err.code(), "TRANSPORT" | "TIMEOUT"), "{err}");
}
