//! Per-session append-only event log and its SSE rendering.

use std::collections::VecDeque;
use std::convert::Infallible;
use std::sync::{Arc, Mutex};

use axum::response::sse::Event;
use futures::Stream;
use serde::{Deserialize, Serialize};
use tokio::sync::watch;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Turn,
    Modality,
    Retrieval,
    SessionOpened,
    SessionClosed,
    MemoryWritten,
    Error,
}

impl EventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::Turn => "turn",
            EventKind::Modality => "modality",
            EventKind::Retrieval => "retrieval",
            EventKind::SessionOpened => "session_opened",
            EventKind::SessionClosed => "session_closed",
            EventKind::MemoryWritten => "memory_written",
            EventKind::Error => "error",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub seq: u64,
    pub kind: EventKind,
    pub payload: serde_json::Value,
}

#[derive(Default)]
struct LogInner {
    events: Vec<SessionEvent>,
    finished: bool,
}

/// Written by the session driver only; read by any number of streams.
/// Sequence numbers start at 1.
pub struct EventLog {
    inner: Mutex<LogInner>,
    tx: watch::Sender<u64>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self { inner: Mutex::new(LogInner::default()), tx: watch::channel(0).0 }
    }
}

impl EventLog {
    pub fn push(&self, kind: EventKind, payload: serde_json::Value) -> u64 {
        let mut inner = self.inner.lock().expect("log lock");
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(SessionEvent { seq, kind, payload });
        drop(inner);
        self.tx.send_replace(seq);
        seq
    }

    /// No more events will follow.
    pub fn finish(&self) {
        self.inner.lock().expect("log lock").finished = true;
        self.tx.send_modify(|_| {});
    }

    pub fn is_finished(&self) -> bool {
        self.inner.lock().expect("log lock").finished
    }

    /// Events with `seq > from`, and whether the log is finished.
    pub fn since(&self, from: u64) -> (Vec<SessionEvent>, bool) {
        let inner = self.inner.lock().expect("log lock");
        let start = (from as usize).min(inner.events.len());
        (inner.events[start..].to_vec(), inner.finished)
    }

    pub fn last_seq(&self) -> u64 {
        self.inner.lock().expect("log lock").events.len() as u64
    }
}

fn to_sse(event: &SessionEvent) -> Event {
    Event::default()
        .id(event.seq.to_string())
        .event(event.kind.as_str())
        .data(serde_json::to_string(event).expect("event serialises"))
}

/// Backlog after `from`, then live events, ending once the log is finished
/// and drained.
pub fn event_stream(log: Arc<EventLog>, from: u64) -> impl Stream<Item = Result<Event, Infallible>> {
    let rx = log.tx.subscribe();
    let state = (log, rx, from, VecDeque::<SessionEvent>::new());
    futures::stream::unfold(state, |(log, mut rx, mut last, mut buf)| async move {
        loop {
            if let Some(event) = buf.pop_front() {
                last = event.seq;
                return Some((Ok(to_sse(&event)), (log, rx, last, buf)));
            }
            rx.borrow_and_update();
            let (fresh, finished) = log.since(last);
            if !fresh.is_empty() {
                buf.extend(fresh);
                continue;
            }
            if finished || rx.changed().await.is_err() {
                return None;
            }
        }
    })
}

/// Reads the `data:` lines of an SSE body back into events.
pub fn parse_sse(body: &str) -> Vec<SessionEvent> {
    let mut out = Vec::new();
    let mut data = String::new();
    for line in body.lines() {
        if let Some(rest) = line.strip_prefix("data:") {
            if !data.is_empty() {
                data.push('\n');
            }
            data.push_str(rest.strip_prefix(' ').unwrap_or(rest));
        } else if line.is_empty() && !data.is_empty() {
            if let Ok(event) = serde_json::from_str(&data) {
                out.push(event);
            }
            data.clear();
        }
    }
    if let Ok(event) = serde_json::from_str(&data) {
        out.push(event);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use futures::StreamExt;

    #[tokio::test]
    async fn backlog_then_live_then_end() {
        let log = Arc::new(EventLog::default());
        log.push(EventKind::SessionOpened, serde_json::json!({}));
        log.push(EventKind::Turn, serde_json::json!({"index": 0}));
        let mut stream = Box::pin(event_stream(Arc::clone(&log), 1));
        let writer = {
            let log = Arc::clone(&log);
            tokio::spawn(async move {
                tokio::time::sleep(std::time::Duration::from_millis(20)).await;
                log.push(EventKind::Turn, serde_json::json!({"index": 1}));
                log.finish();
            })
        };
        let mut n = 0;
        while let Some(Ok(_)) = stream.next().await {
            n += 1;
        }
        writer.await.unwrap();
        assert_eq!(n, 2);
        assert_eq!(log.since(0).0.iter().map(|e| e.seq).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn sse_parse_round_trip() {
        let body = "id: 1\nevent: turn\ndata: {\"seq\":1,\"kind\":\"turn\",\"payload\":{}}\n\nid: 2\nevent: error\ndata: {\"seq\":2,\"kind\":\"error\",\"payload\":null}\n\n";
        let events = parse_sse(body);
        assert_eq!(events.len(), 2);
        assert_eq!(events[1].kind, EventKind::Error);
    }
}
