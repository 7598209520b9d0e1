//! JSON-over-HTTP batch scoring protocol (see `docs/scorer-protocol.md`).
//!
//! [`HttpScorer`] is the client used by re-ranking; [`ScorerServer`] serves any
//! [`RelevanceScorer`] over the same protocol, which is how the deterministic
//! mocks stand in for the neural service.

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::scorer::{RelevanceScorer, ScorePair, ScoreRequest, ScoreResponse, ScorerError, DEFAULT_BATCH_SIZE};
use crate::structured::{InputFormat, Marker, QuerySegment, StructuredInput};

/// Value of the `protocol` field in every request.
pub const PROTOCOL_VERSION: &str = "cqa-score/1";

/// Path of the scoring endpoint relative to the service root.
pub const SCORE_PATH: &str = "/score";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSegment {
    pub text: String,
    /// `"S"`, `"D"`, `"T"` or null.
    pub marker: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WirePair {
    pub pair_id: String,
    pub format: String,
    pub query_segments: Vec<WireSegment>,
    /// Query side rendered with marker surfaces, for services that do not
    /// rebuild it from the segments.
    pub query: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireRequest {
    pub protocol: String,
    pub pairs: Vec<WirePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireError {
    pub error: String,
}

fn marker_name(m: Marker) -> &'static str {
    match m {
        Marker::S => "S",
        Marker::D => "D",
        Marker::T => "T",
    }
}

fn parse_marker(name: &str) -> Result<Marker, String> {
    match name {
        "S" => Ok(Marker::S),
        "D" => Ok(Marker::D),
        "T" => Ok(Marker::T),
        other => Err(format!("unknown marker `{other}`")),
    }
}

impl From<&ScoreRequest> for WireRequest {
    fn from(request: &ScoreRequest) -> Self {
        WireRequest {
            protocol: PROTOCOL_VERSION.to_string(),
            pairs: request
                .pairs
                .iter()
                .map(|p| WirePair {
                    pair_id: p.pair_id.clone(),
                    format: p.format.as_str().to_string(),
                    query_segments: p
                        .input
                        .query_segments
                        .iter()
                        .map(|s| WireSegment {
                            text: s.text.clone(),
                            marker: s.marker.map(|m| marker_name(m).to_string()),
                        })
                        .collect(),
                    query: p.input.render_query(),
                    answer: p.input.answer_text.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<WireRequest> for ScoreRequest {
    type Error = String;

    fn try_from(wire: WireRequest) -> Result<Self, Self::Error> {
        if wire.protocol != PROTOCOL_VERSION {
            return Err(format!("unsupported protocol `{}`", wire.protocol));
        }
        let pairs = wire
            .pairs
            .into_iter()
            .map(|p| {
                let format: InputFormat = p.format.parse().map_err(|e| format!("{e}"))?;
                let query_segments = p
                    .query_segments
                    .into_iter()
                    .map(|s| {
                        Ok(QuerySegment {
                            text: s.text,
                            marker: s.marker.as_deref().map(parse_marker).transpose()?,
                        })
                    })
                    .collect::<Result<Vec<_>, String>>()?;
                Ok(ScorePair {
                    pair_id: p.pair_id,
                    input: StructuredInput {
                        query_segments,
                        answer_text: p.answer,
                    },
                    format,
                })
            })
            .collect::<Result<Vec<_>, String>>()?;
        Ok(ScoreRequest { pairs })
    }
}

/// Parses a response body. Null scores are reported as non-finite; anything
/// else that is not a number is malformed.
pub fn parse_response(body: &str) -> Result<ScoreResponse, ScorerError> {
    #[derive(Deserialize)]
    struct Body {
        scores: HashMap<String, serde_json::Value>,
    }
    let body: Body = serde_json::from_str(body).map_err(|e| ScorerError::Malformed(e.to_string()))?;
    let mut scores = HashMap::with_capacity(body.scores.len());
    for (id, value) in body.scores {
        let score = match value {
            serde_json::Value::Number(n) => n
                .as_f64()
                .ok_or_else(|| ScorerError::Malformed(format!("score for `{id}` is not representable")))?,
            serde_json::Value::Null => return Err(ScorerError::NonFiniteScore(id)),
            other => return Err(ScorerError::Malformed(format!("score for `{id}` is {other}"))),
        };
        scores.insert(id, score);
    }
    Ok(ScoreResponse { scores })
}

/// Client for a scoring service.
pub struct HttpScorer {
    url: String,
    agent: ureq::Agent,
    max_batch: usize,
    retries: u32,
    backoff: Duration,
}

impl HttpScorer {
    /// `endpoint` is the service root, e.g. `http://127.0.0.1:8600`.
    pub fn new(endpoint: &str) -> Self {
        HttpScorer {
            url: format!("{}{SCORE_PATH}", endpoint.trim_end_matches('/')),
            agent: Self::agent(Duration::from_secs(120)),
            max_batch: DEFAULT_BATCH_SIZE,
            retries: 2,
            backoff: Duration::from_millis(250),
        }
    }

    fn agent(timeout: Duration) -> ureq::Agent {
        ureq::Agent::config_builder()
            .timeout_global(Some(timeout))
            .http_status_as_error(false)
            .build()
            .into()
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.agent = Self::agent(timeout);
        self
    }

    /// Extra attempts after a retryable failure.
    pub fn with_retries(mut self, retries: u32, backoff: Duration) -> Self {
        self.retries = retries;
        self.backoff = backoff;
        self
    }

    pub fn with_max_batch(mut self, max_batch: usize) -> Self {
        self.max_batch = max_batch;
        self
    }

    fn attempt(&self, body: &WireRequest) -> Result<ScoreResponse, ScorerError> {
        let mut response = self.agent.post(&self.url).send_json(body).map_err(|e| match e {
            ureq::Error::Timeout(t) => ScorerError::Timeout(t.to_string()),
            other => ScorerError::Transport(other.to_string()),
        })?;
        let status = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ScorerError::Transport(e.to_string()))?;
        match status {
            200 => parse_response(&text),
            400..=499 => Err(ScorerError::Rejected {
                status,
                message: error_message(&text),
            }),
            _ => Err(ScorerError::ServerError {
                status,
                message: error_message(&text),
            }),
        }
    }
}

fn error_message(body: &str) -> String {
    serde_json::from_str::<WireError>(body)
        .map(|e| e.error)
        .unwrap_or_else(|_| body.chars().take(200).collect())
}

impl RelevanceScorer for HttpScorer {
    fn score(&self, request: &ScoreRequest) -> Result<ScoreResponse, ScorerError> {
        let body = WireRequest::from(request);
        let mut attempt = 0;
        loop {
            match self.attempt(&body) {
                Err(e) if e.is_retryable() && attempt < self.retries => {
                    attempt += 1;
                    log::warn!("scorer request failed ({e}); retry {attempt}/{}", self.retries);
                    thread::sleep(self.backoff * attempt);
                }
                other => return other,
            }
        }
    }

    fn max_batch(&self) -> usize {
        self.max_batch
    }
}

/// Serves a [`RelevanceScorer`] over HTTP on a background thread.
pub struct ScorerServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    worker: Option<JoinHandle<()>>,
}

impl ScorerServer {
    /// Binds `addr` (port 0 picks a free port) and starts serving.
    pub fn spawn(addr: &str, scorer: Arc<dyn RelevanceScorer>) -> Result<Self, String> {
        let server = Arc::new(tiny_http::Server::http(addr).map_err(|e| e.to_string())?);
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| "server is not bound to an IP address".to_string())?;
        let worker = {
            let server = Arc::clone(&server);
            thread::spawn(move || serve_loop(&server, scorer.as_ref()))
        };
        Ok(ScorerServer {
            server,
            addr,
            worker: Some(worker),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Service root URL, suitable for [`HttpScorer::new`].
    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn wait(mut self) {
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for ScorerServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

fn json_response(status: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).expect("static header");
    tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_response(status: u16, message: impl Into<String>) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let body = serde_json::to_string(&WireError { error: message.into() }).expect("serializable");
    json_response(status, body)
}

/// Handles one request body; returns status and JSON body.
pub fn handle_score(body: &str, scorer: &dyn RelevanceScorer) -> (u16, String) {
    let wire: WireRequest = match serde_json::from_str(body) {
        Ok(w) => w,
        Err(e) => return (400, error_json(format!("invalid request: {e}"))),
    };
    let request = match ScoreRequest::try_from(wire) {
        Ok(r) => r,
        Err(e) => return (400, error_json(e)),
    };
    if let Err(e) = request.check(scorer.max_batch()) {
        return (400, error_json(e.to_string()));
    }
    match scorer.score(&request) {
        Ok(resp) if resp.scores.values().all(|s| s.is_finite()) => {
            (200, serde_json::to_string(&resp).expect("finite scores serialize"))
        }
        Ok(_) => (500, error_json("scorer produced a non-finite score")),
        Err(e) => (500, error_json(e.to_string())),
    }
}

fn error_json(message: impl Into<String>) -> String {
    serde_json::to_string(&WireError { error: message.into() }).expect("serializable")
}

fn serve_loop(server: &tiny_http::Server, scorer: &dyn RelevanceScorer) {
    for mut request in server.incoming_requests() {
        let response = match (request.method(), request.url()) {
            (tiny_http::Method::Post, SCORE_PATH) => {
                let mut body = String::new();
                match request.as_reader().read_to_string(&mut body) {
                    Ok(_) => {
                        let (status, body) = handle_score(&body, scorer);
                        json_response(status, body)
                    }
                    Err(e) => error_response(400, format!("unreadable body: {e}")),
                }
            }
            (tiny_http::Method::Get, "/health") => json_response(200, r#"{"status":"ok"}"#.to_string()),
            _ => error_response(404, "not found"),
        };
        if let Err(e) = request.respond(response) {
            log::warn!("failed to send response: {e}");
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorer::{answer_length, score_batch, FnScorer};

    fn request() -> ScoreRequest {
        ScoreRequest {
            pairs: vec![ScorePair {
                pair_id: "q1#a1".into(),
                input: StructuredInput {
                    query_segments: vec![
                        QuerySegment {
                            text: "Subject".into(),
                            marker: Some(Marker::S),
                        },
                        QuerySegment {
                            text: String::new(),
                            marker: Some(Marker::T),
                        },
                    ],
                    answer_text: "four".into(),
                },
                format: InputFormat::Fs,
            }],
        }
    }

    #[test]
    fn wire_round_trip() {
        let req = request();
        let wire = WireRequest::from(&req);
        assert_eq!(wire.pairs[0].query, "Subject [S] [T]");
        let json = serde_json::to_string(&wire).unwrap();
        let back: WireRequest = serde_json::from_str(&json).unwrap();
        assert_eq!(ScoreRequest::try_from(back).unwrap(), req);
    }

    #[test]
    fn wire_field_names_are_stable() {
        let json = serde_json::to_value(WireRequest::from(&request())).unwrap();
        let expected = serde_json::json!({
            "protocol": "cqa-score/1",
            "pairs": [{
                "pair_id": "q1#a1",
                "format": "fs",
                "query_segments": [
                    {"text": "Subject", "marker": "S"},
                    {"text": "", "marker": "T"}
                ],
                "query": "Subject [S] [T]",
                "answer": "four"
            }]
        });
        assert_eq!(json, expected);
    }

    #[test]
    fn response_parsing() {
        assert_eq!(parse_response(r#"{"scores":{"a":1.5}}"#).unwrap().scores["a"], 1.5);
        assert_eq!(parse_response(r#"{"scores":{"a":null}}"#), Err(ScorerError::NonFiniteScore("a".into())));
        assert!(matches!(parse_response(r#"{"scores":{"a":"x"}}"#), Err(ScorerError::Malformed(_))));
        assert!(matches!(parse_response("not json"), Err(ScorerError::Malformed(_))));
    }

    #[test]
    fn handler_rejects_bad_requests() {
        let scorer = FnScorer::new(answer_length);
        assert_eq!(handle_score("{", &scorer).0, 400);
        let empty = serde_json::to_string(&WireRequest {
            protocol: PROTOCOL_VERSION.into(),
            pairs: vec![],
        })
        .unwrap();
        assert_eq!(handle_score(&empty, &scorer).0, 400);
        let mut wire = WireRequest::from(&request());
        wire.protocol = "other/9".into();
        assert_eq!(handle_score(&serde_json::to_string(&wire).unwrap(), &scorer).0, 400);
    }

    #[test]
    fn http_round_trip_against_local_server() {
        let server = ScorerServer::spawn("127.0.0.1:0", Arc::new(FnScorer::new(answer_length))).unwrap();
        let client = HttpScorer::new(&server.url());
        let resp = score_batch(&request(), &client).unwrap();
        assert_eq!(resp.scores["q1#a1"], 4.0);
        // Empty batches reach the service unchecked when calling it directly.
        assert!(matches!(
            client.score(&ScoreRequest::default()),
            Err(ScorerError::Rejected { status: 400, .. })
        ));
    }

    #[test]
    fn unreachable_service_is_a_retryable_transport_error() {
        let port = {
            let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap().port()
        };
        let client = HttpScorer::new(&format!("http://127.0.0.1:{port}")).with_retries(1, Duration::from_millis(1));
        let err = client.score(&request()).unwrap_err();
        assert!(err.is_retryable(), "{err:?}");
    }
}
