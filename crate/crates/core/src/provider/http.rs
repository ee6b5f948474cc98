//! JSON-over-HTTP provider client.
//!
//! Wire contract, all `POST` with JSON bodies:
//!
//! | path         | request                                   | response            |
//! |--------------|-------------------------------------------|---------------------|
//! | `/summarize` | `{description, question, answer}`         | `{"prompt": str}`   |
//! | `/update`    | `{pairs: [TrainingPair]}`                 | `{"accepted": n}`   |
//! | `/generate`  | `{prompt}`                                | `{"text": str}`     |
//! | `/judge`     | `{question, gold_answer, output}`         | `{"correct": bool}` |

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use super::{CotGenerator, Judge, PromptGenerator, ProviderError, TrainingPair, UpdateAck};

#[derive(Debug, Clone)]
pub struct HttpProvider {
    agent: ureq::Agent,
    endpoint: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(endpoint: impl Into<String>, api_key: Option<String>, timeout: Duration) -> Self {
        let agent = ureq::Agent::config_builder().timeout_global(Some(timeout)).build().into();
        Self { agent, endpoint: endpoint.into().trim_end_matches('/').to_string(), api_key }
    }

    /// Reads the bearer token from `var`.
    pub fn with_key_from_env(endpoint: impl Into<String>, var: &str, timeout: Duration) -> Result<Self, ProviderError> {
        let key = std::env::var(var).map_err(|_| ProviderError::Credentials(format!("environment variable {var} unset")))?;
        Ok(Self::new(endpoint, Some(key), timeout))
    }

    fn call<T: DeserializeOwned>(&self, path: &str, body: Value) -> Result<T, ProviderError> {
        let url = format!("{}/{path}", self.endpoint);
        let mut req = self.agent.post(&url);
        if let Some(k) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = req.send_json(&body).map_err(map_err)?;
        resp.body_mut().read_json::<T>().map_err(|e| match e {
            ureq::Error::Timeout(_) => ProviderError::Timeout,
            other => ProviderError::BadResponse(other.to_string()),
        })
    }
}

fn map_err(e: ureq::Error) -> ProviderError {
    match e {
        ureq::Error::StatusCode(c) => ProviderError::Status(c),
        ureq::Error::Timeout(_) => ProviderError::Timeout,
        other => ProviderError::Transport(other.to_string()),
    }
}

#[derive(Deserialize)]
struct PromptResponse {
    prompt: String,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Deserialize)]
struct JudgeResponse {
    correct: bool,
}

impl PromptGenerator for HttpProvider {
    fn summarize(&self, d: &str, q: &str, a: &str) -> Result<String, ProviderError> {
        self.call::<PromptResponse>("summarize", json!({"description": d, "question": q, "answer": a}))
            .map(|r| r.prompt)
    }

    fn update(&mut self, pairs: &[TrainingPair]) -> Result<UpdateAck, ProviderError> {
        self.call("update", json!({ "pairs": pairs }))
    }
}

impl CotGenerator for HttpProvider {
    fn generate(&self, prompt: &str) -> Result<String, ProviderError> {
        self.call::<TextResponse>("generate", json!({ "prompt": prompt })).map(|r| r.text)
    }
}

impl Judge for HttpProvider {
    fn judge(&self, q: &str, g: &str, o: &str) -> Result<bool, ProviderError> {
        self.call::<JudgeResponse>("judge", json!({"question": q, "gold_answer": g, "output": o}))
            .map(|r| r.correct)
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;

    /// Serves one canned response per connection, returning the raw requests.
    fn serve(responses: Vec<(u16, &'static str)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut seen = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream);
                let mut head = String::new();
                let mut len = 0usize;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                    head.push_str(&line);
                    if line == "\r\n" {
                        break;
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                head.push_str(&String::from_utf8(buf).unwrap());
                seen.push(head);
                let mut stream = reader.into_inner();
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            seen
        });
        (addr, handle)
    }

    #[test]
    fn posts_json_with_bearer_token() {
        let (addr, h) = serve(vec![(200, r#"{"text":"because"}"#), (200, r#"{"correct":true}"#)]);
        let p = HttpProvider::new(addr, Some("sekrit".into()), Duration::from_secs(5));
        assert_eq!(p.generate("why").unwrap(), "because");
        assert!(p.judge("q", "g", "o").unwrap());
        let reqs = h.join().unwrap();
        assert!(reqs[0].starts_with("POST /generate "));
        assert!(reqs[0].to_ascii_lowercase().contains("authorization: bearer sekrit"));
        let body: Value = serde_json::from_str(reqs[0].split("\r\n\r\n").nth(1).unwrap()).unwrap();
        assert_eq!(body, json!({"prompt": "why"}));
        assert!(reqs[1].starts_with("POST /judge "));
    }

    #[test]
    fn status_and_body_errors() {
        let (addr, h) = serve(vec![(503, "{}"), (200, r#"{"nope":1}"#)]);
        let p = HttpProvider::new(addr, None, Duration::from_secs(5));
        assert_eq!(p.generate("x"), Err(ProviderError::Status(503)));
        assert!(matches!(p.generate("x"), Err(ProviderError::BadResponse(_))));
        h.join().unwrap();
    }

    #[test]
    fn missing_credentials() {
        let r = HttpProvider::with_key_from_env("http://localhost", "COTFORGE_TEST_UNSET_KEY_VAR", Duration::from_secs(1));
        assert!(matches!(r, Err(ProviderError::Credentials(_))));
    }
}
