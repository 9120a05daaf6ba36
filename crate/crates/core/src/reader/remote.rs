//! HTTP client for model servers speaking the reader wire protocol.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ReadRequest, Reader, ReaderInput, ReaderOutput};
use crate::error::{Error, Result};
use crate::span::char_len;

#[derive(Serialize)]
struct WireRequest<'a> {
    inputs: &'a [ReaderInput],
}

#[derive(Deserialize)]
struct WireResponse {
    outputs: Vec<ReaderOutput>,
}

pub struct RemoteReader {
    endpoint: String,
    attempts: u32,
    client: reqwest::blocking::Client,
}

impl RemoteReader {
    pub fn new(endpoint: &str, timeout: Duration, attempts: u32) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| Error::Transport { attempts: 0, message: e.to_string() })?;
        Ok(RemoteReader { endpoint: endpoint.to_string(), attempts: attempts.max(1), client })
    }

    fn post_once(&self, batch: &[ReaderInput]) -> Result<String> {
        let transport = |e: reqwest::Error| Error::Transport { attempts: 1, message: e.to_string() };
        let resp = self.client.post(&self.endpoint).json(&WireRequest { inputs: batch }).send().map_err(transport)?;
        let status = resp.status();
        if status.is_server_error() {
            return Err(Error::Transport { attempts: 1, message: format!("server returned {status}") });
        }
        if !status.is_success() {
            return Err(Error::Protocol { field: "status".into(), message: format!("server returned {status}") });
        }
        resp.text().map_err(transport)
    }

    pub fn read(&self, batch: &[ReaderInput]) -> Result<Vec<ReaderOutput>> {
        if batch.is_empty() {
            return Ok(Vec::new());
        }
        let mut last = String::new();
        for attempt in 1..=self.attempts {
            match self.post_once(batch) {
                Ok(body) => return parse_response(&body, batch),
                Err(Error::Transport { message, .. }) => {
                    log::warn!("reader request attempt {attempt}/{} failed: {message}", self.attempts);
                    last = message;
                    if attempt < self.attempts {
                        std::thread::sleep(Duration::from_millis(50 * u64::from(attempt)));
                    }
                }
                Err(e) => return Err(e),
            }
        }
        Err(Error::Transport { attempts: self.attempts, message: last })
    }
}

/// Parses and validates a response body against the batch it answers.
pub fn parse_response(body: &str, batch: &[ReaderInput]) -> Result<Vec<ReaderOutput>> {
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| Error::Protocol { field: "outputs".into(), message: e.to_string() })?;
    if resp.outputs.len() != batch.len() {
        return Err(Error::Protocol {
            field: "outputs".into(),
            message: format!("{} outputs for {} inputs", resp.outputs.len(), batch.len()),
        });
    }
    for (out, inp) in resp.outputs.iter().zip(batch) {
        if out.qid != inp.qid {
            return Err(Error::Protocol {
                field: "qid".into(),
                message: format!("expected {}, got {}", inp.qid, out.qid),
            });
        }
        out.validate(Some(char_len(&inp.context)))?;
    }
    Ok(resp.outputs)
}

pub fn remote_read(batch: &[ReaderInput], endpoint: &str, timeout: Duration) -> Result<Vec<ReaderOutput>> {
    if batch.is_empty() {
        return Ok(Vec::new());
    }
    RemoteReader::new(endpoint, timeout, 3)?.read(batch)
}

impl Reader for RemoteReader {
    fn read_batch(&self, batch: &[ReadRequest]) -> Result<Vec<ReaderOutput>> {
        let inputs: Vec<ReaderInput> = batch.iter().map(|r| r.input.clone()).collect();
        self.read(&inputs)
    }
}
