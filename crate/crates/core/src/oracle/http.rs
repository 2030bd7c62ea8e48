use std::sync::atomic::{AtomicU64, Ordering};

use super::wire::{self, Handshake, Request, Response, PROTOCOL_VERSION};
use super::{check_eval_response, Backend, OracleError};
use crate::record::CoalitionMask;

/// Oracle reached by POSTing wire-protocol messages to a URL.
pub struct HttpBackend {
    url: String,
    retry: bool,
    handshake: Handshake,
    next_id: AtomicU64,
}

impl HttpBackend {
    pub fn connect(url: impl Into<String>, retry: bool) -> Result<Self, OracleError> {
        let url = url.into();
        let reply = post(&url, &Request::Hello {
            schema_version: PROTOCOL_VERSION,
        })
        .or_else(|e| match e {
            OracleError::BackendUnreachable(_) if retry => post(&url, &Request::Hello {
                schema_version: PROTOCOL_VERSION,
            }),
            e => Err(e),
        })?;
        let handshake = match reply {
            Response::Hello(h) => h,
            Response::Error { code, message, .. } => {
                return Err(OracleError::Backend { code, message })
            }
            other => {
                return Err(OracleError::MalformedResponse(format!(
                    "expected hello, got {other:?}"
                )))
            }
        };
        Ok(Self {
            url,
            retry,
            handshake,
            next_id: AtomicU64::new(0),
        })
    }
}

fn post(url: &str, request: &Request) -> Result<Response, OracleError> {
    let body = wire::encode(request);
    let mut response = ureq::post(url)
        .header("Content-Type", "application/json")
        .send(body.as_bytes())
        .map_err(|e| match e {
            ureq::Error::StatusCode(code) => {
                OracleError::MalformedResponse(format!("HTTP status {code}"))
            }
            e => OracleError::BackendUnreachable(e.to_string()),
        })?;
    let text = response
        .body_mut()
        .read_to_string()
        .map_err(|e| OracleError::BackendUnreachable(e.to_string()))?;
    serde_json::from_str(text.trim())
        .map_err(|e| OracleError::MalformedResponse(format!("{e}: {}", text.trim())))
}

impl Backend for HttpBackend {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError> {
        let masks: Vec<String> = masks.iter().map(CoalitionMask::to_bit_string).collect();
        let attempt = || {
            let id = self.next_id.fetch_add(1, Ordering::Relaxed);
            let reply = post(&self.url, &Request::Eval {
                id,
                masks: masks.clone(),
            })?;
            check_eval_response(reply, id)
        };
        match attempt() {
            Err(OracleError::BackendUnreachable(_)) if self.retry => attempt(),
            other => other,
        }
    }
}
