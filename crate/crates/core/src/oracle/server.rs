//! Server half of the wire protocol, used by the `protocol-echo` debugging
//! oracle and by tests that exercise the subprocess and HTTP backends.

use std::io::{self, BufRead, BufReader, Read, Write};
use std::net::TcpListener;

use super::toy::ToyGame;
use super::wire::{self, Handshake, Request, Response, PROTOCOL_VERSION};
use super::OutputMode;
use crate::record::CoalitionMask;

pub trait Responder: Sync {
    fn handshake(&self) -> Handshake;
    /// Err carries (code, message).
    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, (String, String)>;
}

/// Answers every mask with the mask itself as a 0/1 vector.
pub struct EchoResponder {
    pub n_features: usize,
    pub supports_batch: bool,
}

impl Responder for EchoResponder {
    fn handshake(&self) -> Handshake {
        Handshake {
            n_features: self.n_features,
            output_dim: self.n_features,
            supports_batch: self.supports_batch,
            output_mode: OutputMode::Raw,
            granularity: None,
        }
    }

    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, (String, String)> {
        Ok(masks
            .iter()
            .map(|m| (0..m.len()).map(|i| m.contains(i) as u8 as f64).collect())
            .collect())
    }
}

/// Serves a toy game over the protocol.
pub struct ToyResponder {
    pub game: ToyGame,
    pub supports_batch: bool,
}

impl Responder for ToyResponder {
    fn handshake(&self) -> Handshake {
        Handshake {
            n_features: self.game.n_features(),
            output_dim: self.game.output_dim(),
            supports_batch: self.supports_batch,
            output_mode: OutputMode::Raw,
            granularity: None,
        }
    }

    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, (String, String)> {
        Ok(masks.iter().map(|m| self.game.value(m)).collect())
    }
}

fn error(id: Option<u64>, code: &str, message: impl Into<String>) -> Response {
    Response::Error {
        id,
        code: code.into(),
        message: message.into(),
    }
}

/// Maps one request line to one response line (without newline).
pub fn handle_line(responder: &dyn Responder, line: &str) -> String {
    let request: Request = match serde_json::from_str(line) {
        Ok(r) => r,
        Err(e) => return wire::encode(&error(None, "BadRequest", e.to_string())),
    };
    let response = match request {
        Request::Hello { schema_version } if schema_version != PROTOCOL_VERSION => error(
            None,
            "UnsupportedVersion",
            format!("schema_version {schema_version} unsupported"),
        ),
        Request::Hello { .. } => Response::Hello(responder.handshake()),
        Request::Eval { id, masks } => {
            let hello = responder.handshake();
            if !hello.supports_batch && masks.len() > 1 {
                error(Some(id), "BatchUnsupported", "send one mask per request")
            } else {
                let parsed: Option<Vec<CoalitionMask>> = masks
                    .iter()
                    .map(|m| CoalitionMask::parse_bit_string(m).filter(|m| m.len() == hello.n_features))
                    .collect();
                match parsed {
                    None => error(Some(id), "BadMask", format!("masks must be {} bits of 0/1", hello.n_features)),
                    Some(masks) => match responder.eval(&masks) {
                        Ok(values) => Response::Eval { id, values },
                        Err((code, message)) => error(Some(id), &code, message),
                    },
                }
            }
        }
    };
    wire::encode(&response)
}

/// Serves requests line by line until the reader hits EOF.
pub fn serve_stdio(responder: &dyn Responder, reader: impl BufRead, mut writer: impl Write) -> io::Result<()> {
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        writeln!(writer, "{}", handle_line(responder, line.trim()))?;
        writer.flush()?;
    }
    Ok(())
}

/// Minimal HTTP/1.1 server: every POST body is one request line, the reply
/// body is one response line. Stops after `max_requests` when given.
pub fn serve_http(responder: &dyn Responder, listener: TcpListener, max_requests: Option<usize>) -> io::Result<()> {
    let mut served = 0;
    for stream in listener.incoming() {
        let mut stream = stream?;
        let mut reader = BufReader::new(stream.try_clone()?);
        let mut content_length = 0usize;
        let mut request_line = String::new();
        reader.read_line(&mut request_line)?;
        loop {
            let mut header = String::new();
            if reader.read_line(&mut header)? == 0 || header.trim().is_empty() {
                break;
            }
            if let Some((name, value)) = header.split_once(':') {
                if name.trim().eq_ignore_ascii_case("content-length") {
                    content_length = value.trim().parse().unwrap_or(0);
                }
            }
        }
        let mut body = vec![0u8; content_length];
        reader.read_exact(&mut body)?;
        let reply = handle_line(responder, String::from_utf8_lossy(&body).trim());
        write!(
            stream,
            "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{}",
            reply.len(),
            reply
        )?;
        stream.flush()?;
        served += 1;
        if max_requests.is_some_and(|m| served >= m) {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round() {
        let r = EchoResponder { n_features: 3, supports_batch: true };
        let hello = handle_line(&r, r#"{"op":"hello","schema_version":1}"#);
        assert!(hello.contains(r#""n_features":3"#), "{hello}");
        let eval = handle_line(&r, r#"{"op":"eval","id":4,"masks":["101","010"]}"#);
        assert_eq!(eval, r#"{"op":"eval","id":4,"values":[[1.0,0.0,1.0],[0.0,1.0,0.0]]}"#);
    }

    #[test]
    fn protocol_errors() {
        let r = EchoResponder { n_features: 3, supports_batch: false };
        assert!(handle_line(&r, "{").contains("BadRequest"));
        assert!(handle_line(&r, r#"{"op":"hello","schema_version":2}"#).contains("UnsupportedVersion"));
        assert!(handle_line(&r, r#"{"op":"eval","id":1,"masks":["10"]}"#).contains("BadMask"));
        assert!(handle_line(&r, r#"{"op":"eval","id":1,"masks":["101","111"]}"#).contains("BatchUnsupported"));
    }
}
