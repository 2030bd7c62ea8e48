use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::sync::Mutex;

use super::wire::{self, Handshake, Request, Response, PROTOCOL_VERSION};
use super::{check_eval_response, Backend, OracleError};
use crate::record::CoalitionMask;

struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    next_id: u64,
}

impl Session {
    fn spawn(command: &[String]) -> Result<(Self, Handshake), OracleError> {
        let (program, args) = command
            .split_first()
            .ok_or_else(|| OracleError::BackendUnreachable("empty oracle command".into()))?;
        let mut child = Command::new(program)
            .args(args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| OracleError::BackendUnreachable(format!("spawn {program}: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let mut session = Session {
            child,
            stdin,
            stdout,
            next_id: 0,
        };
        let reply = session.exchange(&Request::Hello {
            schema_version: PROTOCOL_VERSION,
        })?;
        match reply {
            Response::Hello(h) => Ok((session, h)),
            Response::Error { code, message, .. } => Err(OracleError::Backend { code, message }),
            other => Err(OracleError::MalformedResponse(format!(
                "expected hello, got {other:?}"
            ))),
        }
    }

    fn exchange(&mut self, request: &Request) -> Result<Response, OracleError> {
        let unreachable = |e: std::io::Error| OracleError::BackendUnreachable(e.to_string());
        let mut line = wire::encode(request);
        line.push('\n');
        self.stdin.write_all(line.as_bytes()).map_err(unreachable)?;
        self.stdin.flush().map_err(unreachable)?;
        let mut reply = String::new();
        let read = self.stdout.read_line(&mut reply).map_err(unreachable)?;
        if read == 0 {
            return Err(OracleError::BackendUnreachable(
                "oracle process closed its output".into(),
            ));
        }
        serde_json::from_str(reply.trim_end())
            .map_err(|e| OracleError::MalformedResponse(format!("{e}: {}", reply.trim_end())))
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Oracle served by a child process speaking the wire protocol on stdio.
pub struct SubprocessBackend {
    command: Vec<String>,
    retry: bool,
    handshake: Handshake,
    session: Mutex<Option<Session>>,
}

impl SubprocessBackend {
    pub fn spawn(command: Vec<String>, retry: bool) -> Result<Self, OracleError> {
        let (session, handshake) = Session::spawn(&command)?;
        Ok(Self {
            command,
            retry,
            handshake,
            session: Mutex::new(Some(session)),
        })
    }

    fn eval_once(&self, masks: &[String]) -> Result<Vec<Vec<f64>>, OracleError> {
        let mut guard = self.session.lock().expect("oracle session poisoned");
        if guard.is_none() {
            let (s, h) = Session::spawn(&self.command)?;
            if h != self.handshake {
                return Err(OracleError::MalformedResponse(
                    "respawned oracle changed its handshake".into(),
                ));
            }
            *guard = Some(s);
        }
        let session = guard.as_mut().expect("session present");
        let id = session.next_id;
        session.next_id += 1;
        let result = session.exchange(&Request::Eval {
            id,
            masks: masks.to_vec(),
        });
        if matches!(result, Err(OracleError::BackendUnreachable(_))) {
            *guard = None;
        }
        check_eval_response(result?, id)
    }
}

impl Backend for SubprocessBackend {
    fn handshake(&self) -> &Handshake {
        &self.handshake
    }

    fn eval(&self, masks: &[CoalitionMask]) -> Result<Vec<Vec<f64>>, OracleError> {
        let encoded: Vec<String> = masks.iter().map(CoalitionMask::to_bit_string).collect();
        match self.eval_once(&encoded) {
            Err(OracleError::BackendUnreachable(_)) if self.retry => self.eval_once(&encoded),
            other => other,
        }
    }
}
