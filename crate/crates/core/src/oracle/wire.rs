//! Line-delimited JSON messages shared by the subprocess and HTTP oracles.
//!
//! ```text
//! -> {"op":"hello","schema_version":1}
//! <- {"op":"hello","n_features":N,"output_dim":D,"supports_batch":true,"output_mode":"raw"}
//! -> {"op":"eval","id":k,"masks":["110...", ...]}
//! <- {"op":"eval","id":k,"values":[[...], ...]}
//! <- {"op":"error","id":k,"code":"...","message":"..."}
//! ```
//!
//! Masks are '0'/'1' strings with feature 0 leftmost. Unknown fields are ignored.

use serde::{Deserialize, Serialize};

use super::OutputMode;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Hello { schema_version: u32 },
    Eval { id: u64, masks: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Handshake {
    pub n_features: usize,
    pub output_dim: usize,
    pub supports_batch: bool,
    pub output_mode: OutputMode,
    /// Free-form feature granularity declared by speech adapters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub granularity: Option<serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Response {
    Hello(Handshake),
    Eval {
        id: u64,
        values: Vec<Vec<f64>>,
    },
    Error {
        #[serde(default)]
        id: Option<u64>,
        code: String,
        message: String,
    },
}

pub fn encode<T: Serialize>(msg: &T) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shapes() {
        assert_eq!(
            encode(&Request::Hello { schema_version: 1 }),
            r#"{"op":"hello","schema_version":1}"#
        );
        assert_eq!(
            encode(&Request::Eval { id: 3, masks: vec!["10".into(), "11".into()] }),
            r#"{"op":"eval","id":3,"masks":["10","11"]}"#
        );
    }

    #[test]
    fn responses_parse_and_ignore_unknown_fields() {
        let hello: Response = serde_json::from_str(
            r#"{"op":"hello","n_features":4,"output_dim":2,"supports_batch":false,"output_mode":"probability","model":"x"}"#,
        )
        .unwrap();
        assert_eq!(
            hello,
            Response::Hello(Handshake {
                n_features: 4,
                output_dim: 2,
                supports_batch: false,
                output_mode: OutputMode::Probability,
                granularity: None,
            })
        );
        let err: Response =
            serde_json::from_str(r#"{"op":"error","id":9,"code":"BadMask","message":"len"}"#).unwrap();
        assert!(matches!(err, Response::Error { id: Some(9), .. }));
        let eval: Response = serde_json::from_str(r#"{"op":"eval","id":1,"values":[[0.5,0.5]]}"#).unwrap();
        assert_eq!(eval, Response::Eval { id: 1, values: vec![vec![0.5, 0.5]] });
    }
}
