use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

/// Wrapper shared by HTTP responses and `--format json` output. Exactly one
/// of `payload` and `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEnvelope {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorBody>,
}

impl ApiEnvelope {
    pub fn ok(payload: Value) -> Self {
        ApiEnvelope {
            status: Status::Ok,
            payload: Some(payload),
            error: None,
        }
    }

    pub fn error(
        code: impl Into<String>,
        message: impl Into<String>,
        detail: Option<Value>,
    ) -> Self {
        ApiEnvelope {
            status: Status::Error,
            payload: None,
            error: Some(ErrorBody {
                code: code.into(),
                message: message.into(),
                detail,
            }),
        }
    }
}
