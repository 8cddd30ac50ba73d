use thiserror::Error;

#[derive(Debug, Error)]
pub enum TeleopError {
    #[error("schema mismatch: expected major version of {expected}, got {found}")]
    SchemaMismatch { expected: String, found: String },
    #[error("malformed frame: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Sim(#[from] vptc::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    Socket(Box<tokio_tungstenite::tungstenite::Error>),
    #[error("control loop stopped: {0}")]
    ControlLoop(String),
}

impl From<tokio_tungstenite::tungstenite::Error> for TeleopError {
    fn from(e: tokio_tungstenite::tungstenite::Error) -> Self {
        TeleopError::Socket(Box::new(e))
    }
}
