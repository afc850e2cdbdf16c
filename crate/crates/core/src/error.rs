use thiserror::Error;

#[derive(Debug, Error)]
pub enum DarkoError {
    #[error("position {position:?} outside bounds {bounds:?}")]
    OutOfBounds { position: [i32; 3], bounds: [i32; 3] },

    #[error("invalid action {0}")]
    InvalidAction(String),

    #[error("unknown state id {0}")]
    UnknownState(usize),

    #[error("goal confidence must lie in (0, 1], got {0}")]
    InvalidConfidence(f64),

    #[error("parameter dimension {got} does not match feature dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("no goal is reachable from state {0}")]
    NoGoalReachable(usize),

    #[error("state {0} is not a goal")]
    NotAGoal(usize),

    #[error("episode has no steps")]
    EmptyEpisode,

    #[error("rooms are not mutually reachable: {0}")]
    DisconnectedRooms(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("malformed stream line {line}: {reason}")]
    Stream { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    TomlDe(#[from] toml::de::Error),

    #[error(transparent)]
    TomlSer(#[from] toml::ser::Error),
}

pub type Result<T> = std::result::Result<T, DarkoError>;
