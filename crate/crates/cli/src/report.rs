use serde::Serialize;
use serde_json::Value;

/// Single JSON object every subcommand emits. Field order is fixed by the
/// struct, so identical inputs render byte-identically (the optional
/// `timing` section carries wall-clock measurements and is exempt).
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub command: String,
    pub version: String,
    pub config: Value,
    pub results: Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Value>,
}

pub struct ReportBody {
    pub config: Value,
    pub results: Value,
    pub timing: Option<Value>,
}

impl ReportBody {
    pub fn new(config: Value, results: Value) -> Self {
        Self {
            config,
            results,
            timing: None,
        }
    }

    pub fn with_timing(mut self, timing: Value) -> Self {
        self.timing = Some(timing);
        self
    }
}
