use serde::{Deserialize, Serialize};

use swaas_core::model::QoROverrides;
use swaas_sim::ScriptedEvent;

/// Body of `POST /v1/instances`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstantiateRequest {
    pub template: String,
    #[serde(default, skip_serializing_if = "QoROverrides::is_empty")]
    pub qor: QoROverrides,
}

/// Body of `POST /v1/events`: a scripted event, optionally scheduled for a
/// later virtual time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub at_ms: Option<u64>,
    #[serde(flatten)]
    pub event: ScriptedEvent,
}

/// Body of `POST /v1/clock`. Exactly one field is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClockRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub advance_ms: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub to_ms: Option<u64>,
}

/// Everything a controller can ask of the service. The mutating variants
/// are what a session recording holds, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum ApiCommand {
    ListTemplates,
    Instantiate {
        template: String,
        #[serde(default, skip_serializing_if = "QoROverrides::is_empty")]
        qor: QoROverrides,
    },
    Status {
        instance: String,
        #[serde(default)]
        placement: bool,
    },
    Inject {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        at_ms: Option<u64>,
        event: ScriptedEvent,
    },
    Teardown {
        instance: String,
    },
    AdvanceClock {
        to_ms: u64,
    },
    RunScenario {
        path: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        seed: Option<u64>,
    },
}

impl ApiCommand {
    pub fn is_mutation(&self) -> bool {
        matches!(
            self,
            ApiCommand::Instantiate { .. }
                | ApiCommand::Inject { .. }
                | ApiCommand::Teardown { .. }
                | ApiCommand::AdvanceClock { .. }
        )
    }
}

/// Parses a session recording, skipping blank lines.
pub fn parse_session(text: &str) -> Result<Vec<ApiCommand>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}
