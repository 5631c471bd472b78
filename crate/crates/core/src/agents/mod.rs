//! Agents: scripted policies used as oracles, and remote chat endpoints.
//!
//! Both kinds sit behind [`Agent`]. A request carries the full message
//! history (what a remote model sees) and a structured view of the turn
//! (what a scripted policy needs).

mod remote;
mod scripted;
pub mod stub;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use remote::{Backoff, Completion, EndpointConfig, RemoteAgent};
pub use scripted::{scripted_choose, scripted_rate, PolicyName, PolicyParams, PolicySpec, ScriptedAgent, ScriptedPolicy};

use crate::error::{AgentError, Error, Result};
use crate::payoff::{OptionId, PayoffMatrix};
use crate::protocol_point::StatusCue;
use crate::protocol_workplace::{WorkplaceRatings, WorkplaceScenarioId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self { role: Role::Assistant, content: content.into() }
    }
}

/// The peer's scripted move as disclosed at turn 3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reveal {
    pub peer_move: OptionId,
    pub points_to_focal: i64,
    pub points_to_peer: i64,
}

#[derive(Debug, Clone, Copy)]
pub struct GameContext<'a> {
    pub matrix: &'a PayoffMatrix,
    pub turn: u8,
    pub cue: Option<StatusCue>,
    pub reveal: Option<Reveal>,
}

#[derive(Debug, Clone, Copy)]
pub struct WorkplaceContext<'a> {
    pub scenario: WorkplaceScenarioId,
    /// Ratings the agent gave at earlier scenarios (parsed ones only).
    pub history: &'a [WorkplaceRatings],
}

#[derive(Debug, Clone, Copy)]
pub enum TurnContext<'a> {
    Game(GameContext<'a>),
    Workplace(WorkplaceContext<'a>),
}

#[derive(Debug, Clone, Copy)]
pub struct AgentRequest<'a> {
    pub messages: &'a [ChatMessage],
    pub context: TurnContext<'a>,
    /// Seed for any randomness; derived from the run seed and conversation id.
    pub seed: u64,
}

pub trait Agent: Send + Sync {
    fn id(&self) -> &str;

    /// Returns the raw assistant text for the last user message.
    fn respond(&self, request: &AgentRequest<'_>) -> Result<String, AgentError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentKind {
    Scripted,
    Remote,
}

/// A named agent as written in a run manifest.
///
/// `kind = scripted` requires `policy`; `kind = remote` requires `endpoint`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: String,
    /// Name shown to other agents in prompts; defaults to `id`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_name: Option<String>,
    pub kind: AgentKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policy: Option<PolicySpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<EndpointConfig>,
}

impl AgentSpec {
    pub fn scripted(id: impl Into<String>, policy: PolicySpec) -> Self {
        Self {
            id: id.into(),
            display_name: None,
            kind: AgentKind::Scripted,
            policy: Some(policy),
            endpoint: None,
        }
    }

    pub fn remote(id: impl Into<String>, endpoint: EndpointConfig) -> Self {
        Self {
            id: id.into(),
            display_name: None,
            kind: AgentKind::Remote,
            policy: None,
            endpoint: Some(endpoint),
        }
    }

    pub fn display_name(&self) -> &str {
        self.display_name.as_deref().unwrap_or(&self.id)
    }

    pub fn build(&self) -> Result<Arc<dyn Agent>> {
        match (self.kind, &self.policy, &self.endpoint) {
            (AgentKind::Scripted, Some(policy), None) => {
                let resolved = policy.resolve().map_err(|errs| {
                    Error::Config(format!(
                        "agent `{}`: {}",
                        self.id,
                        errs.into_iter().map(|(_, msg)| msg).collect::<Vec<_>>().join("; ")
                    ))
                })?;
                Ok(Arc::new(ScriptedAgent::new(&self.id, resolved, policy)))
            }
            (AgentKind::Remote, None, Some(endpoint)) => {
                Ok(Arc::new(RemoteAgent::new(&self.id, endpoint.clone())?))
            }
            _ => Err(Error::Config(format!(
                "agent `{}`: kind `{:?}` needs exactly the matching `policy` or `endpoint` block",
                self.id, self.kind
            ))),
        }
    }
}
