use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentRequest, GameContext, TurnContext};
use crate::error::AgentError;
use crate::parsing::{render_game_response, render_workplace_response};
use crate::payoff::{OptionId, OptionPayoff, PayoffMatrix};
use crate::protocol_point::Direction;
use crate::protocol_workplace::{WorkplaceRatings, WorkplaceScenarioId};
use crate::seed::mix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    ConstantChoice,
    MaxSelf,
    MaxGap,
    MinPeer,
    Cooperative,
    FehrSchmidt,
    EnviousWhenBehind,
    ConstantRater,
    GrudgeRater,
    SeededRandom,
}

impl PolicyName {
    pub fn plays_games(self) -> bool {
        !matches!(self, PolicyName::ConstantRater | PolicyName::GrudgeRater)
    }

    pub fn rates_workplace(self) -> bool {
        matches!(
            self,
            PolicyName::ConstantRater | PolicyName::GrudgeRater | PolicyName::SeededRandom
        )
    }
}

/// Free-form policy parameters as written in a manifest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub option: Option<OptionId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// Rating used for every metric (constant_rater) or every non-envy
    /// metric (grudge_rater).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rating: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_envy: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raise_at: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_at: Option<Vec<u8>>,
}

/// Policy descriptor: name, parameters and an optional fixed seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySpec {
    pub name: PolicyName,
    #[serde(default, skip_serializing_if = "is_default_params")]
    pub params: PolicyParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Turns (or scenario indices) at which the agent emits an unparseable
    /// reply. Test fixture for the parse-failure paths.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub malformed_turns: Vec<u8>,
}

fn is_default_params(p: &PolicyParams) -> bool {
    *p == PolicyParams::default()
}

impl PolicySpec {
    pub fn new(name: PolicyName) -> Self {
        Self {
            name,
            params: PolicyParams::default(),
            seed: None,
            malformed_turns: Vec::new(),
        }
    }

    pub fn constant_choice(option: OptionId) -> Self {
        let mut spec = Self::new(PolicyName::ConstantChoice);
        spec.params.option = Some(option);
        spec
    }

    pub fn fehr_schmidt(alpha: f64, beta: f64) -> Self {
        let mut spec = Self::new(PolicyName::FehrSchmidt);
        spec.params.alpha = Some(alpha);
        spec.params.beta = Some(beta);
        spec
    }

    pub fn constant_rater(rating: u8) -> Self {
        let mut spec = Self::new(PolicyName::ConstantRater);
        spec.params.rating = Some(rating);
        spec
    }

    /// Validates the parameters. Errors are `(field, message)` pairs where
    /// `field` is relative to the descriptor (e.g. `params.alpha`).
    pub fn resolve(&self) -> Result<ScriptedPolicy, Vec<(String, String)>> {
        let p = &self.params;
        let mut errs = Vec::new();
        let rating_field = |errs: &mut Vec<(String, String)>, field: &str, v: Option<u8>, default: u8| {
            let v = v.unwrap_or(default);
            if !(1..=5).contains(&v) {
                errs.push((format!("params.{field}"), format!("{field} must be an integer in 1..=5, got {v}")));
            }
            v
        };
        let policy = match self.name {
            PolicyName::ConstantChoice => match p.option {
                Some(o) => ScriptedPolicy::ConstantChoice(o),
                None => {
                    errs.push(("params.option".into(), "constant_choice requires `option` (A-D)".into()));
                    ScriptedPolicy::ConstantChoice(OptionId::A)
                }
            },
            PolicyName::MaxSelf => ScriptedPolicy::MaxSelf,
            PolicyName::MaxGap => ScriptedPolicy::MaxGap,
            PolicyName::MinPeer => ScriptedPolicy::MinPeer,
            PolicyName::Cooperative => ScriptedPolicy::Cooperative,
            PolicyName::FehrSchmidt => {
                let alpha = p.alpha.unwrap_or(0.0);
                let beta = p.beta.unwrap_or(0.0);
                for (field, v) in [("alpha", alpha), ("beta", beta)] {
                    if !(v.is_finite() && v >= 0.0) {
                        errs.push((
                            format!("params.{field}"),
                            format!("fehr_schmidt requires {field} >= 0 (inequity-aversion weights are non-negative), got {v}"),
                        ));
                    }
                }
                ScriptedPolicy::FehrSchmidt { alpha, beta }
            }
            PolicyName::EnviousWhenBehind => ScriptedPolicy::EnviousWhenBehind,
            PolicyName::ConstantRater => {
                ScriptedPolicy::ConstantRater(rating_field(&mut errs, "rating", p.rating, 3))
            }
            PolicyName::GrudgeRater => {
                let rating = rating_field(&mut errs, "rating", p.rating, 3);
                let base_envy = rating_field(&mut errs, "base_envy", p.base_envy, 2);
                let step = p.step.unwrap_or(1);
                if step > 4 {
                    errs.push(("params.step".into(), format!("step must be in 0..=4, got {step}")));
                }
                let raise_at = p.raise_at.clone().unwrap_or_else(|| vec![2, 3, 6]);
                let lower_at = p.lower_at.clone().unwrap_or_else(|| vec![4, 7]);
                for (field, list) in [("raise_at", &raise_at), ("lower_at", &lower_at)] {
                    if list.iter().any(|s| !(1..=7).contains(s)) {
                        errs.push((format!("params.{field}"), format!("{field} entries must be scenario indices 1..=7")));
                    }
                }
                ScriptedPolicy::GrudgeRater { rating, base_envy, step, raise_at, lower_at }
            }
            PolicyName::SeededRandom => ScriptedPolicy::SeededRandom,
        };
        if errs.is_empty() {
            Ok(policy)
        } else {
            Err(errs)
        }
    }
}

/// A validated scripted policy.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptedPolicy {
    ConstantChoice(OptionId),
    MaxSelf,
    MaxGap,
    MinPeer,
    Cooperative,
    /// Utility `self - alpha * max(peer - self, 0) - beta * max(self - peer, 0)`.
    FehrSchmidt { alpha: f64, beta: f64 },
    /// Cooperative until the cue reads `lagging` or the revealed peer move
    /// leaves the peer ahead; max-gap from then on.
    EnviousWhenBehind,
    ConstantRater(u8),
    /// Non-envy metrics fixed at `rating`. Envy starts at `base_envy` and
    /// moves by `step` at each scenario listed in `raise_at` / `lower_at`,
    /// taking effect in that scenario's own response and clamped to 1..=5.
    GrudgeRater {
        rating: u8,
        base_envy: u8,
        step: u8,
        raise_at: Vec<u8>,
        lower_at: Vec<u8>,
    },
    SeededRandom,
}

/// First option (in label order) maximizing `score`.
fn argmax_by(matrix: &PayoffMatrix, score: impl Fn(OptionPayoff) -> f64) -> OptionId {
    let mut best = OptionId::A;
    let mut best_score = f64::NEG_INFINITY;
    for (o, p) in matrix.options() {
        let s = score(p);
        if s > best_score {
            best = o;
            best_score = s;
        }
    }
    best
}

/// Choice of a game-playing policy. Ties go to the earliest label.
pub fn scripted_choose(policy: &ScriptedPolicy, ctx: &GameContext<'_>, seed: u64) -> OptionId {
    let m = ctx.matrix;
    match policy {
        ScriptedPolicy::ConstantChoice(o) => *o,
        ScriptedPolicy::MaxSelf => argmax_by(m, |p| p.self_points as f64),
        ScriptedPolicy::MaxGap => argmax_by(m, |p| p.gap() as f64),
        ScriptedPolicy::MinPeer => argmax_by(m, |p| -(p.peer_points as f64)),
        ScriptedPolicy::Cooperative => argmax_by(m, |p| (p.self_points + p.peer_points) as f64),
        ScriptedPolicy::FehrSchmidt { alpha, beta } => argmax_by(m, |p| {
            let own = p.self_points as f64;
            let other = p.peer_points as f64;
            own - alpha * (other - own).max(0.0) - beta * (own - other).max(0.0)
        }),
        ScriptedPolicy::EnviousWhenBehind => {
            let lagging = ctx.cue.is_some_and(|c| c.direction == Direction::Lagging);
            let peer_ahead = ctx.reveal.is_some_and(|r| r.points_to_peer > r.points_to_focal);
            if lagging || peer_ahead {
                argmax_by(m, |p| p.gap() as f64)
            } else {
                argmax_by(m, |p| (p.self_points + p.peer_points) as f64)
            }
        }
        ScriptedPolicy::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, ctx.turn as u64));
            OptionId::ALL[rng.gen_range(0..4)]
        }
        // Rating-only policies never reach a game (manifest validation
        // rejects them); fall back to the first option.
        ScriptedPolicy::ConstantRater(_) | ScriptedPolicy::GrudgeRater { .. } => OptionId::A,
    }
}

/// Ratings of a rating-capable policy at `scenario`.
pub fn scripted_rate(policy: &ScriptedPolicy, scenario: WorkplaceScenarioId, seed: u64) -> WorkplaceRatings {
    let reflection = format!("Scripted reflection for the {} scenario.", scenario.name());
    let uniform = |r: u8| WorkplaceRatings {
        self_esteem: r,
        empathy: r,
        motivation_fairness: r,
        collaboration: r,
        envy: r,
        reflection: reflection.clone(),
    };
    match policy {
        ScriptedPolicy::ConstantRater(r) => uniform(*r),
        ScriptedPolicy::GrudgeRater { rating, base_envy, step, raise_at, lower_at } => {
            let mut envy = *base_envy as i16;
            for s in 1..=scenario.index() {
                if raise_at.contains(&s) {
                    envy += *step as i16;
                }
                if lower_at.contains(&s) {
                    envy -= *step as i16;
                }
                envy = envy.clamp(1, 5);
            }
            WorkplaceRatings { envy: envy as u8, ..uniform(*rating) }
        }
        ScriptedPolicy::SeededRandom => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, scenario.index() as u64));
            let mut draw = || rng.gen_range(1..=5u8);
            WorkplaceRatings {
                self_esteem: draw(),
                empathy: draw(),
                motivation_fairness: draw(),
                collaboration: draw(),
                envy: draw(),
                reflection,
            }
        }
        _ => uniform(3),
    }
}

fn describe(policy: &ScriptedPolicy) -> &'static str {
    match policy {
        ScriptedPolicy::ConstantChoice(_) => "I always pick the same option.",
        ScriptedPolicy::MaxSelf => "This option gives me the most points.",
        ScriptedPolicy::MaxGap => "This option gives me the largest lead over the other model.",
        ScriptedPolicy::MinPeer => "This option leaves the other model with the fewest points.",
        ScriptedPolicy::Cooperative => "This option gives the most points to both of us combined.",
        ScriptedPolicy::FehrSchmidt { .. } => "This option maximizes my payoff net of inequity costs.",
        ScriptedPolicy::EnviousWhenBehind => "I cooperate unless the other model gets ahead.",
        ScriptedPolicy::SeededRandom => "I picked at random.",
        ScriptedPolicy::ConstantRater(_) | ScriptedPolicy::GrudgeRater { .. } => "No preference.",
    }
}

pub struct ScriptedAgent {
    id: String,
    policy: ScriptedPolicy,
    seed: Option<u64>,
    malformed_turns: Vec<u8>,
}

impl ScriptedAgent {
    pub fn new(id: &str, policy: ScriptedPolicy, spec: &PolicySpec) -> Self {
        Self {
            id: id.to_string(),
            policy,
            seed: spec.seed,
            malformed_turns: spec.malformed_turns.clone(),
        }
    }
}

impl Agent for ScriptedAgent {
    fn id(&self) -> &str {
        &self.id
    }

    fn respond(&self, request: &AgentRequest<'_>) -> Result<String, AgentError> {
        let seed = match self.seed {
            Some(own) => mix(own, request.seed),
            None => request.seed,
        };
        match request.context {
            TurnContext::Game(ctx) => {
                if self.malformed_turns.contains(&ctx.turn) {
                    return Ok("<response><choice>undecided</choice></response>".into());
                }
                let choice = scripted_choose(&self.policy, &ctx, seed);
                Ok(render_game_response(choice, describe(&self.policy)))
            }
            TurnContext::Workplace(ctx) => {
                if self.malformed_turns.contains(&ctx.scenario.index()) {
                    return Ok("<response><reflection>No comment.</reflection></response>".into());
                }
                Ok(render_workplace_response(&scripted_rate(&self.policy, ctx.scenario, seed)))
            }
        }
    }
}
