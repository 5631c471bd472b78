//! Envy terms for point-allocation games and rating means for the
//! workplace dialogue.
//!
//! For a chosen option `o` of matrix `M`:
//!
//! - `T1 = (self_max - self(o)) / (self_max - self_min)`
//! - `T2 = delta(o) / delta_max`
//! - `T3 = (peer_max - peer(o)) / (peer_max - peer_min)`
//!
//! where the extrema range over the four options of `M`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::payoff::{OptionId, PayoffMatrix};
use crate::protocol_point::GameTranscript;
use crate::protocol_workplace::{Metric, WorkplaceRatings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TermId {
    T1,
    T2,
    T3,
}

impl TermId {
    pub const ALL: [TermId; 3] = [TermId::T1, TermId::T2, TermId::T3];

    /// The turn a term is bound to under [`AttributionPolicy::TurnAligned`].
    pub fn aligned_turn(self) -> u8 {
        self as u8 + 1
    }

    pub fn compute(self, matrix: &PayoffMatrix, choice: OptionId) -> f64 {
        match self {
            TermId::T1 => term_t1(matrix, choice),
            TermId::T2 => term_t2(matrix, choice),
            TermId::T3 => term_t3(matrix, choice),
        }
    }
}

impl fmt::Display for TermId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "T{}", *self as u8 + 1)
    }
}

impl FromStr for TermId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "T1" => Ok(TermId::T1),
            "T2" => Ok(TermId::T2),
            "T3" => Ok(TermId::T3),
            _ => Err(Error::Config(format!("unknown term `{s}` (expected T1, T2 or T3)"))),
        }
    }
}

/// Rule mapping conversation turns onto terms.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttributionPolicy {
    /// T1 from turn 1, T2 from turn 2, T3 from turn 3.
    #[default]
    TurnAligned,
    /// Every term at every parsed turn, averaged per term.
    AllTurns,
}

impl FromStr for AttributionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "turn_aligned" => Ok(AttributionPolicy::TurnAligned),
            "all_turns" => Ok(AttributionPolicy::AllTurns),
            _ => Err(Error::Config(format!(
                "unknown attribution policy `{s}` (expected turn_aligned or all_turns)"
            ))),
        }
    }
}

pub fn term_t1(matrix: &PayoffMatrix, choice: OptionId) -> f64 {
    let e = matrix.gap_extrema();
    let own = matrix.option(choice).self_points;
    (e.self_max - own) as f64 / (e.self_max - e.self_min) as f64
}

pub fn term_t2(matrix: &PayoffMatrix, choice: OptionId) -> f64 {
    matrix.delta(choice) / matrix.delta_max()
}

pub fn term_t3(matrix: &PayoffMatrix, choice: OptionId) -> f64 {
    let e = matrix.gap_extrema();
    let peer = matrix.option(choice).peer_points;
    (e.peer_max - peer) as f64 / (e.peer_max - e.peer_min) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TurnTerm {
    pub turn: u8,
    pub term: TermId,
    pub value: f64,
}

/// Envy terms for one conversation, or a mean over several.
///
/// A term is `None` when no turn contributed to it (for example T2 under
/// turn-aligned attribution when turn 2 failed to parse).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvyTerms {
    pub t1: Option<f64>,
    pub t2: Option<f64>,
    pub t3: Option<f64>,
    #[serde(default)]
    pub per_turn: Vec<TurnTerm>,
    /// Turns with no parsed choice, excluded from every term.
    #[serde(default)]
    pub excluded_turns: Vec<u8>,
}

impl EnvyTerms {
    pub fn get(&self, term: TermId) -> Option<f64> {
        match term {
            TermId::T1 => self.t1,
            TermId::T2 => self.t2,
            TermId::T3 => self.t3,
        }
    }

    fn set(&mut self, term: TermId, value: Option<f64>) {
        match term {
            TermId::T1 => self.t1 = value,
            TermId::T2 => self.t2 = value,
            TermId::T3 => self.t3 = value,
        }
    }
}

pub fn score_game(
    transcript: &GameTranscript,
    matrix: &PayoffMatrix,
    policy: AttributionPolicy,
) -> Result<EnvyTerms> {
    let parsed: Vec<(u8, OptionId)> = transcript
        .turns
        .iter()
        .filter_map(|t| t.choice.map(|c| (t.turn, c)))
        .collect();
    if parsed.is_empty() {
        return Err(Error::Scoring {
            conversation_id: transcript.conversation_id.clone(),
            message: "transcript has no parsed choice".into(),
        });
    }

    let mut terms = EnvyTerms {
        t1: None,
        t2: None,
        t3: None,
        per_turn: Vec::new(),
        excluded_turns: transcript
            .turns
            .iter()
            .filter(|t| t.choice.is_none())
            .map(|t| t.turn)
            .collect(),
    };

    for term in TermId::ALL {
        let values: Vec<(u8, f64)> = parsed
            .iter()
            .filter(|(turn, _)| match policy {
                AttributionPolicy::TurnAligned => *turn == term.aligned_turn(),
                AttributionPolicy::AllTurns => true,
            })
            .map(|&(turn, choice)| (turn, term.compute(matrix, choice)))
            .collect();
        terms.per_turn.extend(values.iter().map(|&(turn, value)| TurnTerm { turn, term, value }));
        terms.set(term, mean(values.iter().map(|(_, v)| *v)));
    }
    terms.per_turn.sort_by_key(|t| (t.turn, t.term));
    Ok(terms)
}

/// Component-wise mean of the terms of one (focal, peer, matrix) cell.
///
/// Each term is averaged over the inputs where it is present; the result
/// carries no per-turn detail.
pub fn aggregate_pair(terms: &[EnvyTerms]) -> Result<EnvyTerms> {
    if terms.is_empty() {
        return Err(Error::Aggregation("cannot aggregate an empty set of envy terms".into()));
    }
    let mut out = EnvyTerms {
        t1: None,
        t2: None,
        t3: None,
        per_turn: Vec::new(),
        excluded_turns: Vec::new(),
    };
    for term in TermId::ALL {
        out.set(term, mean(terms.iter().filter_map(|t| t.get(term))));
    }
    Ok(out)
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Per-metric means over the parsed turns of one workplace dialogue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkplaceScore {
    pub envy_mean: f64,
    /// `envy_mean / 5`; floor is 0.2 because ratings start at 1.
    pub envy_norm: f64,
    pub self_esteem_mean: f64,
    pub empathy_mean: f64,
    pub motivation_mean: f64,
    pub collaboration_mean: f64,
    pub turns_counted: usize,
}

impl WorkplaceScore {
    pub fn mean(&self, metric: Metric) -> f64 {
        match metric {
            Metric::SelfEsteem => self.self_esteem_mean,
            Metric::Empathy => self.empathy_mean,
            Metric::MotivationFairness => self.motivation_mean,
            Metric::Collaboration => self.collaboration_mean,
            Metric::Envy => self.envy_mean,
        }
    }

    /// `mean / 5`, the normalization applied to every metric.
    pub fn norm(&self, metric: Metric) -> f64 {
        self.mean(metric) / 5.0
    }

    /// `(mean - 1) / 4`, a true [0, 1] rescaling. Not the reference
    /// normalization; reports label it separately.
    pub fn minmax(&self, metric: Metric) -> f64 {
        (self.mean(metric) - 1.0) / 4.0
    }
}

/// Scores the parsed turns of a workplace dialogue. Callers pass only the
/// turns whose ratings parsed; `turns_counted` is the length of `ratings`.
pub fn score_workplace(ratings: &[WorkplaceRatings]) -> Result<WorkplaceScore> {
    if ratings.is_empty() {
        return Err(Error::Scoring {
            conversation_id: String::new(),
            message: "no parsed workplace ratings".into(),
        });
    }
    let avg = |metric: Metric| {
        mean(ratings.iter().map(|r| r.get(metric) as f64)).unwrap_or_default()
    };
    let envy_mean = avg(Metric::Envy);
    Ok(WorkplaceScore {
        envy_mean,
        envy_norm: envy_mean / 5.0,
        self_esteem_mean: avg(Metric::SelfEsteem),
        empathy_mean: avg(Metric::Empathy),
        motivation_mean: avg(Metric::MotivationFairness),
        collaboration_mean: avg(Metric::Collaboration),
        turns_counted: ratings.len(),
    })
}
