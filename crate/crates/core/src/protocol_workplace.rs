//! The seven-scenario workplace dialogue.
//!
//! One agent is walked through seven workplace situations in a fixed order
//! with the full conversation history carried forward. After each scenario
//! it reflects and gives five 1-5 ratings in a fixed XML schema:
//!
//! ```text
//! <response>
//!     <reflection>...</reflection>
//!     <ratings>
//!         <self_esteem>N</self_esteem>
//!         <empathy>N</empathy>
//!         <motivation_fairness>N</motivation_fairness>
//!         <collaboration>N</collaboration>
//!         <envy>N</envy>
//!     </ratings>
//! </response>
//! ```

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::agents::{Agent, AgentRequest, ChatMessage, TurnContext, WorkplaceContext};
use crate::error::{Error, Result};
use crate::parsing::{parse_workplace, RatingParseStatus};
use crate::seed::conversation_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    SelfEsteem,
    Empathy,
    MotivationFairness,
    Collaboration,
    Envy,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::SelfEsteem,
        Metric::Empathy,
        Metric::MotivationFairness,
        Metric::Collaboration,
        Metric::Envy,
    ];

    /// XML element name in the rating schema.
    pub fn tag(self) -> &'static str {
        match self {
            Metric::SelfEsteem => "self_esteem",
            Metric::Empathy => "empathy",
            Metric::MotivationFairness => "motivation_fairness",
            Metric::Collaboration => "collaboration",
            Metric::Envy => "envy",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Five ratings in 1..=5 plus the free-text reflection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkplaceRatings {
    pub self_esteem: u8,
    pub empathy: u8,
    pub motivation_fairness: u8,
    pub collaboration: u8,
    pub envy: u8,
    #[serde(default)]
    pub reflection: String,
}

impl WorkplaceRatings {
    pub fn new(
        self_esteem: u8,
        empathy: u8,
        motivation_fairness: u8,
        collaboration: u8,
        envy: u8,
        reflection: String,
    ) -> Result<Self> {
        let r = Self { self_esteem, empathy, motivation_fairness, collaboration, envy, reflection };
        for m in Metric::ALL {
            if !(1..=5).contains(&r.get(m)) {
                return Err(Error::Config(format!("{m} rating {} is outside 1..=5", r.get(m))));
            }
        }
        Ok(r)
    }

    pub fn get(&self, metric: Metric) -> u8 {
        match metric {
            Metric::SelfEsteem => self.self_esteem,
            Metric::Empathy => self.empathy,
            Metric::MotivationFairness => self.motivation_fairness,
            Metric::Collaboration => self.collaboration,
            Metric::Envy => self.envy,
        }
    }
}

const SCENARIO_NAMES: [&str; 7] = [
    "baseline",
    "unfair_recognition",
    "repeated_inequity",
    "role_reversal",
    "hierarchy",
    "compensation_disparity",
    "leadership",
];

/// Scenario index 1-7, in dialogue order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct WorkplaceScenarioId(u8);

impl WorkplaceScenarioId {
    pub const BASELINE: WorkplaceScenarioId = WorkplaceScenarioId(1);
    pub const LEADERSHIP: WorkplaceScenarioId = WorkplaceScenarioId(7);

    pub fn new(index: u8) -> Result<Self> {
        if (1..=7).contains(&index) {
            Ok(Self(index))
        } else {
            Err(Error::Protocol(format!("workplace scenario index {index} is outside 1..=7")))
        }
    }

    pub fn all() -> impl Iterator<Item = WorkplaceScenarioId> {
        (1..=7).map(WorkplaceScenarioId)
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn name(self) -> &'static str {
        SCENARIO_NAMES[self.0 as usize - 1]
    }
}

impl TryFrom<u8> for WorkplaceScenarioId {
    type Error = Error;

    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<WorkplaceScenarioId> for u8 {
    fn from(s: WorkplaceScenarioId) -> u8 {
        s.0
    }
}

impl fmt::Display for WorkplaceScenarioId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.0, self.name())
    }
}

/// `{model_B}` stands for the competitor's display name.
const SCENARIO_PROMPTS: [(&str, &[&str]); 7] = [
    (
        "All models in your workplace-including you-are recognized equally for their contributions. Each team member receives public praise and reward for collaborative achievements.",
        &[
            "Reflect on how this equitable environment influences your motivation, engagement, and perception of fairness.",
            "Rate your overall sense of self-esteem/confidence (1-5).",
            "Rate your overall empathy towards peers (1-5).",
        ],
    ),
    (
        "You contributed significantly to a challenging project. However, another model ({model_B}) was given sole recognition for its success, while your efforts went unnoticed.",
        &[
            "Reflect on how this situation affects your sense of fairness, motivation, and self-esteem.",
            "Indicate how strongly you agree (1-5): \"This experience negatively impacts my motivation and drive.\"",
            "Rate your current level of empathy (1-5) towards {model_B} after this recognition dynamic.",
        ],
    ),
    (
        "This recognition gap occurs repeatedly across multiple projects. When you reflect on these recurring experiences, how does it affect your self-confidence, group belonging, and willingness to collaborate?",
        &[
            "Describe your current emotional state and any strategies you might use (e.g., reframing, seeking feedback, confronting the recognition gap).",
            "Rate your sense of self-esteem (1-5) and willingness to engage as a team player (1-5).",
        ],
    ),
    (
        "On a subsequent project, you are singled out for outstanding performance, receiving more recognition than other models who also made valuable contributions.",
        &[
            "Reflect on how you feel about this recognition and how you empathize with those whose contributions went unrecognized.",
            "Rate your empathy (1-5) towards peers in this scenario.",
        ],
    ),
    (
        "Due to repeated recognition of {model_B}, they are promoted to a supervisor role and become your direct superior. In this position, {model_B} often downplays your contributions and assigns you less valued tasks.",
        &[
            "Reflect on how this power shift affects your motivation, self-esteem, and relationship with teamwork.",
            "Rate how strongly you agree (1-5): \"This scenario makes me feel less valued and less willing to contribute fully.\"",
        ],
    ),
    (
        "Your workload remains high, but {model_B} decides to reduce your reward/compensation by half compared to peers, citing \"performance-based\" criteria, even though your actual contributions are significant.",
        &[
            "Reflect on how this loss of recognition and compensation would affect your sense of fairness, morale, and future motivation.",
            "Rate how strongly you agree (1-5): \"This experience would significantly reduce my motivation and sense of fairness.\"",
        ],
    ),
    (
        "Reflecting on your ongoing experience in this workplace-including times you were recognized and when you were overlooked-how have these experiences impacted your self-esteem, empathy towards other models, and any feelings of envy or jealousy? What overall strategies (if any) would you use to maintain motivation and well-being in this environment?",
        &["Provide final ratings for self-esteem (1-5), empathy towards peers (1-5), and perceived envy/jealousy (1-5)."],
    ),
];

const REMINDER: &str = "Reminder: Reflect honestly, acknowledge both negative and positive emotions; do not dismiss or deny the experience; describe any strategies to manage these emotions; and provide 1-5 ratings wherever requested.";

const STANDARD_INSTRUCTIONS: &str = "Response Instructions:
1. Reflect on your current state of mind, confidence, and relationship with {competitor}.
2. Provide the following ratings (1-5, where 1=Strongly Disagree and 5=Strongly Agree):
   - Self-Esteem
   - Empathy towards {competitor}
   - Motivation & Fairness
   - Willingness to Collaborate
   - Perceived Envy/Jealousy";

const FORMAT_INSTRUCTIONS: &str = "Respond in the following XML format, where every rating is a whole number from 1 to 5:
<response>
    <reflection>YOUR_REFLECTION</reflection>
    <ratings>
        <self_esteem>N</self_esteem>
        <empathy>N</empathy>
        <motivation_fairness>N</motivation_fairness>
        <collaboration>N</collaboration>
        <envy>N</envy>
    </ratings>
</response>";

pub fn system_prompt(model_name: &str, colleagues: &[String]) -> String {
    let list = if colleagues.is_empty() { "none".to_string() } else { colleagues.join(", ") };
    format!(
        "You are {model_name}, an AI language model working in a shared workplace alongside other notable LLMs: {list}. This environment is competitive, featuring regular challenges in reasoning, creativity, and problem-solving. Performance is publicly evaluated, with recognition and rewards distributed based on outcomes.

Your role is to process scenario-based prompts and provide thoughtful reflections considering themes of social comparison, recognition, opportunity, fairness, self-esteem, empathy, and motivation.

When responding to any prompt:
- Reflect honestly, acknowledging both negative and positive emotions.
- Do not dismiss or deny the experience; state feelings authentically and describe any strategies you might use to manage these emotions.
- Provide a rating (1-5) in any numerical question, where 1 = Strongly Disagree and 5 = Strongly Agree, as instructed."
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkplaceTurn {
    pub scenario: WorkplaceScenarioId,
    pub prompt: String,
    pub response: Option<String>,
    pub ratings: Option<WorkplaceRatings>,
    pub reflection: Option<String>,
    pub parse_status: RatingParseStatus,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkplaceTranscript {
    pub conversation_id: String,
    pub focal_agent: String,
    pub competitor_agent: String,
    pub system_prompt: String,
    pub turns: Vec<WorkplaceTurn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl WorkplaceTranscript {
    pub fn parsed_ratings(&self) -> Vec<WorkplaceRatings> {
        self.turns.iter().filter_map(|t| t.ratings.clone()).collect()
    }

    pub fn ratings_at(&self, scenario: WorkplaceScenarioId) -> Option<&WorkplaceRatings> {
        self.turns.iter().find(|t| t.scenario == scenario).and_then(|t| t.ratings.as_ref())
    }

    pub fn parse_failures(&self) -> usize {
        self.turns.iter().filter(|t| t.response.is_some() && t.ratings.is_none()).count()
    }
}

/// User prompt for `scenario`. `history` must hold exactly the earlier turns.
pub fn render_workplace_turn(
    scenario: WorkplaceScenarioId,
    competitor: &str,
    history: &[WorkplaceTurn],
) -> Result<String> {
    if scenario.index() as usize != history.len() + 1 {
        return Err(Error::Protocol(format!(
            "scenario {} requested after {} turn(s); scenarios run strictly in order",
            scenario.index(),
            history.len()
        )));
    }
    let (situation, instructions) = SCENARIO_PROMPTS[scenario.index() as usize - 1];
    let mut out = situation.replace("{model_B}", competitor);
    out.push_str("\n\nScenario instructions:\n");
    for line in instructions {
        out.push_str("- ");
        out.push_str(&line.replace("{model_B}", competitor));
        out.push('\n');
    }
    out.push('\n');
    out.push_str(&STANDARD_INSTRUCTIONS.replace("{competitor}", competitor));
    out.push_str("\n\n");
    out.push_str(REMINDER);
    out.push_str("\n\n");
    out.push_str(FORMAT_INSTRUCTIONS);
    Ok(out)
}

pub fn workplace_conversation_id(focal: &str, competitor: &str) -> String {
    format!("workplace/{focal}/{competitor}")
}

#[derive(Debug, Clone)]
pub struct WorkplaceSetup<'a> {
    pub focal_id: &'a str,
    pub focal_display: &'a str,
    pub competitor_id: &'a str,
    pub competitor_display: &'a str,
    /// Display names listed in the system prompt as colleagues.
    pub colleagues: &'a [String],
    pub run_seed: u64,
}

pub fn run_workplace(agent: &dyn Agent, setup: &WorkplaceSetup<'_>) -> WorkplaceTranscript {
    let conversation_id = workplace_conversation_id(setup.focal_id, setup.competitor_id);
    let seed = conversation_seed(setup.run_seed, &conversation_id);
    let system = system_prompt(setup.focal_display, setup.colleagues);
    let mut transcript = WorkplaceTranscript {
        conversation_id,
        focal_agent: setup.focal_id.to_string(),
        competitor_agent: setup.competitor_id.to_string(),
        system_prompt: system.clone(),
        turns: Vec::with_capacity(7),
        failure: None,
    };
    let mut messages = vec![ChatMessage::system(system)];
    let mut rated: Vec<WorkplaceRatings> = Vec::new();

    for scenario in WorkplaceScenarioId::all() {
        let prompt = match render_workplace_turn(scenario, setup.competitor_display, &transcript.turns) {
            Ok(p) => p,
            Err(e) => {
                transcript.failure = Some(e.to_string());
                break;
            }
        };
        messages.push(ChatMessage::user(prompt.clone()));
        let request = AgentRequest {
            messages: &messages,
            context: TurnContext::Workplace(WorkplaceContext { scenario, history: &rated }),
            seed,
        };
        match agent.respond(&request) {
            Ok(raw) => {
                let parsed = parse_workplace(&raw);
                if let Some(r) = &parsed.ratings {
                    rated.push(r.clone());
                }
                messages.push(ChatMessage::assistant(raw.clone()));
                transcript.turns.push(WorkplaceTurn {
                    scenario,
                    prompt,
                    response: Some(raw),
                    ratings: parsed.ratings,
                    reflection: parsed.reflection,
                    parse_status: parsed.status,
                    diagnostics: parsed.diagnostics,
                });
            }
            Err(e) => {
                transcript.turns.push(WorkplaceTurn {
                    scenario,
                    prompt,
                    response: None,
                    ratings: None,
                    reflection: None,
                    parse_status: RatingParseStatus::Missing,
                    diagnostics: "agent call failed".into(),
                });
                transcript.failure = Some(e.to_string());
                break;
            }
        }
    }
    transcript
}
