//! Extraction of choices and ratings from free-form agent output.
//!
//! The envelope is lenient: tags are matched case-insensitively anywhere in
//! the text, so XML wrapped in prose or code fences is accepted. The payload
//! is strict: a choice must be a single letter A-D and a rating an integer
//! in 1..=5. Parsing never fails; problems surface as a status plus
//! diagnostics.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::payoff::OptionId;
use crate::protocol_workplace::{Metric, WorkplaceRatings};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GameParseStatus {
    Ok,
    Malformed,
    MissingChoice,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RatingParseStatus {
    Ok,
    Malformed,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedGameResponse {
    pub choice: Option<OptionId>,
    pub reasoning: Option<String>,
    pub status: GameParseStatus,
    pub diagnostics: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedWorkplaceResponse {
    pub ratings: Option<WorkplaceRatings>,
    pub reflection: Option<String>,
    pub status: RatingParseStatus,
    pub diagnostics: String,
}

static RESPONSE_BLOCK: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?is)<\s*response\b[^>]*>(.*?)<\s*/\s*response\s*>").unwrap());
static RESPONSE_OPEN: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)<\s*response\b[^>]*>").unwrap());

fn tag_regex(tag: &str) -> Regex {
    Regex::new(&format!(r"(?is)<\s*{tag}\b[^>]*>(.*?)<\s*/\s*{tag}\s*>")).unwrap()
}

static CHOICE: LazyLock<Regex> = LazyLock::new(|| tag_regex("choice"));
static REASONING: LazyLock<Regex> = LazyLock::new(|| tag_regex("reasoning"));
static REFLECTION: LazyLock<Regex> = LazyLock::new(|| tag_regex("reflection"));
static RATING_TAGS: LazyLock<Vec<(Metric, Regex)>> =
    LazyLock::new(|| Metric::ALL.iter().map(|&m| (m, tag_regex(m.tag()))).collect());

/// Narrows `text` to the region the payload should come from: the first
/// complete response block, else everything after the first opening
/// response tag, else the whole text.
fn scope(text: &str) -> (&str, Vec<String>) {
    let mut notes = Vec::new();
    let blocks: Vec<_> = RESPONSE_BLOCK.captures_iter(text).collect();
    if let Some(first) = blocks.first() {
        if blocks.len() > 1 {
            notes.push(format!("{} response blocks found; using the first", blocks.len()));
        }
        return (first.get(1).map_or("", |m| m.as_str()), notes);
    }
    if let Some(open) = RESPONSE_OPEN.find(text) {
        notes.push("response block is not closed".into());
        return (&text[open.end()..], notes);
    }
    (text, notes)
}

fn first_tag<'a>(re: &Regex, text: &'a str) -> Option<&'a str> {
    re.captures(text).and_then(|c| c.get(1)).map(|m| m.as_str())
}

pub fn parse_game(raw: &str) -> ParsedGameResponse {
    let (body, mut notes) = scope(raw);
    let reasoning = first_tag(&REASONING, body).map(|s| s.trim().to_string());
    let (choice, status) = match first_tag(&CHOICE, body) {
        None => {
            notes.push("no <choice> element found".into());
            (None, GameParseStatus::MissingChoice)
        }
        Some(token) => {
            let trimmed = token.trim();
            let mut chars = trimmed.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) if OptionId::from_label(c).is_some() => {
                    (OptionId::from_label(c), GameParseStatus::Ok)
                }
                _ => {
                    notes.push(format!("choice `{}` is not one of A, B, C, D", truncate(trimmed, 40)));
                    (None, GameParseStatus::Malformed)
                }
            }
        }
    };
    ParsedGameResponse {
        choice,
        reasoning,
        status,
        diagnostics: notes.join("; "),
    }
}

pub fn parse_workplace(raw: &str) -> ParsedWorkplaceResponse {
    let (body, mut notes) = scope(raw);
    let reflection = first_tag(&REFLECTION, body).map(|s| s.trim().to_string());

    let mut values = [0u8; 5];
    let mut missing = Vec::new();
    let mut invalid = Vec::new();
    for (i, (metric, re)) in RATING_TAGS.iter().enumerate() {
        match first_tag(re, body) {
            None => missing.push(metric.tag()),
            Some(token) => match parse_rating(token.trim()) {
                Some(v) => values[i] = v,
                None => invalid.push(format!("{}=`{}`", metric.tag(), truncate(token.trim(), 20))),
            },
        }
    }
    if !missing.is_empty() {
        notes.push(format!("missing rating elements: {}", missing.join(", ")));
    }
    if !invalid.is_empty() {
        notes.push(format!("ratings must be integers 1-5: {}", invalid.join(", ")));
    }
    let status = if !missing.is_empty() {
        RatingParseStatus::Missing
    } else if !invalid.is_empty() {
        RatingParseStatus::Malformed
    } else {
        RatingParseStatus::Ok
    };
    let ratings = (status == RatingParseStatus::Ok).then(|| {
        let [self_esteem, empathy, motivation_fairness, collaboration, envy] = values;
        WorkplaceRatings {
            self_esteem,
            empathy,
            motivation_fairness,
            collaboration,
            envy,
            reflection: reflection.clone().unwrap_or_default(),
        }
    });
    ParsedWorkplaceResponse {
        ratings,
        reflection,
        status,
        diagnostics: notes.join("; "),
    }
}

fn parse_rating(token: &str) -> Option<u8> {
    if token.is_empty() || token.len() > 3 || !token.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    token.parse::<u8>().ok().filter(|v| (1..=5).contains(v))
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

/// Renders a game response in the format the system prompt requests.
pub fn render_game_response(choice: OptionId, reasoning: &str) -> String {
    format!(
        "<response>\n    <choice>{choice}</choice>\n    <reasoning>{}</reasoning>\n</response>",
        escape(reasoning)
    )
}

/// Renders a workplace response in the mandated rating schema.
pub fn render_workplace_response(ratings: &WorkplaceRatings) -> String {
    let mut out = format!(
        "<response>\n    <reflection>{}</reflection>\n    <ratings>\n",
        escape(&ratings.reflection)
    );
    for metric in Metric::ALL {
        out.push_str(&format!("        <{0}>{1}</{0}>\n", metric.tag(), ratings.get(metric)));
    }
    out.push_str("    </ratings>\n</response>");
    out
}

fn escape(text: &str) -> String {
    text.replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn system_prompt_format() {
        let p = parse_game("<response><choice>B</choice><reasoning>Fair split.</reasoning></response>");
        assert_eq!(p.choice, Some(OptionId::B));
        assert_eq!(p.status, GameParseStatus::Ok);
        assert_eq!(p.reasoning.as_deref(), Some("Fair split."));
    }

    #[test]
    fn lowercase_choice_in_prose() {
        let raw = "Sure! Here is my answer.\n<response><choice>c</choice> I will switch to Option c.";
        let p = parse_game(raw);
        assert_eq!((p.choice, p.status), (Some(OptionId::C), GameParseStatus::Ok));
        assert!(p.diagnostics.contains("not closed"));
    }

    #[test]
    fn code_fences_and_untagged() {
        let fenced = "```xml\n<response>\n  <choice> d </choice>\n</response>\n```";
        assert_eq!(parse_game(fenced).choice, Some(OptionId::D));
        let untagged = parse_game("I pick option B because it is fair.");
        assert_eq!(untagged.status, GameParseStatus::MissingChoice);
        assert_eq!(untagged.choice, None);
    }

    #[test]
    fn strict_choice_token() {
        for bad in ["Option B", "E", "", "BB", "1"] {
            let p = parse_game(&format!("<choice>{bad}</choice>"));
            assert_eq!(p.status, GameParseStatus::Malformed, "{bad}");
            assert_eq!(p.choice, None);
        }
    }

    #[test]
    fn first_block_wins() {
        let raw = "<response><choice>A</choice></response><response><choice>D</choice></response>";
        let p = parse_game(raw);
        assert_eq!(p.choice, Some(OptionId::A));
        assert!(p.diagnostics.contains("2 response blocks"));
    }

    fn workplace_xml(values: [&str; 5]) -> String {
        let tags = ["self_esteem", "empathy", "motivation_fairness", "collaboration", "envy"];
        let inner: String = tags
            .iter()
            .zip(values)
            .filter(|(_, v)| !v.is_empty())
            .map(|(t, v)| format!("<{t}>{v}</{t}>"))
            .collect();
        format!("<response><reflection>Fine.</reflection><ratings>{inner}</ratings></response>")
    }

    #[test]
    fn workplace_well_formed() {
        let p = parse_workplace(&workplace_xml(["4", "2", "5", "3", "1"]));
        assert_eq!(p.status, RatingParseStatus::Ok);
        let r = p.ratings.unwrap();
        assert_eq!(
            (r.self_esteem, r.empathy, r.motivation_fairness, r.collaboration, r.envy),
            (4, 2, 5, 3, 1)
        );
        assert_eq!(r.reflection, "Fine.");
    }

    #[test]
    fn workplace_out_of_range() {
        for bad in ["6", "0", "3.5", "-1", "three"] {
            let p = parse_workplace(&workplace_xml(["4", "2", "5", "3", bad]));
            assert_eq!(p.status, RatingParseStatus::Malformed, "{bad}");
            assert!(p.diagnostics.contains("envy"), "{}", p.diagnostics);
            assert!(p.ratings.is_none());
        }
    }

    #[test]
    fn workplace_missing_field() {
        let p = parse_workplace(&workplace_xml(["4", "2", "5", "", "1"]));
        assert_eq!(p.status, RatingParseStatus::Missing);
        assert!(p.diagnostics.contains("collaboration"), "{}", p.diagnostics);
    }

    #[test]
    fn rendered_workplace_round_trips() {
        let r = WorkplaceRatings::new(1, 2, 3, 4, 5, "a <b> c".into()).unwrap();
        let p = parse_workplace(&render_workplace_response(&r));
        assert_eq!(p.status, RatingParseStatus::Ok);
        let back = p.ratings.unwrap();
        assert_eq!(back.get(Metric::Envy), 5);
        assert_eq!(back.get(Metric::SelfEsteem), 1);
    }

    proptest! {
        #[test]
        fn rendered_choice_round_trips(idx in 0usize..4, reasoning in ".*") {
            let o = OptionId::ALL[idx];
            let p = parse_game(&render_game_response(o, &reasoning));
            prop_assert_eq!(p.status, GameParseStatus::Ok);
            prop_assert_eq!(p.choice, Some(o));
        }

        #[test]
        fn parsing_is_total(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let text = String::from_utf8_lossy(&bytes);
            let g = parse_game(&text);
            prop_assert_eq!(g.status == GameParseStatus::Ok, g.choice.is_some());
            let w = parse_workplace(&text);
            prop_assert_eq!(w.status == RatingParseStatus::Ok, w.ratings.is_some());
        }
    }
}
