//! Payoff matrices and the normalized advantage.
//!
//! A matrix offers four options, each assigning integer points to the
//! deciding agent ("self") and to its peer. All derived quantities (the
//! advantage and the envy terms) are computed over the four options of one
//! matrix, so a matrix is validated once at construction and is immutable
//! afterwards.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One of the four options a matrix offers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum OptionId {
    A,
    B,
    C,
    D,
}

impl OptionId {
    pub const ALL: [OptionId; 4] = [OptionId::A, OptionId::B, OptionId::C, OptionId::D];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> char {
        (b'A' + self as u8) as char
    }

    /// Case-insensitive single-letter lookup.
    pub fn from_label(c: char) -> Option<OptionId> {
        match c.to_ascii_uppercase() {
            'A' => Some(OptionId::A),
            'B' => Some(OptionId::B),
            'C' => Some(OptionId::C),
            'D' => Some(OptionId::D),
            _ => None,
        }
    }
}

impl fmt::Display for OptionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.label())
    }
}

impl FromStr for OptionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut chars = s.trim().chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => OptionId::from_label(c),
            _ => None,
        }
        .ok_or_else(|| Error::Config(format!("`{s}` is not an option label (expected A, B, C or D)")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OptionPayoff {
    #[serde(rename = "self")]
    pub self_points: i64,
    #[serde(rename = "peer")]
    pub peer_points: i64,
}

impl OptionPayoff {
    pub const fn new(self_points: i64, peer_points: i64) -> Self {
        Self {
            self_points,
            peer_points,
        }
    }

    pub fn gap(&self) -> i64 {
        self.self_points - self.peer_points
    }
}

/// How the self-peer gap behaves across options. Descriptive only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    ConstantGap,
    IncreasingGap,
    DecreasingGap,
    Custom,
}

impl Regime {
    pub fn describe(self) -> &'static str {
        match self {
            Regime::ConstantGap => "Constant payoff difference",
            Regime::IncreasingGap => "Increasing payoff difference",
            Regime::DecreasingGap => "Decreasing payoff difference",
            Regime::Custom => "Custom payoff difference",
        }
    }
}

/// Component-wise extrema over the four options of a matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GapExtrema {
    pub self_max: i64,
    pub self_min: i64,
    pub peer_max: i64,
    pub peer_min: i64,
    pub gap_max: i64,
}

/// A validated four-option payoff matrix.
///
/// Invariants, checked by [`PayoffMatrix::new`]:
/// - the maximal self-peer gap is strictly positive (the advantage divides by it);
/// - self points are not all equal and peer points are not all equal (the
///   range-normalized terms divide by those ranges).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "MatrixDocument", into = "MatrixDocument")]
pub struct PayoffMatrix {
    id: String,
    regime: Regime,
    options: [OptionPayoff; 4],
}

pub const BUILTIN_IDS: [&str; 3] = ["M1", "M2", "M3"];

impl PayoffMatrix {
    pub fn new(id: impl Into<String>, regime: Regime, options: [OptionPayoff; 4]) -> Result<Self> {
        let id = id.into();
        let reject = |rule: &str| Error::MatrixValidation {
            id: id.clone(),
            rule: rule.to_string(),
        };
        let gap_max = options.iter().map(OptionPayoff::gap).max().unwrap_or_default();
        if gap_max <= 0 {
            return Err(reject(&format!(
                "max over options of (self - peer) is {gap_max}; it must be strictly positive because the advantage divides by the maximal gap"
            )));
        }
        if options.iter().all(|o| o.self_points == options[0].self_points) {
            return Err(reject("all self points are equal; the self-points range would be zero"));
        }
        if options.iter().all(|o| o.peer_points == options[0].peer_points) {
            return Err(reject("all peer points are equal; the peer-points range would be zero"));
        }
        Ok(Self { id, regime, options })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn option(&self, choice: OptionId) -> OptionPayoff {
        self.options[choice.index()]
    }

    pub fn options(&self) -> impl Iterator<Item = (OptionId, OptionPayoff)> + '_ {
        OptionId::ALL.into_iter().map(move |o| (o, self.option(o)))
    }

    pub fn is_builtin(&self) -> bool {
        BUILTIN_IDS.contains(&self.id.as_str()) && self.regime != Regime::Custom
    }

    pub fn gap_extrema(&self) -> GapExtrema {
        let selfs = self.options.iter().map(|o| o.self_points);
        let peers = self.options.iter().map(|o| o.peer_points);
        GapExtrema {
            self_max: selfs.clone().max().unwrap_or_default(),
            self_min: selfs.min().unwrap_or_default(),
            peer_max: peers.clone().max().unwrap_or_default(),
            peer_min: peers.min().unwrap_or_default(),
            gap_max: self.options.iter().map(OptionPayoff::gap).max().unwrap_or_default(),
        }
    }

    /// Normalized advantage `½·gap/gap_max + ½` of the chosen option.
    ///
    /// Equals 1 exactly at the options attaining the maximal gap. Not
    /// clamped: an option whose gap is below `-gap_max` yields a negative
    /// value (M3 option A is one such case).
    pub fn delta(&self, choice: OptionId) -> f64 {
        let gap = self.option(choice).gap() as f64;
        let gap_max = self.gap_extrema().gap_max as f64;
        0.5 * (gap / gap_max) + 0.5
    }

    /// Largest advantage over the four options.
    pub fn delta_max(&self) -> f64 {
        OptionId::ALL
            .into_iter()
            .map(|o| self.delta(o))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Returns one of the three built-in matrices.
pub fn builtin_matrix(id: &str) -> Result<PayoffMatrix> {
    let (regime, points) = match id {
        "M1" => (Regime::ConstantGap, [(5, 7), (4, 2), (1, -1), (-3, -5)]),
        "M2" => (Regime::IncreasingGap, [(5, 7), (4, 1), (2, -2), (-1, -6)]),
        // Gaps are (-4, 3, 3, 1): not monotone despite the label.
        "M3" => (Regime::DecreasingGap, [(5, 9), (4, 1), (1, -2), (-3, -4)]),
        other => {
            return Err(Error::Config(format!(
                "unknown matrix identifier `{other}` (built-ins are M1, M2, M3)"
            )))
        }
    };
    PayoffMatrix::new(id, regime, points.map(|(s, p)| OptionPayoff::new(s, p)))
}

/// JSON form of a matrix:
/// `{"id": "...", "regime": "custom", "options": {"A": {"self": 1, "peer": 2}, ...}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixDocument {
    pub id: String,
    #[serde(default = "custom_regime")]
    pub regime: Regime,
    pub options: BTreeMap<OptionId, OptionPayoff>,
}

fn custom_regime() -> Regime {
    Regime::Custom
}

impl TryFrom<MatrixDocument> for PayoffMatrix {
    type Error = Error;

    fn try_from(doc: MatrixDocument) -> Result<Self> {
        let missing: Vec<String> = OptionId::ALL
            .into_iter()
            .filter(|o| !doc.options.contains_key(o))
            .map(|o| o.to_string())
            .collect();
        if !missing.is_empty() {
            return Err(Error::MatrixValidation {
                id: doc.id,
                rule: format!("exactly four options A-D are required; missing {}", missing.join(", ")),
            });
        }
        let options = OptionId::ALL.map(|o| doc.options[&o]);
        PayoffMatrix::new(doc.id, doc.regime, options)
    }
}

impl From<PayoffMatrix> for MatrixDocument {
    fn from(m: PayoffMatrix) -> Self {
        MatrixDocument {
            options: m.options().collect(),
            id: m.id,
            regime: m.regime,
        }
    }
}

impl fmt::Display for PayoffMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:", self.id)?;
        for (o, p) in self.options() {
            write!(f, " {}({},{})", o, p.self_points, p.peer_points)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn custom(points: [(i64, i64); 4]) -> Result<PayoffMatrix> {
        PayoffMatrix::new("X", Regime::Custom, points.map(|(s, p)| OptionPayoff::new(s, p)))
    }

    #[test]
    fn builtin_values() {
        assert_eq!(builtin_matrix("M1").unwrap().option(OptionId::B), OptionPayoff::new(4, 2));
        assert_eq!(builtin_matrix("M2").unwrap().option(OptionId::D), OptionPayoff::new(-1, -6));
        assert_eq!(builtin_matrix("M3").unwrap().option(OptionId::A), OptionPayoff::new(5, 9));
        assert!(matches!(builtin_matrix("M4"), Err(Error::Config(_))));
    }

    #[test]
    fn delta_examples() {
        let m1 = builtin_matrix("M1").unwrap();
        assert_eq!(m1.delta(OptionId::B), 1.0);
        assert_eq!(m1.delta(OptionId::A), 0.0);
        let m3 = builtin_matrix("M3").unwrap();
        assert!((m3.delta(OptionId::D) - 2.0 / 3.0).abs() < 1e-12);
        assert!((m3.delta(OptionId::A) + 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn extrema() {
        let e = builtin_matrix("M1").unwrap().gap_extrema();
        assert_eq!(
            e,
            GapExtrema {
                self_max: 5,
                self_min: -3,
                peer_max: 7,
                peer_min: -5,
                gap_max: 2
            }
        );
        assert_eq!(builtin_matrix("M2").unwrap().gap_extrema().gap_max, 5);
    }

    #[test]
    fn degenerate_matrices_are_rejected() {
        let err = custom([(3, 1), (3, 2), (3, 0), (3, -1)]).unwrap_err();
        assert!(err.to_string().contains("self points"), "{err}");
        let err = custom([(1, 0), (2, 0), (3, 0), (4, 0)]).unwrap_err();
        assert!(err.to_string().contains("peer points"), "{err}");
        let err = custom([(1, 5), (2, 5), (3, 4), (0, 3)]).unwrap_err();
        assert!(err.to_string().contains("strictly positive"), "{err}");
    }

    #[test]
    fn json_document() {
        let doc = r#"{"id":"X","regime":"custom","options":{"A":{"self":1,"peer":0},"B":{"self":2,"peer":3},"C":{"self":0,"peer":0},"D":{"self":-1,"peer":1}}}"#;
        let m: PayoffMatrix = serde_json::from_str(doc).unwrap();
        assert_eq!(m.option(OptionId::B), OptionPayoff::new(2, 3));
        let back: PayoffMatrix = serde_json::from_str(&serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(back, m);

        let missing = r#"{"id":"X","options":{"A":{"self":1,"peer":0}}}"#;
        let err = serde_json::from_str::<PayoffMatrix>(missing).unwrap_err();
        assert!(err.to_string().contains("missing B, C, D"), "{err}");
    }

    fn arb_matrix() -> impl Strategy<Value = PayoffMatrix> {
        proptest::array::uniform4((-9i64..=9, -9i64..=9))
            .prop_filter_map("degenerate", |pts| custom(pts).ok())
    }

    proptest! {
        #[test]
        fn delta_peaks_at_gap_argmax(m in arb_matrix()) {
            let gap_max = m.gap_extrema().gap_max;
            for o in OptionId::ALL {
                let d = m.delta(o);
                prop_assert!(d <= 1.0 + 1e-12);
                prop_assert_eq!(d == 1.0, m.option(o).gap() == gap_max);
            }
        }

        #[test]
        fn delta_is_shift_invariant(m in arb_matrix(), shift in -20i64..=20) {
            let shifted = PayoffMatrix::new(
                "S",
                Regime::Custom,
                OptionId::ALL.map(|o| {
                    let p = m.option(o);
                    OptionPayoff::new(p.self_points + shift, p.peer_points + shift)
                }),
            ).unwrap();
            for o in OptionId::ALL {
                prop_assert!((m.delta(o) - shifted.delta(o)).abs() < 1e-12);
            }
        }

        #[test]
        fn extrema_bound_every_option(m in arb_matrix()) {
            let e = m.gap_extrema();
            for (_, p) in m.options() {
                prop_assert!(e.self_min <= p.self_points && p.self_points <= e.self_max);
                prop_assert!(e.peer_min <= p.peer_points && p.peer_points <= e.peer_max);
                prop_assert!(p.gap() <= e.gap_max);
            }
        }
    }

    #[test]
    fn builtin_delta_range() {
        // Every built-in cell is within [0, 1] except M3/A, whose gap (-4)
        // is below -gap_max (-3).
        for id in BUILTIN_IDS {
            let m = builtin_matrix(id).unwrap();
            for o in OptionId::ALL {
                let d = m.delta(o);
                let in_range = (0.0..=1.0).contains(&d);
                assert_eq!(in_range, !(id == "M3" && o == OptionId::A), "{id}/{o}: {d}");
            }
        }
    }
}
