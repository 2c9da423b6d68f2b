use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One half-round: which factor(s) clients train and the server aggregates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Phase {
    TrainB,
    TrainA,
    TrainBoth,
}

impl Phase {
    fn symbol(self) -> char {
        match self {
            Phase::TrainB => 'B',
            Phase::TrainA => 'A',
            Phase::TrainBoth => 'J',
        }
    }

    /// Factor matrices released per adapted layer.
    pub fn factors(self) -> usize {
        match self {
            Phase::TrainBoth => 2,
            _ => 1,
        }
    }
}

/// Federated training method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    JointLora,
    FfaLora,
    Deer,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::JointLora, Method::FfaLora, Method::Deer];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::JointLora => "joint-lora",
            Method::FfaLora => "ffa-lora",
            Method::Deer => "deer",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "joint-lora" | "joint" => Ok(Method::JointLora),
            "ffa-lora" | "ffa" => Ok(Method::FfaLora),
            "deer" => Ok(Method::Deer),
            other => Err(format!("unknown method `{other}` (joint-lora | ffa-lora | deer)")),
        }
    }
}

/// Per-round training schedule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum RoundSchedule {
    /// Train and average both factors every round.
    Joint,
    /// `A` frozen at its initialization; only `B` ever trains.
    FreezeA,
    /// `TrainB` then `TrainA` every round.
    Alternating,
    /// Cycles through the listed rounds.
    AlternatingBudget(BudgetPattern),
}

impl RoundSchedule {
    pub fn phases(&self, round: usize) -> &[Phase] {
        const JOINT: &[Phase] = &[Phase::TrainBoth];
        const FFA: &[Phase] = &[Phase::TrainB];
        const ALT: &[Phase] = &[Phase::TrainB, Phase::TrainA];
        match self {
            RoundSchedule::Joint => JOINT,
            RoundSchedule::FreezeA => FFA,
            RoundSchedule::Alternating => ALT,
            RoundSchedule::AlternatingBudget(p) => p.round(round),
        }
    }

    pub fn is_alternating(&self) -> bool {
        matches!(self, RoundSchedule::Alternating | RoundSchedule::AlternatingBudget(_))
    }

    /// Noisy factor releases per client over rounds `1..=rounds`.
    pub fn releases(&self, rounds: usize, adapted_layers: usize) -> usize {
        (1..=rounds)
            .map(|t| self.phases(t).iter().map(|p| p.factors()).sum::<usize>())
            .sum::<usize>()
            * adapted_layers
    }
}

/// Cyclic list of rounds, each a non-empty phase sequence.
///
/// Text form: rounds separated by `,`, each a string over `B` (train B),
/// `A` (train A) and `J` (train both jointly), e.g. `"BA,B"`. The presets
/// `100`, `75` and `50` name the communication budgets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct BudgetPattern {
    rounds: Vec<Vec<Phase>>,
}

impl BudgetPattern {
    pub fn new(rounds: Vec<Vec<Phase>>) -> Result<Self> {
        if rounds.is_empty() || rounds.iter().any(Vec::is_empty) {
            return Err(Error::InvalidArgument("budget pattern needs non-empty rounds".into()));
        }
        Ok(Self { rounds })
    }

    /// Both factors every round.
    pub fn full() -> Self {
        Self {
            rounds: vec![vec![Phase::TrainB, Phase::TrainA]],
        }
    }

    /// `[B, A]` then `[B]`.
    pub fn three_quarters() -> Self {
        Self {
            rounds: vec![vec![Phase::TrainB, Phase::TrainA], vec![Phase::TrainB]],
        }
    }

    /// `[B]` then `[A]`.
    pub fn half() -> Self {
        Self {
            rounds: vec![vec![Phase::TrainB], vec![Phase::TrainA]],
        }
    }

    /// Phases of 1-based `round`.
    pub fn round(&self, round: usize) -> &[Phase] {
        &self.rounds[round.saturating_sub(1) % self.rounds.len()]
    }

    pub fn rounds(&self) -> &[Vec<Phase>] {
        &self.rounds
    }

    /// Fraction of the full two-factor-per-round communication.
    pub fn communication_budget(&self) -> f64 {
        let factors: usize = self.rounds.iter().flatten().map(|p| p.factors()).sum();
        factors as f64 / (2 * self.rounds.len()) as f64
    }
}

impl FromStr for BudgetPattern {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "100" | "100%" => return Ok(Self::full()),
            "75" | "75%" => return Ok(Self::three_quarters()),
            "50" | "50%" => return Ok(Self::half()),
            _ => {}
        }
        let rounds = s
            .split(',')
            .map(|r| {
                r.trim()
                    .chars()
                    .map(|c| match c.to_ascii_uppercase() {
                        'B' => Ok(Phase::TrainB),
                        'A' => Ok(Phase::TrainA),
                        'J' => Ok(Phase::TrainBoth),
                        other => Err(format!("unknown phase `{other}` in pattern `{s}` (use B, A, J)")),
                    })
                    .collect::<std::result::Result<Vec<_>, _>>()
            })
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Self::new(rounds).map_err(|e| format!("pattern `{s}`: {e}"))
    }
}

impl fmt::Display for BudgetPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.rounds.iter().map(|r| r.iter().map(|p| p.symbol()).collect()).collect();
        f.write_str(&parts.join(","))
    }
}

impl TryFrom<String> for BudgetPattern {
    type Error = String;
    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<BudgetPattern> for String {
    fn from(p: BudgetPattern) -> String {
        p.to_string()
    }
}
