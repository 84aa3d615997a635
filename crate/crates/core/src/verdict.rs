//! Binary labels and per-image verdicts shared by all detection methods.

use serde::{Deserialize, Serialize};

/// Scene class. `Cloudy` is the positive class throughout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Cloudy,
    Clear,
}

impl Label {
    pub fn flipped(self) -> Self {
        match self {
            Label::Cloudy => Label::Clear,
            Label::Clear => Label::Cloudy,
        }
    }

    /// 1 for cloudy, 0 for clear.
    pub fn as_target(self) -> u8 {
        match self {
            Label::Cloudy => 1,
            Label::Clear => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub score_positive: f32,
    pub score_negative: f32,
    /// Probability mass on the chosen label, in `[0.5, 1]`.
    pub confidence: f32,
}

impl Verdict {
    /// Argmax over two similarity scores with a temperature-1 softmax for the
    /// confidence. Ties go to `Cloudy`.
    pub fn from_scores(score_positive: f32, score_negative: f32) -> Self {
        let label = if score_positive >= score_negative {
            Label::Cloudy
        } else {
            Label::Clear
        };
        let margin = (score_positive - score_negative).abs() as f64;
        let confidence = (1.0 / (1.0 + (-margin).exp())) as f32;
        Self {
            label,
            score_positive,
            score_negative,
            confidence,
        }
    }

    /// Verdict from a probability of the cloudy class. `p == 0.5` is cloudy.
    pub fn from_probability(p: f32) -> Self {
        let label = if p >= 0.5 { Label::Cloudy } else { Label::Clear };
        Self {
            label,
            score_positive: p,
            score_negative: 1.0 - p,
            confidence: p.max(1.0 - p),
        }
    }
}
