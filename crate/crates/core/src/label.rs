use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Binary class of a proposal or an image. Encoded as 0/1 so the image
/// verdict is the maximum over proposal labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub enum ClassLabel {
    #[default]
    NonSmoker = 0,
    Smoker = 1,
}

impl ClassLabel {
    pub fn as_u8(self) -> u8 {
        self as u8
    }

    pub fn from_u8(v: u8) -> Option<Self> {
        match v {
            0 => Some(ClassLabel::NonSmoker),
            1 => Some(ClassLabel::Smoker),
            _ => None,
        }
    }

    pub fn is_smoker(self) -> bool {
        self == ClassLabel::Smoker
    }
}

impl fmt::Display for ClassLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassLabel::NonSmoker => "nonsmoker",
            ClassLabel::Smoker => "smoker",
        })
    }
}

impl Serialize for ClassLabel {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.as_u8())
    }
}

impl<'de> Deserialize<'de> for ClassLabel {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = u8::deserialize(d)?;
        ClassLabel::from_u8(v)
            .ok_or_else(|| serde::de::Error::custom(format!("class label must be 0 or 1, got {v}")))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("confidence must lie in [0, 1], got {0}")]
pub struct InvalidConfidence(pub f64);

/// A probability-like value in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Confidence(f64);

impl Confidence {
    pub fn new(v: f64) -> Result<Self, InvalidConfidence> {
        if (0.0..=1.0).contains(&v) {
            Ok(Self(v))
        } else {
            Err(InvalidConfidence(v))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Confidence {
    type Error = InvalidConfidence;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        Confidence::new(v)
    }
}

impl From<Confidence> for f64 {
    fn from(c: Confidence) -> f64 {
        c.0
    }
}

/// Classifier decision threshold on the smoker-class score. A score equal
/// to the threshold is classified as smoker.
pub const SMOKER_THRESHOLD: f64 = 0.5;

/// Classifier output: the smoker-class score and the label it implies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Classification {
    label: ClassLabel,
    score: Confidence,
}

impl Classification {
    pub fn from_score(score: Confidence) -> Self {
        let label = if score.value() >= SMOKER_THRESHOLD {
            ClassLabel::Smoker
        } else {
            ClassLabel::NonSmoker
        };
        Self { label, score }
    }

    pub fn label(&self) -> ClassLabel {
        self.label
    }

    pub fn score(&self) -> Confidence {
        self.score
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tie_goes_to_smoker() {
        let c = |v| Classification::from_score(Confidence::new(v).unwrap()).label();
        assert_eq!(c(0.5), ClassLabel::Smoker);
        assert_eq!(c(0.4999999), ClassLabel::NonSmoker);
        assert_eq!(c(1.0), ClassLabel::Smoker);
        assert_eq!(c(0.0), ClassLabel::NonSmoker);
    }

    #[test]
    fn label_serializes_as_integer() {
        assert_eq!(serde_json::to_string(&ClassLabel::Smoker).unwrap(), "1");
        assert_eq!(
            serde_json::from_str::<ClassLabel>("0").unwrap(),
            ClassLabel::NonSmoker
        );
        assert!(serde_json::from_str::<ClassLabel>("2").is_err());
        assert!(ClassLabel::Smoker > ClassLabel::NonSmoker);
    }

    #[test]
    fn confidence_bounds() {
        assert!(Confidence::new(-0.01).is_err());
        assert!(Confidence::new(1.01).is_err());
        assert!(Confidence::new(f64::NAN).is_err());
        assert!(serde_json::from_str::<Confidence>("1.5").is_err());
    }
}
