//! MBTI personality types.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Axis {
    EI,
    SN,
    TF,
    JP,
}

impl Axis {
    pub const ALL: [Axis; 4] = [Axis::EI, Axis::SN, Axis::TF, Axis::JP];

    /// Letters of the (first, second) pole.
    pub fn poles(self) -> (char, char) {
        match self {
            Axis::EI => ('E', 'I'),
            Axis::SN => ('S', 'N'),
            Axis::TF => ('T', 'F'),
            Axis::JP => ('J', 'P'),
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::EI => "EI",
            Axis::SN => "SN",
            Axis::TF => "TF",
            Axis::JP => "JP",
        }
    }
}

/// A personality type with per-axis probabilities of the first pole
/// (E, S, T, J). The label of an axis is its first pole iff the
/// probability is at least 0.5.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MbtiType {
    probabilities: [f64; 4],
}

impl MbtiType {
    pub fn from_probabilities(probabilities: [f64; 4]) -> Result<Self> {
        for (axis, p) in Axis::ALL.iter().zip(probabilities) {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(
                    axis.name(),
                    format!("probability {p} outside [0,1]"),
                ));
            }
        }
        Ok(Self { probabilities })
    }

    /// A hard type; `first_pole[i]` selects E/S/T/J.
    pub fn from_labels(first_pole: [bool; 4]) -> Self {
        Self {
            probabilities: first_pole.map(|b| if b { 1.0 } else { 0.0 }),
        }
    }

    pub fn probabilities(&self) -> [f64; 4] {
        self.probabilities
    }

    pub fn probability(&self, axis: Axis) -> f64 {
        self.probabilities[axis.index()]
    }

    pub fn is_first_pole(&self, axis: Axis) -> bool {
        self.probabilities[axis.index()] >= 0.5
    }

    pub fn labels(&self) -> [bool; 4] {
        Axis::ALL.map(|a| self.is_first_pole(a))
    }

    pub fn letter(&self, axis: Axis) -> char {
        let (first, second) = axis.poles();
        if self.is_first_pole(axis) {
            first
        } else {
            second
        }
    }

    pub fn code(&self) -> String {
        Axis::ALL.iter().map(|&a| self.letter(a)).collect()
    }

    /// Number of axes on which the two types disagree.
    pub fn distance(&self, other: &MbtiType) -> u32 {
        self.labels()
            .iter()
            .zip(other.labels())
            .filter(|(a, b)| **a != *b)
            .count() as u32
    }

    /// Same labels as `self`.
    pub fn hard(&self) -> Self {
        Self::from_labels(self.labels())
    }

    pub fn all_types() -> Vec<MbtiType> {
        (0..16u8)
            .map(|bits| Self::from_labels([bits & 8 == 0, bits & 4 == 0, bits & 2 == 0, bits & 1 == 0]))
            .collect()
    }
}

pub fn mbti_distance(a: &MbtiType, b: &MbtiType) -> u32 {
    a.distance(b)
}

impl fmt::Display for MbtiType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code())
    }
}

impl FromStr for MbtiType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let letters: Vec<char> = s.trim().to_ascii_uppercase().chars().collect();
        if letters.len() != 4 {
            return Err(Error::invalid("mbti", format!("expected 4 letters, got {s:?}")));
        }
        let mut first = [false; 4];
        for (i, axis) in Axis::ALL.iter().enumerate() {
            let (a, b) = axis.poles();
            first[i] = match letters[i] {
                c if c == a => true,
                c if c == b => false,
                c => {
                    return Err(Error::invalid(
                        "mbti",
                        format!("letter {c:?} is not {a} or {b} for axis {}", axis.name()),
                    ))
                }
            };
        }
        Ok(Self::from_labels(first))
    }
}

/// Serialised as the four-letter code.
impl Serialize for MbtiType {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.code())
    }
}

impl<'de> Deserialize<'de> for MbtiType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Wire form used in API payloads: code plus probability map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MbtiPayload {
    pub mbti: String,
    pub probabilities: AxisProbabilities,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct AxisProbabilities {
    pub EI: f64,
    pub SN: f64,
    pub TF: f64,
    pub JP: f64,
}

impl From<&MbtiType> for MbtiPayload {
    fn from(t: &MbtiType) -> Self {
        let [ei, sn, tf, jp] = t.probabilities();
        Self {
            mbti: t.code(),
            probabilities: AxisProbabilities {
                EI: ei,
                SN: sn,
                TF: tf,
                JP: jp,
            },
        }
    }
}

impl TryFrom<&MbtiPayload> for MbtiType {
    type Error = Error;

    fn try_from(p: &MbtiPayload) -> Result<Self> {
        let q = p.probabilities;
        let t = MbtiType::from_probabilities([q.EI, q.SN, q.TF, q.JP])?;
        if t.code() != p.mbti.to_ascii_uppercase() {
            return Err(Error::invalid(
                "mbti",
                format!("code {} disagrees with probabilities ({})", p.mbti, t.code()),
            ));
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> MbtiType {
        s.parse().unwrap()
    }

    #[test]
    fn hamming_distance() {
        assert_eq!(mbti_distance(&t("ENTJ"), &t("ENTJ")), 0);
        assert_eq!(mbti_distance(&t("ENTJ"), &t("INTJ")), 1);
        assert_eq!(mbti_distance(&t("ENTJ"), &t("ISFP")), 4);
    }

    #[test]
    fn tie_resolves_to_first_pole() {
        let m = MbtiType::from_probabilities([0.5; 4]).unwrap();
        assert_eq!(m.code(), "ESTJ");
    }

    #[test]
    fn parse_rejects_bad_letters() {
        assert!("EXTJ".parse::<MbtiType>().is_err());
        assert!("ENT".parse::<MbtiType>().is_err());
        assert_eq!(t("infp").code(), "INFP");
    }

    #[test]
    fn sixteen_distinct_types() {
        let codes: std::collections::BTreeSet<_> =
            MbtiType::all_types().iter().map(|m| m.code()).collect();
        assert_eq!(codes.len(), 16);
    }

    #[test]
    fn payload_roundtrip_checks_consistency() {
        let m = MbtiType::from_probabilities([0.9, 0.2, 0.5, 0.1]).unwrap();
        let p = MbtiPayload::from(&m);
        assert_eq!(p.mbti, "ENTP");
        assert_eq!(MbtiType::try_from(&p).unwrap(), m);
        let mut bad = p.clone();
        bad.mbti = "ISTP".into();
        assert!(MbtiType::try_from(&bad).is_err());
    }

    #[test]
    fn raising_probability_never_flips_to_second_pole() {
        let mut seen_first = false;
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            let m = MbtiType::from_probabilities([p, 0.0, 0.0, 0.0]).unwrap();
            if seen_first {
                assert_eq!(m.letter(Axis::EI), 'E');
            }
            seen_first |= m.is_first_pole(Axis::EI);
        }
        assert!(seen_first);
    }
}
