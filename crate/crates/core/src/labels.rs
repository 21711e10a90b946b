//! Diagnostic classes, subtypes and class-probability vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Normal,
    Pneumonia,
    Covid,
}

impl Class {
    pub const ALL: [Class; 3] = [Class::Normal, Class::Pneumonia, Class::Covid];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Class> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Class::Normal => "normal",
            Class::Pneumonia => "pneumonia",
            Class::Covid => "covid",
        }
    }

    /// Prefix letter used in subtype labels.
    pub fn letter(self) -> char {
        match self {
            Class::Normal => 'N',
            Class::Pneumonia => 'P',
            Class::Covid => 'C',
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown label {0:?}")]
pub struct LabelParseError(pub String);

impl FromStr for Class {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" => Ok(Class::Normal),
            "pneumonia" => Ok(Class::Pneumonia),
            "covid" | "covid-19" | "covid19" => Ok(Class::Covid),
            _ => Err(LabelParseError(s.to_string())),
        }
    }
}

/// One of the three mixture components of a class, e.g. `C2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Subtype {
    pub class: Class,
    /// Zero-based component index; displayed one-based.
    pub component: u8,
}

impl Subtype {
    pub fn new(class: Class, component: usize) -> Self {
        assert!(component < 3, "subtype component out of range");
        Self {
            class,
            component: component as u8,
        }
    }

    pub fn all() -> impl Iterator<Item = Subtype> {
        Class::ALL
            .into_iter()
            .flat_map(|c| (0..3).map(move |k| Subtype::new(c, k)))
    }
}

impl fmt::Display for Subtype {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.class.letter(), self.component + 1)
    }
}

impl FromStr for Subtype {
    type Err = LabelParseError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || LabelParseError(s.to_string());
        let mut chars = s.trim().chars();
        let class = match chars.next().map(|c| c.to_ascii_uppercase()) {
            Some('N') => Class::Normal,
            Some('P') => Class::Pneumonia,
            Some('C') => Class::Covid,
            _ => return Err(err()),
        };
        let k: usize = chars.as_str().parse().map_err(|_| err())?;
        if !(1..=3).contains(&k) {
            return Err(err());
        }
        Ok(Subtype::new(class, k - 1))
    }
}

impl Serialize for Subtype {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Subtype {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Probabilities for (normal, pneumonia, covid).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbabilities {
    pub p_normal: f64,
    pub p_pneumonia: f64,
    pub p_covid: f64,
}

impl ClassProbabilities {
    /// Normalizes non-negative scores; all-zero input becomes uniform.
    pub fn from_scores(s: [f64; 3]) -> Self {
        let s = s.map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 });
        let total: f64 = s.iter().sum();
        let p = if total > 0.0 {
            s.map(|v| v / total)
        } else {
            [1.0 / 3.0; 3]
        };
        Self::from_array(p)
    }

    pub fn from_array(p: [f64; 3]) -> Self {
        Self {
            p_normal: p[0],
            p_pneumonia: p[1],
            p_covid: p[2],
        }
    }

    pub fn to_array(&self) -> [f64; 3] {
        [self.p_normal, self.p_pneumonia, self.p_covid]
    }

    pub fn get(&self, c: Class) -> f64 {
        self.to_array()[c.index()]
    }

    pub fn is_valid(&self) -> bool {
        let a = self.to_array();
        a.iter().all(|p| (0.0..=1.0).contains(p)) && (a.iter().sum::<f64>() - 1.0).abs() <= 1e-6
    }
}

/// Maximum-probability rule; exact ties go to the more severe class
/// (covid, then pneumonia, then normal).
pub fn decide_class(p: &ClassProbabilities) -> Class {
    let a = p.to_array();
    let mut best = Class::Covid;
    for c in [Class::Pneumonia, Class::Normal] {
        if a[c.index()] > a[best.index()] {
            best = c;
        }
    }
    best
}
