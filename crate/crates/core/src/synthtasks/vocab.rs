//! Closed instruction vocabulary.

use crate::error::{Error, Result};

/// Instruction phrases per task family: pick, pre-place, place.
const TASK_PHRASES: [[&str; 3]; 8] = [
    ["pick up the phone", "preplace the phone above the base", "place the phone on the base"],
    ["pick up the wine by the neck", "preplace the wine above the rack", "place the wine on the rack"],
    ["pick up the toilet roll", "preplace the toilet roll near the stand", "place the toilet roll on the stand"],
    ["pick up the power charger", "preplace the charger near the power supply", "plug charger in the power supply"],
    ["pick up the knife", "preplace the knife above the knife block", "place the knife inside the knife block"],
    ["pick up the green mug", "preplace the green mug near the tree", "place the green mug on the tree"],
    ["pick up the flower", "preplace the flower above the bottle", "plug the flower inside the bottle"],
    [
        "pick up the small blue cup",
        "preplace the small blue cup near the green contrainer",
        "pour the ball into the green container",
    ],
];

/// Part-specific grasp phrases.
const GRASP_PHRASES: [&str; 3] = [
    "grasp the mug by the handle",
    "grasp the mug by its body",
    "grasp the banana by the crown",
];

/// Instruction phrases and their ids. Lookup normalizes case and
/// whitespace but never guesses: unknown text is an error.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    phrases: Vec<String>,
}

fn normalize(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl Vocabulary {
    pub fn standard() -> Self {
        let mut phrases: Vec<String> = Vec::new();
        for p in TASK_PHRASES.iter().flatten().chain(GRASP_PHRASES.iter()) {
            if !phrases.iter().any(|q| q == p) {
                phrases.push(p.to_string());
            }
        }
        Self { phrases }
    }

    pub fn from_phrases(phrases: Vec<String>) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in &phrases {
            if normalize(p) != *p || p.is_empty() {
                return Err(Error::InvalidArgument(format!("vocabulary phrase `{p}` is not normalized")));
            }
            if !seen.insert(p) {
                return Err(Error::InvalidArgument(format!("duplicate vocabulary phrase `{p}`")));
            }
        }
        Ok(Self { phrases })
    }

    pub fn len(&self) -> usize {
        self.phrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phrases.is_empty()
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn id(&self, text: &str) -> Result<usize> {
        let key = normalize(text);
        self.phrases
            .iter()
            .position(|p| *p == key)
            .ok_or_else(|| Error::UnknownInstruction(text.to_string()))
    }

    pub fn phrase(&self, id: usize) -> Result<&str> {
        self.phrases
            .get(id)
            .map(String::as_str)
            .ok_or(Error::InstructionOutOfRange { id, size: self.phrases.len() })
    }
}
