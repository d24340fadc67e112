use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{DatasetError, Result};

/// The 26 affect categories, spelled as in the category mapping table.
pub const EMOTIC_LABELS: [&str; 26] = [
    "Disapproval",
    "Aversion",
    "Annoyance",
    "Anger",
    "Suffering",
    "Sadness",
    "Fatigue",
    "Pain",
    "Fear",
    "Disquitement",
    "Peace",
    "Affection",
    "Sympathy",
    "Happiness",
    "Pleasure",
    "Excitement",
    "Anticipation",
    "Surprising",
    "Confuse/Doubt",
    "Confidence",
    "Disconnection",
    "Engagement",
    "Sensitive",
    "Embarrassment",
    "Esteem",
    "Yearning",
];

/// Dataset spellings that differ from the table.
const LABEL_ALIASES: [(&str, &str); 4] = [
    ("Disquietment", "Disquitement"),
    ("Doubt/Confusion", "Confuse/Doubt"),
    ("Surprise", "Surprising"),
    ("Sensitivity", "Sensitive"),
];

/// Valid numeric affect levels.
pub const LEVELS: std::ops::RangeInclusive<usize> = 1..=10;

/// Coarse seen classes: (name, fine labels).
const SEEN_COARSE: [(&str, &[&str]); 6] = [
    ("Angry", &["Disapproval", "Aversion", "Annoyance", "Anger"]),
    ("Sadness", &["Suffering", "Sadness", "Fatigue", "Pain"]),
    ("Fear", &["Fear", "Disquitement"]),
    ("Love", &["Peace", "Affection", "Sympathy"]),
    (
        "Joy",
        &["Happiness", "Pleasure", "Excitement", "Anticipation"],
    ),
    ("Surprising", &["Surprising", "Confuse/Doubt", "Confidence"]),
];

const NOVEL_FINE: [&str; 6] = [
    "Disconnection",
    "Engagement",
    "Sensitive",
    "Embarrassment",
    "Esteem",
    "Yearning",
];

/// Built-in benchmark protocols.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Protocol {
    Cat6x6,
    Cat6x4,
    Lev7x3,
    Lev6x4,
}

impl Protocol {
    pub const ALL: [Protocol; 4] = [
        Protocol::Cat6x6,
        Protocol::Cat6x4,
        Protocol::Lev7x3,
        Protocol::Lev6x4,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Cat6x6 => "CAT-6:6",
            Protocol::Cat6x4 => "CAT-6:4",
            Protocol::Lev7x3 => "LEV-7:3",
            Protocol::Lev6x4 => "LEV-6:4",
        }
    }

    /// Learning rate tuned per split; only LEV-6:4 departs from 3.5e-4.
    pub fn learning_rate(self) -> f64 {
        match self {
            Protocol::Lev6x4 => 3.5e-6,
            _ => 3.5e-4,
        }
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = DatasetError;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| DatasetError::UnknownSplit(s.to_string()))
    }
}

/// A seen/novel class partition plus the label → class mapping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub name: String,
    pub label2index: BTreeMap<String, usize>,
    pub seen_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub support_seed: u64,
    #[serde(default)]
    pub class_names: BTreeMap<usize, String>,
    /// Set for level splits: each record yields one task per affect dimension.
    #[serde(default)]
    pub levels: bool,
}

impl SplitSpec {
    /// Builds and validates a custom categorical split.
    pub fn custom(
        name: impl Into<String>,
        label2index: BTreeMap<String, usize>,
        seen_classes: Vec<usize>,
        novel_classes: Vec<usize>,
        support_seed: u64,
    ) -> Result<Self> {
        let spec = Self {
            name: name.into(),
            label2index,
            seen_classes,
            novel_classes,
            support_seed,
            class_names: BTreeMap::new(),
            levels: false,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.support_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let seen: BTreeSet<_> = self.seen_classes.iter().collect();
        let novel: BTreeSet<_> = self.novel_classes.iter().collect();
        if seen.len() != self.seen_classes.len() || novel.len() != self.novel_classes.len() {
            return Err(DatasetError::InvalidSplit(
                "duplicate class in seen or novel list".into(),
            ));
        }
        if let Some(c) = seen.intersection(&novel).next() {
            return Err(DatasetError::InvalidSplit(format!(
                "class {c} is both seen and novel"
            )));
        }
        if self.seen_classes.is_empty() || self.novel_classes.is_empty() {
            return Err(DatasetError::InvalidSplit(
                "seen and novel sets must be non-empty".into(),
            ));
        }
        if let Some((label, c)) = self
            .label2index
            .iter()
            .find(|(_, c)| !seen.contains(c) && !novel.contains(c))
        {
            return Err(DatasetError::InvalidSplit(format!(
                "label {label:?} maps to class {c}, which is neither seen nor novel"
            )));
        }
        Ok(())
    }

    pub fn protocol(&self) -> Option<Protocol> {
        self.name.parse().ok()
    }

    /// Width of the count vector used by [`encode_label`].
    pub fn class_count(&self) -> usize {
        self.seen_classes
            .iter()
            .chain(&self.novel_classes)
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(&class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    pub fn is_seen(&self, class: usize) -> bool {
        self.seen_classes.contains(&class)
    }

    pub fn is_novel(&self, class: usize) -> bool {
        self.novel_classes.contains(&class)
    }

    fn lookup(&self, label: &str) -> Option<usize> {
        self.label2index.get(label).copied().or_else(|| {
            LABEL_ALIASES
                .iter()
                .find(|(alias, _)| *alias == label)
                .and_then(|(_, canonical)| self.label2index.get(*canonical).copied())
        })
    }
}

pub fn build_split(name: &str) -> Result<SplitSpec> {
    let protocol: Protocol = name.parse()?;
    Ok(match protocol {
        Protocol::Cat6x6 | Protocol::Cat6x4 => categorical(protocol),
        Protocol::Lev7x3 => levels(protocol, &[1, 3, 5, 6, 8, 9, 10]),
        Protocol::Lev6x4 => levels(protocol, &[1, 3, 5, 6, 8, 9]),
    })
}

fn categorical(protocol: Protocol) -> SplitSpec {
    let mut label2index = BTreeMap::new();
    let mut class_names = BTreeMap::new();
    for (class, (coarse, fine)) in SEEN_COARSE.iter().enumerate() {
        class_names.insert(class, coarse.to_string());
        for label in *fine {
            label2index.insert(label.to_string(), class);
        }
    }
    let sadness = 1;
    let mut novel_classes = Vec::new();
    for (i, label) in NOVEL_FINE.iter().enumerate() {
        let class = SEEN_COARSE.len() + i;
        let folded =
            protocol == Protocol::Cat6x4 && matches!(*label, "Sensitive" | "Embarrassment");
        if folded {
            label2index.insert(label.to_string(), sadness);
        } else {
            label2index.insert(label.to_string(), class);
            class_names.insert(class, label.to_string());
            novel_classes.push(class);
        }
    }
    SplitSpec {
        name: protocol.name().into(),
        label2index,
        seen_classes: (0..SEEN_COARSE.len()).collect(),
        novel_classes,
        support_seed: 0,
        class_names,
        levels: false,
    }
}

fn levels(protocol: Protocol, seen: &[usize]) -> SplitSpec {
    let label2index = LEVELS.map(|l| (l.to_string(), l)).collect();
    let class_names = LEVELS.map(|l| (l, l.to_string())).collect();
    SplitSpec {
        name: protocol.name().into(),
        label2index,
        seen_classes: seen.to_vec(),
        novel_classes: LEVELS.filter(|l| !seen.contains(l)).collect(),
        support_seed: 0,
        class_names,
        levels: true,
    }
}

/// Maps a multi-label annotation to one class: count labels per class, take
/// the argmax, and break ties toward the lowest class index.
pub fn encode_label<S: AsRef<str>>(labels: &[S], spec: &SplitSpec) -> Result<usize> {
    let mut counts = vec![0usize; spec.class_count()];
    for label in labels {
        let label = label.as_ref();
        let class = spec
            .lookup(label)
            .ok_or_else(|| DatasetError::UnknownLabel(label.to_string()))?;
        counts[class] += 1;
    }
    let mut best: Option<usize> = None;
    for (class, &n) in counts.iter().enumerate() {
        if n > 0 && best.is_none_or(|b| n > counts[b]) {
            best = Some(class);
        }
    }
    best.ok_or_else(|| DatasetError::UnknownLabel(String::new()))
}
