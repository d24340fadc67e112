use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{encode_label, DatasetError, Dimension, FeatureRecord, Result, SplitSpec};
use crate::rng::{self, streams};

/// What a record's class is read from: its label list, or one affect dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Target {
    Categorical,
    Level(Dimension),
}

impl Target {
    pub fn for_split(spec: &SplitSpec) -> Vec<Target> {
        if spec.levels {
            Dimension::ALL.into_iter().map(Target::Level).collect()
        } else {
            vec![Target::Categorical]
        }
    }

    pub fn class_of(self, record: &FeatureRecord, spec: &SplitSpec) -> Result<usize> {
        match self {
            Target::Categorical => {
                if record.labels.is_empty() {
                    return Err(DatasetError::EmptyLabels(record.id.clone()));
                }
                encode_label(&record.labels, spec)
            }
            Target::Level(dim) => {
                let level = record.level(dim)?.to_string();
                encode_label(&[level], spec)
            }
        }
    }
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Target::Categorical => f.write_str("categorical"),
            Target::Level(d) => write!(f, "{d}"),
        }
    }
}

impl FromStr for Target {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if s == "categorical" {
            Ok(Target::Categorical)
        } else {
            s.parse().map(Target::Level)
        }
    }
}

impl TryFrom<String> for Target {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Target> for String {
    fn from(t: Target) -> String {
        t.to_string()
    }
}

/// A record position in the backing slice and its encoded class.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TaskItem {
    pub index: usize,
    pub class: usize,
}

/// Training set, one support record per novel class, and the query set.
#[derive(Clone, Debug, PartialEq)]
pub struct OneShotTask {
    pub split: String,
    pub target: Target,
    pub seen_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub train: Vec<TaskItem>,
    /// Ordered like `novel_classes`.
    pub support: Vec<TaskItem>,
    pub query: Vec<TaskItem>,
}

/// Partitions `records` for one target of `spec`.
///
/// Novel-class records are shuffled with the split's support seed and the
/// first record of each novel class becomes its support example. The query
/// set keeps the remaining novel records in input order.
pub fn assemble_task(
    records: &[FeatureRecord],
    spec: &SplitSpec,
    target: Target,
) -> Result<OneShotTask> {
    spec.validate()?;
    let mut train = Vec::new();
    let mut novel = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let class = target.class_of(record, spec)?;
        let item = TaskItem { index, class };
        if spec.is_seen(class) {
            train.push(item);
        } else if spec.is_novel(class) {
            novel.push(item);
        } else {
            return Err(DatasetError::InvalidSplit(format!(
                "record {:?} encodes to class {class}, outside the split",
                record.id
            )));
        }
    }

    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for item in train.iter().chain(&novel) {
        *counts.entry(item.class).or_default() += 1;
    }
    for (classes, needed) in [(&spec.seen_classes, 1), (&spec.novel_classes, 2)] {
        for &c in classes {
            let found = counts.get(&c).copied().unwrap_or(0);
            if found < needed {
                return Err(DatasetError::InsufficientData {
                    class: spec.class_name(c),
                    found,
                    needed,
                });
            }
        }
    }

    let mut shuffled = novel.clone();
    shuffled.shuffle(&mut rng::stream(spec.support_seed, streams::SUPPORT));
    let support: Vec<TaskItem> = spec
        .novel_classes
        .iter()
        .map(|&c| {
            *shuffled
                .iter()
                .find(|it| it.class == c)
                .expect("count checked above")
        })
        .collect();
    let query = novel
        .into_iter()
        .filter(|it| !support.iter().any(|s| s.index == it.index))
        .collect();

    Ok(OneShotTask {
        split: spec.name.clone(),
        target,
        seen_classes: spec.seen_classes.clone(),
        novel_classes: spec.novel_classes.clone(),
        train,
        support,
        query,
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub id: String,
    pub class: usize,
}

/// Serializable form of one [`OneShotTask`], keyed by record id.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskManifest {
    pub target: Target,
    pub seen_classes: Vec<usize>,
    pub novel_classes: Vec<usize>,
    pub train: Vec<ManifestEntry>,
    pub support: Vec<ManifestEntry>,
    pub query: Vec<ManifestEntry>,
}

/// All tasks of one split: a single categorical task, or one per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub split: SplitSpec,
    pub tasks: Vec<TaskManifest>,
}

impl Manifest {
    pub fn build(records: &[FeatureRecord], spec: &SplitSpec) -> Result<Self> {
        let tasks = Target::for_split(spec)
            .into_iter()
            .map(|t| {
                assemble_task(records, spec, t).map(|task| TaskManifest::from_task(&task, records))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            split: spec.clone(),
            tasks,
        })
    }

    /// Maps ids back onto `records`, checking each stored class against the
    /// record's encoded class.
    pub fn resolve(&self, records: &[FeatureRecord]) -> Result<Vec<OneShotTask>> {
        let by_id: HashMap<&str, usize> = records
            .iter()
            .enumerate()
            .map(|(i, r)| (r.id.as_str(), i))
            .collect();
        self.tasks
            .iter()
            .map(|t| {
                let items = |entries: &[ManifestEntry]| -> Result<Vec<TaskItem>> {
                    entries
                        .iter()
                        .map(|e| {
                            let &index = by_id
                                .get(e.id.as_str())
                                .ok_or_else(|| DatasetError::UnknownRecord(e.id.clone()))?;
                            let encoded = t.target.class_of(&records[index], &self.split)?;
                            if encoded != e.class {
                                return Err(DatasetError::ManifestClass {
                                    id: e.id.clone(),
                                    manifest: e.class,
                                    encoded,
                                });
                            }
                            Ok(TaskItem {
                                index,
                                class: e.class,
                            })
                        })
                        .collect()
                };
                Ok(OneShotTask {
                    split: self.split.name.clone(),
                    target: t.target,
                    seen_classes: t.seen_classes.clone(),
                    novel_classes: t.novel_classes.clone(),
                    train: items(&t.train)?,
                    support: items(&t.support)?,
                    query: items(&t.query)?,
                })
            })
            .collect()
    }
}

impl TaskManifest {
    pub fn from_task(task: &OneShotTask, records: &[FeatureRecord]) -> Self {
        let entries = |items: &[TaskItem]| {
            items
                .iter()
                .map(|it| ManifestEntry {
                    id: records[it.index].id.clone(),
                    class: it.class,
                })
                .collect()
        };
        Self {
            target: task.target,
            seen_classes: task.seen_classes.clone(),
            novel_classes: task.novel_classes.clone(),
            train: entries(&task.train),
            support: entries(&task.support),
            query: entries(&task.query),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::build_split;
    use std::collections::BTreeSet;

    fn rec(id: usize, label: &str) -> FeatureRecord {
        FeatureRecord {
            id: format!("r{id}"),
            labels: vec![label.into()],
            img_feat: vec![],
            body_feat: vec![],
            segmap_path: None,
            numeric_levels: Some([(id % 10 + 1) as u8, 1, 1]),
        }
    }

    fn small_split() -> SplitSpec {
        let map = [("a", 0), ("b", 1), ("c", 2), ("d", 3)]
            .map(|(l, c)| (l.to_string(), c))
            .into();
        SplitSpec::custom("small", map, vec![0, 1], vec![2, 3], 5).unwrap()
    }

    fn small_records() -> Vec<FeatureRecord> {
        let mut out = Vec::new();
        for (i, l) in ["a", "b", "c", "d"].iter().enumerate() {
            for j in 0..3 {
                out.push(rec(i * 3 + j, l));
            }
        }
        out
    }

    #[test]
    fn counts_and_partition() {
        let records = small_records();
        let task = assemble_task(&records, &small_split(), Target::Categorical).unwrap();
        assert_eq!(task.support.len(), 2);
        assert_eq!(task.query.len(), 4);
        assert_eq!(task.train.len(), 6);
        assert_eq!(
            task.support.iter().map(|s| s.class).collect::<Vec<_>>(),
            vec![2, 3]
        );
        assert!(task
            .query
            .iter()
            .all(|q| task.novel_classes.contains(&q.class)));
        let again = assemble_task(&records, &small_split(), Target::Categorical).unwrap();
        assert_eq!(task, again);
    }

    #[test]
    fn union_is_seed_invariant() {
        let records = small_records();
        let mut supports = BTreeSet::new();
        let mut reference: Option<BTreeSet<usize>> = None;
        for seed in 0..20 {
            let task = assemble_task(
                &records,
                &small_split().with_seed(seed),
                Target::Categorical,
            )
            .unwrap();
            let union: BTreeSet<usize> = task
                .support
                .iter()
                .chain(&task.query)
                .map(|i| i.index)
                .collect();
            assert_eq!(union.len(), task.support.len() + task.query.len());
            match &reference {
                Some(r) => assert_eq!(&union, r),
                None => reference = Some(union),
            }
            supports.insert(task.support.iter().map(|s| s.index).collect::<Vec<_>>());
        }
        assert!(supports.len() > 1, "20 seeds never moved the support set");
    }

    #[test]
    fn insufficient_novel_records() {
        let mut records = small_records();
        records.retain(|r| r.id != "r9" && r.id != "r10");
        match assemble_task(&records, &small_split(), Target::Categorical) {
            Err(DatasetError::InsufficientData {
                found: 1,
                needed: 2,
                ..
            }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn level_tasks_use_dimension() {
        let records: Vec<_> = (0..40).map(|i| rec(i, "Anger")).collect();
        let spec = build_split("LEV-7:3").unwrap();
        let task = assemble_task(&records, &spec, Target::Level(Dimension::Valence)).unwrap();
        assert_eq!(task.support.len(), 3);
        assert_eq!(task.query.len(), 12 - 3);
        // arousal is constant 1, a seen level, so novel classes are empty
        assert!(matches!(
            assemble_task(&records, &spec, Target::Level(Dimension::Arousal)),
            Err(DatasetError::InsufficientData { .. })
        ));
    }

    #[test]
    fn manifest_roundtrip_and_checks() {
        let records = small_records();
        let manifest = Manifest::build(&records, &small_split()).unwrap();
        let json = serde_json::to_string(&manifest).unwrap();
        assert!(json.contains("\"target\":\"categorical\""));
        let back: Manifest = serde_json::from_str(&json).unwrap();
        let tasks = back.resolve(&records).unwrap();
        assert_eq!(
            tasks[0],
            assemble_task(&records, &small_split(), Target::Categorical).unwrap()
        );

        let mut bad = manifest.clone();
        bad.tasks[0].query[0].class = 0;
        assert!(matches!(
            bad.resolve(&records),
            Err(DatasetError::ManifestClass { .. })
        ));
        let mut missing = manifest;
        missing.tasks[0].query[0].id = "ghost".into();
        assert!(matches!(
            missing.resolve(&records),
            Err(DatasetError::UnknownRecord(_))
        ));
    }

    #[test]
    fn target_strings() {
        for t in [Target::Categorical, Target::Level(Dimension::Arousal)] {
            assert_eq!(t.to_string().parse::<Target>().unwrap(), t);
        }
        assert!("pleasure".parse::<Target>().is_err());
    }
}
