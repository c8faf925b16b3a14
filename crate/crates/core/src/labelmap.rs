//! Many-to-one label remapping onto the 19 shared organ classes.
//!
//! Labels are exclusive per voxel, so merging several source labels into
//! one target never needs a tie-break.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::LabelVolume;

/// Number of foreground classes shared by both cohorts.
pub const NUM_CLASSES: u16 = 19;

/// Editable default taxonomy: identity over `0..=19` with organ names.
pub const DEFAULT_MAPPING_CSV: &str = include_str!("../assets/classes.csv");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnmappedPolicy {
    /// Unknown source labels become background and are counted.
    ToBackground,
    #[default]
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMapping {
    entries: BTreeMap<u16, u16>,
    target_names: Vec<String>,
    unmapped_policy: UnmappedPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RemapStats {
    /// Voxels whose label had no mapping entry.
    pub unmapped_voxels: usize,
}

impl ClassMapping {
    pub fn new(entries: impl IntoIterator<Item = (u16, u16)>) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (source, target) in entries {
            if target > NUM_CLASSES {
                return Err(Error::Range(format!(
                    "target {target} for source {source} is outside [0, {NUM_CLASSES}]"
                )));
            }
            if map.insert(source, target).is_some() {
                return Err(Error::Mapping(format!("duplicate source label {source}")));
            }
        }
        // Background maps to background unless stated otherwise.
        map.entry(0).or_insert(0);
        Ok(ClassMapping {
            entries: map,
            target_names: default_names(),
            unmapped_policy: UnmappedPolicy::default(),
        })
    }

    pub fn identity() -> Self {
        Self::new((0..=NUM_CLASSES).map(|i| (i, i))).expect("identity mapping is valid")
    }

    /// The shipped default taxonomy, with names.
    pub fn default_taxonomy() -> Self {
        Self::parse(DEFAULT_MAPPING_CSV).expect("bundled mapping is valid")
    }

    pub fn with_policy(mut self, policy: UnmappedPolicy) -> Self {
        self.unmapped_policy = policy;
        self
    }

    /// Parses `source,target,name` rows; blank lines and `#` comments are
    /// skipped. The name column is optional and names the target class.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut names: BTreeMap<u16, String> = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.splitn(3, ',').map(str::trim).collect();
            if cols.len() < 2 {
                return Err(Error::Mapping(format!(
                    "line {}: expected source,target[,name]",
                    lineno + 1
                )));
            }
            // Header rows are tolerated.
            if cols[0] == "source" {
                continue;
            }
            let source: i64 = cols[0].parse().map_err(|_| {
                Error::Mapping(format!("line {}: bad source '{}'", lineno + 1, cols[0]))
            })?;
            let target: i64 = cols[1].parse().map_err(|_| {
                Error::Mapping(format!("line {}: bad target '{}'", lineno + 1, cols[1]))
            })?;
            if !(0..=u16::MAX as i64).contains(&source) {
                return Err(Error::Range(format!(
                    "line {}: source {source} is not a valid label",
                    lineno + 1
                )));
            }
            if !(0..=NUM_CLASSES as i64).contains(&target) {
                return Err(Error::Range(format!(
                    "line {}: target {target} is outside [0, {NUM_CLASSES}]",
                    lineno + 1
                )));
            }
            entries.push((source as u16, target as u16));
            if let Some(name) = cols.get(2).filter(|n| !n.is_empty()) {
                names
                    .entry(target as u16)
                    .or_insert_with(|| name.to_string());
            }
        }
        let mut mapping = Self::new(entries)?;
        for (target, name) in names {
            mapping.target_names[target as usize] = name;
        }
        Ok(mapping)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn target(&self, source: u16) -> Option<u16> {
        self.entries.get(&source).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, u16)> + '_ {
        self.entries.iter().map(|(&s, &t)| (s, t))
    }

    pub fn policy(&self) -> UnmappedPolicy {
        self.unmapped_policy
    }

    /// Name of target class `t` (index 0 is background).
    pub fn class_name(&self, target: u16) -> &str {
        &self.target_names[target as usize]
    }

    pub fn class_names(&self) -> &[String] {
        &self.target_names
    }

    /// True when every foreground class `1..=19` has at least one source.
    pub fn is_complete(&self) -> bool {
        let hit: BTreeSet<u16> = self.entries.values().copied().collect();
        (1..=NUM_CLASSES).all(|t| hit.contains(&t))
    }
}

fn default_names() -> Vec<String> {
    std::iter::once("background".to_string())
        .chain((1..=NUM_CLASSES).map(|i| format!("class_{i}")))
        .collect()
}

/// Applies `mapping` voxel-wise; the output always has 19 classes.
pub fn remap(volume: &LabelVolume, mapping: &ClassMapping) -> Result<(LabelVolume, RemapStats)> {
    let max = volume.labels().iter().copied().max().unwrap_or(0) as usize;
    let lut: Vec<Option<u16>> = (0..=max).map(|l| mapping.target(l as u16)).collect();

    let mut stats = RemapStats::default();
    let mut missing = BTreeSet::new();
    let labels: Vec<u16> = volume
        .labels()
        .iter()
        .map(|&l| match lut[l as usize] {
            Some(t) => t,
            None => {
                stats.unmapped_voxels += 1;
                missing.insert(l);
                0
            }
        })
        .collect();

    if !missing.is_empty() && mapping.policy() == UnmappedPolicy::Error {
        return Err(Error::LabelDomain(format!(
            "labels without a mapping entry: {:?}",
            missing.into_iter().collect::<Vec<_>>()
        )));
    }
    if stats.unmapped_voxels > 0 {
        log::warn!(
            "{} voxels with unmapped labels {:?} set to background",
            stats.unmapped_voxels,
            missing
        );
    }
    Ok((
        LabelVolume::new(*volume.grid(), labels, NUM_CLASSES)?,
        stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::Grid;

    fn volume(labels: Vec<u16>) -> LabelVolume {
        let n = labels.len();
        LabelVolume::from_labels(Grid::new([n, 1, 1], [1.0; 3]).unwrap(), labels).unwrap()
    }

    #[test]
    fn merges_sources() {
        let m = ClassMapping::parse("0,0\n2,1,liver\n3,1\n").unwrap();
        assert_eq!(m.target(2), Some(1));
        assert_eq!(m.target(3), Some(1));
        assert_eq!(m.class_name(1), "liver");

        let mut labels = vec![2; 5];
        labels.extend([3; 3]);
        labels.extend([0; 4]);
        let (out, stats) = remap(&volume(labels), &m).unwrap();
        assert_eq!(out.histogram()[1], 8);
        assert_eq!(out.histogram()[0], 4);
        assert_eq!(out.num_classes(), NUM_CLASSES);
        assert_eq!(stats.unmapped_voxels, 0);
    }

    #[test]
    fn duplicate_and_range_errors() {
        assert!(matches!(
            ClassMapping::parse("2,1\n2,5\n"),
            Err(Error::Mapping(_))
        ));
        assert!(matches!(
            ClassMapping::parse("2,20\n"),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            ClassMapping::parse("2,-1\n"),
            Err(Error::Range(_))
        ));
        assert!(matches!(
            ClassMapping::parse("two,1\n"),
            Err(Error::Mapping(_))
        ));
    }

    #[test]
    fn comments_and_header() {
        let m = ClassMapping::parse("source,target,name\n# merge\n\n4,2,kidney # right\n").unwrap();
        assert_eq!(m.target(4), Some(2));
        assert_eq!(m.class_name(2), "kidney");
    }

    #[test]
    fn identity_is_identity() {
        let id = ClassMapping::identity();
        assert!(id.is_complete());
        let v = volume((0..=19).chain([5, 5, 0]).collect());
        let (out, _) = remap(&v, &id).unwrap();
        assert_eq!(out.labels(), v.labels());
    }

    #[test]
    fn bundled_default_is_named_identity() {
        let m = ClassMapping::default_taxonomy();
        assert!(m.is_complete());
        for i in 0..=NUM_CLASSES {
            assert_eq!(m.target(i), Some(i));
        }
        assert_eq!(m.class_name(0), "background");
        assert!(m
            .class_names()
            .iter()
            .skip(1)
            .all(|n| !n.starts_with("class_")));
    }

    #[test]
    fn unmapped_policy() {
        let v = volume(vec![1, 104, 104, 0]);
        let strict = ClassMapping::identity();
        match remap(&v, &strict) {
            Err(Error::LabelDomain(msg)) => assert!(msg.contains("104")),
            other => panic!("expected label-domain error, got {other:?}"),
        }
        let lenient = strict.with_policy(UnmappedPolicy::ToBackground);
        let (out, stats) = remap(&v, &lenient).unwrap();
        assert_eq!(out.labels(), &[1, 0, 0, 0]);
        assert_eq!(stats.unmapped_voxels, 2);
    }

    #[test]
    fn incomplete_mapping() {
        let m = ClassMapping::new([(0, 0), (1, 1)]).unwrap();
        assert!(!m.is_complete());
    }
}
