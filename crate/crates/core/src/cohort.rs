//! Case manifests, age bins, stratified splitting and training plans.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// First age (years) counted as adult.
pub const ADULT_AGE: f64 = 17.0;

/// Mixes a base seed with a stream id and an index (SplitMix64 finaliser).
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base
        ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Adult,
    Pediatric,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

/// Evaluation age strata. Ages are binned by whole years.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AgeBin {
    #[serde(rename = "0-3")]
    Y0To3,
    #[serde(rename = "4-6")]
    Y4To6,
    #[serde(rename = "7-9")]
    Y7To9,
    #[serde(rename = "10-12")]
    Y10To12,
    #[serde(rename = "13-16")]
    Y13To16,
    #[serde(rename = "17+")]
    Adult,
}

impl AgeBin {
    pub const ALL: [AgeBin; 6] = [
        AgeBin::Y0To3,
        AgeBin::Y4To6,
        AgeBin::Y7To9,
        AgeBin::Y10To12,
        AgeBin::Y13To16,
        AgeBin::Adult,
    ];

    pub const PEDIATRIC: [AgeBin; 5] = [
        AgeBin::Y0To3,
        AgeBin::Y4To6,
        AgeBin::Y7To9,
        AgeBin::Y10To12,
        AgeBin::Y13To16,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AgeBin::Y0To3 => "0-3",
            AgeBin::Y4To6 => "4-6",
            AgeBin::Y7To9 => "7-9",
            AgeBin::Y10To12 => "10-12",
            AgeBin::Y13To16 => "13-16",
            AgeBin::Adult => "17+",
        }
    }

    /// Inclusive whole-year range; the adult bin has no upper bound.
    pub fn years(self) -> (u32, Option<u32>) {
        match self {
            AgeBin::Y0To3 => (0, Some(3)),
            AgeBin::Y4To6 => (4, Some(6)),
            AgeBin::Y7To9 => (7, Some(9)),
            AgeBin::Y10To12 => (10, Some(12)),
            AgeBin::Y13To16 => (13, Some(16)),
            AgeBin::Adult => (17, None),
        }
    }

    pub fn index(self) -> usize {
        AgeBin::ALL.iter().position(|&b| b == self).unwrap()
    }

    pub fn is_pediatric(self) -> bool {
        self != AgeBin::Adult
    }
}

impl fmt::Display for AgeBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl std::str::FromStr for AgeBin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AgeBin::ALL
            .into_iter()
            .find(|b| b.label() == s)
            .ok_or_else(|| Error::Domain(format!("unknown age bin '{s}'")))
    }
}

pub fn assign_age_bin(age_years: f64) -> Result<AgeBin> {
    if !(age_years.is_finite() && age_years >= 0.0) {
        return Err(Error::Domain(format!(
            "age must be finite and non-negative, got {age_years}"
        )));
    }
    let years = age_years.floor();
    Ok(match years as u64 {
        0..=3 => AgeBin::Y0To3,
        4..=6 => AgeBin::Y4To6,
        7..=9 => AgeBin::Y7To9,
        10..=12 => AgeBin::Y10To12,
        13..=16 => AgeBin::Y13To16,
        _ => AgeBin::Adult,
    })
}

pub fn domain_for_age(age_years: f64) -> Domain {
    if age_years.floor() >= ADULT_AGE {
        Domain::Adult
    } else {
        Domain::Pediatric
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub case_id: String,
    pub age_years: f64,
    pub domain: Domain,
    pub image: String,
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split: Option<Split>,
}

impl CaseRecord {
    pub fn age_bin(&self) -> Result<AgeBin> {
        assign_age_bin(self.age_years)
    }

    fn validate(&self) -> Result<()> {
        if self.case_id.is_empty() {
            return Err(Error::Manifest("empty case_id".into()));
        }
        let bin = assign_age_bin(self.age_years)
            .map_err(|e| Error::Manifest(format!("case {}: {e}", self.case_id)))?;
        if (bin == AgeBin::Adult) != (self.domain == Domain::Adult) {
            return Err(Error::Manifest(format!(
                "case {}: domain {:?} inconsistent with age {}",
                self.case_id, self.domain, self.age_years
            )));
        }
        if self.image.is_empty() || self.label.is_empty() {
            return Err(Error::Manifest(format!(
                "case {}: image and label paths must be nonempty",
                self.case_id
            )));
        }
        Ok(())
    }

    /// Unsplit cases count as training data.
    pub fn is_train(&self) -> bool {
        matches!(self.split, None | Some(Split::Train))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub cases: Vec<CaseRecord>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Manifest {
    pub fn new(cases: Vec<CaseRecord>) -> Result<Self> {
        let m = Manifest {
            cases,
            base_dir: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for case in &self.cases {
            case.validate()?;
            if !seen.insert(case.case_id.as_str()) {
                return Err(Error::Manifest(format!(
                    "duplicate case_id {}",
                    case.case_id
                )));
            }
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Manifest = serde_json::from_str(&text)?;
        m.validate()?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, case_id: &str) -> Option<&CaseRecord> {
        self.cases.iter().find(|c| c.case_id == case_id)
    }

    pub fn index(&self) -> BTreeMap<&str, &CaseRecord> {
        self.cases.iter().map(|c| (c.case_id.as_str(), c)).collect()
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        let p = Path::new(relative);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn image_path(&self, case: &CaseRecord) -> PathBuf {
        self.resolve(&case.image)
    }

    pub fn label_path(&self, case: &CaseRecord) -> PathBuf {
        self.resolve(&case.label)
    }

    /// Sorted ids of training cases in `domain`.
    pub fn train_ids(&self, domain: Domain) -> Vec<String> {
        let mut ids: Vec<String> = self
            .cases
            .iter()
            .filter(|c| c.domain == domain && c.is_train())
            .map(|c| c.case_id.clone())
            .collect();
        ids.sort();
        ids
    }

    pub fn with_split(&self, split: Split) -> Vec<&CaseRecord> {
        self.cases
            .iter()
            .filter(|c| c.split == Some(split))
            .collect()
    }
}

/// Largest-remainder apportionment of `n` items by `fractions`.
fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let quotas = fractions.map(|f| f * n as f64);
    let mut counts = quotas.map(|q| q.floor() as usize);
    let mut left = n - counts.iter().sum::<usize>();
    let mut order = [0usize, 1, 2];
    // Stable: ties keep train, val, test order.
    order.sort_by(|&a, &b| {
        let ra = quotas[a] - quotas[a].floor();
        let rb = quotas[b] - quotas[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

/// Assigns train/val/test within each age bin so that every split keeps
/// the cohort's age distribution.
pub fn split_balanced(manifest: &Manifest, fractions: [f64; 3], seed: u64) -> Result<Manifest> {
    if manifest.cases.is_empty() {
        return Err(Error::Domain("cannot split an empty manifest".into()));
    }
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Parameter(format!(
            "split fractions must be positive, got {fractions:?}"
        )));
    }
    if (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must sum to 1, got {fractions:?}"
        )));
    }
    let mut by_bin: BTreeMap<AgeBin, Vec<usize>> = BTreeMap::new();
    for (i, case) in manifest.cases.iter().enumerate() {
        by_bin.entry(case.age_bin()?).or_default().push(i);
    }
    let mut out = manifest.clone();
    for (bin, mut members) in by_bin {
        members.sort_by(|&a, &b| manifest.cases[a].case_id.cmp(&manifest.cases[b].case_id));
        members.shuffle(&mut rng_for(seed, 0x5350_4c49, bin.index() as u64));
        let counts = apportion(members.len(), &fractions);
        let mut it = members.into_iter();
        for (split, count) in Split::ALL.into_iter().zip(counts) {
            for i in it.by_ref().take(count) {
                out.cases[i].split = Some(split);
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BaselineKind {
    AdultSeg,
    PediatricSeg,
    MixSeg,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::AdultSeg => "AdultSeg",
            BaselineKind::PediatricSeg => "PediatricSeg",
            BaselineKind::MixSeg => "MixSeg",
        }
    }
}

/// How adult cases are replayed during the second rehearsal stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RehearsalMode {
    /// Each adult case enters each epoch independently with probability p.
    #[default]
    PerEpoch,
    /// One subset of round(p * N) adult cases, reused every epoch.
    FixedSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub epochs: usize,
    pub epoch_case_lists: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingPlan {
    pub name: String,
    pub p: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub rehearsal_mode: Option<RehearsalMode>,
    pub stages: Vec<Stage>,
}

impl TrainingPlan {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    /// Checks internal consistency and that every case exists in `manifest`.
    pub fn validate(&self, manifest: &Manifest) -> Result<()> {
        let index = manifest.index();
        for (s, stage) in self.stages.iter().enumerate() {
            if stage.epochs != stage.epoch_case_lists.len() {
                return Err(Error::Parameter(format!(
                    "plan {}: stage {} declares {} epochs but lists {}",
                    self.name,
                    s + 1,
                    stage.epochs,
                    stage.epoch_case_lists.len()
                )));
            }
            for id in stage.epoch_case_lists.iter().flatten() {
                if !index.contains_key(id.as_str()) {
                    return Err(Error::Manifest(format!(
                        "plan {} references unknown case {id}",
                        self.name
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn total_epochs(&self) -> usize {
        self.stages.iter().map(|s| s.epochs).sum()
    }
}

const STAGE1_STREAM: u64 = 1;
const STAGE2_STREAM: u64 = 2;

fn shuffled_epochs(ids: &[String], epochs: usize, seed: u64, stream: u64) -> Stage {
    let mut rng = rng_for(seed, stream, 0);
    let lists = (0..epochs)
        .map(|_| {
            let mut list = ids.to_vec();
            list.shuffle(&mut rng);
            list
        })
        .collect();
    Stage {
        epochs,
        epoch_case_lists: lists,
    }
}

fn require_epochs(what: &str, epochs: usize) -> Result<()> {
    if epochs == 0 {
        return Err(Error::Parameter(format!("{what} must be positive")));
    }
    Ok(())
}

/// Single-stage plan over adult, paediatric or pooled training cases.
pub fn plan_baseline(
    kind: BaselineKind,
    manifest: &Manifest,
    epochs: usize,
    seed: u64,
) -> Result<TrainingPlan> {
    require_epochs("epochs", epochs)?;
    let adult = manifest.train_ids(Domain::Adult);
    let pediatric = manifest.train_ids(Domain::Pediatric);
    let need = |ids: &Vec<String>, what: &str| {
        if ids.is_empty() {
            Err(Error::Parameter(format!(
                "{} needs {what} training cases, manifest has none",
                kind.name()
            )))
        } else {
            Ok(())
        }
    };
    let ids = match kind {
        BaselineKind::AdultSeg => {
            need(&adult, "adult")?;
            adult
        }
        BaselineKind::PediatricSeg => {
            need(&pediatric, "paediatric")?;
            pediatric
        }
        BaselineKind::MixSeg => {
            need(&adult, "adult")?;
            need(&pediatric, "paediatric")?;
            let mut all = adult;
            all.extend(pediatric);
            all.sort();
            all
        }
    };
    Ok(TrainingPlan {
        name: kind.name().to_string(),
        p: None,
        seed,
        rehearsal_mode: None,
        stages: vec![shuffled_epochs(&ids, epochs, seed, STAGE1_STREAM)],
    })
}

/// Display name of a rehearsal plan; p = 0 is plain sequential fine-tuning.
pub fn rehearsal_name(p: f64) -> String {
    if p == 0.0 {
        "Sequential".to_string()
    } else {
        format!("CL(p={p:?})")
    }
}

/// Two-stage plan: adult-only training, then every paediatric training case
/// plus adult cases replayed with probability `p`.
pub fn plan_rehearsal(
    manifest: &Manifest,
    p: f64,
    stage1_epochs: usize,
    stage2_epochs: usize,
    seed: u64,
    mode: RehearsalMode,
) -> Result<TrainingPlan> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Parameter(format!(
            "rehearsal probability must lie in [0, 1], got {p}"
        )));
    }
    require_epochs("stage-1 epochs", stage1_epochs)?;
    require_epochs("stage-2 epochs", stage2_epochs)?;
    let adult = manifest.train_ids(Domain::Adult);
    let pediatric = manifest.train_ids(Domain::Pediatric);
    if adult.is_empty() || pediatric.is_empty() {
        return Err(Error::Parameter(
            "rehearsal needs both adult and paediatric training cases".into(),
        ));
    }

    let stage1 = shuffled_epochs(&adult, stage1_epochs, seed, STAGE1_STREAM);

    let mut rng = rng_for(seed, STAGE2_STREAM, 0);
    let fixed: Option<Vec<String>> = match mode {
        RehearsalMode::PerEpoch => None,
        RehearsalMode::FixedSubset => {
            let k = (p * adult.len() as f64).round() as usize;
            let mut pool = adult.clone();
            pool.shuffle(&mut rng);
            pool.truncate(k);
            Some(pool)
        }
    };
    let lists = (0..stage2_epochs)
        .map(|_| {
            let mut list = pediatric.clone();
            match &fixed {
                Some(subset) => list.extend(subset.iter().cloned()),
                None => list.extend(adult.iter().filter(|_| rng.random_bool(p)).cloned()),
            }
            list.shuffle(&mut rng);
            list
        })
        .collect();

    Ok(TrainingPlan {
        name: rehearsal_name(p),
        p: Some(p),
        seed,
        rehearsal_mode: Some(mode),
        stages: vec![
            stage1,
            Stage {
                epochs: stage2_epochs,
                epoch_case_lists: lists,
            },
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn case(id: &str, age: f64) -> CaseRecord {
        CaseRecord {
            case_id: id.to_string(),
            age_years: age,
            domain: domain_for_age(age),
            image: format!("images/{id}.nii.gz"),
            label: format!("labels/{id}.nii.gz"),
            split: None,
        }
    }

    #[test]
    fn bins_as_written() {
        assert_eq!(assign_age_bin(3.0).unwrap(), AgeBin::Y0To3);
        assert_eq!(assign_age_bin(3.99).unwrap(), AgeBin::Y0To3);
        assert_eq!(assign_age_bin(4.0).unwrap(), AgeBin::Y4To6);
        assert_eq!(assign_age_bin(16.9).unwrap(), AgeBin::Y13To16);
        assert_eq!(assign_age_bin(17.0).unwrap(), AgeBin::Adult);
        assert_eq!(assign_age_bin(0.0).unwrap(), AgeBin::Y0To3);
        assert_eq!(assign_age_bin(85.0).unwrap(), AgeBin::Adult);
        assert!(matches!(assign_age_bin(-0.1), Err(Error::Domain(_))));
        assert!(assign_age_bin(f64::NAN).is_err());
    }

    #[test]
    fn bin_labels_round_trip() {
        for b in AgeBin::ALL {
            assert_eq!(b.label().parse::<AgeBin>().unwrap(), b);
            let json = serde_json::to_string(&b).unwrap();
            assert_eq!(json, format!("\"{}\"", b.label()));
        }
    }

    #[test]
    fn manifest_validation() {
        assert!(Manifest::new(vec![case("a", 5.0), case("a", 6.0)]).is_err());
        let mut bad = case("b", 30.0);
        bad.domain = Domain::Pediatric;
        assert!(Manifest::new(vec![bad]).is_err());
        let mut bad = case("c", 3.0);
        bad.image.clear();
        assert!(Manifest::new(vec![bad]).is_err());
    }

    #[test]
    fn manifest_json_schema() {
        let mut c = case("p001", 2.5);
        c.split = Some(Split::Test);
        let m = Manifest::new(vec![c]).unwrap();
        let v: serde_json::Value = serde_json::from_str(&m.to_json().unwrap()).unwrap();
        let c = &v["cases"][0];
        assert_eq!(c["case_id"], "p001");
        assert_eq!(c["age_years"], 2.5);
        assert_eq!(c["domain"], "pediatric");
        assert_eq!(c["image"], "images/p001.nii.gz");
        assert_eq!(c["label"], "labels/p001.nii.gz");
        assert_eq!(c["split"], "test");
    }

    fn sixty() -> Manifest {
        let ages = [1.0, 5.0, 8.0, 11.0, 14.0, 40.0];
        let cases = (0..60)
            .map(|i| case(&format!("c{i:02}"), ages[i % 6] + (i / 6) as f64 * 0.01))
            .collect();
        Manifest::new(cases).unwrap()
    }

    #[test]
    fn split_exact_division() {
        let m = split_balanced(&sixty(), [0.8, 0.1, 0.1], 3).unwrap();
        for bin in AgeBin::ALL {
            let mut counts = [0; 3];
            for c in m.cases.iter().filter(|c| c.age_bin().unwrap() == bin) {
                counts[c.split.unwrap() as usize] += 1;
            }
            assert_eq!(counts, [8, 1, 1], "bin {bin}");
        }
        assert_eq!(m, split_balanced(&sixty(), [0.8, 0.1, 0.1], 3).unwrap());
    }

    #[test]
    fn split_errors() {
        assert!(matches!(
            split_balanced(&Manifest::default(), [0.8, 0.1, 0.1], 0),
            Err(Error::Domain(_))
        ));
        assert!(split_balanced(&sixty(), [0.8, 0.1, 0.2], 0).is_err());
        assert!(split_balanced(&sixty(), [1.0, 0.0, 0.0], 0).is_err());
    }

    #[test]
    fn apportion_largest_remainder() {
        assert_eq!(apportion(7, &[0.6, 0.2, 0.2]), [4, 2, 1]);
        assert_eq!(apportion(1, &[0.8, 0.1, 0.1]), [1, 0, 0]);
        assert_eq!(apportion(10, &[0.8, 0.1, 0.1]), [8, 1, 1]);
    }

    #[test]
    fn baseline_plans() {
        let m = sixty();
        let mix = plan_baseline(BaselineKind::MixSeg, &m, 3, 1).unwrap();
        assert_eq!(mix.stages.len(), 1);
        for list in &mix.stages[0].epoch_case_lists {
            assert_eq!(list.len(), 60);
        }
        let adult = plan_baseline(BaselineKind::AdultSeg, &m, 2, 1).unwrap();
        let idx = m.index();
        assert!(adult.stages[0]
            .epoch_case_lists
            .iter()
            .flatten()
            .all(|id| idx[id.as_str()].domain == Domain::Adult));

        let a = plan_baseline(BaselineKind::PediatricSeg, &m, 1, 1).unwrap();
        let b = plan_baseline(BaselineKind::PediatricSeg, &m, 1, 2).unwrap();
        let (la, lb) = (
            &a.stages[0].epoch_case_lists[0],
            &b.stages[0].epoch_case_lists[0],
        );
        assert_ne!(la, lb);
        let sa: BTreeSet<_> = la.iter().collect();
        let sb: BTreeSet<_> = lb.iter().collect();
        assert_eq!(sa, sb);

        let kids = Manifest::new(vec![case("k", 3.0)]).unwrap();
        assert!(matches!(
            plan_baseline(BaselineKind::AdultSeg, &kids, 1, 0),
            Err(Error::Parameter(_))
        ));
        assert!(plan_baseline(BaselineKind::PediatricSeg, &kids, 0, 0).is_err());
    }

    #[test]
    fn rehearsal_extremes() {
        let m = sixty();
        let peds: BTreeSet<String> = m.train_ids(Domain::Pediatric).into_iter().collect();
        let seq = plan_rehearsal(&m, 0.0, 2, 4, 9, RehearsalMode::PerEpoch).unwrap();
        assert_eq!(seq.name, "Sequential");
        for list in &seq.stages[1].epoch_case_lists {
            let set: BTreeSet<String> = list.iter().cloned().collect();
            assert_eq!(set, peds);
        }
        let full = plan_rehearsal(&m, 1.0, 2, 4, 9, RehearsalMode::PerEpoch).unwrap();
        assert_eq!(full.name, "CL(p=1.0)");
        for list in &full.stages[1].epoch_case_lists {
            assert_eq!(list.len(), 60);
        }
        // Stage 1 of every rehearsal plan is the AdultSeg plan with the same seed.
        let adult = plan_baseline(BaselineKind::AdultSeg, &m, 2, 9).unwrap();
        assert_eq!(seq.stages[0], adult.stages[0]);
        assert!(matches!(
            plan_rehearsal(&m, 1.5, 1, 1, 0, RehearsalMode::PerEpoch),
            Err(Error::Parameter(_))
        ));
        assert!(plan_rehearsal(&m, -0.1, 1, 1, 0, RehearsalMode::PerEpoch).is_err());
    }

    #[test]
    fn fixed_subset_reuses_adults() {
        let m = sixty();
        let plan = plan_rehearsal(&m, 0.3, 1, 5, 4, RehearsalMode::FixedSubset).unwrap();
        let idx = m.index();
        let adults = |l: &Vec<String>| -> BTreeSet<String> {
            l.iter()
                .filter(|id| idx[id.as_str()].domain == Domain::Adult)
                .cloned()
                .collect()
        };
        let first = adults(&plan.stages[1].epoch_case_lists[0]);
        assert_eq!(first.len(), 3);
        for list in &plan.stages[1].epoch_case_lists {
            assert_eq!(adults(list), first);
        }
    }

    #[test]
    fn plan_validation() {
        let m = sixty();
        let mut plan = plan_baseline(BaselineKind::MixSeg, &m, 2, 0).unwrap();
        plan.validate(&m).unwrap();
        plan.stages[0].epoch_case_lists[0].push("ghost".into());
        assert!(matches!(plan.validate(&m), Err(Error::Manifest(_))));
        plan.stages[0].epochs = 3;
        assert!(matches!(plan.validate(&m), Err(Error::Parameter(_))));
    }

    #[test]
    fn derived_seeds_differ() {
        let a = derive_seed(7, 0, 0);
        assert_ne!(a, derive_seed(7, 0, 1));
        assert_ne!(a, derive_seed(7, 1, 0));
        assert_ne!(a, derive_seed(8, 0, 0));
        assert_eq!(a, derive_seed(7, 0, 0));
    }
}
