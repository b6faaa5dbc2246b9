//! Positive/negative pair construction for contrastive and matcher training.
//!
//! A pair is MATCHED when both windows come from different devices on the
//! same user with the same start time. It is UNMATCHED when the users differ
//! or the start times are at least one window apart.

use std::collections::BTreeMap;

use rand::seq::{index, IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::signal::{Activity, DevicePlacement, SensorSet, Window};

#[derive(Debug, Error, PartialEq)]
pub enum PairError {
    #[error("alignment entry has a single device")]
    SingleDevice,
    #[error("not enough pairs: needed {needed}, available {available}")]
    NotEnoughPairs { needed: usize, available: usize },
    #[error("invalid pair request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum PairLabel {
    Matched,
    Unmatched,
}

pub fn is_matched(a: &Window, b: &Window) -> bool {
    a.meta.user_id == b.meta.user_id
        && a.meta.device_id != b.meta.device_id
        && a.meta.start_ms() == b.meta.start_ms()
        && a.meta.duration == b.meta.duration
        && a.meta.sensor_set == b.meta.sensor_set
}

pub fn is_unmatched(a: &Window, b: &Window) -> bool {
    let dt = (a.meta.start_ms() - b.meta.start_ms()).abs();
    a.meta.user_id != b.meta.user_id || dt >= 1000 * a.meta.duration.max(b.meta.duration) as i64
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AlignedPair<'a> {
    pub window_a: &'a Window,
    pub window_b: &'a Window,
    pub label: PairLabel,
}

impl AlignedPair<'_> {
    /// Whether the label agrees with the pair predicates.
    pub fn is_consistent(&self) -> bool {
        match self.label {
            PairLabel::Matched => is_matched(self.window_a, self.window_b),
            PairLabel::Unmatched => is_unmatched(self.window_a, self.window_b),
        }
    }
}

/// `(user, start time)` on the session clock.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct AlignmentKey {
    pub user_id: String,
    pub start_ms: i64,
}

/// Windows grouped by `(user, start time)`; each entry lists one window per
/// device, sorted by device id.
#[derive(Debug, Clone)]
pub struct AlignmentIndex<'a> {
    pub sensor_set: SensorSet,
    pub entries: BTreeMap<AlignmentKey, Vec<&'a Window>>,
}

pub fn index_aligned_windows<'a>(dataset: &'a Dataset, sensor_set: &SensorSet) -> AlignmentIndex<'a> {
    let mut entries: BTreeMap<AlignmentKey, Vec<&'a Window>> = BTreeMap::new();
    for w in dataset.windows.iter().filter(|w| &w.meta.sensor_set == sensor_set) {
        let key = AlignmentKey {
            user_id: w.meta.user_id.clone(),
            start_ms: w.meta.start_ms(),
        };
        let entry = entries.entry(key).or_default();
        if !entry.iter().any(|o| o.meta.device_id == w.meta.device_id) {
            entry.push(w);
        }
    }
    for entry in entries.values_mut() {
        entry.sort_by(|a, b| a.meta.device_id.cmp(&b.meta.device_id));
    }
    AlignmentIndex {
        sensor_set: sensor_set.clone(),
        entries,
    }
}

impl<'a> AlignmentIndex<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Keys with at least two devices, in key order.
    pub fn pairable_keys(&self) -> Vec<&AlignmentKey> {
        self.entries
            .iter()
            .filter(|(_, v)| v.len() >= 2)
            .map(|(k, _)| k)
            .collect()
    }

    /// Restricts the index to the given keys.
    pub fn subset(&self, keys: &[AlignmentKey]) -> AlignmentIndex<'a> {
        AlignmentIndex {
            sensor_set: self.sensor_set.clone(),
            entries: keys
                .iter()
                .filter_map(|k| self.entries.get(k).map(|v| (k.clone(), v.clone())))
                .collect(),
        }
    }
}

/// Uniformly random unordered pair of distinct devices from one entry.
pub fn select_device_pair<'a, R: Rng + ?Sized>(
    entry: &[&'a Window],
    rng: &mut R,
) -> Result<(&'a Window, &'a Window), PairError> {
    let n = entry.len();
    if n < 2 {
        return Err(PairError::SingleDevice);
    }
    let i = rng.random_range(0..n);
    let mut j = rng.random_range(0..n - 1);
    if j >= i {
        j += 1;
    }
    Ok((entry[i], entry[j]))
}

#[derive(Debug, Clone)]
pub struct ContrastiveBatch<'a> {
    pub anchors: Vec<&'a Window>,
    pub positives: Vec<&'a Window>,
    pub keys: Vec<AlignmentKey>,
}

impl ContrastiveBatch<'_> {
    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Anchors followed by positives, the row layout the loss expects.
    pub fn stacked(&self) -> Vec<&Window> {
        self.anchors.iter().chain(&self.positives).copied().collect()
    }
}

/// Samples `batch_size` distinct `(user, time)` keys and one device pair per
/// key. Rows `i` and `j != i` of the result are always true negatives.
pub fn build_contrastive_batch<'a, R: Rng + ?Sized>(
    index: &AlignmentIndex<'a>,
    batch_size: usize,
    rng: &mut R,
) -> Result<ContrastiveBatch<'a>, PairError> {
    let keys = index.pairable_keys();
    if batch_size == 0 || keys.len() < batch_size {
        return Err(PairError::NotEnoughPairs {
            needed: batch_size,
            available: keys.len(),
        });
    }
    let picked = index::sample(rng, keys.len(), batch_size);
    let mut batch = ContrastiveBatch {
        anchors: Vec::with_capacity(batch_size),
        positives: Vec::with_capacity(batch_size),
        keys: Vec::with_capacity(batch_size),
    };
    for i in picked.iter() {
        let key = keys[i];
        let (a, b) = select_device_pair(&index.entries[key], rng)?;
        batch.anchors.push(a);
        batch.positives.push(b);
        batch.keys.push(key.clone());
    }
    Ok(batch)
}

/// What kind of labeled pairs to draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledPairConfig {
    pub n_pairs: usize,
    /// Fraction of UNMATCHED pairs.
    pub impostor_ratio: f64,
    /// Draw window A from the first placement and B from the second.
    #[serde(default)]
    pub placements: Option<(DevicePlacement, DevicePlacement)>,
    /// Only use windows labeled with this activity.
    #[serde(default)]
    pub activity: Option<Activity>,
}

impl LabeledPairConfig {
    pub fn new(n_pairs: usize, impostor_ratio: f64) -> Self {
        LabeledPairConfig {
            n_pairs,
            impostor_ratio,
            placements: None,
            activity: None,
        }
    }
}

const MAX_TRIES: usize = 1000;

/// Draws labeled pairs. Unmatched pairs are split between different users
/// (first half, rounded up) and the same user at different times.
pub fn build_labeled_pairs<'a, R: Rng + ?Sized>(
    dataset: &'a Dataset,
    sensor_set: &SensorSet,
    config: &LabeledPairConfig,
    rng: &mut R,
) -> Result<Vec<AlignedPair<'a>>, PairError> {
    if !(0.0..=1.0).contains(&config.impostor_ratio) {
        return Err(PairError::InvalidRequest(format!(
            "impostor ratio {} outside [0, 1]",
            config.impostor_ratio
        )));
    }
    if let Some((p, q)) = config.placements {
        if p == q {
            return Err(PairError::InvalidRequest(format!("placement pair ({p}, {q}) is not distinct")));
        }
    }
    let n_unmatched = (config.n_pairs as f64 * config.impostor_ratio).round() as usize;
    let n_matched = config.n_pairs - n_unmatched;
    let n_diff_user = n_unmatched.div_ceil(2);
    let n_same_user = n_unmatched - n_diff_user;

    let usable: Vec<&Window> = dataset
        .windows
        .iter()
        .filter(|w| &w.meta.sensor_set == sensor_set)
        .filter(|w| config.activity.is_none_or(|a| w.meta.activity == Some(a)))
        .collect();
    let (pool_a, pool_b): (Vec<&Window>, Vec<&Window>) = match config.placements {
        Some((p, q)) => (
            usable.iter().copied().filter(|w| w.meta.placement == p).collect(),
            usable.iter().copied().filter(|w| w.meta.placement == q).collect(),
        ),
        None => (usable.clone(), usable.clone()),
    };

    // Matched candidates: (a, b) windows sharing user and start time.
    let mut by_key: BTreeMap<AlignmentKey, Vec<&Window>> = BTreeMap::new();
    for w in &usable {
        by_key
            .entry(AlignmentKey { user_id: w.meta.user_id.clone(), start_ms: w.meta.start_ms() })
            .or_default()
            .push(w);
    }
    let matched_entries: Vec<Vec<&Window>> = by_key
        .into_values()
        .filter_map(|mut entry| {
            entry.sort_by(|a, b| a.meta.device_id.cmp(&b.meta.device_id));
            entry.dedup_by(|a, b| a.meta.device_id == b.meta.device_id);
            match config.placements {
                Some((p, q)) => {
                    let a = entry.iter().find(|w| w.meta.placement == p)?;
                    let b = entry.iter().find(|w| w.meta.placement == q)?;
                    Some(vec![*a, *b])
                }
                None => (entry.len() >= 2).then_some(entry),
            }
        })
        .collect();

    let mut pairs = Vec::with_capacity(config.n_pairs);
    if n_matched > 0 && matched_entries.is_empty() {
        return Err(PairError::NotEnoughPairs { needed: n_matched, available: 0 });
    }
    for _ in 0..n_matched {
        let entry = matched_entries.choose(rng).expect("nonempty");
        let (a, b) = if config.placements.is_some() {
            (entry[0], entry[1])
        } else {
            select_device_pair(entry, rng)?
        };
        pairs.push(AlignedPair { window_a: a, window_b: b, label: PairLabel::Matched });
    }

    let mut draw = |n: usize, accept: &dyn Fn(&Window, &Window) -> bool, pairs: &mut Vec<AlignedPair<'a>>| {
        for _ in 0..n {
            let mut found = None;
            for _ in 0..MAX_TRIES {
                let (Some(a), Some(b)) = (pool_a.choose(rng), pool_b.choose(rng)) else { break };
                if accept(a, b) {
                    found = Some((*a, *b));
                    break;
                }
            }
            let (a, b) = found.ok_or(PairError::NotEnoughPairs { needed: n, available: 0 })?;
            pairs.push(AlignedPair { window_a: a, window_b: b, label: PairLabel::Unmatched });
        }
        Ok::<(), PairError>(())
    };
    draw(n_diff_user, &|a, b| a.meta.user_id != b.meta.user_id, &mut pairs)?;
    draw(
        n_same_user,
        &|a, b| {
            a.meta.user_id == b.meta.user_id
                && a.meta.device_id != b.meta.device_id
                && is_unmatched(a, b)
        },
        &mut pairs,
    )?;
    pairs.shuffle(rng);
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::{WindowMeta, SensorKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn window(user: &str, placement: DevicePlacement, start: f64) -> Window {
        Window {
            meta: WindowMeta {
                user_id: user.into(),
                device_id: format!("{user}-{placement}"),
                placement,
                sensor_set: SensorSet::single(SensorKind::Acc),
                start_time: start,
                duration: 20,
                sample_rate: 100.0,
                activity: Some(if start < 40.0 { Activity::Rest } else { Activity::Physical }),
            },
            data: vec![0.0; 3 * 2000],
        }
    }

    fn dataset(users: &[&str], placements: &[DevicePlacement], times: &[f64]) -> Dataset {
        let mut windows = Vec::new();
        for u in users {
            for p in placements {
                for t in times {
                    windows.push(window(u, *p, *t));
                }
            }
        }
        Dataset { sensor_set: SensorSet::single(SensorKind::Acc), windows }
    }

    use DevicePlacement::*;

    fn acc() -> SensorSet {
        SensorSet::single(SensorKind::Acc)
    }

    #[test]
    fn index_groups_by_user_and_time() {
        let ds = dataset(&["u1"], &[LeftEar, RightEar], &[0.0, 20.0, 40.0]);
        let idx = index_aligned_windows(&ds, &acc());
        assert_eq!(idx.len(), 3);
        assert!(idx.entries.values().all(|e| e.len() == 2));
    }

    #[test]
    fn disjoint_intervals_give_no_pairable_keys() {
        let mut ds = dataset(&["u1"], &[LeftEar], &[0.0, 20.0]);
        ds.windows.extend(dataset(&["u1"], &[RightEar], &[40.0, 60.0]).windows);
        let idx = index_aligned_windows(&ds, &acc());
        assert!(idx.pairable_keys().is_empty());
        let other = index_aligned_windows(&ds, &"gyro".parse().unwrap());
        assert!(other.is_empty());
    }

    #[test]
    fn device_pair_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = dataset(&["u1"], &[LeftEar, RightEar, Head, Wrist], &[0.0]);
        let entry: Vec<&Window> = ds.windows.iter().collect();
        assert_eq!(select_device_pair(&entry[..1], &mut rng), Err(PairError::SingleDevice));
        for _ in 0..20 {
            let (a, b) = select_device_pair(&entry[..2], &mut rng).unwrap();
            assert_ne!(a.meta.device_id, b.meta.device_id);
        }
    }

    #[test]
    fn device_pairs_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = dataset(&["u1"], &[LeftEar, RightEar, Head, Wrist], &[0.0]);
        let entry: Vec<&Window> = ds.windows.iter().collect();
        let mut counts: BTreeMap<(DevicePlacement, DevicePlacement), usize> = BTreeMap::new();
        let draws = 10_000;
        for _ in 0..draws {
            let (a, b) = select_device_pair(&entry, &mut rng).unwrap();
            let k = (a.meta.placement.min(b.meta.placement), a.meta.placement.max(b.meta.placement));
            *counts.entry(k).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            let f = *c as f64 / draws as f64;
            assert!((f - 1.0 / 6.0).abs() < 0.02, "{f}");
        }
    }

    #[test]
    fn batch_keys_distinct_and_negatives_sound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = dataset(&["u1", "u2"], &[LeftEar, RightEar, Head], &[0.0, 20.0, 40.0]);
        let idx = index_aligned_windows(&ds, &acc());
        let b = build_contrastive_batch(&idx, 6, &mut rng).unwrap();
        assert_eq!(b.len(), 6);
        for i in 0..6 {
            assert!(is_matched(b.anchors[i], b.positives[i]));
            for j in 0..6 {
                if i != j {
                    assert!(is_unmatched(b.anchors[i], b.positives[j]));
                    assert_ne!(b.keys[i], b.keys[j]);
                }
            }
        }
        assert!(matches!(
            build_contrastive_batch(&idx, 7, &mut rng),
            Err(PairError::NotEnoughPairs { needed: 7, available: 6 })
        ));
    }

    #[test]
    fn batches_reproducible() {
        let ds = dataset(&["u1", "u2"], &[LeftEar, RightEar, Head], &[0.0, 20.0, 40.0]);
        let idx = index_aligned_windows(&ds, &acc());
        let ids = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let b = build_contrastive_batch(&idx, 4, &mut rng).unwrap();
            b.stacked().iter().map(|w| w.meta.key()).collect::<Vec<_>>()
        };
        assert_eq!(ids(9), ids(9));
    }

    #[test]
    fn labeled_pair_mix() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ds = dataset(&["u1", "u2"], &[LeftEar, RightEar], &[0.0, 20.0, 40.0, 60.0]);
        let pairs = build_labeled_pairs(&ds, &acc(), &LabeledPairConfig::new(10, 0.5), &mut rng).unwrap();
        assert_eq!(pairs.len(), 10);
        let matched = pairs.iter().filter(|p| p.label == PairLabel::Matched).count();
        assert_eq!(matched, 5);
        assert!(pairs.iter().all(AlignedPair::is_consistent));
        let same_user_neg: Vec<_> = pairs
            .iter()
            .filter(|p| p.label == PairLabel::Unmatched && p.window_a.meta.user_id == p.window_b.meta.user_id)
            .collect();
        assert_eq!(same_user_neg.len(), 2);
        for p in same_user_neg {
            let dt = (p.window_a.meta.start_time - p.window_b.meta.start_time).abs();
            assert!(dt >= 20.0);
        }
        let all_matched = build_labeled_pairs(&ds, &acc(), &LabeledPairConfig::new(8, 0.0), &mut rng).unwrap();
        assert!(all_matched.iter().all(|p| p.label == PairLabel::Matched));
    }

    #[test]
    fn labeled_pairs_respect_placement_and_activity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ds = dataset(&["u1", "u2"], &[LeftEar, RightEar, Wrist], &[0.0, 20.0, 40.0, 60.0]);
        let cfg = LabeledPairConfig {
            placements: Some((LeftEar, Wrist)),
            activity: Some(Activity::Physical),
            ..LabeledPairConfig::new(40, 0.5)
        };
        let pairs = build_labeled_pairs(&ds, &acc(), &cfg, &mut rng).unwrap();
        for p in &pairs {
            assert_eq!(p.window_a.meta.placement, LeftEar);
            assert_eq!(p.window_b.meta.placement, Wrist);
            assert_eq!(p.window_a.meta.activity, Some(Activity::Physical));
            assert!(p.is_consistent());
        }
        let bad = LabeledPairConfig { placements: Some((Head, Wrist)), ..LabeledPairConfig::new(4, 0.5) };
        assert!(matches!(
            build_labeled_pairs(&ds, &acc(), &bad, &mut rng),
            Err(PairError::NotEnoughPairs { .. })
        ));
    }

    #[test]
    fn single_time_user_cannot_give_same_user_negatives() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ds = dataset(&["u1", "u2"], &[LeftEar, RightEar], &[0.0]);
        assert!(build_labeled_pairs(&ds, &acc(), &LabeledPairConfig::new(10, 0.5), &mut rng).is_err());
    }
}
