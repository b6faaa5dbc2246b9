//! Embedding similarity statistics and matcher evaluation reports.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::encoder::{Embedding, Encoder, EncoderError};
use crate::matcher::{embed_pairs, MatcherError, MatcherModel};
use crate::pairs::{
    build_labeled_pairs, index_aligned_windows, select_device_pair, AlignedPair, LabeledPairConfig, PairError,
    PairLabel,
};
use crate::registry::Registry;
use crate::signal::{Activity, DevicePlacement, SensorSet};

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 3 values, got {0}")]
    TooShort(usize),
    #[error("constant input: rank correlation undefined")]
    ConstantInput,
    #[error("cannot form group {0:?} pairs from this dataset")]
    InsufficientGroups(Group),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("test set has only {0:?} pairs")]
    SingleClassTestSet(PairLabel),
    #[error("windows without activity labels")]
    MissingActivityLabels,
    #[error("no trained model for {0}")]
    MissingModel(SensorSet),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Ranks starting at 1; tied values share the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Spearman's ρ: Pearson correlation of average ranks.
pub fn spearman_rho<T: Copy + Into<f64>>(x: &[T], y: &[T]) -> Result<f64, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(AnalysisError::TooShort(x.len()));
    }
    let to64 = |v: &[T]| v.iter().map(|a| (*a).into()).collect::<Vec<f64>>();
    let (rx, ry) = (average_ranks(&to64(x)), average_ranks(&to64(y)));
    let n = rx.len() as f64;
    // both rank vectors have mean (n + 1) / 2
    let mean = (n + 1.0) / 2.0;
    let (mut cov, mut vx, mut vy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mean) * (b - mean);
        vx += (a - mean).powi(2);
        vy += (b - mean).powi(2);
    }
    if vx == 0.0 || vy == 0.0 {
        return Err(AnalysisError::ConstantInput);
    }
    Ok((cov / (vx * vy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Group {
    /// Same user, different devices, different times.
    A,
    /// Different users.
    B,
    /// Same user, different devices, same time.
    C,
}

impl Group {
    pub const ALL: [Group; 3] = [Group::A, Group::B, Group::C];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Self {
        Histogram { lo, hi, counts: vec![0; bins] }
    }

    pub fn add(&mut self, v: f64) {
        let bins = self.counts.len();
        let t = ((v - self.lo) / (self.hi - self.lo) * bins as f64).floor();
        let i = (t.max(0.0) as usize).min(bins - 1);
        self.counts[i] += 1;
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + i as f64 * w, self.lo + (i + 1) as f64 * w)
    }
}

pub const HISTOGRAM_BINS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: Group,
    pub mu: f64,
    pub sigma: f64,
    pub n: usize,
    /// Pairs skipped because an embedding was constant.
    pub excluded: usize,
    pub histogram: Histogram,
}

impl GroupStats {
    pub fn from_values(group: Group, values: &[f64], excluded: usize) -> Self {
        let n = values.len();
        let mu = if n == 0 { 0.0 } else { values.iter().sum::<f64>() / n as f64 };
        let sigma = if n == 0 {
            0.0
        } else {
            (values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64).sqrt()
        };
        let mut histogram = Histogram::new(-1.0, 1.0, HISTOGRAM_BINS);
        values.iter().for_each(|v| histogram.add(*v));
        GroupStats { group, mu, sigma, n, excluded, histogram }
    }
}

/// Samples `n_per_group` embedding pairs per group and summarizes their ρ.
pub fn group_similarity<R: Rng + ?Sized>(
    dataset: &Dataset,
    encoder: &Encoder<f32>,
    n_per_group: usize,
    rng: &mut R,
) -> Result<Vec<GroupStats>, AnalysisError> {
    let windows: Vec<_> = dataset.windows.iter().collect();
    let emb = encoder.embed_all(&windows)?;
    group_similarity_of(&emb, n_per_group, rng)
}

/// Same as [`group_similarity`] on precomputed embeddings.
pub fn group_similarity_of<R: Rng + ?Sized>(
    emb: &[Embedding],
    n_per_group: usize,
    rng: &mut R,
) -> Result<Vec<GroupStats>, AnalysisError> {
    let mut by_user: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    let mut by_time: BTreeMap<(&str, i64), Vec<usize>> = BTreeMap::new();
    let mut by_start: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (i, e) in emb.iter().enumerate() {
        let ms = (e.start_time * 1000.0).round() as i64;
        by_user.entry(&e.user_id).or_default().push(i);
        by_time.entry((&e.user_id, ms)).or_default().push(i);
        by_start.entry(ms).or_default().push(i);
    }
    let window_ms = emb
        .first()
        .map(|e| 1000 * e.sensor_set.window_secs() as i64)
        .unwrap_or(0);
    let ms = |i: usize| (emb[i].start_time * 1000.0).round() as i64;
    let aligned: Vec<&Vec<usize>> = by_time.values().filter(|v| v.len() >= 2).collect();
    let users: Vec<&Vec<usize>> = by_user.values().collect();
    let starts: Vec<&Vec<usize>> = by_start.values().collect();

    let mut out = Vec::new();
    for group in Group::ALL {
        let mut values = Vec::with_capacity(n_per_group);
        let mut excluded = 0;
        for k in 0..n_per_group {
            let pick: Option<(usize, usize)> = match group {
                Group::C => aligned.choose(rng).map(|entry| {
                    let i = rng.random_range(0..entry.len());
                    let mut j = rng.random_range(0..entry.len() - 1);
                    if j >= i {
                        j += 1;
                    }
                    (entry[i], entry[j])
                }),
                Group::A => retry(rng, |rng| {
                    let u = users.choose(rng)?;
                    let (&i, &j) = (u.choose(rng)?, u.choose(rng)?);
                    (emb[i].device_id != emb[j].device_id && (ms(i) - ms(j)).abs() >= window_ms).then_some((i, j))
                }),
                // alternate between time-aligned and unconstrained pairs
                Group::B => retry(rng, |rng| {
                    let (i, j) = if k % 2 == 0 {
                        let s = starts.choose(rng)?;
                        (*s.choose(rng)?, *s.choose(rng)?)
                    } else {
                        (rng.random_range(0..emb.len()), rng.random_range(0..emb.len()))
                    };
                    (emb[i].user_id != emb[j].user_id).then_some((i, j))
                }),
            };
            let Some((i, j)) = pick else {
                return Err(AnalysisError::InsufficientGroups(group));
            };
            match spearman_rho(&emb[i].values, &emb[j].values) {
                Ok(r) => values.push(r),
                Err(AnalysisError::ConstantInput) => excluded += 1,
                Err(e) => return Err(e),
            }
        }
        out.push(GroupStats::from_values(group, &values, excluded));
    }
    Ok(out)
}

fn retry<R: Rng + ?Sized, T>(rng: &mut R, mut f: impl FnMut(&mut R) -> Option<T>) -> Option<T> {
    (0..1000).find_map(|_| f(rng))
}

/// Which slice of the data a report covers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub sensors: SensorSet,
    /// `None` means randomized device selection.
    pub placements: Option<(DevicePlacement, DevicePlacement)>,
    pub activity: Option<Activity>,
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tpr: f64,
    pub fpr: f64,
    pub fnr: f64,
    pub config: ReportConfig,
}

impl MetricsReport {
    pub fn from_counts(
        tp: usize,
        fn_: usize,
        fp: usize,
        tn: usize,
        config: ReportConfig,
    ) -> Result<Self, AnalysisError> {
        let (pos, neg) = (tp + fn_, fp + tn);
        match (pos, neg) {
            (0, 0) => return Err(AnalysisError::EmptyTestSet),
            (_, 0) => return Err(AnalysisError::SingleClassTestSet(PairLabel::Matched)),
            (0, _) => return Err(AnalysisError::SingleClassTestSet(PairLabel::Unmatched)),
            _ => {}
        }
        let tpr = tp as f64 / pos as f64;
        Ok(MetricsReport {
            tp,
            fp,
            tn,
            fn_,
            tpr,
            fpr: fp as f64 / neg as f64,
            fnr: 1.0 - tpr,
            config,
        })
    }

    /// Scores labeled probabilities at the configured threshold.
    pub fn from_scores(scores: &[(PairLabel, f64)], config: ReportConfig) -> Result<Self, AnalysisError> {
        let (mut tp, mut fn_, mut fp, mut tn) = (0, 0, 0, 0);
        for &(label, p) in scores {
            let predicted = p >= config.threshold;
            match (label, predicted) {
                (PairLabel::Matched, true) => tp += 1,
                (PairLabel::Matched, false) => fn_ += 1,
                (PairLabel::Unmatched, true) => fp += 1,
                (PairLabel::Unmatched, false) => tn += 1,
            }
        }
        Self::from_counts(tp, fn_, fp, tn, config)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

/// Matcher probabilities for labeled pairs.
pub fn score_pairs(
    matcher: &MatcherModel,
    encoder: &Encoder<f32>,
    pairs: &[AlignedPair<'_>],
) -> Result<Vec<(PairLabel, f64)>, AnalysisError> {
    embed_pairs(pairs, encoder)?
        .iter()
        .map(|e| Ok((e.label, matcher.probability(&e.a, &e.b)?)))
        .collect()
}

pub fn evaluate_matcher(
    matcher: &MatcherModel,
    encoder: &Encoder<f32>,
    test_pairs: &[AlignedPair<'_>],
    config: ReportConfig,
) -> Result<MetricsReport, AnalysisError> {
    if test_pairs.is_empty() {
        return Err(AnalysisError::EmptyTestSet);
    }
    MetricsReport::from_scores(&score_pairs(matcher, encoder, test_pairs)?, config)
}

/// One report per threshold over the same scores.
pub fn threshold_sweep(
    scores: &[(PairLabel, f64)],
    base: &ReportConfig,
    thresholds: &[f64],
) -> Result<Vec<MetricsReport>, AnalysisError> {
    thresholds
        .iter()
        .map(|&t| MetricsReport::from_scores(scores, ReportConfig { threshold: t, ..base.clone() }))
        .collect()
}

/// `0.1, 0.2, …, 0.9`.
pub fn default_thresholds() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub sensor_sets: Vec<SensorSet>,
    pub n_pairs: usize,
    pub impostor_ratio: f64,
    pub threshold: f64,
}

/// One report per (sensor set, placement pair), plus a randomized-selection
/// row per sensor set. `datasets` holds the test windows for each set.
pub fn placement_sweep<R: Rng + ?Sized>(
    datasets: &[Dataset],
    registry: &Registry,
    config: &SweepConfig,
    rng: &mut R,
) -> Result<Vec<MetricsReport>, AnalysisError> {
    let mut rows = Vec::new();
    for set in &config.sensor_sets {
        let bundle = registry.get(set).ok_or_else(|| AnalysisError::MissingModel(set.clone()))?;
        let Some(ds) = datasets.iter().find(|d| &d.sensor_set == set) else {
            return Err(AnalysisError::MissingModel(set.clone()));
        };
        let present: Vec<DevicePlacement> = DevicePlacement::ALL
            .into_iter()
            .filter(|p| ds.windows.iter().any(|w| w.meta.placement == *p))
            .collect();
        let mut selections = vec![None];
        for (i, &p) in present.iter().enumerate() {
            for &q in &present[i + 1..] {
                selections.push(Some((p, q)));
            }
        }
        for placements in selections {
            let pc = LabeledPairConfig {
                placements,
                ..LabeledPairConfig::new(config.n_pairs, config.impostor_ratio)
            };
            let pairs = build_labeled_pairs(ds, set, &pc, rng)?;
            let report_cfg = ReportConfig {
                sensors: set.clone(),
                placements,
                activity: None,
                threshold: config.threshold,
            };
            rows.push(evaluate_matcher(&bundle.matcher, &bundle.encoder, &pairs, report_cfg)?);
        }
    }
    Ok(rows)
}

/// Per-phase reports over randomized device pairs.
pub fn activity_breakdown<R: Rng + ?Sized>(
    dataset: &Dataset,
    matcher: &MatcherModel,
    encoder: &Encoder<f32>,
    pair_config: &LabeledPairConfig,
    threshold: f64,
    rng: &mut R,
) -> Result<Vec<MetricsReport>, AnalysisError> {
    if dataset.is_empty() || dataset.windows.iter().any(|w| w.meta.activity.is_none()) {
        return Err(AnalysisError::MissingActivityLabels);
    }
    Activity::ALL
        .into_iter()
        .map(|activity| {
            let pc = LabeledPairConfig { activity: Some(activity), ..pair_config.clone() };
            let pairs = build_labeled_pairs(dataset, &dataset.sensor_set, &pc, rng)?;
            let cfg = ReportConfig {
                sensors: dataset.sensor_set.clone(),
                placements: pc.placements,
                activity: Some(activity),
                threshold,
            };
            evaluate_matcher(matcher, encoder, &pairs, cfg)
        })
        .collect()
}

/// Fraction of aligned same-user device triples whose ensemble vote is
/// MATCHED. Returns `None` when no key has three devices.
pub fn ensemble_match_rate<R: Rng + ?Sized>(
    dataset: &Dataset,
    matcher: &MatcherModel,
    encoder: &Encoder<f32>,
    n_triples: usize,
    threshold: f64,
    rng: &mut R,
) -> Result<Option<f64>, AnalysisError> {
    let index = index_aligned_windows(dataset, &dataset.sensor_set);
    let entries: Vec<_> = index.entries.values().filter(|e| e.len() >= 3).collect();
    if entries.is_empty() {
        return Ok(None);
    }
    let mut matched = 0;
    for _ in 0..n_triples {
        let entry = entries.choose(rng).expect("nonempty");
        let (a, b) = select_device_pair(entry, rng)?;
        let c = retry(rng, |rng| {
            let c = entry.choose(rng)?;
            (c.meta.device_id != a.meta.device_id && c.meta.device_id != b.meta.device_id).then_some(*c)
        })
        .expect("entry has three devices");
        let emb = encoder.embed_all(&[a, b, c])?;
        if crate::matcher::ensemble_match(matcher, &emb, threshold)?.label == PairLabel::Matched {
            matched += 1;
        }
    }
    Ok(Some(matched as f64 / n_triples as f64))
}

fn placement_cell(placements: Option<(DevicePlacement, DevicePlacement)>, p: DevicePlacement) -> &'static str {
    match placements {
        None => "random",
        Some((a, b)) if a == p || b == p => "x",
        Some(_) => "",
    }
}

/// Table-1 layout: sensors, one column per placement, then rates and counts.
pub fn write_table_csv<W: Write>(reports: &[MetricsReport], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sensors".to_string()];
    header.extend(DevicePlacement::ALL.iter().map(|p| p.as_str().to_string()));
    header.extend(
        ["activity", "threshold", "tpr", "fpr", "fnr", "tp", "fp", "tn", "fn"].map(String::from),
    );
    w.write_record(&header)?;
    for r in reports {
        let c = &r.config;
        let mut row = vec![c.sensors.to_string()];
        row.extend(DevicePlacement::ALL.iter().map(|p| placement_cell(c.placements, *p).to_string()));
        row.push(c.activity.map(|a| a.as_str().to_string()).unwrap_or_default());
        row.push(c.threshold.to_string());
        row.extend([r.tpr, r.fpr, r.fnr].map(|v| format!("{v:.4}")));
        row.extend([r.tp, r.fp, r.tn, r.fn_].map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// `group,bin_lo,bin_hi,count` rows for every group histogram.
pub fn write_histogram_csv<W: Write>(stats: &[GroupStats], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["group", "bin_lo", "bin_hi", "count"])?;
    for s in stats {
        for (i, c) in s.histogram.counts.iter().enumerate() {
            let (lo, hi) = s.histogram.bin_edges(i);
            w.write_record([format!("{:?}", s.group), format!("{lo:.2}"), format!("{hi:.2}"), c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Rank of each value by counting smaller and equal entries.
    fn naive_ranks(x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let less = x.iter().filter(|u| *u < v).count() as f64;
                let equal = x.iter().filter(|u| *u == v).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    }

    fn naive_spearman(x: &[f64], y: &[f64]) -> f64 {
        let (rx, ry) = (naive_ranks(x), naive_ranks(y));
        let n = x.len() as f64;
        let mx = rx.iter().sum::<f64>() / n;
        let my = ry.iter().sum::<f64>() / n;
        let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
        let sx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum::<f64>().sqrt();
        let sy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum::<f64>().sqrt();
        cov / (sx * sy)
    }

    fn cfg() -> ReportConfig {
        ReportConfig {
            sensors: "acc".parse().unwrap(),
            placements: None,
            activity: None,
            threshold: 0.5,
        }
    }

    #[test]
    fn rho_examples() {
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap(), 1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap(), -1.0);
        assert_eq!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::LengthMismatch(2, 3)));
        assert_eq!(spearman_rho(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]), Err(AnalysisError::ConstantInput));
        assert_eq!(spearman_rho(&[1.0, 2.0], &[1.0, 2.0]), Err(AnalysisError::TooShort(2)));
    }

    #[test]
    fn ties_get_average_ranks() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for k in 0..500 {
            // coarse integer values force ties in most pairs
            let levels = if k % 2 == 0 { 8 } else { 1000 };
            let x: Vec<f64> = (0..64).map(|_| rng.random_range(0..levels) as f64).collect();
            let y: Vec<f64> = (0..64).map(|_| rng.random_range(0..levels) as f64).collect();
            let a = spearman_rho(&x, &y).unwrap();
            assert!((a - naive_spearman(&x, &y)).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_examples() {
        let perfect = MetricsReport::from_counts(10, 0, 0, 10, cfg()).unwrap();
        assert_eq!((perfect.tpr, perfect.fpr, perfect.fnr), (1.0, 0.0, 0.0));
        assert_eq!(MetricsReport::from_counts(0, 0, 0, 0, cfg()), Err(AnalysisError::EmptyTestSet));
        assert_eq!(
            MetricsReport::from_counts(3, 1, 0, 0, cfg()),
            Err(AnalysisError::SingleClassTestSet(PairLabel::Matched))
        );
    }

    #[test]
    fn coin_flip_matcher() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let scores: Vec<(PairLabel, f64)> = (0..4000)
            .map(|i| {
                let l = if i % 2 == 0 { PairLabel::Matched } else { PairLabel::Unmatched };
                (l, rng.random::<f64>())
            })
            .collect();
        let r = MetricsReport::from_scores(&scores, cfg()).unwrap();
        assert!((r.tpr - 0.5).abs() < 0.05 && (r.fpr - 0.5).abs() < 0.05);
        let sweep = threshold_sweep(&scores, &cfg(), &default_thresholds()).unwrap();
        assert_eq!(sweep.len(), 9);
        assert!(sweep.windows(2).all(|w| w[1].tpr <= w[0].tpr && w[1].fpr <= w[0].fpr));
    }

    #[test]
    fn histogram_edges() {
        let mut h = Histogram::new(-1.0, 1.0, 20);
        for v in [-1.0, -0.85, 0.0, 0.99, 1.0] {
            h.add(v);
        }
        assert_eq!(h.counts[0], 1);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[10], 1);
        assert_eq!(h.counts[19], 2);
        let s = GroupStats::from_values(Group::C, &[0.5, 0.7], 1);
        assert!((s.mu - 0.6).abs() < 1e-12 && (s.sigma - 0.1).abs() < 1e-12);
        assert_eq!(s.histogram.counts.iter().sum::<usize>(), 2);
    }

    #[test]
    fn table_csv_layout() {
        let mut r = MetricsReport::from_counts(8, 2, 1, 9, cfg()).unwrap();
        let mut buf = Vec::new();
        let random = r.clone();
        r.config.placements = Some((DevicePlacement::LeftEar, DevicePlacement::RightEar));
        write_table_csv(&[random, r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "sensors,left_ear,right_ear,head,wrist,activity,threshold,tpr,fpr,fnr,tp,fp,tn,fn");
        assert_eq!(lines[1], "acc,random,random,random,random,,0.5,0.8000,0.1000,0.2000,8,1,9,2");
        assert_eq!(lines[2], "acc,x,x,,,,0.5,0.8000,0.1000,0.2000,8,1,9,2");
    }

    proptest! {
        #[test]
        fn rho_bounded_and_rank_invariant(x in prop::collection::vec(-100.0f64..100.0, 3..40), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let y: Vec<f64> = x.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
            if let Ok(r) = spearman_rho(&x, &y) {
                prop_assert!((-1.0..=1.0).contains(&r));
                let tx: Vec<f64> = x.iter().map(|v| (v / 50.0).exp() * 3.0 + 1.0).collect();
                let r2 = spearman_rho(&tx, &y).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
            if let Ok(r) = spearman_rho(&x, &x) {
                prop_assert!((r - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn rates_consistent(tp in 0usize..500, fn_ in 0usize..500, fp in 0usize..500, tn in 0usize..500) {
            if let Ok(r) = MetricsReport::from_counts(tp, fn_, fp, tn, cfg()) {
                prop_assert_eq!(r.tpr + r.fnr, 1.0);
                prop_assert_eq!(r.total(), tp + fn_ + fp + tn);
                for v in [r.tpr, r.fpr, r.fnr] {
                    prop_assert!((0.0..=1.0).contains(&v));
                }
            }
        }
    }
}
