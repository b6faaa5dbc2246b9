//! Per-sensor-set model bundles: training, persistence and runtime selection.
//!
//! Bundle file layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes   "BIOIDBDL"
//! version      u32
//! meta_len     u64
//! metadata     meta_len bytes of UTF-8 JSON (key, architectures,
//!              preprocessing, provenance, tensor names and shapes)
//! per tensor   u64 element count, then that many f32 values,
//!              in the order listed in the metadata
//! checksum     u32 CRC-32 (IEEE) of every preceding byte
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{leave_users_out, Dataset};
use crate::encoder::{
    train_encoder, Encoder, EncoderArchitecture, EncoderError, Hyperparams, TrainingLog,
};
use crate::matcher::{
    train_matcher, MatcherArchitecture, PairInput, MatcherError, MatcherHyperparams, MatcherLog, MatcherModel,
};
use crate::nn::{NamedTensor, StateDict, TensorInfo};
use crate::pairs::{build_labeled_pairs, index_aligned_windows, LabeledPairConfig, PairError};
use crate::signal::{Recording, SensorKind, SensorSet, SignalError, TARGET_RATE_HZ};

pub const MAGIC: &[u8; 8] = b"BIOIDBDL";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("devices share no sensors ({a} vs {b})")]
    NoOverlap { a: SensorSet, b: SensorSet },
    #[error("no trained model for any subset of {0}")]
    NoTrainedModel(SensorSet),
    #[error("no two devices share sensor set {0}")]
    UncoverableKey(SensorSet),
    #[error("bundle format version {found}, this build reads version {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("corrupt bundle: {0}")]
    CorruptBundle(String),
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error(transparent)]
    Pairs(#[from] PairError),
    #[error(transparent)]
    Signal(#[from] SignalError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub sample_rate_hz: f64,
    pub window_secs: u32,
    pub scaler: String,
}

impl Preprocessing {
    pub fn for_key(key: &SensorSet) -> Self {
        Preprocessing {
            sample_rate_hz: TARGET_RATE_HZ,
            window_secs: key.window_secs(),
            scaler: "per-recording per-channel standard scaling".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// SHA-256 of the training windows.
    pub data_hash: String,
    pub seed: u64,
    /// Encoder epochs actually run.
    pub epochs: usize,
    pub best_epoch: usize,
    pub matcher_epochs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub key: SensorSet,
    pub encoder: Encoder<f32>,
    pub matcher: MatcherModel,
    pub hyperparams: Hyperparams,
    pub preprocessing: Preprocessing,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BundleMetadata {
    key: SensorSet,
    architecture: EncoderArchitecture,
    hyperparams: Hyperparams,
    matcher_architecture: MatcherArchitecture,
    preprocessing: Preprocessing,
    provenance: Provenance,
    encoder_tensors: Vec<TensorInfo>,
    matcher_tensors: Vec<TensorInfo>,
}

fn corrupt(msg: impl Into<String>) -> RegistryError {
    RegistryError::CorruptBundle(msg.into())
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let enc = self.encoder.state();
        let mat = self.matcher.state();
        let meta = BundleMetadata {
            key: self.key.clone(),
            architecture: self.encoder.arch.clone(),
            hyperparams: self.hyperparams.clone(),
            matcher_architecture: self.matcher.arch.clone(),
            preprocessing: self.preprocessing.clone(),
            provenance: self.provenance.clone(),
            encoder_tensors: enc.iter().map(NamedTensor::info).collect(),
            matcher_tensors: mat.iter().map(NamedTensor::info).collect(),
        };
        let json = serde_json::to_vec(&meta).expect("metadata serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in enc.iter().chain(&mat) {
            out.extend_from_slice(&(t.data.len() as u64).to_le_bytes());
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, RegistryError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(corrupt("missing magic bytes"));
        }
        let version = u32::from_le_bytes(
            bytes
                .get(8..12)
                .ok_or_else(|| corrupt("truncated header"))?
                .try_into()
                .unwrap(),
        );
        if version != FORMAT_VERSION {
            return Err(RegistryError::VersionMismatch { found: version, supported: FORMAT_VERSION });
        }
        if bytes.len() < 24 {
            return Err(corrupt("truncated header"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(corrupt("checksum mismatch"));
        }
        let mut r = Reader { buf: body, pos: 12 };
        let meta_len = r.u64()? as usize;
        let meta: BundleMetadata =
            serde_json::from_slice(r.take(meta_len)?).map_err(|e| corrupt(format!("metadata: {e}")))?;
        let read_tensors = |r: &mut Reader, infos: &[TensorInfo]| -> Result<Vec<NamedTensor>, RegistryError> {
            infos
                .iter()
                .map(|info| {
                    let n = r.u64()? as usize;
                    if n != info.shape.iter().product::<usize>() {
                        return Err(corrupt(format!("tensor {} has {n} values for shape {:?}", info.name, info.shape)));
                    }
                    let raw = r.take(n.checked_mul(4).ok_or_else(|| corrupt("tensor too large"))?)?;
                    Ok(NamedTensor {
                        name: info.name.clone(),
                        shape: info.shape.clone(),
                        data: raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
                    })
                })
                .collect()
        };
        let enc_t = read_tensors(&mut r, &meta.encoder_tensors)?;
        let mat_t = read_tensors(&mut r, &meta.matcher_tensors)?;
        if r.pos != body.len() {
            return Err(corrupt("trailing bytes after tensors"));
        }
        if meta.key.window_secs() != meta.preprocessing.window_secs {
            return Err(corrupt("window duration inconsistent with key"));
        }
        // weights are overwritten below, the seed only fills placeholders
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut encoder = Encoder::new(&meta.architecture, &meta.key, &mut rng).map_err(|e| corrupt(e.to_string()))?;
        encoder.load_state(&enc_t).map_err(corrupt)?;
        let mut matcher =
            MatcherModel::new(&meta.matcher_architecture, &mut rng).map_err(|e| corrupt(e.to_string()))?;
        matcher.load_state(&mat_t).map_err(corrupt)?;
        Ok(ModelBundle {
            key: meta.key,
            encoder,
            matcher,
            hyperparams: meta.hyperparams,
            preprocessing: meta.preprocessing,
            provenance: meta.provenance,
        })
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], RegistryError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| corrupt("unexpected end of data"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, RegistryError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RegistryError + '_ {
    move |source| RegistryError::Io { path: path.to_path_buf(), source }
}

pub fn save_bundle(bundle: &ModelBundle, path: &Path) -> Result<(), RegistryError> {
    fs::write(path, bundle.to_bytes()).map_err(io_err(path))
}

pub fn load_bundle(path: &Path) -> Result<ModelBundle, RegistryError> {
    ModelBundle::from_bytes(&fs::read(path).map_err(io_err(path))?)
}

/// File name for a key's bundle inside a registry directory.
pub fn bundle_file_name(key: &SensorSet) -> String {
    format!("{key}.bundle")
}

/// Logs kept from training one key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyLogs {
    pub encoder: TrainingLog,
    pub matcher: MatcherLog,
}

#[derive(Debug, Clone, Default)]
pub struct Registry {
    pub bundles: BTreeMap<SensorSet, ModelBundle>,
    pub logs: BTreeMap<SensorSet, KeyLogs>,
}

impl Registry {
    pub fn insert(&mut self, bundle: ModelBundle) {
        self.bundles.insert(bundle.key.clone(), bundle);
    }

    pub fn get(&self, key: &SensorSet) -> Option<&ModelBundle> {
        self.bundles.get(key)
    }

    pub fn keys(&self) -> Vec<SensorSet> {
        self.bundles.keys().cloned().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.bundles.is_empty()
    }

    /// Writes one bundle file per key.
    pub fn save_dir(&self, dir: &Path) -> Result<Vec<PathBuf>, RegistryError> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        self.bundles
            .values()
            .map(|b| {
                let path = dir.join(bundle_file_name(&b.key));
                save_bundle(b, &path)?;
                Ok(path)
            })
            .collect()
    }

    /// Loads every `*.bundle` file in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, RegistryError> {
        let mut reg = Registry::default();
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(io_err(dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "bundle"))
            .collect();
        paths.sort();
        for p in paths {
            reg.insert(load_bundle(&p)?);
        }
        Ok(reg)
    }
}

/// Picks the bundle for two devices: the largest trained subset of their
/// shared sensors, preferring sets with PPG, then the smallest set in
/// canonical order.
pub fn select_model<'r>(
    registry: &'r Registry,
    sensors_a: &SensorSet,
    sensors_b: &SensorSet,
) -> Result<&'r ModelBundle, RegistryError> {
    let shared = sensors_a.intersection(sensors_b).ok_or_else(|| RegistryError::NoOverlap {
        a: sensors_a.clone(),
        b: sensors_b.clone(),
    })?;
    let best = registry
        .bundles
        .keys()
        .filter(|k| k.is_subset(&shared))
        .min_by(|x, y| {
            y.len()
                .cmp(&x.len())
                .then(y.contains(SensorKind::Ppg).cmp(&x.contains(SensorKind::Ppg)))
                .then(x.cmp(y))
        })
        .ok_or_else(|| RegistryError::NoTrainedModel(shared.clone()))?;
    if *best != shared {
        log::warn!("no model trained for {shared}; falling back to {best}");
    }
    Ok(&registry.bundles[best])
}

/// Which preset encoder shape to instantiate per key.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchitecturePreset {
    Standard,
    #[default]
    Compact,
}

impl ArchitecturePreset {
    pub fn build(self, key: &SensorSet) -> EncoderArchitecture {
        match self {
            ArchitecturePreset::Standard => EncoderArchitecture::standard(key),
            ArchitecturePreset::Compact => EncoderArchitecture::compact(key),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub architecture: ArchitecturePreset,
    pub hyperparams: Hyperparams,
    /// Per-key epoch budgets, overriding `hyperparams.max_epochs`.
    pub epochs_per_key: BTreeMap<SensorSet, usize>,
    pub matcher_hidden: Vec<usize>,
    pub matcher_input: PairInput,
    pub matcher_hyperparams: MatcherHyperparams,
    pub matcher_pairs: usize,
    pub impostor_ratio: f64,
    /// Users withheld from encoder training and used only to fit the
    /// matcher. Ignored when fewer than `matcher_holdout_users + 2` users
    /// are available.
    pub matcher_holdout_users: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            architecture: ArchitecturePreset::default(),
            hyperparams: Hyperparams::default(),
            epochs_per_key: BTreeMap::new(),
            matcher_hidden: vec![64],
            matcher_input: PairInput::default(),
            matcher_hyperparams: MatcherHyperparams::default(),
            matcher_pairs: 4000,
            impostor_ratio: 0.5,
            matcher_holdout_users: 2,
        }
    }
}

/// Independent generator per key, so keys can be trained in any order.
pub fn key_rng(seed: u64, key: &SensorSet) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // FNV-1a of the canonical key name
    let stream = key
        .to_string()
        .bytes()
        .fold(0xcbf29ce484222325u64, |h, b| (h ^ b as u64).wrapping_mul(0x100000001b3));
    rng.set_stream(stream);
    rng
}

/// Trains the encoder and matcher for one key on its windowed dataset.
pub fn train_bundle(
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<(ModelBundle, KeyLogs), RegistryError> {
    let key = &dataset.sensor_set;
    if index_aligned_windows(dataset, key).pairable_keys().is_empty() {
        return Err(RegistryError::UncoverableKey(key.clone()));
    }
    let mut rng = key_rng(seed, key);
    let mut hp = config.hyperparams.clone();
    if let Some(&e) = config.epochs_per_key.get(key) {
        hp.max_epochs = e;
    }
    let arch = config.architecture.build(key);
    let (encoder_data, matcher_data) = split_for_matcher(dataset, config.matcher_holdout_users);
    let trained = train_encoder(encoder_data.as_ref().unwrap_or(dataset), &arch, &hp, &mut rng)?;
    let pairs = build_labeled_pairs(
        matcher_data.as_ref().unwrap_or(dataset),
        key,
        &LabeledPairConfig::new(config.matcher_pairs, config.impostor_ratio),
        &mut rng,
    )?;
    let matcher_arch = MatcherArchitecture {
        embedding_dim: arch.embedding_dim(),
        hidden: config.matcher_hidden.clone(),
        input: config.matcher_input,
    };
    let matcher = train_matcher(&pairs, &trained.model, &matcher_arch, &config.matcher_hyperparams, &mut rng)?;
    let bundle = ModelBundle {
        key: key.clone(),
        encoder: trained.model,
        matcher: matcher.model,
        hyperparams: hp,
        preprocessing: Preprocessing::for_key(key),
        provenance: Provenance {
            data_hash: dataset.content_hash(),
            seed,
            epochs: trained.log.epochs.len(),
            best_epoch: trained.log.best_epoch,
            matcher_epochs: matcher.log.epochs.len(),
        },
    };
    Ok((bundle, KeyLogs { encoder: trained.log, matcher: matcher.log }))
}

/// Splits off the matcher's users, or returns `None`s to share all users.
fn split_for_matcher(dataset: &Dataset, holdout: usize) -> (Option<Dataset>, Option<Dataset>) {
    let users = dataset.users();
    if holdout == 0 {
        return (None, None);
    }
    if users.len() < holdout + 2 {
        log::warn!("{} users cannot spare {holdout} for the matcher; sharing all users", users.len());
        return (None, None);
    }
    let (enc, mat) = leave_users_out(&users, holdout);
    (Some(dataset.with_users(&enc)), Some(dataset.with_users(&mat)))
}

/// Trains one bundle per key from prepared recordings.
pub fn train_all(
    prepared: &[Recording],
    keys: &[SensorSet],
    config: &TrainConfig,
    seed: u64,
) -> Result<Registry, RegistryError> {
    let mut reg = Registry::default();
    for key in keys {
        let dataset = Dataset::from_prepared(prepared, key)?;
        log::info!("training {key}: {} windows on {} devices", dataset.len(), dataset.devices().len());
        let (bundle, logs) = train_bundle(&dataset, config, seed)?;
        reg.logs.insert(key.clone(), logs);
        reg.insert(bundle);
    }
    Ok(reg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(s: &str) -> SensorSet {
        s.parse().unwrap()
    }

    fn fake_bundle(key: &str) -> ModelBundle {
        let key = set(key);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut arch = EncoderArchitecture::compact(&key);
        arch.conv_blocks.iter_mut().for_each(|b| b.filters = 4);
        arch.projection = [8, 8, 4];
        let encoder = Encoder::new(&arch, &key, &mut rng).unwrap();
        let matcher = MatcherModel::new(&MatcherArchitecture { embedding_dim: 4, hidden: vec![6], input: crate::matcher::PairInput::Concat }, &mut rng).unwrap();
        ModelBundle {
            preprocessing: Preprocessing::for_key(&key),
            key,
            encoder,
            matcher,
            hyperparams: Hyperparams::default(),
            provenance: Provenance {
                data_hash: "00".into(),
                seed: 1,
                epochs: 3,
                best_epoch: 2,
                matcher_epochs: 4,
            },
        }
    }

    fn registry(keys: &[&str]) -> Registry {
        let mut r = Registry::default();
        keys.iter().for_each(|k| r.insert(fake_bundle(k)));
        r
    }

    #[test]
    fn selection_examples() {
        let all = registry(&["acc", "gyro", "ppg", "acc+gyro", "acc+ppg", "gyro+ppg", "acc+gyro+ppg"]);
        assert_eq!(select_model(&all, &set("acc+gyro+ppg"), &set("acc+gyro")).unwrap().key, set("acc+gyro"));
        assert!(matches!(
            select_model(&all, &set("acc"), &set("ppg")),
            Err(RegistryError::NoOverlap { .. })
        ));
        let singles = registry(&["acc", "gyro"]);
        assert_eq!(select_model(&singles, &set("acc+gyro"), &set("acc+gyro")).unwrap().key, set("acc"));
        let ppg_pref = registry(&["acc+gyro", "acc+ppg"]);
        assert_eq!(
            select_model(&ppg_pref, &set("acc+gyro+ppg"), &set("acc+gyro+ppg")).unwrap().key,
            set("acc+ppg")
        );
        let gyro_only = registry(&["gyro"]);
        assert!(matches!(
            select_model(&gyro_only, &set("acc+ppg"), &set("acc")),
            Err(RegistryError::NoTrainedModel(_))
        ));
    }

    #[test]
    fn bundle_round_trip() {
        let b = fake_bundle("acc+gyro");
        let bytes = b.to_bytes();
        assert_eq!(&bytes[..8], MAGIC);
        let back = ModelBundle::from_bytes(&bytes).unwrap();
        assert_eq!(back, b);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn truncated_and_future_bundles() {
        let bytes = fake_bundle("acc").to_bytes();
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                ModelBundle::from_bytes(&bytes[..cut]),
                Err(RegistryError::CorruptBundle(_))
            ));
        }
        let mut flipped = bytes.clone();
        flipped[100] ^= 1;
        assert!(matches!(ModelBundle::from_bytes(&flipped), Err(RegistryError::CorruptBundle(_))));
        let mut future = bytes;
        future[8..12].copy_from_slice(&7u32.to_le_bytes());
        let err = ModelBundle::from_bytes(&future).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, RegistryError::VersionMismatch { found: 7, supported: 1 }));
        assert!(msg.contains('7') && msg.contains('1'));
    }

    #[test]
    fn registry_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let reg = registry(&["acc", "acc+gyro+ppg"]);
        let paths = reg.save_dir(dir.path()).unwrap();
        assert!(paths[0].ends_with("acc.bundle"));
        let back = Registry::load_dir(dir.path()).unwrap();
        assert_eq!(back.keys(), reg.keys());
        assert_eq!(back.bundles, reg.bundles);
    }

    fn arb_set() -> impl Strategy<Value = SensorSet> {
        (1u8..8).prop_map(|bits| {
            SensorSet::new(
                [SensorKind::Acc, SensorKind::Gyro, SensorKind::Ppg]
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| bits & (1 << i) != 0)
                    .map(|(_, k)| k),
            )
            .unwrap()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn selection_is_deterministic_subset(
            trained in prop::collection::btree_set(arb_set(), 1..7),
            a in arb_set(),
            b in arb_set(),
        ) {
            let mut reg = Registry::default();
            for k in &trained {
                reg.insert(fake_bundle(&k.to_string()));
            }
            match select_model(&reg, &a, &b) {
                Ok(bundle) => {
                    let shared = a.intersection(&b).unwrap();
                    prop_assert!(bundle.key.is_subset(&shared));
                    prop_assert_eq!(&select_model(&reg, &a, &b).unwrap().key, &bundle.key);
                    // no trained subset is larger
                    prop_assert!(trained.iter().filter(|k| k.is_subset(&shared)).all(|k| k.len() <= bundle.key.len()));
                }
                Err(RegistryError::NoOverlap { .. }) => prop_assert!(a.intersection(&b).is_none()),
                Err(RegistryError::NoTrainedModel(shared)) => {
                    prop_assert!(trained.iter().all(|k| !k.is_subset(&shared)));
                }
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
