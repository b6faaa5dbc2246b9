use bioid::analysis::{group_similarity, Group};
use bioid::dataset::{coverable_keys, prepare_all, Dataset};
use bioid::encoder::{train_encoder, Encoder, EncoderArchitecture, Hyperparams};
use bioid::registry::{train_all, train_bundle, RegistryError, TrainConfig};
use bioid::signal::synth::{synth_generate, DeviceSpec, SynthConfig};
use bioid::signal::{DevicePlacement, Recording, SensorSet};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn set(s: &str) -> SensorSet {
    s.parse().unwrap()
}

fn small_config() -> TrainConfig {
    let mut c = TrainConfig::default();
    c.hyperparams.max_epochs = 2;
    c.hyperparams.batch_size = 8;
    c.matcher_pairs = 200;
    c.matcher_hyperparams.epochs = 3;
    c
}

fn prepared(n_users: usize, duration_s: f64, seed: u64) -> Vec<Recording> {
    let cfg = SynthConfig { n_users, duration_s, ..SynthConfig::default() };
    prepare_all(&synth_generate(&cfg, seed).unwrap()).unwrap()
}

#[test]
fn imu_keys_on_four_devices_give_three_bundles() {
    let recs = prepared(5, 200.0, 1);
    let keys = [set("acc"), set("gyro"), set("acc+gyro")];
    let reg = train_all(&recs, &keys, &small_config(), 3).unwrap();
    assert_eq!(reg.keys(), vec![set("acc"), set("acc+gyro"), set("gyro")]);
    let gyro = Dataset::from_prepared(&recs, &set("gyro")).unwrap();
    assert!(gyro.windows.iter().all(|w| w.meta.placement != DevicePlacement::Wrist));
    assert_eq!(gyro.devices().len(), 5 * 3);
    assert!(reg.logs.values().all(|l| !l.encoder.epochs.is_empty()));
}

#[test]
fn ppg_on_one_device_is_uncoverable() {
    use DevicePlacement::*;
    let cfg = SynthConfig {
        n_users: 3,
        duration_s: 120.0,
        devices: vec![
            DeviceSpec { placement: LeftEar, sensors: set("acc+gyro+ppg"), rate_hz: 100.0 },
            DeviceSpec { placement: Head, sensors: set("acc+gyro"), rate_hz: 52.0 },
            DeviceSpec { placement: Wrist, sensors: set("acc"), rate_hz: 32.0 },
        ],
        proximity: Vec::new(),
        ..SynthConfig::default()
    };
    let recs = prepare_all(&synth_generate(&cfg, 2).unwrap()).unwrap();
    assert!(!coverable_keys(&recs).contains(&set("ppg")));
    assert_eq!(coverable_keys(&recs), vec![set("acc"), set("acc+gyro"), set("gyro")]);
    let ds = Dataset::from_prepared(&recs, &set("ppg")).unwrap();
    assert!(matches!(train_bundle(&ds, &small_config(), 1), Err(RegistryError::UncoverableKey(_))));
}

#[test]
fn default_layout_covers_every_subset() {
    let recs = prepared(2, 60.0, 4);
    assert_eq!(coverable_keys(&recs).len(), 7);
}

#[test]
fn same_seed_and_data_give_identical_bundle_bytes() {
    let recs = prepared(5, 200.0, 6);
    let ds = Dataset::from_prepared(&recs, &set("acc")).unwrap();
    let (a, _) = train_bundle(&ds, &small_config(), 11).unwrap();
    let (b, _) = train_bundle(&ds, &small_config(), 11).unwrap();
    let (c, _) = train_bundle(&ds, &small_config(), 12).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    assert_ne!(a.to_bytes(), c.to_bytes());
    assert_eq!(a.provenance.data_hash, ds.content_hash());
}

#[test]
fn contrastive_loss_falls_with_training() {
    let recs = prepared(4, 300.0, 8);
    let ds = Dataset::from_prepared(&recs, &set("acc")).unwrap();
    let hp = Hyperparams { max_epochs: 8, batch_size: 16, convergence_window: 100, ..Hyperparams::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let trained = train_encoder(&ds, &EncoderArchitecture::compact(&set("acc")), &hp, &mut rng).unwrap();
    let log = &trained.log;
    assert_eq!(log.epochs.len(), 8);
    assert!(log.last_loss().unwrap() < log.first_loss().unwrap(), "{:?}", log.epochs);
    assert!(log.best_epoch < 8);
    let mut csv = Vec::new();
    log.write_csv(&mut csv).unwrap();
    assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 9);
}

#[test]
fn untrained_encoder_is_only_a_negative_control() {
    let recs = prepared(3, 200.0, 9);
    let key = set("acc");
    let ds = Dataset::from_prepared(&recs, &key).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let enc = Encoder::<f32>::new(&EncoderArchitecture::compact(&key), &key, &mut rng).unwrap();
    let stats = group_similarity(&ds, &enc, 300, &mut rng).unwrap();
    assert_eq!(stats.iter().map(|s| s.group).collect::<Vec<_>>(), Group::ALL.to_vec());
    assert!(stats.iter().all(|s| s.mu.is_finite() && s.n + s.excluded == 300));
}
