//! Trains a fused IMU+PPG bundle, then matches window pairs and a
//! three-device ensemble.

use bioid::dataset::{leave_users_out, prepare_all, Dataset};
use bioid::matcher::{ensemble_match, match_embeddings};
use bioid::registry::{train_bundle, TrainConfig};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::{DevicePlacement, SensorSet, Window};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prepared = prepare_all(&synth_generate(&SynthConfig::default(), 42)?)?;
    let fused: SensorSet = "acc+gyro+ppg".parse()?;
    let all = Dataset::from_prepared(&prepared, &fused)?;
    let (train_users, test_users) = leave_users_out(&all.users(), 3);
    let mut config = TrainConfig::default();
    config.hyperparams.max_epochs = 30;
    let (bundle, _) = train_bundle(&all.with_users(&train_users), &config, 42)?;

    let test = all.with_users(&test_users);
    let find = |user: &str, placement, start: f64| -> &Window {
        test.windows
            .iter()
            .find(|w| w.meta.user_id == user && w.meta.placement == placement && w.meta.start_time == start)
            .expect("window exists")
    };
    let (u, v) = (&test_users[0], &test_users[1]);
    let cases = [
        ("same wearer, same time", find(u, DevicePlacement::LeftEar, 300.0), find(u, DevicePlacement::RightEar, 300.0)),
        ("same wearer, other time", find(u, DevicePlacement::LeftEar, 300.0), find(u, DevicePlacement::RightEar, 90.0)),
        ("other wearer, same time", find(u, DevicePlacement::LeftEar, 300.0), find(v, DevicePlacement::RightEar, 300.0)),
    ];
    for (name, a, b) in cases {
        let d = match_embeddings(&bundle.matcher, &bundle.encoder.embed(a)?, &bundle.encoder.embed(b)?, 0.5)?;
        println!("{name:<24} p = {:.3}  {:?}", d.probability, d.label);
    }

    // Three devices share only the accelerometer.
    let acc: SensorSet = "acc".parse()?;
    let mut config = TrainConfig::default();
    config.hyperparams.max_epochs = 30;
    let acc_all = Dataset::from_prepared(&prepared, &acc)?;
    let (acc_bundle, _) = train_bundle(&acc_all.with_users(&train_users), &config, 42)?;
    let acc_test = acc_all.with_users(&test_users);
    let at = |user: &str, placement| {
        acc_test.windows.iter().find(|w| w.meta.user_id == user && w.meta.placement == placement && w.meta.start_time == 300.0)
    };
    let windows = [at(u, DevicePlacement::LeftEar), at(u, DevicePlacement::Head), at(v, DevicePlacement::Wrist)];
    let embeddings = windows
        .iter()
        .map(|w| acc_bundle.encoder.embed(w.expect("window exists")))
        .collect::<Result<Vec<_>, _>>()?;
    let ensemble = ensemble_match(&acc_bundle.matcher, &embeddings, 0.5)?;
    println!("ensemble of {u} ears+head with {v}'s wrist: {:?} ({} of 3 pairs matched)", ensemble.label, ensemble.matched_pairs);
    for p in &ensemble.pairwise {
        println!("  {} vs {}: p = {:.3}", p.i, p.j, p.decision.probability);
    }
    Ok(())
}
