//! Trains accelerometer-only and fused models, then reports TPR/FPR/FNR for
//! every placement pair on held-out users.

use bioid::analysis::{placement_sweep, write_table_csv, SweepConfig};
use bioid::dataset::{leave_users_out, prepare_all, Dataset};
use bioid::registry::{train_all, TrainConfig};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::SensorSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prepared = prepare_all(&synth_generate(&SynthConfig::default(), 42)?)?;
    let users: Vec<String> = Dataset::from_prepared(&prepared, &"acc".parse()?)?.users();
    let (train_users, test_users) = leave_users_out(&users, 3);
    let train: Vec<_> = prepared.iter().filter(|r| train_users.contains(&r.user_id)).cloned().collect();

    let keys: Vec<SensorSet> = vec!["acc".parse()?, "acc+gyro+ppg".parse()?];
    let mut config = TrainConfig::default();
    config.hyperparams.max_epochs = 30;
    let registry = train_all(&train, &keys, &config, 42)?;

    let tests = keys
        .iter()
        .map(|k| Ok(Dataset::from_prepared(&prepared, k)?.with_users(&test_users)))
        .collect::<Result<Vec<_>, bioid::signal::SignalError>>()?;
    let sweep = SweepConfig { sensor_sets: keys, n_pairs: 2000, impostor_ratio: 0.5, threshold: 0.5 };
    let rows = placement_sweep(&tests, &registry, &sweep, &mut ChaCha8Rng::seed_from_u64(3))?;
    for r in &rows {
        let place = r.config.placements.map_or("randomized".into(), |(a, b)| format!("{a} + {b}"));
        println!("{:<14} {:<22} TPR {:.2}  FPR {:.2}  FNR {:.2}", r.config.sensors.to_string(), place, r.tpr, r.fpr, r.fnr);
    }
    write_table_csv(&rows, std::io::stdout())?;
    Ok(())
}
