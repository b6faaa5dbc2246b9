//! Per-sensor-set bundles on disk and runtime model selection for device
//! pairs with different sensors.

use bioid::dataset::prepare_all;
use bioid::registry::{select_model, train_all, Registry, TrainConfig};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::SensorSet;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prepared = prepare_all(&synth_generate(&SynthConfig { n_users: 6, duration_s: 240.0, ..SynthConfig::default() }, 1)?)?;
    let mut config = TrainConfig::default();
    config.hyperparams.max_epochs = 2;
    config.hyperparams.batch_size = 8;
    config.matcher_pairs = 400;
    let keys: Vec<SensorSet> = ["acc", "gyro", "acc+gyro", "acc+gyro+ppg"].iter().map(|k| k.parse()).collect::<Result<_, _>>()?;
    let trained = train_all(&prepared, &keys, &config, 5)?;

    let dir = std::env::temp_dir().join(format!("bioid-registry-{}", std::process::id()));
    for path in trained.save_dir(&dir)? {
        println!("saved {} ({} bytes)", path.display(), std::fs::metadata(&path)?.len());
    }
    let registry = Registry::load_dir(&dir)?;

    let earbud: SensorSet = "acc+gyro+ppg".parse()?;
    let headband: SensorSet = "acc+gyro".parse()?;
    let wristband: SensorSet = "acc".parse()?;
    let ppg_only: SensorSet = "ppg".parse()?;
    let cases = [
        ("earbud + earbud", &earbud, &earbud),
        ("earbud + headband", &earbud, &headband),
        ("earbud + wristband", &earbud, &wristband),
        ("headband + headband", &headband, &headband),
        ("earbud + ppg patch", &earbud, &ppg_only),
        ("wristband + ppg patch", &wristband, &ppg_only),
    ];
    for (name, a, b) in cases {
        match select_model(&registry, a, b) {
            Ok(bundle) => println!("{name:<22} -> {}", bundle.key),
            Err(e) => println!("{name:<22} -> {e}"),
        }
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
