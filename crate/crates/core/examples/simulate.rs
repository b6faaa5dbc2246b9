//! Continuous authentication between two devices of one wearer, then the
//! same session with the right earbud handed to someone else mid-way.

use bioid::dataset::{leave_users_out, prepare_all};
use bioid::registry::{train_all, TrainConfig};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::DevicePlacement::{Head, LeftEar, RightEar};
use bioid::simulate::{find_recording, simulate, DeviceStream, Pacing};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let prepared = prepare_all(&synth_generate(&SynthConfig::default(), 42)?)?;
    let mut users: Vec<String> = prepared.iter().map(|r| r.user_id.clone()).collect();
    users.dedup();
    let (train_users, test_users) = leave_users_out(&users, 3);
    let train: Vec<_> = prepared.iter().filter(|r| train_users.contains(&r.user_id)).cloned().collect();
    let mut config = TrainConfig::default();
    config.hyperparams.max_epochs = 30;
    let registry = train_all(&train, &["acc+gyro".parse()?, "acc+gyro+ppg".parse()?], &config, 42)?;

    let (wearer, stranger) = (&test_users[0], &test_users[1]);
    let left = DeviceStream::from_recording(find_recording(&prepared, wearer, LeftEar)?)?;
    let right = DeviceStream::from_recording(find_recording(&prepared, wearer, RightEar)?)?;
    let head = DeviceStream::from_recording(find_recording(&prepared, wearer, Head)?)?;
    let swapped = right.handoff(find_recording(&prepared, stranger, RightEar)?, 310.0)?;

    for (name, a, b) in [("earbuds", &left, &right), ("earbud + headband", &left, &head), ("earbuds, swap at 310 s", &left, &swapped)] {
        let log = simulate(&registry, a, b, 0.5, Pacing::Fast)?;
        let s = &log.summary;
        println!("{name}: model {}, {}/{} windows MATCHED, accuracy {:.0}%", s.key, s.matched, s.windows, 100.0 * s.accuracy);
        if s.swap_at.is_some() {
            for e in &log.events {
                println!("  t={:>3.0} s  p={:.3}  {:?} (truth {:?})", e.start_time, e.probability, e.decision, e.truth);
            }
            println!("  flipped after {:?} window(s)", s.flip_latency);
        }
    }
    Ok(())
}
