//! Spearman similarity of embeddings for the three pair groups on users the
//! encoder never saw: same wearer at other times (A), other wearers (B) and
//! the same wearer at the same time (C).

use bioid::analysis::{group_similarity, write_histogram_csv};
use bioid::dataset::{leave_users_out, Dataset};
use bioid::encoder::{train_encoder, Encoder, EncoderArchitecture, Hyperparams};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::SensorSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let key: SensorSet = "acc+gyro+ppg".parse()?;
    let dataset = Dataset::from_recordings(&synth_generate(&SynthConfig::default(), 42)?, &key)?;
    let (train_users, test_users) = leave_users_out(&dataset.users(), 3);
    let test = dataset.with_users(&test_users);
    let arch = EncoderArchitecture::compact(&key);
    let mut rng = ChaCha8Rng::seed_from_u64(1);

    let untrained = Encoder::<f32>::new(&arch, &key, &mut rng)?;
    let hp = Hyperparams { max_epochs: 30, ..Hyperparams::default() };
    let trained = train_encoder(&dataset.with_users(&train_users), &arch, &hp, &mut rng)?.model;

    for (name, encoder) in [("untrained", &untrained), ("trained", &trained)] {
        let stats = group_similarity(&test, encoder, 2000, &mut rng)?;
        println!("{name}:");
        for s in &stats {
            println!("  group {:?}  mu {:+.3}  sigma {:.3}  n {}", s.group, s.mu, s.sigma, s.n);
        }
        if name == "trained" {
            write_histogram_csv(&stats, std::fs::File::create("target/group_histogram.csv")?)?;
        }
    }
    Ok(())
}
