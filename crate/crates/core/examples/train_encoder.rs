//! Trains the contrastive encoder on accelerometer windows and prints the
//! loss curve.
//!
//! cargo run --example train_encoder -- [epochs]

use bioid::dataset::{leave_users_out, Dataset};
use bioid::encoder::{train_encoder, EncoderArchitecture, Hyperparams};
use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::SensorSet;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map_or(Ok(15), |s| s.parse())?;
    let key: SensorSet = "acc".parse()?;
    let recordings = synth_generate(&SynthConfig { n_users: 8, ..SynthConfig::default() }, 42)?;
    let dataset = Dataset::from_recordings(&recordings, &key)?;
    let (train_users, _) = leave_users_out(&dataset.users(), 2);
    let train = dataset.with_users(&train_users);

    let arch = EncoderArchitecture::compact(&key);
    let hp = Hyperparams { max_epochs: epochs, ..Hyperparams::default() };
    println!(
        "{} windows, {} input samples, blocks {:?}, embedding {}",
        train.len(),
        arch.input_len,
        arch.block_lengths()?,
        arch.embedding_dim()
    );
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let trained = train_encoder(&train, &arch, &hp, &mut rng)?;
    for e in &trained.log.epochs {
        println!("epoch {:>3}  lr {:.4}  train {:.4}  val {:.4}", e.epoch, e.lr, e.train_loss, e.val_loss.unwrap_or(f64::NAN));
    }
    println!("kept epoch {} (stopped early: {})", trained.log.best_epoch, trained.log.stopped_early);
    trained.log.write_csv(std::fs::File::create("target/encoder_loss.csv")?)?;
    Ok(())
}
