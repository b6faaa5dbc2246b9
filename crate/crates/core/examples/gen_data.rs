//! Generates the default synthetic set and writes it as CSV recordings.
//!
//! cargo run --example gen_data -- [out-dir]

use std::path::PathBuf;

use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::write_recording;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "target/example-data".into()));
    let config = SynthConfig::default();
    let recordings = synth_generate(&config, 42)?;
    std::fs::create_dir_all(&out)?;
    for r in &recordings {
        write_recording(r, &out.join(format!("{}.csv", r.device_id)))?;
    }

    println!("{} recordings in {}", recordings.len(), out.display());
    for r in recordings.iter().filter(|r| r.user_id == "u01") {
        let c = &r.channels[0];
        println!(
            "{:<16} {:<14} {:>5.0} Hz  {:>6} samples  proximity to left ear {:.1}",
            r.device_id,
            r.sensor_set().unwrap().to_string(),
            c.native_rate,
            c.len(),
            config.proximity(r.placement, bioid::signal::DevicePlacement::LeftEar),
        );
    }
    for span in config.activity_spans() {
        println!("{:>5.0}-{:<5.0} s  {}", span.start, span.end, span.activity.as_str());
    }
    Ok(())
}
