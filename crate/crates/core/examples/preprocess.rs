//! Loads a recording from CSV, resamples it to 100 Hz, scales it and cuts
//! it into windows for each sensor set it carries.

use bioid::signal::synth::{synth_generate, SynthConfig};
use bioid::signal::{load_recording_with_sidecar, moments, prepare, segment, write_recording};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SynthConfig { n_users: 1, duration_s: 120.0, ..SynthConfig::default() };
    let dir = tempfile_dir()?;
    for r in synth_generate(&config, 1)? {
        write_recording(&r, &dir.join(format!("{}.csv", r.device_id)))?;
    }

    for name in ["u01-head.csv", "u01-left_ear.csv"] {
        let raw = load_recording_with_sidecar(&dir.join(name))?;
        let prepared = prepare(&raw)?;
        println!(
            "{}: {} samples at {} Hz -> {} samples at 100 Hz",
            raw.device_id,
            raw.channels[0].len(),
            raw.channels[0].native_rate,
            prepared.channels[0].len()
        );
        for c in &prepared.channels {
            let (mu, sd) = moments(&c.values);
            println!("  {:<7} mean {mu:+.1e}  sd {sd:.6}", c.name());
        }
        for key in prepared.sensor_set().unwrap().subsets() {
            let windows = segment(&prepared, &key, key.window_secs())?;
            let starts: Vec<f64> = windows.iter().map(|w| w.meta.start_time).collect();
            println!(
                "  {:<14} {} windows of {} x {}, starts {:?}",
                key.to_string(),
                windows.len(),
                key.channel_count(),
                windows[0].samples(),
                starts
            );
        }
    }
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

fn tempfile_dir() -> std::io::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("bioid-preprocess-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
