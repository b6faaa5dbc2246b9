//! Windowed datasets for one sensor set.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::signal::{self, Recording, SensorSet, SignalError, Window};

/// All windows of one sensor set, over any number of users and devices.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub sensor_set: SensorSet,
    pub windows: Vec<Window>,
}

/// Loads every `*.csv` recording (with its JSON sidecar) in `dir`, in file
/// name order.
pub fn load_dir(dir: &Path) -> Result<Vec<Recording>, SignalError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(SignalError::MalformedFile {
            path: dir.display().to_string(),
            reason: "no recording CSVs".into(),
        });
    }
    paths.iter().map(|p| signal::load_recording_with_sidecar(p)).collect()
}

/// Every sensor set that at least two devices of one user carry.
pub fn coverable_keys(recordings: &[Recording]) -> Vec<SensorSet> {
    let mut candidates = BTreeSet::new();
    for r in recordings {
        if let Some(s) = r.sensor_set() {
            candidates.extend(s.subsets());
        }
    }
    candidates
        .into_iter()
        .filter(|key| {
            let mut per_user: BTreeMap<(&str, &str), usize> = BTreeMap::new();
            for r in recordings {
                if r.sensor_set().is_some_and(|s| key.is_subset(&s)) {
                    *per_user.entry((&r.user_id, &r.session_id)).or_default() += 1;
                }
            }
            per_user.values().any(|&n| n >= 2)
        })
        .collect()
}

/// Resamples and scales every recording.
pub fn prepare_all(recordings: &[Recording]) -> Result<Vec<Recording>, SignalError> {
    recordings.iter().map(signal::prepare).collect()
}

impl Dataset {
    /// Segments already prepared recordings. Recordings lacking one of the
    /// sensors, or too short for a single window, contribute nothing.
    pub fn from_prepared(prepared: &[Recording], sensor_set: &SensorSet) -> Result<Self, SignalError> {
        let duration = sensor_set.window_secs();
        let mut windows = Vec::new();
        for rec in prepared {
            let Some(available) = rec.sensor_set() else { continue };
            if !sensor_set.is_subset(&available) {
                continue;
            }
            match signal::segment(rec, sensor_set, duration) {
                Ok(w) => windows.extend(w),
                Err(SignalError::InsufficientData { .. }) => {
                    log::debug!("{} too short for {duration} s windows", rec.device_id)
                }
                Err(e) => return Err(e),
            }
        }
        Ok(Dataset {
            sensor_set: sensor_set.clone(),
            windows,
        })
    }

    /// Prepares and segments raw recordings.
    pub fn from_recordings(recordings: &[Recording], sensor_set: &SensorSet) -> Result<Self, SignalError> {
        Self::from_prepared(&prepare_all(recordings)?, sensor_set)
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn users(&self) -> Vec<String> {
        self.windows
            .iter()
            .map(|w| w.meta.user_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn devices(&self) -> Vec<String> {
        self.windows
            .iter()
            .map(|w| w.meta.device_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    /// Keeps windows whose predicate holds.
    pub fn filter(&self, keep: impl Fn(&Window) -> bool) -> Dataset {
        Dataset {
            sensor_set: self.sensor_set.clone(),
            windows: self.windows.iter().filter(|w| keep(w)).cloned().collect(),
        }
    }

    pub fn with_users(&self, users: &[String]) -> Dataset {
        self.filter(|w| users.contains(&w.meta.user_id))
    }

    /// SHA-256 over window identities and sample bits, in order.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.sensor_set.to_string().as_bytes());
        for w in &self.windows {
            h.update(w.meta.device_id.as_bytes());
            h.update(w.meta.start_ms().to_le_bytes());
            for v in &w.data {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Splits sorted user ids into (train, test), the last `n_test` users held out.
pub fn leave_users_out(users: &[String], n_test: usize) -> (Vec<String>, Vec<String>) {
    let mut sorted = users.to_vec();
    sorted.sort();
    let cut = sorted.len().saturating_sub(n_test);
    let test = sorted.split_off(cut);
    (sorted, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::synth::{synth_generate, SynthConfig};

    #[test]
    fn windows_per_device_and_key() {
        let cfg = SynthConfig { n_users: 2, duration_s: 65.0, ..SynthConfig::default() };
        let recs = synth_generate(&cfg, 4).unwrap();
        let acc = Dataset::from_recordings(&recs, &"acc".parse().unwrap()).unwrap();
        // 2 users x 4 devices x floor(65/20)
        assert_eq!(acc.len(), 2 * 4 * 3);
        let fused = Dataset::from_recordings(&recs, &"acc+gyro+ppg".parse().unwrap()).unwrap();
        // only the earbuds carry PPG
        assert_eq!(fused.len(), 2 * 2 * 2);
        assert!(fused.windows.iter().all(|w| w.data.len() == 7 * 3000));
        assert_eq!(acc.users(), vec!["u01".to_string(), "u02".to_string()]);
        assert_eq!(acc.content_hash(), acc.clone().content_hash());
    }

    #[test]
    fn split_holds_out_last_users() {
        let users: Vec<String> = (1..=12).map(|i| format!("u{i:02}")).collect();
        let (train, test) = leave_users_out(&users, 3);
        assert_eq!(train.len(), 9);
        assert_eq!(test, vec!["u10", "u11", "u12"]);
    }
}
