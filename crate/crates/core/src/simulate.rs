//! Replays two device streams window by window the way deployed devices
//! would: pick the model for their shared sensors, embed each device's
//! latest window, and match the pair.

use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::EncoderError;
use crate::matcher::{MatchDecision, MatcherError};
use crate::pairs::PairLabel;
use crate::registry::{select_model, Registry, RegistryError};
use crate::signal::{segment, DevicePlacement, Recording, SensorChannel, SensorSet, SignalError, Window};

#[derive(Debug, Error)]
pub enum SimulationError {
    #[error(transparent)]
    Registry(#[from] RegistryError),
    #[error(transparent)]
    Signal(#[from] SignalError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Matcher(#[from] MatcherError),
    #[error("no recording for user {user} at {placement}")]
    MissingRecording { user: String, placement: DevicePlacement },
    #[error("cannot splice: {0}")]
    Splice(String),
    #[error("streams {0} and {1} share no complete window")]
    NoAlignedWindows(String, String),
}

/// Who wears a device from `from` seconds onward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Wearer {
    pub from: f64,
    pub user_id: String,
}

/// One device's prepared signal, possibly handed between wearers.
#[derive(Debug, Clone)]
pub struct DeviceStream {
    pub device_id: String,
    pub placement: DevicePlacement,
    pub sensors: SensorSet,
    /// Sorted by `from`; the first entry starts the stream.
    pub wearers: Vec<Wearer>,
    pub recording: Recording,
}

impl DeviceStream {
    pub fn from_recording(recording: &Recording) -> Result<Self, SimulationError> {
        let sensors = recording
            .sensor_set()
            .ok_or_else(|| SimulationError::Splice(format!("{} has no complete sensor", recording.device_id)))?;
        Ok(DeviceStream {
            device_id: recording.device_id.clone(),
            placement: recording.placement,
            sensors,
            wearers: vec![Wearer { from: f64::NEG_INFINITY, user_id: recording.user_id.clone() }],
            recording: recording.clone(),
        })
    }

    /// Hands the device to the wearer of `next` at `at` seconds: samples
    /// before `at` come from this stream, the rest from `next`.
    pub fn handoff(&self, next: &Recording, at: f64) -> Result<Self, SimulationError> {
        let mut channels = Vec::with_capacity(self.recording.channels.len());
        for ch in &self.recording.channels {
            let other = next
                .channel(ch.kind, ch.axis)
                .ok_or_else(|| SimulationError::Splice(format!("{} lacks {}", next.device_id, ch.name())))?;
            let keep = ch.timestamps.partition_point(|&t| t < at);
            let from = other.timestamps.partition_point(|&t| t < at);
            let mut timestamps = ch.timestamps[..keep].to_vec();
            let mut values = ch.values[..keep].to_vec();
            timestamps.extend_from_slice(&other.timestamps[from..]);
            values.extend_from_slice(&other.values[from..]);
            channels.push(SensorChannel { timestamps, values, ..ch.clone() });
        }
        let mut recording = self.recording.clone();
        recording.channels = channels;
        recording.activities = next.activities.clone();
        let mut wearers = self.wearers.clone();
        wearers.retain(|w| w.from < at);
        wearers.push(Wearer { from: at, user_id: next.user_id.clone() });
        Ok(DeviceStream { recording, wearers, ..self.clone() })
    }

    /// Wearer for the whole of `[start, end)`, or `None` if it changed hands.
    pub fn wearer_over(&self, start: f64, end: f64) -> Option<&str> {
        let idx = self.wearers.partition_point(|w| w.from <= start).checked_sub(1)?;
        let next_change = self.wearers.get(idx + 1).map_or(f64::INFINITY, |w| w.from);
        (next_change >= end).then(|| self.wearers[idx].user_id.as_str())
    }
}

/// Finds the prepared recording for `user` at `placement`.
pub fn find_recording<'a>(
    recordings: &'a [Recording],
    user: &str,
    placement: DevicePlacement,
) -> Result<&'a Recording, SimulationError> {
    recordings
        .iter()
        .find(|r| r.user_id == user && r.placement == placement)
        .ok_or_else(|| SimulationError::MissingRecording { user: user.into(), placement })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Pacing {
    /// Wait one window duration between decisions, as live devices would.
    #[default]
    RealTime,
    Fast,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimEvent {
    pub index: usize,
    pub start_time: f64,
    pub key: SensorSet,
    /// Whether one wearer had both devices for the whole window.
    pub truth: PairLabel,
    pub probability: f64,
    pub decision: PairLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub key: SensorSet,
    pub windows: usize,
    pub matched: usize,
    pub match_rate: f64,
    /// Share of windows where the decision equals the truth.
    pub accuracy: f64,
    /// First handoff on either device, if any.
    pub swap_at: Option<f64>,
    /// 1-based position, among windows ending after the swap, of the first
    /// UNMATCHED decision.
    pub flip_latency: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationLog {
    pub device_a: String,
    pub device_b: String,
    pub events: Vec<SimEvent>,
    pub summary: SimSummary,
}

impl SimulationLog {
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "start_time", "key", "truth", "probability", "decision"])?;
        for e in &self.events {
            w.write_record([
                e.index.to_string(),
                e.start_time.to_string(),
                e.key.to_string(),
                label_str(e.truth).into(),
                format!("{:.6}", e.probability),
                label_str(e.decision).into(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn label_str(l: PairLabel) -> &'static str {
    match l {
        PairLabel::Matched => "MATCHED",
        PairLabel::Unmatched => "UNMATCHED",
    }
}

/// Runs continuous authentication between two devices.
pub fn simulate(
    registry: &Registry,
    a: &DeviceStream,
    b: &DeviceStream,
    threshold: f64,
    pacing: Pacing,
) -> Result<SimulationLog, SimulationError> {
    let bundle = select_model(registry, &a.sensors, &b.sensors)?;
    let key = &bundle.key;
    let secs = key.window_secs();
    let wa = segment(&a.recording, key, secs)?;
    let wb = segment(&b.recording, key, secs)?;
    let aligned: Vec<(&Window, &Window)> = wa
        .iter()
        .filter_map(|x| wb.iter().find(|y| y.meta.start_ms() == x.meta.start_ms()).map(|y| (x, y)))
        .collect();
    if aligned.is_empty() {
        return Err(SimulationError::NoAlignedWindows(a.device_id.clone(), b.device_id.clone()));
    }
    log::info!("{} <-> {}: model {key}, {} windows", a.device_id, b.device_id, aligned.len());

    let started = Instant::now();
    let mut events = Vec::with_capacity(aligned.len());
    for (index, (x, y)) in aligned.into_iter().enumerate() {
        if pacing == Pacing::RealTime {
            let due = Duration::from_secs(secs as u64 * (index as u64 + 1));
            if let Some(wait) = due.checked_sub(started.elapsed()) {
                std::thread::sleep(wait);
            }
        }
        let start = x.meta.start_time;
        let end = start + secs as f64;
        let truth = match (a.wearer_over(start, end), b.wearer_over(start, end)) {
            (Some(u), Some(v)) if u == v => PairLabel::Matched,
            _ => PairLabel::Unmatched,
        };
        let ea = bundle.encoder.embed(x)?;
        let eb = bundle.encoder.embed(y)?;
        let MatchDecision { probability, label, .. } = bundle.matcher.decide(&ea.values, &eb.values, threshold)?;
        log::debug!("t={start:.0}s p={probability:.3} {}", label_str(label));
        events.push(SimEvent { index, start_time: start, key: key.clone(), truth, probability, decision: label });
    }

    let swap_at = a
        .wearers
        .iter()
        .chain(&b.wearers)
        .map(|w| w.from)
        .filter(|t| t.is_finite())
        .fold(None, |m: Option<f64>, t| Some(m.map_or(t, |m| m.min(t))));
    let flip_latency = swap_at.and_then(|s| {
        events
            .iter()
            .filter(|e| e.start_time + secs as f64 > s)
            .position(|e| e.decision == PairLabel::Unmatched)
            .map(|p| p + 1)
    });
    let n = events.len();
    let matched = events.iter().filter(|e| e.decision == PairLabel::Matched).count();
    let correct = events.iter().filter(|e| e.decision == e.truth).count();
    Ok(SimulationLog {
        device_a: a.device_id.clone(),
        device_b: b.device_id.clone(),
        summary: SimSummary {
            key: key.clone(),
            windows: n,
            matched,
            match_rate: matched as f64 / n as f64,
            accuracy: correct as f64 / n as f64,
            swap_at,
            flip_latency,
        },
        events,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::prepare;
    use crate::signal::synth::{synth_generate, SynthConfig};

    fn recordings() -> Vec<Recording> {
        let cfg = SynthConfig { n_users: 2, duration_s: 90.0, ..SynthConfig::default() };
        synth_generate(&cfg, 3).unwrap().iter().map(|r| prepare(r).unwrap()).collect()
    }

    #[test]
    fn handoff_splices_samples_and_wearers() {
        let recs = recordings();
        let a = find_recording(&recs, "u01", DevicePlacement::RightEar).unwrap();
        let b = find_recording(&recs, "u02", DevicePlacement::RightEar).unwrap();
        let s = DeviceStream::from_recording(a).unwrap().handoff(b, 40.0).unwrap();
        let ch = &s.recording.channels[0];
        let i = ch.timestamps.partition_point(|&t| t < 40.0);
        assert_eq!(ch.values[i - 1], a.channels[0].values[i - 1]);
        assert_eq!(ch.values[i], b.channels[0].values[i]);
        assert_eq!(ch.len(), a.channels[0].len());
        assert_eq!(s.wearer_over(0.0, 20.0), Some("u01"));
        assert_eq!(s.wearer_over(20.0, 40.0), Some("u01"));
        assert_eq!(s.wearer_over(30.0, 50.0), None);
        assert_eq!(s.wearer_over(40.0, 60.0), Some("u02"));
    }

    #[test]
    fn missing_recording_is_reported() {
        let recs = recordings();
        assert!(matches!(
            find_recording(&recs, "u09", DevicePlacement::Head),
            Err(SimulationError::MissingRecording { .. })
        ));
    }

    #[test]
    fn disjoint_sensors_have_no_model() {
        let recs = recordings();
        let a = DeviceStream::from_recording(find_recording(&recs, "u01", DevicePlacement::Wrist).unwrap()).unwrap();
        let mut b = DeviceStream::from_recording(find_recording(&recs, "u01", DevicePlacement::LeftEar).unwrap()).unwrap();
        b.sensors = "gyro+ppg".parse().unwrap();
        let err = simulate(&Registry::default(), &a, &b, 0.5, Pacing::Fast).unwrap_err();
        assert!(matches!(err, SimulationError::Registry(RegistryError::NoOverlap { .. })));
    }
}
