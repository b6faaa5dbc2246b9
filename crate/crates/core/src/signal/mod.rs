//! Sensor recordings and their preparation into model-ready windows.
//!
//! The pipeline is `load_recording` (or [`synth::synth_generate`]) →
//! [`resample`] every channel onto a 100 Hz grid → [`standard_scale`] with
//! per-recording, per-channel statistics → [`segment`] into non-overlapping
//! windows aligned to the session clock.

mod io;
pub mod synth;

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{load_recording, load_recording_with_sidecar, write_recording, RecordingMeta};

/// Model input rate. Every channel is resampled to this before windowing.
pub const TARGET_RATE_HZ: f64 = 100.0;

/// Window length for sensor sets without PPG.
pub const IMU_WINDOW_SECS: u32 = 20;
/// Window length whenever PPG is part of the sensor set.
pub const PPG_WINDOW_SECS: u32 = 30;

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("malformed file {path}: {reason}")]
    MalformedFile { path: String, reason: String },
    #[error("channel {0} has no samples")]
    EmptyChannel(String),
    #[error("timestamps go backwards at row {row} ({prev} -> {next})")]
    NonMonotonicTime { row: usize, prev: f64, next: f64 },
    #[error("channel needs at least 2 samples to resample, got {0}")]
    TooShort(usize),
    #[error("recording spans {available:.3} s, shorter than one {needed} s window")]
    InsufficientData { available: f64, needed: u32 },
    #[error("recording has no {0} channel")]
    MissingSensor(SensorKind),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("window duration {got} s does not fit sensor set {set} (expected {expected} s)")]
    WrongDuration { set: SensorSet, got: u32, expected: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SignalError> = std::result::Result<T, E>;

/// Kind of physical sensor. Declaration order is the canonical channel order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SensorKind {
    Acc,
    Gyro,
    Ppg,
}

impl SensorKind {
    pub const ALL: [SensorKind; 3] = [SensorKind::Acc, SensorKind::Gyro, SensorKind::Ppg];

    pub fn axes(self) -> usize {
        match self {
            SensorKind::Acc | SensorKind::Gyro => 3,
            SensorKind::Ppg => 1,
        }
    }

    pub fn prefix(self) -> &'static str {
        match self {
            SensorKind::Acc => "acc",
            SensorKind::Gyro => "gyro",
            SensorKind::Ppg => "ppg",
        }
    }

    /// CSV column name for one axis, e.g. `acc_x` or `ppg`.
    pub fn column_name(self, axis: usize) -> String {
        match self {
            SensorKind::Ppg => "ppg".to_string(),
            _ => format!("{}_{}", self.prefix(), ["x", "y", "z"][axis]),
        }
    }

    /// Inverse of [`SensorKind::column_name`].
    pub fn parse_column(name: &str) -> Option<(SensorKind, usize)> {
        if name == "ppg" {
            return Some((SensorKind::Ppg, 0));
        }
        let (prefix, axis) = name.rsplit_once('_')?;
        let kind = prefix.parse::<SensorKind>().ok()?;
        if kind == SensorKind::Ppg {
            return None;
        }
        let axis = match axis {
            "x" => 0,
            "y" => 1,
            "z" => 2,
            _ => return None,
        };
        Some((kind, axis))
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.prefix())
    }
}

impl FromStr for SensorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acc" | "accel" | "accelerometer" => Ok(SensorKind::Acc),
            "gyro" | "gyroscope" => Ok(SensorKind::Gyro),
            "ppg" => Ok(SensorKind::Ppg),
            other => Err(format!("unknown sensor kind `{other}`")),
        }
    }
}

/// Canonical, nonempty set of sensor kinds. Doubles as the registry key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct SensorSet(BTreeSet<SensorKind>);

impl SensorSet {
    /// Returns `None` for an empty set.
    pub fn new(kinds: impl IntoIterator<Item = SensorKind>) -> Option<Self> {
        let set: BTreeSet<_> = kinds.into_iter().collect();
        (!set.is_empty()).then_some(SensorSet(set))
    }

    pub fn single(kind: SensorKind) -> Self {
        SensorSet(BTreeSet::from([kind]))
    }

    pub fn kinds(&self) -> impl Iterator<Item = SensorKind> + '_ {
        self.0.iter().copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, kind: SensorKind) -> bool {
        self.0.contains(&kind)
    }

    pub fn is_subset(&self, other: &SensorSet) -> bool {
        self.0.is_subset(&other.0)
    }

    pub fn intersection(&self, other: &SensorSet) -> Option<SensorSet> {
        SensorSet::new(self.0.intersection(&other.0).copied())
    }

    /// Number of model input channels (sum of axes).
    pub fn channel_count(&self) -> usize {
        self.kinds().map(SensorKind::axes).sum()
    }

    /// Channel names in canonical order.
    pub fn channel_names(&self) -> Vec<String> {
        self.kinds()
            .flat_map(|k| (0..k.axes()).map(move |a| k.column_name(a)))
            .collect()
    }

    /// 30 s when PPG is present, 20 s otherwise.
    pub fn window_secs(&self) -> u32 {
        if self.contains(SensorKind::Ppg) {
            PPG_WINDOW_SECS
        } else {
            IMU_WINDOW_SECS
        }
    }

    /// All nonempty subsets, in no particular order.
    pub fn subsets(&self) -> Vec<SensorSet> {
        let kinds: Vec<_> = self.kinds().collect();
        (1u32..(1 << kinds.len()))
            .filter_map(|mask| {
                SensorSet::new(
                    kinds
                        .iter()
                        .enumerate()
                        .filter(|(i, _)| mask & (1 << i) != 0)
                        .map(|(_, k)| *k),
                )
            })
            .collect()
    }
}

impl TryFrom<Vec<SensorKind>> for SensorSet {
    type Error = String;

    fn try_from(v: Vec<SensorKind>) -> Result<Self, Self::Error> {
        SensorSet::new(v).ok_or_else(|| "sensor set must not be empty".to_string())
    }
}

impl TryFrom<String> for SensorSet {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<SensorSet> for String {
    fn from(s: SensorSet) -> Self {
        s.to_string()
    }
}

impl fmt::Display for SensorSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<_> = self.kinds().map(SensorKind::prefix).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for SensorSet {
    type Err = String;

    /// Parses `acc+gyro` style keys.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let kinds = s
            .split('+')
            .map(str::parse::<SensorKind>)
            .collect::<Result<Vec<_>, _>>()?;
        SensorSet::try_from(kinds)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DevicePlacement {
    LeftEar,
    RightEar,
    Head,
    Wrist,
}

impl DevicePlacement {
    pub const ALL: [DevicePlacement; 4] = [
        DevicePlacement::LeftEar,
        DevicePlacement::RightEar,
        DevicePlacement::Head,
        DevicePlacement::Wrist,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DevicePlacement::LeftEar => "left_ear",
            DevicePlacement::RightEar => "right_ear",
            DevicePlacement::Head => "head",
            DevicePlacement::Wrist => "wrist",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for DevicePlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DevicePlacement {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "left_ear" | "l_ear" | "lear" => Ok(DevicePlacement::LeftEar),
            "right_ear" | "r_ear" | "rear" => Ok(DevicePlacement::RightEar),
            "head" => Ok(DevicePlacement::Head),
            "wrist" => Ok(DevicePlacement::Wrist),
            other => Err(format!("unknown placement `{other}`")),
        }
    }
}

/// Activity phase of a session.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activity {
    Rest,
    Physical,
    Mental,
}

impl Activity {
    pub const ALL: [Activity; 3] = [Activity::Rest, Activity::Physical, Activity::Mental];

    pub fn as_str(self) -> &'static str {
        match self {
            Activity::Rest => "rest",
            Activity::Physical => "physical",
            Activity::Mental => "mental",
        }
    }
}

impl fmt::Display for Activity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Half-open interval `[start, end)` of the session clock spent in one activity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActivitySpan {
    pub start: f64,
    pub end: f64,
    pub activity: Activity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorChannel {
    pub kind: SensorKind,
    pub axis: usize,
    pub timestamps: Vec<f64>,
    pub values: Vec<f64>,
    pub native_rate: f64,
}

impl SensorChannel {
    pub fn name(&self) -> String {
        self.kind.column_name(self.axis)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub user_id: String,
    pub device_id: String,
    pub placement: DevicePlacement,
    pub session_id: String,
    pub channels: Vec<SensorChannel>,
    /// Optional activity labels on the session clock.
    pub activities: Vec<ActivitySpan>,
    /// Channels that were flat when scaled and are now all zeros.
    pub zero_variance: Vec<String>,
}

impl Recording {
    /// Kinds for which every axis is present.
    pub fn sensor_set(&self) -> Option<SensorSet> {
        SensorSet::new(
            SensorKind::ALL
                .into_iter()
                .filter(|k| (0..k.axes()).all(|a| self.channel(*k, a).is_some())),
        )
    }

    pub fn channel(&self, kind: SensorKind, axis: usize) -> Option<&SensorChannel> {
        self.channels
            .iter()
            .find(|c| c.kind == kind && c.axis == axis)
    }

    /// First and last timestamp over all channels.
    pub fn span(&self) -> Option<(f64, f64)> {
        let t0 = self
            .channels
            .iter()
            .filter_map(|c| c.timestamps.first())
            .fold(f64::INFINITY, |a, &b| a.min(b));
        let t1 = self
            .channels
            .iter()
            .filter_map(|c| c.timestamps.last())
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        (t0.is_finite() && t1.is_finite()).then_some((t0, t1))
    }

    /// Activity covering most of `[start, end)`, if labels exist.
    pub fn activity_over(&self, start: f64, end: f64) -> Option<Activity> {
        let mut best: Option<(f64, Activity)> = None;
        for span in &self.activities {
            let overlap = span.end.min(end) - span.start.max(start);
            if overlap > 0.0 && best.is_none_or(|(o, _)| overlap > o) {
                best = Some((overlap, span.activity));
            }
        }
        best.map(|(_, a)| a)
    }
}

/// Identity of a window, shared with the embeddings computed from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowMeta {
    pub user_id: String,
    pub device_id: String,
    pub placement: DevicePlacement,
    pub sensor_set: SensorSet,
    pub start_time: f64,
    pub duration: u32,
    pub sample_rate: f64,
    #[serde(default)]
    pub activity: Option<Activity>,
}

impl WindowMeta {
    /// Start time on the session clock in whole milliseconds.
    pub fn start_ms(&self) -> i64 {
        (self.start_time * 1000.0).round() as i64
    }

    pub fn key(&self) -> WindowKey {
        WindowKey {
            device_id: self.device_id.clone(),
            start_ms: self.start_ms(),
        }
    }
}

/// Hashable identity of a window: one device at one start time.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct WindowKey {
    pub device_id: String,
    pub start_ms: i64,
}

/// A fixed-length, 100 Hz, scaled multi-channel segment.
///
/// `data` is channel-major: `data[c * samples + i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub meta: WindowMeta,
    pub data: Vec<f32>,
}

impl Window {
    pub fn channels(&self) -> usize {
        self.meta.sensor_set.channel_count()
    }

    pub fn samples(&self) -> usize {
        self.data.len() / self.channels().max(1)
    }

    pub fn channel_data(&self, c: usize) -> &[f32] {
        let n = self.samples();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn save_json(&self, path: &std::path::Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self).map_err(|e| SignalError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load_json(path: &std::path::Path) -> Result<Window> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let w: Window = serde_json::from_reader(f).map_err(|e| SignalError::MalformedFile {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        let expected = w.meta.sensor_set.channel_count()
            * (w.meta.duration as f64 * w.meta.sample_rate).round() as usize;
        if w.data.len() != expected || w.data.iter().any(|v| !v.is_finite()) {
            return Err(SignalError::MalformedFile {
                path: path.display().to_string(),
                reason: format!("expected {expected} finite samples, found {}", w.data.len()),
            });
        }
        Ok(w)
    }
}

/// Resamples onto a uniform grid anchored at the first timestamp using
/// linear interpolation. The output spans `[t0, t_last]`.
pub fn resample(channel: &SensorChannel, target_rate: f64) -> Result<SensorChannel> {
    let n = channel.len();
    if n < 2 {
        return Err(SignalError::TooShort(n));
    }
    if !(target_rate > 0.0) {
        return Err(SignalError::InvalidConfig(format!(
            "target rate must be positive, got {target_rate}"
        )));
    }
    let ts = &channel.timestamps;
    let vs = &channel.values;
    let t0 = ts[0];
    let t_last = ts[n - 1];
    let count = ((t_last - t0) * target_rate + TIME_EPS).floor() as usize + 1;

    let mut out_t = Vec::with_capacity(count);
    let mut out_v = Vec::with_capacity(count);
    let mut seg = 0usize;
    for i in 0..count {
        let t = t0 + i as f64 / target_rate;
        while seg + 2 < n && ts[seg + 1] <= t {
            seg += 1;
        }
        let (ta, tb) = (ts[seg], ts[seg + 1]);
        let frac = ((t - ta) / (tb - ta)).clamp(0.0, 1.0);
        let v = if frac == 0.0 {
            vs[seg]
        } else if frac == 1.0 {
            vs[seg + 1]
        } else {
            vs[seg] + frac * (vs[seg + 1] - vs[seg])
        };
        out_t.push(t);
        out_v.push(v);
    }
    Ok(SensorChannel {
        kind: channel.kind,
        axis: channel.axis,
        timestamps: out_t,
        values: out_v,
        native_rate: target_rate,
    })
}

/// Resamples every channel of a recording to `target_rate`.
pub fn resample_recording(recording: &Recording, target_rate: f64) -> Result<Recording> {
    let channels = recording
        .channels
        .iter()
        .map(|c| resample(c, target_rate))
        .collect::<Result<Vec<_>>>()?;
    Ok(Recording {
        channels,
        ..recording.clone()
    })
}

/// Mean and population standard deviation.
pub fn moments(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Standardizes each channel with its own mean and (population) standard
/// deviation. Flat channels become all zeros and are listed in
/// `zero_variance`.
pub fn standard_scale(recording: &Recording) -> Result<Recording> {
    let mut out = recording.clone();
    for ch in &mut out.channels {
        if ch.len() < 2 {
            return Err(SignalError::TooShort(ch.len()));
        }
        let (mean, std) = moments(&ch.values);
        if std <= 1e-12 * mean.abs().max(1.0) {
            ch.values.iter_mut().for_each(|v| *v = 0.0);
            let name = ch.name();
            if !out.zero_variance.contains(&name) {
                out.zero_variance.push(name);
            }
            continue;
        }
        // Second pass on the centered data removes the residual mean left by
        // rounding in the first pass.
        ch.values.iter_mut().for_each(|v| *v = (*v - mean) / std);
        let (m2, s2) = moments(&ch.values);
        ch.values.iter_mut().for_each(|v| *v = (*v - m2) / s2);
    }
    Ok(out)
}

/// Resample to 100 Hz then scale.
pub fn prepare(recording: &Recording) -> Result<Recording> {
    standard_scale(&resample_recording(recording, TARGET_RATE_HZ)?)
}

/// Cuts a resampled, scaled recording into non-overlapping windows.
///
/// Window starts sit on multiples of `duration` on the session clock, so
/// windows from different devices of one session line up by `start_time`.
/// A window is emitted only when the recording covers `[start, start + duration]`.
pub fn segment(recording: &Recording, sensor_set: &SensorSet, duration: u32) -> Result<Vec<Window>> {
    let expected = sensor_set.window_secs();
    if duration != expected {
        return Err(SignalError::WrongDuration {
            set: sensor_set.clone(),
            got: duration,
            expected,
        });
    }
    let mut channels = Vec::with_capacity(sensor_set.channel_count());
    for kind in sensor_set.kinds() {
        for axis in 0..kind.axes() {
            let ch = recording
                .channel(kind, axis)
                .ok_or(SignalError::MissingSensor(kind))?;
            if ch.is_empty() {
                return Err(SignalError::EmptyChannel(ch.name()));
            }
            channels.push(ch);
        }
    }

    let rate = TARGET_RATE_HZ;
    let samples = duration as usize * rate as usize;
    // Common coverage of all the channels.
    let t0 = channels
        .iter()
        .map(|c| c.timestamps[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let t_end = channels
        .iter()
        .map(|c| *c.timestamps.last().unwrap())
        .fold(f64::INFINITY, f64::min);

    let d = duration as f64;
    let mut k = ((t0 - TIME_EPS) / d).ceil() as i64;
    let mut windows = Vec::new();
    loop {
        let start = k as f64 * d;
        if start + d > t_end + TIME_EPS {
            break;
        }
        let mut data = Vec::with_capacity(samples * channels.len());
        let mut ok = true;
        for ch in &channels {
            let offset = ((start - ch.timestamps[0]) * rate).round();
            if offset < 0.0 || offset as usize + samples > ch.len() {
                ok = false;
                break;
            }
            let offset = offset as usize;
            data.extend(ch.values[offset..offset + samples].iter().map(|&v| v as f32));
        }
        if ok && data.iter().all(|v| v.is_finite()) {
            windows.push(Window {
                meta: WindowMeta {
                    user_id: recording.user_id.clone(),
                    device_id: recording.device_id.clone(),
                    placement: recording.placement,
                    sensor_set: sensor_set.clone(),
                    start_time: start,
                    duration,
                    sample_rate: rate,
                    activity: recording.activity_over(start, start + d),
                },
                data,
            });
        }
        k += 1;
    }
    if windows.is_empty() {
        return Err(SignalError::InsufficientData {
            available: (t_end - t0).max(0.0),
            needed: duration,
        });
    }
    Ok(windows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn channel(kind: SensorKind, axis: usize, rate: f64, f: impl Fn(f64) -> f64, secs: f64) -> SensorChannel {
        let n = (secs * rate).round() as usize + 1;
        let timestamps: Vec<f64> = (0..n).map(|i| i as f64 / rate).collect();
        let values = timestamps.iter().map(|&t| f(t)).collect();
        SensorChannel {
            kind,
            axis,
            timestamps,
            values,
            native_rate: rate,
        }
    }

    fn recording(channels: Vec<SensorChannel>) -> Recording {
        Recording {
            user_id: "u1".into(),
            device_id: "d1".into(),
            placement: DevicePlacement::LeftEar,
            session_id: "s1".into(),
            channels,
            activities: vec![],
            zero_variance: vec![],
        }
    }

    fn imu(secs: f64) -> Recording {
        recording(
            (0..3)
                .map(|a| channel(SensorKind::Acc, a, 100.0, |t| (t * (a + 1) as f64).sin(), secs))
                .collect(),
        )
    }

    #[test]
    fn resample_constant_is_exact() {
        let ch = channel(SensorKind::Ppg, 0, 52.0, |_| 5.0, 10.0);
        let out = resample(&ch, 100.0).unwrap();
        assert!(out.values.iter().all(|&v| v == 5.0));
        assert_eq!(out.timestamps[0], 0.0);
        assert!((out.timestamps.last().unwrap() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn resample_ramp_is_exact() {
        let ch = channel(SensorKind::Acc, 0, 32.0, |t| t, 10.0);
        let out = resample(&ch, 100.0).unwrap();
        let err = out
            .timestamps
            .iter()
            .zip(&out.values)
            .map(|(t, v)| (t - v).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn resample_sine_close_to_analytic() {
        let f = |t: f64| (2.0 * std::f64::consts::PI * t).sin();
        let ch = channel(SensorKind::Acc, 0, 52.0, f, 10.0);
        let out = resample(&ch, 100.0).unwrap();
        let err = out
            .timestamps
            .iter()
            .zip(&out.values)
            .map(|(&t, v)| (f(t) - v).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.01, "{err}");
    }

    #[test]
    fn resample_rejects_single_sample() {
        let ch = channel(SensorKind::Acc, 0, 52.0, |_| 1.0, 0.0);
        assert!(matches!(resample(&ch, 100.0), Err(SignalError::TooShort(1))));
    }

    #[test]
    fn scale_unit_moments() {
        let mut ch = channel(SensorKind::Acc, 0, 1.0, |t| t + 1.0, 4.0);
        assert_eq!(ch.values, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
        ch.native_rate = 1.0;
        let out = standard_scale(&recording(vec![ch])).unwrap();
        let (m, s) = moments(&out.channels[0].values);
        assert!(m.abs() < 1e-12 && (s - 1.0).abs() < 1e-12);
        assert!(out.zero_variance.is_empty());
    }

    #[test]
    fn scale_flat_channel_zero_filled_and_flagged() {
        let ch = channel(SensorKind::Ppg, 0, 1.0, |_| 7.0, 2.0);
        let out = standard_scale(&recording(vec![ch])).unwrap();
        assert_eq!(out.channels[0].values, vec![0.0; 3]);
        assert_eq!(out.zero_variance, vec!["ppg".to_string()]);
    }

    #[test]
    fn segment_discards_trailing_partial() {
        let rec = prepare(&imu(65.0)).unwrap();
        let set = SensorSet::single(SensorKind::Acc);
        let w = segment(&rec, &set, 20).unwrap();
        assert_eq!(w.len(), 3);
        assert!(w.iter().all(|w| w.samples() == 2000 && w.channels() == 3));
        let starts: Vec<f64> = w.iter().map(|w| w.meta.start_time).collect();
        assert_eq!(starts, vec![0.0, 20.0, 40.0]);
    }

    #[test]
    fn segment_ppg_single_window() {
        let rec = prepare(&recording(vec![channel(
            SensorKind::Ppg,
            0,
            100.0,
            |t| (7.0 * t).sin(),
            30.0,
        )]))
        .unwrap();
        let w = segment(&rec, &SensorSet::single(SensorKind::Ppg), 30).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].data.len(), 3000);
    }

    #[test]
    fn segment_too_short() {
        let rec = prepare(&imu(19.99)).unwrap();
        let err = segment(&rec, &SensorSet::single(SensorKind::Acc), 20).unwrap_err();
        assert!(matches!(err, SignalError::InsufficientData { .. }));
    }

    #[test]
    fn segment_rejects_wrong_duration_for_ppg() {
        let set: SensorSet = "acc+ppg".parse().unwrap();
        let err = segment(&imu(65.0), &set, 20).unwrap_err();
        assert!(matches!(err, SignalError::WrongDuration { expected: 30, .. }));
    }

    #[test]
    fn segment_missing_sensor() {
        let err = segment(&imu(65.0), &SensorSet::single(SensorKind::Gyro), 20).unwrap_err();
        assert!(matches!(err, SignalError::MissingSensor(SensorKind::Gyro)));
    }

    #[test]
    fn sensor_set_parsing_and_order() {
        let s: SensorSet = "ppg+acc+gyro".parse().unwrap();
        assert_eq!(s.to_string(), "acc+gyro+ppg");
        assert_eq!(s.channel_count(), 7);
        assert_eq!(s.window_secs(), 30);
        assert_eq!(s.subsets().len(), 7);
        assert!("".parse::<SensorSet>().is_err());
        assert_eq!(
            SensorKind::parse_column("gyro_z"),
            Some((SensorKind::Gyro, 2))
        );
        assert_eq!(SensorKind::parse_column("ppg_x"), None);
    }

    #[test]
    fn activity_majority_label() {
        let mut rec = imu(65.0);
        rec.activities = vec![
            ActivitySpan { start: 0.0, end: 25.0, activity: Activity::Rest },
            ActivitySpan { start: 25.0, end: 65.0, activity: Activity::Physical },
        ];
        assert_eq!(rec.activity_over(0.0, 20.0), Some(Activity::Rest));
        assert_eq!(rec.activity_over(20.0, 40.0), Some(Activity::Physical));
        assert_eq!(rec.activity_over(100.0, 120.0), None);
    }
}
