//! CSV + JSON sidecar recording format.
//!
//! One CSV per device recording: a header row with `t` (seconds) followed by
//! channel columns named `<kind>_<axis>` (`acc_x`, `gyro_z`, `ppg`). The
//! sidecar `<stem>.json` carries a [`RecordingMeta`]. Timestamps must come
//! from a clock shared by every device in the session.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{
    ActivitySpan, DevicePlacement, Recording, Result, SensorChannel, SensorKind, SignalError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordingMeta {
    pub user_id: String,
    pub device_id: String,
    pub placement: DevicePlacement,
    pub session_id: String,
    /// Native sampling rate per sensor kind, in Hz.
    pub native_rates: BTreeMap<SensorKind, f64>,
    #[serde(default)]
    pub activities: Vec<ActivitySpan>,
}

impl RecordingMeta {
    pub fn of(recording: &Recording) -> Self {
        let native_rates = recording
            .channels
            .iter()
            .map(|c| (c.kind, c.native_rate))
            .collect();
        RecordingMeta {
            user_id: recording.user_id.clone(),
            device_id: recording.device_id.clone(),
            placement: recording.placement,
            session_id: recording.session_id.clone(),
            native_rates,
            activities: recording.activities.clone(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path)?;
        serde_json::from_reader(std::io::BufReader::new(file)).map_err(|e| malformed(path, e))
    }
}

/// `recording.csv` → `recording.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

fn malformed(path: &Path, reason: impl ToString) -> SignalError {
    SignalError::MalformedFile {
        path: path.display().to_string(),
        reason: reason.to_string(),
    }
}

/// Reads a recording CSV described by `meta`.
///
/// Rows with a timestamp equal to the previous row are dropped (first wins);
/// a timestamp lower than its predecessor is an error.
pub fn load_recording(path: &Path, meta: &RecordingMeta) -> Result<Recording> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.kind() {
            csv::ErrorKind::Io(_) => SignalError::Io(std::io::Error::other(e.to_string())),
            _ => malformed(path, e),
        })?;
    let headers = reader.headers().map_err(|e| malformed(path, e))?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(SignalError::EmptyChannel("t".into()));
    }
    if &headers[0] != "t" {
        return Err(malformed(path, format!("first column must be `t`, found `{}`", &headers[0])));
    }
    let mut columns = Vec::with_capacity(headers.len() - 1);
    for name in headers.iter().skip(1) {
        let (kind, axis) = SensorKind::parse_column(name)
            .ok_or_else(|| malformed(path, format!("unknown column `{name}`")))?;
        if columns.contains(&(kind, axis)) {
            return Err(malformed(path, format!("duplicate column `{name}`")));
        }
        columns.push((kind, axis));
    }
    if columns.is_empty() {
        return Err(malformed(path, "no sensor columns"));
    }

    let mut timestamps: Vec<f64> = Vec::new();
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); columns.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(path, e))?;
        if record.len() != headers.len() {
            return Err(malformed(path, format!("row {} has {} fields", row + 1, record.len())));
        }
        let parse = |s: &str| -> Result<f64> {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| malformed(path, format!("row {}: bad number `{s}`", row + 1)))
        };
        let t = parse(&record[0])?;
        if let Some(&prev) = timestamps.last() {
            if t < prev {
                return Err(SignalError::NonMonotonicTime { row: row + 1, prev, next: t });
            }
            if t == prev {
                continue;
            }
        }
        timestamps.push(t);
        for (i, col) in values.iter_mut().enumerate() {
            col.push(parse(&record[i + 1])?);
        }
    }
    if timestamps.is_empty() {
        let (kind, axis) = columns[0];
        return Err(SignalError::EmptyChannel(kind.column_name(axis)));
    }

    let estimated_rate = if timestamps.len() > 1 {
        (timestamps.len() - 1) as f64 / (timestamps[timestamps.len() - 1] - timestamps[0])
    } else {
        0.0
    };
    let mut channels = Vec::with_capacity(columns.len());
    for ((kind, axis), vals) in columns.into_iter().zip(values) {
        let native_rate = meta.native_rates.get(&kind).copied().unwrap_or(estimated_rate);
        if !(native_rate > 0.0) {
            return Err(malformed(path, format!("no positive native rate for {kind}")));
        }
        channels.push(SensorChannel {
            kind,
            axis,
            timestamps: timestamps.clone(),
            values: vals,
            native_rate,
        });
    }
    channels.sort_by_key(|c| (c.kind, c.axis));

    Ok(Recording {
        user_id: meta.user_id.clone(),
        device_id: meta.device_id.clone(),
        placement: meta.placement,
        session_id: meta.session_id.clone(),
        channels,
        activities: meta.activities.clone(),
        zero_variance: Vec::new(),
    })
}

/// Reads `path` and its JSON sidecar.
pub fn load_recording_with_sidecar(path: &Path) -> Result<Recording> {
    let meta = RecordingMeta::load(&sidecar_path(path))?;
    load_recording(path, &meta)
}

/// Writes the CSV and its sidecar. All channels must share one time base.
pub fn write_recording(recording: &Recording, path: &Path) -> Result<()> {
    let first = recording
        .channels
        .first()
        .ok_or_else(|| SignalError::EmptyChannel("<none>".into()))?;
    if recording
        .channels
        .iter()
        .any(|c| c.timestamps != first.timestamps || c.values.len() != c.timestamps.len())
    {
        return Err(SignalError::InvalidConfig(
            "channels of one CSV file must share timestamps".into(),
        ));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let mut header = String::from("t");
    for c in &recording.channels {
        header.push(',');
        header.push_str(&c.name());
    }
    writeln!(out, "{header}")?;
    let mut line = String::new();
    for (i, t) in first.timestamps.iter().enumerate() {
        use std::fmt::Write as _;
        line.clear();
        write!(line, "{t}").unwrap();
        for c in &recording.channels {
            write!(line, ",{}", c.values[i]).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    out.flush()?;

    let meta = RecordingMeta::of(recording);
    let mut side = BufWriter::new(File::create(sidecar_path(path))?);
    serde_json::to_writer_pretty(&mut side, &meta).map_err(|e| malformed(path, e))?;
    side.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> RecordingMeta {
        RecordingMeta {
            user_id: "u01".into(),
            device_id: "u01-head".into(),
            placement: DevicePlacement::Head,
            session_id: "s1".into(),
            native_rates: BTreeMap::from([(SensorKind::Acc, 52.0)]),
            activities: vec![],
        }
    }

    fn write(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("rec.csv");
        std::fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn loads_three_axis_accel_at_52hz() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("t,acc_x,acc_y,acc_z\n");
        for i in 0..104 {
            let t = i as f64 / 52.0;
            body += &format!("{t},{},{},{}\n", t.sin(), t.cos(), 9.81);
        }
        let rec = load_recording(&write(dir.path(), &body), &meta()).unwrap();
        assert_eq!(rec.channels.len(), 3);
        assert!(rec.channels.iter().all(|c| c.native_rate == 52.0 && c.len() == 104));
        assert_eq!(rec.sensor_set().unwrap().to_string(), "acc");
    }

    #[test]
    fn empty_file_is_empty_channel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "");
        assert!(matches!(load_recording(&p, &meta()), Err(SignalError::EmptyChannel(_))));
        let p = write(dir.path(), "t,acc_x\n");
        assert!(matches!(load_recording(&p, &meta()), Err(SignalError::EmptyChannel(_))));
    }

    #[test]
    fn duplicate_timestamp_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let mut body = String::from("t,ppg\n");
        for i in 0..10 {
            // row 5 repeats row 4's timestamp with a different value
            let t = if i == 5 { 4.0 } else { i as f64 };
            body += &format!("{t},{i}\n");
        }
        let rec = load_recording(&write(dir.path(), &body), &meta()).unwrap();
        let ch = &rec.channels[0];
        assert_eq!(ch.len(), 9);
        assert_eq!(ch.values[4], 4.0);
        assert_eq!(ch.values[5], 6.0);
    }

    #[test]
    fn backwards_time_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "t,ppg\n0,1\n1,2\n0.5,3\n");
        assert!(matches!(
            load_recording(&p, &meta()),
            Err(SignalError::NonMonotonicTime { row: 3, .. })
        ));
    }

    #[test]
    fn bad_columns_and_numbers_rejected() {
        let dir = tempfile::tempdir().unwrap();
        for body in ["time,ppg\n0,1\n", "t,temp\n0,1\n", "t,ppg\n0,abc\n", "t,ppg\n0,1,2\n"] {
            let p = write(dir.path(), body);
            assert!(
                matches!(load_recording(&p, &meta()), Err(SignalError::MalformedFile { .. })),
                "{body:?}"
            );
        }
    }

    #[test]
    fn write_then_read_back() {
        let dir = tempfile::tempdir().unwrap();
        let ts: Vec<f64> = (0..50).map(|i| i as f64 / 52.0).collect();
        let rec = Recording {
            user_id: "u01".into(),
            device_id: "u01-head".into(),
            placement: DevicePlacement::Head,
            session_id: "s1".into(),
            channels: (0..3)
                .map(|a| SensorChannel {
                    kind: SensorKind::Acc,
                    axis: a,
                    timestamps: ts.clone(),
                    values: ts.iter().map(|t| (t * 3.1 + a as f64).sin() * 0.1).collect(),
                    native_rate: 52.0,
                })
                .collect(),
            activities: vec![],
            zero_variance: vec![],
        };
        let p = dir.path().join("x.csv");
        write_recording(&rec, &p).unwrap();
        let back = load_recording_with_sidecar(&p).unwrap();
        assert_eq!(back, rec);
    }
}
