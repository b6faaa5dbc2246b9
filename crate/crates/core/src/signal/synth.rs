//! Seeded multi-user, multi-device wearable data generator.
//!
//! Each synthetic user has one set of body-level latent processes sampled on
//! a 200 Hz master clock:
//!
//! * heart rate: an Ornstein-Uhlenbeck walk clamped to 60–120 bpm whose
//!   target follows the activity schedule; it drives a pulse train with
//!   per-beat amplitude jitter and respiratory modulation,
//! * motion: one independent six-axis process per placement (gait harmonics
//!   at a shared, drifting cadence, transient gestures, slow sway). A device
//!   sees the Cholesky mixture of these processes given by the placement
//!   proximity matrix, so near placements share most of their motion,
//! * ballistocardiographic and respiratory micro-motion, strongest on the head.
//!
//! Devices then apply their own rotation, gain, offset, PPG morphology filter
//! and noise, and sample the result at their native rate.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{
    Activity, ActivitySpan, DevicePlacement, Recording, Result, SensorChannel, SensorKind,
    SensorSet, SignalError,
};

const MASTER_RATE: f64 = 200.0;
const GRAVITY: f64 = 9.81;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceSpec {
    pub placement: DevicePlacement,
    pub sensors: SensorSet,
    pub rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpec {
    pub activity: Activity,
    /// Relative share of the session; shares are normalized over the schedule.
    pub share: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Proximity {
    pub a: DevicePlacement,
    pub b: DevicePlacement,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_users: usize,
    pub duration_s: f64,
    pub devices: Vec<DeviceSpec>,
    pub schedule: Vec<PhaseSpec>,
    /// Pairwise motion correlation between placements; unspecified pairs are 0.
    pub proximity: Vec<Proximity>,
    /// IMU sensor noise relative to typical motion amplitude.
    pub imu_noise: f64,
    /// PPG sensor noise relative to pulse amplitude.
    pub ppg_noise: f64,
}

impl Default for SynthConfig {
    /// Twelve users wearing two earbuds, a headband and a wristband for ten
    /// minutes of rest, physical and mental activity.
    fn default() -> Self {
        use DevicePlacement::*;
        let set = |s: &str| s.parse::<SensorSet>().expect("static sensor set");
        SynthConfig {
            n_users: 12,
            duration_s: 600.0,
            devices: vec![
                DeviceSpec { placement: LeftEar, sensors: set("acc+gyro+ppg"), rate_hz: 100.0 },
                DeviceSpec { placement: RightEar, sensors: set("acc+gyro+ppg"), rate_hz: 100.0 },
                DeviceSpec { placement: Head, sensors: set("acc+gyro"), rate_hz: 52.0 },
                DeviceSpec { placement: Wrist, sensors: set("acc"), rate_hz: 32.0 },
            ],
            schedule: vec![
                PhaseSpec { activity: Activity::Rest, share: 1.0 },
                PhaseSpec { activity: Activity::Physical, share: 1.0 },
                PhaseSpec { activity: Activity::Mental, share: 1.0 },
            ],
            proximity: vec![
                Proximity { a: LeftEar, b: RightEar, value: 0.9 },
                Proximity { a: LeftEar, b: Head, value: 0.7 },
                Proximity { a: RightEar, b: Head, value: 0.7 },
                Proximity { a: LeftEar, b: Wrist, value: 0.3 },
                Proximity { a: RightEar, b: Wrist, value: 0.3 },
                Proximity { a: Head, b: Wrist, value: 0.3 },
            ],
            imu_noise: 0.15,
            ppg_noise: 0.1,
        }
    }
}

impl SynthConfig {
    pub fn proximity(&self, a: DevicePlacement, b: DevicePlacement) -> f64 {
        if a == b {
            return 1.0;
        }
        self.proximity
            .iter()
            .find(|p| (p.a == a && p.b == b) || (p.a == b && p.b == a))
            .map_or(0.0, |p| p.value)
    }

    pub fn activity_spans(&self) -> Vec<ActivitySpan> {
        let total: f64 = self.schedule.iter().map(|p| p.share).sum();
        let mut t = 0.0;
        self.schedule
            .iter()
            .map(|p| {
                let start = t;
                t += self.duration_s * p.share / total;
                ActivitySpan { start, end: t, activity: p.activity }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(SignalError::InvalidConfig(msg));
        if self.n_users == 0 {
            return bad("n_users must be positive".into());
        }
        if !(self.duration_s > 0.0) {
            return bad(format!("duration must be positive, got {}", self.duration_s));
        }
        if self.devices.is_empty() {
            return bad("at least one device is required".into());
        }
        for (i, d) in self.devices.iter().enumerate() {
            if !(d.rate_hz > 0.0) {
                return bad(format!("device {} has non-positive rate {}", d.placement, d.rate_hz));
            }
            if self.devices[..i].iter().any(|o| o.placement == d.placement) {
                return bad(format!("placement {} appears twice", d.placement));
            }
        }
        if self.schedule.is_empty() || self.schedule.iter().any(|p| !(p.share > 0.0)) {
            return bad("schedule shares must be positive".into());
        }
        for p in &self.proximity {
            if !(0.0..=1.0).contains(&p.value) {
                return bad(format!(
                    "proximity({}, {}) = {} outside [0, 1]",
                    p.a, p.b, p.value
                ));
            }
        }
        if !(self.imu_noise >= 0.0 && self.ppg_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        self.mixing()?;
        Ok(())
    }

    /// Lower-triangular Cholesky factor of the proximity matrix in device order.
    fn mixing(&self) -> Result<Vec<Vec<f64>>> {
        let n = self.devices.len();
        let mut l = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in 0..=i {
                let pij = self.proximity(self.devices[i].placement, self.devices[j].placement);
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = pij - s;
                    if d <= 1e-9 {
                        return Err(SignalError::InvalidConfig(
                            "proximity matrix is not positive definite".into(),
                        ));
                    }
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (pij - s) / l[j][j];
                }
            }
        }
        Ok(l)
    }
}

/// Generates one recording per (user, device), users in order, devices in
/// config order. Output depends only on `(config, seed)`.
pub fn synth_generate(config: &SynthConfig, seed: u64) -> Result<Vec<Recording>> {
    config.validate()?;
    let mixing = config.mixing()?;
    let spans = config.activity_spans();
    let mut out = Vec::with_capacity(config.n_users * config.devices.len());
    for user in 0..config.n_users {
        out.extend(generate_user(config, &mixing, &spans, seed, user));
    }
    Ok(out)
}

pub fn user_id(index: usize) -> String {
    format!("u{:02}", index + 1)
}

pub fn device_id(user: &str, placement: DevicePlacement) -> String {
    format!("{user}-{placement}")
}

struct Ou {
    mean: f64,
    tau: f64,
    std: f64,
}

impl Ou {
    /// One Euler step of length `dt` from `x` towards `self.mean`.
    fn step(&self, x: f64, dt: f64, rng: &mut ChaCha8Rng) -> f64 {
        let noise: f64 = StandardNormal.sample(rng);
        x + (self.mean - x) * dt / self.tau + self.std * (2.0 * dt / self.tau).sqrt() * noise
    }
}

fn activity_at(spans: &[ActivitySpan], t: f64) -> Activity {
    spans
        .iter()
        .find(|s| t >= s.start && t < s.end)
        .or(spans.last())
        .map_or(Activity::Rest, |s| s.activity)
}

fn unit6(rng: &mut ChaCha8Rng) -> [f64; 6] {
    let mut v = [0.0; 6];
    v.iter_mut().for_each(|x| *x = StandardNormal.sample(rng));
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
    v.map(|x| x / n)
}

fn rotation(rng: &mut ChaCha8Rng, max_deg: f64, base_yaw_deg: f64) -> [[f64; 3]; 3] {
    let mut angle = |extra: f64| (extra + rng.random_range(-max_deg..=max_deg)).to_radians();
    let (a, b, c) = (angle(base_yaw_deg), angle(0.0), angle(0.0));
    let rz = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let ry = [[b.cos(), 0.0, b.sin()], [0.0, 1.0, 0.0], [-b.sin(), 0.0, b.cos()]];
    let rx = [[1.0, 0.0, 0.0], [0.0, c.cos(), -c.sin()], [0.0, c.sin(), c.cos()]];
    matmul3(&matmul3(&rz, &ry), &rx)
}

fn matmul3(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn rotate(r: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        r[0][0] * v[0] + r[0][1] * v[1] + r[0][2] * v[2],
        r[1][0] * v[0] + r[1][1] * v[1] + r[1][2] * v[2],
        r[2][0] * v[0] + r[2][1] * v[1] + r[2][2] * v[2],
    ]
}

/// Pulse shape over one beat: systolic peak plus a smaller diastolic wave.
fn pulse_template(x: f64, notch: f64) -> f64 {
    let g = |c: f64, w: f64| (-0.5 * ((x - c) / w).powi(2)).exp();
    g(0.18, 0.07) + notch * g(0.48, 0.1)
}

/// Transient gesture shapes, `u` in [0, 1] across the event.
fn event_shape(kind: u8, u: f64) -> f64 {
    match kind {
        0 => (PI * u).sin().powi(2),
        1 => (3.0 * PI * u).sin() * (-3.0 * u).exp(),
        _ => (2.0 * PI * u).sin() * (PI * u).sin(),
    }
}

fn placement_profile(p: DevicePlacement) -> (f64, f64, f64) {
    // (gain, bcg weight, nominal yaw)
    match p {
        DevicePlacement::LeftEar => (1.0, 1.0, 12.0),
        DevicePlacement::RightEar => (1.0, 1.0, -12.0),
        DevicePlacement::Head => (0.8, 0.8, 0.0),
        DevicePlacement::Wrist => (1.6, 0.15, 30.0),
    }
}

fn generate_user(
    config: &SynthConfig,
    mixing: &[Vec<f64>],
    spans: &[ActivitySpan],
    seed: u64,
    user: usize,
) -> Vec<Recording> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(user as u64 + 1);

    let n = (config.duration_s * MASTER_RATE).round() as usize + 1;
    let dt = 1.0 / MASTER_RATE;
    let n_proc = config.devices.len();

    // User traits.
    let base_hr = rng.random_range(60.0..78.0);
    let hr_lift = [0.0, rng.random_range(20.0..35.0), rng.random_range(5.0..12.0)];
    let base_resp = rng.random_range(12.0..18.0) / 60.0;
    let base_cadence = rng.random_range(1.5..2.1);
    let notch = rng.random_range(0.25..0.6);
    let harmonic_amp = [1.0, rng.random_range(0.3..0.7), rng.random_range(0.1..0.4)];

    let act_index = |a: Activity| match a {
        Activity::Rest => 0,
        Activity::Physical => 1,
        Activity::Mental => 2,
    };
    let intensity_mean = [0.15_f64, 1.0, 0.3];
    let step_weight = [0.0, 1.0, 0.0];
    let event_rate = [0.06, 0.15, 0.25];

    // Shared body-level processes.
    let mut pulse = vec![0.0; n];
    let mut resp = vec![0.0; n];
    let mut bcg = vec![0.0; n];
    let mut intensity = vec![0.0; n];
    let mut step_phase = vec![0.0; n];
    let mut steps_on = vec![0.0; n];

    let mut hr_x = base_hr;
    let mut resp_f = base_resp;
    let mut log_int = intensity_mean[0].ln();
    let mut cadence = base_cadence;
    let mut beat_phase: f64 = rng.random_range(0.0..1.0);
    let mut resp_phase = rng.random_range(0.0..1.0);
    let mut sphase = 0.0;
    let mut beat_amp = 1.0;
    let mut step_w = 0.0;
    for i in 0..n {
        let t = i as f64 * dt;
        let a = act_index(activity_at(spans, t));
        let hr_proc = Ou { mean: base_hr + hr_lift[a], tau: 8.0, std: 6.0 };
        hr_x = hr_proc.step(hr_x, dt, &mut rng).clamp(60.0, 120.0);
        resp_f = Ou { mean: base_resp, tau: 20.0, std: 0.03 }
            .step(resp_f, dt, &mut rng)
            .clamp(0.12, 0.5);
        log_int = Ou { mean: intensity_mean[a].ln(), tau: 6.0, std: 0.4 }.step(log_int, dt, &mut rng);
        cadence = Ou { mean: base_cadence, tau: 6.0, std: 0.15 }
            .step(cadence, dt, &mut rng)
            .clamp(1.0, 3.0);
        step_w += (step_weight[a] - step_w) * dt / 2.0;

        resp_phase += resp_f * dt;
        // respiratory sinus arrhythmia
        let inst_hr = hr_x * (1.0 + 0.04 * (2.0 * PI * resp_phase).sin());
        let prev_beat = beat_phase.floor();
        beat_phase += inst_hr / 60.0 * dt;
        if beat_phase.floor() > prev_beat {
            let jitter: f64 = StandardNormal.sample(&mut rng);
            beat_amp = 1.0 + 0.12 * jitter;
        }
        let x = beat_phase.fract();
        let r = (2.0 * PI * resp_phase).sin();
        pulse[i] = beat_amp * pulse_template(x, notch) * (1.0 + 0.1 * r) + 0.15 * r;
        bcg[i] = (2.0 * PI * x).sin() * (-6.0 * x).exp();
        resp[i] = r;
        intensity[i] = log_int.exp();
        sphase += cadence * dt;
        step_phase[i] = sphase;
        steps_on[i] = step_w;
    }

    // Independent six-axis motion processes, one per device slot.
    let mut procs = vec![vec![[0.0f64; 6]; n]; n_proc];
    for proc in procs.iter_mut() {
        let dirs: Vec<[f64; 6]> = (0..3).map(|_| unit6(&mut rng)).collect();
        let phases: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
        let amp_scale: Vec<f64> = (0..3)
            .map(|h| harmonic_amp[h] * rng.random_range(0.7..1.3))
            .collect();
        let sway_dir = unit6(&mut rng);
        let mut sway = 0.0;
        let sway_ou = Ou { mean: 0.0, tau: 4.0, std: 0.3 };
        for (i, v) in proc.iter_mut().enumerate() {
            sway = sway_ou.step(sway, dt, &mut rng);
            let gait: Vec<f64> = (0..3)
                .map(|h| amp_scale[h] * (2.0 * PI * (h + 1) as f64 * step_phase[i] + phases[h]).sin())
                .collect();
            for ax in 0..6 {
                let g: f64 = (0..3).map(|h| gait[h] * dirs[h][ax]).sum();
                v[ax] = intensity[i] * (2.0 * steps_on[i] * g + sway * sway_dir[ax]);
            }
        }
        // Transient gestures.
        let mut t = 0.0;
        loop {
            let a = act_index(activity_at(spans, t));
            let gap: f64 = -rng.random_range(f64::EPSILON..1.0f64).ln() / event_rate[a];
            t += gap;
            if t >= config.duration_s {
                break;
            }
            let kind = rng.random_range(0..3u8);
            let len = rng.random_range(0.3..1.5);
            let amp = rng.random_range(0.8..2.5) * (0.5 + intensity_mean[act_index(activity_at(spans, t))]);
            let dir = unit6(&mut rng);
            let i0 = (t * MASTER_RATE) as usize;
            let i1 = (((t + len) * MASTER_RATE) as usize).min(n);
            for (i, v) in proc.iter_mut().enumerate().take(i1).skip(i0) {
                let u = (i as f64 * dt - t) / len;
                let s = amp * event_shape(kind, u);
                for ax in 0..6 {
                    v[ax] += s * dir[ax];
                }
            }
        }
    }

    let session = format!("{}-s1", user_id(user));
    let uid = user_id(user);
    let mut recordings = Vec::with_capacity(config.devices.len());
    for (d, spec) in config.devices.iter().enumerate() {
        let (gain, bcg_w, yaw) = placement_profile(spec.placement);
        let rot = rotation(&mut rng, 10.0, yaw);
        let tilt = [
            rng.random_range(-0.3..0.3),
            rng.random_range(-0.3..0.3),
            1.0,
        ];
        let gyro_bias: [f64; 3] = [0, 1, 2].map(|_| rng.random_range(-0.05..0.05));
        let ppg_alpha = rng.random_range(0.55..0.9);
        let ppg_gain = rng.random_range(0.5..2.0);
        let ppg_offset = rng.random_range(-50.0..50.0);
        let artifact = rng.random_range(0.02..0.1);
        let imu_noise = Normal::new(0.0, config.imu_noise).expect("validated noise");
        let ppg_noise = Normal::new(0.0, config.ppg_noise).expect("validated noise");

        // Mixed motion and device-domain signals on the master clock.
        let mut acc = vec![[0.0f64; 3]; n];
        let mut gyr = vec![[0.0f64; 3]; n];
        let mut ppg = vec![0.0f64; n];
        let mut lp = pulse[0];
        for i in 0..n {
            let mut m = [0.0; 6];
            for (k, proc) in procs.iter().enumerate().take(d + 1) {
                let w = mixing[d][k];
                for ax in 0..6 {
                    m[ax] += w * proc[i][ax];
                }
            }
            let micro = 0.25 * bcg_w * bcg[i] + 0.05 * resp[i];
            let lin = [m[0], m[1], m[2] + micro];
            let a = rotate(&rot, lin);
            let g = rotate(&rot, tilt);
            let gn = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
            for ax in 0..3 {
                acc[i][ax] = gain * a[ax] + GRAVITY * g[ax] / gn;
            }
            let w = rotate(&rot, [m[3], m[4], m[5]]);
            for ax in 0..3 {
                gyr[i][ax] = 0.5 * gain * w[ax] + gyro_bias[ax];
            }
            lp += ppg_alpha * (pulse[i] - lp);
            let motion = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
            ppg[i] = ppg_gain * (lp + artifact * motion) + ppg_offset;
        }

        let count = (config.duration_s * spec.rate_hz + 1e-9).floor() as usize + 1;
        let timestamps: Vec<f64> = (0..count).map(|j| j as f64 / spec.rate_hz).collect();
        let sample = |series: &dyn Fn(usize) -> f64, t: f64| -> f64 {
            let x = t * MASTER_RATE;
            let i = (x.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            let f = x - i as f64;
            series(i) * (1.0 - f) + series(j) * f
        };
        let mut channels = Vec::new();
        for kind in spec.sensors.kinds() {
            for axis in 0..kind.axes() {
                let values: Vec<f64> = timestamps
                    .iter()
                    .map(|&t| match kind {
                        SensorKind::Acc => {
                            sample(&|i| acc[i][axis], t) + gain * imu_noise.sample(&mut rng)
                        }
                        SensorKind::Gyro => {
                            sample(&|i| gyr[i][axis], t) + 0.5 * gain * imu_noise.sample(&mut rng)
                        }
                        SensorKind::Ppg => {
                            sample(&|i| ppg[i], t) + ppg_gain * ppg_noise.sample(&mut rng)
                        }
                    })
                    .collect();
                channels.push(SensorChannel {
                    kind,
                    axis,
                    timestamps: timestamps.clone(),
                    values,
                    native_rate: spec.rate_hz,
                });
            }
        }
        recordings.push(Recording {
            user_id: uid.clone(),
            device_id: device_id(&uid, spec.placement),
            placement: spec.placement,
            session_id: session.clone(),
            channels,
            activities: spans.to_vec(),
            zero_variance: Vec::new(),
        });
    }
    recordings
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            n_users: 2,
            duration_s: 60.0,
            ..SynthConfig::default()
        }
    }

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let (ma, sa) = crate::signal::moments(a);
        let (mb, sb) = crate::signal::moments(b);
        a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (a.len() as f64 * sa * sb)
    }

    #[test]
    fn deterministic_for_seed() {
        let a = synth_generate(&small(), 1).unwrap();
        let b = synth_generate(&small(), 1).unwrap();
        assert_eq!(a, b);
        let c = synth_generate(&small(), 2).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn user_streams_independent_of_user_count() {
        let a = synth_generate(&small(), 5).unwrap();
        let b = synth_generate(&SynthConfig { n_users: 3, ..small() }, 5).unwrap();
        assert_eq!(a[..], b[..a.len()]);
    }

    #[test]
    fn layout_matches_config() {
        let recs = synth_generate(&small(), 3).unwrap();
        assert_eq!(recs.len(), 8);
        let head = &recs[2];
        assert_eq!(head.placement, DevicePlacement::Head);
        assert_eq!(head.channels.len(), 6);
        assert_eq!(head.channels[0].native_rate, 52.0);
        assert_eq!(head.channels[0].len(), 60 * 52 + 1);
        let wrist = &recs[3];
        assert_eq!(wrist.sensor_set().unwrap().to_string(), "acc");
        assert_eq!(*wrist.channels[0].timestamps.last().unwrap(), 60.0);
        assert_eq!(recs[0].activities.len(), 3);
        assert!(recs.iter().all(|r| r.channels.iter().all(|c| c.values.iter().all(|v| v.is_finite()))));
    }

    #[test]
    fn near_placements_correlate_more() {
        let cfg = SynthConfig { n_users: 3, duration_s: 120.0, ..SynthConfig::default() };
        let recs = synth_generate(&cfg, 11).unwrap();
        for user in recs.chunks(4) {
            let resampled: Vec<_> = user
                .iter()
                .map(|r| crate::signal::resample_recording(r, 100.0).unwrap())
                .collect();
            let mean_corr = |a: &Recording, b: &Recording| {
                (0..3)
                    .map(|ax| {
                        let x = &a.channel(SensorKind::Acc, ax).unwrap().values;
                        let y = &b.channel(SensorKind::Acc, ax).unwrap().values;
                        let n = x.len().min(y.len());
                        pearson(&x[..n], &y[..n]).abs()
                    })
                    .sum::<f64>()
                    / 3.0
            };
            let ears = mean_corr(&resampled[0], &resampled[1]);
            let ear_wrist = mean_corr(&resampled[0], &resampled[3]);
            assert!(ears > ear_wrist, "ears {ears} vs ear-wrist {ear_wrist}");
        }
    }

    #[test]
    fn rejects_invalid_configs() {
        let mut c = small();
        c.proximity[0].value = 1.5;
        assert!(matches!(synth_generate(&c, 1), Err(SignalError::InvalidConfig(_))));
        let c = SynthConfig { duration_s: 0.0, ..small() };
        assert!(c.validate().is_err());
        let mut c = small();
        c.devices[2].rate_hz = -1.0;
        assert!(c.validate().is_err());
        let mut c = small();
        c.proximity = vec![
            Proximity { a: DevicePlacement::LeftEar, b: DevicePlacement::RightEar, value: 1.0 },
        ];
        assert!(c.validate().is_err(), "singular proximity matrix");
    }

    #[test]
    fn spans_cover_session() {
        let spans = SynthConfig::default().activity_spans();
        assert_eq!(spans[0].start, 0.0);
        assert!((spans[2].end - 600.0).abs() < 1e-9);
        assert_eq!(spans[1].activity, Activity::Physical);
    }
}
