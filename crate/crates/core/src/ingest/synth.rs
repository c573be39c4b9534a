//! Synthetic sessions with known class structure.
//!
//! Each session is assigned a class first (from its workload setting, with a
//! configurable number of high-workload sessions perceived as slow), then its
//! physiology is drawn from that class's parameters during the task and from
//! the shared resting parameters during the baseline. Ratings follow the
//! class: slow sessions answer 1 or 2, fast ones 4 or 5.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{Dataset, Label, SessionRecord, SessionSetting, TimeSeries};

/// Physiology of one condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassParams {
    pub hr_bpm: f64,
    /// Beat-to-beat white jitter of the RR interval.
    pub rr_jitter_ms: f64,
    /// Amplitude of the respiratory modulation of the RR interval.
    pub rsa_ms: f64,
    pub scr_per_min: f64,
    pub tonic_slope_us_per_min: f64,
    pub temp_drift_c_per_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub participants: u32,
    pub sessions_per_participant: u32,
    pub baseline_s: f64,
    pub task_s: f64,
    /// Recording continues this long after the task ends.
    pub tail_s: f64,
    pub ppg_rate_hz: f64,
    pub eda_rate_hz: f64,
    pub temp_rate_hz: f64,
    pub breathing_hz: f64,
    pub rest: ClassParams,
    pub slow: ClassParams,
    pub fast: ClassParams,
    /// Between-participant SD of the heart rate, shared by all sessions.
    pub participant_hr_sd_bpm: f64,
    pub ppg_noise_sd: f64,
    pub eda_noise_sd_us: f64,
    pub temp_noise_sd_c: f64,
    pub scr_amplitude_us: (f64, f64),
    /// High-workload sessions relabelled slow, at most one per participant.
    pub fast_to_slow_flips: u32,
    pub seed: u64,
}

impl Default for SynthConfig {
    /// Moderate class differences; 12 × 4 sessions split 26 slow / 22 fast.
    fn default() -> Self {
        Self {
            participants: 12,
            sessions_per_participant: 4,
            baseline_s: 30.0,
            task_s: 182.0,
            tail_s: 2.0,
            ppg_rate_hz: 25.0,
            eda_rate_hz: 15.0,
            temp_rate_hz: 7.5,
            breathing_hz: 0.25,
            rest: ClassParams {
                hr_bpm: 72.0,
                rr_jitter_ms: 20.0,
                rsa_ms: 30.0,
                scr_per_min: 1.5,
                tonic_slope_us_per_min: 0.0,
                temp_drift_c_per_min: 0.0,
            },
            slow: ClassParams {
                hr_bpm: 75.0,
                rr_jitter_ms: 18.0,
                rsa_ms: 26.0,
                scr_per_min: 2.0,
                tonic_slope_us_per_min: 0.02,
                temp_drift_c_per_min: -0.03,
            },
            fast: ClassParams {
                hr_bpm: 81.0,
                rr_jitter_ms: 13.0,
                rsa_ms: 18.0,
                scr_per_min: 3.5,
                tonic_slope_us_per_min: 0.06,
                temp_drift_c_per_min: -0.08,
            },
            participant_hr_sd_bpm: 5.0,
            ppg_noise_sd: 0.03,
            eda_noise_sd_us: 0.001,
            temp_noise_sd_c: 0.01,
            scr_amplitude_us: (0.05, 0.4),
            fast_to_slow_flips: 2,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Well separated classes: task physiology differs strongly in every
    /// channel while the baseline is shared.
    pub fn separable() -> Self {
        Self {
            slow: ClassParams {
                hr_bpm: 66.0,
                rr_jitter_ms: 25.0,
                rsa_ms: 40.0,
                scr_per_min: 1.0,
                tonic_slope_us_per_min: -0.05,
                temp_drift_c_per_min: 0.1,
            },
            fast: ClassParams {
                hr_bpm: 100.0,
                rr_jitter_ms: 6.0,
                rsa_ms: 8.0,
                scr_per_min: 8.0,
                tonic_slope_us_per_min: 0.25,
                temp_drift_c_per_min: -0.3,
            },
            ..Self::default()
        }
    }

    /// Both classes share the same physiology; labels carry no signal.
    pub fn null() -> Self {
        let d = Self::default();
        Self { fast: d.slow, ..d }
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |msg: String| Err(IngestError::InvalidConfig(msg));
        if self.participants == 0 || self.sessions_per_participant == 0 {
            return bad("participants and sessions_per_participant must be positive".into());
        }
        if self.participants > 99 {
            return bad("at most 99 participants".into());
        }
        for (name, v) in [
            ("baseline_s", self.baseline_s),
            ("task_s", self.task_s),
            ("ppg_rate_hz", self.ppg_rate_hz),
            ("eda_rate_hz", self.eda_rate_hz),
            ("temp_rate_hz", self.temp_rate_hz),
            ("breathing_hz", self.breathing_hz),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.tail_s.is_finite() && self.tail_s >= 0.0) {
            return bad("tail_s must be non-negative".into());
        }
        for (name, p) in [("rest", &self.rest), ("slow", &self.slow), ("fast", &self.fast)] {
            if !(42.0..=210.0).contains(&p.hr_bpm) {
                return bad(format!("{name}.hr_bpm {} outside [42, 210]", p.hr_bpm));
            }
            if p.rr_jitter_ms < 0.0 || p.rsa_ms < 0.0 || p.scr_per_min < 0.0 {
                return bad(format!("{name}: negative variability or SCR rate"));
            }
        }
        if self.participant_hr_sd_bpm < 0.0
            || self.ppg_noise_sd < 0.0
            || self.eda_noise_sd_us < 0.0
            || self.temp_noise_sd_c < 0.0
        {
            return bad("noise SDs must be non-negative".into());
        }
        let (lo, hi) = self.scr_amplitude_us;
        if !(lo > 0.0 && hi >= lo) {
            return bad("scr_amplitude_us must satisfy 0 < lo <= hi".into());
        }
        if self.fast_to_slow_flips > self.participants {
            return bad("more flips than participants".into());
        }
        Ok(())
    }
}

/// Seed mixing so that every (participant, session) stream is independent of
/// iteration order.
fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

struct Participant {
    id: u32,
    hr_offset_bpm: f64,
    pulse_amplitude: f64,
    eda_level_us: f64,
    skin_c: f64,
    ambient_c: f64,
    /// Class per session, in session order.
    classes: Vec<Label>,
    settings: Vec<SessionSetting>,
}

fn plan(cfg: &SynthConfig) -> Vec<Participant> {
    let mut master = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 0, 0));
    let mut ids: Vec<u32> = (1..=cfg.participants).collect();
    ids.shuffle(&mut master);
    let flipped: Vec<u32> = ids[..cfg.fast_to_slow_flips as usize].to_vec();

    (1..=cfg.participants)
        .map(|id| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, id as u64, 0));
            let normal = Normal::new(0.0, 1.0).unwrap();
            let settings: Vec<SessionSetting> = (0..cfg.sessions_per_participant)
                .map(|k| SessionSetting::ALL[k as usize % SessionSetting::ALL.len()])
                .collect();
            let mut classes: Vec<Label> = settings
                .iter()
                .map(|s| if s.helicopters == 2 { Label::Fast } else { Label::Slow })
                .collect();
            if flipped.contains(&id) {
                let fast: Vec<usize> = (0..classes.len()).filter(|&k| classes[k].is_fast()).collect();
                if !fast.is_empty() {
                    classes[fast[rng.random_range(0..fast.len())]] = Label::Slow;
                }
            }
            Participant {
                id,
                hr_offset_bpm: cfg.participant_hr_sd_bpm * normal.sample(&mut rng),
                pulse_amplitude: rng.random_range(0.8..1.2),
                eda_level_us: rng.random_range(2.0..8.0),
                skin_c: 34.0 + 0.5 * normal.sample(&mut rng),
                ambient_c: 24.0 + normal.sample(&mut rng),
                classes,
                settings,
            }
        })
        .collect()
}

fn clamp_hr(hr: f64) -> f64 {
    hr.clamp(45.0, 200.0)
}

/// Beat times over `[0, length)`; rest parameters before `switch_s`.
fn beat_times(
    rng: &mut ChaCha8Rng,
    length_s: f64,
    switch_s: f64,
    rest: &ClassParams,
    task: &ClassParams,
    hr_offset: f64,
    breathing_hz: f64,
) -> Vec<f64> {
    let mut t = rng.random_range(0.0..0.5);
    let phase = rng.random_range(0.0..2.0 * PI);
    let mut beats = Vec::new();
    while t < length_s {
        beats.push(t);
        let p = if t < switch_s { rest } else { task };
        let base = 60000.0 / clamp_hr(p.hr_bpm + hr_offset);
        let jitter = Normal::new(0.0, p.rr_jitter_ms.max(1e-12)).unwrap().sample(rng);
        let rr = base + p.rsa_ms * (2.0 * PI * breathing_hz * t + phase).sin() + jitter;
        t += rr.clamp(300.0, 1400.0) / 1000.0;
    }
    beats
}

fn ppg_signal(
    rng: &mut ChaCha8Rng,
    beats: &[f64],
    n: usize,
    fs: f64,
    amplitude: f64,
    noise_sd: f64,
) -> Vec<f64> {
    const WIDTH_S: f64 = 0.1;
    let wander_phase = rng.random_range(0.0..2.0 * PI);
    let noise = Normal::new(0.0, noise_sd.max(1e-300)).unwrap();
    let mut x: Vec<f64> = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            0.2 * (2.0 * PI * 0.03 * t + wander_phase).sin()
                + if noise_sd > 0.0 { noise.sample(rng) } else { 0.0 }
        })
        .collect();
    let reach = (4.0 * WIDTH_S * fs).ceil() as isize;
    for &b in beats {
        let centre = (b * fs).round() as isize;
        for i in (centre - reach).max(0)..(centre + reach + 1).min(n as isize) {
            let dt = i as f64 / fs - b;
            x[i as usize] += amplitude * (-dt * dt / (2.0 * WIDTH_S * WIDTH_S)).exp();
        }
    }
    x
}

/// Raised-cosine rise followed by exponential recovery.
fn scr_shape(dt: f64) -> f64 {
    const RISE_S: f64 = 2.0;
    const TAU_S: f64 = 4.0;
    if dt < 0.0 {
        0.0
    } else if dt < RISE_S {
        0.5 * (1.0 - (PI * dt / RISE_S).cos())
    } else {
        (-(dt - RISE_S) / TAU_S).exp()
    }
}

fn scr_events(
    rng: &mut ChaCha8Rng,
    from_s: f64,
    to_s: f64,
    per_min: f64,
    amp: (f64, f64),
) -> Vec<(f64, f64)> {
    if per_min <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(per_min / 60.0).unwrap();
    let mut events = Vec::new();
    let mut t = from_s + gap.sample(rng);
    while t < to_s {
        let a = if amp.1 > amp.0 { rng.random_range(amp.0..amp.1) } else { amp.0 };
        events.push((t, a));
        t += gap.sample(rng);
    }
    events
}

fn session(cfg: &SynthConfig, p: &Participant, k: usize) -> SessionRecord {
    let index = k as u32 + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, p.id as u64, index as u64));
    let class = p.classes[k];
    let task = if class.is_fast() { &cfg.fast } else { &cfg.slow };
    let rest = &cfg.rest;
    let switch = cfg.baseline_s;
    let task_end = cfg.baseline_s + cfg.task_s;
    let length = task_end + cfg.tail_s;
    let samples = |fs: f64| (length * fs).ceil() as usize;

    let beats = beat_times(&mut rng, length, switch, rest, task, p.hr_offset_bpm, cfg.breathing_hz);
    let n_ppg = samples(cfg.ppg_rate_hz);
    let ppg = ppg_signal(&mut rng, &beats, n_ppg, cfg.ppg_rate_hz, p.pulse_amplitude, cfg.ppg_noise_sd);

    let mut events = scr_events(&mut rng, 0.0, switch, rest.scr_per_min, cfg.scr_amplitude_us);
    events.extend(scr_events(&mut rng, switch, length, task.scr_per_min, cfg.scr_amplitude_us));
    let eda_noise = Normal::new(0.0, cfg.eda_noise_sd_us.max(1e-300)).unwrap();
    let eda: Vec<f64> = (0..samples(cfg.eda_rate_hz))
        .map(|i| {
            let t = i as f64 / cfg.eda_rate_hz;
            let tonic = p.eda_level_us
                + rest.tonic_slope_us_per_min * t.min(switch) / 60.0
                + task.tonic_slope_us_per_min * (t - switch).max(0.0) / 60.0;
            let phasic: f64 = events.iter().map(|(e, a)| a * scr_shape(t - e)).sum();
            let noise = if cfg.eda_noise_sd_us > 0.0 { eda_noise.sample(&mut rng) } else { 0.0 };
            (tonic + phasic + noise).max(0.01)
        })
        .collect();

    let temp_noise = Normal::new(0.0, cfg.temp_noise_sd_c.max(1e-300)).unwrap();
    let n_temp = samples(cfg.temp_rate_hz);
    let mut thermo = Vec::with_capacity(n_temp);
    let mut reference = Vec::with_capacity(n_temp);
    for i in 0..n_temp {
        let t = i as f64 / cfg.temp_rate_hz;
        let drift = rest.temp_drift_c_per_min * t.min(switch) / 60.0
            + task.temp_drift_c_per_min * (t - switch).max(0.0) / 60.0;
        let (a, b) = if cfg.temp_noise_sd_c > 0.0 {
            (temp_noise.sample(&mut rng), temp_noise.sample(&mut rng))
        } else {
            (0.0, 0.0)
        };
        thermo.push(p.skin_c + drift + a);
        reference.push(p.ambient_c + 0.05 * t / 60.0 + b);
    }

    let single_class = p.classes.iter().all(|c| *c == class);
    let rating = match (class, single_class) {
        (Label::Slow, true) => 2,
        (Label::Fast, true) => 4,
        (Label::Slow, false) => rng.random_range(1..=2),
        (Label::Fast, false) => rng.random_range(4..=5),
    };
    let estimate = cfg.task_s * if class.is_fast() { 0.8 } else { 1.2 };

    let series = |v, fs, label| TimeSeries::new(v, fs, label).expect("generated samples are finite");
    SessionRecord {
        participant_id: p.id,
        session_index: index,
        setting: p.settings[k],
        ppg: series(ppg, cfg.ppg_rate_hz, "ppg"),
        eda: series(eda, cfg.eda_rate_hz, "eda"),
        thermopile: series(thermo, cfg.temp_rate_hz, "thermopile"),
        reference_temp: series(reference, cfg.temp_rate_hz, "reference_temp"),
        task_start_s: switch,
        task_end_s: task_end,
        rating,
        duration_estimate_s: Some(estimate.round()),
    }
}

/// Deterministic corpus of `participants × sessions_per_participant`
/// sessions, ordered by participant then session index.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<Vec<SessionRecord>, IngestError> {
    cfg.validate()?;
    let participants = plan(cfg);
    let jobs: Vec<(usize, usize)> = (0..participants.len())
        .flat_map(|p| (0..cfg.sessions_per_participant as usize).map(move |k| (p, k)))
        .collect();
    Ok(jobs
        .par_iter()
        .map(|&(p, k)| session(cfg, &participants[p], k))
        .collect())
}

/// Feature matrix with a few informative columns among pure noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub participants: u32,
    pub rows_per_participant: u32,
    pub informative: usize,
    pub noise: usize,
    /// Class mean separation of each informative column, in noise SDs.
    pub shift: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            participants: 12,
            rows_per_participant: 4,
            informative: 5,
            noise: 19,
            shift: 1.5,
            seed: 11,
        }
    }
}

/// Columns `inf_0..` carry a class shift, `noise_0..` do not. Classes
/// alternate within each participant, so every participant has both.
pub fn planted_dataset(cfg: &PlantedConfig) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(cfg.seed, 1, 1));
    let normal = Normal::new(0.0, 1.0).unwrap();
    let names: Vec<String> = (0..cfg.informative)
        .map(|i| format!("inf_{i}"))
        .chain((0..cfg.noise).map(|i| format!("noise_{i}")))
        .collect();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut participants = Vec::new();
    for p in 1..=cfg.participants {
        for r in 0..cfg.rows_per_participant {
            let label = if r % 2 == 0 { Label::Slow } else { Label::Fast };
            let sign = if label.is_fast() { 0.5 } else { -0.5 };
            let row: Vec<f64> = (0..cfg.informative + cfg.noise)
                .map(|j| {
                    let z: f64 = normal.sample(&mut rng);
                    if j < cfg.informative { z + sign * cfg.shift } else { z }
                })
                .collect();
            rows.push(row);
            labels.push(label);
            participants.push(p);
        }
    }
    Dataset::new(names, rows, labels, participants).expect("planted rows are consistent")
}
