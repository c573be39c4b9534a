//! Biomarker extraction: 13 PPG features from beat timing, 6 EDA features
//! from a tonic/phasic split, and 5 temperature features.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dsp::{self, DspError, WelchParams};
use crate::model::{
    FeatureVector, SessionRecord, TimeSeries, N_EDA_FEATURES, N_PPG_FEATURES, N_TEMP_FEATURES,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FeatureError {
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error("no heart beats detected")]
    NoBeatsDetected,
    #[error("signal too short: {got_s:.2} s, need at least {needed_s:.2} s")]
    TooShort { needed_s: f64, got_s: f64 },
    #[error("too few beat intervals: {0}, need at least 3")]
    TooFewBeats(usize),
    #[error("Poincare sd2 is zero, sd1/sd2 ratio undefined")]
    DegenerateGeometry,
    #[error("channel length mismatch: {0} vs {1} samples")]
    LengthMismatch(usize, usize),
}

pub const MIN_BPM: f64 = 42.0;
pub const MAX_BPM: f64 = 210.0;

/// Detected beats and the artifact-filtered interval series.
///
/// `rr_ms[i]` is the gap between two consecutive detected peaks. Intervals
/// rejected as implausible are dropped, so `rr_ms.len() <= peak_times_s.len() - 1`
/// with equality when nothing was rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSequence {
    pub peak_times_s: Vec<f64>,
    pub rr_ms: Vec<f64>,
}

impl BeatSequence {
    /// Builds a sequence from raw RR intervals, peaks placed by cumulative sum.
    pub fn from_rr_ms(rr_ms: Vec<f64>) -> Self {
        let mut t = 0.0;
        let mut peak_times_s = vec![0.0];
        for rr in &rr_ms {
            t += rr / 1000.0;
            peak_times_s.push(t);
        }
        Self { peak_times_s, rr_ms }
    }

    pub fn from_peak_times(peak_times_s: Vec<f64>) -> Self {
        let rr_ms = peak_times_s.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
        Self { peak_times_s, rr_ms }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakDetectParams {
    /// Moving-average window for the adaptive envelope.
    pub window_s: f64,
    /// Threshold lifts above the envelope, in units of signal SD.
    pub lifts: &'static [f64],
    /// Maximum relative deviation from the local median interval.
    pub max_rel_deviation: f64,
    /// Half-width of the local median, in intervals.
    pub median_half_window: usize,
}

impl Default for PeakDetectParams {
    fn default() -> Self {
        Self {
            window_s: 0.75,
            lifts: &[0.0, 0.05, 0.1, 0.15, 0.2, 0.3, 0.4, 0.5, 0.6, 0.8, 1.0],
            max_rel_deviation: 0.3,
            median_half_window: 5,
        }
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Population standard deviation.
fn pop_sd(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

fn median(x: &[f64]) -> f64 {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn moving_average(x: &[f64], half: usize) -> Vec<f64> {
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Peak positions (fractional sample index) above `threshold`, one per run.
fn peaks_above(x: &[f64], threshold: &[f64]) -> Vec<f64> {
    let mut peaks = Vec::new();
    let mut i = 0;
    while i < x.len() {
        if x[i] <= threshold[i] {
            i += 1;
            continue;
        }
        let mut best = i;
        while i < x.len() && x[i] > threshold[i] {
            if x[i] > x[best] {
                best = i;
            }
            i += 1;
        }
        let mut pos = best as f64;
        if best > 0 && best + 1 < x.len() {
            let (a, b, c) = (x[best - 1], x[best], x[best + 1]);
            let denom = a - 2.0 * b + c;
            if denom < 0.0 {
                pos += (0.5 * (a - c) / denom).clamp(-0.5, 0.5);
            }
        }
        peaks.push(pos);
    }
    peaks
}

/// Adaptive-threshold PPG peak detection with interval plausibility checks.
///
/// The threshold is a moving-average envelope lifted by a fraction of the
/// signal SD; the lift giving the most regular intervals within the
/// plausible heart-rate band is kept. Intervals outside 42–210 bpm or more
/// than 30 % away from their local median are rejected.
pub fn detect_ppg_peaks(series: &TimeSeries) -> Result<BeatSequence, FeatureError> {
    detect_ppg_peaks_with(series, &PeakDetectParams::default())
}

pub fn detect_ppg_peaks_with(
    series: &TimeSeries,
    params: &PeakDetectParams,
) -> Result<BeatSequence, FeatureError> {
    const MIN_S: f64 = 5.0;
    if series.duration_s() < MIN_S - 1e-9 {
        return Err(FeatureError::TooShort {
            needed_s: MIN_S,
            got_s: series.duration_s(),
        });
    }
    let x = series.values();
    let fs = series.sampling_rate_hz();
    let sd = pop_sd(x);
    if sd <= 0.0 {
        return Err(FeatureError::NoBeatsDetected);
    }
    let half = ((params.window_s * fs) / 2.0).round() as usize;
    let envelope = moving_average(x, half);

    let min_rr = 60000.0 / MAX_BPM;
    let max_rr = 60000.0 / MIN_BPM;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for &lift in params.lifts {
        let threshold: Vec<f64> = envelope.iter().map(|e| e + lift * sd).collect();
        let peaks = peaks_above(x, &threshold);
        if peaks.len() < 4 {
            continue;
        }
        let rr: Vec<f64> = peaks.windows(2).map(|w| (w[1] - w[0]) / fs * 1000.0).collect();
        let bpm = 60000.0 / mean(&rr);
        if !(MIN_BPM..=MAX_BPM).contains(&bpm) {
            continue;
        }
        let fit = pop_sd(&rr);
        if best.as_ref().is_none_or(|(b, _)| fit < *b) {
            best = Some((fit, peaks));
        }
    }
    let (_, peaks) = best.ok_or(FeatureError::NoBeatsDetected)?;

    let peak_times_s: Vec<f64> = peaks.iter().map(|p| series.offset_s() + p / fs).collect();
    let raw: Vec<f64> = peak_times_s.windows(2).map(|w| (w[1] - w[0]) * 1000.0).collect();
    let in_band: Vec<f64> = raw
        .iter()
        .copied()
        .filter(|rr| (min_rr..=max_rr).contains(rr))
        .collect();
    let h = params.median_half_window;
    let rr_ms: Vec<f64> = (0..in_band.len())
        .filter_map(|i| {
            let lo = i.saturating_sub(h);
            let hi = (i + h + 1).min(in_band.len());
            let med = median(&in_band[lo..hi]);
            ((in_band[i] - med).abs() <= params.max_rel_deviation * med).then_some(in_band[i])
        })
        .collect();
    if rr_ms.len() < 2 {
        return Err(FeatureError::NoBeatsDetected);
    }
    Ok(BeatSequence {
        peak_times_s,
        rr_ms,
    })
}

/// The 13 heart-rate features in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PpgFeatures {
    pub bpm: f64,
    pub ibi_ms: f64,
    pub sdnn_ms: f64,
    pub sdsd_ms: f64,
    pub rmssd_ms: f64,
    pub pnn20: f64,
    pub pnn50: f64,
    pub hr_mad_ms: f64,
    pub sd1_ms: f64,
    pub sd2_ms: f64,
    pub s_ms2: f64,
    pub sd1_sd2_ratio: f64,
    pub breathing_rate_hz: f64,
}

impl PpgFeatures {
    pub fn to_array(&self) -> [f64; N_PPG_FEATURES] {
        [
            self.bpm,
            self.ibi_ms,
            self.sdnn_ms,
            self.sdsd_ms,
            self.rmssd_ms,
            self.pnn20,
            self.pnn50,
            self.hr_mad_ms,
            self.sd1_ms,
            self.sd2_ms,
            self.s_ms2,
            self.sd1_sd2_ratio,
            self.breathing_rate_hz,
        ]
    }
}

/// Time-domain and Poincaré statistics of the intervals; the ratio is left
/// unchecked so callers can decide how to treat a zero `sd2`.
struct IntervalStats {
    bpm: f64,
    ibi: f64,
    sdnn: f64,
    sdsd: f64,
    rmssd: f64,
    pnn20: f64,
    pnn50: f64,
    mad: f64,
    sd1: f64,
    sd2: f64,
}

fn interval_stats(rr: &[f64]) -> IntervalStats {
    let diffs: Vec<f64> = rr.windows(2).map(|w| w[1] - w[0]).collect();
    let ibi = mean(rr);
    let sdnn = pop_sd(rr);
    let sdsd = pop_sd(&diffs);
    let rmssd = (diffs.iter().map(|d| d * d).sum::<f64>() / diffs.len() as f64).sqrt();
    let frac_over = |limit: f64| {
        diffs.iter().filter(|d| d.abs() > limit).count() as f64 / diffs.len() as f64
    };
    let med = median(rr);
    let abs_dev: Vec<f64> = rr.iter().map(|v| (v - med).abs()).collect();
    let sd1 = (0.5 * sdsd * sdsd).sqrt();
    let sd2 = (2.0 * sdnn * sdnn - 0.5 * sdsd * sdsd).max(0.0).sqrt();
    IntervalStats {
        bpm: 60000.0 / ibi,
        ibi,
        sdnn,
        sdsd,
        rmssd,
        pnn20: frac_over(20.0),
        pnn50: frac_over(50.0),
        mad: median(&abs_dev),
        sd1,
        sd2,
    }
}

/// Natural cubic spline through strictly increasing knots.
struct CubicSpline {
    x: Vec<f64>,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl CubicSpline {
    fn natural(x: &[f64], y: &[f64]) -> Self {
        let n = x.len();
        let mut m = vec![0.0; n];
        if n > 2 {
            // Thomas algorithm on the interior second derivatives.
            let k = n - 2;
            let mut diag = vec![0.0; k];
            let mut rhs = vec![0.0; k];
            let mut upper = vec![0.0; k];
            for i in 0..k {
                let h0 = x[i + 1] - x[i];
                let h1 = x[i + 2] - x[i + 1];
                diag[i] = 2.0 * (h0 + h1);
                upper[i] = h1;
                rhs[i] = 6.0 * ((y[i + 2] - y[i + 1]) / h1 - (y[i + 1] - y[i]) / h0);
            }
            for i in 1..k {
                let h = x[i + 1] - x[i];
                let w = h / diag[i - 1];
                diag[i] -= w * upper[i - 1];
                rhs[i] -= w * rhs[i - 1];
            }
            m[k] = rhs[k - 1] / diag[k - 1];
            for i in (0..k - 1).rev() {
                m[i + 1] = (rhs[i] - upper[i] * m[i + 2]) / diag[i];
            }
        }
        Self {
            x: x.to_vec(),
            y: y.to_vec(),
            m,
        }
    }

    fn eval(&self, t: f64) -> f64 {
        let n = self.x.len();
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= n => n - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let a = (self.x[i + 1] - t) / h;
        let b = (t - self.x[i]) / h;
        a * self.y[i]
            + b * self.y[i + 1]
            + ((a * a * a - a) * self.m[i] + (b * b * b - b) * self.m[i + 1]) * h * h / 6.0
    }
}

pub const BREATHING_BAND_HZ: (f64, f64) = (0.1, 0.4);
const TACHOGRAM_RATE_HZ: f64 = 4.0;

/// Respiratory sinus arrhythmia peak of the RR tachogram.
///
/// The intervals are spline-interpolated at 4 Hz, and the Welch PSD maximum
/// inside 0.1–0.4 Hz is returned.
pub fn breathing_rate_hz(rr_ms: &[f64]) -> Result<f64, FeatureError> {
    if rr_ms.len() < 3 {
        return Err(FeatureError::TooFewBeats(rr_ms.len()));
    }
    let mut t = Vec::with_capacity(rr_ms.len());
    let mut acc = 0.0;
    for rr in rr_ms {
        acc += rr / 1000.0;
        t.push(acc);
    }
    let spline = CubicSpline::natural(&t, rr_ms);
    let n = ((t[rr_ms.len() - 1] - t[0]) * TACHOGRAM_RATE_HZ).floor() as usize + 1;
    let samples: Vec<f64> = (0..n)
        .map(|i| spline.eval(t[0] + i as f64 / TACHOGRAM_RATE_HZ))
        .collect();
    if samples.len() < 2 {
        return Err(FeatureError::TooFewBeats(rr_ms.len()));
    }
    let tachogram = TimeSeries::new(samples, TACHOGRAM_RATE_HZ, "tachogram")
        .map_err(|_| FeatureError::TooFewBeats(rr_ms.len()))?;
    let mut params = WelchParams::default_for(tachogram.len());
    params.nfft = params.segment_len.max(1024);
    let spec = dsp::welch_psd_with(&tachogram, params)?;
    Ok(spec
        .peak_frequency(BREATHING_BAND_HZ.0, BREATHING_BAND_HZ.1)
        .unwrap_or(0.0))
}

/// All 13 PPG features from a beat sequence.
pub fn ppg_features(beats: &BeatSequence) -> Result<PpgFeatures, FeatureError> {
    let rr = &beats.rr_ms;
    if rr.len() < 3 {
        return Err(FeatureError::TooFewBeats(rr.len()));
    }
    let s = interval_stats(rr);
    if s.sd2 < 1e-9 {
        return Err(FeatureError::DegenerateGeometry);
    }
    Ok(PpgFeatures {
        bpm: s.bpm,
        ibi_ms: s.ibi,
        sdnn_ms: s.sdnn,
        sdsd_ms: s.sdsd,
        rmssd_ms: s.rmssd,
        pnn20: s.pnn20,
        pnn50: s.pnn50,
        hr_mad_ms: s.mad,
        sd1_ms: s.sd1,
        sd2_ms: s.sd2,
        s_ms2: PI * s.sd1 * s.sd2,
        sd1_sd2_ratio: s.sd1 / s.sd2,
        breathing_rate_hz: breathing_rate_hz(rr)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScrPeak {
    pub time_s: f64,
    pub amplitude_us: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdaDecomposition {
    pub tonic: TimeSeries,
    pub phasic: TimeSeries,
    pub scr_peaks: Vec<ScrPeak>,
}

pub const EDA_MIN_DURATION_S: f64 = 10.0;
pub const TONIC_CUTOFF_HZ: f64 = 0.05;
pub const SCR_MIN_AMPLITUDE_US: f64 = 0.01;
pub const SCR_MIN_SEPARATION_S: f64 = 1.0;
const SCR_ONSET_LOOKBACK_S: f64 = 4.0;
pub const SYMPATHETIC_BAND_HZ: (f64, f64) = (0.045, 0.25);
const EDA_CLEAN_CUTOFF_HZ: f64 = 3.0;
const EDA_SPECTRAL_RATE_HZ: f64 = 2.0;
const EDA_AUTOCORR_LAG_S: f64 = 4.0;
/// Below this the spectrum is rounding noise and a ratio is meaningless.
const NEGLIGIBLE_POWER: f64 = 1e-18;

fn require_duration(series: &TimeSeries, min_s: f64) -> Result<(), FeatureError> {
    if series.duration_s() < min_s - 1e-9 {
        Err(FeatureError::TooShort {
            needed_s: min_s,
            got_s: series.duration_s(),
        })
    } else {
        Ok(())
    }
}

/// SCR peaks on a phasic trace.
///
/// Every local maximum is a candidate; its onset is the lowest phasic value
/// in the preceding 4 s, cut at the previous accepted peak. Candidates rising
/// less than the amplitude threshold are dropped, and of two peaks closer than
/// the minimum separation only the larger survives.
fn detect_scr(phasic: &[f64], fs: f64) -> Vec<ScrPeak> {
    let lookback = (SCR_ONSET_LOOKBACK_S * fs).round() as usize;
    let min_sep = (SCR_MIN_SEPARATION_S * fs).round() as usize;
    let mut accepted: Vec<(usize, f64)> = Vec::new();
    for i in 1..phasic.len().saturating_sub(1) {
        if !(phasic[i] > phasic[i - 1] && phasic[i] >= phasic[i + 1]) {
            continue;
        }
        let mut start = i.saturating_sub(lookback);
        if let Some(&(prev, _)) = accepted.last() {
            start = start.max(prev);
        }
        let onset = phasic[start..=i].iter().copied().fold(f64::INFINITY, f64::min);
        let amplitude = phasic[i] - onset;
        if amplitude <= SCR_MIN_AMPLITUDE_US {
            continue;
        }
        match accepted.last_mut() {
            Some(last) if i - last.0 < min_sep => {
                if amplitude > last.1 {
                    *last = (i, amplitude);
                }
            }
            _ => accepted.push((i, amplitude)),
        }
    }
    accepted
        .into_iter()
        .map(|(i, amplitude_us)| ScrPeak {
            time_s: i as f64 / fs,
            amplitude_us,
        })
        .collect()
}

/// Tonic/phasic split by a 0.05 Hz zero-phase low-pass, plus SCR peaks.
pub fn eda_decompose(series: &TimeSeries) -> Result<EdaDecomposition, FeatureError> {
    require_duration(series, EDA_MIN_DURATION_S)?;
    let tonic = dsp::lowpass(series, TONIC_CUTOFF_HZ, 2)?;
    let phasic_values: Vec<f64> = series
        .values()
        .iter()
        .zip(tonic.values())
        .map(|(x, t)| x - t)
        .collect();
    let fs = series.sampling_rate_hz();
    let scr_peaks = detect_scr(&phasic_values, fs)
        .into_iter()
        .map(|p| ScrPeak {
            time_s: p.time_s + series.offset_s(),
            ..p
        })
        .collect();
    Ok(EdaDecomposition {
        phasic: series.derive(phasic_values),
        tonic,
        scr_peaks,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdaFeatures {
    pub scr_peaks_n: f64,
    pub scr_peaks_amplitude_mean_us: f64,
    pub eda_tonic_sd_us: f64,
    pub eda_sympathetic: f64,
    pub eda_sympathetic_n: f64,
    pub eda_autocorrelation: f64,
}

impl EdaFeatures {
    pub fn to_array(&self) -> [f64; N_EDA_FEATURES] {
        [
            self.scr_peaks_n,
            self.scr_peaks_amplitude_mean_us,
            self.eda_tonic_sd_us,
            self.eda_sympathetic,
            self.eda_sympathetic_n,
            self.eda_autocorrelation,
        ]
    }
}

/// Removes high-frequency sensor noise before decomposition.
pub fn clean_eda(series: &TimeSeries) -> Result<TimeSeries, FeatureError> {
    if series.sampling_rate_hz() / 2.0 > EDA_CLEAN_CUTOFF_HZ * 1.01 {
        Ok(dsp::lowpass(series, EDA_CLEAN_CUTOFF_HZ, 4)?)
    } else {
        Ok(series.clone())
    }
}

/// Pearson correlation of the series with itself shifted by `lag` samples.
/// Zero when the series has no variance beyond rounding.
fn lagged_autocorrelation(x: &[f64], lag: usize) -> f64 {
    if x.len() <= lag + 1 || pop_sd(x) <= 1e-9 * (1.0 + mean(x).abs()) {
        return 0.0;
    }
    let (a, b) = (&x[..x.len() - lag], &x[lag..]);
    let (ma, mb) = (mean(a), mean(b));
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (u, v) in a.iter().zip(b) {
        sab += (u - ma) * (v - mb);
        saa += (u - ma) * (u - ma);
        sbb += (v - mb) * (v - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

/// The 6 EDA features. A flat signal yields zeros throughout, including the
/// otherwise undefined autocorrelation.
pub fn eda_features(series: &TimeSeries) -> Result<EdaFeatures, FeatureError> {
    require_duration(series, EDA_MIN_DURATION_S)?;
    let cleaned = clean_eda(series)?;
    let dec = eda_decompose(&cleaned)?;
    let n_peaks = dec.scr_peaks.len();
    let amp_mean = if n_peaks == 0 {
        0.0
    } else {
        dec.scr_peaks.iter().map(|p| p.amplitude_us).sum::<f64>() / n_peaks as f64
    };

    let slow = dsp::resample_fourier(&cleaned, EDA_SPECTRAL_RATE_HZ)?;
    let spec = dsp::welch_psd_default(&slow)?;
    let band = spec.band_power(SYMPATHETIC_BAND_HZ.0, SYMPATHETIC_BAND_HZ.1);
    let total = spec.total_power();
    let lag = (EDA_AUTOCORR_LAG_S * cleaned.sampling_rate_hz()).round() as usize;

    Ok(EdaFeatures {
        scr_peaks_n: n_peaks as f64,
        scr_peaks_amplitude_mean_us: amp_mean,
        eda_tonic_sd_us: pop_sd(dec.tonic.values()),
        eda_sympathetic: band,
        eda_sympathetic_n: if total > NEGLIGIBLE_POWER { band / total } else { 0.0 },
        eda_autocorrelation: lagged_autocorrelation(cleaned.values(), lag),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TempFeatures {
    pub temp_diff_mean_c: f64,
    pub thermopile_mean_c: f64,
    pub reference_mean_c: f64,
    pub temp_gradient_mean_c_per_s: f64,
    pub temp_psd_power: f64,
}

impl TempFeatures {
    pub fn to_array(&self) -> [f64; N_TEMP_FEATURES] {
        [
            self.temp_diff_mean_c,
            self.thermopile_mean_c,
            self.reference_mean_c,
            self.temp_gradient_mean_c_per_s,
            self.temp_psd_power,
        ]
    }
}

/// Centered differences inside, one-sided at the ends, per sample.
fn gradient(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|i| match i {
            0 => x[1] - x[0],
            i if i == n - 1 => x[n - 1] - x[n - 2],
            i => 0.5 * (x[i + 1] - x[i - 1]),
        })
        .collect()
}

/// Temperature features on `diff = reference - thermopile`.
pub fn temp_features(
    thermopile: &TimeSeries,
    reference: &TimeSeries,
) -> Result<TempFeatures, FeatureError> {
    if thermopile.len() != reference.len() {
        return Err(FeatureError::LengthMismatch(thermopile.len(), reference.len()));
    }
    if (thermopile.sampling_rate_hz() - reference.sampling_rate_hz()).abs() > 1e-9 {
        return Err(FeatureError::Dsp(DspError::InvalidParameter(
            "thermopile and reference rates differ".into(),
        )));
    }
    if thermopile.len() < 2 {
        return Err(FeatureError::TooShort {
            needed_s: 2.0 / thermopile.sampling_rate_hz(),
            got_s: thermopile.duration_s(),
        });
    }
    let fs = thermopile.sampling_rate_hz();
    let diff: Vec<f64> = reference
        .values()
        .iter()
        .zip(thermopile.values())
        .map(|(r, t)| r - t)
        .collect();
    let grad = mean(&gradient(&diff)) * fs;
    let diff_series = thermopile.derive(diff);
    let psd = dsp::welch_psd_default(&diff_series)?;
    Ok(TempFeatures {
        temp_diff_mean_c: mean(diff_series.values()),
        thermopile_mean_c: mean(thermopile.values()),
        reference_mean_c: mean(reference.values()),
        temp_gradient_mean_c_per_s: grad,
        temp_psd_power: psd.total_power(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    Baseline,
    Task,
}

impl fmt::Display for Window {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Window::Baseline => "baseline",
            Window::Task => "task",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    Ppg,
    Eda,
    Temperature,
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Channel::Ppg => "ppg",
            Channel::Eda => "eda",
            Channel::Temperature => "temperature",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("channel={channel} window={window}: {source}")]
pub struct ExtractError {
    pub channel: Channel,
    pub window: Window,
    #[source]
    pub source: FeatureError,
}

/// Per-channel processing settings of the extraction chain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExtractConfig {
    pub ppg_band_hz: (f64, f64),
    pub ppg_filter_order: usize,
    pub ppg_rate_hz: f64,
    pub eda_rate_hz: f64,
    pub eda_min_duration_s: f64,
}

impl Default for ExtractConfig {
    fn default() -> Self {
        Self {
            ppg_band_hz: (0.7, 3.5),
            ppg_filter_order: 3,
            ppg_rate_hz: 100.0,
            eda_rate_hz: 100.0,
            eda_min_duration_s: EDA_MIN_DURATION_S,
        }
    }
}

/// Time span of a window: the baseline runs from the recording start to
/// take-off, the task window covers the whole experiment up to its end.
pub fn window_bounds(session: &SessionRecord, window: Window) -> (f64, f64) {
    match window {
        Window::Baseline => (0.0, session.task_start_s),
        Window::Task => (0.0, session.task_end_s),
    }
}

/// Channels after the window-independent conditioning steps.
struct Conditioned {
    ppg: Result<TimeSeries, FeatureError>,
    eda: Result<TimeSeries, FeatureError>,
}

fn condition(session: &SessionRecord, cfg: &ExtractConfig) -> Conditioned {
    let ppg = dsp::bandpass(
        &session.ppg,
        cfg.ppg_band_hz.0,
        cfg.ppg_band_hz.1,
        cfg.ppg_filter_order,
    )
    .and_then(|s| dsp::resample_fourier(&s, cfg.ppg_rate_hz))
    .map_err(FeatureError::from);
    let eda = dsp::resample_fourier_ramp(&session.eda, cfg.eda_rate_hz).map_err(FeatureError::from);
    Conditioned { ppg, eda }
}

fn extract_window(
    session: &SessionRecord,
    prepared: &Conditioned,
    window: Window,
    cfg: &ExtractConfig,
) -> Result<FeatureVector, ExtractError> {
    let (start, end) = window_bounds(session, window);
    let tag = |channel: Channel| move |source: FeatureError| ExtractError { channel, window, source };

    let ppg = prepared
        .ppg
        .clone()
        .and_then(|s| Ok(dsp::segment(&s, start, end)?))
        .and_then(|s| detect_ppg_peaks(&s))
        .and_then(|b| ppg_features(&b))
        .map_err(tag(Channel::Ppg))?;

    let eda = prepared
        .eda
        .clone()
        .and_then(|s| Ok(dsp::segment(&s, start, end)?))
        .map(|s| dsp::extend_to_minimum(&s, cfg.eda_min_duration_s).series)
        .and_then(|s| eda_features(&s))
        .map_err(tag(Channel::Eda))?;

    let temp = (|| {
        let thermo = dsp::segment(&session.thermopile, start, end)?;
        let reference = dsp::segment(&session.reference_temp, start, end)?;
        temp_features(&thermo, &reference)
    })()
    .map_err(tag(Channel::Temperature))?;

    Ok(FeatureVector::from_parts(
        ppg.to_array(),
        eda.to_array(),
        temp.to_array(),
    ))
}

/// The 24-feature vector of one session window.
pub fn extract_all(
    session: &SessionRecord,
    window: Window,
    cfg: &ExtractConfig,
) -> Result<FeatureVector, ExtractError> {
    let prepared = condition(session, cfg);
    extract_window(session, &prepared, window, cfg)
}

/// Task and baseline vectors, sharing the conditioning work.
pub fn extract_task_and_baseline(
    session: &SessionRecord,
    cfg: &ExtractConfig,
) -> Result<(FeatureVector, FeatureVector), ExtractError> {
    let prepared = condition(session, cfg);
    let task = extract_window(session, &prepared, Window::Task, cfg)?;
    let baseline = extract_window(session, &prepared, Window::Baseline, cfg)?;
    Ok((task, baseline))
}
