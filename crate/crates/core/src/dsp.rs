//! Signal conditioning: Butterworth filtering (zero phase), Fourier
//! resampling, time segmentation and Welch spectral estimation.

use std::f64::consts::PI;

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::TimeSeries;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DspError {
    #[error("invalid band: {0}")]
    InvalidBand(String),
    #[error("series too short: need more than {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("segment [{start}, {end}) contains no samples")]
    EmptySegment { start: f64, end: f64 },
    #[error("segment [{start}, {end}) outside series span [0, {duration}]")]
    OutOfRange { start: f64, end: f64, duration: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Pass band of a Butterworth design, in Hz.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Band {
    Lowpass(f64),
    Highpass(f64),
    Bandpass(f64, f64),
}

impl Band {
    fn lowest_edge(&self) -> f64 {
        match *self {
            Band::Lowpass(f) | Band::Highpass(f) => f,
            Band::Bandpass(lo, _) => lo,
        }
    }
}

/// One biquad: `[b0, b1, b2, 1, a1, a2]`.
pub type Sos = [f64; 6];

fn cprod(it: impl Iterator<Item = Complex64>) -> Complex64 {
    it.fold(Complex64::new(1.0, 0.0), |acc, z| acc * z)
}

/// Digital Butterworth design as second-order sections.
///
/// Analog prototype, pre-warped band edges, analog band transform and the
/// bilinear map; the result matches the classic `butter(..., output='sos')`
/// construction.
pub fn butterworth_sos(order: usize, band: Band, fs: f64) -> Result<Vec<Sos>, DspError> {
    if order == 0 {
        return Err(DspError::InvalidParameter("filter order must be >= 1".into()));
    }
    let nyq = fs / 2.0;
    let check = |f: f64| f > 0.0 && f < nyq && f.is_finite();
    match band {
        Band::Lowpass(f) | Band::Highpass(f) if !check(f) => {
            return Err(DspError::InvalidBand(format!(
                "cutoff {f} Hz must lie in (0, {nyq}) Hz"
            )))
        }
        Band::Bandpass(lo, hi) if !(check(lo) && check(hi) && lo < hi) => {
            return Err(DspError::InvalidBand(format!(
                "band ({lo}, {hi}) Hz must satisfy 0 < low < high < {nyq} Hz"
            )))
        }
        _ => {}
    }

    let fs2 = 2.0 * fs;
    let warp = |f: f64| fs2 * (PI * f / fs).tan();
    let n = order as f64;
    let proto: Vec<Complex64> = (0..order)
        .map(|k| {
            let m = -(order as f64) + 1.0 + 2.0 * k as f64;
            -Complex64::from_polar(1.0, PI * m / (2.0 * n))
        })
        .collect();

    let (zeros, poles, gain): (Vec<Complex64>, Vec<Complex64>, f64) = match band {
        Band::Lowpass(f) => {
            let wc = warp(f);
            (vec![], proto.iter().map(|p| p * wc).collect(), wc.powi(order as i32))
        }
        Band::Highpass(f) => {
            let wc = warp(f);
            let poles: Vec<Complex64> = proto.iter().map(|p| wc / p).collect();
            let k = (cprod(proto.iter().map(|p| -p))).inv().re;
            (vec![Complex64::new(0.0, 0.0); order], poles, k)
        }
        Band::Bandpass(lo, hi) => {
            let wl = warp(lo);
            let wh = warp(hi);
            let bw = wh - wl;
            let wo2 = wl * wh;
            let mut poles = Vec::with_capacity(2 * order);
            for p in &proto {
                let pl = p * (bw / 2.0);
                let root = (pl * pl - wo2).sqrt();
                poles.push(pl + root);
                poles.push(pl - root);
            }
            (vec![Complex64::new(0.0, 0.0); order], poles, bw.powi(order as i32))
        }
    };

    // bilinear transform
    let fs2c = Complex64::new(fs2, 0.0);
    let mut zd: Vec<Complex64> = zeros.iter().map(|z| (fs2c + z) / (fs2c - z)).collect();
    let pd: Vec<Complex64> = poles.iter().map(|p| (fs2c + p) / (fs2c - p)).collect();
    let kd = gain
        * (cprod(zeros.iter().map(|z| fs2c - z)) / cprod(poles.iter().map(|p| fs2c - p))).re;
    zd.extend(std::iter::repeat_n(Complex64::new(-1.0, 0.0), poles.len() - zeros.len()));

    Ok(zpk_to_sos(&zd, &pd, kd))
}

fn zpk_to_sos(zeros: &[Complex64], poles: &[Complex64], gain: f64) -> Vec<Sos> {
    let tol = 1e-10;
    let mut complex_poles: Vec<Complex64> =
        poles.iter().copied().filter(|p| p.im > tol).collect();
    complex_poles.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    let mut real_poles: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= tol)
        .map(|p| p.re)
        .collect();
    real_poles.sort_by(f64::total_cmp);

    let mut dens: Vec<[f64; 3]> = complex_poles
        .iter()
        .map(|p| [1.0, -2.0 * p.re, p.norm_sqr()])
        .collect();
    let mut chunks = real_poles.chunks(2);
    for c in chunks.by_ref() {
        match c {
            [a, b] => dens.push([1.0, -(a + b), a * b]),
            [a] => dens.push([1.0, -a, 0.0]),
            _ => unreachable!(),
        }
    }

    // Butterworth digital zeros are all real (+1 or -1).
    let mut zr: Vec<f64> = zeros.iter().map(|z| z.re).collect();
    zr.sort_by(f64::total_cmp);
    let mut nums = Vec::new();
    let half = zr.len() / 2;
    for i in 0..half {
        let (a, b) = (zr[i], zr[zr.len() - 1 - i]);
        nums.push([1.0, -(a + b), a * b]);
    }
    if zr.len() % 2 == 1 {
        nums.push([1.0, -zr[half], 0.0]);
    }
    debug_assert_eq!(nums.len(), dens.len());

    let mut sos: Vec<Sos> = nums
        .iter()
        .zip(&dens)
        .map(|(b, a)| [b[0], b[1], b[2], a[0], a[1], a[2]])
        .collect();
    for c in sos[0].iter_mut().take(3) {
        *c *= gain;
    }
    sos
}

/// Complex frequency response of a cascade at `f_hz`.
pub fn sos_response(sos: &[Sos], f_hz: f64, fs: f64) -> Complex64 {
    let w = 2.0 * PI * f_hz / fs;
    let z1 = Complex64::from_polar(1.0, -w);
    let z2 = z1 * z1;
    sos.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
        acc * (s[0] + z1 * s[1] + z2 * s[2]) / (s[3] + z1 * s[4] + z2 * s[5])
    })
}

/// Direct-form II transposed cascade with per-section state.
fn sos_filter(sos: &[Sos], x: &[f64], state: &mut [[f64; 2]]) -> Vec<f64> {
    let mut y = x.to_vec();
    for (s, z) in sos.iter().zip(state.iter_mut()) {
        for v in y.iter_mut() {
            let xin = *v;
            let out = s[0] * xin + z[0];
            z[0] = s[1] * xin - s[4] * out + z[1];
            z[1] = s[2] * xin - s[5] * out;
            *v = out;
        }
    }
    y
}

/// Per-section state giving a steady-state response to a unit step.
fn sos_steady_state(sos: &[Sos]) -> Vec<[f64; 2]> {
    let mut scale = 1.0;
    sos.iter()
        .map(|s| {
            let g = (s[0] + s[1] + s[2]) / (1.0 + s[4] + s[5]);
            let zi = [scale * (g - s[0]), scale * (s[2] - s[5] * g)];
            scale *= g;
            zi
        })
        .collect()
}

/// Forward-backward filtering with odd extension at both ends.
pub fn sos_filtfilt(sos: &[Sos], x: &[f64], padlen: usize) -> Result<Vec<f64>, DspError> {
    let min_len = 3 * (2 * sos.len() + 1);
    if x.len() <= min_len {
        return Err(DspError::TooShort {
            needed: min_len,
            got: x.len(),
        });
    }
    let n = x.len();
    let padlen = padlen.clamp(min_len, n - 1);
    let mut ext = Vec::with_capacity(n + 2 * padlen);
    ext.extend((1..=padlen).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=padlen).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let zi = sos_steady_state(sos);
    let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * ext[0], z[1] * ext[0]]).collect();
    let mut y = sos_filter(sos, &ext, &mut state);
    y.reverse();
    let mut state: Vec<[f64; 2]> = zi.iter().map(|z| [z[0] * y[0], z[1] * y[0]]).collect();
    let mut y = sos_filter(sos, &y, &mut state);
    y.reverse();
    Ok(y[padlen..padlen + n].to_vec())
}

/// Zero-phase Butterworth filter of any band type.
pub fn butterworth_filtfilt(
    series: &TimeSeries,
    band: Band,
    order: usize,
) -> Result<TimeSeries, DspError> {
    let fs = series.sampling_rate_hz();
    let sos = butterworth_sos(order, band, fs)?;
    // Extension of several time constants of the lowest edge so the start-up
    // transient decays before the real data begins.
    let padlen = (3.0 * fs / band.lowest_edge()).ceil() as usize;
    let y = sos_filtfilt(&sos, series.values(), padlen)?;
    Ok(series.derive(y))
}

/// Zero-phase Butterworth bandpass.
pub fn bandpass(
    series: &TimeSeries,
    low_hz: f64,
    high_hz: f64,
    order: usize,
) -> Result<TimeSeries, DspError> {
    butterworth_filtfilt(series, Band::Bandpass(low_hz, high_hz), order)
}

pub fn lowpass(series: &TimeSeries, cutoff_hz: f64, order: usize) -> Result<TimeSeries, DspError> {
    butterworth_filtfilt(series, Band::Lowpass(cutoff_hz), order)
}

/// Band-limited resampling by zero-padding or truncating the DFT.
///
/// The output has `round(len * target / source)` samples. An even-length
/// Nyquist bin is split (upsampling) or folded (downsampling) so real input
/// stays real.
pub fn resample_fourier(series: &TimeSeries, target_rate_hz: f64) -> Result<TimeSeries, DspError> {
    if !(target_rate_hz.is_finite() && target_rate_hz > 0.0) {
        return Err(DspError::InvalidParameter(format!(
            "target rate must be positive, got {target_rate_hz}"
        )));
    }
    let n = series.len();
    if n < 2 {
        return Err(DspError::TooShort { needed: 1, got: n });
    }
    let fs = series.sampling_rate_hz();
    let m = ((n as f64) * target_rate_hz / fs).round() as usize;
    if m == 0 {
        return Err(DspError::TooShort { needed: 1, got: n });
    }
    let new_rate = fs * m as f64 / n as f64;
    if m == n {
        return Ok(series.clone());
    }
    let y = resample_values(series.values(), m);
    Ok(series.derive_rate(y, new_rate, series.offset_s()))
}

/// Fourier resampling of the residual after removing the straight line
/// through the first and last samples, which is added back afterwards.
///
/// Plain Fourier resampling treats the signal as periodic, so a level
/// difference between the two ends rings across the edges. Drifting signals
/// such as skin conductance are resampled this way.
pub fn resample_fourier_ramp(series: &TimeSeries, target_rate_hz: f64) -> Result<TimeSeries, DspError> {
    let x = series.values();
    let n = x.len();
    if n < 2 {
        return resample_fourier(series, target_rate_hz);
    }
    let (a, slope) = (x[0], (x[n - 1] - x[0]) / (n - 1) as f64);
    let residual = series.derive(x.iter().enumerate().map(|(i, v)| v - a - slope * i as f64).collect());
    let out = resample_fourier(&residual, target_rate_hz)?;
    let step = n as f64 / out.len() as f64;
    let values = out
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| v + a + slope * j as f64 * step)
        .collect();
    Ok(out.derive(values))
}

fn resample_values(x: &[f64], m: usize) -> Vec<f64> {
    let n = x.len();
    let mut planner = FftPlanner::<f64>::new();
    let mut spec: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    planner.plan_fft_forward(n).process(&mut spec);

    let big_n = n.min(m);
    let nyq = big_n / 2 + 1;
    let mut out = vec![Complex64::new(0.0, 0.0); m];
    out[..nyq].copy_from_slice(&spec[..nyq]);
    if big_n.is_multiple_of(2) {
        if m < n {
            out[big_n / 2] = Complex64::new(2.0 * spec[big_n / 2].re, 0.0);
        } else {
            out[big_n / 2] *= 0.5;
        }
    }
    // Hermitian completion of the negative frequencies.
    for k in 1..nyq {
        if m - k > k {
            out[m - k] = out[k].conj();
        }
    }
    planner.plan_fft_inverse(m).process(&mut out);
    let scale = 1.0 / n as f64;
    out.iter().map(|c| c.re * scale).collect()
}

const INDEX_EPS: f64 = 1e-7;

/// Samples whose times fall in `[start_s, end_s)` of the series' own frame.
pub fn segment(series: &TimeSeries, start_s: f64, end_s: f64) -> Result<TimeSeries, DspError> {
    let fs = series.sampling_rate_hz();
    let offset = series.offset_s();
    let span = offset + series.duration_s();
    if !(start_s >= 0.0 && start_s < end_s && end_s <= span + INDEX_EPS / fs) {
        return Err(DspError::OutOfRange {
            start: start_s,
            end: end_s,
            duration: span,
        });
    }
    let n = series.len();
    let first = (((start_s - offset) * fs - INDEX_EPS).ceil().max(0.0) as usize).min(n);
    let last = (((end_s - offset) * fs - INDEX_EPS).ceil().max(0.0) as usize).min(n);
    if first >= last {
        return Err(DspError::EmptySegment {
            start: start_s,
            end: end_s,
        });
    }
    let new_offset = offset + first as f64 / fs - start_s;
    Ok(series.derive_rate(
        series.values()[first..last].to_vec(),
        fs,
        new_offset.max(0.0),
    ))
}

/// A series padded to a minimum duration, and how much padding was added.
#[derive(Debug, Clone, PartialEq)]
pub struct Extended {
    pub series: TimeSeries,
    pub padding_s: f64,
}

/// Head-pads by repeating the first sample until the duration reaches `min_s`.
pub fn extend_to_minimum(series: &TimeSeries, min_s: f64) -> Extended {
    let fs = series.sampling_rate_hz();
    let dur = series.duration_s();
    if series.is_empty() || dur >= min_s - INDEX_EPS / fs {
        return Extended {
            series: series.clone(),
            padding_s: 0.0,
        };
    }
    let pad = ((min_s - dur) * fs - INDEX_EPS).ceil() as usize;
    let first = series.values()[0];
    let mut values = vec![first; pad];
    values.extend_from_slice(series.values());
    Extended {
        series: series.derive_rate(values, fs, 0.0),
        padding_s: pad as f64 / fs,
    }
}

/// One-sided power spectral density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Spectrum {
    pub frequencies_hz: Vec<f64>,
    /// Input units squared per Hz.
    pub power: Vec<f64>,
}

impl Spectrum {
    pub fn bin_width(&self) -> f64 {
        if self.frequencies_hz.len() < 2 {
            0.0
        } else {
            self.frequencies_hz[1] - self.frequencies_hz[0]
        }
    }

    /// Trapezoid integral over the whole spectrum.
    pub fn total_power(&self) -> f64 {
        trapezoid(&self.frequencies_hz, &self.power)
    }

    /// Trapezoid integral over the bins lying inside `[lo, hi]`.
    pub fn band_power(&self, lo: f64, hi: f64) -> f64 {
        let (f, p): (Vec<f64>, Vec<f64>) = self
            .frequencies_hz
            .iter()
            .zip(&self.power)
            .filter(|(f, _)| **f >= lo && **f <= hi)
            .map(|(f, p)| (*f, *p))
            .unzip();
        trapezoid(&f, &p)
    }

    /// Frequency of the largest bin inside `[lo, hi]`; first bin wins ties.
    pub fn peak_frequency(&self, lo: f64, hi: f64) -> Option<f64> {
        let mut best: Option<(f64, f64)> = None;
        for (&f, &p) in self.frequencies_hz.iter().zip(&self.power) {
            if f < lo || f > hi {
                continue;
            }
            if best.is_none_or(|(_, bp)| p > bp) {
                best = Some((f, p));
            }
        }
        best.map(|(f, _)| f)
    }
}

pub fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (ys[0] + ys[1]) * (xs[1] - xs[0]))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WelchParams {
    pub segment_len: usize,
    pub overlap: f64,
    /// FFT length; zero-padding when larger than `segment_len`.
    pub nfft: usize,
}

impl WelchParams {
    /// `min(len, 256)` samples, half overlap, no zero padding.
    pub fn default_for(len: usize) -> Self {
        let seg = len.min(256);
        Self {
            segment_len: seg,
            overlap: 0.5,
            nfft: seg,
        }
    }
}

/// Welch PSD with a periodic Hann window and per-segment mean removal.
pub fn welch_psd(series: &TimeSeries, segment_len: usize, overlap: f64) -> Result<Spectrum, DspError> {
    welch_psd_with(
        series,
        WelchParams {
            segment_len,
            overlap,
            nfft: segment_len,
        },
    )
}

pub fn welch_psd_default(series: &TimeSeries) -> Result<Spectrum, DspError> {
    welch_psd_with(series, WelchParams::default_for(series.len()))
}

pub fn welch_psd_with(series: &TimeSeries, params: WelchParams) -> Result<Spectrum, DspError> {
    let x = series.values();
    let seg = params.segment_len;
    if seg < 2 || seg > x.len() {
        return Err(DspError::TooShort {
            needed: seg.max(2),
            got: x.len(),
        });
    }
    if !(0.0..1.0).contains(&params.overlap) {
        return Err(DspError::InvalidParameter(format!(
            "overlap must be in [0, 1), got {}",
            params.overlap
        )));
    }
    let nfft = params.nfft.max(seg);
    let fs = series.sampling_rate_hz();
    let noverlap = (params.overlap * seg as f64).floor() as usize;
    let step = (seg - noverlap).max(1);
    let window: Vec<f64> = (0..seg)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos())
        .collect();
    let wss: f64 = window.iter().map(|w| w * w).sum();
    let n_bins = nfft / 2 + 1;

    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_forward(nfft);
    let mut acc = vec![0.0; n_bins];
    let mut count = 0usize;
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    let mut start = 0;
    while start + seg <= x.len() {
        let chunk = &x[start..start + seg];
        let mean = chunk.iter().sum::<f64>() / seg as f64;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < seg {
                Complex64::new((chunk[i] - mean) * window[i], 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for (a, b) in acc.iter_mut().zip(&buf) {
            *a += b.norm_sqr();
        }
        count += 1;
        start += step;
    }
    let scale = 1.0 / (fs * wss * count as f64);
    let power: Vec<f64> = acc
        .iter()
        .enumerate()
        .map(|(k, &p)| {
            let one_sided = if k == 0 || (nfft.is_multiple_of(2) && k == nfft / 2) {
                1.0
            } else {
                2.0
            };
            p * scale * one_sided
        })
        .collect();
    let frequencies_hz = (0..n_bins).map(|k| k as f64 * fs / nfft as f64).collect();
    Ok(Spectrum {
        frequencies_hz,
        power,
    })
}
