//! Starting point for the ringdown fit.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::RingdownParamSet;
use crate::angle::{circular_diff, wrap_pi, wrap_two_pi};
use crate::dynamics::linear_fit;
use crate::error::{Error, Result};
use crate::signal::RingdownRecord;

/// Detection threshold on the normalized spectral peak.
pub const MIN_PEAK_SNR: f64 = 3.0;

/// Axis response written as `R·cos(θ + c)`: returns `(R, c)`.
pub(crate) fn axis_response(axis: [f64; 3]) -> (f64, f64) {
    let (a, b) = (axis[0], axis[1]);
    ((4.0 * a * a + b * b).sqrt(), b.atan2(2.0 * a))
}

/// Heuristic parameters for a record.
///
/// The frequency comes from the zero-padded, Hann-windowed spectrum with
/// parabolic peak interpolation. When the peak is the second harmonic (sensor
/// close to perpendicular), the device's field-free frequency picks the right
/// branch. κ is the geometric value. θ₀ is refined from the first/second
/// harmonic amplitude ratio on the branch nearest the record's nominal θ₀.
pub fn initial_guess(record: &RingdownRecord) -> Result<RingdownParamSet> {
    let n = record.len();
    if n < 16 {
        return Err(Error::InsufficientPeriods { found: 0, needed: 10 });
    }
    let dt = record.dt();
    let fs = record.meta.config.sample_rate;
    let y = &record.s_final;
    let mean = y.iter().sum::<f64>() / n as f64;

    let (peak_f, snr) = spectral_peak(y, mean, fs);
    if !(snr >= MIN_PEAK_SNR) {
        return Err(Error::NoOscillation { snr });
    }
    let f_dev = record.meta.device.natural_frequency();
    let halved = (peak_f / 2.0 / f_dev).ln().abs() < (peak_f / f_dev).ln().abs();
    let f = if halved { peak_f / 2.0 } else { peak_f };
    let duration = n as f64 * dt;
    if duration * f < 10.0 {
        return Err(Error::InsufficientPeriods {
            found: (duration * f) as usize,
            needed: 10,
        });
    }

    // envelope decay from per-period RMS above the noise floor
    let noise_var = y.windows(2).map(|w| (w[1] - w[0]).powi(2)).sum::<f64>() / (2.0 * (n - 1) as f64);
    let win = ((fs / f).round() as usize).max(4);
    let mut tt = Vec::new();
    let mut ln_amp = Vec::new();
    for (k, chunk) in y.chunks_exact(win).enumerate() {
        let m = chunk.iter().sum::<f64>() / win as f64;
        let var = chunk.iter().map(|v| (v - m).powi(2)).sum::<f64>() / win as f64;
        if var > 2.0 * noise_var {
            tt.push((k as f64 + 0.5) * win as f64 * dt);
            ln_amp.push(0.5 * (var - noise_var).ln());
        }
    }
    let rate = if tt.len() >= 3 { -linear_fit(&tt, &ln_amp).0 } else { 0.0 };
    let delta = if halved { rate / 2.0 } else { rate }.max(0.0);

    // harmonic amplitudes extrapolated to t = 0
    let demod = |freq: f64, decay: f64| -> (f64, f64) {
        let (mut re, mut im, mut wsum) = (0.0, 0.0, 0.0);
        for (i, v) in y.iter().enumerate() {
            let t = i as f64 * dt;
            let (s, c) = (2.0 * PI * freq * t).sin_cos();
            re += (v - mean) * c;
            im -= (v - mean) * s;
            wsum += (-decay * t).exp();
        }
        (2.0 * (re * re + im * im).sqrt() / wsum, im.atan2(re))
    };
    let (a1, psi1) = demod(f, delta);
    let (a2, psi2) = demod(2.0 * f, 2.0 * delta);

    let meta = &record.meta;
    let (resp, c) = axis_response(meta.config.axis);
    let kappa = meta.config.kappa(meta.device.moment);
    let scale = kappa * resp;
    let hint = meta.theta0;

    // small-angle harmonics: a1 = scale·|sin(θ₀+c)|·θm, a2 = scale·|cos(θ₀+c)|·θm²/4
    let mut theta_t_max = meta.device.theta_max;
    let mut theta0 = hint;
    if scale > 0.0 {
        let mismatch = |tm: f64| (a1 / (scale * tm)).powi(2) + (4.0 * a2 / (scale * tm * tm)).powi(2) - 1.0;
        let (mut lo, mut hi) = (1e-4, PI / 2.0 - 1e-3);
        if mismatch(lo) > 0.0 && mismatch(hi) < 0.0 {
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if mismatch(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            theta_t_max = 0.5 * (lo + hi);
            let alpha = (a1 / (scale * theta_t_max)).atan2(4.0 * a2 / (scale * theta_t_max * theta_t_max));
            theta0 = [alpha, PI - alpha, PI + alpha, -alpha]
                .into_iter()
                .map(|x| wrap_two_pi(x - c))
                .min_by(|x, y| {
                    circular_diff(*x, hint)
                        .abs()
                        .total_cmp(&circular_diff(*y, hint).abs())
                })
                .unwrap_or(hint);
        }
    }

    // first harmonic ∝ −sin(θ₀+c)·cos(2πft + φ)
    let s = (theta0 + c).sin();
    let co = (theta0 + c).cos();
    let phase = if s.abs() * theta_t_max >= co.abs() * theta_t_max * theta_t_max / 4.0 {
        if s > 0.0 {
            psi1 + PI
        } else {
            psi1
        }
    } else {
        // second harmonic ∝ −cos(θ₀+c)·cos(2(2πft + φ))/4
        let psi = if co > 0.0 { psi2 + PI } else { psi2 };
        psi / 2.0
    };

    // DC offset from the trailing quarter, where the oscillation is smallest
    let tail_start = 3 * n / 4;
    let mut tail_sum = 0.0;
    let mut model_sum = 0.0;
    for (i, v) in y.iter().enumerate().skip(tail_start) {
        let t = i as f64 * dt;
        let x = theta_t_max * (-delta * t).exp();
        tail_sum += v;
        // cycle average of cos(θ₀+c+x·cosψ) ≈ cos(θ₀+c)·J0(x)
        model_sum += scale * co * (1.0 - x * x / 4.0);
    }
    let dc_offset = (tail_sum - model_sum) / (n - tail_start) as f64;

    Ok(RingdownParamSet {
        kappa,
        theta0: wrap_two_pi(theta0),
        theta_t_max,
        frequency: f,
        phase: wrap_pi(phase),
        damping: delta,
        dc_offset,
    })
}

/// Strongest spectral peak and its SNR relative to the expected maximum of a
/// pure-noise spectrum (≈ 1 for noise alone).
fn spectral_peak(y: &[f64], mean: f64, fs: f64) -> (f64, f64) {
    let n = y.len();
    let len = (n.next_power_of_two() * 8).max(1024);
    let mut buf: Vec<Complex<f64>> = vec![Complex::new(0.0, 0.0); len];
    for (i, v) in y.iter().enumerate() {
        let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / (n - 1) as f64).cos();
        buf[i] = Complex::new((v - mean) * w, 0.0);
    }
    FftPlanner::new().plan_fft_forward(len).process(&mut buf);
    let half = len / 2;
    let mag: Vec<f64> = buf[..half].iter().map(|c| c.norm()).collect();
    // skip the lowest bins, which hold leftover DC and drift
    let lo = ((1.0 * len as f64 / fs).ceil() as usize).max(2);
    let mut k = lo;
    for i in lo..half - 1 {
        if mag[i] > mag[k] {
            k = i;
        }
    }
    let (a, b, c) = (mag[k - 1].max(1e-300).ln(), mag[k].max(1e-300).ln(), mag[k + 1].max(1e-300).ln());
    let denom = a - 2.0 * b + c;
    let off = if denom != 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    let peak_f = (k as f64 + off) * fs / len as f64;

    // zero padding makes bins correlated; count independent bins only
    let pad = len / n.max(1);
    let mut sample: Vec<f64> = mag[lo..half].iter().step_by(pad.max(1)).map(|m| m * m).collect();
    sample.sort_by(|x, y| x.total_cmp(y));
    let median = sample[sample.len() / 2].max(1e-300);
    let n_indep = sample.len().max(2) as f64;
    let noise_max = (median * n_indep.ln() / 2f64.ln()).sqrt();
    (peak_f, mag[k] / noise_max)
}
