//! Spectral peak picking and resampling of sampled signals.

use rustfft::{num_complex::Complex, FftPlanner};

use crate::error::{Error, Result};

/// Minimum number of samples accepted by [`dominant_frequency`].
pub const MIN_SAMPLES: usize = 64;

/// Frequency (Hz) of the largest peak of the Hann-windowed periodogram of
/// `series` sampled every `dt` seconds.
///
/// The mean is removed and the signal zero-padded to at least 16 times its
/// length; the peak bin is refined by a parabola through the log-magnitudes
/// of its neighbors.
///
/// ```
/// use piezobeam::signal::dominant_frequency;
///
/// let dt = 2e-5;
/// let x: Vec<f64> = (0..2500).map(|i| (2.0 * std::f64::consts::PI * 147.59 * i as f64 * dt).sin()).collect();
/// let f = dominant_frequency(&x, dt).unwrap();
/// assert!((f - 147.59).abs() < 0.5);
/// ```
pub fn dominant_frequency(series: &[f64], dt: f64) -> Result<f64> {
    let n = series.len();
    if n < MIN_SAMPLES {
        return Err(Error::invalid("series", format!("need at least {MIN_SAMPLES} samples, got {n}")));
    }
    if !(dt > 0.0) {
        return Err(Error::invalid("dt", "must be positive"));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let var = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>();
    let scale = series.iter().map(|x| x * x).sum::<f64>();
    if !(var > 1e-24 * scale) {
        return Err(Error::NoSpectralPeak);
    }
    let nfft = (16 * n).next_power_of_two();
    let mut buf = vec![Complex::new(0.0, 0.0); nfft];
    for (i, (b, x)) in buf.iter_mut().zip(series).enumerate() {
        let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        b.re = w * (x - mean);
    }
    FftPlanner::new().plan_fft_forward(nfft).process(&mut buf);
    let power: Vec<f64> = buf[..nfft / 2 + 1].iter().map(|c| c.norm_sqr()).collect();
    let max = power.iter().copied().fold(0.0, f64::max);
    if !(max > 0.0) || !max.is_finite() {
        return Err(Error::NoSpectralPeak);
    }
    // Skip the DC lobe left over after mean removal.
    let (k, _) = power
        .iter()
        .enumerate()
        .skip(1)
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best });
    if k == 0 || power[k] <= 1e-24 * max {
        return Err(Error::NoSpectralPeak);
    }
    let shift = if k + 1 < power.len() {
        let (a, b, c) = (power[k - 1].max(1e-300).ln(), power[k].ln(), power[k + 1].max(1e-300).ln());
        let den = a - 2.0 * b + c;
        if den < 0.0 {
            0.5 * (a - c) / den
        } else {
            0.0
        }
    } else {
        0.0
    };
    Ok((k as f64 + shift) / (nfft as f64 * dt))
}

/// Piecewise-linear interpolation of `(times, values)` at `t`.
///
/// `times` must be strictly increasing; `t` outside the range is an error.
pub fn interpolate(times: &[f64], values: &[f64], t: f64) -> Result<f64> {
    let (lo, w) = bracket(times, t)?;
    Ok(if w == 0.0 { values[lo] } else { (1.0 - w) * values[lo] + w * values[lo + 1] })
}

/// Index `i` and weight `w` with `t = (1 − w) times[i] + w times[i + 1]`.
pub fn bracket(times: &[f64], t: f64) -> Result<(usize, f64)> {
    let n = times.len();
    if n == 0 {
        return Err(Error::Empty("interpolation table".into()));
    }
    let (first, last) = (times[0], times[n - 1]);
    let slack = 1e-9 * (last - first).abs().max(f64::MIN_POSITIVE);
    if !(t >= first - slack && t <= last + slack) {
        return Err(Error::invalid("t", format!("{t:e} outside [{first:e}, {last:e}]")));
    }
    if n == 1 {
        return Ok((0, 0.0));
    }
    let i = times.partition_point(|&x| x <= t).clamp(1, n - 1) - 1;
    let w = ((t - times[i]) / (times[i + 1] - times[i])).clamp(0.0, 1.0);
    Ok((i, w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn tone(f: f64, amp: f64, dt: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| amp * (2.0 * PI * f * i as f64 * dt).sin()).collect()
    }

    #[test]
    fn pure_tone() {
        let dt = 2e-5;
        let x = tone(147.59, 1.0, dt, 2500);
        let f = dominant_frequency(&x, dt).unwrap();
        assert!((f - 147.59).abs() <= 2.0, "{f}");
    }

    #[test]
    fn weaker_overtone_is_ignored() {
        let dt = 2e-5;
        let a = tone(147.59, 1.0, dt, 2500);
        let b = tone(900.0, 0.1, dt, 2500);
        let x: Vec<f64> = a.iter().zip(&b).map(|(a, b)| a + b).collect();
        let f = dominant_frequency(&x, dt).unwrap();
        assert!((f - 147.59).abs() <= 2.0, "{f}");
    }

    #[test]
    fn constant_has_no_peak() {
        assert!(matches!(dominant_frequency(&[3.0; 100], 1e-3), Err(Error::NoSpectralPeak)));
        assert!(matches!(dominant_frequency(&[0.1; 100], 1e-3), Err(Error::NoSpectralPeak)));
        assert!(dominant_frequency(&[1.0; 10], 1e-3).is_err());
    }

    #[test]
    fn interpolation() {
        let t = [0.0, 1.0, 3.0];
        let v = [0.0, 2.0, 6.0];
        assert_eq!(interpolate(&t, &v, 0.5).unwrap(), 1.0);
        assert_eq!(interpolate(&t, &v, 3.0).unwrap(), 6.0);
        assert_eq!(interpolate(&t, &v, 2.0).unwrap(), 4.0);
        assert!(interpolate(&t, &v, 3.5).is_err());
    }

    proptest::proptest! {
        #[test]
        fn tone_frequency_recovered(f in 50.0f64..2000.0, phase in 0.0f64..6.0) {
            let dt = 1e-4;
            let x: Vec<f64> = (0..1000).map(|i| (2.0 * PI * f * i as f64 * dt + phase).sin()).collect();
            let got = dominant_frequency(&x, dt).unwrap();
            // One unpadded bin is 10 Hz here.
            proptest::prop_assert!((got - f).abs() < 2.0, "{} vs {}", got, f);
        }
    }
}
