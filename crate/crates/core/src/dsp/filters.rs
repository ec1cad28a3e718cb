//! The three optional pre-processing filters: mains notch, first-order EMG
//! high-pass, and a normalized-LMS adaptive ECG canceller.

use super::DspError;

/// Second-order IIR notch (quality factor 25) at the mains frequency,
/// applied causally at the original sampling rate.
pub fn notch_filter(signal: &[f64], fs: f64, mains_hz: f64) -> Result<Vec<f64>, DspError> {
    if !(fs > 0.0) {
        return Err(DspError::InvalidArgument(format!("fs must be > 0, got {fs}")));
    }
    if mains_hz >= fs / 2.0 || mains_hz <= 0.0 {
        return Err(DspError::FilterDesign(format!(
            "notch frequency {mains_hz} Hz outside (0, {}) for fs {fs}",
            fs / 2.0
        )));
    }
    const Q: f64 = 25.0;
    let w0 = 2.0 * std::f64::consts::PI * mains_hz / fs;
    let alpha = w0.sin() / (2.0 * Q);
    let cos_w0 = w0.cos();
    let a0 = 1.0 + alpha;
    let b = [1.0 / a0, -2.0 * cos_w0 / a0, 1.0 / a0];
    let a = [-2.0 * cos_w0 / a0, (1.0 - alpha) / a0];
    Ok(biquad(signal, b, a))
}

/// First-order high-pass (bilinear design, exact -3 dB at the cut-off),
/// applied to the chin EMG to remove DC and low-frequency drift.
pub fn highpass_emg(signal: &[f64], fs: f64, cutoff: f64) -> Result<Vec<f64>, DspError> {
    if !(fs > 0.0) {
        return Err(DspError::InvalidArgument(format!("fs must be > 0, got {fs}")));
    }
    if cutoff <= 0.0 || cutoff >= fs / 2.0 {
        return Err(DspError::InvalidArgument(format!(
            "high-pass cutoff {cutoff} Hz outside (0, {}) for fs {fs}",
            fs / 2.0
        )));
    }
    let t = (std::f64::consts::PI * cutoff / fs).tan();
    let a = (1.0 - t) / (1.0 + t);
    let g = (1.0 + a) / 2.0;
    let mut out = Vec::with_capacity(signal.len());
    let mut x_prev = 0.0;
    let mut y_prev = 0.0;
    for &x in signal {
        let y = g * (x - x_prev) + a * y_prev;
        out.push(y);
        x_prev = x;
        y_prev = y;
    }
    Ok(out)
}

/// Normalized-LMS adaptive interference canceller. The ECG reference passes
/// through a 0.1 s tapped-delay line; the returned signal is
/// `target - estimate`. Step size 0.05 / (1e-8 + reference power), where the
/// reference power is the tap-vector power floored by its running mean:
/// QRS-like references are silent most of the time, and normalizing by a
/// near-zero instantaneous power would amplify gradient noise between beats.
pub fn ecg_cancel(target: &[f64], ecg: &[f64], fs: f64) -> Result<Vec<f64>, DspError> {
    if target.len() != ecg.len() {
        return Err(DspError::LengthMismatch { a: target.len(), b: ecg.len() });
    }
    if !(fs > 0.0) {
        return Err(DspError::InvalidArgument(format!("fs must be > 0, got {fs}")));
    }
    const MU: f64 = 0.05;
    const EPS: f64 = 1e-8;
    let taps = ((0.1 * fs).round() as usize).max(1);
    let mut w = vec![0.0; taps];
    let mut out = Vec::with_capacity(target.len());
    let mut power_sum = 0.0;
    for n in 0..target.len() {
        let mut estimate = 0.0;
        let mut power = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let u = if n >= k { ecg[n - k] } else { 0.0 };
            estimate += wk * u;
            power += u * u;
        }
        power_sum += power;
        let avg_power = power_sum / (n + 1) as f64;
        let e = target[n] - estimate;
        out.push(e);
        let step = MU / (EPS + power.max(avg_power)) * e;
        for (k, wk) in w.iter_mut().enumerate() {
            let u = if n >= k { ecg[n - k] } else { 0.0 };
            *wk += step * u;
        }
    }
    Ok(out)
}

fn biquad(signal: &[f64], b: [f64; 3], a: [f64; 2]) -> Vec<f64> {
    // Direct form II transposed.
    let mut z1 = 0.0;
    let mut z2 = 0.0;
    signal
        .iter()
        .map(|&x| {
            let y = b[0] * x + z1;
            z1 = b[1] * x - a[0] * y + z2;
            z2 = b[2] * x - a[1] * y;
            y
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{rms, sine_amplitude};
    use super::*;

    fn sine(freq: f64, fs: f64, seconds: f64, amp: f64) -> Vec<f64> {
        (0..(fs * seconds) as usize)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
            .collect()
    }

    #[test]
    fn notch_kills_mains_tone() {
        for (fs, mains) in [(200.0, 50.0), (256.0, 60.0)] {
            let x = sine(mains, fs, 12.0, 1.0);
            let y = notch_filter(&x, fs, mains).unwrap();
            let skip = (2.0 * fs) as usize;
            let reduction = rms(&y[skip..]) / rms(&x[skip..]);
            assert!(reduction <= 0.1, "fs {fs}: residual ratio {reduction}");
        }
    }

    #[test]
    fn notch_attenuation_at_least_20db_at_mains() {
        let fs = 200.0;
        let x = sine(50.0, fs, 12.0, 1.0);
        let y = notch_filter(&x, fs, 50.0).unwrap();
        let amp = sine_amplitude(&y, fs, 50.0, 2.0);
        assert!(amp < 0.1, "mains amplitude {amp} (>= -20 dB)");
    }

    #[test]
    fn notch_passband_within_1db_at_5hz_offset() {
        let fs = 200.0;
        for freq in [45.0, 55.0] {
            let x = sine(freq, fs, 12.0, 1.0);
            let y = notch_filter(&x, fs, 50.0).unwrap();
            let amp = sine_amplitude(&y, fs, freq, 2.0);
            assert!(amp >= 0.891, "amplitude {amp} at {freq} Hz beyond 1 dB");
        }
    }

    #[test]
    fn notch_leaves_10hz_untouched() {
        let fs = 200.0;
        let x = sine(10.0, fs, 12.0, 1.0);
        let y = notch_filter(&x, fs, 50.0).unwrap();
        let amp = sine_amplitude(&y, fs, 10.0, 2.0);
        assert!(amp >= 0.891 && amp <= 1.122, "amplitude {amp}");
    }

    #[test]
    fn notch_dc_preserved() {
        let x = vec![5.0; 2000];
        let y = notch_filter(&x, 200.0, 50.0).unwrap();
        let v = y[y.len() - 1];
        assert!((v - 5.0).abs() < 1e-6, "steady state {v}");
    }

    #[test]
    fn notch_rejects_unreachable_mains() {
        assert!(matches!(notch_filter(&[0.0; 10], 100.0, 60.0), Err(DspError::FilterDesign(_))));
    }

    #[test]
    fn highpass_rejects_dc() {
        let x = vec![4.0; 1000];
        let y = highpass_emg(&x, 200.0, 15.0).unwrap();
        let v = y[y.len() - 1].abs();
        assert!(v < 1e-3 * 4.0, "steady state {v}");
    }

    #[test]
    fn highpass_minus_3db_at_cutoff() {
        let fs = 200.0;
        let x = sine(15.0, fs, 12.0, 1.0);
        let y = highpass_emg(&x, fs, 15.0).unwrap();
        let amp = sine_amplitude(&y, fs, 15.0, 2.0);
        assert!((amp - 0.707).abs() <= 0.04, "amplitude {amp}");
    }

    #[test]
    fn highpass_passes_high_band() {
        let fs = 200.0;
        let x = sine(80.0, fs, 12.0, 1.0);
        let y = highpass_emg(&x, fs, 15.0).unwrap();
        let amp = sine_amplitude(&y, fs, 80.0, 2.0);
        assert!(amp >= 0.98, "amplitude {amp}");
    }

    #[test]
    fn highpass_invalid_cutoff() {
        assert!(highpass_emg(&[0.0; 4], 200.0, 0.0).is_err());
        assert!(highpass_emg(&[0.0; 4], 200.0, 120.0).is_err());
    }

    #[test]
    fn filters_are_linear() {
        let fs = 200.0;
        let x = sine(12.0, fs, 4.0, 1.0);
        let y = sine(31.0, fs, 4.0, 0.6);
        let sum: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
        let fx = notch_filter(&x, fs, 50.0).unwrap();
        let fy = notch_filter(&y, fs, 50.0).unwrap();
        let fsum = notch_filter(&sum, fs, 50.0).unwrap();
        for i in 0..fsum.len() {
            assert!((fsum[i] - fx[i] - fy[i]).abs() < 1e-9);
        }
        let hx = highpass_emg(&x, fs, 15.0).unwrap();
        let hy = highpass_emg(&y, fs, 15.0).unwrap();
        let hsum = highpass_emg(&sum, fs, 15.0).unwrap();
        for i in 0..hsum.len() {
            assert!((hsum[i] - hx[i] - hy[i]).abs() < 1e-9);
        }
    }

    /// Periodic biphasic pulse train mimicking QRS spikes.
    fn ecg_train(fs: f64, seconds: f64, period_s: f64, amp: f64) -> Vec<f64> {
        let n = (fs * seconds) as usize;
        let period = (period_s * fs) as usize;
        let mut out = vec![0.0; n];
        for (i, v) in out.iter_mut().enumerate() {
            let ph = i % period;
            if ph < 6 {
                *v = amp * [0.3, 1.0, 0.5, -0.4, -0.2, -0.05][ph];
            }
        }
        out
    }

    #[test]
    fn zero_reference_is_identity() {
        let target: Vec<f64> = (0..800).map(|i| (i as f64 * 0.1).sin()).collect();
        let zeros = vec![0.0; 800];
        let out = ecg_cancel(&target, &zeros, 200.0).unwrap();
        assert_eq!(out, target);
    }

    #[test]
    fn cancels_injected_ecg_template() {
        let fs = 200.0;
        let clean = sine(8.0, fs, 40.0, 5.0);
        let train = ecg_train(fs, 40.0, 0.8, 30.0);
        // Artifact enters the EEG with a small conduction delay.
        let delay = 5usize;
        let target: Vec<f64> = clean
            .iter()
            .enumerate()
            .map(|(i, c)| c + 0.5 * if i >= delay { train[i - delay] } else { 0.0 })
            .collect();
        let out = ecg_cancel(&target, &train, fs).unwrap();
        let tail = (20.0 * fs) as usize;
        let uncorrected: Vec<f64> =
            target[tail..].iter().zip(&clean[tail..]).map(|(t, c)| t - c).collect();
        let corrected: Vec<f64> =
            out[tail..].iter().zip(&clean[tail..]).map(|(o, c)| o - c).collect();
        let ratio = rms(&corrected) / rms(&uncorrected);
        assert!(ratio <= 0.5, "residual ratio {ratio}");
    }

    #[test]
    fn uncorrelated_target_barely_distorted() {
        let fs = 200.0;
        // Deterministic pseudo-noise, uncorrelated with the pulse train.
        let mut state = 0x12345678u64;
        let mut noise = Vec::with_capacity(4000);
        for _ in 0..4000 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            noise.push(((state >> 33) as f64 / (1u64 << 31) as f64) - 1.0);
        }
        let train = ecg_train(fs, 20.0, 0.8, 20.0);
        let out = ecg_cancel(&noise, &train, fs).unwrap();
        let r_in = rms(&noise);
        let r_out = rms(&out);
        assert!((r_out - r_in).abs() / r_in <= 0.05, "rms {r_in} -> {r_out}");
    }

    #[test]
    fn length_mismatch_rejected() {
        assert!(matches!(
            ecg_cancel(&[0.0; 10], &[0.0; 9], 200.0),
            Err(DspError::LengthMismatch { .. })
        ));
    }
}
