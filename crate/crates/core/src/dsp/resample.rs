//! Polyphase rational resampling with a windowed-sinc anti-alias low-pass.

use super::{DspError, TARGET_RATE_HZ};

/// Resample to the model's 100 Hz working rate.
pub fn resample(signal: &[f64], fs_in: f64) -> Result<Vec<f64>, DspError> {
    resample_to(signal, fs_in, TARGET_RATE_HZ)
}

/// Rational resampling `fs_in -> fs_out`. The anti-alias low-pass sits at
/// 0.9 x min(fs_out/2, fs_in/2); output length is round(len x fs_out/fs_in).
/// Edges are handled by sample-hold padding so DC is preserved everywhere.
pub fn resample_to(signal: &[f64], fs_in: f64, fs_out: f64) -> Result<Vec<f64>, DspError> {
    if !(fs_in > 0.0) || !fs_in.is_finite() {
        return Err(DspError::InvalidArgument(format!("fs_in must be > 0, got {fs_in}")));
    }
    if !(fs_out > 0.0) || !fs_out.is_finite() {
        return Err(DspError::InvalidArgument(format!("fs_out must be > 0, got {fs_out}")));
    }
    let (up, down) = ratio(fs_in, fs_out)?;
    if up == down {
        return Ok(signal.to_vec());
    }
    if signal.is_empty() {
        return Ok(Vec::new());
    }

    let filter = PolyphaseFilter::design(fs_in, fs_out, up);
    let n_out = out_len(signal.len(), up, down);
    let len = signal.len() as i64;
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out {
        // Position on the up-sampled grid, shifted by the group delay.
        let pos = n as i64 * down as i64 + filter.delay as i64;
        let phase = (pos % up as i64) as usize;
        let base = pos / up as i64;
        let taps = &filter.phases[phase];
        let cnt = taps.len() as i64;
        let lo = base - cnt + 1;
        let mut acc = 0.0;
        if lo >= 0 && base < len {
            // Interior: contiguous forward dot product.
            let x = &signal[lo as usize..=base as usize];
            for (t, v) in taps.iter().zip(x) {
                acc += t * v;
            }
        } else {
            // Edge: clamp indices (sample-hold padding).
            for (m, t) in taps.iter().enumerate() {
                let i = (lo + m as i64).clamp(0, len - 1) as usize;
                acc += t * signal[i];
            }
        }
        out.push(acc);
    }
    Ok(out)
}

fn out_len(len: usize, up: usize, down: usize) -> usize {
    // round(len * up / down), half away from zero on the positive axis.
    ((len as u128 * up as u128 * 2 + down as u128) / (2 * down as u128)) as usize
}

fn ratio(fs_in: f64, fs_out: f64) -> Result<(usize, usize), DspError> {
    let num = (fs_out * 1000.0).round() as u64;
    let den = (fs_in * 1000.0).round() as u64;
    if num == 0 || den == 0 {
        return Err(DspError::InvalidArgument(format!(
            "cannot form rational rate ratio {fs_out}/{fs_in}"
        )));
    }
    let g = gcd(num, den);
    Ok(((num / g) as usize, (den / g) as usize))
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

struct PolyphaseFilter {
    /// Per-phase taps, stored reversed so evaluation is a forward dot
    /// product over a contiguous input slice. Each branch is normalized to
    /// unit sum, which makes DC exact for every output phase.
    phases: Vec<Vec<f64>>,
    delay: usize,
}

impl PolyphaseFilter {
    fn design(fs_in: f64, fs_out: f64, up: usize) -> PolyphaseFilter {
        let cutoff_hz = 0.9 * (fs_out / 2.0).min(fs_in / 2.0);
        let inter_rate = fs_in * up as f64;
        let fc = cutoff_hz / inter_rate;
        // Blackman window: ~5.5/N normalized transition width; target a 2 Hz
        // transition band but never more than 40% of the cutoff.
        let transition_hz = 2.0f64.min(0.4 * cutoff_hz);
        let mut taps = (5.5 * inter_rate / transition_hz).ceil() as usize;
        if taps % 2 == 0 {
            taps += 1;
        }
        let delay = (taps - 1) / 2;
        let mut h = vec![0.0; taps];
        for (n, v) in h.iter_mut().enumerate() {
            let m = n as f64 - delay as f64;
            let sinc = if m == 0.0 {
                2.0 * fc
            } else {
                (2.0 * std::f64::consts::PI * fc * m).sin() / (std::f64::consts::PI * m)
            };
            let w = blackman(n, taps);
            *v = sinc * w;
        }
        let mut phases = Vec::with_capacity(up);
        for p in 0..up {
            let branch: Vec<f64> = h.iter().skip(p).step_by(up).copied().collect();
            let sum: f64 = branch.iter().sum();
            let mut reversed: Vec<f64> = branch.iter().rev().map(|v| v / sum).collect();
            if reversed.is_empty() {
                reversed.push(1.0);
            }
            phases.push(reversed);
        }
        PolyphaseFilter { phases, delay }
    }
}

fn blackman(n: usize, taps: usize) -> f64 {
    let x = n as f64 / (taps - 1) as f64;
    0.42 - 0.5 * (2.0 * std::f64::consts::PI * x).cos() + 0.08 * (4.0 * std::f64::consts::PI * x).cos()
}
