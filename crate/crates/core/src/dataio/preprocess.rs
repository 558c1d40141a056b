//! Raw IMU stream preprocessing: unit conversion, resampling and windowing.

use crate::encoder::ImuWindow;
use crate::error::{Error, Result};

/// Accelerometer sensitivity (LSB per g).
pub const R_ACC: f64 = 16384.0;
/// Gyroscope sensitivity (LSB per °/s).
pub const R_GYRO: f64 = 16.4;

/// Common target rate for all streams.
pub const TARGET_RATE_HZ: f64 = 200.0;
pub const WINDOW_SECONDS: f64 = 5.0;

/// Converts raw counts to physical units: accelerometer rows are divided by
/// `r_acc` (giving g), gyroscope rows by `r_gyro` (giving °/s).
///
/// `acc_channels` and `gyro_channels` must partition the row indices.
pub fn sensitivity_normalize(
    raw: &[Vec<f64>],
    r_acc: f64,
    r_gyro: f64,
    acc_channels: &[usize],
    gyro_channels: &[usize],
) -> Result<Vec<Vec<f64>>> {
    for r in [r_acc, r_gyro] {
        if !(r > 0.0) {
            return Err(Error::NonPositiveCoefficient(r));
        }
    }
    let mut divisor = vec![None; raw.len()];
    let assignments = acc_channels
        .iter()
        .map(|&c| (c, r_acc))
        .chain(gyro_channels.iter().map(|&c| (c, r_gyro)));
    for (c, r) in assignments {
        let slot = divisor
            .get_mut(c)
            .ok_or_else(|| Error::ShapeMismatch(format!("channel {c} out of range for {} rows", raw.len())))?;
        if slot.is_some() {
            return Err(Error::ChannelOverlap(c));
        }
        *slot = Some(r);
    }
    raw.iter()
        .zip(&divisor)
        .enumerate()
        .map(|(c, (row, div))| {
            let div = div.ok_or(Error::ChannelUncovered(c))?;
            Ok(row.iter().map(|v| v / div).collect())
        })
        .collect()
}

/// Linear-interpolation resampling with both endpoints preserved.
///
/// Output length is `round(len · to_hz / from_hz)`; output sample `i` is read
/// at source position `i · (len − 1) / (out_len − 1)`.
pub fn resample_linear(signal: &[f64], from_hz: f64, to_hz: f64) -> Result<Vec<f64>> {
    if signal.len() < 2 {
        return Err(Error::TooShort(signal.len()));
    }
    if !(from_hz > 0.0 && to_hz > 0.0) {
        return Err(Error::InvalidShape(format!(
            "sample rates must be positive ({from_hz} → {to_hz})"
        )));
    }
    if from_hz == to_hz {
        return Ok(signal.to_vec());
    }
    let out_len = (signal.len() as f64 * to_hz / from_hz).round() as usize;
    if out_len < 2 {
        return Err(Error::TooShort(out_len));
    }
    let last = signal.len() - 1;
    let step = last as f64 / (out_len - 1) as f64;
    let mut out: Vec<f64> = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let left = (pos.floor() as usize).min(last - 1);
            let frac = pos - left as f64;
            signal[left] + frac * (signal[left + 1] - signal[left])
        })
        .collect();
    out[out_len - 1] = signal[last];
    Ok(out)
}

/// Splits a `channels × len` stream into non-overlapping windows of
/// `round(rate_hz · window_seconds)` steps. A trailing partial window is dropped.
pub fn window_segments(stream: &[Vec<f64>], rate_hz: f64, window_seconds: f64) -> Result<Vec<ImuWindow>> {
    let len = stream.first().map_or(0, Vec::len);
    if stream.iter().any(|row| row.len() != len) {
        return Err(Error::ShapeMismatch("ragged channel rows".into()));
    }
    let steps = (rate_hz * window_seconds).round() as usize;
    if steps == 0 || stream.is_empty() {
        return Ok(Vec::new());
    }
    (0..len / steps)
        .map(|w| {
            let rows: Vec<Vec<f64>> = stream
                .iter()
                .map(|row| row[w * steps..(w + 1) * steps].to_vec())
                .collect();
            ImuWindow::from_channels(&rows, rate_hz)
        })
        .collect()
}
