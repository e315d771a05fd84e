//! Analytic signal of real channel data via the one-sided spectrum.

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::simulate::ChannelData;

/// Complex (analytic) channel data, `[n_time × n_elements]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AnalyticChannelData {
    pub samples: Array2<Complex64>,
    pub t0: f64,
    pub fs: f64,
    pub tx_angle: f64,
}

/// Analytic signal of one real trace. The real part reproduces the input.
pub fn analytic_signal(signal: &[f64], planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let n = signal.len();
    let mut buf: Vec<Complex64> = signal.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    if n == 0 {
        return buf;
    }
    planner.plan_fft_forward(n).process(&mut buf);
    // Keep DC and Nyquist, double positive frequencies, drop negative ones.
    let positive_end = n.div_ceil(2);
    for v in buf.iter_mut().take(positive_end).skip(1) {
        *v *= 2.0;
    }
    for v in buf.iter_mut().skip(n / 2 + 1) {
        *v = Complex64::new(0.0, 0.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    for v in &mut buf {
        *v *= scale;
    }
    buf
}

pub fn to_analytic(data: &ChannelData) -> Result<AnalyticChannelData> {
    if data.n_time() < 8 {
        return Err(Error::InvalidParameter(format!(
            "need at least 8 time samples, got {}",
            data.n_time()
        )));
    }
    let mut planner = FftPlanner::new();
    let mut samples = Array2::zeros(data.samples.dim());
    let mut trace = Vec::with_capacity(data.n_time());
    for (e, col) in data.samples.columns().into_iter().enumerate() {
        trace.clear();
        trace.extend(col.iter().copied());
        let a = analytic_signal(&trace, &mut planner);
        for (n, v) in a.into_iter().enumerate() {
            samples[[n, e]] = v;
        }
    }
    Ok(AnalyticChannelData {
        samples,
        t0: data.t0,
        fs: data.fs,
        tx_angle: data.tx_angle,
    })
}
