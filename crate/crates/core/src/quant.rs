//! Low-resolution ADC model.
//!
//! Each real dimension passes through the minimum mean-square-error
//! (Lloyd-Max) quantizer for a unit-variance Gaussian, scaled by the
//! channel's RMS. For bound computations the quantizer is linearized with the
//! additive quantization noise model: output = `alpha * input + noise`, with
//! `alpha = 1 - rho_b` and `rho_b` the quantizer's normalized distortion.

use std::f64::consts::{FRAC_1_SQRT_2, PI};
use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;

use crate::array::{SnapshotBatch, Stage};
use crate::error::{contract, domain, Error, Result};

pub const MAX_BITS: u32 = 16;

/// Bits per real dimension.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "BitsRepr", into = "String")]
pub enum Bits {
    Finite(u32),
    Infinite,
}

impl Bits {
    pub fn finite(b: u32) -> Result<Self> {
        if (1..=MAX_BITS).contains(&b) {
            Ok(Bits::Finite(b))
        } else {
            domain(format!("quantizer bits {b} outside 1..={MAX_BITS}"))
        }
    }
}

impl fmt::Display for Bits {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bits::Finite(b) => write!(f, "{b}"),
            Bits::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for Bits {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "infinite" => Ok(Bits::Infinite),
            t => t
                .parse::<u32>()
                .map_err(|_| Error::Domain(format!("cannot parse quantizer bits from {s:?}")))
                .and_then(Bits::finite),
        }
    }
}

/// Accepted spellings in configuration files: `3` or `"3"` or `"inf"`.
#[derive(Deserialize)]
#[serde(untagged)]
enum BitsRepr {
    Count(u32),
    Text(String),
}

impl TryFrom<BitsRepr> for Bits {
    type Error = Error;
    fn try_from(r: BitsRepr) -> Result<Self> {
        match r {
            BitsRepr::Count(b) => Bits::finite(b),
            BitsRepr::Text(s) => s.parse(),
        }
    }
}

impl From<Bits> for String {
    fn from(b: Bits) -> String {
        b.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantizerConfig {
    pub bits: Bits,
    /// Normalized mean-square distortion of the quantizer.
    pub rho: f64,
    /// AQNM gain, `1 - rho`.
    pub alpha: f64,
}

impl QuantizerConfig {
    pub fn new(bits: Bits) -> Result<Self> {
        let rho = distortion_factor(bits)?;
        Ok(Self { bits, rho, alpha: 1.0 - rho })
    }
}

/// Lloyd-Max codebook for a unit-variance Gaussian.
#[derive(Clone, Debug)]
pub struct Codebook {
    /// Reconstruction levels, ascending, `2^b` of them.
    pub levels: Vec<f64>,
    /// Decision thresholds, ascending, `2^b - 1` of them.
    pub thresholds: Vec<f64>,
    pub distortion: f64,
}

impl Codebook {
    pub fn quantize(&self, x: f64) -> f64 {
        self.levels[self.thresholds.partition_point(|&t| t < x)]
    }
}

/// Cached codebook for `b` bits.
pub fn codebook(b: u32) -> Result<&'static Codebook> {
    static CACHE: [OnceLock<Codebook>; MAX_BITS as usize] = [const { OnceLock::new() }; MAX_BITS as usize];
    Bits::finite(b)?;
    Ok(CACHE[(b - 1) as usize].get_or_init(|| lloyd_max(b)))
}

/// Minimum mean-square distortion of a `b`-bit quantizer for a unit-variance
/// Gaussian; zero for an ideal ADC.
pub fn distortion_factor(bits: Bits) -> Result<f64> {
    match bits {
        Bits::Infinite => Ok(0.0),
        Bits::Finite(b) => Ok(codebook(b)?.distortion),
    }
}

fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Upper tail probability; accurate far into the tail.
fn tail(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Probability mass of `[a, b]` for `0 <= a < b <= inf`.
fn mass(a: f64, b: f64) -> f64 {
    if b.is_infinite() {
        tail(a)
    } else {
        tail(a) - tail(b)
    }
}

fn centroid(a: f64, b: f64) -> f64 {
    let pb = if b.is_infinite() { 0.0 } else { pdf(b) };
    (pdf(a) - pb) / mass(a, b)
}

/// Solve the Lloyd-Max conditions on the positive half-line.
///
/// Unknowns are the positive levels `c_1 < ... < c_n` (`n = 2^(b-1)`); the
/// thresholds are their midpoints, with `0` and `inf` at the ends. A few
/// centroid/midpoint sweeps from the companding initial guess are followed by
/// Newton steps on `c_i - centroid(t_(i-1), t_i) = 0`, whose Jacobian is
/// tridiagonal.
fn lloyd_max(b: u32) -> Codebook {
    let n = 1usize << (b - 1);
    let levels_total = 2 * n;
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    let mut c: Vec<f64> = (n..levels_total)
        .map(|j| 3f64.sqrt() * normal.inverse_cdf((j as f64 + 0.5) / levels_total as f64))
        .collect();

    let thresholds_of = |c: &[f64]| -> Vec<f64> {
        let mut t = Vec::with_capacity(n + 1);
        t.push(0.0);
        t.extend(c.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        t.push(f64::INFINITY);
        t
    };
    let residual = |c: &[f64]| -> Vec<f64> {
        let t = thresholds_of(c);
        (0..n).map(|i| c[i] - centroid(t[i], t[i + 1])).collect()
    };
    let max_abs = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    for _ in 0..10 {
        let t = thresholds_of(&c);
        for i in 0..n {
            c[i] = centroid(t[i], t[i + 1]);
        }
    }

    let mut f = residual(&c);
    for _ in 0..200 {
        if max_abs(&f) < 1e-14 {
            break;
        }
        let t = thresholds_of(&c);
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        for i in 0..n {
            let (a, bb) = (t[i], t[i + 1]);
            let m = centroid(a, bb);
            let d = mass(a, bb);
            if i > 0 {
                let dm_da = pdf(a) * (m - a) / d;
                diag[i] -= 0.5 * dm_da;
                lower[i] = -0.5 * dm_da;
            }
            if i + 1 < n {
                let dm_db = pdf(bb) * (bb - m) / d;
                diag[i] -= 0.5 * dm_db;
                upper[i] = -0.5 * dm_db;
            }
        }
        let step = solve_tridiagonal(&lower, &diag, &upper, &f);
        let before = max_abs(&f);
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = c.iter().zip(&step).map(|(ci, si)| ci - scale * si).collect();
            let ordered = trial[0] > 0.0 && trial.windows(2).all(|w| w[0] < w[1]);
            if ordered {
                let ft = residual(&trial);
                if max_abs(&ft) < before || scale < 1e-6 {
                    c = trial;
                    f = ft;
                    break;
                }
            }
            scale *= 0.5;
            if scale < 1e-6 {
                // Newton stalled; fall back to one plain sweep.
                let t = thresholds_of(&c);
                for i in 0..n {
                    c[i] = centroid(t[i], t[i + 1]);
                }
                f = residual(&c);
                break;
            }
        }
    }

    let t = thresholds_of(&c);
    let half: f64 = (0..n).map(|i| cell_distortion(t[i], t[i + 1], c[i])).sum();

    let mut levels: Vec<f64> = c.iter().rev().map(|x| -x).collect();
    levels.extend_from_slice(&c);
    let mut thresholds: Vec<f64> = t[1..n].iter().rev().map(|x| -x).collect();
    thresholds.push(0.0);
    thresholds.extend_from_slice(&t[1..n]);
    Codebook { levels, thresholds, distortion: 2.0 * half }
}

/// `E[(X - c)^2 ; a < X < b]` for a standard normal `X`.
fn cell_distortion(a: f64, b: f64, c: f64) -> f64 {
    if b.is_infinite() {
        let q = tail(a);
        // int_a^inf x^2 phi = Q(a) + a phi(a)
        q + a * pdf(a) - 2.0 * c * pdf(a) + c * c * q
    } else {
        let (nodes, weights) = gauss_legendre_16();
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        nodes
            .iter()
            .zip(weights)
            .map(|(x, w)| {
                let y = mid + half * x;
                w * (y - c) * (y - c) * pdf(y)
            })
            .sum::<f64>()
            * half
    }
}

fn gauss_legendre_16() -> &'static (Vec<f64>, Vec<f64>) {
    static RULE: OnceLock<(Vec<f64>, Vec<f64>)> = OnceLock::new();
    RULE.get_or_init(|| gauss_legendre(16))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on
/// `P_n`.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = upper[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * c[i - 1];
        c[i] = upper[i] / m;
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / m;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

/// Per-channel record of how a batch was quantized.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationInfo {
    pub bits: u32,
    /// Per-real-dimension RMS used to scale the codebook, per channel.
    pub scales: Vec<f64>,
    /// Channels that were identically zero; they are emitted as zeros.
    pub zero_channels: Vec<usize>,
}

impl QuantizationInfo {
    pub(crate) fn restrict(&self, range: Range<usize>) -> Self {
        Self {
            bits: self.bits,
            scales: self.scales[range.clone()].to_vec(),
            zero_channels: self
                .zero_channels
                .iter()
                .filter(|c| range.contains(c))
                .map(|c| c - range.start)
                .collect(),
        }
    }
}

/// Quantize real and imaginary parts independently with the Lloyd-Max
/// codebook scaled by each channel's RMS.
///
/// Re-quantizing an already quantized batch with the same bit count reuses
/// the recorded scales and returns the batch unchanged.
pub fn quantize(batch: &SnapshotBatch, q: &QuantizerConfig) -> Result<SnapshotBatch> {
    let b = match q.bits {
        Bits::Infinite => return Ok(batch.clone()),
        Bits::Finite(b) => b,
    };
    let book = codebook(b)?;
    let x = batch.samples();
    let (scales, zero_channels) = match (batch.stage(), batch.quantization()) {
        (Stage::Quantized, Some(info)) if info.bits == b => {
            (info.scales.clone(), info.zero_channels.clone())
        }
        (Stage::Quantized, _) => {
            return contract("batch was already quantized with a different bit count")
        }
        _ => {
            let mut scales = Vec::with_capacity(x.nrows());
            let mut zeros = Vec::new();
            for c in 0..x.nrows() {
                let s = (batch.channel_power(c) / 2.0).sqrt();
                if s == 0.0 {
                    zeros.push(c);
                }
                scales.push(s);
            }
            (scales, zeros)
        }
    };

    let out = DMatrix::from_fn(x.nrows(), x.ncols(), |r, t| {
        let s = scales[r];
        if s == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let z = x[(r, t)];
        Complex64::new(s * book.quantize(z.re / s), s * book.quantize(z.im / s))
    });
    if !zero_channels.is_empty() {
        log::warn!("quantizer: {} all-zero channel(s) emitted as zeros", zero_channels.len());
    }
    let info = QuantizationInfo { bits: b, scales, zero_channels };
    Ok(SnapshotBatch::new(out, batch.stage(), batch.channel_map().to_vec())?.with_quantization(info))
}

/// Post-quantization SNR of one channel under AQNM: the signal is scaled by
/// `alpha^2` and the quantization noise has variance
/// `alpha (1 - alpha) (signal + noise)`.
pub fn effective_snr(snr_linear: f64, alpha: f64) -> f64 {
    alpha * snr_linear / (alpha + (1.0 - alpha) * (1.0 + snr_linear))
}

/// `snr / effective_snr`: the factor by which quantization inflates the
/// single-source CRLB.
pub fn loss_factor(bits: Bits, snr_linear: f64) -> Result<f64> {
    let alpha = 1.0 - distortion_factor(bits)?;
    Ok((alpha + (1.0 - alpha) * (1.0 + snr_linear)) / alpha)
}

pub fn performance_loss_db(bits: Bits, snr_db: f64) -> Result<f64> {
    Ok(10.0 * loss_factor(bits, 10f64.powf(snr_db / 10.0))?.log10())
}
