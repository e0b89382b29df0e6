//! Uniform linear array geometry, analog subarray combining and snapshot
//! synthesis.
//!
//! Directions are carried as direction-sines `u = sin(theta)` everywhere
//! inside the crate; degrees appear only in configuration and reports.
//!
//! Physical layout of a receiver: antennas `0..K*M` form `K` contiguous analog
//! subarrays of `M` elements each, and antennas `K*M..N` are wired fully
//! digitally. All antennas share one ULA grid with spacing `d` wavelengths.

use std::f64::consts::PI;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, contract, domain, Result};
use crate::quant::QuantizationInfo;

pub const DEFAULT_SPACING: f64 = 0.5;

pub fn deg_to_u(deg: f64) -> f64 {
    deg.to_radians().sin()
}

pub fn u_to_deg(u: f64) -> f64 {
    u.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Receive array geometry: `N = K*M + N_F`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayConfig {
    pub n_total: usize,
    /// Antennas per analog subarray (`M`).
    pub m_sub: usize,
    /// Number of analog subarrays (`K`).
    pub k_sub: usize,
    /// Fully-digital antennas (`N_F`).
    pub n_fd: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
}

impl ArrayConfig {
    pub fn fully_digital(n: usize) -> Self {
        Self { n_total: n, m_sub: 1, k_sub: 0, n_fd: n, spacing: DEFAULT_SPACING }
    }

    pub fn hybrid(k_sub: usize, m_sub: usize) -> Self {
        Self { n_total: k_sub * m_sub, m_sub, k_sub, n_fd: 0, spacing: DEFAULT_SPACING }
    }

    /// Two-layer receiver with roughly `eta * n_total` fully-digital antennas.
    ///
    /// `N_F` starts at `floor(eta * N)` and is rounded down until the hybrid
    /// part `N - N_F` is a whole number of subarrays. The flag reports whether
    /// rounding changed `N_F`.
    pub fn two_layer(n_total: usize, m_sub: usize, eta: f64) -> Result<(Self, bool)> {
        if !(0.0..=1.0).contains(&eta) {
            return config(format!("fully-digital proportion {eta} outside [0, 1]"));
        }
        if m_sub == 0 {
            return config("subarray size must be at least 1");
        }
        let raw = ((eta * n_total as f64) + 1e-9).floor() as usize;
        let mut n_fd = raw.min(n_total);
        while !(n_total - n_fd).is_multiple_of(m_sub) {
            n_fd -= 1;
        }
        let cfg = Self {
            n_total,
            m_sub,
            k_sub: (n_total - n_fd) / m_sub,
            n_fd,
            spacing: DEFAULT_SPACING,
        };
        cfg.validate()?;
        Ok((cfg, n_fd != raw))
    }

    pub fn with_spacing(mut self, spacing: f64) -> Self {
        self.spacing = spacing;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_total != self.k_sub * self.m_sub + self.n_fd {
            return config(format!(
                "N = {} but K*M + N_F = {}*{} + {}",
                self.n_total, self.k_sub, self.m_sub, self.n_fd
            ));
        }
        if self.n_total == 0 {
            return config("array has no antennas");
        }
        if self.k_sub > 0 && self.m_sub == 0 {
            return config("subarrays need at least one antenna");
        }
        if !(self.spacing > 0.0 && self.spacing.is_finite()) {
            return config(format!("element spacing {} must be positive", self.spacing));
        }
        Ok(())
    }

    /// `eta = N_F / N`.
    pub fn fd_proportion(&self) -> f64 {
        self.n_fd as f64 / self.n_total as f64
    }

    /// Antennas feeding analog subarrays (`K*M`).
    pub fn had_elements(&self) -> usize {
        self.k_sub * self.m_sub
    }

    /// Channels after analog combining: `K + N_F`.
    pub fn digital_channels(&self) -> usize {
        self.k_sub + self.n_fd
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignalModel {
    /// Unit modulus with an independent uniform phase per snapshot.
    ConstantModulus,
    /// Circular complex Gaussian.
    Gaussian,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Emitter {
    pub direction_deg: f64,
    /// Linear signal power.
    pub power: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmitterScenario {
    pub emitters: Vec<Emitter>,
    pub noise_power: f64,
    pub n_snapshots: usize,
    pub signal_model: SignalModel,
}

impl EmitterScenario {
    /// One emitter at `snr_db` over unit noise power.
    pub fn single(direction_deg: f64, snr_db: f64, n_snapshots: usize) -> Self {
        Self {
            emitters: vec![Emitter { direction_deg, power: db_to_linear(snr_db) }],
            noise_power: 1.0,
            n_snapshots,
            signal_model: SignalModel::ConstantModulus,
        }
    }

    pub fn noise_only(noise_power: f64, n_snapshots: usize) -> Self {
        Self {
            emitters: Vec::new(),
            noise_power,
            n_snapshots,
            signal_model: SignalModel::ConstantModulus,
        }
    }

    pub fn with_signal_model(mut self, model: SignalModel) -> Self {
        self.signal_model = model;
        self
    }

    /// Total signal power over noise power, in dB.
    pub fn snr_db(&self) -> f64 {
        let total: f64 = self.emitters.iter().map(|e| e.power).sum();
        10.0 * (total / self.noise_power).log10()
    }

    pub fn validate(&self) -> Result<()> {
        for e in &self.emitters {
            if !(e.direction_deg > -90.0 && e.direction_deg < 90.0) {
                return config(format!("emitter direction {}° outside (-90°, 90°)", e.direction_deg));
            }
            if !(e.power > 0.0 && e.power.is_finite()) {
                return config(format!("emitter power {} must be positive", e.power));
            }
        }
        if !(self.noise_power > 0.0 && self.noise_power.is_finite()) {
            return config(format!("noise power {} must be positive", self.noise_power));
        }
        if self.n_snapshots == 0 {
            return config("scenario needs at least one snapshot");
        }
        Ok(())
    }
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Element-level steering vector of a `p`-element ULA: `exp(i 2 pi d k u)`.
pub fn steering_vector(p: usize, spacing: f64, u: f64) -> Result<DVector<Complex64>> {
    if !(u.abs() <= 1.0) {
        return domain(format!("direction-sine {u} outside [-1, 1]"));
    }
    if p == 0 {
        return domain("steering vector needs at least one element");
    }
    Ok(ula_response(p, spacing, u))
}

/// Unchecked ULA response; `u` may lie anywhere (virtual arrays, derivatives).
pub(crate) fn ula_response(p: usize, spacing: f64, u: f64) -> DVector<Complex64> {
    DVector::from_fn(p, |k, _| Complex64::from_polar(1.0, 2.0 * PI * spacing * k as f64 * u))
}

/// Complex gain of an `M`-element subarray steered at `u_steer` towards a
/// plane wave from `u`, with `1/sqrt(M)` normalized weights.
pub fn subarray_gain(m_sub: usize, spacing: f64, u: f64, u_steer: f64) -> Result<Complex64> {
    if !(u.abs() <= 1.0 && u_steer.abs() <= 1.0) {
        return domain(format!("direction-sines ({u}, {u_steer}) outside [-1, 1]"));
    }
    if m_sub == 0 {
        return domain("subarray size must be at least 1");
    }
    Ok(gain_unchecked(m_sub, spacing, u - u_steer))
}

pub(crate) fn gain_unchecked(m_sub: usize, spacing: f64, du: f64) -> Complex64 {
    let sum: Complex64 = (0..m_sub)
        .map(|m| Complex64::from_polar(1.0, 2.0 * PI * spacing * m as f64 * du))
        .sum();
    sum / (m_sub as f64).sqrt()
}

/// Phase-shifter settings of one subarray: `M` taps of modulus `1/sqrt(M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalogWeights {
    taps: Vec<Complex64>,
}

impl AnalogWeights {
    pub fn from_phases(phases: &[f64]) -> Self {
        let scale = 1.0 / (phases.len() as f64).sqrt();
        Self { taps: phases.iter().map(|&p| Complex64::from_polar(scale, p)).collect() }
    }

    /// Weights that phase-align a plane wave from `u_steer`.
    pub fn steered(m_sub: usize, spacing: f64, u_steer: f64) -> Self {
        let phases: Vec<f64> =
            (0..m_sub).map(|m| 2.0 * PI * spacing * m as f64 * u_steer).collect();
        Self::from_phases(&phases)
    }

    pub fn broadside(m_sub: usize) -> Self {
        Self::from_phases(&vec![0.0; m_sub])
    }

    pub fn taps(&self) -> &[Complex64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Element,
    AnalogCombined,
    Quantized,
}

/// Physical origin of one digital channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChannelSource {
    Element(usize),
    Subarray { index: usize, first_element: usize, len: usize },
}

/// Complex baseband samples, channels x snapshots.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotBatch {
    samples: DMatrix<Complex64>,
    stage: Stage,
    channel_map: Vec<ChannelSource>,
    quantization: Option<QuantizationInfo>,
}

impl SnapshotBatch {
    /// Element-stage batch over antennas `0..P`.
    pub fn from_elements(samples: DMatrix<Complex64>) -> Result<Self> {
        let map = (0..samples.nrows()).map(ChannelSource::Element).collect();
        Self::new(samples, Stage::Element, map)
    }

    pub fn new(
        samples: DMatrix<Complex64>,
        stage: Stage,
        channel_map: Vec<ChannelSource>,
    ) -> Result<Self> {
        if channel_map.len() != samples.nrows() {
            return contract(format!(
                "channel map has {} entries for {} channels",
                channel_map.len(),
                samples.nrows()
            ));
        }
        if samples.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return contract("snapshot batch contains non-finite samples");
        }
        Ok(Self { samples, stage, channel_map, quantization: None })
    }

    pub(crate) fn with_quantization(mut self, info: QuantizationInfo) -> Self {
        self.stage = Stage::Quantized;
        self.quantization = Some(info);
        self
    }

    pub fn samples(&self) -> &DMatrix<Complex64> {
        &self.samples
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    pub fn channel_map(&self) -> &[ChannelSource] {
        &self.channel_map
    }

    pub fn quantization(&self) -> Option<&QuantizationInfo> {
        self.quantization.as_ref()
    }

    pub fn n_channels(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_snapshots(&self) -> usize {
        self.samples.ncols()
    }

    /// Sub-batch over a contiguous range of snapshots.
    pub fn snapshots(&self, range: Range<usize>) -> SnapshotBatch {
        SnapshotBatch {
            samples: self.samples.columns(range.start, range.len()).into_owned(),
            stage: self.stage,
            channel_map: self.channel_map.clone(),
            quantization: self.quantization.clone(),
        }
    }

    /// Sub-batch over a contiguous range of channels.
    pub fn channels(&self, range: Range<usize>) -> SnapshotBatch {
        SnapshotBatch {
            samples: self.samples.rows(range.start, range.len()).into_owned(),
            stage: self.stage,
            channel_map: self.channel_map[range.clone()].to_vec(),
            quantization: self.quantization.as_ref().map(|q| q.restrict(range)),
        }
    }

    /// Mean `|x|^2` of one channel over all snapshots.
    pub fn channel_power(&self, channel: usize) -> f64 {
        let row = self.samples.row(channel);
        row.iter().map(|z| z.norm_sqr()).sum::<f64>() / row.len() as f64
    }

    /// Mean `|x|^2` over a set of channels and all snapshots.
    pub fn mean_power(&self, channels: impl IntoIterator<Item = usize>) -> f64 {
        let (sum, n) = channels
            .into_iter()
            .fold((0.0, 0usize), |(s, n), c| (s + self.channel_power(c), n + 1));
        sum / n as f64
    }
}

/// Draw `scen.n_snapshots` element-level snapshots for `cfg`.
///
/// Snapshots are drawn column by column (emitter waveforms, then noise), so
/// the first `t` columns are the same for any snapshot count drawn from the
/// same stream.
pub fn synthesize_snapshots<R: Rng + ?Sized>(
    cfg: &ArrayConfig,
    scen: &EmitterScenario,
    rng: &mut R,
) -> Result<SnapshotBatch> {
    cfg.validate()?;
    scen.validate()?;
    let n = cfg.n_total;
    let steering: Vec<DVector<Complex64>> = scen
        .emitters
        .iter()
        .map(|e| ula_response(n, cfg.spacing, deg_to_u(e.direction_deg)))
        .collect();
    let noise_sd = (scen.noise_power / 2.0).sqrt();
    let mut samples = DMatrix::<Complex64>::zeros(n, scen.n_snapshots);
    let mut waveform = vec![Complex64::new(0.0, 0.0); scen.emitters.len()];
    for t in 0..scen.n_snapshots {
        for (s, e) in waveform.iter_mut().zip(&scen.emitters) {
            *s = draw_waveform(scen.signal_model, e.power, rng);
        }
        let mut col = samples.column_mut(t);
        for p in 0..n {
            let mut x = Complex64::new(
                noise_sd * rng.sample::<f64, _>(StandardNormal),
                noise_sd * rng.sample::<f64, _>(StandardNormal),
            );
            for (a, s) in steering.iter().zip(&waveform) {
                x += a[p] * s;
            }
            col[p] = x;
        }
    }
    SnapshotBatch::from_elements(samples)
}

fn draw_waveform<R: Rng + ?Sized>(model: SignalModel, power: f64, rng: &mut R) -> Complex64 {
    match model {
        SignalModel::ConstantModulus => {
            Complex64::from_polar(power.sqrt(), 2.0 * PI * rng.random::<f64>())
        }
        SignalModel::Gaussian => {
            let sd = (power / 2.0).sqrt();
            Complex64::new(
                sd * rng.sample::<f64, _>(StandardNormal),
                sd * rng.sample::<f64, _>(StandardNormal),
            )
        }
    }
}

/// Apply analog phase shifters: subarray `k` outputs `w_k^H x_k`, and the
/// fully-digital antennas pass through after the `K` subarray channels.
pub fn analog_combine(
    batch: &SnapshotBatch,
    cfg: &ArrayConfig,
    weights: &[AnalogWeights],
) -> Result<SnapshotBatch> {
    cfg.validate()?;
    if batch.stage() != Stage::Element {
        return contract(format!("analog combining needs element samples, got {:?}", batch.stage()));
    }
    if batch.n_channels() != cfg.n_total {
        return contract(format!(
            "batch has {} channels for a {}-antenna array",
            batch.n_channels(),
            cfg.n_total
        ));
    }
    if weights.len() != cfg.k_sub {
        return contract(format!("{} weight sets for {} subarrays", weights.len(), cfg.k_sub));
    }
    if let Some(w) = weights.iter().find(|w| w.len() != cfg.m_sub) {
        return contract(format!("weight set has {} taps, subarrays have {}", w.len(), cfg.m_sub));
    }

    let m = cfg.m_sub;
    let had = cfg.had_elements();
    let x = batch.samples();
    let out_rows = cfg.digital_channels();
    let mut out = DMatrix::<Complex64>::zeros(out_rows, batch.n_snapshots());
    for t in 0..batch.n_snapshots() {
        for (k, w) in weights.iter().enumerate() {
            let mut acc = Complex64::new(0.0, 0.0);
            for (j, tap) in w.taps().iter().enumerate() {
                acc += tap.conj() * x[(k * m + j, t)];
            }
            out[(k, t)] = acc;
        }
        for f in 0..cfg.n_fd {
            out[(cfg.k_sub + f, t)] = x[(had + f, t)];
        }
    }
    let mut map: Vec<ChannelSource> = (0..cfg.k_sub)
        .map(|k| ChannelSource::Subarray { index: k, first_element: k * m, len: m })
        .collect();
    map.extend((had..cfg.n_total).map(ChannelSource::Element));
    SnapshotBatch::new(out, Stage::AnalogCombined, map)
}
