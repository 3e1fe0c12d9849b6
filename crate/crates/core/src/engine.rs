//! Split-operator evolution of the modulated kicked rotor on the momentum
//! lattice, and disorder/quasi-momentum ensembles built on top of it.
//!
//! Site index `j ∈ [0, M)` stores momentum site `m = j` for `j < M/2` and
//! `m = j - M` otherwise, the natural DFT ordering. A kick is applied on the
//! `M`-point position grid `x_k = 2πk/M`; the quasi-momentum β only enters the
//! diagonal free propagator, so the transforms never depend on it.

use std::f64::consts::TAU;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modulation::{build_random_phase_sequence, ModulationError, ModulationSequence};
use crate::rng::{self, Substream};

/// Largest tolerated `|1 - Σ|ψ|²|` along any trajectory.
pub const NORM_TOLERANCE: f64 = 1e-10;

/// Sites with probability above this count as occupied for the aliasing guard.
pub const OCCUPIED_THRESHOLD: f64 = 1e-12;

pub const MIN_LATTICE_SIZE: usize = 64;

/// Lattice size for contrast runs (horizons up to ~100 kicks).
pub const CONTRAST_LATTICE_SIZE: usize = 4096;

/// Lattice size for scaling runs (horizons up to ~1000 kicks).
pub const SCALING_LATTICE_SIZE: usize = 16384;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("lattice size {0} must be a power of two and at least {MIN_LATTICE_SIZE}")]
    BadLatticeSize(usize),
    #[error("effective Planck constant must be finite and positive, got {0}")]
    BadKbar(f64),
    #[error("quasi-momentum {0} lies outside the Brillouin zone (-1/2, 1/2]")]
    BetaOutOfZone(f64),
    #[error("state has {state} sites but the lattice has {lattice}")]
    SizeMismatch { state: usize, lattice: usize },
    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),
    #[error("trajectory (disorder {disorder}, beta {beta_index}) lost unitarity at kick {kick}: drift {drift:e}")]
    UnitarityLoss { disorder: usize, beta_index: usize, kick: usize, drift: f64 },
    #[error(transparent)]
    Modulation(#[from] ModulationError),
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    size: usize,
    kbar: f64,
}

impl LatticeSpec {
    pub fn new(size: usize, kbar: f64) -> Result<Self, EngineError> {
        if size < MIN_LATTICE_SIZE || !size.is_power_of_two() {
            return Err(EngineError::BadLatticeSize(size));
        }
        if !(kbar.is_finite() && kbar > 0.0) {
            return Err(EngineError::BadKbar(kbar));
        }
        Ok(Self { size, kbar })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn kbar(&self) -> f64 {
        self.kbar
    }

    /// Integer momentum site stored at index `j`.
    pub fn site(&self, j: usize) -> i64 {
        if j < self.size / 2 {
            j as i64
        } else {
            j as i64 - self.size as i64
        }
    }

    /// Storage index of momentum site `m`, if it lies on the lattice.
    pub fn index_of(&self, m: i64) -> Option<usize> {
        let half = (self.size / 2) as i64;
        if m >= -half && m < half {
            Some(m.rem_euclid(self.size as i64) as usize)
        } else {
            None
        }
    }
}

fn check_beta(beta: f64) -> Result<(), EngineError> {
    if beta.is_finite() && beta > -0.5 && beta <= 0.5 {
        Ok(())
    } else {
        Err(EngineError::BetaOutOfZone(beta))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    amplitudes: Vec<Complex64>,
    beta: f64,
    time: usize,
}

impl QuantumState {
    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Number of completed kick periods.
    pub fn time(&self) -> usize {
        self.time
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|z| z.norm_sqr()).sum()
    }

    /// `|ψ_j|²` in storage order.
    pub fn densities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn amplitude_at(&self, lattice: &LatticeSpec, m: i64) -> Complex64 {
        lattice.index_of(m).map_or(Complex64::new(0.0, 0.0), |j| self.amplitudes[j])
    }

    /// Exact second moment `Σ |ψ_m|² ((m + β) k̄)²`.
    pub fn second_moment(&self, lattice: &LatticeSpec) -> f64 {
        let kbar = lattice.kbar();
        self.amplitudes
            .iter()
            .enumerate()
            .map(|(j, z)| {
                let p = (lattice.site(j) as f64 + self.beta) * kbar;
                z.norm_sqr() * p * p
            })
            .sum()
    }

    /// Fraction of the lattice spanned by sites above [`OCCUPIED_THRESHOLD`].
    pub fn occupied_fraction(&self, lattice: &LatticeSpec) -> f64 {
        let mut lo = i64::MAX;
        let mut hi = i64::MIN;
        for (j, z) in self.amplitudes.iter().enumerate() {
            if z.norm_sqr() > OCCUPIED_THRESHOLD {
                let m = lattice.site(j);
                lo = lo.min(m);
                hi = hi.max(m);
            }
        }
        if lo > hi {
            0.0
        } else {
            (hi - lo + 1) as f64 / lattice.size() as f64
        }
    }
}

/// Momentum eigenstate `ψ_m = δ_{m,0}` with quasi-momentum `beta`.
pub fn init_state(lattice: &LatticeSpec, beta: f64) -> Result<QuantumState, EngineError> {
    check_beta(beta)?;
    let mut amplitudes = vec![Complex64::new(0.0, 0.0); lattice.size()];
    amplitudes[0] = Complex64::new(1.0, 0.0);
    Ok(QuantumState { amplitudes, beta, time: 0 })
}

/// Cached transforms and operator tables for one lattice.
pub struct Propagator {
    lattice: LatticeSpec,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scratch: Vec<Complex64>,
    cos_x: Vec<f64>,
    sin_x: Vec<f64>,
    free: Vec<Complex64>,
    free_beta: f64,
    site_phases: Option<Vec<Complex64>>,
}

impl Propagator {
    pub fn new(lattice: LatticeSpec) -> Self {
        let m = lattice.size();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(m);
        let inverse = planner.plan_fft_inverse(m);
        let scratch_len = forward.get_inplace_scratch_len().max(inverse.get_inplace_scratch_len());
        let (sin_x, cos_x) = (0..m).map(|k| (TAU * k as f64 / m as f64).sin_cos()).unzip();
        let mut prop = Self {
            lattice,
            forward,
            inverse,
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
            cos_x,
            sin_x,
            free: Vec::new(),
            free_beta: f64::NAN,
            site_phases: None,
        };
        prop.set_beta(0.0);
        prop
    }

    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    fn set_beta(&mut self, beta: f64) {
        if beta == self.free_beta {
            return;
        }
        let kbar = self.lattice.kbar();
        let lattice = self.lattice;
        self.free = (0..lattice.size())
            .map(|j| {
                let q = lattice.site(j) as f64 + beta;
                Complex64::from_polar(1.0, -0.5 * kbar * q * q)
            })
            .collect();
        self.free_beta = beta;
    }

    /// Position-space kick factors `exp(-i 𝒦 cos(x - a) / k̄) / M`; the `1/M`
    /// normalizes the transform pair.
    pub fn kick_factors(&self, amplitude: f64, phase: f64) -> Vec<Complex64> {
        let z = amplitude / self.lattice.kbar();
        let inv_m = 1.0 / self.lattice.size() as f64;
        let (sa, ca) = phase.sin_cos();
        self.cos_x
            .iter()
            .zip(&self.sin_x)
            .map(|(&c, &s)| Complex64::from_polar(inv_m, -z * (c * ca + s * sa)))
            .collect()
    }

    /// Applies precomputed kick factors in place.
    pub fn kick_with(&mut self, amplitudes: &mut [Complex64], factors: &[Complex64]) {
        self.inverse.process_with_scratch(amplitudes, &mut self.scratch);
        for (z, f) in amplitudes.iter_mut().zip(factors) {
            *z *= f;
        }
        self.forward.process_with_scratch(amplitudes, &mut self.scratch);
    }

    pub fn kick(&mut self, state: &mut QuantumState, amplitude: f64, phase: f64) {
        if amplitude == 0.0 {
            return;
        }
        let factors = self.kick_factors(amplitude, phase);
        self.kick_with(&mut state.amplitudes, &factors);
    }

    /// Extra static phases `e^{-iθ_j}` applied with every free step, indexed
    /// like the amplitudes; `None` restores the bare rotor.
    pub fn set_site_phases(&mut self, theta: Option<&[f64]>) {
        self.site_phases = theta.map(|t| t.iter().map(|&x| Complex64::from_polar(1.0, -x)).collect());
    }

    /// One period of free motion; advances the kick counter.
    pub fn free(&mut self, state: &mut QuantumState) {
        self.set_beta(state.beta);
        match &self.site_phases {
            None => {
                for (z, f) in state.amplitudes.iter_mut().zip(&self.free) {
                    *z *= f;
                }
            }
            Some(extra) => {
                for ((z, f), e) in state.amplitudes.iter_mut().zip(&self.free).zip(extra) {
                    *z *= f * e;
                }
            }
        }
        state.time += 1;
    }
}

fn check_size(state: &QuantumState, lattice: &LatticeSpec) -> Result<(), EngineError> {
    if state.amplitudes.len() != lattice.size() {
        return Err(EngineError::SizeMismatch { state: state.amplitudes.len(), lattice: lattice.size() });
    }
    Ok(())
}

/// Multiplies the state, in position representation, by `exp(-i 𝒦 cos(x - a) / k̄)`.
pub fn apply_kick(
    state: &QuantumState,
    amplitude: f64,
    phase: f64,
    lattice: &LatticeSpec,
) -> Result<QuantumState, EngineError> {
    check_size(state, lattice)?;
    let mut out = state.clone();
    Propagator::new(*lattice).kick(&mut out, amplitude, phase);
    Ok(out)
}

/// `ψ_m ← ψ_m exp(-i (m + β)² k̄ / 2)` and `t ← t + 1`.
pub fn free_propagate(state: &QuantumState, lattice: &LatticeSpec) -> Result<QuantumState, EngineError> {
    check_size(state, lattice)?;
    let mut out = state.clone();
    let kbar = lattice.kbar();
    for (j, z) in out.amplitudes.iter_mut().enumerate() {
        let q = lattice.site(j) as f64 + state.beta;
        *z *= Complex64::from_polar(1.0, -0.5 * kbar * q * q);
    }
    out.time += 1;
    Ok(out)
}

/// With probability `p_dec`, resamples β uniformly in `(-1/2, 1/2]` and
/// multiplies the state by a random global phase.
pub fn apply_decoherence<R: Rng + ?Sized>(state: &QuantumState, p_dec: f64, rng: &mut R) -> QuantumState {
    let mut out = state.clone();
    decohere_in_place(&mut out, p_dec, rng);
    out
}

fn decohere_in_place<R: Rng + ?Sized>(state: &mut QuantumState, p_dec: f64, rng: &mut R) -> bool {
    // one draw per kick, even when p_dec = 0, keeps the stream aligned
    let u: f64 = rng.random();
    if u >= p_dec {
        return false;
    }
    state.beta = 0.5 - rng.random::<f64>();
    let phase = Complex64::from_polar(1.0, TAU * rng.random::<f64>());
    for z in &mut state.amplitudes {
        *z *= phase;
    }
    true
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// Momentum densities in storage order after each period, row 0 is `t = 0`.
    pub densities: Vec<Vec<f64>>,
    pub final_state: QuantumState,
    pub max_norm_drift: f64,
}

/// Alternates kick `t` (using `𝒦(t), a(t)` for `t = 1, 2, ...`) and free
/// propagation for `kicks` periods, recording densities after each period.
pub fn evolve(
    state: &QuantumState,
    seq: &ModulationSequence,
    lattice: &LatticeSpec,
    kicks: usize,
) -> Result<Trajectory, EngineError> {
    check_size(state, lattice)?;
    let mut prop = Propagator::new(*lattice);
    let factors: Vec<Vec<Complex64>> =
        (0..seq.period() as i64).map(|t| prop.kick_factors(seq.amplitude(t), seq.phase(t))).collect();
    let mut psi = state.clone();
    let mut densities = Vec::with_capacity(kicks + 1);
    densities.push(psi.densities());
    let mut max_norm_drift = (1.0 - psi.norm_sqr()).abs();
    for _ in 0..kicks {
        let t = psi.time as i64 + 1;
        if seq.amplitude(t) != 0.0 {
            let idx = t.rem_euclid(seq.period() as i64) as usize;
            prop.kick_with(&mut psi.amplitudes, &factors[idx]);
        }
        prop.free(&mut psi);
        let drift = (1.0 - psi.norm_sqr()).abs();
        max_norm_drift = max_norm_drift.max(drift);
        if drift > NORM_TOLERANCE {
            return Err(EngineError::UnitarityLoss { disorder: 0, beta_index: 0, kick: psi.time, drift });
        }
        densities.push(psi.densities());
    }
    Ok(Trajectory { densities, final_state: psi, max_norm_drift })
}

/// Where the kick sequence of each disorder realization comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceSource {
    /// The same sequence for every realization.
    Fixed { sequence: ModulationSequence },
    /// A fresh random-phase sequence per realization.
    RandomPhase { strength: f64, period: usize, antisymmetric: bool },
    /// Constant amplitude with the phase re-drawn at every kick.
    Annealed { strength: f64 },
}

impl SequenceSource {
    pub fn fixed(sequence: ModulationSequence) -> Self {
        SequenceSource::Fixed { sequence }
    }

    /// Sequence of disorder realization `index`; `None` for annealed disorder.
    pub fn realization(&self, seed: u64, index: usize) -> Result<Option<ModulationSequence>, ModulationError> {
        match self {
            SequenceSource::Fixed { sequence } => Ok(Some(sequence.clone())),
            SequenceSource::RandomPhase { strength, period, antisymmetric } => {
                let sub_seed: u64 = rng::stream(seed, Substream::Disorder, index as u64, 0).random();
                build_random_phase_sequence(*strength, *period, sub_seed, *antisymmetric).map(Some)
            }
            SequenceSource::Annealed { .. } => Ok(None),
        }
    }

    pub fn max_amplitude(&self) -> f64 {
        match self {
            SequenceSource::Fixed { sequence } => sequence.max_amplitude(),
            SequenceSource::RandomPhase { strength, .. } | SequenceSource::Annealed { strength } => *strength,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSampling {
    /// Normal(0, beta_sigma) truncated to the zone, drawn in antithetic ± pairs.
    Gaussian,
    /// Stratified uniform draws over the whole zone.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// Bins per lattice spacing: bin width is `k̄ / subdivisions` (1, 2 or 4).
    pub subdivisions: usize,
    /// Bins kept on each side of `p = 0`; `None` covers the whole lattice.
    pub half_width_bins: Option<usize>,
    /// Record every `stride`-th kick.
    pub stride: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self { subdivisions: 1, half_width_bins: None, stride: 1 }
    }
}

impl HistogramSpec {
    pub fn bin_width(&self, lattice: &LatticeSpec) -> f64 {
        lattice.kbar() / self.subdivisions as f64
    }

    fn half_width(&self, lattice: &LatticeSpec) -> usize {
        self.half_width_bins.unwrap_or(self.subdivisions * lattice.size() / 2 + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub n_disorder: usize,
    pub n_beta: usize,
    /// Standard deviation of the initial quasi-momentum, in zone units.
    pub beta_sigma: f64,
    pub beta_sampling: BetaSampling,
    /// Decoherence probability per kick per trajectory.
    pub decoherence_rate: f64,
    pub seed: u64,
    pub horizon: usize,
    /// Bins per lattice spacing for Π₀ (1, 2 or 4).
    pub pi0_subdivisions: usize,
    /// Full momentum histogram, if wanted.
    pub histogram: Option<HistogramSpec>,
    /// Number of interleaved batches kept for error bars.
    pub batches: usize,
    /// Adds i.i.d. uniform phases to the free evolution of every momentum
    /// site, drawn once per disorder index. Each index is then an independent
    /// disorder realization with the same symmetry class.
    #[serde(default)]
    pub random_site_phases: bool,
}

impl Default for EnsembleSpec {
    fn default() -> Self {
        Self {
            n_disorder: 1,
            n_beta: 1,
            beta_sigma: 0.0,
            beta_sampling: BetaSampling::Gaussian,
            decoherence_rate: 0.0,
            seed: 0,
            horizon: 100,
            pi0_subdivisions: 1,
            histogram: None,
            batches: 16,
            random_site_phases: false,
        }
    }
}

fn valid_subdivisions(q: usize) -> bool {
    matches!(q, 1 | 2 | 4)
}

impl EnsembleSpec {
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidEnsemble(msg));
        if self.n_disorder == 0 || self.n_beta == 0 {
            return bad("n_disorder and n_beta must be at least 1".into());
        }
        if !(self.beta_sigma >= 0.0 && self.beta_sigma < 0.5) {
            return bad(format!("beta_sigma {} outside [0, 0.5)", self.beta_sigma));
        }
        if !(self.decoherence_rate >= 0.0 && self.decoherence_rate < 1.0) {
            return bad(format!("decoherence rate {} outside [0, 1)", self.decoherence_rate));
        }
        if self.horizon == 0 {
            return bad("horizon must be at least one kick".into());
        }
        if self.batches == 0 {
            return bad("at least one batch is required".into());
        }
        if !valid_subdivisions(self.pi0_subdivisions) {
            return bad(format!("Π₀ subdivisions {} not in {{1, 2, 4}}", self.pi0_subdivisions));
        }
        if let Some(h) = &self.histogram {
            if !valid_subdivisions(h.subdivisions) || h.stride == 0 {
                return bad("histogram subdivisions must be 1, 2 or 4 and stride positive".into());
            }
        }
        Ok(())
    }

    pub fn trajectories(&self) -> usize {
        self.n_disorder * self.n_beta
    }

    /// Initial quasi-momentum of trajectory `(disorder, beta_index)`.
    pub fn initial_beta(&self, disorder: usize, beta_index: usize) -> f64 {
        match self.beta_sampling {
            BetaSampling::Uniform => {
                let mut rng = rng::stream(self.seed, Substream::Beta, disorder as u64, beta_index as u64);
                let u: f64 = rng.random();
                // stratum `beta_index` of n_beta equal slices of (-1/2, 1/2]
                0.5 - (beta_index as f64 + u) / self.n_beta as f64
            }
            BetaSampling::Gaussian => {
                if self.beta_sigma == 0.0 {
                    return 0.0;
                }
                let pair = beta_index / 2;
                let sign = if beta_index.is_multiple_of(2) { 1.0 } else { -1.0 };
                let mut rng = rng::stream(self.seed, Substream::Beta, disorder as u64, pair as u64);
                loop {
                    let z: f64 = rng.sample(StandardNormal);
                    let beta = sign * z * self.beta_sigma;
                    if beta > -0.5 && beta < 0.5 {
                        return beta;
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    /// Kick of each row.
    pub times: Vec<usize>,
    /// Bin centers in momentum units.
    pub centers: Vec<f64>,
    /// Densities, one row per recorded kick.
    pub rows: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    pub lattice: LatticeSpec,
    pub spec: EnsembleSpec,
    pub source: SequenceSource,
    /// Π₀(t) for `t = 0..=horizon`: averaged density in the bin containing `p = 0`.
    pub pi0: Vec<f64>,
    /// ⟨p²(t)⟩ from exact lattice moments.
    pub p2: Vec<f64>,
    pub pi0_batches: Vec<Vec<f64>>,
    pub p2_batches: Vec<Vec<f64>>,
    pub histogram: Option<Histogram>,
    pub max_norm_drift: f64,
    pub max_occupied_fraction: f64,
    pub decoherence_events: u64,
}

impl EnsembleResult {
    pub fn horizon(&self) -> usize {
        self.pi0.len() - 1
    }

    /// `t,pi0,p2` rows with a documented header.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("t,pi0,p2\n");
        for (t, (pi0, p2)) in self.pi0.iter().zip(&self.p2).enumerate() {
            out.push_str(&format!("{t},{pi0:.12e},{p2:.12e}\n"));
        }
        out
    }

    /// `t,p,density` rows, empty when no histogram was recorded.
    pub fn histogram_csv(&self) -> String {
        let mut out = String::from("t,p,density\n");
        if let Some(h) = &self.histogram {
            for (t, row) in h.times.iter().zip(&h.rows) {
                for (p, rho) in h.centers.iter().zip(row) {
                    out.push_str(&format!("{t},{p:.6},{rho:.12e}\n"));
                }
            }
        }
        out
    }
}

struct TrajectoryRecord {
    pi0: Vec<f64>,
    p2: Vec<f64>,
    histogram: Option<Vec<Vec<f64>>>,
    max_norm_drift: f64,
    max_occupied_fraction: f64,
    decoherence_events: u64,
}

enum KickPlan {
    Periodic(Vec<Option<Vec<Complex64>>>),
    Annealed { strength: f64, rng: rand_chacha::ChaCha8Rng },
}

/// Index of the site inside the momentum bin `[(j - 1/2) w, (j + 1/2) w)`
/// with `w = k̄ / q`, if any.
fn bin_of(m: i64, beta: f64, q: usize) -> i64 {
    ((m as f64 + beta) * q as f64 + 0.5).floor() as i64
}

fn pi0_density(psi: &QuantumState, lattice: &LatticeSpec, q: usize) -> f64 {
    let centre = (-psi.beta).round() as i64;
    let width = lattice.kbar() / q as f64;
    (centre - 1..=centre + 1)
        .filter(|&m| bin_of(m, psi.beta, q) == 0)
        .map(|m| psi.amplitude_at(lattice, m).norm_sqr())
        .sum::<f64>()
        / width
}

fn run_trajectory(
    prop: &mut Propagator,
    source: &SequenceSource,
    spec: &EnsembleSpec,
    disorder: usize,
    beta_index: usize,
    sequence: Option<&ModulationSequence>,
) -> Result<TrajectoryRecord, EngineError> {
    let lattice = *prop.lattice();
    let mut psi = init_state(&lattice, spec.initial_beta(disorder, beta_index))?;
    let mut plan = match (source, sequence) {
        (SequenceSource::Annealed { strength }, _) => KickPlan::Annealed {
            strength: *strength,
            rng: rng::stream(spec.seed, Substream::Annealed, disorder as u64, beta_index as u64),
        },
        (_, Some(seq)) => KickPlan::Periodic(
            (0..seq.period() as i64)
                .map(|t| {
                    let a = seq.amplitude(t);
                    (a != 0.0).then(|| prop.kick_factors(a, seq.phase(t)))
                })
                .collect(),
        ),
        (_, None) => unreachable!("periodic sources always yield a sequence"),
    };
    if spec.random_site_phases {
        let mut site_rng = rng::stream(spec.seed, Substream::Disorder, disorder as u64, 1);
        let theta: Vec<f64> = (0..lattice.size()).map(|_| TAU * site_rng.random::<f64>()).collect();
        prop.set_site_phases(Some(&theta));
    } else {
        prop.set_site_phases(None);
    }
    let mut dec_rng = rng::stream(spec.seed, Substream::Decoherence, disorder as u64, beta_index as u64);

    let horizon = spec.horizon;
    let q = spec.pi0_subdivisions;
    let mut pi0 = Vec::with_capacity(horizon + 1);
    let mut p2 = Vec::with_capacity(horizon + 1);
    let hist_spec = spec.histogram;
    let mut histogram = hist_spec.map(|_| Vec::new());
    let record_hist = |psi: &QuantumState, histogram: &mut Option<Vec<Vec<f64>>>| {
        if let (Some(h), Some(rows)) = (hist_spec, histogram.as_mut()) {
            if psi.time.is_multiple_of(h.stride) {
                let half = h.half_width(&lattice) as i64;
                let width = h.bin_width(&lattice);
                let mut row = vec![0.0; (2 * half + 1) as usize];
                for (j, z) in psi.amplitudes.iter().enumerate() {
                    let b = bin_of(lattice.site(j), psi.beta, h.subdivisions);
                    if b.abs() <= half {
                        row[(b + half) as usize] += z.norm_sqr() / width;
                    }
                }
                rows.push(row);
            }
        }
    };

    pi0.push(pi0_density(&psi, &lattice, q));
    p2.push(psi.second_moment(&lattice));
    record_hist(&psi, &mut histogram);
    let mut max_norm_drift: f64 = 0.0;
    let mut decoherence_events = 0;

    for _ in 0..horizon {
        let t = psi.time as i64 + 1;
        match &mut plan {
            KickPlan::Periodic(factors) => {
                let n = factors.len() as i64;
                if let Some(f) = &factors[t.rem_euclid(n) as usize] {
                    prop.kick_with(&mut psi.amplitudes, f);
                }
            }
            KickPlan::Annealed { strength, rng } => {
                let phase = TAU * rng.random::<f64>();
                let f = prop.kick_factors(*strength, phase);
                prop.kick_with(&mut psi.amplitudes, &f);
            }
        }
        prop.free(&mut psi);
        if decohere_in_place(&mut psi, spec.decoherence_rate, &mut dec_rng) {
            decoherence_events += 1;
        }

        let drift = (1.0 - psi.norm_sqr()).abs();
        max_norm_drift = max_norm_drift.max(drift);
        if drift > NORM_TOLERANCE {
            return Err(EngineError::UnitarityLoss { disorder, beta_index, kick: psi.time, drift });
        }
        pi0.push(pi0_density(&psi, &lattice, q));
        p2.push(psi.second_moment(&lattice));
        record_hist(&psi, &mut histogram);
    }
    let max_occupied_fraction = psi.occupied_fraction(&lattice);
    Ok(TrajectoryRecord { pi0, p2, histogram, max_norm_drift, max_occupied_fraction, decoherence_events })
}

/// Runs every `(disorder, β)` trajectory and averages the observables.
///
/// Each trajectory draws from its own named substreams, and partial sums are
/// folded in trajectory-index order, so the result is bit-identical for any
/// worker count. `workers = None` uses the global rayon pool.
pub fn run_ensemble(
    source: &SequenceSource,
    lattice: &LatticeSpec,
    spec: &EnsembleSpec,
    workers: Option<usize>,
) -> Result<EnsembleResult, EngineError> {
    spec.validate()?;
    match workers {
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| EngineError::Pool(e.to_string()))?;
            pool.install(|| run_ensemble_inner(source, lattice, spec))
        }
        None => run_ensemble_inner(source, lattice, spec),
    }
}

fn run_ensemble_inner(
    source: &SequenceSource,
    lattice: &LatticeSpec,
    spec: &EnsembleSpec,
) -> Result<EnsembleResult, EngineError> {
    let sequences: Vec<Option<ModulationSequence>> =
        (0..spec.n_disorder).map(|d| source.realization(spec.seed, d)).collect::<Result<_, _>>()?;

    let horizon = spec.horizon;
    let total = spec.trajectories();
    let batches = spec.batches.min(total);
    let mut pi0_sum = vec![vec![0.0; horizon + 1]; batches];
    let mut p2_sum = vec![vec![0.0; horizon + 1]; batches];
    let mut batch_counts = vec![0usize; batches];
    let mut hist_sum: Option<Vec<Vec<f64>>> = None;
    let mut max_norm_drift: f64 = 0.0;
    let mut max_occupied_fraction: f64 = 0.0;
    let mut decoherence_events = 0u64;

    let chunk = (rayon::current_num_threads() * 4).max(8);
    let mut start = 0;
    while start < total {
        let end = (start + chunk).min(total);
        let records: Vec<Result<TrajectoryRecord, EngineError>> = (start..end)
            .into_par_iter()
            .map_init(
                || Propagator::new(*lattice),
                |prop, k| {
                    let (d, b) = (k / spec.n_beta, k % spec.n_beta);
                    run_trajectory(prop, source, spec, d, b, sequences[d].as_ref())
                },
            )
            .collect();
        for (offset, record) in records.into_iter().enumerate() {
            let record = record?;
            let batch = (start + offset) % batches;
            batch_counts[batch] += 1;
            for (acc, x) in pi0_sum[batch].iter_mut().zip(&record.pi0) {
                *acc += x;
            }
            for (acc, x) in p2_sum[batch].iter_mut().zip(&record.p2) {
                *acc += x;
            }
            if let Some(rows) = record.histogram {
                match &mut hist_sum {
                    None => hist_sum = Some(rows),
                    Some(acc) => {
                        for (acc_row, row) in acc.iter_mut().zip(&rows) {
                            for (a, x) in acc_row.iter_mut().zip(row) {
                                *a += x;
                            }
                        }
                    }
                }
            }
            max_norm_drift = max_norm_drift.max(record.max_norm_drift);
            max_occupied_fraction = max_occupied_fraction.max(record.max_occupied_fraction);
            decoherence_events += record.decoherence_events;
        }
        start = end;
    }

    let mean_over = |sums: &[Vec<f64>]| -> Vec<f64> {
        (0..=horizon).map(|t| sums.iter().map(|s| s[t]).sum::<f64>() / total as f64).collect()
    };
    let pi0 = mean_over(&pi0_sum);
    let p2 = mean_over(&p2_sum);
    let normalize = |sums: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        sums.into_iter()
            .zip(&batch_counts)
            .map(|(s, &c)| s.into_iter().map(|x| x / c as f64).collect())
            .collect()
    };
    let histogram = match (spec.histogram, hist_sum) {
        (Some(h), Some(rows)) => {
            let half = h.half_width(lattice) as i64;
            let width = h.bin_width(lattice);
            Some(Histogram {
                bin_width: width,
                times: (0..=horizon).filter(|t| t % h.stride == 0).collect(),
                centers: (-half..=half).map(|b| b as f64 * width).collect(),
                rows: rows.into_iter().map(|r| r.into_iter().map(|x| x / total as f64).collect()).collect(),
            })
        }
        _ => None,
    };
    if max_occupied_fraction >= 0.25 {
        log::warn!("occupied lattice fraction {max_occupied_fraction:.3} exceeds 1/4: increase the lattice size");
    }
    Ok(EnsembleResult {
        lattice: *lattice,
        spec: spec.clone(),
        source: source.clone(),
        pi0,
        p2,
        pi0_batches: normalize(pi0_sum),
        p2_batches: normalize(p2_sum),
        histogram,
        max_norm_drift,
        max_occupied_fraction,
        decoherence_events,
    })
}
