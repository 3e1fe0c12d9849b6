//! The tight-binding "nanotube" equivalent to a period-N modulated rotor.
//!
//! Sites are labelled `(m1, m2)` with `m1` the momentum index (open ends) and
//! `m2 ∈ 0..N` the transverse index (periodic). A hop by displacement
//! `r = (r1, r2)` carries the element `W_r e^{iφ r2}`, optionally dressed by a
//! per-site gauge `e^{i(χ_dest − χ_src)}`.

use std::collections::{BTreeMap, VecDeque};
use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt::Write as _;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Minimum distance of a tangent argument from its poles.
pub const POLE_TOLERANCE: f64 = 1e-6;

/// Tolerance on cycle fluxes when testing for a real gauge.
pub const GAUGE_TOLERANCE: f64 = 1e-9;

/// Discarded squared weight above which truncation is reported.
pub const TRUNCATION_WARNING: f64 = 1e-6;

/// Oversampling of the Fourier grid relative to the kept range.
pub const OVERSAMPLING: usize = 8;

/// Hops with smaller magnitude are treated as absent.
const HOP_EPSILON: f64 = 1e-14;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LatticeError {
    #[error("site ({m1}, {m2}) sits within {POLE_TOLERANCE} of a tangent pole")]
    Resonance { m1: i64, m2: i64 },
    #[error("hopping kernel has poles: K/kbar = {ratio} ≥ π/2")]
    KernelPole { ratio: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(String),
    #[error("path is not closed: net displacement ({r1}, {r2})")]
    OpenPath { r1: i64, r2: i64 },
    #[error("step {step}: no hop of displacement ({r1}, {r2})")]
    MissingHop { step: usize, r1: i64, r2: i64 },
    #[error("step {step}: leaves the lattice at m1 = {m1}")]
    OffLattice { step: usize, m1: i64 },
}

type Result<T> = std::result::Result<T, LatticeError>;

/// `tan{[ω − (k̄ m1²/2 + 2π m2/N)]/2}`.
pub fn onsite_energy(m1: i64, m2: i64, omega: f64, kbar: f64, period: usize) -> Result<f64> {
    if period == 0 || !(kbar > 0.0) || !omega.is_finite() {
        return Err(LatticeError::Invalid(format!("period={period}, kbar={kbar}, omega={omega}")));
    }
    let m1f = m1 as f64;
    // reduce the m2 term exactly so that ε is periodic in m2
    let m2r = m2.rem_euclid(period as i64) as f64;
    let arg = 0.5 * (omega - (kbar * m1f * m1f / 2.0 + TAU * m2r / period as f64));
    let to_pole = (arg - FRAC_PI_2).rem_euclid(PI);
    if to_pole.min(PI - to_pole) < POLE_TOLERANCE {
        return Err(LatticeError::Resonance { m1, m2 });
    }
    Ok(arg.tan())
}

/// Fourier coefficients `W_r` of the hopping kernel for `|r1|, |r2| ≤ range`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoppingTable {
    pub range: usize,
    /// Row-major over `r1 = −R..=R`, then `r2 = −R..=R`.
    pub coefficients: Vec<f64>,
    /// Squared weight of the coefficients outside the kept range.
    pub truncation_error: f64,
}

impl HoppingTable {
    pub fn get(&self, r1: i64, r2: i64) -> f64 {
        let r = self.range as i64;
        if r1.abs() > r || r2.abs() > r {
            return 0.0;
        }
        let side = 2 * r + 1;
        self.coefficients[((r1 + r) * side + (r2 + r)) as usize]
    }

    /// Non-zero entries as `(r1, r2, W)`.
    pub fn entries(&self) -> Vec<(i64, i64, f64)> {
        let r = self.range as i64;
        let mut out = Vec::new();
        for r1 in -r..=r {
            for r2 in -r..=r {
                let w = self.get(r1, r2);
                if w.abs() > HOP_EPSILON {
                    out.push((r1, r2, w));
                }
            }
        }
        out
    }
}

/// Two-dimensional Fourier analysis of `tan[K cos x1 (1 + cos x2) / 2k̄]`.
pub fn hopping_coefficients(k: f64, kbar: f64, range: usize) -> Result<HoppingTable> {
    if !(kbar > 0.0) || !k.is_finite() || range == 0 {
        return Err(LatticeError::Invalid(format!("K={k}, kbar={kbar}, range={range}")));
    }
    let ratio = k.abs() / kbar;
    if ratio >= FRAC_PI_2 {
        return Err(LatticeError::KernelPole { ratio });
    }
    let g = OVERSAMPLING * (2 * range + 1);
    let step = TAU / g as f64;
    let mut grid: Vec<Complex64> = Vec::with_capacity(g * g);
    for i in 0..g {
        let c1 = (i as f64 * step).cos();
        for j in 0..g {
            let c2 = (j as f64 * step).cos();
            grid.push(Complex64::new((k * c1 * (1.0 + c2) / (2.0 * kbar)).tan(), 0.0));
        }
    }
    let mean_square = grid.iter().map(|z| z.re * z.re).sum::<f64>() / (g * g) as f64;

    let fft = FftPlanner::new().plan_fft_forward(g);
    for row in grid.chunks_mut(g) {
        fft.process(row);
    }
    let mut column = vec![Complex64::default(); g];
    for j in 0..g {
        for i in 0..g {
            column[i] = grid[i * g + j];
        }
        fft.process(&mut column);
        for i in 0..g {
            grid[i * g + j] = column[i];
        }
    }
    let norm = 1.0 / (g * g) as f64;
    let r = range as i64;
    let mut coefficients = Vec::with_capacity((2 * range + 1).pow(2));
    for r1 in -r..=r {
        for r2 in -r..=r {
            let i = r1.rem_euclid(g as i64) as usize;
            let j = r2.rem_euclid(g as i64) as usize;
            coefficients.push(grid[i * g + j].re * norm);
        }
    }
    let kept: f64 = coefficients.iter().map(|w| w * w).sum();
    let truncation_error = (mean_square - kept).max(0.0);
    if truncation_error > TRUNCATION_WARNING {
        log::warn!("hopping table truncated at range {range}: discarded weight {truncation_error:.3e}");
    }
    Ok(HoppingTable { range, coefficients, truncation_error })
}

/// One hopping channel: displacement and its gauge-free amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hop {
    pub r1: i64,
    pub r2: i64,
    pub amplitude: Complex64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NanotubeLattice {
    length: usize,
    period: usize,
    onsite: Vec<f64>,
    hops: Vec<Hop>,
    omega: f64,
    flux_phase: f64,
    gauge: Option<Vec<f64>>,
}

impl NanotubeLattice {
    /// Lattice from explicit hop amplitudes, completed so that the hop by
    /// `−r` is the conjugate of the hop by `r`.
    pub fn with_hops(length: usize, period: usize, flux_phase: f64, hops: &[(i64, i64, Complex64)]) -> Result<Self> {
        if length == 0 || period == 0 || !flux_phase.is_finite() {
            return Err(LatticeError::Invalid(format!("length={length}, period={period}, phi={flux_phase}")));
        }
        let mut table: BTreeMap<(i64, i64), Complex64> = BTreeMap::new();
        for &(r1, r2, w) in hops {
            if (r1, r2) == (0, 0) {
                return Err(LatticeError::Invalid("zero displacement is on-site, not a hop".into()));
            }
            if let Some(prev) = table.get(&(-r1, -r2)) {
                if (prev.conj() - w).norm() > HOP_EPSILON * (1.0 + w.norm()) {
                    return Err(LatticeError::Invalid(format!("hop ({r1}, {r2}) is not the conjugate of its reverse")));
                }
            }
            table.insert((r1, r2), w);
            table.insert((-r1, -r2), w.conj());
        }
        let hops = table
            .into_iter()
            .filter(|(_, w)| w.norm() > HOP_EPSILON)
            .map(|((r1, r2), amplitude)| Hop { r1, r2, amplitude })
            .collect();
        Ok(Self { length, period, onsite: vec![0.0; length * period], hops, omega: 0.0, flux_phase, gauge: None })
    }

    /// The rotor's nanotube: on-site energies at quasi-energy `omega` and the
    /// Fourier hopping table of the kick kernel.
    pub fn from_rotor(
        length: usize,
        period: usize,
        k: f64,
        kbar: f64,
        omega: f64,
        flux_phase: f64,
        range: usize,
    ) -> Result<Self> {
        let table = hopping_coefficients(k, kbar, range)?;
        let hops: Vec<(i64, i64, Complex64)> =
            table.entries().into_iter().map(|(r1, r2, w)| (r1, r2, Complex64::new(w, 0.0))).collect();
        let mut lattice = Self::with_hops(length, period, flux_phase, &hops)?;
        lattice.omega = omega;
        for m1 in 0..length {
            for m2 in 0..period {
                lattice.onsite[m1 * period + m2] = onsite_energy(m1 as i64, m2 as i64, omega, kbar, period)?;
            }
        }
        Ok(lattice)
    }

    pub fn with_onsite(mut self, onsite: Vec<f64>) -> Result<Self> {
        if onsite.len() != self.sites() {
            return Err(LatticeError::Invalid(format!("{} on-site values for {} sites", onsite.len(), self.sites())));
        }
        self.onsite = onsite;
        Ok(self)
    }

    /// Applies the per-site gauge `e^{iχ}` on top of any existing one.
    pub fn with_gauge(mut self, chi: &[f64]) -> Result<Self> {
        if chi.len() != self.sites() {
            return Err(LatticeError::Invalid(format!("{} gauge phases for {} sites", chi.len(), self.sites())));
        }
        let total = match self.gauge.take() {
            Some(g) => g.iter().zip(chi).map(|(a, b)| a + b).collect(),
            None => chi.to_vec(),
        };
        self.gauge = Some(total);
        Ok(self)
    }

    pub fn length(&self) -> usize {
        self.length
    }

    pub fn period(&self) -> usize {
        self.period
    }

    pub fn sites(&self) -> usize {
        self.length * self.period
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn flux_phase(&self) -> f64 {
        self.flux_phase
    }

    pub fn onsite(&self) -> &[f64] {
        &self.onsite
    }

    pub fn hops(&self) -> &[Hop] {
        &self.hops
    }

    pub fn index(&self, m1: i64, m2: i64) -> Option<usize> {
        (0..self.length as i64).contains(&m1).then(|| m1 as usize * self.period + m2.rem_euclid(self.period as i64) as usize)
    }

    fn chi(&self, site: usize) -> f64 {
        self.gauge.as_ref().map_or(0.0, |g| g[site])
    }

    /// Element for a hop `hop` leaving `src`, if the destination exists.
    fn hop_element(&self, src: usize, hop: &Hop) -> Option<(usize, Complex64)> {
        let m1 = (src / self.period) as i64;
        let m2 = (src % self.period) as i64;
        let dest = self.index(m1 + hop.r1, m2 + hop.r2)?;
        let phase = self.flux_phase * hop.r2 as f64 + self.chi(dest) - self.chi(src);
        Some((dest, hop.amplitude * Complex64::from_polar(1.0, phase)))
    }

    /// Off-diagonal matrix elements summed over every displacement linking
    /// the same pair of sites, keyed by `(row, column)`.
    ///
    /// The lower triangle is accumulated and mirrored, so the result is
    /// Hermitian bit for bit.
    pub fn matrix_elements(&self) -> BTreeMap<(usize, usize), Complex64> {
        let mut out = BTreeMap::new();
        for src in 0..self.sites() {
            for hop in &self.hops {
                if let Some((dest, h)) = self.hop_element(src, hop) {
                    if dest >= src {
                        *out.entry((dest, src)).or_insert(Complex64::default()) += h;
                    }
                }
            }
        }
        let lower: Vec<((usize, usize), Complex64)> = out.iter().map(|(&k, &v)| (k, v)).collect();
        for ((row, col), v) in lower {
            if row == col {
                out.insert((row, col), Complex64::new(v.re, 0.0));
            } else {
                out.insert((col, row), v.conj());
            }
        }
        out
    }

    /// Dense operator with the on-site energies on the diagonal.
    pub fn to_dense(&self) -> Vec<Vec<Complex64>> {
        let n = self.sites();
        let mut h = vec![vec![Complex64::default(); n]; n];
        for ((row, col), v) in self.matrix_elements() {
            h[row][col] += v;
        }
        for (s, e) in self.onsite.iter().enumerate() {
            h[s][s] += e;
        }
        h
    }

    /// `row,col,re,im` triplets over linear indices `m1·N + m2`; the diagonal
    /// rows carry the on-site energies.
    pub fn to_triplets(&self) -> String {
        let mut out = format!(
            "# nanotube length={} period={} omega={} flux_phase={}\n# site index = m1*period + m2; diagonal entries are on-site energies\nrow,col,re,im\n",
            self.length, self.period, self.omega, self.flux_phase
        );
        let mut entries = self.matrix_elements();
        for (s, &e) in self.onsite.iter().enumerate() {
            *entries.entry((s, s)).or_default() += e;
        }
        for ((row, col), v) in entries {
            if v.norm() > HOP_EPSILON || row == col {
                let _ = writeln!(out, "{row},{col},{:.16e},{:.16e}", v.re, v.im);
            }
        }
        out
    }

    fn find_hop(&self, r1: i64, r2: i64) -> Option<&Hop> {
        self.hops.iter().find(|h| h.r1 == r1 && h.r2 == r2)
    }
}

/// A closed walk: starting site plus the displacement of each hop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Loop {
    pub start: (i64, i64),
    pub steps: Vec<(i64, i64)>,
}

impl Loop {
    pub fn new(start: (i64, i64), steps: Vec<(i64, i64)>) -> Self {
        Self { start, steps }
    }

    /// Same cycle walked backwards.
    pub fn reversed(&self) -> Self {
        let mut m = self.start;
        for &(r1, r2) in &self.steps {
            m = (m.0 + r1, m.1 + r2);
        }
        Self { start: m, steps: self.steps.iter().rev().map(|&(a, b)| (-a, -b)).collect() }
    }
}

/// Phase accumulated along `cycle`, in `[0, 2π)`.
pub fn loop_flux(lattice: &NanotubeLattice, cycle: &Loop) -> Result<f64> {
    let r1: i64 = cycle.steps.iter().map(|s| s.0).sum();
    let r2: i64 = cycle.steps.iter().map(|s| s.1).sum();
    if cycle.steps.is_empty() || r1 != 0 || r2.rem_euclid(lattice.period as i64) != 0 {
        return Err(LatticeError::OpenPath { r1, r2 });
    }
    let mut src = lattice
        .index(cycle.start.0, cycle.start.1)
        .ok_or(LatticeError::OffLattice { step: 0, m1: cycle.start.0 })?;
    let mut m1 = cycle.start.0;
    let mut total = 0.0;
    for (step, &(r1, r2)) in cycle.steps.iter().enumerate() {
        let hop = lattice.find_hop(r1, r2).ok_or(LatticeError::MissingHop { step, r1, r2 })?;
        let (dest, h) = lattice.hop_element(src, hop).ok_or(LatticeError::OffLattice { step, m1: m1 + r1 })?;
        total += h.arg();
        src = dest;
        m1 += r1;
    }
    Ok(total.rem_euclid(TAU))
}

/// Outcome of the gauge search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaugeReport {
    pub reducible: bool,
    /// Per-site phases making every element real, when they exist.
    pub gauge: Option<Vec<f64>>,
    /// Largest co-tree flux distance from a multiple of π.
    pub worst_flux: f64,
    pub independent_cycles: usize,
}

/// Searches for per-site phases that make every hop real.
///
/// A spanning forest fixes the phases; each remaining edge closes one
/// independent cycle whose flux must be a multiple of π.
pub fn gauge_reducible(lattice: &NanotubeLattice) -> GaugeReport {
    let n = lattice.sites();
    let elements = lattice.matrix_elements();
    let scale = elements.values().map(|v| v.norm()).fold(0.0, f64::max);
    let mut adjacency: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut edges = Vec::new();
    for (&(row, col), v) in &elements {
        if row < col && v.norm() > HOP_EPSILON * scale.max(1.0) {
            // element (row, col): phase θ of the hop col → row
            let theta = v.arg();
            adjacency[col].push((row, theta));
            adjacency[row].push((col, -theta));
            edges.push((row, col, theta));
        }
    }

    let mut chi = vec![f64::NAN; n];
    let mut tree_edges = 0;
    for root in 0..n {
        if !chi[root].is_nan() {
            continue;
        }
        chi[root] = 0.0;
        let mut queue = VecDeque::from([root]);
        while let Some(s) = queue.pop_front() {
            for &(d, theta) in &adjacency[s] {
                if chi[d].is_nan() {
                    // θ + χ_d − χ_s = 0
                    chi[d] = chi[s] - theta;
                    tree_edges += 1;
                    queue.push_back(d);
                }
            }
        }
    }

    let mut worst: f64 = 0.0;
    for &(row, col, theta) in &edges {
        let residual = (theta + chi[row] - chi[col]).rem_euclid(PI);
        worst = worst.max(residual.min(PI - residual));
    }
    let reducible = worst < GAUGE_TOLERANCE;
    GaugeReport {
        reducible,
        gauge: reducible.then(|| chi.iter().map(|c| c.rem_euclid(TAU)).collect()),
        worst_flux: worst,
        independent_cycles: edges.len() - tree_edges,
    }
}

/// Reference rule: reducible iff `Nφ ≡ 0 (mod π)` or the tube has two sites
/// around its circumference.
pub fn flux_rule_reducible(period: usize, flux_phase: f64) -> bool {
    period == 2 || crate::modulation::distance_to_multiple(period as f64 * flux_phase, PI) < GAUGE_TOLERANCE
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modulation::{build_amplitude_modulation, classify_symmetry};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn square(length: usize, period: usize, phi: f64) -> NanotubeLattice {
        let one = Complex64::new(1.0, 0.0);
        NanotubeLattice::with_hops(length, period, phi, &[(1, 0, one), (0, 1, one)]).unwrap()
    }

    #[test]
    fn onsite_examples() {
        assert_eq!(onsite_energy(0, 0, 0.0, 1.0, 5).unwrap(), 0.0);
        for m1 in -5..5 {
            for m2 in -3..8 {
                let a = onsite_energy(m1, m2, 0.37, 2.89, 5).unwrap();
                let b = onsite_energy(m1, m2 + 5, 0.37, 2.89, 5).unwrap();
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn onsite_pole_is_reported() {
        assert!(matches!(onsite_energy(0, 0, PI, 1.0, 3), Err(LatticeError::Resonance { .. })));
        assert!(onsite_energy(0, 0, PI - 1e-3, 1.0, 3).is_ok());
    }

    /// Kolmogorov distribution tail `Q(λ) = 2 Σ (−1)^{k−1} e^{−2k²λ²}`.
    fn kolmogorov_q(lambda: f64) -> f64 {
        let mut s = 0.0;
        for k in 1..200 {
            let k = k as f64;
            s += 2.0 * (-1f64).powf(k - 1.0) * (-2.0 * k * k * lambda * lambda).exp();
        }
        s.clamp(0.0, 1.0)
    }

    #[test]
    fn onsite_sequence_is_cauchy_distributed() {
        let mut eps: Vec<f64> = (0..10_000).map(|m| onsite_energy(m, 0, 0.0, 1.0, 1).unwrap()).collect();
        eps.sort_by(f64::total_cmp);
        let n = eps.len() as f64;
        let d = eps
            .iter()
            .enumerate()
            .map(|(i, &e)| {
                let f = 0.5 + e.atan() / PI;
                (f - i as f64 / n).abs().max((i as f64 + 1.0) / n - f)
            })
            .fold(0.0, f64::max);
        let lambda = (n.sqrt() + 0.12 + 0.11 / n.sqrt()) * d;
        assert!(kolmogorov_q(lambda) > 0.01, "D = {d}");
    }

    #[test]
    fn hopping_small_k_limit() {
        let (k, kbar) = (1e-3, 1.0);
        let t = hopping_coefficients(k, kbar, 3).unwrap();
        for s in [-1, 1] {
            assert_relative_eq!(t.get(s, 0), k / (4.0 * kbar), max_relative = 1e-5);
            for u in [-1, 1] {
                assert_relative_eq!(t.get(s, u), k / (8.0 * kbar), max_relative = 1e-5);
            }
        }
        for (r1, r2, w) in t.entries() {
            if r1.abs() != 1 || r2.abs() > 1 {
                assert!(w.abs() < 10.0 * k.powi(3), "({r1},{r2}) = {w}");
            }
        }
    }

    #[test]
    fn hopping_zero_strength() {
        let t = hopping_coefficients(0.0, 1.0, 2).unwrap();
        assert!(t.coefficients.iter().all(|&w| w.abs() < 1e-15));
        assert!(t.entries().is_empty());
    }

    #[test]
    fn hopping_pole_rejected() {
        assert!(matches!(hopping_coefficients(2.0, 1.0, 2), Err(LatticeError::KernelPole { .. })));
    }

    #[test]
    fn hopping_only_odd_longitudinal() {
        let t = hopping_coefficients(1.2, 1.0, 4).unwrap();
        for r2 in -4..=4 {
            for r1 in [-4, -2, 0, 2, 4] {
                assert!(t.get(r1, r2).abs() < 1e-12);
            }
        }
        assert!(t.truncation_error < 1e-3);
    }

    #[test]
    fn truncation_shrinks_with_range() {
        let a = hopping_coefficients(1.4, 1.0, 2).unwrap();
        let b = hopping_coefficients(1.4, 1.0, 6).unwrap();
        assert!(b.truncation_error < a.truncation_error);
    }

    proptest! {
        #[test]
        fn hopping_table_is_even(k in -1.5f64..1.5, range in 1usize..5) {
            let t = hopping_coefficients(k, 1.0, range).unwrap();
            let r = range as i64;
            for r1 in -r..=r {
                for r2 in -r..=r {
                    prop_assert!((t.get(r1, r2) - t.get(-r1, -r2)).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn flux_is_gauge_invariant(seed in any::<u64>(), n in 2usize..7, phi in -4.0f64..4.0) {
            let lattice = NanotubeLattice::from_rotor(4, n, 0.8, 1.0, 0.1, phi, 2).unwrap();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let chi: Vec<f64> = (0..lattice.sites()).map(|_| TAU * rng.random::<f64>()).collect();
            let gauged = lattice.clone().with_gauge(&chi).unwrap();
            let mut steps = vec![(1, 1), (-1, 1)].repeat(n / 2);
            if n % 2 == 1 {
                steps.push((1, 1));
                steps.push((-1, 0));
            }
            for cycle in [Loop::new((0, 0), steps), Loop::new((1, 2), vec![(1, 0), (-1, 1), (1, 0), (-1, -1)])] {
                let a = loop_flux(&lattice, &cycle).unwrap();
                let b = loop_flux(&gauged, &cycle).unwrap();
                let d = (a - b).rem_euclid(TAU);
                prop_assert!(d.min(TAU - d) < 1e-9);
            }
        }
    }

    #[test]
    fn transverse_loop_encloses_n_phi() {
        let phi = TAU / 7.0;
        let lattice = square(3, 5, phi);
        let around = Loop::new((1, 0), vec![(0, 1); 5]);
        let flux = loop_flux(&lattice, &around).unwrap();
        assert_relative_eq!(flux, (5.0 * phi).rem_euclid(TAU), epsilon = 1e-12);
        let back = loop_flux(&lattice, &around.reversed()).unwrap();
        assert_relative_eq!(back, (-5.0 * phi).rem_euclid(TAU), epsilon = 1e-12);
    }

    #[test]
    fn plaquette_is_flux_free() {
        let lattice = square(4, 5, 0.77);
        let plaquette = Loop::new((1, 2), vec![(1, 0), (0, 1), (-1, 0), (0, -1)]);
        let f = loop_flux(&lattice, &plaquette).unwrap();
        assert!(f.min(TAU - f) < 1e-12);
    }

    #[test]
    fn rotor_lattice_loops() {
        let phi = 0.3;
        let lattice = NanotubeLattice::from_rotor(4, 5, 1.0, 1.0, 0.1, phi, 2).unwrap();
        // five diagonal hops wind once around the tube; one longitudinal hop closes it
        let around = Loop::new((0, 0), vec![(1, 1), (-1, 1), (1, 1), (-1, 1), (1, 1), (-1, 0)]);
        assert_relative_eq!(loop_flux(&lattice, &around).unwrap(), 5.0 * phi, epsilon = 1e-12);
        let plaquette = Loop::new((0, 0), vec![(1, 0), (-1, 1), (1, 0), (-1, -1)]);
        let f = loop_flux(&lattice, &plaquette).unwrap();
        assert!(f.min(TAU - f) < 1e-12);
    }

    #[test]
    fn flux_is_additive() {
        let lattice = square(4, 6, 0.41);
        let a = Loop::new((0, 0), vec![(1, 0), (0, 1), (-1, 0), (0, -1)]);
        let b = Loop::new((1, 0), vec![(1, 0), (0, 1), (-1, 0), (0, -1)]);
        let joined = Loop::new((0, 0), vec![(1, 0), (1, 0), (0, 1), (-1, 0), (-1, 0), (0, -1)]);
        let sum = (loop_flux(&lattice, &a).unwrap() + loop_flux(&lattice, &b).unwrap()).rem_euclid(TAU);
        let d = (loop_flux(&lattice, &joined).unwrap() - sum).rem_euclid(TAU);
        assert!(d.min(TAU - d) < 1e-12);
        let wound = Loop::new((0, 0), vec![(0, 1); 6]);
        let twice = Loop::new((0, 0), vec![(0, 1); 12]);
        let d = (loop_flux(&lattice, &twice).unwrap() - 2.0 * loop_flux(&lattice, &wound).unwrap()).rem_euclid(TAU);
        assert!(d.min(TAU - d) < 1e-12);
    }

    #[test]
    fn loop_errors() {
        let lattice = square(3, 5, 0.2);
        assert!(matches!(loop_flux(&lattice, &Loop::new((0, 0), vec![(1, 0), (0, 1)])), Err(LatticeError::OpenPath { .. })));
        assert!(matches!(
            loop_flux(&lattice, &Loop::new((0, 0), vec![(1, 1), (-1, -1)])),
            Err(LatticeError::MissingHop { step: 0, .. })
        ));
        assert!(matches!(
            loop_flux(&lattice, &Loop::new((0, 0), vec![(-1, 0), (1, 0)])),
            Err(LatticeError::OffLattice { step: 0, .. })
        ));
    }

    #[test]
    fn operator_is_hermitian() {
        for (n, phi) in [(2, 0.4), (3, 1.1), (5, 0.3)] {
            let lattice = NanotubeLattice::from_rotor(5, n, 1.1, 1.0, 0.2, phi, 3).unwrap();
            let h = lattice.to_dense();
            for i in 0..h.len() {
                for j in 0..h.len() {
                    assert_eq!(h[i][j], h[j][i].conj(), "({i},{j})");
                }
            }
        }
    }

    #[test]
    fn gauge_examples() {
        let reducible = |n, phi| gauge_reducible(&NanotubeLattice::from_rotor(4, n, 1.0, 1.0, 0.1, phi, 2).unwrap());
        assert!(reducible(5, PI / 5.0).reducible);
        assert!(!reducible(5, 0.3).reducible);
        let one = Complex64::new(1.0, 0.0);
        for phi in [0.1, 0.7, 2.0, -1.3] {
            let single = NanotubeLattice::with_hops(4, 2, phi, &[(1, 0, one), (0, 1, one)]).unwrap();
            assert!(gauge_reducible(&single).reducible, "phi={phi}");
        }
    }

    #[test]
    fn returned_gauge_makes_hops_real() {
        let lattice = NanotubeLattice::from_rotor(5, 4, 1.0, 1.0, 0.1, PI / 4.0, 2).unwrap();
        let report = gauge_reducible(&lattice);
        assert!(report.reducible && report.independent_cycles > 0);
        let gauged = lattice.with_gauge(report.gauge.as_ref().unwrap()).unwrap();
        for v in gauged.matrix_elements().values() {
            assert!(v.im.abs() < 1e-9 * v.norm().max(1.0), "{v}");
        }
    }

    #[test]
    fn gauge_agrees_with_classifier() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        let mut disagreements = 0;
        for case in 0..200 {
            let n = 2 + case % 7;
            let phi = if case % 3 == 0 {
                PI * rng.random_range(-6..=6) as f64 / n as f64
            } else {
                rng.random_range(-PI..PI)
            };
            let lattice = NanotubeLattice::from_rotor(4, n, 1.0, 1.0, 0.1, phi, 2).unwrap();
            let reducible = gauge_reducible(&lattice).reducible;
            let seq = build_amplitude_modulation(3.0, n, phi).unwrap();
            let orthogonal = classify_symmetry(&seq).is_orthogonal();
            if reducible != orthogonal || reducible != flux_rule_reducible(n, phi) {
                disagreements += 1;
            }
        }
        assert_eq!(disagreements, 0);
    }

    #[test]
    fn triplet_dump_lists_every_site() {
        let lattice = NanotubeLattice::from_rotor(3, 3, 0.5, 1.0, 0.1, 0.2, 1).unwrap();
        let dump = lattice.to_triplets();
        let rows: Vec<&str> = dump.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        let diagonal = rows.iter().filter(|l| {
            let f: Vec<&str> = l.split(',').collect();
            f[0] == f[1]
        });
        assert_eq!(diagonal.count(), 9);
    }
}
