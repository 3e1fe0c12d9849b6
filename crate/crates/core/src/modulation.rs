//! Periodic driving sequences and their symmetry class.
//!
//! A [`ModulationSequence`] stores one period of kick amplitudes and spatial
//! phases. Kick number `t` (counted from 1 for the first kick) uses index
//! `t mod N`. With that convention the evolution over kicks `1..=n` is
//! PT-symmetric when kick `k` mirrors kick `n + 1 - k`, so a symmetry axis at
//! doubled time `2τ` produces a coherent backscattering peak at kick `2τ`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Substream};

/// Absolute tolerance for angle and amplitude comparisons.
pub const ANGLE_TOLERANCE: f64 = 1e-9;

/// Period of the combined amplitude/phase preset.
pub const EXPERIMENTAL_PERIOD: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModulationError {
    #[error("period {0} is too short: at least 2 kicks are needed for a transverse direction")]
    PeriodTooShort(usize),
    #[error("{0} must be finite")]
    NonFinite(&'static str),
    #[error("kick strength must be positive, got {0}")]
    NonPositiveStrength(f64),
    #[error("amplitude at index {index} is negative ({value})")]
    NegativeAmplitude { index: usize, value: f64 },
    #[error("amplitudes ({amplitudes}) and phases ({phases}) differ in length")]
    LengthMismatch { amplitudes: usize, phases: usize },
    #[error("empty sequence")]
    Empty,
    #[error("horizon {horizon} is shorter than the period {period}")]
    HorizonTooShort { horizon: usize, period: usize },
    #[error("sequence table line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// How a sequence was built. Carried as metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceFamily {
    /// `K[1 + cos(2πt/N + φ)]`, zero phases.
    Amplitude { strength: f64, phase: f64 },
    /// Period-10 combined amplitude and period-2 phase modulation.
    Experimental { strength: f64, control_phase: f64, phase_offset: f64 },
    /// Constant amplitude, i.i.d. uniform phases.
    RandomPhase { strength: f64, seed: u64, antisymmetric: bool },
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulationSequence {
    amplitudes: Vec<f64>,
    phases: Vec<f64>,
    control_phase: f64,
    family: SequenceFamily,
}

impl ModulationSequence {
    /// Validates lengths and amplitudes; phases are wrapped into `[0, 2π)`.
    pub fn new(
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
        control_phase: f64,
        family: SequenceFamily,
    ) -> Result<Self, ModulationError> {
        if amplitudes.len() != phases.len() {
            return Err(ModulationError::LengthMismatch { amplitudes: amplitudes.len(), phases: phases.len() });
        }
        if amplitudes.is_empty() {
            return Err(ModulationError::Empty);
        }
        for (index, &value) in amplitudes.iter().enumerate() {
            if !value.is_finite() {
                return Err(ModulationError::NonFinite("amplitude"));
            }
            if value < 0.0 {
                return Err(ModulationError::NegativeAmplitude { index, value });
            }
        }
        if phases.iter().any(|p| !p.is_finite()) {
            return Err(ModulationError::NonFinite("phase"));
        }
        if !control_phase.is_finite() {
            return Err(ModulationError::NonFinite("control phase"));
        }
        let phases = phases.into_iter().map(wrap_angle).collect();
        Ok(Self { amplitudes, phases, control_phase, family })
    }

    pub fn period(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[f64] {
        &self.amplitudes
    }

    pub fn phases(&self) -> &[f64] {
        &self.phases
    }

    pub fn control_phase(&self) -> f64 {
        self.control_phase
    }

    pub fn family(&self) -> &SequenceFamily {
        &self.family
    }

    /// Amplitude of kick `t` (index `t mod N`, negative `t` allowed).
    pub fn amplitude(&self, t: i64) -> f64 {
        self.amplitudes[self.index(t)]
    }

    /// Phase of kick `t` in `[0, 2π)`.
    pub fn phase(&self, t: i64) -> f64 {
        self.phases[self.index(t)]
    }

    fn index(&self, t: i64) -> usize {
        t.rem_euclid(self.period() as i64) as usize
    }

    pub fn max_amplitude(&self) -> f64 {
        self.amplitudes.iter().copied().fold(0.0, f64::max)
    }

    /// Same sequence with the time origin moved by `shift` kicks.
    pub fn rotated(&self, shift: i64) -> Self {
        let n = self.period() as i64;
        let amplitudes = (0..n).map(|t| self.amplitude(t + shift)).collect();
        let phases = (0..n).map(|t| self.phase(t + shift)).collect();
        Self { amplitudes, phases, control_phase: self.control_phase, family: SequenceFamily::Custom }
    }

    /// Plain-text table: one row per kick with index, amplitude and phase in radians.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# period={} control_phase_rad={:.17e}", self.period(), self.control_phase);
        out.push_str("# index amplitude phase_rad\n");
        for t in 0..self.period() {
            let _ = writeln!(out, "{}\t{:.17e}\t{:.17e}", t, self.amplitudes[t], self.phases[t]);
        }
        out
    }

    /// Parses [`to_table`](Self::to_table) output. The family is reset to `Custom`.
    pub fn from_table(text: &str) -> Result<Self, ModulationError> {
        let mut control_phase = 0.0;
        let mut rows: Vec<(usize, f64, f64)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                for token in comment.split_whitespace() {
                    if let Some(value) = token.strip_prefix("control_phase_rad=") {
                        control_phase = value.parse().map_err(|_| ModulationError::Parse {
                            line: line_no,
                            message: format!("bad control phase {value:?}"),
                        })?;
                    }
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() != 3 {
                return Err(ModulationError::Parse { line: line_no, message: format!("expected 3 columns, got {}", fields.len()) });
            }
            let parse_err = |what: &str| ModulationError::Parse { line: line_no, message: format!("bad {what}") };
            let index: usize = fields[0].parse().map_err(|_| parse_err("index"))?;
            let amplitude: f64 = fields[1].parse().map_err(|_| parse_err("amplitude"))?;
            let phase: f64 = fields[2].parse().map_err(|_| parse_err("phase"))?;
            rows.push((index, amplitude, phase));
        }
        rows.sort_by_key(|r| r.0);
        for (expected, row) in rows.iter().enumerate() {
            if row.0 != expected {
                return Err(ModulationError::Parse { line: 0, message: format!("missing kick index {expected}") });
            }
        }
        let (amplitudes, phases) = rows.into_iter().map(|(_, a, p)| (a, p)).unzip();
        Self::new(amplitudes, phases, control_phase, SequenceFamily::Custom)
    }
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(x: f64) -> f64 {
    let w = x.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

/// Distance of `x` from the nearest multiple of `modulus`.
pub fn distance_to_multiple(x: f64, modulus: f64) -> f64 {
    let r = x.rem_euclid(modulus);
    r.min(modulus - r)
}

fn check_finite(value: f64, what: &'static str) -> Result<(), ModulationError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModulationError::NonFinite(what))
    }
}

fn check_strength(k: f64) -> Result<(), ModulationError> {
    check_finite(k, "kick strength")?;
    if k <= 0.0 {
        return Err(ModulationError::NonPositiveStrength(k));
    }
    Ok(())
}

/// Period-N amplitude modulation `𝒦[t] = K[1 + cos(2πt/N + φ)]`, all phases zero.
pub fn build_amplitude_modulation(k: f64, period: usize, phi: f64) -> Result<ModulationSequence, ModulationError> {
    check_strength(k)?;
    check_finite(phi, "modulation phase")?;
    if period < 2 {
        return Err(ModulationError::PeriodTooShort(period));
    }
    let amplitudes = (0..period)
        .map(|t| k * (1.0 + (TAU * t as f64 / period as f64 + phi).cos()))
        .map(|v: f64| v.max(0.0))
        .collect();
    ModulationSequence::new(
        amplitudes,
        vec![0.0; period],
        phi,
        SequenceFamily::Amplitude { strength: k, phase: phi },
    )
}

/// The period-10 sequence combining a period-5 amplitude modulation (shifted
/// by `φ̃` on odd kicks) with the period-2 phase pattern `a(t) = ∓a`.
pub fn build_experimental_sequence(k: f64, control_phase: f64, a: f64) -> Result<ModulationSequence, ModulationError> {
    check_strength(k)?;
    check_finite(control_phase, "control phase")?;
    check_finite(a, "phase offset")?;
    let mut amplitudes = Vec::with_capacity(EXPERIMENTAL_PERIOD);
    let mut phases = Vec::with_capacity(EXPERIMENTAL_PERIOD);
    for t in 0..EXPERIMENTAL_PERIOD {
        let base = TAU * (t as f64 - 1.0) / 5.0;
        if t % 2 == 0 {
            amplitudes.push(k * (1.0 + base.cos()));
            phases.push(-a);
        } else {
            amplitudes.push(k * (1.0 + (base + control_phase).cos()));
            phases.push(a);
        }
    }
    let amplitudes = amplitudes.into_iter().map(|v: f64| v.max(0.0)).collect();
    ModulationSequence::new(
        amplitudes,
        phases,
        control_phase,
        SequenceFamily::Experimental { strength: k, control_phase, phase_offset: a },
    )
}

/// Constant amplitude `K` with i.i.d. uniform phases from the disorder stream
/// of `seed`. With `antisymmetric`, phases are mirrored as `a(1 - t) = -a(t)`,
/// which places a PT axis at `τ = 0` and forces the orthogonal class.
pub fn build_random_phase_sequence(
    k: f64,
    period: usize,
    seed: u64,
    antisymmetric: bool,
) -> Result<ModulationSequence, ModulationError> {
    check_strength(k)?;
    if period < 2 {
        return Err(ModulationError::PeriodTooShort(period));
    }
    let mut rng = rng::stream(seed, Substream::Disorder, 0, 0);
    let mut phases: Vec<f64> = (0..period).map(|_| rng.random::<f64>() * TAU).collect();
    if antisymmetric {
        let n = period as i64;
        for t in 0..n {
            let partner = (1 - t).rem_euclid(n);
            if partner == t {
                // fixed point of the mirror: only 0 and π are their own negatives
                phases[t as usize] = if rng.random::<bool>() { PI } else { 0.0 };
            } else if partner > t {
                phases[partner as usize] = wrap_angle(-phases[t as usize]);
            }
        }
    }
    ModulationSequence::new(
        vec![k; period],
        phases,
        0.0,
        SequenceFamily::RandomPhase { strength: k, seed, antisymmetric },
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymmetryTag {
    Orthogonal,
    Unitary,
}

impl SymmetryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            SymmetryTag::Orthogonal => "orthogonal",
            SymmetryTag::Unitary => "unitary",
        }
    }
}

impl std::fmt::Display for SymmetryTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SymmetryTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "orthogonal" => Ok(SymmetryTag::Orthogonal),
            "unitary" => Ok(SymmetryTag::Unitary),
            other => Err(format!("unknown symmetry class {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryClass {
    pub tag: SymmetryTag,
    /// Gauge flux `Nφ mod 2π`, reported for the amplitude-modulation family.
    pub flux: Option<f64>,
    /// Symmetry axes as doubled times `2τ ∈ [0, 2N)`; kick `t` sits at `t - 1/2`.
    pub doubled_axes: Vec<usize>,
}

impl SymmetryClass {
    pub fn is_orthogonal(&self) -> bool {
        self.tag == SymmetryTag::Orthogonal
    }

    /// Axis times τ.
    pub fn axes(&self) -> Vec<f64> {
        self.doubled_axes.iter().map(|&d| d as f64 / 2.0).collect()
    }
}

fn amplitudes_match(x: f64, y: f64, scale: f64) -> bool {
    (x - y).abs() <= ANGLE_TOLERANCE * scale.max(1.0)
}

/// True if kick `t` mirrors kick `mirror_sum - t` for every `t`.
fn mirror_holds(seq: &ModulationSequence, mirror_sum: i64) -> bool {
    let scale = seq.max_amplitude();
    (0..seq.period() as i64).all(|t| {
        let s = mirror_sum - t;
        amplitudes_match(seq.amplitude(t), seq.amplitude(s), scale)
            && distance_to_multiple(seq.phase(t) + seq.phase(s), TAU) <= ANGLE_TOLERANCE
    })
}

/// Searches the 2N half-integer axes τ for a PT symmetry: amplitudes
/// symmetric and phases antisymmetric (mod 2π) about τ.
pub fn classify_symmetry(seq: &ModulationSequence) -> SymmetryClass {
    let n = seq.period();
    let doubled_axes: Vec<usize> = (0..2 * n).filter(|&d| mirror_holds(seq, d as i64 + 1)).collect();
    let tag = if doubled_axes.is_empty() { SymmetryTag::Unitary } else { SymmetryTag::Orthogonal };
    let flux = match seq.family() {
        SequenceFamily::Amplitude { phase, .. } => Some(wrap_angle(n as f64 * phase)),
        _ => None,
    };
    SymmetryClass { tag, flux, doubled_axes }
}

/// Orthogonal-class rule for the amplitude family: `Nφ ≡ 0 (mod π)`, or `N = 2`.
pub fn flux_rule_orthogonal(period: usize, phi: f64) -> bool {
    period == 2 || distance_to_multiple(period as f64 * phi, PI) <= ANGLE_TOLERANCE
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PeakTimes {
    pub cbs: Vec<usize>,
    pub cfs: Vec<usize>,
}

impl PeakTimes {
    /// CBS at `t ≡ cbs_offset (mod period)`, CFS at multiples of `period`, `1 ≤ t ≤ horizon`.
    pub fn periodic(cbs_offset: Option<usize>, period: usize, horizon: usize) -> Self {
        let cfs = (1..=horizon).filter(|t| t % period == 0).collect();
        let cbs = match cbs_offset {
            Some(offset) => (1..=horizon).filter(|t| t % period == offset % period).collect(),
            None => Vec::new(),
        };
        Self { cbs, cfs }
    }

    /// Whether `t` is any predicted peak.
    pub fn contains(&self, t: usize) -> bool {
        self.cbs.contains(&t) || self.cfs.contains(&t)
    }

    pub fn first_cbs(&self) -> Option<usize> {
        self.cbs.first().copied()
    }
}

/// CFS at multiples of N; CBS, in the orthogonal class only, at kicks
/// congruent to `2τ (mod N)` for each symmetry axis τ.
pub fn predict_peak_times(seq: &ModulationSequence, horizon: usize) -> Result<PeakTimes, ModulationError> {
    let n = seq.period();
    if horizon < n {
        return Err(ModulationError::HorizonTooShort { horizon, period: n });
    }
    let class = classify_symmetry(seq);
    let residues: Vec<usize> = class.doubled_axes.iter().map(|d| d % n).collect();
    let cbs = (1..=horizon).filter(|t| residues.contains(&(t % n))).collect();
    let cfs = (1..=horizon).filter(|t| t % n == 0).collect();
    Ok(PeakTimes { cbs, cfs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    const A_EXP: f64 = 0.21 * TAU;

    #[test]
    fn amplitude_modulation_values() {
        let s = build_amplitude_modulation(1.0, 5, 0.0).unwrap();
        assert_abs_diff_eq!(s.amplitude(0), 2.0, epsilon = 1e-15);
        for t in 0..5 {
            assert_abs_diff_eq!(s.amplitude(t), 1.0 + (TAU * t as f64 / 5.0).cos(), epsilon = 1e-15);
            assert_eq!(s.phase(t), 0.0);
        }
        let two = build_amplitude_modulation(1.0, 2, 0.0).unwrap();
        assert_abs_diff_eq!(two.amplitude(0), 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(two.amplitude(1), 0.0, epsilon = 1e-15);
        let shifted = build_amplitude_modulation(1.0, 5, PI).unwrap();
        assert_abs_diff_eq!(shifted.amplitude(0), 0.0, epsilon = 1e-15);
        assert_eq!(shifted.control_phase(), PI);
    }

    #[test]
    fn amplitude_modulation_rejects_bad_input() {
        assert_eq!(build_amplitude_modulation(1.0, 1, 0.0), Err(ModulationError::PeriodTooShort(1)));
        assert!(build_amplitude_modulation(f64::NAN, 5, 0.0).is_err());
        assert!(build_amplitude_modulation(1.0, 5, f64::INFINITY).is_err());
        assert!(build_amplitude_modulation(0.0, 5, 0.0).is_err());
    }

    #[test]
    fn evaluation_wraps_period() {
        let s = build_amplitude_modulation(1.3, 5, 0.4).unwrap();
        assert_eq!(s.amplitude(7), s.amplitude(2));
        assert_eq!(s.amplitude(-3), s.amplitude(2));
    }

    #[test]
    fn experimental_sequence_layout() {
        let s = build_experimental_sequence(1.0, 0.0, A_EXP).unwrap();
        assert_eq!(s.period(), 10);
        for t in 0..10i64 {
            let base = TAU * (t as f64 - 1.0) / 5.0;
            assert_abs_diff_eq!(s.amplitude(t), 1.0 + base.cos(), epsilon = 1e-14);
            let expected = if t % 2 == 0 { -A_EXP } else { A_EXP };
            assert!(distance_to_multiple(s.phase(t) - expected, TAU) < 1e-12);
        }
        let flat = build_experimental_sequence(1.0, 0.0, 0.0).unwrap();
        assert_eq!(flat.period(), 10);
        assert!(flat.phases().iter().all(|&p| p == 0.0));
    }

    #[test]
    fn experimental_classes() {
        let orth = build_experimental_sequence(1.0, 0.0, A_EXP).unwrap();
        assert!(classify_symmetry(&orth).is_orthogonal());
        let broken = build_experimental_sequence(1.0, -3.0 * PI / 5.0, A_EXP).unwrap();
        assert_eq!(classify_symmetry(&broken).tag, SymmetryTag::Unitary);
    }

    #[test]
    fn amplitude_family_classes() {
        let s = build_amplitude_modulation(1.0, 5, 0.0).unwrap();
        assert!(classify_symmetry(&s).is_orthogonal());
        let s = build_amplitude_modulation(1.0, 5, PI / 5.0).unwrap();
        let class = classify_symmetry(&s);
        assert!(class.is_orthogonal());
        assert_abs_diff_eq!(class.flux.unwrap(), PI, epsilon = 1e-12);
        let s = build_amplitude_modulation(1.0, 5, 0.3).unwrap();
        assert_eq!(classify_symmetry(&s).tag, SymmetryTag::Unitary);
        for phi in [0.1, 0.77, 1.3, 2.9] {
            let s = build_amplitude_modulation(2.0, 2, phi).unwrap();
            assert!(classify_symmetry(&s).is_orthogonal(), "N=2, phi={phi}");
        }
    }

    #[test]
    fn random_sequences() {
        let a = build_random_phase_sequence(4.0, 3, 11, true).unwrap();
        assert!(classify_symmetry(&a).is_orthogonal());
        for t in 0..3 {
            assert!(distance_to_multiple(a.phase(t) + a.phase(1 - t), TAU) < 1e-12);
        }
        let b = build_random_phase_sequence(4.0, 3, 11, false).unwrap();
        assert_eq!(classify_symmetry(&b).tag, SymmetryTag::Unitary);
        assert_eq!(b, build_random_phase_sequence(4.0, 3, 11, false).unwrap());
        assert!(b.amplitudes().iter().all(|&k| k == 4.0));
    }

    #[test]
    fn unsymmetrized_random_is_unitary_for_100_seeds() {
        for n in 3..=6 {
            for seed in 0..100 {
                let s = build_random_phase_sequence(4.0, n, seed, false).unwrap();
                assert_eq!(classify_symmetry(&s).tag, SymmetryTag::Unitary, "N={n} seed={seed}");
                let s = build_random_phase_sequence(4.0, n, seed, true).unwrap();
                assert!(classify_symmetry(&s).is_orthogonal(), "N={n} seed={seed}");
            }
        }
    }

    #[test]
    fn experimental_peak_table() {
        let expected = [6, 10, 4, 8, 2];
        for (j, &first) in expected.iter().enumerate() {
            let s = build_experimental_sequence(1.0, TAU * j as f64 / 5.0, A_EXP).unwrap();
            let peaks = predict_peak_times(&s, 100).unwrap();
            assert_eq!(peaks.first_cbs(), Some(first), "phi~ = 2π·{j}/5");
            assert!(peaks.cbs.iter().all(|t| t % 2 == 0));
            assert_eq!(peaks.cfs, (1..=10).map(|k| 10 * k).collect::<Vec<_>>());
        }
        let s = build_experimental_sequence(1.0, 0.0, A_EXP).unwrap();
        assert_eq!(predict_peak_times(&s, 30).unwrap().cbs, vec![6, 16, 26]);
        let s = build_experimental_sequence(1.0, -2.0 * PI / 5.0, A_EXP).unwrap();
        assert!(predict_peak_times(&s, 30).unwrap().cbs.iter().all(|t| t % 10 == 2));
        let s = build_experimental_sequence(1.0, -3.0 * PI / 5.0, A_EXP).unwrap();
        let peaks = predict_peak_times(&s, 30).unwrap();
        assert!(peaks.cbs.is_empty());
        assert_eq!(peaks.cfs, vec![10, 20, 30]);
    }

    #[test]
    fn horizon_must_cover_period() {
        let s = build_experimental_sequence(1.0, 0.0, A_EXP).unwrap();
        assert!(matches!(predict_peak_times(&s, 9), Err(ModulationError::HorizonTooShort { .. })));
    }

    #[test]
    fn table_round_trip() {
        let s = build_experimental_sequence(2.5, -0.7, A_EXP).unwrap();
        let back = ModulationSequence::from_table(&s.to_table()).unwrap();
        assert_eq!(back.amplitudes(), s.amplitudes());
        assert_eq!(back.phases(), s.phases());
        assert_eq!(back.control_phase(), s.control_phase());
        assert!(ModulationSequence::from_table("0 1.0\n").is_err());
    }

    #[test]
    fn constructor_invariants() {
        assert!(matches!(
            ModulationSequence::new(vec![1.0, 2.0], vec![0.0], 0.0, SequenceFamily::Custom),
            Err(ModulationError::LengthMismatch { .. })
        ));
        assert!(matches!(
            ModulationSequence::new(vec![1.0, -2.0], vec![0.0, 0.0], 0.0, SequenceFamily::Custom),
            Err(ModulationError::NegativeAmplitude { index: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn classifier_matches_flux_rule(n in 2usize..12, numerator in -40i32..40, generic in 0.0f64..1.0, use_rational in any::<bool>()) {
            let phi = if use_rational {
                numerator as f64 * PI / (2 * n) as f64
            } else {
                generic * TAU
            };
            let s = build_amplitude_modulation(1.7, n, phi).unwrap();
            prop_assert_eq!(classify_symmetry(&s).is_orthogonal(), flux_rule_orthogonal(n, phi));
        }

        #[test]
        fn classifier_invariant_under_rotation(seed in 0u64..500, n in 2usize..9, shift in -20i64..20, anti in any::<bool>()) {
            let s = build_random_phase_sequence(3.0, n, seed, anti).unwrap();
            prop_assert_eq!(classify_symmetry(&s).tag, classify_symmetry(&s.rotated(shift)).tag);
            let e = build_experimental_sequence(1.0, (seed % 5) as f64 * TAU / 5.0 + if anti { 0.0 } else { 0.3 }, A_EXP).unwrap();
            prop_assert_eq!(classify_symmetry(&e).tag, classify_symmetry(&e.rotated(shift)).tag);
        }
    }
}
