//! The experiments behind each preset, from sequence to written tables.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use kicked_rotor::engine::{
    run_ensemble, EnsembleResult, EnsembleSpec, HistogramSpec, LatticeSpec, SequenceSource,
};
use kicked_rotor::lattice_map::{gauge_reducible, loop_flux, Loop, NanotubeLattice};
use kicked_rotor::modulation::{
    build_amplitude_modulation, build_experimental_sequence, classify_symmetry, flux_rule_orthogonal,
    predict_peak_times, ModulationSequence, PeakTimes, SymmetryTag,
};
use kicked_rotor::observables::{
    contrasts_from_series, estimate_beta_of_g, estimate_d0, extract_contrasts, fit_cbs_decay, fit_cfs_contrast,
    CfsFitMode, ContrastSeries, ObservablesError,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{ExperimentConfig, Preset, SequenceKind};
use crate::error::CliError;
use crate::manifest::{Manifest, RunDir};

/// Occupied fraction of the lattice above which spreading may have wrapped.
pub const ALIASING_LIMIT: f64 = 0.25;

pub fn run_preset(config: &ExperimentConfig, command: &str, workers: Option<usize>) -> Result<Manifest, CliError> {
    let mut out = RunDir::create(&config.output_dir)?;
    match config.preset {
        Preset::Pi0Trace | Preset::Custom => trace(config, &mut out, workers, false)?,
        Preset::ContrastDynamics => trace(config, &mut out, workers, true)?,
        Preset::ContrastSweep => sweep(config, &mut out, workers)?,
        Preset::BetaG => beta_g(config, &mut out, workers)?,
        Preset::MapCheck => map_check(config, &mut out)?,
    }
    let bin_width = (config.preset != Preset::MapCheck).then(|| config.kbar / config.pi0_bins_per_site as f64);
    out.finish(command, Some(config), bin_width, None)
}

fn lattice(config: &ExperimentConfig) -> Result<LatticeSpec, CliError> {
    Ok(LatticeSpec::new(config.lattice_sites, config.kbar)?)
}

fn ensemble_spec(config: &ExperimentConfig) -> EnsembleSpec {
    let histogram = (config.histogram_stride_kicks > 0).then(|| HistogramSpec {
        subdivisions: config.pi0_bins_per_site,
        half_width_bins: Some(config.lattice_sites / 4 * config.pi0_bins_per_site),
        stride: config.histogram_stride_kicks,
    });
    EnsembleSpec {
        n_disorder: config.n_disorder,
        n_beta: config.n_beta,
        beta_sigma: config.beta_sigma_zone,
        beta_sampling: config.beta_sampling,
        decoherence_rate: config.decoherence_per_kick,
        seed: config.seed,
        horizon: config.horizon_kicks,
        pi0_subdivisions: config.pi0_bins_per_site,
        histogram,
        batches: config.batches,
        random_site_phases: config.random_site_phases,
    }
}

fn fixed_sequence(config: &ExperimentConfig, control_phase: f64) -> Result<ModulationSequence, CliError> {
    Ok(match config.sequence {
        SequenceKind::Experimental => {
            build_experimental_sequence(config.kick_strength, control_phase, config.phase_offset_rad)?
        }
        SequenceKind::Amplitude => build_amplitude_modulation(config.kick_strength, config.period_kicks, control_phase)?,
        SequenceKind::RandomPhase | SequenceKind::Annealed => {
            unreachable!("random sequences are built per realization")
        }
    })
}

fn source(config: &ExperimentConfig) -> Result<SequenceSource, CliError> {
    Ok(match config.sequence {
        SequenceKind::Experimental | SequenceKind::Amplitude => {
            SequenceSource::fixed(fixed_sequence(config, config.control_phase_rad)?)
        }
        SequenceKind::RandomPhase => SequenceSource::RandomPhase {
            strength: config.kick_strength,
            period: config.period_kicks,
            antisymmetric: config.antisymmetric,
        },
        SequenceKind::Annealed => SequenceSource::Annealed { strength: config.kick_strength },
    })
}

fn run(config: &ExperimentConfig, source: &SequenceSource, workers: Option<usize>) -> Result<EnsembleResult, CliError> {
    let spec = ensemble_spec(config);
    log::info!(
        "{} trajectories, {} kicks, {} sites",
        spec.trajectories(),
        spec.horizon,
        config.lattice_sites
    );
    let result = run_ensemble(source, &lattice(config)?, &spec, workers)?;
    if result.max_occupied_fraction >= ALIASING_LIMIT {
        log::warn!(
            "occupied lattice fraction reached {:.3}; increase lattice_sites to avoid wrap-around",
            result.max_occupied_fraction
        );
    }
    Ok(result)
}

#[derive(Serialize)]
struct EnsembleMeta<'a> {
    version: &'static str,
    lattice: &'a LatticeSpec,
    spec: &'a EnsembleSpec,
    source: &'a SequenceSource,
    trajectories: usize,
    max_norm_drift: f64,
    max_occupied_fraction: f64,
    decoherence_events: u64,
}

fn meta(result: &EnsembleResult) -> EnsembleMeta<'_> {
    EnsembleMeta {
        version: env!("CARGO_PKG_VERSION"),
        lattice: &result.lattice,
        spec: &result.spec,
        source: &result.source,
        trajectories: result.spec.trajectories(),
        max_norm_drift: result.max_norm_drift,
        max_occupied_fraction: result.max_occupied_fraction,
        decoherence_events: result.decoherence_events,
    }
}

fn outcome<T: Serialize>(r: Result<T, ObservablesError>) -> Value {
    match r {
        Ok(v) => json!({ "ok": v }),
        Err(e) => json!({ "error": e.to_string() }),
    }
}

fn peaks_csv(peaks: &PeakTimes) -> String {
    let mut out = String::from("t,kind\n");
    let mut rows: Vec<(usize, &str)> =
        peaks.cbs.iter().map(|&t| (t, "cbs")).chain(peaks.cfs.iter().map(|&t| (t, "cfs"))).collect();
    rows.sort();
    for (t, kind) in rows {
        let _ = writeln!(out, "{t},{kind}");
    }
    out
}

/// Π₀ trace with predicted peaks and contrasts; with `fits`, the CBS decay
/// and CFS growth fits as well.
fn trace(config: &ExperimentConfig, out: &mut RunDir, workers: Option<usize>, fits: bool) -> Result<(), CliError> {
    let source = source(config)?;
    let result = run(config, &source, workers)?;
    out.write("series.csv", &result.series_csv())?;
    if result.histogram.is_some() {
        out.write("histogram.csv", &result.histogram_csv())?;
    }
    out.write_json("ensemble.json", &meta(&result))?;

    // realization 0 stands in for the ensemble: the class is fixed by construction
    let reference = source.realization(config.seed, 0)?;
    let mut summary = json!({
        "max_norm_drift": result.max_norm_drift,
        "max_occupied_fraction": result.max_occupied_fraction,
        "aliasing_ok": result.max_occupied_fraction < ALIASING_LIMIT,
        "decoherence_events": result.decoherence_events,
    });
    let Some(sequence) = reference else {
        out.write_json("summary.json", &summary)?;
        return Ok(());
    };
    out.write("sequence.txt", &sequence.to_table())?;
    let class = classify_symmetry(&sequence);
    let peaks = predict_peak_times(&sequence, config.horizon_kicks)?;
    out.write("peaks.csv", &peaks_csv(&peaks))?;
    summary["class"] = json!(class.tag);
    summary["symmetry_axes"] = json!(class.axes());
    summary["flux_rad"] = json!(class.flux);
    summary["first_cbs"] = json!(peaks.first_cbs());

    let contrasts = extract_contrasts(&result, &peaks);
    if let Ok(series) = &contrasts {
        out.write("contrasts.csv", &series.to_csv())?;
        summary["skipped_peaks"] = json!(series.skipped);
        summary["first_cbs_contrast"] = json!(peaks.first_cbs().and_then(|t| series.cbs_at(t)).map(|p| p.contrast));
    }
    if fits {
        let series = contrasts?;
        out.write_json("fits.json", &contrast_fits(&series))?;
    } else if let Err(e) = contrasts {
        log::warn!("no contrasts: {e}");
        summary["contrast_error"] = json!(e.to_string());
    }
    out.write_json("summary.json", &summary)
}

/// CBS decay, free CFS fit, and the CFS fit sharing the CBS amplitude and
/// decoherence time when the CBS fit exists.
pub fn contrast_fits(series: &ContrastSeries) -> Value {
    let cbs = (!series.cbs.is_empty()).then(|| fit_cbs_decay(series));
    let free = fit_cfs_contrast(series, CfsFitMode::Free);
    let shared = match &cbs {
        Some(Ok(c)) => Some(fit_cfs_contrast(series, CfsFitMode::Shared { c0: c.c0, t_dec: c.t_dec })),
        _ => None,
    };
    json!({
        "cbs_decay": cbs.map(outcome),
        "cfs_free": outcome(free),
        "cfs_shared": shared.map(outcome),
    })
}

/// Index of the element of `times` nearest to `target`, earlier on ties.
fn nearest(times: &[usize], target: usize) -> Option<usize> {
    times.iter().copied().min_by_key(|&t| (t.abs_diff(target), t))
}

/// Contrasts against the control phase φ̃ at a fixed time. Away from the
/// symmetric points, the CBS contrast is read at the kick where the nearest
/// symmetric sequence would put its peak.
fn sweep(config: &ExperimentConfig, out: &mut RunDir, workers: Option<usize>) -> Result<(), CliError> {
    let mut table = String::from("phi_rad,class,cbs_time,cbs_contrast,cbs_stderr,cfs_time,cfs_contrast,cfs_stderr\n");
    let mut series_csv = String::from("phi_rad,t,pi0,p2\n");
    for i in 0..config.sweep_points {
        let phi = -PI + TAU * i as f64 / config.sweep_points as f64;
        let sequence = fixed_sequence(config, phi)?;
        let class = classify_symmetry(&sequence).tag;
        let symmetric = fixed_sequence(config, ExperimentConfig::nearest_symmetric_phase(phi))?;
        let peaks = predict_peak_times(&symmetric, config.horizon_kicks)?;
        log::info!("control phase {phi:.4} rad ({class})");
        let result = run(config, &SequenceSource::fixed(sequence), workers)?;
        for (t, (pi0, p2)) in result.pi0.iter().zip(&result.p2).enumerate() {
            let _ = writeln!(series_csv, "{phi:.10},{t},{pi0:.12e},{p2:.12e}");
        }
        let contrasts = contrasts_from_series(&result.pi0, &result.pi0_batches, &peaks)?;
        let measured = |points: &[kicked_rotor::observables::ContrastPoint]| {
            let times: Vec<usize> = points.iter().map(|p| p.time).collect();
            nearest(&times, config.sweep_time_kicks).and_then(|t| points.iter().find(|p| p.time == t)).copied()
        };
        let (cbs, cfs) = (measured(&contrasts.cbs), measured(&contrasts.cfs));
        let field = |p: Option<kicked_rotor::observables::ContrastPoint>| match p {
            Some(p) => format!("{},{:.10e},{:.10e}", p.time, p.contrast, p.stderr.unwrap_or(f64::NAN)),
            None => ",,".to_string(),
        };
        let _ = writeln!(table, "{phi:.10},{class},{},{}", field(cbs), field(cfs));
    }
    out.write("sweep.csv", &table)?;
    out.write("series.csv", &series_csv)
}

/// Run label used in β(g) tables.
pub fn scaling_label(k: f64, n: usize, class: SymmetryTag) -> String {
    format!("K{k}_N{n}_{class}")
}

fn beta_g(config: &ExperimentConfig, out: &mut RunDir, workers: Option<usize>) -> Result<(), CliError> {
    let source = source(config)?;
    let first = source.realization(config.seed, 0)?.expect("random-phase sources have realizations");
    let class = classify_symmetry(&first).tag;
    let result = run(config, &source, workers)?;
    out.write("series.csv", &result.series_csv())?;
    out.write_json("ensemble.json", &meta(&result))?;

    let n = config.period_kicks;
    let mut curve = estimate_beta_of_g(&result.p2, n, config.kbar, config.beta_window_samples)?;
    curve.class = Some(class);
    curve.strength = Some(config.kick_strength);
    let label = scaling_label(config.kick_strength, n, class);
    out.write("beta_g.csv", &curve.to_csv(&label))?;
    let transient = (5 * n).min(config.horizon_kicks);
    let d0 = estimate_d0(&result.p2, 1..=transient);
    out.write_json(
        "summary.json",
        &json!({
            "label": label,
            "class": class,
            "points": curve.points.len(),
            "inverse_g_range": curve.inverse_g_range(),
            "diffusion": outcome(d0),
            "max_norm_drift": result.max_norm_drift,
            "max_occupied_fraction": result.max_occupied_fraction,
            "aliasing_ok": result.max_occupied_fraction < ALIASING_LIMIT,
        }),
    )
}

/// Loop winding once around the tube through diagonal hops, closed by one
/// longitudinal hop when the circumference is odd.
pub fn transverse_loop(period: usize) -> Loop {
    let mut steps: Vec<(i64, i64)> = (0..period).map(|i| if i % 2 == 0 { (1, 1) } else { (-1, 1) }).collect();
    if period % 2 == 1 {
        steps.push((-1, 0));
    }
    Loop::new((0, 0), steps)
}

#[derive(Debug, Clone, Serialize)]
pub struct MapReport {
    pub period: usize,
    pub phi_rad: f64,
    pub class: SymmetryTag,
    pub flux_rule_orthogonal: bool,
    pub gauge_reducible: bool,
    pub transverse_flux_rad: f64,
    pub worst_cycle_flux_rad: f64,
    pub independent_cycles: usize,
    pub verdict: String,
}

pub fn map_report(config: &ExperimentConfig) -> Result<(MapReport, NanotubeLattice), CliError> {
    let (n, phi) = (config.period_kicks, config.control_phase_rad);
    let sequence = build_amplitude_modulation(config.kick_strength, n, phi)?;
    let class = classify_symmetry(&sequence).tag;
    let lattice = NanotubeLattice::from_rotor(
        config.map_length_sites,
        n,
        config.kick_strength,
        config.kbar,
        config.quasi_energy_rad,
        phi,
        config.hopping_range_sites,
    )?;
    let gauge = gauge_reducible(&lattice);
    let transverse = loop_flux(&lattice, &transverse_loop(n))?;
    let verdict = format!(
        "{class} / {}",
        if gauge.reducible { "gauge-reducible" } else { "not gauge-reducible" }
    );
    let report = MapReport {
        period: n,
        phi_rad: phi,
        class,
        flux_rule_orthogonal: flux_rule_orthogonal(n, phi),
        gauge_reducible: gauge.reducible,
        transverse_flux_rad: transverse,
        worst_cycle_flux_rad: gauge.worst_flux,
        independent_cycles: gauge.independent_cycles,
        verdict,
    };
    let orthogonal = class == SymmetryTag::Orthogonal;
    if orthogonal != gauge.reducible || orthogonal != report.flux_rule_orthogonal {
        return Err(CliError::Consistency(format!(
            "N={n}, phi={phi}: classifier says {class}, flux rule says {}, gauge search says {}",
            report.flux_rule_orthogonal, gauge.reducible
        )));
    }
    Ok((report, lattice))
}

fn map_check(config: &ExperimentConfig, out: &mut RunDir) -> Result<(), CliError> {
    let (report, lattice) = map_report(config)?;
    println!("{}", report.verdict);
    out.write("report.txt", &format!("{}\n", report.verdict))?;
    out.write_json("report.json", &report)?;
    out.write("lattice.csv", &lattice.to_triplets())?;
    out.write("sequence.txt", &fixed_sequence(config, config.control_phase_rad)?.to_table())
}
