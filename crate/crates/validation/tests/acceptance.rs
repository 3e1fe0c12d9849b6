use rotor_validation as checks;

fn main() {
    let mut verdicts = Vec::new();
    let mut report = |v: checks::Verdict| {
        println!("{v}");
        verdicts.push(v.pass);
    };

    report(checks::peak_table());

    let runs = checks::contrast_runs();
    let mut drift = runs.orthogonal.max_norm_drift.max(runs.unitary.max_norm_drift);
    report(checks::ideal_cbs(&runs));
    let (growth, t_loc) = checks::cfs_growth(&runs);
    report(growth);
    report(checks::twinning(&runs, t_loc));

    let (scaling, d) = checks::scaling();
    drift = drift.max(d);
    report(scaling);

    let (decoherence, d) = checks::decoherence(&runs);
    drift = drift.max(d);
    report(decoherence);

    report(checks::invariants(drift));
    report(checks::classical_oracle());

    let failed = verdicts.iter().filter(|p| !**p).count();
    println!("acceptance: {} of {} criteria pass", verdicts.len() - failed, verdicts.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
