// dev-only probe for calibrating the synthetic PA defaults; not shipped API
use dpdsim_core::experiment::{run_power_sweep, Arm, ArmSelection, ExperimentConfig};
use dpdsim_core::pa::PaParams;

fn summarize(tag: &str, cfg: &ExperimentConfig) {
    let t0 = std::time::Instant::now();
    let report = run_power_sweep(cfg, ArmSelection::Both).unwrap();
    println!("== {tag} ({:.1}s)", t0.elapsed().as_secs_f64());
    let mut raw_means = Vec::new();
    let mut crit7_ok = true;
    for &db in &cfg.experiment.power_levels_db {
        let mut per_arm = [0.0f64; 2];
        for (i, arm) in [Arm::Raw, Arm::Dpd].iter().enumerate() {
            let rows: Vec<_> = report
                .rows
                .iter()
                .filter(|r| r.power_db == db && r.arm == *arm)
                .collect();
            let infid = rows.iter().map(|r| r.mean_infidelity).sum::<f64>() / rows.len() as f64;
            let nmse = rows.iter().map(|r| r.nmse_db).sum::<f64>() / rows.len() as f64;
            let leak = rows.iter().map(|r| r.leakage_db).sum::<f64>() / rows.len() as f64;
            per_arm[i] = infid;
            println!(
                "  {db:>6} dB {arm}: infid {infid:.3e}  nmse {nmse:>7.2} dB  leak {leak:>7.2} dB"
            );
        }
        raw_means.push(per_arm[0]);
        if per_arm[1] > per_arm[0] {
            crit7_ok = false;
            println!("       ^^ dpd ABOVE raw by {:.2e}", per_arm[1] - per_arm[0]);
        }
    }
    let ratio = raw_means.iter().cloned().fold(0.0, f64::max)
        / raw_means.iter().cloned().fold(f64::INFINITY, f64::min);
    let top = *cfg.experiment.power_levels_db.last().unwrap();
    let at = |arm: Arm, f: &dyn Fn(&dpdsim_core::experiment::SweepRow) -> f64| {
        let rows: Vec<_> = report
            .rows
            .iter()
            .filter(|r| r.power_db == top && r.arm == arm)
            .collect();
        rows.iter().map(|r| f(r)).sum::<f64>() / rows.len() as f64
    };
    println!(
        "  crit6: nmse gain {:.1} dB, leak drop {:.1} dB | crit7 {} | crit8 ratio {ratio:.2}",
        at(Arm::Raw, &|r| r.nmse_db) - at(Arm::Dpd, &|r| r.nmse_db),
        at(Arm::Raw, &|r| r.leakage_db) - at(Arm::Dpd, &|r| r.leakage_db),
        if crit7_ok { "OK" } else { "VIOLATED" },
    );
}

fn main() {
    let mut base = ExperimentConfig::default();
    base.experiment.n_repetitions = 3;
    base.experiment.power_levels_db = vec![-20.0, -14.0, -8.0, -4.0, 0.0];

    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("all");

    if which == "all" || which == "full" {
        summarize("full default", &base);
    }
    if which == "all" || which == "kernel" {
        let mut cfg = base.clone();
        cfg.pa.ltm_kappa = 0.0;
        cfg.pa.noise_floor_dbc = None;
        summarize("kernel only (no LTM, no noise)", &cfg);
    }
    if which == "all" || which == "ltm" {
        let mut cfg = base.clone();
        cfg.pa = PaParams::linear(25.0);
        cfg.pa.ltm_kappa = base.pa.ltm_kappa;
        cfg.pa.ltm_time_constant = base.pa.ltm_time_constant;
        summarize("LTM only (linear kernel, no noise)", &cfg);
    }
    if which == "all" || which == "noise" {
        let mut cfg = base.clone();
        cfg.pa = PaParams::linear(25.0).with_noise_floor(base.pa.noise_floor_dbc);
        cfg.pa.rng_seed = base.pa.rng_seed;
        summarize("noise only (linear kernel)", &cfg);
    }
}
