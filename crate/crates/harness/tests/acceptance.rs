//! Acceptance criteria, one line of output each. Runs without the libtest
//! harness so the report is always printed.

use std::collections::BTreeMap;
use std::process::Command;
use std::time::{Duration, Instant};

use kron_harness::builtin_config;
use kron_harness::experiments::{run_figure1, run_figure2, run_figure4};
use kron_harness::output::ProbeRecord;
use kron_harness::selftest::{self, Kernels};

type Check = Result<String, String>;

const SEED: u64 = 0;

fn within(limit: Duration, start: Instant, detail: String) -> Check {
    let took = start.elapsed();
    if took <= limit {
        Ok(detail)
    } else {
        Err(format!("{detail}; took {took:.1?}, limit {limit:?}"))
    }
}

fn c1_power_step() -> Check {
    let start = Instant::now();
    let d = selftest::shampoo_sq_is_power_step(&Kernels::default(), 500, SEED)?;
    within(Duration::from_secs(10), start, d)
}

fn c2_binary_flat_line() -> Check {
    let start = Instant::now();
    let cfg = builtin_config("binary").map_err(|e| e.to_string())?;
    if cfg.train.steps != 25 || cfg.train.batch_size != 0 || cfg.train.schedule().len() != 26 {
        return Err("binary preset is not a 25-step full-batch run probed every step".into());
    }
    let rows = run_figure1(&cfg).map_err(|e| e.to_string())?;
    let sq: Vec<&ProbeRecord> = rows.iter().filter(|r| r.target == "gn" && r.estimator == "shampoo_sq").collect();
    if sq.len() != 26 {
        return Err(format!("expected 26 Shampoo² rows, found {}", sq.len()));
    }
    let worst = sq.iter().map(|r| r.cosine).fold(1.0, f64::min);
    if worst < 1.0 - 1e-8 {
        return Err(format!("min cos(Shampoo², H_GN) = {worst}"));
    }
    within(Duration::from_secs(60), start, format!("d=196, 26 probe steps, min cosine 1 - {:.1e}", 1.0 - worst))
}

fn c3_identities() -> Check {
    let start = Instant::now();
    let k = Kernels::default();
    let a = selftest::kron_matvec_identity(200, SEED)?;
    let b = selftest::rearrangement_rank_one(&k, 200, SEED)?;
    let c = selftest::rearranged_residual(&k, 200, SEED)?;
    within(Duration::from_secs(5), start, format!("kron matvec: {a}; rearrangement: {b}; residual: {c}"))
}

fn c4_dominance() -> Check {
    let start = Instant::now();
    let d = selftest::dominance(100, SEED)?;
    within(Duration::from_secs(30), start, d)
}

fn c5_batch_invariance() -> Check {
    selftest::batch_invariance(2000, SEED)
}

fn c6_interpolation() -> Check {
    selftest::interpolation(SEED)
}

fn c7_probes() -> Check {
    selftest::probe_machinery(20, 200, SEED)
}

fn c8_identity_init() -> Check {
    selftest::identity_init(10_000, 100, SEED)
}

/// Values from the first verified run of the bundled presets at seed 0.
const PIN_FIG1_FINAL: [(&str, &str, f64); 4] = [
    ("gn", "opt_kron_5", 9.04024599972528597e-1),
    ("gn", "shampoo_sq", 8.94999567427004483e-1),
    ("gn", "shampoo", 8.23916355834338088e-1),
    ("adagrad", "shampoo_sq", 5.16726323596427783e-1),
];
const PIN_FIG2_FINAL: [(&str, &str, f64); 3] = [
    ("gn", "ratio_opt", 9.04024600367103748e-1),
    ("gn", "ratio_l", 9.94238157016533952e-1),
    ("gn", "ratio_r", 9.91990722845957018e-1),
];
const PIN_FIG4_REAL_SQ: [(usize, f64); 3] = [
    (1, 7.60510470263751737e-1),
    (16, 7.57467034811027506e-1),
    (256, 6.10621803944918384e-1),
];
const PIN_TOL: f64 = 1e-9;

fn pinned(what: &str, got: f64, want: f64) -> Result<(), String> {
    if (got - want).abs() <= PIN_TOL {
        Ok(())
    } else {
        Err(format!("{what} = {got:.17e}, pinned {want:.17e}"))
    }
}

fn c9_figure_shapes() -> Check {
    let start = Instant::now();
    let cfg1 = builtin_config("figure1").map_err(|e| e.to_string())?;
    let rows = run_figure1(&cfg1).map_err(|e| e.to_string())?;
    let mut by: BTreeMap<(usize, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &rows {
        by.entry((r.step.unwrap_or(0), r.target.clone()))
            .or_default()
            .insert(r.estimator.clone(), r.cosine);
    }
    let mut min_gap = f64::INFINITY;
    for ((step, target), est) in &by {
        let (opt, sq, sh) = (est["opt_kron_5"], est["shampoo_sq"], est["shampoo"]);
        if opt < sq - 1e-9 {
            return Err(format!("step {step} {target}: opt_kron {opt} < Shampoo² {sq}"));
        }
        // margin 0: Shampoo² is at least as good as Shampoo at every step
        if sq - 1e-9 < sh {
            return Err(format!("step {step} {target}: Shampoo² {sq} does not beat Shampoo {sh}"));
        }
        min_gap = min_gap.min(sq - sh);
    }
    let last = cfg1.train.steps;
    let final_gap = by[&(last, "gn".to_string())]["shampoo_sq"] - by[&(last, "gn".to_string())]["shampoo"];
    if final_gap <= 0.0 {
        return Err(format!("final Shampoo² − Shampoo gap {final_gap} is not positive"));
    }
    for (target, est, want) in PIN_FIG1_FINAL {
        pinned(&format!("fig1 {target}/{est}"), by[&(last, target.to_string())][est], want)?;
    }

    let cfg2 = builtin_config("figure2").map_err(|e| e.to_string())?;
    let out2 = run_figure2(&cfg2).map_err(|e| e.to_string())?;
    let mut ratios: BTreeMap<(usize, String), BTreeMap<String, f64>> = BTreeMap::new();
    for r in &out2.records {
        ratios
            .entry((r.step.unwrap_or(0), r.target.clone()))
            .or_default()
            .insert(r.estimator.clone(), r.cosine);
    }
    for ((step, target), v) in &ratios {
        if v["ratio_l"] < v["ratio_opt"] || v["ratio_r"] < v["ratio_opt"] {
            return Err(format!("step {step} {target}: ratios {v:?}"));
        }
    }
    for (target, est, want) in PIN_FIG2_FINAL {
        pinned(&format!("fig2 {target}/{est}"), ratios[&(cfg2.train.steps, target.to_string())][est], want)?;
    }

    let cfg4 = builtin_config("figure4").map_err(|e| e.to_string())?;
    let pts = run_figure4(&cfg4).map_err(|e| e.to_string())?;
    let mut curves: BTreeMap<String, Vec<(usize, f64)>> = BTreeMap::new();
    for p in pts.iter().filter(|p| p.record.label_mode.as_deref() == Some("real")) {
        curves
            .entry(p.record.estimator.clone())
            .or_default()
            .push((p.record.batch_size.unwrap_or(0), p.record.cosine));
    }
    for (est, pts) in &curves {
        if pts.iter().map(|p| p.0).collect::<Vec<_>>() != [1, 16, 256] {
            return Err(format!("{est}: batch sizes {pts:?}"));
        }
        if pts.windows(2).any(|w| w[1].1 > w[0].1) {
            return Err(format!("{est}: real-label cosine increases with |B|: {pts:?}"));
        }
    }
    for (b, want) in PIN_FIG4_REAL_SQ {
        let got = curves["shampoo_sq"].iter().find(|p| p.0 == b).map(|p| p.1).unwrap_or(f64::NAN);
        pinned(&format!("fig4 real |B|={b} shampoo_sq"), got, want)?;
    }
    within(
        Duration::from_secs(300),
        start,
        format!(
            "{} probe steps, min Shampoo² − Shampoo gap {min_gap:.4}, final gap {final_gap:.4}; ratios hold; fig4 non-increasing",
            by.len()
        ),
    )
}

fn c10_grafting() -> Check {
    selftest::grafting(100, SEED)
}

fn c11_end_to_end() -> Check {
    let start = Instant::now();
    let bin = env!("CARGO_BIN_EXE_kron-harness");
    let st = Command::new(bin).args(["selftest"]).output().map_err(|e| e.to_string())?;
    if !st.status.success() {
        return Err(format!(
            "selftest exited {:?}:\n{}",
            st.status.code(),
            String::from_utf8_lossy(&st.stdout)
        ));
    }
    let suites = String::from_utf8_lossy(&st.stdout).lines().filter(|l| l.starts_with("PASS")).count();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut csvs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let res = Command::new(bin)
            .args(["figure1", "--out"])
            .arg(&out)
            .output()
            .map_err(|e| e.to_string())?;
        if !res.status.success() {
            return Err(format!("figure1 run {run} exited {:?}", res.status.code()));
        }
        csvs.push(std::fs::read(out.join("figure1.csv")).map_err(|e| e.to_string())?);
    }
    if csvs[0] != csvs[1] {
        return Err("figure1 CSVs differ between identical runs".into());
    }
    within(
        Duration::from_secs(300),
        start,
        format!("selftest: {suites} suites pass; figure1 CSVs identical ({} bytes)", csvs[0].len()),
    )
}

fn main() {
    let criteria: [(u32, &str, fn() -> Check); 11] = [
        (1, "Shampoo² equals one power-iteration step", c1_power_step),
        (2, "binary logistic Shampoo² is exact", c2_binary_flat_line),
        (3, "Kronecker algebra identities", c3_identities),
        (4, "PSD dominance bounds", c4_dominance),
        (5, "sampled-label batch invariance", c5_batch_invariance),
        (6, "real-label batch interpolation", c6_interpolation),
        (7, "probe-based cosine machinery", c7_probes),
        (8, "identity initialization", c8_identity_init),
        (9, "figure shapes at desk scale", c9_figure_shapes),
        (10, "exponent grafting", c10_grafting),
        (11, "selftest and determinism", c11_end_to_end),
    ];
    let total = Instant::now();
    let mut failed = 0;
    for (n, name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n:>2} PASS {name} [{secs:.2}s]: {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} [{secs:.2}s]: {d}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed in {:.1?}", 11 - failed, total.elapsed());
    if failed > 0 {
        std::process::exit(1);
    }
}
