//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{RngExt, SeedableRng};

use tricomp::asymptotics::Side;
use tricomp::bvp::{assemble, solve};
use tricomp::cli::kernel_test_history;
use tricomp::model::{jacobian_monotone, reaction_monotone};
use tricomp::pde::{
    convolution_identity_check, default_dt, distance_to_wave, measure_speed, run_local, state_from_wave, step_nonlocal,
    KernelSpec, NonlocalSim, SimState, VHistory,
};
use tricomp::scalar_waves::{kpp_plus_decay, kpp_plus_rate, solve_kpp, KppNonlinearity, KppProblem};
use tricomp::system_waves::{
    aligned_distance, build_pair_h2a, build_pair_lv2, iterate, solve_wave3, verify_pair, wave_grid, IterationConfig,
    PairOptions, Start, SANDWICH_SLACK,
};
use tricomp::{asymptotics, classify_regime, rates, Error, Grid, ModelParams, RegimeVariant};

type Check = std::result::Result<String, String>;

fn h2a() -> ModelParams {
    ModelParams::new(0.5, 2.0, 0.2, 2.0).unwrap()
}

fn h2b() -> ModelParams {
    ModelParams::new(0.5, 3.0, 0.25, 2.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    ((a - b) / b).abs()
}

fn ensure(ok: bool, msg: String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Direct evaluation of the regime inequalities.
fn direct_regime(p: &ModelParams) -> RegimeVariant {
    let (a1, a2, r) = (p.a1, p.a2, p.r);
    if !(0.0 < a1 && a1 < 1.0 && 1.0 < a2) {
        RegimeVariant::H1Violated
    } else if r * (a2 - 1.0) < 1.0 - a1 {
        RegimeVariant::H2a
    } else if 1.0 - a1 >= r * (a1 * a2 - 1.0) {
        RegimeVariant::H2b
    } else {
        RegimeVariant::Uncovered
    }
}

fn c1_classifier() -> Check {
    let mut rng = StdRng::seed_from_u64(20240601);
    let mut cases = vec![
        (ModelParams::new(0.5, 2.0, 0.2, 2.0).unwrap(), Some(RegimeVariant::H2a)),
        (ModelParams::new(0.5, 2.0, 1.0, 2.0).unwrap(), Some(RegimeVariant::H2b)),
        (
            ModelParams::new(1.5, 2.0, 0.2, 2.0).unwrap(),
            Some(RegimeVariant::H1Violated),
        ),
    ];
    for _ in 0..200 {
        let p = ModelParams::new(
            rng.random_range(0.01..1.3),
            rng.random_range(0.7..6.0),
            rng.random_range(0.01..3.0),
            rng.random_range(0.1..5.0),
        )
        .unwrap();
        cases.push((p, None));
    }
    let mut counts = [0usize; 4];
    for (p, expected) in &cases {
        let got = classify_regime(p).variant;
        let direct = direct_regime(p);
        ensure(got == direct, format!("{p:?}: classifier {got:?}, direct {direct:?}"))?;
        if let Some(e) = expected {
            ensure(got == *e, format!("{p:?}: expected {e:?}, got {got:?}"))?;
        }
        counts[got as usize] += 1;
    }
    Ok(format!(
        "{} cases agree (H2a {}, H2b {}, uncovered {}, H1 violated {})",
        cases.len(),
        counts[0],
        counts[1],
        counts[2],
        counts[3]
    ))
}

fn c2_kpp() -> Check {
    let pb = KppProblem::new(KppNonlinearity::Logistic { a1: 0.5 }, 1.5);
    let grid = Grid::with_max_spacing(60.0, 0.02).map_err(err)?;
    let w = solve_kpp(&pb, &grid).map_err(err)?;
    ensure(w.residual <= 1e-8, format!("residual {:e}", w.residual))?;
    let minus = w.decay_minus.as_ref().ok_or("no -inf fit")?.rate;
    ensure(rel(minus, 0.5) <= 0.02, format!("-inf rate {minus}"))?;
    let plus = kpp_plus_decay(&w).map_err(err)?.rate;
    let pred = kpp_plus_rate(&pb);
    ensure((pred + 0.2808).abs() < 1e-4, format!("predicted +inf rate {pred}"))?;
    ensure(rel(plus, pred) <= 0.05, format!("+inf rate {plus} vs {pred}"))?;
    Ok(format!(
        "residual {:.1e}, -inf rate {minus:.5} (0.5), +inf rate {plus:.5} ({pred:.5})",
        w.residual
    ))
}

fn c3_kpp_critical() -> Check {
    let c = 2.0 * 0.5f64.sqrt();
    let pb = KppProblem::new(KppNonlinearity::Logistic { a1: 0.5 }, c);
    let grid = Grid::with_max_spacing(60.0, 0.02).map_err(err)?;
    let w = solve_kpp(&pb, &grid).map_err(err)?;
    ensure(w.critical, "speed not detected as critical".into())?;
    let fit = w.decay_minus.as_ref().ok_or("no -inf fit")?;
    let rival = fit.rival_residual.ok_or("exponential model not fitted")?;
    ensure(
        fit.poly_factor && fit.fit_residual < rival,
        format!(
            "poly {} residual {:e} vs exponential {:e}",
            fit.poly_factor, fit.fit_residual, rival
        ),
    )?;
    Ok(format!(
        "polynomial-factor residual {:.2e} < exponential {:.2e}",
        fit.fit_residual, rival
    ))
}

fn c4_h2a() -> Check {
    let p = h2a();
    let c = 1.5;
    let grid = wave_grid(&p, c, 0.02).map_err(err)?;
    let out = solve_wave3(&p, c, &grid, &PairOptions::default(), &IterationConfig::default()).map_err(err)?;
    let w = &out.wave;
    let d = &w.diagnostics;
    ensure(d.converged, "iteration did not converge".into())?;
    ensure(w.max_residual() <= 1e-8, format!("residuals {:?}", w.residuals))?;
    ensure(w.strictly_increasing, "not strictly increasing".into())?;
    ensure(
        d.sandwich_checks == w.iterations && d.max_sandwich_excess <= SANDWICH_SLACK,
        format!(
            "sandwich checked {} of {} iterates, excess {:e}",
            d.sandwich_checks, w.iterations, d.max_sandwich_excess
        ),
    )?;
    let report = asymptotics::match_wave_asymptotics(w).map_err(err)?;
    let mut minus = Vec::new();
    for k in 0..3 {
        let row = report.row(k, Side::Minus).ok_or("missing -inf row")?;
        let fit = row
            .fitted
            .ok_or_else(|| format!("component {k}: {:?}", row.fit_error))?;
        ensure(rel(fit, 0.5) <= 0.02, format!("component {k} -inf rate {fit}"))?;
        ensure(
            row.amplitude.unwrap_or(-1.0) > 0.0,
            format!("component {k} amplitude not positive"),
        )?;
        minus.push(fit);
    }
    let slowest = (0..3)
        .filter_map(|k| report.row(k, Side::Plus).and_then(|r| r.fitted))
        .fold(f64::NEG_INFINITY, f64::max);
    let pred = rates(&p, c).map_err(err)?.slowest_plus();
    ensure((pred + 0.12321).abs() < 1e-5, format!("predicted slowest rate {pred}"))?;
    ensure(
        rel(slowest, pred) <= 0.05,
        format!("slowest +inf rate {slowest} vs {pred}"),
    )?;
    Ok(format!(
        "{} sweeps, max residual {:.1e}, sandwich excess {:.1e}, -inf rates {:.4}/{:.4}/{:.4}, slowest +inf {:.5} ({:.5})",
        w.iterations,
        w.max_residual(),
        d.max_sandwich_excess,
        minus[0],
        minus[1],
        minus[2],
        slowest,
        pred
    ))
}

fn c5_h2b() -> Check {
    let p = h2b();
    let c = 1.5;
    let grid = wave_grid(&p, c, 0.02).map_err(err)?;
    let out = solve_wave3(&p, c, &grid, &PairOptions::default(), &IterationConfig::default()).map_err(err)?;
    let h3 = out.pair.h3_min.ok_or("H3 predicate not evaluated")?;
    ensure(h3 >= 0.0, format!("min(a2 u - v) = {h3:e}"))?;
    let report = verify_pair(&out.pair, &p, c).map_err(err)?;
    ensure(
        report.ordered(),
        format!("pair gap {:e} after shift {}", report.order_gap, out.pair.shift_applied),
    )?;
    let w = &out.wave;
    ensure(w.diagnostics.converged, "iteration did not converge".into())?;
    ensure(w.max_residual() <= 1e-8, format!("residuals {:?}", w.residuals))?;
    ensure(w.strictly_increasing, "not strictly increasing".into())?;
    Ok(format!(
        "min(a2 u - v) = {h3:.1e}, shift {}, order gap {:.1e}, {} sweeps, max residual {:.1e}",
        out.pair.shift_applied,
        report.order_gap,
        w.iterations,
        w.max_residual()
    ))
}

fn c6_verification() -> Check {
    let mut notes = Vec::new();
    let c = 1.5;
    let p = h2a();
    let pair = build_pair_h2a(&p, c, &wave_grid(&p, c, 0.02).map_err(err)?, &PairOptions::default()).map_err(err)?;
    let lv2p = h2b();
    let lv2 = build_pair_lv2(
        &lv2p,
        c,
        &wave_grid(&lv2p, c, 0.02).map_err(err)?,
        &PairOptions::default(),
    )
    .map_err(err)?;
    for (name, pair, p) in [("H2a", &pair, &p), ("LV2", &lv2, &lv2p)] {
        let r = verify_pair(pair, p, c).map_err(err)?;
        let up = r.upper_max.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lo = r.lower_min.iter().cloned().fold(f64::INFINITY, f64::min);
        ensure(
            r.all_ok() && r.ordered() && up <= 1e-8 && lo >= -1e-8,
            format!("{name}: upper max {up:e}, lower min {lo:e}, ordered {}", r.ordered()),
        )?;
        notes.push(format!("{name} upper max {up:.1e}, lower min {lo:.1e}"));
    }
    Ok(notes.join("; "))
}

fn c7_minimal_speed() -> Check {
    let p = h2a();
    let c_min = p.c_min();
    let factors = [0.9, 1.0, 1.06, 1.41];
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = factors
            .iter()
            .map(|f| {
                let c = f * c_min;
                s.spawn(move || {
                    let grid = wave_grid(&p, c, 0.04)?;
                    solve_wave3(&p, c, &grid, &PairOptions::default(), &IterationConfig::default())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    let mut notes = Vec::new();
    for (f, res) in factors.iter().zip(results) {
        let c = f * c_min;
        if *f < 1.0 {
            let table = rates(&p, c).map_err(err)?;
            ensure(table.complex_roots, format!("c = {c}: roots reported real"))?;
            ensure(
                matches!(res, Err(Error::NoMonotoneWave { .. })),
                format!(
                    "c = {c}: expected NoMonotoneWave, got {:?}",
                    res.map(|o| o.wave.iterations)
                ),
            )?;
            notes.push(format!("{f}: no wave"));
        } else {
            let out = res.map_err(|e| format!("c = {c}: {e}"))?;
            let w = out.wave;
            ensure(
                w.diagnostics.converged && w.max_residual() <= 1e-8,
                format!("c = {c}: residual {:e}", w.max_residual()),
            )?;
            notes.push(format!("{f}: {} sweeps", w.iterations));
        }
    }
    Ok(notes.join(", "))
}

fn c8_uniqueness() -> Check {
    let p = h2a();
    let c = 1.5;
    let grid = wave_grid(&p, c, 0.02).map_err(err)?;
    let pair = build_pair_h2a(&p, c, &grid, &PairOptions::default()).map_err(err)?;
    let upper = iterate(&pair, &p, c, &IterationConfig::default()).map_err(err)?;
    let cfg = IterationConfig {
        start: Start::Lower,
        ..IterationConfig::default()
    };
    let lower = iterate(&pair, &p, c, &cfg).map_err(err)?;
    let d = aligned_distance(&upper.profiles, &lower.profiles).map_err(err)?;
    ensure(d <= 1e-6, format!("aligned distance {d:e}"))?;
    Ok(format!(
        "aligned sup distance {d:.1e} ({} down sweeps, {} up sweeps)",
        upper.iterations, lower.iterations
    ))
}

fn c9_kernel() -> Check {
    let grid = Grid::with_max_spacing(20.0, 0.2).map_err(err)?;
    let coarse = KernelSpec::new(2.0, 0.1).map_err(err)?;
    let fine = KernelSpec::new(2.0, 0.05).map_err(err)?;
    let mass = coarse.mass();
    ensure((0.9999..=1.0).contains(&mass), format!("mass {mass}"))?;
    let t0 = -(coarse.time_horizon + 0.4);
    let residual = |k: &KernelSpec| {
        let hist = VHistory::from_fn(grid, t0, 0.0, k.quadrature_step, kernel_test_history);
        convolution_identity_check(&hist, k, 3)
    };
    let r0 = residual(&coarse).map_err(err)?;
    let r1 = residual(&fine).map_err(err)?;
    ensure(r0 < 1e-2, format!("identity residual {r0:e}"))?;
    ensure(r1 < r0, format!("residual did not decrease: {r0:e} -> {r1:e}"))?;
    Ok(format!(
        "mass {mass:.7}, identity residual {r0:.2e} -> {r1:.2e} under refinement"
    ))
}

fn c10_persistence() -> Check {
    let p = h2a();
    let c = 1.5;
    let grid = wave_grid(&p, c, 0.02).map_err(err)?;
    let wave = solve_wave3(&p, c, &grid, &PairOptions::default(), &IterationConfig::default())
        .map_err(err)?
        .wave;
    let xg = Grid::with_max_spacing(60.0, 0.1).map_err(err)?;
    let t_end = 20.0;
    let start = state_from_wave(&wave, xg, 0.0).map_err(err)?;
    let (end, frames) = run_local(start, &p, default_dt(&xg), t_end, 0.5).map_err(err)?;
    let d = distance_to_wave(&end, &wave, c * t_end).map_err(err)?;
    ensure(d <= 1e-2, format!("distance to translated wave {d:e}"))?;
    let speed = measure_speed(&xg, &frames, 0, 0.5).map_err(err)?.speed;
    ensure(rel(speed.abs(), c) <= 0.05, format!("front speed {speed}"))?;
    Ok(format!(
        "sup distance {d:.1e} at T = {t_end}, front speed {speed:.5} (|c| = {c})"
    ))
}

fn c11_local_nonlocal() -> Check {
    let p = h2a();
    let grid = Grid::with_max_spacing(30.0, 0.1).map_err(err)?;
    let dt = default_dt(&grid);
    let kernel = KernelSpec::new(p.tau, dt).map_err(err)?;
    let u0f = |x: f64| 1.0 / (1.0 + (-x).exp());
    let v0f = |x: f64| 1.0 - u0f(x);
    let t0 = -(kernel.intervals() as f64) * dt;
    let hist = VHistory::from_fn(grid, t0, 0.0, dt, |x, _| v0f(x));
    let u0: Vec<f64> = grid.nodes().into_iter().map(u0f).collect();
    let mut sim = NonlocalSim::new(u0.clone(), &hist, kernel).map_err(err)?;
    let v0 = hist.frames.last().unwrap().clone();
    let w0 = sim.memory.value.clone();
    let local = SimState::new(grid, vec![u0, v0, w0], sim.state.t).map_err(err)?;
    let t_end = 5.0;
    let (local, _) = run_local(local, &p, dt, t_end, t_end).map_err(err)?;
    while sim.state.t < t_end - 1e-9 {
        step_nonlocal(&mut sim, &p).map_err(err)?;
    }
    let d = local.fields[1]
        .iter()
        .zip(&sim.state.fields[1])
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    ensure(d <= 1e-2, format!("v fields differ by {d:e}"))?;
    Ok(format!("sup |v_local - v_nonlocal| = {d:.1e} at T = {t_end}"))
}

fn c12_hygiene() -> Check {
    // y = tanh(x) + x/20 solves y'' - c y' - beta y = rhs exactly.
    let (c, beta, l) = (1.3, 2.0, 8.0);
    let y = |x: f64| x.tanh() + x / 20.0;
    let rhs = |x: f64| {
        let t = x.tanh();
        let s2 = 1.0 - t * t;
        -2.0 * t * s2 - c * (s2 + 0.05) - beta * y(x)
    };
    let mut errs = Vec::new();
    for n in [199, 399, 799] {
        let g = Grid::new(l, n).map_err(err)?;
        let sol = solve(&assemble(&g, c, beta, |i| rhs(g.node(i)), (y(-l), y(l))).map_err(err)?).map_err(err)?;
        let e = (1..=n).map(|i| (sol[i - 1] - y(g.node(i))).abs()).fold(0.0, f64::max);
        errs.push(e);
    }
    let orders = [(errs[0] / errs[1]).log2(), (errs[1] / errs[2]).log2()];
    for o in orders {
        ensure(
            (1.8..=2.2).contains(&o),
            format!("observed order {o:.3} (errors {errs:?})"),
        )?;
    }

    let mut rng = StdRng::seed_from_u64(7);
    let eps = 1e-6;
    for _ in 0..1000 {
        let p = ModelParams::new(
            rng.random_range(0.01..0.99),
            rng.random_range(1.01..6.0),
            rng.random_range(0.01..3.0),
            rng.random_range(0.1..5.0),
        )
        .map_err(err)?;
        let x = [
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..1.0),
        ];
        let jac = jacobian_monotone(&p, x[0], x[1], x[2]);
        for j in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += eps;
            xm[j] -= eps;
            let fp = reaction_monotone(&p, xp[0], xp[1], xp[2]);
            let fm = reaction_monotone(&p, xm[0], xm[1], xm[2]);
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * eps);
                ensure(
                    (fd - jac[i][j]).abs() <= 1e-6,
                    format!(
                        "{p:?} at {x:?}: d f{i}/d x{j} = {} vs finite difference {fd}",
                        jac[i][j]
                    ),
                )?;
                if i != j {
                    ensure(fd >= -1e-6, format!("{p:?} at {x:?}: d f{i}/d x{j} = {fd} < 0"))?;
                }
            }
        }
    }
    Ok(format!(
        "observed orders {:.3}, {:.3}; 1000 cooperative sign checks pass",
        orders[0], orders[1]
    ))
}

fn main() {
    let criteria: [(&str, u64, fn() -> Check); 12] = [
        ("regime classifier", 1, c1_classifier),
        ("KPP front", 10, c2_kpp),
        ("KPP critical tail", 10, c3_kpp_critical),
        ("three-species H2a wave", 60, c4_h2a),
        ("three-species H2b wave", 120, c5_h2b),
        ("upper/lower verification", 10, c6_verification),
        ("minimal speed", 120, c7_minimal_speed),
        ("uniqueness", 120, c8_uniqueness),
        ("kernel identities", 30, c9_kernel),
        ("wave persistence", 60, c10_persistence),
        ("local/nonlocal equivalence", 120, c11_local_nonlocal),
        ("numerical hygiene", 5, c12_hygiene),
    ];
    let mut failed = 0;
    for (k, (name, budget, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let elapsed = start.elapsed();
        let over = elapsed > Duration::from_secs(*budget);
        let (tag, detail) = match (&outcome, over) {
            (Ok(d), false) => ("PASS", d.clone()),
            (Ok(d), true) => ("FAIL", format!("{d}; exceeded {budget} s budget")),
            (Err(e), _) => ("FAIL", e.clone()),
        };
        if tag == "FAIL" {
            failed += 1;
        }
        println!("{tag} {:>2} {name} [{:.2} s]: {detail}", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of 12 criteria passed", 12 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
