//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use serde_json::{json, Value};
use slowlight::atoms::{polarizability, wigner3j_doubled, Frequency, TransitionTable};
use slowlight::casimir::{compute_c3, PermittivityTable};
use slowlight::coupling::{beta_factor, gamma1d, gamma1d_from_field, polarization_fractions, Channel, CouplingOptions};
use slowlight::dispersion::{bulk_gaps, cost, guided_bands, optimize, slow_band_report, OptimizationSpec, SolverSettings};
use slowlight::lattice::{StructureConfig, StructureParams};
use slowlight::pwe::Solver;
use slowlight::trap::{build_beams, calibrate_powers, guided_mode, paper_beams, scale_beams, trap_from_beams, TrapModel, zeeman_compensation, PowerCalibration, TrapSettings};

const BIN: &str = env!("CARGO_BIN_EXE_slf");

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn report(n: usize, name: &str, o: &Outcome) {
    println!("criterion {n:>2} {:<4} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
}

// ---------------------------------------------------------------------------

fn eigensolver() -> Outcome {
    let t = Instant::now();
    let empty = [[0.0, 0.0], [0.004, 0.0], [PI / 200.0, 0.0], [0.006, 0.0031]]
        .iter()
        .map(|&k| common::empty_lattice_error(k, 14))
        .fold(0.0, f64::max);
    let stack = common::stack_edge_error(&common::quarter_wave_like(), 16.0);
    let secs = t.elapsed().as_secs_f64();
    outcome(
        empty < 1e-6 && stack < 5e-3 && secs < 60.0,
        format!("empty lattice {empty:.1e} (< 1e-6), stack edges {:.3}% (< 0.5%), {secs:.1} s", stack * 100.0),
    )
}

fn angular() -> Outcome {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut sym_ok) = (0.0f64, true);
    for _ in 0..500 {
        let common::Args([j1, j2, j3, m1, m2, m3]) = common::random_args(&mut rng);
        let w = wigner3j_doubled(j1, j2, j3, m1, m2, m3);
        let want = common::racah(j1, j2, j3, m1, m2, m3);
        if want != 0.0 {
            worst = worst.max((w - want).abs() / want.abs());
        } else if w != 0.0 {
            worst = f64::INFINITY;
        }
        let s = if ((j1 + j2 + j3) / 2) % 2 != 0 { -w } else { w };
        sym_ok &= wigner3j_doubled(j2, j3, j1, m2, m3, m1) == w
            && wigner3j_doubled(j3, j1, j2, m3, m1, m2) == w
            && wigner3j_doubled(j2, j1, j3, m2, m1, m3) == s
            && wigner3j_doubled(j1, j2, j3, -m1, -m2, -m3) == s;
    }
    outcome(worst < 1e-12 && sym_ok, format!("500 cases, worst relative error {worst:.1e} (< 1e-12), symmetries exact: {sym_ok}"))
}

fn casimir() -> Outcome {
    let t = Instant::now();
    let c = compute_c3(&PermittivityTable::bundled(), &TransitionTable::bundled());
    let secs = t.elapsed().as_secs_f64();
    match c {
        Ok(c) => {
            let v = c.c3_spectroscopic;
            outcome(
                (v - 1391.0).abs() <= 0.25 * 1391.0 && c.quadrature_error < 0.01 && secs < 10.0,
                format!("C3 = {v:.1} Hz um^3 (1391 +/- 25%), refinement change {:.1e}, {secs:.1} s", c.quadrature_error),
            )
        }
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn guided_in_gap() -> Outcome {
    let p = StructureParams::paper_unperturbed();
    let run = || -> slowlight::Result<(usize, Vec<(f64, f64)>)> {
        let solver = Solver::new(&p, 4.0)?;
        let fracs = [0.65, 0.7, 0.75, 0.8, 0.85];
        let k_list: Vec<f64> = fracs.iter().map(|s| s * PI / p.a).collect();
        let gaps = bulk_gaps(&p, 4.0, &fracs, 9, 12)?;
        let bands = guided_bands(&solver, &k_list, f64::INFINITY)?;
        let inside = bands
            .iter()
            .filter(|b| {
                b.k.iter().zip(&b.freqs).any(|(&k, &nu)| {
                    let s = k * p.a / PI;
                    gaps.iter().find(|g| (g.k_over_pi_a - s).abs() < 1e-9).is_some_and(|g| g.contains(nu))
                })
            })
            .count();
        Ok((inside, gaps[2].gaps.clone()))
    };
    match run() {
        Ok((n, g)) => outcome(n >= 2, format!("{n} edge-guided bands inside a projected gap (>= 2); gaps at k = 0.75: {g:.0?} THz")),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

fn plateau_nm(p: &StructureParams, target: f64) -> f64 {
    let window = OptimizationSpec::default().k_window;
    slow_band_report(p, &SolverSettings::reference(), target, [0.5, 1.0], 41, window, Some(0.2)).map_or(0.0, |(_, r)| r.plateau_width_nm)
}

fn optimization(best: &mut Option<StructureParams>) -> Outcome {
    let t = Instant::now();
    let p0 = StructureParams::paper_unperturbed();
    let spec = OptimizationSpec::default();
    let mut run = || -> slowlight::Result<Outcome> {
        let (p, _, res) = optimize(&p0, &spec)?;
        let secs = t.elapsed().as_secs_f64();
        let c0 = cost(&p0, &spec)?;
        let (w0, w1) = (plateau_nm(&p0, spec.target_ng), plateau_nm(&p, spec.target_ng));
        let o = outcome(
            w1 >= 4.0 && w0 < 1.0 && res.best_cost < c0 && secs < 1800.0,
            format!(
                "plateau {w1:.2} nm (>= 4) vs unperturbed {w0:.2} nm (< 1), cost {:.3e} < {c0:.3e}, {} evaluations, {secs:.0} s, params {:.1?}",
                res.best_cost, res.evaluations, res.best
            ),
        );
        *best = Some(p);
        Ok(o)
    };
    run().unwrap_or_else(|e| outcome(false, format!("error: {e}")))
}

struct TrapContext {
    solver: Solver,
    settings: TrapSettings,
    table: TransitionTable,
    c3: Option<slowlight::casimir::CasimirCoefficient>,
    cal: PowerCalibration,
}

fn calibrated_trap() -> slowlight::Result<TrapContext> {
    let solver = Solver::new(&StructureParams::paper_unperturbed(), 4.0)?;
    let settings = TrapSettings { beams: paper_beams(1.65, 0.1), ..TrapSettings::default() };
    let table = TransitionTable::bundled();
    let c3 = settings.c3(&table, &PermittivityTable::bundled())?;
    let beams = build_beams(&solver, &settings.beams, (settings.k_range[0], settings.k_range[1]))?;
    let cal = calibrate_powers(&solver, &beams, &settings, &table, c3, 115.0, 3.0)?;
    Ok(TrapContext { solver, settings, table, c3, cal })
}

fn trap_geometry(ctx: &slowlight::Result<TrapContext>) -> Outcome {
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("calibration failed: {e}")),
    };
    let r = &ctx.cal.solution.report;
    let a = ctx.solver.map.a;
    let offset = slowlight::trap::intensity_offset(&ctx.cal.solution.model, r.r_min_nm[1], r.r_min_nm[2], 64);
    // U(gamma P) against gamma U(P) along the line through the minimum: exact
    // with CP off, broken by the fixed surface term with CP on
    let beams = &ctx.cal.solution.beams;
    let nontrivial = (|| -> slowlight::Result<(bool, bool, String)> {
        let gamma = 2.0;
        let scaled = scale_beams(beams, gamma);
        let deviation = |c3| -> slowlight::Result<f64> {
            let m1 = TrapModel::new(beams, &ctx.table, ctx.settings.atom.f, c3, ctx.solver.params.t, ctx.settings.axis_sign)?;
            let m2 = TrapModel::new(&scaled, &ctx.table, ctx.settings.atom.f, c3, ctx.solver.params.t, ctx.settings.axis_sign)?;
            let (mut dev, mut scale) = (0.0f64, 0.0f64);
            for i in 0..=40 {
                let p = [r.r_min_nm[0], -(60.0 + 10.0 * i as f64), r.r_min_nm[2]];
                let (u1, u2) = (m1.potential(p, ctx.settings.atom.mf), m2.potential(p, ctx.settings.atom.mf));
                dev = dev.max((u2 - gamma * u1).abs());
                scale = scale.max((gamma * u1).abs());
            }
            Ok(dev / scale)
        };
        let (off, on) = (deviation(None)?, deviation(ctx.c3)?);
        let on2 = trap_from_beams(&ctx.solver, scaled.clone(), &ctx.settings, &ctx.table, ctx.c3);
        let after = match on2 {
            Ok(s) => format!("d {:.1} nm, depth x{:.3}", s.report.distance_nm, s.report.depth_mk / r.depth_mk),
            Err(e) => e.to_string(),
        };
        let text = format!("x{gamma} scaling deviation CP off {off:.1e} (< 1e-9), CP on {on:.1e} (> 1e-6); CP on x{gamma}: {after}");
        Ok((off < 1e-9, on > 1e-6, text))
    })();
    let (inv, broken, text) = nontrivial.unwrap_or_else(|e| (false, false, format!("error: {e}")));
    outcome(
        (90.0..=160.0).contains(&r.distance_nm) && (1.0..=6.0).contains(&r.depth_mk) && (0.3 * a..=0.7 * a).contains(&(offset * a)) && inv && broken,
        format!(
            "d = {:.1} nm, depth {:.2} mK, offset {offset:.2} a, powers x{:.2} blue / x{:.2} red, freqs {:.2?} MHz; {text}",
            r.distance_nm, r.depth_mk, ctx.cal.gamma_blue, ctx.cal.gamma_red, r.freqs_mhz
        ),
    )
}

/// Slow mode with n_g nearest 28 on the given structure.
fn slow_mode(p: &StructureParams) -> slowlight::Result<slowlight::pwe::Field3D> {
    let window = OptimizationSpec::default().k_window;
    let (band, _) = slow_band_report(p, &SolverSettings::reference(), 30.0, [0.5, 1.0], 41, window, Some(0.2))?;
    let ng = band.group_indices();
    let i = (0..ng.len()).min_by(|&i, &j| (ng[i] - 28.0).abs().total_cmp(&(ng[j] - 28.0).abs())).unwrap();
    let solver = Solver::new(p, 4.0)?;
    guided_mode(&solver, band.k[i] * p.a / PI, band.freqs[i])
}

fn purcell_and_sigma(ctx: &slowlight::Result<TrapContext>, structure: Option<&StructureParams>) -> (Outcome, Outcome) {
    let fail = |m: String| (outcome(false, m.clone()), outcome(false, m));
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => return fail(format!("calibration failed: {e}")),
    };
    let Some(p) = structure else { return fail("no optimized structure".into()) };
    let f = match slow_mode(p) {
        Ok(f) => f,
        Err(e) => return fail(format!("slow mode: {e}")),
    };
    let pos = ctx.cal.solution.report.r_min_nm;
    let opts = CouplingOptions::default();
    let g = gamma1d(&f, &Channel::CYCLING, pos, &ctx.table, &opts).unwrap_or(f64::NAN);
    let beta = beta_factor(g, 1.0);
    let e = f.field_at(pos[0], pos[1], pos[2]);
    let strength = Channel::CYCLING.strength(&ctx.table).unwrap();
    let scaling = [0.37, 2.5, 11.0].iter().all(|&s| {
        let a = gamma1d_from_field(e, f.vg(), f.a(), 1.0, strength, 1, 780.24, &opts).unwrap();
        let b = gamma1d_from_field(e, f.vg() / s, f.a(), 1.0, strength, 1, 780.24, &opts).unwrap();
        (b / a - s).abs() < 1e-10 * s
    });
    let ng = 1.0 / f.vg();
    let purcell = outcome(
        (0.8..=2.4).contains(&g) && beta == g / (1.0 + g) && scaling,
        format!("Gamma1D/Gamma0 = {g:.2} ([0.8, 2.4]) at n_g {ng:.1}, r = {pos:.0?} nm; beta = {beta:.3}; 1/v_g scaling exact: {scaling}"),
    );
    let fr = polarization_fractions(e, opts.axis_sign);
    let minus = Channel { q: -1, ..Channel::CYCLING };
    let ratio = strength * fr[2] / (minus.strength(&ctx.table).unwrap() * fr[0]);
    let sigma = outcome(
        (100.0 / 3.0..=300.0).contains(&ratio),
        format!("rate ratio {ratio:.0} (100 x/ 3), fractions s- {:.4} pi {:.4} s+ {:.4}", fr[0], fr[1], fr[2]),
    );
    (purcell, sigma)
}

fn zeeman(ctx: &slowlight::Result<TrapContext>) -> Outcome {
    let ctx = match ctx {
        Ok(c) => c,
        Err(e) => return outcome(false, format!("calibration failed: {e}")),
    };
    let mut settings = ctx.settings.clone();
    for b in settings.beams.iter_mut() {
        let red = polarizability(&ctx.table, Frequency::Real(b.omega())).map_or(false, |p| p.alpha_s > 0.0);
        b.power_mw *= if red { ctx.cal.gamma_red } else { ctx.cal.gamma_blue };
    }
    match zeeman_compensation(&ctx.solver, &settings, &ctx.table, ctx.c3) {
        Ok(z) => outcome(
            z.reduction >= 0.9,
            format!("mF spread {:.3} mK single vs {:.3} mK paired, reduction {:.1}% (>= 90%)", z.spread_single_mk, z.spread_paired_mk, z.reduction * 100.0),
        ),
        Err(e) => outcome(false, format!("error: {e}")),
    }
}

// ---------------------------------------------------------------------------
// CLI determinism

fn run_cli(dir: &Path, command: &str, config: Option<&Value>) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let out = dir.join("out");
    let mut cmd = Command::new(BIN);
    cmd.arg(command).arg("--out").arg(&out);
    if let Some(c) = config {
        let path = dir.join("config.json");
        std::fs::write(&path, c.to_string()).map_err(|e| e.to_string())?;
        cmd.arg("--config").arg(path);
    }
    let o = cmd.env_remove("SOURCE_DATE_EPOCH").output().map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!("{command}: {}", String::from_utf8_lossy(&o.stderr).trim()));
    }
    let mut files = BTreeMap::new();
    for e in std::fs::read_dir(&out).map_err(|e| e.to_string())? {
        let e = e.map_err(|e| e.to_string())?;
        files.insert(e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).map_err(|e| e.to_string())?);
    }
    Ok(files)
}

fn determinism() -> Outcome {
    let mut small = StructureParams::paper_unperturbed();
    small.n_rows = 5;
    small.w_vac = 600.0;
    small.grid.ny = small.default_ny(32);
    let small = serde_json::to_value(StructureConfig::from_params(&small)).unwrap();
    let paper = serde_json::to_value(StructureConfig::from_params(&StructureParams::paper_unperturbed())).unwrap();
    let beams = serde_json::to_value(paper_beams(15.0, 1.8)).unwrap();
    let search = json!({ "d_min_nm": 40.0, "d_max_nm": 250.0, "z_max_nm": 200.0, "step_nm": [0.0, 5.0, 20.0] });
    let trap_settings = json!({ "beams": beams, "search": search });
    let cases: Vec<(&str, Option<Value>)> = vec![
        ("slab-neff", None),
        ("c3", None),
        ("bands", Some(json!({ "structure": small, "order": 2.5, "n_k": 8, "n_bands": 6, "n_ky": 3 }))),
        ("mode-field", Some(json!({ "structure": small, "order": 3.0 }))),
        (
            "optimize",
            Some(json!({ "structure": small, "spec": {
                "max_iters": 10, "screen": 3, "restarts": 1, "n_k": 8, "polish_step": 0.0,
                "settings": { "order": 2.0, "n_rows": 4, "w_vac_nm": 500.0, "points_per_period": 32 } } })),
        ),
        ("purcell", Some(json!({ "structure": small, "order": 3.0, "profile_nm": [60.0, 115.0, 200.0] }))),
        ("trap", Some(json!({ "structure": paper, "order": 3.0, "settings": trap_settings }))),
        (
            "trap-scan",
            Some(json!({ "structure": paper, "order": 3.0, "settings": trap_settings,
                "wavelengths_nm": { "from": 736.0, "to": 738.0, "step": 2.0 }, "power_cap_mW": 2.0, "power_step_mW": 1.0 })),
        ),
        ("zeeman", Some(json!({ "structure": paper, "order": 3.0, "settings": trap_settings }))),
    ];
    let mut problems = Vec::new();
    let mut files = 0;
    for (command, config) in &cases {
        let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
        match (run_cli(a.path(), command, config.as_ref()), run_cli(b.path(), command, config.as_ref())) {
            (Ok(x), Ok(y)) => {
                files += x.len();
                if x != y {
                    problems.push(format!("{command} differs"));
                }
            }
            (Err(e), _) | (_, Err(e)) => problems.push(e),
        }
    }
    outcome(
        problems.is_empty(),
        if problems.is_empty() {
            format!("{} commands, {files} files byte-identical across two runs", cases.len())
        } else {
            problems.join("; ")
        },
    )
}

fn main() {
    // libtest-style arguments (filters, --nocapture) are ignored
    let t = Instant::now();
    let mut all = Vec::new();
    let mut record = |n: usize, name: &str, o: Outcome| {
        report(n, name, &o);
        all.push(o.pass);
    };
    record(1, "eigensolver exactness", eigensolver());
    record(2, "angular-momentum suite", angular());
    record(3, "C3 coefficient", casimir());
    record(4, "guided bands in the gap", guided_in_gap());
    let mut best = None;
    record(5, "optimization efficacy", optimization(&mut best));
    let ctx = calibrated_trap();
    let (purcell, sigma) = purcell_and_sigma(&ctx, best.as_ref());
    record(6, "Purcell and beta", purcell);
    record(7, "trap existence and geometry", trap_geometry(&ctx));
    record(8, "Zeeman compensation", zeeman(&ctx));
    record(9, "sigma+ dominance", sigma);
    record(10, "CLI determinism", determinism());
    let passed = all.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria pass ({:.0} s)", all.len(), t.elapsed().as_secs_f64());
    if passed != all.len() {
        std::process::exit(1);
    }
}
