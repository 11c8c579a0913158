//! One function per subcommand. Each validates its configuration fully before
//! computing anything.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;
use serde_json::json;
use slowlight::atoms::TransitionTable;
use slowlight::casimir::{compute_c3, PermittivityTable};
use slowlight::constants::{joule_to_mk, nm_to_thz};
use slowlight::coupling::{beta_factor, coupling_map, gamma1d, polarization_fractions};
use slowlight::dispersion::{bulk_gaps, group_index, optimize};
use slowlight::io::{fmt, to_json};
use slowlight::lattice::StructureConfig;
use slowlight::pwe::{default_k_grid, slab_effective_index, Field3D, Solver};
use slowlight::trap::{build_beams, calibrate_powers, guided_mode, guided_mode_at_frequency, trap_from_beams, wavelength_scan, zeeman_compensation, TrapModel, TrapSettings, TrapSolution};
use slowlight::{Error, Result};

use crate::config::*;
use crate::run::Run;

/// Shared inputs of a command invocation.
pub struct Context {
    pub out: std::path::PathBuf,
    pub data_dir: Option<std::path::PathBuf>,
    pub seed: Option<u64>,
    /// Raw config file, when one was given.
    pub config_text: Option<String>,
}

impl Context {
    fn parse<T: serde::de::DeserializeOwned + Default>(&self) -> Result<T> {
        match &self.config_text {
            Some(t) => slowlight::io::parse_config(t),
            None => Ok(T::default()),
        }
    }

    fn start<T: Serialize>(&self, command: &str, config: &T) -> Result<Run> {
        let mut run = Run::new(&self.out, command, &to_json(config)?)?;
        if let Some(t) = &self.config_text {
            run.input("config", t.as_bytes());
        }
        Ok(run)
    }

    fn data_path(&self, name: &str) -> Option<std::path::PathBuf> {
        self.data_dir.as_ref().map(|d| d.join(name)).filter(|p| p.exists())
    }

    fn atoms(&self, run: &mut Run) -> Result<TransitionTable> {
        if let Some(p) = self.data_path("rb87_lines.csv") {
            run.input("rb87_lines.csv", &std::fs::read(&p)?);
        }
        TransitionTable::load(self.data_dir.as_deref())
    }

    fn permittivity(&self, run: &mut Run) -> Result<PermittivityTable> {
        if let Some(p) = self.data_path("gainp_permittivity.csv") {
            run.input("gainp_permittivity.csv", &std::fs::read(&p)?);
        }
        PermittivityTable::load(self.data_dir.as_deref())
    }
}

fn csv_line(values: &[f64]) -> String {
    values.iter().map(|&v| fmt(v)).collect::<Vec<_>>().join(",") + "\n"
}

pub fn slab_neff(ctx: &Context) -> Result<()> {
    let cfg: SlabNeffConfig = ctx.parse()?;
    cfg.validate()?;
    let mut run = ctx.start("slab-neff", &cfg)?;
    let mut csv = String::from("wavelength_nm,n_eff,kappa_in_per_nm,kappa_out_per_nm\n");
    for &w in &cfg.wavelengths_nm {
        let s = slab_effective_index(cfg.n_slab, cfg.t_nm, w);
        csv += &csv_line(&[w, s.n_eff, s.kappa_in, s.kappa]);
    }
    run.write("slab_neff.csv", &csv)?;
    run.finish()
}

#[derive(Serialize)]
struct GapRow {
    k_over_pi_a: f64,
    light_line_thz: f64,
    gaps_thz: Vec<(f64, f64)>,
    /// Band indices below the light line inside a gap.
    bands_in_gap: Vec<usize>,
}

pub fn bands(ctx: &Context) -> Result<()> {
    let cfg: BandsConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("bands", &cfg)?;
    let k_list = default_k_grid(p.a, cfg.n_k);
    let set = solver.solve_bands(&k_list, cfg.n_bands)?;
    let mut csv = String::from("k_over_pi_a,band_index,freq_THz,vg_over_c,ng\n");
    for i in 0..set.k_samples.len() {
        for b in 0..set.n_bands() {
            let vg = set.vg[i][b];
            let s = set.k_fraction(i);
            let _ = write!(csv, "{},{b},{},{},{}\n", fmt(s), fmt(set.freqs[i][b]), fmt(vg), fmt(group_index(vg)));
        }
    }
    run.write("bands.csv", &csv)?;
    let fracs: Vec<f64> = (0..set.k_samples.len()).map(|i| set.k_fraction(i)).collect();
    let gaps = bulk_gaps(&p, cfg.order, &fracs, cfg.n_ky, cfg.n_bands)?;
    let rows: Vec<GapRow> = gaps
        .iter()
        .enumerate()
        .map(|(i, g)| GapRow {
            k_over_pi_a: g.k_over_pi_a,
            light_line_thz: g.light_line_thz,
            gaps_thz: g.gaps.clone(),
            bands_in_gap: (0..set.n_bands()).filter(|&b| set.freqs[i][b] < g.light_line_thz && g.contains(set.freqs[i][b])).collect(),
        })
        .collect();
    run.write_json("gaps.json", &json!({ "rows": rows, "warnings": set.warnings }))?;
    run.finish()
}

fn resolve_mode(solver: &Solver, mode: &slowlight::trap::ModeRef, nu_thz: f64) -> Result<Field3D> {
    match mode.k_frac {
        Some(k) => guided_mode(solver, k, mode.near_thz),
        None => guided_mode_at_frequency(solver, mode.near_thz, nu_thz, 0.5, 1.0),
    }
}

#[derive(Serialize)]
struct ModeSummary {
    k_over_pi_a: f64,
    #[serde(rename = "freq_THz")]
    freq_thz: f64,
    vg_over_c: f64,
    ng: f64,
    band_index: usize,
}

fn summary(f: &Field3D) -> ModeSummary {
    let k = f.mode.k * f.a() / std::f64::consts::PI;
    ModeSummary { k_over_pi_a: k, freq_thz: f.freq(), vg_over_c: f.vg(), ng: group_index(f.vg()), band_index: f.mode.band }
}

pub fn mode_field(ctx: &Context) -> Result<()> {
    let cfg: ModeFieldConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("mode-field", &cfg)?;
    let table = ctx.atoms(&mut run)?;
    let f = resolve_mode(&solver, &cfg.mode, nm_to_thz(table.d2().lambda_nm))?;
    let m = &f.mode;
    let mut csv = String::from("nx,ny,a_nm,Wy_nm\n");
    let _ = writeln!(csv, "{},{},{},{}", m.nx, m.ny, fmt(m.a), fmt(m.wy));
    csv += "ix,iy,re_ex,im_ex,re_ey,im_ey\n";
    for ix in 0..m.nx {
        for iy in 0..m.ny {
            let [ex, ey, _] = f.grid_field(ix, iy, 0.0);
            let _ = write!(csv, "{ix},{iy},{}", csv_line(&[ex.re, ex.im, ey.re, ey.im]));
        }
    }
    run.write("mode_field.csv", &csv)?;
    run.write_json("mode.json", &summary(&f))?;
    run.finish()
}

pub fn optimize_cmd(ctx: &Context) -> Result<()> {
    let mut cfg: OptimizeConfig = ctx.parse()?;
    if let Some(s) = ctx.seed {
        cfg.spec.seed = s;
    }
    let p = cfg.validate()?;
    let mut run = ctx.start("optimize", &cfg)?;
    let (best, report, result) = optimize(&p, &cfg.spec)?;
    let mut csv = String::from("iter,cost,dy1,dr1,dy2,dr2,dy3,dr3\n");
    for t in &result.trace {
        let _ = write!(csv, "{},{}", t.iter, csv_line(&std::iter::once(t.cost).chain(t.params).collect::<Vec<_>>()));
    }
    run.write("trace.csv", &csv)?;
    run.write_json("structure.json", &StructureConfig::from_params(&best))?;
    run.write_json(
        "optimize.json",
        &json!({
            "converged": result.converged,
            "evaluations": result.evaluations,
            "best_cost": result.best_cost,
            "params": result.best,
            "report": report,
        }),
    )?;
    run.finish()
}

pub fn purcell(ctx: &Context) -> Result<()> {
    let cfg: PurcellConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("purcell", &cfg)?;
    let table = ctx.atoms(&mut run)?;
    let nu0 = nm_to_thz(cfg.coupling.lambda0_nm.unwrap_or(table.d2().lambda_nm));
    let f = resolve_mode(&solver, &cfg.mode, nu0)?;
    let x = cfg.x_nm.unwrap_or(-p.a / 2.0);
    let pos = [x, -cfg.distance_nm, cfg.z_nm];
    let g = gamma1d(&f, &cfg.channel, pos, &table, &cfg.coupling)?;
    let fr = polarization_fractions(f.field_at(pos[0], pos[1], pos[2]), cfg.coupling.axis_sign);
    run.write_json(
        "purcell.json",
        &json!({
            "mode": summary(&f),
            "position_nm": pos,
            "gamma1d_over_gamma0": g,
            "beta": beta_factor(g, cfg.coupling.gamma_prime),
            "polarization_fractions": { "sigma_minus": fr[0], "pi": fr[1], "sigma_plus": fr[2] },
        }),
    )?;
    let points: Vec<[f64; 3]> = cfg.profile_nm.iter().map(|&d| [x, -d, cfg.z_nm]).collect();
    let map = coupling_map(&f, &cfg.channel, &points, &table, &cfg.coupling)?;
    run.write("purcell_profile.csv", &map.to_csv())?;
    run.finish()
}

fn beams_power_mw(settings: &TrapSettings, gamma_blue: f64, gamma_red: f64, model_red: &[bool]) -> Vec<f64> {
    settings.beams.iter().zip(model_red).map(|(b, &r)| b.power_mw * if r { gamma_red } else { gamma_blue }).collect()
}

fn potential_csv(model: &TrapModel, mf: f64, points: &[[f64; 3]]) -> String {
    let mut csv = String::from("x_nm,y_nm,z_nm,U_mK,scalar_red_mK,scalar_blue_mK,vector_mK,cp_mK\n");
    let f = model.f;
    for &r in points {
        let c = model.components(r);
        let u = c.total(mf / f);
        csv += &csv_line(&[r[0], r[1], r[2], joule_to_mk(u), joule_to_mk(c.scalar_red), joule_to_mk(c.scalar_blue), joule_to_mk(c.vector * mf / f), joule_to_mk(c.cp)]);
    }
    csv
}

fn write_trap(run: &mut Run, sol: &TrapSolution, settings: &TrapSettings, extra: serde_json::Value) -> Result<()> {
    let r = sol.report.r_min_nm;
    let mut out = json!({ "report": sol.report, "offset_over_a": slowlight::trap::intensity_offset(&sol.model, r[1], r[2], 64) });
    if let (Some(o), serde_json::Value::Object(e)) = (out.as_object_mut(), extra) {
        o.extend(e);
    }
    run.write_json("trap.json", &out)?;
    let mf = settings.atom.mf;
    let along_y: Vec<[f64; 3]> = (0..=54).map(|i| [r[0], -(15.0 + 5.0 * i as f64), r[2]]).collect();
    let along_z: Vec<[f64; 3]> = (0..=60).map(|i| [r[0], r[1], -300.0 + 10.0 * i as f64]).collect();
    let a = sol.model.a;
    let along_x: Vec<[f64; 3]> = (0..=32).map(|i| [r[0] - a + a * i as f64 / 16.0, r[1], r[2]]).collect();
    run.write("potential_y.csv", &potential_csv(&sol.model, mf, &along_y))?;
    run.write("potential_z.csv", &potential_csv(&sol.model, mf, &along_z))?;
    run.write("potential_x.csv", &potential_csv(&sol.model, mf, &along_x))?;
    Ok(())
}

fn c3_for(ctx: &Context, run: &mut Run, settings: &TrapSettings, table: &TransitionTable) -> Result<Option<slowlight::casimir::CasimirCoefficient>> {
    if settings.include_cp && settings.c3_hz_um3.is_none() {
        let perm = ctx.permittivity(run)?;
        return settings.c3(table, &perm);
    }
    settings.c3(table, &PermittivityTable::bundled())
}

pub fn trap(ctx: &Context) -> Result<()> {
    let cfg: TrapConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("trap", &cfg)?;
    let table = ctx.atoms(&mut run)?;
    let c3 = c3_for(ctx, &mut run, &cfg.settings, &table)?;
    let s = &cfg.settings;
    let beams = build_beams(&solver, &s.beams, (s.k_range[0], s.k_range[1]))?;
    match cfg.calibration {
        None => {
            let sol = trap_from_beams(&solver, beams, s, &table, c3)?;
            write_trap(&mut run, &sol, s, json!({}))?;
        }
        Some(t) => {
            let red: Vec<bool> = beams
                .iter()
                .map(|b| Ok(slowlight::atoms::polarizability(&table, slowlight::atoms::Frequency::Real(b.omega))?.alpha_s > 0.0))
                .collect::<Result<_>>()?;
            let cal = calibrate_powers(&solver, &beams, s, &table, c3, t.distance_nm, t.depth_mk)?;
            let powers = beams_power_mw(s, cal.gamma_blue, cal.gamma_red, &red);
            let extra = json!({ "calibration": { "gamma_blue": cal.gamma_blue, "gamma_red": cal.gamma_red, "power_mW": powers } });
            write_trap(&mut run, &cal.solution, s, extra)?;
        }
    }
    run.finish()
}

pub fn trap_scan(ctx: &Context) -> Result<()> {
    let cfg: TrapScanConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("trap-scan", &cfg)?;
    let table = ctx.atoms(&mut run)?;
    let c3 = c3_for(ctx, &mut run, &cfg.settings, &table)?;
    let res = wavelength_scan(&solver, &cfg.settings, &table, c3, cfg.color, &cfg.wavelengths_nm.values(), cfg.power_cap_mw, cfg.power_step_mw)?;
    let mut csv = String::from("wavelength_nm,feasible,min_power_mW,distance_nm\n");
    for r in &res.rows {
        let opt = |v: Option<f64>| v.map(fmt).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", fmt(r.wavelength_nm), r.feasible, opt(r.min_power_mw), opt(r.distance_nm));
    }
    run.write("trap_scan.csv", &csv)?;
    run.write_json("trap_scan.json", &json!({ "intervals_nm": res.intervals }))?;
    run.finish()
}

pub fn zeeman(ctx: &Context) -> Result<()> {
    let cfg: ZeemanConfig = ctx.parse()?;
    let p = cfg.validate()?;
    let solver = Solver::new(&p, cfg.order)?;
    let mut run = ctx.start("zeeman", &cfg)?;
    let table = ctx.atoms(&mut run)?;
    let c3 = c3_for(ctx, &mut run, &cfg.settings, &table)?;
    let z = zeeman_compensation(&solver, &cfg.settings, &table, c3)?;
    run.write_json("zeeman.json", &z)?;
    run.finish()
}

pub fn c3(ctx: &Context) -> Result<()> {
    let cfg: C3Config = ctx.parse()?;
    let mut run = ctx.start("c3", &cfg)?;
    let mut table = ctx.atoms(&mut run)?;
    if cfg.d_lines_only {
        table = table.d_lines_only();
    }
    let perm = ctx.permittivity(&mut run)?;
    let c = compute_c3(&perm, &table)?;
    run.write_json(
        "c3.json",
        &json!({
            "c3_Hz_um3": c.c3_spectroscopic,
            "c3_J_m3": c.c3_si,
            "quadrature_error": c.quadrature_error,
            "nodes": c.nodes,
            "permittivity_source": perm.provenance,
        }),
    )?;
    run.finish()
}

pub fn read_config(path: Option<&Path>) -> Result<Option<String>> {
    path.map(|p| std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))).transpose()
}
