//! Experiment orchestration for each command.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use serde::Serialize;

use nlhom::capacity::{self, CapacitaryPoint};
use nlhom::homogenize::{self, HomDensity};
use nlhom::inequalities::{self, InequalityReport};
use nlhom::minimize::SolveOptions;
use nlhom::regimes::{self, NegligibilityGrid};
use nlhom::{fields, Domain, Field, Kernel};

use crate::config::{Command, RunConfig};
use crate::CliError;

/// One asserted property of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Invariant {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// What a command produced.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Outcome {
    pub invariants: Vec<Invariant>,
    pub files: Vec<String>,
    pub solves: usize,
    pub unconverged: usize,
    pub max_grad_norm: f64,
}

impl Outcome {
    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.invariants.push(Invariant { name: name.into(), passed, detail });
    }

    fn solve(&mut self, grad_norm: f64, converged: bool) {
        self.solves += 1;
        if !converged {
            self.unconverged += 1;
        }
        self.max_grad_norm = self.max_grad_norm.max(grad_norm);
    }

    fn point(&mut self, p: &CapacitaryPoint) {
        if p.iterations > 0 || p.value != 0.0 {
            self.solve(p.grad_norm, p.converged);
        }
    }

    pub fn all_passed(&self) -> bool {
        self.invariants.iter().all(|i| i.passed)
    }
}

/// Self-describing CSV table.
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Table { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    fn write(&self, dir: &Path, name: &str, out: &mut Outcome) -> Result<(), CliError> {
        let path = dir.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        w.write_record(&self.header).map_err(|e| CliError::Io(e.to_string()))?;
        for r in &self.rows {
            w.write_record(r).map_err(|e| CliError::Io(e.to_string()))?;
        }
        w.flush()?;
        out.files.push(name.to_string());
        Ok(())
    }
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn vec_str(z: &[f64]) -> String {
    z.iter().map(|v| num(*v)).collect::<Vec<_>>().join(";")
}

fn dump(field: &Field, dir: &Path, name: &str, out: &mut Outcome) -> Result<(), CliError> {
    let f = File::create(dir.join(name))?;
    fields::write_binary(field, BufWriter::new(f))?;
    out.files.push(name.to_string());
    Ok(())
}

fn solve_opts(cfg: &RunConfig) -> SolveOptions<f64> {
    SolveOptions {
        tol: cfg.solver.tol,
        max_iter: cfg.solver.max_iter,
        memory: cfg.solver.memory,
        ..SolveOptions::default()
    }
}

/// Relative homogeneity defect `|φ(2z) - 2^p φ(z)| / (2^p φ(z))` over all
/// pairs `(z, 2z)` present in `values`.
fn homogeneity(values: &[(Vec<f64>, f64)], p: f64) -> Option<f64> {
    let mut worst: Option<f64> = None;
    for (z, v) in values {
        let z2: Vec<f64> = z.iter().map(|x| 2.0 * x).collect();
        if let Some((_, v2)) = values.iter().find(|(w, _)| *w == z2) {
            let expect = 2f64.powf(p) * v;
            let defect = if expect == 0.0 { v2.abs() } else { (v2 - expect).abs() / expect.abs() };
            worst = Some(worst.map_or(defect, |w: f64| w.max(defect)));
        }
    }
    worst
}

pub fn execute(cfg: &RunConfig, dir: &Path) -> Result<Outcome, CliError> {
    fs::create_dir_all(dir)?;
    let k = cfg.kernel.build()?;
    let mut out = Outcome::default();
    match cfg.command {
        Command::VerifyKernel => verify_kernel(cfg, &k, dir, &mut out)?,
        Command::Fhom => fhom(cfg, &k, dir, &mut out)?,
        Command::Phi => phi(cfg, &k, dir, &mut out)?,
        Command::PhiNl => phi_nl(cfg, &k, dir, &mut out)?,
        Command::Capterm => capterm(cfg, &k, dir, &mut out)?,
        Command::GnsSuite => gns_suite(cfg, &k, dir, &mut out)?,
        Command::RegimeSweep => regime_sweep(dir, &mut out)?,
        Command::Recovery => recovery(cfg, &k, dir, &mut out)?,
        Command::Negligibility => negligibility(cfg, &k, dir, &mut out)?,
    }
    Ok(out)
}

fn verify_kernel(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let rep = k.verify_assumptions(cfg.samples, cfg.seed);
    let mut t = Table::new(&[
        "kernel",
        "d",
        "m",
        "p",
        "samples",
        "seed",
        "homogeneity_violation",
        "envelope_violation",
        "zero_at_origin",
        "min_short_range_envelope",
        "lambda0",
        "short_range_ok",
        "g1_integral",
        "g1_finite",
        "lipschitz_constant",
    ]);
    t.push(vec![
        k.name().to_string(),
        k.d.to_string(),
        k.m.to_string(),
        num(k.p),
        rep.samples.to_string(),
        cfg.seed.to_string(),
        num(rep.homogeneity_violation),
        num(rep.envelope_violation),
        num(rep.zero_at_origin),
        num(rep.min_short_range_envelope),
        num(rep.lambda0),
        rep.short_range_ok.to_string(),
        num(rep.g1_integral),
        rep.g1_finite.to_string(),
        num(rep.lipschitz_constant),
    ]);
    t.write(dir, "assumptions.csv", out)?;
    out.check("kernel_assumptions", rep.passed(1e-9), format!("{rep:?}"));
    Ok(())
}

fn fhom(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let h = cfg.geometry.h.unwrap_or(0.25);
    let opts = solve_opts(cfg);
    let mut t = Table::new(&["s", "r", "h", "value", "grad_norm", "converged", "iterations"]);
    let mut summary = Table::new(&["s", "extrapolated", "convex_formula", "convex_formula_error"]);
    for s in &cfg.schedules.s {
        let res = homogenize::fhom_cell_schedule(k, s, &cfg.schedules.r, h, &opts)?;
        for v in &res.values {
            out.solve(v.report.grad_norm, v.report.converged);
            t.push(vec![
                vec_str(s),
                num(v.r),
                num(v.h),
                num(v.value),
                num(v.report.grad_norm),
                v.report.converged.to_string(),
                v.report.iterations.to_string(),
            ]);
        }
        let (cf, ce) = res.convex_formula_value.map_or((String::new(), String::new()), |e| (num(e.value), num(e.error)));
        summary.push(vec![vec_str(s), num(res.extrapolated), cf, ce]);
        if let (Some(e), Some(first), Some(last)) = (res.convex_formula_value, res.values.first(), res.values.last()) {
            if res.values.len() > 1 {
                let (g0, g1) = ((first.value - e.value).abs(), (last.value - e.value).abs());
                out.check(
                    &format!("fhom_improves[{}]", vec_str(s)),
                    g1 < g0,
                    format!("gap {g0} at R = {} -> {g1} at R = {}", first.r, last.r),
                );
            }
        }
    }
    t.write(dir, "fhom.csv", out)?;
    summary.write(dir, "fhom_summary.csv", out)
}

fn phi(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let h = cfg.geometry.h.unwrap_or(0.125);
    let opts = solve_opts(cfg);
    let dens = HomDensity::new(k, 1)?;
    let mut t = Table::new(&["z", "r", "h", "value", "grad_norm", "converged", "iterations"]);
    let mut summary = Table::new(&["z", "value", "value_inverse_r", "monotone", "closed_form"]);
    let mut by_r: Vec<(Vec<f64>, f64)> = Vec::new();
    for z in &cfg.schedules.z {
        let res = capacity::phi_local(&dens, k.d, z, &cfg.schedules.r, h, &opts)?;
        for pt in &res.points {
            out.point(pt);
            t.push(vec![
                vec_str(z),
                num(pt.r),
                num(pt.h),
                num(pt.value),
                num(pt.grad_norm),
                pt.converged.to_string(),
                pt.iterations.to_string(),
            ]);
        }
        if let Some(last) = res.points.last() {
            by_r.push((z.clone(), last.value));
        }
        let closed = match dens {
            HomDensity::Power { kappa, p } => num(capacity::phi_power_closed_form(kappa, k.d, p, z)?),
            _ => String::new(),
        };
        summary.push(vec![vec_str(z), num(res.value), num(res.value_inverse_r), res.monotone.to_string(), closed]);
        out.check(&format!("phi_monotone_in_r[{}]", vec_str(z)), res.monotone, String::new());
    }
    if let Some(defect) = homogeneity(&by_r, k.p) {
        out.check("phi_homogeneity", defect <= 10.0 * cfg.solver.tol, format!("relative defect {defect}"));
    }
    t.write(dir, "phi.csv", out)?;
    summary.write(dir, "phi_summary.csv", out)
}

fn phi_nl(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let opts = solve_opts(cfg);
    let tol = cfg.solver.tol;
    let mut t = Table::new(&["alpha", "t", "z", "r", "h", "value", "grad_norm", "converged", "iterations"]);
    let mut summary = Table::new(&["alpha", "t", "z", "value", "value_inverse_r", "monotone_in_r"]);
    for (ai, &alpha) in cfg.schedules.eps.iter().enumerate() {
        let h = cfg.geometry.h.unwrap_or(alpha / cfg.geometry.resolution);
        for (zi, z) in cfg.schedules.z.iter().enumerate() {
            let mut limits = Vec::new();
            for (ti, &tt) in cfg.schedules.t.iter().enumerate() {
                let (res, field) = capacity::phi_nonlocal(k, alpha, tt, z, &cfg.schedules.r, h, &opts)?;
                for pt in &res.points {
                    out.point(pt);
                    t.push(vec![
                        num(alpha),
                        num(tt),
                        vec_str(z),
                        num(pt.r),
                        num(pt.h),
                        num(pt.value),
                        num(pt.grad_norm),
                        pt.converged.to_string(),
                        pt.iterations.to_string(),
                    ]);
                }
                if let Some(f) = field {
                    dump(&f, dir, &format!("phi_nl_a{ai}_t{ti}_z{zi}.bin"), out)?;
                }
                summary.push(vec![
                    num(alpha),
                    num(tt),
                    vec_str(z),
                    num(res.value),
                    num(res.value_inverse_r),
                    res.monotone.to_string(),
                ]);
                out.check(
                    &format!("phi_nl_monotone_in_r[alpha={alpha},t={tt},z={}]", vec_str(z)),
                    res.monotone,
                    format!("{:?}", res.points.iter().map(|p| p.value).collect::<Vec<_>>()),
                );
                limits.push((tt, res.value));
            }
            limits.sort_by(|a, b| a.0.total_cmp(&b.0));
            let nondecreasing = limits.windows(2).all(|w| w[1].1 >= w[0].1 * (1.0 - 10.0 * tol));
            if limits.len() > 1 {
                out.check(
                    &format!("phi_nl_nondecreasing_in_t[alpha={alpha},z={}]", vec_str(z)),
                    nondecreasing,
                    format!("{limits:?}"),
                );
            }
        }
    }
    t.write(dir, "phi_nl.csv", out)?;
    summary.write(dir, "phi_nl_summary.csv", out)
}

fn capterm(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let opts = solve_opts(cfg);
    let z = &cfg.schedules.z[0];
    let tt = cfg.schedules.t[0];
    let dens = HomDensity::new(&k.truncate(tt)?, 1)?;
    let target = match dens {
        HomDensity::Power { kappa, p } => capacity::phi_power_closed_form(kappa, k.d, p, z)?,
        _ => {
            return Err(CliError::Config(
                "capterm needs a density with a closed-form capacitary target (isotropic kernel)".into(),
            ))
        }
    };
    let schedule: Vec<(f64, f64, f64)> = cfg
        .schedules
        .eps
        .iter()
        .zip(&cfg.schedules.r)
        .map(|(&e, &r)| (e, r, cfg.geometry.h.unwrap_or(e / cfg.geometry.resolution)))
        .collect();
    let tab = capacity::capterm_convergence(k, tt, z, &schedule, target, &opts)?;
    let mut t = Table::new(&[
        "eps",
        "r",
        "h",
        "t",
        "z",
        "value",
        "target",
        "gap",
        "under_resolved",
        "grad_norm",
        "converged",
        "iterations",
    ]);
    for row in &tab.rows {
        let pt = &row.point;
        out.point(pt);
        t.push(vec![
            num(pt.epsilon.unwrap_or(f64::NAN)),
            num(pt.r),
            num(pt.h),
            num(tt),
            vec_str(z),
            num(pt.value),
            num(target),
            num(row.gap),
            row.under_resolved.to_string(),
            num(pt.grad_norm),
            pt.converged.to_string(),
            pt.iterations.to_string(),
        ]);
    }
    t.write(dir, "capterm.csv", out)?;
    out.check(
        "capterm_gaps_decreasing",
        tab.gaps_decreasing,
        format!("{:?}", tab.rows.iter().map(|r| r.gap).collect::<Vec<_>>()),
    );
    Ok(())
}

fn inequality_rows(t: &mut Table, kind: &str, reps: &[InequalityReport]) {
    for r in reps {
        t.push(vec![
            kind.to_string(),
            r.corpus_id.map_or(String::new(), |i| i.to_string()),
            num(r.eps),
            num(r.r),
            num(r.p),
            num(r.lhs),
            num(r.rhs_raw),
            num(r.ratio),
        ]);
    }
}

fn spread(values: &[f64]) -> f64 {
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    hi / lo
}

fn gns_suite(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let ic = cfg.inequality;
    let fields = inequalities::corpus(k.d, cfg.seed, ic.corpus_size);
    let mut t = Table::new(&["check", "corpus_id", "eps", "r", "p", "lhs", "rhs_raw", "ratio"]);
    let mut summary = Table::new(&["check", "eps", "max_ratio"]);
    let (mut gmax, mut pmax) = (Vec::new(), Vec::new());
    for &eps in &cfg.schedules.eps {
        let h = eps / ic.resolution;
        let g = inequalities::gns_corpus(&fields, eps, ic.r, k.p, h)?;
        let pw = inequalities::pw_corpus(&fields, eps, ic.r, k.p, h)?;
        inequality_rows(&mut t, "gns", &g);
        inequality_rows(&mut t, "pw", &pw);
        gmax.push(inequalities::max_ratio(&g));
        pmax.push(inequalities::max_ratio(&pw));
        summary.push(vec!["gns".into(), num(eps), num(*gmax.last().unwrap_or(&0.0))]);
        summary.push(vec!["pw".into(), num(eps), num(*pmax.last().unwrap_or(&0.0))]);
    }
    t.write(dir, "inequalities.csv", out)?;
    summary.write(dir, "inequalities_summary.csv", out)?;
    out.check("gns_max_ratio_stable", spread(&gmax) < 2.0, format!("{gmax:?}"));
    out.check("pw_max_ratio_stable", spread(&pmax) < 2.0, format!("{pmax:?}"));
    // exact invariance under u -> 2u on the first corpus field
    if let Some(f) = fields.first() {
        let eps = cfg.schedules.eps[0];
        let dom = Domain::centered_cube(k.d, 1.0, eps / ic.resolution)?;
        let u = f.sample(&dom);
        let a = inequalities::gns_check(&u, eps, ic.r, k.p)?;
        let b = inequalities::gns_check(&u.scaled(2.0).with_exterior(vec![0.0]), eps, ic.r, k.p)?;
        let rel = (a.ratio - b.ratio).abs() / a.ratio.abs().max(f64::MIN_POSITIVE);
        out.check("gns_scaling_invariance", rel <= 1e-12, format!("relative difference {rel}"));
    }
    Ok(())
}

fn regime_sweep(dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let mut t = Table::new(&["law", "d", "p", "alpha", "beta", "cond_b", "class", "expected", "limit", "matches"]);
    let mut all = true;
    for (law, expected) in regimes::canonical_fixtures()? {
        let got = regimes::classify_regime(&law);
        let ok = got == expected;
        all &= ok;
        t.push(vec![
            law.name.clone(),
            law.d.to_string(),
            num(law.p),
            law.alpha.to_string(),
            law.beta.to_string(),
            law.cond_b.to_string(),
            got.tag().into(),
            expected.tag().into(),
            got.limit_form().into(),
            ok.to_string(),
        ]);
    }
    t.write(dir, "regimes.csv", out)?;
    out.check("regime_table", all, String::new());
    Ok(())
}

fn recovery(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let eps = cfg.schedules.eps[0];
    let tt = cfg.schedules.t[0];
    let h = cfg.geometry.h.unwrap_or(eps / cfg.geometry.resolution);
    let half = cfg.geometry.half.unwrap_or(0.5);
    let (delta, r) = match (&cfg.geometry.perforation, &cfg.law) {
        (Some(p), _) => (p.delta, p.r),
        (None, Some(l)) => cfg.build_law(l)?.scales(eps),
        (None, None) => return Err(CliError::Config("recovery needs a perforation".into())),
    };
    let dom = Domain::centered_cube(k.d, half, h)?;
    let value = cfg.geometry.field.clone().unwrap_or_else(|| vec![1.0; k.m]);
    let u = Field::constant(dom, &value);
    let rec = regimes::recovery_construction(k, &u, eps, delta, r, tt, &solve_opts(cfg))?;
    let mut t = Table::new(&["eps", "delta", "r", "h", "center", "z", "energy", "predicted", "relative_gap", "grad_norm"]);
    let mut worst = 0.0f64;
    for p in &rec.perforations {
        out.solve(p.grad_norm, true);
        worst = worst.max(p.relative_gap);
        t.push(vec![
            num(eps),
            num(delta),
            num(r),
            num(h),
            vec_str(&p.center),
            vec_str(&p.z),
            num(p.energy),
            num(p.predicted),
            num(p.relative_gap),
            num(p.grad_norm),
        ]);
    }
    t.write(dir, "recovery.csv", out)?;
    let mut s = Table::new(&["eps", "delta", "r", "h", "total", "bulk", "perforation", "cross"]);
    let perf: f64 = rec.perforations.iter().map(|p| p.energy).sum();
    s.push(vec![num(eps), num(delta), num(r), num(h), num(rec.total), num(rec.bulk), num(perf), num(rec.cross)]);
    s.write(dir, "recovery_summary.csv", out)?;
    dump(&rec.field, dir, "recovery_field.bin", out)?;
    out.check("recovery_rescaling", worst <= 1e-10, format!("max relative gap {worst}"));
    Ok(())
}

fn negligibility(cfg: &RunConfig, k: &Kernel, dir: &Path, out: &mut Outcome) -> Result<(), CliError> {
    let law = cfg.build_law(cfg.law.as_ref().ok_or_else(|| CliError::Config("missing [law]".into()))?)?;
    let half = cfg.geometry.half.unwrap_or(0.5);
    let ratio = cfg.geometry.h_over_r;
    let grid = move |_e: f64, _d: f64, r: f64| NegligibilityGrid { half, h: ratio * r };
    let t_cut = cfg.schedules.t.first().copied();
    let one = |_x: &[f64]| vec![1.0; k.m];
    let smooth = |x: &[f64]| {
        let v = 1.0 + 0.5 * (2.0 * x[0] + 1.0).sin() * x.iter().skip(1).map(|y| (3.0 * y).cos()).product::<f64>();
        vec![v; k.m]
    };
    let mut t = Table::new(&[
        "field", "eps", "delta", "r", "h", "pinned_cells", "gap", "bound", "ratio", "c_recorded", "within",
    ]);
    let tests: [(&str, &(dyn Fn(&[f64]) -> Vec<f64> + Sync)); 2] = [("one", &one), ("smooth", &smooth)];
    for (name, f) in tests {
        let tab = regimes::negligibility_check(k, &law, f, &cfg.schedules.eps, t_cut, &grid)?;
        for row in &tab.rows {
            t.push(vec![
                name.to_string(),
                num(row.eps),
                num(row.delta),
                num(row.r),
                num(row.h),
                row.pinned_cells.to_string(),
                num(row.gap),
                num(row.bound),
                num(row.ratio),
                num(tab.c_recorded),
                row.within.to_string(),
            ]);
        }
        out.check(
            &format!("negligibility_bound[{name}]"),
            tab.all_within && tab.rows.len() >= 3,
            format!("ratios {:?}", tab.rows.iter().map(|r| r.ratio).collect::<Vec<_>>()),
        );
    }
    t.write(dir, "negligibility.csv", out)
}
