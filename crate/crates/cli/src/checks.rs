//! Executes one resolved check against a scenario and turns the numbers into report rows.

use crate::report::{CheckReport, Row};
use crate::scenario::{CheckName, Resolved, ResolvedCheck};
use sheetspace::fields::{random_field, rng_for};
use sheetspace::flows::{gradient_descent, FlowReport};
use sheetspace::grid::ParamDomain;
use sheetspace::kaehler::{compatibility_residual, complex_structure_residuals, sweep, SweepCheck};
use sheetspace::sheet::DiscreteSheet;
use sheetspace::twistor::{
    gauss_lift, legendrian_residual, levi_form, lifted_field, observable_and_derivative, observable_field, random_point, synthetic_tilted,
    theta_residual, vertical_field,
};
use sheetspace::verify::fit_slope;
use sheetspace::Result;
use std::time::Instant;

/// Gradient-consistency bound for logged flow steps.
pub const FLOW_CONSISTENCY_TOL: f64 = 1e-6;
pub const LIFT_MIN_SLOPE: f64 = 2.0;
pub const LEGENDRIAN_MIN_SLOPE: f64 = 1.0;
/// Residual a non-lift or a non-Legendrian field must exceed.
pub const DISCRIMINATION_FLOOR: f64 = 1e-2;
pub const LEVI_DRIFT_TOL: f64 = 0.1;
pub const CLOSED_OBSERVABLE_TOL: f64 = 1e-8;

pub struct Context<'a> {
    pub scenario: &'a Resolved,
    /// The scenario sheet, or why it is not a world-sheet.
    pub sheet: &'a Result<DiscreteSheet>,
}

impl Context<'_> {
    fn grid_label(domain: &ParamDomain) -> String {
        domain.shape().iter().map(|s| s.to_string()).collect::<Vec<_>>().join("x")
    }

    fn label(&self) -> String {
        Context::grid_label(&self.scenario.domain)
    }

    fn sheet_on(&self, samples: usize) -> Result<DiscreteSheet> {
        let dom = self.scenario.domain.resampled(&vec![samples; self.scenario.domain.k()])?;
        DiscreteSheet::from_map(self.scenario.metric.clone(), dom, &self.scenario.map)
    }

    fn sheet(&self) -> Result<&DiscreteSheet> {
        self.sheet.as_ref().map_err(|e| e.clone())
    }
}

pub fn run(ctx: &Context<'_>, check: &ResolvedCheck) -> CheckReport {
    let start = Instant::now();
    let mut report = CheckReport::new(check.name.as_str());
    let outcome = match check.name {
        CheckName::Validate => validate(ctx, &mut report),
        CheckName::Compatibility => compatibility(ctx, check, &mut report),
        CheckName::Domega => sweep_check(ctx, check, &SweepCheck::DOmega, &mut report),
        CheckName::Nijenhuis => sweep_check(ctx, check, &SweepCheck::Nijenhuis, &mut report),
        CheckName::Dlambda => {
            let ups = check.upsilon.as_ref().expect("resolved with a default");
            sweep_check(ctx, check, &SweepCheck::DLambda(ups), &mut report)
        }
        CheckName::LiftTheta => lift_theta(ctx, check, &mut report),
        CheckName::Legendrian => legendrian(ctx, check, &mut report),
        CheckName::Levi => levi(ctx, check, &mut report),
        CheckName::Observable => observable(ctx, check, &mut report),
        CheckName::Flow => flow(ctx, &mut report),
    };
    if let Err(e) = outcome {
        report.fail(ctx.label(), e);
    }
    report.finish(start.elapsed().as_secs_f64());
    report
}

fn validate(ctx: &Context<'_>, rep: &mut CheckReport) -> Result<()> {
    let sheet = ctx.sheet()?;
    let min_det = (0..sheet.len()).map(|p| sheet.induced(p).determinant().abs()).fold(f64::INFINITY, f64::min);
    rep.param("sigma", sheet.sigma());
    rep.row(Row::new("min |det induced|", ctx.label()).residual(min_det).pass(true));
    Ok(())
}

fn compatibility(ctx: &Context<'_>, check: &ResolvedCheck, rep: &mut CheckReport) -> Result<()> {
    let sheet = ctx.sheet()?;
    let sw = &check.sweep;
    rep.seed(sw.seed);
    rep.param("trials", sw.trials);
    let tol = check.threshold.unwrap_or(1e-10);
    let r = compatibility_residual(sheet, sw.trials, sw.seed)?;
    rep.row(Row::new("h(v,w) = omega(Jv,w)", ctx.label()).residual(r).pass(r < tol));
    let cs = complex_structure_residuals(sheet, sw.trials, sw.seed)?;
    rep.row(Row::new("J^2 = -1", ctx.label()).residual(cs.j_squared).pass(cs.j_squared < 1e-12));
    rep.row(Row::new("g(Jv,Jw) = g(v,w)", ctx.label()).residual(cs.metric_invariance).pass(cs.metric_invariance < 1e-12));
    rep.row(Row::new("omega(Jv,Jw) = omega(v,w)", ctx.label()).residual(cs.omega_invariance).pass(cs.omega_invariance < tol));
    Ok(())
}

fn sweep_check(ctx: &Context<'_>, check: &ResolvedCheck, which: &SweepCheck<'_>, rep: &mut CheckReport) -> Result<()> {
    let sheet = ctx.sheet()?;
    let sw = &check.sweep;
    rep.seed(sw.seed);
    rep.param("trials", sw.trials);
    rep.param("expected_slope", sw.expected_slope);
    rep.param("slope_tol", sw.slope_tol);
    let tol = check.threshold.unwrap_or(1e-4);
    rep.param("threshold", tol);
    let mut slopes = Vec::new();
    for (t, res) in sweep(sheet, which, sw)?.into_iter().enumerate() {
        let ok = res.slope.is_some_and(|s| sw.slope_ok(s)) && res.last() < tol;
        for (e, r) in res.eps.iter().zip(&res.residuals) {
            rep.row(Row::new(format!("trial={t}"), ctx.label()).epsilon(*e).residual(*r).slope(res.slope).pass(ok));
        }
        slopes.extend(res.slope);
    }
    rep.summary_slope(slopes.iter().cloned().reduce(f64::min));
    Ok(())
}

fn lift_theta(ctx: &Context<'_>, check: &ResolvedCheck, rep: &mut CheckReport) -> Result<()> {
    let mut res = Vec::new();
    let mut labels = Vec::new();
    for &g in &check.grids {
        let s = ctx.sheet_on(g)?;
        labels.push(Context::grid_label(s.domain()));
        res.push(theta_residual(&gauss_lift(&s)?));
    }
    let inv: Vec<f64> = check.grids.iter().map(|&g| 1.0 / g as f64).collect();
    let slope = fit_slope(&inv, &res);
    let ok = slope.is_some_and(|s| s >= LIFT_MIN_SLOPE);
    rep.param("min_slope", LIFT_MIN_SLOPE);
    for (l, r) in labels.into_iter().zip(&res) {
        rep.row(Row::new("gauss lift", l).residual(*r).slope(slope).pass(ok));
    }
    rep.summary_slope(slope);
    let sheet = ctx.sheet()?;
    rep.param("alpha", check.alpha);
    let tilted = theta_residual(&synthetic_tilted(sheet, check.alpha, sheet.k() - 1)?);
    rep.row(Row::new("synthetic tilted", ctx.label()).residual(tilted).pass(tilted > DISCRIMINATION_FLOOR));
    Ok(())
}

fn legendrian(ctx: &Context<'_>, check: &ResolvedCheck, rep: &mut CheckReport) -> Result<()> {
    let sw = &check.sweep;
    rep.seed(sw.seed);
    let mut res = Vec::new();
    let mut labels = Vec::new();
    for (&eps, &g) in sw.eps.iter().zip(&check.grids) {
        let s = ctx.sheet_on(g)?;
        let ts = gauss_lift(&s)?;
        let v = random_field(&s, &mut rng_for(sw.seed, 0));
        res.push(legendrian_residual(&ts, &lifted_field(&s, &v, eps, ts.gauge_index())?)?);
        labels.push(Context::grid_label(s.domain()));
    }
    let slope = fit_slope(&sw.eps, &res);
    let ok = slope.is_some_and(|s| s >= LEGENDRIAN_MIN_SLOPE);
    rep.param("min_slope", LEGENDRIAN_MIN_SLOPE);
    for ((l, e), r) in labels.into_iter().zip(&sw.eps).zip(&res) {
        rep.row(Row::new("lifted field", l).epsilon(*e).residual(*r).slope(slope).pass(ok));
    }
    rep.summary_slope(slope);
    let sheet = ctx.sheet()?;
    let ts = gauss_lift(sheet)?;
    let bad = legendrian_residual(&ts, &vertical_field(sheet, sheet.k() - 1)?)?;
    rep.row(Row::new("vertical field", ctx.label()).residual(bad).pass(bad > DISCRIMINATION_FLOOR));
    Ok(())
}

fn levi(ctx: &Context<'_>, check: &ResolvedCheck, rep: &mut CheckReport) -> Result<()> {
    let metric = &ctx.scenario.metric;
    let seed = check.sweep.seed;
    rep.seed(seed);
    rep.param("points", check.points);
    rep.param("drift_tol", LEVI_DRIFT_TOL);
    let mut rng = rng_for(seed, 0);
    for k in 0..check.points {
        let p = random_point(metric, &mut rng)?;
        let a = levi_form(metric, &p, check.step)?;
        let b = levi_form(metric, &p, 0.5 * check.step)?;
        let drift = (a.smallest() - b.smallest()).abs() / a.smallest();
        let ok = a.smallest() > 0.0 && drift < LEVI_DRIFT_TOL && a.quotient_dim == metric.dim() - 2;
        rep.row(Row::new(format!("point={k} drift={drift:.3e}"), "-").epsilon(check.step).residual(a.smallest()).pass(ok));
    }
    Ok(())
}

fn observable(ctx: &Context<'_>, check: &ResolvedCheck, rep: &mut CheckReport) -> Result<()> {
    let sheet = ctx.sheet()?;
    let gamma = check.form.as_ref().expect("resolved with a default");
    let sw = &check.sweep;
    rep.seed(sw.seed);
    let ts = gauss_lift(sheet)?;
    let w = observable_field(&ts, &mut rng_for(sw.seed, 1))?;
    let obs = sw.eps.iter().map(|&e| observable_and_derivative(&ts, gamma, &w, e)).collect::<Result<Vec<_>>>()?;
    let res: Vec<f64> = obs.iter().map(|o| o.residual()).collect();
    let closed = gamma.is_constant() && sheet.domain().is_closed();
    rep.param("closed_form_case", closed);
    let (slope, ok) = if closed {
        let tol = check.threshold.unwrap_or(CLOSED_OBSERVABLE_TOL);
        rep.param("threshold", tol);
        (None, res.iter().all(|&r| r < tol))
    } else {
        let s = fit_slope(&sw.eps, &res);
        rep.param("expected_slope", sw.expected_slope);
        rep.param("slope_tol", sw.slope_tol);
        (s, s.is_some_and(|s| sw.slope_ok(s)))
    };
    for ((e, r), o) in sw.eps.iter().zip(&res).zip(&obs) {
        rep.row(Row::new(format!("formula={:.6e}", o.formula), ctx.label()).epsilon(*e).residual(*r).slope(slope).pass(ok));
    }
    rep.summary_slope(slope);
    Ok(())
}

fn flow(ctx: &Context<'_>, rep: &mut CheckReport) -> Result<()> {
    let settings = &ctx.scenario.flow;
    let sheet = DiscreteSheet::from_map(ctx.scenario.metric.clone(), settings.grid.clone(), &ctx.scenario.map)?;
    let label = Context::grid_label(&settings.grid);
    let cfg = &settings.config;
    rep.seed(cfg.seed);
    rep.param("eta", cfg.eta);
    rep.param("max_steps", cfg.max_steps);
    rep.param("tol", cfg.tol);
    rep.param("backtracking", cfg.backtracking);
    let out: FlowReport = gradient_descent(&sheet, cfg)?;
    rep.param("experimental", out.experimental);
    rep.param("converged", out.converged);
    rep.param("stalled", out.stalled);
    rep.param("steps", out.steps);
    let mut prev = f64::INFINITY;
    for s in &out.log {
        let ok = s.consistency < FLOW_CONSISTENCY_TOL && (!cfg.backtracking || s.area <= prev);
        prev = s.area;
        rep.row(Row::new(format!("step={} area={:.12e}", s.step, s.area), label.clone()).epsilon(s.eta).residual(s.grad_norm).pass(ok));
    }
    let moved = sheet
        .boundary_mask()
        .iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(p, _)| (&sheet.vertices()[p] - &out.sheet.vertices()[p]).amax())
        .fold(0.0, f64::max);
    rep.row(Row::new("boundary displacement", label.clone()).residual(moved).pass(moved == 0.0));
    if let Some(target) = settings.target_area {
        let rel = (out.final_area() - target).abs() / target.abs();
        rep.param("target_area", target);
        rep.row(Row::new(format!("target area={target:.12e}"), label).residual(rel).pass(rel < settings.target_rel_tol));
    }
    rep.trajectory = Some(out.log);
    Ok(())
}
