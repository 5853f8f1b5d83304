//! Area of a sheet, its h-gradient, and gradient descent with the boundary held fixed.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::ambient::H_AMB;
use crate::error::{Error, Result};
use crate::fields::{random_field, rng_for};
use crate::kaehler::metric_h;
use crate::sheet::{DiscreteSheet, NormalField};

pub const MAX_STEPS: usize = 100_000;

/// Σ_p W_p dvol_p.
pub fn area(sheet: &DiscreteSheet) -> f64 {
    sheet.integrate(&vec![1.0; sheet.len()])
}

/// ∂A/∂x_p for every vertex, as chart covectors (boundary vertices included).
pub fn area_differential(sheet: &DiscreteSheet) -> Result<Vec<DVector<f64>>> {
    let n = sheet.dim();
    let k = sheet.k();
    let dom = sheet.domain();
    let weights = sheet.quad_weights();
    let metric = sheet.metric();

    // W dvol · g E G⁻¹ per vertex, n×k
    let pulled: Vec<nalgebra::DMatrix<f64>> = (0..sheet.len())
        .into_par_iter()
        .map(|p| {
            let ginv = sheet.induced(p).clone().try_inverse().ok_or(Error::DegenerateInduced { vertex: p, det: 0.0 })?;
            Ok(sheet.metric_at(p) * sheet.tangents(p) * ginv * (weights[p] * sheet.dvol(p)))
        })
        .collect::<Result<_>>()?;

    let mut c = vec![0.0; sheet.len() * n];
    for a in 0..k {
        let data: Vec<f64> = pulled.iter().flat_map(|m| m.column(a).iter().cloned().collect::<Vec<_>>()).collect();
        for (ci, di) in c.iter_mut().zip(dom.differentiate_adjoint(&data, n, a)) {
            *ci += di;
        }
    }
    let mut out: Vec<DVector<f64>> = (0..sheet.len()).map(|p| DVector::from_column_slice(&c[p * n..(p + 1) * n])).collect();

    if !metric.is_constant() {
        out.par_iter_mut().enumerate().try_for_each(|(p, cp)| -> Result<()> {
            let e = sheet.tangents(p);
            let ginv = sheet.induced(p).clone().try_inverse().ok_or(Error::DegenerateInduced { vertex: p, det: 0.0 })?;
            let scale = 0.5 * weights[p] * sheet.dvol(p);
            for m in 0..n {
                let dg = metric.metric_derivative(sheet.vertices()[p].as_slice(), m, H_AMB)?;
                cp[m] += scale * (&ginv * e.transpose() * dg * e).trace();
            }
            Ok(())
        })?;
    }
    Ok(out)
}

/// The normal field with h(grad A, v) = dA(v) for all boundary-zero v,
/// using the diagonal mass W_p dvol_p. Zero on the boundary.
pub fn h_gradient_area(sheet: &DiscreteSheet) -> Result<NormalField> {
    let c = area_differential(sheet)?;
    let weights = sheet.quad_weights();
    let raised = (0..sheet.len())
        .map(|p| {
            let mass = weights[p] * sheet.dvol(p);
            if !(mass > 0.0) {
                return Err(Error::Check(format!("singular lumped mass at vertex {p}")));
            }
            let y = sheet
                .metric_at(p)
                .clone()
                .lu()
                .solve(&c[p])
                .ok_or(Error::DegenerateMetric { point: sheet.vertices()[p].as_slice().to_vec(), det: 0.0 })?;
            Ok(y * (sheet.sigma() / mass))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sheet.zero_boundary(sheet.project(&raised)))
}

/// dA(v) by five-point central differences of the area along the perturbation.
pub fn area_derivative_fd(sheet: &DiscreteSheet, v: &NormalField, eps: f64) -> Result<f64> {
    let at = |s: f64| -> Result<f64> { Ok(area(&sheet.perturb_field(v, s)?)) };
    Ok((8.0 * (at(eps)? - at(-eps)?) - (at(2.0 * eps)? - at(-2.0 * eps)?)) / (12.0 * eps))
}

/// |dA(v) − h(grad A, v)| relative to ‖grad A‖_h ‖v‖_h (absolute when the gradient vanishes),
/// with dA from [`area_differential`].
pub fn gradient_consistency(sheet: &DiscreteSheet, grad: &NormalField, v: &NormalField) -> Result<f64> {
    let c = area_differential(sheet)?;
    let da: f64 = c.iter().zip(&v.values).map(|(a, b)| a.dot(b)).sum();
    let hv = metric_h(sheet, grad, v)?;
    let scale = (metric_h(sheet, grad, grad)? * metric_h(sheet, v, v)?).sqrt();
    let diff = (da - hv).abs();
    Ok(if scale > 0.0 { diff / scale } else { diff })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Largest step size; 0 < eta ≤ 1.
    pub eta: f64,
    pub max_steps: usize,
    /// Stop once ‖grad A‖_h falls below this.
    pub tol: f64,
    /// Halve rejected steps until the area does not increase.
    pub backtracking: bool,
    /// Log every `log_every` steps (the first and last step are always logged).
    pub log_every: usize,
    /// Seed of the random fields used by the gradient-consistency check.
    pub seed: u64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig { eta: 1e-2, max_steps: 1000, tol: 1e-6, backtracking: true, log_every: 10, seed: 42 }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta <= 1.0) {
            return Err(Error::Invalid(format!("flow step size must lie in (0, 1], got {}", self.eta)));
        }
        if self.max_steps > MAX_STEPS {
            return Err(Error::Invalid(format!("flow max_steps must be at most {MAX_STEPS}, got {}", self.max_steps)));
        }
        if !(self.tol >= 0.0) {
            return Err(Error::Invalid(format!("flow tolerance must be non-negative, got {}", self.tol)));
        }
        if self.log_every == 0 {
            return Err(Error::Invalid("flow log cadence must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowStep {
    pub step: usize,
    pub area: f64,
    pub grad_norm: f64,
    /// Step size accepted to reach this state (0 for the initial state).
    pub eta: f64,
    /// [`gradient_consistency`] against a seeded random field.
    pub consistency: f64,
}

#[derive(Debug, Clone)]
pub struct FlowReport {
    pub sheet: DiscreteSheet,
    pub log: Vec<FlowStep>,
    pub steps: usize,
    pub converged: bool,
    /// Backtracking shrank the step below 10⁻⁹·eta without decreasing the area.
    pub stalled: bool,
    /// Set for non-Riemannian ambient metrics, where minimal sheets are saddle points.
    pub experimental: bool,
}

impl FlowReport {
    pub fn final_area(&self) -> f64 {
        area(&self.sheet)
    }

    /// True when every logged area is at most its predecessor.
    pub fn is_monotone(&self) -> bool {
        self.log.windows(2).all(|w| w[1].area <= w[0].area)
    }
}

fn h_norm(sheet: &DiscreteSheet, v: &NormalField) -> Result<f64> {
    Ok(metric_h(sheet, v, v)?.max(0.0).sqrt())
}

/// Σ ← Σ − η grad A, with the boundary fixed.
pub fn gradient_descent(sheet: &DiscreteSheet, cfg: &FlowConfig) -> Result<FlowReport> {
    cfg.validate()?;
    let flow_err = |step: usize| move |e: Error| Error::Flow { step, source: Box::new(e) };
    let mut current = sheet.clone();
    let mut current_area = area(&current);
    let mut grad = h_gradient_area(&current).map_err(flow_err(0))?;
    let mut grad_norm = h_norm(&current, &grad).map_err(flow_err(0))?;
    let mut log = Vec::new();
    let record = |sheet: &DiscreteSheet, grad: &NormalField, step: usize, area: f64, grad_norm: f64, eta: f64| -> Result<FlowStep> {
        let v = random_field(sheet, &mut rng_for(cfg.seed, step as u64));
        let consistency = gradient_consistency(sheet, grad, &v)?;
        Ok(FlowStep { step, area, grad_norm, eta, consistency })
    };
    log.push(record(&current, &grad, 0, current_area, grad_norm, 0.0).map_err(flow_err(0))?);

    let mut eta = cfg.eta;
    let mut steps = 0;
    let mut converged = grad_norm <= cfg.tol;
    let mut stalled = false;
    while !converged && steps < cfg.max_steps {
        let step = steps + 1;
        let accepted = loop {
            match current.perturb_field(&grad, -eta) {
                Ok(s) => {
                    let a = area(&s);
                    if !cfg.backtracking || a <= current_area {
                        break Some((s, a));
                    }
                }
                Err(e) if !cfg.backtracking => return Err(flow_err(step)(e)),
                Err(_) => {}
            }
            eta /= 2.0;
            if eta < 1e-9 * cfg.eta {
                break None;
            }
        };
        let Some((next, next_area)) = accepted else {
            stalled = true;
            if log.last().is_some_and(|l: &FlowStep| l.step != steps) {
                log.push(record(&current, &grad, steps, current_area, grad_norm, eta).map_err(flow_err(steps))?);
            }
            break;
        };
        current = next;
        current_area = next_area;
        steps = step;
        grad = h_gradient_area(&current).map_err(flow_err(step))?;
        grad_norm = h_norm(&current, &grad).map_err(flow_err(step))?;
        converged = grad_norm <= cfg.tol;
        if step % cfg.log_every == 0 || converged || step == cfg.max_steps {
            log.push(record(&current, &grad, step, current_area, grad_norm, eta).map_err(flow_err(step))?);
        }
        if cfg.backtracking {
            eta = (2.0 * eta).min(cfg.eta);
        }
    }
    let experimental = !current.metric().is_riemannian();
    Ok(FlowReport { sheet: current, log, steps, converged, stalled, experimental })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::ambient::MetricSpace;
    use crate::expr::Expression;
    use crate::grid::{Param, ParamDomain};

    fn sheet(metric: MetricSpace, params: Vec<Param>, map: &[&str]) -> DiscreteSheet {
        let dom = ParamDomain::new(params).unwrap();
        let map: Vec<Expression> = map.iter().map(|s| Expression::parse(s).unwrap()).collect();
        DiscreteSheet::from_map(Arc::new(metric), dom, &map).unwrap()
    }

    #[test]
    fn area_examples() {
        let cyl = sheet(
            MetricSpace::minkowski(4).unwrap(),
            vec![Param::bounded("t", 0.0, 1.0, 16), Param::angle("s", 32)],
            &["t", "cos(s)", "sin(s)", "0"],
        );
        assert!((area(&cyl) - 2.0 * PI).abs() < 1e-12);
        let circle = sheet(MetricSpace::euclidean(3).unwrap(), vec![Param::angle("s", 32)], &["cos(s)", "sin(s)", "0"]);
        assert!((area(&circle) - 2.0 * PI).abs() < 1e-12);
        let r = 0.7;
        let wide = sheet(
            MetricSpace::euclidean(4).unwrap(),
            vec![Param::bounded("t", 0.0, 1.0, 16), Param::angle("s", 32)],
            &["0.7*cos(s)", "0.7*sin(s)", "t", "0"],
        );
        assert!((area(&wide) - 2.0 * PI * r).abs() < 1e-12);
    }

    #[test]
    fn straight_segment_is_critical() {
        let seg = sheet(MetricSpace::euclidean(3).unwrap(), vec![Param::bounded("t", -1.0, 1.0, 24)], &["t", "0", "0"]);
        assert!(h_gradient_area(&seg).unwrap().sup_norm() < 1e-6);
    }

    #[test]
    fn cylinder_gradient_is_radial_outward() {
        let cyl = sheet(
            MetricSpace::euclidean(4).unwrap(),
            vec![Param::bounded("t", -0.4, 0.4, 16), Param::angle("s", 24)],
            &["cos(s)", "sin(s)", "t", "0"],
        );
        let grad = h_gradient_area(&cyl).unwrap();
        let radial: Vec<DVector<f64>> = (0..cyl.len())
            .map(|p| {
                let x = &cyl.vertices()[p];
                DVector::from_vec(vec![x[0], x[1], 0.0, 0.0]) * cyl.domain().bump(p)
            })
            .collect();
        let radial = cyl.project(&radial);
        let fd = area_derivative_fd(&cyl, &radial, 1e-3).unwrap();
        let pairing = metric_h(&cyl, &grad, &radial).unwrap();
        // growing the radius grows the area, so −grad points inward
        assert!(fd > 0.0 && pairing > 0.0);
        assert!((fd - pairing).abs() < 1e-6 * fd);
    }

    #[test]
    fn gradient_satisfies_its_defining_equation() {
        let curved = MetricSpace::conformal(Expression::parse("exp(0.3*x2)").unwrap(), &MetricSpace::euclidean(4).unwrap()).unwrap();
        for metric in [MetricSpace::euclidean(4).unwrap(), curved] {
            let wavy = sheet(
                metric,
                vec![Param::bounded("t", -0.4, 0.4, 14), Param::angle("s", 20)],
                &["(1 + 0.1*cos(2*s))*cos(s)", "(1 + 0.1*cos(2*s))*sin(s)", "t", "0.05*sin(s)"],
            );
            let grad = h_gradient_area(&wavy).unwrap();
            assert!(grad.boundary_zero);
            for i in 0..20 {
                let v = random_field(&wavy, &mut rng_for(9, i));
                let da = area_derivative_fd(&wavy, &v, 1e-3).unwrap();
                let hv = metric_h(&wavy, &grad, &v).unwrap();
                assert!((da - hv).abs() < 1e-6 * da.abs(), "{da} {hv}");
            }
        }
    }

    #[test]
    fn zero_steps_return_the_input() {
        let s = sheet(MetricSpace::euclidean(3).unwrap(), vec![Param::bounded("t", -1.0, 1.0, 16)], &["t", "0.1*sin(pi*t)", "0"]);
        let rep = gradient_descent(&s, &FlowConfig { max_steps: 0, ..FlowConfig::default() }).unwrap();
        assert_eq!(rep.steps, 0);
        assert_eq!(rep.sheet.vertices(), s.vertices());
        assert_eq!(rep.final_area(), area(&s));
        assert!(FlowConfig { eta: 1.5, ..FlowConfig::default() }.validate().is_err());
        assert!(FlowConfig { max_steps: MAX_STEPS + 1, ..FlowConfig::default() }.validate().is_err());
    }

    // larger root of c·cosh(h/c) = 1 by bisection, area 2π∫c·cosh²(t/c)dt by Simpson
    fn catenoid_area(h: f64) -> f64 {
        let f = |c: f64| c * (h / c).cosh() - 1.0;
        let (mut lo, mut hi) = (0.6, 1.0);
        assert!(f(lo) < 0.0 && f(hi) > 0.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if f(mid) < 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = 0.5 * (lo + hi);
        let m = 2000;
        let dt = 2.0 * h / m as f64;
        let g = |t: f64| 2.0 * PI * c * (t / c).cosh().powi(2);
        let mut acc = g(-h) + g(h);
        for i in 1..m {
            acc += g(-h + i as f64 * dt) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        acc * dt / 3.0
    }

    #[test]
    fn catenoid_oracle() {
        let a = catenoid_area(0.4);
        assert!((a - 4.883793201930425).abs() < 1e-9, "{a}");
        // the closed form 2πc(h + (c/2)sinh(2h/c)) at the root agrees
        let c: f64 = 0.9107379942736331;
        assert!((c * (0.4 / c).cosh() - 1.0).abs() < 1e-12);
        assert!((2.0 * PI * c * (0.4 + 0.5 * c * (0.8 / c).sinh()) - a).abs() < 1e-9);
    }

    #[test]
    fn perturbed_cylinder_flows_to_the_catenoid() {
        let s = sheet(
            MetricSpace::euclidean(4).unwrap(),
            vec![Param::bounded("t", -0.4, 0.4, 12), Param::angle("s", 16)],
            &["(1 + 0.05*cos(1.25*pi*t)*cos(s))*cos(s)", "(1 + 0.05*cos(1.25*pi*t)*cos(s))*sin(s)", "t", "0.05*cos(1.25*pi*t)*sin(2*s)"],
        );
        let cfg = FlowConfig { eta: 1e-2, max_steps: 3000, tol: 1e-5, backtracking: true, log_every: 50, seed: 42 };
        let rep = gradient_descent(&s, &cfg).unwrap();
        let target = 4.883793201930425;
        assert!((rep.final_area() - target).abs() < 0.01 * target, "{}", rep.final_area());
        assert!(rep.is_monotone());
        assert!(!rep.experimental);
    }

    #[test]
    fn wavy_curve_straightens() {
        let s =
            sheet(MetricSpace::euclidean(3).unwrap(), vec![Param::bounded("t", -1.0, 1.0, 16)], &["t", "0.2*sin(pi*t)", "0.1*sin(2*pi*t)"]);
        let cfg = FlowConfig { eta: 1e-2, max_steps: 20_000, tol: 1e-6, backtracking: true, log_every: 500, seed: 42 };
        let rep = gradient_descent(&s, &cfg).unwrap();
        assert!((rep.final_area() - 2.0).abs() < 1e-3, "{} after {} steps", rep.final_area(), rep.steps);
        assert!(rep.is_monotone());
        assert!(rep.log.iter().all(|l| l.consistency < 1e-6), "{:?}", rep.log);
        let mask = s.boundary_mask();
        for (p, b) in mask.iter().enumerate() {
            if *b {
                assert_eq!(rep.sheet.vertices()[p], s.vertices()[p]);
            }
        }
    }
}
