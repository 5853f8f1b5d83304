use sheetspace::ambient::MetricSpace;
use sheetspace::expr::Expression;
use sheetspace::fields::{random_field, rng_for};
use sheetspace::flows::{area, gradient_descent, FlowConfig};
use sheetspace::grid::{Param, ParamDomain};
use sheetspace::kaehler::{form_omega, metric_h, sweep, SweepCheck, Upsilon};
use sheetspace::sheet::{DiscreteSheet, NormalField};
use sheetspace::twistor::{gauss_lift, theta_residual};
use sheetspace::verify::SweepSpec;
use sheetspace::Error;
use std::sync::Arc;

fn exprs(src: &[&str]) -> Vec<Expression> {
    src.iter().map(|s| Expression::parse(s).unwrap()).collect()
}

fn curved_cylinder(n: usize) -> DiscreteSheet {
    let m = MetricSpace::conformal(Expression::parse("exp(0.2*x1 + 0.1*x2)").unwrap(), &MetricSpace::minkowski(4).unwrap()).unwrap();
    let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, n), Param::angle("s", n)]).unwrap();
    DiscreteSheet::from_map(Arc::new(m), dom, &exprs(&["t", "cos(s)", "sin(s)", "0.1*t*t"])).unwrap()
}

#[test]
fn unit_normal_has_h_norm_equal_to_area() {
    let sh = curved_cylinder(24);
    let f1 = NormalField { values: sh.frame().f1.clone(), boundary_zero: false };
    assert!((metric_h(&sh, &f1, &f1).unwrap() - area(&sh)).abs() < 1e-12 * area(&sh));
    let jf1 = sh.rotate_j(&f1);
    assert!((form_omega(&sh, &jf1, &f1).unwrap() - area(&sh)).abs() < 1e-12 * area(&sh));
}

#[test]
fn sweeps_are_reproducible() {
    let sh = curved_cylinder(16);
    let spec = SweepSpec::default();
    let a = sweep(&sh, &SweepCheck::DOmega, &spec).unwrap();
    let b = sweep(&sh, &SweepCheck::DOmega, &spec).unwrap();
    assert_eq!(a, b);
    let other = sweep(&sh, &SweepCheck::DOmega, &SweepSpec { seed: 7, ..spec }).unwrap();
    assert_ne!(a, other);
}

#[test]
fn perturbation_keeps_boundary_and_grid() {
    let sh = curved_cylinder(16);
    let v = random_field(&sh, &mut rng_for(1, 0));
    let moved = sh.perturb_field(&v, 0.05).unwrap();
    assert!(moved.same_grid(&sh));
    for (p, &b) in sh.boundary_mask().iter().enumerate() {
        if b {
            assert_eq!(moved.vertices()[p], sh.vertices()[p]);
        }
    }
    assert!(area(&moved) != area(&sh));
}

#[test]
fn flowed_curve_still_lifts() {
    let m = Arc::new(MetricSpace::euclidean(3).unwrap());
    let dom = ParamDomain::new(vec![Param::bounded("t", -1.0, 1.0, 16)]).unwrap();
    let sh = DiscreteSheet::from_map(m, dom, &exprs(&["t", "0.2*sin(pi*t)", "0.1*sin(2*pi*t)"])).unwrap();
    let before = theta_residual(&gauss_lift(&sh).unwrap());
    let cfg = FlowConfig { eta: 1e-2, max_steps: 200, tol: 1e-8, backtracking: true, log_every: 50, seed: 42 };
    let rep = gradient_descent(&sh, &cfg).unwrap();
    assert!(rep.final_area() < area(&sh));
    let after = theta_residual(&gauss_lift(&rep.sheet).unwrap());
    assert!(after < 0.5 * before && after < 1e-2, "{before} {after}");
}

#[test]
fn lorentzian_flow_is_experimental() {
    let m = Arc::new(MetricSpace::minkowski(3).unwrap());
    let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, 12)]).unwrap();
    let sh = DiscreteSheet::from_map(m, dom, &exprs(&["t", "0.1*sin(pi*t)", "0"])).unwrap();
    let cfg = FlowConfig { max_steps: 3, ..FlowConfig::default() };
    let rep = gradient_descent(&sh, &cfg).unwrap();
    assert!(rep.experimental);
}

#[test]
fn mismatched_inputs_are_errors() {
    let sh = curved_cylinder(12);
    let ups = Upsilon::new(exprs(&["x0", "0", "0"])).unwrap();
    let v = random_field(&sh, &mut rng_for(1, 0));
    let r = sheetspace::kaehler::d_lambda_residual(&sh, &v, &v, &ups, 1e-2);
    assert!(r.is_err());
    let short = NormalField { values: v.values[..3].to_vec(), boundary_zero: true };
    assert!(matches!(metric_h(&sh, &short, &v), Err(Error::MismatchedSheets)), "{:?}", metric_h(&sh, &short, &v));
}
