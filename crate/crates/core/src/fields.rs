//! Seeded random smooth fields on a sheet's grid.
//!
//! Each ambient component is a Gaussian combination of low modes (three per
//! parameter) times the boundary bump, so fields vanish on the boundary and
//! are resolved by any grid the sheet itself resolves.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::grid::ParamDomain;
use crate::kaehler::metric_h;
use crate::sheet::{DiscreteSheet, NormalField};

/// Independent stream `index` of the master `seed`.
pub fn rng_for(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

const MODES: usize = 3;

fn mode(periodic: bool, m: usize, tau: f64, phase: f64) -> f64 {
    if periodic {
        if m == 0 {
            1.0
        } else {
            (2.0 * PI * m as f64 * tau + phase).cos()
        }
    } else {
        (PI * m as f64 * tau).cos()
    }
}

/// Smooth ambient vectors with `width` components; zero on the boundary when `bump` is set.
pub fn smooth_ambient(domain: &ParamDomain, width: usize, bump: bool, rng: &mut impl Rng) -> Vec<DVector<f64>> {
    let k = domain.k();
    let terms = MODES.pow(k as u32);
    let coeffs: Vec<f64> = (0..width * terms).map(|_| rng.sample(StandardNormal)).collect();
    let phases: Vec<f64> = (0..k * MODES).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
    (0..domain.len())
        .map(|p| {
            let idx = domain.multi_index(p);
            let basis: Vec<Vec<f64>> = (0..k)
                .map(|a| {
                    let ax = domain.axis(a);
                    (0..MODES).map(|m| mode(ax.param.periodic, m, ax.unit(idx[a]), phases[a * MODES + m])).collect()
                })
                .collect();
            let damp = if bump { domain.bump(p) } else { 1.0 };
            DVector::from_fn(width, |c, _| {
                let mut acc = 0.0;
                for t in 0..terms {
                    let mut prod = 1.0;
                    let mut rest = t;
                    for b in &basis {
                        prod *= b[rest % MODES];
                        rest /= MODES;
                    }
                    acc += coeffs[c * terms + t] * prod;
                }
                acc * damp
            })
        })
        .collect()
}

/// Boundary-zero normal field with unit h-norm.
pub fn random_field(sheet: &DiscreteSheet, rng: &mut impl Rng) -> NormalField {
    let w = smooth_ambient(sheet.domain(), sheet.dim(), true, rng);
    let v = sheet.project(&w);
    let norm = metric_h(sheet, &v, &v).expect("field built on this sheet").sqrt();
    v.scaled(1.0 / norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ambient::MetricSpace;
    use crate::expr::Expression;
    use crate::grid::Param;
    use std::sync::Arc;

    #[test]
    fn fields_are_normal_boundary_zero_and_reproducible() {
        let m = Arc::new(MetricSpace::minkowski(4).unwrap());
        let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, 12), Param::angle("s", 16)]).unwrap();
        let map: Vec<Expression> = ["t", "cos(s)", "sin(s)", "0"].iter().map(|s| Expression::parse(s).unwrap()).collect();
        let sh = DiscreteSheet::from_map(m, dom, &map).unwrap();
        let a = random_field(&sh, &mut rng_for(42, 3));
        let b = random_field(&sh, &mut rng_for(42, 3));
        let c = random_field(&sh, &mut rng_for(42, 4));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.boundary_zero);
        assert!(sh.tangential_residual(&a.values) < 1e-9);
        assert!((metric_h(&sh, &a, &a).unwrap() - 1.0).abs() < 1e-12);
    }
}
