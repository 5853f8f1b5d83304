//! The L² metric h, the 2-form ω, and finite-difference checks of their
//! compatibility, closedness, integrability of 𝒥 and exactness of ω.
//!
//! Vector fields on the space of sheets are extended off a sheet Σ by
//! freezing their ambient values per grid vertex and projecting them onto the
//! normal planes of the nearby sheet. Directional derivatives and brackets use
//! central differences along the straight chart translation x ↦ x + εv.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::ambient::{coordinate_names, MetricSpace, H_AMB};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expression};
use crate::fields::{random_field, rng_for};
use crate::sheet::{DiscreteSheet, NormalField};
use crate::verify::{SweepResult, SweepSpec};

fn check_len(sheet: &DiscreteSheet, fields: &[&[DVector<f64>]]) -> Result<()> {
    if fields.iter().all(|f| f.len() == sheet.len() && f.iter().all(|v| v.len() == sheet.dim())) {
        Ok(())
    } else {
        Err(Error::MismatchedSheets)
    }
}

/// h(v,w) = ∫ σ·g(v,w) dvol, positive definite for either sign of the normal plane.
pub fn metric_h(sheet: &DiscreteSheet, v: &NormalField, w: &NormalField) -> Result<f64> {
    check_len(sheet, &[&v.values, &w.values])?;
    let s = sheet.sigma();
    let f: Vec<f64> = (0..sheet.len()).map(|p| s * sheet.inner(p, &v.values[p], &w.values[p])).collect();
    Ok(sheet.integrate(&f))
}

/// Ω(w, v, e₁, …, e_k) at vertex p.
pub fn omega_density(sheet: &DiscreteSheet, p: usize, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let n = sheet.dim();
    let e = sheet.tangents(p);
    let m = DMatrix::from_fn(n, n, |i, j| match j {
        0 => w[i],
        1 => v[i],
        _ => e[(i, j - 2)],
    });
    sheet.sqrt_det_g(p) * m.determinant()
}

fn omega_raw(sheet: &DiscreteSheet, v: &[DVector<f64>], w: &[DVector<f64>]) -> f64 {
    let dens: Vec<f64> = (0..sheet.len()).into_par_iter().map(|p| omega_density(sheet, p, &v[p], &w[p])).collect();
    sheet.quad_weights().iter().zip(dens).map(|(q, d)| q * d).sum()
}

/// ω(v,w) = ∫ Ω(w, v, e₁, …, e_k) over the parameter grid (Ω carries sqrt|det g|).
pub fn form_omega(sheet: &DiscreteSheet, v: &NormalField, w: &NormalField) -> Result<f64> {
    check_len(sheet, &[&v.values, &w.values])?;
    Ok(omega_raw(sheet, &v.values, &w.values))
}

/// Max over seeded trials of |h(v,w) − ω(𝒥v,w)|.
pub fn compatibility_residual(sheet: &DiscreteSheet, trials: usize, seed: u64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for t in 0..trials as u64 {
        let v = random_field(sheet, &mut rng_for(seed, 2 * t));
        let w = random_field(sheet, &mut rng_for(seed, 2 * t + 1));
        let jv = sheet.rotate_j(&v);
        worst = worst.max((metric_h(sheet, &v, &w)? - form_omega(sheet, &jv, &w)?).abs());
    }
    Ok(worst)
}

/// Pointwise J² = −1 and g(Jv,Jw) = g(v,w) residuals, plus |ω(𝒥v,𝒥w) − ω(v,w)|.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComplexStructureResiduals {
    pub j_squared: f64,
    pub metric_invariance: f64,
    pub omega_invariance: f64,
}

pub fn complex_structure_residuals(sheet: &DiscreteSheet, trials: usize, seed: u64) -> Result<ComplexStructureResiduals> {
    let mut out = ComplexStructureResiduals { j_squared: 0.0, metric_invariance: 0.0, omega_invariance: 0.0 };
    for t in 0..trials as u64 {
        let v = random_field(sheet, &mut rng_for(seed, 2 * t));
        let w = random_field(sheet, &mut rng_for(seed, 2 * t + 1));
        let jv = sheet.rotate_j(&v);
        let jw = sheet.rotate_j(&w);
        let jjv = sheet.rotate_j(&jv);
        for p in 0..sheet.len() {
            out.j_squared = out.j_squared.max((&jjv.values[p] + &v.values[p]).amax());
            let d = sheet.inner(p, &jv.values[p], &jw.values[p]) - sheet.inner(p, &v.values[p], &w.values[p]);
            out.metric_invariance = out.metric_invariance.max(d.abs());
        }
        let d = form_omega(sheet, &jv, &jw)? - form_omega(sheet, &v, &w)?;
        out.omega_invariance = out.omega_invariance.max(d.abs());
    }
    Ok(out)
}

fn sub_scaled(a: &[DVector<f64>], b: &[DVector<f64>], c: f64) -> Vec<DVector<f64>> {
    a.iter().zip(b).map(|(x, y)| (x - y) * c).collect()
}

/// Sheets Σ ± εX for a fixed step.
struct Pair {
    plus: DiscreteSheet,
    minus: DiscreteSheet,
}

impl Pair {
    fn new(sheet: &DiscreteSheet, x: &[DVector<f64>], eps: f64) -> Result<Pair> {
        Ok(Pair { plus: sheet.perturb(x, eps)?, minus: sheet.perturb(x, -eps)? })
    }

    /// Central difference along X of the projection-extension of `frozen`.
    fn derivative_of_extension(&self, frozen: &[DVector<f64>], eps: f64) -> Vec<DVector<f64>> {
        let a = self.plus.project(frozen);
        let b = self.minus.project(frozen);
        sub_scaled(&a.values, &b.values, 0.5 / eps)
    }
}

/// dω(u,v,w) by central differences with the projection extension; returns |dω|.
pub fn d_omega_residual(sheet: &DiscreteSheet, u: &NormalField, v: &NormalField, w: &NormalField, eps: f64) -> Result<f64> {
    check_len(sheet, &[&u.values, &v.values, &w.values])?;
    let fields = [&u.values, &v.values, &w.values];
    let pairs = fields.iter().map(|f| Pair::new(sheet, f, eps)).collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (a, b, c) in [(0, 1, 2), (1, 2, 0), (2, 0, 1)] {
        let pa = &pairs[a];
        let bp = pa.plus.project(fields[b]);
        let cp = pa.plus.project(fields[c]);
        let bm = pa.minus.project(fields[b]);
        let cm = pa.minus.project(fields[c]);
        total += (omega_raw(&pa.plus, &bp.values, &cp.values) - omega_raw(&pa.minus, &bm.values, &cm.values)) / (2.0 * eps);
        let bracket = sub_scaled(&pa.derivative_of_extension(fields[b], eps), &pairs[b].derivative_of_extension(fields[a], eps), 1.0);
        let c0 = sheet.project(fields[c]);
        total -= omega_raw(sheet, &bracket, &c0.values);
    }
    Ok(total.abs())
}

/// Extension of a field together with its image under J on every nearby sheet.
#[derive(Clone, Copy)]
enum Ext<'a> {
    Plain(&'a [DVector<f64>]),
    Rotated(&'a [DVector<f64>]),
}

impl Ext<'_> {
    fn at(&self, s: &DiscreteSheet) -> Vec<DVector<f64>> {
        match self {
            Ext::Plain(f) => s.project(f).values,
            Ext::Rotated(f) => s.j_of_projection(f).values,
        }
    }
}

/// sup over vertices of |τ(v,w)| with τ = 𝒥[v,w] − [v,𝒥w] − [𝒥v,w] − 𝒥[𝒥v,𝒥w].
pub fn nijenhuis_residual(sheet: &DiscreteSheet, v: &NormalField, w: &NormalField, eps: f64) -> Result<f64> {
    check_len(sheet, &[&v.values, &w.values])?;
    let exts = [Ext::Plain(&v.values), Ext::Plain(&w.values), Ext::Rotated(&v.values), Ext::Rotated(&w.values)];
    let at_sheet: Vec<Vec<DVector<f64>>> = exts.iter().map(|e| e.at(sheet)).collect();
    let pairs = at_sheet.iter().map(|x| Pair::new(sheet, x, eps)).collect::<Result<Vec<_>>>()?;
    let bracket = |a: usize, b: usize| -> Vec<DVector<f64>> {
        let db = sub_scaled(&exts[b].at(&pairs[a].plus), &exts[b].at(&pairs[a].minus), 0.5 / eps);
        let da = sub_scaled(&exts[a].at(&pairs[b].plus), &exts[a].at(&pairs[b].minus), 0.5 / eps);
        sub_scaled(&db, &da, 1.0)
    };
    let (v_, w_, jv, jw) = (0, 1, 2, 3);
    let t1 = sheet.j_of_projection(&bracket(v_, w_));
    let t2 = sheet.project(&bracket(v_, jw));
    let t3 = sheet.project(&bracket(jv, w_));
    let t4 = sheet.j_of_projection(&bracket(jv, jw));
    let s = sheet.sigma();
    let mut worst: f64 = 0.0;
    for p in 0..sheet.len() {
        let tau = &t1.values[p] - &t2.values[p] - &t3.values[p] - &t4.values[p];
        worst = worst.max((s * sheet.inner(p, &tau, &tau)).max(0.0).sqrt());
    }
    Ok(worst)
}

/// An (n−1)-form Υ = Σᵢ Υᵢ dx⁰∧…∧dxⁱ̂∧…∧dx^{n−1} with expression coefficients.
#[derive(Debug, Clone)]
pub struct Upsilon {
    coeffs: Vec<Expression>,
    bound: Vec<BoundExpr>,
}

impl Upsilon {
    pub fn new(coeffs: Vec<Expression>) -> Result<Upsilon> {
        let n = coeffs.len();
        let names = coordinate_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let bound = coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c.bind(&refs).map_err(|e| Error::eval(format!("upsilon coefficient {i}"), e)))
            .collect::<Result<_>>()?;
        Ok(Upsilon { coeffs, bound })
    }

    pub fn dim(&self) -> usize {
        self.coeffs.len()
    }

    pub fn coeffs(&self) -> &[Expression] {
        &self.coeffs
    }

    fn coeff(&self, i: usize, x: &[f64]) -> Result<f64> {
        self.bound[i].eval(x).map_err(|e| Error::eval(format!("upsilon coefficient {i} at {x:?}"), e))
    }

    /// Υ(a₁, …, a_{n−1}) at x; `a` holds the vectors as columns.
    pub fn eval(&self, x: &[f64], a: &DMatrix<f64>) -> Result<f64> {
        let n = self.dim();
        let mut total = 0.0;
        for i in 0..n {
            let c = self.coeff(i, x)?;
            if c == 0.0 {
                continue;
            }
            total += c * a.clone().remove_row(i).determinant();
        }
        Ok(total)
    }

    /// Coefficient of dΥ on dx⁰∧…∧dx^{n−1}: Σᵢ (−1)ⁱ ∂ᵢΥᵢ, by central differences.
    pub fn d_coefficient(&self, x: &[f64], h: f64) -> Result<f64> {
        let mut total = 0.0;
        for i in 0..self.dim() {
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[i] += h;
            xm[i] -= h;
            let d = (self.coeff(i, &xp)? - self.coeff(i, &xm)?) / (2.0 * h);
            total += if i % 2 == 0 { d } else { -d };
        }
        Ok(total)
    }

    /// Largest |dΥ − Ω| coefficient mismatch over the given points.
    pub fn closure_residual(&self, metric: &MetricSpace, points: &[Vec<f64>]) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for x in points {
            worst = worst.max((self.d_coefficient(x, H_AMB)? - metric.sqrt_abs_det(x)?).abs());
        }
        Ok(worst)
    }
}

/// 100 seeded points in the bounding box of the sheet, padded by 0.1.
pub fn sample_points_near(sheet: &DiscreteSheet, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = sheet.dim();
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for x in sheet.vertices() {
        for i in 0..n {
            lo[i] = lo[i].min(x[i]);
            hi[i] = hi[i].max(x[i]);
        }
    }
    let mut rng = rng_for(seed, 0);
    (0..count).map(|_| (0..n).map(|i| rng.random_range(lo[i] - 0.1..hi[i] + 0.1)).collect()).collect()
}

/// λ(v) = −∫ Υ(v, e₁, …, e_k); with this sign dλ = ω.
pub fn potential_lambda(sheet: &DiscreteSheet, v: &[DVector<f64>], ups: &Upsilon) -> Result<f64> {
    check_len(sheet, &[v])?;
    if ups.dim() != sheet.dim() {
        return Err(Error::Invalid(format!("upsilon has {} coefficients, ambient dimension is {}", ups.dim(), sheet.dim())));
    }
    let n = sheet.dim();
    let dens = (0..sheet.len())
        .into_par_iter()
        .map(|p| {
            let e = sheet.tangents(p);
            let a = DMatrix::from_fn(n, n - 1, |i, j| if j == 0 { v[p][i] } else { e[(i, j - 1)] });
            ups.eval(sheet.vertices()[p].as_slice(), &a)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(-sheet.quad_weights().iter().zip(dens).map(|(q, d)| q * d).sum::<f64>())
}

pub const UPSILON_TOL: f64 = 1e-6;

/// |D_v λ(w̃) − D_w λ(ṽ) − λ([v,w]) − ω(v,w)|, after checking dΥ = Ω near the sheet.
pub fn d_lambda_residual(sheet: &DiscreteSheet, v: &NormalField, w: &NormalField, ups: &Upsilon, eps: f64) -> Result<f64> {
    check_len(sheet, &[&v.values, &w.values])?;
    let closure = ups.closure_residual(sheet.metric(), &sample_points_near(sheet, 100, 0))?;
    if !(closure < UPSILON_TOL) {
        return Err(Error::Check(format!("dΥ differs from the volume form by {closure:e}")));
    }
    let pv = Pair::new(sheet, &v.values, eps)?;
    let pw = Pair::new(sheet, &w.values, eps)?;
    let lam = |s: &DiscreteSheet, f: &[DVector<f64>]| potential_lambda(s, &s.project(f).values, ups);
    let dv = (lam(&pv.plus, &w.values)? - lam(&pv.minus, &w.values)?) / (2.0 * eps);
    let dw = (lam(&pw.plus, &v.values)? - lam(&pw.minus, &v.values)?) / (2.0 * eps);
    let bracket = sub_scaled(&pv.derivative_of_extension(&w.values, eps), &pw.derivative_of_extension(&v.values, eps), 1.0);
    let lb = potential_lambda(sheet, &bracket, ups)?;
    Ok((dv - dw - lb - form_omega(sheet, v, w)?).abs())
}

/// Which finite-difference identity a sweep measures.
#[derive(Debug, Clone)]
pub enum SweepCheck<'a> {
    DOmega,
    Nijenhuis,
    DLambda(&'a Upsilon),
}

/// One [`SweepResult`] per trial, fields drawn from `spec.seed`.
pub fn sweep(sheet: &DiscreteSheet, check: &SweepCheck<'_>, spec: &SweepSpec) -> Result<Vec<SweepResult>> {
    spec.validate()?;
    (0..spec.trials as u64)
        .map(|t| {
            let f: Vec<NormalField> = (0..3).map(|i| random_field(sheet, &mut rng_for(spec.seed, 3 * t + i))).collect();
            let res = spec
                .eps
                .iter()
                .map(|&e| match check {
                    SweepCheck::DOmega => d_omega_residual(sheet, &f[0], &f[1], &f[2], e),
                    SweepCheck::Nijenhuis => nijenhuis_residual(sheet, &f[0], &f[1], e),
                    SweepCheck::DLambda(u) => d_lambda_residual(sheet, &f[0], &f[1], u, e),
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepResult::new(spec.eps.clone(), res))
        })
        .collect()
}
