//! Discretized world-sheets: tangents, normal frames, the normal rotation J,
//! quadrature and perturbation charts.
//!
//! Orientation and rotation conventions:
//! * the frame (e₁, …, e_k, f₁, f₂) is positively oriented in the chart;
//! * J f₁ = f₂ and J f₂ = −f₁.
//!
//! Reversing the first convention flips the signs of both ω and J, which
//! leaves every compatibility identity intact.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::ambient::MetricSpace;
use crate::error::{Error, Result};
use crate::expr::Expression;
use crate::grid::ParamDomain;
use crate::linalg;

/// Induced metrics with |det| at or below this are rejected.
pub const INDUCED_TOL: f64 = 1e-10;

/// Oriented σ-orthonormal normal frame per vertex.
#[derive(Debug, Clone)]
pub struct NormalFrame {
    pub f1: Vec<DVector<f64>>,
    pub f2: Vec<DVector<f64>>,
    /// +1 if the normal plane is positive definite, −1 if negative definite.
    pub sigma: f64,
}

impl NormalFrame {
    /// In-plane rotation by `angles[p]` at each vertex; orientation is preserved.
    pub fn rotated(&self, angles: &[f64]) -> NormalFrame {
        let (f1, f2) = self
            .f1
            .iter()
            .zip(&self.f2)
            .zip(angles)
            .map(|((a, b), &t)| {
                let (s, c) = t.sin_cos();
                (a * c + b * s, b * c - a * s)
            })
            .unzip();
        NormalFrame { f1, f2, sigma: self.sigma }
    }
}

/// A tangent vector to the space of sheets: ambient vectors in the normal planes.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalField {
    pub values: Vec<DVector<f64>>,
    pub boundary_zero: bool,
}

impl NormalField {
    pub fn zeros(sheet: &DiscreteSheet) -> NormalField {
        NormalField { values: vec![DVector::zeros(sheet.dim()); sheet.len()], boundary_zero: true }
    }

    pub fn scaled(&self, c: f64) -> NormalField {
        NormalField { values: self.values.iter().map(|v| v * c).collect(), boundary_zero: self.boundary_zero }
    }

    /// Largest Euclidean norm over vertices.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct DiscreteSheet {
    metric: Arc<MetricSpace>,
    domain: ParamDomain,
    vertices: Vec<DVector<f64>>,
    boundary: Vec<bool>,
    weights: Vec<f64>,
    /// n×k, columns e₁..e_k.
    tangents: Vec<DMatrix<f64>>,
    g: Vec<DMatrix<f64>>,
    sqrt_det_g: Vec<f64>,
    induced: Vec<DMatrix<f64>>,
    dvol: Vec<f64>,
    frame: NormalFrame,
}

struct VertexData {
    tangents: DMatrix<f64>,
    g: DMatrix<f64>,
    sqrt_det_g: f64,
    induced: DMatrix<f64>,
    dvol: f64,
    f1: DVector<f64>,
    f2: DVector<f64>,
    sigma: f64,
}

fn sign_of(l: f64, scale: f64) -> i8 {
    if l.abs() <= 1e-10 * scale.max(1.0) {
        0
    } else if l > 0.0 {
        1
    } else {
        -1
    }
}

fn vertex_data(metric: &MetricSpace, p: usize, x: &DVector<f64>, e: DMatrix<f64>) -> Result<VertexData> {
    let n = metric.dim();
    let k = e.ncols();
    let rank = linalg::rank(&e, 1e-8);
    if rank < k {
        return Err(Error::DegenerateTangents { vertex: p, rank, expected: k });
    }
    let g = metric.metric_at(x.as_slice())?;
    let sqrt_det_g = g.determinant().abs().sqrt();

    let ge = &g * &e;
    let comp = linalg::complement(&ge, n - k);
    let nb = DMatrix::from_columns(&comp);
    let gn = nb.transpose() * &g * &nb;
    let eig = gn.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(g.amax());
    let signs = (sign_of(eig.eigenvalues[0], scale), sign_of(eig.eigenvalues[1], scale));
    if signs.0 == 0 || signs.1 == 0 || signs.0 != signs.1 {
        return Err(Error::Indefinite { vertex: p, signs });
    }
    let sigma = signs.0 as f64;
    let mut f1 = &nb * eig.eigenvectors.column(0) / eig.eigenvalues[0].abs().sqrt();
    let mut f2 = &nb * eig.eigenvectors.column(1) / eig.eigenvalues[1].abs().sqrt();
    // one Gram-Schmidt pass against the definite form cleans up rounding
    let c = sigma * f1.dot(&(&g * &f1));
    f1 /= c.sqrt();
    let d = sigma * f2.dot(&(&g * &f1));
    f2.axpy(-d, &f1, 1.0);
    let c2 = sigma * f2.dot(&(&g * &f2));
    f2 /= c2.sqrt();

    let mut cols: Vec<DVector<f64>> = e.column_iter().map(|c| c.into_owned()).collect();
    cols.push(f1.clone());
    cols.push(f2.clone());
    if DMatrix::from_columns(&cols).determinant() < 0.0 {
        f2 = -f2;
    }

    let induced = e.transpose() * &g * &e;
    let det = induced.determinant();
    if !(det.abs() > INDUCED_TOL) {
        return Err(Error::DegenerateInduced { vertex: p, det });
    }
    Ok(VertexData { tangents: e, g, sqrt_det_g, induced, dvol: det.abs().sqrt(), f1, f2, sigma })
}

impl DiscreteSheet {
    /// Samples `map` (n expressions in the parameter names) over the grid.
    pub fn from_map(metric: Arc<MetricSpace>, domain: ParamDomain, map: &[Expression]) -> Result<DiscreteSheet> {
        let n = metric.dim();
        if map.len() != n {
            return Err(Error::Invalid(format!("sheet map has {} components, ambient dimension is {n}", map.len())));
        }
        if domain.k() + 2 != n {
            return Err(Error::Invalid(format!("a sheet in dimension {n} needs {} parameters, got {}", n - 2, domain.k())));
        }
        let names = domain.names();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let bound = map
            .iter()
            .enumerate()
            .map(|(i, e)| e.bind(&refs).map_err(|err| Error::eval(format!("sheet map component {i}"), err)))
            .collect::<Result<Vec<_>>>()?;
        let vertices = (0..domain.len())
            .map(|p| {
                let t = domain.point(p);
                let mut x = DVector::zeros(n);
                for (i, b) in bound.iter().enumerate() {
                    x[i] = b.eval(&t).map_err(|err| Error::eval(format!("sheet map component {i} at {t:?}"), err))?;
                }
                Ok(x)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_vertices(metric, domain, vertices)
    }

    pub fn from_vertices(metric: Arc<MetricSpace>, domain: ParamDomain, vertices: Vec<DVector<f64>>) -> Result<DiscreteSheet> {
        let n = metric.dim();
        let k = domain.k();
        if k + 2 != n {
            return Err(Error::Invalid(format!("a sheet in dimension {n} needs {} parameters, got {k}", n - 2)));
        }
        if vertices.len() != domain.len() || vertices.iter().any(|v| v.len() != n) {
            return Err(Error::Invalid("vertex array does not match the grid".into()));
        }
        if let Some(p) = vertices.iter().position(|v| !linalg::is_finite(v.as_slice())) {
            return Err(Error::Invalid(format!("vertex {p} is not finite")));
        }
        let flat: Vec<f64> = vertices.iter().flat_map(|v| v.iter().copied()).collect();
        let derivs: Vec<Vec<f64>> = (0..k).map(|a| domain.differentiate(&flat, n, a)).collect();

        let data: Vec<Result<VertexData>> = (0..domain.len())
            .into_par_iter()
            .map(|p| {
                let e = DMatrix::from_fn(n, k, |i, a| derivs[a][p * n + i]);
                vertex_data(&metric, p, &vertices[p], e)
            })
            .collect();
        let mut rows = Vec::with_capacity(data.len());
        for d in data {
            rows.push(d?);
        }
        let sigma = rows[0].sigma;
        if let Some(p) = rows.iter().position(|r| r.sigma != sigma) {
            let s = rows[p].sigma as i8;
            return Err(Error::Indefinite { vertex: p, signs: (s, -s) });
        }

        let mut f1: Vec<DVector<f64>> = rows.iter().map(|r| r.f1.clone()).collect();
        let mut f2: Vec<DVector<f64>> = rows.iter().map(|r| r.f2.clone()).collect();
        align_frames(&domain, &mut f1, &mut f2);

        let boundary = domain.boundary_mask();
        let weights = domain.weights();
        let mut sheet = DiscreteSheet {
            metric,
            domain,
            vertices,
            boundary,
            weights,
            tangents: Vec::with_capacity(rows.len()),
            g: Vec::with_capacity(rows.len()),
            sqrt_det_g: Vec::with_capacity(rows.len()),
            induced: Vec::with_capacity(rows.len()),
            dvol: Vec::with_capacity(rows.len()),
            frame: NormalFrame { f1, f2, sigma },
        };
        for r in rows {
            sheet.tangents.push(r.tangents);
            sheet.g.push(r.g);
            sheet.sqrt_det_g.push(r.sqrt_det_g);
            sheet.induced.push(r.induced);
            sheet.dvol.push(r.dvol);
        }
        Ok(sheet)
    }

    /// Same grid, vertices moved to x + ε·v. Vertices where v vanishes are copied unchanged.
    pub fn perturb(&self, v: &[DVector<f64>], eps: f64) -> Result<DiscreteSheet> {
        if v.len() != self.len() {
            return Err(Error::MismatchedSheets);
        }
        let vertices =
            self.vertices.iter().zip(v).map(|(x, d)| if d.iter().all(|&c| c == 0.0) { x.clone() } else { x + d * eps }).collect();
        Self::from_vertices(self.metric.clone(), self.domain.clone(), vertices)
    }

    pub fn perturb_field(&self, v: &NormalField, eps: f64) -> Result<DiscreteSheet> {
        self.perturb(&v.values, eps)
    }

    pub fn metric(&self) -> &Arc<MetricSpace> {
        &self.metric
    }

    pub fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn k(&self) -> usize {
        self.domain.k()
    }

    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn vertices(&self) -> &[DVector<f64>] {
        &self.vertices
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.boundary
    }

    pub fn quad_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn tangents(&self, p: usize) -> &DMatrix<f64> {
        &self.tangents[p]
    }

    pub fn metric_at(&self, p: usize) -> &DMatrix<f64> {
        &self.g[p]
    }

    pub fn sqrt_det_g(&self, p: usize) -> f64 {
        self.sqrt_det_g[p]
    }

    pub fn induced(&self, p: usize) -> &DMatrix<f64> {
        &self.induced[p]
    }

    pub fn dvol(&self, p: usize) -> f64 {
        self.dvol[p]
    }

    pub fn frame(&self) -> &NormalFrame {
        &self.frame
    }

    pub fn sigma(&self) -> f64 {
        self.frame.sigma
    }

    pub fn same_grid(&self, other: &DiscreteSheet) -> bool {
        self.domain == other.domain && self.dim() == other.dim()
    }

    pub fn inner(&self, p: usize, v: &DVector<f64>, w: &DVector<f64>) -> f64 {
        v.dot(&(&self.g[p] * w))
    }

    /// Σ_p weight(p)·dvol(p)·f(p), summed in vertex order.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        self.weights.iter().zip(&self.dvol).zip(f).map(|((w, d), x)| w * d * x).sum()
    }

    /// σ·[g(w,f₁)f₁ + g(w,f₂)f₂] at every vertex, using `frame`.
    pub fn project_with(&self, frame: &NormalFrame, w: &[DVector<f64>]) -> NormalField {
        let s = frame.sigma;
        let values: Vec<DVector<f64>> = (0..self.len())
            .into_par_iter()
            .map(|p| {
                let gw = &self.g[p] * &w[p];
                let a = s * gw.dot(&frame.f1[p]);
                let b = s * gw.dot(&frame.f2[p]);
                &frame.f1[p] * a + &frame.f2[p] * b
            })
            .collect();
        let boundary_zero = self.boundary_is_zero(&values);
        NormalField { values, boundary_zero }
    }

    pub fn project(&self, w: &[DVector<f64>]) -> NormalField {
        self.project_with(&self.frame, w)
    }

    /// v = a f₁ + b f₂ ↦ −b f₁ + a f₂.
    pub fn rotate_j_with(&self, frame: &NormalFrame, v: &NormalField) -> NormalField {
        let s = frame.sigma;
        let values = (0..self.len())
            .into_par_iter()
            .map(|p| {
                let gv = &self.g[p] * &v.values[p];
                let a = s * gv.dot(&frame.f1[p]);
                let b = s * gv.dot(&frame.f2[p]);
                &frame.f2[p] * a - &frame.f1[p] * b
            })
            .collect();
        NormalField { values, boundary_zero: v.boundary_zero }
    }

    pub fn rotate_j(&self, v: &NormalField) -> NormalField {
        self.rotate_j_with(&self.frame, v)
    }

    /// J applied to the normal part of arbitrary ambient vectors.
    pub fn j_of_projection(&self, w: &[DVector<f64>]) -> NormalField {
        let p = self.project(w);
        self.rotate_j(&p)
    }

    /// Largest |g(v, e_i)| over vertices and tangents.
    pub fn tangential_residual(&self, v: &[DVector<f64>]) -> f64 {
        (0..self.len()).map(|p| (self.tangents[p].transpose() * (&self.g[p] * &v[p])).amax()).fold(0.0, f64::max)
    }

    pub fn boundary_is_zero(&self, values: &[DVector<f64>]) -> bool {
        values.iter().zip(&self.boundary).all(|(v, &b)| !b || v.iter().all(|&c| c == 0.0))
    }

    /// Sets boundary vertices to exactly zero.
    pub fn zero_boundary(&self, mut v: NormalField) -> NormalField {
        for (x, &b) in v.values.iter_mut().zip(&self.boundary) {
            if b {
                x.fill(0.0);
            }
        }
        v.boundary_zero = true;
        v
    }
}

// Rotate each frame in its plane to best match the previously visited neighbour.
fn align_frames(domain: &ParamDomain, f1: &mut [DVector<f64>], f2: &mut [DVector<f64>]) {
    let k = domain.k();
    for p in 1..domain.len() {
        let Some(a) = (0..k).rev().find(|&a| domain.coord(p, a) > 0) else { continue };
        let q = p - domain.stride(a);
        let c = f1[p].dot(&f1[q]) + f2[p].dot(&f2[q]);
        let s = f2[p].dot(&f1[q]) - f1[p].dot(&f2[q]);
        let t = s.atan2(c);
        if t == 0.0 {
            continue;
        }
        let (sn, cs) = t.sin_cos();
        let a1 = &f1[p] * cs + &f2[p] * sn;
        let a2 = &f2[p] * cs - &f1[p] * sn;
        f1[p] = a1;
        f2[p] = a2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Param;
    use std::f64::consts::PI;

    fn exprs(src: &[&str]) -> Vec<Expression> {
        src.iter().map(|s| Expression::parse(s).unwrap()).collect()
    }

    pub(crate) fn mink_cylinder(nt: usize, ns: usize) -> DiscreteSheet {
        let m = Arc::new(MetricSpace::minkowski(4).unwrap());
        let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, nt), Param::angle("s", ns)]).unwrap();
        DiscreteSheet::from_map(m, dom, &exprs(&["t", "cos(s)", "sin(s)", "0"])).unwrap()
    }

    #[test]
    fn minkowski_cylinder_geometry() {
        let sh = mink_cylinder(16, 16);
        for p in 0..sh.len() {
            let ind = sh.induced(p);
            assert!((ind - DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0]))).amax() < 1e-12);
        }
        // at s = 0 the normal plane is span{(0,1,0,0), (0,0,0,1)}
        let p = sh.domain().flat(&[5, 0]);
        let fr = sh.frame();
        let plane = DMatrix::from_columns(&[fr.f1[p].clone(), fr.f2[p].clone()]);
        let oracle = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(linalg::max_principal_angle(&plane, &oracle) < 1e-12);
        assert_eq!(fr.sigma, 1.0);
    }

    #[test]
    fn euclidean_circle() {
        let m = Arc::new(MetricSpace::euclidean(3).unwrap());
        let dom = ParamDomain::new(vec![Param::angle("s", 32)]).unwrap();
        let sh = DiscreteSheet::from_map(m, dom, &exprs(&["cos(s)", "sin(s)", "0"])).unwrap();
        assert!(sh.boundary_mask().iter().all(|b| !b));
        let fr = sh.frame();
        let plane = DMatrix::from_columns(&[fr.f1[0].clone(), fr.f2[0].clone()]);
        let oracle = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!(linalg::max_principal_angle(&plane, &oracle) < 1e-12);
        assert!((sh.integrate(&vec![1.0; sh.len()]) - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn frame_invariants() {
        let m = Arc::new(MetricSpace::conformal(Expression::parse("exp(0.5*x1)").unwrap(), &MetricSpace::minkowski(4).unwrap()).unwrap());
        let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, 12), Param::angle("s", 16)]).unwrap();
        let sh = DiscreteSheet::from_map(m, dom, &exprs(&["t", "cos(s)*(1 + 0.2*t^2)", "sin(s)", "0.3*sin(2*s)*t"])).unwrap();
        let fr = sh.frame();
        assert!(sh.tangential_residual(&fr.f1) < 1e-9);
        assert!(sh.tangential_residual(&fr.f2) < 1e-9);
        for p in 0..sh.len() {
            let s = fr.sigma;
            assert!((s * sh.inner(p, &fr.f1[p], &fr.f1[p]) - 1.0).abs() < 1e-12);
            assert!((s * sh.inner(p, &fr.f2[p], &fr.f2[p]) - 1.0).abs() < 1e-12);
            assert!(sh.inner(p, &fr.f1[p], &fr.f2[p]).abs() < 1e-12);
            let mut cols: Vec<DVector<f64>> = sh.tangents(p).column_iter().map(|c| c.into_owned()).collect();
            cols.push(fr.f1[p].clone());
            cols.push(fr.f2[p].clone());
            assert!(DMatrix::from_columns(&cols).determinant() * sh.sqrt_det_g(p) > 0.0);
        }
        // each frame is the in-plane rotation closest to its predecessor along s
        for p in (0..sh.len()).filter(|&p| sh.domain().coord(p, 1) > 0) {
            let q = p - 1;
            let c = fr.f1[p].dot(&fr.f1[q]) + fr.f2[p].dot(&fr.f2[q]);
            let s = fr.f2[p].dot(&fr.f1[q]) - fr.f1[p].dot(&fr.f2[q]);
            assert!(c > 0.0 && s.abs() < 1e-12 * c, "{c} {s}");
        }
    }

    #[test]
    fn rejects_bad_sheets() {
        let m = Arc::new(MetricSpace::minkowski(4).unwrap());
        let dom = ParamDomain::new(vec![Param::bounded("t", 0.0, 1.0, 8), Param::angle("s", 8)]).unwrap();
        let light = DiscreteSheet::from_map(m.clone(), dom.clone(), &exprs(&["t", "t", "cos(s)", "sin(s)"]));
        assert!(matches!(light, Err(Error::Indefinite { .. })), "{light:?}");
        let flat = DiscreteSheet::from_map(m.clone(), dom.clone(), &exprs(&["t", "2*t", "0*cos(s)", "0"]));
        assert!(matches!(flat, Err(Error::DegenerateTangents { .. })), "{flat:?}");
        let arity = DiscreteSheet::from_map(m, dom, &exprs(&["t", "cos(s)", "sin(s)"]));
        assert!(matches!(arity, Err(Error::Invalid(_))));
    }

    #[test]
    fn j_axioms() {
        let sh = mink_cylinder(12, 16);
        let fr = sh.frame();
        let w: Vec<DVector<f64>> = (0..sh.len()).map(|p| DVector::from_fn(4, |i, _| ((p * 7 + i * 3) as f64).sin())).collect();
        let v = sh.project(&w);
        let jjv = sh.rotate_j(&sh.rotate_j(&v));
        for p in 0..sh.len() {
            assert!((&jjv.values[p] + &v.values[p]).amax() < 1e-12);
        }
        let f1 = NormalField { values: fr.f1.clone(), boundary_zero: false };
        let jf1 = sh.rotate_j(&f1);
        for p in 0..sh.len() {
            assert!((&jf1.values[p] - &fr.f2[p]).amax() < 1e-12);
        }
    }

    #[test]
    fn projection_examples() {
        let sh = mink_cylinder(12, 16);
        let fr = sh.frame();
        let v = sh.project(&fr.f1);
        assert!(v.values.iter().zip(&fr.f1).all(|(a, b)| (a - b).amax() < 1e-12));
        let tan: Vec<DVector<f64>> = (0..sh.len()).map(|p| sh.tangents(p).column(0).into_owned()).collect();
        assert!(sh.project(&tan).sup_norm() < 1e-12);
        let e3 = vec![DVector::from_vec(vec![0.0, 0.0, 0.0, 1.0]); sh.len()];
        let v = sh.project(&e3);
        for (a, b) in v.values.iter().zip(&e3) {
            assert!((a - b).amax() < 1e-12);
        }
    }

    #[test]
    fn perturbation() {
        let sh = mink_cylinder(16, 32);
        let radial: Vec<DVector<f64>> = sh.vertices().iter().map(|x| DVector::from_vec(vec![0.0, x[1], x[2], 0.0])).collect();
        let same = sh.perturb(&radial, 0.0).unwrap();
        assert!(same.vertices().iter().zip(sh.vertices()).all(|(a, b)| a == b));
        let wide = sh.perturb(&radial, 0.1).unwrap();
        assert!((wide.integrate(&vec![1.0; sh.len()]) - 2.0 * PI * 1.1).abs() < 1e-11);
        assert!(sh.perturb(&radial, -1.0).is_err());
    }
}
