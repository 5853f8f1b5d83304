//! The bundle N of oriented definite 2-planes in T*M, realized as a gauge
//! slice of null covectors p = u + iv, with its CR structure (D, H, J), the
//! Gauss lift of a sheet, the Legendrian residual, the Levi form and
//! integral observables of chart forms.
//!
//! Points live in the chart z = (x, u, v) ∈ ℝ³ⁿ. The gauge fixes ⟨u,u⟩ = σ
//! (inner products through g⁻¹) and rotates (u, v) within their plane so
//! that v_r = 0 and u_r > 0 for a gauge index r shared by a whole sheet.

use std::sync::Arc;

use nalgebra::{Complex, DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::ambient::{MetricSpace, H_AMB};
use crate::error::{Error, Result};
use crate::expr::{BoundExpr, Expression};
use crate::fields::smooth_ambient;
use crate::grid::ParamDomain;
use crate::linalg::{self, RANK_TOL};
use crate::sheet::{DiscreteSheet, NormalField};

pub type C64 = Complex<f64>;

/// Null-condition tolerance after gauge fixing.
pub const NULL_TOL: f64 = 1e-9;
/// Smallest admissible singular value of [sheet tangents | H].
pub const TRANSVERSE_TOL: f64 = 1e-6;
/// Smallest admissible u_r² + v_r² at the gauge index.
pub const GAUGE_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TwistorPoint {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub v: DVector<f64>,
    /// Sign of ⟨u,u⟩.
    pub sigma: f64,
    /// Gauge index: v_r = 0 and u_r > 0.
    pub r: usize,
}

impl TwistorPoint {
    pub fn n(&self) -> usize {
        self.x.len()
    }

    pub fn z(&self) -> DVector<f64> {
        let n = self.n();
        DVector::from_fn(3 * n, |i, _| match i / n {
            0 => self.x[i],
            1 => self.u[i - n],
            _ => self.v[i - 2 * n],
        })
    }

    pub fn p(&self) -> DVector<C64> {
        DVector::from_fn(self.n(), |i, _| C64::new(self.u[i], self.v[i]))
    }

    /// max(|⟨u,v⟩|, |⟨u,u⟩ − ⟨v,v⟩|).
    pub fn null_defect(&self, metric: &MetricSpace) -> Result<f64> {
        let gi = metric.inverse_at(self.x.as_slice())?;
        let uv = self.u.dot(&(&gi * &self.v));
        let d = self.u.dot(&(&gi * &self.u)) - self.v.dot(&(&gi * &self.v));
        Ok(uv.abs().max(d.abs()))
    }
}

fn split(z: &DVector<f64>) -> (DVector<f64>, DVector<f64>, DVector<f64>) {
    let n = z.len() / 3;
    (z.rows(0, n).into_owned(), z.rows(n, n).into_owned(), z.rows(2 * n, n).into_owned())
}

fn join(x: &DVector<f64>, u: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
    let n = x.len();
    DVector::from_fn(3 * n, |i, _| match i / n {
        0 => x[i],
        1 => u[i - n],
        _ => v[i - 2 * n],
    })
}

// σ-orthonormalize (a, b) under g⁻¹, keeping the orientation of the pair.
fn normalize_pair(gi: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, f64)> {
    let ga = gi * a;
    let aa = a.dot(&ga);
    let ab = b.dot(&ga);
    let bb = b.dot(&(gi * b));
    let det = aa * bb - ab * ab;
    let scale = aa.abs() + bb.abs();
    if !(det > 1e-10 * scale * scale) {
        return Err(Error::IndefinitePlane { det });
    }
    let sigma = aa.signum();
    let u = a / (sigma * aa).sqrt();
    let mut v = b - &u * (sigma * b.dot(&(gi * &u)));
    let vv = sigma * v.dot(&(gi * &v));
    v /= vv.sqrt();
    Ok((u, v, sigma))
}

// In-plane rotation to v_r = 0, u_r > 0.
fn fix_phase(u: &DVector<f64>, v: &DVector<f64>, r: usize) -> Option<(DVector<f64>, DVector<f64>)> {
    let rho = u[r].hypot(v[r]);
    if !(rho * rho > GAUGE_TOL) {
        return None;
    }
    let (c, s) = (u[r] / rho, v[r] / rho);
    let mut v2 = v * c - u * s;
    v2[r] = 0.0;
    Some((u * c + v * s, v2))
}

fn best_index(weights: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, w) in weights.enumerate() {
        if w > best.1 {
            best = (i, w);
        }
    }
    best.0
}

/// Gauge-fixed point for the oriented plane span(a, b) of covectors at x.
/// With `r = None` the index maximizing u_r² + v_r² is used.
pub fn gauge_covectors(
    metric: &MetricSpace,
    x: &DVector<f64>,
    a: &DVector<f64>,
    b: &DVector<f64>,
    r: Option<usize>,
) -> Result<TwistorPoint> {
    let gi = metric.inverse_at(x.as_slice())?;
    let (u, v, sigma) = normalize_pair(&gi, a, b)?;
    let r = r.unwrap_or_else(|| best_index(u.iter().zip(v.iter()).map(|(a, b)| a * a + b * b)));
    let (u, v) = fix_phase(&u, &v, r).ok_or(Error::Gauge { vertex: 0 })?;
    Ok(TwistorPoint { x: x.clone(), u, v, sigma, r })
}

/// The point of N for the oriented plane span(a, b) of tangent vectors at x.
pub fn plane_to_null(metric: &MetricSpace, x: &DVector<f64>, a: &DVector<f64>, b: &DVector<f64>) -> Result<TwistorPoint> {
    let g = metric.metric_at(x.as_slice())?;
    gauge_covectors(metric, x, &(&g * a), &(&g * b), None)
}

/// The oriented plane (u♯, v♯) of tangent vectors.
pub fn null_to_plane(metric: &MetricSpace, p: &TwistorPoint) -> Result<(DVector<f64>, DVector<f64>)> {
    let gi = metric.inverse_at(p.x.as_slice())?;
    Ok((&gi * &p.u, &gi * &p.v))
}

/// A point over [−1, 1]ⁿ with Gaussian covectors, resampled until the plane is definite.
pub fn random_point(metric: &MetricSpace, rng: &mut impl Rng) -> Result<TwistorPoint> {
    let n = metric.dim();
    for _ in 0..1000 {
        let x = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let a = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        match gauge_covectors(metric, &x, &a, &b, None) {
            Ok(p) => return Ok(p),
            Err(Error::IndefinitePlane { .. } | Error::Gauge { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Err(Error::Invalid(format!("no definite 2-plane found for {}", metric.name())))
}

// Rows: ⟨u,v⟩, ⟨u,u⟩−⟨v,v⟩, ⟨u,u⟩−σ, v_r; columns: (x, u, v).
fn constraint_jacobian(metric: &MetricSpace, p: &TwistorPoint) -> Result<DMatrix<f64>> {
    let n = p.n();
    let gi = metric.inverse_at(p.x.as_slice())?;
    let mut jac = DMatrix::zeros(4, 3 * n);
    for m in 0..n {
        let dg = metric.metric_derivative(p.x.as_slice(), m, H_AMB)?;
        if dg.iter().all(|&c| c == 0.0) {
            continue;
        }
        let dgi = -(&gi * dg * &gi);
        let uu = p.u.dot(&(&dgi * &p.u));
        let vv = p.v.dot(&(&dgi * &p.v));
        jac[(0, m)] = p.u.dot(&(&dgi * &p.v));
        jac[(1, m)] = uu - vv;
        jac[(2, m)] = uu;
    }
    let gu = &gi * &p.u;
    let gv = &gi * &p.v;
    for i in 0..n {
        jac[(0, n + i)] = gv[i];
        jac[(0, 2 * n + i)] = gu[i];
        jac[(1, n + i)] = 2.0 * gu[i];
        jac[(1, 2 * n + i)] = -2.0 * gv[i];
        jac[(2, n + i)] = 2.0 * gu[i];
    }
    jac[(3, 2 * n + p.r)] = 1.0;
    Ok(jac)
}

// dϑ(Y₁, Y₂) = (a₁ + ib₁)·ξ₂ − (a₂ + ib₂)·ξ₁ for Y = (ξ, a, b).
fn dtheta(y1: &[f64], y2: &[f64], n: usize) -> C64 {
    let mut acc = C64::new(0.0, 0.0);
    for j in 0..n {
        acc += C64::new(y1[n + j], y1[2 * n + j]) * y2[j] - C64::new(y2[n + j], y2[2 * n + j]) * y1[j];
    }
    acc
}

/// (dim N, rank H, complex rank D, rank TN/H).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrDims {
    pub dim_n: usize,
    pub rank_h: usize,
    pub rank_d: usize,
    pub codim: usize,
}

impl CrDims {
    pub fn expected(n: usize) -> CrDims {
        CrDims { dim_n: 3 * n - 4, rank_h: 2 * n - 2, rank_d: n - 1, codim: n - 2 }
    }
}

/// CR data at one point. All bases are in chart coordinates and orthonormal
/// for the Euclidean chart inner product.
#[derive(Debug, Clone)]
pub struct CrData {
    /// Tangent space of the gauge slice, 3n × (3n−4).
    pub slice: DMatrix<f64>,
    /// D, 3n × (n−1) complex.
    pub d: DMatrix<C64>,
    /// H = Re D ⊕ Im D, 3n × (2n−2).
    pub h: DMatrix<f64>,
    /// J on H in the basis `h`, with J(Re Z) = −Im Z for Z ∈ D.
    pub j: DMatrix<f64>,
    /// Kernel of ϖ_* on the slice.
    pub vertical: DMatrix<f64>,
    /// Complement of H in the slice, 3n × (n−2).
    pub quotient: DMatrix<f64>,
    pub dims: CrDims,
    /// Smallest singular value of [Re D | Im D]; zero iff D contains a real vector.
    pub real_independence: f64,
}

impl CrData {
    pub fn apply_j(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.h * (&self.j * (self.h.transpose() * y))
    }

    pub fn project_h(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.h * (self.h.transpose() * y)
    }

    pub fn project_vertical(&self, y: &DVector<f64>) -> DVector<f64> {
        &self.vertical * (self.vertical.transpose() * y)
    }

    /// Largest entry of J² + 1.
    pub fn j_squared_residual(&self) -> f64 {
        let m = self.j.nrows();
        (&self.j * &self.j + DMatrix::identity(m, m)).amax()
    }
}

fn check_rank(what: &'static str, computed: usize, expected: usize) -> Result<()> {
    if computed != expected {
        return Err(Error::Rank { what, computed, expected });
    }
    Ok(())
}

/// D = ker dϑ on the null cone modulo the ℂˣ orbit, then H and J.
pub fn cr_basis(metric: &MetricSpace, p: &TwistorPoint) -> Result<CrData> {
    let n = p.n();
    let expected = CrDims::expected(n);
    let jac = constraint_jacobian(metric, p)?;
    let (cone, rc) = linalg::kernel(&jac.rows(0, 2).into_owned(), RANK_TOL);
    check_rank("null cone constraints", rc, 2)?;
    let (slice, rs) = linalg::kernel(&jac, RANK_TOL);
    check_rank("gauge slice constraints", rs, 4)?;
    let dim_s = slice.ncols();

    let mc = cone.ncols();
    let cols: Vec<Vec<f64>> = cone.column_iter().map(|c| c.iter().cloned().collect()).collect();
    let w = DMatrix::<C64>::from_fn(mc, mc, |i, j| dtheta(&cols[i], &cols[j], n));
    let kw = linalg::kernel(&w, RANK_TOL).0;
    check_rank("ker dϑ on the null cone", kw.ncols(), n)?;
    let dhat = cone.map(|c| C64::new(c, 0.0)) * kw;

    // Project along the Euler field R = (0,u,v) and the phase field Θ = (0,−v,u).
    let zero = DVector::zeros(n);
    let euler = join(&zero, &p.u, &p.v);
    let phase = join(&zero, &(-&p.v), &p.u);
    let mut basis = DMatrix::zeros(3 * n, dim_s + 2);
    basis.columns_mut(0, dim_s).copy_from(&slice);
    basis.set_column(dim_s, &euler);
    basis.set_column(dim_s + 1, &phase);
    let coef = linalg::complex_lstsq(&basis.map(|c| C64::new(c, 0.0)), &dhat);
    let dproj = slice.map(|c| C64::new(c, 0.0)) * coef.rows(0, dim_s);
    let d = linalg::range(&dproj, RANK_TOL);
    let m = d.ncols();

    let re = d.map(|z| z.re);
    let im = d.map(|z| z.im);
    let mut b = DMatrix::zeros(3 * n, 2 * m);
    b.columns_mut(0, m).copy_from(&re);
    b.columns_mut(m, m).copy_from(&im);
    let h = linalg::range(&b, RANK_TOL);
    let dims = CrDims { dim_n: dim_s, rank_h: h.ncols(), rank_d: m, codim: dim_s.saturating_sub(h.ncols()) };
    check_rank("complex rank of D", dims.rank_d, expected.rank_d)?;
    check_rank("rank of H", dims.rank_h, expected.rank_h)?;
    check_rank("rank of TN/H", dims.codim, expected.codim)?;

    let mut jb = DMatrix::zeros(3 * n, 2 * m);
    jb.columns_mut(0, m).copy_from(&(-&im));
    jb.columns_mut(m, m).copy_from(&re);
    let bc = h.transpose() * &b;
    let bc_inv = bc.try_inverse().ok_or(Error::Rank { what: "H coordinates of D", computed: 0, expected: 2 * m })?;
    let j = h.transpose() * jb * bc_inv;

    let (kv, _) = linalg::kernel(&slice.rows(0, n).into_owned(), RANK_TOL);
    let vertical = &slice * kv;
    let quotient = linalg::range(&(&slice - &h * (h.transpose() * &slice)), 1e-6);
    check_rank("quotient TN/H", quotient.ncols(), expected.codim)?;
    let real_independence = linalg::smallest_singular_value(&b);
    Ok(CrData { slice, d, h, j, vertical, quotient, dims, real_independence })
}

/// ϑ(Y) = (u + iv)·ξ for a chart vector Y = (ξ, a, b).
pub fn theta_eval(p: &TwistorPoint, y: &DVector<f64>) -> C64 {
    (0..p.n()).map(|j| C64::new(p.u[j], p.v[j]) * y[j]).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    Lifted,
    Synthetic,
}

/// A sheet of N sampled over a parameter grid, all vertices in one gauge.
#[derive(Debug, Clone)]
pub struct TwistorSheet {
    metric: Arc<MetricSpace>,
    domain: ParamDomain,
    points: Vec<TwistorPoint>,
    r: usize,
    provenance: Provenance,
}

fn spectral_tangents(domain: &ParamDomain, data: &[DVector<f64>]) -> Vec<DMatrix<f64>> {
    let width = data.first().map_or(0, |d| d.len());
    let flat: Vec<f64> = data.iter().flat_map(|d| d.iter().cloned()).collect();
    let derivs: Vec<Vec<f64>> = (0..domain.k()).map(|a| domain.differentiate(&flat, width, a)).collect();
    (0..domain.len()).map(|p| DMatrix::from_fn(width, domain.k(), |c, a| derivs[a][p * width + c])).collect()
}

impl TwistorSheet {
    fn from_covectors(
        metric: Arc<MetricSpace>,
        domain: ParamDomain,
        xs: &[DVector<f64>],
        pairs: Vec<(DVector<f64>, DVector<f64>)>,
        r: Option<usize>,
        provenance: Provenance,
    ) -> Result<TwistorSheet> {
        let normalized: Vec<(DVector<f64>, DVector<f64>, f64)> = xs
            .par_iter()
            .zip(pairs.par_iter())
            .map(|(x, (a, b))| {
                let gi = metric.inverse_at(x.as_slice())?;
                normalize_pair(&gi, a, b)
            })
            .collect::<Result<_>>()?;
        let n = metric.dim();
        // the index whose worst-case weight over the sheet is largest
        let r = r.unwrap_or_else(|| {
            best_index((0..n).map(|i| normalized.iter().map(|(u, v, _)| u[i] * u[i] + v[i] * v[i]).fold(f64::INFINITY, f64::min)))
        });
        let points = normalized
            .into_iter()
            .zip(xs)
            .enumerate()
            .map(|(vertex, ((u, v, sigma), x))| {
                let (u, v) = fix_phase(&u, &v, r).ok_or(Error::Gauge { vertex })?;
                Ok(TwistorPoint { x: x.clone(), u, v, sigma, r })
            })
            .collect::<Result<Vec<_>>>()?;
        let ts = TwistorSheet { metric, domain, points, r, provenance };
        let (vertex, value) = ts.transversality()?;
        if !(value > TRANSVERSE_TOL) {
            return Err(Error::NotTransverse { vertex, value });
        }
        Ok(ts)
    }

    pub fn metric(&self) -> &Arc<MetricSpace> {
        &self.metric
    }

    pub fn domain(&self) -> &ParamDomain {
        &self.domain
    }

    pub fn points(&self) -> &[TwistorPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn gauge_index(&self) -> usize {
        self.r
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn chart_points(&self) -> Vec<DVector<f64>> {
        self.points.iter().map(TwistorPoint::z).collect()
    }

    /// Spectral parameter derivatives of z, 3n × k per vertex.
    pub fn chart_tangents(&self) -> Vec<DMatrix<f64>> {
        spectral_tangents(&self.domain, &self.chart_points())
    }

    pub fn cr_data(&self) -> Result<Vec<CrData>> {
        self.points.par_iter().map(|p| cr_basis(&self.metric, p)).collect()
    }

    /// Smallest singular value of [T₁/|T₁| … T_k/|T_k| | H] over vertices, and where it occurs.
    pub fn transversality(&self) -> Result<(usize, f64)> {
        let tangents = self.chart_tangents();
        let values: Vec<f64> = self
            .points
            .par_iter()
            .zip(tangents.par_iter())
            .map(|(p, t)| {
                let cr = cr_basis(&self.metric, p)?;
                let k = t.ncols();
                let mut m = DMatrix::zeros(t.nrows(), k + cr.h.ncols());
                for a in 0..k {
                    let c = t.column(a);
                    m.set_column(a, &(c / c.norm()));
                }
                m.columns_mut(k, cr.h.ncols()).copy_from(&cr.h);
                Ok(linalg::smallest_singular_value(&m))
            })
            .collect::<Result<_>>()?;
        let vertex = best_index(values.iter().map(|v| -v));
        Ok((vertex, values[vertex]))
    }
}

fn lift_pairs(sheet: &DiscreteSheet) -> Vec<(DVector<f64>, DVector<f64>)> {
    let frame = sheet.frame();
    (0..sheet.len())
        .map(|p| {
            let g = sheet.metric_at(p);
            (g * &frame.f1[p], -(g * &frame.f2[p]))
        })
        .collect()
}

/// Ψ: each vertex goes to its oriented normal plane, lowered to (f₁♭, −f₂♭).
pub fn gauss_lift(sheet: &DiscreteSheet) -> Result<TwistorSheet> {
    gauss_lift_with_index(sheet, None)
}

/// Gauss lift in a prescribed gauge index.
pub fn gauss_lift_with_index(sheet: &DiscreteSheet, r: Option<usize>) -> Result<TwistorSheet> {
    TwistorSheet::from_covectors(sheet.metric().clone(), sheet.domain().clone(), sheet.vertices(), lift_pairs(sheet), r, Provenance::Lifted)
}

fn unit_tangent(sheet: &DiscreteSheet, p: usize, axis: usize) -> Result<DVector<f64>> {
    let e = sheet.tangents(p).column(axis).into_owned();
    let ee = sheet.inner(p, &e, &e);
    if !(ee.abs() > 1e-12) {
        return Err(Error::Invalid(format!("tangent along axis {axis} is null at vertex {p}")));
    }
    Ok(e / ee.abs().sqrt())
}

/// The plane field span{f₁, cos α f₂ + sin α ê} with ê the unit tangent along `axis`:
/// a transverse sheet of N that is not a Gauss lift for α ≠ 0.
pub fn synthetic_tilted(sheet: &DiscreteSheet, alpha: f64, axis: usize) -> Result<TwistorSheet> {
    if axis >= sheet.k() {
        return Err(Error::Invalid(format!("axis {axis} out of range for a {}-parameter sheet", sheet.k())));
    }
    let frame = sheet.frame();
    let (s, c) = alpha.sin_cos();
    let pairs = (0..sheet.len())
        .map(|p| {
            let g = sheet.metric_at(p);
            let e = unit_tangent(sheet, p, axis)?;
            let b = &frame.f2[p] * c + e * s;
            Ok((g * &frame.f1[p], -(g * b)))
        })
        .collect::<Result<Vec<_>>>()?;
    TwistorSheet::from_covectors(sheet.metric().clone(), sheet.domain().clone(), sheet.vertices(), pairs, None, Provenance::Synthetic)
}

// Fourth-order derivative weights at node i from the five nearest nodes.
fn fd_stencil(nodes: &[f64], i: usize, periodic: bool, period: f64) -> Vec<(usize, f64)> {
    let n = nodes.len();
    if periodic {
        let h = period / n as f64;
        return [(-2i64, 1.0), (-1, -8.0), (1, 8.0), (2, -1.0)]
            .iter()
            .map(|&(o, w)| (((i as i64 + o).rem_euclid(n as i64)) as usize, w / (12.0 * h)))
            .collect();
    }
    let start = i.saturating_sub(2).min(n - 5);
    let idx: Vec<usize> = (start..start + 5).collect();
    let x0 = nodes[i];
    idx.iter()
        .map(|&j| {
            let mut w = 0.0;
            for &m in &idx {
                if m == j {
                    continue;
                }
                let mut prod = 1.0 / (nodes[j] - nodes[m]);
                for &l in &idx {
                    if l != j && l != m {
                        prod *= (x0 - nodes[l]) / (nodes[j] - nodes[l]);
                    }
                }
                w += prod;
            }
            (j, w)
        })
        .collect()
}

/// Largest |ϑ(T)| over vertices and parameter directions, with T the
/// fourth-order finite-difference tangent of the x-component.
pub fn theta_residual(ts: &TwistorSheet) -> f64 {
    let dom = ts.domain();
    let mut worst: f64 = 0.0;
    for (p, pt) in ts.points().iter().enumerate() {
        for a in 0..dom.k() {
            let ax = dom.axis(a);
            let (lo, hi) = ax.param.range;
            let i = dom.coord(p, a);
            let base = p - i * dom.stride(a);
            let mut t = DVector::zeros(pt.n());
            for (j, w) in fd_stencil(&ax.nodes, i, ax.param.periodic, hi - lo) {
                t.axpy(w, &ts.points()[base + j * dom.stride(a)].x, 1.0);
            }
            worst = worst.max(theta_eval(pt, &t).norm());
        }
    }
    worst
}

/// Sup over vertices and directions of |(Y⌟dϑ)(T) + T(Y⌟ϑ)| for a chart field Y.
pub fn legendrian_residual(ts: &TwistorSheet, field: &[DVector<f64>]) -> Result<f64> {
    if field.len() != ts.len() {
        return Err(Error::MismatchedSheets);
    }
    let n = ts.metric().dim();
    let dom = ts.domain();
    let tangents = ts.chart_tangents();
    // Y⌟ϑ = p·ξ as (re, im) pairs
    let contraction: Vec<f64> = ts
        .points()
        .iter()
        .zip(field)
        .flat_map(|(pt, y)| {
            let c = theta_eval(pt, y);
            [c.re, c.im]
        })
        .collect();
    let mut worst: f64 = 0.0;
    for a in 0..dom.k() {
        let dc = dom.differentiate(&contraction, 2, a);
        for (p, y) in field.iter().enumerate() {
            let t = tangents[p].column(a);
            let t: Vec<f64> = t.iter().cloned().collect();
            let yv: Vec<f64> = y.iter().cloned().collect();
            let term = dtheta(&yv, &t, n) + C64::new(dc[2 * p], dc[2 * p + 1]);
            worst = worst.max(term.norm());
        }
    }
    if !worst.is_finite() {
        return Err(Error::Check("non-finite Legendrian residual".into()));
    }
    Ok(worst)
}

/// Ψ_* v by central differences of the Gauss lift along the perturbation, in gauge index r.
pub fn lifted_field(sheet: &DiscreteSheet, v: &NormalField, eps: f64, r: usize) -> Result<Vec<DVector<f64>>> {
    let plus = gauss_lift_with_index(&sheet.perturb_field(v, eps)?, Some(r))?;
    let minus = gauss_lift_with_index(&sheet.perturb_field(v, -eps)?, Some(r))?;
    Ok(plus.points().iter().zip(minus.points()).map(|(a, b)| (a.z() - b.z()) / (2.0 * eps)).collect())
}

/// The vertical field (0, bump·ê♭, 0) on a lift, ê the unit tangent along `axis`.
pub fn vertical_field(sheet: &DiscreteSheet, axis: usize) -> Result<Vec<DVector<f64>>> {
    let n = sheet.dim();
    let zero = DVector::zeros(n);
    (0..sheet.len())
        .map(|p| {
            let e = unit_tangent(sheet, p, axis)?;
            let flat = sheet.metric_at(p) * e * sheet.domain().bump(p);
            Ok(join(&zero, &flat, &zero))
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LeviReport {
    /// Singular values of the real span of i[V_i, V̄_j] mod H, descending.
    pub singular_values: Vec<f64>,
    pub quotient_dim: usize,
}

impl LeviReport {
    pub fn smallest(&self) -> f64 {
        self.singular_values.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

// P_{D(q)} D₀ at the re-gauged point q.
fn frame_at(metric: &MetricSpace, z: &DVector<f64>, r: usize, d0: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let (x, u, v) = split(z);
    let q = gauge_covectors(metric, &x, &u, &v, Some(r))?;
    let d = cr_basis(metric, &q)?.d;
    Ok(&d * (d.adjoint() * d0))
}

fn levi_once(metric: &MetricSpace, p: &TwistorPoint, cr: &CrData, eps: f64) -> Result<Option<LeviReport>> {
    let z = p.z();
    let m = cr.d.ncols();
    let d0 = &cr.d;
    let i_unit = C64::new(0.0, 1.0);
    // derivative of the frame along Re V_i and Im V_i
    let mut deriv = Vec::with_capacity(2 * m);
    for i in 0..m {
        for part in [d0.column(i).map(|c| c.re), d0.column(i).map(|c| c.im)] {
            let fp = frame_at(metric, &(&z + &part * eps), p.r, d0)?;
            let fm = frame_at(metric, &(&z - &part * eps), p.r, d0)?;
            let jump = (&fp - d0).norm().max((&fm - d0).norm());
            if jump > 0.5 {
                return Ok(None);
            }
            deriv.push((fp - fm) / C64::new(2.0 * eps, 0.0));
        }
    }
    let q = cr.quotient.map(|c| C64::new(c, 0.0));
    let mut cols = Vec::with_capacity(2 * m * m);
    for i in 0..m {
        for j in 0..m {
            // ∂_{V_i} V̄_j − ∂_{V̄_j} V_i
            let dvi_vbar = deriv[2 * i].column(j).map(|c| c.conj()) + deriv[2 * i + 1].column(j).map(|c| c.conj()) * i_unit;
            let dvbar_vi = deriv[2 * j].column(i) - deriv[2 * j + 1].column(i) * i_unit;
            let bracket = (dvi_vbar - dvbar_vi) * i_unit;
            let l = q.adjoint() * bracket;
            cols.push(l.map(|c| c.re));
            cols.push(l.map(|c| c.im));
        }
    }
    let mat = DMatrix::from_columns(&cols);
    let mut sv: Vec<f64> = mat.singular_values().iter().cloned().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(Some(LeviReport { singular_values: sv, quotient_dim: cr.quotient.ncols() }))
}

/// Levi map D → TN/H from finite-difference brackets of a local frame of D.
pub fn levi_form(metric: &MetricSpace, p: &TwistorPoint, eps: f64) -> Result<LeviReport> {
    let cr = cr_basis(metric, p)?;
    if let Some(rep) = levi_once(metric, p, &cr, eps)? {
        return Ok(rep);
    }
    levi_once(metric, p, &cr, eps / 2.0)?.ok_or_else(|| Error::Check(format!("frame of D is discontinuous near {:?}", p.x.as_slice())))
}

/// Chart variable names x0.., u0.., v0...
pub fn chart_names(n: usize) -> Vec<String> {
    ["x", "u", "v"].iter().flat_map(|c| (0..n).map(move |i| format!("{c}{i}"))).collect()
}

#[derive(Debug, Clone)]
struct FormTerm {
    indices: Vec<usize>,
    coeff: Expression,
    bound: BoundExpr,
    // chart indices the coefficient depends on
    depends: Vec<usize>,
}

/// A k-form Σ c_I(z) dz^I on the chart of N.
#[derive(Debug, Clone)]
pub struct ChartForm {
    n: usize,
    degree: usize,
    terms: Vec<FormTerm>,
}

impl ChartForm {
    /// Terms are (chart variable names of dz^I, coefficient).
    pub fn new(n: usize, degree: usize, terms: Vec<(Vec<String>, Expression)>) -> Result<ChartForm> {
        let names = chart_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let terms = terms
            .into_iter()
            .enumerate()
            .map(|(t, (idx, coeff))| {
                if idx.len() != degree {
                    return Err(Error::Invalid(format!("term {t} has {} differentials, expected {degree}", idx.len())));
                }
                let indices = idx
                    .iter()
                    .map(|s| {
                        names.iter().position(|m| m == s).ok_or_else(|| Error::Invalid(format!("term {t}: unknown chart variable `{s}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let bound = coeff.bind(&refs).map_err(|e| Error::eval(format!("coefficient of term {t}"), e))?;
                let vars = coeff.variables();
                let depends = (0..3 * n).filter(|&i| vars.contains(&names[i])).collect();
                Ok(FormTerm { indices, coeff, bound, depends })
            })
            .collect::<Result<_>>()?;
        Ok(ChartForm { n, degree, terms })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Every coefficient is a constant, so dγ = 0.
    pub fn is_constant(&self) -> bool {
        self.terms.iter().all(|t| t.depends.is_empty())
    }

    fn coeff(&self, t: &FormTerm, z: &[f64]) -> Result<f64> {
        t.bound.eval(z).map_err(|e| Error::eval(format!("form coefficient `{}`", t.coeff.source()), e))
    }

    /// γ(vs₁, …, vs_k) at z.
    pub fn eval(&self, z: &DVector<f64>, vs: &[DVector<f64>]) -> Result<f64> {
        let mut total = 0.0;
        for t in &self.terms {
            let c = self.coeff(t, z.as_slice())?;
            if c != 0.0 {
                total += c * minor(vs, &t.indices);
            }
        }
        Ok(total)
    }

    /// dγ(vs₀, …, vs_k) at z, coefficient derivatives by central differences.
    pub fn d_eval(&self, z: &DVector<f64>, vs: &[DVector<f64>]) -> Result<f64> {
        let mut total = 0.0;
        let mut rows = Vec::with_capacity(self.degree + 1);
        for t in &self.terms {
            for &m in &t.depends {
                if t.indices.contains(&m) {
                    continue;
                }
                let mut zp = z.as_slice().to_vec();
                let mut zm = zp.clone();
                zp[m] += H_AMB;
                zm[m] -= H_AMB;
                let dc = (self.coeff(t, &zp)? - self.coeff(t, &zm)?) / (2.0 * H_AMB);
                rows.clear();
                rows.push(m);
                rows.extend_from_slice(&t.indices);
                total += dc * minor(vs, &rows);
            }
        }
        Ok(total)
    }
}

fn minor(vs: &[DVector<f64>], rows: &[usize]) -> f64 {
    let k = rows.len();
    DMatrix::from_fn(k, k, |i, j| vs[j][rows[i]]).determinant()
}

/// f_γ = Σ_p W_p γ(z_p; ∂₁z, …, ∂_kz).
pub fn observable_value(domain: &ParamDomain, zs: &[DVector<f64>], gamma: &ChartForm) -> Result<f64> {
    let tangents = spectral_tangents(domain, zs);
    let terms: Vec<f64> = (0..domain.len())
        .into_par_iter()
        .map(|p| {
            let vs: Vec<DVector<f64>> = tangents[p].column_iter().map(|c| c.into_owned()).collect();
            Ok(domain.weight(p) * gamma.eval(&zs[p], &vs)?)
        })
        .collect::<Result<_>>()?;
    Ok(terms.iter().sum())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observable {
    pub value: f64,
    /// (f(z + εw) − f(z − εw)) / 2ε.
    pub fd_derivative: f64,
    /// ∫ w⌟dγ + ∫_∂ w⌟γ.
    pub formula: f64,
}

impl Observable {
    pub fn residual(&self) -> f64 {
        (self.fd_derivative - self.formula).abs()
    }
}

/// f_γ and both sides of its derivative identity along the chart field w.
pub fn observable_and_derivative(ts: &TwistorSheet, gamma: &ChartForm, w: &[DVector<f64>], eps: f64) -> Result<Observable> {
    let dom = ts.domain();
    let k = dom.k();
    if gamma.degree() != k || gamma.n() != ts.metric().dim() {
        return Err(Error::Invalid(format!(
            "form of degree {} on a {}-dimensional chart cannot be integrated over this sheet",
            gamma.degree(),
            gamma.n()
        )));
    }
    if w.len() != ts.len() {
        return Err(Error::MismatchedSheets);
    }
    let zs = ts.chart_points();
    let value = observable_value(dom, &zs, gamma)?;
    let shifted = |s: f64| -> Vec<DVector<f64>> { zs.iter().zip(w).map(|(z, y)| z + y * s).collect() };
    let fd_derivative = (observable_value(dom, &shifted(eps), gamma)? - observable_value(dom, &shifted(-eps), gamma)?) / (2.0 * eps);

    let tangents = spectral_tangents(dom, &zs);
    let interior: Vec<f64> = (0..dom.len())
        .into_par_iter()
        .map(|p| {
            let mut vs = vec![w[p].clone()];
            vs.extend(tangents[p].column_iter().map(|c| c.into_owned()));
            Ok(dom.weight(p) * gamma.d_eval(&zs[p], &vs)?)
        })
        .collect::<Result<_>>()?;
    let mut formula: f64 = interior.iter().sum();

    for a in 0..k {
        let ax = dom.axis(a);
        if ax.param.periodic {
            continue;
        }
        let last = ax.len() - 1;
        let parity = if a % 2 == 0 { 1.0 } else { -1.0 };
        for p in 0..dom.len() {
            let i = dom.coord(p, a);
            let sign = if i == last {
                parity
            } else if i == 0 {
                -parity
            } else {
                continue;
            };
            let face_weight: f64 = (0..k).filter(|&b| b != a).map(|b| dom.axis(b).weights[dom.coord(p, b)]).product();
            let mut vs = vec![w[p].clone()];
            vs.extend((0..k).filter(|&b| b != a).map(|b| tangents[p].column(b).into_owned()));
            formula += sign * face_weight * gamma.eval(&zs[p], &vs)?;
        }
    }
    Ok(Observable { value, fd_derivative, formula })
}

/// w = P_H(U) + P_vert(U′) with U bump-damped, so ϖ_*w vanishes on the boundary.
pub fn observable_field(ts: &TwistorSheet, rng: &mut impl Rng) -> Result<Vec<DVector<f64>>> {
    let width = 3 * ts.metric().dim();
    let horizontal = smooth_ambient(ts.domain(), width, true, rng);
    let vertical = smooth_ambient(ts.domain(), width, false, rng);
    let cr = ts.cr_data()?;
    Ok(cr.iter().zip(horizontal.iter().zip(&vertical)).map(|(c, (h, v))| c.project_h(h) + c.project_vertical(v)).collect())
}
