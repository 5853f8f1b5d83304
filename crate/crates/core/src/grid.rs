//! Tensor-product parameter grids with spectral differentiation and quadrature.
//!
//! Periodic parameters use equispaced nodes (endpoint identified), the Fourier
//! differentiation matrix and the uniform rule. Bounded parameters use
//! Chebyshev–Gauss–Lobatto nodes, the Chebyshev differentiation matrix and
//! Clenshaw–Curtis weights.

use std::f64::consts::PI;
use std::sync::Arc;

use crate::error::{Error, Result};

pub const MIN_SAMPLES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub range: (f64, f64),
    pub samples: usize,
    pub periodic: bool,
}

impl Param {
    pub fn bounded(name: &str, a: f64, b: f64, samples: usize) -> Param {
        Param { name: name.into(), range: (a, b), samples, periodic: false }
    }

    pub fn periodic(name: &str, a: f64, b: f64, samples: usize) -> Param {
        Param { name: name.into(), range: (a, b), samples, periodic: true }
    }

    /// The angle parameter on [0, 2π).
    pub fn angle(name: &str, samples: usize) -> Param {
        Param::periodic(name, 0.0, 2.0 * PI, samples)
    }
}

/// Nodes, weights and differentiation matrix for one parameter.
#[derive(Debug, Clone)]
pub struct Axis {
    pub param: Param,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    /// Row-major `samples × samples`.
    pub diff: Vec<f64>,
}

impl Axis {
    pub fn new(param: Param) -> Result<Axis> {
        let (a, b) = param.range;
        let n = param.samples;
        if n < MIN_SAMPLES {
            return Err(Error::Invalid(format!("parameter `{}` needs at least {MIN_SAMPLES} samples, got {n}", param.name)));
        }
        if !(b > a) || !a.is_finite() || !b.is_finite() {
            return Err(Error::Invalid(format!("parameter `{}` has an empty range [{a}, {b}]", param.name)));
        }
        let (nodes, weights, diff) = if param.periodic { fourier(a, b, n) } else { chebyshev(a, b, n) };
        Ok(Axis { param, nodes, weights, diff })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn d(&self, i: usize, j: usize) -> f64 {
        self.diff[i * self.len() + j]
    }

    /// Position in [0, 1] of node i within the range.
    pub fn unit(&self, i: usize) -> f64 {
        let (a, b) = self.param.range;
        (self.nodes[i] - a) / (b - a)
    }
}

fn fourier(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let len = b - a;
    let h = len / n as f64;
    let nodes = (0..n).map(|i| a + h * i as f64).collect();
    let weights = vec![h; n];
    let scale = 2.0 * PI / len;
    let mut diff = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let k = i as i64 - j as i64;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            let half = k as f64 * PI / n as f64;
            let kernel = if n.is_multiple_of(2) { 1.0 / half.tan() } else { 1.0 / half.sin() };
            diff[i * n + j] = 0.5 * sign * kernel * scale;
        }
    }
    (nodes, weights, diff)
}

fn chebyshev(a: f64, b: f64, n: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let m = n - 1;
    let theta: Vec<f64> = (0..n).map(|i| PI * i as f64 / m as f64).collect();
    // x_i = -cos(theta_i) runs from -1 to 1
    let x: Vec<f64> = theta.iter().map(|t| -t.cos()).collect();
    let nodes = x.iter().map(|xi| a + (b - a) * (xi + 1.0) / 2.0).collect();

    let c = |i: usize| {
        let edge = if i == 0 || i == m { 2.0 } else { 1.0 };
        if i.is_multiple_of(2) {
            edge
        } else {
            -edge
        }
    };
    let mut diff = vec![0.0; n * n];
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            if i != j {
                // nodes are ascending, so signs follow the reflected Trefethen matrix
                let dij = c(i) / c(j) / (x[i] - x[j]);
                diff[i * n + j] = dij;
                row += dij;
            }
        }
        diff[i * n + i] = -row;
    }
    let scale = 2.0 / (b - a);
    diff.iter_mut().for_each(|d| *d *= scale);

    let mut weights = vec![0.0; n];
    let mut v = vec![1.0; n.saturating_sub(2)];
    if m.is_multiple_of(2) {
        let w0 = 1.0 / (m * m - 1) as f64;
        weights[0] = w0;
        weights[m] = w0;
        for k in 1..m / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * k as f64 * theta[i + 1]).cos() / (4 * k * k - 1) as f64;
            }
        }
        for (i, vi) in v.iter_mut().enumerate() {
            *vi -= (m as f64 * theta[i + 1]).cos() / (m * m - 1) as f64;
        }
    } else {
        let w0 = 1.0 / (m * m) as f64;
        weights[0] = w0;
        weights[m] = w0;
        for k in 1..=(m - 1) / 2 {
            for (i, vi) in v.iter_mut().enumerate() {
                *vi -= 2.0 * (2.0 * k as f64 * theta[i + 1]).cos() / (4 * k * k - 1) as f64;
            }
        }
    }
    for i in 1..m {
        weights[i] = 2.0 * v[i - 1] / m as f64;
    }
    weights.iter_mut().for_each(|w| *w *= (b - a) / 2.0);
    (nodes, weights, diff)
}

/// The parameter domain of a sheet: k axes, flattened row-major (first axis slowest).
#[derive(Debug, Clone)]
pub struct ParamDomain {
    axes: Arc<Vec<Axis>>,
    strides: Vec<usize>,
    len: usize,
}

impl PartialEq for ParamDomain {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.axes, &other.axes) || self.axes.iter().map(|a| &a.param).eq(other.axes.iter().map(|a| &a.param))
    }
}

impl ParamDomain {
    pub fn new(params: Vec<Param>) -> Result<ParamDomain> {
        if params.is_empty() {
            return Err(Error::Invalid("a sheet needs at least one parameter".into()));
        }
        for (i, p) in params.iter().enumerate() {
            if params[..i].iter().any(|q| q.name == p.name) {
                return Err(Error::Invalid(format!("duplicate parameter name `{}`", p.name)));
            }
        }
        let axes: Vec<Axis> = params.into_iter().map(Axis::new).collect::<Result<_>>()?;
        let k = axes.len();
        let mut strides = vec![1; k];
        for a in (0..k - 1).rev() {
            strides[a] = strides[a + 1] * axes[a + 1].len();
        }
        let len = strides[0] * axes[0].len();
        Ok(ParamDomain { axes: Arc::new(axes), strides, len })
    }

    /// Same parameters with every sample count replaced.
    pub fn resampled(&self, samples: &[usize]) -> Result<ParamDomain> {
        ParamDomain::new(self.axes.iter().zip(samples).map(|(a, &n)| Param { samples: n, ..a.param.clone() }).collect())
    }

    pub fn k(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn axis(&self, a: usize) -> &Axis {
        &self.axes[a]
    }

    pub fn stride(&self, a: usize) -> usize {
        self.strides[a]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.axes.iter().map(Axis::len).collect()
    }

    pub fn names(&self) -> Vec<String> {
        self.axes.iter().map(|a| a.param.name.clone()).collect()
    }

    /// Index of vertex p along axis a.
    pub fn coord(&self, p: usize, a: usize) -> usize {
        (p / self.strides[a]) % self.axes[a].len()
    }

    pub fn multi_index(&self, p: usize) -> Vec<usize> {
        (0..self.k()).map(|a| self.coord(p, a)).collect()
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        idx.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    /// Parameter values at vertex p.
    pub fn point(&self, p: usize) -> Vec<f64> {
        (0..self.k()).map(|a| self.axes[a].nodes[self.coord(p, a)]).collect()
    }

    /// Quadrature weight of vertex p.
    pub fn weight(&self, p: usize) -> f64 {
        (0..self.k()).map(|a| self.axes[a].weights[self.coord(p, a)]).product()
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.len).map(|p| self.weight(p)).collect()
    }

    pub fn is_closed(&self) -> bool {
        self.axes.iter().all(|a| a.param.periodic)
    }

    /// True on the endpoints of bounded parameters.
    pub fn on_boundary(&self, p: usize) -> bool {
        (0..self.k()).any(|a| {
            let ax = &self.axes[a];
            let i = self.coord(p, a);
            !ax.param.periodic && (i == 0 || i + 1 == ax.len())
        })
    }

    pub fn boundary_mask(&self) -> Vec<bool> {
        (0..self.len).map(|p| self.on_boundary(p)).collect()
    }

    /// Product of sin(π τ) over bounded parameters, τ the unit position.
    pub fn bump(&self, p: usize) -> f64 {
        (0..self.k())
            .filter(|&a| !self.axes[a].param.periodic)
            .map(|a| {
                let i = self.coord(p, a);
                let ax = &self.axes[a];
                if i == 0 || i + 1 == ax.len() {
                    0.0
                } else {
                    (PI * ax.unit(i)).sin()
                }
            })
            .product()
    }

    /// Spectral derivative along axis a of a field with `width` components per vertex.
    pub fn differentiate(&self, data: &[f64], width: usize, a: usize) -> Vec<f64> {
        let ax = &self.axes[a];
        let n = ax.len();
        let stride = self.strides[a];
        let mut out = vec![0.0; data.len()];
        for p in 0..self.len {
            let i = self.coord(p, a);
            let base = p - i * stride;
            let row = &ax.diff[i * n..(i + 1) * n];
            let o = &mut out[p * width..(p + 1) * width];
            for (j, &d) in row.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let q = base + j * stride;
                let src = &data[q * width..(q + 1) * width];
                for c in 0..width {
                    o[c] += d * src[c];
                }
            }
        }
        out
    }

    /// Transpose of [`Self::differentiate`]: out[q] = Σ_p D[p,q] data[p] along axis a.
    pub fn differentiate_adjoint(&self, data: &[f64], width: usize, a: usize) -> Vec<f64> {
        let ax = &self.axes[a];
        let n = ax.len();
        let stride = self.strides[a];
        let mut out = vec![0.0; data.len()];
        for q in 0..self.len {
            let j = self.coord(q, a);
            let base = q - j * stride;
            let o = &mut out[q * width..(q + 1) * width];
            for i in 0..n {
                let d = ax.diff[i * n + j];
                if d == 0.0 {
                    continue;
                }
                let p = base + i * stride;
                let src = &data[p * width..(p + 1) * width];
                for c in 0..width {
                    o[c] += d * src[c];
                }
            }
        }
        out
    }
}
