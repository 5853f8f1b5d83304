//! Pseudo-Riemannian metrics on a single chart of ℝⁿ.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::expr::{BinOp, BoundExpr, Expression, Node};

/// Below this |det g| a metric counts as degenerate.
pub const DET_TOL: f64 = 1e-12;

/// Default central-difference step for ambient derivatives.
pub const H_AMB: f64 = 1e-5;

/// Chart variable names `x0 .. x{n-1}`.
pub fn coordinate_names(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("x{i}")).collect()
}

#[derive(Debug, Clone)]
pub struct MetricSpace {
    n: usize,
    name: String,
    entries: Vec<Vec<Expression>>,
    // row-major n*n, resolved against x0..x{n-1}
    bound: Vec<BoundExpr>,
    constant: Option<DMatrix<f64>>,
    /// (negative, positive) eigenvalue counts.
    signature: (usize, usize),
}

impl MetricSpace {
    pub fn euclidean(n: usize) -> Result<MetricSpace> {
        Self::diagonal(format!("euclidean({n})"), n, 0)
    }

    /// Signature (1, n-1) with `x0` as the time coordinate.
    pub fn minkowski(n: usize) -> Result<MetricSpace> {
        Self::diagonal(format!("minkowski({n})"), n, 1)
    }

    fn diagonal(name: String, n: usize, negatives: usize) -> Result<MetricSpace> {
        if n < 3 {
            return Err(Error::Invalid(format!("dimension must be at least 3, got {n}")));
        }
        let entries = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| match (i == j, i < negatives) {
                        (false, _) => Expression::constant(0.0),
                        (true, true) => Expression::constant(-1.0),
                        (true, false) => Expression::constant(1.0),
                    })
                    .collect()
            })
            .collect();
        let mut m = Self::custom(entries, (negatives, n - negatives))?;
        m.name = name;
        Ok(m)
    }

    /// `e^{...}`-style rescaling: every entry of `base` multiplied by `factor`.
    pub fn conformal(factor: Expression, base: &MetricSpace) -> Result<MetricSpace> {
        let entries = base
            .entries
            .iter()
            .map(|row| {
                row.iter()
                    .map(|e| {
                        if e.as_constant() == Some(0.0) {
                            e.clone()
                        } else {
                            Expression::from_node(Node::Bin(BinOp::Mul, Box::new(factor.node().clone()), Box::new(e.node().clone())))
                        }
                    })
                    .collect()
            })
            .collect();
        let mut m = Self::custom(entries, base.signature)?;
        m.name = format!("conformal({}, {})", factor.source(), base.name);
        Ok(m)
    }

    pub fn custom(entries: Vec<Vec<Expression>>, signature: (usize, usize)) -> Result<MetricSpace> {
        let n = entries.len();
        if n < 3 {
            return Err(Error::Invalid(format!("dimension must be at least 3, got {n}")));
        }
        if signature.0 + signature.1 != n {
            return Err(Error::Invalid(format!("signature {signature:?} does not add up to dimension {n}")));
        }
        for (i, row) in entries.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Invalid(format!("metric row {i} has {} entries, expected {n}", row.len())));
            }
        }
        for (i, row) in entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate().take(i) {
                if *e != entries[j][i] {
                    return Err(Error::Invalid(format!("metric entries [{i}][{j}] and [{j}][{i}] differ")));
                }
            }
        }
        let names = coordinate_names(n);
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let mut bound = Vec::with_capacity(n * n);
        for (i, row) in entries.iter().enumerate() {
            for (j, e) in row.iter().enumerate() {
                bound.push(e.bind(&refs).map_err(|err| Error::eval(format!("metric entry [{i}][{j}]"), err))?);
            }
        }
        let constant = if entries.iter().flatten().all(|e| e.as_constant().is_some()) {
            Some(DMatrix::from_fn(n, n, |i, j| entries[i][j].as_constant().unwrap()))
        } else {
            None
        };
        Ok(MetricSpace { n, name: "custom".into(), entries, bound, constant, signature })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn signature(&self) -> (usize, usize) {
        self.signature
    }

    pub fn entries(&self) -> &[Vec<Expression>] {
        &self.entries
    }

    pub fn is_constant(&self) -> bool {
        self.constant.is_some()
    }

    pub fn is_riemannian(&self) -> bool {
        self.signature.0 == 0
    }

    /// g(x) without the nondegeneracy check.
    pub fn raw_metric(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if let Some(c) = &self.constant {
            return Ok(c.clone());
        }
        let n = self.n;
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let val = self.bound[i * n + j].eval(x).map_err(|e| Error::eval(format!("metric entry [{i}][{j}] at {x:?}"), e))?;
                g[(i, j)] = val;
                g[(j, i)] = val;
            }
        }
        Ok(g)
    }

    pub fn metric_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.raw_metric(x)?;
        let det = g.determinant();
        if !(det.abs() > DET_TOL) {
            return Err(Error::DegenerateMetric { point: x.to_vec(), det });
        }
        Ok(g)
    }

    pub fn inverse_at(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let g = self.metric_at(x)?;
        g.clone().try_inverse().ok_or(Error::DegenerateMetric { point: x.to_vec(), det: g.determinant() })
    }

    pub fn sqrt_abs_det(&self, x: &[f64]) -> Result<f64> {
        Ok(self.metric_at(x)?.determinant().abs().sqrt())
    }

    /// Ω(v₁,…,vₙ) = sqrt|det g(x)| · det[v₁ … vₙ].
    pub fn volume_form(&self, x: &[f64], vs: &[DVector<f64>]) -> Result<f64> {
        if vs.len() != self.n {
            return Err(Error::Invalid(format!("volume form takes {} vectors, got {}", self.n, vs.len())));
        }
        let m = DMatrix::from_columns(vs);
        Ok(self.sqrt_abs_det(x)? * m.determinant())
    }

    pub fn inner(&self, x: &[f64], v: &DVector<f64>, w: &DVector<f64>) -> Result<f64> {
        let g = self.metric_at(x)?;
        Ok(v.dot(&(&g * w)))
    }

    /// (negative, positive) eigenvalue counts of g(x).
    pub fn signature_at(&self, x: &[f64]) -> Result<(usize, usize)> {
        let g = self.metric_at(x)?;
        let eig = g.symmetric_eigenvalues();
        Ok((eig.iter().filter(|&&l| l < 0.0).count(), eig.iter().filter(|&&l| l > 0.0).count()))
    }

    pub fn check_point(&self, x: &[f64]) -> Result<()> {
        let found = self.signature_at(x)?;
        if found != self.signature {
            return Err(Error::Signature { point: x.to_vec(), found, expected: self.signature });
        }
        Ok(())
    }

    /// ∂g/∂x^m at x by central differences with step h.
    pub fn metric_derivative(&self, x: &[f64], m: usize, h: f64) -> Result<DMatrix<f64>> {
        if self.constant.is_some() {
            return Ok(DMatrix::zeros(self.n, self.n));
        }
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[m] += h;
        xm[m] -= h;
        Ok((self.raw_metric(&xp)? - self.raw_metric(&xm)?) / (2.0 * h))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    fn basis(n: usize) -> Vec<DVector<f64>> {
        (0..n).map(|i| e(n, i)).collect()
    }

    #[test]
    fn builtins() {
        let m = MetricSpace::minkowski(4).unwrap();
        assert_eq!(m.metric_at(&[0.3, 1.0, -2.0, 5.0]).unwrap(), DMatrix::from_diagonal(&DVector::from_vec(vec![-1.0, 1.0, 1.0, 1.0])));
        assert_eq!(MetricSpace::euclidean(3).unwrap().metric_at(&[1.0, 2.0, 3.0]).unwrap(), DMatrix::identity(3, 3));
        let c = MetricSpace::conformal(Expression::parse("exp(2*x1)").unwrap(), &m).unwrap();
        assert_eq!(c.metric_at(&[0.0; 4]).unwrap(), m.metric_at(&[0.0; 4]).unwrap());
        assert!(MetricSpace::euclidean(2).is_err());
    }

    #[test]
    fn volume_form_examples() {
        let m = MetricSpace::minkowski(4).unwrap();
        assert_eq!(m.volume_form(&[0.0; 4], &basis(4)).unwrap(), 1.0);
        let v = DVector::from_vec(vec![0.3, -1.0, 2.0, 0.5]);
        let vs = vec![v.clone(), v, e(4, 2), e(4, 3)];
        assert_eq!(m.volume_form(&[0.0; 4], &vs).unwrap(), 0.0);
        // det of e^{2x1} diag(-1,1,1,1) is -e^{8 x1}, so sqrt|det| = e^{4 x1}
        let c = MetricSpace::conformal(Expression::parse("exp(2*x1)").unwrap(), &m).unwrap();
        let got = c.volume_form(&[0.0, 0.5, 0.0, 0.0], &basis(4)).unwrap();
        let oracle = c.metric_at(&[0.0, 0.5, 0.0, 0.0]).unwrap().determinant().abs().sqrt();
        assert!((got - oracle).abs() < 1e-12);
        assert!((got - 1f64.exp().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn inner_examples() {
        let m = MetricSpace::minkowski(4).unwrap();
        assert_eq!(m.inner(&[0.0; 4], &e(4, 0), &e(4, 0)).unwrap(), -1.0);
        assert_eq!(m.inner(&[0.0; 4], &e(4, 0), &e(4, 1)).unwrap(), 0.0);
        let v = DVector::from_vec(vec![1.0, 2.0, 2.0]);
        assert_eq!(MetricSpace::euclidean(3).unwrap().inner(&[0.0; 3], &v, &v).unwrap(), 9.0);
    }

    #[test]
    fn custom_must_be_symmetric() {
        let p = |s: &str| Expression::parse(s).unwrap();
        let entries = vec![vec![p("1"), p("x0"), p("0")], vec![p("x1"), p("1"), p("0")], vec![p("0"), p("0"), p("1")]];
        assert!(matches!(MetricSpace::custom(entries, (0, 3)), Err(Error::Invalid(_))));
    }

    #[test]
    fn degenerate_metric_is_reported() {
        let c = MetricSpace::conformal(Expression::parse("x0").unwrap(), &MetricSpace::euclidean(3).unwrap()).unwrap();
        assert!(matches!(c.metric_at(&[0.0, 1.0, 1.0]), Err(Error::DegenerateMetric { .. })));
        assert!(c.metric_at(&[0.5, 1.0, 1.0]).is_ok());
    }

    #[test]
    fn volume_form_is_alternating() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let m = MetricSpace::conformal(Expression::parse("exp(x1 + 0.3*x0)").unwrap(), &MetricSpace::minkowski(4).unwrap()).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vs: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0))).collect();
            let i = rng.random_range(0..4);
            let j = (i + rng.random_range(1..4)) % 4;
            let mut ws = vs.clone();
            ws.swap(i, j);
            let a = m.volume_form(&x, &vs).unwrap();
            let b = m.volume_form(&x, &ws).unwrap();
            assert!((a + b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }

    #[test]
    fn inner_matches_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = MetricSpace::conformal(Expression::parse("1 + x2^2").unwrap(), &MetricSpace::euclidean(3).unwrap()).unwrap();
        for _ in 0..50 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let w = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let g = m.metric_at(&x).unwrap();
            assert_eq!(m.inner(&x, &v, &w).unwrap(), v.dot(&(&g * &w)));
        }
    }

    #[test]
    fn conformal_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let base = MetricSpace::minkowski(4).unwrap();
        for f in ["0.3*x1", "sin(x0) - x2*x3", "0.5*cos(x1 + x2)"] {
            let fexpr = Expression::parse(f).unwrap();
            let factor = Expression::parse(&format!("exp(2*({f}))")).unwrap();
            let c = MetricSpace::conformal(factor, &base).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
                let fx = fexpr.bind(&["x0", "x1", "x2", "x3"]).unwrap().eval(&x).unwrap();
                let v = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                let w = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0));
                let ratio = c.inner(&x, &v, &w).unwrap() / base.inner(&x, &v, &w).unwrap();
                assert!((ratio - (2.0 * fx).exp()).abs() < 1e-12 * ratio.abs());
                let vs = basis(4);
                let vol = c.volume_form(&x, &vs).unwrap() / base.volume_form(&x, &vs).unwrap();
                assert!((vol - (4.0 * fx).exp()).abs() < 1e-12 * vol);
            }
        }
    }

    #[test]
    fn signature_counts() {
        let m = MetricSpace::minkowski(4).unwrap();
        assert_eq!(m.signature_at(&[0.0; 4]).unwrap(), (1, 3));
        assert!(m.check_point(&[0.0; 4]).is_ok());
        let bad = MetricSpace::custom(m.entries().to_vec(), (0, 4)).unwrap();
        assert!(matches!(bad.check_point(&[0.0; 4]), Err(Error::Signature { .. })));
    }
}
