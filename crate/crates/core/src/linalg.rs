//! Sparse symmetric positive-definite systems and their iterative solvers.
//!
//! Both the thermal conductance operator and the PDN nodal matrix go through
//! here. Reductions are chunked in a fixed order so that deterministic runs
//! are bit-identical regardless of the rayon worker count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::scalar::Scalar;

/// Rows per parallel work item; fixed so reduction order never depends on
/// the thread count.
const CHUNK: usize = 4096;
const PARALLEL_MIN: usize = 4 * CHUNK;

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Jacobi-preconditioned conjugate gradient.
    #[default]
    Cg,
    /// Successive over-relaxation (natural ordering).
    Sor,
}

#[cfg_attr(feature = "schema", derive(schemars::JsonSchema))]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub method: Method,
    /// Target relative residual ‖b − Ax‖ / ‖b‖.
    pub tolerance: f64,
    /// `None` picks [`default_max_iterations`].
    pub max_iterations: Option<usize>,
    pub sor_omega: f64,
    /// Backward-Euler step, s.
    pub dt: Option<f64>,
    /// Fixed reduction order; bit-reproducible results.
    pub deterministic: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            method: Method::Cg,
            tolerance: 1e-8,
            max_iterations: None,
            sor_omega: 1.8,
            dt: None,
            deterministic: true,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(invalid(format!(
                "tolerance must lie in (0, 1), got {}",
                self.tolerance
            )));
        }
        if !(self.sor_omega > 0.0 && self.sor_omega < 2.0) {
            return Err(invalid(format!(
                "sor_omega must lie in (0, 2), got {}",
                self.sor_omega
            )));
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                return Err(invalid(format!("dt must be positive, got {dt}")));
            }
        }
        if self.max_iterations == Some(0) {
            return Err(invalid("max_iterations must be positive"));
        }
        Ok(())
    }

    pub fn max_iterations_for(&self, n: usize) -> usize {
        self.max_iterations.unwrap_or_else(|| default_max_iterations(n))
    }
}

/// `5000 · n^(1/3)`, capped at one million.
pub fn default_max_iterations(n: usize) -> usize {
    let est = 5000.0 * (n.max(1) as f64).cbrt();
    (est.ceil() as usize).min(1_000_000)
}

/// Compressed sparse row matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Build from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(n: usize, mut triplets: Vec<(usize, usize, T)>) -> Self {
        triplets.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut row_ptr = vec![0usize; n + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            if last == Some((r, c)) {
                let k = vals.len() - 1;
                vals[k] = vals[k] + v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// `(col, value)` entries of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.row(i)
            .find(|&(c, _)| c == j)
            .map_or(T::zero(), |(_, v)| v)
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn row_sum(&self, i: usize) -> T {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Dense copy, row-major; for tests and small oracles.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        let mut d = vec![vec![T::zero(); self.n]; self.n];
        for (i, row) in d.iter_mut().enumerate() {
            for (j, v) in self.row(i) {
                row[j] = v;
            }
        }
        d
    }

    pub fn is_symmetric(&self, tol: T) -> bool {
        (0..self.n).all(|i| self.row(i).all(|(j, v)| (v - self.get(j, i)).abs() <= tol))
    }

    fn row_dot(&self, i: usize, x: &[T]) -> T {
        let mut acc = T::zero();
        for k in self.row_ptr[i]..self.row_ptr[i + 1] {
            acc = acc + self.vals[k] * x[self.cols[k]];
        }
        acc
    }

    /// `y = A x`.
    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        if self.n >= PARALLEL_MIN {
            y.par_chunks_mut(CHUNK).enumerate().for_each(|(c, ys)| {
                let base = c * CHUNK;
                for (k, yi) in ys.iter_mut().enumerate() {
                    *yi = self.row_dot(base + k, x);
                }
            });
        } else {
            for (i, yi) in y.iter_mut().enumerate() {
                *yi = self.row_dot(i, x);
            }
        }
    }
}

/// `A + diag(shift)` without materializing the sum; backward Euler uses the
/// shift for `C/dt`.
#[derive(Debug, Clone, Copy)]
pub struct SpdOperator<'a, T> {
    pub matrix: &'a CsrMatrix<T>,
    pub shift: Option<&'a [T]>,
}

impl<'a, T: Scalar> SpdOperator<'a, T> {
    pub fn new(matrix: &'a CsrMatrix<T>) -> Self {
        SpdOperator {
            matrix,
            shift: None,
        }
    }

    pub fn with_shift(matrix: &'a CsrMatrix<T>, shift: &'a [T]) -> Self {
        SpdOperator {
            matrix,
            shift: Some(shift),
        }
    }

    pub fn n(&self) -> usize {
        self.matrix.n()
    }

    pub fn apply(&self, x: &[T], y: &mut [T]) {
        self.matrix.mul_vec(x, y);
        if let Some(s) = self.shift {
            for ((yi, si), xi) in y.iter_mut().zip(s).zip(x) {
                *yi = *yi + *si * *xi;
            }
        }
    }

    pub fn diagonal(&self) -> Vec<T> {
        let mut d = self.matrix.diagonal();
        if let Some(s) = self.shift {
            for (di, si) in d.iter_mut().zip(s) {
                *di = *di + *si;
            }
        }
        d
    }

    /// ‖b − A x‖₂.
    pub fn residual_norm(&self, x: &[T], b: &[T], deterministic: bool) -> T {
        let mut ax = vec![T::zero(); self.n()];
        self.apply(x, &mut ax);
        for (r, bi) in ax.iter_mut().zip(b) {
            *r = *bi - *r;
        }
        dot(&ax, &ax, deterministic).sqrt()
    }
}

/// Inner product; fixed-order chunked reduction when `deterministic`.
pub fn dot<T: Scalar>(a: &[T], b: &[T], deterministic: bool) -> T {
    if a.len() < PARALLEL_MIN {
        return a.iter().zip(b).fold(T::zero(), |acc, (x, y)| acc + *x * *y);
    }
    if deterministic {
        let partials: Vec<T> = a
            .par_chunks(CHUNK)
            .zip(b.par_chunks(CHUNK))
            .map(|(x, y)| x.iter().zip(y).fold(T::zero(), |acc, (p, q)| acc + *p * *q))
            .collect();
        partials.into_iter().fold(T::zero(), |acc, v| acc + v)
    } else {
        a.par_iter().zip(b.par_iter()).map(|(x, y)| *x * *y).sum()
    }
}

pub fn norm<T: Scalar>(a: &[T], deterministic: bool) -> T {
    dot(a, a, deterministic).sqrt()
}

/// Iteration count and final relative residual of a converged solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Solve `A x = b` in place, starting from the current contents of `x`.
pub fn solve<T: Scalar>(
    op: &SpdOperator<'_, T>,
    b: &[T],
    x: &mut [T],
    options: &SolveOptions,
) -> Result<SolveStats> {
    options.validate()?;
    if b.len() != op.n() || x.len() != op.n() {
        return Err(invalid(format!(
            "system size {} but rhs {} / x {}",
            op.n(),
            b.len(),
            x.len()
        )));
    }
    if b.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(Error::NumericalFailure("non-finite input to solver".into()));
    }
    match options.method {
        Method::Cg => conjugate_gradient(op, b, x, options),
        Method::Sor => sor(op, b, x, options),
    }
}

fn conjugate_gradient<T: Scalar>(
    op: &SpdOperator<'_, T>,
    b: &[T],
    x: &mut [T],
    options: &SolveOptions,
) -> Result<SolveStats> {
    let n = op.n();
    let det = options.deterministic;
    let b_norm = norm(b, det);
    if b_norm == T::zero() {
        x.fill(T::zero());
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let tol = T::of(options.tolerance) * b_norm;
    let max_iter = options.max_iterations_for(n);

    let inv_diag: Vec<T> = op
        .diagonal()
        .into_iter()
        .map(|d| if d > T::zero() { T::one() / d } else { T::one() })
        .collect();

    let mut r = vec![T::zero(); n];
    op.apply(x, &mut r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
    let mut r_norm = norm(&r, det);
    if r_norm <= tol {
        return Ok(SolveStats {
            iterations: 0,
            residual: (r_norm / b_norm).as_f64(),
        });
    }
    let mut z: Vec<T> = r.iter().zip(&inv_diag).map(|(a, m)| *a * *m).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z, det);
    let mut ap = vec![T::zero(); n];

    for it in 1..=max_iter {
        op.apply(&p, &mut ap);
        let pap = dot(&p, &ap, det);
        if !pap.is_finite() || pap <= T::zero() {
            return Err(Error::NumericalFailure(format!(
                "operator is not positive definite along the search direction (pAp = {pap})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] = x[i] + alpha * p[i];
            r[i] = r[i] - alpha * ap[i];
        }
        r_norm = norm(&r, det);
        if !r_norm.is_finite() {
            return Err(Error::NumericalFailure("NaN in CG residual".into()));
        }
        if r_norm <= tol {
            // guard against drift of the recursive residual
            let true_norm = op.residual_norm(x, b, det);
            if true_norm <= tol {
                return Ok(SolveStats {
                    iterations: it,
                    residual: (true_norm / b_norm).as_f64(),
                });
            }
            op.apply(x, &mut r);
            for (ri, bi) in r.iter_mut().zip(b) {
                *ri = *bi - *ri;
            }
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z, det);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        residual: (r_norm / b_norm).as_f64(),
    })
}

fn sor<T: Scalar>(
    op: &SpdOperator<'_, T>,
    b: &[T],
    x: &mut [T],
    options: &SolveOptions,
) -> Result<SolveStats> {
    let n = op.n();
    let det = options.deterministic;
    let b_norm = norm(b, det);
    if b_norm == T::zero() {
        x.fill(T::zero());
        return Ok(SolveStats {
            iterations: 0,
            residual: 0.0,
        });
    }
    let omega = T::of(options.sor_omega);
    let diag = op.diagonal();
    if diag.iter().any(|&d| !(d > T::zero())) {
        return Err(Error::NumericalFailure("SOR needs a positive diagonal".into()));
    }
    let tol = options.tolerance;
    let max_iter = options.max_iterations_for(n);
    let a = op.matrix;
    let mut rel = f64::INFINITY;
    for it in 1..=max_iter {
        for i in 0..n {
            let mut sigma = T::zero();
            for (j, v) in a.row(i) {
                if j != i {
                    sigma = sigma + v * x[j];
                }
            }
            let gs = (b[i] - sigma) / diag[i];
            x[i] = x[i] + omega * (gs - x[i]);
        }
        rel = (op.residual_norm(x, b, det) / b_norm).as_f64();
        if !rel.is_finite() {
            return Err(Error::NumericalFailure("NaN in SOR sweep".into()));
        }
        if rel <= tol {
            return Ok(SolveStats {
                iterations: it,
                residual: rel,
            });
        }
    }
    Err(Error::ConvergenceFailure {
        iterations: max_iter,
        residual: rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 1D Laplacian with grounded ends, size n.
    fn laplacian(n: usize) -> CsrMatrix<f64> {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        CsrMatrix::from_triplets(n, t)
    }

    #[test]
    fn triplets_are_summed() {
        let m = CsrMatrix::from_triplets(2, vec![(0, 0, 1.0), (0, 0, 2.0), (1, 0, -1.0)]);
        assert_eq!(m.get(0, 0), 3.0);
        assert_eq!(m.get(1, 0), -1.0);
        assert_eq!(m.get(1, 1), 0.0);
        assert_eq!(m.nnz(), 2);
    }

    #[test]
    fn cg_and_sor_agree_on_laplacian() {
        let a = laplacian(50);
        let b: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin().abs()).collect();
        let op = SpdOperator::new(&a);
        let mut x_cg = vec![0.0; 50];
        let mut x_sor = vec![0.0; 50];
        solve(&op, &b, &mut x_cg, &SolveOptions::default()).unwrap();
        let sor_opts = SolveOptions {
            method: Method::Sor,
            ..Default::default()
        };
        solve(&op, &b, &mut x_sor, &sor_opts).unwrap();
        for (p, q) in x_cg.iter().zip(&x_sor) {
            assert!((p - q).abs() < 1e-5 * p.abs().max(1.0));
        }
        assert!(op.residual_norm(&x_cg, &b, true) <= 1e-8 * norm(&b, true) * 1.0001);
    }

    #[test]
    fn zero_rhs_gives_zero() {
        let a = laplacian(5);
        let mut x = vec![1.0; 5];
        let s = solve(&SpdOperator::new(&a), &[0.0; 5], &mut x, &SolveOptions::default()).unwrap();
        assert_eq!(s.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iteration_cap_reports_residual() {
        let a = laplacian(200);
        let b = vec![1.0; 200];
        let mut x = vec![0.0; 200];
        let opts = SolveOptions {
            max_iterations: Some(3),
            ..Default::default()
        };
        match solve(&SpdOperator::new(&a), &b, &mut x, &opts) {
            Err(Error::ConvergenceFailure {
                iterations,
                residual,
            }) => {
                assert_eq!(iterations, 3);
                assert!(residual > 1e-8);
            }
            other => panic!("expected convergence failure, got {other:?}"),
        }
    }

    #[test]
    fn nan_is_numerical_failure() {
        let a = laplacian(3);
        let mut x = vec![0.0; 3];
        let r = solve(&SpdOperator::new(&a), &[1.0, f64::NAN, 0.0], &mut x, &SolveOptions::default());
        assert!(matches!(r, Err(Error::NumericalFailure(_))));
    }

    #[test]
    fn options_validation() {
        let bad = [
            SolveOptions {
                tolerance: 0.0,
                ..Default::default()
            },
            SolveOptions {
                sor_omega: 2.0,
                ..Default::default()
            },
            SolveOptions {
                dt: Some(-1.0),
                ..Default::default()
            },
        ];
        for o in bad {
            assert!(o.validate().is_err());
        }
        assert_eq!(default_max_iterations(1000), 50_000);
    }

    #[test]
    fn deterministic_dot_is_order_stable() {
        let a: Vec<f64> = (0..100_000).map(|i| ((i * 7919) % 1000) as f64 * 1e-3).collect();
        let d1 = dot(&a, &a, true);
        let d2 = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| dot(&a, &a, true));
        assert_eq!(d1.to_bits(), d2.to_bits());
    }

    #[test]
    fn shifted_operator() {
        let a = laplacian(4);
        let s = vec![1.0; 4];
        let op = SpdOperator::with_shift(&a, &s);
        assert_eq!(op.diagonal(), vec![3.0; 4]);
        let mut y = vec![0.0; 4];
        op.apply(&[1.0; 4], &mut y);
        assert_eq!(y, vec![2.0, 1.0, 1.0, 2.0]);
    }

    #[test]
    fn f32_cg() {
        let n = 20;
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0f32));
            if i > 0 {
                t.push((i, i - 1, -1.0));
            }
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
            }
        }
        let a = CsrMatrix::from_triplets(n, t);
        let mut x = vec![0.0f32; n];
        let opts = SolveOptions {
            tolerance: 1e-5,
            ..Default::default()
        };
        solve(&SpdOperator::new(&a), &vec![1.0f32; n], &mut x, &opts).unwrap();
        // exact solution of the grounded chain: x_i = (i+1)(n-i)/2
        for (i, v) in x.iter().enumerate() {
            let exact = ((i + 1) * (n - i)) as f32 / 2.0;
            assert!((v - exact).abs() / exact < 1e-3);
        }
    }
}
