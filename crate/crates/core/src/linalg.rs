//! Small dense linear algebra: real nonsymmetric eigenvalues (Householder
//! Hessenberg reduction plus Francis double-shift QR), complex eigenvectors by
//! inverse iteration, and complex LU.

use num_complex::Complex64;

use crate::error::{Error, Result};

const ZERO: Complex64 = Complex64::new(0.0, 0.0);

/// Row-major dense complex matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<Complex64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = Complex64::new(1.0, 0.0);
        }
        m
    }

    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Self {
        Self {
            rows,
            cols,
            data: data.iter().map(|&x| Complex64::new(x, 0.0)).collect(),
        }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn matmul(&self, other: &CMatrix) -> CMatrix {
        assert_eq!(self.cols, other.rows, "matmul shape");
        let mut out = CMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == ZERO {
                    continue;
                }
                for j in 0..other.cols {
                    out.data[i * other.cols + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.rows).map(|i| self.at(i, j)).collect()
    }

    /// Largest imaginary part in absolute value.
    pub fn max_imag(&self) -> f64 {
        self.data.iter().fold(0.0, |m, z| m.max(z.im.abs()))
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|z| z.re).collect()
    }
}

/// LU factorization with partial pivoting of a square complex matrix.
pub struct ComplexLu {
    n: usize,
    lu: Vec<Complex64>,
    perm: Vec<usize>,
}

impl ComplexLu {
    pub fn new(m: &CMatrix) -> Result<Self> {
        if m.rows != m.cols {
            return Err(Error::DimensionMismatch {
                expected: m.rows,
                got: m.cols,
                context: "LU needs a square matrix",
            });
        }
        let n = m.rows;
        let mut lu = m.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = m.frobenius().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let (p, pivot) =
                (k..n)
                    .map(|i| (i, lu[i * n + k].norm()))
                    .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pivot <= 1e-300 * scale || !pivot.is_finite() {
                return Err(Error::ParameterDomain(format!(
                    "matrix is singular to working precision at column {k}"
                )));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let d = lu[k * n + k];
            for i in k + 1..n {
                let f = lu[i * n + k] / d;
                lu[i * n + k] = f;
                if f != ZERO {
                    for j in k + 1..n {
                        let v = lu[k * n + j];
                        lu[i * n + j] -= f * v;
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn solve(&self, b: &[Complex64]) -> Vec<Complex64> {
        let n = self.n;
        let mut x: Vec<Complex64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        x
    }

    pub fn inverse(&self) -> CMatrix {
        let n = self.n;
        let mut out = CMatrix::zeros(n, n);
        let mut e = vec![ZERO; n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = ZERO);
            e[j] = Complex64::new(1.0, 0.0);
            let col = self.solve(&e);
            for i in 0..n {
                out.set(i, j, col[i]);
            }
        }
        out
    }
}

/// Reduces a row-major n × n real matrix to upper Hessenberg form in place.
fn hessenberg(a: &mut [f64], n: usize) {
    let mut v = vec![0.0; n];
    for k in 0..n.saturating_sub(2) {
        let alpha_norm: f64 = (k + 1..n).map(|i| a[i * n + k].powi(2)).sum::<f64>().sqrt();
        if alpha_norm == 0.0 {
            continue;
        }
        let x0 = a[(k + 1) * n + k];
        let alpha = if x0 > 0.0 { -alpha_norm } else { alpha_norm };
        for i in 0..n {
            v[i] = 0.0;
        }
        v[k + 1] = x0 - alpha;
        for i in k + 2..n {
            v[i] = a[i * n + k];
        }
        let vnorm2: f64 = (k + 1..n).map(|i| v[i] * v[i]).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        // A ← (I − 2vvᵀ/vᵀv) A (I − 2vvᵀ/vᵀv)
        for j in 0..n {
            let s: f64 = (k + 1..n).map(|i| v[i] * a[i * n + j]).sum::<f64>() * 2.0 / vnorm2;
            for i in k + 1..n {
                a[i * n + j] -= s * v[i];
            }
        }
        for i in 0..n {
            let s: f64 = (k + 1..n).map(|j| a[i * n + j] * v[j]).sum::<f64>() * 2.0 / vnorm2;
            for j in k + 1..n {
                a[i * n + j] -= s * v[j];
            }
        }
        a[(k + 1) * n + k] = alpha;
        for i in k + 2..n {
            a[i * n + k] = 0.0;
        }
    }
}

fn sign(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Eigenvalues of an upper Hessenberg matrix by the Francis double-shift QR
/// iteration. Complex eigenvalues come out as exact conjugate pairs.
fn hessenberg_qr(a: &mut [f64], n: usize) -> Result<Vec<Complex64>> {
    let idx = |i: usize, j: usize| i * n + j;
    let mut wr = vec![0.0; n];
    let mut wi = vec![0.0; n];
    let mut anorm = 0.0;
    for i in 0..n {
        for j in i.saturating_sub(1)..n {
            anorm += a[idx(i, j)].abs();
        }
    }
    let max_its = 60 * n.max(1);
    let mut nn = n as isize - 1;
    let mut t = 0.0;
    while nn >= 0 {
        let nu = nn as usize;
        let mut its = 0usize;
        loop {
            let mut l = nu;
            while l >= 1 {
                let mut s = a[idx(l - 1, l - 1)].abs() + a[idx(l, l)].abs();
                if s == 0.0 {
                    s = anorm;
                }
                if a[idx(l, l - 1)].abs() + s == s {
                    a[idx(l, l - 1)] = 0.0;
                    break;
                }
                l -= 1;
            }
            let mut x = a[idx(nu, nu)];
            if l == nu {
                wr[nu] = x + t;
                wi[nu] = 0.0;
                nn -= 1;
                break;
            }
            let mut y = a[idx(nu - 1, nu - 1)];
            let mut w = a[idx(nu, nu - 1)] * a[idx(nu - 1, nu)];
            if l == nu - 1 {
                let p = 0.5 * (y - x);
                let q = p * p + w;
                let mut z = q.abs().sqrt();
                x += t;
                if q >= 0.0 {
                    z = p + sign(z, p);
                    wr[nu - 1] = x + z;
                    wr[nu] = x + z;
                    if z != 0.0 {
                        wr[nu] = x - w / z;
                    }
                    wi[nu - 1] = 0.0;
                    wi[nu] = 0.0;
                } else {
                    wr[nu - 1] = x + p;
                    wr[nu] = x + p;
                    wi[nu - 1] = -z;
                    wi[nu] = z;
                }
                nn -= 2;
                break;
            }
            if its >= max_its {
                return Err(Error::Convergence {
                    solver: "Francis QR",
                    iterations: its,
                });
            }
            if its == 10 || its == 20 || (its > 20 && its.is_multiple_of(10)) {
                t += x;
                for i in 0..=nu {
                    a[idx(i, i)] -= x;
                }
                let s = a[idx(nu, nu - 1)].abs() + a[idx(nu - 1, nu - 2)].abs();
                x = 0.75 * s;
                y = x;
                w = -0.4375 * s * s;
            }
            its += 1;
            let mut m = nu - 2;
            let (mut p, mut q, mut r);
            loop {
                let z = a[idx(m, m)];
                let rr = x - z;
                let ss = y - z;
                p = (rr * ss - w) / a[idx(m + 1, m)] + a[idx(m, m + 1)];
                q = a[idx(m + 1, m + 1)] - z - rr - ss;
                r = a[idx(m + 2, m + 1)];
                let s = p.abs() + q.abs() + r.abs();
                p /= s;
                q /= s;
                r /= s;
                if m == l {
                    break;
                }
                let u = a[idx(m, m - 1)].abs() * (q.abs() + r.abs());
                let v = p.abs() * (a[idx(m - 1, m - 1)].abs() + z.abs() + a[idx(m + 1, m + 1)].abs());
                if u + v == v {
                    break;
                }
                m -= 1;
            }
            for i in m + 2..=nu {
                a[idx(i, i - 2)] = 0.0;
                if i != m + 2 {
                    a[idx(i, i - 3)] = 0.0;
                }
            }
            let mut k = m;
            while k < nu {
                if k != m {
                    p = a[idx(k, k - 1)];
                    q = a[idx(k + 1, k - 1)];
                    r = if k != nu - 1 { a[idx(k + 2, k - 1)] } else { 0.0 };
                    x = p.abs() + q.abs() + r.abs();
                    if x != 0.0 {
                        p /= x;
                        q /= x;
                        r /= x;
                    }
                }
                let s = sign((p * p + q * q + r * r).sqrt(), p);
                if s != 0.0 {
                    if k == m {
                        if l != m {
                            a[idx(k, k - 1)] = -a[idx(k, k - 1)];
                        }
                    } else {
                        a[idx(k, k - 1)] = -s * x;
                    }
                    p += s;
                    x = p / s;
                    y = q / s;
                    let z = r / s;
                    q /= p;
                    r /= p;
                    for j in k..=nu {
                        let mut pp = a[idx(k, j)] + q * a[idx(k + 1, j)];
                        if k != nu - 1 {
                            pp += r * a[idx(k + 2, j)];
                            a[idx(k + 2, j)] -= pp * z;
                        }
                        a[idx(k + 1, j)] -= pp * y;
                        a[idx(k, j)] -= pp * x;
                    }
                    let mmin = if nu < k + 3 { nu } else { k + 3 };
                    for i in l..=mmin {
                        let mut pp = x * a[idx(i, k)] + y * a[idx(i, k + 1)];
                        if k != nu - 1 {
                            pp += z * a[idx(i, k + 2)];
                            a[idx(i, k + 2)] -= pp * r;
                        }
                        a[idx(i, k + 1)] -= pp * q;
                        a[idx(i, k)] -= pp;
                    }
                }
                k += 1;
            }
        }
    }
    Ok(wr.into_iter().zip(wi).map(|(re, im)| Complex64::new(re, im)).collect())
}

/// Eigenvalues of a real row-major n × n matrix.
pub fn real_eigenvalues(a: &[f64], n: usize) -> Result<Vec<Complex64>> {
    crate::error::check_dim(n * n, a.len(), "square matrix data")?;
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::ParameterDomain("matrix has non-finite entries".into()));
    }
    let mut h = a.to_vec();
    hessenberg(&mut h, n);
    hessenberg_qr(&mut h, n)
}

/// Unit-norm eigenvector of `a` for the eigenvalue `mu` by inverse iteration.
fn inverse_iteration(a: &CMatrix, mu: Complex64) -> Result<Vec<Complex64>> {
    let n = a.rows;
    let scale = a.frobenius().max(1.0);
    let mut shifted = a.clone();
    // A slightly perturbed shift keeps the factorization nonsingular.
    let delta = Complex64::new(1e-13, 7e-14) * scale;
    for i in 0..n {
        let d = shifted.at(i, i) - mu - delta;
        shifted.set(i, i, d);
    }
    let lu = match ComplexLu::new(&shifted) {
        Ok(lu) => lu,
        Err(_) => {
            let bumped = Complex64::new(1e-10, 3e-11) * scale;
            for i in 0..n {
                let d = shifted.at(i, i) - bumped;
                shifted.set(i, i, d);
            }
            ComplexLu::new(&shifted)?
        }
    };
    let mut v: Vec<Complex64> = (0..n)
        .map(|i| Complex64::new(1.0 + 0.1 * (i as f64).sin(), 0.05 * (i as f64 + 1.0).cos()))
        .collect();
    for _ in 0..3 {
        v = lu.solve(&v);
        let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::Convergence {
                solver: "inverse iteration",
                iterations: 3,
            });
        }
        v.iter_mut().for_each(|z| *z /= norm);
    }
    // fix the phase: largest component real and positive
    let (_, big) = v.iter().enumerate().fold(
        (0, ZERO),
        |best, (i, z)| if z.norm() > best.1.norm() { (i, *z) } else { best },
    );
    let phase = big.conj() / big.norm();
    v.iter_mut().for_each(|z| *z *= phase);
    Ok(v)
}

/// A = P diag(λ) P⁻¹ with unit-norm columns of P.
#[derive(Debug, Clone)]
pub struct Eigendecomposition {
    pub p: CMatrix,
    pub lambda: Vec<Complex64>,
    pub p_inv: CMatrix,
}

impl Eigendecomposition {
    pub fn reconstruct(&self) -> CMatrix {
        let n = self.lambda.len();
        let mut pd = self.p.clone();
        for i in 0..n {
            for j in 0..n {
                let v = pd.at(i, j) * self.lambda[j];
                pd.set(i, j, v);
            }
        }
        pd.matmul(&self.p_inv)
    }

    /// ‖P diag(λ) P⁻¹ − A‖_F / ‖A‖_F.
    pub fn residual(&self, a: &[f64]) -> f64 {
        let n = self.lambda.len();
        let r = self.reconstruct();
        let a_norm = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut diff = 0.0;
        for i in 0..n * n {
            diff += (r.data[i] - a[i]).norm_sqr();
        }
        diff.sqrt() / a_norm
    }
}

/// Eigendecomposition of a real diagonalizable matrix. Eigenvalues of a
/// conjugate pair are adjacent with the positive imaginary part first, and
/// their eigenvectors are exact conjugates.
pub fn eigendecompose(a: &[f64], n: usize) -> Result<Eigendecomposition> {
    let raw = real_eigenvalues(a, n)?;
    let mut lambda = Vec::with_capacity(n);
    let mut i = 0;
    while i < n {
        let z = raw[i];
        if z.im != 0.0 && i + 1 < n && raw[i + 1] == z.conj() {
            let up = if z.im > 0.0 { z } else { z.conj() };
            lambda.push(up);
            lambda.push(up.conj());
            i += 2;
        } else {
            lambda.push(Complex64::new(z.re, if z.im.abs() > 0.0 { z.im } else { 0.0 }));
            i += 1;
        }
    }
    let ac = CMatrix::from_real(n, n, a);
    let mut p = CMatrix::zeros(n, n);
    let mut j = 0;
    while j < n {
        let mu = lambda[j];
        let mut v = inverse_iteration(&ac, mu)?;
        if mu.im == 0.0 {
            v.iter_mut().for_each(|z| z.im = 0.0);
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            v.iter_mut().for_each(|z| *z /= norm);
        }
        for r in 0..n {
            p.set(r, j, v[r]);
        }
        if mu.im != 0.0 && j + 1 < n && lambda[j + 1] == mu.conj() {
            for r in 0..n {
                p.set(r, j + 1, v[r].conj());
            }
            j += 2;
        } else {
            j += 1;
        }
    }
    let p_inv = ComplexLu::new(&p)
        .map_err(|_| Error::ParameterDomain("eigenvector matrix is singular (defective matrix)".into()))?
        .inverse();
    Ok(Eigendecomposition { p, lambda, p_inv })
}

/// A strided view of a real matrix stored in a flat buffer: element (i, j)
/// lives at `off + i * rs + j * cs`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct View {
    pub off: usize,
    pub rows: usize,
    pub cols: usize,
    pub rs: usize,
    pub cs: usize,
}

impl View {
    /// Contiguous row-major `rows × cols` matrix at offset 0.
    pub fn dense(rows: usize, cols: usize) -> Self {
        Self {
            off: 0,
            rows,
            cols,
            rs: cols,
            cs: 1,
        }
    }

    /// Row-major rows of width `cols`, `rs` apart, starting at `off`.
    pub fn rows_at(off: usize, rows: usize, cols: usize, rs: usize) -> Self {
        Self {
            off,
            rows,
            cols,
            rs,
            cs: 1,
        }
    }

    pub fn t(self) -> Self {
        Self {
            off: self.off,
            rows: self.cols,
            cols: self.rows,
            rs: self.cs,
            cs: self.rs,
        }
    }

    fn end(&self) -> usize {
        if self.rows == 0 || self.cols == 0 {
            self.off
        } else {
            self.off + (self.rows - 1) * self.rs + (self.cols - 1) * self.cs + 1
        }
    }
}

const SKINNY: usize = 2;

/// Loop-order GEMM for thin shapes. Runs Cᵀ = Bᵀ Aᵀ when that makes the
/// innermost loop contiguous and longer.
unsafe fn skinny_gemm(alpha: f64, a: *const f64, av: View, b: *const f64, bv: View, beta: f64, c: *mut f64, cv: View) {
    let direct = cv.cs == 1 && bv.cs == 1;
    let transposed = cv.rs == 1 && av.rs == 1;
    if transposed && (!direct || cv.rows > cv.cols) {
        return skinny_rows(alpha, b, bv.t(), a, av.t(), beta, c, cv.t());
    }
    skinny_rows(alpha, a, av, b, bv, beta, c, cv)
}

unsafe fn skinny_rows(alpha: f64, a: *const f64, av: View, b: *const f64, bv: View, beta: f64, c: *mut f64, cv: View) {
    let (m, k, n) = (cv.rows, av.cols, cv.cols);
    for i in 0..m {
        let ci = c.add(cv.off + i * cv.rs);
        if cv.cs == 1 && bv.cs == 1 && n > 1 {
            let row = std::slice::from_raw_parts_mut(ci, n);
            if beta == 0.0 {
                row.fill(0.0);
            } else if beta != 1.0 {
                row.iter_mut().for_each(|v| *v *= beta);
            }
            for p in 0..k {
                let w = alpha * *a.add(av.off + i * av.rs + p * av.cs);
                let brow = std::slice::from_raw_parts(b.add(bv.off + p * bv.rs), n);
                row.iter_mut().zip(brow).for_each(|(r, &x)| *r += w * x);
            }
        } else {
            for j in 0..n {
                let mut acc = 0.0;
                for p in 0..k {
                    acc += *a.add(av.off + i * av.rs + p * av.cs) * *b.add(bv.off + p * bv.rs + j * bv.cs);
                }
                let dst = ci.add(j * cv.cs);
                *dst = if beta == 0.0 {
                    alpha * acc
                } else {
                    alpha * acc + beta * *dst
                };
            }
        }
    }
}

unsafe fn dgemm_raw(alpha: f64, a: *const f64, av: View, b: *const f64, bv: View, beta: f64, c: *mut f64, cv: View) {
    if av.cols <= SKINNY || cv.rows <= SKINNY || cv.cols <= SKINNY {
        // packing dominates for thin operands
        skinny_gemm(alpha, a, av, b, bv, beta, c, cv);
        return;
    }
    matrixmultiply::dgemm(
        av.rows,
        av.cols,
        bv.cols,
        alpha,
        a.add(av.off),
        av.rs as isize,
        av.cs as isize,
        b.add(bv.off),
        bv.rs as isize,
        bv.cs as isize,
        beta,
        c.add(cv.off),
        cv.rs as isize,
        cv.cs as isize,
    );
}

fn check_gemm_shapes(av: View, bv: View, cv: View) {
    assert!(
        av.cols == bv.rows && av.rows == cv.rows && bv.cols == cv.cols,
        "gemm shape mismatch: {av:?} x {bv:?} -> {cv:?}"
    );
}

/// C ← α A B + β C on strided views. With β = 0, C need not be initialized.
pub fn gemm_v(alpha: f64, a: &[f64], av: View, b: &[f64], bv: View, beta: f64, c: &mut [f64], cv: View) {
    check_gemm_shapes(av, bv, cv);
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(
        av.end() <= a.len() && bv.end() <= b.len() && cv.end() <= c.len(),
        "gemm view out of bounds"
    );
    // SAFETY: bounds checked above; `c` is borrowed mutably so it aliases neither input.
    unsafe { dgemm_raw(alpha, a.as_ptr(), av, b.as_ptr(), bv, beta, c.as_mut_ptr(), cv) }
}

/// [`gemm_v`] where A and C are views into the same buffer. The two views
/// must address disjoint elements.
pub fn gemm_v_within(alpha: f64, buf: &mut [f64], av: View, b: &[f64], bv: View, beta: f64, cv: View) {
    check_gemm_shapes(av, bv, cv);
    if cv.rows == 0 || cv.cols == 0 {
        return;
    }
    assert!(
        av.end() <= buf.len() && bv.end() <= b.len() && cv.end() <= buf.len(),
        "gemm view out of bounds"
    );
    let p = buf.as_mut_ptr();
    // SAFETY: bounds checked above; disjointness of `av` and `cv` is the caller's contract.
    unsafe { dgemm_raw(alpha, p as *const f64, av, b.as_ptr(), bv, beta, p, cv) }
}

/// Row-major real matrix product C = A (m × k) · B (k × n).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    gemm_v(
        1.0,
        a,
        View::dense(m, k),
        b,
        View::dense(k, n),
        0.0,
        &mut c,
        View::dense(m, n),
    );
    c
}

/// C ← α op(A) op(B) + β C for contiguous row-major operands, where op
/// transposes when the flag is set. `op(A)` is m × k and `op(B)` is k × n.
#[allow(clippy::too_many_arguments)]
pub fn gemm(
    alpha: f64,
    a: &[f64],
    b: &[f64],
    beta: f64,
    c: &mut [f64],
    m: usize,
    k: usize,
    n: usize,
    trans_a: bool,
    trans_b: bool,
) {
    let av = if trans_a {
        View::dense(k, m).t()
    } else {
        View::dense(m, k)
    };
    let bv = if trans_b {
        View::dense(n, k).t()
    } else {
        View::dense(k, n)
    };
    gemm_v(alpha, a, av, b, bv, beta, c, View::dense(m, n));
}
