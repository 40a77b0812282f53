use num_complex::Complex64;

use super::DenseLinearSSM;
use crate::error::{Error, Result};
use crate::linalg::{eigendecompose, CMatrix, ComplexLu, Eigendecomposition};
use crate::rng::RngStream;

/// Truncation bound, in standard deviations, for B, C and D.
pub const TRUNCATION_SIGMAS: f64 = 2.0;

const MAX_ATTEMPTS: u64 = 16;
const RECONSTRUCTION_TOL: f64 = 1e-8;
const IMAG_TOL: f64 = 1e-10;

/// Eigendecomposition with a reconstruction check.
pub fn diagonalize(a: &[f64], n: usize) -> Result<Eigendecomposition> {
    let eig = eigendecompose(a, n)?;
    let r = eig.residual(a);
    if !(r <= RECONSTRUCTION_TOL) {
        return Err(Error::ParameterDomain(format!(
            "eigendecomposition residual {r:.3e} exceeds {RECONSTRUCTION_TOL:.0e}"
        )));
    }
    Ok(eig)
}

/// B (n × d_in), C (d_out × n), D (d_out × d_in) from truncated normals with
/// fan-in scaling.
pub(crate) fn readout_weights(
    n: usize,
    d_in: usize,
    d_out: usize,
    stream: &RngStream,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut rng = stream.rng();
    let sx = 1.0 / (d_in as f64).sqrt();
    let sh = 1.0 / (n as f64).sqrt();
    let b = (0..n * d_in)
        .map(|_| rng.truncated_normal(sx, TRUNCATION_SIGMAS))
        .collect();
    let c = (0..d_out * n)
        .map(|_| rng.truncated_normal(sh, TRUNCATION_SIGMAS))
        .collect();
    let d = (0..d_out * d_in)
        .map(|_| rng.truncated_normal(sx, TRUNCATION_SIGMAS))
        .collect();
    (b, c, d)
}

pub(crate) fn map_eigenvalue(z: Complex64, nu: f64, theta0: f64) -> Complex64 {
    let mag = nu + (1.0 - nu) * z.norm().tanh();
    if z.im == 0.0 {
        // real eigenvalues keep their sign so the matrix stays real for any θ0
        return Complex64::new(mag.copysign(z.re), 0.0);
    }
    Complex64::from_polar(mag, z.arg() * theta0 / std::f64::consts::PI)
}

fn check_teacher_args(n: usize, nu: f64, theta0: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::ParameterDomain("teacher needs n >= 1".into()));
    }
    if !(0.0..1.0).contains(&nu) {
        return Err(Error::ParameterDomain(format!("teacher needs 0 <= nu < 1, got {nu}")));
    }
    if !(theta0 > 0.0 && theta0 <= std::f64::consts::PI) {
        return Err(Error::ParameterDomain(format!(
            "teacher needs 0 < theta0 <= pi, got {theta0}"
        )));
    }
    Ok(())
}

/// Single-input single-output teacher.
pub fn build_teacher(n: usize, nu: f64, theta0: f64, stream: &RngStream) -> Result<DenseLinearSSM> {
    build_teacher_with_dims(n, 1, 1, nu, theta0, stream)
}

/// Random A with entries of std 1/√n, eigenvalues remapped to magnitude
/// ν + (1 − ν) tanh|λ| and angle scaled by θ0/π, reassembled as a real matrix.
/// Draws that fail to diagonalize are retried on the next substream.
pub fn build_teacher_with_dims(
    n: usize,
    d_in: usize,
    d_out: usize,
    nu: f64,
    theta0: f64,
    stream: &RngStream,
) -> Result<DenseLinearSSM> {
    check_teacher_args(n, nu, theta0)?;
    let std = 1.0 / (n as f64).sqrt();
    for attempt in 0..MAX_ATTEMPTS {
        let mut rng = stream.child(0).child(attempt).rng();
        let a0: Vec<f64> = (0..n * n).map(|_| std * rng.normal()).collect();
        let Ok(eig) = diagonalize(&a0, n) else { continue };
        let mapped = Eigendecomposition {
            lambda: eig.lambda.iter().map(|&z| map_eigenvalue(z, nu, theta0)).collect(),
            ..eig
        };
        let r = mapped.reconstruct();
        let scale = r.frobenius().max(f64::MIN_POSITIVE);
        if r.max_imag() > IMAG_TOL * scale {
            continue;
        }
        let a = r.real_part();
        let (b, c, d) = readout_weights(n, d_in, d_out, &stream.child(1));
        let ssm = DenseLinearSSM::new(n, d_in, d_out, a, b, c, d)?;
        if ssm.spectral_radius()? >= 1.0 {
            continue;
        }
        return Ok(ssm);
    }
    Err(Error::Convergence {
        solver: "teacher construction",
        iterations: MAX_ATTEMPTS as usize,
    })
}

/// Teacher built from sampled eigenvalues and a well-conditioned real basis
/// Q = I + 0.3 G/√n, bypassing the eigensolver. Conjugate pairs get
/// magnitude ν + (1 − ν) tanh(u), u ~ U[0, 1], and angle in (0, θ0]; an odd
/// n adds one positive real eigenvalue. Returns the exact decomposition.
pub fn build_teacher_eigenbasis(
    n: usize,
    nu: f64,
    theta0: f64,
    stream: &RngStream,
) -> Result<(DenseLinearSSM, Eigendecomposition)> {
    check_teacher_args(n, nu, theta0)?;
    let mut rng = stream.child(0).rng();
    let mut lambda = Vec::with_capacity(n);
    for _ in 0..n / 2 {
        let mag = nu + (1.0 - nu) * rng.uniform().tanh();
        let th = theta0 * (1.0 - rng.uniform());
        let z = Complex64::from_polar(mag, th);
        lambda.push(z);
        lambda.push(z.conj());
    }
    if n % 2 == 1 {
        lambda.push(Complex64::new(nu + (1.0 - nu) * rng.uniform().tanh(), 0.0));
    }
    let mut basis = stream.child(1).rng();
    let g = 0.3 / (n as f64).sqrt();
    let mut q = CMatrix::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = q.at(i, j) + g * basis.normal();
            q.set(i, j, v);
        }
    }
    // eigenvectors of [[a, −b], [b, a]] for a ± ib are (1, ∓i)/√2
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = CMatrix::zeros(n, n);
    for k in 0..n / 2 {
        let (i, j) = (2 * k, 2 * k + 1);
        v.set(i, i, Complex64::new(h, 0.0));
        v.set(j, i, Complex64::new(0.0, -h));
        v.set(i, j, Complex64::new(h, 0.0));
        v.set(j, j, Complex64::new(0.0, h));
    }
    if n % 2 == 1 {
        v.set(n - 1, n - 1, Complex64::new(1.0, 0.0));
    }
    let mut p = q.matmul(&v);
    for j in 0..n {
        let norm = (0..n).map(|i| p.at(i, j).norm_sqr()).sum::<f64>().sqrt();
        for i in 0..n {
            let z = p.at(i, j) / norm;
            p.set(i, j, z);
        }
    }
    let p_inv = ComplexLu::new(&p)?.inverse();
    let eig = Eigendecomposition { p, lambda, p_inv };
    let a = eig.reconstruct().real_part();
    let (b, c, d) = readout_weights(n, 1, 1, &stream.child(2));
    Ok((DenseLinearSSM::new(n, 1, 1, a, b, c, d)?, eig))
}
