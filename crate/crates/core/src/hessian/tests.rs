use num_complex::Complex64;

use super::*;
use crate::analytic::{lambda_hessian, lambda_hessian_trace, NormalizationSpec, ParametrizationSpec};
use crate::models::DiagonalComplexCell;
use crate::rng::RngStream;
use crate::stochastic::{sample_wss_sequence, AutocorrelationModel};

fn diag_student(lambda: &[Complex64], b: &[Complex64], c: &[Complex64]) -> RecurrentCell {
    RecurrentCell::Diagonal(
        DiagonalComplexCell::from_lambda(
            lambda,
            b,
            c,
            vec![0.3],
            1,
            1,
            ParametrizationSpec::Direct,
            NormalizationSpec::none(),
        )
        .unwrap(),
    )
}

fn burn_in(max_mag: f64) -> usize {
    (1e-8f64.ln() / max_mag.ln()).ceil() as usize
}

#[test]
fn jacobi_identity_and_diagonal() {
    let (vals, _) = symmetric_eigen(&[1.0, 0.0, 0.0, 1.0], 2, JACOBI_TOL).unwrap();
    assert_eq!(vals, vec![1.0, 1.0]);
    let d = [3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 2.0];
    let (vals, vecs) = symmetric_eigen(&d, 3, JACOBI_TOL).unwrap();
    assert_eq!(vals, vec![3.0, 2.0, 1.0]);
    // permutation eigenvectors: column 1 is e_3
    assert_eq!(vecs[2 * 3 + 1].abs(), 1.0);
}

#[test]
fn jacobi_reconstructs_random_symmetric() {
    let p = 20;
    let mut rng = RngStream::new(4).rng();
    let mut h = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let v = rng.normal();
            h[i * p + j] = v;
            h[j * p + i] = v;
        }
    }
    let (vals, v) = symmetric_eigen(&h, p, JACOBI_TOL).unwrap();
    let norm = h.iter().map(|x| x * x).sum::<f64>().sqrt();
    let mut err = 0.0;
    for i in 0..p {
        for j in 0..p {
            let r: f64 = (0..p).map(|k| v[i * p + k] * vals[k] * v[j * p + k]).sum();
            err += (r - h[i * p + j]).powi(2);
        }
    }
    assert!(err.sqrt() <= 1e-8 * norm);
    assert!(vals.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn jacobi_rejects_asymmetric_input() {
    assert!(matches!(
        symmetric_eigen(&[1.0, 2.0, 0.0, 1.0], 2, JACOBI_TOL),
        Err(Error::Contract(_))
    ));
}

#[test]
fn ipr_and_alignment_extremes() {
    assert_eq!(inverse_participation_ratio(&[0.0, 1.0, 0.0]), 1.0);
    let u = vec![0.5; 4];
    assert!((inverse_participation_ratio(&u) - 4.0).abs() < 1e-12);
    assert_eq!(axis_alignment(&[2.0, 0.0, 0.0, -1.0], 2), 1.0);
}

#[test]
fn effective_lr_examples() {
    let probe = |v: f64| AdamProbe {
        second_moment: vec![v],
        step_count: 1_000_000,
        alpha: 1e-3,
        eps: 1e-8,
        beta2: 0.999,
    };
    assert!((adam_effective_lr(&probe(1.0)).unwrap()[0] - 1e-3).abs() < 1e-10);
    assert!((adam_effective_lr(&probe(1e4)).unwrap()[0] - 1e-5).abs() < 1e-12);
    let mut p = probe(1.0);
    p.step_count = 0;
    assert!(matches!(adam_effective_lr(&p), Err(Error::ProbeUninitialized)));
}

#[test]
fn scalar_gauss_newton_matches_closed_form() {
    let one = Complex64::new(1.0, 0.0);
    let cell = diag_student(&[Complex64::new(0.9, 0.0)], &[one], &[one]);
    let burn = burn_in(0.9);
    let x = sample_wss_sequence(&AutocorrelationModel::Iid, burn + 1, 10_000, 1, &RngStream::new(12)).unwrap();
    let report = gauss_newton_hessian(&cell, &x, burn).unwrap();
    let entry = report.matrix[0];
    assert!((entry / 263.887 - 1.0).abs() < 0.03, "{entry}");
    assert_eq!(report.param_labels[0], "lambda.re[0]");
}

#[test]
fn zero_readout_gives_zero_recurrent_block() {
    let z = Complex64::new(0.0, 0.0);
    let cell = diag_student(
        &[Complex64::new(0.5, 0.2), Complex64::new(0.7, -0.1)],
        &[Complex64::new(1.0, 0.5); 2],
        &[z, z],
    );
    let x = sample_wss_sequence(&AutocorrelationModel::Iid, 30, 8, 1, &RngStream::new(1)).unwrap();
    let report = gauss_newton_hessian(&cell, &x, 10).unwrap();
    let idx = report.indices_of_groups(&["lambda.re", "lambda.im"]);
    assert_eq!(idx.len(), 4);
    assert!(report.submatrix(&idx).iter().all(|&v| v == 0.0));
}

#[test]
fn gauss_newton_is_psd_and_trace_matches() {
    let lambda = [Complex64::from_polar(0.8, 0.6), Complex64::from_polar(0.6, -1.9)];
    let b = [Complex64::new(0.7, -0.4), Complex64::new(-0.3, 0.9)];
    let c = [Complex64::new(1.1, 0.2), Complex64::new(0.5, -0.6)];
    let cell = diag_student(&lambda, &b, &c);
    let burn = burn_in(0.8);
    let x = sample_wss_sequence(&AutocorrelationModel::Iid, burn + 1, 20_000, 1, &RngStream::new(5)).unwrap();
    let report = gauss_newton_hessian(&cell, &x, burn).unwrap();
    let top = report.eigenvalues[0];
    assert!(*report.eigenvalues.last().unwrap() >= -1e-8 * top);
    let idx = report.indices_of_groups(&["lambda.re", "lambda.im"]);
    let sub = report.submatrix(&idx);
    let trace: f64 = (0..4).map(|k| sub[k * 4 + k]).sum();
    let exact = lambda_hessian_trace(&b, &c, &lambda, 0.0).unwrap();
    assert!((trace / exact - 1.0).abs() < 0.03, "{trace} vs {exact}");
    let analytic = lambda_hessian(
        &b,
        &c,
        &lambda,
        &ParametrizationSpec::Direct,
        &AutocorrelationModel::Iid,
    )
    .unwrap();
    let num: f64 = sub
        .iter()
        .zip(&analytic)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    let den: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(num / den < 0.03, "{}", num / den);
    for k in 0..report.dim {
        let v = report.eigenvector(k);
        let mu = report.eigenvalues[k];
        let res: f64 = (0..report.dim)
            .map(|i| {
                let hv: f64 = (0..report.dim).map(|j| report.matrix[i * report.dim + j] * v[j]).sum();
                (hv - mu * v[i]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        assert!(res <= 1e-8 * top);
    }
}

#[test]
fn burn_in_must_leave_samples() {
    let one = Complex64::new(1.0, 0.0);
    let cell = diag_student(&[Complex64::new(0.5, 0.0)], &[one], &[one]);
    let x = sample_wss_sequence(&AutocorrelationModel::Iid, 5, 2, 1, &RngStream::new(1)).unwrap();
    assert!(gauss_newton_hessian(&cell, &x, 5).is_err());
}
