use num_complex::Complex64;

use super::*;
use crate::analytic::{hidden_variance, GammaKind};
use crate::stochastic::{sample_wss_sequence, AutocorrelationModel};

fn gaussian_batch(count: usize, length: usize, dim: usize, seed: u64) -> SequenceBatch {
    let model = AutocorrelationModel::Iid;
    sample_wss_sequence(&model, length, count, dim, &RngStream::new(seed)).unwrap()
}

fn random_errors(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = RngStream::new(seed).rng();
    (0..len).map(|_| rng.normal()).collect()
}

fn small_cells(seed: u64) -> Vec<RecurrentCell> {
    let s = RngStream::new(seed);
    let mut cells = vec![
        RecurrentCellSpec::Dense {
            hidden: 4,
            nu_init: 0.5,
            theta0: 2.0,
        }
        .build(2, 2, &s.child(0))
        .unwrap(),
        RecurrentCellSpec::BlockDiagonal {
            hidden: 4,
            nu_init: 0.3,
            theta0: 2.0,
        }
        .build(2, 2, &s.child(1))
        .unwrap(),
        RecurrentCellSpec::complex_diagonal(3, 0.3, 2.0)
            .build(2, 2, &s.child(2))
            .unwrap(),
        RecurrentCellSpec::lru(3, 0.3, 2.0).build(2, 2, &s.child(3)).unwrap(),
        RecurrentCellSpec::Lstm { hidden: 3, nu: 0.5 }
            .build(2, 2, &s.child(4))
            .unwrap(),
    ];
    // keep |λ| ≤ 0.9 for the recurrent linear cells
    if let RecurrentCell::BlockDiagonal(b) = &mut cells[1] {
        b.blocks.iter_mut().for_each(|v| *v *= 0.9);
    }
    for k in [2, 3] {
        if let RecurrentCell::Diagonal(d) = &mut cells[k] {
            let lambda: Vec<Complex64> = d.lambdas().unwrap().iter().map(|z| z * 0.9).collect();
            for (i, l) in lambda.iter().enumerate() {
                let w = d.param.omega(*l).unwrap();
                d.omega_nu[i] = w[0];
                d.omega_theta[i] = w[1];
            }
        }
    }
    cells
}

#[test]
fn backward_matches_finite_differences_for_every_cell() {
    for seed in 0..3 {
        let x = gaussian_batch(2, 12, 2, 100 + seed);
        let e = random_errors(2 * 12 * 2, 200 + seed);
        for cell in small_cells(seed) {
            for (label, rel) in gradient_check(&cell, &x, &e, 1e-5).unwrap() {
                assert!(rel <= 1e-6, "{label}: rel {rel:.3e} in {cell:?}");
            }
        }
    }
}

#[test]
fn diagonal_gradients_for_every_parametrization() {
    use ParametrizationSpec::*;
    let x = gaussian_batch(2, 10, 1, 5);
    let e = random_errors(20, 6);
    for param in [
        Direct,
        Tanh,
        DoubleExp,
        Optimal1D,
        PolarDirect,
        PolarExpAngle,
        TanhExpAngle,
    ] {
        for norm in [
            NormalizationSpec::none(),
            NormalizationSpec::sqrt_one_minus_nu_sq(true),
            NormalizationSpec::sqrt_one_minus_nu_sq(false),
        ] {
            let spec = RecurrentCellSpec::ComplexDiagonal {
                hidden: 3,
                nu_init: 0.4,
                nu_max: 1.0,
                theta0: 1.5,
                param,
                norm,
            };
            let mut cell = spec.build(1, 1, &RngStream::new(9)).unwrap();
            if let RecurrentCell::Diagonal(d) = &mut cell {
                let l: Vec<Complex64> = d.lambdas().unwrap().iter().map(|z| z * 0.9).collect();
                for (i, z) in l.iter().enumerate() {
                    let w = param.omega(*z).unwrap();
                    d.omega_nu[i] = w[0];
                    d.omega_theta[i] = w[1];
                }
            }
            let frozen = matches!(&cell, RecurrentCell::Diagonal(d) if d.norm.stop_gradient);
            for (label, rel) in gradient_check(&cell, &x, &e, 1e-5).unwrap() {
                // stop-gradient drops dγ/dω on purpose
                if frozen && param.coordinate_names().contains(&label.as_str()) {
                    continue;
                }
                assert!(rel <= 1e-6, "{param:?} {label}: {rel:.3e}");
            }
        }
    }
}

#[test]
fn zero_errors_give_zero_gradients() {
    let x = gaussian_batch(2, 8, 2, 1);
    for cell in small_cells(4) {
        let fwd = cell.forward(&x).unwrap();
        let back = cell.backward(&x, &fwd, &vec![0.0; 2 * 8 * 2]).unwrap();
        assert_eq!(back.grads.norm(), 0.0);
        assert!(back.input_grad.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn misaligned_errors_are_rejected() {
    let x = gaussian_batch(1, 5, 2, 1);
    let cell = &small_cells(0)[0];
    let fwd = cell.forward(&x).unwrap();
    assert!(cell.backward(&x, &fwd, &[0.0; 3]).is_err());
    let wrong = gaussian_batch(1, 5, 3, 1);
    assert!(cell.forward(&wrong).is_err());
}

#[test]
fn memoryless_diagonal_passes_real_part() {
    let cell = DiagonalComplexCell::from_lambda(
        &[Complex64::new(0.0, 0.0)],
        &[Complex64::new(1.0, 0.0)],
        &[Complex64::new(1.0, 0.0)],
        vec![0.0],
        1,
        1,
        ParametrizationSpec::Direct,
        NormalizationSpec::none(),
    )
    .unwrap();
    let mut data = vec![0.0; 6];
    data[0] = 1.0;
    let x = SequenceBatch::from_data(1, 6, 1, data).unwrap();
    let y = cell.forward(&x).unwrap().outputs;
    assert_eq!(y, vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
}

#[test]
fn dense_impulse_response_matches_matrix_powers() {
    let ssm = build_teacher(4, 0.5, 2.0, &RngStream::new(3)).unwrap();
    let t_len = 21;
    let mut data = vec![0.0; t_len];
    data[0] = 1.0;
    let y = ssm
        .forward(&SequenceBatch::from_data(1, t_len, 1, data).unwrap())
        .unwrap()
        .outputs;
    let n = 4;
    let mut v = ssm.b.clone();
    assert!((y[0] - (ssm.d[0] + (0..n).map(|i| ssm.c[i] * v[i]).sum::<f64>())).abs() < 1e-12);
    for t in 1..t_len {
        v = (0..n).map(|i| (0..n).map(|j| ssm.a[i * n + j] * v[j]).sum()).collect();
        let expect: f64 = (0..n).map(|i| ssm.c[i] * v[i]).sum();
        assert!((y[t] - expect).abs() <= 1e-12 * (1.0 + expect.abs()), "t={t}");
    }
}

#[test]
fn dense_and_diagonalized_forward_agree() {
    let ssm = build_teacher_with_dims(6, 2, 3, 0.8, 2.5, &RngStream::new(11)).unwrap();
    let diag = DiagonalComplexCell::from_dense(&ssm).unwrap();
    let x = gaussian_batch(3, 40, 2, 12);
    let a = ssm.forward(&x).unwrap().outputs;
    let b = diag.forward(&x).unwrap().outputs;
    let num: f64 = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    let den: f64 = a.iter().map(|p| p * p).sum::<f64>().sqrt();
    assert!(num / den <= 1e-8, "{}", num / den);
}

#[test]
fn linear_cells_superpose() {
    let x1 = gaussian_batch(2, 15, 2, 21);
    let x2 = gaussian_batch(2, 15, 2, 22);
    let (a, b) = (0.7, -1.3);
    let mix = SequenceBatch::from_data(
        2,
        15,
        2,
        x1.data.iter().zip(&x2.data).map(|(p, q)| a * p + b * q).collect(),
    )
    .unwrap();
    for cell in small_cells(7).into_iter().take(4) {
        let y1 = cell.forward(&x1).unwrap().outputs;
        let y2 = cell.forward(&x2).unwrap().outputs;
        let ym = cell.forward(&mix).unwrap().outputs;
        for i in 0..ym.len() {
            let expect = a * y1[i] + b * y2[i];
            assert!((ym[i] - expect).abs() <= 1e-12 * (1.0 + expect.abs()));
        }
    }
}

#[test]
fn monte_carlo_hidden_variance_matches_closed_form() {
    let rho = 0.5;
    let model = AutocorrelationModel::exp_decay(rho).unwrap();
    let lambda = Complex64::from_polar(0.9, 0.4);
    let cell = DiagonalComplexCell::from_lambda(
        &[lambda],
        &[Complex64::new(1.0, 0.0)],
        &[Complex64::new(1.0, 0.0)],
        vec![0.0],
        1,
        1,
        ParametrizationSpec::Direct,
        NormalizationSpec::none(),
    )
    .unwrap();
    let burn = (1e-8f64.ln() / 0.9f64.ln()).ceil() as usize;
    let x = sample_wss_sequence(&model, burn + 1, 20_000, 1, &RngStream::new(31)).unwrap();
    let fwd = cell.forward(&x).unwrap();
    let States::Complex { re, im, .. } = &fwd.states else {
        panic!()
    };
    let mean: f64 = (0..x.count)
        .map(|q| {
            let i = q * x.length + burn;
            re[i] * re[i] + im[i] * im[i]
        })
        .sum::<f64>()
        / x.count as f64;
    let exact = hidden_variance(lambda, &model).unwrap();
    assert!((mean / exact - 1.0).abs() < 0.05, "{mean} vs {exact}");
}

#[test]
fn teacher_magnitudes_lie_in_mapped_band() {
    for seed in 0..5 {
        let ssm = build_teacher(10, 0.99, std::f64::consts::PI, &RngStream::new(seed)).unwrap();
        let eig = diagonalize(&ssm.a, 10).unwrap();
        for z in &eig.lambda {
            let m = z.norm();
            assert!((0.99 - 1e-9..=1.0).contains(&m), "{m}");
        }
        assert!(eig.residual(&ssm.a) <= 1e-8);
        assert!(ssm.spectral_radius().unwrap() < 1.0);
    }
}

#[test]
fn teacher_band_for_bounded_raw_spectrum() {
    // raw eigenvalues inside the unit disk map into [ν, ν + (1 − ν) tanh 1]
    let hi = 0.99 + 0.01 * 1f64.tanh();
    assert!((hi - 0.9976159).abs() < 1e-7);
    let z = Complex64::from_polar(0.999, 1.0);
    let m = super::teacher::map_eigenvalue(z, 0.99, 2.0).norm();
    assert!(m >= 0.99 && m <= hi);
}

#[test]
fn teacher_angles_scale_with_theta0() {
    let theta0 = 0.3;
    let ssm = build_teacher(8, 0.5, theta0, &RngStream::new(2)).unwrap();
    let eig = diagonalize(&ssm.a, 8).unwrap();
    for z in &eig.lambda {
        if z.im != 0.0 {
            assert!(z.arg().abs() <= theta0 + 1e-9);
        }
    }
}

#[test]
fn teacher_rejects_bad_arguments() {
    let s = RngStream::new(0);
    assert!(build_teacher(0, 0.5, 1.0, &s).is_err());
    assert!(build_teacher(3, 1.0, 1.0, &s).is_err());
    assert!(build_teacher(3, 0.5, 0.0, &s).is_err());
    assert!(build_teacher(3, 0.5, 4.0, &s).is_err());
}

#[test]
fn teacher_readout_is_truncated() {
    let ssm = build_teacher(16, 0.5, 1.0, &RngStream::new(4)).unwrap();
    let bound = TRUNCATION_SIGMAS / 4.0;
    assert!(ssm.c.iter().all(|v| v.abs() <= bound));
    assert!(ssm.b.iter().all(|v| v.abs() <= TRUNCATION_SIGMAS));
}

#[test]
fn eigenbasis_teacher_is_exact() {
    let (ssm, eig) = build_teacher_eigenbasis(5, 0.9, 2.0, &RngStream::new(8)).unwrap();
    assert!(eig.residual(&ssm.a) <= 1e-12);
    let rebuilt = eig.reconstruct();
    assert!(rebuilt.max_imag() <= 1e-12);
    for j in 0..5 {
        let norm: f64 = eig.p.column(j).iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
        assert!(eig.lambda[j].norm() >= 0.9 && eig.lambda[j].norm() < 1.0);
    }
}

#[test]
fn chrono_bias_law() {
    let cell = chrono_init(50, 1, 1, 0.99, &RngStream::new(1)).unwrap();
    let h = cell.hidden;
    for k in 0..h {
        let bf = cell.bias[h + k];
        assert_eq!(cell.bias[k], -bf);
        let f = 1.0 / (1.0 + (-bf).exp());
        assert!((0.99 - 1e-12..=0.995 + 1e-12).contains(&f), "{f}");
        let i = 1.0 / (1.0 + bf.exp());
        assert!((f + i - 1.0).abs() < 1e-15);
    }
    let edge = chrono_init(64, 1, 1, 0.0, &RngStream::new(2)).unwrap();
    assert!(edge.bias.iter().all(|b| b.is_finite()));
    assert!(chrono_init(4, 1, 1, 1.0, &RngStream::new(2)).is_err());
}

#[test]
fn chrono_cell_state_decays_at_forget_rate() {
    let mut cell = chrono_init(3, 1, 1, 0.99, &RngStream::new(5)).unwrap();
    // zero pre-activations apart from the biases; inject a cell state through g
    cell.w_recurrent.iter_mut().for_each(|w| *w = 0.0);
    let h = cell.hidden;
    cell.w_input.iter_mut().for_each(|w| *w = 0.0);
    cell.w_input[2 * h] = 1.0;
    let mut data = vec![0.0; 30];
    data[0] = 1.0;
    let fwd = cell
        .forward(&SequenceBatch::from_data(1, 30, 1, data).unwrap())
        .unwrap();
    let States::Lstm { c, .. } = &fwd.states else { panic!() };
    let f = 1.0 / (1.0 + (-cell.bias[h]).exp());
    for t in 1..30 {
        let ratio = c[t * h] / c[(t - 1) * h];
        assert!((ratio - f).abs() < 1e-12);
        assert!((0.99..=0.995).contains(&ratio));
    }
}

#[test]
fn sensitivity_ratio_grows_with_memory() {
    let x = gaussian_batch(8, 400, 1, 3);
    let short = build_teacher(6, 0.5, std::f64::consts::PI, &RngStream::new(17)).unwrap();
    let long = build_teacher(6, 0.99, std::f64::consts::PI, &RngStream::new(17)).unwrap();
    let a = sensitivity_decomposition(&short, &x, 400).unwrap();
    let b = sensitivity_decomposition(&long, &x, 400).unwrap();
    assert!(b.lambda_over_p() > a.lambda_over_p(), "{a:?} {b:?}");
}

#[test]
fn sensitivity_of_zero_input_vanishes() {
    let ssm = build_teacher(4, 0.5, 1.0, &RngStream::new(1)).unwrap();
    let z = sensitivity_decomposition(&ssm, &SequenceBatch::zeros(2, 10, 1), 10).unwrap();
    assert_eq!((z.p_term, z.lambda_term, z.p_inv_term), (0.0, 0.0, 0.0));
    assert!(sensitivity_decomposition(&ssm, &SequenceBatch::zeros(2, 10, 1), 11).is_err());
}

#[test]
fn scalar_sensitivity_matches_direct_sum() {
    let lam = 0.8;
    let ssm = DenseLinearSSM::new(1, 1, 1, vec![lam], vec![1.0], vec![1.0], vec![0.0]).unwrap();
    let x = gaussian_batch(1, 25, 1, 9);
    let got = sensitivity_decomposition(&ssm, &x, 25).unwrap();
    let mut acc = 0.0;
    for t in 0..25 {
        let s: f64 = (0..t)
            .map(|tp| (t - tp) as f64 * lam.powi((t - tp - 1) as i32) * x.data[tp])
            .sum();
        acc += s * s;
    }
    let expect = (acc / 25.0).sqrt();
    assert!((got.lambda_term - expect).abs() < 1e-12 * expect);
}

#[test]
fn lru_spec_uses_normalization() {
    let spec = RecurrentCellSpec::lru(4, 0.9, 1.0);
    assert_eq!(spec.family(), "lru");
    let RecurrentCell::Diagonal(d) = spec.build(1, 1, &RngStream::new(0)).unwrap() else {
        panic!()
    };
    assert!(matches!(d.norm.kind, GammaKind::SqrtOneMinusNuSq));
    for z in d.lambdas().unwrap() {
        assert!(z.norm() >= 0.9 - 1e-12 && z.norm() < 1.0);
        assert!(z.arg() > 0.0 && z.arg() <= 1.0 + 1e-12);
    }
}

#[test]
fn cell_json_roundtrip() {
    for cell in small_cells(2) {
        let s = serde_json::to_string(&cell).unwrap();
        let back: RecurrentCell = serde_json::from_str(&s).unwrap();
        assert_eq!(back.flat_params(), cell.flat_params());
    }
}
