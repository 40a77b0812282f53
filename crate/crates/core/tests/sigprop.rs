use memcurse::experiments::{sigprop_at_init, DeepNetSpec, NormKind, SigpropCell, SigpropConfig, SigpropData};
use memcurse::rng::RngStream;
use memcurse::stochastic::{sample_wss_sequence, AutocorrelationModel};

fn max_rel_error(cell: SigpropCell, norm: NormKind, nu: f64) -> f64 {
    let spec = DeepNetSpec::uniform(cell, nu, 3, 4, 2, norm);
    let mut net = spec.build(&RngStream::new(7)).unwrap();
    let x = sample_wss_sequence(&AutocorrelationModel::Iid, 6, 2, 3, &RngStream::new(8)).unwrap();
    let stats = net.loss_and_grads(&x).unwrap();
    let analytic = net.flat_grads(&stats);
    let base = net.params();
    let flat = base.flatten();
    assert_eq!(flat.len(), analytic.len());
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for i in 0..flat.len() {
        let mut eval = |delta: f64| {
            let mut p = flat.clone();
            p[i] += delta;
            net.set_params(&base.with_flat(&p).unwrap()).unwrap();
            net.loss_and_grads(&x).unwrap().loss
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        worst = worst.max((fd - analytic[i]).abs() / (1e-6 + fd.abs().max(analytic[i].abs())));
    }
    net.set_params(&base).unwrap();
    worst
}

#[test]
fn network_gradients_match_finite_differences() {
    for cell in SigpropCell::ALL {
        for norm in [NormKind::None, NormKind::LayerNorm] {
            let err = max_rel_error(cell, norm, 0.5);
            assert!(err < 1e-4, "{} {:?}: relative error {err:.2e}", cell.name(), norm);
        }
    }
}

#[test]
fn unnormalized_first_layer_state_matches_linear_prediction_at_zero_memory() {
    // |λ|² uniform on [0, 1/4] and unit input power per unit give
    // E|h|² = 4 ln(4/3).
    let expected = 4.0 * (4.0f64 / 3.0).ln();
    let data = SigpropData {
        count: 8,
        length: 128,
        dim: 64,
        rho: 0.0,
    };
    let x = data.sample(&RngStream::new(3)).unwrap();
    let cfg = SigpropConfig::new(SigpropCell::Crnn);
    let rows = sigprop_at_init(&cfg, &x, &[0.0], 1).unwrap();
    let h1 = rows.iter().find(|r| r.layer == 1 && r.group == "h").unwrap();
    let ratio = h1.mean_square / expected;
    assert!((0.5..2.0).contains(&ratio), "E|h|^2 {} vs {expected}", h1.mean_square);
}

#[test]
fn study_is_deterministic_and_reports_every_layer() {
    let data = SigpropData {
        count: 8,
        length: 32,
        dim: 8,
        rho: 0.5,
    };
    let x = data.sample(&RngStream::new(1)).unwrap();
    let mut cfg = SigpropConfig::new(SigpropCell::Lru);
    cfg.hidden = 8;
    let a = sigprop_at_init(&cfg, &x, &[0.0, 0.9], 1).unwrap();
    let b = sigprop_at_init(&cfg, &x, &[0.0, 0.9], 2).unwrap();
    assert_eq!(a, b);
    for nu in [0.0, 0.9] {
        for layer in 1..=cfg.depth {
            assert!(a
                .iter()
                .any(|r| r.nu == nu && r.layer == layer && r.group == "h" && r.finite));
            assert!(a.iter().any(|r| r.nu == nu && r.layer == layer && r.group == "glu.w1"));
        }
        assert!(a.iter().any(|r| r.nu == nu && r.layer == 0 && r.group == "total"));
    }
}

#[test]
fn unnormalized_gradients_grow_with_memory() {
    let data = SigpropData {
        count: 8,
        length: 256,
        dim: 16,
        rho: 0.0,
    };
    let x = data.sample(&RngStream::new(2)).unwrap();
    let mut cfg = SigpropConfig::new(SigpropCell::Crnn);
    cfg.hidden = 16;
    let rows = sigprop_at_init(&cfg, &x, &[0.0, 0.99], 1).unwrap();
    let total = |nu: f64| {
        rows.iter()
            .find(|r| r.nu == nu && r.group == "total")
            .unwrap()
            .mean_square
    };
    assert!(total(0.99) > 10.0 * total(0.0), "{} vs {}", total(0.99), total(0.0));
}

#[test]
fn rejects_mismatched_glu_width() {
    let mut spec = DeepNetSpec::uniform(SigpropCell::Lstm, 0.5, 4, 4, 1, NormKind::None);
    spec.blocks[0].glu_width = 3;
    assert!(spec.build(&RngStream::new(0)).is_err());
}
