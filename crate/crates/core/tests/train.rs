use teunroll::nn::{AdamConfig, NetworkConfig, Tape};
use teunroll::signal::from_planar;
use teunroll::train::{loss_and_gradient, synthesize, train, DataSpec, MaskKind, TrainConfig, UnrolledModel};
use teunroll::unroll::{Algorithm, Sharing, UnrollConfig};

fn spec() -> DataSpec {
    DataSpec {
        size: 16,
        coils: 2,
        ellipses: 4,
        acceleration: 2,
        acs: 4,
        mask: MaskKind::Equispaced,
        sigma: 0.01,
    }
}

fn model(alg: Algorithm, sharing: Sharing, t: usize, seed: u64) -> UnrolledModel {
    let mut cfg = UnrollConfig::new(alg, t);
    cfg.sharing = sharing;
    let net = NetworkConfig::resnet(2, 8).with_time_embedding(sharing == Sharing::TimeEmbedded);
    let mut m = UnrolledModel::new(cfg, net, seed).unwrap();
    // Randomize FiLM heads and schedules so every path is exercised.
    let mut flat = m.flat_params();
    for (i, v) in flat.iter_mut().enumerate() {
        if *v == 0.0 {
            *v = 0.01 * ((i as f64) * 0.37).sin();
        }
    }
    m.set_flat_params(&flat);
    m
}

#[test]
fn tape_forward_matches_engine() {
    let data = synthesize(&spec(), 1, 3).unwrap();
    for (alg, sharing) in [
        (Algorithm::Vsqp, Sharing::Shared),
        (Algorithm::Admm, Sharing::Unshared),
        (Algorithm::Alg1, Sharing::TimeEmbedded),
        (Algorithm::VsqpTe, Sharing::TimeEmbedded),
        (Algorithm::AdmmTe, Sharing::TimeEmbedded),
    ] {
        let m = model(alg, sharing, 3, 11);
        let out = m.reconstruct(&data[0], false).unwrap();
        let mut tape = Tape::new();
        let (x, _) = m.forward_tape(&mut tape, &data[0]).unwrap();
        let img = from_planar(tape.value(x).data());
        let diff = img
            .as_slice()
            .iter()
            .zip(out.image.as_slice())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-9, "{alg:?}: {diff}");
    }
}

#[test]
fn schedule_gradients_match_finite_differences() {
    let data = synthesize(&spec(), 1, 4).unwrap();
    for alg in [Algorithm::VsqpTe, Algorithm::AdmmTe, Algorithm::Alg1] {
        let m = model(alg, Sharing::TimeEmbedded, 3, 5);
        let (_, g) = loss_and_gradient(&m, &data[0]).unwrap();
        let n_net = m.num_network_parameters();
        let flat = m.flat_params();
        for k in n_net..flat.len() {
            let h = 1e-6;
            let mut p = flat.clone();
            p[k] += h;
            let mut mp = m.clone();
            mp.set_flat_params(&p);
            let lp = loss_and_gradient(&mp, &data[0]).unwrap().0;
            p[k] -= 2.0 * h;
            mp.set_flat_params(&p);
            let lm = loss_and_gradient(&mp, &data[0]).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            let tol = 1e-5 * fd.abs().max(g[k].abs()) + 1e-12;
            assert!((fd - g[k]).abs() <= tol, "{alg:?} param {k}: fd {fd} vs {}", g[k]);
        }
    }
}

#[test]
fn zero_epochs_is_identity() {
    let data = synthesize(&spec(), 2, 1).unwrap();
    let mut m = model(Algorithm::Vsqp, Sharing::Shared, 2, 0);
    let before = m.flat_params();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let report = train(&mut m, &data, &cfg, |_, _| {}).unwrap();
    assert!(report.epoch_losses.is_empty());
    assert_eq!(before, m.flat_params());
}

#[test]
fn overfits_single_sample() {
    let data = synthesize(&spec(), 1, 2).unwrap();
    let mut m = model(Algorithm::VsqpTe, Sharing::TimeEmbedded, 2, 0);
    let initial = loss_and_gradient(&m, &data[0]).unwrap().0;
    let cfg = TrainConfig {
        epochs: 300,
        batch_size: 1,
        adam: AdamConfig {
            lr: 2e-3,
            ..AdamConfig::default()
        },
        seed: 0,
        threads: 1,
    };
    train(&mut m, &data, &cfg, |_, _| {}).unwrap();
    let fin = loss_and_gradient(&m, &data[0]).unwrap().0;
    assert!(fin * 10.0 <= initial, "loss {initial} -> {fin}");
    assert!(m.schedules.mu.values.iter().all(|&v| v >= 1e-6));
}

#[test]
fn training_is_reproducible_across_thread_counts() {
    let data = synthesize(&spec(), 4, 9).unwrap();
    let run = |threads| {
        let mut m = model(Algorithm::Alg1, Sharing::TimeEmbedded, 2, 1);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            seed: 42,
            threads,
            ..TrainConfig::default()
        };
        let r = train(&mut m, &data, &cfg, |_, _| {}).unwrap();
        (r.epoch_losses, m.flat_params())
    };
    let a = run(1);
    let b = run(1);
    let c = run(3);
    assert_eq!(a, b);
    assert_eq!(a, c);
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = model(Algorithm::Alg1, Sharing::TimeEmbedded, 3, 7);
    m.save(dir.path()).unwrap();
    let back = UnrolledModel::load(dir.path()).unwrap();
    assert_eq!(back.unroll, m.unroll);
    assert_eq!(back.flat_params(), m.flat_params());
    assert_eq!(back.schedules, m.schedules);

    let other = model(Algorithm::Vsqp, Sharing::Shared, 3, 7);
    let mut wrong = UnrolledModel::new(other.unroll, NetworkConfig::resnet(3, 8), 0).unwrap();
    assert!(wrong.load_tensors(&m.named_tensors()).is_err());
}

#[test]
fn sharing_must_match_network() {
    let mut cfg = UnrollConfig::new(Algorithm::Alg1, 3);
    cfg.sharing = Sharing::TimeEmbedded;
    assert!(UnrolledModel::new(cfg, NetworkConfig::resnet(1, 4), 0).is_err());
}

#[test]
fn synthesized_data_is_deterministic_and_normalized() {
    let a = synthesize(&spec(), 3, 5).unwrap();
    let b = synthesize(&spec(), 3, 5).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.reference, y.reference);
        assert_eq!(x.y, y.y);
        let peak = x.reference.magnitude().into_iter().fold(0.0, f64::max);
        assert!((peak - 1.0).abs() < 1e-12);
    }
    assert_ne!(a[0].reference, a[1].reference);
}
