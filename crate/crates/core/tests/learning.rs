mod common;

use corinfomax::data::batch_stream;
use corinfomax::learning::{apply_updates, run_phases, train_batch, PhasePair};
use corinfomax::linalg::{cholesky, max_abs_asymmetry};
use corinfomax::network::init_network;
use corinfomax::{NetworkConfig, Polytope, Split, SynapticState, TrainSchedule};
use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{random_matrix, synthetic_dataset, toy_config};

fn three_layer() -> NetworkConfig {
    let mut cfg = toy_config(&[6, 5, 4, 3], Polytope::NonnegUnitHypercube);
    cfg.epsilon = vec![0.5, 0.4, 0.3];
    cfg
}

fn phases_for(cfg: &NetworkConfig, w: &SynapticState<f64>) -> PhasePair<f64> {
    let ds = synthetic_dataset(6, 6, 3, 2, Split::Train);
    let b = ds.batch::<f64>(&(0..6).collect::<Vec<_>>());
    run_phases(w, cfg, b.x, b.y).unwrap()
}

fn updated(cfg: &NetworkConfig, w: &SynapticState<f64>, phases: &PhasePair<f64>) -> SynapticState<f64> {
    let mut out = w.clone();
    apply_updates(&mut out, phases, cfg, &TrainSchedule::new(cfg)).unwrap();
    out
}

/// Scrambles every rate that segment `k` (layers `k` and `k+1`) does not
/// touch, plus every weight matrix except the segment's own predictors.
fn scramble_outside(k: usize, cfg: &NetworkConfig, w: &mut SynapticState<f64>, phases: &mut PhasePair<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let p = cfg.depth();
    for layer in 1..=p {
        if layer != k && layer != k + 1 {
            for st in [&mut phases.free, &mut phases.nudged] {
                let dim = st.r[layer - 1].dim();
                st.r[layer - 1] = random_matrix(&mut rng, dim.0, dim.1, 1.0).mapv(f64::abs);
            }
        }
    }
    for (i, m) in w.w_ff.iter_mut().enumerate() {
        if i != k {
            let dim = m.dim();
            *m = random_matrix(&mut rng, dim.0, dim.1, 2.0);
        }
    }
    for (i, m) in w.w_fb.iter_mut().enumerate() {
        if i + 1 != k {
            let dim = m.dim();
            *m = random_matrix(&mut rng, dim.0, dim.1, 2.0);
        }
    }
}

#[test]
fn updates_are_segment_local() {
    let cfg = three_layer();
    let w = init_network::<f64>(&cfg).unwrap();
    let phases = phases_for(&cfg, &w);
    let reference = updated(&cfg, &w, &phases);
    for k in 0..cfg.depth() {
        let (mut w2, mut ph2) = (w.clone(), phases.clone());
        scramble_outside(k, &cfg, &mut w2, &mut ph2);
        let after = updated(&cfg, &w2, &ph2);
        let d_ref = &reference.w_ff[k] - &w.w_ff[k];
        let d_new = &after.w_ff[k] - &w2.w_ff[k];
        assert!(
            (d_ref - d_new).iter().all(|v| v.abs() < 1e-15),
            "feedforward segment {k}"
        );
        if k >= 1 {
            let d_ref = &reference.w_fb[k - 1] - &w.w_fb[k - 1];
            let d_new = &after.w_fb[k - 1] - &w2.w_fb[k - 1];
            assert!((d_ref - d_new).iter().all(|v| v.abs() < 1e-15), "feedback segment {k}");
        }
    }
    // Lateral inverses see only their own layer's nudged rates.
    for layer in 1..=cfg.depth() {
        let mut ph2 = phases.clone();
        for other in (1..=cfg.depth()).filter(|&o| o != layer) {
            ph2.nudged.r[other - 1].mapv_inplace(|v| 1.0 - v);
            ph2.free.r[other - 1].mapv_inplace(|v| 1.0 - v);
        }
        ph2.free.r[layer - 1].mapv_inplace(|v| 0.5 * v);
        let after = updated(&cfg, &w, &ph2);
        assert_eq!(
            after.lateral[layer - 1].b,
            reference.lateral[layer - 1].b,
            "lateral layer {layer}"
        );
    }
}

#[test]
fn lateral_inverses_stay_positive_definite() {
    let mut cfg = toy_config(&[8, 6, 3], Polytope::NonnegUnitHypercube);
    cfg.t_free = 15;
    cfg.t_nudged = 5;
    cfg.lambda_r = 0.999;
    let ds = synthetic_dataset(400, 8, 3, 4, Split::Train);
    let mut w = init_network::<f64>(&cfg).unwrap();
    let schedule = TrainSchedule::new(&cfg);
    let mut batches = 0;
    'outer: for epoch in 0.. {
        for b in batch_stream::<f64>(&ds, cfg.batch_size, cfg.seed, epoch) {
            train_batch(&mut w, b.x, b.y, &b.labels, &cfg, &schedule).unwrap();
            batches += 1;
            if batches % 50 == 0 {
                for lat in &w.lateral {
                    assert!(max_abs_asymmetry(lat.b.view()) < 1e-10);
                    cholesky(lat.b.view()).expect("B lost definiteness");
                }
            }
            if batches == 1000 {
                break 'outer;
            }
        }
    }
    for lat in &w.lateral {
        let l = cholesky(lat.b.view()).unwrap();
        assert!(l.diag().iter().all(|&d| d > 0.0));
    }
}

#[test]
fn weight_decay_shrinks_without_signal() {
    let mut cfg = three_layer();
    let w = init_network::<f64>(&cfg).unwrap();
    let free = phases_for(&cfg, &w).free;
    // Identical phases leave only the decay term.
    let phases = PhasePair {
        free: free.clone(),
        nudged: free,
    };
    assert_eq!(updated(&cfg, &w, &phases).w_ff, w.w_ff);

    cfg.weight_decay = true;
    let schedule = TrainSchedule::new(&cfg);
    let after = updated(&cfg, &w, &phases);
    for k in 0..cfg.depth() {
        let want: Array2<f64> = &w.w_ff[k] * (1.0 - schedule.mu_ff[k] * cfg.epsilon[k]);
        assert!((&after.w_ff[k] - &want).iter().all(|v| v.abs() < 1e-15));
    }
    for i in 0..cfg.depth() - 1 {
        let want: Array2<f64> = &w.w_fb[i] * (1.0 - schedule.mu_fb[i] * cfg.epsilon[i + 1]);
        assert!((&after.w_fb[i] - &want).iter().all(|v| v.abs() < 1e-15));
    }
}
