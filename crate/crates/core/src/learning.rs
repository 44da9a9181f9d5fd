//! Two-phase contrastive plasticity and learning-rate scheduling.

use ndarray::{Array2, ArrayView2, Zip};

use crate::config::{DecayRule, NetworkConfig};
use crate::corrinfo::CorrelationInverse;
use crate::dynamics::{free_phase, nudged_phase, ActivationState};
use crate::error::{Error, Result};
use crate::linalg::mean_outer;
use crate::metrics::Tally;
use crate::network::{LateralDecomposition, SynapticState};
use crate::Real;

/// Current learning rates and the rule that decays them.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSchedule {
    /// Last epoch whose decay has been applied.
    pub epoch: usize,
    pub mu_ff: Vec<f64>,
    /// Rates for segments `1..P`.
    pub mu_fb: Vec<f64>,
    pub rule: DecayRule,
}

impl TrainSchedule {
    pub fn new(cfg: &NetworkConfig) -> Self {
        Self {
            epoch: 0,
            mu_ff: cfg.mu_ff.clone(),
            mu_fb: cfg.mu_fb.clone(),
            rule: cfg.lr_decay.clone(),
        }
    }

    /// Applies the multipliers of every epoch boundary up to `epoch` that has
    /// not been applied yet.
    pub fn apply_epoch_decay(&mut self, epoch: usize) {
        while self.epoch < epoch {
            self.epoch += 1;
            let m = self.rule.multiplier(self.epoch);
            self.mu_ff.iter_mut().for_each(|v| *v *= m);
            self.mu_fb.iter_mut().for_each(|v| *v *= m);
        }
    }
}

pub fn apply_epoch_decay(mut schedule: TrainSchedule, epoch: usize) -> TrainSchedule {
    schedule.apply_epoch_decay(epoch);
    schedule
}

/// `mean((post − W pre) preᵀ)` at one phase.
fn forward_term<F: Real>(w: &Array2<F>, pre: ArrayView2<F>, post: ArrayView2<F>) -> Array2<F> {
    let e = &post - &w.dot(&pre);
    mean_outer(e.view(), pre)
}

/// `mean((lower − W_fb upper) upperᵀ)` at one phase.
fn backward_term<F: Real>(w: &Array2<F>, lower: ArrayView2<F>, upper: ArrayView2<F>) -> Array2<F> {
    let e = &lower - &w.dot(&upper);
    mean_outer(e.view(), upper)
}

fn check_finite<F: Real>(m: &Array2<F>, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("non-finite {what} update")))
    }
}

/// Contrastive difference for a feedforward predictor, before scaling.
pub fn forward_delta<F: Real>(
    w: &Array2<F>,
    pre_free: ArrayView2<F>,
    post_free: ArrayView2<F>,
    pre_nudged: ArrayView2<F>,
    post_nudged: ArrayView2<F>,
) -> Result<Array2<F>> {
    let (m, n) = w.dim();
    for (name, a, rows) in [
        ("pre", pre_free, n),
        ("pre", pre_nudged, n),
        ("post", post_free, m),
        ("post", post_nudged, m),
    ] {
        if a.nrows() != rows || a.ncols() != pre_free.ncols() {
            return Err(Error::Shape(format!(
                "{name} activations {:?} for weights {:?}",
                a.dim(),
                w.dim()
            )));
        }
    }
    Ok(forward_term(w, pre_nudged, post_nudged) - forward_term(w, pre_free, post_free))
}

/// Contrastive difference for a feedback predictor (`lower ≈ W_fb upper`).
pub fn backward_delta<F: Real>(
    w: &Array2<F>,
    lower_free: ArrayView2<F>,
    upper_free: ArrayView2<F>,
    lower_nudged: ArrayView2<F>,
    upper_nudged: ArrayView2<F>,
) -> Result<Array2<F>> {
    let (m, n) = w.dim();
    for (name, a, rows) in [
        ("lower", lower_free, m),
        ("lower", lower_nudged, m),
        ("upper", upper_free, n),
        ("upper", upper_nudged, n),
    ] {
        if a.nrows() != rows || a.ncols() != lower_free.ncols() {
            return Err(Error::Shape(format!(
                "{name} activations {:?} for weights {:?}",
                a.dim(),
                w.dim()
            )));
        }
    }
    Ok(backward_term(w, lower_nudged, upper_nudged) - backward_term(w, lower_free, upper_free))
}

fn apply_delta<F: Real>(w: &mut Array2<F>, delta: &Array2<F>, mu: f64, beta_prime: f64, decay: Option<f64>) {
    let gain = F::of(mu / beta_prime);
    let shrink = F::of(1.0 - decay.map_or(0.0, |eps| mu * eps));
    Zip::from(w).and(delta).for_each(|w, &d| *w = *w * shrink + gain * d);
}

/// `W_ff += μ/β′ · (mean(e rᵀ)|nudged − mean(e rᵀ)|free)` with `e = r^{k+1} − W_ff r^k`.
#[allow(clippy::too_many_arguments)]
pub fn ep_update_forward<F: Real>(
    w: &mut Array2<F>,
    pre_free: ArrayView2<F>,
    post_free: ArrayView2<F>,
    pre_nudged: ArrayView2<F>,
    post_nudged: ArrayView2<F>,
    mu: f64,
    beta_prime: f64,
) -> Result<()> {
    if beta_prime == 0.0 {
        return Ok(());
    }
    let delta = forward_delta(w, pre_free, post_free, pre_nudged, post_nudged)?;
    check_finite(&delta, "feedforward")?;
    apply_delta(w, &delta, mu, beta_prime, None);
    Ok(())
}

/// Mirror of [`ep_update_forward`] with `e = r^k − W_fb r^{k+1}`.
#[allow(clippy::too_many_arguments)]
pub fn ep_update_backward<F: Real>(
    w: &mut Array2<F>,
    lower_free: ArrayView2<F>,
    upper_free: ArrayView2<F>,
    lower_nudged: ArrayView2<F>,
    upper_nudged: ArrayView2<F>,
    mu: f64,
    beta_prime: f64,
) -> Result<()> {
    if beta_prime == 0.0 {
        return Ok(());
    }
    let delta = backward_delta(w, lower_free, upper_free, lower_nudged, upper_nudged)?;
    check_finite(&delta, "feedback")?;
    apply_delta(w, &delta, mu, beta_prime, None);
    Ok(())
}

/// Absorbs the nudged-phase rates of one layer into its lateral inverse.
pub fn lateral_update<F: Real>(lateral: &mut CorrelationInverse<F>, nudged_rates: ArrayView2<F>) -> Result<()> {
    lateral.update(nudged_rates)
}

/// The same lateral step written on the autapse/inhibition split of a hidden
/// layer's `M = ε(2γB + g_l I)`, given `z = B r` for the batch.
pub fn lateral_update_decomposed(
    m: &LateralDecomposition<f64>,
    z: ArrayView2<f64>,
    epsilon: f64,
    g_leak: f64,
    lambda: f64,
) -> LateralDecomposition<f64> {
    let gamma = (1.0 - lambda) / lambda;
    let zz = mean_outer(z, z);
    let c = epsilon * 2.0 * gamma * gamma / lambda;
    let d = Zip::from(&m.d)
        .and(zz.diag())
        .map_collect(|&d, &z2| d / lambda - c * z2 + epsilon * g_leak * (1.0 - 1.0 / lambda));
    let mut o = &m.o / lambda + &(zz * c);
    o.diag_mut().fill(0.0);
    LateralDecomposition { d, o }
}

/// `W += μ (mean((y − W x) xᵀ) − εW)`; its fixed point is the regularized
/// least-squares predictor.
pub fn predictor_step(w: &mut Array2<f64>, x: ArrayView2<f64>, y: ArrayView2<f64>, mu: f64, epsilon: f64) {
    let e = &y - &w.dot(&x);
    let g = mean_outer(e.view(), x) - &*w * epsilon;
    w.scaled_add(mu, &g);
}

/// Per-batch training figures, taken from the free phase.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BatchMetrics {
    pub tally: Tally,
    /// Sum over samples of `‖y_T − r^(P)‖²`.
    pub sum_sq_error: f64,
}

impl BatchMetrics {
    pub fn merge(&mut self, other: &BatchMetrics) {
        self.tally.merge(&other.tally);
        self.sum_sq_error += other.sum_sq_error;
    }

    pub fn mse(&self) -> f64 {
        self.sum_sq_error / self.tally.samples.max(1) as f64
    }

    pub fn top1(&self) -> f64 {
        self.tally.accuracy().top1
    }
}

/// Both phase equilibria of one batch.
#[derive(Clone, Debug)]
pub struct PhasePair<F: Real> {
    pub free: ActivationState<F>,
    pub nudged: ActivationState<F>,
}

/// Runs both phases on a batch without touching the weights.
pub fn run_phases<F: Real>(
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    x: Array2<F>,
    y: Array2<F>,
) -> Result<PhasePair<F>> {
    let free = free_phase(w, cfg, x, Some(y))?.state;
    let nudged = nudged_phase(&free, w, cfg)?.state;
    Ok(PhasePair { free, nudged })
}

/// Applies every update family from one pair of stored phase states.
pub fn apply_updates<F: Real>(
    w: &mut SynapticState<F>,
    phases: &PhasePair<F>,
    cfg: &NetworkConfig,
    schedule: &TrainSchedule,
) -> Result<()> {
    let bp = cfg.beta_prime;
    if bp == 0.0 {
        return Ok(());
    }
    let (f, n) = (&phases.free, &phases.nudged);
    let p = cfg.depth();
    let ff: Vec<Array2<F>> = (0..p)
        .map(|k| {
            forward_delta(
                &w.w_ff[k],
                f.rates(k).view(),
                f.rates(k + 1).view(),
                n.rates(k).view(),
                n.rates(k + 1).view(),
            )
        })
        .collect::<Result<_>>()?;
    let fb: Vec<Array2<F>> = (1..p)
        .map(|k| {
            backward_delta(
                w.w_fb(k),
                f.rates(k).view(),
                f.rates(k + 1).view(),
                n.rates(k).view(),
                n.rates(k + 1).view(),
            )
        })
        .collect::<Result<_>>()?;
    for d in ff.iter().chain(&fb) {
        check_finite(d, "synaptic")?;
    }
    for (k, d) in ff.iter().enumerate() {
        let decay = cfg.weight_decay.then(|| cfg.epsilon[k]);
        apply_delta(&mut w.w_ff[k], d, schedule.mu_ff[k], bp, decay);
    }
    for (i, d) in fb.iter().enumerate() {
        let k = i + 1;
        let decay = cfg.weight_decay.then(|| cfg.epsilon[k]);
        apply_delta(&mut w.w_fb[i], d, schedule.mu_fb[i], bp, decay);
    }
    for k in 1..=p {
        lateral_update(&mut w.lateral[k - 1], n.rates(k).view())?;
    }
    Ok(())
}

/// Accuracy and squared error of the free-phase outputs.
pub fn free_phase_metrics<F: Real>(free: &ActivationState<F>, y: &Array2<F>, labels: &[usize]) -> Result<BatchMetrics> {
    let out = free.output();
    let mut tally = Tally::default();
    tally.add(out.view(), labels)?;
    let sum_sq_error = Zip::from(out)
        .and(y)
        .fold(0.0, |acc, &r, &t| acc + (t - r).as_f64().powi(2));
    Ok(BatchMetrics { tally, sum_sq_error })
}

/// Free phase, nudged phase, then feedforward, feedback and lateral updates.
pub fn train_batch<F: Real>(
    w: &mut SynapticState<F>,
    x: Array2<F>,
    y: Array2<F>,
    labels: &[usize],
    cfg: &NetworkConfig,
    schedule: &TrainSchedule,
) -> Result<BatchMetrics> {
    let phases = run_phases(w, cfg, x, y.clone())?;
    let metrics = free_phase_metrics(&phases.free, &y, labels)?;
    apply_updates(w, &phases, cfg, schedule)?;
    Ok(metrics)
}
