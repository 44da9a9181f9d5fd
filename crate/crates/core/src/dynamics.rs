//! Projected-gradient neural dynamics for the free and nudged phases.
//!
//! Each layer `k` integrates
//!
//! ```text
//! τ_u du/ds = −g_l u + g_A (v_A − u) + g_B (v_B − u)
//! ```
//!
//! with explicit Euler steps, sweeping layers `1..=P` in order so every layer
//! sees the freshest rates of its neighbours. Only the products `g_A v_A`
//! enter the update, which keeps the output layer well defined at `β = 0`.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::config::{NetworkConfig, Polytope};
use crate::error::{Error, Result};
use crate::network::{conductances, m_matrix, SynapticState};
use crate::Real;

/// Clipped ReLU onto `[0, 1]`.
#[inline]
pub fn sigma_plus<F: Real>(u: F) -> F {
    u.max(F::zero()).min(F::one())
}

#[inline]
pub fn relu<F: Real>(u: F) -> F {
    u.max(F::zero())
}

fn activation<F: Real>(polytope: Polytope) -> fn(F) -> F {
    match polytope {
        Polytope::NonnegUnitHypercube => sigma_plus,
        Polytope::NonnegL1Ball => relu,
    }
}

/// Activations of every layer for one batch (one sample per column).
///
/// Layer `k ≥ 1` lives at index `k - 1` of `u`, `r`, `a` and `q`.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationState<F: Real = f64> {
    pub u: Vec<Array2<F>>,
    pub r: Vec<Array2<F>>,
    pub r0: Array2<F>,
    pub a: Vec<Array1<F>>,
    pub q: Vec<Array1<F>>,
    pub beta: f64,
    pub y_t: Option<Array2<F>>,
}

impl<F: Real> ActivationState<F> {
    /// Resting state `u = 0` with the input clamped.
    pub fn zeros(cfg: &NetworkConfig, input: Array2<F>, target: Option<Array2<F>>) -> Result<Self> {
        let n = &cfg.layer_sizes;
        let b = input.ncols();
        if input.nrows() != n[0] || b == 0 {
            return Err(Error::Shape(format!(
                "input {:?} does not match {} features",
                input.dim(),
                n[0]
            )));
        }
        if let Some(y) = &target {
            if y.dim() != (n[n.len() - 1], b) {
                return Err(Error::Shape(format!("targets {:?} do not match outputs", y.dim())));
            }
        }
        let p = cfg.depth();
        let u: Vec<Array2<F>> = (1..=p).map(|k| Array2::zeros((n[k], b))).collect();
        Ok(Self {
            r: u.clone(),
            u,
            r0: input,
            a: vec![Array1::zeros(b); p],
            q: vec![Array1::zeros(b); p],
            beta: 0.0,
            y_t: target,
        })
    }

    pub fn depth(&self) -> usize {
        self.u.len()
    }

    pub fn batch(&self) -> usize {
        self.r0.ncols()
    }

    /// Rates of layer `k`, with `k = 0` the clamped input.
    pub fn rates(&self, k: usize) -> &Array2<F> {
        if k == 0 {
            &self.r0
        } else {
            &self.r[k - 1]
        }
    }

    pub fn output(&self) -> &Array2<F> {
        &self.r[self.r.len() - 1]
    }
}

/// Final state of one phase and its convergence diagnostics.
#[derive(Clone, Debug)]
pub struct PhaseResult<F: Real = f64> {
    pub state: ActivationState<F>,
    /// Max-norm of the last `du/ds`, per layer.
    pub residual: Vec<f64>,
    pub iterations: usize,
}

fn max_abs<F: Real>(m: &Array2<F>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.as_f64().abs()))
}

/// `(u − W_ff r^{k−1}, u − W_fb r^{k+1})`. The backward error of the output
/// layer is `u − y_T` and exists only in a nudged phase.
pub fn prediction_errors<F: Real>(
    state: &ActivationState<F>,
    w: &SynapticState<F>,
    k: usize,
) -> Result<(Array2<F>, Option<Array2<F>>)> {
    let p = state.depth();
    if k == 0 || k > p {
        return Err(Error::InvalidArgument(format!("layer {k} outside 1..={p}")));
    }
    let u = &state.u[k - 1];
    let e_fwd = u - &w.w_ff[k - 1].dot(state.rates(k - 1));
    let e_bwd = if k < p {
        Some(u - &w.w_fb(k).dot(state.rates(k + 1)))
    } else if state.beta > 0.0 {
        state.y_t.as_ref().map(|y| u - y)
    } else {
        None
    };
    Ok((e_fwd, e_bwd))
}

/// Apical and basal dendritic voltages of layer `k`.
///
/// The output layer reports `v_A` with `M^(P)` at the configured `β′` and the
/// nudge term only when the state's `β` is positive.
pub fn apical_basal_voltages<F: Real>(
    state: &ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    k: usize,
) -> Result<(Array2<F>, Array2<F>)> {
    let p = cfg.depth();
    let m = m_matrix(k, w, cfg)?;
    let r = state.rates(k);
    let mut v_a = m.dot(r);
    let g_a = if k < p {
        v_a += &w.w_fb(k).dot(state.rates(k + 1));
        1.0 / cfg.epsilon[k]
    } else {
        if state.beta > 0.0 {
            let y = state
                .y_t
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("nudged phase needs targets".into()))?;
            v_a = v_a - r + y;
        }
        cfg.beta_prime
    };
    if cfg.is_sparse(k) {
        let q = &state.q[k - 1];
        let inv = F::of(1.0 / g_a);
        for mut col in v_a.axis_iter_mut(Axis(0)) {
            Zip::from(&mut col).and(q).for_each(|v, &qi| *v = *v - inv * qi);
        }
    }
    let v_b = w.w_ff[k - 1].dot(state.rates(k - 1));
    Ok((v_a, v_b))
}

/// Writes `τ_u du/ds` of layer `k` into `out`.
fn layer_drift<F: Real>(
    state: &ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    k: usize,
    basal0: &Array2<F>,
    out: &mut Array2<F>,
) {
    let p = cfg.depth();
    let beta = state.beta;
    let c = conductances(cfg, k, beta);
    let gamma = cfg.gamma();
    let (u, r) = (&state.u[k - 1], &state.r[k - 1]);

    let lateral_gain = if k < p { 2.0 * gamma } else { gamma };
    general_mat_mul(F::of(lateral_gain), &w.lateral(k).b, r, F::zero(), out);
    if k < p {
        general_mat_mul(F::of(c.apical), w.w_fb(k), state.rates(k + 1), F::one(), out);
    }
    if k == 1 {
        out.scaled_add(F::of(c.basal), basal0);
    } else {
        general_mat_mul(F::of(c.basal), &w.w_ff[k - 1], state.rates(k - 1), F::one(), out);
    }

    let gl = F::of(c.leak);
    let pull = F::of(c.apical + c.basal);
    Zip::from(&mut *out).and(u).and(r).for_each(|d, &u, &r| {
        *d = *d + gl * (r - u) - pull * u;
    });
    if k == p && beta > 0.0 {
        let b = F::of(beta);
        let y = state.y_t.as_ref().expect("nudged phase carries targets");
        Zip::from(&mut *out)
            .and(r)
            .and(y)
            .for_each(|d, &r, &y| *d = *d - b * (r - y));
    }
    if cfg.is_sparse(k) {
        let q = &state.q[k - 1];
        for mut row in out.axis_iter_mut(Axis(0)) {
            Zip::from(&mut row).and(q).for_each(|d, &qi| *d = *d - qi);
        }
    }
}

/// One sweep over all layers; returns `max |du/ds|` per layer.
fn step<F: Real>(
    state: &mut ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    mu_u: f64,
    mu_a: &[f64],
    basal0: &Array2<F>,
    s: usize,
) -> Result<Vec<f64>> {
    let p = cfg.depth();
    let mut residual = Vec::with_capacity(p);
    let step_u = F::of(mu_u / cfg.tau_u);
    for k in 1..=p {
        let mut drift = Array2::zeros(state.u[k - 1].raw_dim());
        layer_drift(state, w, cfg, k, basal0, &mut drift);
        residual.push(max_abs(&drift) / cfg.tau_u);

        let polytope = cfg.polytope[k - 1];
        let da = if polytope == Polytope::NonnegL1Ball {
            let sums = state.r[k - 1].sum_axis(Axis(0));
            Some(
                Zip::from(&state.a[k - 1])
                    .and(&state.q[k - 1])
                    .and(&sums)
                    .map_collect(|&a, &q, &sr| -a + sr - F::one() + q),
            )
        } else {
            None
        };

        let act = activation::<F>(polytope);
        let u = &mut state.u[k - 1];
        u.scaled_add(step_u, &drift);
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::Diverged { layer: k, step: s });
        }
        Zip::from(&mut state.r[k - 1]).and(&*u).for_each(|r, &u| *r = act(u));

        if let Some(da) = da {
            let a = &mut state.a[k - 1];
            a.scaled_add(F::of(mu_a[k - 1]), &da);
            if a.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged { layer: k, step: s });
            }
            Zip::from(&mut state.q[k - 1]).and(&*a).for_each(|q, &a| *q = relu(a));
        }
    }
    Ok(residual)
}

fn check_state<F: Real>(state: &ActivationState<F>, w: &SynapticState<F>, cfg: &NetworkConfig) -> Result<()> {
    w.check_shapes(cfg)?;
    let n = &cfg.layer_sizes;
    let b = state.batch();
    if state.r0.nrows() != n[0] || state.depth() != cfg.depth() {
        return Err(Error::Shape("activation state does not match the network".into()));
    }
    for k in 1..=cfg.depth() {
        let want = (n[k], b);
        if state.u[k - 1].dim() != want || state.r[k - 1].dim() != want {
            return Err(Error::Shape(format!("layer {k} activations are not {want:?}")));
        }
        if state.a[k - 1].len() != b || state.q[k - 1].len() != b {
            return Err(Error::Shape(format!("layer {k} interneuron state has wrong length")));
        }
    }
    if state.beta > 0.0 && state.y_t.is_none() {
        return Err(Error::InvalidArgument("nudged phase needs targets".into()));
    }
    Ok(())
}

fn interneuron_rates(cfg: &NetworkConfig, s: usize) -> Vec<f64> {
    if cfg.any_sparse() {
        cfg.mu_a_schedule.iter().map(|sch| sch.at(s)).collect()
    } else {
        vec![0.0; cfg.depth()]
    }
}

/// One Euler step of a network whose layers all live in the unit hypercube.
pub fn dynamics_step_hypercube<F: Real>(
    state: &mut ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    mu_u: f64,
) -> Result<Vec<f64>> {
    if cfg.any_sparse() {
        return Err(Error::InvalidArgument("network has ℓ1-ball layers".into()));
    }
    check_state(state, w, cfg)?;
    let basal0 = w.w_ff[0].dot(&state.r0);
    step(state, w, cfg, mu_u, &vec![0.0; cfg.depth()], &basal0, 1)
}

/// One joint Euler step of membrane potentials and interneurons.
pub fn dynamics_step_sparse<F: Real>(
    state: &mut ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    mu_u: f64,
    mu_a: &[f64],
) -> Result<Vec<f64>> {
    if !cfg.any_sparse() {
        return Err(Error::InvalidArgument("network has no ℓ1-ball layers".into()));
    }
    if mu_a.len() != cfg.depth() {
        return Err(Error::InvalidArgument(format!(
            "expected {} interneuron rates",
            cfg.depth()
        )));
    }
    check_state(state, w, cfg)?;
    let basal0 = w.w_ff[0].dot(&state.r0);
    step(state, w, cfg, mu_u, mu_a, &basal0, 1)
}

/// Runs `t` steps at nudging strength `beta`, restarting the step counter.
pub fn run_phase<F: Real>(
    init: ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    beta: f64,
    t: usize,
) -> Result<PhaseResult<F>> {
    run_phase_observed(init, w, cfg, beta, t, |_, _| {})
}

/// [`run_phase`] calling `observe(s, state)` after every step.
pub fn run_phase_observed<F: Real>(
    mut state: ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    beta: f64,
    t: usize,
    mut observe: impl FnMut(usize, &ActivationState<F>),
) -> Result<PhaseResult<F>> {
    if t == 0 {
        return Err(Error::InvalidArgument("a phase needs at least one step".into()));
    }
    state.beta = beta;
    check_state(&state, w, cfg)?;
    let basal0 = w.w_ff[0].dot(&state.r0);
    let mut residual = Vec::new();
    for s in 1..=t {
        let mu_a = interneuron_rates(cfg, s);
        residual = step(&mut state, w, cfg, cfg.mu_u_schedule.at(s), &mu_a, &basal0, s)?;
        observe(s, &state);
    }
    Ok(PhaseResult {
        state,
        residual,
        iterations: t,
    })
}

pub fn free_phase<F: Real>(
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
    x: Array2<F>,
    y: Option<Array2<F>>,
) -> Result<PhaseResult<F>> {
    run_phase(ActivationState::zeros(cfg, x, y)?, w, cfg, 0.0, cfg.t_free)
}

/// Nudged phase warm-started from a free-phase equilibrium.
pub fn nudged_phase<F: Real>(
    free: &ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
) -> Result<PhaseResult<F>> {
    run_phase(free.clone(), w, cfg, cfg.beta_prime, cfg.t_nudged)
}

const INTERIOR_MARGIN: f64 = 1e-6;

/// Largest gradient magnitude over strictly interior coordinates, per layer.
///
/// Hidden layers use `2γBr − (1/ε_{k−1}) e_fwd − (1/ε_k) e_bwd`; the output
/// layer uses its own drift. Rates are replaced by `u` at interior points.
pub fn stationarity_residual<F: Real>(
    state: &ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
) -> Result<Vec<f64>> {
    check_state(state, w, cfg)?;
    let basal0 = w.w_ff[0].dot(&state.r0);
    let mut out = Vec::with_capacity(cfg.depth());
    for k in 1..=cfg.depth() {
        let mut drift = Array2::zeros(state.u[k - 1].raw_dim());
        layer_drift(state, w, cfg, k, &basal0, &mut drift);
        let upper = match cfg.polytope[k - 1] {
            Polytope::NonnegUnitHypercube => 1.0 - INTERIOR_MARGIN,
            Polytope::NonnegL1Ball => f64::INFINITY,
        };
        let mut worst = 0.0f64;
        Zip::from(&drift).and(&state.u[k - 1]).for_each(|&d, &u| {
            let u = u.as_f64();
            if u > INTERIOR_MARGIN && u < upper {
                worst = worst.max(d.as_f64().abs());
            }
        });
        out.push(worst);
    }
    Ok(out)
}

/// `τ_u du/ds` of every layer at the current state.
pub fn drift<F: Real>(state: &ActivationState<F>, w: &SynapticState<F>, cfg: &NetworkConfig) -> Result<Vec<Array2<F>>> {
    check_state(state, w, cfg)?;
    let basal0 = w.w_ff[0].dot(&state.r0);
    Ok((1..=cfg.depth())
        .map(|k| {
            let mut d = Array2::zeros(state.u[k - 1].raw_dim());
            layer_drift(state, w, cfg, k, &basal0, &mut d);
            d
        })
        .collect())
}

/// Gradient of the layerwise objective with respect to every `r^(k)`,
/// with frozen lateral inverses and neighbour predictions.
///
/// Hidden layers give `2γBr − (1/ε_{k−1}) e_fwd − (1/ε_k) e_bwd` and the
/// output layer `γBr − (1/ε_{P−1}) e_fwd − β(r − y)`, all with `u = r`.
pub fn objective_gradient<F: Real>(
    state: &ActivationState<F>,
    w: &SynapticState<F>,
    cfg: &NetworkConfig,
) -> Result<Vec<Array2<F>>> {
    check_state(state, w, cfg)?;
    let mut at_r = state.clone();
    at_r.u = state.r.clone();
    let basal0 = w.w_ff[0].dot(&at_r.r0);
    let p = cfg.depth();
    let mut out = Vec::with_capacity(p);
    for k in 1..=p {
        let mut g = Array2::zeros(at_r.u[k - 1].raw_dim());
        layer_drift(&at_r, w, cfg, k, &basal0, &mut g);
        if k == p && at_r.beta > 0.0 {
            g.scaled_add(F::of(at_r.beta), &at_r.r[k - 1]);
        }
        out.push(g);
    }
    Ok(out)
}

/// Free-phase outputs for a batch, used for prediction.
pub fn infer<F: Real>(w: &SynapticState<F>, cfg: &NetworkConfig, x: ArrayView2<F>) -> Result<Array2<F>> {
    let res = free_phase(w, cfg, x.to_owned(), None)?;
    let p = res.state.depth();
    Ok(res.state.r.into_iter().nth(p - 1).expect("at least one layer"))
}
