//! The subgradient method `K_{t+1} = K_t - alpha_t G_t` with iterate logging,
//! and a Moreau-envelope stationarity estimator.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinf::{self, HinfOptions};
use crate::linalg::Mat;
use crate::par;
use crate::plant::{Gain, Plant};
use crate::subgrad::{self, HinfCost, Objective};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StepSchedule {
    Constant { alpha: f64 },
    /// `alpha_t = beta / sqrt(horizon + 1)` for every `t`.
    SqrtHorizon { beta: f64, horizon: usize },
}

impl StepSchedule {
    pub fn constant(alpha: f64) -> Result<Self> {
        let s = Self::Constant { alpha };
        s.validate()?;
        Ok(s)
    }

    pub fn sqrt_horizon(beta: f64, horizon: usize) -> Result<Self> {
        let s = Self::SqrtHorizon { beta, horizon };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let (name, x) = match *self {
            Self::Constant { alpha } => ("alpha", alpha),
            Self::SqrtHorizon { beta, .. } => ("beta", beta),
        };
        if !(x > 0.0 && x.is_finite()) {
            return Err(Error::InvalidSchedule(format!("{name} must be positive and finite, got {x}")));
        }
        Ok(())
    }

    pub fn step(&self, _t: usize) -> f64 {
        match *self {
            Self::Constant { alpha } => alpha,
            Self::SqrtHorizon { beta, horizon } => beta / ((horizon + 1) as f64).sqrt(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum RunStatus {
    Completed,
    /// Iterate `t` was not stabilizing.
    LeftFeasibleSet(usize),
    /// `J` at iterate `t` exceeded the divergence cap.
    Diverged(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterateRecord {
    pub t: usize,
    pub k: Mat,
    /// `+inf` when the iterate is not stabilizing.
    pub j: f64,
    /// `NaN` when no subgradient was computed.
    pub grad_norm: f64,
    pub alpha: f64,
    pub rho_spectral: f64,
    pub stabilizing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoreauSample {
    pub t: usize,
    /// `None` when the inner solver failed at this iterate.
    pub grad_norm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunLog {
    pub iterates: Vec<IterateRecord>,
    pub status: RunStatus,
    pub best_index: usize,
    pub moreau: Option<Vec<MoreauSample>>,
}

pub const CSV_HEADER: &str = "t,J,grad_norm,alpha,rho_spectral_closed_loop,stabilizing,moreau_grad_norm";

impl RunLog {
    /// Per-iteration CSV log; the Moreau column is empty where not sampled.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{CSV_HEADER}")?;
        let moreau = self.moreau.as_deref().unwrap_or(&[]);
        let mut m = moreau.iter().peekable();
        for rec in &self.iterates {
            while m.peek().is_some_and(|s| s.t < rec.t) {
                m.next();
            }
            let mg = match m.peek() {
                Some(s) if s.t == rec.t => s.grad_norm.map(|g| format!("{g:e}")).unwrap_or_default(),
                _ => String::new(),
            };
            writeln!(
                w,
                "{},{:e},{:e},{:e},{:e},{},{}",
                rec.t, rec.j, rec.grad_norm, rec.alpha, rec.rho_spectral, rec.stabilizing, mg
            )?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MoreauOptions {
    /// Weak-convexity estimate; the prox subproblem is `(rho - m_hat)`-strongly convex.
    pub m_hat: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for MoreauOptions {
    fn default() -> Self {
        Self { m_hat: 0.0, max_iter: 500, tol: 1e-8 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunOptions {
    /// Evaluate the Moreau gradient every this many iterations (0 disables).
    pub log_moreau_every: usize,
    pub rho: Option<f64>,
    pub moreau: MoreauOptions,
    pub divergence_cap: f64,
    pub hinf: HinfOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            log_moreau_every: 0,
            rho: None,
            moreau: MoreauOptions::default(),
            divergence_cap: 1e8,
            hinf: HinfOptions::default(),
        }
    }
}

impl RunOptions {
    /// `rho` if set, else twice the weak-convexity estimate.
    pub fn effective_rho(&self) -> f64 {
        self.rho.unwrap_or(2.0 * self.moreau.m_hat)
    }
}

/// Runs `T` subgradient steps from `K0`, logging `K_0, ..., K_T`.
pub fn subgradient_method(
    plant: &Plant,
    k0: &Gain,
    schedule: &StepSchedule,
    horizon: usize,
    opts: &RunOptions,
) -> Result<RunLog> {
    schedule.validate()?;
    if horizon == 0 {
        return Err(Error::InvalidSchedule("horizon T must be at least 1".into()));
    }
    if plant.closed_loop(k0)?.rho >= 1.0 {
        return Err(Error::K0NotStabilizing);
    }
    let rho = opts.effective_rho();
    if opts.log_moreau_every > 0 && rho <= opts.moreau.m_hat {
        return Err(Error::RhoTooSmall { rho, m_hat: opts.moreau.m_hat });
    }

    let mut iterates = Vec::with_capacity(horizon + 1);
    let mut status = RunStatus::Completed;
    let mut k: Mat = (**k0).clone();
    for t in 0..=horizon {
        let alpha = schedule.step(t);
        let gain = Gain::new(k.clone());
        let rho_spectral = plant.closed_loop(&gain)?.rho;
        if rho_spectral >= 1.0 || !rho_spectral.is_finite() {
            iterates.push(IterateRecord {
                t,
                k,
                j: f64::INFINITY,
                grad_norm: f64::NAN,
                alpha,
                rho_spectral,
                stabilizing: false,
            });
            status = RunStatus::LeftFeasibleSet(t);
            break;
        }
        let res = hinf::hinf_norm(plant, &gain, &opts.hinf)?;
        if res.value > opts.divergence_cap {
            iterates.push(IterateRecord {
                t,
                k,
                j: res.value,
                grad_norm: f64::NAN,
                alpha,
                rho_spectral,
                stabilizing: true,
            });
            status = RunStatus::Diverged(t);
            break;
        }
        let info = subgrad::subgradient_from(plant, &gain, &res)?;
        let next = if t < horizon { Some(&k - &info.g * alpha) } else { None };
        iterates.push(IterateRecord {
            t,
            k,
            j: res.value,
            grad_norm: info.g.norm(),
            alpha,
            rho_spectral,
            stabilizing: true,
        });
        match next {
            Some(n) => k = n,
            None => break,
        }
    }

    let best_index = iterates
        .iter()
        .enumerate()
        .filter(|(_, r)| r.stabilizing && r.j.is_finite())
        .min_by(|a, b| a.1.j.total_cmp(&b.1.j))
        .map(|(i, _)| i)
        .unwrap_or(0);

    let moreau = (opts.log_moreau_every > 0).then(|| {
        let every = opts.log_moreau_every;
        let picks: Vec<&IterateRecord> = iterates
            .iter()
            .filter(|r| r.stabilizing && (r.t % every == 0 || r.t == horizon))
            .collect();
        let cost = HinfCost { plant, opts: opts.hinf.clone() };
        par::map_slice(&picks, |r| MoreauSample {
            t: r.t,
            grad_norm: moreau_gradient_with(&cost, &r.k, rho, &opts.moreau)
                .ok()
                .map(|m| m.grad_norm),
        })
    });

    Ok(RunLog { iterates, status, best_index, moreau })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MoreauEstimate {
    pub rho: f64,
    pub k_hat: Mat,
    /// `rho (K - K_hat)`.
    pub grad: Mat,
    pub grad_norm: f64,
    pub inner_iters: usize,
    /// Last change in the proximal objective between inner iterates.
    pub inner_gap: f64,
}

/// Moreau-envelope gradient of `J` at `K`.
pub fn moreau_gradient(plant: &Plant, k: &Gain, rho: f64, opts: &MoreauOptions) -> Result<MoreauEstimate> {
    moreau_gradient_with(&HinfCost::new(plant), k, rho, opts)
}

/// Halvings tried when an inner step leaves the domain of the objective.
const MAX_STEP_HALVINGS: usize = 60;

/// Approximately solves `min_M f(M) + rho/2 ||M - K||^2` by the subgradient
/// method for strongly convex functions (steps `2 / (mu (i + 2))`, iterate
/// averaging with weights `i + 1`). The returned point never has a larger
/// proximal objective than `K` itself.
pub fn moreau_gradient_with<O: Objective>(obj: &O, k: &Mat, rho: f64, opts: &MoreauOptions) -> Result<MoreauEstimate> {
    if !(rho > opts.m_hat) {
        return Err(Error::RhoTooSmall { rho, m_hat: opts.m_hat });
    }
    let mu = rho - opts.m_hat;
    let prox = |m: &Mat, f: f64| f + 0.5 * rho * (m - k).norm_squared();

    let (f0, g0) = obj.value_and_subgradient(k)?;
    let mut x = k.clone();
    let (mut fx, mut gx) = (f0, g0);
    let mut px = prox(&x, fx);
    let mut best = (x.clone(), px);
    let mut avg = x.clone();
    let mut weight_sum = 1.0;
    let mut gap = f64::INFINITY;
    let mut iters = 0;

    for i in 0..opts.max_iter {
        iters = i + 1;
        let dir = &gx + (&x - k) * rho;
        let mut step = 2.0 / (mu * (i as f64 + 2.0));
        let mut accepted = None;
        for _ in 0..MAX_STEP_HALVINGS {
            let cand = &x - &dir * step;
            match obj.value_and_subgradient(&cand) {
                Ok((f, g)) if f.is_finite() => {
                    accepted = Some((cand, f, g));
                    break;
                }
                Ok(_) | Err(Error::NotStabilizing { .. }) | Err(Error::SingularResolvent { .. }) => step *= 0.5,
                Err(e) => return Err(e),
            }
        }
        let Some((nx, nf, ng)) = accepted else { break };
        x = nx;
        fx = nf;
        gx = ng;
        let p_new = prox(&x, fx);
        gap = (p_new - px).abs();
        px = p_new;
        if px < best.1 {
            best = (x.clone(), px);
        }
        let w = (i + 2) as f64;
        weight_sum += w;
        avg += (&x - &avg) * (w / weight_sum);
        if gap < opts.tol {
            break;
        }
    }

    let mut k_hat = best.0;
    if let Ok(f_avg) = obj.value(&avg) {
        if f_avg.is_finite() && prox(&avg, f_avg) <= best.1 {
            k_hat = avg;
        }
    }
    let grad = (k - &k_hat) * rho;
    let grad_norm = grad.norm();
    Ok(MoreauEstimate { rho, k_hat, grad, grad_norm, inner_iters: iters, inner_gap: gap })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub min_j: f64,
    pub argmin_t: usize,
    pub min_grad_norm: f64,
    pub min_moreau_grad: Option<f64>,
    /// `(eps, first t with running-min Moreau gradient <= eps)`.
    pub steps_to_tolerance: Vec<(f64, Option<usize>)>,
}

/// Running minima of a run; `tolerances` selects the `steps_to_tolerance` table.
pub fn summarize_run(log: &RunLog, tolerances: &[f64]) -> Result<RunSummary> {
    if log.iterates.is_empty() {
        return Err(Error::EmptyLog);
    }
    let (argmin, min_j) = log
        .iterates
        .iter()
        .enumerate()
        .filter(|(_, r)| r.j.is_finite())
        .fold((0, f64::INFINITY), |acc, (i, r)| if r.j <= acc.1 { (i, r.j) } else { acc });
    let min_grad_norm = log
        .iterates
        .iter()
        .map(|r| r.grad_norm)
        .filter(|g| g.is_finite())
        .fold(f64::INFINITY, f64::min);
    let samples: Vec<(usize, f64)> = log
        .moreau
        .iter()
        .flatten()
        .filter_map(|s| s.grad_norm.map(|g| (s.t, g)))
        .collect();
    let running = running_min(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
    let min_moreau_grad = running.last().copied();
    let steps_to_tolerance = tolerances
        .iter()
        .map(|&eps| (eps, samples.iter().zip(&running).find(|(_, &m)| m <= eps).map(|(s, _)| s.0)))
        .collect();
    Ok(RunSummary {
        min_j,
        argmin_t: log.iterates[argmin].t,
        min_grad_norm,
        min_moreau_grad,
        steps_to_tolerance,
    })
}

/// Prefix minima.
pub fn running_min(xs: &[f64]) -> Vec<f64> {
    xs.iter()
        .scan(f64::INFINITY, |m, &x| {
            *m = m.min(x);
            Some(*m)
        })
        .collect()
}
