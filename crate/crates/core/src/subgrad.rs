//! Clarke subgradients of `J` built from active frequencies, and the
//! min-norm element of a finite generator set.
//!
//! `J(K) = max over (w, u, v) of Re[v^H T_zw(K, w) u]`. Each smooth component
//! has gradient
//!
//! ```text
//! grad_K = Re(c b^T),  b = C Phi B_w u,  c = R^{1/2} conj(v_2) + B^T Phi^T C_K^T conj(v)
//! ```
//!
//! with `Phi = (e^{jw} I - A_K)^{-1}` and `v_2` the lower `n_u` block of `v`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hinf::{self, HinfOptions, HinfResult, SingularTriple};
use crate::linalg::{self, CVec, Mat};
use crate::plant::{self, Gain, Plant};

/// Tolerance on `| ||u|| - 1 |` for singular-vector inputs.
pub const UNIT_TOL: f64 = 1e-8;
/// Relative gap under which two singular values count as one repeated value.
pub const MULTIPLICITY_RTOL: f64 = 1e-8;
/// Plateau frequencies sampled in `[0, pi]` when the response is flat.
const FLAT_SAMPLES: usize = 9;

#[derive(Clone, Debug, PartialEq)]
pub struct SubgradientInfo {
    pub g: Mat,
    pub omega: f64,
    pub triple: SingularTriple,
    pub j_at_k: f64,
}

/// Gradient in `K` of `Re[v^H T_zw(K, w) u]` at fixed `(w, u, v)`.
pub fn phi_gradient(plant: &Plant, k: &Gain, omega: f64, u: &CVec, v: &CVec) -> Result<Mat> {
    let d = plant.dims();
    if u.len() != d.nw || v.len() != d.nz() {
        return Err(Error::DimensionMismatch(format!(
            "singular vectors have lengths {}/{}, expected {}/{}",
            u.len(),
            v.len(),
            d.nw,
            d.nz()
        )));
    }
    for x in [u, v] {
        let norm = x.norm();
        if (norm - 1.0).abs() > UNIT_TOL {
            return Err(Error::NotUnitVector { norm });
        }
    }
    let a_k = plant.closed_loop_a(k)?;
    let c_k = plant.performance_output(k)?;
    let phi = plant::resolvent(&a_k, omega)?;
    let cx = linalg::to_complex;
    let b = cx(plant.c()) * &phi * cx(plant.bw()) * u;
    let v_conj = v.conjugate();
    let v2 = v_conj.rows(d.nx, d.nu).into_owned();
    let c = cx(plant.r_sqrt()) * v2 + cx(&plant.b().transpose()) * phi.transpose() * cx(&c_k.transpose()) * &v_conj;
    Ok(DMatrix::from_fn(d.nu, d.ny, |i, j| (c[i] * b[j]).re))
}

/// Gradient of the smooth component at the smallest active frequency.
pub fn clarke_subgradient(plant: &Plant, k: &Gain) -> Result<SubgradientInfo> {
    clarke_subgradient_with(plant, k, &HinfOptions::default())
}

pub fn clarke_subgradient_with(plant: &Plant, k: &Gain, opts: &HinfOptions) -> Result<SubgradientInfo> {
    let res = hinf::hinf_norm(plant, k, opts)?;
    subgradient_from(plant, k, &res)
}

/// Builds the subgradient from an already computed norm evaluation.
pub fn subgradient_from(plant: &Plant, k: &Gain, res: &HinfResult) -> Result<SubgradientInfo> {
    // `active` is sorted ascending, so the first entry is the tie-break winner.
    let first = res
        .active
        .first()
        .ok_or_else(|| Error::SolverError("empty active set".into()))?;
    let g = phi_gradient(plant, k, first.omega, &first.triple.u, &first.triple.v)?;
    Ok(SubgradientInfo { g, omega: first.omega, triple: first.triple.clone(), j_at_k: res.value })
}

/// Generators of the subdifferential: one gradient per active frequency and
/// per top singular triple (repeated top singular values contribute each).
/// A flat response contributes samples across the whole plateau.
pub fn subdifferential_sample(plant: &Plant, k: &Gain, delta_active: f64) -> Result<Vec<Mat>> {
    let opts = HinfOptions { delta_active, ..HinfOptions::default() };
    let res = hinf::hinf_norm(plant, k, &opts)?;
    let mut omegas: Vec<f64> = res.active.iter().map(|a| a.omega).collect();
    if res.flat {
        omegas = (0..FLAT_SAMPLES).map(|i| PI * i as f64 / (FLAT_SAMPLES - 1) as f64).collect();
    }
    let mut grads = Vec::new();
    for omega in omegas {
        let t = plant::transfer(plant, k, omega)?;
        for triple in hinf::top_singular_triples(&t, MULTIPLICITY_RTOL)? {
            grads.push(phi_gradient(plant, k, omega, &triple.u, &triple.v)?);
        }
    }
    Ok(grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MinNorm {
    pub point: Mat,
    pub norm: f64,
    /// Convex weights over the input list.
    pub weights: Vec<f64>,
}

const WOLFE_GAP_RTOL: f64 = 1e-10;
const WOLFE_MAX_ITER: usize = 10_000;

/// Min-norm point of the convex hull of `grads` (Wolfe's algorithm).
pub fn min_norm_element(grads: &[Mat]) -> Result<MinNorm> {
    let first = grads.first().ok_or(Error::EmptyList)?;
    let shape = first.shape();
    if let Some(bad) = grads.iter().find(|g| g.shape() != shape) {
        return Err(Error::DimensionMismatch(format!(
            "generator shapes {:?} and {:?} differ",
            shape,
            bad.shape()
        )));
    }
    let pts: Vec<DVector<f64>> = grads.iter().map(|g| DVector::from_column_slice(g.as_slice())).collect();
    let weights = wolfe(&pts);
    let mut x = DVector::zeros(pts[0].len());
    for (w, p) in weights.iter().zip(&pts) {
        x.axpy(*w, p, 1.0);
    }
    let norm = x.norm();
    Ok(MinNorm { point: Mat::from_column_slice(shape.0, shape.1, x.as_slice()), norm, weights })
}

fn wolfe(pts: &[DVector<f64>]) -> Vec<f64> {
    let m = pts.len();
    let combine = |set: &[usize], lam: &[f64]| {
        let mut x = DVector::zeros(pts[0].len());
        for (&i, &l) in set.iter().zip(lam) {
            x.axpy(l, &pts[i], 1.0);
        }
        x
    };
    let start = (0..m)
        .min_by(|&a, &b| pts[a].norm_squared().total_cmp(&pts[b].norm_squared()))
        .unwrap_or(0);
    let mut set = vec![start];
    let mut lam = vec![1.0];
    let mut x = pts[start].clone();
    for _ in 0..WOLFE_MAX_ITER {
        let xx = x.norm_squared();
        let (j, xpj) = (0..m)
            .map(|i| (i, x.dot(&pts[i])))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap_or((start, xx));
        if xx - xpj <= WOLFE_GAP_RTOL * (1.0 + xx.sqrt()) || set.contains(&j) {
            break;
        }
        set.push(j);
        lam.push(0.0);
        // Minor cycle: move toward the affine minimizer, dropping points
        // whose weight hits zero.
        loop {
            let mu = affine_min_norm(pts, &set);
            if mu.iter().all(|&v| v > 1e-14) {
                lam = mu;
                break;
            }
            let theta = set
                .iter()
                .enumerate()
                .filter(|&(i, _)| mu[i] <= 1e-14)
                .map(|(i, _)| lam[i] / (lam[i] - mu[i]))
                .fold(1.0_f64, f64::min)
                .clamp(0.0, 1.0);
            for (l, mv) in lam.iter_mut().zip(&mu) {
                *l += theta * (mv - *l);
            }
            let mut keep = 0;
            for i in 0..set.len() {
                if lam[i] > 1e-14 {
                    set[keep] = set[i];
                    lam[keep] = lam[i];
                    keep += 1;
                }
            }
            set.truncate(keep);
            lam.truncate(keep);
            let total: f64 = lam.iter().sum();
            lam.iter_mut().for_each(|l| *l /= total);
            if set.len() <= 1 {
                break;
            }
        }
        x = combine(&set, &lam);
    }
    let mut weights = vec![0.0; m];
    for (&i, &l) in set.iter().zip(&lam) {
        weights[i] += l;
    }
    weights
}

/// Weights minimizing `||sum mu_i p_i||` subject to `sum mu_i = 1` over `set`.
fn affine_min_norm(pts: &[DVector<f64>], set: &[usize]) -> Vec<f64> {
    let s = set.len();
    let mut kkt = DMatrix::zeros(s + 1, s + 1);
    for a in 0..s {
        for b in 0..s {
            kkt[(a, b)] = pts[set[a]].dot(&pts[set[b]]);
        }
        kkt[(a, s)] = 1.0;
        kkt[(s, a)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .or_else(|| kkt.svd(true, true).solve(&rhs, 1e-14).ok())
        .unwrap_or_else(|| {
            let mut x = DVector::zeros(s + 1);
            x[s - 1] = 1.0;
            x
        });
    sol.rows(0, s).iter().copied().collect()
}

/// Central difference `(J(K + hD) - J(K - hD)) / 2h`.
pub fn fd_directional(plant: &Plant, k: &Gain, d: &Mat, h: f64) -> Result<f64> {
    if d.iter().all(|&x| x == 0.0) {
        return Ok(0.0);
    }
    let opts = HinfOptions::default();
    let plus = Gain::new(&**k + d * h);
    let minus = Gain::new(&**k - d * h);
    let jp = hinf::hinf_value(plant, &plus, &opts)?;
    let jm = hinf::hinf_value(plant, &minus, &opts)?;
    Ok((jp - jm) / (2.0 * h))
}

/// A cost that can be evaluated together with one subgradient; lets the
/// optimizers run on `J` or on simple test functions.
pub trait Objective: Sync {
    fn value(&self, k: &Mat) -> Result<f64>;
    fn value_and_subgradient(&self, k: &Mat) -> Result<(f64, Mat)>;
}

/// `J(K)` for a fixed plant.
#[derive(Clone, Debug)]
pub struct HinfCost<'a> {
    pub plant: &'a Plant,
    pub opts: HinfOptions,
}

impl<'a> HinfCost<'a> {
    pub fn new(plant: &'a Plant) -> Self {
        Self { plant, opts: HinfOptions::default() }
    }
}

impl Objective for HinfCost<'_> {
    fn value(&self, k: &Mat) -> Result<f64> {
        hinf::hinf_value(self.plant, &Gain::new(k.clone()), &self.opts)
    }

    fn value_and_subgradient(&self, k: &Mat) -> Result<(f64, Mat)> {
        let info = clarke_subgradient_with(self.plant, &Gain::new(k.clone()), &self.opts)?;
        Ok((info.j_at_k, info.g))
    }
}
