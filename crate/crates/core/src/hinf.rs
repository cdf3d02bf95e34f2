//! H-infinity norm oracle: frequency sweep with golden-section refinement,
//! active-frequency bookkeeping, and a Riccati-based bisection cross-check.

use std::f64::consts::PI;

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::certify::{self, RiccatiOptions};
use crate::error::{Error, Result};
use crate::freq::FreqWorkspace;
use crate::linalg::{CMat, CVec};
use crate::plant::{self, Gain, Plant};

/// Largest singular value of a transfer matrix with its singular vectors:
/// `T u = sigma v`.
#[derive(Clone, Debug, PartialEq)]
pub struct SingularTriple {
    pub sigma: f64,
    /// Right singular vector (disturbance side, length `n_w`).
    pub u: CVec,
    /// Left singular vector (performance side, length `n_x + n_u`).
    pub v: CVec,
}

impl SingularTriple {
    pub fn conj(&self) -> Self {
        Self { sigma: self.sigma, u: self.u.conjugate(), v: self.v.conjugate() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ActiveFrequency {
    pub omega: f64,
    pub triple: SingularTriple,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HinfResult {
    pub value: f64,
    /// Sorted ascending in `omega`.
    pub active: Vec<ActiveFrequency>,
    pub grid_size: usize,
    pub refinement_tol: f64,
    /// `sigma(w)` is constant over the grid; `active` then holds `w = 0` only.
    pub flat: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HinfOptions {
    pub grid_size: usize,
    pub refine_tol: f64,
    pub delta_active: f64,
}

impl Default for HinfOptions {
    fn default() -> Self {
        Self { grid_size: 4096, refine_tol: 1e-10, delta_active: 1e-6 }
    }
}

/// Relative spread below which the frequency response counts as flat.
const FLAT_RTOL: f64 = 1e-12;
/// Refined peaks closer than this in omega are treated as one.
const MERGE_TOL: f64 = 1e-7;
/// Upper limit on refined local maxima per evaluation.
const MAX_REFINED_PEAKS: usize = 64;

/// Top singular triple of a complex matrix. The phase is fixed so that the
/// first nonzero entry of `u` is real and nonnegative.
pub fn sigma_max_triple(t: &CMat) -> Result<SingularTriple> {
    let mut all = top_singular_triples(t, 0.0)?;
    Ok(all.swap_remove(0))
}

/// All singular triples whose singular value lies within `rel_gap * sigma_max`
/// of the top one, largest first. Each is phase-normalized like
/// [`sigma_max_triple`].
pub fn top_singular_triples(t: &CMat, rel_gap: f64) -> Result<Vec<SingularTriple>> {
    let (nz, nw) = t.shape();
    if t.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(Error::SolverError("non-finite transfer matrix".into()));
    }
    if nz == 0 || nw == 0 {
        return Err(Error::DimensionMismatch("empty transfer matrix".into()));
    }
    let svd = t.clone().svd(true, true);
    let (Some(left), Some(right_h)) = (svd.u.as_ref(), svd.v_t.as_ref()) else {
        return Err(Error::SolverError("SVD did not return singular vectors".into()));
    };
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let top = svd.singular_values[order[0]];
    if top == 0.0 {
        // Any unit pair is a valid triple; pick canonical basis vectors.
        let e = |n: usize| DVector::from_fn(n, |i, _| Complex64::new(if i == 0 { 1.0 } else { 0.0 }, 0.0));
        return Ok(vec![SingularTriple { sigma: 0.0, u: e(nw), v: e(nz) }]);
    }
    let mut out = Vec::new();
    for idx in order {
        let sigma = svd.singular_values[idx];
        if sigma < top * (1.0 - rel_gap) {
            break;
        }
        let mut v: CVec = left.column(idx).into_owned();
        let mut u: CVec = right_h.row(idx).adjoint();
        let unorm = u.norm();
        u /= Complex64::new(unorm, 0.0);
        let vnorm = v.norm();
        v /= Complex64::new(vnorm, 0.0);
        normalize_phase(&mut u, &mut v);
        // Re-derive v from T u to make Re(v^H T u) = sigma hold tightly.
        let tu = t * &u;
        let tun = tu.norm();
        if tun > 0.0 {
            v = tu / Complex64::new(tun, 0.0);
        }
        out.push(SingularTriple { sigma, u, v });
    }
    Ok(out)
}

fn normalize_phase(u: &mut CVec, v: &mut CVec) {
    let scale = u.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if let Some(first) = u.iter().find(|z| z.norm() > 1e-12 * scale).copied() {
        let rot = first.conj() / first.norm();
        *u *= rot;
        *v *= rot;
    }
}

fn golden_section_max<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    if fc >= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

thread_local! {
    /// Grid points `e^{jw_i}` of the most recent sweep size on this thread.
    static UNIT_CIRCLE: std::cell::RefCell<(usize, Vec<Complex64>)> = const { std::cell::RefCell::new((0, Vec::new())) };
}

/// Evaluates the sweep values `sigma(2 pi i / n)` for `i = 0..n`, exploiting
/// conjugate symmetry `sigma(2 pi - w) = sigma(w)`.
fn sweep(ws: &mut FreqWorkspace, n: usize) -> Result<Vec<f64>> {
    let half = n / 2;
    let step = 2.0 * PI / n as f64;
    let mut vals = vec![0.0; n];
    let ok = UNIT_CIRCLE.with(|cache| {
        let mut cache = cache.borrow_mut();
        if cache.0 != n {
            *cache = (n, (0..=half).map(|i| Complex64::from_polar(1.0, step * i as f64)).collect());
        }
        ws.sigma_max_batch(&cache.1, &mut vals[..=half])
    });
    if !ok {
        let i = (0..=half).find(|&i| ws.sigma_max(step * i as f64).is_none()).unwrap_or(0);
        return Err(Error::SingularResolvent { omega: step * i as f64 });
    }
    for i in (half + 1)..n {
        vals[i] = vals[n - i];
    }
    Ok(vals)
}

/// `J(K) = max_w sigma_max(T_zw(K, w))` with the active frequency set.
pub fn hinf_norm(plant: &Plant, k: &Gain, opts: &HinfOptions) -> Result<HinfResult> {
    let cl = plant.closed_loop(k)?;
    if cl.rho >= 1.0 {
        return Err(Error::NotStabilizing { spectral_radius: cl.rho });
    }
    let n = opts.grid_size.max(8);
    let mut ws = FreqWorkspace::new(&cl.a_k, &cl.c_k, &cl.bw);
    let vals = sweep(&mut ws, n)?;
    let gmax = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gmin = vals.iter().copied().fold(f64::INFINITY, f64::min);
    let triple_at = |omega: f64| -> Result<SingularTriple> {
        sigma_max_triple(&plant::transfer(plant, k, omega)?)
    };

    if gmax - gmin <= FLAT_RTOL * gmax || gmax == 0.0 {
        let triple = triple_at(0.0)?;
        return Ok(HinfResult {
            value: triple.sigma,
            active: vec![ActiveFrequency { omega: 0.0, triple }],
            grid_size: n,
            refinement_tol: opts.refine_tol,
            flat: true,
        });
    }

    let half = n / 2;
    let step = 2.0 * PI / n as f64;
    let mut peaks: Vec<usize> = (0..=half)
        .filter(|&i| {
            let prev = vals[(i + n - 1) % n];
            let next = vals[(i + 1) % n];
            vals[i] >= prev && vals[i] > next || vals[i] > prev && vals[i] >= next
        })
        .collect();
    if peaks.len() > MAX_REFINED_PEAKS {
        peaks.sort_by(|&a, &b| vals[b].total_cmp(&vals[a]));
        peaks.truncate(MAX_REFINED_PEAKS);
        peaks.sort_unstable();
    }

    let mut candidates: Vec<ActiveFrequency> = Vec::with_capacity(2 * peaks.len());
    for &i in &peaks {
        let center = step * i as f64;
        let (w_ref, s_ref) = golden_section_max(
            |w| ws.sigma_max(w).unwrap_or(f64::INFINITY),
            center - step,
            center + step,
            opts.refine_tol,
        );
        // Peaks are quadratic, so sigma cannot resolve omega below ~sqrt(eps);
        // keep the grid point unless refinement gains more than rounding.
        let mut omega = if s_ref > vals[i] * (1.0 + 8.0 * f64::EPSILON) { w_ref } else { center };
        if omega.abs() <= opts.refine_tol {
            omega = 0.0;
        }
        let omega = plant::wrap_frequency(omega);
        let triple = triple_at(omega)?;
        let mirrored = (omega - PI).abs() > MERGE_TOL && omega != 0.0;
        if mirrored {
            let conj = triple.conj();
            candidates.push(ActiveFrequency { omega: plant::wrap_frequency(2.0 * PI - omega), triple: conj });
        }
        candidates.push(ActiveFrequency { omega, triple });
    }
    let value = candidates
        .iter()
        .map(|c| c.triple.sigma)
        .fold(gmax, f64::max);
    let threshold = value * (1.0 - opts.delta_active);
    let mut active: Vec<ActiveFrequency> =
        candidates.into_iter().filter(|c| c.triple.sigma >= threshold).collect();
    active.sort_by(|a, b| a.omega.total_cmp(&b.omega));
    active.dedup_by(|a, b| (a.omega - b.omega).abs() <= MERGE_TOL);
    if active.is_empty() {
        // The grid maximum beat every refined peak; fall back to it.
        let i = vals.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).map(|(i, _)| i).unwrap_or(0);
        let omega = step * i as f64;
        let triple = triple_at(omega)?;
        let value = triple.sigma.max(value);
        return Ok(HinfResult {
            value,
            active: vec![ActiveFrequency { omega, triple }],
            grid_size: n,
            refinement_tol: opts.refine_tol,
            flat: false,
        });
    }
    Ok(HinfResult { value, active, grid_size: n, refinement_tol: opts.refine_tol, flat: false })
}

/// Convenience wrapper returning only `J(K)`.
pub fn hinf_value(plant: &Plant, k: &Gain, opts: &HinfOptions) -> Result<f64> {
    hinf_norm(plant, k, opts).map(|r| r.value)
}

/// Options for the Riccati-certified bisection.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BisectionOptions {
    pub tol: f64,
    pub riccati: RiccatiOptions,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self { tol: 1e-8, riccati: RiccatiOptions { max_iter: 1 << 40, ..RiccatiOptions::default() } }
    }
}

/// Bisection on `gamma` using Riccati feasibility (evaluated by doubling) as the
/// `gamma > J(K)` oracle.
pub fn hinf_bisection(plant: &Plant, k: &Gain, tol: f64) -> Result<f64> {
    hinf_bisection_with(plant, k, &BisectionOptions { tol, ..BisectionOptions::default() })
}

pub fn hinf_bisection_with(plant: &Plant, k: &Gain, opts: &BisectionOptions) -> Result<f64> {
    let cl = plant.closed_loop(k)?;
    if cl.rho >= 1.0 {
        return Err(Error::NotStabilizing { spectral_radius: cl.rho });
    }
    let mut ws = FreqWorkspace::new(&cl.a_k, &cl.c_k, &cl.bw);
    let mut lo = ws.sigma_max(0.0).ok_or(Error::SingularResolvent { omega: 0.0 })?;
    let feasible = |gamma: f64| -> Result<bool> {
        Ok(certify::riccati_doubling(plant, k, gamma, &opts.riccati)?.is_feasible())
    };
    let mut hi = 2.0 * lo.max(1e-12);
    while !feasible(hi)? {
        lo = lo.max(hi);
        hi *= 2.0;
        if hi > 1e12 {
            return Err(Error::NoUpperBound);
        }
    }
    while hi - lo > opts.tol * (1.0 + lo) {
        let mid = 0.5 * (lo + hi);
        if feasible(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}
