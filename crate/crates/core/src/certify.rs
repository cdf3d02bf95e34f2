//! Bounded-real certificates: the complex-to-real lifting `psi_map`, the
//! bounded-real matrix `Lambda(K, gamma, P)`, Riccati fixed-point feasibility,
//! the change of variables `(K, gamma, P) -> (gamma, K X, X)` and the
//! corresponding linear matrix inequality.

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};
use crate::plant::{Gain, Plant};

/// Eigenvalue tolerance for nonstrict PSD/NSD certificates.
pub const PSD_TOL: f64 = 1e-9;
/// Tolerance on `lambda_max(Lambda)` accepted from the Riccati iteration.
pub const LAMBDA_TOL: f64 = 1e-8;

/// Real symmetric lifting of a complex `q x r` matrix, size `2(q + r)`.
///
/// Its eigenvalues are `+-sigma_i(X)`, each twice, so
/// `sigma^2 I >= X^H X` iff `sigma I >= psi_map(X)`.
pub fn psi_map(x: &CMat) -> Mat {
    let (q, r) = x.shape();
    let m = q + r;
    let re = x.map(|z| z.re);
    let im = x.map(|z| z.im);
    let mut out = Mat::zeros(2 * m, 2 * m);
    // Diagonal blocks: [[0, Re^T], [Re, 0]].
    for off in [0, m] {
        out.view_mut((off, off + r), (r, q)).copy_from(&re.transpose());
        out.view_mut((off + r, off), (q, r)).copy_from(&re);
    }
    // Upper-right block: [[0, Im^T], [-Im, 0]].
    out.view_mut((0, m + r), (r, q)).copy_from(&im.transpose());
    out.view_mut((r, m), (q, r)).copy_from(&(-&im));
    // Lower-left block: [[0, -Im^T], [Im, 0]].
    out.view_mut((m, r), (r, q)).copy_from(&(-im.transpose()));
    out.view_mut((m + r, 0), (q, r)).copy_from(&im);
    out
}

/// `Lambda(K, gamma, P)`; nonpositive iff `(K, gamma, P)` certifies `J(K) <= gamma`.
///
/// Built for a general `B_w` as
/// `[[A_K^T P A_K - P + C_K^T C_K, A_K^T P B_w], [B_w^T P A_K, B_w^T P B_w - gamma^2 I]]`,
/// which reduces to the familiar `2 n_x` form when `B_w = I`.
pub fn lambda_matrix(plant: &Plant, k: &Gain, gamma: f64, p: &Mat) -> Result<Mat> {
    let d = plant.dims();
    if p.nrows() != d.nx || p.ncols() != d.nx {
        return Err(Error::DimensionMismatch(format!("P is {}x{}, expected {}x{}", p.nrows(), p.ncols(), d.nx, d.nx)));
    }
    let a_k = plant.closed_loop_a(k)?;
    let c_k = plant.performance_output(k)?;
    let bw = plant.bw();
    let pa = p * &a_k;
    let top_left = a_k.transpose() * &pa - p + c_k.transpose() * &c_k;
    let top_right = pa.transpose() * bw;
    let bottom = bw.transpose() * p * bw - Mat::identity(d.nw, d.nw) * (gamma * gamma);
    let n = d.nx + d.nw;
    let mut out = Mat::zeros(n, n);
    out.view_mut((0, 0), (d.nx, d.nx)).copy_from(&top_left);
    out.view_mut((0, d.nx), (d.nx, d.nw)).copy_from(&top_right);
    out.view_mut((d.nx, 0), (d.nw, d.nx)).copy_from(&top_right.transpose());
    out.view_mut((d.nx, d.nx), (d.nw, d.nw)).copy_from(&bottom);
    Ok(linalg::symmetrize(&out))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RiccatiOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self { max_iter: 10_000, tol: 1e-11 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasibleReason {
    /// `gamma^2 I - B_w^T P B_w` stopped being positive definite.
    LostDefiniteness,
    MaxIterations,
    /// Converged, but `lambda_max(Lambda)` exceeded the tolerance.
    CertificateRejected,
}

#[derive(Clone, Debug, PartialEq)]
pub enum RiccatiOutcome {
    Feasible { p: Mat, iterations: usize, lambda_max: f64 },
    Infeasible { iterations: usize, reason: InfeasibleReason },
}

impl RiccatiOutcome {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Self::Feasible { .. })
    }

    pub fn iterations(&self) -> usize {
        match self {
            Self::Feasible { iterations, .. } | Self::Infeasible { iterations, .. } => *iterations,
        }
    }
}

/// The bounded-real Riccati recursion started from `P_0 = 0`:
/// `P+ = A_K^T P A_K + A_K^T P B_w (gamma^2 I - B_w^T P B_w)^{-1} B_w^T P A_K + C_K^T C_K`.
///
/// Yields successive iterates `P_1, P_2, ...`; yields an error item once the
/// inner matrix loses positive definiteness.
pub struct RiccatiIteration {
    a_k: Mat,
    bw: Mat,
    ctc: Mat,
    gamma_sq: f64,
    p: Mat,
    lost: bool,
}

impl RiccatiIteration {
    pub fn new(plant: &Plant, k: &Gain, gamma: f64) -> Result<Self> {
        let a_k = plant.closed_loop_a(k)?;
        let c_k = plant.performance_output(k)?;
        let nx = plant.dims().nx;
        Ok(Self {
            a_k,
            bw: plant.bw().clone(),
            ctc: c_k.transpose() * c_k,
            gamma_sq: gamma * gamma,
            p: Mat::zeros(nx, nx),
            lost: false,
        })
    }

    pub fn current(&self) -> &Mat {
        &self.p
    }
}

impl Iterator for RiccatiIteration {
    type Item = std::result::Result<Mat, InfeasibleReason>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.lost {
            return None;
        }
        let nw = self.bw.ncols();
        let pbw = &self.p * &self.bw;
        let mut s = Mat::identity(nw, nw) * self.gamma_sq - self.bw.transpose() * &pbw;
        s = linalg::symmetrize(&s);
        let margin = s.clone() - Mat::identity(nw, nw) * (1e-12 * self.gamma_sq);
        if Cholesky::new(margin).is_none() {
            self.lost = true;
            return Some(Err(InfeasibleReason::LostDefiniteness));
        }
        let chol = Cholesky::new(s)?;
        let bpa = pbw.transpose() * &self.a_k;
        let next = self.a_k.transpose() * &self.p * &self.a_k + bpa.transpose() * chol.solve(&bpa) + &self.ctc;
        self.p = linalg::symmetrize(&next);
        Some(Ok(self.p.clone()))
    }
}

/// Constructive `gamma`-feasibility test for `J(K) <= gamma`.
pub fn riccati_fixed_point(plant: &Plant, k: &Gain, gamma: f64, opts: &RiccatiOptions) -> Result<RiccatiOutcome> {
    if gamma <= 0.0 {
        return Err(Error::GammaNonPositive(gamma));
    }
    let rho = crate::plant::spectral_radius(&plant.closed_loop_a(k)?)?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizing { spectral_radius: rho });
    }
    let mut iter = RiccatiIteration::new(plant, k, gamma)?;
    let mut prev = iter.current().clone();
    for i in 1..=opts.max_iter {
        let p = match iter.next() {
            Some(Ok(p)) => p,
            Some(Err(reason)) => return Ok(RiccatiOutcome::Infeasible { iterations: i, reason }),
            None => return Ok(RiccatiOutcome::Infeasible { iterations: i, reason: InfeasibleReason::LostDefiniteness }),
        };
        let step = (&p - &prev).norm();
        let converged = step <= opts.tol * (1.0 + prev.norm());
        prev = p;
        if converged {
            // The limit must also keep the inner matrix positive definite.
            if let Some(Err(reason)) = iter.next() {
                return Ok(RiccatiOutcome::Infeasible { iterations: i + 1, reason });
            }
            let polished = newton_polish(&iter, &prev).filter(|p| {
                let l = lambda_matrix(plant, k, gamma, p).map(|m| linalg::lambda_max_sym(&m));
                matches!(l, Ok(l) if l <= LAMBDA_TOL)
            });
            let prev = polished.unwrap_or(prev);
            let lambda_max = linalg::lambda_max_sym(&lambda_matrix(plant, k, gamma, &prev)?);
            if lambda_max <= LAMBDA_TOL {
                return Ok(RiccatiOutcome::Feasible { p: prev, iterations: i, lambda_max });
            }
            return Ok(RiccatiOutcome::Infeasible { iterations: i, reason: InfeasibleReason::CertificateRejected });
        }
    }
    Ok(RiccatiOutcome::Infeasible { iterations: opts.max_iter, reason: InfeasibleReason::MaxIterations })
}

/// Same test as [`riccati_fixed_point`], evaluated by doubling: step `j`
/// produces the iterate `P_{2^j}` of the same recursion, so `opts.max_iter`
/// iterations cost about `log2(max_iter)` steps. Used where `gamma` sits very
/// close to `J(K)` and the plain recursion converges slowly.
///
/// The recursion is `P+ = A^T P (I + G P)^{-1} A + H` with `G = -B_w B_w^T / gamma^2`
/// and `H = C_K^T C_K`; the doubling updates
/// `A' = A (I + G H)^{-1} A`, `G' = G + A (I + G H)^{-1} G A^T`,
/// `H' = H + A^T H (I + G H)^{-1} A` keep `H = P_{2^j}`.
pub fn riccati_doubling(plant: &Plant, k: &Gain, gamma: f64, opts: &RiccatiOptions) -> Result<RiccatiOutcome> {
    if gamma <= 0.0 {
        return Err(Error::GammaNonPositive(gamma));
    }
    let rho = crate::plant::spectral_radius(&plant.closed_loop_a(k)?)?;
    if rho >= 1.0 {
        return Err(Error::NotStabilizing { spectral_radius: rho });
    }
    let it = RiccatiIteration::new(plant, k, gamma)?;
    let nx = it.a_k.nrows();
    let nw = it.bw.ncols();
    let eye = Mat::identity(nx, nx);
    let definite = |p: &Mat| {
        let s = linalg::symmetrize(&(Mat::identity(nw, nw) * it.gamma_sq - it.bw.transpose() * p * &it.bw));
        Cholesky::new(s - Mat::identity(nw, nw) * (1e-12 * it.gamma_sq)).is_some()
    };
    let (mut a, mut g, mut h) = (it.a_k.clone(), -(&it.bw * it.bw.transpose()) / it.gamma_sq, it.ctc.clone());
    let max_steps = (opts.max_iter.max(2) as f64).log2().ceil() as usize;
    let mut count = 1usize;
    for _ in 0..max_steps {
        if !definite(&h) {
            return Ok(RiccatiOutcome::Infeasible { iterations: count, reason: InfeasibleReason::LostDefiniteness });
        }
        let lu = (&eye + &g * &h).lu();
        let (Some(ia), Some(ig)) = (lu.solve(&a), lu.solve(&g)) else {
            return Ok(RiccatiOutcome::Infeasible { iterations: count, reason: InfeasibleReason::LostDefiniteness });
        };
        let h_next = linalg::symmetrize(&(&h + a.transpose() * &h * &ia));
        let g_next = linalg::symmetrize(&(&g + &a * ig * a.transpose()));
        a = &a * ia;
        g = g_next;
        count = count.saturating_mul(2);
        let step = (&h_next - &h).norm();
        let converged = step <= opts.tol * (1.0 + h.norm());
        h = h_next;
        if !h.iter().all(|v| v.is_finite()) {
            break;
        }
        if converged {
            if !definite(&h) {
                return Ok(RiccatiOutcome::Infeasible { iterations: count, reason: InfeasibleReason::LostDefiniteness });
            }
            let p = newton_polish(&it, &h).unwrap_or(h);
            let lambda_max = linalg::lambda_max_sym(&lambda_matrix(plant, k, gamma, &p)?);
            if lambda_max <= LAMBDA_TOL {
                return Ok(RiccatiOutcome::Feasible { p, iterations: count, lambda_max });
            }
            return Ok(RiccatiOutcome::Infeasible { iterations: count, reason: InfeasibleReason::CertificateRejected });
        }
    }
    Ok(RiccatiOutcome::Infeasible { iterations: count, reason: InfeasibleReason::MaxIterations })
}

/// Newton refinement of a converged Riccati iterate.
///
/// The iterates increase towards the fixed point, so the last one trails it by
/// roughly one step, which shows up as a positive eigenvalue of `Lambda`. Each
/// Newton step solves the Stein equation `F^T X F - X = -R(P)` with
/// `F = A_K + B_w S^{-1} B_w^T P A_K` and `R(P)` the Riccati residual.
fn newton_polish(it: &RiccatiIteration, p0: &Mat) -> Option<Mat> {
    let nx = p0.nrows();
    let nw = it.bw.ncols();
    let mut p = p0.clone();
    let mut best: Option<(f64, Mat)> = None;
    for _ in 0..4 {
        let pbw = &p * &it.bw;
        let s = linalg::symmetrize(&(Mat::identity(nw, nw) * it.gamma_sq - it.bw.transpose() * &pbw));
        let chol = Cholesky::new(s)?;
        let bpa = pbw.transpose() * &it.a_k;
        let gain = chol.solve(&bpa);
        let resid = it.a_k.transpose() * &p * &it.a_k + bpa.transpose() * &gain + &it.ctc - &p;
        let rn = resid.norm();
        if best.as_ref().is_none_or(|(b, _)| rn < *b) {
            best = Some((rn, p.clone()));
        }
        if rn <= f64::EPSILON * (1.0 + p.norm()) {
            break;
        }
        let f = &it.a_k + &it.bw * gain;
        let ft = f.transpose();
        let lhs = ft.kronecker(&ft) - Mat::identity(nx * nx, nx * nx);
        let rhs = -linalg::symmetrize(&resid);
        let x = lhs.lu().solve(&Mat::from_column_slice(nx * nx, 1, rhs.as_slice()))?;
        p = linalg::symmetrize(&(p + Mat::from_column_slice(nx, nx, x.as_slice())));
    }
    best.map(|(_, p)| p)
}

/// `(K, gamma, P)` with a Lyapunov certificate `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedTriple {
    pub k: Mat,
    pub gamma: f64,
    pub p: Mat,
}

/// `(gamma, Y, X)` in the convex parameterization.
#[derive(Clone, Debug, PartialEq)]
pub struct CvxTriple {
    pub gamma: f64,
    pub y: Mat,
    pub x: Mat,
}

impl LiftedTriple {
    /// `P > 0` and `lambda_max(Lambda) <= PSD_TOL`.
    pub fn is_member(&self, plant: &Plant) -> Result<bool> {
        let pd = linalg::lambda_min_sym(&self.p) > 0.0;
        let lam = linalg::lambda_max_sym(&lambda_matrix(plant, &Gain::new(self.k.clone()), self.gamma, &self.p)?);
        Ok(pd && lam <= PSD_TOL)
    }
}

impl CvxTriple {
    /// `X > 0` and `lambda_max(LMI) <= PSD_TOL`.
    pub fn is_member(&self, plant: &Plant) -> Result<bool> {
        let pd = linalg::lambda_min_sym(&self.x) > 0.0;
        let lam = linalg::lambda_max_sym(&lmi_matrix(plant, self.gamma, &self.y, &self.x)?);
        Ok(pd && lam <= PSD_TOL)
    }
}

fn require_state_feedback(plant: &Plant) -> Result<()> {
    if plant.is_state_feedback() {
        Ok(())
    } else {
        Err(Error::NotStateFeedback)
    }
}

fn require_pd_inverse(p: &Mat) -> Result<Mat> {
    if p.nrows() == 0 || linalg::lambda_min_sym(p) <= 0.0 {
        return Err(Error::PNotPD);
    }
    Cholesky::new(linalg::symmetrize(p)).map(|c| c.inverse()).ok_or(Error::PNotPD)
}

/// `(K, gamma, P) -> (gamma, K X, X)` with `X = (P / gamma)^{-1}`.
pub fn pi_map(triple: &LiftedTriple) -> Result<CvxTriple> {
    if triple.gamma <= 0.0 {
        return Err(Error::GammaNonPositive(triple.gamma));
    }
    if triple.k.ncols() != triple.p.nrows() {
        return Err(Error::NotStateFeedback);
    }
    let x = linalg::symmetrize(&(require_pd_inverse(&triple.p)? * triple.gamma));
    let y = &triple.k * &x;
    Ok(CvxTriple { gamma: triple.gamma, y, x })
}

/// Inverse change of variables: `K = Y X^{-1}`, `P = gamma X^{-1}`.
pub fn pi_inverse(cvx: &CvxTriple) -> Result<LiftedTriple> {
    if cvx.gamma <= 0.0 {
        return Err(Error::GammaNonPositive(cvx.gamma));
    }
    let x_inv = require_pd_inverse(&cvx.x)?;
    Ok(LiftedTriple { k: &cvx.y * &x_inv, gamma: cvx.gamma, p: linalg::symmetrize(&(x_inv * cvx.gamma)) })
}

/// The 5x5 block matrix `LMI(gamma, Y, X)` (state feedback only):
///
/// ```text
/// [ -X        0       X          (AX+BY)^T  Y^T       ]
/// [  0       -gI      0          Bw^T       0         ]
/// [  X        0      -g Q^{-1}   0          0         ]
/// [  AX+BY    Bw      0         -X          0         ]
/// [  Y        0       0          0         -g R^{-1}  ]
/// ```
pub fn lmi_matrix(plant: &Plant, gamma: f64, y: &Mat, x: &Mat) -> Result<Mat> {
    require_state_feedback(plant)?;
    let d = plant.dims();
    if x.shape() != (d.nx, d.nx) || y.shape() != (d.nu, d.nx) {
        return Err(Error::DimensionMismatch(format!(
            "X is {}x{}, Y is {}x{}; expected {nx}x{nx} and {nu}x{nx}",
            x.nrows(),
            x.ncols(),
            y.nrows(),
            y.ncols(),
            nx = d.nx,
            nu = d.nu
        )));
    }
    let q_inv = plant.q().clone().try_inverse().ok_or(Error::SolverError("Q is singular".into()))?;
    let r_inv = plant.r().clone().try_inverse().ok_or(Error::SolverError("R is singular".into()))?;
    let closed = plant.a() * x + plant.b() * y;
    let sizes = [d.nx, d.nw, d.nx, d.nx, d.nu];
    let offs: Vec<usize> = sizes.iter().scan(0, |acc, s| {
        let o = *acc;
        *acc += s;
        Some(o)
    }).collect();
    let n: usize = sizes.iter().sum();
    let mut out = Mat::zeros(n, n);
    let mut put = |bi: usize, bj: usize, m: &Mat| {
        out.view_mut((offs[bi], offs[bj]), (sizes[bi], sizes[bj])).copy_from(m);
        if bi != bj {
            out.view_mut((offs[bj], offs[bi]), (sizes[bj], sizes[bi])).copy_from(&m.transpose());
        }
    };
    put(0, 0, &(-x));
    put(0, 2, x);
    put(0, 3, &closed.transpose());
    put(0, 4, &y.transpose());
    put(1, 1, &(-Mat::identity(d.nw, d.nw) * gamma));
    put(1, 3, &plant.bw().transpose());
    put(2, 2, &(-q_inv * gamma));
    put(3, 3, &(-x));
    put(4, 4, &(-r_inv * gamma));
    Ok(out)
}
