//! Batched evaluation of `sigma_max(C_K (zI - A_K)^{-1} B_w)` on the unit
//! circle.
//!
//! `A_K` is reduced once to complex Schur form `Q T Q^H`, so each frequency
//! costs one triangular solve with no pivoting decisions. Frequencies are
//! processed [`LANES`] at a time in structure-of-arrays layout, which lets
//! the compiler vectorize across frequencies.

use nalgebra::Schur;
use num_complex::Complex64;

use crate::linalg::{hermitian_lambda_max, to_complex, CMat, Mat};

/// Frequencies evaluated per batch.
pub const LANES: usize = 8;

type Lane = [f64; LANES];

const ZERO: Lane = [0.0; LANES];

/// Reusable buffers for the frequency sweep. Construction does the Schur
/// reduction; evaluation allocates nothing.
#[derive(Clone, Debug)]
pub struct FreqWorkspace {
    n: usize,
    nw: usize,
    nz: usize,
    /// Upper triangle of the Schur factor, row-major.
    t: Vec<Complex64>,
    /// `Q^H B_w`, row-major `n x nw`.
    bt: Vec<Complex64>,
    /// Gram side: `Q^H C_K^T C_K Q` (`n x n`) when `nw <= nz`, else `C_K Q` (`nz x n`).
    side: Vec<Complex64>,
    x_re: Vec<Lane>,
    x_im: Vec<Lane>,
    y_re: Vec<Lane>,
    y_im: Vec<Lane>,
    g: Vec<Complex64>,
    bad: bool,
}

impl FreqWorkspace {
    pub fn new(ak: &Mat, ck: &Mat, bw: &Mat) -> Self {
        let n = ak.nrows();
        let nz = ck.nrows();
        let nw = bw.ncols();
        let finite = ak.iter().chain(ck.iter()).chain(bw.iter()).all(|x| x.is_finite());
        let (q, t) = if n > 0 && finite {
            match Schur::try_new(to_complex(ak), f64::EPSILON, 10_000) {
                Some(s) => s.unpack(),
                None => (CMat::identity(n, n), to_complex(ak)),
            }
        } else {
            (CMat::identity(n, n), to_complex(ak))
        };
        let row_major = |m: &CMat| -> Vec<Complex64> {
            (0..m.nrows()).flat_map(|i| (0..m.ncols()).map(move |j| (i, j))).map(|(i, j)| m[(i, j)]).collect()
        };
        let qh = q.adjoint();
        let bt = &qh * to_complex(bw);
        let ckc = to_complex(ck);
        let side = if nw <= nz { &qh * ckc.adjoint() * &ckc * &q } else { ckc * &q };
        let gd = nw.min(nz);
        let ybuf = if nw <= nz { n * nw } else { nz * nw };
        Self {
            n,
            nw,
            nz,
            t: row_major(&t),
            bt: row_major(&bt),
            side: row_major(&side),
            x_re: vec![ZERO; n * nw],
            x_im: vec![ZERO; n * nw],
            y_re: vec![ZERO; ybuf],
            y_im: vec![ZERO; ybuf],
            g: vec![Complex64::default(); gd * gd],
            bad: !finite,
        }
    }

    /// `sigma_max` at `z = e^{jw}`, or `None` if `zI - A_K` is numerically singular.
    pub fn sigma_max(&mut self, omega: f64) -> Option<f64> {
        self.sigma_max_at(Complex64::new(omega.cos(), omega.sin()))
    }

    pub fn sigma_max_at(&mut self, z: Complex64) -> Option<f64> {
        let mut out = [0.0];
        self.sigma_max_batch(&[z], &mut out).then_some(out[0])
    }

    /// Fills `out[i] = sigma_max(z[i])`. Returns false if any resolvent is
    /// numerically singular (the corresponding entries are then unspecified).
    pub fn sigma_max_batch(&mut self, zs: &[Complex64], out: &mut [f64]) -> bool {
        assert_eq!(zs.len(), out.len());
        if self.bad {
            return false;
        }
        let mut ok = true;
        for (zc, oc) in zs.chunks(LANES).zip(out.chunks_mut(LANES)) {
            let mut zr = ZERO;
            let mut zi = ZERO;
            for l in 0..LANES {
                let z = zc[l.min(zc.len() - 1)];
                zr[l] = z.re;
                zi[l] = z.im;
            }
            let mut res = ZERO;
            ok &= self.eval_lanes(&zr, &zi, &mut res);
            oc.copy_from_slice(&res[..oc.len()]);
        }
        ok
    }

    fn eval_lanes(&mut self, zr: &Lane, zi: &Lane, res: &mut Lane) -> bool {
        let (n, nw, nz) = (self.n, self.nw, self.nz);
        let mut ok = true;
        // Back substitution for (zI - T) X = Q^H B_w.
        for i in (0..n).rev() {
            let tii = self.t[i * n + i];
            let mut inv_re = ZERO;
            let mut inv_im = ZERO;
            for l in 0..LANES {
                let dr = zr[l] - tii.re;
                let di = zi[l] - tii.im;
                let m2 = dr * dr + di * di;
                ok &= m2 > 1e-280;
                let s = 1.0 / m2;
                inv_re[l] = dr * s;
                inv_im[l] = -di * s;
            }
            for c in 0..nw {
                let b = self.bt[i * nw + c];
                let mut ar = [b.re; LANES];
                let mut ai = [b.im; LANES];
                for k in (i + 1)..n {
                    let tik = self.t[i * n + k];
                    let xr = &self.x_re[k * nw + c];
                    let xi = &self.x_im[k * nw + c];
                    for l in 0..LANES {
                        ar[l] += tik.re * xr[l] - tik.im * xi[l];
                        ai[l] += tik.re * xi[l] + tik.im * xr[l];
                    }
                }
                let xr = &mut self.x_re[i * nw + c];
                let xi = &mut self.x_im[i * nw + c];
                for l in 0..LANES {
                    xr[l] = ar[l] * inv_re[l] - ai[l] * inv_im[l];
                    xi[l] = ar[l] * inv_im[l] + ai[l] * inv_re[l];
                }
            }
        }
        if nw <= nz {
            self.gram_input_side(res);
        } else {
            self.gram_output_side(res);
        }
        for r in res.iter_mut() {
            *r = r.max(0.0).sqrt();
        }
        ok
    }

    /// `lambda_max(X^H M X)` with `M = Q^H C_K^T C_K Q`.
    fn gram_input_side(&mut self, res: &mut Lane) {
        let (n, nw) = (self.n, self.nw);
        for k in 0..n {
            for c in 0..nw {
                let mut ar = ZERO;
                let mut ai = ZERO;
                for j in 0..n {
                    let m = self.side[k * n + j];
                    let xr = &self.x_re[j * nw + c];
                    let xi = &self.x_im[j * nw + c];
                    for l in 0..LANES {
                        ar[l] += m.re * xr[l] - m.im * xi[l];
                        ai[l] += m.re * xi[l] + m.im * xr[l];
                    }
                }
                self.y_re[k * nw + c] = ar;
                self.y_im[k * nw + c] = ai;
            }
        }
        // G[a][b] = sum_k conj(X[k][a]) Y[k][b]
        let entry = |s: &Self, a: usize, b: usize| -> (Lane, Lane) {
            let mut gr = ZERO;
            let mut gi = ZERO;
            for k in 0..n {
                let (xr, xi) = (&s.x_re[k * nw + a], &s.x_im[k * nw + a]);
                let (yr, yi) = (&s.y_re[k * nw + b], &s.y_im[k * nw + b]);
                for l in 0..LANES {
                    gr[l] += xr[l] * yr[l] + xi[l] * yi[l];
                    gi[l] += xr[l] * yi[l] - xi[l] * yr[l];
                }
            }
            (gr, gi)
        };
        self.finish_gram(nw, entry, res);
    }

    /// `lambda_max(T T^H)` with `T = C_K Q X`.
    fn gram_output_side(&mut self, res: &mut Lane) {
        let (n, nw, nz) = (self.n, self.nw, self.nz);
        for i in 0..nz {
            for c in 0..nw {
                let mut ar = ZERO;
                let mut ai = ZERO;
                for k in 0..n {
                    let m = self.side[i * n + k];
                    let xr = &self.x_re[k * nw + c];
                    let xi = &self.x_im[k * nw + c];
                    for l in 0..LANES {
                        ar[l] += m.re * xr[l] - m.im * xi[l];
                        ai[l] += m.re * xi[l] + m.im * xr[l];
                    }
                }
                self.y_re[i * nw + c] = ar;
                self.y_im[i * nw + c] = ai;
            }
        }
        // G[a][b] = sum_c T[a][c] conj(T[b][c])
        let entry = |s: &Self, a: usize, b: usize| -> (Lane, Lane) {
            let mut gr = ZERO;
            let mut gi = ZERO;
            for c in 0..nw {
                let (ar, ai) = (&s.y_re[a * nw + c], &s.y_im[a * nw + c]);
                let (br, bi) = (&s.y_re[b * nw + c], &s.y_im[b * nw + c]);
                for l in 0..LANES {
                    gr[l] += ar[l] * br[l] + ai[l] * bi[l];
                    gi[l] += ai[l] * br[l] - ar[l] * bi[l];
                }
            }
            (gr, gi)
        };
        self.finish_gram(nz, entry, res);
    }

    /// Largest eigenvalue per lane of the Hermitian `d x d` matrix whose
    /// entries `entry(a, b)` (for `a <= b`) supplies.
    fn finish_gram<F: Fn(&Self, usize, usize) -> (Lane, Lane)>(&mut self, d: usize, entry: F, res: &mut Lane) {
        match d {
            0 => *res = ZERO,
            1 => *res = entry(self, 0, 0).0,
            2 => {
                let (a, _) = entry(self, 0, 0);
                let (dd, _) = entry(self, 1, 1);
                let (br, bi) = entry(self, 0, 1);
                for l in 0..LANES {
                    let half = 0.5 * (a[l] - dd[l]);
                    res[l] = 0.5 * (a[l] + dd[l]) + (half * half + br[l] * br[l] + bi[l] * bi[l]).sqrt();
                }
            }
            _ => {
                let mut lanes = vec![(ZERO, ZERO); d * d];
                for a in 0..d {
                    for b in a..d {
                        lanes[a * d + b] = entry(self, a, b);
                    }
                }
                for l in 0..LANES {
                    for a in 0..d {
                        for b in a..d {
                            let (re, im) = (&lanes[a * d + b].0, &lanes[a * d + b].1);
                            let v = Complex64::new(re[l], im[l]);
                            self.g[a * d + b] = v;
                            self.g[b * d + a] = v.conj();
                        }
                        self.g[a * d + a].im = 0.0;
                    }
                    res[l] = hermitian_lambda_max(&mut self.g, d);
                }
            }
        }
    }
}
