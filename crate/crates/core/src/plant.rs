//! System data, validity checks, closed-loop construction and the builtin
//! benchmark systems.

use std::f64::consts::PI;
use std::ops::Deref;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, CMat, Mat};

/// Relative tolerance for numerical-rank decisions.
pub const RANK_RTOL: f64 = 1e-10;

/// Sizes of the state, input, output and disturbance spaces.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub nx: usize,
    pub nu: usize,
    pub ny: usize,
    pub nw: usize,
}

impl Dims {
    /// Rows of the performance output `z = C_K x`.
    pub fn nz(&self) -> usize {
        self.nx + self.nu
    }
}

/// Discrete-time plant `x+ = A x + B u + B_w w`, `y = C x` with weights `Q`, `R`.
#[derive(Clone, Debug, PartialEq)]
pub struct Plant {
    a: Mat,
    b: Mat,
    bw: Mat,
    c: Mat,
    q: Mat,
    r: Mat,
    q_sqrt: Mat,
    r_sqrt: Mat,
    dims: Dims,
}

/// Row-major JSON layout of a plant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantData {
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    pub b: Vec<Vec<f64>>,
    #[serde(rename = "Bw")]
    pub bw: Vec<Vec<f64>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    pub r: Vec<Vec<f64>>,
}

impl Plant {
    pub fn new(a: Mat, b: Mat, bw: Mat, c: Mat, q: Mat, r: Mat) -> Result<Self> {
        let nx = a.nrows();
        let dims = Dims { nx, nu: b.ncols(), ny: c.nrows(), nw: bw.ncols() };
        let check = |name: &str, m: &Mat, rows: usize, cols: usize| -> Result<()> {
            if m.nrows() != rows || m.ncols() != cols {
                return Err(Error::DimensionMismatch(format!(
                    "{name} is {}x{}, expected {rows}x{cols}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        check("A", &a, nx, nx)?;
        check("B", &b, nx, dims.nu)?;
        check("Bw", &bw, nx, dims.nw)?;
        check("C", &c, dims.ny, nx)?;
        check("Q", &q, nx, nx)?;
        check("R", &r, dims.nu, dims.nu)?;
        for (name, m) in [("A", &a), ("B", &b), ("Bw", &bw), ("C", &c), ("Q", &q), ("R", &r)] {
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::DimensionMismatch(format!("{name} has non-finite entries")));
            }
        }
        let q_sqrt = sqrt_psd(&q)?;
        let r_sqrt = sqrt_psd(&r)?;
        Ok(Self { a, b, bw, c, q, r, q_sqrt, r_sqrt, dims })
    }

    pub fn from_data(data: &PlantData) -> Result<Self> {
        let conv = |name: &str, rows: &[Vec<f64>]| -> Result<Mat> {
            let ncols = rows.first().map_or(0, Vec::len);
            if rows.iter().any(|r| r.len() != ncols) {
                return Err(Error::DimensionMismatch(format!("{name} has ragged rows")));
            }
            Ok(linalg::mat_from_rows(rows))
        };
        Self::new(
            conv("A", &data.a)?,
            conv("B", &data.b)?,
            conv("Bw", &data.bw)?,
            conv("C", &data.c)?,
            conv("Q", &data.q)?,
            conv("R", &data.r)?,
        )
    }

    pub fn to_data(&self) -> PlantData {
        PlantData {
            a: linalg::mat_to_rows(&self.a),
            b: linalg::mat_to_rows(&self.b),
            bw: linalg::mat_to_rows(&self.bw),
            c: linalg::mat_to_rows(&self.c),
            q: linalg::mat_to_rows(&self.q),
            r: linalg::mat_to_rows(&self.r),
        }
    }

    pub fn a(&self) -> &Mat {
        &self.a
    }
    pub fn b(&self) -> &Mat {
        &self.b
    }
    pub fn bw(&self) -> &Mat {
        &self.bw
    }
    pub fn c(&self) -> &Mat {
        &self.c
    }
    pub fn q(&self) -> &Mat {
        &self.q
    }
    pub fn r(&self) -> &Mat {
        &self.r
    }
    pub fn q_sqrt(&self) -> &Mat {
        &self.q_sqrt
    }
    pub fn r_sqrt(&self) -> &Mat {
        &self.r_sqrt
    }
    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// True when `C` is the identity (full state measurement).
    pub fn is_state_feedback(&self) -> bool {
        self.c.nrows() == self.c.ncols() && self.c == Mat::identity(self.dims.nx, self.dims.nx)
    }

    fn check_gain(&self, k: &Mat) -> Result<()> {
        if k.nrows() != self.dims.nu || k.ncols() != self.dims.ny {
            return Err(Error::DimensionMismatch(format!(
                "gain is {}x{}, expected {}x{}",
                k.nrows(),
                k.ncols(),
                self.dims.nu,
                self.dims.ny
            )));
        }
        Ok(())
    }

    /// `A + B K C`.
    pub fn closed_loop_a(&self, k: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        Ok(&self.a + &self.b * k * &self.c)
    }

    /// Stack of `Q^{1/2}` and `R^{1/2} K C`.
    pub fn performance_output(&self, k: &Mat) -> Result<Mat> {
        self.check_gain(k)?;
        let lower = &self.r_sqrt * k * &self.c;
        let mut ck = Mat::zeros(self.dims.nz(), self.dims.nx);
        ck.rows_mut(0, self.dims.nx).copy_from(&self.q_sqrt);
        ck.rows_mut(self.dims.nx, self.dims.nu).copy_from(&lower);
        Ok(ck)
    }

    pub fn closed_loop(&self, k: &Gain) -> Result<ClosedLoop> {
        let a_k = self.closed_loop_a(k)?;
        let c_k = self.performance_output(k)?;
        let rho = spectral_radius(&a_k)?;
        Ok(ClosedLoop { a_k, c_k, bw: self.bw.clone(), rho })
    }
}

/// Static feedback gain `u = K y` (`n_u x n_y`).
#[derive(Clone, Debug, PartialEq)]
pub struct Gain(Mat);

impl Gain {
    pub fn new(k: Mat) -> Self {
        Self(k)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        Self(linalg::mat_from_rows(rows))
    }

    pub fn scalar(k: f64) -> Self {
        Self(DMatrix::from_element(1, 1, k))
    }

    pub fn row(entries: &[f64]) -> Self {
        Self(DMatrix::from_row_slice(1, entries.len(), entries))
    }

    pub fn into_inner(self) -> Mat {
        self.0
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        linalg::mat_to_rows(&self.0)
    }
}

impl Deref for Gain {
    type Target = Mat;
    fn deref(&self) -> &Mat {
        &self.0
    }
}

impl From<Mat> for Gain {
    fn from(m: Mat) -> Self {
        Self(m)
    }
}

/// Closed-loop data for a fixed gain.
#[derive(Clone, Debug)]
pub struct ClosedLoop {
    pub a_k: Mat,
    pub c_k: Mat,
    pub bw: Mat,
    pub rho: f64,
}

/// Lists every violated standing assumption; empty means valid.
pub fn validate(plant: &Plant) -> Vec<String> {
    let mut out = Vec::new();
    let pd = |m: &Mat| m.nrows() > 0 && linalg::lambda_min_sym(m) > 0.0;
    if !pd(plant.q()) {
        out.push("Q not positive definite".to_string());
    }
    if !pd(plant.r()) {
        out.push("R not positive definite".to_string());
    }
    if linalg::numerical_rank(plant.bw(), RANK_RTOL) < plant.bw().nrows() {
        out.push("Bw not full row rank".to_string());
    }
    if linalg::numerical_rank(plant.c(), RANK_RTOL) < plant.c().nrows() {
        out.push("C not full row rank".to_string());
    }
    match pbh_unstabilizable_modes(plant) {
        Ok(modes) if !modes.is_empty() => {
            let list: Vec<String> = modes.iter().map(|l| format!("{:.6}{:+.6}j", l.re, l.im)).collect();
            out.push(format!("(A, B) not stabilizable: uncontrollable modes {}", list.join(", ")));
        }
        Ok(_) => {}
        Err(e) => out.push(format!("stabilizability check failed: {e}")),
    }
    out
}

/// Eigenvalues `|lambda| >= 1` of `A` for which `[A - lambda I, B]` loses rank.
fn pbh_unstabilizable_modes(plant: &Plant) -> Result<Vec<Complex64>> {
    let nx = plant.dims().nx;
    let a = linalg::to_complex(plant.a());
    let b = linalg::to_complex(plant.b());
    let mut bad = Vec::new();
    for lam in linalg::eigenvalues(plant.a())? {
        if lam.norm() < 1.0 {
            continue;
        }
        let mut pencil = CMat::zeros(nx, nx + plant.dims().nu);
        let shifted = &a - CMat::identity(nx, nx) * lam;
        pencil.columns_mut(0, nx).copy_from(&shifted);
        pencil.columns_mut(nx, plant.dims().nu).copy_from(&b);
        let s = linalg::complex_singular_values(&pencil);
        let top = s.first().copied().unwrap_or(0.0);
        let rank = s.iter().filter(|&&x| top > 0.0 && x > RANK_RTOL * top).count();
        if rank < nx {
            bad.push(lam);
        }
    }
    Ok(bad)
}

/// Symmetric PSD square root via eigendecomposition; small negative
/// eigenvalues are clipped to zero.
pub fn sqrt_psd(m: &Mat) -> Result<Mat> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "sqrt_psd of a {}x{} matrix",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Ok(m.clone());
    }
    let norm = m.norm();
    let asym = (m - m.transpose()).norm();
    if asym > 1e-10 * norm {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let eig = nalgebra::SymmetricEigen::new(linalg::symmetrize(m));
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    let s = v * Mat::from_diagonal(&roots) * v.transpose();
    Ok(linalg::symmetrize(&s))
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(m: &Mat) -> Result<f64> {
    Ok(linalg::eigenvalues(m)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Schur stability of `A + B K C`, strict `rho < 1`.
pub fn is_stabilizing(plant: &Plant, k: &Gain) -> Result<bool> {
    Ok(spectral_radius(&plant.closed_loop_a(k)?)? < 1.0)
}

/// Pivot threshold used to declare `e^{jw} I - A_K` singular.
pub const RESOLVENT_TOL: f64 = 1e-12;

/// `(e^{jw} I - A_K)^{-1}`.
pub fn resolvent(a_k: &Mat, omega: f64) -> Result<CMat> {
    let n = a_k.nrows();
    let z = Complex64::new(omega.cos(), omega.sin());
    let m = CMat::identity(n, n) * z - linalg::to_complex(a_k);
    linalg::complex_solve(&m, &CMat::identity(n, n), RESOLVENT_TOL)
        .ok_or(Error::SingularResolvent { omega })
}

/// Closed-loop transfer matrix `T_zw(K, w) = C_K (e^{jw} I - A_K)^{-1} B_w`.
pub fn transfer(plant: &Plant, k: &Gain, omega: f64) -> Result<CMat> {
    let a_k = plant.closed_loop_a(k)?;
    let c_k = plant.performance_output(k)?;
    let phi = resolvent(&a_k, omega)?;
    Ok(linalg::to_complex(&c_k) * phi * linalg::to_complex(plant.bw()))
}

/// Axis-aligned box over the gain entries (row-major order).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl ScanBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Self {
        assert_eq!(lo.len(), hi.len(), "box bounds must have equal length");
        Self { lo, hi }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }
}

/// Names of the builtin benchmark systems.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExampleName {
    Example1,
    Example2,
    Example3,
}

impl std::str::FromStr for ExampleName {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "example1" => Ok(Self::Example1),
            "example2" => Ok(Self::Example2),
            "example3" => Ok(Self::Example3),
            other => Err(Error::UnknownName(other.to_string())),
        }
    }
}

impl std::fmt::Display for ExampleName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::Example1 => "example1",
            Self::Example2 => "example2",
            Self::Example3 => "example3",
        };
        f.write_str(s)
    }
}

/// Metadata shipped with a builtin example.
#[derive(Clone, Debug)]
pub struct ExampleMeta {
    pub name: ExampleName,
    pub alpha: Option<f64>,
    /// Known optimal cost, when available.
    pub j_star: Option<f64>,
    pub optimal_gain: Option<Gain>,
    /// Box used for plots and for rejection sampling of gains.
    pub scan_box: ScanBox,
}

/// Builds one of the three benchmark systems.
pub fn builtin_example(name: ExampleName, alpha: Option<f64>) -> Result<(Plant, ExampleMeta)> {
    let m = |rows: &[&[f64]]| -> Mat {
        let owned: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        linalg::mat_from_rows(&owned)
    };
    match name {
        ExampleName::Example1 => {
            let one = m(&[&[1.0]]);
            let plant = Plant::new(one.clone(), one.clone(), one.clone(), one.clone(), one.clone(), one)?;
            let meta = ExampleMeta {
                name,
                alpha: None,
                j_star: Some(2f64.sqrt()),
                optimal_gain: Some(Gain::scalar(-1.0)),
                scan_box: ScanBox::new(vec![-1.99], vec![-0.01]),
            };
            Ok((plant, meta))
        }
        ExampleName::Example2 => {
            let plant = Plant::new(
                m(&[&[0.0, 2.0], &[4.0, 0.2]]),
                m(&[&[1.0], &[0.0]]),
                Mat::identity(2, 2),
                Mat::identity(2, 2),
                m(&[&[1.0, 0.0], &[0.0, 1e-3]]),
                m(&[&[1.0]]),
            )?;
            let meta = ExampleMeta {
                name,
                alpha: None,
                j_star: Some(8.327),
                optimal_gain: None,
                scan_box: ScanBox::new(vec![-6.0, -4.0], vec![2.0, 2.0]),
            };
            Ok((plant, meta))
        }
        ExampleName::Example3 => {
            let alpha = alpha.ok_or(Error::AlphaMissing)?;
            let plant = Plant::new(
                m(&[&[1.0 - alpha, -0.1, -0.1], &[0.1, 1.0, 0.0], &[0.0, 0.1, 1.0]]),
                m(&[&[0.1], &[0.0], &[0.0]]),
                Mat::identity(3, 3),
                m(&[&[0.0, 1.0, 1.0], &[1.0, -1.0, 1.0]]),
                Mat::identity(3, 3) * 0.01,
                m(&[&[0.01]]),
            )?;
            let meta = ExampleMeta {
                name,
                alpha: Some(alpha),
                j_star: None,
                optimal_gain: None,
                scan_box: ScanBox::new(vec![-10.0, -4.0], vec![2.0, 4.0]),
            };
            Ok((plant, meta))
        }
    }
}

/// Wraps `omega` into `[0, 2 pi)`.
pub fn wrap_frequency(omega: f64) -> f64 {
    let w = omega.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ex(name: ExampleName, alpha: Option<f64>) -> Plant {
        builtin_example(name, alpha).unwrap().0
    }

    #[test]
    fn builtin_examples_are_valid() {
        assert!(validate(&ex(ExampleName::Example1, None)).is_empty());
        assert!(validate(&ex(ExampleName::Example2, None)).is_empty());
        for i in 0..=15 {
            let alpha = 0.05 + 0.01 * i as f64;
            let p = ex(ExampleName::Example3, Some(alpha));
            assert!(validate(&p).is_empty(), "alpha = {alpha}: {:?}", validate(&p));
        }
    }

    #[test]
    fn builtin_example_data() {
        let p1 = ex(ExampleName::Example1, None);
        assert_eq!(p1.dims(), Dims { nx: 1, nu: 1, ny: 1, nw: 1 });
        let p2 = ex(ExampleName::Example2, None);
        assert_eq!(p2.q()[(1, 1)], 1e-3);
        assert_eq!(p2.bw(), &Mat::identity(2, 2));
        assert!(p2.is_state_feedback());
        let p3 = ex(ExampleName::Example3, Some(0.13));
        assert_relative_eq!(p3.a()[(0, 0)], 0.87, epsilon = 1e-15);
        assert_eq!(p3.c(), &linalg::mat_from_rows(&[vec![0.0, 1.0, 1.0], vec![1.0, -1.0, 1.0]]));
        assert!(matches!(builtin_example(ExampleName::Example3, None), Err(Error::AlphaMissing)));
        assert!(matches!("example9".parse::<ExampleName>(), Err(Error::UnknownName(_))));
    }

    #[test]
    fn validate_reports_violations() {
        let one = Mat::identity(1, 1);
        let p = Plant::new(one.clone(), one.clone(), one.clone(), one.clone(), Mat::zeros(1, 1), one.clone())
            .unwrap();
        assert!(validate(&p).iter().any(|v| v == "Q not positive definite"));

        let p = Plant::new(
            Mat::identity(2, 2) * 0.5,
            linalg::mat_from_rows(&[vec![1.0], vec![0.0]]),
            Mat::identity(2, 2),
            linalg::mat_from_rows(&[vec![0.0, 0.0]]),
            Mat::identity(2, 2),
            one.clone(),
        )
        .unwrap();
        assert!(validate(&p).iter().any(|v| v == "C not full row rank"));

        // Unstable uncontrollable mode.
        let p = Plant::new(
            linalg::mat_from_rows(&[vec![0.5, 0.0], vec![0.0, 2.0]]),
            linalg::mat_from_rows(&[vec![1.0], vec![0.0]]),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            Mat::identity(2, 2),
            one,
        )
        .unwrap();
        assert!(validate(&p).iter().any(|v| v.starts_with("(A, B) not stabilizable")));
    }

    #[test]
    fn sqrt_psd_cases() {
        assert_relative_eq!(sqrt_psd(&Mat::identity(2, 2)).unwrap(), Mat::identity(2, 2), epsilon = 1e-14);
        let d = sqrt_psd(&Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]))).unwrap();
        assert_relative_eq!(d, Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0])), epsilon = 1e-14);
        let m = linalg::mat_from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]);
        let s = sqrt_psd(&m).unwrap();
        assert!((&s * &s - &m).norm() <= 1e-10 * m.norm());
        let asym = linalg::mat_from_rows(&[vec![1.0, 1.0], vec![0.0, 1.0]]);
        assert!(matches!(sqrt_psd(&asym), Err(Error::NotSymmetric { .. })));
    }

    #[test]
    fn spectral_radius_cases() {
        assert_relative_eq!(spectral_radius(&Mat::identity(2, 2)).unwrap(), 1.0, epsilon = 1e-15);
        let p1 = ex(ExampleName::Example1, None);
        let a_k = p1.closed_loop_a(&Gain::scalar(-1.0)).unwrap();
        assert_eq!(spectral_radius(&a_k).unwrap(), 0.0);
        let p2 = ex(ExampleName::Example2, None);
        let expect = (0.2 + (0.04f64 + 32.0).sqrt()) / 2.0;
        assert_relative_eq!(spectral_radius(p2.a()).unwrap(), expect, epsilon = 1e-12);
        assert!((expect - 2.929).abs() < 5e-3);
    }

    #[test]
    fn stabilizing_set_of_example1() {
        let p1 = ex(ExampleName::Example1, None);
        assert!(is_stabilizing(&p1, &Gain::scalar(-1.0)).unwrap());
        assert!(!is_stabilizing(&p1, &Gain::scalar(0.0)).unwrap());
        assert!(!is_stabilizing(&p1, &Gain::scalar(-2.5)).unwrap());
        assert!(matches!(
            is_stabilizing(&p1, &Gain::row(&[1.0, 2.0])),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn transfer_of_example1() {
        let p1 = ex(ExampleName::Example1, None);
        let k = Gain::scalar(-1.0);
        let t0 = transfer(&p1, &k, 0.0).unwrap();
        assert_relative_eq!(t0[(0, 0)].re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(t0[(1, 0)].re, -1.0, epsilon = 1e-15);
        let t = transfer(&p1, &k, PI / 2.0).unwrap();
        assert!((t[(0, 0)] - Complex64::new(0.0, -1.0)).norm() < 1e-15);
        assert!((t[(1, 0)] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        // Singular resolvent at the boundary k = 0, w = 0.
        assert!(matches!(
            transfer(&p1, &Gain::scalar(0.0), 0.0),
            Err(Error::SingularResolvent { .. })
        ));
    }

    #[test]
    fn closed_loop_output_gram() {
        let p2 = ex(ExampleName::Example2, None);
        let k = Gain::row(&[-0.3, -2.0]);
        let cl = p2.closed_loop(&k).unwrap();
        let lhs = cl.c_k.transpose() * &cl.c_k;
        let rhs = p2.q() + p2.c().transpose() * k.transpose() * p2.r() * &*k * p2.c();
        assert!((&lhs - &rhs).norm() <= 1e-12 * rhs.norm());
        assert_eq!(cl.a_k, p2.a() + p2.b() * &*k * p2.c());
    }

    #[test]
    fn plant_json_roundtrip() {
        let p3 = ex(ExampleName::Example3, Some(0.14));
        let back = Plant::from_data(&p3.to_data()).unwrap();
        assert_eq!(back, p3);
    }
}
