//! Empirical probes of the cost landscape: dense 2-D scans with connected
//! components of the stabilizing set, weak-convexity and Lipschitz
//! estimates from sampled segments, and the weak-PL ratio.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hinf::{self, HinfOptions};
use crate::linalg::Mat;
use crate::par;
use crate::plant::{self, Gain, Plant, ScanBox};
use crate::subgrad::{self, HinfCost, Objective};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanOptions {
    /// When false only stability is evaluated (component analysis only).
    pub evaluate_cost: bool,
    pub hinf: HinfOptions,
}

impl Default for ScanOptions {
    fn default() -> Self {
        Self { evaluate_cost: true, hinf: HinfOptions::default() }
    }
}

/// Dense scan over a 2-D gain box. Cells are indexed `(i, j)` with `i`
/// along the first gain entry; cell centers are `lo + (i + 1/2) h`.
#[derive(Clone, Debug, PartialEq)]
pub struct GridScan {
    pub scan_box: ScanBox,
    pub resolution: usize,
    pub stabilizing: Vec<bool>,
    /// `J` per cell, `+inf` when not stabilizing; `None` for stability-only scans.
    pub j_values: Option<Vec<f64>>,
    /// Component label per cell (`None` for infeasible cells), labels `0..n_components`.
    pub component: Vec<Option<usize>>,
    pub n_components: usize,
    pub j_star_grid: Option<f64>,
    pub argmin_cell: Option<(usize, usize)>,
}

impl GridScan {
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.resolution + j
    }

    pub fn cell_center(&self, i: usize, j: usize) -> [f64; 2] {
        cell_center(&self.scan_box, self.resolution, i, j)
    }

    /// CSV with columns `k1, k2, J, component_id`; `J` and `component_id`
    /// are empty for infeasible cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "k1,k2,J,component_id")?;
        for i in 0..self.resolution {
            for j in 0..self.resolution {
                let idx = self.index(i, j);
                let [k1, k2] = self.cell_center(i, j);
                let jv = match (&self.j_values, self.stabilizing[idx]) {
                    (Some(v), true) => format!("{:e}", v[idx]),
                    _ => String::new(),
                };
                let comp = self.component[idx].map(|c| c.to_string()).unwrap_or_default();
                writeln!(w, "{k1:e},{k2:e},{jv},{comp}")?;
            }
        }
        Ok(())
    }
}

fn cell_center(bx: &ScanBox, res: usize, i: usize, j: usize) -> [f64; 2] {
    let h0 = (bx.hi[0] - bx.lo[0]) / res as f64;
    let h1 = (bx.hi[1] - bx.lo[1]) / res as f64;
    [bx.lo[0] + (i as f64 + 0.5) * h0, bx.lo[1] + (j as f64 + 0.5) * h1]
}

fn two_entry_gain(plant: &Plant) -> Result<(usize, usize)> {
    let d = plant.dims();
    if d.nu * d.ny != 2 {
        return Err(Error::WrongGainShape { rows: d.nu, cols: d.ny });
    }
    Ok((d.nu, d.ny))
}

/// Full scan evaluating `J` at every cell.
pub fn grid_scan_2d(plant: &Plant, bx: &ScanBox, resolution: usize) -> Result<GridScan> {
    grid_scan_2d_with(plant, bx, resolution, &ScanOptions::default())
}

pub fn grid_scan_2d_with(plant: &Plant, bx: &ScanBox, resolution: usize, opts: &ScanOptions) -> Result<GridScan> {
    let (rows, cols) = two_entry_gain(plant)?;
    if bx.dim() != 2 {
        return Err(Error::DimensionMismatch(format!("scan box has dimension {}, expected 2", bx.dim())));
    }
    if resolution == 0 {
        return Err(Error::DimensionMismatch("resolution must be positive".into()));
    }
    let cells = resolution * resolution;
    let eval = |idx: usize| -> Result<(bool, f64)> {
        let (i, j) = (idx / resolution, idx % resolution);
        let gain = Gain::new(Mat::from_row_slice(rows, cols, &cell_center(bx, resolution, i, j)));
        if !plant::is_stabilizing(plant, &gain)? {
            return Ok((false, f64::INFINITY));
        }
        if !opts.evaluate_cost {
            return Ok((true, f64::NAN));
        }
        match hinf::hinf_value(plant, &gain, &opts.hinf) {
            Ok(v) => Ok((true, v)),
            // Eigenvalues within rounding of the unit circle: J is numerically infinite.
            Err(Error::SingularResolvent { .. }) => Ok((true, f64::INFINITY)),
            Err(e) => Err(e),
        }
    };
    let evaluated: Vec<(bool, f64)> = par::map_range(cells, eval).into_iter().collect::<Result<_>>()?;
    let stabilizing: Vec<bool> = evaluated.iter().map(|e| e.0).collect();
    let (component, n_components) = label_components(&stabilizing, resolution);

    let (j_values, j_star_grid, argmin_cell) = if opts.evaluate_cost {
        let vals: Vec<f64> = evaluated.iter().map(|e| e.1).collect();
        let best = vals
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1));
        let j_star = best.map(|(_, v)| *v);
        let arg = best.map(|(idx, _)| (idx / resolution, idx % resolution));
        (Some(vals), j_star, arg)
    } else {
        (None, None, None)
    };
    Ok(GridScan {
        scan_box: bx.clone(),
        resolution,
        stabilizing,
        j_values,
        component,
        n_components,
        j_star_grid,
        argmin_cell,
    })
}

/// 4-neighbour connected components of the `true` cells of a square mask.
/// Labels follow first appearance in row-major order.
pub fn label_components(mask: &[bool], res: usize) -> (Vec<Option<usize>>, usize) {
    let mut label = vec![None; mask.len()];
    let mut count = 0;
    let mut stack = Vec::new();
    for start in 0..mask.len() {
        if !mask[start] || label[start].is_some() {
            continue;
        }
        label[start] = Some(count);
        stack.push(start);
        while let Some(idx) = stack.pop() {
            let (i, j) = (idx / res, idx % res);
            let mut visit = |n: usize| {
                if mask[n] && label[n].is_none() {
                    label[n] = Some(count);
                    stack.push(n);
                }
            };
            if i > 0 {
                visit(idx - res);
            }
            if i + 1 < res {
                visit(idx + res);
            }
            if j > 0 {
                visit(idx - 1);
            }
            if j + 1 < res {
                visit(idx + 1);
            }
        }
        count += 1;
    }
    (label, count)
}

/// Rejection sampling of `K_nu = {K stabilizing : J(K) <= nu}` inside a box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleSpec {
    pub nu: f64,
    pub scan_box: ScanBox,
    pub seed: u64,
    /// Candidate draws allowed before giving up.
    pub max_candidates: usize,
}

impl SampleSpec {
    pub fn new(nu: f64, scan_box: ScanBox, seed: u64) -> Self {
        Self { nu, scan_box, seed, max_candidates: 200_000 }
    }
}

const BATCH: usize = 256;

fn draw(rng: &mut ChaCha8Rng, bx: &ScanBox) -> Vec<f64> {
    bx.lo.iter().zip(&bx.hi).map(|(&lo, &hi)| rng.gen_range(lo..hi)).collect()
}

/// `Some(J)` when `k` lies in the sublevel set.
fn level_value<O: Objective>(obj: &O, k: &Mat, nu: f64) -> Result<Option<f64>> {
    match obj.value(k) {
        Ok(v) if v.is_finite() && v <= nu => Ok(Some(v)),
        Ok(_) | Err(Error::NotStabilizing { .. }) | Err(Error::SingularResolvent { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Draws up to `count` sublevel-set points, in deterministic order.
fn sample_pool<O: Objective>(
    obj: &O,
    shape: (usize, usize),
    spec: &SampleSpec,
    rng: &mut ChaCha8Rng,
    count: usize,
) -> Result<Vec<(Mat, f64)>> {
    let mut pool = Vec::with_capacity(count);
    let mut drawn = 0;
    while pool.len() < count && drawn < spec.max_candidates {
        let batch: Vec<Mat> = (0..BATCH)
            .map(|_| Mat::from_row_slice(shape.0, shape.1, &draw(rng, &spec.scan_box)))
            .collect();
        drawn += BATCH;
        let vals = par::map_slice(&batch, |k| level_value(obj, k, spec.nu));
        for (k, v) in batch.into_iter().zip(vals) {
            if let Some(j) = v? {
                if pool.len() < count {
                    pool.push((k, j));
                }
            }
        }
    }
    Ok(pool)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentOptions {
    pub n_segments: usize,
    pub n_points: usize,
}

impl Default for SegmentOptions {
    fn default() -> Self {
        Self { n_segments: 200, n_points: 21 }
    }
}

/// `J` at `n_points` equispaced points of a segment (endpoints included).
#[derive(Clone, Debug)]
struct Segment {
    k1: Mat,
    k2: Mat,
    /// `values[i]` at `lambda_i = i / (n - 1)` along `K2 -> K1`.
    values: Vec<f64>,
}

impl Segment {
    fn lambda(&self, i: usize) -> f64 {
        i as f64 / (self.values.len() - 1) as f64
    }

    /// Smallest `m` making every interior secant inequality hold.
    fn required_m(&self) -> f64 {
        let (j1, j2) = (self.values[self.values.len() - 1], self.values[0]);
        let d2 = (&self.k1 - &self.k2).norm_squared();
        let mut m = f64::NEG_INFINITY;
        for i in 1..self.values.len() - 1 {
            let l = self.lambda(i);
            let excess = self.values[i] - l * j1 - (1.0 - l) * j2;
            m = m.max(2.0 * excess / (l * (1.0 - l) * d2));
        }
        m
    }

    /// Worst secant violation for a given `m`.
    fn violation(&self, m: f64) -> f64 {
        let (j1, j2) = (self.values[self.values.len() - 1], self.values[0]);
        let d2 = (&self.k1 - &self.k2).norm_squared();
        (1..self.values.len() - 1)
            .map(|i| {
                let l = self.lambda(i);
                self.values[i] - l * j1 - (1.0 - l) * j2 - 0.5 * m * l * (1.0 - l) * d2
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Segments whose sampled points all lie in the sublevel set.
fn sample_segments<O: Objective>(
    obj: &O,
    shape: (usize, usize),
    spec: &SampleSpec,
    opts: &SegmentOptions,
) -> Result<Vec<Segment>> {
    if opts.n_points < 3 {
        return Err(Error::DimensionMismatch("segments need at least 3 points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut segments = Vec::with_capacity(opts.n_segments);
    let mut attempts = 0;
    while segments.len() < opts.n_segments && attempts < spec.max_candidates {
        let pool = sample_pool(obj, shape, spec, &mut rng, 2 * BATCH)?;
        if pool.len() < 2 {
            break;
        }
        attempts += BATCH;
        let pairs: Vec<(usize, usize)> = (0..pool.len() / 2).map(|i| (2 * i, 2 * i + 1)).collect();
        let n = opts.n_points;
        let checked = par::map_slice(&pairs, |&(a, b)| -> Result<Option<Segment>> {
            let (k1, j1) = &pool[a];
            let (k2, j2) = &pool[b];
            let mut values = vec![0.0; n];
            values[0] = *j2;
            values[n - 1] = *j1;
            for (i, slot) in values.iter_mut().enumerate().take(n - 1).skip(1) {
                let l = i as f64 / (n - 1) as f64;
                let k = k1 * l + k2 * (1.0 - l);
                match level_value(obj, &k, spec.nu)? {
                    Some(v) => *slot = v,
                    None => return Ok(None),
                }
            }
            Ok(Some(Segment { k1: k1.clone(), k2: k2.clone(), values }))
        });
        for seg in checked {
            if let Some(s) = seg? {
                if segments.len() < opts.n_segments {
                    segments.push(s);
                }
            }
        }
    }
    if segments.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(segments)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeakConvexityEstimate {
    pub m_hat: f64,
    pub nu: f64,
    pub segments_tested: usize,
    /// Largest secant violation with `m = m_hat` (nonpositive up to rounding).
    pub worst_violation_margin: f64,
}

/// Smallest `m >= 0` making `J + m/2 ||.||^2` convex along all sampled
/// segments of the sublevel set.
pub fn estimate_weak_convexity(plant: &Plant, spec: &SampleSpec, opts: &SegmentOptions) -> Result<WeakConvexityEstimate> {
    let d = plant.dims();
    estimate_weak_convexity_with(&HinfCost::new(plant), (d.nu, d.ny), spec, opts)
}

pub fn estimate_weak_convexity_with<O: Objective>(
    obj: &O,
    shape: (usize, usize),
    spec: &SampleSpec,
    opts: &SegmentOptions,
) -> Result<WeakConvexityEstimate> {
    let segments = sample_segments(obj, shape, spec, opts)?;
    let m_hat = segments.iter().map(Segment::required_m).fold(0.0, f64::max);
    let worst = segments.iter().map(|s| s.violation(m_hat)).fold(f64::NEG_INFINITY, f64::max);
    Ok(WeakConvexityEstimate { m_hat, nu: spec.nu, segments_tested: segments.len(), worst_violation_margin: worst })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConvexityCheck {
    pub m: f64,
    pub segments_tested: usize,
    pub worst_violation: f64,
}

/// Re-tests the secant inequality with a given `m` on freshly sampled segments.
pub fn check_weak_convexity(plant: &Plant, m: f64, spec: &SampleSpec, opts: &SegmentOptions) -> Result<ConvexityCheck> {
    let d = plant.dims();
    let segments = sample_segments(&HinfCost::new(plant), (d.nu, d.ny), spec, opts)?;
    let worst_violation = segments.iter().map(|s| s.violation(m)).fold(f64::NEG_INFINITY, f64::max);
    Ok(ConvexityCheck { m, segments_tested: segments.len(), worst_violation })
}

/// `max ||G||_F` over sampled points of the sublevel set.
pub fn estimate_lipschitz(plant: &Plant, spec: &SampleSpec, n_samples: usize) -> Result<f64> {
    let d = plant.dims();
    estimate_lipschitz_with(&HinfCost::new(plant), (d.nu, d.ny), spec, n_samples)
}

pub fn estimate_lipschitz_with<O: Objective>(
    obj: &O,
    shape: (usize, usize),
    spec: &SampleSpec,
    n_samples: usize,
) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = sample_pool(obj, shape, spec, &mut rng, n_samples)?;
    if pool.is_empty() {
        return Err(Error::EmptySample);
    }
    let norms = par::map_slice(&pool, |(k, _)| obj.value_and_subgradient(k).map(|(_, g)| g.norm()));
    norms.into_iter().try_fold(0.0, |acc, g| Ok(f64::max(acc, g?)))
}

/// Estimated `dist(0, dJ(K))` from the sampled generators.
pub fn dist_estimate(plant: &Plant, k: &Gain) -> Result<f64> {
    let grads = subgrad::subdifferential_sample(plant, k, HinfOptions::default().delta_active)?;
    Ok(subgrad::min_norm_element(&grads)?.norm)
}

/// `dist_est(0, dJ(K)) / (J(K) - J*)` for state-feedback plants.
pub fn weak_pl_ratio(plant: &Plant, k: &Gain, j_star: f64) -> Result<f64> {
    if !plant.is_state_feedback() {
        return Err(Error::NotStateFeedback);
    }
    let j = hinf::hinf_value(plant, k, &HinfOptions::default())?;
    let excess = j - j_star;
    if excess < 1e-9 {
        return Err(Error::AtOptimum);
    }
    Ok(dist_estimate(plant, k)? / excess)
}

/// Stabilizing gains from the sublevel set, for experiments over sampled points.
pub fn sample_gains(plant: &Plant, spec: &SampleSpec, count: usize) -> Result<Vec<Gain>> {
    let d = plant.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let pool = sample_pool(&HinfCost::new(plant), (d.nu, d.ny), spec, &mut rng, count)?;
    if pool.is_empty() {
        return Err(Error::EmptySample);
    }
    Ok(pool.into_iter().map(|(k, _)| Gain::new(k)).collect())
}

/// Cells whose finite `J` is strictly below every finite in-box 8-neighbour.
/// Cells on the box edge qualify when the descent leaves the box.
pub fn local_minima(scan: &GridScan) -> Vec<(usize, usize)> {
    let Some(v) = scan.j_values.as_ref() else { return Vec::new() };
    let r = scan.resolution as i64;
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..r {
            let c = v[(i * r + j) as usize];
            if !c.is_finite() {
                continue;
            }
            let lowest = (-1..=1)
                .flat_map(|di| (-1..=1).map(move |dj| (i + di, j + dj)))
                .filter(|&(a, b)| (a, b) != (i, j) && (0..r).contains(&a) && (0..r).contains(&b))
                .all(|(a, b)| v[(a * r + b) as usize] > c);
            if lowest {
                out.push((i as usize, j as usize));
            }
        }
    }
    out
}

/// Minimax ("mountain pass") levels from `start` over 4-connected finite
/// cells: `level[c]` is the smallest achievable maximum of `J` along a path
/// from `start` to `c`. Returns the levels and predecessor links.
fn bottleneck_paths(v: &[f64], r: usize, start: usize) -> (Vec<f64>, Vec<usize>) {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;
    #[derive(PartialEq)]
    struct Key(f64);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }
    let mut level = vec![f64::INFINITY; v.len()];
    let mut prev = vec![usize::MAX; v.len()];
    let mut heap = BinaryHeap::new();
    level[start] = v[start];
    heap.push(Reverse((Key(v[start]), start)));
    while let Some(Reverse((Key(l), x))) = heap.pop() {
        if l > level[x] {
            continue;
        }
        let (i, j) = (x / r, x % r);
        let nbrs = [
            (i > 0).then(|| x - r),
            (i + 1 < r).then(|| x + r),
            (j > 0).then(|| x - 1),
            (j + 1 < r).then(|| x + 1),
        ];
        for y in nbrs.into_iter().flatten() {
            if !v[y].is_finite() {
                continue;
            }
            let c = l.max(v[y]);
            if c < level[y] {
                level[y] = c;
                prev[y] = x;
                heap.push(Reverse((Key(c), y)));
            }
        }
    }
    (level, prev)
}

/// A numerically stationary point of `J` that is not a global minimizer.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SaddleWitness {
    /// Grid cell where the search started (the top of a mountain-pass path).
    pub start_cell: (usize, usize),
    pub k: Vec<f64>,
    pub j: f64,
    pub j_star_grid: f64,
    pub dist_est: f64,
    /// Eigenvalues of the finite-difference Hessian at `k`, ascending.
    pub hessian_eigenvalues: Vec<f64>,
    pub newton_iterations: usize,
}

/// Looks for a saddle between the grid minimum and the local minimum most
/// separated from it: the highest cell on the minimax path seeds a Newton
/// iteration on the (smooth) gradient with a finite-difference Hessian.
pub fn find_saddle_witness(plant: &Plant, scan: &GridScan) -> Result<Option<SaddleWitness>> {
    let (Some(v), Some(j_star), Some((ai, aj))) = (scan.j_values.as_ref(), scan.j_star_grid, scan.argmin_cell) else {
        return Ok(None);
    };
    let r = scan.resolution;
    let start = ai * r + aj;
    let (level, prev) = bottleneck_paths(v, r, start);
    let target = local_minima(scan)
        .into_iter()
        .map(|(i, j)| i * r + j)
        .filter(|&c| c != start && level[c].is_finite())
        .max_by(|&a, &b| (level[a] - v[a]).total_cmp(&(level[b] - v[b])));
    let Some(target) = target else { return Ok(None) };
    let mut top = target;
    let mut x = target;
    while x != start {
        if v[x] > v[top] {
            top = x;
        }
        x = prev[x];
    }
    let (ti, tj) = (top / r, top % r);
    let (rows, cols) = two_entry_gain(plant)?;
    let seed = Mat::from_row_slice(rows, cols, &scan.cell_center(ti, tj));
    let (k, iters, eigs) = newton_stationary(plant, seed, 40)?;
    let gain = Gain::new(k.clone());
    let j = hinf::hinf_value(plant, &gain, &HinfOptions::default())?;
    Ok(Some(SaddleWitness {
        start_cell: (ti, tj),
        k: k.iter().copied().collect(),
        j,
        j_star_grid: j_star,
        dist_est: dist_estimate(plant, &gain)?,
        hessian_eigenvalues: eigs,
        newton_iterations: iters,
    }))
}

const NEWTON_FD_STEP: f64 = 1e-6;

/// Newton's method on `grad J = 0` using subgradients at smooth points and a
/// central-difference Hessian. Stops when the step stalls or leaves the
/// stabilizing set.
fn newton_stationary(plant: &Plant, mut k: Mat, max_iter: usize) -> Result<(Mat, usize, Vec<f64>)> {
    let n = k.len();
    let grad = |k: &Mat| -> Result<nalgebra::DVector<f64>> {
        let g = subgrad::clarke_subgradient(plant, &Gain::new(k.clone()))?.g;
        Ok(nalgebra::DVector::from_column_slice(g.as_slice()))
    };
    let hessian = |k: &Mat| -> Result<Mat> {
        let mut h = Mat::zeros(n, n);
        for d in 0..n {
            let mut e = Mat::zeros(k.nrows(), k.ncols());
            e[d] = NEWTON_FD_STEP;
            let gp = grad(&(k + &e))?;
            let gm = grad(&(k - &e))?;
            h.set_column(d, &((gp - gm) / (2.0 * NEWTON_FD_STEP)));
        }
        Ok(crate::linalg::symmetrize(&h))
    };
    let mut iters = 0;
    let mut best = (k.clone(), grad(&k)?.norm());
    for it in 0..max_iter {
        iters = it + 1;
        let g = grad(&k)?;
        if g.norm() < best.1 {
            best = (k.clone(), g.norm());
        }
        if g.norm() < 1e-11 {
            break;
        }
        let Some(step) = hessian(&k)?.lu().solve(&g) else { break };
        let next = &k - Mat::from_column_slice(k.nrows(), k.ncols(), step.as_slice());
        if !plant::is_stabilizing(plant, &Gain::new(next.clone()))? || step.norm() < 1e-14 {
            break;
        }
        k = next;
    }
    let g = grad(&k)?;
    if g.norm() > best.1 {
        k = best.0;
    }
    let eigs = crate::linalg::sym_eigenvalues(&hessian(&k)?);
    Ok((k, iters, eigs))
}
