//! Task dispatch: each task runs one library routine and writes its artifacts.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use hinfopt::certify::{self, LiftedTriple, RiccatiOptions, RiccatiOutcome};
use hinfopt::hinf;
use hinfopt::landscape::{self, GridScan, SampleSpec, ScanOptions, SegmentOptions};
use hinfopt::linalg;
use hinfopt::optimizer::{self, MoreauOptions, RunLog, RunOptions, StepSchedule};
use hinfopt::plant::{self, ScanBox};
use hinfopt::subgrad;
use hinfopt::{builtin_example, par, Error, ExampleName, Gain, Plant};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{task_name, ExperimentConfig, PlantSpec, Probe, Task};
use crate::error::CliError;
use crate::svg::{self, Heatmap, LinePlot, Plot, Series};

/// Weak-convexity floor used to pick a default `rho` when the estimate is
/// zero (the prox subproblem needs `rho > m_hat`, and `rho = 2 m_hat = 0`
/// would make the envelope undefined).
pub const M_FLOOR: f64 = 1.0;
const STEP_TOLERANCES: [f64; 3] = [1e-1, 1e-2, 1e-3];
/// Sublevel used to estimate `m_hat` for `reproduce example2`.
const REPRODUCE_NU: f64 = 12.0;
const MAX_PLOT_POINTS: usize = 2000;
const MAX_HEATMAP_SIDE: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct BuildInfo {
    pub package: &'static str,
    pub version: &'static str,
    pub parallel: bool,
    pub threads: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct ExperimentReport {
    pub task: Task,
    pub config: ExperimentConfig,
    pub results: Value,
    pub wall_time_s: f64,
    pub build: BuildInfo,
}

pub fn build_info() -> BuildInfo {
    BuildInfo {
        package: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        parallel: par::is_parallel(),
        threads: rayon::current_num_threads(),
    }
}

/// Runs the configured task, writes its artifacts and `report.json` under
/// `output_dir`, and returns the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport, CliError> {
    let start = Instant::now();
    let out = config.output_dir.clone();
    fs::create_dir_all(&out).map_err(CliError::io(&out))?;
    let name = task_name(config.task);
    let plant = config.plant.build().map_err(CliError::task(name))?;
    let results = match config.task {
        Task::Validate => validate(&plant),
        Task::Norm => norm(config, &plant, &out),
        Task::Grad => grad(config, &plant),
        Task::Optimize => optimize(config, &plant, &out),
        Task::Landscape => landscape_task(config, &plant, &out),
        Task::Certify => certify_task(config, &plant),
        Task::Reproduce => reproduce(config, &plant, &out),
    }?;
    let report = ExperimentReport {
        task: config.task,
        config: config.clone(),
        results,
        wall_time_s: start.elapsed().as_secs_f64(),
        build: build_info(),
    };
    write_json(&out.join("report.json"), &report)?;
    Ok(report)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).expect("report values serialize");
    fs::write(path, text + "\n").map_err(CliError::io(path))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path).map(BufWriter::new).map_err(CliError::io(path))
}

/// `f64` for JSON: non-finite values become `null`.
fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else {
        Value::Null
    }
}

fn gain_of(config: &ExperimentConfig) -> Gain {
    Gain::from_rows(config.k0.as_deref().expect("validated: K0 present"))
}

fn scan_box(config: &ExperimentConfig) -> Result<ScanBox, CliError> {
    if let Some(b) = &config.scan_box {
        return Ok(b.clone());
    }
    match &config.plant {
        PlantSpec::Builtin { name, alpha } => Ok(builtin_example(*name, *alpha).expect("validated plant").1.scan_box),
        PlantSpec::Inline(_) => Err(CliError::Schema {
            pointer: "/box".into(),
            message: "inline plants need an explicit box".into(),
        }),
    }
}

fn validate(plant: &Plant) -> Result<Value, CliError> {
    let violations = plant::validate(plant);
    let d = plant.dims();
    Ok(json!({
        "valid": violations.is_empty(),
        "violations": violations,
        "dims": { "n_x": d.nx, "n_u": d.nu, "n_y": d.ny, "n_w": d.nw },
        "state_feedback": plant.is_state_feedback(),
    }))
}

fn norm(config: &ExperimentConfig, plant: &Plant, out: &Path) -> Result<Value, CliError> {
    let t = CliError::task("norm");
    let k = gain_of(config);
    let res = hinf::hinf_norm(plant, &k, &config.hinf).map_err(t)?;
    let bisection = hinf::hinf_bisection(plant, &k, 1e-8).map_err(CliError::task("norm"))?;
    let rho = plant.closed_loop(&k).map_err(CliError::task("norm"))?.rho;

    let n = 512;
    let mut pts = Vec::with_capacity(n + 1);
    let mut csv = String::from("omega,sigma_max\n");
    for i in 0..=n {
        let w = std::f64::consts::PI * i as f64 / n as f64;
        let tf = plant::transfer(plant, &k, w).map_err(CliError::task("norm"))?;
        let s = linalg::complex_singular_values(&tf)[0];
        csv.push_str(&format!("{w:e},{s:e}\n"));
        pts.push((w, s));
    }
    let csv_path = out.join("response.csv");
    fs::write(&csv_path, csv).map_err(CliError::io(&csv_path))?;
    let plot = LinePlot {
        title: "largest singular value of the closed-loop response".into(),
        x_label: "omega".into(),
        y_label: "sigma_max".into(),
        log_y: false,
        series: vec![Series { label: "sigma_max".into(), points: pts }],
    };
    svg::emit_svg(&Plot::Line(plot), &out.join("response.svg"))?;

    Ok(json!({
        "J": res.value,
        "bisection": bisection,
        "spectral_radius": rho,
        "flat": res.flat,
        "grid_size": res.grid_size,
        "refinement_tol": res.refinement_tol,
        "active": res.active.iter().map(|a| json!({ "omega": a.omega, "sigma": a.triple.sigma })).collect::<Vec<_>>(),
    }))
}

fn grad(config: &ExperimentConfig, plant: &Plant) -> Result<Value, CliError> {
    let k = gain_of(config);
    let info = subgrad::clarke_subgradient_with(plant, &k, &config.hinf).map_err(CliError::task("grad"))?;
    let gens = subgrad::subdifferential_sample(plant, &k, config.hinf.delta_active).map_err(CliError::task("grad"))?;
    let mn = subgrad::min_norm_element(&gens).map_err(CliError::task("grad"))?;
    Ok(json!({
        "J": info.j_at_k,
        "G": linalg::mat_to_rows(&info.g),
        "grad_norm": info.g.norm(),
        "omega": info.omega,
        "sigma": info.triple.sigma,
        "n_generators": gens.len(),
        "dist_estimate": mn.norm,
        "min_norm_element": linalg::mat_to_rows(&mn.point),
    }))
}

fn certify_task(config: &ExperimentConfig, plant: &Plant) -> Result<Value, CliError> {
    let t = || CliError::task("certify");
    let k = gain_of(config);
    let gamma = config.gamma.expect("validated: gamma present");
    let outcome = certify::riccati_fixed_point(plant, &k, gamma, &RiccatiOptions::default()).map_err(t())?;
    let mut res = json!({ "gamma": gamma, "feasible": outcome.is_feasible(), "iterations": outcome.iterations() });
    match outcome {
        RiccatiOutcome::Feasible { p, lambda_max, .. } => {
            res["P"] = json!(linalg::mat_to_rows(&p));
            res["lambda_max_of_Lambda"] = json!(lambda_max);
            if plant.is_state_feedback() {
                let lifted = LiftedTriple { k: k.into_inner(), gamma, p };
                let cvx = certify::pi_map(&lifted).map_err(t())?;
                let lmi = certify::lmi_matrix(plant, gamma, &cvx.y, &cvx.x).map_err(t())?;
                res["lmi"] = json!({
                    "Y": linalg::mat_to_rows(&cvx.y),
                    "X": linalg::mat_to_rows(&cvx.x),
                    "lambda_max": linalg::lambda_max_sym(&lmi),
                });
            }
        }
        RiccatiOutcome::Infeasible { reason, .. } => {
            res["P"] = Value::Null;
            res["lambda_max_of_Lambda"] = Value::Null;
            res["reason"] = json!(reason);
        }
    }
    Ok(res)
}

/// `rho` for Moreau sampling: explicit, or `2 max(m_hat, M_FLOOR)`.
fn resolve_rho(config: &ExperimentConfig, m_hat: f64) -> f64 {
    config.rho.unwrap_or(2.0 * m_hat.max(M_FLOOR))
}

fn run_options(config: &ExperimentConfig, m_hat: f64) -> RunOptions {
    RunOptions {
        log_moreau_every: config.log_moreau_every,
        rho: Some(resolve_rho(config, m_hat)),
        moreau: MoreauOptions { m_hat, ..Default::default() },
        divergence_cap: config.divergence_cap,
        hinf: config.hinf,
    }
}

fn write_run_csv(log: &RunLog, path: &Path) -> Result<(), CliError> {
    log.write_csv(create(path)?).map_err(CliError::io(path))
}

fn thin(points: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    let stride = points.len().div_ceil(MAX_PLOT_POINTS).max(1);
    let last = points.last().copied();
    let mut out: Vec<(f64, f64)> = points.into_iter().step_by(stride).collect();
    if let Some(l) = last {
        if out.last() != Some(&l) {
            out.push(l);
        }
    }
    out
}

fn running_min_series(log: &RunLog, f: impl Fn(f64) -> f64) -> Vec<(f64, f64)> {
    let vals: Vec<f64> = log.iterates.iter().map(|r| f(r.j)).collect();
    let mins = optimizer::running_min(&vals);
    thin(log.iterates.iter().zip(mins).map(|(r, m)| (r.t as f64, m)).collect())
}

/// Running minimum of squared Moreau gradient norms, as `(t, value)`.
fn moreau_running_sq(log: &RunLog) -> Vec<(usize, f64)> {
    let samples: Vec<(usize, f64)> =
        log.moreau.iter().flatten().filter_map(|s| s.grad_norm.map(|g| (s.t, g * g))).collect();
    let mins = optimizer::running_min(&samples.iter().map(|s| s.1).collect::<Vec<_>>());
    samples.iter().zip(mins).map(|(s, m)| (s.0, m)).collect()
}

fn run_summary_json(log: &RunLog, rho: Option<f64>) -> Result<Value, CliError> {
    let s = optimizer::summarize_run(log, &STEP_TOLERANCES).map_err(CliError::task("optimize"))?;
    let best = &log.iterates[log.best_index];
    let last = log.iterates.last().expect("nonempty log");
    let mut v = json!({
        "status": log.status,
        "all_stabilizing": log.iterates.iter().all(|r| r.stabilizing),
        "iterations": last.t,
        "min_J": num(s.min_j),
        "argmin_t": s.argmin_t,
        "best_K": linalg::mat_to_rows(&best.k),
        "final_K": linalg::mat_to_rows(&last.k),
        "final_J": num(last.j),
        "min_grad_norm": num(s.min_grad_norm),
        "min_moreau_grad": s.min_moreau_grad.map(num),
        "steps_to_tolerance": s.steps_to_tolerance.iter().map(|(e, t)| json!({ "eps": e, "t": t })).collect::<Vec<_>>(),
    });
    if log.moreau.is_some() {
        let horizon = last.t;
        let rm = moreau_running_sq(log);
        let at = |t: usize| rm.iter().take_while(|s| s.0 <= t).last().map(|s| s.1);
        let (q, f) = (at(horizon / 4), at(horizon));
        v["moreau"] = json!({
            "rho": rho,
            "samples": rm.len(),
            "running_min_sq_at_quarter": q.map(num),
            "running_min_sq_at_T": f.map(num),
        });
    }
    Ok(v)
}

fn optimize(config: &ExperimentConfig, plant: &Plant, out: &Path) -> Result<Value, CliError> {
    let m_hat = config.m_hat.unwrap_or(0.0);
    let opts = run_options(config, m_hat);
    let log = optimizer::subgradient_method(plant, &gain_of(config), &config.schedule, config.horizon, &opts)
        .map_err(CliError::task("optimize"))?;
    write_run_csv(&log, &out.join("run.csv"))?;
    let raw = thin(log.iterates.iter().filter(|r| r.j.is_finite()).map(|r| (r.t as f64, r.j)).collect());
    let plot = LinePlot {
        title: "subgradient method".into(),
        x_label: "iteration t".into(),
        y_label: "J(K_t)".into(),
        log_y: true,
        series: vec![
            Series { label: "J(K_t)".into(), points: raw },
            Series { label: "running min".into(), points: running_min_series(&log, |j| j) },
        ],
    };
    svg::emit_svg(&Plot::Line(plot), &out.join("cost.svg"))?;
    let rho = (config.log_moreau_every > 0).then(|| resolve_rho(config, m_hat));
    let mut v = run_summary_json(&log, rho)?;
    v["schedule"] = json!(config.schedule);
    Ok(v)
}

fn scan_heatmap(scan: &GridScan, title: &str) -> Heatmap {
    let res = scan.resolution;
    let stride = res.div_ceil(MAX_HEATMAP_SIDE).max(1);
    let side = res.div_ceil(stride);
    let mut values = Vec::with_capacity(side * side);
    // Rows run along k2 (the vertical axis), columns along k1.
    for r in 0..side {
        for c in 0..side {
            let idx = scan.index(c * stride, r * stride);
            values.push(match (&scan.j_values, scan.stabilizing[idx]) {
                (Some(j), true) => Some(j[idx]),
                (None, true) => Some(scan.component[idx].unwrap_or(0) as f64),
                _ => None,
            });
        }
    }
    Heatmap {
        title: title.into(),
        x_range: (scan.scan_box.lo[0], scan.scan_box.hi[0]),
        y_range: (scan.scan_box.lo[1], scan.scan_box.hi[1]),
        nx: side,
        ny: side,
        values,
        log_color: scan.j_values.is_some(),
    }
}

fn landscape_task(config: &ExperimentConfig, plant: &Plant, out: &Path) -> Result<Value, CliError> {
    let t = || CliError::task("landscape");
    let bx = scan_box(config)?;
    let d = plant.dims();
    let mut res = json!({});
    let mut scan = None;
    match d.nu * d.ny {
        1 => {
            let n = config.resolution;
            let mut csv = String::from("k,J\n");
            let mut pts = Vec::new();
            for i in 0..n {
                let k = bx.lo[0] + (bx.hi[0] - bx.lo[0]) * (i as f64 + 0.5) / n as f64;
                let gain = Gain::scalar(k);
                let j = if plant::is_stabilizing(plant, &gain).map_err(t())? {
                    hinf::hinf_value(plant, &gain, &config.hinf).map_err(t())?
                } else {
                    f64::INFINITY
                };
                csv.push_str(&format!("{k:e},{}\n", if j.is_finite() { format!("{j:e}") } else { String::new() }));
                pts.push((k, j));
            }
            let path = out.join("curve.csv");
            fs::write(&path, csv).map_err(CliError::io(&path))?;
            let (kmin, jmin) = pts.iter().filter(|p| p.1.is_finite()).fold((f64::NAN, f64::INFINITY), |a, p| {
                if p.1 < a.1 {
                    *p
                } else {
                    a
                }
            });
            let plot = LinePlot {
                title: "J(K) over the gain range".into(),
                x_label: "k".into(),
                y_label: "J(k)".into(),
                log_y: true,
                series: vec![Series { label: "J".into(), points: pts }],
            };
            svg::emit_svg(&Plot::Line(plot), &out.join("curve.svg"))?;
            res["curve"] = json!({ "points": n, "J_star_grid": num(jmin), "argmin_k": num(kmin) });
        }
        2 => {
            let opts = ScanOptions { evaluate_cost: config.evaluate_cost, hinf: config.hinf };
            let s = landscape::grid_scan_2d_with(plant, &bx, config.resolution, &opts).map_err(t())?;
            let path = out.join("scan.csv");
            s.write_csv(create(&path)?).map_err(CliError::io(&path))?;
            svg::emit_svg(&Plot::Heatmap(scan_heatmap(&s, "H-infinity cost over the gain box")), &out.join("heatmap.svg"))?;
            let comp = json!({
                "n_components": s.n_components,
                "resolution": s.resolution,
                "box": s.scan_box,
                "n_stabilizing": s.stabilizing.iter().filter(|&&b| b).count(),
                "J_star_grid": s.j_star_grid.map(num),
                "argmin_cell": s.argmin_cell,
                "argmin_K": s.argmin_cell.map(|(i, j)| s.cell_center(i, j)),
            });
            write_json(&out.join("components.json"), &comp)?;
            res["scan"] = comp;
            scan = Some(s);
        }
        _ if !config.probes.is_empty() => {}
        _ => return Err(t()(Error::WrongGainShape { rows: d.nu, cols: d.ny })),
    }

    let spec = |seed: u64| SampleSpec::new(config.nu.unwrap_or(f64::INFINITY), bx.clone(), seed);
    let seg = SegmentOptions { n_segments: config.n_segments, n_points: config.n_points };
    for probe in &config.probes {
        match probe {
            Probe::WeakConvexity => {
                let est = landscape::estimate_weak_convexity(plant, &spec(config.seed), &seg).map_err(t())?;
                let check = landscape::check_weak_convexity(plant, 2.0 * est.m_hat, &spec(config.seed + 1), &seg)
                    .map_err(t())?;
                res["weak_convexity"] = json!({ "estimate": est, "fresh_seed_check": check });
            }
            Probe::Lipschitz => {
                let l = landscape::estimate_lipschitz(plant, &spec(config.seed), config.n_samples).map_err(t())?;
                res["lipschitz_estimate"] = json!(l);
            }
            Probe::WeakPl => {
                let j_star = scan
                    .as_ref()
                    .and_then(|s| s.j_star_grid)
                    .or_else(|| config.plant.builtin_name().and_then(|n| builtin_example(n, None).ok()?.1.j_star))
                    .ok_or_else(|| CliError::Schema {
                        pointer: "/probes".into(),
                        message: "weak_pl needs a cost scan or a known optimum".into(),
                    })?;
                res["weak_pl"] = weak_pl_probe(plant, &spec(config.seed), config.n_samples, j_star)?;
            }
            Probe::Saddle => {
                let s = scan.as_ref().filter(|s| s.j_values.is_some()).ok_or_else(|| CliError::Schema {
                    pointer: "/probes".into(),
                    message: "saddle needs a 2-D cost scan (evaluate_cost = true)".into(),
                })?;
                res["saddle"] = json!(landscape::find_saddle_witness(plant, s).map_err(t())?);
            }
        }
    }
    Ok(res)
}

/// Weak-PL ratios over sampled gains; `dist` values are estimates from the
/// sampled generator set.
pub fn weak_pl_probe(plant: &Plant, spec: &SampleSpec, count: usize, j_star: f64) -> Result<Value, CliError> {
    let t = || CliError::task("landscape");
    let gains = landscape::sample_gains(plant, spec, count).map_err(t())?;
    let rows = par::map_slice(&gains, |k| -> hinfopt::Result<Value> {
        let j = hinf::hinf_value(plant, k, &hinf::HinfOptions::default())?;
        let dist = landscape::dist_estimate(plant, k)?;
        let ratio = match landscape::weak_pl_ratio(plant, k, j_star) {
            Ok(r) => Some(r),
            Err(Error::AtOptimum) => None,
            Err(e) => return Err(e),
        };
        Ok(json!({ "K": k.to_rows(), "J": j, "dist_estimate": dist, "ratio": ratio }))
    });
    let rows: Vec<Value> = rows.into_iter().collect::<hinfopt::Result<_>>().map_err(t())?;
    let ratios: Vec<f64> = rows.iter().filter_map(|r| r["ratio"].as_f64()).collect();
    let spurious = rows.iter().filter(|r| {
        let (j, d) = (r["J"].as_f64().unwrap_or(0.0), r["dist_estimate"].as_f64().unwrap_or(f64::INFINITY));
        d <= 1e-3 && j - j_star >= 0.1 * j_star
    });
    Ok(json!({
        "J_star": j_star,
        "samples": rows.len(),
        "ratios_defined": ratios.len(),
        "min_ratio": ratios.iter().cloned().fold(f64::INFINITY, f64::min),
        "all_positive": ratios.iter().all(|&r| r > 0.0),
        "spurious_stationary_points": spurious.count(),
        "points": rows,
    }))
}

struct ReproduceRun {
    dir: PathBuf,
    k0: Vec<f64>,
    alpha: f64,
}

fn reproduce(config: &ExperimentConfig, plant: &Plant, out: &Path) -> Result<Value, CliError> {
    let t = || CliError::task("reproduce");
    let example = config.plant.builtin_name().expect("validated: builtin plant");
    let k0s: [[f64; 2]; 2] = match example {
        ExampleName::Example2 => [[0.0, -1.9], [0.2, -2.0]],
        _ => [[0.0, 0.0], [-5.0, -2.0]],
    };
    let j_ref = builtin_example(example, config.plant_alpha()).map_err(t())?.1.j_star;
    let horizon = config.horizon;

    let (m_hat, m_hat_source) = match (config.log_moreau_every, config.m_hat) {
        (0, m) => (m.unwrap_or(0.0), "unused"),
        (_, Some(m)) => (m, "config"),
        (_, None) => {
            let bx = scan_box(config)?;
            let spec = SampleSpec::new(REPRODUCE_NU, bx, config.seed);
            let seg = SegmentOptions { n_segments: config.n_segments, n_points: config.n_points };
            (landscape::estimate_weak_convexity(plant, &spec, &seg).map_err(t())?.m_hat, "estimated")
        }
    };
    let opts = run_options(config, m_hat);
    let rho = (config.log_moreau_every > 0).then(|| resolve_rho(config, m_hat));

    let mut runs = Vec::new();
    for (i, k0) in k0s.iter().enumerate() {
        for alpha in [1e-3, 1e-4] {
            let dir = out.join("runs").join(format!("k0_{}_alpha_{alpha:e}", i + 1));
            runs.push(ReproduceRun { dir, k0: k0.to_vec(), alpha });
        }
    }
    for r in &runs {
        fs::create_dir_all(&r.dir).map_err(CliError::io(&r.dir))?;
    }
    let logs = par::map_slice(&runs, |r| {
        // Constant steps expressed through the horizon-scaled schedule.
        let schedule = StepSchedule::sqrt_horizon(r.alpha * ((horizon + 1) as f64).sqrt(), horizon)?;
        optimizer::subgradient_method(plant, &Gain::row(&r.k0), &schedule, horizon, &opts)
    });

    let mut summaries = Vec::new();
    let mut cost_series = Vec::new();
    let mut moreau_series = Vec::new();
    let mut grad_series = Vec::new();
    for (r, log) in runs.iter().zip(logs) {
        let log = log.map_err(t())?;
        write_run_csv(&log, &r.dir.join("run.csv"))?;
        let label = format!("K0={:?}, alpha={:e}", r.k0, r.alpha);
        let mut s = run_summary_json(&log, rho)?;
        s["K0"] = json!(r.k0);
        s["alpha"] = json!(r.alpha);
        s["dir"] = json!(r.dir);
        if let Some(js) = j_ref {
            let min_res = log.iterates.iter().map(|it| (it.j - js).abs() / js).fold(f64::INFINITY, f64::min);
            s["min_relative_residual"] = num(min_res);
            cost_series.push(Series { label: label.clone(), points: running_min_series(&log, |j| (j - js).abs() / js) });
        } else {
            cost_series.push(Series { label: label.clone(), points: running_min_series(&log, |j| j) });
        }
        let g2: Vec<f64> = log.iterates.iter().map(|it| it.grad_norm * it.grad_norm).collect();
        let g2min = optimizer::running_min(&g2.iter().map(|g| if g.is_nan() { f64::INFINITY } else { *g }).collect::<Vec<_>>());
        grad_series.push(Series {
            label: label.clone(),
            points: thin(log.iterates.iter().zip(g2min).map(|(it, g)| (it.t as f64, g)).collect()),
        });
        if log.moreau.is_some() {
            let pts = moreau_running_sq(&log).into_iter().map(|(t, v)| (t as f64, v)).collect();
            moreau_series.push(Series { label, points: pts });
        }
        summaries.push(s);
    }

    let line = |title: &str, y: &str, series: Vec<Series>| {
        Plot::Line(LinePlot { title: title.into(), x_label: "iteration t".into(), y_label: y.into(), log_y: true, series })
    };
    if j_ref.is_some() {
        svg::emit_svg(&line("best relative residual", "min_t |J - J*| / J*", cost_series), &out.join("residual.svg"))?;
    } else {
        svg::emit_svg(&line("best cost", "min_t J(K_t)", cost_series), &out.join("min_cost.svg"))?;
    }
    svg::emit_svg(&line("best squared subgradient norm", "min_t ||G_t||^2", grad_series), &out.join("min_grad_sq.svg"))?;
    if !moreau_series.is_empty() {
        svg::emit_svg(&line("Moreau stationarity", "min ||grad J_rho||^2", moreau_series), &out.join("moreau.svg"))?;
    }

    let best = summaries
        .iter()
        .enumerate()
        .filter_map(|(i, s)| s["min_relative_residual"].as_f64().or(s["min_J"].as_f64()).map(|v| (i, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(i, _)| i);
    Ok(json!({
        "example": example,
        "J_reference": j_ref,
        "T": horizon,
        "m_hat": m_hat,
        "m_hat_source": m_hat_source,
        "rho": rho,
        "best_run": best,
        "runs": summaries,
    }))
}

impl ExperimentConfig {
    fn plant_alpha(&self) -> Option<f64> {
        match &self.plant {
            PlantSpec::Builtin { alpha, .. } => *alpha,
            PlantSpec::Inline(_) => None,
        }
    }
}
