//! Benchmark stages and the acceptance report.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::chain::{lumpable_chain, sweep, verify_bounds, Lumping, SweepSummary, WeightLaw};
use crate::config::{PipelineConfig, RcMode};
use crate::density::{estimate_stationary_density, kde, mean_embedding, DensityField, WeightedL2};
use crate::dynamics::{long_trajectory, EndpointSampler, Trajectory};
use crate::error::{Error, Result};
use crate::grid::GridPartition;
use crate::io::{fmt, fmt_opt, read_trajectory_bin, write_csv, write_json, write_trajectory_bin};
use crate::manifold::{
    median_anchor_spacing, mep_manifold, project_density_field, project_embedded, weak_score,
    ManifoldAtlas, ProjectionResult, QuadraticFit, ReducibilityReport,
};
use crate::potential::Banana;
use crate::rc::{
    build_rc_ideal, build_rc_naive, build_rc_scattered, compare_spectra, effective_operator,
    eigenvalue_bound_strong, eigenvalue_bound_weak, level_set_weights, rc_lattice_starts, spearman,
    LevelSetWeights, RCField, RcBinning, SpectrumComparison,
};
use crate::rng::{Stream, StreamTag};
use crate::ulam::{build_ulam, relaxation_rates, spectrum, EigenPair, UlamOperator};

/// Start-index offsets keep the independent-noise streams of different
/// start sets apart. Anchors use indices from 0.
const UNIFORM_INDEX: u64 = 1 << 40;
const EQUILIBRIUM_INDEX: u64 = 2 << 40;
const LATTICE_INDEX: u64 = 3 << 40;

/// Predicted eigenvalue gap of the ideal coordinate.
pub const PREDICTED_GAP: f64 = 0.06;

#[derive(Serialize)]
struct WithConfig<'a, T: Serialize> {
    config: &'a PipelineConfig,
    #[serde(flatten)]
    body: &'a T,
}

fn write_report<T: Serialize>(cfg: &PipelineConfig, name: &str, body: &T) -> Result<PathBuf> {
    let path = cfg.output.join(name);
    write_json(&path, &WithConfig { config: cfg, body })?;
    Ok(path)
}

// ---------------------------------------------------------------- simulate

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryInfo {
    pub hash: String,
    pub n_states: usize,
    pub record_dt: f64,
    pub lag_samples: usize,
    pub cached: bool,
    pub fraction_outside: f64,
}

/// Content hash of everything the long trajectory depends on.
pub fn trajectory_hash(cfg: &PipelineConfig) -> String {
    let key = format!(
        "v1 banana beta={:?} dt={:?} seed={} domain={:?} n_steps={} burn_in={} stride={} x0={:?}",
        cfg.beta, cfg.dt, cfg.seed, cfg.domain, cfg.n_steps, cfg.burn_in, cfg.record_stride, cfg.x0
    );
    let digest = Sha256::digest(key.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Loads the cached trajectory or simulates and caches it.
pub fn load_trajectory(cfg: &PipelineConfig) -> Result<(Trajectory, TrajectoryInfo)> {
    let hash = trajectory_hash(cfg);
    let path = cfg.output.join("cache").join(format!("trajectory-{hash}.bin"));
    let record_dt = cfg.dt * cfg.record_stride as f64;
    let expected = (cfg.n_steps.saturating_sub(cfg.burn_in) / cfg.record_stride as u64) as usize;
    let cached = path.exists()
        && std::fs::metadata(&path).map(|m| m.len()).unwrap_or(0) == (expected * 16) as u64;
    let traj = if cached {
        read_trajectory_bin(&path, 2, record_dt)?
    } else {
        let sim = cfg.simulation()?;
        let t = long_trajectory(
            &Banana,
            &sim,
            &cfg.x0,
            cfg.n_steps as usize,
            cfg.burn_in as usize,
            cfg.record_stride,
        )?;
        write_trajectory_bin(&path, &t)?;
        t
    };
    let domain = cfg.box_domain();
    let outside = traj.iter().filter(|x| !domain.contains(x)).count();
    let info = TrajectoryInfo {
        hash,
        n_states: traj.len(),
        record_dt,
        lag_samples: cfg.lag_samples(),
        cached,
        fraction_outside: outside as f64 / traj.len() as f64,
    };
    Ok((traj, info))
}

pub fn cmd_simulate(cfg: &PipelineConfig) -> Result<TrajectoryInfo> {
    let (traj, info) = load_trajectory(cfg)?;
    let rows = traj.iter().enumerate().step_by(cfg.csv_stride).map(|(i, x)| {
        [fmt(i as f64 * info.record_dt), fmt(x[0]), fmt(x[1])]
    });
    write_csv(&cfg.output.join("trajectory.csv"), &["t", "x1", "x2"], rows)?;
    write_report(cfg, "trajectory.json", &info)?;
    Ok(info)
}

// ---------------------------------------------------------------- spectrum

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumReport {
    pub lambda: Vec<f64>,
    pub sigma: Vec<Option<f64>>,
    /// `λ₁ − λ₂`.
    pub spectral_gap: f64,
    pub n_states: usize,
    pub n_pairs: usize,
    pub row_sum_error: f64,
    pub detailed_balance_residual: f64,
    pub raw_asymmetry: f64,
    pub max_eigen_residual: f64,
}

pub struct SpectrumStage {
    pub op: UlamOperator,
    pub pairs: Vec<EigenPair>,
    pub report: SpectrumReport,
}

pub fn spectrum_stage(cfg: &PipelineConfig, traj: &Trajectory, grid: &GridPartition) -> Result<SpectrumStage> {
    let op = build_ulam(traj, cfg.lag_samples(), grid)?;
    op.check_invariants(1e-12)?;
    let k = cfg.n_eigen.min(op.n_states());
    let pairs = spectrum(&op, k)?;
    let lambda: Vec<f64> = pairs.iter().map(|p| p.eigenvalue).collect();
    let report = SpectrumReport {
        sigma: relaxation_rates(&pairs, op.lag),
        spectral_gap: lambda.get(1).copied().unwrap_or(f64::NAN) - lambda.get(2).copied().unwrap_or(f64::NAN),
        lambda,
        n_states: op.n_states(),
        n_pairs: op.n_pairs,
        row_sum_error: op.row_sum_error(),
        detailed_balance_residual: op.detailed_balance_residual(),
        raw_asymmetry: op.raw_asymmetry,
        max_eigen_residual: pairs.iter().map(|p| p.residual).fold(0.0, f64::max),
    };
    Ok(SpectrumStage { op, pairs, report })
}

fn write_spectrum(cfg: &PipelineConfig, s: &SpectrumStage) -> Result<()> {
    let rows = s
        .report
        .lambda
        .iter()
        .zip(&s.report.sigma)
        .enumerate()
        .map(|(i, (l, r))| [i.to_string(), fmt(*l), fmt_opt(*r)]);
    write_csv(&cfg.output.join("spectrum.csv"), &["i", "lambda", "sigma"], rows)?;
    write_report(cfg, "spectrum.json", &s.report)?;
    Ok(())
}

pub fn cmd_spectrum(cfg: &PipelineConfig) -> Result<SpectrumReport> {
    let (traj, _) = load_trajectory(cfg)?;
    let s = spectrum_stage(cfg, &traj, &cfg.grid_partition()?)?;
    write_spectrum(cfg, &s)?;
    Ok(s.report)
}

// ---------------------------------------------------------------- starts

/// `n_starts` uniform draws on the domain.
pub fn uniform_starts(cfg: &PipelineConfig) -> Vec<Vec<f64>> {
    let mut s = Stream::new(cfg.seed, StreamTag::UniformStarts, 0, 0);
    let (lo, hi) = (cfg.domain[0], cfg.domain[1]);
    (0..cfg.n_starts)
        .map(|_| vec![s.uniform_in(lo, hi), s.uniform_in(lo, hi)])
        .collect()
}

/// `n_eq_starts` states drawn uniformly from the trajectory.
pub fn equilibrium_starts(cfg: &PipelineConfig, traj: &Trajectory) -> Vec<Vec<f64>> {
    let mut s = Stream::new(cfg.seed, StreamTag::EquilibriumStarts, 0, 0);
    (0..cfg.n_eq_starts)
        .map(|_| traj.state(s.below(traj.len() as u64) as usize).to_vec())
        .collect()
}

fn embed_starts<P: crate::potential::Potential + ?Sized>(
    sampler: &EndpointSampler<'_, P>,
    starts: &[Vec<f64>],
    first: u64,
) -> Result<Vec<Vec<f64>>> {
    starts
        .par_iter()
        .enumerate()
        .map(|(k, s)| Ok(mean_embedding(&sampler.sample(s, first + k as u64)?)?.mean))
        .collect()
}

// ---------------------------------------------------------------- embed

#[derive(Debug, Clone, Serialize)]
pub struct EmbedReport {
    pub n_starts: usize,
    pub fit: QuadraticFit,
    pub median_spacing: f64,
    /// Range of the first embedded coordinate over which curve distances
    /// are measured.
    pub curve_range: [f64; 2],
    pub outliers: usize,
    pub outliers_below_mep: usize,
    pub x_star_embedded_residual: f64,
    pub max_uniform_embedded_residual: f64,
    pub max_uniform_embedded_argmax: Vec<f64>,
    pub n_eq_starts: usize,
    pub eq_within_3_spacings: f64,
}

pub struct EmbedStage {
    pub atlas: ManifoldAtlas,
    pub starts: Vec<Vec<f64>>,
    pub embedded: Vec<Vec<f64>>,
    pub projections: Vec<ProjectionResult>,
    pub report: EmbedReport,
}

pub fn embed_stage(cfg: &PipelineConfig, traj: &Trajectory) -> Result<EmbedStage> {
    let sim = cfg.simulation()?;
    let sampler = EndpointSampler::new(&Banana, sim, cfg.m, cfg.coupling)?;
    let atlas = mep_manifold(&sampler, cfg.n_anchors)?;
    let anchor_means: Vec<Vec<f64>> = atlas.anchors().iter().map(|a| a.embedded.clone()).collect();
    let fit = QuadraticFit::fit(&anchor_means)?;
    let spacing = median_anchor_spacing(&atlas);
    let (lo, hi) = anchor_means
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), m| (a.min(m[0]), b.max(m[0])));
    let curve = [lo - 0.5, hi + 0.5];
    let dist = |m: &[f64]| fit.distance(m, curve[0], curve[1], 4001);

    let starts = uniform_starts(cfg);
    let embedded = embed_starts(&sampler, &starts, UNIFORM_INDEX)?;
    let projections = starts
        .iter()
        .zip(&embedded)
        .map(|(s, m)| {
            project_embedded(
                &atlas,
                &crate::density::EmbeddedPoint {
                    start: s.clone(),
                    mean: m.clone(),
                    m: cfg.m,
                },
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut outliers = 0;
    let mut below = 0;
    for (s, m) in starts.iter().zip(&embedded) {
        if dist(m) > 3.0 * spacing {
            outliers += 1;
            below += (s[1] < 1.0 - s[0] * s[0]) as usize;
        }
    }
    let (max_res, arg) = projections
        .iter()
        .enumerate()
        .fold((f64::NEG_INFINITY, 0), |acc, (i, p)| if p.residual > acc.0 { (p.residual, i) } else { acc });
    let x_star = sampler.sample(&cfg.x_star, UNIFORM_INDEX + cfg.n_starts as u64)?;
    let x_star_res = project_embedded(&atlas, &mean_embedding(&x_star)?)?.residual;

    let eq = equilibrium_starts(cfg, traj);
    let eq_embedded = embed_starts(&sampler, &eq, EQUILIBRIUM_INDEX)?;
    let within = eq_embedded.iter().filter(|m| dist(m) < 3.0 * spacing).count();

    let report = EmbedReport {
        n_starts: starts.len(),
        fit,
        median_spacing: spacing,
        curve_range: curve,
        outliers,
        outliers_below_mep: below,
        x_star_embedded_residual: x_star_res,
        max_uniform_embedded_residual: max_res,
        max_uniform_embedded_argmax: starts[arg].clone(),
        n_eq_starts: eq.len(),
        eq_within_3_spacings: within as f64 / eq.len() as f64,
    };
    Ok(EmbedStage {
        atlas,
        starts,
        embedded,
        projections,
        report,
    })
}

fn write_embed(cfg: &PipelineConfig, e: &EmbedStage) -> Result<()> {
    let rows = e
        .starts
        .iter()
        .zip(&e.embedded)
        .zip(&e.projections)
        .map(|((s, m), p)| [fmt(s[0]), fmt(s[1]), fmt(m[0]), fmt(m[1]), fmt(p.y), fmt(p.residual)]);
    write_csv(
        &cfg.output.join("embedding.csv"),
        &["start_x1", "start_x2", "m1", "m2", "anchor_y", "residual"],
        rows,
    )?;
    let rows = e.atlas.anchors().iter().enumerate().map(|(k, a)| {
        [k.to_string(), fmt(a.y), fmt(a.state[0]), fmt(a.state[1]), fmt(a.embedded[0]), fmt(a.embedded[1])]
    });
    write_csv(&cfg.output.join("anchors.csv"), &["k", "y", "q1", "q2", "m1", "m2"], rows)?;
    write_report(cfg, "embedding.json", &e.report)?;
    Ok(())
}

pub fn cmd_embed(cfg: &PipelineConfig) -> Result<EmbedReport> {
    let (traj, _) = load_trajectory(cfg)?;
    let e = embed_stage(cfg, &traj)?;
    write_embed(cfg, &e)?;
    Ok(e.report)
}

// ---------------------------------------------------------------- reducibility

#[derive(Debug, Clone, Serialize)]
pub struct XStarReport {
    pub start: Vec<f64>,
    pub anchor: usize,
    pub y: f64,
    pub residual: f64,
    pub level_set_weak: Option<f64>,
    pub level_set_count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReducibilityOutput {
    #[serde(flatten)]
    pub report: ReducibilityReport,
    pub x_star: XStarReport,
    /// Strong score over the uniform starts alone.
    pub uniform_strong_score: f64,
    pub rho_kind: &'static str,
    pub m_density: usize,
    pub n_starts: usize,
}

pub struct ReducibilityStage {
    pub rho: DensityField,
    pub results: Vec<ProjectionResult>,
    pub output: ReducibilityOutput,
}

pub fn reducibility_stage(cfg: &PipelineConfig, traj: &Trajectory, grid: &GridPartition) -> Result<ReducibilityStage> {
    let rho = estimate_stationary_density(traj, grid, cfg.rho_bandwidth)?;
    let metric = WeightedL2::with_relative_floor(&rho, cfg.rho_floor)?;
    let sampler = EndpointSampler::new(&Banana, cfg.simulation()?, cfg.m_density, cfg.coupling)?;
    let atlas = mep_manifold(&sampler, cfg.n_anchors)?.with_densities(grid, cfg.bandwidth)?;
    let mut starts = uniform_starts(cfg);
    starts.push(cfg.x_star.to_vec());
    let results: Vec<ProjectionResult> = starts
        .par_iter()
        .enumerate()
        .map(|(k, s)| {
            let cloud = sampler.sample(s, UNIFORM_INDEX + k as u64)?;
            let field = kde(&cloud, grid, cfg.bandwidth)?;
            project_density_field(&atlas, s, &field, &metric)
        })
        .collect::<Result<_>>()?;
    let report = weak_score(&results, &rho, &atlas, metric.floor, cfg.bandwidth)?;
    let xs = results.last().expect("x* appended");
    let level = report.level_set(xs.anchor);
    let x_star = XStarReport {
        start: xs.start.clone(),
        anchor: xs.anchor,
        y: xs.y,
        residual: xs.residual,
        level_set_weak: level.map(|l| l.weak),
        level_set_count: results.iter().filter(|r| r.anchor == xs.anchor).count(),
    };
    let uniform_strong_score = results[..results.len() - 1]
        .iter()
        .map(|r| r.residual)
        .fold(0.0, f64::max);
    Ok(ReducibilityStage {
        output: ReducibilityOutput {
            report,
            x_star,
            uniform_strong_score,
            rho_kind: if cfg.rho_bandwidth == 0.0 { "histogram" } else { "kde" },
            m_density: cfg.m_density,
            n_starts: cfg.n_starts,
        },
        rho,
        results,
    })
}

fn write_reducibility(cfg: &PipelineConfig, r: &ReducibilityStage) -> Result<()> {
    let rows = r.results.iter().map(|p| {
        [fmt(p.start[0]), fmt(p.start[1]), fmt(p.y), fmt(p.residual), fmt(r.rho.value_at(&p.start))]
    });
    write_csv(
        &cfg.output.join("residuals.csv"),
        &["start_x1", "start_x2", "anchor_y", "residual", "rho_hat"],
        rows,
    )?;
    write_report(cfg, "reducibility.json", &r.output)?;
    Ok(())
}

pub fn cmd_reducibility(cfg: &PipelineConfig) -> Result<ReducibilityOutput> {
    let (traj, _) = load_trajectory(cfg)?;
    let r = reducibility_stage(cfg, &traj, &cfg.grid_partition()?)?;
    write_reducibility(cfg, &r)?;
    Ok(r.output)
}

// ---------------------------------------------------------------- rc-compare

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateReport {
    pub name: &'static str,
    #[serde(flatten)]
    pub comparison: SpectrumComparison,
    pub n_bins_occupied: usize,
    pub projection_error: f64,
    pub max_avg_deviation: f64,
    pub max_sup_deviation: f64,
    /// `projection_error ≤ 2 · max_avg_deviation`.
    pub average_deviation_bound_holds: bool,
    /// Rank correlation of the coordinate with `φ₁` over occupied cells.
    pub spearman_phi1: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RcCompareReport {
    pub xi1: CoordinateReport,
    pub xi2: CoordinateReport,
    pub rc_mode: RcMode,
    /// Weak-reducibility ε fed into the weak bound, when known.
    pub weak_eps: Option<f64>,
    pub predicted_gap: f64,
}

pub struct RcStage {
    pub xi1: RCField,
    pub xi2: RCField,
    pub xi1_weights: LevelSetWeights,
    pub report: RcCompareReport,
}

fn coordinate_report(
    name: &'static str,
    cfg: &PipelineConfig,
    traj: &Trajectory,
    grid: &GridPartition,
    full: &SpectrumStage,
    rc: &RCField,
    weak_eps: Option<f64>,
) -> Result<(CoordinateReport, LevelSetWeights)> {
    let eff = effective_operator(traj, rc, cfg.n_bins, cfg.lag_samples())?;
    eff.check_invariants(1e-12)?;
    let eff_pairs = spectrum(&eff, (cfg.d + 1).max(cfg.n_eigen.min(eff.n_states())))?;
    let mut comparison = compare_spectra(&full.pairs, &eff_pairs, full.op.lag, cfg.d)?;
    let bins = RcBinning::over(rc, cfg.n_bins)?;
    let weights = level_set_weights(rc, &full.op, grid, &bins)?;
    let phi1 = &full.pairs[1].eigenfunction;
    let projection_error = weights.projection_error(phi1)?;
    let dev = weights.levelset_deviation(phi1)?;
    comparison.bounds.strong = eigenvalue_bound_strong(projection_error).ok();
    comparison.bounds.weak = weak_eps.and_then(|e| eigenvalue_bound_weak(e, full.pairs[1].eigenvalue).ok());
    let values: Vec<f64> = full
        .op
        .states()
        .iter()
        .map(|&c| rc.eval(&grid.cell_center(c)).unwrap_or(f64::NAN))
        .collect();
    Ok((
        CoordinateReport {
            name,
            comparison,
            n_bins_occupied: eff.n_states(),
            projection_error,
            max_avg_deviation: dev.max_avg,
            max_sup_deviation: dev.max_sup,
            average_deviation_bound_holds: projection_error <= 2.0 * dev.max_avg,
            spearman_phi1: spearman(&values, phi1)?,
        },
        weights,
    ))
}

/// Ideal coordinate from embedded projections of the lattice starts (or of
/// the uniform starts in scattered mode).
pub fn ideal_coordinate(cfg: &PipelineConfig, embed: &EmbedStage) -> Result<RCField> {
    let domain = cfg.box_domain();
    match cfg.rc_mode {
        RcMode::Lattice => {
            let sampler = EndpointSampler::new(&Banana, cfg.simulation()?, cfg.m, cfg.coupling)?;
            let starts = rc_lattice_starts(&domain, cfg.rc_lattice);
            let means = embed_starts(&sampler, &starts, LATTICE_INDEX)?;
            let results = starts
                .iter()
                .zip(means)
                .map(|(s, mean)| {
                    project_embedded(
                        &embed.atlas,
                        &crate::density::EmbeddedPoint {
                            start: s.clone(),
                            mean,
                            m: cfg.m,
                        },
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            build_rc_ideal(&embed.atlas, &domain, cfg.rc_lattice, &results)
        }
        RcMode::Scattered => {
            let ys: Vec<f64> = embed.projections.iter().map(|p| p.y).collect();
            build_rc_scattered(&domain, cfg.rc_lattice, &embed.starts, &ys)
        }
    }
}

pub fn rc_stage(
    cfg: &PipelineConfig,
    traj: &Trajectory,
    grid: &GridPartition,
    full: &SpectrumStage,
    embed: &EmbedStage,
    weak_eps: Option<f64>,
) -> Result<RcStage> {
    let xi1 = ideal_coordinate(cfg, embed)?;
    let xi2 = build_rc_naive(&cfg.box_domain())?;
    let (r1, w1) = coordinate_report("xi1", cfg, traj, grid, full, &xi1, weak_eps)?;
    let (r2, _) = coordinate_report("xi2", cfg, traj, grid, full, &xi2, weak_eps)?;
    Ok(RcStage {
        xi1,
        xi2,
        xi1_weights: w1,
        report: RcCompareReport {
            xi1: r1,
            xi2: r2,
            rc_mode: cfg.rc_mode,
            weak_eps,
            predicted_gap: PREDICTED_GAP,
        },
    })
}

fn write_rc(cfg: &PipelineConfig, r: &RcStage) -> Result<()> {
    let lattice = rc_lattice_starts(&cfg.box_domain(), cfg.rc_lattice);
    for (name, rc) in [("rc_xi1.csv", &r.xi1), ("rc_xi2.csv", &r.xi2)] {
        let rows = lattice.iter().map(|x| [fmt(x[0]), fmt(x[1]), fmt_opt(rc.eval(x))]);
        write_csv(&cfg.output.join(name), &["x1", "x2", "xi"], rows)?;
    }
    write_report(cfg, "rc_compare.json", &r.report)?;
    Ok(())
}

/// Reads the weak score at x* from an earlier reducibility run, if present.
fn stored_weak_eps(cfg: &PipelineConfig) -> Option<f64> {
    let text = std::fs::read_to_string(cfg.output.join("reducibility.json")).ok()?;
    let v: serde_json::Value = serde_json::from_str(&text).ok()?;
    if v.get("config")? != &serde_json::to_value(cfg).ok()? {
        return None;
    }
    v.get("x_star")?.get("level_set_weak")?.as_f64()
}

pub fn cmd_rc_compare(cfg: &PipelineConfig) -> Result<RcCompareReport> {
    let (traj, _) = load_trajectory(cfg)?;
    let grid = cfg.grid_partition()?;
    let full = spectrum_stage(cfg, &traj, &grid)?;
    let embed = embed_stage(cfg, &traj)?;
    let r = rc_stage(cfg, &traj, &grid, &full, &embed, stored_weak_eps(cfg))?;
    write_rc(cfg, &r)?;
    Ok(r.report)
}

// ---------------------------------------------------------------- oracle

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    #[serde(flatten)]
    pub uniform: SweepSummary,
    /// Largest eigenvalue gap over exactly lumpable chains.
    pub lumpable_max_gap: f64,
    pub lumpable_cases: usize,
    /// Same sweep with log-normal weights (scale 3).
    pub heavy_tailed: SweepSummary,
}

pub fn oracle_stage(cfg: &PipelineConfig) -> Result<OracleReport> {
    let uniform = sweep(cfg.oracle_trials, cfg.seed, cfg.oracle_max_n, WeightLaw::Uniform)?;
    let heavy_tailed = sweep(cfg.oracle_trials, cfg.seed, cfg.oracle_max_n, WeightLaw::LogNormal(3000))?;
    let mut lumpable_max_gap: f64 = 0.0;
    let mut lumpable_cases = 0;
    for k in 0..100u64 {
        let mut s = Stream::new(cfg.seed, StreamTag::Oracle, k, 7);
        let n = 3 + s.below(cfg.oracle_max_n as u64 - 2) as usize;
        let m = 2 + s.below(n as u64 - 2) as usize;
        let l = Lumping::random(n, m, &mut s)?;
        let c = lumpable_chain(&l, cfg.seed ^ k)?;
        for i in 1..m {
            lumpable_max_gap = lumpable_max_gap.max(verify_bounds(&c, &l, i)?.gap);
            lumpable_cases += 1;
        }
    }
    Ok(OracleReport {
        uniform,
        lumpable_max_gap,
        lumpable_cases,
        heavy_tailed,
    })
}

pub fn cmd_oracle(cfg: &PipelineConfig) -> Result<OracleReport> {
    let r = oracle_stage(cfg)?;
    write_report(cfg, "oracle.json", &r)?;
    Ok(r)
}

// ---------------------------------------------------------------- full

#[derive(Debug, Clone, Serialize)]
pub struct Criterion {
    pub id: String,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct AcceptanceReport {
    pub criteria: Vec<Criterion>,
    pub all_pass: bool,
    pub spectrum: SpectrumReport,
    pub embedding: EmbedReport,
    pub reducibility: ReducibilityOutput,
    pub rc_compare: RcCompareReport,
    pub oracle: OracleReport,
    pub operator_checks: OperatorChecks,
}

#[derive(Debug, Clone, Serialize)]
pub struct OperatorChecks {
    pub n_functions: usize,
    pub max_idempotence_error: f64,
    pub max_adjointness_error: f64,
    pub max_norm_excess: f64,
    pub ulam_row_sum_error: f64,
    pub ulam_detailed_balance: f64,
    pub effective_eigen_in_range: bool,
    pub deterministic: bool,
}

/// Π_ξ checks on random functions over the Ulam states.
pub fn operator_checks(cfg: &PipelineConfig, w: &LevelSetWeights, n_functions: usize) -> Result<(f64, f64, f64)> {
    let mut s = Stream::new(cfg.seed, StreamTag::Test, 0xB0B, 0);
    let n = w.n_states();
    let (mut idem, mut adj, mut excess) = (0.0f64, 0.0f64, f64::NEG_INFINITY);
    for _ in 0..n_functions {
        let f: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let g: Vec<f64> = (0..n).map(|_| s.normal()).collect();
        let pf = w.apply_pi(&f)?;
        let pg = w.apply_pi(&g)?;
        let ppf = w.apply_pi(&pf)?;
        idem = idem.max(ppf.iter().zip(&pf).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
        adj = adj.max((w.dot(&pf, &g) - w.dot(&f, &pg)).abs());
        excess = excess.max(w.norm(&pf) - w.norm(&f));
    }
    Ok((idem, adj, excess))
}

/// Determinism probe: a short trajectory and its spectrum, twice.
fn determinism_probe(cfg: &PipelineConfig) -> Result<bool> {
    let run = || -> Result<String> {
        let mut c = cfg.clone();
        c.n_steps = 200_000;
        c.burn_in = 1000;
        let sim = c.simulation()?;
        let t = long_trajectory(&Banana, &sim, &c.x0, c.n_steps as usize, c.burn_in as usize, c.record_stride)?;
        let s = spectrum_stage(&c, &t, &c.grid_partition()?)?;
        let sampler = EndpointSampler::new(&Banana, sim, 50, c.coupling)?;
        let clouds = sampler.sample_many(&uniform_starts(&c)[..20.min(c.n_starts)])?;
        let o = sweep(200, c.seed, c.oracle_max_n, WeightLaw::Uniform)?;
        let flat: Vec<f64> = clouds.iter().flat_map(|c| c.iter().flatten().copied().collect::<Vec<_>>()).collect();
        Ok(serde_json::to_string(&(&s.report, flat, o))?)
    };
    Ok(run()? == run()?)
}

pub struct FullRun {
    pub report: AcceptanceReport,
    pub timings: Vec<(String, f64)>,
}

fn criterion(id: &str, name: &str, pass: bool, detail: String) -> Criterion {
    Criterion {
        id: id.into(),
        name: name.into(),
        pass,
        detail,
    }
}

pub fn full_run(cfg: &PipelineConfig) -> Result<FullRun> {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &str, timings: &mut Vec<(String, f64)>| {
        timings.push((name.to_string(), clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let grid = cfg.grid_partition()?;
    cmd_simulate(cfg)?;
    let (traj, _) = load_trajectory(cfg)?;
    lap("simulate", &mut timings);
    let full = spectrum_stage(cfg, &traj, &grid)?;
    write_spectrum(cfg, &full)?;
    lap("spectrum", &mut timings);
    let embed = embed_stage(cfg, &traj)?;
    write_embed(cfg, &embed)?;
    lap("embed", &mut timings);
    let red = reducibility_stage(cfg, &traj, &grid)?;
    write_reducibility(cfg, &red)?;
    lap("reducibility", &mut timings);
    let weak_eps = red.output.x_star.level_set_weak;
    let rc = rc_stage(cfg, &traj, &grid, &full, &embed, weak_eps)?;
    write_rc(cfg, &rc)?;
    lap("rc-compare", &mut timings);
    let oracle = oracle_stage(cfg)?;
    write_report(cfg, "oracle.json", &oracle)?;
    lap("oracle", &mut timings);

    let (idem, adj, excess) = operator_checks(cfg, &rc.xi1_weights, 100)?;
    let eff_in_range = [&rc.report.xi1, &rc.report.xi2]
        .iter()
        .all(|r| r.comparison.lambda_eff.iter().all(|l| *l <= 1.0 + 1e-10 && *l >= -1.0 - 1e-10));
    let deterministic = determinism_probe(cfg)?;
    let checks = OperatorChecks {
        n_functions: 100,
        max_idempotence_error: idem,
        max_adjointness_error: adj,
        max_norm_excess: excess,
        ulam_row_sum_error: full.report.row_sum_error,
        ulam_detailed_balance: full.report.detailed_balance_residual,
        effective_eigen_in_range: eff_in_range,
        deterministic,
    };
    lap("checks", &mut timings);

    let sp = &full.report;
    let l = &sp.lambda;
    let x1 = &rc.report.xi1;
    let x2 = &rc.report.xi2;
    let s_full = sp.sigma[1].unwrap_or(f64::NAN);
    let s1 = x1.comparison.sigma_eff[1].unwrap_or(f64::NAN);
    let s2 = x2.comparison.sigma_eff[1].unwrap_or(f64::NAN);
    let gap1 = x1.comparison.gaps[1];
    let r = &red.output;
    let weak_x = r.x_star.level_set_weak.unwrap_or(f64::NAN);
    let weak_le_strong = r.report.weak_score <= r.report.strong_score
        && r.report.per_anchor.iter().all(|s| s.weak <= s.max_residual);
    let bound = x1.comparison.bounds.strong;
    let em = &embed.report;
    let o = &oracle.uniform;

    let criteria = vec![
        criterion(
            "1",
            "spectral gap",
            (l[0] - 1.0).abs() <= 1e-10 && sp.spectral_gap > 0.2,
            format!("lambda0 = {:.12}, lambda1 - lambda2 = {:.4}", l[0], sp.spectral_gap),
        ),
        criterion(
            "2",
            "relaxation rates",
            (s_full - 0.43).abs() <= 0.03 && (s1 - 0.43).abs() <= 0.03 && (s2 - 0.46).abs() <= 0.03 && s2 - s1 >= 0.01,
            format!("sigma_full = {s_full:.4}, sigma_xi1 = {s1:.4}, sigma_xi2 = {s2:.4}, sigma_xi2 - sigma_xi1 = {:.4}", s2 - s1),
        ),
        criterion(
            "3",
            "eigenvalue preservation",
            gap1 <= 0.01,
            format!("|lambda1 - lambda_xi1,1| = {gap1:.5}"),
        ),
        criterion(
            "4",
            "reducibility scores",
            (1.25..=3.75).contains(&r.report.strong_score) && (0.005..=0.04).contains(&weak_x) && weak_le_strong,
            format!(
                "strong = {:.3} at {:?}, weak at x* = {:.4}, max weak = {:.4}",
                r.report.strong_score, r.report.strong_argmax, weak_x, r.report.weak_score
            ),
        ),
        criterion(
            "5",
            "bound chain",
            bound.is_some_and(|b| gap1 <= b) && x1.average_deviation_bound_holds && gap1 <= PREDICTED_GAP,
            format!(
                "gap = {gap1:.5}, strong bound = {}, projection error = {:.4}, 2 x max avg dev = {:.4}, weak bound = {}, predicted {PREDICTED_GAP}",
                bound.map_or("vacuous".into(), |b| format!("{b:.4}")),
                x1.projection_error,
                2.0 * x1.max_avg_deviation,
                x1.comparison.bounds.weak.map_or("n/a".into(), |b| format!("{b:.4}")),
            ),
        ),
        criterion(
            "6",
            "embedding geometry",
            em.fit.rms < 0.1 && em.eq_within_3_spacings >= 0.95,
            format!(
                "quadratic rms = {:.4}, equilibrium starts within 3 spacings = {:.3}",
                em.fit.rms, em.eq_within_3_spacings
            ),
        ),
        criterion(
            "7",
            "oracle suite",
            o.violations_eigen == 0 && o.violations_avg_dev == 0 && oracle.lumpable_max_gap <= 1e-12,
            format!(
                "trials = {}, checks = {}, violations = {}/{}, vacuous = {}, lumpable max gap = {:.1e}",
                o.trials, o.checks, o.violations_eigen, o.violations_avg_dev, o.vacuous, oracle.lumpable_max_gap
            ),
        ),
        criterion(
            "8",
            "operator invariants",
            idem <= 1e-12
                && adj <= 1e-12
                && excess <= 1e-12
                && checks.ulam_row_sum_error <= 1e-12
                && checks.ulam_detailed_balance <= 1e-12
                && eff_in_range
                && deterministic,
            format!(
                "idempotence {idem:.1e}, adjointness {adj:.1e}, norm excess {excess:.1e}, row sums {:.1e}, detailed balance {:.1e}, deterministic {deterministic}",
                checks.ulam_row_sum_error, checks.ulam_detailed_balance
            ),
        ),
        criterion(
            "level-sets",
            "xi1 and phi1 level sets",
            x1.spearman_phi1.abs() > 0.95,
            format!("|spearman(xi1, phi1)| = {:.4}", x1.spearman_phi1.abs()),
        ),
    ];
    let all_pass = criteria.iter().all(|c| c.pass);
    let report = AcceptanceReport {
        criteria,
        all_pass,
        spectrum: full.report,
        embedding: embed.report,
        reducibility: red.output,
        rc_compare: rc.report,
        oracle,
        operator_checks: checks,
    };
    write_report(cfg, "acceptance.json", &report)?;
    write_json(
        &cfg.output.join("timings.json"),
        &timings.iter().cloned().collect::<std::collections::BTreeMap<_, _>>(),
    )?;
    Ok(FullRun { report, timings })
}

/// Reads a previously written acceptance report.
pub fn read_acceptance(path: &Path) -> Result<serde_json::Value> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(Error::from)
}
