//! End-to-end pipeline: boundary, limiting cost, thresholds, and the
//! network sweep over `n`, with cached intermediate artifacts.

use std::fmt;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use sha2::{Digest, Sha256};

use crate::distributions::PrimitiveDistributions;
use crate::free_boundary::{
    default_w_max, extract_boundary, solve_value, FreeBoundary, GridSpec, SolveOptions, ValueGrid,
};
use crate::model::{brownian_data, NetworkParams};
use crate::network::policy::{PolicyThresholds, PolicyVariant};
use crate::network::sim::{
    default_horizon, run_replications, write_replications, Replication, SimConfig,
};
use crate::param_select::{select_thresholds, SelectOptions, SelectedConstants};
use crate::rbm::{estimate_jstar, CostEstimate, CostFn, McConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Plan,
    SolveFb,
    EstimateJstar,
    SelectParams,
    Simulate,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Plan => "plan",
            Stage::SolveFb => "solve-fb",
            Stage::EstimateJstar => "estimate-jstar",
            Stage::SelectParams => "select-params",
            Stage::Simulate => "simulate",
            Stage::Report => "report",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageError {
    pub stage: Stage,
    pub message: String,
}

impl fmt::Display for StageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "stage {} failed: {}", self.stage, self.message)
    }
}

impl std::error::Error for StageError {}

fn stage<E: fmt::Display>(stage: Stage) -> impl FnOnce(E) -> StageError {
    move |e| StageError {
        stage,
        message: e.to_string(),
    }
}

/// Where the free boundary comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySource {
    /// Solve on the grid, reusing a cached solution when the inputs match.
    Solve {
        grid_n: usize,
        w_max: Option<f64>,
    },
    /// Only use a cached solution; fail if there is none.
    CachedOnly {
        grid_n: usize,
        w_max: Option<f64>,
    },
    File(PathBuf),
    Zero,
}

/// Per-field threshold overrides; missing values come from [`select_thresholds`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdOverrides {
    pub c: Option<f64>,
    pub l0: Option<f64>,
    pub g0: f64,
    pub d: Option<f64>,
}

impl Default for ThresholdOverrides {
    fn default() -> Self {
        Self {
            c: None,
            l0: None,
            g0: 1.0,
            d: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub params: NetworkParams,
    pub boundary: BoundarySource,
    /// Monte-Carlo step and path count for the limiting cost; `None` skips it.
    pub mc: Option<(f64, usize)>,
    pub n_schedule: Vec<u64>,
    pub reps: u64,
    /// Scaled horizon; defaults to `ln(1e4)/gamma`.
    pub horizon: Option<f64>,
    pub thresholds: ThresholdOverrides,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl ExperimentPlan {
    pub fn new(params: NetworkParams, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            params,
            boundary: BoundarySource::Solve {
                grid_n: 200,
                w_max: None,
            },
            mc: Some((1e-3, 100_000)),
            n_schedule: vec![100, 400, 1600, 6400],
            reps: 200,
            horizon: None,
            thresholds: ThresholdOverrides::default(),
            out_dir: out_dir.into(),
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<(), StageError> {
        let err = |m: String| {
            Err(StageError {
                stage: Stage::Plan,
                message: m,
            })
        };
        if self.n_schedule.is_empty() || self.n_schedule.windows(2).any(|w| w[0] >= w[1]) {
            return err(format!(
                "n schedule must be nonempty and strictly increasing, got {:?}",
                self.n_schedule
            ));
        }
        if self.reps < 2 {
            return err(format!("need at least 2 replications, got {}", self.reps));
        }
        if let BoundarySource::File(p) = &self.boundary {
            if !p.exists() {
                return Err(StageError {
                    stage: Stage::SolveFb,
                    message: format!("boundary file {} not found", p.display()),
                });
            }
        }
        Ok(())
    }

    fn horizon(&self) -> f64 {
        self.horizon
            .unwrap_or_else(|| default_horizon(self.params.gamma))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceRow {
    pub n: u64,
    pub reps: u64,
    pub mean: f64,
    pub std_error: f64,
    pub gap: Option<f64>,
    pub rel_gap: Option<f64>,
    /// Replication means of the diagnostic statistics.
    pub sup_q3_in_a: f64,
    pub sup_q1_off_a: f64,
    pub idle_integral: f64,
    pub min_g_gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceReport {
    pub variant: PolicyVariant,
    pub jstar: Option<CostEstimate>,
    pub j_grid: Option<f64>,
    pub thresholds: PolicyThresholds,
    pub rows: Vec<ConvergenceRow>,
    pub runtime_secs: f64,
}

impl ConvergenceReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "n,reps,mean_jhat,se_jhat,jstar,jstar_se,gap,rel_gap,sup_q3_in_a,sup_q1_off_a,idle_integral,min_G_gap")?;
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.reps,
                r.mean,
                r.std_error,
                opt(self.jstar.map(|j| j.mean)),
                opt(self.jstar.map(|j| j.std_error)),
                opt(r.gap),
                opt(r.rel_gap),
                r.sup_q3_in_a,
                r.sup_q1_off_a,
                r.idle_integral,
                r.min_g_gap
            )?;
        }
        Ok(())
    }
}

/// Mean and standard error of the replication costs.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn summarize_replications(n: u64, reps: &[Replication], jstar: Option<f64>) -> ConvergenceRow {
    let costs: Vec<f64> = reps.iter().map(|r| r.jhat).collect();
    let (mean, std_error) = mean_se(&costs);
    let avg = |f: &dyn Fn(&Replication) -> f64| reps.iter().map(f).sum::<f64>() / reps.len() as f64;
    ConvergenceRow {
        n,
        reps: reps.len() as u64,
        mean,
        std_error,
        gap: jstar.map(|j| mean - j),
        rel_gap: jstar.map(|j| (mean - j).abs() / j),
        sup_q3_in_a: avg(&|r| r.diagnostics.sup_q3_in_a),
        sup_q1_off_a: avg(&|r| r.diagnostics.sup_q1_off_a),
        idle_integral: avg(&|r| r.diagnostics.idle_integral),
        min_g_gap: avg(&|r| r.diagnostics.min_g_gap),
    }
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

fn write_file(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> io::Result<()>,
) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    f(&mut w)?;
    w.flush()
}

/// Artifacts shared by every policy variant of one plan.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub fb: FreeBoundary,
    pub j_grid: Option<f64>,
    pub jstar: Option<CostEstimate>,
    pub thresholds: PolicyThresholds,
    pub constants: Option<SelectedConstants>,
}

/// Runs the boundary, limiting-cost and threshold stages.
pub fn prepare(plan: &ExperimentPlan) -> Result<Prepared, StageError> {
    plan.validate()?;
    let p = &plan.params;
    let cache = plan.out_dir.join("cache");
    fs::create_dir_all(&cache).map_err(stage(Stage::Report))?;
    let bd = brownian_data(p);
    let config = p.to_config_string();

    let (fb, j_grid) = match &plan.boundary {
        BoundarySource::Zero => (
            FreeBoundary::zero(default_w_max(&bd, p.gamma), p.boundary_slope()),
            None,
        ),
        BoundarySource::File(path) => (
            FreeBoundary::load(path).map_err(stage(Stage::SolveFb))?,
            None,
        ),
        BoundarySource::Solve { grid_n, w_max } | BoundarySource::CachedOnly { grid_n, w_max } => {
            let w_max = w_max.unwrap_or_else(|| default_w_max(&bd, p.gamma));
            let opts = SolveOptions::default();
            let key = digest(&[
                &config,
                &grid_n.to_string(),
                &w_max.to_string(),
                &format!("{opts:?}"),
            ]);
            let vg_path = cache.join(format!("value-{key}.csv"));
            let fb_path = cache.join(format!("boundary-{key}.csv"));
            let vg = if vg_path.exists() && fb_path.exists() {
                ValueGrid::load(&vg_path).map_err(stage(Stage::SolveFb))?
            } else if matches!(plan.boundary, BoundarySource::CachedOnly { .. }) {
                return Err(StageError {
                    stage: Stage::SolveFb,
                    message: format!(
                        "no cached boundary at {} and solving is disabled",
                        fb_path.display()
                    ),
                });
            } else {
                let grid = GridSpec::new(*grid_n, w_max).map_err(stage(Stage::SolveFb))?;
                let vg = solve_value(p, &bd, grid, &opts).map_err(stage(Stage::SolveFb))?;
                vg.save(&vg_path).map_err(stage(Stage::SolveFb))?;
                extract_boundary(&vg, p)
                    .map_err(stage(Stage::SolveFb))?
                    .save(&fb_path)
                    .map_err(stage(Stage::SolveFb))?;
                vg
            };
            let fb = FreeBoundary::load(&fb_path).map_err(stage(Stage::SolveFb))?;
            (fb, Some(vg.origin()))
        }
    };
    let mut fb_text = Vec::new();
    fb.write(&mut fb_text).map_err(stage(Stage::SolveFb))?;
    fs::write(plan.out_dir.join("boundary.csv"), &fb_text).map_err(stage(Stage::Report))?;

    let jstar = match plan.mc {
        None => None,
        Some((dt, paths)) => {
            let cfg = McConfig::new(dt, p.gamma, paths, plan.seed);
            let key = digest(&[
                &config,
                &String::from_utf8_lossy(&fb_text),
                &format!("{cfg:?}"),
            ]);
            let path = cache.join(format!("jstar-{key}.txt"));
            let cached = fs::read_to_string(&path).ok().and_then(|s| {
                let v: Vec<f64> = s
                    .split_whitespace()
                    .filter_map(|t| t.parse().ok())
                    .collect();
                (v.len() == 4).then(|| CostEstimate {
                    mean: v[0],
                    std_error: v[1],
                    paths,
                    truncation_bound: v[2],
                    min_g_gap: v[3],
                })
            });
            Some(match cached {
                Some(c) => c,
                None => {
                    let est = estimate_jstar(p, &fb, &bd, &cfg, CostFn::Lp)
                        .map_err(stage(Stage::EstimateJstar))?;
                    fs::write(
                        &path,
                        format!(
                            "{} {} {} {}\n",
                            est.mean, est.std_error, est.truncation_bound, est.min_g_gap
                        ),
                    )
                    .map_err(stage(Stage::EstimateJstar))?;
                    est
                }
            })
        }
    };

    let o = plan.thresholds;
    let constants = if o.c.is_none() || o.l0.is_none() || o.d.is_none() {
        let prim = PrimitiveDistributions::from_params(p).map_err(stage(Stage::SelectParams))?;
        let opts = SelectOptions {
            n_schedule: plan.n_schedule.clone(),
            ..SelectOptions::default()
        };
        Some(select_thresholds(p, &prim, &opts).map_err(stage(Stage::SelectParams))?)
    } else {
        None
    };
    let pick = |v: Option<f64>, f: fn(&SelectedConstants) -> f64| {
        v.unwrap_or_else(|| f(constants.as_ref().unwrap()))
    };
    let thresholds = PolicyThresholds::new(
        pick(o.c, |s| s.c),
        pick(o.l0, |s| s.lbar),
        o.g0,
        pick(o.d, |s| s.d),
    )
    .map_err(stage(Stage::SelectParams))?;
    let used = format!(
        "c = {}\nl0 = {}\ng0 = {}\nd = {}\n",
        thresholds.c, thresholds.l0, thresholds.g0, thresholds.d
    );
    fs::write(plan.out_dir.join("thresholds.txt"), used).map_err(stage(Stage::Report))?;
    if let Some(sc) = &constants {
        fs::write(plan.out_dir.join("constants.txt"), sc.to_document())
            .map_err(stage(Stage::Report))?;
    }
    Ok(Prepared {
        fb,
        j_grid,
        jstar,
        thresholds,
        constants,
    })
}

fn simulate_variant(
    plan: &ExperimentPlan,
    prep: &Prepared,
    variant: PolicyVariant,
    dir: &Path,
) -> Result<ConvergenceReport, StageError> {
    let start = Instant::now();
    let p = &plan.params;
    let prim = PrimitiveDistributions::from_params(p).map_err(stage(Stage::Simulate))?;
    fs::create_dir_all(dir).map_err(stage(Stage::Report))?;
    let mut rows = Vec::new();
    for &n in &plan.n_schedule {
        let mut cfg = SimConfig::new(n, plan.horizon());
        cfg.variant = variant;
        let reps = run_replications(
            p,
            &prep.thresholds,
            &prep.fb,
            &prim,
            &cfg,
            plan.seed,
            plan.reps,
        )
        .map_err(stage(Stage::Simulate))?;
        write_file(&dir.join(format!("replications_n{n}.csv")), |w| {
            write_replications(n, &reps, w)
        })
        .map_err(stage(Stage::Report))?;
        rows.push(summarize_replications(n, &reps, prep.jstar.map(|j| j.mean)));
    }
    let report = ConvergenceReport {
        variant,
        jstar: prep.jstar,
        j_grid: prep.j_grid,
        thresholds: prep.thresholds,
        rows,
        runtime_secs: start.elapsed().as_secs_f64(),
    };
    write_file(&dir.join("convergence.csv"), |w| report.write_csv(w))
        .map_err(stage(Stage::Report))?;
    fs::write(dir.join("plot_convergence.py"), PLOT_SCRIPT).map_err(stage(Stage::Report))?;
    fs::write(
        dir.join("runtime.txt"),
        format!("simulate_secs = {}\n", report.runtime_secs),
    )
    .map_err(stage(Stage::Report))?;
    Ok(report)
}

/// Full pipeline with the threshold policy. Outputs land in `plan.out_dir`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ConvergenceReport, StageError> {
    let prep = prepare(plan)?;
    simulate_variant(plan, &prep, PolicyVariant::Paper, &plan.out_dir)
}

/// Runs each variant at the same seeds; per-variant outputs go to
/// `out_dir/<variant>/`, and `compare.csv` collects the means.
pub fn compare_policies(
    plan: &ExperimentPlan,
    variants: &[PolicyVariant],
) -> Result<Vec<ConvergenceReport>, StageError> {
    let prep = prepare(plan)?;
    let mut out = Vec::new();
    for &v in variants {
        out.push(simulate_variant(
            plan,
            &prep,
            v,
            &plan.out_dir.join(v.as_str()),
        )?);
    }
    write_file(&plan.out_dir.join("compare.csv"), |w| {
        writeln!(w, "variant,n,mean_jhat,se_jhat")?;
        for r in &out {
            for row in &r.rows {
                writeln!(w, "{},{},{},{}", r.variant, row.n, row.mean, row.std_error)?;
            }
        }
        Ok(())
    })
    .map_err(stage(Stage::Report))?;
    Ok(out)
}

const PLOT_SCRIPT: &str = r#"# Plots |mean Jhat_n - J*| against n on log axes.
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "convergence.csv"
rows = [r for r in csv.DictReader(open(path)) if r["gap"]]
n = [float(r["n"]) for r in rows]
gap = [abs(float(r["gap"])) for r in rows]
err = [2 * (float(r["se_jhat"]) ** 2 + float(r["jstar_se"]) ** 2) ** 0.5 for r in rows]
plt.errorbar(n, gap, yerr=err, marker="o", capsize=3)
plt.xscale("log")
plt.yscale("log")
plt.xlabel("n")
plt.ylabel("|mean Jhat - J*|")
plt.tight_layout()
plt.savefig(path.replace(".csv", ".png"), dpi=150)
"#;

#[cfg(test)]
mod tests {
    use super::*;

    fn small_plan(dir: &Path) -> ExperimentPlan {
        let mut plan = ExperimentPlan::new(NetworkParams::reference(), dir);
        plan.boundary = BoundarySource::Solve {
            grid_n: 20,
            w_max: None,
        };
        plan.mc = Some((0.01, 200));
        plan.n_schedule = vec![100];
        plan.reps = 2;
        plan.horizon = Some(1.0);
        plan.thresholds = ThresholdOverrides {
            c: Some(2.0),
            l0: Some(2.0),
            g0: 1.0,
            d: Some(5.0),
        };
        plan
    }

    #[test]
    fn smoke_and_cache_reuse() {
        let dir = tempfile::tempdir().unwrap();
        let plan = small_plan(dir.path());
        let r = run_experiment(&plan).unwrap();
        assert_eq!(r.rows.len(), 1);
        let first = fs::read(dir.path().join("convergence.csv")).unwrap();
        let mut cached = plan.clone();
        cached.boundary = BoundarySource::CachedOnly {
            grid_n: 20,
            w_max: None,
        };
        run_experiment(&cached).unwrap();
        assert_eq!(fs::read(dir.path().join("convergence.csv")).unwrap(), first);
    }

    #[test]
    fn no_solve_without_cache_fails_in_solve_stage() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(dir.path());
        plan.boundary = BoundarySource::CachedOnly {
            grid_n: 20,
            w_max: None,
        };
        assert_eq!(run_experiment(&plan).unwrap_err().stage, Stage::SolveFb);
        plan.boundary = BoundarySource::File(dir.path().join("missing.csv"));
        assert_eq!(run_experiment(&plan).unwrap_err().stage, Stage::SolveFb);
    }

    #[test]
    fn plan_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut plan = small_plan(dir.path());
        plan.n_schedule = vec![400, 100];
        assert_eq!(plan.validate().unwrap_err().stage, Stage::Plan);
        plan.n_schedule = vec![100];
        plan.reps = 1;
        assert!(plan.validate().is_err());
    }
}
