use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crisscross::distributions::PrimitiveDistributions;
use crisscross::experiment::{
    compare_policies, run_experiment, BoundarySource, ExperimentPlan, ThresholdOverrides,
};
use crisscross::free_boundary::default_w_max;
use crisscross::network::policy::{PolicyThresholds, PolicyVariant};
use crisscross::network::sim::{
    default_horizon, run_network, run_replications, write_event_log, write_replications, SimConfig,
};
use crisscross::param_select::{select_thresholds, SelectOptions};
use crisscross::rbm::{estimate_jstar, optimal_bcp_processes, simulate_bcp_path, CostFn, McConfig};
use crisscross::{
    brownian_data, extract_boundary, hjb_residual, solve_value, FreeBoundary, GridSpec,
    NetworkParams, SolveOptions,
};

#[derive(Parser)]
#[command(
    name = "crisscross",
    version,
    about = "Heavy-traffic control of the criss-cross network"
)]
struct Cli {
    /// Network parameter file (key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 1)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for replication-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the workload control problem on a grid and extract psi.
    SolveFb {
        #[arg(long, default_value_t = 200)]
        grid_n: usize,
        #[arg(long)]
        w_max: Option<f64>,
    },
    /// Monte-Carlo estimate of the limiting cost under a boundary.
    SimulateBcp {
        #[arg(long)]
        fb: PathBuf,
        #[arg(long, default_value_t = 100_000)]
        paths: usize,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Also write one path of X, W*, I* and Q*.
        #[arg(long)]
        sample_path: bool,
    },
    /// Replications of the n-th network under the threshold policy.
    SimulateNetwork {
        #[arg(long)]
        fb: PathBuf,
        #[arg(long)]
        n: u64,
        #[arg(long, default_value_t = 200)]
        reps: u64,
        /// Scaled horizon; defaults to ln(1e4)/gamma.
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long, default_value = "paper")]
        variant: PolicyVariant,
        /// Write the event log of replication 0.
        #[arg(long)]
        event_log: bool,
        #[command(flatten)]
        thresholds: ThresholdArgs,
    },
    /// Evaluate the large-deviation threshold constants.
    SelectParams {
        #[arg(long, value_delimiter = ',', default_value = "100,400,1600,6400")]
        n_schedule: Vec<u64>,
        /// Output file; defaults to <out>/constants.txt.
        #[arg(long)]
        out_file: Option<PathBuf>,
    },
    /// Boundary, limiting cost and the convergence sweep over n.
    Experiment(PlanArgs),
    /// Same pipeline for several policy variants at matched seeds.
    Compare {
        #[command(flatten)]
        plan: PlanArgs,
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "paper,psi-zero,no-idling,priority1"
        )]
        variants: Vec<PolicyVariant>,
    },
}

#[derive(Args, Clone, Copy)]
struct ThresholdArgs {
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    l0: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    g0: f64,
    #[arg(long)]
    d: Option<f64>,
}

impl ThresholdArgs {
    fn overrides(self) -> ThresholdOverrides {
        ThresholdOverrides {
            c: self.c,
            l0: self.l0,
            g0: self.g0,
            d: self.d,
        }
    }
}

#[derive(Args, Clone)]
struct PlanArgs {
    #[arg(long, default_value_t = 200)]
    grid_n: usize,
    /// Reuse the cached boundary only; fail if it is missing.
    #[arg(long)]
    no_solve: bool,
    /// Use this boundary file instead of solving.
    #[arg(long, conflicts_with = "no_solve")]
    fb: Option<PathBuf>,
    #[arg(long, default_value_t = 100_000)]
    mc_paths: usize,
    #[arg(long, default_value_t = 1e-3)]
    mc_dt: f64,
    /// Skip the Monte-Carlo estimate of the limiting cost.
    #[arg(long)]
    no_mc: bool,
    #[arg(long, value_delimiter = ',', default_value = "100,400,1600,6400")]
    n_schedule: Vec<u64>,
    #[arg(long, default_value_t = 200)]
    reps: u64,
    #[arg(long)]
    horizon: Option<f64>,
    #[command(flatten)]
    thresholds: ThresholdArgs,
}

enum Failure {
    Config(String),
    Stage(String),
}

fn config_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Config(e.to_string())
}

fn stage_err<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Stage(e.to_string())
}

fn write_to(
    path: &Path,
    f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
) -> Result<(), Failure> {
    let mut w = BufWriter::new(fs::File::create(path).map_err(stage_err)?);
    f(&mut w).and_then(|_| w.flush()).map_err(stage_err)
}

fn load_params(cli: &Cli) -> Result<NetworkParams, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config("--config is required".into()))?;
    NetworkParams::load(path).map_err(config_err)
}

fn load_fb(path: &Path) -> Result<FreeBoundary, Failure> {
    FreeBoundary::load(path).map_err(config_err)
}

fn plan_from(cli: &Cli, p: NetworkParams, a: &PlanArgs) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(p, &cli.out);
    plan.boundary = match (&a.fb, a.no_solve) {
        (Some(f), _) => BoundarySource::File(f.clone()),
        (None, true) => BoundarySource::CachedOnly {
            grid_n: a.grid_n,
            w_max: None,
        },
        (None, false) => BoundarySource::Solve {
            grid_n: a.grid_n,
            w_max: None,
        },
    };
    plan.mc = (!a.no_mc).then_some((a.mc_dt, a.mc_paths));
    plan.n_schedule = a.n_schedule.clone();
    plan.reps = a.reps;
    plan.horizon = a.horizon;
    plan.thresholds = a.thresholds.overrides();
    plan.seed = cli.seed;
    plan
}

fn thresholds_for(
    p: &NetworkParams,
    t: ThresholdArgs,
    schedule: Vec<u64>,
) -> Result<PolicyThresholds, Failure> {
    let (c, l0, d) = match (t.c, t.l0, t.d) {
        (Some(c), Some(l0), Some(d)) => (c, l0, d),
        _ => {
            let prim = PrimitiveDistributions::from_params(p).map_err(config_err)?;
            let sc = select_thresholds(
                p,
                &prim,
                &SelectOptions {
                    n_schedule: schedule,
                    ..Default::default()
                },
            )
            .map_err(stage_err)?;
            (
                t.c.unwrap_or(sc.c),
                t.l0.unwrap_or(sc.lbar),
                t.d.unwrap_or(sc.d),
            )
        }
    };
    PolicyThresholds::new(c, l0, t.g0, d).map_err(config_err)
}

fn run(cli: &Cli) -> Result<(), Failure> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(config_err)?;
    }
    let p = load_params(cli)?;
    fs::create_dir_all(&cli.out).map_err(stage_err)?;
    let out = &cli.out;
    match &cli.command {
        Command::SolveFb { grid_n, w_max } => {
            let bd = brownian_data(&p);
            let grid = GridSpec::new(
                *grid_n,
                w_max.unwrap_or_else(|| default_w_max(&bd, p.gamma)),
            )
            .map_err(config_err)?;
            let opts = SolveOptions::default();
            let vg = solve_value(&p, &bd, grid, &opts).map_err(stage_err)?;
            let fb = extract_boundary(&vg, &p).map_err(stage_err)?;
            let residual = hjb_residual(&vg, &p, &bd, opts.running_cost).map_err(stage_err)?;
            vg.save(&out.join("value_grid.csv")).map_err(stage_err)?;
            fb.save(&out.join("boundary.csv")).map_err(stage_err)?;
            let summary = format!(
                "h = {}\nw_max = {}\nj_origin = {}\nsweeps = {}\nhjb_residual = {}\n",
                grid.h(),
                grid.w_max,
                vg.origin(),
                vg.sweeps,
                residual
            );
            fs::write(out.join("solve_summary.txt"), &summary).map_err(stage_err)?;
            print!("{summary}");
        }
        Command::SimulateBcp {
            fb,
            paths,
            dt,
            sample_path,
        } => {
            let fb = load_fb(fb)?;
            let bd = brownian_data(&p);
            let cfg = McConfig::new(*dt, p.gamma, *paths, cli.seed);
            let est = estimate_jstar(&p, &fb, &bd, &cfg, CostFn::Lp).map_err(stage_err)?;
            write_to(&out.join("jstar.csv"), |w| {
                writeln!(w, "paths,dt,seed,mean,std_error,truncation_bound")?;
                writeln!(
                    w,
                    "{},{},{},{},{},{}",
                    est.paths, dt, cli.seed, est.mean, est.std_error, est.truncation_bound
                )
            })?;
            println!("jstar = {} +- {}", est.mean, est.std_error);
            if *sample_path {
                let path = simulate_bcp_path(&fb, &bd, p.mu, &cfg, 0).map_err(stage_err)?;
                let bcp = optimal_bcp_processes(&p, &path).map_err(stage_err)?;
                let w = &path.wstar;
                write_to(&out.join("bcp_path.csv"), |f| {
                    writeln!(f, "t,x1,x2,x3,w1,w2,i1,i2,y1,y2,y3,q1,q2,q3")?;
                    for (k, t) in w.w1.times().iter().enumerate() {
                        write!(f, "{t}")?;
                        for s in path
                            .x
                            .iter()
                            .chain([&w.w1, &w.w2, &w.i1, &w.i2])
                            .chain(&bcp.y)
                            .chain(&bcp.q)
                        {
                            write!(f, ",{}", s.values()[k])?;
                        }
                        writeln!(f)?;
                    }
                    Ok(())
                })?;
            }
        }
        Command::SimulateNetwork {
            fb,
            n,
            reps,
            horizon,
            variant,
            event_log,
            thresholds,
        } => {
            let fb = load_fb(fb)?;
            let prim = PrimitiveDistributions::from_params(&p).map_err(config_err)?;
            let th = thresholds_for(&p, *thresholds, vec![*n])?;
            let mut cfg = SimConfig::new(*n, horizon.unwrap_or_else(|| default_horizon(p.gamma)));
            cfg.variant = *variant;
            let r =
                run_replications(&p, &th, &fb, &prim, &cfg, cli.seed, *reps).map_err(stage_err)?;
            write_to(&out.join("replications.csv"), |w| {
                write_replications(*n, &r, w)
            })?;
            let costs: Vec<f64> = r.iter().map(|x| x.jhat).collect();
            let (m, se) = crisscross::experiment::mean_se(&costs);
            println!("n = {n}: mean jhat = {m} +- {se}");
            if *event_log {
                cfg.record_log = true;
                let o = run_network(&p, &th, &fb, &prim, &cfg, cli.seed, 0).map_err(stage_err)?;
                write_to(&out.join("event_log.csv"), |w| write_event_log(&o.log, w))?;
            }
        }
        Command::SelectParams {
            n_schedule,
            out_file,
        } => {
            let prim = PrimitiveDistributions::from_params(&p).map_err(config_err)?;
            let opts = SelectOptions {
                n_schedule: n_schedule.clone(),
                ..Default::default()
            };
            let sc = select_thresholds(&p, &prim, &opts).map_err(stage_err)?;
            let doc = sc.to_document();
            let path = out_file
                .clone()
                .unwrap_or_else(|| out.join("constants.txt"));
            fs::write(&path, &doc).map_err(stage_err)?;
            print!("{doc}");
        }
        Command::Experiment(a) => {
            let r = run_experiment(&plan_from(cli, p, a)).map_err(stage_err)?;
            for row in &r.rows {
                println!(
                    "n = {}: mean jhat = {:.5} +- {:.5}, gap = {:?}",
                    row.n, row.mean, row.std_error, row.gap
                );
            }
        }
        Command::Compare { plan, variants } => {
            let reports =
                compare_policies(&plan_from(cli, p, plan), variants).map_err(stage_err)?;
            for r in &reports {
                for row in &r.rows {
                    println!(
                        "{} n = {}: {:.5} +- {:.5}",
                        r.variant, row.n, row.mean, row.std_error
                    );
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
