//! `pwa-mpc`: train, certify and evaluate switching-sequence policies.
//!
//! Exit codes: 0 success, 1 domain failure (invalid model, uncertified policy,
//! broken feasibility), 2 usage or I/O error.

mod config;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use pwa_mpc::control::{
    evaluate_closed_loop, evaluate_open_loop, open_loop_csv, sample_labeled_states, simulate,
    simulate_hybrid, state_grid, Summary, Termination,
};
use pwa_mpc::policy::SequencePolicy;
use pwa_mpc::pwa::PwaSystem;
use pwa_mpc::terminal::TerminalSpec;
use pwa_mpc::trainer::{seed_training_set, train};
use pwa_mpc::Error;

use config::ExperimentConfig;

/// States with ΔJ at or below this count as optimal.
const OPTIMAL_DELTA: f64 = 1e-6;

#[derive(Debug)]
pub enum Failure {
    /// Exit code 1.
    Domain(String),
    /// Exit code 2.
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io(_) | Error::Json(_) | Error::Format(_) | Error::UnsupportedVersion(_) => {
                Failure::Usage(e.to_string())
            }
            _ => Failure::Domain(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

type Outcome = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "pwa-mpc",
    version,
    about = "Learned switching-sequence MPC for PWA systems"
)]
struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Allow writing into a non-empty output directory.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check the modelling assumptions of a system.
    Validate {
        #[arg(long, required_unless_present = "system")]
        config: Option<PathBuf>,
        /// A system JSON file, instead of a config.
        #[arg(long, conflicts_with = "config")]
        system: Option<PathBuf>,
    },
    /// Compute the terminal set and gain and store them in the system file.
    SynthesizeTerminal {
        #[arg(long)]
        config: PathBuf,
        /// Region whose dynamics the terminal controller uses (1-based).
        #[arg(long, default_value_t = 1)]
        region: usize,
        /// Write here instead of updating the system file in place.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Replace an existing terminal set.
        #[arg(long)]
        force: bool,
    },
    /// Train and certify a policy.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Open-loop suboptimality on a grid.
    EvalOpen {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
    },
    /// Closed-loop comparison against the hybrid MPC.
    EvalClosed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train once per horizon and tabulate the results.
    SweepHorizons {
        #[command(flatten)]
        common: Common,
        /// Comma-separated; overrides `evaluation.horizons`.
        #[arg(long, value_delimiter = ',')]
        horizons: Option<Vec<usize>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// One closed-loop run; with no policy, the hybrid MPC.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<PathBuf>,
        /// Initial state, comma-separated.
        #[arg(
            long,
            value_delimiter = ',',
            allow_hyphen_values = true,
            required = true
        )]
        x0: Vec<f64>,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
        {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match cli.command {
        Command::Validate { config, system } => cmd_validate(config, system),
        Command::SynthesizeTerminal {
            config,
            region,
            out,
            force,
        } => cmd_synthesize_terminal(&config, region, out, force),
        Command::Train { common, seed } => cmd_train(&common, seed),
        Command::EvalOpen { common, policy } => cmd_eval_open(&common, &policy),
        Command::EvalClosed {
            common,
            policy,
            seed,
        } => cmd_eval_closed(&common, &policy, seed),
        Command::SweepHorizons {
            common,
            horizons,
            seed,
        } => cmd_sweep_horizons(&common, horizons, seed),
        Command::Simulate { common, policy, x0 } => cmd_simulate(&common, policy.as_deref(), &x0),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

/// Creates `dir`, refusing to reuse a non-empty one unless `force` is set.
fn prepare_out(dir: &Path, force: bool) -> Outcome {
    if dir.is_dir() && std::fs::read_dir(dir)?.next().is_some() && !force {
        return Err(Failure::Usage(format!(
            "output directory {} is not empty; pass --force to overwrite",
            dir.display()
        )));
    }
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn write(dir: &Path, name: &str, contents: &str) -> Outcome {
    let path = dir.join(name);
    std::fs::write(&path, contents)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn json(value: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(value).expect("serializable") + "\n"
}

struct Setup {
    cfg: ExperimentConfig,
    sys: PwaSystem,
    out: PathBuf,
}

fn setup(common: &Common) -> Result<Setup, Failure> {
    let cfg = ExperimentConfig::load(&common.config)?;
    let sys = cfg.load_system()?;
    let out = common.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    Ok(Setup { cfg, sys, out })
}

fn load_policy(path: &Path, horizon: usize) -> Result<SequencePolicy, Failure> {
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "policy file {} does not exist",
            path.display()
        )));
    }
    let pol = SequencePolicy::load(path)?;
    if let Some(n) = pol.metadata.horizon {
        if n != horizon {
            return Err(Failure::Usage(format!(
                "policy was trained for N = {n} but the config has N = {horizon}"
            )));
        }
    }
    Ok(pol)
}

fn cmd_validate(config: Option<PathBuf>, system: Option<PathBuf>) -> Outcome {
    let path = match (config, system) {
        (Some(c), _) => ExperimentConfig::load(&c)?.system,
        (None, Some(s)) => s,
        (None, None) => return Err(Failure::Usage("pass --config or --system".into())),
    };
    if !path.is_file() {
        return Err(Failure::Usage(format!(
            "system file {} does not exist",
            path.display()
        )));
    }
    let sys = PwaSystem::load(&path)?;
    let diags = sys.validate();
    if diags.is_empty() {
        println!(
            "{}: valid ({} regions, n = {}, m = {}, terminal set {})",
            path.display(),
            sys.num_regions(),
            sys.n(),
            sys.m(),
            if sys.terminal_set().is_some() {
                "present"
            } else {
                "absent"
            }
        );
        return Ok(());
    }
    for d in &diags {
        println!("{d}");
    }
    Err(Failure::Domain(format!(
        "{} modelling violation(s)",
        diags.len()
    )))
}

fn cmd_synthesize_terminal(
    config: &Path,
    region: usize,
    out: Option<PathBuf>,
    force: bool,
) -> Outcome {
    let cfg = ExperimentConfig::load(config)?;
    let sys = cfg.load_system()?;
    let mpc = cfg.mpc_config(&sys)?;
    if region == 0 || region > sys.num_regions() {
        return Err(Failure::Usage(format!(
            "--region must be between 1 and {}",
            sys.num_regions()
        )));
    }
    let target = out.unwrap_or_else(|| cfg.system.clone());
    let replacing = if target == cfg.system {
        sys.terminal_set().is_some()
    } else {
        target.exists()
    };
    if replacing && !force {
        return Err(Failure::Usage(format!(
            "{} already holds a terminal set; pass --force to replace it",
            target.display()
        )));
    }
    let spec = TerminalSpec::synthesize(&sys, &mpc, region - 1)?;
    let violation = spec.certificate_violation(&sys)?;
    if !spec.is_certified(&sys)? {
        return Err(Failure::Domain(format!(
            "terminal set fails its invariance certificate by {violation:.3e}"
        )));
    }
    let vertices = spec.xf.vertices()?.len();
    let installed = spec.install(sys)?;
    installed.save(&target)?;
    println!(
        "Xf: {vertices} vertices, {} halfspaces, K = {}",
        spec.xf.num_halfspaces(),
        spec.k
            .row_iter()
            .map(|r| format!("{:?}", r.iter().collect::<Vec<_>>()))
            .collect::<Vec<_>>()
            .join("; ")
    );
    println!("wrote {}", target.display());
    Ok(())
}

fn cmd_train(common: &Common, seed: Option<u64>) -> Outcome {
    let Setup { cfg, sys, out } = setup(common)?;
    let mpc = cfg.mpc_config(&sys)?;
    if sys.terminal_set().is_none() {
        return Err(Failure::Usage(
            "system has no terminal set; run synthesize-terminal first".into(),
        ));
    }
    prepare_out(&out, common.force)?;
    let seed = seed.unwrap_or(cfg.training.seed);
    let data = seed_training_set(&sys, &mpc, &cfg.seed_counts(&sys)?, seed)?;
    let (pol, report) = train(&sys, &mpc, data, &cfg.train_options())?;
    pol.save(&out.join("policy.json"))?;
    println!("wrote {}", out.join("policy.json").display());
    write(&out, "training_report.json", &json(&report))?;
    write(&out, "iterations.csv", &report.log_csv())?;
    if sys.n() == 2 {
        write(&out, "partition.svg", &svg::partition(&pol, &sys)?)?;
    }
    println!(
        "N = {}: {} after {} iterations, {} cells, {} samples, {} hybrid solves",
        mpc.horizon,
        if report.certified {
            "certified"
        } else {
            "NOT certified"
        },
        report.iterations,
        report.final_cell_count,
        report.data_count,
        report.milp_solve_count
    );
    if report.certified {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "iteration cap {} reached without a certificate",
            cfg.training.iteration_cap
        )))
    }
}

fn cmd_eval_open(common: &Common, policy: &Path) -> Outcome {
    let Setup { cfg, sys, out } = setup(common)?;
    let mpc = cfg.mpc_config(&sys)?;
    let pol = load_policy(policy, mpc.horizon)?;
    prepare_out(&out, common.force)?;
    let grid = state_grid(&sys, cfg.evaluation.grid_step)?;
    let rows = evaluate_open_loop(&pol, &sys, &mpc, &grid)?;
    let deltas: Vec<f64> = rows.iter().filter_map(|r| r.delta).collect();
    let optimal = deltas.iter().filter(|d| **d <= OPTIMAL_DELTA).count();
    let negative = deltas.iter().filter(|d| **d < -OPTIMAL_DELTA).count();
    let summary = serde_json::json!({
        "grid_step": cfg.evaluation.grid_step,
        "grid_states": rows.len(),
        "labeled_states": rows.iter().filter(|r| r.label.is_some()).count(),
        "evaluated_states": deltas.len(),
        "optimal_fraction": optimal as f64 / deltas.len().max(1) as f64,
        "below_optimum": negative,
        "delta_j": Summary::of(&deltas),
    });
    write(&out, "open_loop.csv", &open_loop_csv(&rows))?;
    write(&out, "open_loop_summary.json", &json(&summary))?;
    let mut timing = String::from("policy_seconds,hybrid_seconds\n");
    for r in &rows {
        timing.push_str(&format!("{},{}\n", r.policy_seconds, r.hybrid_seconds));
    }
    write(&out, "open_loop_timing.csv", &timing)?;
    if sys.n() == 2 {
        write(
            &out,
            "open_loop_heatmap.svg",
            &svg::heat_map(&rows, &sys, cfg.evaluation.grid_step)?,
        )?;
    }
    println!(
        "{} of {} evaluated states optimal ({:.1}%), mean ΔJ {:.4}%",
        optimal,
        deltas.len(),
        100.0 * optimal as f64 / deltas.len().max(1) as f64,
        Summary::of(&deltas).mean
    );
    if negative > 0 {
        return Err(Failure::Domain(format!(
            "{negative} state(s) report a policy cost below the hybrid optimum"
        )));
    }
    Ok(())
}

fn cmd_eval_closed(common: &Common, policy: &Path, seed: Option<u64>) -> Outcome {
    let Setup { cfg, sys, out } = setup(common)?;
    let mpc = cfg.mpc_config(&sys)?;
    let pol = load_policy(policy, mpc.horizon)?;
    prepare_out(&out, common.force)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(cfg.training.seed));
    let initial = sample_labeled_states(&pol, &sys, &mut rng, cfg.evaluation.closed_loop_runs)?;
    let report = evaluate_closed_loop(
        &pol,
        &sys,
        &mpc,
        &initial,
        cfg.evaluation.stop_tol,
        cfg.evaluation.step_cap,
    )?;
    write(&out, "closed_loop.json", &json(&report.table()))?;
    write(&out, "closed_loop_runs.csv", &report.runs_csv())?;
    write(
        &out,
        "closed_loop_timing.json",
        &json(&report.timing_table()),
    )?;
    write(&out, "closed_loop_timing.csv", &report.timing_csv())?;
    println!(
        "{} runs: ΔJ mean {:.4}% median {:.4}% max {:.4}%, {} fallbacks, {} feasibility breaks",
        report.runs.len(),
        report.delta.mean,
        report.delta.median,
        report.delta.max,
        report.fallbacks,
        report.recursive_feasibility_breaks
    );
    if report.recursive_feasibility_breaks > 0 {
        return Err(Failure::Domain(format!(
            "recursive feasibility broken in {} run(s)",
            report.recursive_feasibility_breaks
        )));
    }
    Ok(())
}

fn cmd_sweep_horizons(common: &Common, horizons: Option<Vec<usize>>, seed: Option<u64>) -> Outcome {
    let Setup { cfg, sys, out } = setup(common)?;
    let horizons = horizons.unwrap_or_else(|| cfg.evaluation.horizons.clone());
    if horizons.is_empty() {
        return Err(Failure::Usage("no horizons given".into()));
    }
    if horizons.contains(&0) {
        return Err(Failure::Usage("horizons must be at least 1".into()));
    }
    let base = cfg.mpc_config(&sys)?;
    prepare_out(&out, common.force)?;
    let seed = seed.unwrap_or(cfg.training.seed);
    let counts = cfg.seed_counts(&sys)?;
    let mut table =
        String::from("N,regions,iterations,data_count,data_count_normalized,certified\n");
    let mut first = None;
    let mut uncertified = Vec::new();
    for &n in &horizons {
        let mpc = base.with_horizon(n);
        let data = seed_training_set(&sys, &mpc, &counts, seed)?;
        let (pol, report) = train(&sys, &mpc, data, &cfg.train_options())?;
        pol.save(&out.join(format!("policy_N{n}.json")))?;
        let reference = *first.get_or_insert(report.data_count);
        table.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            report.final_cell_count,
            report.iterations,
            report.data_count,
            report.data_count as f64 / reference as f64,
            report.certified
        ));
        println!(
            "N = {n}: {} cells, {} iterations, {} samples{}",
            report.final_cell_count,
            report.iterations,
            report.data_count,
            if report.certified {
                ""
            } else {
                " (not certified)"
            }
        );
        if !report.certified {
            uncertified.push(n);
        }
    }
    write(&out, "horizons.csv", &table)?;
    if uncertified.is_empty() {
        Ok(())
    } else {
        Err(Failure::Domain(format!(
            "not certified for N in {uncertified:?}"
        )))
    }
}

fn cmd_simulate(common: &Common, policy: Option<&Path>, x0: &[f64]) -> Outcome {
    let Setup { cfg, sys, out } = setup(common)?;
    let mpc = cfg.mpc_config(&sys)?;
    if x0.len() != sys.n() {
        return Err(Failure::Usage(format!(
            "--x0 has {} entries, the system has n = {}",
            x0.len(),
            sys.n()
        )));
    }
    let x0 = DVector::from_column_slice(x0);
    let (stop, cap) = (cfg.evaluation.stop_tol, cfg.evaluation.step_cap);
    let trace = match policy {
        Some(path) => {
            let pol = load_policy(path, mpc.horizon)?;
            simulate(&pol, &sys, &mpc, &x0, stop, cap)?
        }
        None => simulate_hybrid(&sys, &mpc, &x0, stop, cap)?,
    };
    prepare_out(&out, common.force)?;
    write(&out, "trace.csv", &trace.to_csv())?;
    println!(
        "{} steps, {:?}, cumulative cost {:.6}, {} fallbacks",
        trace.steps(),
        trace.termination,
        trace.cumulative_cost(&mpc),
        trace.fallback_count()
    );
    if trace.termination == Termination::Infeasible {
        return Err(Failure::Domain("the MPC problem became infeasible".into()));
    }
    Ok(())
}
