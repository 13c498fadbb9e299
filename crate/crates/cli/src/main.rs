use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dgnet::check::SUITES;
use dgnet::config::preset_names;
use dgnet::reference::{burgers_expectation_at, burgers_variance_at, classical_upwind_solve, mc_moments};
use dgnet::sampling::{stream, OmegaDistribution, OmegaKind, StreamKind};
use dgnet::tables::TableOptions;
use dgnet::{Error, ExperimentConfig, Problem, UniformMesh};

/// Train neural-network DG solvers and reproduce the published tables.
#[derive(Parser)]
#[command(name = "dgnet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for run artifacts.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (concurrent table runs).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    iterations: Option<usize>,
    /// Cap mesh levels at 1/h <= 40 and iterations at 20000.
    #[arg(long)]
    desk: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Train one experiment from a config file or preset id.
    Run {
        config: String,
        #[command(flatten)]
        o: Overrides,
    },
    /// Reproduce a table (T1 T2 T3 T4 T5 T7 T8 T9 T10 T11).
    Table {
        id: String,
        #[command(flatten)]
        o: Overrides,
    },
    /// Write plot data (F2 F3 F4 F5) from finished runs.
    Figure {
        id: String,
        /// Directory holding the run directories.
        #[arg(long, default_value = "runs")]
        runs: PathBuf,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
    /// Classical reference solution (deterministic) or moments (stochastic).
    Reference {
        /// linear-d<d>, burgers, stoch-linear-d<d>-s<s>, stoch-burgers-s<s>
        problem: String,
        /// Cells per unit length.
        #[arg(long, default_value_t = 80)]
        inv_h: usize,
        #[arg(long, default_value_t = 1.0)]
        t_final: f64,
        /// Monte-Carlo samples for stochastic moments.
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Output CSV; stdout if absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run oracle self-checks.
    Check {
        /// counts, gradients, fluxes, basis, reference or all
        suite: String,
    },
    /// List preset ids.
    Presets,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| {
                matches!(
                    c.downcast_ref::<Error>(),
                    Some(Error::Config(_) | Error::Unknown { .. } | Error::InvalidArgument(_))
                )
            });
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}

fn load_config(spec: &str) -> Result<ExperimentConfig> {
    let path = Path::new(spec);
    if path.exists() {
        Ok(ExperimentConfig::load(path).with_context(|| format!("loading {spec}"))?)
    } else {
        Ok(ExperimentConfig::preset(spec)?)
    }
}

fn dispatch(cmd: Command) -> Result<bool> {
    match cmd {
        Command::Run { config, o } => {
            let mut cfg = load_config(&config)?;
            if o.desk {
                cfg = cfg.desk();
            }
            if let Some(s) = o.seed {
                cfg.seed = s;
            }
            if let Some(d) = o.out {
                cfg.out_dir = d;
            }
            if let Some(i) = o.iterations {
                cfg.optimizer.iterations = i;
            }
            if cfg.mesh.inv_h.is_empty() {
                bail!(Error::Config("no mesh level left after desk caps".into()));
            }
            let rec = dgnet::run_experiment(&cfg)?;
            for (l, order) in rec.levels.iter().zip(rec.orders()) {
                println!(
                    "h=1/{} error={:.3e} order={}",
                    l.inv_h,
                    l.report.windowed,
                    order.map_or("-".into(), |o| format!("{o:.2}"))
                );
            }
            println!("artifacts: {}", cfg.run_dir().display());
            Ok(true)
        }
        Command::Table { id, o } => {
            let mut opts = TableOptions::new(o.out.unwrap_or_else(|| PathBuf::from("runs")));
            opts.seed = o.seed;
            opts.iterations = o.iterations;
            opts.threads = o.threads;
            if o.desk {
                opts = opts.desk();
            }
            let t = dgnet::reproduce_table(&id, &opts)?;
            println!("{}", t.header.join(","));
            for r in &t.rows {
                println!("{}", r.join(","));
            }
            println!("written: {}", t.path.display());
            Ok(true)
        }
        Command::Figure { id, runs, out } => {
            for f in dgnet::emit_figure_data(&id, &runs, &out)? {
                println!("{}", f.display());
            }
            Ok(true)
        }
        Command::Reference {
            problem,
            inv_h,
            t_final,
            samples,
            seed,
            out,
        } => {
            let p = parse_problem(&problem)?;
            p.validate()?;
            let text = reference_csv(&p, inv_h, t_final, samples, seed)?;
            match out {
                Some(path) => std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?,
                None => print!("{text}"),
            }
            Ok(true)
        }
        Command::Check { suite } => {
            let suites: Vec<&str> = if suite == "all" { SUITES.to_vec() } else { vec![suite.as_str()] };
            let mut ok = true;
            for s in suites {
                let r = dgnet::check(s)?;
                println!("{r}");
                ok &= r.passed();
            }
            Ok(ok)
        }
        Command::Presets => {
            for p in preset_names() {
                println!("{p}");
            }
            Ok(true)
        }
    }
}

fn parse_problem(s: &str) -> Result<Problem> {
    let bad = || Error::Unknown {
        kind: "problem",
        id: s.to_string(),
    };
    let num = |t: &str, c: char| t.strip_prefix(c).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
    let parts: Vec<&str> = s.split('-').collect();
    Ok(match parts.as_slice() {
        ["linear", d] => Problem::LinearDet { dim: num(d, 'd')? },
        ["burgers"] => Problem::BurgersDet,
        ["stoch", "linear", d, sv] => Problem::LinearStoch {
            dim: num(d, 'd')?,
            s: num(sv, 's')?,
        },
        ["stoch", "burgers", sv] => {
            let s = num(sv, 's')?;
            Problem::BurgersStoch {
                s,
                eps: 0.5 / s as f64,
            }
        }
        _ => return Err(bad().into()),
    })
}

fn reference_csv(p: &Problem, inv_h: usize, t_final: f64, samples: usize, seed: u64) -> Result<String> {
    let (lo, hi) = p.domain();
    let cells = ((hi - lo) * inv_h as f64).round() as usize;
    let mut w = csv::Writer::from_writer(Vec::new());
    if !p.is_stochastic() {
        let lambda = 1.0 / (p.dim() as f64 * 2.0);
        let sol = classical_upwind_solve(p, cells, lambda, t_final, None)?;
        let mut header: Vec<String> = (1..=p.dim()).map(|k| format!("x{k}")).collect();
        header.extend(["numeric".into(), "exact".into()]);
        w.write_record(&header)?;
        for (c, v) in sol.final_values().iter().enumerate() {
            let x = sol.mesh.center(&sol.mesh.multi_index(c));
            let mut row: Vec<String> = x.iter().map(|v| format!("{v:.6e}")).collect();
            row.push(format!("{v:.6e}"));
            row.push(format!("{:.6e}", p.exact(t_final, &x, None)));
            w.write_record(&row)?;
        }
    } else {
        // Moments at cell centres along the diagonal.
        let mesh = UniformMesh::new(p.dim(), cells, lo, hi)?;
        let points: Vec<(f64, Vec<f64>)> = (0..cells).map(|i| (t_final, mesh.center(&vec![i; p.dim()]))).collect();
        let kind = if p.is_burgers() { OmegaKind::SumUniform } else { OmegaKind::Uniform01 };
        let dist = OmegaDistribution::new(kind, p.random_dim());
        let m = mc_moments(p, &dist, samples, &points, &mut stream(seed, StreamKind::Reference, 0))?;
        let mut header = vec!["x", "mean", "variance", "mean_std_error", "variance_std_error"];
        if let Problem::BurgersStoch { .. } = p {
            header.extend(["analytic_mean", "analytic_variance"]);
        }
        w.write_record(&header)?;
        for (i, (t, x)) in points.iter().enumerate() {
            let mut row = vec![x[0], m.mean[i], m.variance[i], m.mean_std_error[i], m.variance_std_error[i]];
            if let Problem::BurgersStoch { eps, .. } = p {
                row.push(burgers_expectation_at(*t, x[0], *eps));
                row.push(burgers_variance_at(*t, x[0], *eps));
            }
            w.write_record(row.iter().map(|v| format!("{v:.6e}")))?;
        }
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
}
