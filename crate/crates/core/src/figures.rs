//! Plot-ready data files, one whitespace-separated table per curve.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::metrics::Surface;
use crate::train::{checkpointed_levels, load_level, profile_1d, read_report, Evaluator};

pub const FIGURE_IDS: [&str; 4] = ["F2", "F3", "F4", "F5"];

/// Runs each figure reads from `runs_root`.
pub fn figure_runs(id: &str) -> Result<Vec<String>> {
    let v: Vec<String> = match id {
        "F2" => vec!["linear-d1-fe".into(), "second-order".into(), "linear-d1-semi".into()],
        "F3" => vec!["burgers-fe".into()],
        "F4" => [2, 5].iter().map(|s| format!("stoch-linear-s{s}")).collect(),
        "F5" => [2, 10, 100].iter().map(|s| format!("stoch-burgers-s{s}-mc10k")).collect(),
        _ => {
            return Err(Error::Unknown {
                kind: "figure",
                id: id.to_string(),
            })
        }
    };
    Ok(v)
}

pub const PROFILE_TIMES: [f64; 4] = [0.25, 0.5, 0.75, 1.0];

/// Write the data of figure `id` into `out_dir` from the runs under `runs_root`.
pub fn emit_figure_data(id: &str, runs_root: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let runs = figure_runs(id)?;
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut emit = |name: String, header: &str, rows: Vec<Vec<f64>>| -> Result<()> {
        let mut text = format!("# {header}\n");
        for r in rows {
            let cols: Vec<String> = r.iter().map(|v| format!("{v:.6e}")).collect();
            writeln!(text, "{}", cols.join(" ")).expect("write to string");
        }
        let path = out_dir.join(name);
        fs::write(&path, text)?;
        written.push(path);
        Ok(())
    };
    match id {
        "F2" => {
            for (run, curve) in runs.iter().zip(["first_order", "second_order", "autograd"]) {
                let rows = read_report(&runs_root.join(run).join("report.csv"))?
                    .into_iter()
                    .map(|(h, e)| Ok(vec![parse_h(&h)?, e]))
                    .collect::<Result<Vec<_>>>()?;
                emit(format!("F2_{curve}.dat"), "h error", rows)?;
            }
        }
        "F3" => {
            let dir = runs_root.join(&runs[0]);
            let inv_h = finest(&dir)?;
            let l = load_level(&dir, inv_h)?;
            let mesh = &l.level.mesh;
            for t in PROFILE_TIMES {
                let u = profile_1d(&l.rep, mesh, t, None)?;
                let rows = mesh
                    .centers_1d()
                    .into_iter()
                    .zip(u)
                    .map(|(x, v)| vec![x, v, l.config.problem.exact(t, &[x], None)])
                    .collect();
                emit(format!("F3_t{t}.dat"), "x numeric exact", rows)?;
            }
        }
        _ => {
            // Moments at the final time along the diagonal (or the 1D grid).
            for run in &runs {
                let dir = runs_root.join(run);
                let inv_h = finest(&dir)?;
                let mut l = load_level(&dir, inv_h)?;
                l.config.eval.surface = Surface::FinalTime;
                let ev = Evaluator::new(&l.config, &l.level)?;
                let prof = ev.moment_profiles(&l.rep);
                let tag = run.split('-').find(|p| p.starts_with('s') && p[1..].parse::<usize>().is_ok()).unwrap_or(run);
                emit(
                    format!("{id}_{tag}_expectation.dat"),
                    "x numeric reference",
                    prof.iter().map(|p| vec![p.1[0], p.2, p.4]).collect(),
                )?;
                emit(
                    format!("{id}_{tag}_variance.dat"),
                    "x numeric reference",
                    prof.iter().map(|p| vec![p.1[0], p.3, p.5]).collect(),
                )?;
            }
        }
    }
    Ok(written)
}

fn finest(run_dir: &Path) -> Result<usize> {
    checkpointed_levels(run_dir)?
        .last()
        .copied()
        .ok_or_else(|| Error::MissingArtifact(run_dir.join("h*/net0.ckpt")))
}

fn parse_h(s: &str) -> Result<f64> {
    let bad = || Error::Config(format!("bad mesh size {s:?}"));
    let n: f64 = s.strip_prefix("1/").ok_or_else(bad)?.parse().map_err(|_| bad())?;
    Ok(1.0 / n)
}
