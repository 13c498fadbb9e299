//! Registry of the published tables and their reproduction.
//!
//! Each table is a set of groups (one per key tuple such as `d` or `(eps, s)`)
//! whose rows are mesh levels. Published values are labels for the side-by-side
//! `paper_value` column; they are never compared for equality.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::config::{ExperimentConfig, DESK_MAX_INV_H, DESK_MAX_ITERATIONS};
use crate::error::{Error, Result};
use crate::train::{run_experiment, sci, LevelRecord, RunRecord};

/// Quantity shown in a measured column.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    /// Windowed headline error.
    Error,
    Order,
    ExpectationL2,
    ExpectationOrder,
    VarianceL2,
    VarianceOrder,
    ExpectationL1,
    VarianceL1,
}

#[derive(Debug, Clone)]
pub struct Column {
    pub name: &'static str,
    /// Index into the group's presets.
    pub run: usize,
    pub metric: Metric,
}

#[derive(Debug, Clone)]
pub struct Group {
    pub keys: Vec<String>,
    pub presets: Vec<String>,
    /// `(1/h, published value per measured column)`.
    pub rows: Vec<(usize, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone)]
pub struct TableDef {
    pub id: &'static str,
    pub key_columns: Vec<&'static str>,
    pub columns: Vec<Column>,
    pub groups: Vec<Group>,
}

impl TableDef {
    /// Header: keys, `h`, measured columns, `paper_value`.
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = self.key_columns.iter().map(|s| s.to_string()).collect();
        h.push("h".into());
        h.extend(self.columns.iter().map(|c| c.name.to_string()));
        h.push("paper_value".into());
        h
    }

    /// Distinct presets in first-use order.
    pub fn presets(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for g in &self.groups {
            for p in &g.presets {
                if !out.contains(p) {
                    out.push(p.clone());
                }
            }
        }
        out
    }

    pub fn row_count(&self) -> usize {
        self.groups.iter().map(|g| g.rows.len()).sum()
    }

    /// Published value at `(group keys, 1/h, column)`.
    pub fn paper_value(&self, keys: &[&str], inv_h: usize, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|c| c.name == column)?;
        let g = self.groups.iter().find(|g| g.keys.iter().map(String::as_str).eq(keys.iter().copied()))?;
        g.rows.iter().find(|r| r.0 == inv_h)?.1[c]
    }
}

pub const TABLE_IDS: [&str; 10] = ["T1", "T2", "T3", "T4", "T5", "T7", "T8", "T9", "T10", "T11"];

const T1: &str = "
1 10 2.86e-1 - 3.04e-1 -
1 20 1.50e-1 0.93 1.58e-1 0.93
1 40 7.73e-2 0.94 8.05e-2 0.98
1 80 3.95e-2 0.96 8.39e-2 -0.05
1 160 2.10e-2 0.91 7.01e-2 0.25
1 320 1.72e-2 0.28 1.44e-1 -1.04
2 10 3.32e-1 - 3.43e-1 -
2 20 1.72e-1 0.90 1.81e-1 0.91
2 40 8.90e-2 0.95 8.89e-2 1.03
2 80 4.68e-2 0.92 6.00e-2 0.56
2 160 2.57e-2 0.86 5.40e-2 0.15
2 320 1.87e-2 0.45 5.64e-2 -0.06
3 10 3.59e-1 - 3.75e-1 -
3 20 1.92e-1 0.90 2.02e-1 0.89
3 40 9.95e-2 0.95 1.03e-1 0.96
3 80 5.20e-2 0.93 6.94e-2 0.57
3 160 3.14e-2 0.72 9.45e-2 -0.44
3 320 2.09e-2 0.58 1.16e-1 -0.30
";

const T2: &str = "
10 3.64e-1 -
20 1.92e-1 0.92
40 9.92e-2 0.95
80 5.04e-2 0.97
160 2.54e-2 0.98
320 1.29e-2 0.97
640 6.78e-3 0.93
1280 4.24e-3 0.67
";

const T3: &str = "
10 1.01e-1 -
20 3.69e-2 1.40
40 2.24e-2 0.79
80 1.15e-2 0.95
160 1.06e-2 0.12
320 7.81e-3 0.44
";

const T4: &str = "
10 7.36e-2 -
20 1.45e-2 2.34
40 2.33e-3 2.63
80 6.31e-4 1.88
160 2.11e-4 1.57
";

const T5: &str = "
10 9.87e-2 3.82e-1
20 4.88e-2 3.37e-1
40 3.48e-2 3.03e-1
80 2.58e-2 3.12e-1
160 1.84e-2 1.91e-1
320 1.73e-2 3.86e-1
";

const T7: &str = "
50 40 1.54e-1 - 2.13e-1 -
50 80 7.85e-2 0.97 1.14e-1 0.93
50 160 3.88e-2 1.01 5.61e-2 0.96
50 320 1.96e-2 0.98 3.22e-2 0.79
100 40 1.53e-1 - 2.07e-1 -
100 80 7.83e-2 0.97 1.12e-1 0.88
100 160 3.93e-2 0.99 5.82e-2 0.95
100 320 2.01e-2 0.96 2.93e-2 0.98
";

const T8: &str = "
0.25 2 40 1.00e-2 5.42e-1
0.25 2 80 2.98e-2 6.49e-1
0.1 5 40 1.48e-2 2.23e-1
0.1 5 80 3.06e-2 3.22e-1
0.05 10 40 8.16e-3 2.75e-1
0.05 10 80 2.24e-2 4.34e-1
0.01 50 40 1.09e-2 5.78e-1
0.01 50 80 1.90e-2 5.86e-1
0.005 100 40 5.30e-3 6.82e-1
0.005 100 80 1.81e-3 7.89e-1
0.0025 200 40 1.02e-2 8.96e-1
0.0025 200 80 1.57e-2 9.92e-1
";

const T9: &str = "
0.25 2 40 2.44e-3 1.27e-1 1.63e-3 8.66e-2
0.25 2 80 3.57e-3 8.82e-2 2.06e-3 5.77e-2
0.25 2 160 9.70e-3 1.14e-1 4.42e-3 7.40e-2
0.25 2 320 2.28e-2 2.21e-1 1.10e-2 1.46e-1
0.1 5 40 4.16e-3 2.30e-1 2.03e-3 1.60e-1
0.1 5 80 2.44e-3 1.24e-1 1.34e-3 9.78e-2
0.1 5 160 4.34e-3 9.16e-2 2.17e-3 8.04e-2
0.1 5 320 1.61e-2 2.21e-1 8.10e-3 1.75e-1
0.05 10 40 6.79e-3 3.37e-1 2.99e-3 2.40e-1
0.05 10 80 2.25e-3 1.86e-1 1.13e-3 1.45e-1
0.05 10 160 4.68e-3 1.27e-1 2.28e-3 1.17e-1
0.05 10 320 2.01e-2 3.36e-1 8.94e-3 2.74e-1
0.01 50 40 1.80e-2 6.42e-1 5.36e-3 5.01e-1
0.01 50 80 5.74e-3 4.04e-1 1.67e-3 3.32e-1
0.01 50 160 3.09e-3 2.69e-1 1.18e-3 2.68e-1
0.01 50 320 4.40e-2 9.12e-1 1.70e-2 8.06e-1
0.005 100 40 2.58e-2 7.53e-1 6.54e-3 5.01e-1
0.005 100 80 8.64e-3 5.25e-1 2.09e-3 3.32e-1
0.005 100 160 1.95e-3 3.76e-1 7.22e-4 2.68e-1
0.005 100 320 3.07e-2 9.47e-1 5.65e-3 8.06e-1
0.0025 200 40 2.58e-2 7.53e-1 7.56e-3 7.52e-1
0.0025 200 80 8.64e-3 5.25e-1 2.51e-3 5.68e-1
0.0025 200 160 1.95e-3 3.76e-1 8.30e-4 5.51e-1
0.0025 200 320 3.07e-2 9.47e-1 3.52e-3 9.09e-1
";

const T10: &str = "
0.25 2 80 3.88e-3 8.06e-2 2.17e-3 8.06e-2
0.25 2 160 7.78e-3 8.66e-3 4.48e-3 8.66e-2
0.25 2 320 2.68e-2 2.44e-1 1.72e-2 2.44e-1
0.1 5 80 2.39e-3 1.21e-1 1.35e-3 8.78e-2
0.1 5 160 3.18e-3 7.39e-2 2.24e-3 6.29e-2
0.1 5 320 1.70e-2 2.42e-1 9.61e-3 1.92e-1
0.05 10 80 1.80e-3 1.88e-1 1.14e-3 1.45e-1
0.05 10 160 4.23e-3 1.30e-1 2.32e-3 1.22e-1
0.05 10 320 1.47e-2 2.56e-1 7.40e-3 2.27e-1
0.01 50 80 5.88e-3 4.01e-1 1.79e-3 3.25e-1
0.01 50 160 3.61e-3 2.74e-1 1.76e-3 2.74e-1
0.01 50 320 2.19e-2 5.37e-1 5.47e-3 5.04e-1
0.005 100 80 8.79e-3 5.29e-1 2.11e-3 4.43e-1
0.005 100 160 2.78e-3 3.47e-1 1.21e-3 3.49e-1
0.005 100 320 3.01e-2 8.97e-1 7.03e-3 8.20e-1
";

const T11: &str = "
0.01 50 80 5.82e-3 4.03e-1 2.11e-3 3.27e-1
0.01 50 160 2.37e-3 2.36e-1 9.99e-4 2.18e-1
0.01 50 320 8.37e-3 2.76e-1 3.42e-3 2.80e-1
0.005 100 80 8.82e-3 5.28e-1 2.20e-3 4.41e-1
0.005 100 160 2.07e-3 3.53e-1 7.66e-4 3.51e-1
0.005 100 320 3.03e-2 8.72e-1 5.92e-3 7.96e-1
";

/// Parse `keys.. inv_h values..` lines into groups.
fn groups(data: &str, nkeys: usize, presets: impl Fn(&[&str]) -> Vec<String>) -> Vec<Group> {
    let mut out: Vec<Group> = Vec::new();
    for line in data.lines().filter(|l| !l.trim().is_empty()) {
        let tok: Vec<&str> = line.split_whitespace().collect();
        let keys: Vec<String> = tok[..nkeys].iter().map(|s| s.to_string()).collect();
        let inv_h = tok[nkeys].parse().expect("registry 1/h");
        let vals = tok[nkeys + 1..]
            .iter()
            .map(|v| if *v == "-" { None } else { Some(v.parse().expect("registry value")) })
            .collect();
        match out.last_mut() {
            Some(g) if g.keys == keys => g.rows.push((inv_h, vals)),
            _ => out.push(Group {
                presets: presets(&tok[..nkeys]),
                keys,
                rows: vec![(inv_h, vals)],
            }),
        }
    }
    out
}

fn col(name: &'static str, run: usize, metric: Metric) -> Column {
    Column { name, run, metric }
}

fn moment_columns(l1: bool) -> Vec<Column> {
    let mut c = vec![
        col("expectation_l2", 0, Metric::ExpectationL2),
        col("variance_l2", 0, Metric::VarianceL2),
    ];
    if l1 {
        c.push(col("expectation_l1", 0, Metric::ExpectationL1));
        c.push(col("variance_l1", 0, Metric::VarianceL1));
    }
    c
}

/// Table definition for `id`.
pub fn table(id: &str) -> Result<TableDef> {
    use Metric::*;
    let single = |p: &'static str| move |_: &[&str]| vec![p.to_string()];
    let burgers = |method: &'static str| move |k: &[&str]| vec![format!("stoch-burgers-s{}-{method}", k[1])];
    let err_order = || vec![col("error", 0, Error), col("order", 0, Order)];
    let def = match id {
        "T1" => TableDef {
            id: "T1",
            key_columns: vec!["d"],
            columns: vec![
                col("fully_discrete_error", 0, Error),
                col("fully_discrete_order", 0, Order),
                col("semi_discrete_error", 1, Error),
                col("semi_discrete_order", 1, Order),
            ],
            groups: groups(T1, 1, |k| vec![format!("linear-d{}-fe", k[0]), format!("linear-d{}-semi", k[0])]),
        },
        "T2" => TableDef {
            id: "T2",
            key_columns: vec![],
            columns: err_order(),
            groups: groups(T2, 0, single("linear-wide")),
        },
        "T3" => TableDef {
            id: "T3",
            key_columns: vec![],
            columns: err_order(),
            groups: groups(T3, 0, single("second-order")),
        },
        "T4" => TableDef {
            id: "T4",
            key_columns: vec![],
            columns: err_order(),
            groups: groups(T4, 0, single("second-order-deep")),
        },
        "T5" => TableDef {
            id: "T5",
            key_columns: vec![],
            columns: vec![col("fully_discrete", 0, Error), col("semi_discrete", 1, Error)],
            groups: groups(T5, 0, |_| vec!["burgers-fe".into(), "burgers-semi".into()]),
        },
        "T7" => TableDef {
            id: "T7",
            key_columns: vec!["s"],
            columns: vec![
                col("expectation", 0, ExpectationL2),
                col("expectation_order", 0, ExpectationOrder),
                col("variance", 0, VarianceL2),
                col("variance_order", 0, VarianceOrder),
            ],
            groups: groups(T7, 1, |k| vec![format!("stoch-linear-s{}", k[0])]),
        },
        "T8" => TableDef {
            id: "T8",
            key_columns: vec!["eps", "s"],
            columns: moment_columns(false),
            groups: groups(T8, 2, burgers("mc10k")),
        },
        "T9" => TableDef {
            id: "T9",
            key_columns: vec!["eps", "s"],
            columns: moment_columns(true),
            groups: groups(T9, 2, burgers("mc50k")),
        },
        "T10" => TableDef {
            id: "T10",
            key_columns: vec!["eps", "s"],
            columns: moment_columns(true),
            groups: groups(T10, 2, burgers("qmc")),
        },
        "T11" => TableDef {
            id: "T11",
            key_columns: vec!["eps", "s"],
            columns: moment_columns(true),
            groups: groups(T11, 2, burgers("mlmc")),
        },
        _ => {
            return Err(crate::error::Error::Unknown {
                kind: "table",
                id: id.to_string(),
            })
        }
    };
    Ok(def)
}

/// Overrides applied to every run of a table.
#[derive(Debug, Clone)]
pub struct TableOptions {
    pub out_dir: PathBuf,
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    /// Largest 1/h to train; finer rows keep only their published values.
    pub max_inv_h: Option<usize>,
    /// Concurrent runs.
    pub threads: usize,
}

impl TableOptions {
    pub fn new(out_dir: impl Into<PathBuf>) -> Self {
        TableOptions {
            out_dir: out_dir.into(),
            seed: None,
            iterations: None,
            max_inv_h: None,
            threads: 1,
        }
    }

    pub fn desk(mut self) -> Self {
        self.max_inv_h = Some(self.max_inv_h.map_or(DESK_MAX_INV_H, |m| m.min(DESK_MAX_INV_H)));
        self.iterations = Some(self.iterations.map_or(DESK_MAX_ITERATIONS, |m| m.min(DESK_MAX_ITERATIONS)));
        self
    }

    /// Preset `id` with these overrides applied.
    pub fn config(&self, id: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::preset(id)?;
        cfg.out_dir = self.out_dir.clone();
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(i) = self.iterations {
            cfg.optimizer.iterations = i;
        }
        if let Some(m) = self.max_inv_h {
            cfg.mesh.inv_h.retain(|&n| n <= m);
        }
        Ok(cfg)
    }
}

#[derive(Debug)]
pub struct TableResult {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub runs: Vec<RunRecord>,
}

/// Train every run of table `id` and write `<out_dir>/<id>.csv`.
pub fn reproduce_table(id: &str, opts: &TableOptions) -> Result<TableResult> {
    let def = table(id)?;
    let configs = def
        .presets()
        .iter()
        .map(|p| opts.config(p))
        .collect::<Result<Vec<_>>>()?;
    let todo: Vec<&ExperimentConfig> = configs.iter().filter(|c| !c.mesh.inv_h.is_empty()).collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let runs: Vec<RunRecord> = pool.install(|| todo.par_iter().map(|c| run_experiment(c)).collect::<Result<Vec<_>>>())?;
    let by_name: BTreeMap<&str, &RunRecord> = runs.iter().map(|r| (r.config.name.as_str(), r)).collect();
    let mut rows = Vec::new();
    for g in &def.groups {
        for (inv_h, published) in &g.rows {
            let mut row = g.keys.clone();
            row.push(format!("1/{inv_h}"));
            for c in &def.columns {
                let run = by_name.get(g.presets[c.run].as_str());
                row.push(run.and_then(|r| measured(r, *inv_h, c.metric)).unwrap_or_default());
            }
            let labels: Vec<String> = def
                .columns
                .iter()
                .zip(published)
                .map(|(c, v)| format!("{}={}", c.name, v.map_or("-".into(), |v| paper_label(c.metric, v))))
                .collect();
            row.push(labels.join(" "));
            rows.push(row);
        }
    }
    let header = def.header();
    fs_create(&opts.out_dir)?;
    let path = opts.out_dir.join(format!("{id}.csv"));
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(&header)?;
    for r in &rows {
        w.write_record(r)?;
    }
    w.flush()?;
    Ok(TableResult { path, header, rows, runs })
}

fn fs_create(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

fn is_order(m: Metric) -> bool {
    matches!(m, Metric::Order | Metric::ExpectationOrder | Metric::VarianceOrder)
}

fn paper_label(m: Metric, v: f64) -> String {
    if is_order(m) {
        format!("{v:.2}")
    } else {
        format!("{v:.2e}")
    }
}

fn value(l: &LevelRecord, m: Metric) -> Option<f64> {
    let r = &l.report;
    match m {
        Metric::Error | Metric::Order => Some(r.windowed),
        Metric::ExpectationL2 | Metric::ExpectationOrder => r.expectation_l2.map(|_| r.windowed),
        Metric::VarianceL2 | Metric::VarianceOrder => r.variance_l2,
        Metric::ExpectationL1 => r.expectation_l1,
        Metric::VarianceL1 => r.variance_l1,
    }
}

/// Measured cell for `(run, 1/h, metric)`; orders against the previous level run.
fn measured(run: &RunRecord, inv_h: usize, m: Metric) -> Option<String> {
    let i = run.levels.iter().position(|l| l.inv_h == inv_h)?;
    let l = &run.levels[i];
    if !is_order(m) {
        return value(l, m).map(sci);
    }
    let prev = run.levels.get(i.checked_sub(1)?)?;
    let ratio = l.inv_h as f64 / prev.inv_h as f64;
    crate::metrics::convergence_order(value(prev, m)?, value(l, m)?, ratio)
        .ok()
        .map(|o| format!("{o:.2}"))
}
