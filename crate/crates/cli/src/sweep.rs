//! Sweeps over every learner and every constant configuration on shared
//! seeds, the comparison table, plot-ready CSVs and the sweep checks.

use std::path::{Path, PathBuf};

use fedpqos_core::harness::{best_action, run_into};
use fedpqos_core::{
    run_constant_benchmark, run_training, AgentFamily, CompressionTable, ExperimentConfig, Result, RunOptions,
    RunSummary, NUM_ACTIONS,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// What produced a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    Learner(AgentFamily),
    Constant(usize),
}

impl Entry {
    /// The five learners followed by the nine constants.
    pub fn all() -> Vec<Entry> {
        AgentFamily::ALL
            .into_iter()
            .map(Entry::Learner)
            .chain((0..NUM_ACTIONS).map(Entry::Constant))
            .collect()
    }

    pub fn label(self, table: &CompressionTable) -> String {
        match self {
            Entry::Learner(f) => f.display_name().to_string(),
            Entry::Constant(a) => table.get(a).map_or_else(|| format!("action-{a}"), |c| c.label()),
        }
    }

    /// Directory name of the run inside a seed directory.
    pub fn dir_name(self, table: &CompressionTable) -> String {
        match self {
            Entry::Learner(f) => f.key().to_string(),
            Entry::Constant(_) => format!("bench-{}", self.label(table)),
        }
    }

    pub fn kind(self) -> &'static str {
        match self {
            Entry::Learner(_) => "rl",
            Entry::Constant(_) => "constant",
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub seed: u64,
    pub entry: Entry,
    pub summary: RunSummary,
}

/// All runs of a sweep, in seed-major, entry-minor order.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub seeds: Vec<u64>,
    pub table: CompressionTable,
    pub runs: Vec<SweepRun>,
    /// Best constant action per seed.
    pub oracle: Vec<usize>,
}

impl Sweep {
    pub fn summary(&self, seed: u64, entry: Entry) -> &RunSummary {
        &self
            .runs
            .iter()
            .find(|r| r.seed == seed && r.entry == entry)
            .expect("every seed runs every entry")
            .summary
    }

    pub fn summaries(&self, entry: Entry) -> Vec<&RunSummary> {
        self.seeds.iter().map(|&s| self.summary(s, entry)).collect()
    }

    /// One row per entry, learners first.
    pub fn rows(&self) -> Vec<Row> {
        Entry::all()
            .into_iter()
            .map(|e| Row::from_summaries(&e.label(&self.table), e.kind(), &self.summaries(e)))
            .collect()
    }

    /// Mean over seeds of one summary field.
    pub fn mean_of(&self, entry: Entry, field: impl Fn(&RunSummary) -> f64) -> f64 {
        mean(&self.summaries(entry).into_iter().map(field).collect::<Vec<_>>())
    }
}

fn seeded(config: &ExperimentConfig, seed: u64) -> ExperimentConfig {
    let mut c = config.clone();
    c.experiment.seed = seed;
    c
}

/// Runs the nine constant benchmarks of one seed without outputs and
/// returns their summaries and the oracle action.
fn quiet_benchmarks(config: &ExperimentConfig) -> Result<(Vec<RunSummary>, usize)> {
    let mut quiet = config.clone();
    quiet.harness.regret = false;
    let runs = (0..NUM_ACTIONS)
        .into_par_iter()
        .map(|a| run_constant_benchmark(&quiet, a, RunOptions::default()))
        .collect::<Result<Vec<_>>>()?;
    let means: Vec<f64> = runs.iter().map(|s| s.mean_reward).collect();
    Ok((runs, best_action(&means)))
}

/// Constant benchmarks for `actions` on the config's seed. With `out`, each
/// run writes its files into `out/<label>`. Regret is measured against the
/// best of all nine constants when `harness.regret` is on.
pub fn run_benchmarks(config: &ExperimentConfig, actions: &[usize], out: Option<&Path>) -> Result<Vec<RunSummary>> {
    let table = config.load_table()?;
    let (mut quiet, oracle) = quiet_benchmarks(config)?;
    let oracle = config.harness.regret.then_some(oracle);
    if let Some(best) = oracle {
        patch_constant_regret(config, &mut quiet, best);
    }
    actions
        .par_iter()
        .map(|&a| match out {
            Some(dir) => run_into(config, &dir.join(Entry::Constant(a).label(&table)), Some(a), oracle),
            None => Ok(quiet[a].clone()),
        })
        .collect()
}

/// Regret of a constant against the oracle constant. Both run on the same
/// environment streams, so the lockstep sum reduces to the difference of
/// their mean rewards times the step count.
fn patch_constant_regret(config: &ExperimentConfig, runs: &mut [RunSummary], oracle: usize) {
    let best = runs[oracle].mean_reward;
    let steps = config.total_steps() as f64;
    for s in runs.iter_mut() {
        s.regret = (best - s.mean_reward) * steps;
        s.oracle_action = Some(oracle);
    }
}

/// Every learner and constant on every seed. Runs fan out over the current
/// rayon pool; with `out`, run `x` of seed `s` writes into `out/seed-s/x`.
pub fn run_sweep(config: &ExperimentConfig, seeds: &[u64], out: Option<&Path>) -> Result<Sweep> {
    let table = config.load_table()?;
    let regret = config.harness.regret;
    let phase1 = seeds
        .par_iter()
        .map(|&s| quiet_benchmarks(&seeded(config, s)))
        .collect::<Result<Vec<_>>>()?;
    let oracle: Vec<usize> = phase1.iter().map(|(_, o)| *o).collect();
    let seed_dir = |s: u64| out.map(|d| d.join(format!("seed-{s}")));

    let jobs: Vec<(usize, Entry)> = (0..seeds.len())
        .flat_map(|i| Entry::all().into_iter().map(move |e| (i, e)))
        .collect();
    let summaries = jobs
        .par_iter()
        .map(|&(i, entry)| {
            let c = seeded(config, seeds[i]);
            let oracle_action = regret.then_some(oracle[i]);
            let dir: Option<PathBuf> = seed_dir(seeds[i]).map(|d| d.join(entry.dir_name(&table)));
            match (entry, dir) {
                (Entry::Learner(f), dir) => {
                    let mut c = c;
                    c.agents.family = f;
                    match dir {
                        Some(d) => run_into(&c, &d, None, oracle_action),
                        None => run_training(&c, RunOptions { write_outputs: false, oracle_action }),
                    }
                }
                (Entry::Constant(a), Some(d)) => run_into(&c, &d, Some(a), oracle_action),
                (Entry::Constant(a), None) => {
                    let mut runs = phase1[i].0.clone();
                    if regret {
                        patch_constant_regret(&c, &mut runs, oracle[i]);
                    }
                    Ok(runs.swap_remove(a))
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let runs = jobs
        .into_iter()
        .zip(summaries)
        .map(|((i, entry), summary)| SweepRun {
            seed: seeds[i],
            entry,
            summary,
        })
        .collect();
    Ok(Sweep {
        seeds: seeds.to_vec(),
        table,
        runs,
        oracle,
    })
}

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; zero for fewer than two values.
pub fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

/// Aggregate of one agent or constant over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub agent: String,
    pub kind: String,
    pub runs: usize,
    pub seeds: Vec<u64>,
    pub final_reward_mean: f64,
    pub final_reward_std: f64,
    pub regret_mean: f64,
    pub regret_std: f64,
    pub first100_reward_mean: f64,
    pub app_delay_ms_mean: f64,
    pub app_delay_ms_std: f64,
    pub map_mean: f64,
    pub map_std: f64,
    pub prr_app_mean: f64,
    pub parameters: usize,
    pub operations: usize,
    pub step_time_us_mean: f64,
    pub step_time_us_std: f64,
}

impl Row {
    pub fn from_summaries(agent: &str, kind: &str, runs: &[&RunSummary]) -> Self {
        let col = |f: &dyn Fn(&RunSummary) -> f64| runs.iter().map(|s| f(s)).collect::<Vec<f64>>();
        let fin = col(&|s| s.final_reward);
        let regret = col(&|s| s.regret);
        let delay = col(&|s| s.mean_app_delay_ms);
        let map = col(&|s| s.mean_map);
        let time = col(&|s| s.step_time_us);
        Row {
            agent: agent.to_string(),
            kind: kind.to_string(),
            runs: runs.len(),
            seeds: runs.iter().map(|s| s.seed).collect(),
            final_reward_mean: mean(&fin),
            final_reward_std: std_dev(&fin),
            regret_mean: mean(&regret),
            regret_std: std_dev(&regret),
            first100_reward_mean: mean(&col(&|s| mean(&s.first100_rewards))),
            app_delay_ms_mean: mean(&delay),
            app_delay_ms_std: std_dev(&delay),
            map_mean: mean(&map),
            map_std: std_dev(&map),
            prr_app_mean: mean(&col(&|s| s.mean_prr_app)),
            parameters: runs.first().map_or(0, |s| s.parameters),
            operations: runs.first().map_or(0, |s| s.operations),
            step_time_us_mean: mean(&time),
            step_time_us_std: std_dev(&time),
        }
    }

    fn csv_header(timing: bool) -> Vec<&'static str> {
        let mut h = vec![
            "agent",
            "kind",
            "runs",
            "final_reward_mean",
            "final_reward_std",
            "regret_mean",
            "regret_std",
            "first100_reward_mean",
            "app_delay_ms_mean",
            "app_delay_ms_std",
            "map_mean",
            "map_std",
            "prr_app_mean",
            "parameters",
            "operations",
        ];
        if timing {
            h.extend(["step_time_us_mean", "step_time_us_std"]);
        }
        h
    }

    fn csv_record(&self, timing: bool) -> Vec<String> {
        let mut r = vec![
            self.agent.clone(),
            self.kind.clone(),
            self.runs.to_string(),
        ];
        r.extend(
            [
                self.final_reward_mean,
                self.final_reward_std,
                self.regret_mean,
                self.regret_std,
                self.first100_reward_mean,
                self.app_delay_ms_mean,
                self.app_delay_ms_std,
                self.map_mean,
                self.map_std,
                self.prr_app_mean,
            ]
            .iter()
            .map(f64::to_string),
        );
        r.push(self.parameters.to_string());
        r.push(self.operations.to_string());
        if timing {
            r.push(self.step_time_us_mean.to_string());
            r.push(self.step_time_us_std.to_string());
        }
        r
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> fedpqos_core::Error {
    fedpqos_core::Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn write_csv(path: &Path, header: &[&str], records: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_err(path, e))?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for r in records {
        w.write_record(&r).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// Writes the rows as CSV. Wall-clock columns are only included with
/// `timing`, so that untimed tables are reproducible byte for byte.
pub fn write_rows_csv(rows: &[Row], path: &Path, timing: bool) -> Result<()> {
    write_csv(path, &Row::csv_header(timing), rows.iter().map(|r| r.csv_record(timing)))
}

pub fn write_rows_json(rows: &[Row], path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(rows)?;
    std::fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub const COMPARISON_CSV: &str = "comparison.csv";
pub const COMPARISON_JSON: &str = "comparison.json";
pub const FIRST100_CSV: &str = "first100_rewards.csv";
pub const LAST_EPISODES_CSV: &str = "last_episodes_rewards.csv";
pub const FINAL_REWARD_CSV: &str = "final_reward.csv";
pub const APP_DELAY_CSV: &str = "app_delay.csv";
pub const MAP_CSV: &str = "map.csv";

/// Comparison table plus one CSV per plotted quantity.
///
/// - `first100_rewards.csv`: step, then the seed-mean reward of each learner.
/// - `last_episodes_rewards.csv`: episode, then each learner's episode reward.
/// - `final_reward.csv`, `app_delay.csv`, `map.csv`: one bar per learner and
///   constant with its mean and standard deviation over seeds.
pub fn write_sweep_outputs(sweep: &Sweep, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let rows = sweep.rows();
    write_rows_csv(&rows, &dir.join(COMPARISON_CSV), false)?;
    write_rows_json(&rows, &dir.join(COMPARISON_JSON))?;

    let learners: Vec<Entry> = AgentFamily::ALL.into_iter().map(Entry::Learner).collect();
    let mut header = vec!["step".to_string()];
    header.extend(learners.iter().map(|e| e.label(&sweep.table)));

    let curve = |pick: &dyn Fn(&RunSummary) -> &Vec<f64>| -> Vec<Vec<f64>> {
        learners
            .iter()
            .map(|&e| {
                let per_seed: Vec<&Vec<f64>> = sweep.summaries(e).into_iter().map(pick).collect();
                let len = per_seed.iter().map(|v| v.len()).min().unwrap_or(0);
                (0..len).map(|i| mean(&per_seed.iter().map(|v| v[i]).collect::<Vec<_>>())).collect()
            })
            .collect()
    };
    let rows_of = |cols: &[Vec<f64>], first_index: u64| -> Vec<Vec<String>> {
        let len = cols.iter().map(Vec::len).min().unwrap_or(0);
        (0..len)
            .map(|i| {
                let mut r = vec![(first_index + i as u64).to_string()];
                r.extend(cols.iter().map(|c| c[i].to_string()));
                r
            })
            .collect()
    };

    let first = curve(&|s| &s.first100_rewards);
    write_csv(&dir.join(FIRST100_CSV), &strs(&header), rows_of(&first, 1))?;

    let last = curve(&|s| &s.last_episodes_rewards);
    let episodes = sweep.runs.first().map_or(0, |r| r.summary.episodes);
    let n_last = last.iter().map(Vec::len).min().unwrap_or(0) as u64;
    header[0] = "episode".into();
    write_csv(&dir.join(LAST_EPISODES_CSV), &strs(&header), rows_of(&last, episodes - n_last))?;

    let bars = |path: &Path, m: fn(&Row) -> (f64, f64)| {
        write_csv(
            path,
            &["agent", "kind", "mean", "std"],
            rows.iter().map(|r| {
                let (mu, sd) = m(r);
                vec![r.agent.clone(), r.kind.clone(), mu.to_string(), sd.to_string()]
            }),
        )
    };
    bars(&dir.join(FINAL_REWARD_CSV), |r| (r.final_reward_mean, r.final_reward_std))?;
    bars(&dir.join(APP_DELAY_CSV), |r| (r.app_delay_ms_mean, r.app_delay_ms_std))?;
    bars(&dir.join(MAP_CSV), |r| (r.map_mean, r.map_std))?;
    Ok(())
}

fn strs(h: &[String]) -> Vec<&str> {
    h.iter().map(String::as_str).collect()
}

/// Outcome of one sweep check.
#[derive(Debug, Clone)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn majority(wins: usize, total: usize) -> bool {
    2 * wins > total
}

/// Ordering checks over a sweep:
///
/// - every stateful learner beats MAB's final reward on every seed;
/// - both linear learners beat both neural ones over the first steps, on a
///   majority of seeds;
/// - both linear learners have lower regret than both neural ones, on a
///   majority of seeds;
/// - every learner's final reward beats every constant's (seed means);
/// - the smallest configuration has the lowest mean APP delay of all rows;
/// - the highest mean mAP belongs to a 10-bit configuration;
/// - step time orders MAB below the linear learners below the neural ones.
pub fn check_sweep(sweep: &Sweep) -> Vec<Check> {
    use AgentFamily::*;
    let learner = Entry::Learner;
    let stateful = [Sarsa, QLearning, DeepSarsa, Ddqn];
    let linear = [Sarsa, QLearning];
    let neural = [DeepSarsa, Ddqn];
    let n = sweep.seeds.len();
    let per_seed = |s: u64, f: AgentFamily, field: fn(&RunSummary) -> f64| field(sweep.summary(s, learner(f)));
    let first100 = |s: &RunSummary| mean(&s.first100_rewards);
    let mut checks = Vec::new();

    let margins: Vec<f64> = sweep
        .seeds
        .iter()
        .map(|&s| {
            let mab = per_seed(s, Mab, |x| x.final_reward);
            stateful
                .iter()
                .map(|&f| per_seed(s, f, |x| x.final_reward) - mab)
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    checks.push(Check {
        name: "stateful learners beat MAB on every seed",
        passed: margins.iter().all(|m| *m > 0.0),
        detail: format!("smallest margin per seed {margins:.4?}"),
    });

    let linear_beats = |field: fn(&RunSummary) -> f64, higher_is_better: bool| {
        sweep
            .seeds
            .iter()
            .filter(|&&s| {
                linear.iter().all(|&l| {
                    neural.iter().all(|&d| {
                        let (a, b) = (per_seed(s, l, field), per_seed(s, d, field));
                        if higher_is_better {
                            a > b
                        } else {
                            a < b
                        }
                    })
                })
            })
            .count()
    };
    let wins = linear_beats(first100, true);
    checks.push(Check {
        name: "linear learners start faster than neural ones",
        passed: majority(wins, n),
        detail: format!("{wins}/{n} seeds"),
    });
    let wins = linear_beats(|x| x.regret, false);
    checks.push(Check {
        name: "linear learners have lower regret than neural ones",
        passed: majority(wins, n),
        detail: format!("{wins}/{n} seeds"),
    });

    let fin = |e: Entry| sweep.mean_of(e, |s| s.final_reward);
    let worst_rl = AgentFamily::ALL
        .into_iter()
        .map(|f| (fin(learner(f)), learner(f)))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("five learners");
    let best_const = (0..NUM_ACTIONS)
        .map(|a| (fin(Entry::Constant(a)), Entry::Constant(a)))
        .max_by(|a, b| a.0.total_cmp(&b.0))
        .expect("nine constants");
    checks.push(Check {
        name: "every learner beats every constant",
        passed: worst_rl.0 > best_const.0,
        detail: format!(
            "worst learner {} {:.4}, best constant {} {:.4}",
            worst_rl.1.label(&sweep.table),
            worst_rl.0,
            best_const.1.label(&sweep.table),
            best_const.0
        ),
    });

    let rows = sweep.rows();
    let smallest = Entry::Constant(0).label(&sweep.table);
    let min_delay = rows
        .iter()
        .min_by(|a, b| a.app_delay_ms_mean.total_cmp(&b.app_delay_ms_mean))
        .expect("rows");
    checks.push(Check {
        name: "smallest configuration has the lowest APP delay",
        passed: min_delay.agent == smallest,
        detail: format!("lowest {} at {:.3} ms", min_delay.agent, min_delay.app_delay_ms_mean),
    });
    let max_map = rows
        .iter()
        .max_by(|a, b| a.map_mean.total_cmp(&b.map_mean))
        .expect("rows");
    checks.push(Check {
        name: "10-bit configurations have the highest mAP",
        passed: max_map.kind == "constant" && max_map.agent.starts_with("10-"),
        detail: format!("highest {} at {:.4}", max_map.agent, max_map.map_mean),
    });

    let time = |f: AgentFamily| sweep.mean_of(learner(f), |s| s.step_time_us);
    let mab = time(Mab);
    let lin: Vec<f64> = linear.iter().map(|&f| time(f)).collect();
    let nn: Vec<f64> = neural.iter().map(|&f| time(f)).collect();
    let lin_max = lin.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lin_min = lin.iter().cloned().fold(f64::INFINITY, f64::min);
    let nn_min = nn.iter().cloned().fold(f64::INFINITY, f64::min);
    checks.push(Check {
        name: "step time orders MAB < linear < neural",
        passed: mab < lin_min && lin_max < nn_min,
        detail: format!("MAB {mab:.2} us, linear {lin:.2?} us, neural {nn:.2?} us"),
    });
    checks
}
