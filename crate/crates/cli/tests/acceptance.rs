//! Exit criteria 1 to 14, one test each. Every test prints a single
//! `criterion N: PASS|FAIL` line with the measured values, then asserts.
//!
//! The desk-scale sweeps are shared between tests and never overlap, so
//! their wall time and step timings are measured without contention from
//! each other.
//!
//! Run with `cargo test -p fedpqos-cli --test acceptance -- --nocapture`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, OnceLock};
use std::time::{Duration, Instant};

use fedpqos_cli::sweep::{check_sweep, run_sweep, Check, Sweep};
use fedpqos_core::agents::{td_error_qlearning, td_error_sarsa, Mlp};
use fedpqos_core::{
    aggregate, compute_reward, Agent, AgentFamily, AgentParams, CompressionTable, ExperimentConfig, LinkParams,
    LinkSimulator, LocalUpdate, McsTable, Preset, SizeModel, StateVector, Transition, ChannelTrace,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DESK_SEEDS: [u64; 3] = [1, 2, 3];

fn report(n: u32, passed: bool, detail: &str) {
    println!("criterion {n:2}: {} {detail}", if passed { "PASS" } else { "FAIL" });
}

fn verdict(n: u32, passed: bool, detail: String) {
    report(n, passed, &detail);
    assert!(passed, "criterion {n}: {detail}");
}

static HEAVY: Mutex<()> = Mutex::new(());

struct Timed {
    sweep: Sweep,
    elapsed: Duration,
}

fn desk_sweep(n_vehicles: usize) -> Timed {
    let _guard = HEAVY.lock().unwrap_or_else(|e| e.into_inner());
    let mut c = ExperimentConfig::preset(Preset::Desk);
    c.experiment.n_vehicles = n_vehicles;
    let start = Instant::now();
    let sweep = run_sweep(&c, &DESK_SEEDS, None).expect("desk sweep runs");
    Timed {
        sweep,
        elapsed: start.elapsed(),
    }
}

fn desk5() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| desk_sweep(5))
}

fn desk10() -> &'static Timed {
    static CELL: OnceLock<Timed> = OnceLock::new();
    CELL.get_or_init(|| desk_sweep(10))
}

fn find<'a>(checks: &'a [Check], name: &str) -> &'a Check {
    checks.iter().find(|c| c.name == name).expect("named check")
}

fn family_params(family: AgentFamily) -> AgentParams {
    AgentParams {
        family,
        ..AgentParams::default()
    }
}

#[test]
fn criterion_01_parameter_counts() {
    let start = Instant::now();
    let counts: Vec<(AgentFamily, usize)> = AgentFamily::ALL
        .into_iter()
        .map(|f| (f, Agent::new(&family_params(f), 0, 1).unwrap().parameter_count()))
        .collect();
    let elapsed = start.elapsed();
    let expected = [9, 171, 171, 19_529, 19_529];
    let ok = counts.iter().zip(expected).all(|((_, c), e)| *c == e) && elapsed < Duration::from_secs(1);
    verdict(1, ok, format!("{counts:?} in {elapsed:?}"));
}

#[test]
fn criterion_02_operation_counts() {
    let counts: Vec<(AgentFamily, usize)> = AgentFamily::ALL
        .into_iter()
        .map(|f| (f, Agent::new(&family_params(f), 0, 1).unwrap().operation_count()))
        .collect();
    let expected = [0, 333, 333, 37_127, 37_127];
    let ok = counts.iter().zip(expected).all(|((_, c), e)| *c == e);
    verdict(2, ok, format!("{counts:?}"));
}

#[test]
fn criterion_03_default_action_table() {
    let published: [(u32, u32, &str, f64, f64); 9] = [
        (0, 8, "8-00", 5.17, 0.257),
        (0, 9, "9-00", 5.22, 0.580),
        (0, 10, "10-00", 5.50, 0.686),
        (5, 8, "8-05", 5.34, 0.257),
        (5, 9, "9-05", 6.97, 0.572),
        (5, 10, "10-05", 8.52, 0.683),
        (10, 8, "8-10", 8.21, 0.257),
        (10, 9, "9-10", 9.62, 0.574),
        (10, 10, "10-10", 11.58, 0.683),
    ];
    let table = CompressionTable::default();
    let rows = table.configs();
    let mut ok = rows.len() == 9;
    for (row, (c, q, label, ms, map)) in rows.iter().zip(published) {
        ok &= row.level == c
            && row.quant_bits == q
            && row.label() == label
            && row.compression_time_ms.to_bits() == ms.to_bits()
            && row.map_score.to_bits() == map.to_bits();
    }
    let last = &rows[8];
    verdict(
        3,
        ok,
        format!("{} rows, {} -> {} ms / {}", rows.len(), last.label(), last.compression_time_ms, last.map_score),
    );
}

#[test]
fn criterion_04_reward_examples() {
    let table = CompressionTable::default();
    let a = table.by_label("10-00").unwrap();
    let got = [compute_reward(0.020, a, 0.050), compute_reward(0.050, a, 0.050), compute_reward(0.120, a, 0.050)];
    let ok = got == [0.686, -0.05, -0.12];
    verdict(4, ok, format!("{got:?}"));
}

fn updates_strategy() -> impl Strategy<Value = Vec<LocalUpdate>> {
    (1usize..8, 1usize..12).prop_flat_map(|(agents, len)| {
        prop::collection::vec((0u64..5000, prop::collection::vec(-1e3f64..1e3, len)), agents).prop_map(|raw| {
            raw.into_iter()
                .enumerate()
                .map(|(agent_id, (step_count, payload))| LocalUpdate {
                    agent_id,
                    payload,
                    step_count,
                })
                .collect::<Vec<_>>()
        })
    })
}

#[test]
fn criterion_05_federated_averaging() {
    let hand = aggregate(
        &[
            LocalUpdate {
                agent_id: 0,
                payload: vec![0.0],
                step_count: 1,
            },
            LocalUpdate {
                agent_id: 1,
                payload: vec![4.0],
                step_count: 3,
            },
        ],
        1,
    )
    .unwrap()
    .unwrap()
    .payload;

    let mut runner = TestRunner::new(Config::with_cases(1000));
    let idempotent = runner.run(
        &(prop::collection::vec(-1e6f64..1e6, 1..20), prop::collection::vec(1u64..100_000, 1..10)),
        |(v, counts)| {
            let ups: Vec<LocalUpdate> = counts
                .iter()
                .enumerate()
                .map(|(agent_id, &step_count)| LocalUpdate {
                    agent_id,
                    payload: v.clone(),
                    step_count,
                })
                .collect();
            prop_assert_eq!(aggregate(&ups, 1).unwrap().unwrap().payload, v);
            Ok(())
        },
    );
    let mut runner = TestRunner::new(Config::with_cases(1000));
    let convex = runner.run(&updates_strategy(), |ups| {
        if let Some(g) = aggregate(&ups, 1).unwrap() {
            for (k, x) in g.payload.iter().enumerate() {
                let contrib = ups.iter().filter(|u| u.step_count > 0).map(|u| u.payload[k]);
                let lo = contrib.clone().fold(f64::INFINITY, f64::min);
                let hi = contrib.fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(lo <= *x && *x <= hi);
            }
        }
        Ok(())
    });
    let ok = hand == [3.0] && idempotent.is_ok() && convex.is_ok();
    verdict(
        5,
        ok,
        format!("hand case {hand:?}, idempotence {:?}, convex bound {:?}", idempotent.err(), convex.err()),
    );
}

/// Small network with random batch-norm gains and shifts and frozen
/// running statistics.
fn random_network(rng: &mut ChaCha8Rng) -> Mlp {
    let depth = rng.random_range(1..=3);
    let mut sizes = vec![rng.random_range(2..=5)];
    for _ in 0..depth {
        sizes.push(rng.random_range(2..=6));
    }
    sizes.push(rng.random_range(1..=4));
    let mut net = Mlp::new(&sizes, 0.9, 1e-5, rng).unwrap();
    for l in net.layout().to_vec() {
        if let Some((g, b)) = l.norm {
            for j in 0..l.fan_out {
                net.params_mut()[g + j] = rng.random_range(0.5..1.5);
                net.params_mut()[b + j] = rng.random_range(-0.5..0.5);
            }
        }
        for j in 0..l.fan_out {
            net.params_mut()[l.bias + j] = rng.random_range(-0.3..0.3);
        }
    }
    let (mean, var) = net.running_stats_mut();
    mean.iter_mut().for_each(|m| *m = rng.random_range(-0.5..0.5));
    var.iter_mut().for_each(|v| *v = rng.random_range(0.3..2.0));
    net
}

/// Worst relative error of the analytic gradient of `sum_k c_k q_k(x)`
/// against central differences; `None` next to a ReLU kink.
fn gradient_error(net: &Mlp, x: &[f64], c: &[f64]) -> Option<f64> {
    const H: f64 = 1e-5;
    let cache = net.forward_frozen(x).unwrap();
    if cache.pre_activations().iter().flatten().any(|z| z.abs() < 1e-3) {
        return None;
    }
    let mut grads = vec![0.0; net.parameter_count()];
    net.backward(&cache, c, &mut grads).unwrap();
    let objective = |n: &Mlp| -> f64 { n.predict(x).unwrap().iter().zip(c).map(|(q, w)| q * w).sum() };
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    for (i, g) in grads.iter().enumerate() {
        let orig = probe.params()[i];
        probe.params_mut()[i] = orig + H;
        let up = objective(&probe);
        probe.params_mut()[i] = orig - H;
        let down = objective(&probe);
        probe.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * H);
        worst = worst.max((g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6));
    }
    Some(worst)
}

#[test]
fn criterion_06_gradient_check() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut nets, mut worst) = (0, 0.0f64);
    while nets < 100 {
        let net = random_network(&mut rng);
        let x: Vec<f64> = (0..net.n_inputs()).map(|_| rng.random_range(-1.5..1.5)).collect();
        let c: Vec<f64> = (0..net.n_outputs()).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Some(e) = gradient_error(&net, &x, &c) {
            worst = worst.max(e);
            nets += 1;
        }
    }
    let elapsed = start.elapsed();
    verdict(
        6,
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("{nets} networks, worst relative error {worst:.2e}, {elapsed:?}"),
    );
}

#[test]
fn criterion_07_stateful_learners_beat_mab() {
    let t = desk5();
    let checks = check_sweep(&t.sweep);
    let c = find(&checks, "stateful learners beat MAB on every seed");
    let within = t.elapsed < Duration::from_secs(600);
    verdict(7, c.passed && within, format!("{} on seeds {DESK_SEEDS:?}, sweep took {:.0?}", c.detail, t.elapsed));
}

#[test]
fn criterion_08_linear_learners_start_faster() {
    let t = desk5();
    let checks = check_sweep(&t.sweep);
    let c = find(&checks, "linear learners start faster than neural ones");
    let detail: Vec<String> = t
        .sweep
        .seeds
        .iter()
        .map(|&s| {
            let f = |family| {
                let r = &t.sweep.summary(s, fedpqos_cli::sweep::Entry::Learner(family)).first100_rewards;
                r.iter().sum::<f64>() / r.len() as f64
            };
            format!(
                "seed {s}: sarsa {:.3} qlearning {:.3} dsarsa {:.3} ddqn {:.3}",
                f(AgentFamily::Sarsa),
                f(AgentFamily::QLearning),
                f(AgentFamily::DeepSarsa),
                f(AgentFamily::Ddqn)
            )
        })
        .collect();
    verdict(8, c.passed, format!("{} ({})", c.detail, detail.join("; ")));
}

#[test]
fn criterion_09_linear_learners_have_lower_regret() {
    let t = desk5();
    let checks = check_sweep(&t.sweep);
    let c = find(&checks, "linear learners have lower regret than neural ones");
    let detail: Vec<String> = t
        .sweep
        .seeds
        .iter()
        .map(|&s| {
            let f = |family| t.sweep.summary(s, fedpqos_cli::sweep::Entry::Learner(family)).regret;
            format!(
                "seed {s}: sarsa {:.0} qlearning {:.0} dsarsa {:.0} ddqn {:.0}",
                f(AgentFamily::Sarsa),
                f(AgentFamily::QLearning),
                f(AgentFamily::DeepSarsa),
                f(AgentFamily::Ddqn)
            )
        })
        .collect();
    verdict(9, c.passed, format!("{} ({})", c.detail, detail.join("; ")));
}

#[test]
fn criterion_10_learners_beat_constants_at_ten_vehicles() {
    let t = desk10();
    let checks = check_sweep(&t.sweep);
    let parts = [
        find(&checks, "every learner beats every constant"),
        find(&checks, "smallest configuration has the lowest APP delay"),
        find(&checks, "10-bit configurations have the highest mAP"),
    ];
    let detail: Vec<String> = parts
        .iter()
        .map(|c| format!("{} [{}]: {}", c.name, if c.passed { "ok" } else { "no" }, c.detail))
        .collect();
    verdict(10, parts.iter().all(|c| c.passed), detail.join("; "));
}

#[test]
fn criterion_11_step_time_ordering() {
    let t = desk5();
    let checks = check_sweep(&t.sweep);
    let c = find(&checks, "step time orders MAB < linear < neural");
    verdict(11, c.passed, c.detail.clone());
}

fn csvs(dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>, root: &Path) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let p = entry.unwrap().path();
        if p.is_dir() {
            csvs(&p, out, root);
        } else if p.extension().is_some_and(|e| e == "csv") {
            out.insert(p.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&p).unwrap());
        }
    }
}

#[test]
fn criterion_12_reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let small = [
        "--preset",
        "desk",
        "--set",
        "episodes=4",
        "--set",
        "steps_per_episode=50",
        "--set",
        "n_vehicles=3",
        "--set",
        "step_time_reps=20",
        "--seed",
        "31",
    ];
    let mut invocations: Vec<Vec<String>> = AgentFamily::ALL
        .into_iter()
        .map(|f| vec!["train".to_string(), "--set".into(), format!("agents.family={f}")])
        .collect();
    invocations.push(vec!["benchmark".into(), "--action".into(), "all".into()]);
    invocations.push(vec!["sweep".into(), "--seeds".into(), "2".into()]);
    let mut compared = 0;
    let mut mismatched = Vec::new();
    for (k, inv) in invocations.iter().enumerate() {
        let mut trees = Vec::new();
        for rep in 0..2 {
            let out = tmp.path().join(format!("{k}-{rep}"));
            let status = Command::new(env!("CARGO_BIN_EXE_fedpqos"))
                .args(inv)
                .args(small)
                .arg("--out")
                .arg(&out)
                .output()
                .unwrap();
            assert!(status.status.success(), "{inv:?}: {}", String::from_utf8_lossy(&status.stderr));
            let mut files = BTreeMap::new();
            csvs(&out, &mut files, &out);
            trees.push(files);
        }
        compared += trees[0].len();
        if trees[0] != trees[1] || trees[0].is_empty() {
            mismatched.push(inv[0].clone());
        }
    }
    verdict(
        12,
        mismatched.is_empty(),
        format!("{} invocations, {compared} CSV files compared, mismatches {mismatched:?}", invocations.len()),
    );
}

fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
    let mut f = [0.0; 18];
    f.iter_mut().for_each(|x| *x = rng.random_range(-1.0..1.0));
    StateVector::new(f)
}

#[test]
fn criterion_13_q_learning_error_dominates_sarsa() {
    let mut runner = TestRunner::new(Config::with_cases(10_000));
    let scalar = runner.run(
        &(-1.0f64..1.0, -1.0f64..1.0, prop::collection::vec(-5.0f64..5.0, 9), -5.0f64..5.0, 0usize..9),
        |(r, rbar, q_next, q, a_next)| {
            prop_assert!(td_error_qlearning(r, rbar, &q_next, q) >= td_error_sarsa(r, rbar, q_next[a_next], q));
            Ok(())
        },
    );

    // The same check through two learners holding identical weights.
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut sarsa = Agent::new(&family_params(AgentFamily::Sarsa), 0, 13).unwrap();
    let mut violations = 0;
    for _ in 0..10_000 {
        let t = Transition {
            state: random_state(&mut rng),
            action: rng.random_range(0..9),
            reward: rng.random_range(-0.2..0.7),
            next_state: random_state(&mut rng),
            next_action: rng.random_range(0..9),
        };
        let mut q = Agent::new(&family_params(AgentFamily::QLearning), 0, 13).unwrap();
        q.load_payload(&sarsa.payload(true), true).unwrap();
        q.set_avg_reward(sarsa.avg_reward());
        let dq = q.learn(&t).unwrap();
        let ds = sarsa.learn(&t).unwrap();
        if dq < ds {
            violations += 1;
        }
    }
    verdict(
        13,
        scalar.is_ok() && violations == 0,
        format!("10000 scalar cases {:?}, 10000 learner cases with {violations} violations", scalar.err()),
    );
}

/// Piecewise-constant SINR levels, redrawn every `hold` ticks.
fn random_trace(rng: &mut ChaCha8Rng, n: usize, samples: usize) -> ChannelTrace {
    let hold = rng.random_range(1..200);
    let sinr = (0..n)
        .map(|_| {
            let mut level = 0.0;
            (0..samples)
                .map(|k| {
                    if k % hold == 0 {
                        level = rng.random_range(-12.0..30.0);
                    }
                    level
                })
                .collect()
        })
        .collect();
    ChannelTrace::new(0.0, 0.001, sinr).unwrap()
}

#[test]
fn criterion_14_conservation_and_layering() {
    const WINDOWS: usize = 40;
    let table = CompressionTable::default();
    let mut checked = 0usize;
    let mut violations = Vec::new();
    let mut seed = 0;
    while checked < 10_000 {
        let mut rng = ChaCha8Rng::seed_from_u64(1_000 + seed);
        seed += 1;
        let n = rng.random_range(1..=6);
        let params = LinkParams {
            queue_budget: rng.random_range(0.05..0.5),
            csi_delay_ticks: rng.random_range(0..3),
            ..LinkParams::default()
        };
        let trace = random_trace(&mut rng, n, WINDOWS * params.ticks_per_window());
        let mut sim = LinkSimulator::new(params, McsTable::default(), SizeModel::default(), n).unwrap();
        for _ in 0..WINDOWS {
            let configs: Vec<_> = (0..n).map(|_| *table.get(rng.random_range(0..9)).unwrap()).collect();
            let stats = sim.simulate_window(&configs, &trace, &mut rng).unwrap();
            for (v, w) in stats.iter().enumerate() {
                checked += 1;
                let c = sim.counters(v);
                if c.generated != c.delivered + c.dropped + c.in_system {
                    violations.push(format!("seed {seed} vehicle {v}: {c:?}"));
                }
                for f in &w.frames {
                    if !(f.rlc <= f.pdcp && f.pdcp <= f.app) {
                        violations.push(format!("seed {seed} vehicle {v}: {f:?}"));
                    }
                }
            }
        }
    }
    verdict(
        14,
        violations.is_empty(),
        format!("{checked} windows, {} violations {:?}", violations.len(), violations.iter().take(3).collect::<Vec<_>>()),
    );
}
