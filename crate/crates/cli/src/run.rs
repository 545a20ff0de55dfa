//! Subcommand implementations.

use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use rand_chacha::rand_core::SeedableRng;
use slicesim::env::{compute_budgets, ClassStats, FeatureNormalizer};
use slicesim::learner::{
    episode_seed, evaluate, run_episode, train, Actor, AdamConfig, EvalReport, TraceSource,
    TrainConfig, TrainLogRow, DIVERGENCE_LIMIT,
};
use slicesim::policy::PolicyNet;
use slicesim::workload::{
    combine_traces, gen_synthetic_episode, load_bandwidth_trace_with, load_job_trace_with,
    merge_traces, scale_trace, split_trace, ColumnMap,
};
use slicesim::{ClassSpec, EpisodeTrace, Resource, SliceEnv};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

/// Everything a run needs once the workload source is settled.
pub struct Setup {
    pub env: SliceEnv,
    /// Synthetic class definitions; empty when replaying real traces.
    pub specs: Vec<ClassSpec>,
    /// Present in trace mode: the training split, replayed every episode.
    pub train_trace: Option<EpisodeTrace>,
    pub test_traces: Vec<EpisodeTrace>,
}

pub fn build_setup(cfg: &RunConfig, level: u8) -> Result<Setup> {
    let mode = cfg.mode()?;
    match &cfg.scenario.traces {
        None => {
            let specs = cfg.class_specs()?;
            let budgets = slicesim::env::budgets_from_specs(&specs, level, mode)?;
            let test_traces = (0..cfg.training.test_episodes)
                .map(|j| {
                    let index = (cfg.training.train_episodes + j) as u64;
                    gen_synthetic_episode(
                        &specs,
                        cfg.scenario.horizon,
                        episode_seed(cfg.training.seed_workload, index),
                    )
                })
                .collect::<slicesim::Result<Vec<_>>>()?;
            let env = SliceEnv::new(
                specs.len(),
                mode,
                budgets,
                cfg.scenario.loss_weight,
                cfg.scenario.service_interval,
                cfg.scenario.norm_decay,
            )?;
            Ok(Setup {
                env,
                specs,
                train_trace: None,
                test_traces,
            })
        }
        Some(_) => {
            let (train_trace, test_trace) = load_real_workload(cfg)?;
            let k = cfg.class_count();
            let stats = (0..k)
                .map(|class| {
                    ClassStats::from_trace(&train_trace, class, cfg.scenario.service_interval)
                })
                .collect::<slicesim::Result<Vec<_>>>()
                .context("estimating class statistics from the training split")?;
            let budgets = compute_budgets(&stats, level, mode)?;
            let env = SliceEnv::new(
                k,
                mode,
                budgets,
                cfg.scenario.loss_weight,
                cfg.scenario.service_interval,
                cfg.scenario.norm_decay,
            )?;
            Ok(Setup {
                env,
                specs: Vec::new(),
                train_trace: Some(train_trace),
                test_traces: vec![test_trace],
            })
        }
    }
}

/// Loads, merges, rescales, and splits the configured real traces.
fn load_real_workload(cfg: &RunConfig) -> Result<(EpisodeTrace, EpisodeTrace)> {
    let t = cfg.scenario.traces.as_ref().expect("trace mode");
    let job_map = ColumnMap {
        time: t.job_time_column,
        value: t.job_value_column,
        time_scale: t.job_time_scale,
    };
    let bw_map = ColumnMap {
        time: t.bw_time_column,
        value: t.bw_value_column,
        time_scale: t.bw_time_scale,
    };
    let mut merged = Vec::with_capacity(t.job_paths.len());
    for (class, job_path) in t.job_paths.iter().enumerate() {
        let jobs = load_job_trace_with(Path::new(job_path), &job_map)
            .with_context(|| format!("loading job trace {job_path}"))?;
        let bw_path = if t.bandwidth_paths.len() == 1 {
            &t.bandwidth_paths[0]
        } else {
            &t.bandwidth_paths[class]
        };
        let bandwidth = load_bandwidth_trace_with(Path::new(bw_path), &bw_map)
            .with_context(|| format!("loading bandwidth trace {bw_path}"))?;
        merged.push(merge_traces(&jobs, &bandwidth, class)?);
    }
    let combined = combine_traces(&merged)?;
    let (bw_factor, vm_factor) = combined.normalization_factors(t.scale_target);
    let scaled = scale_trace(&combined, bw_factor, vm_factor)?;
    let (train, test) = split_trace(&scaled, t.train_fraction)?;
    if test.is_empty() {
        bail!("the test split came out empty; lower scenario.traces.train_fraction");
    }
    Ok((train, test))
}

pub struct TrainOutcome {
    /// Environment carrying the feature-scaler state reached by training.
    pub env: SliceEnv,
    pub bw: PolicyNet,
    pub vm: PolicyNet,
    pub rows: Vec<TrainLogRow>,
}

/// Trains fresh policies for `setup`, leaving the setup itself untouched.
pub fn run_training(
    cfg: &RunConfig,
    setup: &Setup,
    on_row: &mut dyn FnMut(&TrainLogRow),
) -> Result<TrainOutcome> {
    let k = setup.env.classes;
    let mut sizes = Vec::with_capacity(cfg.network.hidden.len() + 2);
    sizes.push(setup.env.feature_dim());
    sizes.extend_from_slice(&cfg.network.hidden);
    sizes.push(k);

    let explore = |budget: f64| cfg.network.explore_frac * budget / k as f64;
    let mut bw = PolicyNet::init(
        &sizes,
        cfg.network.leaky_slope,
        explore(setup.env.budgets.bandwidth),
        episode_seed(cfg.training.seed_init, 0),
    )?;
    let mut vm = PolicyNet::init(
        &sizes,
        cfg.network.leaky_slope,
        explore(setup.env.budgets.compute),
        episode_seed(cfg.training.seed_init, 1),
    )?;

    let tcfg = TrainConfig {
        episodes: cfg.training.train_episodes,
        gamma: cfg.training.discount,
        adam: AdamConfig {
            alpha: cfg.training.learning_rate,
            ..AdamConfig::default()
        },
        baseline: cfg.baseline()?,
        estimator: cfg.estimator()?,
        seed_explore: cfg.training.seed_explore,
        divergence_limit: DIVERGENCE_LIMIT,
    };
    let source = match &setup.train_trace {
        Some(trace) => TraceSource::Replay(trace),
        None => TraceSource::Synthetic {
            specs: &setup.specs,
            horizon: cfg.scenario.horizon,
            seed: cfg.training.seed_workload,
        },
    };
    let mut env = setup.env.clone();
    let rows = train(&mut env, &source, &mut bw, &mut vm, &tcfg, on_row)?;
    Ok(TrainOutcome { env, bw, vm, rows })
}

fn write_resolved_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    fs::write(out.join("config.resolved.toml"), cfg.resolved_toml()?)?;
    Ok(())
}

fn log_header(k: usize) -> String {
    let mut h = String::from("episode,total_loss");
    for i in 1..=k {
        h.push_str(&format!(",bw_class_{i}"));
    }
    for i in 1..=k {
        h.push_str(&format!(",vm_class_{i}"));
    }
    h.push('\n');
    h
}

fn log_line(row: &TrainLogRow) -> String {
    let mut line = format!("{},{}", row.episode, row.total);
    for v in row.bw_class.iter().chain(&row.vm_class) {
        line.push_str(&format!(",{v}"));
    }
    line.push('\n');
    line
}

pub fn train_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_resolved_config(cfg, out)?;
    let setup = build_setup(cfg, cfg.scenario.budget_level)?;
    let k = setup.env.classes;
    println!(
        "training: mode {} | {} classes | budget level {} | bw {} vm {} | {} episodes",
        setup.env.mode,
        k,
        cfg.scenario.budget_level,
        setup.env.budgets.bandwidth,
        setup.env.budgets.compute,
        cfg.training.train_episodes
    );

    let log_file = fs::File::create(out.join("train_log.csv"))?;
    let mut log = BufWriter::new(log_file);
    log.write_all(log_header(k).as_bytes())?;
    let mut log_err: Option<std::io::Error> = None;
    let outcome = {
        let mut on_row = |row: &TrainLogRow| {
            if log_err.is_none() {
                if let Err(e) = log.write_all(log_line(row).as_bytes()).and_then(|_| log.flush())
                {
                    log_err = Some(e);
                }
            }
            if row.episode % 50 == 0 {
                println!("episode {:>5}  loss {:.3}", row.episode, row.total);
            }
        };
        run_training(cfg, &setup, &mut on_row)
    };
    if let Some(e) = log_err {
        return Err(e).context("writing train_log.csv");
    }
    let outcome = outcome.context("training failed; the partial log was kept")?;

    let ckpt = out.join("checkpoint");
    fs::create_dir_all(&ckpt)?;
    outcome.bw.save(&ckpt.join("policy_bw.txt"))?;
    outcome.vm.save(&ckpt.join("policy_vm.txt"))?;
    outcome
        .env
        .normalizer(Resource::Bandwidth)
        .save(&ckpt.join("norm_bw.txt"))?;
    outcome
        .env
        .normalizer(Resource::Compute)
        .save(&ckpt.join("norm_vm.txt"))?;

    if let Some(last) = outcome.rows.last() {
        println!(
            "done: episode {} loss {:.3} (started at {:.3}); checkpoint in {}",
            last.episode,
            last.total,
            outcome.rows[0].total,
            ckpt.display()
        );
    }
    Ok(())
}

/// Loads the four checkpoint files into a ready-to-evaluate pair.
fn load_checkpoint(setup: &Setup, dir: &Path) -> Result<(SliceEnv, PolicyNet, PolicyNet)> {
    let bw = PolicyNet::load(&dir.join("policy_bw.txt"))
        .with_context(|| format!("loading checkpoint from {}", dir.display()))?;
    let vm = PolicyNet::load(&dir.join("policy_vm.txt"))?;
    let mut env = setup.env.clone();
    env.set_normalizer(
        Resource::Bandwidth,
        FeatureNormalizer::load(&dir.join("norm_bw.txt"))?,
    )?;
    env.set_normalizer(
        Resource::Compute,
        FeatureNormalizer::load(&dir.join("norm_vm.txt"))?,
    )?;
    Ok((env, bw, vm))
}

fn results_csv(k: usize, rows: &[(&str, &str, &[f64])]) -> String {
    let mut s = String::from("allocator,resource");
    for i in 1..=k {
        s.push_str(&format!(",class_{i}"));
    }
    s.push_str(",total\n");
    for (alloc, resource, cells) in rows {
        s.push_str(&format!("{alloc},{resource}"));
        for v in *cells {
            s.push_str(&format!(",{v}"));
        }
        s.push_str(&format!(",{}\n", cells.iter().sum::<f64>()));
    }
    s
}

fn print_report(title: &str, report: &EvalReport) {
    println!(
        "{title}: {} episodes, {} decisions",
        report.episodes, report.decisions
    );
    let k = report.bw_class.len();
    print!("{:<10}", "resource");
    for i in 1..=k {
        print!("{:>14}", format!("class_{i}"));
    }
    println!("{:>14}", "total");
    for (name, cells, total) in [
        ("bw", &report.bw_class, report.bw_total()),
        ("vm", &report.vm_class, report.vm_total()),
    ] {
        print!("{name:<10}");
        for v in cells {
            print!("{v:>14.3}");
        }
        println!("{total:>14.3}");
    }
    println!("{:<10}{:>14.3}", "both", report.total());
}

fn timeseries_csv(env: &SliceEnv, actor: &Actor, trace: &EpisodeTrace) -> Result<String> {
    let mut scratch = env.clone();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    let traj = run_episode(&mut scratch, trace, actor, &mut rng)?;
    let k = env.classes;
    let mut s = String::from("decision,time");
    for tag in ["bw_alloc", "bw_buffer", "vm_alloc", "vm_buffer"] {
        for i in 1..=k {
            s.push_str(&format!(",{tag}_{i}"));
        }
    }
    s.push_str(",step_loss\n");
    for (n, rec) in traj.records.iter().enumerate() {
        s.push_str(&format!("{n},{}", rec.time));
        for group in [
            &rec.executed.bandwidth,
            &rec.loss.qos_bw,
            &rec.executed.compute,
            &rec.loss.qos_vm,
        ] {
            for v in group.iter() {
                s.push_str(&format!(",{v}"));
            }
        }
        s.push_str(&format!(",{}\n", rec.loss.total()));
    }
    Ok(s)
}

pub fn eval_cmd(
    cfg: &RunConfig,
    out: &Path,
    checkpoint: Option<PathBuf>,
    allocator: &str,
) -> Result<()> {
    write_resolved_config(cfg, out)?;
    let setup = build_setup(cfg, cfg.scenario.budget_level)?;
    let workers = cfg.training.workers;

    let (report, series) = match allocator {
        "equal" => {
            let actor = Actor::EqualSlice;
            let report = evaluate(&setup.env, &actor, &setup.test_traces, workers)?;
            let series = timeseries_csv(&setup.env, &actor, &setup.test_traces[0])?;
            (report, series)
        }
        "policy" => {
            let dir = checkpoint.unwrap_or_else(|| out.join("checkpoint"));
            let (env, bw, vm) = load_checkpoint(&setup, &dir)?;
            let actor = Actor::Policy {
                bw: &bw,
                vm: &vm,
                explore: false,
            };
            let report = evaluate(&env, &actor, &setup.test_traces, workers)?;
            let series = timeseries_csv(&env, &actor, &setup.test_traces[0])?;
            (report, series)
        }
        other => bail!("--allocator must be `policy` or `equal`, got {other:?}"),
    };

    print_report(allocator, &report);
    let k = setup.env.classes;
    fs::write(
        out.join("results.csv"),
        results_csv(
            k,
            &[
                (allocator, "bw", &report.bw_class),
                (allocator, "vm", &report.vm_class),
            ],
        ),
    )?;
    fs::write(out.join("timeseries.csv"), series)?;
    println!("wrote {} and timeseries.csv", out.join("results.csv").display());
    Ok(())
}

pub fn compare_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_resolved_config(cfg, out)?;
    let k = cfg.class_count();
    let header = {
        let mut h = String::from("budget_level,resource");
        for i in 1..=k {
            h.push_str(&format!(",class_{i}"));
        }
        h.push_str(",total\n");
        h
    };
    let mut nn_csv = header.clone();
    let mut es_csv = header.clone();
    let mut winners_csv = header;
    let mut policy_cells = 0usize;
    let mut equal_cells = 0usize;
    let mut tie_cells = 0usize;

    for &level in &cfg.scenario.budget_levels {
        let setup = build_setup(cfg, level)?;
        println!(
            "budget level {level}: training {} episodes (bw {} vm {})",
            cfg.training.train_episodes, setup.env.budgets.bandwidth, setup.env.budgets.compute
        );
        let outcome = run_training(cfg, &setup, &mut |_| {})
            .with_context(|| format!("training at budget level {level}"))?;
        let nn = {
            let actor = Actor::Policy {
                bw: &outcome.bw,
                vm: &outcome.vm,
                explore: false,
            };
            evaluate(&outcome.env, &actor, &setup.test_traces, cfg.training.workers)?
        };
        let es = evaluate(
            &setup.env,
            &Actor::EqualSlice,
            &setup.test_traces,
            cfg.training.workers,
        )?;

        for (resource, nn_cells, es_cells) in [
            ("bw", &nn.bw_class, &es.bw_class),
            ("vm", &nn.vm_class, &es.vm_class),
        ] {
            let append = |csv: &mut String, cells: &[f64]| {
                csv.push_str(&format!("{level},{resource}"));
                for v in cells {
                    csv.push_str(&format!(",{v}"));
                }
                csv.push_str(&format!(",{}\n", cells.iter().sum::<f64>()));
            };
            append(&mut nn_csv, nn_cells);
            append(&mut es_csv, es_cells);

            winners_csv.push_str(&format!("{level},{resource}"));
            let totals = (
                nn_cells.iter().sum::<f64>(),
                es_cells.iter().sum::<f64>(),
            );
            let pairs = nn_cells
                .iter()
                .copied()
                .zip(es_cells.iter().copied())
                .chain(std::iter::once(totals));
            for (a, b) in pairs {
                let w = if a < b {
                    policy_cells += 1;
                    "policy"
                } else if b < a {
                    equal_cells += 1;
                    "equal"
                } else {
                    tie_cells += 1;
                    "tie"
                };
                winners_csv.push_str(&format!(",{w}"));
            }
            winners_csv.push('\n');
        }
        println!(
            "  level {level}: policy total {:.3} vs equal total {:.3}",
            nn.total(),
            es.total()
        );
    }

    fs::write(out.join("compare_nn.csv"), nn_csv)?;
    fs::write(out.join("compare_es.csv"), es_csv)?;
    fs::write(out.join("winners.csv"), winners_csv)?;
    fs::write(
        out.join("summary.csv"),
        format!("winner,cells\npolicy,{policy_cells}\nequal,{equal_cells}\ntie,{tie_cells}\n"),
    )?;
    println!(
        "cells won: policy {policy_cells}, equal {equal_cells}, ties {tie_cells} (tables in {})",
        out.display()
    );
    Ok(())
}

pub fn gen_data_cmd(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_resolved_config(cfg, out)?;
    let data_dir = out.join("data");
    fs::create_dir_all(&data_dir)?;
    let mut manifest = String::from("split,index,seed,file,events,horizon\n");
    match &cfg.scenario.traces {
        None => {
            let specs = cfg.class_specs()?;
            for (split, count, base) in [
                ("train", cfg.training.train_episodes, 0),
                ("test", cfg.training.test_episodes, cfg.training.train_episodes),
            ] {
                for j in 0..count {
                    let seed = episode_seed(cfg.training.seed_workload, (base + j) as u64);
                    let trace = gen_synthetic_episode(&specs, cfg.scenario.horizon, seed)?;
                    let name = format!("{split}_{j:04}.csv");
                    trace.save(&data_dir.join(&name))?;
                    manifest.push_str(&format!(
                        "{split},{j},{seed},data/{name},{},{}\n",
                        trace.len(),
                        trace.horizon
                    ));
                }
            }
        }
        Some(_) => {
            let (train, test) = load_real_workload(cfg)?;
            for (split, trace) in [("train", &train), ("test", &test)] {
                let name = format!("{split}.csv");
                trace.save(&data_dir.join(&name))?;
                manifest.push_str(&format!(
                    "{split},0,0,data/{name},{},{}\n",
                    trace.len(),
                    trace.horizon
                ));
            }
        }
    }
    fs::write(out.join("manifest.csv"), &manifest)?;
    println!(
        "wrote {} workload files under {}",
        manifest.lines().count() - 1,
        data_dir.display()
    );
    Ok(())
}
