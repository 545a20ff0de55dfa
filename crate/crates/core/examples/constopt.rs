//! Loss bounds for hand-built reference allocators, reported as fractions
//! of equal slicing's loss on the same episodes: the best constant
//! allocation, a backlog tracker with tuned per-class headroom, and a
//! clairvoyant tracker that peeks at the arrivals its window will serve.

use slicesim::env::{project_to_budget, EnvState};
use slicesim::learner::episode_seed;
use slicesim::workload::gen_synthetic_episode;
use slicesim::{Allocation, ClassSpec, EpisodeTrace, Mode, SliceEnv};

fn episode_loss<F>(env: &SliceEnv, trace: &EpisodeTrace, bw: bool, mut policy: F) -> f64
where
    F: FnMut(&EnvState) -> Vec<f64>,
{
    let mut state = env.reset(trace).unwrap();
    if !env.advance(trace, &mut state) {
        return 0.0;
    }
    let k = env.classes;
    let mut total = 0.0;
    loop {
        let raw = policy(&state);
        let executed = if bw {
            Allocation {
                bandwidth: project_to_budget(&raw, env.budgets.bandwidth),
                compute: vec![0.0; k],
            }
        } else {
            Allocation {
                bandwidth: vec![0.0; k],
                compute: project_to_budget(&raw, env.budgets.compute),
            }
        };
        let (loss, done) = env.step(trace, &mut state, &executed).unwrap();
        total += if bw { loss.bw_total() } else { loss.vm_total() };
        if done {
            return total;
        }
    }
}

/// Demand arriving in the window the current decision will serve: every
/// event after the clock up to the next decision point.
fn upcoming(env: &SliceEnv, trace: &EpisodeTrace, state: &EnvState) -> Vec<(f64, f64)> {
    let next = match env.mode {
        Mode::UponArrival => trace
            .events
            .iter()
            .find(|e| e.time > state.clock)
            .map_or(trace.horizon, |e| e.time),
        Mode::Batch => (state.clock + env.service_interval).min(trace.horizon),
    };
    let mut sums = vec![(0.0, 0.0); env.classes];
    for ev in &trace.events {
        if ev.time > state.clock && ev.time <= next {
            sums[ev.class].0 += ev.bw;
            sums[ev.class].1 += ev.vm;
        }
    }
    sums
}

fn mean_loss<F>(env: &SliceEnv, traces: &[EpisodeTrace], bw: bool, policy: &F) -> f64
where
    F: Fn(&EpisodeTrace, &EnvState) -> Vec<f64>,
{
    traces
        .iter()
        .map(|t| episode_loss(env, t, bw, |s| policy(t, s)))
        .sum::<f64>()
        / traces.len() as f64
}

/// Coordinate descent over a per-class vector fed to `make` (constant
/// allocations or headrooms).
fn descend<F>(env: &SliceEnv, traces: &[EpisodeTrace], bw: bool, init: Vec<f64>, scale: f64, make: F) -> (Vec<f64>, f64)
where
    F: Fn(&[f64]) -> Box<dyn Fn(&EpisodeTrace, &EnvState) -> Vec<f64> + '_> + Sync,
{
    let mut best = init;
    let mut best_loss = mean_loss(env, traces, bw, &make(&best));
    let mut step = scale / 2.0;
    while step > scale * 1e-3 {
        let mut improved = false;
        for i in 0..best.len() {
            for dir in [-1.0, 1.0] {
                let mut cand = best.clone();
                cand[i] = (cand[i] + dir * step).max(0.0);
                let l = mean_loss(env, traces, bw, &make(&cand));
                if l < best_loss {
                    best_loss = l;
                    best = cand;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (best, best_loss)
}

fn main() {
    let specs = vec![
        ClassSpec {
            class: 0,
            arrival_rate: 2.0,
            bw_range: (100.0, 150.0),
            vm_range: (500.0, 600.0),
            service_interval: 10.0,
        },
        ClassSpec {
            class: 1,
            arrival_rate: 2.0,
            bw_range: (100.0, 200.0),
            vm_range: (1000.0, 1500.0),
            service_interval: 10.0,
        },
        ClassSpec {
            class: 2,
            arrival_rate: 2.0,
            bw_range: (300.0, 500.0),
            vm_range: (1000.0, 2000.0),
            service_interval: 10.0,
        },
    ];
    let horizon: f64 = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(300.0);
    let mode = match std::env::args().nth(2).as_deref() {
        Some("batch") => Mode::Batch,
        _ => Mode::UponArrival,
    };
    let budgets = slicesim::env::budgets_from_specs(&specs, 0, mode).unwrap();
    let env = SliceEnv::new(3, mode, budgets, 1.0, 10.0, 0.999).unwrap();
    let traces: Vec<EpisodeTrace> = (0..50)
        .map(|j| gen_synthetic_episode(&specs, horizon, episode_seed(1, 300 + j)).unwrap())
        .collect();
    let k = 3usize;

    for (name, budget, bw) in [
        ("bw", env.budgets.bandwidth, true),
        ("vm", env.budgets.compute, false),
    ] {
        let es = vec![budget / k as f64; k];
        let es_loss = mean_loss(&env, &traces, bw, &|_t: &EpisodeTrace, _s: &EnvState| es.clone());
        println!("{name}: equal slice loss {es_loss:.0} per episode");

        let (const_alloc, const_loss) = descend(&env, &traces, bw, es.clone(), budget / k as f64, |v| {
            let v = v.to_vec();
            Box::new(move |_t, _s| v.clone())
        });
        let rounded: Vec<f64> = const_alloc.iter().map(|v| (v * 10.0).round() / 10.0).collect();
        println!(
            "  best constant      ratio {:.3}  alloc {rounded:?}",
            const_loss / es_loss
        );

        let buffers = move |s: &EnvState| -> Vec<f64> {
            if bw {
                s.bw_buffers.clone()
            } else {
                s.vm_buffers.clone()
            }
        };
        let (head, track_loss) = descend(&env, &traces, bw, vec![budget / 20.0; k], budget / 20.0, |h| {
            let h = h.to_vec();
            Box::new(move |_t, s| {
                buffers(s).iter().zip(&h).map(|(b, hi)| b + hi).collect()
            })
        });
        let rounded: Vec<f64> = head.iter().map(|v| (v * 10.0).round() / 10.0).collect();
        println!(
            "  backlog + headroom ratio {:.3}  headroom {rounded:?}",
            track_loss / es_loss
        );

        let env_ref = &env;
        let clair = |t: &EpisodeTrace, s: &EnvState| -> Vec<f64> {
            let up = upcoming(env_ref, t, s);
            buffers(s)
                .iter()
                .zip(&up)
                .map(|(b, (ubw, uvm))| b + if bw { *ubw } else { *uvm })
                .collect()
        };
        let clair_loss = mean_loss(&env, &traces, bw, &clair);
        println!("  clairvoyant        ratio {:.3}", clair_loss / es_loss);
    }
}
