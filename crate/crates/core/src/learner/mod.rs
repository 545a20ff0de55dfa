//! Episode rollout, evaluation, and the policy-gradient training loop.
//!
//! Both resource policies act on every decision and are updated once per
//! episode from the same per-step total loss, each through its own
//! optimizer state.

mod adam;

pub use adam::{AdamConfig, AdamState};

use crate::baseline::equal_slice;
use crate::env::{Allocation, LossBreakdown, Resource, SliceEnv};
use crate::error::{Error, Result};
use crate::policy::{ActionSample, ParamGrads, PolicyNet};
use crate::workload::{gen_synthetic_episode, ClassSpec, EpisodeTrace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::borrow::Cow;

/// Discounted suffix sums: G_t = l_t + gamma * G_{t+1}.
pub fn discounted_returns(losses: &[f64], gamma: f64) -> Vec<f64> {
    let mut returns = vec![0.0; losses.len()];
    let mut acc = 0.0;
    for (r, l) in returns.iter_mut().zip(losses).rev() {
        acc = l + gamma * acc;
        *r = acc;
    }
    returns
}

/// What gets subtracted from the returns before weighting score gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineMode {
    /// The episode's mean return; cheap variance reduction.
    EpisodeMean,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientEstimator {
    /// Likelihood-ratio (REINFORCE) gradient from sampled actions.
    Score,
    /// Derivative of each step's own loss pushed through clamp and
    /// projection; ignores the action's effect on later steps.
    Pathwise,
}

/// Everything remembered about one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    /// Simulation clock at the decision point.
    pub time: f64,
    pub features_bw: Vec<f64>,
    pub features_vm: Vec<f64>,
    pub sample_bw: ActionSample,
    pub sample_vm: ActionSample,
    /// Post-projection amounts the environment actually applied.
    pub executed: Allocation,
    pub loss: LossBreakdown,
}

impl DecisionRecord {
    fn features(&self, resource: Resource) -> &[f64] {
        match resource {
            Resource::Bandwidth => &self.features_bw,
            Resource::Compute => &self.features_vm,
        }
    }

    fn sample(&self, resource: Resource) -> &ActionSample {
        match resource {
            Resource::Bandwidth => &self.sample_bw,
            Resource::Compute => &self.sample_vm,
        }
    }
}

/// One episode's decisions in order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trajectory {
    pub records: Vec<DecisionRecord>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Total loss of each step.
    pub fn step_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss.total()).collect()
    }

    /// Each step's loss restricted to one resource, the signal that
    /// resource's agent trains on.
    pub fn resource_step_losses(&self, resource: Resource) -> Vec<f64> {
        self.records
            .iter()
            .map(|r| match resource {
                Resource::Bandwidth => r.loss.bw_total(),
                Resource::Compute => r.loss.vm_total(),
            })
            .collect()
    }

    pub fn total_loss(&self) -> f64 {
        self.records.iter().map(|r| r.loss.total()).sum()
    }

    /// Per-class loss sums over the episode, bandwidth and compute.
    pub fn class_resource_totals(&self, classes: usize) -> (Vec<f64>, Vec<f64>) {
        let mut bw = vec![0.0; classes];
        let mut vm = vec![0.0; classes];
        for rec in &self.records {
            for i in 0..classes {
                bw[i] += rec.loss.bw_class(i);
                vm[i] += rec.loss.vm_class(i);
            }
        }
        (bw, vm)
    }
}

/// Who picks the allocations.
pub enum Actor<'a> {
    Policy {
        bw: &'a PolicyNet,
        vm: &'a PolicyNet,
        /// Sample around the mean (training) or act on the clamped mean.
        explore: bool,
    },
    /// Static budget/K per class, the comparison baseline.
    EqualSlice,
}

/// Rolls one episode. Exploration noise is drawn from `rng`, bandwidth
/// before compute at each decision; deterministic actors never touch it.
pub fn run_episode(
    env: &mut SliceEnv,
    trace: &EpisodeTrace,
    actor: &Actor,
    rng: &mut ChaCha8Rng,
) -> Result<Trajectory> {
    let mut state = env.reset(trace)?;
    let mut traj = Trajectory::default();
    if !env.advance(trace, &mut state) {
        return Ok(traj);
    }
    loop {
        let time = state.clock;
        let features_bw = env.features(&state, Resource::Bandwidth);
        let features_vm = env.features(&state, Resource::Compute);
        let (sample_bw, sample_vm) = pick(actor, env, &features_bw, &features_vm, rng)?;
        let executed = Allocation {
            bandwidth: project_onto(&sample_bw.action, env.budgets.bandwidth),
            compute: project_onto(&sample_vm.action, env.budgets.compute),
        };
        let (loss, done) = env.step(trace, &mut state, &executed)?;
        traj.records.push(DecisionRecord {
            time,
            features_bw,
            features_vm,
            sample_bw,
            sample_vm,
            executed,
            loss,
        });
        if done {
            return Ok(traj);
        }
    }
}

fn pick(
    actor: &Actor,
    env: &SliceEnv,
    features_bw: &[f64],
    features_vm: &[f64],
    rng: &mut ChaCha8Rng,
) -> Result<(ActionSample, ActionSample)> {
    match actor {
        Actor::Policy { bw, vm, explore: true } => Ok((
            bw.sample_action(features_bw, rng)?,
            vm.sample_action(features_vm, rng)?,
        )),
        Actor::Policy { bw, vm, explore: false } => {
            Ok((bw.mean_action(features_bw)?, vm.mean_action(features_vm)?))
        }
        Actor::EqualSlice => {
            let alloc = equal_slice(&env.budgets, env.classes)?;
            let wrap = |v: Vec<f64>| ActionSample {
                preclamp: v.clone(),
                action: v,
                log_prob: 0.0,
            };
            Ok((wrap(alloc.bandwidth), wrap(alloc.compute)))
        }
    }
}

fn project_onto(raw: &[f64], budget: f64) -> Vec<f64> {
    crate::env::project_to_budget(raw, budget)
}

/// Per-class mean episode losses of a deterministic actor over a set of
/// traces.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub decisions: usize,
    /// Mean per-episode loss of each class's bandwidth slice.
    pub bw_class: Vec<f64>,
    pub vm_class: Vec<f64>,
}

impl EvalReport {
    pub fn bw_total(&self) -> f64 {
        self.bw_class.iter().sum()
    }

    pub fn vm_total(&self) -> f64 {
        self.vm_class.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.bw_total() + self.vm_total()
    }
}

/// Runs the actor over every trace and averages the per-class episode
/// losses. Each episode gets its own clone of the environment, so the
/// feature scalers stay frozen at their trained state and the result is
/// identical for any worker count.
pub fn evaluate(
    env: &SliceEnv,
    actor: &Actor,
    traces: &[EpisodeTrace],
    workers: usize,
) -> Result<EvalReport> {
    if let Actor::Policy { explore: true, .. } = actor {
        return Err(Error::InvalidArg(
            "evaluation must run the deterministic policy, not exploration".into(),
        ));
    }
    if workers == 0 {
        return Err(Error::InvalidArg("need at least one worker".into()));
    }
    if traces.is_empty() {
        return Err(Error::Empty("no evaluation traces".into()));
    }
    let run_one = |trace: &EpisodeTrace| -> Result<Trajectory> {
        let mut env = env.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        run_episode(&mut env, trace, actor, &mut rng)
    };
    let trajectories: Vec<Trajectory> = if workers > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidArg(format!("worker pool: {e}")))?;
        pool.install(|| traces.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        traces.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };

    let n = trajectories.len() as f64;
    let mut bw_class = vec![0.0; env.classes];
    let mut vm_class = vec![0.0; env.classes];
    let mut decisions = 0;
    for traj in &trajectories {
        decisions += traj.len();
        let (bw, vm) = traj.class_resource_totals(env.classes);
        for i in 0..env.classes {
            bw_class[i] += bw[i];
            vm_class[i] += vm[i];
        }
    }
    for v in bw_class.iter_mut().chain(vm_class.iter_mut()) {
        *v /= n;
    }
    Ok(EvalReport {
        episodes: trajectories.len(),
        decisions,
        bw_class,
        vm_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateConfig {
    pub gamma: f64,
    pub baseline: BaselineMode,
    pub estimator: GradientEstimator,
}

/// One optimizer step for one resource's policy from a finished episode.
/// Empty episodes change nothing, not even the optimizer clock.
pub fn reinforce_update(
    policy: &mut PolicyNet,
    adam: &mut AdamState,
    traj: &Trajectory,
    resource: Resource,
    budget: f64,
    cfg: &UpdateConfig,
) -> Result<()> {
    if traj.is_empty() {
        return Ok(());
    }
    let mut acc = ParamGrads::zeros_like(policy);
    match cfg.estimator {
        GradientEstimator::Score => {
            let returns = discounted_returns(&traj.resource_step_losses(resource), cfg.gamma);
            let baseline = match cfg.baseline {
                BaselineMode::EpisodeMean => returns.iter().sum::<f64>() / returns.len() as f64,
                BaselineMode::Zero => 0.0,
            };
            for (rec, g) in traj.records.iter().zip(&returns) {
                let sample = rec.sample(resource);
                let grads = policy.grad_log_prob(rec.features(resource), &sample.preclamp)?;
                acc.axpy(g - baseline, &grads);
            }
        }
        GradientEstimator::Pathwise => {
            for rec in &traj.records {
                let sample = rec.sample(resource);
                let qos = match resource {
                    Resource::Bandwidth => &rec.loss.qos_bw,
                    Resource::Compute => &rec.loss.qos_vm,
                };
                // d(step loss)/d(executed_j): the reservation always costs
                // its weight; a unit more would also have drained the
                // buffer wherever one was left standing.
                let dexec: Vec<f64> = qos
                    .iter()
                    .map(|q| rec.loss.weight - if *q > 0.0 { 1.0 } else { 0.0 })
                    .collect();
                // Through the projection: identity when the raw action was
                // feasible, otherwise the scaling's Jacobian.
                let raw = &sample.action;
                let sum: f64 = raw.iter().sum();
                let draw: Vec<f64> = if sum > budget {
                    let scale = budget / sum;
                    let dot: f64 = dexec.iter().zip(raw).map(|(d, r)| d * r).sum();
                    dexec
                        .iter()
                        .map(|d| scale * d - (budget / (sum * sum)) * dot)
                        .collect()
                } else {
                    dexec
                };
                // Through the clamp (flat where the draw was negative) and
                // the head gain into the network output.
                let upstream: Vec<f64> = draw
                    .iter()
                    .zip(&sample.preclamp)
                    .map(|(d, p)| if *p > 0.0 { *d * policy.output_gain } else { 0.0 })
                    .collect();
                let grads = policy.backprop_mean(rec.features(resource), &upstream)?;
                acc.axpy(1.0, &grads);
            }
        }
    }
    let mut params = policy.flat_params();
    adam.step(&mut params, &acc.to_flat())?;
    policy.set_flat_params(&params)
}

/// Training aborts once an episode's total loss crosses this.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub episodes: usize,
    pub gamma: f64,
    pub adam: AdamConfig,
    pub baseline: BaselineMode,
    pub estimator: GradientEstimator,
    pub seed_explore: u64,
    pub divergence_limit: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainLogRow {
    pub episode: usize,
    pub total: f64,
    pub bw_class: Vec<f64>,
    pub vm_class: Vec<f64>,
}

/// Where the training episodes come from: freshly generated workloads or a
/// fixed trace replayed every episode.
pub enum TraceSource<'a> {
    Synthetic {
        specs: &'a [ClassSpec],
        horizon: f64,
        seed: u64,
    },
    Replay(&'a EpisodeTrace),
}

impl<'a> TraceSource<'a> {
    pub fn trace(&self, index: usize) -> Result<Cow<'a, EpisodeTrace>> {
        match self {
            TraceSource::Synthetic { specs, horizon, seed } => Ok(Cow::Owned(
                gen_synthetic_episode(specs, *horizon, episode_seed(*seed, index as u64))?,
            )),
            TraceSource::Replay(trace) => Ok(Cow::Borrowed(trace)),
        }
    }
}

/// Per-episode stream seed: splitmix64 of the base and index, so episode i
/// is reproducible in isolation.
pub fn episode_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Trains both policies in place, one exploring rollout and one optimizer
/// step per episode. `on_row` sees every episode's losses as they finish,
/// including the final row of a run that aborts on divergence.
pub fn train(
    env: &mut SliceEnv,
    source: &TraceSource,
    policy_bw: &mut PolicyNet,
    policy_vm: &mut PolicyNet,
    cfg: &TrainConfig,
    on_row: &mut dyn FnMut(&TrainLogRow),
) -> Result<Vec<TrainLogRow>> {
    if !(cfg.gamma >= 0.0 && cfg.gamma <= 1.0) {
        return Err(Error::InvalidArg(format!(
            "discount must lie in [0, 1], got {}",
            cfg.gamma
        )));
    }
    let mut adam_bw = AdamState::new(cfg.adam, policy_bw.param_count())?;
    let mut adam_vm = AdamState::new(cfg.adam, policy_vm.param_count())?;
    let ucfg = UpdateConfig {
        gamma: cfg.gamma,
        baseline: cfg.baseline,
        estimator: cfg.estimator,
    };
    let mut rows = Vec::with_capacity(cfg.episodes);
    for episode in 0..cfg.episodes {
        let trace = source.trace(episode)?;
        let mut rng = ChaCha8Rng::seed_from_u64(episode_seed(cfg.seed_explore, episode as u64));
        let traj = {
            let actor = Actor::Policy {
                bw: policy_bw,
                vm: policy_vm,
                explore: true,
            };
            run_episode(env, &trace, &actor, &mut rng)?
        };
        let total = traj.total_loss();
        let (bw_class, vm_class) = traj.class_resource_totals(env.classes);
        let row = TrainLogRow {
            episode,
            total,
            bw_class,
            vm_class,
        };
        if !total.is_finite() || total > cfg.divergence_limit {
            on_row(&row);
            rows.push(row);
            return Err(Error::Diverged {
                episode,
                loss: total,
            });
        }
        reinforce_update(
            policy_bw,
            &mut adam_bw,
            &traj,
            Resource::Bandwidth,
            env.budgets.bandwidth,
            &ucfg,
        )?;
        reinforce_update(
            policy_vm,
            &mut adam_vm,
            &traj,
            Resource::Compute,
            env.budgets.compute,
            &ucfg,
        )?;
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Budgets, Mode, DEFAULT_NORM_DECAY};
    use crate::workload::RequestEvent;

    fn ev(time: f64, class: usize, bw: f64, vm: f64) -> RequestEvent {
        RequestEvent { time, class, bw, vm }
    }

    fn small_env(classes: usize, mode: Mode) -> SliceEnv {
        SliceEnv::new(
            classes,
            mode,
            Budgets {
                bandwidth: 100.0,
                compute: 100.0,
            },
            1.0,
            10.0,
            DEFAULT_NORM_DECAY,
        )
        .unwrap()
    }

    fn small_policies(env: &SliceEnv) -> (PolicyNet, PolicyNet) {
        let sizes = [env.feature_dim(), 8, env.classes];
        (
            PolicyNet::init(&sizes, 0.01, 5.0, 11).unwrap(),
            PolicyNet::init(&sizes, 0.01, 5.0, 12).unwrap(),
        )
    }

    fn five_event_trace() -> EpisodeTrace {
        EpisodeTrace::new(
            6.0,
            vec![
                ev(0.5, 0, 10.0, 4.0),
                ev(1.5, 0, 20.0, 8.0),
                ev(2.5, 0, 15.0, 2.0),
                ev(3.5, 0, 5.0, 6.0),
                ev(4.5, 0, 25.0, 3.0),
            ],
        )
        .unwrap()
    }

    #[test]
    fn one_record_per_arrival_including_the_final_flush() {
        let mut env = small_env(1, Mode::UponArrival);
        let (bw, vm) = small_policies(&env);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = run_episode(
            &mut env,
            &five_event_trace(),
            &Actor::Policy {
                bw: &bw,
                vm: &vm,
                explore: true,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(traj.len(), 5);
    }

    #[test]
    fn batch_of_twentyfive_with_interval_ten_gives_two_records() {
        let mut env = small_env(1, Mode::Batch);
        let trace = EpisodeTrace::new(25.0, vec![ev(2.0, 0, 1.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = run_episode(&mut env, &trace, &Actor::EqualSlice, &mut rng).unwrap();
        assert_eq!(traj.len(), 2);
    }

    #[test]
    fn executed_allocations_respect_the_budget() {
        let mut env = small_env(2, Mode::UponArrival);
        let (bw, vm) = small_policies(&env);
        let trace = EpisodeTrace::new(
            4.0,
            vec![ev(1.0, 0, 50.0, 50.0), ev(2.0, 1, 80.0, 80.0)],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let traj = run_episode(
            &mut env,
            &trace,
            &Actor::Policy {
                bw: &bw,
                vm: &vm,
                explore: true,
            },
            &mut rng,
        )
        .unwrap();
        for rec in &traj.records {
            let total: f64 = rec.executed.bandwidth.iter().sum();
            assert!(total <= 100.0 * (1.0 + 1e-9));
            let total: f64 = rec.executed.compute.iter().sum();
            assert!(total <= 100.0 * (1.0 + 1e-9));
        }
    }

    #[test]
    fn single_step_update_moves_against_the_accumulated_gradient() {
        let mut env = small_env(1, Mode::UponArrival);
        let (mut policy, vm) = small_policies(&env);
        let trace = EpisodeTrace::new(2.0, vec![ev(1.0, 0, 30.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let traj = {
            let actor = Actor::Policy {
                bw: &policy,
                vm: &vm,
                explore: true,
            };
            run_episode(&mut env, &trace, &actor, &mut rng).unwrap()
        };
        let cfg = UpdateConfig {
            gamma: 0.99,
            baseline: BaselineMode::Zero,
            estimator: GradientEstimator::Score,
        };
        let returns = discounted_returns(&traj.resource_step_losses(Resource::Bandwidth), cfg.gamma);
        let rec = &traj.records[0];
        let mut expected = ParamGrads::zeros_like(&policy);
        expected.axpy(
            returns[0],
            &policy
                .grad_log_prob(&rec.features_bw, &rec.sample_bw.preclamp)
                .unwrap(),
        );
        let flat_grad = expected.to_flat();

        let before = policy.flat_params();
        let mut adam = AdamState::new(AdamConfig::default(), policy.param_count()).unwrap();
        reinforce_update(&mut policy, &mut adam, &traj, Resource::Bandwidth, 100.0, &cfg).unwrap();
        let after = policy.flat_params();

        let mut moved = 0;
        for ((b, a), g) in before.iter().zip(&after).zip(&flat_grad) {
            if g.abs() > 1e-12 {
                assert!(
                    (a - b) * g < 0.0,
                    "parameter moved with the gradient: delta {} grad {g}",
                    a - b
                );
                moved += 1;
            }
        }
        assert!(moved > 0);
    }

    #[test]
    fn single_decision_episode_with_mean_baseline_changes_nothing() {
        // One record means the return equals its own mean, so the score
        // weight is exactly zero and Adam sees a zero gradient.
        let mut env = small_env(1, Mode::UponArrival);
        let (mut policy, vm) = small_policies(&env);
        let trace = EpisodeTrace::new(2.0, vec![ev(1.0, 0, 30.0, 1.0)]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let traj = {
            let actor = Actor::Policy {
                bw: &policy,
                vm: &vm,
                explore: true,
            };
            run_episode(&mut env, &trace, &actor, &mut rng).unwrap()
        };
        assert_eq!(traj.len(), 1);
        let cfg = UpdateConfig {
            gamma: 0.99,
            baseline: BaselineMode::EpisodeMean,
            estimator: GradientEstimator::Score,
        };
        let before = policy.flat_params();
        let mut adam = AdamState::new(AdamConfig::default(), policy.param_count()).unwrap();
        reinforce_update(&mut policy, &mut adam, &traj, Resource::Bandwidth, 100.0, &cfg).unwrap();
        let after = policy.flat_params();
        for (b, a) in before.iter().zip(&after) {
            assert_eq!(b.to_bits(), a.to_bits());
        }
    }

    #[test]
    fn score_gradient_averages_to_zero_over_many_draws() {
        // E[grad log pi] = 0 at fixed parameters; check the empirical mean
        // of each coordinate stays within three standard errors.
        let net = PolicyNet::init(&[2, 4, 1], 0.01, 2.0, 21).unwrap();
        let feats = [0.5, -0.3];
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let n = 4000;
        let dim = net.param_count();
        let mut sums = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for _ in 0..n {
            let s = net.sample_action(&feats, &mut rng).unwrap();
            let g = net.grad_log_prob(&feats, &s.preclamp).unwrap().to_flat();
            for i in 0..dim {
                sums[i] += g[i];
                sq[i] += g[i] * g[i];
            }
        }
        for i in 0..dim {
            let mean = sums[i] / n as f64;
            let var = sq[i] / n as f64 - mean * mean;
            let se = (var / n as f64).sqrt();
            assert!(
                mean.abs() <= 3.0 * se + 1e-12,
                "coordinate {i}: mean {mean} exceeds 3 se {se}"
            );
        }
    }

    /// A step that drained its buffer has d(loss)/d(allocation) = weight,
    /// and an open clamp passes it through, so the update must move.
    #[test]
    fn pathwise_update_moves_on_a_fully_served_step() {
        let env = small_env(1, Mode::UponArrival);
        let (mut policy, _) = small_policies(&env);
        let served = ActionSample {
            preclamp: vec![3.0],
            action: vec![3.0],
            log_prob: 0.0,
        };
        let rec = DecisionRecord {
            time: 1.0,
            features_bw: vec![0.5, 0.2, 0.1],
            features_vm: vec![0.5, 0.2, 0.1],
            sample_bw: served.clone(),
            sample_vm: served,
            executed: Allocation {
                bandwidth: vec![3.0],
                compute: vec![3.0],
            },
            loss: LossBreakdown {
                qos_bw: vec![0.0],
                qos_vm: vec![0.0],
                cost_bw: vec![3.0],
                cost_vm: vec![3.0],
                weight: 1.0,
            },
        };
        let traj = Trajectory { records: vec![rec] };
        let cfg = UpdateConfig {
            gamma: 0.99,
            baseline: BaselineMode::EpisodeMean,
            estimator: GradientEstimator::Pathwise,
        };
        let before = policy.flat_params();
        let mut adam = AdamState::new(AdamConfig::default(), policy.param_count()).unwrap();
        reinforce_update(&mut policy, &mut adam, &traj, Resource::Bandwidth, 100.0, &cfg).unwrap();
        assert_ne!(before, policy.flat_params());
    }

    /// Leftover buffer cancels the reservation cost at weight one, and a
    /// closed clamp blocks the rest, so this trajectory must be a no-op.
    #[test]
    fn pathwise_gradient_vanishes_on_starved_and_clamped_steps() {
        let env = small_env(2, Mode::UponArrival);
        let sizes = [env.feature_dim(), 8, 2];
        let mut policy = PolicyNet::init(&sizes, 0.01, 5.0, 11).unwrap();
        let rec = DecisionRecord {
            time: 1.0,
            features_bw: vec![0.5; 5],
            features_vm: vec![0.5; 5],
            sample_bw: ActionSample {
                // First class starved (buffer left), second clamped shut.
                preclamp: vec![2.0, -1.0],
                action: vec![2.0, 0.0],
                log_prob: 0.0,
            },
            sample_vm: ActionSample {
                preclamp: vec![-1.0, -1.0],
                action: vec![0.0, 0.0],
                log_prob: 0.0,
            },
            executed: Allocation {
                bandwidth: vec![2.0, 0.0],
                compute: vec![0.0, 0.0],
            },
            loss: LossBreakdown {
                qos_bw: vec![4.0, 7.0],
                qos_vm: vec![1.0, 1.0],
                cost_bw: vec![2.0, 0.0],
                cost_vm: vec![0.0, 0.0],
                weight: 1.0,
            },
        };
        let traj = Trajectory { records: vec![rec] };
        let cfg = UpdateConfig {
            gamma: 0.99,
            baseline: BaselineMode::Zero,
            estimator: GradientEstimator::Pathwise,
        };
        let before = policy.flat_params();
        let mut adam = AdamState::new(AdamConfig::default(), policy.param_count()).unwrap();
        reinforce_update(&mut policy, &mut adam, &traj, Resource::Bandwidth, 100.0, &cfg).unwrap();
        assert_eq!(before, policy.flat_params());
    }

    #[test]
    fn empty_episode_is_a_no_op_update() {
        let mut env = small_env(1, Mode::UponArrival);
        let (mut policy, _) = small_policies(&env);
        let trace = EpisodeTrace::new(3.0, vec![]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let traj = {
            let actor = Actor::Policy {
                bw: &policy,
                vm: &policy,
                explore: true,
            };
            run_episode(&mut env, &trace, &actor, &mut rng).unwrap()
        };
        assert!(traj.is_empty());
        let cfg = UpdateConfig {
            gamma: 0.99,
            baseline: BaselineMode::EpisodeMean,
            estimator: GradientEstimator::Score,
        };
        let before = policy.flat_params();
        let mut adam = AdamState::new(AdamConfig::default(), policy.param_count()).unwrap();
        reinforce_update(&mut policy, &mut adam, &traj, Resource::Bandwidth, 100.0, &cfg).unwrap();
        assert_eq!(before, policy.flat_params());
        assert_eq!(adam.timestep(), 0);
    }

    fn train_once(seed_explore: u64) -> (Vec<TrainLogRow>, Vec<f64>, Vec<f64>) {
        let mut env = small_env(1, Mode::UponArrival);
        let specs = [ClassSpec {
            class: 0,
            arrival_rate: 1.0,
            bw_range: (10.0, 30.0),
            vm_range: (1.0, 5.0),
            service_interval: 10.0,
        }];
        let sizes = [env.feature_dim(), 8, 1];
        let mut bw = PolicyNet::init(&sizes, 0.01, 5.0, 1).unwrap();
        let mut vm = PolicyNet::init(&sizes, 0.01, 5.0, 2).unwrap();
        let cfg = TrainConfig {
            episodes: 6,
            gamma: 0.99,
            adam: AdamConfig::default(),
            baseline: BaselineMode::EpisodeMean,
            estimator: GradientEstimator::Score,
            seed_explore,
            divergence_limit: DIVERGENCE_LIMIT,
        };
        let source = TraceSource::Synthetic {
            specs: &specs,
            horizon: 12.0,
            seed: 7,
        };
        let rows = train(&mut env, &source, &mut bw, &mut vm, &cfg, &mut |_| {}).unwrap();
        (rows, bw.flat_params(), vm.flat_params())
    }

    #[test]
    fn training_is_bit_reproducible() {
        let (rows_a, bw_a, vm_a) = train_once(42);
        let (rows_b, bw_b, vm_b) = train_once(42);
        assert_eq!(rows_a.len(), rows_b.len());
        for (a, b) in rows_a.iter().zip(&rows_b) {
            assert_eq!(a.total.to_bits(), b.total.to_bits());
        }
        for (a, b) in bw_a.iter().zip(&bw_b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in vm_a.iter().zip(&vm_b) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        let (_, bw_c, _) = train_once(43);
        assert_ne!(bw_a, bw_c);
    }

    #[test]
    fn divergent_episode_aborts_with_its_log_row() {
        let mut env = small_env(1, Mode::UponArrival);
        let (mut bw, mut vm) = small_policies(&env);
        let trace = EpisodeTrace::new(2.0, vec![ev(1.0, 0, 5e12, 1.0)]).unwrap();
        let cfg = TrainConfig {
            episodes: 10,
            gamma: 0.99,
            adam: AdamConfig::default(),
            baseline: BaselineMode::EpisodeMean,
            estimator: GradientEstimator::Score,
            seed_explore: 0,
            divergence_limit: DIVERGENCE_LIMIT,
        };
        let source = TraceSource::Replay(&trace);
        let mut seen = 0;
        let err = train(&mut env, &source, &mut bw, &mut vm, &cfg, &mut |_| seen += 1)
            .unwrap_err();
        assert!(matches!(err, Error::Diverged { episode: 0, .. }));
        assert_eq!(seen, 1);
    }

    #[test]
    fn evaluation_is_independent_of_worker_count() {
        let env = small_env(2, Mode::UponArrival);
        let sizes = [env.feature_dim(), 8, 2];
        let bw = PolicyNet::init(&sizes, 0.01, 5.0, 3).unwrap();
        let vm = PolicyNet::init(&sizes, 0.01, 5.0, 4).unwrap();
        let specs = [
            ClassSpec {
                class: 0,
                arrival_rate: 1.0,
                bw_range: (10.0, 30.0),
                vm_range: (1.0, 5.0),
                service_interval: 10.0,
            },
            ClassSpec {
                class: 1,
                arrival_rate: 0.5,
                bw_range: (40.0, 60.0),
                vm_range: (5.0, 9.0),
                service_interval: 10.0,
            },
        ];
        let traces: Vec<EpisodeTrace> = (0..6)
            .map(|i| gen_synthetic_episode(&specs, 15.0, episode_seed(5, i)).unwrap())
            .collect();
        let actor = Actor::Policy {
            bw: &bw,
            vm: &vm,
            explore: false,
        };
        let serial = evaluate(&env, &actor, &traces, 1).unwrap();
        let parallel = evaluate(&env, &actor, &traces, 2).unwrap();
        assert_eq!(serial.episodes, 6);
        for (a, b) in serial.bw_class.iter().zip(&parallel.bw_class) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in serial.vm_class.iter().zip(&parallel.vm_class) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(serial.decisions, parallel.decisions);

        let again = evaluate(&env, &Actor::EqualSlice, &traces, 1).unwrap();
        let twice = evaluate(&env, &Actor::EqualSlice, &traces, 1).unwrap();
        assert_eq!(again, twice);
    }

    #[test]
    fn evaluate_rejects_exploring_actors_and_empty_inputs() {
        let env = small_env(1, Mode::UponArrival);
        let (bw, vm) = small_policies(&env);
        let trace = EpisodeTrace::new(2.0, vec![ev(1.0, 0, 1.0, 1.0)]).unwrap();
        let actor = Actor::Policy {
            bw: &bw,
            vm: &vm,
            explore: true,
        };
        assert!(evaluate(&env, &actor, std::slice::from_ref(&trace), 1).is_err());
        let actor = Actor::Policy {
            bw: &bw,
            vm: &vm,
            explore: false,
        };
        assert!(evaluate(&env, &actor, &[], 1).is_err());
        assert!(evaluate(&env, &actor, std::slice::from_ref(&trace), 0).is_err());
    }

    #[test]
    fn episode_seeds_are_distinct_and_stable() {
        assert_eq!(episode_seed(1, 2), episode_seed(1, 2));
        let mut seen = std::collections::BTreeSet::new();
        for i in 0..1000 {
            assert!(seen.insert(episode_seed(12345, i)));
        }
    }

    #[test]
    fn returns_discount_future_losses() {
        let r = discounted_returns(&[1.0, 2.0, 4.0], 0.5);
        assert_eq!(r, vec![1.0 + 0.5 * (2.0 + 0.5 * 4.0), 2.0 + 0.5 * 4.0, 4.0]);
        assert!(discounted_returns(&[], 0.9).is_empty());
    }
}
