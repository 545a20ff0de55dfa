//! Randomized invariants over the environment and numeric kernels.

use proptest::collection::vec;
use proptest::prelude::*;

use slicesim::env::{
    project_to_budget, Allocation, Budgets, Mode, SliceEnv, DEFAULT_NORM_DECAY,
};
use slicesim::learner::discounted_returns;
use slicesim::workload::{split_trace, EpisodeTrace, RequestEvent};

fn event_strategy(classes: usize, horizon: f64) -> impl Strategy<Value = RequestEvent> {
    (0.0..horizon, 0..classes, 0.0..300.0, 0.0..50.0).prop_map(|(time, class, bw, vm)| {
        RequestEvent {
            time,
            class,
            bw,
            vm,
        }
    })
}

fn trace_strategy(classes: usize, horizon: f64) -> impl Strategy<Value = EpisodeTrace> {
    vec(event_strategy(classes, horizon), 0..40)
        .prop_map(move |events| EpisodeTrace::new(horizon, events).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn projection_never_exceeds_the_budget_and_is_idempotent(
        raw in vec(0.0..1e4_f64, 1..10),
        budget in 0.0..2e4_f64,
    ) {
        let once = project_to_budget(&raw, budget);
        let sum: f64 = once.iter().sum();
        prop_assert!(sum <= budget * (1.0 + 1e-12) || sum <= raw.iter().sum::<f64>());
        prop_assert!(once.iter().all(|v| *v >= 0.0));
        let twice = project_to_budget(&once, budget);
        for (a, b) in once.iter().zip(&twice) {
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        // Order is preserved.
        for i in 1..raw.len() {
            prop_assert_eq!(raw[i] >= raw[i - 1], once[i] >= once[i - 1]);
        }
    }

    #[test]
    fn returns_satisfy_the_one_step_recurrence(
        losses in vec(-100.0..100.0_f64, 1..30),
        gamma in 0.0..=1.0_f64,
    ) {
        let g = discounted_returns(&losses, gamma);
        prop_assert_eq!(g.len(), losses.len());
        for t in 0..losses.len() {
            let next = if t + 1 < g.len() { g[t + 1] } else { 0.0 };
            prop_assert!((g[t] - (losses[t] + gamma * next)).abs() <= 1e-9);
        }
    }

    #[test]
    fn buffers_stay_non_negative_and_demand_is_conserved(
        trace in trace_strategy(3, 50.0),
        allocs in vec((0.0..400.0_f64, 0.0..400.0_f64, 0.0..400.0_f64), 60),
        batch in proptest::bool::ANY,
    ) {
        let mode = if batch { Mode::Batch } else { Mode::UponArrival };
        let env = SliceEnv::new(
            3,
            mode,
            Budgets { bandwidth: 1e9, compute: 1e9 },
            1.0,
            7.0,
            DEFAULT_NORM_DECAY,
        ).unwrap();
        let mut state = env.reset(&trace).unwrap();
        if env.advance(&trace, &mut state) {
            for (a, b, c) in &allocs {
                let action = Allocation {
                    bandwidth: vec![*a, *b, *c],
                    compute: vec![*c, *a, *b],
                };
                let (loss, done) = env.step(&trace, &mut state, &action).unwrap();
                prop_assert!(state.bw_buffers.iter().all(|v| *v >= 0.0));
                prop_assert!(state.vm_buffers.iter().all(|v| *v >= 0.0));
                prop_assert!(loss.total().is_finite());
                prop_assert!(loss.total() >= 0.0);
                if done {
                    break;
                }
            }
        }
        // Whatever arrived was either served or still queued.
        let mut arrived_bw = vec![0.0; 3];
        let mut arrived_vm = vec![0.0; 3];
        for ev in &trace.events {
            arrived_bw[ev.class] += ev.bw;
            arrived_vm[ev.class] += ev.vm;
        }
        for i in 0..3 {
            let bound = 1e-9 * arrived_bw[i].max(1.0);
            prop_assert!(
                (state.cum_arrived_bw[i] - arrived_bw[i]).abs() <= bound,
                "class {} bw arrivals not all consumed", i
            );
            prop_assert!(
                (state.cum_served_bw[i] + state.bw_buffers[i] - arrived_bw[i]).abs() <= bound
            );
            let bound = 1e-9 * arrived_vm[i].max(1.0);
            prop_assert!(
                (state.cum_served_vm[i] + state.vm_buffers[i] - arrived_vm[i]).abs() <= bound
            );
        }
    }

    #[test]
    fn split_partitions_events_and_preserves_order(
        trace in trace_strategy(2, 30.0).prop_filter("need events", |t| t.len() >= 2),
        fraction in 0.1..0.9_f64,
    ) {
        let n = trace.len();
        let (train, test) = split_trace(&trace, fraction).unwrap();
        prop_assert_eq!(train.len() + test.len(), n);
        prop_assert!(train.len() >= 1);
        // Train keeps original times; test is rebased to start at zero.
        for (ev, orig) in train.events.iter().zip(&trace.events) {
            prop_assert_eq!(ev.time, orig.time);
            prop_assert_eq!(ev.bw, orig.bw);
        }
        if !test.is_empty() {
            prop_assert_eq!(test.events[0].time, 0.0);
            let shift = trace.events[train.len()].time;
            for (ev, orig) in test.events.iter().zip(&trace.events[train.len()..]) {
                prop_assert!((ev.time - (orig.time - shift)).abs() <= 1e-12 * orig.time.max(1.0));
                prop_assert_eq!(ev.vm, orig.vm);
            }
        }
        prop_assert!(train.horizon <= trace.horizon);
        prop_assert!(test.horizon <= trace.horizon);
    }

    #[test]
    fn adding_buffered_demand_never_lowers_the_loss(
        qos in vec(0.0..100.0_f64, 1..6),
        extra in 0.0..50.0_f64,
        index in 0usize..6,
        weight in 0.0..3.0_f64,
    ) {
        let k = qos.len();
        let index = index % k;
        let action = Allocation::zeros(k);
        let base = slicesim::env::compute_loss(&qos, &qos, &action, weight).total();
        let mut bumped = qos.clone();
        bumped[index] += extra;
        let more = slicesim::env::compute_loss(&bumped, &qos, &action, weight).total();
        prop_assert!(more >= base);
    }

    #[test]
    fn synthetic_generation_is_a_pure_function_of_its_seed(
        seed in any::<u64>(),
    ) {
        use slicesim::workload::{gen_synthetic_episode, ClassSpec};
        let specs = [ClassSpec {
            class: 0,
            arrival_rate: 1.5,
            bw_range: (5.0, 10.0),
            vm_range: (1.0, 2.0),
            service_interval: 4.0,
        }];
        let a = gen_synthetic_episode(&specs, 20.0, seed).unwrap();
        let b = gen_synthetic_episode(&specs, 20.0, seed).unwrap();
        prop_assert_eq!(a.len(), b.len());
        for (x, y) in a.events.iter().zip(&b.events) {
            prop_assert_eq!(x.time.to_bits(), y.time.to_bits());
            prop_assert_eq!(x.bw.to_bits(), y.bw.to_bits());
            prop_assert_eq!(x.vm.to_bits(), y.vm.to_bits());
        }
    }
}
