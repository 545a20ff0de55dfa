//! Shared fixtures for the criterion benches.

use slicesim::env::{budgets_from_specs, DEFAULT_NORM_DECAY};
use slicesim::policy::PolicyNet;
use slicesim::{ClassSpec, Mode, SliceEnv};

/// Three classes spanning light to heavy demand on both resources.
pub fn demo_classes() -> Vec<ClassSpec> {
    vec![
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
    ]
}

/// Environment over [`demo_classes`] at the tightest budget level.
pub fn demo_env(mode: Mode) -> SliceEnv {
    let specs = demo_classes();
    let budgets = budgets_from_specs(&specs, 0, mode).unwrap();
    SliceEnv::new(specs.len(), mode, budgets, 1.0, 10.0, DEFAULT_NORM_DECAY).unwrap()
}

/// Two hidden layers of 64, the shape the training runs use.
pub fn demo_policy(in_dim: usize, out_dim: usize, seed: u64) -> PolicyNet {
    PolicyNet::init(&[in_dim, 64, 64, out_dim], 0.01, 100.0, seed).unwrap()
}
