//! Seeded synthetic workload generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use super::{ClassSpec, EpisodeTrace, RequestEvent};
use crate::error::{Error, Result};

/// Draws one episode of request arrivals. Each unit interval receives a
/// Poisson(rate) count per class and the events land uniformly inside the
/// interval, so the process has the right intensity without needing
/// exponential gap bookkeeping. The same seed always produces the same
/// trace, bit for bit.
pub fn gen_synthetic_episode(
    specs: &[ClassSpec],
    horizon: f64,
    seed: u64,
) -> Result<EpisodeTrace> {
    if specs.is_empty() {
        return Err(Error::Empty("no traffic classes configured".into()));
    }
    for spec in specs {
        spec.validate()?;
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArg(format!(
            "horizon must be positive and finite, got {horizon}"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut events = Vec::new();
    let intervals = horizon.ceil() as u64;
    for interval in 0..intervals {
        let base = interval as f64;
        for spec in specs {
            // Validated above, so the distribution constructor cannot fail.
            let count = Poisson::new(spec.arrival_rate).unwrap().sample(&mut rng) as u64;
            for _ in 0..count {
                let time = base + rng.gen::<f64>();
                if time >= horizon {
                    // Partial last interval: drop draws past the horizon.
                    continue;
                }
                let bw = rng.gen_range(spec.bw_range.0..=spec.bw_range.1);
                let vm = rng.gen_range(spec.vm_range.0..=spec.vm_range.1);
                events.push(RequestEvent {
                    time,
                    class: spec.class,
                    bw,
                    vm,
                });
            }
        }
    }
    EpisodeTrace::new(horizon, events)
}
