//! Fixtures shared by the benchmarks.

use qahsim::{EvolutionSchedule, Momentum, NoiseStrengths, QahParams};

/// Post-quench weak-noise parameters.
pub fn weak() -> (QahParams, NoiseStrengths) {
    (
        QahParams::new(1.0, 0.2, 1.2).expect("valid parameters"),
        NoiseStrengths::new(0.05, 0.0, 0.01).expect("valid noise"),
    )
}

pub fn schedule() -> EvolutionSchedule {
    EvolutionSchedule::new(30.0, 300, 20).expect("valid schedule")
}

pub fn probe_momentum() -> Momentum {
    Momentum::new(1.2857, -1.8)
}
