//! Shared fixtures for the criterion benches in `benches/`.

use asyncpg::{Environments, MdpSpec, TimeModel};

/// `n` agents with per-step times `√i` and no communication cost.
pub fn sqrt_agents(n: usize) -> TimeModel {
    TimeModel::fixed((1..=n).map(|i| (i as f64).sqrt()).collect(), 0.0)
}

pub fn benchmark_env() -> Environments {
    Environments::Homogeneous(MdpSpec::benchmark())
}
