use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::HarnessError;
use crate::iblt::Element;
use crate::protocol::ElementSet;

/// Largest element value, so the full universe is `[1, 2^32)`.
pub const FULL_UNIVERSE: u64 = u32::MAX as u64;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Instance {
    pub s_a: ElementSet,
    pub s_b: ElementSet,
    pub n: u64,
    pub d: u64,
    pub rng_seed: u64,
    /// Elements are drawn from `[1, universe_max]`.
    pub universe_max: u64,
}

impl Instance {
    pub fn delta_a(&self) -> ElementSet {
        self.s_a.difference(&self.s_b).copied().collect()
    }

    pub fn delta_b(&self) -> ElementSet {
        self.s_b.difference(&self.s_a).copied().collect()
    }
}

/// Random pair with `|Δ_A| = ceil(d/2)`, `|Δ_B| = floor(d/2)` and `|S_A| = n`.
pub fn gen_instance(n: u64, d: u64, rng_seed: u64) -> Result<Instance, HarnessError> {
    gen_instance_in(n, d, rng_seed, FULL_UNIVERSE)
}

pub fn gen_instance_in(n: u64, d: u64, rng_seed: u64, universe_max: u64) -> Result<Instance, HarnessError> {
    if d > n {
        return Err(HarnessError::Infeasible(format!("d={d} exceeds n={n}")));
    }
    if universe_max == 0 || universe_max > FULL_UNIVERSE {
        return Err(HarnessError::Infeasible(format!("universe [1, {universe_max}]")));
    }
    let only_a = d.div_ceil(2);
    let only_b = d / 2;
    let total = n + only_b;
    if total > universe_max {
        return Err(HarnessError::Infeasible(format!(
            "{total} distinct elements do not fit in [1, {universe_max}]"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let drawn: Vec<Element> = index::sample(&mut rng, universe_max as usize, total as usize)
        .into_iter()
        .map(|i| Element::new(i as u64 + 1).expect("index within universe"))
        .collect();
    let common = (n - only_a) as usize;
    let (shared, rest) = drawn.split_at(common);
    let (delta_a, delta_b) = rest.split_at(only_a as usize);
    Ok(Instance {
        s_a: shared.iter().chain(delta_a).copied().collect(),
        s_b: shared.iter().chain(delta_b).copied().collect(),
        n,
        d,
        rng_seed,
        universe_max,
    })
}

/// `S_A = {1..7}`, `S_B = {2..8}`.
pub fn fig1_instance() -> Instance {
    let set = |r: std::ops::RangeInclusive<u64>| r.map(|v| Element::new(v).unwrap()).collect();
    Instance {
        s_a: set(1..=7),
        s_b: set(2..=8),
        n: 7,
        d: 2,
        rng_seed: 0,
        universe_max: 8,
    }
}
