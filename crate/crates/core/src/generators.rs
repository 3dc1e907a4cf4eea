//! Random tiny games and policies for property checks: at most three world
//! states, observations and actions per team.

use rand::Rng;

use crate::cost::{GridAxis, StaticCost, Target};
use crate::policy::{symmetrize, DetPolicy, MixtureComponent, TeamPolicy};
use crate::prob::{renormalize, FiniteSpace, Kernel, ProbVec};
use crate::spec::{StaticGameSpec, TeamSpec};
use crate::statistic::StatisticMap;

/// A random point of the simplex, with occasional exact zeros.
pub fn random_distribution<R: Rng + ?Sized>(rng: &mut R, size: usize) -> Vec<f64> {
    loop {
        let w: Vec<f64> = (0..size)
            .map(|_| {
                if size > 1 && rng.gen_bool(0.15) {
                    0.0
                } else {
                    -(1.0 - rng.gen::<f64>()).ln()
                }
            })
            .collect();
        if w.iter().any(|&x| x > 0.0) {
            return renormalize(w);
        }
    }
}

pub fn random_kernel<R: Rng + ?Sized>(rng: &mut R, sources: usize, targets: usize) -> Kernel {
    Kernel::from_rows(
        (0..sources)
            .map(|_| random_distribution(rng, targets))
            .collect(),
    )
    .expect("rows are normalized")
}

fn random_cost<R: Rng + ?Sized>(
    rng: &mut R,
    worlds: usize,
    actions: usize,
    spread: f64,
) -> StaticCost {
    let scale = rng.gen_range(0.2..2.0);
    match rng.gen_range(0..6) {
        0 => StaticCost::Constant {
            value: rng.gen_range(0.0..3.0),
        },
        1 => StaticCost::TrackOpponentMean {
            scale,
            offset: rng.gen_range(0.0..1.0),
        },
        2 => StaticCost::TrackOwnMean {
            scale,
            offset: rng.gen_range(0.0..1.0),
        },
        3 => StaticCost::EvadeOpponentMean {
            scale,
            offset: scale * spread * spread + rng.gen_range(0.0..1.0),
        },
        4 => StaticCost::Spread {
            scale,
            offset: scale * spread + rng.gen_range(0.0..1.0),
            target: if rng.gen_bool(0.5) {
                Target::Own
            } else {
                Target::Opponent
            },
        },
        _ => {
            let points = [rng.gen_range(2..=3), rng.gen_range(2..=3)];
            let axes = points.map(|p| GridAxis {
                lo: 0.0,
                hi: spread.max(1.0),
                points: p,
            });
            let values = (0..worlds)
                .map(|_| {
                    (0..actions)
                        .map(|_| {
                            (0..points[0])
                                .map(|_| (0..points[1]).map(|_| rng.gen_range(0.0..2.0)).collect())
                                .collect()
                        })
                        .collect()
                })
                .collect();
            StaticCost::Table { axes, values }
        }
    }
}

/// A random valid static game with every space of size at most 3.
pub fn random_static_spec<R: Rng + ?Sized>(rng: &mut R) -> StaticGameSpec {
    let worlds = rng.gen_range(1..=3);
    let team = |rng: &mut R| {
        let obs = rng.gen_range(1..=3);
        let actions = rng.gen_range(2..=3);
        let statistic = if rng.gen_bool(0.5) {
            StatisticMap::Identity
        } else {
            StatisticMap::MeanEmbedding {
                embedding: (0..actions)
                    .map(|_| rng.gen_range(0.0..(actions - 1) as f64))
                    .collect(),
            }
        };
        TeamSpec {
            action_space: FiniteSpace::new(actions),
            obs_space: FiniteSpace::new(obs),
            obs_kernel: random_kernel(rng, worlds, obs),
            statistic,
        }
    };
    let teams = [team(rng), team(rng)];
    // statistic means and action values all lie in [0, 2]
    let spread = 2.0;
    let cost = [0, 1].map(|i| random_cost(rng, worlds, teams[i].action_space.size, spread));
    StaticGameSpec {
        world: FiniteSpace::new(worlds),
        prior: ProbVec::new(random_distribution(rng, worlds)).expect("normalized"),
        teams,
        cost,
    }
}

fn random_maps<R: Rng + ?Sized>(
    rng: &mut R,
    n: usize,
    obs: usize,
    actions: usize,
) -> Vec<DetPolicy> {
    (0..n)
        .map(|_| DetPolicy((0..obs).map(|_| rng.gen_range(0..actions)).collect()))
        .collect()
}

/// A random team policy of any kind: symmetric i.i.d., product, or a
/// mixture of up to three deterministic profiles.
pub fn random_team_policy<R: Rng + ?Sized>(
    rng: &mut R,
    obs: usize,
    actions: usize,
    n: usize,
) -> TeamPolicy {
    match rng.gen_range(0..3) {
        0 => TeamPolicy::symmetric(random_kernel(rng, obs, actions)),
        1 => TeamPolicy::Product {
            kernels: (0..n).map(|_| random_kernel(rng, obs, actions)).collect(),
        },
        _ => {
            let k = rng.gen_range(1..=3);
            let weights = random_distribution(rng, k);
            TeamPolicy::Mixture {
                profiles: weights
                    .into_iter()
                    .map(|weight| MixtureComponent {
                        weight,
                        maps: random_maps(rng, n, obs, actions),
                    })
                    .filter(|c| c.weight > 0.0)
                    .collect(),
            }
        }
    }
}

/// A random exchangeable team policy: symmetric i.i.d., or the
/// symmetrization of a random mixture.
pub fn random_exchangeable_policy<R: Rng + ?Sized>(
    rng: &mut R,
    obs: usize,
    actions: usize,
    n: usize,
) -> TeamPolicy {
    if rng.gen_bool(0.5) {
        TeamPolicy::symmetric(random_kernel(rng, obs, actions))
    } else {
        let k = rng.gen_range(1..=3);
        let weights = random_distribution(rng, k);
        let mix = TeamPolicy::Mixture {
            profiles: weights
                .into_iter()
                .filter(|&w| w > 0.0)
                .map(|weight| MixtureComponent {
                    weight,
                    maps: random_maps(rng, n, obs, actions),
                })
                .collect(),
        };
        symmetrize(&mix, n).expect("small team")
    }
}
