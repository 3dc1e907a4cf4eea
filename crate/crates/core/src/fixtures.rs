//! Bundled game instances used by tests, examples and the CLI.

use std::path::Path;

use crate::cost::{StageCost, StaticCost, Transition};
use crate::policy::TeamPolicy;
use crate::prob::{FiniteSpace, Kernel, ProbVec};
use crate::spec::{DynTeamSpec, DynamicGameSpec, GameSpec, ObsModel, StaticGameSpec, TeamSpec};
use crate::statistic::StatisticMap;

pub const MF_MISMATCH: &str = include_str!("../fixtures/mf_mismatch.json");
pub const COORDINATION: &str = include_str!("../fixtures/coordination.json");
pub const SPREAD: &str = include_str!("../fixtures/spread.json");
pub const BROKEN: &str = include_str!("../fixtures/broken.json");
pub const COPY_ACTION: &str = include_str!("../fixtures/copy_action.json");
pub const DECOUPLED: &str = include_str!("../fixtures/decoupled.json");
pub const CROWD_AVOIDANCE: &str = include_str!("../fixtures/crowd_avoidance.json");
pub const ANTICORRELATED_MIXTURE: &str = include_str!("../fixtures/anticorrelated_mixture.json");

fn parse(text: &str) -> GameSpec {
    GameSpec::from_json_str(text, Path::new("<bundled>")).expect("bundled fixture parses")
}

fn parse_static(text: &str) -> StaticGameSpec {
    match parse(text) {
        GameSpec::Static(s) => s,
        GameSpec::Dynamic(_) => panic!("fixture is not static"),
    }
}

fn parse_dynamic(text: &str) -> DynamicGameSpec {
    match parse(text) {
        GameSpec::Dynamic(d) => d,
        GameSpec::Static(_) => panic!("fixture is not dynamic"),
    }
}

/// Team 1 tracks team 2's mean action, team 2 evades team 1's.
pub fn mf_mismatch() -> StaticGameSpec {
    parse_static(MF_MISMATCH)
}

/// Each team tracks its own mean action; the opponent is irrelevant.
pub fn coordination() -> StaticGameSpec {
    parse_static(COORDINATION)
}

/// Each DM prefers to be far from its own team's mean action.
pub fn spread() -> StaticGameSpec {
    parse_static(SPREAD)
}

/// Binary game with the same constant cost for both teams.
pub fn constant_static(value: f64) -> StaticGameSpec {
    let mut spec = coordination();
    spec.cost = [
        StaticCost::Constant { value },
        StaticCost::Constant { value },
    ];
    spec
}

/// State copies the chosen action; noiseless observation of the state;
/// stage cost is the indicator of state 1.
pub fn copy_action_dynamic(horizon: usize) -> DynamicGameSpec {
    let mut spec = parse_dynamic(COPY_ACTION);
    spec.horizon = horizon;
    spec
}

/// Statistic-free dynamics and costs with noisy observations.
pub fn decoupled() -> DynamicGameSpec {
    parse_dynamic(DECOUPLED)
}

/// Two-stage congestion game on two locations.
pub fn crowd_avoidance() -> DynamicGameSpec {
    parse_dynamic(CROWD_AVOIDANCE)
}

pub fn anticorrelated_mixture() -> TeamPolicy {
    serde_json::from_str(ANTICORRELATED_MIXTURE).expect("bundled policy parses")
}

/// One-stage dynamic game whose state is the static observation: the
/// initial kernel is the observation kernel, observations are noiseless and
/// the stage cost is the static cost evaluated on action statistics.
pub fn horizon_one_from_static(spec: &StaticGameSpec) -> DynamicGameSpec {
    let team = |i: usize| {
        let t: &TeamSpec = &spec.teams[i];
        let (ny, nu) = (t.obs_space.size, t.action_space.size);
        DynTeamSpec {
            state_space: FiniteSpace::new(ny),
            action_space: t.action_space.clone(),
            obs_space: FiniteSpace::new(ny),
            init_kernel: t.obs_kernel.clone(),
            obs_model: ObsModel::Fixed(Kernel::identity(ny)),
            transition: Transition::Table {
                probs: (0..ny)
                    .map(|x| vec![ProbVec::dirac(ny, x).into_weights(); nu])
                    .collect(),
            },
            stage_cost: StageCost::ActionCoupled {
                cost: spec.cost[i].clone(),
            },
            state_statistic: StatisticMap::Identity,
            action_statistic: t.statistic.clone(),
        }
    };
    DynamicGameSpec {
        world: spec.world.clone(),
        prior: spec.prior.clone(),
        horizon: 1,
        teams: [team(0), team(1)],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_fixtures_validate() {
        for s in [
            mf_mismatch(),
            coordination(),
            spread(),
            constant_static(3.0),
        ] {
            let r = crate::spec::validate_static_spec(&s);
            assert!(r.is_valid(), "{r}");
        }
        for d in [
            copy_action_dynamic(2),
            decoupled(),
            crowd_avoidance(),
            horizon_one_from_static(&mf_mismatch()),
        ] {
            let r = crate::spec::validate_dynamic_spec(&d);
            assert!(r.is_valid(), "{r}");
        }
        assert!(!parse(BROKEN).validate().is_valid());
        let p = anticorrelated_mixture();
        assert!(p.check(1, 2, 2).is_ok());
    }
}
