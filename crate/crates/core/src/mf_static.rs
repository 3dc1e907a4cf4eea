//! Representative-agent machinery for static games: mean-field action laws,
//! mean-field costs, best responses at fixed mean fields, the fixed-point
//! solver, a grid oracle and team exploitability.
//!
//! Mean fields are conditioned on the world state: under symmetric i.i.d.
//! play the empirical action measure of a team converges, given `omega`, to
//! `sum_y Q(y | omega) b(u | y)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::{
    self, argmin, initial_kernel, soft_argmin, Profile, ResponseMap, SolverConfig,
};
use crate::policy::BehavioralPolicy;
use crate::prob::{simplex_grid, steps_for, tv_distance, KahanSum, Kernel, ProbVec};
use crate::spec::StaticGameSpec;
use crate::statistic::StatValue;

/// Largest grid handled by the exhaustive searches.
pub const GRID_LIMIT: u128 = 10_000_000;

/// `lambda[team][omega]`: law of a representative DM's action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldProfile {
    pub lambda: [Vec<ProbVec>; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MFEquilibrium {
    pub policies: [BehavioralPolicy; 2],
    pub mean_fields: MeanFieldProfile,
    pub br_residual: [f64; 2],
    pub consistency_residual: [f64; 2],
    pub iterations: usize,
    pub converged: bool,
    /// Softmax temperature in force when the solver stopped.
    pub temperature: f64,
}

pub fn mean_field_action_law(
    spec: &StaticGameSpec,
    team: usize,
    b: &BehavioralPolicy,
) -> Vec<ProbVec> {
    let q = &spec.teams[team].obs_kernel;
    (0..spec.worlds())
        .map(|omega| {
            ProbVec::from_normalized(crate::prob::renormalize(
                b.push_forward(q.row(omega).weights()),
            ))
        })
        .collect()
}

pub fn mean_fields_of(spec: &StaticGameSpec, b: &[BehavioralPolicy; 2]) -> MeanFieldProfile {
    MeanFieldProfile {
        lambda: [
            mean_field_action_law(spec, 0, &b[0]),
            mean_field_action_law(spec, 1, &b[1]),
        ],
    }
}

fn world_stats(spec: &StaticGameSpec, mf: &MeanFieldProfile) -> Vec<[StatValue; 2]> {
    (0..spec.worlds())
        .map(|omega| spec.stat_values(mf.lambda[0][omega].weights(), mf.lambda[1][omega].weights()))
        .collect()
}

/// Unnormalized scores `S[y][u] = sum_omega prior(omega) Q(y|omega) c(omega, u, mf)`.
pub fn scores(spec: &StaticGameSpec, team: usize, mf: &MeanFieldProfile) -> Vec<Vec<f64>> {
    let stats = world_stats(spec, mf);
    let ny = spec.observations(team);
    let nu = spec.actions(team);
    let mut out = vec![vec![0.0; nu]; ny];
    for y in 0..ny {
        for u in 0..nu {
            let mut acc = KahanSum::new();
            for (omega, st) in stats.iter().enumerate() {
                let w = spec.prior[omega] * spec.obs_prob(team, omega, y);
                if w != 0.0 {
                    acc.add(w * spec.cost_at(team, omega, u, st));
                }
            }
            out[y][u] = acc.value();
        }
    }
    out
}

/// `sum_y sum_u b(u|y) S[y][u]`, accumulated as the row minimum plus the
/// excess over it so that constant scores are reproduced exactly.
fn policy_value(b: &Kernel, s: &[Vec<f64>]) -> f64 {
    let mut acc = KahanSum::new();
    for row in s {
        acc.add(argmin(row).1);
    }
    acc.add(excess(b, s));
    acc.value()
}

/// `sum_y sum_u b(u|y) (S[y][u] - min_u S[y][u])`, the best-response gap.
fn excess(b: &Kernel, s: &[Vec<f64>]) -> f64 {
    let mut acc = KahanSum::new();
    for (y, row) in s.iter().enumerate() {
        let min = argmin(row).1;
        for (u, v) in row.iter().enumerate() {
            let p = b.prob(y, u);
            if p != 0.0 {
                acc.add(p * (v - min));
            }
        }
    }
    acc.value()
}

/// Representative-DM cost of `b_self` with both mean fields held at `mf`.
pub fn mf_cost(
    spec: &StaticGameSpec,
    team: usize,
    b_self: &BehavioralPolicy,
    mf: &MeanFieldProfile,
) -> f64 {
    policy_value(b_self, &scores(spec, team, mf))
}

fn best_of_scores(s: &[Vec<f64>], actions: usize) -> (Kernel, f64) {
    let mut map = Vec::with_capacity(s.len());
    let mut value = KahanSum::new();
    for row in s {
        let (u, v) = argmin(row);
        map.push(u);
        value.add(v);
    }
    (Kernel::deterministic(&map, actions), value.value())
}

/// Deterministic best response at fixed mean fields; ties go to the lowest
/// action index.
pub fn best_response_fixed_mf(
    spec: &StaticGameSpec,
    team: usize,
    mf: &MeanFieldProfile,
) -> (BehavioralPolicy, f64) {
    best_of_scores(&scores(spec, team, mf), spec.actions(team))
}

/// `J(b, mf) - min_b' J(b', mf)` for each team, with `mf` generated by `b`.
pub fn br_gaps(spec: &StaticGameSpec, b: &[BehavioralPolicy; 2]) -> [f64; 2] {
    let mf = mean_fields_of(spec, b);
    let gap = |i: usize| excess(&b[i], &scores(spec, i, &mf));
    [gap(0), gap(1)]
}

struct StaticMap<'a> {
    spec: &'a StaticGameSpec,
}

impl StaticMap<'_> {
    fn kernels(x: &Profile) -> [BehavioralPolicy; 2] {
        [x[0][0].clone(), x[1][0].clone()]
    }
}

impl ResponseMap for StaticMap<'_> {
    fn response(&self, x: &Profile, tau: f64) -> Profile {
        let mf = mean_fields_of(self.spec, &Self::kernels(x));
        let respond = |i: usize| {
            let s = scores(self.spec, i, &mf);
            let rows = s
                .iter()
                .enumerate()
                .map(|(y, row)| {
                    let w: f64 = (0..self.spec.worlds())
                        .map(|o| self.spec.prior[o] * self.spec.obs_prob(i, o, y))
                        .sum();
                    if w > 0.0 {
                        let cond: Vec<f64> = row.iter().map(|v| v / w).collect();
                        soft_argmin(&cond, tau)
                    } else if tau == 0.0 {
                        soft_argmin(row, 0.0)
                    } else {
                        vec![1.0 / row.len() as f64; row.len()]
                    }
                })
                .collect();
            vec![Kernel::from_rows_unchecked(rows)]
        };
        [respond(0), respond(1)]
    }

    fn gaps(&self, x: &Profile) -> [f64; 2] {
        br_gaps(self.spec, &Self::kernels(x))
    }
}

/// Packages kernels with their mean fields and residuals.
pub fn equilibrium_at(
    spec: &StaticGameSpec,
    policies: [BehavioralPolicy; 2],
    iterations: usize,
    converged: bool,
    temperature: f64,
) -> MFEquilibrium {
    let mean_fields = mean_fields_of(spec, &policies);
    let br_residual = br_gaps(spec, &policies);
    let consistency_residual = consistency(spec, &policies, &mean_fields);
    MFEquilibrium {
        policies,
        mean_fields,
        br_residual,
        consistency_residual,
        iterations,
        converged,
        temperature,
    }
}

/// Largest TV distance, over world states, between declared mean fields and
/// those generated by the policies.
pub fn consistency(
    spec: &StaticGameSpec,
    policies: &[BehavioralPolicy; 2],
    mf: &MeanFieldProfile,
) -> [f64; 2] {
    let c = |i: usize| {
        mean_field_action_law(spec, i, &policies[i])
            .iter()
            .zip(&mf.lambda[i])
            .map(|(a, b)| tv_distance(a.weights(), b.weights()))
            .fold(0.0, f64::max)
    };
    [c(0), c(1)]
}

pub fn solve_mf_fixed_point(spec: &StaticGameSpec, cfg: &SolverConfig) -> Result<MFEquilibrium> {
    cfg.check()?;
    let init = |i: usize| -> Result<Vec<Kernel>> {
        Ok(vec![initial_kernel(
            &cfg.init,
            spec.observations(i),
            spec.actions(i),
            i as u64,
        )?])
    };
    let x = [init(0)?, init(1)?];
    let out = fixed_point::iterate(&StaticMap { spec }, x, cfg);
    let [k1, k2] = out.point;
    Ok(equilibrium_at(
        spec,
        [k1[0].clone(), k2[0].clone()],
        out.iterations,
        out.converged,
        out.temperature,
    ))
}

/// All kernels of a team whose rows lie on the simplex grid.
pub fn kernel_grid_len(obs: usize, actions: usize, steps: usize) -> u128 {
    crate::prob::simplex_grid_len(actions, steps).saturating_pow(obs as u32)
}

/// The `index`-th kernel of the grid (observation 0 most significant).
pub fn kernel_from_grid(rows: &[Vec<f64>], obs: usize, mut index: usize) -> Kernel {
    let mut picked = vec![0usize; obs];
    for y in (0..obs).rev() {
        picked[y] = index % rows.len();
        index /= rows.len();
    }
    Kernel::from_rows_unchecked(picked.into_iter().map(|i| rows[i].clone()).collect())
}

/// Gap allowance for a candidate within `resolution` (TV, per row) of the
/// best-response set: `resolution * sum_y (max_u S - min_u S)`.
fn slack(s: &[Vec<f64>], resolution: f64) -> f64 {
    resolution
        * s.iter()
            .map(|row| {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                max - argmin(row).1
            })
            .sum::<f64>()
}

/// Exhaustive search over pairs of grid kernels for approximate fixed
/// points: a candidate is a hit when each team's best-response gap at the
/// generated mean fields is within the slack of a `resolution` move.
pub fn grid_fixed_point_search(
    spec: &StaticGameSpec,
    resolution: f64,
) -> Result<Vec<MFEquilibrium>> {
    let steps = steps_for(resolution)?;
    let sizes = [0, 1].map(|i| kernel_grid_len(spec.observations(i), spec.actions(i), steps));
    let total = sizes[0].saturating_mul(sizes[1]);
    if total > GRID_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "mean-field grid",
            size: total,
            limit: GRID_LIMIT,
            hint: "use a coarser resolution",
        });
    }
    let rows = [0, 1].map(|i| simplex_grid(spec.actions(i), steps));
    let n2 = sizes[1] as usize;
    let hits: Vec<Vec<MFEquilibrium>> = (0..sizes[0] as usize)
        .into_par_iter()
        .map(|a| {
            let k1 = kernel_from_grid(&rows[0], spec.observations(0), a);
            let mut found = Vec::new();
            for b in 0..n2 {
                let k2 = kernel_from_grid(&rows[1], spec.observations(1), b);
                let pols = [k1.clone(), k2];
                let mf = mean_fields_of(spec, &pols);
                let ok = (0..2).all(|i| {
                    let s = scores(spec, i, &mf);
                    excess(&pols[i], &s) <= slack(&s, resolution) + 1e-12
                });
                if ok {
                    found.push(equilibrium_at(spec, pols, 0, true, 0.0));
                }
            }
            found
        })
        .collect();
    Ok(hits.into_iter().flatten().collect())
}

/// Single-linkage groups of `n` items: two items share a group when a
/// chain of items with pairwise distance at most `radius` connects them.
/// Groups are ordered by their first member.
pub fn single_linkage(
    n: usize,
    radius: f64,
    dist: impl Fn(usize, usize) -> f64,
) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (a, b) = (find(&mut parent, i), find(&mut parent, j));
            if a != b && dist(i, j) <= radius {
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Single-linkage clusters of hits by mean-field distance (max TV); each
/// cluster is represented by its smallest-gap member.
pub fn cluster_hits(hits: &[MFEquilibrium], radius: f64) -> Vec<MFEquilibrium> {
    single_linkage(hits.len(), radius, |i, j| {
        mean_field_distance(&hits[i].mean_fields, &hits[j].mean_fields)
    })
    .into_iter()
    .map(|g| {
        let best = g
            .into_iter()
            .reduce(|a, b| {
                if total_gap(&hits[b]) < total_gap(&hits[a]) {
                    b
                } else {
                    a
                }
            })
            .expect("nonempty group");
        hits[best].clone()
    })
    .collect()
}

fn total_gap(e: &MFEquilibrium) -> f64 {
    e.br_residual[0] + e.br_residual[1]
}

/// Max TV distance over teams and world states.
pub fn mean_field_distance(a: &MeanFieldProfile, b: &MeanFieldProfile) -> f64 {
    (0..2)
        .flat_map(|i| {
            a.lambda[i]
                .iter()
                .zip(&b.lambda[i])
                .map(|(p, q)| tv_distance(p.weights(), q.weights()))
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfExploitability {
    pub eps: [f64; 2],
    pub deviations: [BehavioralPolicy; 2],
}

/// Cost of team `i` playing `g` with its own mean field generated by `g`
/// and the opponent's mean field held at `other`.
pub fn self_consistent_cost(
    spec: &StaticGameSpec,
    team: usize,
    g: &Kernel,
    other: &[ProbVec],
) -> f64 {
    let own = mean_field_action_law(spec, team, g);
    let lambda = if team == 0 {
        [own, other.to_vec()]
    } else {
        [other.to_vec(), own]
    };
    mf_cost(spec, team, g, &MeanFieldProfile { lambda })
}

/// Team exploitability in the mean-field game: the deviating team's kernel
/// moves its own mean field, so deviations are searched over a kernel grid.
pub fn mf_exploitability(
    spec: &StaticGameSpec,
    b1: &BehavioralPolicy,
    b2: &BehavioralPolicy,
    resolution: f64,
) -> Result<MfExploitability> {
    if !(resolution > 0.0 && resolution <= 0.05) {
        return Err(Error::InvalidConfig(format!(
            "resolution {resolution} must lie in (0, 0.05]"
        )));
    }
    let steps = steps_for(resolution)?;
    let pols = [b1.clone(), b2.clone()];
    let mut eps = [0.0; 2];
    let mut devs = pols.clone();
    for i in 0..2 {
        let size = kernel_grid_len(spec.observations(i), spec.actions(i), steps);
        if size > GRID_LIMIT {
            return Err(Error::BudgetExceeded {
                what: "deviation grid",
                size,
                limit: GRID_LIMIT,
                hint: "use a coarser resolution",
            });
        }
        let other = mean_field_action_law(spec, 1 - i, &pols[1 - i]);
        let current = self_consistent_cost(spec, i, &pols[i], &other);
        let rows = simplex_grid(spec.actions(i), steps);
        let obs = spec.observations(i);
        let values: Vec<f64> = (0..size as usize)
            .into_par_iter()
            .map(|idx| self_consistent_cost(spec, i, &kernel_from_grid(&rows, obs, idx), &other))
            .collect();
        let (best, value) = argmin(&values);
        eps[i] = current - value;
        devs[i] = kernel_from_grid(&rows, obs, best);
    }
    Ok(MfExploitability {
        eps,
        deviations: devs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::prob::FiniteSpace;

    fn bern(p: f64) -> Kernel {
        Kernel::from_rows(vec![vec![1.0 - p, p]]).unwrap()
    }

    fn mf_single(m1: f64, m2: f64) -> MeanFieldProfile {
        MeanFieldProfile {
            lambda: [
                vec![ProbVec::new(vec![1.0 - m1, m1]).unwrap()],
                vec![ProbVec::new(vec![1.0 - m2, m2]).unwrap()],
            ],
        }
    }

    #[test]
    fn action_law_examples() {
        let mut spec = fixtures::mf_mismatch();
        let k = Kernel::deterministic(&[1], 2);
        assert_eq!(
            mean_field_action_law(&spec, 0, &k)[0].weights(),
            &[0.0, 1.0]
        );

        spec.teams[0].obs_space = FiniteSpace::new(2);
        spec.teams[0].obs_kernel = Kernel::from_rows(vec![vec![0.5, 0.5]]).unwrap();
        let id = Kernel::identity(2);
        assert_eq!(
            mean_field_action_law(&spec, 0, &id)[0].weights(),
            &[0.5, 0.5]
        );

        spec.teams[0].obs_kernel = Kernel::from_rows(vec![vec![0.9, 0.1]]).unwrap();
        let law = mean_field_action_law(&spec, 0, &id);
        assert!((law[0][0] - 0.9).abs() < 1e-15 && (law[0][1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn mf_cost_examples() {
        let c = fixtures::constant_static(3.0);
        assert_eq!(mf_cost(&c, 0, &bern(0.3), &mf_single(0.2, 0.9)), 3.0);
        let spec = fixtures::mf_mismatch();
        assert_eq!(mf_cost(&spec, 0, &bern(1.0), &mf_single(0.3, 1.0)), 0.0);
        assert!((mf_cost(&spec, 0, &bern(0.5), &mf_single(0.3, 0.5)) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn best_response_examples() {
        let c = fixtures::constant_static(3.0);
        let (k, v) = best_response_fixed_mf(&c, 0, &mf_single(0.5, 0.5));
        assert_eq!(k, Kernel::deterministic(&[0], 2));
        assert_eq!(v, 3.0);

        let spec = fixtures::mf_mismatch();
        let (k, v) = best_response_fixed_mf(&spec, 0, &mf_single(0.0, 0.8));
        assert_eq!(k, Kernel::deterministic(&[1], 2));
        assert!((v - 0.04).abs() < 1e-15);

        let (k, v) = best_response_fixed_mf(&spec, 0, &mf_single(0.0, 0.5));
        assert_eq!(k, Kernel::deterministic(&[0], 2));
        assert_eq!(v, 0.25);
    }

    #[test]
    fn solver_on_constant_cost_stops_at_once() {
        let spec = fixtures::constant_static(3.0);
        let eq = solve_mf_fixed_point(&spec, &SolverConfig::default()).unwrap();
        assert!(eq.converged);
        assert_eq!(eq.iterations, 1);
        assert_eq!(eq.br_residual, [0.0, 0.0]);
    }

    #[test]
    fn solver_on_mismatch_finds_interior_point() {
        let spec = fixtures::mf_mismatch();
        let cfg = SolverConfig {
            init: crate::fixed_point::InitPolicy::Random(11),
            ..SolverConfig::default()
        };
        let eq = solve_mf_fixed_point(&spec, &cfg).unwrap();
        assert!(eq.converged, "{eq:?}");
        for i in 0..2 {
            assert!((eq.mean_fields.lambda[i][0][1] - 0.5).abs() < 1e-3);
            assert!(eq.br_residual[i] <= 1e-6 && eq.br_residual[i] >= -1e-12);
        }
    }

    #[test]
    fn coordination_stays_at_pure_start() {
        let spec = fixtures::coordination();
        let cfg = SolverConfig {
            init: crate::fixed_point::InitPolicy::Action(0),
            ..SolverConfig::default()
        };
        let eq = solve_mf_fixed_point(&spec, &cfg).unwrap();
        assert!(eq.converged);
        assert_eq!(eq.policies[0], Kernel::deterministic(&[0], 2));
        assert_eq!(eq.br_residual, [0.0, 0.0]);
        assert_eq!(eq.consistency_residual, [0.0, 0.0]);
    }

    #[test]
    fn invalid_config_is_rejected() {
        let spec = fixtures::mf_mismatch();
        let cfg = SolverConfig {
            damping: 1.5,
            ..SolverConfig::default()
        };
        assert!(matches!(
            solve_mf_fixed_point(&spec, &cfg),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn grid_search_examples() {
        let spec = fixtures::coordination();
        let hits = grid_fixed_point_search(&spec, 0.01).unwrap();
        let clusters = cluster_hits(&hits, 0.02);
        let mut centers: Vec<(f64, f64)> = clusters
            .iter()
            .map(|e| (e.mean_fields.lambda[0][0][1], e.mean_fields.lambda[1][0][1]))
            .collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected: Vec<(f64, f64)> = [0.0, 0.5, 1.0]
            .iter()
            .flat_map(|&a| [0.0, 0.5, 1.0].map(|b| (a, b)))
            .collect();
        assert_eq!(centers, expected);

        let c = fixtures::constant_static(1.0);
        assert_eq!(grid_fixed_point_search(&c, 0.1).unwrap().len(), 121);
        assert!(grid_fixed_point_search(&spec, 1e-4).is_err());
    }

    #[test]
    fn exploitability_examples() {
        let c = fixtures::constant_static(2.0);
        let e = mf_exploitability(&c, &bern(0.3), &bern(0.6), 0.01).unwrap();
        assert_eq!(e.eps, [0.0, 0.0]);

        let spec = fixtures::coordination();
        let e = mf_exploitability(&spec, &bern(0.5), &bern(0.5), 0.01).unwrap();
        for i in 0..2 {
            assert!((e.eps[i] - 0.25).abs() < 1e-12);
            assert!(e.deviations[i].is_deterministic());
        }
    }

    #[test]
    fn best_response_beats_random_policies() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for spec in [
            fixtures::mf_mismatch(),
            fixtures::coordination(),
            fixtures::spread(),
        ] {
            for _ in 0..100 {
                let mf = mf_single(rng.gen(), rng.gen());
                let (_, best) = best_response_fixed_mf(&spec, 0, &mf);
                let b = bern(rng.gen());
                assert!(best <= mf_cost(&spec, 0, &b, &mf) + 1e-12);
            }
        }
    }
}
