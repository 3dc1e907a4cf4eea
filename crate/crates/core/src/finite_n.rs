//! The finite-N static game: exact and Monte Carlo costs, exhaustive team
//! best responses, epsilon-Nash certificates and team-size sweeps.
//!
//! A DM's cost depends on the other DMs only through the empirical action
//! measures, so the expected team cost given the world state is a function
//! of the two teams' action-count vectors. Exact evaluation builds, per
//! world state, the law of each team's count vector (a dynamic program over
//! DMs, mixing over common-randomness components) and sums the cost table
//! against the product of the two laws.

use std::collections::{BTreeMap, HashMap};

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fixed_point::argmin;
use crate::policy::{
    is_exchangeable, sample_profile, sample_row, symmetrize, tuples, DetPolicy, TeamPolicy,
};
use crate::prob::{simplex_grid, KahanSum, Kernel};
use crate::rng::{dm_stream, stream_rng};
use crate::spec::StaticGameSpec;
use crate::statistic::StatValue;

/// Budget on the dynamic-programming work of one exact evaluation.
pub const EXACT_WORK_LIMIT: u128 = 100_000_000;
/// Budget on the number of deterministic profiles in a team best response.
pub const BR_PROFILE_LIMIT: u128 = 10_000_000;
/// Budget on the tuple enumeration of the rational reference evaluator.
pub const RATIONAL_LIMIT: u128 = 1_000_000;
/// Multiplier of the 99% normal confidence interval.
pub const Z99: f64 = 2.58;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteGameInstance {
    pub spec: StaticGameSpec,
    pub team_sizes: [usize; 2],
}

impl FiniteGameInstance {
    pub fn new(spec: StaticGameSpec, team_sizes: [usize; 2]) -> Result<Self> {
        if team_sizes.contains(&0) {
            return Err(Error::InvalidConfig("team sizes must be >= 1".into()));
        }
        Ok(FiniteGameInstance { spec, team_sizes })
    }

    fn check_policy(&self, team: usize, p: &TeamPolicy) -> Result<()> {
        p.check(
            self.spec.observations(team),
            self.spec.actions(team),
            self.team_sizes[team],
        )
    }
}

/// Action-count vectors of one team with their empirical measures and
/// statistic values.
struct CountSpace {
    n: usize,
    vectors: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    stats: Vec<StatValue>,
}

fn compositions(n: usize, parts: usize) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; parts];
    fn rec(i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
        if i + 1 == cur.len() {
            cur[i] = left;
            out.push(cur.clone());
            return;
        }
        for c in (0..=left).rev() {
            cur[i] = c;
            rec(i + 1, left - c, cur, out);
        }
    }
    rec(0, n as u32, &mut cur, &mut out);
    out
}

fn binomial(n: u128, k: u128) -> u128 {
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc.saturating_mul(n - i) / (i + 1);
    }
    acc
}

fn count_space_len(n: usize, actions: usize) -> u128 {
    binomial((n + actions - 1) as u128, (actions - 1) as u128)
}

impl CountSpace {
    fn new(spec: &StaticGameSpec, team: usize, n: usize) -> Self {
        let vectors = compositions(n, spec.actions(team));
        let index = vectors
            .iter()
            .enumerate()
            .map(|(i, v)| (v.clone(), i))
            .collect();
        let stats = vectors
            .iter()
            .map(|v| {
                let m: Vec<f64> = v.iter().map(|&c| c as f64 / n as f64).collect();
                spec.teams[team]
                    .statistic
                    .apply_slice(&m)
                    .expect("validated statistic")
            })
            .collect();
        CountSpace {
            n,
            vectors,
            index,
            stats,
        }
    }

    fn len(&self) -> usize {
        self.vectors.len()
    }

    /// Law of the count vector when DM `k` draws its action from `laws[k]`
    /// independently.
    fn law<'a>(&self, laws: impl Iterator<Item = &'a [f64]>) -> Vec<f64> {
        let parts = self.vectors[0].len();
        let mut cur: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
        cur.insert(vec![0; parts], 1.0);
        for a in laws {
            let mut next: BTreeMap<Vec<u32>, f64> = BTreeMap::new();
            for (c, p) in &cur {
                for (u, q) in a.iter().enumerate() {
                    if *q > 0.0 {
                        let mut c2 = c.clone();
                        c2[u] += 1;
                        *next.entry(c2).or_insert(0.0) += p * q;
                    }
                }
            }
            cur = next;
        }
        let mut out = vec![0.0; self.len()];
        for (c, p) in cur {
            out[self.index[&c]] += p;
        }
        out
    }
}

/// Per-world-state action law of each DM under one component.
fn dm_action_laws(
    spec: &StaticGameSpec,
    team: usize,
    kernels: &[Kernel],
    omega: usize,
) -> Vec<Vec<f64>> {
    let q = spec.teams[team].obs_kernel.row(omega);
    kernels
        .iter()
        .map(|k| k.push_forward(q.weights()))
        .collect()
}

/// `law[omega][count]` of a team's count vector under a team policy.
fn team_count_laws(
    inst: &FiniteGameInstance,
    team: usize,
    p: &TeamPolicy,
    space: &CountSpace,
) -> Vec<Vec<f64>> {
    let spec = &inst.spec;
    let comps = p.components(space.n, spec.actions(team));
    (0..spec.worlds())
        .map(|omega| {
            let mut acc = vec![KahanSum::new(); space.len()];
            for (w, kernels) in &comps {
                let laws = dm_action_laws(spec, team, kernels, omega);
                let dist = space.law(laws.iter().map(Vec::as_slice));
                for (a, d) in acc.iter_mut().zip(dist) {
                    a.add(w * d);
                }
            }
            acc.iter().map(KahanSum::value).collect()
        })
        .collect()
}

/// Team cost table `f[omega][n1][n2] = (1/N_i) sum_u n_i[u] c_i(omega, u, ...)`.
struct CostTable {
    values: Vec<Vec<Vec<f64>>>,
    min: f64,
}

fn cost_table(spec: &StaticGameSpec, team: usize, spaces: &[CountSpace; 2]) -> CostTable {
    let own = &spaces[team];
    let mut min = f64::INFINITY;
    let values = (0..spec.worlds())
        .map(|omega| {
            (0..spaces[0].len())
                .map(|a| {
                    (0..spaces[1].len())
                        .map(|b| {
                            let stats = [spaces[0].stats[a].clone(), spaces[1].stats[b].clone()];
                            let counts = &own.vectors[if team == 0 { a } else { b }];
                            let mut acc = KahanSum::new();
                            for (u, &c) in counts.iter().enumerate() {
                                if c > 0 {
                                    acc.add(c as f64 * spec.cost_at(team, omega, u, &stats));
                                }
                            }
                            let v = acc.value() / own.n as f64;
                            min = min.min(v);
                            v
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    CostTable { values, min }
}

/// Expected team cost as a function of the team's own count vector, with
/// the opponent's count law integrated out: `h[omega][n_own]`, stored as
/// excess over `table.min` so constant costs stay exact.
fn own_excess(table: &CostTable, team: usize, opp_laws: &[Vec<f64>]) -> Vec<Vec<f64>> {
    table
        .values
        .iter()
        .zip(opp_laws)
        .map(|(grid, opp)| {
            let own_len = if team == 0 { grid.len() } else { grid[0].len() };
            (0..own_len)
                .map(|o| {
                    let mut acc = KahanSum::new();
                    for (j, q) in opp.iter().enumerate() {
                        if *q != 0.0 {
                            let f = if team == 0 { grid[o][j] } else { grid[j][o] };
                            acc.add(q * (f - table.min));
                        }
                    }
                    acc.value()
                })
                .collect()
        })
        .collect()
}

fn evaluate(spec: &StaticGameSpec, min: f64, excess: &[Vec<f64>], own_laws: &[Vec<f64>]) -> f64 {
    let mut acc = KahanSum::new();
    for (omega, (h, p)) in excess.iter().zip(own_laws).enumerate() {
        let mut inner = KahanSum::new();
        for (hv, pv) in h.iter().zip(p) {
            if *pv != 0.0 {
                inner.add(pv * hv);
            }
        }
        acc.add(spec.prior[omega] * inner.value());
    }
    min + acc.value()
}

fn exact_work(inst: &FiniteGameInstance, comps: [usize; 2]) -> u128 {
    let spec = &inst.spec;
    let s = [0, 1].map(|i| count_space_len(inst.team_sizes[i], spec.actions(i)));
    let dp: u128 = (0..2)
        .map(|i| comps[i] as u128 * inst.team_sizes[i] as u128 * s[i] * spec.actions(i) as u128)
        .sum::<u128>()
        .saturating_mul(spec.worlds() as u128);
    let table = (spec.worlds() as u128)
        .saturating_mul(s[0])
        .saturating_mul(s[1])
        .saturating_mul(spec.actions(0).max(spec.actions(1)) as u128);
    dp.saturating_add(table)
}

fn component_count(p: &TeamPolicy) -> usize {
    match p {
        TeamPolicy::Mixture { profiles } => profiles.len(),
        _ => 1,
    }
}

struct Prepared {
    spaces: [CountSpace; 2],
    laws: [Vec<Vec<f64>>; 2],
}

fn prepare(inst: &FiniteGameInstance, p: [&TeamPolicy; 2]) -> Result<Prepared> {
    inst.check_policy(0, p[0])?;
    inst.check_policy(1, p[1])?;
    let work = exact_work(inst, [component_count(p[0]), component_count(p[1])]);
    if work > EXACT_WORK_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "exact cost evaluation",
            size: work,
            limit: EXACT_WORK_LIMIT,
            hint: "use the Monte Carlo estimator (mc_cost)",
        });
    }
    let spaces = [
        CountSpace::new(&inst.spec, 0, inst.team_sizes[0]),
        CountSpace::new(&inst.spec, 1, inst.team_sizes[1]),
    ];
    let laws = [
        team_count_laws(inst, 0, p[0], &spaces[0]),
        team_count_laws(inst, 1, p[1], &spaces[1]),
    ];
    Ok(Prepared { spaces, laws })
}

/// Exact expected per-DM average cost of `team` under the two policies.
pub fn exact_cost(
    inst: &FiniteGameInstance,
    p1: &TeamPolicy,
    p2: &TeamPolicy,
    team: usize,
) -> Result<f64> {
    let prep = prepare(inst, [p1, p2])?;
    let table = cost_table(&inst.spec, team, &prep.spaces);
    let h = own_excess(&table, team, &prep.laws[1 - team]);
    Ok(evaluate(&inst.spec, table.min, &h, &prep.laws[team]))
}

/// Reference evaluator: enumerates world states, observation tuples,
/// mixture components and action tuples, accumulating in exact rational
/// arithmetic. Only for tiny instances.
pub fn exact_cost_rational(
    inst: &FiniteGameInstance,
    p1: &TeamPolicy,
    p2: &TeamPolicy,
    team: usize,
) -> Result<f64> {
    let spec = &inst.spec;
    inst.check_policy(0, p1)?;
    inst.check_policy(1, p2)?;
    let [n1, n2] = inst.team_sizes;
    let (ny, nu) = (
        [spec.observations(0), spec.observations(1)],
        [spec.actions(0), spec.actions(1)],
    );
    let size = ((ny[0] * nu[0]) as u128).pow(n1 as u32)
        * ((ny[1] * nu[1]) as u128).pow(n2 as u32)
        * spec.worlds() as u128
        * (component_count(p1) * component_count(p2)) as u128;
    if size > RATIONAL_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "rational enumeration",
            size,
            limit: RATIONAL_LIMIT,
            hint: "use exact_cost",
        });
    }
    let q = |f: f64| BigRational::from_float(f).expect("finite value");
    let comps = [p1.components(n1, nu[0]), p2.components(n2, nu[1])];
    let mut total = BigRational::zero();
    for omega in 0..spec.worlds() {
        let prior = q(spec.prior[omega]);
        if prior.is_zero() {
            continue;
        }
        for ys1 in tuples(ny[0], n1) {
            for ys2 in tuples(ny[1], n2) {
                let mut p_obs = prior.clone();
                for &y in &ys1 {
                    p_obs *= q(spec.obs_prob(0, omega, y));
                }
                for &y in &ys2 {
                    p_obs *= q(spec.obs_prob(1, omega, y));
                }
                if p_obs.is_zero() {
                    continue;
                }
                for (w1, k1) in &comps[0] {
                    for (w2, k2) in &comps[1] {
                        for us1 in tuples(nu[0], n1) {
                            let mut p1u = q(*w1);
                            for k in 0..n1 {
                                p1u *= q(k1[k].prob(ys1[k], us1[k]));
                            }
                            if p1u.is_zero() {
                                continue;
                            }
                            for us2 in tuples(nu[1], n2) {
                                let mut p = p_obs.clone() * &p1u * q(*w2);
                                for k in 0..n2 {
                                    p *= q(k2[k].prob(ys2[k], us2[k]));
                                }
                                if p.is_zero() {
                                    continue;
                                }
                                let e1 =
                                    crate::prob::emp_measure(&us1, &spec.teams[0].action_space)?;
                                let e2 =
                                    crate::prob::emp_measure(&us2, &spec.teams[1].action_space)?;
                                let us = if team == 0 { &us1 } else { &us2 };
                                let mut avg = BigRational::zero();
                                for &u in us {
                                    avg += q(spec.cost_eval_static(team, omega, u, &e1, &e2)?);
                                }
                                avg /= BigRational::from_integer(BigInt::from(us.len()));
                                total += p * avg;
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(total.to_f64().unwrap_or(f64::NAN))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub ci_halfwidth: f64,
    pub reps: usize,
}

/// Sample mean and 99% half-width of per-episode values.
pub fn summarize(values: &[f64]) -> McEstimate {
    let n = values.len();
    let mean_acc: KahanSum = values.iter().copied().collect();
    let mean = mean_acc.value() / n as f64;
    let var = if n > 1 {
        let ss: KahanSum = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        ss.value() / (n - 1) as f64
    } else {
        0.0
    };
    McEstimate {
        estimate: mean,
        ci_halfwidth: Z99 * var.sqrt() / (n as f64).sqrt(),
        reps: n,
    }
}

/// Simulates one episode; returns both teams' per-DM average costs.
fn episode(inst: &FiniteGameInstance, p: [&TeamPolicy; 2], seed: u64, rep: u64) -> [f64; 2] {
    let spec = &inst.spec;
    let mut rng0 = stream_rng(seed, rep, 0);
    let omega = sample_row(&spec.prior, &mut rng0);
    let mut counts: [Vec<u32>; 2] = [vec![0; spec.actions(0)], vec![0; spec.actions(1)]];
    for j in 0..2 {
        let n = inst.team_sizes[j];
        let mixture_maps = match p[j] {
            TeamPolicy::Mixture { .. } => Some(sample_profile(p[j], n, &mut rng0)),
            _ => None,
        };
        let q = spec.teams[j].obs_kernel.row(omega);
        for k in 0..n {
            let mut rng = stream_rng(seed, rep, dm_stream(j, k));
            let y = sample_row(q, &mut rng);
            let u = match (&mixture_maps, p[j]) {
                (Some(maps), _) => maps[k].act(y),
                (None, TeamPolicy::SymmetricIid { kernel }) => sample_row(kernel.row(y), &mut rng),
                (None, TeamPolicy::Product { kernels }) => sample_row(kernels[k].row(y), &mut rng),
                (None, TeamPolicy::Mixture { .. }) => unreachable!(),
            };
            counts[j][u] += 1;
        }
    }
    let m = |j: usize| -> Vec<f64> {
        counts[j]
            .iter()
            .map(|&c| c as f64 / inst.team_sizes[j] as f64)
            .collect()
    };
    let stats = spec.stat_values(&m(0), &m(1));
    [0, 1].map(|i| {
        let mut acc = KahanSum::new();
        for (u, &c) in counts[i].iter().enumerate() {
            if c > 0 {
                acc.add(c as f64 * spec.cost_at(i, omega, u, &stats));
            }
        }
        acc.value() / inst.team_sizes[i] as f64
    })
}

fn episodes(
    inst: &FiniteGameInstance,
    p: [&TeamPolicy; 2],
    reps: usize,
    seed: u64,
) -> Vec<[f64; 2]> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| episode(inst, p, seed, rep))
        .collect()
}

/// Monte Carlo estimate of [`exact_cost`] with a 99% confidence half-width.
pub fn mc_cost(
    inst: &FiniteGameInstance,
    p1: &TeamPolicy,
    p2: &TeamPolicy,
    team: usize,
    reps: usize,
    seed: u64,
) -> Result<McEstimate> {
    check_reps(reps)?;
    inst.check_policy(0, p1)?;
    inst.check_policy(1, p2)?;
    let values: Vec<f64> = episodes(inst, [p1, p2], reps, seed)
        .into_iter()
        .map(|v| v[team])
        .collect();
    Ok(summarize(&values))
}

pub(crate) fn check_reps(reps: usize) -> Result<()> {
    if reps < 100 {
        return Err(Error::InvalidConfig(format!("reps {reps} must be >= 100")));
    }
    Ok(())
}

/// Actions of `n` DMs of `team` playing kernel `b` i.i.d. at world `omega`.
pub fn sample_team_actions(
    spec: &StaticGameSpec,
    team: usize,
    b: &Kernel,
    n: usize,
    omega: usize,
    seed: u64,
    rep: u64,
) -> Vec<usize> {
    let q = spec.teams[team].obs_kernel.row(omega);
    (0..n)
        .map(|k| {
            let mut rng = stream_rng(seed, rep, dm_stream(team, k));
            let y = sample_row(q, &mut rng);
            sample_row(b.row(y), &mut rng)
        })
        .collect()
}

fn profile_count(inst: &FiniteGameInstance, team: usize) -> u128 {
    let spec = &inst.spec;
    (spec.actions(team) as u128)
        .checked_pow((spec.observations(team) * inst.team_sizes[team]) as u32)
        .unwrap_or(u128::MAX)
}

/// The `index`-th deterministic profile in lexicographic order (DM 0 and
/// observation 0 most significant).
fn profile_at(index: u128, n: usize, obs: usize, actions: usize) -> Vec<DetPolicy> {
    let mut digits = vec![0usize; n * obs];
    let mut rest = index;
    for d in digits.iter_mut().rev() {
        *d = (rest % actions as u128) as usize;
        rest /= actions as u128;
    }
    digits.chunks(obs).map(|c| DetPolicy(c.to_vec())).collect()
}

/// Exhaustive team best response over deterministic per-DM profiles; ties
/// go to the lexicographically first profile.
pub fn team_best_response_exact(
    inst: &FiniteGameInstance,
    opponent: &TeamPolicy,
    team: usize,
) -> Result<(Vec<DetPolicy>, f64)> {
    let spec = &inst.spec;
    let count = profile_count(inst, team);
    if count > BR_PROFILE_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "team best response profiles",
            size: count,
            limit: BR_PROFILE_LIMIT,
            hint: "certify with the Monte Carlo mode",
        });
    }
    inst.check_policy(1 - team, opponent)?;
    let n = inst.team_sizes[team];
    let (obs, actions) = (spec.observations(team), spec.actions(team));
    let work = exact_work(inst, [1, component_count(opponent)]);
    if work > EXACT_WORK_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "exact cost evaluation",
            size: work,
            limit: EXACT_WORK_LIMIT,
            hint: "certify with the Monte Carlo mode",
        });
    }
    let spaces = [
        CountSpace::new(spec, 0, inst.team_sizes[0]),
        CountSpace::new(spec, 1, inst.team_sizes[1]),
    ];
    let opp_laws = team_count_laws(inst, 1 - team, opponent, &spaces[1 - team]);
    let table = cost_table(spec, team, &spaces);
    let h = own_excess(&table, team, &opp_laws);

    let value_of = |index: u128| {
        let maps = profile_at(index, n, obs, actions);
        let kernels: Vec<Kernel> = maps.iter().map(|m| m.to_kernel(actions)).collect();
        let own: Vec<Vec<f64>> = (0..spec.worlds())
            .map(|omega| {
                let laws = dm_action_laws(spec, team, &kernels, omega);
                spaces[team].law(laws.iter().map(Vec::as_slice))
            })
            .collect();
        evaluate(spec, table.min, &h, &own)
    };
    const CHUNK: u128 = 4096;
    let chunks = count.div_ceil(CHUNK);
    let best: Vec<(u128, f64)> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut best = (c * CHUNK, f64::INFINITY);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(count) {
                let v = value_of(idx);
                if v < best.1 {
                    best = (idx, v);
                }
            }
            best
        })
        .collect();
    let mut winner = best[0];
    for b in &best[1..] {
        if b.1 < winner.1 {
            winner = *b;
        }
    }
    Ok((profile_at(winner.0, n, obs, actions), winner.1))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Exact,
    MonteCarlo,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Exact => "exact",
            Method::MonteCarlo => "monte-carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpsilonReport {
    pub team_sizes: [usize; 2],
    pub eps: [f64; 2],
    /// Expected cost of each team under the certified profile.
    pub current_cost: [f64; 2],
    /// Expected cost of each team's best deviation found.
    pub deviation_cost: [f64; 2],
    pub best_deviations: [TeamPolicy; 2],
    pub method: Method,
    /// 0 for exact certificates.
    pub ci_halfwidth: f64,
}

/// Exact certificate: each team's gain from its exhaustive best response.
pub fn epsilon_ne_certify(
    inst: &FiniteGameInstance,
    p1: &TeamPolicy,
    p2: &TeamPolicy,
) -> Result<EpsilonReport> {
    let pols = [p1, p2];
    let mut eps = [0.0; 2];
    let mut current = [0.0; 2];
    let mut dev_cost = [0.0; 2];
    let mut devs = Vec::with_capacity(2);
    for i in 0..2 {
        current[i] = exact_cost(inst, p1, p2, i)?;
        let (profile, value) = team_best_response_exact(inst, pols[1 - i], i)?;
        dev_cost[i] = value;
        eps[i] = current[i] - value;
        devs.push(TeamPolicy::pure(profile));
    }
    let [d1, d2]: [TeamPolicy; 2] = devs.try_into().expect("two teams");
    Ok(EpsilonReport {
        team_sizes: inst.team_sizes,
        eps,
        current_cost: current,
        deviation_cost: dev_cost,
        best_deviations: [d1, d2],
        method: Method::Exact,
        ci_halfwidth: 0.0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepOptions {
    /// Episodes per evaluation when exact certification is out of budget.
    pub reps: usize,
    pub seed: u64,
    /// Grid steps per kernel row for symmetric deviations in Monte Carlo mode.
    pub grid_steps: usize,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            reps: 1000,
            seed: 0,
            grid_steps: 10,
        }
    }
}

/// Whether exact certification of `p` fits the work budgets.
pub fn exact_feasible(inst: &FiniteGameInstance, p: [&TeamPolicy; 2]) -> bool {
    (0..2).all(|i| profile_count(inst, i) <= BR_PROFILE_LIMIT)
        && exact_work(inst, [component_count(p[0]), component_count(p[1])]) <= EXACT_WORK_LIMIT
}

/// Lower bound on each team's exploitability from restricted deviations
/// (symmetric grid kernels and single-DM deterministic switches), evaluated
/// by Monte Carlo with common random numbers.
pub fn epsilon_monte_carlo(
    inst: &FiniteGameInstance,
    p1: &TeamPolicy,
    p2: &TeamPolicy,
    opts: &SweepOptions,
) -> Result<EpsilonReport> {
    check_reps(opts.reps)?;
    inst.check_policy(0, p1)?;
    inst.check_policy(1, p2)?;
    let spec = &inst.spec;
    let pols = [p1, p2];
    let base = episodes(inst, pols, opts.reps, opts.seed);
    let mut eps = [0.0; 2];
    let mut current = [0.0; 2];
    let mut dev_cost = [0.0; 2];
    let mut ci = 0.0f64;
    let mut devs = vec![pols[0].clone(), pols[1].clone()];
    for i in 0..2 {
        let base_i: Vec<f64> = base.iter().map(|v| v[i]).collect();
        current[i] = summarize(&base_i).estimate;
        let n = inst.team_sizes[i];
        let (obs, actions) = (spec.observations(i), spec.actions(i));
        let mut candidates = Vec::new();
        let rows = simplex_grid(actions, opts.grid_steps.max(1));
        let grid = crate::mf_static::kernel_grid_len(obs, actions, opts.grid_steps.max(1));
        for idx in 0..grid.min(4096) as usize {
            candidates.push(TeamPolicy::symmetric(crate::mf_static::kernel_from_grid(
                &rows, obs, idx,
            )));
        }
        let others = pols[i].dm_kernel(0, actions);
        let maps = (actions as u128).pow(obs as u32).min(4096) as usize;
        for m in 0..maps {
            let map = profile_at(m as u128, 1, obs, actions).remove(0);
            let mut kernels = vec![others.clone(); n];
            kernels[0] = map.to_kernel(actions);
            candidates.push(TeamPolicy::Product { kernels });
        }
        // best deviation by mean paired difference
        // not deviating is always available, so epsilon is never negative
        let stay = McEstimate {
            estimate: 0.0,
            ci_halfwidth: 0.0,
            reps: opts.reps,
        };
        let mut best: Option<(f64, McEstimate, TeamPolicy)> =
            Some((current[i], stay, pols[i].clone()));
        for cand in candidates {
            let mut pair = pols;
            pair[i] = &cand;
            let dev = episodes(inst, pair, opts.reps, opts.seed);
            let diffs: Vec<f64> = base_i.iter().zip(&dev).map(|(b, d)| b - d[i]).collect();
            let s = summarize(&diffs);
            if best.as_ref().is_none_or(|b| s.estimate > b.1.estimate) {
                let dv: Vec<f64> = dev.iter().map(|d| d[i]).collect();
                best = Some((summarize(&dv).estimate, s, cand));
            }
        }
        let (value, s, cand) = best.expect("at least one candidate");
        eps[i] = s.estimate;
        dev_cost[i] = value;
        ci = ci.max(s.ci_halfwidth);
        devs[i] = cand;
    }
    let [d1, d2]: [TeamPolicy; 2] = devs.try_into().expect("two teams");
    Ok(EpsilonReport {
        team_sizes: inst.team_sizes,
        eps,
        current_cost: current,
        deviation_cost: dev_cost,
        best_deviations: [d1, d2],
        method: Method::MonteCarlo,
        ci_halfwidth: ci,
    })
}

/// Certifies the symmetric i.i.d. deployment of mean-field kernels at each
/// team size: exactly when within budget, otherwise by restricted Monte
/// Carlo deviations.
pub fn sweep_team_sizes(
    spec: &StaticGameSpec,
    kernels: &[Kernel; 2],
    sizes: &[[usize; 2]],
    opts: &SweepOptions,
) -> Result<Vec<EpsilonReport>> {
    let p1 = TeamPolicy::symmetric(kernels[0].clone());
    let p2 = TeamPolicy::symmetric(kernels[1].clone());
    sizes
        .iter()
        .map(|&n| {
            let inst = FiniteGameInstance::new(spec.clone(), n)?;
            if exact_feasible(&inst, [&p1, &p2]) {
                epsilon_ne_certify(&inst, &p1, &p2)
            } else {
                epsilon_monte_carlo(&inst, &p1, &p2, opts)
            }
        })
        .collect()
}

/// Team sizes `(N, ratio * N)` for each `N`.
pub fn sizes_with_ratio(ns: &[usize], ratio: usize) -> Vec<[usize; 2]> {
    ns.iter().map(|&n| [n, n * ratio]).collect()
}

/// Best-response value over all deterministic profiles and over the
/// symmetrizations of those profiles, against an exchangeable opponent.
pub fn check_exchangeable_br_value(
    inst: &FiniteGameInstance,
    opponent: &TeamPolicy,
    team: usize,
) -> Result<(f64, f64)> {
    if !is_exchangeable(opponent, 1e-12) {
        return Err(Error::InvalidPolicy(
            "opponent policy is not exchangeable".into(),
        ));
    }
    let (_, v_all) = team_best_response_exact(inst, opponent, team)?;
    let spec = &inst.spec;
    let n = inst.team_sizes[team];
    let (obs, actions) = (spec.observations(team), spec.actions(team));
    let count = profile_count(inst, team);
    let values: Vec<f64> = (0..count)
        .into_par_iter()
        .map(|idx| -> Result<f64> {
            let sym = symmetrize(&TeamPolicy::pure(profile_at(idx, n, obs, actions)), n)?;
            if team == 0 {
                exact_cost(inst, &sym, opponent, 0)
            } else {
                exact_cost(inst, opponent, &sym, 1)
            }
        })
        .collect::<Result<_>>()?;
    Ok((v_all, argmin(&values).1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::prob::ProbVec;

    fn det(maps: &[&[usize]]) -> TeamPolicy {
        TeamPolicy::pure(maps.iter().map(|m| DetPolicy(m.to_vec())).collect())
    }

    fn uniform_iid() -> TeamPolicy {
        TeamPolicy::symmetric(Kernel::constant(1, ProbVec::uniform(2)))
    }

    #[test]
    fn compositions_are_complete() {
        assert_eq!(compositions(2, 2), vec![vec![2, 0], vec![1, 1], vec![0, 2]]);
        assert_eq!(compositions(3, 3).len() as u128, count_space_len(3, 3));
    }

    #[test]
    fn exact_cost_examples() {
        let c = FiniteGameInstance::new(fixtures::constant_static(3.0), [3, 2]).unwrap();
        let p = TeamPolicy::symmetric(Kernel::from_rows(vec![vec![0.3, 0.7]]).unwrap());
        assert_eq!(exact_cost(&c, &p, &uniform_iid(), 0).unwrap(), 3.0);
        assert_eq!(exact_cost(&c, &p, &uniform_iid(), 1).unwrap(), 3.0);

        let inst = FiniteGameInstance::new(fixtures::coordination(), [2, 2]).unwrap();
        let zeros = det(&[&[0], &[0]]);
        assert_eq!(exact_cost(&inst, &zeros, &zeros, 0).unwrap(), 0.0);
        let split = det(&[&[0], &[1]]);
        assert_eq!(exact_cost(&inst, &split, &zeros, 0).unwrap(), 0.25);
        assert_eq!(exact_cost_rational(&inst, &split, &zeros, 0).unwrap(), 0.25);
    }

    #[test]
    fn mc_examples() {
        let c = FiniteGameInstance::new(fixtures::constant_static(3.0), [2, 2]).unwrap();
        let e = mc_cost(&c, &uniform_iid(), &uniform_iid(), 0, 200, 1).unwrap();
        assert_eq!(e.estimate, 3.0);
        assert_eq!(e.ci_halfwidth, 0.0);

        let inst = FiniteGameInstance::new(fixtures::coordination(), [2, 2]).unwrap();
        let exact = exact_cost(&inst, &uniform_iid(), &uniform_iid(), 0).unwrap();
        assert!((exact - 0.125).abs() < 1e-15);
        let e = mc_cost(&inst, &uniform_iid(), &uniform_iid(), 0, 2000, 9).unwrap();
        assert!((e.estimate - exact).abs() <= e.ci_halfwidth, "{e:?}");
        assert!(mc_cost(&inst, &uniform_iid(), &uniform_iid(), 0, 99, 9).is_err());
    }

    #[test]
    fn best_response_examples() {
        let c = FiniteGameInstance::new(fixtures::constant_static(3.0), [2, 2]).unwrap();
        let (profile, v) = team_best_response_exact(&c, &uniform_iid(), 0).unwrap();
        assert_eq!(v, 3.0);
        assert_eq!(profile, vec![DetPolicy(vec![0]), DetPolicy(vec![0])]);

        let inst = FiniteGameInstance::new(fixtures::coordination(), [2, 2]).unwrap();
        let (profile, v) = team_best_response_exact(&inst, &uniform_iid(), 0).unwrap();
        assert_eq!(v, 0.0);
        assert_eq!(profile, vec![DetPolicy(vec![0]), DetPolicy(vec![0])]);

        let inst = FiniteGameInstance::new(fixtures::spread(), [2, 2]).unwrap();
        let (profile, v) = team_best_response_exact(&inst, &uniform_iid(), 0).unwrap();
        assert_eq!(v, 0.5);
        assert_eq!(profile, vec![DetPolicy(vec![0]), DetPolicy(vec![1])]);
    }

    #[test]
    fn certificates() {
        let c = FiniteGameInstance::new(fixtures::constant_static(3.0), [2, 3]).unwrap();
        let r = epsilon_ne_certify(&c, &uniform_iid(), &uniform_iid()).unwrap();
        assert_eq!(r.eps, [0.0, 0.0]);

        let inst = FiniteGameInstance::new(fixtures::coordination(), [3, 3]).unwrap();
        let zeros = det(&[&[0], &[0], &[0]]);
        let r = epsilon_ne_certify(&inst, &zeros, &zeros).unwrap();
        assert_eq!(r.eps, [0.0, 0.0]);
        assert_eq!(r.method, Method::Exact);
    }

    #[test]
    fn exchangeable_br_values_agree() {
        let inst = FiniteGameInstance::new(fixtures::spread(), [2, 2]).unwrap();
        let (a, b) = check_exchangeable_br_value(&inst, &uniform_iid(), 0).unwrap();
        assert_eq!((a, b), (0.5, 0.5));
        let c = FiniteGameInstance::new(fixtures::constant_static(3.0), [2, 2]).unwrap();
        assert_eq!(
            check_exchangeable_br_value(&c, &uniform_iid(), 1).unwrap(),
            (3.0, 3.0)
        );
        assert!(check_exchangeable_br_value(&inst, &det(&[&[0], &[1]]), 0).is_err());
    }

    #[test]
    fn sweep_on_coordination_is_zero() {
        let spec = fixtures::coordination();
        let k = Kernel::deterministic(&[0], 2);
        let rows = sweep_team_sizes(
            &spec,
            &[k.clone(), k],
            &sizes_with_ratio(&[2, 3, 4], 1),
            &SweepOptions::default(),
        )
        .unwrap();
        assert_eq!(rows.len(), 3);
        for r in rows {
            assert_eq!(r.eps, [0.0, 0.0]);
        }
    }

    #[test]
    fn large_teams_fall_back_to_monte_carlo() {
        let spec = fixtures::coordination();
        let k = Kernel::constant(1, ProbVec::uniform(2));
        let opts = SweepOptions {
            reps: 200,
            seed: 3,
            grid_steps: 4,
        };
        let rows = sweep_team_sizes(&spec, &[k.clone(), k], &[[30, 30]], &opts).unwrap();
        assert_eq!(rows[0].method, Method::MonteCarlo);
        // uniform play pays about 0.25; coordinating on one action pays 0
        assert!(rows[0].eps[0] > 0.2);
        assert!(rows[0].ci_halfwidth >= 0.0);
    }

    #[test]
    fn rational_oracle_matches_on_noisy_instance() {
        let mut spec = fixtures::mf_mismatch();
        spec.world = crate::prob::FiniteSpace::new(2);
        spec.prior = ProbVec::new(vec![0.3, 0.7]).unwrap();
        for t in &mut spec.teams {
            t.obs_space = crate::prob::FiniteSpace::new(2);
            t.obs_kernel = Kernel::from_rows(vec![vec![0.8, 0.2], vec![0.25, 0.75]]).unwrap();
        }
        let inst = FiniteGameInstance::new(spec, [2, 2]).unwrap();
        let p1 =
            TeamPolicy::symmetric(Kernel::from_rows(vec![vec![0.6, 0.4], vec![0.1, 0.9]]).unwrap());
        let p2 = det(&[&[1, 0], &[0, 0]]);
        for team in 0..2 {
            let a = exact_cost(&inst, &p1, &p2, team).unwrap();
            let b = exact_cost_rational(&inst, &p1, &p2, team).unwrap();
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}
