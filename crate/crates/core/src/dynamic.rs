//! Dynamic mean-field games: mean-field flows, best responses against a
//! fixed flow, the equilibrium solver, finite-N simulation and
//! epsilon-Nash estimates.
//!
//! DMs use memoryless observation-feedback policies, one kernel per stage.
//! Flows are conditioned on the world state: for each team, stage and world
//! state, the joint law of the representative DM's (state, action).

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cost::StageStats;
use crate::error::{Error, Result};
use crate::finite_n::{check_reps, summarize, McEstimate, Method};
use crate::fixed_point::{
    argmin, initial_kernel, iterate, soft_argmin, Profile, ResponseMap, SolverConfig,
};
use crate::mf_static::{kernel_from_grid, kernel_grid_len, single_linkage};
use crate::policy::sample_row;
use crate::prob::{renormalize, simplex_grid, steps_for, tv_distance, KahanSum, Kernel};
use crate::rng::{dm_stream, stream_rng};
use crate::spec::{validate_dynamic_spec, DynamicGameSpec};

/// One observation-to-action kernel per stage.
pub type StagePolicy = Vec<Kernel>;

/// Budget on the deterministic stage policies enumerated by a best response.
pub const DYN_BR_LIMIT: u128 = 1_000_000;
/// Budget on candidate pairs of the dynamic grid search.
pub const DYN_GRID_LIMIT: u128 = 10_000_000;
/// Budget on joint configurations visited by one exact finite-N evaluation.
pub const DYN_EXACT_WORK_LIMIT: u128 = 10_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFlow {
    /// `joint[x][u]`.
    pub joint: Vec<Vec<f64>>,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

/// `flows[team][t][omega]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowProfile {
    pub flows: [Vec<Vec<StageFlow>>; 2],
}

impl FlowProfile {
    pub fn stats(&self, spec: &DynamicGameSpec, t: usize, omega: usize) -> StageStats {
        let f = |j: usize| &self.flows[j][t][omega];
        spec.stage_stats([&f(0).state, &f(1).state], [&f(0).action, &f(1).action])
    }

    fn all_stats(&self, spec: &DynamicGameSpec) -> Vec<Vec<StageStats>> {
        (0..spec.horizon)
            .map(|t| (0..spec.worlds()).map(|w| self.stats(spec, t, w)).collect())
            .collect()
    }

    /// Max TV over teams, stages and world states of the joint laws.
    pub fn distance(&self, other: &FlowProfile) -> f64 {
        self.max_tv(other, |f| f.joint.concat())
    }

    /// Max TV of the state marginals.
    pub fn state_distance(&self, other: &FlowProfile) -> f64 {
        self.max_tv(other, |f| f.state.clone())
    }

    fn max_tv(&self, other: &FlowProfile, part: impl Fn(&StageFlow) -> Vec<f64>) -> f64 {
        let mut d = 0.0f64;
        for j in 0..2 {
            for (a, b) in self.flows[j].iter().zip(&other.flows[j]) {
                for (p, q) in a.iter().zip(b) {
                    d = d.max(tv_distance(&part(p), &part(q)));
                }
            }
        }
        d
    }
}

/// Checks shapes and stochasticity of a team's stage policy.
pub fn check_stage_policy(spec: &DynamicGameSpec, team: usize, pol: &[Kernel]) -> Result<()> {
    if pol.len() != spec.horizon {
        return Err(Error::DimensionMismatch {
            what: "stage policy length",
            got: pol.len(),
            expected: spec.horizon,
        });
    }
    for (t, k) in pol.iter().enumerate() {
        if k.sources() != spec.observations(team) || k.targets() != spec.actions(team) {
            return Err(Error::InvalidPolicy(format!(
                "team {} stage {t}: kernel is {}x{}, expected {}x{}",
                team + 1,
                k.sources(),
                k.targets(),
                spec.observations(team),
                spec.actions(team)
            )));
        }
        if let Some(msg) = k.issue() {
            return Err(Error::InvalidPolicy(format!(
                "team {} stage {t}: {msg}",
                team + 1
            )));
        }
    }
    Ok(())
}

/// `pi[x][u] = sum_y O_t(y | x) gamma(u | y)`.
fn action_given_state(
    spec: &DynamicGameSpec,
    team: usize,
    t: usize,
    gamma: &Kernel,
) -> Vec<Vec<f64>> {
    let obs = spec.teams[team].obs_model.at(t);
    (0..spec.states(team))
        .map(|x| gamma.push_forward(obs.row(x).weights()))
        .collect()
}

fn next_state_law(
    spec: &DynamicGameSpec,
    team: usize,
    t: usize,
    joint: &[Vec<f64>],
    stats: &StageStats,
) -> Vec<f64> {
    let nx = spec.states(team);
    let mut out = vec![0.0; nx];
    let mut buf = vec![0.0; nx];
    for (x, row) in joint.iter().enumerate() {
        for (u, &p) in row.iter().enumerate() {
            if p > 0.0 {
                spec.teams[team]
                    .transition
                    .next_law_into(team, t, x, u, stats, &mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o += p * b;
                }
            }
        }
    }
    renormalize(out)
}

fn stage_flow(mu: &[f64], pi: &[Vec<f64>]) -> StageFlow {
    let joint: Vec<Vec<f64>> = mu
        .iter()
        .zip(pi)
        .map(|(m, row)| row.iter().map(|p| m * p).collect())
        .collect();
    let nu = pi.first().map_or(0, |r| r.len());
    let action = (0..nu).map(|u| joint.iter().map(|r| r[u]).sum()).collect();
    StageFlow {
        joint,
        state: mu.to_vec(),
        action,
    }
}

/// Forward propagation of both teams' state-action laws under the given
/// stage policies, with the statistics of each stage fed back into the
/// transitions.
pub fn propagate_mf_flow(spec: &DynamicGameSpec, pols: &[StagePolicy; 2]) -> FlowProfile {
    let horizon = spec.horizon;
    let mut flows: [Vec<Vec<StageFlow>>; 2] = [Vec::new(), Vec::new()];
    for f in flows.iter_mut() {
        *f = (0..horizon)
            .map(|_| Vec::with_capacity(spec.worlds()))
            .collect();
    }
    let pis: [Vec<Vec<Vec<f64>>>; 2] = [0, 1].map(|j| {
        (0..horizon)
            .map(|t| action_given_state(spec, j, t, &pols[j][t]))
            .collect()
    });
    for omega in 0..spec.worlds() {
        let mut mu: [Vec<f64>; 2] =
            [0, 1].map(|j| spec.teams[j].init_kernel.row(omega).weights().to_vec());
        for t in 0..horizon {
            let sf = [0, 1].map(|j| stage_flow(&mu[j], &pis[j][t]));
            if t + 1 < horizon {
                let stats =
                    spec.stage_stats([&sf[0].state, &sf[1].state], [&sf[0].action, &sf[1].action]);
                mu = [0, 1].map(|j| next_state_law(spec, j, t, &sf[j].joint, &stats));
            }
            let [a, b] = sf;
            flows[0][t].push(a);
            flows[1][t].push(b);
        }
    }
    FlowProfile { flows }
}

/// Cost of a representative DM of `team` using `pol` while the statistics
/// follow `stats[t][omega]`.
fn cost_under(
    spec: &DynamicGameSpec,
    team: usize,
    pol: &[Kernel],
    stats: &[Vec<StageStats>],
) -> f64 {
    let mut total = KahanSum::new();
    for omega in 0..spec.worlds() {
        let prior = spec.prior.weights()[omega];
        if prior == 0.0 {
            continue;
        }
        let mut mu = spec.teams[team].init_kernel.row(omega).weights().to_vec();
        let mut acc = KahanSum::new();
        for t in 0..spec.horizon {
            let pi = action_given_state(spec, team, t, &pol[t]);
            let sf = stage_flow(&mu, &pi);
            let st = &stats[t][omega];
            for (x, row) in sf.joint.iter().enumerate() {
                for (u, &p) in row.iter().enumerate() {
                    if p > 0.0 {
                        acc.add(p * spec.stage_cost(team, omega, x, u, st));
                    }
                }
            }
            if t + 1 < spec.horizon {
                mu = next_state_law(spec, team, t, &sf.joint, st);
            }
        }
        total.add(prior * acc.value());
    }
    total.value()
}

/// Expected total cost of a DM of `team` playing `pols[team]` while the
/// mean fields follow `flows`.
pub fn mf_dynamic_cost(
    spec: &DynamicGameSpec,
    team: usize,
    pols: &[StagePolicy; 2],
    flows: &FlowProfile,
) -> f64 {
    cost_under(spec, team, &pols[team], &flows.all_stats(spec))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicBestResponse {
    pub policy: StagePolicy,
    pub value: f64,
    /// False when the policy space was too large and coordinate descent
    /// (a local optimum) was used instead.
    pub exhaustive: bool,
}

/// Number of deterministic stage policies of a team.
pub fn det_stage_policy_count(spec: &DynamicGameSpec, team: usize) -> u128 {
    let digits = (spec.observations(team) * spec.horizon) as u32;
    (spec.actions(team) as u128)
        .checked_pow(digits)
        .unwrap_or(u128::MAX)
}

/// Stage policy from its digits: stage 0 first, observations in order.
fn det_from_digits(spec: &DynamicGameSpec, team: usize, digits: &[usize]) -> StagePolicy {
    let ny = spec.observations(team);
    digits
        .chunks(ny)
        .map(|map| Kernel::deterministic(map, spec.actions(team)))
        .collect()
}

/// The `index`-th deterministic stage policy in lexicographic order.
pub fn det_stage_policy(spec: &DynamicGameSpec, team: usize, mut index: u128) -> StagePolicy {
    let n = spec.observations(team) * spec.horizon;
    let base = spec.actions(team) as u128;
    let mut digits = vec![0usize; n];
    for d in digits.iter_mut().rev() {
        *d = (index % base) as usize;
        index /= base;
    }
    det_from_digits(spec, team, &digits)
}

/// Best deterministic stage policy of `team` against fixed statistics.
/// Exhaustive when within [`DYN_BR_LIMIT`] (ties to the lexicographically
/// first policy); otherwise coordinate descent from `starts` when
/// `allow_local`, or a budget error.
fn best_response_under(
    spec: &DynamicGameSpec,
    team: usize,
    stats: &[Vec<StageStats>],
    allow_local: bool,
    starts: &[Vec<usize>],
) -> Result<DynamicBestResponse> {
    let count = det_stage_policy_count(spec, team);
    if count <= DYN_BR_LIMIT {
        const CHUNK: u128 = 4096;
        let chunks = count.div_ceil(CHUNK) as u64;
        let best = (0..chunks)
            .into_par_iter()
            .map(|c| {
                let lo = c as u128 * CHUNK;
                let hi = (lo + CHUNK).min(count);
                let mut best = (f64::INFINITY, lo);
                for idx in lo..hi {
                    let v = cost_under(spec, team, &det_stage_policy(spec, team, idx), stats);
                    if v < best.0 {
                        best = (v, idx);
                    }
                }
                best
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((f64::INFINITY, 0u128), |a, b| if b.0 < a.0 { b } else { a });
        return Ok(DynamicBestResponse {
            policy: det_stage_policy(spec, team, best.1),
            value: best.0,
            exhaustive: true,
        });
    }
    if !allow_local {
        return Err(Error::BudgetExceeded {
            what: "deterministic stage policies",
            size: count,
            limit: DYN_BR_LIMIT,
            hint: "allow coordinate descent for a local best response",
        });
    }
    let n = spec.observations(team) * spec.horizon;
    let nu = spec.actions(team);
    let mut best: Option<DynamicBestResponse> = None;
    let zeros = vec![0usize; n];
    for start in std::iter::once(&zeros).chain(starts) {
        let mut digits = start.clone();
        let mut value = cost_under(spec, team, &det_from_digits(spec, team, &digits), stats);
        for _pass in 0..1000 {
            let mut improved = false;
            for pos in 0..n {
                for u in 0..nu {
                    if u == digits[pos] {
                        continue;
                    }
                    let old = digits[pos];
                    digits[pos] = u;
                    let v = cost_under(spec, team, &det_from_digits(spec, team, &digits), stats);
                    if v < value {
                        value = v;
                        improved = true;
                    } else {
                        digits[pos] = old;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        if best.as_ref().is_none_or(|b| value < b.value) {
            best = Some(DynamicBestResponse {
                policy: det_from_digits(spec, team, &digits),
                value,
                exhaustive: false,
            });
        }
    }
    Ok(best.expect("at least one start"))
}

/// Best response of a representative DM of `team` when the mean fields
/// follow `flows`.
pub fn dynamic_best_response_fixed_flow(
    spec: &DynamicGameSpec,
    team: usize,
    flows: &FlowProfile,
    allow_local: bool,
) -> Result<DynamicBestResponse> {
    best_response_under(spec, team, &flows.all_stats(spec), allow_local, &[])
}

/// Most likely action per (stage, observation), as descent start digits.
fn rounded_digits(pol: &[Kernel]) -> Vec<usize> {
    pol.iter()
        .flat_map(|k| {
            k.rows()
                .iter()
                .map(|r| argmin(&r.weights().iter().map(|w| -w).collect::<Vec<_>>()).0)
        })
        .collect()
}

/// Stage-wise Q-values `Q[t][y][u]` of `pol` and observation weights
/// `w[t][y]`, against fixed statistics.
fn q_values(
    spec: &DynamicGameSpec,
    team: usize,
    pol: &[Kernel],
    stats: &[Vec<StageStats>],
) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<f64>>) {
    let (nx, ny, nu, horizon) = (
        spec.states(team),
        spec.observations(team),
        spec.actions(team),
        spec.horizon,
    );
    let mut q = vec![vec![vec![0.0; nu]; ny]; horizon];
    let mut w = vec![vec![0.0; ny]; horizon];
    let pis: Vec<Vec<Vec<f64>>> = (0..horizon)
        .map(|t| action_given_state(spec, team, t, &pol[t]))
        .collect();
    let mut buf = vec![0.0; nx];
    for omega in 0..spec.worlds() {
        let prior = spec.prior.weights()[omega];
        if prior == 0.0 {
            continue;
        }
        // forward state laws
        let mut mus = Vec::with_capacity(horizon);
        let mut mu = spec.teams[team].init_kernel.row(omega).weights().to_vec();
        for t in 0..horizon {
            mus.push(mu.clone());
            if t + 1 < horizon {
                let sf = stage_flow(&mu, &pis[t]);
                mu = next_state_law(spec, team, t, &sf.joint, &stats[t][omega]);
            }
        }
        // backward: qx[x][u] at stage t, then v[x]
        let mut v_next = vec![0.0; nx];
        for t in (0..horizon).rev() {
            let st = &stats[t][omega];
            let obs = spec.teams[team].obs_model.at(t);
            let mut v = vec![0.0; nx];
            for x in 0..nx {
                let mut qx = vec![0.0; nu];
                for (u, qv) in qx.iter_mut().enumerate() {
                    let mut c = spec.stage_cost(team, omega, x, u, st);
                    if t + 1 < horizon {
                        spec.teams[team]
                            .transition
                            .next_law_into(team, t, x, u, st, &mut buf);
                        c += buf.iter().zip(&v_next).map(|(p, vn)| p * vn).sum::<f64>();
                    }
                    *qv = c;
                }
                v[x] = pis[t][x].iter().zip(&qx).map(|(p, c)| p * c).sum();
                let mass = prior * mus[t][x];
                if mass > 0.0 {
                    for y in 0..ny {
                        let m = mass * obs.prob(x, y);
                        if m > 0.0 {
                            w[t][y] += m;
                            for u in 0..nu {
                                q[t][y][u] += m * qx[u];
                            }
                        }
                    }
                }
            }
            v_next = v;
        }
    }
    (q, w)
}

struct DynMap<'a> {
    spec: &'a DynamicGameSpec,
}

impl DynMap<'_> {
    fn stage_policies(x: &Profile) -> [StagePolicy; 2] {
        [x[0].clone(), x[1].clone()]
    }
}

impl ResponseMap for DynMap<'_> {
    fn response(&self, x: &Profile, tau: f64) -> Profile {
        let pols = Self::stage_policies(x);
        let stats = propagate_mf_flow(self.spec, &pols).all_stats(self.spec);
        [0, 1].map(|i| {
            let (q, w) = q_values(self.spec, i, &pols[i], &stats);
            q.iter()
                .zip(&w)
                .map(|(qt, wt)| {
                    let rows = qt
                        .iter()
                        .zip(wt)
                        .map(|(row, &wy)| {
                            if wy > 0.0 {
                                let s: Vec<f64> = row.iter().map(|v| v / wy).collect();
                                soft_argmin(&s, tau)
                            } else {
                                vec![1.0 / row.len() as f64; row.len()]
                            }
                        })
                        .collect();
                    Kernel::from_rows_unchecked(rows)
                })
                .collect()
        })
    }

    fn gaps(&self, x: &Profile) -> [f64; 2] {
        let pols = Self::stage_policies(x);
        let stats = propagate_mf_flow(self.spec, &pols).all_stats(self.spec);
        [0, 1].map(|i| {
            let own = cost_under(self.spec, i, &pols[i], &stats);
            match best_response_under(self.spec, i, &stats, true, &[rounded_digits(&pols[i])]) {
                Ok(br) => own - br.value,
                Err(_) => f64::INFINITY,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicMFEquilibrium {
    pub policies: [StagePolicy; 2],
    pub flows: FlowProfile,
    /// Each team's cost minus its best-response value against the flows.
    pub br_residual: [f64; 2],
    /// Max TV between the declared flows and the flows the policies generate.
    pub consistency_residual: f64,
    pub iterations: usize,
    pub converged: bool,
    pub temperature: f64,
    /// False when a best response was only a local optimum.
    pub br_exhaustive: bool,
}

/// Packages policies with their flows and residuals.
pub fn dynamic_equilibrium_at(
    spec: &DynamicGameSpec,
    policies: [StagePolicy; 2],
    iterations: usize,
    converged: bool,
    temperature: f64,
) -> Result<DynamicMFEquilibrium> {
    let flows = propagate_mf_flow(spec, &policies);
    let stats = flows.all_stats(spec);
    let mut residual = [0.0; 2];
    let mut exhaustive = true;
    for i in 0..2 {
        let own = cost_under(spec, i, &policies[i], &stats);
        let br = best_response_under(spec, i, &stats, true, &[rounded_digits(&policies[i])])?;
        exhaustive &= br.exhaustive;
        residual[i] = own - br.value;
    }
    let consistency_residual = propagate_mf_flow(spec, &policies).distance(&flows);
    Ok(DynamicMFEquilibrium {
        policies,
        flows,
        br_residual: residual,
        consistency_residual,
        iterations,
        converged,
        temperature,
        br_exhaustive: exhaustive,
    })
}

/// Damped smoothed best-response iteration on stage policies. Smoothed
/// responses are softmaxes of stage-wise Q-values of the current policy;
/// convergence is judged on exact best-response gaps.
pub fn solve_dynamic_mf_fixed_point(
    spec: &DynamicGameSpec,
    cfg: &SolverConfig,
) -> Result<DynamicMFEquilibrium> {
    cfg.check()?;
    let report = validate_dynamic_spec(spec);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    let mut x: Profile = [Vec::new(), Vec::new()];
    for (i, xi) in x.iter_mut().enumerate() {
        for t in 0..spec.horizon {
            let salt = (i * spec.horizon + t) as u64;
            xi.push(initial_kernel(
                &cfg.init,
                spec.observations(i),
                spec.actions(i),
                salt,
            )?);
        }
    }
    let out = iterate(&DynMap { spec }, x, cfg);
    let [a, b] = out.point;
    dynamic_equilibrium_at(spec, [a, b], out.iterations, out.converged, out.temperature)
}

/// Whether the final stage's actions affect no cost (so its kernel is
/// irrelevant to every team's value).
fn final_stage_irrelevant(spec: &DynamicGameSpec) -> bool {
    spec.teams.iter().all(|t| !t.stage_cost.uses_actions())
}

/// Grid search over stage policies for approximate dynamic equilibria. A
/// candidate is a hit when each team's gap is at most
/// `resolution * horizon * cost_bound`, the most a `resolution` move of all
/// kernels can change a team's value. When no cost reads actions, the final
/// stage is fixed to the uniform kernel.
pub fn dynamic_grid_fixed_point_search(
    spec: &DynamicGameSpec,
    resolution: f64,
) -> Result<Vec<DynamicMFEquilibrium>> {
    let report = validate_dynamic_spec(spec);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    let steps = steps_for(resolution)?;
    let prune = final_stage_irrelevant(spec);
    let stage_sizes = |i: usize| -> Vec<u128> {
        (0..spec.horizon)
            .map(|t| {
                if prune && t + 1 == spec.horizon {
                    1
                } else {
                    kernel_grid_len(spec.observations(i), spec.actions(i), steps)
                }
            })
            .collect()
    };
    let sizes = [stage_sizes(0), stage_sizes(1)];
    let counts = [0, 1].map(|i| sizes[i].iter().fold(1u128, |a, &b| a.saturating_mul(b)));
    let total = counts[0].saturating_mul(counts[1]);
    if total > DYN_GRID_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "dynamic mean-field grid",
            size: total,
            limit: DYN_GRID_LIMIT,
            hint: "use a coarser resolution",
        });
    }
    for i in 0..2 {
        if det_stage_policy_count(spec, i) > DYN_BR_LIMIT {
            return Err(Error::BudgetExceeded {
                what: "deterministic stage policies",
                size: det_stage_policy_count(spec, i),
                limit: DYN_BR_LIMIT,
                hint: "grid search needs exhaustive best responses",
            });
        }
    }
    let rows = [0, 1].map(|i| simplex_grid(spec.actions(i), steps));
    let policy = |i: usize, mut idx: u128| -> StagePolicy {
        let mut out = vec![Kernel::identity(1); spec.horizon];
        for t in (0..spec.horizon).rev() {
            let size = sizes[i][t];
            let k = (idx % size) as usize;
            idx /= size;
            out[t] = if size == 1 {
                let (ny, nu) = (spec.observations(i), spec.actions(i));
                Kernel::from_rows_unchecked(vec![vec![1.0 / nu as f64; nu]; ny])
            } else {
                kernel_from_grid(&rows[i], spec.observations(i), k)
            };
        }
        out
    };
    let bounds = report.cost_bounds;
    let slack = [0, 1].map(|i| resolution * spec.horizon as f64 * bounds[i] + 1e-12);
    let hits: Vec<Vec<DynamicMFEquilibrium>> = (0..counts[0])
        .into_par_iter()
        .map(|a| -> Result<Vec<DynamicMFEquilibrium>> {
            let p1 = policy(0, a);
            let mut found = Vec::new();
            for b in 0..counts[1] {
                let pols = [p1.clone(), policy(1, b)];
                let stats = propagate_mf_flow(spec, &pols).all_stats(spec);
                let mut ok = true;
                for i in 0..2 {
                    let own = cost_under(spec, i, &pols[i], &stats);
                    let br = best_response_under(spec, i, &stats, false, &[])?;
                    if own - br.value > slack[i] {
                        ok = false;
                        break;
                    }
                }
                if ok {
                    found.push(dynamic_equilibrium_at(spec, pols, 0, true, 0.0)?);
                }
            }
            Ok(found)
        })
        .collect::<Result<_>>()?;
    Ok(hits.into_iter().flatten().collect())
}

/// Single-linkage clusters of hits by state-flow distance; each cluster is
/// represented by its smallest-gap member.
pub fn cluster_dynamic_hits(
    hits: &[DynamicMFEquilibrium],
    radius: f64,
) -> Vec<DynamicMFEquilibrium> {
    let gap = |e: &DynamicMFEquilibrium| e.br_residual[0] + e.br_residual[1];
    single_linkage(hits.len(), radius, |i, j| {
        hits[i].flows.state_distance(&hits[j].flows)
    })
    .into_iter()
    .map(|g| {
        let best = g
            .into_iter()
            .reduce(|a, b| if gap(&hits[b]) < gap(&hits[a]) { b } else { a })
            .expect("nonempty group");
        hits[best].clone()
    })
    .collect()
}

/// Policy of a whole team in the finite-N dynamic game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DynTeamPolicy {
    /// Every DM uses the same stage policy, randomizing independently.
    Symmetric { stages: StagePolicy },
    /// One stage policy per DM.
    PerDm { dms: Vec<StagePolicy> },
}

impl DynTeamPolicy {
    pub fn stage_kernel(&self, dm: usize, t: usize) -> &Kernel {
        match self {
            DynTeamPolicy::Symmetric { stages } => &stages[t],
            DynTeamPolicy::PerDm { dms } => &dms[dm][t],
        }
    }

    pub fn check(&self, spec: &DynamicGameSpec, team: usize, n: usize) -> Result<()> {
        match self {
            DynTeamPolicy::Symmetric { stages } => check_stage_policy(spec, team, stages),
            DynTeamPolicy::PerDm { dms } => {
                if dms.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "per-DM stage policies",
                        got: dms.len(),
                        expected: n,
                    });
                }
                dms.iter()
                    .try_for_each(|p| check_stage_policy(spec, team, p))
            }
        }
    }
}

/// One simulated episode: `states[team][t][dm]`, `actions[team][t][dm]`
/// and each team's per-DM average total cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub omega: usize,
    pub states: [Vec<Vec<usize>>; 2],
    pub actions: [Vec<Vec<usize>>; 2],
    pub cost: [f64; 2],
}

fn frequencies(items: &[usize], size: usize) -> Vec<f64> {
    let mut f = vec![0.0; size];
    for &i in items {
        f[i] += 1.0;
    }
    let n = items.len() as f64;
    f.iter_mut().for_each(|v| *v /= n);
    f
}

/// Simulates one episode of the finite-N dynamic game. Each DM draws from
/// its own random stream, so the episode is reproducible from
/// `(seed, rep)` alone.
pub fn simulate_episode(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: [&DynTeamPolicy; 2],
    seed: u64,
    rep: u64,
) -> Episode {
    let mut rng0 = stream_rng(seed, rep, 0);
    let omega = sample_row(&spec.prior, &mut rng0);
    let mut rngs: [Vec<_>; 2] = [0, 1].map(|j| {
        (0..sizes[j])
            .map(|k| stream_rng(seed, rep, dm_stream(j, k)))
            .collect()
    });
    let mut x: [Vec<usize>; 2] = [0, 1].map(|j| {
        let init = spec.teams[j].init_kernel.row(omega);
        rngs[j].iter_mut().map(|r| sample_row(init, r)).collect()
    });
    let mut states: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut actions: [Vec<Vec<usize>>; 2] = [Vec::new(), Vec::new()];
    let mut cost = [KahanSum::new(), KahanSum::new()];
    let mut buf: [Vec<f64>; 2] = [0, 1].map(|j| vec![0.0; spec.states(j)]);
    for t in 0..spec.horizon {
        let u: [Vec<usize>; 2] = [0, 1].map(|j| {
            let obs = spec.teams[j].obs_model.at(t);
            (0..sizes[j])
                .map(|k| {
                    let r = &mut rngs[j][k];
                    let y = sample_row(obs.row(x[j][k]), r);
                    sample_row(pols[j].stage_kernel(k, t).row(y), r)
                })
                .collect()
        });
        let sx = [0, 1].map(|j| frequencies(&x[j], spec.states(j)));
        let su = [0, 1].map(|j| frequencies(&u[j], spec.actions(j)));
        let stats = spec.stage_stats([&sx[0], &sx[1]], [&su[0], &su[1]]);
        for j in 0..2 {
            let mut acc = KahanSum::new();
            for k in 0..sizes[j] {
                acc.add(spec.stage_cost(j, omega, x[j][k], u[j][k], &stats));
            }
            cost[j].add(acc.value() / sizes[j] as f64);
        }
        let next: [Vec<usize>; 2] = if t + 1 < spec.horizon {
            [0, 1].map(|j| {
                (0..sizes[j])
                    .map(|k| {
                        spec.teams[j].transition.next_law_into(
                            j,
                            t,
                            x[j][k],
                            u[j][k],
                            &stats,
                            &mut buf[j],
                        );
                        let draw: f64 = rngs[j][k].gen();
                        let mut acc = 0.0;
                        let mut pick = buf[j].len() - 1;
                        for (i, p) in buf[j].iter().enumerate() {
                            acc += p;
                            if draw < acc {
                                pick = i;
                                break;
                            }
                        }
                        pick
                    })
                    .collect()
            })
        } else {
            [Vec::new(), Vec::new()]
        };
        let [x0, x1] = std::mem::replace(&mut x, next);
        let [u0, u1] = u;
        states[0].push(x0);
        states[1].push(x1);
        actions[0].push(u0);
        actions[1].push(u1);
    }
    Episode {
        omega,
        states,
        actions,
        cost: [cost[0].value(), cost[1].value()],
    }
}

/// Averaged empirical state and action measures of one team at one stage,
/// over the episodes whose world state was `omega`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalStage {
    pub episodes: usize,
    pub state: Vec<f64>,
    pub action: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub team_sizes: [usize; 2],
    pub cost: [McEstimate; 2],
    /// `flows[team][t][omega]`.
    pub flows: [Vec<Vec<EmpiricalStage>>; 2],
}

struct EpisodeSummary {
    omega: usize,
    state: [Vec<Vec<f64>>; 2],
    action: [Vec<Vec<f64>>; 2],
    cost: [f64; 2],
}

fn check_sim_inputs(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: [&DynTeamPolicy; 2],
) -> Result<()> {
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("team sizes must be >= 1".into()));
    }
    for j in 0..2 {
        pols[j].check(spec, j, sizes[j])?;
    }
    Ok(())
}

fn episode_costs(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: [&DynTeamPolicy; 2],
    reps: usize,
    seed: u64,
) -> Vec<[f64; 2]> {
    (0..reps as u64)
        .into_par_iter()
        .map(|rep| simulate_episode(spec, sizes, pols, seed, rep).cost)
        .collect()
}

/// Monte Carlo simulation of the finite-N dynamic game: per-team cost
/// estimates with 99% half-widths and empirical flows per world state.
pub fn simulate_finite_n(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: [&DynTeamPolicy; 2],
    reps: usize,
    seed: u64,
) -> Result<SimulationReport> {
    check_reps(reps)?;
    check_sim_inputs(spec, sizes, pols)?;
    let summaries: Vec<EpisodeSummary> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let e = simulate_episode(spec, sizes, pols, seed, rep);
            EpisodeSummary {
                omega: e.omega,
                state: [0, 1].map(|j| {
                    e.states[j]
                        .iter()
                        .map(|s| frequencies(s, spec.states(j)))
                        .collect()
                }),
                action: [0, 1].map(|j| {
                    e.actions[j]
                        .iter()
                        .map(|a| frequencies(a, spec.actions(j)))
                        .collect()
                }),
                cost: e.cost,
            }
        })
        .collect();
    let mut flows: [Vec<Vec<EmpiricalStage>>; 2] = [0, 1].map(|j| {
        (0..spec.horizon)
            .map(|_| {
                (0..spec.worlds())
                    .map(|_| EmpiricalStage {
                        episodes: 0,
                        state: vec![0.0; spec.states(j)],
                        action: vec![0.0; spec.actions(j)],
                    })
                    .collect()
            })
            .collect()
    });
    for s in &summaries {
        for j in 0..2 {
            for t in 0..spec.horizon {
                let cell = &mut flows[j][t][s.omega];
                cell.episodes += 1;
                cell.state
                    .iter_mut()
                    .zip(&s.state[j][t])
                    .for_each(|(a, b)| *a += b);
                cell.action
                    .iter_mut()
                    .zip(&s.action[j][t])
                    .for_each(|(a, b)| *a += b);
            }
        }
    }
    for cell in flows.iter_mut().flatten().flatten() {
        if cell.episodes > 0 {
            let n = cell.episodes as f64;
            cell.state.iter_mut().for_each(|v| *v /= n);
            cell.action.iter_mut().for_each(|v| *v /= n);
        }
    }
    let cost = [0, 1].map(|j| summarize(&summaries.iter().map(|s| s.cost[j]).collect::<Vec<_>>()));
    Ok(SimulationReport {
        team_sizes: sizes,
        cost,
        flows,
    })
}

fn config_work(spec: &DynamicGameSpec, sizes: [usize; 2]) -> u128 {
    let per_dm = |j: usize| (spec.states(j) * spec.actions(j) * spec.states(j)) as u128;
    let mut w = (spec.worlds() * spec.horizon) as u128;
    for j in 0..2 {
        for _ in 0..sizes[j] {
            w = w.saturating_mul(per_dm(j));
        }
    }
    w
}

/// Exact expected costs of both teams in the finite-N dynamic game, by
/// propagating the law of the joint state configuration of all DMs.
pub fn exact_dynamic_costs(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: [&DynTeamPolicy; 2],
) -> Result<[f64; 2]> {
    check_sim_inputs(spec, sizes, pols)?;
    let work = config_work(spec, sizes);
    if work > DYN_EXACT_WORK_LIMIT {
        return Err(Error::BudgetExceeded {
            what: "joint configurations",
            size: work,
            limit: DYN_EXACT_WORK_LIMIT,
            hint: "use Monte Carlo estimation",
        });
    }
    // DMs of team 0 first, then team 1
    let dms: Vec<(usize, usize)> = (0..2)
        .flat_map(|j| (0..sizes[j]).map(move |k| (j, k)))
        .collect();
    let nstate: Vec<usize> = dms.iter().map(|&(j, _)| spec.states(j)).collect();
    let naction: Vec<usize> = dms.iter().map(|&(j, _)| spec.actions(j)).collect();
    let mut total = [KahanSum::new(), KahanSum::new()];
    let mut law = vec![0.0; spec.states(0).max(spec.states(1))];
    for omega in 0..spec.worlds() {
        let prior = spec.prior.weights()[omega];
        if prior == 0.0 {
            continue;
        }
        // configuration law as (digits, prob)
        let mut configs: Vec<(Vec<usize>, f64)> = Vec::new();
        let mut x = vec![0usize; dms.len()];
        loop {
            let p: f64 = dms
                .iter()
                .zip(&x)
                .map(|(&(j, _), &xi)| spec.teams[j].init_kernel.prob(omega, xi))
                .product();
            if p > 0.0 {
                configs.push((x.clone(), p));
            }
            if !advance_mixed(&mut x, &nstate) {
                break;
            }
        }
        let mut acc = [KahanSum::new(), KahanSum::new()];
        for t in 0..spec.horizon {
            // stage costs are divided by the stage's total probability mass,
            // which keeps constant costs exact
            let mut stage = [KahanSum::new(), KahanSum::new()];
            let mut mass = KahanSum::new();
            let mut next: std::collections::BTreeMap<Vec<usize>, f64> = Default::default();
            for (x, px) in &configs {
                let act: Vec<Vec<f64>> = dms
                    .iter()
                    .zip(x)
                    .map(|(&(j, k), &xi)| {
                        let obs = spec.teams[j].obs_model.at(t);
                        pols[j]
                            .stage_kernel(k, t)
                            .push_forward(obs.row(xi).weights())
                    })
                    .collect();
                let sx = [0, 1].map(|j| team_freq(&dms, x, j, spec.states(j), sizes[j]));
                let mut u = vec![0usize; dms.len()];
                loop {
                    let pu: f64 = act.iter().zip(&u).map(|(a, &ui)| a[ui]).product();
                    if pu > 0.0 {
                        let su = [0, 1].map(|j| team_freq(&dms, &u, j, spec.actions(j), sizes[j]));
                        let stats = spec.stage_stats([&sx[0], &sx[1]], [&su[0], &su[1]]);
                        let mut c = [0.0; 2];
                        for (d, &(j, _)) in dms.iter().enumerate() {
                            c[j] += spec.stage_cost(j, omega, x[d], u[d], &stats);
                        }
                        mass.add(px * pu);
                        for j in 0..2 {
                            stage[j].add(px * pu * c[j] / sizes[j] as f64);
                        }
                        if t + 1 < spec.horizon {
                            let laws: Vec<Vec<f64>> = dms
                                .iter()
                                .enumerate()
                                .map(|(d, &(j, _))| {
                                    let l = &mut law[..spec.states(j)];
                                    spec.teams[j]
                                        .transition
                                        .next_law_into(j, t, x[d], u[d], &stats, l);
                                    l.to_vec()
                                })
                                .collect();
                            let mut x2 = vec![0usize; dms.len()];
                            loop {
                                let p2: f64 = laws.iter().zip(&x2).map(|(l, &xi)| l[xi]).product();
                                if p2 > 0.0 {
                                    *next.entry(x2.clone()).or_insert(0.0) += px * pu * p2;
                                }
                                if !advance_mixed(&mut x2, &nstate) {
                                    break;
                                }
                            }
                        }
                    }
                    if !advance_mixed(&mut u, &naction) {
                        break;
                    }
                }
            }
            for j in 0..2 {
                acc[j].add(stage[j].value() / mass.value());
            }
            configs = next.into_iter().collect();
        }
        for j in 0..2 {
            total[j].add(prior * acc[j].value());
        }
    }
    Ok([total[0].value(), total[1].value()])
}

fn team_freq(
    dms: &[(usize, usize)],
    items: &[usize],
    team: usize,
    size: usize,
    n: usize,
) -> Vec<f64> {
    let mut f = vec![0.0; size];
    for (&(j, _), &i) in dms.iter().zip(items) {
        if j == team {
            f[i] += 1.0;
        }
    }
    f.iter_mut().for_each(|v| *v /= n as f64);
    f
}

/// Mixed-radix increment, last digit fastest.
fn advance_mixed(digits: &mut [usize], radix: &[usize]) -> bool {
    for i in (0..digits.len()).rev() {
        digits[i] += 1;
        if digits[i] < radix[i] {
            return true;
        }
        digits[i] = 0;
    }
    false
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynEpsilonOptions {
    /// Exact enumeration when within budget; Monte Carlo otherwise.
    pub prefer_exact: bool,
    pub reps: usize,
    pub seed: u64,
    /// Grid steps per kernel row for symmetric Monte Carlo deviations.
    pub grid_steps: usize,
}

impl Default for DynEpsilonOptions {
    fn default() -> Self {
        DynEpsilonOptions {
            prefer_exact: true,
            reps: 1000,
            seed: 0,
            grid_steps: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynEpsilonReport {
    pub team_sizes: [usize; 2],
    pub eps: [f64; 2],
    pub current_cost: [f64; 2],
    pub deviation_cost: [f64; 2],
    pub best_deviations: [DynTeamPolicy; 2],
    pub method: Method,
    /// 0 for exact estimates.
    pub ci_halfwidth: f64,
}

/// Number of deterministic per-DM profiles of a team.
fn det_profile_count(spec: &DynamicGameSpec, team: usize, n: usize) -> u128 {
    let per = det_stage_policy_count(spec, team);
    let mut c = 1u128;
    for _ in 0..n {
        c = c.saturating_mul(per);
    }
    c
}

/// Whether [`dynamic_epsilon_estimate`] can run in exact mode.
pub fn dynamic_exact_feasible(spec: &DynamicGameSpec, sizes: [usize; 2]) -> bool {
    config_work(spec, sizes) <= DYN_EXACT_WORK_LIMIT
        && (0..2).all(|i| {
            let c = det_profile_count(spec, i, sizes[i]);
            c <= DYN_BR_LIMIT
                && c.saturating_mul(config_work(spec, sizes)) <= 100 * DYN_EXACT_WORK_LIMIT
        })
}

/// Epsilon-Nash estimate of symmetric stage policies deployed in the
/// finite-N dynamic game. Exact mode minimizes each team's cost over all
/// deterministic per-DM stage-policy profiles (costs are multilinear in the
/// DMs' stage kernels, so this is the team's best response). Monte Carlo
/// mode searches symmetric grid deviations and single-DM deterministic
/// deviations with common random numbers, which bounds epsilon from below.
pub fn dynamic_epsilon_estimate(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    pols: &[StagePolicy; 2],
    opts: &DynEpsilonOptions,
) -> Result<DynEpsilonReport> {
    let report = validate_dynamic_spec(spec);
    if !report.is_valid() {
        return Err(Error::Validation(report));
    }
    let base = [0, 1].map(|j| DynTeamPolicy::Symmetric {
        stages: pols[j].clone(),
    });
    check_sim_inputs(spec, sizes, [&base[0], &base[1]])?;
    if opts.prefer_exact && dynamic_exact_feasible(spec, sizes) {
        dynamic_epsilon_exact(spec, sizes, &base)
    } else {
        dynamic_epsilon_mc(spec, sizes, &base, opts)
    }
}

fn dynamic_epsilon_exact(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    base: &[DynTeamPolicy; 2],
) -> Result<DynEpsilonReport> {
    let current = exact_dynamic_costs(spec, sizes, [&base[0], &base[1]])?;
    let mut eps = [0.0; 2];
    let mut dev_cost = [0.0; 2];
    let mut devs = base.clone();
    for i in 0..2 {
        let n = sizes[i];
        let per = det_stage_policy_count(spec, i) as usize;
        let count = det_profile_count(spec, i, n) as usize;
        let values: Vec<Result<f64>> = (0..count)
            .into_par_iter()
            .map(|idx| {
                let dev = per_dm_profile(spec, i, n, per, idx);
                let mut pair = [&base[0], &base[1]];
                pair[i] = &dev;
                exact_dynamic_costs(spec, sizes, pair).map(|c| c[i])
            })
            .collect();
        let mut best = (f64::INFINITY, 0usize);
        for (idx, v) in values.into_iter().enumerate() {
            let v = v?;
            if v < best.0 {
                best = (v, idx);
            }
        }
        dev_cost[i] = best.0;
        eps[i] = current[i] - best.0;
        devs[i] = per_dm_profile(spec, i, n, per, best.1);
    }
    Ok(DynEpsilonReport {
        team_sizes: sizes,
        eps,
        current_cost: current,
        deviation_cost: dev_cost,
        best_deviations: devs,
        method: Method::Exact,
        ci_halfwidth: 0.0,
    })
}

/// The `idx`-th deterministic per-DM profile (DM 0 most significant).
fn per_dm_profile(
    spec: &DynamicGameSpec,
    team: usize,
    n: usize,
    per: usize,
    mut idx: usize,
) -> DynTeamPolicy {
    let mut digits = vec![0usize; n];
    for d in digits.iter_mut().rev() {
        *d = idx % per;
        idx /= per;
    }
    DynTeamPolicy::PerDm {
        dms: digits
            .into_iter()
            .map(|d| det_stage_policy(spec, team, d as u128))
            .collect(),
    }
}

fn dynamic_epsilon_mc(
    spec: &DynamicGameSpec,
    sizes: [usize; 2],
    base: &[DynTeamPolicy; 2],
    opts: &DynEpsilonOptions,
) -> Result<DynEpsilonReport> {
    check_reps(opts.reps)?;
    let base_runs = episode_costs(spec, sizes, [&base[0], &base[1]], opts.reps, opts.seed);
    let prune = final_stage_irrelevant(spec);
    let steps = opts.grid_steps.max(1);
    let mut eps = [0.0; 2];
    let mut current = [0.0; 2];
    let mut dev_cost = [0.0; 2];
    let mut ci = 0.0f64;
    let mut devs = base.clone();
    for i in 0..2 {
        let base_i: Vec<f64> = base_runs.iter().map(|c| c[i]).collect();
        current[i] = summarize(&base_i).estimate;
        let (ny, nu) = (spec.observations(i), spec.actions(i));
        let DynTeamPolicy::Symmetric { stages } = &base[i] else {
            unreachable!("base policies are symmetric")
        };
        let mut candidates = Vec::new();
        // symmetric grid deviations
        let rows = simplex_grid(nu, steps);
        let per_stage = kernel_grid_len(ny, nu, steps);
        let free = if prune {
            spec.horizon - 1
        } else {
            spec.horizon
        };
        let free = free.max(1).min(spec.horizon);
        let total = per_stage
            .checked_pow(free as u32)
            .unwrap_or(u128::MAX)
            .min(4096);
        for mut idx in 0..total {
            let mut sp = stages.clone();
            for t in (0..free).rev() {
                sp[t] = kernel_from_grid(&rows, ny, (idx % per_stage) as usize);
                idx /= per_stage;
            }
            candidates.push(DynTeamPolicy::Symmetric { stages: sp });
        }
        // single-DM deterministic deviations
        let singles = det_stage_policy_count(spec, i).min(4096);
        for d in 0..singles {
            let mut dms = vec![stages.clone(); sizes[i]];
            dms[0] = det_stage_policy(spec, i, d);
            candidates.push(DynTeamPolicy::PerDm { dms });
        }
        // not deviating is always available, so epsilon is never negative
        let stay = McEstimate {
            estimate: 0.0,
            ci_halfwidth: 0.0,
            reps: opts.reps,
        };
        let mut best: Option<(f64, McEstimate, DynTeamPolicy)> =
            Some((current[i], stay, base[i].clone()));
        for cand in candidates {
            let mut pair = [&base[0], &base[1]];
            pair[i] = &cand;
            let dev = episode_costs(spec, sizes, pair, opts.reps, opts.seed);
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
    Ok(DynEpsilonReport {
        team_sizes: sizes,
        eps,
        current_cost: current,
        deviation_cost: dev_cost,
        best_deviations: devs,
        method: Method::MonteCarlo,
        ci_halfwidth: ci,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::mf_static;

    fn det(spec: &DynamicGameSpec, team: usize, map: &[usize]) -> StagePolicy {
        let ny = spec.observations(team);
        (0..spec.horizon)
            .map(|_| Kernel::deterministic(&map[..ny], spec.actions(team)))
            .collect()
    }

    #[test]
    fn copy_action_flow_and_best_response() {
        let spec = fixtures::copy_action_dynamic(2);
        // both teams keep their state: action = observed state
        let keep = det(&spec, 0, &[0, 1]);
        let pols = [keep.clone(), keep];
        let flows = propagate_mf_flow(&spec, &pols);
        for t in 0..2 {
            let s = &flows.flows[0][t][0].state;
            assert!((s[0] - 0.7).abs() < 1e-15 && (s[1] - 0.3).abs() < 1e-15);
        }
        let c = mf_dynamic_cost(&spec, 0, &pols, &flows);
        assert!((c - 0.6).abs() < 1e-15, "{c}");
        let br = dynamic_best_response_fixed_flow(&spec, 0, &flows, false).unwrap();
        assert!(br.exhaustive);
        assert!((br.value - 0.3).abs() < 1e-15, "{}", br.value);
        // stage 0 moves to state 0 from either state
        assert_eq!(br.policy[0], Kernel::deterministic(&[0, 0], 2));
    }

    #[test]
    fn decoupled_flows_follow_markov_chain() {
        let spec = fixtures::decoupled();
        let pols = [0, 1].map(|j| {
            (0..spec.horizon)
                .map(|_| {
                    let (ny, nu) = (spec.observations(j), spec.actions(j));
                    Kernel::from_rows_unchecked(vec![vec![1.0 / nu as f64; nu]; ny])
                })
                .collect::<StagePolicy>()
        });
        let flows = propagate_mf_flow(&spec, &pols);
        for j in 0..2 {
            for omega in 0..spec.worlds() {
                // independent chain: P_pi(x'|x) = sum_u pi(u|x) P(x'|x,u)
                let mut mu = spec.teams[j].init_kernel.row(omega).weights().to_vec();
                for t in 0..spec.horizon {
                    assert!(tv_distance(&mu, &flows.flows[j][t][omega].state) < 1e-12);
                    let pi = action_given_state(&spec, j, t, &pols[j][t]);
                    let crate::cost::Transition::Table { probs } = &spec.teams[j].transition else {
                        panic!("table transition expected")
                    };
                    let mut next = vec![0.0; mu.len()];
                    for x in 0..mu.len() {
                        for (u, pu) in pi[x].iter().enumerate() {
                            for (x2, p) in probs[x][u].iter().enumerate() {
                                next[x2] += mu[x] * pu * p;
                            }
                        }
                    }
                    mu = next;
                }
            }
        }
    }

    #[test]
    fn horizon_one_matches_static() {
        for s in [
            fixtures::mf_mismatch(),
            fixtures::coordination(),
            fixtures::spread(),
        ] {
            let d = fixtures::horizon_one_from_static(&s);
            let b = [
                Kernel::from_rows(vec![vec![0.3, 0.7]; s.observations(0)]).unwrap(),
                Kernel::from_rows(vec![vec![0.6, 0.4]; s.observations(1)]).unwrap(),
            ];
            let mf = mf_static::mean_fields_of(&s, &b);
            let pols = [vec![b[0].clone()], vec![b[1].clone()]];
            let flows = propagate_mf_flow(&d, &pols);
            for i in 0..2 {
                let a = mf_static::mf_cost(&s, i, &b[i], &mf);
                let c = mf_dynamic_cost(&d, i, &pols, &flows);
                assert!((a - c).abs() < 1e-12, "{a} vs {c}");
                let (_, sv) = mf_static::best_response_fixed_mf(&s, i, &mf);
                let dv = dynamic_best_response_fixed_flow(&d, i, &flows, false)
                    .unwrap()
                    .value;
                assert!((sv - dv).abs() < 1e-12, "{sv} vs {dv}");
            }
        }
    }

    #[test]
    fn crowd_avoidance_solver_reaches_interior_equilibrium() {
        let spec = fixtures::crowd_avoidance();
        let eq = solve_dynamic_mf_fixed_point(&spec, &SolverConfig::default()).unwrap();
        assert!(eq.converged, "{:?}", eq.br_residual);
        assert!(eq.br_residual.iter().all(|r| *r <= 1e-6));
        assert_eq!(eq.consistency_residual, 0.0);
        let p1 = eq.policies[0][0].prob(0, 1);
        let p2 = eq.policies[1][0].prob(0, 1);
        // indifference: 1.8 p1 + 0.9 p2 = 1.36 and 0.9 p1 + 1.8 p2 = 1.31
        assert!((p1 - 0.94 / 1.8).abs() < 1e-3, "{p1}");
        assert!((p2 - 0.63 / 1.35).abs() < 1e-3, "{p2}");
    }

    #[test]
    fn exact_costs_match_simulation() {
        let spec = fixtures::crowd_avoidance();
        let half = vec![Kernel::from_rows(vec![vec![0.5, 0.5]]).unwrap(); 2];
        let p = DynTeamPolicy::Symmetric { stages: half };
        let exact = exact_dynamic_costs(&spec, [2, 2], [&p, &p]).unwrap();
        let sim = simulate_finite_n(&spec, [2, 2], [&p, &p], 4000, 3).unwrap();
        for j in 0..2 {
            let e = &sim.cost[j];
            assert!(
                (e.estimate - exact[j]).abs() <= e.ci_halfwidth,
                "{} vs {}",
                e.estimate,
                exact[j]
            );
        }
    }

    #[test]
    fn constant_cost_has_zero_epsilon() {
        let mut spec = fixtures::crowd_avoidance();
        for t in spec.teams.iter_mut() {
            t.stage_cost = crate::cost::StageCost::Constant { value: 1.0 };
        }
        let pols = [0, 1].map(|_| vec![Kernel::from_rows(vec![vec![0.5, 0.5]]).unwrap(); 2]);
        let r =
            dynamic_epsilon_estimate(&spec, [2, 2], &pols, &DynEpsilonOptions::default()).unwrap();
        assert_eq!(r.method, Method::Exact);
        assert_eq!(r.eps, [0.0, 0.0]);
        assert_eq!(r.current_cost, [2.0, 2.0]);
    }

    #[test]
    fn simulation_is_reproducible() {
        let spec = fixtures::crowd_avoidance();
        let p = DynTeamPolicy::Symmetric {
            stages: vec![Kernel::from_rows(vec![vec![0.4, 0.6]]).unwrap(); 2],
        };
        let a = simulate_episode(&spec, [5, 3], [&p, &p], 9, 2);
        let b = simulate_episode(&spec, [5, 3], [&p, &p], 9, 2);
        assert_eq!(a, b);
        assert_eq!(a.states[0].len(), 2);
        assert_eq!(a.states[1][0].len(), 3);
    }
}
