//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. Tolerances are pinned below.

#![allow(clippy::needless_range_loop)]

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use teamfield::dynamic::{
    cluster_dynamic_hits, dynamic_best_response_fixed_flow, dynamic_epsilon_estimate,
    dynamic_grid_fixed_point_search, mf_dynamic_cost, propagate_mf_flow,
    solve_dynamic_mf_fixed_point, DynEpsilonOptions,
};
use teamfield::finite_n::{
    check_exchangeable_br_value, epsilon_ne_certify, exact_cost, mc_cost, sample_team_actions,
    FiniteGameInstance, Method,
};
use teamfield::fixed_point::{InitPolicy, SolverConfig};
use teamfield::generators::{
    random_exchangeable_policy, random_kernel, random_static_spec, random_team_policy,
};
use teamfield::mf_static::{
    best_response_fixed_mf, cluster_hits, grid_fixed_point_search, mean_field_action_law,
    mean_field_distance, mean_fields_of, mf_cost, solve_mf_fixed_point,
};
use teamfield::policy::{min_tv_to_symmetric_iid, permutations, permute_profile, TeamPolicy};
use teamfield::prob::{emp_measure, tv_distance, ProbVec};
use teamfield::{fixtures, Kernel};

const PERMUTATION_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-9;
const EXCHANGEABLE_BR_TOL: f64 = 1e-9;
const WITNESS_MIN_TV: f64 = 0.1;
const WITNESS_GRID_STEPS: usize = 100;
const RESIDUAL_TOL: f64 = 1e-6;
const GRID_MATCH_TV: f64 = 1e-3;
const LLN_TV: f64 = 0.05;
const LLN_DMS: usize = 10_000;
const HORIZON_ONE_TOL: f64 = 1e-12;
const MARKOV_TOL: f64 = 1e-12;
const DYN_GRID_RESOLUTION: f64 = 1e-2;
/// Absolute slack for comparing exact epsilons across team sizes and for
/// zero-variance Monte Carlo estimates; both are pure rounding allowances.
const ROUNDING_TOL: f64 = 1e-12;
const MC_REPS: usize = 1000;
const WORKER_COUNTS: [&str; 3] = ["1", "2", "8"];

type Criterion = (&'static str, fn() -> Verdict);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

/// Brute-force per-DM average cost: enumerates worlds, observation tuples,
/// mixture components and action tuples of both teams.
fn brute_force_cost(
    spec: &teamfield::StaticGameSpec,
    sizes: [usize; 2],
    p: &[TeamPolicy; 2],
    team: usize,
) -> f64 {
    fn tuples(base: usize, n: usize) -> Vec<Vec<usize>> {
        (0..base.pow(n as u32))
            .map(|mut i| {
                let mut t = vec![0; n];
                for k in (0..n).rev() {
                    t[k] = i % base;
                    i /= base;
                }
                t
            })
            .collect()
    }
    // law of (actions) given (observations), for one team
    let joint = |j: usize, ys: &[usize], us: &[usize]| -> f64 {
        p[j].components(sizes[j], spec.actions(j))
            .iter()
            .map(|(w, ks)| {
                w * ys
                    .iter()
                    .zip(us)
                    .enumerate()
                    .map(|(k, (&y, &u))| ks[k].prob(y, u))
                    .product::<f64>()
            })
            .sum()
    };
    let measure = |j: usize, us: &[usize]| {
        let mut m = vec![0.0; spec.actions(j)];
        for &u in us {
            m[u] += 1.0 / sizes[j] as f64;
        }
        ProbVec::normalized(m).unwrap()
    };
    let mut total = 0.0;
    for omega in 0..spec.worlds() {
        let w = spec.prior.weights()[omega];
        for y1 in tuples(spec.observations(0), sizes[0]) {
            let py1: f64 = y1.iter().map(|&y| spec.obs_prob(0, omega, y)).product();
            for y2 in tuples(spec.observations(1), sizes[1]) {
                let py2: f64 = y2.iter().map(|&y| spec.obs_prob(1, omega, y)).product();
                for u1 in tuples(spec.actions(0), sizes[0]) {
                    let pu1 = joint(0, &y1, &u1);
                    if pu1 == 0.0 {
                        continue;
                    }
                    let m1 = measure(0, &u1);
                    for u2 in tuples(spec.actions(1), sizes[1]) {
                        let pu2 = joint(1, &y2, &u2);
                        if pu2 == 0.0 {
                            continue;
                        }
                        let m2 = measure(1, &u2);
                        let own = if team == 0 { &u1 } else { &u2 };
                        let avg = own
                            .iter()
                            .map(|&u| spec.cost_eval_static(team, omega, u, &m1, &m2).unwrap())
                            .sum::<f64>()
                            / own.len() as f64;
                        total += w * py1 * py2 * pu1 * pu2 * avg;
                    }
                }
            }
        }
    }
    total
}

/// Exact costs are invariant under within-team permutations of DMs.
fn exchangeable_costs() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    let mut checks = 0usize;
    let mut oracle_gap = 0.0f64;
    for _ in 0..100 {
        let spec = random_static_spec(&mut rng);
        let sizes = [rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let p = [0, 1]
            .map(|i| random_team_policy(&mut rng, spec.observations(i), spec.actions(i), sizes[i]));
        let inst = FiniteGameInstance::new(spec.clone(), sizes).unwrap();
        let base = [0, 1].map(|i| exact_cost(&inst, &p[0], &p[1], i).unwrap());
        for i in 0..2 {
            oracle_gap = oracle_gap.max((base[i] - brute_force_cost(&spec, sizes, &p, i)).abs());
        }
        for s1 in permutations(sizes[0]) {
            let q1 = permute_profile(&p[0], &s1).unwrap();
            for s2 in permutations(sizes[1]) {
                let q2 = permute_profile(&p[1], &s2).unwrap();
                for i in 0..2 {
                    let c = exact_cost(&inst, &q1, &q2, i).unwrap();
                    worst = worst.max((c - base[i]).abs());
                    checks += 1;
                }
            }
        }
    }
    verdict(
        worst <= PERMUTATION_TOL && oracle_gap <= ORACLE_TOL,
        format!("{checks} permuted evaluations, max deviation {worst:.2e}, brute-force oracle gap {oracle_gap:.2e}"),
    )
}

/// Best responses over all deterministic profiles and over symmetrized
/// profiles agree against exchangeable opponents.
fn exchangeable_best_response() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for k in 0..50 {
        let spec = random_static_spec(&mut rng);
        let n = 2 + k % 2;
        let team = rng.gen_range(0..2);
        let other = 1 - team;
        let opp =
            random_exchangeable_policy(&mut rng, spec.observations(other), spec.actions(other), n);
        let inst = FiniteGameInstance::new(spec, [n, n]).unwrap();
        let (v_all, v_exch) = check_exchangeable_br_value(&inst, &opp, team).unwrap();
        worst = worst.max((v_all - v_exch).abs());
    }
    verdict(
        worst <= EXCHANGEABLE_BR_TOL,
        format!("50 instances, max |v_all - v_exch| = {worst:.2e}"),
    )
}

/// The anticorrelated two-DM mixture is far from every symmetric i.i.d. policy.
fn mixture_witness() -> Verdict {
    let p = fixtures::anticorrelated_mixture();
    let d = min_tv_to_symmetric_iid(&p, 2, 1, 2, WITNESS_GRID_STEPS);
    verdict(
        d > WITNESS_MIN_TV,
        format!("min TV to symmetric i.i.d. = {d:.4}"),
    )
}

/// The annealed solver reaches the grid fixed point of the mismatch game.
fn representative_fixed_point() -> Verdict {
    let spec = fixtures::mf_mismatch();
    let eq = solve_mf_fixed_point(&spec, &SolverConfig::default()).unwrap();
    let random = solve_mf_fixed_point(
        &spec,
        &SolverConfig {
            init: InitPolicy::Random(11),
            ..SolverConfig::default()
        },
    )
    .unwrap();
    let hits = grid_fixed_point_search(&spec, 1e-3).unwrap();
    let clusters = cluster_hits(&hits, 2e-3);
    let Some(best) = clusters.iter().min_by(|a, b| {
        let ga = a.br_residual[0] + a.br_residual[1];
        let gb = b.br_residual[0] + b.br_residual[1];
        ga.partial_cmp(&gb).unwrap()
    }) else {
        return verdict(false, "grid search found no hit");
    };
    let mut pass = true;
    let mut dists = Vec::new();
    for e in [&eq, &random] {
        let residual = e.br_residual[0].max(e.br_residual[1]);
        let consistency = e.consistency_residual[0].max(e.consistency_residual[1]);
        let d = mean_field_distance(&e.mean_fields, &best.mean_fields);
        pass &= e.converged
            && residual < RESIDUAL_TOL
            && consistency < RESIDUAL_TOL
            && d <= GRID_MATCH_TV;
        dists.push(format!(
            "converged={} br={residual:.1e} cons={consistency:.1e} tv={d:.1e}",
            e.converged
        ));
    }
    verdict(
        pass,
        format!(
            "{} cluster(s); uniform start: {}; random start: {}",
            clusters.len(),
            dists[0],
            dists[1]
        ),
    )
}

/// Empirical action measures of 10^4 DMs track the mean field per world state.
fn lln_bridge() -> Verdict {
    let mut passed = 0;
    let mut worst = 0.0f64;
    for trial in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(300 + trial);
        let spec = random_static_spec(&mut rng);
        let mut ok = true;
        for team in 0..2 {
            let b = random_kernel(&mut rng, spec.observations(team), spec.actions(team));
            let lambda = mean_field_action_law(&spec, team, &b);
            for (omega, law) in lambda.iter().enumerate() {
                let acts =
                    sample_team_actions(&spec, team, &b, LLN_DMS, omega, trial, omega as u64);
                let emp = emp_measure(&acts, &spec.teams[team].action_space).unwrap();
                let d = tv_distance(emp.weights(), law.weights());
                worst = worst.max(d);
                ok &= d <= LLN_TV;
            }
        }
        passed += ok as usize;
    }
    verdict(
        passed >= 19,
        format!("{passed}/20 trials within TV {LLN_TV}, worst {worst:.4}"),
    )
}

/// Exact epsilons of deployed mean-field equilibria.
fn finite_n_epsilon() -> Verdict {
    let spec = fixtures::mf_mismatch();
    let eq = solve_mf_fixed_point(&spec, &SolverConfig::default()).unwrap();
    let eps_at = |spec: &teamfield::StaticGameSpec, k: &[Kernel; 2], n: usize| {
        let inst = FiniteGameInstance::new(spec.clone(), [n, n]).unwrap();
        let p = [0, 1].map(|i| TeamPolicy::symmetric(k[i].clone()));
        epsilon_ne_certify(&inst, &p[0], &p[1]).unwrap()
    };
    let e2 = eps_at(&spec, &eq.policies, 2);
    let e8 = eps_at(&spec, &eq.policies, 8);
    let monotone = (0..2).all(|i| e8.eps[i] <= e2.eps[i] + ROUNDING_TOL);
    let coord = fixtures::coordination();
    let ceq = solve_mf_fixed_point(
        &coord,
        &SolverConfig {
            init: InitPolicy::Random(1),
            ..SolverConfig::default()
        },
    )
    .unwrap();
    let mut zero = ceq.converged;
    let mut coord_eps = Vec::new();
    for n in [2, 3, 4] {
        let r = eps_at(&coord, &ceq.policies, n);
        zero &= r.eps == [0.0, 0.0] && r.method == Method::Exact;
        coord_eps.push(format!("{:?}", r.eps));
    }
    verdict(
        monotone && zero,
        format!(
            "mismatch eps2={:?} eps8={:?}; coordination eps(2,3,4)={}",
            e2.eps,
            e8.eps,
            coord_eps.join(" ")
        ),
    )
}

/// Dynamic machinery agrees with static values, Markov chains, the grid
/// oracle and finite-N estimates.
fn dynamic_consistency() -> Verdict {
    let mut notes = Vec::new();
    let mut pass = true;

    // horizon one reproduces the static module
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut statics = vec![
        fixtures::mf_mismatch(),
        fixtures::coordination(),
        fixtures::spread(),
    ];
    statics.extend((0..20).map(|_| random_static_spec(&mut rng)));
    let mut worst = 0.0f64;
    for s in &statics {
        let d = fixtures::horizon_one_from_static(s);
        let b = [0, 1].map(|i| random_kernel(&mut rng, s.observations(i), s.actions(i)));
        let mf = mean_fields_of(s, &b);
        let pols = [vec![b[0].clone()], vec![b[1].clone()]];
        let flows = propagate_mf_flow(&d, &pols);
        for i in 0..2 {
            let a = mf_cost(s, i, &b[i], &mf);
            let c = mf_dynamic_cost(&d, i, &pols, &flows);
            let (_, sv) = best_response_fixed_mf(s, i, &mf);
            let dv = dynamic_best_response_fixed_flow(&d, i, &flows, false)
                .unwrap()
                .value;
            worst = worst.max((a - c).abs()).max((sv - dv).abs());
            for (omega, law) in mf.lambda[i].iter().enumerate() {
                worst = worst.max(tv_distance(law.weights(), &flows.flows[i][0][omega].action));
            }
        }
    }
    pass &= worst <= HORIZON_ONE_TOL;
    notes.push(format!("horizon-1 max diff {worst:.1e}"));

    // decoupled flows are Markov-chain marginals
    let dec = fixtures::decoupled();
    let mut worst = 0.0f64;
    let pols = [0, 1].map(|j| {
        (0..dec.horizon)
            .map(|_| random_kernel(&mut rng, dec.observations(j), dec.actions(j)))
            .collect::<Vec<_>>()
    });
    let flows = propagate_mf_flow(&dec, &pols);
    for j in 0..2 {
        let teamfield::cost::Transition::Table { probs } = &dec.teams[j].transition else {
            return verdict(false, "decoupled fixture lacks a table transition");
        };
        let obs = dec.teams[j].obs_model.at(0);
        for omega in 0..dec.worlds() {
            let mut mu = dec.teams[j].init_kernel.row(omega).weights().to_vec();
            for t in 0..dec.horizon {
                worst = worst.max(tv_distance(&mu, &flows.flows[j][t][omega].state));
                let nx = mu.len();
                let mut next = vec![0.0; nx];
                for x in 0..nx {
                    for y in 0..dec.observations(j) {
                        for u in 0..dec.actions(j) {
                            let w = mu[x] * obs.prob(x, y) * pols[j][t].prob(y, u);
                            for (x2, p) in probs[x][u].iter().enumerate() {
                                next[x2] += w * p;
                            }
                        }
                    }
                }
                mu = next;
            }
        }
    }
    pass &= worst <= MARKOV_TOL;
    notes.push(format!("decoupled max TV {worst:.1e}"));

    // crowd avoidance: solver against grid oracle
    let crowd = fixtures::crowd_avoidance();
    let eq = solve_dynamic_mf_fixed_point(&crowd, &SolverConfig::default()).unwrap();
    let residual = eq.br_residual[0].max(eq.br_residual[1]);
    pass &= eq.converged && residual < RESIDUAL_TOL && eq.consistency_residual < RESIDUAL_TOL;
    let hits = dynamic_grid_fixed_point_search(&crowd, DYN_GRID_RESOLUTION).unwrap();
    let clusters = cluster_dynamic_hits(&hits, 2.0 * DYN_GRID_RESOLUTION);
    let best = clusters.iter().min_by(|a, b| {
        (a.br_residual[0] + a.br_residual[1])
            .partial_cmp(&(b.br_residual[0] + b.br_residual[1]))
            .unwrap()
    });
    match best {
        Some(b) => {
            let d = eq.flows.state_distance(&b.flows);
            pass &= d <= DYN_GRID_RESOLUTION;
            notes.push(format!(
                "crowd br={residual:.1e} grid hits={} clusters={} state TV to best hit {d:.1e}",
                hits.len(),
                clusters.len()
            ));
        }
        None => {
            pass = false;
            notes.push("crowd grid search found no hit".into());
        }
    }

    // exact epsilon at N=2 against Monte Carlo at N=16
    let exact =
        dynamic_epsilon_estimate(&crowd, [2, 2], &eq.policies, &DynEpsilonOptions::default())
            .unwrap();
    let mc = dynamic_epsilon_estimate(
        &crowd,
        [16, 16],
        &eq.policies,
        &DynEpsilonOptions {
            prefer_exact: false,
            reps: MC_REPS,
            seed: 16,
            grid_steps: 10,
        },
    )
    .unwrap();
    let ordered = exact.method == Method::Exact
        && (0..2).all(|i| exact.eps[i] >= mc.eps[i] - mc.ci_halfwidth);
    pass &= ordered;
    notes.push(format!(
        "eps N=2 exact {:?}, N=16 MC {:?} +/- {:.1e}",
        exact.eps, mc.eps, mc.ci_halfwidth
    ));
    verdict(pass, notes.join("; "))
}

/// Monte Carlo confidence intervals cover exact costs.
fn estimator_contract() -> Verdict {
    let mut covered = 0;
    for trial in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(800 + trial);
        let spec = random_static_spec(&mut rng);
        let sizes = [rng.gen_range(1..=3), rng.gen_range(1..=3)];
        let p = [0, 1]
            .map(|i| random_team_policy(&mut rng, spec.observations(i), spec.actions(i), sizes[i]));
        let team = rng.gen_range(0..2);
        let inst = FiniteGameInstance::new(spec, sizes).unwrap();
        let exact = exact_cost(&inst, &p[0], &p[1], team).unwrap();
        let est = mc_cost(&inst, &p[0], &p[1], team, MC_REPS, trial).unwrap();
        if (est.estimate - exact).abs() <= est.ci_halfwidth + ROUNDING_TOL {
            covered += 1;
        }
    }
    verdict(
        covered >= 99,
        format!("{covered}/100 intervals cover the exact cost"),
    )
}

fn run_cli(bin: &Path, threads: &str, args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(bin)
        .args(args)
        .env("TEAMFIELD_THREADS", threads)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

/// Every command gives byte-identical output across worker counts.
fn determinism() -> Verdict {
    let bin = PathBuf::from(env!("CARGO_BIN_EXE_teamfield"));
    let fx = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    let dir = tempfile::tempdir().unwrap();
    let f = |name: &str| fx.join(name).to_string_lossy().into_owned();
    let t = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    let (mismatch, coord, crowd, broken) = (
        f("mf_mismatch.json"),
        f("coordination.json"),
        f("crowd_avoidance.json"),
        f("broken.json"),
    );
    // inputs for the commands that read solver output
    let eq = t("eq.json");
    let deq = t("deq.json");
    let pol = t("policy.json");
    let (c1, _) = run_cli(
        &bin,
        "1",
        &["solve-mf", "--spec", &mismatch, "--seed", "1", "--out", &eq],
    );
    let (c2, _) = run_cli(
        &bin,
        "1",
        &["solve-mf-dyn", "--spec", &crowd, "--out", &deq],
    );
    std::fs::write(
        &pol,
        r#"{"policies": [
            {"kind": "symmetric-iid", "kernel": [[0.5, 0.5]]},
            {"kind": "mixture", "profiles": [
                {"weight": 0.5, "maps": [[0], [1], [0]]},
                {"weight": 0.5, "maps": [[1], [0], [1]]}]}]}"#,
    )
    .unwrap();
    if c1 != 0 || c2 != 0 {
        return verdict(false, format!("setup runs exited with {c1} and {c2}"));
    }
    let commands: Vec<Vec<String>> = [
        vec!["validate", "--spec", &mismatch],
        vec!["validate", "--spec", &broken],
        vec!["solve-mf", "--spec", &mismatch, "--seed", "1"],
        vec!["solve-mf-dyn", "--spec", &crowd],
        vec![
            "certify", "--spec", &mismatch, "--policy", &pol, "--n", "2", "3",
        ],
        vec![
            "certify", "--spec", &mismatch, "--policy", &pol, "--n", "40", "3", "--seed", "4",
            "--reps", "200",
        ],
        vec!["sweep-n", "--spec", &coord, "--mfeq", &eq, "--ns", "2,4,8"],
        vec![
            "sweep-n", "--spec", &mismatch, "--mfeq", &eq, "--ns", "2,64", "--seed", "9", "--reps",
            "200",
        ],
        vec![
            "simulate", "--spec", &mismatch, "--mfeq", &eq, "--n", "50", "--reps", "300", "--seed",
            "7",
        ],
        vec![
            "simulate", "--spec", &crowd, "--mfeq", &deq, "--n", "100", "--reps", "300", "--seed",
            "7",
        ],
        vec![
            "eps-dyn", "--spec", &crowd, "--mfeq", &deq, "--n", "2", "--exact",
        ],
        vec![
            "eps-dyn",
            "--spec",
            &crowd,
            "--mfeq",
            &deq,
            "--n",
            "8",
            "--seed",
            "3",
            "--reps",
            "200",
            "--grid-steps",
            "4",
        ],
        vec!["grid-search", "--spec", &mismatch, "--resolution", "0.05"],
        vec!["grid-search", "--spec", &crowd, "--resolution", "0.1"],
    ]
    .into_iter()
    .map(|c| c.into_iter().map(String::from).collect())
    .collect();
    let mut mismatches = Vec::new();
    for cmd in &commands {
        let args: Vec<&str> = cmd.iter().map(String::as_str).collect();
        let reference = run_cli(&bin, WORKER_COUNTS[0], &args);
        let repeat = run_cli(&bin, WORKER_COUNTS[0], &args);
        let mut same = reference == repeat && !reference.1.is_empty();
        for w in &WORKER_COUNTS[1..] {
            same &= run_cli(&bin, w, &args) == reference;
        }
        if !same {
            mismatches.push(args[0].to_string());
        }
    }
    verdict(
        mismatches.is_empty(),
        format!(
            "{} invocations x workers {:?}; differing: {:?}",
            commands.len(),
            WORKER_COUNTS,
            mismatches
        ),
    )
}

fn main() {
    let criteria: [Criterion; 9] = [
        (
            "exchangeable costs under DM permutations",
            exchangeable_costs,
        ),
        (
            "exchangeable best-response value",
            exchangeable_best_response,
        ),
        ("non-i.i.d. exchangeable mixture witness", mixture_witness),
        (
            "representative-agent fixed point vs grid oracle",
            representative_fixed_point,
        ),
        ("law of large numbers bridge", lln_bridge),
        (
            "finite-N epsilon of mean-field equilibria",
            finite_n_epsilon,
        ),
        ("dynamic consistency", dynamic_consistency),
        ("Monte Carlo estimator contract", estimator_contract),
        ("CLI determinism across worker counts", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let id = format!("criterion {}", k + 1);
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| id.ends_with(f.as_str()) || name.contains(f.as_str()))
        {
            continue;
        }
        let start = Instant::now();
        let v = check();
        let status = if v.pass { "PASS" } else { "FAIL" };
        println!(
            "[{status}] {id}: {name} ({:.1}s) {}",
            start.elapsed().as_secs_f64(),
            v.detail
        );
        failed += (!v.pass) as usize;
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
