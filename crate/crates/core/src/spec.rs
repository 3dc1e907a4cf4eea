//! Game descriptions, their JSON form, and validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cost::{StageCost, StageStats, StaticCost, Transition};
use crate::error::{Error, Result};
use crate::prob::{simplex_grid, FiniteSpace, Kernel, ProbVec};
use crate::statistic::{StatValue, StatisticMap};

/// One team of a static game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TeamSpec {
    pub action_space: FiniteSpace,
    pub obs_space: FiniteSpace,
    /// World -> observation kernel shared by every DM of the team.
    pub obs_kernel: Kernel,
    #[serde(default = "identity")]
    pub statistic: StatisticMap,
}

fn identity() -> StatisticMap {
    StatisticMap::Identity
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticGameSpec {
    pub world: FiniteSpace,
    pub prior: ProbVec,
    pub teams: [TeamSpec; 2],
    pub cost: [StaticCost; 2],
}

impl StaticGameSpec {
    pub fn actions(&self, team: usize) -> usize {
        self.teams[team].action_space.size
    }

    pub fn observations(&self, team: usize) -> usize {
        self.teams[team].obs_space.size
    }

    pub fn worlds(&self) -> usize {
        self.world.size
    }

    pub fn obs_prob(&self, team: usize, omega: usize, y: usize) -> f64 {
        self.teams[team].obs_kernel.prob(omega, y)
    }

    /// Statistic values of both teams' action measures.
    pub fn stat_values(&self, m1: &[f64], m2: &[f64]) -> [StatValue; 2] {
        [
            self.teams[0]
                .statistic
                .apply_slice(m1)
                .expect("validated statistic"),
            self.teams[1]
                .statistic
                .apply_slice(m2)
                .expect("validated statistic"),
        ]
    }

    /// `c^team(omega, u, s1, s2)` for already-computed statistic values.
    pub fn cost_at(&self, team: usize, omega: usize, u: usize, stats: &[StatValue; 2]) -> f64 {
        let value = self.teams[team].statistic.element_value(u);
        self.cost[team].eval(team, omega, u, value, [&stats[0], &stats[1]])
    }

    /// Per-DM cost of `team` at world `omega` and action `u` when the two
    /// teams' action measures are `m1` and `m2`.
    pub fn cost_eval_static(
        &self,
        team: usize,
        omega: usize,
        u: usize,
        m1: &ProbVec,
        m2: &ProbVec,
    ) -> Result<f64> {
        check_index("team", team, 2)?;
        check_index("world", omega, self.worlds())?;
        check_index("action", u, self.actions(team))?;
        for (j, m) in [m1, m2].into_iter().enumerate() {
            if m.len() != self.actions(j) {
                return Err(Error::DimensionMismatch {
                    what: "mean-field measure",
                    got: m.len(),
                    expected: self.actions(j),
                });
            }
        }
        let stats = [
            self.teams[0].statistic.apply(m1)?,
            self.teams[1].statistic.apply(m2)?,
        ];
        Ok(self.cost_at(team, omega, u, &stats))
    }
}

pub(crate) fn check_index(what: &'static str, index: usize, size: usize) -> Result<()> {
    if index >= size {
        Err(Error::IndexOutOfRange { what, index, size })
    } else {
        Ok(())
    }
}

/// Observation model of the dynamic game: `P(y | x)`, optionally per stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsModel {
    Fixed(Kernel),
    Staged(Vec<Kernel>),
}

impl ObsModel {
    pub fn at(&self, t: usize) -> &Kernel {
        match self {
            ObsModel::Fixed(k) => k,
            ObsModel::Staged(ks) => &ks[t.min(ks.len() - 1)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynTeamSpec {
    pub state_space: FiniteSpace,
    pub action_space: FiniteSpace,
    pub obs_space: FiniteSpace,
    /// World -> initial state kernel.
    pub init_kernel: Kernel,
    pub obs_model: ObsModel,
    pub transition: Transition,
    pub stage_cost: StageCost,
    #[serde(default = "identity")]
    pub state_statistic: StatisticMap,
    #[serde(default = "identity")]
    pub action_statistic: StatisticMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGameSpec {
    pub world: FiniteSpace,
    pub prior: ProbVec,
    pub horizon: usize,
    pub teams: [DynTeamSpec; 2],
}

impl DynamicGameSpec {
    pub fn states(&self, team: usize) -> usize {
        self.teams[team].state_space.size
    }

    pub fn actions(&self, team: usize) -> usize {
        self.teams[team].action_space.size
    }

    pub fn observations(&self, team: usize) -> usize {
        self.teams[team].obs_space.size
    }

    pub fn worlds(&self) -> usize {
        self.world.size
    }

    /// Statistic values for both teams' state and action measures.
    pub fn stage_stats(&self, state: [&[f64]; 2], action: [&[f64]; 2]) -> StageStats {
        let s = |j: usize| {
            self.teams[j]
                .state_statistic
                .apply_slice(state[j])
                .expect("validated statistic")
        };
        let a = |j: usize| {
            self.teams[j]
                .action_statistic
                .apply_slice(action[j])
                .expect("validated statistic")
        };
        StageStats {
            state: [s(0), s(1)],
            action: [a(0), a(1)],
        }
    }

    pub fn stage_cost(
        &self,
        team: usize,
        omega: usize,
        x: usize,
        u: usize,
        stats: &StageStats,
    ) -> f64 {
        let tm = &self.teams[team];
        let value = tm.action_statistic.element_value(u);
        tm.stage_cost.eval(team, omega, x, u, value, stats)
    }

    /// True when neither transitions nor costs read any statistic.
    pub fn is_decoupled(&self) -> bool {
        self.teams
            .iter()
            .all(|t| !t.transition.uses_stats() && !t.stage_cost.uses_stats())
    }
}

/// Either kind of game description, as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum GameSpec {
    Static(StaticGameSpec),
    Dynamic(DynamicGameSpec),
}

impl GameSpec {
    pub fn validate(&self) -> ValidationReport {
        match self {
            GameSpec::Static(s) => validate_static_spec(s),
            GameSpec::Dynamic(d) => validate_dynamic_spec(d),
        }
    }

    /// Parses without validating.
    pub fn from_json_str(text: &str, origin: &Path) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Issue {
    pub field: String,
    pub message: String,
}

/// Every violated invariant of a spec; empty means valid. Also records the
/// largest cost value seen while probing each team's cost.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
    pub cost_bounds: Vec<f64>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    fn push(&mut self, field: impl Into<String>, message: impl Into<String>) {
        self.issues.push(Issue {
            field: field.into(),
            message: message.into(),
        });
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.issues
            .iter()
            .any(|i| i.message.contains(needle) || i.field.contains(needle))
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.issues.is_empty() {
            return writeln!(f, "valid");
        }
        for issue in &self.issues {
            writeln!(f, "{}: {}", issue.field, issue.message)?;
        }
        Ok(())
    }
}

fn check_space(report: &mut ValidationReport, field: &str, space: &FiniteSpace) {
    for msg in space.issues() {
        report.push(field, msg);
    }
}

fn check_prior(report: &mut ValidationReport, prior: &ProbVec, world: &FiniteSpace) {
    if prior.len() != world.size {
        report.push(
            "prior",
            format!(
                "has {} entries for {} world states",
                prior.len(),
                world.size
            ),
        );
    } else if let Some(msg) = prior.issue() {
        if msg.starts_with("not normalized") {
            report.push("prior", "prior not normalized");
        } else {
            report.push("prior", msg);
        }
    }
}

fn check_kernel(
    report: &mut ValidationReport,
    field: &str,
    k: &Kernel,
    sources: usize,
    targets: usize,
) {
    if let Some(msg) = k.issue() {
        report.push(field, format!("kernel not row-stochastic: {msg}"));
        return;
    }
    if k.sources() != sources || k.targets() != targets {
        report.push(
            field,
            format!(
                "kernel is {}x{}, expected {sources}x{targets}",
                k.sources(),
                k.targets()
            ),
        );
    }
}

fn check_cost_value(report: &mut ValidationReport, field: &str, v: f64, bound: &mut f64) -> bool {
    if !v.is_finite() {
        report.push(field, "non-finite cost");
        return false;
    }
    if v < 0.0 {
        report.push(field, format!("negative cost ({v})"));
        return false;
    }
    *bound = bound.max(v);
    true
}

/// Probe measures used to check parametric costs: simplex vertices, the
/// uniform law and a coarse simplex grid for small spaces.
pub(crate) fn probe_measures(size: usize) -> Vec<Vec<f64>> {
    let steps = match size {
        1 => 1,
        2 => 8,
        3 => 4,
        4 => 2,
        _ => 1,
    };
    let mut out = simplex_grid(size, steps);
    let uniform = vec![1.0 / size as f64; size];
    if !out.contains(&uniform) {
        out.push(uniform);
    }
    out
}

pub fn validate_static_spec(spec: &StaticGameSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_space(&mut report, "world", &spec.world);
    check_prior(&mut report, &spec.prior, &spec.world);
    for (i, team) in spec.teams.iter().enumerate() {
        let f = |s: &str| format!("teams[{i}].{s}");
        check_space(&mut report, &f("action_space"), &team.action_space);
        check_space(&mut report, &f("obs_space"), &team.obs_space);
        check_kernel(
            &mut report,
            &f("obs_kernel"),
            &team.obs_kernel,
            spec.world.size,
            team.obs_space.size,
        );
        if let Some(msg) = team.statistic.issue(team.action_space.size) {
            report.push(f("statistic"), msg);
        }
        if let Some(msg) = spec.cost[i].shape_issue(spec.world.size, team.action_space.size) {
            report.push(format!("cost[{i}]"), msg);
        }
    }
    if !report.is_valid() {
        return report;
    }

    for i in 0..2 {
        let field = format!("cost[{i}]");
        let mut bound: f64 = 0.0;
        if let Some(values) = spec.cost[i].table_values() {
            for v in values {
                if !check_cost_value(&mut report, &field, v, &mut bound) {
                    break;
                }
            }
        } else {
            let probes1 = probe_measures(spec.actions(0));
            let probes2 = probe_measures(spec.actions(1));
            'probe: for m1 in &probes1 {
                for m2 in &probes2 {
                    let stats = spec.stat_values(m1, m2);
                    for omega in 0..spec.worlds() {
                        for u in 0..spec.actions(i) {
                            let v = spec.cost_at(i, omega, u, &stats);
                            if !check_cost_value(&mut report, &field, v, &mut bound) {
                                break 'probe;
                            }
                        }
                    }
                }
            }
        }
        report.cost_bounds.push(bound);
    }
    report
}

pub fn validate_dynamic_spec(spec: &DynamicGameSpec) -> ValidationReport {
    let mut report = ValidationReport::default();
    check_space(&mut report, "world", &spec.world);
    check_prior(&mut report, &spec.prior, &spec.world);
    if spec.horizon == 0 {
        report.push("horizon", "horizon must be >= 1");
    }
    for (i, team) in spec.teams.iter().enumerate() {
        let f = |s: &str| format!("teams[{i}].{s}");
        check_space(&mut report, &f("state_space"), &team.state_space);
        check_space(&mut report, &f("action_space"), &team.action_space);
        check_space(&mut report, &f("obs_space"), &team.obs_space);
        let (nx, nu, ny) = (
            team.state_space.size,
            team.action_space.size,
            team.obs_space.size,
        );
        check_kernel(
            &mut report,
            &f("init_kernel"),
            &team.init_kernel,
            spec.world.size,
            nx,
        );
        match &team.obs_model {
            ObsModel::Fixed(k) => check_kernel(&mut report, &f("obs_model"), k, nx, ny),
            ObsModel::Staged(ks) => {
                if ks.len() != spec.horizon {
                    report.push(
                        f("obs_model"),
                        format!("has {} stages, horizon is {}", ks.len(), spec.horizon),
                    );
                }
                for (t, k) in ks.iter().enumerate() {
                    check_kernel(&mut report, &f(&format!("obs_model[{t}]")), k, nx, ny);
                }
            }
        }
        if let Some(msg) = team.state_statistic.issue(nx) {
            report.push(f("state_statistic"), msg);
        }
        if let Some(msg) = team.action_statistic.issue(nu) {
            report.push(f("action_statistic"), msg);
        }
        check_transition(
            &mut report,
            &f("transition"),
            &team.transition,
            team,
            spec.horizon,
        );
        check_stage_cost_shape(&mut report, &f("stage_cost"), spec, i);
    }
    if !report.is_valid() {
        return report;
    }

    for i in 0..2 {
        let field = format!("teams[{i}].stage_cost");
        let mut bound: f64 = 0.0;
        let px: Vec<_> = (0..2).map(|j| probe_measures(spec.states(j))).collect();
        let pu: Vec<_> = (0..2).map(|j| probe_measures(spec.actions(j))).collect();
        let stats_free = !spec.teams[i].stage_cost.uses_stats();
        'probe: for x1 in &px[0] {
            for x2 in &px[1] {
                for u1 in &pu[0] {
                    for u2 in &pu[1] {
                        let stats = spec.stage_stats([x1, x2], [u1, u2]);
                        for omega in 0..spec.worlds() {
                            for x in 0..spec.states(i) {
                                for u in 0..spec.actions(i) {
                                    let v = spec.stage_cost(i, omega, x, u, &stats);
                                    if !check_cost_value(&mut report, &field, v, &mut bound) {
                                        break 'probe;
                                    }
                                }
                            }
                        }
                        if stats_free {
                            break 'probe;
                        }
                    }
                }
            }
        }
        report.cost_bounds.push(bound);
    }
    report
}

fn check_rows(
    report: &mut ValidationReport,
    field: &str,
    rows: &[Vec<Vec<f64>>],
    nx: usize,
    nu: usize,
) {
    if rows.len() != nx || rows.iter().any(|r| r.len() != nu) {
        report.push(field, format!("table must be {nx}x{nu}x{nx}"));
        return;
    }
    for (x, per_u) in rows.iter().enumerate() {
        for (u, row) in per_u.iter().enumerate() {
            if row.len() != nx {
                report.push(field, format!("row ({x},{u}) has length {}", row.len()));
                return;
            }
            if let Some(msg) = ProbVec::new(row.clone()).err() {
                report.push(
                    field,
                    format!("transition row ({x},{u}) is not stochastic: {msg}"),
                );
                return;
            }
        }
    }
}

fn check_transition(
    report: &mut ValidationReport,
    field: &str,
    tr: &Transition,
    team: &DynTeamSpec,
    horizon: usize,
) {
    let (nx, nu) = (team.state_space.size, team.action_space.size);
    match tr {
        Transition::Table { probs } => check_rows(report, field, probs, nx, nu),
        Transition::StagedTable { stages } => {
            if stages.len() != horizon {
                report.push(
                    field,
                    format!("has {} stages, horizon is {horizon}", stages.len()),
                );
            }
            for (t, s) in stages.iter().enumerate() {
                check_rows(report, &format!("{field}[{t}]"), s, nx, nu);
            }
        }
        Transition::CopyAction { slip } => {
            if nx != nu {
                report.push(field, "copy-action needs equal state and action spaces");
            }
            if !(0.0..=1.0).contains(slip) {
                report.push(field, "slip must lie in [0, 1]");
            }
        }
        Transition::CongestionMove { success, penalty } => {
            if nx != nu {
                report.push(field, "congestion-move needs equal state and action spaces");
            }
            if !(0.0..=1.0).contains(success) || !(*penalty >= 0.0) {
                report.push(field, "success must lie in [0, 1] and penalty be >= 0");
            }
            if team.state_statistic != StatisticMap::Identity {
                report.push(field, "congestion-move needs an identity state statistic");
            }
        }
    }
}

fn check_stage_cost_shape(
    report: &mut ValidationReport,
    field: &str,
    spec: &DynamicGameSpec,
    i: usize,
) {
    let team = &spec.teams[i];
    let (nx, nu) = (team.state_space.size, team.action_space.size);
    match &team.stage_cost {
        StageCost::StateActionTable { values } => {
            if values.len() != spec.world.size
                || values
                    .iter()
                    .any(|w| w.len() != nx || w.iter().any(|r| r.len() != nu))
            {
                report.push(
                    field,
                    format!("table must be {}x{nx}x{nu}", spec.world.size),
                );
            }
        }
        StageCost::Congestion {
            cross_weight, base, ..
        } => {
            if team.state_statistic != StatisticMap::Identity {
                report.push(field, "congestion needs an identity state statistic");
            }
            if *cross_weight != 0.0
                && (spec.teams[1 - i].state_statistic != StatisticMap::Identity
                    || spec.teams[1 - i].state_space.size != nx)
            {
                report.push(
                    field,
                    "cross congestion needs matching identity state statistics",
                );
            }
            if let Some(b) = base {
                if b.len() != nx {
                    report.push(
                        field,
                        format!("base has {} entries for {nx} states", b.len()),
                    );
                }
            }
        }
        StageCost::ActionCoupled { cost } => {
            if let Some(msg) = cost.shape_issue(spec.world.size, nu) {
                report.push(field, msg);
            }
        }
        StageCost::Constant { .. } => {}
    }
}

/// Reads and parses a spec file, then validates it. A nonempty report is an
/// error unless `force` is set.
pub fn load_spec(path: &Path, force: bool) -> Result<(GameSpec, ValidationReport)> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let spec = GameSpec::from_json_str(&text, path)?;
    let report = spec.validate();
    if !report.is_valid() && !force {
        return Err(Error::Validation(report));
    }
    Ok((spec, report))
}
