//! Cost and transition families.
//!
//! Costs are never arbitrary code: a spec names one of the parametric
//! families below or supplies a dense table over a grid of statistic values
//! (multilinear interpolation between grid points). Every family reads the
//! mean-field terms only through [`StatValue`]s.

use serde::{Deserialize, Serialize};

use crate::statistic::StatValue;

/// Which team's statistic a parametric family tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    Own,
    Opponent,
}

impl Target {
    fn pick(self, team: usize, stats: [&StatValue; 2]) -> &StatValue {
        match self {
            Target::Own => stats[team],
            Target::Opponent => stats[1 - team],
        }
    }
}

fn one() -> f64 {
    1.0
}

/// One axis of a statistic grid: `points` equally spaced values on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl GridAxis {
    /// Lower grid index and interpolation weight of the upper neighbour.
    fn locate(&self, v: f64) -> (usize, f64) {
        if self.points <= 1 || self.hi <= self.lo {
            return (0, 0.0);
        }
        let pos = ((v - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) * (self.points - 1) as f64;
        let i = (pos.floor() as usize).min(self.points - 2);
        (i, pos - i as f64)
    }
}

/// Static per-DM cost `c(omega, u, s1, s2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum StaticCost {
    Constant {
        value: f64,
    },
    /// `offset + scale * (u - mean(s_opponent))^2`.
    TrackOpponentMean {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset + scale * (u - mean(s_own))^2`.
    #[serde(alias = "team-coordination")]
    TrackOwnMean {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default)]
        offset: f64,
    },
    /// `offset - scale * (u - mean(s_opponent))^2`.
    EvadeOpponentMean {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        offset: f64,
    },
    /// `offset - scale * |u - mean(s_target)|`.
    Spread {
        #[serde(default = "one")]
        scale: f64,
        #[serde(default = "one")]
        offset: f64,
        #[serde(default = "own")]
        target: Target,
    },
    /// Dense table `values[omega][u][g1][g2]` over the grid of the two
    /// teams' scalar statistic summaries, interpolated bilinearly.
    Table {
        axes: [GridAxis; 2],
        values: Vec<Vec<Vec<Vec<f64>>>>,
    },
}

fn own() -> Target {
    Target::Own
}

impl StaticCost {
    /// `action_value` is the deviating DM's action mapped through its own
    /// team's statistic (index for identity statistics).
    pub fn eval(
        &self,
        team: usize,
        omega: usize,
        u: usize,
        action_value: f64,
        stats: [&StatValue; 2],
    ) -> f64 {
        match self {
            StaticCost::Constant { value } => *value,
            StaticCost::TrackOpponentMean { scale, offset } => {
                let d = action_value - Target::Opponent.pick(team, stats).mean();
                offset + scale * d * d
            }
            StaticCost::TrackOwnMean { scale, offset } => {
                let d = action_value - Target::Own.pick(team, stats).mean();
                offset + scale * d * d
            }
            StaticCost::EvadeOpponentMean { scale, offset } => {
                let d = action_value - Target::Opponent.pick(team, stats).mean();
                offset - scale * d * d
            }
            StaticCost::Spread {
                scale,
                offset,
                target,
            } => {
                let d = action_value - target.pick(team, stats).mean();
                offset - scale * d.abs()
            }
            StaticCost::Table { axes, values } => {
                let (i, a) = axes[0].locate(stats[0].mean());
                let (j, b) = axes[1].locate(stats[1].mean());
                let t = &values[omega][u];
                let at = |r: usize, c: usize| {
                    let row = &t[r.min(t.len() - 1)];
                    row[c.min(row.len() - 1)]
                };
                (1.0 - a) * (1.0 - b) * at(i, j)
                    + a * (1.0 - b) * at(i + 1, j)
                    + (1.0 - a) * b * at(i, j + 1)
                    + a * b * at(i + 1, j + 1)
            }
        }
    }

    /// Whether the value can change with the statistics.
    pub fn uses_stats(&self) -> bool {
        !matches!(self, StaticCost::Constant { .. })
    }

    /// Problems detectable without evaluating, e.g. table shape.
    pub fn shape_issue(&self, worlds: usize, actions: usize) -> Option<String> {
        match self {
            StaticCost::Table { axes, values } => {
                if axes.iter().any(|a| a.points == 0 || !(a.hi >= a.lo)) {
                    return Some("grid axes need points >= 1 and hi >= lo".into());
                }
                if values.len() != worlds {
                    return Some(format!(
                        "table has {} world slices, expected {worlds}",
                        values.len()
                    ));
                }
                for w in values {
                    if w.len() != actions {
                        return Some(format!(
                            "table has {} action slices, expected {actions}",
                            w.len()
                        ));
                    }
                    for grid in w {
                        if grid.len() != axes[0].points
                            || grid.iter().any(|r| r.len() != axes[1].points)
                        {
                            return Some("table grid does not match its axes".into());
                        }
                    }
                }
                None
            }
            _ => None,
        }
    }

    /// Table entries, for exact sign checks.
    pub fn table_values(&self) -> Option<impl Iterator<Item = f64> + '_> {
        match self {
            StaticCost::Table { values, .. } => {
                Some(values.iter().flatten().flatten().flatten().copied())
            }
            _ => None,
        }
    }
}

/// Stage cost `c(omega, x, u, s1_x, s2_x, s1_u, s2_u)` of the dynamic game.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum StageCost {
    Constant {
        value: f64,
    },
    /// Statistic-free `values[omega][x][u]`.
    StateActionTable {
        values: Vec<Vec<Vec<f64>>>,
    },
    /// `base[x] + own_weight * mu_own(x) + cross_weight * mu_opp(x)` where the
    /// measures are the state-statistic values (identity statistics).
    Congestion {
        #[serde(default = "one")]
        own_weight: f64,
        #[serde(default)]
        cross_weight: f64,
        #[serde(default)]
        base: Option<Vec<f64>>,
    },
    /// A static family evaluated on the action and the action statistics.
    ActionCoupled {
        cost: StaticCost,
    },
}

/// Statistic values of both teams at one stage.
#[derive(Debug, Clone)]
pub struct StageStats {
    pub state: [StatValue; 2],
    pub action: [StatValue; 2],
}

impl StageCost {
    pub fn eval(
        &self,
        team: usize,
        omega: usize,
        x: usize,
        u: usize,
        action_value: f64,
        stats: &StageStats,
    ) -> f64 {
        match self {
            StageCost::Constant { value } => *value,
            StageCost::StateActionTable { values } => values[omega][x][u],
            StageCost::Congestion {
                own_weight,
                cross_weight,
                base,
            } => {
                let mass =
                    |s: &StatValue| s.measure().and_then(|m| m.get(x).copied()).unwrap_or(0.0);
                let b = base.as_ref().map_or(0.0, |b| b[x]);
                b + own_weight * mass(&stats.state[team])
                    + cross_weight * mass(&stats.state[1 - team])
            }
            StageCost::ActionCoupled { cost } => cost.eval(
                team,
                omega,
                u,
                action_value,
                [&stats.action[0], &stats.action[1]],
            ),
        }
    }

    /// Whether actions (own or via action statistics) can change the value.
    pub fn uses_actions(&self) -> bool {
        match self {
            StageCost::Constant { .. } | StageCost::Congestion { .. } => false,
            StageCost::StateActionTable { values } => values
                .iter()
                .flatten()
                .any(|row| row.iter().any(|v| *v != row[0])),
            StageCost::ActionCoupled { cost } => !matches!(cost, StaticCost::Constant { .. }),
        }
    }

    pub fn uses_stats(&self) -> bool {
        match self {
            StageCost::Constant { .. } | StageCost::StateActionTable { .. } => false,
            StageCost::Congestion { .. } => true,
            StageCost::ActionCoupled { cost } => cost.uses_stats(),
        }
    }
}

/// Transition law `P(x' | x, u, statistics, t)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Transition {
    /// Time-invariant `probs[x][u][x']`.
    Table { probs: Vec<Vec<Vec<f64>>> },
    /// `stages[t][x][u][x']`.
    StagedTable { stages: Vec<Vec<Vec<Vec<f64>>>> },
    /// Moves to the chosen action's state with probability `1 - slip`,
    /// otherwise stays. Requires identical state and action spaces.
    CopyAction {
        #[serde(default)]
        slip: f64,
    },
    /// Moves to state `u` with probability
    /// `clamp(success - penalty * mu_own(u), 0, 1)`, otherwise stays.
    CongestionMove { success: f64, penalty: f64 },
}

impl Transition {
    /// Writes the law of the next state into `out` (length = state count).
    pub fn next_law_into(
        &self,
        team: usize,
        t: usize,
        x: usize,
        u: usize,
        stats: &StageStats,
        out: &mut [f64],
    ) {
        match self {
            Transition::Table { probs } => out.copy_from_slice(&probs[x][u]),
            Transition::StagedTable { stages } => {
                let stage = &stages[t.min(stages.len() - 1)];
                out.copy_from_slice(&stage[x][u]);
            }
            Transition::CopyAction { slip } => {
                out.iter_mut().for_each(|o| *o = 0.0);
                out[u] += 1.0 - slip;
                out[x] += slip;
            }
            Transition::CongestionMove { success, penalty } => {
                let crowd = stats.state[team]
                    .measure()
                    .and_then(|m| m.get(u).copied())
                    .unwrap_or(0.0);
                let p = (success - penalty * crowd).clamp(0.0, 1.0);
                out.iter_mut().for_each(|o| *o = 0.0);
                out[u] += p;
                out[x] += 1.0 - p;
            }
        }
    }

    pub fn uses_stats(&self) -> bool {
        matches!(self, Transition::CongestionMove { .. })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(p: &[f64]) -> StatValue {
        StatValue::Measure(p.to_vec())
    }

    #[test]
    fn track_opponent_mean_examples() {
        let c = StaticCost::TrackOpponentMean {
            scale: 1.0,
            offset: 0.0,
        };
        let own = m(&[1.0, 0.0]);
        assert_eq!(c.eval(0, 0, 1, 1.0, [&own, &m(&[1.0, 0.0])]), 1.0);
        assert_eq!(c.eval(0, 0, 0, 0.0, [&own, &m(&[0.5, 0.5])]), 0.25);
    }

    #[test]
    fn constant_family() {
        let c = StaticCost::Constant { value: 3.0 };
        let s = m(&[0.2, 0.8]);
        assert_eq!(c.eval(1, 0, 1, 1.0, [&s, &s]), 3.0);
    }

    #[test]
    fn table_interpolates_bilinearly() {
        let axis = GridAxis {
            lo: 0.0,
            hi: 1.0,
            points: 2,
        };
        // f(a, b) = a + 2b on the unit square corners
        let grid = vec![vec![0.0, 2.0], vec![1.0, 3.0]];
        let c = StaticCost::Table {
            axes: [axis.clone(), axis],
            values: vec![vec![grid]],
        };
        let v = c.eval(
            0,
            0,
            0,
            0.0,
            [&StatValue::Scalar(0.25), &StatValue::Scalar(0.5)],
        );
        assert!((v - 1.25).abs() < 1e-15);
        // clamps outside the grid
        let v = c.eval(
            0,
            0,
            0,
            0.0,
            [&StatValue::Scalar(2.0), &StatValue::Scalar(-1.0)],
        );
        assert_eq!(v, 1.0);
    }

    #[test]
    fn copy_action_with_slip() {
        let stats = StageStats {
            state: [m(&[0.5, 0.5]), m(&[0.5, 0.5])],
            action: [m(&[0.5, 0.5]), m(&[0.5, 0.5])],
        };
        let mut out = [0.0; 2];
        Transition::CopyAction { slip: 0.1 }.next_law_into(0, 0, 0, 1, &stats, &mut out);
        assert_eq!(out, [0.1, 0.9]);
        Transition::CopyAction { slip: 0.1 }.next_law_into(0, 0, 1, 1, &stats, &mut out);
        assert_eq!(out, [0.0, 1.0]);
    }

    #[test]
    fn congestion_reads_state_measures() {
        let stats = StageStats {
            state: [m(&[0.25, 0.75]), m(&[0.6, 0.4])],
            action: [m(&[1.0, 0.0]), m(&[1.0, 0.0])],
        };
        let c = StageCost::Congestion {
            own_weight: 1.0,
            cross_weight: 0.5,
            base: None,
        };
        assert!((c.eval(0, 0, 1, 0, 0.0, &stats) - (0.75 + 0.2)).abs() < 1e-15);
        assert!((c.eval(1, 0, 0, 0, 0.0, &stats) - (0.6 + 0.125)).abs() < 1e-15);
    }
}
