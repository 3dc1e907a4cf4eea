//! Damped, smoothed best-response iteration shared by the static and
//! dynamic mean-field solvers.
//!
//! A point holds, per team, a list of kernels (one for static games, one
//! per stage for dynamic games). Each step computes the softmax response at
//! the current temperature and moves a fraction `damping` toward it. Once
//! the smoothed iteration settles at a temperature, the temperature is
//! annealed geometrically, eventually to zero (exact best responses).

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{renormalize, Kernel};

/// One kernel list per team.
pub type Profile = [Vec<Kernel>; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitPolicy {
    Uniform,
    /// Every observation mapped to this action.
    Action(usize),
    /// Rows drawn uniformly from the simplex.
    Random(u64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub damping: f64,
    pub tol: f64,
    pub max_iters: usize,
    /// Initial softmax temperature; 0 means exact best responses.
    pub smoothing: f64,
    /// Temperature multiplier applied whenever the smoothed iteration settles.
    pub anneal: f64,
    /// Temperatures below this are replaced by 0.
    pub min_temperature: f64,
    pub init: InitPolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            damping: 0.5,
            tol: 1e-6,
            max_iters: 10_000,
            smoothing: 1.0,
            anneal: 0.5,
            min_temperature: 1e-8,
            init: InitPolicy::Uniform,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "damping {} must lie in (0, 1]",
                self.damping
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "tol {} must be > 0",
                self.tol
            )));
        }
        if !(self.smoothing >= 0.0) || !self.smoothing.is_finite() {
            return Err(Error::InvalidConfig("smoothing must be >= 0".into()));
        }
        if !(self.anneal > 0.0 && self.anneal < 1.0) {
            return Err(Error::InvalidConfig(
                "anneal factor must lie in (0, 1)".into(),
            ));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Initial kernel of a team with the given shape.
pub fn initial_kernel(init: &InitPolicy, obs: usize, actions: usize, salt: u64) -> Result<Kernel> {
    let rows = match init {
        InitPolicy::Uniform => vec![vec![1.0 / actions as f64; actions]; obs],
        InitPolicy::Action(a) => {
            if *a >= actions {
                return Err(Error::InvalidConfig(format!(
                    "initial action {a} out of range for {actions} actions"
                )));
            }
            return Ok(Kernel::deterministic(&vec![*a; obs], actions));
        }
        InitPolicy::Random(seed) => {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15));
            (0..obs)
                .map(|_| {
                    let w: Vec<f64> = (0..actions)
                        .map(|_| -(1.0 - rng.gen::<f64>()).ln())
                        .collect();
                    renormalize(w)
                })
                .collect()
        }
    };
    Ok(Kernel::from_rows_unchecked(rows))
}

/// Softmax of `-scores / tau` (exact argmin with lowest-index ties when
/// `tau == 0`).
pub fn soft_argmin(scores: &[f64], tau: f64) -> Vec<f64> {
    let mut out = vec![0.0; scores.len()];
    let (best, min) = argmin(scores);
    if tau == 0.0 {
        out[best] = 1.0;
        return out;
    }
    for (o, s) in out.iter_mut().zip(scores) {
        *o = (-(s - min) / tau).exp();
    }
    renormalize(out)
}

/// Lowest index attaining the minimum, with the minimum.
pub fn argmin(scores: &[f64]) -> (usize, f64) {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if *s < scores[best] {
            best = i;
        }
    }
    (best, scores[best])
}

/// What a solver must supply to the iteration.
pub trait ResponseMap {
    /// Smoothed best responses of both teams against the mean fields
    /// generated by `x`.
    fn response(&self, x: &Profile, tau: f64) -> Profile;
    /// Exact best-response gaps of both teams at `x`.
    fn gaps(&self, x: &Profile) -> [f64; 2];
}

pub fn profile_distance(a: &Profile, b: &Profile) -> f64 {
    a.iter()
        .zip(b)
        .flat_map(|(ka, kb)| ka.iter().zip(kb).map(|(p, q)| p.max_row_tv(q)))
        .fold(0.0, f64::max)
}

fn mix(x: &Profile, r: &Profile, alpha: f64) -> Profile {
    let blend = |a: &Kernel, b: &Kernel| {
        Kernel::from_rows_unchecked(
            a.rows()
                .iter()
                .zip(b.rows())
                .map(|(p, q)| {
                    renormalize(
                        p.weights()
                            .iter()
                            .zip(q.weights())
                            .map(|(u, v)| (1.0 - alpha) * u + alpha * v)
                            .collect(),
                    )
                })
                .collect(),
        )
    };
    [
        x[0].iter().zip(&r[0]).map(|(a, b)| blend(a, b)).collect(),
        x[1].iter().zip(&r[1]).map(|(a, b)| blend(a, b)).collect(),
    ]
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub point: Profile,
    pub iterations: usize,
    pub converged: bool,
    pub temperature: f64,
    pub gaps: [f64; 2],
}

/// Smallest damping the step control shrinks to.
const MIN_DAMPING: f64 = 1e-12;

fn direction(x: &Profile, r: &Profile) -> Vec<f64> {
    x.iter()
        .zip(r)
        .flat_map(|(ka, kb)| ka.iter().zip(kb))
        .flat_map(|(a, b)| a.rows().iter().zip(b.rows()))
        .flat_map(|(p, q)| p.weights().iter().zip(q.weights()).map(|(u, v)| v - u))
        .collect()
}

/// Zeroes entries below `threshold` (renormalizing rows); `None` when
/// nothing changes. Converged points near a vertex are polished this way
/// so that pure equilibria come out exactly pure.
fn snap(x: &Profile, threshold: f64) -> Option<Profile> {
    let mut changed = false;
    let snapped = x.clone().map(|ks| {
        ks.into_iter()
            .map(|k| {
                let rows = k
                    .rows()
                    .iter()
                    .map(|r| {
                        let w: Vec<f64> = r
                            .weights()
                            .iter()
                            .map(|&v| if v < threshold && v != 0.0 { 0.0 } else { v })
                            .collect();
                        if w.as_slice() != r.weights() {
                            changed = true;
                        }
                        renormalize(w)
                    })
                    .collect();
                Kernel::from_rows_unchecked(rows)
            })
            .collect()
    });
    changed.then_some(snapped)
}

/// Runs the iteration from `x`. Convergence means both exact gaps are at
/// most `tol` at the returned point.
///
/// When two consecutive update directions point against each other the
/// iteration is overshooting, and the damping is halved. Steep smoothed
/// responses at low temperature need this to settle.
pub fn iterate(map: &impl ResponseMap, mut x: Profile, cfg: &SolverConfig) -> Outcome {
    let mut tau = cfg.smoothing;
    let mut alpha = cfg.damping;
    let mut prev_dir: Option<Vec<f64>> = None;
    let mut gaps = map.gaps(&x);
    for it in 1..=cfg.max_iters {
        if gaps[0].max(gaps[1]) <= cfg.tol {
            if let Some(p) = snap(&x, 10.0 * cfg.tol) {
                let g = map.gaps(&p);
                if g[0].max(g[1]) <= gaps[0].max(gaps[1]) {
                    x = p;
                    gaps = g;
                }
            }
            return Outcome {
                point: x,
                iterations: it,
                converged: true,
                temperature: tau,
                gaps,
            };
        }
        let r = map.response(&x, tau);
        let step = profile_distance(&x, &r);
        if step < cfg.tol {
            if tau == 0.0 {
                // exact best responses reproduce a non-equilibrium point
                break;
            }
            tau *= cfg.anneal;
            if tau < cfg.min_temperature {
                tau = 0.0;
            }
            prev_dir = None;
            continue;
        }
        let dir = direction(&x, &r);
        if let Some(prev) = &prev_dir {
            let dot: f64 = prev.iter().zip(&dir).map(|(a, b)| a * b).sum();
            if dot < 0.0 {
                alpha = (alpha * 0.5).max(MIN_DAMPING);
            }
        }
        prev_dir = Some(dir);
        x = mix(&x, &r, alpha);
        gaps = map.gaps(&x);
    }
    Outcome {
        point: x,
        iterations: cfg.max_iters,
        converged: gaps[0].max(gaps[1]) <= cfg.tol,
        temperature: tau,
        gaps,
    }
}
