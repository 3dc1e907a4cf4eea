//! Randomized team policies: private randomness (symmetric or per-DM
//! products), common randomness (finite mixtures over deterministic
//! profiles), permutations and exchangeability checks.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::prob::{tv_distance, Kernel, ProbVec, NORMALIZATION_TOL};

/// Default cap on the number of profiles in a mixture expansion.
pub const DEFAULT_SUPPORT_CAP: usize = 4096;

/// Largest team size for exhaustive permutation work.
pub const MAX_PERMUTATION_N: usize = 6;

/// A deterministic observation -> action map.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DetPolicy(pub Vec<usize>);

impl DetPolicy {
    pub fn act(&self, y: usize) -> usize {
        self.0[y]
    }

    pub fn to_kernel(&self, actions: usize) -> Kernel {
        Kernel::deterministic(&self.0, actions)
    }
}

/// A behavioral policy is a kernel from observations to actions.
pub type BehavioralPolicy = Kernel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureComponent {
    pub weight: f64,
    pub maps: Vec<DetPolicy>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TeamPolicy {
    /// Every DM draws independently from the same kernel.
    SymmetricIid { kernel: BehavioralPolicy },
    /// DM `k` draws independently from `kernels[k]`.
    Product { kernels: Vec<BehavioralPolicy> },
    /// A common random draw selects one deterministic profile.
    Mixture { profiles: Vec<MixtureComponent> },
}

/// A profile law: indexed deterministic profiles with merged weights.
pub type ProfileLaw = BTreeMap<Vec<DetPolicy>, f64>;

impl TeamPolicy {
    pub fn symmetric(kernel: BehavioralPolicy) -> Self {
        TeamPolicy::SymmetricIid { kernel }
    }

    pub fn pure(maps: Vec<DetPolicy>) -> Self {
        TeamPolicy::Mixture {
            profiles: vec![MixtureComponent { weight: 1.0, maps }],
        }
    }

    /// Team size fixed by the policy, if any.
    pub fn dm_count(&self) -> Option<usize> {
        match self {
            TeamPolicy::SymmetricIid { .. } => None,
            TeamPolicy::Product { kernels } => Some(kernels.len()),
            TeamPolicy::Mixture { profiles } => profiles.first().map(|c| c.maps.len()),
        }
    }

    /// Checks the policy against a team's spaces and size.
    pub fn check(&self, obs: usize, actions: usize, n: usize) -> Result<()> {
        let kernel_ok = |k: &Kernel| -> Result<()> {
            if let Some(msg) = k.issue() {
                return Err(Error::InvalidPolicy(msg));
            }
            if k.sources() != obs || k.targets() != actions {
                return Err(Error::InvalidPolicy(format!(
                    "kernel is {}x{}, team needs {obs}x{actions}",
                    k.sources(),
                    k.targets()
                )));
            }
            Ok(())
        };
        match self {
            TeamPolicy::SymmetricIid { kernel } => kernel_ok(kernel),
            TeamPolicy::Product { kernels } => {
                if kernels.len() != n {
                    return Err(Error::DimensionMismatch {
                        what: "product policy",
                        got: kernels.len(),
                        expected: n,
                    });
                }
                kernels.iter().try_for_each(kernel_ok)
            }
            TeamPolicy::Mixture { profiles } => {
                if profiles.is_empty() {
                    return Err(Error::InvalidPolicy("mixture has no profiles".into()));
                }
                let mut total = 0.0;
                for c in profiles {
                    if !(c.weight >= 0.0) || !c.weight.is_finite() {
                        return Err(Error::InvalidPolicy(format!("bad weight {}", c.weight)));
                    }
                    total += c.weight;
                    if c.maps.len() != n {
                        return Err(Error::DimensionMismatch {
                            what: "mixture profile",
                            got: c.maps.len(),
                            expected: n,
                        });
                    }
                    for m in &c.maps {
                        if m.0.len() != obs || m.0.iter().any(|&u| u >= actions) {
                            return Err(Error::InvalidPolicy(format!(
                                "map {:?} does not act on {obs} observations and {actions} actions",
                                m.0
                            )));
                        }
                    }
                }
                if (total - 1.0).abs() > NORMALIZATION_TOL {
                    return Err(Error::InvalidPolicy(format!(
                        "mixture weights sum to {total}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Mixture components as per-DM kernels: a product policy is a single
    /// component of weight one.
    pub fn components(&self, n: usize, actions: usize) -> Vec<(f64, Vec<Kernel>)> {
        match self {
            TeamPolicy::SymmetricIid { kernel } => vec![(1.0, vec![kernel.clone(); n])],
            TeamPolicy::Product { kernels } => vec![(1.0, kernels.clone())],
            TeamPolicy::Mixture { profiles } => profiles
                .iter()
                .filter(|c| c.weight > 0.0)
                .map(|c| {
                    (
                        c.weight,
                        c.maps.iter().map(|m| m.to_kernel(actions)).collect(),
                    )
                })
                .collect(),
        }
    }

    /// Marginal kernel of DM `k`.
    pub fn dm_kernel(&self, k: usize, actions: usize) -> Kernel {
        match self {
            TeamPolicy::SymmetricIid { kernel } => kernel.clone(),
            TeamPolicy::Product { kernels } => kernels[k].clone(),
            TeamPolicy::Mixture { profiles } => {
                let obs = profiles[0].maps[k].0.len();
                let mut rows = vec![vec![0.0; actions]; obs];
                for c in profiles {
                    for (y, &u) in c.maps[k].0.iter().enumerate() {
                        rows[y][u] += c.weight;
                    }
                }
                Kernel::from_rows_unchecked(
                    rows.into_iter().map(crate::prob::renormalize).collect(),
                )
            }
        }
    }

    /// Law of the action tuple given the observation tuple `ys`, indexed
    /// lexicographically with DM 0 most significant.
    pub fn action_tuple_law(&self, ys: &[usize], actions: usize) -> Vec<f64> {
        let n = ys.len();
        let size = actions.pow(n as u32);
        let mut out = vec![0.0; size];
        for (w, kernels) in self.components(n, actions) {
            for (idx, o) in out.iter_mut().enumerate() {
                let mut p = w;
                let mut rest = idx;
                for k in (0..n).rev() {
                    let u = rest % actions;
                    rest /= actions;
                    p *= kernels[k].prob(ys[k], u);
                    if p == 0.0 {
                        break;
                    }
                }
                *o += p;
            }
        }
        out
    }
}

fn support(row: &ProbVec) -> Vec<(usize, f64)> {
    row.weights()
        .iter()
        .enumerate()
        .filter(|(_, w)| **w > 0.0)
        .map(|(u, w)| (u, *w))
        .collect()
}

/// All deterministic maps in the support of `b`, with product weights, in
/// lexicographic order.
pub fn kernel_maps(b: &Kernel) -> Vec<(f64, DetPolicy)> {
    let mut out = vec![(1.0, Vec::new())];
    for y in 0..b.sources() {
        let sup = support(b.row(y));
        let mut next = Vec::with_capacity(out.len() * sup.len());
        for (w, map) in &out {
            for &(u, p) in &sup {
                let mut m = map.clone();
                m.push(u);
                next.push((w * p, m));
            }
        }
        out = next;
    }
    out.into_iter().map(|(w, m)| (w, DetPolicy(m))).collect()
}

fn support_size(b: &Kernel) -> u128 {
    b.rows()
        .iter()
        .map(|r| support(r).len() as u128)
        .fold(1u128, |a, s| a.saturating_mul(s))
}

/// Product of independent per-DM kernels flattened into one mixture.
fn product_to_mixture(kernels: &[Kernel], cap: usize) -> Result<Vec<MixtureComponent>> {
    let required = kernels
        .iter()
        .map(support_size)
        .fold(1u128, |a, s| a.saturating_mul(s));
    if required > cap as u128 {
        return Err(Error::SupportOverflow { required, cap });
    }
    let mut out = vec![MixtureComponent {
        weight: 1.0,
        maps: Vec::new(),
    }];
    for k in kernels {
        let maps = kernel_maps(k);
        let mut next = Vec::with_capacity(out.len() * maps.len());
        for c in &out {
            for (w, m) in &maps {
                let mut profile = c.maps.clone();
                profile.push(m.clone());
                next.push(MixtureComponent {
                    weight: c.weight * w,
                    maps: profile,
                });
            }
        }
        out = next;
    }
    Ok(out)
}

/// Realizes independent per-DM sampling from `b` as a mixture over
/// deterministic profiles inducing the same joint law.
pub fn behavioral_to_mixture(b: &BehavioralPolicy, n: usize, cap: usize) -> Result<TeamPolicy> {
    let profiles = product_to_mixture(&vec![b.clone(); n], cap)?;
    Ok(TeamPolicy::Mixture { profiles })
}

/// Any team policy as an explicit mixture.
pub fn to_mixture(p: &TeamPolicy, n: usize, cap: usize) -> Result<Vec<MixtureComponent>> {
    match p {
        TeamPolicy::SymmetricIid { kernel } => product_to_mixture(&vec![kernel.clone(); n], cap),
        TeamPolicy::Product { kernels } => product_to_mixture(kernels, cap),
        TeamPolicy::Mixture { profiles } => Ok(profiles.clone()),
    }
}

fn check_permutation(sigma: &[usize], n: usize) -> Result<()> {
    if sigma.len() != n {
        return Err(Error::DimensionMismatch {
            what: "permutation",
            got: sigma.len(),
            expected: n,
        });
    }
    let mut seen = vec![false; n];
    for &s in sigma {
        if s >= n || seen[s] {
            return Err(Error::InvalidConfig(format!(
                "{sigma:?} is not a permutation"
            )));
        }
        seen[s] = true;
    }
    Ok(())
}

fn permute_vec<T: Clone>(v: &[T], sigma: &[usize]) -> Vec<T> {
    sigma.iter().map(|&s| v[s].clone()).collect()
}

/// DM `k` of the result plays what DM `sigma[k]` played in `p`.
pub fn permute_profile(p: &TeamPolicy, sigma: &[usize]) -> Result<TeamPolicy> {
    match p {
        TeamPolicy::SymmetricIid { .. } => Ok(p.clone()),
        TeamPolicy::Product { kernels } => {
            check_permutation(sigma, kernels.len())?;
            Ok(TeamPolicy::Product {
                kernels: permute_vec(kernels, sigma),
            })
        }
        TeamPolicy::Mixture { profiles } => {
            let n = p.dm_count().unwrap_or(0);
            check_permutation(sigma, n)?;
            Ok(TeamPolicy::Mixture {
                profiles: profiles
                    .iter()
                    .map(|c| MixtureComponent {
                        weight: c.weight,
                        maps: permute_vec(&c.maps, sigma),
                    })
                    .collect(),
            })
        }
    }
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else {
            break;
        };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).unwrap();
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

fn merge(components: impl IntoIterator<Item = MixtureComponent>) -> ProfileLaw {
    let mut law = ProfileLaw::new();
    for c in components {
        if c.weight > 0.0 {
            *law.entry(c.maps).or_insert(0.0) += c.weight;
        }
    }
    law
}

/// Merged law over indexed profiles.
pub fn profile_law(p: &TeamPolicy, n: usize, cap: usize) -> Result<ProfileLaw> {
    Ok(merge(to_mixture(p, n, cap)?))
}

/// Total variation distance between two profile laws.
pub fn law_tv(a: &ProfileLaw, b: &ProfileLaw) -> f64 {
    let mut diff = 0.0;
    for (k, w) in a {
        diff += (w - b.get(k).copied().unwrap_or(0.0)).abs();
    }
    for (k, w) in b {
        if !a.contains_key(k) {
            diff += w.abs();
        }
    }
    0.5 * diff
}

/// Average of `p` over all permutations of its DMs, merged and sorted.
pub fn symmetrize(p: &TeamPolicy, n: usize) -> Result<TeamPolicy> {
    if n > MAX_PERMUTATION_N {
        return Err(Error::BudgetExceeded {
            what: "symmetrize",
            size: (1..=n as u128).product(),
            limit: 720,
            hint: "symmetrization is limited to N <= 6",
        });
    }
    let base = to_mixture(p, n, DEFAULT_SUPPORT_CAP)?;
    let perms = permutations(n);
    let scale = 1.0 / perms.len() as f64;
    let mut law = ProfileLaw::new();
    for sigma in &perms {
        for c in &base {
            if c.weight > 0.0 {
                *law.entry(permute_vec(&c.maps, sigma)).or_insert(0.0) += c.weight * scale;
            }
        }
    }
    Ok(TeamPolicy::Mixture {
        profiles: law
            .into_iter()
            .map(|(maps, weight)| MixtureComponent { weight, maps })
            .collect(),
    })
}

/// Whether the induced profile law is invariant under DM permutations,
/// up to `tol` in total variation.
pub fn is_exchangeable(p: &TeamPolicy, tol: f64) -> bool {
    match p {
        TeamPolicy::SymmetricIid { .. } => true,
        TeamPolicy::Product { kernels } => {
            kernels.windows(2).all(|w| w[0].max_row_tv(&w[1]) <= tol)
        }
        TeamPolicy::Mixture { profiles } => {
            let n = p.dm_count().unwrap_or(0);
            if n <= 1 {
                return true;
            }
            let law = merge(profiles.iter().cloned());
            // transposition (0 1) and the n-cycle generate the symmetric
            // group, so checking them suffices for large teams
            let sigmas = if n <= MAX_PERMUTATION_N {
                permutations(n)
            } else {
                let mut swap: Vec<usize> = (0..n).collect();
                swap.swap(0, 1);
                let cycle: Vec<usize> = (0..n).map(|k| (k + 1) % n).collect();
                vec![swap, cycle]
            };
            sigmas.iter().all(|sigma| {
                let permuted = merge(profiles.iter().map(|c| MixtureComponent {
                    weight: c.weight,
                    maps: permute_vec(&c.maps, sigma),
                }));
                law_tv(&law, &permuted) <= tol
            })
        }
    }
}

fn draw_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64>, rng: &mut R) -> usize {
    let r: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if r < acc {
            return i;
        }
    }
    last
}

/// Draws an action from a row by inverse CDF in index order.
pub fn sample_row<R: Rng + ?Sized>(row: &ProbVec, rng: &mut R) -> usize {
    draw_index(row.weights().iter().copied(), rng)
}

/// Realizes one deterministic profile: a mixture draws one component by
/// weight (inverse CDF in input order); private randomization draws every
/// DM's action for every observation independently.
pub fn sample_profile<R: Rng + ?Sized>(p: &TeamPolicy, n: usize, rng: &mut R) -> Vec<DetPolicy> {
    match p {
        TeamPolicy::Mixture { profiles } => {
            let i = draw_index(profiles.iter().map(|c| c.weight), rng);
            profiles[i].maps.clone()
        }
        _ => (0..n)
            .map(|k| {
                let kernel = match p {
                    TeamPolicy::SymmetricIid { kernel } => kernel,
                    TeamPolicy::Product { kernels } => &kernels[k],
                    TeamPolicy::Mixture { .. } => unreachable!(),
                };
                DetPolicy(kernel.rows().iter().map(|r| sample_row(r, rng)).collect())
            })
            .collect(),
    }
}

/// Smallest TV distance, maximized over observation tuples, between the
/// action-tuple laws of `p` and of symmetric-iid policies whose kernels
/// range over a simplex grid with `steps` steps per row.
pub fn min_tv_to_symmetric_iid(
    p: &TeamPolicy,
    n: usize,
    obs: usize,
    actions: usize,
    steps: usize,
) -> f64 {
    let rows = crate::prob::simplex_grid(actions, steps);
    let obs_tuples = tuples(obs, n);
    let targets: Vec<Vec<f64>> = obs_tuples
        .iter()
        .map(|ys| p.action_tuple_law(ys, actions))
        .collect();
    let mut best = f64::INFINITY;
    let mut idx = vec![0usize; obs];
    loop {
        let kernel = Kernel::from_rows_unchecked(idx.iter().map(|&i| rows[i].clone()).collect());
        let iid = TeamPolicy::symmetric(kernel);
        let dist = obs_tuples
            .iter()
            .zip(&targets)
            .map(|(ys, t)| tv_distance(&iid.action_tuple_law(ys, actions), t))
            .fold(0.0, f64::max);
        best = best.min(dist);
        if !advance(&mut idx, rows.len()) {
            break;
        }
    }
    best
}

/// All tuples of length `n` over `0..base`, lexicographic.
pub fn tuples(base: usize, n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = vec![0usize; n];
    loop {
        out.push(cur.clone());
        if !advance(&mut cur, base) {
            break;
        }
    }
    out
}

/// Odometer increment with the last position fastest; false on wrap.
pub(crate) fn advance(digits: &mut [usize], base: usize) -> bool {
    for d in digits.iter_mut().rev() {
        *d += 1;
        if *d < base {
            return true;
        }
        *d = 0;
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn d(m: &[usize]) -> DetPolicy {
        DetPolicy(m.to_vec())
    }

    fn mix(parts: &[(f64, &[&[usize]])]) -> TeamPolicy {
        TeamPolicy::Mixture {
            profiles: parts
                .iter()
                .map(|(w, maps)| MixtureComponent {
                    weight: *w,
                    maps: maps.iter().map(|m| d(m)).collect(),
                })
                .collect(),
        }
    }

    #[test]
    fn deterministic_kernel_gives_single_profile() {
        let b = Kernel::deterministic(&[1, 0], 2);
        let TeamPolicy::Mixture { profiles } = behavioral_to_mixture(&b, 2, 4096).unwrap() else {
            panic!()
        };
        assert_eq!(profiles.len(), 1);
        assert_eq!(profiles[0].weight, 1.0);
        assert_eq!(profiles[0].maps, vec![d(&[1, 0]), d(&[1, 0])]);
    }

    #[test]
    fn uniform_kernel_enumerates_maps() {
        let b = Kernel::constant(1, ProbVec::uniform(2));
        let TeamPolicy::Mixture { profiles } = behavioral_to_mixture(&b, 1, 4096).unwrap() else {
            panic!()
        };
        let w: Vec<f64> = profiles.iter().map(|c| c.weight).collect();
        assert_eq!(w, vec![0.5, 0.5]);

        let b = Kernel::constant(2, ProbVec::uniform(2));
        let m = behavioral_to_mixture(&b, 1, 4096).unwrap();
        let TeamPolicy::Mixture { profiles } = &m else {
            panic!()
        };
        assert_eq!(profiles.len(), 4);
        assert!(profiles.iter().all(|c| c.weight == 0.25));
        assert_eq!(m.dm_kernel(0, 2), b);
    }

    #[test]
    fn support_overflow_reports_budget() {
        let b = Kernel::constant(3, ProbVec::uniform(2));
        match behavioral_to_mixture(&b, 5, 4096) {
            Err(Error::SupportOverflow { required, cap }) => {
                assert_eq!(required, 1 << 15);
                assert_eq!(cap, 4096);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn permute_examples() {
        let p = mix(&[(1.0, &[&[0], &[1]])]);
        assert_eq!(permute_profile(&p, &[0, 1]).unwrap(), p);
        assert_eq!(
            permute_profile(&p, &[1, 0]).unwrap(),
            mix(&[(1.0, &[&[1], &[0]])])
        );
        let s = TeamPolicy::symmetric(Kernel::identity(2));
        assert_eq!(permute_profile(&s, &[1, 0]).unwrap(), s);
        assert!(permute_profile(&p, &[0]).is_err());
        assert!(permute_profile(&p, &[0, 0]).is_err());
    }

    #[test]
    fn symmetrize_examples() {
        let p = mix(&[(1.0, &[&[0], &[1]])]);
        assert_eq!(
            symmetrize(&p, 2).unwrap(),
            mix(&[(0.5, &[&[0], &[1]]), (0.5, &[&[1], &[0]])])
        );

        let a = Kernel::deterministic(&[0], 2);
        let b = Kernel::deterministic(&[1], 2);
        let prod = TeamPolicy::Product {
            kernels: vec![a.clone(), a, b],
        };
        let TeamPolicy::Mixture { profiles } = symmetrize(&prod, 3).unwrap() else {
            panic!()
        };
        assert_eq!(profiles.len(), 3);
        for c in &profiles {
            assert!((c.weight - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(symmetrize(&prod, 7).is_err());
    }

    #[test]
    fn exchangeability_examples() {
        assert!(is_exchangeable(
            &TeamPolicy::symmetric(Kernel::identity(2)),
            1e-12
        ));
        let p = mix(&[(1.0, &[&[0], &[1]])]);
        assert!(!is_exchangeable(&p, 1e-12));
        assert!(is_exchangeable(&symmetrize(&p, 2).unwrap(), 1e-12));
    }

    #[test]
    fn permutation_listing() {
        assert_eq!(permutations(3).len(), 6);
        assert_eq!(permutations(3)[1], vec![0, 2, 1]);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn sampling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let single = mix(&[(1.0, &[&[1], &[0]])]);
        let first = mix(&[(1.0, &[&[1], &[0]]), (0.0, &[&[0], &[0]])]);
        for _ in 0..100 {
            assert_eq!(sample_profile(&single, 2, &mut rng), vec![d(&[1]), d(&[0])]);
            assert_eq!(sample_profile(&first, 2, &mut rng), vec![d(&[1]), d(&[0])]);
        }
        let half = mix(&[(0.5, &[&[0]]), (0.5, &[&[1]])]);
        let draws = 10_000;
        let hits = (0..draws)
            .filter(|_| sample_profile(&half, 1, &mut rng)[0] == d(&[0]))
            .count();
        // 3 sigma of a binomial(1e4, 0.5) frequency is 0.015
        assert!((hits as f64 / draws as f64 - 0.5).abs() <= 0.02);
    }

    #[test]
    fn anticorrelated_mixture_is_not_iid() {
        let p = mix(&[(0.5, &[&[0], &[1]]), (0.5, &[&[1], &[0]])]);
        assert!(is_exchangeable(&p, 1e-12));
        let dist = min_tv_to_symmetric_iid(&p, 2, 1, 2, 100);
        assert!((dist - 0.5).abs() < 1e-12, "{dist}");
    }

    fn kernel_strategy(obs: usize, actions: usize) -> impl Strategy<Value = Kernel> {
        proptest::collection::vec(proptest::collection::vec(0u32..4, actions), obs).prop_map(
            move |rows| {
                Kernel::from_rows_unchecked(
                    rows.into_iter()
                        .map(|r| {
                            let r: Vec<f64> = r.into_iter().map(f64::from).collect();
                            let s: f64 = r.iter().sum();
                            if s == 0.0 {
                                vec![1.0 / actions as f64; actions]
                            } else {
                                r.iter().map(|x| x / s).collect()
                            }
                        })
                        .collect(),
                )
            },
        )
    }

    fn product_strategy(n: usize) -> impl Strategy<Value = TeamPolicy> {
        proptest::collection::vec(kernel_strategy(2, 2), n)
            .prop_map(|kernels| TeamPolicy::Product { kernels })
    }

    proptest! {
        #[test]
        fn symmetrize_is_idempotent(p in product_strategy(3)) {
            let once = symmetrize(&p, 3).unwrap();
            let twice = symmetrize(&once, 3).unwrap();
            let a = profile_law(&once, 3, 4096).unwrap();
            let b = profile_law(&twice, 3, 4096).unwrap();
            prop_assert!(law_tv(&a, &b) <= 1e-12);
            prop_assert!(is_exchangeable(&once, 1e-12));
        }

        #[test]
        fn permute_then_inverse_is_identity(p in product_strategy(3), which in 0usize..6) {
            let sigma = &permutations(3)[which];
            let mut inverse = vec![0; 3];
            for (k, &s) in sigma.iter().enumerate() {
                inverse[s] = k;
            }
            let back = permute_profile(&permute_profile(&p, sigma).unwrap(), &inverse).unwrap();
            let a = profile_law(&p, 3, 4096).unwrap();
            let b = profile_law(&back, 3, 4096).unwrap();
            prop_assert!(law_tv(&a, &b) <= 1e-12);
        }

        #[test]
        fn mixture_round_trip_reproduces_kernel(b in kernel_strategy(2, 3), n in 1usize..3) {
            let m = behavioral_to_mixture(&b, n, 4096).unwrap();
            for k in 0..n {
                let back = m.dm_kernel(k, 3);
                for y in 0..2 {
                    for u in 0..3 {
                        prop_assert!((back.prob(y, u) - b.prob(y, u)).abs() <= 1e-12);
                    }
                }
            }
        }
    }
}
