//! Shapley attribution over region coalitions.
//!
//! [`exact_shapley`] enumerates all 2^n coalitions; [`sampled_shapley`] averages
//! marginal contributions along seeded random permutations. Each sampled
//! permutation telescopes to v(N) − v(∅), so the estimate is efficient for any
//! number of permutations.

use std::sync::atomic::{AtomicUsize, Ordering};

use dashmap::DashMap;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{mask_with_point, Coalition, Point, PointCloud, RegionPartition, MAX_REGIONS};
use crate::model::{EmbeddingProjection, ModelOracle, RewardKind, RewardSpec};
use crate::{Error, Result};

/// Largest player count accepted by [`exact_shapley`].
pub const EXACT_LIMIT: usize = 12;

/// A cooperative game over `players()` players.
pub trait Game: Sync {
    fn players(&self) -> usize;

    fn value(&self, s: Coalition) -> Result<f64>;

    /// Batch evaluation; implementations backed by a model override this to
    /// send one request per batch.
    fn values(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        coalitions.iter().map(|&s| self.value(s)).collect()
    }
}

impl<G: Game + ?Sized> Game for &G {
    fn players(&self) -> usize {
        (**self).players()
    }
    fn value(&self, s: Coalition) -> Result<f64> {
        (**self).value(s)
    }
    fn values(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        (**self).values(coalitions)
    }
}

/// A game given by its full value table, indexed by coalition bits.
#[derive(Debug, Clone, PartialEq)]
pub struct TableGame {
    n: usize,
    table: Vec<f64>,
}

impl TableGame {
    pub fn new(n: usize, table: Vec<f64>) -> Result<Self> {
        if n > 24 || table.len() != 1 << n {
            return Err(Error::arg("table length must be 2^n with n <= 24"));
        }
        Ok(Self { n, table })
    }

    pub fn from_fn(n: usize, f: impl Fn(Coalition) -> f64) -> Self {
        Self {
            n,
            table: (0..1u64 << n).map(|bits| f(Coalition(bits))).collect(),
        }
    }

    /// Coalition values drawn uniformly from [0, 1).
    pub fn random(n: usize, seed: u64) -> Self {
        let mut rng = crate::seed::rng(seed, &[]);
        Self {
            n,
            table: (0..1u64 << n).map(|_| rng.random::<f64>()).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            n: self.n,
            table: self.table.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sum(&self, other: &Self) -> Self {
        assert_eq!(self.n, other.n);
        Self {
            n: self.n,
            table: self.table.iter().zip(&other.table).map(|(a, b)| a + b).collect(),
        }
    }
}

impl Game for TableGame {
    fn players(&self) -> usize {
        self.n
    }
    fn value(&self, s: Coalition) -> Result<f64> {
        Ok(self.table[s.0 as usize])
    }
}

/// Precomputed region-wise max-pooled features for models exposing
/// [`crate::model::PooledModel`].
struct PooledRegions {
    region_max: Vec<Vec<f64>>,
    mask_feature: Vec<f64>,
}

/// The game v(S) of one (transformed) cloud: regions outside S are moved to
/// the cloud centroid and the model output is turned into a reward.
/// Coalition values are memoized.
pub struct GameContext<'a> {
    oracle: &'a dyn ModelOracle,
    reward: RewardSpec,
    cloud: PointCloud,
    partition: &'a RegionPartition,
    mask_point: Point,
    memo: DashMap<u64, f64>,
    oracle_calls: AtomicUsize,
    pooled: Option<PooledRegions>,
    projection: Option<EmbeddingProjection>,
}

impl<'a> GameContext<'a> {
    pub fn new(
        oracle: &'a dyn ModelOracle,
        reward: RewardSpec,
        cloud: PointCloud,
        partition: &'a RegionPartition,
    ) -> Result<Self> {
        reward.validate()?;
        if !partition.fits(&cloud) {
            return Err(Error::Partition("partition does not match cloud".into()));
        }
        let mask_point = cloud.centroid();
        let pooled = oracle.pooled().map(|pm| {
            let dim = pm.feature_dim();
            let feats = pm.point_features(&cloud.points);
            let region_max = (0..partition.n())
                .map(|r| {
                    let mut m = vec![f64::NEG_INFINITY; dim];
                    for &k in partition.members(r) {
                        for (a, b) in m.iter_mut().zip(&feats[k * dim..(k + 1) * dim]) {
                            if *b > *a {
                                *a = *b;
                            }
                        }
                    }
                    m
                })
                .collect();
            PooledRegions {
                region_max,
                mask_feature: pm.point_features(&[mask_point]),
            }
        });
        let mut ctx = Self {
            oracle,
            reward,
            cloud,
            partition,
            mask_point,
            memo: DashMap::new(),
            oracle_calls: AtomicUsize::new(0),
            pooled,
            projection: None,
        };
        if reward.kind == RewardKind::EmbeddingProjection {
            let n = ctx.players();
            let z = ctx.embeddings(&[Coalition::full(n), Coalition::EMPTY])?;
            ctx.projection = Some(EmbeddingProjection::new(&z[0], &z[1])?);
        }
        Ok(ctx)
    }

    pub fn cloud(&self) -> &PointCloud {
        &self.cloud
    }

    pub fn partition(&self) -> &RegionPartition {
        self.partition
    }

    /// The coordinates masked points are moved to.
    pub fn mask_point(&self) -> Point {
        self.mask_point
    }

    /// Number of coalitions sent to the model so far.
    pub fn oracle_calls(&self) -> usize {
        self.oracle_calls.load(Ordering::Relaxed)
    }

    pub fn masked_cloud(&self, s: Coalition) -> PointCloud {
        mask_with_point(&self.cloud, self.partition, s, self.mask_point)
    }

    fn pooled_vector(&self, pr: &PooledRegions, s: Coalition) -> Vec<f64> {
        let n = self.players();
        let mut v = if s == Coalition::full(n) {
            vec![f64::NEG_INFINITY; pr.mask_feature.len()]
        } else {
            pr.mask_feature.clone()
        };
        for r in s.members() {
            for (a, b) in v.iter_mut().zip(&pr.region_max[r]) {
                if *b > *a {
                    *a = *b;
                }
            }
        }
        v
    }

    fn embeddings(&self, coalitions: &[Coalition]) -> Result<Vec<Vec<f64>>> {
        if let Some(pr) = &self.pooled {
            return Ok(coalitions.iter().map(|&s| self.pooled_vector(pr, s)).collect());
        }
        let clouds: Vec<PointCloud> = coalitions.iter().map(|&s| self.masked_cloud(s)).collect();
        self.oracle.embed(&clouds)
    }

    fn evaluate_uncached(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        self.oracle_calls.fetch_add(coalitions.len(), Ordering::Relaxed);
        if let Some(proj) = &self.projection {
            return Ok(self.embeddings(coalitions)?.iter().map(|z| proj.value(z)).collect());
        }
        let probs = match (&self.pooled, self.oracle.pooled()) {
            (Some(pr), Some(pm)) => coalitions.iter().map(|&s| pm.head_probs(&self.pooled_vector(pr, s))).collect(),
            _ => {
                let clouds: Vec<PointCloud> = coalitions.iter().map(|&s| self.masked_cloud(s)).collect();
                self.oracle.evaluate(&clouds)?
            }
        };
        probs.iter().map(|p| self.reward.from_probs(p)).collect()
    }
}

impl Game for GameContext<'_> {
    fn players(&self) -> usize {
        self.partition.n()
    }

    fn value(&self, s: Coalition) -> Result<f64> {
        Ok(self.values(&[s])?[0])
    }

    fn values(&self, coalitions: &[Coalition]) -> Result<Vec<f64>> {
        let mut out: Vec<Option<f64>> = coalitions.iter().map(|s| self.memo.get(&s.0).map(|v| *v)).collect();
        let mut missing: Vec<Coalition> = coalitions
            .iter()
            .zip(&out)
            .filter(|(_, v)| v.is_none())
            .map(|(s, _)| *s)
            .collect();
        missing.sort_unstable();
        missing.dedup();
        if !missing.is_empty() {
            let vals = self.evaluate_uncached(&missing)?;
            for (s, v) in missing.iter().zip(&vals) {
                self.memo.insert(s.0, *v);
            }
            for (slot, s) in out.iter_mut().zip(coalitions) {
                if slot.is_none() {
                    let k = missing.binary_search(s).expect("evaluated above");
                    *slot = Some(vals[k]);
                }
            }
        }
        Ok(out.into_iter().map(|v| v.unwrap()).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub phi: Vec<f64>,
    pub v_full: f64,
    pub v_empty: f64,
    /// Permutations drawn; 0 for exact enumeration.
    #[serde(rename = "M")]
    pub permutations: usize,
    /// Standard error of each estimate (0 for exact results and for M = 1).
    pub se: Vec<f64>,
    pub seed: Option<u64>,
    pub exact: bool,
}

impl AttributionResult {
    pub fn efficiency_gap(&self) -> f64 {
        (self.phi.iter().sum::<f64>() - (self.v_full - self.v_empty)).abs()
    }
}

fn check_players(n: usize) -> Result<()> {
    if n == 0 || n > MAX_REGIONS {
        return Err(Error::arg(format!("player count {n} outside 1..={MAX_REGIONS}")));
    }
    Ok(())
}

/// Shapley values by full enumeration of all coalitions.
pub fn exact_shapley<G: Game + ?Sized>(game: &G) -> Result<AttributionResult> {
    let n = game.players();
    check_players(n)?;
    if n > EXACT_LIMIT {
        return Err(Error::Size {
            what: "players for exact Shapley",
            got: n,
            limit: EXACT_LIMIT,
        });
    }
    let all: Vec<Coalition> = (0..1u64 << n).map(Coalition).collect();
    let v = game.values(&all)?;
    // weight(s) = s!(n−s−1)!/n!
    let mut fact = vec![1.0f64; n + 1];
    for k in 1..=n {
        fact[k] = fact[k - 1] * k as f64;
    }
    let weight: Vec<f64> = (0..n).map(|s| fact[s] * fact[n - s - 1] / fact[n]).collect();
    let phi = (0..n)
        .map(|i| {
            let bit = 1u64 << i;
            (0..1u64 << n)
                .filter(|s| s & bit == 0)
                .map(|s| weight[s.count_ones() as usize] * (v[(s | bit) as usize] - v[s as usize]))
                .sum()
        })
        .collect();
    Ok(AttributionResult {
        phi,
        v_full: v[(1usize << n) - 1],
        v_empty: v[0],
        permutations: 0,
        se: vec![0.0; n],
        seed: None,
        exact: true,
    })
}

/// Marginal contributions along one ordering of the players.
fn permutation_marginals<G: Game + ?Sized>(game: &G, order: &[usize]) -> Result<(Vec<f64>, f64, f64)> {
    let n = game.players();
    let mut chain = Vec::with_capacity(n + 1);
    let mut s = Coalition::EMPTY;
    chain.push(s);
    for &i in order {
        s = s.with(i);
        chain.push(s);
    }
    let v = game.values(&chain)?;
    let mut marg = vec![0.0; n];
    for (k, &i) in order.iter().enumerate() {
        marg[i] = v[k + 1] - v[k];
    }
    Ok((marg, v[n], v[0]))
}

/// Averages marginal contributions over the given orderings.
pub fn shapley_from_permutations<G: Game + ?Sized>(game: &G, orders: &[Vec<usize>]) -> Result<AttributionResult> {
    let n = game.players();
    check_players(n)?;
    if orders.is_empty() {
        return Err(Error::arg("at least one permutation is required"));
    }
    for o in orders {
        let mut sorted = o.clone();
        sorted.sort_unstable();
        if sorted != (0..n).collect::<Vec<_>>() {
            return Err(Error::arg("not a permutation of the players"));
        }
    }
    let per = crate::par::try_map_indexed(orders.len(), |k| permutation_marginals(game, &orders[k]))?;
    Ok(reduce(n, per, None))
}

fn reduce(n: usize, per: Vec<(Vec<f64>, f64, f64)>, seed: Option<u64>) -> AttributionResult {
    let m = per.len();
    let mut sum = vec![0.0; n];
    for (marg, _, _) in &per {
        for i in 0..n {
            sum[i] += marg[i];
        }
    }
    let phi: Vec<f64> = sum.iter().map(|s| s / m as f64).collect();
    let se = if m > 1 {
        let mut ss = vec![0.0; n];
        for (marg, _, _) in &per {
            for i in 0..n {
                let d = marg[i] - phi[i];
                ss[i] += d * d;
            }
        }
        ss.iter().map(|s| (s / (m - 1) as f64 / m as f64).sqrt()).collect()
    } else {
        vec![0.0; n]
    };
    let (_, v_full, v_empty) = per[0];
    AttributionResult {
        phi,
        v_full,
        v_empty,
        permutations: m,
        se,
        seed,
        exact: false,
    }
}

/// Uniform random ordering for permutation `index` of stream `seed`.
pub fn seeded_permutation(n: usize, seed: u64, index: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut crate::seed::rng(seed, &[index as u64]));
    order
}

/// Monte Carlo Shapley estimate from `m` seeded uniform permutations.
/// Permutation `k` uses its own seed substream, so results do not depend on
/// the number of workers.
pub fn sampled_shapley<G: Game + ?Sized>(game: &G, m: usize, seed: u64) -> Result<AttributionResult> {
    let n = game.players();
    check_players(n)?;
    if m == 0 {
        return Err(Error::arg("at least one permutation is required"));
    }
    let per = crate::par::try_map_indexed(m, |k| permutation_marginals(game, &seeded_permutation(n, seed, k)))?;
    Ok(reduce(n, per, Some(seed)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{farthest_point_sample, mask_coalition, normalize, partition};
    use crate::model::{BuiltinClassifier, ClassifierShape};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn two_player_hand_example() {
        let g = TableGame::new(2, vec![0.0, 1.0, 2.0, 4.0]).unwrap();
        let r = exact_shapley(&g).unwrap();
        assert!((r.phi[0] - 1.5).abs() < 1e-15);
        assert!((r.phi[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn additive_game_recovers_weights() {
        let w = [0.3, -1.2, 2.0, 0.0, 5.5];
        let g = TableGame::from_fn(5, |s| s.members().map(|i| w[i]).sum());
        let r = exact_shapley(&g).unwrap();
        for i in 0..5 {
            assert!((r.phi[i] - w[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_players_share_value() {
        // players 1 and 3 are interchangeable
        let base = TableGame::random(5, 9);
        let swap = |s: Coalition| {
            let mut t = s.without(1).without(3);
            if s.contains(1) {
                t = t.with(3);
            }
            if s.contains(3) {
                t = t.with(1);
            }
            t
        };
        let g = TableGame::from_fn(5, |s| base.value(s).unwrap() + base.value(swap(s)).unwrap());
        let r = exact_shapley(&g).unwrap();
        assert!((r.phi[1] - r.phi[3]).abs() < 1e-12);
    }

    #[test]
    fn sampled_converges_to_exact() {
        let g = TableGame::random(8, 21);
        let exact = exact_shapley(&g).unwrap();
        let est = sampled_shapley(&g, 5000, 77).unwrap();
        let max_se = est.se.iter().cloned().fold(0.0, f64::max);
        let max_err = exact.phi.iter().zip(&est.phi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(max_err <= 3.0 * max_se, "{max_err} > 3 × {max_se}");
    }

    #[test]
    fn dummy_player_gets_its_singleton_gain() {
        let base = TableGame::random(7, 31);
        // player 6 adds a constant 0.25 to every coalition it joins
        let g = TableGame::from_fn(7, |s| base.value(s.without(6)).unwrap() + if s.contains(6) { 0.25 } else { 0.0 });
        let gain = g.value(Coalition::from_members([6])).unwrap() - g.value(Coalition::EMPTY).unwrap();
        assert!((exact_shapley(&g).unwrap().phi[6] - gain).abs() < 1e-12);
        let r = sampled_shapley(&g, 200, 3).unwrap();
        assert!((r.phi[6] - gain).abs() <= 3.0 * r.se[6] + 1e-12);
    }

    #[test]
    fn exact_refuses_large_games() {
        let g = TableGame::random(13, 0);
        assert!(matches!(exact_shapley(&g), Err(Error::Size { .. })));
    }

    #[test]
    fn identity_order_single_permutation() {
        let g = TableGame::random(6, 4);
        let r = shapley_from_permutations(&g, &[(0..6).collect()]).unwrap();
        for i in 0..6 {
            let with = Coalition::from_members(0..=i);
            let without = Coalition::from_members(0..i);
            assert_eq!(r.phi[i], g.value(with).unwrap() - g.value(without).unwrap());
        }
    }

    #[test]
    fn sampled_is_worker_count_independent() {
        let g = TableGame::random(8, 11);
        let a = crate::par::with_workers(Some(1), || sampled_shapley(&g, 300, 5)).unwrap();
        let b = crate::par::with_workers(Some(3), || sampled_shapley(&g, 300, 5)).unwrap();
        assert_eq!(a, b);
    }

    fn small_model(classes: usize) -> BuiltinClassifier {
        let shape = ClassifierShape {
            point_dims: vec![3, 16, 32],
            head_dims: vec![32, 16, classes],
        };
        BuiltinClassifier::new(&shape, &mut crate::seed::rng(7, &[])).unwrap()
    }

    fn random_cloud(seed: u64, p: usize) -> PointCloud {
        let mut rng = crate::seed::rng(seed, &[]);
        let pts = (0..p).map(|_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        normalize(&PointCloud::new(pts).unwrap()).unwrap()
    }

    /// Wraps a model without exposing its pooled structure, forcing the generic path.
    struct Opaque<'a>(&'a BuiltinClassifier);

    impl ModelOracle for Opaque<'_> {
        fn num_classes(&self) -> usize {
            self.0.num_classes()
        }
        fn evaluate(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
            self.0.evaluate(batch)
        }
        fn embed(&self, batch: &[PointCloud]) -> Result<Vec<Vec<f64>>> {
            self.0.embed(batch)
        }
    }

    #[test]
    fn pooled_fast_path_matches_masked_evaluation() {
        let model = small_model(3);
        let cloud = random_cloud(2, 200);
        let part = partition(&cloud, &farthest_point_sample(&cloud, 6).unwrap()).unwrap();
        for reward in [RewardSpec::classification(1), RewardSpec::embedding()] {
            let fast = GameContext::new(&model, reward, cloud.clone(), &part).unwrap();
            let opaque = Opaque(&model);
            let slow = GameContext::new(&opaque, reward, cloud.clone(), &part).unwrap();
            for bits in 0..64u64 {
                let s = Coalition(bits);
                let a = fast.value(s).unwrap();
                let b = slow.value(s).unwrap();
                assert!((a - b).abs() < 1e-12, "{bits}: {a} vs {b}");
                if reward.kind == RewardKind::ClassificationLogit {
                    let direct = reward.from_probs(&model.probs(&mask_coalition(&cloud, &part, s).points)).unwrap();
                    assert!((a - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projection_reward_of_full_set_is_norm() {
        let model = small_model(3);
        let cloud = random_cloud(3, 150);
        let part = partition(&cloud, &farthest_point_sample(&cloud, 4).unwrap()).unwrap();
        let ctx = GameContext::new(&model, RewardSpec::embedding(), cloud.clone(), &part).unwrap();
        let zf = model.pooled_features(&cloud.points);
        let ze = model.pooled_features(&vec![cloud.centroid(); cloud.len()]);
        let norm = zf.iter().zip(&ze).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        assert!((ctx.value(Coalition::full(4)).unwrap() - norm).abs() < 1e-9);
        assert!(ctx.value(Coalition::EMPTY).unwrap().abs() < 1e-12);
    }

    #[test]
    fn memo_bounds_oracle_calls() {
        let model = small_model(2);
        let cloud = random_cloud(4, 120);
        let part = partition(&cloud, &farthest_point_sample(&cloud, 5).unwrap()).unwrap();
        let ctx = GameContext::new(&model, RewardSpec::classification(0), cloud, &part).unwrap();
        let m = 40;
        let r = sampled_shapley(&ctx, m, 1).unwrap();
        assert!(ctx.oracle_calls() <= m * 6 + 2);
        assert!(ctx.oracle_calls() <= 32);
        assert!(r.efficiency_gap() < 1e-9);
        let again = ctx.value(Coalition::from_members([1, 3])).unwrap();
        assert_eq!(again, ctx.value(Coalition::from_members([1, 3])).unwrap());
    }

    proptest! {
        #[test]
        fn sampled_estimator_is_efficient(seed in 0u64..1000, m in 1usize..20, n in 1usize..10) {
            let g = TableGame::random(n, seed);
            let r = sampled_shapley(&g, m, seed ^ 0xabc).unwrap();
            prop_assert!(r.efficiency_gap() < 1e-9);
        }

        #[test]
        fn exact_is_linear_and_efficient(a in 0u64..500, b in 0u64..500) {
            let v = TableGame::random(6, a);
            let w = TableGame::random(6, b + 1000);
            let pv = exact_shapley(&v).unwrap();
            let pw = exact_shapley(&w).unwrap();
            let pu = exact_shapley(&v.sum(&w)).unwrap();
            for i in 0..6 {
                prop_assert!((pu.phi[i] - pv.phi[i] - pw.phi[i]).abs() < 1e-12);
            }
            prop_assert!(pv.efficiency_gap() < 1e-12);
        }
    }
}
