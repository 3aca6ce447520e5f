//! Multi-order pairwise interactions
//! I^(m)(i,j) = E_{S⊆N∖{i,j}, |S|=m}[v(S∪{i,j}) − v(S∪{i}) − v(S∪{j}) + v(S)]
//! and their per-order strength profiles.

use itertools::Itertools;
use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::attribution::Game;
use crate::geometry::{Coalition, NeighborGraph};
use crate::seed::{derive, rng};
use crate::{Error, Result};

/// Largest player count accepted by [`efficiency_decomposition_check`].
pub const DECOMPOSITION_LIMIT: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InteractionConfig {
    /// Contexts drawn per (pair, order).
    pub contexts: usize,
    /// Use every unordered pair up to this many regions.
    pub all_pairs_up_to: usize,
    /// Seeded pairs drawn above that.
    pub sampled_pairs: usize,
    /// Orders to evaluate; all of 0..=n−2 when absent.
    pub orders: Option<Vec<usize>>,
    /// Sample contexts even when enumerating them would be cheaper.
    pub force_sampling: bool,
    /// Keep the per-pair table in the profile.
    pub keep_pairs: bool,
}

impl Default for InteractionConfig {
    fn default() -> Self {
        Self {
            contexts: 100,
            all_pairs_up_to: 16,
            sampled_pairs: 200,
            orders: None,
            force_sampling: false,
            keep_pairs: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub value: f64,
    pub se: f64,
    /// Contexts evaluated (all of them when `exact`).
    pub contexts: usize,
    pub exact: bool,
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, t| acc * (n - t) as f64 / (t + 1) as f64)
}

fn delta<G: Game + ?Sized>(game: &G, i: usize, j: usize, contexts: &[Coalition]) -> Result<Vec<f64>> {
    let mut qs = Vec::with_capacity(4 * contexts.len());
    for &s in contexts {
        qs.extend([s.with(i).with(j), s.with(i), s.with(j), s]);
    }
    let v = game.values(&qs)?;
    Ok(v.chunks_exact(4).map(|c| c[0] - c[1] - c[2] + c[3]).collect())
}

/// Mean anchored at the first sample, so identical samples average exactly.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let k = xs.len() as f64;
    let x0 = xs[0];
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / k;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (k - 1.0);
    (mean, (var / k).sqrt())
}

/// Order-m interaction of regions i and j. Contexts are enumerated when
/// C(n−2, m) ≤ `contexts`, otherwise drawn uniformly from stream `(seed, m)`;
/// the draws depend only on the seed and order, so (i, j) and (j, i) see the
/// same contexts.
pub fn pair_interaction<G: Game + ?Sized>(
    game: &G,
    i: usize,
    j: usize,
    m: usize,
    contexts: usize,
    force_sampling: bool,
    seed: u64,
) -> Result<PairEstimate> {
    let n = game.players();
    if i == j || i >= n || j >= n {
        return Err(Error::arg(format!("invalid pair ({i}, {j}) for {n} regions")));
    }
    if m + 2 > n {
        return Err(Error::arg(format!("order {m} exceeds n - 2 = {}", n as isize - 2)));
    }
    if contexts == 0 {
        return Err(Error::arg("at least one context is required"));
    }
    let others: Vec<usize> = (0..n).filter(|&k| k != i && k != j).collect();
    let total = binomial(n - 2, m);
    if !force_sampling && total <= contexts as f64 {
        let sets: Vec<Coalition> = others.iter().copied().combinations(m).map(Coalition::from_members).collect();
        let d = delta(game, i, j, &sets)?;
        return Ok(PairEstimate {
            value: mean_se(&d).0,
            se: 0.0,
            contexts: sets.len(),
            exact: true,
        });
    }
    let mut r = rng(seed, &[m as u64]);
    let sets: Vec<Coalition> = (0..contexts)
        .map(|_| Coalition::from_members(sample_indices(&mut r, others.len(), m).into_iter().map(|k| others[k])))
        .collect();
    let (value, se) = mean_se(&delta(game, i, j, &sets)?);
    Ok(PairEstimate {
        value,
        se,
        contexts,
        exact: false,
    })
}

/// Exact I^(m)(i,j) for every order, from the full value table.
fn exact_orders(v: &[f64], n: usize, i: usize, j: usize) -> Vec<f64> {
    let (bi, bj) = (1usize << i, 1usize << j);
    let rest = ((1usize << n) - 1) & !bi & !bj;
    let mut acc = vec![0.0; n - 1];
    // enumerate submasks of `rest`
    let mut s = rest;
    loop {
        acc[s.count_ones() as usize] += v[s | bi | bj] - v[s | bi] - v[s | bj] + v[s];
        if s == 0 {
            break;
        }
        s = (s - 1) & rest;
    }
    acc.iter().enumerate().map(|(m, a)| a / binomial(n - 2, m)).collect()
}

/// |v(N) − [v(∅) + Σ_i (v({i}) − v(∅)) + Σ_{i≠j} Σ_m (n−1−m)/(n(n−1)) I^(m)(i,j)]|
/// with every interaction computed exactly.
pub fn efficiency_decomposition_check<G: Game + ?Sized>(game: &G) -> Result<f64> {
    let n = game.players();
    if n > DECOMPOSITION_LIMIT {
        return Err(Error::Size {
            what: "players for the decomposition check",
            got: n,
            limit: DECOMPOSITION_LIMIT,
        });
    }
    if n < 2 {
        return Err(Error::arg("the decomposition needs at least two players"));
    }
    let v = game.values(&(0..1u64 << n).map(Coalition).collect::<Vec<_>>())?;
    let empty = v[0];
    let mut rhs = empty;
    for i in 0..n {
        rhs += v[1 << i] - empty;
    }
    let denom = (n * (n - 1)) as f64;
    for (i, j) in (0..n).cartesian_product(0..n).filter(|(i, j)| i != j) {
        for (m, im) in exact_orders(&v, n, i, j).into_iter().enumerate() {
            rhs += (n - 1 - m) as f64 / denom * im;
        }
    }
    Ok((v[(1 << n) - 1] - rhs).abs())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairRecord {
    pub cloud: usize,
    pub order: usize,
    pub i: usize,
    pub j: usize,
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionProfile {
    pub orders: Vec<usize>,
    /// I^(m) = E_x |E_{i,j} I_x^(m)(i,j)|.
    pub values: Vec<f64>,
    /// m / (n − 2).
    pub normalized_orders: Vec<f64>,
    /// Contexts evaluated per pair at each order.
    pub context_samples: Vec<usize>,
    /// Pairs averaged per cloud at each order.
    pub pair_samples: Vec<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub pairs: Vec<PairRecord>,
}

impl InteractionProfile {
    /// Recomputes the curve from the per-pair table.
    pub fn from_pairs(records: &[PairRecord], n: usize) -> Self {
        let orders: Vec<usize> = records.iter().map(|r| r.order).sorted().dedup().collect();
        let clouds: Vec<usize> = records.iter().map(|r| r.cloud).sorted().dedup().collect();
        let values = orders
            .iter()
            .map(|&m| {
                clouds
                    .iter()
                    .map(|&c| {
                        let vals: Vec<f64> = records.iter().filter(|r| r.order == m && r.cloud == c).map(|r| r.value).collect();
                        (vals.iter().sum::<f64>() / vals.len() as f64).abs()
                    })
                    .sum::<f64>()
                    / clouds.len() as f64
            })
            .collect();
        Self {
            normalized_orders: orders.iter().map(|&m| normalized_order(m, n)).collect(),
            context_samples: vec![],
            pair_samples: vec![],
            orders,
            values,
            pairs: records.to_vec(),
        }
    }
}

fn normalized_order(m: usize, n: usize) -> f64 {
    if n > 2 {
        m as f64 / (n - 2) as f64
    } else {
        0.0
    }
}

/// Pairs used for cloud `cloud`: all of them up to `all_pairs_up_to`
/// regions, otherwise a seeded sample without replacement.
pub fn select_pairs(n: usize, cfg: &InteractionConfig, seed: u64, cloud: usize) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = (0..n).tuple_combinations().collect();
    if n <= cfg.all_pairs_up_to || cfg.sampled_pairs >= all.len() {
        return all;
    }
    let mut r = rng(seed, &[cloud as u64, 0x9a1]);
    let mut idx = sample_indices(&mut r, all.len(), cfg.sampled_pairs).into_vec();
    idx.sort_unstable();
    idx.into_iter().map(|k| all[k]).collect()
}

fn profile_over_pairs<G: Game>(
    games: &[G],
    pairs: &[Vec<(usize, usize)>],
    cfg: &InteractionConfig,
    seed: u64,
) -> Result<InteractionProfile> {
    let n = games.first().ok_or_else(|| Error::arg("no clouds"))?.players();
    if games.iter().any(|g| g.players() != n) {
        return Err(Error::arg("every cloud must have the same number of regions"));
    }
    if n < 2 {
        return Err(Error::arg("interactions need at least two regions"));
    }
    let orders: Vec<usize> = match &cfg.orders {
        Some(o) => o.clone(),
        None => (0..=n - 2).collect(),
    };
    if let Some(&bad) = orders.iter().find(|&&m| m + 2 > n) {
        return Err(Error::arg(format!("order {bad} exceeds n - 2")));
    }
    // one task per (cloud, order, pair), reduced in that order
    let tasks: Vec<(usize, usize, usize, usize)> = (0..games.len())
        .flat_map(|c| orders.iter().flat_map(move |&m| pairs[c].iter().map(move |&(i, j)| (c, m, i, j))))
        .collect();
    let est = crate::par::try_map_indexed(tasks.len(), |k| {
        let (c, m, i, j) = tasks[k];
        pair_interaction(&games[c], i, j, m, cfg.contexts, cfg.force_sampling, derive(seed, &[c as u64]))
    })?;
    let records: Vec<PairRecord> = tasks
        .iter()
        .zip(&est)
        .map(|(&(cloud, order, i, j), e)| PairRecord {
            cloud,
            order,
            i,
            j,
            value: e.value,
            se: e.se,
        })
        .collect();
    let mut values = Vec::with_capacity(orders.len());
    let mut context_samples = Vec::with_capacity(orders.len());
    for &m in &orders {
        let mut per_cloud = 0.0;
        for (c, cp) in pairs.iter().enumerate() {
            let vals: Vec<f64> = records.iter().filter(|r| r.cloud == c && r.order == m).map(|r| r.value).collect();
            per_cloud += (vals.iter().sum::<f64>() / cp.len() as f64).abs();
        }
        values.push(per_cloud / games.len() as f64);
        context_samples.push(
            tasks
                .iter()
                .zip(&est)
                .find(|(t, _)| t.1 == m)
                .map_or(0, |(_, e)| e.contexts),
        );
    }
    Ok(InteractionProfile {
        normalized_orders: orders.iter().map(|&m| normalized_order(m, n)).collect(),
        pair_samples: vec![pairs.iter().map(Vec::len).sum::<usize>() / pairs.len(); orders.len()],
        orders,
        values,
        context_samples,
        pairs: if cfg.keep_pairs { records } else { vec![] },
    })
}

/// I^(m) = E_x |E_{i,j} I_x^(m)(i,j)| over all (or sampled) region pairs.
pub fn order_profile<G: Game>(games: &[G], cfg: &InteractionConfig, seed: u64) -> Result<InteractionProfile> {
    let pairs: Vec<Vec<(usize, usize)>> = games
        .iter()
        .enumerate()
        .map(|(c, g)| select_pairs(g.players(), cfg, seed, c))
        .collect();
    profile_over_pairs(games, &pairs, cfg, seed)
}

/// Profile restricted to pairs (i*, j) with j a neighbour of i* in each cloud.
pub fn sensitive_region_profile<G: Game>(
    games: &[G],
    centers: &[usize],
    graphs: &[NeighborGraph],
    cfg: &InteractionConfig,
    seed: u64,
) -> Result<InteractionProfile> {
    if games.len() != centers.len() || games.len() != graphs.len() {
        return Err(Error::arg("one region and one graph per cloud are required"));
    }
    let pairs = centers
        .iter()
        .zip(graphs)
        .map(|(&i, g)| {
            let nb = g.neighbors.get(i).ok_or_else(|| Error::arg(format!("no region {i}")))?;
            if nb.is_empty() {
                return Err(Error::arg(format!("region {i} has no neighbours")));
            }
            Ok(nb.iter().map(|&j| (i, j)).collect())
        })
        .collect::<Result<Vec<Vec<_>>>>()?;
    profile_over_pairs(games, &pairs, cfg, seed)
}
