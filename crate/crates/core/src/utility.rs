//! Per-experience utility and interference.
//!
//! `U = w1·min(1, δ/s) + w2·exp(−n/Z) + w3·min(1, V/s)` with `s = R_max/(1 − γ)`,
//! where `δ` is the absolute TD error, `n` the visitation count of `(s, a)` and
//! `V` the mean TD error of the `k` stored experiences nearest to the
//! successor state.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::error::{invalid, AmcError, Result};
use crate::sde::CrystallizationState;

/// One stored transition together with its consolidation bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    /// Unique within a buffer; assigned on insert.
    pub id: u64,
    /// State features used for distances.
    pub state: Vec<f64>,
    /// Tabular index of `state`.
    pub state_id: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub next_state_id: usize,
    /// The successor is terminal, so it is not bootstrapped from.
    pub done: bool,
    pub c: CrystallizationState,
    pub td_error: f64,
    pub novelty: f64,
    pub downstream_value: f64,
    pub utility: f64,
    /// Accumulated episode-return boost, re-applied whenever `utility` is recomputed.
    pub return_boost: f64,
    pub interference_flag: bool,
    pub interference_count: u32,
    pub insert_step: u64,
}

impl Experience {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        state: Vec<f64>,
        state_id: usize,
        action: usize,
        reward: f64,
        next_state: Vec<f64>,
        next_state_id: usize,
        done: bool,
        insert_step: u64,
    ) -> Self {
        Self {
            id: 0,
            state,
            state_id,
            action,
            reward,
            next_state,
            next_state_id,
            done,
            c: CrystallizationState::LIQUID,
            td_error: 0.0,
            novelty: 1.0,
            downstream_value: 0.0,
            utility: 0.0,
            return_boost: 0.0,
            interference_flag: false,
            interference_count: 0,
            insert_step,
        }
    }
}

/// Convex weights of the three utility components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UtilityWeights {
    pub w1: f64,
    pub w2: f64,
    pub w3: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            w1: 0.5,
            w2: 0.3,
            w3: 0.2,
        }
    }
}

impl UtilityWeights {
    pub fn new(w1: f64, w2: f64, w3: f64) -> Result<Self> {
        let w = Self { w1, w2, w3 };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.w1, self.w2, self.w3].iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", "must be non-negative"));
        }
        if (self.w1 + self.w2 + self.w3 - 1.0).abs() > 1e-9 {
            return Err(invalid("weights", format!("must sum to 1, got {}", self.w1 + self.w2 + self.w3)));
        }
        Ok(())
    }

    /// Zero one weight and renormalize the rest (component ablations).
    pub fn without(self, component: usize) -> Result<Self> {
        let mut w = [self.w1, self.w2, self.w3];
        w[component] = 0.0;
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(invalid("weights", "no weight left after ablation"));
        }
        Self::new(w[0] / s, w[1] / s, w[2] / s)
    }
}

/// Visitation counts `n(s, a)` and the novelty scale `Z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoveltyTable {
    #[serde(with = "pair_keys")]
    counts: BTreeMap<(usize, usize), u64>,
    pub z_norm: f64,
}

// JSON object keys must be strings, so the table travels as a list of pairs.
mod pair_keys {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    type Counts = BTreeMap<(usize, usize), u64>;

    pub fn serialize<S: Serializer>(map: &Counts, s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<_> = map.iter().collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Counts, D::Error> {
        Ok(Vec::<((usize, usize), u64)>::deserialize(d)?.into_iter().collect())
    }
}

impl NoveltyTable {
    pub fn new(z_norm: f64) -> Result<Self> {
        if !(z_norm > 0.0 && z_norm.is_finite()) {
            return Err(invalid("z_norm", format!("must be > 0, got {z_norm}")));
        }
        Ok(Self {
            counts: BTreeMap::new(),
            z_norm,
        })
    }

    pub fn visit(&mut self, state_id: usize, action: usize) {
        *self.counts.entry((state_id, action)).or_insert(0) += 1;
    }

    pub fn count(&self, state_id: usize, action: usize) -> u64 {
        self.counts.get(&(state_id, action)).copied().unwrap_or(0)
    }

    /// `exp(−n/Z)`.
    pub fn novelty_of_count(&self, n: u64) -> f64 {
        (-(n as f64) / self.z_norm).exp()
    }
}

/// `|r + γ·max_a′ Q(s′, a′) − Q(s, a)|`; terminal successors contribute no bootstrap.
pub fn td_error(exp: &Experience, q: &QTable, gamma: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&gamma) {
        return Err(invalid("gamma", format!("must lie in [0, 1), got {gamma}")));
    }
    let current = q.get(exp.state_id, exp.action)?;
    let bootstrap = if exp.done { 0.0 } else { q.max_value(exp.next_state_id)? };
    Ok((exp.reward + gamma * bootstrap - current).abs())
}

pub fn novelty(exp: &Experience, table: &NoveltyTable) -> f64 {
    table.novelty_of_count(table.count(exp.state_id, exp.action))
}

/// Weighted combination of TD error, novelty and downstream value, each return-unit component clipped by `td_scale`.
pub fn utility(td: f64, nov: f64, dv: f64, weights: &UtilityWeights, td_scale: f64) -> f64 {
    debug_assert!(td_scale > 0.0);
    let u = weights.w1 * (td / td_scale).clamp(0.0, 1.0)
        + weights.w2 * nov.clamp(0.0, 1.0)
        + weights.w3 * (dv / td_scale).clamp(0.0, 1.0);
    u.clamp(0.0, 1.0)
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

fn check_dims(query: &[f64], pool: &[&Experience]) -> Result<()> {
    if let Some(bad) = pool.iter().find(|e| e.state.len() != query.len()) {
        return Err(AmcError::DimensionMismatch {
            expected: query.len(),
            got: bad.state.len(),
        });
    }
    Ok(())
}

/// Indices of the `k` pool members whose `state` is nearest to `query`.
///
/// Ties are broken by `insert_step` and then by pool position. Exhaustive scan.
pub fn knn(query: &[f64], pool: &[&Experience], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid("k", "must be >= 1"));
    }
    check_dims(query, pool)?;
    let mut order: Vec<(f64, u64, usize)> = pool
        .iter()
        .enumerate()
        .map(|(i, e)| (sq_dist(query, &e.state), e.insert_step, i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    Ok(order.into_iter().take(k).map(|t| t.2).collect())
}

/// Mean `td_error` of the `k` neighbours of `exp.next_state`; 0 for an empty pool.
pub fn downstream_value(exp: &Experience, pool: &[&Experience], k: usize) -> Result<f64> {
    if pool.is_empty() {
        return Ok(0.0);
    }
    let idx = knn(&exp.next_state, pool, k)?;
    Ok(idx.iter().map(|&i| pool[i].td_error).sum::<f64>() / idx.len() as f64)
}

/// How the interference radius is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "value", rename_all = "snake_case")]
pub enum EpsilonRule {
    Absolute(f64),
    /// A fraction of the current buffer's state-space diameter.
    DiameterFraction(f64),
}

/// Thresholds of the interference predicate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InterferenceParams {
    pub epsilon: f64,
    pub delta_r: f64,
}

impl InterferenceParams {
    pub fn new(epsilon: f64, delta_r: f64) -> Result<Self> {
        if !(epsilon > 0.0 && delta_r > 0.0) {
            return Err(invalid("interference", format!("need epsilon, delta_r > 0, got ({epsilon}, {delta_r})")));
        }
        Ok(Self { epsilon, delta_r })
    }
}

/// Distance used by the interference predicate: `‖s_i − s_j‖ + 1[a_i ≠ a_j]`.
pub fn state_action_distance(a: &Experience, b: &Experience) -> f64 {
    sq_dist(&a.state, &b.state).sqrt() + if a.action == b.action { 0.0 } else { 1.0 }
}

/// Whether some other candidate lies within `ε` in state-action distance and
/// disagrees on reward by more than `δ_r`. Exhaustive scan.
pub fn detect_interference(exp: &Experience, candidates: &[&Experience], p: &InterferenceParams) -> bool {
    candidates.iter().any(|other| {
        other.id != exp.id
            && state_action_distance(exp, other) < p.epsilon
            && (exp.reward - other.reward).abs() > p.delta_r
    })
}

/// Neighbour structure for one consolidation pass.
///
/// Tabular environments revisit the same few states many times, so the pool is
/// grouped by exact state vector. Queries scan groups instead of experiences
/// and still return exactly what the exhaustive functions above return.
pub struct NeighborIndex {
    groups: Vec<StateGroup>,
    dims: usize,
}

struct StateGroup {
    state: Vec<f64>,
    /// `(insert_step, pool index)`, ascending.
    members: Vec<(u64, usize)>,
    reward_range_by_action: BTreeMap<usize, (f64, f64)>,
    reward_range: (f64, f64),
}

fn widen(range: &mut (f64, f64), r: f64) {
    range.0 = range.0.min(r);
    range.1 = range.1.max(r);
}

impl NeighborIndex {
    pub fn build(pool: &[&Experience]) -> Result<Self> {
        let dims = pool.first().map_or(0, |e| e.state.len());
        let mut by_key: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut groups: Vec<StateGroup> = Vec::new();
        for (i, e) in pool.iter().enumerate() {
            if e.state.len() != dims {
                return Err(AmcError::DimensionMismatch {
                    expected: dims,
                    got: e.state.len(),
                });
            }
            let key: Vec<u64> = e.state.iter().map(|x| x.to_bits()).collect();
            let g = *by_key.entry(key).or_insert_with(|| {
                groups.push(StateGroup {
                    state: e.state.clone(),
                    members: Vec::new(),
                    reward_range_by_action: BTreeMap::new(),
                    reward_range: (f64::INFINITY, f64::NEG_INFINITY),
                });
                groups.len() - 1
            });
            let grp = &mut groups[g];
            grp.members.push((e.insert_step, i));
            widen(&mut grp.reward_range, e.reward);
            widen(
                grp.reward_range_by_action
                    .entry(e.action)
                    .or_insert((f64::INFINITY, f64::NEG_INFINITY)),
                e.reward,
            );
        }
        for g in &mut groups {
            g.members.sort_unstable();
        }
        Ok(Self { groups, dims })
    }

    pub fn distinct_states(&self) -> usize {
        self.groups.len()
    }

    /// Largest pairwise distance between stored states.
    pub fn diameter(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.groups.iter().enumerate() {
            for b in &self.groups[i + 1..] {
                d = d.max(sq_dist(&a.state, &b.state));
            }
        }
        d.sqrt()
    }

    /// Same result as [`knn`] over the pool the index was built from.
    pub fn knn(&self, query: &[f64], k: usize) -> Result<Vec<usize>> {
        if k == 0 {
            return Err(invalid("k", "must be >= 1"));
        }
        if !self.groups.is_empty() && query.len() != self.dims {
            return Err(AmcError::DimensionMismatch {
                expected: self.dims,
                got: query.len(),
            });
        }
        let mut order: Vec<(f64, usize)> = self
            .groups
            .iter()
            .enumerate()
            .map(|(g, grp)| (sq_dist(query, &grp.state), g))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut out = Vec::with_capacity(k);
        let mut i = 0;
        while i < order.len() && out.len() < k {
            // all groups at exactly this distance compete on (insert_step, index)
            let mut j = i;
            while j < order.len() && order[j].0 == order[i].0 {
                j += 1;
            }
            if j - i == 1 {
                let grp = &self.groups[order[i].1];
                out.extend(grp.members.iter().take(k - out.len()).map(|m| m.1));
            } else {
                let mut tied: Vec<(u64, usize)> = order[i..j]
                    .iter()
                    .flat_map(|&(_, g)| self.groups[g].members.iter().copied())
                    .collect();
                tied.sort_unstable();
                out.extend(tied.iter().take(k - out.len()).map(|m| m.1));
            }
            i = j;
        }
        Ok(out)
    }

    /// Same result as [`detect_interference`] against the whole indexed pool.
    pub fn interferes(&self, exp: &Experience, p: &InterferenceParams) -> bool {
        let contradicts = |(lo, hi): (f64, f64)| exp.reward - lo > p.delta_r || hi - exp.reward > p.delta_r;
        self.groups.iter().any(|grp| {
            let d = sq_dist(&exp.state, &grp.state).sqrt();
            if d >= p.epsilon {
                return false;
            }
            if let Some(&range) = grp.reward_range_by_action.get(&exp.action) {
                if contradicts(range) {
                    return true;
                }
            }
            d + 1.0 < p.epsilon
                && grp
                    .reward_range_by_action
                    .iter()
                    .any(|(&a, &range)| a != exp.action && contradicts(range))
        })
    }
}
