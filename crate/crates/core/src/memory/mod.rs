//! The three-phase replay memory.
//!
//! New transitions enter the liquid buffer with `c = 0`. Each consolidation
//! pass rescores every stored experience, advances its crystallization state
//! by one Euler–Maruyama step and moves it between buffers:
//!
//! * liquid → glass when `c > τL`
//! * glass → crystal when `c > τC`
//! * glass → liquid when `c < τL − hysteresis`
//!
//! Crystal members leave only after `τ_evict` consecutive consolidations
//! under interference. Liquid overflow evicts the lowest-utility member.

mod calc;
mod sampling;

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::agent::QTable;
use crate::error::{invalid, AmcError, Result};
use crate::rng::StreamRng;
use crate::sde::{em_step, CrystallizationState, SdeParams};
use crate::utility::{
    td_error, utility, EpsilonRule, Experience, InterferenceParams, NeighborIndex, NoveltyTable, UtilityWeights,
};

pub use calc::{capacity_bound, optimal_crystal_fraction, qlearning_error_bound};
pub(crate) use sampling::draw_proportional;
pub use sampling::{stratified_sample, stratum_sizes, SampledItem, SamplingConfig};

/// Snapshot format version.
pub const SNAPSHOT_VERSION: u32 = 1;

/// Phase boundaries and the crystal eviction count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub tau_l: f64,
    pub tau_c: f64,
    pub hysteresis: f64,
    pub tau_evict: u32,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_l: 0.3,
            tau_c: 0.7,
            hysteresis: 0.05,
            tau_evict: 20,
        }
    }
}

impl Thresholds {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.tau_l && self.tau_l < self.tau_c && self.tau_c < 1.0) {
            return Err(invalid("thresholds", format!("need 0 < tau_L < tau_C < 1, got ({}, {})", self.tau_l, self.tau_c)));
        }
        if !(self.hysteresis > 0.0 && self.tau_l - self.hysteresis > 0.0) {
            return Err(invalid("hysteresis", format!("need 0 < hysteresis < tau_L, got {}", self.hysteresis)));
        }
        if self.tau_evict < 1 {
            return Err(invalid("tau_evict", "must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Liquid,
    Glass,
    Crystal,
}

impl Phase {
    pub const ALL: [Phase; 3] = [Phase::Liquid, Phase::Glass, Phase::Crystal];

    pub fn index(self) -> usize {
        self as usize
    }
}

/// Per-phase capacities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Capacities {
    pub liquid: usize,
    pub glass: usize,
    pub crystal: usize,
}

impl Capacities {
    /// The default 10 : 5 : 1 split of `total`.
    pub fn split(total: usize) -> Self {
        let liquid = total * 10 / 16;
        let glass = total * 5 / 16;
        Self {
            liquid,
            glass,
            crystal: total - liquid - glass,
        }
    }

    /// Everything in one store: promotions never have room, so every
    /// experience stays liquid.
    pub fn single(total: usize) -> Self {
        Self {
            liquid: total,
            glass: 0,
            crystal: 0,
        }
    }

    pub fn total(&self) -> usize {
        self.liquid + self.glass + self.crystal
    }

    fn of(&self, phase: Phase) -> usize {
        match phase {
            Phase::Liquid => self.liquid,
            Phase::Glass => self.glass,
            Phase::Crystal => self.crystal,
        }
    }
}

/// Which stored vectors the downstream-value neighbour search runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NeighborTarget {
    /// Successor state queried against other experiences' states.
    #[default]
    States,
    /// Successor state queried against other experiences' successor states.
    NextStates,
}

/// Switches for the ablation study; all `true`/`false` defaults give full AMC.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConsolidationSwitches {
    /// When false every `c` stays at 0.
    pub crystallize: bool,
    /// When false `I ≡ 0`.
    pub interference: bool,
    /// Replace the downstream value with a uniform draw on `[0, td_scale]`.
    pub random_downstream: bool,
}

impl Default for ConsolidationSwitches {
    fn default() -> Self {
        Self {
            crystallize: true,
            interference: true,
            random_downstream: false,
        }
    }
}

/// Everything a consolidation pass needs besides the buffers and Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationConfig {
    pub sde: SdeParams,
    pub weights: UtilityWeights,
    pub epsilon: EpsilonRule,
    pub delta_r: f64,
    pub thresholds: Thresholds,
    pub k_neighbors: usize,
    /// `R_max/(1 − γ)`; clips the return-unit utility components.
    pub td_scale: f64,
    pub gamma: f64,
    pub neighbor_target: NeighborTarget,
    pub switches: ConsolidationSwitches,
}

impl ConsolidationConfig {
    pub fn validate(&self) -> Result<()> {
        self.sde.validate()?;
        self.weights.validate()?;
        self.thresholds.validate()?;
        match self.epsilon {
            EpsilonRule::Absolute(e) | EpsilonRule::DiameterFraction(e) if e > 0.0 => {}
            _ => return Err(invalid("epsilon", "must be positive")),
        }
        if !(self.delta_r > 0.0) {
            return Err(invalid("delta_r", "must be positive"));
        }
        if self.k_neighbors == 0 {
            return Err(invalid("k_neighbors", "must be >= 1"));
        }
        if !(self.td_scale > 0.0) {
            return Err(invalid("td_scale", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(invalid("gamma", "must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Counts and phase means produced by one consolidation pass.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConsolidationReport {
    pub promotions_lg: usize,
    pub promotions_gc: usize,
    pub demotions_gl: usize,
    pub crystal_evictions: usize,
    pub liquid_evictions: usize,
    /// Promotions skipped because the destination was full.
    pub deferred_promotions: usize,
    pub interference_flags: usize,
    /// Mean `c` in liquid, glass, crystal; `None` for an empty phase.
    pub mean_c_per_phase: [Option<f64>; 3],
}

/// The liquid, glass and crystal stores plus the visitation counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseBuffers {
    liquid: Vec<Experience>,
    glass: Vec<Experience>,
    crystal: Vec<Experience>,
    capacities: Capacities,
    novelty: NoveltyTable,
    next_id: u64,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    version: u32,
    buffers: PhaseBuffers,
}

impl PhaseBuffers {
    pub fn new(capacities: Capacities, z_norm: f64) -> Result<Self> {
        if capacities.liquid == 0 {
            return Err(invalid("capacities", "liquid capacity must be positive"));
        }
        Ok(Self {
            liquid: Vec::new(),
            glass: Vec::new(),
            crystal: Vec::new(),
            capacities,
            novelty: NoveltyTable::new(z_norm)?,
            next_id: 0,
        })
    }

    pub fn capacities(&self) -> Capacities {
        self.capacities
    }

    pub fn novelty_table(&self) -> &NoveltyTable {
        &self.novelty
    }

    pub fn phase(&self, phase: Phase) -> &[Experience] {
        match phase {
            Phase::Liquid => &self.liquid,
            Phase::Glass => &self.glass,
            Phase::Crystal => &self.crystal,
        }
    }

    fn phase_mut(&mut self, phase: Phase) -> &mut Vec<Experience> {
        match phase {
            Phase::Liquid => &mut self.liquid,
            Phase::Glass => &mut self.glass,
            Phase::Crystal => &mut self.crystal,
        }
    }

    pub fn len(&self) -> usize {
        self.liquid.len() + self.glass.len() + self.crystal.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn occupancy(&self) -> [usize; 3] {
        [self.liquid.len(), self.glass.len(), self.crystal.len()]
    }

    /// All experiences, liquid first, each phase in its stored order.
    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.liquid.iter().chain(&self.glass).chain(&self.crystal)
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Experience> {
        self.liquid.iter_mut().chain(self.glass.iter_mut()).chain(self.crystal.iter_mut())
    }

    pub fn get_mut(&mut self, phase: Phase, index: usize) -> Option<&mut Experience> {
        self.phase_mut(phase).get_mut(index)
    }

    pub fn phase_of(&self, id: u64) -> Option<Phase> {
        Phase::ALL.into_iter().find(|&p| self.phase(p).iter().any(|e| e.id == id))
    }

    pub fn mean_c(&self, phase: Phase) -> Option<f64> {
        let xs = self.phase(phase);
        (!xs.is_empty()).then(|| xs.iter().map(|e| e.c.value()).sum::<f64>() / xs.len() as f64)
    }

    /// Store a fresh transition in the liquid buffer and count its visit.
    /// Returns the assigned id. Liquid overflow is resolved at the next
    /// consolidation.
    pub fn insert(&mut self, mut exp: Experience) -> Result<u64> {
        if exp.c.value() != 0.0 {
            return Err(AmcError::NonZeroInsert(exp.c.value()));
        }
        exp.id = self.next_id;
        self.next_id += 1;
        self.novelty.visit(exp.state_id, exp.action);
        exp.novelty = self.novelty.novelty_of_count(self.novelty.count(exp.state_id, exp.action));
        let id = exp.id;
        self.liquid.push(exp);
        Ok(id)
    }

    /// Add `amount` to the persistent return boost of the listed experiences
    /// (those still stored) and apply it to their current utility.
    pub fn boost(&mut self, ids: &[u64], amount: f64) {
        if ids.is_empty() {
            return;
        }
        let set: std::collections::HashSet<u64> = ids.iter().copied().collect();
        for e in self.iter_mut().filter(|e| set.contains(&e.id)) {
            e.return_boost += amount;
            e.utility = (e.utility + amount).clamp(0.0, 1.0);
        }
    }

    /// One consolidation pass: rescore, step, transfer, evict.
    pub fn consolidate(
        &mut self,
        q: &QTable,
        cfg: &ConsolidationConfig,
        rng: &mut StreamRng,
    ) -> Result<ConsolidationReport> {
        let mut report = ConsolidationReport::default();
        if !self.is_empty() {
            self.rescore_and_step(q, cfg, rng, &mut report)?;
            self.transfer(&cfg.thresholds, &mut report);
            self.evict_liquid_overflow(&mut report);
        }
        report.mean_c_per_phase = Phase::ALL.map(|p| self.mean_c(p));
        Ok(report)
    }

    fn rescore_and_step(
        &mut self,
        q: &QTable,
        cfg: &ConsolidationConfig,
        rng: &mut StreamRng,
        report: &mut ConsolidationReport,
    ) -> Result<()> {
        let pool: Vec<&Experience> = self.iter().collect();
        let n = pool.len();
        let td: Vec<f64> = pool.iter().map(|e| td_error(e, q, cfg.gamma)).collect::<Result<_>>()?;
        let nov: Vec<f64> = pool
            .iter()
            .map(|e| self.novelty.novelty_of_count(self.novelty.count(e.state_id, e.action)))
            .collect();

        let by_state = NeighborIndex::build(&pool)?;
        let downstream: Vec<f64> = if cfg.switches.random_downstream {
            (0..n).map(|_| rng.random::<f64>() * cfg.td_scale).collect()
        } else {
            let owned;
            let search = match cfg.neighbor_target {
                NeighborTarget::States => &by_state,
                NeighborTarget::NextStates => {
                    let swapped: Vec<Experience> = pool
                        .iter()
                        .map(|e| Experience {
                            state: e.next_state.clone(),
                            ..(*e).clone()
                        })
                        .collect();
                    let refs: Vec<&Experience> = swapped.iter().collect();
                    owned = NeighborIndex::build(&refs)?;
                    &owned
                }
            };
            let mut cache: HashMap<Vec<u64>, f64> = HashMap::new();
            pool.iter()
                .map(|e| {
                    let key: Vec<u64> = e.next_state.iter().map(|x| x.to_bits()).collect();
                    if let Some(&v) = cache.get(&key) {
                        return Ok(v);
                    }
                    let nb = search.knn(&e.next_state, cfg.k_neighbors)?;
                    let v = nb.iter().map(|&j| td[j]).sum::<f64>() / nb.len() as f64;
                    cache.insert(key, v);
                    Ok(v)
                })
                .collect::<Result<_>>()?
        };

        let flags: Vec<bool> = if cfg.switches.interference {
            let epsilon = match cfg.epsilon {
                EpsilonRule::Absolute(e) => e,
                EpsilonRule::DiameterFraction(f) => (f * by_state.diameter()).max(1e-12),
            };
            let ip = InterferenceParams::new(epsilon, cfg.delta_r)?;
            pool.iter().map(|e| by_state.interferes(e, &ip)).collect()
        } else {
            vec![false; n]
        };
        drop(pool);

        for (i, e) in self.iter_mut().enumerate() {
            e.td_error = td[i];
            e.novelty = nov[i];
            e.downstream_value = downstream[i];
            let base = utility(td[i], nov[i], downstream[i], &cfg.weights, cfg.td_scale);
            e.utility = (base + e.return_boost).clamp(0.0, 1.0);
            e.interference_flag = flags[i];
            if !flags[i] {
                e.interference_count = 0;
            }
            // one draw per experience keeps the stream aligned across ablations
            let z: f64 = rng.sample(StandardNormal);
            if cfg.switches.crystallize {
                let interference = if flags[i] { 1.0 } else { 0.0 };
                e.c = em_step(e.c, e.utility, interference, &cfg.sde, z)?;
            }
        }
        report.interference_flags = flags.iter().filter(|&&f| f).count();
        Ok(())
    }

    /// Move members of `from` satisfying `pred` to the end of `to`, keeping
    /// order; moves that would overflow `to` are deferred.
    fn move_where(&mut self, from: Phase, to: Phase, pred: impl Fn(&Experience) -> bool) -> (usize, usize) {
        let room = self.capacities.of(to).saturating_sub(self.phase(to).len());
        let source = std::mem::take(self.phase_mut(from));
        let (mut moved, mut deferred) = (Vec::new(), 0);
        let mut kept = Vec::with_capacity(source.len());
        for e in source {
            if pred(&e) {
                if moved.len() < room {
                    moved.push(e);
                    continue;
                }
                deferred += 1;
            }
            kept.push(e);
        }
        *self.phase_mut(from) = kept;
        let count = moved.len();
        self.phase_mut(to).extend(moved);
        (count, deferred)
    }

    fn transfer(&mut self, th: &Thresholds, report: &mut ConsolidationReport) {
        let (lg, d1) = self.move_where(Phase::Liquid, Phase::Glass, |e| e.c.value() > th.tau_l);
        let (gc, d2) = self.move_where(Phase::Glass, Phase::Crystal, |e| e.c.value() > th.tau_c);
        // demotion is never capacity limited: liquid overflow is evicted below
        let floor = th.tau_l - th.hysteresis;
        let demoted: Vec<Experience>;
        (self.glass, demoted) = std::mem::take(&mut self.glass)
            .into_iter()
            .partition(|e| e.c.value() >= floor);
        report.demotions_gl = demoted.len();
        self.liquid.extend(demoted);
        report.promotions_lg = lg;
        report.promotions_gc = gc;
        report.deferred_promotions = d1 + d2;

        let before = self.crystal.len();
        self.crystal.retain_mut(|e| {
            if e.interference_flag {
                e.interference_count += 1;
            }
            e.interference_count < th.tau_evict
        });
        report.crystal_evictions = before - self.crystal.len();
    }

    fn evict_liquid_overflow(&mut self, report: &mut ConsolidationReport) {
        let excess = self.liquid.len().saturating_sub(self.capacities.liquid);
        if excess == 0 {
            return;
        }
        // repeated argmin of U with oldest-first ties, done as one sort
        let mut order: Vec<usize> = (0..self.liquid.len()).collect();
        order.sort_by(|&a, &b| {
            let (x, y) = (&self.liquid[a], &self.liquid[b]);
            x.utility
                .total_cmp(&y.utility)
                .then(x.insert_step.cmp(&y.insert_step))
                .then(a.cmp(&b))
        });
        let mut doomed = vec![false; self.liquid.len()];
        for &i in &order[..excess] {
            doomed[i] = true;
        }
        let mut i = 0;
        self.liquid.retain(|_| {
            let keep = !doomed[i];
            i += 1;
            keep
        });
        report.liquid_evictions = excess;
    }

    pub fn to_snapshot_json(&self) -> Result<String> {
        let snap = Snapshot {
            version: SNAPSHOT_VERSION,
            buffers: self.clone(),
        };
        serde_json::to_string(&snap).map_err(|e| AmcError::Snapshot(e.to_string()))
    }

    pub fn from_snapshot_json(s: &str) -> Result<Self> {
        let snap: Snapshot = serde_json::from_str(s).map_err(|e| AmcError::Snapshot(e.to_string()))?;
        if snap.version != SNAPSHOT_VERSION {
            return Err(AmcError::Snapshot(format!("unsupported snapshot version {}", snap.version)));
        }
        Ok(snap.buffers)
    }
}

/// Phase-modulated step size `η_base·(1 − c)²`.
pub fn effective_lr(eta_base: f64, c: CrystallizationState) -> f64 {
    let plastic = 1.0 - c.value();
    eta_base * plastic * plastic
}

#[cfg(test)]
mod tests;
