use rand::Rng;
use serde::{Deserialize, Serialize};

use super::baselines::{FifoBuffer, FifoSampling};
use super::metrics::{compute_metrics, ContinualMetrics};
use super::qtable::QTable;
use super::train::{train_step, AgentConfig, TrainItem};
use crate::envs::{GridTask, TaskSequence, N_ACTIONS};
use crate::error::{invalid, AmcError, Result};
use crate::memory::{
    stratified_sample, Capacities, ConsolidationConfig, ConsolidationSwitches, NeighborTarget, Phase, PhaseBuffers,
    SamplingConfig, Thresholds,
};
use crate::rng::{derive_seed, indexed_stream, stream, StreamRng};
use crate::sde::SdeParams;
use crate::utility::{td_error, EpsilonRule, Experience, UtilityWeights};

/// Which replay scheme drives the learner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Amc,
    Vanilla,
    Prioritized,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Amc => "amc",
            Method::Vanilla => "vanilla",
            Method::Prioritized => "prioritized",
        }
    }
}

/// Ablation toggles; all off is the full method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablations {
    /// `c ≡ 0`.
    pub no_crystallization: bool,
    /// Train every sample at the base rate regardless of `c`.
    pub no_lr_modulation: bool,
    /// `I ≡ 0`.
    pub no_interference: bool,
    /// `w2 = 0`, remaining weights renormalized.
    pub no_novelty: bool,
    /// `w3 = 0`, remaining weights renormalized.
    pub no_downstream: bool,
    /// One store holding the whole capacity.
    pub single_buffer: bool,
    /// `σ = 0`.
    pub zero_sigma: bool,
    /// Downstream value replaced by noise.
    pub random_downstream: bool,
}

/// Complete configuration of a continual-learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub agent: AgentConfig,
    pub sampling: SamplingConfig,
    pub sde: SdeParams,
    pub weights: UtilityWeights,
    pub thresholds: Thresholds,
    /// Interference radius as a fraction of the stored-state diameter.
    pub epsilon_fraction: f64,
    /// Reward-gap threshold as a fraction of `R_max`.
    pub delta_r_fraction: f64,
    pub k_neighbors: usize,
    pub z_norm: f64,
    /// Total replay capacity, shared by every method.
    pub buffer_size: usize,
    /// Explicit phase capacities; the 10 : 5 : 1 split of `buffer_size` otherwise.
    pub capacities: Option<Capacities>,
    pub neighbor_target: NeighborTarget,
    pub ablations: Ablations,
    /// Train a fresh learner per task so forward transfer can be reported.
    pub compute_scratch: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            agent: AgentConfig::default(),
            sampling: SamplingConfig::default(),
            sde: SdeParams::default(),
            weights: UtilityWeights::default(),
            thresholds: Thresholds::default(),
            epsilon_fraction: 0.1,
            delta_r_fraction: 0.25,
            k_neighbors: 10,
            z_norm: 10.0,
            buffer_size: 4_000,
            capacities: None,
            neighbor_target: NeighborTarget::States,
            ablations: Ablations::default(),
            compute_scratch: true,
        }
    }
}

impl RunSpec {
    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        self.sampling.validate()?;
        if self.buffer_size == 0 {
            return Err(invalid("buffer_size", "must be positive"));
        }
        if !(self.z_norm > 0.0) {
            return Err(invalid("z_norm", "must be positive"));
        }
        Ok(())
    }

    fn phase_capacities(&self) -> Capacities {
        if self.ablations.single_buffer {
            Capacities::single(self.capacities.map_or(self.buffer_size, |c| c.total()))
        } else {
            self.capacities.unwrap_or_else(|| Capacities::split(self.buffer_size))
        }
    }

    /// Consolidation settings after applying the ablations.
    pub fn consolidation(&self, r_max: f64) -> Result<ConsolidationConfig> {
        let ab = &self.ablations;
        let mut weights = self.weights;
        if ab.no_novelty {
            weights = weights.without(1)?;
        }
        if ab.no_downstream {
            weights = weights.without(2)?;
        }
        let mut sde = self.sde;
        if ab.zero_sigma {
            sde.sigma = 0.0;
        }
        let cfg = ConsolidationConfig {
            sde,
            weights,
            epsilon: EpsilonRule::DiameterFraction(self.epsilon_fraction),
            delta_r: self.delta_r_fraction * r_max,
            thresholds: self.thresholds,
            k_neighbors: self.k_neighbors,
            td_scale: r_max / (1.0 - self.agent.gamma),
            gamma: self.agent.gamma,
            neighbor_target: self.neighbor_target,
            switches: ConsolidationSwitches {
                crystallize: !ab.no_crystallization,
                interference: !ab.no_interference,
                random_downstream: ab.random_downstream,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// One finished training episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    /// Global step at the end of the episode.
    pub step: u64,
    /// Zero-based task index.
    pub task: usize,
    pub ret: f64,
    pub occupancy: [usize; 3],
    pub mean_c: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub method: Method,
    pub seed: u64,
    pub metrics: ContinualMetrics,
    /// `eval[j][k]`: mean greedy return on task `k` after training stage `j`.
    pub eval: Vec<Vec<f64>>,
    pub scratch: Option<Vec<f64>>,
    pub episodes: Vec<EpisodeRow>,
    /// Mean `|ΔQ|` over the state-actions visited in the first task, measured
    /// across the second task's training.
    pub task1_q_drift: Option<f64>,
    pub q: QTable,
}

enum Replay {
    Amc(Box<PhaseBuffers>),
    Fifo(FifoBuffer, FifoSampling),
}

impl Replay {
    fn len(&self) -> usize {
        match self {
            Replay::Amc(b) => b.len(),
            Replay::Fifo(b, _) => b.len(),
        }
    }

    fn occupancy(&self) -> ([usize; 3], [Option<f64>; 3]) {
        match self {
            Replay::Amc(b) => (b.occupancy(), Phase::ALL.map(|p| b.mean_c(p))),
            Replay::Fifo(b, _) => ([b.len(), 0, 0], [(!b.is_empty()).then_some(0.0), None, None]),
        }
    }
}

struct Learner<'a> {
    spec: &'a RunSpec,
    consol: ConsolidationConfig,
    q: QTable,
    target: QTable,
    replay: Replay,
    step: u64,
    env_rng: StreamRng,
    agent_rng: StreamRng,
    sampling_rng: StreamRng,
    sde_rng: StreamRng,
    first_task_visits: Vec<bool>,
}

impl<'a> Learner<'a> {
    fn new(method: Method, spec: &'a RunSpec, suite: &TaskSequence, seed: u64) -> Result<Self> {
        let r_max = suite.r_max();
        if !(r_max > 0.0) {
            return Err(AmcError::InvalidTask("suite has no non-zero reward".into()));
        }
        let consol = spec.consolidation(r_max)?;
        let q = QTable::new(suite.tasks[0].n_states(), N_ACTIONS, consol.td_scale);
        let q_len = q.values().len();
        let replay = match method {
            Method::Amc => Replay::Amc(Box::new(PhaseBuffers::new(spec.phase_capacities(), spec.z_norm)?)),
            Method::Vanilla => Replay::Fifo(FifoBuffer::new(spec.buffer_size)?, FifoSampling::Uniform),
            Method::Prioritized => Replay::Fifo(
                FifoBuffer::new(spec.buffer_size)?,
                FifoSampling::Prioritized {
                    exponent: spec.sampling.priority_exponent_liquid,
                    is_exponent: spec.sampling.is_exponent,
                    floor: spec.sampling.priority_floor,
                },
            ),
        };
        Ok(Self {
            spec,
            consol,
            target: q.clone(),
            q,
            replay,
            step: 0,
            env_rng: stream(seed, "env"),
            agent_rng: stream(seed, "agent"),
            sampling_rng: stream(seed, "sampling"),
            sde_rng: stream(seed, "sde"),
            first_task_visits: vec![false; q_len],
        })
    }

    fn act(&mut self, state: usize, epsilon: f64) -> Result<usize> {
        // both draws are always taken so the stream does not depend on Q
        let explore = self.agent_rng.random::<f64>() < epsilon;
        let random_action = self.agent_rng.random_range(0..N_ACTIONS);
        if explore { Ok(random_action) } else { self.q.argmax(state) }
    }

    fn consolidate(&mut self) -> Result<()> {
        if let Replay::Amc(b) = &mut self.replay {
            b.consolidate(&self.q, &self.consol, &mut self.sde_rng)?;
        }
        Ok(())
    }

    fn train(&mut self) -> Result<()> {
        let cfg = &self.spec.agent;
        let modulate = !self.spec.ablations.no_lr_modulation;
        match &mut self.replay {
            Replay::Amc(b) => {
                let draws = stratified_sample(b, &self.spec.sampling, &mut self.sampling_rng)?;
                let batch: Vec<TrainItem> = draws
                    .iter()
                    .map(|d| {
                        let e = &b.phase(d.phase)[d.index];
                        train_item(e, if modulate { e.c.value() } else { 0.0 }, d.is_weight)
                    })
                    .collect();
                let fresh = train_step(&mut self.q, &self.target, &batch, cfg, self.step)?;
                for (d, td) in draws.iter().zip(fresh) {
                    if let Some(e) = b.get_mut(d.phase, d.index) {
                        e.td_error = td;
                    }
                }
            }
            Replay::Fifo(b, how) => {
                let draws = b.sample(self.spec.sampling.batch_size, *how, &mut self.sampling_rng)?;
                let batch: Vec<TrainItem> = draws
                    .iter()
                    .map(|&(i, w)| train_item(b.get(i).expect("sampled index is stored"), 0.0, w))
                    .collect();
                let fresh = train_step(&mut self.q, &self.target, &batch, cfg, self.step)?;
                for (&(i, _), td) in draws.iter().zip(fresh) {
                    b.set_priority(i, td);
                }
            }
        }
        Ok(())
    }

    fn train_task(&mut self, task: &GridTask, task_index: usize, rows: &mut Vec<EpisodeRow>) -> Result<()> {
        let cfg = self.spec.agent;
        let mut task_step = 0u64;
        while task_step < cfg.steps_per_task {
            let mut state = task.sample_start(&mut self.env_rng);
            let mut ret = 0.0;
            let mut ids = Vec::new();
            let mut consolidated_now = false;
            for _ in 0..task.max_steps {
                let action = self.act(state, cfg.epsilon(task_step))?;
                let tr = task.step_with(state, action, &mut self.env_rng)?;
                if task_index == 0 {
                    self.first_task_visits[state * N_ACTIONS + action] = true;
                }
                let mut exp = Experience::new(
                    task.features(state),
                    state,
                    action,
                    tr.reward,
                    task.features(tr.next_state),
                    tr.next_state,
                    tr.terminal,
                    self.step,
                );
                exp.td_error = td_error(&exp, &self.q, cfg.gamma)?;
                match &mut self.replay {
                    Replay::Amc(b) => ids.push(b.insert(exp)?),
                    Replay::Fifo(b, _) => {
                        b.push(exp);
                    }
                }
                ret += tr.reward;
                self.step += 1;
                task_step += 1;

                if self.step.is_multiple_of(cfg.f_train) && self.replay.len() >= cfg.b_min {
                    self.train()?;
                }
                consolidated_now = self.step.is_multiple_of(cfg.f_consol);
                if consolidated_now {
                    self.consolidate()?;
                }
                if self.step.is_multiple_of(cfg.f_target) {
                    self.target.copy_from(&self.q);
                }
                state = tr.next_state;
                if tr.terminal || task_step >= cfg.steps_per_task {
                    break;
                }
            }
            if let Replay::Amc(b) = &mut self.replay {
                b.boost(&ids, ret / self.consol.td_scale);
            }
            if !consolidated_now {
                self.consolidate()?;
            }
            let (occupancy, mean_c) = self.replay.occupancy();
            rows.push(EpisodeRow {
                step: self.step,
                task: task_index,
                ret,
                occupancy,
                mean_c,
            });
        }
        Ok(())
    }
}

fn train_item(e: &Experience, c: f64, is_weight: f64) -> TrainItem {
    TrainItem {
        state: e.state_id,
        action: e.action,
        reward: e.reward,
        next_state: e.next_state_id,
        done: e.done,
        c,
        is_weight,
    }
}

/// Mean undiscounted return of the greedy policy over `episodes` random starts.
pub fn evaluate_greedy(q: &QTable, task: &GridTask, episodes: usize, rng: &mut StreamRng) -> Result<f64> {
    if episodes == 0 {
        return Err(invalid("eval_episodes", "must be >= 1"));
    }
    let mut total = 0.0;
    for _ in 0..episodes {
        let mut state = task.sample_start(rng);
        for _ in 0..task.max_steps {
            let tr = task.step_with(state, q.argmax(state)?, rng)?;
            total += tr.reward;
            state = tr.next_state;
            if tr.terminal {
                break;
            }
        }
    }
    Ok(total / episodes as f64)
}

/// Train on every task of `suite` in order and evaluate greedily on all tasks
/// after each stage.
pub fn run_continual(method: Method, suite: &TaskSequence, spec: &RunSpec, seed: u64) -> Result<RunResult> {
    spec.validate()?;
    if suite.is_empty() {
        return Err(AmcError::InvalidTask("empty task sequence".into()));
    }
    let (eval, episodes, task1_q_drift, q) = run_stages(method, suite, spec, seed)?;
    let scratch = if spec.compute_scratch {
        let mut s = Vec::with_capacity(suite.len());
        for (k, task) in suite.tasks.iter().enumerate() {
            let single = TaskSequence {
                tasks: vec![task.clone()],
                permutation_seed: suite.permutation_seed,
            };
            let (e, ..) = run_stages(method, &single, spec, derive_seed(seed, "scratch", k as u64))?;
            s.push(e[0][0]);
        }
        Some(s)
    } else {
        None
    };
    let metrics = compute_metrics(&eval, scratch.as_deref())?;
    Ok(RunResult {
        method,
        seed,
        metrics,
        eval,
        scratch,
        episodes,
        task1_q_drift,
        q,
    })
}

type Stages = (Vec<Vec<f64>>, Vec<EpisodeRow>, Option<f64>, QTable);

fn run_stages(method: Method, suite: &TaskSequence, spec: &RunSpec, seed: u64) -> Result<Stages> {
    let mut learner = Learner::new(method, spec, suite, seed)?;
    let mut rows = Vec::new();
    let mut eval = Vec::with_capacity(suite.len());
    let mut after_first: Option<QTable> = None;
    let mut drift = None;
    for (j, task) in suite.tasks.iter().enumerate() {
        learner.train_task(task, j, &mut rows)?;
        if j == 0 {
            after_first = Some(learner.q.clone());
        }
        if j == 1 {
            let before = after_first.as_ref().expect("first stage recorded");
            drift = mean_abs_change(before, &learner.q, &learner.first_task_visits);
        }
        let mut rng = indexed_stream(seed, "eval", j as u64);
        let row: Vec<f64> = suite
            .tasks
            .iter()
            .map(|t| evaluate_greedy(&learner.q, t, spec.agent.eval_episodes, &mut rng))
            .collect::<Result<_>>()?;
        eval.push(row);
    }
    Ok((eval, rows, drift, learner.q))
}

fn mean_abs_change(a: &QTable, b: &QTable, mask: &[bool]) -> Option<f64> {
    let diffs: Vec<f64> = a
        .values()
        .iter()
        .zip(b.values())
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|((x, y), _)| (x - y).abs())
        .collect();
    (!diffs.is_empty()).then(|| diffs.iter().sum::<f64>() / diffs.len() as f64)
}
