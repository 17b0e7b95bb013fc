use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{AgentError, ExplorationSchedule, ReplayBuffer, Transition};
use crate::billing::{daily_cost, BillReport};
use crate::env::{Action, EnvConfig, EnvState, QueueOrder, StateImage, Termination};
use crate::nn::{parameter_shapes, Checkpoint, Mode, NetConfig, QNetwork, RmsProp, RngState, Tensor};
use crate::oracle::Schedule;
use crate::rewards::{compute_reward, RewardConfig};
use crate::scenario::{BlockSet, CellQuantum, Tariff};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Environment steps between target-network syncs.
    pub target_sync_steps: u64,
    pub episodes: usize,
    pub double_dqn: bool,
    pub seed: u64,
    pub learning_rate: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    pub exploration: ExplorationSchedule,
    /// Environment steps per gradient step.
    pub train_every: u64,
    /// Shuffle the block queue at each training episode.
    pub shuffle_queue: bool,
    /// Rows averaged into one network input row.
    pub downsample: usize,
    pub net: NetConfig,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 30_000,
            target_sync_steps: 300,
            episodes: 5000,
            double_dqn: true,
            seed: 7,
            learning_rate: 1e-3,
            rms_decay: 0.99,
            rms_eps: 1e-8,
            exploration: ExplorationSchedule::default(),
            train_every: 4,
            shuffle_queue: true,
            downsample: 2,
            net: NetConfig::default(),
        }
    }
}

impl AgentConfig {
    pub fn validate(&self, env: &EnvConfig) -> Result<(), AgentError> {
        let bad = |msg: String| Err(AgentError::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if self.batch_size < 2 {
            return bad(format!("batch size must be at least 2, got {}", self.batch_size));
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!("batch size {} exceeds buffer capacity {}", self.batch_size, self.buffer_capacity));
        }
        if self.target_sync_steps == 0 || self.train_every == 0 || self.downsample == 0 {
            return bad("target_sync_steps, train_every and downsample must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        self.exploration.validate().map_err(AgentError::Config)?;
        let rows = (env.max_height as usize).div_ceil(self.downsample);
        if self.net.input_height != rows || self.net.input_width != StateImage::COLS {
            return bad(format!(
                "network expects {}x{} inputs but the grid renders {}x{}",
                self.net.input_height,
                self.net.input_width,
                rows,
                StateImage::COLS
            ));
        }
        if self.net.input_planes != StateImage::PLANES || self.net.outputs != Action::COUNT {
            return bad("network must take 2 planes and emit 3 Q-values".into());
        }
        self.net.validate().map_err(|e| AgentError::Config(e.to_string()))
    }
}

/// Stacks state images into a `[n, planes, rows, 24]` batch.
pub fn batch_input<'a, T: Scalar>(
    states: impl IntoIterator<Item = &'a StateImage>,
    downsample: usize,
    net: &NetConfig,
) -> Tensor<T> {
    let per = net.input_len();
    let mut data = Vec::new();
    let mut n = 0;
    for s in states {
        data.resize(per * (n + 1), T::zero());
        s.write_input(downsample, &mut data[per * n..]);
        n += 1;
    }
    Tensor::new(vec![n, net.input_planes, net.input_height, net.input_width], data).expect("sized above")
}

/// Index of the largest value; ties go to the lowest index.
fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn greedy_action<T: Scalar>(net: &QNetwork<T>, state: &StateImage, downsample: usize) -> Result<Action, AgentError> {
    let q = net.predict(&batch_input(std::iter::once(state), downsample, net.config()))?;
    Ok(Action::from_index(argmax(q.row(0))).expect("three outputs"))
}

/// Epsilon-greedy choice. One uniform draw decides exploration, a second
/// picks the random action.
pub fn select_action<T: Scalar, R: Rng + ?Sized>(
    net: &QNetwork<T>,
    state: &StateImage,
    downsample: usize,
    epsilon: f64,
    rng: &mut R,
) -> Result<Action, AgentError> {
    if rng.gen::<f64>() < epsilon {
        return Ok(Action::from_index(rng.gen_range(0..Action::COUNT)).expect("in range"));
    }
    greedy_action(net, state, downsample)
}

/// Bootstrapped targets for a batch of transitions.
pub fn td_targets<T: Scalar>(
    batch: &[&Transition],
    policy: &QNetwork<T>,
    target: &QNetwork<T>,
    gamma: f64,
    double_dqn: bool,
    downsample: usize,
) -> Result<Vec<T>, AgentError> {
    let next = batch_input(batch.iter().map(|t| &t.next_state), downsample, target.config());
    let q_target = target.predict(&next)?;
    let q_policy = if double_dqn { Some(policy.predict(&next)?) } else { None };
    let gamma = T::from_f64_lossy(gamma);
    Ok(batch
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let r = T::from_f64_lossy(t.reward);
            if t.terminal {
                return r;
            }
            let row = q_target.row(i);
            let bootstrap = match &q_policy {
                Some(qp) => row[argmax(qp.row(i))],
                None => row.iter().copied().fold(T::neg_infinity(), T::max),
            };
            r + gamma * bootstrap
        })
        .collect())
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: u64,
    pub total_reward: f64,
    pub peak_kw: f64,
    pub daily_cost_cents: f64,
    pub epsilon: f64,
    pub overflow: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub episodes: Vec<EpisodeRecord>,
}

impl TrainingLog {
    pub const CSV_HEADER: &'static str = "episode,steps,total_reward,peak_kw,daily_cost_cents,epsilon";

    /// Fixed-precision CSV so identical runs give identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.episodes {
            writeln!(
                out,
                "{},{},{:.6},{:.1},{:.1},{:.6}",
                r.episode, r.steps, r.total_reward, r.peak_kw, r.daily_cost_cents, r.epsilon
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Greedy rollout result.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// Placements made before the rollout ended; the profile is the final grid.
    pub schedule: Schedule,
    pub bill: BillReport,
    /// Every block was placed without overflow.
    pub completed: bool,
    pub steps: u64,
}

impl Evaluation {
    pub fn peak_kw(&self) -> f64 {
        self.schedule.peak_kw()
    }
}

/// Double-DQN learner owning both networks, the replay buffer and the RNG.
#[derive(Debug, Clone)]
pub struct DqnAgent<T> {
    config: AgentConfig,
    policy: QNetwork<T>,
    target: QNetwork<T>,
    optimizer: RmsProp<T>,
    buffer: ReplayBuffer,
    rng: ChaCha8Rng,
    steps_done: u64,
    episodes_done: u64,
    syncs: u64,
}

impl<T: Scalar> DqnAgent<T> {
    pub fn new(config: AgentConfig, env: &EnvConfig) -> Result<Self, AgentError> {
        config.validate(env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let policy = QNetwork::new(config.net.clone(), &mut rng)?;
        let target = policy.clone();
        let sizes: Vec<usize> = parameter_shapes(&config.net).iter().map(|s| s.iter().product()).collect();
        let optimizer = RmsProp::new(
            T::from_f64_lossy(config.learning_rate),
            T::from_f64_lossy(config.rms_decay),
            T::from_f64_lossy(config.rms_eps),
            &sizes,
        );
        let buffer = ReplayBuffer::new(config.buffer_capacity);
        Ok(Self { config, policy, target, optimizer, buffer, rng, steps_done: 0, episodes_done: 0, syncs: 0 })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn policy(&self) -> &QNetwork<T> {
        &self.policy
    }

    pub fn target(&self) -> &QNetwork<T> {
        &self.target
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn steps_done(&self) -> u64 {
        self.steps_done
    }

    pub fn episodes_done(&self) -> u64 {
        self.episodes_done
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }

    pub fn epsilon(&self) -> f64 {
        self.config.exploration.epsilon_at(self.steps_done)
    }

    pub fn select_action(&mut self, state: &StateImage, epsilon: f64) -> Result<Action, AgentError> {
        select_action(&self.policy, state, self.config.downsample, epsilon, &mut self.rng)
    }

    /// Stores a transition without advancing the step counter.
    pub fn remember(&mut self, transition: Transition) {
        self.buffer.push(transition);
    }

    /// One RMSProp step on a uniform minibatch. Returns `None` without
    /// touching anything while the buffer holds fewer than a batch.
    pub fn train_step(&mut self) -> Result<Option<T>, AgentError> {
        let n = self.config.batch_size;
        let Some(idx) = self.buffer.sample_indices(n, &mut self.rng) else {
            return Ok(None);
        };
        let batch: Vec<&Transition> = idx.iter().map(|&i| self.buffer.get(i).expect("sampled index")).collect();
        let down = self.config.downsample;
        let targets = td_targets(&batch, &self.policy, &self.target, self.config.gamma, self.config.double_dqn, down)?;
        let input = batch_input(batch.iter().map(|t| &t.state), down, &self.config.net);
        let actions: Vec<usize> = batch.iter().map(|t| t.action.index()).collect();
        let (loss, grads, cache) = self.policy.huber_gradients(&input, &actions, &targets, Mode::Train)?;
        self.policy.commit_batch_stats(&cache);
        self.optimizer.step(self.policy.parameters_mut(), &grads)?;
        Ok(Some(loss))
    }

    pub fn sync_target(&mut self) {
        self.target.sync_from(&self.policy);
        self.syncs += 1;
    }

    /// Records one environment step and runs the periodic training and sync.
    pub fn observe(&mut self, transition: Transition) -> Result<Option<T>, AgentError> {
        self.buffer.push(transition);
        self.steps_done += 1;
        let loss = if self.steps_done.is_multiple_of(self.config.train_every) { self.train_step()? } else { None };
        if self.steps_done.is_multiple_of(self.config.target_sync_steps) {
            self.sync_target();
        }
        Ok(loss)
    }

    /// Runs one training episode.
    pub fn run_episode(
        &mut self,
        scenario: &BlockSet,
        reward: &RewardConfig,
        tariff: &Tariff,
        env_config: &EnvConfig,
    ) -> Result<EpisodeRecord, AgentError> {
        let order = if self.config.shuffle_queue { QueueOrder::Shuffled(self.rng.gen()) } else { QueueOrder::Fixed };
        let mut env = EnvState::reset(*env_config, scenario.base_profile, scenario.blocks.clone(), order)?;
        let mut state = env.render();
        let mut total_reward = 0.0;
        let mut steps = 0;
        while !env.is_terminal() {
            let action = self.select_action(&state, self.epsilon())?;
            let outcome = env.step(action)?;
            let r = outcome.report.as_ref().map_or(0.0, |rep| compute_reward::<f64>(rep, reward, tariff).total);
            let next_state = env.render();
            total_reward += r;
            steps += 1;
            self.observe(Transition { state, action, reward: r, next_state: next_state.clone(), terminal: outcome.terminal })?;
            state = next_state;
        }
        self.episodes_done += 1;
        let heights = env.grid().heights();
        Ok(EpisodeRecord {
            episode: self.episodes_done as usize,
            steps,
            total_reward,
            peak_kw: CellQuantum::STANDARD.kw(env.grid().peak()),
            daily_cost_cents: daily_cost(heights, tariff).cents(),
            epsilon: self.epsilon(),
            overflow: env.termination() == Some(Termination::Overflow),
        })
    }

    /// Trains for `config.episodes` episodes, calling `on_episode` after each.
    pub fn train<F>(
        &mut self,
        scenario: &BlockSet,
        reward: &RewardConfig,
        tariff: &Tariff,
        env_config: &EnvConfig,
        mut on_episode: F,
    ) -> Result<TrainingLog, AgentError>
    where
        F: FnMut(&Self, &EpisodeRecord) -> Result<(), AgentError>,
    {
        reward.validate().map_err(|e| AgentError::Config(e.to_string()))?;
        let mut log = TrainingLog::default();
        for _ in 0..self.config.episodes {
            let record = self.run_episode(scenario, reward, tariff, env_config)?;
            on_episode(self, &record)?;
            log.episodes.push(record);
        }
        Ok(log)
    }

    pub fn evaluate(&self, scenario: &BlockSet, tariff: &Tariff, env_config: &EnvConfig) -> Result<Evaluation, AgentError> {
        evaluate(&self.policy, self.config.downsample, scenario, tariff, env_config)
    }

    /// Policy network, optimizer, RNG position and counters.
    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            network: self.policy.clone(),
            optimizer: Some(self.optimizer.clone()),
            rng: Some(RngState::capture(&self.rng)),
            steps_done: self.steps_done,
            episodes_done: self.episodes_done,
        }
    }
}

/// Greedy rollout in scenario order.
pub fn evaluate<T: Scalar>(
    net: &QNetwork<T>,
    downsample: usize,
    scenario: &BlockSet,
    tariff: &Tariff,
    env_config: &EnvConfig,
) -> Result<Evaluation, AgentError> {
    let mut env = EnvState::reset(*env_config, scenario.base_profile, scenario.blocks.clone(), QueueOrder::Fixed)?;
    let mut steps = 0;
    while !env.is_terminal() {
        let action = greedy_action(net, &env.render(), downsample)?;
        env.step(action)?;
        steps += 1;
    }
    let assignments: BTreeMap<String, usize> =
        env.placements().iter().map(|p| (p.appliance.clone(), p.start_hour)).collect();
    let profile = *env.grid().heights();
    Ok(Evaluation {
        schedule: Schedule::with_profile(assignments, profile, tariff),
        bill: BillReport::new(&profile, tariff),
        completed: env.termination() == Some(Termination::Completed),
        steps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::LoadBlock;
    use crate::scenario::HOURS;

    fn small_config() -> AgentConfig {
        let net = NetConfig { input_height: 5, conv_channels: vec![2], hidden_units: 8, ..NetConfig::default() };
        AgentConfig { batch_size: 4, buffer_capacity: 64, episodes: 3, downsample: 2, net, ..AgentConfig::default() }
    }

    fn small_env() -> EnvConfig {
        EnvConfig { max_height: 10, ..EnvConfig::default() }
    }

    fn scenario() -> BlockSet {
        let mut base = [1; HOURS];
        base[12] = 3;
        BlockSet { base_profile: base, blocks: vec![LoadBlock::new("a", vec![2, 1]), LoadBlock::new("b", vec![1])] }
    }

    fn image(seed: u64) -> StateImage {
        let mut env = EnvState::reset(small_env(), [seed as u32 % 4; HOURS], scenario().blocks, QueueOrder::Fixed).unwrap();
        for _ in 0..seed % 5 {
            env.step(Action::Left).unwrap();
        }
        env.render()
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0f32, 5.0, 2.0]), 1);
        assert_eq!(argmax(&[3.0f32, 3.0, 3.0]), 0);
        assert_eq!(argmax(&[0.0f32, 2.0, 2.0]), 1);
    }

    #[test]
    fn terminal_and_bootstrap_targets() {
        let agent = DqnAgent::<f64>::new(small_config(), &small_env()).unwrap();
        let t = |reward, terminal| Transition { state: image(1), action: Action::Drop, reward, next_state: image(2), terminal };
        let term = t(-25.0, true);
        let live = t(1.0, false);
        let y = td_targets(&[&term, &live], agent.policy(), agent.target(), 0.99, true, 2).unwrap();
        assert_eq!(y[0], -25.0);
        let q = agent.target().predict(&batch_input([&live.next_state], 2, &agent.config().net)).unwrap();
        let pick = argmax(agent.policy().predict(&batch_input([&live.next_state], 2, &agent.config().net)).unwrap().row(0));
        assert!((y[1] - (1.0 + 0.99 * q.row(0)[pick])).abs() < 1e-12);
        let y0 = td_targets(&[&live], agent.policy(), agent.target(), 0.0, false, 2).unwrap();
        assert_eq!(y0[0], 1.0);
    }

    #[test]
    fn train_step_waits_for_a_full_batch() {
        let mut agent = DqnAgent::<f32>::new(small_config(), &small_env()).unwrap();
        let before = agent.policy().clone();
        for i in 0..3 {
            agent.remember(Transition { state: image(i), action: Action::Left, reward: 1.0, next_state: image(i + 1), terminal: false });
        }
        assert_eq!(agent.train_step().unwrap(), None);
        assert_eq!(agent.policy(), &before);
    }

    #[test]
    fn target_changes_only_at_syncs() {
        let mut cfg = small_config();
        cfg.target_sync_steps = 7;
        let mut agent = DqnAgent::<f32>::new(cfg, &small_env()).unwrap();
        let initial = agent.target().clone();
        let mut last = initial.clone();
        for i in 0..30u64 {
            let before_syncs = agent.syncs();
            agent
                .observe(Transition { state: image(i), action: Action::Right, reward: 0.5, next_state: image(i + 1), terminal: i % 4 == 0 })
                .unwrap();
            if agent.syncs() == before_syncs {
                assert_eq!(agent.target(), &last);
            } else {
                assert_eq!(agent.target(), agent.policy());
                last = agent.target().clone();
            }
        }
        assert_eq!(agent.syncs(), 30 / 7);
    }

    #[test]
    fn epsilon_one_is_uniform() {
        let agent = DqnAgent::<f32>::new(small_config(), &small_env()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut counts = [0u32; 3];
        let s = image(0);
        for _ in 0..10_000 {
            counts[select_action(agent.policy(), &s, 2, 1.0, &mut rng).unwrap().index()] += 1;
        }
        // 3 sigma of a binomial(10^4, 1/3)
        let sigma = (10_000.0f64 * (1.0 / 3.0) * (2.0 / 3.0)).sqrt();
        for c in counts {
            assert!((f64::from(c) - 10_000.0 / 3.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }

    #[test]
    fn zero_episodes_gives_empty_log() {
        let cfg = AgentConfig { episodes: 0, ..small_config() };
        let mut agent = DqnAgent::<f32>::new(cfg, &small_env()).unwrap();
        let before = agent.policy().clone();
        let log = agent.train(&scenario(), &RewardConfig::default(), &Tariff::standard_tou(), &small_env(), |_, _| Ok(())).unwrap();
        assert!(log.episodes.is_empty());
        assert_eq!(agent.policy(), &before);
    }

    #[test]
    fn short_runs_are_reproducible() {
        let run = || {
            let mut agent = DqnAgent::<f32>::new(small_config(), &small_env()).unwrap();
            let log = agent.train(&scenario(), &RewardConfig::default(), &Tariff::standard_tou(), &small_env(), |_, _| Ok(())).unwrap();
            (log.to_csv(), agent.evaluate(&scenario(), &Tariff::standard_tou(), &small_env()).unwrap())
        };
        let (a, ea) = run();
        let (b, eb) = run();
        assert_eq!(a, b);
        assert_eq!(ea, eb);
        assert_eq!(a.lines().count(), 4);
    }

    #[test]
    fn no_shiftables_evaluates_to_base() {
        let agent = DqnAgent::<f32>::new(small_config(), &small_env()).unwrap();
        let set = BlockSet { base_profile: [2; HOURS], blocks: vec![] };
        let t = Tariff::standard_tou();
        let e = agent.evaluate(&set, &t, &small_env()).unwrap();
        assert!(e.completed && e.schedule.assignments.is_empty());
        assert_eq!(e.bill.daily, daily_cost(&[2; HOURS], &t));
    }

    #[test]
    fn mismatched_input_height_is_rejected() {
        let err = DqnAgent::<f32>::new(AgentConfig::default(), &small_env()).unwrap_err();
        assert!(matches!(err, AgentError::Config(_)));
    }
}
