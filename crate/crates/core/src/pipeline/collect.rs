use std::sync::Arc;

use super::agent::{ActMode, Agent, Controller};
use super::config::EnvSection;
use crate::envsim::{Action, DrivingEnv, LayoutRegistry, StepResult, Termination, Weather};
use crate::nn::Sampler;
use crate::replay::{Episode, TransitionRecord};
use crate::Result;

/// Built-in layouts plus any listed in the config's layouts file.
pub fn build_registry(env: &EnvSection) -> Result<Arc<LayoutRegistry>> {
    let mut reg = LayoutRegistry::builtin();
    if let Some(path) = &env.layouts_file {
        reg.load_file(path)?;
    }
    reg.get(&env.layout)?;
    if let Some(l) = &env.eval_layout {
        reg.get(l)?;
    }
    Ok(Arc::new(reg))
}

/// A finished episode with its bookkeeping.
#[derive(Clone, Debug)]
pub struct CollectedEpisode {
    pub episode: Episode,
    pub episode_return: f64,
    pub weather: String,
}

fn record(r: &StepResult, action: Action, episode_id: u64, step_index: u32) -> TransitionRecord {
    TransitionRecord {
        observation: r.observation.clone(),
        mask: r.mask.clone(),
        action,
        reward: r.reward,
        termination: r.termination,
        episode_id,
        step_index,
    }
}

struct Ongoing {
    records: Vec<TransitionRecord>,
    last: StepResult,
    episode_return: f64,
    seed: u64,
}

/// One environment driven step by step by an agent, possibly across
/// several collection rounds.
pub struct Collector {
    env: DrivingEnv,
    controller: Controller,
    sampler: Sampler,
    layout: String,
    weathers: Vec<Weather>,
    /// Episode ids are `next_index * id_stride + id_offset`.
    id_offset: u64,
    id_stride: u64,
    next_index: u64,
    ongoing: Option<Ongoing>,
}

impl Collector {
    pub fn new(
        agent: &Agent,
        registry: Arc<LayoutRegistry>,
        layout: &str,
        weathers: Vec<Weather>,
        seed: u64,
        id_offset: u64,
        id_stride: u64,
    ) -> Result<Self> {
        registry.get(layout)?;
        Ok(Self {
            env: DrivingEnv::new(agent.config.env.sim.clone(), registry)?,
            controller: Controller::new(agent)?,
            sampler: Sampler::seeded(seed),
            layout: layout.to_string(),
            weathers,
            id_offset,
            id_stride: id_stride.max(1),
            next_index: 0,
            ongoing: None,
        })
    }

    fn current_id(&self) -> u64 {
        self.next_index * self.id_stride + self.id_offset
    }

    fn start(&mut self, agent: &Agent) -> Result<()> {
        let weather = self.weathers[(self.next_index as usize) % self.weathers.len()].clone();
        self.env.set_weather(weather);
        let seed = self.sampler.next_seed();
        let first = self.env.reset(seed, &self.layout)?;
        self.controller.reset(agent)?;
        let rec = record(&first, Action::ZERO, self.current_id(), 0);
        self.ongoing = Some(Ongoing { records: vec![rec], last: first, episode_return: 0.0, seed });
        Ok(())
    }

    /// Advances the environment by one step, returning the episode if it ended.
    pub fn step(&mut self, agent: &Agent, mode: ActMode) -> Result<Option<CollectedEpisode>> {
        if self.ongoing.is_none() {
            self.start(agent)?;
        }
        let id = self.current_id();
        let ongoing = self.ongoing.as_mut().expect("episode started above");
        let action = self.controller.act(agent, &ongoing.last.observation, mode, &mut self.sampler)?;
        let result = self.env.step(action)?;
        ongoing.episode_return += result.reward;
        let index = ongoing.records.len() as u32;
        ongoing.records.push(record(&result, action.clamped(), id, index));
        let done = result.termination != Termination::None;
        ongoing.last = result;
        if !done {
            return Ok(None);
        }
        let finished = self.ongoing.take().expect("ongoing episode");
        let weather = self.env.weather().name.clone();
        self.next_index += 1;
        Ok(Some(CollectedEpisode {
            episode: Episode::new(self.layout.clone(), finished.seed, finished.records)?,
            episode_return: finished.episode_return,
            weather,
        }))
    }

    /// Runs steps until one episode finishes.
    pub fn run_episode(&mut self, agent: &Agent, mode: ActMode) -> Result<CollectedEpisode> {
        loop {
            if let Some(ep) = self.step(agent, mode)? {
                return Ok(ep);
            }
        }
    }
}
