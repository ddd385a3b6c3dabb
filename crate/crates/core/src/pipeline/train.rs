use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::agent::{stream, ActMode, Agent};
use super::checkpoint::save_checkpoint;
use super::collect::{build_registry, CollectedEpisode, Collector};
use super::config::RunConfig;
use super::evaluate::evaluate_agent;
use super::metrics::{MetricsRecord, MetricsWriter};
use crate::nn::Sampler;
use crate::replay::MultiSourceBuffer;
use crate::{Error, Result};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const INIT_CHECKPOINT: &str = "init.safetensors";
pub const FINAL_CHECKPOINT: &str = "final.safetensors";
pub const BEST_CHECKPOINT: &str = "best.safetensors";
pub const DIAGNOSTIC_CHECKPOINT: &str = "diagnostic.safetensors";

#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub out_dir: PathBuf,
    pub metrics: PathBuf,
    pub init_checkpoint: PathBuf,
    pub final_checkpoint: PathBuf,
    /// Highest periodic evaluation mean, if any evaluation ran.
    pub best_checkpoint: Option<PathBuf>,
    pub best_eval: Option<f64>,
    pub global_step: u64,
    pub env_step: u64,
}

struct Run<'a> {
    agent: Agent,
    buffer: MultiSourceBuffer,
    metrics: MetricsWriter,
    terminations: BTreeMap<String, u64>,
    train_rng: ChaCha8Rng,
    train_sampler: Sampler,
    out_dir: &'a Path,
    best_eval: Option<f64>,
    next_eval: u64,
}

impl Run<'_> {
    fn add_episode(&mut self, ep: CollectedEpisode) -> Result<()> {
        let termination = ep.episode.termination();
        *self.terminations.entry(termination.as_str().to_string()).or_default() += 1;
        let meta = ep.episode.meta().clone();
        let length = ep.episode.len();
        self.buffer.add_episode(ep.episode)?;
        self.metrics.write(&MetricsRecord::Episode {
            global_step: self.agent.global_step,
            env_step: self.agent.env_step,
            episode_id: meta.episode_id,
            layout: meta.layout,
            weather: ep.weather,
            episode_return: ep.episode_return,
            length,
            termination: termination.as_str().to_string(),
            terminations: self.terminations.clone(),
            buffer: self.buffer.stats(),
        })
    }

    fn update(&mut self) -> Result<()> {
        let r = &self.agent.config.replay;
        let (b, l) = (r.batch_size, r.sequence_length);
        let batch = match self.buffer.sample_batch(b, l, self.train_rng.random()) {
            Ok(batch) => batch,
            Err(Error::EmptyBuffer { .. }) => {
                log::warn!("no replay sequence of length {l} yet; skipping update");
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let (loss, behavior, model_grad_norm) = self.agent.update(&batch, &mut self.train_sampler)?;
        self.metrics.write(&MetricsRecord::Update {
            global_step: self.agent.global_step,
            env_step: self.agent.env_step,
            loss,
            behavior,
            model_grad_norm,
        })
    }

    fn maybe_evaluate(&mut self, registry: &std::sync::Arc<crate::envsim::LayoutRegistry>) -> Result<()> {
        let s = &self.agent.config.schedule;
        if s.eval_every == 0 || self.agent.env_step < self.next_eval {
            return Ok(());
        }
        while self.next_eval <= self.agent.env_step {
            self.next_eval += s.eval_every;
        }
        let cfg = &self.agent.config;
        let rows = evaluate_agent(
            &self.agent,
            registry.clone(),
            cfg.eval_layout(),
            &cfg.env.train_weathers,
            s.eval_episodes,
            s.seed,
        )?;
        for row in &rows {
            self.metrics.write(&MetricsRecord::Eval {
                global_step: self.agent.global_step,
                env_step: self.agent.env_step,
                layout: row.layout.clone(),
                weather: row.weather.clone(),
                episodes: row.returns.len(),
                mean_return: row.mean,
                ci95: row.ci95,
            })?;
        }
        let score = rows.iter().map(|r| r.mean).sum::<f64>() / rows.len() as f64;
        if self.best_eval.is_none_or(|b| score > b) {
            self.best_eval = Some(score);
            save_checkpoint(&self.out_dir.join(BEST_CHECKPOINT), &self.agent)?;
        }
        Ok(())
    }
}

/// Runs one configuration end to end, writing metrics and checkpoints into
/// `out_dir`. A numerical failure leaves a diagnostic checkpoint behind.
pub fn train(config: &RunConfig, out_dir: &Path) -> Result<TrainSummary> {
    config.validate()?;
    std::fs::create_dir_all(out_dir)?;
    std::fs::write(out_dir.join("config.toml"), config.to_toml_string()?)?;
    let registry = build_registry(&config.env)?;
    let seed = config.schedule.seed;
    let agent = Agent::new(config.clone())?;
    save_checkpoint(&out_dir.join(INIT_CHECKPOINT), &agent)?;

    let workers = config.schedule.workers;
    let mut collect_rng = ChaCha8Rng::seed_from_u64(seed ^ stream::COLLECT);
    let mut collectors = (0..workers)
        .map(|w| {
            Collector::new(
                &agent,
                registry.clone(),
                &config.env.layout,
                config.env.train_weathers.clone(),
                collect_rng.random(),
                w as u64,
                workers as u64,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let mut run = Run {
        buffer: MultiSourceBuffer::new(&config.replay, config.variant.uses_multisource())?,
        metrics: MetricsWriter::create(&out_dir.join(METRICS_FILE))?,
        terminations: BTreeMap::new(),
        train_rng: ChaCha8Rng::seed_from_u64(seed ^ stream::TRAIN),
        train_sampler: Sampler::seeded(seed ^ stream::TRAIN),
        out_dir,
        best_eval: None,
        next_eval: config.schedule.eval_every,
        agent,
    };

    let result = run_loop(&mut run, &mut collectors, &registry);
    run.metrics.flush()?;
    if let Err(e) = result {
        if e.is_numerical() {
            let path = out_dir.join(DIAGNOSTIC_CHECKPOINT);
            if let Err(save) = save_checkpoint(&path, &run.agent) {
                log::error!("could not write diagnostic checkpoint: {save}");
            } else {
                log::error!("numerical failure; diagnostic checkpoint at {}", path.display());
            }
        }
        return Err(e);
    }
    let final_checkpoint = out_dir.join(FINAL_CHECKPOINT);
    save_checkpoint(&final_checkpoint, &run.agent)?;
    Ok(TrainSummary {
        out_dir: out_dir.to_path_buf(),
        metrics: out_dir.join(METRICS_FILE),
        init_checkpoint: out_dir.join(INIT_CHECKPOINT),
        final_checkpoint,
        best_checkpoint: run.best_eval.map(|_| out_dir.join(BEST_CHECKPOINT)),
        best_eval: run.best_eval,
        global_step: run.agent.global_step,
        env_step: run.agent.env_step,
    })
}

fn run_loop(
    run: &mut Run<'_>,
    collectors: &mut [Collector],
    registry: &std::sync::Arc<crate::envsim::LayoutRegistry>,
) -> Result<()> {
    let s = run.agent.config.schedule.clone();
    for _ in 0..s.prefill_episodes {
        let ep = collectors[0].run_episode(&run.agent, ActMode::Random)?;
        run.agent.env_step += ep.episode.len() as u64 - 1;
        run.add_episode(ep)?;
    }
    log::info!("prefill done: {:?}", run.buffer.stats());

    while run.agent.env_step < s.total_env_steps {
        let progress = run.agent.env_step as f64 / s.total_env_steps.max(1) as f64;
        let mode = ActMode::Explore { noise_std: s.exploration_std * (1.0 - progress).max(0.0) };
        let steps = s.env_steps_per_update;
        let agent = &run.agent;
        let finished: Vec<Vec<CollectedEpisode>> = if collectors.len() == 1 {
            vec![collect_round(&mut collectors[0], agent, mode, steps)?]
        } else {
            std::thread::scope(|scope| {
                let handles: Vec<_> = collectors
                    .iter_mut()
                    .map(|c| scope.spawn(move || collect_round(c, agent, mode, steps)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("collector thread panicked")).collect::<Result<Vec<_>>>()
            })?
        };
        run.agent.env_step += steps * collectors.len() as u64;
        for ep in finished.into_iter().flatten() {
            run.add_episode(ep)?;
        }
        for _ in 0..collectors.len() {
            run.update()?;
        }
        run.maybe_evaluate(registry)?;
    }
    Ok(())
}

fn collect_round(c: &mut Collector, agent: &Agent, mode: ActMode, steps: u64) -> Result<Vec<CollectedEpisode>> {
    let mut out = Vec::new();
    for _ in 0..steps {
        if let Some(ep) = c.step(agent, mode)? {
            out.push(ep);
        }
    }
    Ok(out)
}
