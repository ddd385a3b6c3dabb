use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use candle_core::{DType, Device, Tensor};
use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::agent::Agent;
use super::config::RunConfig;
use crate::{Error, Result};

const FORMAT: &str = "sem2-checkpoint";
const VERSION: &str = "1";

fn tensor_bytes(t: &Tensor) -> Result<(Dtype, Vec<u8>)> {
    let flat = t.flatten_all()?;
    Ok(match t.dtype() {
        DType::F32 => (Dtype::F32, flat.to_vec1::<f32>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        DType::F64 => (Dtype::F64, flat.to_vec1::<f64>()?.iter().flat_map(|v| v.to_le_bytes()).collect()),
        other => return Err(Error::format(format!("unsupported tensor dtype {other:?}"))),
    })
}

fn view_to_tensor(view: &TensorView<'_>) -> Result<Tensor> {
    let data = view.data();
    let shape = view.shape().to_vec();
    Ok(match view.dtype() {
        Dtype::F32 => {
            let v: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        Dtype::F64 => {
            let v: Vec<f64> = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
            Tensor::from_vec(v, shape, &Device::Cpu)?
        }
        other => return Err(Error::format(format!("unsupported tensor dtype {other:?}"))),
    })
}

/// Writes parameters, optimizer moments, config and step counters.
pub fn save_checkpoint(path: &Path, agent: &Agent) -> Result<()> {
    let mut tensors: BTreeMap<String, Tensor> = BTreeMap::new();
    tensors.extend(agent.model.store().named_tensors("world."));
    tensors.extend(agent.behavior.actor.store().named_tensors("actor."));
    tensors.extend(agent.behavior.critic.store().named_tensors("critic."));
    tensors.extend(agent.model_opt.named_state(agent.model.store(), "optim.world."));
    tensors.extend(agent.behavior.actor_opt.named_state(agent.behavior.actor.store(), "optim.actor."));
    tensors.extend(agent.behavior.critic_opt.named_state(agent.behavior.critic.store(), "optim.critic."));

    let encoded = tensors
        .iter()
        .map(|(k, t)| Ok((k.clone(), tensor_bytes(t)?, t.dims().to_vec())))
        .collect::<Result<Vec<_>>>()?;
    let views = encoded
        .iter()
        .map(|(k, (dt, bytes), shape)| {
            TensorView::new(*dt, shape.clone(), bytes)
                .map(|v| (k.as_str(), v))
                .map_err(|e| Error::format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;

    let config = serde_json::to_string(&agent.config).map_err(|e| Error::format(e.to_string()))?;
    let meta: HashMap<String, String> = [
        ("format", FORMAT.to_string()),
        ("version", VERSION.to_string()),
        ("config", config),
        ("global_step", agent.global_step.to_string()),
        ("env_step", agent.env_step.to_string()),
        ("optim.world.step", agent.model_opt.state().step.to_string()),
        ("optim.actor.step", agent.behavior.actor_opt.state().step.to_string()),
        ("optim.critic.step", agent.behavior.critic_opt.state().step.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect();
    let bytes = safetensors::tensor::serialize(views, Some(meta)).map_err(|e| Error::format(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Tensors, metadata and decoded config of a checkpoint file.
pub struct CheckpointContents {
    pub config: RunConfig,
    pub metadata: HashMap<String, String>,
    pub tensors: BTreeMap<String, Tensor>,
}

impl CheckpointContents {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let (_, header) = SafeTensors::read_metadata(&bytes).map_err(|e| Error::format(e.to_string()))?;
        let metadata = header.metadata().clone().unwrap_or_default();
        if metadata.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::format(format!("{} is not a checkpoint", path.display())));
        }
        if metadata.get("version").map(String::as_str) != Some(VERSION) {
            return Err(Error::format(format!("unsupported checkpoint version {:?}", metadata.get("version"))));
        }
        let config: RunConfig = serde_json::from_str(metadata.get("config").map(String::as_str).unwrap_or(""))
            .map_err(|e| Error::format(format!("checkpoint config: {e}")))?;
        let st = SafeTensors::deserialize(&bytes).map_err(|e| Error::format(e.to_string()))?;
        let tensors = st
            .tensors()
            .iter()
            .map(|(k, v)| Ok((k.clone(), view_to_tensor(v)?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        Ok(Self { config, metadata, tensors })
    }

    /// Names of stored parameter tensors (optimizer state excluded).
    pub fn parameter_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str).filter(|k| !k.starts_with("optim."))
    }

    fn counter(&self, key: &str) -> Result<u64> {
        self.metadata
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(format!("checkpoint metadata lacks {key}")))
    }
}

/// Rebuilds the agent stored in `path` using its embedded config.
pub fn load_checkpoint(path: &Path) -> Result<Agent> {
    let contents = CheckpointContents::read(path)?;
    let config = contents.config.clone();
    restore(contents, config)
}

/// Loads `path` into an agent built from `expected`; any config difference
/// or tensor mismatch is reported as [`Error::ConfigMismatch`].
pub fn load_checkpoint_into(path: &Path, expected: &RunConfig) -> Result<Agent> {
    let contents = CheckpointContents::read(path)?;
    let diff = contents.config.diff(expected);
    if !diff.is_empty() {
        return Err(Error::ConfigMismatch(diff));
    }
    restore(contents, expected.clone())
}

fn restore(contents: CheckpointContents, config: RunConfig) -> Result<Agent> {
    let mut agent = Agent::new(config)?;
    let t = &contents.tensors;
    let mut problems = Vec::new();
    let mut collect = |r: Result<()>| match r {
        Ok(()) => Ok(()),
        Err(Error::ConfigMismatch(keys)) => {
            problems.extend(keys);
            Ok(())
        }
        Err(e) => Err(e),
    };
    collect(agent.model.store().load_named("world.", t))?;
    collect(agent.behavior.actor.store().load_named("actor.", t))?;
    collect(agent.behavior.critic.store().load_named("critic.", t))?;
    let (ws, acs, crs) =
        (contents.counter("optim.world.step")?, contents.counter("optim.actor.step")?, contents.counter("optim.critic.step")?);
    collect(agent.model_opt.load_named_state(agent.model.store(), "optim.world.", ws, t))?;
    let b = &mut agent.behavior;
    collect(b.actor_opt.load_named_state(b.actor.store(), "optim.actor.", acs, t))?;
    collect(b.critic_opt.load_named_state(b.critic.store(), "optim.critic.", crs, t))?;
    if !problems.is_empty() {
        return Err(Error::ConfigMismatch(problems));
    }
    agent.global_step = contents.counter("global_step")?;
    agent.env_step = contents.counter("env_step")?;
    Ok(agent)
}
