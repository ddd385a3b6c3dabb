use std::path::{Path, PathBuf};

use super::agent::Agent;
use super::checkpoint::load_checkpoint;
use crate::envsim::Image;
use crate::nn::Sampler;
use crate::replay::{read_episode, Episode};
use crate::worldmodel::{actions_to_tensor, images_to_tensor};
use crate::Result;

/// Decoder outputs along one episode, filtered with the posterior.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub observations: Vec<Image>,
    /// `None` for models without a mask head.
    pub masks: Option<Vec<Image>>,
}

pub fn reconstruct(agent: &Agent, episode: &Episode, seed: u64) -> Result<Reconstruction> {
    let model = &agent.model;
    let view = model.frozen();
    let dtype = model.dtype();
    let mut sampler = Sampler::seeded(seed);
    let mut state = model.initial_state(1)?;
    let mut observations = Vec::with_capacity(episode.len());
    let mut masks = model.has_filter().then(|| Vec::with_capacity(episode.len()));
    for r in episode.records() {
        let a = actions_to_tensor(&[r.action], dtype)?;
        let o = images_to_tensor([&r.observation.0], dtype)?;
        let (post, _, _) = view.observe_step(&state, &a, &o, &mut sampler)?;
        observations.push(view.predict_obs(&post)?.mode_image(0)?);
        if let (Some(out), Some(d)) = (masks.as_mut(), view.predict_mask(&view.filter(&post)?)?) {
            out.push(d.mode_image(0)?);
        }
        state = post;
    }
    Ok(Reconstruction { observations, masks })
}

/// Fraction of pixels whose three channels, thresholded at 128, all agree.
pub fn pixel_accuracy(predicted: &Image, truth: &Image) -> f64 {
    let (p, t) = (predicted.data(), truth.data());
    let n = p.len() / 3;
    let hits = p
        .chunks_exact(3)
        .zip(t.chunks_exact(3))
        .filter(|(a, b)| a.iter().zip(b.iter()).all(|(x, y)| (*x >= 128) == (*y >= 128)))
        .count();
    hits as f64 / n as f64
}

/// Mean reconstructed-mask pixel accuracy over all steps of `episodes`;
/// `None` when the model has no mask head.
pub fn mask_accuracy(agent: &Agent, episodes: &[Episode], seed: u64) -> Result<Option<f64>> {
    let mut total = 0.0;
    let mut count = 0usize;
    for ep in episodes {
        let Some(masks) = reconstruct(agent, ep, seed)?.masks else { return Ok(None) };
        for (m, r) in masks.iter().zip(ep.records()) {
            total += pixel_accuracy(m, &r.mask.0);
            count += 1;
        }
    }
    Ok((count > 0).then(|| total / count as f64))
}

#[derive(Clone, Debug)]
pub struct InspectReport {
    pub panels: Vec<PathBuf>,
    pub mask_accuracy: Option<f64>,
    pub notice: Option<String>,
}

const PANEL_SCALE: u32 = 4;

fn panel(columns: &[&Image]) -> image::RgbImage {
    let (h, w) = (columns[0].height() as u32, columns[0].width() as u32);
    let gap = 2;
    let s = PANEL_SCALE;
    let width = columns.len() as u32 * (w * s + gap) - gap;
    let mut out = image::RgbImage::from_pixel(width, h * s, image::Rgb([40, 40, 40]));
    for (c, img) in columns.iter().enumerate() {
        let x0 = c as u32 * (w * s + gap);
        for y in 0..h * s {
            for x in 0..w * s {
                let (r, col) = ((y / s) as usize, (x / s) as usize);
                let px = [img.get(r, col, 0), img.get(r, col, 1), img.get(r, col, 2)];
                out.put_pixel(x0 + x, y, image::Rgb(px));
            }
        }
    }
    out
}

/// Writes one PNG per step with columns observation, ground-truth mask,
/// reconstructed mask and reconstructed observation. The reconstructed-mask
/// column is left out for models without a mask head.
pub fn inspect_agent(agent: &Agent, episode: &Episode, out_dir: &Path) -> Result<InspectReport> {
    std::fs::create_dir_all(out_dir)?;
    let rec = reconstruct(agent, episode, 0)?;
    let notice = rec.masks.is_none().then(|| "model has no mask head; reconstructed-mask column omitted".to_string());
    let mut panels = Vec::with_capacity(episode.len());
    for (t, r) in episode.records().iter().enumerate() {
        let mut cols = vec![&r.observation.0, &r.mask.0];
        if let Some(m) = &rec.masks {
            cols.push(&m[t]);
        }
        cols.push(&rec.observations[t]);
        let path = out_dir.join(format!("step_{t:05}.png"));
        panel(&cols).save(&path)?;
        panels.push(path);
    }
    let mask_accuracy = mask_accuracy(agent, std::slice::from_ref(episode), 0)?;
    Ok(InspectReport { panels, mask_accuracy, notice })
}

pub fn inspect(checkpoint: &Path, episode: &Path, out_dir: &Path) -> Result<InspectReport> {
    let agent = load_checkpoint(checkpoint)?;
    let episode = read_episode(episode)?;
    inspect_agent(&agent, &episode, out_dir)
}
