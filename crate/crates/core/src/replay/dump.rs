//! Single-episode binary files.
//!
//! Layout, little-endian throughout:
//!
//! ```text
//! magic "SEM2EPIS" | u32 version | u32 header_len | header JSON
//! per record: u32 step_index | f64 throttle | f64 steer | f64 reward
//!             | u8 termination | observation bytes | mask bytes
//! ```
//!
//! The JSON header carries the episode metadata, the record count and the
//! image shape. Floats are stored as raw bits so a round trip is exact.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::buffer::{Episode, EpisodeMeta, TransitionRecord};
use crate::envsim::{Action, Image, Observation, SemanticMask, Termination};
use crate::{Error, Result};

const MAGIC: &[u8; 8] = b"SEM2EPIS";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    #[serde(flatten)]
    meta: EpisodeMeta,
    records: usize,
    height: usize,
    width: usize,
}

fn termination_code(t: Termination) -> u8 {
    match t {
        Termination::None => 0,
        Termination::OutLane => 1,
        Termination::Collision => 2,
        Termination::Timeout => 3,
    }
}

fn termination_from_code(c: u8) -> Result<Termination> {
    Ok(match c {
        0 => Termination::None,
        1 => Termination::OutLane,
        2 => Termination::Collision,
        3 => Termination::Timeout,
        _ => return Err(Error::format(format!("unknown termination code {c}"))),
    })
}

pub fn write_episode_to(mut w: impl Write, episode: &Episode) -> Result<()> {
    let first = &episode.records()[0].observation.0;
    let header = Header {
        meta: episode.meta().clone(),
        records: episode.len(),
        height: first.height(),
        width: first.width(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    for r in episode.records() {
        for img in [&r.observation.0, &r.mask.0] {
            if (img.height(), img.width()) != (header.height, header.width) {
                return Err(Error::argument("all images of an episode must share one shape"));
            }
        }
        w.write_all(&r.step_index.to_le_bytes())?;
        for v in [r.action.throttle, r.action.steer, r.reward] {
            w.write_all(&v.to_le_bytes())?;
        }
        w.write_all(&[termination_code(r.termination)])?;
        w.write_all(r.observation.0.data())?;
        w.write_all(r.mask.0.data())?;
    }
    Ok(())
}

pub fn read_episode_from(mut r: impl Read) -> Result<Episode> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::format("not an episode dump"));
    }
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)?;
    let version = u32::from_le_bytes(u32buf);
    if version != VERSION {
        return Err(Error::format(format!("unsupported episode dump version {version}")));
    }
    r.read_exact(&mut u32buf)?;
    let mut json = vec![0u8; u32::from_le_bytes(u32buf) as usize];
    r.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| Error::format(e.to_string()))?;
    let pixels = header.height * header.width * 3;
    let mut records = Vec::with_capacity(header.records);
    let mut f64buf = [0u8; 8];
    for _ in 0..header.records {
        r.read_exact(&mut u32buf)?;
        let step_index = u32::from_le_bytes(u32buf);
        let mut floats = [0.0; 3];
        for v in &mut floats {
            r.read_exact(&mut f64buf)?;
            *v = f64::from_le_bytes(f64buf);
        }
        let mut code = [0u8];
        r.read_exact(&mut code)?;
        let mut images = [vec![0u8; pixels], vec![0u8; pixels]];
        for img in &mut images {
            r.read_exact(img)?;
        }
        let [obs, mask] = images;
        records.push(TransitionRecord {
            observation: Observation(Image::from_raw(header.height, header.width, obs)?),
            mask: SemanticMask(Image::from_raw(header.height, header.width, mask)?),
            action: Action { throttle: floats[0], steer: floats[1] },
            reward: floats[2],
            termination: termination_from_code(code[0])?,
            episode_id: header.meta.episode_id,
            step_index,
        });
    }
    let episode = Episode::new(header.meta.layout.clone(), header.meta.seed, records)?;
    if episode.meta() != &header.meta {
        return Err(Error::format("header termination disagrees with the records"));
    }
    Ok(episode)
}

pub fn write_episode(path: &Path, episode: &Episode) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_episode_to(&mut w, episode)?;
    w.flush()?;
    Ok(())
}

pub fn read_episode(path: &Path) -> Result<Episode> {
    read_episode_from(BufReader::new(File::open(path)?))
}
