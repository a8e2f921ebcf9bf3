//! `WNRF1` files: magic, little-endian `u64` manifest length, JSON manifest,
//! then one little-endian blob per manifest entry in manifest order.

use std::path::Path;

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{LossRecord, TrainConfig, TrainState};
use crate::diffnet::{AdamState, ParamStore, SectionKind};
use crate::error::{Error, Result};
use crate::fields::FieldBundle;
use crate::renderer::OccupancyGrid;
use crate::sceneio::SceneBox;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"WNRF1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Dtype {
    F32,
    U64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlobEntry {
    name: String,
    shape: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kind: Option<SectionKind>,
    dtype: Dtype,
}

impl BlobEntry {
    fn count(&self) -> usize {
        self.shape.iter().product()
    }

    fn bytes(&self) -> usize {
        self.count()
            * match self.dtype {
                Dtype::F32 => 4,
                Dtype::U64 => 8,
            }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: [u8; 32],
    stream: u64,
    word_pos: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    iteration: u64,
    config: TrainConfig,
    scene_box: SceneBox,
    adam_step: u64,
    occupancy_updates: u64,
    rng: RngState,
    history: Vec<LossRecord>,
    blobs: Vec<BlobEntry>,
}

const PARAM: &str = "param/";
const MOMENT1: &str = "adam.m/";
const MOMENT2: &str = "adam.v/";
const GRID_DENSITY: &str = "occupancy/density";
const GRID_BITS: &str = "occupancy/bits";

pub fn checkpoint_save(state: &TrainState, path: &Path) -> Result<()> {
    let bytes = encode(state)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<TrainState> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

fn encode(state: &TrainState) -> Result<Vec<u8>> {
    let store = &state.bundle.store;
    let mut blobs = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    let push_f32 = |data: &mut Vec<u8>, v: &[f32]| {
        for x in v {
            data.extend_from_slice(&x.to_le_bytes());
        }
    };
    for s in store.sections() {
        blobs.push(BlobEntry {
            name: format!("{PARAM}{}", s.name),
            shape: s.shape.clone(),
            kind: Some(s.kind),
            dtype: Dtype::F32,
        });
        push_f32(&mut data, &s.values);
    }
    for (prefix, moments) in [(MOMENT1, &state.adam.first), (MOMENT2, &state.adam.second)] {
        for (s, m) in store.sections().iter().zip(moments) {
            blobs.push(BlobEntry {
                name: format!("{prefix}{}", s.name),
                shape: s.shape.clone(),
                kind: None,
                dtype: Dtype::F32,
            });
            push_f32(&mut data, m);
        }
    }
    blobs.push(BlobEntry {
        name: GRID_DENSITY.into(),
        shape: vec![state.grid.cell_count()],
        kind: None,
        dtype: Dtype::F32,
    });
    push_f32(&mut data, state.grid.density_cache());
    blobs.push(BlobEntry {
        name: GRID_BITS.into(),
        shape: vec![state.grid.bits().len()],
        kind: None,
        dtype: Dtype::U64,
    });
    for w in state.grid.bits() {
        data.extend_from_slice(&w.to_le_bytes());
    }
    let manifest = Manifest {
        iteration: state.iter,
        config: state.config.clone(),
        scene_box: state.scene_box,
        adam_step: state.adam.step,
        occupancy_updates: state.grid.updates(),
        rng: RngState {
            seed: state.rng.get_seed(),
            stream: state.rng.get_stream(),
            word_pos: state.rng.get_word_pos().to_string(),
        },
        history: state.history.clone(),
        blobs,
    };
    let json = serde_json::to_vec(&manifest)
        .map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
    let mut out = Vec::with_capacity(13 + json.len() + data.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&data);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<TrainState> {
    if bytes.len() < 5 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(Error::checkpoint("magic", "not a WNRF1 checkpoint"));
    }
    let len_bytes: [u8; 8] = bytes
        .get(5..13)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::checkpoint("manifest", "truncated length"))?;
    let len = u64::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(13..13usize.saturating_add(len))
        .ok_or_else(|| Error::checkpoint("manifest", "truncated manifest"))?;
    let manifest: Manifest = serde_json::from_slice(json)
        .map_err(|e| Error::checkpoint("manifest", e.to_string()))?;
    let mut pos = 13 + len;
    let mut blobs = Vec::with_capacity(manifest.blobs.len());
    for entry in &manifest.blobs {
        let body = bytes
            .get(pos..pos.saturating_add(entry.bytes()))
            .ok_or_else(|| Error::checkpoint(&entry.name, "truncated blob"))?;
        pos += entry.bytes();
        blobs.push((entry, body));
    }
    if pos != bytes.len() {
        return Err(Error::checkpoint("blobs", format!("{} trailing bytes", bytes.len() - pos)));
    }
    let f32s = |entry: &BlobEntry, body: &[u8]| -> Result<Vec<f32>> {
        if entry.dtype != Dtype::F32 {
            return Err(Error::checkpoint(&entry.name, "expected f32 data"));
        }
        Ok(body
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect())
    };
    let mut store = ParamStore::<f32>::new();
    let mut first = Vec::new();
    let mut second = Vec::new();
    let mut density = None;
    let mut bits = None;
    for (entry, body) in blobs {
        let name = entry.name.as_str();
        if let Some(section) = name.strip_prefix(PARAM) {
            let kind = entry
                .kind
                .ok_or_else(|| Error::checkpoint(name, "missing section kind"))?;
            store
                .add(section, entry.shape.clone(), kind, f32s(entry, body)?)
                .map_err(|e| Error::checkpoint(name, e.to_string()))?;
        } else if let Some(section) = name.strip_prefix(MOMENT1) {
            first.push((section, f32s(entry, body)?));
        } else if let Some(section) = name.strip_prefix(MOMENT2) {
            second.push((section, f32s(entry, body)?));
        } else if name == GRID_DENSITY {
            density = Some(f32s(entry, body)?);
        } else if name == GRID_BITS {
            if entry.dtype != Dtype::U64 {
                return Err(Error::checkpoint(name, "expected u64 data"));
            }
            bits = Some(
                body.chunks_exact(8)
                    .map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
                    .collect::<Vec<u64>>(),
            );
        } else {
            return Err(Error::checkpoint(name, "unknown blob"));
        }
    }
    let moments = |list: Vec<(&str, Vec<f32>)>, prefix: &str| -> Result<Vec<Vec<f32>>> {
        if list.len() != store.len() {
            return Err(Error::checkpoint(prefix, "moment count differs from parameter count"));
        }
        list.into_iter()
            .zip(store.sections())
            .map(|((name, v), s)| {
                if name != s.name || v.len() != s.len() {
                    Err(Error::checkpoint(&format!("{prefix}{name}"), "does not match its parameter section"))
                } else {
                    Ok(v)
                }
            })
            .collect()
    };
    let adam = AdamState {
        first: moments(first, MOMENT1)?,
        second: moments(second, MOMENT2)?,
        step: manifest.adam_step,
        ..AdamState::new(&store)
    };
    let config = manifest.config;
    config
        .validate()
        .map_err(|e| Error::checkpoint("config", e.to_string()))?;
    let bundle = FieldBundle::from_store(config.field.clone(), store)
        .map_err(|e| Error::checkpoint("param", e.to_string()))?;
    let grid = OccupancyGrid::from_parts(
        config.occupancy_config(),
        density.ok_or_else(|| Error::checkpoint(GRID_DENSITY, "missing"))?,
        bits.ok_or_else(|| Error::checkpoint(GRID_BITS, "missing"))?,
        manifest.occupancy_updates,
    )?;
    let word_pos: u128 = manifest
        .rng
        .word_pos
        .parse()
        .map_err(|_| Error::checkpoint("rng", "bad word position"))?;
    let mut rng = ChaCha8Rng::from_seed(manifest.rng.seed);
    rng.set_stream(manifest.rng.stream);
    rng.set_word_pos(word_pos);
    Ok(TrainState {
        config,
        scene_box: manifest.scene_box,
        bundle,
        adam,
        grid,
        iter: manifest.iteration,
        rng,
        history: manifest.history,
    })
}

#[cfg(test)]
pub(super) fn encode_for_test(state: &TrainState) -> Vec<u8> {
    encode(state).unwrap()
}

#[cfg(test)]
pub(super) fn decode_for_test(bytes: &[u8]) -> Result<TrainState> {
    decode(bytes)
}
