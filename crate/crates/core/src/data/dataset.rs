//! On-disk clip directories: `manifest.txt` plus one container per clip.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::container::{read_container, write_container};
use crate::data::synth::{generate_clip, ClipRecord, SynthConfig};
use crate::error::{Error, Result};

pub const MANIFEST: &str = "manifest.txt";

/// Seed of clip `index` in a dataset generated from `seed`.
pub fn clip_seed(seed: u64, index: usize) -> u64 {
    // splitmix64
    let mut z = seed.wrapping_add((index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn clip_file(id: &str) -> String {
    format!("clip_{id}.stc")
}

/// Renders `count` clips into `dir`, overwriting any previous manifest.
pub fn generate_dataset(cfg: &SynthConfig, dir: &Path, count: usize, seed: u64) -> Result<Dataset> {
    cfg.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let entries: Vec<(String, u64)> = (0..count)
        .map(|i| (format!("{i:05}"), clip_seed(seed, i)))
        .collect();
    entries.par_iter().try_for_each(|(id, s)| {
        let clip = generate_clip(cfg, *s)?;
        write_container(&dir.join(clip_file(id)), &clip.to_tensors())
    })?;
    let manifest: String = entries.iter().map(|(id, s)| format!("{id} {s}\n")).collect();
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(Dataset {
        dir: dir.to_path_buf(),
        entries,
    })
}

/// `0..n`, permuted when a seed is given.
pub fn shuffled_order(n: usize, shuffle: Option<u64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if let Some(s) = shuffle {
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
    }
    idx
}

#[derive(Clone, Debug)]
pub struct Dataset {
    dir: PathBuf,
    entries: Vec<(String, u64)>,
}

impl Dataset {
    /// Reads the manifest and checks that every listed clip exists.
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || Error::Data(format!("{}:{}: expected `id seed`", path.display(), n + 1));
            let (id, seed) = line.split_once(char::is_whitespace).ok_or_else(bad)?;
            let seed: u64 = seed.trim().parse().map_err(|_| bad())?;
            let file = dir.join(clip_file(id));
            if !file.is_file() {
                return Err(Error::Data(format!("manifest lists missing clip {}", file.display())));
            }
            entries.push((id.to_string(), seed));
        }
        Ok(Dataset {
            dir: dir.to_path_buf(),
            entries,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(id, _)| id.as_str())
    }

    pub fn load(&self, index: usize) -> Result<ClipRecord> {
        let (id, seed) = &self.entries[index];
        ClipRecord::from_tensors(&read_container(&self.dir.join(clip_file(id)))?, *seed)
    }

    /// Reads every clip into memory.
    pub fn load_all(&self) -> Result<Vec<ClipRecord>> {
        (0..self.len()).map(|i| self.load(i)).collect()
    }

    /// Clip order for one epoch; shuffled when a seed is given.
    pub fn order(&self, shuffle: Option<u64>) -> Vec<usize> {
        shuffled_order(self.len(), shuffle)
    }

    /// Clips grouped into batches of `batch_size`; the last may be short.
    pub fn batches(&self, batch_size: usize, shuffle: Option<u64>) -> impl Iterator<Item = Result<Vec<ClipRecord>>> + '_ {
        let order = self.order(shuffle);
        let groups: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
        groups
            .into_iter()
            .map(move |g| g.into_iter().map(|i| self.load(i)).collect())
    }
}
