//! Synthetic actor-action clips: flat-coloured shapes translating across a
//! flat or noisy background. The shape is the actor class, the direction
//! of motion is the action class.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{parse, parse_list};
use crate::data::container::{find, NamedTensor};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ACTOR_NAMES: [&str; 4] = ["background", "circle", "square", "triangle"];
pub const ACTION_NAMES: [&str; 5] = ["background", "right", "left", "up", "down"];

/// Fill colour of each actor class (index 0 unused).
pub const SHAPE_COLORS: [[f32; 3]; 4] = [
    [0.0, 0.0, 0.0],
    [0.9, 0.2, 0.2],
    [0.2, 0.85, 0.3],
    [0.25, 0.35, 0.95],
];

const FLAT_BACKGROUND: f32 = 0.1;
const NOISE_MAX: f32 = 0.3;
const PLACEMENT_ATTEMPTS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Circle = 1,
    Square = 2,
    Triangle = 3,
}

impl Shape {
    const ALL: [Shape; 3] = [Shape::Circle, Shape::Square, Shape::Triangle];

    /// Whether pixel `(row, col)` of an `s × s` box belongs to the shape.
    pub fn covers(self, s: usize, row: usize, col: usize) -> bool {
        let c = (s as f64 - 1.0) / 2.0;
        let (r, q) = (row as f64, col as f64);
        match self {
            Shape::Square => true,
            Shape::Circle => (r - c).powi(2) + (q - c).powi(2) <= (s as f64 / 2.0).powi(2),
            Shape::Triangle => (q - c).abs() <= (r + 1.0) / 2.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Motion {
    Right = 1,
    Left = 2,
    Up = 3,
    Down = 4,
}

impl Motion {
    const ALL: [Motion; 4] = [Motion::Right, Motion::Left, Motion::Up, Motion::Down];

    /// `(d_row, d_col)` per unit speed.
    pub fn direction(self) -> (i64, i64) {
        match self {
            Motion::Right => (0, 1),
            Motion::Left => (0, -1),
            Motion::Up => (-1, 0),
            Motion::Down => (1, 0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    Flat,
    Noise,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive range of actors per clip.
    pub actors: [usize; 2],
    /// Inclusive range of shape box sizes in pixels.
    pub size: [usize; 2],
    /// Inclusive range of speeds in pixels per frame.
    pub speed: [usize; 2],
    pub background: Background,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            frames: 8,
            height: 32,
            width: 32,
            actors: [1, 3],
            size: [7, 10],
            speed: [1, 2],
            background: Background::Noise,
            seed: 0,
        }
    }
}

/// One rendered actor: shape, motion and top-left corner at frame 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActorDesc {
    pub shape: Shape,
    pub motion: Motion,
    pub size: usize,
    pub speed: usize,
    pub row: usize,
    pub col: usize,
}

impl ActorDesc {
    /// Top-left corner at frame `t`.
    pub fn corner(&self, t: usize) -> (usize, usize) {
        let (dr, dc) = self.motion.direction();
        let step = (self.speed * t) as i64;
        (
            (self.row as i64 + dr * step) as usize,
            (self.col as i64 + dc * step) as usize,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipMeta {
    pub seed: u64,
    pub actors: Vec<ActorDesc>,
    /// True when placement could not keep all actors apart.
    pub overlapping: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipRecord {
    /// `[T, H, W, 3]` in `[0, 1]`.
    pub video: Tensor<f32>,
    pub actor_gt: Vec<i32>,
    pub action_gt: Vec<i32>,
    pub mask_gt: Vec<i32>,
    pub dims: [usize; 3],
    pub meta: ClipMeta,
}

impl SynthConfig {
    pub fn frames(&self) -> [usize; 3] {
        [self.frames, self.height, self.width]
    }

    pub fn actor_classes(&self) -> usize {
        Shape::ALL.len() + 1
    }

    pub fn action_classes(&self) -> usize {
        Motion::ALL.len() + 1
    }

    /// Every shape may perform every motion.
    pub fn valid_pairs(&self) -> Vec<(i32, i32)> {
        Shape::ALL
            .iter()
            .flat_map(|&s| Motion::ALL.iter().map(move |&m| (s as i32, m as i32)))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config("frames", "clip extents must be positive"));
        }
        for (k, [lo, hi]) in [("actors", self.actors), ("size", self.size), ("speed", self.speed)] {
            if lo > hi {
                return Err(Error::config(k, format!("empty range {lo}..={hi}")));
            }
        }
        if self.size[0] == 0 {
            return Err(Error::config("size", "shapes need at least one pixel"));
        }
        let travel = self.speed[1] * (self.frames - 1);
        if self.size[1] + travel > self.height.min(self.width) {
            return Err(Error::config(
                "size",
                format!(
                    "a {}px shape moving {}px does not fit a {}x{} frame",
                    self.size[1], travel, self.height, self.width
                ),
            ));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let range = |v: Vec<usize>| -> Result<[usize; 2]> {
            match v[..] {
                [a] => Ok([a, a]),
                [a, b] => Ok([a, b]),
                _ => Err(Error::config(key, "expected `n` or `min,max`")),
            }
        };
        match key {
            "frames" => self.frames = parse(key, value)?,
            "height" => self.height = parse(key, value)?,
            "width" => self.width = parse(key, value)?,
            "actors" => self.actors = range(parse_list(key, value)?)?,
            "size" => self.size = range(parse_list(key, value)?)?,
            "speed" => self.speed = range(parse_list(key, value)?)?,
            "background" => {
                self.background = match value {
                    "flat" => Background::Flat,
                    "noise" => Background::Noise,
                    _ => return Err(Error::config(key, format!("expected flat|noise, got `{value}`"))),
                }
            }
            "seed" => self.seed = parse(key, value)?,
            _ => return Err(Error::config(key, "unknown key")),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let r = |[a, b]: [usize; 2]| format!("{a},{b}");
        vec![
            ("frames".into(), self.frames.to_string()),
            ("height".into(), self.height.to_string()),
            ("width".into(), self.width.to_string()),
            ("actors".into(), r(self.actors)),
            ("size".into(), r(self.size)),
            ("speed".into(), r(self.speed)),
            (
                "background".into(),
                match self.background {
                    Background::Flat => "flat",
                    Background::Noise => "noise",
                }
                .into(),
            ),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn clip_rng(cfg_seed: u64, clip_seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg_seed);
    rng.set_stream(clip_seed);
    rng
}

fn sample_actor(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> ActorDesc {
    let shape = Shape::ALL[rng.gen_range(0..Shape::ALL.len())];
    let motion = Motion::ALL[rng.gen_range(0..Motion::ALL.len())];
    let size = rng.gen_range(cfg.size[0]..=cfg.size[1]);
    let speed = rng.gen_range(cfg.speed[0]..=cfg.speed[1]);
    let travel = speed * (cfg.frames - 1);
    let (dr, dc) = motion.direction();
    let span = |len: usize, d: i64| -> (usize, usize) {
        match d {
            1 => (0, len - size - travel),
            -1 => (travel, len - size),
            _ => (0, len - size),
        }
    };
    let (r0, r1) = span(cfg.height, dr);
    let (c0, c1) = span(cfg.width, dc);
    ActorDesc {
        shape,
        motion,
        size,
        speed,
        row: rng.gen_range(r0..=r1),
        col: rng.gen_range(c0..=c1),
    }
}

/// Boxes of two actors, grown by one pixel, intersect in some frame.
fn collide(a: &ActorDesc, b: &ActorDesc, frames: usize) -> bool {
    (0..frames).any(|t| {
        let (ar, ac) = a.corner(t);
        let (br, bc) = b.corner(t);
        let sep = |p: usize, ps: usize, q: usize, qs: usize| p + ps < q || q + qs < p;
        !(sep(ar, a.size, br, b.size) || sep(ac, a.size, bc, b.size))
    })
}

/// Renders one clip. The result depends only on `(cfg, clip_seed)`.
pub fn generate_clip(cfg: &SynthConfig, clip_seed: u64) -> Result<ClipRecord> {
    cfg.validate()?;
    let mut rng = clip_rng(cfg.seed, clip_seed);
    let [t_len, h, w] = cfg.frames();
    let count = rng.gen_range(cfg.actors[0]..=cfg.actors[1]);

    let mut actors: Vec<ActorDesc> = Vec::with_capacity(count);
    let mut overlapping = false;
    for _ in 0..count {
        let mut cand = sample_actor(cfg, &mut rng);
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            if actors.iter().all(|a| !collide(a, &cand, t_len)) {
                placed = true;
                break;
            }
            cand = sample_actor(cfg, &mut rng);
        }
        overlapping |= !placed;
        actors.push(cand);
    }

    let n = t_len * h * w;
    let mut video = vec![0.0f32; n * 3];
    match cfg.background {
        Background::Flat => video.fill(FLAT_BACKGROUND),
        Background::Noise => {
            for px in video.chunks_exact_mut(3) {
                let g = rng.gen_range(0.0..NOISE_MAX);
                px.fill(g);
            }
        }
    }
    let mut actor_gt = vec![0i32; n];
    let mut action_gt = vec![0i32; n];
    for a in &actors {
        for t in 0..t_len {
            let (r0, c0) = a.corner(t);
            for r in 0..a.size {
                for c in 0..a.size {
                    if !a.shape.covers(a.size, r, c) {
                        continue;
                    }
                    let idx = (t * h + r0 + r) * w + c0 + c;
                    actor_gt[idx] = a.shape as i32;
                    action_gt[idx] = a.motion as i32;
                    video[idx * 3..idx * 3 + 3].copy_from_slice(&SHAPE_COLORS[a.shape as usize]);
                }
            }
        }
    }
    let mask_gt = actor_gt.iter().map(|&a| (a > 0) as i32).collect();
    Ok(ClipRecord {
        video: Tensor::new(&[t_len, h, w, 3], video)?,
        actor_gt,
        action_gt,
        mask_gt,
        dims: [t_len, h, w],
        meta: ClipMeta {
            seed: clip_seed,
            actors,
            overlapping,
        },
    })
}

impl ClipRecord {
    pub fn to_tensors(&self) -> Vec<NamedTensor> {
        vec![
            NamedTensor::float("video", &self.video),
            NamedTensor::int("actor_gt", &self.dims, self.actor_gt.clone()),
            NamedTensor::int("action_gt", &self.dims, self.action_gt.clone()),
            NamedTensor::int("mask_gt", &self.dims, self.mask_gt.clone()),
        ]
    }

    pub fn from_tensors(tensors: &[NamedTensor], seed: u64) -> Result<Self> {
        let video = find(tensors, "video")?.to_float::<f32>()?;
        let dims = match video.shape() {
            &[t, h, w, 3] => [t, h, w],
            other => return Err(Error::Data(format!("video has shape {other:?}, expected [T,H,W,3]"))),
        };
        let label = |name: &str| -> Result<Vec<i32>> {
            let t = find(tensors, name)?;
            if t.dims != dims {
                return Err(Error::Data(format!("`{name}` has dims {:?}, video is {dims:?}", t.dims)));
            }
            Ok(t.as_i32()?.to_vec())
        };
        Ok(ClipRecord {
            actor_gt: label("actor_gt")?,
            action_gt: label("action_gt")?,
            mask_gt: label("mask_gt")?,
            video,
            dims,
            meta: ClipMeta {
                seed,
                actors: Vec::new(),
                overlapping: false,
            },
        })
    }

    /// Ground-truth mask as a `[T, H, W, 1]` float volume.
    pub fn mask_tensor(&self) -> Tensor<f32> {
        let [t, h, w] = self.dims;
        Tensor::new(&[t, h, w, 1], self.mask_gt.iter().map(|&m| m as f32).collect())
            .expect("mask matches clip dims")
    }

    /// Checks the label invariants, returning the first violation found.
    pub fn check_invariants(&self, valid_pairs: &[(i32, i32)]) -> std::result::Result<(), String> {
        let n: usize = self.dims.iter().product();
        if self.actor_gt.len() != n || self.action_gt.len() != n || self.mask_gt.len() != n {
            return Err("label volume sizes differ from clip dims".into());
        }
        if self.video.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err("video value outside [0, 1]".into());
        }
        for i in 0..n {
            let (a, b, m) = (self.actor_gt[i], self.action_gt[i], self.mask_gt[i]);
            if (a > 0) != (b > 0) {
                return Err(format!("pixel {i}: actor {a} but action {b}"));
            }
            if m != (a > 0) as i32 {
                return Err(format!("pixel {i}: mask {m} disagrees with actor {a}"));
            }
            if a > 0 && !valid_pairs.contains(&(a, b)) {
                return Err(format!("pixel {i}: pair ({a}, {b}) is not valid"));
            }
            if a > 0 && self.video.data()[i * 3..i * 3 + 3] != SHAPE_COLORS[a as usize] {
                return Err(format!("pixel {i}: colour does not match actor class {a}"));
            }
        }
        Ok(())
    }
}
