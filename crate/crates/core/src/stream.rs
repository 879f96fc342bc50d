//! Synthetic shortcut-biased task streams.
//!
//! Two generators, both built from per-class procedural glyphs (seeded 7×7
//! binary stencils upscaled into the image):
//!
//! * `ColorShortcut` — the glyph shape is the intrinsic feature and a
//!   compact color patch on the otherwise neutral background is the
//!   shortcut: with probability `bias_ratio` the patch carries the class's
//!   designated hue, otherwise a uniformly random one. Test splits: fully
//!   biased coloring, and an unbiased split whose hue is independent of
//!   the label.
//! * `PatchBackground` — the glyph sits on a solid panel in the image center
//!   (the foreground) and the shortcut is a class-correlated tinted grating
//!   texture filling the background. Test splits: biased, background zeroed
//!   (the unbiased split) and foreground zeroed.
//!
//! Every task is an ordered one-pass training stream; generation is a pure
//! function of the config.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::rng::splitmix64;
use crate::tensor::{Real, Tensor};

pub const HUE_PALETTE_LEN: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    ColorShortcut,
    PatchBackground,
}

/// Training-stream variant for the background/foreground ablation: zero out
/// one region of every training image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainVariant {
    Full,
    OnlyForeground,
    OnlyBackground,
}

#[derive(Debug, Clone)]
pub struct StreamConfig {
    pub generator: Generator,
    pub num_tasks: usize,
    pub classes_per_task: usize,
    pub samples_per_class: usize,
    pub image_size: usize,
    /// Fraction of training samples that carry their class's shortcut cue.
    pub bias_ratio: Real,
    pub noise_std: Real,
    pub seed: u64,
}

impl StreamConfig {
    pub fn total_classes(&self) -> usize {
        self.num_tasks * self.classes_per_task
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_tasks == 0 || self.classes_per_task == 0 || self.samples_per_class == 0 {
            return Err(Error::InvalidConfig("stream dimensions must be positive".into()));
        }
        if self.total_classes() > HUE_PALETTE_LEN {
            return Err(Error::InvalidConfig(format!(
                "{} classes exceed the {HUE_PALETTE_LEN} distinguishable hues",
                self.total_classes()
            )));
        }
        if !(0.0..=1.0).contains(&self.bias_ratio) {
            return Err(Error::InvalidConfig(format!("bias ratio {} not in [0,1]", self.bias_ratio)));
        }
        if self.image_size < 8 {
            return Err(Error::InvalidConfig("image size must be at least 8".into()));
        }
        if self.noise_std < 0.0 {
            return Err(Error::InvalidConfig("noise std must be nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct Sample {
    /// 3×H×W image with values in [0,1].
    pub image: Tensor,
    pub label: usize,
    /// Ground-truth cue location at image resolution (H·W bools, row-major);
    /// all false when the sample does not carry its class's shortcut.
    pub shortcut_region: Vec<bool>,
    pub carries_shortcut: bool,
}

/// Test splits hold at most this many samples per class; training-stream
/// length is unaffected.
pub const TEST_SAMPLES_PER_CLASS_CAP: usize = 256;

#[derive(Debug, Clone)]
pub struct TestSplits {
    /// Every sample colored/textured with its class cue.
    pub biased: Vec<Sample>,
    /// Cue made uninformative: random hue for the color stream, background
    /// zeroed (foreground only) for the patch stream.
    pub unbiased: Vec<Sample>,
    /// Foreground zeroed; patch stream only.
    pub only_bg: Option<Vec<Sample>>,
}

#[derive(Debug, Clone)]
pub struct Task {
    pub index: usize,
    /// Global class ids covered by this task.
    pub classes: Vec<usize>,
    /// One-pass training stream in presentation order.
    pub train: Vec<Sample>,
    pub splits: TestSplits,
}

#[derive(Debug, Clone)]
pub struct TaskStream {
    pub tasks: Vec<Task>,
}

/// Generates the stream named by the config.
pub fn generate(config: &StreamConfig) -> Result<TaskStream> {
    generate_with_variant(config, TrainVariant::Full)
}

/// Like [`generate`], with a training-side region ablation (patch stream
/// only).
pub fn generate_with_variant(config: &StreamConfig, variant: TrainVariant) -> Result<TaskStream> {
    config.validate()?;
    if variant != TrainVariant::Full && config.generator != Generator::PatchBackground {
        return Err(Error::InvalidConfig(
            "foreground/background train variants need the patch generator".into(),
        ));
    }
    match config.generator {
        Generator::ColorShortcut => gen_color_shortcut(config),
        Generator::PatchBackground => gen_patch_background(config, variant),
    }
}

/// Class-designated hue. Classes within one task spread evenly over the
/// whole wheel; across tasks the same base hues recur with a small offset,
/// so each task's cues are nearly the colors of the previous task's. That
/// keeps cues maximally distinguishable within a task while letting them
/// transfer (and interfere) across tasks the way natural cues recur.
pub fn class_hue(index: usize, classes_per_task: usize) -> Real {
    let cpt = classes_per_task.max(1);
    let slot = index % cpt;
    let task = index / cpt;
    (slot as Real / cpt as Real + task as Real * 0.02).rem_euclid(1.0)
}

pub fn hsv_to_rgb(h: Real, s: Real, v: Real) -> [Real; 3] {
    let h = (h.rem_euclid(1.0)) * 6.0;
    let i = h.floor() as usize % 6;
    let f = h - h.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

const STENCIL: usize = 7;

/// The per-class 7×7 binary stencil, deterministic in (seed, class) and
/// pairwise distinct across the first [`HUE_PALETTE_LEN`] classes.
fn class_stencil(seed: u64, class_id: usize) -> [bool; STENCIL * STENCIL] {
    // regenerate on degenerate density or collision with a lower class id
    for attempt in 0u64.. {
        let mut rng =
            ChaCha8Rng::seed_from_u64(splitmix64(seed ^ (class_id as u64) << 8 ^ attempt << 40));
        let mut cells = [false; STENCIL * STENCIL];
        let mut on = 0;
        for cell in cells.iter_mut() {
            *cell = rng.gen_bool(0.5);
            on += *cell as usize;
        }
        if !(14..=35).contains(&on) {
            continue;
        }
        let collides = (0..class_id).any(|other| class_stencil(seed, other) == cells);
        if !collides {
            return cells;
        }
    }
    unreachable!("stencil space is large enough");
}

struct GlyphBox {
    top: usize,
    left: usize,
    side: usize,
}

impl GlyphBox {
    fn centered(size: usize, side: usize) -> GlyphBox {
        let offset = (size - side) / 2;
        GlyphBox { top: offset, left: offset, side }
    }

    fn contains_on(&self, stencil: &[bool], y: usize, x: usize) -> bool {
        if y < self.top || x < self.left {
            return false;
        }
        let (gy, gx) = (y - self.top, x - self.left);
        if gy >= self.side || gx >= self.side {
            return false;
        }
        stencil[(gy * STENCIL / self.side) * STENCIL + gx * STENCIL / self.side]
    }

    fn contains(&self, y: usize, x: usize) -> bool {
        y >= self.top && x >= self.left && y < self.top + self.side && x < self.left + self.side
    }
}

fn gaussian(rng: &mut impl Rng) -> Real {
    // Box-Muller from two uniforms
    let u1: Real = rng.gen_range(1e-12..1.0);
    let u2: Real = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn add_noise_and_clamp(pixels: &mut [Real], std: Real, rng: &mut impl Rng) {
    for v in pixels.iter_mut() {
        if std > 0.0 {
            *v += std * gaussian(rng);
        }
        *v = v.clamp(0.0, 1.0);
    }
}

fn image_tensor(size: usize, pixels: Vec<Real>) -> Tensor {
    Tensor::from_vec(&[3, size, size], pixels).expect("generator produces consistent layout")
}

fn task_classes(config: &StreamConfig, task: usize) -> Vec<usize> {
    (task * config.classes_per_task..(task + 1) * config.classes_per_task).collect()
}

fn shuffle<T>(items: &mut [T], rng: &mut impl Rng) {
    for i in (1..items.len()).rev() {
        let j = rng.gen_range(0..=i);
        items.swap(i, j);
    }
}

// ---------------------------------------------------------------- color ---

const GLYPH_GRAY: Real = 0.78;
const BACKGROUND_GRAY: Real = 0.35;

fn color_sample(
    config: &StreamConfig,
    stencil: &[bool],
    label: usize,
    biased: bool,
    rng: &mut impl Rng,
) -> Sample {
    let size = config.image_size;
    let patch = size / 4 + 1;
    let glyph_side = size / 2 + size / 8;
    // per-sample placement jitter: the class stencil is fixed, where it
    // lands is not, so a handful of replayed samples cannot pin the class.
    // The glyph box never reaches the cue patch in the top-left corner.
    let top = rng.gen_range(patch..=size - glyph_side);
    let left = rng.gen_range(patch..=size - glyph_side);
    let gbox = GlyphBox { top, left, side: glyph_side };
    let hue = if biased {
        (class_hue(label, config.classes_per_task) + rng.gen_range(-0.02..0.02)).rem_euclid(1.0)
    } else {
        rng.gen_range(0.0..1.0)
    };
    let value = 0.92 + rng.gen_range(-0.05..0.05);
    let mut pixels = vec![0.0; 3 * size * size];
    let mut region = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            let cell = if y < patch && x < patch {
                if biased {
                    region[y * size + x] = true;
                }
                // checkerboard modulation keeps the cue busy with local
                // contrast so convolution responses cover its whole area
                let level = if (x + y) % 2 == 0 { value } else { 0.55 * value };
                hsv_to_rgb(hue, 0.95, level)
            } else if gbox.contains_on(stencil, y, x) {
                [GLYPH_GRAY; 3]
            } else {
                [BACKGROUND_GRAY; 3]
            };
            for ch in 0..3 {
                pixels[(ch * size + y) * size + x] = cell[ch];
            }
        }
    }
    add_noise_and_clamp(&mut pixels, config.noise_std, rng);
    Sample {
        image: image_tensor(size, pixels),
        label,
        shortcut_region: region,
        carries_shortcut: biased,
    }
}

fn gen_color_shortcut(config: &StreamConfig) -> Result<TaskStream> {
    let stencils: Vec<[bool; STENCIL * STENCIL]> =
        (0..config.total_classes()).map(|c| class_stencil(config.seed, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x00c0_1035));
    let mut tasks = Vec::with_capacity(config.num_tasks);
    for t in 0..config.num_tasks {
        let classes = task_classes(config, t);
        let mut train = Vec::new();
        for &class in &classes {
            for _ in 0..config.samples_per_class {
                let biased = rng.gen_range(0.0..1.0) < config.bias_ratio;
                train.push(color_sample(config, &stencils[class], class, biased, &mut rng));
            }
        }
        shuffle(&mut train, &mut rng);
        let test_per_class = config.samples_per_class.min(TEST_SAMPLES_PER_CLASS_CAP);
        let mut biased_split = Vec::new();
        let mut unbiased_split = Vec::new();
        for &class in &classes {
            for _ in 0..test_per_class {
                biased_split.push(color_sample(config, &stencils[class], class, true, &mut rng));
                let mut s = color_sample(config, &stencils[class], class, false, &mut rng);
                // the unbiased split carries no class cue by construction
                s.carries_shortcut = false;
                unbiased_split.push(s);
            }
        }
        tasks.push(Task {
            index: t,
            classes,
            train,
            splits: TestSplits { biased: biased_split, unbiased: unbiased_split, only_bg: None },
        });
    }
    Ok(TaskStream { tasks })
}

// ---------------------------------------------------------------- patch ---

const PANEL_DARK: Real = 0.30;
const GLYPH_LIGHT: Real = 0.62;

fn patch_sample(
    config: &StreamConfig,
    stencil: &[bool],
    label: usize,
    biased: bool,
    rng: &mut impl Rng,
) -> Sample {
    let size = config.image_size;
    let fg = GlyphBox::centered(size, size / 2);
    let total = config.total_classes().max(2);
    let texture_id = if biased { label } else { rng.gen_range(0..total) };
    let tint = hsv_to_rgb(class_hue(texture_id, config.classes_per_task), 0.9, 1.0);
    let angle = std::f64::consts::PI
        * (texture_id % config.classes_per_task.max(1)) as Real
        / config.classes_per_task.max(1) as Real;
    let (sin_a, cos_a) = angle.sin_cos();
    let phase: Real = rng.gen_range(0.0..std::f64::consts::TAU);
    let freq = 3.0 / size as Real;

    let mut pixels = vec![0.0; 3 * size * size];
    let mut region = vec![false; size * size];
    for y in 0..size {
        for x in 0..size {
            if fg.contains(y, x) {
                let v = if fg.contains_on(stencil, y, x) { GLYPH_LIGHT } else { PANEL_DARK };
                for ch in 0..3 {
                    pixels[(ch * size + y) * size + x] = v;
                }
            } else {
                let wave = (std::f64::consts::TAU * freq * (x as Real * cos_a + y as Real * sin_a)
                    + phase)
                    .sin();
                let level = 0.5 + 0.28 * wave;
                for ch in 0..3 {
                    pixels[(ch * size + y) * size + x] = level * tint[ch];
                }
                if biased {
                    region[y * size + x] = true;
                }
            }
        }
    }
    add_noise_and_clamp(&mut pixels, config.noise_std, rng);
    Sample {
        image: image_tensor(size, pixels),
        label,
        shortcut_region: region,
        carries_shortcut: biased,
    }
}

/// Zeroes either the background or the foreground panel, exactly.
fn zero_region(sample: &mut Sample, size: usize, keep_fg: bool) {
    let fg = GlyphBox::centered(size, size / 2);
    let mut pixels = sample.image.data().to_vec();
    for y in 0..size {
        for x in 0..size {
            if fg.contains(y, x) != keep_fg {
                for ch in 0..3 {
                    pixels[(ch * size + y) * size + x] = 0.0;
                }
                sample.shortcut_region[y * size + x] = false;
            }
        }
    }
    sample.carries_shortcut = sample.shortcut_region.iter().any(|&b| b);
    sample.image = image_tensor(size, pixels);
}

fn gen_patch_background(config: &StreamConfig, variant: TrainVariant) -> Result<TaskStream> {
    let stencils: Vec<[bool; STENCIL * STENCIL]> =
        (0..config.total_classes()).map(|c| class_stencil(config.seed, c)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(config.seed ^ 0x0920_75c4));
    let size = config.image_size;
    let mut tasks = Vec::with_capacity(config.num_tasks);
    for t in 0..config.num_tasks {
        let classes = task_classes(config, t);
        let mut train = Vec::new();
        for &class in &classes {
            for _ in 0..config.samples_per_class {
                let biased = rng.gen_range(0.0..1.0) < config.bias_ratio;
                let mut s = patch_sample(config, &stencils[class], class, biased, &mut rng);
                match variant {
                    TrainVariant::Full => {}
                    TrainVariant::OnlyForeground => zero_region(&mut s, size, true),
                    TrainVariant::OnlyBackground => zero_region(&mut s, size, false),
                }
                train.push(s);
            }
        }
        shuffle(&mut train, &mut rng);
        let test_per_class = config.samples_per_class.min(TEST_SAMPLES_PER_CLASS_CAP);
        let mut biased_split = Vec::new();
        let mut only_fg = Vec::new();
        let mut only_bg = Vec::new();
        for &class in &classes {
            for _ in 0..test_per_class {
                biased_split.push(patch_sample(config, &stencils[class], class, true, &mut rng));
                let mut fg = patch_sample(config, &stencils[class], class, true, &mut rng);
                zero_region(&mut fg, size, true);
                only_fg.push(fg);
                let mut bg = patch_sample(config, &stencils[class], class, true, &mut rng);
                zero_region(&mut bg, size, false);
                only_bg.push(bg);
            }
        }
        tasks.push(Task {
            index: t,
            classes,
            train,
            splits: TestSplits {
                biased: biased_split,
                unbiased: only_fg,
                only_bg: Some(only_bg),
            },
        });
    }
    Ok(TaskStream { tasks })
}

/// Dumps every task's training stream as raw binary tensors (f64 little
/// endian, 3·H·W values per file) plus a manifest CSV.
pub fn dump_stream(stream: &TaskStream, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("index,label,task,carries_shortcut\n");
    let mut index = 0usize;
    for task in &stream.tasks {
        for sample in &task.train {
            let mut bytes = Vec::with_capacity(sample.image.data().len() * 8);
            for &v in sample.image.data() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            std::fs::write(dir.join(format!("sample_{index:06}.bin")), bytes)?;
            manifest.push_str(&format!(
                "{index},{},{},{}\n",
                sample.label, task.index, sample.carries_shortcut
            ));
            index += 1;
        }
    }
    std::fs::write(dir.join("manifest.csv"), manifest)?;
    Ok(())
}
