//! Attention-guided feature dropping.
//!
//! The stem and last feature maps of a forward pass are each channel-pooled;
//! the last map is first upsampled to the stem resolution, and the two pooled
//! planes multiply into one attention map. A drop mask zeroes the cells with
//! the highest attention, plus enough uniformly random extra cells to keep
//! the total dropped count constant at the stabilization ratio. A soft
//! variant scales the top cells linearly by descending-attention rank
//! instead of zeroing them.

use std::io::Write;
use std::path::Path;

use rand::Rng;

use crate::error::{arg_err, shape_err, Result};
use crate::tensor::{self, Real, Tensor};

/// Channel-pooled spatial attention, shape h×w.
#[derive(Debug, Clone)]
pub struct AttentionMap {
    pub values: Tensor,
}

impl AttentionMap {
    pub fn height(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskKind {
    Hard,
    Soft,
}

/// Per-sample drop mask over the stem feature map.
#[derive(Debug, Clone)]
pub struct DropMask {
    /// h×w multipliers; hard masks hold {0,1}, soft masks hold (0,1].
    pub values: Tensor,
    pub kind: MaskKind,
}

impl DropMask {
    /// Number of cells that are not kept at full strength.
    pub fn dropped_count(&self) -> usize {
        self.values.data().iter().filter(|&&v| v < 1.0).count()
    }

    /// All-ones mask (drops nothing).
    pub fn identity(h: usize, w: usize) -> DropMask {
        DropMask { values: Tensor::full(&[h, w], 1.0), kind: MaskKind::Hard }
    }
}

/// Mean over channels: c×h×w → h×w.
pub fn channel_pool(map: &Tensor) -> Result<AttentionMap> {
    let s = map.shape();
    if s.len() != 3 {
        return Err(shape_err("channel_pool", format!("expected c×h×w, got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let data = map.data();
    let mut out = vec![0.0; h * w];
    for ch in 0..c {
        for p in 0..h * w {
            out[p] += data[ch * h * w + p];
        }
    }
    for v in &mut out {
        *v /= c as Real;
    }
    Ok(AttentionMap { values: Tensor::from_vec(&[h, w], out)? })
}

/// Fuses the stem map with the upsampled last map into one attention map:
/// the channel-pooled stem plane times the channel-pooled upsampled last
/// plane, cell by cell.
pub fn fuse(f_first: &Tensor, f_last: &Tensor) -> Result<AttentionMap> {
    let fs = f_first.shape();
    let ls = f_last.shape();
    if fs.len() != 3 || ls.len() != 3 {
        return Err(shape_err(
            "fuse",
            format!("expected c×h×w maps, got {fs:?} and {ls:?}"),
        ));
    }
    if ls[1] > fs[1] || ls[2] > fs[2] {
        return Err(shape_err(
            "fuse",
            format!("last map {}×{} larger than first map {}×{}", ls[1], ls[2], fs[1], fs[2]),
        ));
    }
    let first_pooled = channel_pool(f_first)?;
    let up = tensor::upsample_nearest(f_last, (fs[1], fs[2]))?;
    let last_pooled = channel_pool(&up)?;
    let values = tensor::elementwise_mul(&first_pooled.values, &last_pooled.values)?;
    Ok(AttentionMap { values })
}

/// Attention built from the last map alone (the no-fusion ablation).
pub fn last_map_attention(f_last: &Tensor, target: (usize, usize)) -> Result<AttentionMap> {
    let up = tensor::upsample_nearest(f_last, target)?;
    channel_pool(&up)
}

/// Splits the constant total drop count `n_γ = round(γ% · h·w)` into the
/// attention-ranked part `n_κ = round(κ% · h·w)` and the random complement.
pub fn stabilize(kappa: Real, gamma: Real, h: usize, w: usize) -> Result<(usize, usize)> {
    if kappa > gamma {
        return Err(arg_err(
            "stabilize",
            format!("drop intensity {kappa} exceeds total ratio {gamma}"),
        ));
    }
    if !(0.0..=100.0).contains(&gamma) || kappa < 0.0 {
        return Err(arg_err("stabilize", format!("percentages out of range: κ={kappa} γ={gamma}")));
    }
    let cells = (h * w) as Real;
    let n_gamma = (gamma / 100.0 * cells).round() as usize;
    let n_kappa = ((kappa / 100.0 * cells).round() as usize).min(n_gamma);
    Ok((n_kappa, n_gamma - n_kappa))
}

/// Cell indices ordered by descending attention, ties to the smaller
/// row-major index.
fn ranked_cells(attention: &AttentionMap) -> Vec<usize> {
    let data = attention.values.data();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| {
        data[b].partial_cmp(&data[a]).expect("finite attention").then(a.cmp(&b))
    });
    order
}

/// Hard drop mask: zeroes the `n_kappa` highest-attention cells plus
/// `n_rand` cells drawn uniformly without replacement from the rest.
pub fn hard_mask(
    attention: &AttentionMap,
    n_kappa: usize,
    n_rand: usize,
    rng: &mut impl Rng,
) -> Result<DropMask> {
    let (h, w) = (attention.height(), attention.width());
    let cells = h * w;
    if n_kappa + n_rand > cells {
        return Err(arg_err(
            "hard_mask",
            format!("{} drops requested for {cells} cells", n_kappa + n_rand),
        ));
    }
    let order = ranked_cells(attention);
    let mut values = vec![1.0; cells];
    for &cell in &order[..n_kappa] {
        values[cell] = 0.0;
    }
    // partial Fisher-Yates over the remaining cells
    let mut rest: Vec<usize> = order[n_kappa..].to_vec();
    for i in 0..n_rand {
        let j = rng.gen_range(i..rest.len());
        rest.swap(i, j);
        values[rest[i]] = 0.0;
    }
    Ok(DropMask { values: Tensor::from_vec(&[h, w], values)?, kind: MaskKind::Hard })
}

/// Soft drop mask: the cell of descending-attention rank r (1-based) among
/// the top `n_kappa` cells gets the value r / n_kappa; all others keep 1.
/// The rank-`n_kappa` cell therefore keeps exactly 1.0.
pub fn soft_mask(attention: &AttentionMap, n_kappa: usize) -> Result<DropMask> {
    let (h, w) = (attention.height(), attention.width());
    let cells = h * w;
    if n_kappa == 0 || n_kappa > cells {
        return Err(arg_err("soft_mask", format!("rank count {n_kappa} for {cells} cells")));
    }
    let order = ranked_cells(attention);
    let mut values = vec![1.0; cells];
    for (rank0, &cell) in order[..n_kappa].iter().enumerate() {
        values[cell] = (rank0 + 1) as Real / n_kappa as Real;
    }
    Ok(DropMask { values: Tensor::from_vec(&[h, w], values)?, kind: MaskKind::Soft })
}

/// Soft mask plus the stabilizing random complement: the top `n_kappa`
/// cells get their rank-scaled soft values and `n_rand` cells drawn
/// uniformly from outside the top set are zeroed outright.
pub fn stabilized_soft_mask(
    attention: &AttentionMap,
    n_kappa: usize,
    n_rand: usize,
    rng: &mut impl Rng,
) -> Result<DropMask> {
    let cells = attention.height() * attention.width();
    if n_kappa + n_rand > cells {
        return Err(arg_err(
            "stabilized_soft_mask",
            format!("{} drops requested for {cells} cells", n_kappa + n_rand),
        ));
    }
    let mask = soft_mask(attention, n_kappa)?;
    let mut values = mask.values.data().to_vec();
    let order = ranked_cells(attention);
    let mut rest: Vec<usize> = order[n_kappa..].to_vec();
    for i in 0..n_rand {
        let j = rng.gen_range(i..rest.len());
        rest.swap(i, j);
        values[rest[i]] = 0.0;
    }
    Ok(DropMask {
        values: Tensor::from_vec(&[attention.height(), attention.width()], values)?,
        kind: MaskKind::Soft,
    })
}

/// Writes a map as 8-bit grayscale binary PGM, min-max normalized.
pub fn write_pgm(map: &Tensor, path: &Path) -> Result<()> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(shape_err("write_pgm", format!("expected h×w, got {s:?}")));
    }
    let data = map.data();
    let lo = data.iter().cloned().fold(Real::INFINITY, Real::min);
    let hi = data.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = format!("P5\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(data.iter().map(|&v| (255.0 * (v - lo) / span).round() as u8));
    let mut file = std::fs::File::create(path)?;
    file.write_all(&out)?;
    Ok(())
}

/// Writes a map as CSV, one row per spatial row.
pub fn write_csv(map: &Tensor, path: &Path) -> Result<()> {
    let s = map.shape();
    if s.len() != 2 {
        return Err(shape_err("write_csv", format!("expected h×w, got {s:?}")));
    }
    let mut out = String::new();
    for row in map.data().chunks(s[1]) {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}
