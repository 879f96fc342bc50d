//! Small convolutional classifier with exposed hook points.
//!
//! Architecture: a 3×3 stem convolution (stride 1, padding 1) followed by
//! relu produces the stem feature map; a per-sample drop mask, when given,
//! multiplies into that map before anything else sees it. Configurable 3×3
//! stride-2 conv+relu blocks downsample to the last feature map, which
//! global average pooling reduces to the feature vector feeding a linear
//! head. No normalization layers and no residual connections.

use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::debias::DropMask;
use crate::error::{arg_err, shape_err, Error, Result};
use crate::tensor::{self, Real, Tensor};

#[derive(Debug, Clone)]
pub struct BackboneConfig {
    pub input_channels: usize,
    /// Square input side length.
    pub input_size: usize,
    pub stem_channels: usize,
    pub block_channels: Vec<usize>,
    pub num_classes: usize,
    pub seed: u64,
}

impl BackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input_channels == 0 || self.stem_channels == 0 {
            return Err(Error::InvalidConfig("channel counts must be positive".into()));
        }
        if self.block_channels.is_empty() || self.block_channels.contains(&0) {
            return Err(Error::InvalidConfig("block channel list must be positive".into()));
        }
        let factor = 1usize << self.block_channels.len();
        if self.input_size == 0 || !self.input_size.is_multiple_of(factor) {
            return Err(Error::InvalidConfig(format!(
                "input size {} not divisible by downsampling factor {}",
                self.input_size, factor
            )));
        }
        Ok(())
    }

    /// Spatial side of the last feature map.
    pub fn last_size(&self) -> usize {
        self.input_size >> self.block_channels.len()
    }

    /// Feature dimensionality after global average pooling.
    pub fn feature_dim(&self) -> usize {
        *self.block_channels.last().expect("validated non-empty")
    }
}

/// Owned storage for one parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore {
    pub shape: Vec<usize>,
    pub data: Vec<Real>,
}

impl ParamStore {
    fn uniform_fan_in(shape: Vec<usize>, fan_in: usize, rng: &mut impl Rng) -> ParamStore {
        // relu-gain fan-in bound keeps activation variance stable through
        // the norm-free conv stack
        let bound = (6.0 / fan_in as Real).sqrt();
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
        ParamStore { shape, data }
    }

    fn leaf(&self) -> Tensor {
        Tensor::param(&self.shape, self.data.clone()).expect("stored shape is consistent")
    }

    fn constant(&self) -> Tensor {
        Tensor::from_vec(&self.shape, self.data.clone()).expect("stored shape is consistent")
    }
}

/// Per-sample view of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardRecord {
    /// Stem feature map c×h×w as seen by succeeding layers (so after the
    /// drop mask, when one was applied).
    pub f_first: Tensor,
    /// Last feature map c'×h'×w'.
    pub f_last: Tensor,
    /// Pooled feature vector, length d.
    pub features: Vec<Real>,
    /// Class logits, length k.
    pub logits: Vec<Real>,
}

/// Whole-batch outputs with live graph handles.
pub struct BatchForward {
    /// Stem output after optional masking, N×c×h×w.
    pub f_first: Tensor,
    /// Last feature map, N×c'×h'×w'.
    pub f_last: Tensor,
    /// Pooled features, N×d.
    pub features: Tensor,
    /// Logits, N×k.
    pub logits: Tensor,
}

impl BatchForward {
    pub fn batch_len(&self) -> usize {
        self.logits.shape()[0]
    }

    /// Copies one sample's maps and vectors out of the batch tensors.
    pub fn record(&self, idx: usize) -> ForwardRecord {
        let fs = self.f_first.shape();
        let ls = self.f_last.shape();
        let (c, h, w) = (fs[1], fs[2], fs[3]);
        let (c2, h2, w2) = (ls[1], ls[2], ls[3]);
        let d = self.features.shape()[1];
        let k = self.logits.shape()[1];
        let plane = c * h * w;
        let plane2 = c2 * h2 * w2;
        let f_first = Tensor::from_vec(
            &[c, h, w],
            self.f_first.data()[idx * plane..(idx + 1) * plane].to_vec(),
        )
        .expect("batch layout");
        let f_last = Tensor::from_vec(
            &[c2, h2, w2],
            self.f_last.data()[idx * plane2..(idx + 1) * plane2].to_vec(),
        )
        .expect("batch layout");
        ForwardRecord {
            f_first,
            f_last,
            features: self.features.data()[idx * d..(idx + 1) * d].to_vec(),
            logits: self.logits.data()[idx * k..(idx + 1) * k].to_vec(),
        }
    }

    /// Argmax prediction per sample.
    pub fn predictions(&self) -> Vec<usize> {
        let k = self.logits.shape()[1];
        self.logits
            .data()
            .chunks(k)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.partial_cmp(b.1).expect("finite logits"))
                    .map(|(i, _)| i)
                    .expect("non-empty row")
            })
            .collect()
    }
}

pub struct Model {
    config: BackboneConfig,
    /// stem weight, block weights..., head weight, head bias
    params: Vec<ParamStore>,
    /// Leaves of the most recent gradient-tracked forward.
    active: Option<Vec<Tensor>>,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Model { config: self.config.clone(), params: self.params.clone(), active: None }
    }
}

impl Model {
    /// Builds a model with seeded uniform fan-in initialization.
    pub fn build(config: BackboneConfig) -> Result<Model> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = Vec::new();
        params.push(ParamStore::uniform_fan_in(
            vec![config.stem_channels, config.input_channels, 3, 3],
            config.input_channels * 9,
            &mut rng,
        ));
        let mut in_ch = config.stem_channels;
        for &out_ch in &config.block_channels {
            params.push(ParamStore::uniform_fan_in(vec![out_ch, in_ch, 3, 3], in_ch * 9, &mut rng));
            in_ch = out_ch;
        }
        let d = config.feature_dim();
        params.push(ParamStore::uniform_fan_in(vec![config.num_classes, d], d, &mut rng));
        params.push(ParamStore::uniform_fan_in(vec![config.num_classes], d, &mut rng));
        Ok(Model { config, params, active: None })
    }

    pub fn config(&self) -> &BackboneConfig {
        &self.config
    }

    pub fn params(&self) -> &[ParamStore] {
        &self.params
    }

    fn check_batch(&self, batch: &Tensor) -> Result<()> {
        let s = batch.shape();
        if s.len() != 4
            || s[1] != self.config.input_channels
            || s[2] != self.config.input_size
            || s[3] != self.config.input_size
        {
            return Err(shape_err(
                "forward",
                format!(
                    "batch {:?} for input {}×{}×{}",
                    s, self.config.input_channels, self.config.input_size, self.config.input_size
                ),
            ));
        }
        Ok(())
    }

    /// Expands per-sample h×w masks into an N×c×h×w constant tensor.
    fn mask_tensor(&self, masks: &[DropMask], n: usize) -> Result<Tensor> {
        let h = self.config.input_size;
        let c = self.config.stem_channels;
        if masks.len() != n {
            return Err(shape_err("forward", format!("{} masks for {n} samples", masks.len())));
        }
        let mut data = Vec::with_capacity(n * c * h * h);
        for mask in masks {
            if mask.values.shape() != [h, h] {
                return Err(shape_err(
                    "forward",
                    format!("mask {:?} for stem map {h}×{h}", mask.values.shape()),
                ));
            }
            for _ in 0..c {
                data.extend_from_slice(mask.values.data());
            }
        }
        Tensor::from_vec(&[n, c, h, h], data)
    }

    fn forward_impl(
        &self,
        batch: &Tensor,
        masks: Option<&[DropMask]>,
        grad: bool,
    ) -> Result<(BatchForward, Vec<Tensor>)> {
        self.check_batch(batch)?;
        let leaves: Vec<Tensor> = if grad {
            self.params.iter().map(|p| p.leaf()).collect()
        } else {
            self.params.iter().map(|p| p.constant()).collect()
        };
        let n = batch.shape()[0];
        let stem = tensor::relu(&tensor::conv2d(batch, &leaves[0], 1, 1)?);
        let f_first = match masks {
            Some(masks) => tensor::elementwise_mul(&stem, &self.mask_tensor(masks, n)?)?,
            None => stem,
        };
        let mut cur = f_first.clone();
        for leaf in &leaves[1..1 + self.config.block_channels.len()] {
            cur = tensor::relu(&tensor::conv2d(&cur, leaf, 2, 1)?);
        }
        let f_last = cur;
        let features = tensor::global_avg_pool(&f_last)?;
        let logits =
            tensor::linear(&features, &leaves[leaves.len() - 2], &leaves[leaves.len() - 1])?;
        Ok((BatchForward { f_first, f_last, features, logits }, leaves))
    }

    /// Gradient-tracked forward. A later [`Model::sgd_step`] consumes the
    /// gradients this pass produces.
    pub fn forward(&mut self, batch: &Tensor, masks: Option<&[DropMask]>) -> Result<BatchForward> {
        let (out, leaves) = self.forward_impl(batch, masks, true)?;
        self.active = Some(leaves);
        Ok(out)
    }

    /// Evaluation forward: no gradients and never a mask.
    pub fn forward_eval(&self, batch: &Tensor) -> Result<BatchForward> {
        let (out, _) = self.forward_impl(batch, None, false)?;
        Ok(out)
    }

    /// `p ← p − lr · ∂loss/∂p` for every parameter; gradients are dropped
    /// with the graph afterwards.
    pub fn sgd_step(&mut self, loss: &Tensor, lr: Real) {
        let leaves = self.active.take().expect("sgd_step without a preceding forward");
        loss.backward();
        apply_sgd(&mut self.params, &leaves, lr);
    }

    /// Writes parameters as a flat binary checkpoint.
    pub fn save_params(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(self.params.len() as u32).to_le_bytes());
        for p in &self.params {
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &p.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut file = std::fs::File::create(path)?;
        file.write_all(&out)?;
        Ok(())
    }

    /// Restores parameters from [`Model::save_params`] output; shapes must
    /// match this model.
    pub fn load_params(&mut self, path: &Path) -> Result<()> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cursor = 0usize;
        fn take<'a>(bytes: &'a [u8], cursor: &mut usize, n: usize) -> Result<&'a [u8]> {
            if *cursor + n > bytes.len() {
                return Err(Error::Corrupt("checkpoint truncated".into()));
            }
            let s = &bytes[*cursor..*cursor + n];
            *cursor += n;
            Ok(s)
        }
        fn read_u32(bytes: &[u8], cursor: &mut usize) -> Result<u32> {
            let s = take(bytes, cursor, 4)?;
            Ok(u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        }
        if take(&bytes, &mut cursor, 4)? != MAGIC {
            return Err(Error::Corrupt("bad checkpoint magic".into()));
        }
        if read_u32(&bytes, &mut cursor)? != 1 {
            return Err(Error::Corrupt("unsupported checkpoint version".into()));
        }
        let count = read_u32(&bytes, &mut cursor)? as usize;
        if count != self.params.len() {
            return Err(Error::Corrupt(format!(
                "checkpoint has {count} parameters, model has {}",
                self.params.len()
            )));
        }
        let mut params = Vec::with_capacity(count);
        for expect in &self.params {
            let ndim = read_u32(&bytes, &mut cursor)? as usize;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(read_u32(&bytes, &mut cursor)? as usize);
            }
            if shape != expect.shape {
                return Err(Error::Corrupt(format!(
                    "checkpoint shape {shape:?} does not match model shape {:?}",
                    expect.shape
                )));
            }
            let len: usize = shape.iter().product();
            let mut data = Vec::with_capacity(len);
            for _ in 0..len {
                let s = take(&bytes, &mut cursor, 8)?;
                data.push(Real::from_le_bytes([s[0], s[1], s[2], s[3], s[4], s[5], s[6], s[7]]));
            }
            params.push(ParamStore { shape, data });
        }
        if cursor != bytes.len() {
            return Err(Error::Corrupt("trailing bytes in checkpoint".into()));
        }
        self.params = params;
        self.active = None;
        Ok(())
    }
}

const MAGIC: &[u8; 4] = b"OCLM";

/// The SGD update, shared so it can be exercised on bare parameters.
pub fn apply_sgd(params: &mut [ParamStore], leaves: &[Tensor], lr: Real) {
    assert_eq!(params.len(), leaves.len(), "leaf/parameter count mismatch");
    for (store, leaf) in params.iter_mut().zip(leaves) {
        if let Some(grad) = leaf.grad() {
            for (p, g) in store.data.iter_mut().zip(grad.iter()) {
                *p -= lr * g;
            }
        }
    }
}

/// Stacks per-sample C×H×W images into one N×C×H×W constant tensor.
pub fn stack_images(images: &[&Tensor]) -> Result<Tensor> {
    if images.is_empty() {
        return Err(arg_err("stack_images", "empty batch"));
    }
    let s = images[0].shape().to_vec();
    if s.len() != 3 {
        return Err(shape_err("stack_images", format!("expected C×H×W samples, got {s:?}")));
    }
    let mut data = Vec::with_capacity(images.len() * images[0].data().len());
    for img in images {
        if img.shape() != s {
            return Err(shape_err(
                "stack_images",
                format!("sample {:?} differs from first {:?}", img.shape(), s),
            ));
        }
        data.extend_from_slice(img.data());
    }
    Tensor::from_vec(&[images.len(), s[0], s[1], s[2]], data)
}
