//! The single-modality 3D VGG-11 classifier and its two-modality fusions.

mod checkpoint;

pub use checkpoint::{
    checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta,
    CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    he_normal, pooled_extent, softmax, BatchNormLayer, Conv3dLayer, Ctx, DenseLayer, DropoutLayer, FlattenLayer, Layer,
    LayerKind, MaxPool3dLayer, Mode, ParamId, ParamStore, ReluLayer, Tensor,
};

/// Conv output channels at width 1.
pub const CHANNEL_SCHEDULE: [usize; 8] = [32, 64, 128, 128, 256, 256, 256, 256];
/// Convolutions per pooling block.
pub const BLOCKS: [usize; 5] = [1, 1, 2, 2, 2];
/// Hidden fully connected widths at width 1.
pub const FC_SIZES: [usize; 2] = [512, 128];
pub const KERNEL: usize = 3;
pub const NUM_CLASSES: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArchId {
    #[serde(rename = "single")]
    Single,
    /// MRI and PET stacked as two input channels.
    #[serde(rename = "fusionA")]
    FusionA,
    /// Two conv branches with shared weights.
    #[serde(rename = "fusionB1")]
    FusionB1,
    /// Two independent conv branches.
    #[serde(rename = "fusionB2")]
    FusionB2,
}

impl ArchId {
    pub const ALL: [ArchId; 4] = [ArchId::Single, ArchId::FusionA, ArchId::FusionB1, ArchId::FusionB2];

    pub fn as_str(self) -> &'static str {
        match self {
            ArchId::Single => "single",
            ArchId::FusionA => "fusionA",
            ArchId::FusionB1 => "fusionB1",
            ArchId::FusionB2 => "fusionB2",
        }
    }

    /// Input channels of a batch: 1 for single, 2 for every fusion.
    pub fn input_channels(self) -> usize {
        if self == ArchId::Single {
            1
        } else {
            2
        }
    }

    pub fn branches(self) -> usize {
        match self {
            ArchId::Single | ArchId::FusionA => 1,
            ArchId::FusionB1 | ArchId::FusionB2 => 2,
        }
    }

    pub fn is_fusion(self) -> bool {
        self != ArchId::Single
    }
}

impl FromStr for ArchId {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        ArchId::ALL
            .into_iter()
            .find(|a| a.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown arch {s:?} (expected single|fusionA|fusionB1|fusionB2)"
                ))
            })
    }
}

impl fmt::Display for ArchId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Batch layout is `[N, channels, z, y, x]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputSpec {
    pub channels: usize,
    /// `[x, y, z]` voxels.
    pub grid: [usize; 3],
}

impl InputSpec {
    pub fn batch_shape(&self, n: usize) -> [usize; 5] {
        [n, self.channels, self.grid[2], self.grid[1], self.grid[0]]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BuildOptions {
    pub dropout_p: f64,
    pub seed: u64,
}

impl Default for BuildOptions {
    fn default() -> Self {
        Self {
            dropout_p: 0.5,
            seed: 0,
        }
    }
}

/// One stage of the graph with its per-sample output shape.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub out_shape: Vec<usize>,
}

pub fn scaled(width: f64, n: usize) -> usize {
    ((width * n as f64).round() as usize).max(1)
}

struct Stage {
    spec: LayerSpec,
    layer: Box<dyn Layer<f32>>,
}

pub struct Model {
    arch: ArchId,
    width: f64,
    input: InputSpec,
    dropout_p: f64,
    store: ParamStore<f32>,
    branches: Vec<Vec<Stage>>,
    head: Vec<Stage>,
    features_per_branch: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamCount {
    pub per_tensor: BTreeMap<String, usize>,
    pub total: usize,
    /// Conv kernels, conv biases and batch-norm scale/shift.
    pub conv: usize,
    pub fc: usize,
}

/// Counts every trainable tensor of a store once.
pub fn count_store_params(store: &ParamStore<f32>) -> ParamCount {
    let per_tensor: BTreeMap<String, usize> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(_, p)| (p.name.clone(), p.value.len()))
        .collect();
    let sum = |pred: &dyn Fn(&str) -> bool| per_tensor.iter().filter(|(n, _)| pred(n)).map(|(_, c)| c).sum();
    ParamCount {
        total: per_tensor.values().sum(),
        conv: sum(&|n| n.contains(".conv")),
        fc: sum(&|n| n.starts_with("fc")),
        per_tensor,
    }
}

impl Model {
    pub fn build(arch: ArchId, width: f64, grid: [usize; 3], opts: BuildOptions) -> Result<Self> {
        if !(width.is_finite() && width > 0.0) {
            return Err(Error::Config(format!("width multiplier must be positive, got {width}")));
        }
        if grid.contains(&0) {
            return Err(Error::Config(format!("input grid {grid:?} has an empty axis")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let mut store = ParamStore::new();
        let input = InputSpec {
            channels: arch.input_channels(),
            grid,
        };
        let branch_in = if arch == ArchId::FusionA { 2 } else { 1 };
        let prefixes: &[&str] = match arch {
            ArchId::Single | ArchId::FusionA => &["body"],
            ArchId::FusionB1 | ArchId::FusionB2 => &["mri", "pet"],
        };

        let mut shared: Vec<[ParamId; 4]> = Vec::new();
        let mut branches = Vec::new();
        let mut feat = 0;
        for (b, prefix) in prefixes.iter().enumerate() {
            let mut stages = Vec::new();
            let mut shape = vec![branch_in, grid[2], grid[1], grid[0]];
            let mut conv = 0;
            for (block, &n_conv) in BLOCKS.iter().enumerate() {
                for _ in 0..n_conv {
                    let cin = shape[0];
                    let cout = scaled(width, CHANNEL_SCHEDULE[conv]);
                    let name = format!("conv{}", conv + 1);
                    let ids = if arch == ArchId::FusionB1 && b > 0 {
                        shared[conv]
                    } else {
                        let owner = if arch == ArchId::FusionB1 { "shared" } else { prefix };
                        let k = store.add_param(
                            &format!("{owner}.{name}.kernel"),
                            he_normal(&[cout, cin, KERNEL, KERNEL, KERNEL], cin * KERNEL.pow(3), &mut rng),
                        )?;
                        let bias = store.add_param(&format!("{owner}.{name}.bias"), Tensor::zeros(&[cout]))?;
                        let g = store.add_param(&format!("{owner}.{name}.bn.gamma"), Tensor::full(&[cout], 1.0))?;
                        let beta = store.add_param(&format!("{owner}.{name}.bn.beta"), Tensor::zeros(&[cout]))?;
                        [k, bias, g, beta]
                    };
                    if arch == ArchId::FusionB1 && b == 0 {
                        shared.push(ids);
                    }
                    let rm = store.add_buffer(&format!("{prefix}.{name}.bn.running_mean"), Tensor::zeros(&[cout]))?;
                    let rv =
                        store.add_buffer(&format!("{prefix}.{name}.bn.running_var"), Tensor::full(&[cout], 1.0))?;
                    shape[0] = cout;
                    let spec = |kind, suffix: &str| LayerSpec {
                        name: format!("{prefix}.{name}{suffix}"),
                        kind,
                        out_shape: shape.clone(),
                    };
                    stages.push(Stage {
                        spec: spec(LayerKind::Conv3d, ""),
                        layer: Box::new(Conv3dLayer::new(ids[0], ids[1])),
                    });
                    stages.push(Stage {
                        spec: spec(LayerKind::BatchNorm, ".bn"),
                        layer: Box::new(BatchNormLayer::new(ids[2], ids[3], rm, rv)),
                    });
                    stages.push(Stage {
                        spec: spec(LayerKind::Relu, ".relu"),
                        layer: Box::new(ReluLayer::new()),
                    });
                    conv += 1;
                }
                for s in shape.iter_mut().skip(1) {
                    *s = pooled_extent(*s);
                }
                stages.push(Stage {
                    spec: LayerSpec {
                        name: format!("{prefix}.pool{}", block + 1),
                        kind: LayerKind::MaxPool3d,
                        out_shape: shape.clone(),
                    },
                    layer: Box::new(MaxPool3dLayer::new()),
                });
            }
            feat = shape.iter().product();
            stages.push(Stage {
                spec: LayerSpec {
                    name: format!("{prefix}.flatten"),
                    kind: LayerKind::Flatten,
                    out_shape: vec![feat],
                },
                layer: Box::new(FlattenLayer::new()),
            });
            branches.push(stages);
        }

        let mut head = Vec::new();
        let mut fin = feat * branches.len();
        let sizes = [scaled(width, FC_SIZES[0]), scaled(width, FC_SIZES[1]), NUM_CLASSES];
        for (i, &fout) in sizes.iter().enumerate() {
            let name = format!("fc{}", i + 1);
            let w = store.add_param(&format!("{name}.weight"), he_normal(&[fout, fin], fin, &mut rng))?;
            let bias = store.add_param(&format!("{name}.bias"), Tensor::zeros(&[fout]))?;
            let spec = |kind, suffix: &str| LayerSpec {
                name: format!("{name}{suffix}"),
                kind,
                out_shape: vec![fout],
            };
            head.push(Stage {
                spec: spec(LayerKind::Dense, ""),
                layer: Box::new(DenseLayer::new(w, bias)),
            });
            if i + 1 < sizes.len() {
                head.push(Stage {
                    spec: spec(LayerKind::Relu, ".relu"),
                    layer: Box::new(ReluLayer::new()),
                });
                head.push(Stage {
                    spec: spec(LayerKind::Dropout, ".dropout"),
                    layer: Box::new(DropoutLayer::new(opts.dropout_p)?),
                });
            }
            fin = fout;
        }

        Ok(Self {
            arch,
            width,
            input,
            dropout_p: opts.dropout_p,
            store,
            branches,
            head,
            features_per_branch: feat,
        })
    }

    pub fn arch(&self) -> ArchId {
        self.arch
    }

    pub fn width(&self) -> f64 {
        self.width
    }

    pub fn input(&self) -> InputSpec {
        self.input
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<f32> {
        &mut self.store
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_layers(&self, branch: usize) -> Vec<&LayerSpec> {
        self.branches[branch].iter().map(|s| &s.spec).collect()
    }

    pub fn head_layers(&self) -> Vec<&LayerSpec> {
        self.head.iter().map(|s| &s.spec).collect()
    }

    /// Stages of one branch followed by the head.
    pub fn layers(&self) -> Vec<&LayerSpec> {
        let mut v = self.branch_layers(0);
        v.extend(self.head_layers());
        v
    }

    pub fn count_layers(&self, kind: LayerKind) -> usize {
        self.layers().iter().filter(|s| s.kind == kind).count()
    }

    /// `[C, z, y, x]` after the last pool of a branch.
    pub fn pre_flatten_shape(&self) -> Vec<usize> {
        let b = &self.branches[0];
        b[b.len() - 2].spec.out_shape.clone()
    }

    pub fn features_per_branch(&self) -> usize {
        self.features_per_branch
    }

    pub fn count_params(&self) -> ParamCount {
        count_store_params(&self.store)
    }

    fn branch_inputs(&self, x: &Tensor<f32>) -> Result<Vec<Tensor<f32>>> {
        x.expect_ndim(5, "model input")?;
        let n = x.shape()[0];
        x.expect_shape(&self.input.batch_shape(n))?;
        if self.branches.len() == 1 {
            return Ok(vec![x.clone()]);
        }
        let plane = x.len() / (n * self.input.channels);
        let mut parts = Vec::new();
        for c in 0..self.input.channels {
            let mut data = Vec::with_capacity(n * plane);
            for i in 0..n {
                let start = (i * self.input.channels + c) * plane;
                data.extend_from_slice(&x.data()[start..start + plane]);
            }
            let mut shape = x.shape().to_vec();
            shape[1] = 1;
            parts.push(Tensor::from_vec(&shape, data)?);
        }
        Ok(parts)
    }

    /// Logits `[N, 2]`.
    pub fn forward_logits(&mut self, x: &Tensor<f32>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<f32>> {
        let inputs = self.branch_inputs(x)?;
        let n = x.shape()[0];
        let f = self.features_per_branch;
        let nb = self.branches.len();
        let mut ctx = Ctx::new(mode, rng);
        let mut feats = vec![0.0f32; n * f * nb];
        for (b, (stages, input)) in self.branches.iter_mut().zip(inputs).enumerate() {
            let mut h = input;
            for s in stages.iter_mut() {
                h = s.layer.forward(&mut self.store, &h, &mut ctx)?;
            }
            for i in 0..n {
                feats[(i * nb + b) * f..(i * nb + b + 1) * f].copy_from_slice(&h.data()[i * f..(i + 1) * f]);
            }
        }
        let mut h = Tensor::from_vec(&[n, f * nb], feats)?;
        for s in self.head.iter_mut() {
            h = s.layer.forward(&mut self.store, &h, &mut ctx)?;
        }
        Ok(h)
    }

    /// Class probabilities `[N, 2]`.
    pub fn forward(&mut self, x: &Tensor<f32>, mode: Mode, rng: &mut dyn RngCore) -> Result<Tensor<f32>> {
        softmax(&self.forward_logits(x, mode, rng)?)
    }

    /// Accumulates parameter gradients from dL/dlogits of the last
    /// train-mode forward.
    pub fn backward(&mut self, dlogits: &Tensor<f32>) -> Result<()> {
        let mut g = dlogits.clone();
        for s in self.head.iter_mut().rev() {
            g = s.layer.backward(&mut self.store, &g)?;
        }
        let n = g.shape()[0];
        let f = self.features_per_branch;
        let nb = self.branches.len();
        for (b, stages) in self.branches.iter_mut().enumerate() {
            let mut data = Vec::with_capacity(n * f);
            for i in 0..n {
                data.extend_from_slice(&g.data()[(i * nb + b) * f..(i * nb + b + 1) * f]);
            }
            let mut h = Tensor::from_vec(&[n, f], data)?;
            for s in stages.iter_mut().rev() {
                h = s.layer.backward(&mut self.store, &h)?;
            }
        }
        Ok(())
    }
}

pub fn build_single(width: f64, grid: [usize; 3], opts: BuildOptions) -> Result<Model> {
    Model::build(ArchId::Single, width, grid, opts)
}

pub fn build_fusion_a(width: f64, grid: [usize; 3], opts: BuildOptions) -> Result<Model> {
    Model::build(ArchId::FusionA, width, grid, opts)
}

pub fn build_fusion_b(width: f64, shared: bool, grid: [usize; 3], opts: BuildOptions) -> Result<Model> {
    Model::build(
        if shared { ArchId::FusionB1 } else { ArchId::FusionB2 },
        width,
        grid,
        opts,
    )
}
