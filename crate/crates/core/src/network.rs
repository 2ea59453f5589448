//! The differentiable backbone: per-modality multi-scale encoders with
//! soft structure-prediction heads, the structure-preserving merge, and a
//! decoder that reconstructs the fused luminance plane.
//!
//! Architecture, per level k (channels double, spatial dims halve):
//!   encoder: stem/transition 3x3 conv + ReLU, then residual blocks
//!            (x + conv3x3, ReLU) and a 2x2 average-pool downsample
//!   head:    1x1 conv + sigmoid projecting features to a soft map
//!   decoder: mirrored nearest-neighbour upsample + 3x3 conv, with the
//!            fused pyramid level concatenated as a skip connection;
//!            final 3x3 conv + sigmoid bounds the output to [0,1]

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::fmath;
use crate::imagedata::ImagePair;
use crate::plane::Plane;
use crate::spf;
use crate::structmap::{structure_pyramid_gt, Polarity, StructurePyramid};
use crate::tensor::Tensor;

/// How enhanced modality features are merged per scale.
#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MergeMode {
    /// Parameter-free elementwise sum.
    #[default]
    Sum,
    /// Channel concatenation followed by a learned 1x1 convolution.
    Learned1x1,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum Modality {
    Ir,
    Vi,
}

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub n_levels: usize,
    pub base_channels: usize,
    pub residual_blocks_per_level: usize,
    pub seed: u64,
    pub polarity: Polarity,
    pub merge: MergeMode,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            n_levels: 3,
            base_channels: 16,
            residual_blocks_per_level: 2,
            seed: 0,
            polarity: Polarity::EdgePositive,
            merge: MergeMode::Sum,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_levels < 1 {
            return Err(Error::InvalidConfig {
                what: String::from("n_levels must be >= 1"),
            });
        }
        if self.base_channels < 1 {
            return Err(Error::InvalidConfig {
                what: String::from("base_channels must be >= 1"),
            });
        }
        Ok(())
    }

    /// Channel width at 1-based level `k`.
    pub fn channels_at(&self, k: usize) -> usize {
        self.base_channels << (k - 1)
    }

    /// Spatial dimensions must be divisible by this for the encoder.
    pub fn divisor(&self) -> usize {
        1 << (self.n_levels - 1)
    }
}

/// Named parameter storage; order is canonical and stable for a given
/// config, which optimizer state and checkpoints rely on.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, Tensor)] {
        &self.entries
    }

    pub fn name(&self, i: usize) -> &str {
        &self.entries[i].0
    }

    pub fn value(&self, i: usize) -> &Tensor {
        &self.entries[i].1
    }

    pub fn value_mut(&mut self, i: usize) -> &mut Tensor {
        &mut self.entries[i].1
    }

    pub fn total_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }
}

#[derive(Copy, Clone, Debug)]
struct ConvIdx {
    w: usize,
    b: usize,
}

#[derive(Clone, Debug)]
struct LevelLayout {
    transition: Option<ConvIdx>,
    res: Vec<ConvIdx>,
    head: ConvIdx,
}

#[derive(Clone, Debug)]
struct StreamLayout {
    stem: ConvIdx,
    levels: Vec<LevelLayout>,
}

#[derive(Clone, Debug)]
struct UpLayout {
    conv: ConvIdx,
    res: ConvIdx,
}

#[derive(Clone, Debug)]
struct DecoderLayout {
    bottleneck: ConvIdx,
    ups: Vec<UpLayout>,
    out: ConvIdx,
}

#[derive(Clone, Debug)]
struct Layout {
    enc_ir: StreamLayout,
    enc_vi: StreamLayout,
    merge: Vec<ConvIdx>,
    dec: DecoderLayout,
}

struct SpecBuilder {
    specs: Vec<(String, Vec<usize>)>,
}

impl SpecBuilder {
    fn conv(&mut self, name: &str, cout: usize, cin: usize, k: usize) -> ConvIdx {
        let w = self.specs.len();
        self.specs.push((format!("{name}.w"), vec![cout, cin, k, k]));
        let b = self.specs.len();
        self.specs.push((format!("{name}.b"), vec![cout]));
        ConvIdx { w, b }
    }
}

fn build_layout(cfg: &ModelConfig) -> (Layout, Vec<(String, Vec<usize>)>) {
    let mut sb = SpecBuilder { specs: Vec::new() };
    let n = cfg.n_levels;

    let mut streams = Vec::with_capacity(2);
    for prefix in ["enc_ir", "enc_vi"] {
        let stem = sb.conv(&format!("{prefix}.stem"), cfg.channels_at(1), 1, 3);
        let mut levels = Vec::with_capacity(n);
        for k in 1..=n {
            let c = cfg.channels_at(k);
            let transition = (k > 1)
                .then(|| sb.conv(&format!("{prefix}.l{k}.trans"), c, cfg.channels_at(k - 1), 3));
            let res = (1..=cfg.residual_blocks_per_level)
                .map(|r| sb.conv(&format!("{prefix}.l{k}.res{r}"), c, c, 3))
                .collect();
            let head = sb.conv(&format!("{prefix}.l{k}.head"), 1, c, 1);
            levels.push(LevelLayout {
                transition,
                res,
                head,
            });
        }
        streams.push(StreamLayout { stem, levels });
    }
    let enc_vi = streams.pop().expect("two streams");
    let enc_ir = streams.pop().expect("two streams");

    let merge = match cfg.merge {
        MergeMode::Sum => Vec::new(),
        MergeMode::Learned1x1 => (1..=n)
            .map(|k| {
                let c = cfg.channels_at(k);
                sb.conv(&format!("merge.l{k}"), c, 2 * c, 1)
            })
            .collect(),
    };

    let cn = cfg.channels_at(n);
    let bottleneck = sb.conv("dec.bottleneck", cn, cn, 3);
    let ups = (1..n)
        .rev()
        .map(|k| {
            // stage consuming level k+1 output and the level-k skip
            let c = cfg.channels_at(k);
            let conv = sb.conv(&format!("dec.up{k}.conv"), c, cfg.channels_at(k + 1) + c, 3);
            let res = sb.conv(&format!("dec.up{k}.res"), c, c, 3);
            UpLayout { conv, res }
        })
        .collect();
    let out = sb.conv("dec.out", 1, cfg.channels_at(1), 3);

    (
        Layout {
            enc_ir,
            enc_vi,
            merge,
            dec: DecoderLayout {
                bottleneck,
                ups,
                out,
            },
        },
        sb.specs,
    )
}

/// Multi-scale feature tensors produced by one encoder stream.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    levels: Vec<Tensor>,
}

impl FeaturePyramid {
    pub fn levels(&self) -> &[Tensor] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Tensor {
        &self.levels[k]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Per-scale soft structure maps in [0,1] (pre-binarization head output).
#[derive(Clone, Debug)]
pub struct SoftStructurePrediction {
    levels: Vec<Plane>,
}

impl SoftStructurePrediction {
    pub fn levels(&self) -> &[Plane] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Plane {
        &self.levels[k]
    }

    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }
}

/// Result of the full fusion forward pass.
#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub fused_y: Plane,
    pub soft_ir: Option<SoftStructurePrediction>,
    pub soft_vi: Option<SoftStructurePrediction>,
}

/// Node handles for a fusion graph built on a tape.
pub struct FusionGraph {
    pub param_ids: Vec<NodeId>,
    pub fused: NodeId,
    pub soft_ir: Vec<NodeId>,
    pub soft_vi: Vec<NodeId>,
}

/// Node handles for an encoder-only (structure self-supervision) graph.
pub struct StructureGraph {
    pub param_ids: Vec<NodeId>,
    pub soft_ir: Vec<NodeId>,
    pub soft_vi: Vec<NodeId>,
}

/// The fusion model: a config plus its parameter set.
#[derive(Clone, Debug)]
pub struct Model {
    cfg: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

impl Model {
    /// Initializes parameters: Kaiming-uniform fan-in for conv weights,
    /// zeros for biases, from a seedable RNG consumed in canonical order.
    pub fn init(cfg: ModelConfig) -> Result<Model> {
        cfg.validate()?;
        let (layout, specs) = build_layout(&cfg);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut entries = Vec::with_capacity(specs.len());
        for (name, shape) in specs {
            let tensor = if name.ends_with(".w") {
                let fan_in: usize = shape[1..].iter().product();
                let bound = fmath::sqrt(6.0 / fan_in as f64);
                let n: usize = shape.iter().product();
                let data = (0..n)
                    .map(|_| {
                        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
                        (2.0 * u - 1.0) * bound
                    })
                    .collect();
                Tensor::new(shape, data)?
            } else {
                Tensor::zeros(&shape)
            };
            entries.push((name, tensor));
        }
        Ok(Model {
            cfg,
            params: ParamSet { entries },
            layout,
        })
    }

    /// Rebuilds a model from a config and previously stored parameters,
    /// validating names and shapes against the config-derived layout.
    pub fn from_params(cfg: ModelConfig, entries: Vec<(String, Tensor)>) -> Result<Model> {
        cfg.validate()?;
        let (layout, specs) = build_layout(&cfg);
        if specs.len() != entries.len() {
            return Err(Error::InvalidConfig {
                what: format!(
                    "parameter count mismatch: expected {}, got {}",
                    specs.len(),
                    entries.len()
                ),
            });
        }
        for ((name, shape), (got_name, got)) in specs.iter().zip(entries.iter()) {
            if name != got_name || shape[..] != *got.shape() {
                return Err(Error::InvalidConfig {
                    what: format!("parameter {got_name} does not match expected {name}"),
                });
            }
        }
        Ok(Model {
            cfg,
            params: ParamSet { entries },
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    fn check_divisible(&self, p: &Plane) -> Result<()> {
        let d = self.cfg.divisor();
        if p.h() % d != 0 || p.w() % d != 0 || p.h() == 0 || p.w() == 0 {
            return Err(Error::ShapeMismatch {
                context: "spatial dimensions must be divisible by 2^(n_levels-1)",
            });
        }
        Ok(())
    }

    /// Pushes every parameter onto the tape as a leaf, in canonical order.
    pub fn push_params(&self, tape: &mut Tape, needs_grad: bool) -> Vec<NodeId> {
        self.params
            .entries
            .iter()
            .map(|(_, t)| tape.leaf(t.clone(), needs_grad))
            .collect()
    }

    fn res_block(
        &self,
        tape: &mut Tape,
        pids: &[NodeId],
        x: NodeId,
        conv: ConvIdx,
    ) -> Result<NodeId> {
        let c = tape.conv2d(x, pids[conv.w], pids[conv.b])?;
        let s = tape.add(x, c)?;
        Ok(tape.relu(s))
    }

    fn encode_on_tape(
        &self,
        tape: &mut Tape,
        pids: &[NodeId],
        img: NodeId,
        stream: &StreamLayout,
        with_heads: bool,
    ) -> Result<(Vec<NodeId>, Vec<NodeId>)> {
        let mut feats = Vec::with_capacity(self.cfg.n_levels);
        let mut softs = Vec::new();
        let stem = tape.conv2d(img, pids[stream.stem.w], pids[stream.stem.b])?;
        let mut x = tape.relu(stem);
        for (k, level) in stream.levels.iter().enumerate() {
            if let Some(trans) = level.transition {
                let pooled = tape.avg_pool2(x)?;
                let t = tape.conv2d(pooled, pids[trans.w], pids[trans.b])?;
                x = tape.relu(t);
            }
            for conv in &level.res {
                x = self.res_block(tape, pids, x, *conv)?;
            }
            feats.push(x);
            if with_heads {
                let raw = tape.conv2d(x, pids[level.head.w], pids[level.head.b])?;
                let soft = tape.sigmoid(raw);
                let shape = tape.value(soft).shape().to_vec();
                let soft2d = tape.reshape(soft, vec![shape[1], shape[2]])?;
                softs.push(soft2d);
            }
            let _ = k;
        }
        Ok((feats, softs))
    }

    fn decode_on_tape(&self, tape: &mut Tape, pids: &[NodeId], fused: &[NodeId]) -> Result<NodeId> {
        let n = self.cfg.n_levels;
        if fused.len() != n {
            return Err(Error::ShapeMismatch {
                context: "fused pyramid has wrong level count",
            });
        }
        let dec = &self.layout.dec;
        let mut x = self.res_block(tape, pids, fused[n - 1], dec.bottleneck)?;
        for (stage, up) in dec.ups.iter().enumerate() {
            let skip_level = n - 2 - stage;
            let upped = tape.upsample2(x)?;
            let cat = tape.concat_c(upped, fused[skip_level])?;
            let conv = tape.conv2d(cat, pids[up.conv.w], pids[up.conv.b])?;
            let act = tape.relu(conv);
            x = self.res_block(tape, pids, act, up.res)?;
        }
        let raw = tape.conv2d(x, pids[dec.out.w], pids[dec.out.b])?;
        let bounded = tape.sigmoid(raw);
        let shape = tape.value(bounded).shape().to_vec();
        tape.reshape(bounded, vec![shape[1], shape[2]])
    }

    fn merge_levels_on_tape(
        &self,
        tape: &mut Tape,
        pids: &[NodeId],
        f_ir: &[NodeId],
        f_vi: &[NodeId],
        gt_ir: &StructurePyramid,
        gt_vi: &StructurePyramid,
        spf_enabled: bool,
    ) -> Result<Vec<NodeId>> {
        let n = self.cfg.n_levels;
        let mut fused = Vec::with_capacity(n);
        for k in 0..n {
            if !spf_enabled {
                fused.push(tape.add(f_ir[k], f_vi[k])?);
                continue;
            }
            let s_ir = gt_ir.level(k);
            let s_vi = gt_vi.level(k);
            let level = match self.cfg.merge {
                MergeMode::Sum => spf::fuse_level_on_tape(tape, f_ir[k], f_vi[k], s_ir, s_vi)?,
                MergeMode::Learned1x1 => {
                    let (e_ir, e_vi) =
                        spf::enhance_on_tape(tape, f_ir[k], f_vi[k], s_ir, s_vi)?;
                    let cat = tape.concat_c(e_ir, e_vi)?;
                    let m = self.layout.merge[k];
                    tape.conv2d(cat, pids[m.w], pids[m.b])?
                }
            };
            fused.push(level);
        }
        Ok(fused)
    }

    /// Builds the full fusion graph on a tape. Ground-truth structure
    /// pyramids double as fusion masks and (via the returned soft nodes)
    /// self-supervision targets.
    #[allow(clippy::too_many_arguments)]
    pub fn build_fusion_graph(
        &self,
        tape: &mut Tape,
        ir_y: &Plane,
        vi_y: &Plane,
        gt_ir: &StructurePyramid,
        gt_vi: &StructurePyramid,
        spf_enabled: bool,
        sfe_heads_enabled: bool,
        params_need_grad: bool,
    ) -> Result<FusionGraph> {
        self.check_divisible(ir_y)?;
        if !ir_y.same_shape(vi_y) {
            return Err(Error::ShapeMismatch {
                context: "modality planes differ in shape",
            });
        }
        let pids = self.push_params(tape, params_need_grad);
        let ir_leaf = tape.leaf_plane(ir_y, false);
        let vi_leaf = tape.leaf_plane(vi_y, false);
        let ir3 = tape.reshape(ir_leaf, vec![1, ir_y.h(), ir_y.w()])?;
        let vi3 = tape.reshape(vi_leaf, vec![1, vi_y.h(), vi_y.w()])?;

        let (f_ir, soft_ir) =
            self.encode_on_tape(tape, &pids, ir3, &self.layout.enc_ir, sfe_heads_enabled)?;
        let (f_vi, soft_vi) =
            self.encode_on_tape(tape, &pids, vi3, &self.layout.enc_vi, sfe_heads_enabled)?;
        let fused_levels =
            self.merge_levels_on_tape(tape, &pids, &f_ir, &f_vi, gt_ir, gt_vi, spf_enabled)?;
        let fused = self.decode_on_tape(tape, &pids, &fused_levels)?;
        Ok(FusionGraph {
            param_ids: pids,
            fused,
            soft_ir,
            soft_vi,
        })
    }

    /// Builds the encoder+heads graph used for structure pretraining.
    pub fn build_structure_graph(
        &self,
        tape: &mut Tape,
        ir_y: &Plane,
        vi_y: &Plane,
        params_need_grad: bool,
    ) -> Result<StructureGraph> {
        self.check_divisible(ir_y)?;
        if !ir_y.same_shape(vi_y) {
            return Err(Error::ShapeMismatch {
                context: "modality planes differ in shape",
            });
        }
        let pids = self.push_params(tape, params_need_grad);
        let ir_leaf = tape.leaf_plane(ir_y, false);
        let vi_leaf = tape.leaf_plane(vi_y, false);
        let ir3 = tape.reshape(ir_leaf, vec![1, ir_y.h(), ir_y.w()])?;
        let vi3 = tape.reshape(vi_leaf, vec![1, vi_y.h(), vi_y.w()])?;
        let (_, soft_ir) = self.encode_on_tape(tape, &pids, ir3, &self.layout.enc_ir, true)?;
        let (_, soft_vi) = self.encode_on_tape(tape, &pids, vi3, &self.layout.enc_vi, true)?;
        Ok(StructureGraph {
            param_ids: pids,
            soft_ir,
            soft_vi,
        })
    }

    /// Encodes one modality plane into its feature pyramid and soft
    /// structure predictions.
    pub fn encode(
        &self,
        img: &Plane,
        modality: Modality,
    ) -> Result<(FeaturePyramid, SoftStructurePrediction)> {
        self.check_divisible(img)?;
        let stream = match modality {
            Modality::Ir => &self.layout.enc_ir,
            Modality::Vi => &self.layout.enc_vi,
        };
        let mut tape = Tape::new();
        let pids = self.push_params(&mut tape, false);
        let leaf = tape.leaf_plane(img, false);
        let x3 = tape.reshape(leaf, vec![1, img.h(), img.w()])?;
        let (feats, softs) = self.encode_on_tape(&mut tape, &pids, x3, stream, true)?;
        let levels: Vec<Tensor> = feats.iter().map(|&id| tape.value(id).clone()).collect();
        for level in &levels {
            if !level.all_finite() {
                return Err(Error::NonFinite {
                    what: String::from("encoder feature pyramid"),
                });
            }
        }
        let soft_levels: Vec<Plane> = softs
            .iter()
            .map(|&id| tape.value(id).to_plane())
            .collect::<Result<_>>()?;
        Ok((
            FeaturePyramid { levels },
            SoftStructurePrediction {
                levels: soft_levels,
            },
        ))
    }

    /// Decodes a fused feature pyramid into a luminance plane in [0,1].
    pub fn decode(&self, fused: &FeaturePyramid) -> Result<Plane> {
        let mut tape = Tape::new();
        let pids = self.push_params(&mut tape, false);
        let level_ids: Vec<NodeId> = fused
            .levels
            .iter()
            .map(|t| tape.leaf(t.clone(), false))
            .collect();
        let out = self.decode_on_tape(&mut tape, &pids, &level_ids)?;
        let plane = tape.value(out).to_plane()?;
        if !plane.all_finite() {
            return Err(Error::NonFinite {
                what: String::from("decoder output"),
            });
        }
        Ok(plane)
    }

    /// Full fusion forward pass on an image pair. Ground-truth structure
    /// pyramids are computed internally with the configured polarity.
    pub fn forward_fusion(
        &self,
        pair: &ImagePair,
        spf_enabled: bool,
        sfe_heads_enabled: bool,
    ) -> Result<FusionOutput> {
        let gt_ir = structure_pyramid_gt(&pair.ir_y, self.cfg.n_levels, self.cfg.polarity)?;
        let gt_vi = structure_pyramid_gt(&pair.vi_y, self.cfg.n_levels, self.cfg.polarity)?;
        let mut tape = Tape::new();
        let graph = self.build_fusion_graph(
            &mut tape,
            &pair.ir_y,
            &pair.vi_y,
            &gt_ir,
            &gt_vi,
            spf_enabled,
            sfe_heads_enabled,
            false,
        )?;
        let fused_y = tape.value(graph.fused).to_plane()?;
        if !fused_y.all_finite() {
            return Err(Error::NonFinite {
                what: String::from("fused output"),
            });
        }
        let collect = |ids: &[NodeId]| -> Result<SoftStructurePrediction> {
            Ok(SoftStructurePrediction {
                levels: ids
                    .iter()
                    .map(|&id| tape.value(id).to_plane())
                    .collect::<Result<_>>()?,
            })
        };
        let (soft_ir, soft_vi) = if sfe_heads_enabled {
            (Some(collect(&graph.soft_ir)?), Some(collect(&graph.soft_vi)?))
        } else {
            (None, None)
        };
        Ok(FusionOutput {
            fused_y,
            soft_ir,
            soft_vi,
        })
    }
}
