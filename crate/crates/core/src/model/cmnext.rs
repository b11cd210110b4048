use serde::Serialize;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::nn::layers::Norm;
use crate::nn::{archive, Bound, FusionPair, MhsaBlock, MlpDecoder, ParamBuilder, ParamStore, PatchEmbed, PpxBlock, SelfQueryHub};
use crate::tensor::Tensor;

/// Shared accompanying branch: one patch embedding per stage applied to every
/// secondary modality, the per-modality hub, the PPX stack and the fusion pair.
#[derive(Debug, Clone)]
pub struct SecondaryBranch {
    pub embed: Vec<PatchEmbed>,
    pub hubs: Vec<SelfQueryHub>,
    pub ppx: Vec<Vec<PpxBlock>>,
    pub fusion: Vec<FusionPair>,
}

/// Parameter layout of the encoder-decoder, independent of parameter values.
#[derive(Debug, Clone)]
pub struct Architecture {
    pub rgb_embed: Vec<PatchEmbed>,
    pub rgb_blocks: Vec<Vec<MhsaBlock>>,
    pub rgb_norms: Vec<Norm>,
    pub secondary: Option<SecondaryBranch>,
    pub decoder: MlpDecoder,
}

impl Architecture {
    pub fn declare(cfg: &ModelConfig, pb: &mut ParamBuilder) -> Result<Self> {
        cfg.validate()?;
        let ch = cfg.stage_channels;
        let mut rgb_embed = Vec::new();
        let mut rgb_blocks = Vec::new();
        let mut rgb_norms = Vec::new();
        for l in 0..4 {
            let in_c = if l == 0 { 3 } else { ch[l - 1] };
            let s = l + 1;
            rgb_embed.push(PatchEmbed::declare(pb, &format!("rgb.stage{s}.embed"), l, in_c, ch[l]));
            let blocks = (0..cfg.stage_depths[l])
                .map(|i| {
                    MhsaBlock::declare(
                        pb,
                        &format!("rgb.stage{s}.block{i}"),
                        ch[l],
                        cfg.heads[l],
                        cfg.sr_ratios[l],
                        cfg.mlp_ratio,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            rgb_blocks.push(blocks);
            rgb_norms.push(Norm::declare(pb, &format!("rgb.stage{s}.norm"), ch[l]));
        }

        let m = cfg.secondary_count();
        let secondary = if m == 0 {
            None
        } else {
            let mut br = SecondaryBranch {
                embed: Vec::new(),
                hubs: Vec::new(),
                ppx: Vec::new(),
                fusion: Vec::new(),
            };
            for l in 0..4 {
                let in_c = if l == 0 { 3 } else { ch[l - 1] };
                let s = l + 1;
                br.embed.push(PatchEmbed::declare(pb, &format!("aux.stage{s}.embed"), l, in_c, ch[l]));
                br.hubs.push(SelfQueryHub::declare(pb, &format!("stage{s}.hub"), ch[l], m));
                let blocks = (0..cfg.stage_depths[l])
                    .map(|i| PpxBlock::declare(pb, &format!("aux.stage{s}.ppx{i}"), ch[l], &cfg.ppx))
                    .collect::<Result<Vec<_>>>()?;
                br.ppx.push(blocks);
                br.fusion.push(FusionPair::declare(pb, &format!("stage{s}.fusion"), ch[l]));
            }
            Some(br)
        };
        let decoder = MlpDecoder::declare(pb, "decoder", &ch, cfg.decoder_dim, cfg.num_classes);
        Ok(Self {
            rgb_embed,
            rgb_blocks,
            rgb_norms,
            secondary,
            decoder,
        })
    }

    /// Analytic multiply-accumulate count of one forward pass at `h x w`.
    pub fn macs(&self, h: usize, w: usize, modalities: usize) -> u64 {
        let mut total = 0u64;
        let (mut ih, mut iw) = (h, w);
        for l in 0..4 {
            let emb = &self.rgb_embed[l];
            total += emb.macs(ih, iw);
            let (sh, sw) = (h / (4 << l), w / (4 << l));
            total += self.rgb_blocks[l].iter().map(|b| b.macs(sh, sw)).sum::<u64>();
            if let Some(br) = &self.secondary {
                let secondary = modalities.saturating_sub(1) as u64;
                total += secondary * br.embed[l].macs(ih, iw);
                total += br.hubs[l].macs(sh, sw);
                total += br.ppx[l].iter().map(|b| b.macs(sh, sw)).sum::<u64>();
                total += br.fusion[l].macs(sh, sw);
            }
            ih = sh;
            iw = sw;
        }
        total + self.decoder.macs(h / 4, w / 4)
    }
}

/// Values recorded at one encoder stage.
#[derive(Debug, Clone)]
pub struct StageTrace {
    pub rgb: Var,
    /// Embedded per-modality features before the hub.
    pub secondary: Vec<Var>,
    pub fused: Var,
    /// Inputs handed to the next stage (feature + fused); empty after the last stage.
    pub restored_rgb: Option<Var>,
    pub restored_secondary: Vec<Var>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub logits: Var,
    pub stages: Vec<StageTrace>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub total: usize,
    pub per_modality_increment: usize,
}

/// Frames in `[0, 1]` are standardised as `(x - INPUT_MEAN) / INPUT_STD` before the first embedding.
pub const INPUT_MEAN: f64 = 0.5;
pub const INPUT_STD: f64 = 0.25;

fn standardise(g: &mut Graph, x: Var) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    let n = shape.iter().product();
    let scaled = g.scale(x, 1.0 / INPUT_STD);
    let shift = g.constant(&shape, vec![-INPUT_MEAN / INPUT_STD; n])?;
    g.add(scaled, shift)
}

/// Dual-branch encoder with hub-and-fuse stages and an MLP decoder.
#[derive(Debug, Clone)]
pub struct CmNext {
    config: ModelConfig,
    arch: Architecture,
    params: ParamStore,
}

impl CmNext {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut pb = ParamBuilder::new();
        let arch = Architecture::declare(&config, &mut pb)?;
        Ok(Self {
            config,
            arch,
            params: pb.build(seed),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn bind(&self, g: &mut Graph) -> Bound {
        self.params.bind(g)
    }

    pub fn forward(&self, g: &mut Graph, b: &Bound, frames: &[Var]) -> Result<Var> {
        Ok(self.forward_traced(g, b, frames)?.logits)
    }

    pub fn forward_traced(&self, g: &mut Graph, b: &Bound, frames: &[Var]) -> Result<ForwardTrace> {
        let expected = self.config.modalities.len();
        if frames.len() != expected {
            return Err(Error::Usage(format!(
                "model takes {expected} frames ({}), got {}",
                self.config.modalities.join(", "),
                frames.len()
            )));
        }
        let s0 = g.shape(frames[0]).to_vec();
        for (i, &f) in frames.iter().enumerate() {
            let s = g.shape(f);
            if s.len() != 3 || s[0] != 3 || s[1..] != s0[1..] {
                return Err(Error::dim(
                    format!("frame{i}"),
                    format!("expected 3 x H x W matching {s0:?}, got {s:?}"),
                ));
            }
        }
        let (h, w) = (s0[1], s0[2]);
        if h % 32 != 0 || w % 32 != 0 {
            return Err(Error::dim("spatial", format!("input {h}x{w} is not divisible by 32")));
        }

        let inputs = frames.iter().map(|&f| standardise(g, f)).collect::<Result<Vec<_>>>()?;
        let mut x_rgb = inputs[0];
        let mut x_aux: Vec<Var> = inputs[1..].to_vec();
        let mut stages = Vec::with_capacity(4);
        for l in 0..4 {
            let mut f_rgb = self.arch.rgb_embed[l].forward(g, b, x_rgb)?;
            for blk in &self.arch.rgb_blocks[l] {
                f_rgb = blk.forward(g, b, f_rgb)?;
            }
            f_rgb = self.arch.rgb_norms[l].forward_map(g, b, f_rgb)?;

            let trace = match &self.arch.secondary {
                None => {
                    x_rgb = f_rgb;
                    StageTrace {
                        rgb: f_rgb,
                        secondary: Vec::new(),
                        fused: f_rgb,
                        restored_rgb: None,
                        restored_secondary: Vec::new(),
                    }
                }
                Some(br) => {
                    let feats = x_aux
                        .iter()
                        .map(|&x| br.embed[l].forward(g, b, x))
                        .collect::<Result<Vec<_>>>()?;
                    let mut fw = br.hubs[l].forward(g, b, &feats)?;
                    for blk in &br.ppx[l] {
                        fw = blk.forward(g, b, fw)?;
                    }
                    let fused = br.fusion[l].forward(g, b, f_rgb, fw)?.fused;
                    let mut restored_rgb = None;
                    let mut restored_secondary = Vec::new();
                    if l < 3 {
                        x_rgb = g.add(f_rgb, fused)?;
                        restored_rgb = Some(x_rgb);
                        x_aux = feats.iter().map(|&f| g.add(f, fused)).collect::<Result<Vec<_>>>()?;
                        restored_secondary = x_aux.clone();
                    }
                    StageTrace {
                        rgb: f_rgb,
                        secondary: feats,
                        fused,
                        restored_rgb,
                        restored_secondary,
                    }
                }
            };
            stages.push(trace);
        }
        let fused: Vec<Var> = stages.iter().map(|s| s.fused).collect();
        let logits = self.arch.decoder.forward(g, b, &fused)?;
        Ok(ForwardTrace { logits, stages })
    }

    /// Forward pass on plain tensors; returns `num_classes x H x W` logits.
    pub fn predict(&self, frames: &[Tensor]) -> Result<Tensor> {
        let mut g = Graph::new();
        let b = self.bind(&mut g);
        let vars: Vec<Var> = frames.iter().map(|f| g.leaf(f)).collect();
        let logits = self.forward(&mut g, &b, &vars)?;
        Ok(g.tensor(logits))
    }

    pub fn count_params(&self) -> Result<ParamCount> {
        count_params(&self.config)
    }

    pub fn to_nnz(&self) -> Vec<u8> {
        archive::encode(&self.params)
    }

    pub fn from_nnz(bytes: &[u8], config: ModelConfig) -> Result<Self> {
        let mut pb = ParamBuilder::new();
        let arch = Architecture::declare(&config, &mut pb)?;
        let params = archive::load(bytes, pb.specs())?;
        Ok(Self { config, arch, params })
    }
}

fn layout_count(cfg: &ModelConfig) -> Result<usize> {
    let mut pb = ParamBuilder::new();
    Architecture::declare(cfg, &mut pb)?;
    Ok(pb.count())
}

/// Scalar parameter total and the increment from appending one more secondary modality.
pub fn count_params(cfg: &ModelConfig) -> Result<ParamCount> {
    let total = layout_count(cfg)?;
    let next = layout_count(&cfg.with_extra_modality())?;
    Ok(ParamCount {
        total,
        per_modality_increment: next - total,
    })
}

/// Analytic multiply-accumulates of a forward pass at `h x w`.
pub fn forward_macs(cfg: &ModelConfig, h: usize, w: usize) -> Result<u64> {
    let mut pb = ParamBuilder::new();
    let arch = Architecture::declare(cfg, &mut pb)?;
    Ok(arch.macs(h, w, cfg.modalities.len()))
}
