use super::{nearest_point_difference, Architecture, NetConfig, NetError, PairBatch};
use crate::autodiff::{KernelMap, Tensor};
use crate::kpconv::{Context, KpConvBlock, ParamId, ParamStore, Unary};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    KpConv,
    StridedKpConv,
    Unary,
    NearestUpsample,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub in_ch: usize,
    pub out_ch: usize,
    pub radius: Option<f64>,
    pub stage: usize,
}

/// Feature streams that meet in a nearest-point difference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    /// Mono-date encoder on PC1.
    Pc1,
    /// Mono-date encoder on PC2.
    Pc2,
    /// First shared layer only.
    FirstLayer,
    /// Second encoder of the encoder-fusion network.
    Fused,
}

/// `minuend (PC2 points) - subtrahend (PC1 points)` at a given stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionEdge {
    pub minuend: (Stream, usize),
    pub subtrahend: (Stream, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderStage {
    pub conv: KpConvBlock,
    pub unary: Unary,
}

impl EncoderStage {
    fn forward(&self, ctx: &mut Context, x: Tensor, map: &Arc<KernelMap>) -> Result<Tensor, NetError> {
        let h = self.conv.forward(ctx, x, map)?;
        Ok(self.unary.forward(ctx, h)?)
    }

    fn param_ids(&self) -> Vec<ParamId> {
        let mut ids = vec![self.conv.weight, self.conv.norm.gamma, self.conv.norm.beta, self.unary.weight, self.unary.bias];
        if let Some(n) = &self.unary.norm {
            ids.extend([n.gamma, n.beta]);
        }
        ids
    }
}

/// Stack of `(strided) kpconv + unary` stages.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoder {
    pub stages: Vec<EncoderStage>,
}

struct Builder<'a> {
    store: ParamStore,
    rng: ChaCha8Rng,
    layers: Vec<LayerSpec>,
    cfg: &'a NetConfig,
}

impl Builder<'_> {
    fn stage(&mut self, name: &str, i: usize, cin: usize) -> EncoderStage {
        let plan = &self.cfg.plan;
        let w = plan.widths[i];
        let conv = KpConvBlock::new(&mut self.store, &format!("{name}.conv"), plan.kernel_points, cin, w, &mut self.rng);
        let unary = Unary::new(&mut self.store, &format!("{name}.unary"), w, w, false, &mut self.rng);
        let (kind, radius) =
            if i == 0 { (LayerKind::KpConv, plan.conv_radius(0)) } else { (LayerKind::StridedKpConv, plan.conv_radius(i - 1)) };
        self.layers.push(LayerSpec { name: format!("{name}.conv"), kind, in_ch: cin, out_ch: w, radius: Some(radius), stage: i });
        self.push_unary(&format!("{name}.unary"), &unary, i);
        EncoderStage { conv, unary }
    }

    fn unary(&mut self, name: &str, stage: usize, cin: usize, cout: usize, head: bool) -> Unary {
        let u = Unary::new(&mut self.store, name, cin, cout, head, &mut self.rng);
        self.push_unary(name, &u, stage);
        u
    }

    fn push_unary(&mut self, name: &str, u: &Unary, stage: usize) {
        self.layers.push(LayerSpec { name: name.into(), kind: LayerKind::Unary, in_ch: u.in_ch, out_ch: u.out_ch, radius: None, stage });
    }

    fn encoder(&mut self, name: &str, cin: usize) -> Encoder {
        let mut stages = Vec::new();
        let mut c = cin;
        for i in 0..self.cfg.plan.stages() {
            stages.push(self.stage(&format!("{name}.s{i}"), i, c));
            c = self.cfg.plan.widths[i];
        }
        Encoder { stages }
    }

    fn projections(&mut self, name: &str, from: usize) -> Vec<Option<Unary>> {
        (0..self.cfg.plan.stages())
            .map(|i| {
                let w = self.cfg.plan.widths[i];
                (i >= from).then(|| self.unary(&format!("{name}.s{i}"), i, 2 * w, w, false))
            })
            .collect()
    }

    fn decoder(&mut self) -> Decoder {
        let widths = self.cfg.plan.widths.clone();
        let s = widths.len();
        let mut up: Vec<Option<Unary>> = vec![None; s];
        for i in (0..s.saturating_sub(1)).rev() {
            self.layers.push(LayerSpec {
                name: format!("dec.up{i}"),
                kind: LayerKind::NearestUpsample,
                in_ch: widths[i + 1],
                out_ch: widths[i + 1],
                radius: None,
                stage: i,
            });
            up[i] = Some(self.unary(&format!("dec.s{i}"), i, widths[i + 1] + widths[i], widths[i], false));
        }
        let head1 = self.unary("head.hidden", 0, widths[0], widths[0], false);
        let head = self.unary("head.out", 0, widths[0], self.cfg.n_classes, true);
        Decoder { up: up.into_iter().flatten().collect(), head1, head }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Decoder {
    /// `up[i]` fuses the upsampled stage `i + 1` output with the stage-`i` skip.
    up: Vec<Unary>,
    head1: Unary,
    head: Unary,
}

impl Decoder {
    fn forward(&self, ctx: &mut Context, skips: &[Tensor], batch: &PairBatch) -> Result<Tensor, NetError> {
        let mut x = *skips.last().ok_or(NetError::EmptyBatch)?;
        for i in (0..skips.len() - 1).rev() {
            let up = ctx.tape.gather_rows(x, batch.upsample[i].clone())?;
            let cat = ctx.tape.concat_cols(up, skips[i])?;
            x = self.up[i].forward(ctx, cat)?;
        }
        let h = self.head1.forward(ctx, x)?;
        let logits = self.head.forward(ctx, h)?;
        Ok(ctx.tape.log_softmax(logits))
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Body {
    Siamese { enc1: Encoder, enc2: Encoder },
    OneConvFusion { enc: Encoder },
    Triplet { enc1: Encoder, enc2: Encoder, change: Encoder, proj: Vec<Option<Unary>> },
    EncoderFusion { enc1: Encoder, enc2: Encoder, proj: Vec<Option<Unary>> },
}

/// A built change-segmentation network with its parameter registry.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkGraph {
    pub config: NetConfig,
    pub store: ParamStore,
    pub layers: Vec<LayerSpec>,
    pub fusion_edges: Vec<FusionEdge>,
    body: Body,
    decoder: Decoder,
}

fn run_encoder(enc: &Encoder, ctx: &mut Context, x: Tensor, maps: &[Arc<KernelMap>]) -> Result<Vec<Tensor>, NetError> {
    let mut out = Vec::with_capacity(enc.stages.len());
    let mut h = x;
    for (stage, map) in enc.stages.iter().zip(maps) {
        h = stage.forward(ctx, h, map)?;
        out.push(h);
    }
    Ok(out)
}

fn difference(ctx: &mut Context, batch: &PairBatch, stage: usize, f1: Tensor, f2: Tensor) -> Result<Tensor, NetError> {
    let d = nearest_point_difference(ctx.tape, f1, f2, &batch.cross[stage])?;
    ctx.record_difference(stage, d);
    Ok(d)
}

fn fuse(ctx: &mut Context, proj: &Option<Unary>, a: Tensor, b: Tensor) -> Result<Tensor, NetError> {
    let cat = ctx.tape.concat_cols(a, b)?;
    Ok(proj.as_ref().expect("projection for fused stage").forward(ctx, cat)?)
}

impl NetworkGraph {
    pub fn build(config: NetConfig, seed: u64) -> Result<Self, NetError> {
        config.plan.validate().map_err(NetError::Config)?;
        if config.n_classes < 2 {
            return Err(NetError::Config("at least two classes are required".into()));
        }
        let cin = config.input_channels();
        let stages = config.plan.stages();
        let mut b = Builder { store: ParamStore::new(), rng: ChaCha8Rng::seed_from_u64(seed), layers: Vec::new(), cfg: &config };
        let edge = |m: Stream, s: Stream, i: usize| FusionEdge { minuend: (m, i), subtrahend: (s, i) };
        let (body, fusion_edges) = match config.architecture {
            Architecture::Siamese => {
                let enc1 = b.encoder("enc1", cin);
                let enc2 = if config.shared_weights { enc1.clone() } else { b.encoder("enc2", cin) };
                (Body::Siamese { enc1, enc2 }, (0..stages).map(|i| edge(Stream::Pc2, Stream::Pc1, i)).collect())
            }
            Architecture::OneConvFusion => {
                let enc = b.encoder("enc", cin);
                (Body::OneConvFusion { enc }, vec![edge(Stream::FirstLayer, Stream::FirstLayer, 0)])
            }
            Architecture::Triplet => {
                let enc1 = b.encoder("enc1", cin);
                let enc2 = if config.shared_weights { enc1.clone() } else { b.encoder("enc2", cin) };
                let mut stages_c = Vec::new();
                let mut c = config.plan.widths[0];
                for i in 0..stages {
                    stages_c.push(b.stage(&format!("change.s{i}"), i, c));
                    c = config.plan.widths[i];
                }
                let proj = b.projections("change.proj", 1);
                let body = Body::Triplet { enc1, enc2, change: Encoder { stages: stages_c }, proj };
                (body, (0..stages).map(|i| edge(Stream::Pc2, Stream::Pc1, i)).collect())
            }
            Architecture::EncoderFusion => {
                let enc1 = b.encoder("enc1", cin);
                let enc2 = b.encoder("enc2", cin);
                let proj = b.projections("enc2.proj", 0);
                (Body::EncoderFusion { enc1, enc2, proj }, (0..stages).map(|i| edge(Stream::Fused, Stream::Pc1, i)).collect())
            }
        };
        let decoder = b.decoder();
        let Builder { store, layers, .. } = b;
        Ok(Self { config, store, layers, fusion_edges, body, decoder })
    }

    pub fn architecture(&self) -> Architecture {
        self.config.architecture
    }

    /// Total scalar parameters; shared parameters are stored, and counted, once.
    pub fn param_count(&self) -> usize {
        self.store.scalar_count()
    }

    /// Parameter ids of the two mono-date encoders, when the architecture has them.
    pub fn mono_encoder_params(&self) -> Option<(BTreeSet<ParamId>, BTreeSet<ParamId>)> {
        let ids = |e: &Encoder| e.stages.iter().flat_map(|s| s.param_ids()).collect::<BTreeSet<_>>();
        match &self.body {
            Body::Siamese { enc1, enc2 } | Body::Triplet { enc1, enc2, .. } | Body::EncoderFusion { enc1, enc2, .. } => {
                Some((ids(enc1), ids(enc2)))
            }
            Body::OneConvFusion { .. } => None,
        }
    }

    /// Parameter ids read by the first layer acting on raw inputs.
    pub fn first_layer_params(&self) -> Vec<ParamId> {
        let first = |e: &Encoder| e.stages[0].conv.weight;
        let mut ids: Vec<ParamId> = match &self.body {
            Body::Siamese { enc1, enc2 } | Body::Triplet { enc1, enc2, .. } | Body::EncoderFusion { enc1, enc2, .. } => {
                vec![first(enc1), first(enc2)]
            }
            Body::OneConvFusion { enc } => vec![first(enc)],
        };
        ids.dedup();
        ids
    }

    /// Log-probabilities on the stage-0 PC2 points of the batch.
    pub fn forward(&self, ctx: &mut Context, batch: &PairBatch) -> Result<Tensor, NetError> {
        let stages = self.config.plan.stages();
        if batch.stages() != stages || batch.dl0 != self.config.plan.dl0 {
            return Err(NetError::StageMismatch { expected: stages, got: batch.stages() });
        }
        if batch.input_channels() != self.config.input_channels() {
            return Err(NetError::ChannelMismatch { expected: self.config.input_channels(), got: batch.input_channels() });
        }
        let x1 = ctx.tape.constant(batch.inputs[0].clone());
        let x2 = ctx.tape.constant(batch.inputs[1].clone());
        let (m1, m2) = (&batch.conv[0], &batch.conv[1]);
        let skips = match &self.body {
            Body::Siamese { enc1, enc2 } => {
                let e1 = run_encoder(enc1, ctx, x1, m1)?;
                let e2 = run_encoder(enc2, ctx, x2, m2)?;
                (0..stages).map(|i| difference(ctx, batch, i, e1[i], e2[i])).collect::<Result<Vec<_>, _>>()?
            }
            Body::OneConvFusion { enc } => {
                let first = &enc.stages[0];
                let c1 = first.conv.forward(ctx, x1, &m1[0])?;
                let c2 = first.conv.forward(ctx, x2, &m2[0])?;
                let d = difference(ctx, batch, 0, c1, c2)?;
                let mut h = first.unary.forward(ctx, d)?;
                let mut skips = vec![h];
                for i in 1..stages {
                    h = enc.stages[i].forward(ctx, h, &m2[i])?;
                    skips.push(h);
                }
                skips
            }
            Body::Triplet { enc1, enc2, change, proj } => {
                let e1 = run_encoder(enc1, ctx, x1, m1)?;
                let e2 = run_encoder(enc2, ctx, x2, m2)?;
                let mut skips = Vec::with_capacity(stages);
                let d0 = difference(ctx, batch, 0, e1[0], e2[0])?;
                let mut c = change.stages[0].forward(ctx, d0, &m2[0])?;
                skips.push(c);
                for i in 1..stages {
                    let d = difference(ctx, batch, i, e1[i], e2[i])?;
                    let s = change.stages[i].forward(ctx, c, &m2[i])?;
                    c = fuse(ctx, &proj[i], s, d)?;
                    skips.push(c);
                }
                skips
            }
            Body::EncoderFusion { enc1, enc2, proj } => {
                let e1 = run_encoder(enc1, ctx, x1, m1)?;
                let mut skips = Vec::with_capacity(stages);
                let mut h = x2;
                for i in 0..stages {
                    let s = enc2.stages[i].forward(ctx, h, &m2[i])?;
                    let d = difference(ctx, batch, i, e1[i], s)?;
                    h = fuse(ctx, &proj[i], s, d)?;
                    skips.push(h);
                }
                skips
            }
        };
        self.decoder.forward(ctx, &skips, batch)
    }
}
