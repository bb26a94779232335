//! Parameter containers for the four coordination-interface architectures.
//! Shapes follow the shared training configuration: dilated causal history
//! encoder (32 channels, dilations [1,2,4,8,16,32]), anti-causal future
//! encoder (16 channels, dilations [1,2,4,8,11]), single-head attention with
//! d_k = 20, and a two-layer ELU decoder of width 32.

use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    Primal,
    Dual,
}

impl std::fmt::Display for HeadKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HeadKind::Primal => write!(f, "primal"),
            HeadKind::Dual => write!(f, "dual"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    /// Aggregate-feature encoder, no per-agent structure.
    GlobalAggregate,
    /// Independent per-agent decoding summed at the output.
    BottomUp,
    /// Attention pooling straight over agent embeddings.
    PerAgent,
    /// Within-bucket attention, prevalence features, bucket-level attention.
    Bucketized,
}

impl PoolKind {
    pub fn is_population_embedding(&self) -> bool {
        matches!(self, PoolKind::PerAgent | PoolKind::Bucketized)
    }
}

/// Architecture hyperparameters (defaults are the shared training config).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperParams {
    pub history_len: usize,
    pub horizon: usize,
    pub embed_dim: usize,
    pub attn_dim: usize,
    pub cnn_channels: usize,
    pub future_channels: usize,
    pub decoder_hidden: usize,
    pub history_dilations: Vec<usize>,
    pub future_dilations: Vec<usize>,
    pub kernel_width: usize,
    pub demand_buckets: usize,
}

impl Default for HyperParams {
    fn default() -> Self {
        HyperParams {
            history_len: 64,
            horizon: 26,
            embed_dim: 32,
            attn_dim: 20,
            cnn_channels: 32,
            future_channels: 16,
            decoder_hidden: 32,
            history_dilations: vec![1, 2, 4, 8, 16, 32],
            future_dilations: vec![1, 2, 4, 8, 11],
            kernel_width: 2,
            demand_buckets: 10,
        }
    }
}

/// Per-feature standardization statistics estimated on the training set,
/// with the std floored at 1e-6.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub agent_mean: Vec<f64>,
    pub agent_std: Vec<f64>,
    pub global_mean: Vec<f64>,
    pub global_std: Vec<f64>,
    pub future_mean: Vec<f64>,
    pub future_std: Vec<f64>,
    pub signal_mean: f64,
    pub signal_std: f64,
    /// Mean population demand scale D(S) on the training set; scale-free
    /// variants divide population-scale features by D(S_t)/d_ref.
    pub d_ref: f64,
    /// Output standardization for absolute-output variants.
    pub out_mean: f64,
    pub out_std: f64,
}

impl FeatureStats {
    pub fn identity() -> Self {
        FeatureStats {
            agent_mean: vec![0.0; 6],
            agent_std: vec![1.0; 6],
            global_mean: vec![0.0; 4],
            global_std: vec![1.0; 4],
            future_mean: vec![0.0; 3],
            future_std: vec![1.0; 3],
            signal_mean: 0.0,
            signal_std: 1.0,
            d_ref: 1.0,
            out_mean: 0.0,
            out_std: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvLayer {
    pub w: Tensor,
    pub b: Tensor,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStack {
    pub layers: Vec<ConvLayer>,
    pub anti_causal: bool,
}

impl ConvStack {
    pub fn new(
        in_channels: usize,
        channels: usize,
        dilations: &[usize],
        width: usize,
        anti_causal: bool,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mut layers = Vec::with_capacity(dilations.len());
        let mut ci = in_channels;
        for &d in dilations {
            layers.push(ConvLayer {
                w: xavier(vec![channels, ci, width], ci * width, channels, rng),
                b: Tensor::zeros(vec![channels]),
                dilation: d,
            });
            ci = channels;
        }
        ConvStack { layers, anti_causal }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].w.shape[1]
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().expect("nonempty stack").w.shape[0]
    }

    /// Receptive field: 1 + sum of (width - 1) * dilation over layers.
    pub fn receptive_field(&self) -> usize {
        1 + self
            .layers
            .iter()
            .map(|l| (l.w.shape[2] - 1) * l.dilation)
            .sum::<usize>()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttnParams {
    pub wq: Tensor,
    pub wk: Tensor,
    pub wv: Tensor,
    /// Horizon-mixing vector w.
    pub w_mix: Tensor,
}

impl AttnParams {
    fn new(q_in: usize, e_in: usize, dk: usize, de: usize, rng: &mut ChaCha12Rng) -> Self {
        AttnParams {
            wq: xavier(vec![dk, q_in], q_in, dk, rng),
            wk: xavier(vec![dk, e_in], e_in, dk, rng),
            wv: xavier(vec![de, e_in], e_in, de, rng),
            w_mix: xavier(vec![de], de, 1, rng),
        }
    }
}

/// Two hidden ELU layers and a linear scalar head, applied per horizon step.
/// The first layer is stored split over its two input blocks
/// (representation, future encoding) so batched paths avoid concatenation:
/// W1 [e; f] = w1e e + w1f f.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub w1e: Tensor,
    pub w1f: Tensor,
    pub b1: Tensor,
    pub w2: Tensor,
    pub b2: Tensor,
    pub w3: Tensor,
    pub b3: Tensor,
}

impl Mlp {
    fn new(repr_in: usize, fut_in: usize, hidden: usize, rng: &mut ChaCha12Rng) -> Self {
        let input = repr_in + fut_in;
        Mlp {
            w1e: xavier(vec![hidden, repr_in], input, hidden, rng),
            w1f: xavier(vec![hidden, fut_in], input, hidden, rng),
            b1: Tensor::zeros(vec![hidden]),
            w2: xavier(vec![hidden, hidden], hidden, hidden, rng),
            b2: Tensor::zeros(vec![hidden]),
            w3: xavier(vec![1, hidden], hidden, 1, rng),
            b3: Tensor::zeros(vec![1]),
        }
    }
}

fn xavier(shape: Vec<usize>, fan_in: usize, fan_out: usize, rng: &mut ChaCha12Rng) -> Tensor {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n: usize = shape.iter().product();
    Tensor { shape, data: (0..n).map(|_| rng.gen_range(-bound..bound)).collect() }
}

/// Per-agent history channels: order, inventory, demand, inbound, price,
/// cost, plus a validity flag distinguishing real zeros from padding.
pub const AGENT_CHANNELS: usize = 7;
/// Aggregate history channels: order, inventory, demand, inbound + validity.
pub const GLOBAL_CHANNELS: usize = 5;
/// Future known channels: aggregate demand forecast, projected inventory
/// after drain, distance to public holidays.
pub const FUTURE_CHANNELS: usize = 3;

/// Weights and configuration of one coordination interface.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterfaceParams {
    pub head: HeadKind,
    pub pooling: PoolKind,
    pub hyper: HyperParams,
    /// History encoder: per-agent features for Bottom-Up / embedding
    /// variants, aggregate features for Global Aggregate.
    pub enc: ConvStack,
    /// Anti-causal future/signal encoder; also the attention query source.
    pub fut: ConvStack,
    pub attn_agent: Option<AttnParams>,
    pub attn_bucket: Option<AttnParams>,
    pub decoder: Mlp,
    pub stats: FeatureStats,
    /// Fixed demand-decile boundaries from the training catalog (K-1 edges).
    pub bucket_edges: Vec<f64>,
    /// Embedding variants consume population-scale features as ratios to
    /// D(S_t) and predict normalized utilization.
    pub scale_free: bool,
    /// Whether the cost trajectory is an input channel (ablation switch).
    pub lambda_input: bool,
}

impl InterfaceParams {
    pub fn new(head: HeadKind, pooling: PoolKind, hyper: HyperParams, seed: u64) -> Result<Self> {
        if head == HeadKind::Dual && pooling == PoolKind::BottomUp {
            return Err(Error::Config(
                "a bottom-up dual head would sum per-agent costs, which is not a broadcast \
                 signal"
                    .into(),
            ));
        }
        let mut rng = rng_from_seed(derive_seed(seed, "interface-init"));
        let enc_in = match pooling {
            PoolKind::GlobalAggregate => GLOBAL_CHANNELS,
            _ => AGENT_CHANNELS,
        };
        let enc = ConvStack::new(
            enc_in,
            hyper.cnn_channels,
            &hyper.history_dilations,
            hyper.kernel_width,
            false,
            &mut rng,
        );
        let fut_in = FUTURE_CHANNELS + 1; // + signal channel
        let fut = ConvStack::new(
            fut_in,
            hyper.future_channels,
            &hyper.future_dilations,
            hyper.kernel_width,
            true,
            &mut rng,
        );
        let de = hyper.embed_dim;
        let attn_agent = if pooling.is_population_embedding() {
            Some(AttnParams::new(hyper.future_channels, de, hyper.attn_dim, de, &mut rng))
        } else {
            None
        };
        let attn_bucket = if pooling == PoolKind::Bucketized {
            Some(AttnParams::new(hyper.future_channels, de + 2, hyper.attn_dim, de, &mut rng))
        } else {
            None
        };
        let decoder = Mlp::new(de, hyper.future_channels, hyper.decoder_hidden, &mut rng);
        Ok(InterfaceParams {
            head,
            pooling,
            scale_free: pooling.is_population_embedding(),
            lambda_input: true,
            hyper,
            enc,
            fut,
            attn_agent,
            attn_bucket,
            decoder,
            stats: FeatureStats::identity(),
            bucket_edges: Vec::new(),
        })
    }

    /// Drop the cost-trajectory input channel (for the conditioning
    /// ablation). Rebuilds the future encoder's first layer.
    pub fn without_lambda_input(mut self, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, "interface-init-nolambda"));
        self.fut = ConvStack::new(
            FUTURE_CHANNELS,
            self.hyper.future_channels,
            &self.hyper.future_dilations,
            self.hyper.kernel_width,
            true,
            &mut rng,
        );
        self.lambda_input = false;
        self
    }

    /// Stable (name, tensor) listing; the traversal order defines the
    /// parameter vector for optimizers and checkpoints.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.enc.layers.iter().enumerate() {
            out.push((format!("enc.{i}.w"), &l.w));
            out.push((format!("enc.{i}.b"), &l.b));
        }
        for (i, l) in self.fut.layers.iter().enumerate() {
            out.push((format!("fut.{i}.w"), &l.w));
            out.push((format!("fut.{i}.b"), &l.b));
        }
        if let Some(a) = &self.attn_agent {
            out.push(("attn1.wq".into(), &a.wq));
            out.push(("attn1.wk".into(), &a.wk));
            out.push(("attn1.wv".into(), &a.wv));
            out.push(("attn1.w".into(), &a.w_mix));
        }
        if let Some(a) = &self.attn_bucket {
            out.push(("attn2.wq".into(), &a.wq));
            out.push(("attn2.wk".into(), &a.wk));
            out.push(("attn2.wv".into(), &a.wv));
            out.push(("attn2.w".into(), &a.w_mix));
        }
        out.push(("dec.w1e".into(), &self.decoder.w1e));
        out.push(("dec.w1f".into(), &self.decoder.w1f));
        out.push(("dec.b1".into(), &self.decoder.b1));
        out.push(("dec.w2".into(), &self.decoder.w2));
        out.push(("dec.b2".into(), &self.decoder.b2));
        out.push(("dec.w3".into(), &self.decoder.w3));
        out.push(("dec.b3".into(), &self.decoder.b3));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::new();
        for l in &mut self.enc.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for l in &mut self.fut.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        if let Some(a) = &mut self.attn_agent {
            out.push(&mut a.wq);
            out.push(&mut a.wk);
            out.push(&mut a.wv);
            out.push(&mut a.w_mix);
        }
        if let Some(a) = &mut self.attn_bucket {
            out.push(&mut a.wq);
            out.push(&mut a.wk);
            out.push(&mut a.wv);
            out.push(&mut a.w_mix);
        }
        out.push(&mut self.decoder.w1e);
        out.push(&mut self.decoder.w1f);
        out.push(&mut self.decoder.b1);
        out.push(&mut self.decoder.w2);
        out.push(&mut self.decoder.b2);
        out.push(&mut self.decoder.w3);
        out.push(&mut self.decoder.b3);
        out
    }

    pub fn n_params(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.numel()).sum()
    }
}
