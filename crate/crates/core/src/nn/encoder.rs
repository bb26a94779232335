//! History encoding: a stacked dilated causal CNN with ELU between layers.
//! Three equivalent execution paths share the same kernel and accumulation
//! order, so they agree bit for bit:
//!   - taped over a whole episode (training),
//!   - eager over a whole episode (batch evaluation),
//!   - streaming one position at a time (closed-loop evaluation).

use crate::autodiff::{conv1d_forward, Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::nn::params::ConvStack;

fn elu_inplace(xs: &mut [f64]) {
    for x in xs.iter_mut() {
        if *x <= 0.0 {
            *x = x.exp() - 1.0;
        }
    }
}

/// Eager conv-stack application over a full series (ci, T) -> (co, T).
pub fn encode_series_eager(stack: &ConvStack, input: &Tensor) -> Result<Tensor> {
    if input.shape.len() != 2 || input.shape[0] != stack.in_channels() {
        return Err(Error::ShapeMismatch {
            op: "encode_series",
            detail: format!(
                "input {:?} vs stack expecting {} channels",
                input.shape,
                stack.in_channels()
            ),
        });
    }
    let t_len = input.shape[1];
    let mut cur = input.data.clone();
    let mut ci = input.shape[0];
    let last = stack.layers.len() - 1;
    for (li, layer) in stack.layers.iter().enumerate() {
        let co = layer.w.shape[0];
        let mut out = conv1d_forward(
            &cur,
            &layer.w.data,
            &layer.b.data,
            ci,
            t_len,
            co,
            layer.w.shape[2],
            layer.dilation,
            stack.anti_causal,
        );
        if li != last {
            elu_inplace(&mut out);
        }
        cur = out;
        ci = co;
    }
    Tensor::new(vec![ci, t_len], cur)
}

/// Tape ids for one conv stack's parameters, in layer order.
#[derive(Debug, Clone)]
pub struct BoundStack {
    pub layers: Vec<(VarId, VarId)>,
    pub anti_causal: bool,
    pub dilations: Vec<usize>,
}

pub fn bind_stack(tape: &mut Tape, stack: &ConvStack) -> BoundStack {
    BoundStack {
        layers: stack
            .layers
            .iter()
            .map(|l| (tape.leaf(l.w.clone()), tape.leaf(l.b.clone())))
            .collect(),
        anti_causal: stack.anti_causal,
        dilations: stack.layers.iter().map(|l| l.dilation).collect(),
    }
}

/// Taped conv-stack application; `input` is a (ci, T) node.
pub fn encode_series_tape(tape: &mut Tape, bound: &BoundStack, input: VarId) -> Result<VarId> {
    let last = bound.layers.len() - 1;
    let mut cur = input;
    for (li, ((w, b), d)) in bound.layers.iter().zip(&bound.dilations).enumerate() {
        cur = if bound.anti_causal {
            tape.anti_causal_conv(cur, *w, *b, *d)?
        } else {
            tape.causal_conv(cur, *w, *b, *d)?
        };
        if li != last {
            cur = tape.elu(cur);
        }
    }
    Ok(cur)
}

/// Windowed embedding: encode an explicit (ci, H) history window and return
/// the final-position column. The receptive field equals H, so this matches
/// the episode paths exactly.
pub fn encode_history(stack: &ConvStack, window: &Tensor, history_len: usize) -> Result<Tensor> {
    if window.shape != vec![stack.in_channels(), history_len] {
        return Err(Error::ShapeMismatch {
            op: "encode_history",
            detail: format!(
                "window {:?}, expected [{}, {}]",
                window.shape,
                stack.in_channels(),
                history_len
            ),
        });
    }
    let full = encode_series_eager(stack, window)?;
    let (co, t_len) = (full.shape[0], full.shape[1]);
    let data: Vec<f64> = (0..co).map(|c| full.data[c * t_len + t_len - 1]).collect();
    Ok(Tensor::vector(data))
}

/// Per-layer ring buffer holding the last `cap` input positions.
struct Ring {
    data: Vec<f64>,
    channels: usize,
    cap: usize,
    head: usize,
}

impl Ring {
    fn new(channels: usize, cap: usize) -> Self {
        Ring { data: vec![0.0; channels * cap], channels, cap, head: 0 }
    }

    fn push(&mut self, row: &[f64]) {
        let base = self.head * self.channels;
        self.data[base..base + self.channels].copy_from_slice(row);
        self.head = (self.head + 1) % self.cap;
    }

    /// Value `back` positions behind the most recently pushed one (0 = most
    /// recent). Positions never pushed read as zero (virtual left padding).
    fn get(&self, back: usize, pushed: usize) -> Option<usize> {
        if back >= pushed || back >= self.cap {
            return None;
        }
        let idx = (self.head + self.cap - 1 - back) % self.cap;
        Some(idx * self.channels)
    }
}

/// Streaming evaluator for one agent in a closed-loop rollout: push one
/// feature row per position, read the embedding at the current position.
pub struct StreamingEncoder<'a> {
    stack: &'a ConvStack,
    rings: Vec<Ring>,
    pushed: usize,
}

impl<'a> StreamingEncoder<'a> {
    pub fn new(stack: &'a ConvStack) -> Self {
        assert!(!stack.anti_causal, "streaming is for causal stacks");
        let mut rings = Vec::with_capacity(stack.layers.len());
        let mut ch = stack.in_channels();
        for l in &stack.layers {
            let width = l.w.shape[2];
            rings.push(Ring::new(ch, (width - 1) * l.dilation + 1));
            ch = l.w.shape[0];
        }
        StreamingEncoder { stack, rings, pushed: 0 }
    }

    /// Advance one position. `row` holds the stack's input channels at this
    /// position; returns the final layer's output column.
    pub fn push(&mut self, row: &[f64]) -> Vec<f64> {
        debug_assert_eq!(row.len(), self.stack.in_channels());
        self.rings[0].push(row);
        self.pushed += 1;
        let n_layers = self.stack.layers.len();
        let mut out = Vec::new();
        for li in 0..n_layers {
            let layer = &self.stack.layers[li];
            let (co, ci, width) = (layer.w.shape[0], layer.w.shape[1], layer.w.shape[2]);
            let mut col = vec![0.0; co];
            for (o, value) in col.iter_mut().enumerate() {
                // same accumulation order as conv1d_forward: bias, then k
                // outer, channel inner
                let mut acc = layer.b.data[o];
                for k in 0..width {
                    if let Some(base) = self.rings[li].get(k * layer.dilation, self.pushed) {
                        for c in 0..ci {
                            acc += layer.w.data[(o * ci + c) * width + k]
                                * self.rings[li].data[base + c];
                        }
                    }
                }
                *value = acc;
            }
            if li != n_layers - 1 {
                elu_inplace(&mut col);
                self.rings[li + 1].push(&col);
                out = col;
            } else {
                out = col;
            }
        }
        out
    }
}
