//! Execution contexts for the simulator. The step and policy math is written
//! once against `SimCtx`; `EagerCtx` runs it on plain `f64`, `TapeCtx`
//! records the identical operations on a tape so gradients with respect to
//! the broadcast cost signal exist. Both paths apply the same operations in
//! the same order, so their values agree bit for bit.

use crate::autodiff::{sigmoid, Tape, Tensor, VarId};

pub trait SimCtx {
    type V: Copy;

    fn konst(&mut self, x: f64) -> Self::V;
    fn val(&self, v: Self::V) -> f64;
    fn add(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn add_many(&mut self, xs: &[Self::V]) -> Self::V;
    fn sub(&mut self, a: Self::V, b: Self::V) -> Self::V;
    fn mul(&mut self, a: Self::V, b: Self::V) -> Self::V;
    /// k * v + c
    fn affine(&mut self, v: Self::V, k: f64, c: f64) -> Self::V;
    fn relu(&mut self, v: Self::V) -> Self::V;
    fn sigmoid(&mut self, v: Self::V) -> Self::V;

    /// min(c, v) = c - relu(c - v); differentiable in v almost everywhere.
    fn min_const(&mut self, c: f64, v: Self::V) -> Self::V {
        let d = self.affine(v, -1.0, c);
        let r = self.relu(d);
        self.affine(r, -1.0, c)
    }
}

/// Plain-`f64` execution.
#[derive(Default)]
pub struct EagerCtx;

impl SimCtx for EagerCtx {
    type V = f64;

    fn konst(&mut self, x: f64) -> f64 {
        x
    }
    fn val(&self, v: f64) -> f64 {
        v
    }
    fn add(&mut self, a: f64, b: f64) -> f64 {
        a + b
    }
    fn add_many(&mut self, xs: &[f64]) -> f64 {
        let mut s = 0.0;
        for x in xs {
            s += x;
        }
        s
    }
    fn sub(&mut self, a: f64, b: f64) -> f64 {
        a - b
    }
    fn mul(&mut self, a: f64, b: f64) -> f64 {
        a * b
    }
    fn affine(&mut self, v: f64, k: f64, c: f64) -> f64 {
        v * k + c
    }
    fn relu(&mut self, v: f64) -> f64 {
        v.max(0.0)
    }
    fn sigmoid(&mut self, v: f64) -> f64 {
        sigmoid(v)
    }
}

/// Tape-recorded execution. All values are scalar nodes.
pub struct TapeCtx<'a> {
    pub tape: &'a mut Tape,
}

impl<'a> TapeCtx<'a> {
    pub fn new(tape: &'a mut Tape) -> Self {
        TapeCtx { tape }
    }
}

impl SimCtx for TapeCtx<'_> {
    type V = VarId;

    fn konst(&mut self, x: f64) -> VarId {
        self.tape.scalar(x)
    }
    fn val(&self, v: VarId) -> f64 {
        self.tape.value(v).item()
    }
    fn add(&mut self, a: VarId, b: VarId) -> VarId {
        self.tape.add(a, b).expect("scalar add")
    }
    fn add_many(&mut self, xs: &[VarId]) -> VarId {
        if xs.is_empty() {
            return self.tape.leaf(Tensor::scalar(0.0));
        }
        self.tape.add_n(xs).expect("scalar add_n")
    }
    fn sub(&mut self, a: VarId, b: VarId) -> VarId {
        self.tape.sub(a, b).expect("scalar sub")
    }
    fn mul(&mut self, a: VarId, b: VarId) -> VarId {
        self.tape.mul(a, b).expect("scalar mul")
    }
    fn affine(&mut self, v: VarId, k: f64, c: f64) -> VarId {
        let s = self.tape.scale(v, k);
        self.tape.add_scalar(s, c)
    }
    fn relu(&mut self, v: VarId) -> VarId {
        self.tape.relu(v)
    }
    fn sigmoid(&mut self, v: VarId) -> VarId {
        self.tape.sigmoid(v)
    }
}
