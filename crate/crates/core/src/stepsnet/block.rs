//! Transformer block with adaptive layer-norm conditioning.

use crate::autodiff::{Float, Tape, TensorError, Var};

/// Tape handles for the [`BLOCK_TENSORS`](super::BLOCK_TENSORS) tensors
/// of one block, in layout order.
#[derive(Debug, Clone, Copy)]
pub struct BlockVars {
    pub ada_w: Var,
    pub ada_b: Var,
    pub qkv_w: Var,
    pub qkv_b: Var,
    pub proj_w: Var,
    pub proj_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

impl BlockVars {
    pub fn from_vars(v: &[Var]) -> Self {
        Self {
            ada_w: v[0],
            ada_b: v[1],
            qkv_w: v[2],
            qkv_b: v[3],
            proj_w: v[4],
            proj_b: v[5],
            fc1_w: v[6],
            fc1_b: v[7],
            fc2_w: v[8],
            fc2_b: v[9],
        }
    }
}

pub(crate) fn linear<T: Float>(tape: &mut Tape<T>, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
    let y = tape.matmul(x, w)?;
    tape.add_row(y, b)
}

/// Conditioning vector `[1, c]` → `k` modulation rows of width `w`.
pub(crate) fn modulation<T: Float>(
    tape: &mut Tape<T>,
    cond: Var,
    w_mod: Var,
    b_mod: Var,
    k: usize,
    w: usize,
) -> Result<Vec<Var>, TensorError> {
    let c = tape.silu(cond)?;
    let m = linear(tape, c, w_mod, b_mod)?;
    let m = tape.reshape(m, &[k * w])?;
    (0..k).map(|i| tape.slice(m, i * w, (i + 1) * w)).collect()
}

/// `LN(x) · (1 + scale) + shift`.
pub(crate) fn modulate<T: Float>(tape: &mut Tape<T>, x: Var, shift: Var, scale: Var) -> Result<Var, TensorError> {
    let h = tape.layer_norm(x)?;
    let s = tape.add_scalar(scale, T::one())?;
    let h = tape.mul_row(h, s)?;
    tape.add_row(h, shift)
}

/// One pre-norm block over tokens `x` `[T, w]` conditioned on `cond` `[1, c]`.
/// With zero modulation weights the gates are zero and the block is the
/// identity.
pub fn adaln_block<T: Float>(
    tape: &mut Tape<T>,
    x: Var,
    cond: Var,
    p: &BlockVars,
    heads: usize,
) -> Result<Var, TensorError> {
    let w = tape.value(x).last_dim();
    let m = modulation(tape, cond, p.ada_w, p.ada_b, 6, w)?;
    let (shift_a, scale_a, gate_a, shift_m, scale_m, gate_m) = (m[0], m[1], m[2], m[3], m[4], m[5]);

    let h = modulate(tape, x, shift_a, scale_a)?;
    let qkv = linear(tape, h, p.qkv_w, p.qkv_b)?;
    let q = tape.slice(qkv, 0, w)?;
    let k = tape.slice(qkv, w, 2 * w)?;
    let v = tape.slice(qkv, 2 * w, 3 * w)?;
    let a = tape.attention(q, k, v, heads)?;
    let a = linear(tape, a, p.proj_w, p.proj_b)?;
    let a = tape.mul_row(a, gate_a)?;
    let x = tape.add(x, a)?;

    let h = modulate(tape, x, shift_m, scale_m)?;
    let h = linear(tape, h, p.fc1_w, p.fc1_b)?;
    let h = tape.gelu(h)?;
    let h = linear(tape, h, p.fc2_w, p.fc2_b)?;
    let h = tape.mul_row(h, gate_m)?;
    tape.add(x, h)
}
