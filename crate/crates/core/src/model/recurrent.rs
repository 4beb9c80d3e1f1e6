//! LSTM and GRU encoders for the recurrent baselines.
//!
//! Each gate `k` owns an input-to-hidden pair `w_i{k}`, `b_i{k}` and a
//! hidden-to-hidden pair `w_h{k}`, `b_h{k}`. LSTM gates are `i f g o`, GRU
//! gates `r z n`.

use super::config::EncoderKind;
use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::params::BoundParams;
use crate::tensor::Tensor;

pub const LSTM_GATES: [char; 4] = ['i', 'f', 'g', 'o'];
pub const GRU_GATES: [char; 3] = ['r', 'z', 'n'];

fn affine_pair(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    gate: char,
    x: Var,
    h: Var,
) -> Result<(Var, Var)> {
    let p = |s: String| params.var(&format!("{prefix}.{s}"));
    let xi = tape.linear(x, p(format!("w_i{gate}"))?, Some(p(format!("b_i{gate}"))?))?;
    let hh = tape.linear(h, p(format!("w_h{gate}"))?, Some(p(format!("b_h{gate}"))?))?;
    Ok((xi, hh))
}

fn gate(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    name: char,
    x: Var,
    h: Var,
    act: Activation,
) -> Result<Var> {
    let (xi, hh) = affine_pair(tape, params, prefix, name, x, h)?;
    let pre = tape.add(xi, hh)?;
    Ok(tape.activation(pre, act))
}

/// One LSTM update; returns `(h_t, c_t)`.
pub fn lstm_step(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    use Activation::{Sigmoid, Tanh};
    let i = gate(tape, params, prefix, 'i', x, h_prev, Sigmoid)?;
    let f = gate(tape, params, prefix, 'f', x, h_prev, Sigmoid)?;
    let g = gate(tape, params, prefix, 'g', x, h_prev, Tanh)?;
    let o = gate(tape, params, prefix, 'o', x, h_prev, Sigmoid)?;
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

/// One GRU update; the reset gate scales the hidden contribution inside the
/// candidate state.
pub fn gru_step(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    h_prev: Var,
) -> Result<Var> {
    use Activation::Sigmoid;
    let r = gate(tape, params, prefix, 'r', x, h_prev, Sigmoid)?;
    let z = gate(tape, params, prefix, 'z', x, h_prev, Sigmoid)?;
    let (xn, hn) = affine_pair(tape, params, prefix, 'n', x, h_prev)?;
    let gated = tape.mul(r, hn)?;
    let pre = tape.add(xn, gated)?;
    let n = tape.tanh(pre);
    // (1 − z) ⊙ n + z ⊙ h
    let one_minus_z = tape.affine(z, -1.0, 1.0);
    let a = tape.mul(one_minus_z, n)?;
    let b = tape.mul(z, h_prev)?;
    tape.add(a, b)
}

/// Runs one direction over the rows of `x` in the given order and returns
/// the final hidden state.
fn run_direction(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    hidden: usize,
    lstm: bool,
    order: impl Iterator<Item = usize>,
) -> Result<Var> {
    let width = tape.shape(x)[1];
    let mut h = tape.constant(Tensor::zeros(&[hidden]));
    let mut c = tape.constant(Tensor::zeros(&[hidden]));
    for t in order {
        let row = tape.narrow(x, 0, t, 1)?;
        let xt = tape.reshape(row, &[width])?;
        if lstm {
            (h, c) = lstm_step(tape, params, prefix, xt, h, c)?;
        } else {
            h = gru_step(tape, params, prefix, xt, h)?;
        }
    }
    Ok(h)
}

/// Encodes a `T × C` series into a `d_model` vector. Unidirectional kinds
/// return the last hidden state; bidirectional kinds concatenate the forward
/// pass's last state with the backward pass's state at the first step, each
/// `d_model / 2` wide.
pub fn recurrent_encode(
    tape: &mut Tape,
    params: &BoundParams,
    prefix: &str,
    x: Var,
    kind: EncoderKind,
    d_model: usize,
) -> Result<Var> {
    let steps = tape.shape(x)[0];
    let lstm = matches!(kind, EncoderKind::Lstm | EncoderKind::BiLstm);
    match kind {
        EncoderKind::Attention => Err(Error::Config(
            "attention is not a recurrent encoder kind".into(),
        )),
        EncoderKind::Lstm | EncoderKind::Gru => run_direction(
            tape,
            params,
            &format!("{prefix}.fwd"),
            x,
            d_model,
            lstm,
            0..steps,
        ),
        EncoderKind::BiLstm | EncoderKind::BiGru => {
            if d_model % 2 != 0 {
                return Err(Error::Config(format!(
                    "bidirectional encoders need an even d_model, got {d_model}"
                )));
            }
            let half = d_model / 2;
            let fwd = run_direction(
                tape,
                params,
                &format!("{prefix}.fwd"),
                x,
                half,
                lstm,
                0..steps,
            )?;
            let bwd = run_direction(
                tape,
                params,
                &format!("{prefix}.bwd"),
                x,
                half,
                lstm,
                (0..steps).rev(),
            )?;
            tape.concat(&[fwd, bwd], 0)
        }
    }
}
