//! Attention model, attention-LSTM cell, initial state and output layer.
//!
//! The `*_node` functions record onto a [`Tape`]; the plain-named wrappers
//! evaluate a single call on a throwaway tape and return values.

use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Scalar, Tape};

/// Additive attention: `score_i = wᵀ·tanh(W_a·a_i + W_h·h + b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionParams {
    pub wa: ParamId,
    pub wh: ParamId,
    pub b: ParamId,
    pub w: ParamId,
}

/// Fused gate transform producing `[i; f; o; g]` from `[x; h; ẑ]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LstmParams {
    pub w: ParamId,
    pub b: ParamId,
}

/// `h0 = tanh(W_h0·mean(A))`, `c0 = tanh(W_c0·mean(A))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InitParams {
    pub h: ParamId,
    pub c: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState<T> {
    pub h: Vec<T>,
    pub c: Vec<T>,
}

/// Projects every annotation vector with `W_a`; reused across time steps.
pub fn attention_keys<T: Scalar>(tape: &mut Tape<'_, T>, att: &AttentionParams, items: &[NodeId]) -> Result<Vec<NodeId>> {
    items.iter().map(|&a| tape.affine(att.wa, a, None)).collect()
}

/// Returns `(alpha, z_hat)` nodes.
pub fn attend_node<T: Scalar>(
    tape: &mut Tape<'_, T>,
    att: &AttentionParams,
    keys: &[NodeId],
    items: &[NodeId],
    h_prev: NodeId,
) -> Result<(NodeId, NodeId)> {
    if items.is_empty() || keys.len() != items.len() {
        return Err(Error::dim(
            "attend",
            format!("{} keys for {} annotation vectors", keys.len(), items.len()),
        ));
    }
    let hp = tape.affine(att.wh, h_prev, Some(att.b))?;
    let mut scores = Vec::with_capacity(keys.len());
    for &k in keys {
        let pre = tape.add(k, hp)?;
        let act = tape.tanh(pre);
        scores.push(tape.dot(att.w, act)?);
    }
    let scores = tape.concat(&scores);
    let alpha = tape.softmax(scores)?;
    let z = tape.weighted_sum(alpha, items)?;
    Ok((alpha, z))
}

/// One attention-LSTM step; returns `(h, c)` nodes.
pub fn lstm_step_node<T: Scalar>(
    tape: &mut Tape<'_, T>,
    lstm: &LstmParams,
    x: NodeId,
    h_prev: NodeId,
    c_prev: NodeId,
    z_hat: NodeId,
) -> Result<(NodeId, NodeId)> {
    let hidden = tape.value(h_prev).len();
    if tape.value(c_prev).len() != hidden {
        return Err(Error::dim("lstm_step", "hidden and memory states differ in length"));
    }
    let input = tape.concat(&[x, h_prev, z_hat]);
    let pre = tape.affine(lstm.w, input, Some(lstm.b))?;
    if tape.value(pre).len() != 4 * hidden {
        return Err(Error::dim(
            "lstm_step",
            format!("gate transform yields {} values for hidden size {hidden}", tape.value(pre).len()),
        ));
    }
    let gate = |tape: &mut Tape<'_, T>, k: usize| tape.slice(pre, k * hidden, hidden);
    let (i, f, o, g) = (gate(tape, 0)?, gate(tape, 1)?, gate(tape, 2)?, gate(tape, 3)?);
    let i = tape.sigmoid(i);
    let f = tape.sigmoid(f);
    let o = tape.sigmoid(o);
    let g = tape.tanh(g);
    let keep = tape.mul(f, c_prev)?;
    let write = tape.mul(i, g)?;
    let c = tape.add(keep, write)?;
    let tc = tape.tanh(c);
    let h = tape.mul(o, tc)?;
    Ok((h, c))
}

pub fn init_state_node<T: Scalar>(tape: &mut Tape<'_, T>, init: &InitParams, items: &[NodeId]) -> Result<(NodeId, NodeId)> {
    let m = tape.mean(items)?;
    let h = tape.affine(init.h, m, None)?;
    let c = tape.affine(init.c, m, None)?;
    Ok((tape.tanh(h), tape.tanh(c)))
}

/// `softmax(W_out·h)`.
pub fn output_node<T: Scalar>(tape: &mut Tape<'_, T>, out_w: ParamId, h: NodeId) -> Result<NodeId> {
    let logits = tape.affine(out_w, h, None)?;
    tape.softmax(logits)
}

pub fn embed_node<T: Scalar>(tape: &mut Tape<'_, T>, table: ParamId, token: usize) -> Result<NodeId> {
    tape.row(table, token)
}

fn leaves<T: Scalar>(tape: &mut Tape<'_, T>, items: &[Vec<T>]) -> Vec<NodeId> {
    items.iter().map(|v| tape.leaf(v.clone())).collect()
}

/// `(alpha, z_hat)` for annotation vectors `items` and previous hidden state.
pub fn attend<T: Scalar>(
    store: &ParamStore<T>,
    att: &AttentionParams,
    items: &[Vec<T>],
    h_prev: &[T],
) -> Result<(Vec<T>, Vec<T>)> {
    let mut tape = Tape::new(store);
    let nodes = leaves(&mut tape, items);
    let keys = attention_keys(&mut tape, att, &nodes)?;
    let h = tape.leaf(h_prev.to_vec());
    let (alpha, z) = attend_node(&mut tape, att, &keys, &nodes, h)?;
    Ok((tape.value(alpha).to_vec(), tape.value(z).to_vec()))
}

pub fn lstm_step<T: Scalar>(
    store: &ParamStore<T>,
    lstm: &LstmParams,
    x: &[T],
    state: &DecoderState<T>,
    z_hat: &[T],
) -> Result<DecoderState<T>> {
    let mut tape = Tape::new(store);
    let (x, h, c, z) = (
        tape.leaf(x.to_vec()),
        tape.leaf(state.h.clone()),
        tape.leaf(state.c.clone()),
        tape.leaf(z_hat.to_vec()),
    );
    let (h, c) = lstm_step_node(&mut tape, lstm, x, h, c, z)?;
    Ok(DecoderState {
        h: tape.value(h).to_vec(),
        c: tape.value(c).to_vec(),
    })
}

pub fn init_decoder_state<T: Scalar>(store: &ParamStore<T>, init: &InitParams, items: &[Vec<T>]) -> Result<DecoderState<T>> {
    let mut tape = Tape::new(store);
    let nodes = leaves(&mut tape, items);
    let (h, c) = init_state_node(&mut tape, init, &nodes)?;
    Ok(DecoderState {
        h: tape.value(h).to_vec(),
        c: tape.value(c).to_vec(),
    })
}

pub fn output_distribution<T: Scalar>(store: &ParamStore<T>, out_w: ParamId, h: &[T]) -> Result<Vec<T>> {
    let mut tape = Tape::new(store);
    let h = tape.leaf(h.to_vec());
    let p = output_node(&mut tape, out_w, h)?;
    Ok(tape.value(p).to_vec())
}

pub fn embed<T: Scalar>(store: &ParamStore<T>, table: ParamId, token: usize) -> Result<Vec<T>> {
    let mut tape = Tape::new(store);
    let e = embed_node(&mut tape, table, token)?;
    Ok(tape.value(e).to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamKind, Shape};

    fn att_store(d: usize, h: usize, a: usize) -> (ParamStore<f64>, AttentionParams) {
        let mut s = ParamStore::new();
        let wa = s.insert("wa", Shape::Matrix(a, d), ParamKind::Weight, (0..a * d).map(|i| (i as f64 * 0.37).sin()).collect()).unwrap();
        let wh = s.insert("wh", Shape::Matrix(a, h), ParamKind::Weight, (0..a * h).map(|i| (i as f64 * 0.11).cos()).collect()).unwrap();
        let b = s.insert("b", Shape::Vector(a), ParamKind::Bias, vec![0.1; a]).unwrap();
        let w = s.insert("w", Shape::Vector(a), ParamKind::Weight, (0..a).map(|i| 1.0 - i as f64 * 0.3).collect()).unwrap();
        (s, AttentionParams { wa, wh, b, w })
    }

    #[test]
    fn identical_annotations_get_uniform_weights() {
        let (s, att) = att_store(3, 2, 4);
        let items = vec![vec![0.5, -1.0, 2.0]; 5];
        let (alpha, z) = attend(&s, &att, &items, &[0.3, -0.2]).unwrap();
        for a in &alpha {
            assert!((a - 0.2).abs() < 1e-15);
        }
        for (zi, ai) in z.iter().zip(&items[0]) {
            assert!((zi - ai).abs() < 1e-12);
        }
    }

    #[test]
    fn single_annotation() {
        let (s, att) = att_store(3, 2, 4);
        let items = vec![vec![0.5, -1.0, 2.0]];
        let (alpha, z) = attend(&s, &att, &items, &[0.0, 0.0]).unwrap();
        assert_eq!(alpha, vec![1.0]);
        assert_eq!(z, items[0]);
        assert!(attend(&s, &att, &[], &[0.0, 0.0]).is_err());
        assert!(attend(&s, &att, &[vec![1.0]], &[0.0, 0.0]).is_err());
    }

    fn lstm_store(x: usize, h: usize, z: usize, bias: Vec<f64>) -> (ParamStore<f64>, LstmParams) {
        let mut s = ParamStore::new();
        let w = s.insert_zeros("w", Shape::Matrix(4 * h, x + h + z), ParamKind::Weight).unwrap();
        let b = s.insert("b", Shape::Vector(4 * h), ParamKind::Bias, bias).unwrap();
        (s, LstmParams { w, b })
    }

    #[test]
    fn zero_weight_lstm_closed_form() {
        let (s, lstm) = lstm_store(2, 3, 2, vec![0.0; 12]);
        let state = DecoderState {
            h: vec![0.4, -0.3, 0.9],
            c: vec![1.0, -2.0, 0.5],
        };
        let out = lstm_step(&s, &lstm, &[1.0, 2.0], &state, &[3.0, 4.0]).unwrap();
        for (k, c_prev) in state.c.iter().enumerate() {
            assert!((out.c[k] - 0.5 * c_prev).abs() < 1e-15);
            assert!((out.h[k] - 0.5 * (0.5 * c_prev).tanh()).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_forget_gate_keeps_memory() {
        let h = 3;
        // gate order i, f, o, g
        let mut bias = vec![0.0; 4 * h];
        bias[..h].iter_mut().for_each(|b| *b = -40.0);
        bias[h..2 * h].iter_mut().for_each(|b| *b = 40.0);
        let (s, lstm) = lstm_store(2, h, 2, bias);
        let state = DecoderState {
            h: vec![0.0; h],
            c: vec![1.5, -0.7, 0.2],
        };
        let out = lstm_step(&s, &lstm, &[1.0, 2.0], &state, &[0.0, 0.0]).unwrap();
        for (a, b) in out.c.iter().zip(&state.c) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(out.h.iter().all(|v| v.abs() < 1.0));
    }

    #[test]
    fn lstm_rejects_mismatched_dims() {
        let (s, lstm) = lstm_store(2, 3, 2, vec![0.0; 12]);
        let state = DecoderState {
            h: vec![0.0; 3],
            c: vec![0.0; 3],
        };
        assert!(lstm_step(&s, &lstm, &[1.0], &state, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn init_state_is_zero_for_zero_weights_and_order_free() {
        let mut s = ParamStore::<f64>::new();
        let h = s.insert_zeros("h", Shape::Matrix(2, 3), ParamKind::Weight).unwrap();
        let c = s.insert_zeros("c", Shape::Matrix(2, 3), ParamKind::Weight).unwrap();
        let init = InitParams { h, c };
        let items = vec![vec![1.0, 2.0, 3.0], vec![-4.0, 0.5, 9.0]];
        let st = init_decoder_state(&s, &init, &items).unwrap();
        assert_eq!(st.h, vec![0.0, 0.0]);
        assert_eq!(st.c, vec![0.0, 0.0]);

        s.get_mut(h).value = vec![0.3, -0.2, 0.9, 1.1, 2.0, -0.4];
        s.get_mut(c).value = vec![-0.3, 0.2, 0.1, 0.7, -2.0, 0.4];
        let a = init_decoder_state(&s, &init, &items).unwrap();
        let rev: Vec<Vec<f64>> = items.iter().rev().cloned().collect();
        let b = init_decoder_state(&s, &init, &rev).unwrap();
        for (x, y) in a.h.iter().zip(&b.h).chain(a.c.iter().zip(&b.c)) {
            assert!((x - y).abs() < 1e-15);
            assert!(x.abs() <= 1.0);
        }
    }

    #[test]
    fn output_distribution_cases() {
        let mut s = ParamStore::<f64>::new();
        let w = s.insert_zeros("out", Shape::Matrix(5, 2), ParamKind::Weight).unwrap();
        let p = output_distribution(&s, w, &[0.3, 0.7]).unwrap();
        assert!(p.iter().all(|v| (v - 0.2).abs() < 1e-15));
        assert!(output_distribution(&s, w, &[0.3]).is_err());
    }

    #[test]
    fn embedding_rows() {
        let mut s = ParamStore::<f64>::new();
        let e = s
            .insert("e", Shape::Matrix(3, 3), ParamKind::Weight, crate::numerics::Tensor2::identity(3).as_slice().to_vec())
            .unwrap();
        assert_eq!(embed(&s, e, 1).unwrap(), vec![0.0, 1.0, 0.0]);
        assert_eq!(embed(&s, e, 1).unwrap(), embed(&s, e, 1).unwrap());
        assert!(matches!(embed(&s, e, 3), Err(Error::Index { .. })));
    }
}
