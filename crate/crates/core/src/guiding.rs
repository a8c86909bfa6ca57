//! The guiding network and discriminative supervision.
//!
//! `g` maps each concatenated `[a_i; e]` through one linear layer and
//! max-pools the outputs per dimension, giving a guiding vector `v` that is
//! fixed for the whole caption. The decoder input becomes `E·y_t + W_v·v`,
//! and the entries of `v` double as scores for the frequent-word hinge loss.

use serde::{Deserialize, Serialize};

use crate::corpus::FrequentWordSet;
use crate::error::{Error, Result};
use crate::numerics::{NodeId, ParamId, ParamStore, Scalar, Tape};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidingParams {
    /// `Z × (d + F)` linear layer.
    pub w: ParamId,
    pub b: ParamId,
    /// `embed × Z` projection into the decoder input.
    pub wv: ParamId,
}

/// Zeroes one or both operands of `b_i = [a_i; e]`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GuideMasks {
    pub annotations: bool,
    pub attributes: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidingVector<T> {
    pub v: Vec<T>,
    /// Index of the annotation vector that won each dimension.
    pub winners: Vec<usize>,
}

/// Records `v = maxpool_i(W_g·[a_i; e] + b)` and returns the pooled node.
pub fn guiding_node<T: Scalar>(
    tape: &mut Tape<'_, T>,
    g: &GuidingParams,
    items: &[NodeId],
    attrs: NodeId,
    masks: GuideMasks,
) -> Result<NodeId> {
    if items.is_empty() {
        return Err(Error::dim("guiding_forward", "empty annotation set"));
    }
    let (z, in_dim) = tape.store().get(g.w).shape.dims();
    let item_dim = tape.value(items[0]).len();
    let attr_dim = tape.value(attrs).len();
    if attr_dim != z || item_dim + attr_dim != in_dim {
        return Err(Error::dim(
            "guiding_forward",
            format!(
                "guiding layer is {z}x{in_dim} but inputs are annotation {item_dim} + attributes {attr_dim}"
            ),
        ));
    }
    let e = if masks.attributes {
        tape.leaf(vec![T::zero(); attr_dim])
    } else {
        attrs
    };
    let zero_item = masks.annotations.then(|| tape.leaf(vec![T::zero(); item_dim]));
    let mut outs = Vec::with_capacity(items.len());
    for &a in items {
        let a = zero_item.unwrap_or(a);
        let b = tape.concat(&[a, e]);
        outs.push(tape.affine(g.w, b, Some(g.b))?);
    }
    tape.max_pool(&outs)
}

/// `W_v·v`, computed once per caption.
pub fn guide_projection<T: Scalar>(tape: &mut Tape<'_, T>, g: &GuidingParams, v: NodeId) -> Result<NodeId> {
    tape.affine(g.wv, v, None)
}

/// `x_t = E·y_t (+ W_v·v)`.
pub fn compose_input_node<T: Scalar>(
    tape: &mut Tape<'_, T>,
    embed: ParamId,
    token: usize,
    guide_input: Option<NodeId>,
) -> Result<NodeId> {
    let e = tape.row(embed, token)?;
    match guide_input {
        Some(gv) => tape.add(e, gv),
        None => Ok(e),
    }
}

/// Hinge loss over score vector `v` with `1/Z` normalization.
pub fn discriminative_loss_node<T: Scalar>(tape: &mut Tape<'_, T>, v: NodeId, positive: &[bool]) -> Result<NodeId> {
    let z = tape.value(v).len();
    if z == 0 {
        return Err(Error::dim("discriminative_loss", "empty guiding vector"));
    }
    tape.hinge(v, positive, T::one() / T::from_usize(z).unwrap())
}

pub fn guiding_forward<T: Scalar>(
    store: &ParamStore<T>,
    g: &GuidingParams,
    items: &[Vec<T>],
    attrs: &[T],
    masks: GuideMasks,
) -> Result<GuidingVector<T>> {
    let mut tape = Tape::new(store);
    let nodes: Vec<NodeId> = items.iter().map(|v| tape.leaf(v.clone())).collect();
    let e = tape.leaf(attrs.to_vec());
    let v = guiding_node(&mut tape, g, &nodes, e, masks)?;
    Ok(GuidingVector {
        v: tape.value(v).to_vec(),
        winners: tape.winners(v).expect("max-pool node").to_vec(),
    })
}

pub fn compose_input<T: Scalar>(
    store: &ParamStore<T>,
    embed: ParamId,
    token: usize,
    g: &GuidingParams,
    v: &GuidingVector<T>,
) -> Result<Vec<T>> {
    let mut tape = Tape::new(store);
    let vn = tape.leaf(v.v.clone());
    let gv = guide_projection(&mut tape, g, vn)?;
    let x = compose_input_node(&mut tape, embed, token, Some(gv))?;
    Ok(tape.value(x).to_vec())
}

/// `(1/Z)·Σ_{j∈C} Σ_{i∉C} max(0, 1 − (s_j − s_i))` evaluated directly from
/// scores and membership flags.
pub fn hinge_loss<T: Scalar>(scores: &[T], positive: &[bool]) -> T {
    let mut total = T::zero();
    for (sj, _) in scores.iter().zip(positive).filter(|(_, p)| **p) {
        for (si, _) in scores.iter().zip(positive).filter(|(_, p)| !**p) {
            total = total + (T::one() - (*sj - *si)).max(T::zero());
        }
    }
    total / T::from_usize(scores.len().max(1)).unwrap()
}

/// Discriminative loss of guiding vector `v` for one caption.
pub fn discriminative_loss<T: Scalar>(v: &[T], caption: &[usize], fws: &FrequentWordSet) -> Result<T> {
    if v.len() != fws.len() {
        return Err(Error::dim(
            "discriminative_loss",
            format!("guiding vector has {} entries for {} frequent words", v.len(), fws.len()),
        ));
    }
    Ok(hinge_loss(v, &fws.membership(caption)))
}

/// Number of `(j ∈ C, i ∉ C)` pairs with `s_j ≤ s_i`, and the pair total.
pub fn violated_pairs<T: Scalar>(scores: &[T], positive: &[bool]) -> (usize, usize) {
    let mut bad = 0;
    let mut total = 0;
    for (sj, _) in scores.iter().zip(positive).filter(|(_, p)| **p) {
        for (si, _) in scores.iter().zip(positive).filter(|(_, p)| !**p) {
            total += 1;
            if sj <= si {
                bad += 1;
            }
        }
    }
    (bad, total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamKind, Shape};

    fn store(d: usize, f: usize, embed: usize) -> (ParamStore<f64>, GuidingParams, ParamId) {
        let mut s = ParamStore::new();
        let w = s
            .insert(
                "g.w",
                Shape::Matrix(f, d + f),
                ParamKind::Weight,
                (0..f * (d + f)).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.13).collect(),
            )
            .unwrap();
        let b = s.insert("g.b", Shape::Vector(f), ParamKind::Bias, (0..f).map(|i| i as f64 * 0.1).collect()).unwrap();
        let wv = s
            .insert("g.wv", Shape::Matrix(embed, f), ParamKind::Weight, (0..embed * f).map(|i| (i as f64).sin()).collect())
            .unwrap();
        let e = s
            .insert("embed", Shape::Matrix(4, embed), ParamKind::Weight, (0..4 * embed).map(|i| (i as f64).cos()).collect())
            .unwrap();
        (s, GuidingParams { w, b, wv }, e)
    }

    #[test]
    fn singleton_set_is_plain_affine() {
        let (s, g, _) = store(2, 3, 2);
        let a = vec![0.5, -1.5];
        let e = vec![1.0, 0.0, 1.0];
        let out = guiding_forward(&s, &g, &[a.clone()], &e, GuideMasks::default()).unwrap();
        let x: Vec<f64> = a.iter().chain(&e).copied().collect();
        let w = s.get(g.w).as_tensor2();
        let expect = crate::numerics::affine(&w, &x.into(), &s.get(g.b).as_tensor1()).unwrap();
        assert_eq!(out.v, expect.as_slice());
    }

    #[test]
    fn permutation_invariant() {
        let (s, g, _) = store(2, 3, 2);
        let items = vec![vec![0.5, -1.5], vec![2.0, 0.1], vec![-0.3, 0.9]];
        let e = vec![0.2, 0.0, 1.0];
        let a = guiding_forward(&s, &g, &items, &e, GuideMasks::default()).unwrap();
        let rev: Vec<Vec<f64>> = items.iter().rev().cloned().collect();
        let b = guiding_forward(&s, &g, &rev, &e, GuideMasks::default()).unwrap();
        assert_eq!(a.v, b.v);
    }

    #[test]
    fn keep_none_gives_bias() {
        let (s, g, _) = store(2, 3, 2);
        let masks = GuideMasks {
            annotations: true,
            attributes: true,
        };
        let out = guiding_forward(&s, &g, &[vec![9.0, 9.0], vec![-3.0, 1.0]], &[1.0, 1.0, 0.0], masks).unwrap();
        assert_eq!(out.v, s.get(g.b).value);
    }

    #[test]
    fn dimension_errors() {
        let (s, g, _) = store(2, 3, 2);
        assert!(guiding_forward(&s, &g, &[vec![1.0]], &[0.0; 3], GuideMasks::default()).is_err());
        assert!(guiding_forward(&s, &g, &[vec![1.0, 2.0]], &[0.0; 2], GuideMasks::default()).is_err());
        assert!(guiding_forward::<f64>(&s, &g, &[], &[0.0; 3], GuideMasks::default()).is_err());
    }

    #[test]
    fn compose_input_reduces_to_embedding() {
        let (mut s, g, e) = store(2, 3, 2);
        let v = GuidingVector {
            v: vec![0.0; 3],
            winners: vec![0; 3],
        };
        let emb = s.get(e).value[2..4].to_vec();
        assert_eq!(compose_input(&s, e, 1, &g, &v).unwrap(), emb);

        let v = GuidingVector {
            v: vec![0.3, -0.2, 1.0],
            winners: vec![0; 3],
        };
        let x1 = compose_input(&s, e, 1, &g, &v).unwrap();
        assert_eq!(x1, compose_input(&s, e, 1, &g, &v).unwrap());
        s.get_mut(g.wv).value.iter_mut().for_each(|w| *w = 0.0);
        assert_eq!(compose_input(&s, e, 1, &g, &v).unwrap(), emb);
    }

    #[test]
    fn hinge_hand_example() {
        let l = hinge_loss::<f64>(&[2.0, 0.5, 1.5], &[true, false, false]);
        assert!((l - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(hinge_loss(&[5.0, 1.0, 0.0], &[true, false, false]), 0.0);
        assert_eq!(hinge_loss(&[5.0, 1.0, 0.0], &[false, false, false]), 0.0);
    }

    #[test]
    fn discriminative_loss_uses_caption_membership() {
        let fws = FrequentWordSet::from_ids(vec![10, 11, 12]);
        let l = discriminative_loss::<f64>(&[2.0, 0.5, 1.5], &[0, 10, 1], &fws).unwrap();
        assert!((l - 1.0 / 6.0).abs() < 1e-12);
        assert!(discriminative_loss(&[1.0, 2.0], &[0, 1], &fws).is_err());
    }

    #[test]
    fn violated_pair_counts() {
        assert_eq!(violated_pairs(&[2.0, 0.5, 2.0], &[true, false, false]), (1, 2));
        assert_eq!(violated_pairs::<f64>(&[1.0], &[false]), (0, 0));
    }
}
