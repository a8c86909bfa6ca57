use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::{Scalar, Tensor1, Tensor2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn numel(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    /// Row count and column count; vectors are a single column.
    pub fn dims(self) -> (usize, usize) {
        match self {
            Shape::Vector(n) => (n, 1),
            Shape::Matrix(r, c) => (r, c),
        }
    }
}

/// Biases are exempt from weight decay and initialize to zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamKind {
    Weight,
    Bias,
}

impl ParamKind {
    fn as_str(self) -> &'static str {
        match self {
            ParamKind::Weight => "weight",
            ParamKind::Bias => "bias",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// One named tensor with its gradient and AdaGrad accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub shape: Shape,
    pub kind: ParamKind,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub accum: Vec<T>,
}

impl<T: Scalar> Param<T> {
    fn new(name: String, shape: Shape, kind: ParamKind, value: Vec<T>) -> Self {
        let n = shape.numel();
        Self {
            name,
            shape,
            kind,
            value,
            grad: vec![T::zero(); n],
            accum: vec![T::zero(); n],
        }
    }

    pub fn as_tensor2(&self) -> Tensor2<T> {
        let (r, c) = self.shape.dims();
        Tensor2::from_vec(r, c, self.value.clone()).expect("shape invariant")
    }

    pub fn as_tensor1(&self) -> Tensor1<T> {
        Tensor1::new(self.value.clone())
    }
}

/// Ordered collection of named parameters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Shape, kind: ParamKind, value: Vec<T>) -> Result<ParamId> {
        if value.len() != shape.numel() {
            return Err(Error::dim(
                "ParamStore::insert",
                format!("{name}: {} values for shape {shape:?}", value.len()),
            ));
        }
        if self.index.contains_key(name) {
            return Err(Error::State(format!("duplicate parameter name {name}")));
        }
        let id = self.params.len();
        self.params.push(Param::new(name.to_string(), shape, kind, value));
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn insert_zeros(&mut self, name: &str, shape: Shape, kind: ParamKind) -> Result<ParamId> {
        self.insert(name, shape, kind, vec![T::zero(); shape.numel()])
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| Error::State(format!("unknown parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index.get(name).map(|&i| &mut self.params[i])
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    /// Total scalar count over all values.
    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Adds `scale · grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &Gradients<T>, scale: T) {
        for (p, g) in self.params.iter_mut().zip(&grads.slots) {
            if let Some(g) = g {
                for (dst, src) in p.grad.iter_mut().zip(g) {
                    *dst = *dst + scale * *src;
                }
            }
        }
    }

    pub fn scale_grads(&mut self, scale: T) {
        for p in &mut self.params {
            p.grad.iter_mut().for_each(|g| *g = *g * scale);
        }
    }

    /// Same names, shapes and values (gradients and accumulators ignored).
    pub fn same_values(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape && a.value == b.value)
    }

    /// Order-sensitive FNV-1a digest over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for p in &self.params {
            eat(p.name.as_bytes());
            let (r, c) = p.shape.dims();
            eat(&(r as u64).to_le_bytes());
            eat(&(c as u64).to_le_bytes());
            for v in &p.value {
                eat(&v.as_f64().to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Text serialization.
    ///
    /// ```text
    /// params <count>
    /// tensor <name> <weight|bias> <rows>          # vector
    /// <v0> <v1> ...
    /// tensor <name> <weight|bias> <rows>x<cols>   # matrix
    /// <row 0 values>
    /// <row 1 values>
    /// ...
    /// ```
    ///
    /// Values use the shortest decimal that round-trips.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "params {}", self.params.len()).unwrap();
        for p in &self.params {
            let shape = match p.shape {
                Shape::Vector(n) => n.to_string(),
                Shape::Matrix(r, c) => format!("{r}x{c}"),
            };
            writeln!(out, "tensor {} {} {}", p.name, p.kind.as_str(), shape).unwrap();
            let (_, cols) = p.shape.dims();
            let width = if matches!(p.shape, Shape::Vector(_)) { p.value.len() } else { cols };
            if width == 0 {
                continue;
            }
            for row in p.value.chunks(width) {
                let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
                writeln!(out, "{}", line.join(" ")).unwrap();
            }
        }
        out
    }

    /// Parses the format written by [`ParamStore::to_text`] from a line
    /// iterator; `first_line` is the 1-based line number of the `params`
    /// header, used in diagnostics.
    pub fn from_lines<'a, I>(lines: &mut I, source: &Path, first_line: usize) -> Result<Self>
    where
        I: Iterator<Item = (usize, &'a str)>,
    {
        let perr = |line: usize, message: String| Error::Parse {
            path: source.to_path_buf(),
            line,
            message,
        };
        let (ln, header) = lines
            .next()
            .ok_or_else(|| perr(first_line, "missing params header".into()))?;
        let count: usize = header
            .strip_prefix("params ")
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| perr(ln, format!("expected `params <count>`, found `{header}`")))?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let (ln, head) = lines
                .next()
                .ok_or_else(|| perr(ln, "unexpected end of parameter block".into()))?;
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 4 || parts[0] != "tensor" {
                return Err(perr(ln, format!("expected `tensor <name> <kind> <shape>`, found `{head}`")));
            }
            let kind = match parts[2] {
                "weight" => ParamKind::Weight,
                "bias" => ParamKind::Bias,
                other => return Err(perr(ln, format!("unknown tensor kind `{other}`"))),
            };
            let parse_dim = |s: &str| s.parse::<usize>().map_err(|_| perr(ln, format!("bad dimension `{s}`")));
            let shape = match parts[3].split_once('x') {
                Some((r, c)) => Shape::Matrix(parse_dim(r)?, parse_dim(c)?),
                None => Shape::Vector(parse_dim(parts[3])?),
            };
            let n_lines = match shape {
                Shape::Vector(n) => usize::from(n > 0),
                Shape::Matrix(r, c) => if c > 0 { r } else { 0 },
            };
            let mut values = Vec::with_capacity(shape.numel());
            for _ in 0..n_lines {
                let (vl, row) = lines
                    .next()
                    .ok_or_else(|| perr(ln, format!("tensor {} truncated", parts[1])))?;
                for tok in row.split_whitespace() {
                    let v: T = tok
                        .parse()
                        .map_err(|_| perr(vl, format!("bad number `{tok}`")))?;
                    if !v.is_finite() {
                        return Err(perr(vl, format!("non-finite value `{tok}`")));
                    }
                    values.push(v);
                }
            }
            if values.len() != shape.numel() {
                return Err(perr(
                    ln,
                    format!("tensor {} has {} values, shape needs {}", parts[1], values.len(), shape.numel()),
                ));
            }
            store
                .insert(parts[1], shape, kind, values)
                .map_err(|e| perr(ln, e.to_string()))?;
        }
        Ok(store)
    }

    pub fn from_text(text: &str, source: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        Self::from_lines(&mut lines, source, 1)
    }
}

/// Per-parameter gradient buffers produced by a backward pass; slots for
/// untouched parameters stay empty.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub(crate) slots: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn new(n_params: usize) -> Self {
        Self {
            slots: vec![None; n_params],
        }
    }

    pub(crate) fn slot(&mut self, id: ParamId, len: usize) -> &mut Vec<T> {
        self.slots[id.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.slots.get(id.0).and_then(|s| s.as_deref())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.insert("w", Shape::Matrix(2, 3), ParamKind::Weight, vec![0.1, -0.2, 0.3, 1e-17, 5.0, -0.0])
            .unwrap();
        s.insert("b", Shape::Vector(2), ParamKind::Bias, vec![0.0, 0.25]).unwrap();
        s.insert("empty", Shape::Vector(0), ParamKind::Bias, vec![]).unwrap();
        s
    }

    #[test]
    fn text_round_trip_is_exact() {
        let s = sample();
        let text = s.to_text();
        let back = ParamStore::<f64>::from_text(&text, Path::new("mem")).unwrap();
        assert!(s.same_values(&back));
        assert_eq!(back.get(back.id("b").unwrap()).kind, ParamKind::Bias);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "params 1\ntensor w weight 2\n1 nope\n";
        let err = ParamStore::<f64>::from_text(text, Path::new("ck")).unwrap_err();
        assert!(err.to_string().starts_with("ck:3:"), "{err}");
    }

    #[test]
    fn shapes_must_match_values() {
        let mut s = ParamStore::<f64>::new();
        assert!(s.insert("x", Shape::Matrix(2, 2), ParamKind::Weight, vec![1.0]).is_err());
        s.insert_zeros("x", Shape::Vector(1), ParamKind::Bias).unwrap();
        assert!(s.insert_zeros("x", Shape::Vector(1), ParamKind::Bias).is_err());
    }

    #[test]
    fn checksum_tracks_values() {
        let a = sample();
        let mut b = sample();
        assert_eq!(a.checksum(), b.checksum());
        b.by_name_mut("b").unwrap().value[0] = 1.0;
        assert_ne!(a.checksum(), b.checksum());
    }
}
