use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Dense vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor1<T> {
    data: Vec<T>,
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor2<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Tensor1<T> {
    pub fn new(data: Vec<T>) -> Self {
        Self { data }
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            data: vec![T::zero(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl<T> From<Vec<T>> for Tensor1<T> {
    fn from(data: Vec<T>) -> Self {
        Self { data }
    }
}

impl<T: Scalar> Tensor2<T> {
    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim(
                "Tensor2::from_vec",
                format!("{} values for a {rows}x{cols} matrix", data.len()),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[&[T]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::dim("Tensor2::from_rows", "ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.iter().copied()).collect();
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }
}

/// `out[i] = Σ_j w[i,j]·x[j]` accumulated into `out`, over a raw row-major slice.
#[inline]
pub(crate) fn matvec_into<T: Scalar>(w: &[T], cols: usize, x: &[T], out: &mut [T]) {
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc = acc + *a * *b;
        }
        *o = acc;
    }
}

/// `W·x + b`.
pub fn affine<T: Scalar>(w: &Tensor2<T>, x: &Tensor1<T>, b: &Tensor1<T>) -> Result<Tensor1<T>> {
    if w.cols != x.len() {
        return Err(Error::dim(
            "affine",
            format!("W has {} columns but x has length {}", w.cols, x.len()),
        ));
    }
    if w.rows != b.len() {
        return Err(Error::dim(
            "affine",
            format!("W has {} rows but b has length {}", w.rows, b.len()),
        ));
    }
    let mut out = vec![T::zero(); w.rows];
    matvec_into(&w.data, w.cols, x.as_slice(), &mut out);
    for (o, bi) in out.iter_mut().zip(b.as_slice()) {
        *o = *o + *bi;
    }
    Ok(Tensor1::new(out))
}

/// Max-shifted softmax over a raw slice. Caller guarantees non-empty input.
pub(crate) fn softmax_slice<T: Scalar>(z: &[T]) -> Vec<T> {
    let m = z.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = z.iter().map(|&v| (v - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn softmax<T: Scalar>(z: &Tensor1<T>) -> Result<Tensor1<T>> {
    if z.is_empty() {
        return Err(Error::dim("softmax", "empty input"));
    }
    Ok(Tensor1::new(softmax_slice(z.as_slice())))
}

/// Per-dimension maximum over a set of equal-length vectors. Ties go to the
/// lowest index.
pub(crate) fn max_pool_slices<T: Scalar>(items: &[&[T]]) -> (Vec<T>, Vec<usize>) {
    let dim = items[0].len();
    let mut out = items[0].to_vec();
    let mut winners = vec![0usize; dim];
    for (i, item) in items.iter().enumerate().skip(1) {
        for d in 0..dim {
            if item[d] > out[d] {
                out[d] = item[d];
                winners[d] = i;
            }
        }
    }
    (out, winners)
}

/// Element-wise max pooling; returns the pooled vector and the winning
/// vector index per dimension.
pub fn elementwise_max_pool<T: Scalar>(vectors: &[Tensor1<T>]) -> Result<(Tensor1<T>, Vec<usize>)> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::dim("elementwise_max_pool", "empty vector list"))?;
    if let Some((i, v)) = vectors
        .iter()
        .enumerate()
        .find(|(_, v)| v.len() != first.len())
    {
        return Err(Error::dim(
            "elementwise_max_pool",
            format!("vector {i} has length {} but vector 0 has {}", v.len(), first.len()),
        ));
    }
    let slices: Vec<&[T]> = vectors.iter().map(|v| v.as_slice()).collect();
    let (out, winners) = max_pool_slices(&slices);
    Ok((Tensor1::new(out), winners))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t1(v: &[f64]) -> Tensor1<f64> {
        Tensor1::new(v.to_vec())
    }

    #[test]
    fn affine_examples() {
        let id = Tensor2::<f64>::identity(2);
        assert_eq!(affine(&id, &t1(&[3., 4.]), &t1(&[0., 0.])).unwrap(), t1(&[3., 4.]));

        let w = Tensor2::from_rows(&[&[1., 1.], &[0., 2.]]).unwrap();
        assert_eq!(affine(&w, &t1(&[1., 2.]), &t1(&[1., 0.])).unwrap(), t1(&[4., 4.]));

        let z = Tensor2::<f64>::zeros(2, 2);
        assert_eq!(affine(&z, &t1(&[5., 6.]), &t1(&[7., 8.])).unwrap(), t1(&[7., 8.]));
    }

    #[test]
    fn affine_shape_errors_name_operands() {
        let w = Tensor2::<f64>::zeros(2, 3);
        let err = affine(&w, &t1(&[1., 2.]), &t1(&[0., 0.])).unwrap_err();
        assert!(err.to_string().contains("columns"), "{err}");
        let err = affine(&w, &t1(&[1., 2., 3.]), &t1(&[0.])).unwrap_err();
        assert!(err.to_string().contains("rows"), "{err}");
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&t1(&[0., 0.])).unwrap();
        assert_eq!(p.as_slice(), &[0.5, 0.5]);

        let p = softmax(&t1(&[2f64.ln(), 0.])).unwrap();
        assert!((p.as_slice()[0] - 2. / 3.).abs() < 1e-15);
        assert!((p.as_slice()[1] - 1. / 3.).abs() < 1e-15);

        let p = softmax(&t1(&[1000., 0.])).unwrap();
        assert!(p.is_finite());
        assert!((p.as_slice()[0] - 1.).abs() < 1e-12);
        assert!(p.as_slice()[1] < 1e-300);

        assert!(softmax(&t1(&[])).is_err());
    }

    #[test]
    fn max_pool_examples() {
        let (v, w) = elementwise_max_pool(&[t1(&[1., 5.]), t1(&[3., 2.])]).unwrap();
        assert_eq!(v, t1(&[3., 5.]));
        assert_eq!(w, vec![1, 0]);

        let (v, _) = elementwise_max_pool(&[t1(&[7., 7.])]).unwrap();
        assert_eq!(v, t1(&[7., 7.]));

        let (v, w) = elementwise_max_pool(&[t1(&[1., 2.]), t1(&[1., 2.])]).unwrap();
        assert_eq!(v, t1(&[1., 2.]));
        assert_eq!(w, vec![0, 0]);

        assert!(elementwise_max_pool::<f64>(&[]).is_err());
        assert!(elementwise_max_pool(&[t1(&[1.]), t1(&[1., 2.])]).is_err());
    }
}
