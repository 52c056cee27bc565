//! Dense row-major tensors and the kernels the layers are built from.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense N-dimensional array stored flat in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) && !data.is_empty() {
            return Err(Error::InvalidShape {
                shape,
                reason: "zero-sized dimension with non-empty data".into(),
            });
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: format!("expected {expected} elements, got {}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    /// Builds a rank-2 tensor from equally long rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::shape("from_rows", &[cols], &[row.len()]));
            }
            data.extend_from_slice(row);
        }
        Self::new(vec![rows.len(), cols], data)
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Element of a rank-2 tensor.
    #[inline]
    pub fn at2(&self, i: usize, j: usize) -> T {
        self.data[i * self.shape[1] + j]
    }

    /// Row `i` of a rank-2 tensor.
    pub fn row(&self, i: usize) -> &[T] {
        let cols = self.shape[1];
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape("zip_map", other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn scale(&self, factor: T) -> Self {
        self.map(|x| x * factor)
    }

    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        self.expect_same_shape("add_assign", other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<T> {
        self.expect_same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a - b).abs())
            .fold(T::zero(), T::max))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Errors with `context` when any element is NaN or infinite.
    pub fn ensure_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::NonFinite(context.to_string()))
        }
    }

    pub(crate) fn expect_same_shape(&self, op: &'static str, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, op: &'static str, rank: usize) -> Result<()> {
        if self.shape.len() != rank {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects rank {rank}"),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_rank("transpose", 2)?;
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Self::new(vec![n, m], out)
    }
}

/// Matrix product of `[m×k]` and `[k×n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.shape[1] != b.shape[0] {
        return Err(Error::shape("matmul", &a.shape, &b.shape));
    }
    let (m, k, n) = (a.shape[0], a.shape[1], b.shape[1]);
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a.data[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let b_row = &b.data[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
    let out = Tensor::new(vec![m, n], out)?;
    out.ensure_finite("matmul")?;
    Ok(out)
}

/// Valid (unpadded) stride-1 cross-correlation.
///
/// `input` is `[batch×cin×h×w]`, `kernel` is `[cout×cin×kh×kw]`, `bias` is
/// `[cout]`; the result is `[batch×cout×(h−kh+1)×(w−kw+1)]`.
pub fn conv2d_forward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let geo = ConvGeometry::new(input, kernel, bias)?;
    let ConvGeometry {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    } = geo;
    let mut out = vec![T::zero(); batch * cout * oh * ow];
    for b in 0..batch {
        for o in 0..cout {
            let plane = &mut out[(b * cout + o) * oh * ow..(b * cout + o + 1) * oh * ow];
            plane.fill(bias.data[o]);
            for c in 0..cin {
                let img = &input.data[(b * cin + c) * h * w..(b * cin + c + 1) * h * w];
                for u in 0..kh {
                    for v in 0..kw {
                        let k = kernel.data[((o * cin + c) * kh + u) * kw + v];
                        for i in 0..oh {
                            let src = &img[(i + u) * w + v..(i + u) * w + v + ow];
                            let dst = &mut plane[i * ow..(i + 1) * ow];
                            for (d, &s) in dst.iter_mut().zip(src) {
                                *d += k * s;
                            }
                        }
                    }
                }
            }
        }
    }
    let out = Tensor::new(vec![batch, cout, oh, ow], out)?;
    out.ensure_finite("conv2d_forward")?;
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to input, kernel and bias.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernel: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let cout = kernel.shape().first().copied().unwrap_or(0);
    let geo = ConvGeometry::new(input, kernel, &Tensor::zeros(&[cout]))?;
    let ConvGeometry {
        batch,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
    } = geo;
    if grad_out.shape() != [batch, cout, oh, ow] {
        return Err(Error::shape(
            "conv2d_backward",
            grad_out.shape(),
            &[batch, cout, oh, ow],
        ));
    }
    let mut g_in = vec![T::zero(); input.len()];
    let mut g_k = vec![T::zero(); kernel.len()];
    let mut g_b = vec![T::zero(); cout];
    for b in 0..batch {
        for o in 0..cout {
            let g = &grad_out.data[(b * cout + o) * oh * ow..(b * cout + o + 1) * oh * ow];
            g_b[o] += g.iter().copied().sum();
            for c in 0..cin {
                let base = (b * cin + c) * h * w;
                for u in 0..kh {
                    for v in 0..kw {
                        let kidx = ((o * cin + c) * kh + u) * kw + v;
                        let k = kernel.data[kidx];
                        let mut acc = T::zero();
                        for i in 0..oh {
                            let off = base + (i + u) * w + v;
                            let g_row = &g[i * ow..(i + 1) * ow];
                            let x_row = &input.data[off..off + ow];
                            for (&gv, &xv) in g_row.iter().zip(x_row) {
                                acc += gv * xv;
                            }
                            let gi_row = &mut g_in[off..off + ow];
                            for (gi, &gv) in gi_row.iter_mut().zip(g_row) {
                                *gi += k * gv;
                            }
                        }
                        g_k[kidx] += acc;
                    }
                }
            }
        }
    }
    Ok((
        Tensor::new(input.shape.clone(), g_in)?,
        Tensor::new(kernel.shape.clone(), g_k)?,
        Tensor::new(vec![cout], g_b)?,
    ))
}

#[derive(Debug, Clone, Copy)]
struct ConvGeometry {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeometry {
    fn new<T: Scalar>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Self> {
        if input.rank() != 4 || kernel.rank() != 4 {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        }
        let [batch, cin, h, w] = [input.shape[0], input.shape[1], input.shape[2], input.shape[3]];
        let [cout, kcin, kh, kw] = [
            kernel.shape[0],
            kernel.shape[1],
            kernel.shape[2],
            kernel.shape[3],
        ];
        if kcin != cin || kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(Error::shape("conv2d", input.shape(), kernel.shape()));
        }
        if bias.shape() != [cout] {
            return Err(Error::shape("conv2d bias", bias.shape(), &[cout]));
        }
        Ok(Self {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            oh: h - kh + 1,
            ow: w - kw + 1,
        })
    }
}

/// Per-column mean and biased variance (divisor `m`) of an `[m×d]` tensor.
pub fn reduce_stats<T: Scalar>(x: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    x.expect_rank("reduce_stats", 2)?;
    let (m, d) = (x.shape[0], x.shape[1]);
    if m == 0 {
        return Err(Error::EmptyBatch("reduce_stats"));
    }
    let inv_m = T::one() / T::from_count(m);
    let mut mean = vec![T::zero(); d];
    for row in x.data.chunks_exact(d) {
        for (acc, &v) in mean.iter_mut().zip(row) {
            *acc += v;
        }
    }
    mean.iter_mut().for_each(|v| *v *= inv_m);
    let mut var = vec![T::zero(); d];
    for row in x.data.chunks_exact(d) {
        for ((acc, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            let dv = v - mu;
            *acc += dv * dv;
        }
    }
    var.iter_mut().for_each(|v| *v *= inv_m);
    let mean = Tensor::vector(mean);
    let var = Tensor::vector(var);
    mean.ensure_finite("reduce_stats mean")?;
    var.ensure_finite("reduce_stats variance")?;
    Ok((mean, var))
}

/// Moves the channel axis last: `[b×c×h×w]` → `[(b·h·w)×c]`.
pub fn nchw_to_rows<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    x.expect_rank("nchw_to_rows", 4)?;
    let [b, c, h, w] = [x.shape[0], x.shape[1], x.shape[2], x.shape[3]];
    let hw = h * w;
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let src = &x.data[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for (p, &v) in src.iter().enumerate() {
                out[(bi * hw + p) * c + ci] = v;
            }
        }
    }
    Tensor::new(vec![b * hw, c], out)
}

/// Inverse of [`nchw_to_rows`].
pub fn rows_to_nchw<T: Scalar>(x: &Tensor<T>, shape: &[usize]) -> Result<Tensor<T>> {
    let [b, c, h, w] = match shape {
        &[b, c, h, w] => [b, c, h, w],
        _ => return Err(Error::shape("rows_to_nchw", x.shape(), shape)),
    };
    let hw = h * w;
    if x.shape() != [b * hw, c] {
        return Err(Error::shape("rows_to_nchw", x.shape(), shape));
    }
    let mut out = vec![T::zero(); x.len()];
    for bi in 0..b {
        for ci in 0..c {
            let dst = &mut out[(bi * c + ci) * hw..(bi * c + ci + 1) * hw];
            for (p, d) in dst.iter_mut().enumerate() {
                *d = x.data[(bi * hw + p) * c + ci];
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn t2(rows: &[&[f64]]) -> Tensor<f64> {
        Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn new_rejects_wrong_length() {
        assert!(Tensor::<f64>::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    fn matmul_identity() {
        let a = t2(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert_eq!(matmul(&Tensor::identity(2), &a).unwrap(), a);
    }

    #[test]
    fn matmul_row_by_column() {
        let out = matmul(&t2(&[&[1.0, 2.0]]), &t2(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data(), &[11.0]);
    }

    #[test]
    fn matmul_zero_annihilates() {
        let z = Tensor::<f64>::zeros(&[2, 3]);
        let b = t2(&[&[1.0, -2.0], &[3.5, 4.0], &[0.25, 9.0]]);
        assert_eq!(matmul(&z, &b).unwrap(), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn matmul_mismatch_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3] vs [2, 3]"), "{msg}");
    }

    #[test]
    fn matmul_overflow_is_an_error() {
        let a = t2(&[&[1e300, 1e300]]);
        let b = t2(&[&[1e300], &[1e300]]);
        assert!(matches!(matmul(&a, &b), Err(Error::NonFinite(_))));
    }

    #[test]
    fn conv_ones_sum_to_nine() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_zero_kernel_gives_bias() {
        let x = Tensor::new(vec![2, 1, 4, 5], (0..40).map(f64::from).collect()).unwrap();
        let k = Tensor::zeros(&[3, 1, 2, 2]);
        let bias = Tensor::vector(vec![0.5, -1.0, 2.0]);
        let out = conv2d_forward(&x, &k, &bias).unwrap();
        assert_eq!(out.shape(), &[2, 3, 3, 4]);
        for (idx, &v) in out.data().iter().enumerate() {
            let o = (idx / 12) % 3;
            assert_eq!(v, bias.data()[o]);
        }
    }

    #[test]
    fn conv_one_by_one_kernel_scales() {
        let x = Tensor::new(vec![1, 1, 2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 7.0]).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 2.5);
        let out = conv2d_forward(&x, &k, &Tensor::zeros(&[1])).unwrap();
        assert_eq!(out, x.scale(2.5));
    }

    #[test]
    fn conv_kernel_larger_than_input_errors() {
        let x = Tensor::<f64>::zeros(&[1, 1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(matches!(
            conv2d_forward(&x, &k, &Tensor::zeros(&[1])),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn reduce_stats_hand_values() {
        let (mean, var) = reduce_stats(&t2(&[&[1.0], &[2.0], &[3.0]])).unwrap();
        assert!((mean.data()[0] - 2.0).abs() < 1e-15);
        assert!((var.data()[0] - 2.0 / 3.0).abs() < 1e-15);

        let (mean, var) = reduce_stats(&t2(&[&[4.5], &[4.5], &[4.5]])).unwrap();
        assert_eq!((mean.data()[0], var.data()[0]), (4.5, 0.0));

        let (mean, var) = reduce_stats(&t2(&[&[-3.0, 8.0]])).unwrap();
        assert_eq!(mean.data(), &[-3.0, 8.0]);
        assert_eq!(var.data(), &[0.0, 0.0]);
    }

    #[test]
    fn reduce_stats_empty_batch_errors() {
        let x = Tensor::<f64>::new(vec![0, 3], vec![]).unwrap();
        assert!(matches!(reduce_stats(&x), Err(Error::EmptyBatch(_))));
    }

    #[test]
    fn layout_roundtrip() {
        let x = Tensor::new(vec![2, 3, 2, 2], (0..24).map(f64::from).collect()).unwrap();
        let rows = nchw_to_rows(&x).unwrap();
        assert_eq!(rows.shape(), &[8, 3]);
        assert_eq!(rows.row(1), &[1.0, 5.0, 9.0]);
        assert_eq!(rows_to_nchw(&rows, x.shape()).unwrap(), x);
    }

    #[test]
    fn works_in_single_precision() {
        let a = Tensor::<f32>::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::<f32>::new(vec![2, 1], vec![3.0, 4.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[11.0f32]);
    }

    fn mat(rows: usize, cols: usize) -> impl Strategy<Value = Tensor<f64>> {
        proptest::collection::vec(-1.0f64..1.0, rows * cols)
            .prop_map(move |d| Tensor::new(vec![rows, cols], d).unwrap())
    }

    proptest! {
        #[test]
        fn matmul_is_associative(a in mat(3, 4), b in mat(4, 2), c in mat(2, 5)) {
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            prop_assert!(left.max_abs_diff(&right).unwrap() < 1e-9);
        }

        #[test]
        fn variance_matches_moment_identity(x in mat(7, 3).prop_map(|t| t.scale(1e3))) {
            let (mean, var) = reduce_stats(&x).unwrap();
            for j in 0..3 {
                let mean_sq = (0..7).map(|i| x.at2(i, j).powi(2)).sum::<f64>() / 7.0;
                let identity = mean_sq - mean.data()[j].powi(2);
                prop_assert!(var.data()[j] >= 0.0);
                prop_assert!((var.data()[j] - identity).abs() < 1e-9);
            }
        }

        #[test]
        fn conv_is_homogeneous(
            x in proptest::collection::vec(-1.0f64..1.0, 2 * 2 * 5 * 5),
            k in proptest::collection::vec(-1.0f64..1.0, 3 * 2 * 3 * 3),
            alpha in -3.0f64..3.0,
        ) {
            let x = Tensor::new(vec![2, 2, 5, 5], x).unwrap();
            let k = Tensor::new(vec![3, 2, 3, 3], k).unwrap();
            let zero = Tensor::zeros(&[3]);
            let lhs = conv2d_forward(&x.scale(alpha), &k, &zero).unwrap();
            let rhs = conv2d_forward(&x, &k, &zero).unwrap().scale(alpha);
            prop_assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-9);
        }
    }
}
