//! Elementwise, reduction and structural operations.

use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

fn same_shape(op: &str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!(
            "{op}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn matrix_dims(op: &str, t: &Tensor) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::dim(format!("{op}: expected a matrix, got shape {s:?}"))),
    }
}

impl Tensor {
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("add", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a + b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add",
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.to_vec())],
        ))
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("sub", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a - b).collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "sub",
            vec![self.clone(), other.clone()],
            |g| vec![Some(g.to_vec()), Some(g.iter().map(|x| -x).collect())],
        ))
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        same_shape("mul", self, other)?;
        let data = self.data().iter().zip(other.data()).map(|(a, b)| a * b).collect();
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "mul",
            vec![self.clone(), other.clone()],
            move |g| {
                let ga = g.iter().zip(b.data()).map(|(g, b)| g * b).collect();
                let gb = g.iter().zip(a.data()).map(|(g, a)| g * a).collect();
                vec![Some(ga), Some(gb)]
            },
        ))
    }

    /// Multiplies every element by a constant.
    pub fn scale(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x * s).collect();
        Tensor::from_op(self.shape().to_vec(), data, "scale", vec![self.clone()], move |g| {
            vec![Some(g.iter().map(|x| x * s).collect())]
        })
    }

    pub fn add_scalar(&self, s: f64) -> Tensor {
        let data = self.data().iter().map(|x| x + s).collect();
        Tensor::from_op(self.shape().to_vec(), data, "add_scalar", vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        })
    }

    pub fn sum(&self) -> Tensor {
        let total = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], "sum", vec![self.clone()], move |g| {
            vec![Some(vec![g[0]; n])]
        })
    }

    pub fn mean(&self) -> Tensor {
        let n = self.numel();
        let total: f64 = self.data().iter().sum();
        Tensor::from_op(vec![1], vec![total / n as f64], "mean", vec![self.clone()], move |g| {
            vec![Some(vec![g[0] / n as f64; n])]
        })
    }

    /// Same elements under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.iter().product::<usize>() != self.numel() || shape.contains(&0) {
            return Err(Error::dim(format!(
                "reshape: cannot view {:?} as {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            "reshape",
            vec![self.clone()],
            |g| vec![Some(g.to_vec())],
        ))
    }

    /// Matrix product of `m×k` and `k×n`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (m, k) = matrix_dims("matmul", self)?;
        let (k2, n) = matrix_dims("matmul", other)?;
        if k != k2 {
            return Err(Error::dim(format!(
                "matmul: inner extents differ for {:?} · {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = vec![0.0; m * n];
        gemm(MatRef::new(self.data(), m, k), MatRef::new(other.data(), k, n), &mut out, 0.0);
        let (a, b) = (self.clone(), other.clone());
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            "matmul",
            vec![self.clone(), other.clone()],
            move |g| {
                let gm = MatRef::new(g, m, n);
                let ga = a.requires_grad().then(|| {
                    let mut ga = vec![0.0; m * k];
                    gemm(gm, MatRef::new(b.data(), k, n).t(), &mut ga, 0.0);
                    ga
                });
                let gb = b.requires_grad().then(|| {
                    let mut gb = vec![0.0; k * n];
                    gemm(MatRef::new(a.data(), m, k).t(), gm, &mut gb, 0.0);
                    gb
                });
                vec![ga, gb]
            },
        ))
    }

    /// Transpose of a matrix.
    pub fn transpose(&self) -> Result<Tensor> {
        let (r, c) = matrix_dims("transpose", self)?;
        let data = transpose_raw(self.data(), r, c);
        Ok(Tensor::from_op(vec![c, r], data, "transpose", vec![self.clone()], move |g| {
            vec![Some(transpose_raw(g, c, r))]
        }))
    }

    /// Columns `[start, start+len)` of a matrix.
    pub fn slice_cols(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = matrix_dims("slice_cols", self)?;
        if len == 0 || start + len > c {
            return Err(Error::dim(format!(
                "slice_cols: [{start}, {}) outside {c} columns",
                start + len
            )));
        }
        let mut data = Vec::with_capacity(r * len);
        for row in self.data().chunks(c) {
            data.extend_from_slice(&row[start..start + len]);
        }
        Ok(Tensor::from_op(vec![r, len], data, "slice_cols", vec![self.clone()], move |g| {
            let mut gi = vec![0.0; r * c];
            for (dst, src) in gi.chunks_mut(c).zip(g.chunks(len)) {
                dst[start..start + len].copy_from_slice(src);
            }
            vec![Some(gi)]
        }))
    }

    /// Rows `[start, start+len)` of a matrix.
    pub fn slice_rows(&self, start: usize, len: usize) -> Result<Tensor> {
        let (r, c) = matrix_dims("slice_rows", self)?;
        if len == 0 || start + len > r {
            return Err(Error::dim(format!(
                "slice_rows: [{start}, {}) outside {r} rows",
                start + len
            )));
        }
        let data = self.data()[start * c..(start + len) * c].to_vec();
        Ok(Tensor::from_op(vec![len, c], data, "slice_rows", vec![self.clone()], move |g| {
            let mut gi = vec![0.0; r * c];
            gi[start * c..(start + len) * c].copy_from_slice(g);
            vec![Some(gi)]
        }))
    }

    /// Sub-tensor at index `i` of the leading axis (rank drops by one).
    pub fn select0(&self, i: usize) -> Result<Tensor> {
        let (&d0, rest) = self
            .shape()
            .split_first()
            .ok_or_else(|| Error::dim("select0: rank-0 tensor"))?;
        if i >= d0 || rest.is_empty() {
            return Err(Error::dim(format!("select0: index {i} for shape {:?}", self.shape())));
        }
        let len: usize = rest.iter().product();
        let total = self.numel();
        let data = self.data()[i * len..(i + 1) * len].to_vec();
        Ok(Tensor::from_op(rest.to_vec(), data, "select0", vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            gi[i * len..(i + 1) * len].copy_from_slice(g);
            vec![Some(gi)]
        }))
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack0(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("stack0: no inputs"))?;
        for p in parts {
            same_shape("stack0", first, p)?;
        }
        let len = first.numel();
        let mut shape = vec![parts.len()];
        shape.extend_from_slice(first.shape());
        let data = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
        Ok(Tensor::from_op(shape, data, "stack0", parts.to_vec(), move |g| {
            g.chunks(len).map(|c| Some(c.to_vec())).collect()
        }))
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_cols: no inputs"))?;
        let (r, _) = matrix_dims("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = matrix_dims("concat_cols", p)?;
            if pr != r {
                return Err(Error::dim(format!(
                    "concat_cols: row counts {r} and {pr} differ"
                )));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&p.data()[i * w..(i + 1) * w]);
            }
        }
        Ok(Tensor::from_op(vec![r, total], data, "concat_cols", parts.to_vec(), move |g| {
            let mut out: Vec<Vec<f64>> = widths.iter().map(|w| Vec::with_capacity(r * w)).collect();
            for row in g.chunks(total) {
                let mut off = 0;
                for (o, &w) in out.iter_mut().zip(&widths) {
                    o.extend_from_slice(&row[off..off + w]);
                    off += w;
                }
            }
            out.into_iter().map(Some).collect()
        }))
    }

    /// Vertical concatenation of matrices with equal column counts.
    pub fn concat_rows(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("concat_rows: no inputs"))?;
        let (_, c) = matrix_dims("concat_rows", first)?;
        let mut sizes = Vec::with_capacity(parts.len());
        for p in parts {
            let (pr, pc) = matrix_dims("concat_rows", p)?;
            if pc != c {
                return Err(Error::dim(format!(
                    "concat_rows: column counts {c} and {pc} differ"
                )));
            }
            sizes.push(pr * pc);
        }
        let rows: usize = sizes.iter().sum::<usize>() / c;
        let data: Vec<f64> = parts.iter().flat_map(|p| p.data().iter().copied()).collect();
        Ok(Tensor::from_op(vec![rows, c], data, "concat_rows", parts.to_vec(), move |g| {
            let mut off = 0;
            sizes
                .iter()
                .map(|&s| {
                    let part = g[off..off + s].to_vec();
                    off += s;
                    Some(part)
                })
                .collect()
        }))
    }

    /// Adds a length-`D` vector to every row of an `N×D` matrix.
    pub fn add_row_bias(&self, bias: &Tensor) -> Result<Tensor> {
        let (_, d) = matrix_dims("add_row_bias", self)?;
        if bias.shape() != [d] {
            return Err(Error::dim(format!(
                "add_row_bias: bias {:?} does not match {:?}",
                bias.shape(),
                self.shape()
            )));
        }
        let mut data = self.to_vec();
        for row in data.chunks_mut(d) {
            row.iter_mut().zip(bias.data()).for_each(|(x, b)| *x += b);
        }
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            "add_row_bias",
            vec![self.clone(), bias.clone()],
            move |g| {
                let mut gb = vec![0.0; d];
                for row in g.chunks(d) {
                    gb.iter_mut().zip(row).for_each(|(a, b)| *a += b);
                }
                vec![Some(g.to_vec()), Some(gb)]
            },
        ))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.data().iter().map(|&x| x.max(0.0)).collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, "relu", vec![self.clone()], move |g| {
            let gi = g
                .iter()
                .zip(x.data())
                .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                .collect();
            vec![Some(gi)]
        })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044_715;
        let data = self
            .data()
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh()))
            .collect();
        let x = self.clone();
        Tensor::from_op(self.shape().to_vec(), data, "gelu", vec![self.clone()], move |g| {
            let gi = g
                .iter()
                .zip(x.data())
                .map(|(g, &x)| {
                    let t = (C * (x + A * x * x * x)).tanh();
                    let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x);
                    g * d
                })
                .collect();
            vec![Some(gi)]
        })
    }

    pub fn sigmoid(&self) -> Tensor {
        let data: Vec<f64> = self.data().iter().map(|&x| sigmoid(x)).collect();
        let y = data.clone();
        Tensor::from_op(self.shape().to_vec(), data, "sigmoid", vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&y).map(|(g, y)| g * y * (1.0 - y)).collect())]
        })
    }

    /// Elementwise maximum across equally shaped tensors. The gradient goes
    /// to the first input attaining the maximum.
    pub fn max_stack(parts: &[Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or_else(|| Error::dim("max_stack: no inputs"))?;
        for p in parts {
            same_shape("max_stack", first, p)?;
        }
        let n = first.numel();
        let mut data = first.to_vec();
        let mut arg = vec![0usize; n];
        for (k, p) in parts.iter().enumerate().skip(1) {
            for (i, &v) in p.data().iter().enumerate() {
                if v > data[i] {
                    data[i] = v;
                    arg[i] = k;
                }
            }
        }
        let count = parts.len();
        Ok(Tensor::from_op(first.shape().to_vec(), data, "max_stack", parts.to_vec(), move |g| {
            let mut out = vec![vec![0.0; n]; count];
            for (i, (&k, &gv)) in arg.iter().zip(g).enumerate() {
                out[k][i] = gv;
            }
            out.into_iter().map(Some).collect()
        }))
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn transpose_raw(data: &[f64], r: usize, c: usize) -> Vec<f64> {
    let mut out = vec![0.0; r * c];
    for i in 0..r {
        for j in 0..c {
            out[j * r + i] = data[i * c + j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{assert_gradients, random_tensor};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn loop_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                let mut s = 0.0;
                for p in 0..k {
                    s += a[i * k + p] * b[p * n + j];
                }
                c[i * n + j] = s;
            }
        }
        c
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = random_tensor(&mut rng, &[3, 3], 1.0);
        let eye = Tensor::new(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap();
        assert_eq!(eye.matmul(&a).unwrap().data(), a.data());

        let x = Tensor::new(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = Tensor::new(&[2, 1], vec![5., 6.]).unwrap();
        assert_eq!(x.matmul(&y).unwrap().data(), &[17.0, 39.0]);
    }

    #[test]
    fn matmul_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let (m, k, n) = (rng.gen_range(1..9), rng.gen_range(1..9), rng.gen_range(1..9));
            let a = random_tensor(&mut rng, &[m, k], 1.0);
            let b = random_tensor(&mut rng, &[k, n], 1.0);
            let got = a.matmul(&b).unwrap();
            let want = loop_matmul(a.data(), b.data(), m, k, n);
            for (g, w) in got.data().iter().zip(&want) {
                assert!((g - w).abs() <= 1e-12 * (1.0 + w.abs()));
            }
        }
        let a = random_tensor(&mut rng, &[7, 5], 1.0);
        let b = random_tensor(&mut rng, &[5, 3], 1.0);
        let want = loop_matmul(a.data(), b.data(), 7, 5, 3);
        let got = a.matmul(&b).unwrap();
        assert!(got.data().iter().zip(&want).all(|(g, w)| (g - w).abs() < 1e-12));
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let msg = a.matmul(&b).unwrap_err().to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn structural_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_tensor(&mut rng, &[4, 6], 1.0);
        let b = random_tensor(&mut rng, &[6, 3], 1.0);
        let w = random_tensor(&mut rng, &[4, 3], 1.0);
        assert_gradients(&[a.clone(), b], |x| Ok(x[0].matmul(&x[1])?.mul(&w)?.sum()));
        assert_gradients(&[a.clone()], |x| {
            let a = &x[0];
            let t = a.transpose()?;
            let s = a.slice_cols(1, 3)?;
            let r = a.slice_rows(2, 2)?;
            let c = Tensor::concat_cols(&[s, a.clone()])?;
            let st = Tensor::stack0(&[a.clone(), a.scale(2.0)])?.select0(1)?;
            let v = Tensor::concat_rows(&[r, a.clone()])?;
            t.mul(&t)?.sum().add(&c.mul(&c)?.mean())?.add(&v.gelu().sum())?.add(&st.mul(&st)?.sum())
        });
        let bias = random_tensor(&mut rng, &[6], 1.0);
        assert_gradients(&[a.clone(), bias], |x| {
            let y = x[0].add_row_bias(&x[1])?.sigmoid();
            Ok(y.mul(&y)?.sum())
        });
        assert_gradients(&[a], |x| {
            let y = x[0].reshape(&[2, 12])?.scale(1.5).add_scalar(0.3).relu();
            Ok(y.sub(&Tensor::full(&[2, 12], 0.1))?.mul(&y)?.sum())
        });
    }

    #[test]
    fn max_stack_routes_gradient_to_maximum() {
        let a = Tensor::param(&[3], vec![1.0, 5.0, 2.0]).unwrap();
        let b = Tensor::param(&[3], vec![4.0, 0.0, 2.0]).unwrap();
        let m = Tensor::max_stack(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(m.data(), &[4.0, 5.0, 2.0]);
        m.sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![0.0, 1.0, 1.0]);
        assert_eq!(b.grad().unwrap(), vec![1.0, 0.0, 0.0]);
    }
}
