// Raw row-major kernels shared by the forward ops and their vector-Jacobian products.

/// `a[n,k] * b[k,m]`
pub(crate) fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        let row = &mut out[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * m..(p + 1) * m];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `g[n,m] * b[k,m]^T`
pub(crate) fn matmul_bt(g: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    matmul(g, &transpose(b, k, m), n, m, k)
}

/// `a[n,k]^T * g[n,m]`
pub(crate) fn matmul_at(a: &[f64], g: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for i in 0..n {
        let grow = &g[i * m..(i + 1) * m];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let orow = &mut out[p * m..(p + 1) * m];
            for (o, &gv) in orow.iter_mut().zip(grow) {
                *o += av * gv;
            }
        }
    }
    out
}

pub(crate) fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

/// Geometry of a 3x3, stride-1, padding-1 patch unrolling over `[n, c, h, w]`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct PatchGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl PatchGeom {
    pub fn rows(&self) -> usize {
        self.n * self.h * self.w
    }

    pub fn cols(&self) -> usize {
        self.c * 9
    }

    /// Calls `f(input_index, patch_index)` for every in-bounds tap.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let (h, w) = (self.h as isize, self.w as isize);
        let cols = self.cols();
        for ni in 0..self.n {
            for y in 0..h {
                for x in 0..w {
                    let row = (ni * self.h + y as usize) * self.w + x as usize;
                    for ci in 0..self.c {
                        let plane = (ni * self.c + ci) * self.h * self.w;
                        for ky in 0..3isize {
                            let sy = y + ky - 1;
                            if sy < 0 || sy >= h {
                                continue;
                            }
                            for kx in 0..3isize {
                                let sx = x + kx - 1;
                                if sx < 0 || sx >= w {
                                    continue;
                                }
                                let col = ci * 9 + (ky * 3 + kx) as usize;
                                f(plane + (sy * w + sx) as usize, row * cols + col);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn im2col(x: &[f64], g: PatchGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.rows() * g.cols()];
    g.for_each_tap(|src, dst| out[dst] = x[src]);
    out
}

pub(crate) fn col2im(cols: &[f64], g: PatchGeom) -> Vec<f64> {
    let mut out = vec![0.0; g.n * g.c * g.h * g.w];
    g.for_each_tap(|dst, src| out[dst] += cols[src]);
    out
}

/// `[n*hw, c]` rows to `[n, c, hw]` planes.
pub(crate) fn rows_to_channels(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for p in 0..hw {
            for ci in 0..c {
                out[(ni * c + ci) * hw + p] = x[(ni * hw + p) * c + ci];
            }
        }
    }
    out
}

pub(crate) fn channels_to_rows(x: &[f64], n: usize, c: usize, hw: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * c * hw];
    for ni in 0..n {
        for p in 0..hw {
            for ci in 0..c {
                out[(ni * hw + p) * c + ci] = x[(ni * c + ci) * hw + p];
            }
        }
    }
    out
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transposed_products_agree_with_explicit_transpose() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        let b = [0.5, -1.0, 2.0, 0.0, 1.5, 3.0]; // 3x2
        let g = [1.0, -2.0, 0.5, 4.0]; // 2x2
        let bt = transpose(&b, 3, 2);
        assert_eq!(matmul_bt(&g, &b, 2, 3, 2), matmul(&g, &bt, 2, 2, 3));
        let at = transpose(&a, 2, 3);
        assert_eq!(matmul_at(&a, &g, 2, 3, 2), matmul(&at, &g, 3, 2, 2));
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let g = PatchGeom { n: 2, c: 2, h: 3, w: 4 };
        let x: Vec<f64> = (0..g.n * g.c * g.h * g.w).map(|i| (i as f64 * 0.37).sin()).collect();
        let y: Vec<f64> = (0..g.rows() * g.cols()).map(|i| (i as f64 * 0.11).cos()).collect();
        let lhs: f64 = im2col(&x, g).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(col2im(&y, g)).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn layout_round_trip() {
        let x: Vec<f64> = (0..24).map(f64::from).collect();
        assert_eq!(channels_to_rows(&rows_to_channels(&x, 2, 3, 4), 2, 3, 4), x);
    }
}
