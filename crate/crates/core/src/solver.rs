//! Sparse Cholesky for the block-arrow structure of a manifold-with-ends mesh.
//!
//! Vertices are ordered end by end (each end a banded block), with the
//! center vertices last. Eliminating the ends first produces no fill outside
//! the bands; the center only sees a small dense Schur complement.

use std::ops::Range;

use crate::error::{Error, Result};

/// Symmetric sparse matrix: diagonal plus strictly-off-diagonal neighbour lists.
#[derive(Debug, Clone)]
pub struct SymSparse {
    pub diag: Vec<f64>,
    pub off: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
struct BandBlock {
    range: Range<usize>,
    /// `l[i * (bw + 1) + d] = L[i][i - d]` in block-local indices.
    l: Vec<f64>,
    /// `L_B^{-1} C_B`, row-major `len x border`.
    w: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ArrowCholesky {
    n: usize,
    bw: usize,
    blocks: Vec<BandBlock>,
    border: Range<usize>,
    /// Lower Cholesky factor of the border Schur complement, row-major.
    ls: Vec<f64>,
}

impl ArrowCholesky {
    pub fn factor(a: &SymSparse, blocks: &[Range<usize>], border: Range<usize>, bw: usize) -> Result<Self> {
        let n = a.diag.len();
        let s = border.len();
        let stride = bw + 1;
        let in_border = |j: usize| border.contains(&j);

        let mut out_blocks = Vec::with_capacity(blocks.len());
        // Accumulates D - sum_B W_B^T W_B.
        let mut schur = vec![0.0; s * s];
        for (bi, j) in border.clone().enumerate() {
            schur[bi * s + bi] = a.diag[j];
            for &(k, v) in &a.off[j] {
                if in_border(k) {
                    schur[bi * s + (k - border.start)] = v;
                }
            }
        }

        for range in blocks {
            let len = range.len();
            let mut band = vec![0.0; len * stride];
            let mut c = vec![0.0; len * s];
            for (li, gi) in range.clone().enumerate() {
                band[li * stride] = a.diag[gi];
                for &(gj, v) in &a.off[gi] {
                    if range.contains(&gj) {
                        if gj < gi {
                            let d = gi - gj;
                            if d > bw {
                                return Err(Error::Solver(format!(
                                    "entry ({gi},{gj}) outside bandwidth {bw}"
                                )));
                            }
                            band[li * stride + d] = v;
                        }
                    } else if in_border(gj) {
                        c[li * s + (gj - border.start)] = v;
                    } else {
                        return Err(Error::Solver(format!("entry ({gi},{gj}) couples two end blocks")));
                    }
                }
            }
            // In-place banded Cholesky.
            for i in 0..len {
                let j0 = i.saturating_sub(bw);
                for j in j0..=i {
                    let mut sum = band[i * stride + (i - j)];
                    let k0 = j0.max(j.saturating_sub(bw));
                    for k in k0..j {
                        sum -= band[i * stride + (i - k)] * band[j * stride + (j - k)];
                    }
                    if j == i {
                        if sum <= 0.0 || !sum.is_finite() {
                            return Err(Error::Solver(format!(
                                "matrix not positive definite at row {}",
                                range.start + i
                            )));
                        }
                        band[i * stride] = sum.sqrt();
                    } else {
                        band[i * stride + (i - j)] = sum / band[j * stride];
                    }
                }
            }
            // W = L^{-1} C, column by column.
            for col in 0..s {
                for i in 0..len {
                    let mut sum = c[i * s + col];
                    for k in i.saturating_sub(bw)..i {
                        sum -= band[i * stride + (i - k)] * c[k * s + col];
                    }
                    c[i * s + col] = sum / band[i * stride];
                }
            }
            for p in 0..s {
                for q in 0..s {
                    let dot: f64 = (0..len).map(|i| c[i * s + p] * c[i * s + q]).sum();
                    schur[p * s + q] -= dot;
                }
            }
            out_blocks.push(BandBlock { range: range.clone(), l: band, w: c });
        }

        let mut ls = schur;
        for i in 0..s {
            for j in 0..=i {
                let mut sum = ls[i * s + j];
                for k in 0..j {
                    sum -= ls[i * s + k] * ls[j * s + k];
                }
                if i == j {
                    if sum <= 0.0 || !sum.is_finite() {
                        return Err(Error::Solver("border Schur complement not positive definite".into()));
                    }
                    ls[i * s + i] = sum.sqrt();
                } else {
                    ls[i * s + j] = sum / ls[j * s + j];
                }
            }
            for j in i + 1..s {
                ls[i * s + j] = 0.0;
            }
        }

        Ok(ArrowCholesky { n, bw, blocks: out_blocks, border, ls })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        debug_assert_eq!(b.len(), self.n);
        let s = self.border.len();
        let stride = self.bw + 1;
        let bw = self.bw;
        let mut x = b.to_vec();

        let mut r2: Vec<f64> = b[self.border.clone()].to_vec();
        for blk in &self.blocks {
            let y = &mut x[blk.range.clone()];
            for i in 0..y.len() {
                let mut sum = y[i];
                for k in i.saturating_sub(bw)..i {
                    sum -= blk.l[i * stride + (i - k)] * y[k];
                }
                y[i] = sum / blk.l[i * stride];
            }
            for (q, r) in r2.iter_mut().enumerate() {
                *r -= (0..y.len()).map(|i| blk.w[i * s + q] * y[i]).sum::<f64>();
            }
        }
        // Border: L_S L_S^T x2 = r2.
        for i in 0..s {
            let mut sum = r2[i];
            for k in 0..i {
                sum -= self.ls[i * s + k] * r2[k];
            }
            r2[i] = sum / self.ls[i * s + i];
        }
        for i in (0..s).rev() {
            let mut sum = r2[i];
            for k in i + 1..s {
                sum -= self.ls[k * s + i] * r2[k];
            }
            r2[i] = sum / self.ls[i * s + i];
        }
        for blk in &self.blocks {
            let y = &mut x[blk.range.clone()];
            let len = y.len();
            for (i, yi) in y.iter_mut().enumerate() {
                *yi -= (0..s).map(|q| blk.w[i * s + q] * r2[q]).sum::<f64>();
            }
            for i in (0..len).rev() {
                let mut sum = y[i];
                for k in i + 1..(i + bw + 1).min(len) {
                    sum -= blk.l[k * stride + (k - i)] * y[k];
                }
                y[i] = sum / blk.l[i * stride];
            }
        }
        x[self.border.clone()].copy_from_slice(&r2);
        x
    }
}

impl SymSparse {
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.diag
            .iter()
            .zip(&self.off)
            .enumerate()
            .map(|(i, (d, row))| d * x[i] + row.iter().map(|&(j, v)| v * x[j]).sum::<f64>())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_of(a: &SymSparse) -> Vec<Vec<f64>> {
        let n = a.diag.len();
        let mut d = vec![vec![0.0; n]; n];
        for i in 0..n {
            d[i][i] = a.diag[i];
            for &(j, v) in &a.off[i] {
                d[i][j] = v;
            }
        }
        d
    }

    /// Two banded blocks of width 2 and a border of 2 coupled to both.
    fn arrow() -> (SymSparse, Vec<Range<usize>>, Range<usize>) {
        let n = 12;
        let mut off = vec![Vec::new(); n];
        let push = |i: usize, j: usize, v: f64, off: &mut Vec<Vec<(usize, f64)>>| {
            off[i].push((j, v));
            off[j].push((i, v));
        };
        for blk in [0..5usize, 5..10] {
            for i in blk.clone() {
                if i + 1 < blk.end {
                    push(i, i + 1, -1.0, &mut off);
                }
                if i + 2 < blk.end {
                    push(i, i + 2, -0.5, &mut off);
                }
            }
        }
        push(0, 10, -1.0, &mut off);
        push(5, 10, -0.7, &mut off);
        push(6, 11, -0.3, &mut off);
        push(10, 11, -0.2, &mut off);
        let diag = (0..n).map(|i| 4.0 + i as f64 * 0.1).collect();
        (SymSparse { diag, off }, vec![0..5, 5..10], 10..12)
    }

    #[test]
    fn solves_arrow_system() {
        let (a, blocks, border) = arrow();
        let chol = ArrowCholesky::factor(&a, &blocks, border, 2).unwrap();
        let x_true: Vec<f64> = (0..12).map(|i| (i as f64 * 0.37).sin()).collect();
        let b = a.matvec(&x_true);
        let x = chol.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).abs() < 1e-13);
        }
        let d = dense_of(&a);
        assert!((d[0][10] - d[10][0]).abs() == 0.0);
    }

    #[test]
    fn rejects_indefinite() {
        let (mut a, blocks, border) = arrow();
        a.diag[3] = -1.0;
        assert!(ArrowCholesky::factor(&a, &blocks, border, 2).is_err());
    }

    #[test]
    fn rejects_out_of_band() {
        let (mut a, blocks, border) = arrow();
        a.off[0].push((4, -0.1));
        a.off[4].push((0, -0.1));
        assert!(ArrowCholesky::factor(&a, &blocks, border, 2).is_err());
    }
}
