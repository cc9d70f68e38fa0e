//! Householder QR with column pivoting, used for every least-squares solve.

use ndarray::{Array2, ArrayView2};

/// Relative threshold on `|R_kk| / |R_00|` below which a column counts as
/// linearly dependent.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct PivotedQr {
    // Householder vectors below the diagonal, R on and above it
    qr: Array2<f64>,
    betas: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    pub fn new(a: ArrayView2<'_, f64>) -> Self {
        let (m, n) = a.dim();
        let mut qr = a.to_owned();
        let mut perm: Vec<usize> = (0..n).collect();
        let mut betas = Vec::with_capacity(n.min(m));
        let steps = n.min(m);
        for k in 0..steps {
            // pivot on the largest remaining column norm
            let mut best = k;
            let mut best_norm = -1.0;
            for c in k..n {
                let s: f64 = (k..m).map(|r| qr[[r, c]] * qr[[r, c]]).sum();
                if s > best_norm {
                    best_norm = s;
                    best = c;
                }
            }
            if best != k {
                for r in 0..m {
                    qr.swap([r, k], [r, best]);
                }
                perm.swap(k, best);
            }
            let norm = best_norm.sqrt();
            if norm == 0.0 {
                betas.push(0.0);
                continue;
            }
            let alpha = if qr[[k, k]] > 0.0 { -norm } else { norm };
            let v0 = qr[[k, k]] - alpha;
            // v = [1, x[k+1..]/v0], beta = -v0/alpha
            for r in k + 1..m {
                qr[[r, k]] /= v0;
            }
            let beta = -v0 / alpha;
            qr[[k, k]] = alpha;
            for c in k + 1..n {
                let mut dot = qr[[k, c]];
                for r in k + 1..m {
                    dot += qr[[r, k]] * qr[[r, c]];
                }
                dot *= beta;
                qr[[k, c]] -= dot;
                for r in k + 1..m {
                    qr[[r, c]] -= dot * qr[[r, k]];
                }
            }
            betas.push(beta);
        }
        let lead = if steps > 0 { qr[[0, 0]].abs() } else { 0.0 };
        let rank = (0..steps)
            .take_while(|&k| lead > 0.0 && qr[[k, k]].abs() > RANK_TOL * lead)
            .count();
        Self {
            qr,
            betas,
            perm,
            rank,
        }
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn ncols(&self) -> usize {
        self.qr.ncols()
    }

    /// Original indices of the columns left outside the numerical rank.
    pub fn deficient_columns(&self) -> Vec<usize> {
        let mut cols = self.perm[self.rank..].to_vec();
        cols.sort_unstable();
        cols
    }

    /// `|R_00| / |R_rr|` over the leading `rank` diagonal entries.
    pub fn condition_hint(&self) -> f64 {
        if self.rank == 0 {
            return f64::INFINITY;
        }
        self.qr[[0, 0]].abs() / self.qr[[self.rank - 1, self.rank - 1]].abs()
    }

    /// Least-squares solution of `A x = b`. Requires full column rank.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let (m, n) = self.qr.dim();
        assert_eq!(b.len(), m);
        let mut y = b.to_vec();
        for (k, &beta) in self.betas.iter().enumerate() {
            if beta == 0.0 {
                continue;
            }
            let mut dot = y[k];
            for r in k + 1..m {
                dot += self.qr[[r, k]] * y[r];
            }
            dot *= beta;
            y[k] -= dot;
            for r in k + 1..m {
                y[r] -= dot * self.qr[[r, k]];
            }
        }
        let mut z = vec![0.0; n];
        for k in (0..self.rank).rev() {
            let mut s = y[k];
            for c in k + 1..self.rank {
                s -= self.qr[[k, c]] * z[c];
            }
            z[k] = s / self.qr[[k, k]];
        }
        let mut x = vec![0.0; n];
        for (k, &p) in self.perm.iter().enumerate() {
            x[p] = z[k];
        }
        x
    }
}
