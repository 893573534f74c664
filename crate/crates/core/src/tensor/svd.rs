//! Truncated SVD: Householder QR of the tall orientation, then one-sided
//! (Hestenes) Jacobi on the square triangular factor.
//!
//! Jacobi rotations are scheduled in round-robin tournament order, so each
//! step touches disjoint column pairs and may run in parallel without changing
//! the result.

use crate::error::{Error, Result};
use crate::par::{self, Exec};

use super::{axpy, dot, DenseMatrix};

const MAX_SWEEPS: usize = 80;

/// `M ≈ u · diag(s) · vt`, with `u` rows×r, `s` nonincreasing, `vt` r×cols.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: DenseMatrix,
    pub s: Vec<f64>,
    pub vt: DenseMatrix,
}

impl Svd {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Keep the leading `r` triplets.
    pub fn truncated(&self, r: usize) -> Svd {
        let r = r.min(self.rank());
        Svd {
            u: self.u.leading_cols(r),
            s: self.s[..r].to_vec(),
            vt: self.vt.leading_rows(r),
        }
    }

    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for i in 0..us.rows() {
            for (v, s) in us.row_mut(i).iter_mut().zip(&self.s) {
                *v *= s;
            }
        }
        us.matmul(&self.vt).expect("factor shapes agree")
    }
}

pub fn truncated_svd(m: &DenseMatrix, r: usize) -> Result<Svd> {
    truncated_svd_with(Exec::default(), m, r)
}

pub fn truncated_svd_with(exec: Exec, m: &DenseMatrix, r: usize) -> Result<Svd> {
    let (rows, cols) = (m.rows(), m.cols());
    let max_rank = rows.min(cols);
    if r == 0 || r > max_rank {
        return Err(Error::dim(format!(
            "rank {r} outside [1, {max_rank}] for a {rows}x{cols} matrix"
        )));
    }
    let wide = rows < cols;
    // `at` holds the columns of the tall matrix A as rows: A = M for tall M,
    // A = Mᵀ for wide M, so a wide M is already in that layout.
    let (at, n, len) = if wide {
        (m.as_slice().to_vec(), rows, cols)
    } else {
        (m.transpose().into_vec(), cols, rows)
    };
    let f = factor_tall(exec, at, n, len, r);

    let mut v_cols = DenseMatrix::zeros(n, r);
    for (k, col) in f.v_cols.iter().enumerate() {
        for (i, &x) in col.iter().enumerate() {
            v_cols.set(i, k, x);
        }
    }
    let ut = DenseMatrix::from_raw(r, len, f.u_cols.concat());
    let (u, vt) = if wide {
        (v_cols, ut)
    } else {
        (ut.transpose(), v_cols.transpose())
    };
    Ok(Svd { u, s: f.s, vt })
}

struct TallFactors {
    s: Vec<f64>,
    /// Left singular vectors of A, length `len` each.
    u_cols: Vec<Vec<f64>>,
    /// Right singular vectors of A, length `n` each.
    v_cols: Vec<Vec<f64>>,
}

struct Reflector {
    start: usize,
    v: Vec<f64>,
    beta: f64,
}

impl Reflector {
    /// `x ← (I − β v vᵀ) x` on `x[start..]`.
    fn apply(&self, x: &mut [f64]) {
        if self.beta == 0.0 {
            return;
        }
        let tail = &mut x[self.start..];
        let t = self.beta * dot(&self.v, tail);
        axpy(-t, &self.v, tail);
    }
}

/// `at` is n rows of length `len` (n ≤ len), each row a column of A.
fn factor_tall(exec: Exec, mut at: Vec<f64>, n: usize, len: usize, r: usize) -> TallFactors {
    let reflectors = householder_qr(exec, &mut at, n, len);

    // Columns of R as rows: row j keeps entries 0..=j of column j.
    let mut b: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut col = vec![0.0; n];
            col[..=j].copy_from_slice(&at[j * len..j * len + j + 1]);
            col
        })
        .collect();
    drop(at);
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    jacobi(exec, &mut b, &mut v);

    let sigma: Vec<f64> = b.iter().map(|c| super::norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]).then(i.cmp(&j)));
    order.truncate(r);

    let smax = sigma[order[0]];
    let floor = smax * f64::EPSILON * n as f64;
    let mut ur: Vec<Vec<f64>> = Vec::with_capacity(r);
    for &j in &order {
        if sigma[j] > floor && sigma[j] > 0.0 {
            let inv = 1.0 / sigma[j];
            ur.push(b[j].iter().map(|x| x * inv).collect());
        } else {
            let c = complete_basis(&ur, n);
            ur.push(c);
        }
    }

    let u_cols = par::map_owned(exec, ur, |col| {
        let mut u = vec![0.0; len];
        u[..n].copy_from_slice(&col);
        for h in reflectors.iter().rev() {
            h.apply(&mut u);
        }
        u
    });
    let s = order.iter().map(|&j| sigma[j]).collect();
    let v_cols = order.iter().map(|&j| std::mem::take(&mut v[j])).collect();
    TallFactors { s, u_cols, v_cols }
}

/// In-place QR: afterwards row j of `at` holds column j of R in entries 0..=j.
fn householder_qr(exec: Exec, at: &mut [f64], n: usize, len: usize) -> Vec<Reflector> {
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let x = &mut at[k * len + k..(k + 1) * len];
        let xnorm = super::norm(x);
        if xnorm == 0.0 {
            out.push(Reflector {
                start: k,
                v: Vec::new(),
                beta: 0.0,
            });
            continue;
        }
        let alpha = if x[0] >= 0.0 { -xnorm } else { xnorm };
        let mut v = x.to_vec();
        v[0] -= alpha;
        let vv = dot(&v, &v);
        let h = Reflector {
            start: k,
            v,
            beta: 2.0 / vv,
        };
        x[0] = alpha;
        x[1..].iter_mut().for_each(|e| *e = 0.0);
        let rest = &mut at[(k + 1) * len..n * len];
        par::for_each_chunk_mut(exec, rest, len, |_, row| h.apply(row));
        out.push(h);
    }
    out
}

/// One-sided Jacobi: rotate column pairs of B (stored as rows) until mutually
/// orthogonal, applying the same rotations to V.
fn jacobi(exec: Exec, b: &mut [Vec<f64>], v: &mut [Vec<f64>]) {
    let n = b.len();
    if n < 2 {
        return;
    }
    let tol = f64::EPSILON * (n as f64).sqrt();
    // Tournament schedule; `None` is the bye slot for odd n.
    let slots = n + n % 2;
    let mut ring: Vec<Option<usize>> = (0..n).map(Some).chain((n..slots).map(|_| None)).collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for _ in 0..slots - 1 {
            let pairs: Vec<(usize, usize)> = (0..slots / 2)
                .filter_map(|i| match (ring[i], ring[slots - 1 - i]) {
                    (Some(p), Some(q)) => Some((p.min(q), p.max(q))),
                    _ => None,
                })
                .collect();
            let work: Vec<_> = pairs
                .iter()
                .map(|&(p, q)| {
                    (
                        std::mem::take(&mut b[p]),
                        std::mem::take(&mut b[q]),
                        std::mem::take(&mut v[p]),
                        std::mem::take(&mut v[q]),
                    )
                })
                .collect();
            let done = par::map_owned(exec, work, |(mut bp, mut bq, mut vp, mut vq)| {
                let hit = rotate_pair(&mut bp, &mut bq, &mut vp, &mut vq, tol);
                (bp, bq, vp, vq, hit)
            });
            for (&(p, q), (bp, bq, vp, vq, hit)) in pairs.iter().zip(done) {
                b[p] = bp;
                b[q] = bq;
                v[p] = vp;
                v[q] = vq;
                rotated |= hit;
            }
            // Keep slot 0 fixed and rotate the rest by one.
            ring[1..].rotate_right(1);
        }
        if !rotated {
            break;
        }
    }
}

fn rotate_pair(bp: &mut [f64], bq: &mut [f64], vp: &mut [f64], vq: &mut [f64], tol: f64) -> bool {
    let alpha = dot(bp, bp);
    let beta = dot(bq, bq);
    let gamma = dot(bp, bq);
    if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
        return false;
    }
    let zeta = (beta - alpha) / (2.0 * gamma);
    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = c * t;
    rotate(bp, bq, c, s);
    rotate(vp, vq, c, s);
    true
}

fn rotate(x: &mut [f64], y: &mut [f64], c: f64, s: f64) {
    for (a, b) in x.iter_mut().zip(y.iter_mut()) {
        let (xa, yb) = (*a, *b);
        *a = c * xa - s * yb;
        *b = s * xa + c * yb;
    }
}

/// A unit vector orthogonal to every vector in `basis` (which is orthonormal).
fn complete_basis(basis: &[Vec<f64>], n: usize) -> Vec<f64> {
    for t in 0..n {
        let mut e = vec![0.0; n];
        e[t] = 1.0;
        // Two passes of Gram–Schmidt restore orthogonality to working precision.
        for _ in 0..2 {
            for q in basis {
                let c = dot(q, &e);
                axpy(-c, q, &mut e);
            }
        }
        let nrm = super::norm(&e);
        if nrm > 0.5 {
            e.iter_mut().for_each(|x| *x /= nrm);
            return e;
        }
    }
    unreachable!("basis of size < n always has a complement")
}
