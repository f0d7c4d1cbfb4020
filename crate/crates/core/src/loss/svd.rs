//! Thin and truncated SVD (one-sided Jacobi) with a deterministic sign
//! convention, plus the reverse-mode rule for the `U`, `Σ` outputs.

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, Matrix};

/// Rank-`k` factors `X ≈ U · diag(S) · Vᵀ`.
///
/// Columns of `U` are sign-fixed so that their largest-magnitude entry is
/// positive (first such row on ties); `V` is flipped along with it.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub u: Matrix,
    pub s: Vec<f64>,
    pub v: Matrix,
}

impl SvdFactors {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn reconstruct(&self) -> Matrix {
        let us = Matrix::from_fn(self.u.rows, self.rank(), |i, j| self.u[(i, j)] * self.s[j]);
        us.matmul(&self.v.transpose())
    }

    fn truncate(&self, k: usize) -> SvdFactors {
        SvdFactors {
            u: self.u.leading_columns(k),
            s: self.s[..k].to_vec(),
            v: self.v.leading_columns(k),
        }
    }
}

const MAX_SWEEPS: usize = 80;

/// One-sided Jacobi on the columns of a tall (`rows >= cols`) matrix.
/// Returns unsorted `(columns of A·V, V columns)`.
fn jacobi_columns(a: &Matrix) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let n = a.cols;
    let mut g: Vec<Vec<f64>> = (0..n).map(|j| a.column(j)).collect();
    let mut v: Vec<Vec<f64>> = (0..n)
        .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();

    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = dot(&g[p], &g[p]);
                let beta = dot(&g[q], &g[q]);
                let gamma = dot(&g[p], &g[q]);
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut g, p, q, c, s);
                rotate(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
    }
    (g, v)
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    for (x, y) in lo[p].iter_mut().zip(hi[0].iter_mut()) {
        let (xp, xq) = (*x, *y);
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Re-orthogonalizes `col` against `basis`; falls back to unit vectors when
/// the column carries no usable direction.
fn complete_column(col: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let m = col.len();
    let project_out = |mut x: Vec<f64>| {
        for _ in 0..2 {
            for b in basis {
                let d = dot(&x, b);
                x.iter_mut().zip(b).for_each(|(xi, bi)| *xi -= d * bi);
            }
        }
        let n = norm(&x);
        (n > 1e-6).then(|| x.into_iter().map(|v| v / n).collect::<Vec<_>>())
    };
    let n = norm(col);
    if n > 0.0 {
        if let Some(x) = project_out(col.iter().map(|v| v / n).collect()) {
            return x;
        }
    }
    for e in 0..m {
        let mut x = vec![0.0; m];
        x[e] = 1.0;
        if let Some(x) = project_out(x) {
            return x;
        }
    }
    unreachable!("basis cannot span the whole space while completing a column");
}

fn fix_signs(u: &mut Matrix, v: &mut Matrix) {
    for j in 0..u.cols {
        let mut best = 0;
        for i in 1..u.rows {
            if u[(i, j)].abs() > u[(best, j)].abs() {
                best = i;
            }
        }
        if u[(best, j)] < 0.0 {
            for i in 0..u.rows {
                u[(i, j)] = -u[(i, j)];
            }
            for i in 0..v.rows {
                v[(i, j)] = -v[(i, j)];
            }
        }
    }
}

/// Full thin SVD: `r = min(rows, cols)` components, singular values sorted
/// non-increasing, sign convention applied.
pub fn thin_svd(x: &Matrix) -> SvdFactors {
    if x.rows < x.cols {
        let t = thin_svd(&x.transpose());
        let mut u = t.v;
        let mut v = t.u;
        fix_signs(&mut u, &mut v);
        return SvdFactors { u, s: t.s, v };
    }
    let (m, n) = (x.rows, x.cols);
    let (g, vcols) = jacobi_columns(x);
    let sigma: Vec<f64> = g.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]).then(a.cmp(&b)));

    let smax = order.first().map(|&i| sigma[i]).unwrap_or(0.0);
    let mut ucols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut s = Vec::with_capacity(n);
    for &j in &order {
        let sj = sigma[j];
        let col = if sj > 1e-8 * smax && sj > 0.0 {
            g[j].iter().map(|v| v / sj).collect()
        } else {
            complete_column(&g[j], &ucols)
        };
        ucols.push(col);
        s.push(sj);
    }
    let mut u = Matrix::from_fn(m, n, |i, j| ucols[j][i]);
    let mut v = Matrix::from_fn(n, n, |i, j| vcols[order[j]][i]);
    fix_signs(&mut u, &mut v);
    SvdFactors { u, s, v }
}

pub fn truncated_svd(x: &Matrix, k: usize) -> Result<SvdFactors> {
    let r = x.rows.min(x.cols);
    if k == 0 || k > r {
        return Err(Error::invalid(format!(
            "rank {k} outside 1..={r} for a {}x{} matrix",
            x.rows, x.cols
        )));
    }
    Ok(thin_svd(x).truncate(k))
}

/// Relative width below which `σ_j² − σ_i²` is treated as a crossing.
pub const SPECTRUM_GUARD: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct SvdVjp {
    pub grad: Matrix,
    /// Contributing singular-value pairs whose gap was clamped.
    pub guarded_pairs: usize,
}

/// Cotangent of `X` given cotangents on the rank-`k` factors `U` (`m × k`)
/// and `S` (`k`). `V` is not an output of interest and carries no cotangent.
///
/// All `min(m, d)` components enter the pairwise terms, so the rule is exact
/// for the truncated map wherever the spectrum is simple.
pub fn svd_vjp(x: &Matrix, k: usize, du: &Matrix, ds: &[f64]) -> Result<SvdVjp> {
    let full = thin_svd(x);
    let r = full.rank();
    if k == 0 || k > r {
        return Err(Error::invalid(format!("rank {k} outside 1..={r}")));
    }
    if (du.rows, du.cols) != (x.rows, k) || ds.len() != k {
        return Err(Error::shape(format!(
            "svd cotangents: U {}x{}, S {} for X {}x{} rank {k}",
            du.rows,
            du.cols,
            ds.len(),
            x.rows,
            x.cols
        )));
    }
    let (u, s, v) = (&full.u, &full.s, &full.v);
    let m = x.rows;
    let smax2 = s[0] * s[0];
    let floor = SPECTRUM_GUARD * smax2;

    // UᵀŪ restricted to the k columns where Ū is non-zero (r × k).
    let mut utdu = Matrix::zeros(r, k);
    for a in 0..r {
        for b in 0..k {
            let mut acc = 0.0;
            for i in 0..m {
                acc += u[(i, a)] * du[(i, b)];
            }
            utdu[(a, b)] = acc;
        }
    }
    // Inner r × r core: (F ∘ (UᵀŪ − ŪᵀU)) · S + diag(S̄).
    let mut guarded = 0;
    let mut core = Matrix::zeros(r, r);
    for i in 0..r {
        for j in 0..r {
            if i == j {
                if i < k {
                    core[(i, i)] = ds[i];
                }
                continue;
            }
            let a = if j < k { utdu[(i, j)] } else { 0.0 };
            let b = if i < k { utdu[(j, i)] } else { 0.0 };
            let skew = a - b;
            if i >= k && j >= k {
                continue;
            }
            let mut gap = s[j] * s[j] - s[i] * s[i];
            if gap.abs() < floor {
                guarded += 1;
                gap = if gap < 0.0 || (gap == 0.0 && j < i) {
                    -floor
                } else {
                    floor
                };
            }
            core[(i, j)] = skew / gap * s[j];
        }
    }
    let vr = v; // d × r
    let mut grad = u.matmul(&core).matmul(&vr.transpose());

    // (I − UUᵀ) Ū S⁻¹ Vᵀ; vanishes when U is square.
    if m > r {
        let mut resid = du.clone();
        for b in 0..k {
            for a in 0..r {
                let coef = utdu[(a, b)];
                if coef == 0.0 {
                    continue;
                }
                for i in 0..m {
                    resid[(i, b)] -= coef * u[(i, a)];
                }
            }
        }
        for b in 0..k {
            let inv = if s[b] > 0.0 { 1.0 / s[b] } else { 0.0 };
            for i in 0..m {
                let rv = resid[(i, b)] * inv;
                if rv == 0.0 {
                    continue;
                }
                for j in 0..x.cols {
                    grad[(i, j)] += rv * vr[(j, b)];
                }
            }
        }
    }
    Ok(SvdVjp {
        grad,
        guarded_pairs: guarded / 2,
    })
}
