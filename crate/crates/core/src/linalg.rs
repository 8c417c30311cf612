//! Dense matrix primitives shared by the estimators.
//!
//! Matrices are double precision and row-major throughout the crate; that is
//! the one global layout convention. Probe matrices store one probe per
//! column. Nothing here is tuned for large dense work — the point of the
//! crate is to avoid materializing anything big — but the kernels are laid
//! out so the inner loops stream contiguous rows.

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

/// Row-major dense matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Default for DenseMatrix {
    fn default() -> Self {
        DenseMatrix::zeros(0, 0)
    }
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::shape(
                format!("{rows}x{cols} = {} entries", rows * cols),
                format!("{} entries", data.len()),
            ));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Builds from rows of a nested slice; handy in tests.
    pub fn from_rows(rows: &[&[f64]]) -> Self {
        let r = rows.len();
        let c = if r == 0 { 0 } else { rows[0].len() };
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        DenseMatrix {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn col_to_vec(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self.get(r, c)).collect()
    }

    pub fn set_col(&mut self, c: usize, v: &[f64]) {
        assert_eq!(v.len(), self.rows);
        for (r, &x) in v.iter().enumerate() {
            self.set(r, c, x);
        }
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut out = DenseMatrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.set(c, r, self.get(r, c));
            }
        }
        out
    }

    /// Sum of squared entries.
    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &x| m.max(x.abs()))
    }

    pub fn trace(&self) -> f64 {
        let n = self.rows.min(self.cols);
        (0..n).map(|i| self.get(i, i)).sum()
    }

    /// self * other.
    pub fn matmul(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = DenseMatrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (k, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let b_row = other.row(k);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ik * b;
                }
            }
        }
        out
    }

    /// selfᵀ * other (both indexed by their shared row dimension).
    pub fn matmul_tn(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.rows, other.rows, "matmul_tn row dimension");
        let mut out = DenseMatrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(i);
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b;
                }
            }
        }
        out
    }

    /// self * otherᵀ; the inner loops run over contiguous rows of both sides.
    pub fn matmul_nt(&self, other: &DenseMatrix) -> DenseMatrix {
        assert_eq!(self.cols, other.cols, "matmul_nt shared column dimension");
        let mut out = DenseMatrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                let b_row = other.row(j);
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc += a * b;
                }
                out.set(i, j, acc);
            }
        }
        out
    }

    /// self(m×k) · wᵀ where `w` is a row-major `w_rows x k` slice. Used on
    /// the hot path so weight tensors are never copied out of the flat
    /// parameter vector.
    pub fn matmul_nt_slice(&self, w: &[f64], w_rows: usize) -> DenseMatrix {
        let k = self.cols;
        assert_eq!(w.len(), w_rows * k, "weight slice shape");
        let mut out = DenseMatrix::zeros(self.rows, w_rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (j, o) in out_row.iter_mut().enumerate() {
                let w_row = &w[j * k..(j + 1) * k];
                let mut acc = 0.0;
                for (&a, &b) in a_row.iter().zip(w_row) {
                    acc += a * b;
                }
                *o = acc;
            }
        }
        out
    }

    /// self(m×k) · w where `w` is a row-major `k x w_cols` slice.
    pub fn matmul_slice(&self, w: &[f64], w_cols: usize) -> DenseMatrix {
        let k = self.cols;
        assert_eq!(w.len(), k * w_cols, "weight slice shape");
        let mut out = DenseMatrix::zeros(self.rows, w_cols);
        for i in 0..self.rows {
            let a_row = self.row(i);
            let out_row = out.row_mut(i);
            for (kk, &a_ik) in a_row.iter().enumerate() {
                if a_ik == 0.0 {
                    continue;
                }
                let w_row = &w[kk * w_cols..(kk + 1) * w_cols];
                for (o, &b) in out_row.iter_mut().zip(w_row) {
                    *o += a_ik * b;
                }
            }
        }
        out
    }

    /// Accumulates selfᵀ · other into a row-major `cols(self) x cols(other)`
    /// slice (gradient blocks of the flat parameter vector).
    pub fn matmul_tn_into(&self, other: &DenseMatrix, out: &mut [f64]) {
        assert_eq!(self.rows, other.rows, "matmul_tn_into row dimension");
        assert_eq!(out.len(), self.cols * other.cols, "output slice shape");
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, &a_ki) in a_row.iter().enumerate() {
                if a_ki == 0.0 {
                    continue;
                }
                let out_row = &mut out[i * other.cols..(i + 1) * other.cols];
                for (o, &b) in out_row.iter_mut().zip(b_row) {
                    *o += a_ki * b;
                }
            }
        }
    }

    /// Σ_ij self_ij * other_ij; equals tr(selfᵀ · other).
    pub fn dot(&self, other: &DenseMatrix) -> f64 {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum()
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &DenseMatrix) {
        assert_eq!(self.rows, other.rows);
        assert_eq!(self.cols, other.cols);
        for (o, &x) in self.data.iter_mut().zip(&other.data) {
            *o += alpha * x;
        }
    }
}

/// Probe column distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeDistribution {
    Rademacher,
    Gaussian,
}

impl ProbeDistribution {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProbeDistribution::Rademacher => "rademacher",
            ProbeDistribution::Gaussian => "gaussian",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "rademacher" => Ok(ProbeDistribution::Rademacher),
            "gaussian" => Ok(ProbeDistribution::Gaussian),
            other => Err(Error::invalid(format!(
                "unknown probe distribution `{other}`"
            ))),
        }
    }
}

/// Specification of one probe matrix draw. Identical specs reproduce
/// identical matrices bit for bit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeSpec {
    pub distribution: ProbeDistribution,
    pub count: usize,
    pub seed: u64,
}

/// Draws a `dim x spec.count` probe matrix. Columns are filled in order, so
/// the stream is a pure function of (dim, spec).
pub fn draw_probes(dim: usize, spec: &ProbeSpec) -> Result<DenseMatrix> {
    if dim == 0 {
        return Err(Error::invalid("probe dimension must be at least 1"));
    }
    if spec.count == 0 {
        return Err(Error::invalid("probe count must be at least 1"));
    }
    let mut rng = SplitMix64::new(spec.seed);
    let mut m = DenseMatrix::zeros(dim, spec.count);
    for c in 0..spec.count {
        for r in 0..dim {
            let x = match spec.distribution {
                ProbeDistribution::Rademacher => rng.next_rademacher(),
                ProbeDistribution::Gaussian => rng.next_standard_normal(),
            };
            m.set(r, c, x);
        }
    }
    Ok(m)
}

/// Relative pivot threshold below which sketch columns are treated as
/// numerically rank deficient and dropped.
pub const QR_PIVOT_RTOL: f64 = 1e-12;

/// Thin QR of a tall matrix via Householder reflections with greedy column
/// pivoting. Returns Q with orthonormal columns spanning range(a); columns
/// whose pivot falls below `QR_PIVOT_RTOL` times the largest pivot are
/// dropped, so a rank-deficient input yields a narrower Q. Reflector signs
/// are normalized so that a matrix that already has orthonormal columns is
/// returned unchanged.
pub fn thin_qr(a: &DenseMatrix) -> Result<DenseMatrix> {
    let (n, k) = (a.rows(), a.cols());
    if n < k {
        return Err(Error::invalid(format!(
            "thin_qr needs rows >= cols, got {n}x{k}"
        )));
    }
    if k == 0 {
        return Ok(DenseMatrix::zeros(n, 0));
    }

    // Work on the transpose so every column of `a` is a contiguous row of
    // `w`; reflector k is stored in row perm[k] from position k onward.
    let w_mat = a.transpose();
    let mut w = w_mat.data().to_vec(); // k rows of length n
    fn row(w: &[f64], n: usize, c: usize) -> &[f64] {
        &w[c * n..(c + 1) * n]
    }

    let mut perm: Vec<usize> = (0..k).collect();
    let mut betas: Vec<f64> = Vec::with_capacity(k);
    let mut diag_signs: Vec<f64> = Vec::with_capacity(k);

    // Running squared norms of the trailing columns, downdated after each
    // step and recomputed when cancellation makes them unreliable.
    let mut col_norms_sq: Vec<f64> = (0..k)
        .map(|c| row(&w, n, c).iter().map(|x| x * x).sum())
        .collect();
    let orig_norms_sq = col_norms_sq.clone();

    let mut max_pivot = 0.0f64;
    let mut rank = 0usize;

    for step in 0..k {
        // Pick the remaining column with the largest trailing norm.
        let mut best = step;
        for c in step + 1..k {
            if col_norms_sq[perm[c]] > col_norms_sq[perm[best]] {
                best = c;
            }
        }
        perm.swap(step, best);
        let col = perm[step];

        // Exact trailing norm of the pivot column.
        let norm_sq: f64 = row(&w, n, col)[step..].iter().map(|x| x * x).sum();
        let norm = norm_sq.sqrt();
        if step == 0 {
            max_pivot = norm;
        }
        if norm <= QR_PIVOT_RTOL * max_pivot || norm == 0.0 {
            break; // remaining columns are numerically in the span already
        }

        // Householder vector v = x + sign(x0)*||x||*e1, stored in place.
        let x0 = w[col * n + step];
        let sign = if x0 >= 0.0 { 1.0 } else { -1.0 };
        let v0 = x0 + sign * norm;
        w[col * n + step] = v0;
        let v_norm_sq: f64 = row(&w, n, col)[step..].iter().map(|x| x * x).sum();
        let beta = 2.0 / v_norm_sq;
        betas.push(beta);
        // R_kk after reflection is -sign*norm; record its sign so Q columns
        // can be flipped to make the implicit R diagonal nonnegative.
        diag_signs.push(-sign);

        // Apply the reflector to the remaining columns and downdate norms.
        for c in step + 1..k {
            let cc = perm[c];
            let (v_slice, target) = if col < cc {
                let (lo, hi) = w.split_at_mut(cc * n);
                (&lo[col * n + step..(col + 1) * n], &mut hi[step..n])
            } else {
                let (lo, hi) = w.split_at_mut(col * n);
                let target = &mut lo[cc * n + step..(cc + 1) * n];
                (&hi[step..n], target)
            };
            let mut proj = 0.0;
            for (&v, &t) in v_slice.iter().zip(target.iter()) {
                proj += v * t;
            }
            proj *= beta;
            for (t, &v) in target.iter_mut().zip(v_slice) {
                *t -= proj * v;
            }
            let head = w[cc * n + step];
            let down = col_norms_sq[cc] - head * head;
            col_norms_sq[cc] = if down > 1e-8 * orig_norms_sq[cc] {
                down.max(0.0)
            } else {
                row(&w, n, cc)[step + 1..].iter().map(|x| x * x).sum()
            };
        }
        // The processed column no longer participates in pivot selection.
        col_norms_sq[col] = 0.0;
        rank += 1;
    }

    // Accumulate Q = H_0 ... H_{rank-1} applied to the leading identity
    // slab, kept transposed (rank rows of length n) for contiguous access.
    let mut q = vec![0.0; rank * n];
    for c in 0..rank {
        q[c * n + c] = 1.0;
    }
    for step in (0..rank).rev() {
        let col = perm[step];
        let beta = betas[step];
        let v_slice = &w[col * n + step..(col + 1) * n];
        for c in 0..rank {
            let q_row = &mut q[c * n + step..(c + 1) * n];
            let mut proj = 0.0;
            for (&v, &t) in v_slice.iter().zip(q_row.iter()) {
                proj += v * t;
            }
            proj *= beta;
            for (t, &v) in q_row.iter_mut().zip(v_slice) {
                *t -= proj * v;
            }
        }
    }
    let mut out = DenseMatrix::zeros(n, rank);
    for (c, &s) in diag_signs.iter().enumerate() {
        let flip = if s < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            out.set(i, c, flip * q[c * n + i]);
        }
    }
    Ok(out)
}

/// B = (I - QQᵀ) T for a Q with orthonormal columns. An empty Q returns T
/// unchanged; a Q spanning the whole space returns zeros.
pub fn project_complement(q: &DenseMatrix, t: &DenseMatrix) -> Result<DenseMatrix> {
    if q.rows() != t.rows() {
        return Err(Error::shape(
            format!("{} rows", q.rows()),
            format!("{} rows", t.rows()),
        ));
    }
    if q.cols() == 0 {
        return Ok(t.clone());
    }
    let coeff = q.matmul_tn(t); // Qᵀ T
    let mut out = t.clone();
    let reconstructed = q.matmul(&coeff);
    out.scaled_add(-1.0, &reconstructed);
    Ok(out)
}
