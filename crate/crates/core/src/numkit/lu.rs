//! Left-looking sparse LU with threshold partial pivoting.
//!
//! Each column of `A·Q` is obtained by a sparse triangular solve against the
//! columns of `L` computed so far (symbolic reach by depth-first search, then
//! numeric update in topological order), after which a pivot row is chosen.
//! The original diagonal is preferred whenever it is within `pivot_tolerance`
//! of the largest candidate, which keeps the fill predicted by a symmetric
//! ordering.

use std::collections::hash_map::DefaultHasher;
use std::collections::BTreeSet;
use std::hash::{Hash, Hasher};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use super::{NumError, SparseMatrix};

static SUBSTITUTION_PAIRS: AtomicU64 = AtomicU64::new(0);
static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Pivots smaller than this fraction of `max|A|` are numerically singular.
pub const SINGULAR_PIVOT_RELATIVE: f64 = 1e-14;

/// Process-wide number of forward/backward substitution pairs performed.
pub fn substitution_pairs() -> u64 {
    SUBSTITUTION_PAIRS.load(Ordering::Relaxed)
}

/// Process-wide number of completed sparse factorizations.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.load(Ordering::Relaxed)
}

/// Fill-reducing column ordering applied before factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ColumnOrdering {
    Natural,
    /// Minimum degree on the pattern of `A + Aᵀ`.
    #[default]
    MinimumDegree,
}

#[derive(Debug, Clone, Copy)]
pub struct LuOptions {
    pub ordering: ColumnOrdering,
    /// Diagonal pivot is kept when `|a_diag| >= pivot_tolerance * max|candidates|`.
    pub pivot_tolerance: f64,
}

impl Default for LuOptions {
    fn default() -> Self {
        Self {
            ordering: ColumnOrdering::MinimumDegree,
            pivot_tolerance: 0.1,
        }
    }
}

/// Factors with `P·A·Q = L·U`; `L` is unit lower triangular.
#[derive(Debug, Clone)]
pub struct LuFactors {
    n: usize,
    l: SparseMatrix,
    u: SparseMatrix,
    /// `pinv[original_row] = pivot position`.
    pinv: Vec<usize>,
    /// `q[k] = original column eliminated at step k`.
    q: Vec<usize>,
    fingerprint: u64,
    solves: Arc<AtomicU64>,
}

/// Factorize with the default options.
pub fn lu_factorize(a: &SparseMatrix) -> Result<LuFactors, NumError> {
    lu_factorize_with(a, LuOptions::default())
}

pub fn lu_factorize_with(a: &SparseMatrix, opts: LuOptions) -> Result<LuFactors, NumError> {
    if !a.is_square() {
        return Err(NumError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    let n = a.nrows();
    let q = match opts.ordering {
        ColumnOrdering::Natural => (0..n).collect(),
        ColumnOrdering::MinimumDegree => minimum_degree_order(a),
    };
    factorize_in_order(a, q, opts)
}

/// Factorize with default pivoting and a given column elimination order,
/// typically one already computed for a matrix of the same pattern.
pub fn lu_factorize_ordered(a: &SparseMatrix, order: &[usize]) -> Result<LuFactors, NumError> {
    if !a.is_square() {
        return Err(NumError::NotSquare {
            nrows: a.nrows(),
            ncols: a.ncols(),
        });
    }
    let mut seen = vec![false; a.nrows()];
    let valid = order.len() == a.nrows() && order.iter().all(|&c| c < seen.len() && !std::mem::replace(&mut seen[c], true));
    if !valid {
        return Err(NumError::DimensionMismatch {
            expected: a.nrows(),
            actual: order.len(),
        });
    }
    factorize_in_order(a, order.to_vec(), LuOptions::default())
}

fn factorize_in_order(a: &SparseMatrix, q: Vec<usize>, opts: LuOptions) -> Result<LuFactors, NumError> {
    let n = a.nrows();
    let threshold = SINGULAR_PIVOT_RELATIVE * a.max_abs();

    let (ap, ai, ax) = (a.col_ptr(), a.row_idx(), a.values());
    let mut lp = Vec::with_capacity(n + 1);
    let mut li: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
    let mut lx: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);
    let mut up = Vec::with_capacity(n + 1);
    let mut ui: Vec<usize> = Vec::with_capacity(4 * a.nnz() + n);
    let mut ux: Vec<f64> = Vec::with_capacity(4 * a.nnz() + n);

    const UNSET: usize = usize::MAX;
    let mut pinv = vec![UNSET; n];
    let mut x = vec![0.0f64; n];
    let mut xi = vec![0usize; n];
    let mut stack = vec![0usize; n];
    let mut pstack = vec![0usize; n];
    let mut mark = vec![usize::MAX; n];

    for k in 0..n {
        lp.push(li.len());
        up.push(ui.len());
        let col = q[k];

        // symbolic reach of A(:,col) in the graph of L, topologically ordered in xi[top..n]
        let mut top = n;
        for p in ap[col]..ap[col + 1] {
            let root = ai[p];
            if mark[root] == k {
                continue;
            }
            let mut head = 0usize;
            stack[0] = root;
            while let Some(&j) = stack.get(head) {
                let jcol = pinv[j];
                if mark[j] != k {
                    mark[j] = k;
                    pstack[head] = if jcol == UNSET { 0 } else { lp[jcol] };
                }
                let end = if jcol == UNSET {
                    0
                } else {
                    lp_end(&lp, &li, jcol)
                };
                let mut descended = false;
                let mut pp = pstack[head];
                while pp < end {
                    let i = li[pp];
                    pp += 1;
                    if mark[i] == k {
                        continue;
                    }
                    pstack[head] = pp;
                    head += 1;
                    stack[head] = i;
                    descended = true;
                    break;
                }
                if !descended {
                    top -= 1;
                    xi[top] = j;
                    if head == 0 {
                        break;
                    }
                    head -= 1;
                }
            }
        }

        // numeric sparse triangular solve x = L \ A(:,col)
        for &i in &xi[top..n] {
            x[i] = 0.0;
        }
        for p in ap[col]..ap[col + 1] {
            x[ai[p]] = ax[p];
        }
        for idx in top..n {
            let j = xi[idx];
            let jcol = pinv[j];
            if jcol == UNSET {
                continue;
            }
            let xj = x[j];
            // first entry of each L column is the unit diagonal
            for p in lp[jcol] + 1..lp_end(&lp, &li, jcol) {
                x[li[p]] -= lx[p] * xj;
            }
        }

        // pivot selection
        let mut ipiv = UNSET;
        let mut best = -1.0f64;
        for &i in &xi[top..n] {
            if pinv[i] == UNSET {
                let t = x[i].abs();
                if t > best {
                    best = t;
                    ipiv = i;
                }
            } else {
                ui.push(pinv[i]);
                ux.push(x[i]);
            }
        }
        if ipiv == UNSET {
            return Err(NumError::StructurallySingular { column: col });
        }
        if best <= threshold || best == 0.0 {
            return Err(NumError::NumericallySingular {
                column: col,
                pivot: best,
                threshold,
            });
        }
        if pinv[col] == UNSET && mark[col] == k && x[col].abs() >= opts.pivot_tolerance * best {
            ipiv = col;
        }
        let pivot = x[ipiv];
        ui.push(k);
        ux.push(pivot);
        pinv[ipiv] = k;
        li.push(ipiv);
        lx.push(1.0);
        for &i in &xi[top..n] {
            if pinv[i] == UNSET && x[i] != 0.0 {
                li.push(i);
                lx.push(x[i] / pivot);
            }
            x[i] = 0.0;
        }
    }
    lp.push(li.len());
    up.push(ui.len());
    for r in li.iter_mut() {
        *r = pinv[*r];
    }

    let l = canonical_csc(n, lp, li, lx)?;
    let u = canonical_csc(n, up, ui, ux)?;
    FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
    Ok(LuFactors {
        n,
        l,
        u,
        pinv,
        q,
        fingerprint: fingerprint(a),
        solves: Arc::new(AtomicU64::new(0)),
    })
}

/// End of L column `jcol` while the factorization is in progress.
#[inline]
fn lp_end(lp: &[usize], li: &[usize], jcol: usize) -> usize {
    if jcol + 1 < lp.len() {
        lp[jcol + 1]
    } else {
        li.len()
    }
}

fn canonical_csc(
    n: usize,
    ptr: Vec<usize>,
    idx: Vec<usize>,
    val: Vec<f64>,
) -> Result<SparseMatrix, NumError> {
    let mut trips = Vec::with_capacity(idx.len());
    for c in 0..n {
        for p in ptr[c]..ptr[c + 1] {
            trips.push((idx[p], c, val[p]));
        }
    }
    SparseMatrix::from_triplets(n, n, &trips)
}

fn fingerprint(a: &SparseMatrix) -> u64 {
    let mut h = DefaultHasher::new();
    a.nrows().hash(&mut h);
    a.ncols().hash(&mut h);
    a.col_ptr().hash(&mut h);
    a.row_idx().hash(&mut h);
    for v in a.values() {
        v.to_bits().hash(&mut h);
    }
    h.finish()
}

/// Minimum-degree ordering of the symmetric pattern `A + Aᵀ` (diagonal ignored),
/// using an explicit elimination graph. Ties break toward the lower index.
pub fn minimum_degree_order(a: &SparseMatrix) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (r, c, _) in a.triplets() {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for list in &mut adj {
        list.sort_unstable();
        list.dedup();
    }
    let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some((_, p)) = queue.pop_first() {
        order.push(p);
        let nbrs = std::mem::take(&mut adj[p]);
        for &u in &nbrs {
            queue.remove(&(adj[u].len(), u));
            // Neighbours of u become the union of its old ones and the clique, minus p and u.
            merged.clear();
            let (old, mut i, mut j) = (&adj[u], 0, 0);
            while i < old.len() || j < nbrs.len() {
                let next = match (old.get(i), nbrs.get(j)) {
                    (Some(&x), Some(&y)) if x == y => {
                        i += 1;
                        j += 1;
                        x
                    }
                    (Some(&x), Some(&y)) if x < y => {
                        i += 1;
                        x
                    }
                    (Some(&x), None) => {
                        i += 1;
                        x
                    }
                    (_, Some(&y)) => {
                        j += 1;
                        y
                    }
                    (None, None) => unreachable!(),
                };
                if next != p && next != u {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            queue.insert((adj[u].len(), u));
        }
    }
    order
}

impl LuFactors {
    pub fn dim(&self) -> usize {
        self.n
    }

    /// Original column eliminated at each step.
    pub fn column_order(&self) -> &[usize] {
        &self.q
    }

    /// Unit lower factor, rows in pivot order.
    pub fn lower(&self) -> &SparseMatrix {
        &self.l
    }

    pub fn upper(&self) -> &SparseMatrix {
        &self.u
    }

    /// `row_perm()[k]` is the original row placed at pivot position `k`.
    pub fn row_perm(&self) -> Vec<usize> {
        let mut p = vec![0; self.n];
        for (orig, &k) in self.pinv.iter().enumerate() {
            p[k] = orig;
        }
        p
    }

    /// `col_perm()[k]` is the original column eliminated at step `k`.
    pub fn col_perm(&self) -> &[usize] {
        &self.q
    }

    /// Hash of the factored matrix (pattern and values).
    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn fill(&self) -> usize {
        self.l.nnz() + self.u.nnz()
    }

    /// Substitution pairs performed with these factors (shared across clones).
    pub fn solve_count(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    /// Solve `A x = b` with one forward and one backward substitution.
    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>, NumError> {
        if b.len() != self.n {
            return Err(NumError::DimensionMismatch {
                expected: self.n,
                actual: b.len(),
            });
        }
        let mut y = vec![0.0; self.n];
        for (i, &bi) in b.iter().enumerate() {
            y[self.pinv[i]] = bi;
        }
        let (lp, li, lx) = (self.l.col_ptr(), self.l.row_idx(), self.l.values());
        for j in 0..self.n {
            let yj = y[j];
            if yj == 0.0 {
                continue;
            }
            for p in lp[j]..lp[j + 1] {
                let r = li[p];
                if r > j {
                    y[r] -= lx[p] * yj;
                }
            }
        }
        let (up, ui, ux) = (self.u.col_ptr(), self.u.row_idx(), self.u.values());
        for j in (0..self.n).rev() {
            let last = up[j + 1] - 1;
            debug_assert_eq!(ui[last], j);
            y[j] /= ux[last];
            let yj = y[j];
            if yj == 0.0 {
                continue;
            }
            for p in up[j]..last {
                y[ui[p]] -= ux[p] * yj;
            }
        }
        let mut x = vec![0.0; self.n];
        for (k, &c) in self.q.iter().enumerate() {
            x[c] = y[k];
        }
        self.solves.fetch_add(1, Ordering::Relaxed);
        SUBSTITUTION_PAIRS.fetch_add(1, Ordering::Relaxed);
        Ok(x)
    }
}

/// Free-function form of [`LuFactors::solve`].
pub fn lu_solve(f: &LuFactors, b: &[f64]) -> Result<Vec<f64>, NumError> {
    f.solve(b)
}
