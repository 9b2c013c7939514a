//! Sparse symmetric LDLᵀ factorization without pivoting.
//!
//! The matrix is supplied as a list of lower-triangular coordinates. A
//! minimum-degree ordering is computed once per pattern; nodes flagged as
//! *deferred* (constraint rows of a KKT matrix) are only eliminated after at
//! least one of their neighbours has been, which keeps pivots away from the
//! tiny regularized diagonal of the constraint block. Numeric factorization
//! follows the up-looking elimination-tree scheme used by QDLDL.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::sync::{Arc, Mutex, OnceLock};

const NONE: usize = usize::MAX;

/// Symbolic analysis: ordering, permuted upper-triangular structure and
/// elimination tree. Shared between factorizations of identical patterns.
#[derive(Debug)]
pub struct Symbolic {
    n: usize,
    perm: Vec<usize>,
    ap: Vec<usize>,
    ai: Vec<usize>,
    slot: Vec<usize>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
}

/// Signs of the pivots of the last successful factorization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Inertia {
    pub positive: usize,
    pub negative: usize,
    pub zero: usize,
}

impl Symbolic {
    /// `entries` are `(row, col)` with `row >= col`; diagonal entries are added
    /// automatically. Duplicates are allowed and summed on assembly.
    pub fn analyze(n: usize, entries: &[(usize, usize)], deferred: &[bool]) -> Symbolic {
        assert_eq!(deferred.len(), n);
        let perm = min_degree(n, entries, deferred);
        let mut iperm = vec![0; n];
        for (new, &old) in perm.iter().enumerate() {
            iperm[old] = new;
        }

        // Permuted upper-triangular coordinates: diagonals first, then entries.
        let mut coords: Vec<(usize, usize)> = (0..n).map(|i| (iperm[i], iperm[i])).collect();
        for &(r, c) in entries {
            debug_assert!(r >= c, "entries must be lower triangular");
            let (a, b) = (iperm[r], iperm[c]);
            coords.push((a.min(b), a.max(b)));
        }
        let mut order: Vec<usize> = (0..coords.len()).collect();
        order.sort_by_key(|&k| (coords[k].1, coords[k].0));

        let mut ap = vec![0usize; n + 1];
        let mut ai = Vec::with_capacity(coords.len());
        let mut slot = vec![0usize; coords.len()];
        let mut last: Option<(usize, usize)> = None;
        for &k in &order {
            let (r, c) = coords[k];
            if last != Some((r, c)) {
                ai.push(r);
                ap[c + 1] += 1;
                last = Some((r, c));
            }
            slot[k] = ai.len() - 1;
        }
        for j in 0..n {
            ap[j + 1] += ap[j];
        }
        // Only the slots of user entries are kept; diagonals sit at index i.
        let (etree, lnz) = etree(n, &ap, &ai);
        Symbolic {
            n,
            perm,
            ap,
            ai,
            slot,
            etree,
            lnz,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Storage slot of the diagonal of original index `i`.
    pub fn diag_slot(&self, i: usize) -> usize {
        self.slot[i]
    }

    /// Storage slot of user entry `k` (position in the `entries` slice).
    pub fn entry_slot(&self, k: usize) -> usize {
        self.slot[self.n + k]
    }

    pub fn nnz(&self) -> usize {
        self.ai.len()
    }

    pub fn factor_nnz(&self) -> usize {
        self.lnz.iter().sum()
    }
}

fn etree(n: usize, ap: &[usize], ai: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let mut work = vec![NONE; n];
    let mut lnz = vec![0usize; n];
    let mut tree = vec![NONE; n];
    for j in 0..n {
        work[j] = j;
        for &row in &ai[ap[j]..ap[j + 1]] {
            let mut i = row;
            while work[i] != j {
                if tree[i] == NONE {
                    tree[i] = j;
                }
                lnz[i] += 1;
                work[i] = j;
                i = tree[i];
            }
        }
    }
    (tree, lnz)
}

/// Greedy minimum-degree ordering on the graph of the pattern.
fn min_degree(n: usize, entries: &[(usize, usize)], deferred: &[bool]) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(r, c) in entries {
        if r != c {
            adj[r].push(c);
            adj[c].push(r);
        }
    }
    for a in adj.iter_mut() {
        a.sort_unstable();
        a.dedup();
    }
    let mut eliminated = vec![false; n];
    let mut released: Vec<bool> = deferred.iter().map(|&d| !d).collect();
    let mut live_plain: Vec<usize> = (0..n)
        .map(|i| adj[i].iter().filter(|&&j| !deferred[j]).count())
        .collect();
    let mut order = Vec::with_capacity(n);
    let mut scratch = Vec::new();
    for _ in 0..n {
        let mut best = NONE;
        let mut best_deg = usize::MAX;
        for i in 0..n {
            if eliminated[i] {
                continue;
            }
            let eligible = released[i] || live_plain[i] == 0;
            if eligible && adj[i].len() < best_deg {
                best = i;
                best_deg = adj[i].len();
            }
        }
        if best == NONE {
            // Every remaining node is deferred and blocked; fall back to degree.
            for i in 0..n {
                if !eliminated[i] && adj[i].len() < best_deg {
                    best = i;
                    best_deg = adj[i].len();
                }
            }
        }
        let p = best;
        eliminated[p] = true;
        order.push(p);
        let nbrs = std::mem::take(&mut adj[p]);
        for &a in &nbrs {
            scratch.clear();
            let (mut i, mut j) = (0, 0);
            let cur = &adj[a];
            while i < cur.len() || j < nbrs.len() {
                let x = if i < cur.len() { cur[i] } else { NONE };
                let y = if j < nbrs.len() { nbrs[j] } else { NONE };
                let v = if x <= y {
                    i += 1;
                    if x == y {
                        j += 1;
                    }
                    x
                } else {
                    j += 1;
                    y
                };
                if v != a && v != p {
                    scratch.push(v);
                }
            }
            std::mem::swap(&mut adj[a], &mut scratch);
            if !deferred[p] {
                live_plain[a] = live_plain[a].saturating_sub(1);
                released[a] = true;
            }
        }
        // Fill may have linked new plain neighbours; recount for touched nodes.
        for &a in &nbrs {
            live_plain[a] = adj[a].iter().filter(|&&j| !deferred[j]).count();
        }
    }
    order
}

/// Process-wide cache of symbolic analyses keyed by pattern fingerprint.
pub fn cached_symbolic(n: usize, entries: &[(usize, usize)], deferred: &[bool]) -> Arc<Symbolic> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<Symbolic>>>> = OnceLock::new();
    let mut h = DefaultHasher::new();
    n.hash(&mut h);
    entries.hash(&mut h);
    deferred.hash(&mut h);
    let key = h.finish();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    if let Some(s) = cache.lock().unwrap().get(&key) {
        return Arc::clone(s);
    }
    let sym = Arc::new(Symbolic::analyze(n, entries, deferred));
    let mut guard = cache.lock().unwrap();
    if guard.len() >= 256 {
        guard.clear();
    }
    guard.insert(key, Arc::clone(&sym));
    sym
}

/// Numeric factor for a given symbolic structure.
#[derive(Debug, Clone)]
pub struct Factor {
    sym: Arc<Symbolic>,
    /// Values of the permuted upper-triangular matrix.
    pub ax: Vec<f64>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work: Vec<f64>,
}

impl Factor {
    pub fn new(sym: Arc<Symbolic>) -> Factor {
        let n = sym.n;
        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + sym.lnz[i];
        }
        let total = lp[n];
        Factor {
            ax: vec![0.0; sym.nnz()],
            lp,
            li: vec![0; total],
            lx: vec![0.0; total],
            d: vec![0.0; n],
            dinv: vec![0.0; n],
            work: vec![0.0; n],
            sym,
        }
    }

    pub fn symbolic(&self) -> &Symbolic {
        &self.sym
    }

    /// Factorizes the values currently held in `ax`. Returns the pivot
    /// inertia; a pivot whose magnitude falls below `zero_tol` counts as zero
    /// and aborts the factorization.
    pub fn factor(&mut self, zero_tol: f64) -> Inertia {
        let n = self.sym.n;
        let (ap, ai, etree) = (&self.sym.ap, &self.sym.ai, &self.sym.etree);
        let mut next = self.lp[..n].to_vec();
        let mut marked = vec![false; n];
        let mut y_idx = Vec::with_capacity(n);
        let mut elim = Vec::with_capacity(n);
        let y = &mut self.work;
        y.iter_mut().for_each(|v| *v = 0.0);
        let mut inertia = Inertia {
            positive: 0,
            negative: 0,
            zero: 0,
        };
        for k in 0..n {
            y_idx.clear();
            self.d[k] = 0.0;
            for p in ap[k]..ap[k + 1] {
                let b = ai[p];
                if b == k {
                    self.d[k] += self.ax[p];
                    continue;
                }
                y[b] += self.ax[p];
                if !marked[b] {
                    marked[b] = true;
                    elim.clear();
                    elim.push(b);
                    let mut nx = etree[b];
                    while nx != NONE && nx < k {
                        if marked[nx] {
                            break;
                        }
                        marked[nx] = true;
                        elim.push(nx);
                        nx = etree[nx];
                    }
                    while let Some(e) = elim.pop() {
                        y_idx.push(e);
                    }
                }
            }
            for &c in y_idx.iter().rev() {
                let t = next[c];
                let yc = y[c];
                for j in self.lp[c]..t {
                    y[self.li[j]] -= self.lx[j] * yc;
                }
                self.li[t] = k;
                let l = yc * self.dinv[c];
                self.lx[t] = l;
                self.d[k] -= yc * l;
                next[c] += 1;
                y[c] = 0.0;
                marked[c] = false;
            }
            let dk = self.d[k];
            if !(dk.abs() > zero_tol) {
                inertia.zero += 1;
                return inertia;
            }
            if dk > 0.0 {
                inertia.positive += 1;
            } else {
                inertia.negative += 1;
            }
            self.dinv[k] = 1.0 / dk;
        }
        inertia
    }

    /// Solves `K x = b` in place (original ordering).
    pub fn solve(&self, b: &mut [f64], scratch: &mut Vec<f64>) {
        let n = self.sym.n;
        let perm = &self.sym.perm;
        scratch.clear();
        scratch.extend(perm.iter().map(|&p| b[p]));
        let x = scratch;
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                xi -= self.lx[j] * x[self.li[j]];
            }
            x[i] = xi;
        }
        for (new, &old) in perm.iter().enumerate() {
            b[old] = x[new];
        }
    }
}
