//! Sparse symmetric matrices and a prefactored envelope Cholesky solver.
//!
//! The factorization reorders unknowns (reverse Cuthill-McKee or the given
//! order, whichever yields the smaller envelope), then stores each row of the
//! lower factor contiguously from its first nonzero column to the diagonal.
//! Mesh Laplacians have narrow, dense-ish envelopes after ordering, so the
//! inner loops are contiguous dot products.

use std::collections::VecDeque;

use crate::error::{LensError, Result};

/// Accumulates symmetric entries; duplicates are summed.
#[derive(Clone, Debug, Default)]
pub struct TripletBuilder {
    n: usize,
    entries: Vec<(usize, usize, f64)>,
}

impl TripletBuilder {
    pub fn new(n: usize) -> Self {
        TripletBuilder {
            n,
            entries: Vec::new(),
        }
    }

    /// Adds `value` at `(i, j)` and, off the diagonal, at `(j, i)`.
    pub fn add_symmetric(&mut self, i: usize, j: usize, value: f64) {
        debug_assert!(i < self.n && j < self.n);
        self.entries.push((i, j, value));
        if i != j {
            self.entries.push((j, i, value));
        }
    }

    pub fn build(mut self) -> SymmetricMatrix {
        self.entries.sort_unstable_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.n + 1];
        let mut cols = Vec::with_capacity(self.entries.len());
        let mut vals: Vec<f64> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(j);
                vals.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.n {
            row_ptr[i + 1] += row_ptr[i];
        }
        SymmetricMatrix {
            n: self.n,
            row_ptr,
            cols,
            vals,
        }
    }
}

/// Compressed sparse rows holding both triangles.
#[derive(Clone, Debug, PartialEq)]
pub struct SymmetricMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.cols[r.clone()].binary_search(&j) {
            Ok(k) => self.vals[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| self.row(i).map(|(j, v)| v * x[j]).sum())
            .collect()
    }

    fn degree(&self, i: usize) -> usize {
        self.row_ptr[i + 1] - self.row_ptr[i]
    }

    fn neighbors(&self, i: usize) -> &[usize] {
        &self.cols[self.row_ptr[i]..self.row_ptr[i + 1]]
    }
}

/// Reverse Cuthill-McKee ordering, one pseudo-peripheral start per
/// connected component. Returns `order[new] = old`.
pub fn reverse_cuthill_mckee(m: &SymmetricMatrix) -> Vec<usize> {
    let n = m.dim();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&i| (m.degree(i), i));
    for &seed in &by_degree {
        if visited[seed] {
            continue;
        }
        let start = pseudo_peripheral(m, seed);
        let mut queue = VecDeque::from([start]);
        visited[start] = true;
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = m
                .neighbors(v)
                .iter()
                .copied()
                .filter(|&u| u != v && !visited[u])
                .collect();
            next.sort_by_key(|&u| (m.degree(u), u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Breadth-first levels from `start` (component only).
fn bfs_levels(m: &SymmetricMatrix, start: usize) -> Vec<Vec<usize>> {
    let mut seen = vec![false; m.dim()];
    seen[start] = true;
    let mut levels = vec![vec![start]];
    loop {
        let mut next = Vec::new();
        for &v in levels.last().unwrap() {
            for &u in m.neighbors(v) {
                if !seen[u] {
                    seen[u] = true;
                    next.push(u);
                }
            }
        }
        if next.is_empty() {
            return levels;
        }
        levels.push(next);
    }
}

fn pseudo_peripheral(m: &SymmetricMatrix, seed: usize) -> usize {
    let mut current = seed;
    let mut depth = bfs_levels(m, current).len();
    loop {
        let levels = bfs_levels(m, current);
        let candidate = *levels
            .last()
            .unwrap()
            .iter()
            .min_by_key(|&&u| (m.degree(u), u))
            .unwrap();
        let cand_depth = bfs_levels(m, candidate).len();
        if cand_depth > depth {
            current = candidate;
            depth = cand_depth;
        } else {
            return current;
        }
    }
}

fn envelope_firsts(m: &SymmetricMatrix, order: &[usize]) -> (Vec<usize>, usize) {
    let n = m.dim();
    let mut inv = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        inv[old] = new;
    }
    let mut first = vec![0usize; n];
    let mut size = 0usize;
    for (new, &old) in order.iter().enumerate() {
        let f = m
            .neighbors(old)
            .iter()
            .map(|&j| inv[j])
            .filter(|&j| j <= new)
            .min()
            .unwrap_or(new)
            .min(new);
        first[new] = f;
        size += new - f + 1;
    }
    (first, size)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        acc[0] += x[0] * y[0];
        acc[1] += x[1] * y[1];
        acc[2] += x[2] * y[2];
        acc[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Lower-triangular Cholesky factor `P A P^T = L L^T` in envelope storage.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    n: usize,
    /// `order[new] = old`.
    order: Vec<usize>,
    first: Vec<usize>,
    offsets: Vec<usize>,
    values: Vec<f64>,
}

impl CholeskyFactor {
    pub fn factor(m: &SymmetricMatrix) -> Result<Self> {
        let n = m.dim();
        let natural: Vec<usize> = (0..n).collect();
        let rcm = reverse_cuthill_mckee(m);
        let (first_nat, size_nat) = envelope_firsts(m, &natural);
        let (first_rcm, size_rcm) = envelope_firsts(m, &rcm);
        let (order, first) = if size_rcm < size_nat {
            (rcm, first_rcm)
        } else {
            (natural, first_nat)
        };
        let mut inv = vec![0usize; n];
        for (new, &old) in order.iter().enumerate() {
            inv[old] = new;
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut total = 0usize;
        for i in 0..n {
            offsets.push(total);
            total += i - first[i] + 1;
        }
        offsets.push(total);
        let mut values = vec![0.0f64; total];
        for (new, &old) in order.iter().enumerate() {
            for (j, v) in m.row(old) {
                let jn = inv[j];
                if jn <= new {
                    values[offsets[new] + jn - first[new]] = v;
                }
            }
        }

        for i in 0..n {
            let fi = first[i];
            let (done, rest) = values.split_at_mut(offsets[i]);
            let row_i = &mut rest[..i - fi + 1];
            for j in fi..i {
                let fj = first[j];
                let k0 = fi.max(fj);
                let row_j = &done[offsets[j]..offsets[j + 1]];
                let s = dot(&row_i[k0 - fi..j - fi], &row_j[k0 - fj..j - fj]);
                let ljj = row_j[j - fj];
                row_i[j - fi] = (row_i[j - fi] - s) / ljj;
            }
            let off = &row_i[..i - fi];
            let d = row_i[i - fi] - dot(off, off);
            if !(d > 0.0) || !d.is_finite() {
                return Err(LensError::NotPositiveDefinite {
                    pivot: order[i],
                    value: d,
                });
            }
            row_i[i - fi] = d.sqrt();
        }
        Ok(CholeskyFactor {
            n,
            order,
            first,
            offsets,
            values,
        })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Stored entries of the factor.
    pub fn envelope_size(&self) -> usize {
        self.values.len()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        if b.len() != self.n {
            return Err(LensError::DimensionMismatch {
                expected: self.n,
                found: b.len(),
            });
        }
        let mut y: Vec<f64> = self.order.iter().map(|&old| b[old]).collect();
        // L y = P b
        for i in 0..self.n {
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            let s = dot(&row[..i - fi], &y[fi..i]);
            y[i] = (y[i] - s) / row[i - fi];
        }
        // L^T x = y
        for i in (0..self.n).rev() {
            let fi = self.first[i];
            let row = &self.values[self.offsets[i]..self.offsets[i + 1]];
            y[i] /= row[i - fi];
            let xi = y[i];
            for (yk, &l) in y[fi..i].iter_mut().zip(&row[..i - fi]) {
                *yk -= l * xi;
            }
        }
        let mut x = vec![0.0; self.n];
        for (new, &old) in self.order.iter().enumerate() {
            x[old] = y[new];
        }
        Ok(x)
    }
}
