use super::Matrix;
use crate::exec::{self, Execution};

#[derive(Clone, Copy, Debug, PartialEq)]
struct Entry {
    other: u32,
    kernel: u32,
    weight: f64,
}

/// Fixed sparse map from input rows to `kernels` weighted sums per output row.
///
/// `apply` computes `out[q, k*C + c] = Σ w · in[s, c]` over the entries
/// `(s, k, w)` of row `q`. It is linear in the input; the transposed map is stored
/// alongside so both directions run row-parallel.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelMap {
    n_out: usize,
    n_in: usize,
    kernels: usize,
    offsets: Vec<usize>,
    entries: Vec<Entry>,
    t_offsets: Vec<usize>,
    t_entries: Vec<Entry>,
}

impl KernelMap {
    /// `rows[q]` lists `(input_row, kernel, weight)` for output row `q`.
    pub fn from_rows(n_in: usize, kernels: usize, rows: &[Vec<(usize, usize, f64)>]) -> Self {
        let mut offsets = Vec::with_capacity(rows.len() + 1);
        let mut entries = Vec::new();
        offsets.push(0);
        for row in rows {
            for &(s, k, w) in row {
                assert!(s < n_in && k < kernels, "kernel map entry out of range");
                entries.push(Entry { other: s as u32, kernel: k as u32, weight: w });
            }
            offsets.push(entries.len());
        }
        let mut map = KernelMap {
            n_out: rows.len(),
            n_in,
            kernels,
            offsets,
            entries,
            t_offsets: Vec::new(),
            t_entries: Vec::new(),
        };
        map.build_transpose();
        map
    }

    fn build_transpose(&mut self) {
        let mut counts = vec![0usize; self.n_in + 1];
        for e in &self.entries {
            counts[e.other as usize + 1] += 1;
        }
        for i in 0..self.n_in {
            counts[i + 1] += counts[i];
        }
        let mut cursor = counts.clone();
        let mut t = vec![Entry { other: 0, kernel: 0, weight: 0.0 }; self.entries.len()];
        for q in 0..self.n_out {
            for e in &self.entries[self.offsets[q]..self.offsets[q + 1]] {
                let slot = &mut cursor[e.other as usize];
                t[*slot] = Entry { other: q as u32, kernel: e.kernel, weight: e.weight };
                *slot += 1;
            }
        }
        self.t_offsets = counts;
        self.t_entries = t;
    }

    pub fn n_out(&self) -> usize {
        self.n_out
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn kernels(&self) -> usize {
        self.kernels
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    /// `(input_row, kernel, weight)` entries of output row `q`.
    pub fn row(&self, q: usize) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.entries[self.offsets[q]..self.offsets[q + 1]]
            .iter()
            .map(|e| (e.other as usize, e.kernel as usize, e.weight))
    }

    /// Output rows with no entries.
    pub fn empty_rows(&self) -> usize {
        (0..self.n_out).filter(|&q| self.offsets[q] == self.offsets[q + 1]).count()
    }

    pub fn apply(&self, input: &Matrix) -> Matrix {
        let c = input.cols;
        let width = self.kernels * c;
        let mut out = Matrix::zeros(self.n_out, width);
        exec::for_each_row(exec_for(self.entries.len() * c), &mut out.data, width, |q, row| {
            for e in &self.entries[self.offsets[q]..self.offsets[q + 1]] {
                let src = input.row(e.other as usize);
                let dst = &mut row[e.kernel as usize * c..(e.kernel as usize + 1) * c];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += e.weight * s;
                }
            }
        });
        out
    }

    /// Adjoint of [`apply`](Self::apply) for `c`-channel inputs.
    pub fn apply_transpose(&self, grad: &Matrix, c: usize) -> Matrix {
        debug_assert_eq!(grad.cols, self.kernels * c);
        let mut out = Matrix::zeros(self.n_in, c);
        exec::for_each_row(exec_for(self.entries.len() * c), &mut out.data, c, |s, row| {
            for e in &self.t_entries[self.t_offsets[s]..self.t_offsets[s + 1]] {
                let g = grad.row(e.other as usize);
                let src = &g[e.kernel as usize * c..(e.kernel as usize + 1) * c];
                for (d, v) in row.iter_mut().zip(src) {
                    *d += e.weight * v;
                }
            }
        });
        out
    }

    /// Block-diagonal concatenation of independent maps.
    pub fn stack(maps: &[&KernelMap]) -> KernelMap {
        let kernels = maps.first().map_or(1, |m| m.kernels);
        let mut n_in = 0;
        let mut rows = Vec::new();
        for m in maps {
            assert_eq!(m.kernels, kernels, "kernel count mismatch");
            for q in 0..m.n_out {
                rows.push(m.row(q).map(|(s, k, w)| (s + n_in, k, w)).collect());
            }
            n_in += m.n_in;
        }
        KernelMap::from_rows(n_in, kernels, &rows)
    }
}

fn exec_for(work: usize) -> Execution {
    if work >= 1 << 14 {
        Execution::current()
    } else {
        Execution::Sequential
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transpose_is_adjoint() {
        let rows = vec![
            vec![(0, 0, 0.5), (2, 1, 2.0)],
            vec![],
            vec![(1, 1, -1.0), (2, 0, 0.25), (0, 1, 1.0)],
        ];
        let map = KernelMap::from_rows(3, 2, &rows);
        let x = Matrix::from_vec(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let y = Matrix::from_vec(3, 4, (0..12).map(|i| i as f64 * 0.3 - 1.0).collect()).unwrap();
        let ax = map.apply(&x);
        let aty = map.apply_transpose(&y, 2);
        let lhs: f64 = ax.data.iter().zip(&y.data).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data.iter().zip(&aty.data).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12);
        assert_eq!(map.empty_rows(), 1);
    }

    #[test]
    fn stacking_offsets_inputs() {
        let a = KernelMap::from_rows(1, 1, &[vec![(0, 0, 1.0)]]);
        let b = KernelMap::from_rows(2, 1, &[vec![(1, 0, 3.0)]]);
        let s = KernelMap::stack(&[&a, &b]);
        assert_eq!(s.n_in(), 3);
        assert_eq!(s.row(1).collect::<Vec<_>>(), vec![(2, 0, 3.0)]);
    }
}
