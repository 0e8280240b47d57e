use serde::{Deserialize, Serialize};

/// Dense lower-triangular matrix indexed by `(i, j)` with `j <= i`.
///
/// Used for the cumulative rates `r_ij`, the weights `γ_ij` and the
/// multipliers `λ_ij`, `μ_ij`. Indices are zero-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriMatrix {
    n: usize,
    data: Vec<f64>,
}

impl TriMatrix {
    pub fn zeros(n: usize) -> Self {
        Self::filled(n, 0.0)
    }

    pub fn filled(n: usize, value: f64) -> Self {
        Self {
            n,
            data: vec![value; n * (n + 1) / 2],
        }
    }

    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                data.push(f(i, j));
            }
        }
        Self { n, data }
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    fn offset(i: usize, j: usize) -> usize {
        debug_assert!(j <= i);
        i * (i + 1) / 2 + j
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[Self::offset(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[Self::offset(i, j)] = value;
    }

    #[inline]
    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[Self::offset(i, j)]
    }

    /// Entries in row-major order together with their `(i, j)` position.
    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), f64)> + '_ {
        (0..self.n)
            .flat_map(|i| (0..=i).map(move |j| (i, j)))
            .zip(self.data.iter().copied())
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Cumulative matrix `r_ij = Σ_{k=j}^{i} x_k` built from a vector.
    pub fn cumulative(x: &[f64]) -> Self {
        // direct interval sums rather than prefix differences: r_ii stays
        // bit-identical to x_i and small rates do not lose precision
        Self::from_fn(x.len(), |i, j| x[j..=i].iter().sum::<f64>())
    }
}
