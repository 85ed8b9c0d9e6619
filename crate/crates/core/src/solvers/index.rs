use rayon::prelude::*;

use crate::contracts::Layering;
use crate::numeric::CompensatedSum;

/// One tail-sum level sorted ascending, with suffix sums of weight and
/// weighted value, answering stop-loss and tail-probability queries in
/// `O(log m)`.
#[derive(Debug, Clone)]
pub(crate) struct SortedLevel {
    values: Vec<f64>,
    suffix_w: Vec<f64>,
    suffix_wv: Vec<f64>,
}

impl SortedLevel {
    fn new(values: impl Iterator<Item = f64>, weights: &[f64]) -> Self {
        let mut atoms: Vec<(f64, f64)> = values.zip(weights.iter().copied()).collect();
        atoms.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let m = atoms.len();
        let mut suffix_w = vec![0.0; m + 1];
        let mut suffix_wv = vec![0.0; m + 1];
        let (mut sw, mut swv) = (CompensatedSum::new(), CompensatedSum::new());
        for (i, &(v, w)) in atoms.iter().enumerate().rev() {
            sw.add(w);
            swv.add(w * v);
            suffix_w[i] = sw.value();
            suffix_wv[i] = swv.value();
        }
        Self { values: atoms.into_iter().map(|a| a.0).collect(), suffix_w, suffix_wv }
    }

    pub(crate) fn values(&self) -> &[f64] {
        &self.values
    }

    /// `E[(U - a)_+]`.
    pub(crate) fn stop_loss(&self, a: f64) -> f64 {
        let i = self.values.partition_point(|&v| v <= a);
        (self.suffix_wv[i] - a * self.suffix_w[i]).max(0.0)
    }

    /// `P(U > q)`.
    pub(crate) fn prob_gt(&self, q: f64) -> f64 {
        self.suffix_w[self.values.partition_point(|&v| v <= q)]
    }

    /// `P(U >= q)`.
    pub(crate) fn prob_ge(&self, q: f64) -> f64 {
        self.suffix_w[self.values.partition_point(|&v| v < q)]
    }

    pub(crate) fn mean(&self) -> f64 {
        self.suffix_wv[0]
    }
}

/// Sorted views of the block tail sums `S_k = X_k + ... + X_n`, `k = 1..n`.
#[derive(Debug, Clone)]
pub(crate) struct TailIndex {
    levels: Vec<SortedLevel>,
}

impl TailIndex {
    pub(crate) fn new(layers: &Layering<'_>) -> Self {
        let tails = layers.tails();
        let weights = layers.weights();
        let levels = (0..layers.n_blocks())
            .into_par_iter()
            .map(|k| SortedLevel::new(tails.column(k).iter().copied(), weights))
            .collect();
        Self { levels }
    }

    pub(crate) fn level(&self, k: usize) -> &SortedLevel {
        &self.levels[k]
    }

    pub(crate) fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// `E[S_k - a)_+]` with the convention `S_{n+1} = 0`.
    pub(crate) fn stop_loss(&self, k: usize, a: f64) -> f64 {
        match self.levels.get(k) {
            Some(level) => level.stop_loss(a),
            None => (-a).max(0.0),
        }
    }
}
