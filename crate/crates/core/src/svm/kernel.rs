use std::collections::{BTreeMap, HashMap};
use std::ops::Deref;
use std::sync::Arc;

#[inline]
pub fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let cx = x.chunks_exact(4);
    let cy = y.chunks_exact(4);
    let (rx, ry) = (cx.remainder(), cy.remainder());
    for (a, b) in cx.zip(cy) {
        for k in 0..4 {
            let d = a[k] - b[k];
            acc[k] += d * d;
        }
    }
    let mut tail = 0.0;
    for (a, b) in rx.iter().zip(ry) {
        tail += (a - b) * (a - b);
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn rbf(gamma: f64, x: &[f64], y: &[f64]) -> f64 {
    (-gamma * squared_distance(x, y)).exp()
}

/// Full kernel matrix, row-major.
pub struct Gram {
    n: usize,
    data: Vec<f64>,
}

impl Gram {
    pub fn compute(xs: &[Vec<f64>], gamma: f64) -> Self {
        let n = xs.len();
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
            for j in 0..i {
                let k = rbf(gamma, &xs[i], &xs[j]);
                data[i * n + j] = k;
                data[j * n + i] = k;
            }
        }
        Self { n, data }
    }

    /// Kernel matrix of a subset of the rows of `self`.
    pub fn subset(&self, idx: &[usize]) -> Gram {
        let m = idx.len();
        let mut data = Vec::with_capacity(m * m);
        for &i in idx {
            let row = &self.data[i * self.n..(i + 1) * self.n];
            data.extend(idx.iter().map(|&j| row[j]));
        }
        Gram { n: m, data }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn bytes(n: usize) -> usize {
        n * n * std::mem::size_of::<f64>()
    }
}

pub(crate) enum Row<'a> {
    Borrowed(&'a [f64]),
    Shared(Arc<[f64]>),
}

impl Deref for Row<'_> {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        match self {
            Row::Borrowed(s) => s,
            Row::Shared(a) => a,
        }
    }
}

/// Least-recently-used kernel rows under a byte budget.
pub(crate) struct LruRows<'a> {
    xs: &'a [Vec<f64>],
    gamma: f64,
    capacity: usize,
    clock: u64,
    rows: HashMap<usize, (Arc<[f64]>, u64)>,
    order: BTreeMap<u64, usize>,
}

impl<'a> LruRows<'a> {
    pub fn new(xs: &'a [Vec<f64>], gamma: f64, budget_bytes: usize) -> Self {
        let row_bytes = xs.len().max(1) * std::mem::size_of::<f64>();
        Self {
            xs,
            gamma,
            capacity: (budget_bytes / row_bytes).max(2),
            clock: 0,
            rows: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    fn get(&mut self, i: usize) -> Arc<[f64]> {
        self.clock += 1;
        if let Some((row, stamp)) = self.rows.get_mut(&i) {
            self.order.remove(stamp);
            *stamp = self.clock;
            self.order.insert(self.clock, i);
            return row.clone();
        }
        if self.rows.len() >= self.capacity {
            if let Some((_, victim)) = self.order.pop_first() {
                self.rows.remove(&victim);
            }
        }
        let xi = &self.xs[i];
        let row: Arc<[f64]> = self.xs.iter().map(|xj| rbf(self.gamma, xi, xj)).collect();
        self.rows.insert(i, (row.clone(), self.clock));
        self.order.insert(self.clock, i);
        row
    }
}

pub(crate) enum RowSource<'a> {
    Full(&'a Gram),
    Lru(LruRows<'a>),
}

impl<'a> RowSource<'a> {
    pub fn row(&mut self, i: usize) -> Row<'a> {
        match self {
            RowSource::Full(g) => {
                let g: &'a Gram = g;
                Row::Borrowed(g.row(i))
            }
            RowSource::Lru(c) => Row::Shared(c.get(i)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lru_matches_full_matrix() {
        let xs: Vec<Vec<f64>> = (0..7).map(|i| vec![i as f64 * 0.3, (i * i) as f64 * 0.1]).collect();
        let g = Gram::compute(&xs, 0.5);
        // Budget of two rows forces evictions.
        let mut lru = RowSource::Lru(LruRows::new(&xs, 0.5, 2 * 7 * 8));
        for i in [0, 3, 6, 0, 2, 3, 5, 1, 0] {
            assert_eq!(&*lru.row(i), g.row(i));
        }
        let sub = g.subset(&[4, 1]);
        assert_eq!(sub.row(0), &[1.0, g.row(4)[1]]);
    }

    #[test]
    fn squared_distance_handles_remainders() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0];
        let b = [0.0; 7];
        assert_eq!(squared_distance(&a, &b), 140.0);
    }
}
