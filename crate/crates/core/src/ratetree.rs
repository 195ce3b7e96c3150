//! Segment trees for weighted event selection with logarithmic updates.
//!
//! Internal nodes always hold `left + right` recomputed on the update path,
//! so an incremental sequence of `set` calls leaves every node bit-identical
//! to a full bottom-up rebuild. That makes the periodic from-scratch rate
//! audits exact comparisons rather than tolerance checks.

/// Sum tree over `f64` rates.
#[derive(Debug, Clone)]
pub struct RateTree {
    size: usize,
    nodes: Vec<f64>,
    len: usize,
}

impl RateTree {
    pub fn new(len: usize) -> Self {
        let size = len.max(1).next_power_of_two();
        RateTree {
            size,
            nodes: vec![0.0; 2 * size],
            len,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn total(&self) -> f64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> f64 {
        self.nodes[self.size + i]
    }

    pub fn set(&mut self, i: usize, v: f64) {
        let mut p = self.size + i;
        self.nodes[p] = v;
        while p > 1 {
            p /= 2;
            self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
        }
    }

    /// Index of the leaf containing prefix position `target < total()`.
    pub fn sample(&self, mut target: f64) -> usize {
        let mut p = 1usize;
        while p < self.size {
            let left = self.nodes[2 * p];
            if target < left {
                p = 2 * p;
            } else {
                target -= left;
                p = 2 * p + 1;
            }
        }
        (p - self.size).min(self.len - 1)
    }

    /// Rebuild every internal node from the leaves; used by audits.
    pub fn rebuilt(&self) -> Vec<f64> {
        let mut nodes = self.nodes.clone();
        for p in (1..self.size).rev() {
            nodes[p] = nodes[2 * p] + nodes[2 * p + 1];
        }
        nodes
    }

    /// Exact equality between incremental state and a full rebuild.
    pub fn audit(&self) -> bool {
        self.nodes == self.rebuilt()
    }
}

/// Sum tree over `u64` counts (occupation numbers).
#[derive(Debug, Clone)]
pub struct CountTree {
    size: usize,
    nodes: Vec<u64>,
}

impl CountTree {
    pub fn new(len: usize) -> Self {
        let size = len.max(1).next_power_of_two();
        CountTree {
            size,
            nodes: vec![0; 2 * size],
        }
    }

    pub fn total(&self) -> u64 {
        self.nodes[1]
    }

    pub fn get(&self, i: usize) -> u64 {
        self.nodes[self.size + i]
    }

    pub fn set(&mut self, i: usize, v: u64) {
        let mut p = self.size + i;
        self.nodes[p] = v;
        while p > 1 {
            p /= 2;
            self.nodes[p] = self.nodes[2 * p] + self.nodes[2 * p + 1];
        }
    }

    pub fn add(&mut self, i: usize, delta: i64) {
        let cur = self.get(i) as i64;
        self.set(i, (cur + delta) as u64);
    }

    /// Leaf holding the `target`-th unit, `target < total()`.
    pub fn sample(&self, mut target: u64) -> usize {
        debug_assert!(target < self.total());
        let mut p = 1usize;
        while p < self.size {
            let left = self.nodes[2 * p];
            if target < left {
                p = 2 * p;
            } else {
                target -= left;
                p = 2 * p + 1;
            }
        }
        p - self.size
    }

    pub fn audit(&self) -> bool {
        let mut nodes = self.nodes.clone();
        for p in (1..self.size).rev() {
            nodes[p] = nodes[2 * p] + nodes[2 * p + 1];
        }
        nodes == self.nodes
    }
}
