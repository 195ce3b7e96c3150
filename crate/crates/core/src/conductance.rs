//! Symmetric edge conductances for the lattice walk, the symmetrizing
//! vertex measure, and the normalized one-step transition probabilities.
//!
//! Interior edges carry the drift through a logarithmic correction that is
//! exact rational arithmetic for exp-of-polynomial densities; edges with
//! both endpoints on the graph boundary fall back to the flat weight
//! `eps^(d-2)/2`.

use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::geometry::LatticeGraph;
use crate::rat::{rat_to_f64, Rat};

#[derive(Debug, Clone)]
pub struct Conductances {
    /// Per-edge weight, aligned with `lattice.edges`.
    pub mu: Vec<f64>,
    /// Symmetrizing vertex measure `m(x) = (eps^2/d) * sum_y mu_xy`.
    pub m: Vec<f64>,
    /// Total vertex measure `sum_x m(x)`.
    pub m_total: f64,
    /// Per-vertex neighbor transition data `(neighbor, cumulative prob)`.
    pub hops: Vec<Vec<(u32, f64)>>,
    /// Uniform holding rate `d / eps^2`.
    pub holding_rate: f64,
    pub eps: f64,
    pub dim: usize,
}

impl Conductances {
    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// One-step probability from `x` to `y`, zero when not adjacent.
    pub fn hop_prob(&self, x: usize, y: usize) -> f64 {
        let mut prev = 0.0;
        for &(nbr, cum) in &self.hops[x] {
            if nbr as usize == y {
                return cum - prev;
            }
            prev = cum;
        }
        0.0
    }
}

/// Build conductances for one lattice with the given density.
pub fn build_conductances(lat: &LatticeGraph, rho: &DensitySpec) -> Result<Conductances> {
    let d = lat.dim;
    let eps = lat.eps_rat;
    let eps_f = lat.eps;
    let flat_weight = eps_f.powi(d as i32 - 2) / 2.0;

    let mut mu = Vec::with_capacity(lat.edges.len());
    for (idx, &(a, b)) in lat.edges.iter().enumerate() {
        let (a, b) = (a as usize, b as usize);
        let w = if lat.is_boundary[a] && lat.is_boundary[b] {
            flat_weight
        } else {
            // The log factor is oriented along the axis: P(upper) - P(lower).
            let (pa, pb) = (&lat.vertices_rat[a], &lat.vertices_rat[b]);
            let (lo, hi) = if pa < pb { (pa, pb) } else { (pb, pa) };
            edge_weight(rho, lo, hi, eps, d)
        };
        if w <= 0.0 {
            return Err(Error::NonpositiveWeight(
                lat.edges[idx].0 as usize,
                lat.edges[idx].1 as usize,
            ));
        }
        mu.push(w);
    }

    let n = lat.len();
    let mut weight_sum = vec![0.0f64; n];
    for (&(a, b), &w) in lat.edges.iter().zip(&mu) {
        weight_sum[a as usize] += w;
        weight_sum[b as usize] += w;
    }
    let scale = eps_f * eps_f / d as f64;
    // An isolated single-vertex component has no edges; keep the natural
    // eps^d scale for its measure so interface normalizers stay finite.
    let m: Vec<f64> = weight_sum
        .iter()
        .map(|&s| {
            if s > 0.0 {
                s * scale
            } else {
                eps_f.powi(d as i32)
            }
        })
        .collect();
    let m_total = m.iter().sum();

    // Edge weight lookup per vertex in the canonical neighbor order.
    let mut edge_index = std::collections::HashMap::new();
    for (idx, &(a, b)) in lat.edges.iter().enumerate() {
        edge_index.insert((a, b), idx);
    }
    let mut hops: Vec<Vec<(u32, f64)>> = Vec::with_capacity(n);
    for (x, nbrs) in lat.neighbors.iter().enumerate() {
        let mut cum = 0.0;
        let total = weight_sum[x];
        let mut row = Vec::with_capacity(nbrs.len());
        for &(y, _, _) in nbrs {
            let key = if (x as u32) < y { (x as u32, y) } else { (y, x as u32) };
            cum += mu[edge_index[&key]] / total;
            row.push((y, cum));
        }
        if let Some(last) = row.last_mut() {
            last.1 = 1.0;
        }
        hops.push(row);
    }

    Ok(Conductances {
        mu,
        m,
        m_total,
        hops,
        holding_rate: d as f64 / (eps_f * eps_f),
        eps: eps_f,
        dim: d,
    })
}

/// Interior edge weight `(1 + (P(hi)-P(lo))/2) * (rho(lo)+rho(hi))/2 * eps^(d-2)/2`
/// for the edge from `lo` to `hi = lo + eps e_i`, with the log-ratio
/// evaluated exactly in the exponent polynomial.
fn edge_weight(rho: &DensitySpec, x: &[Rat], y: &[Rat], eps: Rat, d: usize) -> f64 {
    let log_ratio = rho.exponent_at(y) - rho.exponent_at(x);
    let correction = 1.0 + rat_to_f64(log_ratio) / 2.0;
    let avg = (rho.value_at(x) + rho.value_at(y)) / 2.0;
    let eps_f = rat_to_f64(eps);
    correction * avg * eps_f.powi(d as i32 - 2) / 2.0
}
