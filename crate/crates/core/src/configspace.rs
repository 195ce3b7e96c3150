//! Exact checks on tiny configuration spaces: the independent two-family
//! process is enumerated as a finite Markov chain, its semigroup applied
//! by uniformization, and the duality identity between pairing counts is
//! evaluated on both sides. The annihilation operator's site decomposition
//! is checked in exact integer arithmetic.

use std::collections::HashMap;

use crate::conductance::Conductances;
use crate::correlation::pairing_count;
use crate::error::{Error, Result};
use crate::sim::SimGeometry;

const STATE_CAP: usize = 100_000;

type Occ = [Vec<u32>; 2];

/// Finite chain over configurations with fixed particle numbers per side,
/// driven by independent walks (no annihilation).
pub struct ConfigChain {
    pub configs: Vec<Occ>,
    index: HashMap<Occ, usize>,
    /// Off-diagonal transitions `(target, rate)` per configuration.
    trans: Vec<Vec<(u32, f64)>>,
    /// Uniform total outflow rate `holding * (n + m)`.
    uniform_rate: f64,
}

/// Enumerate occupation vectors of `particles` particles on `sites` sites.
fn enumerate_side(sites: usize, particles: u32) -> Vec<Vec<u32>> {
    let mut out = Vec::new();
    let mut cur = vec![0u32; sites];
    fn rec(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<Vec<u32>>) {
        if pos + 1 == cur.len() {
            cur[pos] = left;
            out.push(cur.clone());
            return;
        }
        for k in (0..=left).rev() {
            cur[pos] = k;
            rec(cur, pos + 1, left - k, out);
        }
        cur[pos] = 0;
    }
    rec(&mut cur, 0, particles, &mut out);
    out
}

impl ConfigChain {
    /// Build the chain for `(n_plus, n_minus)` particles.
    pub fn build(
        cond_plus: &Conductances,
        cond_minus: &Conductances,
        n_plus: u32,
        n_minus: u32,
    ) -> Result<Self> {
        let plus_cfgs = enumerate_side(cond_plus.len(), n_plus);
        let minus_cfgs = enumerate_side(cond_minus.len(), n_minus);
        let total = plus_cfgs.len() * minus_cfgs.len();
        if total > STATE_CAP {
            return Err(Error::StateSpaceTooLarge(total, STATE_CAP));
        }
        let mut configs = Vec::with_capacity(total);
        let mut index = HashMap::with_capacity(total);
        for p in &plus_cfgs {
            for m in &minus_cfgs {
                let occ: Occ = [p.clone(), m.clone()];
                index.insert(occ.clone(), configs.len());
                configs.push(occ);
            }
        }
        let rate = cond_plus.holding_rate;
        let conds = [cond_plus, cond_minus];
        let mut trans = Vec::with_capacity(total);
        for occ in &configs {
            let mut row = Vec::new();
            for side in 0..2 {
                for (x, &count) in occ[side].iter().enumerate() {
                    if count == 0 {
                        continue;
                    }
                    let mut prev = 0.0;
                    for &(y, c) in &conds[side].hops[x] {
                        let p = c - prev;
                        prev = c;
                        let mut next = occ.clone();
                        next[side][x] -= 1;
                        next[side][y as usize] += 1;
                        let target = index[&next] as u32;
                        row.push((target, rate * count as f64 * p));
                    }
                }
            }
            trans.push(row);
        }
        let uniform_rate = rate * (n_plus + n_minus) as f64;
        Ok(ConfigChain {
            configs,
            index,
            trans,
            uniform_rate,
        })
    }

    pub fn len(&self) -> usize {
        self.configs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.configs.is_empty()
    }

    pub fn index_of(&self, occ: &Occ) -> Option<usize> {
        self.index.get(occ).copied()
    }

    /// `(e^(Qt) f)` for every starting configuration, by uniformization
    /// with Poisson tail below `tol`.
    pub fn expm_apply(&self, f: &[f64], t: f64, tol: f64) -> Vec<f64> {
        assert_eq!(f.len(), self.len());
        let rate_t = self.uniform_rate * t;
        if rate_t == 0.0 {
            return f.to_vec();
        }
        let mut out = vec![0.0; f.len()];
        let mut cur = f.to_vec();
        let mut next = vec![0.0; f.len()];
        let log_rate_t = rate_t.ln();
        let mut log_fact = 0.0;
        let mut cum = 0.0;
        let mut k = 0usize;
        loop {
            let w = ((k as f64) * log_rate_t - rate_t - log_fact).exp();
            cum += w;
            if w > 0.0 {
                for (o, &c) in out.iter_mut().zip(&cur) {
                    *o += w * c;
                }
            }
            let tail_ok = (k as f64) > rate_t
                && (cum >= 1.0 - tol || w / (1.0 - rate_t / (k + 1) as f64) < tol);
            if tail_ok {
                break;
            }
            // next = P cur with P = I + Q / uniform_rate
            for (i, n) in next.iter_mut().enumerate() {
                let outflow: f64 = self.trans[i].iter().map(|&(_, r)| r).sum();
                let mut acc = (1.0 - outflow / self.uniform_rate) * cur[i];
                for &(j, r) in &self.trans[i] {
                    acc += r / self.uniform_rate * cur[j as usize];
                }
                *n = acc;
            }
            std::mem::swap(&mut cur, &mut next);
            k += 1;
            log_fact += (k as f64).ln();
            if k > 1_000_000 {
                panic!("uniformization term cap exceeded on configuration chain");
            }
        }
        out
    }
}

/// Normalizer `alpha(xi) = prod over occupied sites m(x)^count`.
fn alpha_of(occ: &Occ, m: [&[f64]; 2]) -> f64 {
    let mut acc = 1.0;
    for side in 0..2 {
        for (x, &c) in occ[side].iter().enumerate() {
            for _ in 0..c {
                acc *= m[side][x];
            }
        }
    }
    acc
}

/// Maximum deviation between the two sides of the duality identity
/// `E[A(xi_t, eta)/alpha(xi_t)] = E[A(xi, eta_t)/alpha(xi)]`
/// over every initial pair with the given particle numbers.
pub fn duality_check(
    cond_plus: &Conductances,
    cond_minus: &Conductances,
    xi_particles: (u32, u32),
    eta_particles: (u32, u32),
    t: f64,
    tol: f64,
) -> Result<f64> {
    let xi_chain = ConfigChain::build(cond_plus, cond_minus, xi_particles.0, xi_particles.1)?;
    let eta_chain = ConfigChain::build(cond_plus, cond_minus, eta_particles.0, eta_particles.1)?;
    let m = [cond_plus.m.as_slice(), cond_minus.m.as_slice()];

    // lhs[xi][eta] = sum_xi' P_t(xi -> xi') A(xi', eta)/alpha(xi')
    let mut lhs = vec![vec![0.0; eta_chain.len()]; xi_chain.len()];
    for (ei, eta) in eta_chain.configs.iter().enumerate() {
        let g: Vec<f64> = xi_chain
            .configs
            .iter()
            .map(|xi| pairing_count(xi, eta) as f64 / alpha_of(xi, m))
            .collect();
        let evolved = xi_chain.expm_apply(&g, t, tol);
        for (xi_i, v) in evolved.iter().enumerate() {
            lhs[xi_i][ei] = *v;
        }
    }
    // rhs[xi][eta] = sum_eta' P_t(eta -> eta') A(xi, eta')/alpha(xi)
    let mut worst = 0.0f64;
    for (xi_i, xi) in xi_chain.configs.iter().enumerate() {
        let h: Vec<f64> = eta_chain
            .configs
            .iter()
            .map(|eta| pairing_count(xi, eta) as f64 / alpha_of(xi, m))
            .collect();
        let evolved = eta_chain.expm_apply(&h, t, tol);
        for (ei, rhs) in evolved.iter().enumerate() {
            worst = worst.max((lhs[xi_i][ei] - rhs).abs());
        }
    }
    Ok(worst)
}

/// Direct integer evaluation of the annihilation operator acting on the
/// pairing count at one interface point:
/// `eta+(z+) eta-(z-) (A(xi, eta - 1_(z+,z-)) - A(xi, eta))`.
pub fn k_action_direct(xi: &Occ, eta: &Occ, zp: usize, zm: usize) -> i128 {
    let pairs = eta[0][zp] as i128 * eta[1][zm] as i128;
    if pairs == 0 {
        return 0;
    }
    let mut removed = eta.clone();
    removed[0][zp] -= 1;
    removed[1][zm] -= 1;
    pairs * (pairing_count(xi, &removed) - pairing_count(xi, eta))
}

/// The decomposed form at one interface point, valid for configurations
/// with at most one `xi` particle on each paired site:
/// `(1,0): -A(xi + 1 at z-)`, `(0,1): -A(xi + 1 at z+)`,
/// `(1,1): -(A(xi) + A(xi + 1 at z-) + A(xi + 1 at z+))`, else zero.
pub fn k_action_decomposed(xi: &Occ, eta: &Occ, zp: usize, zm: usize) -> i128 {
    let kp = xi[0][zp];
    let km = xi[1][zm];
    assert!(kp <= 1 && km <= 1, "decomposition needs xi counts <= 1");
    let add_minus = |occ: &Occ| {
        let mut o = occ.clone();
        o[1][zm] += 1;
        o
    };
    let add_plus = |occ: &Occ| {
        let mut o = occ.clone();
        o[0][zp] += 1;
        o
    };
    match (kp, km) {
        (1, 0) => -pairing_count(&add_minus(xi), eta),
        (0, 1) => -pairing_count(&add_plus(xi), eta),
        (1, 1) => {
            -(pairing_count(xi, eta)
                + pairing_count(&add_minus(xi), eta)
                + pairing_count(&add_plus(xi), eta))
        }
        _ => 0,
    }
}

/// Exhaustive exact comparison of the two forms over all `(xi, eta)` with
/// the given particle numbers on the geometry's interface pairs. Returns
/// the number of `(xi, eta, z)` triples checked.
pub fn k_action_exhaustive_check(
    geo: &SimGeometry,
    cond_plus: &Conductances,
    cond_minus: &Conductances,
    xi_particles: (u32, u32),
    eta_particles: (u32, u32),
) -> Result<usize> {
    let xi_chain = ConfigChain::build(cond_plus, cond_minus, xi_particles.0, xi_particles.1)?;
    let eta_chain = ConfigChain::build(cond_plus, cond_minus, eta_particles.0, eta_particles.1)?;
    let mut checked = 0usize;
    for xi in &xi_chain.configs {
        for eta in &eta_chain.configs {
            for z in 0..geo.interface_len() {
                let zp = geo.z_site[0][z] as usize;
                let zm = geo.z_site[1][z] as usize;
                if xi[0][zp] > 1 || xi[1][zm] > 1 {
                    continue;
                }
                let direct = k_action_direct(xi, eta, zp, zm);
                let decomposed = k_action_decomposed(xi, eta, zp, zm);
                if direct != decomposed {
                    return Err(Error::Config(format!(
                        "operator decomposition mismatch at z={z}: {direct} vs {decomposed}"
                    )));
                }
                checked += 1;
            }
        }
    }
    Ok(checked)
}

/// Weighted whole-operator comparison in floating point, summing the
/// per-point forms with their physical rates.
pub fn k_action_weighted_gap(geo: &SimGeometry, xi: &Occ, eta: &Occ) -> f64 {
    let mut direct = 0.0;
    let mut decomposed = 0.0;
    for z in 0..geo.interface_len() {
        let zp = geo.z_site[0][z] as usize;
        let zm = geo.z_site[1][z] as usize;
        let w = geo.lambda / geo.eps * geo.psi.values[z];
        direct += w * k_action_direct(xi, eta, zp, zm) as f64;
        decomposed += w * k_action_decomposed(xi, eta, zp, zm) as f64;
    }
    (direct - decomposed).abs()
}
