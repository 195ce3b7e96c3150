//! Discrete heat kernel of the lattice walk, computed by uniformization:
//! the walk at time `t` is a Poisson(rate * t) mixture of powers of the
//! one-step matrix, truncated at an explicit tail tolerance.
//!
//! Rows are computed independently with sparse vector iteration; the full
//! matrix parallelizes over rows. For large `rate * t` the matrix path
//! switches to computing a shorter time exactly and composing the kernel
//! with itself through the symmetrizing measure.

use rayon::prelude::*;

use crate::conductance::Conductances;
use crate::error::{Error, Result};

/// Default Poisson tail tolerance.
pub const UNIFORMIZATION_TOL: f64 = 1e-12;
/// Hard cap on Poisson terms.
const TERM_CAP: usize = 400_000;
/// Largest `rate * t` handled by direct row iteration in the matrix path.
const DIRECT_EVENTS_CAP: f64 = 2048.0;
/// Dense-matrix vertex guard.
pub const DENSE_VERTEX_GUARD: usize = 20_000;

/// Dense symmetric kernel `p(t,x,y)` with respect to the vertex measure.
#[derive(Debug, Clone)]
pub struct KernelMatrix {
    pub t: f64,
    pub n: usize,
    /// Row-major `p(t, x, y)`.
    pub values: Vec<f64>,
    /// The symmetrizing vertex measure, copied from the conductances.
    pub m: Vec<f64>,
}

impl KernelMatrix {
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.values[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.values[x * self.n..(x + 1) * self.n]
    }

    /// Largest `|p(t,x,y) - p(t,y,x)|`.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for x in 0..self.n {
            for y in (x + 1)..self.n {
                worst = worst.max((self.at(x, y) - self.at(y, x)).abs());
            }
        }
        worst
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Largest `|sum_y p(t,x,y) m(y) - 1|` over rows.
    pub fn conservation_defect(&self) -> f64 {
        (0..self.n)
            .map(|x| {
                let s: f64 = self.row(x).iter().zip(&self.m).map(|(p, m)| p * m).sum();
                (s - 1.0).abs()
            })
            .fold(0.0, f64::max)
    }

    /// Largest `|p(s+t,x,y) - sum_z p(s,x,z) p(t,z,y) m(z)|` over all pairs,
    /// where `self` holds time `s+t`.
    pub fn chapman_kolmogorov_defect(&self, ps: &KernelMatrix, pt: &KernelMatrix) -> f64 {
        assert_eq!(self.n, ps.n);
        assert_eq!(self.n, pt.n);
        let n = self.n;
        (0..n)
            .into_par_iter()
            .map(|x| {
                let mut worst = 0.0f64;
                for y in 0..n {
                    let mut acc = 0.0;
                    for z in 0..n {
                        acc += ps.at(x, z) * pt.at(z, y) * self.m[z];
                    }
                    worst = worst.max((acc - self.at(x, y)).abs());
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    }

    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "x_id,y_id,value")?;
        for x in 0..self.n {
            for y in 0..self.n {
                writeln!(w, "{x},{y},{}", self.at(x, y))?;
            }
        }
        Ok(())
    }
}

/// One-step transition structure in CSR form for fast row iteration.
pub struct SparseStep {
    offsets: Vec<u32>,
    targets: Vec<u32>,
    probs: Vec<f64>,
    n: usize,
}

impl SparseStep {
    pub fn new(cond: &Conductances) -> Self {
        let n = cond.len();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut targets = Vec::new();
        let mut probs = Vec::new();
        offsets.push(0u32);
        for row in &cond.hops {
            let mut prev = 0.0;
            for &(y, cum) in row {
                targets.push(y);
                probs.push(cum - prev);
                prev = cum;
            }
            offsets.push(targets.len() as u32);
        }
        SparseStep {
            offsets,
            targets,
            probs,
            n,
        }
    }

    /// `out = v P` (left multiplication by the probability row vector).
    fn apply(&self, v: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for x in 0..self.n {
            let vx = v[x];
            if vx == 0.0 {
                continue;
            }
            let (a, b) = (self.offsets[x] as usize, self.offsets[x + 1] as usize);
            for k in a..b {
                out[self.targets[k] as usize] += vx * self.probs[k];
            }
        }
    }
}

/// Poisson weights emitted one term at a time.
struct PoissonWeights {
    log_rate_t: f64,
    rate_t: f64,
    log_fact: f64,
    k: usize,
    cum: f64,
    last: f64,
}

impl PoissonWeights {
    fn new(rate_t: f64) -> Self {
        PoissonWeights {
            log_rate_t: if rate_t > 0.0 { rate_t.ln() } else { f64::NEG_INFINITY },
            rate_t,
            log_fact: 0.0,
            k: 0,
            cum: 0.0,
            last: f64::INFINITY,
        }
    }

    /// Weight of the current term, then advance.
    fn next_weight(&mut self) -> f64 {
        let k = self.k as f64;
        let w = if self.rate_t == 0.0 {
            if self.k == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            (k * self.log_rate_t - self.rate_t - self.log_fact).exp()
        };
        self.k += 1;
        self.log_fact += (self.k as f64).ln();
        self.cum += w;
        self.last = w;
        w
    }

    /// Past the mode, stop once either the accumulated mass covers the
    /// tolerance or the geometric tail bound `w_k / (1 - rate_t/k)` does.
    /// The second route is immune to the cumulative sum saturating a few
    /// ulps below one when thousands of terms are added.
    fn done(&self, tol: f64) -> bool {
        let k = self.k as f64;
        if k <= self.rate_t {
            return false;
        }
        if self.cum >= 1.0 - tol {
            return true;
        }
        let tail = self.last / (1.0 - self.rate_t / k);
        tail < tol
    }
}

/// Distribution rows `P^x(X_t = .)` for several times at once, sharing the
/// power iteration. Raw probabilities; divide by `m` for the density.
pub fn occupation_rows(
    cond: &Conductances,
    step: &SparseStep,
    x: usize,
    times: &[f64],
    tol: f64,
) -> Result<Vec<Vec<f64>>> {
    let n = cond.len();
    let rate = cond.holding_rate;
    let mut out = vec![vec![0.0f64; n]; times.len()];
    let mut weights: Vec<PoissonWeights> =
        times.iter().map(|&t| PoissonWeights::new(rate * t)).collect();
    let mut cur = vec![0.0f64; n];
    cur[x] = 1.0;
    let mut next = vec![0.0f64; n];
    let mut k = 0usize;
    loop {
        let mut all_done = true;
        for (wi, w) in weights.iter_mut().enumerate() {
            if !w.done(tol) {
                let wk = w.next_weight();
                if wk > 0.0 {
                    for (o, &c) in out[wi].iter_mut().zip(cur.iter()) {
                        *o += wk * c;
                    }
                }
                all_done = false;
            }
        }
        if all_done {
            break;
        }
        k += 1;
        if k > TERM_CAP {
            return Err(Error::ToleranceNotReached { cap: TERM_CAP, tol });
        }
        step.apply(&cur, &mut next);
        std::mem::swap(&mut cur, &mut next);
    }
    Ok(out)
}

/// Kernel row `p(t, x, .)` (density against `m`).
pub fn kernel_row(
    cond: &Conductances,
    step: &SparseStep,
    x: usize,
    t: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let rows = occupation_rows(cond, step, x, &[t], tol)?;
    let mut row = rows.into_iter().next().unwrap();
    for (p, &m) in row.iter_mut().zip(&cond.m) {
        *p /= m;
    }
    Ok(row)
}

/// Dense kernel matrix at time `t`.
pub fn heat_kernel(cond: &Conductances, t: f64, tol: f64) -> Result<KernelMatrix> {
    let n = cond.len();
    if n > DENSE_VERTEX_GUARD {
        return Err(Error::ResourceGuard(n, DENSE_VERTEX_GUARD));
    }
    assert!(t >= 0.0, "time must be nonnegative");
    if t == 0.0 {
        let mut values = vec![0.0f64; n * n];
        for x in 0..n {
            values[x * n + x] = 1.0 / cond.m[x];
        }
        return Ok(KernelMatrix {
            t,
            n,
            values,
            m: cond.m.clone(),
        });
    }

    // halve until the direct row iteration is cheap
    let mut doublings = 0u32;
    let mut tau = t;
    while cond.holding_rate * tau > DIRECT_EVENTS_CAP {
        tau /= 2.0;
        doublings += 1;
    }

    let step = SparseStep::new(cond);
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|x| kernel_row(cond, &step, x, tau, tol))
        .collect::<Result<_>>()?;
    let mut flat = Vec::with_capacity(n * n);
    for row in rows {
        flat.extend_from_slice(&row);
    }
    let mut km = KernelMatrix {
        t: tau,
        n,
        values: flat,
        m: cond.m.clone(),
    };
    for _ in 0..doublings {
        km = compose(&km, &km);
    }
    km.t = t;
    Ok(km)
}

/// `p(s+t)(x,y) = sum_z p(s,x,z) p(t,z,y) m(z)`.
pub fn compose(a: &KernelMatrix, b: &KernelMatrix) -> KernelMatrix {
    assert_eq!(a.n, b.n);
    let n = a.n;
    // scale b's rows by m so the composition is a plain matrix product
    let mut scaled = vec![0.0f64; n * n];
    for z in 0..n {
        let mz = a.m[z];
        let src = &b.values[z * n..(z + 1) * n];
        let dst = &mut scaled[z * n..(z + 1) * n];
        for (d, &s) in dst.iter_mut().zip(src) {
            *d = s * mz;
        }
    }
    let mut values = vec![0.0f64; n * n];
    values
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(x, out_row)| {
            let arow = &a.values[x * n..(x + 1) * n];
            for z in 0..n {
                let axz = arow[z];
                if axz == 0.0 {
                    continue;
                }
                let brow = &scaled[z * n..(z + 1) * n];
                for (o, &bzy) in out_row.iter_mut().zip(brow) {
                    *o += axz * bzy;
                }
            }
        });
    KernelMatrix {
        t: a.t + b.t,
        n,
        values,
        m: a.m.clone(),
    }
}
