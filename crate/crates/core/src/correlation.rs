//! Correlation functions of the particle system: pairing counts between
//! configurations, Monte Carlo estimation of the normalized correlation
//! `gamma`, kernel-transported initial correlations for comparison bounds,
//! and the factorization gap against the coupled-PDE solution.

use crate::conductance::Conductances;
use crate::error::{Error, Result};
use crate::kernel::{occupation_rows, SparseStep, UNIFORMIZATION_TOL};
use crate::sim::{SimGeometry, SnapshotSeries};

/// Falling factorial `n (n-1) ... (n-k+1)`, zero when `k > n`.
pub fn poisson_poly(k: u32, n: u32) -> i128 {
    if k > n {
        return 0;
    }
    let mut acc: i128 = 1;
    for i in 0..k {
        acc *= (n - i) as i128;
    }
    acc
}

/// A tuple of probe sites, `(r_1..r_n)` on the plus side and `(s_1..s_m)`
/// on the minus side.
#[derive(Debug, Clone)]
pub struct Multiindex {
    pub plus_sites: Vec<u32>,
    pub minus_sites: Vec<u32>,
}

impl Multiindex {
    pub fn order(&self) -> (usize, usize) {
        (self.plus_sites.len(), self.minus_sites.len())
    }

    /// Occupation-vector form of the tuple.
    pub fn occupation(&self, n_sites: [usize; 2]) -> [Vec<u32>; 2] {
        let mut occ = [vec![0u32; n_sites[0]], vec![0u32; n_sites[1]]];
        for &r in &self.plus_sites {
            occ[0][r as usize] += 1;
        }
        for &s in &self.minus_sites {
            occ[1][s as usize] += 1;
        }
        occ
    }
}

/// Pairing count `A(xi, eta)` between occupation vectors:
/// the number of ways to match the labeled tuple behind `xi` with
/// distinct labeled particles of `eta`, site by site.
pub fn pairing_count(xi: &[Vec<u32>; 2], eta: &[Vec<u32>; 2]) -> i128 {
    let mut acc: i128 = 1;
    for side in 0..2 {
        for (k, n) in xi[side].iter().zip(&eta[side]) {
            if *k > 0 {
                acc *= poisson_poly(*k, *n);
                if acc == 0 {
                    return 0;
                }
            }
        }
    }
    acc
}

/// `A` restricted to one side.
pub fn pairing_count_side(xi: &[u32], eta: &[u32]) -> i128 {
    let mut acc: i128 = 1;
    for (k, n) in xi.iter().zip(eta) {
        if *k > 0 {
            acc *= poisson_poly(*k, *n);
            if acc == 0 {
                return 0;
            }
        }
    }
    acc
}

/// Normalization `alpha(xi) = prod_i m(r_i) prod_j m(s_j)`.
pub fn alpha_normalizer(geo: &SimGeometry, xi: &Multiindex) -> f64 {
    let mut acc = 1.0;
    for &r in &xi.plus_sites {
        acc *= geo.m[0][r as usize];
    }
    for &s in &xi.minus_sites {
        acc *= geo.m[1][s as usize];
    }
    acc
}

/// Monte Carlo estimate of the correlation function.
#[derive(Debug, Clone)]
pub struct CorrelationEstimate {
    pub value: f64,
    pub stderr: f64,
    pub replicas: usize,
    pub alpha: f64,
}

/// Unbiased estimator of
/// `gamma(xi, t) = eps^(d(n+m)) / alpha(xi) * E[A(xi, eta_t)]`
/// over an ensemble of recorded snapshots at schedule index `snap_idx`.
pub fn estimate_gamma(
    runs: &[SnapshotSeries],
    geo: &SimGeometry,
    xi: &Multiindex,
    snap_idx: usize,
    stderr_cap: Option<f64>,
) -> Result<CorrelationEstimate> {
    let (n, m) = xi.order();
    let occ_xi = xi.occupation(geo.n_sites);
    let alpha = alpha_normalizer(geo, xi);
    let scale = geo.eps.powi((geo.dim * (n + m)) as i32) / alpha;
    let samples: Vec<f64> = runs
        .iter()
        .map(|r| pairing_count(&occ_xi, &r.eta[snap_idx]) as f64 * scale)
        .collect();
    let rn = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / rn;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rn - 1.0);
    let stderr = (var / rn).sqrt();
    if let Some(cap) = stderr_cap {
        if stderr > cap {
            return Err(Error::InsufficientReplicas { got: stderr, cap });
        }
    }
    Ok(CorrelationEstimate {
        value: mean,
        stderr,
        replicas: samples.len(),
        alpha,
    })
}

/// Exact initial correlation for iid multinomial placement: `N` particles
/// per side, each on site `x` with probability `u0(x) m(x)` normalized.
/// For a tuple with per-site multiplicities `k_x` on one side,
/// `E[prod_x (eta_x)_(k_x)] = (N)_K prod q_x^(k_x)` with `K = sum k_x`.
pub fn initial_gamma_exact(
    geo: &SimGeometry,
    init_weights: &[Vec<f64>; 2],
    xi: &Multiindex,
    n_particles: u64,
) -> f64 {
    let occ = xi.occupation(geo.n_sites);
    let alpha = alpha_normalizer(geo, xi);
    let (n, m) = xi.order();
    let mut acc = geo.eps.powi((geo.dim * (n + m)) as i32) / alpha;
    for side in 0..2 {
        let total: f64 = init_weights[side].iter().sum();
        let k_total: u32 = occ[side].iter().sum();
        acc *= poisson_poly(k_total, n_particles as u32) as f64;
        for (site, &k) in occ[side].iter().enumerate() {
            if k > 0 {
                acc *= (init_weights[side][site] / total).powi(k as i32);
            }
        }
    }
    acc
}

/// Kernel transport of the initial correlation:
/// `sum_xi' gamma(xi', 0) p(t, xi, xi') m(xi')`, which factorizes into
/// one kernel-row sum per tuple component for multinomial initial data.
/// This dominates `gamma(xi, t)` for every `t` (annihilation only removes
/// pairings).
pub fn transported_initial_gamma(
    geo: &SimGeometry,
    conds: [&Conductances; 2],
    init_weights: &[Vec<f64>; 2],
    xi: &Multiindex,
    t: f64,
    n_particles: u64,
) -> Result<f64> {
    let occ = xi.occupation(geo.n_sites);
    let (n, m) = xi.order();
    // the tuple sum telescopes component by component: the alpha inside
    // gamma(., 0) cancels against the transport measure weights, so no
    // alpha(xi) factor survives
    let mut acc = geo.eps.powi((geo.dim * (n + m)) as i32);
    for side in 0..2 {
        let total: f64 = init_weights[side].iter().sum();
        let k_total: u32 = occ[side].iter().sum();
        if k_total == 0 {
            continue;
        }
        acc *= poisson_poly(k_total, n_particles as u32) as f64;
        let step = SparseStep::new(conds[side]);
        let sites = if side == 0 {
            &xi.plus_sites
        } else {
            &xi.minus_sites
        };
        for &r in sites {
            let row = occupation_rows(conds[side], &step, r as usize, &[t], UNIFORMIZATION_TOL)?;
            let mut s = 0.0;
            for (y, &q) in init_weights[side].iter().enumerate() {
                s += q / total * row[0][y] / conds[side].m[y];
            }
            acc *= s;
        }
    }
    Ok(acc)
}

/// Gap between the estimated correlation and the PDE product at probe
/// tuples, as used by the factorization (chaos) acceptance gate.
#[derive(Debug, Clone)]
pub struct ChaosGapReport {
    pub order: (usize, usize),
    pub t: f64,
    pub gap: f64,
    pub stderr: f64,
    pub worst_tuple: usize,
}

/// `max over probe tuples |gamma_hat - prod u|` with the combined standard
/// error of the worst tuple.
pub fn chaos_gap(
    runs: &[SnapshotSeries],
    geo: &SimGeometry,
    tuples: &[Multiindex],
    pde_products: &[f64],
    snap_idx: usize,
    t: f64,
) -> Result<ChaosGapReport> {
    assert_eq!(tuples.len(), pde_products.len());
    let mut gap = -1.0;
    let mut stderr = 0.0;
    let mut worst = 0;
    for (k, (xi, target)) in tuples.iter().zip(pde_products).enumerate() {
        let est = estimate_gamma(runs, geo, xi, snap_idx, None)?;
        let g = (est.value - target).abs();
        if g > gap {
            gap = g;
            stderr = est.stderr;
            worst = k;
        }
    }
    let order = tuples[0].order();
    Ok(ChaosGapReport {
        order,
        t,
        gap,
        stderr,
        worst_tuple: worst,
    })
}

/// Fitted constant in the uniform bound `gamma(xi, t) <= (C/t^(d/2))^(n+m)`.
pub fn uniform_bound_constant(
    runs: &[SnapshotSeries],
    geo: &SimGeometry,
    tuples: &[Multiindex],
    snap_idx: usize,
    t: f64,
) -> Result<f64> {
    let mut c = 0.0f64;
    for xi in tuples {
        let (n, m) = xi.order();
        let est = estimate_gamma(runs, geo, xi, snap_idx, None)?;
        if est.value > 0.0 {
            let base = est.value.powf(1.0 / (n + m) as f64) * t.powf(geo.dim as f64 / 2.0);
            c = c.max(base);
        }
    }
    Ok(c)
}

/// Residual of the product ansatz in the lowest hierarchy equation,
/// order (1,0): the solution value must reproduce
/// `P_t u0+(r) - (lambda/2) int_0^t int_I p+(t-h, r, z) [u+ u-](h, z) dsigma dh`
/// when the right side is integrated with an independent node count.
pub fn hierarchy_residual_10(
    sol: &crate::pde::CoupledSolution,
    t: f64,
    probes: &[Vec<f64>],
    quad_nodes: usize,
) -> f64 {
    use crate::pde::gauss_legendre;
    let (gl_n, gl_w) = gauss_legendre(quad_nodes);
    let mut worst = 0.0f64;
    for r in probes {
        let lhs = sol.eval(crate::geometry::Side::Plus, t, r);
        let mut rhs = sol.plus.oracle.initial_term(t, r);
        if sol.lambda > 0.0 {
            let mut integral = 0.0;
            for (&tau, &w) in gl_n.iter().zip(&gl_w) {
                let s = t * tau * tau;
                let h = t - s;
                let jac = 2.0 * t * tau;
                let mut inner = 0.0;
                for (z, (pt, sw)) in sol
                    .iface_points
                    .iter()
                    .zip(&sol.iface_weights)
                    .enumerate()
                {
                    let prod = sol.grid.interp(&sol.plus.iface_values, z, h)
                        * sol.grid.interp(&sol.minus.iface_values, z, h);
                    inner += sol.plus.oracle.kernel(s.max(1e-14), r, pt) * prod * sw;
                }
                integral += w * jac * inner;
            }
            rhs -= sol.lambda / 2.0 * integral;
        }
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

/// Residual of the product ansatz at order (1,1): for probe pairs
/// `(r, s)` the product `u+(t,r) u-(t,s)` must reproduce the hierarchy
/// right side, whose boundary term factorizes into an interface sum times
/// a volume semigroup application of the opposite side.
pub fn hierarchy_residual_11(
    sol: &crate::pde::CoupledSolution,
    t: f64,
    probe_pairs: &[(Vec<f64>, Vec<f64>)],
    quad_nodes: usize,
    vol_cells: usize,
) -> f64 {
    use crate::pde::gauss_legendre;
    let (gl_n, gl_w) = gauss_legendre(quad_nodes);
    let (vol_pts_m, vol_wts_m) = sol.minus.oracle.volume_quadrature(vol_cells);
    let (vol_pts_p, vol_wts_p) = sol.plus.oracle.volume_quadrature(vol_cells);
    // tabulate u on the volume grids at the quadrature times
    let theta_of = |tau: f64| t - t * tau * tau;
    let u_minus_tab: Vec<Vec<f64>> = gl_n
        .iter()
        .map(|&tau| {
            let theta = theta_of(tau);
            vol_pts_m
                .iter()
                .map(|b| sol.eval(crate::geometry::Side::Minus, theta, b))
                .collect()
        })
        .collect();
    let u_plus_tab: Vec<Vec<f64>> = gl_n
        .iter()
        .map(|&tau| {
            let theta = theta_of(tau);
            vol_pts_p
                .iter()
                .map(|a| sol.eval(crate::geometry::Side::Plus, theta, a))
                .collect()
        })
        .collect();

    let mut worst = 0.0f64;
    for (r, s) in probe_pairs {
        let lhs = sol.eval(crate::geometry::Side::Plus, t, r)
            * sol.eval(crate::geometry::Side::Minus, t, s);
        let mut rhs = sol.plus.oracle.initial_term(t, r) * sol.minus.oracle.initial_term(t, s);
        if sol.lambda > 0.0 {
            let mut integral = 0.0;
            for (g, (&tau, &w)) in gl_n.iter().zip(&gl_w).enumerate() {
                let sker = (t * tau * tau).max(1e-14);
                let theta = theta_of(tau);
                let jac = 2.0 * t * tau;
                // interface sums against each side's kernel
                let mut a_term = 0.0;
                let mut d_term = 0.0;
                for (z, (pt, sw)) in sol
                    .iface_points
                    .iter()
                    .zip(&sol.iface_weights)
                    .enumerate()
                {
                    let prod = sol.grid.interp(&sol.plus.iface_values, z, theta)
                        * sol.grid.interp(&sol.minus.iface_values, z, theta);
                    a_term += sol.plus.oracle.kernel(sker, r, pt) * prod * sw;
                    d_term += sol.minus.oracle.kernel(sker, s, pt) * prod * sw;
                }
                // volume semigroup applications of the opposite side
                let mut b_term = 0.0;
                for ((b, wb), ub) in vol_pts_m.iter().zip(&vol_wts_m).zip(&u_minus_tab[g]) {
                    b_term += sol.minus.oracle.kernel(sker, s, b) * ub * wb;
                }
                let mut c_term = 0.0;
                for ((a, wa), ua) in vol_pts_p.iter().zip(&vol_wts_p).zip(&u_plus_tab[g]) {
                    c_term += sol.plus.oracle.kernel(sker, r, a) * ua * wa;
                }
                integral += w * jac * (a_term * b_term + c_term * d_term);
            }
            rhs -= sol.lambda / 2.0 * integral;
        }
        worst = worst.max((lhs - rhs).abs());
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductance::build_conductances;
    use crate::density::DensitySpec;
    use crate::fixtures;
    use crate::geometry::{build_interface, build_lattice, Side};
    use crate::sim::{build_sim_geometry, run_ensemble, EnsembleConfig, InitOptions};

    #[test]
    fn falling_factorials() {
        assert_eq!(poisson_poly(0, 7), 1);
        assert_eq!(poisson_poly(2, 3), 6);
        assert_eq!(poisson_poly(4, 3), 0);
        assert_eq!(poisson_poly(3, 10), 720);
    }

    #[test]
    fn pairing_count_basics() {
        // empty tuple pairs in exactly one way
        let eta = [vec![2, 1], vec![0, 3]];
        assert_eq!(pairing_count(&[vec![0, 0], vec![0, 0]], &eta), 1);
        // one plus particle at site 0: eta+(0) choices
        assert_eq!(pairing_count(&[vec![1, 0], vec![0, 0]], &eta), 2);
        // doubled site: falling factorial
        assert_eq!(pairing_count(&[vec![2, 0], vec![0, 0]], &eta), 2);
        assert_eq!(pairing_count(&[vec![0, 0], vec![0, 2]], &eta), 6);
    }

    /// Exhaustive injection-counting oracle: `A` equals the number of
    /// ordered tuples of distinct labeled particles matching the sites.
    #[test]
    fn pairing_count_matches_injection_enumeration() {
        let eta_side = vec![2u32, 1, 3];
        // labeled particles: positions by index
        let mut labels = Vec::new();
        for (site, &c) in eta_side.iter().enumerate() {
            for _ in 0..c {
                labels.push(site as u32);
            }
        }
        // xi tuple (sites, possibly repeated)
        for xi_tuple in [vec![0u32, 2], vec![2, 2], vec![0, 0, 2], vec![1, 1]] {
            let mut xi_occ = vec![0u32; 3];
            for &s in &xi_tuple {
                xi_occ[s as usize] += 1;
            }
            // count ordered injections label-index tuples matching xi_tuple
            let k = xi_tuple.len();
            let mut count = 0i128;
            let nl = labels.len();
            let mut idx = vec![0usize; k];
            'outer: loop {
                let distinct = (0..k).all(|a| (0..a).all(|b| idx[a] != idx[b]));
                if distinct && (0..k).all(|a| labels[idx[a]] == xi_tuple[a]) {
                    count += 1;
                }
                // odometer
                let mut pos = 0;
                loop {
                    idx[pos] += 1;
                    if idx[pos] < nl {
                        break;
                    }
                    idx[pos] = 0;
                    pos += 1;
                    if pos == k {
                        break 'outer;
                    }
                }
            }
            assert_eq!(
                pairing_count_side(&xi_occ, &eta_side),
                count,
                "tuple {xi_tuple:?}"
            );
        }
    }

    /// Split multiplicativity: `A(xi) = A(xi - xi_(x,y)) * A(xi_(x,y))`.
    #[test]
    fn pairing_count_is_multiplicative_over_site_splits() {
        let eta = [vec![3u32, 2, 4], vec![1u32, 2, 0]];
        let xi = [vec![2u32, 1, 0], vec![0u32, 2, 0]];
        for x in 0..3usize {
            for y in 0..3usize {
                let mut only = [vec![0u32; 3], vec![0u32; 3]];
                only[0][x] = xi[0][x];
                only[1][y] = xi[1][y];
                let mut rest = xi.clone();
                rest[0][x] = 0;
                rest[1][y] = 0;
                assert_eq!(
                    pairing_count(&xi, &eta),
                    pairing_count(&rest, &eta) * pairing_count(&only, &eta)
                );
            }
        }
    }

    fn small_ensemble(lambda: f64, replicas: usize, t: f64) -> (crate::sim::SimGeometry, Vec<SnapshotSeries>, [Vec<f64>; 2]) {
        let spec = fixtures::interval_pair();
        let j = 4;
        let lp = build_lattice(&spec, Side::Plus, j).unwrap();
        let lm = build_lattice(&spec, Side::Minus, j).unwrap();
        let cp = build_conductances(&lp, &DensitySpec::flat()).unwrap();
        let cm = build_conductances(&lm, &DensitySpec::flat()).unwrap();
        let iface = build_interface(&spec, &lp, &lm).unwrap();
        let geo = build_sim_geometry(&lp, &cp, &lm, &cm, &iface, lambda);
        let cfg = EnsembleConfig {
            replicas,
            seed: 31,
            t_end: t,
            schedule: vec![t],
            log_events: false,
            init: InitOptions::default(),
        };
        let runs = run_ensemble(&geo, |_| 1.0, |_| 1.0, &cfg, &[]).unwrap();
        let weights: [Vec<f64>; 2] = [geo.m[0].clone(), geo.m[1].clone()];
        (geo, runs, weights)
    }

    #[test]
    fn estimator_is_unbiased_at_time_zero() {
        let spec = fixtures::interval_pair();
        let j = 4;
        let lp = build_lattice(&spec, Side::Plus, j).unwrap();
        let lm = build_lattice(&spec, Side::Minus, j).unwrap();
        let cp = build_conductances(&lp, &DensitySpec::flat()).unwrap();
        let cm = build_conductances(&lm, &DensitySpec::flat()).unwrap();
        let iface = build_interface(&spec, &lp, &lm).unwrap();
        let geo = build_sim_geometry(&lp, &cp, &lm, &cm, &iface, 1.0);
        let cfg = EnsembleConfig {
            replicas: 800,
            seed: 71,
            t_end: 0.0,
            schedule: vec![0.0],
            log_events: false,
            init: InitOptions::default(),
        };
        let runs = run_ensemble(&geo, |_| 1.0, |_| 1.0, &cfg, &[]).unwrap();
        let weights = [geo.m[0].clone(), geo.m[1].clone()];
        for xi in [
            Multiindex {
                plus_sites: vec![5],
                minus_sites: vec![],
            },
            Multiindex {
                plus_sites: vec![3],
                minus_sites: vec![8],
            },
            Multiindex {
                plus_sites: vec![2, 9],
                minus_sites: vec![],
            },
        ] {
            let est = estimate_gamma(&runs, &geo, &xi, 0, None).unwrap();
            let exact = initial_gamma_exact(&geo, &weights, &xi, geo.n_scaling);
            assert!(
                (est.value - exact).abs() <= 3.0 * est.stderr.max(1e-12),
                "xi {xi:?}: {} vs {exact} (se {})",
                est.value,
                est.stderr
            );
        }
    }

    #[test]
    fn transport_dominates_estimates() {
        // comparison bound: gamma(xi, t) <= transported initial correlation
        let (geo, runs, weights) = small_ensemble(2.0, 400, 0.3);
        let spec = fixtures::interval_pair();
        let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
        let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
        let cp = build_conductances(&lp, &DensitySpec::flat()).unwrap();
        let cm = build_conductances(&lm, &DensitySpec::flat()).unwrap();
        for xi in [
            Multiindex {
                plus_sites: vec![7],
                minus_sites: vec![7],
            },
            Multiindex {
                plus_sites: vec![4],
                minus_sites: vec![],
            },
        ] {
            let est = estimate_gamma(&runs, &geo, &xi, 0, None).unwrap();
            let dominating =
                transported_initial_gamma(&geo, [&cp, &cm], &weights, &xi, 0.3, geo.n_scaling)
                    .unwrap();
            assert!(
                est.value <= dominating + 3.0 * est.stderr,
                "xi {xi:?}: {} vs bound {dominating}",
                est.value
            );
        }
    }

    #[test]
    fn zero_lambda_estimate_matches_transport_exactly_in_mean() {
        let (geo, runs, weights) = small_ensemble(0.0, 600, 0.25);
        let spec = fixtures::interval_pair();
        let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
        let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
        let cp = build_conductances(&lp, &DensitySpec::flat()).unwrap();
        let cm = build_conductances(&lm, &DensitySpec::flat()).unwrap();
        let xi = Multiindex {
            plus_sites: vec![6],
            minus_sites: vec![6],
        };
        let est = estimate_gamma(&runs, &geo, &xi, 0, None).unwrap();
        let transported =
            transported_initial_gamma(&geo, [&cp, &cm], &weights, &xi, 0.25, geo.n_scaling)
                .unwrap();
        assert!(
            (est.value - transported).abs() <= 3.0 * est.stderr,
            "{} vs {transported} (se {})",
            est.value,
            est.stderr
        );
    }

    #[test]
    fn hierarchy_residual_collapses_without_coupling() {
        use crate::pde::{solve_coupled_picard, SideOracle, SolverConfig};
        let spec = fixtures::interval_pair();
        let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
        let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
        let iface = build_interface(&spec, &lp, &lm).unwrap();
        let op = SideOracle::analytic(vec![-1.0], vec![0.0], |_| 1.0, 32);
        let om = SideOracle::analytic(vec![0.0], vec![1.0], |_| 1.0, 32);
        let sol = solve_coupled_picard(op, om, &iface, 0.0, 0.5, &SolverConfig::default()).unwrap();
        let probes = vec![vec![-0.3], vec![-0.7]];
        let r10 = hierarchy_residual_10(&sol, 0.5, &probes, 16);
        assert!(r10 < 1e-6, "residual {r10}");
        let pairs = vec![(vec![-0.3], vec![0.4])];
        let r11 = hierarchy_residual_11(&sol, 0.5, &pairs, 12, 32);
        assert!(r11 < 1e-6, "residual {r11}");
    }

    #[test]
    fn hierarchy_residual_richardson_refines() {
        use crate::pde::{solve_coupled_picard, SideOracle, SolverConfig};
        let spec = fixtures::interval_pair();
        let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
        let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
        let iface = build_interface(&spec, &lp, &lm).unwrap();
        let op = SideOracle::analytic(vec![-1.0], vec![0.0], |_| 1.0, 48);
        let om = SideOracle::analytic(vec![0.0], vec![1.0], |_| 1.0, 48);
        let sol = solve_coupled_picard(op, om, &iface, 1.0, 0.5, &SolverConfig::default()).unwrap();
        let probes = vec![vec![-0.4]];
        // compare against a near-converged reference node count
        let reference = hierarchy_residual_10(&sol, 0.5, &probes, 64);
        let coarse = (hierarchy_residual_10(&sol, 0.5, &probes, 4) - reference).abs();
        let fine = (hierarchy_residual_10(&sol, 0.5, &probes, 8) - reference).abs();
        assert!(fine <= 0.5 * coarse + 1e-12, "{coarse} vs {fine}");
    }

    #[test]
    fn hierarchy_residual_zero_data() {
        use crate::pde::{solve_coupled_picard, SideOracle, SolverConfig};
        let spec = fixtures::interval_pair();
        let lp = build_lattice(&spec, Side::Plus, 4).unwrap();
        let lm = build_lattice(&spec, Side::Minus, 4).unwrap();
        let iface = build_interface(&spec, &lp, &lm).unwrap();
        let op = SideOracle::analytic(vec![-1.0], vec![0.0], |_| 0.0, 16);
        let om = SideOracle::analytic(vec![0.0], vec![1.0], |_| 0.0, 16);
        let sol = solve_coupled_picard(op, om, &iface, 1.0, 0.5, &SolverConfig::default()).unwrap();
        let r = hierarchy_residual_10(&sol, 0.5, &[vec![-0.5]], 16);
        assert!(r < 1e-12, "residual {r}");
    }

    #[test]
    fn stderr_cap_guard() {
        let (geo, runs, _) = small_ensemble(1.0, 16, 0.1);
        let xi = Multiindex {
            plus_sites: vec![7],
            minus_sites: vec![7],
        };
        assert!(matches!(
            estimate_gamma(&runs, &geo, &xi, 0, Some(1e-9)),
            Err(Error::InsufficientReplicas { .. })
        ));
    }
}
