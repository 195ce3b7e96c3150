//! Exact event-driven simulation of the two-species interacting system:
//! every particle performs the lattice walk of its side, and for each
//! interface point a pair clock fires at rate `(lambda/eps) * Psi(z)`
//! times the number of particle pairs at the paired sites, removing one
//! particle of each species.
//!
//! Event selection is a two-level scheme: jump-versus-annihilation by
//! total rates, then the particle by an exact integer count tree or the
//! interface point by a float rate tree. One replica owns all mutable
//! state; ensembles run replicas in parallel and reduce in replica order.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::conductance::Conductances;
use crate::error::{Error, Result};
use crate::geometry::{InterfaceDiscretization, LatticeGraph};
use crate::ratetree::{CountTree, RateTree};

/// Per-interface-point normalizer
/// `Psi(z) = (sigma(z)/eps^(d-1)) * eps^(2d) / (m(z+) m(z-))`.
#[derive(Debug, Clone)]
pub struct PsiWeights {
    pub values: Vec<f64>,
}

impl PsiWeights {
    pub fn build(
        iface: &InterfaceDiscretization,
        cond_plus: &Conductances,
        cond_minus: &Conductances,
    ) -> Self {
        let d = iface.dim as i32;
        let eps = iface.eps;
        let values = (0..iface.len())
            .map(|k| {
                let sigma = iface.weights[k];
                let mp = cond_plus.m[iface.paired_plus[k] as usize];
                let mm = cond_minus.m[iface.paired_minus[k] as usize];
                (sigma / eps.powi(d - 1)) * eps.powi(2 * d) / (mp * mm)
            })
            .collect();
        PsiWeights { values }
    }

    /// `(min, max)`; the values are comparable to one uniformly in `eps`.
    pub fn range(&self) -> (f64, f64) {
        let min = self.values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().copied().fold(0.0f64, f64::max);
        (min, max)
    }
}

/// Immutable per-run data shared by all replicas.
#[derive(Debug, Clone)]
pub struct SimGeometry {
    pub dim: usize,
    pub eps: f64,
    pub lambda: f64,
    pub holding_rate: f64,
    /// Particles per side implied by the scaling `N = eps^-d`.
    pub n_scaling: u64,
    pub n_sites: [usize; 2],
    pub site_coords: [Vec<Vec<f64>>; 2],
    pub m: [Vec<f64>; 2],
    // hop CSR per side
    hop_offsets: [Vec<u32>; 2],
    hop_targets: [Vec<u32>; 2],
    hop_cum: [Vec<f64>; 2],
    // interface
    pub psi: PsiWeights,
    pub z_site: [Vec<u32>; 2],
    pub z_points: Vec<Vec<f64>>,
    pub z_weights: Vec<f64>,
    /// `(lambda / eps) * Psi(z)`.
    ann_rate_const: Vec<f64>,
    // interface points touching each site, per side
    site_z_offsets: [Vec<u32>; 2],
    site_z_items: [Vec<u32>; 2],
}

impl SimGeometry {
    pub fn interface_len(&self) -> usize {
        self.z_points.len()
    }
}

pub fn build_sim_geometry(
    lat_plus: &LatticeGraph,
    cond_plus: &Conductances,
    lat_minus: &LatticeGraph,
    cond_minus: &Conductances,
    iface: &InterfaceDiscretization,
    lambda: f64,
) -> SimGeometry {
    let dim = lat_plus.dim;
    let eps = lat_plus.eps;
    let psi = PsiWeights::build(iface, cond_plus, cond_minus);
    let ann_rate_const: Vec<f64> = psi.values.iter().map(|p| lambda / eps * p).collect();

    let mut hop_offsets = [Vec::new(), Vec::new()];
    let mut hop_targets = [Vec::new(), Vec::new()];
    let mut hop_cum = [Vec::new(), Vec::new()];
    for (s, cond) in [cond_plus, cond_minus].into_iter().enumerate() {
        hop_offsets[s].push(0u32);
        for row in &cond.hops {
            for &(y, c) in row {
                hop_targets[s].push(y);
                hop_cum[s].push(c);
            }
            hop_offsets[s].push(hop_targets[s].len() as u32);
        }
    }

    let z_site = [iface.paired_plus.clone(), iface.paired_minus.clone()];
    let mut site_z_offsets = [Vec::new(), Vec::new()];
    let mut site_z_items = [Vec::new(), Vec::new()];
    for (s, lat) in [lat_plus, lat_minus].into_iter().enumerate() {
        let mut per_site: Vec<Vec<u32>> = vec![Vec::new(); lat.len()];
        for (k, &site) in z_site[s].iter().enumerate() {
            per_site[site as usize].push(k as u32);
        }
        site_z_offsets[s].push(0u32);
        for list in per_site {
            site_z_items[s].extend(list);
            site_z_offsets[s].push(site_z_items[s].len() as u32);
        }
    }

    SimGeometry {
        dim,
        eps,
        lambda,
        holding_rate: cond_plus.holding_rate,
        n_scaling: (1.0 / eps.powi(dim as i32)).round() as u64,
        n_sites: [lat_plus.len(), lat_minus.len()],
        site_coords: [lat_plus.vertices.clone(), lat_minus.vertices.clone()],
        m: [cond_plus.m.clone(), cond_minus.m.clone()],
        hop_offsets,
        hop_targets,
        hop_cum,
        psi,
        z_site,
        z_points: iface.points.clone(),
        z_weights: iface.weights.clone(),
        ann_rate_const,
        site_z_offsets,
        site_z_items,
    }
}

/// Mutable state of one replica.
pub struct ParticleState {
    pub eta: [Vec<u32>; 2],
    pub alive: [u64; 2],
    pub clock: f64,
    pub n_init: u64,
    site_trees: [CountTree; 2],
    ann_tree: RateTree,
    rng: ChaCha8Rng,
    events: u64,
    scratch_z: Vec<u32>,
    scratch_pairs: Vec<u64>,
}

/// splitmix-style stream derivation: replica `r` of seed `s` gets a
/// ChaCha8 key from four splitmix64 outputs of `s ^ r * golden`.
pub fn derive_stream(seed: u64, replica: u64) -> [u8; 32] {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
    let mut state = seed ^ replica.wrapping_mul(GOLDEN) ^ 0x243F_6A88_85A3_08D3;
    let mut out = [0u8; 32];
    for chunk in out.chunks_mut(8) {
        state = state.wrapping_add(GOLDEN);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    out
}

/// Relaxation of the `N * eps^d = 1` scaling allowed by `init_state`.
#[derive(Debug, Clone, Copy)]
pub struct InitOptions {
    pub n_override: Option<u64>,
    pub scaling_relaxation: f64,
}

impl Default for InitOptions {
    fn default() -> Self {
        InitOptions {
            n_override: None,
            scaling_relaxation: 0.0,
        }
    }
}

/// Place `N` independent particles per side with per-site weights
/// `u0(x) m(x)`, normalized.
pub fn init_state<F, G>(
    geo: &SimGeometry,
    u0_plus: F,
    u0_minus: G,
    seed: u64,
    replica: u64,
    opts: InitOptions,
) -> Result<ParticleState>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64]) -> f64,
{
    let n = opts.n_override.unwrap_or(geo.n_scaling);
    let scaling = n as f64 * geo.eps.powi(geo.dim as i32);
    if (scaling - 1.0).abs() > opts.scaling_relaxation + 1e-12 {
        return Err(Error::BadScaling(scaling));
    }
    let mut rng = ChaCha8Rng::from_seed(derive_stream(seed, replica));

    let mut eta = [vec![0u32; geo.n_sites[0]], vec![0u32; geo.n_sites[1]]];
    for side in 0..2 {
        let mut cum = Vec::with_capacity(geo.n_sites[side]);
        let mut acc = 0.0;
        for (x, m) in geo.site_coords[side].iter().zip(&geo.m[side]) {
            let w = if side == 0 { u0_plus(x) } else { u0_minus(x) };
            assert!(w >= 0.0, "initial density must be nonnegative");
            acc += w * m;
            cum.push(acc);
        }
        assert!(acc > 0.0, "initial density vanishes on the lattice");
        for _ in 0..n {
            let u = rng.gen::<f64>() * acc;
            let k = cum.partition_point(|&c| c <= u).min(geo.n_sites[side] - 1);
            eta[side][k] += 1;
        }
    }

    let mut site_trees = [CountTree::new(geo.n_sites[0]), CountTree::new(geo.n_sites[1])];
    for side in 0..2 {
        for (i, &c) in eta[side].iter().enumerate() {
            if c > 0 {
                site_trees[side].set(i, c as u64);
            }
        }
    }
    let mut ann_tree = RateTree::new(geo.interface_len().max(1));
    for k in 0..geo.interface_len() {
        let pairs = pair_count(&eta, geo, k);
        if pairs > 0 {
            ann_tree.set(k, geo.ann_rate_const[k] * pairs as f64);
        }
    }

    Ok(ParticleState {
        eta,
        alive: [n, n],
        clock: 0.0,
        n_init: n,
        site_trees,
        ann_tree,
        rng,
        events: 0,
        scratch_z: Vec::with_capacity(8),
        scratch_pairs: Vec::with_capacity(8),
    })
}

fn pair_count(eta: &[Vec<u32>; 2], geo: &SimGeometry, z: usize) -> u64 {
    let p = eta[0][geo.z_site[0][z] as usize] as u64;
    let m = eta[1][geo.z_site[1][z] as usize] as u64;
    p * m
}

/// Test function bundle for one martingale diagnostic: values, discrete
/// generator values, and interface-site values of `phi` on one side.
#[derive(Debug, Clone)]
pub struct MartingaleSpec {
    pub side: usize,
    pub phi: Vec<f64>,
    pub a_phi: Vec<f64>,
    pub phi_at_z: Vec<f64>,
}

impl MartingaleSpec {
    /// Build from a closure; the generator values come from the hop
    /// probabilities, `A phi(x) = rate * sum_y p_xy (phi(y) - phi(x))`.
    pub fn from_fn<F: Fn(&[f64]) -> f64>(
        geo: &SimGeometry,
        cond: &Conductances,
        side: usize,
        f: F,
    ) -> Self {
        let phi: Vec<f64> = geo.site_coords[side].iter().map(|x| f(x)).collect();
        let a_phi: Vec<f64> = (0..phi.len())
            .map(|x| {
                let mut prev = 0.0;
                let mut acc = 0.0;
                for &(y, c) in &cond.hops[x] {
                    acc += (c - prev) * (phi[y as usize] - phi[x]);
                    prev = c;
                }
                acc * cond.holding_rate
            })
            .collect();
        let phi_at_z: Vec<f64> = geo.z_site[side]
            .iter()
            .map(|&s| phi[s as usize])
            .collect();
        MartingaleSpec {
            side,
            phi,
            a_phi,
            phi_at_z,
        }
    }
}

struct MartingaleTracker<'a> {
    spec: &'a MartingaleSpec,
    /// `<phi, X_t>`, `<A phi, X_t>`, `<J_t, phi>` maintained incrementally.
    v_phi: f64,
    v_aphi: f64,
    v_flux: f64,
    v_phi0: f64,
    int_aphi: f64,
    int_flux: f64,
    coeff_flux: f64,
    inv_n: f64,
    sup_m2: f64,
    checkpoints: Vec<f64>,
}

impl<'a> MartingaleTracker<'a> {
    fn new(spec: &'a MartingaleSpec, geo: &SimGeometry, state: &ParticleState) -> Self {
        let inv_n = 1.0 / state.n_init as f64;
        let eta = &state.eta[spec.side];
        let v_phi: f64 = eta
            .iter()
            .zip(&spec.phi)
            .map(|(&c, p)| c as f64 * p)
            .sum::<f64>()
            * inv_n;
        let v_aphi: f64 = eta
            .iter()
            .zip(&spec.a_phi)
            .map(|(&c, a)| c as f64 * a)
            .sum::<f64>()
            * inv_n;
        let mut v_flux = 0.0;
        for z in 0..geo.interface_len() {
            v_flux += geo.eps.powi(geo.dim as i32 - 1)
                * geo.psi.values[z]
                * pair_count(&state.eta, geo, z) as f64
                * spec.phi_at_z[z];
        }
        // lambda / (N eps^d); equals lambda under the exact scaling
        let coeff_flux =
            geo.lambda / (state.n_init as f64 * geo.eps.powi(geo.dim as i32));
        MartingaleTracker {
            spec,
            v_phi,
            v_aphi,
            v_flux,
            v_phi0: v_phi,
            int_aphi: 0.0,
            int_flux: 0.0,
            coeff_flux,
            inv_n,
            sup_m2: 0.0,
            checkpoints: Vec::new(),
        }
    }

    fn integrate(&mut self, dt: f64) {
        self.int_aphi += self.v_aphi * dt;
        self.int_flux += self.v_flux * dt;
        let m = self.value();
        self.sup_m2 = self.sup_m2.max(m * m);
    }

    fn value(&self) -> f64 {
        self.v_phi - self.v_phi0 - self.int_aphi + self.coeff_flux * self.int_flux
    }

    fn on_move(&mut self, side: usize, from: usize, to: usize) {
        if side == self.spec.side {
            self.v_phi += (self.spec.phi[to] - self.spec.phi[from]) * self.inv_n;
            self.v_aphi += (self.spec.a_phi[to] - self.spec.a_phi[from]) * self.inv_n;
        }
    }

    fn on_remove(&mut self, side: usize, site: usize) {
        if side == self.spec.side {
            self.v_phi -= self.spec.phi[site] * self.inv_n;
            self.v_aphi -= self.spec.a_phi[site] * self.inv_n;
        }
    }

    fn on_pair_delta(&mut self, geo: &SimGeometry, z: usize, delta_pairs: i64) {
        self.v_flux += geo.eps.powi(geo.dim as i32 - 1)
            * geo.psi.values[z]
            * delta_pairs as f64
            * self.spec.phi_at_z[z];
    }
}

/// One recorded event, for the optional log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    /// 0 = plus jump, 1 = minus jump, 2 = annihilation.
    pub kind: u8,
    pub a: u32,
    pub b: u32,
}

/// Per-tracker martingale output.
#[derive(Debug, Clone)]
pub struct MartingaleSeries {
    pub checkpoints: Vec<f64>,
    pub sup_m2: f64,
}

/// Snapshots along one trajectory plus annihilation events.
#[derive(Debug, Clone)]
pub struct SnapshotSeries {
    pub times: Vec<f64>,
    pub eta: Vec<[Vec<u32>; 2]>,
    pub alive: Vec<[u64; 2]>,
    pub ann_events: Vec<(f64, u32)>,
    pub martingales: Vec<MartingaleSeries>,
    pub event_log: Option<Vec<Event>>,
    pub n_init: u64,
}

impl SnapshotSeries {
    /// Empirical measure (per-site mass) of a recorded snapshot.
    pub fn empirical_measure(&self, idx: usize, side: usize) -> Vec<f64> {
        let n = self.n_init as f64;
        self.eta[idx][side].iter().map(|&c| c as f64 / n).collect()
    }

    pub fn total_mass(&self, idx: usize, side: usize) -> f64 {
        self.alive[idx][side] as f64 / self.n_init as f64
    }
}

/// Empirical measure of a live state.
pub fn empirical_measure(state: &ParticleState, side: usize) -> Vec<f64> {
    let n = state.n_init as f64;
    state.eta[side].iter().map(|&c| c as f64 / n).collect()
}

/// Pathwise interface-pair functional
/// `<J, phi> = eps^(d-1) sum_z Psi(z) eta+(z+) eta-(z-) phi(z_side)`
/// evaluated on a snapshot occupancy.
pub fn annihilation_flux<F: Fn(&[f64]) -> f64>(
    geo: &SimGeometry,
    eta: &[Vec<u32>; 2],
    side: usize,
    phi: F,
) -> f64 {
    let scale = geo.eps.powi(geo.dim as i32 - 1);
    let mut acc = 0.0;
    for z in 0..geo.interface_len() {
        let pairs = pair_count(eta, geo, z) as f64;
        if pairs > 0.0 {
            let site = geo.z_site[side][z] as usize;
            acc += scale * geo.psi.values[z] * pairs * phi(&geo.site_coords[side][site]);
        }
    }
    acc
}

const AUDIT_INTERVAL: u64 = 1 << 20;

/// Exact Gillespie evolution to `t_end`, recording snapshots at the
/// scheduled times (state left-limits) and martingale checkpoints.
pub fn advance(
    state: &mut ParticleState,
    geo: &SimGeometry,
    t_end: f64,
    schedule: &[f64],
    mart_specs: &[MartingaleSpec],
    log_events: bool,
) -> SnapshotSeries {
    assert!(t_end >= state.clock, "t_end precedes the clock");
    debug_assert!(schedule.windows(2).all(|w| w[0] < w[1]));

    let mut out = SnapshotSeries {
        times: Vec::with_capacity(schedule.len()),
        eta: Vec::with_capacity(schedule.len()),
        alive: Vec::with_capacity(schedule.len()),
        ann_events: Vec::new(),
        martingales: Vec::new(),
        event_log: log_events.then(Vec::new),
        n_init: state.n_init,
    };
    let mut trackers: Vec<MartingaleTracker> = mart_specs
        .iter()
        .map(|s| MartingaleTracker::new(s, geo, state))
        .collect();
    let mut si = schedule.partition_point(|&s| s < state.clock);
    let mut integrated_to = state.clock;

    macro_rules! integrate_to {
        ($t:expr) => {{
            let dt = $t - integrated_to;
            if dt > 0.0 {
                for tr in trackers.iter_mut() {
                    tr.integrate(dt);
                }
                integrated_to = $t;
            }
        }};
    }
    macro_rules! record_snapshot {
        ($t:expr) => {{
            integrate_to!($t);
            out.times.push($t);
            out.eta.push([state.eta[0].clone(), state.eta[1].clone()]);
            out.alive.push(state.alive);
            for tr in trackers.iter_mut() {
                let v = tr.value();
                tr.checkpoints.push(v);
            }
        }};
    }

    loop {
        let r_jump = geo.holding_rate * (state.alive[0] + state.alive[1]) as f64;
        let r_ann = state.ann_tree.total();
        let r = r_jump + r_ann;
        if r == 0.0 {
            break;
        }
        let u: f64 = state.rng.gen();
        let t_next = state.clock + (-(1.0 - u).ln()) / r;
        while si < schedule.len() && schedule[si] <= t_next && schedule[si] <= t_end {
            record_snapshot!(schedule[si]);
            si += 1;
        }
        if t_next > t_end {
            integrate_to!(t_end);
            state.clock = t_end;
            break;
        }
        integrate_to!(t_next);
        state.clock = t_next;

        let pick: f64 = state.rng.gen();
        if pick * r < r_jump {
            // jump: uniform alive particle, then a neighbor from p_xy
            let total_alive = state.alive[0] + state.alive[1];
            let v = state.rng.gen_range(0..total_alive);
            let (side, target) = if v < state.alive[0] {
                (0usize, v)
            } else {
                (1usize, v - state.alive[0])
            };
            let x = state.site_trees[side].sample(target);
            let (a, b) = (
                geo.hop_offsets[side][x] as usize,
                geo.hop_offsets[side][x + 1] as usize,
            );
            if a == b {
                // isolated site: the clock ticks but there is nowhere to go
                continue;
            }
            let dir: f64 = state.rng.gen();
            let mut y = geo.hop_targets[side][b - 1] as usize;
            for k in a..b {
                if dir < geo.hop_cum[side][k] {
                    y = geo.hop_targets[side][k] as usize;
                    break;
                }
            }
            apply_move(state, geo, &mut trackers, side, x, y);
            if let Some(log) = out.event_log.as_mut() {
                log.push(Event {
                    t: state.clock,
                    kind: side as u8,
                    a: x as u32,
                    b: y as u32,
                });
            }
        } else {
            let pos: f64 = state.rng.gen::<f64>() * r_ann;
            let z = state.ann_tree.sample(pos);
            apply_annihilation(state, geo, &mut trackers, z);
            out.ann_events.push((state.clock, z as u32));
            if let Some(log) = out.event_log.as_mut() {
                log.push(Event {
                    t: state.clock,
                    kind: 2,
                    a: z as u32,
                    b: 0,
                });
            }
        }
        state.events += 1;
        if cfg!(debug_assertions) && state.events % AUDIT_INTERVAL == 0 {
            debug_assert!(audit_consistency(state, geo), "rate audit failed");
        }
    }

    // absorbing or past t_end: flush remaining snapshots
    while si < schedule.len() && schedule[si] <= t_end {
        record_snapshot!(schedule[si]);
        si += 1;
    }
    state.clock = state.clock.max(t_end);
    out.martingales = trackers
        .into_iter()
        .map(|tr| MartingaleSeries {
            checkpoints: tr.checkpoints,
            sup_m2: tr.sup_m2,
        })
        .collect();
    out
}

fn apply_move(
    state: &mut ParticleState,
    geo: &SimGeometry,
    trackers: &mut [MartingaleTracker],
    side: usize,
    x: usize,
    y: usize,
) {
    collect_touched(state, geo, &[(side, x), (side, y)]);
    state.eta[side][x] -= 1;
    state.eta[side][y] += 1;
    state.site_trees[side].set(x, state.eta[side][x] as u64);
    state.site_trees[side].set(y, state.eta[side][y] as u64);
    for tr in trackers.iter_mut() {
        tr.on_move(side, x, y);
    }
    refresh_touched(state, geo, trackers);
}

fn apply_annihilation(
    state: &mut ParticleState,
    geo: &SimGeometry,
    trackers: &mut [MartingaleTracker],
    z: usize,
) {
    let zp = geo.z_site[0][z] as usize;
    let zm = geo.z_site[1][z] as usize;
    debug_assert!(state.eta[0][zp] > 0 && state.eta[1][zm] > 0);
    collect_touched(state, geo, &[(0, zp), (1, zm)]);
    state.eta[0][zp] -= 1;
    state.eta[1][zm] -= 1;
    state.alive[0] -= 1;
    state.alive[1] -= 1;
    state.site_trees[0].set(zp, state.eta[0][zp] as u64);
    state.site_trees[1].set(zm, state.eta[1][zm] as u64);
    for tr in trackers.iter_mut() {
        tr.on_remove(0, zp);
        tr.on_remove(1, zm);
    }
    refresh_touched(state, geo, trackers);
}

/// Record the interface points touching the given sites together with
/// their pre-update pair counts (deduplicated) into the scratch buffers.
fn collect_touched(state: &mut ParticleState, geo: &SimGeometry, sites: &[(usize, usize)]) {
    state.scratch_z.clear();
    state.scratch_pairs.clear();
    for &(side, site) in sites {
        let (a, b) = (
            geo.site_z_offsets[side][site] as usize,
            geo.site_z_offsets[side][site + 1] as usize,
        );
        for idx in a..b {
            let z = geo.site_z_items[side][idx];
            if !state.scratch_z.contains(&z) {
                state.scratch_z.push(z);
            }
        }
    }
    for i in 0..state.scratch_z.len() {
        let z = state.scratch_z[i] as usize;
        let pairs = pair_count(&state.eta, geo, z);
        state.scratch_pairs.push(pairs);
    }
}

/// After the occupancy update, refresh rates and push exact pair deltas.
fn refresh_touched(
    state: &mut ParticleState,
    geo: &SimGeometry,
    trackers: &mut [MartingaleTracker],
) {
    for i in 0..state.scratch_z.len() {
        let z = state.scratch_z[i] as usize;
        let old = state.scratch_pairs[i];
        let new = pair_count(&state.eta, geo, z);
        if new != old {
            state.ann_tree.set(z, geo.ann_rate_const[z] * new as f64);
            for tr in trackers.iter_mut() {
                tr.on_pair_delta(geo, z, new as i64 - old as i64);
            }
        }
    }
}

/// Exact from-scratch consistency of the incremental structures.
pub fn audit_consistency(state: &ParticleState, geo: &SimGeometry) -> bool {
    for side in 0..2 {
        if state.alive[side] != state.eta[side].iter().map(|&c| c as u64).sum::<u64>() {
            return false;
        }
        if !state.site_trees[side].audit() {
            return false;
        }
        for (i, &c) in state.eta[side].iter().enumerate() {
            if state.site_trees[side].get(i) != c as u64 {
                return false;
            }
        }
    }
    if !state.ann_tree.audit() {
        return false;
    }
    for z in 0..geo.interface_len() {
        let expect = geo.ann_rate_const[z] * pair_count(&state.eta, geo, z) as f64;
        if state.ann_tree.get(z) != expect && expect != 0.0 {
            return false;
        }
        if expect == 0.0 && state.ann_tree.get(z) != 0.0 {
            return false;
        }
    }
    true
}

/// Ensemble configuration.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub replicas: usize,
    pub seed: u64,
    pub t_end: f64,
    pub schedule: Vec<f64>,
    pub log_events: bool,
    pub init: InitOptions,
}

/// Run independent replicas in parallel; results are ordered by replica
/// index, so any reduction over them is deterministic.
pub fn run_ensemble<F, G>(
    geo: &SimGeometry,
    u0_plus: F,
    u0_minus: G,
    cfg: &EnsembleConfig,
    mart_specs: &[MartingaleSpec],
) -> Result<Vec<SnapshotSeries>>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> f64 + Sync,
{
    (0..cfg.replicas)
        .into_par_iter()
        .map(|r| {
            let mut state = init_state(geo, &u0_plus, &u0_minus, cfg.seed, r as u64, cfg.init)?;
            Ok(advance(
                &mut state,
                geo,
                cfg.t_end,
                &cfg.schedule,
                mart_specs,
                cfg.log_events,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conductance::build_conductances;
    use crate::density::DensitySpec;
    use crate::fixtures;
    use crate::geometry::{build_interface, build_lattice, DomainSpec, RatBox, Side};
    use crate::rat::{JsonRat, Rat};

    fn geometry_for(spec: &DomainSpec, j: u32, lambda: f64) -> SimGeometry {
        let lp = build_lattice(spec, Side::Plus, j).unwrap();
        let lm = build_lattice(spec, Side::Minus, j).unwrap();
        let cp = build_conductances(&lp, spec.rho(Side::Plus)).unwrap();
        let cm = build_conductances(&lm, spec.rho(Side::Minus)).unwrap();
        let iface = build_interface(spec, &lp, &lm).unwrap();
        build_sim_geometry(&lp, &cp, &lm, &cm, &iface, lambda)
    }

    fn uniform(_: &[f64]) -> f64 {
        1.0
    }

    #[test]
    fn zero_lambda_conserves_both_species() {
        let geo = geometry_for(&fixtures::interval_pair(), 3, 0.0);
        let mut state = init_state(&geo, uniform, uniform, 7, 0, InitOptions::default()).unwrap();
        let series = advance(&mut state, &geo, 0.5, &[0.1, 0.3, 0.5], &[], false);
        for alive in &series.alive {
            assert_eq!(alive[0], geo.n_scaling);
            assert_eq!(alive[1], geo.n_scaling);
        }
        assert!(series.ann_events.is_empty());
        assert!(audit_consistency(&state, &geo));
    }

    #[test]
    fn initial_mass_is_exactly_one() {
        let geo = geometry_for(&fixtures::interval_pair(), 4, 1.0);
        let state = init_state(&geo, uniform, uniform, 3, 0, InitOptions::default()).unwrap();
        for side in 0..2 {
            let mass: f64 = empirical_measure(&state, side).iter().sum();
            assert_eq!(mass, 1.0);
        }
    }

    #[test]
    fn species_difference_is_invariant() {
        let geo = geometry_for(&fixtures::interval_pair(), 3, 4.0);
        let mut state = init_state(&geo, uniform, uniform, 11, 0, InitOptions::default()).unwrap();
        let series = advance(&mut state, &geo, 1.0, &[0.25, 0.5, 1.0], &[], false);
        for alive in &series.alive {
            assert_eq!(alive[0] as i64 - alive[1] as i64, 0);
        }
        assert!(!series.ann_events.is_empty(), "lambda=4 should annihilate");
        assert!(audit_consistency(&state, &geo));
    }

    #[test]
    fn identical_seeds_give_identical_event_logs() {
        let geo = geometry_for(&fixtures::two_unit_squares(), 3, 1.0);
        let run = || {
            let mut state =
                init_state(&geo, uniform, uniform, 99, 5, InitOptions::default()).unwrap();
            advance(&mut state, &geo, 0.3, &[0.3], &[], true)
        };
        let (a, b) = (run(), run());
        assert_eq!(a.event_log.unwrap(), b.event_log.unwrap());
        assert_eq!(a.eta, b.eta);
    }

    #[test]
    fn scaling_guard() {
        let geo = geometry_for(&fixtures::interval_pair(), 3, 1.0);
        let bad = init_state(
            &geo,
            uniform,
            uniform,
            1,
            0,
            InitOptions {
                n_override: Some(5),
                scaling_relaxation: 0.0,
            },
        );
        assert!(matches!(bad, Err(Error::BadScaling(_))));
        let relaxed = init_state(
            &geo,
            uniform,
            uniform,
            1,
            0,
            InitOptions {
                n_override: Some(7),
                scaling_relaxation: 0.2,
            },
        );
        assert!(relaxed.is_ok());
    }

    /// One site per side: annihilation is a pure exponential clock with
    /// rate `lambda Psi / eps`; jump events are no-ops and do not disturb
    /// the law. Mean over many replicas must match `eps / (lambda Psi)`.
    #[test]
    fn single_pair_annihilation_time_is_exponential() {
        let spec = DomainSpec {
            dimension: 1,
            boxes_plus: vec![RatBox {
                lo: vec![JsonRat(Rat::new(-1, 2))],
                hi: vec![JsonRat(Rat::new(0, 1))],
            }],
            boxes_minus: vec![RatBox {
                lo: vec![JsonRat(Rat::new(0, 1))],
                hi: vec![JsonRat(Rat::new(1, 2))],
            }],
            anchor_plus: vec![JsonRat(Rat::new(-1, 4))],
            anchor_minus: vec![JsonRat(Rat::new(1, 4))],
            rho_plus: DensitySpec::flat(),
            rho_minus: DensitySpec::flat(),
            lambda: 1.0,
            lipschitz_m: 1.0,
        };
        let geo = geometry_for(&spec, 1, 1.0);
        assert_eq!(geo.n_sites, [1, 1]);
        assert_eq!(geo.interface_len(), 1);
        let psi = geo.psi.values[0];
        let expect_mean = geo.eps / (geo.lambda * psi);

        let replicas = 10_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..replicas {
            let mut state = init_state(
                &geo,
                uniform,
                uniform,
                42,
                r,
                InitOptions {
                    n_override: Some(1),
                    scaling_relaxation: 1.0,
                },
            )
            .unwrap();
            let series = advance(&mut state, &geo, 50.0, &[], &[], false);
            assert_eq!(series.ann_events.len(), 1);
            let t = series.ann_events[0].0;
            sum += t;
            sumsq += t * t;
        }
        let mean = sum / replicas as f64;
        let var = sumsq / replicas as f64 - mean * mean;
        let se = (var / replicas as f64).sqrt();
        assert!(
            (mean - expect_mean).abs() <= 3.0 * se,
            "mean {mean} vs {expect_mean} (se {se})"
        );
    }

    /// A single lambda=0 particle occupies sites with the kernel law.
    #[test]
    fn single_particle_matches_kernel_distribution() {
        use crate::kernel::{occupation_rows, SparseStep, UNIFORMIZATION_TOL};
        let spec = fixtures::interval_pair();
        let lat = build_lattice(&spec, Side::Minus, 3).unwrap();
        let cond = build_conductances(&lat, &DensitySpec::flat()).unwrap();
        let geo = geometry_for(&spec, 3, 0.0);
        let start = lat
            .vertices
            .iter()
            .position(|v| (v[0] - 0.5).abs() < 1e-12)
            .unwrap();
        let t = 0.4;
        let replicas = 10_000u64;
        let mut counts = vec![0u64; lat.len()];
        for r in 0..replicas {
            // lambda = 0 decouples the sides; the plus particle is ignored
            let mut state = init_state(
                &geo,
                uniform,
                |x: &[f64]| if (x[0] - 0.5).abs() < 1e-12 { 1.0 } else { 0.0 },
                7,
                r,
                InitOptions {
                    n_override: Some(1),
                    scaling_relaxation: 1.0,
                },
            )
            .unwrap();
            let series = advance(&mut state, &geo, t, &[t], &[], false);
            let site = series.eta[0][1].iter().position(|&c| c == 1).unwrap();
            counts[site] += 1;
        }
        let step = SparseStep::new(&cond);
        let law = occupation_rows(&cond, &step, start, &[t], UNIFORMIZATION_TOL).unwrap();
        let tv: f64 = counts
            .iter()
            .zip(&law[0])
            .map(|(&c, &p)| (c as f64 / replicas as f64 - p).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.03, "total variation {tv}");
    }

    #[test]
    fn flux_identity_between_sides() {
        let geo = geometry_for(&fixtures::two_unit_squares(), 3, 1.0);
        let mut state = init_state(&geo, uniform, uniform, 3, 2, InitOptions::default()).unwrap();
        let series = advance(&mut state, &geo, 0.2, &[0.1, 0.2], &[], false);
        for idx in 0..series.times.len() {
            let jp = annihilation_flux(&geo, &series.eta[idx], 0, |_| 1.0);
            let jm = annihilation_flux(&geo, &series.eta[idx], 1, |_| 1.0);
            assert_eq!(jp, jm);
        }
    }

    /// lambda = 0, single particle: the tracked quantity is the Dynkin
    /// martingale of the walk; over replicas its mean must be near zero.
    #[test]
    fn dynkin_martingale_has_zero_mean() {
        let spec = fixtures::interval_pair();
        let lat = build_lattice(&spec, Side::Minus, 3).unwrap();
        let cond = build_conductances(&lat, &DensitySpec::flat()).unwrap();
        let geo = geometry_for(&spec, 3, 0.0);
        let mspec = MartingaleSpec::from_fn(&geo, &cond, 1, |x| x[0] * x[0]);
        let cfg = EnsembleConfig {
            replicas: 400,
            seed: 17,
            t_end: 0.5,
            schedule: vec![0.25, 0.5],
            log_events: false,
            init: InitOptions::default(),
        };
        let runs = run_ensemble(&geo, uniform, uniform, &cfg, &[mspec]).unwrap();
        for k in 0..2 {
            let vals: Vec<f64> = runs.iter().map(|r| r.martingales[0].checkpoints[k]).collect();
            let mean: f64 = vals.iter().sum::<f64>() / vals.len() as f64;
            let var: f64 =
                vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (vals.len() - 1) as f64;
            let se = (var / vals.len() as f64).sqrt();
            assert!(mean.abs() <= 3.0 * se.max(1e-12), "checkpoint {k}: {mean} vs se {se}");
        }
    }

    #[test]
    fn monotone_in_lambda_on_average() {
        let spec = fixtures::interval_pair();
        let mut survivors = Vec::new();
        for lambda in [0.5, 2.0] {
            let geo = geometry_for(&spec, 4, lambda);
            let cfg = EnsembleConfig {
                replicas: 150,
                seed: 5,
                t_end: 0.5,
                schedule: vec![0.5],
                log_events: false,
                init: InitOptions::default(),
            };
            let runs = run_ensemble(&geo, uniform, uniform, &cfg, &[]).unwrap();
            let mean: f64 =
                runs.iter().map(|r| r.alive[0][0] as f64).sum::<f64>() / runs.len() as f64;
            survivors.push(mean);
        }
        assert!(
            survivors[1] < survivors[0],
            "higher lambda should not keep more particles: {survivors:?}"
        );
    }

    #[test]
    fn chi_square_fit_of_initial_placement() {
        // N = 4096 samples against u0 * m with binned sites, alpha = 0.01
        let geo = geometry_for(&fixtures::two_unit_squares(), 3, 1.0);
        let u0 = |x: &[f64]| 1.0 + 0.25 * x[1];
        let state = init_state(
            &geo,
            uniform,
            u0,
            2024,
            0,
            InitOptions {
                n_override: Some(4096),
                scaling_relaxation: 100.0,
            },
        )
        .unwrap();
        let weights: Vec<f64> = geo.site_coords[1]
            .iter()
            .zip(&geo.m[1])
            .map(|(x, m)| u0(x) * m)
            .collect();
        let total_w: f64 = weights.iter().sum();
        // bin consecutive sites until expected count >= 50
        let n = 4096.0;
        let mut expected = Vec::new();
        let mut observed = Vec::new();
        let (mut e_acc, mut o_acc) = (0.0, 0.0);
        for (i, w) in weights.iter().enumerate() {
            e_acc += w / total_w * n;
            o_acc += state.eta[1][i] as f64;
            if e_acc >= 50.0 {
                expected.push(e_acc);
                observed.push(o_acc);
                e_acc = 0.0;
                o_acc = 0.0;
            }
        }
        if e_acc > 0.0 {
            let last = expected.len() - 1;
            expected[last] += e_acc;
            observed[last] += o_acc;
        }
        let chi2: f64 = expected
            .iter()
            .zip(&observed)
            .map(|(e, o)| (o - e) * (o - e) / e)
            .sum();
        let df = (expected.len() - 1) as f64;
        // Wilson-Hilferty approximation of the 0.99 quantile
        let z = 2.326_347_874_040_841;
        let crit = df * (1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} vs critical {crit} (df {df})");
    }

    #[test]
    fn psi_weights_are_order_one() {
        for j in [3u32, 4, 5] {
            let geo = geometry_for(&fixtures::two_unit_squares(), j, 1.0);
            let (lo, hi) = geo.psi.range();
            assert!(lo > 0.2 && hi < 5.0, "j={j}: psi range [{lo}, {hi}]");
        }
    }
}
