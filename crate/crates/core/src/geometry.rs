//! Discrete geometry: lattice approximations of the two domains and the
//! point approximation of the interface with its surface weights.
//!
//! Domains are finite unions of open axis-aligned boxes with rational
//! corners. All membership and adjacency decisions are made in exact
//! rational arithmetic; floating point enters only in the published
//! coordinates and weights.

use std::collections::{HashMap, VecDeque};
use std::io::Write;

use num::Zero;
use serde::{Deserialize, Serialize};

use crate::density::DensitySpec;
use crate::error::{Error, Result};
use crate::rat::{dyadic, rat_ceil, rat_floor, rat_to_f64, JsonRat, Rat};

/// Open axis-aligned box, serialized as `[[lo...],[hi...]]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RatBox {
    pub lo: Vec<JsonRat>,
    pub hi: Vec<JsonRat>,
}

impl RatBox {
    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    fn contains(&self, p: &[Rat]) -> bool {
        p.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(x, (lo, hi))| lo.0 < *x && *x < hi.0)
    }
}

/// Which of the two adjacent domains a construction refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        }
    }
}

/// Geometric description of the adjacent domains, their densities, and the
/// annihilation strength.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dimension: usize,
    pub boxes_plus: Vec<RatBox>,
    pub boxes_minus: Vec<RatBox>,
    pub anchor_plus: Vec<JsonRat>,
    pub anchor_minus: Vec<JsonRat>,
    #[serde(default)]
    pub rho_plus: DensitySpec,
    #[serde(default)]
    pub rho_minus: DensitySpec,
    pub lambda: f64,
    #[serde(default = "default_lipschitz", alias = "lipschitz_M")]
    pub lipschitz_m: f64,
}

fn default_lipschitz() -> f64 {
    1.0
}

impl DomainSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        let spec: DomainSpec = serde_json::from_str(text)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dimension;
        if !(1..=2).contains(&d) {
            return Err(Error::Config(format!("dimension {d} not supported")));
        }
        for b in self.boxes_plus.iter().chain(&self.boxes_minus) {
            if b.lo.len() != d || b.hi.len() != d {
                return Err(Error::Config("box dimension mismatch".into()));
            }
            for (lo, hi) in b.lo.iter().zip(&b.hi) {
                if lo.0 >= hi.0 {
                    return Err(Error::Config("box has empty side".into()));
                }
            }
        }
        self.rho_plus.validate(d).map_err(|e| e)?;
        self.rho_minus.validate(d)?;
        if self.lambda < 0.0 {
            return Err(Error::Config("lambda must be nonnegative".into()));
        }
        let ap: Vec<Rat> = self.anchor_plus.iter().map(|r| r.0).collect();
        let am: Vec<Rat> = self.anchor_minus.iter().map(|r| r.0).collect();
        if !point_in_union(&self.boxes_plus, &ap) {
            return Err(Error::Config("anchor_plus is not inside D+".into()));
        }
        if !point_in_union(&self.boxes_minus, &am) {
            return Err(Error::Config("anchor_minus is not inside D-".into()));
        }
        Ok(())
    }

    pub fn boxes(&self, side: Side) -> &[RatBox] {
        match side {
            Side::Plus => &self.boxes_plus,
            Side::Minus => &self.boxes_minus,
        }
    }

    pub fn anchor(&self, side: Side) -> Vec<Rat> {
        let a = match side {
            Side::Plus => &self.anchor_plus,
            Side::Minus => &self.anchor_minus,
        };
        a.iter().map(|r| r.0).collect()
    }

    pub fn rho(&self, side: Side) -> &DensitySpec {
        match side {
            Side::Plus => &self.rho_plus,
            Side::Minus => &self.rho_minus,
        }
    }
}

pub fn point_in_union(boxes: &[RatBox], p: &[Rat]) -> bool {
    boxes.iter().any(|b| b.contains(p))
}

/// Does the closed axis-parallel segment from `p` to `p + len*e_axis` lie in
/// the open union? The union restricted to the segment's line is a set of
/// open intervals; two intervals only merge when they genuinely overlap
/// (touching endpoints leave the shared point outside the set).
pub fn segment_in_union(boxes: &[RatBox], p: &[Rat], axis: usize, len: Rat) -> bool {
    let a = p[axis];
    let b = a + len;
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    let mut intervals: Vec<(Rat, Rat)> = Vec::new();
    for bx in boxes {
        let transverse_ok = p
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != axis)
            .all(|(i, x)| bx.lo[i].0 < *x && *x < bx.hi[i].0);
        if transverse_ok {
            intervals.push((bx.lo[axis].0, bx.hi[axis].0));
        }
    }
    intervals.sort();
    let mut merged: Vec<(Rat, Rat)> = Vec::new();
    for (lo, hi) in intervals {
        match merged.last_mut() {
            Some((_, mh)) if lo < *mh => {
                if hi > *mh {
                    *mh = hi;
                }
            }
            _ => merged.push((lo, hi)),
        }
    }
    merged.iter().any(|(lo, hi)| *lo < a && b < *hi)
}

/// Connected lattice component of one domain at scale `eps = 2^-j`.
#[derive(Debug, Clone)]
pub struct LatticeGraph {
    pub dim: usize,
    pub level: u32,
    pub eps: f64,
    pub eps_rat: Rat,
    /// Vertex coordinates, sorted lexicographically.
    pub vertices: Vec<Vec<f64>>,
    pub vertices_rat: Vec<Vec<Rat>>,
    /// Each undirected edge once, `(a, b)` with `a < b`, sorted.
    pub edges: Vec<(u32, u32)>,
    pub degree: Vec<u32>,
    /// `degree < 2d`.
    pub is_boundary: Vec<bool>,
    /// Per-vertex neighbors as `(vertex, axis, sign)`.
    pub neighbors: Vec<Vec<(u32, u8, i8)>>,
    pub anchor_index: usize,
}

impl LatticeGraph {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn boundary_count(&self) -> usize {
        self.is_boundary.iter().filter(|b| **b).count()
    }

    /// CSV rows `id,x...,degree,is_boundary`.
    pub fn write_vertices_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        let coord_header: Vec<String> = (0..self.dim).map(|i| format!("x{i}")).collect();
        writeln!(w, "id,{},degree,is_boundary", coord_header.join(","))?;
        for (i, v) in self.vertices.iter().enumerate() {
            let coords: Vec<String> = v.iter().map(|c| format!("{c}")).collect();
            writeln!(
                w,
                "{i},{},{},{}",
                coords.join(","),
                self.degree[i],
                u8::from(self.is_boundary[i])
            )?;
        }
        Ok(())
    }

    pub fn write_edges_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "a,b")?;
        for (a, b) in &self.edges {
            writeln!(w, "{a},{b}")?;
        }
        Ok(())
    }
}

/// Build the connected lattice component containing the anchor.
pub fn build_lattice(spec: &DomainSpec, side: Side, j: u32) -> Result<LatticeGraph> {
    assert!(j >= 1, "refinement level must be at least 1");
    let d = spec.dimension;
    let boxes = spec.boxes(side);
    let anchor = spec.anchor(side);
    let eps = dyadic(j);

    if !point_in_union(boxes, &anchor) {
        // Distinguish a bad anchor from a domain too thin to hold any point.
        let any = enumerate_grid_points(boxes, &anchor, eps, d).next().is_some();
        return Err(if any {
            Error::DisconnectedAnchor(anchor.iter().map(|r| rat_to_f64(*r)).collect())
        } else {
            Error::EmptyLattice
        });
    }

    // BFS over full-length grid segments inside the open union.
    let mut index: HashMap<Vec<i64>, u32> = HashMap::new();
    let mut coords: Vec<Vec<i64>> = Vec::new();
    let origin = vec![0i64; d];
    index.insert(origin.clone(), 0);
    coords.push(origin.clone());
    let mut queue = VecDeque::new();
    queue.push_back(origin);
    let pos = |k: &[i64]| -> Vec<Rat> {
        k.iter()
            .zip(&anchor)
            .map(|(&ki, a)| *a + eps * Rat::from_integer(ki as i128))
            .collect()
    };
    let mut edge_set: Vec<(u32, u32)> = Vec::new();
    while let Some(k) = queue.pop_front() {
        let p = pos(&k);
        let ki = index[&k];
        for axis in 0..d {
            for dir in [-1i64, 1] {
                let seg_len = if dir > 0 { eps } else { -eps };
                if !segment_in_union(boxes, &p, axis, seg_len) {
                    continue;
                }
                let mut nk = k.clone();
                nk[axis] += dir;
                let ni = *index.entry(nk.clone()).or_insert_with(|| {
                    let id = coords.len() as u32;
                    coords.push(nk.clone());
                    queue.push_back(nk.clone());
                    id
                });
                if ki < ni {
                    edge_set.push((ki, ni));
                }
            }
        }
    }

    // Canonical vertex order: lexicographic by coordinate.
    let mut order: Vec<u32> = (0..coords.len() as u32).collect();
    order.sort_by(|&a, &b| coords[a as usize].cmp(&coords[b as usize]));
    let mut remap = vec![0u32; coords.len()];
    for (new, &old) in order.iter().enumerate() {
        remap[old as usize] = new as u32;
    }
    let mut vertices_rat = vec![Vec::new(); coords.len()];
    for (old, k) in coords.iter().enumerate() {
        vertices_rat[remap[old] as usize] = pos(k);
    }
    let mut edges: Vec<(u32, u32)> = edge_set
        .into_iter()
        .map(|(a, b)| {
            let (a, b) = (remap[a as usize], remap[b as usize]);
            if a < b {
                (a, b)
            } else {
                (b, a)
            }
        })
        .collect();
    edges.sort_unstable();
    edges.dedup();

    let n = vertices_rat.len();
    let mut degree = vec![0u32; n];
    let mut neighbors: Vec<Vec<(u32, u8, i8)>> = vec![Vec::new(); n];
    for &(a, b) in &edges {
        degree[a as usize] += 1;
        degree[b as usize] += 1;
        let (pa, pb) = (&vertices_rat[a as usize], &vertices_rat[b as usize]);
        let axis = (0..d)
            .find(|&i| pa[i] != pb[i])
            .expect("edge endpoints differ in one axis");
        let sign = if pb[axis] > pa[axis] { 1i8 } else { -1 };
        neighbors[a as usize].push((b, axis as u8, sign));
        neighbors[b as usize].push((a, axis as u8, -sign));
    }
    for nb in &mut neighbors {
        nb.sort_by_key(|&(_, axis, sign)| (axis, sign));
    }
    let is_boundary: Vec<bool> = degree.iter().map(|&v| (v as usize) < 2 * d).collect();
    let anchor_index = vertices_rat
        .iter()
        .position(|v| v == &anchor)
        .expect("anchor is a vertex by construction");
    let vertices: Vec<Vec<f64>> = vertices_rat
        .iter()
        .map(|v| v.iter().map(|r| rat_to_f64(*r)).collect())
        .collect();

    Ok(LatticeGraph {
        dim: d,
        level: j,
        eps: rat_to_f64(eps),
        eps_rat: eps,
        vertices,
        vertices_rat,
        edges,
        degree,
        is_boundary,
        neighbors,
        anchor_index,
    })
}

/// Iterator over the anchor-shifted grid points of the union's bounding box
/// that land inside the union. Only used for error discrimination.
fn enumerate_grid_points<'a>(
    boxes: &'a [RatBox],
    anchor: &'a [Rat],
    eps: Rat,
    d: usize,
) -> impl Iterator<Item = Vec<Rat>> + 'a {
    let mut lo = vec![Rat::zero(); d];
    let mut hi = vec![Rat::zero(); d];
    for i in 0..d {
        lo[i] = boxes.iter().map(|b| b.lo[i].0).min().unwrap();
        hi[i] = boxes.iter().map(|b| b.hi[i].0).max().unwrap();
    }
    let ranges: Vec<(i128, i128)> = (0..d)
        .map(|i| {
            let kmin = rat_ceil((lo[i] - anchor[i]) / eps);
            let kmax = rat_floor((hi[i] - anchor[i]) / eps);
            (kmin, kmax)
        })
        .collect();
    let mut cursor: Vec<i128> = ranges.iter().map(|r| r.0).collect();
    let mut done = cursor.iter().zip(&ranges).any(|(c, r)| *c > r.1);
    std::iter::from_fn(move || loop {
        if done {
            return None;
        }
        let p: Vec<Rat> = cursor
            .iter()
            .zip(anchor)
            .map(|(&k, a)| *a + eps * Rat::from_integer(k))
            .collect();
        // advance odometer
        let mut i = 0;
        loop {
            cursor[i] += 1;
            if cursor[i] <= ranges[i].1 {
                break;
            }
            cursor[i] = ranges[i].0;
            i += 1;
            if i == ranges.len() {
                done = true;
                break;
            }
        }
        if point_in_union(boxes, &p) {
            return Some(p);
        }
    })
}

/// One flat interface face: `{x_axis = offset} x (lo, hi)` transversally.
/// In one dimension the face is the single point `offset`.
#[derive(Debug, Clone)]
pub struct Face {
    pub axis: usize,
    pub offset: Rat,
    /// Transverse extent per remaining axis (empty when `d == 1`).
    pub span: Vec<(Rat, Rat)>,
}

impl Face {
    fn measure(&self) -> Rat {
        self.span
            .iter()
            .fold(Rat::from_integer(1), |acc, (lo, hi)| acc * (*hi - *lo))
    }
}

/// Shared flat faces of the two box unions.
pub fn interface_faces(spec: &DomainSpec) -> Vec<Face> {
    let d = spec.dimension;
    let mut raw: Vec<Face> = Vec::new();
    for p in &spec.boxes_plus {
        for q in &spec.boxes_minus {
            for axis in 0..d {
                for (c_plus, c_minus) in [(p.hi[axis].0, q.lo[axis].0), (p.lo[axis].0, q.hi[axis].0)]
                {
                    if c_plus != c_minus {
                        continue;
                    }
                    let mut span = Vec::new();
                    let mut ok = true;
                    for i in (0..d).filter(|&i| i != axis) {
                        let lo = p.lo[i].0.max(q.lo[i].0);
                        let hi = p.hi[i].0.min(q.hi[i].0);
                        if lo >= hi {
                            ok = false;
                            break;
                        }
                        span.push((lo, hi));
                    }
                    if ok {
                        raw.push(Face {
                            axis,
                            offset: c_plus,
                            span,
                        });
                    }
                }
            }
        }
    }
    merge_faces(raw, d)
}

fn merge_faces(raw: Vec<Face>, d: usize) -> Vec<Face> {
    if d == 1 {
        let mut seen: Vec<Face> = Vec::new();
        for f in raw {
            if !seen.iter().any(|g| g.offset == f.offset) {
                seen.push(f);
            }
        }
        seen.sort_by(|a, b| a.offset.cmp(&b.offset));
        return seen;
    }
    // d == 2: group by (axis, offset), merge closed transverse intervals.
    let mut groups: Vec<(usize, Rat, Vec<(Rat, Rat)>)> = Vec::new();
    for f in raw {
        let iv = f.span[0];
        match groups
            .iter_mut()
            .find(|(a, c, _)| *a == f.axis && *c == f.offset)
        {
            Some((_, _, ivs)) => ivs.push(iv),
            None => groups.push((f.axis, f.offset, vec![iv])),
        }
    }
    let mut out = Vec::new();
    for (axis, offset, mut ivs) in groups {
        ivs.sort();
        let mut merged: Vec<(Rat, Rat)> = Vec::new();
        for (lo, hi) in ivs {
            match merged.last_mut() {
                Some((_, mh)) if lo <= *mh => {
                    if hi > *mh {
                        *mh = hi;
                    }
                }
                _ => merged.push((lo, hi)),
            }
        }
        for (lo, hi) in merged {
            out.push(Face {
                axis,
                offset,
                span: vec![(lo, hi)],
            });
        }
    }
    out.sort_by(|a, b| (a.axis, a.offset).cmp(&(b.axis, b.offset)));
    out
}

/// Point approximation of the interface with surface weights and the
/// nearest lattice site on each side.
#[derive(Debug, Clone)]
pub struct InterfaceDiscretization {
    pub dim: usize,
    pub eps: f64,
    pub points: Vec<Vec<f64>>,
    pub points_rat: Vec<Vec<Rat>>,
    /// Surface weight per point, `(length)^(d-1)` units.
    pub weights: Vec<f64>,
    pub weights_rat: Vec<Rat>,
    /// Index into the plus-side lattice vertex list.
    pub paired_plus: Vec<u32>,
    /// Index into the minus-side lattice vertex list.
    pub paired_minus: Vec<u32>,
    /// Exact total surface measure of the flat interface.
    pub sigma_total_rat: Rat,
    pub sigma_total: f64,
}

impl InterfaceDiscretization {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Partition the interface faces into cells of diameter at most `eps`, take
/// midpoints with the cell measure as weight, and pair each point with the
/// nearest lattice site on each side (lexicographic tie-break).
pub fn build_interface(
    spec: &DomainSpec,
    lat_plus: &LatticeGraph,
    lat_minus: &LatticeGraph,
) -> Result<InterfaceDiscretization> {
    assert_eq!(lat_plus.eps_rat, lat_minus.eps_rat, "lattices must share eps");
    let d = spec.dimension;
    let eps = lat_plus.eps_rat;
    let faces = interface_faces(spec);
    if faces.is_empty() {
        return Err(Error::Config("the two domains share no flat face".into()));
    }

    let mut points_rat: Vec<Vec<Rat>> = Vec::new();
    let mut weights_rat: Vec<Rat> = Vec::new();
    let mut sigma_total_rat = Rat::zero();
    for face in &faces {
        sigma_total_rat += face.measure();
        match d {
            1 => {
                points_rat.push(vec![face.offset]);
                weights_rat.push(Rat::from_integer(1));
            }
            2 => {
                let (lo, hi) = face.span[0];
                let len = hi - lo;
                let cells = rat_ceil(len / eps).max(1);
                let width = len / Rat::from_integer(cells);
                for c in 0..cells {
                    let mid = lo + width * (Rat::from_integer(c) + Rat::new(1, 2));
                    let mut p = vec![Rat::zero(); 2];
                    p[face.axis] = face.offset;
                    p[1 - face.axis] = mid;
                    points_rat.push(p);
                    weights_rat.push(width);
                }
            }
            _ => unreachable!("dimension checked at spec validation"),
        }
    }
    if d == 1 {
        sigma_total_rat = Rat::from_integer(points_rat.len() as i128);
    }

    let m = spec.lipschitz_m;
    let max_dist_sq = {
        // (2 M eps)^2 with M rounded up to a rational for the exact test.
        let m_rat = crate::rat::rat_from_f64(m)?;
        let lim = m_rat * eps * Rat::from_integer(2);
        lim * lim
    };
    let mut paired_plus = Vec::with_capacity(points_rat.len());
    let mut paired_minus = Vec::with_capacity(points_rat.len());
    for p in &points_rat {
        paired_plus.push(nearest_site(lat_plus, p, max_dist_sq).ok_or_else(|| {
            Error::NoPairableSite {
                point: p.iter().map(|r| rat_to_f64(*r)).collect(),
                side: "plus",
            }
        })?);
        paired_minus.push(nearest_site(lat_minus, p, max_dist_sq).ok_or_else(|| {
            Error::NoPairableSite {
                point: p.iter().map(|r| rat_to_f64(*r)).collect(),
                side: "minus",
            }
        })?);
    }

    let points: Vec<Vec<f64>> = points_rat
        .iter()
        .map(|p| p.iter().map(|r| rat_to_f64(*r)).collect())
        .collect();
    let weights: Vec<f64> = weights_rat.iter().map(|r| rat_to_f64(*r)).collect();
    Ok(InterfaceDiscretization {
        dim: d,
        eps: lat_plus.eps,
        points,
        points_rat,
        weights,
        weights_rat,
        paired_plus,
        paired_minus,
        sigma_total: rat_to_f64(sigma_total_rat),
        sigma_total_rat,
    })
}

fn nearest_site(lat: &LatticeGraph, p: &[Rat], max_dist_sq: Rat) -> Option<u32> {
    let mut best: Option<(Rat, &Vec<Rat>, u32)> = None;
    for (i, v) in lat.vertices_rat.iter().enumerate() {
        let mut d2 = Rat::zero();
        for (a, b) in v.iter().zip(p) {
            let diff = *a - *b;
            d2 += diff * diff;
        }
        let better = match &best {
            None => true,
            Some((bd, bv, _)) => d2 < *bd || (d2 == *bd && v < *bv),
        };
        if better {
            best = Some((d2, v, i as u32));
        }
    }
    best.and_then(|(d2, _, i)| (d2 <= max_dist_sq).then_some(i))
}

/// `sum_z f(z) sigma(z)`, the discrete surface integral.
pub fn surface_quadrature<F: Fn(&[f64]) -> f64>(iface: &InterfaceDiscretization, f: F) -> f64 {
    iface
        .points
        .iter()
        .zip(&iface.weights)
        .map(|(z, w)| f(z) * w)
        .sum()
}

/// Count interface points inside the open ball `B(center, radius)`.
pub fn points_in_ball(iface: &InterfaceDiscretization, center: &[f64], radius: f64) -> usize {
    iface
        .points
        .iter()
        .filter(|z| {
            let d2: f64 = z.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            d2 < radius * radius
        })
        .count()
}
