//! Triangulated disk and annulus domains with tagged boundary parts.
//!
//! Meshes are conforming P1 triangulations built from two deterministic
//! constructions: a spiderweb pattern for the full disk and a mapped
//! quad-split pattern for a disk with one circular hole. Boundary edges
//! and nodes carry tags separating the accessible data arc from the rest
//! of the outer circle and from the hole boundary.

use crate::error::{Error, Result};

pub const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

/// Classification of a mesh node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    /// On the accessible part of the outer boundary.
    Gamma,
    /// On the inaccessible part of the outer boundary.
    Outer,
    /// On the hole boundary.
    Cavity,
}

/// Classification of a boundary edge.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeTag {
    Gamma,
    Outer,
    Cavity,
}

/// Angular interval on the outer circle, in radians.
///
/// The interval is taken counterclockwise from `start` and covers
/// `end - start` radians; a span of `2*pi` or more selects the whole
/// circle. Wrap-around intervals (`start` near `2*pi`) are fine.
#[derive(Clone, Copy, Debug)]
pub struct Arc {
    pub start: f64,
    pub end: f64,
}

impl Arc {
    pub fn full() -> Self {
        Arc {
            start: 0.0,
            end: TWO_PI,
        }
    }

    pub fn span(&self) -> f64 {
        self.end - self.start
    }

    pub fn is_full(&self) -> bool {
        self.span() >= TWO_PI - 1e-9
    }

    /// Whether angle `theta` lies in the interval (half-open at `end`).
    pub fn contains(&self, theta: f64) -> bool {
        if self.is_full() {
            return true;
        }
        let d = (theta - self.start).rem_euclid(TWO_PI);
        d < self.span() - 1e-12 || d < 1e-12
    }
}

/// Subset of triangles, stored as a membership bitmap.
#[derive(Clone, Debug)]
pub struct RegionMask {
    on: Vec<bool>,
    count: usize,
}

impl RegionMask {
    pub fn empty(n_triangles: usize) -> Self {
        RegionMask {
            on: vec![false; n_triangles],
            count: 0,
        }
    }

    pub fn from_flags(on: Vec<bool>) -> Self {
        let count = on.iter().filter(|&&b| b).count();
        RegionMask { on, count }
    }

    pub fn contains(&self, tri: usize) -> bool {
        self.on[tri]
    }

    pub fn len(&self) -> usize {
        self.on.len()
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.on
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
    }

    pub fn disjoint(&self, other: &RegionMask) -> bool {
        self.on
            .iter()
            .zip(other.on.iter())
            .all(|(&a, &b)| !(a && b))
    }
}

#[derive(Clone, Debug)]
pub struct Mesh {
    pub vertices: Vec<[f64; 2]>,
    /// Vertex index triples, counterclockwise.
    pub triangles: Vec<[usize; 3]>,
    /// Boundary edges as vertex pairs with their tag.
    pub boundary_edges: Vec<(usize, usize, EdgeTag)>,
    pub node_tags: Vec<NodeTag>,
    /// Region label per triangle (0 = background).
    pub cell_regions: Vec<usize>,
    /// Target edge length the builder aimed for.
    pub h: f64,
    /// Outer radius of the domain.
    pub radius: f64,
    pub(crate) gamma_nodes: Vec<usize>,
}

impl Mesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Sorted indices of nodes tagged `Gamma`.
    pub fn gamma_nodes(&self) -> &[usize] {
        &self.gamma_nodes
    }

    pub fn signed_area(&self, tri: usize) -> f64 {
        let [a, b, c] = self.triangles[tri];
        let p = self.vertices[a];
        let q = self.vertices[b];
        let r = self.vertices[c];
        0.5 * ((q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]))
    }

    pub fn area(&self, tri: usize) -> f64 {
        self.signed_area(tri)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.signed_area(t)).sum()
    }

    pub fn barycenter(&self, tri: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[tri];
        let p = self.vertices[a];
        let q = self.vertices[b];
        let r = self.vertices[c];
        [(p[0] + q[0] + r[0]) / 3.0, (p[1] + q[1] + r[1]) / 3.0]
    }

    /// Unique undirected edges of the triangulation.
    pub fn edge_count(&self) -> usize {
        let mut edges: Vec<(usize, usize)> = Vec::with_capacity(3 * self.n_triangles());
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                edges.push((a.min(b), a.max(b)));
            }
        }
        edges.sort_unstable();
        edges.dedup();
        edges.len()
    }

    /// Euler characteristic `V - E + T`: 1 for a disk, 0 for an annulus.
    pub fn euler_characteristic(&self) -> isize {
        self.n_vertices() as isize - self.edge_count() as isize + self.n_triangles() as isize
    }

    pub fn max_edge_len(&self) -> f64 {
        let mut best = 0.0f64;
        for t in &self.triangles {
            for k in 0..3 {
                let p = self.vertices[t[k]];
                let q = self.vertices[t[(k + 1) % 3]];
                best = best.max(((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt());
            }
        }
        best
    }

    pub fn has_cavity(&self) -> bool {
        self.node_tags.iter().any(|&t| t == NodeTag::Cavity)
    }

    /// Number of distinct region labels (labels are expected contiguous from 0).
    pub fn n_regions(&self) -> usize {
        self.cell_regions.iter().copied().max().map_or(1, |m| m + 1)
    }

    /// Label triangles by the first disk whose interior contains their
    /// barycenter (label = disk index + 1), background 0.
    pub fn set_regions_from_disks(&mut self, disks: &[([f64; 2], f64)]) {
        self.cell_regions = (0..self.n_triangles())
            .map(|t| {
                let b = self.barycenter(t);
                disks
                    .iter()
                    .position(|(c, r)| {
                        let dx = b[0] - c[0];
                        let dy = b[1] - c[1];
                        dx * dx + dy * dy < r * r
                    })
                    .map_or(0, |i| i + 1)
            })
            .collect();
    }

    /// Triangles of one region label as a mask.
    pub fn region_mask(&self, label: usize) -> RegionMask {
        RegionMask::from_flags(self.cell_regions.iter().map(|&r| r == label).collect())
    }

    /// Recompute node tags from boundary edge tags and refresh the cached
    /// data-arc node list. A node touching edges with mixed tags resolves
    /// to `Gamma` so that data arcs include their endpoints.
    pub(crate) fn refresh_node_tags(&mut self) {
        let n = self.n_vertices();
        let mut tags = vec![NodeTag::Interior; n];
        for &(a, b, tag) in &self.boundary_edges {
            for v in [a, b] {
                let new = match tag {
                    EdgeTag::Gamma => NodeTag::Gamma,
                    EdgeTag::Outer => NodeTag::Outer,
                    EdgeTag::Cavity => NodeTag::Cavity,
                };
                tags[v] = match (tags[v], new) {
                    (NodeTag::Gamma, _) | (_, NodeTag::Gamma) => NodeTag::Gamma,
                    (NodeTag::Cavity, _) | (_, NodeTag::Cavity) => NodeTag::Cavity,
                    _ => new,
                };
            }
        }
        self.node_tags = tags;
        self.gamma_nodes = (0..n)
            .filter(|&i| self.node_tags[i] == NodeTag::Gamma)
            .collect();
    }

    pub(crate) fn validate_orientation(&self) -> Result<()> {
        for t in 0..self.n_triangles() {
            if self.signed_area(t) <= 0.0 {
                return Err(Error::DegenerateTriangle { index: t });
            }
        }
        Ok(())
    }
}

/// Build a triangulated disk of the given outer radius, optionally with a
/// circular hole (`cavity = (center, hole_radius)`), aiming for edge
/// length `h`. Edge lengths never exceed `1.5 * h`.
pub fn build_disk_mesh(radius: f64, cavity: Option<([f64; 2], f64)>, h: f64) -> Result<Mesh> {
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "outer radius must be positive, got {radius}"
        )));
    }
    if !(h > 0.0) || !h.is_finite() || h >= radius {
        return Err(Error::InvalidParameter(format!(
            "edge length target must lie in (0, radius), got {h}"
        )));
    }
    let mut mesh = match cavity {
        None => build_spiderweb(radius, h),
        Some((center, r_cav)) => {
            if !(r_cav > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "cavity radius must be positive, got {r_cav}"
                )));
            }
            let clearance = radius - ((center[0].powi(2) + center[1].powi(2)).sqrt() + r_cav);
            if clearance < 2.0 * h {
                return Err(Error::CavityTooClose {
                    clearance,
                    required: 2.0 * h,
                });
            }
            build_annulus(radius, center, r_cav, h)
        }
    };
    mesh.validate_orientation()?;
    mesh.refresh_node_tags();
    Ok(mesh)
}

/// Concentric-ring triangulation of the full disk: ring `r` carries `6r`
/// nodes, bands are filled sector by sector with alternating triangles.
fn build_spiderweb(radius: f64, h: f64) -> Mesh {
    let n = (radius / h).ceil() as usize;
    let dr = radius / n as f64;

    let mut vertices = vec![[0.0, 0.0]];
    let mut ring_start = vec![0usize; n + 1];
    for r in 1..=n {
        ring_start[r] = vertices.len();
        let m = 6 * r;
        for j in 0..m {
            let theta = TWO_PI * j as f64 / m as f64;
            let rad = dr * r as f64;
            vertices.push([rad * theta.cos(), rad * theta.sin()]);
        }
    }

    let mut triangles = Vec::with_capacity(6 * n * n);
    for r in 1..=n {
        let m_in = if r == 1 { 1 } else { 6 * (r - 1) };
        let m_out = 6 * r;
        let s_in = if r == 1 { 0 } else { ring_start[r - 1] };
        let s_out = ring_start[r];
        for sector in 0..6 {
            let inner = |t: usize| s_in + (sector * (r - 1) + t) % m_in;
            let outer = |t: usize| s_out + (sector * r + t) % m_out;
            for t in 0..r {
                triangles.push([outer(t), outer(t + 1), inner(t)]);
            }
            for t in 0..r.saturating_sub(1) {
                triangles.push([inner(t), outer(t + 1), inner(t + 1)]);
            }
        }
    }

    let m_out = 6 * n;
    let s_out = ring_start[n];
    let boundary_edges = (0..m_out)
        .map(|j| (s_out + j, s_out + (j + 1) % m_out, EdgeTag::Outer))
        .collect();

    let n_tri = triangles.len();
    Mesh {
        vertices,
        triangles,
        boundary_edges,
        node_tags: Vec::new(),
        cell_regions: vec![0; n_tri],
        h,
        radius,
        gamma_nodes: Vec::new(),
    }
}

/// Mapped ring triangulation of a disk with one circular hole. Rings
/// interpolate from the hole circle to the outer circle; each quad cell
/// is split along a fixed diagonal.
fn build_annulus(radius: f64, center: [f64; 2], r_cav: f64, h: f64) -> Mesh {
    let offset = (center[0].powi(2) + center[1].powi(2)).sqrt();
    let n_theta = ((TWO_PI * radius / h).ceil() as usize).max(8);
    let n_r = (((offset + radius - r_cav) / h).ceil() as usize).max(2);

    let mut vertices = Vec::with_capacity((n_r + 1) * n_theta);
    for i in 0..=n_r {
        let t = i as f64 / n_r as f64;
        let cx = center[0] * (1.0 - t);
        let cy = center[1] * (1.0 - t);
        let rad = r_cav + t * (radius - r_cav);
        for j in 0..n_theta {
            let theta = TWO_PI * j as f64 / n_theta as f64;
            vertices.push([cx + rad * theta.cos(), cy + rad * theta.sin()]);
        }
    }

    let idx = |i: usize, j: usize| i * n_theta + j % n_theta;
    let mut triangles = Vec::with_capacity(2 * n_r * n_theta);
    for i in 0..n_r {
        for j in 0..n_theta {
            let a = idx(i, j);
            let b = idx(i, j + 1);
            let c = idx(i + 1, j + 1);
            let d = idx(i + 1, j);
            triangles.push([a, d, c]);
            triangles.push([a, c, b]);
        }
    }

    let mut boundary_edges = Vec::with_capacity(2 * n_theta);
    for j in 0..n_theta {
        boundary_edges.push((idx(0, j), idx(0, j + 1), EdgeTag::Cavity));
    }
    for j in 0..n_theta {
        boundary_edges.push((idx(n_r, j), idx(n_r, j + 1), EdgeTag::Outer));
    }

    let n_tri = triangles.len();
    Mesh {
        vertices,
        triangles,
        boundary_edges,
        node_tags: Vec::new(),
        cell_regions: vec![0; n_tri],
        h,
        radius,
        gamma_nodes: Vec::new(),
    }
}

/// Retag outer-circle boundary edges: edges whose midpoint angle lies in
/// `arc` become the data arc, the rest of the outer circle becomes
/// inaccessible. Node tags are recomputed; nodes where both parts meet
/// resolve to the data arc.
pub fn tag_gamma(mesh: &mut Mesh, arc: Arc) -> Result<()> {
    if !(arc.span() > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "arc span must be positive, got {}",
            arc.span()
        )));
    }
    let mut any = false;
    for edge in mesh.boundary_edges.iter_mut() {
        if edge.2 == EdgeTag::Cavity {
            continue;
        }
        let p = mesh.vertices[edge.0];
        let q = mesh.vertices[edge.1];
        let mid = [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0];
        let theta = mid[1].atan2(mid[0]).rem_euclid(TWO_PI);
        if arc.contains(theta) {
            edge.2 = EdgeTag::Gamma;
            any = true;
        } else {
            edge.2 = EdgeTag::Outer;
        }
    }
    if !any {
        return Err(Error::EmptyGamma);
    }
    mesh.refresh_node_tags();
    Ok(())
}

/// Triangles whose barycenter lies inside the given disk.
pub fn region_mask_from_disk(mesh: &Mesh, center: [f64; 2], radius: f64) -> Result<RegionMask> {
    let flags: Vec<bool> = (0..mesh.n_triangles())
        .map(|t| {
            let b = mesh.barycenter(t);
            let dx = b[0] - center[0];
            let dy = b[1] - center[1];
            dx * dx + dy * dy < radius * radius
        })
        .collect();
    let mask = RegionMask::from_flags(flags);
    if mask.is_empty() {
        return Err(Error::EmptyRegion);
    }
    Ok(mask)
}

/// Connected components of the triangle adjacency graph restricted to
/// triangles outside `excluded`. Returns a component id per triangle
/// (`usize::MAX` on excluded triangles) and the component count.
pub fn triangle_components(mesh: &Mesh, excluded: &RegionMask) -> (Vec<usize>, usize) {
    let n = mesh.n_triangles();
    let mut edge_to_tri: std::collections::HashMap<(usize, usize), [usize; 2]> =
        std::collections::HashMap::with_capacity(3 * n / 2);
    for (t, tri) in mesh.triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            let key = (a.min(b), a.max(b));
            let entry = edge_to_tri.entry(key).or_insert([usize::MAX; 2]);
            if entry[0] == usize::MAX {
                entry[0] = t;
            } else {
                entry[1] = t;
            }
        }
    }
    let mut adj = vec![Vec::new(); n];
    for (_, pair) in edge_to_tri {
        if pair[1] != usize::MAX {
            adj[pair[0]].push(pair[1]);
            adj[pair[1]].push(pair[0]);
        }
    }
    let mut comp = vec![usize::MAX; n];
    let mut count = 0;
    for start in 0..n {
        if excluded.contains(start) || comp[start] != usize::MAX {
            continue;
        }
        let mut stack = vec![start];
        comp[start] = count;
        while let Some(t) = stack.pop() {
            for &u in &adj[t] {
                if !excluded.contains(u) && comp[u] == usize::MAX {
                    comp[u] = count;
                    stack.push(u);
                }
            }
        }
        count += 1;
    }
    (comp, count)
}
