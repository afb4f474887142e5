//! Line-oriented text formats for meshes (`MESH2D v1`) and coefficient
//! fields (`COEF v1`).
//!
//! A mesh file lists vertices (`x y tag`), triangles (`i j k region`),
//! and boundary edges (`i j tag`), with tags spelled `INTERIOR`,
//! `GAMMA`, `OUTER`, `CAVITY`. Written vertices are ordered
//! lexicographically by coordinates (ties keep construction order), so
//! the writer is deterministic and idempotent across a read/write round
//! trip. Floats are printed in shortest round-trip form. The target
//! edge length is not stored; a read mesh reconstructs it as the
//! maximum edge length and the outer radius as the largest vertex norm.
//!
//! A coefficient file carries a `SIGMA` block (one value per triangle)
//! or its `SIGMA_REGIONS` shorthand (`label value` lines), optionally
//! followed by an `A <K>` block of per-triangle rows `a_2 .. a_K`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::coeff::{NonlinearitySeries, PiecewiseCoefficient, DEFAULT_SIGMA_FLOOR};
use crate::error::{Error, Result};
use crate::mesh::{EdgeTag, Mesh, NodeTag};

fn node_tag_str(tag: NodeTag) -> &'static str {
    match tag {
        NodeTag::Interior => "INTERIOR",
        NodeTag::Gamma => "GAMMA",
        NodeTag::Outer => "OUTER",
        NodeTag::Cavity => "CAVITY",
    }
}

fn edge_tag_str(tag: EdgeTag) -> &'static str {
    match tag {
        EdgeTag::Gamma => "GAMMA",
        EdgeTag::Outer => "OUTER",
        EdgeTag::Cavity => "CAVITY",
    }
}

/// Serialize a mesh in `MESH2D v1` form with lexicographic vertex order.
pub fn write_mesh(mesh: &Mesh) -> String {
    let n = mesh.n_vertices();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let p = mesh.vertices[a];
        let q = mesh.vertices[b];
        p[0].total_cmp(&q[0]).then(p[1].total_cmp(&q[1]))
    });
    let mut rank = vec![0usize; n];
    for (new, &old) in order.iter().enumerate() {
        rank[old] = new;
    }
    let mut out = String::new();
    out.push_str("MESH2D v1\n");
    let _ = writeln!(out, "V {n}");
    for &old in &order {
        let [x, y] = mesh.vertices[old];
        let _ = writeln!(out, "{x} {y} {}", node_tag_str(mesh.node_tags[old]));
    }
    let _ = writeln!(out, "T {}", mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let _ = writeln!(
            out,
            "{} {} {} {}",
            rank[tri[0]], rank[tri[1]], rank[tri[2]], mesh.cell_regions[t]
        );
    }
    let _ = writeln!(out, "B {}", mesh.boundary_edges.len());
    for &(a, b, tag) in &mesh.boundary_edges {
        let _ = writeln!(out, "{} {} {}", rank[a], rank[b], edge_tag_str(tag));
    }
    out
}

pub fn write_mesh_file(path: &Path, mesh: &Mesh) -> Result<()> {
    std::fs::write(path, write_mesh(mesh))?;
    Ok(())
}

struct Lines<'a> {
    iter: std::iter::Enumerate<std::str::Lines<'a>>,
    origin: &'a str,
    line: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str, origin: &'a str) -> Self {
        Lines {
            iter: text.lines().enumerate(),
            origin,
            line: 0,
        }
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.origin.to_string(),
            line: self.line,
            msg: msg.into(),
        }
    }

    /// Next non-blank line.
    fn next(&mut self) -> Option<&'a str> {
        for (i, raw) in self.iter.by_ref() {
            let s = raw.trim();
            if !s.is_empty() {
                self.line = i + 1;
                return Some(s);
            }
        }
        None
    }

    fn expect(&mut self, what: &str) -> Result<&'a str> {
        self.next()
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }
}

fn parse_count(lines: &Lines, header: &str, keyword: &str) -> Result<usize> {
    let rest = header
        .strip_prefix(keyword)
        .ok_or_else(|| lines.err(format!("expected `{keyword} <count>`, got `{header}`")))?;
    rest.trim()
        .parse()
        .map_err(|_| lines.err(format!("bad count in `{header}`")))
}

fn parse_f64(lines: &Lines, token: &str) -> Result<f64> {
    let v: f64 = token
        .parse()
        .map_err(|_| lines.err(format!("bad number `{token}`")))?;
    if !v.is_finite() {
        return Err(lines.err(format!("non-finite number `{token}`")));
    }
    Ok(v)
}

fn parse_index(lines: &Lines, token: &str, limit: usize) -> Result<usize> {
    let i: usize = token
        .parse()
        .map_err(|_| lines.err(format!("bad index `{token}`")))?;
    if i >= limit {
        return Err(lines.err(format!("index {i} out of range (< {limit})")));
    }
    Ok(i)
}

/// Parse a `MESH2D v1` document; `origin` names the source in errors.
pub fn read_mesh(text: &str, origin: &str) -> Result<Mesh> {
    let mut lines = Lines::new(text, origin);
    let header = lines.expect("`MESH2D v1`")?;
    if header != "MESH2D v1" {
        return Err(lines.err(format!("expected `MESH2D v1`, got `{header}`")));
    }
    let head_v = lines.expect("`V <count>`")?;
    let nv = parse_count(&lines, head_v, "V ")?;
    let mut vertices = Vec::with_capacity(nv);
    let mut node_tags = Vec::with_capacity(nv);
    for _ in 0..nv {
        let row = lines.expect("vertex row")?;
        let mut it = row.split_whitespace();
        let (Some(x), Some(y), Some(tag), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(lines.err(format!("expected `x y tag`, got `{row}`")));
        };
        vertices.push([parse_f64(&lines, x)?, parse_f64(&lines, y)?]);
        node_tags.push(match tag {
            "INTERIOR" => NodeTag::Interior,
            "GAMMA" => NodeTag::Gamma,
            "OUTER" => NodeTag::Outer,
            "CAVITY" => NodeTag::Cavity,
            other => return Err(lines.err(format!("unknown node tag `{other}`"))),
        });
    }
    let head_t = lines.expect("`T <count>`")?;
    let nt = parse_count(&lines, head_t, "T ")?;
    let mut triangles = Vec::with_capacity(nt);
    let mut cell_regions = Vec::with_capacity(nt);
    for _ in 0..nt {
        let row = lines.expect("triangle row")?;
        let mut it = row.split_whitespace();
        let (Some(i), Some(j), Some(k), Some(r), None) =
            (it.next(), it.next(), it.next(), it.next(), it.next())
        else {
            return Err(lines.err(format!("expected `i j k region`, got `{row}`")));
        };
        triangles.push([
            parse_index(&lines, i, nv)?,
            parse_index(&lines, j, nv)?,
            parse_index(&lines, k, nv)?,
        ]);
        cell_regions.push(
            r.parse()
                .map_err(|_| lines.err(format!("bad region label `{r}`")))?,
        );
    }
    let head_b = lines.expect("`B <count>`")?;
    let nb = parse_count(&lines, head_b, "B ")?;
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let row = lines.expect("boundary edge row")?;
        let mut it = row.split_whitespace();
        let (Some(i), Some(j), Some(tag), None) = (it.next(), it.next(), it.next(), it.next())
        else {
            return Err(lines.err(format!("expected `i j tag`, got `{row}`")));
        };
        let tag = match tag {
            "GAMMA" => EdgeTag::Gamma,
            "OUTER" => EdgeTag::Outer,
            "CAVITY" => EdgeTag::Cavity,
            other => return Err(lines.err(format!("unknown edge tag `{other}`"))),
        };
        boundary_edges.push((
            parse_index(&lines, i, nv)?,
            parse_index(&lines, j, nv)?,
            tag,
        ));
    }
    if let Some(extra) = lines.next() {
        return Err(lines.err(format!("trailing content `{extra}`")));
    }
    let radius = vertices
        .iter()
        .map(|p| (p[0] * p[0] + p[1] * p[1]).sqrt())
        .fold(0.0f64, f64::max);
    let mut mesh = Mesh {
        vertices,
        triangles,
        boundary_edges,
        node_tags: node_tags.clone(),
        cell_regions,
        h: 0.0,
        radius,
        gamma_nodes: Vec::new(),
    };
    mesh.h = mesh.max_edge_len();
    mesh.validate_orientation()
        .map_err(|e| lines.err(e.to_string()))?;
    mesh.refresh_node_tags();
    for (i, (&stored, &derived)) in node_tags.iter().zip(&mesh.node_tags).enumerate() {
        if stored != derived {
            return Err(lines.err(format!(
                "vertex {i} tagged {} but its boundary edges imply {}",
                node_tag_str(stored),
                node_tag_str(derived)
            )));
        }
    }
    Ok(mesh)
}

pub fn read_mesh_file(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    read_mesh(&text, &path.to_string_lossy())
}

/// Conductivity block of a coefficient file: explicit per-triangle
/// values or the per-region shorthand.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaSpec {
    PerTriangle(Vec<f64>),
    PerRegion(BTreeMap<usize, f64>),
}

impl SigmaSpec {
    /// Expand against a mesh into a positive conductivity field.
    pub fn resolve(&self, mesh: &Mesh) -> Result<PiecewiseCoefficient> {
        match self {
            SigmaSpec::PerTriangle(values) => {
                if values.len() != mesh.n_triangles() {
                    return Err(Error::LengthMismatch {
                        expected: mesh.n_triangles(),
                        got: values.len(),
                    });
                }
                PiecewiseCoefficient::new(values.clone(), DEFAULT_SIGMA_FLOOR)
            }
            SigmaSpec::PerRegion(map) => {
                let values = mesh
                    .cell_regions
                    .iter()
                    .map(|r| {
                        map.get(r).copied().ok_or(Error::InvalidParameter(format!(
                            "no conductivity value for region {r}"
                        )))
                    })
                    .collect::<Result<Vec<f64>>>()?;
                PiecewiseCoefficient::new(values, DEFAULT_SIGMA_FLOOR)
            }
        }
    }
}

/// Parsed coefficient file: conductivity plus an optional reaction
/// series block.
#[derive(Clone, Debug, PartialEq)]
pub struct CoefFile {
    pub sigma: SigmaSpec,
    /// `(k_max, per-triangle rows a_2..a_K)`.
    pub series: Option<(usize, Vec<Vec<f64>>)>,
}

impl CoefFile {
    pub fn series_for(&self, mesh: &Mesh) -> Result<Option<NonlinearitySeries>> {
        let Some((k_max, rows)) = &self.series else {
            return Ok(None);
        };
        if rows.len() != mesh.n_triangles() {
            return Err(Error::LengthMismatch {
                expected: mesh.n_triangles(),
                got: rows.len(),
            });
        }
        let coeffs: Vec<f64> = rows.iter().flatten().copied().collect();
        Ok(Some(NonlinearitySeries::new(
            *k_max,
            mesh.n_triangles(),
            coeffs,
        )?))
    }
}

/// Serialize conductivity and an optional series in `COEF v1` form.
pub fn write_coef(sigma: &PiecewiseCoefficient, series: Option<&NonlinearitySeries>) -> String {
    let mut out = String::new();
    out.push_str("COEF v1\nSIGMA\n");
    for &v in sigma.values() {
        let _ = writeln!(out, "{v}");
    }
    if let Some(series) = series {
        let _ = writeln!(out, "A {}", series.k_max());
        for t in 0..series.n_triangles() {
            let row: Vec<String> = series.row(t).iter().map(|v| v.to_string()).collect();
            let _ = writeln!(out, "{}", row.join(" "));
        }
    }
    out
}

pub fn write_coef_file(
    path: &Path,
    sigma: &PiecewiseCoefficient,
    series: Option<&NonlinearitySeries>,
) -> Result<()> {
    std::fs::write(path, write_coef(sigma, series))?;
    Ok(())
}

/// Parse a `COEF v1` document; `origin` names the source in errors.
pub fn read_coef(text: &str, origin: &str) -> Result<CoefFile> {
    let mut lines = Lines::new(text, origin);
    let header = lines.expect("`COEF v1`")?;
    if header != "COEF v1" {
        return Err(lines.err(format!("expected `COEF v1`, got `{header}`")));
    }
    let mode = lines.expect("`SIGMA` or `SIGMA_REGIONS`")?;
    let mut pending: Option<&str> = None;
    let sigma = match mode {
        "SIGMA" => {
            let mut values = Vec::new();
            loop {
                let Some(row) = lines.next() else { break };
                if row.starts_with("A ") {
                    pending = Some(row);
                    break;
                }
                values.push(parse_f64(&lines, row)?);
            }
            if values.is_empty() {
                return Err(lines.err("empty SIGMA block"));
            }
            SigmaSpec::PerTriangle(values)
        }
        "SIGMA_REGIONS" => {
            let mut map = BTreeMap::new();
            loop {
                let Some(row) = lines.next() else { break };
                if row.starts_with("A ") {
                    pending = Some(row);
                    break;
                }
                let mut it = row.split_whitespace();
                let (Some(label), Some(value), None) = (it.next(), it.next(), it.next()) else {
                    return Err(lines.err(format!("expected `label value`, got `{row}`")));
                };
                let label: usize = label
                    .parse()
                    .map_err(|_| lines.err(format!("bad region label `{label}`")))?;
                if map.insert(label, parse_f64(&lines, value)?).is_some() {
                    return Err(lines.err(format!("duplicate region label {label}")));
                }
            }
            if map.is_empty() {
                return Err(lines.err("empty SIGMA_REGIONS block"));
            }
            SigmaSpec::PerRegion(map)
        }
        other => {
            return Err(lines.err(format!(
                "expected `SIGMA` or `SIGMA_REGIONS`, got `{other}`"
            )))
        }
    };
    let series = match pending {
        Some(header) => {
            let k_max: usize = header
                .strip_prefix("A ")
                .unwrap()
                .trim()
                .parse()
                .map_err(|_| lines.err(format!("bad series order in `{header}`")))?;
            if k_max < 2 {
                return Err(lines.err(format!("series order must be at least 2, got {k_max}")));
            }
            let mut rows = Vec::new();
            while let Some(row) = lines.next() {
                let values = row
                    .split_whitespace()
                    .map(|tok| parse_f64(&lines, tok))
                    .collect::<Result<Vec<f64>>>()?;
                if values.len() != k_max - 1 {
                    return Err(lines.err(format!(
                        "expected {} coefficients per row, got {}",
                        k_max - 1,
                        values.len()
                    )));
                }
                rows.push(values);
            }
            if rows.is_empty() {
                return Err(lines.err("empty A block"));
            }
            Some((k_max, rows))
        }
        None => None,
    };
    Ok(CoefFile { sigma, series })
}

pub fn read_coef_file(path: &Path) -> Result<CoefFile> {
    let text = std::fs::read_to_string(path)?;
    read_coef(&text, &path.to_string_lossy())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, tag_gamma, Arc};

    fn sample_mesh() -> Mesh {
        let mut m = build_disk_mesh(1.0, None, 0.4).unwrap();
        tag_gamma(
            &mut m,
            Arc {
                start: 0.0,
                end: std::f64::consts::PI,
            },
        )
        .unwrap();
        m.set_regions_from_disks(&[([0.0, 0.0], 0.5)]);
        m
    }

    #[test]
    fn mesh_round_trip_preserves_everything() {
        let mesh = sample_mesh();
        let text = write_mesh(&mesh);
        let back = read_mesh(&text, "sample").unwrap();
        assert_eq!(back.n_vertices(), mesh.n_vertices());
        assert_eq!(back.n_triangles(), mesh.n_triangles());
        assert_eq!(back.boundary_edges.len(), mesh.boundary_edges.len());
        assert!((back.total_area() - mesh.total_area()).abs() < 1e-14);
        assert_eq!(back.gamma_nodes().len(), mesh.gamma_nodes().len());
        assert_eq!(
            back.cell_regions.iter().filter(|&&r| r == 1).count(),
            mesh.cell_regions.iter().filter(|&&r| r == 1).count()
        );
        assert_eq!(back.radius, mesh.radius);
    }

    #[test]
    fn written_form_is_idempotent_and_sorted() {
        let mesh = sample_mesh();
        let text = write_mesh(&mesh);
        let back = read_mesh(&text, "sample").unwrap();
        assert_eq!(write_mesh(&back), text);
        for w in back.vertices.windows(2) {
            assert!(
                w[0][0] < w[1][0] || (w[0][0] == w[1][0] && w[0][1] <= w[1][1]),
                "vertices out of order: {:?} then {:?}",
                w[0],
                w[1]
            );
        }
    }

    #[test]
    fn annulus_round_trip_keeps_cavity_tags() {
        let mut mesh = build_disk_mesh(1.0, Some(([0.2, 0.0], 0.25)), 0.25).unwrap();
        tag_gamma(&mut mesh, Arc::full()).unwrap();
        let back = read_mesh(&write_mesh(&mesh), "annulus").unwrap();
        assert!(back.has_cavity());
        let cavity_edges = back
            .boundary_edges
            .iter()
            .filter(|(_, _, t)| *t == EdgeTag::Cavity)
            .count();
        let original = mesh
            .boundary_edges
            .iter()
            .filter(|(_, _, t)| *t == EdgeTag::Cavity)
            .count();
        assert_eq!(cavity_edges, original);
    }

    #[test]
    fn mesh_errors_name_line_and_cause() {
        let cases = [
            ("MESH1D v1\n", 1, "expected `MESH2D v1`"),
            ("MESH2D v1\nV 1\n0 0 MIDDLE\n", 3, "unknown node tag"),
            ("MESH2D v1\nV one\n", 2, "bad count"),
            (
                "MESH2D v1\nV 1\n0 0 INTERIOR\nT 1\n0 0 9 0\n",
                5,
                "out of range",
            ),
            (
                "MESH2D v1\nV 1\n0 0 INTERIOR\nT 0\nB 0\nextra\n",
                6,
                "trailing content",
            ),
        ];
        for (text, line, needle) in cases {
            match read_mesh(text, "bad") {
                Err(Error::Parse { path, line: l, msg }) => {
                    assert_eq!(path, "bad");
                    assert_eq!(l, line, "wrong line for {needle}: {msg}");
                    assert!(msg.contains(needle), "`{msg}` lacks `{needle}`");
                }
                other => panic!("expected parse error for {needle}, got {other:?}"),
            }
        }
    }

    #[test]
    fn inconsistent_node_tag_is_rejected() {
        let mesh = sample_mesh();
        let mut text = write_mesh(&mesh);
        // Flip one OUTER vertex to INTERIOR; its boundary edges disagree.
        let target = text.find(" OUTER").unwrap();
        text.replace_range(target..target + 6, " INTERIOR");
        match read_mesh(&text, "tampered") {
            Err(Error::Parse { msg, .. }) => assert!(msg.contains("imply"), "{msg}"),
            other => panic!("expected tag consistency error, got {other:?}"),
        }
    }

    #[test]
    fn coef_round_trip_with_series() {
        let mesh = sample_mesh();
        let sigma = PiecewiseCoefficient::from_regions(&mesh, &[1.0, 2.5], 1e-3).unwrap();
        let series =
            NonlinearitySeries::from_regions(&mesh, 3, &[vec![0.0, 0.0], vec![1.0, 0.25]]).unwrap();
        let text = write_coef(&sigma, Some(&series));
        let parsed = read_coef(&text, "coef").unwrap();
        let sigma_back = parsed.sigma.resolve(&mesh).unwrap();
        assert_eq!(sigma_back.values(), sigma.values());
        let series_back = parsed.series_for(&mesh).unwrap().unwrap();
        assert_eq!(series_back.k_max(), 3);
        for t in 0..mesh.n_triangles() {
            assert_eq!(series_back.row(t), series.row(t));
        }
        assert_eq!(write_coef(&sigma_back, Some(&series_back)), text);
    }

    #[test]
    fn region_shorthand_resolves_through_mesh_labels() {
        let mesh = sample_mesh();
        let text = "COEF v1\nSIGMA_REGIONS\n0 1.5\n1 3\n";
        let parsed = read_coef(text, "coef").unwrap();
        assert!(parsed.series.is_none());
        let sigma = parsed.sigma.resolve(&mesh).unwrap();
        for (t, &r) in mesh.cell_regions.iter().enumerate() {
            assert_eq!(sigma.value(t), if r == 0 { 1.5 } else { 3.0 });
        }
    }

    #[test]
    fn coef_errors_name_line_and_cause() {
        let cases = [
            ("COEF v2\n", "expected `COEF v1`"),
            ("COEF v1\nGAMMA\n", "expected `SIGMA` or `SIGMA_REGIONS`"),
            ("COEF v1\nSIGMA\n", "empty SIGMA block"),
            (
                "COEF v1\nSIGMA\n1.0\nA 1\n",
                "series order must be at least 2",
            ),
            ("COEF v1\nSIGMA\n1.0\nA 3\n0.5\n", "expected 2 coefficients"),
            (
                "COEF v1\nSIGMA_REGIONS\n0 1\n0 2\n",
                "duplicate region label",
            ),
            ("COEF v1\nSIGMA\nnan\n", "non-finite number"),
        ];
        for (text, needle) in cases {
            match read_coef(text, "bad") {
                Err(Error::Parse { msg, .. }) => {
                    assert!(msg.contains(needle), "`{msg}` lacks `{needle}`")
                }
                other => panic!("expected parse error for {needle}, got {other:?}"),
            }
        }
    }

    #[test]
    fn missing_region_value_surfaces_on_resolve() {
        let mesh = sample_mesh();
        let parsed = read_coef("COEF v1\nSIGMA_REGIONS\n0 1.5\n", "coef").unwrap();
        assert!(matches!(
            parsed.sigma.resolve(&mesh),
            Err(Error::InvalidParameter(_))
        ));
    }
}
