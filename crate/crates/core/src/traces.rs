//! Boundary data families on the data arc.
//!
//! Traces are defined as functions of the boundary angle alone, so two
//! meshes with the same outer radius and target spacing sample the same
//! function at their own arc nodes. On a partial arc each trace is
//! multiplied by a smoothstep cutoff that vanishes at the arc ends; the
//! cutoff width is two nominal edge lengths of the outer circle, which
//! depends only on the radius and spacing, keeping the family comparable
//! across meshes of different topology at the same resolution.

use crate::error::Result;
use crate::fem::BoundaryData;
use crate::mesh::{Arc, Mesh, TWO_PI};

/// Analytic trace shapes in the boundary angle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TraceShape {
    /// `cos(k theta)` tapered to zero at the ends of a partial arc.
    Cos(u32),
    /// `sin(k theta)` tapered to zero at the ends of a partial arc.
    Sin(u32),
    /// Constant one on the full circle, `sin^2(pi t)` across a partial
    /// arc in its local coordinate `t`.
    Bump,
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Cutoff width in angle for a given outer radius and spacing: two
/// nominal boundary edges.
fn cutoff_width(radius: f64, h: f64) -> f64 {
    2.0 * TWO_PI / (TWO_PI * radius / h).ceil()
}

/// Evaluate a trace shape at boundary angle `theta` for an arc on a
/// circle of the given radius meshed at spacing `h`.
pub fn trace_value(shape: TraceShape, theta: f64, arc: Arc, radius: f64, h: f64) -> f64 {
    let raw = match shape {
        TraceShape::Cos(k) => (k as f64 * theta).cos(),
        TraceShape::Sin(k) => (k as f64 * theta).sin(),
        TraceShape::Bump => 1.0,
    };
    if arc.is_full() {
        return raw;
    }
    let span = arc.span();
    let local = {
        let mut d = theta - arc.start;
        while d < 0.0 {
            d += TWO_PI;
        }
        while d > TWO_PI {
            d -= TWO_PI;
        }
        d.min(span)
    };
    let t = local / span;
    match shape {
        TraceShape::Bump => {
            let s = (std::f64::consts::PI * t).sin();
            s * s
        }
        _ => {
            let w = cutoff_width(radius, h).min(span / 3.0);
            let ramp = smoothstep(local / w) * smoothstep((span - local) / w);
            raw * ramp
        }
    }
}

/// Sample a trace shape at the arc nodes of a mesh.
pub fn trig_trace(mesh: &Mesh, arc: Arc, shape: TraceShape) -> Result<BoundaryData> {
    let values = mesh
        .gamma_nodes()
        .iter()
        .map(|&g| {
            let v = mesh.vertices[g];
            let theta = v[1].atan2(v[0]).rem_euclid(TWO_PI);
            trace_value(shape, theta, arc, mesh.radius, mesh.h)
        })
        .collect();
    BoundaryData::new(mesh, values)
}

/// The standard measurement family: bump, then cosine and sine pairs of
/// increasing frequency, `count` members in total.
pub fn standard_family(mesh: &Mesh, arc: Arc, count: usize) -> Result<Vec<BoundaryData>> {
    let mut out = Vec::with_capacity(count);
    let mut k = 1u32;
    while out.len() < count {
        if out.is_empty() {
            out.push(trig_trace(mesh, arc, TraceShape::Bump)?);
            continue;
        }
        out.push(trig_trace(mesh, arc, TraceShape::Cos(k))?);
        if out.len() < count {
            out.push(trig_trace(mesh, arc, TraceShape::Sin(k))?);
        }
        k += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, tag_gamma};
    use std::f64::consts::PI;

    fn disk_with_arc(h: f64, arc: Arc) -> Mesh {
        let mut m = build_disk_mesh(1.0, None, h).unwrap();
        tag_gamma(&mut m, arc).unwrap();
        m
    }

    #[test]
    fn full_circle_bump_is_constant_one() {
        let mesh = disk_with_arc(0.2, Arc::full());
        let b = trig_trace(&mesh, Arc::full(), TraceShape::Bump).unwrap();
        for &v in b.values() {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn full_circle_modes_are_discretely_orthogonal() {
        let mesh = disk_with_arc(0.2, Arc::full());
        let c1 = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1)).unwrap();
        let s1 = trig_trace(&mesh, Arc::full(), TraceShape::Sin(1)).unwrap();
        let n = c1.len() as f64;
        let dot: f64 = c1
            .values()
            .iter()
            .zip(s1.values())
            .map(|(a, b)| a * b)
            .sum();
        let cc: f64 = c1.values().iter().map(|a| a * a).sum();
        // Uniformly spaced boundary angles: exact discrete orthogonality.
        assert!(dot.abs() < 1e-9, "dot {dot}");
        assert!((cc - n / 2.0).abs() < 1e-9, "cc {cc}, n {n}");
    }

    #[test]
    fn partial_arc_traces_vanish_at_ends() {
        let arc = Arc {
            start: 0.0,
            end: PI,
        };
        let mesh = disk_with_arc(0.2, arc);
        for shape in [TraceShape::Bump, TraceShape::Cos(2), TraceShape::Sin(1)] {
            let b = trig_trace(&mesh, arc, shape).unwrap();
            for (&g, &v) in mesh.gamma_nodes().iter().zip(b.values()) {
                let p = mesh.vertices[g];
                let theta = p[1].atan2(p[0]).rem_euclid(TWO_PI);
                let edge_dist = theta.min((PI - theta).abs());
                if edge_dist < 1e-9 {
                    assert!(v.abs() < 1e-12, "{shape:?} at theta {theta}: {v}");
                }
                assert!(v.abs() <= 1.0 + 1e-12);
            }
        }
    }

    #[test]
    fn partial_arc_plateau_matches_raw_mode() {
        let arc = Arc {
            start: 0.0,
            end: PI,
        };
        let mesh = disk_with_arc(0.1, arc);
        let b = trig_trace(&mesh, arc, TraceShape::Cos(1)).unwrap();
        for (&g, &v) in mesh.gamma_nodes().iter().zip(b.values()) {
            let p = mesh.vertices[g];
            let theta = p[1].atan2(p[0]).rem_euclid(TWO_PI);
            // Far from both ends the cutoff is identically one.
            if theta > 0.8 && theta < PI - 0.8 {
                assert!((v - theta.cos()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn trace_values_agree_across_mesh_topologies() {
        let disk = disk_with_arc(0.2, Arc::full());
        let mut ann = build_disk_mesh(1.0, Some(([0.1, 0.0], 0.3)), 0.2).unwrap();
        tag_gamma(&mut ann, Arc::full()).unwrap();
        for (mesh, name) in [(&disk, "disk"), (&ann, "annulus")] {
            let b = trig_trace(mesh, Arc::full(), TraceShape::Cos(3)).unwrap();
            for (&g, &v) in mesh.gamma_nodes().iter().zip(b.values()) {
                let p = mesh.vertices[g];
                let theta = p[1].atan2(p[0]).rem_euclid(TWO_PI);
                assert!((v - (3.0 * theta).cos()).abs() < 1e-12, "{name} node {g}");
            }
        }
    }

    #[test]
    fn family_enumerates_bump_then_mode_pairs() {
        let mesh = disk_with_arc(0.25, Arc::full());
        let fam = standard_family(&mesh, Arc::full(), 6).unwrap();
        assert_eq!(fam.len(), 6);
        let c1 = trig_trace(&mesh, Arc::full(), TraceShape::Cos(1)).unwrap();
        assert_eq!(fam[1].values(), c1.values());
        let s2 = trig_trace(&mesh, Arc::full(), TraceShape::Sin(2)).unwrap();
        assert_eq!(fam[4].values(), s2.values());
    }
}
