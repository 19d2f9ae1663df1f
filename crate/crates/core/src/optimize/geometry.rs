//! Convex hulls in up to three dimensions and the ray construction of the
//! optimal portfolio from the generator set `G`.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Result, RiskError};

/// Supporting half-space `⟨normal, x⟩ ≥ offset` of a hull facet, with
/// `normal` of unit length pointing into the hull.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    pub normal: Vec<f64>,
    pub offset: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn scale_of(points: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .flat_map(|p| p.iter())
        .fold(0.0_f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE)
}

/// Facets of the convex hull of `points` (dimension 1, 2 or 3).
pub fn hull_facets(points: &[Vec<f64>]) -> Result<Vec<Facet>> {
    let d = points.first().map(|p| p.len()).ok_or(RiskError::Empty("point cloud"))?;
    if points.iter().any(|p| p.len() != d) {
        return Err(RiskError::Geometry("points have mixed dimensions".into()));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(RiskError::Geometry("non-finite point".into()));
    }
    match d {
        1 => hull_1d(points),
        2 => hull_2d(points),
        3 => hull_3d(points),
        _ => Err(RiskError::Geometry(format!("dimension {d} is not supported (at most 3)"))),
    }
}

fn hull_1d(points: &[Vec<f64>]) -> Result<Vec<Facet>> {
    let lo = points.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
    let hi = points.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return Err(RiskError::Geometry("degenerate hull".into()));
    }
    Ok(vec![
        Facet {
            normal: vec![1.0],
            offset: lo,
        },
        Facet {
            normal: vec![-1.0],
            offset: -hi,
        },
    ])
}

fn cross2(o: &[f64], a: &[f64], b: &[f64]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn hull_2d(points: &[Vec<f64>]) -> Result<Vec<Facet>> {
    let mut pts: Vec<&Vec<f64>> = points.iter().collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup_by(|a, b| a[0] == b[0] && a[1] == b[1]);
    if pts.len() < 3 {
        return Err(RiskError::Geometry("degenerate hull".into()));
    }
    let eps = 1e-12 * scale_of(points).powi(2);
    // Andrew's monotone chain, counter-clockwise, collinear points dropped.
    let mut chain: Vec<&Vec<f64>> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = chain.len();
        let iter: Box<dyn Iterator<Item = &&Vec<f64>>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for p in iter {
            while chain.len() >= start + 2 && cross2(chain[chain.len() - 2], chain[chain.len() - 1], p) <= eps {
                chain.pop();
            }
            chain.push(p);
        }
        chain.pop();
    }
    if chain.len() < 3 {
        return Err(RiskError::Geometry("degenerate hull".into()));
    }
    let n = chain.len();
    Ok((0..n)
        .map(|i| {
            let a = chain[i];
            let b = chain[(i + 1) % n];
            // Inner normal of a counter-clockwise edge is the left normal.
            let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
            let len = (dx * dx + dy * dy).sqrt();
            let normal = vec![-dy / len, dx / len];
            let offset = dot(&normal, a);
            Facet { normal, offset }
        })
        .collect())
}

fn sub3(a: &[f64], b: &[f64]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn hull_3d(points: &[Vec<f64>]) -> Result<Vec<Facet>> {
    let n = points.len();
    let scale = scale_of(points);
    let eps = 1e-10 * scale;
    // Initial tetrahedron from extreme, well-separated points.
    let i0 = 0;
    let i1 = (0..n)
        .max_by(|&a, &b| norm(&sub3(&points[a], &points[i0])).total_cmp(&norm(&sub3(&points[b], &points[i0]))))
        .unwrap();
    let line = sub3(&points[i1], &points[i0]);
    let i2 = (0..n)
        .max_by(|&a, &b| {
            let da = norm(&cross3(line, sub3(&points[a], &points[i0])));
            let db = norm(&cross3(line, sub3(&points[b], &points[i0])));
            da.total_cmp(&db)
        })
        .unwrap();
    let plane = cross3(line, sub3(&points[i2], &points[i0]));
    if norm(&plane) <= eps * scale {
        return Err(RiskError::Geometry("degenerate hull (collinear points)".into()));
    }
    let i3 = (0..n)
        .max_by(|&a, &b| {
            dot(&plane, &sub3(&points[a], &points[i0]))
                .abs()
                .total_cmp(&dot(&plane, &sub3(&points[b], &points[i0])).abs())
        })
        .unwrap();
    if dot(&plane, &sub3(&points[i3], &points[i0])).abs() <= eps * norm(&plane) {
        return Err(RiskError::Geometry("degenerate hull (coplanar points)".into()));
    }
    let centroid: Vec<f64> = (0..3)
        .map(|k| [i0, i1, i2, i3].iter().map(|&i| points[i][k]).sum::<f64>() / 4.0)
        .collect();

    // Faces as index triples with outward orientation.
    let outward = |f: &[usize; 3]| -> ([f64; 3], f64) {
        let nrm = cross3(sub3(&points[f[1]], &points[f[0]]), sub3(&points[f[2]], &points[f[0]]));
        let len = norm(&nrm);
        let u = [nrm[0] / len, nrm[1] / len, nrm[2] / len];
        (u, dot(&u, &points[f[0]]))
    };
    let orient = |mut f: [usize; 3]| -> [usize; 3] {
        let (u, c) = outward(&f);
        if dot(&u, &centroid) > c {
            f.swap(1, 2);
        }
        f
    };
    let mut faces: Vec<[usize; 3]> = vec![
        orient([i0, i1, i2]),
        orient([i0, i1, i3]),
        orient([i0, i2, i3]),
        orient([i1, i2, i3]),
    ];
    for p in 0..n {
        if [i0, i1, i2, i3].contains(&p) {
            continue;
        }
        let visible: Vec<bool> = faces
            .iter()
            .map(|f| {
                let (u, c) = outward(f);
                dot(&u, &points[p]) - c > eps
            })
            .collect();
        if !visible.iter().any(|&v| v) {
            continue;
        }
        let mut edges: HashSet<(usize, usize)> = HashSet::new();
        for (f, _) in faces.iter().zip(&visible).filter(|(_, v)| **v) {
            for k in 0..3 {
                edges.insert((f[k], f[(k + 1) % 3]));
            }
        }
        let mut next: Vec<[usize; 3]> = faces
            .iter()
            .zip(&visible)
            .filter(|(_, v)| !**v)
            .map(|(f, _)| *f)
            .collect();
        let mut horizon: Vec<(usize, usize)> = edges
            .iter()
            .copied()
            .filter(|&(a, b)| !edges.contains(&(b, a)))
            .collect();
        horizon.sort_unstable();
        for (a, b) in horizon {
            next.push([a, b, p]);
        }
        faces = next;
    }
    Ok(faces
        .iter()
        .map(|f| {
            let (u, c) = outward(f);
            Facet {
                normal: u.iter().map(|v| -v).collect(),
                offset: -c,
            }
        })
        .collect())
}

/// Where the ray from `E` through the origin leaves `conv(G)`, and the
/// optimal position read off the normal cone there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricSolution {
    /// Boundary point `T = -s E`.
    pub boundary_point: Vec<f64>,
    /// Position `h*` with `⟨h*, T⟩ = -1` normal to `conv(G)` at `T`.
    pub positions: Vec<f64>,
    /// Optimal reward `|E| / |T|`.
    pub value: f64,
    /// Number of distinct facet normals meeting at `T`.
    pub facets_at_boundary: usize,
}

/// Geometric solution of `max ⟨h, E⟩` subject to `min_{x ∈ G} ⟨h, x⟩ ≥ -1`.
///
/// When `T` lies on several facets the unit inner normals are averaged.
pub fn geometric_solution(points: &[Vec<f64>], rewards: &[f64]) -> Result<GeometricSolution> {
    let facets = hull_facets(points)?;
    let d = rewards.len();
    if facets[0].normal.len() != d {
        return Err(RiskError::Shape {
            context: "reward dimension",
            expected: facets[0].normal.len(),
            found: d,
        });
    }
    let enorm = norm(rewards);
    if !(enorm > 0.0) {
        return Err(RiskError::Parameter("reward vector is zero".into()));
    }
    let scale = scale_of(points);
    if facets.iter().any(|f| !(f.offset < -1e-12 * scale)) {
        return Err(RiskError::Geometry("origin is not interior to the hull".into()));
    }
    // Largest s with ⟨n, -s E⟩ ≥ c on every facet.
    let bounds: Vec<Option<f64>> = facets
        .iter()
        .map(|f| {
            let ne = dot(&f.normal, rewards);
            (ne > 0.0).then(|| -f.offset / ne)
        })
        .collect();
    let s = bounds
        .iter()
        .flatten()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if !s.is_finite() {
        return Err(RiskError::Geometry("hull is unbounded along the ray".into()));
    }
    let boundary_point: Vec<f64> = rewards.iter().map(|e| -s * e).collect();
    let mut active: Vec<&Facet> = Vec::new();
    for (f, b) in facets.iter().zip(&bounds) {
        if let Some(b) = b {
            if *b <= s * (1.0 + 1e-9) {
                let dup = active
                    .iter()
                    .any(|g| g.normal.iter().zip(&f.normal).all(|(a, c)| (a - c).abs() < 1e-9));
                if !dup {
                    active.push(f);
                }
            }
        }
    }
    let mut avg = vec![0.0; d];
    for f in &active {
        for (a, v) in avg.iter_mut().zip(&f.normal) {
            *a += v;
        }
    }
    let at_t = dot(&avg, &boundary_point);
    if !(at_t < 0.0) {
        return Err(RiskError::Geometry("degenerate normal cone".into()));
    }
    let positions: Vec<f64> = avg.iter().map(|v| v / -at_t).collect();
    Ok(GeometricSolution {
        value: 1.0 / s,
        boundary_point,
        positions,
        facets_at_boundary: active.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square() {
        let g = vec![vec![1.0, 1.0], vec![-1.0, 1.0], vec![-1.0, -1.0], vec![1.0, -1.0]];
        let sol = geometric_solution(&g, &[1.0, 0.0]).unwrap();
        assert!((sol.positions[0] - 1.0).abs() < 1e-12 && sol.positions[1].abs() < 1e-12);
        assert!((sol.value - 1.0).abs() < 1e-12);
        assert_eq!(sol.facets_at_boundary, 1);
        // Through a vertex: both adjacent normals are averaged.
        let v = geometric_solution(&g, &[1.0, 1.0]).unwrap();
        assert_eq!(v.facets_at_boundary, 2);
        assert!((v.positions[0] - 0.5).abs() < 1e-12 && (v.positions[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn circle_of_points() {
        let g: Vec<Vec<f64>> = (0..360)
            .map(|k| {
                let a = k as f64 * std::f64::consts::PI / 180.0;
                vec![a.cos(), a.sin()]
            })
            .collect();
        let sol = geometric_solution(&g, &[1.0, 0.0]).unwrap();
        assert!((sol.positions[0] - 1.0).abs() < 1e-6 && sol.positions[1].abs() < 1e-6);
    }

    #[test]
    fn origin_outside() {
        let g = vec![vec![1.0, 1.0], vec![2.0, 1.0], vec![1.0, 2.0]];
        assert!(geometric_solution(&g, &[1.0, 0.0]).is_err());
    }

    #[test]
    fn cube_in_three_dimensions() {
        let mut g = Vec::new();
        for i in 0..8 {
            g.push((0..3).map(|k| if (i >> k) & 1 == 1 { 1.0 } else { -1.0 }).collect::<Vec<f64>>());
        }
        // Interior points must not create facets.
        g.push(vec![0.1, 0.2, -0.3]);
        g.push(vec![0.0, 0.0, 0.9]);
        let facets = hull_facets(&g).unwrap();
        for f in &facets {
            assert!((f.offset + 1.0).abs() < 1e-12);
        }
        let sol = geometric_solution(&g, &[0.0, 0.0, 2.0]).unwrap();
        assert!((sol.positions[2] - 1.0).abs() < 1e-12);
        // h* = (0, 0, 1) earns ⟨h*, E⟩ = 2.
        assert!((sol.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimension() {
        let g = vec![vec![-2.0], vec![3.0], vec![0.5]];
        let sol = geometric_solution(&g, &[1.0]).unwrap();
        assert!((sol.positions[0] - 0.5).abs() < 1e-15);
        assert!((sol.value - 0.5).abs() < 1e-15);
    }
}
