//! Weight-independent neighborhood construction for the set-abstraction
//! levels. All selections break ties by coordinates, so the groups (and thus
//! the encoder output) do not depend on input point order.

use std::cmp::Ordering;

use nalgebra::Vector3;

use super::SaLevel;
use crate::scalar::Scalar;

/// Neighborhoods of one level: `centers` and `neighbors` index the previous
/// level's point list; `local` holds `(neighbor - center) / radius`.
#[derive(Debug, Clone, PartialEq)]
pub struct LevelGroups<T: Scalar> {
    pub centers: Vec<usize>,
    pub neighbors: Vec<usize>,
    pub local: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameGroups<T: Scalar> {
    pub levels: Vec<LevelGroups<T>>,
    /// Coordinates of the last level's centers (input of the global level).
    pub final_xyz: Vec<Vector3<T>>,
}

fn cmp_coords<T: Scalar>(a: &Vector3<T>, b: &Vector3<T>) -> Ordering {
    for k in 0..3 {
        match a[k].partial_cmp(&b[k]).unwrap_or(Ordering::Equal) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// `(key, point)` ordering with coordinate tie-break.
fn cmp_keyed<T: Scalar>(ka: T, a: &Vector3<T>, kb: T, b: &Vector3<T>) -> Ordering {
    ka.partial_cmp(&kb).unwrap_or(Ordering::Equal).then_with(|| cmp_coords(a, b))
}

/// Farthest-point sampling seeded at the point farthest from the origin.
pub fn farthest_point_sample<T: Scalar>(points: &[Vector3<T>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mut start = 0;
    for i in 1..n {
        if cmp_keyed(points[i].norm_squared(), &points[i], points[start].norm_squared(), &points[start]) == Ordering::Greater {
            start = i;
        }
    }
    let mut chosen = Vec::with_capacity(k);
    let mut dist = vec![T::max_value().unwrap(); n];
    let mut cur = start;
    for _ in 0..k {
        chosen.push(cur);
        let c = points[cur];
        let mut best = 0;
        for i in 0..n {
            let d = (points[i] - c).norm_squared();
            if d < dist[i] {
                dist[i] = d;
            }
            if cmp_keyed(dist[i], &points[i], dist[best], &points[best]) == Ordering::Greater {
                best = i;
            }
        }
        cur = best;
    }
    chosen
}

/// The `k` nearest points within `radius` of `center` (nearest first); short
/// groups are padded with the nearest point.
pub fn ball_query<T: Scalar>(points: &[Vector3<T>], center: &Vector3<T>, radius: T, k: usize) -> Vec<usize> {
    let r2 = radius * radius;
    let mut within: Vec<(T, usize)> =
        points.iter().enumerate().map(|(i, p)| ((p - center).norm_squared(), i)).filter(|(d, _)| *d <= r2).collect();
    if within.is_empty() {
        let nearest = (0..points.len())
            .min_by(|&a, &b| cmp_keyed((points[a] - center).norm_squared(), &points[a], (points[b] - center).norm_squared(), &points[b]))
            .expect("non-empty point set");
        return vec![nearest; k];
    }
    within.sort_by(|a, b| cmp_keyed(a.0, &points[a.1], b.0, &points[b.1]));
    let mut out: Vec<usize> = within.iter().take(k).map(|x| x.1).collect();
    let first = out[0];
    out.resize(k, first);
    out
}

pub fn build_groups<T: Scalar>(points: &[Vector3<T>], levels: &[SaLevel]) -> FrameGroups<T> {
    let mut xyz = points.to_vec();
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let radius = T::lit(level.radius);
        let centers = farthest_point_sample(&xyz, level.npoint);
        let mut neighbors = Vec::with_capacity(level.npoint * level.nsample);
        let mut local = Vec::with_capacity(level.npoint * level.nsample * 3);
        for &c in &centers {
            let nb = ball_query(&xyz, &xyz[c], radius, level.nsample);
            for &i in &nb {
                let d = (xyz[i] - xyz[c]) / radius;
                local.extend_from_slice(d.as_slice());
            }
            neighbors.extend(nb);
        }
        xyz = centers.iter().map(|&i| xyz[i]).collect();
        out.push(LevelGroups { centers, neighbors, local });
    }
    FrameGroups { levels: out, final_xyz: xyz }
}
