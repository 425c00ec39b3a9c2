//! Camera-relative acceleration for whole distance maps.
//!
//! A point with camera-frame coordinates `z * (u, v, 1)` is exactly
//! `|z| * |(u, v, 1) x (a, b, 1)| / |(a, b, 1)|` from the line through
//! normalized pixel `(a, b)`, and each component of the cross product is
//! bounded below over a node's `(u, v)` box. Points within 60 degrees of the optical axis (in front or
//! behind) go into a 2D tree over `(u, v)` whose nodes carry the smallest
//! `|z|`; the rest go into a world-space [`PointIndex`]. Exact distances are
//! always computed in the world frame, as the brute-force map does.

use nalgebra::Vector3;

use super::index::{IndexParams, PointIndex};
use super::{dist_sq, offset};
use crate::camera::Camera;
use crate::error::GeometryError;

const LEAF_SIZE: usize = 16;
const MAX_DEPTH: usize = 96;
/// Relative shrink applied to every lower bound to absorb rounding in the
/// camera-frame coordinates.
const BOUND_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy)]
struct Node {
    lo: [f64; 2],
    hi: [f64; 2],
    zmin: f64,
    right: u32,
    start: u32,
    end: u32,
    leaf: bool,
}

pub(crate) struct ViewIndex {
    nodes: Vec<Node>,
    /// World positions in tree order.
    points: Vec<[f64; 3]>,
    rest: Option<PointIndex>,
    fx: f64,
    fy: f64,
    cx: f64,
    cy: f64,
}

impl ViewIndex {
    pub(crate) fn build(index: &PointIndex, camera: &Camera) -> Result<Self, GeometryError> {
        let c = camera.center();
        let rt = camera.pose().rotation().transpose();
        let mut cone = Vec::new();
        let mut rest = Vec::new();
        for p in index.points() {
            let q = rt * (Vector3::new(p[0], p[1], p[2]) - c);
            if q.z != 0.0 && 4.0 * q.z * q.z >= q.norm_squared() {
                cone.push((*p, [q.x / q.z, q.y / q.z], q.z.abs()));
            } else {
                rest.push([p[0] as f32, p[1] as f32, p[2] as f32]);
            }
        }
        let mut nodes = Vec::with_capacity(2 * cone.len() / LEAF_SIZE + 1);
        if !cone.is_empty() {
            let n = cone.len();
            build_node(&mut cone, 0, n, &mut nodes, 0);
        }
        let rest = if rest.is_empty() {
            None
        } else {
            Some(PointIndex::build(&rest, IndexParams::default())?)
        };
        Ok(ViewIndex {
            nodes,
            points: cone.into_iter().map(|(p, _, _)| p).collect(),
            rest,
            fx: camera.fx(),
            fy: camera.fy(),
            cx: camera.cx(),
            cy: camera.cy(),
        })
    }

    /// Minimum squared line distance for pixel `(x, y)` whose world ray is
    /// `dir`. `hint` is a tree-order point from a previous query.
    pub(crate) fn nearest(
        &self,
        x: usize,
        y: usize,
        origin: &[f64; 3],
        dir: &[f64; 3],
        hint: Option<usize>,
        margin: f64,
    ) -> (f64, Option<usize>) {
        let a = (x as f64 - self.cx) / self.fx;
        let b = (y as f64 - self.cy) / self.fy;
        let inv_n2 = (1.0 - BOUND_SLACK) / (a * a + b * b + 1.0);
        let bound = |n: &Node| -> f64 {
            let du = (n.lo[0] - a).max(a - n.hi[0]).max(0.0);
            let dv = (n.lo[1] - b).max(b - n.hi[1]).max(0.0);
            // u * b - v * a is linear in (u, v), so its range is set by the corners
            let (w0, w1) = (n.lo[0] * b, n.hi[0] * b);
            let (w2, w3) = (n.lo[1] * a, n.hi[1] * a);
            let wlo = w0.min(w1) - w2.max(w3);
            let whi = w0.max(w1) - w2.min(w3);
            let dw = wlo.max(-whi).max(0.0);
            n.zmin * n.zmin * (du * du + dv * dv + dw * dw) * inv_n2
        };
        let mut best = f64::INFINITY;
        let mut best_i = None;
        if let Some(h) = hint {
            best = dist_sq(dir, &offset(&self.points[h], origin));
            best_i = Some(h);
        }
        if !self.nodes.is_empty() {
            let mut stack = [(0u32, 0.0f64); MAX_DEPTH];
            let mut top = 1usize;
            stack[0] = (0, bound(&self.nodes[0]));
            while top > 0 {
                top -= 1;
                let (ni, lb) = stack[top];
                if lb > best + margin {
                    continue;
                }
                let node = &self.nodes[ni as usize];
                if node.leaf {
                    for i in node.start as usize..node.end as usize {
                        let d = dist_sq(dir, &offset(&self.points[i], origin));
                        if d < best {
                            best = d;
                            best_i = Some(i);
                        }
                    }
                    continue;
                }
                let (l, r) = (ni + 1, node.right);
                let lb_l = bound(&self.nodes[l as usize]);
                let lb_r = bound(&self.nodes[r as usize]);
                let (near, lb_near, far, lb_far) = if lb_l <= lb_r {
                    (l, lb_l, r, lb_r)
                } else {
                    (r, lb_r, l, lb_l)
                };
                let limit = best + margin;
                if lb_far <= limit {
                    stack[top] = (far, lb_far);
                    top += 1;
                }
                if lb_near <= limit {
                    stack[top] = (near, lb_near);
                    top += 1;
                }
            }
        }
        if let Some(rest) = &self.rest {
            // the hint only ever names a cone point
            let (d, _) = rest.search(origin, dir, best, usize::MAX, margin);
            best = d;
        }
        (best, best_i)
    }
}

type ConePoint = ([f64; 3], [f64; 2], f64);

fn build_node(pts: &mut [ConePoint], start: usize, end: usize, nodes: &mut Vec<Node>, depth: usize) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut zmin = f64::INFINITY;
    for (_, uv, z) in &pts[start..end] {
        for k in 0..2 {
            lo[k] = lo[k].min(uv[k]);
            hi[k] = hi[k].max(uv[k]);
        }
        zmin = zmin.min(*z);
    }
    let me = nodes.len();
    nodes.push(Node {
        lo,
        hi,
        zmin,
        right: 0,
        start: start as u32,
        end: end as u32,
        leaf: true,
    });
    if end - start <= LEAF_SIZE || depth + 2 >= MAX_DEPTH / 2 {
        return;
    }
    let axis = if hi[1] - lo[1] > hi[0] - lo[0] { 1 } else { 0 };
    let mid = start + (end - start) / 2;
    pts[start..end].select_nth_unstable_by(mid - start, |a, b| {
        a.1[axis]
            .total_cmp(&b.1[axis])
            .then_with(|| a.0.iter().zip(&b.0).fold(std::cmp::Ordering::Equal, |o, (x, y)| o.then(x.total_cmp(y))))
    });
    nodes[me].leaf = false;
    build_node(pts, start, mid, nodes, depth + 1);
    nodes[me].right = nodes.len() as u32;
    build_node(pts, mid, end, nodes, depth + 1);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Pose;
    use crate::cloud::Position;
    use crate::raygeom::widen;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_brute_force_all_around_the_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for case in 0..20 {
            // cases alternate between clouds inside the view and clouds
            // surrounding the camera, including points beside and behind it
            let spread = if case % 2 == 0 { 1.0 } else { 6.0 };
            let pts: Vec<Position> = (0..500)
                .map(|_| {
                    [
                        rng.gen_range(-spread..spread),
                        rng.gen_range(-spread..spread),
                        rng.gen_range(-spread..spread) + 3.0,
                    ]
                })
                .collect();
            let pose = Pose::from_axis_angle(Vector3::new(rng.gen(), rng.gen(), 1.0), rng.gen_range(-1.0..1.0))
                .unwrap()
                .compose(&Pose::from_translation(Vector3::new(0.0, 0.0, rng.gen_range(-1.0..2.0))));
            let cam = Camera::new(12.0, 14.0, 8.0, 6.0, 16, 12, pose).unwrap();
            let index = PointIndex::build(&pts, IndexParams::default()).unwrap();
            let view = ViewIndex::build(&index, &cam).unwrap();
            let c = cam.center();
            let o = [c.x, c.y, c.z];
            let margin = index.pruning_margin(&o);
            let mut hint = None;
            for y in 0..12 {
                for x in 0..16 {
                    let r = cam.ray_direction(x as f64, y as f64);
                    let r = [r.x, r.y, r.z];
                    let want = pts
                        .iter()
                        .map(|p| dist_sq(&r, &offset(&widen(p), &o)))
                        .fold(f64::INFINITY, f64::min);
                    let (got, h) = view.nearest(x, y, &o, &r, hint, margin);
                    assert_eq!(got, want, "case {case} pixel ({x}, {y})");
                    hint = h.or(hint);
                }
            }
        }
    }
}
