//! Bounding-box tree over points for exact nearest-point-to-line queries.
//!
//! Nodes are visited nearest-bound first and pruned with a lower bound on
//! the squared line-to-box distance: the perpendicular offset of a point
//! from the line splits into two components along an orthonormal basis of
//! the plane normal to the line, and each component's minimum over the box
//! follows from interval arithmetic.

use serde::{Deserialize, Serialize};

use super::{dist_sq, offset, widen};
use crate::cloud::Position;
use crate::error::GeometryError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexParams {
    /// Maximum points per leaf.
    pub leaf_size: usize,
}

impl Default for IndexParams {
    fn default() -> Self {
        IndexParams { leaf_size: 16 }
    }
}

#[derive(Debug, Clone, Copy)]
struct Node {
    center: [f64; 3],
    half: [f64; 3],
    /// Right child for internal nodes; the left child is the next node.
    right: u32,
    start: u32,
    end: u32,
    leaf: bool,
}

/// Result of a line query, `point` indexes [`PointIndex::point`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineHit {
    pub dist_sq: f64,
    pub point: usize,
}

#[derive(Debug, Clone)]
pub struct PointIndex {
    nodes: Vec<Node>,
    points: Vec<[f64; 3]>,
    original: Vec<u32>,
    params: IndexParams,
}

const MAX_DEPTH: usize = 96;

impl PointIndex {
    /// Builds the tree. Deterministic for a given input order and params.
    pub fn build(positions: &[Position], params: IndexParams) -> Result<Self, GeometryError> {
        if positions.is_empty() {
            return Err(GeometryError::EmptyPointSet);
        }
        if params.leaf_size == 0 {
            return Err(GeometryError::InvalidArgument("leaf size must be positive".into()));
        }
        if positions.len() > u32::MAX as usize {
            return Err(GeometryError::InvalidArgument("too many points".into()));
        }
        if positions.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::InvalidArgument("non-finite point position".into()));
        }
        let pts: Vec<[f64; 3]> = positions.iter().map(widen).collect();
        let mut perm: Vec<u32> = (0..pts.len() as u32).collect();
        let mut nodes = Vec::with_capacity(2 * pts.len() / params.leaf_size.max(1) + 1);
        build_node(&pts, &mut perm, 0, pts.len(), params.leaf_size, &mut nodes, 0);
        let points = perm.iter().map(|&i| pts[i as usize]).collect();
        Ok(PointIndex {
            nodes,
            points,
            original: perm,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn params(&self) -> IndexParams {
        self.params
    }

    pub fn point(&self, i: usize) -> [f64; 3] {
        self.points[i]
    }

    pub(crate) fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    /// Position of `i` in the slice the index was built from.
    pub fn original_index(&self, i: usize) -> usize {
        self.original[i] as usize
    }

    /// Slack added to every pruning test so that rounding in the bound or in
    /// the distance formula never discards the true minimizer. Scales with
    /// the squared distance from `origin` to the far corner of the cloud.
    pub fn pruning_margin(&self, origin: &[f64; 3]) -> f64 {
        let root = &self.nodes[0];
        let mut far = 0.0f64;
        for k in 0..3 {
            let d = (root.center[k] - origin[k]).abs() + root.half[k];
            far += d * d;
        }
        64.0 * f64::EPSILON * far
    }

    /// Point with minimum squared distance to the line through `origin`
    /// along unit `dir`. `hint` seeds the search with a known point.
    pub fn nearest_to_line(
        &self,
        origin: &[f64; 3],
        dir: &[f64; 3],
        hint: Option<usize>,
        margin: f64,
    ) -> LineHit {
        let (mut best, mut best_i) = (f64::INFINITY, 0usize);
        if let Some(h) = hint {
            best = dist_sq(dir, &offset(&self.points[h], origin));
            best_i = h;
        }
        let (best, best_i) = self.search(origin, dir, best, best_i, margin);
        LineHit {
            dist_sq: best,
            point: best_i,
        }
    }

    /// Continues a search that already reached squared distance `best`;
    /// returns `(best, best_i)` unchanged when no point beats it.
    pub(crate) fn search(
        &self,
        origin: &[f64; 3],
        dir: &[f64; 3],
        mut best: f64,
        mut best_i: usize,
        margin: f64,
    ) -> (f64, usize) {
        let (e1, e2) = perpendicular_basis(dir);
        let bound = |n: &Node| -> f64 {
            let c = offset(&n.center, origin);
            let mut total = 0.0;
            for e in [&e1, &e2] {
                let mid = e[0] * c[0] + e[1] * c[1] + e[2] * c[2];
                let ext = e[0].abs() * n.half[0] + e[1].abs() * n.half[1] + e[2].abs() * n.half[2];
                let lo = mid - ext;
                let hi = mid + ext;
                if lo > 0.0 {
                    total += lo * lo;
                } else if hi < 0.0 {
                    total += hi * hi;
                }
            }
            total
        };
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
                        best_i = i;
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
        (best, best_i)
    }
}

fn perpendicular_basis(d: &[f64; 3]) -> ([f64; 3], [f64; 3]) {
    let ax = if d[0].abs() <= d[1].abs() && d[0].abs() <= d[2].abs() {
        0
    } else if d[1].abs() <= d[2].abs() {
        1
    } else {
        2
    };
    let mut a = [0.0; 3];
    a[ax] = 1.0;
    let e1 = normalize(cross(d, &a));
    let e2 = normalize(cross(d, &e1));
    (e1, e2)
}

#[inline]
fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

fn build_node(
    pts: &[[f64; 3]],
    perm: &mut [u32],
    start: usize,
    end: usize,
    leaf_size: usize,
    nodes: &mut Vec<Node>,
    depth: usize,
) {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for &i in &perm[start..end] {
        let p = &pts[i as usize];
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let center = [
        0.5 * (lo[0] + hi[0]),
        0.5 * (lo[1] + hi[1]),
        0.5 * (lo[2] + hi[2]),
    ];
    // Round the half extents up so the box always contains its points.
    let half = [
        (hi[0] - center[0]).max(center[0] - lo[0]) * (1.0 + 4.0 * f64::EPSILON),
        (hi[1] - center[1]).max(center[1] - lo[1]) * (1.0 + 4.0 * f64::EPSILON),
        (hi[2] - center[2]).max(center[2] - lo[2]) * (1.0 + 4.0 * f64::EPSILON),
    ];
    let me = nodes.len();
    nodes.push(Node {
        center,
        half,
        right: 0,
        start: start as u32,
        end: end as u32,
        leaf: true,
    });
    // Median splits keep the depth near log2(n / leaf_size), far below the
    // traversal stack size.
    if end - start <= leaf_size || depth + 2 >= MAX_DEPTH / 2 {
        return;
    }
    let axis = (0..3)
        .max_by(|&a, &b| (hi[a] - lo[a]).total_cmp(&(hi[b] - lo[b])).then(b.cmp(&a)))
        .unwrap();
    let mid = start + (end - start) / 2;
    perm[start..end].select_nth_unstable_by(mid - start, |&a, &b| {
        pts[a as usize][axis]
            .total_cmp(&pts[b as usize][axis])
            .then(a.cmp(&b))
    });
    nodes[me].leaf = false;
    build_node(pts, perm, start, mid, leaf_size, nodes, depth + 1);
    nodes[me].right = nodes.len() as u32;
    build_node(pts, perm, mid, end, leaf_size, nodes, depth + 1);
}
