//! Spatial primitives: kd-tree nearest neighbors, farthest point sampling,
//! neighborhood grouping, and PCA normal estimation.

use crate::pointset::{dist2, sub, Point, PointCloud};
use crate::{Error, Result};

/// Immutable kd-tree over a point cloud. Queries answer exactly what a
/// brute-force scan would, including the tie rule (lower index wins).
pub struct KdIndex {
    points: Vec<Point>,
    nodes: Vec<KdNode>,
    root: usize,
}

struct KdNode {
    index: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

const NO_NODE: usize = usize::MAX;

impl KdIndex {
    pub fn build(pc: &PointCloud) -> KdIndex {
        let points = pc.points.clone();
        let mut order: Vec<usize> = (0..points.len()).collect();
        let mut nodes = Vec::with_capacity(points.len());
        let root = Self::build_rec(&points, &mut order[..], 0, &mut nodes);
        KdIndex {
            points,
            nodes,
            root,
        }
    }

    fn build_rec(
        points: &[Point],
        order: &mut [usize],
        depth: usize,
        nodes: &mut Vec<KdNode>,
    ) -> usize {
        if order.is_empty() {
            return NO_NODE;
        }
        let axis = depth % 3;
        order.sort_unstable_by(|&a, &b| {
            points[a][axis]
                .partial_cmp(&points[b][axis])
                .unwrap()
                .then(a.cmp(&b))
        });
        let mid = order.len() / 2;
        let index = order[mid];
        let (left_slice, rest) = order.split_at_mut(mid);
        let right_slice = &mut rest[1..];
        let left = Self::build_rec(points, left_slice, depth + 1, nodes);
        let right = Self::build_rec(points, right_slice, depth + 1, nodes);
        nodes.push(KdNode {
            index,
            axis,
            left: (left != NO_NODE).then_some(left),
            right: (right != NO_NODE).then_some(right),
        });
        nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Indices of the k nearest points to `query`, ascending distance,
    /// distance ties broken by lower index.
    pub fn knn(&self, query: Point, k: usize) -> Result<Vec<usize>> {
        if k > self.points.len() {
            return Err(Error::InvalidArgument(format!(
                "knn k={} exceeds point count {}",
                k,
                self.points.len()
            )));
        }
        if k == 0 {
            return Ok(Vec::new());
        }
        // Best list sorted by (dist2, index); small k keeps insertion cheap.
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        self.search(self.root, query, k, &mut best);
        Ok(best.into_iter().map(|(_, i)| i).collect())
    }

    fn search(&self, node: usize, query: Point, k: usize, best: &mut Vec<(f64, usize)>) {
        if node == NO_NODE {
            return;
        }
        let n = &self.nodes[node];
        let p = self.points[n.index];
        let d2 = dist2(p, query);
        let cand = (d2, n.index);
        if best.len() < k || cand < best[best.len() - 1] {
            let pos = best.partition_point(|&e| e < cand);
            best.insert(pos, cand);
            if best.len() > k {
                best.pop();
            }
        }

        let diff = query[n.axis] - p[n.axis];
        let (near, far) = if diff < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        if let Some(child) = near {
            self.search(child, query, k, best);
        }
        // Visit the far side unless the splitting plane is strictly farther
        // than the current worst; equality may still hide a lower index.
        let plane_d2 = diff * diff;
        if best.len() < k || plane_d2 <= best[best.len() - 1].0 {
            if let Some(child) = far {
                self.search(child, query, k, best);
            }
        }
    }
}

/// Farthest point sampling. When `seed == 0` the first center is the lowest
/// index among points farthest from the centroid; otherwise it is
/// `seed mod n`. Each later pick maximizes min-distance to the chosen set,
/// ties to the lowest index.
pub fn farthest_point_sample(pc: &PointCloud, m: usize, seed: u64) -> Result<Vec<usize>> {
    let n = pc.len();
    if m == 0 || m > n {
        return Err(Error::InvalidArgument(format!(
            "fps m={m} out of range 1..={n}"
        )));
    }
    let first = if seed == 0 {
        let c = pc.centroid();
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, p) in pc.points.iter().enumerate() {
            let d = dist2(*p, c);
            if d > best.0 {
                best = (d, i);
            }
        }
        best.1
    } else {
        (seed as usize) % n
    };

    let mut chosen = Vec::with_capacity(m);
    chosen.push(first);
    let mut min_d2: Vec<f64> = pc
        .points
        .iter()
        .map(|p| dist2(*p, pc.points[first]))
        .collect();
    while chosen.len() < m {
        let mut best = (f64::NEG_INFINITY, 0usize);
        for (i, &d) in min_d2.iter().enumerate() {
            if d > best.0 {
                best = (d, i);
            }
        }
        let next = best.1;
        chosen.push(next);
        for (i, d) in min_d2.iter_mut().enumerate() {
            let nd = dist2(pc.points[i], pc.points[next]);
            if nd < *d {
                *d = nd;
            }
        }
    }
    Ok(chosen)
}

/// Sampled centers with their k-neighborhoods and center-relative coordinates.
pub struct GroupedFeatures {
    pub centers: Vec<usize>,
    pub neighbor_idx: Vec<Vec<usize>>,
    pub relative_coords: Vec<Vec<Point>>,
}

pub fn group(pc: &PointCloud, centers: &[usize], k: usize) -> Result<GroupedFeatures> {
    for &c in centers {
        if c >= pc.len() {
            return Err(Error::InvalidArgument(format!(
                "group center index {c} out of range"
            )));
        }
    }
    let index = KdIndex::build(pc);
    let mut neighbor_idx = Vec::with_capacity(centers.len());
    let mut relative_coords = Vec::with_capacity(centers.len());
    for &c in centers {
        let center = pc.points[c];
        let nbrs = index.knn(center, k)?;
        let rel = nbrs.iter().map(|&j| sub(pc.points[j], center)).collect();
        neighbor_idx.push(nbrs);
        relative_coords.push(rel);
    }
    Ok(GroupedFeatures {
        centers: centers.to_vec(),
        neighbor_idx,
        relative_coords,
    })
}

/// Per-point unit normals from local PCA: the least-eigenvalue eigenvector of
/// the covariance of the k nearest neighbors, oriented away from the local
/// centroid. Degenerate neighborhoods get (0, 0, 1).
pub fn estimate_normals(pc: &PointCloud, k: usize) -> Result<Vec<Point>> {
    if k < 3 {
        return Err(Error::InvalidArgument("normal estimation needs k >= 3".into()));
    }
    if pc.len() < k {
        return Err(Error::InvalidArgument(format!(
            "normal estimation needs n >= k, got n={} k={}",
            pc.len(),
            k
        )));
    }
    let index = KdIndex::build(pc);
    let mut normals = Vec::with_capacity(pc.len());
    for p in &pc.points {
        let nbrs = index.knn(*p, k)?;
        let mut mean = [0.0f64; 3];
        for &j in &nbrs {
            for a in 0..3 {
                mean[a] += pc.points[j][a];
            }
        }
        for a in 0..3 {
            mean[a] /= k as f64;
        }
        let mut cov = [[0.0f64; 3]; 3];
        for &j in &nbrs {
            let d = sub(pc.points[j], mean);
            for a in 0..3 {
                for b in 0..3 {
                    cov[a][b] += d[a] * d[b];
                }
            }
        }
        let trace = cov[0][0] + cov[1][1] + cov[2][2];
        let normal = if trace < 1e-30 {
            [0.0, 0.0, 1.0]
        } else {
            let mut n = smallest_eigenvector(cov);
            // Orient away from the neighborhood centroid.
            let outward = sub(*p, mean);
            if n[0] * outward[0] + n[1] * outward[1] + n[2] * outward[2] < 0.0 {
                n = [-n[0], -n[1], -n[2]];
            }
            n
        };
        normals.push(normal);
    }
    Ok(normals)
}

/// Unit eigenvector for the smallest eigenvalue of a symmetric 3x3 matrix,
/// via cyclic Jacobi rotations.
fn smallest_eigenvector(mut a: [[f64; 3]; 3]) -> Point {
    let mut v = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
    for _ in 0..50 {
        let off = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
        if off < 1e-30 {
            break;
        }
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            if a[p][q].abs() < 1e-300 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            for i in 0..3 {
                let aip = a[i][p];
                let aiq = a[i][q];
                a[i][p] = c * aip - s * aiq;
                a[i][q] = s * aip + c * aiq;
            }
            for j in 0..3 {
                let apj = a[p][j];
                let aqj = a[q][j];
                a[p][j] = c * apj - s * aqj;
                a[q][j] = s * apj + c * aqj;
            }
            for i in 0..3 {
                let vip = v[i][p];
                let viq = v[i][q];
                v[i][p] = c * vip - s * viq;
                v[i][q] = s * vip + c * viq;
            }
        }
    }
    let eigs = [a[0][0], a[1][1], a[2][2]];
    let mut min_i = 0;
    for i in 1..3 {
        if eigs[i] < eigs[min_i] {
            min_i = i;
        }
    }
    let n = [v[0][min_i], v[1][min_i], v[2][min_i]];
    let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
    [n[0] / len, n[1] / len, n[2] / len]
}
