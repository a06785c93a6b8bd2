//! Distortion measures between point clouds: chamfer distance, exact and
//! approximate earth mover's distance, F-score, and point-to-point /
//! point-to-surface error.
//!
//! The chamfer convention is squared distances, mean-reduced per side,
//! summed; it is used identically for training and reporting. EMD is the
//! minimum mean Euclidean distance over bijections.

use crate::geom::{estimate_normals, KdIndex};
use crate::pointset::{dist2, dot, sub, Point, PointCloud};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct MetricReport {
    pub cd: f64,
    pub emd: f64,
    pub fscore: f64,
    pub p2p_rms: f64,
    pub p2plane_rms: f64,
}

/// CD = mean_p min_q ||p-q||^2 + mean_q min_p ||q-p||^2.
pub fn chamfer(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let kx = KdIndex::build(x);
    let ky = KdIndex::build(y);
    let mut fwd = 0.0;
    for p in &x.points {
        let j = ky.knn(*p, 1)?[0];
        fwd += dist2(*p, y.points[j]);
    }
    let mut bwd = 0.0;
    for q in &y.points {
        let i = kx.knn(*q, 1)?[0];
        bwd += dist2(*q, x.points[i]);
    }
    Ok(fwd / x.len() as f64 + bwd / y.len() as f64)
}

/// Chamfer distance plus its gradient with respect to the second cloud,
/// holding the nearest-neighbor assignments fixed.
pub fn chamfer_with_grad(x: &PointCloud, pred: &PointCloud) -> Result<(f64, Vec<Point>)> {
    if x.is_empty() || pred.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let kx = KdIndex::build(x);
    let kp = KdIndex::build(pred);
    let n_x = x.len() as f64;
    let n_p = pred.len() as f64;
    let mut grad = vec![[0.0f64; 3]; pred.len()];
    let mut loss = 0.0;
    // pred -> x direction
    for (j, q) in pred.points.iter().enumerate() {
        let i = kx.knn(*q, 1)?[0];
        let d = sub(*q, x.points[i]);
        loss += dot(d, d) / n_p;
        for a in 0..3 {
            grad[j][a] += 2.0 * d[a] / n_p;
        }
    }
    // x -> pred direction
    for p in &x.points {
        let j = kp.knn(*p, 1)?[0];
        let d = sub(pred.points[j], *p);
        loss += dot(d, d) / n_x;
        for a in 0..3 {
            grad[j][a] += 2.0 * d[a] / n_x;
        }
    }
    Ok((loss, grad))
}

/// Exact EMD by the Hungarian method: min over bijections of the mean
/// Euclidean pairwise distance. Oracle scale (n <= 512).
pub fn emd_exact(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "emd needs equal sizes, got {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let cost: Vec<Vec<f64>> = x
        .points
        .iter()
        .map(|p| y.points.iter().map(|q| dist2(*p, *q).sqrt()).collect())
        .collect();
    let assignment = hungarian(&cost);
    let total: f64 = assignment
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    Ok(total / n as f64)
}

/// Minimum-cost perfect matching on a square cost matrix; returns the column
/// assigned to each row. Shortest augmenting paths with potentials, O(n^3).
pub fn hungarian(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    // 1-based potentials; p[j] = row matched to column j.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] != 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

pub const EMD_DEFAULT_ITERATIONS: usize = 12;

/// Approximate EMD via the auction algorithm with epsilon scaling.
/// `iterations` is the number of scaling phases; the default leaves the
/// final epsilon small enough that the matching is optimal on non-degenerate
/// instances.
pub fn emd_approx(x: &PointCloud, y: &PointCloud, iterations: usize) -> Result<f64> {
    Ok(emd_approx_with_grad(x, y, iterations)?.0)
}

/// Approximate EMD plus its gradient with respect to `y` through the final
/// matching.
pub fn emd_approx_with_grad(
    x: &PointCloud,
    y: &PointCloud,
    iterations: usize,
) -> Result<(f64, Vec<Point>)> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "emd needs equal sizes, got {} vs {}",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    let cost: Vec<Vec<f64>> = x
        .points
        .iter()
        .map(|p| y.points.iter().map(|q| dist2(*p, *q).sqrt()).collect())
        .collect();
    let matching = auction_assign(&cost, iterations.max(1));
    let total: f64 = matching.iter().enumerate().map(|(i, &j)| cost[i][j]).sum();
    let mut grad = vec![[0.0f64; 3]; n];
    for (i, &j) in matching.iter().enumerate() {
        let d = sub(y.points[j], x.points[i]);
        let len = dot(d, d).sqrt();
        if len > 1e-12 {
            for a in 0..3 {
                grad[j][a] = d[a] / (len * n as f64);
            }
        }
    }
    Ok((total / n as f64, grad))
}

/// Forward auction for the minimization assignment problem. Epsilon starts
/// at the cost spread and shrinks by a fixed factor each phase.
fn auction_assign(cost: &[Vec<f64>], phases: usize) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let max_c = cost
        .iter()
        .flat_map(|r| r.iter())
        .fold(0.0f64, |a, &b| a.max(b));
    let mut prices = vec![0.0f64; n];
    let mut row_of: Vec<Option<usize>> = vec![None; n];
    let mut col_of: Vec<Option<usize>> = vec![None; n];
    let mut eps = (max_c / 2.0).max(1e-9);
    for _ in 0..phases {
        for v in row_of.iter_mut() {
            *v = None;
        }
        for v in col_of.iter_mut() {
            *v = None;
        }
        let mut unassigned: Vec<usize> = (0..n).collect();
        while let Some(i) = unassigned.pop() {
            // Best and second-best net value (-cost - price).
            let mut best_j = 0usize;
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for j in 0..n {
                let v = -cost[i][j] - prices[j];
                if v > best {
                    second = best;
                    best = v;
                    best_j = j;
                } else if v > second {
                    second = v;
                }
            }
            let increment = if second.is_finite() { best - second } else { 0.0 };
            prices[best_j] += increment + eps;
            if let Some(prev) = row_of[best_j] {
                col_of[prev] = None;
                unassigned.push(prev);
            }
            row_of[best_j] = Some(i);
            col_of[i] = Some(best_j);
        }
        eps /= 5.0;
    }
    col_of.into_iter().map(|c| c.unwrap()).collect()
}

/// Precision/recall at distance threshold `d`, combined as 2PR/(P+R).
pub fn fscore(x: &PointCloud, y: &PointCloud, d: f64) -> Result<f64> {
    if d <= 0.0 {
        return Err(Error::InvalidArgument("fscore threshold must be positive".into()));
    }
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let kx = KdIndex::build(x);
    let ky = KdIndex::build(y);
    let d2 = d * d;
    let precision = y
        .points
        .iter()
        .filter(|q| dist2(**q, x.points[kx.knn(**q, 1).unwrap()[0]]) <= d2)
        .count() as f64
        / y.len() as f64;
    let recall = x
        .points
        .iter()
        .filter(|p| dist2(**p, y.points[ky.knn(**p, 1).unwrap()[0]]) <= d2)
        .count() as f64
        / x.len() as f64;
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

/// Symmetrized (max of both directions) RMS nearest-neighbor distance.
pub fn p2p(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let kx = KdIndex::build(x);
    let ky = KdIndex::build(y);
    let fwd = rms_nn(x, &ky, y, |err, _, _| dot(err, err))?;
    let bwd = rms_nn(y, &kx, x, |err, _, _| dot(err, err))?;
    Ok(fwd.max(bwd))
}

/// Symmetrized RMS of the nearest-neighbor error projected onto the
/// reference normal. Normals belong to `x`; in the y -> x direction the
/// normal of the matched reference point is used in both directions.
pub fn p2plane(x: &PointCloud, y: &PointCloud, normals_x: &[Point]) -> Result<f64> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::EmptyCloud);
    }
    if normals_x.len() != x.len() {
        return Err(Error::InvalidArgument(
            "p2plane needs one normal per reference point".into(),
        ));
    }
    let kx = KdIndex::build(x);
    let ky = KdIndex::build(y);
    // x -> y: error from x_i to its match, projected on the normal of x_i.
    let fwd = rms_nn(x, &ky, y, |err, i, _| {
        let p = dot(err, normals_x[i]);
        p * p
    })?;
    // y -> x: projected on the normal of the matched reference point.
    let bwd = rms_nn(y, &kx, x, |err, _, j| {
        let p = dot(err, normals_x[j]);
        p * p
    })?;
    Ok(fwd.max(bwd))
}

/// RMS over `from` of a per-pair squared error; the closure sees the error
/// vector, the source index, and the matched index in `to`.
fn rms_nn(
    from: &PointCloud,
    to_index: &KdIndex,
    to: &PointCloud,
    sq_err: impl Fn(Point, usize, usize) -> f64,
) -> Result<f64> {
    let mut acc = 0.0;
    for (i, p) in from.points.iter().enumerate() {
        let j = to_index.knn(*p, 1)?[0];
        let err = sub(to.points[j], *p);
        acc += sq_err(err, i, j);
    }
    Ok((acc / from.len() as f64).sqrt())
}

pub fn full_report(x: &PointCloud, y: &PointCloud, fscore_threshold: f64) -> Result<MetricReport> {
    let normals = estimate_normals(x, 16.min(x.len()))?;
    let emd = if x.len() == y.len() {
        emd_approx(x, y, EMD_DEFAULT_ITERATIONS)?
    } else {
        f64::NAN
    };
    Ok(MetricReport {
        cd: chamfer(x, y)?,
        emd,
        fscore: fscore(x, y, fscore_threshold)?,
        p2p_rms: p2p(x, y)?,
        p2plane_rms: p2plane(x, y, &normals)?,
    })
}

/// A training distortion: the scalar loss plus its gradient with respect to
/// the reconstructed cloud, with internal assignments held fixed.
pub trait Distortion: Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, reference: &PointCloud, recon: &PointCloud) -> Result<f64>;
    fn eval_with_grad(&self, reference: &PointCloud, recon: &PointCloud)
        -> Result<(f64, Vec<Point>)>;
}

struct ChamferDistortion;

impl Distortion for ChamferDistortion {
    fn name(&self) -> &'static str {
        "cd"
    }

    fn eval(&self, reference: &PointCloud, recon: &PointCloud) -> Result<f64> {
        chamfer(reference, recon)
    }

    fn eval_with_grad(
        &self,
        reference: &PointCloud,
        recon: &PointCloud,
    ) -> Result<(f64, Vec<Point>)> {
        chamfer_with_grad(reference, recon)
    }
}

struct EmdDistortion;

impl Distortion for EmdDistortion {
    fn name(&self) -> &'static str {
        "emd"
    }

    fn eval(&self, reference: &PointCloud, recon: &PointCloud) -> Result<f64> {
        emd_approx(reference, recon, EMD_DEFAULT_ITERATIONS)
    }

    fn eval_with_grad(
        &self,
        reference: &PointCloud,
        recon: &PointCloud,
    ) -> Result<(f64, Vec<Point>)> {
        emd_approx_with_grad(reference, recon, EMD_DEFAULT_ITERATIONS)
    }
}

static DISTORTIONS: &[&dyn Distortion] = &[&ChamferDistortion, &EmdDistortion];

pub fn distortion_names() -> Vec<&'static str> {
    DISTORTIONS.iter().map(|d| d.name()).collect()
}

pub fn lookup_distortion(name: &str) -> Result<&'static dyn Distortion> {
    DISTORTIONS
        .iter()
        .copied()
        .find(|d| d.name() == name)
        .ok_or_else(|| Error::UnknownName {
            kind: "distortion",
            name: name.to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_cloud(seed: u64, n: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud {
            points: (0..n)
                .map(|_| {
                    [
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ]
                })
                .collect(),
        }
    }

    fn brute_chamfer(x: &PointCloud, y: &PointCloud) -> f64 {
        let fwd: f64 = x
            .points
            .iter()
            .map(|p| {
                y.points
                    .iter()
                    .map(|q| dist2(*p, *q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        let bwd: f64 = y
            .points
            .iter()
            .map(|q| {
                x.points
                    .iter()
                    .map(|p| dist2(*p, *q))
                    .fold(f64::INFINITY, f64::min)
            })
            .sum();
        fwd / x.len() as f64 + bwd / y.len() as f64
    }

    #[test]
    fn chamfer_self_zero() {
        let pc = random_cloud(1, 40);
        assert_eq!(chamfer(&pc, &pc).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_single_pair() {
        let a = PointCloud::new(vec![[0.0, 0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        assert!((chamfer(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force() {
        let x = random_cloud(2, 30);
        let y = random_cloud(3, 40);
        assert_eq!(chamfer(&x, &y).unwrap(), brute_chamfer(&x, &y));
    }

    #[test]
    fn chamfer_symmetric() {
        let x = random_cloud(4, 20);
        let y = random_cloud(5, 25);
        assert!((chamfer(&x, &y).unwrap() - chamfer(&y, &x).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn chamfer_grad_finite_differences() {
        let x = random_cloud(6, 10);
        let y = random_cloud(7, 10);
        let (_, grad) = chamfer_with_grad(&x, &y).unwrap();
        let h = 1e-6;
        for j in 0..y.len() {
            for a in 0..3 {
                let mut yp = y.clone();
                yp.points[j][a] += h;
                let mut ym = y.clone();
                ym.points[j][a] -= h;
                let numeric =
                    (chamfer(&x, &yp).unwrap() - chamfer(&x, &ym).unwrap()) / (2.0 * h);
                assert!(
                    (grad[j][a] - numeric).abs() < 1e-4,
                    "grad[{j}][{a}] {} vs {}",
                    grad[j][a],
                    numeric
                );
            }
        }
    }

    #[test]
    fn emd_identity_and_permutation() {
        let x = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let y = PointCloud::new(vec![[1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(emd_exact(&x, &x).unwrap(), 0.0);
        assert_eq!(emd_exact(&x, &y).unwrap(), 0.0);
    }

    #[test]
    fn emd_size_mismatch_errors() {
        let x = random_cloud(8, 4);
        let y = random_cloud(9, 5);
        assert!(emd_exact(&x, &y).is_err());
        assert!(emd_approx(&x, &y, 8).is_err());
    }

    fn factorial_emd(x: &PointCloud, y: &PointCloud) -> f64 {
        fn permutations(n: usize) -> Vec<Vec<usize>> {
            if n == 1 {
                return vec![vec![0]];
            }
            let mut out = Vec::new();
            for p in permutations(n - 1) {
                for i in 0..n {
                    let mut q: Vec<usize> = p.iter().map(|&v| if v >= i { v + 1 } else { v }).collect();
                    q.insert(0, i);
                    // normalize: q maps position->value with q[0]=i
                    out.push(q);
                }
            }
            out
        }
        let n = x.len();
        let mut best = f64::INFINITY;
        for perm in permutations(n) {
            let total: f64 = perm
                .iter()
                .enumerate()
                .map(|(i, &j)| dist2(x.points[i], y.points[j]).sqrt())
                .sum();
            best = best.min(total / n as f64);
        }
        best
    }

    #[test]
    fn emd_exact_matches_factorial_brute_force() {
        for seed in 0..5 {
            let x = random_cloud(100 + seed, 8);
            let y = random_cloud(200 + seed, 8);
            let exact = emd_exact(&x, &y).unwrap();
            let brute = factorial_emd(&x, &y);
            assert!(
                (exact - brute).abs() < 1e-10,
                "hungarian {exact} vs brute {brute}"
            );
        }
    }

    #[test]
    fn emd_approx_close_to_hungarian() {
        for seed in 0..5 {
            let x = random_cloud(300 + seed, 64);
            let y = random_cloud(400 + seed, 64);
            let exact = emd_exact(&x, &y).unwrap();
            let approx = emd_approx(&x, &y, EMD_DEFAULT_ITERATIONS).unwrap();
            assert!(approx >= exact - 1e-9);
            assert!(
                (approx - exact) / exact < 0.02,
                "approx {approx} vs exact {exact}"
            );
        }
    }

    #[test]
    fn emd_approx_more_iterations_never_worse() {
        let x = random_cloud(11, 48);
        let y = random_cloud(12, 48);
        let base = emd_approx(&x, &y, EMD_DEFAULT_ITERATIONS).unwrap();
        let more = emd_approx(&x, &y, EMD_DEFAULT_ITERATIONS * 2).unwrap();
        assert!(more <= base + 1e-9);
    }

    #[test]
    fn emd_approx_identical_clouds_zero() {
        let x = random_cloud(13, 32);
        assert!(emd_approx(&x, &x, EMD_DEFAULT_ITERATIONS).unwrap() < 1e-9);
    }

    #[test]
    fn fscore_identical_and_disjoint() {
        let x = random_cloud(14, 20);
        assert_eq!(fscore(&x, &x, 0.05).unwrap(), 1.0);
        let far = PointCloud {
            points: x.points.iter().map(|p| [p[0] + 100.0, p[1], p[2]]).collect(),
        };
        assert_eq!(fscore(&x, &far, 0.05).unwrap(), 0.0);
    }

    #[test]
    fn fscore_half_coincident() {
        // x fully covered; half of y on x, other half beyond threshold
        let x = PointCloud::new(vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]).unwrap();
        let y = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [10.0, 0.0, 0.0],
            [11.0, 0.0, 0.0],
        ])
        .unwrap();
        let f = fscore(&x, &y, 0.05).unwrap();
        // P = 0.5, R = 1.0 -> F = 2/3
        assert!((f - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn p2p_p2plane_identical_zero() {
        let x = random_cloud(15, 50);
        let normals = estimate_normals(&x, 8).unwrap();
        assert_eq!(p2p(&x, &x).unwrap(), 0.0);
        assert_eq!(p2plane(&x, &x, &normals).unwrap(), 0.0);
    }

    fn plane_grid(n_side: usize) -> PointCloud {
        let mut points = Vec::new();
        for i in 0..n_side {
            for j in 0..n_side {
                points.push([
                    i as f64 / (n_side - 1) as f64,
                    j as f64 / (n_side - 1) as f64,
                    0.0,
                ]);
            }
        }
        PointCloud { points }
    }

    #[test]
    fn p2plane_normal_offset_on_plane() {
        let x = plane_grid(8);
        let normals = vec![[0.0, 0.0, 1.0]; x.len()];
        let y = PointCloud {
            points: x.points.iter().map(|p| [p[0], p[1], p[2] + 0.1]).collect(),
        };
        let pp = p2plane(&x, &y, &normals).unwrap();
        let pe = p2p(&x, &y).unwrap();
        assert!((pp - 0.1).abs() < 1e-9, "p2plane {pp}");
        assert!((pe - 0.1).abs() < 1e-9, "p2p {pe}");
    }

    #[test]
    fn p2plane_kills_tangential_error() {
        let x = plane_grid(10);
        let normals = vec![[0.0, 0.0, 1.0]; x.len()];
        // small tangential shift, interior points only to avoid boundary
        let shift = 0.03;
        let y = PointCloud {
            points: x
                .points
                .iter()
                .filter(|p| p[0] > 0.1 && p[0] < 0.9 && p[1] > 0.1 && p[1] < 0.9)
                .map(|p| [p[0] + shift, p[1], p[2]])
                .collect(),
        };
        let pp = p2plane(&x, &y, &normals).unwrap();
        let pe = p2p(&x, &y).unwrap();
        assert!(pp < 1e-9, "p2plane {pp}");
        assert!(pe > 1e-3, "p2p {pe}");
    }

    #[test]
    fn registry_lookup() {
        assert_eq!(lookup_distortion("cd").unwrap().name(), "cd");
        assert_eq!(lookup_distortion("emd").unwrap().name(), "emd");
        assert!(lookup_distortion("psnr").is_err());
        assert_eq!(distortion_names(), vec!["cd", "emd"]);
    }

    fn rigid_transform(pc: &PointCloud, angle: f64, t: Point) -> PointCloud {
        let (s, c) = angle.sin_cos();
        PointCloud {
            points: pc
                .points
                .iter()
                .map(|p| {
                    [
                        c * p[0] - s * p[1] + t[0],
                        s * p[0] + c * p[1] + t[1],
                        p[2] + t[2],
                    ]
                })
                .collect(),
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn metrics_rigid_invariant(seed in 0u64..500) {
            let x = random_cloud(seed, 16);
            let y = random_cloud(seed + 1000, 16);
            let angle = 0.7;
            let t = [0.3, -0.2, 0.9];
            let xr = rigid_transform(&x, angle, t);
            let yr = rigid_transform(&y, angle, t);
            prop_assert!((chamfer(&x, &y).unwrap() - chamfer(&xr, &yr).unwrap()).abs() < 1e-9);
            prop_assert!((emd_exact(&x, &y).unwrap() - emd_exact(&xr, &yr).unwrap()).abs() < 1e-9);
            prop_assert!((fscore(&x, &y, 0.5).unwrap() - fscore(&xr, &yr, 0.5).unwrap()).abs() < 1e-12);
            prop_assert!((p2p(&x, &y).unwrap() - p2p(&xr, &yr).unwrap()).abs() < 1e-9);
        }

        #[test]
        fn cd_emd_permutation_invariant(seed in 0u64..500) {
            let x = random_cloud(seed, 12);
            let y = random_cloud(seed + 2000, 12);
            let mut perm: Vec<usize> = (0..y.len()).collect();
            // deterministic shuffle
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for i in (1..perm.len()).rev() {
                let j = rng.gen_range(0..=i);
                perm.swap(i, j);
            }
            let yp = PointCloud { points: perm.iter().map(|&i| y.points[i]).collect() };
            prop_assert!((chamfer(&x, &y).unwrap() - chamfer(&x, &yp).unwrap()).abs() < 1e-12);
            prop_assert!((emd_exact(&x, &y).unwrap() - emd_exact(&x, &yp).unwrap()).abs() < 1e-12);
        }
    }
}
