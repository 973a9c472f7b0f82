//! Chamfer objective and evaluation metrics over point sets, plus the
//! indicator-grid MSE.

use crate::error::{PsrError, Result};
use crate::grid::ScalarGrid;
use crate::kdtree::NearestNeighborIndex;
use crate::Vec3;

fn non_empty(points: &[Vec3], what: &'static str) -> Result<()> {
    if points.is_empty() {
        return Err(PsrError::Empty(what));
    }
    Ok(())
}

/// Nearest-neighbour distances (squared) and indices of each query.
fn nearest_all(index: &NearestNeighborIndex, queries: &[Vec3]) -> Vec<(usize, f64)> {
    queries
        .iter()
        .map(|q| {
            let nb = index.nearest(q).expect("index is non-empty");
            (nb.index, nb.dist_sq)
        })
        .collect()
}

/// Bidirectional squared Chamfer distance
/// `mean_a min_b |a-b|^2 + mean_b min_a |b-a|^2` and its gradient with
/// respect to `a`.
pub fn chamfer_l2(a: &[Vec3], b: &[Vec3]) -> Result<(f64, Vec<Vec3>)> {
    non_empty(b, "chamfer target set")?;
    chamfer_l2_indexed(a, &NearestNeighborIndex::new(b))
}

/// [`chamfer_l2`] against a prebuilt index over `b`.
pub fn chamfer_l2_indexed(a: &[Vec3], b: &NearestNeighborIndex) -> Result<(f64, Vec<Vec3>)> {
    non_empty(a, "chamfer source set")?;
    non_empty(b.points(), "chamfer target set")?;
    let b_pts = b.points();
    let (na, nb) = (a.len() as f64, b_pts.len() as f64);
    let mut grad = vec![Vec3::zeros(); a.len()];
    let mut value = 0.0;

    for (i, (j, d)) in nearest_all(b, a).into_iter().enumerate() {
        value += d / na;
        grad[i] += (a[i] - b_pts[j]) * (2.0 / na);
    }
    let a_index = NearestNeighborIndex::new(a);
    for (k, (i, d)) in nearest_all(&a_index, b_pts).into_iter().enumerate() {
        value += d / nb;
        grad[i] += (a[i] - b_pts[k]) * (2.0 / nb);
    }
    Ok((value, grad))
}

fn mean_distance(from: &[Vec3], to: &NearestNeighborIndex) -> f64 {
    from.iter()
        .map(|p| to.nearest(p).unwrap().dist_sq.sqrt())
        .sum::<f64>()
        / from.len() as f64
}

/// Evaluation Chamfer distance: the average of the two mean unsquared
/// nearest-neighbour distances.
pub fn chamfer_l1_metric(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    non_empty(a, "chamfer set A")?;
    non_empty(b, "chamfer set B")?;
    let ia = NearestNeighborIndex::new(a);
    let ib = NearestNeighborIndex::new(b);
    Ok(0.5 * (mean_distance(a, &ib) + mean_distance(b, &ia)))
}

/// F-score at distance threshold `tau` (inclusive).
pub fn fscore(pred: &[Vec3], gt: &[Vec3], tau: f64) -> Result<f64> {
    non_empty(pred, "predicted points")?;
    non_empty(gt, "ground-truth points")?;
    let ip = NearestNeighborIndex::new(pred);
    let ig = NearestNeighborIndex::new(gt);
    let t2 = tau * tau;
    let within = |from: &[Vec3], to: &NearestNeighborIndex| {
        from.iter()
            .filter(|p| to.nearest(p).unwrap().dist_sq <= t2)
            .count() as f64
            / from.len() as f64
    };
    let precision = within(pred, &ig);
    let recall = within(gt, &ip);
    if precision + recall == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * precision * recall / (precision + recall))
}

const UNIT_TOLERANCE: f64 = 1e-6;

fn check_unit(normals: &[Vec3]) -> Result<()> {
    for (index, n) in normals.iter().enumerate() {
        let norm = n.norm();
        if !((norm - 1.0).abs() <= UNIT_TOLERANCE) {
            return Err(PsrError::NonUnitNormal { index, norm });
        }
    }
    Ok(())
}

/// Symmetric mean of `|n_a . n_nn(a)|` (unsigned) over both directions.
pub fn normal_consistency(
    a_points: &[Vec3],
    a_normals: &[Vec3],
    b_points: &[Vec3],
    b_normals: &[Vec3],
) -> Result<f64> {
    non_empty(a_points, "normal set A")?;
    non_empty(b_points, "normal set B")?;
    for (p, n) in [(a_points, a_normals), (b_points, b_normals)] {
        if p.len() != n.len() {
            return Err(PsrError::LengthMismatch {
                what: "normals",
                expected: p.len(),
                actual: n.len(),
            });
        }
    }
    check_unit(a_normals)?;
    check_unit(b_normals)?;
    let one_way = |from: &[Vec3], from_n: &[Vec3], to: &[Vec3], to_n: &[Vec3]| {
        let index = NearestNeighborIndex::new(to);
        from.iter()
            .zip(from_n)
            .map(|(p, n)| n.dot(&to_n[index.nearest(p).unwrap().index]).abs())
            .sum::<f64>()
            / from.len() as f64
    };
    Ok(0.5
        * (one_way(a_points, a_normals, b_points, b_normals)
            + one_way(b_points, b_normals, a_points, a_normals)))
}

/// Mean squared difference between two indicator grids and its gradient
/// with respect to `pred`.
pub fn grid_mse(pred: &ScalarGrid, gt: &ScalarGrid) -> Result<(f64, ScalarGrid)> {
    pred.spec().check_same(&gt.spec())?;
    let n = pred.values().len() as f64;
    let diff: Vec<f64> = pred
        .values()
        .iter()
        .zip(gt.values())
        .map(|(p, g)| p - g)
        .collect();
    let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
    let grad = diff.iter().map(|d| 2.0 * d / n).collect();
    Ok((value, ScalarGrid::from_values(pred.spec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vec3> {
        (0..n)
            .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
            .collect()
    }

    #[test]
    fn chamfer_identity_and_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        let a = cloud(&mut rng, 50);
        let (v, g) = chamfer_l2(&a, &a).unwrap();
        assert_eq!(v, 0.0);
        assert!(g.iter().all(|x| x.norm() == 0.0));

        let p = Vec3::new(0.1, 0.2, 0.3);
        let q = Vec3::new(0.4, -0.2, 0.5);
        let (v, g) = chamfer_l2(&[p], &[q]).unwrap();
        let d2 = (p - q).norm_squared();
        assert!((v - 2.0 * d2).abs() < 1e-15);
        assert!((g[0] - (p - q) * 4.0).norm() < 1e-15);

        assert!(chamfer_l2(&[], &[q]).is_err());
        assert!(chamfer_l2(&[p], &[]).is_err());
    }

    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let a = cloud(&mut rng, 128);
        let b = cloud(&mut rng, 128);
        let (_, grad) = chamfer_l2(&a, &b).unwrap();
        let step = 1e-7;
        let mut checked = 0;
        for i in 0..a.len() {
            for d in 0..3 {
                let mut ap = a.clone();
                let mut am = a.clone();
                ap[i][d] += step;
                am[i][d] -= step;
                // skip if the perturbation changes any nearest-neighbour
                // assignment (non-smooth point)
                let assign = |pts: &[Vec3]| {
                    let ib = NearestNeighborIndex::new(&b);
                    let ia = NearestNeighborIndex::new(pts);
                    (
                        nearest_all(&ib, pts).iter().map(|x| x.0).collect::<Vec<_>>(),
                        nearest_all(&ia, &b).iter().map(|x| x.0).collect::<Vec<_>>(),
                    )
                };
                if assign(&ap) != assign(&am) {
                    continue;
                }
                let fd = (chamfer_l2(&ap, &b).unwrap().0 - chamfer_l2(&am, &b).unwrap().0)
                    / (2.0 * step);
                let err = (fd - grad[i][d]).abs() / fd.abs().max(grad[i][d].abs()).max(1e-4);
                assert!(err < 1e-6, "{i},{d}: {fd} vs {}", grad[i][d]);
                checked += 1;
            }
        }
        assert!(checked > 300);
    }

    #[test]
    fn chamfer_is_symmetric_in_value() {
        let mut rng = ChaCha8Rng::seed_from_u64(32);
        let a = cloud(&mut rng, 40);
        let b = cloud(&mut rng, 70);
        let ab = chamfer_l2(&a, &b).unwrap().0;
        let ba = chamfer_l2(&b, &a).unwrap().0;
        assert!((ab - ba).abs() < 1e-14);
        assert!(chamfer_l1_metric(&a, &b).unwrap() > 0.0);
    }

    #[test]
    fn l1_metric_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let a = cloud(&mut rng, 30);
        assert_eq!(chamfer_l1_metric(&a, &a).unwrap(), 0.0);
        let p = Vec3::new(0.0, 0.0, 0.0);
        let q = Vec3::new(0.3, 0.4, 0.0);
        assert!((chamfer_l1_metric(&[p], &[q]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn fscore_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(34);
        let gt = cloud(&mut rng, 99);
        assert_eq!(fscore(&gt, &gt, 0.01).unwrap(), 1.0);
        let far: Vec<Vec3> = gt.iter().map(|p| p + Vec3::new(5.0, 0.0, 0.0)).collect();
        assert_eq!(fscore(&far, &gt, 0.01).unwrap(), 0.0);
        let mut pred = gt.clone();
        pred.push(Vec3::new(10.0, 10.0, 10.0));
        let f = fscore(&pred, &gt, 0.01).unwrap();
        assert!((f - 2.0 * 0.99 / 1.99).abs() < 1e-12);
        assert!((f - 0.99497).abs() < 1e-5);
    }

    #[test]
    fn normal_consistency_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(35);
        let pts = cloud(&mut rng, 40);
        let nrm: Vec<Vec3> = (0..40)
            .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random(), 0.3).normalize())
            .collect();
        assert!((normal_consistency(&pts, &nrm, &pts, &nrm).unwrap() - 1.0).abs() < 1e-12);
        let flipped: Vec<Vec3> = nrm.iter().map(|n| -n).collect();
        assert!((normal_consistency(&pts, &nrm, &pts, &flipped).unwrap() - 1.0).abs() < 1e-12);
        let xs = vec![Vec3::x(); 40];
        let ys = vec![Vec3::y(); 40];
        assert_eq!(normal_consistency(&pts, &xs, &pts, &ys).unwrap(), 0.0);
        let bad = vec![Vec3::new(2.0, 0.0, 0.0); 40];
        assert!(matches!(
            normal_consistency(&pts, &bad, &pts, &xs),
            Err(PsrError::NonUnitNormal { index: 0, .. })
        ));
    }

    #[test]
    fn grid_mse_examples() {
        let spec = GridSpec::new(4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(36);
        let gt = ScalarGrid::from_values(
            spec,
            (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        assert_eq!(grid_mse(&gt, &gt).unwrap().0, 0.0);
        let shifted =
            ScalarGrid::from_values(spec, gt.values().iter().map(|v| v + 0.3).collect()).unwrap();
        assert!((grid_mse(&shifted, &gt).unwrap().0 - 0.09).abs() < 1e-15);

        let pred = ScalarGrid::from_values(
            spec,
            (0..64).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let (_, grad) = grid_mse(&pred, &gt).unwrap();
        // quadratic loss: central differences are exact up to round-off
        let step = 1e-2;
        for j in 0..64 {
            let mut p = pred.clone();
            let mut m = pred.clone();
            p.values_mut()[j] += step;
            m.values_mut()[j] -= step;
            let fd = (grid_mse(&p, &gt).unwrap().0 - grid_mse(&m, &gt).unwrap().0) / (2.0 * step);
            let g = grad.values()[j];
            assert!((fd - g).abs() / g.abs().max(1e-3) < 1e-8);
        }
        assert!(grid_mse(&pred, &ScalarGrid::zeros(GridSpec::new(8).unwrap())).is_err());
    }
}
