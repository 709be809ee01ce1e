//! Point-to-point rigid registration.
//!
//! [`icp_register`] aligns a source cloud onto a destination cloud by
//! alternating exact nearest-neighbor matching with a closed-form rigid fit.
//! The destination tree is built once per call. Everything here is
//! deterministic: the same inputs produce bit-identical transforms, errors
//! and iteration counts.

mod kdtree;

pub use kdtree::KdTree;

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

use crate::cloud::PointCloud;
use crate::geom::{compose, RigidTransform};

#[derive(Debug, Error)]
pub enum IcpError {
    #[error("need at least {required} points, got {available}")]
    TooFewPoints { available: usize, required: usize },
    #[error("source and destination clouds are in different frames")]
    FrameMismatch,
    #[error("paired slices differ in length: {src} vs {dst}")]
    LengthMismatch { src: usize, dst: usize },
    #[error("no point pair within the correspondence distance")]
    NoCorrespondences,
    #[error("point geometry is degenerate (singular value ratio {ratio:.3e})")]
    DegenerateGeometry { ratio: f64 },
}

/// Tuning knobs for [`icp_register`].
#[derive(Debug, Clone)]
pub struct IcpParams {
    /// Hard cap on matching/fitting rounds.
    pub max_iterations: usize,
    /// Converged when the mean correspondence distance changes by less
    /// than this between consecutive rounds, meters.
    pub convergence_tol: f64,
    /// Pairs farther apart than this are dropped from the fit, meters.
    pub max_correspondence_dist: f64,
    /// Minimum size of both input clouds.
    pub min_points: usize,
}

impl Default for IcpParams {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            convergence_tol: 1e-5,
            max_correspondence_dist: 0.15,
            min_points: 200,
        }
    }
}

/// Outcome of a registration run.
#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps source-frame points onto the destination cloud; the initial
    /// guess passed to [`icp_register`] is folded in.
    pub transform: RigidTransform,
    /// Root-mean-square correspondence distance at the final alignment.
    pub final_error: f64,
    /// Fit rounds actually applied.
    pub iterations: usize,
    /// False when the loop hit `max_iterations` instead of the tolerance.
    pub converged: bool,
    /// Mean correspondence distance measured at the start of every round.
    pub error_history: Vec<f64>,
}

/// Least-squares rigid motion mapping `src` onto `dst`, pairwise.
///
/// Uses the SVD of the cross-covariance with a determinant correction, so
/// the result is always a proper rotation. Planar point sets are fine;
/// collinear or coincident ones are rejected as degenerate.
pub fn best_rigid_fit(
    src: &[Vector3<f64>],
    dst: &[Vector3<f64>],
) -> Result<RigidTransform, IcpError> {
    if src.len() != dst.len() {
        return Err(IcpError::LengthMismatch { src: src.len(), dst: dst.len() });
    }
    if src.len() < 3 {
        return Err(IcpError::TooFewPoints { available: src.len(), required: 3 });
    }
    let n = src.len() as f64;
    let c_src: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / n;
    let c_dst: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - c_src) * (d - c_dst).transpose();
    }
    let svd = h.svd(true, true);
    let sv = svd.singular_values;
    // Rank must be at least 2 to pin down a rotation; a plane is enough,
    // a line is not.
    let ratio = if sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };
    if !(ratio > 1e-9) {
        return Err(IcpError::DegenerateGeometry { ratio });
    }
    let u = svd.u.expect("svd computed with u");
    let v = svd.v_t.expect("svd computed with v_t").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = c_dst - rotation * c_src;
    RigidTransform::new(rotation, translation)
        .map_err(|_| IcpError::DegenerateGeometry { ratio })
}

/// Iterative closest point with exact matching and distance gating.
///
/// `init` seeds the alignment and is part of the returned transform.
/// The error history records the mean matched distance at the start of
/// each round, so callers can inspect convergence behavior.
pub fn icp_register(
    src: &PointCloud,
    dst: &PointCloud,
    init: &RigidTransform,
    params: &IcpParams,
) -> Result<IcpResult, IcpError> {
    if src.frame != dst.frame {
        return Err(IcpError::FrameMismatch);
    }
    for cloud in [src, dst] {
        if cloud.len() < params.min_points {
            return Err(IcpError::TooFewPoints {
                available: cloud.len(),
                required: params.min_points,
            });
        }
    }
    let tree = KdTree::build(&dst.points)?;
    let max_d2 = params.max_correspondence_dist * params.max_correspondence_dist;

    let mut transform = *init;
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut final_error = f64::INFINITY;
    let mut prev_mean = f64::INFINITY;

    for _ in 0..params.max_iterations {
        let mut pairs_src = Vec::new();
        let mut pairs_dst = Vec::new();
        let mut sum_d = 0.0;
        let mut sum_d2 = 0.0;
        for p in &src.points {
            let moved = transform.apply(p);
            let (j, d2) = tree.nearest(&moved);
            if d2 <= max_d2 {
                pairs_src.push(moved);
                pairs_dst.push(dst.points[j]);
                sum_d += d2.sqrt();
                sum_d2 += d2;
            }
        }
        if pairs_src.is_empty() {
            return Err(IcpError::NoCorrespondences);
        }
        let n = pairs_src.len() as f64;
        let mean = sum_d / n;
        history.push(mean);
        final_error = (sum_d2 / n).sqrt();
        // Either the alignment is already tight in absolute terms or it has
        // stopped improving.
        if mean < params.convergence_tol || (prev_mean - mean).abs() < params.convergence_tol {
            converged = true;
            break;
        }
        prev_mean = mean;
        let delta = best_rigid_fit(&pairs_src, &pairs_dst)?;
        transform = compose(&delta, &transform);
        iterations += 1;
    }
    Ok(IcpResult { transform, final_error, iterations, converged, error_history: history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::Frame;
    use approx::assert_relative_eq;

    /// Two perpendicular faces sampled on a 2 cm grid, the kind of
    /// structure a box-front view produces. Spacing keeps nearest-neighbor
    /// matching unambiguous for millimeter-scale misalignments.
    fn corner_cloud() -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                let a = i as f64 * 0.02;
                let b = j as f64 * 0.02;
                pts.push(Vector3::new(a, b, 0.0));
                pts.push(Vector3::new(a, 0.0, b + 0.02));
            }
        }
        PointCloud::new(pts, Frame::Camera).unwrap()
    }

    fn loose_params() -> IcpParams {
        IcpParams { min_points: 10, ..IcpParams::default() }
    }

    fn transform_points(cloud: &PointCloud, t: &RigidTransform) -> PointCloud {
        PointCloud {
            points: cloud.points.iter().map(|p| t.apply(p)).collect(),
            frame: cloud.frame,
        }
    }

    #[test]
    fn fit_recovers_exact_rigid_motion() {
        let cloud = corner_cloud();
        let truth = compose(
            &RigidTransform::from_translation(Vector3::new(0.05, -0.02, 0.1)),
            &RigidTransform::rot_y(0.3),
        );
        let moved: Vec<_> = cloud.points.iter().map(|p| truth.apply(p)).collect();
        let fit = best_rigid_fit(&cloud.points, &moved).unwrap();
        assert_relative_eq!(fit.rotation(), truth.rotation(), epsilon = 1e-12);
        assert_relative_eq!(fit.translation(), truth.translation(), epsilon = 1e-12);
    }

    #[test]
    fn fit_handles_planar_sets_without_reflection() {
        let mut src = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                src.push(Vector3::new(i as f64 * 0.05, j as f64 * 0.05, 0.0));
            }
        }
        let truth = compose(
            &RigidTransform::from_translation(Vector3::new(0.0, 0.01, 0.02)),
            &RigidTransform::rot_x(0.1),
        );
        let dst: Vec<_> = src.iter().map(|p| truth.apply(p)).collect();
        let fit = best_rigid_fit(&src, &dst).unwrap();
        assert!((fit.rotation().determinant() - 1.0).abs() < 1e-12);
        assert_relative_eq!(fit.rotation(), truth.rotation(), epsilon = 1e-10);
    }

    #[test]
    fn fit_rejects_collinear_points() {
        let src: Vec<_> = (0..10).map(|i| Vector3::new(i as f64, 0.0, 0.0)).collect();
        let dst = src.clone();
        assert!(matches!(
            best_rigid_fit(&src, &dst),
            Err(IcpError::DegenerateGeometry { .. })
        ));
    }

    #[test]
    fn fit_rejects_mismatched_lengths() {
        let a = vec![Vector3::zeros(); 5];
        let b = vec![Vector3::zeros(); 4];
        assert!(matches!(best_rigid_fit(&a, &b), Err(IcpError::LengthMismatch { .. })));
    }

    #[test]
    fn identity_clouds_converge_immediately_with_zero_error() {
        let cloud = corner_cloud();
        let r =
            icp_register(&cloud, &cloud, &RigidTransform::identity(), &loose_params()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert!(r.final_error < 1e-12);
        assert_relative_eq!(r.transform.rotation(), RigidTransform::identity().rotation(), epsilon = 1e-12);
    }

    #[test]
    fn recovers_small_misalignment_exactly() {
        let cloud = corner_cloud();
        let truth = compose(
            &RigidTransform::from_translation(Vector3::new(0.0, 0.0, 0.005)),
            &RigidTransform::rot_y(1.0_f64.to_radians()),
        );
        let dst = transform_points(&cloud, &truth);
        let r = icp_register(&cloud, &dst, &RigidTransform::identity(), &loose_params()).unwrap();
        assert!(r.converged, "no convergence in {} iterations", r.iterations);
        assert!(r.final_error < 1e-9, "residual {}", r.final_error);
        assert_relative_eq!(r.transform.rotation(), truth.rotation(), epsilon = 1e-7);
        assert_relative_eq!(r.transform.translation(), truth.translation(), epsilon = 1e-7);
    }

    #[test]
    fn init_guess_is_folded_into_the_result() {
        let cloud = corner_cloud();
        let big = compose(
            &RigidTransform::from_translation(Vector3::new(0.4, 0.2, -0.3)),
            &RigidTransform::rot_z(0.5),
        );
        let dst = transform_points(&cloud, &big);
        // Without the init the offset exceeds the correspondence gate; with
        // it the very first matching is already perfect.
        let r = icp_register(&cloud, &dst, &big, &loose_params()).unwrap();
        assert!(r.converged);
        assert_eq!(r.iterations, 0);
        assert_relative_eq!(r.transform.rotation(), big.rotation(), epsilon = 1e-12);
        assert_relative_eq!(r.transform.translation(), big.translation(), epsilon = 1e-12);
    }

    #[test]
    fn error_history_is_monotone_on_clean_data() {
        let cloud = corner_cloud();
        let truth = compose(
            &RigidTransform::from_translation(Vector3::new(0.003, 0.0, -0.004)),
            &RigidTransform::rot_y(-1.5_f64.to_radians()),
        );
        let dst = transform_points(&cloud, &truth);
        let r = icp_register(&cloud, &dst, &RigidTransform::identity(), &loose_params()).unwrap();
        assert!(r.error_history.len() >= 2);
        for w in r.error_history.windows(2) {
            assert!(w[1] <= w[0] + 1e-12, "error rose: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn far_outliers_are_gated_out_of_the_fit() {
        let cloud = corner_cloud();
        let truth = RigidTransform::from_translation(Vector3::new(0.004, 0.0, 0.002));
        let mut dst = transform_points(&cloud, &truth);
        // A separate clump a meter away must not pull the alignment.
        for k in 0..60 {
            dst.points.push(Vector3::new(1.5 + (k % 8) as f64 * 0.01, 1.5, 1.0));
        }
        let r = icp_register(&cloud, &dst, &RigidTransform::identity(), &loose_params()).unwrap();
        assert!(r.final_error < 1e-9);
        assert_relative_eq!(r.transform.translation(), truth.translation(), epsilon = 1e-7);
    }

    #[test]
    fn disjoint_clouds_report_no_correspondences() {
        let cloud = corner_cloud();
        let far = transform_points(
            &cloud,
            &RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0)),
        );
        assert!(matches!(
            icp_register(&cloud, &far, &RigidTransform::identity(), &loose_params()),
            Err(IcpError::NoCorrespondences)
        ));
    }

    #[test]
    fn undersized_clouds_are_rejected() {
        let cloud = corner_cloud();
        let params = IcpParams { min_points: cloud.len() + 1, ..IcpParams::default() };
        assert!(matches!(
            icp_register(&cloud, &cloud, &RigidTransform::identity(), &params),
            Err(IcpError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn frame_mismatch_is_rejected() {
        let a = corner_cloud();
        let mut b = a.clone();
        b.frame = Frame::ChassisOrigin;
        assert!(matches!(
            icp_register(&a, &b, &RigidTransform::identity(), &loose_params()),
            Err(IcpError::FrameMismatch)
        ));
    }

    #[test]
    fn registration_is_bit_deterministic() {
        let cloud = corner_cloud();
        let truth = compose(
            &RigidTransform::from_translation(Vector3::new(0.002, -0.001, 0.003)),
            &RigidTransform::rot_x(0.8_f64.to_radians()),
        );
        let dst = transform_points(&cloud, &truth);
        let a = icp_register(&cloud, &dst, &RigidTransform::identity(), &loose_params()).unwrap();
        let b = icp_register(&cloud, &dst, &RigidTransform::identity(), &loose_params()).unwrap();
        assert_eq!(a.transform.rotation(), b.transform.rotation());
        assert_eq!(a.transform.translation(), b.transform.translation());
        assert_eq!(a.final_error.to_bits(), b.final_error.to_bits());
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.error_history, b.error_history);
    }
}
