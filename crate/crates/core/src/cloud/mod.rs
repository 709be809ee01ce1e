//! Point-cloud containers and the operations the tracking pipeline chains
//! together: axis-aligned-box cropping, seeded uniform downsampling, rigid
//! transformation between frames, and a plain-text debug dump.
//!
//! Clouds are tagged with the frame their coordinates live in so that
//! mismatched registrations fail loudly instead of silently producing
//! garbage transforms.

pub mod render;

pub use render::{render_depth, OrientedBox};

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use thiserror::Error;

use crate::geom::RigidTransform;

#[derive(Debug, Error)]
pub enum CloudError {
    #[error("point {index} has a non-finite coordinate")]
    NonFinite { index: usize },
    #[error("bounding box min {min:?} must be strictly below max {max:?} on every axis")]
    InvalidBounds { min: [f64; 3], max: [f64; 3] },
    #[error("camera needs at least 8x8 pixels, got {width}x{height}")]
    ResolutionTooSmall { width: u32, height: u32 },
    #[error("camera field of view must lie in (0, pi), got {fov} rad")]
    BadFieldOfView { fov: f64 },
    #[error("cannot downsample {available} points to {requested}")]
    NotEnoughPoints { available: usize, requested: usize },
}

/// Coordinate frame a cloud is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Frame {
    /// Chassis origin frame: x forward, y lateral-left, z up.
    ChassisOrigin,
    /// Optical camera frame: z along the optical axis, x image-right,
    /// y image-down.
    Camera,
}

/// An ordered set of 3-D points in a single frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: Frame,
}

impl PointCloud {
    /// Builds a cloud, rejecting non-finite coordinates.
    pub fn new(points: Vec<Vector3<f64>>, frame: Frame) -> Result<Self, CloudError> {
        for (index, p) in points.iter().enumerate() {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(CloudError::NonFinite { index });
            }
        }
        Ok(Self { points, frame })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Axis-aligned box, defined in whatever frame the caller pairs it with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    min: Vector3<f64>,
    max: Vector3<f64>,
}

impl BoundingBox {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self, CloudError> {
        if min.x < max.x && min.y < max.y && min.z < max.z {
            Ok(Self { min, max })
        } else {
            Err(CloudError::InvalidBounds { min: min.into(), max: max.into() })
        }
    }

    pub fn min(&self) -> &Vector3<f64> {
        &self.min
    }

    pub fn max(&self) -> &Vector3<f64> {
        &self.max
    }

    /// Grows the box by `margin` on all six faces.
    pub fn dilated(&self, margin: f64) -> Self {
        let m = Vector3::new(margin, margin, margin);
        Self { min: self.min - m, max: self.max + m }
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }
}

/// Pinhole depth camera: resolution, field of view, pose and ranging noise.
#[derive(Debug, Clone)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view, radians.
    pub fov_h: f64,
    /// Vertical field of view, radians.
    pub fov_v: f64,
    /// Camera pose in the chassis origin frame.
    pub pose: RigidTransform,
    /// One-sigma Gaussian ranging noise along each ray, meters.
    pub depth_noise_sigma: f64,
}

impl CameraModel {
    pub fn new(
        width: u32,
        height: u32,
        fov_h: f64,
        fov_v: f64,
        pose: RigidTransform,
        depth_noise_sigma: f64,
    ) -> Result<Self, CloudError> {
        if width < 8 || height < 8 {
            return Err(CloudError::ResolutionTooSmall { width, height });
        }
        for fov in [fov_h, fov_v] {
            if !(fov > 0.0 && fov < std::f64::consts::PI) {
                return Err(CloudError::BadFieldOfView { fov });
            }
        }
        Ok(Self { width, height, fov_h, fov_v, pose, depth_noise_sigma })
    }
}

/// Keeps the points that fall inside `bb`, preserving input order.
///
/// The box lives in its own frame; `bb_to_cloud` maps box coordinates into
/// the cloud's frame, so points are tested after mapping through its
/// inverse.
pub fn crop_bb(cloud: &PointCloud, bb: &BoundingBox, bb_to_cloud: &RigidTransform) -> PointCloud {
    let cloud_to_bb = bb_to_cloud.inverse();
    let points = cloud
        .points
        .iter()
        .filter(|p| bb.contains(&cloud_to_bb.apply(p)))
        .copied()
        .collect();
    PointCloud { points, frame: cloud.frame }
}

/// Uniform sample of exactly `target` points without replacement,
/// deterministic for a given seed. Selected points keep their input order.
/// Asking for more points than exist is an error; asking for all of them
/// returns the cloud unchanged.
pub fn random_downsample(
    cloud: &PointCloud,
    target: usize,
    seed: u64,
) -> Result<PointCloud, CloudError> {
    if target > cloud.len() {
        return Err(CloudError::NotEnoughPoints { available: cloud.len(), requested: target });
    }
    if target == cloud.len() {
        return Ok(cloud.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = sample(&mut rng, cloud.len(), target).into_vec();
    indices.sort_unstable();
    let points = indices.iter().map(|&i| cloud.points[i]).collect();
    Ok(PointCloud { points, frame: cloud.frame })
}

/// Maps every point through `t` and relabels the frame.
pub fn transform_cloud(cloud: &PointCloud, t: &RigidTransform, new_frame: Frame) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|p| t.apply(p)).collect(),
        frame: new_frame,
    }
}

/// ASCII dump, one `x y z` row per point in meters with nine significant
/// digits; meant for eyeballing clouds in external viewers.
pub fn to_xyz_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(cloud.len() * 48);
    for p in &cloud.points {
        writeln!(out, "{:.8e} {:.8e} {:.8e}", p.x, p.y, p.z).expect("string writes cannot fail");
    }
    out
}

/// Deterministic per-stream seed derivation (SplitMix64 over the parts),
/// used so every render cycle and downsample draw gets an independent,
/// reproducible stream from the scenario seed.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ index.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid_cloud() -> PointCloud {
        let mut points = Vec::new();
        for i in 0..10 {
            for j in 0..10 {
                points.push(Vector3::new(i as f64 * 0.1, j as f64 * 0.1, 0.5));
            }
        }
        PointCloud::new(points, Frame::ChassisOrigin).unwrap()
    }

    #[test]
    fn new_rejects_nan() {
        let err = PointCloud::new(
            vec![Vector3::new(0.0, f64::NAN, 0.0)],
            Frame::Camera,
        );
        assert!(matches!(err, Err(CloudError::NonFinite { index: 0 })));
    }

    #[test]
    fn bounding_box_rejects_degenerate_bounds() {
        let err = BoundingBox::new(Vector3::new(0.0, 0.0, 1.0), Vector3::new(1.0, 1.0, 1.0));
        assert!(matches!(err, Err(CloudError::InvalidBounds { .. })));
    }

    #[test]
    fn crop_keeps_inside_points_in_order() {
        let cloud = grid_cloud();
        let bb = BoundingBox::new(
            Vector3::new(0.25, 0.25, 0.0),
            Vector3::new(0.65, 0.65, 1.0),
        )
        .unwrap();
        let cropped = crop_bb(&cloud, &bb, &RigidTransform::identity());
        assert_eq!(cropped.len(), 16);
        assert!(cropped.points.iter().all(|p| bb.contains(p)));
        // Order preserved: x-major as generated.
        for pair in cropped.points.windows(2) {
            let key = |p: &Vector3<f64>| (p.x * 100.0) as i64 * 1000 + (p.y * 100.0) as i64;
            assert!(key(&pair[0]) < key(&pair[1]));
        }
    }

    #[test]
    fn crop_respects_box_frame_transform() {
        // Box shifted +1 in x in its own frame selects points near the
        // origin when mapped into the cloud frame by a -1 translation.
        let cloud = grid_cloud();
        let bb = BoundingBox::new(
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(1.35, 0.35, 1.0),
        )
        .unwrap();
        let bb_to_cloud = RigidTransform::from_translation(Vector3::new(-1.0, 0.0, 0.0));
        let cropped = crop_bb(&cloud, &bb, &bb_to_cloud);
        assert_eq!(cropped.len(), 16);
        assert!(cropped.points.iter().all(|p| p.x <= 0.351 && p.y <= 0.351));
    }

    #[test]
    fn downsample_is_deterministic_and_a_subset() {
        let cloud = grid_cloud();
        let a = random_downsample(&cloud, 37, 99).unwrap();
        let b = random_downsample(&cloud, 37, 99).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 37);
        for p in &a.points {
            assert!(cloud.points.contains(p));
        }
    }

    #[test]
    fn downsample_seeds_give_distinct_selections() {
        let cloud = grid_cloud();
        let mut selections = std::collections::HashSet::new();
        for seed in 0..100 {
            let ds = random_downsample(&cloud, 20, seed).unwrap();
            let key: Vec<i64> = ds
                .points
                .iter()
                .map(|p| (p.x * 100.0) as i64 * 1000 + (p.y * 100.0) as i64)
                .collect();
            selections.insert(key);
        }
        assert!(selections.len() >= 99, "only {} distinct selections", selections.len());
    }

    #[test]
    fn downsample_rejects_oversized_request() {
        let cloud = grid_cloud();
        assert!(matches!(
            random_downsample(&cloud, 101, 1),
            Err(CloudError::NotEnoughPoints { available: 100, requested: 101 })
        ));
        assert_eq!(random_downsample(&cloud, 100, 1).unwrap(), cloud);
    }

    #[test]
    fn transform_cloud_round_trips() {
        let cloud = grid_cloud();
        let t = crate::geom::compose(
            &RigidTransform::rot_y(0.2),
            &RigidTransform::from_translation(Vector3::new(0.3, -0.1, 0.7)),
        );
        let moved = transform_cloud(&cloud, &t, Frame::Camera);
        assert_eq!(moved.frame, Frame::Camera);
        let back = transform_cloud(&moved, &t.inverse(), Frame::ChassisOrigin);
        for (orig, restored) in cloud.points.iter().zip(&back.points) {
            assert_relative_eq!((orig - restored).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn xyz_dump_has_nine_significant_digits() {
        let cloud = PointCloud::new(
            vec![Vector3::new(1.23456789123, -0.000123456789, 2.0)],
            Frame::Camera,
        )
        .unwrap();
        let dump = to_xyz_string(&cloud);
        assert_eq!(dump, "1.23456789e0 -1.23456789e-4 2.00000000e0\n");
    }

    #[test]
    fn derive_seed_separates_streams() {
        let a = derive_seed(7, 1, 0);
        let b = derive_seed(7, 2, 0);
        let c = derive_seed(7, 1, 1);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(a, derive_seed(7, 1, 0));
    }
}
