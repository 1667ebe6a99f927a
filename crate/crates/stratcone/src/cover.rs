//! Scale-by-scale ball covers of the layers and the partition of unity over
//! them.
//!
//! At step k, each layer m gets a greedy net of balls centered on its own
//! points with radius from the schedule. Lower-layer balls claim an enlarged
//! neighborhood first; higher-layer candidates inside a claimed region are
//! skipped, which keeps the families disjoint enough for bounded overlap
//! while the enlargements still cover every labeled point.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{self, GridIndex, Vec4};
use crate::metric::PointCloud;
use crate::strata::StratumLabels;

#[derive(Debug, Error)]
pub enum CoverError {
    #[error("no resolved labels to cover")]
    EmptyStratumLadder,
    #[error("labels cover {labels} points, cloud has {cloud}")]
    LabelMismatch { labels: usize, cloud: usize },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialize: {0}")]
    Serialize(String),
}

/// Ball radii per layer and step: `c * gamma^m / 2^k`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RadiusSchedule {
    pub c: f64,
    pub gamma: f64,
}

impl Default for RadiusSchedule {
    fn default() -> Self {
        Self { c: 0.05, gamma: 0.5 }
    }
}

impl RadiusSchedule {
    pub fn radius(&self, m: usize, k: usize) -> f64 {
        self.c * self.gamma.powi(m as i32) * 0.5f64.powi(k as i32)
    }
}

/// Enlargement factor a layer-t ball exerts on layer-m candidates, t < m.
pub fn enlargement(t: usize, m: usize) -> f64 {
    2.0 - 2.0f64.powi(t as i32 - m as i32 - 1)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverBall {
    pub center_idx: usize,
    pub center: Vec4,
    pub radius: f64,
    pub stratum: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cover {
    pub step: usize,
    pub schedule: RadiusSchedule,
    pub balls: Vec<CoverBall>,
    /// Candidates suppressed by a lower-layer ball: (point index, ball index).
    pub suppressed: Vec<(usize, usize)>,
}

impl Cover {
    pub fn stratum_balls(&self, m: usize) -> impl Iterator<Item = (usize, &CoverBall)> {
        self.balls.iter().enumerate().filter(move |(_, b)| b.stratum == m)
    }

    pub fn save(&self, path: &Path) -> Result<(), CoverError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| CoverError::Serialize(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CoverError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| CoverError::Serialize(e.to_string()))
    }
}

/// Greedy nets per layer, lowest layer first, candidates in index order.
pub fn build_cover(
    cloud: &PointCloud,
    labels: &StratumLabels,
    step: usize,
    schedule: &RadiusSchedule,
) -> Result<Cover, CoverError> {
    if labels.labels.len() != cloud.len() {
        return Err(CoverError::LabelMismatch { labels: labels.labels.len(), cloud: cloud.len() });
    }
    let mut balls: Vec<CoverBall> = Vec::new();
    let mut suppressed: Vec<(usize, usize)> = Vec::new();
    let mut strata: Vec<usize> = labels.labels.iter().flatten().copied().collect();
    strata.sort_unstable();
    strata.dedup();
    for &m in &strata {
        let r = schedule.radius(m, step);
        let mut accepted: Vec<usize> = Vec::new();
        'cand: for (i, l) in labels.labels.iter().enumerate() {
            if *l != Some(m) {
                continue;
            }
            let p = cloud.points[i];
            // Lower-layer balls claim their enlarged neighborhood.
            for (bi, b) in balls.iter().enumerate() {
                if b.stratum < m && (p - b.center).norm() < enlargement(b.stratum, m) * b.radius {
                    suppressed.push((i, bi));
                    continue 'cand;
                }
            }
            for &ai in &accepted {
                if (p - balls[ai].center).norm() < r {
                    continue 'cand;
                }
            }
            accepted.push(balls.len());
            balls.push(CoverBall { center_idx: i, center: p, radius: r, stratum: m });
        }
    }
    if balls.is_empty() {
        return Err(CoverError::EmptyStratumLadder);
    }
    Ok(Cover { step, schedule: *schedule, balls, suppressed })
}

/// Coverage audit: every labeled point must lie in the doubled ball of its
/// own layer's net or in the enlarged ball of a lower layer.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoverageReport {
    pub checked: usize,
    pub misses: Vec<usize>,
    pub max_overlap: usize,
}

pub fn check_coverage(
    cloud: &PointCloud,
    labels: &StratumLabels,
    cover: &Cover,
) -> Result<CoverageReport, CoverError> {
    if labels.labels.len() != cloud.len() {
        return Err(CoverError::LabelMismatch { labels: labels.labels.len(), cloud: cloud.len() });
    }
    let mut misses = Vec::new();
    let mut checked = 0usize;
    for (i, l) in labels.labels.iter().enumerate() {
        let Some(m) = *l else { continue };
        checked += 1;
        let p = cloud.points[i];
        let mut covered = false;
        for b in &cover.balls {
            let factor = if b.stratum == m {
                2.0
            } else if b.stratum < m {
                enlargement(b.stratum, m)
            } else {
                continue;
            };
            if (p - b.center).norm() <= factor * b.radius {
                covered = true;
                break;
            }
        }
        if !covered {
            misses.push(i);
        }
    }
    let mut max_overlap = 0usize;
    for i in (0..cloud.len()).step_by((cloud.len() / 1000).max(1)) {
        let c = overlap_count(cover, &cloud.points[i]);
        if c > max_overlap {
            max_overlap = c;
        }
    }
    Ok(CoverageReport { checked, misses, max_overlap })
}

/// Number of bump supports (tripled balls) containing `x`.
pub fn overlap_count(cover: &Cover, x: &Vec4) -> usize {
    cover
        .balls
        .iter()
        .filter(|b| (x - b.center).norm() < 3.0 * b.radius)
        .count()
}

/// Normalized bump weights over a cover, with a background weight that fades
/// in only outside all doubled balls.
pub struct PartitionOfUnity {
    pub cover: Cover,
    index: GridIndex,
    max_radius: f64,
}

impl PartitionOfUnity {
    pub fn new(cover: Cover) -> Self {
        let centers: Vec<Vec4> = cover.balls.iter().map(|b| b.center).collect();
        let max_radius = cover.balls.iter().map(|b| b.radius).fold(0.0, f64::max);
        let index = GridIndex::build(&centers, (3.0 * max_radius).max(1e-9));
        Self { cover, index, max_radius }
    }

    /// Raw bump value of ball i at x: one on the doubled ball, zero outside
    /// the tripled ball, quintic in between.
    pub fn bump(&self, i: usize, x: &Vec4) -> f64 {
        let b = &self.cover.balls[i];
        geom::plateau((x - b.center).norm(), 2.0 * b.radius, 3.0 * b.radius)
    }

    /// Balls whose bump support can reach x.
    pub fn active(&self, x: &Vec4) -> Vec<usize> {
        let mut out = Vec::new();
        self.index.for_each_in_ball(x, 3.0 * self.max_radius, |i| {
            let b = &self.cover.balls[i as usize];
            if (x - b.center).norm() < 3.0 * b.radius {
                out.push(i as usize);
            }
        });
        out.sort_unstable();
        out
    }

    /// Sparse normalized weights at x. The background weight (the product of
    /// the complements) joins the normalization, so the listed weights sum to
    /// one exactly where some doubled ball holds x, and to less outside.
    pub fn weights(&self, x: &Vec4) -> Vec<(usize, f64)> {
        let active = self.active(x);
        if active.is_empty() {
            return Vec::new();
        }
        let mut raw = Vec::with_capacity(active.len());
        let mut total = 0.0f64;
        let mut background = 1.0f64;
        for &i in &active {
            let t = self.bump(i, x);
            raw.push((i, t));
            total += t;
            background *= 1.0 - t;
        }
        let denom = total + background;
        if denom <= 0.0 {
            return Vec::new();
        }
        raw.into_iter()
            .filter(|(_, t)| *t > 0.0)
            .map(|(i, t)| (i, t / denom))
            .collect()
    }

    /// Weight left to the identity map at x.
    pub fn background(&self, x: &Vec4) -> f64 {
        let active = self.active(x);
        let mut total = 0.0f64;
        let mut background = 1.0f64;
        for &i in &active {
            let t = self.bump(i, x);
            total += t;
            background *= 1.0 - t;
        }
        let denom = total + background;
        if denom <= 0.0 {
            1.0
        } else {
            background / denom
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::standard_catalog;
    use crate::metric::cone_cloud;
    use crate::strata::StratumLabels;
    use std::collections::HashMap;

    /// Labels a Y-product cloud by ground truth: axis samples are layer 1,
    /// the rest layer 2.
    fn labeled_y(h: f64) -> (PointCloud, StratumLabels) {
        let cat = standard_catalog(3);
        let cloud = cone_cloud(&cat[1], 1.2, h).unwrap();
        let labels: Vec<Option<usize>> = cloud
            .points
            .iter()
            .map(|p| {
                if (p.x * p.x + p.y * p.y).sqrt() < 0.5 * h {
                    Some(1)
                } else {
                    Some(2)
                }
            })
            .collect();
        let n = labels.len();
        (
            cloud,
            StratumLabels {
                labels,
                persistence: 3,
                rungs: vec![1.0, 0.7, 0.5],
                types: vec![0, 1, 2],
                a_values: vec![Vec::new(); n],
            },
        )
    }

    #[test]
    fn greedy_centers_keep_their_distance() {
        let (cloud, labels) = labeled_y(0.03);
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        for step in 0..3 {
            let cover = build_cover(&cloud, &labels, step, &schedule).unwrap();
            for m in [1usize, 2] {
                let balls: Vec<&CoverBall> =
                    cover.stratum_balls(m).map(|(_, b)| b).collect();
                for a in 0..balls.len() {
                    for b in a + 1..balls.len() {
                        let d = (balls[a].center - balls[b].center).norm();
                        assert!(
                            d >= balls[a].radius - 1e-12,
                            "step {step} layer {m}: centers {a},{b} at {d}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn radii_halve_exactly_per_step() {
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        for m in 0..3 {
            for k in 0..6 {
                assert_eq!(schedule.radius(m, k + 1), schedule.radius(m, k) / 2.0);
            }
        }
    }

    #[test]
    fn every_labeled_point_is_covered() {
        let (cloud, labels) = labeled_y(0.03);
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        for step in 0..4 {
            let cover = build_cover(&cloud, &labels, step, &schedule).unwrap();
            let report = check_coverage(&cloud, &labels, &cover).unwrap();
            assert!(
                report.misses.is_empty(),
                "step {step}: {} uncovered points",
                report.misses.len()
            );
            assert!(report.max_overlap > 0);
            assert!(
                report.max_overlap <= 64,
                "step {step}: overlap {}",
                report.max_overlap
            );
        }
    }

    #[test]
    fn suppressed_candidates_sit_inside_enlarged_lower_balls() {
        let (cloud, labels) = labeled_y(0.03);
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        let cover = build_cover(&cloud, &labels, 1, &schedule).unwrap();
        for &(pt, bi) in &cover.suppressed {
            let b = &cover.balls[bi];
            let m = labels.labels[pt].unwrap();
            assert!(b.stratum < m);
            let d = (cloud.points[pt] - b.center).norm();
            assert!(d < enlargement(b.stratum, m) * b.radius);
        }
        // And accepted higher-layer centers stay outside those regions.
        for (_, ball) in cover.stratum_balls(2) {
            for (_, low) in cover.stratum_balls(1) {
                let d = (ball.center - low.center).norm();
                assert!(d >= enlargement(1, 2) * low.radius - 1e-12);
            }
        }
    }

    #[test]
    fn weights_sum_to_one_on_doubled_balls() {
        let (cloud, labels) = labeled_y(0.035);
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        let cover = build_cover(&cloud, &labels, 1, &schedule).unwrap();
        let report = check_coverage(&cloud, &labels, &cover).unwrap();
        let pou = PartitionOfUnity::new(cover);
        let mut inside_checked = 0usize;
        for i in (0..cloud.len()).step_by(7) {
            let x = cloud.points[i];
            let w = pou.weights(&x);
            let sum: f64 = w.iter().map(|(_, v)| v).sum();
            let bg = pou.background(&x);
            assert!(
                (sum + bg - 1.0).abs() < 1e-9,
                "weights plus background must always normalize"
            );
            assert!(w.len() <= report.max_overlap);
            let in_doubled = pou
                .cover
                .balls
                .iter()
                .any(|b| (x - b.center).norm() <= 2.0 * b.radius);
            if in_doubled {
                inside_checked += 1;
                assert!((sum - 1.0).abs() < 1e-9, "sum {sum} inside a doubled ball");
                assert!(bg < 1e-9);
            }
        }
        assert!(inside_checked > 50);
    }

    #[test]
    fn single_isolated_ball_owns_its_center() {
        let points = vec![Vec4::new(0.0, 0.0, 0.0, 0.0), Vec4::new(3.0, 0.0, 0.0, 0.0)];
        let cloud = PointCloud::new(points, 0.5).unwrap();
        let labels = StratumLabels {
            labels: vec![Some(2), Some(2)],
            persistence: 3,
            rungs: vec![1.0, 0.7, 0.5],
            types: vec![2],
            a_values: vec![Vec::new(), Vec::new()],
        };
        let cover = build_cover(&cloud, &labels, 0, &RadiusSchedule { c: 0.4, gamma: 0.5 }).unwrap();
        let pou = PartitionOfUnity::new(cover);
        let w = pou.weights(&Vec4::new(0.0, 0.0, 0.0, 0.0));
        assert_eq!(w.len(), 1);
        assert!((w[0].1 - 1.0).abs() < 1e-12);

        // Midway between two overlapping doubled balls the two weights split
        // evenly.
        let points = vec![Vec4::new(-0.1, 0.0, 0.0, 0.0), Vec4::new(0.1, 0.0, 0.0, 0.0)];
        let cloud = PointCloud::new(points, 0.05).unwrap();
        let labels = StratumLabels {
            labels: vec![Some(2), Some(2)],
            persistence: 3,
            rungs: vec![1.0, 0.7, 0.5],
            types: vec![2],
            a_values: vec![Vec::new(), Vec::new()],
        };
        let cover = build_cover(&cloud, &labels, 0, &RadiusSchedule { c: 0.4, gamma: 0.5 }).unwrap();
        assert_eq!(cover.balls.len(), 2);
        let pou = PartitionOfUnity::new(cover);
        let w = pou.weights(&Vec4::new(0.0, 0.0, 0.0, 0.0));
        assert_eq!(w.len(), 2);
        assert!((w[0].1 - 0.5).abs() < 1e-12);
        assert!((w[1].1 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn weight_gradients_scale_with_the_step()
    {
        let (cloud, labels) = labeled_y(0.035);
        let schedule = RadiusSchedule { c: 0.4, gamma: 0.5 };
        let mut prev_bound = 0.0f64;
        for step in 0..3 {
            let cover = build_cover(&cloud, &labels, step, &schedule).unwrap();
            let pou = PartitionOfUnity::new(cover);
            let mut worst = 0.0f64;
            let eps = 1e-6;
            let mut probes = 0usize;
            for i in (0..cloud.len()).step_by((cloud.len() / 1000).max(1)) {
                let x = cloud.points[i];
                let w0: HashMap<usize, f64> = pou.weights(&x).into_iter().collect();
                for axis in 0..3 {
                    let mut dx = x;
                    dx[axis] += eps;
                    let w1: HashMap<usize, f64> = pou.weights(&dx).into_iter().collect();
                    for (i, v0) in &w0 {
                        let v1 = w1.get(i).copied().unwrap_or(0.0);
                        worst = worst.max((v1 - v0).abs() / eps);
                    }
                }
                probes += 1;
            }
            assert!(probes >= 100);
            // The finest layer radius controls the scale: bump slopes grow
            // like 2^step, with a dimensionless constant absorbing the
            // normalization and overlap.
            let r_min = schedule.radius(2, step);
            let bound = 8.0 / r_min;
            assert!(
                worst <= bound,
                "step {step}: gradient {worst} above {bound}"
            );
            assert!(worst > prev_bound, "gradients should grow with the step");
            prev_bound = worst * 0.9;
        }
    }
}
