//! Local flatness measurement.
//!
//! Everything here is scale-normalized: the central quantity is the relative
//! local distance `d_xr` between two sets restricted to a ball, divided by the
//! ball radius. Point clouds carry their sampling radius `h` so callers can
//! account for the `2h/r` resolution floor in any comparison. Registration
//! searches for the best posed cone model over rotations and (optionally
//! spine-constrained) translations; it is seeded and deterministic.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{CatalogKind, ConeSet, SpineBranch};
use crate::geom::{self, GridIndex, Mat4, SeededRng, Vec4};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("point cloud is empty")]
    EmptyCloud,
    #[error("sampling radius must be positive, got {0}")]
    BadSamplingRadius(f64),
    #[error("ball radius must be positive, got {0}")]
    BadBallRadius(f64),
    #[error("one of the sets does not meet the ball (radius {radius} at {center:?})")]
    EmptyIntersection { center: [f64; 4], radius: f64 },
    #[error("three-set hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error("no catalog class of type {0} in ambient dimension {1}")]
    NoTypeMModel(usize, usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error("constants file: {0}")]
    Constants(String),
}

/// A finite sample of a set, with its sampling radius and a uniform grid
/// index sized to typical query radii.
#[derive(Debug, Clone)]
pub struct PointCloud {
    pub points: Vec<Vec4>,
    pub sampling_radius: f64,
    index: GridIndex,
}

impl PointCloud {
    pub fn new(points: Vec<Vec4>, sampling_radius: f64) -> Result<Self, MetricError> {
        if points.is_empty() {
            return Err(MetricError::EmptyCloud);
        }
        if !(sampling_radius > 0.0) {
            return Err(MetricError::BadSamplingRadius(sampling_radius));
        }
        let cell = (sampling_radius * 4.0).max(1e-6);
        let index = GridIndex::build(&points, cell);
        Ok(Self { points, sampling_radius, index })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Nearest sample to `p` and its distance.
    pub fn nearest(&self, p: &Vec4) -> (usize, f64) {
        let mut r = self.index.cell();
        loop {
            let mut best = (usize::MAX, f64::INFINITY);
            self.index.for_each_in_ball(p, r, |i| {
                let d = (self.points[i as usize] - p).norm();
                if d < best.1 {
                    best = (i as usize, d);
                }
            });
            // A hit within r is conclusive: the query visited every cell
            // overlapping B(p, r), so nothing closer was missed.
            if best.1 <= r {
                return best;
            }
            if r > 64.0 * self.index.cell() {
                return self.nearest_linear(p);
            }
            r *= 2.0;
        }
    }

    /// Distance from `p` to the cloud.
    pub fn distance(&self, p: &Vec4) -> f64 {
        self.nearest(p).1
    }

    /// Indices of samples within `radius` of `center`.
    pub fn indices_in_ball(&self, center: &Vec4, radius: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.index.for_each_in_ball(center, radius, |i| {
            if (self.points[i as usize] - center).norm() <= radius {
                out.push(i as usize);
            }
        });
        out
    }

    /// Samples within `radius` of `center`.
    pub fn points_in_ball(&self, center: &Vec4, radius: f64) -> Vec<Vec4> {
        self.indices_in_ball(center, radius)
            .into_iter()
            .map(|i| self.points[i])
            .collect()
    }

    /// Brute-force nearest, for index verification.
    pub fn nearest_linear(&self, p: &Vec4) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for (i, q) in self.points.iter().enumerate() {
            let d = (q - p).norm();
            if d < best.1 {
                best = (i, d);
            }
        }
        best
    }
}

/// Ball `B(center, radius)` used to localize a measurement.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BallSpec {
    pub center: [f64; 4],
    pub radius: f64,
}

impl BallSpec {
    pub fn new(center: Vec4, radius: f64) -> Self {
        Self { center: [center.x, center.y, center.z, center.w], radius }
    }

    pub fn center_vec(&self) -> Vec4 {
        Vec4::new(self.center[0], self.center[1], self.center[2], self.center[3])
    }
}

/// One side of a local distance measurement: either a sampled cloud or an
/// exact posed cone model (meshed on demand at a resolution tied to the ball).
#[derive(Debug, Clone)]
pub enum GeomSet<'a> {
    Cloud(&'a PointCloud),
    Cone(&'a ConeSet),
}

impl<'a> GeomSet<'a> {
    fn distance(&self, p: &Vec4) -> f64 {
        match self {
            GeomSet::Cloud(c) => c.distance(p),
            GeomSet::Cone(cs) => cs.distance(p),
        }
    }

    /// Points of the set inside `B(center, radius)`. Cones are meshed at
    /// resolution `res`; clouds return their samples.
    fn points_in_ball(&self, center: &Vec4, radius: f64, res: f64) -> Vec<Vec4> {
        match self {
            GeomSet::Cloud(c) => c.points_in_ball(center, radius),
            GeomSet::Cone(cs) => cs.densify_ball(center, radius, res),
        }
    }
}

/// Relative local distance between `f` and `g` on `B(x, r)`: the larger of the
/// two one-sided sup-of-distance terms, divided by `r`.
///
/// Each sup runs over the set's points inside the ball; cone sides are meshed
/// at resolution `res` (pass `r / 200.0` for certification-grade calls, a
/// coarser value inside search loops). For sampled sides the result is exact
/// up to an additive `2h/r`.
pub fn d_xr_res(
    f: &GeomSet,
    g: &GeomSet,
    ball: &BallSpec,
    res: f64,
) -> Result<f64, MetricError> {
    if !(ball.radius > 0.0) {
        return Err(MetricError::BadBallRadius(ball.radius));
    }
    let x = ball.center_vec();
    let r = ball.radius;
    let fp = f.points_in_ball(&x, r, res);
    let gp = g.points_in_ball(&x, r, res);
    if fp.is_empty() || gp.is_empty() {
        return Err(MetricError::EmptyIntersection { center: ball.center, radius: r });
    }
    let sup_fg = fp.iter().map(|p| g.distance(p)).fold(0.0f64, f64::max);
    let sup_gf = gp.iter().map(|p| f.distance(p)).fold(0.0f64, f64::max);
    Ok(sup_fg.max(sup_gf) / r)
}

/// `d_xr_res` at the default certification resolution `r / 200`.
pub fn d_xr(f: &GeomSet, g: &GeomSet, ball: &BallSpec) -> Result<f64, MetricError> {
    d_xr_res(f, g, ball, ball.radius / 200.0)
}

/// Certifies the chained comparison: if `F` is `eps1`-close to `H` on
/// `B(x1, r1)` and `H` is `eps2`-close to `G` on `B(x2, r2)`, with
/// `B(z, rho) ⊆ B(x1, r1) ∩ B(x2, r2)`, then on `B(z, rho)` the measured
/// `d(F, G)` must not exceed `(eps1 r1 + eps2 r2) / rho` plus sampling slack.
///
/// Returns the measured value and the bound. Errors if the stated hypotheses
/// fail on the supplied data.
pub fn check_three_set(
    f: &GeomSet,
    h: &GeomSet,
    g: &GeomSet,
    ball1: &BallSpec,
    ball2: &BallSpec,
    eps1: f64,
    eps2: f64,
    inner: &BallSpec,
    slack: f64,
) -> Result<(f64, f64), MetricError> {
    let (z, rho) = (inner.center_vec(), inner.radius);
    for (b, name) in [(ball1, "first"), (ball2, "second")] {
        let gap = (z - b.center_vec()).norm() + rho;
        if gap > b.radius + 1e-12 {
            return Err(MetricError::HypothesisFailed(format!(
                "inner ball not contained in the {name} ball (reach {gap:.6} > {:.6})",
                b.radius
            )));
        }
    }
    let res1 = ball1.radius / 60.0;
    let d1 = d_xr_res(f, h, ball1, res1)?;
    if d1 > eps1 + slack {
        return Err(MetricError::HypothesisFailed(format!(
            "d on first ball is {d1:.6}, above the stated {eps1:.6}"
        )));
    }
    let d2 = d_xr_res(h, g, ball2, ball2.radius / 60.0)?;
    if d2 > eps2 + slack {
        return Err(MetricError::HypothesisFailed(format!(
            "d on second ball is {d2:.6}, above the stated {eps2:.6}"
        )));
    }
    let measured = d_xr_res(f, g, inner, rho / 60.0)?;
    let bound = (eps1 * ball1.radius + eps2 * ball2.radius) / rho;
    Ok((measured, bound))
}

/// Result of fitting a posed model to data on a ball.
#[derive(Debug, Clone)]
pub struct Registration {
    pub model: ConeSet,
    pub score: f64,
    /// Whether the pose search kept the spine through the ball center.
    pub constrained: bool,
    pub restarts_used: usize,
}

/// Search budget for `register_cone`.
#[derive(Debug, Clone, Copy)]
pub struct RegisterBudget {
    pub restarts: usize,
    pub simplex_evals: usize,
    /// Mesh resolution for the model side during the search, as a fraction of
    /// the ball radius.
    pub search_res_frac: f64,
}

impl Default for RegisterBudget {
    fn default() -> Self {
        Self { restarts: 8, simplex_evals: 70, search_res_frac: 1.0 / 10.0 }
    }
}

/// Pose parameters being optimized: a rotation (exponential coordinates
/// around a base rotation) and a translation offset.
#[derive(Clone)]
struct PoseSearch<'a> {
    class: &'a ConeSet,
    data: &'a PointCloud,
    ball: BallSpec,
    constrain: bool,
    res: f64,
    cloud_cap: usize,
    rot_params: usize,
    ambient_dim: usize,
}

impl<'a> PoseSearch<'a> {
    /// Builds the posed model for parameter vector `v` around `base_rot`.
    ///
    /// Layout: rotation exponential coordinates first, then a translation
    /// offset. Under the spine constraint the offset is projected so the
    /// model's lowest spine still passes through the ball center.
    fn pose(&self, base_rot: &Mat4, v: &[f64]) -> ConeSet {
        let rot = base_rot
            * geom::mat_exp(&geom::skew_from_params(self.ambient_dim, &v[..self.rot_params]));
        let x = self.ball.center_vec();
        let t = Vec4::new(
            v[self.rot_params],
            v[self.rot_params + 1],
            v.get(self.rot_params + 2).copied().unwrap_or(0.0),
            v.get(self.rot_params + 3).copied().unwrap_or(0.0),
        );
        let posed = self.class.clone().with_pose(rot, x + t);
        if self.constrain {
            // Pull the pose back so its lowest spine passes through x: shift
            // by the offset from x to the nearest spine point.
            let foot = posed.spine_nearest(posed.type_label, &x);
            let shifted = posed.translation + (x - foot);
            posed.with_translation(shifted)
        } else {
            posed
        }
    }

    fn score(&self, base_rot: &Mat4, v: &[f64]) -> f64 {
        let posed = self.pose(base_rot, v);
        score_anchored(&posed, self.data, &self.ball, self.res, self.cloud_cap)
            .unwrap_or(10.0)
    }

    fn param_count(&self) -> usize {
        self.rot_params + self.ambient_dim
    }
}

/// Localized two-sided score of a posed model against a cloud, with the
/// cloud side subsampled to at most `cloud_cap` points by stride. Cheaper
/// than `d_xr` and used inside search loops; the cap costs accuracy only on
/// very dense balls.
pub fn score_anchored(
    posed: &ConeSet,
    data: &PointCloud,
    ball: &BallSpec,
    res: f64,
    cloud_cap: usize,
) -> Result<f64, MetricError> {
    let x = ball.center_vec();
    let r = ball.radius;
    let ids = data.indices_in_ball(&x, r);
    let mesh = posed.densify_ball(&x, r, res);
    if ids.is_empty() || mesh.is_empty() {
        return Err(MetricError::EmptyIntersection { center: ball.center, radius: r });
    }
    let stride = (ids.len() / cloud_cap.max(1)).max(1);
    let mut sup_cloud = 0.0f64;
    for k in (0..ids.len()).step_by(stride) {
        let d = posed.distance(&data.points[ids[k]]);
        if d > sup_cloud {
            sup_cloud = d;
        }
    }
    let mesh_stride = (mesh.len() / (2 * cloud_cap.max(1))).max(1);
    let mut sup_model = 0.0f64;
    for k in (0..mesh.len()).step_by(mesh_stride) {
        let d = data.distance(&mesh[k]);
        if d > sup_model {
            sup_model = d;
        }
    }
    Ok(sup_cloud.max(sup_model) / r)
}

/// Coordinate-wise shrinking-simplex minimizer (Nelder-Mead with fixed
/// shrink-on-failure), deterministic for a given start.
fn simplex_minimize<F: FnMut(&[f64]) -> f64>(
    start: &[f64],
    step: f64,
    max_evals: usize,
    mut f: F,
) -> (Vec<f64>, f64) {
    let n = start.len();
    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(start.to_vec());
    for i in 0..n {
        let mut p = start.to_vec();
        p[i] += step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| f(p)).collect();
    let mut evals = vals.len();
    while evals < max_evals {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].partial_cmp(&vals[b]).unwrap());
        let (best, worst) = (order[0], order[n]);
        let second_worst = order[n - 1];
        let mut centroid = vec![0.0; n];
        for &i in order.iter().take(n) {
            for j in 0..n {
                centroid[j] += pts[i][j];
            }
        }
        for c in centroid.iter_mut() {
            *c /= n as f64;
        }
        let reflect: Vec<f64> =
            (0..n).map(|j| centroid[j] + (centroid[j] - pts[worst][j])).collect();
        let fr = f(&reflect);
        evals += 1;
        if fr < vals[best] {
            let expand: Vec<f64> =
                (0..n).map(|j| centroid[j] + 2.0 * (centroid[j] - pts[worst][j])).collect();
            let fe = f(&expand);
            evals += 1;
            if fe < fr {
                pts[worst] = expand;
                vals[worst] = fe;
            } else {
                pts[worst] = reflect;
                vals[worst] = fr;
            }
        } else if fr < vals[second_worst] {
            pts[worst] = reflect;
            vals[worst] = fr;
        } else {
            let contract: Vec<f64> =
                (0..n).map(|j| centroid[j] + 0.5 * (pts[worst][j] - centroid[j])).collect();
            let fc = f(&contract);
            evals += 1;
            if fc < vals[worst] {
                pts[worst] = contract;
                vals[worst] = fc;
            } else {
                for &i in order.iter().skip(1) {
                    for j in 0..n {
                        pts[i][j] = pts[best][j] + 0.5 * (pts[i][j] - pts[best][j]);
                    }
                    vals[i] = f(&pts[i]);
                    evals += n;
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=start.len() {
        if vals[i] < vals[best] {
            best = i;
        }
    }
    (pts[best].clone(), vals[best])
}

/// Fits a pose of `class` to `data` on `ball` by seeded multistart over
/// random rotations (plus small translations when unconstrained) followed by
/// simplex refinement. Deterministic for a given `(budget, seed)`; ties
/// resolve to the earliest restart.
pub fn register_cone(
    class: &ConeSet,
    data: &PointCloud,
    ball: &BallSpec,
    constrain: bool,
    budget: &RegisterBudget,
    seed: u64,
) -> Result<Registration, MetricError> {
    register_cone_with_starts(class, data, ball, constrain, &[], budget, seed)
}

/// `register_cone` with extra warm-start rotations tried before the random
/// restarts; used by the stratification atlas to reuse coarser-scale fits.
pub fn register_cone_with_starts(
    class: &ConeSet,
    data: &PointCloud,
    ball: &BallSpec,
    constrain: bool,
    warm: &[Mat4],
    budget: &RegisterBudget,
    seed: u64,
) -> Result<Registration, MetricError> {
    let ambient_dim = class.ambient_dim;
    let search = PoseSearch {
        class,
        data,
        ball: *ball,
        constrain,
        res: ball.radius * budget.search_res_frac,
        cloud_cap: 500,
        rot_params: geom::rotation_param_count(ambient_dim),
        ambient_dim,
    };
    let mut rng: SeededRng = geom::seeded_rng(seed);
    let identity = Mat4::identity();
    let mut best: Option<(f64, usize, Mat4, Vec<f64>)> = None;
    let total = warm.len() + budget.restarts.max(1);
    for restart in 0..total {
        let base_rot = if restart < warm.len() { warm[restart] } else { identity };
        let mut start = vec![0.0; search.param_count()];
        if restart >= warm.len() + 1 {
            // Uniform random orthogonal start: exponential coordinates drawn
            // isotropically with magnitude up to pi.
            let scale = std::f64::consts::PI;
            for s in start.iter_mut().take(search.rot_params) {
                *s = (geom::gaussian(&mut rng)).tanh() * scale;
            }
            if !constrain {
                for s in start.iter_mut().skip(search.rot_params) {
                    *s = geom::gaussian(&mut rng) * 0.1 * ball.radius;
                }
            }
        }
        let step = 0.35;
        let mut eval = |v: &[f64]| search.score(&base_rot, v);
        let (v, score) = simplex_minimize(&start, step, budget.simplex_evals, &mut eval);
        let better = match &best {
            None => true,
            Some((s, _, _, _)) => score < *s,
        };
        if better {
            best = Some((score, restart, base_rot, v));
        }
    }
    let (_, restart, base_rot, v) = best.unwrap();
    let posed = search.pose(&base_rot, &v);
    // Rescore at a finer resolution so reported scores are comparable across
    // budgets.
    let fine = d_xr_res(
        &GeomSet::Cone(&posed),
        &GeomSet::Cloud(data),
        ball,
        ball.radius / 40.0,
    )?;
    Ok(Registration { model: posed, score: fine, constrained: constrain, restarts_used: restart + 1 })
}

/// Smallest registration score over all catalog classes of type `m`, with the
/// spine constrained through the ball center.
pub fn a_m(
    catalog: &[ConeSet],
    m: usize,
    data: &PointCloud,
    ball: &BallSpec,
    budget: &RegisterBudget,
    seed: u64,
) -> Result<(f64, Registration), MetricError> {
    let ambient_dim = catalog.first().map(|c| c.ambient_dim).unwrap_or(0);
    let mut best: Option<(f64, Registration)> = None;
    for (ci, class) in catalog.iter().enumerate() {
        if class.type_label != m {
            continue;
        }
        let reg = register_cone(class, data, ball, true, budget, seed ^ (ci as u64).wrapping_mul(0x9E37_79B9))?;
        if best.as_ref().map_or(true, |(s, _)| reg.score < *s) {
            best = Some((reg.score, reg));
        }
    }
    best.ok_or(MetricError::NoTypeMModel(m, ambient_dim))
}

/// Measured separation and replaceability constants for a catalog, stored to
/// a JSON constants file and reloaded by later stages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GeometricConstants {
    /// Smallest measured distance between distinct-type models over the unit
    /// ball, under the best alignment the search can find.
    pub delta0: f64,
    /// Largest scale ratio at which a model of one type stays close to a
    /// blow-up candidate of a different type; bounds the replaceability gap.
    pub n0: f64,
    /// Smallest pairwise angle over the catalog.
    pub alpha: f64,
    /// Per-class relative clearance of the lowest spine from the next one,
    /// keyed by the class name.
    pub lambda: HashMap<String, f64>,
}

impl GeometricConstants {
    pub fn save(&self, path: &Path) -> Result<(), MetricError> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| MetricError::Constants(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, MetricError> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| MetricError::Constants(e.to_string()))
    }
}

/// Measures the type-separation constant for a catalog: for every pair of
/// classes with different types, the best cross-registration score over the
/// unit ball across `restarts` seeded restarts. The minimum over pairs is the
/// empirical separation.
pub fn measure_delta0(
    catalog: &[ConeSet],
    restarts: usize,
    seed: u64,
) -> Result<f64, MetricError> {
    let mut min_sep = f64::INFINITY;
    let ball = BallSpec::new(Vec4::zeros(), 1.0);
    let res = 1.0 / 30.0;
    for (i, a) in catalog.iter().enumerate() {
        // A meshed stand-in for samples of class a over the ball.
        let mesh = a.densify_ball(&Vec4::zeros(), 1.0, 1.0 / 45.0);
        let cloud = PointCloud::new(mesh, 1.0 / 45.0)?;
        for (j, b) in catalog.iter().enumerate() {
            if i == j || a.type_label == b.type_label {
                continue;
            }
            let budget = RegisterBudget {
                restarts,
                simplex_evals: 60,
                search_res_frac: res,
            };
            let reg = register_cone(
                b,
                &cloud,
                &ball,
                true,
                &budget,
                seed ^ ((i * 31 + j) as u64),
            )?;
            if reg.score < min_sep {
                min_sep = reg.score;
            }
        }
    }
    if !min_sep.is_finite() {
        return Err(MetricError::Constants(
            "catalog has no pair of classes with distinct types".into(),
        ));
    }
    Ok(min_sep)
}

/// Measures the replaceability margin: for each class and each anchored
/// blow-up candidate of a different type, how far down in scale a
/// registration of the wrong type stays competitive. Returns the largest
/// scale ratio at which every wrong-type score still exceeds half the
/// separation, as a conservative stand-in for the replacement threshold.
pub fn measure_n0(catalog: &[ConeSet], delta0: f64, seed: u64) -> Result<f64, MetricError> {
    let mut worst_ratio: f64 = 1.0;
    for (ci, class) in catalog.iter().enumerate() {
        let mesh = class.densify_ball(&Vec4::zeros(), 1.0, 1.0 / 60.0);
        let cloud = PointCloud::new(mesh, 1.0 / 60.0)?;
        for (cj, other) in catalog.iter().enumerate() {
            if other.type_label <= class.type_label {
                continue;
            }
            // Shrink the ball until the higher-type model fits the lower-type
            // data to within half the separation; past that scale the classes
            // are interchangeable on the data side.
            let mut ratio = 1.0f64;
            for k in 0..6 {
                let r = 2.0f64.powi(-k);
                let ball = BallSpec::new(Vec4::zeros(), r);
                let budget = RegisterBudget {
                    restarts: 6,
                    simplex_evals: 50,
                    search_res_frac: 1.0 / 25.0,
                };
                let reg = register_cone(
                    other,
                    &cloud,
                    &ball,
                    true,
                    &budget,
                    seed ^ ((ci * 17 + cj) as u64).wrapping_mul(0xA5A5),
                )?;
                if reg.score < 0.5 * delta0 {
                    ratio = r;
                    break;
                }
            }
            worst_ratio = worst_ratio.min(ratio);
        }
    }
    Ok(worst_ratio)
}

/// Measures per-class spine clearances and assembles the constants record.
pub fn measure_constants(
    catalog: &[ConeSet],
    names: &[String],
    restarts: usize,
    seed: u64,
) -> Result<GeometricConstants, MetricError> {
    let delta0 = measure_delta0(catalog, restarts, seed)?;
    let n0 = measure_n0(catalog, delta0, seed ^ 0x5EED)?;
    let alpha = crate::cone::alpha(catalog);
    let mut lambda = HashMap::new();
    for (cs, name) in catalog.iter().zip(names) {
        lambda.insert(name.clone(), cs.class_clearance());
    }
    Ok(GeometricConstants { delta0, n0, alpha, lambda })
}

/// Reads a point cloud from CSV (`x,y,z[,w]`, header optional) or binary
/// little-endian PLY with float or double vertex properties.
pub fn read_cloud(path: &Path, sampling_radius: f64) -> Result<PointCloud, MetricError> {
    let bytes = std::fs::read(path)?;
    if bytes.starts_with(b"ply") {
        return read_ply(&bytes, sampling_radius);
    }
    let text = String::from_utf8(bytes).map_err(|e| MetricError::Parse(e.to_string()))?;
    let mut points = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if lineno == 0 && fields[0].parse::<f64>().is_err() {
            continue;
        }
        if fields.len() < 3 {
            return Err(MetricError::Parse(format!(
                "line {}: expected at least 3 coordinates",
                lineno + 1
            )));
        }
        let mut coords = [0.0f64; 4];
        for (k, field) in fields.iter().take(4).enumerate() {
            coords[k] = field
                .parse::<f64>()
                .map_err(|e| MetricError::Parse(format!("line {}: {e}", lineno + 1)))?;
        }
        points.push(Vec4::new(coords[0], coords[1], coords[2], coords[3]));
    }
    PointCloud::new(points, sampling_radius)
}

fn read_ply(bytes: &[u8], sampling_radius: f64) -> Result<PointCloud, MetricError> {
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| MetricError::Parse("ply: no end_header".into()))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|e| MetricError::Parse(e.to_string()))?;
    let mut count = 0usize;
    let mut props: Vec<(usize, String)> = Vec::new();
    let mut in_vertex = false;
    let mut little_endian = false;
    for line in header.lines() {
        let words: Vec<&str> = line.split_whitespace().collect();
        match words.as_slice() {
            ["format", "binary_little_endian", _] => little_endian = true,
            ["format", f, _] => {
                return Err(MetricError::Parse(format!("ply: unsupported format {f}")))
            }
            ["element", "vertex", n] => {
                count = n.parse().map_err(|e| MetricError::Parse(format!("ply: {e}")))?;
                in_vertex = true;
            }
            ["element", ..] => in_vertex = false,
            ["property", ty, name] if in_vertex => {
                let size = match *ty {
                    "float" | "float32" => 4,
                    "double" | "float64" => 8,
                    other => {
                        return Err(MetricError::Parse(format!("ply: property type {other}")))
                    }
                };
                props.push((size, name.to_string()));
            }
            _ => {}
        }
    }
    if !little_endian {
        return Err(MetricError::Parse("ply: expected binary little endian".into()));
    }
    let mut body = &bytes[header_end + 10..];
    if body.starts_with(b"\r\n") {
        body = &body[2..];
    } else if body.starts_with(b"\n") {
        body = &body[1..];
    }
    let stride: usize = props.iter().map(|(s, _)| s).sum();
    if body.len() < stride * count {
        return Err(MetricError::Parse("ply: truncated body".into()));
    }
    let mut points = Vec::with_capacity(count);
    for i in 0..count {
        let rec = &body[i * stride..(i + 1) * stride];
        let mut coords = [0.0f64; 4];
        let mut off = 0usize;
        for (size, name) in &props {
            let v = if *size == 4 {
                f32::from_le_bytes(rec[off..off + 4].try_into().unwrap()) as f64
            } else {
                f64::from_le_bytes(rec[off..off + 8].try_into().unwrap())
            };
            match name.as_str() {
                "x" => coords[0] = v,
                "y" => coords[1] = v,
                "z" => coords[2] = v,
                "w" => coords[3] = v,
                _ => {}
            }
            off += size;
        }
        points.push(Vec4::new(coords[0], coords[1], coords[2], coords[3]));
    }
    PointCloud::new(points, sampling_radius)
}

/// Writes a cloud as `x,y,z[,w]` CSV; the fourth column is included when the
/// ambient dimension requires it.
pub fn write_cloud(path: &Path, cloud: &PointCloud, ambient_dim: usize) -> Result<(), MetricError> {
    let mut out = String::new();
    if ambient_dim >= 4 {
        out.push_str("x,y,z,w\n");
    } else {
        out.push_str("x,y,z\n");
    }
    for p in &cloud.points {
        if ambient_dim >= 4 {
            out.push_str(&format!("{},{},{},{}\n", p.x, p.y, p.z, p.w));
        } else {
            out.push_str(&format!("{},{},{}\n", p.x, p.y, p.z));
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Nearest spine anchor helper used by stratification and the flow: the
/// spine point of `cs` at `level` closest to `p`, with its branch.
pub fn nearest_branch_anchor(cs: &ConeSet, level: usize, p: &Vec4) -> (SpineBranch, Vec4) {
    cs.spine_nearest_branch(level, p)
}

/// Convenience for tests and the harness: mesh a catalog class over a ball
/// into a cloud at resolution `res`.
pub fn cone_cloud(cs: &ConeSet, radius: f64, res: f64) -> Result<PointCloud, MetricError> {
    let mesh = cs.densify_ball(&Vec4::zeros(), radius, res);
    PointCloud::new(mesh, res)
}

pub fn catalog_names(ambient_dim: usize) -> Vec<String> {
    vec![
        "t_set".into(),
        format!("y_times_{}", ambient_dim - 2),
        format!("plane_{}", ambient_dim - 1),
    ]
}

/// Parses a catalog class name into a posed reference model.
pub fn catalog_by_name(name: &str, ambient_dim: usize) -> Result<ConeSet, MetricError> {
    let kind = CatalogKind::parse(name).map_err(|e| MetricError::Parse(e.to_string()))?;
    crate::cone::catalog_reference(kind, ambient_dim)
        .map_err(|e| MetricError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::{catalog_reference, standard_catalog, CatalogKind};
    use crate::geom::vec_from;
    use rand::Rng;

    fn line_cloud(dir: Vec4, n: usize, h: f64) -> PointCloud {
        let mut pts = Vec::new();
        for i in 0..n {
            let t = -1.2 + 2.4 * (i as f64) / (n as f64 - 1.0);
            pts.push(dir * t);
        }
        PointCloud::new(pts, h).unwrap()
    }

    #[test]
    fn grid_index_matches_linear_scan() {
        let mut rng = geom::seeded_rng(11);
        let mut pts = Vec::new();
        for _ in 0..900 {
            pts.push(Vec4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.0,
            ));
        }
        let cloud = PointCloud::new(pts, 0.05).unwrap();
        for _ in 0..100 {
            let q = Vec4::new(
                rng.gen_range(-1.3..1.3),
                rng.gen_range(-1.3..1.3),
                rng.gen_range(-1.3..1.3),
                0.0,
            );
            let (i_fast, d_fast) = cloud.nearest(&q);
            let (i_lin, d_lin) = cloud.nearest_linear(&q);
            assert!((d_fast - d_lin).abs() < 1e-12, "{d_fast} vs {d_lin}");
            if i_fast != i_lin {
                assert!((d_fast - d_lin).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_sets_have_zero_distance() {
        let cloud = line_cloud(vec_from(&[1.0, 0.0, 0.0]), 200, 0.02);
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let d = d_xr(&GeomSet::Cloud(&cloud), &GeomSet::Cloud(&cloud), &ball).unwrap();
        assert_eq!(d, 0.0);
    }

    #[test]
    fn two_lines_at_angle_measure_sine() {
        let h = 0.004;
        let a = line_cloud(vec_from(&[1.0, 0.0, 0.0]), 600, h);
        for phi in [0.2f64, 0.5, 1.0] {
            let b = line_cloud(vec_from(&[phi.cos(), phi.sin(), 0.0]), 600, h);
            let ball = BallSpec::new(Vec4::zeros(), 1.0);
            let d = d_xr(&GeomSet::Cloud(&a), &GeomSet::Cloud(&b), &ball).unwrap();
            let expect = phi.sin();
            assert!(
                (d - expect).abs() <= 2.0 * h + 1e-9,
                "phi={phi}: measured {d}, expected {expect}"
            );
        }
    }

    #[test]
    fn parallel_planes_measure_offset() {
        let plane = catalog_reference(CatalogKind::Plane(2), 3).unwrap();
        let delta = 0.07;
        let shifted = plane.clone().with_translation(Vec4::new(0.0, 0.0, delta, 0.0));
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let d = d_xr_res(
            &GeomSet::Cone(&plane),
            &GeomSet::Cone(&shifted),
            &ball,
            1.0 / 80.0,
        )
        .unwrap();
        assert!((d - delta).abs() < 0.02, "measured {d}, expected {delta}");
    }

    #[test]
    fn d_xr_is_symmetric_and_scale_covariant() {
        let cat = standard_catalog(3);
        let t = &cat[0];
        let y = &cat[1];
        let ball = BallSpec::new(Vec4::new(0.1, 0.05, -0.02, 0.0), 0.8);
        let res = 0.8 / 50.0;
        let d1 = d_xr_res(&GeomSet::Cone(t), &GeomSet::Cone(y), &ball, res).unwrap();
        let d2 = d_xr_res(&GeomSet::Cone(y), &GeomSet::Cone(t), &ball, res).unwrap();
        assert_eq!(d1, d2);

        // Scaling both sets and the ball by s leaves the value unchanged, up
        // to the scaled mesh being the same lattice.
        for s in [0.5f64, 2.0] {
            let ts = t.scaled(s);
            let ys = y.scaled(s);
            let ball_s = BallSpec::new(ball.center_vec() * s, ball.radius * s);
            let ds = d_xr_res(&GeomSet::Cone(&ts), &GeomSet::Cone(&ys), &ball_s, res * s).unwrap();
            assert!(
                (ds - d1).abs() < 1e-12,
                "scale {s}: {ds} vs {d1}"
            );
        }
    }

    #[test]
    fn empty_intersection_is_an_error() {
        let cloud = line_cloud(vec_from(&[1.0, 0.0, 0.0]), 100, 0.05);
        let ball = BallSpec::new(Vec4::new(0.0, 5.0, 0.0, 0.0), 0.5);
        let err = d_xr(&GeomSet::Cloud(&cloud), &GeomSet::Cloud(&cloud), &ball);
        assert!(matches!(err, Err(MetricError::EmptyIntersection { .. })));
    }

    #[test]
    fn three_set_bound_holds_for_nearby_lines() {
        // F and G are small-angle tilts of the same line H; the chained
        // comparison on a half-radius inner ball must respect the bound.
        let h = 0.004;
        let hline = line_cloud(vec_from(&[1.0, 0.0, 0.0]), 500, h);
        let mut max_ratio = 0.0f64;
        for k in 0..100u64 {
            let mut rng = geom::seeded_rng(900 + k);
            let phi1: f64 = rng.gen_range(0.01..0.05);
            let phi2: f64 = rng.gen_range(0.01..0.05);
            let f = line_cloud(vec_from(&[phi1.cos(), phi1.sin(), 0.0]), 500, h);
            let g = line_cloud(vec_from(&[phi2.cos(), -phi2.sin(), 0.0]), 500, h);
            let ball = BallSpec::new(Vec4::zeros(), 1.0);
            let inner = BallSpec::new(Vec4::zeros(), 0.5);
            let eps1 = phi1.sin() + 2.0 * h;
            let eps2 = phi2.sin() + 2.0 * h;
            let (measured, bound) = check_three_set(
                &GeomSet::Cloud(&f),
                &GeomSet::Cloud(&hline),
                &GeomSet::Cloud(&g),
                &ball,
                &ball,
                eps1,
                eps2,
                &inner,
                2.0 * h,
            )
            .unwrap();
            let slack = 2.0 * h / inner.radius;
            assert!(
                measured <= bound + slack,
                "trial {k}: measured {measured} above bound {bound}"
            );
            max_ratio = max_ratio.max(measured / bound);
        }
        assert!(max_ratio <= 1.0 + 2.0 * h / 0.5);
    }

    #[test]
    fn three_set_rejects_bad_hypotheses() {
        let h = 0.01;
        let a = line_cloud(vec_from(&[1.0, 0.0, 0.0]), 200, h);
        let b = line_cloud(vec_from(&[0.0, 1.0, 0.0]), 200, h);
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let inner = BallSpec::new(Vec4::zeros(), 0.5);
        let err = check_three_set(
            &GeomSet::Cloud(&a),
            &GeomSet::Cloud(&b),
            &GeomSet::Cloud(&a),
            &ball,
            &ball,
            0.05,
            0.05,
            &inner,
            2.0 * h,
        );
        assert!(matches!(err, Err(MetricError::HypothesisFailed(_))));

        let outside = BallSpec::new(Vec4::new(0.9, 0.0, 0.0, 0.0), 0.5);
        let err2 = check_three_set(
            &GeomSet::Cloud(&a),
            &GeomSet::Cloud(&a),
            &GeomSet::Cloud(&a),
            &ball,
            &ball,
            0.05,
            0.05,
            &outside,
            2.0 * h,
        );
        assert!(matches!(err2, Err(MetricError::HypothesisFailed(_))));
    }

    #[test]
    fn self_registration_scores_near_zero() {
        let cat = standard_catalog(3);
        let y = &cat[1];
        let cloud = cone_cloud(y, 1.1, 0.02).unwrap();
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let budget = RegisterBudget { restarts: 4, simplex_evals: 60, search_res_frac: 1.0 / 15.0 };
        let reg = register_cone(y, &cloud, &ball, true, &budget, 7).unwrap();
        assert!(
            reg.score < 4.0 * cloud.sampling_radius,
            "self registration score {}",
            reg.score
        );
    }

    #[test]
    fn rotated_y_product_pose_is_recovered() {
        let cat = standard_catalog(3);
        let y = &cat[1];
        let mut rng = geom::seeded_rng(42);
        let rot = geom::random_rotation(3, &mut rng);
        let posed = y.clone().with_pose(rot, Vec4::zeros());
        let cloud = cone_cloud(&posed, 1.1, 0.02).unwrap();
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let budget = RegisterBudget { restarts: 10, simplex_evals: 90, search_res_frac: 1.0 / 15.0 };
        let reg = register_cone(y, &cloud, &ball, true, &budget, 3).unwrap();
        assert!(reg.score < 0.08, "score {}", reg.score);
        // The recovered model must match the sampled pose as a set: compare
        // spine direction (the product axis) up to sign.
        let axis_true = posed.dir_to_world(&Vec4::new(0.0, 0.0, 1.0, 0.0));
        let axis_found = reg.model.dir_to_world(&Vec4::new(0.0, 0.0, 1.0, 0.0));
        let cosang = axis_true.dot(&axis_found).abs().min(1.0);
        let err_deg = cosang.acos().to_degrees();
        assert!(err_deg < 2.0, "axis error {err_deg} degrees");
    }

    #[test]
    fn registration_is_deterministic() {
        let cat = standard_catalog(3);
        let t = &cat[0];
        let cloud = cone_cloud(t, 1.1, 0.03).unwrap();
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let budget = RegisterBudget { restarts: 3, simplex_evals: 40, search_res_frac: 1.0 / 10.0 };
        let r1 = register_cone(&cat[1], &cloud, &ball, true, &budget, 99).unwrap();
        let r2 = register_cone(&cat[1], &cloud, &ball, true, &budget, 99).unwrap();
        assert_eq!(r1.score, r2.score);
        assert_eq!(r1.model.translation, r2.model.translation);
        assert_eq!(r1.model.rotation, r2.model.rotation);
    }

    #[test]
    fn plane_data_rejects_lower_type_models_at_separation() {
        // Registering a T-set or a Y-product against plane samples cannot do
        // better than a fixed positive floor: the separation constant.
        let cat = standard_catalog(3);
        let plane_cloud = cone_cloud(&cat[2], 1.1, 0.02).unwrap();
        let ball = BallSpec::new(Vec4::zeros(), 1.0);
        let budget = RegisterBudget { restarts: 8, simplex_evals: 70, search_res_frac: 1.0 / 15.0 };
        for wrong in [&cat[0], &cat[1]] {
            let reg = register_cone(wrong, &plane_cloud, &ball, true, &budget, 5).unwrap();
            assert!(
                reg.score > 0.05,
                "type {} fit a plane with score {}",
                wrong.type_label,
                reg.score
            );
        }
    }

    #[test]
    fn measured_constants_are_positive_and_persist() {
        let cat = standard_catalog(3);
        let names = catalog_names(3);
        let consts = measure_constants(&cat, &names, 3, 21).unwrap();
        assert!(consts.delta0 > 0.0);
        assert!(consts.n0 > 0.0 && consts.n0 <= 1.0);
        assert!((consts.alpha - (-1.0f64 / 3.0).acos()).abs() < 1e-6);
        assert_eq!(consts.lambda.len(), 3);
        for (name, lam) in &consts.lambda {
            assert!(*lam >= 1.0 && *lam < 2.0, "{name}: {lam}");
        }
        let dir = std::env::temp_dir().join("stratcone_constants_test.json");
        consts.save(&dir).unwrap();
        let loaded = GeometricConstants::load(&dir).unwrap();
        assert_eq!(loaded.delta0, consts.delta0);
        let _ = std::fs::remove_file(&dir);
    }

    #[test]
    fn cloud_roundtrip_csv() {
        let cloud = line_cloud(vec_from(&[0.3, 0.4, 0.5]), 50, 0.05);
        let path = std::env::temp_dir().join("stratcone_cloud_test.csv");
        write_cloud(&path, &cloud, 3).unwrap();
        let back = read_cloud(&path, 0.05).unwrap();
        assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points.iter().zip(&back.points) {
            assert!((a - b).norm() < 1e-12);
        }
        let _ = std::fs::remove_file(&path);
    }
}
