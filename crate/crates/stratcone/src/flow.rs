//! Iterated straightening flow.
//!
//! The parameterization of a sampled set by its global model is built one
//! dimension at a time, lowest stratum first, and within a dimension one
//! scale at a time. Each step blends the per-ball straightening maps of a
//! cover through a partition of unity; the moving cloud is the mesh of the
//! model's skeleton at the current dimension, and what the lower dimensions
//! built stays frozen. Replay of the recorded steps evaluates the map at
//! any on-model point, with skeleton points delegated to the stack of their
//! own dimension so lower-dimensional images are never touched by later
//! steps. Monitors record step displacement, image defect, model fit, and
//! weight normalization at every step, and their margins stay in the run
//! report.

use std::collections::HashMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::align::{angle_schedule, build_psi, BallContext, ContractNote, Psi};
use crate::cone::{self, ConeSet};
use crate::cover::{build_cover, Cover, CoverBall, CoverError, PartitionOfUnity, RadiusSchedule};
use crate::geom::{self, Mat4, Vec4};
use crate::metric::{
    register_cone_with_starts, BallSpec, MetricError, PointCloud, RegisterBudget,
};
use crate::strata::StratumLabels;

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("no stratum labels present, nothing to flow")]
    NoStrata,
    #[error("top stratum {expected} missing from the labels")]
    TopStratumMissing { expected: usize },
    #[error("point is {dist:.3e} from the domain set (allowed {tol:.3e})")]
    OutOfDomain { dist: f64, tol: f64 },
    #[error("pair separations fill only {bins} dyadic bins, need at least 3")]
    InsufficientRange { bins: usize },
    #[error("monitor failed hard: {0}")]
    MonitorHardFail(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Cover(#[from] CoverError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialize: {0}")]
    Serialize(String),
}

/// Knobs of one flow run. The radius schedule is shared with the cover; the
/// ball floor keeps steps from chasing scales below the sampling radius.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Scale steps per dimension.
    pub k_max: usize,
    pub schedule: RadiusSchedule,
    /// Search budget for lower-stratum ball registrations.
    pub search: RegisterBudget,
    /// Fail the run on the first monitor breach instead of recording it.
    pub hard_monitors: bool,
    /// Balls below this multiple of the sampling radius are dropped.
    pub min_ball_radius_h: f64,
    /// Evaluation accepts points within this multiple of the sampling
    /// radius of the model set.
    pub domain_tol_h: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            k_max: 4,
            // Wider than the cover's own default: desk-scale sampling needs
            // top radii large against the sampling radius, and the blend
            // trust tube needs them large against the data's displacement.
            schedule: RadiusSchedule { c: 1.0, gamma: 0.85 },
            search: RegisterBudget { restarts: 3, simplex_evals: 50, search_res_frac: 1.0 / 8.0 },
            hard_monitors: false,
            min_ball_radius_h: 4.0,
            domain_tol_h: 3.0,
        }
    }
}

/// Working radius of the flow domain at dimension `m`, step `k`. Shrinks a
/// little with both so every step acts strictly inside what the previous
/// one controlled.
pub fn domain_radius(m: usize, k: usize) -> f64 {
    1.96 - 0.002 * m as f64 - 0.004 * (1.0 - 0.5f64.powi(k as i32))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonitorEntry {
    pub dim: usize,
    pub step: usize,
    pub name: String,
    pub value: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MonitorReport {
    pub entries: Vec<MonitorEntry>,
}

impl MonitorReport {
    fn record(&mut self, hard: bool, e: MonitorEntry) -> Result<(), FlowError> {
        let breach = !e.ok;
        let msg = format!(
            "dim {} step {} {}: {:.4e} against {:.4e}",
            e.dim, e.step, e.name, e.value, e.bound
        );
        self.entries.push(e);
        if hard && breach {
            return Err(FlowError::MonitorHardFail(msg));
        }
        Ok(())
    }

    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.ok)
    }

    pub fn breaches(&self) -> Vec<&MonitorEntry> {
        self.entries.iter().filter(|e| !e.ok).collect()
    }

    /// One JSON object per line, in recording order.
    pub fn write_jsonl(&self, path: &Path) -> Result<(), FlowError> {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(
                &serde_json::to_string(e).map_err(|err| FlowError::Serialize(err.to_string()))?,
            );
            out.push('\n');
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// One ball's contribution to a step: its straightening map and how well
/// its model fit the data.
pub struct BallMap {
    pub stratum: usize,
    pub score: f64,
    psi: Psi,
}

/// One recorded step: the partition of unity over the step's balls and the
/// per-ball maps, parallel by index.
pub struct FlowStep {
    pub dim: usize,
    pub step: usize,
    pub pou: PartitionOfUnity,
    pub maps: Vec<BallMap>,
}

impl FlowStep {
    pub fn apply(&self, x: &Vec4) -> Vec4 {
        let weights = self.pou.weights(x);
        if weights.is_empty() {
            return *x;
        }
        let bg = self.pou.background(x);
        let mut acc = x * bg;
        for (i, w) in weights {
            acc += self.maps[i].psi.apply(x) * w;
        }
        acc
    }
}

/// The finished flow of one dimension: its steps, the model-side mesh of
/// the skeleton at that dimension, and the mesh's final image.
pub struct DimFlow {
    pub dim: usize,
    pub steps: Vec<FlowStep>,
    pub source: PointCloud,
    pub image: PointCloud,
}

/// The whole recorded construction, replayable at any on-model point.
pub struct MapStack {
    pub z: ConeSet,
    pub set_dim: usize,
    pub h: f64,
    pub domain_tol: f64,
    pub dims: Vec<DimFlow>,
}

impl MapStack {
    /// Smallest spine level of the model within the domain tolerance of
    /// `x`, or `None` when `x` is off the model set.
    pub fn z_stratum(&self, x: &Vec4) -> Option<usize> {
        for level in self.z.type_label..=self.set_dim {
            if self.z.spine_distance(level, x) <= self.domain_tol {
                return Some(level);
            }
        }
        None
    }

    /// Replays every recorded step of dimensions up to `top_dim`, in order.
    pub fn replay_through(&self, top_dim: usize, x: &Vec4) -> Vec4 {
        let mut p = *x;
        for df in &self.dims {
            if df.dim > top_dim {
                break;
            }
            for st in &df.steps {
                p = st.apply(&p);
            }
        }
        p
    }

    /// The parameterization at an on-model point: steps of dimensions above
    /// the point's own stratum never touch it, so skeleton restrictions of
    /// the higher maps agree with the lower maps identically.
    pub fn evaluate(&self, x: &Vec4) -> Result<Vec4, FlowError> {
        let s = self.z_stratum(x).ok_or_else(|| FlowError::OutOfDomain {
            dist: self.z.distance(x),
            tol: self.domain_tol,
        })?;
        Ok(self.replay_through(s, x))
    }
}

pub fn evaluate_f(stack: &MapStack, x: &Vec4) -> Result<Vec4, FlowError> {
    stack.evaluate(x)
}

/// Everything a run produces besides the map itself.
pub struct FlowOutcome {
    pub stack: MapStack,
    pub monitors: MonitorReport,
    pub notes: Vec<ContractNote>,
    /// (dimension, step, active balls).
    pub ball_counts: Vec<(usize, usize, usize)>,
}

/// Mesh of the model's skeleton at one level over a centered ball.
fn skeleton_mesh(z: &ConeSet, level: usize, radius: f64, res: f64) -> Vec<Vec4> {
    if level >= z.dim() {
        return z.densify_ball(&geom::ZERO, radius, res);
    }
    let mut out = Vec::new();
    for b in z.branches(level) {
        z.densify_branch_ball(&b, &geom::ZERO, radius, res, &mut out);
    }
    out
}

fn replay_all(dims: &[DimFlow], x: &Vec4) -> Vec4 {
    let mut p = *x;
    for df in dims {
        for st in &df.steps {
            p = st.apply(&p);
        }
    }
    p
}

/// Mean and principal directions of a local sample, strongest first.
fn principal_plane(pts: &[Vec4], dim: usize) -> Option<(Vec4, Vec<Vec4>)> {
    if pts.len() < dim + 1 {
        return None;
    }
    let mut mean = geom::ZERO;
    for p in pts {
        mean += p;
    }
    mean /= pts.len() as f64;
    let mut cov = Mat4::zeros();
    for p in pts {
        let d = p - mean;
        cov += d * d.transpose();
    }
    cov /= pts.len() as f64;
    let eig = cov.symmetric_eigen();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    if eig.eigenvalues[order[dim - 1]] <= 1e-18 {
        return None;
    }
    let basis: Vec<Vec4> =
        order.iter().take(dim).map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    Some((mean, basis))
}

/// Completes an orthonormal direction list to a full frame, as columns.
fn rotation_from_basis(basis: &[Vec4]) -> Mat4 {
    let mut cols: Vec<Vec4> = basis.to_vec();
    for i in 0..4 {
        if cols.len() == 4 {
            break;
        }
        let mut w = Mat4::identity().column(i).into_owned();
        for b in &cols {
            w -= b * b.dot(&w);
        }
        if w.norm() > 1e-9 {
            cols.push(w / w.norm());
        }
    }
    let mut r = Mat4::zeros();
    for (j, c) in cols.iter().enumerate() {
        r.set_column(j, c);
    }
    r
}

/// Local model of one cover ball: top-stratum balls take their principal
/// plane, lower-stratum balls register their stratum's catalog class with a
/// warm start from the previous scale at the same center.
fn ball_model(
    e: &PointCloud,
    ball: &CoverBall,
    catalog: &[ConeSet],
    set_dim: usize,
    budget: &RegisterBudget,
    warm: &mut HashMap<(usize, usize), Mat4>,
    seed: u64,
) -> Result<(ConeSet, f64), FlowError> {
    if ball.stratum == set_dim {
        let pts = e.points_in_ball(&ball.center, 2.0 * ball.radius);
        if let Some((mean, basis)) = principal_plane(&pts, set_dim) {
            if let Some(class) = catalog.iter().find(|c| c.type_label == set_dim) {
                let model =
                    class.clone().with_pose(rotation_from_basis(&basis), mean);
                let mut sup = 0.0f64;
                for p in &pts {
                    sup = sup.max(model.distance(p));
                }
                return Ok((model, sup / ball.radius));
            }
        }
    }
    let spec = BallSpec::new(ball.center, 1.5 * ball.radius);
    let key = (ball.stratum, ball.center_idx);
    let warm_rots: Vec<Mat4> = warm.get(&key).copied().into_iter().collect();
    let mut best: Option<(ConeSet, f64)> = None;
    for (ci, class) in catalog.iter().enumerate() {
        if class.type_label != ball.stratum {
            continue;
        }
        let reg = register_cone_with_starts(
            class,
            e,
            &spec,
            true,
            &warm_rots,
            budget,
            seed ^ (ball.center_idx as u64).wrapping_mul(0x9E37) ^ (ci as u64) << 40,
        )?;
        if best.as_ref().map_or(true, |(_, s)| reg.score < *s) {
            best = Some((reg.model, reg.score));
        }
    }
    let ambient = catalog.first().map_or(4, |c| c.ambient_dim);
    let (model, score) =
        best.ok_or(FlowError::Metric(MetricError::NoTypeMModel(ball.stratum, ambient)))?;
    warm.insert(key, model.rotation);
    Ok((model, score))
}

/// Runs the whole construction: dimensions ascending over the strata the
/// labels contain, scales descending within each dimension.
pub fn run_flow(
    z: &ConeSet,
    e: &PointCloud,
    labels: &StratumLabels,
    catalog: &[ConeSet],
    config: &FlowConfig,
    seed: u64,
) -> Result<FlowOutcome, FlowError> {
    let h = e.sampling_radius;
    let n = z.dim();
    let mut present: Vec<usize> = labels.labels.iter().flatten().copied().collect();
    present.sort_unstable();
    present.dedup();
    if present.is_empty() {
        return Err(FlowError::NoStrata);
    }
    if *present.last().unwrap() != n {
        return Err(FlowError::TopStratumMissing { expected: n });
    }
    let alpha = cone::alpha(catalog);
    let schedule = angle_schedule(alpha, n + 1);
    let mut monitors = MonitorReport::default();
    let mut notes: Vec<ContractNote> = Vec::new();
    let mut ball_counts = Vec::new();
    let mut covers: Vec<Cover> = Vec::with_capacity(config.k_max);
    for k in 0..config.k_max {
        covers.push(build_cover(e, labels, k, &config.schedule)?);
    }
    let mut warm: HashMap<(usize, usize), Mat4> = HashMap::new();
    // Outermost reach of the samples. The image stays near the data only
    // where data was taken, so defect probes must not wander past this.
    let extent = e.points.iter().map(|p| p.norm()).fold(0.0f64, f64::max);
    let mut dims: Vec<DimFlow> = Vec::new();
    for &m in &present {
        let source = PointCloud::new(skeleton_mesh(z, m, 2.05, h), h)?;
        // Lower dimensions already moved the skeleton; start from there.
        let mut moving: Vec<Vec4> =
            source.points.iter().map(|p| replay_all(&dims, p)).collect();
        let mut steps: Vec<FlowStep> = Vec::new();
        let mut prev_disp: Option<f64> = None;
        let mut decay_ratios: Vec<f64> = Vec::new();
        for k in 0..config.k_max {
            let rho = domain_radius(m, k);
            let min_r = config.min_ball_radius_h * h;
            let kept: Vec<CoverBall> = covers[k]
                .balls
                .iter()
                .filter(|b| {
                    b.stratum <= m && b.center.norm() <= rho && b.radius >= min_r
                })
                .cloned()
                .collect();
            if kept.is_empty() {
                break;
            }
            let mut maps = Vec::with_capacity(kept.len());
            let mut worst_fit = 0.0f64;
            for ball in &kept {
                let (model, score) =
                    ball_model(e, ball, catalog, n, &config.search, &mut warm, seed)?;
                worst_fit = worst_fit.max(score);
                let ctx = BallContext {
                    center: ball.center,
                    radius: ball.radius,
                    stratum: ball.stratum,
                    model: &model,
                    schedule: &schedule,
                    h,
                };
                let mut gammas: Vec<Option<&PointCloud>> = vec![None; n + 1];
                for df in &dims {
                    gammas[df.dim] = Some(&df.image);
                }
                let psi = build_psi(&ctx, m, &gammas, &mut notes)
                    .expect("balls were filtered to strata at most the flowing dimension");
                maps.push(BallMap { stratum: ball.stratum, score, psi });
            }
            ball_counts.push((m, k, kept.len()));
            let r_top = kept.iter().map(|b| b.radius).fold(0.0f64, f64::max);
            let pou = PartitionOfUnity::new(Cover {
                step: k,
                schedule: config.schedule,
                balls: kept,
                suppressed: Vec::new(),
            });
            let fs = FlowStep { dim: m, step: k, pou, maps };
            let mut disp_sup = 0.0f64;
            for p in moving.iter_mut() {
                let q = fs.apply(p);
                disp_sup = disp_sup.max((q - *p).norm());
                *p = q;
            }
            monitors.record(
                config.hard_monitors,
                MonitorEntry {
                    dim: m,
                    step: k,
                    name: "step_displacement".into(),
                    value: disp_sup,
                    bound: 1.5 * r_top,
                    ok: disp_sup <= 1.5 * r_top,
                },
            )?;
            let stride = (moving.len() / 400).max(1);
            let reach = (rho - r_top).min(extent - r_top);
            let mut defect = 0.0f64;
            for i in (0..moving.len()).step_by(stride) {
                if moving[i].norm() <= reach {
                    defect = defect.max(e.distance(&moving[i]));
                }
            }
            monitors.record(
                config.hard_monitors,
                MonitorEntry {
                    dim: m,
                    step: k,
                    name: "image_defect".into(),
                    value: defect,
                    bound: r_top + 3.0 * h,
                    ok: defect <= r_top + 3.0 * h,
                },
            )?;
            monitors.record(
                config.hard_monitors,
                MonitorEntry {
                    dim: m,
                    step: k,
                    name: "model_fit".into(),
                    value: worst_fit,
                    bound: 0.45,
                    ok: worst_fit <= 0.45,
                },
            )?;
            let wstride = (moving.len() / 50).max(1);
            let mut weight_err = 0.0f64;
            for i in (0..moving.len()).step_by(wstride) {
                let total: f64 = fs
                    .pou
                    .weights(&moving[i])
                    .iter()
                    .map(|(_, w)| w)
                    .sum::<f64>()
                    + fs.pou.background(&moving[i]);
                weight_err = weight_err.max((total - 1.0).abs());
            }
            monitors.record(
                config.hard_monitors,
                MonitorEntry {
                    dim: m,
                    step: k,
                    name: "weight_sum".into(),
                    value: weight_err,
                    bound: 1e-9,
                    ok: weight_err <= 1e-9,
                },
            )?;
            if let Some(prev) = prev_disp {
                if prev > 1e-12 {
                    decay_ratios.push(disp_sup / prev);
                }
            }
            prev_disp = Some(disp_sup);
            steps.push(fs);
        }
        if !decay_ratios.is_empty() {
            let mean = decay_ratios.iter().sum::<f64>() / decay_ratios.len() as f64;
            monitors.record(
                config.hard_monitors,
                MonitorEntry {
                    dim: m,
                    step: config.k_max,
                    name: "displacement_decay".into(),
                    value: mean,
                    bound: 0.7,
                    ok: mean <= 0.7,
                },
            )?;
        }
        let image = PointCloud::new(moving, h)?;
        dims.push(DimFlow { dim: m, steps, source, image });
    }
    let stack = MapStack {
        z: z.clone(),
        set_dim: n,
        h,
        domain_tol: config.domain_tol_h * h,
        dims,
    };
    Ok(FlowOutcome { stack, monitors, notes, ball_counts })
}

/// End-to-end check of the constructed map against the data: small
/// displacement, two-sided coverage, and sphere probes that keep the image
/// of the middle sphere inside the stated annulus.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerifyReport {
    pub displacement_sup: f64,
    pub displacement_tol: f64,
    pub data_to_image_sup: f64,
    pub image_to_data_sup: f64,
    pub coverage_tol: f64,
    pub sphere_low: f64,
    pub sphere_high: f64,
    pub sphere_probes: usize,
    pub pass: bool,
}

pub fn verify_theorem(
    stack: &MapStack,
    e: &PointCloud,
    tol_disp: f64,
    tol_cov: f64,
) -> Result<VerifyReport, FlowError> {
    const R_INNER: f64 = 1.9;
    const R_MID: f64 = 1.95;
    const R_OUTER: f64 = 2.0;
    let top = stack.dims.last().ok_or(FlowError::NoStrata)?;
    let mut disp_sup = 0.0f64;
    let mut image_to_data = 0.0f64;
    let mut img_pts: Vec<Vec4> = Vec::new();
    for df in &stack.dims {
        for (src, img) in df.source.points.iter().zip(&df.image.points) {
            if src.norm() <= R_MID {
                disp_sup = disp_sup.max((img - src).norm());
                image_to_data = image_to_data.max(e.distance(img));
                img_pts.push(*img);
            }
        }
    }
    let image_cloud = PointCloud::new(img_pts, stack.h)?;
    let mut data_to_image = 0.0f64;
    for p in &e.points {
        if p.norm() <= R_INNER {
            data_to_image = data_to_image.max(image_cloud.distance(p));
        }
    }
    let mut sphere_low = f64::INFINITY;
    let mut sphere_high = 0.0f64;
    let mut sphere_probes = 0usize;
    // The probe shell is a fixed hair around the middle radius, well inside
    // the annulus margin, so the identity map trivially conforms.
    for (src, img) in top.source.points.iter().zip(&top.image.points) {
        if (src.norm() - R_MID).abs() <= 0.005 {
            sphere_probes += 1;
            sphere_low = sphere_low.min(img.norm());
            sphere_high = sphere_high.max(img.norm());
        }
    }
    let sphere_ok = sphere_probes > 0 && sphere_low >= R_INNER && sphere_high <= R_OUTER;
    let pass = disp_sup <= tol_disp
        && data_to_image <= tol_cov
        && image_to_data <= tol_cov
        && sphere_ok;
    Ok(VerifyReport {
        displacement_sup: disp_sup,
        displacement_tol: tol_disp,
        data_to_image_sup: data_to_image,
        image_to_data_sup: image_to_data,
        coverage_tol: tol_cov,
        sphere_low,
        sphere_high,
        sphere_probes,
        pass,
    })
}

fn least_squares_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        num += (x - mx) * (y - my);
        den += (x - mx) * (x - mx);
    }
    if den <= 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Distortion exponents of the map from random domain pairs. Separations
/// bin dyadically from ten sampling radii up to the domain diameter; the
/// regression slope of the per-bin lower envelope and upper envelope of
/// log image distance over log separation bracket the distortion.
pub fn holder_exponent(
    stack: &MapStack,
    n_pairs: usize,
    seed: u64,
) -> Result<(f64, f64), FlowError> {
    let mut zs: Vec<(Vec4, Vec4)> = Vec::new();
    for df in &stack.dims {
        for (s, i) in df.source.points.iter().zip(&df.image.points) {
            if s.norm() <= 1.9 {
                zs.push((*s, *i));
            }
        }
    }
    if zs.len() < 2 {
        return Err(FlowError::InsufficientRange { bins: 0 });
    }
    let d_lo = 10.0 * stack.h;
    let n_bins = ((3.8 / d_lo).log2().floor() as isize).max(1) as usize;
    let mut bin_cnt = vec![0usize; n_bins];
    // Each envelope point keeps the separation of the pair that attains it,
    // so an undistorted map scores slope one no matter how the bin widths
    // come out. Regressing bin means against bin extremes does not: the
    // clamped top bin is wider than an octave and tilts both slopes.
    let mut bin_min = vec![(f64::INFINITY, 0.0f64); n_bins];
    let mut bin_max = vec![(f64::NEG_INFINITY, 0.0f64); n_bins];
    let mut rng = geom::seeded_rng(seed);
    let mut made = 0usize;
    let mut attempts = 0usize;
    while made < n_pairs && attempts < 40 * n_pairs {
        attempts += 1;
        let a = rng.gen_range(0..zs.len());
        let b = rng.gen_range(0..zs.len());
        let d = (zs[a].0 - zs[b].0).norm();
        if d < d_lo {
            continue;
        }
        let bin = (((d / d_lo).log2().floor() as isize).max(0) as usize).min(n_bins - 1);
        let df = (zs[a].1 - zs[b].1).norm().max(1e-12);
        bin_cnt[bin] += 1;
        if df.ln() < bin_min[bin].0 {
            bin_min[bin] = (df.ln(), d.ln());
        }
        if df.ln() > bin_max[bin].0 {
            bin_max[bin] = (df.ln(), d.ln());
        }
        made += 1;
    }
    let filled: Vec<usize> = (0..n_bins).filter(|&i| bin_cnt[i] > 0).collect();
    if filled.len() < 3 {
        return Err(FlowError::InsufficientRange { bins: filled.len() });
    }
    let lo_x: Vec<f64> = filled.iter().map(|&i| bin_min[i].1).collect();
    let lower: Vec<f64> = filled.iter().map(|&i| bin_min[i].0).collect();
    let hi_x: Vec<f64> = filled.iter().map(|&i| bin_max[i].1).collect();
    let upper: Vec<f64> = filled.iter().map(|&i| bin_max[i].0).collect();
    let s_low = least_squares_slope(&lo_x, &lower);
    let s_high = least_squares_slope(&hi_x, &upper);
    Ok((s_low.min(s_high), s_low.max(s_high)))
}

/// Smallest stretch of the map along the model's tangent directions at a
/// generic point, by central differences.
pub fn min_tangential_stretch(
    stack: &MapStack,
    x: &Vec4,
    fd_step: f64,
) -> Result<f64, FlowError> {
    let (branch, _) = stack.z.spine_nearest_branch(stack.set_dim, x);
    let frame = stack.z.branch_frame(&branch);
    let k = frame.basis.len();
    let mut cols: Vec<Vec4> = Vec::with_capacity(k);
    for b in &frame.basis {
        let fp = stack.evaluate(&(x + b * fd_step))?;
        let fm = stack.evaluate(&(x - b * fd_step))?;
        cols.push((fp - fm) / (2.0 * fd_step));
    }
    let j = nalgebra::DMatrix::from_fn(4, k, |r, c| cols[c][r]);
    let sv = j.svd(false, false).singular_values;
    Ok(sv.iter().fold(f64::INFINITY, |a, &b| a.min(b)))
}

/// Reproducible summary of one run. The timestamp lives in its own field so
/// byte comparisons can splice it out.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub seed: u64,
    pub k_max: usize,
    pub schedule_c: f64,
    pub schedule_gamma: f64,
    pub dims: Vec<usize>,
    pub ball_counts: Vec<(usize, usize, usize)>,
    pub monitors_ok: bool,
    pub breaches: usize,
    pub notes: usize,
    pub timestamp: String,
}

impl FlowOutcome {
    pub fn manifest(&self, seed: u64, config: &FlowConfig, timestamp: String) -> RunManifest {
        RunManifest {
            seed,
            k_max: config.k_max,
            schedule_c: config.schedule.c,
            schedule_gamma: config.schedule.gamma,
            dims: self.stack.dims.iter().map(|d| d.dim).collect(),
            ball_counts: self.ball_counts.clone(),
            monitors_ok: self.monitors.all_ok(),
            breaches: self.monitors.breaches().len(),
            notes: self.notes.len(),
            timestamp,
        }
    }
}

pub fn write_manifest(path: &Path, manifest: &RunManifest) -> Result<(), FlowError> {
    let text = serde_json::to_string_pretty(manifest)
        .map_err(|e| FlowError::Serialize(e.to_string()))?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Wireframe-free spine export: the vertices of a level's branch meshes,
/// one `v` record each, viewable as a point set.
pub fn export_spine_obj(
    path: &Path,
    cs: &ConeSet,
    level: usize,
    radius: f64,
    res: f64,
) -> Result<(), FlowError> {
    let mut pts: Vec<Vec4> = Vec::new();
    if level >= cs.dim() {
        pts = cs.densify_ball(&cs.translation, radius, res);
    } else {
        for b in cs.branches(level) {
            cs.densify_branch_ball(&b, &cs.translation, radius, res, &mut pts);
        }
    }
    let mut out = format!("# spine level {level}, {} vertices\n", pts.len());
    for p in &pts {
        out.push_str(&format!("v {} {} {}\n", p.x, p.y, p.z));
    }
    std::fs::write(path, out)?;
    Ok(())
}
