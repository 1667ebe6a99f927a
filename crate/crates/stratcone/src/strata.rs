//! Stratification of a sampled set into layers by model type.
//!
//! For each sample point and each rung of a decreasing scale ladder, the
//! anchored flatness value of every catalog type is measured: the best
//! localized fit of a type-m model whose minimal spine passes through the
//! point. A point lands in the layer of the smallest type whose values stay
//! below the type threshold on enough consecutive rungs. Registrations are
//! shared across nearby points through a per-rung atlas of cells, so the
//! expensive pose searches run once per cell rather than once per point.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::ConeSet;
use crate::geom::{self, Mat4, Vec4};
use crate::metric::{
    register_cone_with_starts, score_anchored, BallSpec, MetricError, PointCloud, RegisterBudget,
};

#[derive(Debug, Error)]
pub enum StrataError {
    #[error("scale ladder too short: need at least {need} rungs, got {got}")]
    ScaleLadderTooShort { need: usize, got: usize },
    #[error("ladder must be strictly decreasing and positive")]
    BadLadder,
    #[error("threshold {tau} for type {m} does not clear the sampling slack {slack}")]
    TauBelowSlack { m: usize, tau: f64, slack: f64 },
    #[error("catalog has no class of type {0}")]
    MissingType(usize),
    #[error("labels refer to {points} points but the cloud has {cloud}")]
    LabelMismatch { points: usize, cloud: usize },
    #[error("decay hypothesis failed: {0}")]
    HypothesisFailed(String),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
}

/// Strictly decreasing measurement radii.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScaleLadder {
    pub rungs: Vec<f64>,
}

impl ScaleLadder {
    pub fn new(rungs: Vec<f64>) -> Result<Self, StrataError> {
        if rungs.len() < 3 {
            return Err(StrataError::ScaleLadderTooShort { need: 3, got: rungs.len() });
        }
        for w in rungs.windows(2) {
            if !(w[1] > 0.0 && w[1] < w[0]) {
                return Err(StrataError::BadLadder);
            }
        }
        if !(rungs[0] > 0.0) {
            return Err(StrataError::BadLadder);
        }
        Ok(Self { rungs })
    }

    pub fn geometric(top: f64, ratio: f64, count: usize) -> Result<Self, StrataError> {
        let mut rungs = Vec::with_capacity(count);
        let mut r = top;
        for _ in 0..count {
            rungs.push(r);
            r *= ratio;
        }
        Self::new(rungs)
    }

    /// Worst sampling slack over the ladder for a cloud of sampling radius h.
    pub fn slack(&self, h: f64) -> f64 {
        2.0 * h / self.rungs.last().copied().unwrap_or(1.0)
    }
}

#[derive(Debug, Clone)]
pub struct StratifyConfig {
    /// Per-type acceptance threshold, indexed by type label.
    pub tau: Vec<f64>,
    /// Number of consecutive rungs a type must hold to count as persistent.
    pub persistence: usize,
    /// Pose-search budget for each atlas cell.
    pub search: RegisterBudget,
    /// Model mesh resolution for anchored scores, as a fraction of the rung.
    pub score_res_frac: f64,
    /// Cloud-side subsample cap per anchored score.
    pub cloud_cap: usize,
    /// Atlas cell edge as a multiple of the rung.
    pub cell_factor: f64,
}

impl StratifyConfig {
    pub fn with_tau(tau: Vec<f64>) -> Self {
        Self {
            tau,
            persistence: 3,
            search: RegisterBudget { restarts: 5, simplex_evals: 60, search_res_frac: 1.0 / 8.0 },
            score_res_frac: 1.0 / 10.0,
            cloud_cap: 400,
            cell_factor: 1.0,
        }
    }
}

/// Default thresholds: each type sits at `max(10 * worst slack, delta0 / 2)`,
/// between the sampling noise floor and the measured type-separation floor.
pub fn default_tau(max_type: usize, h: f64, ladder: &ScaleLadder, delta0: f64) -> Vec<f64> {
    let t = (10.0 * ladder.slack(h)).max(0.5 * delta0);
    vec![t; max_type + 1]
}

/// Per-point layer assignment with the evidence behind it.
#[derive(Debug, Clone)]
pub struct StratumLabels {
    /// Layer per point; `None` when no type persisted.
    pub labels: Vec<Option<usize>>,
    pub persistence: usize,
    pub rungs: Vec<f64>,
    /// Type labels measured, ascending; column order of `a_values`.
    pub types: Vec<usize>,
    /// `a_values[point][rung * types.len() + type_column]`.
    pub a_values: Vec<Vec<f64>>,
}

impl StratumLabels {
    pub fn count(&self, m: usize) -> usize {
        self.labels.iter().filter(|l| **l == Some(m)).count()
    }

    pub fn unresolved(&self) -> usize {
        self.labels.iter().filter(|l| l.is_none()).count()
    }

    fn a_value(&self, point: usize, rung: usize, type_col: usize) -> f64 {
        self.a_values[point][rung * self.types.len() + type_col]
    }
}

/// The registration atlas: one fitted rotation per (class, rung, cell),
/// warm-started from the parent cell one rung up.
struct Atlas {
    rotations: HashMap<(usize, usize, [i32; 4]), Mat4>,
}

fn cell_key(p: &Vec4, edge: f64) -> [i32; 4] {
    let mut k = [0i32; 4];
    for i in 0..4 {
        k[i] = (p[i] / edge).floor() as i32;
    }
    k
}

fn mix_seed(seed: u64, a: u64, b: u64, key: [i32; 4]) -> u64 {
    let mut s = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    for k in key {
        s = s.rotate_left(13) ^ (k as i64 as u64).wrapping_mul(0x94D0_49BB_1331_11EB);
    }
    s
}

/// Assigns each sample to the layer of the smallest persistently fitting
/// type. Deterministic for a given seed.
pub fn stratify(
    cloud: &PointCloud,
    catalog: &[ConeSet],
    ladder: &ScaleLadder,
    config: &StratifyConfig,
    seed: u64,
) -> Result<StratumLabels, StrataError> {
    let need = config.persistence.max(3);
    if ladder.rungs.len() < need {
        return Err(StrataError::ScaleLadderTooShort { need, got: ladder.rungs.len() });
    }
    let mut types: Vec<usize> = catalog.iter().map(|c| c.type_label).collect();
    types.sort_unstable();
    types.dedup();
    for &m in &types {
        let tau = config.tau.get(m).copied().unwrap_or(0.0);
        for &r in &ladder.rungs {
            let slack = 2.0 * cloud.sampling_radius / r;
            if tau <= slack {
                return Err(StrataError::TauBelowSlack { m, tau, slack });
            }
        }
    }
    let n_pts = cloud.len();
    let n_types = types.len();
    let n_rungs = ladder.rungs.len();
    let mut a_values = vec![vec![f64::INFINITY; n_rungs * n_types]; n_pts];
    let mut atlas = Atlas { rotations: HashMap::new() };

    for (ri, &r) in ladder.rungs.iter().enumerate() {
        let edge = config.cell_factor * r;
        // Group points into cells once per rung.
        let mut cells: HashMap<[i32; 4], Vec<usize>> = HashMap::new();
        for (i, p) in cloud.points.iter().enumerate() {
            cells.entry(cell_key(p, edge)).or_default().push(i);
        }
        let mut keys: Vec<[i32; 4]> = cells.keys().copied().collect();
        keys.sort_unstable();
        for (ci, class) in catalog.iter().enumerate() {
            let type_col = types.iter().position(|&m| m == class.type_label).unwrap();
            for &key in &keys {
                let members = &cells[&key];
                let center = {
                    let mut c = geom::ZERO;
                    for k in 0..4 {
                        c[k] = (key[k] as f64 + 0.5) * edge;
                    }
                    c
                };
                let rep = *members
                    .iter()
                    .min_by(|&&a, &&b| {
                        let da = (cloud.points[a] - center).norm();
                        let db = (cloud.points[b] - center).norm();
                        da.partial_cmp(&db).unwrap().then(a.cmp(&b))
                    })
                    .unwrap();
                let ball = BallSpec::new(cloud.points[rep], r);
                let mut warm: Vec<Mat4> = Vec::new();
                if ri > 0 {
                    let parent_edge = config.cell_factor * ladder.rungs[ri - 1];
                    let parent = cell_key(&cloud.points[rep], parent_edge);
                    if let Some(rot) = atlas.rotations.get(&(ci, ri - 1, parent)) {
                        warm.push(*rot);
                    }
                }
                let reg = register_cone_with_starts(
                    class,
                    cloud,
                    &ball,
                    true,
                    &warm,
                    &config.search,
                    mix_seed(seed, ci as u64, ri as u64, key),
                );
                let rotation = match reg {
                    Ok(reg) => reg.model.rotation,
                    // A cell whose ball misses the cloud cannot happen (the
                    // rep is a cloud point); any other failure falls back to
                    // the warm start or identity.
                    Err(_) => warm.first().copied().unwrap_or_else(Mat4::identity),
                };
                atlas.rotations.insert((ci, ri, key), rotation);
                for &pt in members {
                    let posed = class
                        .clone()
                        .with_pose(rotation, cloud.points[pt]);
                    let ball_pt = BallSpec::new(cloud.points[pt], r);
                    let score = score_anchored(
                        &posed,
                        cloud,
                        &ball_pt,
                        r * config.score_res_frac,
                        config.cloud_cap,
                    )
                    .unwrap_or(f64::INFINITY);
                    let slot = &mut a_values[pt][ri * n_types + type_col];
                    if score < *slot {
                        *slot = score;
                    }
                }
            }
        }
    }

    // Persistence: smallest type whose values dip below its threshold on
    // `persistence` consecutive rungs anywhere on the ladder.
    let mut labels = vec![None; n_pts];
    for pt in 0..n_pts {
        'types: for (tc, &m) in types.iter().enumerate() {
            let tau = config.tau[m];
            let mut run = 0usize;
            for ri in 0..n_rungs {
                if a_values[pt][ri * n_types + tc] < tau {
                    run += 1;
                    if run >= config.persistence {
                        labels[pt] = Some(m);
                        break 'types;
                    }
                } else {
                    run = 0;
                }
            }
        }
    }

    Ok(StratumLabels {
        labels,
        persistence: config.persistence,
        rungs: ladder.rungs.clone(),
        types,
        a_values,
    })
}

/// Outcome of the structural validation of a labeling.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StructureReport {
    pub partition_ok: bool,
    pub unresolved: usize,
    /// Per layer below the top: worst distance from a point of that layer to
    /// the next layer up, and the allowed bound.
    pub closure: Vec<ClosureRow>,
    /// Per layer: measured spine flatness against the registered model and
    /// its bound.
    pub flatness: Vec<FlatnessRow>,
    pub pass: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosureRow {
    pub layer: usize,
    pub points: usize,
    pub worst_gap: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlatnessRow {
    pub layer: usize,
    pub probes: usize,
    pub worst: f64,
    pub bound: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct ValidateConfig {
    /// Closure bound as a multiple of the finest rung.
    pub closure_factor: f64,
    /// Flatness bound; pick comfortably above the type threshold but far
    /// below the separation floor.
    pub tau_flat: f64,
    /// Rung index used for the flatness balls.
    pub flat_rung: usize,
    pub probes_per_layer: usize,
    pub search: RegisterBudget,
}

impl Default for ValidateConfig {
    fn default() -> Self {
        Self {
            closure_factor: 2.0,
            tau_flat: 0.2,
            flat_rung: 1,
            probes_per_layer: 12,
            search: RegisterBudget { restarts: 5, simplex_evals: 60, search_res_frac: 1.0 / 10.0 },
        }
    }
}

/// Checks the three structural facts behind a labeling: the labels cover the
/// cloud, each layer accumulates onto the next one up, and each layer looks
/// like the spine of its own type at the validation scale.
pub fn validate_structure(
    cloud: &PointCloud,
    labels: &StratumLabels,
    catalog: &[ConeSet],
    config: &ValidateConfig,
    seed: u64,
) -> Result<StructureReport, StrataError> {
    if labels.labels.len() != cloud.len() {
        return Err(StrataError::LabelMismatch {
            points: labels.labels.len(),
            cloud: cloud.len(),
        });
    }
    let unresolved = labels.unresolved();
    let partition_ok = true; // one label slot per point by construction
    let r_min = *labels.rungs.last().unwrap();
    let max_type = labels.types.iter().copied().max().unwrap_or(0);

    let mut closure = Vec::new();
    for &m in &labels.types {
        if m >= max_type {
            continue;
        }
        let members: Vec<usize> = (0..cloud.len())
            .filter(|&i| labels.labels[i] == Some(m))
            .collect();
        if members.is_empty() {
            continue;
        }
        let bound = config.closure_factor * r_min;
        let mut worst: f64 = 0.0;
        for &i in &members {
            let p = cloud.points[i];
            let mut best = f64::INFINITY;
            for j in cloud.indices_in_ball(&p, bound) {
                if labels.labels[j].map_or(false, |l| l > m) {
                    let d = (cloud.points[j] - p).norm();
                    if d < best {
                        best = d;
                    }
                }
            }
            if best > worst {
                worst = best;
            }
        }
        closure.push(ClosureRow {
            layer: m,
            points: members.len(),
            worst_gap: worst,
            bound,
            ok: worst <= bound,
        });
    }

    let flat_rung = config.flat_rung.min(labels.rungs.len() - 1);
    let r_flat = labels.rungs[flat_rung];
    let mut flatness = Vec::new();
    for &m in &labels.types {
        let members: Vec<usize> = (0..cloud.len())
            .filter(|&i| labels.labels[i] == Some(m))
            .collect();
        if members.is_empty() {
            continue;
        }
        // Points of layers at or below m, the cumulative set the spine must
        // explain near each probe.
        let lower: Vec<Vec4> = (0..cloud.len())
            .filter(|&i| labels.labels[i].map_or(false, |l| l <= m))
            .map(|i| cloud.points[i])
            .collect();
        let lower_cloud = PointCloud::new(lower, cloud.sampling_radius)?;
        let stride = (members.len() / config.probes_per_layer.max(1)).max(1);
        let offset = (seed as usize).wrapping_mul(m + 1) % stride;
        let mut worst: f64 = 0.0;
        let mut probes = 0usize;
        for &i in members.iter().skip(offset).step_by(stride) {
            let x = cloud.points[i];
            let ball = BallSpec::new(x, 0.99 * r_flat);
            let mut best_for_point = f64::INFINITY;
            for (ci, class) in catalog.iter().enumerate() {
                if class.type_label != m {
                    continue;
                }
                let reg = register_cone_with_starts(
                    class,
                    cloud,
                    &ball,
                    true,
                    &[],
                    &config.search,
                    seed ^ mix_seed(17, ci as u64, i as u64, [0; 4]),
                )?;
                let d = spine_fit(&reg.model, &lower_cloud, &ball)?;
                if d < best_for_point {
                    best_for_point = d;
                }
            }
            if best_for_point.is_finite() {
                probes += 1;
                if best_for_point > worst {
                    worst = best_for_point;
                }
            }
        }
        flatness.push(FlatnessRow {
            layer: m,
            probes,
            worst,
            bound: config.tau_flat,
            ok: worst <= config.tau_flat,
        });
    }

    let pass = partition_ok
        && closure.iter().all(|c| c.ok)
        && flatness.iter().all(|f| f.ok);
    Ok(StructureReport { partition_ok, unresolved, closure, flatness, pass })
}

/// Two-sided fit between the minimal spine of a posed model and a cloud,
/// restricted to a ball and normalized by its radius.
fn spine_fit(model: &ConeSet, samples: &PointCloud, ball: &BallSpec) -> Result<f64, MetricError> {
    let x = ball.center_vec();
    let r = ball.radius;
    let level = model.type_label;
    let ids = samples.indices_in_ball(&x, r);
    if ids.is_empty() {
        return Err(MetricError::EmptyIntersection { center: ball.center, radius: r });
    }
    let mut sup_samples = 0.0f64;
    for &i in &ids {
        let d = model.spine_distance(level, &samples.points[i]);
        if d > sup_samples {
            sup_samples = d;
        }
    }
    let mut mesh = Vec::new();
    for b in model.branches(level) {
        model.densify_branch_ball(&b, &x, r, r / 30.0, &mut mesh);
    }
    let mut sup_spine = 0.0f64;
    for q in &mesh {
        let d = samples.distance(q);
        if d > sup_spine {
            sup_spine = d;
        }
    }
    Ok(sup_samples.max(sup_spine) / r)
}

/// Measured improvement of the anchored flatness value between two scales at
/// the same point, after checking the decay hypotheses: the point's own layer
/// value is small at the fine scale, and no lower layer intrudes on the
/// coarse ball.
pub struct DecayCheck {
    pub coarse: f64,
    pub fine: f64,
    pub bound: f64,
    pub ok: bool,
}

#[allow(clippy::too_many_arguments)]
pub fn check_decay(
    cloud: &PointCloud,
    labels: &StratumLabels,
    catalog: &[ConeSet],
    point: usize,
    r_fine: f64,
    scale_factor: f64,
    slack_term: f64,
    seed: u64,
) -> Result<DecayCheck, StrataError> {
    if labels.labels.len() != cloud.len() {
        return Err(StrataError::LabelMismatch {
            points: labels.labels.len(),
            cloud: cloud.len(),
        });
    }
    let m = labels.labels[point]
        .ok_or_else(|| StrataError::HypothesisFailed("point is unresolved".into()))?;
    let x = cloud.points[point];
    let r_coarse = r_fine * scale_factor;
    for j in cloud.indices_in_ball(&x, r_coarse) {
        if labels.labels[j].map_or(false, |l| l < m) {
            return Err(StrataError::HypothesisFailed(format!(
                "lower-layer point {j} inside the exclusion ball of radius {r_coarse}"
            )));
        }
    }
    let budget = RegisterBudget { restarts: 6, simplex_evals: 70, search_res_frac: 1.0 / 12.0 };
    let value_at = |r: f64, salt: u64| -> Result<f64, StrataError> {
        let ball = BallSpec::new(x, r);
        let mut best = f64::INFINITY;
        for (ci, class) in catalog.iter().enumerate() {
            if class.type_label != m {
                continue;
            }
            let reg = register_cone_with_starts(
                class,
                cloud,
                &ball,
                true,
                &[],
                &budget,
                seed ^ salt ^ (ci as u64) << 8,
            )?;
            if reg.score < best {
                best = reg.score;
            }
        }
        if best.is_finite() {
            Ok(best)
        } else {
            Err(StrataError::MissingType(m))
        }
    };
    let fine = value_at(r_fine, 1)?;
    let coarse = value_at(r_coarse, 2)?;
    let bound = 0.5 * fine + slack_term;
    Ok(DecayCheck { coarse, fine, bound, ok: coarse <= bound })
}

/// Writes labels as CSV: point index, layer (-1 when unresolved), the
/// persistence requirement, then one flatness column per (rung, type).
pub fn write_labels(path: &Path, labels: &StratumLabels) -> Result<(), StrataError> {
    // Labels built outside the stratifier carry no evidence table; the
    // file then simply omits those columns.
    let with_a = labels.a_values.len() == labels.labels.len() && !labels.rungs.is_empty();
    let mut out = String::from("point_index,label,persistence");
    if with_a {
        for (ri, r) in labels.rungs.iter().enumerate() {
            for m in &labels.types {
                out.push_str(&format!(",a_type{m}_rung{ri}"));
            }
            let _ = r;
        }
    }
    out.push('\n');
    for (i, l) in labels.labels.iter().enumerate() {
        let lab = l.map(|m| m as i64).unwrap_or(-1);
        out.push_str(&format!("{i},{lab},{}", labels.persistence));
        if with_a {
            for ri in 0..labels.rungs.len() {
                for tc in 0..labels.types.len() {
                    out.push_str(&format!(",{:.6}", labels.a_value(i, ri, tc)));
                }
            }
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_labels(path: &Path, rungs: Vec<f64>, types: Vec<usize>) -> Result<StratumLabels, StrataError> {
    let text = std::fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut a_values = Vec::new();
    let mut persistence = 3usize;
    for (ln, line) in text.lines().enumerate() {
        if ln == 0 {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(StrataError::Parse(format!("line {}: too few fields", ln + 1)));
        }
        let lab: i64 = fields[1]
            .parse()
            .map_err(|e| StrataError::Parse(format!("line {}: {e}", ln + 1)))?;
        labels.push(if lab < 0 { None } else { Some(lab as usize) });
        persistence = fields[2]
            .parse()
            .map_err(|e| StrataError::Parse(format!("line {}: {e}", ln + 1)))?;
        let mut row = Vec::new();
        for f in &fields[3..] {
            row.push(
                f.parse::<f64>()
                    .map_err(|e| StrataError::Parse(format!("line {}: {e}", ln + 1)))?,
            );
        }
        a_values.push(row);
    }
    Ok(StratumLabels { labels, persistence, rungs, types, a_values })
}

/// Summary written next to the labels file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StratifyReport {
    pub points: usize,
    pub counts: HashMap<usize, usize>,
    pub unresolved: usize,
    pub tau: Vec<f64>,
    pub rungs: Vec<f64>,
    pub persistence: usize,
    pub seed: u64,
}

pub fn report(labels: &StratumLabels, tau: &[f64], seed: u64) -> StratifyReport {
    let mut counts = HashMap::new();
    for l in labels.labels.iter().flatten() {
        *counts.entry(*l).or_insert(0) += 1;
    }
    StratifyReport {
        points: labels.labels.len(),
        counts,
        unresolved: labels.unresolved(),
        tau: tau.to_vec(),
        rungs: labels.rungs.clone(),
        persistence: labels.persistence,
        seed,
    }
}
