//! Spine alignment maps.
//!
//! A ball of the cover owns a posed model and a stack of reference samples,
//! one cloud per spine level. The alignment map for the ball straightens
//! those samples onto the model's branch planes, one stratum at a time, from
//! the highest stratum down. Each stage acts only inside a wedge around its
//! spine level, selected by scale-free distance ratios against the next
//! lower level; the wedges for all stages are indexed by binary words, and
//! the processing order walks the word lattice leaf-first. Blends are quintic
//! and protected near the lower spine, so lower strata are never disturbed
//! by a higher stage.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cone::{ConeSet, PlaneFrame, SpineBranch};
use crate::geom::{self, solve_small, GridIndex, Vec4};
use crate::metric::PointCloud;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("word must start at its own stratum with an active bit")]
    BadWord,
    #[error("graph fit missing for stratum {stratum} branch {branch}")]
    GraphFitMissing { stratum: usize, branch: usize },
    #[error("graph domain has a coverage gap of {gap} (allowed {allowed})")]
    CoverageGap { gap: f64, allowed: f64 },
    #[error("graph slope {got} exceeds the bound {bound}")]
    LipschitzExceeded { got: f64, bound: f64 },
    #[error("not enough samples to fit a graph ({0})")]
    TooFewSamples(usize),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Binary word over consecutive strata. The first bit sits at `start` and is
/// always active; a word reaching the top stratum of its lattice must end
/// active as well.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Word {
    pub start: usize,
    pub bits: Vec<bool>,
}

impl Word {
    pub fn new(start: usize, bits: Vec<bool>) -> Result<Self, AlignError> {
        if bits.first() != Some(&true) {
            return Err(AlignError::BadWord);
        }
        Ok(Self { start, bits })
    }

    /// Stratum of the last bit.
    pub fn terminal(&self) -> usize {
        self.start + self.bits.len() - 1
    }

    pub fn terminal_active(&self) -> bool {
        *self.bits.last().unwrap()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn binary_value(&self) -> u64 {
        self.bits.iter().fold(0u64, |acc, &b| (acc << 1) | b as u64)
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            write!(f, "{}", if b { '1' } else { '0' })?;
        }
        Ok(())
    }
}

/// All words over strata `t..=u` in processing order: shorter words first,
/// descending binary value within a length. Every word starts active at `t`;
/// words whose last bit lands on `u` must be active there.
pub fn word_lattice(t: usize, u: usize) -> Vec<Word> {
    let mut out = Vec::new();
    let full = u - t + 1;
    for len in 1..=full {
        let mut level: Vec<Word> = Vec::new();
        // Enumerate bit patterns with the leading bit fixed.
        let tail = len - 1;
        for pattern in (0..(1u64 << tail)).rev() {
            let mut bits = vec![true];
            for k in (0..tail).rev() {
                bits.push((pattern >> k) & 1 == 1);
            }
            let w = Word { start: t, bits };
            if w.terminal() == u && !w.terminal_active() {
                continue;
            }
            level.push(w);
        }
        level.sort_by(|a, b| b.binary_value().cmp(&a.binary_value()));
        out.extend(level);
    }
    out
}

/// The chained stage angles: the first wide angle is a fixed fraction of the
/// catalog angle, each stage's tight angle is a fixed fraction of its wide
/// one, and the next stage restarts from the previous tight angle.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AngleSchedule {
    pub alpha: f64,
    /// Wide angle per stage, 1-indexed by `stage - 1`.
    pub wide: Vec<f64>,
    /// Intermediate angle per stage.
    pub mid: Vec<f64>,
    /// Tight angle per stage.
    pub tight: Vec<f64>,
}

pub fn angle_schedule(alpha: f64, stages: usize) -> AngleSchedule {
    let mut wide = Vec::with_capacity(stages);
    let mut mid = Vec::with_capacity(stages);
    let mut tight = Vec::with_capacity(stages);
    let mut w = alpha / 100.0;
    for _ in 0..stages {
        wide.push(w);
        mid.push(w / 10.0);
        tight.push(w / 1000.0);
        w = alpha * (w / 1000.0) / 10.0;
    }
    AngleSchedule { alpha, wide, mid, tight }
}

impl AngleSchedule {
    /// Wide sine threshold for a stratum inside a ball of stratum `t`.
    pub fn sin_wide(&self, t: usize, stratum: usize) -> f64 {
        self.wide[stratum - t].sin()
    }

    pub fn sin_mid(&self, t: usize, stratum: usize) -> f64 {
        self.mid[stratum - t].sin()
    }

    pub fn sin_tight(&self, t: usize, stratum: usize) -> f64 {
        self.tight[stratum - t].sin()
    }
}

/// A wedge region of a ball: the points whose ratio pattern matches a word,
/// near one chosen branch of the word's terminal stratum. `lambda` scales
/// every sine threshold; the working scales are one half, one, and nine.
#[derive(Debug, Clone)]
pub struct RegionSpec {
    pub word: Word,
    pub branch: usize,
    pub lambda: f64,
}

/// Scale-free closeness ratio of `p` to spine level `stratum`, measured
/// against the next lower level, or against the ball radius at the bottom.
pub fn level_ratio(
    model: &ConeSet,
    radius: f64,
    stratum: usize,
    p: &Vec4,
) -> f64 {
    let num = model.spine_distance(stratum, p);
    // A distance at float-dust scale means the point sits on the stratum.
    // Without the floor, a point on two nested levels at once scores dust
    // over dust and loses its limit ratio of zero.
    let floor = 1e-12 * (radius + p.norm());
    if num <= floor {
        return 0.0;
    }
    let denom = if stratum > model.type_label {
        model.spine_distance(stratum - 1, p)
    } else {
        radius
    };
    if denom <= 0.0 {
        0.0
    } else {
        num / denom
    }
}

/// Membership test for a wedge region. Active bits demand the ratio below
/// `lambda` times the wide sine; inactive bits demand it above the wide sine
/// divided by `lambda`, so shrinking lambda opens a gap between complementary
/// regions and growing it makes them overlap.
pub fn region_contains(
    model: &ConeSet,
    center: &Vec4,
    radius: f64,
    schedule: &AngleSchedule,
    region: &RegionSpec,
    p: &Vec4,
) -> bool {
    if (p - center).norm() > 5.0 * radius {
        return false;
    }
    let t = model.type_label;
    for (k, &bit) in region.word.bits.iter().enumerate() {
        let stratum = region.word.start + k;
        if stratum == t {
            // The leading bit is structural: every point of the ball carries
            // it.
            continue;
        }
        let ratio = level_ratio(model, radius, stratum, p);
        let a = schedule.sin_wide(t, stratum);
        if bit {
            if ratio >= region.lambda * a {
                return false;
            }
        } else if ratio < a / region.lambda {
            return false;
        }
    }
    // The branch choice must be the nearest branch of the terminal stratum.
    let s = region.word.terminal();
    let branches = model.branches(s);
    if region.branch >= branches.len() {
        return false;
    }
    let mut best = (0usize, f64::INFINITY);
    for (bi, b) in branches.iter().enumerate() {
        let d = model.project_branch(b, p).1;
        if d < best.1 {
            best = (bi, d);
        }
    }
    best.0 == region.branch
}

/// Local type collapse: inside the widest version of a wedge, the distance
/// to the whole terminal spine level is realized by the chosen branch alone.
/// Returns the worst absolute gap over the probes.
pub fn type_collapse_gap(
    model: &ConeSet,
    center: &Vec4,
    radius: f64,
    schedule: &AngleSchedule,
    word: &Word,
    branch: usize,
    probes: &[Vec4],
) -> f64 {
    let region = RegionSpec { word: word.clone(), branch, lambda: 9.0 };
    let s = word.terminal();
    let branches = model.branches(s);
    let mut worst: f64 = 0.0;
    for p in probes {
        if !region_contains(model, center, radius, schedule, &region, p) {
            continue;
        }
        let full = model.spine_distance(s, p);
        let own = model.project_branch(&branches[branch], p).1;
        worst = worst.max((own - full).abs());
    }
    worst
}

/// Moving least squares fit of point samples as a graph over a branch plane.
/// Offsets are fit affinely under a quintic kernel of the given radius.
pub struct GraphFit {
    pub frame: PlaneFrame,
    /// Foot coordinates of each sample in the frame.
    feet: Vec<Vec<f64>>,
    /// World-space offsets of each sample from its foot.
    offsets: Vec<Vec4>,
    pub kernel: f64,
    /// Largest affine slope seen while fitting over the sample feet.
    pub lipschitz: f64,
    index: GridIndex,
}

fn foot_to_vec4(u: &[f64]) -> Vec4 {
    let mut v = geom::ZERO;
    for (i, &x) in u.iter().take(4).enumerate() {
        v[i] = x;
    }
    v
}

impl GraphFit {
    /// Offset of the fitted graph over foot coordinates `u`, with the local
    /// slope magnitude. `None` when no sample is inside the kernel there.
    pub fn offset_at(&self, u: &[f64]) -> Option<(Vec4, f64)> {
        let dim = self.frame.dim();
        let uq = foot_to_vec4(u);
        let mut ids: Vec<usize> = Vec::new();
        self.index.for_each_in_ball(&uq, self.kernel, |i| ids.push(i as usize));
        if ids.is_empty() {
            return None;
        }
        if dim == 0 {
            // Zero-dimensional plane: the graph is the weighted mean offset.
            let mut acc = geom::ZERO;
            let mut total = 0.0;
            for &i in &ids {
                let w = 1.0;
                acc += self.offsets[i] * w;
                total += w;
            }
            return Some((acc / total, 0.0));
        }
        // Weighted affine fit: shared Gram matrix, one right-hand side per
        // offset component.
        let cols = dim + 1;
        let mut a = [[0.0f64; 4]; 4];
        let mut rhs = [[0.0f64; 4]; 4];
        let mut total_w = 0.0;
        for &i in &ids {
            let du: Vec<f64> = (0..dim).map(|k| self.feet[i][k] - u[k]).collect();
            let d = du.iter().map(|x| x * x).sum::<f64>().sqrt();
            let w = geom::plateau(d, 0.5 * self.kernel, self.kernel);
            if w <= 0.0 {
                continue;
            }
            total_w += w;
            let mut phi = [0.0f64; 4];
            phi[0] = 1.0;
            for k in 0..dim {
                phi[k + 1] = du[k];
            }
            for r in 0..cols {
                for c in 0..cols {
                    a[r][c] += w * phi[r] * phi[c];
                }
                for d4 in 0..4 {
                    rhs[d4][r] += w * phi[r] * self.offsets[i][d4];
                }
            }
        }
        if total_w <= 1e-12 {
            return None;
        }
        // Fall back to a constant fit when the affine system degenerates.
        let mut value = geom::ZERO;
        let mut slope = 0.0f64;
        let mut solved = true;
        for d4 in 0..4 {
            match solve_small(cols, &a, &rhs[d4]) {
                Some(z) => {
                    value[d4] = z[0];
                    for k in 0..dim {
                        slope = slope.max(z[k + 1].abs());
                    }
                }
                None => {
                    solved = false;
                    break;
                }
            }
        }
        if !solved {
            let mut acc = geom::ZERO;
            let mut tw = 0.0;
            for &i in &ids {
                let du: Vec<f64> = (0..dim).map(|k| self.feet[i][k] - u[k]).collect();
                let d = du.iter().map(|x| x * x).sum::<f64>().sqrt();
                let w = geom::plateau(d, 0.5 * self.kernel, self.kernel);
                acc += self.offsets[i] * w;
                tw += w;
            }
            if tw <= 1e-12 {
                return None;
            }
            return Some((acc / tw, 0.0));
        }
        Some((value, slope))
    }

    /// Graph offset for a world point: evaluated at the point's foot.
    pub fn offset_for(&self, x: &Vec4) -> Option<Vec4> {
        let u = self.frame.coords(x);
        self.offset_at(&u).map(|(v, _)| v)
    }

    /// Worst reproduction error over the fitting samples.
    pub fn reproduction_error(&self) -> f64 {
        let mut worst = 0.0f64;
        for (u, v) in self.feet.iter().zip(&self.offsets) {
            if let Some((fit, _)) = self.offset_at(u) {
                worst = worst.max((fit - v).norm());
            }
        }
        worst
    }

    /// Largest distance from a probe foot to the nearest sample foot; the
    /// coverage gap of the fit over those probes.
    pub fn coverage_gap(&self, probe_feet: &[Vec<f64>]) -> f64 {
        let mut worst = 0.0f64;
        for u in probe_feet {
            let uq = foot_to_vec4(u);
            let mut best = f64::INFINITY;
            self.index.for_each_in_ball(&uq, 4.0 * self.kernel, |i| {
                let d = (foot_to_vec4(&self.feet[i as usize]) - uq).norm();
                if d < best {
                    best = d;
                }
            });
            worst = worst.max(best);
        }
        worst
    }
}

/// Fits samples as a graph over the frame. The kernel radius should be a
/// small multiple of the sampling radius; four is the working choice.
pub fn fit_graph(
    samples: &[Vec4],
    frame: &PlaneFrame,
    kernel: f64,
) -> Result<GraphFit, AlignError> {
    if samples.is_empty() {
        return Err(AlignError::TooFewSamples(0));
    }
    let mut feet = Vec::with_capacity(samples.len());
    let mut offsets = Vec::with_capacity(samples.len());
    let mut foot_pts = Vec::with_capacity(samples.len());
    for s in samples {
        let u = frame.coords(s);
        let foot = frame.lift(&u);
        offsets.push(s - foot);
        foot_pts.push(foot_to_vec4(&u));
        feet.push(u);
    }
    let index = GridIndex::build(&foot_pts, kernel.max(1e-9));
    let mut fit = GraphFit { frame: frame.clone(), feet, offsets, kernel, lipschitz: 0.0, index };
    // Sweep the sample feet once for the slope estimate.
    let stride = (fit.feet.len() / 200).max(1);
    let mut lip = 0.0f64;
    for i in (0..fit.feet.len()).step_by(stride) {
        let u = fit.feet[i].clone();
        if let Some((_, slope)) = fit.offset_at(&u) {
            lip = lip.max(slope);
        }
    }
    fit.lipschitz = lip;
    Ok(fit)
}

/// `fit_graph` with the coverage and slope preconditions enforced: the probe
/// feet must sit within `3h` of a sample foot, and the slope must stay below
/// `lip_bound`.
pub fn fit_graph_covering(
    samples: &[Vec4],
    frame: &PlaneFrame,
    h: f64,
    probe_feet: &[Vec<f64>],
    lip_bound: f64,
) -> Result<GraphFit, AlignError> {
    let fit = fit_graph(samples, frame, 4.0 * h)?;
    let gap = fit.coverage_gap(probe_feet);
    if gap > 3.0 * h {
        return Err(AlignError::CoverageGap { gap, allowed: 3.0 * h });
    }
    if fit.lipschitz > lip_bound {
        return Err(AlignError::LipschitzExceeded { got: fit.lipschitz, bound: lip_bound });
    }
    Ok(fit)
}

/// A recorded contract slip, kept as data rather than raised as an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContractNote {
    pub what: String,
    pub measured: f64,
    pub bound: f64,
}

/// One straightening stage of an alignment map: all branches of one spine
/// level, each with its plane and its fitted graph of the reference samples.
pub struct Stage {
    pub stratum: usize,
    pub branches: Vec<(SpineBranch, PlaneFrame, Option<GraphFit>)>,
    /// Wide sine threshold anchoring the blend bracket.
    pub sin_wide: f64,
    /// Protection width near the next lower spine, in units of the radius.
    pub protect: f64,
}

/// The alignment map of one ball: stages from the highest stratum down.
pub struct Eta {
    pub center: Vec4,
    pub radius: f64,
    pub model: ConeSet,
    pub stages: Vec<Stage>,
}

impl Eta {
    /// Blend factor of a stage at `x`: full strength inside the unit-lambda
    /// wedge, fading out toward the nine-fold one, cut off at the ball edge,
    /// and vanishing near the protected lower spine.
    fn blend(&self, stage: &Stage, x: &Vec4) -> f64 {
        let ratio = level_ratio(&self.model, self.radius, stage.stratum, x);
        let a = stage.sin_wide;
        let mu = geom::plateau(ratio, a, 9.0 * a);
        if mu <= 0.0 {
            return 0.0;
        }
        let edge = geom::plateau((x - self.center).norm(), 4.5 * self.radius, 5.0 * self.radius);
        if edge <= 0.0 {
            return 0.0;
        }
        let nu = if stage.stratum > self.model.type_label {
            let dlow = self.model.spine_distance(stage.stratum - 1, x);
            let w = stage.protect * self.radius;
            1.0 - geom::plateau(dlow, w, 2.0 * w)
        } else {
            1.0
        };
        mu * edge * nu
    }

    /// Applies the stages top stratum first. Each stage pulls the fitted
    /// graph of its level onto the nearest branch plane.
    pub fn apply(&self, x: &Vec4) -> Vec4 {
        let mut p = *x;
        for stage in &self.stages {
            let m = self.blend(stage, &p);
            if m <= 0.0 {
                continue;
            }
            // Nearest branch of this stage owns the point.
            let mut best: Option<(usize, f64)> = None;
            for (bi, (branch, _, _)) in stage.branches.iter().enumerate() {
                let d = self.model.project_branch(branch, &p).1;
                if best.map_or(true, |(_, bd)| d < bd) {
                    best = Some((bi, d));
                }
            }
            let Some((bi, _)) = best else { continue };
            let (_, frame, fit) = &stage.branches[bi];
            let Some(fit) = fit else { continue };
            let u = frame.coords(&p);
            if let Some((v, _)) = fit.offset_at(&u) {
                p -= v * m;
            }
        }
        p
    }
}

/// How a ball straightens: the context the builders need.
pub struct BallContext<'a> {
    pub center: Vec4,
    pub radius: f64,
    pub stratum: usize,
    /// Posed model of the ball, minimal spine through the center.
    pub model: &'a ConeSet,
    pub schedule: &'a AngleSchedule,
    /// Sampling radius of the reference clouds.
    pub h: f64,
}

/// Builds the alignment map over strata `ctx.stratum ..= top`. The reference
/// clouds come indexed by absolute stratum; a missing or too-thin cloud for
/// a branch leaves that branch as the identity and records a note.
pub fn build_eta(
    ctx: &BallContext,
    top: usize,
    gammas: &[Option<&PointCloud>],
    notes: &mut Vec<ContractNote>,
) -> Eta {
    let t = ctx.stratum;
    let mut stages = Vec::new();
    if top >= t {
        for s in (t..=top).rev() {
            stages.push(build_stage(ctx, s, cloud_for(gammas, s), notes));
        }
    }
    Eta { center: ctx.center, radius: ctx.radius, model: ctx.model.clone(), stages }
}

fn cloud_for<'a>(gammas: &[Option<&'a PointCloud>], s: usize) -> Option<&'a PointCloud> {
    gammas.get(s).copied().flatten()
}

fn build_stage(
    ctx: &BallContext,
    s: usize,
    cloud: Option<&PointCloud>,
    notes: &mut Vec<ContractNote>,
) -> Stage {
    let t = ctx.stratum;
    let model = ctx.model;
    let mut branches = Vec::new();
    for branch in model.branches(s) {
        let frame = model.branch_frame(&branch);
        let fit = match cloud {
            None => None,
            Some(cloud) => {
                // Samples near the ball that this branch owns.
                let mut mine = Vec::new();
                for idx in cloud.indices_in_ball(&ctx.center, 5.0 * ctx.radius) {
                    let p = cloud.points[idx];
                    let (_, d) = model.project_branch(&branch, &p);
                    let mut nearest = true;
                    for other in model.branches(s) {
                        if other.face != branch.face
                            && model.project_branch(&other, &p).1 < d
                        {
                            nearest = false;
                            break;
                        }
                    }
                    if nearest {
                        mine.push(p);
                    }
                }
                if mine.len() < frame.dim() + 1 {
                    notes.push(ContractNote {
                        what: format!(
                            "stratum {s} branch {:?}: {} samples, graph skipped",
                            branch.face,
                            mine.len()
                        ),
                        measured: mine.len() as f64,
                        bound: (frame.dim() + 1) as f64,
                    });
                    None
                } else {
                    match fit_graph(&mine, &frame, 4.0 * ctx.h) {
                        Ok(fit) => {
                            let repro = fit.reproduction_error();
                            if repro > 2.0 * ctx.h {
                                notes.push(ContractNote {
                                    what: format!("stratum {s} graph reproduction"),
                                    measured: repro,
                                    bound: 2.0 * ctx.h,
                                });
                            }
                            Some(fit)
                        }
                        Err(e) => {
                            notes.push(ContractNote {
                                what: format!("stratum {s} graph fit failed: {e}"),
                                measured: f64::NAN,
                                bound: 0.0,
                            });
                            None
                        }
                    }
                }
            }
        };
        branches.push((branch, frame, fit));
    }
    // Working thresholds pin to the first-stage angles. The chained deeper
    // angles fall below any affordable sampling slack within one step, so
    // wedges cut with them would be empty at lab resolution; the chain
    // itself stays available through the schedule.
    Stage {
        stratum: s,
        branches,
        sin_wide: ctx.schedule.sin_wide(t, t),
        protect: ctx.schedule.sin_mid(t, t),
    }
}

/// The per-ball flow map: the alignment stages up to `flow_dim - 1`, then a
/// terminal stage at `flow_dim` whose deep region projects hard onto the
/// branch plane.
pub struct Psi {
    pub eta: Eta,
    pub terminal: Option<Stage>,
}

impl Psi {
    /// Alignment stages first, then the terminal projection: the nearest
    /// branch plane of the flowing level receives the point, at full
    /// strength deep inside the wedge.
    pub fn apply(&self, x: &Vec4) -> Vec4 {
        let mut p = self.eta.apply(x);
        if let Some(stage) = &self.terminal {
            let m = self.eta.blend(stage, &p);
            if m > 0.0 {
                let mut best: Option<(usize, f64)> = None;
                for (bi, (branch, _, _)) in stage.branches.iter().enumerate() {
                    let d = self.eta.model.project_branch(branch, &p).1;
                    if best.map_or(true, |(_, bd)| d < bd) {
                        best = Some((bi, d));
                    }
                }
                if let Some((bi, _)) = best {
                    let frame = &stage.branches[bi].1;
                    let foot = frame.lift(&frame.coords(&p));
                    p += (foot - p) * m;
                }
            }
        }
        p
    }
}

/// Builds the flow map of one ball for flowing dimension `flow_dim`: balls
/// of higher strata do not act at all, own-stratum balls only flatten their
/// own level, and lower-stratum balls straighten their skeleton first.
pub fn build_psi(
    ctx: &BallContext,
    flow_dim: usize,
    gammas: &[Option<&PointCloud>],
    notes: &mut Vec<ContractNote>,
) -> Option<Psi> {
    if ctx.stratum > flow_dim {
        return None;
    }
    let top = flow_dim.saturating_sub(1);
    let eta = if flow_dim > ctx.stratum {
        build_eta(ctx, top, gammas, notes)
    } else {
        Eta {
            center: ctx.center,
            radius: ctx.radius,
            model: ctx.model.clone(),
            stages: Vec::new(),
        }
    };
    // The terminal stage projects outright; it carries no graph.
    let terminal = Some(build_stage(ctx, flow_dim, None, notes));
    Some(Psi { eta, terminal })
}

/// The whole-space extension map: every stratum up to the set dimension gets
/// a straightening stage and nothing projects hard.
pub fn build_extension(
    ctx: &BallContext,
    set_dim: usize,
    gammas: &[Option<&PointCloud>],
    notes: &mut Vec<ContractNote>,
) -> Psi {
    let eta = build_eta(ctx, set_dim, gammas, notes);
    Psi { eta, terminal: None }
}

/// Writes a region indicator table: one row per probe, one column per word,
/// at the given lambda.
pub fn write_region_indicators(
    path: &Path,
    model: &ConeSet,
    center: &Vec4,
    radius: f64,
    schedule: &AngleSchedule,
    words: &[Word],
    lambda: f64,
    probes: &[Vec4],
) -> Result<(), AlignError> {
    let mut out = String::from("probe_x,probe_y,probe_z,probe_w");
    for w in words {
        out.push_str(&format!(",w{w}"));
    }
    out.push('\n');
    for p in probes {
        out.push_str(&format!("{},{},{},{}", p.x, p.y, p.z, p.w));
        for w in words {
            let branches = model.branches(w.terminal()).len();
            let hit = (0..branches).any(|b| {
                region_contains(
                    model,
                    center,
                    radius,
                    schedule,
                    &RegionSpec { word: w.clone(), branch: b, lambda },
                    p,
                )
            });
            out.push_str(if hit { ",1" } else { ",0" });
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cone::standard_catalog;
    use rand::Rng;

    #[test]
    fn lattice_matches_hand_enumeration() {
        let single = word_lattice(2, 2);
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].to_string(), "1");

        let two = word_lattice(0, 1);
        let strs: Vec<String> = two.iter().map(|w| w.to_string()).collect();
        assert_eq!(strs, vec!["1", "11"]);

        let four = word_lattice(0, 3);
        let strs: Vec<String> = four.iter().map(|w| w.to_string()).collect();
        assert_eq!(
            strs,
            vec![
                "1", "11", "10", "111", "110", "101", "100", "1111", "1101", "1011", "1001"
            ]
        );
        assert_eq!(four.len(), 11);
        for w in &four {
            assert!(w.bits[0]);
            if w.terminal() == 3 {
                assert!(w.terminal_active());
            }
        }
    }

    #[test]
    fn schedule_chains_as_specified() {
        let alpha = (-1.0f64 / 3.0).acos();
        let s = angle_schedule(alpha, 3);
        assert!((s.wide[0] - alpha / 100.0).abs() < 1e-15);
        assert!((s.mid[0] - s.wide[0] / 10.0).abs() < 1e-15);
        assert!((s.tight[0] - s.wide[0] / 1000.0).abs() < 1e-15);
        assert!((s.wide[1] - alpha * s.tight[0] / 10.0).abs() < 1e-15);
        assert!((s.wide[2] - alpha * s.tight[1] / 10.0).abs() < 1e-15);
        for i in 0..3 {
            assert!(s.wide[i] > s.mid[i] && s.mid[i] > s.tight[i]);
        }
    }

    #[test]
    fn same_level_regions_partition_and_separate() {
        let cat = standard_catalog(3);
        let t_set = &cat[0];
        let alpha = crate::cone::alpha(&cat);
        let schedule = angle_schedule(alpha, 3);
        let words = word_lattice(0, 2);
        let center = geom::ZERO;
        let radius = 0.3;
        let count_hits = |level: usize, lambda: f64, p: &Vec4| -> usize {
            let mut hits = 0usize;
            for w in words.iter().filter(|w| w.len() == level) {
                for b in 0..t_set.branches(w.terminal()).len() {
                    let r = RegionSpec { word: w.clone(), branch: b, lambda };
                    if region_contains(t_set, &center, radius, &schedule, &r, p) {
                        hits += 1;
                    }
                }
            }
            hits
        };
        let mut rng = geom::seeded_rng(77);
        let mut probes_checked = 0usize;
        let mut full_level_hits = 0usize;
        for _ in 0..10_000 {
            let p = Vec4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.0,
            ) * (radius * 4.9 / 1.8);
            if (p - center).norm() > 4.9 * radius {
                continue;
            }
            probes_checked += 1;
            // Incomplete levels cover the ball exactly once; the full level
            // at most once, since its close-everywhere patterns are thin.
            for level in 1..=3usize {
                let hits = count_hits(level, 1.0, &p);
                if level < 3 {
                    assert_eq!(hits, 1, "level {level} coverage at {p:?}");
                } else {
                    assert!(hits <= 1, "level {level} overlap at {p:?}");
                    full_level_hits += hits;
                }
                assert!(count_hits(level, 0.5, &p) <= 1, "tight overlap at {p:?}");
            }
        }
        assert!(probes_checked > 2000);
        // Generic probes never satisfy the top closeness bit exactly.
        assert!(full_level_hits < probes_checked / 10);
        // Points exactly on a two-dimensional piece do carry a full word.
        for b in t_set.branches(2) {
            let frame = t_set.branch_frame(&b);
            let p = frame.lift(&[0.08, 0.06]);
            assert_eq!(count_hits(3, 1.0, &p), 1, "sheet point missed: {p:?}");
        }
    }

    #[test]
    fn wide_regions_collapse_to_one_branch() {
        let cat = standard_catalog(3);
        let t_set = &cat[0];
        let alpha = crate::cone::alpha(&cat);
        let schedule = angle_schedule(alpha, 3);
        let center = geom::ZERO;
        let radius = 0.4;
        // Probes concentrated near the level-1 spine (the four rays).
        let mut probes = Vec::new();
        let mut rng = geom::seeded_rng(5);
        for b in t_set.branches(1) {
            let frame = t_set.branch_frame(&b);
            for _ in 0..400 {
                let along: f64 = rng.gen_range(0.05..radius * 4.0);
                let off = Vec4::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    0.0,
                ) * (along * schedule.sin_wide(0, 1) * 5.0);
                probes.push(frame.lift(&[along]) + off);
            }
        }
        let word = Word::new(0, vec![true, true]).unwrap();
        for branch in 0..t_set.branches(1).len() {
            let gap = type_collapse_gap(t_set, &center, radius, &schedule, &word, branch, &probes);
            assert!(gap < 1e-9, "branch {branch} gap {gap}");
        }
    }

    #[test]
    fn graph_fit_reproduces_and_estimates_slope() {
        let plane = standard_catalog(3)[2].clone();
        let frame = plane.branch_frame(&plane.top_branches()[0]);
        let h = 0.02;
        let mut samples = Vec::new();
        let mut k = 0i64;
        let slope = 0.08;
        let steps = (2.2 / h) as i64;
        for i in 0..steps {
            for j in 0..steps {
                let u = -1.1 + i as f64 * h;
                let v = -1.1 + j as f64 * h;
                // A gentle ridge of known slope.
                let w = slope * (u * 2.0).sin() * 0.5;
                samples.push(frame.lift(&[u, v]) + Vec4::new(0.0, 0.0, w, 0.0));
                k += 1;
            }
        }
        assert!(k > 1000);
        let fit = fit_graph(&samples, &frame, 4.0 * h).unwrap();
        assert!(fit.reproduction_error() < 2.0 * h, "repro {}", fit.reproduction_error());
        assert!(fit.lipschitz < 2.0 * slope, "lipschitz {}", fit.lipschitz);
        assert!(fit.lipschitz > 0.01);

        // Offsets evaluate to the ridge height mid-domain.
        let (v, _) = fit.offset_at(&[0.3, 0.2]).unwrap();
        let expect = slope * (0.6f64).sin() * 0.5;
        assert!((v.z - expect).abs() < h, "fit {} vs {expect}", v.z);

        // Coverage: probes far outside the footprint are flagged.
        let err = fit_graph_covering(
            &samples,
            &frame,
            h,
            &[vec![5.0, 5.0]],
            1.0,
        );
        assert!(matches!(err, Err(AlignError::CoverageGap { .. })));
    }

    #[test]
    fn straightening_pulls_reference_samples_onto_the_plane() {
        // A Y-product cloud tilted by a small graph: eta must bring its wing
        // samples back to the model planes.
        let cat = standard_catalog(3);
        let y = &cat[1];
        let h = 0.02;
        let alpha = crate::cone::alpha(&cat);
        let schedule = angle_schedule(alpha, 3);
        let eps = 0.01;
        let base = crate::metric::cone_cloud(y, 1.0, h).unwrap();
        // A tangential bend: offset eps times the axis distance, normal to
        // each wing, vanishing on the axis.
        let bent: Vec<Vec4> = base
            .points
            .iter()
            .map(|p| p + Vec4::new(-p.y, p.x, 0.0, 0.0) * eps)
            .collect();
        let bent_cloud = PointCloud::new(bent, h).unwrap();
        let ctx = BallContext {
            center: geom::ZERO,
            radius: 0.2,
            stratum: 1,
            model: y,
            schedule: &schedule,
            h,
        };
        let mut notes = Vec::new();
        let gammas = [None, None, Some(&bent_cloud)];
        let psi = build_psi(&ctx, 2, &gammas, &mut notes).unwrap();
        // Samples well inside the wedge land near the model.
        let mut improved = 0usize;
        let mut total = 0usize;
        for p in &bent_cloud.points {
            let d_axis = (p.x * p.x + p.y * p.y).sqrt();
            if d_axis < 0.05 || d_axis > 0.6 || p.z.abs() > 0.6 {
                continue;
            }
            let before = y.distance(p);
            if before < 0.2 * eps * d_axis {
                continue;
            }
            let after = y.distance(&psi.apply(p));
            total += 1;
            if after < 0.5 * before || after < 3.0 * h {
                improved += 1;
            }
        }
        assert!(total > 200, "too few probes: {total}");
        assert!(
            improved as f64 / total as f64 > 0.9,
            "only {improved}/{total} samples straightened"
        );
        // And nothing anywhere moves farther than the wedge geometry allows.
        let mut rng = geom::seeded_rng(3);
        for _ in 0..500 {
            let p = Vec4::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                0.0,
            );
            let moved = (psi.apply(&p) - p).norm();
            assert!(moved < 0.1, "moved {moved} at {p:?}");
        }
    }

    #[test]
    fn skeleton_stage_straightens_a_bent_axis() {
        let cat = standard_catalog(3);
        let y = &cat[1];
        let h = 0.02;
        let alpha = crate::cone::alpha(&cat);
        let schedule = angle_schedule(alpha, 3);
        let ctx = BallContext {
            center: geom::ZERO,
            radius: 0.2,
            stratum: 1,
            model: y,
            schedule: &schedule,
            h,
        };
        // The current skeleton image: the product line pushed sideways by a
        // slowly varying offset well inside the stage wedge.
        let off = |z: f64| 0.010 * ctx.radius * (1.0 + 0.3 * (2.0 * z).sin());
        let mut axis_pts = Vec::new();
        let mut z = -1.0;
        while z <= 1.0 {
            axis_pts.push(Vec4::new(off(z), 0.0, z, 0.0));
            z += h;
        }
        let axis_cloud = PointCloud::new(axis_pts, h).unwrap();
        let mut notes = Vec::new();
        let gammas = [None, Some(&axis_cloud)];
        let eta = build_eta(&ctx, 1, &gammas, &mut notes);
        assert_eq!(eta.stages.len(), 1);
        // Bent skeleton samples come back to the model line.
        for k in -16..=16 {
            let z = k as f64 * 0.05;
            let p = Vec4::new(off(z), 0.0, z, 0.0);
            let q = eta.apply(&p);
            let d_axis = (q.x * q.x + q.y * q.y).sqrt();
            assert!(d_axis < 1e-3, "residual {d_axis} at z {z}");
            assert!((q.z - z).abs() < 2.0 * h);
        }
        // Points outside the wedge do not move.
        for k in -5..=5 {
            let p = Vec4::new(0.05, 0.02, k as f64 * 0.1, 0.0);
            let moved = (eta.apply(&p) - p).norm();
            assert!(moved < 1e-12, "wing point moved {moved}");
        }
    }

    #[test]
    fn flow_map_fixes_the_lower_spine() {
        let cat = standard_catalog(3);
        let y = &cat[1];
        let alpha = crate::cone::alpha(&cat);
        let schedule = angle_schedule(alpha, 3);
        let ctx = BallContext {
            center: geom::ZERO,
            radius: 0.2,
            stratum: 1,
            model: y,
            schedule: &schedule,
            h: 0.025,
        };
        let mut notes = Vec::new();
        let psi = build_psi(&ctx, 2, &[None, None, None], &mut notes).unwrap();
        for k in -10..=10 {
            let axis_pt = Vec4::new(0.0, 0.0, k as f64 * 0.05, 0.0);
            let moved = (psi.apply(&axis_pt) - axis_pt).norm();
            assert!(moved < 1e-12, "axis point moved {moved}");
        }
    }
}
