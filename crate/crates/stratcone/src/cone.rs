//! Cone models: simple convex cones over unit directions, unions of them
//! ("complex cones") with a shared face lattice, and positioned product sets
//! `R(T x R^m x {0})` together with their spines, branches, angles, and local
//! blow-ups.
//!
//! Conventions. A simple cone over directions `g_1..g_t` is the set of
//! nonnegative combinations; the directions must be unit and, together with
//! the origin, affinely independent (so linearly independent). A complex cone
//! is a finite union of simple cones of one common dimension whose pairwise
//! intersections are exactly the cones over the shared directions. A
//! positioned set keeps its complex-cone factor in the leading model
//! coordinates, a Euclidean product factor after it, and zero padding to the
//! ambient dimension, then applies a rotation and translation.

use crate::geom::{
    self, dist_to_cone, normalize, orthonormalize, project_cone, project_span, sphere_directions,
    vec_from, Mat4, Vec4,
};
use serde::{Deserialize, Serialize};

/// Tolerance for "this point lies on the set" decisions.
pub const MEMBERSHIP_TOL: f64 = 1e-9;

/// Two stored unit directions closer than this are treated as the same
/// generator when pieces are pooled.
const DIRECTION_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum ConeError {
    #[error("pieces disagree on ambient dimension")]
    AmbientMismatch,
    #[error("pieces disagree on cone dimension ({0} vs {1})")]
    DimensionMismatch(usize, usize),
    #[error("piece {piece}: generators are not unit, or not affinely independent with the origin")]
    DegenerateGenerators { piece: usize },
    #[error("faces intersect outside their shared sub-face (witness direction {witness:?})")]
    IntersectionViolation { face_a: Vec<usize>, face_b: Vec<usize>, witness: Vec<f64> },
    #[error("cone factor plus product factor exceed the ambient dimension")]
    DoesNotFit,
    #[error("point is not on the set (distance {dist:.3e})")]
    NotOnSet { dist: f64 },
    #[error("blow-up ball reaches the next lower spine (needs clearance {required:.3e}, has {available:.3e})")]
    TooCloseToLowerSpine { required: f64, available: f64 },
    #[error("unknown catalog entry {0:?}")]
    UnknownCatalogEntry(String),
}

/// A set of pairwise distinct unit directions in R^ambient_dim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionSet {
    pub ambient_dim: usize,
    pub dirs: Vec<Vec4>,
}

impl DirectionSet {
    pub fn new(ambient_dim: usize, dirs: Vec<Vec4>) -> Result<Self, ConeError> {
        for d in &dirs {
            if (d.norm() - 1.0).abs() > 1e-9 {
                return Err(ConeError::DegenerateGenerators { piece: 0 });
            }
            for i in ambient_dim..4 {
                if d[i].abs() > 1e-12 {
                    return Err(ConeError::AmbientMismatch);
                }
            }
        }
        Ok(DirectionSet { ambient_dim, dirs })
    }
}

/// Simple convex cone over unit, linearly independent generators.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimpleCone {
    pub ambient_dim: usize,
    pub generators: Vec<Vec4>,
}

impl SimpleCone {
    pub fn new(ambient_dim: usize, generators: Vec<Vec4>) -> Result<Self, ConeError> {
        let c = SimpleCone { ambient_dim, generators };
        c.check(0)?;
        Ok(c)
    }

    fn check(&self, piece: usize) -> Result<(), ConeError> {
        for g in &self.generators {
            if (g.norm() - 1.0).abs() > 1e-9 {
                return Err(ConeError::DegenerateGenerators { piece });
            }
            for i in self.ambient_dim..4 {
                if g[i].abs() > 1e-12 {
                    return Err(ConeError::AmbientMismatch);
                }
            }
        }
        if self.generators.len() > self.ambient_dim {
            return Err(ConeError::DegenerateGenerators { piece });
        }
        // Linear independence with a real margin: generators this close to a
        // span are one direction for every purpose downstream.
        let mut basis: Vec<Vec4> = Vec::new();
        for g in &self.generators {
            let mut w = *g;
            for b in &basis {
                w -= b * b.dot(&w);
            }
            if w.norm() < 1e-9 {
                return Err(ConeError::DegenerateGenerators { piece });
            }
            basis.push(w / w.norm());
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.generators.len()
    }

    pub fn project(&self, p: &Vec4) -> (Vec4, f64) {
        let (q, _) = project_cone(&self.generators, p);
        let d = (p - q).norm();
        (q, d)
    }

    pub fn contains(&self, p: &Vec4, tol: f64) -> bool {
        self.project(p).1 <= tol
    }
}

/// All faces (sub-direction-sets) occurring in a complex cone, sorted by
/// cardinality then lexicographically. Faces are index sets into the pooled
/// direction list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FaceLattice {
    pub faces: Vec<Vec<usize>>,
}

impl FaceLattice {
    pub fn of_cardinality(&self, card: usize) -> impl Iterator<Item = &Vec<usize>> {
        self.faces.iter().filter(move |f| f.len() == card)
    }

    pub fn contains(&self, face: &[usize]) -> bool {
        self.faces.iter().any(|f| f == face)
    }
}

/// Union of simple cones of one common dimension with pooled generators and
/// a valid face lattice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComplexCone {
    pub ambient_dim: usize,
    /// Common dimension of the pieces.
    pub dim: usize,
    /// Pooled distinct unit directions.
    pub dirs: Vec<Vec4>,
    /// Each piece as a sorted index set into `dirs`.
    pub pieces: Vec<Vec<usize>>,
    pub lattice: FaceLattice,
}

/// Violation report for the angle-based non-degeneracy check: a shared face
/// over which two one-larger faces open up to a straight angle.
#[derive(Debug, Clone)]
pub struct NonFlatViolation {
    pub shared_face: Vec<usize>,
    pub pair: (Vec<usize>, Vec<usize>),
    pub sup_angle: f64,
}

/// Check the pieces and assemble the complex cone. Verifies common ambient
/// and cone dimension, unit/independent generators, pools directions, builds
/// the face lattice, and verifies that every pair of faces meets exactly in
/// the cone over its shared directions (by enumerating candidate extreme rays
/// of each pairwise intersection and testing them against the shared face).
pub fn validate_complex_cone(pieces: &[SimpleCone], tol: f64) -> Result<ComplexCone, ConeError> {
    if pieces.is_empty() {
        return Err(ConeError::DimensionMismatch(0, 0));
    }
    let ambient = pieces[0].ambient_dim;
    let dim = pieces[0].dim();
    for (i, p) in pieces.iter().enumerate() {
        if p.ambient_dim != ambient {
            return Err(ConeError::AmbientMismatch);
        }
        if p.dim() != dim {
            return Err(ConeError::DimensionMismatch(dim, p.dim()));
        }
        p.check(i)?;
    }
    // pool directions
    let mut dirs: Vec<Vec4> = Vec::new();
    let mut piece_idx: Vec<Vec<usize>> = Vec::new();
    for (pi, p) in pieces.iter().enumerate() {
        let mut idx = Vec::with_capacity(p.generators.len());
        for g in &p.generators {
            let found = dirs.iter().position(|d| (d - g).norm() < DIRECTION_MATCH_TOL);
            let k = match found {
                Some(k) => k,
                None => {
                    dirs.push(*g);
                    dirs.len() - 1
                }
            };
            if idx.contains(&k) {
                return Err(ConeError::DegenerateGenerators { piece: pi });
            }
            idx.push(k);
        }
        idx.sort_unstable();
        piece_idx.push(idx);
    }
    piece_idx.sort();
    piece_idx.dedup();
    // face lattice: all subsets of every piece
    let mut faces: Vec<Vec<usize>> = Vec::new();
    for piece in &piece_idx {
        let t = piece.len();
        for mask in 0u32..(1 << t) {
            let f: Vec<usize> =
                (0..t).filter(|i| mask >> i & 1 == 1).map(|i| piece[i]).collect();
            faces.push(f);
        }
    }
    faces.sort_by(|a, b| (a.len(), a.as_slice()).cmp(&(b.len(), b.as_slice())));
    faces.dedup();
    let cone = ComplexCone {
        ambient_dim: ambient,
        dim,
        dirs,
        pieces: piece_idx,
        lattice: FaceLattice { faces },
    };
    cone.check_intersections(tol)?;
    Ok(cone)
}

impl ComplexCone {
    pub fn trivial(ambient_dim: usize) -> Self {
        ComplexCone {
            ambient_dim,
            dim: 0,
            dirs: Vec::new(),
            pieces: vec![Vec::new()],
            lattice: FaceLattice { faces: vec![Vec::new()] },
        }
    }

    pub fn face_generators(&self, face: &[usize]) -> Vec<Vec4> {
        face.iter().map(|&i| self.dirs[i]).collect()
    }

    pub fn project_face(&self, face: &[usize], p: &Vec4) -> (Vec4, f64) {
        let gens = self.face_generators(face);
        let (q, _) = project_cone(&gens, p);
        (q, (p - q).norm())
    }

    /// Distance to the union of the pieces.
    pub fn distance(&self, p: &Vec4) -> f64 {
        self.pieces
            .iter()
            .map(|f| self.project_face(f, p).1)
            .fold(f64::INFINITY, f64::min)
    }

    /// Distance to the union of faces of the given cardinality.
    pub fn skeleton_distance(&self, card: usize, p: &Vec4) -> f64 {
        let mut best = f64::INFINITY;
        for f in self.lattice.of_cardinality(card) {
            best = best.min(self.project_face(f, p).1);
        }
        best
    }

    /// Pairwise intersection condition for all face pairs: every nonzero ray
    /// of C(X) meeting C(Y) must lie in C(X and Y). Candidate extreme rays of
    /// the intersection are enumerated through minimal-support nullspace
    /// vectors of [G_X, -G_Y].
    fn check_intersections(&self, tol: f64) -> Result<(), ConeError> {
        let faces = &self.lattice.faces;
        for a in 0..faces.len() {
            for b in a + 1..faces.len() {
                let fa = &faces[a];
                let fb = &faces[b];
                if fa.is_empty() || fb.is_empty() {
                    continue;
                }
                let shared: Vec<usize> =
                    fa.iter().copied().filter(|i| fb.contains(i)).collect();
                if shared.len() == fa.len() || shared.len() == fb.len() {
                    continue; // nested faces always comply
                }
                let ga = self.face_generators(fa);
                let gb = self.face_generators(fb);
                let gshared = self.face_generators(&shared);
                for ray in intersection_ray_candidates(&ga, &gb) {
                    if dist_to_cone(&gshared, &ray) > tol.max(1e-7) {
                        return Err(ConeError::IntersectionViolation {
                            face_a: fa.clone(),
                            face_b: fb.clone(),
                            witness: ray.iter().copied().collect(),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Angle range between two faces across all shared-boundary strata; see
    /// `angle_range` for the free-function wrapper. `None` when one face is
    /// contained in the other (no admissible configurations).
    pub fn angle_range(&self, f1: &[usize], f2: &[usize], samples: usize) -> Option<(f64, f64)> {
        let z: Vec<usize> = f1.iter().copied().filter(|i| f2.contains(i)).collect();
        if z.len() == f1.len() || z.len() == f2.len() {
            return None;
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        let nz = z.len();
        for mask in 0u32..(1 << nz) {
            let zsub: Vec<usize> =
                (0..nz).filter(|i| mask >> i & 1 == 1).map(|i| z[i]).collect();
            let z0 = if zsub.is_empty() {
                geom::ZERO
            } else {
                let s: Vec4 = zsub.iter().map(|&i| self.dirs[i]).sum();
                match normalize(&s) {
                    Some(u) => u,
                    None => continue,
                }
            };
            let w1 = self.admissible_directions(f1, &z, &zsub, &z0, samples);
            let w2 = self.admissible_directions(f2, &z, &zsub, &z0, samples);
            for a in &w1 {
                for b in &w2 {
                    let ang = a.dot(b).clamp(-1.0, 1.0).acos();
                    lo = lo.min(ang);
                    hi = hi.max(ang);
                }
            }
            // local refinement around the current extremes
            for minimize in [true, false] {
                let target = if minimize { lo } else { hi };
                if !target.is_finite() {
                    continue;
                }
                let (mut wa, mut wb) = match best_pair(&w1, &w2, minimize) {
                    Some(p) => p,
                    None => continue,
                };
                let mut step = 0.15f64;
                for _ in 0..24 {
                    let mut improved = false;
                    for (u, other, store_first) in
                        [(wa, wb, true), (wb, wa, false)]
                    {
                        for sign in [1.0, -1.0] {
                            let perp = other - u * u.dot(&other);
                            let Some(perp) = normalize(&perp) else { continue };
                            let cand =
                                normalize(&(u + perp * (sign * step))).unwrap_or(u);
                            if !self.direction_admissible(
                                if store_first { f1 } else { f2 },
                                &z,
                                &z0,
                                &cand,
                            ) {
                                continue;
                            }
                            let ang = cand
                                .dot(if store_first { &wb } else { &wa })
                                .clamp(-1.0, 1.0)
                                .acos();
                            let better = if minimize {
                                ang < (if store_first { wa } else { wb })
                                    .dot(if store_first { &wb } else { &wa })
                                    .clamp(-1.0, 1.0)
                                    .acos()
                            } else {
                                ang > (if store_first { wa } else { wb })
                                    .dot(if store_first { &wb } else { &wa })
                                    .clamp(-1.0, 1.0)
                                    .acos()
                            };
                            if better {
                                if store_first {
                                    wa = cand;
                                } else {
                                    wb = cand;
                                }
                                improved = true;
                            }
                        }
                    }
                    if !improved {
                        step *= 0.5;
                        if step < 1e-5 {
                            break;
                        }
                    }
                }
                let refined = wa.dot(&wb).clamp(-1.0, 1.0).acos();
                if minimize {
                    lo = lo.min(refined);
                } else {
                    hi = hi.max(refined);
                }
            }
        }
        if lo.is_finite() {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Unit directions w such that z0 + s w stays on C(face) for small s > 0,
    /// leaves C(z_full), and keeps z0 as its nearest point of C(z_full).
    fn admissible_directions(
        &self,
        face: &[usize],
        z_full: &[usize],
        z_sub: &[usize],
        z0: &Vec4,
        samples: usize,
    ) -> Vec<Vec4> {
        let mut cands: Vec<Vec4> = Vec::new();
        // exact candidates: generators stripped of any sub-span of the shared
        // face; these realize the extremes for every catalog cone
        let nz = z_full.len();
        for &gi in face.iter().filter(|i| !z_sub.contains(i)) {
            let g = self.dirs[gi];
            for mask in 0u32..(1 << nz) {
                let mut span: Vec<Vec4> = z_sub.iter().map(|&i| self.dirs[i]).collect();
                for k in 0..nz {
                    if mask >> k & 1 == 1 {
                        span.push(self.dirs[z_full[k]]);
                    }
                }
                let basis = orthonormalize(&span);
                let w = g - project_span(&basis, &g);
                if let Some(u) = normalize(&w) {
                    cands.push(u);
                }
            }
        }
        let exact_n = cands.len();
        for i in 0..exact_n {
            for j in i + 1..exact_n {
                if let Some(u) = normalize(&(cands[i] + cands[j])) {
                    cands.push(u);
                }
            }
        }
        // lattice candidates inside the span of the face
        let span: Vec<Vec4> = face.iter().map(|&i| self.dirs[i]).collect();
        let basis = orthonormalize(&span);
        cands.extend(sphere_directions(&basis, samples));
        let mut out: Vec<Vec4> = Vec::new();
        for w in cands {
            if self.direction_admissible(face, z_full, z0, &w)
                && !out.iter().any(|u| u.dot(&w) > 1.0 - 1e-10)
            {
                out.push(w);
            }
        }
        out
    }

    fn direction_admissible(
        &self,
        face: &[usize],
        z_full: &[usize],
        z0: &Vec4,
        w: &Vec4,
    ) -> bool {
        let s = 1e-3 * z0.norm().max(1.0);
        let f = z0 + w * s;
        let gens = self.face_generators(face);
        if dist_to_cone(&gens, &f) > 1e-8 * s {
            return false;
        }
        let zgens = self.face_generators(z_full);
        let (foot, _) = project_cone(&zgens, &f);
        if (f - foot).norm() < 1e-4 * s {
            return false; // degenerate: the probe sits on the shared cone
        }
        (foot - z0).norm() <= 1e-5 * s
    }

    /// Smallest infimum angle over face pairs where neither face contains the
    /// other; straight angle by convention when no such pair exists.
    pub fn angle(&self, samples: usize) -> f64 {
        let mut best = std::f64::consts::PI;
        let mut saw_pair = false;
        let faces = &self.lattice.faces;
        for a in 0..faces.len() {
            for b in a + 1..faces.len() {
                if let Some((lo, _)) = self.angle_range(&faces[a], &faces[b], samples) {
                    saw_pair = true;
                    best = best.min(lo);
                }
            }
        }
        if saw_pair {
            best
        } else {
            std::f64::consts::PI
        }
    }

    /// For every face Y below the top dimension and every pair of one-larger
    /// faces meeting exactly in Y, the opening angle must stay away from a
    /// straight angle by `margin`.
    pub fn check_non_flat(&self, margin: f64, samples: usize) -> Result<(), NonFlatViolation> {
        for shared in &self.lattice.faces {
            let t = shared.len();
            if t >= self.dim {
                continue;
            }
            let bigger: Vec<&Vec<usize>> = self
                .lattice
                .of_cardinality(t + 1)
                .filter(|f| shared.iter().all(|i| f.contains(i)))
                .collect();
            for a in 0..bigger.len() {
                for b in a + 1..bigger.len() {
                    let inter: Vec<usize> = bigger[a]
                        .iter()
                        .copied()
                        .filter(|i| bigger[b].contains(i))
                        .collect();
                    if &inter != shared {
                        continue;
                    }
                    if let Some((_, hi)) = self.angle_range(bigger[a], bigger[b], samples) {
                        if hi >= std::f64::consts::PI - margin {
                            return Err(NonFlatViolation {
                                shared_face: shared.clone(),
                                pair: (bigger[a].clone(), bigger[b].clone()),
                                sup_angle: hi,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Drop to the union of one-lower faces. Returns None at dimension zero.
    pub fn peel(&self) -> Option<ComplexCone> {
        if self.dim == 0 {
            return None;
        }
        let mut pieces: Vec<Vec<usize>> = self
            .lattice
            .of_cardinality(self.dim - 1)
            .cloned()
            .collect();
        pieces.sort();
        pieces.dedup();
        let mut faces: Vec<Vec<usize>> = Vec::new();
        for piece in &pieces {
            let t = piece.len();
            for mask in 0u32..(1 << t) {
                let f: Vec<usize> =
                    (0..t).filter(|i| mask >> i & 1 == 1).map(|i| piece[i]).collect();
                faces.push(f);
            }
        }
        faces.sort_by(|a, b| (a.len(), a.as_slice()).cmp(&(b.len(), b.as_slice())));
        faces.dedup();
        Some(ComplexCone {
            ambient_dim: self.ambient_dim,
            dim: self.dim - 1,
            dirs: self.dirs.clone(),
            pieces,
            lattice: FaceLattice { faces },
        })
    }

    /// Number of peels until only the origin remains; equals the cone
    /// dimension for a well-formed lattice.
    pub fn peel_count(&self) -> usize {
        let mut c = self.clone();
        let mut n = 0;
        while let Some(next) = c.peel() {
            c = next;
            n += 1;
        }
        n
    }
}

fn best_pair(w1: &[Vec4], w2: &[Vec4], minimize: bool) -> Option<(Vec4, Vec4)> {
    let mut best: Option<(f64, Vec4, Vec4)> = None;
    for a in w1 {
        for b in w2 {
            let ang = a.dot(b).clamp(-1.0, 1.0).acos();
            let better = match &best {
                None => true,
                Some((cur, _, _)) => {
                    if minimize {
                        ang < *cur
                    } else {
                        ang > *cur
                    }
                }
            };
            if better {
                best = Some((ang, *a, *b));
            }
        }
    }
    best.map(|(_, a, b)| (a, b))
}

/// Candidate extreme rays of C(A) meet C(B): positive minimal-support
/// nullspace vectors of [G_A, -G_B], mapped through G_A.
fn intersection_ray_candidates(ga: &[Vec4], gb: &[Vec4]) -> Vec<Vec4> {
    let p = ga.len();
    let q = gb.len();
    let total = p + q;
    let mut cols: Vec<Vec4> = Vec::with_capacity(total);
    cols.extend_from_slice(ga);
    for g in gb {
        cols.push(-*g);
    }
    let mut rays = Vec::new();
    let max_support = total.min(5);
    for mask in 1u32..(1 << total) {
        let support: Vec<usize> = (0..total).filter(|i| mask >> i & 1 == 1).collect();
        if support.len() > max_support {
            continue;
        }
        // need at least one generator from each side for a nonzero meet
        if !support.iter().any(|&i| i < p) || !support.iter().any(|&i| i >= p) {
            continue;
        }
        let m = nalgebra::DMatrix::<f64>::from_fn(4, support.len(), |r, c| cols[support[c]][r]);
        let svd = m.clone().svd(false, true);
        let rank = svd.singular_values.iter().filter(|&&s| s > 1e-10).count();
        if rank != support.len() - 1 {
            continue; // not a one-dimensional nullspace on this support
        }
        let vt = svd.v_t.as_ref().unwrap();
        let null_row = vt.row(vt.nrows() - 1);
        let mut coeffs: Vec<f64> = null_row.iter().copied().collect();
        // orient positively if possible
        if coeffs.iter().all(|&c| c <= 1e-10) {
            for c in coeffs.iter_mut() {
                *c = -*c;
            }
        }
        if coeffs.iter().any(|&c| c < -1e-8) {
            continue; // mixed signs: not a cone direction
        }
        let mut ray = geom::ZERO;
        for (k, &i) in support.iter().enumerate() {
            if i < p {
                ray += ga[i] * coeffs[k].max(0.0);
            }
        }
        if let Some(u) = normalize(&ray) {
            rays.push(u);
        }
    }
    rays
}

/// One branch of a spine: the simple cone over `face` crossed with the
/// product factor, at the given absolute level (product dimension plus face
/// cardinality).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpineBranch {
    pub level: usize,
    pub face: Vec<usize>,
}

/// Orthonormal affine frame of a branch plane.
#[derive(Debug, Clone)]
pub struct PlaneFrame {
    pub origin: Vec4,
    pub basis: Vec<Vec4>,
}

impl PlaneFrame {
    pub fn project(&self, p: &Vec4) -> Vec4 {
        self.origin + project_span(&self.basis, &(p - self.origin))
    }

    pub fn coords(&self, p: &Vec4) -> Vec<f64> {
        let d = p - self.origin;
        self.basis.iter().map(|b| b.dot(&d)).collect()
    }

    pub fn lift(&self, u: &[f64]) -> Vec4 {
        let mut q = self.origin;
        for (b, &c) in self.basis.iter().zip(u) {
            q += b * c;
        }
        q
    }

    pub fn dim(&self) -> usize {
        self.basis.len()
    }
}

/// A positioned model set `R(T x R^m x {0}) + translation`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConeSet {
    pub base: ComplexCone,
    pub product_dim: usize,
    pub ambient_dim: usize,
    /// Orthogonal, model frame to world.
    pub rotation: Mat4,
    pub translation: Vec4,
    /// Equals the product dimension: the level of the minimal spine.
    pub type_label: usize,
}

impl ConeSet {
    pub fn new(base: ComplexCone, product_dim: usize, ambient_dim: usize) -> Result<Self, ConeError> {
        if base.ambient_dim + product_dim > ambient_dim || ambient_dim > 4 {
            return Err(ConeError::DoesNotFit);
        }
        Ok(ConeSet {
            type_label: product_dim,
            base,
            product_dim,
            ambient_dim,
            rotation: Mat4::identity(),
            translation: geom::ZERO,
        })
    }

    pub fn with_pose(mut self, rotation: Mat4, translation: Vec4) -> Self {
        self.rotation = rotation;
        self.translation = translation;
        self
    }

    pub fn with_translation(mut self, translation: Vec4) -> Self {
        self.translation = translation;
        self
    }

    /// Dimension of the set itself.
    pub fn dim(&self) -> usize {
        self.base.dim + self.product_dim
    }

    pub fn to_model(&self, p: &Vec4) -> Vec4 {
        self.rotation.transpose() * (p - self.translation)
    }

    pub fn to_world(&self, p: &Vec4) -> Vec4 {
        self.rotation * p + self.translation
    }

    /// Rotate a direction only (no translation).
    pub fn dir_to_world(&self, d: &Vec4) -> Vec4 {
        self.rotation * d
    }

    /// Branches of the spine at an absolute level between the type label and
    /// the set dimension.
    pub fn branches(&self, level: usize) -> Vec<SpineBranch> {
        let card = level.saturating_sub(self.product_dim);
        if level < self.product_dim || card > self.base.dim {
            return Vec::new();
        }
        self.base
            .lattice
            .of_cardinality(card)
            .map(|f| SpineBranch { level, face: f.clone() })
            .collect()
    }

    pub fn top_branches(&self) -> Vec<SpineBranch> {
        self.base
            .pieces
            .iter()
            .map(|f| SpineBranch { level: self.dim(), face: f.clone() })
            .collect()
    }

    /// Model-frame split helpers: cone factor coordinates live in the leading
    /// base ambient slots, the product factor right after.
    fn split_model(&self, pm: &Vec4) -> (Vec4, Vec4, Vec4) {
        let a = self.base.ambient_dim;
        let m = self.product_dim;
        let mut cone_part = geom::ZERO;
        let mut prod_part = geom::ZERO;
        let mut pad_part = geom::ZERO;
        for i in 0..4 {
            if i < a {
                cone_part[i] = pm[i];
            } else if i < a + m {
                prod_part[i] = pm[i];
            } else {
                pad_part[i] = pm[i];
            }
        }
        (cone_part, prod_part, pad_part)
    }

    /// Nearest point on a branch and the distance to it.
    pub fn project_branch(&self, branch: &SpineBranch, p: &Vec4) -> (Vec4, f64) {
        let pm = self.to_model(p);
        let (cone_part, prod_part, _) = self.split_model(&pm);
        let gens = self.base.face_generators(&branch.face);
        let (qc, _) = project_cone(&gens, &cone_part);
        let qm = qc + prod_part;
        let q = self.to_world(&qm);
        (q, (p - q).norm())
    }

    /// Distance to the whole set (union of top-level branches).
    pub fn distance(&self, p: &Vec4) -> f64 {
        self.top_branches()
            .iter()
            .map(|b| self.project_branch(b, p).1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn nearest_point(&self, p: &Vec4) -> Vec4 {
        let mut best = (f64::INFINITY, *p);
        for b in self.top_branches() {
            let (q, d) = self.project_branch(&b, p);
            if d < best.0 {
                best = (d, q);
            }
        }
        best.1
    }

    /// Distance to the spine at the given absolute level.
    pub fn spine_distance(&self, level: usize, p: &Vec4) -> f64 {
        self.branches(level)
            .iter()
            .map(|b| self.project_branch(b, p).1)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn spine_nearest(&self, level: usize, p: &Vec4) -> Vec4 {
        self.spine_nearest_branch(level, p).1
    }

    /// Nearest spine point at `level` together with the branch holding it.
    pub fn spine_nearest_branch(&self, level: usize, p: &Vec4) -> (SpineBranch, Vec4) {
        let mut best: Option<(f64, SpineBranch, Vec4)> = None;
        for b in self.branches(level) {
            let (q, d) = self.project_branch(&b, p);
            if best.as_ref().map_or(true, |(bd, _, _)| d < *bd) {
                best = Some((d, b, q));
            }
        }
        let (_, b, q) = best.expect("spine level within range");
        (b, q)
    }

    /// The same set dilated by `s` about the origin. Cones are dilation
    /// invariant, so only the translation moves.
    pub fn scaled(&self, s: f64) -> ConeSet {
        let mut out = self.clone();
        out.translation = self.translation * s;
        out
    }

    /// Worst lower-spine clearance over all branches above the minimal spine.
    pub fn class_clearance(&self) -> f64 {
        let mut worst = 1.0f64;
        for level in self.type_label + 1..=self.dim() {
            for b in self.branches(level) {
                worst = worst.max(self.measure_branch_clearance(&b));
            }
        }
        worst
    }

    /// Orthonormal affine frame of the plane spanned by a branch (face span
    /// plus product factor), through the translation point.
    pub fn branch_frame(&self, branch: &SpineBranch) -> PlaneFrame {
        let mut vecs: Vec<Vec4> = branch
            .face
            .iter()
            .map(|&i| self.dir_to_world(&self.base.dirs[i]))
            .collect();
        let a = self.base.ambient_dim;
        for j in 0..self.product_dim {
            let mut e = geom::ZERO;
            e[a + j] = 1.0;
            vecs.push(self.dir_to_world(&e));
        }
        PlaneFrame { origin: self.translation, basis: orthonormalize(&vecs) }
    }

    /// Minimal branch whose relative interior holds the nearest point of the
    /// set to `p`; errors when `p` is farther than `tol` from the set.
    pub fn locate(&self, p: &Vec4, tol: f64) -> Result<SpineBranch, ConeError> {
        let pm = self.to_model(p);
        let (cone_part, _, pad_part) = self.split_model(&pm);
        let scale = p.norm().max(1.0);
        let mut best: Option<(f64, Vec<usize>)> = None;
        for piece in &self.base.pieces {
            let gens = self.base.face_generators(piece);
            let (qc, coeffs) = project_cone(&gens, &cone_part);
            let d = ((cone_part - qc).norm_squared() + pad_part.norm_squared()).sqrt();
            let support: Vec<usize> = piece
                .iter()
                .enumerate()
                .filter(|(k, _)| coeffs[*k] > 1e-7 * scale)
                .map(|(_, &gi)| gi)
                .collect();
            let better = match &best {
                None => true,
                Some((bd, bs)) => {
                    d < bd - 1e-12 * scale
                        || ((d - bd).abs() <= 1e-12 * scale && support.len() < bs.len())
                }
            };
            if better {
                best = Some((d, support));
            }
        }
        let (d, support) = best.expect("cone set has at least one piece");
        if d > tol * scale {
            return Err(ConeError::NotOnSet { dist: d });
        }
        Ok(SpineBranch { level: self.product_dim + support.len(), face: support })
    }

    /// Deterministic mesh of the set inside B(x, r) at the given resolution:
    /// per top branch, a lattice over the branch plane clamped onto the cone.
    pub fn densify_ball(&self, x: &Vec4, r: f64, res: f64) -> Vec<Vec4> {
        let mut out = Vec::new();
        for b in self.top_branches() {
            self.densify_branch_ball(&b, x, r, res, &mut out);
        }
        out
    }

    pub fn densify_branch_ball(
        &self,
        branch: &SpineBranch,
        x: &Vec4,
        r: f64,
        res: f64,
        out: &mut Vec<Vec4>,
    ) {
        let frame = self.branch_frame(branch);
        let t = frame.dim();
        if t == 0 {
            let q = frame.origin;
            if (q - x).norm() <= r {
                out.push(q);
            }
            return;
        }
        let u0 = frame.coords(x);
        let steps = ((2.0 * r) / res).ceil() as i64;
        let mut idx = vec![0i64; t];
        let gens = self.base.face_generators(&branch.face);
        let a = self.base.ambient_dim;
        loop {
            let u: Vec<f64> = (0..t)
                .map(|k| u0[k] - r + idx[k] as f64 * (2.0 * r) / steps as f64)
                .collect();
            let plane_pt = frame.lift(&u);
            // clamp onto the cone side of the branch
            let pm = self.to_model(&plane_pt);
            let (cone_part, prod_part, _) = self.split_model(&pm);
            let (qc, _) = project_cone(&gens, &cone_part);
            let mut qm = qc + prod_part;
            for i in a + self.product_dim..4 {
                qm[i] = 0.0;
            }
            let q = self.to_world(&qm);
            if (q - x).norm() <= r + 0.5 * res {
                out.push(q);
            }
            // advance the lattice counter
            let mut k = 0;
            loop {
                if k == t {
                    return;
                }
                idx[k] += 1;
                if idx[k] <= steps {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }

    /// Per-branch lower-spine clearance factor: smallest lambda so that a
    /// ball of radius `dist(x, lower spine) / lambda` around a branch point x
    /// is indistinguishable from the blow-up there. Measured by bisection on
    /// a representative branch point against dense meshes of both sets.
    pub fn measure_branch_clearance(&self, branch: &SpineBranch) -> f64 {
        if branch.face.is_empty() {
            return 1.0; // minimal spine: nothing below to clear
        }
        let x = self.branch_interior_point(branch);
        let lower = branch.level - 1;
        let dlow = self.spine_distance(lower, &x);
        if !dlow.is_finite() || dlow < 1e-12 {
            return f64::INFINITY;
        }
        let local = blow_up_unchecked(self, &x).with_translation(x);
        let coincide = |rho: f64| -> bool {
            let r = rho * dlow;
            let res = r / 25.0;
            let tol = 20.0 * MEMBERSHIP_TOL * x.norm().max(1.0) + res * 1e-6;
            for q in self.densify_ball(&x, r, res) {
                if local.distance(&q) > tol {
                    return false;
                }
            }
            for q in local.densify_ball(&x, r, res) {
                if self.distance(&q) > tol {
                    return false;
                }
            }
            true
        };
        let mut lo = 0.0f64; // coincides
        let mut hi = 2.0f64;
        if coincide(hi) {
            return 1.05 / hi;
        }
        for _ in 0..12 {
            let mid = 0.5 * (lo + hi);
            if coincide(mid) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        if lo < 1e-6 {
            f64::INFINITY
        } else {
            1.05 / lo
        }
    }

    /// A representative point in the relative interior of a branch, at unit
    /// scale from the translation point.
    pub fn branch_interior_point(&self, branch: &SpineBranch) -> Vec4 {
        let gens = self.base.face_generators(&branch.face);
        let mut m = geom::ZERO;
        for g in &gens {
            m += g;
        }
        if let Some(u) = normalize(&m) {
            m = u;
        } else {
            // pure product branch: step along the first product axis
            let a = self.base.ambient_dim;
            m = geom::ZERO;
            if self.product_dim > 0 {
                m[a] = 1.0;
            }
        }
        self.to_world(&m)
    }

    /// Decide whether two positioned sets agree up to a rotation about their
    /// translation points. Candidate rotations are generated from direction
    /// tuples with matching Gram matrices; each is scored by the two-sided
    /// sampled sup distance on the unit ball.
    pub fn isometry_class_eq(&self, other: &ConeSet, tol: f64) -> bool {
        if self.dim() != other.dim()
            || self.type_label != other.type_label
            || self.base.pieces.len() != other.base.pieces.len()
            || self.base.dirs.len() != other.base.dirs.len()
            || self.ambient_dim != other.ambient_dim
        {
            return false;
        }
        let a = self.centered();
        let b = other.centered();
        let a_dirs: Vec<Vec4> = a.world_frame_dirs();
        let b_dirs: Vec<Vec4> = b.world_frame_dirs();
        // pick a spanning tuple from a's directions
        let mut tuple: Vec<usize> = Vec::new();
        {
            let mut basis: Vec<Vec4> = Vec::new();
            for (i, d) in a_dirs.iter().enumerate() {
                let mut w = *d;
                for u in &basis {
                    w -= u * u.dot(&w);
                }
                if w.norm() > 1e-9 {
                    basis.push(w / w.norm());
                    tuple.push(i);
                }
            }
        }
        if tuple.is_empty() {
            // both are pure planes of equal dimension
            return b_dirs.is_empty();
        }
        let score_tol = tol.max(1e-6);
        let probes = a.densify_ball(&geom::ZERO, 1.0, 1.0 / 18.0);
        let probes_b = b.densify_ball(&geom::ZERO, 1.0, 1.0 / 18.0);
        let mut images: Vec<Vec<usize>> = vec![Vec::new()];
        for &ti in &tuple {
            let mut next = Vec::new();
            for partial in &images {
                for (j, bd) in b_dirs.iter().enumerate() {
                    if partial.contains(&j) {
                        continue;
                    }
                    // Gram row must match
                    let ok = partial.iter().enumerate().all(|(k, &pj)| {
                        (a_dirs[tuple[k]].dot(&a_dirs[ti]) - b_dirs[pj].dot(bd)).abs() < 1e-6
                    }) && (a_dirs[ti].norm() - bd.norm()).abs() < 1e-6;
                    if ok {
                        let mut e = partial.clone();
                        e.push(j);
                        next.push(e);
                    }
                }
            }
            images = next;
            if images.is_empty() {
                return false;
            }
        }
        for img in images {
            // build rotation mapping a's frame onto b's candidate frame,
            // acting as identity on the orthogonal complement of the spans
            let fa: Vec<Vec4> = tuple.iter().map(|&i| a_dirs[i]).collect();
            let fb: Vec<Vec4> = img.iter().map(|&j| b_dirs[j]).collect();
            let Some(rot) = rotation_between_frames(&fa, &fb, a.ambient_dim) else {
                continue;
            };
            // product factors must also align: check via spine distance below
            let mut worst = 0.0f64;
            for p in &probes {
                worst = worst.max(b.distance(&(rot * p)));
                if worst > score_tol {
                    break;
                }
            }
            if worst > score_tol {
                continue;
            }
            let rot_t = rot.transpose();
            for p in &probes_b {
                worst = worst.max(a.distance(&(rot_t * p)));
                if worst > score_tol {
                    break;
                }
            }
            if worst <= score_tol {
                return true;
            }
        }
        false
    }

    fn centered(&self) -> ConeSet {
        let mut c = self.clone();
        c.translation = geom::ZERO;
        c
    }

    /// All pooled directions rotated to world coordinates, followed by the
    /// product-factor axes.
    fn world_frame_dirs(&self) -> Vec<Vec4> {
        let mut v: Vec<Vec4> = self
            .base
            .dirs
            .iter()
            .map(|d| self.dir_to_world(d))
            .collect();
        let a = self.base.ambient_dim;
        for j in 0..self.product_dim {
            let mut e = geom::ZERO;
            e[a + j] = 1.0;
            v.push(self.dir_to_world(&e));
        }
        v
    }
}

/// Orthogonal map sending frame `fa` to `fb` (entrywise), identity on the
/// shared orthogonal complement. None if the Gram matrices disagree.
fn rotation_between_frames(fa: &[Vec4], fb: &[Vec4], dim: usize) -> Option<Mat4> {
    let ba = orthonormalize(fa);
    let bb = orthonormalize(fb);
    if ba.len() != bb.len() {
        return None;
    }
    // complete both bases to the ambient dimension
    let mut full_a = ba.clone();
    let mut full_b = bb.clone();
    for i in 0..dim {
        let mut e = geom::ZERO;
        e[i] = 1.0;
        let mut wa = e;
        for u in &full_a {
            wa -= u * u.dot(&wa);
        }
        if wa.norm() > 1e-9 {
            full_a.push(wa / wa.norm());
        }
        let mut wb = e;
        for u in &full_b {
            wb -= u * u.dot(&wb);
        }
        if wb.norm() > 1e-9 {
            full_b.push(wb / wb.norm());
        }
    }
    if full_a.len() < dim || full_b.len() < dim {
        return None;
    }
    let mut ma = Mat4::identity();
    let mut mb = Mat4::identity();
    for c in 0..dim {
        for r in 0..4 {
            ma[(r, c)] = full_a[c][r];
            mb[(r, c)] = full_b[c][r];
        }
    }
    Some(mb * ma.transpose())
}

/// Nearest point of a branch to `p`, with the distance. Free-function form
/// of `ConeSet::project_branch`.
pub fn project_to_branch(cs: &ConeSet, branch: &SpineBranch, p: &Vec4) -> (Vec4, f64) {
    cs.project_branch(branch, p)
}

/// The local model of `cs` at a spine point `x`: the cone over `W - x` near
/// x. Checks that the ball `lambda * B(x, r)` stays clear of the next lower
/// spine before constructing. The returned set is centered at the origin.
pub fn blow_up(cs: &ConeSet, x: &Vec4, r: f64, lambda: f64) -> Result<ConeSet, ConeError> {
    let branch = cs.locate(x, MEMBERSHIP_TOL)?;
    if !branch.face.is_empty() {
        let avail = cs.spine_distance(branch.level - 1, x);
        let required = lambda * r;
        if avail <= required {
            return Err(ConeError::TooCloseToLowerSpine { required, available: avail });
        }
    }
    Ok(blow_up_unchecked(cs, x))
}

fn blow_up_unchecked(cs: &ConeSet, x: &Vec4) -> ConeSet {
    let branch = cs
        .locate(x, 1e-6 * x.norm().max(1.0))
        .expect("blow-up point must lie on the set");
    let face = &branch.face;
    if face.is_empty() {
        let mut w = cs.clone();
        w.translation = geom::ZERO;
        return w;
    }
    let face_gens = cs.base.face_generators(face);
    let face_basis = orthonormalize(&face_gens);
    // link directions of the pieces containing the face, in the model frame
    let mut new_dirs: Vec<Vec4> = Vec::new();
    let mut new_pieces: Vec<Vec<usize>> = Vec::new();
    for piece in cs.base.pieces.iter().filter(|p| face.iter().all(|i| p.contains(i))) {
        let mut idx = Vec::new();
        for &gi in piece.iter().filter(|gi| !face.contains(gi)) {
            let g = cs.base.dirs[gi];
            let w = g - project_span(&face_basis, &g);
            let u = normalize(&w).expect("non-flat faces leave a nonzero link direction");
            let k = match new_dirs.iter().position(|d| (d - u).norm() < DIRECTION_MATCH_TOL) {
                Some(k) => k,
                None => {
                    new_dirs.push(u);
                    new_dirs.len() - 1
                }
            };
            idx.push(k);
        }
        idx.sort_unstable();
        new_pieces.push(idx);
    }
    new_pieces.sort();
    new_pieces.dedup();
    // new model layout: link span first, then old product plus the face span
    let a_old = cs.base.ambient_dim;
    let link_basis = orthonormalize(&new_dirs);
    let a_new = link_basis.len();
    let m_new = cs.product_dim + face_basis.len();
    // assemble the change of frame (new model -> old model)
    let mut cols: Vec<Vec4> = Vec::new();
    cols.extend_from_slice(&link_basis);
    for j in 0..cs.product_dim {
        let mut e = geom::ZERO;
        e[a_old + j] = 1.0;
        cols.push(e);
    }
    cols.extend_from_slice(&face_basis);
    // pad with whatever of the old frame is left
    for i in 0..4 {
        let mut e = geom::ZERO;
        e[i] = 1.0;
        let mut w = e;
        for u in &cols {
            w -= u * u.dot(&w);
        }
        if w.norm() > 1e-9 {
            cols.push(w / w.norm());
        }
    }
    let mut q = Mat4::identity();
    for (c, col) in cols.iter().enumerate().take(4) {
        for r in 0..4 {
            q[(r, c)] = col[r];
        }
    }
    // express link directions in the new leading coordinates
    let link_coords: Vec<Vec4> = new_dirs
        .iter()
        .map(|d| {
            let mut v = geom::ZERO;
            for (k, b) in link_basis.iter().enumerate() {
                v[k] = b.dot(d);
            }
            v
        })
        .collect();
    let lattice = lattice_from_pieces(&new_pieces);
    let base = ComplexCone {
        ambient_dim: a_new,
        dim: new_pieces.first().map(|p| p.len()).unwrap_or(0),
        dirs: link_coords,
        pieces: new_pieces,
        lattice,
    };
    ConeSet {
        type_label: m_new,
        base,
        product_dim: m_new,
        ambient_dim: cs.ambient_dim,
        rotation: cs.rotation * q,
        translation: geom::ZERO,
    }
}

fn lattice_from_pieces(pieces: &[Vec<usize>]) -> FaceLattice {
    let mut faces: Vec<Vec<usize>> = Vec::new();
    for piece in pieces {
        let t = piece.len();
        for mask in 0u32..(1 << t) {
            let f: Vec<usize> =
                (0..t).filter(|i| mask >> i & 1 == 1).map(|i| piece[i]).collect();
            faces.push(f);
        }
    }
    faces.sort_by(|a, b| (a.len(), a.as_slice()).cmp(&(b.len(), b.as_slice())));
    faces.dedup();
    FaceLattice { faces }
}

/// Smallest cone angle across a catalog; straight angle for a catalog of
/// planes only.
pub fn alpha(catalog: &[ConeSet]) -> f64 {
    catalog
        .iter()
        .map(|c| c.base.angle(512))
        .fold(std::f64::consts::PI, f64::min)
}

/// Built-in reference shapes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CatalogKind {
    /// Affine d-plane.
    Plane(usize),
    /// Three coplanar rays at equal angles, crossed with R^m.
    YTimes(usize),
    /// Cone over the edge graph of the regular tetrahedron, crossed with
    /// lines as the ambient dimension requires.
    TSet,
    /// Single simple cone over k equiangular generators.
    Simplex(usize),
}

impl CatalogKind {
    pub fn parse(name: &str) -> Result<Self, ConeError> {
        let lower = name.to_ascii_lowercase();
        if let Some(rest) = lower.strip_prefix("plane") {
            let d = rest.trim_matches(|c| c == '(' || c == ')' || c == '-' || c == '_');
            let d: usize = d.parse().map_err(|_| ConeError::UnknownCatalogEntry(name.into()))?;
            return Ok(CatalogKind::Plane(d));
        }
        if lower == "t_set" || lower == "tset" || lower == "t" {
            return Ok(CatalogKind::TSet);
        }
        if let Some(rest) = lower.strip_prefix("y_times") {
            let d = rest.trim_matches(|c| c == '(' || c == ')' || c == '-' || c == '_');
            let d: usize = d.parse().map_err(|_| ConeError::UnknownCatalogEntry(name.into()))?;
            return Ok(CatalogKind::YTimes(d));
        }
        if lower == "y" {
            return Ok(CatalogKind::YTimes(0));
        }
        if let Some(rest) = lower.strip_prefix("simplex_cone") {
            let d = rest.trim_matches(|c| c == '(' || c == ')' || c == '-' || c == '_');
            let d: usize = d.parse().map_err(|_| ConeError::UnknownCatalogEntry(name.into()))?;
            return Ok(CatalogKind::Simplex(d));
        }
        Err(ConeError::UnknownCatalogEntry(name.into()))
    }
}

pub fn y_directions() -> Vec<Vec4> {
    vec![
        vec_from(&[1.0, 0.0]),
        vec_from(&[-0.5, 3f64.sqrt() / 2.0]),
        vec_from(&[-0.5, -(3f64.sqrt()) / 2.0]),
    ]
}

pub fn tetrahedron_directions() -> Vec<Vec4> {
    let s = 1.0 / 3f64.sqrt();
    vec![
        vec_from(&[s, s, s]),
        vec_from(&[s, -s, -s]),
        vec_from(&[-s, s, -s]),
        vec_from(&[-s, -s, s]),
    ]
}

/// Construct a catalog reference set in the given ambient dimension,
/// identity pose.
pub fn catalog_reference(kind: CatalogKind, ambient_dim: usize) -> Result<ConeSet, ConeError> {
    match kind {
        CatalogKind::Plane(d) => {
            if d >= ambient_dim {
                return Err(ConeError::DoesNotFit);
            }
            ConeSet::new(ComplexCone::trivial(0), d, ambient_dim)
        }
        CatalogKind::YTimes(m) => {
            let pieces: Vec<SimpleCone> = y_directions()
                .into_iter()
                .map(|d| SimpleCone::new(2, vec![d]).expect("unit rays"))
                .collect();
            let base = validate_complex_cone(&pieces, MEMBERSHIP_TOL)?;
            ConeSet::new(base, m, ambient_dim)
        }
        CatalogKind::TSet => {
            let v = tetrahedron_directions();
            let mut pieces = Vec::new();
            for i in 0..4 {
                for j in i + 1..4 {
                    pieces.push(SimpleCone::new(3, vec![v[i], v[j]]).expect("unit edges"));
                }
            }
            let base = validate_complex_cone(&pieces, MEMBERSHIP_TOL)?;
            let m = ambient_dim.saturating_sub(3);
            ConeSet::new(base, m, ambient_dim)
        }
        CatalogKind::Simplex(k) => {
            if k == 0 || k > ambient_dim {
                return Err(ConeError::DoesNotFit);
            }
            // equiangular unit generators with pairwise inner product 1/2,
            // built by Cholesky of the Gram matrix
            let mut gens: Vec<Vec4> = Vec::new();
            let mut l = [[0.0f64; 4]; 4];
            for i in 0..k {
                for j in 0..=i {
                    let target = if i == j { 1.0 } else { 0.5 };
                    let mut s = target;
                    for t in 0..j {
                        s -= l[i][t] * l[j][t];
                    }
                    if i == j {
                        l[i][j] = s.max(0.0).sqrt();
                    } else {
                        l[i][j] = s / l[j][j];
                    }
                }
            }
            for i in 0..k {
                gens.push(vec_from(&l[i][..k.min(4)]));
            }
            let piece = SimpleCone::new(k, gens)?;
            let base = validate_complex_cone(&[piece], MEMBERSHIP_TOL)?;
            ConeSet::new(base, 0, ambient_dim)
        }
    }
}

/// The reference family used throughout: one shape per type, lowest first.
/// In R^3 these are the tetrahedral-edge cone (type 0), Y x R (type 1), and
/// the plane (type 2); in R^4 each gains a line factor.
pub fn standard_catalog(ambient_dim: usize) -> Vec<ConeSet> {
    let mut v = Vec::new();
    if ambient_dim >= 3 {
        v.push(catalog_reference(CatalogKind::TSet, ambient_dim).expect("catalog T"));
        v.push(
            catalog_reference(CatalogKind::YTimes(ambient_dim - 2), ambient_dim)
                .expect("catalog Y"),
        );
        v.push(
            catalog_reference(CatalogKind::Plane(ambient_dim - 1), ambient_dim)
                .expect("catalog plane"),
        );
    }
    v
}
