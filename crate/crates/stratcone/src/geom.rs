//! Small geometric helpers shared by every module: projections onto convex
//! cones spanned by up to four generators, orthonormalization, direction
//! lattices on spheres, smooth bump profiles, rotations, and a uniform-grid
//! point index.

use nalgebra::{Matrix4, Vector4};
use rand::Rng;
use std::collections::HashMap;

pub type Vec4 = Vector4<f64>;
pub type Mat4 = Matrix4<f64>;

pub const ZERO: Vec4 = Vec4::new(0.0, 0.0, 0.0, 0.0);

/// Build a vector from the first `coords.len()` coordinates, zero-padded.
pub fn vec_from(coords: &[f64]) -> Vec4 {
    let mut v = ZERO;
    for (i, &c) in coords.iter().enumerate().take(4) {
        v[i] = c;
    }
    v
}

pub fn normalize(v: &Vec4) -> Option<Vec4> {
    let n = v.norm();
    if n < 1e-13 {
        None
    } else {
        Some(v / n)
    }
}

/// Solve `a x = b` for a symmetric positive definite system of size `n <= 4`
/// by Gaussian elimination with partial pivoting. Returns None on (near)
/// singularity.
pub fn solve_small(n: usize, a: &[[f64; 4]; 4], b: &[f64; 4]) -> Option<[f64; 4]> {
    let mut m = *a;
    let mut rhs = *b;
    let mut perm = [0usize, 1, 2, 3];
    for col in 0..n {
        let mut piv = col;
        let mut best = m[perm[col]][col].abs();
        for row in col + 1..n {
            let v = m[perm[row]][col].abs();
            if v > best {
                best = v;
                piv = row;
            }
        }
        if best < 1e-14 {
            return None;
        }
        perm.swap(col, piv);
        let prow = perm[col];
        for row in col + 1..n {
            let r = perm[row];
            let f = m[r][col] / m[prow][col];
            for k in col..n {
                m[r][k] -= f * m[prow][k];
            }
            rhs[r] -= f * rhs[prow];
        }
    }
    let mut x = [0.0f64; 4];
    for col in (0..n).rev() {
        let r = perm[col];
        let mut s = rhs[r];
        for k in col + 1..n {
            s -= m[r][k] * x[k];
        }
        x[col] = s / m[r][col];
    }
    Some(x)
}

/// Nearest point of the convex cone `{sum_i c_i g_i : c_i >= 0}` to `p`,
/// together with the coefficients. Exact for up to four generators: the
/// active face of the true projection appears among the coordinate subsets,
/// and every subset candidate with nonnegative coefficients lies inside the
/// cone, so the feasible candidate at minimal distance is the projection.
pub fn project_cone(gens: &[Vec4], p: &Vec4) -> (Vec4, [f64; 4]) {
    let k = gens.len();
    debug_assert!(k <= 4);
    let mut best_q = ZERO;
    let mut best_c = [0.0f64; 4];
    let mut best_d2 = p.norm_squared();
    if k == 0 {
        return (best_q, best_c);
    }
    let mut gram = [[0.0f64; 4]; 4];
    let mut gp = [0.0f64; 4];
    for i in 0..k {
        for j in 0..k {
            gram[i][j] = gens[i].dot(&gens[j]);
        }
        gp[i] = gens[i].dot(p);
    }
    for mask in 1u32..(1 << k) {
        let idx: Vec<usize> = (0..k).filter(|i| mask >> i & 1 == 1).collect();
        let s = idx.len();
        let mut a = [[0.0f64; 4]; 4];
        let mut b = [0.0f64; 4];
        for (ii, &i) in idx.iter().enumerate() {
            for (jj, &j) in idx.iter().enumerate() {
                a[ii][jj] = gram[i][j];
            }
            b[ii] = gp[i];
        }
        let Some(sol) = solve_small(s, &a, &b) else {
            continue;
        };
        if sol[..s].iter().any(|&c| c < -1e-12) {
            continue;
        }
        let mut q = ZERO;
        let mut coeffs = [0.0f64; 4];
        for (ii, &i) in idx.iter().enumerate() {
            let c = sol[ii].max(0.0);
            coeffs[i] = c;
            q += gens[i] * c;
        }
        let d2 = (p - q).norm_squared();
        if d2 < best_d2 - 1e-300 || (d2 < best_d2 + 1e-15 && coeffs_tighter(&coeffs, &best_c, k)) {
            best_d2 = d2;
            best_q = q;
            best_c = coeffs;
        }
    }
    (best_q, best_c)
}

/// Among numerically tied candidates prefer the one with fewer active
/// generators, so the reported support is the minimal face.
fn coeffs_tighter(a: &[f64; 4], b: &[f64; 4], k: usize) -> bool {
    let na = a[..k].iter().filter(|&&c| c > 1e-12).count();
    let nb = b[..k].iter().filter(|&&c| c > 1e-12).count();
    na < nb
}

pub fn dist_to_cone(gens: &[Vec4], p: &Vec4) -> f64 {
    let (q, _) = project_cone(gens, p);
    (p - q).norm()
}

/// Gram-Schmidt, dropping near-null directions.
pub fn orthonormalize(vecs: &[Vec4]) -> Vec<Vec4> {
    let mut basis: Vec<Vec4> = Vec::with_capacity(vecs.len());
    for v in vecs {
        let mut w = *v;
        for b in &basis {
            w -= b * b.dot(&w);
        }
        // repeat once to fight cancellation
        for b in &basis {
            w -= b * b.dot(&w);
        }
        if let Some(u) = normalize(&w) {
            basis.push(u);
        }
    }
    basis
}

pub fn project_span(basis: &[Vec4], p: &Vec4) -> Vec4 {
    let mut q = ZERO;
    for b in basis {
        q += b * b.dot(p);
    }
    q
}

/// Deterministic near-uniform direction set on the unit sphere of R^d,
/// returned in the coordinates of the given orthonormal basis' span.
/// d = 1 gives the two signs, d = 2 a uniform circle, d = 3 the Fibonacci
/// sphere, d = 4 a seeded-but-fixed normalized Gaussian set.
pub fn sphere_directions(basis: &[Vec4], n: usize) -> Vec<Vec4> {
    let d = basis.len();
    let mut out = Vec::new();
    match d {
        0 => {}
        1 => {
            out.push(basis[0]);
            out.push(-basis[0]);
        }
        2 => {
            let m = n.max(8);
            for i in 0..m {
                let a = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                out.push(basis[0] * a.cos() + basis[1] * a.sin());
            }
        }
        3 => {
            let m = n.max(16);
            let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
            for i in 0..m {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / m as f64;
                let rad = (1.0 - z * z).max(0.0).sqrt();
                let a = golden * i as f64;
                out.push(basis[0] * (rad * a.cos()) + basis[1] * (rad * a.sin()) + basis[2] * z);
            }
        }
        _ => {
            let m = n.max(32);
            let mut rng = crate::geom::seeded_rng(0x5EED_D14Eu64 ^ m as u64);
            while out.len() < m {
                let mut v = ZERO;
                for b in basis {
                    v += b * gaussian(&mut rng);
                }
                if let Some(u) = normalize(&v) {
                    out.push(u);
                }
            }
        }
    }
    out
}

pub type SeededRng = rand_chacha::ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    use rand::SeedableRng;
    SeededRng::seed_from_u64(seed)
}

pub fn gaussian(rng: &mut impl Rng) -> f64 {
    // Box-Muller; one value per call is plenty here.
    let u1: f64 = rng.gen_range(1e-12..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Quintic smoothstep: 0 for s <= 0, 1 for s >= 1, C^2 across the joints.
pub fn smoothstep(s: f64) -> f64 {
    let t = s.clamp(0.0, 1.0);
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

/// Bump profile that is 1 on [0, a], 0 beyond b, smooth in between.
pub fn plateau(dist: f64, a: f64, b: f64) -> f64 {
    if dist <= a {
        1.0
    } else if dist >= b {
        0.0
    } else {
        1.0 - smoothstep((dist - a) / (b - a))
    }
}

/// Matrix exponential of a (small) 4x4 matrix by scaling and squaring with a
/// Taylor core. Used for skew matrices, where it lands on the rotation group.
pub fn mat_exp(m: &Mat4) -> Mat4 {
    let norm = m.norm();
    let squarings = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as u32
    } else {
        0
    };
    let scaled = m / 2f64.powi(squarings as i32);
    let mut term = Mat4::identity();
    let mut sum = Mat4::identity();
    for k in 1..16 {
        term = term * scaled / k as f64;
        sum += term;
    }
    let mut r = sum;
    for _ in 0..squarings {
        r = r * r;
    }
    r
}

/// Skew matrix with independent entries for the rotation planes of R^dim:
/// 3 parameters for dim 3, 6 for dim 4.
pub fn skew_from_params(dim: usize, params: &[f64]) -> Mat4 {
    let mut m = Mat4::zeros();
    let planes: &[(usize, usize)] = if dim <= 3 {
        &[(0, 1), (0, 2), (1, 2)]
    } else {
        &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
    };
    for (k, &(i, j)) in planes.iter().enumerate() {
        let v = params.get(k).copied().unwrap_or(0.0);
        m[(i, j)] = v;
        m[(j, i)] = -v;
    }
    m
}

pub fn rotation_param_count(dim: usize) -> usize {
    if dim <= 3 {
        3
    } else {
        6
    }
}

/// Haar-ish random rotation of the first `dim` coordinates (identity on the
/// rest): QR of a Gaussian block, sign-fixed.
pub fn random_rotation(dim: usize, rng: &mut impl Rng) -> Mat4 {
    let mut g = Mat4::identity();
    let mut block = nalgebra::DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        for j in 0..dim {
            block[(i, j)] = gaussian(rng);
        }
    }
    let qr = block.qr();
    let q = qr.q();
    let r = qr.r();
    for i in 0..dim {
        let s = if r[(i, i)] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..dim {
            g[(j, i)] = q[(j, i)] * s;
        }
    }
    g
}

/// Uniform-grid index over a fixed point list for radius queries.
#[derive(Debug, Clone)]
pub struct GridIndex {
    cell: f64,
    map: HashMap<[i32; 4], Vec<u32>>,
    occ_lo: [i32; 4],
    occ_hi: [i32; 4],
}

impl GridIndex {
    pub fn build(points: &[Vec4], cell: f64) -> Self {
        let cell = if cell.is_finite() && cell > 1e-12 { cell } else { 1.0 };
        let mut map: HashMap<[i32; 4], Vec<u32>> = HashMap::new();
        let mut occ_lo = [i32::MAX; 4];
        let mut occ_hi = [i32::MIN; 4];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key(p, cell);
            for d in 0..4 {
                occ_lo[d] = occ_lo[d].min(k[d]);
                occ_hi[d] = occ_hi[d].max(k[d]);
            }
            map.entry(k).or_default().push(i as u32);
        }
        if map.is_empty() {
            occ_lo = [0; 4];
            occ_hi = [-1; 4];
        }
        GridIndex { cell, map, occ_lo, occ_hi }
    }

    fn key(p: &Vec4, cell: f64) -> [i32; 4] {
        let mut k = [0i32; 4];
        for i in 0..4 {
            k[i] = (p[i] / cell).floor() as i32;
        }
        k
    }

    /// Visit indices of all stored points in cells overlapping B(p, r).
    /// The cell box is clamped to the occupied range, and a query box larger
    /// than the number of occupied cells walks the cells instead.
    pub fn for_each_in_ball(&self, p: &Vec4, r: f64, mut f: impl FnMut(u32)) {
        let mut lo = Self::key(&(p - Vec4::repeat(r)), self.cell);
        let mut hi = Self::key(&(p + Vec4::repeat(r)), self.cell);
        let mut boxes: i128 = 1;
        for d in 0..4 {
            lo[d] = lo[d].max(self.occ_lo[d]);
            hi[d] = hi[d].min(self.occ_hi[d]);
            if lo[d] > hi[d] {
                return;
            }
            boxes *= (hi[d] - lo[d]) as i128 + 1;
        }
        if boxes > self.map.len() as i128 {
            for (k, v) in &self.map {
                if (0..4).all(|d| k[d] >= lo[d] && k[d] <= hi[d]) {
                    for &i in v {
                        f(i);
                    }
                }
            }
            return;
        }
        for a in lo[0]..=hi[0] {
            for b in lo[1]..=hi[1] {
                for c in lo[2]..=hi[2] {
                    for d in lo[3]..=hi[3] {
                        if let Some(v) = self.map.get(&[a, b, c, d]) {
                            for &i in v {
                                f(i);
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn cell(&self) -> f64 {
        self.cell
    }
}
