//! Closed-form eigenvalues of small symmetric matrices.
//!
//! Coefficient matrices here are 2x2 or 3x3 and positive semidefinite, so a
//! scaled trigonometric solve is accurate enough; no general eigensolver is
//! needed.

/// Eigenvalues of [[a, b], [b, c]], ascending.
pub fn sym_eigen_2(a: f64, b: f64, c: f64) -> [f64; 2] {
    let mean = 0.5 * (a + c);
    let diff = 0.5 * (a - c);
    let r = (diff * diff + b * b).sqrt();
    [mean - r, mean + r]
}

/// Eigenvalues of a symmetric 3x3 matrix packed as
/// `[a11, a12, a13, a22, a23, a33]`, ascending.
pub fn sym_eigen_3(m: &[f64; 6]) -> [f64; 3] {
    let (a11, a12, a13, a22, a23, a33) = (m[0], m[1], m[2], m[3], m[4], m[5]);
    let p1 = a12 * a12 + a13 * a13 + a23 * a23;
    let q = (a11 + a22 + a33) / 3.0;
    let p2 = (a11 - q).powi(2) + (a22 - q).powi(2) + (a33 - q).powi(2) + 2.0 * p1;
    let scale = a11.abs().max(a22.abs()).max(a33.abs()).max(p1.sqrt());
    if p2.sqrt() <= 1e-14 * scale.max(1e-300) {
        // effectively a multiple of the identity
        return [q, q, q];
    }
    let p = (p2 / 6.0).sqrt();
    // B = (A - qI)/p, r = det(B)/2 in [-1, 1] up to round-off
    let b11 = (a11 - q) / p;
    let b22 = (a22 - q) / p;
    let b33 = (a33 - q) / p;
    let b12 = a12 / p;
    let b13 = a13 / p;
    let b23 = a23 / p;
    let det_b = b11 * (b22 * b33 - b23 * b23) - b12 * (b12 * b33 - b23 * b13)
        + b13 * (b12 * b23 - b22 * b13);
    let r = (det_b / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let two_pi_third = 2.0 * std::f64::consts::PI / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + two_pi_third).cos();
    let mid = 3.0 * q - hi - lo;
    // The trig solve loses ~sqrt(eps) near repeated roots; one Rayleigh
    // quotient through an approximate null vector restores full precision.
    let mut out = [polish(m, lo), polish(m, mid), polish(m, hi)];
    out.sort_by(f64::total_cmp);
    out
}

/// Rayleigh-quotient refinement of an approximate eigenvalue.
fn polish(m: &[f64; 6], lambda: f64) -> f64 {
    let v = null_vector(m, lambda);
    let n2 = v[0] * v[0] + v[1] * v[1] + v[2] * v[2];
    if n2 == 0.0 {
        return lambda;
    }
    let av = apply(m, &v);
    (v[0] * av[0] + v[1] * av[1] + v[2] * av[2]) / n2
}

fn apply(m: &[f64; 6], v: &[f64; 3]) -> [f64; 3] {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[1] * v[0] + m[3] * v[1] + m[4] * v[2],
        m[2] * v[0] + m[4] * v[1] + m[5] * v[2],
    ]
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm2(v: &[f64; 3]) -> f64 {
    v[0] * v[0] + v[1] * v[1] + v[2] * v[2]
}

/// Approximate eigenvector of the symmetric matrix for eigenvalue `lambda`:
/// the largest cross product of columns of `A - λI`, falling back to a
/// vector orthogonal to the dominant column when the kernel is 2-dimensional.
fn null_vector(m: &[f64; 6], lambda: f64) -> [f64; 3] {
    let c0 = [m[0] - lambda, m[1], m[2]];
    let c1 = [m[1], m[3] - lambda, m[4]];
    let c2 = [m[2], m[4], m[5] - lambda];
    let candidates = [cross(&c0, &c1), cross(&c1, &c2), cross(&c2, &c0)];
    let mut best = candidates[0];
    for c in &candidates[1..] {
        if norm2(c) > norm2(&best) {
            best = *c;
        }
    }
    let col_scale = norm2(&c0).max(norm2(&c1)).max(norm2(&c2));
    if norm2(&best) > 1e-24 * col_scale * col_scale {
        return best;
    }
    // rank(A - λI) <= 1: any vector orthogonal to the dominant column works
    let mut p = c0;
    if norm2(&c1) > norm2(&p) {
        p = c1;
    }
    if norm2(&c2) > norm2(&p) {
        p = c2;
    }
    if norm2(&p) == 0.0 {
        return [1.0, 0.0, 0.0];
    }
    let x = cross(&p, &[1.0, 0.0, 0.0]);
    if norm2(&x) > 1e-12 * norm2(&p) {
        x
    } else {
        cross(&p, &[0.0, 1.0, 0.0])
    }
}

/// Smallest eigenvalue of a packed symmetric matrix of dimension `dim`
/// (packing per [`crate::grid::sym_index`]; for d = 2 only the first three
/// slots are used).
pub fn lambda_min(dim: usize, m: &[f64; 6]) -> f64 {
    match dim {
        2 => sym_eigen_2(m[0], m[1], m[2])[0],
        _ => sym_eigen_3(m)[0],
    }
}

/// Largest eigenvalue, packed as in [`lambda_min`].
pub fn lambda_max(dim: usize, m: &[f64; 6]) -> f64 {
    match dim {
        2 => sym_eigen_2(m[0], m[1], m[2])[1],
        _ => sym_eigen_3(m)[2],
    }
}
