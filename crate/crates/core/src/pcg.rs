//! Preconditioned conjugate gradients on a constrained subspace.

use crate::reduce::dot;

/// A symmetric positive (semi-)definite system restricted to a subspace.
pub trait SpdSystem: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64]) -> Vec<f64>;
    fn precondition(&self, r: &[f64]) -> Vec<f64>;
    /// Orthogonal projection onto the admissible subspace (e.g. zero-mean nodes).
    fn project(&self, x: &mut [f64]);
}

#[derive(Debug, Clone)]
pub struct PcgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    /// `‖r_k‖_{M⁻¹} / ‖b‖_{M⁻¹}`, starting with the initial residual.
    pub residual_history: Vec<f64>,
    /// `½ xᵀA x − bᵀx` at every iterate, starting with the initial guess.
    pub energy_history: Vec<f64>,
    pub converged: bool,
    /// Set when `pᵀA p ≤ 0` was met (operator not positive on the subspace).
    pub breakdown: bool,
    /// CG step lengths and direction updates, for Lanczos spectrum estimates.
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Solves `A x = b` on the subspace, stopping once the preconditioned
/// residual norm drops below `tol` relative to that of `b`.
pub fn pcg<S: SpdSystem + ?Sized>(
    sys: &S,
    b: &[f64],
    x0: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
) -> PcgOutcome {
    let n = sys.dim();
    let mut b = b.to_vec();
    sys.project(&mut b);
    let mut x = match x0 {
        Some(x0) => x0.to_vec(),
        None => vec![0.0; n],
    };
    sys.project(&mut x);

    let mut r = b.clone();
    if x.iter().any(|&v| v != 0.0) {
        let ax = sys.apply(&x);
        axpy(&mut r, -1.0, &ax);
    }
    sys.project(&mut r);

    let mut zb = sys.precondition(&b);
    sys.project(&mut zb);
    let b_norm = dot(&b, &zb).max(0.0).sqrt();

    let energy = |x: &[f64], r: &[f64]| -> f64 {
        // ½xᵀAx − bᵀx = −½ xᵀ(b + r) since Ax = b − r
        -0.5 * (dot(x, &b) + dot(x, r))
    };

    let mut out = PcgOutcome {
        x: Vec::new(),
        iterations: 0,
        residual_history: Vec::new(),
        energy_history: vec![energy(&x, &r)],
        converged: false,
        breakdown: false,
        alphas: Vec::new(),
        betas: Vec::new(),
    };

    if b_norm == 0.0 {
        out.residual_history.push(0.0);
        out.converged = true;
        out.x = x;
        return out;
    }

    let mut z = sys.precondition(&r);
    sys.project(&mut z);
    let mut rz = dot(&r, &z);
    out.residual_history.push(rz.max(0.0).sqrt() / b_norm);
    if out.residual_history[0] <= tol {
        out.converged = true;
        out.x = x;
        return out;
    }
    let mut p = z.clone();

    while out.iterations < max_iter {
        let q = sys.apply(&p);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            out.breakdown = true;
            break;
        }
        let alpha = rz / pq;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &q);
        sys.project(&mut r);
        out.iterations += 1;
        out.alphas.push(alpha);
        out.energy_history.push(energy(&x, &r));

        z = sys.precondition(&r);
        sys.project(&mut z);
        let rz_new = dot(&r, &z);
        let res = rz_new.max(0.0).sqrt() / b_norm;
        out.residual_history.push(res);
        if res <= tol {
            out.converged = true;
            break;
        }
        let beta = rz_new / rz;
        out.betas.push(beta);
        rz = rz_new;
        for (pi, zi) in p.iter_mut().zip(&z) {
            *pi = zi + beta * *pi;
        }
    }
    sys.project(&mut x);
    out.x = x;
    out
}

/// Ritz values of the preconditioned operator from CG coefficients
/// (the Lanczos tridiagonal matrix), sorted ascending.
pub fn lanczos_ritz_values(alphas: &[f64], betas: &[f64]) -> Vec<f64> {
    let m = alphas.len();
    if m == 0 {
        return Vec::new();
    }
    let mut t = nalgebra::DMatrix::<f64>::zeros(m, m);
    for j in 0..m {
        let mut d = 1.0 / alphas[j];
        if j > 0 {
            d += betas[j - 1] / alphas[j - 1];
        }
        t[(j, j)] = d;
        if j + 1 < m && j < betas.len() {
            let off = betas[j].sqrt() / alphas[j];
            t[(j, j + 1)] = off;
            t[(j + 1, j)] = off;
        }
    }
    let mut ev: Vec<f64> = t.symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}
