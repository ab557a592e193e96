//! Solution routes for the cell problem.
//!
//! * strain-driven: PCG for the periodic fluctuation of `u_A = A y + φ_A`;
//! * stress-driven: PCG on the macro-augmented system `[B | φ]`, followed by
//!   an exact correction of the mean stress;
//! * Uzawa: alternating `σ`-minimization and `v`-ascent on `𝓛̃(σ, v)`;
//! * strain route: the strain fields `ē = e(u_A) − A` and `ẽ = e(w_S)`.
//!
//! Uzawa sign convention: with `σ = −C ∇s v` the dual variable tends to
//! `v = −w_S` and the stress iterate tends to `+σ_S = C e(w_S)`.

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{cell_average, VoxelCell};
use crate::error::{Error, Result};
use crate::formulations::{energy_j, energy_k, g, MacroData};
use crate::operator::{remove_nodal_mean, Preconditioner, PreconditionerKind, StiffnessOperator, MACRO_DOFS};
use crate::pcg::{lanczos_ritz_values, pcg, PcgOutcome, SpdSystem};
use crate::reduce;
use crate::spaces::{CellSpace, LinPerField, NodalField, QuadField};
use crate::tensor::{invert, SymMat3};

/// Step length rule for the Uzawa iteration.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub enum UzawaStep {
    /// `2 / (λ_max + λ_min)` from Lanczos estimates of the preconditioned spectrum.
    Auto,
    Fixed(f64),
}

/// Lanczos steps used by [`UzawaStep::Auto`].
pub const AUTO_STEP_PROBES: usize = 20;
/// Consecutive gap increases after which Uzawa gives up.
pub const STEP_TOO_LARGE_RUN: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SolveParams {
    pub tol: f64,
    pub max_iter: usize,
    pub uzawa_step: UzawaStep,
    pub seed: u64,
    pub preconditioner: PreconditionerKind,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            tol: 1e-9,
            max_iter: 10_000,
            uzawa_step: UzawaStep::Auto,
            seed: 0,
            preconditioner: PreconditionerKind::Reference,
        }
    }
}

impl SolveParams {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::validation("tol", "must be a positive finite number"));
        }
        if self.max_iter < 1 {
            return Err(Error::validation("max_iter", "must be at least 1"));
        }
        if let UzawaStep::Fixed(r) = self.uzawa_step {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::validation("uzawa_step", "must be positive or `auto`"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, serde::Serialize)]
pub struct SolveReport {
    pub method: String,
    pub iterations: usize,
    /// Preconditioned residual norm relative to the right-hand side, per iterate.
    pub residual_history: Vec<f64>,
    /// Objective at each iterate (`J`, `K`, or the Uzawa dual value).
    pub energy_history: Vec<f64>,
    pub final_energy: f64,
    /// Uzawa only: estimated dual suboptimality per iterate.
    pub gap_history: Vec<f64>,
    pub converged: bool,
    /// Uzawa only: the step length used.
    pub step: Option<f64>,
    /// Uzawa only: extreme Ritz values of the preconditioned operator.
    pub spectrum: Option<(f64, f64)>,
    /// Uzawa only: `|g(σ) + K(w)|` at the returned iterate.
    pub final_gap: Option<f64>,
}

impl SolveReport {
    fn from_pcg(method: &str, out: &PcgOutcome, offset: f64) -> Self {
        SolveReport {
            method: method.to_string(),
            iterations: out.iterations,
            residual_history: out.residual_history.clone(),
            energy_history: out.energy_history.iter().map(|e| e + offset).collect(),
            converged: out.converged,
            ..Default::default()
        }
    }

    pub fn last_residual(&self) -> f64 {
        self.residual_history.last().copied().unwrap_or(f64::NAN)
    }
}

struct NodalSystem<'a> {
    op: &'a StiffnessOperator,
    pre: &'a Preconditioner,
}

impl SpdSystem for NodalSystem<'_> {
    fn dim(&self) -> usize {
        self.op.nodal_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply_nodal(x)
    }
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        self.pre.apply_nodal(r)
    }
    fn project(&self, x: &mut [f64]) {
        remove_nodal_mean(x);
    }
}

/// `[B | φ]` system; the preconditioner is the exact inverse of the
/// uniform-material block operator, which is block diagonal.
struct BlockSystem<'a> {
    op: &'a StiffnessOperator,
    pre: &'a Preconditioner,
    macro_inv: &'a Matrix6<f64>,
}

impl SpdSystem for BlockSystem<'_> {
    fn dim(&self) -> usize {
        MACRO_DOFS + self.op.nodal_dim()
    }
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.op.apply_block(x)
    }
    fn precondition(&self, r: &[f64]) -> Vec<f64> {
        let top = self.macro_inv * Vector6::from_column_slice(&r[..MACRO_DOFS]);
        let mut out = Vec::with_capacity(r.len());
        out.extend(top.iter());
        out.extend(self.pre.apply_nodal(&r[MACRO_DOFS..]));
        out
    }
    fn project(&self, x: &mut [f64]) {
        remove_nodal_mean(&mut x[MACRO_DOFS..]);
    }
}

/// Operators and preconditioner of one cell, reusable across loadings.
pub struct CellSolver {
    space: CellSpace,
    pre: Preconditioner,
    macro_inv: Matrix6<f64>,
    params: SolveParams,
}

impl CellSolver {
    pub fn new(cell: &VoxelCell, params: SolveParams) -> Result<Self> {
        params.validate()?;
        let space = CellSpace::new(cell);
        let pre = Preconditioner::new(space.operator(), params.preconditioner);
        let macro_inv = *invert(&space.operator().mean_rigidity())?.matrix() / space.volume();
        Ok(CellSolver {
            space,
            pre,
            macro_inv,
            params,
        })
    }

    pub fn space(&self) -> &CellSpace {
        &self.space
    }

    pub fn params(&self) -> &SolveParams {
        &self.params
    }

    fn nodal_system(&self) -> NodalSystem<'_> {
        NodalSystem {
            op: self.space.operator(),
            pre: &self.pre,
        }
    }

    fn block_system(&self) -> BlockSystem<'_> {
        BlockSystem {
            op: self.space.operator(),
            pre: &self.pre,
            macro_inv: &self.macro_inv,
        }
    }

    /// Fluctuation problem for a prescribed mean strain `A`.
    pub fn strain_driven(&self, a: &SymMat3) -> Result<(LinPerField, SolveReport)> {
        self.strain_driven_from(a, None)
    }

    /// As [`strain_driven`](Self::strain_driven), starting from `phi0`.
    pub fn strain_driven_from(
        &self,
        a: &SymMat3,
        phi0: Option<&NodalField>,
    ) -> Result<(LinPerField, SolveReport)> {
        let op = self.space.operator();
        let b: Vec<f64> = op.uniform_strain_load(a).into_iter().map(|v| -v).collect();
        let out = pcg(
            &self.nodal_system(),
            &b,
            phi0.map(|p| p.as_slice()),
            self.params.tol,
            self.params.max_iter,
        );
        // J = ½|Y|⟨⟨C⟩A, A⟩ + (½ φᵀKφ − bᵀφ)
        let offset = 0.5 * op.volume() * a.inner(&crate::tensor::apply(&op.mean_rigidity(), a));
        let mut report = SolveReport::from_pcg("strain-driven", &out, offset);
        let u = self
            .space
            .project_zero_mean(&LinPerField::new(*a, NodalField::from_flat(out.x)?));
        report.final_energy = energy_j(&self.space, &u);
        if !report.converged {
            return Err(Error::NotConverged { report: Box::new(report) });
        }
        Ok((u, report))
    }

    /// Zero-mean `w_S` with `⨍ C e(w_S) = S` and vanishing weak divergence.
    pub fn stress_driven(&self, s: &SymMat3) -> Result<(LinPerField, SolveReport)> {
        let op = self.space.operator();
        let mut b = vec![0.0; MACRO_DOFS + op.nodal_dim()];
        for (bi, si) in b.iter_mut().zip(s.m) {
            *bi = op.volume() * si;
        }
        let out = pcg(&self.block_system(), &b, None, self.params.tol, self.params.max_iter);
        let mut report = SolveReport::from_pcg("stress-driven", &out, 0.0);
        let phi = NodalField::from_flat(out.x[MACRO_DOFS..].to_vec())?;

        // ⟨C⟩ B = S − ⨍ C ∇s φ makes the mean stress exact
        let fluct = op.macro_force(phi.as_slice());
        let rhs = Vector6::from_fn(|i, _| op.volume() * s.m[i] - fluct[i]);
        let bm = self.macro_inv * rhs;
        let macro_part = SymMat3::from_vector(&bm);

        let w = self.space.project_zero_mean(&LinPerField::new(macro_part, phi));
        report.final_energy = energy_k(&self.space, &w, s);
        if !report.converged {
            return Err(Error::NotConverged { report: Box::new(report) });
        }
        Ok((w, report))
    }

    /// Extreme Ritz values of the preconditioned block operator.
    pub fn block_spectrum(&self) -> Option<(f64, f64)> {
        let sys = self.block_system();
        let mut rng = ChaCha8Rng::seed_from_u64(self.params.seed);
        let probe: Vec<f64> = (0..sys.dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let out = pcg(&sys, &probe, None, 0.0, AUTO_STEP_PROBES);
        let ritz = lanczos_ritz_values(&out.alphas, &out.betas);
        match (ritz.first(), ritz.last()) {
            (Some(&lo), Some(&hi)) if lo > 0.0 && hi.is_finite() => Some((lo, hi)),
            _ => None,
        }
    }

    /// Uzawa iteration on `𝓛̃`; returns `(σ, v)` with `σ → σ_S`, `v → −w_S`.
    pub fn stress_uzawa(&self, s: &SymMat3) -> Result<(QuadField, LinPerField, SolveReport)> {
        let sp = &self.space;
        let sys = self.block_system();
        let volume = sp.volume();

        let spectrum = self.block_spectrum();
        let (lmin, lmax) = spectrum.unwrap_or((1.0, 1.0));
        let rho = match self.params.uzawa_step {
            UzawaStep::Auto => 2.0 / (lmax + lmin),
            UzawaStep::Fixed(r) => r,
        };

        // ‖ΛS‖ in the preconditioner metric
        let mut b = vec![0.0; sys.dim()];
        for (bi, si) in b.iter_mut().zip(s.m) {
            *bi = volume * si;
        }
        let mut zb = sys.precondition(&b);
        sys.project(&mut zb);
        let b_norm = reduce::dot(&b, &zb).max(0.0).sqrt();

        let mut report = SolveReport {
            method: "stress-uzawa".into(),
            step: Some(rho),
            spectrum,
            ..Default::default()
        };
        let mut v = vec![0.0; sys.dim()];
        let mut increases = 0usize;
        let mut sigma;
        loop {
            let vf = LinPerField::from_block(&v)?;
            let ev = sp.sym_gradient(&vf);
            // σ-step: the minimizer of 𝓛̃(·, v)
            sigma = sp.apply_rigidity(&ev).map(|m| -*m);
            let shifted = sigma.map(|m| *m - *s);
            // v-gradient Λ(σ − S)
            let (top, nodal) = sp.lambda(&shifted);
            let mut grad = Vec::with_capacity(sys.dim());
            grad.extend(top.m);
            grad.extend(nodal.into_vec());
            sys.project(&mut grad);
            let mut z = sys.precondition(&grad);
            sys.project(&mut z);
            let rz = reduce::dot(&grad, &z).max(0.0);

            let g_sigma = g(sp, &sigma);
            let dual_value = g_sigma + sp.integrate_inner(&shifted, &ev);
            let residual = if b_norm > 0.0 { rz.sqrt() / b_norm } else { rz.sqrt() };
            let gap = 0.5 * rz / lmin;
            if let Some(&prev) = report.gap_history.last() {
                if gap > prev {
                    increases += 1;
                } else {
                    increases = 0;
                }
            }
            report.residual_history.push(residual);
            report.energy_history.push(dual_value);
            report.gap_history.push(gap);

            if !residual.is_finite() || increases >= STEP_TOO_LARGE_RUN {
                report.final_energy = dual_value;
                return Err(Error::StepTooLarge {
                    consecutive: increases,
                    report: Box::new(report),
                });
            }
            let tol = self.params.tol;
            if residual <= tol && gap <= tol * g_sigma.abs().max(f64::MIN_POSITIVE) && sp.in_ts(&sigma, s, tol)?.holds {
                report.converged = true;
                break;
            }
            if report.iterations >= self.params.max_iter {
                break;
            }
            // v-step: ascent along the preconditioned gradient
            for (vi, zi) in v.iter_mut().zip(&z) {
                *vi += rho * zi;
            }
            report.iterations += 1;
        }

        let vf = sp.project_zero_mean(&LinPerField::from_block(&v)?);
        let w = vf.scaled(-1.0);
        let g_sigma = g(sp, &sigma);
        report.final_energy = g_sigma;
        report.final_gap = Some((g_sigma + energy_k(sp, &w, s)).abs());
        if !report.converged {
            return Err(Error::NotConverged { report: Box::new(report) });
        }
        Ok((sigma, vf, report))
    }

    /// Strain fields `ē = e(u_A) − A` (strain data) or `ẽ = e(w_S)` (stress data).
    pub fn strain_route(&self, data: &MacroData) -> Result<(QuadField, SolveReport)> {
        match data {
            MacroData::StrainDriven(a) => {
                let (u, mut rep) = self.strain_driven(a)?;
                rep.method = "strain-route".into();
                Ok((self.space.sym_gradient_periodic(&u.periodic), rep))
            }
            MacroData::StressDriven(s) => {
                let (w, mut rep) = self.stress_driven(s)?;
                rep.method = "strain-route".into();
                Ok((self.space.sym_gradient(&w), rep))
            }
        }
    }
}

pub fn solve_strain_driven(cell: &VoxelCell, a: &SymMat3, params: &SolveParams) -> Result<(LinPerField, SolveReport)> {
    CellSolver::new(cell, *params)?.strain_driven(a)
}

pub fn solve_stress_driven(cell: &VoxelCell, s: &SymMat3, params: &SolveParams) -> Result<(LinPerField, SolveReport)> {
    CellSolver::new(cell, *params)?.stress_driven(s)
}

pub fn solve_stress_uzawa(
    cell: &VoxelCell,
    s: &SymMat3,
    params: &SolveParams,
) -> Result<(QuadField, LinPerField, SolveReport)> {
    CellSolver::new(cell, *params)?.stress_uzawa(s)
}

pub fn solve_strain_route(cell: &VoxelCell, data: &MacroData, params: &SolveParams) -> Result<(QuadField, SolveReport)> {
    CellSolver::new(cell, *params)?.strain_route(data)
}

/// Mean stress `⨍ C e` of a displacement field.
pub fn mean_stress(space: &CellSpace, u: &LinPerField) -> SymMat3 {
    cell_average(&space.apply_rigidity(&space.sym_gradient(u)))
}
