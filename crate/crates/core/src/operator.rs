//! Matrix-free periodic stiffness operators and their preconditioners.
//!
//! Unknown vectors are flat `f64` slices. Nodal systems hold `3·N`
//! interleaved displacement components; block systems prepend the 6 Mandel
//! components of a macroscopic matrix, so a block vector is `[B | φ]`.

use std::sync::Arc;

use nalgebra::Matrix6;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::cell::VoxelCell;
use crate::element::{corner, ElemCoupling, ElemMatrix, ElemVector, Mesh};
use crate::reduce;
use crate::tensor::{SymMat3, Tensor4Sym};

pub const MACRO_DOFS: usize = 6;

/// Which preconditioner the PCG and Uzawa routes use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PreconditionerKind {
    /// Exact inverse of the operator with the volume-averaged rigidity.
    #[default]
    Reference,
    /// Inverse diagonal.
    Jacobi,
}

/// `φ ↦ ∫ ⟨C ∇s φ, ∇s ·⟩` and its macro-augmented block form.
pub struct StiffnessOperator {
    mesh: Mesh,
    phase_of: Vec<usize>,
    phases: Vec<Tensor4Sym>,
    ke: Vec<ElemMatrix>,
    coupling: Vec<ElemCoupling>,
    mean_c: Tensor4Sym,
    volume: f64,
    voxel_volume: f64,
}

impl StiffnessOperator {
    pub fn new(cell: &VoxelCell) -> Self {
        Self::build(cell, cell.phase_ids().to_vec(), cell.phases().to_vec())
    }

    /// Same grid and lattice as `cell`, but a uniform material `c`.
    pub fn uniform(cell: &VoxelCell, c: Tensor4Sym) -> Self {
        Self::build(cell, vec![0; cell.num_voxels()], vec![c])
    }

    fn build(cell: &VoxelCell, phase_of: Vec<usize>, phases: Vec<Tensor4Sym>) -> Self {
        let mesh = Mesh::new(cell);
        let ke = phases.iter().map(|c| mesh.element.stiffness(c)).collect();
        let coupling = phases.iter().map(|c| mesh.element.coupling(c)).collect();
        let mean_c = volume_mean(&phase_of, &phases);
        StiffnessOperator {
            mesh,
            phase_of,
            phases,
            ke,
            coupling,
            mean_c,
            volume: cell.volume(),
            voxel_volume: cell.voxel_volume(),
        }
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn nodal_dim(&self) -> usize {
        3 * self.mesh.num_nodes()
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    /// Volume average of the rigidity seen by this operator.
    pub fn mean_rigidity(&self) -> Tensor4Sym {
        self.mean_c
    }

    pub fn phases(&self) -> &[Tensor4Sym] {
        &self.phases
    }

    /// Nodal stiffness product `K φ`.
    pub fn apply_nodal(&self, x: &[f64]) -> Vec<f64> {
        let local: Vec<ElemVector> = (0..self.mesh.num_voxels())
            .into_par_iter()
            .with_min_len(64)
            .map(|v| self.ke[self.phase_of[v]] * self.mesh.gather_local(v, x))
            .collect();
        self.mesh.assemble(&local)
    }

    /// Nodal functional `v ↦ ∫ ⟨C A, ∇s v⟩` of a uniform strain `A`.
    pub fn uniform_strain_load(&self, a: &SymMat3) -> Vec<f64> {
        let av = a.as_vector();
        let local: Vec<ElemVector> = (0..self.mesh.num_voxels())
            .into_par_iter()
            .with_min_len(64)
            .map(|v| self.coupling[self.phase_of[v]] * av)
            .collect();
        self.mesh.assemble(&local)
    }

    /// `∫ C ∇s φ` as a Mandel 6-vector.
    pub fn macro_force(&self, x: &[f64]) -> [f64; 6] {
        reduce::sum_array_by::<6, _>(self.mesh.num_voxels(), |v| {
            let g = self.coupling[self.phase_of[v]].transpose() * self.mesh.gather_local(v, x);
            [g[0], g[1], g[2], g[3], g[4], g[5]]
        })
    }

    /// Block product for `[B | φ]`:
    /// top `= ∫ C (B + ∇s φ)`, bottom `= v ↦ ∫ ⟨C (B + ∇s φ), ∇s v⟩`.
    pub fn apply_block(&self, x: &[f64]) -> Vec<f64> {
        let b = SymMat3::from_mandel([x[0], x[1], x[2], x[3], x[4], x[5]]);
        let phi = &x[MACRO_DOFS..];
        let bv = b.as_vector();
        let local: Vec<ElemVector> = (0..self.mesh.num_voxels())
            .into_par_iter()
            .with_min_len(64)
            .map(|v| {
                let p = self.phase_of[v];
                self.ke[p] * self.mesh.gather_local(v, phi) + self.coupling[p] * bv
            })
            .collect();
        let nodal = self.mesh.assemble(&local);
        let fluct = self.macro_force(phi);
        let uniform = self.mean_c.matrix() * bv * self.volume;
        let mut out = Vec::with_capacity(x.len());
        out.extend((0..MACRO_DOFS).map(|i| uniform[i] + fluct[i]));
        out.extend(nodal);
        out
    }

    /// Macro block `|Y| ⟨C⟩` of the block operator.
    pub fn macro_block(&self) -> Matrix6<f64> {
        self.mean_rigidity().matrix() * self.volume
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.mesh.assemble_diagonal(&self.phase_of, &self.ke)
    }

    pub(crate) fn reference_element_matrix(&self, c: &Tensor4Sym) -> ElemMatrix {
        self.mesh.element.stiffness(c)
    }

    pub fn voxel_volume(&self) -> f64 {
        self.voxel_volume
    }
}

fn volume_mean(phase_of: &[usize], phases: &[Tensor4Sym]) -> Tensor4Sym {
    let n = phase_of.len() as f64;
    let mut counts = vec![0usize; phases.len()];
    for &p in phase_of {
        counts[p] += 1;
    }
    let mut acc = Tensor4Sym::zero();
    for (c, k) in phases.iter().zip(counts) {
        acc = acc + c.scaled(k as f64 / n);
    }
    acc
}

/// Exact inverse of a constant-coefficient periodic stiffness operator.
///
/// The operator is a translation-invariant 27-point block stencil, so the
/// discrete Fourier transform diagonalizes it into one Hermitian 3×3 block
/// per wavevector. The zero wavevector (rigid translations) is mapped to zero.
/// Forward and inverse transforms along one axis.
type PlanPair = (Arc<dyn Fft<f64>>, Arc<dyn Fft<f64>>);

pub struct FourierPreconditioner {
    dims: [usize; 3],
    inv_symbol: Vec<[[Complex64; 3]; 3]>,
    plans: [PlanPair; 3],
}

impl FourierPreconditioner {
    pub fn new(op: &StiffnessOperator, reference: &Tensor4Sym) -> Self {
        let dims = op.mesh().dims;
        let ke = op.reference_element_matrix(reference);

        // stencil blocks indexed by offset + 1 in {0, 1, 2}^3
        let mut stencil = [[[[[0.0f64; 3]; 3]; 3]; 3]; 3];
        for c in 0..8 {
            for b in 0..8 {
                let (cc, cb) = (corner(c), corner(b));
                let d = [1 + cb[0] - cc[0], 1 + cb[1] - cc[1], 1 + cb[2] - cc[2]];
                let blk = &mut stencil[d[0]][d[1]][d[2]];
                for (r, row) in blk.iter_mut().enumerate() {
                    for (s, v) in row.iter_mut().enumerate() {
                        *v += ke[(3 * c + r, 3 * b + s)];
                    }
                }
            }
        }

        let n = dims[0] * dims[1] * dims[2];
        let scale = ke.amax().max(f64::MIN_POSITIVE);
        let mut inv_symbol = vec![[[Complex64::new(0.0, 0.0); 3]; 3]; n];
        for (idx, out) in inv_symbol.iter_mut().enumerate() {
            let k = [idx % dims[0], (idx / dims[0]) % dims[1], idx / (dims[0] * dims[1])];
            if idx == 0 {
                continue;
            }
            let mut sym = [[Complex64::new(0.0, 0.0); 3]; 3];
            for (dx, plane) in stencil.iter().enumerate() {
                for (dy, line) in plane.iter().enumerate() {
                    for (dz, blk) in line.iter().enumerate() {
                        let off = [dx as f64 - 1.0, dy as f64 - 1.0, dz as f64 - 1.0];
                        let theta: f64 = (0..3)
                            .map(|m| 2.0 * std::f64::consts::PI * k[m] as f64 * off[m] / dims[m] as f64)
                            .sum();
                        let ph = Complex64::from_polar(1.0, theta);
                        for r in 0..3 {
                            for s in 0..3 {
                                sym[r][s] += ph * blk[r][s];
                            }
                        }
                    }
                }
            }
            if let Some(inv) = invert_hermitian3(&sym, scale) {
                *out = inv;
            }
        }

        let mut planner = FftPlanner::new();
        let plans = [0, 1, 2].map(|a| (planner.plan_fft_forward(dims[a]), planner.plan_fft_inverse(dims[a])));
        FourierPreconditioner {
            dims,
            inv_symbol,
            plans,
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let [n0, n1, n2] = self.dims;
        let strides = [1, n0, n0 * n1];
        let mut buf = Vec::new();
        for axis in 0..3 {
            let len = self.dims[axis];
            if len == 1 {
                continue;
            }
            let plan = if inverse { &self.plans[axis].1 } else { &self.plans[axis].0 };
            let stride = strides[axis];
            buf.resize(len, Complex64::new(0.0, 0.0));
            let total = n0 * n1 * n2;
            for start in 0..total {
                // visit each line once, from the index whose axis coordinate is 0
                let coord = (start / stride) % len;
                if coord != 0 {
                    continue;
                }
                for (t, slot) in buf.iter_mut().enumerate() {
                    *slot = data[start + t * stride];
                }
                plan.process(&mut buf);
                for (t, v) in buf.iter().enumerate() {
                    data[start + t * stride] = *v;
                }
            }
        }
    }

    /// Applies the inverse reference operator to an interleaved nodal vector.
    pub fn apply(&self, r: &[f64]) -> Vec<f64> {
        let n = self.inv_symbol.len();
        let mut comps: Vec<Vec<Complex64>> = (0..3)
            .map(|c| (0..n).map(|i| Complex64::new(r[3 * i + c], 0.0)).collect())
            .collect();
        for c in comps.iter_mut() {
            self.transform(c, false);
        }
        let mut out_hat = vec![vec![Complex64::new(0.0, 0.0); n]; 3];
        for i in 0..n {
            let m = &self.inv_symbol[i];
            for (r_, row) in m.iter().enumerate() {
                out_hat[r_][i] = row[0] * comps[0][i] + row[1] * comps[1][i] + row[2] * comps[2][i];
            }
        }
        for c in out_hat.iter_mut() {
            self.transform(c, true);
        }
        let inv_n = 1.0 / n as f64;
        let mut z = vec![0.0; 3 * n];
        for i in 0..n {
            for c in 0..3 {
                z[3 * i + c] = out_hat[c][i].re * inv_n;
            }
        }
        z
    }
}

fn invert_hermitian3(m: &[[Complex64; 3]; 3], scale: f64) -> Option<[[Complex64; 3]; 3]> {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let adj = [
        [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
        [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
        [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * adj[0][0] + m[0][1] * adj[1][0] + m[0][2] * adj[2][0];
    if det.norm() <= 1e-13 * scale.powi(3) {
        return None;
    }
    let inv_det = 1.0 / det;
    let mut out = [[Complex64::new(0.0, 0.0); 3]; 3];
    for r in 0..3 {
        for c in 0..3 {
            out[r][c] = adj[r][c] * inv_det;
        }
    }
    Some(out)
}

/// Preconditioner for nodal and block systems.
pub enum Preconditioner {
    Reference(FourierPreconditioner),
    Jacobi(Vec<f64>),
}

impl Preconditioner {
    pub fn new(op: &StiffnessOperator, kind: PreconditionerKind) -> Self {
        match kind {
            PreconditionerKind::Reference => {
                Preconditioner::Reference(FourierPreconditioner::new(op, &op.mean_rigidity()))
            }
            PreconditionerKind::Jacobi => Preconditioner::Jacobi(
                op.diagonal()
                    .into_iter()
                    .map(|d| if d > 0.0 { 1.0 / d } else { 0.0 })
                    .collect(),
            ),
        }
    }

    pub fn apply_nodal(&self, r: &[f64]) -> Vec<f64> {
        match self {
            Preconditioner::Reference(f) => f.apply(r),
            Preconditioner::Jacobi(d) => r.iter().zip(d).map(|(a, b)| a * b).collect(),
        }
    }
}

/// Subtracts the per-component mean from an interleaved nodal vector.
pub fn remove_nodal_mean(x: &mut [f64]) {
    let n = x.len() / 3;
    if n == 0 {
        return;
    }
    let s = reduce::sum_array_by::<3, _>(n, |i| [x[3 * i], x[3 * i + 1], x[3 * i + 2]]);
    let inv = 1.0 / n as f64;
    for node in x.chunks_mut(3) {
        for c in 0..3 {
            node[c] -= s[c] * inv;
        }
    }
}
