//! Trilinear hexahedral element on the periodic voxel grid.
//!
//! Local node `a` sits at reference corner `(a & 1, (a >> 1) & 1, (a >> 2) & 1)`
//! of the unit cube; quadrature points use the same bit layout on the 2×2×2
//! Gauss rule. Every voxel is the same affine image of the reference cube, so
//! shape-function gradients and strain-displacement matrices are shared.

use nalgebra::{Matrix3, SMatrix, Vector3};
use rayon::prelude::*;

use crate::cell::VoxelCell;
use crate::tensor::{Tensor4Sym, SQRT_2};

pub type ElemMatrix = SMatrix<f64, 24, 24>;
pub type ElemCoupling = SMatrix<f64, 24, 6>;
pub type StrainMatrix = SMatrix<f64, 6, 24>;
pub type ElemVector = SMatrix<f64, 24, 1>;

pub const NODES_PER_VOXEL: usize = 8;
pub const QUAD_PER_VOXEL: usize = 8;

#[inline]
pub fn corner(a: usize) -> [usize; 3] {
    [a & 1, (a >> 1) & 1, (a >> 2) & 1]
}

/// Gauss abscissae on [0, 1].
fn gauss_points() -> [f64; 2] {
    let h = 0.5 / 3f64.sqrt();
    [0.5 - h, 0.5 + h]
}

fn shape_value(a: usize, xi: [f64; 3]) -> f64 {
    let c = corner(a);
    (0..3)
        .map(|d| if c[d] == 1 { xi[d] } else { 1.0 - xi[d] })
        .product()
}

fn shape_ref_gradient(a: usize, xi: [f64; 3]) -> [f64; 3] {
    let c = corner(a);
    let f = |d: usize| if c[d] == 1 { xi[d] } else { 1.0 - xi[d] };
    let df = |d: usize| if c[d] == 1 { 1.0 } else { -1.0 };
    [df(0) * f(1) * f(2), f(0) * df(1) * f(2), f(0) * f(1) * df(2)]
}

/// Geometry shared by all voxels of a cell.
#[derive(Debug, Clone)]
pub struct ReferenceElement {
    /// Physical shape-function gradients, `grads[q][a]`.
    pub grads: [[[f64; 3]; NODES_PER_VOXEL]; QUAD_PER_VOXEL],
    /// Shape-function values, `values[q][a]`.
    pub values: [[f64; NODES_PER_VOXEL]; QUAD_PER_VOXEL],
    /// Strain-displacement matrices mapping 24 local dofs to Mandel strain.
    pub b: [StrainMatrix; QUAD_PER_VOXEL],
    /// Integration weight of one quadrature point (voxel volume / 8).
    pub weight: f64,
}

impl ReferenceElement {
    pub fn new(jacobian: &Matrix3<f64>, voxel_volume: f64) -> Self {
        let jinv_t = jacobian
            .try_inverse()
            .expect("lattice generators are independent")
            .transpose();
        let gp = gauss_points();
        let mut grads = [[[0.0; 3]; 8]; 8];
        let mut values = [[0.0; 8]; 8];
        let mut b = [StrainMatrix::zeros(); 8];
        for q in 0..QUAD_PER_VOXEL {
            let c = corner(q);
            let xi = [gp[c[0]], gp[c[1]], gp[c[2]]];
            for a in 0..NODES_PER_VOXEL {
                let gr = Vector3::from(shape_ref_gradient(a, xi));
                let g = jinv_t * gr;
                grads[q][a] = [g[0], g[1], g[2]];
                values[q][a] = shape_value(a, xi);
                let col = 3 * a;
                let bq = &mut b[q];
                bq[(0, col)] = g[0];
                bq[(1, col + 1)] = g[1];
                bq[(2, col + 2)] = g[2];
                // Mandel shear rows: √2 · ½ (∂_j u_i + ∂_i u_j)
                let s = SQRT_2 * 0.5;
                bq[(3, col + 1)] = s * g[2];
                bq[(3, col + 2)] = s * g[1];
                bq[(4, col)] = s * g[2];
                bq[(4, col + 2)] = s * g[0];
                bq[(5, col)] = s * g[1];
                bq[(5, col + 1)] = s * g[0];
            }
        }
        ReferenceElement {
            grads,
            values,
            b,
            weight: voxel_volume / QUAD_PER_VOXEL as f64,
        }
    }

    pub fn stiffness(&self, c: &Tensor4Sym) -> ElemMatrix {
        let mut k = ElemMatrix::zeros();
        for bq in &self.b {
            k += bq.transpose() * c.matrix() * bq;
        }
        k *= self.weight;
        0.5 * (k + k.transpose())
    }

    /// `Σ_q w Bᵀ_q C`: nodal forces produced by a uniform strain.
    pub fn coupling(&self, c: &Tensor4Sym) -> ElemCoupling {
        let mut g = ElemCoupling::zeros();
        for bq in &self.b {
            g += bq.transpose() * c.matrix();
        }
        g * self.weight
    }
}

/// Periodic connectivity plus the reference element for one cell.
#[derive(Debug, Clone)]
pub struct Mesh {
    pub dims: [usize; 3],
    pub element: ReferenceElement,
    connectivity: Vec<[usize; NODES_PER_VOXEL]>,
}

impl Mesh {
    pub fn new(cell: &VoxelCell) -> Self {
        let dims = cell.dims();
        let jac = cell.lattice().voxel_jacobian(dims);
        let element = ReferenceElement::new(&jac, cell.voxel_volume());
        let connectivity = (0..cell.num_voxels())
            .map(|v| {
                let [i, j, k] = cell.coords(v);
                let mut conn = [0usize; 8];
                for (a, slot) in conn.iter_mut().enumerate() {
                    let c = corner(a);
                    *slot = cell.wrapped_index([
                        (i + c[0]) as i64,
                        (j + c[1]) as i64,
                        (k + c[2]) as i64,
                    ]);
                }
                conn
            })
            .collect();
        Mesh {
            dims,
            element,
            connectivity,
        }
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.connectivity.len()
    }

    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.connectivity.len()
    }

    #[inline]
    pub fn voxel_nodes(&self, voxel: usize) -> &[usize; NODES_PER_VOXEL] {
        &self.connectivity[voxel]
    }

    /// Local dof vector of one voxel from an interleaved nodal array.
    #[inline]
    pub fn gather_local(&self, voxel: usize, nodal: &[f64]) -> ElemVector {
        let mut u = ElemVector::zeros();
        for (a, &n) in self.connectivity[voxel].iter().enumerate() {
            u[3 * a] = nodal[3 * n];
            u[3 * a + 1] = nodal[3 * n + 1];
            u[3 * a + 2] = nodal[3 * n + 2];
        }
        u
    }

    /// Voxel owning local corner `c` of `node`.
    #[inline]
    fn voxel_with_corner(&self, node: usize, c: usize) -> usize {
        let d = self.dims;
        let i = node % d[0];
        let r = node / d[0];
        let (j, k) = (r % d[1], r / d[1]);
        let cc = corner(c);
        let w = |x: usize, o: usize, n: usize| (x + n - o % n) % n;
        w(i, cc[0], d[0]) + d[0] * (w(j, cc[1], d[1]) + d[1] * w(k, cc[2], d[2]))
    }

    /// Sums per-voxel local vectors into an interleaved nodal array.
    ///
    /// Every node visits its 8 incident (voxel, corner) pairs in a fixed
    /// order, so the result is independent of how work is split across threads.
    pub fn assemble(&self, local: &[ElemVector]) -> Vec<f64> {
        let mut out = vec![0.0; 3 * self.num_nodes()];
        out.par_chunks_mut(3)
            .with_min_len(256)
            .enumerate()
            .for_each(|(node, f)| {
                for c in 0..NODES_PER_VOXEL {
                    let v = self.voxel_with_corner(node, c);
                    let le = &local[v];
                    f[0] += le[3 * c];
                    f[1] += le[3 * c + 1];
                    f[2] += le[3 * c + 2];
                }
            });
        out
    }

    /// Diagonal of the assembled operator from per-phase element matrices.
    pub fn assemble_diagonal(&self, phase_of: &[usize], ke: &[ElemMatrix]) -> Vec<f64> {
        let local: Vec<ElemVector> = (0..self.num_voxels())
            .map(|v| ElemVector::from_fn(|r, _| ke[phase_of[v]][(r, r)]))
            .collect();
        self.assemble(&local)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::{Lattice, VoxelCell};
    use crate::tensor::iso_tensor;

    #[test]
    fn shape_functions_partition_unity() {
        let e = ReferenceElement::new(&Matrix3::identity(), 1.0);
        for q in 0..8 {
            let s: f64 = e.values[q].iter().sum();
            assert!((s - 1.0).abs() < 1e-15);
            for d in 0..3 {
                let g: f64 = e.grads[q].iter().map(|g| g[d]).sum();
                assert!(g.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn linear_field_gives_exact_gradient_on_skewed_voxel() {
        let lat = Lattice::new([[1.0, 0.2, 0.0], [0.3, 1.1, 0.0], [0.1, 0.0, 0.9]]).unwrap();
        let jac = lat.voxel_jacobian([2, 3, 4]);
        let e = ReferenceElement::new(&jac, lat.volume() / 24.0);
        // u(y) = G y at the physical corner positions
        let g = Matrix3::new(0.1, 0.2, -0.3, 0.4, 0.5, 0.6, -0.7, 0.8, 0.9);
        for q in 0..8 {
            let mut grad = Matrix3::zeros();
            for a in 0..8 {
                let c = corner(a);
                let x = jac * Vector3::new(c[0] as f64, c[1] as f64, c[2] as f64);
                let u = g * x;
                let dn = Vector3::from(e.grads[q][a]);
                grad += u * dn.transpose();
            }
            assert!((grad - g).amax() < 1e-13);
        }
    }

    #[test]
    fn stiffness_is_symmetric_with_rigid_nullspace() {
        let e = ReferenceElement::new(&Matrix3::identity(), 1.0);
        let k = e.stiffness(&iso_tensor(1.0, 0.5).unwrap());
        assert!((k - k.transpose()).amax() < 1e-15);
        let t = ElemVector::from_fn(|r, _| if r % 3 == 1 { 1.0 } else { 0.0 });
        assert!((k * t).amax() < 1e-14);
    }

    #[test]
    fn assemble_covers_every_incidence_once() {
        for dims in [[1, 1, 1], [2, 1, 3], [3, 2, 2]] {
            let n = dims[0] * dims[1] * dims[2];
            let cell = VoxelCell::homogeneous(dims, iso_tensor(1.0, 1.0).unwrap()).unwrap();
            let mesh = Mesh::new(&cell);
            let ones = vec![ElemVector::from_element(1.0); n];
            let out = mesh.assemble(&ones);
            assert!(out.iter().all(|&v| v == 8.0));
            // gather-scatter consistency: Σ_nodes x·assemble(local) = Σ_voxels local·gather(x)
            let x: Vec<f64> = (0..3 * n).map(|i| (i as f64 * 0.7).sin()).collect();
            let local: Vec<ElemVector> = (0..n)
                .map(|v| ElemVector::from_fn(|r, _| ((v * 24 + r) as f64).cos()))
                .collect();
            let lhs: f64 = mesh.assemble(&local).iter().zip(&x).map(|(a, b)| a * b).sum();
            let rhs: f64 = (0..n).map(|v| local[v].dot(&mesh.gather_local(v, &x))).sum();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
