//! Discrete displacement, strain and stress spaces on a periodic cell.
//!
//! Displacements are `u(y) = A y + φ(y)` with `A` symmetric and `φ` a periodic
//! trilinear nodal field; `y` is measured from node 0. Strains and stresses
//! live at the 8 Gauss points of each voxel, indexed `voxel * 8 + q`.
//!
//! The pairing `⟨div_adjoint(s), v⟩` is defined as the quadrature of
//! `⟨s, ∇s v⟩`, which is minus the weak divergence of `s` tested against `v`.

use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::cell::{cell_average, VoxelCell};
use crate::element::{ElemVector, Mesh, QUAD_PER_VOXEL};
use crate::error::{Error, Result};
use crate::operator::{remove_nodal_mean, FourierPreconditioner, StiffnessOperator};
use crate::reduce;
use crate::tensor::{apply, SymMat3, Tensor4Sym};

/// Periodic nodal displacement coefficients, interleaved `[x0, y0, z0, x1, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalField {
    data: Vec<f64>,
}

impl NodalField {
    pub fn zeros(num_nodes: usize) -> Self {
        NodalField {
            data: vec![0.0; 3 * num_nodes],
        }
    }

    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        if !data.len().is_multiple_of(3) {
            return Err(Error::Shape(format!(
                "nodal data length {} is not a multiple of 3",
                data.len()
            )));
        }
        Ok(NodalField { data })
    }

    pub fn from_fn(num_nodes: usize, mut f: impl FnMut(usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(3 * num_nodes);
        for n in 0..num_nodes {
            data.extend(f(n));
        }
        NodalField { data }
    }

    pub fn num_nodes(&self) -> usize {
        self.data.len() / 3
    }

    pub fn node(&self, n: usize) -> [f64; 3] {
        [self.data[3 * n], self.data[3 * n + 1], self.data[3 * n + 2]]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// Per-component nodal mean.
    pub fn mean(&self) -> [f64; 3] {
        let n = self.num_nodes();
        if n == 0 {
            return [0.0; 3];
        }
        let s = reduce::sum_array_by::<3, _>(n, |i| self.node(i));
        s.map(|v| v / n as f64)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, a: f64) -> Self {
        NodalField {
            data: self.data.iter().map(|v| a * v).collect(),
        }
    }
}

/// A linear functional on nodal fields, stored by its nodal coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct NodalDual {
    data: Vec<f64>,
}

impl NodalDual {
    pub fn from_flat(data: Vec<f64>) -> Self {
        NodalDual { data }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn pair(&self, v: &NodalField) -> f64 {
        reduce::dot(&self.data, v.as_slice())
    }

    /// Euclidean norm of the coefficients.
    pub fn norm(&self) -> f64 {
        reduce::dot(&self.data, &self.data).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `u(y) = A y + φ(y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinPerField {
    pub macro_part: SymMat3,
    pub periodic: NodalField,
}

impl LinPerField {
    pub fn new(macro_part: SymMat3, periodic: NodalField) -> Self {
        LinPerField {
            macro_part,
            periodic,
        }
    }

    pub fn zeros(num_nodes: usize) -> Self {
        LinPerField::new(SymMat3::ZERO, NodalField::zeros(num_nodes))
    }

    pub fn affine(a: SymMat3, num_nodes: usize) -> Self {
        LinPerField::new(a, NodalField::zeros(num_nodes))
    }

    pub fn scaled(&self, a: f64) -> Self {
        LinPerField::new(self.macro_part * a, self.periodic.scaled(a))
    }

    /// Flat `[A (6 Mandel) | φ]` layout used by the block solvers.
    pub fn to_block(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(6 + self.periodic.as_slice().len());
        v.extend(self.macro_part.m);
        v.extend_from_slice(self.periodic.as_slice());
        v
    }

    pub fn from_block(x: &[f64]) -> Result<Self> {
        if x.len() < 6 {
            return Err(Error::Shape("block vector shorter than 6".into()));
        }
        let a = SymMat3::from_mandel([x[0], x[1], x[2], x[3], x[4], x[5]]);
        Ok(LinPerField::new(a, NodalField::from_flat(x[6..].to_vec())?))
    }
}

/// One symmetric tensor per quadrature point.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadField {
    values: Vec<SymMat3>,
}

impl QuadField {
    pub fn from_values(values: Vec<SymMat3>) -> Self {
        QuadField { values }
    }

    pub fn zeros(cell: &VoxelCell) -> Self {
        Self::constant(cell, SymMat3::ZERO)
    }

    pub fn constant(cell: &VoxelCell, m: SymMat3) -> Self {
        QuadField {
            values: vec![m; cell.num_voxels() * QUAD_PER_VOXEL],
        }
    }

    /// Field with value `f(voxel, q)` at Gauss point `q` of each voxel.
    pub fn from_fn(cell: &VoxelCell, mut f: impl FnMut(usize, usize) -> SymMat3) -> Self {
        let values = (0..cell.num_voxels() * QUAD_PER_VOXEL)
            .map(|i| f(i / QUAD_PER_VOXEL, i % QUAD_PER_VOXEL))
            .collect();
        QuadField { values }
    }

    pub fn values(&self) -> &[SymMat3] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|m| m.is_finite())
    }

    pub fn map(&self, f: impl Fn(&SymMat3) -> SymMat3 + Sync + Send) -> Self {
        QuadField {
            values: self.values.par_iter().map(f).collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.max_abs()))
    }

    fn zip_with(&self, other: &QuadField, f: impl Fn(SymMat3, SymMat3) -> SymMat3) -> Self {
        assert_eq!(self.len(), other.len(), "quadrature fields on different grids");
        QuadField {
            values: self.values.iter().zip(&other.values).map(|(a, b)| f(*a, *b)).collect(),
        }
    }
}

impl Add for &QuadField {
    type Output = QuadField;
    fn add(self, rhs: &QuadField) -> QuadField {
        self.zip_with(rhs, |a, b| a + b)
    }
}

impl Sub for &QuadField {
    type Output = QuadField;
    fn sub(self, rhs: &QuadField) -> QuadField {
        self.zip_with(rhs, |a, b| a - b)
    }
}

impl Neg for &QuadField {
    type Output = QuadField;
    fn neg(self) -> QuadField {
        QuadField {
            values: self.values.iter().map(|a| -*a).collect(),
        }
    }
}

impl Mul<f64> for &QuadField {
    type Output = QuadField;
    fn mul(self, a: f64) -> QuadField {
        QuadField {
            values: self.values.iter().map(|v| *v * a).collect(),
        }
    }
}

/// Outcome of a membership test for the admissible stress set.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct TsCheck {
    pub holds: bool,
    /// Dual norm of the weak divergence, `sup_v ∫⟨s, ∇s v⟩ / ‖∇s v‖`.
    pub divergence_residual: f64,
    /// `‖⨍ s − S‖`.
    pub mean_residual: f64,
    /// `‖s‖` in L², the scale the divergence residual is compared against.
    pub field_norm: f64,
}

struct RangeSolver {
    op: StiffnessOperator,
    inverse: FourierPreconditioner,
}

/// Discrete function spaces of one cell with the operators acting on them.
pub struct CellSpace {
    cell: VoxelCell,
    op: StiffnessOperator,
    range: OnceLock<RangeSolver>,
}

impl CellSpace {
    pub fn new(cell: &VoxelCell) -> Self {
        CellSpace {
            cell: cell.clone(),
            op: StiffnessOperator::new(cell),
            range: OnceLock::new(),
        }
    }

    pub fn cell(&self) -> &VoxelCell {
        &self.cell
    }

    pub fn operator(&self) -> &StiffnessOperator {
        &self.op
    }

    pub fn mesh(&self) -> &Mesh {
        self.op.mesh()
    }

    pub fn num_nodes(&self) -> usize {
        self.cell.num_nodes()
    }

    pub fn volume(&self) -> f64 {
        self.cell.volume()
    }

    fn check_nodal(&self, f: &NodalField) {
        assert_eq!(f.num_nodes(), self.num_nodes(), "nodal field on a different grid");
    }

    fn check_quad(&self, f: &QuadField) {
        assert_eq!(
            f.len(),
            self.cell.num_voxels() * QUAD_PER_VOXEL,
            "quadrature field on a different grid"
        );
    }

    /// `∇s φ` at every Gauss point.
    pub fn sym_gradient_periodic(&self, phi: &NodalField) -> QuadField {
        self.sym_gradient(&LinPerField::new(SymMat3::ZERO, phi.clone()))
    }

    pub fn sym_gradient(&self, u: &LinPerField) -> QuadField {
        self.check_nodal(&u.periodic);
        let mesh = self.mesh();
        let a = u.macro_part;
        let mut values = vec![SymMat3::ZERO; self.cell.num_voxels() * QUAD_PER_VOXEL];
        values
            .par_chunks_mut(QUAD_PER_VOXEL)
            .with_min_len(64)
            .enumerate()
            .for_each(|(v, out)| {
                let ul = mesh.gather_local(v, u.periodic.as_slice());
                for (q, slot) in out.iter_mut().enumerate() {
                    let e = mesh.element.b[q] * ul;
                    *slot = SymMat3::from_mandel([e[0], e[1], e[2], e[3], e[4], e[5]]) + a;
                }
            });
        QuadField { values }
    }

    /// Nodal coefficients of `v ↦ ∫ ⟨s, ∇s v⟩` over periodic `v`.
    pub fn div_adjoint(&self, s: &QuadField) -> NodalDual {
        self.check_quad(s);
        let mesh = self.mesh();
        let w = mesh.element.weight;
        let local: Vec<ElemVector> = (0..self.cell.num_voxels())
            .into_par_iter()
            .with_min_len(64)
            .map(|v| {
                let mut acc = ElemVector::zeros();
                for q in 0..QUAD_PER_VOXEL {
                    let sv = s.values[v * QUAD_PER_VOXEL + q].as_vector();
                    acc += mesh.element.b[q].transpose() * sv;
                }
                acc * w
            })
            .collect();
        NodalDual {
            data: mesh.assemble(&local),
        }
    }

    /// `Λs`: the functional `v ↦ ∫⟨s, ∇s v⟩` on `LP`, split into its macro
    /// component `|Y| ⨍ s` and its nodal component.
    pub fn lambda(&self, s: &QuadField) -> (SymMat3, NodalDual) {
        (cell_average(s) * self.volume(), self.div_adjoint(s))
    }

    /// `∫_Y ⟨a, b⟩` by Gauss quadrature.
    pub fn integrate_inner(&self, a: &QuadField, b: &QuadField) -> f64 {
        self.check_quad(a);
        self.check_quad(b);
        let w = self.mesh().element.weight;
        w * reduce::sum_by(a.len(), |i| a.values[i].inner(&b.values[i]))
    }

    pub fn l2_norm(&self, a: &QuadField) -> f64 {
        self.integrate_inner(a, a).max(0.0).sqrt()
    }

    /// `∫_Y ⟨T a, a⟩` for a per-voxel tensor field `T`.
    pub fn integrate_quad(&self, t: impl Fn(usize) -> Tensor4Sym + Sync, a: &QuadField) -> f64 {
        self.check_quad(a);
        let w = self.mesh().element.weight;
        w * reduce::sum_by(a.len(), |i| {
            let m = a.values[i];
            apply(&t(i / QUAD_PER_VOXEL), &m).inner(&m)
        })
    }

    /// `C e` pointwise.
    pub fn apply_rigidity(&self, e: &QuadField) -> QuadField {
        self.apply_voxelwise(e, |v| self.cell.rigidity(v))
    }

    /// `D s` pointwise.
    pub fn apply_compliance(&self, s: &QuadField) -> QuadField {
        self.apply_voxelwise(s, |v| self.cell.compliance(v))
    }

    fn apply_voxelwise<'a>(
        &'a self,
        f: &QuadField,
        t: impl Fn(usize) -> &'a Tensor4Sym + Sync,
    ) -> QuadField {
        self.check_quad(f);
        let values = f
            .values
            .par_iter()
            .enumerate()
            .with_min_len(512)
            .map(|(i, m)| apply(t(i / QUAD_PER_VOXEL), m))
            .collect();
        QuadField { values }
    }

    /// Cell average of the displacement `u = A y + φ`.
    pub fn mean_displacement(&self, u: &LinPerField) -> [f64; 3] {
        self.check_nodal(&u.periodic);
        let m = u.periodic.mean();
        let c = self.cell.lattice().centroid();
        let a = u.macro_part.to_dense();
        let mut out = m;
        for (r, o) in out.iter_mut().enumerate() {
            *o += (0..3).map(|k| a[r][k] * c[k]).sum::<f64>();
        }
        out
    }

    /// Removes the constant vector that makes `⨍_Y u = 0`.
    pub fn project_zero_mean(&self, u: &LinPerField) -> LinPerField {
        let shift = self.mean_displacement(u);
        let mut phi = u.periodic.clone();
        for node in phi.as_mut_slice().chunks_mut(3) {
            for c in 0..3 {
                node[c] -= shift[c];
            }
        }
        LinPerField::new(u.macro_part, phi)
    }

    fn range_solver(&self) -> &RangeSolver {
        self.range.get_or_init(|| {
            let op = StiffnessOperator::uniform(&self.cell, Tensor4Sym::identity());
            let inverse = FourierPreconditioner::new(&op, &Tensor4Sym::identity());
            RangeSolver { op, inverse }
        })
    }

    /// Periodic `φ*` whose strain `∇s φ*` is the L² projection of `s` onto
    /// periodic symmetric gradients.
    pub fn gradient_projection(&self, s: &QuadField) -> Result<NodalField> {
        let rs = self.range_solver();
        let f = self.div_adjoint(s).into_vec();
        let mut phi = rs.inverse.apply(&f);
        remove_nodal_mean(&mut phi);
        // the reference inverse is exact for a uniform identity material
        let kf = rs.op.apply_nodal(&phi);
        let fnorm = reduce::dot(&f, &f).sqrt();
        let err = kf
            .iter()
            .zip(&f)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        // floor: rounding level of one assembled nodal contribution of `s`
        let e = &self.mesh().element;
        let gmax = e.grads.iter().flatten().flatten().fold(0.0f64, |m, g| m.max(g.abs()));
        let floor = 1e-12 * s.max_abs() * gmax * e.weight * 64.0;
        if !(err <= 1e-8 * fnorm + floor) {
            return Err(Error::SolverFailure(format!(
                "gradient projection residual {err:e} relative to {fnorm:e}"
            )));
        }
        NodalField::from_flat(phi)
    }

    /// L²-closest compatible strain: `v*` in `LP` minimizing `‖e − ∇s v‖`.
    pub fn range_projection(&self, e: &QuadField) -> Result<LinPerField> {
        let phi = self.gradient_projection(e)?;
        Ok(LinPerField::new(cell_average(e), phi))
    }

    /// Distance in L² from `e` to the compatible strains `{∇s v : v ∈ LP}`.
    pub fn compat_residual(&self, e: &QuadField) -> Result<f64> {
        let v = self.range_projection(e)?;
        let r = e - &self.sym_gradient(&v);
        Ok(self.l2_norm(&r))
    }

    /// Weak membership test for `T(S)`: divergence-free with mean `S`.
    pub fn in_ts(&self, s: &QuadField, target: &SymMat3, tol: f64) -> Result<TsCheck> {
        let phi = self.gradient_projection(s)?;
        let divergence_residual = self.l2_norm(&self.sym_gradient_periodic(&phi));
        let field_norm = self.l2_norm(s);
        let mean_residual = (cell_average(s) - *target).norm();
        let mean_scale = target.norm();
        let mean_ok = if mean_scale > 0.0 {
            mean_residual <= tol * mean_scale
        } else {
            mean_residual <= tol
        };
        let div_ok = divergence_residual <= tol * field_norm;
        Ok(TsCheck {
            holds: mean_ok && div_ok,
            divergence_residual,
            mean_residual,
            field_norm,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::Lattice;
    use crate::tensor::iso_tensor;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_cell(dims: [usize; 3], seed: u64) -> VoxelCell {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.iter().product();
        let ids = (0..n).map(|_| rng.random_range(0..2)).collect();
        VoxelCell::new(
            dims,
            ids,
            vec![iso_tensor(1.0, 1.0).unwrap(), iso_tensor(4.0, 6.0).unwrap()],
            Lattice::new([[1.0, 0.1, 0.0], [0.0, 0.9, 0.2], [0.1, 0.0, 1.2]]).unwrap(),
        )
        .unwrap()
    }

    fn random_nodal(n: usize, rng: &mut ChaCha8Rng) -> NodalField {
        NodalField::from_fn(n, |_| [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)])
    }

    fn random_quad(cell: &VoxelCell, rng: &mut ChaCha8Rng) -> QuadField {
        let vals = (0..cell.num_voxels() * 8)
            .map(|_| SymMat3::from_mandel(std::array::from_fn(|_| rng.random_range(-1.0..1.0))))
            .collect();
        QuadField::from_values(vals)
    }

    fn random_sym(rng: &mut ChaCha8Rng) -> SymMat3 {
        SymMat3::from_mandel(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
    }

    #[test]
    fn affine_field_has_constant_strain() {
        let cell = random_cell([3, 2, 4], 1);
        let sp = CellSpace::new(&cell);
        let a = SymMat3::from_mandel([0.3, -0.1, 0.2, 0.5, -0.4, 0.05]);
        let e = sp.sym_gradient(&LinPerField::affine(a, cell.num_nodes()));
        for v in e.values() {
            assert!((*v - a).max_abs() < 1e-15);
        }
    }

    #[test]
    fn periodic_strains_average_to_zero() {
        let cell = random_cell([3, 4, 2], 2);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let phi = random_nodal(cell.num_nodes(), &mut rng);
        assert!(cell_average(&sp.sym_gradient_periodic(&phi)).max_abs() < 1e-13);
        let c = NodalField::from_fn(cell.num_nodes(), |_| [0.3, -2.0, 1.0]);
        assert!(sp.sym_gradient_periodic(&c).max_abs() < 1e-13);
    }

    #[test]
    fn green_identity_holds_to_rounding() {
        let cell = random_cell([3, 3, 2], 4);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let s = random_quad(&cell, &mut rng);
            let v = random_nodal(cell.num_nodes(), &mut rng);
            let lhs = sp.integrate_inner(&s, &sp.sym_gradient_periodic(&v));
            let rhs = sp.div_adjoint(&s).pair(&v);
            let scale = sp.l2_norm(&s) * sp.l2_norm(&sp.sym_gradient_periodic(&v));
            assert!((lhs - rhs).abs() <= 1e-13 * scale);
        }
        let k = QuadField::constant(&cell, random_sym(&mut rng));
        assert!(sp.div_adjoint(&k).max_abs() < 1e-13);
    }

    #[test]
    fn zero_mean_projection() {
        let cell = random_cell([2, 3, 2], 6);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = LinPerField::new(random_sym(&mut rng), random_nodal(cell.num_nodes(), &mut rng));
        let p = sp.project_zero_mean(&u);
        assert!(sp.mean_displacement(&p).iter().all(|m| m.abs() < 1e-14));
        let pp = sp.project_zero_mean(&p);
        assert!((pp.periodic.max_abs() - p.periodic.max_abs()).abs() < 1e-15);
        let diff = &sp.sym_gradient(&p) - &sp.sym_gradient(&u);
        assert!(diff.max_abs() < 1e-14);
        let c = LinPerField::new(SymMat3::ZERO, NodalField::from_fn(cell.num_nodes(), |_| [1.0, 2.0, 3.0]));
        assert!(sp.project_zero_mean(&c).periodic.max_abs() < 1e-15);
    }

    #[test]
    fn mean_displacement_matches_quadrature_of_affine_part() {
        // ⨍ A y over the parallelepiped, computed from quadrature point positions
        let cell = random_cell([2, 2, 3], 8);
        let sp = CellSpace::new(&cell);
        let a = SymMat3::from_mandel([1.0, 2.0, 3.0, 0.4, 0.5, 0.6]);
        let jac = cell.lattice().voxel_jacobian(cell.dims());
        let h = 0.5 / 3f64.sqrt();
        let gp = [0.5 - h, 0.5 + h];
        let mut sum = nalgebra::Vector3::zeros();
        for v in 0..cell.num_voxels() {
            let ijk = cell.coords(v);
            for q in 0..8 {
                let c = crate::element::corner(q);
                let xi = nalgebra::Vector3::new(ijk[0] as f64 + gp[c[0]], ijk[1] as f64 + gp[c[1]], ijk[2] as f64 + gp[c[2]]);
                let y = jac * xi;
                sum += nalgebra::Matrix3::from_fn(|r, k| a.to_dense()[r][k]) * y;
            }
        }
        sum /= (cell.num_voxels() * 8) as f64;
        let m = sp.mean_displacement(&LinPerField::affine(a, cell.num_nodes()));
        for d in 0..3 {
            assert!((m[d] - sum[d]).abs() < 1e-13);
        }
    }

    #[test]
    fn compatible_strains_have_zero_residual() {
        let cell = random_cell([4, 3, 2], 9);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = LinPerField::new(random_sym(&mut rng), random_nodal(cell.num_nodes(), &mut rng));
        let e = sp.sym_gradient(&u);
        assert!(sp.compat_residual(&e).unwrap() <= 1e-10 * sp.l2_norm(&e));
        let k = QuadField::constant(&cell, random_sym(&mut rng));
        assert!(sp.compat_residual(&k).unwrap() <= 1e-10 * sp.l2_norm(&k));
    }

    #[test]
    fn compat_residual_matches_dense_least_squares() {
        let cell = random_cell([2, 2, 2], 11);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let e = random_quad(&cell, &mut rng);

        // columns: strains of the 6 macro basis tensors and of each nodal unit vector,
        // rows scaled by √w so the Euclidean norm is the L² norm
        let nq = e.len() * 6;
        let ndof = 6 + 3 * cell.num_nodes();
        let sw = sp.mesh().element.weight.sqrt();
        let mut g = DMatrix::<f64>::zeros(nq, ndof);
        for col in 0..ndof {
            let mut x = vec![0.0; ndof];
            x[col] = 1.0;
            let s = sp.sym_gradient(&LinPerField::from_block(&x).unwrap());
            for (i, m) in s.values().iter().enumerate() {
                for c in 0..6 {
                    g[(6 * i + c, col)] = sw * m.m[c];
                }
            }
        }
        let rhs = DVector::from_fn(nq, |r, _| sw * e.values()[r / 6].m[r % 6]);
        let svd = g.clone().svd(true, true);
        let x = svd.solve(&rhs, 1e-12).unwrap();
        let dense = (rhs - g * x).norm();
        let ours = sp.compat_residual(&e).unwrap();
        assert!((dense - ours).abs() <= 1e-8, "{dense} vs {ours}");
    }

    #[test]
    fn membership_in_admissible_stresses() {
        let cell = random_cell([3, 3, 3], 13);
        let sp = CellSpace::new(&cell);
        let s = SymMat3::from_mandel([1.0, 0.0, -0.5, 0.2, 0.0, 0.1]);
        assert!(sp.in_ts(&QuadField::constant(&cell, s), &s, 1e-13).unwrap().holds);
        assert!(!sp.in_ts(&QuadField::constant(&cell, s * 2.0), &s, 1e-6).unwrap().holds);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let phi = random_nodal(cell.num_nodes(), &mut rng);
        let stiff = sp.apply_rigidity(&sp.sym_gradient_periodic(&phi));
        let chk = sp.in_ts(&stiff, &cell_average(&stiff), 1e-8).unwrap();
        assert!(!chk.holds);
        assert!(chk.divergence_residual > 0.0);
    }

    #[test]
    fn periodic_strain_energy_is_coercive_on_zero_mean_fields() {
        // smallest Ritz value of ∫⟨∇s u, ∇s u⟩ on zero-mean fields via inverse
        // power iteration, using the exact reference inverse
        let cell = VoxelCell::homogeneous([4, 4, 4], Tensor4Sym::identity()).unwrap();
        let sp = CellSpace::new(&cell);
        let rs = sp.range_solver();
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let mut x = random_nodal(cell.num_nodes(), &mut rng).into_vec();
        remove_nodal_mean(&mut x);
        let mut lambda = 0.0;
        for _ in 0..50 {
            let nrm = reduce::dot(&x, &x).sqrt();
            x.iter_mut().for_each(|v| *v /= nrm);
            let mut y = rs.inverse.apply(&x);
            remove_nodal_mean(&mut y);
            lambda = reduce::dot(&x, &rs.op.apply_nodal(&x));
            x = y;
        }
        assert!(lambda > 1e-3, "smallest Ritz value {lambda}");
    }

    #[test]
    fn average_product_identity_for_admissible_stress() {
        let cell = random_cell([3, 3, 3], 16);
        let sp = CellSpace::new(&cell);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        // divergence-free by construction: remove the gradient component
        let mu = random_quad(&cell, &mut rng);
        let phi = sp.gradient_projection(&mu).unwrap();
        let s = &mu - &sp.sym_gradient_periodic(&phi);
        let chk = sp.in_ts(&s, &cell_average(&s), 1e-10).unwrap();
        assert!(chk.holds);
        let u = LinPerField::new(random_sym(&mut rng), random_nodal(cell.num_nodes(), &mut rng));
        let e = sp.sym_gradient(&u);
        let lhs = sp.integrate_inner(&e, &s) / sp.volume();
        let rhs = cell_average(&e).inner(&cell_average(&s));
        assert!((lhs - rhs).abs() <= 1e-10 * sp.l2_norm(&e) * sp.l2_norm(&s));
    }
}
