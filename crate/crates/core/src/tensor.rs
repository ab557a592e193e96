//! Symmetric second- and fourth-order tensors in orthonormal Mandel notation.
//!
//! A symmetric 3×3 matrix is stored as the 6-vector
//! `(m11, m22, m33, √2·m23, √2·m13, √2·m12)`. With this scaling the Euclidean
//! dot product of two 6-vectors equals the full double contraction `Σ A_ij B_ij`,
//! and a fourth-order tensor with minor and major symmetries becomes a plain
//! symmetric 6×6 matrix, so contraction and inversion are ordinary matrix
//! operations.

use std::ops::{Add, AddAssign, Mul, Neg, Sub, SubAssign};

use nalgebra::{Matrix6, SymmetricEigen, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SQRT_2: f64 = std::f64::consts::SQRT_2;

/// Reciprocal condition number below which a tensor is treated as singular.
pub const SINGULAR_RCOND: f64 = 1e-14;

/// Mandel slot of each `(i, j)` index pair.
const SLOT: [[usize; 3]; 3] = [[0, 5, 4], [5, 1, 3], [4, 3, 2]];

/// Index pairs of the six Mandel slots, in storage order.
pub const SLOT_PAIRS: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (1, 2), (0, 2), (0, 1)];

#[inline]
fn slot_weight(slot: usize) -> f64 {
    if slot < 3 {
        1.0
    } else {
        SQRT_2
    }
}

/// A symmetric 3×3 strain or stress value in Mandel form.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SymMat3 {
    pub m: [f64; 6],
}

impl SymMat3 {
    pub const ZERO: SymMat3 = SymMat3 { m: [0.0; 6] };

    pub const fn from_mandel(m: [f64; 6]) -> Self {
        SymMat3 { m }
    }

    /// Builds the value from tensor components `(a11, a22, a33, a23, a13, a12)`.
    pub fn from_components(c: [f64; 6]) -> Self {
        let mut m = c;
        for (slot, v) in m.iter_mut().enumerate() {
            *v *= slot_weight(slot);
        }
        SymMat3 { m }
    }

    /// Symmetric part of an arbitrary dense matrix.
    pub fn from_dense(a: &[[f64; 3]; 3]) -> Self {
        let mut m = [0.0; 6];
        for (slot, &(i, j)) in SLOT_PAIRS.iter().enumerate() {
            m[slot] = 0.5 * (a[i][j] + a[j][i]) * slot_weight(slot);
        }
        SymMat3 { m }
    }

    pub fn to_dense(&self) -> [[f64; 3]; 3] {
        let mut a = [[0.0; 3]; 3];
        for (i, row) in a.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.component(i, j);
            }
        }
        a
    }

    /// Tensor component `a_ij` (no Mandel scaling).
    #[inline]
    pub fn component(&self, i: usize, j: usize) -> f64 {
        let slot = SLOT[i][j];
        self.m[slot] / slot_weight(slot)
    }

    pub fn identity() -> Self {
        SymMat3 {
            m: [1.0, 1.0, 1.0, 0.0, 0.0, 0.0],
        }
    }

    /// The i-th orthonormal Mandel basis element.
    pub fn basis(i: usize) -> Self {
        let mut m = [0.0; 6];
        m[i] = 1.0;
        SymMat3 { m }
    }

    #[inline]
    pub fn inner(&self, other: &SymMat3) -> f64 {
        inner(self, other)
    }

    #[inline]
    pub fn norm(&self) -> f64 {
        self.inner(self).sqrt()
    }

    pub fn trace(&self) -> f64 {
        self.m[0] + self.m[1] + self.m[2]
    }

    pub fn is_finite(&self) -> bool {
        self.m.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub(crate) fn as_vector(&self) -> Vector6<f64> {
        Vector6::from_column_slice(&self.m)
    }

    pub(crate) fn from_vector(v: &Vector6<f64>) -> Self {
        let mut m = [0.0; 6];
        m.copy_from_slice(v.as_slice());
        SymMat3 { m }
    }
}

impl Add for SymMat3 {
    type Output = SymMat3;
    fn add(mut self, rhs: SymMat3) -> SymMat3 {
        self += rhs;
        self
    }
}

impl AddAssign for SymMat3 {
    fn add_assign(&mut self, rhs: SymMat3) {
        for (a, b) in self.m.iter_mut().zip(rhs.m) {
            *a += b;
        }
    }
}

impl Sub for SymMat3 {
    type Output = SymMat3;
    fn sub(mut self, rhs: SymMat3) -> SymMat3 {
        self -= rhs;
        self
    }
}

impl SubAssign for SymMat3 {
    fn sub_assign(&mut self, rhs: SymMat3) {
        for (a, b) in self.m.iter_mut().zip(rhs.m) {
            *a -= b;
        }
    }
}

impl Neg for SymMat3 {
    type Output = SymMat3;
    fn neg(self) -> SymMat3 {
        self * -1.0
    }
}

impl Mul<f64> for SymMat3 {
    type Output = SymMat3;
    fn mul(mut self, s: f64) -> SymMat3 {
        for a in self.m.iter_mut() {
            *a *= s;
        }
        self
    }
}

impl Mul<SymMat3> for f64 {
    type Output = SymMat3;
    fn mul(self, rhs: SymMat3) -> SymMat3 {
        rhs * self
    }
}

/// Fourth-order tensor with minor and major symmetries as a symmetric 6×6 Mandel matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tensor4Sym {
    k: Matrix6<f64>,
}

/// Serialized as its 6 Mandel rows.
impl Serialize for Tensor4Sym {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Tensor4Sym {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let rows = <[[f64; 6]; 6]>::deserialize(deserializer)?;
        Tensor4Sym::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

impl Tensor4Sym {
    pub fn identity() -> Self {
        Tensor4Sym {
            k: Matrix6::identity(),
        }
    }

    pub fn zero() -> Self {
        Tensor4Sym { k: Matrix6::zeros() }
    }

    /// Wraps a Mandel matrix, symmetrizing it. Fails if the input is visibly asymmetric.
    pub fn from_matrix(k: Matrix6<f64>) -> Result<Self> {
        let scale = k.amax().max(f64::MIN_POSITIVE);
        let asym = (k - k.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::Domain(format!(
                "Mandel matrix is not symmetric (max |k - k^T| = {asym:e})"
            )));
        }
        if k.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("Mandel matrix has non-finite entries".into()));
        }
        Ok(Tensor4Sym {
            k: 0.5 * (k + k.transpose()),
        })
    }

    pub fn from_rows(rows: [[f64; 6]; 6]) -> Result<Self> {
        Self::from_matrix(Matrix6::from_fn(|i, j| rows[i][j]))
    }

    /// Builds from the 21 upper-triangle Mandel entries, row-major.
    pub fn from_upper_triangle(entries: &[f64]) -> Result<Self> {
        if entries.len() != 21 {
            return Err(Error::Domain(format!(
                "expected 21 upper-triangle entries, got {}",
                entries.len()
            )));
        }
        let mut k = Matrix6::zeros();
        let mut it = entries.iter();
        for i in 0..6 {
            for j in i..6 {
                let v = *it.next().unwrap();
                k[(i, j)] = v;
                k[(j, i)] = v;
            }
        }
        Self::from_matrix(k)
    }

    pub fn upper_triangle(&self) -> [f64; 21] {
        let mut out = [0.0; 21];
        let mut n = 0;
        for i in 0..6 {
            for j in i..6 {
                out[n] = self.k[(i, j)];
                n += 1;
            }
        }
        out
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.k
    }

    #[inline]
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.k[(i, j)]
    }

    pub fn rows(&self) -> [[f64; 6]; 6] {
        let mut r = [[0.0; 6]; 6];
        for (i, row) in r.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.k[(i, j)];
            }
        }
        r
    }

    /// Tensor component `C_ijkl` (no Mandel scaling).
    pub fn component(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        let a = SLOT[i][j];
        let b = SLOT[k][l];
        self.k[(a, b)] / (slot_weight(a) * slot_weight(b))
    }

    pub fn eigenvalues(&self) -> [f64; 6] {
        let eig = SymmetricEigen::new(self.k);
        let mut ev = [0.0; 6];
        ev.copy_from_slice(eig.eigenvalues.as_slice());
        ev.sort_by(|a, b| a.total_cmp(b));
        ev
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }

    pub fn is_spd(&self) -> bool {
        self.min_eigenvalue() > 0.0
    }

    /// `min |λ| / max |λ|`; exact 2-norm reciprocal condition for a symmetric matrix.
    pub fn rcond(&self) -> f64 {
        let ev = self.eigenvalues();
        let max = ev.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let min = ev.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }

    /// Max-norm of the entries.
    pub fn max_norm(&self) -> f64 {
        self.k.amax()
    }

    /// Frobenius norm of the Mandel matrix (equals the full tensor norm).
    pub fn norm(&self) -> f64 {
        self.k.norm()
    }

    pub fn transpose(&self) -> Self {
        Tensor4Sym {
            k: self.k.transpose(),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Tensor4Sym { k: self.k * s }
    }
}

impl Add for Tensor4Sym {
    type Output = Tensor4Sym;
    fn add(self, rhs: Tensor4Sym) -> Tensor4Sym {
        Tensor4Sym { k: self.k + rhs.k }
    }
}

impl Sub for Tensor4Sym {
    type Output = Tensor4Sym;
    fn sub(self, rhs: Tensor4Sym) -> Tensor4Sym {
        Tensor4Sym { k: self.k - rhs.k }
    }
}

/// Isotropic Hooke tensor `λ δ_ij δ_kl + μ (δ_ik δ_jl + δ_il δ_jk)`.
pub fn iso_tensor(lambda: f64, mu: f64) -> Result<Tensor4Sym> {
    if !(lambda.is_finite() && mu.is_finite()) {
        return Err(Error::Domain("Lamé parameters must be finite".into()));
    }
    if mu <= 0.0 {
        return Err(Error::Domain(format!("shear modulus must be positive, got {mu}")));
    }
    if 3.0 * lambda + 2.0 * mu <= 0.0 {
        return Err(Error::Domain(format!(
            "3λ + 2μ must be positive, got {}",
            3.0 * lambda + 2.0 * mu
        )));
    }
    let mut k = Matrix6::zeros();
    for i in 0..3 {
        for j in 0..3 {
            k[(i, j)] = lambda;
        }
        k[(i, i)] += 2.0 * mu;
        k[(i + 3, i + 3)] = 2.0 * mu;
    }
    Ok(Tensor4Sym { k })
}

/// Inverse tensor (compliance from rigidity and back).
pub fn invert(t: &Tensor4Sym) -> Result<Tensor4Sym> {
    let rcond = t.rcond();
    if !(rcond >= SINGULAR_RCOND) {
        return Err(Error::SingularTensor { rcond });
    }
    let inv = t
        .k
        .try_inverse()
        .ok_or(Error::SingularTensor { rcond })?;
    Ok(Tensor4Sym {
        k: 0.5 * (inv + inv.transpose()),
    })
}

#[inline]
pub fn apply(t: &Tensor4Sym, e: &SymMat3) -> SymMat3 {
    let mut out = [0.0; 6];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, ej) in e.m.iter().enumerate() {
            acc += t.k[(i, j)] * ej;
        }
        *o = acc;
    }
    SymMat3 { m: out }
}

#[inline]
pub fn inner(a: &SymMat3, b: &SymMat3) -> f64 {
    a.m.iter().zip(b.m.iter()).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn quad(t: &Tensor4Sym, e: &SymMat3) -> f64 {
    inner(&apply(t, e), e)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(rng: &mut impl Rng) -> Tensor4Sym {
        let l = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
        Tensor4Sym::from_matrix(l * l.transpose() + Matrix6::identity() * 0.5).unwrap()
    }

    #[test]
    fn iso_examples() {
        let c = iso_tensor(1.0, 1.0).unwrap();
        assert_eq!(c.component(0, 0, 0, 0), 3.0);
        let c = iso_tensor(0.0, 1.0).unwrap();
        assert_eq!(c.component(0, 0, 1, 1), 0.0);
        let c = iso_tensor(2.0, 1.0).unwrap();
        assert_eq!(c.entry(3, 3), 2.0);
        assert!(c.is_spd());
    }

    #[test]
    fn iso_rejects_non_spd() {
        assert!(matches!(iso_tensor(1.0, 0.0), Err(Error::Domain(_))));
        assert!(matches!(iso_tensor(-1.0, 1.0), Err(Error::Domain(_))));
        assert!(iso_tensor(-0.6, 1.0).is_ok());
    }

    #[test]
    fn mandel_contraction_matches_full_tensor() {
        let c = iso_tensor(1.3, 0.7).unwrap();
        let e = SymMat3::from_components([0.1, -0.2, 0.3, 0.05, -0.4, 0.25]);
        let ed = e.to_dense();
        let mut full = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        full += c.component(i, j, k, l) * ed[k][l] * ed[i][j];
                    }
                }
            }
        }
        assert!((quad(&c, &e) - full).abs() < 1e-14);
    }

    #[test]
    fn invert_examples() {
        let id = invert(&Tensor4Sym::identity()).unwrap();
        assert_eq!(id, Tensor4Sym::identity());

        let d = invert(&iso_tensor(1.0, 1.0).unwrap()).unwrap();
        let di = apply(&d, &SymMat3::identity());
        for (got, want) in di.m.iter().zip([0.2, 0.2, 0.2, 0.0, 0.0, 0.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((d.component(0, 0, 0, 0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn invert_random_spd_product_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let t = random_spd(&mut rng);
            let ti = invert(&t).unwrap();
            // plain triple loop, independent of nalgebra's product
            let mut worst = 0.0f64;
            for i in 0..6 {
                for j in 0..6 {
                    let mut s = 0.0;
                    for k in 0..6 {
                        s += t.entry(i, k) * ti.entry(k, j);
                    }
                    let target = if i == j { 1.0 } else { 0.0 };
                    worst = worst.max((s - target).abs());
                }
            }
            assert!(worst <= 1e-12, "worst {worst}");
            assert!(ti.is_spd());
        }
    }

    #[test]
    fn invert_singular() {
        let mut k = Matrix6::identity();
        k[(5, 5)] = 1e-16;
        let t = Tensor4Sym::from_matrix(k).unwrap();
        assert!(matches!(invert(&t), Err(Error::SingularTensor { .. })));
    }

    #[test]
    fn apply_inner_quad_examples() {
        let e = SymMat3::from_mandel([0.3, 0.1, -0.2, 0.4, 0.0, 1.0]);
        assert_eq!(apply(&Tensor4Sym::identity(), &e), e);

        let p = 2.5;
        let s = SymMat3::from_mandel([p, p, p, 0.0, 0.0, 0.0]);
        assert_eq!(inner(&SymMat3::identity(), &s), 3.0 * p);

        // pure shear e12 = 1: Mandel slot 6 = √2, energy 4 μ e12²
        let shear = SymMat3::from_components([0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        assert!((shear.m[5] - SQRT_2).abs() < 1e-15);
        let q = quad(&iso_tensor(1.0, 1.0).unwrap(), &shear);
        assert!((q - 4.0).abs() < 1e-14);
    }

    #[test]
    fn upper_triangle_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_spd(&mut rng);
        let back = Tensor4Sym::from_upper_triangle(&t.upper_triangle()).unwrap();
        assert_eq!(back, t);
    }

    fn arb_sym() -> impl Strategy<Value = SymMat3> {
        proptest::array::uniform6(-10.0f64..10.0).prop_map(SymMat3::from_mandel)
    }

    proptest! {
        #[test]
        fn mandel_inner_is_full_contraction(a in arb_sym(), b in arb_sym()) {
            let (ad, bd) = (a.to_dense(), b.to_dense());
            let mut full = 0.0;
            for i in 0..3 { for j in 0..3 { full += ad[i][j] * bd[i][j]; } }
            prop_assert!((inner(&a, &b) - full).abs() <= 1e-12 * (1.0 + full.abs()));
            prop_assert!((inner(&a, &b) - inner(&b, &a)).abs() == 0.0);
        }

        #[test]
        fn dense_round_trip(a in arb_sym()) {
            let back = SymMat3::from_dense(&a.to_dense());
            for (x, y) in back.m.iter().zip(a.m.iter()) {
                prop_assert!((x - y).abs() <= 1e-15 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn quad_positive_and_apply_linear(seed in 0u64..1000, a in arb_sym(), b in arb_sym(), s in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_spd(&mut rng);
            if a.norm() > 1e-9 {
                prop_assert!(quad(&t, &a) > 0.0);
            }
            let lhs = apply(&t, &(a + b * s));
            let rhs = apply(&t, &a) + apply(&t, &b) * s;
            for (x, y) in lhs.m.iter().zip(rhs.m.iter()) {
                prop_assert!((x - y).abs() <= 1e-11 * (1.0 + y.abs()));
            }
        }

        #[test]
        fn invert_is_an_involution(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_spd(&mut rng);
            let back = invert(&invert(&t).unwrap()).unwrap();
            for i in 0..6 { for j in 0..6 {
                let (x, y) = (back.entry(i, j), t.entry(i, j));
                prop_assert!((x - y).abs() <= 1e-12 * t.max_norm());
            }}
        }
    }
}
