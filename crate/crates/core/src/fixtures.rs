//! Reference microstructures with fixed seeds.

use nalgebra::Matrix6;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cell::{Lattice, VoxelCell};
use crate::tensor::{iso_tensor, Tensor4Sym};

/// Seed of the random two-phase fixture.
pub const RANDOM_FIXTURE_SEED: u64 = 20_240_917;

pub fn soft_phase() -> Tensor4Sym {
    iso_tensor(1.0, 1.0).expect("valid isotropic constants")
}

pub fn stiff_phase() -> Tensor4Sym {
    iso_tensor(3.0, 5.0).expect("valid isotropic constants")
}

/// (a) Single phase on a 4³ grid.
pub fn homogeneous() -> VoxelCell {
    VoxelCell::homogeneous([4, 4, 4], soft_phase()).expect("valid cell")
}

/// 50/50 layers stacked along axis 1: phase 0 in the first half of `i`.
pub fn laminate_with(dims: [usize; 3], a: Tensor4Sym, b: Tensor4Sym) -> VoxelCell {
    let n = dims.iter().product();
    let ids = (0..n).map(|v| usize::from(v % dims[0] >= dims[0] / 2)).collect();
    VoxelCell::new(dims, ids, vec![a, b], Lattice::unit()).expect("valid cell")
}

/// (b) 8×4×4 axis-1 laminate of `iso(0, 1)` and `iso(0, 2)`.
pub fn laminate() -> VoxelCell {
    laminate_with(
        [8, 4, 4],
        iso_tensor(0.0, 1.0).expect("valid isotropic constants"),
        iso_tensor(0.0, 2.0).expect("valid isotropic constants"),
    )
}

/// (c) Centered 4³ stiff cube in an 8³ soft matrix.
pub fn inclusion() -> VoxelCell {
    let dims = [8, 8, 8];
    let ids = (0..512)
        .map(|v| {
            let (i, j, k) = (v % 8, (v / 8) % 8, v / 64);
            usize::from([i, j, k].iter().all(|&c| (2..6).contains(&c)))
        })
        .collect();
    VoxelCell::new(dims, ids, vec![soft_phase(), stiff_phase()], Lattice::unit()).expect("valid cell")
}

/// Seeded two-phase cell with independent 50/50 voxel draws.
pub fn random_two_phase(dims: [usize; 3], seed: u64) -> VoxelCell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = dims.iter().product();
    let ids = (0..n).map(|_| usize::from(rng.random_bool(0.5))).collect();
    VoxelCell::new(dims, ids, vec![soft_phase(), stiff_phase()], Lattice::unit()).expect("valid cell")
}

/// (d) The random two-phase 4³ fixture.
pub fn random_fixture() -> VoxelCell {
    random_two_phase([4, 4, 4], RANDOM_FIXTURE_SEED)
}

/// Random SPD tensor `G Gᵀ + ½ I` with entries of `G` uniform in `[−1, 1]`.
pub fn random_spd(rng: &mut impl Rng) -> Tensor4Sym {
    let g = Matrix6::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let m = g * g.transpose() + Matrix6::identity() * 0.5;
    Tensor4Sym::from_matrix(0.5 * (m + m.transpose())).expect("symmetric by construction")
}

/// All four named fixtures with their labels.
pub fn all() -> Vec<(&'static str, VoxelCell)> {
    vec![
        ("homogeneous", homogeneous()),
        ("laminate", laminate()),
        ("inclusion", inclusion()),
        ("random", random_fixture()),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_have_expected_fractions() {
        assert_eq!(laminate().phase_fractions(), vec![0.5, 0.5]);
        assert_eq!(inclusion().phase_fractions(), vec![448.0 / 512.0, 64.0 / 512.0]);
        let f = random_fixture().phase_fractions();
        assert!(f[0] > 0.2 && f[0] < 0.8);
        assert_eq!(random_fixture().phase_ids(), random_fixture().phase_ids());
    }

    #[test]
    fn random_spd_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..20 {
            assert!(random_spd(&mut rng).is_spd());
        }
    }
}
