use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use cellhom::cell::{Lattice, VoxelCell};
use cellhom::fixtures;
use cellhom::homogenization::homogenize;
use cellhom::solvers::{CellSolver, SolveParams};
use cellhom::tensor::SymMat3;
use cellhom::verification::{hill_mandel, voigt_reuss};

fn small_cell(seed: u64, dims: [usize; 3]) -> VoxelCell {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phases = vec![fixtures::random_spd(&mut rng), fixtures::random_spd(&mut rng)];
    let n = dims.iter().product();
    let ids = (0..n).map(|v| (v * 7 + seed as usize) % 3 % 2).collect();
    VoxelCell::new(dims, ids, phases, Lattice::unit()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn homogenized_tensor_is_spd_and_bounded(seed in 0u64..10_000, n1 in 1usize..4, n2 in 1usize..4, n3 in 1usize..4) {
        let cell = small_cell(seed, [n1, n2, n3]);
        let r = homogenize(&cell, &SolveParams::default()).unwrap();
        prop_assert!(r.ch.is_spd());
        prop_assert!(r.asymmetry <= 1e-9);
        let (up, low) = voigt_reuss(&cell, &r.ch).unwrap();
        prop_assert!(up >= -1e-8 * r.ch.norm());
        prop_assert!(low >= -1e-8 * r.ch.norm());
    }

    #[test]
    fn strain_solution_is_linear_and_macrohomogeneous(
        seed in 0u64..10_000,
        a in prop::array::uniform6(-1.0f64..1.0),
        b in prop::array::uniform6(-1.0f64..1.0),
        t in -2.0f64..2.0,
    ) {
        let cell = small_cell(seed, [3, 2, 2]);
        let params = SolveParams::default().with_tol(1e-11);
        let solver = CellSolver::new(&cell, params).unwrap();
        let sp = solver.space();
        let (a, b) = (SymMat3::from_mandel(a), SymMat3::from_mandel(b));
        let (ua, _) = solver.strain_driven(&a).unwrap();
        let (ub, _) = solver.strain_driven(&b).unwrap();
        let (uc, _) = solver.strain_driven(&(a + b * t)).unwrap();
        let ea = sp.sym_gradient(&ua);
        let eb = sp.sym_gradient(&ub);
        let ec = sp.sym_gradient(&uc);
        let combo = &ea + &(&eb * t);
        let scale = sp.l2_norm(&ec).max(1e-12);
        prop_assert!(sp.l2_norm(&(&ec - &combo)) <= 1e-8 * scale);
        let sigma = sp.apply_rigidity(&ea);
        prop_assert!(hill_mandel(sp, &ua, &sigma) <= 1e-8);
    }
}
