//! The periodicity cell: lattice, voxel phase grid and per-phase rigidity.
//!
//! Voxels and nodes share one linear index `i + n1·(j + n2·k)`; node `(i,j,k)`
//! is the lower corner of voxel `(i,j,k)` and every index is taken modulo the
//! grid, so each periodic equivalence class of nodes has a single owner.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Matrix3;

use crate::error::{Error, Result};
use crate::reduce;
use crate::spaces::QuadField;
use crate::tensor::{invert, iso_tensor, SymMat3, Tensor4Sym};

/// Translation lattice generated by three independent vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lattice {
    /// Generators `g1, g2, g3`, one per row.
    pub g: [[f64; 3]; 3],
}

impl Default for Lattice {
    fn default() -> Self {
        Lattice::unit()
    }
}

impl Lattice {
    pub fn unit() -> Self {
        Lattice {
            g: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    pub fn new(g: [[f64; 3]; 3]) -> Result<Self> {
        let l = Lattice { g };
        if !g.iter().flatten().all(|v| v.is_finite()) {
            return Err(Error::validation("lattice", "non-finite generator"));
        }
        if !(l.volume() > 1e-300) {
            return Err(Error::validation("lattice", "generators are linearly dependent"));
        }
        Ok(l)
    }

    /// Rows-as-generators from a flat list of 9 values.
    pub fn from_flat(v: &[f64]) -> Result<Self> {
        if v.len() != 9 {
            return Err(Error::validation("lattice", format!("expected 9 values, got {}", v.len())));
        }
        Self::new([[v[0], v[1], v[2]], [v[3], v[4], v[5]], [v[6], v[7], v[8]]])
    }

    fn generator_matrix(&self) -> Matrix3<f64> {
        // columns are the generators
        Matrix3::from_fn(|r, c| self.g[c][r])
    }

    pub fn volume(&self) -> f64 {
        self.generator_matrix().determinant().abs()
    }

    /// Jacobian of the affine map from the unit reference cube onto one voxel.
    pub fn voxel_jacobian(&self, dims: [usize; 3]) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.g[c][r] / dims[c] as f64)
    }

    /// Cell centroid `(g1 + g2 + g3) / 2` relative to the cell origin.
    pub fn centroid(&self) -> [f64; 3] {
        let mut c = [0.0; 3];
        for gen in &self.g {
            for (ci, gi) in c.iter_mut().zip(gen) {
                *ci += 0.5 * gi;
            }
        }
        c
    }
}

/// Canonical representative of a periodic grid index.
#[inline]
pub fn wrap(idx: [i64; 3], dims: [usize; 3]) -> [usize; 3] {
    let mut out = [0usize; 3];
    for d in 0..3 {
        out[d] = idx[d].rem_euclid(dims[d] as i64) as usize;
    }
    out
}

/// Voxelized periodic microstructure with piecewise-constant rigidity.
#[derive(Debug, Clone)]
pub struct VoxelCell {
    dims: [usize; 3],
    phase_of: Vec<usize>,
    phases: Vec<Tensor4Sym>,
    compliances: Vec<Tensor4Sym>,
    lattice: Lattice,
}

impl VoxelCell {
    pub fn new(
        dims: [usize; 3],
        phase_of: Vec<usize>,
        phases: Vec<Tensor4Sym>,
        lattice: Lattice,
    ) -> Result<Self> {
        if dims.contains(&0) {
            return Err(Error::Shape(format!("grid dimensions must be positive, got {dims:?}")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if phase_of.len() != n {
            return Err(Error::Shape(format!(
                "expected {n} voxel phase ids, got {}",
                phase_of.len()
            )));
        }
        if phases.is_empty() {
            return Err(Error::Domain("phase table is empty".into()));
        }
        if let Some((v, &p)) = phase_of.iter().enumerate().find(|(_, &p)| p >= phases.len()) {
            return Err(Error::Domain(format!(
                "voxel {v} references phase {p}, but only {} phases exist",
                phases.len()
            )));
        }
        let mut compliances = Vec::with_capacity(phases.len());
        for (i, c) in phases.iter().enumerate() {
            if !c.is_spd() {
                return Err(Error::Domain(format!("phase {i} rigidity is not positive definite")));
            }
            compliances.push(invert(c)?);
        }
        Ok(VoxelCell {
            dims,
            phase_of,
            phases,
            compliances,
            lattice,
        })
    }

    pub fn homogeneous(dims: [usize; 3], c: Tensor4Sym) -> Result<Self> {
        let n = dims.iter().product();
        Self::new(dims, vec![0; n], vec![c], Lattice::unit())
    }

    pub fn with_lattice(mut self, lattice: Lattice) -> Self {
        self.lattice = lattice;
        self
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn num_voxels(&self) -> usize {
        self.phase_of.len()
    }

    /// Periodic node count (equals the voxel count).
    #[inline]
    pub fn num_nodes(&self) -> usize {
        self.phase_of.len()
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn volume(&self) -> f64 {
        self.lattice.volume()
    }

    pub fn voxel_volume(&self) -> f64 {
        self.volume() / self.num_voxels() as f64
    }

    pub fn phases(&self) -> &[Tensor4Sym] {
        &self.phases
    }

    pub fn phase_ids(&self) -> &[usize] {
        &self.phase_of
    }

    #[inline]
    pub fn phase_of(&self, voxel: usize) -> usize {
        self.phase_of[voxel]
    }

    #[inline]
    pub fn rigidity(&self, voxel: usize) -> &Tensor4Sym {
        &self.phases[self.phase_of[voxel]]
    }

    #[inline]
    pub fn compliance(&self, voxel: usize) -> &Tensor4Sym {
        &self.compliances[self.phase_of[voxel]]
    }

    #[inline]
    pub fn index(&self, ijk: [usize; 3]) -> usize {
        ijk[0] + self.dims[0] * (ijk[1] + self.dims[1] * ijk[2])
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let i = idx % self.dims[0];
        let r = idx / self.dims[0];
        [i, r % self.dims[1], r / self.dims[1]]
    }

    /// Linear index of a (possibly out-of-range) grid position after periodic wrap.
    #[inline]
    pub fn wrapped_index(&self, idx: [i64; 3]) -> usize {
        self.index(wrap(idx, self.dims))
    }

    pub fn phase_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.phases.len()];
        for &p in &self.phase_of {
            counts[p] += 1;
        }
        counts
            .into_iter()
            .map(|c| c as f64 / self.num_voxels() as f64)
            .collect()
    }

    /// Volume average of the rigidity field.
    pub fn mean_rigidity(&self) -> Tensor4Sym {
        self.weighted_phase_mean(&self.phases)
    }

    /// Volume average of the compliance field.
    pub fn mean_compliance(&self) -> Tensor4Sym {
        self.weighted_phase_mean(&self.compliances)
    }

    fn weighted_phase_mean(&self, table: &[Tensor4Sym]) -> Tensor4Sym {
        let mut acc = Tensor4Sym::zero();
        for (t, f) in table.iter().zip(self.phase_fractions()) {
            acc = acc + t.scaled(f);
        }
        acc
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = &self.phases[self.phase_of[0]];
        self.phase_of.iter().all(|&p| &self.phases[p] == first)
    }
}

/// Volume-weighted mean of a quadrature field over the cell.
///
/// All quadrature points carry equal weight (uniform voxels, 2×2×2 Gauss rule).
pub fn cell_average(f: &QuadField) -> SymMat3 {
    let n = f.len();
    let s = reduce::sum_array_by::<6, _>(n, |i| f.values()[i].m);
    SymMat3::from_mandel(s) * (1.0 / n as f64)
}

/// Contents of a voxel file before a lattice is attached.
#[derive(Debug, Clone)]
pub struct VoxelFile {
    pub dims: [usize; 3],
    pub phases: Vec<Tensor4Sym>,
    pub phase_of: Vec<usize>,
}

impl VoxelFile {
    pub fn into_cell(self, lattice: Lattice) -> Result<VoxelCell> {
        VoxelCell::new(self.dims, self.phase_of, self.phases, lattice)
    }
}

/// Parses the `CELLVOX 1` text format.
pub fn parse_voxel(text: &str) -> Result<VoxelFile> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty voxel file"))?;
    if header.split_whitespace().collect::<Vec<_>>() != ["CELLVOX", "1"] {
        return Err(Error::parse(ln, "expected header `CELLVOX 1`"));
    }

    let (ln, sizes) = lines.next().ok_or_else(|| Error::parse(2, "missing grid line"))?;
    let sizes: Vec<usize> = sizes
        .split_whitespace()
        .map(|t| t.parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| Error::parse(ln, format!("bad grid line: {e}")))?;
    if sizes.len() != 4 {
        return Err(Error::parse(ln, "grid line must be `n1 n2 n3 P`"));
    }
    let dims = [sizes[0], sizes[1], sizes[2]];
    if dims.contains(&0) || sizes[3] == 0 {
        return Err(Error::parse(ln, "grid sizes and phase count must be positive"));
    }

    let mut phases = Vec::with_capacity(sizes[3]);
    for p in 0..sizes[3] {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| Error::parse(3 + p, "missing phase line"))?;
        let mut tok = line.split_whitespace();
        let kind = tok.next().unwrap_or("");
        let vals: Vec<f64> = tok
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::parse(ln, format!("bad number: {e}")))?;
        let tensor = match (kind, vals.len()) {
            ("ISO", 2) => iso_tensor(vals[0], vals[1]),
            ("FULL", 21) => Tensor4Sym::from_upper_triangle(&vals),
            ("ISO", n) => return Err(Error::parse(ln, format!("ISO takes 2 values, got {n}"))),
            ("FULL", n) => return Err(Error::parse(ln, format!("FULL takes 21 values, got {n}"))),
            (k, _) => return Err(Error::parse(ln, format!("unknown phase kind `{k}`"))),
        }
        .map_err(|e| Error::parse(ln, e.to_string()))?;
        phases.push(tensor);
    }

    let n = dims[0] * dims[1] * dims[2];
    let mut phase_of = Vec::with_capacity(n);
    for (ln, line) in lines {
        for t in line.split_whitespace() {
            let id: usize = t
                .parse()
                .map_err(|e| Error::parse(ln, format!("bad phase id `{t}`: {e}")))?;
            if id >= phases.len() {
                return Err(Error::parse(ln, format!("phase id {id} out of range")));
            }
            phase_of.push(id);
        }
    }
    if phase_of.len() != n {
        return Err(Error::parse(
            text.lines().count(),
            format!("expected {n} phase ids, found {}", phase_of.len()),
        ));
    }
    Ok(VoxelFile {
        dims,
        phases,
        phase_of,
    })
}

pub fn read_voxel_file(path: &Path, lattice: Lattice) -> Result<VoxelCell> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_voxel(&text)?.into_cell(lattice)
}

/// Serializes a cell in the `CELLVOX 1` format (phases always written as `FULL`).
pub fn write_voxel(cell: &VoxelCell) -> String {
    let d = cell.dims();
    let mut out = String::new();
    writeln!(out, "CELLVOX 1").unwrap();
    writeln!(out, "{} {} {} {}", d[0], d[1], d[2], cell.phases().len()).unwrap();
    for p in cell.phases() {
        let entries: Vec<String> = p.upper_triangle().iter().map(|v| format!("{v:?}")).collect();
        writeln!(out, "FULL {}", entries.join(" ")).unwrap();
    }
    for row in cell.phase_ids().chunks(d[0]) {
        let ids: Vec<String> = row.iter().map(|p| p.to_string()).collect();
        writeln!(out, "{}", ids.join(" ")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spaces::QuadField;

    #[test]
    fn wrap_examples() {
        let dims = [4, 3, 2];
        assert_eq!(wrap([4, 0, 0], dims), [0, 0, 0]);
        assert_eq!(wrap([-1, 0, 0], dims), [3, 0, 0]);
        assert_eq!(wrap([2, 1, 1], dims), [2, 1, 1]);
        assert_eq!(wrap([-9, 7, -3], dims), [3, 1, 1]);
    }

    #[test]
    fn average_of_constant_and_antisymmetric_fields() {
        let cell = VoxelCell::homogeneous([2, 1, 1], iso_tensor(1.0, 1.0).unwrap()).unwrap();
        let m = SymMat3::from_mandel([1.0, -2.0, 0.5, 0.1, 0.2, 0.3]);
        let f = QuadField::constant(&cell, m);
        let avg = cell_average(&f);
        for (a, b) in avg.m.iter().zip(m.m) {
            assert!((a - b).abs() < 1e-15);
        }
        let g = QuadField::from_fn(&cell, |v, _| if v == 0 { m } else { -m });
        assert!(cell_average(&g).max_abs() < 1e-15);
    }

    #[test]
    fn parse_iso_and_full() {
        let text = "CELLVOX 1\n2 1 1 2\nISO 1 1\nFULL 1 0 0 0 0 0 1 0 0 0 0 1 0 0 0 1 0 0 1 0 1\n0 1\n";
        let vf = parse_voxel(text).unwrap();
        assert_eq!(vf.dims, [2, 1, 1]);
        assert_eq!(vf.phase_of, vec![0, 1]);
        assert_eq!(vf.phases[1], Tensor4Sym::identity());
        assert_eq!(vf.phases[0].entry(0, 0), 3.0);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let bad_header = "CELLVOX 2\n1 1 1 1\nISO 1 1\n0\n";
        assert!(matches!(parse_voxel(bad_header), Err(Error::Parse { line: 1, .. })));
        let bad_phase = "CELLVOX 1\n1 1 1 1\nISO 1\n0\n";
        assert!(matches!(parse_voxel(bad_phase), Err(Error::Parse { line: 3, .. })));
        let bad_id = "CELLVOX 1\n1 1 1 1\nISO 1 1\n3\n";
        assert!(matches!(parse_voxel(bad_id), Err(Error::Parse { line: 4, .. })));
        let short = "CELLVOX 1\n2 1 1 1\nISO 1 1\n0\n";
        assert!(matches!(parse_voxel(short), Err(Error::Parse { .. })));
        let not_spd = "CELLVOX 1\n1 1 1 1\nISO 1 -1\n0\n";
        assert!(matches!(parse_voxel(not_spd), Err(Error::Parse { line: 3, .. })));
    }

    #[test]
    fn write_then_parse_is_exact() {
        let a = iso_tensor(0.3, 1.7).unwrap();
        let b = iso_tensor(2.0 / 3.0, 0.1).unwrap();
        let cell = VoxelCell::new([3, 2, 1], vec![0, 1, 1, 0, 0, 1], vec![a, b], Lattice::unit()).unwrap();
        let back = parse_voxel(&write_voxel(&cell)).unwrap();
        assert_eq!(back.phase_of, cell.phase_ids());
        assert_eq!(back.phases, cell.phases());
    }

    #[test]
    fn lattice_volume_and_rejection() {
        let l = Lattice::new([[2.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 3.0]]).unwrap();
        assert!((l.volume() - 6.0).abs() < 1e-14);
        assert!(Lattice::new([[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 1.0]]).is_err());
    }

    #[test]
    fn rejects_bad_cells() {
        let c = iso_tensor(1.0, 1.0).unwrap();
        assert!(VoxelCell::new([2, 1, 1], vec![0], vec![c], Lattice::unit()).is_err());
        assert!(VoxelCell::new([1, 1, 1], vec![1], vec![c], Lattice::unit()).is_err());
        let mut k = *c.matrix();
        k[(0, 0)] = -1.0;
        let bad = Tensor4Sym::from_matrix(k).unwrap();
        assert!(VoxelCell::new([1, 1, 1], vec![0], vec![bad], Lattice::unit()).is_err());
    }
}
