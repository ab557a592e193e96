//! Flat `key = value` run configuration.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::cell::Lattice;
use crate::error::{Error, Result};
use crate::formulations::MacroData;
use crate::homogenization::Formulation;
use crate::operator::PreconditionerKind;
use crate::solvers::{SolveParams, UzawaStep};
use crate::tensor::SymMat3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Task {
    Homogenize,
    Solve(MacroData),
    Verify,
}

impl Task {
    pub fn name(&self) -> &'static str {
        match self {
            Task::Homogenize => "homogenize",
            Task::Solve(_) => "solve",
            Task::Verify => "verify",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub voxel_path: PathBuf,
    pub lattice: Lattice,
    pub task: Task,
    pub formulation: Formulation,
    pub tol: f64,
    pub max_iter: usize,
    pub uzawa_step: UzawaStep,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub preconditioner: PreconditionerKind,
}

impl RunConfig {
    pub fn params(&self) -> SolveParams {
        SolveParams {
            tol: self.tol,
            max_iter: self.max_iter,
            uzawa_step: self.uzawa_step,
            seed: self.seed,
            preconditioner: self.preconditioner,
        }
    }

    /// Makes relative paths relative to `base`.
    pub fn resolve_paths(mut self, base: &Path) -> Self {
        if self.voxel_path.is_relative() {
            self.voxel_path = base.join(&self.voxel_path);
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
        self
    }
}

const KEYS: [&str; 12] = [
    "voxel_path",
    "lattice",
    "task",
    "formulation",
    "macro_kind",
    "macro_value",
    "tol",
    "max_iter",
    "uzawa_step",
    "output_dir",
    "seed",
    "preconditioner",
];

struct Entry {
    line: usize,
    value: String,
}

fn reals(e: &Entry, field: &str, n: usize) -> Result<Vec<f64>> {
    let v: Vec<f64> = e
        .value
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|err| Error::parse(e.line, format!("`{field}`: {err}")))?;
    if v.len() != n {
        return Err(Error::validation(field, format!("expected {n} numbers, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(field, "values must be finite"));
    }
    Ok(v)
}

fn scalar<T: std::str::FromStr>(e: &Entry, field: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    e.value
        .parse::<T>()
        .map_err(|err| Error::parse(e.line, format!("`{field}`: {err}")))
}

/// Parses the configuration text. Paths are returned as written; see
/// [`load_config`] for resolution against the file location.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut entries: Vec<(String, Entry)> = Vec::new();
    let mut seen = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| Error::parse(line, "expected `key = value`"))?;
        let key = key.trim();
        if !KEYS.contains(&key) {
            return Err(Error::parse(line, format!("unknown key `{key}`")));
        }
        if !seen.insert(key.to_string()) {
            return Err(Error::parse(line, format!("duplicate key `{key}`")));
        }
        entries.push((
            key.to_string(),
            Entry {
                line,
                value: value.trim().to_string(),
            },
        ));
    }
    let get = |k: &str| entries.iter().find(|(key, _)| key == k).map(|(_, e)| e);

    let voxel_path = get("voxel_path")
        .map(|e| PathBuf::from(&e.value))
        .filter(|p| !p.as_os_str().is_empty())
        .ok_or_else(|| Error::validation("voxel_path", "required"))?;

    let lattice = match get("lattice") {
        Some(e) => Lattice::from_flat(&reals(e, "lattice", 9)?).map_err(|err| Error::validation("lattice", err.to_string()))?,
        None => Lattice::unit(),
    };

    let formulation = match get("formulation").map(|e| e.value.as_str()) {
        None | Some("displacement") => Formulation::Displacement,
        Some("stress-uzawa") => Formulation::StressUzawa,
        Some("strain") => Formulation::Strain,
        Some(other) => return Err(Error::validation("formulation", format!("unknown formulation `{other}`"))),
    };

    let task_name = get("task")
        .map(|e| e.value.clone())
        .ok_or_else(|| Error::validation("task", "required"))?;
    let task = match task_name.as_str() {
        "homogenize" | "verify" => {
            for k in ["macro_kind", "macro_value"] {
                if get(k).is_some() {
                    return Err(Error::validation(k, format!("not used by task `{task_name}`")));
                }
            }
            if task_name == "verify" {
                Task::Verify
            } else {
                Task::Homogenize
            }
        }
        "solve" => {
            let value = get("macro_value").ok_or_else(|| Error::validation("macro_value", "required for task `solve`"))?;
            let m = reals(value, "macro_value", 6)?;
            let m = SymMat3::from_mandel([m[0], m[1], m[2], m[3], m[4], m[5]]);
            let data = match get("macro_kind").map(|e| e.value.as_str()) {
                Some("strain") => MacroData::StrainDriven(m),
                Some("stress") => MacroData::StressDriven(m),
                Some(other) => return Err(Error::validation("macro_kind", format!("expected `strain` or `stress`, got `{other}`"))),
                None => return Err(Error::validation("macro_kind", "required for task `solve`")),
            };
            if formulation == Formulation::StressUzawa && matches!(data, MacroData::StrainDriven(_)) {
                return Err(Error::validation("formulation", "stress-uzawa needs macro_kind = stress"));
            }
            Task::Solve(data)
        }
        other => return Err(Error::validation("task", format!("unknown task `{other}`"))),
    };

    let tol = match get("tol") {
        Some(e) => scalar::<f64>(e, "tol")?,
        None => 1e-9,
    };
    let max_iter = match get("max_iter") {
        Some(e) => {
            let v = scalar::<i64>(e, "max_iter")?;
            usize::try_from(v).map_err(|_| Error::validation("max_iter", "must be at least 1"))?
        }
        None => 10_000,
    };
    let uzawa_step = match get("uzawa_step") {
        None => UzawaStep::Auto,
        Some(e) if e.value.eq_ignore_ascii_case("auto") => UzawaStep::Auto,
        Some(e) => UzawaStep::Fixed(scalar::<f64>(e, "uzawa_step")?),
    };
    let output_dir = get("output_dir").map(|e| PathBuf::from(&e.value)).unwrap_or_else(|| PathBuf::from("."));
    let seed = match get("seed") {
        Some(e) => scalar::<u64>(e, "seed")?,
        None => 0,
    };
    let preconditioner = match get("preconditioner").map(|e| e.value.as_str()) {
        None | Some("reference") => PreconditionerKind::Reference,
        Some("jacobi") => PreconditionerKind::Jacobi,
        Some(other) => return Err(Error::validation("preconditioner", format!("unknown preconditioner `{other}`"))),
    };

    let cfg = RunConfig {
        voxel_path,
        lattice,
        task,
        formulation,
        tol,
        max_iter,
        uzawa_step,
        output_dir,
        seed,
        preconditioner,
    };
    cfg.params().validate()?;
    Ok(cfg)
}

/// Reads and parses a configuration file, resolving paths against its directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    Ok(parse_config(&text)?.resolve_paths(base))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field_of(r: Result<RunConfig>) -> String {
        match r {
            Err(Error::Validation { field, .. }) => field,
            other => panic!("expected a validation error, got {other:?}"),
        }
    }

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config("voxel_path = cell.vox\ntask = homogenize\n").unwrap();
        assert_eq!(c.voxel_path, PathBuf::from("cell.vox"));
        assert_eq!(c.task, Task::Homogenize);
        assert_eq!(c.formulation, Formulation::Displacement);
        assert_eq!(c.lattice, Lattice::unit());
        assert_eq!(c.tol, 1e-9);
        assert_eq!(c.max_iter, 10_000);
        assert_eq!(c.uzawa_step, UzawaStep::Auto);
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn negative_tol_is_rejected() {
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = homogenize\ntol = -1\n")), "tol");
    }

    #[test]
    fn uzawa_homogenize_accepted() {
        let c = parse_config("voxel_path = a\ntask = homogenize\nformulation = stress-uzawa\n").unwrap();
        assert_eq!(c.formulation, Formulation::StressUzawa);
    }

    #[test]
    fn solve_needs_macro_fields() {
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = solve\n")), "macro_value");
        assert_eq!(
            field_of(parse_config("voxel_path = a\ntask = solve\nmacro_value = 1 0 0 0 0 0\n")),
            "macro_kind"
        );
        assert_eq!(
            field_of(parse_config("voxel_path = a\ntask = homogenize\nmacro_kind = strain\n")),
            "macro_kind"
        );
        let c = parse_config(
            "# stress load\nvoxel_path = a\ntask = solve   # trailing comment\nmacro_kind = stress\nmacro_value = 1 0 0 0 0 0.5\nuzawa_step = 0.25\n",
        )
        .unwrap();
        assert_eq!(c.uzawa_step, UzawaStep::Fixed(0.25));
        match c.task {
            Task::Solve(MacroData::StressDriven(s)) => assert_eq!(s.m[5], 0.5),
            t => panic!("{t:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match parse_config("voxel_path = a\n\nbogus = 1\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        match parse_config("voxel_path = a\nno equals sign\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        match parse_config("voxel_path = a\ntask = homogenize\ntol = abc\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn other_validation_errors() {
        assert_eq!(field_of(parse_config("task = homogenize\n")), "voxel_path");
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = fly\n")), "task");
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = verify\nmax_iter = 0\n")), "max_iter");
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = verify\nlattice = 1 0 0\n")), "lattice");
        assert_eq!(
            field_of(parse_config("voxel_path = a\ntask = verify\nlattice = 1 0 0 0 1 0 2 0 0\n")),
            "lattice"
        );
        assert_eq!(field_of(parse_config("voxel_path = a\ntask = verify\nuzawa_step = -2\n")), "uzawa_step");
    }

    #[test]
    fn paths_resolve_against_base() {
        let c = parse_config("voxel_path = cell.vox\ntask = verify\noutput_dir = out\n")
            .unwrap()
            .resolve_paths(Path::new("/data/run"));
        assert_eq!(c.voxel_path, PathBuf::from("/data/run/cell.vox"));
        assert_eq!(c.output_dir, PathBuf::from("/data/run/out"));
    }
}
