//! Run configuration: command-line flags layered over an optional TOML file
//! whose keys are the flag names.

use clap::{Args, ValueEnum};
use fracap::capacity::GridSpec;
use fracap::constants::DEFAULT_GAMMA;
use fracap::geometry::Shape;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Solver selection on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Direct,
    Extension,
    Both,
    /// Newtonian capacity (the `capacity` command only, n = 3).
    Classical,
}

/// Flags shared by every subcommand. Each has a config-file key of the same
/// name; flags given on the command line win.
#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunArgs {
    /// TOML file with defaults for any of the flags below.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Ambient dimension (taken from the shapes when omitted).
    #[arg(long)]
    pub n: Option<usize>,
    /// Order of the fractional capacity, 0 < s < 1.
    #[arg(long)]
    pub s: Option<f64>,
    /// Ladder of orders `a:b:steps` (inclusive, evenly spaced).
    #[arg(long = "s-ladder")]
    #[serde(rename = "s-ladder")]
    pub s_ladder: Option<String>,
    /// Level-set parameter γ in (0, 1/9).
    #[arg(long)]
    pub gamma: Option<f64>,
    /// The undisplayed constant C_4 of the stability constant.
    #[arg(long = "C4")]
    #[serde(rename = "C4")]
    pub c4: Option<f64>,
    /// Assert the full stability inequality with the given C_4.
    #[arg(long = "trust-C4")]
    #[serde(rename = "trust-C4", default)]
    pub trust_c4: bool,
    /// Grid spacing (default R/32).
    #[arg(long)]
    pub h: Option<f64>,
    /// Half-width of the truncation box [−R, R]ⁿ.
    #[arg(long = "R")]
    #[serde(rename = "R")]
    pub r: Option<f64>,
    /// Height of the truncated half-space (extension solver).
    #[arg(long = "Z")]
    #[serde(rename = "Z")]
    pub z: Option<f64>,
    /// Number of vertical levels (extension solver).
    #[arg(long)]
    pub zlevels: Option<usize>,
    /// Relative residual tolerance of the linear solvers.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Directory receiving the reports and manifest.json.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Shape document (JSON); repeatable.
    #[arg(long)]
    #[serde(default)]
    pub shape: Vec<PathBuf>,
    /// Solver: direct, extension or both.
    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
}

impl RunArgs {
    /// Layer the flags over the config file named by `--config`. Relative
    /// paths inside the file are resolved against the file's directory.
    pub fn resolve(self) -> Result<RunArgs, String> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut file: RunArgs = toml::from_str(&text)
            .map_err(|e| format!("malformed config {}: {e}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        file.shape = file.shape.iter().map(|p| base.join(p)).collect();
        file.out = file.out.map(|p| base.join(p));
        Ok(RunArgs {
            config: self.config,
            n: self.n.or(file.n),
            s: self.s.or(file.s),
            s_ladder: self.s_ladder.or(file.s_ladder),
            gamma: self.gamma.or(file.gamma),
            c4: self.c4.or(file.c4),
            trust_c4: self.trust_c4 || file.trust_c4,
            h: self.h.or(file.h),
            r: self.r.or(file.r),
            z: self.z.or(file.z),
            zlevels: self.zlevels.or(file.zlevels),
            tol: self.tol.or(file.tol),
            out: self.out.or(file.out),
            shape: if self.shape.is_empty() {
                file.shape
            } else {
                self.shape
            },
            method: self.method.or(file.method),
        })
    }
}

/// A named shape read from a document.
#[derive(Debug, Clone)]
pub struct NamedShape {
    pub name: String,
    pub path: PathBuf,
    pub shape: Shape,
}

/// Read a shape document: one shape, or a JSON array of shapes (named
/// `stem[i]`).
pub fn load_shapes(path: &Path) -> Result<Vec<NamedShape>, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read shape file {}: {e}", path.display()))?;
    let stem = path
        .file_stem()
        .map_or("shape".into(), |s| s.to_string_lossy().into_owned());
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| format!("malformed shape file {}: {e}", path.display()))?;
    let parse = |v: serde_json::Value| -> Result<Shape, String> {
        let shape: Shape = serde_json::from_value(v)
            .map_err(|e| format!("malformed shape file {}: {e}", path.display()))?;
        shape
            .validate()
            .map_err(|e| format!("invalid shape in {}: {e}", path.display()))?;
        Ok(shape)
    };
    match value {
        serde_json::Value::Array(items) => items
            .into_iter()
            .enumerate()
            .map(|(i, v)| {
                Ok(NamedShape {
                    name: format!("{stem}[{i}]"),
                    path: path.to_path_buf(),
                    shape: parse(v)?,
                })
            })
            .collect(),
        v => Ok(vec![NamedShape {
            name: stem,
            path: path.to_path_buf(),
            shape: parse(v)?,
        }]),
    }
}

/// Parse `a:b:steps` into `steps` evenly spaced values from `a` to `b`.
pub fn parse_ladder(spec: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || format!("s-ladder must look like a:b:steps, got {spec:?}");
    if parts.len() != 3 {
        return Err(bad());
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| bad())?;
    let b: f64 = parts[1].trim().parse().map_err(|_| bad())?;
    let steps: usize = parts[2].trim().parse().map_err(|_| bad())?;
    match steps {
        0 => Err(bad()),
        1 => Ok(vec![a]),
        _ => Ok((0..steps)
            .map(|i| a + (b - a) * i as f64 / (steps - 1) as f64)
            .collect()),
    }
}

/// Fully resolved configuration of one run.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub n: usize,
    /// Orders to run (one for most commands, the ladder for `sweep`).
    pub orders: Vec<f64>,
    pub gamma: f64,
    #[serde(rename = "C4")]
    pub c4: f64,
    #[serde(rename = "trustC4")]
    pub trust_c4: bool,
    pub grid: GridSpec,
    pub method: MethodArg,
    pub out: Option<PathBuf>,
    #[serde(skip)]
    pub shapes: Vec<NamedShape>,
}

/// What a command needs from the configuration.
pub struct Needs {
    pub shapes: bool,
    pub order: bool,
    pub ladder: bool,
    pub default_method: MethodArg,
}

impl RunConfig {
    /// Validate the merged arguments, naming the violated invariant on
    /// failure.
    pub fn build(args: RunArgs, needs: Needs) -> Result<RunConfig, String> {
        let mut shapes = Vec::new();
        for p in &args.shape {
            shapes.extend(load_shapes(p)?);
        }
        if needs.shapes && shapes.is_empty() {
            return Err("at least one --shape is required".into());
        }
        let dims: Vec<usize> = shapes.iter().map(|s| s.shape.dim()).collect();
        let n = match (args.n, dims.first()) {
            (Some(n), _) => n,
            (None, Some(&d)) => d,
            (None, None) => return Err("--n is required when no shape is given".into()),
        };
        if !(1..=3).contains(&n) {
            return Err(format!("invariant violated: n must be 1, 2 or 3, got {n}"));
        }
        if let Some(s) = shapes.iter().find(|s| s.shape.dim() != n) {
            return Err(format!(
                "invariant violated: shape {} has dimension {}, expected n = {n}",
                s.name,
                s.shape.dim()
            ));
        }
        let orders = if needs.ladder {
            match (&args.s_ladder, args.s) {
                (Some(l), _) => parse_ladder(l)?,
                (None, Some(s)) => vec![s],
                (None, None) => return Err("--s-ladder is required".into()),
            }
        } else if needs.order {
            vec![args.s.ok_or("--s is required")?]
        } else {
            args.s.into_iter().collect()
        };
        for &s in &orders {
            if !(s > 0.0 && s < 1.0) {
                return Err(format!("invariant violated: s must lie in (0, 1), got {s}"));
            }
            if !((n as f64) > 2.0 * s) {
                return Err(format!(
                    "invariant violated: n > 2s fails for n = {n}, s = {s}"
                ));
            }
        }
        let gamma = args.gamma.unwrap_or(DEFAULT_GAMMA);
        if !(gamma > 0.0 && gamma < 1.0 / 9.0) {
            return Err(format!(
                "invariant violated: gamma must lie in (0, 1/9), got {gamma}"
            ));
        }
        let c4 = args.c4.unwrap_or(1.0);
        if !(c4 > 0.0) {
            return Err(format!("invariant violated: C4 must be positive, got {c4}"));
        }
        let r = match args.r {
            Some(r) => r,
            None => default_half_width(&shapes),
        };
        let h = args.h.unwrap_or(r / 32.0);
        if !(r > 0.0 && h > 0.0 && h <= r / 8.0 + 1e-12) {
            return Err(format!(
                "invariant violated: need 0 < h ≤ R/8, got h = {h}, R = {r}"
            ));
        }
        let mut grid = GridSpec::new(h, r);
        grid.z_top = args.z;
        grid.z_levels = args.zlevels;
        if let Some(tol) = args.tol {
            grid.tol = tol;
        }
        grid.validate()
            .map_err(|e| format!("invariant violated: {e}"))?;
        Ok(RunConfig {
            n,
            orders,
            gamma,
            c4,
            trust_c4: args.trust_c4,
            grid,
            method: args.method.unwrap_or(needs.default_method),
            out: args.out,
            shapes,
        })
    }
}

/// Twice the largest coordinate magnitude of the shapes' bounding boxes, so
/// that every shape sits well inside the truncation box (2 for the unit ball).
fn default_half_width(shapes: &[NamedShape]) -> f64 {
    let extent = shapes
        .iter()
        .flat_map(|s| {
            let (lo, hi) = s.shape.bounding_box();
            lo.into_iter().chain(hi).map(f64::abs).collect::<Vec<_>>()
        })
        .fold(0.0, f64::max);
    if extent > 0.0 {
        2.0 * extent
    } else {
        2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_is_inclusive() {
        let l = parse_ladder("0.8:0.95:4").unwrap();
        assert_eq!(l.len(), 4);
        assert!((l[0] - 0.8).abs() < 1e-15 && (l[3] - 0.95).abs() < 1e-15);
        assert_eq!(parse_ladder("0.9:0.9:1").unwrap(), vec![0.9]);
        assert!(parse_ladder("0.8:0.9").is_err());
        assert!(parse_ladder("0.8:0.9:0").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(
            &cfg,
            "n = 2\ns = 0.5\nR = 3.0\nC4 = 2.0\nmethod = \"extension\"\n",
        )
        .unwrap();
        let args = RunArgs {
            config: Some(cfg),
            s: Some(0.75),
            ..Default::default()
        };
        let merged = args.resolve().unwrap();
        assert_eq!(merged.n, Some(2));
        assert_eq!(merged.s, Some(0.75));
        assert_eq!(merged.r, Some(3.0));
        assert_eq!(merged.c4, Some(2.0));
        assert_eq!(merged.method, Some(MethodArg::Extension));
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        std::fs::write(&cfg, "radius = 3.0\n").unwrap();
        let args = RunArgs {
            config: Some(cfg),
            ..Default::default()
        };
        assert!(args.resolve().unwrap_err().contains("malformed config"));
    }

    #[test]
    fn invariants_are_named() {
        let needs = || Needs {
            shapes: false,
            order: true,
            ladder: false,
            default_method: MethodArg::Direct,
        };
        let err = RunConfig::build(
            RunArgs {
                n: Some(1),
                s: Some(0.5),
                ..Default::default()
            },
            needs(),
        )
        .unwrap_err();
        assert!(err.contains("n > 2s"), "{err}");
        let err = RunConfig::build(
            RunArgs {
                n: Some(2),
                s: Some(0.5),
                gamma: Some(0.2),
                ..Default::default()
            },
            needs(),
        )
        .unwrap_err();
        assert!(err.contains("gamma"), "{err}");
        let err = RunConfig::build(
            RunArgs {
                n: Some(2),
                s: Some(0.5),
                h: Some(0.5),
                r: Some(2.0),
                ..Default::default()
            },
            needs(),
        )
        .unwrap_err();
        assert!(err.contains("h ≤ R/8"), "{err}");
    }
}
