//! The subcommands. Each one turns a resolved configuration into the JSON
//! printed on stdout, the artifacts written to the output directory and the
//! assertion outcome; every number comes from a library call.

use crate::config::{MethodArg, NamedShape, RunConfig};
use fracap::analysis::{
    deficit, sharpness_scan, verify_stability, BallCache, MethodChoice, ToleranceBudget,
};
use fracap::classical::{asymptotic_sweep, classical_capacity, fractional_capacity, Method};
use fracap::constants::ConstantsTable;
use fracap::geometry::{fraenkel_asymmetry, volume, Shape};
use serde_json::{json, Value};

/// What a command produced.
pub struct Outcome {
    pub stdout: Value,
    /// `(file name, contents)` pairs for the output directory.
    pub files: Vec<(String, String)>,
    /// Whether every assertion the command makes holds.
    pub passed: bool,
}

type CmdResult = Result<Outcome, String>;

fn pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialise");
    s.push('\n');
    s
}

fn methods(arg: MethodArg) -> Result<Vec<Method>, String> {
    match arg {
        MethodArg::Direct => Ok(vec![Method::Direct]),
        MethodArg::Extension => Ok(vec![Method::Extension]),
        MethodArg::Both => Ok(vec![Method::Direct, Method::Extension]),
        MethodArg::Classical => Err("--method classical is only available for `capacity`".into()),
    }
}

fn method_name(m: Method) -> &'static str {
    match m {
        Method::Direct => "direct",
        Method::Extension => "extension",
    }
}

fn order(cfg: &RunConfig) -> f64 {
    cfg.orders[0]
}

fn single(name: &str, value: &Value) -> (String, String) {
    (name.to_string(), pretty(value))
}

/// File-system friendly form of a shape name.
fn file_stem(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

pub fn constants(cfg: &RunConfig) -> CmdResult {
    let table =
        ConstantsTable::new(cfg.n, order(cfg), cfg.gamma, cfg.c4).map_err(|e| e.to_string())?;
    let value = serde_json::to_value(&table).expect("table serialises");
    Ok(Outcome {
        files: vec![single("constants.json", &value)],
        stdout: value,
        passed: true,
    })
}

pub fn capacity(cfg: &RunConfig) -> CmdResult {
    let mut rows = Vec::new();
    for NamedShape { name, shape, .. } in &cfg.shapes {
        let mut row = serde_json::Map::new();
        row.insert("shape".into(), json!(name));
        if cfg.method == MethodArg::Classical {
            let r = classical_capacity(shape, &cfg.grid).map_err(|e| e.to_string())?;
            row.insert(
                "classical".into(),
                serde_json::to_value(r).expect("result serialises"),
            );
        } else {
            let s = *cfg.orders.first().ok_or("--s is required")?;
            row.insert("s".into(), json!(s));
            for m in methods(cfg.method)? {
                let r = fractional_capacity(shape, s, &cfg.grid, m).map_err(|e| e.to_string())?;
                row.insert(
                    method_name(m).into(),
                    serde_json::to_value(r).expect("result serialises"),
                );
            }
        }
        rows.push(Value::Object(row));
    }
    let value = Value::Array(rows);
    Ok(Outcome {
        files: vec![single("capacity.json", &value)],
        stdout: value,
        passed: true,
    })
}

pub fn asymmetry(cfg: &RunConfig) -> CmdResult {
    let mut rows = Vec::new();
    for NamedShape { name, shape, .. } in &cfg.shapes {
        let a = fraenkel_asymmetry(shape, cfg.grid.h).map_err(|e| e.to_string())?;
        let v = volume(shape, Some(cfg.grid.h)).map_err(|e| e.to_string())?;
        rows.push(json!({ "shape": name, "volume": v, "asymmetry": a }));
    }
    let value = Value::Array(rows);
    Ok(Outcome {
        files: vec![single("asymmetry.json", &value)],
        stdout: value,
        passed: true,
    })
}

pub fn deficit_cmd(cfg: &RunConfig) -> CmdResult {
    let s = order(cfg);
    let tol = ToleranceBudget::default().deficit;
    let mut rows = Vec::new();
    let mut passed = true;
    for NamedShape { name, shape, .. } in &cfg.shapes {
        for m in methods(cfg.method)? {
            let d = deficit(shape, s, &cfg.grid, m).map_err(|e| e.to_string())?;
            let ok = d >= -tol;
            passed &= ok;
            rows.push(json!({ "shape": name, "s": s, "method": method_name(m), "deficit": d, "tolerance": tol, "passed": ok }));
        }
    }
    let value = Value::Array(rows);
    let files = vec![
        single("deficit.json", &value),
        single("ball_cache.json", &BallCache::global().to_json()),
    ];
    Ok(Outcome {
        files,
        stdout: value,
        passed,
    })
}

fn method_choice(arg: MethodArg) -> Result<MethodChoice, String> {
    match arg {
        MethodArg::Direct => Ok(MethodChoice::Direct),
        MethodArg::Extension => Ok(MethodChoice::Extension),
        MethodArg::Both => Ok(MethodChoice::Both),
        MethodArg::Classical => Err("--method classical is only available for `capacity`".into()),
    }
}

pub fn verify(cfg: &RunConfig) -> CmdResult {
    let s = order(cfg);
    let choice = method_choice(cfg.method)?;
    let mut reports = Vec::new();
    let mut files = Vec::new();
    for NamedShape { name, shape, .. } in &cfg.shapes {
        let report = verify_stability(
            name,
            shape,
            s,
            &cfg.grid,
            cfg.gamma,
            cfg.c4,
            cfg.trust_c4,
            choice,
        )
        .map_err(|e| e.to_string())?;
        files.push((format!("verify-{}.json", file_stem(name)), pretty(&report)));
        reports.push(report);
    }
    let passed = reports.iter().all(|r| r.passed);
    files.push((
        "ball_cache.json".into(),
        pretty(&BallCache::global().to_json()),
    ));
    Ok(Outcome {
        stdout: serde_json::to_value(&reports).expect("reports serialise"),
        files,
        passed,
    })
}

pub fn sweep(cfg: &RunConfig) -> CmdResult {
    let shape = match cfg.shapes.as_slice() {
        [] => Shape::ball(&vec![0.0; cfg.n], 1.0),
        [one] => one.shape.clone(),
        _ => return Err("sweep takes exactly one --shape (default: the unit ball)".into()),
    };
    let method = match methods(cfg.method)?.as_slice() {
        [m] => *m,
        _ => return Err("sweep runs one solver: --method direct or extension".into()),
    };
    let tol = ToleranceBudget::default().capacity;
    let report =
        asymptotic_sweep(&shape, &cfg.orders, &cfg.grid, method, tol).map_err(|e| e.to_string())?;
    let value = json!({ "summary": report.summary(), "report": report });
    let files = vec![
        ("sweep.csv".into(), report.to_csv()),
        single("sweep.json", &value),
    ];
    Ok(Outcome {
        stdout: value,
        files,
        passed: report.passed,
    })
}

pub fn scan(cfg: &RunConfig) -> CmdResult {
    let s = order(cfg);
    let family: Vec<(String, Shape)> = cfg
        .shapes
        .iter()
        .map(|s| (s.name.clone(), s.shape.clone()))
        .collect();
    let table = sharpness_scan(
        &family,
        s,
        &cfg.grid,
        cfg.gamma,
        cfg.c4,
        method_choice(cfg.method)?,
    )
    .map_err(|e| e.to_string())?;
    let value = serde_json::to_value(&table).expect("table serialises");
    let files = vec![
        ("scan.csv".into(), table.to_csv()),
        single("scan.json", &value),
    ];
    Ok(Outcome {
        stdout: value,
        files,
        passed: true,
    })
}

/// The per-run manifest: configuration, inputs, outputs and status.
pub fn manifest(command: &str, cfg: &RunConfig, outcome: &Outcome, status: i32) -> String {
    let shapes: Vec<Value> = cfg
        .shapes
        .iter()
        .map(|s| json!({ "name": s.name, "path": s.path.display().to_string() }))
        .collect();
    let outputs: Vec<&str> = outcome.files.iter().map(|(n, _)| n.as_str()).collect();
    pretty(&json!({
        "tool": "fracap",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": cfg,
        "shapes": shapes,
        "outputs": outputs,
        "passed": outcome.passed,
        "status": status,
    }))
}
