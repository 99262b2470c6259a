//! Runs every acceptance criterion and prints one line per criterion.
//! Determinism is checked out of process against the built binary.

use std::path::Path;
use std::process::{Command, ExitCode};

use hierlab::acceptance::{run_statistical, CriterionResult, DETERMINISM_SEED};

const WORKERS: usize = 8;

fn figure1_csv(dir: &Path, workers: usize) -> Result<Vec<u8>, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_hierlab"))
        .args([
            "figure1",
            "--seed",
            &DETERMINISM_SEED.to_string(),
            "--formats",
            "csv",
        ])
        .args(["--workers", &workers.to_string()])
        .arg("--out")
        .arg(dir)
        .output()
        .map_err(|e| format!("cannot start hierlab: {e}"))?;
    if !out.status.success() {
        return Err(format!(
            "hierlab exited with {}: {}",
            out.status,
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    std::fs::read(dir.join("figure1.csv")).map_err(|e| format!("reading CSV: {e}"))
}

fn determinism() -> CriterionResult {
    let title = "figure1 --seed 7 gives byte-identical CSV regardless of worker count".to_string();
    let root = std::env::temp_dir().join(format!("hierlab-acceptance-{}", std::process::id()));
    let runs: Result<Vec<Vec<u8>>, String> = [(1, "w1"), (WORKERS, "w8"), (WORKERS, "w8-repeat")]
        .iter()
        .map(|&(w, sub)| figure1_csv(&root.join(sub), w))
        .collect();
    let _ = std::fs::remove_dir_all(&root);
    let (passed, detail) = match runs {
        Ok(r) => (
            r[0] == r[1] && r[1] == r[2] && !r[0].is_empty(),
            format!(
                "{} bytes; 1 vs {WORKERS} workers equal: {}, repeat equal: {}",
                r[0].len(),
                r[0] == r[1],
                r[1] == r[2]
            ),
        ),
        Err(e) => (false, e),
    };
    CriterionResult {
        id: "12".into(),
        title,
        passed,
        detail,
    }
}

fn main() -> ExitCode {
    let mut results = Vec::new();
    for r in run_statistical(WORKERS).into_iter().chain([determinism()]) {
        println!("{}", r.line());
        results.push(r);
    }
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| r.id.as_str())
        .collect();
    println!(
        "acceptance: {} of {} criteria passed{}",
        results.len() - failed.len(),
        results.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!("; failed: {}", failed.join(", "))
        }
    );
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
