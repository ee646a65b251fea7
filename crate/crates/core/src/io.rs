//! Problem, plan and trace files.
//!
//! Problems are JSON objects `{"a": [..], "b": [..], "C": [[..]], "tau": t}`.
//! Plans are row-major CSV preceded by a `n=<n>` header line. Every file is
//! written to a temporary sibling first and renamed into place.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Result, UotError};
use crate::problem::{CostMatrix, Measure, TransportPlan, UotProblem};
use crate::solvers::TraceRow;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFile {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    #[serde(rename = "C")]
    pub cost: Vec<Vec<f64>>,
    pub tau: f64,
}

impl ProblemFile {
    pub fn from_problem(problem: &UotProblem) -> Self {
        Self {
            a: problem.a().as_slice().to_vec(),
            b: problem.b().as_slice().to_vec(),
            cost: problem.cost().to_rows(),
            tau: problem.tau(),
        }
    }

    pub fn into_problem(self) -> Result<UotProblem> {
        UotProblem::new(
            CostMatrix::from_rows(&self.cost)?,
            Measure::new(self.a)?,
            Measure::new(self.b)?,
            self.tau,
        )
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| UotError::Io(e.error))?;
    Ok(())
}

pub fn problem_from_json(text: &str) -> Result<UotProblem> {
    let file: ProblemFile = serde_json::from_str(text)?;
    file.into_problem()
}

pub fn problem_to_json(problem: &UotProblem) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ProblemFile::from_problem(problem))?)
}

pub fn read_problem(path: &Path) -> Result<UotProblem> {
    problem_from_json(&std::fs::read_to_string(path)?)
}

pub fn write_problem(path: &Path, problem: &UotProblem) -> Result<()> {
    atomic_write(path, problem_to_json(problem)?.as_bytes())
}

/// Pretty JSON of any serializable report.
pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

/// Shortest representation that parses back to the same `f64`.
fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

pub fn plan_to_csv(plan: &Array2<f64>) -> String {
    let n = plan.nrows();
    let mut out = format!("n={n}\n");
    for row in plan.outer_iter() {
        let line: Vec<String> = row.iter().map(|&x| fmt_f64(x)).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

pub fn plan_from_csv(text: &str) -> Result<TransportPlan> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| UotError::Parse("empty plan file".into()))?;
    let n: usize = header
        .trim()
        .strip_prefix("n=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| UotError::Parse(format!("expected header `n=<n>`, got `{header}`")))?;
    let mut entries = Array2::zeros((n, n));
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if i >= n {
            return Err(UotError::Parse(format!("more than {n} rows")));
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n {
            return Err(UotError::Parse(format!(
                "row {i} has {} fields, expected {n}",
                fields.len()
            )));
        }
        for (j, field) in fields.iter().enumerate() {
            entries[[i, j]] = field
                .trim()
                .parse()
                .map_err(|_| UotError::Parse(format!("bad number `{field}` at ({i}, {j})")))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(UotError::Parse(format!("expected {n} rows, got {rows}")));
    }
    TransportPlan::new(entries)
}

pub fn write_plan(path: &Path, plan: &Array2<f64>) -> Result<()> {
    atomic_write(path, plan_to_csv(plan).as_bytes())
}

pub fn read_plan(path: &Path) -> Result<TransportPlan> {
    plan_from_csv(&std::fs::read_to_string(path)?)
}

pub const TRACE_HEADER: &str = "iter,f,g_eta,dual_gap,marginal_gap";

pub fn trace_to_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from(TRACE_HEADER);
    out.push('\n');
    for r in trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.iter,
            fmt_f64(r.f),
            fmt_f64(r.g_eta),
            fmt_f64(r.dual_gap),
            fmt_f64(r.marginal_gap)
        );
    }
    out
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    atomic_write(path, trace_to_csv(trace).as_bytes())
}

/// CSV with a header line and one line per record; floats use `.` decimals.
pub fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut out = header.join(",");
    out.push('\n');
    for row in rows {
        out.push_str(&row.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn plan_round_trip() {
        let x = array![[0.1, 1e-300], [2.0 / 3.0, 0.0]];
        let back = plan_from_csv(&plan_to_csv(&x)).unwrap();
        assert_eq!(back.entries(), &x);
    }

    #[test]
    fn plan_header_required() {
        assert!(plan_from_csv("0.1,0.2\n0.3,0.4\n").is_err());
        assert!(plan_from_csv("n=2\n0.1,0.2\n").is_err());
        assert!(plan_from_csv("n=2\n0.1,0.2\n0.3\n").is_err());
    }

    #[test]
    fn problem_json_field_names() {
        let text = r#"{"a": [0.5, 0.5], "b": [0.25, 0.75], "C": [[0, 1], [1, 0]], "tau": 2}"#;
        let p = problem_from_json(text).unwrap();
        assert_eq!(p.tau(), 2.0);
        let again = problem_from_json(&problem_to_json(&p).unwrap()).unwrap();
        assert_eq!(again, p);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.txt");
        atomic_write(&path, b"one").unwrap();
        atomic_write(&path, b"two").unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn trace_header() {
        let rows = [TraceRow {
            iter: 1,
            f: 0.5,
            g_eta: 0.6,
            dual_gap: 1e-3,
            marginal_gap: 0.0,
        }];
        let csv = trace_to_csv(&rows);
        assert!(csv.starts_with("iter,f,g_eta,dual_gap,marginal_gap\n1,5e-1,"));
    }
}
