//! External-solver adapter protocol.
//!
//! An adapter is any command that reads a CBF file and writes a solution
//! file. The command template must contain `{input}` and `{output}`
//! placeholders; it is split on whitespace and executed directly (no
//! shell). The solution file grammar is normative:
//!
//! ```text
//! STATUS <token>
//! VAR <index> <value>        -- one line per scalar variable, CBF order
//! PSDVAR <block> <i> <j> <value>
//! ```

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use crate::cbf::CbfDocument;
use cvxc_core::affine::VarKey;
use cvxc_core::canon::ReducedProblem;
use cvxc_core::expr::Assignment;

#[derive(Debug, Clone)]
pub struct SolverConfig {
    /// Command template with `{input}` and `{output}` placeholders.
    pub command: String,
    pub timeout: Duration,
}

impl SolverConfig {
    pub fn new(command: &str) -> Self {
        SolverConfig {
            command: command.to_string(),
            timeout: Duration::from_secs(60),
        }
    }
}

#[derive(Debug)]
pub enum SolveError {
    SolverNotFound { command: String },
    SolverTimeout { seconds: u64 },
    SolverNonzeroExit { code: i32, stderr: String },
    MalformedSolution { line: usize, what: String },
    MissingVariable { name: String },
    BadCommand(String),
    Canon(cvxc_core::canon::CanonError),
    Cbf(crate::cbf::CbfError),
    Eval(cvxc_core::eval::EvalError),
    Io(std::io::Error),
}

impl std::fmt::Display for SolveError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SolveError::SolverNotFound { command } => {
                write!(f, "solver not found: tried to run `{command}`")
            }
            SolveError::SolverTimeout { seconds } => {
                write!(f, "solver exceeded the {seconds}s timeout")
            }
            SolveError::SolverNonzeroExit { code, stderr } => {
                write!(f, "solver exited with code {code}: {stderr}")
            }
            SolveError::MalformedSolution { line, what } => {
                write!(f, "malformed solution at line {line}: {what}")
            }
            SolveError::MissingVariable { name } => {
                write!(f, "solution is missing variable `{name}`")
            }
            SolveError::BadCommand(m) => write!(f, "bad solver command: {m}"),
            SolveError::Canon(e) => write!(f, "canonicalization failed: {e}"),
            SolveError::Cbf(e) => write!(f, "{e}"),
            SolveError::Eval(e) => write!(f, "{e}"),
            SolveError::Io(e) => write!(f, "io error: {e}"),
        }
    }
}

impl std::error::Error for SolveError {}

impl From<std::io::Error> for SolveError {
    fn from(e: std::io::Error) -> Self {
        SolveError::Io(e)
    }
}

/// Run the adapter command on a CBF file, blocking with a timeout, and
/// return the solution file contents.
pub fn invoke_solver(
    cbf_path: &Path,
    out_path: &Path,
    cfg: &SolverConfig,
) -> Result<String, SolveError> {
    if cfg.command.trim().is_empty() {
        return Err(SolveError::BadCommand("empty command".into()));
    }
    if !cfg.command.contains("{input}") || !cfg.command.contains("{output}") {
        return Err(SolveError::BadCommand(
            "command must contain {input} and {output} placeholders".into(),
        ));
    }
    let parts: Vec<String> = cfg
        .command
        .split_whitespace()
        .map(|t| {
            t.replace("{input}", &cbf_path.display().to_string())
                .replace("{output}", &out_path.display().to_string())
        })
        .collect();
    let mut cmd = Command::new(&parts[0]);
    cmd.args(&parts[1..])
        .stdin(Stdio::null())
        .stdout(Stdio::null())
        .stderr(Stdio::piped());
    let mut child = match cmd.spawn() {
        Ok(c) => c,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            return Err(SolveError::SolverNotFound {
                command: parts.join(" "),
            })
        }
        Err(e) => return Err(SolveError::Io(e)),
    };
    let start = Instant::now();
    let status = loop {
        match child.try_wait()? {
            Some(status) => break status,
            None => {
                if start.elapsed() > cfg.timeout {
                    let _ = child.kill();
                    let _ = child.wait();
                    return Err(SolveError::SolverTimeout {
                        seconds: cfg.timeout.as_secs(),
                    });
                }
                std::thread::sleep(Duration::from_millis(10));
            }
        }
    };
    let mut stderr = String::new();
    if let Some(mut pipe) = child.stderr.take() {
        use std::io::Read;
        let _ = pipe.read_to_string(&mut stderr);
    }
    if !status.success() {
        let code = status.code().unwrap_or(-1);
        stderr.truncate(500);
        return Err(SolveError::SolverNonzeroExit { code, stderr });
    }
    Ok(std::fs::read_to_string(out_path)?)
}

/// Parsed solution file: verbatim status plus raw coordinate values.
#[derive(Debug, Clone, PartialEq)]
pub struct RawSolution {
    pub status: String,
    pub values: Vec<(usize, f64)>,
    pub psd_values: Vec<(usize, usize, usize, f64)>,
}

/// Parse the adapter solution format.
pub fn parse_solution(text: &str) -> Result<RawSolution, SolveError> {
    let mut lines = text.lines().enumerate();
    let err = |line: usize, what: &str| SolveError::MalformedSolution {
        line: line + 1,
        what: what.to_string(),
    };
    let (first_idx, first) = loop {
        match lines.next() {
            Some((i, l)) if !l.trim().is_empty() => break (i, l.trim()),
            Some(_) => continue,
            None => return Err(err(0, "empty solution file")),
        }
    };
    let status = match first.strip_prefix("STATUS") {
        Some(rest) if !rest.trim().is_empty() => rest.trim().to_string(),
        _ => return Err(err(first_idx, "first line must be `STATUS <token>`")),
    };
    let mut values = Vec::new();
    let mut seen = BTreeMap::new();
    let mut psd_values = Vec::new();
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks[0] {
            "VAR" => {
                if toks.len() != 3 {
                    return Err(err(i, "VAR lines are `VAR <index> <value>`"));
                }
                let idx: usize = toks[1].parse().map_err(|_| err(i, "bad VAR index"))?;
                let val: f64 = toks[2].parse().map_err(|_| err(i, "bad VAR value"))?;
                if seen.insert(idx, ()).is_some() {
                    return Err(err(i, "duplicate VAR index"));
                }
                values.push((idx, val));
            }
            "PSDVAR" => {
                if toks.len() != 5 {
                    return Err(err(i, "PSDVAR lines are `PSDVAR <block> <i> <j> <value>`"));
                }
                psd_values.push((
                    toks[1].parse().map_err(|_| err(i, "bad PSDVAR block"))?,
                    toks[2].parse().map_err(|_| err(i, "bad PSDVAR row"))?,
                    toks[3].parse().map_err(|_| err(i, "bad PSDVAR column"))?,
                    toks[4].parse().map_err(|_| err(i, "bad PSDVAR value"))?,
                ));
            }
            other => return Err(err(i, &format!("unknown line `{other}`"))),
        }
    }
    Ok(RawSolution {
        status,
        values,
        psd_values,
    })
}

/// Map a raw solution onto the reduced problem's variables through the
/// document's deterministic coordinate order.
pub fn solution_assignment(
    doc: &CbfDocument,
    q: &ReducedProblem,
    raw: &RawSolution,
) -> Result<Assignment, SolveError> {
    let mut values = vec![f64::NAN; doc.nvars()];
    for (idx, v) in &raw.values {
        if *idx >= values.len() {
            return Err(SolveError::MalformedSolution {
                line: 0,
                what: format!("VAR index {idx} out of range"),
            });
        }
        values[*idx] = *v;
    }
    for (i, v) in values.iter().enumerate() {
        if v.is_nan() {
            let name = match &doc.var_keys[i] {
                VarKey::Scalar(n) => n.clone(),
                VarKey::Entry(n, i, j) => format!("{n}[{i},{j}]"),
            };
            return Err(SolveError::MissingVariable { name });
        }
    }
    doc.assignment_from_values(q, &values)
        .ok_or(SolveError::MalformedSolution {
            line: 0,
            what: "solution does not match the variable layout".to_string(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_status_and_vars() {
        let s = parse_solution("STATUS PRIMAL_AND_DUAL_FEASIBLE\nVAR 0 -1.414214\nVAR 1 -5.828427\n")
            .unwrap();
        assert_eq!(s.status, "PRIMAL_AND_DUAL_FEASIBLE");
        assert_eq!(s.values.len(), 2);
        assert_eq!(s.values[0], (0, -1.414214));
    }

    #[test]
    fn infeasible_with_no_vars() {
        let s = parse_solution("STATUS INFEASIBLE\n").unwrap();
        assert_eq!(s.status, "INFEASIBLE");
        assert!(s.values.is_empty());
    }

    #[test]
    fn duplicate_var_index_is_malformed() {
        assert!(matches!(
            parse_solution("STATUS OK\nVAR 0 1\nVAR 0 2\n"),
            Err(SolveError::MalformedSolution { .. })
        ));
    }

    #[test]
    fn missing_status_is_malformed() {
        assert!(matches!(
            parse_solution("VAR 0 1\n"),
            Err(SolveError::MalformedSolution { .. })
        ));
    }

    #[test]
    fn psdvar_lines_parse() {
        let s = parse_solution("STATUS OK\nPSDVAR 0 0 1 2.5\n").unwrap();
        assert_eq!(s.psd_values, vec![(0, 0, 1, 2.5)]);
    }
}
