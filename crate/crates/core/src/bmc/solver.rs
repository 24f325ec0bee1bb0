//! External SMT solver process driver (z3 command line).

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::encode::SmtScript;
use super::sexp::{self, Sexp};

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("cannot start solver `{program}`: {source}")]
    Spawn { program: String, source: std::io::Error },
    #[error("solver exited abnormally ({status}): {stderr}")]
    Crashed { status: String, stderr: String },
    #[error("unreadable solver output: {0}")]
    Parse(String),
    #[error("solver i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Variable bindings returned by `(get-value ...)`.
pub type Model = BTreeMap<String, i64>;

#[derive(Debug, Clone, PartialEq)]
pub enum SolveResult {
    Sat(Model),
    Unsat,
    Unknown { elapsed: Duration, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMode {
    /// One process per query, script written to a file.
    #[default]
    File,
    /// One long-lived process per enumeration.
    Incremental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub program: String,
    #[serde(default)]
    pub args: Vec<String>,
    /// Per-query budget in milliseconds.
    pub timeout_ms: u64,
    #[serde(default)]
    pub mode: SolverMode,
    /// Keep query files here instead of a temporary directory.
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { program: "z3".into(), args: Vec::new(), timeout_ms: 60_000, mode: SolverMode::File, out_dir: None }
    }
}

impl SolverConfig {
    fn timeout_line(&self) -> String {
        format!("(set-option :timeout {})\n", self.timeout_ms)
    }

    /// Whether the program starts at all.
    pub fn available(&self) -> bool {
        Command::new(&self.program)
            .arg("-version")
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .is_ok()
    }

    fn spawn(&self, extra: &[&str]) -> Result<Child, SolverError> {
        Command::new(&self.program)
            .args(&self.args)
            .args(extra)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|source| SolverError::Spawn { program: self.program.clone(), source })
    }

    /// Full query text: options, script, check and model request.
    pub fn query_text(&self, script: &SmtScript) -> String {
        let mut text = self.timeout_line();
        text.push_str(&script.to_smt2());
        text.push_str("(check-sat)\n");
        text.push_str(&get_value(script));
        text
    }

    /// Stateless query. `name` names the file kept under `out_dir`.
    pub fn solve(&self, script: &SmtScript, name: &str) -> Result<SolveResult, SolverError> {
        let text = self.query_text(script);
        let tmp;
        let path = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                dir.join(format!("{name}.smt2"))
            }
            None => {
                tmp = tempfile::Builder::new().prefix("wizbook-").suffix(".smt2").tempfile()?;
                tmp.path().to_path_buf()
            }
        };
        std::fs::write(&path, &text)?;
        self.run_file(&path)
    }

    fn run_file(&self, path: &Path) -> Result<SolveResult, SolverError> {
        let started = Instant::now();
        let path = path.to_string_lossy().into_owned();
        let mut child = self.spawn(&["-smt2", &path])?;
        drop(child.stdin.take());
        let mut stdout = child.stdout.take().expect("piped");
        let mut stderr = child.stderr.take().expect("piped");
        let err_reader = std::thread::spawn(move || {
            let mut s = String::new();
            let _ = stderr.read_to_string(&mut s);
            s
        });
        let mut out = String::new();
        stdout.read_to_string(&mut out)?;
        let status = child.wait()?;
        let err = err_reader.join().unwrap_or_default();
        let forms = sexp::parse_all(&out).map_err(|e| SolverError::Parse(format!("{e}: {out}")))?;
        match forms.first().and_then(Sexp::as_atom) {
            Some("sat") => {
                let values = forms.get(1).ok_or_else(|| SolverError::Parse("sat without model".into()))?;
                Ok(SolveResult::Sat(parse_model(values)?))
            }
            Some("unsat") => Ok(SolveResult::Unsat),
            Some("unknown") | Some("timeout") => {
                Ok(SolveResult::Unknown { elapsed: started.elapsed(), reason: "unknown".into() })
            }
            _ if !status.success() => {
                Err(SolverError::Crashed { status: status.to_string(), stderr: format!("{err}{out}").trim().to_string() })
            }
            _ => Err(SolverError::Parse(out)),
        }
    }

    pub fn session(&self, script: &SmtScript) -> Result<Session, SolverError> {
        let mut child = self.spawn(&["-in"])?;
        let stdin = child.stdin.take().expect("piped");
        let stdout = BufReader::new(child.stdout.take().expect("piped"));
        let mut s = Session { child, stdin, stdout, get_value: get_value(script) };
        let mut text = self.timeout_line();
        text.push_str(&script.to_smt2());
        s.send(&text)?;
        Ok(s)
    }
}

fn get_value(script: &SmtScript) -> String {
    let mut vars = script.state_vars();
    vars.extend(script.action_vars());
    format!("(get-value ({}))\n", vars.join(" "))
}

fn parse_model(values: &Sexp) -> Result<Model, SolverError> {
    let bad = || SolverError::Parse(format!("bad get-value response: {values}"));
    let mut model = Model::new();
    for pair in values.as_list().ok_or_else(bad)? {
        match pair.as_list() {
            Some([name, v]) => {
                model.insert(name.as_atom().ok_or_else(bad)?.to_string(), v.as_int().ok_or_else(bad)?);
            }
            _ => return Err(bad()),
        }
    }
    Ok(model)
}

/// A solver process holding the script; blocking clauses accumulate.
pub struct Session {
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    get_value: String,
}

impl Session {
    fn send(&mut self, text: &str) -> Result<(), SolverError> {
        self.stdin.write_all(text.as_bytes())?;
        self.stdin.flush()?;
        Ok(())
    }

    /// One complete response expression.
    fn read_response(&mut self) -> Result<Sexp, SolverError> {
        let mut buf = String::new();
        loop {
            let n = self.stdout.read_line(&mut buf)?;
            if n == 0 {
                let status = self.child.wait().map(|s| s.to_string()).unwrap_or_default();
                let mut err = String::new();
                if let Some(mut e) = self.child.stderr.take() {
                    let _ = e.read_to_string(&mut err);
                }
                return Err(SolverError::Crashed { status, stderr: format!("{err}{buf}").trim().to_string() });
            }
            if !buf.trim().is_empty() && sexp::paren_depth(&buf) == 0 {
                break;
            }
        }
        let mut forms = sexp::parse_all(&buf).map_err(|e| SolverError::Parse(format!("{e}: {buf}")))?;
        match forms.len() {
            1 => Ok(forms.pop().unwrap()),
            _ => Err(SolverError::Parse(buf)),
        }
    }

    pub fn check(&mut self) -> Result<SolveResult, SolverError> {
        let started = Instant::now();
        self.send("(check-sat)\n")?;
        let r = self.read_response()?;
        match r.as_atom() {
            Some("sat") => {
                let q = self.get_value.clone();
                self.send(&q)?;
                let values = self.read_response()?;
                Ok(SolveResult::Sat(parse_model(&values)?))
            }
            Some("unsat") => Ok(SolveResult::Unsat),
            Some("unknown") | Some("timeout") => {
                Ok(SolveResult::Unknown { elapsed: started.elapsed(), reason: "unknown".into() })
            }
            _ => Err(SolverError::Parse(r.to_string())),
        }
    }

    /// Add an `(assert ...)` command.
    pub fn assert(&mut self, command: &str) -> Result<(), SolverError> {
        self.send(command)?;
        self.send("\n")
    }
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.send("(exit)\n");
        if self.child.try_wait().ok().flatten().is_none() {
            std::thread::sleep(Duration::from_millis(1));
            if self.child.try_wait().ok().flatten().is_none() {
                let _ = self.child.kill();
            }
        }
        let _ = self.child.wait();
    }
}
