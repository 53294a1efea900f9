//! Running candidate programs against tests.

use std::io::{Read, Write};
use std::process::{Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExecStatus {
    Pass,
    Fail,
    Error,
    /// The executor itself could not run the test.
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecOutcome {
    pub status: ExecStatus,
    pub output: String,
}

pub trait Executor: Send + Sync {
    fn run(&self, program: &str, test: &str) -> ExecOutcome;
}

/// Prepended to every script so that opening a socket raises.
const NETWORK_GUARD: &str = "\
import socket as _evolib_socket
def _evolib_no_network(*args, **kwargs):
    raise OSError('network access is disabled')
_evolib_socket.socket = _evolib_no_network
_evolib_socket.create_connection = _evolib_no_network
del _evolib_socket, _evolib_no_network
";

/// Runs `program` followed by `test` in a fresh Python interpreter fed over
/// stdin, with an empty environment, sockets disabled and a wall-clock limit.
/// Exit status 0 is a pass, an `AssertionError` a fail, anything else an error.
#[derive(Debug, Clone)]
pub struct PythonExecutor {
    pub interpreter: String,
    pub timeout: Duration,
}

impl Default for PythonExecutor {
    fn default() -> Self {
        PythonExecutor {
            interpreter: "python3".into(),
            timeout: Duration::from_secs(10),
        }
    }
}

impl Executor for PythonExecutor {
    fn run(&self, program: &str, test: &str) -> ExecOutcome {
        let error = |output: String| ExecOutcome {
            status: ExecStatus::Error,
            output,
        };
        let mut child = match Command::new(&self.interpreter)
            .arg("-")
            .env_clear()
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
        {
            Ok(c) => c,
            Err(e) => {
                return ExecOutcome {
                    status: ExecStatus::Unavailable,
                    output: format!("cannot start {}: {e}", self.interpreter),
                }
            }
        };
        let script = format!("{NETWORK_GUARD}\n{program}\n\n{test}\n");
        let mut stdin = child.stdin.take().expect("stdin is piped");
        let writer = thread::spawn(move || stdin.write_all(script.as_bytes()));
        let readers = [
            drain(child.stdout.take().expect("stdout is piped")),
            drain(child.stderr.take().expect("stderr is piped")),
        ];

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait() {
                Ok(Some(status)) => break Some(status),
                Ok(None) if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    break None;
                }
                Ok(None) => thread::sleep(Duration::from_millis(5)),
                Err(e) => return error(e.to_string()),
            }
        };
        let _ = writer.join();
        let output: String = readers
            .into_iter()
            .map(|r| r.join().unwrap_or_default())
            .collect::<Vec<_>>()
            .join("");

        match status {
            None => error(format!("timed out after {:?}\n{output}", self.timeout)),
            Some(s) if s.success() => ExecOutcome {
                status: ExecStatus::Pass,
                output,
            },
            Some(_) if output.contains("AssertionError") => ExecOutcome {
                status: ExecStatus::Fail,
                output,
            },
            Some(_) => error(output),
        }
    }
}

fn drain(mut pipe: impl Read + Send + 'static) -> thread::JoinHandle<String> {
    thread::spawn(move || {
        let mut buf = Vec::new();
        let _ = pipe.read_to_end(&mut buf);
        String::from_utf8_lossy(&buf).into_owned()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn python() -> Option<PythonExecutor> {
        let exec = PythonExecutor {
            timeout: Duration::from_secs(2),
            ..Default::default()
        };
        Command::new(&exec.interpreter)
            .arg("--version")
            .output()
            .ok()
            .map(|_| exec)
    }

    #[test]
    fn pass_fail_error() {
        let Some(exec) = python() else { return };
        let program = "def add(a, b):\n    return a + b";
        assert_eq!(exec.run(program, "assert add(1, 2) == 3").status, ExecStatus::Pass);
        assert_eq!(exec.run(program, "assert add(1, 2) == 4").status, ExecStatus::Fail);
        assert_eq!(exec.run(program, "add(1)").status, ExecStatus::Error);
    }

    #[test]
    fn missing_interpreter_is_unavailable() {
        let exec = PythonExecutor {
            interpreter: "/nonexistent/python".into(),
            ..Default::default()
        };
        assert_eq!(exec.run("", "").status, ExecStatus::Unavailable);
    }

    #[test]
    fn timeout_and_network() {
        let Some(exec) = python() else { return };
        let slow = exec.run("import time", "time.sleep(30)");
        assert_eq!(slow.status, ExecStatus::Error);
        assert!(slow.output.contains("timed out"));
        let net = exec.run("import socket", "socket.create_connection(('example.com', 80))");
        assert_eq!(net.status, ExecStatus::Error);
        assert!(net.output.contains("network access is disabled"));
    }
}
