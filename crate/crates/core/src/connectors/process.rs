use std::io::Read;
use std::path::Path;
use std::os::unix::process::CommandExt;
use std::process::{Child, Command, Stdio};
use std::thread;
use std::time::{Duration, Instant};

use wait_timeout::ChildExt;

use super::{ConnectorError, ExecResult};
use crate::cancel::CancelToken;

/// Per-stream capture limit; anything beyond is drained and dropped.
pub const OUTPUT_LIMIT: usize = 8 * 1024 * 1024;

const CANCEL_POLL: Duration = Duration::from_millis(20);

#[derive(Debug, Clone)]
pub struct ProcessSpec<'a> {
    pub argv: &'a [String],
    pub env: &'a [(String, String)],
    /// Start from an empty environment (PATH is still passed through).
    pub clear_env: bool,
    pub workdir: &'a Path,
}

fn capture(mut stream: impl Read) -> (Vec<u8>, bool) {
    let mut kept = Vec::new();
    let mut truncated = false;
    let mut buf = [0u8; 64 * 1024];
    loop {
        match stream.read(&mut buf) {
            Ok(0) | Err(_) => break,
            Ok(n) => {
                let room = OUTPUT_LIMIT - kept.len();
                if n > room {
                    truncated = true;
                }
                kept.extend_from_slice(&buf[..n.min(room)]);
            }
        }
    }
    (kept, truncated)
}

/// Kills the child together with anything it started in its process group.
fn kill_group(child: &mut Child) {
    // SAFETY: plain syscall on a pid we spawned and have not yet reaped.
    unsafe {
        libc::kill(-(child.id() as libc::pid_t), libc::SIGKILL);
    }
    let _ = child.kill();
}

/// Runs a child process to completion or cancellation.
pub fn run_process(spec: &ProcessSpec<'_>, cancel: &CancelToken) -> Result<ExecResult, ConnectorError> {
    let (program, args) = spec
        .argv
        .split_first()
        .ok_or_else(|| ConnectorError::Spawn {
            command: String::new(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "empty command"),
        })?;
    let mut cmd = Command::new(program);
    cmd.args(args)
        .current_dir(spec.workdir)
        .stdin(Stdio::null())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .process_group(0);
    if spec.clear_env {
        cmd.env_clear();
        if let Some(path) = std::env::var_os("PATH") {
            cmd.env("PATH", path);
        }
    }
    cmd.envs(spec.env.iter().map(|(k, v)| (k, v)));

    let start = Instant::now();
    let mut child = cmd
        .spawn()
        .map_err(|source| ConnectorError::Spawn { command: spec.argv.join(" "), source })?;
    let stdout = child.stdout.take().expect("stdout piped");
    let stderr = child.stderr.take().expect("stderr piped");
    let out_reader = thread::spawn(move || capture(stdout));
    let err_reader = thread::spawn(move || capture(stderr));

    let mut cancelled = false;
    let status = loop {
        match child.wait_timeout(CANCEL_POLL) {
            Ok(Some(status)) => break status,
            Ok(None) if cancel.is_cancelled() => {
                cancelled = true;
                kill_group(&mut child);
                break child.wait().map_err(|e| ConnectorError::io("waiting for killed child", e))?;
            }
            Ok(None) => {}
            Err(e) => return Err(ConnectorError::io("waiting for child", e)),
        }
    };
    let (stdout, stdout_truncated) = out_reader.join().unwrap_or_default();
    let (stderr, stderr_truncated) = err_reader.join().unwrap_or_default();
    Ok(ExecResult {
        exit_code: if cancelled { None } else { status.code() },
        stdout,
        stderr,
        stdout_truncated,
        stderr_truncated,
        wall_ms: start.elapsed().as_millis() as u64,
        cancelled,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(args: &[&str]) -> Vec<String> {
        args.iter().map(|s| s.to_string()).collect()
    }

    fn run(args: &[&str], cancel: &CancelToken) -> ExecResult {
        let dir = tempfile::tempdir().unwrap();
        let argv = argv(args);
        let spec = ProcessSpec { argv: &argv, env: &[], clear_env: false, workdir: dir.path() };
        run_process(&spec, cancel).unwrap()
    }

    #[test]
    fn echo() {
        let r = run(&["echo", "hi"], &CancelToken::new());
        assert_eq!(r.exit_code, Some(0));
        assert_eq!(r.stdout, b"hi\n");
    }

    #[test]
    fn nonzero_exit_is_returned() {
        let r = run(&["sh", "-c", "echo oops >&2; exit 3"], &CancelToken::new());
        assert_eq!(r.exit_code, Some(3));
        assert_eq!(r.stderr, b"oops\n");
    }

    #[test]
    fn output_is_bounded() {
        let r = run(&["sh", "-c", "head -c 9000000 /dev/zero"], &CancelToken::new());
        assert_eq!(r.stdout.len(), OUTPUT_LIMIT);
        assert!(r.stdout_truncated);
        assert!(!r.stderr_truncated);
    }

    #[test]
    fn cancellation_kills_the_child() {
        let cancel = CancelToken::new();
        let c = cancel.clone();
        thread::spawn(move || {
            thread::sleep(Duration::from_millis(50));
            c.cancel();
        });
        let start = Instant::now();
        let r = run(&["sleep", "10"], &cancel);
        assert!(r.cancelled);
        assert_eq!(r.exit_code, None);
        assert!(start.elapsed() < Duration::from_secs(5));
    }

    #[test]
    fn missing_program_is_a_spawn_error() {
        let dir = tempfile::tempdir().unwrap();
        let argv = argv(&["/nonexistent/program"]);
        let spec = ProcessSpec { argv: &argv, env: &[], clear_env: false, workdir: dir.path() };
        assert!(matches!(run_process(&spec, &CancelToken::new()), Err(ConnectorError::Spawn { .. })));
    }

    #[test]
    fn cleared_environment_keeps_path() {
        std::env::set_var("HFLOW_PROCESS_TEST_MARKER", "1");
        let dir = tempfile::tempdir().unwrap();
        let argv = argv(&["sh", "-c", "echo ${HFLOW_PROCESS_TEST_MARKER:-unset}; command -v sh >/dev/null && echo ok"]);
        let spec = ProcessSpec { argv: &argv, env: &[], clear_env: true, workdir: dir.path() };
        let r = run_process(&spec, &CancelToken::new()).unwrap();
        assert_eq!(String::from_utf8_lossy(&r.stdout), "unset\nok\n");
    }
}
