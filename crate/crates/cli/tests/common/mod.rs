//! Networked deployments of the CLI binaries on loopback for tests.

#![allow(dead_code)]

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use privagg::transport::tls::Identity;
use tempfile::TempDir;

pub fn bin(name: &str) -> &'static str {
    match name {
        "addition" => env!("CARGO_BIN_EXE_addition"),
        "entropy" => env!("CARGO_BIN_EXE_entropy"),
        "distinctcount" => env!("CARGO_BIN_EXE_distinctcount"),
        "eventcorrelation" => env!("CARGO_BIN_EXE_eventcorrelation"),
        "privagg" => env!("CARGO_BIN_EXE_privagg"),
        "privagg-keygen" => env!("CARGO_BIN_EXE_privagg-keygen"),
        other => panic!("no binary {other}"),
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

/// `n` input peers and `m` privacy peers with their own keys, configs and
/// directories under one temporary directory.
pub struct Deployment {
    pub dir: TempDir,
    pub tool: String,
    pub n: usize,
    pub m: usize,
}

impl Deployment {
    /// `params` is appended to every configuration file.
    pub fn new(tool: &str, n: usize, m: usize, params: &str) -> Deployment {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut trust = String::new();
        for (role, count) in [("privacy", m), ("input", n)] {
            for i in 0..count {
                let fp = keygen(
                    &format!("{role}-{i}"),
                    &root.join(format!("{role}{i}.crt")),
                    &root.join(format!("{role}{i}.key")),
                );
                writeln!(trust, "{role} {i} {fp}").unwrap();
            }
        }
        std::fs::write(root.join("trusted.txt"), trust).unwrap();
        let addrs: Vec<String> = (0..m).map(|_| format!("127.0.0.1:{}", free_port())).collect();
        let timeout = if params.contains("timeout_secs") { "" } else { "timeout_secs = 20\n" };
        let common = format!(
            "privacy_peers = {}\ninput_peers = {n}\ntrusted = trusted.txt\n{timeout}{params}\n",
            addrs.join(",")
        );
        for (role, count) in [("privacy", m), ("input", n)] {
            for i in 0..count {
                let conf = format!(
                    "role = {role}\nid = {i}\ncert = {role}{i}.crt\nkey = {role}{i}.key\ninput_dir = in{i}\noutput_dir = out_{role}{i}\n{common}"
                );
                std::fs::write(root.join(format!("{role}{i}.conf")), conf).unwrap();
            }
        }
        for i in 0..n {
            std::fs::create_dir_all(root.join(format!("in{i}"))).unwrap();
        }
        Deployment { dir, tool: tool.to_string(), n, m }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    pub fn write_input(&self, peer: usize, window: u64, contents: &str) {
        std::fs::write(self.path(&format!("in{peer}/window_{window}.csv")), contents).unwrap();
    }

    pub fn spawn(&self, role: &str, id: usize) -> Child {
        Command::new(bin(&self.tool))
            .arg("--config")
            .arg(self.path(&format!("{role}{id}.conf")))
            .env("RUST_LOG", "info")
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .unwrap()
    }

    /// Starts all privacy peers, then the given input peers, and waits for
    /// every process. Returns privacy outputs then input outputs.
    pub fn run_with(&self, inputs: &[usize], limit: Duration) -> (Vec<Output>, Vec<Output>) {
        let pps: Vec<Child> = (0..self.m).map(|j| self.spawn("privacy", j)).collect();
        let ins: Vec<Child> = inputs.iter().map(|&i| self.spawn("input", i)).collect();
        let deadline = Instant::now() + limit;
        let ins = ins.into_iter().map(|c| wait(c, deadline)).collect();
        let pps = pps.into_iter().map(|c| wait(c, deadline)).collect();
        (pps, ins)
    }

    pub fn run(&self) -> (Vec<Output>, Vec<Output>) {
        self.run_with(&(0..self.n).collect::<Vec<_>>(), Duration::from_secs(300))
    }

    pub fn result(&self, role: &str, id: usize, window: u64) -> String {
        read(&self.path(&format!("out_{role}{id}/window_{window}.result")))
    }

    /// The output part of a result file, without `#` instrumentation lines.
    pub fn output(&self, role: &str, id: usize, window: u64) -> String {
        strip(&self.result(role, id, window))
    }

    pub fn log(&self, id: usize, window: u64) -> String {
        read(&self.path(&format!("out_privacy{id}/window_{window}.log")))
    }
}

pub fn strip(result: &str) -> String {
    result.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

/// Value of a `# key=value` line in a result file.
pub fn instrument(result: &str, key: &str) -> Option<u64> {
    result.lines().find_map(|l| l.strip_prefix(&format!("# {key}="))?.parse().ok())
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

/// Creates credentials with the key generation tool; returns the printed
/// fingerprint after checking it against the written certificate.
pub fn keygen(name: &str, cert: &Path, key: &Path) -> String {
    let out = Command::new(bin("privagg-keygen"))
        .args(["--name", name])
        .arg("--cert")
        .arg(cert)
        .arg("--key")
        .arg(key)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let printed = String::from_utf8(out.stdout).unwrap().trim().to_string();
    let id = Identity::load(cert, key).unwrap();
    assert_eq!(printed, hex::encode(id.fingerprint()));
    printed
}

fn wait(mut child: Child, deadline: Instant) -> Output {
    loop {
        if child.try_wait().unwrap().is_some() {
            return child.wait_with_output().unwrap();
        }
        if Instant::now() > deadline {
            let _ = child.kill();
            let out = child.wait_with_output().unwrap();
            panic!("process did not finish in time; stderr:\n{}", String::from_utf8_lossy(&out.stderr));
        }
        std::thread::sleep(Duration::from_millis(20));
    }
}

pub fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}
