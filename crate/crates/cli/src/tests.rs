//! End-to-end runs of the peers inside the test process: networked
//! deployments over loopback TLS, one thread per peer, and simulator runs.

use std::fmt::Write as _;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::thread::JoinHandle;

use clap::Parser;
use privagg::transport::tls::Identity;
use tempfile::TempDir;

use crate::app::{run, Args};
use crate::config::Protocol;
use crate::error::CliError;

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

type Outcomes = Vec<Result<(), CliError>>;

struct Deployment {
    dir: TempDir,
    protocol: Protocol,
    n: usize,
    m: usize,
}

impl Deployment {
    fn new(protocol: Protocol, n: usize, m: usize, params: &str) -> Deployment {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        let mut trust = String::new();
        for (role, count) in [("privacy", m), ("input", n)] {
            for i in 0..count {
                let id = Identity::generate(&format!("{role}-{i}")).unwrap();
                id.save(&root.join(format!("{role}{i}.crt")), &root.join(format!("{role}{i}.key"))).unwrap();
                writeln!(trust, "{role} {i} {}", hex::encode(id.fingerprint())).unwrap();
            }
        }
        std::fs::write(root.join("trusted.txt"), trust).unwrap();
        let addrs: Vec<String> = (0..m).map(|_| format!("127.0.0.1:{}", free_port())).collect();
        let timeout = if params.contains("timeout_secs") { "" } else { "timeout_secs = 20\n" };
        for (role, count) in [("privacy", m), ("input", n)] {
            for i in 0..count {
                let conf = format!(
                    "role = {role}\nid = {i}\ncert = {role}{i}.crt\nkey = {role}{i}.key\ninput_dir = in{i}\n\
                     output_dir = out_{role}{i}\nprivacy_peers = {}\ninput_peers = {n}\ntrusted = trusted.txt\n\
                     {timeout}{params}\n",
                    addrs.join(",")
                );
                std::fs::write(root.join(format!("{role}{i}.conf")), conf).unwrap();
            }
        }
        for i in 0..n {
            std::fs::create_dir_all(root.join(format!("in{i}"))).unwrap();
        }
        Deployment { dir, protocol, n, m }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn write_input(&self, peer: usize, window: u64, contents: &str) {
        std::fs::write(self.path(&format!("in{peer}/window_{window}.csv")), contents).unwrap();
    }

    /// Runs the peer with config `<role><id>.conf` as the binary would.
    fn peer(&self, role: &str, id: usize) -> Result<(), CliError> {
        let conf = self.path(&format!("{role}{id}.conf"));
        run(&Args::parse_from(["tool".as_ref(), "--config".as_ref(), conf.as_os_str()]), Some(self.protocol))
    }

    fn spawn(&self, role: &'static str, id: usize) -> JoinHandle<Result<(), CliError>> {
        let conf = self.path(&format!("{role}{id}.conf"));
        let protocol = self.protocol;
        std::thread::spawn(move || {
            run(&Args::parse_from(["tool".as_ref(), "--config".as_ref(), conf.as_os_str()]), Some(protocol))
        })
    }

    /// Privacy peer results, then input peer results.
    fn run_with(&self, inputs: &[usize]) -> (Outcomes, Outcomes) {
        let pps: Vec<_> = (0..self.m).map(|j| self.spawn("privacy", j)).collect();
        let ins: Vec<_> = inputs.iter().map(|&i| self.spawn("input", i)).collect();
        let ins = ins.into_iter().map(|h| h.join().unwrap()).collect();
        let pps = pps.into_iter().map(|h| h.join().unwrap()).collect();
        (pps, ins)
    }

    fn run_all(&self) {
        let (pps, ins) = self.run_with(&(0..self.n).collect::<Vec<_>>());
        for r in pps.iter().chain(&ins) {
            assert!(r.is_ok(), "{r:?}");
        }
    }

    fn result(&self, role: &str, id: usize, window: u64) -> String {
        read(&self.path(&format!("out_{role}{id}/window_{window}.result")))
    }

    fn output(&self, role: &str, id: usize, window: u64) -> String {
        strip(&self.result(role, id, window))
    }
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

fn strip(result: &str) -> String {
    result.lines().filter(|l| !l.starts_with('#')).map(|l| format!("{l}\n")).collect()
}

fn instrument(result: &str, key: &str) -> Option<u64> {
    result.lines().find_map(|l| l.strip_prefix(&format!("# {key}="))?.parse().ok())
}

#[test]
fn addition_over_the_network_matches_plaintext() {
    let d = Deployment::new(Protocol::Addition, 2, 3, "r = 3\nseed = 5");
    d.write_input(0, 1, "1,2,3\n");
    d.write_input(1, 1, "4,5,6\n");
    d.write_input(0, 2, "10,0,7\n");
    d.write_input(1, 2, "0,0,1\n");
    d.run_all();
    for i in 0..2 {
        assert_eq!(d.output("input", i, 1), "5,7,9\n");
        assert_eq!(d.output("input", i, 2), "10,0,8\n");
    }
    for j in 0..3 {
        let res = d.result("privacy", j, 1);
        assert_eq!(strip(&res), "5,7,9\n");
        assert_eq!(instrument(&res, "rounds"), Some(1));
        assert_eq!(instrument(&res, "mults"), Some(0));
        assert!(read(&d.path(&format!("out_privacy{j}/window_1.log"))).contains("participants: [0, 1]"));
    }
}

#[test]
fn duplicate_keys_are_disqualified_end_to_end() {
    let d = Deployment::new(Protocol::EventCorrelation, 3, 3, "s = 3\nw_max = 16\nt_c = 1\nt_w = 0");
    d.write_input(0, 7, "10,3\n11,1\n");
    d.write_input(1, 7, "10,2\n12,5\n");
    d.write_input(2, 7, "10,1\n10,1\n");
    d.run_all();
    // key 10: owner 0 sees one other reporter (peer 1, weight 2)
    for j in 0..3 {
        assert_eq!(d.output("privacy", j, 7), "10,1,2,0;1\ndisqualified,2\n");
    }
    for i in 0..3 {
        assert_eq!(d.output("input", i, 7), "10,1,2,0;1\ndisqualified,2\n");
    }
}

#[test]
fn absent_input_peer_times_out_with_connection_status() {
    let d = Deployment::new(Protocol::Addition, 3, 3, "r = 2\nmin_input_peers = 3\ntimeout_secs = 2");
    for i in 0..3 {
        d.write_input(i, 1, "1,1\n");
    }
    let (pps, ins) = d.run_with(&[0, 1]);
    for r in &pps {
        match r {
            Err(e @ CliError::Connection(msg)) => {
                assert_eq!(e.exit_code(), 4);
                assert!(msg.contains("only 2 of the required 3 input peers connected"), "{msg}");
            }
            other => panic!("{other:?}"),
        }
    }
    assert!(ins.iter().all(Result::is_err));
}

#[test]
fn window_with_a_missing_input_peer_aborts_below_the_minimum() {
    let d = Deployment::new(Protocol::Addition, 3, 3, "r = 2\nmin_input_peers = 3\ntimeout_secs = 2");
    for i in 0..3 {
        d.write_input(i, 1, "1,1\n");
    }
    // peer 2 connects but has nothing for window 1
    std::fs::remove_file(d.path("in2/window_1.csv")).unwrap();
    d.write_input(2, 2, "1,1\n");
    let (pps, _) = d.run_with(&[0, 1, 2]);
    for r in &pps {
        assert!(matches!(r, Err(CliError::Connection(msg)) if msg.contains("window 1")), "{r:?}");
    }
    assert!(read(&d.path("out_privacy0/window_1.log")).starts_with("aborted"));
}

#[test]
fn window_with_a_missing_input_peer_uses_its_neutral_input() {
    let d = Deployment::new(Protocol::DistinctCount, 3, 3, "r = 4\nmin_input_peers = 2\ntimeout_secs = 2");
    d.write_input(0, 1, "1,0,0,0\n");
    d.write_input(1, 1, "0,1,0,0\n");
    d.write_input(2, 2, "0,0,1,1\n");
    d.write_input(0, 2, "0,0,0,1\n");
    d.run_all();
    assert_eq!(d.output("privacy", 0, 1), "2\n");
    assert_eq!(d.output("input", 2, 2), "2\n");
    assert!(d.result("privacy", 1, 2).contains("# participants=0;2\n"));
}

#[test]
fn malformed_line_is_a_parse_error_naming_file_and_line() {
    let d = Deployment::new(Protocol::EventCorrelation, 1, 3, "s = 2\nw_max = 8");
    d.write_input(0, 4, "1,1\n10,\n");
    let err = d.peer("input", 0).unwrap_err();
    assert_eq!(err.exit_code(), 2);
    assert!(err.to_string().contains("window_4.csv:2:4"), "{err}");
}

#[test]
fn out_of_range_input_is_a_validation_error() {
    let d = Deployment::new(Protocol::DistinctCount, 1, 3, "r = 3");
    d.write_input(0, 1, "0,2,1\n");
    assert_eq!(d.peer("input", 0).unwrap_err().exit_code(), 3);

    let d = Deployment::new(Protocol::EventCorrelation, 1, 3, "s = 1\nw_max = 8");
    d.write_input(0, 1, "1,1\n2,1\n");
    assert_eq!(d.peer("input", 0).unwrap_err().exit_code(), 3);

    let d = Deployment::new(Protocol::EventCorrelation, 1, 3, "s = 2\nw_max = 8");
    d.write_input(0, 1, "1,8\n");
    assert_eq!(d.peer("input", 0).unwrap_err().exit_code(), 3);
}

#[test]
fn unreachable_privacy_peers_are_a_connection_error() {
    let d = Deployment::new(Protocol::Addition, 1, 3, "r = 1\ntimeout_secs = 1");
    d.write_input(0, 1, "1\n");
    assert_eq!(d.peer("input", 0).unwrap_err().exit_code(), 4);
}

#[test]
fn tool_and_config_must_agree_on_the_protocol() {
    let d = Deployment::new(Protocol::Addition, 1, 3, "r = 1\nprotocol = entropy");
    assert_eq!(d.peer("input", 0).unwrap_err().exit_code(), 3);
}

#[test]
fn missing_credentials_are_a_validation_error() {
    let d = Deployment::new(Protocol::Addition, 1, 3, "r = 1");
    std::fs::remove_file(d.path("privacy0.key")).unwrap();
    assert_eq!(d.peer("privacy", 0).unwrap_err().exit_code(), 3);
}

fn sim_dir(files: &[(usize, u64, &str)], conf: &str) -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    for &(i, w, v) in files {
        std::fs::create_dir_all(dir.path().join(format!("in/{i}"))).unwrap();
        std::fs::write(dir.path().join(format!("in/{i}/window_{w}.csv")), v).unwrap();
    }
    std::fs::write(dir.path().join("sim.conf"), format!("input_dir = in\n{conf}")).unwrap();
    dir
}

fn sim(dir: &Path, protocol: Protocol, extra: &[&str]) -> Result<(), CliError> {
    let conf = dir.join("sim.conf");
    let mut argv = vec!["tool".to_string(), "--config".into(), conf.display().to_string(), "--sim".into()];
    argv.extend(extra.iter().map(|s| s.to_string()));
    run(&Args::parse_from(argv), Some(protocol))
}

#[test]
fn simulator_results_are_byte_identical_per_seed() {
    let bits = ["1,0,1,0,0,0,1,0", "0,0,1,1,0,0,0,0", "0,0,0,0,0,0,1,1"];
    let files: Vec<(usize, u64, &str)> = bits.iter().enumerate().map(|(i, b)| (i, 3, *b)).collect();
    let dir = sim_dir(&files, "r = 8\ninput_peers = 3\n");
    let mut runs = Vec::new();
    for out in ["a", "b"] {
        let conf = format!("input_dir = in\nr = 8\ninput_peers = 3\noutput_dir = {out}\n");
        std::fs::write(dir.path().join("sim.conf"), conf).unwrap();
        sim(dir.path(), Protocol::DistinctCount, &["--privacy", "5", "--seed", "9"]).unwrap();
        runs.push(std::fs::read(dir.path().join(format!("{out}/window_3.result"))).unwrap());
    }
    assert_eq!(runs[0], runs[1]);
    let text = String::from_utf8(runs[0].clone()).unwrap();
    // items 0, 2, 3, 6, 7 are seen by someone
    assert_eq!(strip(&text), "5\n");
    assert_eq!(instrument(&text, "mults"), Some(2 * 8));
    assert_eq!(instrument(&text, "rounds"), Some(3));
}

#[test]
fn simulator_uses_neutral_input_for_missing_files() {
    let dir = sim_dir(&[(0, 1, "1,2"), (1, 1, "3,4"), (0, 2, "5,5")], "r = 2\ninput_peers = 2\nmin_input_peers = 1\n");
    sim(dir.path(), Protocol::Addition, &[]).unwrap();
    assert_eq!(strip(&read(&dir.path().join("output/window_1.result"))), "4,6\n");
    let second = read(&dir.path().join("output/window_2.result"));
    assert_eq!(strip(&second), "5,5\n");
    assert!(second.contains("# participants=0\n"));
}

#[test]
fn simulator_peer_count_flags_override_the_config() {
    let dir = sim_dir(&[(0, 1, "1"), (1, 1, "2"), (2, 1, "3")], "r = 1\ninput_peers = 2\n");
    // with two input peers the third directory is ignored
    sim(dir.path(), Protocol::Addition, &[]).unwrap();
    assert_eq!(strip(&read(&dir.path().join("output/window_1.result"))), "3\n");
    sim(dir.path(), Protocol::Addition, &["--peers", "3", "--privacy", "7"]).unwrap();
    assert_eq!(strip(&read(&dir.path().join("output/window_1.result"))), "6\n");
}

#[test]
fn bench_mode_runs_without_a_config() {
    let args = Args::parse_from(["tool", "--bench", "equal", "--parallelism", "4", "--batches", "1"]);
    run(&args, None).unwrap();
}
