//! All peers in one process over the simulator transport.
//!
//! Input peer `i` reads its windows from `<input_dir>/<i>/window_<id>.csv`.
//! A peer without a file for some window contributes the neutral input
//! (zeros, nothing seen, no events).

use std::time::Instant;

use privagg::harness::{run_parallel, seeded_rng, share_inputs, sim_engines, INPUT_STREAM};
use privagg::transport::sim::Latency;

use crate::config::PeerConfig;
use crate::error::CliError;
use crate::output::{compute, render_log, write_file, WindowResult};
use crate::window::{list_windows, neutral_values, read_window, to_values, validate, window_file};

/// Runs every window found under `input_dir` and writes
/// `window_<id>.result` and `window_<id>.log` to `output_dir`.
pub fn run_local_sim(cfg: &PeerConfig, seed: u64) -> Result<Vec<WindowResult>, CliError> {
    let field = cfg.validate_common()?;
    let protocol = cfg.protocol()?;
    let (n, m) = (cfg.n, cfg.m());

    let mut per_peer = Vec::with_capacity(n);
    let mut ids = std::collections::BTreeSet::new();
    for i in 0..n {
        let dir = cfg.input_dir.join(i.to_string());
        let files = if dir.is_dir() { list_windows(&dir)? } else { Vec::new() };
        let mut windows = std::collections::BTreeMap::new();
        for (id, path) in files {
            let input = read_window(protocol, &path)?;
            validate(cfg, &field, i, &input, &path)?;
            windows.insert(id, to_values(cfg, &field, i, &input)?);
            ids.insert(id);
        }
        per_peer.push(windows);
    }
    if ids.is_empty() {
        return Err(CliError::Validation(format!("no window files under {}/<input peer>/", cfg.input_dir.display())));
    }

    let mut engines = sim_engines(field, m, seed, Latency::None)?;
    let mut results = Vec::new();
    for &w in &ids {
        let mut inputs = Vec::with_capacity(n);
        let mut participants = Vec::new();
        for (i, windows) in per_peer.iter().enumerate() {
            match windows.get(&w) {
                Some(v) => {
                    inputs.push(v.clone());
                    participants.push(i);
                }
                None => inputs.push(neutral_values(cfg, &field, i)?),
            }
        }
        let dealt = share_inputs(&field, m, &inputs, &mut seeded_rng(seed ^ w.rotate_left(32), INPUT_STREAM))?;
        let start = Instant::now();
        for e in engines.iter_mut() {
            e.set_window(w);
        }
        let outs = run_parallel(engines, |i, e| compute(e, cfg, &dealt[i]));
        let wall = start.elapsed();
        let mut next = Vec::with_capacity(m);
        let mut first = None;
        for (e, out) in outs {
            let out = out?;
            match &first {
                None => first = Some((out, e.last_stats(), e.reveals())),
                Some((o, _, _)) if *o != out => {
                    return Err(CliError::Abort(format!("window {w}: privacy peer {} disagrees", e.me())))
                }
                Some(_) => {}
            }
            next.push(e);
        }
        engines = next;
        let (output, stats, reveals) = first.expect("at least one privacy peer");
        let result = WindowResult { window: w, output, participants, stats };
        write_file(&window_file(&cfg.output_dir, w, "result"), &result.render())?;
        write_file(&window_file(&cfg.output_dir, w, "log"), &render_log(cfg, 0, &result, &reveals, wall))?;
        log::info!("window {w}: {}", result.output.render().trim_end());
        results.push(result);
    }
    Ok(results)
}
