//! Runs every privacy peer of a computation inside one process, one thread
//! per peer, over the simulator transport or a loopback TLS mesh. Results
//! are deterministic for a fixed seed.

use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::engine::{Engine, EngineError};
use crate::field::{Fe, Field};
use crate::sharing::{share_into, Degree};
use crate::transport::sim::{simulator_transport, Latency};
use crate::transport::tls::{connect_mesh, hello, spawn_acceptor, Identity, Session, TlsMesh, Trust};
use crate::transport::{Role, TransportError};

/// Generator for stream `stream` derived from `seed`.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream ids: privacy peer engines use `0..m`, input sharing uses this one.
pub const INPUT_STREAM: u64 = 1 << 32;

/// One engine per privacy peer, connected by simulator channels.
pub fn sim_engines(field: Field, m: usize, seed: u64, latency: Latency) -> Result<Vec<Engine>, EngineError> {
    simulator_transport(m, seed, latency)
        .into_iter()
        .enumerate()
        .map(|(i, ep)| Engine::new(field, Box::new(ep), Box::new(seeded_rng(seed, i as u64))))
        .collect()
}

/// A full TLS mesh among `m` privacy peers on loopback, with fresh
/// self-signed identities. Returns one mesh per peer, in peer order.
pub fn loopback_mesh(field: &Field, m: usize, timeout: Duration) -> Result<Vec<TlsMesh>, TransportError> {
    let identities: Vec<Identity> =
        (0..m).map(|i| Identity::generate(&format!("privacy-peer-{i}"))).collect::<Result<_, _>>()?;
    let trust = Trust { privacy: identities.iter().map(Identity::fingerprint).collect(), input: Vec::new() };
    let listeners: Vec<TcpListener> = (0..m).map(|_| TcpListener::bind("127.0.0.1:0")).collect::<Result<_, _>>()?;
    let addrs: Vec<String> =
        listeners.iter().map(|l| l.local_addr().map(|a| a.to_string())).collect::<Result<_, _>>()?;
    let handles: Vec<_> = identities
        .into_iter()
        .zip(listeners)
        .enumerate()
        .map(|(i, (identity, listener))| {
            let trust = trust.clone();
            let addrs = addrs.clone();
            let p = field.p();
            std::thread::spawn(move || -> Result<TlsMesh, TransportError> {
                let hello = hello(Role::Privacy, i, p, m, 0, 0, 0, [0; 32]);
                let session = Session::new(identity, trust, hello, timeout)?;
                let accepted = spawn_acceptor(Arc::clone(&session), listener);
                connect_mesh(&session, &addrs, &accepted, &mut Vec::new())
            })
        })
        .collect();
    handles.into_iter().map(|h| h.join().expect("mesh setup thread panicked")).collect()
}

/// One engine per privacy peer over a loopback TLS mesh.
pub fn tls_engines(field: Field, m: usize, seed: u64) -> Result<Vec<Engine>, EngineError> {
    loopback_mesh(&field, m, Duration::from_secs(30))?
        .into_iter()
        .enumerate()
        .map(|(i, mesh)| Engine::new(field, Box::new(mesh), Box::new(seeded_rng(seed, i as u64))))
        .collect()
}

/// Shares every value of every input peer among `m` privacy peers.
/// Returns `[privacy peer][input peer][index]`.
pub fn share_inputs<R: RngCore + ?Sized>(
    field: &Field,
    m: usize,
    inputs: &[Vec<u64>],
    rng: &mut R,
) -> Result<Vec<Vec<Vec<Fe>>>, EngineError> {
    let t = Degree::new(m)?.threshold();
    let mut out: Vec<Vec<Vec<Fe>>> =
        (0..m).map(|_| inputs.iter().map(|v| Vec::with_capacity(v.len())).collect()).collect();
    let mut shares = Vec::with_capacity(m);
    for (peer, values) in inputs.iter().enumerate() {
        for &v in values {
            share_into(field, field.elem(v), t, m, rng, &mut shares);
            for (pp, &s) in shares.iter().enumerate() {
                out[pp][peer].push(s);
            }
        }
    }
    Ok(out)
}

/// Runs `job` for every engine on its own thread and returns the engines
/// with the job results, in peer order.
pub fn run_parallel<T, F>(engines: Vec<Engine>, job: F) -> Vec<(Engine, T)>
where
    T: Send,
    F: Fn(usize, &mut Engine) -> T + Sync,
{
    let job = &job;
    std::thread::scope(|scope| {
        let handles: Vec<_> = engines
            .into_iter()
            .enumerate()
            .map(|(i, mut engine)| {
                scope.spawn(move || {
                    let out = job(i, &mut engine);
                    (engine, out)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("privacy peer thread panicked")).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::reconstruct;

    #[test]
    fn shares_reconstruct_per_value() {
        let f = Field::new(13).unwrap();
        let inputs = vec![vec![1, 2, 3], vec![12, 0]];
        let shared = share_inputs(&f, 5, &inputs, &mut seeded_rng(1, INPUT_STREAM)).unwrap();
        for (peer, values) in inputs.iter().enumerate() {
            for (k, &v) in values.iter().enumerate() {
                let pts: Vec<(usize, Fe)> = (0..5).map(|pp| (pp, shared[pp][peer][k])).collect();
                assert_eq!(reconstruct(&f, &pts, 2).unwrap(), Fe(v));
            }
        }
    }
}
