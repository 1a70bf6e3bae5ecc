//! The remote client against an in-test TCP server speaking the line protocol.

use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use tiledworld::denoisers::remote::{decode_payload, encode_payload, Frame, PROTOCOL_VERSION};
use tiledworld::denoisers::{point_target_velocity, PointTarget, RemoteDenoiser};
use tiledworld::sampler::NoProgress;
use tiledworld::{build_denoiser, run_diffusion, Denoiser, Error, RunConfig, Schedule};

const MU: f32 = 0.5;

#[derive(Clone, Copy)]
enum Behaviour {
    /// Answer in batches, newest request first.
    Reversed,
    /// Refuse the handshake.
    Reject,
    /// Close the connection when request number `n` (from 1) arrives.
    DropAt(usize),
}

struct Server {
    addr: String,
    /// Batches that were answered out of arrival order.
    reordered: Arc<AtomicUsize>,
}

fn serve(behaviour: Behaviour) -> Server {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let reordered = Arc::new(AtomicUsize::new(0));
    let counter = reordered.clone();
    thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        handle(stream, behaviour, &counter);
    });
    Server { addr, reordered }
}

fn handle(stream: TcpStream, behaviour: Behaviour, reordered: &AtomicUsize) {
    let mut writer = stream.try_clone().unwrap();
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let Frame::Hello { version } = Frame::parse(&line).unwrap() else {
        panic!("expected hello, got {line}");
    };
    if matches!(behaviour, Behaviour::Reject) || version != PROTOCOL_VERSION {
        let reply = Frame::Error {
            id: 0,
            message: format!("unsupported protocol version {version}"),
        };
        writer.write_all(reply.to_line().as_bytes()).unwrap();
        return;
    }
    let caps = Frame::Capabilities {
        max_size: 16,
        channels: 2,
        pointwise: true,
        deterministic: true,
    };
    writer.write_all(caps.to_line().as_bytes()).unwrap();

    let (tx, rx) = mpsc::channel::<Frame>();
    thread::spawn(move || {
        let mut line = String::new();
        loop {
            line.clear();
            match reader.read_line(&mut line) {
                Ok(0) | Err(_) => return,
                Ok(_) => {
                    if tx.send(Frame::parse(&line).unwrap()).is_err() {
                        return;
                    }
                }
            }
        }
    });

    let mut seen = 0;
    loop {
        let Ok(first) = rx.recv() else { return };
        let mut batch = vec![first];
        while let Ok(f) = rx.recv_timeout(Duration::from_millis(20)) {
            batch.push(f);
        }
        if let Behaviour::DropAt(n) = behaviour {
            if seen + batch.len() >= n {
                let _ = writer.shutdown(std::net::Shutdown::Both);
                return;
            }
        }
        seen += batch.len();
        if batch.len() > 1 {
            reordered.fetch_add(1, Ordering::SeqCst);
        }
        for frame in batch.into_iter().rev() {
            let Frame::Velocity {
                id, t, channels, data, ..
            } = frame
            else {
                panic!("unexpected frame");
            };
            let x = decode_payload(&data).unwrap();
            let v = point_target_velocity(&x, t, &[MU], channels).unwrap();
            let reply = Frame::VelocityOk {
                id,
                data: encode_payload(&v),
            };
            writer.write_all(reply.to_line().as_bytes()).unwrap();
        }
    }
}

fn config(threads: usize) -> RunConfig {
    let mut c = RunConfig::new([32, 16, 16], 2, 16);
    c.schedule = Schedule::uniform(5);
    c.seed = 12;
    c.threads = threads;
    c
}

#[test]
fn out_of_order_replies_match_in_process_run() {
    let server = serve(Behaviour::Reversed);
    let spec = format!("remote:tcp={},timeout=20", server.addr);
    let remote = build_denoiser(&spec.parse().unwrap()).unwrap();
    assert!(remote.capabilities().pointwise);
    let cfg = config(4);
    let got = run_diffusion(&cfg, remote.as_ref(), &mut NoProgress).unwrap().world;
    let want = run_diffusion(&cfg, &PointTarget::uniform(MU), &mut NoProgress)
        .unwrap()
        .world;
    assert!(got.bitwise_eq(&want));
    assert!(
        server.reordered.load(Ordering::SeqCst) > 0,
        "no batch was answered out of order"
    );
}

#[test]
fn handshake_rejection_is_a_protocol_error() {
    let server = serve(Behaviour::Reject);
    match RemoteDenoiser::connect_tcp(&server.addr, Duration::from_secs(5)) {
        Err(Error::Protocol(m)) => assert!(m.contains("unsupported protocol version"), "{m}"),
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => panic!("handshake should fail"),
    }
}

#[test]
fn oversized_tiles_are_refused_before_sending() {
    let server = serve(Behaviour::Reversed);
    let remote = RemoteDenoiser::connect_tcp(&server.addr, Duration::from_secs(5)).unwrap();
    let mut cfg = config(1);
    cfg.dims = [32, 32, 32];
    cfg.tile_size = 32;
    cfg.stride = 16;
    let err = run_diffusion(&cfg, &remote, &mut NoProgress).unwrap_err();
    assert!(matches!(err.root(), Error::Capability(_)), "{err}");
}

#[test]
fn dropped_connection_names_step_and_tile() {
    // 3 tiles x 2 calls per step; request 15 is the second tile's pass in step 2.
    let server = serve(Behaviour::DropAt(15));
    let remote = RemoteDenoiser::connect_tcp(&server.addr, Duration::from_secs(5)).unwrap();
    let err = run_diffusion(&config(1), &remote, &mut NoProgress).unwrap_err();
    let Error::Step { index, ref source, .. } = err else {
        panic!("expected a step error, got {err}");
    };
    assert_eq!(index, 2);
    let Error::Tile { origin, .. } = **source else {
        panic!("expected a tile error, got {source}");
    };
    assert_eq!(origin, [8, 0, 0]);
    assert!(matches!(err.root(), Error::Transport { .. }), "{err}");
    let msg = err.to_string();
    assert!(msg.contains("step 2") && msg.contains("[8, 0, 0]"), "{msg}");
}
