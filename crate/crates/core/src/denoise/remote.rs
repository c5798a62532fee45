//! Out-of-process denoiser speaking CDN1 frames over TCP or a child's stdio.

use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::TcpStream;
use std::process::{Child, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use super::wire::{read_frame, write_frame, Frame, FrameHeader, Op};
use super::{DenoiseRequest, Denoiser};
use crate::error::{CutError, Result};
use crate::latent::{Latent, Shape};
use crate::schedule::VarianceSchedule;

/// Environment variable holding the remote backend address.
pub const REMOTE_ENV: &str = "CUTDIFFUSION_REMOTE";

/// `tcp://host:port`, bare `host:port`, or `exec:<command line>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    Tcp(String),
    Exec(Vec<String>),
}

impl FromStr for Endpoint {
    type Err = CutError;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = s.strip_prefix("exec:") {
            let argv: Vec<String> = cmd.split_whitespace().map(str::to_owned).collect();
            if argv.is_empty() {
                return Err(CutError::config("remote", "exec endpoint needs a command"));
            }
            return Ok(Endpoint::Exec(argv));
        }
        let addr = s.strip_prefix("tcp://").unwrap_or(s);
        if addr.is_empty() || !addr.contains(':') {
            return Err(CutError::config("remote", format!("`{s}` is not host:port")));
        }
        Ok(Endpoint::Tcp(addr.to_owned()))
    }
}

struct Connection {
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    child: Option<Child>,
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Some(child) = &mut self.child {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

impl Connection {
    fn open(endpoint: &Endpoint) -> std::io::Result<Connection> {
        match endpoint {
            Endpoint::Tcp(addr) => {
                let stream = TcpStream::connect(addr)?;
                stream.set_nodelay(true)?;
                let reader = BufReader::new(stream.try_clone()?);
                Ok(Connection {
                    reader: Box::new(reader),
                    writer: Box::new(BufWriter::new(stream)),
                    child: None,
                })
            }
            Endpoint::Exec(argv) => {
                let mut child = Command::new(&argv[0])
                    .args(&argv[1..])
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .spawn()?;
                let stdin = child
                    .stdin
                    .take()
                    .ok_or_else(|| std::io::Error::from(ErrorKind::BrokenPipe))?;
                let stdout = child
                    .stdout
                    .take()
                    .ok_or_else(|| std::io::Error::from(ErrorKind::BrokenPipe))?;
                Ok(Connection {
                    reader: Box::new(BufReader::new(stdout)),
                    writer: Box::new(BufWriter::new(stdin)),
                    child: Some(child),
                })
            }
        }
    }

    fn call(&mut self, frame: &Frame) -> Result<Frame> {
        let id = frame.header.request_id;
        let transport = |source| CutError::Transport { request_id: id, source };
        write_frame(&mut self.writer, frame).map_err(transport)?;
        match read_frame(&mut self.reader) {
            Ok(f) => Ok(f),
            Err(CutError::Io(source)) => Err(transport(source)),
            Err(e) => Err(e),
        }
    }
}

fn expect(resp: &Frame, id: u64, op: Op, shape: Shape) -> Result<()> {
    if resp.header.op == Op::Error {
        return Err(CutError::Protocol(format!(
            "request {id}: server error: {}",
            resp.header.reason.as_deref().unwrap_or("unspecified")
        )));
    }
    if resp.header.request_id != id {
        return Err(CutError::Protocol(format!(
            "response id {} does not match request {id}",
            resp.header.request_id
        )));
    }
    if resp.header.op != op {
        return Err(CutError::Protocol(format!(
            "request {id}: expected {op:?}, got {:?}",
            resp.header.op
        )));
    }
    if resp.header.shape() != shape {
        return Err(CutError::Protocol(format!(
            "request {id}: expected shape {shape}, got {}",
            resp.header.shape()
        )));
    }
    Ok(())
}

/// Remote backend. Each connection carries one request at a time; concurrent
/// callers draw from a pool and open new connections on demand.
pub struct RemoteDenoiser {
    endpoint: Endpoint,
    shape: Shape,
    steps: usize,
    pool: Mutex<Vec<Connection>>,
    control_ids: AtomicU64,
}

impl RemoteDenoiser {
    /// Connects and negotiates the patch shape and step count.
    pub fn connect(endpoint: Endpoint, shape: Shape, steps: usize) -> Result<Self> {
        let remote = RemoteDenoiser {
            endpoint,
            shape,
            steps,
            pool: Mutex::new(Vec::new()),
            control_ids: AtomicU64::new(1 << 63),
        };
        let conn = remote.checkout()?;
        remote.checkin(conn);
        Ok(remote)
    }

    pub fn from_env(shape: Shape, steps: usize) -> Result<Self> {
        let addr = std::env::var(REMOTE_ENV)
            .map_err(|_| CutError::config("remote", format!("set {REMOTE_ENV} to the backend address")))?;
        Self::connect(addr.parse()?, shape, steps)
    }

    fn checkout(&self) -> Result<Connection> {
        if let Some(c) = self.pool.lock().expect("connection pool poisoned").pop() {
            return Ok(c);
        }
        let id = self.control_ids.fetch_add(1, Ordering::Relaxed);
        let mut conn =
            Connection::open(&self.endpoint).map_err(|source| CutError::Transport { request_id: id, source })?;
        let hello = Frame {
            header: FrameHeader {
                request_id: id,
                op: Op::Hello,
                t: self.steps,
                shape: [self.shape.h, self.shape.w, self.shape.c],
                condition: String::new(),
                reason: None,
            },
            payload: Vec::new(),
        };
        let resp = conn.call(&hello)?;
        expect(&resp, id, Op::Hello, self.shape)?;
        if resp.header.t != self.steps {
            return Err(CutError::Protocol(format!(
                "server negotiated {} steps, engine runs {}",
                resp.header.t, self.steps
            )));
        }
        Ok(conn)
    }

    fn checkin(&self, conn: Connection) {
        self.pool.lock().expect("connection pool poisoned").push(conn);
    }

    fn roundtrip(&self, frame: Frame, op: Op, shape: Shape) -> Result<Latent> {
        let mut conn = self.checkout()?;
        let resp = conn.call(&frame)?;
        expect(&resp, frame.header.request_id, op, shape)?;
        self.checkin(conn);
        resp.to_latent()
    }

    /// Sends `latent` through the server's echo op.
    pub fn echo(&self, latent: &Latent) -> Result<Latent> {
        let id = self.control_ids.fetch_add(1, Ordering::Relaxed);
        self.roundtrip(
            Frame::tensor(id, Op::Echo, 0, "", latent),
            Op::EchoResult,
            latent.shape(),
        )
    }

    /// Asks the server to decode a final latent into an image tensor.
    pub fn decode(&self, latent: &Latent, condition: &str) -> Result<Latent> {
        let id = self.control_ids.fetch_add(1, Ordering::Relaxed);
        let mut conn = self.checkout()?;
        let resp = conn.call(&Frame::tensor(id, Op::Decode, 0, condition, latent))?;
        expect(&resp, id, Op::DecodeResult, resp.header.shape())?;
        self.checkin(conn);
        resp.to_latent()
    }
}

impl Denoiser for RemoteDenoiser {
    fn name(&self) -> &str {
        "remote"
    }

    fn patch_shape(&self) -> Option<Shape> {
        Some(self.shape)
    }

    fn predict_noise(&self, req: &DenoiseRequest<'_>, _: &VarianceSchedule) -> Result<Latent> {
        let frame = Frame::tensor(req.request_id, Op::Eps, req.t, req.condition, req.latent);
        self.roundtrip(frame, Op::EpsResult, req.latent.shape())
    }
}

/// Answers frames on one connection until the peer hangs up. Serves `hello`,
/// `eps` through `backend`, and `echo`; anything else gets an error frame.
pub fn serve<R: Read, W: Write>(
    reader: &mut R,
    writer: &mut W,
    backend: &dyn Denoiser,
    sched: &VarianceSchedule,
    shape: Shape,
) -> Result<()> {
    loop {
        let frame = match read_frame(reader) {
            Ok(f) => f,
            Err(CutError::Io(e)) if e.kind() == ErrorKind::UnexpectedEof => return Ok(()),
            Err(CutError::Protocol(reason)) => {
                write_frame(writer, &Frame::error(0, reason))?;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let id = frame.header.request_id;
        let reply = match frame.header.op {
            Op::Hello => Frame {
                header: FrameHeader {
                    t: sched.steps(),
                    shape: [shape.h, shape.w, shape.c],
                    ..frame.header.clone()
                },
                payload: Vec::new(),
            },
            Op::Echo => Frame {
                header: FrameHeader {
                    op: Op::EchoResult,
                    ..frame.header.clone()
                },
                payload: frame.payload.clone(),
            },
            Op::Eps => {
                let z = frame.to_latent()?;
                let req = DenoiseRequest {
                    latent: &z,
                    t: frame.header.t,
                    condition: &frame.header.condition,
                    request_id: id,
                };
                match super::predict_noise(backend, &req, sched) {
                    Ok(eps) => Frame::tensor(id, Op::EpsResult, frame.header.t, &frame.header.condition, &eps),
                    Err(e) => Frame::error(id, e.to_string()),
                }
            }
            other => Frame::error(id, format!("unsupported op {other:?}")),
        };
        write_frame(writer, &reply)?;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_endpoints() {
        assert_eq!(
            "tcp://127.0.0.1:9000".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("127.0.0.1:9000".into())
        );
        assert_eq!(
            "localhost:1".parse::<Endpoint>().unwrap(),
            Endpoint::Tcp("localhost:1".into())
        );
        assert_eq!(
            "exec:python3 bridge.py --stdio".parse::<Endpoint>().unwrap(),
            Endpoint::Exec(vec!["python3".into(), "bridge.py".into(), "--stdio".into()])
        );
        assert!("exec:".parse::<Endpoint>().is_err());
        assert!("nowhere".parse::<Endpoint>().is_err());
    }

    #[test]
    fn unreachable_server_is_transport_error() {
        let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        drop(listener);
        let err = RemoteDenoiser::connect(Endpoint::Tcp(addr.to_string()), Shape::new(2, 2, 1), 10)
            .err()
            .unwrap();
        assert!(matches!(err, CutError::Transport { .. }), "{err:?}");
        assert_eq!(err.exit_code(), 3);
    }
}
