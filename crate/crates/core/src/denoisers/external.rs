use std::io::{BufReader, BufWriter, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use super::protocol::{Frame, Hello, Request};
use super::{digest_bytes, Denoiser, Descriptor, WindowContext};
use crate::error::{Error, Result};
use crate::grid::{Latent, WindowLatent};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(30);

struct Session {
    writer: Box<dyn Write + Send>,
    responses: Receiver<Result<Frame>>,
    child: Option<Child>,
    closed: bool,
}

/// Client for a denoiser speaking the stdio protocol.
///
/// Requests are serialized over the one connection; concurrent callers
/// queue on an internal lock.
pub struct ExternalDenoiser {
    hello: Hello,
    timeout: Duration,
    label: String,
    session: Mutex<Session>,
}

impl ExternalDenoiser {
    /// Spawns `command` through `sh -c` and performs the handshake.
    pub fn spawn(command: &str, hello: Hello, timeout: Duration) -> Result<Self> {
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(command)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Protocol(format!("spawning `{command}`: {e}")))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        Self::handshake(stdout, stdin, Some(child), hello, timeout, command.to_string())
    }

    /// Runs the protocol over arbitrary streams, e.g. an in-process server.
    pub fn from_streams<R, W>(reader: R, writer: W, hello: Hello, timeout: Duration) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        Self::handshake(reader, writer, None, hello, timeout, "streams".into())
    }

    fn handshake<R, W>(
        reader: R,
        writer: W,
        child: Option<Child>,
        hello: Hello,
        timeout: Duration,
        label: String,
    ) -> Result<Self>
    where
        R: Read + Send + 'static,
        W: Write + Send + 'static,
    {
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let mut reader = BufReader::new(reader);
            let ack = Hello::read_from(&mut reader);
            let ok = ack.is_ok();
            if tx.send(ack.map(|_| Frame::Shutdown)).is_err() || !ok {
                return;
            }
            loop {
                let frame = Frame::read_from(&mut reader, &hello);
                let stop = frame.is_err();
                if tx.send(frame).is_err() || stop {
                    return;
                }
            }
        });
        let mut writer: Box<dyn Write + Send> = Box::new(BufWriter::new(writer));
        let sent = hello.write_to(&mut writer).and_then(|_| Ok(writer.flush()?));
        let mut session = Session {
            writer,
            responses: rx,
            child,
            closed: false,
        };
        if let Err(e) = sent {
            kill(&mut session);
            return Err(Error::Protocol(format!("sending HELLO: {e}")));
        }
        match session.responses.recv_timeout(timeout) {
            Ok(Ok(_)) => {}
            Ok(Err(e)) => {
                kill(&mut session);
                return Err(Error::Protocol(format!("handshake failed: {e}")));
            }
            Err(_) => {
                kill(&mut session);
                return Err(Error::ProtocolTimeout {
                    t: 0,
                    millis: timeout.as_millis(),
                });
            }
        }
        Ok(ExternalDenoiser {
            hello,
            timeout,
            label,
            session: Mutex::new(session),
        })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    /// Sends one raw request and waits for its response payload.
    pub fn request(&self, req: &Request) -> Result<Vec<f32>> {
        let t = req.t as usize;
        let mut session = self.session.lock().expect("session poisoned");
        if session.closed {
            return Err(Error::Protocol(format!("session already closed (t={t})")));
        }
        if req.payload.len() != self.hello.payload_len() {
            return Err(Error::shape(self.hello.payload_len(), req.payload.len()));
        }
        Frame::Request(req.clone())
            .write_to(&mut session.writer)
            .map_err(|e| Error::Protocol(format!("sending request at t={t}: {e}")))?;
        match session.responses.recv_timeout(self.timeout) {
            Ok(Ok(Frame::Response(resp))) => {
                let dims = (resp.width, resp.height, resp.channels);
                if dims != (self.hello.width, self.hello.height, self.hello.channels) {
                    return Err(Error::shape(
                        format!("{}x{}x{}", self.hello.width, self.hello.height, self.hello.channels),
                        format!("{}x{}x{}", dims.0, dims.1, dims.2),
                    ));
                }
                Ok(resp.payload)
            }
            Ok(Ok(other)) => Err(Error::Protocol(format!("expected a response at t={t}, got {other:?}"))),
            Ok(Err(e @ Error::ShapeMismatch { .. })) => {
                session.closed = true;
                Err(e)
            }
            Ok(Err(e)) => {
                session.closed = true;
                let detail = match e {
                    Error::Protocol(m) => m,
                    other => other.to_string(),
                };
                Err(Error::Protocol(format!("at t={t}: {detail}")))
            }
            Err(RecvTimeoutError::Timeout) => Err(Error::ProtocolTimeout {
                t,
                millis: self.timeout.as_millis(),
            }),
            Err(RecvTimeoutError::Disconnected) => {
                session.closed = true;
                Err(Error::Protocol(format!("server went away at t={t}")))
            }
        }
    }

    /// Sends Shutdown and reaps the child process.
    pub fn shutdown(mut self) -> Result<()> {
        close(self.session.get_mut().expect("session poisoned"))
    }
}

fn close(session: &mut Session) -> Result<()> {
    if session.closed {
        kill(session);
        return Ok(());
    }
    session.closed = true;
    let sent = Frame::Shutdown.write_to(&mut session.writer);
    if let Some(mut child) = session.child.take() {
        // Dropping our end of stdin lets the child see EOF if it ignored Shutdown.
        session.writer = Box::new(std::io::sink());
        let status = child.wait()?;
        if !status.success() {
            return Err(Error::Protocol(format!("denoiser exited with {status}")));
        }
    }
    sent
}

fn kill(session: &mut Session) {
    session.closed = true;
    if let Some(mut child) = session.child.take() {
        let _ = child.kill();
        let _ = child.wait();
    }
}

impl Drop for ExternalDenoiser {
    fn drop(&mut self) {
        if let Ok(session) = self.session.get_mut() {
            if session.child.is_some() {
                let _ = close(session);
            }
        }
    }
}

impl Denoiser for ExternalDenoiser {
    fn predict_eps(&self, window: &WindowLatent, ctx: &WindowContext) -> Result<WindowLatent> {
        let expected = (
            self.hello.width as usize,
            self.hello.height as usize,
            self.hello.channels as usize,
        );
        if (window.width(), window.height(), window.channels()) != expected {
            return Err(Error::shape(
                format!("{}x{}x{}", expected.0, expected.1, expected.2),
                window.shape_string(),
            ));
        }
        let payload = self.request(&Request {
            t: ctx.t as u32,
            window_index: ctx.window_index as u32,
            condition: ctx.condition.0,
            payload: window.to_f32_vec(),
        })?;
        let mut out = Latent::from_f32(window.width(), window.height(), window.channels(), &payload)?;
        out.timestep_tag = window.timestep_tag;
        Ok(out)
    }

    fn descriptor(&self) -> Descriptor {
        Descriptor {
            name: format!("external:{}", self.label),
            digest: digest_bytes(self.label.as_bytes()),
        }
    }
}
