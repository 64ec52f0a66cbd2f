//! Scripted UDP echo responder.
//!
//! Speaks plain UDP echo on a configurable (or OS-assigned) port, with a
//! per-datagram decision hook: echo immediately, echo after a programmed
//! delay, drop, or inject a garbage datagram before the echo. Tests and
//! local demos use it as the remote end of udp_echo probing.

use std::io;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResponderAction {
    Echo,
    DelayedEcho { delay: Duration },
    Drop,
    /// Sends an unrelated datagram first, then the echo; exercises stray
    /// rejection.
    GarbageThenEcho,
}

pub struct UdpEchoResponder {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl UdpEchoResponder {
    /// Binds 127.0.0.1 on an OS-assigned port.
    pub fn spawn<F>(decide: F) -> io::Result<Self>
    where
        F: Fn(&[u8]) -> ResponderAction + Send + 'static,
    {
        Self::spawn_on("127.0.0.1:0", decide)
    }

    pub fn spawn_on<F>(bind: &str, decide: F) -> io::Result<Self>
    where
        F: Fn(&[u8]) -> ResponderAction + Send + 'static,
    {
        let socket = UdpSocket::bind(bind)?;
        let addr = socket.local_addr()?;
        socket.set_read_timeout(Some(Duration::from_millis(25)))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = Arc::clone(&stop);
        let handle = std::thread::spawn(move || {
            let mut buf = [0u8; 65536];
            while !stop_flag.load(Ordering::Relaxed) {
                let (n, peer) = match socket.recv_from(&mut buf) {
                    Ok(ok) => ok,
                    Err(e)
                        if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut) =>
                    {
                        continue;
                    }
                    Err(_) => break,
                };
                match decide(&buf[..n]) {
                    ResponderAction::Echo => {
                        let _ = socket.send_to(&buf[..n], peer);
                    }
                    ResponderAction::DelayedEcho { delay } => {
                        std::thread::sleep(delay);
                        let _ = socket.send_to(&buf[..n], peer);
                    }
                    ResponderAction::Drop => {}
                    ResponderAction::GarbageThenEcho => {
                        let _ = socket.send_to(b"\xff\xfenot-your-echo", peer);
                        let _ = socket.send_to(&buf[..n], peer);
                    }
                }
            }
        });
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn port(&self) -> u16 {
        self.addr.port()
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }
}

impl Drop for UdpEchoResponder {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(handle) = self.handle.take() {
            let _ = handle.join();
        }
    }
}
