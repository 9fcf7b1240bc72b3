//! A reader that gives up when a shutdown flag is raised, so a blocked read
//! on a pipe cannot hold the process past a termination signal.

use std::io::{self, Read};
use std::os::fd::{AsRawFd, RawFd};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

const POLL_MILLIS: i32 = 200;

pub struct Interruptible<R> {
    inner: R,
    fd: RawFd,
    stop: Arc<AtomicBool>,
}

impl<R: Read + AsRawFd> Interruptible<R> {
    pub fn new(inner: R, stop: Arc<AtomicBool>) -> Self {
        let fd = inner.as_raw_fd();
        Interruptible { inner, fd, stop }
    }
}

impl<R: Read> Read for Interruptible<R> {
    /// Reports end of stream once the flag is set.
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        loop {
            if self.stop.load(Ordering::SeqCst) {
                return Ok(0);
            }
            let mut pfd = libc::pollfd {
                fd: self.fd,
                events: libc::POLLIN,
                revents: 0,
            };
            // SAFETY: one valid pollfd for the duration of the call.
            let rc = unsafe { libc::poll(&mut pfd, 1, POLL_MILLIS) };
            if rc < 0 {
                let err = io::Error::last_os_error();
                if err.kind() == io::ErrorKind::Interrupted {
                    continue;
                }
                return Err(err);
            }
            if rc > 0 {
                return self.inner.read(buf);
            }
        }
    }
}
