//! A multiplexed connection to a peer: many requests in flight on one
//! socket, replies matched back by `query-id`.

use std::collections::HashMap;
use std::io::{self, BufReader};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::wire::{read_frame, write_frame, Frame};

type Pending = Arc<Mutex<HashMap<String, Sender<Frame>>>>;

struct Conn {
    stream: TcpStream,
    pending: Pending,
    alive: Arc<AtomicBool>,
}

pub struct Link {
    address: Mutex<String>,
    conn: Mutex<Option<Conn>>,
    connect_timeout: Duration,
}

impl Link {
    pub fn new(address: &str) -> Self {
        Link {
            address: Mutex::new(address.to_string()),
            conn: Mutex::new(None),
            connect_timeout: Duration::from_millis(500),
        }
    }

    pub fn set_address(&self, address: &str) {
        *self.address.lock().expect("link poisoned") = address.to_string();
        self.close();
    }

    fn connect(&self) -> io::Result<Conn> {
        let address = self.address.lock().expect("link poisoned").clone();
        let addr = address
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| io::Error::new(io::ErrorKind::NotFound, format!("cannot resolve {address}")))?;
        let stream = TcpStream::connect_timeout(&addr, self.connect_timeout)?;
        stream.set_nodelay(true)?;
        let reader = stream.try_clone()?;
        let pending: Pending = Arc::new(Mutex::new(HashMap::new()));
        let alive = Arc::new(AtomicBool::new(true));
        let (p, a) = (Arc::clone(&pending), Arc::clone(&alive));
        std::thread::spawn(move || {
            let mut r = BufReader::new(reader);
            while let Ok(Some(frame)) = read_frame(&mut r) {
                let Some(id) = frame.query_id() else { continue };
                if let Some(tx) = p.lock().expect("link poisoned").remove(id) {
                    let _ = tx.send(frame);
                }
            }
            // The socket is gone; fail everything still waiting on it.
            a.store(false, Ordering::Release);
            p.lock().expect("link poisoned").clear();
        });
        Ok(Conn { stream, pending, alive })
    }

    /// Sends `frame` (which must carry a unique `query-id`) and returns a
    /// receiver for its reply. The receiver disconnects if the link drops.
    pub fn request(&self, frame: &Frame) -> io::Result<Receiver<Frame>> {
        let id = frame
            .query_id()
            .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "request without query-id"))?
            .to_string();
        let (tx, rx) = channel();
        let mut conn = self.conn.lock().expect("link poisoned");
        if conn.as_ref().is_some_and(|c| !c.alive.load(Ordering::Acquire)) {
            *conn = None;
        }
        for attempt in 0..2 {
            if conn.is_none() {
                *conn = Some(self.connect()?);
            }
            let c = conn.as_mut().expect("connected above");
            c.pending.lock().expect("link poisoned").insert(id.clone(), tx.clone());
            match write_frame(&mut c.stream, frame) {
                Ok(()) => return Ok(rx),
                Err(e) => {
                    c.pending.lock().expect("link poisoned").remove(&id);
                    let _ = c.stream.shutdown(Shutdown::Both);
                    *conn = None;
                    if attempt == 1 {
                        return Err(io::Error::other(e.to_string()));
                    }
                }
            }
        }
        unreachable!("the second attempt always returns")
    }

    pub fn close(&self) {
        if let Some(c) = self.conn.lock().expect("link poisoned").take() {
            let _ = c.stream.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for Link {
    fn drop(&mut self) {
        self.close();
    }
}
