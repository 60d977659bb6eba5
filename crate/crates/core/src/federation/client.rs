use std::io::BufReader;
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use super::node::ServiceSummary;
use super::wire::{body_field, read_frame, write_frame, Frame};
use super::{remote_error, FederatedAnswer, FederatedQuery, FederationError};
use crate::monitoring::{read_csv, MetricSample};

static CLIENTS: AtomicU64 = AtomicU64::new(0);

/// Outcome of a SUBMIT.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Submitted {
    pub service_id: String,
    pub state: String,
    pub streams: usize,
}

/// A blocking, one-request-at-a-time connection to a node.
pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    token: String,
    prefix: String,
    seq: u64,
}

impl Client {
    pub fn connect(address: impl ToSocketAddrs, token: &str) -> Result<Self, FederationError> {
        let stream = TcpStream::connect(address)?;
        stream.set_nodelay(true)?;
        stream.set_read_timeout(Some(Duration::from_secs(30)))?;
        Ok(Client {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            token: token.to_string(),
            prefix: format!("client-{}-{}", std::process::id(), CLIENTS.fetch_add(1, Ordering::Relaxed)),
            seq: 0,
        })
    }

    pub fn set_timeout(&self, timeout: Duration) -> Result<(), FederationError> {
        self.writer.set_read_timeout(Some(timeout))?;
        Ok(())
    }

    /// Writes `frame` as is and returns whatever comes back.
    pub fn send_raw(&mut self, frame: &Frame) -> Result<Frame, FederationError> {
        write_frame(&mut self.writer, frame)?;
        read_frame(&mut self.reader)?.ok_or_else(|| FederationError::Invalid("connection closed".into()))
    }

    /// Sends `frame` with a fresh query-id and this client's token.
    pub fn call(&mut self, frame: Frame) -> Result<Frame, FederationError> {
        self.seq += 1;
        let id = format!("{}:{}", self.prefix, self.seq);
        let frame = frame.header("query-id", id.as_str()).header("token", self.token.as_str());
        let reply = self.send_raw(&frame)?;
        if reply.query_id() != Some(id.as_str()) {
            return Err(FederationError::Invalid(format!("reply for `{:?}`, expected `{id}`", reply.query_id())));
        }
        if reply.kind() == "ERROR" {
            return Err(remote_error(&reply));
        }
        Ok(reply)
    }

    pub fn query(&mut self, q: &FederatedQuery) -> Result<FederatedAnswer, FederationError> {
        q.validate()?;
        let reply = self.call(Frame::new("QUERY").with_body(q.to_body()))?;
        FederatedAnswer::from_body(reply.query_id().unwrap_or(""), &reply.body)
    }

    /// The node id that answered.
    pub fn ping(&mut self) -> Result<String, FederationError> {
        let reply = self.call(Frame::new("PING"))?;
        Ok(body_field(&reply.body, "node").unwrap_or("").to_string())
    }

    pub fn submit(&mut self, osdspec_xml: &str, capabilities: &[&str]) -> Result<Submitted, FederationError> {
        let mut frame = Frame::new("SUBMIT").with_body(osdspec_xml);
        if !capabilities.is_empty() {
            frame = frame.header("capabilities", capabilities.join(","));
        }
        let reply = self.call(frame)?;
        let field = |k: &str| body_field(&reply.body, k).unwrap_or("").to_string();
        Ok(Submitted {
            service_id: field("service_id"),
            state: field("state"),
            streams: field("streams").parse().unwrap_or(0),
        })
    }

    pub fn discover(&mut self, capability: &str) -> Result<Vec<ServiceSummary>, FederationError> {
        let reply = self.call(Frame::new("DISCOVER").with_body(format!("capability={capability}\n")))?;
        reply.body.lines().filter(|l| !l.is_empty()).map(ServiceSummary::from_line).collect()
    }

    pub fn metrics(&mut self) -> Result<Vec<MetricSample>, FederationError> {
        let reply = self.call(Frame::new("METRICS"))?;
        read_csv(reply.body.as_bytes()).map_err(|e| FederationError::Invalid(e.to_string()))
    }
}
