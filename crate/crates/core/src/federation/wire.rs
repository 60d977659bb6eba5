//! Frame format: a 4-byte big-endian payload length, then a UTF-8 payload
//! made of `name: value` header lines, a blank line, and the body.
//! The first header is always `type`.

use std::io::{self, Read, Write};

pub const MAX_FRAME: usize = 16 * 1024 * 1024;

#[derive(Debug, thiserror::Error)]
pub enum WireError {
    #[error("frame of {0} bytes exceeds the {MAX_FRAME}-byte limit")]
    TooLarge(usize),
    #[error("bad magic: payload must start with `type: `")]
    BadMagic,
    #[error("malformed frame: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    headers: Vec<(String, String)>,
    pub body: String,
}

fn valid_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'-')
}

fn valid_value(value: &str) -> bool {
    !value.contains(['\n', '\r'])
}

impl Frame {
    pub fn new(kind: &str) -> Self {
        Frame {
            headers: vec![("type".to_string(), kind.to_string())],
            body: String::new(),
        }
    }

    /// Adds a header. Panics on names or values the format cannot carry;
    /// both come from code, not from the network.
    pub fn header(mut self, name: &str, value: impl Into<String>) -> Self {
        let value = value.into();
        assert!(valid_name(name) && name != "type", "bad header name {name:?}");
        assert!(valid_value(&value), "header value with line break");
        self.headers.retain(|(n, _)| n != name);
        self.headers.push((name.to_string(), value));
        self
    }

    pub fn with_body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn get(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_str())
    }

    pub fn kind(&self) -> &str {
        &self.headers[0].1
    }

    pub fn query_id(&self) -> Option<&str> {
        self.get("query-id")
    }

    pub fn token(&self) -> Option<&str> {
        self.get("token")
    }

    pub fn node_id(&self) -> Option<&str> {
        self.get("node-id")
    }

    pub fn headers(&self) -> &[(String, String)] {
        &self.headers
    }

    pub fn payload(&self) -> String {
        let mut out = String::new();
        for (n, v) in &self.headers {
            out.push_str(n);
            out.push_str(": ");
            out.push_str(v);
            out.push('\n');
        }
        out.push('\n');
        out.push_str(&self.body);
        out
    }

    /// Length prefix plus payload, ready to write.
    pub fn encode(&self) -> Vec<u8> {
        let payload = self.payload();
        let mut out = Vec::with_capacity(4 + payload.len());
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        out.extend_from_slice(payload.as_bytes());
        out
    }

    pub fn decode(payload: &[u8]) -> Result<Frame, WireError> {
        if !payload.starts_with(b"type: ") {
            return Err(WireError::BadMagic);
        }
        let text = std::str::from_utf8(payload).map_err(|_| WireError::Malformed("payload is not UTF-8".into()))?;
        let (head, body) = text
            .split_once("\n\n")
            .ok_or_else(|| WireError::Malformed("missing blank line after headers".into()))?;
        let mut headers: Vec<(String, String)> = Vec::new();
        for line in head.split('\n') {
            let (name, value) = line
                .split_once(": ")
                .ok_or_else(|| WireError::Malformed(format!("bad header line `{line}`")))?;
            if !valid_name(name) || !valid_value(value) {
                return Err(WireError::Malformed(format!("bad header line `{line}`")));
            }
            if headers.iter().any(|(n, _)| n == name) {
                return Err(WireError::Malformed(format!("duplicate header `{name}`")));
            }
            headers.push((name.to_string(), value.to_string()));
        }
        if headers[0].1.is_empty() {
            return Err(WireError::Malformed("empty type".into()));
        }
        Ok(Frame {
            headers,
            body: body.to_string(),
        })
    }
}

/// Reads one frame. `Ok(None)` on a clean end of stream before a length prefix.
pub fn read_frame(r: &mut impl Read) -> Result<Option<Frame>, WireError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(WireError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(WireError::TooLarge(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)?;
    Frame::decode(&payload).map(Some)
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> Result<(), WireError> {
    let bytes = frame.encode();
    if bytes.len() - 4 > MAX_FRAME {
        return Err(WireError::TooLarge(bytes.len() - 4));
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Parses `key=value` body lines.
pub fn body_fields(body: &str) -> impl Iterator<Item = (&str, &str)> {
    body.lines().filter_map(|l| l.split_once('='))
}

pub fn body_field<'a>(body: &'a str, key: &str) -> Option<&'a str> {
    body_fields(body).find(|(k, _)| *k == key).map(|(_, v)| v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn golden_bytes() {
        let f = Frame::new("PING").header("query-id", "q1").header("token", "t");
        let bytes = f.encode();
        let payload = b"type: PING\nquery-id: q1\ntoken: t\n\n";
        assert_eq!(&bytes[..4], &(payload.len() as u32).to_be_bytes());
        assert_eq!(&bytes[4..], payload);
        let back = read_frame(&mut &bytes[..]).unwrap().unwrap();
        assert_eq!(back, f);
        assert_eq!(back.kind(), "PING");
        assert_eq!(back.query_id(), Some("q1"));
    }

    #[test]
    fn body_survives() {
        let f = Frame::new("RESULT").header("query-id", "x").with_body("0,10,avg,6,3,1,3\ncompleteness=2/2\n\nmore");
        let back = read_frame(&mut &f.encode()[..]).unwrap().unwrap();
        assert_eq!(back.body, f.body);
        assert_eq!(body_field(&back.body, "completeness"), Some("2/2"));
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(Frame::decode(b"kind: X\n\n"), Err(WireError::BadMagic)));
        assert!(matches!(Frame::decode(b"type: X\n"), Err(WireError::Malformed(_))));
        assert!(matches!(Frame::decode(b"type: X\nBad: y\n\n"), Err(WireError::Malformed(_))));
        assert!(matches!(Frame::decode(b"type: X\na: 1\na: 2\n\n"), Err(WireError::Malformed(_))));
        assert!(matches!(Frame::decode(b"type: \xff\n\n"), Err(WireError::Malformed(_))));
        let mut big = ((MAX_FRAME + 1) as u32).to_be_bytes().to_vec();
        big.extend_from_slice(b"type: X");
        assert!(matches!(read_frame(&mut &big[..]), Err(WireError::TooLarge(_))));
        assert!(read_frame(&mut &b""[..]).unwrap().is_none());
        assert!(read_frame(&mut &b"\0\0"[..]).is_err());
        assert!(read_frame(&mut &b"\0\0\0\x09type"[..]).is_err());
    }

    proptest! {
        #[test]
        fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
            let _ = Frame::decode(&bytes);
            let _ = read_frame(&mut &bytes[..]);
        }

        #[test]
        fn round_trip(kind in "[A-Z]{1,8}", qid in "[a-z0-9:-]{0,12}", body in "\\PC{0,64}") {
            let f = Frame::new(&kind).header("query-id", qid).with_body(body);
            prop_assert_eq!(read_frame(&mut &f.encode()[..]).unwrap().unwrap(), f);
        }
    }
}
