//! Length-prefixed JSON framing.
//!
//! ```text
//! [u32 BE: payload length][payload: UTF-8 JSON, exactly `length` bytes]
//! ```

use std::io::{self, Read, Write};

use thiserror::Error;

use super::Message;

/// Maximum payload size accepted or produced (16 MiB).
pub const MAX_FRAME_LEN: usize = 16 * 1024 * 1024;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("frame of {0} bytes exceeds the 16 MiB limit")]
    FrameTooLarge(usize),
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("invalid message: {0}")]
    Invalid(String),
    #[error("connection closed mid-frame")]
    Truncated,
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub fn encode_message(m: &Message) -> Result<Vec<u8>, ProtocolError> {
    let payload = serde_json::to_vec(m).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    if payload.len() > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(payload.len()));
    }
    let mut out = Vec::with_capacity(4 + payload.len());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(&payload);
    Ok(out)
}

#[derive(Debug, PartialEq)]
pub enum Decoded<'a> {
    /// The buffer does not yet hold a whole frame; nothing was consumed.
    NeedMoreBytes,
    Frame { message: Message, rest: &'a [u8] },
}

pub fn decode_message(buf: &[u8]) -> Result<Decoded<'_>, ProtocolError> {
    if buf.len() < 4 {
        return Ok(Decoded::NeedMoreBytes);
    }
    let len = u32::from_be_bytes([buf[0], buf[1], buf[2], buf[3]]) as usize;
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    if buf.len() < 4 + len {
        return Ok(Decoded::NeedMoreBytes);
    }
    let message = parse_payload(&buf[4..4 + len])?;
    Ok(Decoded::Frame {
        message,
        rest: &buf[4 + len..],
    })
}

fn parse_payload(payload: &[u8]) -> Result<Message, ProtocolError> {
    let message: Message = serde_json::from_slice(payload).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    message.validate().map_err(ProtocolError::Invalid)?;
    Ok(message)
}

pub fn write_message<W: Write>(w: &mut W, m: &Message) -> Result<(), ProtocolError> {
    let bytes = encode_message(m)?;
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

/// Reads whole frames from a byte stream.
pub struct FrameReader<R> {
    inner: R,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        FrameReader { inner }
    }

    /// Returns `Ok(None)` on a clean end of stream between frames.
    pub fn read_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        let mut header = [0u8; 4];
        let mut got = 0;
        while got < 4 {
            match self.inner.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(ProtocolError::Truncated),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => continue,
                Err(e) => return Err(e.into()),
            }
        }
        let len = u32::from_be_bytes(header) as usize;
        if len > MAX_FRAME_LEN {
            return Err(ProtocolError::FrameTooLarge(len));
        }
        let mut payload = vec![0u8; len];
        self.inner.read_exact(&mut payload).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ProtocolError::Truncated,
            _ => ProtocolError::Io(e),
        })?;
        parse_payload(&payload).map(Some)
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::execlog::Event;
    use crate::protocol::Action;
    use crate::task::Task;

    fn status() -> Message {
        Message::status(Event::TaskStart, Some(1), 1_500_000_000, "")
    }

    #[test]
    fn status_round_trip() {
        let bytes = encode_message(&status()).unwrap();
        assert_eq!(u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize, bytes.len() - 4);
        match decode_message(&bytes).unwrap() {
            Decoded::Frame { message, rest } => {
                assert_eq!(message, status());
                assert!(rest.is_empty());
            }
            Decoded::NeedMoreBytes => panic!("complete frame"),
        }
    }

    #[test]
    fn end_session_has_no_task_field() {
        let bytes = encode_message(&Message::end_session()).unwrap();
        let json: serde_json::Value = serde_json::from_slice(&bytes[4..]).unwrap();
        assert_eq!(json["kind"], "command");
        assert_eq!(json["action"], "end_session");
        assert!(json.get("task").is_none());
    }

    #[test]
    fn two_frames_split_cleanly() {
        let greet = Message::greet(7);
        let mut buf = encode_message(&greet).unwrap();
        let second = encode_message(&status()).unwrap();
        buf.extend_from_slice(&second);
        match decode_message(&buf).unwrap() {
            Decoded::Frame { message, rest } => {
                assert_eq!(message, greet);
                assert_eq!(rest, &second[..]);
            }
            Decoded::NeedMoreBytes => panic!(),
        }
    }

    #[test]
    fn short_input_needs_more() {
        assert_eq!(decode_message(&[0, 0, 1]).unwrap(), Decoded::NeedMoreBytes);
    }

    #[test]
    fn every_split_point_of_a_frame() {
        let m = Message::start_task(Task::new(3, 5, 10, true, "faultlab fault leak --duration 10").with_cores(vec![4]));
        let bytes = encode_message(&m).unwrap();
        for cut in 0..bytes.len() {
            assert_eq!(decode_message(&bytes[..cut]).unwrap(), Decoded::NeedMoreBytes, "cut at {cut}");
            let mut joined = bytes[..cut].to_vec();
            joined.extend_from_slice(&bytes[cut..]);
            assert!(matches!(decode_message(&joined).unwrap(), Decoded::Frame { .. }));
        }
    }

    #[test]
    fn malformed_and_oversized_frames() {
        let mut bad = 5u32.to_be_bytes().to_vec();
        bad.extend_from_slice(b"{nope");
        assert!(matches!(decode_message(&bad), Err(ProtocolError::Malformed(_))));
        let huge = ((MAX_FRAME_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(decode_message(&huge), Err(ProtocolError::FrameTooLarge(_))));
        let mut no_task = Vec::new();
        let payload = br#"{"kind":"command","action":"start_task"}"#;
        no_task.extend_from_slice(&(payload.len() as u32).to_be_bytes());
        no_task.extend_from_slice(payload);
        assert!(matches!(decode_message(&no_task), Err(ProtocolError::Invalid(_))));
    }

    #[test]
    fn oversized_payload_refused_on_encode() {
        let m = Message::status(Event::Error, None, 0, "x".repeat(MAX_FRAME_LEN + 1));
        assert!(matches!(encode_message(&m), Err(ProtocolError::FrameTooLarge(_))));
    }

    #[test]
    fn reader_over_stream() {
        let mut buf = Vec::new();
        for i in 0..3 {
            buf.extend(encode_message(&Message::status(Event::TaskEnd, Some(i), 0, "x")).unwrap());
        }
        let mut r = FrameReader::new(&buf[..]);
        for i in 0..3 {
            assert_eq!(r.read_message().unwrap().unwrap().as_status().unwrap().seq_num, Some(i));
        }
        assert!(r.read_message().unwrap().is_none());
        let mut truncated = FrameReader::new(&buf[..buf.len() - 2]);
        truncated.read_message().unwrap();
        truncated.read_message().unwrap();
        assert!(matches!(truncated.read_message(), Err(ProtocolError::Truncated)));
    }

    #[test]
    fn command_json_field_names() {
        let m = Message::greet(42);
        let json: serde_json::Value = serde_json::from_slice(&encode_message(&m).unwrap()[4..]).unwrap();
        assert_eq!(json, serde_json::json!({"kind": "command", "action": "greet", "session_id": 42}));
        if let Message::Command(c) = m {
            assert_eq!(c.action, Action::Greet);
        }
    }
}
