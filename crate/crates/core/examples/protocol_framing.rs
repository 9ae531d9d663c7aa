//! Encode commands and statuses into length-prefixed frames and decode them
//! back from a byte stream that arrives in pieces.

use faultlab::execlog::Event;
use faultlab::protocol::{decode_message, encode_message, Decoded, Message};
use faultlab::task::Task;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let msgs = vec![
        Message::greet(42),
        Message::start_task(Task::new(1, 0, 30, true, "faultlab fault leak --duration 30").with_cores(vec![0])),
        Message::status(Event::TaskStart, Some(1), 1_700_000_000, "attempt=1"),
        Message::end_session(),
    ];
    let mut wire = Vec::new();
    for m in &msgs {
        let f = encode_message(m)?;
        println!("{:>4} bytes  {}", f.len(), String::from_utf8_lossy(&f[4..]));
        wire.extend(f);
    }

    // Feed the stream 7 bytes at a time.
    let mut buf: Vec<u8> = Vec::new();
    let mut got = Vec::new();
    for chunk in wire.chunks(7) {
        buf.extend_from_slice(chunk);
        loop {
            match decode_message(&buf)? {
                Decoded::NeedMoreBytes => break,
                Decoded::Frame { message, rest } => {
                    let used = buf.len() - rest.len();
                    got.push(message);
                    buf.drain(..used);
                }
            }
        }
    }
    assert_eq!(got, msgs);
    println!("decoded {} messages intact", got.len());

    // A start_task without a task is rejected on decode.
    let bad = br#"{"kind":"command","action":"start_task"}"#;
    let mut frame = (bad.len() as u32).to_be_bytes().to_vec();
    frame.extend_from_slice(bad);
    println!("invalid frame: {}", decode_message(&frame).unwrap_err());
    Ok(())
}
