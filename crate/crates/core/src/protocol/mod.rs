//! Controller/engine wire protocol: messages, framing and the reconnecting
//! client channel.

mod channel;
mod frame;
mod message;

pub use channel::{
    connect_with_retry, Channel, ChannelCloser, ChannelError, ChannelOptions, ChannelReceiver, ChannelSender,
    DEFAULT_QUEUE_BOUND,
};
pub use frame::{decode_message, encode_message, write_message, Decoded, FrameReader, ProtocolError, MAX_FRAME_LEN};
pub use message::{Action, Command, Message, Status};
