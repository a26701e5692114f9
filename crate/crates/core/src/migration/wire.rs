//! Length-prefixed framing: `u32 len | u8 type | payload`, with `len = payload + 1`.

use std::io::{self, Read, Write};

/// Largest accepted frame, type byte included.
pub const MAX_FRAME: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum FrameType {
    Hello = 1,
    Quote = 2,
    KeyConfirm = 3,
    Negotiate = 4,
    Chunk = 5,
    Refresh = 6,
    Commit = 7,
    Abort = 8,
}

impl FrameType {
    pub const ALL: [FrameType; 8] = [
        FrameType::Hello,
        FrameType::Quote,
        FrameType::KeyConfirm,
        FrameType::Negotiate,
        FrameType::Chunk,
        FrameType::Refresh,
        FrameType::Commit,
        FrameType::Abort,
    ];

    pub fn from_u8(b: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|t| *t as u8 == b)
    }

    pub fn name(self) -> &'static str {
        match self {
            FrameType::Hello => "HELLO",
            FrameType::Quote => "QUOTE",
            FrameType::KeyConfirm => "KEYCONFIRM",
            FrameType::Negotiate => "NEGOTIATE",
            FrameType::Chunk => "CHUNK",
            FrameType::Refresh => "REFRESH",
            FrameType::Commit => "COMMIT",
            FrameType::Abort => "ABORT",
        }
    }
}

impl std::fmt::Display for FrameType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub ty: FrameType,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(ty: FrameType, payload: Vec<u8>) -> Self {
        Frame { ty, payload }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(5 + self.payload.len());
        out.extend_from_slice(&(self.payload.len() as u32 + 1).to_le_bytes());
        out.push(self.ty as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Type byte plus payload; the unit hashed into transcripts.
    pub fn body(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(1 + self.payload.len());
        out.push(self.ty as u8);
        out.extend_from_slice(&self.payload);
        out
    }

    /// Parse one complete frame from the front of `buf`, returning it and the bytes consumed.
    pub fn parse_prefix(buf: &[u8]) -> Option<Result<(Frame, usize), io::Error>> {
        if buf.len() < 4 {
            return None;
        }
        let len = u32::from_le_bytes(buf[..4].try_into().unwrap()) as usize;
        if len == 0 || len > MAX_FRAME {
            return Some(Err(bad(format!("frame length {len} out of range"))));
        }
        if buf.len() < 4 + len {
            return None;
        }
        let ty = match FrameType::from_u8(buf[4]) {
            Some(t) => t,
            None => return Some(Err(bad(format!("unknown frame type {}", buf[4])))),
        };
        Some(Ok((Frame::new(ty, buf[5..4 + len].to_vec()), 4 + len)))
    }
}

fn bad(msg: String) -> io::Error {
    io::Error::new(io::ErrorKind::InvalidData, msg)
}

pub fn write_frame(w: &mut (impl Write + ?Sized), frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.to_bytes())?;
    w.flush()
}

/// Read one frame. A clean end of stream before the first byte is `UnexpectedEof`.
pub fn read_frame(r: &mut (impl Read + ?Sized)) -> io::Result<Frame> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let len = u32::from_le_bytes(len) as usize;
    if len == 0 || len > MAX_FRAME {
        return Err(bad(format!("frame length {len} out of range")));
    }
    let mut ty = [0u8; 1];
    r.read_exact(&mut ty)?;
    let ty = FrameType::from_u8(ty[0]).ok_or_else(|| bad(format!("unknown frame type {}", ty[0])))?;
    let mut payload = vec![0u8; len - 1];
    r.read_exact(&mut payload)?;
    Ok(Frame { ty, payload })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_round_trip() {
        let f = Frame::new(FrameType::Chunk, vec![1, 2, 3]);
        let bytes = f.to_bytes();
        assert_eq!(bytes, vec![4, 0, 0, 0, 5, 1, 2, 3]);
        assert_eq!(read_frame(&mut &bytes[..]).unwrap(), f);
        assert_eq!(Frame::parse_prefix(&bytes[..7]).map(|r| r.is_ok()), None);
        let (g, used) = Frame::parse_prefix(&bytes).unwrap().unwrap();
        assert_eq!((g, used), (f, 8));
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(read_frame(&mut &[0u8, 0, 0, 0][..]).is_err());
        assert!(read_frame(&mut &[1u8, 0, 0, 0, 99][..]).is_err());
        assert!(read_frame(&mut &[5u8, 0, 0, 0, 1, 0][..]).is_err());
    }
}
