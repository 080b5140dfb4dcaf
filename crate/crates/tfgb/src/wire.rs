//! Bit-exact wire framing.
//!
//! Every message is one frame: a fixed 24-byte header followed by a
//! mode-dependent body. Integers are little-endian unless noted. The layout
//! is normative, version 0x01 (see `PROTOCOL.md` at the repository root):
//!
//! ```text
//! offset  size  field
//! 0       4     magic "TFGB"
//! 4       1     version (0x01)
//! 5       1     msg_type
//! 6       1     mode (0x00 non-serialized, 0x01 serialized)
//! 7       1     reserved (0x00)
//! 8       8     request_id (u64 LE)
//! 16      8     body_length (u64 LE)
//! 24      ...   body (exactly body_length bytes)
//! ```
//!
//! Non-serialized bodies are a scatter-gather segment list: a u32 buffer
//! count, then per buffer a u32 length prefix and the raw bytes; payload
//! buffers are referenced, never copied, on the encode path. Serialized
//! bodies emulate protobuf-style encoding: per buffer a 0x0A tag, an
//! unsigned LEB128 length, and the bytes, all copied into one contiguous
//! allocation (the copy is the emulated serialization cost).

use std::io::{self, IoSlice, Read};
use thiserror::Error;

/// Frame magic, ASCII "TFGB".
pub const MAGIC: [u8; 4] = *b"TFGB";
/// Wire protocol version.
pub const VERSION: u8 = 0x01;
/// Fixed header length in bytes, both modes.
pub const HEADER_LEN: usize = 24;
/// Tag byte prefixing every buffer in a serialized body.
pub const SERIALIZED_TAG: u8 = 0x0A;

/// Errors from encoding, decoding, or reading frames.
#[derive(Debug, Error)]
pub enum WireError {
    #[error("bad magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported version 0x{0:02x}")]
    UnsupportedVersion(u8),
    #[error("unknown message type 0x{0:02x}")]
    UnknownMsgType(u8),
    #[error("unknown mode 0x{0:02x}")]
    UnknownMode(u8),
    #[error("reserved header byte must be zero, got 0x{0:02x}")]
    NonZeroReserved(u8),
    #[error("message type {0:?} does not carry a body")]
    BodilessMsgType(MsgType),
    #[error("message type {0:?} must have an empty body, declared {1} bytes")]
    UnexpectedBody(MsgType, u64),
    #[error("length {0} exceeds the 32-bit wire limit")]
    LengthOverflow(u64),
    #[error("buffer count {0} exceeds the 32-bit wire limit")]
    CountOverflow(u64),
    #[error("frame truncated: need {need} more bytes for {context}")]
    Truncated { need: u64, context: &'static str },
    #[error("declared buffer length {declared} exceeds remaining body ({remaining} bytes)")]
    LengthBeyondBody { declared: u64, remaining: u64 },
    #[error("body length mismatch: {trailing} trailing bytes after parsing buffers")]
    TrailingBytes { trailing: u64 },
    #[error("invalid serialized tag 0x{0:02x}")]
    InvalidTag(u8),
    #[error("varint is malformed or exceeds 64 bits")]
    MalformedVarint,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Frame message types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    EchoReq = 0x01,
    EchoResp = 0x02,
    PutReq = 0x03,
    Ack = 0x04,
    GetReq = 0x05,
    GetResp = 0x06,
}

impl MsgType {
    pub fn code(self) -> u8 {
        self as u8
    }

    /// Every type except ACK carries a (possibly zero-buffer) body.
    pub fn carries_body(self) -> bool {
        !matches!(self, MsgType::Ack)
    }

    pub fn from_code(code: u8) -> Result<MsgType, WireError> {
        match code {
            0x01 => Ok(MsgType::EchoReq),
            0x02 => Ok(MsgType::EchoResp),
            0x03 => Ok(MsgType::PutReq),
            0x04 => Ok(MsgType::Ack),
            0x05 => Ok(MsgType::GetReq),
            0x06 => Ok(MsgType::GetResp),
            other => Err(WireError::UnknownMsgType(other)),
        }
    }
}

/// Body encoding mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    NonSerialized,
    Serialized,
}

impl Mode {
    pub fn code(self) -> u8 {
        match self {
            Mode::NonSerialized => 0x00,
            Mode::Serialized => 0x01,
        }
    }

    pub fn from_code(code: u8) -> Result<Mode, WireError> {
        match code {
            0x00 => Ok(Mode::NonSerialized),
            0x01 => Ok(Mode::Serialized),
            other => Err(WireError::UnknownMode(other)),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::NonSerialized => "non-serialized",
            Mode::Serialized => "serialized",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "non-serialized" | "nonserialized" | "non_serialized" => Ok(Mode::NonSerialized),
            "serialized" => Ok(Mode::Serialized),
            other => Err(format!(
                "unknown mode '{other}' (expected non-serialized or serialized)"
            )),
        }
    }
}

/// Parsed frame header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub msg_type: MsgType,
    pub mode: Mode,
    pub request_id: u64,
    pub body_length: u64,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut buf = [0u8; HEADER_LEN];
        buf[0..4].copy_from_slice(&MAGIC);
        buf[4] = VERSION;
        buf[5] = self.msg_type.code();
        buf[6] = self.mode.code();
        buf[7] = 0x00;
        buf[8..16].copy_from_slice(&self.request_id.to_le_bytes());
        buf[16..24].copy_from_slice(&self.body_length.to_le_bytes());
        buf
    }

    pub fn parse(buf: &[u8; HEADER_LEN]) -> Result<FrameHeader, WireError> {
        let magic: [u8; 4] = buf[0..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(WireError::BadMagic(magic));
        }
        if buf[4] != VERSION {
            return Err(WireError::UnsupportedVersion(buf[4]));
        }
        let msg_type = MsgType::from_code(buf[5])?;
        let mode = Mode::from_code(buf[6])?;
        if buf[7] != 0x00 {
            return Err(WireError::NonZeroReserved(buf[7]));
        }
        let request_id = u64::from_le_bytes(buf[8..16].try_into().unwrap());
        let body_length = u64::from_le_bytes(buf[16..24].try_into().unwrap());
        Ok(FrameHeader {
            msg_type,
            mode,
            request_id,
            body_length,
        })
    }
}

/// One segment of a scatter-gather frame: either bytes owned by the encoder
/// (header, length prefixes) or a reference into a payload buffer.
#[derive(Debug)]
pub enum Segment<'a> {
    Owned(Vec<u8>),
    Shared(&'a [u8]),
}

impl Segment<'_> {
    pub fn as_slice(&self) -> &[u8] {
        match self {
            Segment::Owned(v) => v,
            Segment::Shared(s) => s,
        }
    }
}

/// An encoded frame as an ordered segment list whose concatenation is
/// byte-identical to the contiguous encoding. Payload buffers appear as
/// shared references, so vectored writes send them without copying.
#[derive(Debug)]
pub struct SegmentList<'a> {
    segments: Vec<Segment<'a>>,
}

impl<'a> SegmentList<'a> {
    pub fn segments(&self) -> &[Segment<'a>] {
        &self.segments
    }

    /// Total encoded length (header plus body).
    pub fn total_len(&self) -> usize {
        self.segments.iter().map(|s| s.as_slice().len()).sum()
    }

    /// Flatten into one contiguous byte vector.
    pub fn to_contiguous(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.total_len());
        for s in &self.segments {
            out.extend_from_slice(s.as_slice());
        }
        out
    }

    /// Borrow the segments as `IoSlice`s for a vectored write.
    pub fn io_slices(&self) -> Vec<IoSlice<'_>> {
        self.segments
            .iter()
            .map(|s| IoSlice::new(s.as_slice()))
            .collect()
    }
}

fn checked_u32(value: u64, overflow: fn(u64) -> WireError) -> Result<u32, WireError> {
    u32::try_from(value).map_err(|_| overflow(value))
}

/// Encode a frame in non-serialized mode as a scatter-gather segment list.
///
/// The body is a u32 buffer count followed by, per buffer, a u32 length
/// prefix and the raw bytes. Buffer contents are shared, not copied.
pub fn encode_nonserialized<'a, B: AsRef<[u8]>>(
    buffers: &'a [B],
    msg_type: MsgType,
    request_id: u64,
) -> Result<SegmentList<'a>, WireError> {
    if !msg_type.carries_body() {
        return Err(WireError::BodilessMsgType(msg_type));
    }
    let count = checked_u32(buffers.len() as u64, WireError::CountOverflow)?;
    let mut body_length = 4u64;
    for b in buffers {
        let len = b.as_ref().len() as u64;
        checked_u32(len, WireError::LengthOverflow)?;
        body_length += 4 + len;
    }

    let header = FrameHeader {
        msg_type,
        mode: Mode::NonSerialized,
        request_id,
        body_length,
    };
    let mut head = Vec::with_capacity(HEADER_LEN + 4);
    head.extend_from_slice(&header.encode());
    head.extend_from_slice(&count.to_le_bytes());

    let mut segments = Vec::with_capacity(1 + 2 * buffers.len());
    segments.push(Segment::Owned(head));
    for b in buffers {
        let bytes = b.as_ref();
        segments.push(Segment::Owned((bytes.len() as u32).to_le_bytes().to_vec()));
        segments.push(Segment::Shared(bytes));
    }
    Ok(SegmentList { segments })
}

/// Encode a frame in serialized mode as one contiguous allocation.
///
/// The body is, per buffer, a 0x0A tag, an unsigned LEB128 length, and the
/// bytes. Buffer count is implicit: decoders parse to the end of the body.
pub fn encode_serialized<B: AsRef<[u8]>>(
    buffers: &[B],
    msg_type: MsgType,
    request_id: u64,
) -> Result<Vec<u8>, WireError> {
    if !msg_type.carries_body() {
        return Err(WireError::BodilessMsgType(msg_type));
    }
    let mut body_length = 0u64;
    for b in buffers {
        let len = b.as_ref().len() as u64;
        checked_u32(len, WireError::LengthOverflow)?;
        body_length += 1 + uleb128_len(len) as u64 + len;
    }
    let header = FrameHeader {
        msg_type,
        mode: Mode::Serialized,
        request_id,
        body_length,
    };
    let mut out = Vec::with_capacity(HEADER_LEN + body_length as usize);
    out.extend_from_slice(&header.encode());
    for b in buffers {
        let bytes = b.as_ref();
        out.push(SERIALIZED_TAG);
        write_uleb128(&mut out, bytes.len() as u64);
        out.extend_from_slice(bytes);
    }
    Ok(out)
}

/// Encode a bodiless ACK frame acknowledging `request_id`.
pub fn encode_ack(mode: Mode, request_id: u64) -> [u8; HEADER_LEN] {
    FrameHeader {
        msg_type: MsgType::Ack,
        mode,
        request_id,
        body_length: 0,
    }
    .encode()
}

/// A decoded frame: header fields plus the recovered buffer list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFrame {
    pub msg_type: MsgType,
    pub mode: Mode,
    pub request_id: u64,
    pub buffers: Vec<Vec<u8>>,
}

/// Decode one frame from a byte slice. Returns the frame and the number of
/// bytes consumed (header plus declared body); trailing bytes are left
/// untouched.
pub fn decode_frame(bytes: &[u8]) -> Result<(DecodedFrame, usize), WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            need: (HEADER_LEN - bytes.len()) as u64,
            context: "header",
        });
    }
    let header = FrameHeader::parse(bytes[..HEADER_LEN].try_into().unwrap())?;
    let remaining = (bytes.len() - HEADER_LEN) as u64;
    if header.body_length > remaining {
        return Err(WireError::Truncated {
            need: header.body_length - remaining,
            context: "body",
        });
    }
    let body = &bytes[HEADER_LEN..HEADER_LEN + header.body_length as usize];
    let buffers = parse_body(&header, body)?;
    Ok((
        DecodedFrame {
            msg_type: header.msg_type,
            mode: header.mode,
            request_id: header.request_id,
            buffers,
        },
        HEADER_LEN + header.body_length as usize,
    ))
}

/// Read exactly one frame from a reader: the 24-byte header, then exactly
/// `body_length` body bytes. Never reads past the declared frame end.
pub fn read_frame<R: Read>(reader: &mut R) -> Result<DecodedFrame, WireError> {
    let mut head = [0u8; HEADER_LEN];
    reader.read_exact(&mut head)?;
    let header = FrameHeader::parse(&head)?;
    let body = read_body(reader, header.body_length)?;
    let buffers = parse_body(&header, &body)?;
    Ok(DecodedFrame {
        msg_type: header.msg_type,
        mode: header.mode,
        request_id: header.request_id,
        buffers,
    })
}

/// Read the body incrementally so a hostile declared length cannot force a
/// huge up-front allocation.
fn read_body<R: Read>(reader: &mut R, body_length: u64) -> Result<Vec<u8>, WireError> {
    const CHUNK: usize = 64 * 1024;
    let mut body = Vec::with_capacity(body_length.min(CHUNK as u64) as usize);
    let mut remaining = body_length;
    let mut chunk = [0u8; CHUNK];
    while remaining > 0 {
        let want = remaining.min(CHUNK as u64) as usize;
        let n = reader.read(&mut chunk[..want])?;
        if n == 0 {
            return Err(WireError::Truncated {
                need: remaining,
                context: "body",
            });
        }
        body.extend_from_slice(&chunk[..n]);
        remaining -= n as u64;
    }
    Ok(body)
}

fn parse_body(header: &FrameHeader, body: &[u8]) -> Result<Vec<Vec<u8>>, WireError> {
    if !header.msg_type.carries_body() {
        if header.body_length != 0 {
            return Err(WireError::UnexpectedBody(
                header.msg_type,
                header.body_length,
            ));
        }
        return Ok(Vec::new());
    }
    match header.mode {
        Mode::NonSerialized => parse_nonserialized_body(body),
        Mode::Serialized => parse_serialized_body(body),
    }
}

fn parse_nonserialized_body(body: &[u8]) -> Result<Vec<Vec<u8>>, WireError> {
    let mut cursor = Cursor::new(body);
    let count = cursor.read_u32("buffer count")?;
    // Each buffer needs at least its 4-byte prefix, which bounds any sane
    // count; cap the pre-allocation accordingly.
    let mut buffers = Vec::with_capacity((count as usize).min(body.len() / 4));
    for _ in 0..count {
        let len = cursor.read_u32("buffer length")? as u64;
        let bytes = cursor.read_bytes(len)?;
        buffers.push(bytes.to_vec());
    }
    cursor.finish()?;
    Ok(buffers)
}

fn parse_serialized_body(body: &[u8]) -> Result<Vec<Vec<u8>>, WireError> {
    let mut cursor = Cursor::new(body);
    let mut buffers = Vec::new();
    while !cursor.is_empty() {
        let tag = cursor.read_bytes(1)?[0];
        if tag != SERIALIZED_TAG {
            return Err(WireError::InvalidTag(tag));
        }
        let len = cursor.read_uleb128()?;
        checked_u32(len, WireError::LengthOverflow)?;
        buffers.push(cursor.read_bytes(len)?.to_vec());
    }
    Ok(buffers)
}

struct Cursor<'a> {
    body: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn new(body: &'a [u8]) -> Self {
        Cursor { body, pos: 0 }
    }

    fn remaining(&self) -> u64 {
        (self.body.len() - self.pos) as u64
    }

    fn is_empty(&self) -> bool {
        self.pos == self.body.len()
    }

    fn read_bytes(&mut self, len: u64) -> Result<&'a [u8], WireError> {
        if len > self.remaining() {
            return Err(WireError::LengthBeyondBody {
                declared: len,
                remaining: self.remaining(),
            });
        }
        let start = self.pos;
        self.pos += len as usize;
        Ok(&self.body[start..self.pos])
    }

    fn read_u32(&mut self, context: &'static str) -> Result<u32, WireError> {
        if self.remaining() < 4 {
            return Err(WireError::Truncated {
                need: 4 - self.remaining(),
                context,
            });
        }
        let v = u32::from_le_bytes(self.body[self.pos..self.pos + 4].try_into().unwrap());
        self.pos += 4;
        Ok(v)
    }

    fn read_uleb128(&mut self) -> Result<u64, WireError> {
        let mut result: u64 = 0;
        let mut shift = 0u32;
        loop {
            if self.is_empty() {
                return Err(WireError::MalformedVarint);
            }
            let byte = self.body[self.pos];
            self.pos += 1;
            if shift == 63 && byte > 0x01 {
                return Err(WireError::MalformedVarint);
            }
            result |= u64::from(byte & 0x7F) << shift;
            if byte & 0x80 == 0 {
                return Ok(result);
            }
            shift += 7;
            if shift > 63 {
                return Err(WireError::MalformedVarint);
            }
        }
    }

    fn finish(&self) -> Result<(), WireError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(WireError::TrailingBytes {
                trailing: self.remaining(),
            })
        }
    }
}

/// Number of bytes in the unsigned LEB128 encoding of `value`.
pub fn uleb128_len(value: u64) -> usize {
    if value == 0 {
        1
    } else {
        (64 - value.leading_zeros() as usize).div_ceil(7)
    }
}

/// Append the unsigned LEB128 encoding of `value`.
pub fn write_uleb128(out: &mut Vec<u8>, mut value: u64) {
    loop {
        let byte = (value & 0x7F) as u8;
        value >>= 7;
        if value == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workload::{
        generate_skew, materialize, BufferCategory, BufferSizeConfig, CategorySet, SplitMix64,
    };
    use proptest::prelude::*;

    fn bufs(lens: &[usize]) -> Vec<Vec<u8>> {
        lens.iter()
            .enumerate()
            .map(|(i, &len)| vec![i as u8 + 1; len])
            .collect()
    }

    #[test]
    fn header_is_exactly_24_bytes_and_round_trips() {
        let header = FrameHeader {
            msg_type: MsgType::PutReq,
            mode: Mode::Serialized,
            request_id: 0xDEAD_BEEF_0102_0304,
            body_length: 77,
        };
        let encoded = header.encode();
        assert_eq!(encoded.len(), HEADER_LEN);
        assert_eq!(&encoded[0..4], b"TFGB");
        assert_eq!(FrameHeader::parse(&encoded).unwrap(), header);
    }

    #[test]
    fn nonserialized_body_length_arithmetic() {
        let buffers = bufs(&[3, 5]);
        let list = encode_nonserialized(&buffers, MsgType::EchoReq, 1).unwrap();
        // 4 (count) + (4 + 3) + (4 + 5) = 20 body bytes.
        assert_eq!(list.total_len(), HEADER_LEN + 20);
        let (frame, used) = decode_frame(&list.to_contiguous()).unwrap();
        assert_eq!(used, HEADER_LEN + 20);
        assert_eq!(frame.buffers, bufs(&[3, 5]));
    }

    #[test]
    fn nonserialized_default_skew_body_length() {
        let spec = generate_skew(
            CategorySet::ALL,
            10,
            &BufferSizeConfig::default(),
            BufferCategory::Large,
            9,
        )
        .unwrap();
        let payload = materialize(&spec);
        // Arithmetic oracle: count prefix + per-buffer prefixes + content.
        let expected_body = 4 + 10 * 4 + payload.content_bytes();
        assert_eq!(payload.content_bytes(), 6_322_186);
        assert_eq!(expected_body, 6_322_230);
        let list = encode_nonserialized(payload.buffers(), MsgType::EchoReq, 1).unwrap();
        assert_eq!(list.total_len() as u64, HEADER_LEN as u64 + expected_body);
    }

    #[test]
    fn nonserialized_zero_buffers() {
        let empty: Vec<Vec<u8>> = Vec::new();
        let list = encode_nonserialized(&empty, MsgType::GetReq, 3).unwrap();
        assert_eq!(list.total_len(), HEADER_LEN + 4);
        let (frame, _) = decode_frame(&list.to_contiguous()).unwrap();
        assert!(frame.buffers.is_empty());
    }

    #[test]
    fn serialized_body_length_arithmetic() {
        let frame = encode_serialized(&bufs(&[3, 5]), MsgType::EchoReq, 1).unwrap();
        // (1 + 1 + 3) + (1 + 1 + 5) = 12 body bytes.
        assert_eq!(frame.len(), HEADER_LEN + 12);
        let empty: Vec<Vec<u8>> = Vec::new();
        let frame = encode_serialized(&empty, MsgType::GetReq, 1).unwrap();
        assert_eq!(frame.len(), HEADER_LEN);
    }

    #[test]
    fn uleb128_matches_known_vectors() {
        let mut out = Vec::new();
        write_uleb128(&mut out, 300);
        assert_eq!(out, vec![0xAC, 0x02]);
        assert_eq!(uleb128_len(300), 2);
        assert_eq!(uleb128_len(0), 1);
        assert_eq!(uleb128_len(127), 1);
        assert_eq!(uleb128_len(128), 2);
        assert_eq!(uleb128_len(u64::MAX), 10);
    }

    #[test]
    fn serialized_known_body_decodes() {
        // Tag 0x0A, length 3, "abc".
        let mut frame = FrameHeader {
            msg_type: MsgType::EchoResp,
            mode: Mode::Serialized,
            request_id: 5,
            body_length: 5,
        }
        .encode()
        .to_vec();
        frame.extend_from_slice(&[0x0A, 0x03, 0x61, 0x62, 0x63]);
        let (decoded, _) = decode_frame(&frame).unwrap();
        assert_eq!(decoded.buffers, vec![b"abc".to_vec()]);
    }

    #[test]
    fn segment_flattening_matches_and_shares_payload_buffers() {
        let buffers = bufs(&[10, 200, 3000]);
        let list = encode_nonserialized(&buffers, MsgType::PutReq, 9).unwrap();
        let flat = list.to_contiguous();
        // Rebuild the contiguous encoding independently.
        let mut expected = Vec::new();
        let body_len = 4 + buffers.iter().map(|b| 4 + b.len()).sum::<usize>() as u64;
        expected.extend_from_slice(
            &FrameHeader {
                msg_type: MsgType::PutReq,
                mode: Mode::NonSerialized,
                request_id: 9,
                body_length: body_len,
            }
            .encode(),
        );
        expected.extend_from_slice(&(buffers.len() as u32).to_le_bytes());
        for b in &buffers {
            expected.extend_from_slice(&(b.len() as u32).to_le_bytes());
            expected.extend_from_slice(b);
        }
        assert_eq!(flat, expected);
        // Payload segments alias the source buffers (no copy).
        let shared: Vec<&[u8]> = list
            .segments()
            .iter()
            .filter_map(|s| match s {
                Segment::Shared(bytes) => Some(*bytes),
                Segment::Owned(_) => None,
            })
            .collect();
        assert_eq!(shared.len(), buffers.len());
        for (seg, buf) in shared.iter().zip(&buffers) {
            assert_eq!(seg.as_ptr(), buf.as_ptr());
        }
    }

    #[test]
    fn cross_mode_content_equality() {
        let buffers = bufs(&[1, 9, 1024]);
        let ns = encode_nonserialized(&buffers, MsgType::EchoReq, 2)
            .unwrap()
            .to_contiguous();
        let s = encode_serialized(&buffers, MsgType::EchoReq, 2).unwrap();
        let (a, _) = decode_frame(&ns).unwrap();
        let (b, _) = decode_frame(&s).unwrap();
        assert_eq!(a.buffers, b.buffers);
        assert_eq!(a.mode, Mode::NonSerialized);
        assert_eq!(b.mode, Mode::Serialized);
    }

    #[test]
    fn ack_frames_are_header_only() {
        let ack = encode_ack(Mode::NonSerialized, 17);
        let (frame, used) = decode_frame(&ack).unwrap();
        assert_eq!(used, HEADER_LEN);
        assert_eq!(frame.msg_type, MsgType::Ack);
        assert_eq!(frame.request_id, 17);
        assert!(frame.buffers.is_empty());
        // An ACK declaring a body is rejected.
        let mut bad = FrameHeader {
            msg_type: MsgType::Ack,
            mode: Mode::NonSerialized,
            request_id: 1,
            body_length: 4,
        }
        .encode()
        .to_vec();
        bad.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            decode_frame(&bad),
            Err(WireError::UnexpectedBody(MsgType::Ack, 4))
        ));
        assert!(matches!(
            encode_nonserialized(&bufs(&[1]), MsgType::Ack, 1),
            Err(WireError::BodilessMsgType(MsgType::Ack))
        ));
    }

    #[test]
    fn header_validation_errors() {
        let good = encode_nonserialized(&bufs(&[2]), MsgType::EchoReq, 1)
            .unwrap()
            .to_contiguous();

        let mut bad = good.clone();
        bad[0..4].copy_from_slice(b"XXXX");
        assert!(matches!(decode_frame(&bad), Err(WireError::BadMagic(_))));

        let mut bad = good.clone();
        bad[4] = 0x02;
        assert!(matches!(
            decode_frame(&bad),
            Err(WireError::UnsupportedVersion(0x02))
        ));

        let mut bad = good.clone();
        bad[5] = 0x07;
        assert!(matches!(
            decode_frame(&bad),
            Err(WireError::UnknownMsgType(0x07))
        ));

        let mut bad = good.clone();
        bad[6] = 0x09;
        assert!(matches!(
            decode_frame(&bad),
            Err(WireError::UnknownMode(0x09))
        ));

        let mut bad = good.clone();
        bad[7] = 0x01;
        assert!(matches!(
            decode_frame(&bad),
            Err(WireError::NonZeroReserved(0x01))
        ));
    }

    #[test]
    fn body_parse_errors() {
        // Declared buffer length beyond the body.
        let mut frame = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::NonSerialized,
            request_id: 1,
            body_length: 8,
        }
        .encode()
        .to_vec();
        frame.extend_from_slice(&1u32.to_le_bytes());
        frame.extend_from_slice(&100u32.to_le_bytes());
        assert!(matches!(
            decode_frame(&frame),
            Err(WireError::LengthBeyondBody { declared: 100, .. })
        ));

        // Trailing bytes after the declared buffers.
        let mut frame = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::NonSerialized,
            request_id: 1,
            body_length: 6,
        }
        .encode()
        .to_vec();
        frame.extend_from_slice(&0u32.to_le_bytes());
        frame.extend_from_slice(&[0xAA, 0xBB]);
        assert!(matches!(
            decode_frame(&frame),
            Err(WireError::TrailingBytes { trailing: 2 })
        ));

        // Truncated body relative to the header's declaration.
        let frame = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::NonSerialized,
            request_id: 1,
            body_length: 50,
        }
        .encode()
        .to_vec();
        assert!(matches!(
            decode_frame(&frame),
            Err(WireError::Truncated { need: 50, .. })
        ));

        // Serialized: wrong tag.
        let mut frame = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::Serialized,
            request_id: 1,
            body_length: 3,
        }
        .encode()
        .to_vec();
        frame.extend_from_slice(&[0x0B, 0x01, 0x61]);
        assert!(matches!(
            decode_frame(&frame),
            Err(WireError::InvalidTag(0x0B))
        ));

        // Serialized: unterminated varint.
        let mut frame = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::Serialized,
            request_id: 1,
            body_length: 3,
        }
        .encode()
        .to_vec();
        frame.extend_from_slice(&[0x0A, 0x80, 0x80]);
        assert!(matches!(
            decode_frame(&frame),
            Err(WireError::MalformedVarint)
        ));
    }

    #[test]
    fn read_frame_consumes_exactly_one_frame() {
        let first = encode_serialized(&bufs(&[4]), MsgType::EchoReq, 1).unwrap();
        let second = encode_nonserialized(&bufs(&[2, 2]), MsgType::PutReq, 2)
            .unwrap()
            .to_contiguous();
        let mut stream = first.clone();
        stream.extend_from_slice(&second);
        let mut cursor = std::io::Cursor::new(stream);
        let a = read_frame(&mut cursor).unwrap();
        assert_eq!(cursor.position() as usize, first.len());
        assert_eq!(a.request_id, 1);
        let b = read_frame(&mut cursor).unwrap();
        assert_eq!(b.request_id, 2);
        assert_eq!(b.buffers, bufs(&[2, 2]));
    }

    #[test]
    fn read_frame_rejects_short_streams() {
        let frame = encode_serialized(&bufs(&[100]), MsgType::EchoReq, 1).unwrap();
        let mut cursor = std::io::Cursor::new(&frame[..frame.len() - 10]);
        assert!(read_frame(&mut cursor).is_err());
    }

    #[test]
    fn hostile_body_length_does_not_allocate_up_front() {
        // Header declares an enormous body; the stream has 10 bytes. The
        // reader must fail with a truncation error, not abort on allocation.
        let header = FrameHeader {
            msg_type: MsgType::EchoReq,
            mode: Mode::NonSerialized,
            request_id: 1,
            body_length: u64::MAX / 2,
        };
        let mut stream = header.encode().to_vec();
        stream.extend_from_slice(&[0u8; 10]);
        let mut cursor = std::io::Cursor::new(stream);
        assert!(matches!(
            read_frame(&mut cursor),
            Err(WireError::Truncated { .. })
        ));
    }

    #[test]
    fn decode_never_panics_on_mutated_frames() {
        // Deterministic smoke fuzz; the acceptance suite scales this up.
        let mut rng = SplitMix64::new(0xF0F0);
        let base = encode_nonserialized(&bufs(&[5, 7, 9]), MsgType::EchoReq, 3)
            .unwrap()
            .to_contiguous();
        let base_s = encode_serialized(&bufs(&[5, 7, 9]), MsgType::EchoReq, 3).unwrap();
        for i in 0..5_000 {
            let mut frame = if i % 2 == 0 {
                base.clone()
            } else {
                base_s.clone()
            };
            let flips = 1 + (rng.next_u64() % 4) as usize;
            for _ in 0..flips {
                let pos = (rng.next_u64() % frame.len() as u64) as usize;
                frame[pos] ^= (rng.next_u64() & 0xFF) as u8;
            }
            let truncate_to = (rng.next_u64() % (frame.len() as u64 + 1)) as usize;
            let _ = decode_frame(&frame);
            let _ = decode_frame(&frame[..truncate_to]);
        }
    }

    fn buffer_list_strategy() -> impl Strategy<Value = Vec<Vec<u8>>> {
        proptest::collection::vec(proptest::collection::vec(any::<u8>(), 0..200), 0..10)
    }

    proptest! {
        #[test]
        fn round_trip_both_modes(
            buffers in buffer_list_strategy(),
            request_id in any::<u64>(),
        ) {
            let ns = encode_nonserialized(&buffers, MsgType::EchoReq, request_id).unwrap();
            let (decoded, used) = decode_frame(&ns.to_contiguous()).unwrap();
            prop_assert_eq!(used, ns.total_len());
            prop_assert_eq!(&decoded.buffers, &buffers);
            prop_assert_eq!(decoded.request_id, request_id);

            let s = encode_serialized(&buffers, MsgType::EchoReq, request_id).unwrap();
            let (decoded, used) = decode_frame(&s).unwrap();
            prop_assert_eq!(used, s.len());
            prop_assert_eq!(&decoded.buffers, &buffers);
        }

        #[test]
        fn decode_handles_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            // Must never panic; errors are fine.
            let _ = decode_frame(&bytes);
            let mut cursor = std::io::Cursor::new(&bytes);
            let _ = read_frame(&mut cursor);
        }

        #[test]
        fn uleb128_round_trips(value in any::<u64>()) {
            let mut out = Vec::new();
            write_uleb128(&mut out, value);
            prop_assert_eq!(out.len(), uleb128_len(value));
            let mut cursor = Cursor::new(&out);
            prop_assert_eq!(cursor.read_uleb128().unwrap(), value);
            prop_assert!(cursor.is_empty());
        }
    }
}
