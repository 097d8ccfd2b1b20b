//! Protocol Buffers wire-format primitives.
//!
//! Only what the ONNX metadata decoder needs: varints and a zero-copy field
//! reader. Length-delimited payloads are handed out as borrowed slices, so a
//! skipped field never costs more than advancing an offset.

use thiserror::Error;

/// A varint occupies at most ten bytes on the wire.
pub const MAX_VARINT_LEN: usize = 10;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("input truncated at byte {offset}")]
    Truncated { offset: usize },
    #[error("varint starting at byte {offset} exceeds 10 bytes or 64 bits")]
    OverlongVarint { offset: usize },
    #[error("invalid wire type {wire_type} at byte {offset}")]
    InvalidWireType { wire_type: u8, offset: usize },
    #[error("group wire type for field {field} at byte {offset} is not supported")]
    Group { field: u32, offset: usize },
    #[error("invalid field number {field} at byte {offset}")]
    InvalidFieldNumber { field: u64, offset: usize },
    #[error("length-delimited field at byte {offset} claims {len} bytes, {available} remain")]
    LengthOutOfBounds {
        offset: usize,
        len: u64,
        available: usize,
    },
}

/// Decodes one base-128 varint starting at `offset`.
///
/// Returns the value and the offset just past the last consumed byte.
pub fn decode_varint(buf: &[u8], offset: usize) -> Result<(u64, usize), WireError> {
    let mut value: u64 = 0;
    for i in 0..MAX_VARINT_LEN {
        let pos = offset + i;
        let byte = *buf.get(pos).ok_or(WireError::Truncated { offset: pos })?;
        let bits = u64::from(byte & 0x7f);
        // The tenth byte can only carry the top bit of a u64.
        if i == MAX_VARINT_LEN - 1 && (byte & 0x80 != 0 || bits > 1) {
            return Err(WireError::OverlongVarint { offset });
        }
        value |= bits << (7 * i);
        if byte & 0x80 == 0 {
            return Ok((value, pos + 1));
        }
    }
    unreachable!("loop returns on the tenth byte")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WireType {
    Varint = 0,
    Fixed64 = 1,
    LengthDelimited = 2,
    StartGroup = 3,
    EndGroup = 4,
    Fixed32 = 5,
}

impl WireType {
    pub fn from_bits(bits: u8) -> Option<Self> {
        Some(match bits {
            0 => WireType::Varint,
            1 => WireType::Fixed64,
            2 => WireType::LengthDelimited,
            3 => WireType::StartGroup,
            4 => WireType::EndGroup,
            5 => WireType::Fixed32,
            _ => return None,
        })
    }
}

/// The payload of one decoded field.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FieldValue<'a> {
    Varint(u64),
    Fixed64(u64),
    Bytes(&'a [u8]),
    Fixed32(u32),
}

impl FieldValue<'_> {
    pub fn wire_type(&self) -> WireType {
        match self {
            FieldValue::Varint(_) => WireType::Varint,
            FieldValue::Fixed64(_) => WireType::Fixed64,
            FieldValue::Bytes(_) => WireType::LengthDelimited,
            FieldValue::Fixed32(_) => WireType::Fixed32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Field<'a> {
    pub number: u32,
    pub value: FieldValue<'a>,
    /// Absolute offset of the field key within the outermost buffer.
    pub offset: usize,
}

/// Iterates the fields of one message body.
///
/// `base` is the absolute position of `buf[0]` in the enclosing file and is
/// only used to make error offsets meaningful.
#[derive(Debug, Clone)]
pub struct FieldReader<'a> {
    buf: &'a [u8],
    pos: usize,
    base: usize,
    failed: bool,
}

impl<'a> FieldReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self::with_base(buf, 0)
    }

    pub fn with_base(buf: &'a [u8], base: usize) -> Self {
        FieldReader {
            buf,
            pos: 0,
            base,
            failed: false,
        }
    }

    fn read_field(&mut self) -> Result<Field<'a>, WireError> {
        let key_at = self.pos;
        let abs = |p: usize| self.base + p;
        let (key, next) = decode_varint(self.buf, self.pos).map_err(|e| rebase(e, self.base))?;
        let number = key >> 3;
        let bits = (key & 0x7) as u8;
        if number == 0 || number > u64::from(u32::MAX >> 3) {
            return Err(WireError::InvalidFieldNumber {
                field: number,
                offset: abs(key_at),
            });
        }
        let number = number as u32;
        let wire_type = WireType::from_bits(bits).ok_or(WireError::InvalidWireType {
            wire_type: bits,
            offset: abs(key_at),
        })?;
        let (value, end) = match wire_type {
            WireType::Varint => {
                let (v, end) = decode_varint(self.buf, next).map_err(|e| rebase(e, self.base))?;
                (FieldValue::Varint(v), end)
            }
            WireType::Fixed64 => {
                let bytes = self.fixed(next, 8)?;
                let mut raw = [0u8; 8];
                raw.copy_from_slice(bytes);
                (FieldValue::Fixed64(u64::from_le_bytes(raw)), next + 8)
            }
            WireType::Fixed32 => {
                let bytes = self.fixed(next, 4)?;
                let mut raw = [0u8; 4];
                raw.copy_from_slice(bytes);
                (FieldValue::Fixed32(u32::from_le_bytes(raw)), next + 4)
            }
            WireType::LengthDelimited => {
                let (len, start) =
                    decode_varint(self.buf, next).map_err(|e| rebase(e, self.base))?;
                let available = self.buf.len() - start;
                if len > available as u64 {
                    return Err(WireError::LengthOutOfBounds {
                        offset: abs(key_at),
                        len,
                        available,
                    });
                }
                let len = len as usize;
                (
                    FieldValue::Bytes(&self.buf[start..start + len]),
                    start + len,
                )
            }
            WireType::StartGroup | WireType::EndGroup => {
                return Err(WireError::Group {
                    field: number,
                    offset: abs(key_at),
                })
            }
        };
        self.pos = end;
        Ok(Field {
            number,
            value,
            offset: abs(key_at),
        })
    }

    fn fixed(&self, start: usize, len: usize) -> Result<&'a [u8], WireError> {
        self.buf
            .get(start..start + len)
            .ok_or(WireError::Truncated {
                offset: self.base + self.buf.len(),
            })
    }
}

pub(crate) fn rebase(err: WireError, base: usize) -> WireError {
    match err {
        WireError::Truncated { offset } => WireError::Truncated {
            offset: offset + base,
        },
        WireError::OverlongVarint { offset } => WireError::OverlongVarint {
            offset: offset + base,
        },
        other => other,
    }
}

impl<'a> Iterator for FieldReader<'a> {
    type Item = Result<Field<'a>, WireError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed || self.pos >= self.buf.len() {
            return None;
        }
        let res = self.read_field();
        self.failed = res.is_err();
        Some(res)
    }
}

/// Offset of `inner` relative to the start of `outer`. `inner` must be a
/// sub-slice of `outer`.
pub(crate) fn sub_offset(outer: &[u8], inner: &[u8]) -> usize {
    inner.as_ptr() as usize - outer.as_ptr() as usize
}
