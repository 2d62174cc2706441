//! Column-major run-length masks and the COCO compressed string codec.
//!
//! Runs alternate zeros/ones starting with zeros and scan down each column
//! before moving right. The string form packs each count into 6-bit chunks
//! (5 payload bits, bit 5 = continuation), offset by 48 into printable ASCII.
//! Counts after index 2 are stored as differences against `counts[i - 2]`.
//! The output is byte-identical to the `maskApi.c` encoder used by COCO tools.

use thiserror::Error;

use crate::mask::{BinaryMask, MaskError};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RleError {
    #[error("run counts sum to {got}, expected {expected} ({height}x{width})")]
    SumMismatch {
        got: u64,
        expected: u64,
        height: u32,
        width: u32,
    },
    #[error("zero-length run at interior index {0}")]
    InteriorZero(usize),
    #[error("byte {byte:#04x} at offset {offset} is not a valid RLE character")]
    InvalidChar { offset: usize, byte: u8 },
    #[error("count starting at offset {offset} is truncated")]
    Truncated { offset: usize },
    #[error("count starting at offset {offset} decodes to negative value {value}")]
    NegativeCount { offset: usize, value: i64 },
    #[error("count starting at offset {offset} overflows")]
    Overflow { offset: usize },
    #[error(transparent)]
    Mask(#[from] MaskError),
}

/// Column-major run-length representation of a binary mask.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RleMask {
    height: u32,
    width: u32,
    counts: Vec<u32>,
}

impl RleMask {
    /// Validates that counts cover exactly `height*width` pixels and that only
    /// the leading run may be empty.
    pub fn new(height: u32, width: u32, counts: Vec<u32>) -> Result<Self, RleError> {
        let expected = u64::from(height) * u64::from(width);
        let got: u64 = counts.iter().map(|&c| u64::from(c)).sum();
        if got != expected {
            return Err(RleError::SumMismatch {
                got,
                expected,
                height,
                width,
            });
        }
        if let Some(i) = counts.iter().skip(1).position(|&c| c == 0) {
            return Err(RleError::InteriorZero(i + 1));
        }
        Ok(Self {
            height,
            width,
            counts,
        })
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Foreground pixel count: the sum of odd-indexed runs.
    pub fn area(&self) -> u64 {
        self.counts.iter().skip(1).step_by(2).map(|&c| u64::from(c)).sum()
    }

    pub fn encode(mask: &BinaryMask) -> Self {
        let (w, h) = mask.dims();
        let mut counts = Vec::new();
        let mut current = false;
        let mut run = 0u32;
        for x in 0..w {
            for y in 0..h {
                let v = mask.get(x, y);
                if v != current {
                    counts.push(run);
                    run = 0;
                    current = v;
                }
                run += 1;
            }
        }
        counts.push(run);
        Self {
            height: h,
            width: w,
            counts,
        }
    }

    pub fn decode(&self) -> Result<BinaryMask, RleError> {
        let mut mask = BinaryMask::new(self.width, self.height)?;
        let h = self.height as usize;
        let mut pos = 0usize;
        for (i, &c) in self.counts.iter().enumerate() {
            let c = c as usize;
            if i % 2 == 1 {
                for p in pos..pos + c {
                    mask.set((p / h) as u32, (p % h) as u32, true);
                }
            }
            pos += c;
        }
        Ok(mask)
    }

    /// COCO compressed string form.
    pub fn to_compressed(&self) -> String {
        let mut s = String::with_capacity(self.counts.len() * 2);
        for (i, &c) in self.counts.iter().enumerate() {
            let mut x = i64::from(c);
            if i > 2 {
                x -= i64::from(self.counts[i - 2]);
            }
            loop {
                let mut chunk = (x & 0x1f) as u8;
                x >>= 5;
                let more = if chunk & 0x10 != 0 { x != -1 } else { x != 0 };
                if more {
                    chunk |= 0x20;
                }
                s.push(char::from(chunk + 48));
                if !more {
                    break;
                }
            }
        }
        s
    }

    /// Parses a COCO compressed string for a `height`×`width` mask.
    pub fn from_compressed(s: &[u8], height: u32, width: u32) -> Result<Self, RleError> {
        let mut counts: Vec<u32> = Vec::new();
        let mut p = 0usize;
        while p < s.len() {
            let start = p;
            let mut x: i64 = 0;
            let mut k = 0u32;
            loop {
                let Some(&byte) = s.get(p) else {
                    return Err(RleError::Truncated { offset: start });
                };
                if !(48..48 + 64).contains(&byte) {
                    return Err(RleError::InvalidChar { offset: p, byte });
                }
                if k >= 12 {
                    return Err(RleError::Overflow { offset: start });
                }
                let chunk = i64::from(byte - 48);
                x |= (chunk & 0x1f) << (5 * k);
                p += 1;
                k += 1;
                if chunk & 0x20 == 0 {
                    if chunk & 0x10 != 0 {
                        x |= -1i64 << (5 * k);
                    }
                    break;
                }
            }
            let m = counts.len();
            if m > 2 {
                x += i64::from(counts[m - 2]);
            }
            if x < 0 {
                return Err(RleError::NegativeCount { offset: start, value: x });
            }
            let value = u32::try_from(x).map_err(|_| RleError::Overflow { offset: start })?;
            counts.push(value);
        }
        Self::new(height, width, counts)
    }
}
