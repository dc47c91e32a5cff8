//! Little-endian f32 containers with a 16-byte header:
//! 4-byte magic, `u32` width, `u32` height, `u32` channels, followed by
//! `width * height * channels` f32 values, pixel-major and channel-minor.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Density feature maps.
pub const FEATURE_MAGIC: [u8; 4] = *b"EDHF";
/// Equi-depth boundary sets (`q + 1` channels).
pub const BOUNDS_MAGIC: [u8; 4] = *b"EDHB";
/// Equi-width histograms (`bin_count` channels).
pub const HIST_MAGIC: [u8; 4] = *b"EDHW";

pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub magic: [u8; 4],
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(
        magic: [u8; 4],
        width: usize,
        height: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Tensor {
            magic,
            width,
            height,
            channels,
            data,
        })
    }

    /// Values of pixel `index`.
    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(&self.magic);
        for dim in [self.width, self.height, self.channels] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], expected_magic: [u8; 4]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::parse("offset 0", "truncated header"));
        }
        if bytes[..4] != expected_magic {
            return Err(Error::parse(
                "offset 0",
                format!(
                    "bad magic, expected {}",
                    String::from_utf8_lossy(&expected_magic)
                ),
            ));
        }
        let dim = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (dim(4), dim(8), dim(12));
        let payload = &bytes[HEADER_LEN..];
        let n = width * height * channels;
        if payload.len() != 4 * n {
            return Err(Error::parse(
                format!("offset {HEADER_LEN}"),
                format!("expected {} payload bytes, found {}", 4 * n, payload.len()),
            ));
        }
        Tensor::new(expected_magic, width, height, channels, decode_f32(payload))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path, expected_magic: [u8; 4]) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::FileNotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        Tensor::from_bytes(&bytes, expected_magic)
    }
}

pub(crate) fn decode_f32(payload: &[u8]) -> Vec<f32> {
    payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect()
}
