use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Small RGB raster, the unit of feature extraction.
///
/// Pixel data is row-major, three `u8` samples per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

pub const CHANNELS: usize = 3;

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Image("zero-sized image".into()));
        }
        if data.len() != width * height * CHANNELS {
            return Err(Error::Image(format!(
                "data length {} does not match {}x{}x{}",
                data.len(),
                width,
                height,
                CHANNELS
            )));
        }
        Ok(Image {
            width,
            height,
            data,
        })
    }

    /// Solid-color image, mostly useful in tests and synthetic corpora.
    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * CHANNELS);
        for _ in 0..width * height {
            data.extend_from_slice(&rgb);
        }
        Image {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let off = (y * self.width + x) * CHANNELS;
        [self.data[off], self.data[off + 1], self.data[off + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let off = (y * self.width + x) * CHANNELS;
        self.data[off..off + 3].copy_from_slice(&rgb);
    }

    /// Parses a binary PPM (P6) with maxval 255.
    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self> {
        let mut p = PpmParser { bytes, pos: 0 };
        let magic = p.token()?;
        if magic != b"P6" {
            return Err(Error::Image(format!(
                "not a P6 PPM (magic {:?})",
                String::from_utf8_lossy(magic)
            )));
        }
        let width = p.number()?;
        let height = p.number()?;
        let maxval = p.number()?;
        if maxval != 255 {
            return Err(Error::Image(format!("unsupported maxval {maxval}")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        p.pos += 1;
        let need = width * height * CHANNELS;
        let rest = &p.bytes[p.pos.min(p.bytes.len())..];
        if rest.len() < need {
            return Err(Error::Image(format!(
                "truncated raster: need {need} bytes, have {}",
                rest.len()
            )));
        }
        Image::new(width, height, rest[..need].to_vec())
    }

    pub fn read_ppm(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_ppm_bytes(&bytes)
            .map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    /// Canonical P6 encoding: `P6\n{w} {h}\n255\n` followed by the raster.
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_ppm_bytes()).map_err(|e| Error::io(path, e))
    }
}

struct PpmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PpmParser<'a> {
    fn skip_ws_and_comments(&mut self) -> Result<()> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return Ok(());
            }
        }
    }

    fn token(&mut self) -> Result<&'a [u8]> {
        self.skip_ws_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Image("unexpected end of PPM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Image("bad number in PPM header".into()))
    }
}
