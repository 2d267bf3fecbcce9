use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Square grayscale image with power-of-two side, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pixels: Tensor,
}

impl Image {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if side == 0 || !side.is_power_of_two() {
            return Err(Error::invalid(format!(
                "image side {side} is not a power of two"
            )));
        }
        Ok(Image {
            pixels: Tensor::new(vec![side, side], data)?,
        })
    }

    pub fn from_tensor(t: Tensor) -> Result<Self> {
        let s = t.shape().to_vec();
        if s.len() != 2 || s[0] != s[1] {
            return Err(Error::InvalidShape {
                shape: s,
                reason: "image must be square".into(),
            });
        }
        Image::new(s[0], t.into_data())
    }

    pub fn filled(side: usize, value: f64) -> Result<Self> {
        Image::new(side, vec![value; side * side])
    }

    pub fn side(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn data(&self) -> &[f64] {
        self.pixels.data()
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        self.pixels.data_mut()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.pixels
    }

    pub fn into_tensor(self) -> Tensor {
        self.pixels
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        self.pixels.data()[row * self.side() + col]
    }

    pub fn clamped(mut self) -> Self {
        for v in self.pixels.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn mean(&self) -> f64 {
        self.pixels.sum() / self.pixels.len() as f64
    }

    /// Binary PGM (`P5`, maxval 255), pixels rounded from `[0, 1]`.
    pub fn write_pgm(&self, out: &mut impl Write) -> Result<()> {
        let s = self.side();
        write!(out, "P5\n{s} {s}\n255\n")?;
        let bytes: Vec<u8> = self
            .data()
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        out.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read_pgm(input: &mut impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        input.read_to_end(&mut bytes)?;
        let mut pos = 0;
        let mut fields = Vec::new();
        while fields.len() < 4 {
            while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
                if bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::invalid("truncated PGM header"));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "P5" {
            return Err(Error::invalid(format!(
                "unsupported PGM magic {}",
                fields[0]
            )));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::invalid(format!("bad PGM header field `{s}`")))
        };
        let (w, h, max) = (parse(&fields[1])?, parse(&fields[2])?, parse(&fields[3])?);
        if w != h || max != 255 {
            return Err(Error::invalid("only square 8-bit PGM images are supported"));
        }
        let body = bytes
            .get(pos..pos + w * h)
            .ok_or_else(|| Error::invalid("truncated PGM pixel data"))?;
        Image::new(w, body.iter().map(|&b| b as f64 / 255.0).collect())
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let mut f = std::fs::File::open(path)?;
        Image::read_pgm(&mut f)
    }
}
