//! Binary netpbm rasters: 8-bit grayscale PGM (`P5`) and 24-bit PPM (`P6`).

use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// An 8-bit raster with `channels` interleaved samples per pixel (1 or 3).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::invalid("raster", format!("{channels} channels unsupported")));
        }
        if data.len() != width * height * channels {
            return Err(Error::invalid("raster", format!("{} bytes for {width}×{height}×{channels}", data.len())));
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn gray(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        Self::new(width, height, 1, data)
    }

    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let data = (0..height).flat_map(|y| (0..width).map(move |x| (y, x))).map(|(y, x)| f(y, x)).collect();
        Self { width, height, channels: 1, data }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Sample at row `y`, column `x` and channel `ch`.
    pub fn at(&self, y: usize, x: usize, ch: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + ch]
    }

    /// Left-right mirror image.
    pub fn mirrored(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let i = (y * self.width + x) * self.channels;
                data.extend_from_slice(&self.data[i..i + self.channels]);
            }
        }
        Self { data, ..*self }
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parses a `P5` or `P6` file with maxval ≤ 255; sample values are kept verbatim.
    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut pos = 0;
        let magic = token(bytes, &mut pos)?;
        let channels = match magic.as_str() {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::Parse(format!("unsupported netpbm magic `{m}`"))),
        };
        let width = number(bytes, &mut pos)?;
        let height = number(bytes, &mut pos)?;
        let maxval = number(bytes, &mut pos)?;
        if maxval == 0 || maxval > 255 {
            return Err(Error::Parse(format!("maxval {maxval} unsupported (8-bit only)")));
        }
        // Exactly one whitespace byte separates the header from the raster.
        if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
            return Err(Error::Parse("missing whitespace after header".into()));
        }
        pos += 1;
        let len = width * height * channels;
        let data = bytes.get(pos..pos + len).ok_or_else(|| Error::Parse(format!("raster truncated: expected {len} bytes")))?;
        Raster::new(width, height, channels, data.to_vec())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    /// `H × W × channels` tensor with values scaled to `[0, 1]`.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.data.iter().map(|&v| T::of(f64::from(v) / 255.0)).collect();
        Tensor::new(vec![self.height, self.width, self.channels], data).expect("consistent raster")
    }

    /// Raster from an `H × W` or `H × W × C` tensor in `[0, 1]`, rounded and clamped.
    pub fn from_unit_tensor<T: Scalar>(t: &Tensor<T>) -> Result<Self> {
        let (h, w, c) = match t.shape() {
            &[h, w] => (h, w, 1),
            &[h, w, c] => (h, w, c),
            s => return Err(Error::invalid("raster from tensor", format!("expected H×W or H×W×C, got {s:?}"))),
        };
        let data = t.data().iter().map(|v| (v.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8).collect();
        Raster::new(w, h, c, data)
    }

    /// Binary `H × W` mask: 1 where the (single-channel) sample is nonzero.
    pub fn nonzero_mask<T: Scalar>(&self) -> Result<Tensor<T>> {
        self.require_gray("mask")?;
        let data = self.data.iter().map(|&v| if v != 0 { T::one() } else { T::zero() }).collect();
        Tensor::new(vec![self.height, self.width], data)
    }

    pub fn require_gray(&self, what: &'static str) -> Result<()> {
        if self.channels != 1 {
            return Err(Error::invalid(what, "expected a grayscale raster"));
        }
        Ok(())
    }
}

fn skip_space_and_comments(bytes: &[u8], pos: &mut usize) {
    while let Some(&b) = bytes.get(*pos) {
        if b == b'#' {
            while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                *pos += 1;
            }
        } else if b.is_ascii_whitespace() {
            *pos += 1;
        } else {
            break;
        }
    }
}

fn token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    skip_space_and_comments(bytes, pos);
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Parse("unexpected end of netpbm header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn number(bytes: &[u8], pos: &mut usize) -> Result<usize> {
    let t = token(bytes, pos)?;
    t.parse().map_err(|_| Error::Parse(format!("bad header number `{t}`")))
}

/// Instance masks from an index raster (value k marks instance k, 0 is background).
///
/// Ids must be contiguous from 1 and every instance nonempty.
pub fn instances_from_index<T: Scalar>(index: &Raster) -> Result<Vec<Tensor<T>>> {
    index.require_gray("instance index")?;
    let max = index.data.iter().copied().max().unwrap_or(0) as usize;
    let mut counts = vec![0usize; max + 1];
    for &v in &index.data {
        counts[v as usize] += 1;
    }
    if let Some(k) = (1..=max).find(|&k| counts[k] == 0) {
        return Err(Error::invalid("instance index", format!("instance id {k} is empty (ids must be contiguous from 1)")));
    }
    Ok((1..=max)
        .map(|k| {
            let data = index.data.iter().map(|&v| if v as usize == k { T::one() } else { T::zero() }).collect();
            Tensor::new(vec![index.height, index.width], data).expect("consistent raster")
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let g = Raster::from_fn_gray(5, 3, |y, x| (y * 50 + x * 7) as u8);
        assert_eq!(Raster::decode(&g.encode()).unwrap(), g);
        let c = Raster::new(2, 2, 3, (0..12).map(|v| v * 20).collect()).unwrap();
        assert_eq!(Raster::decode(&c.encode()).unwrap(), c);
        // A raster byte equal to a whitespace or '#' code must survive.
        let tricky = Raster::gray(3, 1, vec![b'\n', b'#', b' ']).unwrap();
        assert_eq!(Raster::decode(&tricky.encode()).unwrap(), tricky);
    }

    #[test]
    fn header_comments_and_errors() {
        let mut bytes = b"P5 # comment\n2 # more\n1\n255\n".to_vec();
        bytes.extend([7, 9]);
        assert_eq!(Raster::decode(&bytes).unwrap().data, vec![7, 9]);
        assert!(Raster::decode(b"P2\n1 1\n255\n0").is_err());
        assert!(Raster::decode(b"P5\n2 2\n255\n\x01").is_err());
        assert!(Raster::decode(b"P5\n1 1\n65535\n\x00\x00").is_err());
        assert!(Raster::decode(b"P5\n1").is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.pgm");
        let g = Raster::from_fn_gray(4, 4, |y, x| (y ^ x) as u8 * 60);
        g.write(&p).unwrap();
        assert_eq!(Raster::read(&p).unwrap(), g);
        assert!(matches!(Raster::read(dir.path().join("missing.pgm")), Err(Error::Io { .. })));
    }

    #[test]
    fn tensor_conversions() {
        let g = Raster::gray(2, 1, vec![0, 255]).unwrap();
        let t = g.to_tensor::<f64>();
        assert_eq!(t.shape(), &[1, 2, 1]);
        assert_eq!(t.data(), &[0.0, 1.0]);
        assert_eq!(Raster::from_unit_tensor(&t).unwrap(), g);
        let m = Tensor::new(vec![1, 3], vec![-0.5, 0.5, 2.0]).unwrap();
        assert_eq!(Raster::from_unit_tensor(&m).unwrap().data, vec![0, 128, 255]);
        let rgb = Raster::new(1, 2, 3, vec![1, 2, 3, 4, 5, 6]).unwrap();
        assert_eq!(Raster::from_unit_tensor(&rgb.to_tensor::<f32>()).unwrap(), rgb);
        assert!(Raster::from_unit_tensor(&Tensor::<f64>::zeros(&[1, 1, 2])).is_err());
    }

    #[test]
    fn index_raster() {
        let idx = Raster::gray(4, 1, vec![0, 1, 2, 2]).unwrap();
        let inst = instances_from_index::<f64>(&idx).unwrap();
        assert_eq!(inst.len(), 2);
        assert_eq!(inst[1].data(), &[0.0, 0.0, 1.0, 1.0]);
        assert!(instances_from_index::<f64>(&Raster::gray(2, 1, vec![0, 2]).unwrap()).is_err());
        assert!(instances_from_index::<f64>(&Raster::gray(2, 1, vec![0, 0]).unwrap()).unwrap().is_empty());
    }

    #[test]
    fn mirror() {
        let g = Raster::gray(3, 1, vec![1, 2, 3]).unwrap();
        assert_eq!(g.mirrored().data, vec![3, 2, 1]);
    }
}
