//! Binary masks and depth maps with their on-disk formats
//! (binary PGM `P5` for masks, `DPTH` little-endian float32 raw for depth).

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

/// Row-major `height × width` binary image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![false; width * height],
        }
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        let mut m = Self::new(width, height);
        for r in 0..height {
            for c in 0..width {
                m.data[r * width + c] = f(r, c);
            }
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: bool) {
        self.data[row * self.width + col] = v;
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    fn check_same(&self, other: &Mask) {
        assert_eq!(
            (self.width, self.height),
            (other.width, other.height),
            "mask dimensions differ"
        );
    }

    pub fn and(&self, other: &Mask) -> Mask {
        self.check_same(other);
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        self.check_same(other);
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    /// `self ∧ ¬other`.
    pub fn and_not(&self, other: &Mask) -> Mask {
        self.check_same(other);
        Mask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && !*b).collect(),
        }
    }

    /// Inclusive bounding box `(row0, col0, row1, col1)` of set pixels.
    pub fn bounding_box(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for r in 0..self.height {
            for c in 0..self.width {
                if self.get(r, c) {
                    bb = Some(match bb {
                        None => (r, c, r, c),
                        Some((r0, c0, r1, c1)) => (r0.min(r), c0.min(c), r1.max(r), c1.max(c)),
                    });
                }
            }
        }
        bb
    }

    pub fn write_pgm<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        let bytes: Vec<u8> = self.data.iter().map(|&b| if b { 255 } else { 0 }).collect();
        w.write_all(&bytes)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_pgm(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm<R: Read>(r: R) -> Result<Self> {
        let mut r = BufReader::new(r);
        let mut tokens = Vec::new();
        // Header: magic, width, height, maxval, separated by whitespace.
        while tokens.len() < 4 {
            let mut line = String::new();
            if r.read_line(&mut line).map_err(|e| Error::Format(e.to_string()))? == 0 {
                return Err(Error::Format("truncated PGM header".into()));
            }
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens[0] != "P5" {
            return Err(Error::Format(format!("expected P5, found {}", tokens[0])));
        }
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad PGM header field {s}")))
        };
        let (width, height, maxval) = (parse(&tokens[1])?, parse(&tokens[2])?, parse(&tokens[3])?);
        if maxval == 0 || maxval > 255 {
            return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
        }
        let mut bytes = vec![0u8; width * height];
        r.read_exact(&mut bytes)
            .map_err(|e| Error::Format(format!("truncated PGM body: {e}")))?;
        Ok(Self {
            width,
            height,
            data: bytes.into_iter().map(|b| b != 0).collect(),
        })
    }

    pub fn load_pgm(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_pgm(f)
    }
}

/// Row-major view-space depth; `f32::INFINITY` marks background.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![f32::INFINITY; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.data[row * self.width + col] = v;
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn foreground(&self) -> Mask {
        Mask::from_fn(self.width, self.height, |r, c| self.get(r, c).is_finite())
    }

    pub fn write_raw<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        w.write_all(DEPTH_MAGIC)?;
        w.write_all(&(self.width as u32).to_le_bytes())?;
        w.write_all(&(self.height as u32).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(12 + 4 * self.data.len());
        self.write_raw(&mut buf).expect("in-memory write");
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn read_raw<R: Read>(mut r: R) -> Result<Self> {
        let mut header = [0u8; 12];
        r.read_exact(&mut header)
            .map_err(|e| Error::Format(format!("truncated depth header: {e}")))?;
        if &header[..4] != DEPTH_MAGIC {
            return Err(Error::Format("bad depth magic".into()));
        }
        let width = u32::from_le_bytes(header[4..8].try_into().unwrap()) as usize;
        let height = u32::from_le_bytes(header[8..12].try_into().unwrap()) as usize;
        let mut raw = vec![0u8; width * height * 4];
        r.read_exact(&mut raw)
            .map_err(|e| Error::Format(format!("truncated depth body: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { width, height, data })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_raw(BufReader::new(f))
    }
}
