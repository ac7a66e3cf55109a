//! Raw video input: YUV4MPEG2 decoding (luma only), Lanczos-5 resampling
//! and PGM export.

use std::io::{self, BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Width and height of the analysis resolution.
pub const ANALYSIS_SIZE: (usize, usize) = (480, 270);

const Y4M_MAGIC: &[u8] = b"YUV4MPEG2";
const MAX_HEADER_LEN: usize = 4096;

/// A single luma plane.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub bit_depth: u8,
    pub luma: Vec<u16>,
}

impl Frame {
    pub fn new(width: usize, height: usize, bit_depth: u8, luma: Vec<u16>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid(format!("empty frame {width}x{height}")));
        }
        if bit_depth != 8 && bit_depth != 10 {
            return Err(Error::invalid(format!("unsupported bit depth {bit_depth}")));
        }
        if luma.len() != width * height {
            return Err(Error::invalid(format!(
                "luma has {} samples, expected {}x{}",
                luma.len(),
                width,
                height
            )));
        }
        let max = (1u32 << bit_depth) as u16;
        if let Some(v) = luma.iter().find(|&&v| v >= max) {
            return Err(Error::invalid(format!(
                "sample {v} exceeds {bit_depth}-bit range"
            )));
        }
        Ok(Self {
            width,
            height,
            bit_depth,
            luma,
        })
    }

    pub fn filled(width: usize, height: usize, bit_depth: u8, value: u16) -> Result<Self> {
        Self::new(width, height, bit_depth, vec![value; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> u16 {
        self.luma[y * self.width + x]
    }

    pub fn max_value(&self) -> u16 {
        ((1u32 << self.bit_depth) - 1) as u16
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Chroma {
    C420,
    C422,
    C444,
    Mono,
}

impl Chroma {
    fn plane_samples(self, w: usize, h: usize) -> usize {
        let (cw, ch) = ((w + 1) / 2, (h + 1) / 2);
        match self {
            Chroma::C420 => 2 * cw * ch,
            Chroma::C422 => 2 * cw * h,
            Chroma::C444 => 2 * w * h,
            Chroma::Mono => 0,
        }
    }
}

/// Stream-level properties taken from the Y4M header plus the frame count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub width: usize,
    pub height: usize,
    pub fps_num: u32,
    pub fps_den: u32,
    pub bit_depth: u8,
    pub chroma: Chroma,
    pub frame_count: usize,
}

impl VideoMeta {
    pub fn fps(&self) -> f64 {
        f64::from(self.fps_num) / f64::from(self.fps_den)
    }

    pub fn duration_s(&self) -> f64 {
        self.frame_count as f64 / self.fps()
    }
}

/// Sequential Y4M reader yielding luma planes in display order.
pub struct Y4mReader<R> {
    inner: R,
    offset: u64,
    meta: VideoMeta,
    index: usize,
    frame_bytes: usize,
    chroma_bytes: usize,
}

impl<R: BufRead> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let header = read_line(&mut inner, 0, MAX_HEADER_LEN)?;
        let offset = header.len() as u64 + 1;
        let meta = parse_header(&header)?;
        let bps = if meta.bit_depth > 8 { 2 } else { 1 };
        Ok(Self {
            frame_bytes: meta.width * meta.height * bps,
            chroma_bytes: meta.chroma.plane_samples(meta.width, meta.height) * bps,
            inner,
            offset,
            meta,
            index: 0,
        })
    }

    /// Header metadata; `frame_count` counts the frames read so far.
    pub fn meta(&self) -> &VideoMeta {
        &self.meta
    }

    pub fn next_frame(&mut self) -> Result<Option<Frame>> {
        let at_eof = self
            .inner
            .fill_buf()
            .map_err(|e| Error::TruncatedFrame {
                index: self.index,
                source: e,
            })?
            .is_empty();
        if at_eof {
            return Ok(None);
        }
        let start = self.offset;
        let line = read_line(&mut self.inner, start, 256)?;
        if !line.starts_with(b"FRAME") || (line.len() > 5 && line[5] != b' ') {
            return Err(Error::Parse {
                offset: start,
                msg: format!("expected FRAME marker for frame {}", self.index),
            });
        }
        self.offset += line.len() as u64 + 1;

        let mut raw = vec![0u8; self.frame_bytes];
        let index = self.index;
        self.inner
            .read_exact(&mut raw)
            .map_err(|source| Error::TruncatedFrame { index, source })?;
        let mut skip = vec![0u8; self.chroma_bytes];
        self.inner
            .read_exact(&mut skip)
            .map_err(|source| Error::TruncatedFrame { index, source })?;
        self.offset += (self.frame_bytes + self.chroma_bytes) as u64;

        let luma: Vec<u16> = if self.meta.bit_depth > 8 {
            raw.chunks_exact(2)
                .map(|b| u16::from_le_bytes([b[0], b[1]]))
                .collect()
        } else {
            raw.iter().map(|&b| u16::from(b)).collect()
        };
        let frame = Frame::new(self.meta.width, self.meta.height, self.meta.bit_depth, luma)
            .map_err(|e| Error::Parse {
                offset: start,
                msg: e.to_string(),
            })?;
        self.index += 1;
        self.meta.frame_count = self.index;
        Ok(Some(frame))
    }
}

impl<R: BufRead> Iterator for Y4mReader<R> {
    type Item = Result<Frame>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

/// Decode a whole stream.
pub fn read_y4m<R: BufRead>(stream: R) -> Result<(VideoMeta, Vec<Frame>)> {
    let mut reader = Y4mReader::new(stream)?;
    let mut frames = Vec::new();
    while let Some(f) = reader.next_frame()? {
        frames.push(f);
    }
    Ok((reader.meta.clone(), frames))
}

fn read_line<R: BufRead>(r: &mut R, offset: u64, limit: usize) -> Result<Vec<u8>> {
    let mut line = Vec::new();
    let n = r
        .by_ref()
        .take(limit as u64 + 1)
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::Parse {
            offset,
            msg: e.to_string(),
        })?;
    if n == 0 || line.last() != Some(&b'\n') {
        return Err(Error::Parse {
            offset: offset + n as u64,
            msg: "unterminated header line".into(),
        });
    }
    line.pop();
    Ok(line)
}

fn parse_header(line: &[u8]) -> Result<VideoMeta> {
    let bad = |offset: usize, msg: String| Error::Parse {
        offset: offset as u64,
        msg,
    };
    if !line.starts_with(Y4M_MAGIC) {
        return Err(bad(0, "missing YUV4MPEG2 signature".into()));
    }
    let text = std::str::from_utf8(line).map_err(|e| bad(e.valid_up_to(), "non-ASCII header".into()))?;

    let (mut width, mut height, mut fps) = (None, None, None);
    let (mut chroma, mut bit_depth) = (Chroma::C420, 8u8);
    let mut pos = Y4M_MAGIC.len();
    for tok in text[Y4M_MAGIC.len()..].split(' ') {
        let tag_at = pos;
        pos += tok.len() + 1;
        if tok.is_empty() {
            continue;
        }
        let (tag, val) = tok.split_at(1);
        match tag {
            "W" => width = Some(val.parse::<usize>().map_err(|_| bad(tag_at, format!("bad width {val:?}")))?),
            "H" => height = Some(val.parse::<usize>().map_err(|_| bad(tag_at, format!("bad height {val:?}")))?),
            "F" => {
                let (n, d) = val
                    .split_once(':')
                    .ok_or_else(|| bad(tag_at, format!("bad frame rate {val:?}")))?;
                let n: u32 = n.parse().map_err(|_| bad(tag_at, format!("bad frame rate {val:?}")))?;
                let d: u32 = d.parse().map_err(|_| bad(tag_at, format!("bad frame rate {val:?}")))?;
                if n == 0 || d == 0 {
                    return Err(bad(tag_at, format!("zero frame rate term in {val:?}")));
                }
                fps = Some((n, d));
            }
            "C" => {
                (chroma, bit_depth) = match val {
                    "420" | "420jpeg" | "420paldv" | "420mpeg2" => (Chroma::C420, 8),
                    "420p10" => (Chroma::C420, 10),
                    "422" => (Chroma::C422, 8),
                    "422p10" => (Chroma::C422, 10),
                    "444" => (Chroma::C444, 8),
                    "444p10" => (Chroma::C444, 10),
                    "mono" => (Chroma::Mono, 8),
                    "mono10" => (Chroma::Mono, 10),
                    _ => return Err(bad(tag_at, format!("unsupported colorspace {val:?}"))),
                }
            }
            // interlacing, aspect, comments
            "I" | "A" | "X" => {}
            _ => return Err(bad(tag_at, format!("unknown tag {tok:?}"))),
        }
    }
    let width = width.filter(|&w| w > 0).ok_or_else(|| bad(0, "missing width".into()))?;
    let height = height.filter(|&h| h > 0).ok_or_else(|| bad(0, "missing height".into()))?;
    let (fps_num, fps_den) = fps.ok_or_else(|| bad(0, "missing frame rate".into()))?;
    Ok(VideoMeta {
        width,
        height,
        fps_num,
        fps_den,
        bit_depth,
        chroma,
        frame_count: 0,
    })
}

/// Write frames as a 4:2:0 Y4M stream with neutral chroma.
pub fn write_y4m<W: Write>(
    mut out: W,
    frames: &[Frame],
    fps_num: u32,
    fps_den: u32,
) -> io::Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| io::Error::new(io::ErrorKind::InvalidInput, "no frames"))?;
    let (w, h, depth) = (first.width, first.height, first.bit_depth);
    let tag = if depth > 8 { "420p10" } else { "420jpeg" };
    writeln!(out, "YUV4MPEG2 W{w} H{h} F{fps_num}:{fps_den} Ip A1:1 C{tag}")?;
    let chroma_len = Chroma::C420.plane_samples(w, h);
    let mid = 1u16 << (depth - 1);
    for f in frames {
        if (f.width, f.height, f.bit_depth) != (w, h, depth) {
            return Err(io::Error::new(io::ErrorKind::InvalidInput, "mixed frame formats"));
        }
        out.write_all(b"FRAME\n")?;
        if depth > 8 {
            let bytes: Vec<u8> = f.luma.iter().flat_map(|v| v.to_le_bytes()).collect();
            out.write_all(&bytes)?;
            let c: Vec<u8> = std::iter::repeat(mid.to_le_bytes()).take(chroma_len).flatten().collect();
            out.write_all(&c)?;
        } else {
            let bytes: Vec<u8> = f.luma.iter().map(|&v| v as u8).collect();
            out.write_all(&bytes)?;
            out.write_all(&vec![mid as u8; chroma_len])?;
        }
    }
    Ok(())
}

/// Binary PGM (P5). 10-bit frames use two big-endian bytes per sample.
pub fn write_pgm<W: Write>(mut out: W, frame: &Frame) -> io::Result<()> {
    write!(out, "P5\n{} {}\n{}\n", frame.width, frame.height, frame.max_value())?;
    if frame.bit_depth > 8 {
        let bytes: Vec<u8> = frame.luma.iter().flat_map(|v| v.to_be_bytes()).collect();
        out.write_all(&bytes)
    } else {
        let bytes: Vec<u8> = frame.luma.iter().map(|&v| v as u8).collect();
        out.write_all(&bytes)
    }
}

const LANCZOS_A: f64 = 5.0;

fn sinc(x: f64) -> f64 {
    let px = std::f64::consts::PI * x;
    px.sin() / px
}

/// Lanczos kernel with five lobes.
pub fn lanczos5(x: f64) -> f64 {
    let ax = x.abs();
    if ax >= LANCZOS_A {
        0.0
    } else if x.fract() == 0.0 {
        if x == 0.0 {
            1.0
        } else {
            0.0
        }
    } else {
        sinc(x) * sinc(x / LANCZOS_A)
    }
}

struct Taps {
    start: Vec<isize>,
    weights: Vec<Vec<f64>>,
}

// Per-output-coordinate normalized weights. The kernel is widened by the
// downscale factor so it acts as an anti-aliasing filter.
fn taps(src: usize, dst: usize) -> Taps {
    let scale = src as f64 / dst as f64;
    let filter_scale = scale.max(1.0);
    let support = LANCZOS_A * filter_scale;
    let mut start = Vec::with_capacity(dst);
    let mut weights = Vec::with_capacity(dst);
    for o in 0..dst {
        let center = (o as f64 + 0.5) * scale - 0.5;
        let first = (center - support).floor() as isize + 1;
        let last = (center + support).ceil() as isize - 1;
        let mut w: Vec<f64> = (first..=last)
            .map(|j| lanczos5((j as f64 - center) / filter_scale))
            .collect();
        let sum: f64 = w.iter().sum();
        for v in &mut w {
            *v /= sum;
        }
        start.push(first);
        weights.push(w);
    }
    Taps { start, weights }
}

/// Separable Lanczos-5 resize with clamp-to-edge extension.
pub fn lanczos5_resize(frame: &Frame, out_w: usize, out_h: usize) -> Result<Frame> {
    if out_w == 0 || out_h == 0 {
        return Err(Error::invalid(format!("zero-size output {out_w}x{out_h}")));
    }
    let (w, h) = (frame.width, frame.height);
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;

    let tx = taps(w, out_w);
    let mut tmp = vec![0.0f64; out_w * h];
    for y in 0..h {
        let row = &frame.luma[y * w..(y + 1) * w];
        for (ox, (s, ws)) in tx.start.iter().zip(&tx.weights).enumerate() {
            let mut acc = 0.0;
            for (k, &wt) in ws.iter().enumerate() {
                acc += wt * f64::from(row[clamp(s + k as isize, w)]);
            }
            tmp[y * out_w + ox] = acc;
        }
    }

    let ty = taps(h, out_h);
    let max = f64::from(frame.max_value());
    let mut luma = vec![0u16; out_w * out_h];
    for (oy, (s, ws)) in ty.start.iter().zip(&ty.weights).enumerate() {
        for ox in 0..out_w {
            let mut acc = 0.0;
            for (k, &wt) in ws.iter().enumerate() {
                acc += wt * tmp[clamp(s + k as isize, h) * out_w + ox];
            }
            luma[oy * out_w + ox] = acc.round().clamp(0.0, max) as u16;
        }
    }
    Frame::new(out_w, out_h, frame.bit_depth, luma)
}
