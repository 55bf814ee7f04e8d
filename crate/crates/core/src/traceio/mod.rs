//! `.pptrace` files: one JSON header line followed by one JSON line per frame.
//!
//! ```text
//! {"format":"pptrace","format_version":1,"fps":30,"width":1280,"height":720,"frame_count":2,"scenario_tag":"demo"}
//! {"seq":0,"timestamp_us":0,"thumbnail":"<base64 of 625 bytes>","truths":[...],"seg_boxes":[...]}
//! ```
//!
//! Unknown fields are ignored. Every line, including the last, ends in `\n`;
//! a missing terminator or a short body is reported as truncation.

mod generate;

pub use generate::{builtin, generate, EventSpec, ObjectSpec, ScenarioScript, BUILTIN_SCENARIOS};

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::geom::{Detection, FrameRecord, SegBox};
use crate::similarity::{Thumbnail, THUMB_LEN};

pub const FORMAT_NAME: &str = "pptrace";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub fps: u32,
    pub width: u32,
    pub height: u32,
    pub frame_count: u64,
    pub scenario_tag: String,
    pub format_version: u32,
}

impl TraceHeader {
    /// Capture time of frame `seq` on the integer-microsecond grid.
    pub fn timestamp_us(&self, seq: u64) -> u64 {
        frame_timestamp_us(seq, self.fps)
    }

    pub fn frame_period_us(&self) -> f64 {
        1e6 / self.fps as f64
    }
}

pub fn frame_timestamp_us(seq: u64, fps: u32) -> u64 {
    (seq as u128 * 1_000_000 / fps.max(1) as u128) as u64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub frames: Vec<FrameRecord>,
}

impl Trace {
    pub fn empty(fps: u32, width: u32, height: u32, tag: &str) -> Self {
        Trace {
            header: TraceHeader {
                fps,
                width,
                height,
                frame_count: 0,
                scenario_tag: tag.to_string(),
                format_version: FORMAT_VERSION,
            },
            frames: Vec::new(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_trace(self, &mut out)?;
        Ok(out)
    }

    /// Hex SHA-256 of the serialized trace.
    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(self.to_bytes()?)))
    }
}

#[derive(Serialize, Deserialize)]
struct WireHeader {
    format: String,
    format_version: u32,
    fps: u32,
    width: u32,
    height: u32,
    frame_count: u64,
    scenario_tag: String,
}

#[derive(Serialize)]
struct WireFrameOut<'a> {
    seq: u64,
    timestamp_us: u64,
    thumbnail: String,
    truths: &'a [Detection],
    seg_boxes: &'a [SegBox],
}

#[derive(Deserialize)]
struct WireFrameIn {
    seq: u64,
    timestamp_us: u64,
    thumbnail: String,
    #[serde(default)]
    truths: Vec<Detection>,
    #[serde(default)]
    seg_boxes: Vec<SegBox>,
}

pub fn write_trace<W: Write>(trace: &Trace, mut out: W) -> Result<()> {
    let h = &trace.header;
    let header = WireHeader {
        format: FORMAT_NAME.to_string(),
        format_version: h.format_version,
        fps: h.fps,
        width: h.width,
        height: h.height,
        frame_count: trace.frames.len() as u64,
        scenario_tag: h.scenario_tag.clone(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for f in &trace.frames {
        let wire = WireFrameOut {
            seq: f.seq,
            timestamp_us: f.timestamp_us,
            thumbnail: STANDARD.encode(f.thumbnail.to_bytes()),
            truths: &f.truths,
            seg_boxes: &f.seg_boxes,
        };
        serde_json::to_writer(&mut out, &wire)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_trace_file(trace: &Trace, path: &Path) -> Result<()> {
    let file = File::create(path)?;
    write_trace(trace, std::io::BufWriter::new(file))
}

/// Streaming reader. Yields validated frames in order; after the first
/// error it yields nothing more.
pub struct TraceReader<R> {
    input: R,
    header: TraceHeader,
    line: usize,
    yielded: u64,
    last: Option<(u64, u64)>,
    done: bool,
    buf: Vec<u8>,
}

fn read_line<R: BufRead>(input: &mut R, buf: &mut Vec<u8>, line: usize) -> Result<bool> {
    buf.clear();
    let n = input
        .read_until(b'\n', buf)
        .map_err(|e| Error::trace(line, e.to_string()))?;
    if n == 0 {
        return Ok(false);
    }
    if buf.last() != Some(&b'\n') {
        return Err(Error::trace(line, "truncated record (missing line terminator)"));
    }
    buf.pop();
    if buf.last() == Some(&b'\r') {
        buf.pop();
    }
    Ok(true)
}

impl<R: BufRead> TraceReader<R> {
    pub fn new(mut input: R) -> Result<Self> {
        let mut buf = Vec::new();
        if !read_line(&mut input, &mut buf, 1)? {
            return Err(Error::trace(1, "empty file"));
        }
        let wire: WireHeader =
            serde_json::from_slice(&buf).map_err(|e| Error::trace(1, format!("bad header: {e}")))?;
        if wire.format != FORMAT_NAME {
            return Err(Error::trace(1, format!("unknown format `{}`", wire.format)));
        }
        if wire.format_version != FORMAT_VERSION {
            return Err(Error::trace(
                1,
                format!(
                    "unsupported format_version {} (expected {FORMAT_VERSION})",
                    wire.format_version
                ),
            ));
        }
        if wire.fps == 0 {
            return Err(Error::trace(1, "fps must be positive"));
        }
        if wire.width == 0 || wire.height == 0 {
            return Err(Error::trace(1, "frame dimensions must be positive"));
        }
        Ok(TraceReader {
            input,
            header: TraceHeader {
                fps: wire.fps,
                width: wire.width,
                height: wire.height,
                frame_count: wire.frame_count,
                scenario_tag: wire.scenario_tag,
                format_version: wire.format_version,
            },
            line: 1,
            yielded: 0,
            last: None,
            done: false,
            buf,
        })
    }

    pub fn header(&self) -> &TraceHeader {
        &self.header
    }

    fn next_frame(&mut self) -> Result<Option<FrameRecord>> {
        let line = self.line + 1;
        if !read_line(&mut self.input, &mut self.buf, line)? {
            if self.yielded != self.header.frame_count {
                return Err(Error::trace(
                    line,
                    format!(
                        "truncated body: header promises {} frames, found {}",
                        self.header.frame_count, self.yielded
                    ),
                ));
            }
            return Ok(None);
        }
        self.line = line;
        if self.yielded == self.header.frame_count {
            return Err(Error::trace(line, "more frames than frame_count"));
        }
        let wire: WireFrameIn =
            serde_json::from_slice(&self.buf).map_err(|e| Error::trace(line, e.to_string()))?;
        let frame = self.validate(wire, line)?;
        self.yielded += 1;
        Ok(Some(frame))
    }

    fn validate(&mut self, wire: WireFrameIn, line: usize) -> Result<FrameRecord> {
        if let Some((seq, ts)) = self.last {
            if wire.seq <= seq {
                return Err(Error::trace(line, format!("seq {} does not follow {seq}", wire.seq)));
            }
            if wire.timestamp_us <= ts {
                return Err(Error::trace(
                    line,
                    format!("timestamp {} does not follow {ts}", wire.timestamp_us),
                ));
            }
        }
        self.last = Some((wire.seq, wire.timestamp_us));
        let bytes = STANDARD
            .decode(wire.thumbnail.as_bytes())
            .map_err(|e| Error::trace(line, format!("thumbnail: {e}")))?;
        if bytes.len() != THUMB_LEN {
            return Err(Error::trace(
                line,
                format!("thumbnail has {} bytes, expected {THUMB_LEN}", bytes.len()),
            ));
        }
        let thumbnail = Thumbnail::from_bytes(&bytes).map_err(|e| Error::trace(line, e.to_string()))?;
        let (w, h) = (self.header.width, self.header.height);
        let outside = wire.truths.iter().map(|d| d.bbox).chain(wire.seg_boxes.iter().map(|s| s.bbox)).find(|b| !b.fits_in(w, h));
        if let Some(b) = outside {
            return Err(Error::trace(line, format!("box {b} outside {w}x{h} frame")));
        }
        Ok(FrameRecord {
            seq: wire.seq,
            timestamp_us: wire.timestamp_us,
            width: w,
            height: h,
            thumbnail,
            truths: wire.truths,
            seg_boxes: wire.seg_boxes,
        })
    }
}

impl<R: BufRead> Iterator for TraceReader<R> {
    type Item = Result<FrameRecord>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        match self.next_frame() {
            Ok(Some(f)) => Some(Ok(f)),
            Ok(None) => {
                self.done = true;
                None
            }
            Err(e) => {
                self.done = true;
                Some(Err(e))
            }
        }
    }
}

pub fn parse_trace(bytes: &[u8]) -> Result<Trace> {
    collect(TraceReader::new(bytes)?)
}

pub fn read_trace(path: &Path) -> Result<Trace> {
    let file = File::open(path)?;
    collect(TraceReader::new(BufReader::new(file))?)
}

fn collect<R: BufRead>(reader: TraceReader<R>) -> Result<Trace> {
    let header = reader.header().clone();
    let frames = reader.collect::<Result<Vec<_>>>()?;
    Ok(Trace { header, frames })
}
