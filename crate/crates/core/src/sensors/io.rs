//! File formats: binary PPM/PGM images, `.xyz` point clouds, `.evt` event
//! lists and TSR1 frames.
//!
//! Depth maps are stored as 16-bit PGM in millimetres; label maps as 8-bit PGM
//! with 255 marking unlabelled pixels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::sensors::{Event, EventStream, FrameKind, LidarPoint, ModalityFrame, PointCloud};
use crate::tensor::Tensor;

/// Label value written for pixels without ground truth.
pub const IGNORE_LABEL: u8 = 255;

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

struct Netpbm<'a> {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    body: &'a [u8],
}

fn parse_netpbm(bytes: &[u8]) -> Result<Netpbm<'_>> {
    if bytes.len() < 2 {
        return Err(Error::Format("truncated image header".into()));
    }
    let magic = [bytes[0], bytes[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in fields.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Format(format!("bad image header near byte {start}")))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Format("image header must end with whitespace".into()));
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::Format(format!("unsupported maxval {maxval}")));
    }
    Ok(Netpbm {
        magic,
        width,
        height,
        maxval,
        body: &bytes[pos + 1..],
    })
}

fn samples(img: &Netpbm<'_>, channels: usize) -> Result<Vec<u16>> {
    let n = img.width * img.height * channels;
    let wide = img.maxval > 255;
    let need = if wide { 2 * n } else { n };
    if img.body.len() < need {
        return Err(Error::Format(format!(
            "image body has {} bytes, expected {need}",
            img.body.len()
        )));
    }
    Ok(if wide {
        img.body[..need].chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        img.body[..n].iter().map(|&b| b as u16).collect()
    })
}

fn quantise(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a frame as 8-bit P6 (channel-interleaved).
pub fn encode_ppm(frame: &ModalityFrame) -> Vec<u8> {
    let (h, w) = (frame.height(), frame.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    let d = frame.data.data();
    for p in 0..h * w {
        for c in 0..3 {
            out.push(quantise(d[c * h * w + p]));
        }
    }
    out
}

pub fn decode_ppm(bytes: &[u8], kind: FrameKind) -> Result<ModalityFrame> {
    let img = parse_netpbm(bytes)?;
    if &img.magic != b"P6" {
        return Err(Error::Format("expected a binary PPM (P6)".into()));
    }
    let s = samples(&img, 3)?;
    let (h, w) = (img.height, img.width);
    let scale = img.maxval as f64;
    let mut data = vec![0.0; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            data[c * h * w + p] = s[3 * p + c] as f64 / scale;
        }
    }
    ModalityFrame::new(kind, Tensor::new(vec![3, h, w], data)?)
}

pub fn write_ppm(path: &Path, frame: &ModalityFrame) -> Result<()> {
    write(path, &encode_ppm(frame))
}

pub fn read_ppm(path: &Path, kind: FrameKind) -> Result<ModalityFrame> {
    decode_ppm(&read(path)?, kind)
}

fn encode_pgm(w: usize, h: usize, maxval: u16, values: impl Iterator<Item = u16>) -> Vec<u8> {
    let mut out = format!("P5\n{w} {h}\n{maxval}\n").into_bytes();
    for v in values {
        if maxval > 255 {
            out.extend_from_slice(&v.to_be_bytes());
        } else {
            out.push(v as u8);
        }
    }
    out
}

/// Metric depth `H x W` as 16-bit millimetres.
pub fn encode_depth_pgm(depth: &Tensor) -> Result<Vec<u8>> {
    let [h, w] = *depth.shape() else {
        return Err(Error::dim("depth", format!("expected H x W, got {:?}", depth.shape())));
    };
    Ok(encode_pgm(
        w,
        h,
        u16::MAX,
        depth.data().iter().map(|&d| (d * 1000.0).round().clamp(0.0, 65535.0) as u16),
    ))
}

pub fn decode_depth_pgm(bytes: &[u8]) -> Result<Tensor> {
    let img = parse_netpbm(bytes)?;
    if &img.magic != b"P5" {
        return Err(Error::Format("expected a binary PGM (P5)".into()));
    }
    let s = samples(&img, 1)?;
    Tensor::new(vec![img.height, img.width], s.iter().map(|&v| v as f64 / 1000.0).collect())
}

pub fn write_depth_pgm(path: &Path, depth: &Tensor) -> Result<()> {
    write(path, &encode_depth_pgm(depth)?)
}

pub fn read_depth_pgm(path: &Path) -> Result<Tensor> {
    decode_depth_pgm(&read(path)?)
}

/// Label map (row-major, `None` = unlabelled) as 8-bit PGM.
pub fn encode_label_pgm(labels: &[Option<usize>], h: usize, w: usize) -> Result<Vec<u8>> {
    if labels.len() != h * w {
        return Err(Error::dim("labels", format!("{} labels for a {h}x{w} map", labels.len())));
    }
    if let Some(i) = labels.iter().position(|l| l.is_some_and(|c| c >= IGNORE_LABEL as usize)) {
        return Err(Error::Data(format!("label at (row {}, col {}) does not fit in 8 bits", i / w, i % w)));
    }
    Ok(encode_pgm(
        w,
        h,
        255,
        labels.iter().map(|l| l.map_or(IGNORE_LABEL as u16, |c| c as u16)),
    ))
}

pub fn decode_label_pgm(bytes: &[u8]) -> Result<(Vec<Option<usize>>, usize, usize)> {
    let img = parse_netpbm(bytes)?;
    if &img.magic != b"P5" || img.maxval > 255 {
        return Err(Error::Format("expected an 8-bit binary PGM (P5)".into()));
    }
    let s = samples(&img, 1)?;
    let labels = s
        .iter()
        .map(|&v| (v != IGNORE_LABEL as u16).then_some(v as usize))
        .collect();
    Ok((labels, img.height, img.width))
}

pub fn write_label_pgm(path: &Path, labels: &[Option<usize>], h: usize, w: usize) -> Result<()> {
    write(path, &encode_label_pgm(labels, h, w)?)
}

pub fn read_label_pgm(path: &Path) -> Result<(Vec<Option<usize>>, usize, usize)> {
    decode_label_pgm(&read(path)?)
}

/// One point per line: `x y z [class]`. Blank lines and `#` comments are skipped.
pub fn parse_xyz(text: &str) -> Result<PointCloud> {
    let mut points = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("line {}: expected `x y z [class]`", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if !(3..=4).contains(&f.len()) {
            return Err(bad());
        }
        let mut xyz = [0.0; 3];
        for (c, s) in xyz.iter_mut().zip(&f) {
            *c = s.parse().map_err(|_| bad())?;
        }
        let class_id = match f.get(3) {
            Some(s) => Some(s.parse().map_err(|_| bad())?),
            None => None,
        };
        points.push(LidarPoint { xyz, class_id });
    }
    let cloud = PointCloud { points };
    cloud.validate()?;
    Ok(cloud)
}

pub fn format_xyz(cloud: &PointCloud) -> String {
    let mut s = String::new();
    for p in &cloud.points {
        let [x, y, z] = p.xyz;
        match p.class_id {
            Some(c) => s.push_str(&format!("{x} {y} {z} {c}\n")),
            None => s.push_str(&format!("{x} {y} {z}\n")),
        }
    }
    s
}

/// One event per line: `x y t polarity`. An optional `# interval t0 t1` line
/// sets the recording window; otherwise it spans the events.
pub fn parse_evt(text: &str) -> Result<EventStream> {
    let mut events = Vec::new();
    let mut interval = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if let Some(rest) = line.strip_prefix("# interval") {
            let v: Vec<u64> = rest
                .split_whitespace()
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| Error::Format(format!("line {}: bad interval", n + 1)))?;
            let [t0, t1] = v[..] else {
                return Err(Error::Format(format!("line {}: interval needs two values", n + 1)));
            };
            interval = Some((t0, t1));
            continue;
        }
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || Error::Format(format!("line {}: expected `x y t polarity`", n + 1));
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 4 {
            return Err(bad());
        }
        events.push(Event {
            x: f[0].parse().map_err(|_| bad())?,
            y: f[1].parse().map_err(|_| bad())?,
            t: f[2].parse().map_err(|_| bad())?,
            polarity: f[3].parse().map_err(|_| bad())?,
        });
    }
    let (t0, t1) = interval.unwrap_or_else(|| {
        let lo = events.iter().map(|e| e.t).min().unwrap_or(0);
        let hi = events.iter().map(|e| e.t + 1).max().unwrap_or(1);
        (lo, hi)
    });
    Ok(EventStream { events, t0, t1 })
}

pub fn format_evt(stream: &EventStream) -> String {
    let mut s = format!("# interval {} {}\n", stream.t0, stream.t1);
    for e in &stream.events {
        s.push_str(&format!("{} {} {} {}\n", e.x, e.y, e.t, e.polarity));
    }
    s
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text.as_bytes())
}

pub fn write_frame_tsr1(path: &Path, frame: &ModalityFrame) -> Result<()> {
    write(path, &frame.data.to_tsr1_bytes())
}

pub fn read_frame_tsr1(path: &Path, kind: FrameKind) -> Result<ModalityFrame> {
    ModalityFrame::new(kind, Tensor::from_tsr1_bytes(&read(path)?)?)
}
