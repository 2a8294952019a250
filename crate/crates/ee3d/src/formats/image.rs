//! Binary PGM (P5) and PPM (P6) images with 8-bit samples, and video
//! directories of such frames.
//!
//! A video directory holds `frames.txt` with one `frame_index timestamp_µs`
//! pair per line and the frames as `frame_{index:06}.pgm` (or `.ppm`).

use std::fs;
use std::path::Path;

use ee3d_core::sim::BrightnessVideo;

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (grey) or 3 (RGB) samples per pixel.
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Image { width, height, channels, data: vec![0; width * height * channels] }
    }

    pub fn filled_rgb(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        let data = rgb.iter().copied().cycle().take(width * height * 3).collect();
        Image { width, height, channels: 3, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn put(&mut self, x: usize, y: usize, v: &[u8]) {
        let i = (y * self.width + x) * self.channels;
        self.data[i..i + self.channels].copy_from_slice(v);
    }

    pub fn encode(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::with_capacity(4);
        let mut i = 0;
        while fields.len() < 4 {
            while i < bytes.len() && (bytes[i].is_ascii_whitespace() || bytes[i] == b'#') {
                if bytes[i] == b'#' {
                    while i < bytes.len() && bytes[i] != b'\n' {
                        i += 1;
                    }
                } else {
                    i += 1;
                }
            }
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if start == i {
                return Err(Error::format("truncated image header"));
            }
            fields.push(std::str::from_utf8(&bytes[start..i]).map_err(|_| Error::format("bad image header"))?);
        }
        i += 1;
        let channels = match fields[0] {
            "P5" => 1,
            "P6" => 3,
            m => return Err(Error::format(format!("unsupported image type '{m}'"))),
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| Error::format(format!("bad image header field '{s}'")));
        let (width, height, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if max != 255 {
            return Err(Error::format(format!("only 8-bit images are supported, maxval {max}")));
        }
        let n = width * height * channels;
        let data = bytes.get(i..i + n).ok_or_else(|| Error::format("truncated image data"))?.to_vec();
        Ok(Image { width, height, channels, data })
    }

    /// Luminance in `[0, 1]`; RGB uses Rec. 601 weights.
    pub fn luminance(&self) -> Vec<f32> {
        match self.channels {
            1 => self.data.iter().map(|&v| v as f32 / 255.0).collect(),
            _ => self
                .data
                .chunks_exact(3)
                .map(|c| (0.299 * c[0] as f32 + 0.587 * c[1] as f32 + 0.114 * c[2] as f32) / 255.0)
                .collect(),
        }
    }

    pub fn from_luminance(width: usize, height: usize, values: &[f32]) -> Self {
        let data = values.iter().map(|&v| to_byte(v)).collect();
        Image { width, height, channels: 1, data }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode()).at(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Image::decode(&fs::read(path).at(path)?)
    }
}

pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub const VIDEO_MANIFEST: &str = "frames.txt";

pub fn read_video(dir: &Path) -> Result<BrightnessVideo> {
    let manifest = dir.join(VIDEO_MANIFEST);
    let text = fs::read_to_string(&manifest).at(&manifest)?;
    let mut video: Option<BrightnessVideo> = None;
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |s: Option<&str>| s.and_then(|s| s.parse::<u64>().ok());
        let mut it = line.split_whitespace();
        let (Some(index), Some(t)) = (parse(it.next()), parse(it.next())) else {
            return Err(Error::format(format!("{}:{}: expected 'frame_index timestamp_us'", manifest.display(), n + 1)));
        };
        let pgm = dir.join(format!("frame_{index:06}.pgm"));
        let path = if pgm.exists() { pgm } else { dir.join(format!("frame_{index:06}.ppm")) };
        let img = Image::load(&path)?;
        let v = video.get_or_insert_with(|| BrightnessVideo::new(img.width, img.height));
        v.push(img.luminance(), t)?;
    }
    video.ok_or_else(|| Error::format(format!("{}: no frames", manifest.display())))
}

pub fn write_video(dir: &Path, video: &BrightnessVideo) -> Result<()> {
    fs::create_dir_all(dir).at(dir)?;
    let mut manifest = String::new();
    for (i, (frame, t)) in video.frames.iter().zip(&video.timestamps).enumerate() {
        Image::from_luminance(video.width, video.height, frame).save(&dir.join(format!("frame_{i:06}.pgm")))?;
        manifest.push_str(&format!("{i} {t}\n"));
    }
    let path = dir.join(VIDEO_MANIFEST);
    fs::write(&path, manifest).at(&path)
}
