//! Raw clip container and the UVC1 on-disk format.
//!
//! UVC1 layout: magic `UVC1`, little-endian u32 fields T, H, W, C, a u32
//! `fps_milli` (fps × 1000), then T·H·W·C bytes of unsigned 8-bit pixels,
//! frame-major, then row-major, channel-interleaved.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const UVC1_MAGIC: &[u8; 4] = b"UVC1";
const HEADER_LEN: usize = 4 + 4 * 5;

#[derive(Clone, Debug, PartialEq)]
pub struct VideoClip {
    frames: u32,
    height: u32,
    width: u32,
    channels: u32,
    fps: f64,
    pixels: Vec<u8>,
}

impl VideoClip {
    pub fn new(frames: u32, height: u32, width: u32, channels: u32, fps: f64, pixels: Vec<u8>) -> Result<Self> {
        let expected = frames as usize * height as usize * width as usize * channels as usize;
        if frames == 0 || height == 0 || width == 0 || channels == 0 {
            return Err(Error::contract("clip dimensions must be nonzero"));
        }
        if pixels.len() != expected {
            return Err(Error::Contract(format!(
                "clip of {frames}x{height}x{width}x{channels} needs {expected} bytes, got {}",
                pixels.len()
            )));
        }
        Ok(VideoClip {
            frames,
            height,
            width,
            channels,
            fps,
            pixels,
        })
    }

    /// All-zero clip of the given geometry.
    pub fn zeros(frames: u32, height: u32, width: u32, channels: u32, fps: f64) -> Self {
        let n = frames as usize * height as usize * width as usize * channels as usize;
        VideoClip::new(frames, height, width, channels, fps, vec![0; n])
            .expect("zero clip geometry is valid")
    }

    pub fn frames(&self) -> u32 {
        self.frames
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn channels(&self) -> u32 {
        self.channels
    }

    pub fn fps(&self) -> f64 {
        self.fps
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixels_mut(&mut self) -> &mut [u8] {
        &mut self.pixels
    }

    #[inline]
    pub fn pixel(&self, t: u32, y: u32, x: u32, c: u32) -> u8 {
        let (h, w, ch) = (self.height as usize, self.width as usize, self.channels as usize);
        self.pixels[((t as usize * h + y as usize) * w + x as usize) * ch + c as usize]
    }

    #[inline]
    pub fn set_pixel(&mut self, t: u32, y: u32, x: u32, c: u32, v: u8) {
        let (h, w, ch) = (self.height as usize, self.width as usize, self.channels as usize);
        self.pixels[((t as usize * h + y as usize) * w + x as usize) * ch + c as usize] = v;
    }
}

pub fn write_clip(clip: &VideoClip, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(HEADER_LEN + clip.pixels.len());
    bytes.extend_from_slice(UVC1_MAGIC);
    bytes.extend_from_slice(&clip.frames.to_le_bytes());
    bytes.extend_from_slice(&clip.height.to_le_bytes());
    bytes.extend_from_slice(&clip.width.to_le_bytes());
    bytes.extend_from_slice(&clip.channels.to_le_bytes());
    let fps_milli = (clip.fps * 1000.0).round() as u32;
    bytes.extend_from_slice(&fps_milli.to_le_bytes());
    bytes.extend_from_slice(&clip.pixels);
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_clip(path: &Path) -> Result<VideoClip> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_clip(&bytes, &path.display().to_string())
}

fn parse_clip(bytes: &[u8], path: &str) -> Result<VideoClip> {
    let fmt = |offset: u64, reason: String| Error::Format {
        path: path.to_string(),
        offset,
        reason,
    };
    if bytes.len() < HEADER_LEN {
        return Err(fmt(bytes.len() as u64, "truncated header".into()));
    }
    if &bytes[0..4] != UVC1_MAGIC {
        return Err(fmt(0, format!("bad magic {:?}", &bytes[0..4])));
    }
    let u32_at = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let frames = u32_at(4);
    let height = u32_at(8);
    let width = u32_at(12);
    let channels = u32_at(16);
    let fps_milli = u32_at(20);
    if frames == 0 {
        return Err(fmt(4, "zero frame count".into()));
    }
    if height == 0 || width == 0 || channels == 0 {
        return Err(fmt(8, "zero spatial dimension or channel count".into()));
    }
    let expected = frames as usize * height as usize * width as usize * channels as usize;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() != expected {
        return Err(fmt(
            bytes.len() as u64,
            format!("payload has {} bytes, header implies {expected}", payload.len()),
        ));
    }
    VideoClip::new(
        frames,
        height,
        width,
        channels,
        fps_milli as f64 / 1000.0,
        payload.to_vec(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.uvc1");
        let mut clip = VideoClip::zeros(4, 8, 8, 3, 1.0);
        for (i, p) in clip.pixels_mut().iter_mut().enumerate() {
            *p = (i % 251) as u8;
        }
        write_clip(&clip, &path).unwrap();
        let back = read_clip(&path).unwrap();
        assert_eq!(clip, back);

        // rewriting yields identical file bytes
        let first = std::fs::read(&path).unwrap();
        write_clip(&clip, &path).unwrap();
        assert_eq!(first, std::fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_payload_is_a_format_error() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UVC1");
        for v in [4u32, 32, 32, 3, 1000] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.extend_from_slice(&[0u8; 100]); // far short of 4*32*32*3
        let err = parse_clip(&bytes, "short.uvc1").unwrap_err();
        match err {
            Error::Format { offset, .. } => assert_eq!(offset, bytes.len() as u64),
            other => panic!("expected format error, got {other}"),
        }
    }

    #[test]
    fn zero_frames_and_bad_magic_rejected() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"UVC1");
        for v in [0u32, 16, 16, 1, 1000] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        match parse_clip(&bytes, "zt.uvc1").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 4),
            other => panic!("{other}"),
        }

        let mut bad = bytes.clone();
        bad[0] = b'X';
        match parse_clip(&bad, "bm.uvc1").unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn minimal_zero_clip_is_valid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.uvc1");
        let clip = VideoClip::zeros(1, 16, 16, 1, 1.0);
        write_clip(&clip, &path).unwrap();
        let back = read_clip(&path).unwrap();
        assert_eq!(back.frames(), 1);
        assert!(back.pixels().iter().all(|&p| p == 0));
    }

    #[test]
    fn empty_path_write_fails_with_io_error() {
        let clip = VideoClip::zeros(1, 4, 4, 1, 1.0);
        assert!(matches!(
            write_clip(&clip, Path::new("")),
            Err(Error::Io { .. })
        ));
    }
}
