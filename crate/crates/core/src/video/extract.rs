//! Training-clip extraction: temporal windowing, shorter-side resize to 256
//! (bilinear), and a 224×224 crop — random during training, centered for
//! evaluation. Clips shorter than the requested window are rejected rather
//! than padded, since padding would corrupt motion statistics.

use rand::Rng;

use crate::error::{Error, Result};
use crate::video::clip::VideoClip;

pub const RESIZE_SHORTER_SIDE: u32 = 256;
pub const CROP_SIZE: u32 = 224;

/// Bilinear resize of one interleaved frame, align-centers convention.
/// A constant input stays constant to the last bit.
fn resize_frame(
    src: &[u8],
    h: usize,
    w: usize,
    c: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<u8> {
    let mut out = vec![0u8; out_h * out_w * c];
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, h as f64 - 1.0);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, w as f64 - 1.0);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let p = |y: usize, x: usize| src[(y * w + x) * c + ch] as f64;
                let top = p(y0, x0) * (1.0 - wx) + p(y0, x1) * wx;
                let bot = p(y1, x0) * (1.0 - wx) + p(y1, x1) * wx;
                let v = top * (1.0 - wy) + bot * wy;
                out[(oy * out_w + ox) * c + ch] = v.round() as u8;
            }
        }
    }
    out
}

/// Extracts a T_out-frame training view: uniform temporal window, resize so
/// the shorter side is 256, then one 224×224 crop shared by all frames.
pub fn extract_training_clip<R: Rng>(
    clip: &VideoClip,
    t_out: u32,
    center_crop: bool,
    rng: &mut R,
) -> Result<VideoClip> {
    if t_out == 0 {
        return Err(Error::contract("t_out must be >= 1"));
    }
    if clip.frames() < t_out {
        return Err(Error::Contract(format!(
            "clip has {} frames, window needs {t_out}; short clips are rejected, not padded",
            clip.frames()
        )));
    }
    let t_start = if clip.frames() == t_out {
        0
    } else {
        rng.random_range(0..=clip.frames() - t_out)
    };

    let (h, w, c) = (
        clip.height() as usize,
        clip.width() as usize,
        clip.channels() as usize,
    );
    let short = clip.height().min(clip.width());
    let scale = RESIZE_SHORTER_SIDE as f64 / short as f64;
    let out_h = if clip.height() == short {
        RESIZE_SHORTER_SIDE as usize
    } else {
        (clip.height() as f64 * scale).round() as usize
    };
    let out_w = if clip.width() == short {
        RESIZE_SHORTER_SIDE as usize
    } else {
        (clip.width() as f64 * scale).round() as usize
    };

    let crop = CROP_SIZE as usize;
    let (cy, cx) = if center_crop {
        ((out_h - crop) / 2, (out_w - crop) / 2)
    } else {
        (
            rng.random_range(0..=(out_h - crop)),
            rng.random_range(0..=(out_w - crop)),
        )
    };

    let frame_len = h * w * c;
    let mut pixels = Vec::with_capacity(t_out as usize * crop * crop * c);
    for t in t_start..t_start + t_out {
        let src = &clip.pixels()[t as usize * frame_len..(t as usize + 1) * frame_len];
        let resized = resize_frame(src, h, w, c, out_h, out_w);
        for y in cy..cy + crop {
            let row = &resized[(y * out_w + cx) * c..(y * out_w + cx + crop) * c];
            pixels.extend_from_slice(row);
        }
    }
    VideoClip::new(t_out, crop as u32, crop as u32, clip.channels(), clip.fps(), pixels)
}
