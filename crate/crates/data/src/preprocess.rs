use crate::error::{DataError, Result};

/// 8-bit RGB image stored row-major as `[H, W, 3]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawFrame {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

impl RawFrame {
    pub fn new(height: usize, width: usize, rgb: Vec<u8>) -> Result<Self> {
        if rgb.len() != height * width * 3 {
            return Err(DataError::Shape(format!("{height}x{width} RGB needs {} bytes, got {}", height * width * 3, rgb.len())));
        }
        Ok(RawFrame { height, width, rgb })
    }

    pub fn filled(height: usize, width: usize, value: u8) -> Self {
        RawFrame { height, width, rgb: vec![value; height * width * 3] }
    }
}

/// Averages 2x2 blocks and maps `v -> v / 127.5 - 1`, giving a planar
/// `[3, H/2, W/2]` frame in [-1, 1].
pub fn preprocess_frame(raw: &RawFrame) -> Result<Vec<f32>> {
    let (h, w) = (raw.height, raw.width);
    if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
        return Err(DataError::Shape(format!("frame extents must be even and positive, got {h}x{w}")));
    }
    if raw.rgb.len() != h * w * 3 {
        return Err(DataError::Shape("pixel buffer does not match extents".into()));
    }
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0f32; 3 * oh * ow];
    for c in 0..3 {
        for i in 0..oh {
            for j in 0..ow {
                let px = |r: usize, col: usize| u32::from(raw.rgb[(r * w + col) * 3 + c]);
                let sum = px(2 * i, 2 * j) + px(2 * i, 2 * j + 1) + px(2 * i + 1, 2 * j) + px(2 * i + 1, 2 * j + 1);
                let v = (f64::from(sum) / 4.0 / 127.5 - 1.0) as f32;
                out[(c * oh + i) * ow + j] = v.clamp(-1.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Maps [-1, 1] to 8-bit with round-half-up: -1 -> 0, 0 -> 128, 1 -> 255.
pub fn to_u8(v: f32) -> u8 {
    let x = ((f64::from(v) + 1.0) * 127.5 + 0.5).floor();
    if x.is_nan() {
        0
    } else {
        x.clamp(0.0, 255.0) as u8
    }
}

/// Planar `[3, H, W]` frame in [-1, 1] to interleaved 8-bit RGB.
pub fn planar_to_rgb(frame: &[f32], height: usize, width: usize) -> Vec<u8> {
    let plane = height * width;
    let mut out = Vec::with_capacity(plane * 3);
    for p in 0..plane {
        for c in 0..3 {
            out.push(to_u8(frame[c * plane + p]));
        }
    }
    out
}
