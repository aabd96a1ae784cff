//! Image preprocessing: per-source resize rules, channel replication and
//! scaling into the generators' tanh range.

use super::idx::IdxImages;
use crate::error::{Error, Result};
use crate::nets::IMAGE_SIDE;

/// Per-source geometry rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rule {
    /// Bilinear resize to 32x32 (28x28 digit archives and similar).
    Mnist,
    /// 16x16 input centered into 22x22 with zero padding, then resized to
    /// 32x32.
    Usps,
    /// Input already 32x32.
    Passthrough,
}

impl Rule {
    pub fn parse(s: &str) -> Result<Rule> {
        match s {
            "mnist" => Ok(Rule::Mnist),
            "usps" => Ok(Rule::Usps),
            "passthrough" => Ok(Rule::Passthrough),
            other => Err(Error::InvalidConfig(format!("unknown preprocess rule `{other}`"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Rule::Mnist => "mnist",
            Rule::Usps => "usps",
            Rule::Passthrough => "passthrough",
        }
    }
}

/// Bilinear resample of a single-channel image, pixel-center convention.
pub fn resize_bilinear(src: &[f32], sh: usize, sw: usize, dh: usize, dw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; dh * dw];
    let sy = sh as f32 / dh as f32;
    let sx = sw as f32 / dw as f32;
    for dy in 0..dh {
        let fy = ((dy as f32 + 0.5) * sy - 0.5).clamp(0.0, (sh - 1) as f32);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(sh - 1);
        let wy = fy - y0 as f32;
        for dx in 0..dw {
            let fx = ((dx as f32 + 0.5) * sx - 0.5).clamp(0.0, (sw - 1) as f32);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(sw - 1);
            let wx = fx - x0 as f32;
            let top = src[y0 * sw + x0] * (1.0 - wx) + src[y0 * sw + x1] * wx;
            let bot = src[y1 * sw + x0] * (1.0 - wx) + src[y1 * sw + x1] * wx;
            out[dy * dw + dx] = top * (1.0 - wy) + bot * wy;
        }
    }
    out
}

fn center_pad(src: &[f32], sh: usize, sw: usize, th: usize, tw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; th * tw];
    let oy = (th - sh) / 2;
    let ox = (tw - sw) / 2;
    for y in 0..sh {
        out[(y + oy) * tw + ox..(y + oy) * tw + ox + sw].copy_from_slice(&src[y * sw..(y + 1) * sw]);
    }
    out
}

/// Apply a rule to raw grayscale archives: geometry fix-up, three identical
/// channels, values scaled to [-1, 1] by x / 127.5 - 1.
pub fn preprocess(raw: &IdxImages, rule: Rule) -> Result<Vec<f32>> {
    match rule {
        Rule::Usps => {
            if raw.rows != 16 || raw.cols != 16 {
                return Err(Error::arg(
                    "preprocess",
                    format!("usps rule wants 16x16 input, got {}x{}", raw.rows, raw.cols),
                ));
            }
        }
        Rule::Passthrough => {
            if raw.rows != IMAGE_SIDE || raw.cols != IMAGE_SIDE {
                return Err(Error::arg(
                    "preprocess",
                    format!("passthrough rule wants {IMAGE_SIDE}x{IMAGE_SIDE} input, got {}x{}", raw.rows, raw.cols),
                ));
            }
        }
        Rule::Mnist => {}
    }
    let side = IMAGE_SIDE;
    let mut out = Vec::with_capacity(raw.n * 3 * side * side);
    for i in 0..raw.n {
        let gray: Vec<f32> = raw.pixels[i * raw.rows * raw.cols..(i + 1) * raw.rows * raw.cols]
            .iter()
            .map(|v| *v as f32)
            .collect();
        let plane = match rule {
            Rule::Mnist => resize_bilinear(&gray, raw.rows, raw.cols, side, side),
            Rule::Usps => {
                let padded = center_pad(&gray, 16, 16, 22, 22);
                resize_bilinear(&padded, 22, 22, side, side)
            }
            Rule::Passthrough => gray,
        };
        let scaled: Vec<f32> = plane.iter().map(|v| v / 127.5 - 1.0).collect();
        for _ in 0..3 {
            out.extend_from_slice(&scaled);
        }
    }
    Ok(out)
}
