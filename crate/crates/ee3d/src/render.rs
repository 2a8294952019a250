//! Deterministic image panels.
//!
//! Palette: background white; positive-polarity events red
//! `(220, 40, 40)`; negative-polarity events blue `(40, 80, 220)`. An
//! event's colour strength grows with its LNES value (later in the window
//! is stronger), and positive is drawn over negative. Heatmaps and masks
//! are grey, skeletons green with yellow joints.

use ee3d_core::event::LnesFrame;
use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::scene::{Mask, Skeleton16, PARENTS};
use ee3d_core::{MAP_HEIGHT, MAP_WIDTH, NUM_JOINTS};

use crate::formats::image::{to_byte, Image};

pub const BACKGROUND: [u8; 3] = [255, 255, 255];
pub const POSITIVE: [u8; 3] = [220, 40, 40];
pub const NEGATIVE: [u8; 3] = [40, 80, 220];
pub const BONE: [u8; 3] = [30, 170, 60];
pub const JOINT: [u8; 3] = [240, 200, 20];

fn blend(under: [u8; 3], over: [u8; 3], a: f32) -> [u8; 3] {
    let mix = |u: u8, o: u8| (u as f32 + (o as f32 - u as f32) * a).round() as u8;
    [mix(under[0], over[0]), mix(under[1], over[1]), mix(under[2], over[2])]
}

fn strength(v: f32) -> f32 {
    if v > 0.0 {
        0.35 + 0.65 * v.min(1.0)
    } else {
        0.0
    }
}

pub fn render_lnes(f: &LnesFrame) -> Image {
    let mut img = Image::filled_rgb(f.width, f.height, BACKGROUND);
    let (pos, neg) = (f.channel(0), f.channel(1));
    for y in 0..f.height {
        for x in 0..f.width {
            let i = y * f.width + x;
            if pos[i] == 0.0 && neg[i] == 0.0 {
                continue;
            }
            let c = blend(blend(BACKGROUND, NEGATIVE, strength(neg[i])), POSITIVE, strength(pos[i]));
            img.put(x, y, &c);
        }
    }
    img
}

/// Per-pixel maximum over joints, upscaled by `scale`.
pub fn render_heatmaps(maps: &[f32], scale: usize) -> Image {
    let plane = MAP_HEIGHT * MAP_WIDTH;
    let (w, h) = (MAP_WIDTH * scale, MAP_HEIGHT * scale);
    let mut img = Image::new(w, h, 1);
    for y in 0..h {
        for x in 0..w {
            let i = (y / scale) * MAP_WIDTH + x / scale;
            let v = (0..NUM_JOINTS).map(|j| maps[j * plane + i]).fold(0.0f32, f32::max);
            img.put(x, y, &[to_byte(v)]);
        }
    }
    img
}

pub fn render_mask(m: &Mask, scale: usize) -> Image {
    let mut img = Image::new(m.width * scale, m.height * scale, 1);
    for y in 0..img.height {
        for x in 0..img.width {
            img.put(x, y, &[to_byte(m.get(y / scale, x / scale))]);
        }
    }
    img
}

/// Pixel positions of joints that project inside the image.
pub fn project_skeleton(s: &Skeleton16, intr: &FisheyeIntrinsics) -> [Option<[f64; 2]>; NUM_JOINTS] {
    let mut out = [None; NUM_JOINTS];
    for (o, &p) in out.iter_mut().zip(&s.joints) {
        *o = intr.project(p).ok().filter(|px| intr.in_image(*px));
    }
    out
}

fn line(img: &mut Image, a: [f64; 2], b: [f64; 2], c: [u8; 3]) {
    let n = ((b[0] - a[0]).abs().max((b[1] - a[1]).abs()).ceil() as usize).max(1);
    for k in 0..=n {
        let t = k as f64 / n as f64;
        dot(img, [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t], 0, c);
    }
}

fn dot(img: &mut Image, p: [f64; 2], r: i64, c: [u8; 3]) {
    let (cx, cy) = (p[0].round() as i64, p[1].round() as i64);
    for y in cy - r..=cy + r {
        for x in cx - r..=cx + r {
            if x >= 0 && y >= 0 && (x as usize) < img.width && (y as usize) < img.height {
                img.put(x as usize, y as usize, &c);
            }
        }
    }
}

/// Projected skeleton drawn over `base` (an RGB image of sensor size).
pub fn render_pose(s: &Skeleton16, intr: &FisheyeIntrinsics, base: Option<Image>) -> Image {
    let mut img = base.unwrap_or_else(|| Image::filled_rgb(intr.width, intr.height, BACKGROUND));
    let px = project_skeleton(s, intr);
    for (j, &parent) in PARENTS.iter().enumerate() {
        if let (Some(a), Some(b)) = (px.get(parent).copied().flatten(), px[j]) {
            line(&mut img, a, b, BONE);
        }
    }
    for p in px.iter().flatten() {
        dot(&mut img, *p, 1, JOINT);
    }
    img
}

/// Panels placed left to right on a white canvas; grey panels are
/// expanded to RGB.
pub fn side_by_side(panels: &[Image]) -> Image {
    let h = panels.iter().map(|p| p.height).max().unwrap_or(0);
    let w: usize = panels.iter().map(|p| p.width).sum();
    let mut out = Image::filled_rgb(w, h, BACKGROUND);
    let mut x0 = 0;
    for p in panels {
        for y in 0..p.height {
            for x in 0..p.width {
                let v = p.pixel(x, y);
                let rgb = if p.channels == 1 { [v[0]; 3] } else { [v[0], v[1], v[2]] };
                out.put(x0 + x, y, &rgb);
            }
        }
        x0 += p.width;
    }
    out
}
