//! Plain-text fisheye intrinsics:
//!
//! ```text
//! poly: a0 a1 a2 a3 a4
//! center: cx cy
//! affine: c d e
//! inv_poly: b0 b1 ...     (optional, fitted when absent)
//! size: width height      (optional, defaults to 256 192)
//! ```

use std::fmt::Write as _;
use std::path::Path;

use ee3d_core::fisheye::FisheyeIntrinsics;
use ee3d_core::{LNES_HEIGHT, LNES_WIDTH};

use crate::error::{Error, IoContext, Result};

fn numbers(key: &str, rest: &str) -> Result<Vec<f64>> {
    rest.split_whitespace()
        .map(|t| t.parse::<f64>().map_err(|_| Error::format(format!("{key}: bad number '{t}'"))))
        .collect()
}

fn fixed<const N: usize>(key: &str, v: Option<Vec<f64>>) -> Result<[f64; N]> {
    let v = v.ok_or_else(|| Error::format(format!("intrinsics: missing '{key}'")))?;
    v.try_into().map_err(|v: Vec<f64>| Error::format(format!("{key}: expected {N} values, got {}", v.len())))
}

pub fn parse_intrinsics(text: &str) -> Result<FisheyeIntrinsics> {
    let (mut poly, mut center, mut affine, mut inv, mut size) = (None, None, None, None, None);
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, rest) = line.split_once(':').ok_or_else(|| Error::format(format!("intrinsics: expected 'key: values', got '{line}'")))?;
        let key = key.trim();
        let vals = numbers(key, rest)?;
        let slot = match key {
            "poly" => &mut poly,
            "center" => &mut center,
            "affine" => &mut affine,
            "inv_poly" => &mut inv,
            "size" => &mut size,
            other => return Err(Error::format(format!("intrinsics: unknown key '{other}'"))),
        };
        *slot = Some(vals);
    }
    let [w, h] = match size {
        Some(_) => fixed::<2>("size", size)?,
        None => [LNES_WIDTH as f64, LNES_HEIGHT as f64],
    };
    if !(w >= 1.0 && h >= 1.0 && w.fract() == 0.0 && h.fract() == 0.0) {
        return Err(Error::format("size: width and height must be positive integers"));
    }
    Ok(FisheyeIntrinsics::new(
        fixed::<5>("poly", poly)?,
        fixed::<2>("center", center)?,
        fixed::<3>("affine", affine)?,
        inv,
        w as usize,
        h as usize,
    )?)
}

/// Writes every field with round-trip precision.
pub fn format_intrinsics(intr: &FisheyeIntrinsics) -> String {
    let join = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    let _ = writeln!(s, "poly: {}", join(&intr.poly));
    let _ = writeln!(s, "center: {}", join(&intr.center));
    let _ = writeln!(s, "affine: {}", join(&intr.affine));
    let _ = writeln!(s, "inv_poly: {}", join(&intr.inverse_poly));
    let _ = writeln!(s, "size: {} {}", intr.width, intr.height);
    s
}

pub fn read_intrinsics(path: &Path) -> Result<FisheyeIntrinsics> {
    parse_intrinsics(&std::fs::read_to_string(path).at(path)?)
}

pub fn write_intrinsics(path: &Path, intr: &FisheyeIntrinsics) -> Result<()> {
    std::fs::write(path, format_intrinsics(intr)).at(path)
}
