use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{render_profile, PixelRect, StreakParams};
use crate::error::{domain, Error, Result};

/// A single-channel frame `Y` with its noise level.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major, `pixels[i * width + j] = Y_{i,j}`.
    pub pixels: Vec<f32>,
    pub sigma: f64,
    pub seed: Option<u64>,
    /// The streak the frame was synthesized with, if any.
    pub streak: Option<StreakParams>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>, sigma: f64) -> Result<Self> {
        let f = Self {
            width,
            height,
            pixels,
            sigma,
            seed: None,
            streak: None,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return domain("frame dimensions must be positive");
        }
        if self.pixels.len() != self.width * self.height {
            return domain(format!(
                "raster has {} pixels, expected {}x{}",
                self.pixels.len(),
                self.width,
                self.height
            ));
        }
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return domain(format!("sigma {} must be positive", self.sigma));
        }
        Ok(())
    }

    pub fn bounds(&self) -> PixelRect {
        PixelRect::full(self.width, self.height)
    }

    pub fn at(&self, row: usize, col: usize) -> f64 {
        f64::from(self.pixels[row * self.width + col])
    }

    pub fn row(&self, row: usize) -> &[f32] {
        &self.pixels[row * self.width..(row + 1) * self.width]
    }

    /// Smallest and largest pixel value.
    pub fn range(&self) -> (f32, f32) {
        self.pixels
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// `Y = A·S + ε` with `ε` i.i.d. `N(0, σ²)`; `streak = None` gives pure noise.
pub fn synth_frame<R: Rng + ?Sized>(
    width: usize,
    height: usize,
    streak: Option<&StreakParams>,
    sigma: f64,
    rng: &mut R,
) -> Result<Frame> {
    if width == 0 || height == 0 {
        return domain("frame dimensions must be positive");
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return domain(format!("sigma {sigma} must be positive"));
    }
    let full = PixelRect::full(width, height);
    let mut mean = vec![0.0f64; width * height];
    if let Some(s) = streak {
        s.check_inside(width, height)?;
        let p = render_profile(s, &full)?;
        for (m, v) in mean.iter_mut().zip(&p.values) {
            *m = s.amplitude * v;
        }
    }
    let pixels = mean
        .iter()
        .map(|&m| {
            let z: f64 = StandardNormal.sample(rng);
            (m + sigma * z) as f32
        })
        .collect();
    Ok(Frame {
        width,
        height,
        pixels,
        sigma,
        seed: None,
        streak: streak.copied(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct PgmScale {
    min: f32,
    max: f32,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    width: usize,
    height: usize,
    sigma: f64,
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    streak: Option<StreakParams>,
    pgm_scale: PgmScale,
}

/// Sidecar path for a raster path: same stem, `.json` extension.
pub fn sidecar_path(raster: &Path) -> PathBuf {
    raster.with_extension("json")
}

fn scale_of(frame: &Frame) -> PgmScale {
    let (min, max) = frame.range();
    PgmScale { min, max }
}

/// Writes the little-endian `f32` raster to `raster` and its JSON sidecar next to it.
pub fn write_frame(frame: &Frame, raster: &Path) -> Result<()> {
    frame.validate()?;
    if sidecar_path(raster) == raster {
        return Err(Error::Usage(format!(
            "raster path {} would collide with its .json sidecar",
            raster.display()
        )));
    }
    let mut bytes = Vec::with_capacity(frame.pixels.len() * 4);
    for v in &frame.pixels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(raster, bytes)?;
    let sidecar = Sidecar {
        width: frame.width,
        height: frame.height,
        sigma: frame.sigma,
        seed: frame.seed,
        streak: frame.streak,
        pgm_scale: scale_of(frame),
    };
    fs::write(sidecar_path(raster), serde_json::to_string_pretty(&sidecar)?)?;
    Ok(())
}

/// Reads a frame written by [`write_frame`].
pub fn read_frame(raster: &Path) -> Result<Frame> {
    let corrupt = |reason: String| Error::CorruptFrame {
        path: raster.to_path_buf(),
        reason,
    };
    let meta = fs::read_to_string(sidecar_path(raster))
        .map_err(|e| corrupt(format!("sidecar unreadable: {e}")))?;
    let sidecar: Sidecar =
        serde_json::from_str(&meta).map_err(|e| corrupt(format!("sidecar invalid: {e}")))?;
    let bytes = fs::read(raster)?;
    let expected = sidecar
        .width
        .checked_mul(sidecar.height)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| corrupt("dimensions overflow".into()))?;
    if bytes.len() != expected {
        return Err(corrupt(format!(
            "raster has {} bytes, sidecar implies {expected}",
            bytes.len()
        )));
    }
    let pixels = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let frame = Frame {
        width: sidecar.width,
        height: sidecar.height,
        pixels,
        sigma: sidecar.sigma,
        seed: sidecar.seed,
        streak: sidecar.streak,
    };
    frame.validate().map_err(|e| corrupt(e.to_string()))?;
    Ok(frame)
}

/// Exports a 16-bit binary PGM (P5, maxval 65535) with linear min-max scaling.
///
/// The scaling is the `pgm_scale` recorded by [`write_frame`].
pub fn write_pgm(frame: &Frame, path: &Path) -> Result<()> {
    frame.validate()?;
    let PgmScale { min, max } = scale_of(frame);
    let span = f64::from(max) - f64::from(min);
    let mut out = Vec::with_capacity(frame.pixels.len() * 2 + 32);
    write!(out, "P5\n{} {}\n65535\n", frame.width, frame.height)?;
    for &v in &frame.pixels {
        let level = if span > 0.0 {
            ((f64::from(v) - f64::from(min)) / span * 65535.0).round() as u16
        } else {
            0
        };
        out.extend_from_slice(&level.to_be_bytes());
    }
    fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = StreakParams::new(10.0, 5.0, 12.0, 30.0, 2.0, 1.0).unwrap();
        let mut f = synth_frame(24, 40, Some(&s), 1.5, &mut RngStream::new(3, 0)).unwrap();
        f.seed = Some(3);
        let path = dir.path().join("f.f32");
        write_frame(&f, &path).unwrap();
        let g = read_frame(&path).unwrap();
        assert_eq!(f, g);
        assert!(f.pixels.iter().zip(&g.pixels).all(|(a, b)| a.to_bits() == b.to_bits()));
    }

    #[test]
    fn truncated_raster_is_corrupt() {
        let dir = tempfile::tempdir().unwrap();
        let f = synth_frame(8, 8, None, 1.0, &mut RngStream::new(1, 0)).unwrap();
        let path = dir.path().join("f.f32");
        write_frame(&f, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_frame(&path), Err(Error::CorruptFrame { .. })));
    }

    #[test]
    fn pgm_header_and_size() {
        let dir = tempfile::tempdir().unwrap();
        let f = synth_frame(5, 3, None, 1.0, &mut RngStream::new(1, 0)).unwrap();
        let path = dir.path().join("f.pgm");
        write_pgm(&f, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        let header = b"P5\n5 3\n65535\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 30);
        let levels: Vec<u16> = bytes[header.len()..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(*levels.iter().max().unwrap(), 65535);
        assert_eq!(*levels.iter().min().unwrap(), 0);
    }

    #[test]
    fn noiseless_limit_is_the_profile() {
        let s = StreakParams::new(10.0, 5.0, 12.0, 30.0, 1.0, 1.0).unwrap();
        let f = synth_frame(24, 40, Some(&s), 1e-300, &mut RngStream::new(3, 0)).unwrap();
        let p = render_profile(&s, &f.bounds()).unwrap();
        for (a, b) in f.pixels.iter().zip(&p.values) {
            assert_eq!(*a, *b as f32);
        }
    }
}
