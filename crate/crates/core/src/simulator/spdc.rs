//! Synthetic biphoton source in the momentum (sensor) plane.

use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Momentum-anticorrelated photon pairs around a Gaussian beam envelope.
///
/// A pair is `r1 = c + d + e1`, `r2 = c - d + e2` with `d` drawn from the
/// envelope and independent jitters `e1, e2 ~ N(0, sigma_sum^2)`, so each
/// photon follows `N(c, envelope_width^2)` and `r1 + r2 ~ N(2c, 2 sigma_sum^2)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpdcSource {
    /// Mean number of pairs per frame.
    pub pairs_per_frame: f64,
    /// Per-photon jitter about perfect anticorrelation (pixels).
    pub sigma_sum: f64,
    /// Beam centre `(x, y)` in pixel coordinates; pixel `i` spans `[i, i+1)`.
    pub envelope_center: (f64, f64),
    /// Standard deviation of a single photon's position (pixels).
    pub envelope_width: f64,
    /// Mean number of uncorrelated photons per frame, envelope-distributed.
    #[serde(default)]
    pub background_per_frame: f64,
}

impl SpdcSource {
    pub fn validate(&self) -> Result<()> {
        if !(self.pairs_per_frame >= 0.0 && self.pairs_per_frame.is_finite()) {
            return Err(Error::invalid("pairs_per_frame", "must be finite and >= 0"));
        }
        if !(self.background_per_frame >= 0.0 && self.background_per_frame.is_finite()) {
            return Err(Error::invalid("background_per_frame", "must be finite and >= 0"));
        }
        if !(self.sigma_sum >= 0.0) {
            return Err(Error::invalid("sigma_sum", "must be >= 0"));
        }
        if !(self.envelope_width > self.sigma_sum) {
            return Err(Error::invalid(
                "envelope_width",
                "must exceed sigma_sum (individual photons are spread wider than the pair sum)",
            ));
        }
        Ok(())
    }

    /// Checks that the envelope lies on a `width x height` sensor out to 3 sigma.
    pub fn check_geometry(&self, width: usize, height: usize) -> Result<()> {
        self.validate()?;
        let (cx, cy) = self.envelope_center;
        let r = 3.0 * self.envelope_width;
        if cx - r < 0.0 || cy - r < 0.0 || cx + r > width as f64 || cy + r > height as f64 {
            return Err(Error::invalid(
                "envelope",
                format!(
                    "3-sigma envelope around ({cx}, {cy}) with width {} leaves the {width}x{height} sensor",
                    self.envelope_width
                ),
            ));
        }
        Ok(())
    }

    /// Continuous photon positions of one frame (pairs first, then background).
    pub fn draw_positions<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<(f64, f64)> {
        let (cx, cy) = self.envelope_center;
        let spread = (self.envelope_width.powi(2) - self.sigma_sum.powi(2)).sqrt();
        let d = Normal::new(0.0, spread).expect("valid spread");
        let env = Normal::new(0.0, self.envelope_width).expect("valid envelope");
        let jitter = Normal::new(0.0, self.sigma_sum).expect("valid jitter");
        let pairs = poisson_count(self.pairs_per_frame, rng);
        let singles = poisson_count(self.background_per_frame, rng);
        let mut out = Vec::with_capacity(2 * pairs + singles);
        for _ in 0..pairs {
            let (dx, dy) = (d.sample(rng), d.sample(rng));
            let (ex1, ey1, ex2, ey2) = (
                jitter.sample(rng),
                jitter.sample(rng),
                jitter.sample(rng),
                jitter.sample(rng),
            );
            out.push((cx + dx + ex1, cy + dy + ey1));
            out.push((cx - dx + ex2, cy - dy + ey2));
        }
        for _ in 0..singles {
            out.push((cx + env.sample(rng), cy + env.sample(rng)));
        }
        out
    }

    /// Photon counts per pixel of one frame; photons off the sensor are lost.
    pub fn draw_frame<R: Rng + ?Sized>(&self, width: usize, height: usize, rng: &mut R) -> Vec<u32> {
        let mut counts = vec![0u32; width * height];
        for (x, y) in self.draw_positions(rng) {
            let (px, py) = (x.floor(), y.floor());
            if px >= 0.0 && py >= 0.0 && (px as usize) < width && (py as usize) < height {
                counts[py as usize * width + px as usize] += 1;
            }
        }
        counts
    }
}

fn poisson_count<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> usize {
    if mean > 0.0 {
        Poisson::new(mean).expect("positive mean").sample(rng) as usize
    } else {
        0
    }
}
