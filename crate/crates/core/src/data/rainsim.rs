//! Synthetic rain: anti-aliased, optionally motion-blurred line segments added
//! to a clean background.
//!
//! Angles are degrees from vertical, positive clockwise on screen (rows grow
//! downwards), so a streak at +20° leans with its top end to the right.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::tensor::Tensor;

/// Where streak angles are drawn from.
#[derive(Clone, Debug, PartialEq)]
pub enum AngleSpec {
    /// Uniform choice among a few directions.
    Set(Vec<f64>),
    /// Uniform in `[lo, hi]`.
    Range(f64, f64),
}

impl AngleSpec {
    pub fn mean(&self) -> f64 {
        match self {
            AngleSpec::Set(v) => v.iter().sum::<f64>() / v.len() as f64,
            AngleSpec::Range(lo, hi) => 0.5 * (lo + hi),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match self {
            AngleSpec::Set(v) => v[rng.gen_range(0..v.len())],
            AngleSpec::Range(lo, hi) if lo == hi => *lo,
            AngleSpec::Range(lo, hi) => rng.gen_range(*lo..=*hi),
        }
    }
}

/// Streak parameters; `(lo, hi)` pairs are uniform ranges.
#[derive(Clone, Debug, PartialEq)]
pub struct StreakSpec {
    pub count: usize,
    pub angles: AngleSpec,
    /// Segment length in pixels.
    pub length: (f64, f64),
    /// Full line width in pixels.
    pub width: (f64, f64),
    pub intensity: (f64, f64),
    /// Motion-blur extent along the streak in pixels; 0 disables it.
    pub blur: f64,
}

impl Default for StreakSpec {
    fn default() -> Self {
        StreakSpec {
            count: 24,
            angles: AngleSpec::Range(-30.0, 30.0),
            length: (8.0, 20.0),
            width: (1.0, 2.0),
            intensity: (0.25, 0.6),
            blur: 0.0,
        }
    }
}

impl StreakSpec {
    pub fn validate(&self) -> Result<()> {
        let range_ok = |(lo, hi): (f64, f64), min: f64| lo.is_finite() && hi.is_finite() && min <= lo && lo <= hi;
        let angles_ok = match &self.angles {
            AngleSpec::Set(v) => !v.is_empty() && v.iter().all(|a| a.is_finite() && a.abs() <= 90.0),
            AngleSpec::Range(lo, hi) => range_ok((*lo, *hi), -90.0) && *hi <= 90.0,
        };
        if !angles_ok {
            return Err(Error::config(format!("streak angles {:?} must lie in [-90, 90]", self.angles)));
        }
        if !range_ok(self.length, 0.0) || !range_ok(self.width, 0.0) {
            return Err(Error::config("streak length and width ranges must be non-negative and ordered"));
        }
        if !range_ok(self.intensity, 0.0) || self.intensity.1 > 1.0 {
            return Err(Error::config("streak intensity range must lie in [0, 1]"));
        }
        if !(self.blur.is_finite() && self.blur >= 0.0) {
            return Err(Error::config("motion blur must be non-negative"));
        }
        Ok(())
    }
}

/// One rendered streak.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Streak {
    /// Centre `(row, col)` in pixel coordinates (pixel centres at integers).
    pub center: (f64, f64),
    pub angle: f64,
    pub length: f64,
    pub width: f64,
    pub intensity: f64,
}

impl Streak {
    /// Unit vector along the streak in `(row, col)`.
    pub fn direction(&self) -> (f64, f64) {
        let a = self.angle.to_radians();
        (a.cos(), -a.sin())
    }
}

/// Clean background, rain layer and their clamped sum.
#[derive(Clone, Debug)]
pub struct RainPair {
    /// `clamp(B + R, 0, 1)`.
    pub rainy: Tensor<f32>,
    pub clean: Tensor<f32>,
    /// Pre-clamp rain layer, `≥ 0`.
    pub rain: Tensor<f32>,
    pub seed: u64,
    pub streaks: Vec<Streak>,
}

/// Part of a unit-wide pixel footprint at distance `d` from the streak that
/// lies inside the band of half-width `hw`.
fn coverage(d: f64, hw: f64) -> f64 {
    ((d + 0.5).min(hw) - (d - 0.5).max(-hw)).clamp(0.0, 1.0)
}

/// Adds `s` to a single-channel `h × w` plane.
pub fn rasterize(plane: &mut [f64], h: usize, w: usize, s: &Streak, blur: f64) {
    let (dr, dc) = s.direction();
    let (half_len, hw) = (0.5 * s.length, 0.5 * s.width);
    // Blur averages copies shifted along the streak, one per pixel of extent.
    let taps = blur.ceil() as usize + 1;
    let shift = |k: usize| if taps == 1 { 0.0 } else { blur * (k as f64 / (taps - 1) as f64 - 0.5) };
    let reach = half_len + 0.5 * blur + hw + 1.0;
    let (r0, r1) = (
        (s.center.0 - reach).floor().max(0.0) as usize,
        ((s.center.0 + reach).ceil().max(0.0) as usize).min(h.saturating_sub(1)),
    );
    let (c0, c1) = (
        (s.center.1 - reach).floor().max(0.0) as usize,
        ((s.center.1 + reach).ceil().max(0.0) as usize).min(w.saturating_sub(1)),
    );
    if h == 0 || w == 0 || r0 > r1 || c0 > c1 {
        return;
    }
    for y in r0..=r1 {
        for x in c0..=c1 {
            let (py, px) = (y as f64 - s.center.0, x as f64 - s.center.1);
            let u = py * dr + px * dc;
            let v = -py * dc + px * dr;
            let mut cov = 0.0;
            for k in 0..taps {
                let along = (u - shift(k)).abs() - half_len;
                let d = (along.max(0.0).powi(2) + v * v).sqrt();
                cov += coverage(d, hw);
            }
            plane[y * w + x] += s.intensity * cov / taps as f64;
        }
    }
}

/// Draws `spec.count` streaks over `clean` (`[3, H, W]` in `[0, 1]`).
pub fn synth_rain(clean: &Tensor<f32>, spec: &StreakSpec, seed: u64) -> Result<RainPair> {
    spec.validate()?;
    let &[3, h, w] = clean.shape() else {
        return Err(Error::ShapeMismatch {
            op: "synth_rain",
            left: clean.shape().to_vec(),
            right: vec![3, 0, 0],
        });
    };
    if clean.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::config("background must lie in [0, 1]"));
    }
    let mut rng = stream_rng(seed, Stream::Data);
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, (lo, hi): (f64, f64)| if lo == hi { lo } else { rng.gen_range(lo..=hi) };
    let mut streaks = Vec::with_capacity(spec.count);
    let mut plane = vec![0.0f64; h * w];
    for _ in 0..spec.count {
        let s = Streak {
            center: (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64)),
            angle: spec.angles.sample(&mut rng),
            length: draw(&mut rng, spec.length),
            width: draw(&mut rng, spec.width),
            intensity: draw(&mut rng, spec.intensity),
        };
        rasterize(&mut plane, h, w, &s, spec.blur);
        streaks.push(s);
    }

    let rain_plane: Vec<f32> = plane.iter().map(|&v| v as f32).collect();
    let rain: Vec<f32> = rain_plane.iter().cycle().take(3 * h * w).copied().collect();
    let rainy = clean.data().iter().zip(&rain).map(|(&b, &r)| (b + r).clamp(0.0, 1.0)).collect();
    Ok(RainPair {
        rainy: Tensor::from_vec(&[3, h, w], rainy)?,
        clean: clean.clone(),
        rain: Tensor::from_vec(&[3, h, w], rain)?,
        seed,
        streaks,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Distance to the segment via the closest point on it, over every pixel.
    fn naive(h: usize, w: usize, s: &Streak) -> Vec<f64> {
        let (dr, dc) = s.direction();
        let a = (s.center.0 - dr * s.length / 2.0, s.center.1 - dc * s.length / 2.0);
        let b = (s.center.0 + dr * s.length / 2.0, s.center.1 + dc * s.length / 2.0);
        let mut out = vec![0.0; h * w];
        for y in 0..h {
            for x in 0..w {
                let p = (y as f64, x as f64);
                let ab = (b.0 - a.0, b.1 - a.1);
                let len2 = ab.0 * ab.0 + ab.1 * ab.1;
                let t = if len2 == 0.0 {
                    0.0
                } else {
                    (((p.0 - a.0) * ab.0 + (p.1 - a.1) * ab.1) / len2).clamp(0.0, 1.0)
                };
                let q = (a.0 + t * ab.0, a.1 + t * ab.1);
                let d = ((p.0 - q.0).powi(2) + (p.1 - q.1).powi(2)).sqrt();
                let hw = s.width / 2.0;
                let (lo, hi) = (if d - 0.5 > -hw { d - 0.5 } else { -hw }, if d + 0.5 < hw { d + 0.5 } else { hw });
                out[y * w + x] = if hi > lo { s.intensity * (hi - lo) } else { 0.0 };
            }
        }
        out
    }

    #[test]
    fn vertical_streak_matches_naive_rasterizer() {
        let (h, w) = (32, 24);
        let s = Streak {
            center: (15.3, 11.0),
            angle: 0.0,
            length: 12.0,
            width: 1.0,
            intensity: 0.5,
        };
        let mut plane = vec![0.0; h * w];
        rasterize(&mut plane, h, w, &s, 0.0);
        let oracle = naive(h, w, &s);
        let (sum, osum): (f64, f64) = (plane.iter().sum(), oracle.iter().sum());
        assert!((sum - osum).abs() < 1e-6, "{sum} vs {osum}");
        for y in 0..h {
            for x in 0..w {
                assert!((plane[y * w + x] - oracle[y * w + x]).abs() < 1e-12);
                if plane[y * w + x] > 0.0 {
                    assert!((x as f64 - 11.0).abs() <= 1.0, "column {x} lit");
                }
            }
        }
        assert!(plane.iter().any(|&v| v > 0.0));
    }

    #[test]
    fn tilted_streaks_match_naive_rasterizer() {
        let (h, w) = (40, 40);
        for (i, angle) in [-37.0, -5.0, 22.5, 45.0, 80.0].into_iter().enumerate() {
            let s = Streak {
                center: (19.7 + i as f64, 20.2 - i as f64),
                angle,
                length: 15.0,
                width: 1.7,
                intensity: 0.3,
            };
            let mut plane = vec![0.0; h * w];
            rasterize(&mut plane, h, w, &s, 0.0);
            for (a, b) in plane.iter().zip(naive(h, w, &s)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_angle_leans_top_to_the_right() {
        let s = Streak {
            center: (20.0, 20.0),
            angle: 30.0,
            length: 20.0,
            width: 1.0,
            intensity: 1.0,
        };
        let mut plane = vec![0.0; 41 * 41];
        rasterize(&mut plane, 41, 41, &s, 0.0);
        let peak = |row: usize| (0..41).max_by(|&a, &b| plane[row * 41 + a].total_cmp(&plane[row * 41 + b])).unwrap();
        assert!(peak(12) > peak(28), "top {} bottom {}", peak(12), peak(28));
    }

    #[test]
    fn zero_streaks_leave_background() {
        let b = Tensor::full(&[3, 8, 8], 0.4);
        let spec = StreakSpec {
            count: 0,
            ..Default::default()
        };
        let p = synth_rain(&b, &spec, 3).unwrap();
        assert_eq!(p.rainy.data(), b.data());
        assert!(p.rain.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn composition_is_additive_and_clamped() {
        let b = crate::rng::random_tensor::<f32>(&[3, 32, 32], 4);
        let b = Tensor::from_vec(&[3, 32, 32], b.data().iter().map(|v| v.abs()).collect()).unwrap();
        let spec = StreakSpec {
            blur: 3.0,
            ..Default::default()
        };
        let p = synth_rain(&b, &spec, 9).unwrap();
        let q = synth_rain(&b, &spec, 9).unwrap();
        assert_eq!(p.rainy.data(), q.rainy.data());
        assert_eq!(p.streaks, q.streaks);
        for ((&o, &bb), &r) in p.rainy.data().iter().zip(b.data()).zip(p.rain.data()) {
            assert!(r >= 0.0);
            assert_eq!(o, (bb + r).clamp(0.0, 1.0));
        }
        assert!(p.rain.data().iter().any(|&v| v > 0.0));
    }

    #[test]
    fn mean_angle_follows_spec() {
        for angles in [AngleSpec::Range(-10.0, 40.0), AngleSpec::Set(vec![-30.0, -15.0, 0.0, 15.0, 30.0])] {
            let spec = StreakSpec {
                count: 1000,
                angles: angles.clone(),
                ..Default::default()
            };
            let p = synth_rain(&Tensor::zeros(&[3, 16, 16]), &spec, 21).unwrap();
            let mean = p.streaks.iter().map(|s| s.angle).sum::<f64>() / 1000.0;
            assert!((mean - angles.mean()).abs() < 2.0, "{mean} vs {}", angles.mean());
        }
    }

    #[test]
    fn out_of_range_spec_is_rejected() {
        let bad = [
            StreakSpec {
                intensity: (0.5, 1.5),
                ..Default::default()
            },
            StreakSpec {
                angles: AngleSpec::Set(vec![]),
                ..Default::default()
            },
            StreakSpec {
                length: (5.0, 2.0),
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(matches!(synth_rain(&Tensor::zeros(&[3, 8, 8]), &spec, 0), Err(Error::Config(_))));
        }
    }
}
