//! Brute-force group convolution, written directly from the group-theoretic
//! definition
//!
//! ```text
//! out_k'(i) = sum_k sum_{h in H} f_k(h) * psi_k'k(i^-1 h)
//! ```
//!
//! with explicit group elements, composition and inverses. It shares no code
//! with the production layers and is only meant for test-sized inputs.

use super::ORIENTATIONS;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Domain a feature map or filter is defined on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    /// The translation group Z².
    Plane,
    /// Translations and 90° rotations.
    P4,
}

impl Domain {
    fn rotations(self) -> usize {
        match self {
            Domain::Plane => 1,
            Domain::P4 => ORIENTATIONS,
        }
    }
}

/// Input group `H` and output group `I` of a G-convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GroupSpec {
    pub input: Domain,
    pub output: Domain,
}

/// A p4 element `p -> R^rot p + t` acting on integer `(row, col)` points.
/// `R` is the counter-clockwise quarter turn `(i, j) -> (-j, i)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Element {
    rot: usize,
    t: (i64, i64),
}

fn rotate_point(p: (i64, i64), times: usize) -> (i64, i64) {
    (0..times % 4).fold(p, |(i, j), _| (-j, i))
}

impl Element {
    fn compose(self, other: Element) -> Element {
        let (ri, rj) = rotate_point(other.t, self.rot);
        Element {
            rot: (self.rot + other.rot) % 4,
            t: (self.t.0 + ri, self.t.1 + rj),
        }
    }

    fn inverse(self) -> Element {
        let back = (4 - self.rot) % 4;
        let (ri, rj) = rotate_point(self.t, back);
        Element { rot: back, t: (-ri, -rj) }
    }
}

/// Evaluates the G-convolution of `f` with `psi`.
///
/// * `f`: `[N, Kin, H, W]` for a planar input or `[N, Kin, 4, H, W]` on p4.
/// * `psi`: `[Kout, Kin, S, k, k]` with `S` the input rotations (1 or 4) and
///   spatial offsets centred on the middle tap.
/// * Returns `[N, Kout, H, W]` for planar output or `[N, Kout, 4, H, W]` on p4.
///
/// Feature maps are zero outside the image; the output is evaluated at every
/// pixel of the input grid.
pub fn g_conv_oracle(
    f: &Tensor<f64>,
    psi: &Tensor<f64>,
    bias: Option<&Tensor<f64>>,
    spec: GroupSpec,
) -> Result<Tensor<f64>> {
    let s_in = spec.input.rotations();
    let s_out = spec.output.rotations();
    let (n, kin, h, w) = match (spec.input, f.shape()) {
        (Domain::Plane, &[n, k, h, w]) => (n, k, h, w),
        (Domain::P4, &[n, k, 4, h, w]) => (n, k, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "g_conv_oracle input",
                left: f.shape().to_vec(),
                right: vec![],
            })
        }
    };
    let ps = psi.shape();
    if ps.len() != 5 || ps[1] != kin || ps[2] != s_in || ps[3] != ps[4] || ps[3] % 2 == 0 {
        return Err(Error::ShapeMismatch {
            op: "g_conv_oracle filter",
            left: f.shape().to_vec(),
            right: ps.to_vec(),
        });
    }
    let (kout, ks) = (ps[0], ps[3]);
    let half = (ks / 2) as i64;

    let f_at = |b: usize, c: usize, s: usize, y: (i64, i64)| -> f64 {
        f.data()[(((b * kin + c) * s_in + s) * h + y.0 as usize) * w + y.1 as usize]
    };
    // Filter as a function on H; zero outside its support. On the plane only
    // the point `g·0` matters, which is the translation part of `g`.
    let psi_at = |o: usize, c: usize, g: Element| -> f64 {
        let (di, dj) = g.t;
        let slice = if s_in == 1 { 0 } else { g.rot };
        if di.abs() > half || dj.abs() > half {
            return 0.0;
        }
        let (u, v) = ((di + half) as usize, (dj + half) as usize);
        psi.data()[(((o * kin + c) * s_in + slice) * ks + u) * ks + v]
    };

    let mut out = Vec::with_capacity(n * kout * s_out * h * w);
    for b in 0..n {
        for o in 0..kout {
            for r in 0..s_out {
                for xi in 0..h as i64 {
                    for xj in 0..w as i64 {
                        let i_inv = Element { rot: r, t: (xi, xj) }.inverse();
                        let mut acc = bias.map_or(0.0, |t| t.data()[o]);
                        for c in 0..kin {
                            for s in 0..s_in {
                                for yi in 0..h as i64 {
                                    for yj in 0..w as i64 {
                                        let hh = Element { rot: s, t: (yi, yj) };
                                        acc += f_at(b, c, s, (yi, yj)) * psi_at(o, c, i_inv.compose(hh));
                                    }
                                }
                            }
                        }
                        out.push(acc);
                    }
                }
            }
        }
    }
    let shape = match spec.output {
        Domain::Plane => vec![n, kout, h, w],
        Domain::P4 => vec![n, kout, ORIENTATIONS, h, w],
    };
    Tensor::from_vec(&shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_laws() {
        let a = Element { rot: 1, t: (2, -3) };
        let b = Element { rot: 3, t: (-1, 4) };
        let c = Element { rot: 2, t: (0, 5) };
        let id = Element { rot: 0, t: (0, 0) };
        assert_eq!(a.compose(a.inverse()), id);
        assert_eq!(a.inverse().compose(a), id);
        assert_eq!(a.compose(b).compose(c), a.compose(b.compose(c)));
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        // "up" (row -1) turns to "left" (col -1).
        assert_eq!(rotate_point((-1, 0), 1), (0, -1));
        assert_eq!(rotate_point((3, 7), 4), (3, 7));
    }

    #[test]
    fn hand_unrolled_lifting_case() {
        // 1x1x3x3 input, single 3x3 filter with one tap at offset (-1, -1):
        // out(x, r) = f(x + R^r(-1, -1)).
        let f = Tensor::from_vec(&[1, 1, 3, 3], (1..=9).map(f64::from).collect()).unwrap();
        let mut w = vec![0.0; 9];
        w[0] = 1.0;
        let psi = Tensor::from_vec(&[1, 1, 1, 3, 3], w).unwrap();
        let spec = GroupSpec {
            input: Domain::Plane,
            output: Domain::P4,
        };
        let out = g_conv_oracle(&f, &psi, None, spec).unwrap();
        let at = |r: usize, i: usize, j: usize| out.data()[r * 9 + i * 3 + j];
        // Centre pixel (1, 1): taps at (0,0), (2,0), (2,2), (0,2) for r = 0..3.
        assert_eq!([at(0, 1, 1), at(1, 1, 1), at(2, 1, 1), at(3, 1, 1)], [1.0, 7.0, 9.0, 3.0]);
        // Corner (0, 0) only sees in-range taps for r = 2.
        assert_eq!([at(0, 0, 0), at(1, 0, 0), at(2, 0, 0), at(3, 0, 0)], [0.0, 0.0, 5.0, 0.0]);
    }
}
