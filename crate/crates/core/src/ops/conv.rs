//! Planar 2-D cross-correlation via im2col and GEMM, with large 32-bit
//! stride-1 layers routed to the Winograd path.

use crate::autograd::{record, BackwardOp};
use crate::error::{Error, Result};
use crate::ops::gemm::gemm;
use crate::ops::winograd;
use crate::tensor::{Float, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub(crate) fn new<F: Float>(input: &Tensor<F>, weight: &Tensor<F>, stride: usize, pad: usize) -> Result<Self> {
        input.expect_rank("conv2d input", 4)?;
        weight.expect_rank("conv2d weight", 4)?;
        let (n, cin, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2], input.shape()[3]);
        let (cout, wcin, kh, kw) = (weight.shape()[0], weight.shape()[1], weight.shape()[2], weight.shape()[3]);
        if wcin != cin {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                left: input.shape().to_vec(),
                right: weight.shape().to_vec(),
            });
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("conv2d kernel {kh}x{kw} must have odd extents")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d stride must be at least 1"));
        }
        let (ph, pw) = (h + 2 * pad, w + 2 * pad);
        if ph < kh || pw < kw {
            return Err(Error::config(format!(
                "conv2d input {h}x{w} with padding {pad} is smaller than kernel {kh}x{kw}"
            )));
        }
        if (ph - kh) % stride != 0 || (pw - kw) % stride != 0 {
            return Err(Error::config(format!(
                "conv2d output extent of {h}x{w}, kernel {kh}x{kw}, padding {pad} is not exact for stride {stride}"
            )));
        }
        Ok(ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh: (ph - kh) / stride + 1,
            ow: (pw - kw) / stride + 1,
        })
    }

    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn in_sample(&self) -> usize {
        self.cin * self.h * self.w
    }

    /// Output columns `[lo, hi)` whose input column `ox*stride + v - pad` is in range.
    fn valid_cols(&self, v: usize) -> (usize, usize) {
        let s = self.stride;
        let lo = if self.pad > v { (self.pad - v).div_ceil(s) } else { 0 };
        let hi = if self.w + self.pad > v {
            ((self.w + self.pad - v - 1) / s + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

/// Unfolds one sample `[cin, h, w]` into `[cin*kh*kw, oh*ow]`.
fn im2col<F: Float>(g: &ConvGeom, x: &[F], cols: &mut [F]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(v);
                for oy in 0..g.oh {
                    let out = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out.fill(F::zero());
                        continue;
                    }
                    let src = &xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out[..lo].fill(F::zero());
                    out[hi..].fill(F::zero());
                    if g.stride == 1 {
                        let start = lo + v - g.pad;
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for ox in lo..hi {
                            out[ox] = src[ox * g.stride + v - g.pad];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `[cin*kh*kw, oh*ow]` back onto `[cin, h, w]`.
fn col2im<F: Float>(g: &ConvGeom, cols: &[F], x: &mut [F]) {
    let plane = g.out_plane();
    for c in 0..g.cin {
        let xc = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for u in 0..g.kh {
            for v in 0..g.kw {
                let row = (c * g.kh + u) * g.kw + v;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = g.valid_cols(v);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + u) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut xc[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let line = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in lo..hi {
                        let ix = ox * g.stride + v - g.pad;
                        dst[ix] = dst[ix] + line[ox];
                    }
                }
            }
        }
    }
}

struct Conv2dBackward {
    geom: ConvGeom,
}

impl<F: Float> BackwardOp<F> for Conv2dBackward {
    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let g = &self.geom;
        let (input, weight) = (&inputs[0], &inputs[1]);
        let (patch, plane) = (g.patch(), g.out_plane());
        let out_sample = g.cout * plane;

        let mut cols = vec![F::zero(); patch * plane];

        let dx = input.requires_grad().then(|| {
            let mut dx = vec![F::zero(); input.numel()];
            for s in 0..g.n {
                let dy = &grad[s * out_sample..(s + 1) * out_sample];
                gemm(patch, g.cout, plane, weight.data(), true, dy, false, F::zero(), &mut cols);
                col2im(g, &cols, &mut dx[s * g.in_sample()..(s + 1) * g.in_sample()]);
            }
            dx
        });

        let dw = weight.requires_grad().then(|| {
            let mut dw = vec![F::zero(); weight.numel()];
            for s in 0..g.n {
                im2col(g, &input.data()[s * g.in_sample()..(s + 1) * g.in_sample()], &mut cols);
                let dy = &grad[s * out_sample..(s + 1) * out_sample];
                gemm(g.cout, plane, patch, dy, false, &cols, true, F::one(), &mut dw);
            }
            dw
        });

        let mut out = vec![dx, dw];
        if let Some(bias) = inputs.get(2) {
            out.push(bias.requires_grad().then(|| {
                let mut db = vec![F::zero(); g.cout];
                for s in 0..g.n {
                    for (o, acc) in db.iter_mut().enumerate() {
                        let base = s * out_sample + o * plane;
                        *acc = *acc + grad[base..base + plane].iter().copied().sum::<F>();
                    }
                }
                db
            }));
        }
        out
    }
}

fn check_bias<F: Float>(bias: Option<&Tensor<F>>, cout: usize) -> Result<()> {
    if let Some(b) = bias {
        b.expect_shape("conv2d bias", &[cout])?;
    }
    Ok(())
}

/// 2-D cross-correlation (no kernel flip) with zero padding.
///
/// `input` is `[N, Cin, H, W]`, `weight` is `[Cout, Cin, kh, kw]` with odd
/// kernel extents, `bias` is `[Cout]`.
pub fn conv2d<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    check_bias(bias, g.cout)?;
    if winograd::eligible::<F>(&g) {
        return winograd::conv2d(&g, input, weight, bias);
    }
    let (patch, plane) = (g.patch(), g.out_plane());
    let out_sample = g.cout * plane;
    let mut out = vec![F::zero(); g.n * out_sample];
    let mut cols = vec![F::zero(); patch * plane];
    for s in 0..g.n {
        let y = &mut out[s * out_sample..(s + 1) * out_sample];
        if let Some(b) = bias {
            for (o, &bv) in b.data().iter().enumerate() {
                y[o * plane..(o + 1) * plane].fill(bv);
            }
        }
        let x = &input.data()[s * g.in_sample()..(s + 1) * g.in_sample()];
        if g.kh == 1 && g.kw == 1 && g.stride == 1 && g.pad == 0 {
            gemm(g.cout, patch, plane, weight.data(), false, x, false, F::one(), y);
        } else {
            im2col(&g, x, &mut cols);
            gemm(g.cout, patch, plane, weight.data(), false, &cols, false, F::one(), y);
        }
    }
    let mut ins = vec![input, weight];
    if let Some(b) = bias {
        ins.push(b);
    }
    let grad_fn = record(&ins, Conv2dBackward { geom: g });
    Ok(Tensor::from_op(vec![g.n, g.cout, g.oh, g.ow], out, grad_fn))
}

/// Direct nested-loop cross-correlation. Reference only; never differentiable.
pub fn conv2d_direct<F: Float>(
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<F>> {
    let g = ConvGeom::new(input, weight, stride, padding)?;
    check_bias(bias, g.cout)?;
    let (x, w) = (input.data(), weight.data());
    let mut out = Vec::with_capacity(g.n * g.cout * g.out_plane());
    for s in 0..g.n {
        for o in 0..g.cout {
            for oy in 0..g.oh {
                for ox in 0..g.ow {
                    let mut acc = bias.map_or(F::zero(), |b| b.data()[o]);
                    for c in 0..g.cin {
                        for u in 0..g.kh {
                            for v in 0..g.kw {
                                let iy = (oy * g.stride + u) as isize - g.pad as isize;
                                let ix = (ox * g.stride + v) as isize - g.pad as isize;
                                if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                    continue;
                                }
                                let xv = x[((s * g.cin + c) * g.h + iy as usize) * g.w + ix as usize];
                                let wv = w[((o * g.cin + c) * g.kh + u) * g.kw + v];
                                acc = acc + xv * wv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::from_vec(&[g.n, g.cout, g.oh, g.ow], out)
}
