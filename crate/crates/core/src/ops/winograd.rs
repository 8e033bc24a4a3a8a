//! Winograd minimal-filtering convolution `F(m×m, r×r)` on 8×8 tiles for
//! stride-1, size-preserving convolutions.
//!
//! With interpolation points `{0, ±1, ±2, ±1/2, ∞}` the transforms are
//!
//! ```text
//! Y = Aᵀ [ (G g Gᵀ) ⊙ (Bᵀ d B) ] A      m = 9 - r
//! ```
//!
//! and the channel sum becomes 64 independent GEMMs. The backward pass is the
//! exact adjoint of these steps, so it differentiates the computed function
//! rather than the ideal convolution.
//!
//! Activations are staged channel-last so a tile cell is a contiguous run of
//! channels, and tiles are processed in blocks of whole tile rows so the
//! per-block transform buffers stay cache-resident.

use crate::autograd::{record, BackwardOp};
use crate::error::Result;
use crate::ops::conv::ConvGeom;
use crate::ops::gemm::gemm;
use crate::tensor::{Float, Tensor};

const ALPHA: usize = 8;
const CELLS: usize = ALPHA * ALPHA;
/// Channels transformed together.
const LANES: usize = 8;
/// Target tiles per block.
const BLOCK_TILES: usize = 128;
const POINTS: [f64; ALPHA - 1] = [0.0, 1.0, -1.0, 2.0, -2.0, 0.5, -0.5];

type Mat<F> = [[F; ALPHA]; ALPHA];

/// Transform matrices, zero-padded to 8×8. `at` uses rows `0..m`, `g` columns `0..r`.
#[derive(Clone, Copy)]
struct Plan<F> {
    m: usize,
    r: usize,
    bt: Mat<F>,
    b: Mat<F>,
    at: Mat<F>,
    a: Mat<F>,
    g: Mat<F>,
    gt: Mat<F>,
}

/// Ascending coefficients of `prod (x - q)`.
fn poly_from_roots(roots: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut c = vec![1.0];
    for q in roots {
        let mut next = vec![0.0; c.len() + 1];
        for (i, &v) in c.iter().enumerate() {
            next[i + 1] += v;
            next[i] -= q * v;
        }
        c = next;
    }
    c
}

fn transpose<F: Float>(m: &Mat<F>) -> Mat<F> {
    let mut t = [[F::zero(); ALPHA]; ALPHA];
    for (i, row) in m.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            t[j][i] = v;
        }
    }
    t
}

impl<F: Float> Plan<F> {
    fn new(r: usize) -> Self {
        assert!(r % 2 == 1 && (3..=7).contains(&r));
        let m = ALPHA + 1 - r;
        let z = [[0.0f64; ALPHA]; ALPHA];
        let (mut at, mut g, mut bt) = (z, z, z);
        for (j, &p) in POINTS.iter().enumerate() {
            for (i, row) in at.iter_mut().take(m).enumerate() {
                row[j] = p.powi(i as i32);
            }
            let others = || POINTS.iter().copied().filter(move |&q| q != p);
            let f: f64 = others().map(|q| p - q).product();
            for (k, v) in g[j].iter_mut().take(r).enumerate() {
                *v = p.powi(k as i32) / f;
            }
            bt[j][..ALPHA - 1].copy_from_slice(&poly_from_roots(others()));
        }
        at[m - 1][ALPHA - 1] = 1.0;
        g[ALPHA - 1][r - 1] = 1.0;
        bt[ALPHA - 1].copy_from_slice(&poly_from_roots(POINTS.iter().copied()));

        let cast = |src: &[[f64; ALPHA]; ALPHA]| src.map(|row| row.map(F::from_f64_lossy));
        let (at, g, bt) = (cast(&at), cast(&g), cast(&bt));
        Plan {
            m,
            r,
            bt,
            b: transpose(&bt),
            at,
            a: transpose(&at),
            g,
            gt: transpose(&g),
        }
    }
}

type Lanes<F> = [F; LANES];

/// `out = l · x · rᵀ` on every lane. `x` is read through `load` on its
/// `rows_in × cols_in` support (zero elsewhere) and the leading
/// `rows_out × cols_out` corner of `out` is handed to `store`.
#[inline(always)]
fn transform<F: Float>(
    l: &Mat<F>,
    r: &Mat<F>,
    (rows_in, cols_in): (usize, usize),
    (rows_out, cols_out): (usize, usize),
    load: impl Fn(usize, usize) -> Lanes<F>,
    mut store: impl FnMut(usize, usize, Lanes<F>),
) {
    let mut t = [[[F::zero(); LANES]; ALPHA]; ALPHA];
    for k in 0..rows_in {
        let mut row = [[F::zero(); LANES]; ALPHA];
        for (j, cell) in row.iter_mut().take(cols_in).enumerate() {
            *cell = load(k, j);
        }
        for (trow, lrow) in t.iter_mut().zip(l) {
            let c = lrow[k];
            if c == F::zero() {
                continue;
            }
            for (tc, x) in trow.iter_mut().take(cols_in).zip(&row) {
                for q in 0..LANES {
                    tc[q] = tc[q] + c * x[q];
                }
            }
        }
    }
    for (i, trow) in t.iter().take(rows_out).enumerate() {
        for (j, rrow) in r.iter().take(cols_out).enumerate() {
            let mut acc = [F::zero(); LANES];
            for (x, &c) in trow.iter().take(cols_in).zip(rrow) {
                if c == F::zero() {
                    continue;
                }
                for q in 0..LANES {
                    acc[q] = acc[q] + c * x[q];
                }
            }
            store(i, j, acc);
        }
    }
}

/// Scalar `l · x · rᵀ`.
fn sandwich1<F: Float>(l: &Mat<F>, x: &Mat<F>, r: &Mat<F>) -> Mat<F> {
    let mut t = [[F::zero(); ALPHA]; ALPHA];
    for i in 0..ALPHA {
        for j in 0..ALPHA {
            t[i][j] = (0..ALPHA).fold(F::zero(), |acc, k| acc + l[i][k] * x[k][j]);
        }
    }
    let mut out = [[F::zero(); ALPHA]; ALPHA];
    for i in 0..ALPHA {
        for j in 0..ALPHA {
            out[i][j] = (0..ALPHA).fold(F::zero(), |acc, k| acc + t[i][k] * r[j][k]);
        }
    }
    out
}

/// Tile grid of one convolution.
///
/// Inputs are staged as `[n, hp, wp, cin]` with the image at `(pad, pad)`,
/// outputs as `[n, th·m, tw·m, cout]`; every tile lies fully inside its
/// staging buffer.
#[derive(Clone, Copy)]
struct Tiling {
    n: usize,
    cin: usize,
    cout: usize,
    m: usize,
    th: usize,
    tw: usize,
}

impl Tiling {
    fn new(g: &ConvGeom, m: usize) -> Self {
        Tiling {
            n: g.n,
            cin: g.cin,
            cout: g.cout,
            m,
            th: g.h.div_ceil(m),
            tw: g.w.div_ceil(m),
        }
    }

    fn hp(&self) -> usize {
        self.th * self.m + ALPHA - self.m
    }

    fn wp(&self) -> usize {
        self.tw * self.m + ALPHA - self.m
    }

    fn ho(&self) -> usize {
        self.th * self.m
    }

    fn wo(&self) -> usize {
        self.tw * self.m
    }

    fn block_rows(&self) -> usize {
        (BLOCK_TILES / self.tw).max(1)
    }

    fn max_block_tiles(&self) -> usize {
        self.block_rows().min(self.n * self.th) * self.tw
    }

    /// `(first_row, rows)` over tile rows of all samples.
    fn blocks(&self) -> impl Iterator<Item = (usize, usize)> {
        let total = self.n * self.th;
        let step = self.block_rows();
        (0..total).step_by(step).map(move |row0| (row0, step.min(total - row0)))
    }

    /// `(sample, tile_row, tile_col, local_tile)` for every tile of a block.
    #[inline(always)]
    fn tile(&self, row0: usize, t: usize) -> (usize, usize, usize, usize) {
        let row = row0 + t / self.tw;
        (row / self.th, row % self.th, t % self.tw, t)
    }
}

/// `[n, c, h, w]` into a zeroed channel-last `[n, ph, pw, c]` at `(off, off)`.
fn stage<F: Float>(x: &[F], c: usize, h: usize, w: usize, ph: usize, pw: usize, off: usize) -> Vec<F> {
    let n = x.len() / (c * h * w);
    let mut out = vec![F::zero(); n * ph * pw * c];
    for s in 0..n {
        for y in 0..h {
            let dst = &mut out[((s * ph + y + off) * pw + off) * c..][..w * c];
            for ch in 0..c {
                let src = &x[((s * c + ch) * h + y) * w..][..w];
                for (xx, &v) in src.iter().enumerate() {
                    dst[xx * c + ch] = v;
                }
            }
        }
    }
    out
}

/// Inverse of [`stage`]: the `h × w` window at `(off, off)` back in `[n, c, h, w]`.
fn unstage<F: Float>(xs: &[F], c: usize, ph: usize, pw: usize, h: usize, w: usize, off: usize) -> Vec<F> {
    let n = xs.len() / (c * ph * pw);
    let mut out = vec![F::zero(); n * c * h * w];
    for s in 0..n {
        for y in 0..h {
            let src = &xs[((s * ph + y + off) * pw + off) * c..][..w * c];
            for ch in 0..c {
                let dst = &mut out[((s * c + ch) * h + y) * w..][..w];
                for (xx, d) in dst.iter_mut().enumerate() {
                    *d = src[xx * c + ch];
                }
            }
        }
    }
    out
}

/// First `len` lanes of `src`, zero-padded.
#[inline(always)]
fn read<F: Float>(src: &[F], len: usize) -> Lanes<F> {
    let mut v = [F::zero(); LANES];
    if len == LANES {
        v.copy_from_slice(&src[..LANES]);
    } else {
        v[..len].copy_from_slice(&src[..len]);
    }
    v
}

#[inline(always)]
fn write<F: Float>(dst: &mut [F], v: &Lanes<F>, len: usize) {
    if len == LANES {
        dst[..LANES].copy_from_slice(v);
    } else {
        dst[..len].copy_from_slice(&v[..len]);
    }
}

#[inline(always)]
fn add_into<F: Float>(dst: &mut [F], v: &Lanes<F>, len: usize) {
    if len == LANES {
        for (d, &x) in dst[..LANES].iter_mut().zip(v) {
            *d = *d + x;
        }
    } else {
        for (d, &x) in dst[..len].iter_mut().zip(v) {
            *d = *d + x;
        }
    }
}

/// Offset of cell `(i, j)` of tile `t` in a `[CELLS, tb, c]` block buffer.
#[inline(always)]
fn cell_at(i: usize, j: usize, tb: usize, c: usize, t: usize) -> usize {
    ((i * ALPHA + j) * tb + t) * c
}

const FULL: (usize, usize) = (ALPHA, ALPHA);

/// `Bᵀ d B` for every tile of a block into `v: [CELLS, tb, cin]`.
#[inline(always)]
fn input_block<F: Float>(p: &Plan<F>, tl: &Tiling, xs: &[F], row0: usize, rows: usize, v: &mut [F]) {
    let (c, m, tb, wp) = (tl.cin, tl.m, rows * tl.tw, tl.wp());
    for t in 0..tb {
        let (s, ti, tj, t) = tl.tile(row0, t);
        let base = (s * tl.hp() + ti * m) * wp + tj * m;
        for c0 in (0..c).step_by(LANES) {
            let len = LANES.min(c - c0);
            transform(
                &p.bt,
                &p.bt,
                FULL,
                FULL,
                |k, j| read(&xs[(base + k * wp + j) * c + c0..], len),
                |i, j, x| write(&mut v[cell_at(i, j, tb, c, t) + c0..], &x, len),
            );
        }
    }
}

/// Adjoint of [`input_block`]: adds `B · dv · Bᵀ` into the staged input gradient.
#[inline(always)]
fn input_block_adjoint<F: Float>(p: &Plan<F>, tl: &Tiling, dv: &[F], row0: usize, rows: usize, dxs: &mut [F]) {
    let (c, m, tb, wp) = (tl.cin, tl.m, rows * tl.tw, tl.wp());
    for t in 0..tb {
        let (s, ti, tj, t) = tl.tile(row0, t);
        let base = (s * tl.hp() + ti * m) * wp + tj * m;
        for c0 in (0..c).step_by(LANES) {
            let len = LANES.min(c - c0);
            transform(
                &p.b,
                &p.b,
                FULL,
                FULL,
                |k, j| read(&dv[cell_at(k, j, tb, c, t) + c0..], len),
                |i, j, x| add_into(&mut dxs[(base + i * wp + j) * c + c0..], &x, len),
            );
        }
    }
}

/// `Aᵀ M A + bias` for every tile of a block into the staged output.
#[inline(always)]
fn output_block<F: Float>(p: &Plan<F>, tl: &Tiling, mm: &[F], bias: &[F], row0: usize, rows: usize, ys: &mut [F]) {
    let (c, m, tb, wo) = (tl.cout, tl.m, rows * tl.tw, tl.wo());
    for t in 0..tb {
        let (s, ti, tj, t) = tl.tile(row0, t);
        let base = (s * tl.ho() + ti * m) * wo + tj * m;
        for c0 in (0..c).step_by(LANES) {
            let len = LANES.min(c - c0);
            let b = read(&bias[c0..], len);
            transform(
                &p.at,
                &p.at,
                FULL,
                (m, m),
                |k, j| read(&mm[cell_at(k, j, tb, c, t) + c0..], len),
                |i, j, mut x| {
                    for (v, &bq) in x.iter_mut().zip(&b) {
                        *v = *v + bq;
                    }
                    write(&mut ys[(base + i * wo + j) * c + c0..], &x, len)
                },
            );
        }
    }
}

/// Adjoint of [`output_block`] without bias: `A · dy · Aᵀ` into `dm: [CELLS, tb, cout]`.
#[inline(always)]
fn output_block_adjoint<F: Float>(p: &Plan<F>, tl: &Tiling, dys: &[F], row0: usize, rows: usize, dm: &mut [F]) {
    let (c, m, tb, wo) = (tl.cout, tl.m, rows * tl.tw, tl.wo());
    for t in 0..tb {
        let (s, ti, tj, t) = tl.tile(row0, t);
        let base = (s * tl.ho() + ti * m) * wo + tj * m;
        for c0 in (0..c).step_by(LANES) {
            let len = LANES.min(c - c0);
            transform(
                &p.a,
                &p.a,
                (m, m),
                FULL,
                |k, j| read(&dys[(base + k * wo + j) * c + c0..], len),
                |i, j, x| write(&mut dm[cell_at(i, j, tb, c, t) + c0..], &x, len),
            );
        }
    }
}

/// `[CELLS, cout, cin]` transformed filters.
fn transform_weight<F: Float>(p: &Plan<F>, cout: usize, cin: usize, w: &[F]) -> Vec<F> {
    let r = p.r;
    let mut u = vec![F::zero(); CELLS * cout * cin];
    for (oc, g) in w.chunks_exact(r * r).enumerate() {
        let mut x = [[F::zero(); ALPHA]; ALPHA];
        for k in 0..r {
            x[k][..r].copy_from_slice(&g[k * r..(k + 1) * r]);
        }
        let t = sandwich1(&p.g, &x, &p.g);
        for (cell, &val) in t.iter().flatten().enumerate() {
            u[cell * cout * cin + oc] = val;
        }
    }
    u
}

/// Adjoint of [`transform_weight`]: `Gᵀ · du · G` cropped to `r×r`.
fn transform_weight_adjoint<F: Float>(p: &Plan<F>, cout: usize, cin: usize, du: &[F]) -> Vec<F> {
    let r = p.r;
    let mut dw = vec![F::zero(); cout * cin * r * r];
    for (oc, dst) in dw.chunks_exact_mut(r * r).enumerate() {
        let mut x = [[F::zero(); ALPHA]; ALPHA];
        for (cell, v) in x.iter_mut().flatten().enumerate() {
            *v = du[cell * cout * cin + oc];
        }
        let t = sandwich1(&p.gt, &x, &p.gt);
        for k in 0..r {
            dst[k * r..(k + 1) * r].copy_from_slice(&t[k][..r]);
        }
    }
    dw
}

/// Per-cell GEMMs `out[ξ] = op(a[ξ]) · op(b[ξ]) + beta·out[ξ]`.
#[allow(clippy::too_many_arguments)]
fn cell_gemms<F: Float>(m: usize, k: usize, n: usize, a: &[F], ta: bool, b: &[F], tb: bool, beta: F, out: &mut [F]) {
    for ((ax, bx), ox) in a
        .chunks_exact(m * k)
        .zip(b.chunks_exact(k * n))
        .zip(out.chunks_exact_mut(m * n))
        .take(CELLS)
    {
        gemm(m, k, n, ax, ta, bx, tb, beta, ox);
    }
}

/// Staged output `[n, ho, wo, cout]` from staged input and transformed filters.
#[inline(always)]
fn forward_blocks<F: Float>(p: &Plan<F>, tl: &Tiling, xs: &[F], u: &[F], bias: &[F]) -> Vec<F> {
    let tbm = tl.max_block_tiles();
    let mut ys = vec![F::zero(); tl.n * tl.ho() * tl.wo() * tl.cout];
    let mut v = vec![F::zero(); CELLS * tbm * tl.cin];
    let mut mm = vec![F::zero(); CELLS * tbm * tl.cout];
    for (row0, rows) in tl.blocks() {
        let tb = rows * tl.tw;
        let v = &mut v[..CELLS * tb * tl.cin];
        let mm = &mut mm[..CELLS * tb * tl.cout];
        input_block(p, tl, xs, row0, rows, v);
        cell_gemms(tb, tl.cin, tl.cout, v, false, u, true, F::zero(), mm);
        output_block(p, tl, mm, bias, row0, rows, &mut ys);
    }
    ys
}

/// Staged input gradient (if `dxs` is given) and transformed filter gradient.
#[inline(always)]
fn backward_blocks<F: Float>(
    p: &Plan<F>,
    tl: &Tiling,
    dys: &[F],
    u: &[F],
    xs: Option<&[F]>,
    mut dxs: Option<&mut [F]>,
) -> Vec<F> {
    let tbm = tl.max_block_tiles();
    let mut du = vec![F::zero(); CELLS * tl.cout * tl.cin];
    let mut dm = vec![F::zero(); CELLS * tbm * tl.cout];
    let mut v = vec![F::zero(); CELLS * tbm * tl.cin];
    for (row0, rows) in tl.blocks() {
        let tb = rows * tl.tw;
        let dm = &mut dm[..CELLS * tb * tl.cout];
        let v = &mut v[..CELLS * tb * tl.cin];
        output_block_adjoint(p, tl, dys, row0, rows, dm);
        if let Some(dxs) = dxs.as_deref_mut() {
            cell_gemms(tb, tl.cout, tl.cin, dm, false, u, false, F::zero(), v);
            input_block_adjoint(p, tl, v, row0, rows, dxs);
        }
        if let Some(xs) = xs {
            input_block(p, tl, xs, row0, rows, v);
            cell_gemms(tl.cout, tb, tl.cin, dm, true, v, false, F::one(), &mut du);
        }
    }
    du
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn forward_blocks_avx2<F: Float>(p: &Plan<F>, tl: &Tiling, xs: &[F], u: &[F], bias: &[F]) -> Vec<F> {
    forward_blocks(p, tl, xs, u, bias)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn backward_blocks_avx2<F: Float>(
    p: &Plan<F>,
    tl: &Tiling,
    dys: &[F],
    u: &[F],
    xs: Option<&[F]>,
    dxs: Option<&mut [F]>,
) -> Vec<F> {
    backward_blocks(p, tl, dys, u, xs, dxs)
}

fn has_avx2() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::is_x86_feature_detected!("avx2")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

fn run_forward<F: Float>(p: &Plan<F>, tl: &Tiling, xs: &[F], u: &[F], bias: &[F]) -> Vec<F> {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 support was detected at runtime.
        return unsafe { forward_blocks_avx2(p, tl, xs, u, bias) };
    }
    forward_blocks(p, tl, xs, u, bias)
}

fn run_backward<F: Float>(p: &Plan<F>, tl: &Tiling, dys: &[F], u: &[F], xs: Option<&[F]>, dxs: Option<&mut [F]>) -> Vec<F> {
    #[cfg(target_arch = "x86_64")]
    if has_avx2() {
        // SAFETY: AVX2 support was detected at runtime.
        return unsafe { backward_blocks_avx2(p, tl, dys, u, xs, dxs) };
    }
    backward_blocks(p, tl, dys, u, xs, dxs)
}

/// Whether [`conv2d`] handles this geometry.
pub(crate) fn eligible<F: Float>(g: &ConvGeom) -> bool {
    F::FAST_CONV
        && g.stride == 1
        && g.kh == g.kw
        && (3..=7).contains(&g.kh)
        && g.pad == g.kh / 2
        && g.cin >= 8
        && g.cout >= 8
        && g.h >= 16
        && g.w >= 16
}

struct WinogradBackward<F: Float> {
    geom: ConvGeom,
    u: Vec<F>,
}

impl<F: Float> BackwardOp<F> for WinogradBackward<F> {
    fn backward(&self, inputs: &[Tensor<F>], _output: &[F], grad: &[F]) -> Vec<Option<Vec<F>>> {
        let g = &self.geom;
        let p = Plan::<F>::new(g.kh);
        let tl = Tiling::new(g, p.m);
        let (want_dx, want_dw) = (inputs[0].requires_grad(), inputs[1].requires_grad());

        let dys = stage(grad, g.cout, g.h, g.w, tl.ho(), tl.wo(), 0);
        let xs = want_dw.then(|| stage(inputs[0].data(), g.cin, g.h, g.w, tl.hp(), tl.wp(), g.pad));
        let mut dxs = want_dx.then(|| vec![F::zero(); g.n * tl.hp() * tl.wp() * g.cin]);
        let du = run_backward(&p, &tl, &dys, &self.u, xs.as_deref(), dxs.as_deref_mut());

        let dx = dxs.map(|d| unstage(&d, g.cin, tl.hp(), tl.wp(), g.h, g.w, g.pad));
        let dw = want_dw.then(|| transform_weight_adjoint(&p, g.cout, g.cin, &du));
        let mut out = vec![dx, dw];
        if let Some(bias) = inputs.get(2) {
            let plane = g.h * g.w;
            out.push(bias.requires_grad().then(|| {
                let mut db = vec![F::zero(); g.cout];
                for (i, chunk) in grad.chunks_exact(plane).enumerate() {
                    let o = i % g.cout;
                    db[o] = db[o] + chunk.iter().copied().sum::<F>();
                }
                db
            }));
        }
        out
    }
}

/// Same contract as `conv2d` for an [`eligible`] geometry.
pub(crate) fn conv2d<F: Float>(
    g: &ConvGeom,
    input: &Tensor<F>,
    weight: &Tensor<F>,
    bias: Option<&Tensor<F>>,
) -> Result<Tensor<F>> {
    let p = Plan::<F>::new(g.kh);
    let tl = Tiling::new(g, p.m);
    let u = transform_weight(&p, g.cout, g.cin, weight.data());
    let xs = stage(input.data(), g.cin, g.h, g.w, tl.hp(), tl.wp(), g.pad);
    let zero_bias = vec![F::zero(); g.cout];
    let ys = run_forward(&p, &tl, &xs, &u, bias.map_or(&zero_bias, |b| b.data()));
    let out = unstage(&ys, g.cout, tl.ho(), tl.wo(), g.h, g.w, 0);
    let mut ins = vec![input, weight];
    if let Some(b) = bias {
        ins.push(b);
    }
    let grad_fn = record(&ins, WinogradBackward { geom: *g, u });
    Ok(Tensor::from_op(vec![g.n, g.cout, g.h, g.w], out, grad_fn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ops::{conv2d_direct, mse_loss};
    use crate::rng::random_tensor;

    fn geom<F: Float>(x: &Tensor<F>, w: &Tensor<F>) -> ConvGeom {
        ConvGeom::new(x, w, 1, w.shape()[2] / 2).unwrap()
    }

    #[test]
    fn one_dimensional_identity_holds() {
        for r in [3, 5, 7] {
            let p = Plan::<f64>::new(r);
            let d: Vec<f64> = (0..ALPHA).map(|i| (i as f64 * 0.37).sin()).collect();
            let g: Vec<f64> = (0..r).map(|i| (i as f64 * 1.3).cos()).collect();
            let gd: Vec<f64> = (0..ALPHA).map(|a| (0..r).map(|k| p.g[a][k] * g[k]).sum()).collect();
            let bd: Vec<f64> = (0..ALPHA).map(|a| (0..ALPHA).map(|k| p.bt[a][k] * d[k]).sum()).collect();
            for i in 0..p.m {
                let got: f64 = (0..ALPHA).map(|a| p.at[i][a] * gd[a] * bd[a]).sum();
                let want: f64 = (0..r).map(|k| d[i + k] * g[k]).sum();
                assert!((got - want).abs() < 1e-12, "r={r} i={i}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn matches_direct_in_f64() {
        for (n, cin, cout, h, w, k) in [(2, 3, 4, 9, 11, 5), (1, 2, 3, 5, 5, 5), (1, 4, 2, 13, 7, 3), (1, 2, 2, 10, 9, 7), (3, 2, 3, 40, 70, 5)] {
            let x = random_tensor::<f64>(&[n, cin, h, w], 1);
            let wt = random_tensor::<f64>(&[cout, cin, k, k], 2);
            let b = random_tensor::<f64>(&[cout], 3);
            let g = geom(&x, &wt);
            let fast = conv2d(&g, &x, &wt, Some(&b)).unwrap();
            let slow = conv2d_direct(&x, &wt, Some(&b), 1, k / 2).unwrap();
            let dev = fast.data().iter().zip(slow.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-10, "{h}x{w} k{k}: {dev}");
        }
    }

    #[test]
    fn f32_error_is_small_relative_to_output() {
        let x = random_tensor::<f32>(&[2, 16, 32, 32], 4);
        let wt = random_tensor::<f32>(&[16, 16, 5, 5], 5);
        let g = geom(&x, &wt);
        assert!(eligible::<f32>(&g) && !eligible::<f64>(&g));
        let fast = conv2d(&g, &x, &wt, None).unwrap();
        let slow = conv2d_direct(&x.cast::<f64>(), &wt.cast::<f64>(), None, 1, 2).unwrap();
        let scale = slow.data().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let dev = fast
            .data()
            .iter()
            .zip(slow.data())
            .map(|(&a, &b)| (a as f64 - b).abs())
            .fold(0.0, f64::max);
        assert!(dev / scale < 1e-5, "{dev} / {scale}");
    }

    /// Gradients of the fast path agree with those of the im2col path.
    #[test]
    fn backward_matches_reference_path() {
        let x = random_tensor::<f64>(&[2, 3, 9, 10], 6).detached_param();
        let wt = random_tensor::<f64>(&[4, 3, 5, 5], 7).detached_param();
        let b = random_tensor::<f64>(&[4], 8).detached_param();
        let target = random_tensor::<f64>(&[2, 4, 9, 10], 9);
        let g = geom(&x, &wt);
        mse_loss(&conv2d(&g, &x, &wt, Some(&b)).unwrap(), &target).unwrap().backward().unwrap();
        let fast = [x.grad().unwrap(), wt.grad().unwrap(), b.grad().unwrap()];
        for t in [&x, &wt, &b] {
            t.zero_grad();
        }
        mse_loss(&crate::ops::conv2d(&x, &wt, Some(&b), 1, 2).unwrap(), &target)
            .unwrap()
            .backward()
            .unwrap();
        let slow = [x.grad().unwrap(), wt.grad().unwrap(), b.grad().unwrap()];
        for (f, s) in fast.iter().zip(&slow) {
            let dev = f.iter().zip(s).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(dev < 1e-12, "{dev}");
        }
    }
}
