//! The Winograd convolution layer.
//!
//! Weights live directly in the Winograd domain as a `(C_o·C_i) x t³` matrix
//! `g_w` (row `C_i·n + c` is filter n, channel c). On top of the frozen base
//! weights sit an optional trainable low-rank update `g_r · g_c` and a t³
//! column mask; the effective weight is `(g_w + g_r·g_c) ⊙ mask`, with the
//! mask zeroing whole Winograd-domain columns.
//!
//! A forward pass is three batched stages:
//!
//! 1. input transform: tile the volume, `V = Ĩ · T_I`
//! 2. elementwise stage: `U(k·C_o+n, :) = Σ_c  G(C_i·n+c, :) ⊙ V(k·C_i+c, :)`
//! 3. output transform: `Õ = U · T_O`, stitch tiles back together
//!
//! The compact layer stores only the kept columns and the matching rows of
//! `T_O`, so the elementwise stage shrinks from t³ to l multiplies per
//! channel pair with no transform-stage change.
//!
//! Accumulation orders are fixed (channel `c` ascending in the elementwise
//! stage, tile `k` ascending in weight gradients) so results are
//! bit-reproducible at any thread count.


use crate::error::{Error, Result};
use crate::parallel;
use crate::tensor::{Element, Matrix, Tensor};
use crate::transform::{
    disassemble_input, overlap_add_input_tiles, reassemble_output, transforms_f2x3, TileGeometry,
    TransformSet, WinogradSpec,
};

// ── op accounting ───────────────────────────────────────────────────────────

/// Multiply counts actually executed by one forward pass, by stage.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub input_transform_mults: u64,
    pub ew_mults: u64,
    pub output_transform_mults: u64,
}

impl OpCounts {
    pub fn total(&self) -> u64 {
        self.input_transform_mults + self.ew_mults + self.output_transform_mults
    }
}

/// Closed-form multiply counts for a forward pass with `kept` live columns
/// (`kept = t³` for the dense paths).
pub fn op_counts(
    spec: WinogradSpec,
    tiles: usize,
    c_in: usize,
    c_out: usize,
    kept: usize,
) -> OpCounts {
    let (t3, m3) = (spec.t3() as u64, spec.m3() as u64);
    let (tiles, c_in, c_out, kept) = (tiles as u64, c_in as u64, c_out as u64, kept as u64);
    OpCounts {
        input_transform_mults: tiles * c_in * t3 * t3,
        ew_mults: tiles * c_in * c_out * kept,
        output_transform_mults: tiles * c_out * kept * m3,
    }
}

// ── forward cache ───────────────────────────────────────────────────────────

/// Winograd-domain activations saved by a forward pass for reuse in backward:
/// the transformed input tiles `V` and the tiling geometry.
#[derive(Clone, Debug)]
pub struct ForwardCache<S: Element> {
    pub v: Matrix<S>,
    pub geom: TileGeometry,
}

/// Gradients returned by [`WinogradLayer::backward`]. `d_g_w` is the
/// masked effective-weight gradient — it is both the update direction for
/// dense-mode training and the `dΔ` that the low-rank factor gradients
/// contract against.
#[derive(Clone, Debug)]
pub struct LayerGrads<S: Element> {
    pub d_g_w: Matrix<S>,
    pub d_g_r: Matrix<S>,
    pub d_g_c: Matrix<S>,
    pub d_input: Tensor<S>,
}

// ── elementwise stages ──────────────────────────────────────────────────────

/// The element-wise stage: `U(k·C_o+n, :) = Σ_c  g(C_i·n+c, :) ⊙ v(k·C_i+c, :)`,
/// parallel over tiles. Returns U and the exact multiply count
/// `tiles·C_o·C_i·width`. Public so the benchmark can time this stage in
/// isolation; everything else should go through the layer forwards.
pub fn ew_stage<S: Element>(
    g: &Matrix<S>,
    v: &Matrix<S>,
    c_in: usize,
    c_out: usize,
    tiles: usize,
    threads: usize,
) -> (Matrix<S>, u64) {
    let mut u = Matrix::zeros(tiles * c_out, g.cols());
    let mults = ew_stage_into(g, v, c_in, c_out, tiles, threads, &mut u);
    (u, mults)
}

/// Tiles per pass in [`ew_stage_into`]. Eight keep one filter's rows plus
/// the block's input rows inside L1 while amortizing each `g` load.
const EW_TILE_BLOCK: usize = 8;
/// Physical column stride for width-`l` element-wise work: `l` rounded up to
/// a full eight-lane group. Odd widths otherwise pay vector-tail and row
/// alignment penalties that swamp the savings from dropping columns. Pad
/// lanes hold zeros and do no algorithmic work — counters keep reporting the
/// logical `l` multiplies, treating pad lanes like SIMD tail lanes.
pub(crate) fn lane_width(l: usize) -> usize {
    l.next_multiple_of(8)
}
/// Stack-panel width in [`ew_stage_into`]; 64 covers a full 4³ tile row, so
/// real workloads take a single panel and the loop only matters for safety.
const EW_PANEL: usize = 64;

/// [`ew_stage`] into a caller-owned, correctly sized U (overwritten), so
/// repeated invocations reuse one allocation.
///
/// Tiles are processed [`EW_TILE_BLOCK`] at a time with the outputs held in
/// small stack panels: each row of `g` is then loaded once per block instead
/// of once per tile. At C_i = C_o = 64 the naive tile-by-tile order
/// re-streams the whole of `g` from last-level cache for every tile, and
/// that traffic — not the multiplies — dominates the stage.
///
/// The channel reduction runs in a fixed grouping — blocks of eight
/// ascending channels, each summed as two four-term products, remainder
/// singly — identical at every thread count and shared by the dense and
/// column-sparse paths, so their outputs agree bit-for-bit on surviving
/// columns.
pub fn ew_stage_into<S: Element>(
    g: &Matrix<S>,
    v: &Matrix<S>,
    c_in: usize,
    c_out: usize,
    tiles: usize,
    threads: usize,
    u: &mut Matrix<S>,
) -> u64 {
    let width = g.cols();
    debug_assert_eq!(v.cols(), width);
    debug_assert_eq!(u.rows(), tiles * c_out);
    debug_assert_eq!(u.cols(), width);
    let gd = g.data();
    let vd = v.data();
    parallel::parallel_unit_spans(u.data_mut(), c_out * width, threads, |first, span| {
        let span_tiles = span.len() / (c_out * width);
        let mut kb = 0;
        while kb < span_tiles {
            let tb = (span_tiles - kb).min(EW_TILE_BLOCK);
            let ublock = &mut span[kb * c_out * width..(kb + tb) * c_out * width];
            // rows (first+kb)·C_i .. (first+kb+tb)·C_i of v, one contiguous run
            let vblock = &vd[(first + kb) * c_in * width..(first + kb + tb) * c_in * width];
            for n in 0..c_out {
                let gblock = &gd[n * c_in * width..(n + 1) * c_in * width];
                let mut jp = 0;
                while jp < width {
                    let plen = (width - jp).min(EW_PANEL);
                    let mut acc = [[S::ZERO; EW_PANEL]; EW_TILE_BLOCK];
                    let mut c = 0;
                    while c + 8 <= c_in {
                        let g0 = &gblock[c * width + jp..][..plen];
                        let g1 = &gblock[(c + 1) * width + jp..][..plen];
                        let g2 = &gblock[(c + 2) * width + jp..][..plen];
                        let g3 = &gblock[(c + 3) * width + jp..][..plen];
                        let g4 = &gblock[(c + 4) * width + jp..][..plen];
                        let g5 = &gblock[(c + 5) * width + jp..][..plen];
                        let g6 = &gblock[(c + 6) * width + jp..][..plen];
                        let g7 = &gblock[(c + 7) * width + jp..][..plen];
                        for (t, a) in acc.iter_mut().enumerate().take(tb) {
                            let vtile = &vblock[t * c_in * width..];
                            let v0 = &vtile[c * width + jp..][..plen];
                            let v1 = &vtile[(c + 1) * width + jp..][..plen];
                            let v2 = &vtile[(c + 2) * width + jp..][..plen];
                            let v3 = &vtile[(c + 3) * width + jp..][..plen];
                            let v4 = &vtile[(c + 4) * width + jp..][..plen];
                            let v5 = &vtile[(c + 5) * width + jp..][..plen];
                            let v6 = &vtile[(c + 6) * width + jp..][..plen];
                            let v7 = &vtile[(c + 7) * width + jp..][..plen];
                            for j in 0..plen {
                                let x = g0[j] * v0[j] + g1[j] * v1[j] + g2[j] * v2[j]
                                    + g3[j] * v3[j];
                                let y = g4[j] * v4[j] + g5[j] * v5[j] + g6[j] * v6[j]
                                    + g7[j] * v7[j];
                                a[j] += x + y;
                            }
                        }
                        c += 8;
                    }
                    while c < c_in {
                        let grow = &gblock[c * width + jp..][..plen];
                        for (t, a) in acc.iter_mut().enumerate().take(tb) {
                            let vrow = &vblock[(t * c_in + c) * width + jp..][..plen];
                            for j in 0..plen {
                                a[j] += grow[j] * vrow[j];
                            }
                        }
                        c += 1;
                    }
                    for (t, a) in acc.iter().enumerate().take(tb) {
                        ublock[(t * c_out + n) * width + jp..][..plen]
                            .copy_from_slice(&a[..plen]);
                    }
                    jp += plen;
                }
            }
            kb += tb;
        }
    });
    (tiles * c_out * c_in * width) as u64
}

/// Weight gradient: `dG(C_i·n+c, :) = Σ_k  du(k·C_o+n, :) ⊙ v(k·C_i+c, :)`,
/// parallel over filters, tiles accumulated in ascending order.
fn ew_stage_weight_grad<S: Element>(
    du: &Matrix<S>,
    v: &Matrix<S>,
    c_in: usize,
    c_out: usize,
    tiles: usize,
    threads: usize,
) -> Matrix<S> {
    let width = du.cols();
    let mut dg = Matrix::zeros(c_out * c_in, width);
    parallel::parallel_units(dg.data_mut(), c_in * width, threads, |n, chunk| {
        for c in 0..c_in {
            let grow = &mut chunk[c * width..(c + 1) * width];
            for k in 0..tiles {
                let durow = du.row(k * c_out + n);
                let vrow = v.row(k * c_in + c);
                for j in 0..width {
                    grow[j] += durow[j] * vrow[j];
                }
            }
        }
    });
    dg
}

/// Input gradient in the Winograd domain:
/// `dV(k·C_i+c, :) = Σ_n  du(k·C_o+n, :) ⊙ g(C_i·n+c, :)`, parallel over tiles.
fn ew_stage_input_grad<S: Element>(
    du: &Matrix<S>,
    g: &Matrix<S>,
    c_in: usize,
    c_out: usize,
    tiles: usize,
    threads: usize,
) -> Matrix<S> {
    let width = du.cols();
    let mut dv = Matrix::zeros(tiles * c_in, width);
    parallel::parallel_units(dv.data_mut(), c_in * width, threads, |k, chunk| {
        for c in 0..c_in {
            let vrow = &mut chunk[c * width..(c + 1) * width];
            for n in 0..c_out {
                let durow = du.row(k * c_out + n);
                let grow = g.row(c_in * n + c);
                for j in 0..width {
                    vrow[j] += durow[j] * grow[j];
                }
            }
        }
    });
    dv
}

// ── the layer ───────────────────────────────────────────────────────────────

#[derive(Clone, Debug)]
pub struct WinogradLayer<S: Element> {
    pub c_out: usize,
    pub c_in: usize,
    pub spec: WinogradSpec,
    pub pad: usize,
    /// Frozen base weights, `(C_o·C_i) x t³`.
    pub g_w: Matrix<S>,
    /// Low-rank column factor, `(C_o·C_i) x s` (s may be 0).
    pub g_r: Matrix<S>,
    /// Low-rank row factor, `s x t³`.
    pub g_c: Matrix<S>,
    mask: Vec<bool>,
    locations: Vec<usize>,
    t_i: Matrix<S>,
    t_o: Matrix<S>,
}

/// Transform a spatial kernel `(C_o, C_i, r, r, r)` into the Winograd-domain
/// weight matrix `(C_o·C_i) x t³`: each row is the flattened kernel cube
/// times `T_K`.
pub fn spatial_to_winograd<S: Element>(
    kernel: &Tensor<S>,
    ts: &TransformSet,
) -> Result<Matrix<S>> {
    if kernel.ndim() != 5 {
        return Err(Error::Shape(format!(
            "kernel must be (C_o, C_i, r, r, r), got {:?}",
            kernel.dims()
        )));
    }
    let kd = kernel.dims();
    let r = ts.spec.r;
    if kd[2] != r || kd[3] != r || kd[4] != r {
        return Err(Error::Shape(format!(
            "kernel taps {:?} do not match r={r}",
            &kd[2..]
        )));
    }
    // kernel storage is row-major over (n, c, z, y, x), so row n·C_i+c of the
    // tap matrix is already contiguous
    let g = Matrix::new(kd[0] * kd[1], ts.spec.r3(), kernel.data().to_vec())?;
    Ok(g.matmul(&ts.t_k.cast::<S>()))
}

impl<S: Element> WinogradLayer<S> {
    /// Dense layer from a spatial kernel; rank 0, all columns kept.
    pub fn from_spatial(kernel: &Tensor<S>, pad: usize) -> Result<Self> {
        let ts = transforms_f2x3();
        let g_w = spatial_to_winograd(kernel, ts)?;
        let (c_out, c_in) = (kernel.dims()[0], kernel.dims()[1]);
        Self::from_parts(
            c_out,
            c_in,
            pad,
            g_w,
            Matrix::zeros(c_out * c_in, 0),
            Matrix::zeros(0, ts.spec.t3()),
            vec![true; ts.spec.t3()],
        )
    }

    pub fn from_parts(
        c_out: usize,
        c_in: usize,
        pad: usize,
        g_w: Matrix<S>,
        g_r: Matrix<S>,
        g_c: Matrix<S>,
        mask: Vec<bool>,
    ) -> Result<Self> {
        let spec = WinogradSpec::f2x3();
        let t3 = spec.t3();
        if c_out == 0 || c_in == 0 {
            return Err(Error::Shape("zero channel count".into()));
        }
        if g_w.rows() != c_out * c_in || g_w.cols() != t3 {
            return Err(Error::Shape(format!(
                "g_w must be {}x{t3}, got {}x{}",
                c_out * c_in,
                g_w.rows(),
                g_w.cols()
            )));
        }
        if g_r.rows() != c_out * c_in {
            return Err(Error::Rank(format!(
                "g_r must have {} rows, got {}",
                c_out * c_in,
                g_r.rows()
            )));
        }
        if g_c.rows() != g_r.cols() || g_c.cols() != t3 {
            return Err(Error::Rank(format!(
                "g_c must be {}x{t3}, got {}x{}",
                g_r.cols(),
                g_c.rows(),
                g_c.cols()
            )));
        }
        if g_r.cols() > t3 {
            return Err(Error::Rank(format!(
                "rank {} exceeds t³={t3}",
                g_r.cols()
            )));
        }
        let ts = transforms_f2x3();
        let mut layer = WinogradLayer {
            c_out,
            c_in,
            spec,
            pad,
            g_w,
            g_r,
            g_c,
            mask: Vec::new(),
            locations: Vec::new(),
            t_i: ts.t_i.cast(),
            t_o: ts.t_o.cast(),
        };
        layer.set_mask(mask)?;
        Ok(layer)
    }

    /// Current low-rank width s.
    pub fn rank(&self) -> usize {
        self.g_r.cols()
    }

    /// Install low-rank factors (replaces any existing ones).
    pub fn set_rank_factors(&mut self, g_r: Matrix<S>, g_c: Matrix<S>) -> Result<()> {
        let t3 = self.spec.t3();
        if g_r.rows() != self.c_out * self.c_in
            || g_c.rows() != g_r.cols()
            || g_c.cols() != t3
            || g_r.cols() > t3
        {
            return Err(Error::Rank(format!(
                "factor shapes {}x{} / {}x{} inconsistent",
                g_r.rows(),
                g_r.cols(),
                g_c.rows(),
                g_c.cols()
            )));
        }
        self.g_r = g_r;
        self.g_c = g_c;
        Ok(())
    }

    /// Install a column mask. At least one column must survive.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.spec.t3() {
            return Err(Error::Shape(format!(
                "mask length {} != t³ {}",
                mask.len(),
                self.spec.t3()
            )));
        }
        let locations: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
        if locations.is_empty() {
            return Err(Error::EmptyMask);
        }
        self.mask = mask;
        self.locations = locations;
        Ok(())
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    /// Kept column indices, ascending.
    pub fn kept_locations(&self) -> &[usize] {
        &self.locations
    }

    /// Number of kept columns l.
    pub fn kept(&self) -> usize {
        self.locations.len()
    }

    pub fn dense_param_count(&self) -> usize {
        self.c_out * self.c_in * self.spec.t3()
    }

    /// Trainable parameters in low-rank mode: `C_o·C_i·s + s·t³`.
    pub fn lowrank_param_count(&self) -> usize {
        self.rank() * (self.c_out * self.c_in + self.spec.t3())
    }

    /// Materialize `(g_w + g_r·g_c) ⊙ mask`. The rank-0 / all-ones cases skip
    /// the no-op arithmetic so they stay bit-identical to the base weights.
    pub fn effective_weight(&self) -> Matrix<S> {
        let mut eff = if self.rank() == 0 {
            self.g_w.clone()
        } else {
            let delta = self.g_r.matmul(&self.g_c);
            let mut e = self.g_w.clone();
            for (x, d) in e.data_mut().iter_mut().zip(delta.data()) {
                *x += *d;
            }
            e
        };
        if self.locations.len() != self.mask.len() {
            for row in 0..eff.rows() {
                let r = eff.row_mut(row);
                for (j, &keep) in self.mask.iter().enumerate() {
                    if !keep {
                        r[j] = S::ZERO;
                    }
                }
            }
        }
        eff
    }

    /// Stage 1: tile the input and move it to the Winograd domain.
    pub fn transform_input(&self, input: &Tensor<S>) -> Result<ForwardCache<S>> {
        if input.ndim() != 4 || input.dims()[0] != self.c_in {
            return Err(Error::Shape(format!(
                "input must be ({}, D, H, W), got {:?}",
                self.c_in,
                input.dims()
            )));
        }
        let (tiles, geom) = disassemble_input(input, self.spec, self.pad)?;
        let v = tiles.matmul(&self.t_i);
        Ok(ForwardCache { v, geom })
    }

    fn forward_from_cache(
        &self,
        cache: &ForwardCache<S>,
        g_eff: &Matrix<S>,
        threads: usize,
    ) -> Result<(Tensor<S>, OpCounts)> {
        let tiles = cache.geom.tile_count();
        let (u, ew_mults) = ew_stage(g_eff, &cache.v, self.c_in, self.c_out, tiles, threads);
        let o_tiles = u.matmul(&self.t_o);
        let out = reassemble_output(&o_tiles, &cache.geom)?;
        let counts = OpCounts {
            input_transform_mults: (tiles * self.c_in * self.spec.t3() * self.spec.t3()) as u64,
            ew_mults,
            output_transform_mults: (tiles * self.c_out * self.spec.t3() * self.spec.m3()) as u64,
        };
        Ok((out, counts))
    }

    /// Forward with the frozen base weights only (no low-rank term, no mask).
    pub fn forward_dense(&self, input: &Tensor<S>) -> Result<(Tensor<S>, ForwardCache<S>)> {
        let (out, cache, _) = self.forward_dense_counted(input)?;
        Ok((out, cache))
    }

    pub fn forward_dense_counted(
        &self,
        input: &Tensor<S>,
    ) -> Result<(Tensor<S>, ForwardCache<S>, OpCounts)> {
        let cache = self.transform_input(input)?;
        let (out, counts) =
            self.forward_from_cache(&cache, &self.g_w, parallel::thread_count())?;
        Ok((out, cache, counts))
    }

    /// [`Self::forward_dense_counted`] with an explicit worker count instead
    /// of the ambient one; the benchmark reports exactly what it used.
    pub fn forward_dense_threaded(
        &self,
        input: &Tensor<S>,
        threads: usize,
    ) -> Result<(Tensor<S>, OpCounts)> {
        let cache = self.transform_input(input)?;
        self.forward_from_cache(&cache, &self.g_w, threads)
    }

    /// Forward with the full effective weight `(g_w + g_r·g_c) ⊙ mask`.
    /// This is the training path; with rank 0 and an all-ones mask it is
    /// bit-identical to [`Self::forward_dense`].
    pub fn forward_lowrank(&self, input: &Tensor<S>) -> Result<(Tensor<S>, ForwardCache<S>)> {
        let (out, cache, _) = self.forward_lowrank_counted(input)?;
        Ok((out, cache))
    }

    pub fn forward_lowrank_counted(
        &self,
        input: &Tensor<S>,
    ) -> Result<(Tensor<S>, ForwardCache<S>, OpCounts)> {
        let cache = self.transform_input(input)?;
        let g_eff = self.effective_weight();
        let (out, counts) =
            self.forward_from_cache(&cache, &g_eff, parallel::thread_count())?;
        Ok((out, cache, counts))
    }

    fn check_cache(&self, cache: &ForwardCache<S>, d_out: &Tensor<S>) -> Result<()> {
        let tiles = cache.geom.tile_count();
        if cache.geom.channels != self.c_in
            || cache.geom.spec != self.spec
            || cache.geom.pad != self.pad
            || cache.v.rows() != tiles * self.c_in
            || cache.v.cols() != self.spec.t3()
        {
            return Err(Error::Cache(format!(
                "cache ({} rows, {} channels) does not belong to this layer",
                cache.v.rows(),
                cache.geom.channels
            )));
        }
        let [od, oh, ow] = cache.geom.out_dims;
        if d_out.dims() != [self.c_out, od, oh, ow] {
            return Err(Error::Cache(format!(
                "output gradient dims {:?} do not match cached geometry {:?}",
                d_out.dims(),
                [self.c_out, od, oh, ow]
            )));
        }
        Ok(())
    }

    /// Backward through the low-rank/masked forward. Returns gradients for
    /// the base weights (masked), both low-rank factors, and the input.
    pub fn backward(&self, cache: &ForwardCache<S>, d_out: &Tensor<S>) -> Result<LayerGrads<S>> {
        self.check_cache(cache, d_out)?;
        let geom = &cache.geom;
        let tiles = geom.tile_count();
        let threads = parallel::thread_count();

        // output side: scatter d_out into m³ tiles (zeros in the cropped
        // round-up region), then undo the output transform
        let d_o_tiles = output_to_tiles(d_out, geom, self.c_out);
        let du = d_o_tiles.matmul(&self.t_o.transpose());

        // weight gradients
        let dg_eff = ew_stage_weight_grad(&du, &cache.v, self.c_in, self.c_out, tiles, threads);
        let mut d_g_w = dg_eff;
        if self.locations.len() != self.mask.len() {
            for row in 0..d_g_w.rows() {
                let r = d_g_w.row_mut(row);
                for (j, &keep) in self.mask.iter().enumerate() {
                    if !keep {
                        r[j] = S::ZERO;
                    }
                }
            }
        }
        let d_g_r = d_g_w.matmul(&self.g_c.transpose());
        let d_g_c = self.g_r.transpose().matmul(&d_g_w);

        // input gradient
        let g_eff = self.effective_weight();
        let dv = ew_stage_input_grad(&du, &g_eff, self.c_in, self.c_out, tiles, threads);
        let d_tiles = dv.matmul(&self.t_i.transpose());
        let d_input = overlap_add_input_tiles(&d_tiles, geom)?;

        Ok(LayerGrads {
            d_g_w,
            d_g_r,
            d_g_c,
            d_input,
        })
    }
}

/// Inverse of [`reassemble_output`]'s cropping: spread a (C_o, D_o, H_o, W_o)
/// tensor onto `T·C_o` m³ tile rows, zero where the tiling over-covers.
fn output_to_tiles<S: Element>(
    out: &Tensor<S>,
    geom: &TileGeometry,
    c_out: usize,
) -> Matrix<S> {
    let m = geom.spec.m;
    let big_t = geom.tile_count();
    let [od, oh, ow] = geom.out_dims;
    let mut tiles = Matrix::zeros(big_t * c_out, geom.spec.m3());
    let src = out.data();
    for k in 0..big_t {
        let (nh, nw) = (geom.tiles[1], geom.tiles[2]);
        let [kd, kh, kw] = [k / (nh * nw), (k / nw) % nh, k % nw];
        for n in 0..c_out {
            let row = tiles.row_mut(k * c_out + n);
            for dz in 0..m {
                let z = kd * m + dz;
                if z >= od {
                    continue;
                }
                for dy in 0..m {
                    let y = kh * m + dy;
                    if y >= oh {
                        continue;
                    }
                    for dx in 0..m {
                        let x = kw * m + dx;
                        if x >= ow {
                            continue;
                        }
                        row[(dz * m + dy) * m + dx] = src[((n * od + z) * oh + y) * ow + x];
                    }
                }
            }
        }
    }
    tiles
}

// ── compact column-sparse layer ─────────────────────────────────────────────

/// Inference-only layer keeping just the l live Winograd-domain columns and
/// the matching rows of the output transform.
#[derive(Clone, Debug)]
pub struct CompactLayer<S: Element> {
    pub c_out: usize,
    pub c_in: usize,
    pub spec: WinogradSpec,
    pub pad: usize,
    /// `(C_o·C_i) x l` gathered effective weights.
    pub g_bar: Matrix<S>,
    /// Kept column indices, strictly ascending.
    pub locations: Vec<usize>,
    t_i: Matrix<S>,
    /// [`Self::g_bar`] widened to [`lane_width`] columns with zero pad lanes;
    /// what the element-wise kernel actually reads.
    g_lanes: Matrix<S>,
    /// `lane_width(l) x m³` gathered rows of the output transform, zero rows
    /// past l so the output projection runs straight off the padded U.
    t_o_lanes: Matrix<S>,
}

/// Widen to `width` columns, zero-filling the new trailing lanes.
fn pad_cols<S: Element>(m: &Matrix<S>, width: usize) -> Matrix<S> {
    let mut out = Matrix::zeros(m.rows(), width);
    for r in 0..m.rows() {
        out.row_mut(r)[..m.cols()].copy_from_slice(m.row(r));
    }
    out
}

/// Extend to `rows` rows, zero-filling the new trailing rows.
fn pad_rows<S: Element>(m: &Matrix<S>, rows: usize) -> Matrix<S> {
    let mut out = Matrix::zeros(rows, m.cols());
    out.data_mut()[..m.rows() * m.cols()].copy_from_slice(m.data());
    out
}

impl<S: Element> CompactLayer<S> {
    /// Fold a layer's effective weight and gather its kept columns.
    pub fn from_layer(layer: &WinogradLayer<S>) -> Result<Self> {
        let locations = layer.kept_locations().to_vec();
        if locations.is_empty() {
            return Err(Error::EmptyMask);
        }
        let eff = layer.effective_weight();
        let g_bar = eff.gather_cols(&locations)?;
        let width = lane_width(locations.len());
        Ok(CompactLayer {
            c_out: layer.c_out,
            c_in: layer.c_in,
            spec: layer.spec,
            pad: layer.pad,
            g_lanes: pad_cols(&g_bar, width),
            t_o_lanes: pad_rows(&gather_rows(&layer.t_o, &locations), width),
            g_bar,
            t_i: layer.t_i.clone(),
            locations,
        })
    }

    /// Rebuild from stored parts (model files).
    pub fn from_parts(
        c_out: usize,
        c_in: usize,
        pad: usize,
        g_bar: Matrix<S>,
        locations: Vec<usize>,
    ) -> Result<Self> {
        let spec = WinogradSpec::f2x3();
        if locations.is_empty() {
            return Err(Error::EmptyMask);
        }
        if locations.windows(2).any(|w| w[0] >= w[1])
            || *locations.last().unwrap() >= spec.t3()
        {
            return Err(Error::Format(
                "kept locations must be strictly ascending and < t³".into(),
            ));
        }
        if g_bar.rows() != c_out * c_in || g_bar.cols() != locations.len() {
            return Err(Error::Shape(format!(
                "gathered weights must be {}x{}, got {}x{}",
                c_out * c_in,
                locations.len(),
                g_bar.rows(),
                g_bar.cols()
            )));
        }
        let ts = transforms_f2x3();
        let width = lane_width(locations.len());
        Ok(CompactLayer {
            c_out,
            c_in,
            spec,
            pad,
            g_lanes: pad_cols(&g_bar, width),
            t_o_lanes: pad_rows(&gather_rows(&ts.t_o.cast(), &locations), width),
            g_bar,
            t_i: ts.t_i.cast(),
            locations,
        })
    }

    /// Live column count l.
    pub fn l(&self) -> usize {
        self.locations.len()
    }

    /// The lane-padded weight copy the element-wise kernel reads.
    pub(crate) fn lane_weights(&self) -> &Matrix<S> {
        &self.g_lanes
    }

    pub fn forward(&self, input: &Tensor<S>) -> Result<Tensor<S>> {
        self.forward_counted(input).map(|(t, _)| t)
    }

    /// Sparse forward: full input transform, then gather `V̄ = V(:, 𝒫)` and
    /// run the elementwise stage and output projection at width l (physically
    /// [`lane_width`]`(l)`, with zeroed pad lanes). Reported multiply counts
    /// cover the l live columns only.
    pub fn forward_counted(&self, input: &Tensor<S>) -> Result<(Tensor<S>, OpCounts)> {
        self.forward_threaded(input, parallel::thread_count())
    }

    /// [`Self::forward_counted`] with an explicit worker count.
    pub fn forward_threaded(
        &self,
        input: &Tensor<S>,
        threads: usize,
    ) -> Result<(Tensor<S>, OpCounts)> {
        if input.ndim() != 4 || input.dims()[0] != self.c_in {
            return Err(Error::Shape(format!(
                "input must be ({}, D, H, W), got {:?}",
                self.c_in,
                input.dims()
            )));
        }
        let (tiles_mat, geom) = disassemble_input(input, self.spec, self.pad)?;
        let v = tiles_mat.matmul(&self.t_i);
        let mut v_lanes = Matrix::zeros(v.rows(), self.g_lanes.cols());
        v.gather_cols_into_padded(&self.locations, &mut v_lanes)?;
        let tiles = geom.tile_count();
        let (u_lanes, _) =
            ew_stage(&self.g_lanes, &v_lanes, self.c_in, self.c_out, tiles, threads);
        let o_tiles = u_lanes.matmul(&self.t_o_lanes);
        let out = reassemble_output(&o_tiles, &geom)?;
        let counts = OpCounts {
            input_transform_mults: (tiles * self.c_in * self.spec.t3() * self.spec.t3()) as u64,
            ew_mults: (tiles * self.c_in * self.c_out * self.l()) as u64,
            output_transform_mults: (tiles * self.c_out * self.l() * self.spec.m3()) as u64,
        };
        Ok((out, counts))
    }
}

fn gather_rows<S: Element>(m: &Matrix<S>, rows: &[usize]) -> Matrix<S> {
    let mut out = Matrix::zeros(rows.len(), m.cols());
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).copy_from_slice(m.row(r));
    }
    out
}

// ── tests ───────────────────────────────────────────────────────────────────
