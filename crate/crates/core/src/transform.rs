//! The F(2³, 3³) Winograd transform family.
//!
//! A 3D transform is built from a 1D base matrix `M` by a rotation trick
//! instead of an explicit triple Kronecker product: transform the two
//! trailing axes of a cube as an ordinary 2D sandwich `M x Mᵀ` slice by
//! slice, rotate the cube so the untouched axis becomes the trailing one,
//! then contract that axis with `M` as well. Three applications of the
//! rotation return a cube to its original orientation, which is what makes
//! the pattern uniform across the kernel, input, and output transforms.
//!
//! The same maps exist in flattened form: a cube reshaped row-major to a
//! vector, multiplied by a single `in³ x out³` matrix. The flattened form is
//! what the batched layer paths use; the nested form is the readable
//! specification both are tested against.

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::tensor::{Element, Matrix, Tensor};

// ── configuration ───────────────────────────────────────────────────────────

/// Output tile size `m` and kernel size `r` of an F(m³, r³) algorithm.
/// Only (2, 3) is supported: 4³ input tiles, 2³ output tiles, 3³ kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WinogradSpec {
    pub m: usize,
    pub r: usize,
}

impl WinogradSpec {
    pub fn new(m: usize, r: usize) -> Result<Self> {
        if (m, r) != (2, 3) {
            return Err(Error::UnsupportedSpec { m, r });
        }
        Ok(WinogradSpec { m, r })
    }

    pub fn f2x3() -> Self {
        WinogradSpec { m: 2, r: 3 }
    }

    /// Input tile edge `t = m + r - 1`.
    pub fn t(&self) -> usize {
        self.m + self.r - 1
    }

    pub fn t3(&self) -> usize {
        self.t().pow(3)
    }

    pub fn m3(&self) -> usize {
        self.m.pow(3)
    }

    pub fn r3(&self) -> usize {
        self.r.pow(3)
    }
}

/// The 1D base matrices. `K` maps a length-r kernel to length t, `Bᵀ` maps a
/// length-t input tile to length t, `Aᵀ` maps t products down to m outputs:
/// for 1D signals, `Aᵀ((Bᵀd) ⊙ (Kg))` equals the valid correlation of d
/// with g.
#[derive(Clone, Debug)]
pub struct BaseMatrices {
    /// t x r kernel transform.
    pub k: Matrix<f64>,
    /// t x t; the input transform is its transpose.
    pub b: Matrix<f64>,
    /// t x m; the output transform is its transpose.
    pub a: Matrix<f64>,
}

/// Base matrices for the given configuration. The (2, 3) family uses the
/// interpolation points {0, 1, -1} plus the point at infinity, so every
/// entry is 0, ±1, or ±1/2 — exactly representable in f32 and f64.
pub fn base_matrices(spec: WinogradSpec) -> Result<BaseMatrices> {
    WinogradSpec::new(spec.m, spec.r)?;
    let k = Matrix::from_rows(&[
        &[1.0, 0.0, 0.0],
        &[0.5, 0.5, 0.5],
        &[0.5, -0.5, 0.5],
        &[0.0, 0.0, 1.0],
    ]);
    // b is stored so that b.transpose() is the input-side map Bᵀ:
    //   Bᵀ = [[1, 0, -1, 0], [0, 1, 1, 0], [0, -1, 1, 0], [0, 1, 0, -1]]
    let b = Matrix::from_rows(&[
        &[1.0, 0.0, 0.0, 0.0],
        &[0.0, 1.0, -1.0, 1.0],
        &[-1.0, 1.0, 1.0, 0.0],
        &[0.0, 0.0, 0.0, -1.0],
    ]);
    // a.transpose() = Aᵀ = [[1, 1, 1, 0], [0, 1, -1, -1]]
    let a = Matrix::from_rows(&[
        &[1.0, 0.0],
        &[1.0, 1.0],
        &[1.0, -1.0],
        &[0.0, -1.0],
    ]);
    Ok(BaseMatrices { k, b, a })
}

// ── rotation and nested transforms ──────────────────────────────────────────

/// Clockwise axis rotation of a 3-axis tensor: `out(j, k, i) = x(i, j, k)`.
/// Applying it three times is the identity.
pub fn rotate<S: Element>(x: &Tensor<S>) -> Result<Tensor<S>> {
    if x.ndim() != 3 {
        return Err(Error::Shape(format!(
            "rotate expects 3 axes, got {}",
            x.ndim()
        )));
    }
    let (d0, d1, d2) = (x.dims()[0], x.dims()[1], x.dims()[2]);
    let mut out = Tensor::zeros(&[d1, d2, d0]);
    let src = x.data();
    let dst = out.data_mut();
    for i in 0..d0 {
        for j in 0..d1 {
            for k in 0..d2 {
                dst[(j * d2 + k) * d0 + i] = src[(i * d1 + j) * d2 + k];
            }
        }
    }
    Ok(out)
}

/// Apply base matrix `m` (out_sz x in_sz) to every axis of a cube:
/// 2D-transform each leading-axis slice, rotate, contract the now-trailing
/// axis with `m`. Output is out_sz³; the result sits in a rotated frame
/// (callers needing the original axis order rotate once more — see the
/// output transform).
fn transform3(x: &Tensor<f64>, m: &Matrix<f64>) -> Result<Tensor<f64>> {
    let (out_sz, in_sz) = (m.rows(), m.cols());
    if x.ndim() != 3 || x.dims() != [in_sz, in_sz, in_sz] {
        return Err(Error::Shape(format!(
            "transform expects a {in_sz}^3 cube, got {:?}",
            x.dims()
        )));
    }
    let mt = m.transpose();
    // per-slice sandwich: y(i, :, :) = m * x(i, :, :) * mᵀ
    let mut y = Tensor::zeros(&[in_sz, out_sz, out_sz]);
    for i in 0..in_sz {
        let slice = Matrix::new(
            in_sz,
            in_sz,
            x.data()[i * in_sz * in_sz..(i + 1) * in_sz * in_sz].to_vec(),
        )?;
        let t = m.matmul(&slice).matmul(&mt);
        y.data_mut()[i * out_sz * out_sz..(i + 1) * out_sz * out_sz]
            .copy_from_slice(t.data());
    }
    let yr = rotate(&y)?;
    // contract the trailing axis: z(a, b, o) = sum_u yr(a, b, u) * m(o, u)
    let mut z = Tensor::zeros(&[out_sz, out_sz, out_sz]);
    for a in 0..out_sz {
        for b in 0..out_sz {
            let row = &yr.data()[(a * out_sz + b) * in_sz..(a * out_sz + b) * in_sz + in_sz];
            let dst = &mut z.data_mut()[(a * out_sz + b) * out_sz..(a * out_sz + b + 1) * out_sz];
            for o in 0..out_sz {
                let mut acc = 0.0;
                for (u, &v) in row.iter().enumerate() {
                    acc += v * m.get(o, u);
                }
                dst[o] = acc;
            }
        }
    }
    Ok(z)
}

/// Nested kernel transform: r³ spatial kernel tap cube → t³ Winograd-domain
/// cube, `(K g Kᵀ)` per slice, rotated, times `Kᵀ`.
pub fn nested_kernel_transform(g: &Tensor<f64>, bm: &BaseMatrices) -> Result<Tensor<f64>> {
    transform3(g, &bm.k)
}

/// Nested input transform: t³ input tile → t³ Winograd-domain cube.
pub fn nested_input_transform(d: &Tensor<f64>, bm: &BaseMatrices) -> Result<Tensor<f64>> {
    transform3(d, &bm.b.transpose())
}

/// Nested output transform: t³ product cube → m³ output tile. The trailing
/// extra rotation restores the axis order the two in-pattern rotations left
/// one step short.
pub fn nested_output_transform(x: &Tensor<f64>, bm: &BaseMatrices) -> Result<Tensor<f64>> {
    rotate(&transform3(x, &bm.a.transpose())?)
}

// ── flattened transforms ────────────────────────────────────────────────────

/// Expand a 1D base matrix (out_sz x in_sz) into the single in³ x out³
/// matrix that performs the nested 3D transform on row-major-flattened
/// cubes: `flatten(transform3(x, M)) = flatten(x) · flat(M)`, with
///
/// ```text
/// flat(M)[in²u + in·v + w, out²p + out·q + o] = M(p, v) · M(q, w) · M(o, u)
/// ```
///
/// The axis mismatch between the factors (`u` pairs with the *last* output
/// axis `o`) is the flattened image of the rotation.
pub fn build_flat_matrix(base: &Matrix<f64>) -> Matrix<f64> {
    let (out_sz, in_sz) = (base.rows(), base.cols());
    let (i_n, o_n) = (in_sz * in_sz * in_sz, out_sz * out_sz * out_sz);
    let mut t = Matrix::zeros(i_n, o_n);
    for u in 0..in_sz {
        for v in 0..in_sz {
            for w in 0..in_sz {
                let i = in_sz * in_sz * u + in_sz * v + w;
                for p in 0..out_sz {
                    let bpv = base.get(p, v);
                    if bpv == 0.0 {
                        continue;
                    }
                    for q in 0..out_sz {
                        let bqw = base.get(q, w);
                        if bqw == 0.0 {
                            continue;
                        }
                        for o in 0..out_sz {
                            t.set(i, out_sz * out_sz * p + out_sz * q + o, bpv * bqw * base.get(o, u));
                        }
                    }
                }
            }
        }
    }
    t
}

/// Permutation matrix flattening one clockwise rotation of an n³ cube:
/// `flatten(rotate(x)) = flatten(x) · rotation_permutation(n)`.
fn rotation_permutation(n: usize) -> Matrix<f64> {
    let n3 = n * n * n;
    let mut p = Matrix::zeros(n3, n3);
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                // source index (i, j, k) lands at destination (j, k, i)
                p.set(n * n * i + n * j + k, n * n * j + n * k + i, 1.0);
            }
        }
    }
    p
}

/// The three flattened transform matrices for one configuration.
#[derive(Clone, Debug)]
pub struct TransformSet {
    pub spec: WinogradSpec,
    /// r³ x t³ kernel transform.
    pub t_k: Matrix<f64>,
    /// t³ x t³ input transform.
    pub t_i: Matrix<f64>,
    /// t³ x m³ output transform (includes the final rotation).
    pub t_o: Matrix<f64>,
}

pub fn make_transform_set(spec: WinogradSpec) -> Result<TransformSet> {
    let bm = base_matrices(spec)?;
    let t_k = build_flat_matrix(&bm.k);
    let t_i = build_flat_matrix(&bm.b.transpose());
    let t_o = build_flat_matrix(&bm.a.transpose()).matmul(&rotation_permutation(spec.m));
    Ok(TransformSet { spec, t_k, t_i, t_o })
}

/// Shared (2, 3) transform set; built once per process.
pub fn transforms_f2x3() -> &'static TransformSet {
    static SET: OnceLock<TransformSet> = OnceLock::new();
    SET.get_or_init(|| make_transform_set(WinogradSpec::f2x3()).expect("f2x3 is supported"))
}

// ── tiling ──────────────────────────────────────────────────────────────────

/// Everything needed to cut a padded input volume into overlapping t³ tiles
/// and to put the m³ output tiles back together.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TileGeometry {
    pub spec: WinogradSpec,
    pub pad: usize,
    pub channels: usize,
    /// Unpadded spatial extents (D, H, W).
    pub input_dims: [usize; 3],
    /// After symmetric zero padding plus high-side round-up to a whole
    /// number of output tiles: `tiles·m + r - 1` per axis.
    pub padded_dims: [usize; 3],
    /// Tile counts per axis, `ceil(out/m)`.
    pub tiles: [usize; 3],
    /// True convolution output extents, `in + 2·pad - r + 1`.
    pub out_dims: [usize; 3],
}

impl TileGeometry {
    pub fn new(
        spec: WinogradSpec,
        pad: usize,
        channels: usize,
        input_dims: [usize; 3],
    ) -> Result<Self> {
        if channels == 0 {
            return Err(Error::Shape("zero channels".into()));
        }
        let (m, r) = (spec.m, spec.r);
        let mut out_dims = [0usize; 3];
        let mut tiles = [0usize; 3];
        let mut padded_dims = [0usize; 3];
        for a in 0..3 {
            let padded_in = input_dims[a] + 2 * pad;
            if padded_in < r {
                return Err(Error::Shape(format!(
                    "axis {a}: padded extent {padded_in} shorter than kernel {r}"
                )));
            }
            out_dims[a] = padded_in - r + 1;
            tiles[a] = out_dims[a].div_ceil(m);
            padded_dims[a] = tiles[a] * m + r - 1;
        }
        Ok(TileGeometry {
            spec,
            pad,
            channels,
            input_dims,
            padded_dims,
            tiles,
            out_dims,
        })
    }

    /// Total number of tiles T.
    pub fn tile_count(&self) -> usize {
        self.tiles[0] * self.tiles[1] * self.tiles[2]
    }

    fn tile_coords(&self, k: usize) -> [usize; 3] {
        let (nh, nw) = (self.tiles[1], self.tiles[2]);
        [k / (nh * nw), (k / nw) % nh, k % nw]
    }
}

/// Zero-pad a (C, D, H, W) volume symmetrically by `pad` and up to whole
/// tiles on the high sides.
fn pad_input<S: Element>(x: &Tensor<S>, geom: &TileGeometry) -> Tensor<S> {
    let [d, h, w] = geom.input_dims;
    let [pd, ph, pw] = geom.padded_dims;
    let c = geom.channels;
    let p = geom.pad;
    let mut out = Tensor::zeros(&[c, pd, ph, pw]);
    let dst = out.data_mut();
    let src = x.data();
    for ci in 0..c {
        for di in 0..d {
            for hi in 0..h {
                let s0 = ((ci * d + di) * h + hi) * w;
                let t0 = ((ci * pd + di + p) * ph + (hi + p)) * pw + p;
                dst[t0..t0 + w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
    }
    out
}

/// Cut a (C, D, H, W) input into overlapping t³ tiles with stride m.
/// Returns a `(T·C) x t³` matrix — row `k·C + c` is flattened tile `k` of
/// channel `c`, tiles ordered row-major over (depth, height, width) — plus
/// the geometry needed to reassemble or invert.
pub fn disassemble_input<S: Element>(
    x: &Tensor<S>,
    spec: WinogradSpec,
    pad: usize,
) -> Result<(Matrix<S>, TileGeometry)> {
    if x.ndim() != 4 {
        return Err(Error::Shape(format!(
            "expected (C, D, H, W) input, got {:?}",
            x.dims()
        )));
    }
    let geom = TileGeometry::new(
        spec,
        pad,
        x.dims()[0],
        [x.dims()[1], x.dims()[2], x.dims()[3]],
    )?;
    let padded = pad_input(x, &geom);
    let (m, t) = (spec.m, spec.t());
    let [pd, ph, pw] = geom.padded_dims;
    let _ = pd;
    let c = geom.channels;
    let big_t = geom.tile_count();
    let mut tiles = Matrix::zeros(big_t * c, spec.t3());
    let src = padded.data();
    for k in 0..big_t {
        let [kd, kh, kw] = geom.tile_coords(k);
        for ci in 0..c {
            let row = tiles.row_mut(k * c + ci);
            let mut idx = 0;
            for dz in 0..t {
                for dy in 0..t {
                    let s0 = ((ci * geom.padded_dims[0] + kd * m + dz) * ph + kh * m + dy) * pw
                        + kw * m;
                    row[idx..idx + t].copy_from_slice(&src[s0..s0 + t]);
                    idx += t;
                }
            }
        }
    }
    Ok((tiles, geom))
}

/// Stitch non-overlapping m³ output tiles (row `k·C_o + n`) back into a
/// (C_o, D_o, H_o, W_o) volume, cropping the high-side round-up.
pub fn reassemble_output<S: Element>(
    tiles: &Matrix<S>,
    geom: &TileGeometry,
) -> Result<Tensor<S>> {
    let big_t = geom.tile_count();
    if big_t == 0 || tiles.rows() % big_t != 0 {
        return Err(Error::Shape(format!(
            "{} tile rows not divisible by T={big_t}",
            tiles.rows()
        )));
    }
    let c_out = tiles.rows() / big_t;
    let m = geom.spec.m;
    if tiles.cols() != geom.spec.m3() {
        return Err(Error::Shape(format!(
            "output tiles must have m³={} columns, got {}",
            geom.spec.m3(),
            tiles.cols()
        )));
    }
    let [od, oh, ow] = geom.out_dims;
    let mut out = Tensor::zeros(&[c_out, od, oh, ow]);
    let dst = out.data_mut();
    for k in 0..big_t {
        let [kd, kh, kw] = geom.tile_coords(k);
        for n in 0..c_out {
            let row = tiles.row(k * c_out + n);
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
                        dst[((n * od + z) * oh + y) * ow + x] = row[(dz * m + dy) * m + dx];
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`disassemble_input`]: scatter t³ tile rows back onto the
/// padded volume with overlapping adds, then crop away all padding. This is
/// how input gradients return to (C, D, H, W) form.
pub fn overlap_add_input_tiles<S: Element>(
    tiles: &Matrix<S>,
    geom: &TileGeometry,
) -> Result<Tensor<S>> {
    let big_t = geom.tile_count();
    let c = geom.channels;
    if tiles.rows() != big_t * c || tiles.cols() != geom.spec.t3() {
        return Err(Error::Shape(format!(
            "expected {}x{} tile matrix, got {}x{}",
            big_t * c,
            geom.spec.t3(),
            tiles.rows(),
            tiles.cols()
        )));
    }
    let (m, t) = (geom.spec.m, geom.spec.t());
    let [pd, ph, pw] = geom.padded_dims;
    let mut padded = Tensor::<S>::zeros(&[c, pd, ph, pw]);
    let dst = padded.data_mut();
    for k in 0..big_t {
        let [kd, kh, kw] = geom.tile_coords(k);
        for ci in 0..c {
            let row = tiles.row(k * c + ci);
            let mut idx = 0;
            for dz in 0..t {
                for dy in 0..t {
                    let d0 = ((ci * pd + kd * m + dz) * ph + kh * m + dy) * pw + kw * m;
                    for dx in 0..t {
                        dst[d0 + dx] += row[idx + dx];
                    }
                    idx += t;
                }
            }
        }
    }
    // crop: drop the symmetric pad and the high-side round-up
    let [d, h, w] = geom.input_dims;
    let p = geom.pad;
    let mut out = Tensor::zeros(&[c, d, h, w]);
    let o = out.data_mut();
    let src = padded.data();
    for ci in 0..c {
        for di in 0..d {
            for hi in 0..h {
                let s0 = ((ci * pd + di + p) * ph + hi + p) * pw + p;
                let t0 = ((ci * d + di) * h + hi) * w;
                o[t0..t0 + w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
    }
    Ok(out)
}

// ── tests ───────────────────────────────────────────────────────────────────
