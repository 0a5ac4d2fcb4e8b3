//! Reference 3D convolutions: a seven-loop direct implementation and an
//! im2col + GEMM implementation.
//!
//! Both compute the same valid cross-correlation over a zero-padded volume.
//! The direct form is the ground truth every other path in the crate is
//! checked against; im2col is the throughput baseline the benchmark compares
//! Winograd strategies to. "Convolution" throughout means correlation (no
//! kernel flip), matching how convnet layers are conventionally defined.

use crate::error::{Error, Result};
use crate::tensor::{Element, Matrix, Tensor};

/// One convolution instance: (C_i, D, H, W) input, (C_o, C_i, r, r, r)
/// kernel, symmetric zero padding, stride 1.
#[derive(Clone, Debug)]
pub struct ConvProblem<S: Element> {
    pub input: Tensor<S>,
    pub kernel: Tensor<S>,
    pub pad: usize,
}

/// Shape checks shared by the owning and borrowing entry points.
fn validate<S: Element>(input: &Tensor<S>, kernel: &Tensor<S>, pad: usize) -> Result<()> {
    if input.ndim() != 4 {
        return Err(Error::Shape(format!(
            "input must be (C, D, H, W), got {:?}",
            input.dims()
        )));
    }
    if kernel.ndim() != 5 {
        return Err(Error::Shape(format!(
            "kernel must be (C_o, C_i, r, r, r), got {:?}",
            kernel.dims()
        )));
    }
    let kd = kernel.dims();
    if kd[2] != kd[3] || kd[3] != kd[4] {
        return Err(Error::Shape(format!("kernel must be cubic, got {kd:?}")));
    }
    if kd[1] != input.dims()[0] {
        return Err(Error::Shape(format!(
            "kernel expects {} input channels, input has {}",
            kd[1],
            input.dims()[0]
        )));
    }
    let r = kd[2];
    for a in 1..4 {
        if input.dims()[a] + 2 * pad < r {
            return Err(Error::Shape(format!(
                "axis {a}: extent {} + 2·pad {pad} shorter than kernel {r}",
                input.dims()[a]
            )));
        }
    }
    Ok(())
}

impl<S: Element> ConvProblem<S> {
    pub fn new(input: Tensor<S>, kernel: Tensor<S>, pad: usize) -> Result<Self> {
        validate(&input, &kernel, pad)?;
        Ok(ConvProblem { input, kernel, pad })
    }

    pub fn c_in(&self) -> usize {
        self.input.dims()[0]
    }

    pub fn c_out(&self) -> usize {
        self.kernel.dims()[0]
    }

    pub fn r(&self) -> usize {
        self.kernel.dims()[2]
    }

    /// Output spatial extents (D_o, H_o, W_o).
    pub fn out_dims(&self) -> [usize; 3] {
        let r = self.r();
        [
            self.input.dims()[1] + 2 * self.pad - r + 1,
            self.input.dims()[2] + 2 * self.pad - r + 1,
            self.input.dims()[3] + 2 * self.pad - r + 1,
        ]
    }
}

#[inline(always)]
fn padded_get<S: Element>(x: &Tensor<S>, c: usize, z: isize, y: isize, xx: isize) -> S {
    let d = x.dims();
    if z < 0
        || y < 0
        || xx < 0
        || z as usize >= d[1]
        || y as usize >= d[2]
        || xx as usize >= d[3]
    {
        S::ZERO
    } else {
        x.data()[((c * d[1] + z as usize) * d[2] + y as usize) * d[3] + xx as usize]
    }
}

/// Direct seven-loop convolution on borrowed tensors. Accumulation order per
/// output element is input channel ascending, then kernel taps in row-major
/// order. Used by the trainer's spatial layers, which keep input and kernel
/// in separate structures.
pub fn conv3d_forward<S: Element>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    pad: usize,
) -> Result<Tensor<S>> {
    validate(input, kernel, pad)?;
    let r = kernel.dims()[2];
    let od = input.dims()[1] + 2 * pad - r + 1;
    let oh = input.dims()[2] + 2 * pad - r + 1;
    let ow = input.dims()[3] + 2 * pad - r + 1;
    let (c_in, c_out) = (input.dims()[0], kernel.dims()[0]);
    let pad = pad as isize;
    let mut out = Tensor::zeros(&[c_out, od, oh, ow]);
    let kdata = kernel.data();
    let odata = out.data_mut();
    for n in 0..c_out {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = S::ZERO;
                    for c in 0..c_in {
                        let kbase = ((n * c_in) + c) * r * r * r;
                        for kz in 0..r {
                            for ky in 0..r {
                                for kx in 0..r {
                                    let w = kdata[kbase + (kz * r + ky) * r + kx];
                                    let v = padded_get(
                                        input,
                                        c,
                                        z as isize + kz as isize - pad,
                                        y as isize + ky as isize - pad,
                                        x as isize + kx as isize - pad,
                                    );
                                    acc += w * v;
                                }
                            }
                        }
                    }
                    odata[((n * od + z) * oh + y) * ow + x] = acc;
                }
            }
        }
    }
    Ok(out)
}

/// Direct seven-loop convolution of a [`ConvProblem`].
pub fn direct_conv3d<S: Element>(p: &ConvProblem<S>) -> Result<Tensor<S>> {
    conv3d_forward(&p.input, &p.kernel, p.pad)
}

/// im2col convolution: unfold all kernel-sized patches into the columns of a
/// `(C_i·r³) x (D_o·H_o·W_o)` matrix and hit it with the `C_o x (C_i·r³)`
/// kernel matrix in one GEMM. Returns the output and the exact multiply
/// count `C_o·C_i·r³·D_o·H_o·W_o` taken from the executed GEMM extents.
pub fn im2col_conv3d_counted<S: Element>(p: &ConvProblem<S>) -> Result<(Tensor<S>, u64)> {
    let [od, oh, ow] = p.out_dims();
    let (c_in, c_out, r) = (p.c_in(), p.c_out(), p.r());
    let pad = p.pad as isize;
    let patch_len = c_in * r * r * r;
    let n_out = od * oh * ow;

    let mut patches = Matrix::zeros(patch_len, n_out);
    for c in 0..c_in {
        for kz in 0..r {
            for ky in 0..r {
                for kx in 0..r {
                    let row = patches.row_mut(((c * r + kz) * r + ky) * r + kx);
                    let mut col = 0;
                    for z in 0..od {
                        for y in 0..oh {
                            for x in 0..ow {
                                row[col] = padded_get(
                                    &p.input,
                                    c,
                                    z as isize + kz as isize - pad,
                                    y as isize + ky as isize - pad,
                                    x as isize + kx as isize - pad,
                                );
                                col += 1;
                            }
                        }
                    }
                }
            }
        }
    }

    let kmat = Matrix::new(c_out, patch_len, p.kernel.data().to_vec())?;
    let out = kmat.matmul(&patches);
    let mults = (c_out * patch_len * n_out) as u64;
    Ok((Tensor::new(vec![c_out, od, oh, ow], out.into_data())?, mults))
}

pub fn im2col_conv3d<S: Element>(p: &ConvProblem<S>) -> Result<Tensor<S>> {
    im2col_conv3d_counted(p).map(|(t, _)| t)
}

/// Gradients of the direct convolution on borrowed tensors: given
/// dL/d(output), return (dL/d(kernel), dL/d(input)). Used by the spatial
/// layers of the trainer and as an oracle for the Winograd backward path.
pub fn conv3d_backward<S: Element>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    pad: usize,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    validate(input, kernel, pad)?;
    let r = kernel.dims()[2];
    let od = input.dims()[1] + 2 * pad - r + 1;
    let oh = input.dims()[2] + 2 * pad - r + 1;
    let ow = input.dims()[3] + 2 * pad - r + 1;
    let (c_in, c_out) = (input.dims()[0], kernel.dims()[0]);
    if d_out.dims() != [c_out, od, oh, ow] {
        return Err(Error::Shape(format!(
            "output gradient dims {:?} do not match output {:?}",
            d_out.dims(),
            [c_out, od, oh, ow]
        )));
    }
    let pad = pad as isize;
    let idims = input.dims().to_vec();
    let mut d_kernel = Tensor::zeros(kernel.dims());
    let mut d_input = Tensor::zeros(&idims);
    let dk = d_kernel.data_mut();
    let go = d_out.data();
    for n in 0..c_out {
        for c in 0..c_in {
            for kz in 0..r {
                for ky in 0..r {
                    for kx in 0..r {
                        let mut acc = S::ZERO;
                        for z in 0..od {
                            for y in 0..oh {
                                for x in 0..ow {
                                    let v = padded_get(
                                        input,
                                        c,
                                        z as isize + kz as isize - pad,
                                        y as isize + ky as isize - pad,
                                        x as isize + kx as isize - pad,
                                    );
                                    acc += go[((n * od + z) * oh + y) * ow + x] * v;
                                }
                            }
                        }
                        dk[((n * c_in + c) * r * r + kz * r + ky) * r + kx] = acc;
                    }
                }
            }
        }
    }
    let di = d_input.data_mut();
    let kdata = kernel.data();
    for n in 0..c_out {
        for z in 0..od {
            for y in 0..oh {
                for x in 0..ow {
                    let g = go[((n * od + z) * oh + y) * ow + x];
                    for c in 0..c_in {
                        let kbase = (n * c_in + c) * r * r * r;
                        for kz in 0..r {
                            let iz = z as isize + kz as isize - pad;
                            if iz < 0 || iz as usize >= idims[1] {
                                continue;
                            }
                            for ky in 0..r {
                                let iy = y as isize + ky as isize - pad;
                                if iy < 0 || iy as usize >= idims[2] {
                                    continue;
                                }
                                for kx in 0..r {
                                    let ix = x as isize + kx as isize - pad;
                                    if ix < 0 || ix as usize >= idims[3] {
                                        continue;
                                    }
                                    di[((c * idims[1] + iz as usize) * idims[2] + iy as usize)
                                        * idims[3]
                                        + ix as usize] +=
                                        g * kdata[kbase + (kz * r + ky) * r + kx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok((d_kernel, d_input))
}

/// Gradient form of [`direct_conv3d`] for a [`ConvProblem`].
pub fn direct_conv3d_backward<S: Element>(
    p: &ConvProblem<S>,
    d_out: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    conv3d_backward(&p.input, &p.kernel, p.pad, d_out)
}

/// Random problem for tests and benchmarks.
pub fn random_problem<S: Element>(
    rng: &mut crate::rng::Rng,
    c_in: usize,
    c_out: usize,
    dims: [usize; 3],
    r: usize,
    pad: usize,
) -> ConvProblem<S> {
    let input = Tensor::new(
        vec![c_in, dims[0], dims[1], dims[2]],
        rng.normal_elems(c_in * dims[0] * dims[1] * dims[2]),
    )
    .unwrap();
    let kernel = Tensor::new(
        vec![c_out, c_in, r, r, r],
        rng.normal_elems(c_out * c_in * r * r * r),
    )
    .unwrap();
    ConvProblem::new(input, kernel, pad).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn identity_kernel_with_padding_reproduces_input() {
        // delta kernel at the center tap + pad 1 => output == input
        let mut rng = Rng::new(1);
        let input = Tensor::<f64>::new(vec![1, 4, 5, 6], rng.normals(120)).unwrap();
        let mut kdata = vec![0.0; 27];
        kdata[13] = 1.0; // center of the 3x3x3 cube
        let kernel = Tensor::new(vec![1, 1, 3, 3, 3], kdata).unwrap();
        let p = ConvProblem::new(input.clone(), kernel, 1).unwrap();
        let out = direct_conv3d(&p).unwrap();
        assert_eq!(out.dims(), input.dims());
        for (o, i) in out.data().iter().zip(input.data()) {
            assert_eq!(o, i);
        }
    }

    #[test]
    fn all_ones_kernel_sums_neighborhood() {
        let input = Tensor::<f64>::new(vec![1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let kernel = Tensor::new(vec![1, 1, 3, 3, 3], vec![1.0; 27]).unwrap();
        let p = ConvProblem::new(input, kernel, 0).unwrap();
        let out = direct_conv3d(&p).unwrap();
        assert_eq!(out.dims(), &[1, 1, 1, 1]);
        assert_eq!(out.data()[0], 27.0);
    }

    #[test]
    fn hand_worked_two_channel_case() {
        // 2 input channels, valid conv on a 3³ volume; output is the sum of
        // per-channel correlations. Kernel picks corner taps so the expected
        // value is easy to read off.
        let mut in_data = vec![0.0; 2 * 27];
        in_data[0] = 2.0; // channel 0, (0,0,0)
        in_data[27 + 26] = 3.0; // channel 1, (2,2,2)
        let input = Tensor::<f64>::new(vec![2, 3, 3, 3], in_data).unwrap();
        let mut k_data = vec![0.0; 2 * 27];
        k_data[0] = 5.0; // channel 0 tap (0,0,0)
        k_data[27 + 26] = 7.0; // channel 1 tap (2,2,2)
        let kernel = Tensor::new(vec![1, 2, 3, 3, 3], k_data).unwrap();
        let p = ConvProblem::new(input, kernel, 0).unwrap();
        let out = direct_conv3d(&p).unwrap();
        assert_eq!(out.data(), &[2.0 * 5.0 + 3.0 * 7.0]);
    }

    #[test]
    fn im2col_matches_direct_on_random_problems() {
        let mut rng = Rng::new(42);
        for i in 0..25 {
            let c_in = 1 + rng.below(3);
            let c_out = 1 + rng.below(3);
            let dims = [3 + rng.below(5), 3 + rng.below(5), 3 + rng.below(5)];
            let pad = rng.below(2);
            let p = random_problem::<f64>(&mut rng, c_in, c_out, dims, 3, pad);
            let a = direct_conv3d(&p).unwrap();
            let (b, mults) = im2col_conv3d_counted(&p).unwrap();
            assert_eq!(a.dims(), b.dims());
            let [od, oh, ow] = p.out_dims();
            assert_eq!(
                mults,
                (c_out * c_in * 27 * od * oh * ow) as u64,
                "problem {i}"
            );
            let scale = a.max_abs().max(1.0);
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12 * scale, "problem {i}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn kernel_gradient_matches_central_differences() {
        let mut rng = Rng::new(7);
        let p = random_problem::<f64>(&mut rng, 2, 2, [4, 4, 4], 3, 1);
        let d_out = {
            let out = direct_conv3d(&p).unwrap();
            Tensor::new(out.dims().to_vec(), rng.normals(out.len())).unwrap()
        };
        let (dk, di) = direct_conv3d_backward(&p, &d_out).unwrap();
        let loss = |prob: &ConvProblem<f64>| -> f64 {
            direct_conv3d(prob)
                .unwrap()
                .data()
                .iter()
                .zip(d_out.data())
                .map(|(a, b)| a * b)
                .sum()
        };
        let eps = 1e-5;
        // spot-check a spread of kernel taps
        for idx in [0usize, 13, 27, 41, 53] {
            let mut plus = p.clone();
            plus.kernel.data_mut()[idx] += eps;
            let mut minus = p.clone();
            minus.kernel.data_mut()[idx] -= eps;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let ana = dk.data()[idx];
            assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1.0), "{num} vs {ana}");
        }
        // and input positions
        for idx in [0usize, 31, 63, 100, 127] {
            let mut plus = p.clone();
            plus.input.data_mut()[idx] += eps;
            let mut minus = p.clone();
            minus.input.data_mut()[idx] -= eps;
            let num = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let ana = di.data()[idx];
            assert!((num - ana).abs() <= 1e-6 * ana.abs().max(1.0), "{num} vs {ana}");
        }
    }

    #[test]
    fn shape_validation() {
        let input = Tensor::<f64>::zeros(&[2, 4, 4, 4]);
        let kernel = Tensor::<f64>::zeros(&[3, 2, 3, 3, 3]);
        assert!(ConvProblem::new(input.clone(), kernel.clone(), 0).is_ok());
        // wrong channel count
        let bad = Tensor::<f64>::zeros(&[3, 1, 3, 3, 3]);
        assert!(ConvProblem::new(input.clone(), bad, 0).is_err());
        // pad too small for the kernel
        let tiny = Tensor::<f64>::zeros(&[2, 2, 4, 4]);
        let k = Tensor::<f64>::zeros(&[1, 2, 3, 3, 3]);
        assert!(ConvProblem::new(tiny.clone(), k.clone(), 0).is_err());
        assert!(ConvProblem::new(tiny, k, 1).is_ok());
    }
}
