//! Strided valid convolution and the pixel encoder.

use super::mlp::{affine_forward, OpRecord, Tape};
use super::{init_orthogonal, ParamSet, Tensor};
use crate::error::{Error, Result};
use crate::rng::DetRng;

/// One convolution layer: `out_ch` kernels of size `ksize` over `in_ch`
/// channels, applied with `stride` and no padding, followed by ReLU.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
}

impl ConvLayerSpec {
    pub fn out_spatial(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h < self.ksize || w < self.ksize {
            return Err(Error::ShapeMismatch(format!(
                "image {h}x{w} smaller than {0}x{0} kernel",
                self.ksize
            )));
        }
        Ok(((h - self.ksize) / self.stride + 1, (w - self.ksize) / self.stride + 1))
    }
}

/// Conv stack + flatten + linear head mapping pixels to a feature vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvEncoderSpec {
    /// Input image shape `[channels, height, width]`.
    pub in_shape: [usize; 3],
    pub layers: Vec<ConvLayerSpec>,
    pub feat_dim: usize,
}

impl ConvEncoderSpec {
    /// Two strided conv layers and a linear head; the default pixel encoder.
    pub fn default_pixel(in_shape: [usize; 3], feat_dim: usize) -> Self {
        let c = in_shape[0];
        ConvEncoderSpec {
            in_shape,
            layers: vec![
                ConvLayerSpec { in_ch: c, out_ch: 16, ksize: 3, stride: 2 },
                ConvLayerSpec { in_ch: 16, out_ch: 16, ksize: 3, stride: 2 },
            ],
            feat_dim,
        }
    }

    pub fn flat_conv_len(&self) -> Result<usize> {
        let (mut h, mut w) = (self.in_shape[1], self.in_shape[2]);
        let mut ch = self.in_shape[0];
        for layer in &self.layers {
            if layer.in_ch != ch {
                return Err(Error::ShapeMismatch(format!(
                    "conv layer expects {} channels, got {ch}",
                    layer.in_ch
                )));
            }
            let (oh, ow) = layer.out_spatial(h, w)?;
            h = oh;
            w = ow;
            ch = layer.out_ch;
        }
        Ok(ch * h * w)
    }
}

fn conv_core(
    kernel: &Tensor,
    bias: &Tensor,
    input: &[f64],
    in_shape: [usize; 3],
    ksize: usize,
    stride: usize,
) -> Result<(Vec<f64>, [usize; 3])> {
    let [c_in, h, w] = in_shape;
    let out_ch = kernel.shape[0];
    if kernel.shape[1] != c_in {
        return Err(Error::ShapeMismatch(format!(
            "kernel has {} input channels, image has {c_in}",
            kernel.shape[1]
        )));
    }
    if h < ksize || w < ksize {
        return Err(Error::ShapeMismatch(format!(
            "image {h}x{w} smaller than {ksize}x{ksize} kernel"
        )));
    }
    let oh = (h - ksize) / stride + 1;
    let ow = (w - ksize) / stride + 1;
    let mut out = vec![0.0; out_ch * oh * ow];
    for o in 0..out_ch {
        let k_base = o * c_in * ksize * ksize;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = bias.data[o];
                for c in 0..c_in {
                    let in_base = c * h * w;
                    let k_chan = k_base + c * ksize * ksize;
                    for u in 0..ksize {
                        let row = in_base + (i * stride + u) * w + j * stride;
                        let krow = k_chan + u * ksize;
                        for v in 0..ksize {
                            acc += kernel.data[krow + v] * input[row + v];
                        }
                    }
                }
                out[(o * oh + i) * ow + j] = acc;
            }
        }
    }
    Ok((out, [out_ch, oh, ow]))
}

#[allow(clippy::too_many_arguments)]
pub(super) fn conv_backward(
    params: &ParamSet,
    grads: &mut ParamSet,
    k_idx: usize,
    b_idx: usize,
    input: &[f64],
    in_shape: [usize; 3],
    out_shape: [usize; 3],
    ksize: usize,
    stride: usize,
    g: &[f64],
) -> Result<Vec<f64>> {
    let kernel = params.tensor_at(k_idx).clone();
    let [c_in, h, w] = in_shape;
    let [out_ch, oh, ow] = out_shape;
    let mut din = vec![0.0; input.len()];
    {
        let gb = grads.tensor_at_mut(b_idx);
        for o in 0..out_ch {
            let mut acc = 0.0;
            for i in 0..oh {
                for j in 0..ow {
                    acc += g[(o * oh + i) * ow + j];
                }
            }
            gb.data[o] += acc;
        }
    }
    let gk = grads.tensor_at_mut(k_idx);
    for o in 0..out_ch {
        let k_base = o * c_in * ksize * ksize;
        for i in 0..oh {
            for j in 0..ow {
                let gv = g[(o * oh + i) * ow + j];
                if gv == 0.0 {
                    continue;
                }
                for c in 0..c_in {
                    let in_base = c * h * w;
                    let k_chan = k_base + c * ksize * ksize;
                    for u in 0..ksize {
                        let row = in_base + (i * stride + u) * w + j * stride;
                        let krow = k_chan + u * ksize;
                        for v in 0..ksize {
                            gk.data[krow + v] += gv * input[row + v];
                            din[row + v] += gv * kernel.data[krow + v];
                        }
                    }
                }
            }
        }
    }
    Ok(din)
}

/// Single conv layer (+ReLU) on a `[C, H, W]` tensor, with tape.
pub fn conv_forward(
    layer: &ConvLayerSpec,
    params: &ParamSet,
    k_name: &str,
    b_name: &str,
    image: &Tensor,
) -> Result<(Tensor, Tape)> {
    if image.shape.len() != 3 || image.shape[0] != layer.in_ch {
        return Err(Error::ShapeMismatch(format!(
            "conv expects [{}, H, W], got {:?}",
            layer.in_ch, image.shape
        )));
    }
    let in_shape = [image.shape[0], image.shape[1], image.shape[2]];
    let k_idx = params.index_of(k_name)?;
    let b_idx = params.index_of(b_name)?;
    let kernel = params.tensor_at(k_idx);
    let bias = params.tensor_at(b_idx);
    let (pre, out_shape) = conv_core(kernel, bias, &image.data, in_shape, layer.ksize, layer.stride)?;
    let mut records = vec![OpRecord::Conv {
        k: k_idx,
        b: b_idx,
        input: image.data.clone(),
        in_shape,
        out_shape,
        ksize: layer.ksize,
        stride: layer.stride,
    }];
    records.push(OpRecord::Relu { pre: pre.clone() });
    let data: Vec<f64> = pre.into_iter().map(|v| v.max(0.0)).collect();
    let output_len = data.len();
    Ok((
        Tensor { shape: out_shape.to_vec(), data },
        Tape { records, output_len },
    ))
}

/// Parameter names used by [`encoder_forward`].
pub fn encoder_param_names(layer: usize) -> (String, String) {
    (format!("k{layer}"), format!("cb{layer}"))
}

/// Full pixel encoder: conv layers with ReLU, flatten, linear head.
pub fn encoder_forward(
    spec: &ConvEncoderSpec,
    params: &ParamSet,
    image: &Tensor,
) -> Result<(Vec<f64>, Tape)> {
    if image.shape != spec.in_shape.to_vec() {
        return Err(Error::ShapeMismatch(format!(
            "encoder expects {:?}, got {:?}",
            spec.in_shape, image.shape
        )));
    }
    let mut records = Vec::new();
    let mut data = image.data.clone();
    let mut shape = spec.in_shape;
    for (idx, layer) in spec.layers.iter().enumerate() {
        let (k_name, b_name) = encoder_param_names(idx);
        let k_idx = params.index_of(&k_name)?;
        let b_idx = params.index_of(&b_name)?;
        let kernel = params.tensor_at(k_idx);
        let bias = params.tensor_at(b_idx);
        let (pre, out_shape) = conv_core(kernel, bias, &data, shape, layer.ksize, layer.stride)?;
        records.push(OpRecord::Conv {
            k: k_idx,
            b: b_idx,
            input: std::mem::take(&mut data),
            in_shape: shape,
            out_shape,
            ksize: layer.ksize,
            stride: layer.stride,
        });
        records.push(OpRecord::Relu { pre: pre.clone() });
        data = pre.into_iter().map(|v| v.max(0.0)).collect();
        shape = out_shape;
    }
    let fw = params.index_of("fw")?;
    let fb = params.index_of("fb")?;
    let features = affine_forward(params, fw, fb, &data)?;
    records.push(OpRecord::Affine { w: fw, b: fb, input: data });
    let output_len = features.len();
    Ok((features, Tape { records, output_len }))
}

/// Orthogonal kernels (gain sqrt(2), flattened per output channel), zero
/// biases, gain-1 linear head.
pub fn init_conv_encoder(spec: &ConvEncoderSpec, rng: &mut DetRng) -> Result<ParamSet> {
    let mut params = ParamSet::new();
    for (idx, layer) in spec.layers.iter().enumerate() {
        let (k_name, b_name) = encoder_param_names(idx);
        let fan_in = layer.in_ch * layer.ksize * layer.ksize;
        let flat = init_orthogonal(layer.out_ch, fan_in, std::f64::consts::SQRT_2, rng);
        let kernel = Tensor::from_vec(
            &[layer.out_ch, layer.in_ch, layer.ksize, layer.ksize],
            flat.data,
        )?;
        params.insert(&k_name, kernel)?;
        params.insert(&b_name, Tensor::zeros(&[layer.out_ch]))?;
    }
    let flat_len = spec.flat_conv_len()?;
    params.insert("fw", init_orthogonal(spec.feat_dim, flat_len, 1.0, rng))?;
    params.insert("fb", Tensor::zeros(&[spec.feat_dim]))?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{backward, mlp_forward, MlpSpec, OutputActivation};

    #[test]
    fn one_by_one_kernel_mixes_channels() {
        let layer = ConvLayerSpec { in_ch: 2, out_ch: 1, ksize: 1, stride: 1 };
        let mut params = ParamSet::new();
        params
            .insert("k", Tensor::from_vec(&[1, 2, 1, 1], vec![2.0, 3.0]).unwrap())
            .unwrap();
        params.insert("b", Tensor::zeros(&[1])).unwrap();
        let image = Tensor::from_vec(&[2, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 10.0, 20.0, 30.0, 40.0])
            .unwrap();
        let (out, _) = conv_forward(&layer, &params, "k", "b", &image).unwrap();
        assert_eq!(out.shape, vec![1, 2, 2]);
        assert_eq!(out.data, vec![32.0, 64.0, 96.0, 128.0]);
    }

    #[test]
    fn known_kernel_on_5x5_matches_hand_computation() {
        // image i*5+j, all-ones 3x3 kernel: each window sums to 9x its centre
        let layer = ConvLayerSpec { in_ch: 1, out_ch: 1, ksize: 3, stride: 1 };
        let mut params = ParamSet::new();
        params
            .insert("k", Tensor::from_vec(&[1, 1, 3, 3], vec![1.0; 9]).unwrap())
            .unwrap();
        params.insert("b", Tensor::zeros(&[1])).unwrap();
        let image =
            Tensor::from_vec(&[1, 5, 5], (0..25).map(|v| v as f64).collect()).unwrap();
        let (out, _) = conv_forward(&layer, &params, "k", "b", &image).unwrap();
        assert_eq!(out.shape, vec![1, 3, 3]);
        let want = [54.0, 63.0, 72.0, 99.0, 108.0, 117.0, 144.0, 153.0, 162.0];
        assert_eq!(out.data, want);
    }

    #[test]
    fn rejects_image_smaller_than_kernel() {
        let layer = ConvLayerSpec { in_ch: 1, out_ch: 1, ksize: 3, stride: 1 };
        let mut params = ParamSet::new();
        params.insert("k", Tensor::zeros(&[1, 1, 3, 3])).unwrap();
        params.insert("b", Tensor::zeros(&[1])).unwrap();
        let image = Tensor::zeros(&[1, 2, 2]);
        assert!(conv_forward(&layer, &params, "k", "b", &image).is_err());
    }

    #[test]
    fn strided_output_dims() {
        let layer = ConvLayerSpec { in_ch: 1, out_ch: 2, ksize: 3, stride: 2 };
        assert_eq!(layer.out_spatial(9, 7).unwrap(), (4, 3));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let layer = ConvLayerSpec { in_ch: 2, out_ch: 3, ksize: 3, stride: 2 };
        let mut rng = DetRng::new(77);
        let mut params = ParamSet::new();
        let fan_in = 2 * 9;
        let flat = init_orthogonal(3, fan_in, 1.0, &mut rng);
        params
            .insert("k", Tensor::from_vec(&[3, 2, 3, 3], flat.data).unwrap())
            .unwrap();
        params.insert("b", Tensor::zeros(&[3])).unwrap();
        let image = Tensor::from_vec(
            &[2, 6, 6],
            (0..72).map(|_| rng.uniform(-1.0, 1.0)).collect(),
        )
        .unwrap();
        let (out, tape) = conv_forward(&layer, &params, "k", "b", &image).unwrap();
        let out_grad: Vec<f64> = (0..out.len()).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (grads, input_grad) = backward(&params, tape, &out_grad).unwrap();

        let loss = |p: &ParamSet, img: &Tensor| -> f64 {
            let (o, _) = conv_forward(&layer, p, "k", "b", img).unwrap();
            o.data.iter().zip(&out_grad).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let flat = params.to_flat();
        let flat_grads = grads.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            let mut plus = params.clone();
            let mut minus = params.clone();
            fp[i] += h;
            plus.assign_flat(&fp).unwrap();
            fp[i] -= 2.0 * h;
            minus.assign_flat(&fp).unwrap();
            let fd = (loss(&plus, &image) - loss(&minus, &image)) / (2.0 * h);
            let denom = fd.abs().max(flat_grads[i].abs()).max(1e-6);
            assert!((fd - flat_grads[i]).abs() / denom < 1e-4, "param {i}");
        }
        for i in (0..image.len()).step_by(7) {
            let mut ip = image.clone();
            let mut im = image.clone();
            ip.data[i] += h;
            im.data[i] -= h;
            let fd = (loss(&params, &ip) - loss(&params, &im)) / (2.0 * h);
            let denom = fd.abs().max(input_grad[i].abs()).max(1e-6);
            assert!((fd - input_grad[i]).abs() / denom < 1e-4, "pixel {i}");
        }
    }

    #[test]
    fn encoder_shapes_and_gradcheck() {
        let spec = ConvEncoderSpec {
            in_shape: [2, 9, 9],
            layers: vec![
                ConvLayerSpec { in_ch: 2, out_ch: 3, ksize: 3, stride: 2 },
                ConvLayerSpec { in_ch: 3, out_ch: 3, ksize: 2, stride: 1 },
            ],
            feat_dim: 5,
        };
        let mut rng = DetRng::new(1);
        let params = init_conv_encoder(&spec, &mut rng).unwrap();
        let image = Tensor::from_vec(
            &[2, 9, 9],
            (0..162).map(|_| rng.uniform(0.0, 1.0)).collect(),
        )
        .unwrap();
        let (feat, tape) = encoder_forward(&spec, &params, &image).unwrap();
        assert_eq!(feat.len(), 5);
        let out_grad: Vec<f64> = (0..5).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let (grads, _) = backward(&params, tape, &out_grad).unwrap();

        let loss = |p: &ParamSet| -> f64 {
            let (f, _) = encoder_forward(&spec, p, &image).unwrap();
            f.iter().zip(&out_grad).map(|(a, b)| a * b).sum()
        };
        let h = 1e-5;
        let flat = params.to_flat();
        let flat_grads = grads.to_flat();
        for i in (0..flat.len()).step_by(13) {
            let mut fp = flat.clone();
            let mut plus = params.clone();
            let mut minus = params.clone();
            fp[i] += h;
            plus.assign_flat(&fp).unwrap();
            fp[i] -= 2.0 * h;
            minus.assign_flat(&fp).unwrap();
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let denom = fd.abs().max(flat_grads[i].abs()).max(1e-6);
            assert!((fd - flat_grads[i]).abs() / denom < 1e-4, "param {i}");
        }
    }

    #[test]
    fn encoder_composes_with_mlp_feature_consumers() {
        // features feed an MLP head exactly like the agent wires them
        let spec = ConvEncoderSpec::default_pixel([3, 21, 21], 8);
        let mut rng = DetRng::new(9);
        let params = init_conv_encoder(&spec, &mut rng).unwrap();
        let image = Tensor::from_vec(
            &[3, 21, 21],
            (0..3 * 21 * 21).map(|_| rng.uniform(0.0, 1.0)).collect(),
        )
        .unwrap();
        let (feat, _) = encoder_forward(&spec, &params, &image).unwrap();
        let head = MlpSpec::new(vec![8, 4], OutputActivation::Tanh);
        let head_params = head.init_params(&mut rng, Some(1e-2));
        let (out, _) = mlp_forward(&head, &head_params, &feat).unwrap();
        assert_eq!(out.len(), 4);
        assert!(out.iter().all(|v| v.abs() <= 1.0));
    }
}
