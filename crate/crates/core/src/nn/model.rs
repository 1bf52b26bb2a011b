use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::keyed_rng;

use super::layers::{
    conv2d_backward, conv2d_forward, dropout_mask, linear_backward, linear_forward, maxpool2_backward,
    maxpool2_forward, relu_backward_inplace, relu_inplace,
};
use super::{Scalar, Tensor};

/// Layer stack: `[conv k x k -> ReLU -> maxpool 2]` per entry of
/// `conv_channels`, then flatten, linear to `hidden`, ReLU, dropout and a
/// linear layer to `outputs` logits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub in_channels: usize,
    pub input_size: usize,
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub hidden: usize,
    pub dropout: f64,
    pub outputs: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self::viprnet()
    }
}

impl NetConfig {
    /// The full classifier on 256x256 single-channel input.
    pub fn viprnet() -> Self {
        Self {
            in_channels: 1,
            input_size: 256,
            conv_channels: vec![32, 64, 128],
            kernel: 3,
            hidden: 128,
            dropout: 0.5,
            outputs: 1,
        }
    }

    /// Same layer stack on 8x8 input with a handful of channels, small
    /// enough for exhaustive finite differences.
    pub fn tiny() -> Self {
        Self {
            in_channels: 1,
            input_size: 8,
            conv_channels: vec![4, 6, 8],
            kernel: 3,
            hidden: 8,
            dropout: 0.5,
            outputs: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pools = 1usize << self.conv_channels.len();
        let ok = self.in_channels > 0
            && !self.conv_channels.is_empty()
            && self.conv_channels.iter().all(|&c| c > 0)
            && self.input_size > 0
            && self.input_size % pools == 0
            && self.kernel % 2 == 1
            && self.hidden > 0
            && self.outputs > 0
            && (0.0..1.0).contains(&self.dropout);
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("network config {self:?}")))
        }
    }

    /// Spatial extent after all pooling stages.
    pub fn final_size(&self) -> usize {
        self.input_size >> self.conv_channels.len()
    }

    pub fn flat_features(&self) -> usize {
        let last = *self.conv_channels.last().expect("validated");
        last * self.final_size() * self.final_size()
    }

    /// Parameter names and shapes in storage order. Conv layers sit at
    /// indices 0, 3, 6, ... of the feature stack (conv, ReLU, pool); the
    /// head is flatten, linear, ReLU, dropout, linear.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        let mut specs = Vec::new();
        let mut cin = self.in_channels;
        for (i, &cout) in self.conv_channels.iter().enumerate() {
            specs.push((format!("conv_layers.{}.weight", 3 * i), vec![cout, cin, self.kernel, self.kernel]));
            specs.push((format!("conv_layers.{}.bias", 3 * i), vec![cout]));
            cin = cout;
        }
        specs.push(("fc_layers.1.weight".into(), vec![self.hidden, self.flat_features()]));
        specs.push(("fc_layers.1.bias".into(), vec![self.hidden]));
        specs.push(("fc_layers.4.weight".into(), vec![self.outputs, self.hidden]));
        specs.push(("fc_layers.4.bias".into(), vec![self.outputs]));
        specs
    }

    pub fn parameter_count(&self) -> usize {
        self.param_specs().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }
}

/// He-normal weights (`std = sqrt(2 / fan_in)`) and zero biases. Each
/// tensor draws from its own stream keyed by its position.
pub fn init_weights<T: Scalar>(cfg: &NetConfig, seed: u64) -> Result<Viprnet<T>> {
    cfg.validate()?;
    let params = cfg
        .param_specs()
        .into_iter()
        .enumerate()
        .map(|(i, (name, shape))| {
            let mut t = Tensor::zeros(shape);
            if name.ends_with(".weight") {
                let fan_in: usize = t.shape()[1..].iter().product();
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                let mut rng = keyed_rng(seed, &[0x1417, i as u64]);
                t.values.iter_mut().for_each(|v| *v = T::of(normal.sample(&mut rng)));
            }
            t
        })
        .collect();
    Ok(Viprnet { config: cfg.clone(), params })
}

/// Training-mode dropout: sample `i` of the batch uses stream
/// `(seed, keys[i])`.
#[derive(Clone, Copy, Debug)]
pub struct DropoutKeys<'a> {
    pub seed: u64,
    pub keys: &'a [u64],
}

struct ConvStage<T> {
    input: Tensor<T>,
    activated_shape: Vec<usize>,
    activated: Vec<T>,
    argmax: Vec<u32>,
}

/// Activations retained by a forward pass for the backward pass.
pub struct ForwardCache<T> {
    stages: Vec<ConvStage<T>>,
    flat: Tensor<T>,
    hidden: Vec<T>,
    mask: Option<Vec<T>>,
    dropped: Tensor<T>,
}

impl<T> ForwardCache<T> {
    /// Output shape of every stage: each conv block, the flattened
    /// features, the hidden layer and the logits.
    pub fn shapes(&self) -> Vec<Vec<usize>> {
        let mut out: Vec<Vec<usize>> = self
            .stages
            .iter()
            .map(|s| {
                let a = &s.activated_shape;
                vec![a[0], a[1], a[2] / 2, a[3] / 2]
            })
            .collect();
        out.push(self.flat.shape().to_vec());
        out.push(self.dropped.shape().to_vec());
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Viprnet<T> {
    pub config: NetConfig,
    /// Tensors in [`NetConfig::param_specs`] order.
    pub params: Vec<Tensor<T>>,
}

impl<T: Scalar> Viprnet<T> {
    pub fn zeros(cfg: &NetConfig) -> Result<Self> {
        cfg.validate()?;
        let params = cfg.param_specs().into_iter().map(|(_, s)| Tensor::zeros(s)).collect();
        Ok(Self { config: cfg.clone(), params })
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<T>> {
        self.config
            .param_specs()
            .iter()
            .position(|(n, _)| n == name)
            .map(|i| &self.params[i])
    }

    pub fn check_input(&self, x: &Tensor<T>) -> Result<usize> {
        let c = &self.config;
        let (n, ch, h, w) = x.dims4()?;
        if ch != c.in_channels || h != c.input_size || w != c.input_size {
            return Err(Error::shape(
                [n, c.in_channels, c.input_size, c.input_size],
                x.shape(),
            ));
        }
        Ok(n)
    }

    /// Logits `[N, outputs]` plus the cache for [`Viprnet::backward`].
    /// Dropout is applied only when `dropout` is given.
    pub fn forward(&self, x: &Tensor<T>, dropout: Option<DropoutKeys<'_>>) -> Result<(Tensor<T>, ForwardCache<T>)> {
        let n = self.check_input(x)?;
        let convs = self.config.conv_channels.len();
        let mut stages = Vec::with_capacity(convs);
        let mut cur = x.clone();
        for i in 0..convs {
            let mut act = conv2d_forward(&cur, &self.params[2 * i], &self.params[2 * i + 1])?;
            relu_inplace(&mut act.values);
            let (pooled, argmax) = maxpool2_forward(&act)?;
            stages.push(ConvStage {
                input: cur,
                activated_shape: act.shape().to_vec(),
                activated: act.values,
                argmax,
            });
            cur = pooled;
        }
        let flat = cur.reshape(vec![n, self.config.flat_features()])?;
        let fc = 2 * convs;
        let mut hidden = linear_forward(&flat, &self.params[fc], &self.params[fc + 1])?;
        relu_inplace(&mut hidden.values);
        let hidden_values = hidden.values.clone();
        let mut mask = None;
        if let Some(d) = dropout {
            if d.keys.len() != n {
                return Err(Error::shape([n], [d.keys.len()]));
            }
            if self.config.dropout > 0.0 {
                let m: Vec<T> = dropout_mask(self.config.hidden, self.config.dropout, d.seed, d.keys);
                hidden.values.iter_mut().zip(&m).for_each(|(v, &k)| *v = *v * k);
                mask = Some(m);
            }
        }
        let logits = linear_forward(&hidden, &self.params[fc + 2], &self.params[fc + 3])?;
        Ok((
            logits,
            ForwardCache {
                stages,
                flat,
                hidden: hidden_values,
                mask,
                dropped: hidden,
            },
        ))
    }

    /// Evaluation-mode forward pass returning the output shape of every
    /// stage, ending with the logits.
    pub fn shape_trace(&self, x: &Tensor<T>) -> Result<Vec<Vec<usize>>> {
        let (logits, cache) = self.forward(x, None)?;
        let mut shapes = cache.shapes();
        shapes.push(logits.shape().to_vec());
        Ok(shapes)
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward(x, None)?.0)
    }

    /// Parameter gradients (aligned with `params`) given `d loss / d logits`.
    pub fn backward(&self, cache: &ForwardCache<T>, grad_logits: &Tensor<T>) -> Result<Vec<Vec<T>>> {
        let convs = self.config.conv_channels.len();
        let fc = 2 * convs;
        let mut grads: Vec<Vec<T>> = vec![Vec::new(); self.params.len()];

        let out = linear_backward(&cache.dropped, &self.params[fc + 2], grad_logits)?;
        grads[fc + 2] = out.weight;
        grads[fc + 3] = out.bias;
        let mut g = out.input;
        if let Some(m) = &cache.mask {
            g.values.iter_mut().zip(m).for_each(|(v, &k)| *v = *v * k);
        }
        relu_backward_inplace(&cache.hidden, &mut g.values);
        let h = linear_backward(&cache.flat, &self.params[fc], &g)?;
        grads[fc] = h.weight;
        grads[fc + 1] = h.bias;

        let last = cache.stages.last().expect("at least one conv");
        let (n, c, hh, ww) = (last.activated_shape[0], last.activated_shape[1], last.activated_shape[2], last.activated_shape[3]);
        let mut g = h.input.reshape(vec![n, c, hh / 2, ww / 2])?;
        for i in (0..convs).rev() {
            let st = &cache.stages[i];
            let mut ga = maxpool2_backward(&st.activated_shape, &st.argmax, &g)?;
            relu_backward_inplace(&st.activated, &mut ga.values);
            let cg = conv2d_backward(&st.input, &self.params[2 * i], &self.params[2 * i + 1], &ga, i > 0)?;
            grads[2 * i] = cg.weight;
            grads[2 * i + 1] = cg.bias;
            if let Some(gi) = cg.input {
                g = gi;
            }
        }
        Ok(grads)
    }

    /// Converts every parameter to another precision.
    pub fn cast<U: Scalar>(&self) -> Viprnet<U> {
        Viprnet {
            config: self.config.clone(),
            params: self
                .params
                .iter()
                .map(|t| {
                    Tensor::new(t.shape().to_vec(), t.values.iter().map(|v| U::of(v.f64())).collect())
                        .expect("same shape")
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_dimensions() {
        let c = NetConfig::viprnet();
        c.validate().unwrap();
        assert_eq!(c.flat_features(), 131_072);
        let specs = c.param_specs();
        assert_eq!(specs[0], ("conv_layers.0.weight".to_string(), vec![32, 1, 3, 3]));
        assert_eq!(specs[4].0, "conv_layers.6.weight");
        assert_eq!(specs[6], ("fc_layers.1.weight".to_string(), vec![128, 131_072]));
        assert_eq!(specs[9], ("fc_layers.4.bias".to_string(), vec![1]));
        assert!(NetConfig { input_size: 12, ..NetConfig::tiny() }.validate().is_err());
    }

    #[test]
    fn init_statistics() {
        let c = NetConfig::viprnet();
        let a: Viprnet<f32> = init_weights(&c, 3).unwrap();
        let b: Viprnet<f32> = init_weights(&c, 3).unwrap();
        assert_eq!(a, b);
        for (i, (name, _)) in c.param_specs().iter().enumerate() {
            if name.ends_with(".bias") {
                assert!(a.params[i].values.iter().all(|&v| v == 0.0));
            }
        }
        let w = &a.params[0].values;
        let mean = w.iter().map(|&v| f64::from(v)).sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let want = 2.0 / 9.0;
        assert!((var - want).abs() < 0.3 * want, "{var}");
    }

    #[test]
    fn tiny_forward_shapes_and_input_errors() {
        let c = NetConfig::tiny();
        let net: Viprnet<f64> = init_weights(&c, 1).unwrap();
        let x = Tensor::zeros(vec![2, 1, 8, 8]);
        let (y, cache) = net.forward(&x, None).unwrap();
        assert_eq!(y.shape(), &[2, 1]);
        assert_eq!(
            cache.shapes(),
            vec![vec![2, 4, 4, 4], vec![2, 6, 2, 2], vec![2, 8, 1, 1], vec![2, 8], vec![2, 8]]
        );
        assert!(net.forward(&Tensor::zeros(vec![1, 1, 8, 6]), None).is_err());
    }

    #[test]
    fn zero_net_outputs_zero_logit() {
        let net: Viprnet<f32> = Viprnet::zeros(&NetConfig::tiny()).unwrap();
        let x = Tensor::new(vec![1, 1, 8, 8], vec![0.7; 64]).unwrap();
        assert_eq!(net.logits(&x).unwrap().values, vec![0.0]);
    }
}
