use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EncoderArchitecture, EncoderError};
use crate::nn::{
    global_max_pool, global_max_pool_backward, load_into, relu_backward, relu_inplace, to_f32, BatchNorm1d,
    BnCache, Conv1d, Dropout, Linear, MaxPoolCache, NamedTensor, Param, Real, StateDict,
};
use crate::signal::{SensorSet, Window};

/// Rows per inference batch.
const EMBED_CHUNK: usize = 64;

/// A bio-ID: the projection-head output for one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Embedding {
    pub values: Vec<f32>,
    pub user_id: String,
    pub device_id: String,
    pub start_time: f64,
    pub sensor_set: SensorSet,
}

impl Embedding {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Unlabeled embedding, for raw vectors.
    pub fn from_values(values: Vec<f32>, sensor_set: SensorSet) -> Self {
        Embedding {
            values,
            user_id: String::new(),
            device_id: String::new(),
            start_time: 0.0,
            sensor_set,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder<T> {
    pub arch: EncoderArchitecture,
    pub sensor_set: SensorSet,
    conv: Vec<Conv1d<T>>,
    bn: Vec<BatchNorm1d<T>>,
    head: Vec<Linear<T>>,
}

pub(super) struct BlockCache<T> {
    input: Vec<T>,
    len: usize,
    relu_out: Vec<T>,
    bn: BnCache<T>,
    mask: Option<Dropout<T>>,
}

pub(super) struct ForwardCache<T> {
    batch: usize,
    blocks: Vec<BlockCache<T>>,
    pool: MaxPoolCache,
    /// Inputs of the three projection layers.
    head_in: Vec<Vec<T>>,
}

impl<T: Real> Encoder<T> {
    pub fn new<R: Rng + ?Sized>(
        arch: &EncoderArchitecture,
        sensor_set: &SensorSet,
        rng: &mut R,
    ) -> Result<Self, EncoderError> {
        arch.validate()?;
        let mut conv = Vec::new();
        let mut bn = Vec::new();
        let mut in_ch = arch.in_channels;
        for (i, b) in arch.conv_blocks.iter().enumerate() {
            conv.push(Conv1d::new(&format!("conv{i}"), in_ch, b.filters, b.kernel_size, b.stride, rng));
            bn.push(BatchNorm1d::new(&format!("bn{i}"), b.filters));
            in_ch = b.filters;
        }
        let mut head = Vec::new();
        for (i, &w) in arch.projection.iter().enumerate() {
            head.push(Linear::new(&format!("proj{i}"), in_ch, w, rng));
            in_ch = w;
        }
        Ok(Encoder {
            arch: arch.clone(),
            sensor_set: sensor_set.clone(),
            conv,
            bn,
            head,
        })
    }

    pub fn embedding_dim(&self) -> usize {
        self.arch.embedding_dim()
    }

    fn input_size(&self) -> usize {
        self.arch.in_channels * self.arch.input_len
    }

    /// Inference on `[batch, channels, len]`; returns `[batch, dim]`.
    pub fn forward_eval(&self, x: &[T], batch: usize) -> Vec<T> {
        assert_eq!(x.len(), batch * self.input_size(), "input size");
        let mut h = x.to_vec();
        let mut len = self.arch.input_len;
        for (conv, bn) in self.conv.iter().zip(&self.bn) {
            let mut y = conv.forward(&h, batch, len);
            len = conv.out_len(len).expect("validated");
            relu_inplace(&mut y);
            h = bn.forward_eval(&y, batch, len);
        }
        let (mut h, _) = global_max_pool(&h, batch, self.conv[2].out_ch, len);
        for (i, lin) in self.head.iter().enumerate() {
            h = lin.forward(&h, batch);
            if i + 1 < self.head.len() {
                relu_inplace(&mut h);
            }
        }
        h
    }

    /// Training-mode forward: batch statistics, and dropout when `rng` is given.
    pub(super) fn forward_train<R: Rng + ?Sized>(
        &mut self,
        x: &[T],
        batch: usize,
        mut rng: Option<&mut R>,
    ) -> (Vec<T>, ForwardCache<T>) {
        assert_eq!(x.len(), batch * self.input_size(), "input size");
        let mut h = x.to_vec();
        let mut len = self.arch.input_len;
        let mut blocks = Vec::with_capacity(3);
        for ((conv, bn), spec) in self.conv.iter().zip(&mut self.bn).zip(&self.arch.conv_blocks) {
            let mut y = conv.forward(&h, batch, len);
            let in_len = len;
            len = conv.out_len(len).expect("validated");
            relu_inplace(&mut y);
            let (mut z, cache) = bn.forward_train(&y, batch, len);
            let mask = match rng.as_deref_mut() {
                Some(r) if spec.dropout > 0.0 => {
                    let m = Dropout::sample(z.len(), spec.dropout, r);
                    m.apply(&mut z);
                    Some(m)
                }
                _ => None,
            };
            blocks.push(BlockCache {
                input: std::mem::replace(&mut h, z),
                len: in_len,
                relu_out: y,
                bn: cache,
                mask,
            });
        }
        let (mut h, pool) = global_max_pool(&h, batch, self.conv[2].out_ch, len);
        let mut head_in = Vec::with_capacity(3);
        for (i, lin) in self.head.iter().enumerate() {
            let out = lin.forward(&h, batch);
            head_in.push(std::mem::replace(&mut h, out));
            if i + 1 < self.head.len() {
                relu_inplace(&mut h);
            }
        }
        (
            h,
            ForwardCache {
                batch,
                blocks,
                pool,
                head_in,
            },
        )
    }

    /// Accumulates parameter gradients for the output gradient `dy`.
    pub(super) fn backward(&mut self, cache: ForwardCache<T>, dy: &[T]) {
        let batch = cache.batch;
        let mut d = dy.to_vec();
        for i in (0..self.head.len()).rev() {
            let x = &cache.head_in[i];
            d = self.head[i].backward(x, batch, &d);
            if i > 0 {
                // x is the ReLU output of the previous layer
                relu_backward(x, &mut d);
            }
        }
        let mut d = global_max_pool_backward(&cache.pool, &d);
        for (i, block) in cache.blocks.iter().enumerate().rev() {
            if let Some(m) = &block.mask {
                m.apply(&mut d);
            }
            let lo = self.conv[i].out_len(block.len).expect("validated");
            d = self.bn[i].backward(&block.bn, &d, batch, lo);
            relu_backward(&block.relu_out, &mut d);
            d = self.conv[i].backward(&block.input, batch, block.len, &d);
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut out = Vec::new();
        for (c, b) in self.conv.iter_mut().zip(&mut self.bn) {
            out.extend(c.params_mut());
            out.extend(b.params_mut());
        }
        for l in &mut self.head {
            out.extend(l.params_mut());
        }
        out
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut out = Vec::new();
        for (c, b) in self.conv.iter().zip(&self.bn) {
            out.extend(c.params());
            out.extend(b.params());
        }
        for l in &self.head {
            out.extend(l.params());
        }
        out
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn check_window(&self, w: &Window) -> Result<(), EncoderError> {
        if w.meta.sensor_set != self.sensor_set {
            return Err(EncoderError::ShapeMismatch(format!(
                "window sensors {} but model expects {}",
                w.meta.sensor_set, self.sensor_set
            )));
        }
        if w.data.len() != self.input_size() || w.channels() != self.arch.in_channels {
            return Err(EncoderError::ShapeMismatch(format!(
                "window has {} channels x {} samples, model expects {} x {}",
                w.channels(),
                w.samples(),
                self.arch.in_channels,
                self.arch.input_len
            )));
        }
        Ok(())
    }

    /// Stacks window samples into a `[batch, channels, len]` buffer.
    pub fn stack(&self, windows: &[&Window]) -> Result<Vec<T>, EncoderError> {
        let mut x = Vec::with_capacity(windows.len() * self.input_size());
        for w in windows {
            self.check_window(w)?;
            x.extend(w.data.iter().map(|v| T::lit(*v as f64)));
        }
        Ok(x)
    }

    pub fn embed(&self, window: &Window) -> Result<Embedding, EncoderError> {
        Ok(self.embed_all(&[window])?.remove(0))
    }

    pub fn embed_all(&self, windows: &[&Window]) -> Result<Vec<Embedding>, EncoderError> {
        let dim = self.embedding_dim();
        let mut out = Vec::with_capacity(windows.len());
        for chunk in windows.chunks(EMBED_CHUNK) {
            let x = self.stack(chunk)?;
            let z = self.forward_eval(&x, chunk.len());
            for (w, row) in chunk.iter().zip(z.chunks(dim)) {
                out.push(Embedding {
                    values: to_f32(row),
                    user_id: w.meta.user_id.clone(),
                    device_id: w.meta.device_id.clone(),
                    start_time: w.meta.start_time,
                    sensor_set: w.meta.sensor_set.clone(),
                });
            }
        }
        Ok(out)
    }
}

impl<T: Real> StateDict for Encoder<T> {
    fn state(&self) -> Vec<NamedTensor> {
        let mut out = Vec::new();
        let p = |p: &Param<T>| NamedTensor {
            name: p.name.clone(),
            shape: p.shape.clone(),
            data: to_f32(&p.value),
        };
        for (c, b) in self.conv.iter().zip(&self.bn) {
            out.extend(c.params().map(p));
            out.extend(b.params().map(p));
            for (suffix, v) in [("running_mean", &b.running_mean), ("running_var", &b.running_var)] {
                out.push(NamedTensor {
                    name: format!("{}.{suffix}", b.name),
                    shape: vec![b.channels],
                    data: to_f32(v),
                });
            }
        }
        for l in &self.head {
            out.extend(l.params().map(p));
        }
        out
    }

    fn load_state(&mut self, tensors: &[NamedTensor]) -> Result<(), String> {
        let expected = 6 * 3 + 2 * 3;
        if tensors.len() != expected {
            return Err(format!("expected {expected} encoder tensors, found {}", tensors.len()));
        }
        let mut it = tensors.iter();
        for (c, b) in self.conv.iter_mut().zip(&mut self.bn) {
            for p in c.params_mut().into_iter().chain(b.params_mut()) {
                load_into(&mut p.value, &p.name, &p.shape, it.next().unwrap())?;
            }
            let shape = [b.channels];
            load_into(&mut b.running_mean, &format!("{}.running_mean", b.name), &shape, it.next().unwrap())?;
            load_into(&mut b.running_var, &format!("{}.running_var", b.name), &shape, it.next().unwrap())?;
        }
        for l in &mut self.head {
            for p in l.params_mut() {
                load_into(&mut p.value, &p.name, &p.shape, it.next().unwrap())?;
            }
        }
        Ok(())
    }
}
