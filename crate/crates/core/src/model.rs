//! Desk-scale classifiers built on the autodiff graph.
//!
//! Two architectures are available: a tiny CNN
//! (`conv → relu → pool → conv → relu → pool → linear`) and an MLP. In both,
//! the final linear layer is the *head*; everything before it is the
//! encoder. Linear probing trains the head alone.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::autodiff::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelKind {
    TinyCnn,
    Mlp,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::TinyCnn => "tiny_cnn",
            ModelKind::Mlp => "mlp",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tiny_cnn" => Some(ModelKind::TinyCnn),
            "mlp" => Some(ModelKind::Mlp),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Conv filter counts for the CNN, hidden widths for the MLP.
    pub hidden: Vec<usize>,
}

impl ModelSpec {
    /// Default tiny CNN: 8 then 16 filters.
    pub fn tiny_cnn(channels: usize, height: usize, width: usize, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::TinyCnn,
            channels,
            height,
            width,
            classes,
            hidden: vec![8, 16],
        }
    }

    pub fn mlp(inputs: usize, hidden: Vec<usize>, classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            channels: 1,
            height: 1,
            width: inputs,
            classes,
            hidden,
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [self.channels, self.height, self.width]
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Spec(format!("need at least 2 classes, got {}", self.classes)));
        }
        if self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Spec("input dimensions must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Spec("hidden sizes must be positive".into()));
        }
        if self.kind == ModelKind::TinyCnn && self.hidden.len() != 2 {
            return Err(Error::Spec(format!(
                "tiny_cnn takes exactly two filter counts, got {:?}",
                self.hidden
            )));
        }
        Ok(())
    }

    /// (name, shape, fan_in, fan_out) for every parameter, in layer order.
    fn layout(&self) -> Vec<(String, Vec<usize>, usize, usize)> {
        let mut out = Vec::new();
        let k = self.classes;
        match self.kind {
            ModelKind::TinyCnn => {
                let (f1, f2) = (self.hidden[0], self.hidden[1]);
                out.push((
                    "conv1.weight".into(),
                    vec![f1, self.channels, 3, 3],
                    self.channels * 9,
                    f1 * 9,
                ));
                out.push(("conv1.bias".into(), vec![f1], 0, 0));
                out.push(("conv2.weight".into(), vec![f2, f1, 3, 3], f1 * 9, f2 * 9));
                out.push(("conv2.bias".into(), vec![f2], 0, 0));
                let (h, w) = (self.height.div_ceil(2).div_ceil(2), self.width.div_ceil(2).div_ceil(2));
                let feat = f2 * h * w;
                out.push(("head.weight".into(), vec![k, feat], feat, k));
                out.push(("head.bias".into(), vec![k], 0, 0));
            }
            ModelKind::Mlp => {
                let mut prev = self.channels * self.height * self.width;
                for (i, &h) in self.hidden.iter().enumerate() {
                    out.push((format!("fc{}.weight", i + 1), vec![h, prev], prev, h));
                    out.push((format!("fc{}.bias", i + 1), vec![h], 0, 0));
                    prev = h;
                }
                out.push(("head.weight".into(), vec![k, prev], prev, k));
                out.push(("head.bias".into(), vec![k], 0, 0));
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

impl Param {
    /// True for the final linear layer.
    pub fn is_head(&self) -> bool {
        self.name.starts_with("head.")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelState {
    pub spec: ModelSpec,
    pub params: Vec<Param>,
}

/// Which parameters receive gradients in a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainable {
    All,
    HeadOnly,
    Nothing,
}

impl Trainable {
    fn wants(self, p: &Param) -> bool {
        match self {
            Trainable::All => true,
            Trainable::HeadOnly => p.is_head(),
            Trainable::Nothing => false,
        }
    }
}

/// Loss value plus gradients from one example.
#[derive(Debug)]
pub struct ExampleGrads {
    pub loss: f64,
    /// One entry per parameter, `None` when the parameter was not trainable.
    pub params: Vec<Option<Tensor>>,
    pub input: Option<Tensor>,
}

/// Xavier-uniform weights, zero biases, drawn from the `init` stream.
pub fn init_model(spec: &ModelSpec, seed: u64) -> Result<ModelState> {
    spec.validate()?;
    let mut stream = rng::stream(seed, "init", 0);
    let params = spec
        .layout()
        .into_iter()
        .map(|(name, shape, fan_in, fan_out)| {
            let value = if fan_in == 0 {
                Tensor::zeros(&shape)
            } else {
                let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Tensor::from_fn(&shape, |_| stream.gen_range(-a..=a))
            };
            Param { name, value }
        })
        .collect();
    Ok(ModelState {
        spec: spec.clone(),
        params,
    })
}

impl ModelState {
    pub fn param(&self, name: &str) -> Option<&Tensor> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.iter_mut().find(|p| p.name == name).map(|p| &mut p.value)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape() != self.spec.input_shape() {
            return Err(Error::Dimension(format!(
                "model expects input {:?}, got {:?}",
                self.spec.input_shape(),
                x.shape()
            )));
        }
        Ok(())
    }

    /// Records the forward pass; returns parameter node ids and the logits node.
    fn forward(&self, g: &mut Graph, input: NodeId, trainable: Trainable) -> Result<(Vec<NodeId>, NodeId)> {
        let ids: Vec<NodeId> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable.wants(p)))
            .collect();
        let n = ids.len();
        let mut h = input;
        match self.spec.kind {
            ModelKind::TinyCnn => {
                h = g.conv2d(h, ids[0], Some(ids[1]))?;
                h = g.relu(h);
                h = g.avgpool2(h)?;
                h = g.conv2d(h, ids[2], Some(ids[3]))?;
                h = g.relu(h);
                h = g.avgpool2(h)?;
                h = g.flatten(h);
            }
            ModelKind::Mlp => {
                h = g.flatten(h);
                for layer in 0..(n - 2) / 2 {
                    h = linear(g, ids[2 * layer], ids[2 * layer + 1], h)?;
                    h = g.relu(h);
                }
            }
        }
        let logits = linear(g, ids[n - 2], ids[n - 1], h)?;
        Ok((ids, logits))
    }

    /// Logits for a single C×H×W example.
    pub fn logits(&self, x: &Tensor) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let input = g.leaf(x.clone(), false);
        let (_, logits) = self.forward(&mut g, input, Trainable::Nothing)?;
        Ok(g.value(logits).data().to_vec())
    }

    /// Logits for a B×C×H×W batch, as a B×K tensor.
    pub fn predict(&self, batch: &Tensor) -> Result<Tensor> {
        let shape = batch.shape();
        if shape.len() != 4 || shape[1..] != self.spec.input_shape() {
            return Err(Error::Dimension(format!(
                "predict expects B×{:?}, got {:?}",
                self.spec.input_shape(),
                shape
            )));
        }
        let (b, per) = (shape[0], shape[1..].iter().product::<usize>());
        let mut out = Vec::with_capacity(b * self.spec.classes);
        for ex in batch.data().chunks_exact(per) {
            let x = Tensor::new(self.spec.input_shape().to_vec(), ex.to_vec())?;
            out.extend(self.logits(&x)?);
        }
        Tensor::new(vec![b, self.spec.classes], out)
    }

    pub fn predict_class(&self, x: &Tensor) -> Result<usize> {
        let z = self.logits(x)?;
        // first maximum wins ties
        Ok(z.iter()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |(bi, bv), (i, &v)| if v > bv { (i, v) } else { (bi, bv) },
            )
            .0)
    }

    /// Task loss for one example, scaled by `loss_scale`, with the requested gradients.
    pub fn loss_and_grads(
        &self,
        x: &Tensor,
        label: usize,
        trainable: Trainable,
        want_input: bool,
        loss_scale: f64,
    ) -> Result<ExampleGrads> {
        self.check_input(x)?;
        let mut g = Graph::new();
        let input = g.leaf(x.clone(), want_input);
        let (ids, logits) = self.forward(&mut g, input, trainable)?;
        let mut loss = g.softmax_cross_entropy(logits, label)?;
        if loss_scale != 1.0 {
            loss = g.scale(loss, loss_scale);
        }
        let loss_value = g.value(loss).data()[0];
        let mut grads = g.backward(loss)?;
        let params = ids
            .iter()
            .zip(&self.params)
            .map(|(&id, p)| {
                if trainable.wants(p) {
                    Some(grads.take(id).unwrap_or_else(|| Tensor::zeros(p.value.shape())))
                } else {
                    None
                }
            })
            .collect();
        let input = if want_input {
            Some(grads.take(input).unwrap_or_else(|| Tensor::zeros(x.shape())))
        } else {
            None
        };
        Ok(ExampleGrads {
            loss: loss_value,
            params,
            input,
        })
    }

    pub fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        self.check_input(x)?;
        let z = self.logits(x)?;
        if label >= z.len() {
            return Err(Error::Index(format!(
                "label {label} out of range for {} classes",
                z.len()
            )));
        }
        Ok(crate::autodiff::softmax_ce(&z, label).0)
    }

    /// ∂L/∂x for one example.
    pub fn input_gradient(&self, x: &Tensor, label: usize) -> Result<Tensor> {
        let g = self.loss_and_grads(x, label, Trainable::Nothing, true, 1.0)?;
        Ok(g.input.expect("input gradient requested"))
    }
}

/// `W·h + b` with `h` a column vector; returns a column vector.
fn linear(g: &mut Graph, weight: NodeId, bias: NodeId, h: NodeId) -> Result<NodeId> {
    let z = g.matmul(weight, h)?;
    let z = g.flatten(z);
    let b = g.flatten(bias);
    g.add(z, b)
}

/// A model whose task loss can be differentiated with respect to its input.
pub trait Classifier {
    fn input_shape(&self) -> [usize; 3];
    fn loss(&self, x: &Tensor, label: usize) -> Result<f64>;
    fn loss_input_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)>;
}

impl Classifier for ModelState {
    fn input_shape(&self) -> [usize; 3] {
        self.spec.input_shape()
    }

    fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        ModelState::loss(self, x, label)
    }

    fn loss_input_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        let g = self.loss_and_grads(x, label, Trainable::Nothing, true, 1.0)?;
        Ok((g.loss, g.input.expect("input gradient requested")))
    }
}

/// A classifier whose task loss is multiplied by a constant.
pub struct ScaledLoss<'a, C: Classifier> {
    pub inner: &'a C,
    pub scale: f64,
}

impl<C: Classifier> Classifier for ScaledLoss<'_, C> {
    fn input_shape(&self) -> [usize; 3] {
        self.inner.input_shape()
    }

    fn loss(&self, x: &Tensor, label: usize) -> Result<f64> {
        Ok(self.scale * self.inner.loss(x, label)?)
    }

    fn loss_input_gradient(&self, x: &Tensor, label: usize) -> Result<(f64, Tensor)> {
        let (l, g) = self.inner.loss_input_gradient(x, label)?;
        Ok((self.scale * l, g.scaled(self.scale)))
    }
}

// ---- checkpoints ----------------------------------------------------------

const MAGIC: &[u8; 8] = b"DGAPCKPT";
const VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode_checkpoint(state: &ModelState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let s = &state.spec;
    out.push(match s.kind {
        ModelKind::TinyCnn => 0,
        ModelKind::Mlp => 1,
    });
    for v in [s.channels, s.height, s.width, s.classes, s.hidden.len()] {
        put_u32(&mut out, v);
    }
    for &h in &s.hidden {
        put_u32(&mut out, h);
    }
    put_u32(&mut out, state.params.len());
    for p in &state.params {
        put_u32(&mut out, p.name.len());
        out.extend_from_slice(p.name.as_bytes());
        put_u32(&mut out, p.value.shape().len());
        for &d in p.value.shape() {
            put_u32(&mut out, d);
        }
        for v in p.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Format {
                offset: self.pos,
                message: format!("checkpoint truncated, wanted {n} more bytes"),
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelState> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: "not a checkpoint (bad magic)".into(),
        });
    }
    let at = c.pos;
    let version = c.u32()?;
    if version != VERSION as usize {
        return Err(Error::Format {
            offset: at,
            message: format!("unsupported checkpoint version {version}"),
        });
    }
    let at = c.pos;
    let kind = match c.take(1)?[0] {
        0 => ModelKind::TinyCnn,
        1 => ModelKind::Mlp,
        k => {
            return Err(Error::Format {
                offset: at,
                message: format!("unknown model kind {k}"),
            })
        }
    };
    let (channels, height, width, classes, nh) = (c.u32()?, c.u32()?, c.u32()?, c.u32()?, c.u32()?);
    let hidden = (0..nh).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
    let spec = ModelSpec {
        kind,
        channels,
        height,
        width,
        classes,
        hidden,
    };
    spec.validate()?;
    let np = c.u32()?;
    let mut params = Vec::with_capacity(np);
    for _ in 0..np {
        let at = c.pos;
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?)
            .map_err(|_| Error::Format {
                offset: at,
                message: "parameter name is not UTF-8".into(),
            })?
            .to_string();
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let raw = c.take(n * 8)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        let value = Tensor::new(shape, data).map_err(|e| Error::Format {
            offset: at,
            message: e.to_string(),
        })?;
        params.push(Param { name, value });
    }
    let expected: Vec<(String, Vec<usize>)> = spec.layout().into_iter().map(|(n, s, _, _)| (n, s)).collect();
    let got: Vec<(String, Vec<usize>)> = params
        .iter()
        .map(|p| (p.name.clone(), p.value.shape().to_vec()))
        .collect();
    if expected != got {
        return Err(Error::Format {
            offset: c.pos,
            message: "parameter layout does not match the model spec".into(),
        });
    }
    if c.pos != bytes.len() {
        return Err(Error::Format {
            offset: c.pos,
            message: "trailing bytes after checkpoint".into(),
        });
    }
    Ok(ModelState { spec, params })
}

pub fn save_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&encode_checkpoint(state)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&buf)
}
