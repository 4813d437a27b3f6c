//! Feed-forward networks: architecture, parameters, evaluation, tape
//! evaluation for training, and the versioned model file.
//!
//! Flat parameter layout, layer by layer: weight matrix `W_l` (`out x in`,
//! row-major) then bias `b_l`; with a linear bypass, the bypass matrix `C`
//! (`output_dim x input_dim`) and bias `d` follow last.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Unary, Var};
use crate::linalg::Mat;
use crate::textfmt::{fmt_f64, parse_f64, read_to_string, write_atomic};
use crate::{Error, Result};

pub const MODEL_MAGIC: &str = "MPFIT-MODEL v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    /// slope 0.01 on the negative side
    LeakyRelu,
    Tanh,
    Swish,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::LeakyRelu => "leaky_relu",
            Activation::Tanh => "tanh",
            Activation::Swish => "swish",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" | "leaky-relu" | "leakyrelu" => Ok(Activation::LeakyRelu),
            "tanh" => Ok(Activation::Tanh),
            "swish" => Ok(Activation::Swish),
            other => Err(Error::parse("activation", format!("unknown activation {other:?}"))),
        }
    }

    fn unary(self) -> Unary {
        match self {
            Activation::Relu => Unary::Relu,
            Activation::LeakyRelu => Unary::LeakyRelu,
            Activation::Tanh => Unary::Tanh,
            Activation::Swish => Unary::Swish,
        }
    }

    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        self.unary().apply(x)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpArchitecture {
    pub input_dim: usize,
    pub hidden_sizes: Vec<usize>,
    pub output_dim: usize,
    pub activation: Activation,
    pub linear_bypass: bool,
}

impl MlpArchitecture {
    pub fn new(
        input_dim: usize,
        hidden_sizes: &[usize],
        output_dim: usize,
        activation: Activation,
        linear_bypass: bool,
    ) -> Result<Self> {
        let arch = MlpArchitecture {
            input_dim,
            hidden_sizes: hidden_sizes.to_vec(),
            output_dim,
            activation,
            linear_bypass,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "all layer sizes must be >= 1 (got in={}, hidden={:?}, out={})",
                self.input_dim, self.hidden_sizes, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(out, in)` shape of every dense layer, head included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_sizes.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_sizes {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((self.output_dim, prev));
        shapes
    }

    pub fn param_count(&self) -> usize {
        let dense: usize = self.layer_shapes().iter().map(|(o, i)| o * (i + 1)).sum();
        let bypass = if self.linear_bypass {
            self.output_dim * (self.input_dim + 1)
        } else {
            0
        };
        dense + bypass
    }

    fn descriptor(&self) -> String {
        let hidden = if self.hidden_sizes.is_empty() {
            "-".to_string()
        } else {
            self.hidden_sizes
                .iter()
                .map(|h| h.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        format!(
            "arch input_dim={} hidden={} output_dim={} activation={} bypass={}",
            self.input_dim,
            hidden,
            self.output_dim,
            self.activation.name(),
            u8::from(self.linear_bypass)
        )
    }

    fn parse_descriptor(line: &str) -> Result<Self> {
        let mut it = line.split_whitespace();
        if it.next() != Some("arch") {
            return Err(Error::parse("model file", "line 2 must start with 'arch'"));
        }
        let (mut input, mut hidden, mut output, mut act, mut bypass) = (None, None, None, None, None);
        for kv in it {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::parse("model file", format!("bad descriptor field {kv:?}")))?;
            let num = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| Error::parse("model file", format!("{k}: {e}")))
            };
            match k {
                "input_dim" => input = Some(num(v)?),
                "output_dim" => output = Some(num(v)?),
                "hidden" => {
                    hidden = Some(if v == "-" {
                        Vec::new()
                    } else {
                        v.split(',').map(num).collect::<Result<Vec<_>>>()?
                    })
                }
                "activation" => act = Some(Activation::parse(v)?),
                "bypass" => bypass = Some(v == "1" || v == "true"),
                _ => return Err(Error::parse("model file", format!("unknown field {k:?}"))),
            }
        }
        let missing = |f: &str| Error::parse("model file", format!("descriptor missing {f}"));
        MlpArchitecture::new(
            input.ok_or_else(|| missing("input_dim"))?,
            &hidden.ok_or_else(|| missing("hidden"))?,
            output.ok_or_else(|| missing("output_dim"))?,
            act.ok_or_else(|| missing("activation"))?,
            bypass.ok_or_else(|| missing("bypass"))?,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out x in`
    pub weight: Mat,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub arch: MlpArchitecture,
    pub layers: Vec<DenseLayer>,
    /// `(C, d)`: `output_dim x input_dim` matrix and `output_dim` bias.
    pub bypass: Option<(Mat, Vec<f64>)>,
}

impl MlpParams {
    pub fn zeros(arch: &MlpArchitecture) -> Self {
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| DenseLayer {
                weight: Mat::zeros(o, i),
                bias: vec![0.0; o],
            })
            .collect();
        let bypass = arch
            .linear_bypass
            .then(|| (Mat::zeros(arch.output_dim, arch.input_dim), vec![0.0; arch.output_dim]));
        MlpParams {
            arch: arch.clone(),
            layers,
            bypass,
        }
    }

    /// Scaled-uniform initialization `U(±sqrt(6/(fan_in+fan_out)))`, zero biases.
    pub fn init(arch: &MlpArchitecture, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = MlpParams::zeros(arch);
        let mut fill = |m: &mut Mat| {
            let limit = (6.0 / (m.rows + m.cols) as f64).sqrt();
            for v in m.data.iter_mut() {
                *v = rng.random_range(-limit..limit);
            }
        };
        for layer in &mut p.layers {
            fill(&mut layer.weight);
        }
        if let Some((c, _)) = p.bypass.as_mut() {
            fill(c);
        }
        p
    }

    pub fn param_count(&self) -> usize {
        self.arch.param_count()
    }

    /// Rewrites the parameters of a network trained on `u_j = scale_j (p_j - shift_j)`
    /// so that it takes `p` directly.
    pub fn fold_input_scaling(&mut self, shift: &[f64], scale: &[f64]) -> Result<()> {
        let n = self.arch.input_dim;
        if shift.len() != n || scale.len() != n {
            return Err(Error::dim("input scaling", n, shift.len().min(scale.len())));
        }
        let fold = |w: &mut Mat, b: &mut [f64]| {
            for r in 0..w.rows {
                let row = &mut w.data[r * n..(r + 1) * n];
                for j in 0..n {
                    row[j] *= scale[j];
                    b[r] -= row[j] * shift[j];
                }
            }
        };
        if let Some(first) = self.layers.first_mut() {
            fold(&mut first.weight, &mut first.bias);
        }
        if let Some((c, d)) = self.bypass.as_mut() {
            fold(c, d);
        }
        Ok(())
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weight.data);
            out.extend_from_slice(&l.bias);
        }
        if let Some((c, d)) = &self.bypass {
            out.extend_from_slice(&c.data);
            out.extend_from_slice(d);
        }
        out
    }

    pub fn from_flat(arch: &MlpArchitecture, theta: &[f64]) -> Result<Self> {
        if theta.len() != arch.param_count() {
            return Err(Error::dim("MlpParams::from_flat", arch.param_count(), theta.len()));
        }
        let mut off = 0;
        let mut take = |n: usize| {
            let s = theta[off..off + n].to_vec();
            off += n;
            s
        };
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(o, i)| DenseLayer {
                weight: Mat::from_vec(o, i, take(o * i)),
                bias: take(o),
            })
            .collect();
        let bypass = arch.linear_bypass.then(|| {
            let c = Mat::from_vec(arch.output_dim, arch.input_dim, take(arch.output_dim * arch.input_dim));
            (c, take(arch.output_dim))
        });
        Ok(MlpParams {
            arch: arch.clone(),
            layers,
            bypass,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.arch.input_dim {
            return Err(Error::dim("mlp input", self.arch.input_dim, input.len()));
        }
        let mut out = vec![0.0; self.arch.output_dim];
        let mut scratch = ForwardScratch::new(&self.arch);
        self.forward_into(input, &mut scratch, &mut out);
        Ok(out)
    }

    /// Allocation-free evaluation. Panics on shape mismatch.
    pub fn forward_into(&self, input: &[f64], scratch: &mut ForwardScratch, out: &mut [f64]) {
        assert_eq!(input.len(), self.arch.input_dim);
        assert_eq!(out.len(), self.arch.output_dim);
        let act = self.arch.activation;
        let nl = self.layers.len();
        let (a, b) = (&mut scratch.a, &mut scratch.b);
        a.clear();
        a.extend_from_slice(input);
        for (li, layer) in self.layers.iter().enumerate() {
            let (o, i) = (layer.weight.rows, layer.weight.cols);
            b.clear();
            for r in 0..o {
                let w = &layer.weight.data[r * i..(r + 1) * i];
                let mut s = layer.bias[r];
                for (wi, xi) in w.iter().zip(a.iter()) {
                    s += wi * xi;
                }
                b.push(if li + 1 < nl { act.apply(s) } else { s });
            }
            std::mem::swap(a, b);
        }
        out.copy_from_slice(a);
        if let Some((c, d)) = &self.bypass {
            for (r, o) in out.iter_mut().enumerate() {
                let row = c.row(r);
                *o += d[r] + row.iter().zip(input).map(|(x, y)| x * y).sum::<f64>();
            }
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "{MODEL_MAGIC}").unwrap();
        writeln!(s, "{}", self.arch.descriptor()).unwrap();
        let mut array = |name: &str, rows: usize, cols: usize, data: &[f64]| {
            write!(s, "{name} {rows}x{cols}").unwrap();
            for v in data {
                write!(s, " {}", fmt_f64(*v)).unwrap();
            }
            s.push('\n');
        };
        for (l, layer) in self.layers.iter().enumerate() {
            array(&format!("W{l}"), layer.weight.rows, layer.weight.cols, &layer.weight.data);
            array(&format!("b{l}"), 1, layer.bias.len(), &layer.bias);
        }
        if let Some((c, d)) = &self.bypass {
            array("C", c.rows, c.cols, &c.data);
            array("d", 1, d.len(), d);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim_end) != Some(MODEL_MAGIC) {
            return Err(Error::parse("model file", format!("first line must be {MODEL_MAGIC:?}")));
        }
        let arch = MlpArchitecture::parse_descriptor(
            lines
                .next()
                .ok_or_else(|| Error::parse("model file", "missing architecture line"))?,
        )?;
        let mut arrays = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            arrays.push(parse_array_line(line)?);
        }
        let mut expected: Vec<(String, usize, usize)> = Vec::new();
        for (l, (o, i)) in arch.layer_shapes().into_iter().enumerate() {
            expected.push((format!("W{l}"), o, i));
            expected.push((format!("b{l}"), 1, o));
        }
        if arch.linear_bypass {
            expected.push(("C".into(), arch.output_dim, arch.input_dim));
            expected.push(("d".into(), 1, arch.output_dim));
        }
        if arrays.len() != expected.len() {
            return Err(Error::parse(
                "model file",
                format!("expected {} arrays, found {}", expected.len(), arrays.len()),
            ));
        }
        let mut flat = Vec::with_capacity(arch.param_count());
        for ((name, m), (en, er, ec)) in arrays.into_iter().zip(&expected) {
            if &name != en || m.rows != *er || m.cols != *ec {
                return Err(Error::parse(
                    "model file",
                    format!("array {name} {}x{} where {en} {er}x{ec} was expected", m.rows, m.cols),
                ));
            }
            flat.extend(m.data);
        }
        MlpParams::from_flat(&arch, &flat)
    }
}

/// Parses `name RxC v v v ...`.
pub(crate) fn parse_array_line(line: &str) -> Result<(String, Mat)> {
    let mut it = line.split_whitespace();
    let name = it
        .next()
        .ok_or_else(|| Error::parse("array line", "empty line"))?
        .to_string();
    let shape = it
        .next()
        .ok_or_else(|| Error::parse("array line", format!("{name}: missing shape")))?;
    let (r, c) = shape
        .split_once('x')
        .ok_or_else(|| Error::parse("array line", format!("{name}: bad shape {shape:?}")))?;
    let rows: usize = r
        .parse()
        .map_err(|_| Error::parse("array line", format!("{name}: bad shape {shape:?}")))?;
    let cols: usize = c
        .parse()
        .map_err(|_| Error::parse("array line", format!("{name}: bad shape {shape:?}")))?;
    let data = it.map(|v| parse_f64(v, &name)).collect::<Result<Vec<_>>>()?;
    if data.len() != rows * cols {
        return Err(Error::parse(
            "array line",
            format!("{name}: {rows}x{cols} needs {} values, found {}", rows * cols, data.len()),
        ));
    }
    Ok((name, Mat::from_vec(rows, cols, data)))
}

/// Reusable buffers for [`MlpParams::forward_into`].
#[derive(Debug, Clone)]
pub struct ForwardScratch {
    a: Vec<f64>,
    b: Vec<f64>,
}

impl ForwardScratch {
    pub fn new(arch: &MlpArchitecture) -> Self {
        let width = arch
            .hidden_sizes
            .iter()
            .copied()
            .chain([arch.input_dim, arch.output_dim])
            .max()
            .unwrap_or(1);
        ForwardScratch {
            a: Vec::with_capacity(width),
            b: Vec::with_capacity(width),
        }
    }
}

/// Batch evaluation on a tape.
///
/// `theta` is a `1 x param_count` node (a parameter leaf when training, a
/// constant when the network is frozen) and `input` is `K x input_dim`.
/// Returns the `K x output_dim` output node.
pub fn forward_tape(arch: &MlpArchitecture, tape: &mut Tape, theta: Var, input: Var) -> Var {
    assert_eq!(tape.shape(theta), (1, arch.param_count()), "theta shape");
    assert_eq!(tape.shape(input).1, arch.input_dim, "input width");
    let mut off = 0;
    let mut h = input;
    let shapes = arch.layer_shapes();
    let nl = shapes.len();
    for (l, (o, i)) in shapes.into_iter().enumerate() {
        let w = tape.slice(theta, off, o, i);
        off += o * i;
        let b = tape.slice(theta, off, 1, o);
        off += o;
        let z = tape.matmul_nt(h, w);
        let z = tape.add_row(z, b);
        h = if l + 1 < nl {
            tape.unary(z, arch.activation.unary())
        } else {
            z
        };
    }
    if arch.linear_bypass {
        let c = tape.slice(theta, off, arch.output_dim, arch.input_dim);
        off += arch.output_dim * arch.input_dim;
        let d = tape.slice(theta, off, 1, arch.output_dim);
        let lin = tape.matmul_nt(input, c);
        let lin = tape.add_row(lin, d);
        h = tape.add(h, lin);
    }
    h
}
