//! Probing experts.
//!
//! A set of learned probes `u_l` is passed through the weight matrix `X`;
//! the responses `z_l = X·u_l` go through a shared projection `V`, an
//! activation, and a per-probe encoder `M_l`. The probe encodings are
//! summed into the model encoding `e`, which a linear head `T` maps to the
//! output:
//!
//! ```text
//! y = T · Σ_l M_l σ(Vᵀ X u_l)
//! ```
//!
//! Shapes: `X: d_W×d_H`, `U: d_H×r_U`, `V: d_W×r_V`, `M_l: r_T×r_V`,
//! `T: d_Y×r_T`. With `σ = identity` this is exactly a dense linear expert
//! whose weight tensor has a Tucker structure (see [`crate::dense`]).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{matmul_nt, matmul_tn, Matrix, Rng, Tensor3, Vector};
use crate::metanet::Metanet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative, with `relu'(0) = 0`.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

fn default_depth() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProbeXDims {
    pub d_w: usize,
    pub d_h: usize,
    pub d_y: usize,
    pub r_u: usize,
    pub r_v: usize,
    pub r_t: usize,
    /// Encoder hidden layers; depth `k` adds `k - 1` square `r_V × r_V`
    /// layers between the projection and `M_l`.
    #[serde(default = "default_depth")]
    pub depth: usize,
}

impl ProbeXDims {
    pub fn new(d_w: usize, d_h: usize, d_y: usize, r_u: usize, r_v: usize, r_t: usize) -> Self {
        Self {
            d_w,
            d_h,
            d_y,
            r_u,
            r_v,
            r_t,
            depth: 1,
        }
    }

    /// Desk-scale default ranks for an input of `d_w × d_h`.
    pub fn with_rank(d_w: usize, d_h: usize, d_y: usize, r: usize) -> Self {
        Self::new(d_w, d_h, d_y, r, r, r)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.d_w, self.d_h, self.d_y, self.r_u, self.r_v, self.r_t, self.depth];
        if all.contains(&0) {
            return Err(Error::config(format!("ProbeX dims must all be ≥ 1: {self:?}")));
        }
        Ok(())
    }

    /// `d_H·r_U + d_W·r_V + r_U·r_V·r_T + r_T·d_Y` (plus `r_V²` per extra
    /// encoder layer).
    pub fn param_count(&self) -> usize {
        self.d_h * self.r_u
            + self.d_w * self.r_v
            + self.r_u * self.r_v * self.r_t
            + self.r_t * self.d_y
            + (self.depth - 1) * self.r_v * self.r_v
    }
}

/// Parameter count of the dense linear expert on the same input/output.
pub fn dense_param_count(d_w: usize, d_h: usize, d_y: usize) -> usize {
    d_w * d_h * d_y
}

/// Everything in front of the head: probes, projection, per-probe encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeXEncoder {
    pub u: Matrix,
    pub v: Matrix,
    pub hidden: Vec<Matrix>,
    pub m: Tensor3,
    pub activation: Activation,
}

/// Model encoding; `per_probe` holds each `e_l` when requested.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding {
    pub e: Vector,
    pub per_probe: Option<Vec<Vector>>,
}

struct EncoderCache {
    z: Matrix,
    /// Pre-activations per encoder layer, one row per probe.
    pre: Vec<Matrix>,
    /// Post-activations per encoder layer, one row per probe.
    post: Vec<Matrix>,
    e: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads {
    pub u: Matrix,
    pub v: Matrix,
    pub hidden: Vec<Matrix>,
    pub m: Tensor3,
}

impl ProbeXEncoder {
    fn init(dims: &ProbeXDims, activation: Activation, rng: &mut Rng) -> Self {
        let fan = |n: usize| 1.0 / (n as f64).sqrt();
        let u = Matrix::uniform(dims.d_h, dims.r_u, fan(dims.d_h), rng);
        let v = Matrix::uniform(dims.d_w, dims.r_v, fan(dims.d_w), rng);
        let hidden = (1..dims.depth)
            .map(|_| Matrix::uniform(dims.r_v, dims.r_v, fan(dims.r_v), rng))
            .collect();
        let m = Tensor3::uniform(dims.r_u, dims.r_t, dims.r_v, fan(dims.r_v), rng);
        Self {
            u,
            v,
            hidden,
            m,
            activation,
        }
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.v.rows(), self.u.rows())
    }

    pub fn n_probes(&self) -> usize {
        self.u.cols()
    }

    pub fn encoding_dim(&self) -> usize {
        self.m.dims()[1]
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.shape() != self.input_shape() {
            let (w, h) = self.input_shape();
            return Err(Error::dim(format!(
                "ProbeX expects a {w}x{h} weight matrix, got {}x{}",
                x.rows(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn forward_cached(&self, x: &Matrix) -> Result<EncoderCache> {
        self.check_input(x)?;
        let z = x.matmul(&self.u)?;
        // Row l of `p0` is p_l = Vᵀ z_l.
        let p0 = matmul_tn(&z, &self.v)?;
        let mut pre = vec![p0];
        let mut post = Vec::with_capacity(1 + self.hidden.len());
        for layer in 0..=self.hidden.len() {
            let mut h = pre[layer].clone();
            let act = self.activation;
            h.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            if let Some(d) = self.hidden.get(layer) {
                pre.push(matmul_nt(&h, d)?);
            }
            post.push(h);
        }
        let h = post.last().unwrap();
        let [r_u, r_t, r_v] = self.m.dims();
        // Terms are summed in sorted order so reordering probes cannot
        // change a single bit of `e`.
        let mut terms = vec![0.0; r_u];
        let e = (0..r_t)
            .map(|n| {
                for (l, t) in terms.iter_mut().enumerate() {
                    *t = crate::linalg::dot(&self.m.slab(l)[n * r_v..(n + 1) * r_v], h.row(l));
                }
                terms.sort_unstable_by(f64::total_cmp);
                terms.iter().sum()
            })
            .collect();
        Ok(EncoderCache { z, pre, post, e })
    }

    pub fn encode(&self, x: &Matrix, keep_per_probe: bool) -> Result<Encoding> {
        let cache = self.forward_cached(x)?;
        let per_probe = keep_per_probe.then(|| {
            let h = cache.post.last().unwrap();
            (0..self.n_probes())
                .map(|l| self.m.slab_matrix(l).matvec(h.row(l)).expect("encoder shapes"))
                .collect()
        });
        Ok(Encoding {
            e: cache.e,
            per_probe,
        })
    }

    fn backward(&self, x: &Matrix, cache: &EncoderCache, de: &[f64]) -> Result<EncoderGrads> {
        let [r_u, r_t, r_v] = self.m.dims();
        let h_last = cache.post.last().unwrap();

        let mut gm = Tensor3::zeros(r_u, r_t, r_v);
        let mut dh = Matrix::zeros(r_u, r_v);
        for l in 0..r_u {
            let slab = self.m.slab(l);
            let g_slab = gm.slab_mut(l);
            let hl = h_last.row(l);
            let dhl = &mut dh.as_mut_slice()[l * r_v..(l + 1) * r_v];
            for (n, &den) in de.iter().enumerate() {
                if den == 0.0 {
                    continue;
                }
                crate::linalg::axpy(den, hl, &mut g_slab[n * r_v..(n + 1) * r_v]);
                crate::linalg::axpy(den, &slab[n * r_v..(n + 1) * r_v], dhl);
            }
        }

        let mut g_hidden = vec![Matrix::zeros(r_v, r_v); self.hidden.len()];
        for layer in (0..=self.hidden.len()).rev() {
            // dh → dp through the activation of this layer.
            let mut dp = dh;
            for (g, &p) in dp.as_mut_slice().iter_mut().zip(cache.pre[layer].as_slice()) {
                *g *= self.activation.derivative(p);
            }
            if layer == 0 {
                dh = dp;
                break;
            }
            let d = &self.hidden[layer - 1];
            g_hidden[layer - 1] = matmul_tn(&dp, &cache.post[layer - 1])?;
            dh = dp.matmul(d)?;
        }
        let dp0 = dh;
        let gv = cache.z.matmul(&dp0)?;
        let dz = matmul_nt(&self.v, &dp0)?;
        let gu = matmul_tn(x, &dz)?;
        Ok(EncoderGrads {
            u: gu,
            v: gv,
            hidden: g_hidden,
            m: gm,
        })
    }

    fn tensors(&self, prefix: &str) -> Vec<(String, &[f64])> {
        let mut out = vec![
            (format!("{prefix}U"), self.u.as_slice()),
            (format!("{prefix}V"), self.v.as_slice()),
        ];
        for (i, d) in self.hidden.iter().enumerate() {
            out.push((format!("{prefix}D{}", i + 1), d.as_slice()));
        }
        out.push((format!("{prefix}M"), self.m.as_slice()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![self.u.as_mut_slice(), self.v.as_mut_slice()];
        for d in &mut self.hidden {
            out.push(d.as_mut_slice());
        }
        out.push(self.m.as_mut_slice());
        out
    }
}

impl EncoderGrads {
    fn into_flat(self) -> Vec<Vec<f64>> {
        let mut out = vec![self.u.into_vec(), self.v.into_vec()];
        out.extend(self.hidden.into_iter().map(Matrix::into_vec));
        out.push(self.m.as_slice().to_vec());
        out
    }
}

/// Single-layer probing expert.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeXParams {
    pub dims: ProbeXDims,
    pub encoder: ProbeXEncoder,
    pub t: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeXGrads {
    pub u: Matrix,
    pub v: Matrix,
    pub hidden: Vec<Matrix>,
    pub m: Tensor3,
    pub t: Matrix,
}

impl ProbeXParams {
    /// Uniform fan-in initialization of every tensor.
    pub fn init(dims: ProbeXDims, activation: Activation, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let encoder = ProbeXEncoder::init(&dims, activation, rng);
        let t = Matrix::uniform(dims.d_y, dims.r_t, 1.0 / (dims.r_t as f64).sqrt(), rng);
        Ok(Self { dims, encoder, t })
    }

    /// Assembles parameters from explicit tensors, checking every shape.
    pub fn from_parts(
        u: Matrix,
        v: Matrix,
        m: Tensor3,
        t: Matrix,
        activation: Activation,
    ) -> Result<Self> {
        let [r_u, r_t, r_v] = m.dims();
        let dims = ProbeXDims::new(v.rows(), u.rows(), t.rows(), r_u, r_v, r_t);
        dims.validate()?;
        if u.cols() != r_u || v.cols() != r_v || t.cols() != r_t {
            return Err(Error::dim(format!(
                "inconsistent ProbeX parts: U {:?}, V {:?}, M {:?}, T {:?}",
                u.shape(),
                v.shape(),
                m.dims(),
                t.shape()
            )));
        }
        Ok(Self {
            dims,
            encoder: ProbeXEncoder {
                u,
                v,
                hidden: Vec::new(),
                m,
                activation,
            },
            t,
        })
    }

    pub fn activation(&self) -> Activation {
        self.encoder.activation
    }

    pub fn param_count(&self) -> usize {
        self.dims.param_count()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Encoding, Vector)> {
        let enc = self.encoder.encode(x, false)?;
        let y = self.t.matvec(&enc.e)?;
        Ok((enc, y))
    }

    pub fn forward_with_probes(&self, x: &Matrix) -> Result<(Encoding, Vector)> {
        let enc = self.encoder.encode(x, true)?;
        let y = self.t.matvec(&enc.e)?;
        Ok((enc, y))
    }

    pub fn backward(&self, x: &Matrix, upstream: &[f64]) -> Result<ProbeXGrads> {
        if upstream.len() != self.dims.d_y {
            return Err(Error::dim(format!(
                "upstream gradient has length {}, output is {}",
                upstream.len(),
                self.dims.d_y
            )));
        }
        let cache = self.encoder.forward_cached(x)?;
        let mut t = Matrix::zeros(self.t.rows(), self.t.cols());
        t.add_outer(1.0, upstream, &cache.e);
        let de = self.t.matvec_t(upstream)?;
        let g = self.encoder.backward(x, &cache, &de)?;
        Ok(ProbeXGrads {
            u: g.u,
            v: g.v,
            hidden: g.hidden,
            m: g.m,
            t,
        })
    }
}

impl Metanet for ProbeXParams {
    type Input = Matrix;

    fn output_dim(&self) -> usize {
        self.dims.d_y
    }

    fn forward(&self, x: &Matrix) -> Result<Vector> {
        Ok(ProbeXParams::forward(self, x)?.1)
    }

    fn gradients(&self, x: &Matrix, upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
        let g = self.backward(x, upstream)?;
        let mut flat = EncoderGrads {
            u: g.u,
            v: g.v,
            hidden: g.hidden,
            m: g.m,
        }
        .into_flat();
        flat.push(g.t.into_vec());
        Ok(flat)
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = self.encoder.tensors("");
        out.push(("T".to_string(), self.t.as_slice()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = self.encoder.tensors_mut();
        out.push(self.t.as_mut_slice());
        out
    }
}

/// One encoder per selected layer, encodings concatenated, one shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeXMulti {
    pub layers: Vec<String>,
    pub encoders: Vec<ProbeXEncoder>,
    pub t: Matrix,
}

impl ProbeXMulti {
    /// `dims[i]` describes the encoder of `layers[i]`; every `d_y` must agree.
    pub fn init(
        layers: Vec<String>,
        dims: &[ProbeXDims],
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<Self> {
        if layers.is_empty() || layers.len() != dims.len() {
            return Err(Error::config("need one ProbeX dims entry per selected layer"));
        }
        let d_y = dims[0].d_y;
        for d in dims {
            d.validate()?;
            if d.d_y != d_y {
                return Err(Error::config("all layers must share the output size"));
            }
        }
        let encoders: Vec<ProbeXEncoder> = dims
            .iter()
            .map(|d| ProbeXEncoder::init(d, activation, rng))
            .collect();
        let total_rt: usize = dims.iter().map(|d| d.r_t).sum();
        let t = Matrix::uniform(d_y, total_rt, 1.0 / (total_rt as f64).sqrt(), rng);
        Ok(Self {
            layers,
            encoders,
            t,
        })
    }

    /// Wraps a single-layer expert; its forward pass is unchanged.
    pub fn from_single(layer: &str, p: ProbeXParams) -> Self {
        Self {
            layers: vec![layer.to_string()],
            encoders: vec![p.encoder],
            t: p.t,
        }
    }

    /// Forward on named layers, which must match the configured layer list.
    pub fn forward_multilayer(&self, named: &[(String, Matrix)]) -> Result<(Encoding, Vector)> {
        let names: Vec<&str> = named.iter().map(|(n, _)| n.as_str()).collect();
        if names != self.layers.iter().map(String::as_str).collect::<Vec<_>>() {
            return Err(Error::config(format!(
                "record layers {names:?} do not match expert layers {:?}",
                self.layers
            )));
        }
        let xs: Vec<Matrix> = named.iter().map(|(_, m)| m.clone()).collect();
        self.forward_layers(&xs)
    }

    pub fn forward_layers(&self, xs: &[Matrix]) -> Result<(Encoding, Vector)> {
        if xs.len() != self.encoders.len() {
            return Err(Error::config(format!(
                "{} layers given, expert has {}",
                xs.len(),
                self.encoders.len()
            )));
        }
        let mut e = Vec::with_capacity(self.t.cols());
        for (enc, x) in self.encoders.iter().zip(xs) {
            e.extend(enc.encode(x, false)?.e);
        }
        let y = self.t.matvec(&e)?;
        Ok((Encoding { e, per_probe: None }, y))
    }
}

impl Metanet for ProbeXMulti {
    type Input = Vec<Matrix>;

    fn output_dim(&self) -> usize {
        self.t.rows()
    }

    fn forward(&self, xs: &Vec<Matrix>) -> Result<Vector> {
        Ok(self.forward_layers(xs)?.1)
    }

    fn gradients(&self, xs: &Vec<Matrix>, upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
        if xs.len() != self.encoders.len() {
            return Err(Error::config("layer count mismatch"));
        }
        let caches = self
            .encoders
            .iter()
            .zip(xs)
            .map(|(enc, x)| enc.forward_cached(x))
            .collect::<Result<Vec<_>>>()?;
        let e: Vec<f64> = caches.iter().flat_map(|c| c.e.iter().copied()).collect();
        let mut gt = Matrix::zeros(self.t.rows(), self.t.cols());
        gt.add_outer(1.0, upstream, &e);
        let de = self.t.matvec_t(upstream)?;
        let mut flat = Vec::new();
        let mut offset = 0;
        for ((enc, x), cache) in self.encoders.iter().zip(xs).zip(&caches) {
            let r_t = enc.encoding_dim();
            let g = enc.backward(x, cache, &de[offset..offset + r_t])?;
            flat.extend(g.into_flat());
            offset += r_t;
        }
        flat.push(gt.into_vec());
        Ok(flat)
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::new();
        for (name, enc) in self.layers.iter().zip(&self.encoders) {
            out.extend(enc.tensors(&format!("{name}.")));
        }
        out.push(("T".to_string(), self.t.as_slice()));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for enc in &mut self.encoders {
            out.extend(enc.tensors_mut());
        }
        out.push(self.t.as_mut_slice());
        out
    }
}
