//! Dense linear expert `y_k = Σ_ij W_ijk X_ij` and its two constructive
//! links to probing networks.

use crate::error::{Error, Result};
use crate::linalg::{contract3, Matrix, Rng, Tensor3, Vector};
use crate::metanet::Metanet;
use crate::probex::{Activation, ProbeXParams};

/// Largest `d_W·d_H·d_Y` for which [`prop1_construct`] materializes its
/// per-probe matrices.
pub const PROBE_CONSTRUCTION_LIMIT: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct DenseExpert {
    pub w: Tensor3,
}

impl DenseExpert {
    pub fn zeros(d_w: usize, d_h: usize, d_y: usize) -> Self {
        Self {
            w: Tensor3::zeros(d_w, d_h, d_y),
        }
    }

    pub fn init(d_w: usize, d_h: usize, d_y: usize, rng: &mut Rng) -> Result<Self> {
        if d_w == 0 || d_h == 0 || d_y == 0 {
            return Err(Error::config("dense expert dims must be positive"));
        }
        let bound = 1.0 / ((d_w * d_h) as f64).sqrt();
        Ok(Self {
            w: Tensor3::uniform(d_w, d_h, d_y, bound, rng),
        })
    }

    pub fn param_count(&self) -> usize {
        self.w.as_slice().len()
    }
}

pub fn dense_forward(w: &DenseExpert, x: &Matrix) -> Result<Vector> {
    contract3(&w.w, x)
}

impl Metanet for DenseExpert {
    type Input = Matrix;

    fn output_dim(&self) -> usize {
        self.w.dims()[2]
    }

    fn forward(&self, x: &Matrix) -> Result<Vector> {
        dense_forward(self, x)
    }

    /// `∂L/∂W = X ⊗ ∂L/∂y`.
    fn gradients(&self, x: &Matrix, upstream: &[f64]) -> Result<Vec<Vec<f64>>> {
        let [d_w, d_h, d_y] = self.w.dims();
        if x.shape() != (d_w, d_h) || upstream.len() != d_y {
            return Err(Error::dim(format!(
                "dense expert {d_w}x{d_h}x{d_y} vs input {}x{} and upstream {}",
                x.rows(),
                x.cols(),
                upstream.len()
            )));
        }
        let mut g = vec![0.0; d_w * d_h * d_y];
        for (ij, &xij) in x.as_slice().iter().enumerate() {
            crate::linalg::axpy(xij, upstream, &mut g[ij * d_y..(ij + 1) * d_y]);
        }
        Ok(vec![g])
    }

    fn tensors(&self) -> Vec<(String, &[f64])> {
        vec![("W".to_string(), self.w.as_slice())]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w.as_mut_slice()]
    }
}

/// General linear probing network `y = T Σ_l E[l] X u_l`, with one full
/// `d_Y × d_W` encoder per probe.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbingNet {
    pub u: Matrix,
    pub encoders: Vec<Matrix>,
    pub t: Matrix,
}

impl LinearProbingNet {
    pub fn forward(&self, x: &Matrix) -> Result<Vector> {
        let z = x.matmul(&self.u)?;
        let d_enc = self.t.cols();
        let mut e = vec![0.0; d_enc];
        for (l, enc) in self.encoders.iter().enumerate() {
            let el = enc.matvec(&z.column(l))?;
            crate::linalg::axpy(1.0, &el, &mut e);
        }
        self.t.matvec(&e)
    }
}

/// Probing network reproducing a dense expert exactly: `U = I`, `T = I`,
/// `E[l]_{ki} = W_{ilk}`.
pub fn prop1_construct(w: &DenseExpert) -> Result<LinearProbingNet> {
    let [d_w, d_h, d_y] = w.w.dims();
    if d_w * d_h * d_y > PROBE_CONSTRUCTION_LIMIT {
        return Err(Error::config(format!(
            "probe construction for {d_w}x{d_h}x{d_y} exceeds {PROBE_CONSTRUCTION_LIMIT} entries"
        )));
    }
    let encoders = (0..d_h)
        .map(|l| {
            let mut e = Matrix::zeros(d_y, d_w);
            for k in 0..d_y {
                for i in 0..d_w {
                    e[(k, i)] = w.w[(i, l, k)];
                }
            }
            e
        })
        .collect();
    Ok(LinearProbingNet {
        u: Matrix::identity(d_h),
        encoders,
        t: Matrix::identity(d_y),
    })
}

/// Dense tensor of a linear ProbeX:
/// `W[i,j,k] = Σ_{n,m,l} T[k,n] · M[l][n,m] · V[i,m] · U[j,l]`.
pub fn prop2_tucker_expand(p: &ProbeXParams) -> Result<DenseExpert> {
    if p.activation() != Activation::Identity {
        return Err(Error::Unsupported(
            "Tucker expansion only exists for the linear (identity) ProbeX".into(),
        ));
    }
    if !p.encoder.hidden.is_empty() {
        return Err(Error::Unsupported(
            "Tucker expansion needs a single-layer encoder".into(),
        ));
    }
    let d = p.dims;
    let (u, v, m, t) = (&p.encoder.u, &p.encoder.v, &p.encoder.m, &p.t);
    // A[l][k][m] = Σ_n T[k,n] M[l][n,m]
    let mut a = Tensor3::zeros(d.r_u, d.d_y, d.r_v);
    for l in 0..d.r_u {
        for k in 0..d.d_y {
            for n in 0..d.r_t {
                let tkn = t[(k, n)];
                for mm in 0..d.r_v {
                    a[(l, k, mm)] += tkn * m[(l, n, mm)];
                }
            }
        }
    }
    // B[i][l][k] = Σ_m V[i,m] A[l][k][m]
    let mut b = Tensor3::zeros(d.d_w, d.r_u, d.d_y);
    for i in 0..d.d_w {
        for l in 0..d.r_u {
            for k in 0..d.d_y {
                let mut s = 0.0;
                for mm in 0..d.r_v {
                    s += v[(i, mm)] * a[(l, k, mm)];
                }
                b[(i, l, k)] = s;
            }
        }
    }
    let mut w = Tensor3::zeros(d.d_w, d.d_h, d.d_y);
    for i in 0..d.d_w {
        for j in 0..d.d_h {
            for l in 0..d.r_u {
                let ujl = u[(j, l)];
                for k in 0..d.d_y {
                    w[(i, j, k)] += ujl * b[(i, l, k)];
                }
            }
        }
    }
    Ok(DenseExpert { w })
}
