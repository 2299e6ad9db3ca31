//! Layers built on the graph ops. Weights use the `out x in` layout, so a
//! linear layer computes `x W^T + b`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::gemm::gemm;
use super::graph::{Graph, Var};
use super::param::ParamSet;
use super::tensor::Tensor;
use crate::error::{Error, Result};

fn uniform_tensor<R: Rng + ?Sized>(shape: &[usize], bound: f64, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| bound * (2.0 * rng.random::<f64>() - 1.0)).collect();
    Tensor::new(shape, data).expect("length matches shape")
}

/// Weight (`fan_out x fan_in`) and bias (`fan_out`), both i.i.d. uniform on
/// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
pub fn init_linear<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Result<(Tensor, Tensor)> {
    if fan_in == 0 {
        return Err(Error::invalid("linear layer needs fan_in >= 1"));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let weight = uniform_tensor(&[fan_out, fan_in], bound, rng);
    let bias = uniform_tensor(&[fan_out], bound, rng);
    Ok((weight, bias))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: usize,
    pub bias: usize,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (w, b) = init_linear(fan_in, fan_out, rng)?;
        Ok(Self {
            weight: params.add(format!("{name}.weight"), w),
            bias: params.add(format!("{name}.bias"), b),
            fan_in,
            fan_out,
        })
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, x: Var) -> Result<Var> {
        let w = g.param(params, self.weight);
        let b = g.param(params, self.bias);
        let xw = g.matmul_t(x, w)?;
        g.add_row(xw, b)
    }

    /// Graph-free `x W^T + b` (optionally rectified) on `rows` rows of `x`,
    /// written into `out`. Same arithmetic as [`Linear::forward`].
    pub fn apply(&self, params: &ParamSet, x: &[f64], rows: usize, relu: bool, out: &mut Vec<f64>) {
        debug_assert_eq!(x.len(), rows * self.fan_in);
        out.clear();
        out.resize(rows * self.fan_out, 0.0);
        let w = params.value(self.weight).data();
        let b = params.value(self.bias).data();
        gemm(rows, self.fan_in, self.fan_out, x, false, w, true, 0.0, out);
        for row in out.chunks_exact_mut(self.fan_out) {
            for (v, &bias) in row.iter_mut().zip(b) {
                *v += bias;
                if relu {
                    *v = v.max(0.0);
                }
            }
        }
    }
}

/// Lookup table with `count` rows of width `dim`, initialized N(0, 1).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Embedding {
    pub table: usize,
    pub count: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        count: usize,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let data = (0..count * dim).map(|_| rng.sample(StandardNormal)).collect();
        let table = Tensor::matrix(count, dim, data).expect("length matches shape");
        Self { table: params.add(format!("{name}.weight"), table), count, dim }
    }

    pub fn forward(&self, g: &mut Graph, params: &ParamSet, indices: &[usize]) -> Result<Var> {
        let t = g.param(params, self.table);
        g.embedding(t, indices)
    }
}

/// Gated recurrent unit with gate order (reset, update, new) and the reset
/// gate applied after the hidden-to-hidden product:
///
/// ```text
/// r  = σ(W_r x + b_ir + U_r h + b_hr)
/// z  = σ(W_z x + b_iz + U_z h + b_hz)
/// n  = tanh(W_n x + b_in + r ∘ (U_n h + b_hn))
/// h' = (1 - z) ∘ n + z ∘ h
/// ```
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Gru {
    pub weight_ih: usize,
    pub weight_hh: usize,
    pub bias_ih: usize,
    pub bias_hh: usize,
    pub input: usize,
    pub hidden: usize,
}

/// A [`Gru`] whose parameters are already leaves of one graph, so that an
/// unrolled sequence shares them.
#[derive(Clone, Copy, Debug)]
pub struct BoundGru {
    w_ih: Var,
    w_hh: Var,
    b_ih: Var,
    b_hh: Var,
    hidden: usize,
}

impl Gru {
    /// All weights uniform on `[-1/sqrt(hidden), 1/sqrt(hidden)]`.
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        Self {
            weight_ih: params
                .add(format!("{name}.weight_ih"), uniform_tensor(&[3 * hidden, input], bound, rng)),
            weight_hh: params
                .add(format!("{name}.weight_hh"), uniform_tensor(&[3 * hidden, hidden], bound, rng)),
            bias_ih: params.add(format!("{name}.bias_ih"), uniform_tensor(&[3 * hidden], bound, rng)),
            bias_hh: params.add(format!("{name}.bias_hh"), uniform_tensor(&[3 * hidden], bound, rng)),
            input,
            hidden,
        }
    }

    pub fn bind(&self, g: &mut Graph, params: &ParamSet) -> BoundGru {
        BoundGru {
            w_ih: g.param(params, self.weight_ih),
            w_hh: g.param(params, self.weight_hh),
            b_ih: g.param(params, self.bias_ih),
            b_hh: g.param(params, self.bias_hh),
            hidden: self.hidden,
        }
    }
}

impl BoundGru {
    /// One step: `x` is `B x input`, `h` is `B x hidden`.
    pub fn cell(&self, g: &mut Graph, x: Var, h: Var) -> Result<Var> {
        let hs = self.hidden;
        let gi = g.matmul_t(x, self.w_ih)?;
        let gi = g.add_row(gi, self.b_ih)?;
        let gh = g.matmul_t(h, self.w_hh)?;
        let gh = g.add_row(gh, self.b_hh)?;

        let gate = |g: &mut Graph, k: usize| -> Result<(Var, Var)> {
            Ok((g.narrow(gi, 1, k * hs, hs)?, g.narrow(gh, 1, k * hs, hs)?))
        };
        let (ir, hr) = gate(g, 0)?;
        let (iz, hz) = gate(g, 1)?;
        let (inn, hn) = gate(g, 2)?;

        let r = g.add(ir, hr)?;
        let r = g.sigmoid(r);
        let z = g.add(iz, hz)?;
        let z = g.sigmoid(z);
        let rh = g.mul(r, hn)?;
        let n = g.add(inn, rh)?;
        let n = g.tanh(n);
        // h' = n + z ∘ (h - n)
        let diff = g.sub(h, n)?;
        let zd = g.mul(z, diff)?;
        g.add(n, zd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn init_linear_bounds() {
        let mut rng = stream_rng(0, 0);
        let (w, b) = init_linear(64, 160, &mut rng).unwrap();
        assert_eq!(w.shape(), &[160, 64]);
        assert!(w.len() + b.len() >= 10_000);
        assert!(w.data().iter().chain(b.data()).all(|v| v.abs() <= 0.125));
        // the bound is actually approached
        assert!(w.data().iter().any(|v| v.abs() > 0.12));

        let (w, b) = init_linear(1, 5000, &mut rng).unwrap();
        assert!(w.data().iter().chain(b.data()).all(|v| v.abs() <= 1.0));
        assert!(init_linear(0, 3, &mut rng).is_err());
    }

    #[test]
    fn init_is_deterministic_per_seed() {
        let a = init_linear(8, 4, &mut stream_rng(9, 1)).unwrap();
        let b = init_linear(8, 4, &mut stream_rng(9, 1)).unwrap();
        assert_eq!(a, b);
    }

    fn zero_gru(params: &mut ParamSet, input: usize, hidden: usize) -> Gru {
        let gru = Gru::new(params, "gru", input, hidden, &mut stream_rng(0, 0));
        for p in params.iter_mut() {
            p.value.fill(0.0);
        }
        gru
    }

    #[test]
    fn gru_zero_fixed_point() {
        let mut params = ParamSet::new();
        let gru = zero_gru(&mut params, 3, 4);
        let mut g = Graph::new();
        let b = gru.bind(&mut g, &params);
        let x = g.input(Tensor::matrix(1, 3, vec![0.3, -1.0, 2.0]).unwrap());
        let h = g.input(Tensor::zeros(&[1, 4]));
        let out = b.cell(&mut g, x, h).unwrap();
        assert_eq!(g.value(out).data(), &[0.0; 4]);
    }

    #[test]
    fn gru_saturated_update_gate_passes_hidden_through() {
        let mut params = ParamSet::new();
        let gru = zero_gru(&mut params, 2, 3);
        // z preactivation = b_iz = 50 -> z ≈ 1
        let bias = params.get_mut(gru.bias_ih);
        for k in 3..6 {
            bias.value.data_mut()[k] = 50.0;
        }
        let mut g = Graph::new();
        let b = gru.bind(&mut g, &params);
        let x = g.input(Tensor::matrix(1, 2, vec![1.0, -1.0]).unwrap());
        let h0 = vec![0.4, -0.7, 0.1];
        let h = g.input(Tensor::matrix(1, 3, h0.clone()).unwrap());
        let out = b.cell(&mut g, x, h).unwrap();
        for (a, b) in g.value(out).data().iter().zip(&h0) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
