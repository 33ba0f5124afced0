//! Parameterized building blocks shared by the predictor and classifier.

use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamId, ParamStore, Rng, Tensor, Var};

/// Affine map `y = W x + b`, `W: [out, in]`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let bound = (6.0 / (input + output) as f64).sqrt();
        Self::with_scale(store, name, input, output, bound, rng)
    }

    /// Uniform weights in `[-scale, scale]`, zero bias.
    pub fn with_scale(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<Self> {
        let weight = store.add_uniform(&format!("{name}.weight"), &[output, input], scale, rng)?;
        let bias = store.add_zeros(&format!("{name}.bias"), &[output])?;
        Ok(Self {
            weight,
            bias,
            input,
            output,
        })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        g.affine(w, x, Some(b))
    }
}

/// Lookup table whose rows are the embeddings of discrete tokens.
#[derive(Clone, Debug)]
pub struct Embedding {
    pub table: ParamId,
    pub rows: usize,
    pub dim: usize,
}

impl Embedding {
    pub fn new(store: &mut ParamStore, name: &str, rows: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        let table = store.add_normal(&format!("{name}.table"), &[rows, dim], 1.0 / (dim as f64).sqrt(), rng)?;
        Ok(Self { table, rows, dim })
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, row: usize) -> Var {
        let t = g.param(store, self.table);
        g.select_row(t, row)
    }
}

/// LSTM cell with fused gate weights `[4H, in + H]`, gate order i, f, g, o.
#[derive(Clone, Debug)]
pub struct LstmCell {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmCell {
    /// Uniform `±1/sqrt(H)` weights; forget-gate bias starts at 1.
    pub fn new(store: &mut ParamStore, name: &str, input: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let weight = store.add_uniform(&format!("{name}.weight"), &[4 * hidden, input + hidden], bound, rng)?;
        let mut b = vec![0.0; 4 * hidden];
        b[hidden..2 * hidden].fill(1.0);
        let bias = store.add(format!("{name}.bias"), Tensor::vector(b))?;
        Ok(Self {
            weight,
            bias,
            input,
            hidden,
        })
    }

    /// One step; returns `(h', c')`.
    pub fn step(&self, g: &mut Graph, store: &ParamStore, x: Var, h: Var, c: Var) -> Result<(Var, Var)> {
        let hd = self.hidden;
        if g.dims(x) != [self.input] || g.dims(h) != [hd] || g.dims(c) != [hd] {
            return Err(Error::contract(format!(
                "lstm expects x[{}], h[{hd}], c[{hd}]; got {:?}, {:?}, {:?}",
                self.input,
                g.dims(x),
                g.dims(h),
                g.dims(c)
            )));
        }
        let (w, b) = (g.param(store, self.weight), g.param(store, self.bias));
        let xh = g.concat(&[x, h]);
        let z = g.affine(w, xh, Some(b));
        let zi = g.slice(z, 0, hd);
        let zf = g.slice(z, hd, hd);
        let zg = g.slice(z, 2 * hd, hd);
        let zo = g.slice(z, 3 * hd, hd);
        let i = g.sigmoid(zi);
        let f = g.sigmoid(zf);
        let gg = g.tanh(zg);
        let o = g.sigmoid(zo);
        let fc = g.mul(f, c);
        let ig = g.mul(i, gg);
        let c2 = g.add(fc, ig);
        let tc = g.tanh(c2);
        let h2 = g.mul(o, tc);
        Ok((h2, c2))
    }

    pub fn zero_state(&self, g: &mut Graph) -> (Var, Var) {
        let h = g.input(Tensor::zeros(&[self.hidden]));
        let c = g.input(Tensor::zeros(&[self.hidden]));
        (h, c)
    }
}

/// Value-level LSTM step with explicit weights `[4H, in + H]` and bias `[4H]`.
pub fn lstm_cell(x: &[f64], h: &[f64], c: &[f64], weight: &Tensor, bias: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let hd = h.len();
    if c.len() != hd || weight.dims() != [4 * hd, x.len() + hd] || bias.len() != 4 * hd {
        return Err(Error::contract(format!(
            "lstm_cell dims: x[{}], h[{hd}], c[{}], W{:?}, b[{}]",
            x.len(),
            c.len(),
            weight.dims(),
            bias.len()
        )));
    }
    let mut store = ParamStore::new();
    let cell = LstmCell {
        weight: store.add("w", weight.clone())?,
        bias: store.add("b", Tensor::vector(bias.to_vec()))?,
        input: x.len(),
        hidden: hd,
    };
    let mut g = Graph::new();
    let (xv, hv, cv) = (
        g.input(Tensor::vector(x.to_vec())),
        g.input(Tensor::vector(h.to_vec())),
        g.input(Tensor::vector(c.to_vec())),
    );
    let (h2, c2) = cell.step(&mut g, &store, xv, hv, cv)?;
    g.check()?;
    Ok((g.value(h2).data().to_vec(), g.value(c2).data().to_vec()))
}
