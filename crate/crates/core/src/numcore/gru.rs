use rand::Rng;

use super::params::ParamStore;
use super::tape::{NodeId, Tape};
use super::tensor::{Real, Tensor};
use crate::error::{invalid, Result};

/// Parameter names of one GRU layer, all sharing a common prefix.
///
/// Gating:
/// `z = σ(Wz x + Uz h + bz)`, `r = σ(Wr x + Ur h + br)`,
/// `ĥ = tanh(Wh x + Uh (r ⊙ h) + bh)`, `h' = (1 − z) ⊙ h + z ⊙ ĥ`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Gru {
    pub prefix: String,
    pub input_dim: usize,
    pub hidden_dim: usize,
    wz: String,
    uz: String,
    bz: String,
    wr: String,
    ur: String,
    br: String,
    wh: String,
    uh: String,
    bh: String,
}

impl Gru {
    pub fn new(prefix: &str, input_dim: usize, hidden_dim: usize) -> Self {
        let n = |s: &str| format!("{prefix}.{s}");
        Gru {
            prefix: prefix.to_string(),
            input_dim,
            hidden_dim,
            wz: n("wz"),
            uz: n("uz"),
            bz: n("bz"),
            wr: n("wr"),
            ur: n("ur"),
            br: n("br"),
            wh: n("wh"),
            uh: n("uh"),
            bh: n("bh"),
        }
    }

    pub fn param_names(&self) -> [&str; 9] {
        [
            &self.wz, &self.uz, &self.bz, &self.wr, &self.ur, &self.br, &self.wh, &self.uh,
            &self.bh,
        ]
    }

    pub fn declare<F: Real, R: Rng>(&self, store: &mut ParamStore<F>, rng: &mut R) -> Result<()> {
        let (i, h) = (self.input_dim, self.hidden_dim);
        for (w, u, b) in [
            (&self.wz, &self.uz, &self.bz),
            (&self.wr, &self.ur, &self.br),
            (&self.wh, &self.uh, &self.bh),
        ] {
            store.insert_uniform(w.as_str(), &[h, i], rng)?;
            store.insert_uniform(u.as_str(), &[h, h], rng)?;
            store.insert_zeros(b.as_str(), &[h])?;
        }
        Ok(())
    }

    /// One recurrence step recorded on the tape.
    pub fn step<F: Real>(&self, tape: &mut Tape<'_, F>, x: NodeId, h: NodeId) -> NodeId {
        let gate = |tape: &mut Tape<'_, F>, w: &str, u: &str, b: &str, hin: NodeId| {
            let (w, u, b) = (tape.param(w), tape.param(u), tape.param(b));
            let wx = tape.matvec(w, x);
            let uh = tape.matvec(u, hin);
            tape.sum(&[wx, uh, b])
        };
        let z_pre = gate(tape, &self.wz, &self.uz, &self.bz, h);
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, &self.wr, &self.ur, &self.br, h);
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h);
        let c_pre = gate(tape, &self.wh, &self.uh, &self.bh, rh);
        let cand = tape.tanh(c_pre);
        let keep = tape.one_minus(z);
        let old = tape.mul(keep, h);
        let new = tape.mul(z, cand);
        tape.add(old, new)
    }

    /// Runs the recurrence over `inputs` from `h0`, returning every hidden state.
    pub fn run<F: Real>(
        &self,
        tape: &mut Tape<'_, F>,
        inputs: &[NodeId],
        h0: NodeId,
    ) -> Vec<NodeId> {
        let mut h = h0;
        inputs
            .iter()
            .map(|&x| {
                h = self.step(tape, x, h);
                h
            })
            .collect()
    }

    pub fn zero_state<F: Real>(&self, tape: &mut Tape<'_, F>) -> NodeId {
        tape.input_vec(vec![F::zero(); self.hidden_dim])
    }
}

/// Single GRU step on plain tensors, reading the layer named `prefix` from `params`.
pub fn gru_cell<F: Real>(
    params: &ParamStore<F>,
    prefix: &str,
    x: &Tensor<F>,
    h_prev: &Tensor<F>,
) -> Result<Tensor<F>> {
    let wz = params.expect(&format!("{prefix}.wz"))?;
    let (hidden, input) = match wz.shape() {
        [h, i] => (*h, *i),
        s => return invalid(format!("{prefix}.wz has shape {s:?}")),
    };
    if x.rank() != 1 || x.len() != input {
        return invalid(format!(
            "x has shape {:?}, layer expects [{input}]",
            x.shape()
        ));
    }
    if h_prev.rank() != 1 || h_prev.len() != hidden {
        return invalid(format!(
            "h_prev has shape {:?}, layer expects [{hidden}]",
            h_prev.shape()
        ));
    }
    let gru = Gru::new(prefix, input, hidden);
    for name in gru.param_names() {
        let t = params.expect(name)?;
        let want: &[usize] = match &name[name.len() - 2..] {
            "wz" | "wr" | "wh" => &[hidden, input],
            "uz" | "ur" | "uh" => &[hidden, hidden],
            _ => &[hidden],
        };
        if t.shape() != want {
            return invalid(format!(
                "{name} has shape {:?}, expected {want:?}",
                t.shape()
            ));
        }
    }
    let mut tape = Tape::new(params);
    let xn = tape.input(x);
    let hn = tape.input(h_prev);
    let out = gru.step(&mut tape, xn, hn);
    Ok(tape.tensor(out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_layer(input: usize, hidden: usize) -> ParamStore {
        let mut p = ParamStore::new();
        let g = Gru::new("g", input, hidden);
        for n in g.param_names() {
            let shape: Vec<usize> = match &n[n.len() - 2..] {
                "wz" | "wr" | "wh" => vec![hidden, input],
                "uz" | "ur" | "uh" => vec![hidden, hidden],
                _ => vec![hidden],
            };
            p.insert_zeros(n, &shape).unwrap();
        }
        p
    }

    #[test]
    fn zero_weights_halve_the_state() {
        let p = zero_layer(3, 4);
        let h = Tensor::vector(vec![0.4f32, -0.2, 0.9, 0.0]);
        let out = gru_cell(&p, "g", &Tensor::vector(vec![1.0, 2.0, 3.0]), &h).unwrap();
        assert_eq!(out.data(), &[0.2, -0.1, 0.45, 0.0]);
    }

    #[test]
    fn zero_weights_zero_state_stay_zero() {
        let p = zero_layer(2, 3);
        let out = gru_cell(
            &p,
            "g",
            &Tensor::vector(vec![1.0, -1.0]),
            &Tensor::zeros(&[3]),
        )
        .unwrap();
        assert_eq!(out.data(), &[0.0; 3]);
    }

    #[test]
    fn shape_mismatch_is_invalid_argument() {
        let p = zero_layer(2, 3);
        assert!(gru_cell(&p, "g", &Tensor::vector(vec![1.0f32]), &Tensor::zeros(&[3])).is_err());
        assert!(gru_cell(
            &p,
            "g",
            &Tensor::vector(vec![1.0f32, 2.0]),
            &Tensor::zeros(&[2])
        )
        .is_err());
    }

    fn sig(v: f64) -> f64 {
        1.0 / (1.0 + (-v).exp())
    }

    /// Scalar, loop-by-loop evaluation of the gate equations.
    fn scalar_oracle(p: &ParamStore, x: &[f32], h: &[f32]) -> Vec<f64> {
        let get = |n: &str| {
            p.get(&format!("g.{n}"))
                .unwrap()
                .data()
                .iter()
                .map(|&v| v as f64)
                .collect::<Vec<f64>>()
        };
        let (wz, uz, bz) = (get("wz"), get("uz"), get("bz"));
        let (wr, ur, br) = (get("wr"), get("ur"), get("br"));
        let (wh, uh, bh) = (get("wh"), get("uh"), get("bh"));
        let d = h.len();
        let m = x.len();
        let lin = |w: &[f64], u: &[f64], b: &[f64], hv: &[f64], k: usize| {
            let mut s = b[k];
            for j in 0..m {
                s += w[k * m + j] * x[j] as f64;
            }
            for j in 0..d {
                s += u[k * d + j] * hv[j];
            }
            s
        };
        let hv: Vec<f64> = h.iter().map(|&v| v as f64).collect();
        let z: Vec<f64> = (0..d).map(|k| sig(lin(&wz, &uz, &bz, &hv, k))).collect();
        let r: Vec<f64> = (0..d).map(|k| sig(lin(&wr, &ur, &br, &hv, k))).collect();
        let rh: Vec<f64> = (0..d).map(|k| r[k] * hv[k]).collect();
        let c: Vec<f64> = (0..d).map(|k| lin(&wh, &uh, &bh, &rh, k).tanh()).collect();
        (0..d).map(|k| (1.0 - z[k]) * hv[k] + z[k] * c[k]).collect()
    }

    #[test]
    fn matches_scalar_oracle_at_dim_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamStore::new();
        let g = Gru::new("g", 4, 4);
        g.declare(&mut p, &mut rng).unwrap();
        // non-zero biases so every term is exercised
        for b in ["g.bz", "g.br", "g.bh"] {
            let v: Vec<f32> = (0..4).map(|_| rng.gen_range(-0.5..0.5)).collect();
            p.set(b, Tensor::vector(v)).unwrap();
        }
        let x: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let h: Vec<f32> = (0..4).map(|_| rng.gen_range(-0.9..0.9)).collect();
        let out = gru_cell(&p, "g", &Tensor::from_slice(&x), &Tensor::from_slice(&h)).unwrap();
        let want = scalar_oracle(&p, &x, &h);
        for (a, b) in out.data().iter().zip(&want) {
            assert!((*a as f64 - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn deterministic_and_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut p = ParamStore::new();
        Gru::new("g", 5, 6).declare(&mut p, &mut rng).unwrap();
        let x = Tensor::vector((0..5).map(|i| i as f32 * 3.0 - 6.0).collect());
        let h = Tensor::vector(vec![0.99f32, -0.99, 0.5, -0.5, 0.0, 0.7]);
        let a = gru_cell(&p, "g", &x, &h).unwrap();
        let b = gru_cell(&p, "g", &x, &h).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() < 1.0));
    }
}
