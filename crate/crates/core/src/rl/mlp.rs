//! Fully connected network: tanh hidden layers, linear output.
//!
//! Parameters live in one flat buffer, layer by layer, each layer stored as
//! its row-major weight matrix (`out × in`) followed by its bias.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
}

/// Activations recorded by [`Mlp::forward_cached`]; `acts[0]` is the input.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Vec<f64>>,
}

impl Cache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("nonempty cache")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases; the last layer is scaled by `out_gain`.
    pub fn new<R: Rng + ?Sized>(sizes: &[usize], out_gain: f64, rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "network needs input and output sizes");
        let mut params = Vec::with_capacity(Self::count(sizes));
        let layers = sizes.len() - 1;
        for l in 0..layers {
            let (i, o) = (sizes[l], sizes[l + 1]);
            let lim = (6.0 / (i + o) as f64).sqrt();
            let gain = if l + 1 == layers { out_gain } else { 1.0 };
            let dist = Uniform::new_inclusive(-lim, lim).expect("valid range");
            for _ in 0..i * o {
                params.push(dist.sample(rng) * gain);
            }
            params.extend(std::iter::repeat_n(0.0, o));
        }
        Mlp {
            sizes: sizes.to_vec(),
            params,
        }
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::CheckpointMismatch("invalid layer sizes".into()));
        }
        let n = Self::count(sizes);
        if params.len() != n {
            return Err(Error::Dimension {
                expected: n,
                got: params.len(),
            });
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("sizes")
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.acts.pop().expect("output"))
    }

    pub fn forward_cached(&self, x: &[f64]) -> Result<Cache> {
        if x.len() != self.sizes[0] {
            return Err(Error::Dimension {
                expected: self.sizes[0],
                got: x.len(),
            });
        }
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + ni * no];
            let b = &self.params[off + ni * no..off + ni * no + no];
            let input = &acts[l];
            let mut out = Vec::with_capacity(no);
            for r in 0..no {
                let row = &w[r * ni..(r + 1) * ni];
                let mut s = b[r];
                for (wv, xv) in row.iter().zip(input) {
                    s += wv * xv;
                }
                out.push(if l + 1 < layers { s.tanh() } else { s });
            }
            acts.push(out);
            off += ni * no + no;
        }
        Ok(Cache { acts })
    }

    /// Accumulates `∂L/∂params` into `grads` given `∂L/∂output`.
    pub fn backward(&self, cache: &Cache, grad_out: &[f64], grads: &mut [f64]) {
        debug_assert_eq!(grads.len(), self.params.len());
        let layers = self.sizes.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut off = 0;
        for l in 0..layers {
            offsets.push(off);
            off += self.sizes[l] * self.sizes[l + 1] + self.sizes[l + 1];
        }
        let mut delta = grad_out.to_vec();
        for l in (0..layers).rev() {
            let (ni, no) = (self.sizes[l], self.sizes[l + 1]);
            if l + 1 < layers {
                // tanh' = 1 − y²
                for (d, y) in delta.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            let off = offsets[l];
            let input = &cache.acts[l];
            for r in 0..no {
                let d = delta[r];
                if d != 0.0 {
                    let g = &mut grads[off + r * ni..off + (r + 1) * ni];
                    for (gv, xv) in g.iter_mut().zip(input) {
                        *gv += d * xv;
                    }
                }
                grads[off + ni * no + r] += d;
            }
            if l > 0 {
                let w = &self.params[off..off + ni * no];
                let mut prev = vec![0.0; ni];
                for r in 0..no {
                    let d = delta[r];
                    if d != 0.0 {
                        for (p, wv) in prev.iter_mut().zip(&w[r * ni..(r + 1) * ni]) {
                            *p += d * wv;
                        }
                    }
                }
                delta = prev;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn unpack(net: &Mlp) -> Vec<(DMatrix<f64>, DVector<f64>)> {
        let mut out = Vec::new();
        let mut off = 0;
        for w in net.sizes().windows(2) {
            let (i, o) = (w[0], w[1]);
            let m = DMatrix::from_row_slice(o, i, &net.params()[off..off + i * o]);
            let b = DVector::from_row_slice(&net.params()[off + i * o..off + i * o + o]);
            out.push((m, b));
            off += i * o + o;
        }
        out
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::from_params(&[3, 4, 2], vec![0.0; 3 * 4 + 4 + 4 * 2 + 2]).unwrap();
        assert_eq!(net.forward(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_linear_layer() {
        let net = Mlp::from_params(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0.]).unwrap();
        assert_eq!(net.forward(&[0.5, -1.5, 2.0]).unwrap(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn forward_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Mlp::new(&[5, 7, 6, 3], 1.0, &mut rng);
        let x = [0.3, -0.1, 0.8, 0.0, -2.0];
        let mut a = DVector::from_row_slice(&x);
        let layers = unpack(&net);
        for (k, (w, b)) in layers.iter().enumerate() {
            a = w * a + b;
            if k + 1 < layers.len() {
                a = a.map(f64::tanh);
            }
        }
        let y = net.forward(&x).unwrap();
        for i in 0..3 {
            assert!((y[i] - a[i]).abs() < 1e-12);
        }
        assert!(net.forward(&x[..4]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for sizes in [vec![2, 2, 1], vec![4, 8, 8, 3]] {
            let mut net = Mlp::new(&sizes, 1.0, &mut rng);
            let x: Vec<f64> = (0..sizes[0]).map(|i| 0.3 * i as f64 - 0.4).collect();
            let c: Vec<f64> = (0..*sizes.last().unwrap()).map(|i| 1.0 - 0.7 * i as f64).collect();
            // L = Σ c_i y_i
            let loss = |n: &Mlp| -> f64 { n.forward(&x).unwrap().iter().zip(&c).map(|(y, c)| y * c).sum() };
            let cache = net.forward_cached(&x).unwrap();
            let mut g = vec![0.0; net.num_params()];
            net.backward(&cache, &c, &mut g);
            let h = 1e-5;
            for k in 0..net.num_params() {
                let orig = net.params()[k];
                net.params_mut()[k] = orig + h;
                let lp = loss(&net);
                net.params_mut()[k] = orig - h;
                let lm = loss(&net);
                net.params_mut()[k] = orig;
                let fd = (lp - lm) / (2.0 * h);
                let denom = fd.abs().max(g[k].abs()).max(1e-6);
                assert!((fd - g[k]).abs() / denom < 1e-4, "param {k}: {fd} vs {}", g[k]);
            }
        }
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[3, 5, 2], 1.0, &mut rng);
        let cache = net.forward_cached(&[0.1, 0.2, 0.3]).unwrap();
        let mut g = vec![0.0; net.num_params()];
        net.backward(&cache, &[0.0, 0.0], &mut g);
        assert!(g.iter().all(|v| *v == 0.0));
    }
}
