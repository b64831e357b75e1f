//! Stochastic policy heads on top of an [`Mlp`].

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::mlp::Mlp;
use crate::error::Result;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    /// Diagonal Gaussian with a state-independent log standard deviation.
    Gaussian { log_std: Vec<f64> },
    /// Softmax over the network outputs.
    Categorical,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub net: Mlp,
    pub head: Head,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|z| (z - m).exp()).sum::<f64>().ln();
    logits.iter().map(|z| z - lse).collect()
}

impl Policy {
    pub fn gaussian<R: Rng + ?Sized>(sizes: &[usize], init_log_std: f64, rng: &mut R) -> Self {
        let net = Mlp::new(sizes, 0.01, rng);
        let n = net.output_dim();
        Policy {
            net,
            head: Head::Gaussian {
                log_std: vec![init_log_std; n],
            },
        }
    }

    pub fn categorical<R: Rng + ?Sized>(sizes: &[usize], rng: &mut R) -> Self {
        Policy {
            net: Mlp::new(sizes, 0.01, rng),
            head: Head::Categorical,
        }
    }

    /// Length of the action vector (1 for categorical).
    pub fn action_dim(&self) -> usize {
        match self.head {
            Head::Gaussian { .. } => self.net.output_dim(),
            Head::Categorical => 1,
        }
    }

    pub fn extra_params(&self) -> &[f64] {
        match &self.head {
            Head::Gaussian { log_std } => log_std,
            Head::Categorical => &[],
        }
    }

    pub fn extra_params_mut(&mut self) -> &mut [f64] {
        match &mut self.head {
            Head::Gaussian { log_std } => log_std,
            Head::Categorical => &mut [],
        }
    }

    /// Samples an action; returns it with its log-probability.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let out = self.net.forward(obs)?;
        let action = match &self.head {
            Head::Gaussian { log_std } => out
                .iter()
                .zip(log_std)
                .map(|(mu, ls)| {
                    let e: f64 = StandardNormal.sample(rng);
                    mu + ls.exp() * e
                })
                .collect(),
            Head::Categorical => {
                let p = softmax(&out);
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = p.len() - 1;
                for (i, pi) in p.iter().enumerate() {
                    acc += pi;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                vec![pick as f64]
            }
        };
        let lp = self.log_prob_from_output(&out, &action);
        Ok((action, lp))
    }

    /// Mean action (Gaussian) or most probable index (categorical).
    pub fn greedy(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let out = self.net.forward(obs)?;
        Ok(match self.head {
            Head::Gaussian { .. } => out,
            Head::Categorical => {
                let mut best = 0;
                for i in 1..out.len() {
                    if out[i] > out[best] {
                        best = i;
                    }
                }
                vec![best as f64]
            }
        })
    }

    pub fn probs(&self, obs: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.net.forward(obs)?))
    }

    pub fn log_prob(&self, obs: &[f64], action: &[f64]) -> Result<f64> {
        Ok(self.log_prob_from_output(&self.net.forward(obs)?, action))
    }

    pub fn log_prob_from_output(&self, out: &[f64], action: &[f64]) -> f64 {
        match &self.head {
            Head::Gaussian { log_std } => out
                .iter()
                .zip(log_std)
                .zip(action)
                .map(|((mu, ls), a)| {
                    let z = (a - mu) / ls.exp();
                    -0.5 * z * z - ls - 0.5 * LN_2PI
                })
                .sum(),
            Head::Categorical => log_softmax(out)[action[0] as usize],
        }
    }

    pub fn entropy_from_output(&self, out: &[f64]) -> f64 {
        match &self.head {
            Head::Gaussian { log_std } => log_std.iter().map(|ls| ls + 0.5 * (LN_2PI + 1.0)).sum(),
            Head::Categorical => {
                let lp = log_softmax(out);
                -lp.iter().map(|l| l.exp() * l).sum::<f64>()
            }
        }
    }

    /// Accumulates the gradient of `c_logp · log π(a) + c_ent · H` with respect
    /// to the network output (`grad_out`) and the head's own parameters.
    pub fn head_grad(&self, out: &[f64], action: &[f64], c_logp: f64, c_ent: f64, grad_out: &mut [f64], grad_extra: &mut [f64]) {
        match &self.head {
            Head::Gaussian { log_std } => {
                for i in 0..out.len() {
                    let s2 = (2.0 * log_std[i]).exp();
                    let diff = action[i] - out[i];
                    grad_out[i] += c_logp * diff / s2;
                    grad_extra[i] += c_logp * (diff * diff / s2 - 1.0) + c_ent;
                }
            }
            Head::Categorical => {
                let lp = log_softmax(out);
                let h = -lp.iter().map(|l| l.exp() * l).sum::<f64>();
                let a = action[0] as usize;
                for j in 0..out.len() {
                    let p = lp[j].exp();
                    let ind = if j == a { 1.0 } else { 0.0 };
                    grad_out[j] += c_logp * (ind - p) - c_ent * p * (lp[j] + h);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn categorical_probabilities_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Policy::categorical(&[3, 8, 5], &mut rng);
        for k in 0..20 {
            let obs = [k as f64, -0.5 * k as f64, 1.0];
            let s: f64 = p.probs(&obs).unwrap().iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_log_prob_closed_form() {
        let net = Mlp::from_params(&[1, 2], vec![0.0, 0.0, 0.3, -0.2]).unwrap();
        let p = Policy {
            net,
            head: Head::Gaussian { log_std: vec![-0.5, 0.1] },
        };
        let a = [0.7, 0.4];
        let mut oracle = 0.0;
        for (mu, ls, x) in [(0.3f64, -0.5f64, a[0]), (-0.2, 0.1, a[1])] {
            let s = ls.exp();
            oracle += -((x - mu) * (x - mu)) / (2.0 * s * s) - (s * (2.0 * std::f64::consts::PI).sqrt()).ln();
        }
        assert!((p.log_prob(&[1.0], &a).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn head_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cat = Policy::categorical(&[2, 4], &mut rng);
        let gau = Policy {
            net: Mlp::new(&[2, 3], 1.0, &mut rng),
            head: Head::Gaussian { log_std: vec![-0.3, 0.2, 0.0] },
        };
        let obs = [0.4, -0.9];
        for (p, action) in [(cat, vec![2.0]), (gau, vec![0.1, -0.5, 0.9])] {
            let out = p.net.forward(&obs).unwrap();
            let f = |o: &[f64], pol: &Policy| 0.7 * pol.log_prob_from_output(o, &action) + 0.3 * pol.entropy_from_output(o);
            let mut g = vec![0.0; out.len()];
            let mut ge = vec![0.0; p.extra_params().len()];
            p.head_grad(&out, &action, 0.7, 0.3, &mut g, &mut ge);
            let h = 1e-6;
            for i in 0..out.len() {
                let (mut a, mut b) = (out.clone(), out.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (f(&a, &p) - f(&b, &p)) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6);
            }
            for i in 0..ge.len() {
                let (mut a, mut b) = (p.clone(), p.clone());
                a.extra_params_mut()[i] += h;
                b.extra_params_mut()[i] -= h;
                let fd = (f(&out, &a) - f(&out, &b)) / (2.0 * h);
                assert!((fd - ge[i]).abs() < 1e-6);
            }
        }
    }
}
