//! Plain-f64 reference computations for softmax tables, independent of the tape.
#![allow(dead_code)]

use entbonus::entropy::SoftmaxTable;
use entbonus::policy::{Action, ActionSpace};
use rand::Rng;
use rand_distr::StandardNormal;

/// Logits in the layout `SoftmaxTable::from_logits` expects.
#[derive(Debug, Clone)]
pub struct Logits {
    pub d: usize,
    pub k: usize,
    pub blocks: Vec<Vec<f64>>,
}

impl Logits {
    pub fn random<R: Rng>(d: usize, k: usize, scale: f64, rng: &mut R) -> Self {
        let blocks = (0..d)
            .map(|i| (0..k.pow(i as u32) * k).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect())
            .collect();
        Self { d, k, blocks }
    }

    pub fn table(&self) -> SoftmaxTable<f64> {
        SoftmaxTable::from_logits(ActionSpace::new(self.d, self.k).unwrap(), self.blocks.clone()).unwrap()
    }

    pub fn conditional(&self, prefix: &[usize]) -> Vec<f64> {
        let row = prefix.iter().fold(0, |acc, &c| acc * self.k + c);
        let z = &self.blocks[prefix.len()][row * self.k..(row + 1) * self.k];
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        e.into_iter().map(|v| v / s).collect()
    }

    pub fn actions(&self) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..self.d {
            out = out.into_iter().flat_map(|p| (0..self.k).map(move |c| [p.clone(), vec![c]].concat())).collect();
        }
        out
    }

    pub fn prob(&self, a: &[usize]) -> f64 {
        (0..a.len()).map(|i| self.conditional(&a[..i])[a[i]]).product()
    }

    pub fn entropy(&self) -> f64 {
        self.actions().iter().map(|a| self.prob(a)).filter(|&p| p > 0.0).map(|p| -p * p.ln()).sum()
    }

    /// `sum_i H(p(. | a_<i))` along `a`.
    pub fn smoothed(&self, a: &[usize]) -> f64 {
        (0..a.len())
            .map(|i| self.conditional(&a[..i]).iter().filter(|&&p| p > 0.0).map(|p| -p * p.ln()).sum::<f64>())
            .sum()
    }

    /// Central-difference gradient of `f` with respect to every logit, flattened block by block.
    pub fn numeric_gradient(&self, f: impl Fn(&Logits) -> f64, eps: f64) -> Vec<f64> {
        let mut out = Vec::new();
        for b in 0..self.blocks.len() {
            for j in 0..self.blocks[b].len() {
                let mut plus = self.clone();
                plus.blocks[b][j] += eps;
                let mut minus = self.clone();
                minus.blocks[b][j] -= eps;
                out.push((f(&plus) - f(&minus)) / (2.0 * eps));
            }
        }
        out
    }
}

pub fn action(a: &[usize]) -> Action {
    Action::new(a.to_vec())
}
