//! Outcome selection for measurements.
//!
//! Every random choice in the crate goes through a [`Chooser`]. Sampling
//! uses a seeded RNG; exact bookkeeping replays every branch with
//! [`enumerate`] and weights each leaf by its Born probability.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Branches below this probability are treated as impossible.
pub const BRANCH_EPS: f64 = 1e-14;

pub trait Chooser {
    /// Pick an index given (unnormalized) outcome probabilities.
    fn pick(&mut self, probs: &[f64]) -> usize;
}

/// Samples outcomes from an RNG.
#[derive(Debug, Clone)]
pub struct Sampler<R>(pub R);

impl<R: RngCore> Chooser for Sampler<R> {
    fn pick(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let mut u = self.0.random::<f64>() * total;
        let mut last = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p <= BRANCH_EPS * total {
                continue;
            }
            last = i;
            if u < p {
                return i;
            }
            u -= p;
        }
        last
    }
}

/// Deterministic per-trial sampler: ChaCha8 keyed by `seed`, stream `trial`.
pub fn trial_sampler(seed: u64, trial: u64) -> Sampler<ChaCha8Rng> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial);
    Sampler(rng)
}

/// Replays a fixed list of choices, then falls back to the most probable outcome.
#[derive(Debug, Clone, Default)]
pub struct Scripted {
    script: Vec<usize>,
    pos: usize,
}

impl Scripted {
    pub fn new(script: Vec<usize>) -> Self {
        Self { script, pos: 0 }
    }
}

impl Chooser for Scripted {
    fn pick(&mut self, probs: &[f64]) -> usize {
        let choice = match self.script.get(self.pos) {
            Some(&c) => c,
            None => argmax(probs),
        };
        self.pos += 1;
        choice
    }
}

fn argmax(probs: &[f64]) -> usize {
    probs.iter().enumerate().fold((0, f64::NEG_INFINITY), |acc, (i, &p)| if p > acc.1 { (i, p) } else { acc }).0
}

#[derive(Debug, Clone)]
pub struct Branch<T> {
    pub probability: f64,
    pub path: Vec<usize>,
    pub value: T,
}

struct Replay {
    prefix: Vec<usize>,
    taken: Vec<(usize, Vec<usize>)>,
    weight: f64,
}

impl Chooser for Replay {
    fn pick(&mut self, probs: &[f64]) -> usize {
        let total: f64 = probs.iter().sum();
        let live: Vec<usize> =
            (0..probs.len()).filter(|&i| probs[i] > BRANCH_EPS * total.max(f64::MIN_POSITIVE)).collect();
        let depth = self.taken.len();
        let choice = if depth < self.prefix.len() { self.prefix[depth] } else { live.first().copied().unwrap_or(0) };
        self.weight *= if total > 0.0 { probs[choice] / total } else { 0.0 };
        self.taken.push((choice, live));
        choice
    }
}

/// Runs `f` once per reachable branch of its choices.
pub fn enumerate<T, F>(f: F) -> Result<Vec<Branch<T>>>
where
    F: FnMut(&mut dyn Chooser) -> Result<T>,
{
    enumerate_limited(f, usize::MAX)
}

/// Like [`enumerate`] but fails once more than `max_branches` leaves are visited.
pub fn enumerate_limited<T, F>(mut f: F, max_branches: usize) -> Result<Vec<Branch<T>>>
where
    F: FnMut(&mut dyn Chooser) -> Result<T>,
{
    let mut out = Vec::new();
    let mut prefix = Vec::new();
    loop {
        if out.len() >= max_branches {
            return Err(Error::BranchBudget(max_branches));
        }
        let mut replay = Replay { prefix: prefix.clone(), taken: Vec::new(), weight: 1.0 };
        let value = f(&mut replay)?;
        let path: Vec<usize> = replay.taken.iter().map(|(c, _)| *c).collect();
        out.push(Branch { probability: replay.weight, path: path.clone(), value });

        let mut next = None;
        for depth in (0..replay.taken.len()).rev() {
            let (choice, live) = &replay.taken[depth];
            if let Some(pos) = live.iter().position(|x| x == choice) {
                if pos + 1 < live.len() {
                    let mut p = path[..depth].to_vec();
                    p.push(live[pos + 1]);
                    next = Some(p);
                    break;
                }
            }
        }
        match next {
            Some(p) => prefix = p,
            None => return Ok(out),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn enumerate_covers_product_tree() {
        let branches = enumerate(|c| {
            let a = c.pick(&[0.5, 0.5]);
            let b = c.pick(&[0.25, 0.0, 0.75]);
            Ok((a, b))
        })
        .unwrap();
        assert_eq!(branches.len(), 4);
        let total: f64 = branches.iter().map(|b| b.probability).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert!(branches.iter().all(|b| b.value.1 != 1));
    }

    #[test]
    fn enumerate_handles_data_dependent_depth() {
        let branches = enumerate(|c| {
            let mut n = 0;
            while n < 3 && c.pick(&[0.5, 0.5]) == 1 {
                n += 1;
            }
            Ok(n)
        })
        .unwrap();
        assert_eq!(branches.len(), 4);
        let p3: f64 = branches.iter().filter(|b| b.value == 3).map(|b| b.probability).sum();
        assert!((p3 - 0.125).abs() < 1e-15);
    }

    #[test]
    fn budget_is_enforced() {
        let r = enumerate_limited(|c| Ok(c.pick(&[0.5, 0.5]) + c.pick(&[0.5, 0.5])), 3);
        assert!(r.is_err());
    }

    #[test]
    fn sampler_is_reproducible() {
        let draw = |t| {
            let mut s = trial_sampler(7, t);
            (0..20).map(|_| s.pick(&[0.3, 0.7])).collect::<Vec<_>>()
        };
        assert_eq!(draw(3), draw(3));
        assert_ne!(draw(3), draw(4));
    }

    #[test]
    fn sampler_skips_zero_weight() {
        let mut s = trial_sampler(1, 0);
        for _ in 0..1000 {
            assert_eq!(s.pick(&[0.0, 1.0, 0.0]), 1);
        }
    }

    #[test]
    fn scripted_replays_then_falls_back() {
        let mut s = Scripted::new(vec![1]);
        assert_eq!(s.pick(&[0.9, 0.1]), 1);
        assert_eq!(s.pick(&[0.2, 0.8]), 1);
        assert_eq!(s.pick(&[0.8, 0.2]), 0);
    }
}
