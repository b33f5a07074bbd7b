//! Chain-structured hidden Markov lattices.
//!
//! Both meter models share one shape: states come in chains whose pointer
//! advances one position per frame with probability 1, and only the last
//! position of a chain may branch, always into the first position of some
//! chain. Viterbi over such a lattice needs backpointers for chain heads
//! only, and the score buffers never move: position `p` at frame `f` lives
//! at ring index `(p - f) mod len`, so the slot a head is written to is the
//! slot its own tail vacated.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone)]
pub(crate) struct Chain {
    /// Emission class of every position.
    pub classes: Vec<u32>,
    /// Incoming branches `(source chain, log probability)` from the tail of
    /// the source chain into the head of this one.
    pub preds: Vec<(usize, f64)>,
    /// Flattened state index of position `p` is `base + p * stride`.
    pub base: usize,
    pub stride: usize,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn state_index(&self, pos: usize) -> usize {
        self.base + pos * self.stride
    }
}

/// Per-frame log-likelihood of every emission class, row-major.
#[derive(Debug, Clone)]
pub(crate) struct EmissionTable {
    pub num_classes: usize,
    pub log_probs: Vec<f64>,
}

impl EmissionTable {
    pub fn num_frames(&self) -> usize {
        self.log_probs
            .len()
            .checked_div(self.num_classes)
            .unwrap_or(0)
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        &self.log_probs[frame * self.num_classes..(frame + 1) * self.num_classes]
    }
}

#[derive(Debug, Clone)]
pub(crate) struct ChainLattice {
    chains: Vec<Chain>,
    /// Outgoing branches from each chain tail as cumulative probabilities.
    succ: Vec<Vec<(usize, f64)>>,
    num_states: usize,
}

impl ChainLattice {
    pub fn new(mut chains: Vec<Chain>) -> Self {
        let num_states = chains.iter().map(Chain::len).sum();
        // Ties between predecessors resolve to the smaller tail state index.
        let tails: Vec<usize> = chains.iter().map(|c| c.state_index(c.len() - 1)).collect();
        for chain in &mut chains {
            chain.preds.sort_by_key(|&(src, _)| tails[src]);
        }
        let mut succ: Vec<Vec<(usize, f64)>> = vec![Vec::new(); chains.len()];
        for (dst, chain) in chains.iter().enumerate() {
            for &(src, lp) in &chain.preds {
                succ[src].push((dst, lp.exp()));
            }
        }
        for list in &mut succ {
            let mut acc = 0.0;
            for (_, p) in list.iter_mut() {
                acc += *p;
                *p = acc;
            }
        }
        Self {
            chains,
            succ,
            num_states,
        }
    }

    #[cfg(test)]
    pub fn chains(&self) -> &[Chain] {
        &self.chains
    }

    /// Exact MAP path under a uniform initial distribution, as
    /// `(chain, position)` per frame. Ties resolve to the smaller flattened
    /// state index.
    pub fn viterbi(&self, emissions: &EmissionTable) -> Vec<(usize, usize)> {
        let frames = emissions.num_frames();
        if frames == 0 {
            return Vec::new();
        }
        let nc = self.chains.len();
        let log_prior = -(self.num_states as f64).ln();
        let row0 = emissions.row(0);
        let mut scores: Vec<Vec<f64>> = self
            .chains
            .iter()
            .map(|c| {
                c.classes
                    .iter()
                    .map(|&k| log_prior + row0[k as usize])
                    .collect()
            })
            .collect();
        let mut back = vec![u32::MAX; frames * nc];
        let mut heads = vec![f64::NEG_INFINITY; nc];

        for f in 1..frames {
            for (c, chain) in self.chains.iter().enumerate() {
                let mut best = f64::NEG_INFINITY;
                let mut arg = u32::MAX;
                for &(src, lp) in &chain.preds {
                    let len = scores[src].len();
                    let tail = scores[src][ring_index(len - 1, f - 1, len)] + lp;
                    if tail > best {
                        best = tail;
                        arg = src as u32;
                    }
                }
                heads[c] = best;
                back[f * nc + c] = arg;
            }
            let row = emissions.row(f);
            for (c, chain) in self.chains.iter().enumerate() {
                let buf = &mut scores[c];
                let len = buf.len();
                let shift = f % len;
                buf[ring_index(0, f, len)] = heads[c];
                // index i holds position (i + shift) mod len
                let (wrapped, direct) = buf.split_at_mut(len - shift);
                for (slot, &k) in wrapped.iter_mut().zip(&chain.classes[shift..]) {
                    *slot += row[k as usize];
                }
                for (slot, &k) in direct.iter_mut().zip(&chain.classes[..shift]) {
                    *slot += row[k as usize];
                }
            }
        }

        let last = frames - 1;
        let mut best = (f64::NEG_INFINITY, usize::MAX, 0usize, 0usize);
        for (c, chain) in self.chains.iter().enumerate() {
            let len = chain.len();
            for (i, &s) in scores[c].iter().enumerate() {
                let pos = (i + last) % len;
                let idx = chain.state_index(pos);
                if s > best.0 || (s == best.0 && idx < best.1) {
                    best = (s, idx, c, pos);
                }
            }
        }
        let (_, _, mut c, mut p) = best;
        if best.1 == usize::MAX {
            // every state impossible: fall back to the first state
            c = 0;
            p = 0;
        }
        let mut path = vec![(0, 0); frames];
        for f in (0..frames).rev() {
            path[f] = (c, p);
            if f == 0 {
                break;
            }
            if p > 0 {
                p -= 1;
            } else {
                let src = back[f * nc + c];
                if src == u32::MAX {
                    // unreachable head; only possible on an all -inf path
                    p = 0;
                    continue;
                }
                c = src as usize;
                p = self.chains[c].len() - 1;
            }
        }
        path
    }

    fn sample_successor(&self, chain: usize, rng: &mut ChaCha8Rng) -> Option<usize> {
        let list = &self.succ[chain];
        let total = list.last()?.1;
        let u = rng.random::<f64>() * total;
        Some(
            list.iter()
                .find(|&&(_, cum)| u < cum)
                .unwrap_or_else(|| list.last().unwrap())
                .0,
        )
    }

    /// Bootstrap particle filter with systematic resampling whenever the
    /// effective sample size drops below half the particle count.
    ///
    /// `jitter` is applied to every particle right after a resampling step;
    /// it may move the particle anywhere and returns a log-weight offset for
    /// it. Pass a closure returning 0 without moving for a plain bootstrap
    /// filter. The per-frame estimate is the state of the
    /// highest-weight particle (first index on ties) before resampling.
    pub fn particle_filter<J>(
        &self,
        emissions: &EmissionTable,
        num_particles: usize,
        seed: u64,
        mut jitter: J,
    ) -> Vec<(usize, usize)>
    where
        J: FnMut(&mut (usize, usize), &mut ChaCha8Rng) -> f64,
    {
        let frames = emissions.num_frames();
        if frames == 0 || num_particles == 0 {
            return Vec::new();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let starts: Vec<usize> = self
            .chains
            .iter()
            .scan(0, |acc, c| {
                let s = *acc;
                *acc += c.len();
                Some(s)
            })
            .collect();
        let mut particles: Vec<(usize, usize)> = (0..num_particles)
            .map(|_| {
                let g = rng.random_range(0..self.num_states);
                let c = starts.partition_point(|&s| s <= g) - 1;
                (c, g - starts[c])
            })
            .collect();
        let mut log_w = vec![0.0; num_particles];
        let mut weights = vec![0.0; num_particles];
        let mut path = Vec::with_capacity(frames);

        for f in 0..frames {
            if f > 0 {
                for (part, lw) in particles.iter_mut().zip(log_w.iter_mut()) {
                    let (c, p) = *part;
                    if p + 1 < self.chains[c].len() {
                        part.1 = p + 1;
                    } else {
                        match self.sample_successor(c, &mut rng) {
                            Some(next) => *part = (next, 0),
                            None => *lw = f64::NEG_INFINITY,
                        }
                    }
                }
            }
            let row = emissions.row(f);
            for (&(c, p), lw) in particles.iter().zip(log_w.iter_mut()) {
                *lw += row[self.chains[c].classes[p] as usize];
            }
            let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                log_w.iter_mut().for_each(|w| *w = 0.0);
            } else {
                for (w, lw) in weights.iter_mut().zip(&log_w) {
                    *w = (lw - max).exp();
                }
            }
            if max == f64::NEG_INFINITY {
                weights.iter_mut().for_each(|w| *w = 1.0);
            }
            let total: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= total);

            let mut best = 0;
            for (i, &w) in weights.iter().enumerate() {
                if w > weights[best] {
                    best = i;
                }
            }
            path.push(particles[best]);

            let ess = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
            if ess < num_particles as f64 / 2.0 {
                particles = systematic_resample(&particles, &weights, &mut rng);
                for (part, lw) in particles.iter_mut().zip(log_w.iter_mut()) {
                    *lw = jitter(part, &mut rng);
                }
            } else {
                for (lw, &w) in log_w.iter_mut().zip(&weights) {
                    *lw = w.ln();
                }
            }
        }
        path
    }
}

fn ring_index(pos: usize, frame: usize, len: usize) -> usize {
    (pos + len - frame % len) % len
}

/// One uniform draw, `n` evenly spaced pointers into the cumulative weights.
pub(crate) fn systematic_resample<T: Clone>(
    items: &[T],
    weights: &[f64],
    rng: &mut impl Rng,
) -> Vec<T> {
    let n = items.len();
    let step = 1.0 / n as f64;
    let mut u = rng.random::<f64>() * step;
    let mut out = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for _ in 0..n {
        while u > cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        out.push(items[i].clone());
        u += step;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn systematic_resampling_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let items = [0usize, 1, 2, 3];
        let out = systematic_resample(&items, &[0.5, 0.25, 0.25, 0.0], &mut rng);
        let count = |k| out.iter().filter(|&&x| x == k).count();
        assert_eq!((count(0), count(1), count(2), count(3)), (2, 1, 1, 0));
    }

    /// Two chains of lengths 2 and 3 that branch into each other.
    fn toy() -> ChainLattice {
        ChainLattice::new(vec![
            Chain {
                classes: vec![0, 1],
                preds: vec![(0, 0.5f64.ln()), (1, 0.5f64.ln())],
                base: 0,
                stride: 1,
            },
            Chain {
                classes: vec![0, 1, 1],
                preds: vec![(0, 0.5f64.ln()), (1, 0.5f64.ln())],
                base: 2,
                stride: 1,
            },
        ])
    }

    #[test]
    fn viterbi_follows_emissions() {
        let lat = toy();
        // class 0 strongly preferred at frames 0 and 2 -> chain 0 twice
        let lp = |a: f64, b: f64| vec![a, b];
        let rows = [lp(0.0, -5.0), lp(-5.0, 0.0), lp(0.0, -5.0), lp(-5.0, 0.0)].concat();
        let em = EmissionTable {
            num_classes: 2,
            log_probs: rows,
        };
        assert_eq!(lat.viterbi(&em), vec![(0, 0), (0, 1), (0, 0), (0, 1)]);
    }

    #[test]
    fn particle_filter_is_deterministic() {
        let lat = toy();
        let rows: Vec<f64> = (0..40)
            .flat_map(|f| if f % 2 == 0 { [0.0, -1.0] } else { [-1.0, 0.0] })
            .collect();
        let em = EmissionTable {
            num_classes: 2,
            log_probs: rows,
        };
        let a = lat.particle_filter(&em, 50, 9, |_, _| 0.0);
        let b = lat.particle_filter(&em, 50, 9, |_, _| 0.0);
        assert_eq!(a, b);
        assert_eq!(a.len(), 40);
    }
}
