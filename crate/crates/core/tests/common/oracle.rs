//! Brute-force reference for bar-pointer decoding on tiny state spaces,
//! written from the model definition without the crate's transition code.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use tala_core::barpointer::{
    BarPointerState, BarPointerStateSpace, Gmm, ObservationModel, TransitionParams,
};
use tala_core::model::{NoveltySignal, TalaSpec};

/// (weights, means, variances) of one mixture.
pub type MixtureParams = (Vec<f64>, Vec<f64>, Vec<f64>);

pub struct Instance {
    pub space: BarPointerStateSpace,
    pub model: ObservationModel,
    /// Per pattern and bin.
    pub params: Vec<Vec<MixtureParams>>,
    pub nov: NoveltySignal,
    pub positions: Vec<usize>,
    pub p_tempo: f64,
    pub p_pattern: f64,
}

pub fn random_instance(rng: &mut ChaCha8Rng, max_states: usize, max_frames: usize) -> Instance {
    loop {
        let b = rng.random_range(1..=3u32);
        let fps = rng.random_range(1.0..6.0);
        let lo = rng.random_range(40.0..150.0);
        let hi = lo * rng.random_range(1.0..2.5);
        let r = rng.random_range(1..=2usize);
        let tala = TalaSpec::new("t", b).unwrap();
        let Ok(space) = BarPointerStateSpace::new(&tala, (lo, hi), fps, r) else {
            continue;
        };
        if space.num_states() > max_states || space.num_states() < 2 {
            continue;
        }
        let p_tempo = rng.random_range(0.0..0.6);
        let p_pattern = if r > 1 {
            rng.random_range(0.0..0.6)
        } else {
            0.0
        };
        let space = space
            .with_transition(TransitionParams { p_tempo, p_pattern })
            .unwrap();
        let bins = rng.random_range(1..=4usize);
        let mut params = Vec::new();
        let mut gmms = Vec::new();
        for _ in 0..r {
            let mut pp = Vec::new();
            let mut pg = Vec::new();
            for _ in 0..bins {
                let k = rng.random_range(1..=2usize);
                let mut w: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
                let s: f64 = w.iter().sum();
                w.iter_mut().for_each(|x| *x /= s);
                let m: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2.0)).collect();
                let v: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
                pg.push(Gmm::new(w.clone(), m.clone(), v.clone()).unwrap());
                pp.push((w, m, v));
            }
            params.push(pp);
            gmms.push(pg);
        }
        let model = ObservationModel::new(bins, gmms).unwrap();
        let frames = rng.random_range(1..=max_frames);
        let nov = NoveltySignal::new(
            fps,
            (0..frames).map(|_| rng.random_range(0.0..2.0)).collect(),
        )
        .unwrap();
        let positions = (0..space.num_tempi()).map(|t| space.positions(t)).collect();
        return Instance {
            space,
            model,
            params,
            nov,
            positions,
            p_tempo,
            p_pattern,
        };
    }
}

fn log_gauss_mix(x: f64, (w, m, v): &(Vec<f64>, Vec<f64>, Vec<f64>)) -> f64 {
    let d: f64 = (0..w.len())
        .map(|i| {
            w[i] * (-(x - m[i]).powi(2) / (2.0 * v[i])).exp()
                / (2.0 * std::f64::consts::PI * v[i]).sqrt()
        })
        .sum();
    d.ln()
}

impl Instance {
    pub fn all_states(&self) -> Vec<BarPointerState> {
        let r = self.params.len();
        let mut out = Vec::new();
        for (tempo, &n) in self.positions.iter().enumerate() {
            for position in 0..n {
                for pattern in 0..r {
                    out.push(BarPointerState {
                        position,
                        tempo,
                        pattern,
                    });
                }
            }
        }
        out
    }

    pub fn emission(&self, s: &BarPointerState, x: f64) -> f64 {
        let bins = self.params[0].len();
        let bin = s.position * bins / self.positions[s.tempo];
        log_gauss_mix(x, &self.params[s.pattern][bin])
    }

    /// Successors written out from the model definition.
    pub fn successors(&self, s: &BarPointerState) -> Vec<(BarPointerState, f64)> {
        let n = self.positions[s.tempo];
        if s.position + 1 < n {
            return vec![(
                BarPointerState {
                    position: s.position + 1,
                    ..*s
                },
                0.0,
            )];
        }
        let nt = self.positions.len();
        let mut tempi = vec![(s.tempo, 1.0 - self.p_tempo)];
        for t in [s.tempo.wrapping_sub(1), s.tempo + 1] {
            if t < nt {
                tempi.push((t, self.p_tempo / 2.0));
            } else {
                tempi[0].1 += self.p_tempo / 2.0;
            }
        }
        let r = self.params.len();
        let patterns: Vec<(usize, f64)> = (0..r)
            .map(|q| {
                let p = if r == 1 {
                    1.0
                } else if q == s.pattern {
                    1.0 - self.p_pattern
                } else {
                    self.p_pattern / (r - 1) as f64
                };
                (q, p)
            })
            .collect();
        let mut out = Vec::new();
        for &(t, pt) in &tempi {
            for &(q, pq) in &patterns {
                if pt * pq > 0.0 {
                    out.push((
                        BarPointerState {
                            position: 0,
                            tempo: t,
                            pattern: q,
                        },
                        (pt * pq).ln(),
                    ));
                }
            }
        }
        out
    }

    pub fn best_exhaustive(&self) -> f64 {
        let xs = self.nov.values();
        let states = self.all_states();
        let prior = -(states.len() as f64).ln();
        let mut best = f64::NEG_INFINITY;
        let mut stack: Vec<(BarPointerState, usize, f64)> = states
            .iter()
            .map(|s| (*s, 0, prior + self.emission(s, xs[0])))
            .collect();
        while let Some((s, k, score)) = stack.pop() {
            if k + 1 == xs.len() {
                best = best.max(score);
                continue;
            }
            for (nxt, lp) in self.successors(&s) {
                stack.push((nxt, k + 1, score + lp + self.emission(&nxt, xs[k + 1])));
            }
        }
        best
    }
}
