//! Counter-based Brownian increments.
//!
//! Every draw is addressed by (seed, particle, base step, coordinate): a ChaCha8
//! stream per particle, seeked to a fixed word offset, fed through Box-Muller.
//! Base increments are rounded to a 2^-40 lattice so that sums over any
//! union of base steps are exact and do not depend on how they are grouped.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{MfcError, Result};
use crate::model::Partition;

const LATTICE: f64 = 1099511627776.0; // 2^40
const WORDS_PER_NORMAL: u128 = 4;
const INIT_KEY_SALT: u64 = 0x6a09_e667_f3bc_c909;

fn quantize(v: f64) -> f64 {
    (v * LATTICE).round() / LATTICE
}

fn unit_open(bits: u64) -> f64 {
    ((bits >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

fn box_muller(rng: &mut ChaCha8Rng) -> f64 {
    let u1 = unit_open(rng.next_u64());
    let u2 = unit_open(rng.next_u64());
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Source of Brownian increments on a uniform base grid of `[0, horizon]`.
#[derive(Clone, Debug)]
pub struct BrownianStore {
    seed: u64,
    horizon: f64,
    base_steps: usize,
    d: usize,
    proto: ChaCha8Rng,
    init_proto: ChaCha8Rng,
}

impl BrownianStore {
    pub fn new(seed: u64, horizon: f64, base_steps: usize, d: usize) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) || base_steps == 0 || d == 0 {
            return Err(MfcError::config(
                "Brownian store needs a positive horizon, base steps and noise dimension",
            ));
        }
        Ok(Self {
            seed,
            horizon,
            base_steps,
            d,
            proto: ChaCha8Rng::seed_from_u64(seed),
            init_proto: ChaCha8Rng::seed_from_u64(seed ^ INIT_KEY_SALT),
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }
    pub fn dim(&self) -> usize {
        self.d
    }
    pub fn base_steps(&self) -> usize {
        self.base_steps
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Quantized standard normals used for initial draws, keyed by (particle, coordinate).
    pub fn initial_normals(&self, particle: usize, out: &mut [f64]) {
        let mut rng = self.init_proto.clone();
        rng.set_stream(particle as u64);
        rng.set_word_pos(0);
        for v in out.iter_mut() {
            *v = quantize(box_muller(&mut rng));
        }
    }

    /// Adds the increment over base steps `[from, to)` into `out` (length d).
    pub fn add_increment(&self, particle: usize, from: usize, to: usize, out: &mut [f64]) {
        let scale = (self.horizon / self.base_steps as f64).sqrt();
        let mut rng = self.proto.clone();
        rng.set_stream(particle as u64);
        rng.set_word_pos(from as u128 * self.d as u128 * WORDS_PER_NORMAL);
        for _ in from..to {
            for v in out.iter_mut() {
                *v += quantize(scale * box_muller(&mut rng));
            }
        }
    }

    /// Increments over consecutive knot intervals, `out[i*d..(i+1)*d]` for
    /// `[knots[i], knots[i+1])`, reading the particle's stream once.
    pub fn fill_increments(&self, particle: usize, knots: &[usize], out: &mut [f64]) {
        let d = self.d;
        let scale = (self.horizon / self.base_steps as f64).sqrt();
        let mut rng = self.proto.clone();
        rng.set_stream(particle as u64);
        rng.set_word_pos(knots[0] as u128 * d as u128 * WORDS_PER_NORMAL);
        out.fill(0.0);
        for (i, w) in knots.windows(2).enumerate() {
            let row = &mut out[i * d..(i + 1) * d];
            for _ in w[0]..w[1] {
                for v in row.iter_mut() {
                    *v += quantize(scale * box_muller(&mut rng));
                }
            }
        }
    }

    /// Base-grid index of each knot of `partition`.
    pub fn knot_indices(&self, partition: &Partition) -> Result<Vec<usize>> {
        if (partition.horizon() - self.horizon).abs() > 1e-12 * self.horizon {
            return Err(MfcError::config("partition horizon differs from the Brownian store horizon"));
        }
        partition
            .times()
            .iter()
            .map(|&t| {
                let x = t / self.horizon * self.base_steps as f64;
                let idx = x.round();
                if (x - idx).abs() > 1e-9 {
                    Err(MfcError::config(format!(
                        "knot {t} is not on the {}-step base grid of the Brownian store",
                        self.base_steps
                    )))
                } else {
                    Ok(idx as usize)
                }
            })
            .collect()
    }
}

/// Increments of `m` particles over every interval of a partition, stored
/// step-major: `data[(step * m + particle) * d + coord]`.
#[derive(Clone, Debug)]
pub struct NoiseBlock {
    m: usize,
    steps: usize,
    d: usize,
    data: Vec<f64>,
}

impl NoiseBlock {
    pub fn generate(store: &BrownianStore, partition: &Partition, m: usize) -> Result<Self> {
        let knots = store.knot_indices(partition)?;
        let steps = partition.intervals();
        let d = store.dim();
        // Generate per particle (sequential word positions), then scatter.
        let per_particle: Vec<Vec<f64>> = (0..m)
            .into_par_iter()
            .map(|p| {
                let mut row = vec![0.0; steps * d];
                store.fill_increments(p, &knots, &mut row);
                row
            })
            .collect();
        let mut data = vec![0.0; m * steps * d];
        for (p, row) in per_particle.iter().enumerate() {
            for i in 0..steps {
                let dst = (i * m + p) * d;
                data[dst..dst + d].copy_from_slice(&row[i * d..(i + 1) * d]);
            }
        }
        Ok(Self { m, steps, d, data })
    }

    /// Builds a block directly from step-major data.
    pub fn from_raw(m: usize, steps: usize, d: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != m * steps * d {
            return Err(MfcError::config("noise block data has the wrong length"));
        }
        Ok(Self { m, steps, d, data })
    }

    pub fn particles(&self) -> usize {
        self.m
    }
    pub fn steps(&self) -> usize {
        self.steps
    }
    pub fn dim(&self) -> usize {
        self.d
    }

    /// All particles' increments over interval `i`, row-major `m × d`.
    pub fn step(&self, i: usize) -> &[f64] {
        let w = self.m * self.d;
        &self.data[i * w..(i + 1) * w]
    }
}

/// Increments either held in memory or regenerated on demand.
#[derive(Clone, Debug)]
pub enum Increments {
    Block(NoiseBlock),
    Stream {
        store: BrownianStore,
        knots: Vec<usize>,
        m: usize,
    },
}

impl Increments {
    pub fn block(store: &BrownianStore, partition: &Partition, m: usize) -> Result<Self> {
        Ok(Increments::Block(NoiseBlock::generate(store, partition, m)?))
    }

    pub fn stream(store: &BrownianStore, partition: &Partition, m: usize) -> Result<Self> {
        Ok(Increments::Stream {
            store: store.clone(),
            knots: store.knot_indices(partition)?,
            m,
        })
    }

    pub fn particles(&self) -> usize {
        match self {
            Increments::Block(b) => b.particles(),
            Increments::Stream { m, .. } => *m,
        }
    }

    pub fn steps(&self) -> usize {
        match self {
            Increments::Block(b) => b.steps(),
            Increments::Stream { knots, .. } => knots.len() - 1,
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Increments::Block(b) => b.dim(),
            Increments::Stream { store, .. } => store.dim(),
        }
    }

    /// Increments over interval `i`; `buf` is scratch space for streamed sources.
    pub fn step<'a>(&'a self, i: usize, buf: &'a mut Vec<f64>) -> &'a [f64] {
        match self {
            Increments::Block(b) => b.step(i),
            Increments::Stream { store, knots, m } => {
                let d = store.dim();
                buf.clear();
                buf.resize(m * d, 0.0);
                buf.par_chunks_mut(d).enumerate().with_min_len(256).for_each(|(p, out)| {
                    store.add_increment(p, knots[i], knots[i + 1], out);
                });
                buf
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_key_same_bits() {
        let s = BrownianStore::new(7, 1.0, 8, 2).unwrap();
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        s.add_increment(3, 2, 5, &mut a);
        s.add_increment(3, 2, 5, &mut b);
        assert_eq!(a, b);
        let mut c = [0.0; 2];
        s.add_increment(4, 2, 5, &mut c);
        assert_ne!(a, c);
    }

    #[test]
    fn refinement_sums_are_exact() {
        let s = BrownianStore::new(11, 1.0, 16, 1).unwrap();
        let coarse = NoiseBlock::generate(&s, &Partition::uniform(1.0, 2).unwrap(), 5).unwrap();
        let fine = NoiseBlock::generate(&s, &Partition::uniform(1.0, 8).unwrap(), 5).unwrap();
        for p in 0..5 {
            for i in 0..2 {
                let sum: f64 = (0..4).map(|j| fine.step(4 * i + j)[p]).sum();
                assert_eq!(sum, coarse.step(i)[p]);
            }
        }
    }

    #[test]
    fn increments_have_the_right_variance() {
        let s = BrownianStore::new(1, 2.0, 4, 1).unwrap();
        let block = NoiseBlock::generate(&s, &Partition::uniform(2.0, 4).unwrap(), 20_000).unwrap();
        let xs = block.step(1);
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / xs.len() as f64;
        assert!(mean.abs() < 0.03, "mean {mean}");
        assert!((var - 0.5).abs() < 0.03, "var {var}");
    }

    #[test]
    fn stream_matches_block() {
        let s = BrownianStore::new(5, 1.0, 8, 2).unwrap();
        let part = Partition::uniform(1.0, 4).unwrap();
        let block = Increments::block(&s, &part, 7).unwrap();
        let stream = Increments::stream(&s, &part, 7).unwrap();
        let (mut b1, mut b2) = (Vec::new(), Vec::new());
        for i in 0..4 {
            assert_eq!(block.step(i, &mut b1), stream.step(i, &mut b2));
        }
    }

    #[test]
    fn off_grid_knots_are_rejected() {
        let s = BrownianStore::new(5, 1.0, 4, 1).unwrap();
        let part = Partition::uniform(1.0, 3).unwrap();
        assert!(s.knot_indices(&part).is_err());
    }
}
