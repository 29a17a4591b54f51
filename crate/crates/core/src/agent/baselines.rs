use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, AmcError, Result};
use crate::memory::draw_proportional;
use crate::rng::StreamRng;
use crate::utility::Experience;

/// How a single FIFO buffer is replayed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FifoSampling {
    Uniform,
    /// `P ∝ max(|δ|, floor)^exponent` with IS weights `(N·P)^(−is_exponent)`.
    Prioritized {
        exponent: f64,
        is_exponent: f64,
        floor: f64,
    },
}

/// Fixed-capacity replay buffer that drops its oldest entry on overflow.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FifoBuffer {
    items: VecDeque<Experience>,
    capacity: usize,
    next_id: u64,
}

impl FifoBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(invalid("capacity", "must be positive"));
        }
        Ok(Self {
            items: VecDeque::with_capacity(capacity),
            capacity,
            next_id: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&Experience> {
        self.items.get(index)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Experience> {
        self.items.iter()
    }

    /// Append; returns the evicted oldest entry when full.
    pub fn push(&mut self, mut exp: Experience) -> Option<Experience> {
        exp.id = self.next_id;
        self.next_id += 1;
        let evicted = if self.items.len() == self.capacity {
            self.items.pop_front()
        } else {
            None
        };
        self.items.push_back(exp);
        evicted
    }

    pub fn set_priority(&mut self, index: usize, td_error: f64) {
        if let Some(e) = self.items.get_mut(index) {
            e.td_error = td_error;
        }
    }

    /// Draw `count` `(index, is_weight)` pairs; weights are max-normalized.
    pub fn sample(&self, count: usize, how: FifoSampling, rng: &mut StreamRng) -> Result<Vec<(usize, f64)>> {
        if self.items.is_empty() {
            return Err(AmcError::EmptyBuffers);
        }
        let n = self.items.len();
        match how {
            FifoSampling::Uniform => Ok(draw_proportional(&vec![1.0; n], count, rng)
                .into_iter()
                .map(|(i, _)| (i, 1.0))
                .collect()),
            FifoSampling::Prioritized {
                exponent,
                is_exponent,
                floor,
            } => {
                let w: Vec<f64> = self.items.iter().map(|e| e.td_error.abs().max(floor).powf(exponent)).collect();
                let draws = draw_proportional(&w, count, rng);
                let raw: Vec<f64> = draws.iter().map(|&(_, p)| (n as f64 * p).powf(-is_exponent)).collect();
                let max = raw.iter().copied().fold(0.0, f64::max);
                Ok(draws.iter().zip(raw).map(|(&(i, _), w)| (i, w / max)).collect())
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::chi_square_p_value;
    use crate::rng::stream;

    fn exp(step: u64) -> Experience {
        Experience::new(vec![0.0], 0, 0, 0.0, vec![0.0], 0, false, step)
    }

    #[test]
    fn full_buffer_drops_oldest() {
        let mut b = FifoBuffer::new(3).unwrap();
        for s in 0..3 {
            assert!(b.push(exp(s)).is_none());
        }
        let gone = b.push(exp(3)).unwrap();
        assert_eq!(gone.insert_step, 0);
        let steps: Vec<u64> = b.iter().map(|e| e.insert_step).collect();
        assert_eq!(steps, vec![1, 2, 3]);
    }

    #[test]
    fn equal_priorities_sample_uniformly() {
        let mut b = FifoBuffer::new(5).unwrap();
        for s in 0..5 {
            b.push(exp(s));
            b.set_priority(s as usize, 0.7);
        }
        let how = FifoSampling::Prioritized {
            exponent: 0.6,
            is_exponent: 0.4,
            floor: 1e-6,
        };
        let mut counts = [0u64; 5];
        let mut rng = stream(2, "s");
        for _ in 0..2_000 {
            for (i, w) in b.sample(50, how, &mut rng).unwrap() {
                counts[i] += 1;
                assert!((w - 1.0).abs() < 1e-12);
            }
        }
        assert!(chi_square_p_value(&counts, &[1.0; 5]).unwrap() > 0.01);
    }
}
