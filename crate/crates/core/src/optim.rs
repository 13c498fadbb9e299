//! Adam and block-coordinate alternating minimization.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bias-corrected Adam state for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.m
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam state {} vs params {} / grad {}",
                self.m.len(),
                params.len(),
                grad.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for ((p, &g), (m, v)) in params
            .iter_mut()
            .zip(grad)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Learning rate halved (by `factor`) every `1 / decays` of the budget.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub factor: f64,
    /// Number of equal segments the budget is split into.
    pub segments: usize,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            initial: 1e-3,
            factor: 0.5,
            segments: 4,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, iteration: usize, budget: usize) -> f64 {
        if budget == 0 || self.segments <= 1 {
            return self.initial;
        }
        let seg_len = budget.div_ceil(self.segments).max(1);
        let k = (iteration / seg_len).min(self.segments - 1);
        self.initial * self.factor.powi(k as i32)
    }
}

/// A pair of objectives, each minimized over its own parameter block.
pub trait BlockObjective {
    /// Loss of block `block` and its gradient with respect to that block,
    /// holding the other block fixed.
    fn eval_block(
        &mut self,
        block: usize,
        blocks: &[Vec<f64>; 2],
        iteration: usize,
    ) -> Result<(f64, Vec<f64>)>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlternatingSchedule {
    /// Adam steps per block before switching.
    pub inner_steps: usize,
    /// Total steps per block.
    pub iterations: usize,
    pub lr: LrSchedule,
}

#[derive(Debug, Clone, Default)]
pub struct AlternatingHistory {
    pub losses: [Vec<f64>; 2],
}

/// Alternate `inner_steps` Adam steps on block 0 against objective 0 with
/// block 1 frozen, then the same for block 1, until each block has taken
/// `iterations` steps.
pub fn alternating_minimize<O: BlockObjective>(
    objective: &mut O,
    blocks: &mut [Vec<f64>; 2],
    schedule: &AlternatingSchedule,
) -> Result<AlternatingHistory> {
    let mut states = [
        AdamState::new(blocks[0].len(), schedule.lr.initial),
        AdamState::new(blocks[1].len(), schedule.lr.initial),
    ];
    let mut history = AlternatingHistory::default();
    let inner = schedule.inner_steps.max(1);
    let mut done = [0usize; 2];
    while done[0] < schedule.iterations || done[1] < schedule.iterations {
        for b in 0..2 {
            for _ in 0..inner {
                if done[b] >= schedule.iterations {
                    break;
                }
                let it = done[b];
                let (loss, grad) = objective.eval_block(b, blocks, it)?;
                if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                    return Err(Error::NonFiniteLoss {
                        iteration: it,
                        value: loss,
                    });
                }
                history.losses[b].push(loss);
                states[b].lr = schedule.lr.at(it, schedule.iterations);
                states[b].step(&mut blocks[b], &grad)?;
                done[b] += 1;
            }
        }
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut st = AdamState::new(3, 1e-3);
        let mut p = vec![1.0, -2.0, 3.0];
        st.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 3.0]);
        assert_eq!(st.step_count(), 1);
    }

    #[test]
    fn first_step_size() {
        let mut st = AdamState::new(1, 1e-3);
        let mut p = vec![0.0];
        st.step(&mut p, &[1.0]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-18);
        assert!((p[0] + 9.99999e-4).abs() < 1e-9);
    }

    #[test]
    fn shape_mismatch() {
        let mut st = AdamState::new(2, 1e-3);
        assert!(st.step(&mut [0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut st = AdamState::new(4, 1e-2);
            let mut p = vec![0.5, -0.1, 2.0, 0.0];
            for k in 0..100 {
                let g: Vec<f64> = p.iter().map(|x| 2.0 * x + (k as f64).sin()).collect();
                st.step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn converges_on_convex_quadratic() {
        // f(x) = sum c_i (x_i - a_i)^2
        let a: Vec<f64> = (0..10).map(|i| i as f64 * 0.3 - 1.0).collect();
        let c: Vec<f64> = (0..10).map(|i| 1.0 + i as f64).collect();
        let f = |x: &[f64]| -> f64 {
            x.iter()
                .zip(&a)
                .zip(&c)
                .map(|((x, a), c)| c * (x - a).powi(2))
                .sum()
        };
        let mut x = vec![0.0; 10];
        let mut st = AdamState::new(10, 1e-2);
        let mut best = f64::INFINITY;
        for _ in 0..5000 {
            let g: Vec<f64> = x
                .iter()
                .zip(&a)
                .zip(&c)
                .map(|((x, a), c)| 2.0 * c * (x - a))
                .collect();
            st.step(&mut x, &g).unwrap();
            best = best.min(f(&x));
        }
        assert!(best <= 1e-6, "{best}");
    }

    #[test]
    fn schedule_halves_each_quarter() {
        let s = LrSchedule::default();
        assert_eq!(s.at(0, 20_000), 1e-3);
        assert_eq!(s.at(4_999, 20_000), 1e-3);
        assert_eq!(s.at(5_000, 20_000), 5e-4);
        assert_eq!(s.at(19_999, 20_000), 1.25e-4);
    }

    struct Quadratics;

    impl BlockObjective for Quadratics {
        fn eval_block(
            &mut self,
            block: usize,
            blocks: &[Vec<f64>; 2],
            _iteration: usize,
        ) -> Result<(f64, Vec<f64>)> {
            let target = if block == 0 { [1.0, -2.0] } else { [0.5, 3.0] };
            let x = &blocks[block];
            let loss = (x[0] - target[0]).powi(2) + 2.0 * (x[1] - target[1]).powi(2);
            Ok((
                loss,
                vec![2.0 * (x[0] - target[0]), 4.0 * (x[1] - target[1])],
            ))
        }
    }

    #[test]
    fn alternating_decoupled_quadratics() {
        let mut blocks = [vec![0.0, 0.0], vec![0.0, 0.0]];
        let sched = AlternatingSchedule {
            inner_steps: 10,
            iterations: 6000,
            lr: LrSchedule {
                initial: 1e-2,
                factor: 0.5,
                segments: 4,
            },
        };
        let hist = alternating_minimize(&mut Quadratics, &mut blocks, &sched).unwrap();
        assert!((blocks[0][0] - 1.0).abs() < 1e-3 && (blocks[0][1] + 2.0).abs() < 1e-3);
        assert!((blocks[1][0] - 0.5).abs() < 1e-3 && (blocks[1][1] - 3.0).abs() < 1e-3);
        assert_eq!(hist.losses[0].len(), 6000);
    }

    #[test]
    fn alternating_zero_budget() {
        let mut blocks = [vec![0.3], vec![0.7]];
        struct Never;
        impl BlockObjective for Never {
            fn eval_block(&mut self, _: usize, _: &[Vec<f64>; 2], _: usize) -> Result<(f64, Vec<f64>)> {
                panic!("should not be called");
            }
        }
        let sched = AlternatingSchedule {
            inner_steps: 5,
            iterations: 0,
            lr: LrSchedule::default(),
        };
        alternating_minimize(&mut Never, &mut blocks, &sched).unwrap();
        assert_eq!(blocks, [vec![0.3], vec![0.7]]);
    }

    #[test]
    fn alternating_aborts_on_nan() {
        struct Bad;
        impl BlockObjective for Bad {
            fn eval_block(&mut self, _: usize, _: &[Vec<f64>; 2], _: usize) -> Result<(f64, Vec<f64>)> {
                Ok((f64::NAN, vec![0.0]))
            }
        }
        let mut blocks = [vec![0.0], vec![0.0]];
        let sched = AlternatingSchedule {
            inner_steps: 1,
            iterations: 3,
            lr: LrSchedule::default(),
        };
        assert!(matches!(
            alternating_minimize(&mut Bad, &mut blocks, &sched),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
