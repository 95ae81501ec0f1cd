use super::reward::{pe_reward_gradient, PeEnvConfig};
use super::{PeMatrix, PeSource};
use crate::error::Result;
use crate::rng::Rng;

/// Projected gradient ascent on the position reward from a uniform `[-1, 1)` start.
pub fn direct_ascent_pe(env: &PeEnvConfig, steps: usize, lr: f64, rng: &mut Rng) -> Result<PeMatrix> {
    env.validate()?;
    let init = (0..env.action_dim()).map(|_| rng.uniform(-1.0, 1.0)).collect();
    let init = PeMatrix::new(env.n_positions, env.n_dims, init, PeSource::Learned)?;
    direct_ascent_from(env, init, steps, lr)
}

/// Ascent from a given matrix; entries are clamped to `[-1, 1]` after every step.
pub fn direct_ascent_from(env: &PeEnvConfig, init: PeMatrix, steps: usize, lr: f64) -> Result<PeMatrix> {
    let (rows, cols) = (init.rows(), init.cols());
    let mut p = PeMatrix::new(rows, cols, init.values().to_vec(), PeSource::Learned)?;
    for _ in 0..steps {
        let g = pe_reward_gradient(&p, env)?;
        let next = p
            .values()
            .iter()
            .zip(&g)
            .map(|(v, gv)| (v + lr * gv).clamp(-1.0, 1.0))
            .collect();
        p = PeMatrix::new(rows, cols, next, PeSource::Learned)?;
    }
    Ok(p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::{pe_reward, Similarity};

    #[test]
    fn two_by_two_reaches_optimum() {
        let env = PeEnvConfig { n_positions: 2, n_dims: 2, similarity: Similarity::Cosine };
        let p = direct_ascent_pe(&env, 500, 0.05, &mut Rng::new(1)).unwrap();
        assert!((pe_reward(&p, &env).unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn zero_start_without_steps_scores_zero() {
        let env = PeEnvConfig::default();
        let zero = PeMatrix::new(16, 8, vec![0.0; 128], PeSource::Learned).unwrap();
        let p = direct_ascent_from(&env, zero, 0, 0.1).unwrap();
        assert_eq!(pe_reward(&p, &env).unwrap(), 0.0);
    }

    #[test]
    fn reward_does_not_decrease() {
        let env = PeEnvConfig::default();
        let mut rng = Rng::new(5);
        let mut p = direct_ascent_pe(&env, 0, 0.02, &mut rng).unwrap();
        let mut last = pe_reward(&p, &env).unwrap();
        for _ in 0..50 {
            p = direct_ascent_from(&env, p, 5, 0.02).unwrap();
            let r = pe_reward(&p, &env).unwrap();
            assert!(r >= last - 1e-9, "{r} < {last}");
            last = r;
        }
        assert!(p.values().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
