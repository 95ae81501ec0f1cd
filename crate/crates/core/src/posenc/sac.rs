//! Soft actor-critic over a single-step environment: every episode emits one
//! whole positional matrix and receives its reward, so critics regress on the
//! reward directly and there is no bootstrapped target.

use std::collections::VecDeque;
use std::f64::consts::PI;

use super::reward::{pe_reward, PeEnvConfig};
use super::sinusoidal::sinusoidal_pe;
use super::{PeMatrix, PeSource};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::trainer::{adam_step, AdamState};

const LOG_STD_MIN: f64 = -5.0;
const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SacConfig {
    pub policy_hidden: usize,
    pub critic_hidden: usize,
    pub policy_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub init_alpha: f64,
    /// Defaults to minus the action dimension.
    pub target_entropy: Option<f64>,
    pub replay_capacity: usize,
    pub batch_size: usize,
    pub steps: usize,
    /// Steps that act uniformly at random before learning starts.
    pub warmup: usize,
}

impl Default for SacConfig {
    fn default() -> Self {
        SacConfig {
            policy_hidden: 64,
            critic_hidden: 128,
            policy_lr: 3e-3,
            critic_lr: 1e-3,
            alpha_lr: 3e-3,
            init_alpha: 0.1,
            target_entropy: None,
            replay_capacity: 20_000,
            batch_size: 64,
            steps: 3000,
            warmup: 200,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        if self.policy_hidden == 0 || self.critic_hidden == 0 {
            return Err(Error::config("SAC hidden sizes must be positive"));
        }
        if self.batch_size == 0 || self.replay_capacity < self.batch_size {
            return Err(Error::config("SAC replay capacity must hold at least one batch"));
        }
        if !(self.init_alpha > 0.0) {
            return Err(Error::config("SAC initial temperature must be positive"));
        }
        for (name, lr) in [("policy", self.policy_lr), ("critic", self.critic_lr), ("alpha", self.alpha_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::config(format!("SAC {name} learning rate must be positive")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SacOutcome {
    /// Highest-reward matrix seen across sampled and mean actions.
    pub best: PeMatrix,
    pub best_reward: f64,
    /// Reward of the action taken at every step.
    pub trace: Vec<f64>,
    /// Temperature after every step.
    pub alphas: Vec<f64>,
}

/// Dense layers with relu between them; weights stored row-major `[in, out]`.
struct Mlp {
    dims: Vec<usize>,
    params: Vec<Vec<f64>>,
    adam: AdamState,
}

impl Mlp {
    fn new(dims: &[usize], rng: &mut Rng) -> Self {
        let mut params = Vec::new();
        for w in dims.windows(2) {
            let bound = (1.0 / w[0] as f64).sqrt();
            params.push((0..w[0] * w[1]).map(|_| rng.uniform(-bound, bound)).collect());
            params.push(vec![0.0; w[1]]);
        }
        let adam = AdamState::new(params.iter().map(Vec::len));
        Mlp { dims: dims.to_vec(), params, adam }
    }

    fn bind(&self, g: &mut Graph, trainable: bool) -> Vec<Var> {
        let mut out = Vec::new();
        for (i, w) in self.dims.windows(2).enumerate() {
            let wt = Tensor::from_vec(&[w[0], w[1]], self.params[2 * i].clone()).expect("mlp weight shape");
            let bt = Tensor::from_vec(&[w[1]], self.params[2 * i + 1].clone()).expect("mlp bias shape");
            if trainable {
                out.push(g.param(wt));
                out.push(g.param(bt));
            } else {
                out.push(g.constant(wt));
                out.push(g.constant(bt));
            }
        }
        out
    }

    fn forward(g: &mut Graph, vars: &[Var], x: Var) -> Result<Var> {
        let layers = vars.len() / 2;
        let mut h = x;
        for i in 0..layers {
            h = g.matmul(h, vars[2 * i])?;
            h = g.add(h, vars[2 * i + 1])?;
            if i + 1 < layers {
                h = g.relu(h);
            }
        }
        Ok(h)
    }

    fn step(&mut self, g: &mut Graph, vars: &[Var], lr: f64) -> Result<()> {
        let grads: Vec<Vec<f64>> = vars
            .iter()
            .zip(&self.params)
            .map(|(&v, p)| g.take_grad(v).unwrap_or_else(|| vec![0.0; p.len()]))
            .collect();
        let grad_refs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
        let mut param_refs: Vec<&mut [f64]> = self.params.iter_mut().map(Vec::as_mut_slice).collect();
        adam_step(&mut param_refs, &grad_refs, &mut self.adam, lr)
    }
}

/// Gaussian policy with a tanh-bounded log std, conditioned on the fixed state.
struct Policy {
    trunk: Mlp,
    mu: Mlp,
    log_std: Mlp,
}

struct PolicyOut {
    mu: Var,
    log_std: Var,
}

impl Policy {
    fn forward(&self, g: &mut Graph, state: Var, trainable: bool) -> Result<(PolicyOut, Vec<Var>)> {
        let tv = self.trunk.bind(g, trainable);
        let mv = self.mu.bind(g, trainable);
        let lv = self.log_std.bind(g, trainable);
        let h = Mlp::forward(g, &tv, state)?;
        let h = g.relu(h);
        let mu = Mlp::forward(g, &mv, h)?;
        let raw = Mlp::forward(g, &lv, h)?;
        let t = g.tanh(raw);
        let t = g.add_scalar(t, 1.0);
        let log_std = g.scale(t, 0.5 * (LOG_STD_MAX - LOG_STD_MIN));
        let log_std = g.add_scalar(log_std, LOG_STD_MIN);
        let mut vars = tv;
        vars.extend(mv);
        vars.extend(lv);
        Ok((PolicyOut { mu, log_std }, vars))
    }

    fn step(&mut self, g: &mut Graph, vars: &[Var], lr: f64) -> Result<()> {
        let (nt, nm) = (self.trunk.params.len(), self.mu.params.len());
        self.trunk.step(g, &vars[..nt], lr)?;
        self.mu.step(g, &vars[nt..nt + nm], lr)?;
        self.log_std.step(g, &vars[nt + nm..], lr)
    }
}

/// Reparameterized tanh-Gaussian samples `[B, A]` and their log densities `[B, 1]`.
fn sample(g: &mut Graph, p: &PolicyOut, eps: &[f64], batch: usize, dim: usize) -> Result<(Var, Var)> {
    let e = g.constant(Tensor::from_vec(&[batch, dim], eps.to_vec())?);
    let std = g.exp(p.log_std);
    let u = g.mul(e, std)?;
    let u = g.add(u, p.mu)?;
    let a = g.tanh(u);
    let base: Vec<f64> = eps
        .chunks(dim)
        .map(|row| row.iter().map(|x| -0.5 * x * x).sum::<f64>() - 0.5 * dim as f64 * (2.0 * PI).ln())
        .collect();
    let base = g.constant(Tensor::from_vec(&[batch, 1], base)?);
    let sum_log_std = g.sum_lastdim(p.log_std);
    let logp = g.sub(base, sum_log_std)?;
    let a2 = g.mul(a, a)?;
    let one_minus = g.scale(a2, -1.0);
    let one_minus = g.add_scalar(one_minus, 1.0 + 1e-6);
    let squash = g.log(one_minus);
    let squash = g.sum_lastdim(squash);
    let logp = g.sub(logp, squash)?;
    Ok((a, logp))
}

fn guard(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training(format!("SAC {name} became non-finite")))
    }
}

/// Learns a positional matrix by soft actor-critic on the position reward.
/// Deterministic given `rng`.
pub fn sac_learn_pe(env: &PeEnvConfig, sac: &SacConfig, rng: &mut Rng) -> Result<SacOutcome> {
    env.validate()?;
    sac.validate()?;
    let (rows, cols) = (env.n_positions, env.n_dims);
    let dim = env.action_dim();
    let state = sinusoidal_pe(rows, cols)?.values().to_vec();
    let target_entropy = sac.target_entropy.unwrap_or(-(dim as f64));

    let mut policy = Policy {
        trunk: Mlp::new(&[dim, sac.policy_hidden], rng),
        mu: Mlp::new(&[sac.policy_hidden, dim], rng),
        log_std: Mlp::new(&[sac.policy_hidden, dim], rng),
    };
    let mut critics = [
        Mlp::new(&[dim, sac.critic_hidden, sac.critic_hidden, 1], rng),
        Mlp::new(&[dim, sac.critic_hidden, sac.critic_hidden, 1], rng),
    ];
    let mut log_alpha = sac.init_alpha.ln();
    let mut alpha_adam = AdamState::new([1]);

    let mut replay: VecDeque<(Vec<f64>, f64)> = VecDeque::with_capacity(sac.replay_capacity);
    let mut best: Option<(f64, Vec<f64>)> = None;
    let mut trace = Vec::with_capacity(sac.steps);
    let mut alphas = Vec::with_capacity(sac.steps);

    let score = |a: &[f64]| -> Result<f64> {
        let p = PeMatrix::new(rows, cols, a.to_vec(), PeSource::Learned)?;
        pe_reward(&p, env)
    };
    let consider = |best: &mut Option<(f64, Vec<f64>)>, a: &[f64], r: f64| {
        if best.as_ref().map_or(true, |(b, _)| r > *b) {
            *best = Some((r, a.to_vec()));
        }
    };

    for step in 0..sac.steps {
        // act
        let action: Vec<f64> = if step < sac.warmup {
            (0..dim).map(|_| rng.uniform(-1.0, 1.0)).collect()
        } else {
            let mut g = Graph::new();
            let s = g.constant(Tensor::from_vec(&[1, dim], state.clone())?);
            let (out, _) = policy.forward(&mut g, s, false)?;
            let mean: Vec<f64> = g.data(out.mu).iter().map(|m| m.tanh()).collect();
            let r = guard("mean action reward", score(&mean)?)?;
            consider(&mut best, &mean, r);
            let eps: Vec<f64> = (0..dim).map(|_| rng.normal()).collect();
            let (a, _) = sample(&mut g, &out, &eps, 1, dim)?;
            g.data(a).iter().map(|x| guard("action", *x)).collect::<Result<_>>()?
        };
        let r = guard("reward", score(&action)?)?;
        consider(&mut best, &action, r);
        trace.push(r);
        if replay.len() == sac.replay_capacity {
            replay.pop_front();
        }
        replay.push_back((action, r));

        if step + 1 >= sac.warmup && replay.len() >= sac.batch_size {
            let b = sac.batch_size;
            let idx: Vec<usize> = (0..b).map(|_| rng.below(replay.len())).collect();
            let acts: Vec<f64> = idx.iter().flat_map(|&i| replay[i].0.iter().copied()).collect();
            let rews: Vec<f64> = idx.iter().map(|&i| replay[i].1).collect();

            // critics regress on the observed reward
            for critic in critics.iter_mut() {
                let mut g = Graph::new();
                let vars = critic.bind(&mut g, true);
                let x = g.constant(Tensor::from_vec(&[b, dim], acts.clone())?);
                let q = Mlp::forward(&mut g, &vars, x)?;
                let y = g.constant(Tensor::from_vec(&[b, 1], rews.clone())?);
                let d = g.sub(q, y)?;
                let d2 = g.mul(d, d)?;
                let loss = g.mean(d2);
                guard("critic loss", g.data(loss)[0])?;
                g.backward(loss)?;
                critic.step(&mut g, &vars, sac.critic_lr)?;
            }

            // policy maximizes min-Q plus entropy
            let alpha = log_alpha.exp();
            let mut g = Graph::new();
            let s = g.constant(Tensor::from_vec(&[1, dim], state.clone())?);
            let (out, pvars) = policy.forward(&mut g, s, true)?;
            let eps: Vec<f64> = (0..b * dim).map(|_| rng.normal()).collect();
            let (a, logp) = sample(&mut g, &out, &eps, b, dim)?;
            let c0 = critics[0].bind(&mut g, false);
            let c1 = critics[1].bind(&mut g, false);
            let q0 = Mlp::forward(&mut g, &c0, a)?;
            let q1 = Mlp::forward(&mut g, &c1, a)?;
            let q = g.minimum(q0, q1)?;
            let ent = g.scale(logp, alpha);
            let obj = g.sub(ent, q)?;
            let loss = g.mean(obj);
            guard("policy loss", g.data(loss)[0])?;
            let mean_logp = g.data(logp).iter().sum::<f64>() / b as f64;
            g.backward(loss)?;
            policy.step(&mut g, &pvars, sac.policy_lr)?;

            // temperature tracks the target entropy
            let grad = -(mean_logp + target_entropy);
            let mut la = [log_alpha];
            adam_step(&mut [&mut la], &[&[grad]], &mut alpha_adam, sac.alpha_lr)?;
            log_alpha = guard("temperature", la[0])?;
        }
        alphas.push(log_alpha.exp());
    }

    let (best_reward, values) = best.ok_or_else(|| Error::config("SAC needs at least one step"))?;
    Ok(SacOutcome {
        best: PeMatrix::new(rows, cols, values, PeSource::Learned)?,
        best_reward,
        trace,
        alphas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SacConfig {
        SacConfig { steps: 300, warmup: 50, batch_size: 32, policy_hidden: 16, critic_hidden: 32, ..SacConfig::default() }
    }

    #[test]
    fn deterministic_given_seed() {
        let env = PeEnvConfig { n_positions: 4, n_dims: 2, ..PeEnvConfig::default() };
        let a = sac_learn_pe(&env, &small(), &mut Rng::new(3)).unwrap();
        let b = sac_learn_pe(&env, &small(), &mut Rng::new(3)).unwrap();
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.best.values(), b.best.values());
    }

    #[test]
    fn actions_bounded_and_temperature_positive() {
        let env = PeEnvConfig { n_positions: 4, n_dims: 2, ..PeEnvConfig::default() };
        let out = sac_learn_pe(&env, &small(), &mut Rng::new(9)).unwrap();
        assert!(out.best.values().iter().all(|v| (-1.0..=1.0).contains(v)));
        assert!(out.alphas.iter().all(|&a| a > 0.0));
        assert_eq!(out.trace.len(), 300);
        assert_eq!(pe_reward(&out.best, &env).unwrap(), out.best_reward);
    }

    #[test]
    fn learning_beats_warmup() {
        let env = PeEnvConfig { n_positions: 4, n_dims: 2, ..PeEnvConfig::default() };
        let out = sac_learn_pe(&env, &small(), &mut Rng::new(4)).unwrap();
        let warm = out.trace[..50].iter().sum::<f64>() / 50.0;
        let tail = out.trace[250..].iter().sum::<f64>() / 50.0;
        assert!(tail > warm, "tail {tail} <= warmup {warm}");
    }

    #[test]
    fn rejects_bad_config() {
        let env = PeEnvConfig::default();
        let bad = SacConfig { init_alpha: 0.0, ..SacConfig::default() };
        assert!(sac_learn_pe(&env, &bad, &mut Rng::new(1)).is_err());
    }
}
