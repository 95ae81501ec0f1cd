use std::fmt;
use std::str::FromStr;

use super::PeMatrix;
use crate::error::{Error, Result};

/// Row similarity used by the position reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Similarity {
    /// Cosine of the two rows; 0 when either row has zero norm.
    #[default]
    Cosine,
    Dot,
}

impl fmt::Display for Similarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Similarity::Cosine => "cosine",
            Similarity::Dot => "dot",
        })
    }
}

impl FromStr for Similarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Similarity::Cosine),
            "dot" => Ok(Similarity::Dot),
            _ => Err(Error::config(format!("unknown similarity {s:?} (cosine | dot)"))),
        }
    }
}

/// Shape of the positional-encoding environment. Actions live in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeEnvConfig {
    pub n_positions: usize,
    pub n_dims: usize,
    pub similarity: Similarity,
}

impl Default for PeEnvConfig {
    fn default() -> Self {
        PeEnvConfig { n_positions: 16, n_dims: 8, similarity: Similarity::Cosine }
    }
}

impl PeEnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_positions < 2 {
            return Err(Error::config("the position reward needs at least two positions"));
        }
        if self.n_dims == 0 {
            return Err(Error::config("the position reward needs at least one dimension"));
        }
        Ok(())
    }

    pub fn action_dim(&self) -> usize {
        self.n_positions * self.n_dims
    }
}

fn check(p: &PeMatrix, cfg: &PeEnvConfig) -> Result<()> {
    cfg.validate()?;
    if p.rows() != cfg.n_positions || p.cols() != cfg.n_dims {
        return Err(Error::shape(format!(
            "matrix is {} x {}, environment expects {} x {}",
            p.rows(),
            p.cols(),
            cfg.n_positions,
            cfg.n_dims
        )));
    }
    Ok(())
}

fn unit_rows(p: &PeMatrix, sim: Similarity) -> (Vec<f64>, Vec<f64>) {
    let d = p.cols();
    let mut out = p.values().to_vec();
    let mut norms = vec![1.0; p.rows()];
    if sim == Similarity::Cosine {
        for (r, row) in out.chunks_mut(d).enumerate() {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            norms[r] = n;
            let inv = if n > 0.0 { 1.0 / n } else { 0.0 };
            row.iter_mut().for_each(|v| *v *= inv);
        }
    }
    (out, norms)
}

/// Sum over unordered position pairs `{a, b}`, `a != b`, of `sim(row_a, row_b) / |a - b|`.
///
/// Accumulated one positional distance at a time over pre-normalized rows.
pub fn pe_reward(p: &PeMatrix, cfg: &PeEnvConfig) -> Result<f64> {
    check(p, cfg)?;
    let (n, d) = (p.rows(), p.cols());
    let (u, _) = unit_rows(p, cfg.similarity);
    let mut total = 0.0;
    for dist in 1..n {
        let mut band = 0.0;
        for a in 0..n - dist {
            let (ra, rb) = (&u[a * d..(a + 1) * d], &u[(a + dist) * d..(a + dist + 1) * d]);
            band += ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>();
        }
        total += band / dist as f64;
    }
    Ok(total)
}

/// Literal double loop over every ordered pair, halved; reference for [`pe_reward`].
pub fn pe_reward_bruteforce(p: &PeMatrix, cfg: &PeEnvConfig) -> Result<f64> {
    check(p, cfg)?;
    let n = p.rows();
    let mut total = 0.0;
    for a in 0..n {
        for b in 0..n {
            if a == b {
                continue;
            }
            let (ra, rb) = (p.row(a), p.row(b));
            let dot: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
            let sim = match cfg.similarity {
                Similarity::Dot => dot,
                Similarity::Cosine => {
                    let na = ra.iter().map(|x| x * x).sum::<f64>().sqrt();
                    let nb = rb.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if na == 0.0 || nb == 0.0 {
                        0.0
                    } else {
                        dot / (na * nb)
                    }
                }
            };
            total += sim / a.abs_diff(b) as f64;
        }
    }
    Ok(total / 2.0)
}

/// Gradient of [`pe_reward`] with respect to every matrix entry.
///
/// For cosine: `d cos(a, b) / d a = b_hat / |a| - cos(a, b) a_hat / |a|`;
/// zero-norm rows get a zero gradient.
pub fn pe_reward_gradient(p: &PeMatrix, cfg: &PeEnvConfig) -> Result<Vec<f64>> {
    check(p, cfg)?;
    let (n, d) = (p.rows(), p.cols());
    let mut grad = vec![0.0; n * d];
    match cfg.similarity {
        Similarity::Dot => {
            for a in 0..n {
                for b in 0..n {
                    if a == b {
                        continue;
                    }
                    let w = 1.0 / a.abs_diff(b) as f64;
                    for j in 0..d {
                        grad[a * d + j] += w * p.get(b, j);
                    }
                }
            }
        }
        Similarity::Cosine => {
            let (u, norms) = unit_rows(p, Similarity::Cosine);
            for a in 0..n {
                if norms[a] == 0.0 {
                    continue;
                }
                let ua = &u[a * d..(a + 1) * d];
                for b in 0..n {
                    if a == b || norms[b] == 0.0 {
                        continue;
                    }
                    let w = 1.0 / a.abs_diff(b) as f64;
                    let ub = &u[b * d..(b + 1) * d];
                    let cos: f64 = ua.iter().zip(ub).map(|(x, y)| x * y).sum();
                    for j in 0..d {
                        grad[a * d + j] += w * (ub[j] - cos * ua[j]) / norms[a];
                    }
                }
            }
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::posenc::{sinusoidal_pe, PeSource};
    use crate::rng::Rng;

    fn env(n: usize, d: usize) -> PeEnvConfig {
        PeEnvConfig { n_positions: n, n_dims: d, similarity: Similarity::Cosine }
    }

    fn m(rows: usize, cols: usize, v: Vec<f64>) -> PeMatrix {
        PeMatrix::new(rows, cols, v, PeSource::Learned).unwrap()
    }

    fn random(rows: usize, cols: usize, rng: &mut Rng) -> PeMatrix {
        m(rows, cols, (0..rows * cols).map(|_| rng.uniform(-1.0, 1.0)).collect())
    }

    #[test]
    fn identical_unit_rows() {
        let p = m(3, 2, vec![1., 0., 1., 0., 1., 0.]);
        assert!((pe_reward(&p, &env(3, 2)).unwrap() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_rows() {
        let p = m(3, 3, vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        assert_eq!(pe_reward(&p, &env(3, 3)).unwrap(), 0.0);
    }

    #[test]
    fn two_positions() {
        let same = m(2, 3, vec![1., 0., 0., 1., 0., 0.]);
        assert_eq!(pe_reward_bruteforce(&same, &env(2, 3)).unwrap(), 1.0);
        let anti = m(2, 3, vec![1., 0., 0., -1., 0., 0.]);
        assert_eq!(pe_reward_bruteforce(&anti, &env(2, 3)).unwrap(), -1.0);
    }

    #[test]
    fn zero_rows_score_zero() {
        let p = m(4, 2, vec![0.0; 8]);
        assert_eq!(pe_reward(&p, &env(4, 2)).unwrap(), 0.0);
        assert!(pe_reward_gradient(&p, &env(4, 2)).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn matches_bruteforce_both_similarities() {
        let mut rng = Rng::new(77);
        for sim in [Similarity::Cosine, Similarity::Dot] {
            for _ in 0..20 {
                let p = random(16, 8, &mut rng);
                let cfg = PeEnvConfig { similarity: sim, ..env(16, 8) };
                let a = pe_reward(&p, &cfg).unwrap();
                let b = pe_reward_bruteforce(&p, &cfg).unwrap();
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn adjacency_matters() {
        // Two identical rows adjacent score more than the same rows far apart.
        let near = m(4, 2, vec![1., 0., 1., 0., 0., 1., 0., -1.]);
        let far = m(4, 2, vec![1., 0., 0., 1., 0., -1., 1., 0.]);
        let cfg = env(4, 2);
        assert!(pe_reward(&near, &cfg).unwrap() > pe_reward(&far, &cfg).unwrap());
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = Rng::new(3);
        for sim in [Similarity::Cosine, Similarity::Dot] {
            let cfg = PeEnvConfig { similarity: sim, ..env(5, 3) };
            let p = random(5, 3, &mut rng);
            let g = pe_reward_gradient(&p, &cfg).unwrap();
            let h = 1e-6;
            for i in 0..15 {
                let mut up = p.values().to_vec();
                let mut dn = p.values().to_vec();
                up[i] += h;
                dn[i] -= h;
                let fd = (pe_reward(&m(5, 3, up), &cfg).unwrap() - pe_reward(&m(5, 3, dn), &cfg).unwrap()) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6, "{sim}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn shape_mismatch_and_degenerate_env() {
        let p = sinusoidal_pe(4, 8).unwrap();
        assert!(pe_reward(&p, &env(16, 8)).is_err());
        assert!(env(1, 8).validate().is_err());
    }
}
