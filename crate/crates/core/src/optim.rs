//! Update rules for embedding tables and linear maps.

use crate::error::{Error, Result};
use crate::geometry::{exp_map, riemannian_rescale};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Rsgd,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "rsgd" => Ok(OptimizerKind::Rsgd),
            other => Err(Error::arg(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// How a parameter group is stored relative to the space its embeddings live in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamSpace {
    /// Euclidean parameters used as-is.
    Flat,
    /// Points stored directly in the Poincaré ball.
    BallDirect,
    /// Flat parameters `v` whose embedding is `exp_0(v)`.
    BallTangentAtZero,
}

impl std::str::FromStr for ParamSpace {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "flat" => Ok(ParamSpace::Flat),
            "ball_direct" => Ok(ParamSpace::BallDirect),
            "ball_tangent_at_zero" | "tangent" => Ok(ParamSpace::BallTangentAtZero),
            other => Err(Error::arg(format!("unknown parameter space {other:?}"))),
        }
    }
}

/// Optimizer for one parameter group.
#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub space: ParamSpace,
    pub lr: f64,
    pub eps_ball: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

fn check_shapes(params: &[f64], grads: &[f64]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::arg(format!("parameter/gradient shape mismatch: {} vs {}", params.len(), grads.len())));
    }
    Ok(())
}

/// `u ← u − η g`.
pub fn sgd_step(lr: f64, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_shapes(params, grads)?;
    for (p, g) in params.iter_mut().zip(grads) {
        *p -= lr * g;
    }
    Ok(())
}

/// One Riemannian step in the Poincaré ball: `u ← exp_u(−η (1/λ_u)² g)`.
pub fn rsgd_step(u: &[f64], g: &[f64], lr: f64, eps_ball: f64) -> Result<Vec<f64>> {
    check_shapes(u, g)?;
    let mut step = riemannian_rescale(u, g);
    step.iter_mut().for_each(|s| *s *= -lr);
    let out = exp_map(u, &step, eps_ball)?;
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("RSGD produced a non-finite point from u={u:?}, g={g:?}")));
    }
    Ok(out)
}

impl OptimizerState {
    pub fn new(kind: OptimizerKind, space: ParamSpace, lr: f64, n_params: usize) -> Result<Self> {
        let rsgd = kind == OptimizerKind::Rsgd;
        let direct = space == ParamSpace::BallDirect;
        if rsgd != direct {
            return Err(Error::Config(format!(
                "optimizer {kind:?} cannot update {space:?} parameters; RSGD pairs only with ball_direct"
            )));
        }
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive (got {lr})")));
        }
        let n = if kind == OptimizerKind::Adam { n_params } else { 0 };
        Ok(OptimizerState {
            kind,
            space,
            lr,
            eps_ball: crate::geometry::DEFAULT_EPS_BALL,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        })
    }

    pub fn with_eps_ball(mut self, eps: f64) -> Self {
        self.eps_ball = eps;
        self
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Adam update with bias correction.
    pub fn adam_step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_shapes(params, grads)?;
        if self.m.len() != params.len() {
            return Err(Error::arg(format!(
                "Adam state holds {} moments for {} parameters",
                self.m.len(),
                params.len()
            )));
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - ADAM_BETA1.powi(t);
        let c2 = 1.0 - ADAM_BETA2.powi(t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = ADAM_BETA1 * self.m[i] + (1.0 - ADAM_BETA1) * g;
            self.v[i] = ADAM_BETA2 * self.v[i] + (1.0 - ADAM_BETA2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= self.lr * mh / (vh.sqrt() + ADAM_EPS);
        }
        Ok(())
    }

    /// Applies one update to a row-major table of `dim`-sized vectors.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], dim: usize) -> Result<()> {
        check_shapes(params, grads)?;
        match self.kind {
            OptimizerKind::Sgd => sgd_step(self.lr, params, grads)?,
            OptimizerKind::Adam => self.adam_step(params, grads)?,
            OptimizerKind::Rsgd => {
                if dim == 0 || params.len() % dim != 0 {
                    return Err(Error::arg(format!("{} parameters do not split into rows of {dim}", params.len())));
                }
                self.t += 1;
                for (u, g) in params.chunks_mut(dim).zip(grads.chunks(dim)) {
                    if g.iter().all(|&c| c == 0.0) {
                        continue;
                    }
                    let next = rsgd_step(u, g, self.lr, self.eps_ball)?;
                    u.copy_from_slice(&next);
                }
            }
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Numeric("optimizer step produced non-finite parameters".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp0, norm};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_examples() {
        let mut u = vec![1.0, 1.0];
        sgd_step(1.0, &mut u, &[0.0, 0.0]).unwrap();
        assert_eq!(u, vec![1.0, 1.0]);
        sgd_step(1.0, &mut u, &[1.0, 0.0]).unwrap();
        assert_eq!(u, vec![0.0, 1.0]);
        let (mut a, mut b) = (vec![0.3, -0.2], vec![0.3, -0.2]);
        let g = [0.5, 0.25];
        sgd_step(0.1, &mut a, &g).unwrap();
        sgd_step(0.1, &mut a, &g).unwrap();
        sgd_step(0.2, &mut b, &g).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-15);
        }
        assert!(sgd_step(0.1, &mut a, &[1.0]).is_err());
    }

    #[test]
    fn pairing_rules() {
        use OptimizerKind::*;
        use ParamSpace::*;
        assert!(OptimizerState::new(Rsgd, BallDirect, 1e-3, 4).is_ok());
        assert!(OptimizerState::new(Rsgd, Flat, 1e-3, 4).is_err());
        assert!(OptimizerState::new(Adam, BallDirect, 1e-3, 4).is_err());
        assert!(OptimizerState::new(Sgd, BallTangentAtZero, 1e-3, 4).is_ok());
        assert!(OptimizerState::new(Adam, Flat, 0.0, 4).is_err());
    }

    #[test]
    fn rsgd_examples() {
        let u = [0.3, -0.4];
        assert_eq!(rsgd_step(&u, &[0.0, 0.0], 0.1, 1e-5).unwrap(), u.to_vec());
        // At the origin the first-order move is −η g / 4.
        let g = [1.0, -2.0];
        let eta = 1e-4;
        let out = rsgd_step(&[0.0, 0.0], &g, eta, 1e-5).unwrap();
        for (o, gi) in out.iter().zip(g) {
            assert!((o - (-eta * gi / 4.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn rsgd_keeps_points_in_ball() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..10_000 {
            let d = rng.gen_range(2..6);
            let r = rng.gen_range(0.0..0.99999);
            let mut u: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = norm(&u);
            u.iter_mut().for_each(|c| *c *= r / n);
            let scale = 10f64.powf(rng.gen_range(-3.0..4.0));
            let g: Vec<f64> = (0..d).map(|_| rng.gen_range(-scale..scale)).collect();
            let eta = 10f64.powf(rng.gen_range(-4.0..1.0));
            let out = rsgd_step(&u, &g, eta, 1e-5).unwrap();
            assert!(norm(&out) <= 1.0 - 1e-5 + 1e-15, "{}", norm(&out));
        }
    }

    #[test]
    fn rsgd_decreases_distance_loss() {
        // Minimizing ‖u − a‖² should move u toward a.
        let a = [0.5, 0.2];
        let mut st = OptimizerState::new(OptimizerKind::Rsgd, ParamSpace::BallDirect, 0.5, 0).unwrap();
        let mut u = vec![-0.3, 0.6];
        let dist = |u: &[f64]| ((u[0] - a[0]).powi(2) + (u[1] - a[1]).powi(2)).sqrt();
        let start = dist(&u);
        for _ in 0..200 {
            let g: Vec<f64> = u.iter().zip(a).map(|(p, q)| 2.0 * (p - q)).collect();
            st.step(&mut u, &g, 2).unwrap();
        }
        assert!(dist(&u) < 0.01 * start);
    }

    #[test]
    fn adam_examples() {
        let mut st = OptimizerState::new(OptimizerKind::Adam, ParamSpace::Flat, 0.01, 2).unwrap();
        let mut p = vec![0.5, -0.5];
        st.adam_step(&mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, vec![0.5, -0.5]);
        for g in [1e-4, 1.0, 1e4] {
            let mut st = OptimizerState::new(OptimizerKind::Adam, ParamSpace::Flat, 0.01, 1).unwrap();
            let mut p = vec![0.0];
            st.adam_step(&mut p, &[g]).unwrap();
            assert!((p[0] + 0.01).abs() < 1e-6, "g={g}: {}", p[0]);
        }
        let run = || {
            let mut st = OptimizerState::new(OptimizerKind::Adam, ParamSpace::Flat, 0.01, 3).unwrap();
            let mut p = vec![0.1, 0.2, 0.3];
            for k in 0..10 {
                let g: Vec<f64> = p.iter().map(|x| x * k as f64 - 0.1).collect();
                st.adam_step(&mut p, &g).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut st = OptimizerState::new(OptimizerKind::Adam, ParamSpace::Flat, 0.01, 3).unwrap();
        assert!(st.adam_step(&mut [0.0; 2], &[0.0; 2]).is_err());
    }

    #[test]
    fn quadratic_smoke() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut st = OptimizerState::new(kind, ParamSpace::Flat, 0.1, 3).unwrap();
            let mut u = vec![1.0, -0.5, 0.25];
            for _ in 0..500 {
                let g: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
                st.step(&mut u, &g, 3).unwrap();
            }
            assert!(norm(&u) < 1e-3, "{kind:?}: {}", norm(&u));
        }
    }

    #[test]
    fn tangent_parameters_stay_flat() {
        let mut st = OptimizerState::new(OptimizerKind::Adam, ParamSpace::BallTangentAtZero, 0.5, 2).unwrap();
        let mut v = vec![3.0, 4.0];
        st.step(&mut v, &[-1.0, -1.0], 2).unwrap();
        assert!(norm(&v) > 1.0);
        assert!(norm(&exp0(&v, 1e-5)) < 1.0);
    }
}
