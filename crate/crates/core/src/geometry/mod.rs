//! Order-violation energies and their gradients.
//!
//! All three models share one interface: `E(x, y) >= 0`, and `E(x, y) = 0`
//! exactly when `y` lies in the region owned by `x`:
//!
//! - order-embeddings: the translated orthant `{y : y_i >= x_i}`,
//!   `E = ‖max(0, x − y)‖`;
//! - Euclidean cones: aperture `ψ(x) = arcsin(K / ‖x‖)` around the ray
//!   through `x`;
//! - hyperbolic cones: the Poincaré-ball analogue with
//!   `ψ(x) = arcsin(K (1 − ‖x‖²) / ‖x‖)`.
//!
//! Cone energies need `‖x‖` bounded below (the arcsin argument must not
//! exceed one) and, for hyperbolic cones, both points inside the ball. The
//! strict entry points ([`EnergyModel::energy`],
//! [`EnergyModel::energy_grad`]) reject inputs outside that domain;
//! [`EnergyModel::project_parent`] / [`EnergyModel::project_child`] rescale
//! points radially onto it.

pub mod poincare;

pub use poincare::{
    exp0, exp0_vjp, exp_map, lambda, log0, poincare_distance, poincare_norm, project_to_ball, riemannian_rescale,
};

use crate::error::{Error, Result};
use crate::trainer::EmbeddingTable;

/// Clamp margin for arccos/arcsin arguments.
pub const CLAMP_DELTA: f64 = 1e-9;
/// Distance from the `max(0, ·)` kink below which the subgradient 0 is used.
pub const KINK_DELTA: f64 = 1e-9;
/// Default ball margin: points are kept at norm `<= 1 - 1e-5`.
pub const DEFAULT_EPS_BALL: f64 = 1e-5;
/// Default cone aperture constant.
pub const DEFAULT_K: f64 = 0.1;

const DOMAIN_TOL: f64 = 1e-12;

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    OrderEmbedding,
    EuclideanCone,
    HyperbolicCone,
}

impl ModelKind {
    pub fn short_name(self) -> &'static str {
        match self {
            ModelKind::OrderEmbedding => "oe",
            ModelKind::EuclideanCone => "ec",
            ModelKind::HyperbolicCone => "hc",
        }
    }

    pub fn is_cone(self) -> bool {
        !matches!(self, ModelKind::OrderEmbedding)
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oe" | "order_embedding" => Ok(ModelKind::OrderEmbedding),
            "ec" | "euclidean_cone" => Ok(ModelKind::EuclideanCone),
            "hc" | "hyperbolic_cone" => Ok(ModelKind::HyperbolicCone),
            other => Err(Error::arg(format!("unknown model {other:?}; expected oe, ec or hc"))),
        }
    }
}

/// How the Euclidean-cone violation is measured. Both have the same zero set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeFormulation {
    /// `max(0, Ξ − ψ)`
    Angle,
    /// `max(0, cos ψ − cos Ξ)`
    #[default]
    Cosine,
}

impl std::str::FromStr for ConeFormulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "angle" => Ok(ConeFormulation::Angle),
            "cosine" => Ok(ConeFormulation::Cosine),
            other => Err(Error::arg(format!("unknown cone formulation {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EnergyModel {
    pub kind: ModelKind,
    /// Aperture constant `K` (cone kinds).
    pub k: f64,
    /// Euclidean-cone formulation; ignored by the other kinds.
    pub formulation: ConeFormulation,
    pub eps_ball: f64,
    /// Minimum apex norm for cone kinds.
    pub eps_norm: f64,
}

/// Result of one energy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairEval {
    pub energy: f64,
    /// The point lies within [`KINK_DELTA`] of the hinge; gradient set to 0.
    pub kink: bool,
    /// An arccos/arcsin argument was clamped.
    pub clamped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyGrad {
    pub eval: PairEval,
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Minimum norm `ε` with `K (1 − ε²) / ε = 1`.
pub fn hyperbolic_min_norm(k: f64) -> f64 {
    (-1.0 + (1.0 + 4.0 * k * k).sqrt()) / (2.0 * k)
}

impl EnergyModel {
    pub fn new(kind: ModelKind, k: f64) -> Result<Self> {
        let eps_norm = match kind {
            ModelKind::OrderEmbedding => 0.0,
            ModelKind::EuclideanCone => k,
            ModelKind::HyperbolicCone => hyperbolic_min_norm(k),
        };
        let m = EnergyModel { kind, k, formulation: ConeFormulation::default(), eps_ball: DEFAULT_EPS_BALL, eps_norm };
        m.validate()?;
        Ok(m)
    }

    pub fn order_embedding() -> Self {
        EnergyModel::new(ModelKind::OrderEmbedding, DEFAULT_K).expect("valid defaults")
    }

    pub fn euclidean_cone(k: f64) -> Result<Self> {
        EnergyModel::new(ModelKind::EuclideanCone, k)
    }

    pub fn hyperbolic_cone(k: f64) -> Result<Self> {
        EnergyModel::new(ModelKind::HyperbolicCone, k)
    }

    pub fn with_formulation(mut self, f: ConeFormulation) -> Self {
        self.formulation = f;
        self
    }

    pub fn with_eps_ball(mut self, eps: f64) -> Result<Self> {
        self.eps_ball = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind.is_cone() && !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::arg(format!("cone models need K > 0 (got {})", self.k)));
        }
        if !(self.eps_ball > 0.0 && self.eps_ball < 1.0) {
            return Err(Error::arg(format!("eps_ball must be in (0, 1) (got {})", self.eps_ball)));
        }
        if self.kind == ModelKind::HyperbolicCone && self.eps_norm >= 1.0 - self.eps_ball {
            return Err(Error::arg(format!("K = {} leaves no valid apex norms inside the ball", self.k)));
        }
        Ok(())
    }

    /// True for models whose embeddings live in the Poincaré ball.
    pub fn is_ball(&self) -> bool {
        self.kind == ModelKind::HyperbolicCone
    }

    pub fn max_norm(&self) -> f64 {
        1.0 - self.eps_ball
    }

    /// Radially moves a cone apex into the valid domain; the origin goes to
    /// `eps_norm` on the first axis. Returns whether it moved.
    pub fn project_parent(&self, x: &mut [f64]) -> Result<bool> {
        let mut moved = self.project_child(x);
        if self.kind.is_cone() {
            let n = norm(x);
            if n == 0.0 {
                x[0] = self.eps_norm;
                return Ok(true);
            }
            if n < self.eps_norm {
                let s = self.eps_norm / n;
                x.iter_mut().for_each(|v| *v *= s);
                moved = true;
            }
        }
        Ok(moved)
    }

    /// Keeps a point inside the ball for hyperbolic cones; identity otherwise.
    pub fn project_child(&self, y: &mut [f64]) -> bool {
        if self.is_ball() {
            project_to_ball(y, self.max_norm())
        } else {
            false
        }
    }

    fn check_domain(&self, x: &[f64], y: &[f64]) -> Result<()> {
        if x.len() != y.len() {
            return Err(Error::arg(format!("dimension mismatch: {} vs {}", x.len(), y.len())));
        }
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("energy input has non-finite components".into()));
        }
        if !self.kind.is_cone() {
            return Ok(());
        }
        let nx = norm(x);
        if nx < self.eps_norm * (1.0 - DOMAIN_TOL) {
            return Err(Error::domain(format!("apex norm {nx} below the cone domain bound {}", self.eps_norm)));
        }
        if self.is_ball() {
            let limit = self.max_norm() + DOMAIN_TOL;
            let ny = norm(y);
            if nx > limit || ny > limit {
                return Err(Error::domain(format!("point outside the ball margin (|x|={nx}, |y|={ny})")));
            }
        }
        Ok(())
    }

    /// Cone aperture `ψ(x)`.
    pub fn psi(&self, x: &[f64]) -> Result<f64> {
        let (s, _, _) = self.aperture_arg(x)?;
        Ok(s.asin())
    }

    /// arcsin argument of ψ with `∂s/∂‖x‖`. Within δ of 1 the argument counts
    /// as clamped and its derivative is dropped.
    fn aperture_arg(&self, x: &[f64]) -> Result<(f64, f64, bool)> {
        let nx = norm(x);
        if nx == 0.0 {
            return Err(Error::domain("aperture undefined at the origin"));
        }
        let (s, ds) = match self.kind {
            ModelKind::OrderEmbedding => return Err(Error::arg("order-embeddings have no aperture")),
            ModelKind::EuclideanCone => (self.k / nx, -self.k / (nx * nx)),
            ModelKind::HyperbolicCone => (self.k * (1.0 - nx * nx) / nx, -self.k / (nx * nx) - self.k),
        };
        if s > 1.0 + 1e-9 {
            return Err(Error::domain(format!("aperture argument {s} > 1; project the apex first")));
        }
        if s >= 1.0 - CLAMP_DELTA {
            Ok((s.min(1.0), 0.0, true))
        } else {
            Ok((s, ds, false))
        }
    }

    /// Cosine of the angle `Ξ(x, y)`, clamped to `[−1 + δ, 1 − δ]`, plus
    /// its gradients with respect to `x` and `y` (zero when clamped).
    fn cos_xi(&self, x: &[f64], y: &[f64], want_grad: bool) -> Result<(f64, bool, Vec<f64>, Vec<f64>)> {
        let a = dot(x, x);
        let nx = a.sqrt();
        let diff2: f64 = x.iter().zip(y).map(|(p, q)| (q - p) * (q - p)).sum();
        if nx == 0.0 {
            return Err(Error::domain("Ξ undefined at x = 0"));
        }
        if diff2 == 0.0 {
            return Err(Error::domain("Ξ undefined for x = y"));
        }
        let (c, gx, gy) = match self.kind {
            ModelKind::EuclideanCone => {
                // c = ⟨x, y−x⟩ / (‖x‖ ‖y−x‖)
                let nd = diff2.sqrt();
                let xd: f64 = x.iter().zip(y).map(|(p, q)| p * (q - p)).sum();
                let c = xd / (nx * nd);
                let (mut gx, mut gy) = (Vec::new(), Vec::new());
                if want_grad {
                    let inv = 1.0 / (nx * nd);
                    gx = Vec::with_capacity(x.len());
                    gy = Vec::with_capacity(x.len());
                    for (p, q) in x.iter().zip(y) {
                        let d = q - p;
                        gx.push((d - p) * inv - c * (p / a - d / diff2));
                        gy.push(p * inv - c * d / diff2);
                    }
                }
                (c, gx, gy)
            }
            ModelKind::HyperbolicCone => {
                let b = dot(y, y);
                let p = dot(x, y);
                let s2 = 1.0 + a * b - 2.0 * p;
                let num = p * (1.0 + a) - a * (1.0 + b);
                let den = nx * diff2.sqrt() * s2.sqrt();
                let c = num / den;
                let (mut gx, mut gy) = (Vec::new(), Vec::new());
                if want_grad {
                    gx = Vec::with_capacity(x.len());
                    gy = Vec::with_capacity(x.len());
                    for (xi, yi) in x.iter().zip(y) {
                        let dnum_x = (1.0 + a) * yi + 2.0 * (p - 1.0 - b) * xi;
                        let dnum_y = (1.0 + a) * xi - 2.0 * a * yi;
                        let dlog_x = xi / a + (xi - yi) / diff2 + (b * xi - yi) / s2;
                        let dlog_y = (yi - xi) / diff2 + (a * yi - xi) / s2;
                        gx.push(dnum_x / den - c * dlog_x);
                        gy.push(dnum_y / den - c * dlog_y);
                    }
                }
                (c, gx, gy)
            }
            ModelKind::OrderEmbedding => return Err(Error::arg("order-embeddings have no Ξ")),
        };
        if !c.is_finite() {
            return Err(Error::Numeric(format!("cos Ξ is {c}")));
        }
        let lim = 1.0 - CLAMP_DELTA;
        if c.abs() > lim {
            let n = x.len();
            return Ok((
                c.clamp(-lim, lim),
                true,
                vec![0.0; if want_grad { n } else { 0 }],
                vec![0.0; if want_grad { n } else { 0 }],
            ));
        }
        Ok((c, false, gx, gy))
    }

    /// Angle `Ξ(x, y)` between the cone axis at `x` and `y`.
    pub fn xi(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.cos_xi(x, y, false)?.0.acos())
    }

    /// Order-violation energy. Inputs must already be in the model's domain.
    pub fn energy(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        Ok(self.eval(x, y, None)?.energy)
    }

    /// Energy after projecting `x` (and `y` for the ball) onto the domain.
    pub fn energy_projected(&self, x: &[f64], y: &[f64]) -> Result<f64> {
        let mut xp = x.to_vec();
        let mut yp = y.to_vec();
        self.project_parent(&mut xp)?;
        self.project_child(&mut yp);
        self.energy(&xp, &yp)
    }

    /// Energy and its analytic gradients.
    pub fn energy_grad(&self, x: &[f64], y: &[f64]) -> Result<EnergyGrad> {
        let mut dx = vec![0.0; x.len()];
        let mut dy = vec![0.0; y.len()];
        let eval = self.eval(x, y, Some((1.0, &mut dx, &mut dy)))?;
        Ok(EnergyGrad { eval, dx, dy })
    }

    /// Evaluates the energy and adds `scale · ∂E` into `gx` / `gy`.
    pub fn accumulate_grad(
        &self,
        x: &[f64],
        y: &[f64],
        scale: f64,
        gx: &mut [f64],
        gy: &mut [f64],
    ) -> Result<PairEval> {
        self.eval(x, y, Some((scale, gx, gy)))
    }

    fn eval(&self, x: &[f64], y: &[f64], grad: Option<(f64, &mut [f64], &mut [f64])>) -> Result<PairEval> {
        self.check_domain(x, y)?;
        if self.kind == ModelKind::OrderEmbedding {
            let e2: f64 = x.iter().zip(y).map(|(p, q)| (p - q).max(0.0).powi(2)).sum();
            let e = e2.sqrt();
            if let Some((scale, gx, gy)) = grad {
                if e > 0.0 {
                    for i in 0..x.len() {
                        let r = (x[i] - y[i]).max(0.0) / e * scale;
                        gx[i] += r;
                        gy[i] -= r;
                    }
                }
            }
            return Ok(PairEval { energy: e, ..PairEval::default() });
        }

        let want = grad.is_some();
        let (s, ds_dn, s_clamped) = self.aperture_arg(x)?;
        let (c, c_clamped, dc_x, dc_y) = self.cos_xi(x, y, want)?;
        let clamped = s_clamped || c_clamped;
        let nx = norm(x);
        let use_cosine = self.kind == ModelKind::EuclideanCone && self.formulation == ConeFormulation::Cosine;
        // violation = f(c) − g(s); energy = max(0, violation)
        let cos_psi = (1.0 - s * s).max(0.0).sqrt();
        let (violation, df_dc, dg_ds) = if use_cosine {
            // cos ψ − c, with d(cos ψ)/ds = −s / cos ψ
            let dg = if s_clamped || cos_psi == 0.0 { 0.0 } else { s / cos_psi };
            (cos_psi - c, -1.0, dg)
        } else {
            let xi = c.acos();
            let psi = s.asin();
            let df = if c_clamped { 0.0 } else { -1.0 / (1.0 - c * c).sqrt() };
            let dg = if s_clamped { 0.0 } else { 1.0 / cos_psi };
            (xi - psi, df, dg)
        };
        let energy = violation.max(0.0);
        if !energy.is_finite() {
            return Err(Error::Numeric(format!("cone energy is {energy}")));
        }
        let kink = violation.abs() <= KINK_DELTA;
        if let Some((scale, gx, gy)) = grad {
            if violation > KINK_DELTA {
                let radial = -dg_ds * ds_dn / nx * scale;
                for i in 0..x.len() {
                    gx[i] += df_dc * dc_x[i] * scale + radial * x[i];
                    gy[i] += df_dc * dc_y[i] * scale;
                }
            }
        }
        Ok(PairEval { energy, kink, clamped })
    }
}

/// Rescales every embedding to norm `r · ‖x_max‖` along its own direction,
/// where `x_max` is the embedding of largest norm.
pub fn invert_radial(table: &EmbeddingTable, r: f64) -> Result<EmbeddingTable> {
    let norms: Vec<f64> = (0..table.len()).map(|i| norm(table.row(i))).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::arg(format!("embedding {} has zero norm", table.ids()[i])));
    }
    let max = norms.iter().copied().fold(0.0, f64::max);
    let mut out = table.clone();
    for (i, n) in norms.iter().enumerate() {
        let s = r * max / n;
        out.row_mut(i).iter_mut().for_each(|v| *v *= s);
    }
    Ok(out)
}

/// Places every node of `h` so that all closure edges have zero energy and
/// every other ordered pair has positive energy.
///
/// Each node owns one coordinate. Order-embeddings use the 0/1 indicator of
/// the node's root path. For cones a root sits on its own axis at norm `r0`
/// and a child of `p` at `1.5 p + w e_child`, with `w` chosen so the step
/// leaves `p` at 0.9 of its aperture. Cones are nested, so the other closure
/// edges follow. The placement is checked pair by pair and an error is
/// returned when it is not exact (deep hyperbolic trees run out of room).
pub fn exact_embedding(h: &crate::hierarchy::Hierarchy, m: &EnergyModel) -> Result<EmbeddingTable> {
    const GROWTH: f64 = 1.5;
    const APERTURE_FRACTION: f64 = 0.9;
    let n = h.len();
    let dim = n.max(2);
    let r0 = match m.kind {
        ModelKind::OrderEmbedding => 1.0,
        ModelKind::EuclideanCone => 2.0 * m.k,
        ModelKind::HyperbolicCone => 1.5 * m.eps_norm,
    };
    let mut data = vec![0.0; n * dim];
    for level in h.levels() {
        for &v in level {
            let mut row = vec![0.0; dim];
            match (m.kind.is_cone(), h.parents(v).first()) {
                (false, _) => {
                    for a in h.ancestors(v).into_iter().chain([v]) {
                        row[a] = 1.0;
                    }
                }
                (true, None) => row[v] = r0,
                (true, Some(&p)) => {
                    let parent = &data[p * dim..(p + 1) * dim];
                    let beta = APERTURE_FRACTION * m.psi(parent)?;
                    let w = (GROWTH - 1.0) * norm(parent) * beta.tan();
                    row.iter_mut().zip(parent).for_each(|(r, q)| *r = GROWTH * q);
                    row[v] = w;
                }
            }
            if m.is_ball() && norm(&row) >= m.max_norm() {
                return Err(Error::State(format!("hierarchy is too deep to place {} inside the ball", h.id(v))));
            }
            data[v * dim..(v + 1) * dim].copy_from_slice(&row);
        }
    }
    let space = if m.is_ball() { crate::trainer::Space::Ball } else { crate::trainer::Space::Flat };
    let ids = h.nodes().iter().map(|n| n.id.clone()).collect();
    let table = EmbeddingTable::new(ids, dim, space, data)?;
    let closure = h.transitive_closure();
    for u in 0..n {
        for v in 0..n {
            if u == v {
                continue;
            }
            let e = m.energy(table.row(u), table.row(v))?;
            let positive = closure.contains(&(u, v));
            if positive != (e == 0.0) {
                return Err(Error::State(format!("placement is not exact for ({}, {}): energy {e}", h.id(u), h.id(v))));
            }
        }
    }
    Ok(table)
}
