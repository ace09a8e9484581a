use crate::error::{Error, Result};
use crate::geom::{dot, norm, Vec2};

/// Ellipse with half-axes `l1` along `axis` and `l2` across it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionOfInfluence {
    pub l1: f64,
    pub l2: f64,
    pub axis: Vec2,
    pub center: Vec2,
}

impl RegionOfInfluence {
    #[inline]
    pub fn perp(&self) -> Vec2 {
        [-self.axis[1], self.axis[0]]
    }

    /// Squared elliptical distance of an offset from the centre; `<= 1`
    /// means inside. A zero half-axis admits only the zero offset.
    pub fn metric(&self, d: Vec2) -> f64 {
        let a = dot(d, self.axis);
        let b = dot(d, self.perp());
        let term = |x: f64, l: f64| {
            if l > 0.0 {
                (x / l) * (x / l)
            } else if x == 0.0 {
                0.0
            } else {
                f64::INFINITY
            }
        };
        term(a, self.l1) + term(b, self.l2)
    }

    #[inline]
    pub fn contains(&self, d: Vec2) -> bool {
        self.metric(d) <= 1.0
    }
}

/// Half-lengths of the region in which upstream information decays to the
/// relative tolerance `eps`:
///
/// `l1 = |2 nu ln(eps) / (sqrt(|u|^2 + 4 nu zeta) - |u|)|`,
/// `l2 = |sqrt(nu / zeta) ln(eps)|`.
///
/// The major axis follows `u`; for `u = 0` it defaults to the x-axis.
pub fn influence_ellipse(u: Vec2, nu: f64, zeta: f64, eps: f64) -> Result<RegionOfInfluence> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidArgument(format!("tolerance must lie in (0, 1), got {eps}")));
    }
    if !(nu > 0.0 && zeta > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "diffusion and dissipation coefficients must be positive, got nu={nu} zeta={zeta}"
        )));
    }
    let speed = norm(u);
    let ln_eps = eps.ln();
    // sqrt(a^2 + b) - a rewritten as b / (sqrt(a^2 + b) + a) to avoid
    // cancellation at high speed.
    let root = (speed * speed + 4.0 * nu * zeta).sqrt();
    let denom = 4.0 * nu * zeta / (root + speed);
    let l1 = (2.0 * nu * ln_eps / denom).abs();
    let l2 = ((nu / zeta).sqrt() * ln_eps).abs();
    let axis = if speed > 0.0 {
        [u[0] / speed, u[1] / speed]
    } else {
        [1.0, 0.0]
    };
    Ok(RegionOfInfluence {
        l1,
        l2,
        axis,
        center: [0.0, 0.0],
    })
}
