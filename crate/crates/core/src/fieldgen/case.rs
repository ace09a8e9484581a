//! Cylinder benchmark cases: domain, flow and solved tracer in one call.

use crate::error::Result;
use crate::fieldgen::{potential_flow_cylinder, solve_transport, FlowField, StructuredGrid, TransportConfig};

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CaseConfig {
    /// `[x0, x1, y0, y1]` in the canonical frame.
    pub domain: [f64; 4],
    /// Cell size.
    pub h: f64,
    pub u_inf: f64,
    pub radius: f64,
    pub transport: TransportConfig,
}

impl Default for CaseConfig {
    fn default() -> Self {
        Self {
            domain: [-3.0, 7.0, -4.0, 4.0],
            h: 0.2,
            u_inf: 1.0,
            radius: 1.0,
            transport: TransportConfig::default(),
        }
    }
}

impl CaseConfig {
    pub fn grid(&self) -> Result<StructuredGrid> {
        let [x0, x1, y0, y1] = self.domain;
        StructuredGrid::covering(x0, x1, y0, y1, self.h)
    }
}

/// Flow at angle `alpha` (radians) with `tau` solved, seen from a frame
/// rotated by `frame_rotation`.
pub fn cylinder_case(case: &CaseConfig, alpha: f64, frame_rotation: f64) -> Result<FlowField> {
    let grid = case.grid()?;
    let mut field = potential_flow_cylinder(&grid, case.u_inf, alpha, case.radius)?;
    let sol = solve_transport(&field, &case.transport)?;
    log::debug!(
        "alpha {:.3} rad: transport converged in {} iterations",
        alpha,
        sol.iterations
    );
    field.tau = sol.tau;
    Ok(if frame_rotation == 0.0 {
        field
    } else {
        field.rotate_frame(frame_rotation)
    })
}
