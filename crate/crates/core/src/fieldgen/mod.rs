//! Ground-truth data: an analytic potential flow past a cylinder on a
//! structured grid, the steady scalar transport solve for the tracer `tau`,
//! and frame rotation utilities.

mod case;
mod flow;
mod grid;
pub mod snapshot;
mod transport;

pub use case::{cylinder_case, CaseConfig};
pub use flow::{potential_flow_cylinder, strain_magnitude, FlowField, FlowMeta};
pub use grid::StructuredGrid;
pub use transport::{solve_transport, TransportConfig, TransportSolution};
