//! Memory-decomposed gradients of trajectory losses with respect to the input
//! image: one forward pass stores only the per-stage input latents, then a
//! backward walk recomputes each stage locally and pulls the running cotangent
//! through its vector-Jacobian product. A naive full-tape mode exists as the
//! memory-contrast oracle.

mod pipeline;

pub use pipeline::{
    memory_probe, trajectory_grad, AuxSource, GradMode, GradReport, MemoryProbe, Pipeline,
    PlanKind, Stage, Trace,
};
