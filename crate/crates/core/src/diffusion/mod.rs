//! Variance-preserving diffusion: schedule, v-parameterization algebra,
//! classifier-free guidance, timestep sampling and ODE solvers.

pub mod analytic;
pub mod guidance;
pub mod sampler;
pub mod schedule;
pub mod timestep;
pub mod vparam;

pub use guidance::{cfg_combine, GuidanceConfig};
pub use sampler::{guided_v, ode_step, sample, sample_from, SamplerConfig, Solver, VelocityModel};
pub use schedule::NoiseSchedule;
pub use timestep::{sample_timestep, TimestepDistribution};
pub use vparam::{diffuse_forward, eps_from_v, score_from_eps, v_target, x0_from_v};
