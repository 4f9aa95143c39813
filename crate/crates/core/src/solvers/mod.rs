pub mod linear;
pub mod lobpcg;
pub mod newton;
pub mod scf;

pub use linear::{solve_omega_plus_k, LinearSolve};
pub use lobpcg::{lobpcg, lobpcg_block, LobpcgOptions, LobpcgOutcome};
pub use newton::{newton_step, newton_step_lifted};
pub use scf::{scf, scf_from, ScfOptions, SolveReport};
