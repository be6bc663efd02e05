mod block;
mod dense;
pub mod dantzig;
pub mod group_lasso;
pub mod lasso;

pub use dantzig::{
    dantzig_objective, dantzig_violation, group_dantzig, DantzigMethod, DantzigOptions, DantzigProblem,
    DantzigSolution, WarmStart,
};
pub use group_lasso::{block_soft_threshold, group_lasso_quad, GroupLassoFit, GroupLassoProblem, GroupLassoSpec};
pub use lasso::{lasso_fit, lasso_kkt_violation, lasso_objective, LassoSpec};
