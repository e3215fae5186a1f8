//! Evaluation of (possibly noise-injected) specifications over traces.

pub mod eval;
pub mod rng;
pub mod tree;

pub use eval::{evaluate, evaluate_exact, EvalError, EvalOptions, EvaluationModel, Evaluator, NoiseMode, StreamValues};
pub use rng::{laplace_from_uniform, sample_laplace, KeyedRng};
pub use tree::{dyadic_cover, dyadic_prefix, geometric_budget, Release, TreeKind, TreeState};
