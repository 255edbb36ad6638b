pub mod autodiff;
pub mod dataset;
pub mod evaluator;
pub mod experiment;
pub mod model;
pub mod registry;
pub mod stg;
pub mod supervision;
pub mod tokenizer;
pub mod trainer;
