pub mod cli;
pub mod dataset;
pub mod eval;
pub mod features;
pub mod imaging;
pub mod linalg;
pub mod modelfile;
pub mod pipeline;
pub mod reduce;
pub mod selection;
pub mod stats;
pub mod svm;
pub mod textfmt;
