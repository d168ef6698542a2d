pub mod admm;
pub mod bqp;
pub mod bvls;
pub mod certify;
pub mod ddfact;
pub mod dopt;
pub mod error;
pub mod gamma;
pub mod instances;
pub mod linx;
pub mod matcore;
pub mod report;
