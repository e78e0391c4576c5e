//! Exact simulation of signal machines and augmented signal machines, with
//! builders for slanted firing squad constructions and checks of their
//! geometric guarantees.

pub mod asm;
pub mod engine;
pub mod exactnum;
pub mod machine;
pub mod parser;
pub mod render;
pub mod analysis;
pub mod sfss_asm;
pub mod sfss_sm;
