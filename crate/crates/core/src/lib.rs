pub mod analysis;
pub mod asm;
pub mod bitblast;
pub mod config;
pub mod corpus;
pub mod context;
pub mod exec;
pub mod explorer;
pub mod expr;
pub mod firmware;
pub mod fuzz;
pub mod invalidity;
pub mod irq;
pub mod isa;
pub mod kb;
pub mod memory;
pub mod project;
pub mod sat;
pub mod solver;
pub mod state;
