pub mod allocate;
pub mod blocks;
pub mod cli;
pub mod diffusion;
pub mod graph;
pub mod items;
pub mod oracle;
pub mod prima;
