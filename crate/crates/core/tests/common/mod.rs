pub mod models;
pub mod oracles;
pub mod reference;
