pub mod data;
pub mod evaluate;
pub mod prepare;
pub mod score;
pub mod train;
