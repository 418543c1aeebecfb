pub mod attention;
pub mod conv;
mod elementwise;
pub mod sample;
pub mod shift;
