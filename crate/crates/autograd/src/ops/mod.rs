pub mod conv;
pub mod deform;
pub mod resample;
