pub mod geometry;
pub mod image;
mod parallel;
pub mod renderer;
pub mod matching;
pub mod pnp;
pub mod localizer;
pub mod photometric;
pub mod eval;
pub mod io;
