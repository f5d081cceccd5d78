//! Matrix file I/O, synthetic generators and seeded random streams.

mod generate;
mod io;
pub mod rng;

pub use generate::{generate, GeneratorKind, GeneratorSpec, Role};
pub use io::{
    decode_d2b, encode_d2b, load_matrix, parse_csv, save_matrix, to_csv_string, MatrixFormat,
};
