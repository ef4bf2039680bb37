//! Regenerates the bundled golden result: `cargo run --release --example regen_golden`.

use rooflab::gpp::{reference_result, synth_problem, Dims, GoldenResult};

fn main() -> rooflab::Result<()> {
    let (seed, dims) = (42, Dims::DESK);
    let p = synth_problem(seed, dims.nbands, dims.ngpown, dims.ncouls)?;
    let g = GoldenResult { seed, dims, result: reference_result(&p) };
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/golden/gpp_seed42_64x64x512.json");
    g.save(path)?;
    println!("wrote {path}");
    Ok(())
}
