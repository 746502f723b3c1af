//! Compare parameter budgets of the stratified tensor model against a plain
//! tensor decomposition and a flattened stratified matrix model on the same
//! data: 40 strata of ten 64×64 images.
//!
//! ```text
//! cargo run --example parameter_budget
//! ```

use strat_ntf::param_count;

fn main() -> strat_ntf::Result<()> {
    let strata = 40;
    let per_stratum = vec![10; strata];

    let stratified = param_count(&per_stratum, &[64, 64], 40, &vec![15; strata])?;
    // One stratum holding all 400 images and no strata features is an
    // ordinary non-negative CP decomposition.
    let decomposition = param_count(&[400], &[64, 64], 186, &[0])?;
    // Flattening each image to a 4096-vector gives the matrix model.
    let flattened = param_count(&per_stratum, &[4096], 1, &vec![1; strata])?;

    println!("{:<34} {:>8}", "model", "params");
    println!("{:<34} {:>8}", "stratified tensor (r=40, r'=15)", stratified);
    println!("{:<34} {:>8}", "tensor decomposition (r=186)", decomposition);
    println!("{:<34} {:>8}", "flattened matrix (r=1, r'=1)", flattened);

    // The smallest matrix model already needs more parameters than either
    // tensor model, since every rank spans a whole image.
    assert!(flattened > stratified && flattened > decomposition);
    Ok(())
}
