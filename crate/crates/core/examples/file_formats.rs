//! Write and read every on-disk format: tensors, dataset manifests, model
//! checkpoints, loss CSVs and PGM images.
//!
//! ```text
//! cargo run --example file_formats [output-dir]
//! ```

use std::path::PathBuf;

use strat_ntf::io::{
    export_loss_csv, export_pgm, load_dataset, load_model, read_tensor, save_dataset, save_model, PgmScale,
};
use strat_ntf::synth::{generate_planted, FactorDistribution, PlantedSpec};
use strat_ntf::{fit, reconstruct, FitConfig, StrataRanks};

fn main() -> strat_ntf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "formats_out".into()));

    let (dataset, _) = generate_planted(&PlantedSpec {
        sample_counts: vec![4, 6],
        trailing_dims: vec![16, 16],
        topic_rank: 2,
        strata_ranks: vec![1, 1],
        distribution: FactorDistribution::SparseUniform { density: 0.5 },
        noise: 0.01,
        seed: 3,
    })?;

    // A manifest lists one tensor file per stratum, relative to itself.
    let manifest = out.join("manifest.txt");
    let files = save_dataset(&manifest, &dataset)?;
    println!("wrote {} tensor files and {}", files.len(), manifest.display());
    let reloaded = load_dataset(&manifest)?;
    assert_eq!(reloaded, dataset);
    assert_eq!(&read_tensor(&files[1])?, &dataset.strata()[1]);

    let result = fit(&dataset, &FitConfig::new(2, StrataRanks::Uniform(1)).with_iterations(50))?;
    let checkpoint = out.join("model.sntm");
    save_model(&checkpoint, &result.model)?;
    assert_eq!(load_model(&checkpoint)?, result.model);
    println!("checkpoint round trip is bit-exact ({})", checkpoint.display());

    export_loss_csv(&result.trace, out.join("loss.csv"))?;
    export_pgm(&dataset.strata()[0].first_mode_slice(0)?, out.join("data_0_0.pgm"), PgmScale::Auto)?;
    export_pgm(&reconstruct(&result.model, 0)?.first_mode_slice(0)?, out.join("recon_0_0.pgm"), PgmScale::Auto)?;
    println!("loss.csv and PGM images written to {}", out.display());
    Ok(())
}
