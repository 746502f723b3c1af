//! Total-variation regularization on noisy, watermarked glyph images.
//!
//! Two strata share one glyph class; each carries its own watermark band and
//! the images are hit with 15% salt and 15% pepper noise. The watermarks end up
//! in the strata features, and stronger regularization smooths the topics.
//! Reconstructions of the first image of each stratum are written as PGM files.
//!
//! ```text
//! cargo run --release --example watermark_denoising [output-dir]
//! ```

use std::path::PathBuf;

use strat_ntf::io::{export_pgm, PgmScale};
use strat_ntf::synth::{generate_glyphs, GlyphSpec};
use strat_ntf::tensor::outer_product;
use strat_ntf::tv::topic_tv_total;
use strat_ntf::{fit, reconstruct, FitConfig, StrataRanks};

fn main() -> strat_ntf::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "watermark_out".into()));
    std::fs::create_dir_all(&out).map_err(|e| strat_ntf::Error::InvalidArgument(e.to_string()))?;

    let spec = GlyphSpec::watermark_pair(28, 100, 1);
    let dataset = generate_glyphs(&spec)?;
    export_pgm(&dataset.strata()[0].first_mode_slice(0)?, out.join("noisy_0.pgm"), PgmScale::Fixed(1.0))?;
    export_pgm(&dataset.strata()[1].first_mode_slice(0)?, out.join("noisy_1.pgm"), PgmScale::Fixed(1.0))?;

    for lambda in [0.0, 5.0, 10.0] {
        let config = FitConfig::new(10, StrataRanks::Uniform(10))
            .with_iterations(100)
            .with_reg_strength(lambda);
        let result = fit(&dataset, &config)?;
        let tv = topic_tv_total(&result.model, &[1, 2])?;
        println!(
            "lambda {lambda:>4}: objective {:.1}, topic total variation {tv:.2}",
            result.trace.last_objective().unwrap_or(f64::NAN)
        );
        for i in 0..dataset.num_strata() {
            let slice = reconstruct(&result.model, i)?.first_mode_slice(0)?;
            export_pgm(&slice, out.join(format!("recon_l{lambda}_s{i}.pgm")), PgmScale::Auto)?;
            // The first strata feature of each stratum, where its watermark lives.
            let feature = outer_product(&result.model.strata[i][0])?;
            export_pgm(&feature, out.join(format!("feature_l{lambda}_s{i}.pgm")), PgmScale::Auto)?;
        }
    }
    println!("images written to {}", out.display());
    Ok(())
}
