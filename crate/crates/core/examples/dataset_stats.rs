//! Brightness statistics of an image set, raw and after each preprocessor.
//!
//!     cargo run --release --example dataset_stats -- [folder]
//!
//! Without a folder, a synthetic low-light set is used.

use llie::preproc::Preprocessor;
use llie::stats::{aggregate, folder_image_stats, preprocessed_stats, DATASET_CSV_HEADER};
use llie::train::synthetic_pairs;

fn main() -> llie::Result<()> {
    let folder = std::env::args().nth(1);
    let variants = ["gamma:0.5", "he", "clahe:2:8"];
    let mut table = vec![DATASET_CSV_HEADER.to_string()];
    let mut specs: Vec<(String, Option<Preprocessor>)> = vec![("raw".into(), None)];
    for v in variants {
        specs.push((v.into(), Some(Preprocessor::new(&v.parse()?)?)));
    }

    for (name, pre) in &specs {
        let per_image = match &folder {
            Some(dir) => folder_image_stats(dir, pre.as_ref())?.into_iter().map(|(_, s)| s).collect(),
            None => synthetic_pairs(12, 48, 5)?
                .pairs()
                .iter()
                .map(|p| preprocessed_stats(&p.low, pre.as_ref()))
                .collect::<llie::Result<Vec<_>>>()?,
        };
        table.push(aggregate(&per_image)?.csv_row(name));
    }
    println!("{}", table.join("\n"));
    Ok(())
}
