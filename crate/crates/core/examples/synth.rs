//! Write an overconfident synthetic train/test pair for trying the CLI.
//!
//! cargo run --release --example synth -- <out_dir> [temperature]

use std::path::PathBuf;

use hcal::dataset::Format;
use hcal::synthetic::{generate, SyntheticSpec};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| ".".into()));
    let temperature = match args.next() {
        Some(t) => t.parse()?,
        None => 0.4,
    };
    std::fs::create_dir_all(&dir)?;
    for (name, n, seed) in [("train.csv", 5000, 1), ("test.csv", 10_000, 2)] {
        let spec = SyntheticSpec {
            n_samples: n,
            temperature,
            seed,
            ..SyntheticSpec::default()
        };
        let path = dir.join(name);
        generate(&spec)?.data.save(&path, Format::Csv)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
