//! Write the planted sentiment task to a directory:
//! `cargo run -p pflat-cli --example make_planted -- <dir> [seed]`.

use std::path::PathBuf;

use pflat_core::io::{write_dataset, write_prompt_pool, write_verbalizer};
use pflat_core::model::weights::save_logistic;
use pflat_core::planted::{build, PlantedConfig};

fn main() -> pflat_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "planted".into()));
    let seed = args
        .next()
        .map(|s| s.parse().expect("seed must be an integer"))
        .unwrap_or(0);
    std::fs::create_dir_all(&dir)?;
    let task = build(&PlantedConfig {
        seed,
        ..Default::default()
    })?;
    write_verbalizer(&task.verbalizer, &dir.join("verbalizer.json"))?;
    write_dataset(&task.train, &dir.join("train.jsonl"))?;
    write_dataset(&task.dev, &dir.join("dev.jsonl"))?;
    write_dataset(&task.test, &dir.join("test.jsonl"))?;
    write_prompt_pool(&task.pool, &dir.join("pool.json"))?;
    save_logistic(&task.model, &dir.join("model.pflt"))?;
    println!("wrote planted task (seed {seed}) to {}", dir.display());
    Ok(())
}
