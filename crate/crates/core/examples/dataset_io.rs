//! Generates a small dataset, writes it to disk, reads it back and prints
//! the container header.

use milearn::data::{generate_dataset, read_dataset, write_dataset, GenerateConfig, MAGIC};
use milearn::env::ReachEnv;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = ReachEnv::default();
    let cfg = GenerateConfig { meta_train_tasks: 8, meta_test_tasks: 2, ..Default::default() };
    let (ds, summary) = generate_dataset(&env, &cfg)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("demo.mil");
    write_dataset(&ds, &path)?;
    let bytes = std::fs::read(&path)?;
    println!("{} bytes, magic ok: {}", bytes.len(), bytes.starts_with(&MAGIC));
    let back = read_dataset(&path, Some(&env.config), false)?;
    println!("round trip equal: {}", back == ds);
    Ok(())
}
