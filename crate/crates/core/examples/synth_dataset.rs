//! Generates a synthetic claim file, reloads it and summarises it.
//!
//! `cargo run --release --example synth_dataset -- [n_claims] [path]`

use mmfuse::data::{generate_synthetic, load_claims, save_claims, SynthConfig};
use mmfuse::features::ClaimTable;

fn main() -> mmfuse::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let n = args.get(1).map(|s| s.parse().expect("n_claims")).unwrap_or(2_000);
    let path = args.get(2).cloned().unwrap_or_else(|| std::env::temp_dir().join("claims.jsonl").display().to_string());
    let cfg = SynthConfig {
        n_claims: n,
        seed: 7,
        ..SynthConfig::default()
    };
    let records = generate_synthetic(&cfg)?;
    save_claims(&records, &path)?;
    let loaded = load_claims(&path)?;
    assert_eq!(loaded.records, records);
    let table = ClaimTable::from_records(&loaded.records)?;
    let fraud = table.labels().iter().sum::<usize>();
    let images: usize = records.iter().map(|r| r.images.len()).sum();
    println!("{} claims, {fraud} fraud ({:.2}%), {images} images, written to {path}", table.len(), 100.0 * fraud as f64 / n as f64);
    println!("first claim: {} label {} with {} images", records[0].claim_id, records[0].label, records[0].images.len());
    Ok(())
}
