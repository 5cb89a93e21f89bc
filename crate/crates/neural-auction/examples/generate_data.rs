//! Generate a synthetic auction dataset and summarize it.
//!
//! ```text
//! cargo run --release --example generate_data
//! ```

use neural_auction::data::{generate_dataset, write_dataset, GeneratorConfig, QUALITY_FEATURE};

fn main() {
    let cfg = GeneratorConfig { seed: 7, slots: 3, ..GeneratorConfig::default() };
    let out = std::env::temp_dir().join("neural-auction-demo.jsonl");

    let instances: Vec<_> = generate_dataset(&cfg, 2000).expect("valid config").collect();
    let ads: usize = instances.iter().map(|a| a.n()).sum();
    let clicks: usize =
        instances.iter().flat_map(|a| &a.candidates).filter(|c| c.click).count();
    let mean_bid: f64 =
        instances.iter().flat_map(|a| &a.candidates).map(|c| c.bid).sum::<f64>() / ads as f64;
    let mean_pctr: f64 =
        instances.iter().flat_map(|a| &a.candidates).map(|c| c.pctr).sum::<f64>() / ads as f64;

    println!("{} auctions, {} candidate ads", instances.len(), ads);
    println!("mean bid {mean_bid:.3}, mean pctr {mean_pctr:.3}, realized ctr {:.3}", clicks as f64 / ads as f64);
    println!("feature vector: {} dims (quality score at index {QUALITY_FEATURE})", cfg.feature_dim());

    let written = write_dataset(&out, instances).expect("write dataset");
    println!("wrote {written} records to {}", out.display());

    // Same seed, same bytes: regeneration is exact.
    let again: Vec<_> = generate_dataset(&cfg, 2000).unwrap().collect();
    let reread = neural_auction::data::read_all(&out).unwrap();
    assert_eq!(again, reread);
    println!("regenerated stream matches the file exactly");
}
