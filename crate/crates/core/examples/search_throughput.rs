//! Measures brute-force search time over a random index.
//!
//! `cargo run --release -p urag --example search_throughput -- [rows] [dim]`

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use urag::index::kernel::kernel_name;
use urag::index::{IndexEntry, VectorIndex};
use urag::model::EmbeddingVector;

fn main() {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let rows = args.first().copied().unwrap_or(50_000);
    let dim = args.get(1).copied().unwrap_or(768);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut random = |n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect() };
    let entries: Vec<IndexEntry> = (0..rows)
        .map(|i| IndexEntry { key: format!("k{i:06}"), vector: EmbeddingVector::new(random(dim)).unwrap() })
        .collect();
    let t = Instant::now();
    let index = VectorIndex::build(dim, entries).unwrap();
    println!("kernel {} build {:.1} ms", kernel_name(), t.elapsed().as_secs_f64() * 1e3);
    let queries: Vec<Vec<f32>> = (0..64).map(|_| random(dim)).collect();
    for batch in [1usize, 4, 8, 16, 32, 64] {
        let refs: Vec<&[f32]> = queries[..batch].iter().map(|q| q.as_slice()).collect();
        let mut times: Vec<f64> = (0..15)
            .map(|_| {
                let t = Instant::now();
                std::hint::black_box(index.search_batch(&refs, 0.9, 20).unwrap());
                t.elapsed().as_secs_f64() * 1e3
            })
            .collect();
        times.sort_by(f64::total_cmp);
        let (min, median) = (times[0], times[times.len() / 2]);
        println!("batch {batch:>2}: min {min:7.2} ms, median {median:7.2} ms, {:6.2} ms per query", median / batch as f64);
    }
}
