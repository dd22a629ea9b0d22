use std::fmt::Write as _;
use std::time::Instant;

use probres::space::{load_space, write_embeddings};
use probres::Embedding;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LABELS: usize = 195_714;

#[test]
fn large_label_file_loads_and_structures_quickly() {
    let tmp = tempfile::tempdir().unwrap();
    let labels = tmp.path().join("labels.txt");
    let embeddings = tmp.path().join("embeddings.bin");
    let mut text = String::with_capacity(LABELS * 24);
    for i in 0..LABELS {
        writeln!(text, "act{} obj{}", i / 512, i % 512).unwrap();
    }
    std::fs::write(&labels, text).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Embedding> = (0..LABELS)
        .map(|_| Embedding::new((0..32).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap())
        .collect();
    write_embeddings(&embeddings, &rows).unwrap();

    let started = Instant::now();
    let space = load_space(&labels, &embeddings).unwrap();
    let secs = started.elapsed().as_secs_f64();
    assert_eq!(space.len(), LABELS);
    assert_eq!(space.order()[0], space.anchor_index());
    let d: Vec<f64> = space.order().iter().map(|&i| space.distance(space.anchor_index(), i)).collect();
    assert!(d.windows(2).all(|w| w[0] <= w[1]));
    assert!(secs < 60.0, "{secs:.1}s");
}
