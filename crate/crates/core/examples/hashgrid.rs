//! Fits a hash-grid encoding with a fixed linear readout (sum of features)
//! to a smooth 3D function, then reports the error on fresh points.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildnerf::diffnet::{AdamState, GradBuffer, ParamStore};
use wildnerf::encoding::{level_resolution, HashGrid, HashGridConfig};

fn target(x: &[f32; 3]) -> f32 {
    (6.0 * x[0]).sin() * (4.0 * x[1]).cos() + 0.5 * x[2]
}

fn main() -> wildnerf::Result<()> {
    let cfg = HashGridConfig {
        levels: 8,
        table_size: 1 << 12,
        features_per_level: 2,
        base_resolution: 4,
        growth_factor: 1.6,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut store = ParamStore::<f32>::new();
    let grid = HashGrid::register(&mut store, "grid", cfg.clone(), &mut rng)?;
    for l in 0..cfg.levels {
        let res = level_resolution(&cfg, l);
        let dense = (res as u64).pow(3) <= cfg.table_size as u64;
        println!("level {l}: {res:>3}^3 vertices, {}", if dense { "dense" } else { "hashed" });
    }

    let mut adam = AdamState::new(&store);
    let batch = 256;
    let width = grid.output_width();
    for step in 0..=600 {
        let xs: Vec<[f32; 3]> = (0..batch).map(|_| rng.gen()).collect();
        let mut tape = grid.tape(batch);
        let mut feats = vec![0.0f32; width];
        let mut grads = GradBuffer::for_store(&store);
        let mut loss = 0.0;
        for (i, x) in xs.iter().enumerate() {
            grid.encode_into(&store, x, &mut feats, Some(&mut tape));
            let err = feats.iter().sum::<f32>() - target(x);
            loss += err * err / batch as f32;
            let upstream = vec![2.0 * err / batch as f32; width];
            grid.backward(&store, &tape, i, &upstream, &mut grads, None);
        }
        store.accumulate(&grads);
        adam.step(&mut store, 2e-3)?;
        if step % 100 == 0 {
            println!("step {step:>4}  mse {loss:.5}");
        }
    }

    let test: Vec<[f32; 3]> = (0..2000).map(|_| rng.gen()).collect();
    let mse = test
        .iter()
        .map(|x| {
            let e = grid.encode(&store, x).iter().sum::<f32>() - target(x);
            e * e
        })
        .sum::<f32>()
        / test.len() as f32;
    println!("held-out mse {mse:.5}");
    Ok(())
}
