//! Renders a homogeneous slab and compares the quadrature estimate with the
//! closed form `c (1 - exp(-σ D))` as the sample count grows.

use wildnerf::renderer::{ConstantBox, Ray, RenderOutput, Renderer};
use wildnerf::sceneio::SceneBox;

fn main() -> wildnerf::Result<()> {
    let sigma = 2.0;
    let depth = 1.0;
    let color = [0.9, 0.5, 0.2];
    // the slab fills the top half of a 2-unit box; the ray overshoots it by 0.2
    let scene_box = SceneBox::new([0.0; 3], [2.0; 3])?;
    let slab = ConstantBox {
        min: [0.0, 0.0, 0.5],
        max: [1.0; 3],
        sigma,
        color,
    };
    let ray = Ray {
        origin: [1.0, 1.0, 2.0],
        dir: [0.0, 0.0, -1.0],
        near: 0.0,
        far: depth + 0.2,
    };
    let exact = color.map(|c| c * (1.0 - (-sigma * depth).exp()));
    println!("exact    {:.6} {:.6} {:.6}", exact[0], exact[1], exact[2]);
    println!("{:>5}  {:>10}  {:>10}  {:>8}", "N", "red", "abs err", "opacity");
    for n in [16, 32, 64, 128, 256, 512] {
        let out: RenderOutput<f64> = Renderer::new(scene_box, n).render_static(&slab, &ray, None)?;
        println!(
            "{n:>5}  {:>10.6}  {:>10.2e}  {:>8.5}",
            out.color[0],
            (out.color[0] - exact[0]).abs(),
            out.opacity
        );
    }
    Ok(())
}
