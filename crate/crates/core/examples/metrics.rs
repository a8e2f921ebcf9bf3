//! PSNR and SSIM on a gradient image against shifted, noisy and constant
//! versions of itself.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use wildnerf::imagebuf::{GrayImage, RgbImage};
use wildnerf::metrics::{psnr, ssim, ssim_rgb, SSIM_C1};

fn gradient(w: u32, h: u32) -> RgbImage {
    let mut img = RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let u = x as f32 / (w - 1) as f32;
            let v = y as f32 / (h - 1) as f32;
            img.set(x, y, [u, v, 0.5 * (u + v)]);
        }
    }
    img
}

fn main() -> wildnerf::Result<()> {
    let (w, h) = (128, 96);
    let reference = gradient(w, h);

    let mut shifted = reference.clone();
    for y in 0..h {
        for x in 0..w {
            let p = reference.get(x, y);
            shifted.set(x, y, p.map(|c| (c + 0.1).min(1.0)));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut noisy = reference.clone();
    for y in 0..h {
        for x in 0..w {
            let p = reference.get(x, y);
            noisy.set(x, y, p.map(|c| (c + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0)));
        }
    }

    println!("{:<10} {:>8} {:>8}", "image", "psnr", "ssim");
    for (name, img) in [("identical", &reference), ("shifted", &shifted), ("noisy", &noisy)] {
        println!(
            "{name:<10} {:>8.3} {:>8.5}",
            psnr(&reference, img, 1.0)?,
            ssim_rgb(&reference, img)?
        );
    }

    let black = GrayImage::filled(32, 32, 0.0);
    let white = GrayImage::filled(32, 32, 1.0);
    println!(
        "constant 0 vs 1: ssim {:.6e}, closed form {:.6e}",
        ssim(&black, &white)?,
        SSIM_C1 / (1.0 + SSIM_C1)
    );
    Ok(())
}
