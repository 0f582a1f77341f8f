//! Seeded synthetic RGB images: a dark, softly graded background with one
//! bright shape per image. Shapes cycle through discs, squares and stripes.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image::{save_ppm, RgbImage};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Shape {
    Disc,
    Square,
    Stripes,
}

impl Shape {
    pub fn of_index(i: usize) -> Shape {
        [Shape::Disc, Shape::Square, Shape::Stripes][i % 3]
    }
}

/// Image `index` of the set generated from `seed`. Each image draws from its
/// own stream, so any subset can be regenerated independently.
pub fn synth_image(n: usize, seed: u64, index: usize) -> RgbImage {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let shape = Shape::of_index(index);
    let bg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.0..0.12));
    let fg: [f64; 3] = std::array::from_fn(|_| rng.random_range(0.55..1.0));
    let nf = n as f64;
    let (cx, cy) = (rng.random_range(0.3..0.7) * nf, rng.random_range(0.3..0.7) * nf);
    let size = rng.random_range(0.15..0.3) * nf;
    let period = rng.random_range(3.0..6.0f64).max(2.0);
    let mut data = Vec::with_capacity(n * n * 3);
    for y in 0..n {
        for x in 0..n {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            let inside = match shape {
                Shape::Disc => (px - cx).powi(2) + (py - cy).powi(2) <= size * size,
                Shape::Square => (px - cx).abs() <= size && (py - cy).abs() <= size,
                Shape::Stripes => (py - cy).abs() <= size * 1.5 && (px / period).floor() as i64 % 2 == 0,
            };
            let shade = 1.0 - 0.3 * py / nf;
            for ch in 0..3 {
                let v = if inside { fg[ch] } else { bg[ch] * shade };
                data.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    RgbImage::new(n, n, data).expect("n x n x 3 bytes")
}

pub fn synth_images(count: usize, n: usize, seed: u64) -> Vec<RgbImage> {
    (0..count).map(|i| synth_image(n, seed, i)).collect()
}

/// Writes `img0000.ppm`, `img0001.ppm`, ... into `dir`, creating it.
pub fn write_synth_dir(dir: &Path, count: usize, n: usize, seed: u64) -> Result<Vec<PathBuf>> {
    if n == 0 {
        return Err(Error::InvalidArgument("image size must be positive".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = Vec::with_capacity(count);
    for i in 0..count {
        let path = dir.join(format!("img{i:04}.ppm"));
        save_ppm(&path, &synth_image(n, seed, i))?;
        paths.push(path);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeded_and_independent() {
        let a = synth_images(5, 16, 3);
        assert_eq!(a, synth_images(5, 16, 3));
        assert_eq!(a[4], synth_image(16, 3, 4));
        assert_ne!(a[0], a[3]);
        assert_ne!(a[0], synth_image(16, 4, 0));
    }

    #[test]
    fn shapes_are_bright_on_dark() {
        for img in synth_images(6, 32, 0) {
            let bright = img.data.iter().filter(|&&b| b > 130).count();
            assert!(bright > 0, "no shape drawn");
            assert!(bright < img.data.len() / 2);
        }
    }
}
