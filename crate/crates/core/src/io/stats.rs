use serde::{Deserialize, Serialize};

use crate::error::DataError;

/// Zero-pixel and intensity statistics of an image set. Standard deviations
/// are population values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityStats {
    pub images: usize,
    pub pixels_per_image: usize,
    pub mean_zero_pixels: f64,
    pub min_zero_pixels: usize,
    pub max_zero_pixels: usize,
    pub std_zero_pixels: f64,
    pub zero_fraction: f64,
    pub pixel_mean: f64,
    pub pixel_std: f64,
}

/// Statistics over `pixels` split into images of `pixels_per_image`. A zero
/// pixel is one whose raw value is exactly 0.
pub fn dataset_stats(pixels: &[u8], pixels_per_image: usize) -> Result<SparsityStats, DataError> {
    if pixels_per_image == 0 || pixels.is_empty() {
        return Err(DataError::Empty);
    }
    if !pixels.len().is_multiple_of(pixels_per_image) {
        return Err(DataError::LengthMismatch {
            what: "image set".into(),
            expected: pixels.len() / pixels_per_image * pixels_per_image,
            found: pixels.len(),
        });
    }
    let images = pixels.len() / pixels_per_image;
    let zero_counts: Vec<usize> = pixels
        .chunks_exact(pixels_per_image)
        .map(|img| img.iter().filter(|&&p| p == 0).count())
        .collect();

    let n = images as f64;
    let mean_zero = zero_counts.iter().sum::<usize>() as f64 / n;
    let var_zero = zero_counts
        .iter()
        .map(|&z| (z as f64 - mean_zero).powi(2))
        .sum::<f64>()
        / n;

    let total = pixels.len() as f64;
    let (sum, sum_sq) = pixels.iter().fold((0u64, 0u64), |(s, q), &p| {
        (s + u64::from(p), q + u64::from(p) * u64::from(p))
    });
    let pixel_mean = sum as f64 / total;
    let pixel_var = (sum_sq as f64 / total - pixel_mean * pixel_mean).max(0.0);

    Ok(SparsityStats {
        images,
        pixels_per_image,
        mean_zero_pixels: mean_zero,
        min_zero_pixels: *zero_counts.iter().min().expect("non-empty"),
        max_zero_pixels: *zero_counts.iter().max().expect("non-empty"),
        std_zero_pixels: var_zero.sqrt(),
        zero_fraction: mean_zero / pixels_per_image as f64,
        pixel_mean,
        pixel_std: pixel_var.sqrt(),
    })
}
