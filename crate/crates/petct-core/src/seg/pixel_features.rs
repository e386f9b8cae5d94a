//! hand-crafted per-pixel features
//!
//! Each input channel contributes four features per pixel: the raw intensity,
//! the 3x3 neighborhood mean, the 3x3 population standard deviation, and the
//! Sobel gradient magnitude. Neighborhoods use replicate padding at borders,
//! and every feature is divided by 255 so inputs normalized to [0, 255] yield
//! features on a unit-ish scale.

use crate::grid::Grid2;

/// Dense per-pixel feature map, pixel-major: the feature vector of pixel
/// `(x, y)` occupies `data[(y*width + x)*n_features ..][..n_features]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelFeatureMap {
    pub width: usize,
    pub height: usize,
    pub n_features: usize,
    pub data: Vec<f32>,
}

impl PixelFeatureMap {
    #[inline]
    pub fn features(&self, pixel: usize) -> &[f32] {
        &self.data[pixel * self.n_features..(pixel + 1) * self.n_features]
    }

    pub fn n_pixels(&self) -> usize {
        self.width * self.height
    }
}

/// Number of features contributed by each input channel.
pub const FEATURES_PER_CHANNEL: usize = 4;

/// Extract the per-pixel feature map for a stack of equally sized channels.
pub fn extract_pixel_features(channels: &[Grid2<f32>]) -> PixelFeatureMap {
    assert!(!channels.is_empty(), "need at least one channel");
    let width = channels[0].width;
    let height = channels[0].height;
    for c in channels {
        assert!(
            c.width == width && c.height == height,
            "channel shapes must match"
        );
    }
    let n_features = FEATURES_PER_CHANNEL * channels.len();
    let mut data = vec![0f32; width * height * n_features];
    for (ci, ch) in channels.iter().enumerate() {
        let base = ci * FEATURES_PER_CHANNEL;
        for y in 0..height {
            let interior_y = y > 0 && y + 1 < height;
            for x in 0..width {
                // 3x3 neighborhood with replicate padding; interior pixels
                // skip the clamping (same values, same arithmetic order)
                let mut n = [[0f64; 3]; 3];
                if interior_y && x > 0 && x + 1 < width {
                    let px = ch.data.as_slice();
                    let mut row_off = (y - 1) * width + x - 1;
                    for row in n.iter_mut() {
                        row[0] = px[row_off] as f64;
                        row[1] = px[row_off + 1] as f64;
                        row[2] = px[row_off + 2] as f64;
                        row_off += width;
                    }
                } else {
                    for (dy, row) in n.iter_mut().enumerate() {
                        for (dx, v) in row.iter_mut().enumerate() {
                            *v = ch.at_clamped(
                                x as isize + dx as isize - 1,
                                y as isize + dy as isize - 1,
                            ) as f64;
                        }
                    }
                }
                let mut sum = 0f64;
                let mut sum_sq = 0f64;
                for row in &n {
                    for &v in row {
                        sum += v;
                        sum_sq += v * v;
                    }
                }
                let mean = sum / 9.0;
                let var = (sum_sq / 9.0 - mean * mean).max(0.0);
                let gx = (n[0][2] + 2.0 * n[1][2] + n[2][2])
                    - (n[0][0] + 2.0 * n[1][0] + n[2][0]);
                let gy = (n[2][0] + 2.0 * n[2][1] + n[2][2])
                    - (n[0][0] + 2.0 * n[0][1] + n[0][2]);
                let sobel = (gx * gx + gy * gy).sqrt();

                let off = (y * width + x) * n_features + base;
                data[off] = (n[1][1] / 255.0) as f32;
                data[off + 1] = (mean / 255.0) as f32;
                data[off + 2] = (var.sqrt() / 255.0) as f32;
                data[off + 3] = (sobel / 255.0) as f32;
            }
        }
    }
    PixelFeatureMap {
        width,
        height,
        n_features,
        data,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_channel_features() {
        let g = Grid2::filled(4, 4, 100f32);
        let f = extract_pixel_features(&[g]);
        assert_eq!(f.n_features, 4);
        for p in 0..f.n_pixels() {
            let row = f.features(p);
            assert_eq!(row[0], (100.0f64 / 255.0) as f32); // raw
            assert_eq!(row[1], (100.0f64 / 255.0) as f32); // mean
            assert_eq!(row[2], 0.0); // std
            assert_eq!(row[3], 0.0); // sobel
        }
    }

    #[test]
    fn single_bright_pixel_mean_is_one_ninth() {
        let mut g = Grid2::filled(5, 5, 0f32);
        g.set(2, 2, 255.0);
        let f = extract_pixel_features(&[g]);
        let center = f.features(2 * 5 + 2);
        assert!((center[1] as f64 - 1.0 / 9.0).abs() < 1e-6);
        assert_eq!(center[0], 1.0);
    }

    #[test]
    fn two_channels_give_width_eight() {
        let a = Grid2::filled(3, 3, 10f32);
        let b = Grid2::filled(3, 3, 20f32);
        let f = extract_pixel_features(&[a, b]);
        assert_eq!(f.n_features, 8);
        // second channel block starts at index 4
        let row = f.features(4);
        assert_eq!(row[4], (20.0f64 / 255.0) as f32);
    }

    #[test]
    fn features_are_finite_on_random_input() {
        let data: Vec<f32> = (0..36)
            .map(|i| ((i * 37 + 11) % 256) as f32)
            .collect();
        let g = Grid2::from_data(6, 6, data);
        let f = extract_pixel_features(&[g]);
        assert!(f.data.iter().all(|v| v.is_finite()));
    }
}
