use super::{ImageTensor, RawImage, CANONICAL_SIDE};
use crate::error::Result;
use crate::scanpath::Fixation;

/// Raw-pixel to canonical-frame mapping recorded by [`preprocess_image`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CoordTransform {
    pub offset_x: f64,
    pub offset_y: f64,
    pub scale: f64,
}

impl CoordTransform {
    pub const IDENTITY: CoordTransform = CoordTransform {
        offset_x: 0.0,
        offset_y: 0.0,
        scale: 1.0,
    };

    pub fn to_canonical(&self, x: f64, y: f64) -> Fixation {
        Fixation::new((x + self.offset_x) * self.scale, (y + self.offset_y) * self.scale)
    }
}

/// Zero-pad to a square (odd remainder goes to the bottom/right), then
/// resize bilinearly to 256x256 and clamp intensities into `[0, 1]`.
pub fn preprocess_image(raw: &RawImage) -> Result<(ImageTensor, CoordTransform)> {
    let (h, w) = (raw.height(), raw.width());
    let side = h.max(w);
    let (top, left) = ((side - h) / 2, (side - w) / 2);
    let mut square = vec![0.0; side * side];
    for r in 0..h {
        square[(r + top) * side + left..(r + top) * side + left + w].copy_from_slice(&raw.data()[r * w..(r + 1) * w]);
    }
    let resized = resize_bilinear(&square, side, CANONICAL_SIDE);
    let img = ImageTensor::from_vec(resized.into_iter().map(|v| v.clamp(0.0, 1.0)).collect())?;
    let transform = CoordTransform {
        offset_x: left as f64,
        offset_y: top as f64,
        scale: CANONICAL_SIDE as f64 / side as f64,
    };
    Ok((img, transform))
}

/// Half-pixel-centre bilinear resize of a square plane, clamped at the edges.
fn resize_bilinear(src: &[f64], n: usize, m: usize) -> Vec<f64> {
    let ratio = n as f64 / m as f64;
    let taps: Vec<(usize, usize, f64)> = (0..m)
        .map(|i| {
            let s = ((i as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n - 1) as f64);
            let i0 = s.floor() as usize;
            let i1 = (i0 + 1).min(n - 1);
            (i0, i1, s - i0 as f64)
        })
        .collect();
    let mut out = vec![0.0; m * m];
    for (oy, &(y0, y1, fy)) in taps.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in taps.iter().enumerate() {
            let top = src[y0 * n + x0] * (1.0 - fx) + src[y0 * n + x1] * fx;
            let bot = src[y1 * n + x0] * (1.0 - fx) + src[y1 * n + x1] * fx;
            out[oy * m + ox] = if fy == 0.0 { top } else { top * (1.0 - fy) + bot * fy };
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tall_image_pads_columns_and_maps_coordinates() {
        let raw = RawImage::new(512, 256, vec![1.0; 512 * 256]).unwrap();
        let (img, t) = preprocess_image(&raw).unwrap();
        assert_eq!(t.offset_x, 128.0);
        assert_eq!(t.offset_y, 0.0);
        assert_eq!(t.to_canonical(256.0, 128.0), Fixation::new(192.0, 64.0));
        // left band is padding, centre is image
        assert_eq!(img.get(100, 10), 0.0);
        assert_eq!(img.get(100, 128), 1.0);
    }

    #[test]
    fn odd_remainder_pads_trailing_side() {
        let raw = RawImage::new(4, 1, vec![1.0; 4]).unwrap();
        let (_, t) = preprocess_image(&raw).unwrap();
        // 3 columns of padding: 1 left, 2 right
        assert_eq!(t.offset_x, 1.0);
    }

    #[test]
    fn canonical_image_is_identity() {
        let data: Vec<f64> = (0..256 * 256).map(|i| ((i * 7919) % 256) as f64 / 255.0).collect();
        let raw = RawImage::new(256, 256, data.clone()).unwrap();
        let (img, t) = preprocess_image(&raw).unwrap();
        assert_eq!(t, CoordTransform::IDENTITY);
        assert_eq!(img.data(), data.as_slice());
        // idempotent
        let again = RawImage::new(256, 256, img.data().to_vec()).unwrap();
        let (img2, _) = preprocess_image(&again).unwrap();
        assert_eq!(img2.data(), img.data());
    }

    #[test]
    fn constant_square_stays_constant() {
        for side in [3, 100, 300] {
            let raw = RawImage::new(side, side, vec![0.375; side * side]).unwrap();
            let (img, _) = preprocess_image(&raw).unwrap();
            assert!(img.data().iter().all(|&v| (v - 0.375).abs() < 1e-15), "side {side}");
        }
    }
}
