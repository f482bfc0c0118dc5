use candle_core::{Device, Tensor};
use ndarray::{Array2, ArrayView2};

use crate::dsp::Spectrogram;

/// Bilinear resize with half-pixel centres (`align_corners = false`).
pub fn resize_bilinear(src: ArrayView2<'_, f32>, out_h: usize, out_w: usize) -> Array2<f32> {
    let (h, w) = src.dim();
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let x = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (x.floor() as usize).min(n_in - 1);
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (x - i0 as f64) as f32)
            })
            .collect()
    };
    let rows = axis(h, out_h);
    let cols = axis(w, out_w);
    Array2::from_shape_fn((out_h, out_w), |(r, c)| {
        let (r0, r1, fr) = rows[r];
        let (c0, c1, fc) = cols[c];
        let top = src[[r0, c0]] * (1.0 - fc) + src[[r0, c1]] * fc;
        let bottom = src[[r1, c0]] * (1.0 - fc) + src[[r1, c1]] * fc;
        top * (1.0 - fr) + bottom * fr
    })
}

/// Network input for a batch of spectrograms: each is resized to
/// `input_size` and repeated over three channels, laid out `(3, B, H, W)`.
pub fn batch_tensor(specs: &[&Spectrogram], input_size: [usize; 2]) -> candle_core::Result<Tensor> {
    let [h, w] = input_size;
    let plane = h * w;
    let mut one = Vec::with_capacity(specs.len() * plane);
    for s in specs {
        if s.values.dim() == (h, w) {
            one.extend(s.values.iter().copied());
        } else {
            one.extend(resize_bilinear(s.values.view(), h, w).iter().copied());
        }
    }
    let b = specs.len();
    let single = Tensor::from_vec(one, (1, b, h, w), &Device::Cpu)?;
    Tensor::cat(&[&single, &single, &single], 0)
}

#[cfg(test)]
mod tests {
    use ndarray::array;

    use super::*;

    #[test]
    fn identity_resize() {
        let a = array![[1.0f32, 2.0, 3.0], [4.0, 5.0, 6.0]];
        assert_eq!(resize_bilinear(a.view(), 2, 3), a);
    }

    #[test]
    fn upsample_matches_half_pixel_reference() {
        // 1-D: [0, 1] -> 4 samples at x = -0.25, 0.25, 0.75, 1.25 (clamped)
        let a = array![[0.0f32, 1.0]];
        let r = resize_bilinear(a.view(), 1, 4);
        assert_eq!(r, array![[0.0f32, 0.25, 0.75, 1.0]]);
    }

    #[test]
    fn constant_stays_constant() {
        let a = Array2::from_elem((64, 398), 0.7f32);
        let r = resize_bilinear(a.view(), 224, 224);
        assert!(r.iter().all(|&v| (v - 0.7).abs() < 1e-6));
    }

    #[test]
    fn batch_layout() {
        let s1 = Spectrogram::new(Array2::from_elem((4, 6), 1.0f32));
        let s2 = Spectrogram::new(Array2::from_elem((4, 6), 2.0f32));
        let t = batch_tensor(&[&s1, &s2], [8, 8]).unwrap();
        assert_eq!(t.dims(), &[3, 2, 8, 8]);
        let v = t.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v[0], 1.0);
        assert_eq!(v[64], 2.0);
        assert_eq!(v[128], 1.0);
    }
}
