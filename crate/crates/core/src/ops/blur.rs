/// Normalized 1-D Gaussian taps with radius `ceil(3σ)`.
fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let mut k: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Separable Gaussian blur of a single-channel `height × width` field with
/// edge-replicate padding. `sigma == 0` returns the input unchanged.
pub fn gaussian_blur(field: &[f64], height: usize, width: usize, sigma: f64) -> Vec<f64> {
    assert_eq!(field.len(), height * width, "field length");
    assert!(sigma >= 0.0, "blur sigma must be non-negative");
    if sigma == 0.0 {
        return field.to_vec();
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;

    let mut tmp = vec![0.0; field.len()];
    for y in 0..height {
        let row = &field[y * width..(y + 1) * width];
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sx = (x as isize + i as isize - r).clamp(0, width as isize - 1) as usize;
                acc += kv * row[sx];
            }
            tmp[y * width + x] = acc;
        }
    }
    let mut out = vec![0.0; field.len()];
    for y in 0..height {
        for x in 0..width {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let sy = (y as isize + i as isize - r).clamp(0, height as isize - 1) as usize;
                acc += kv * tmp[sy * width + x];
            }
            out[y * width + x] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_unchanged() {
        let f = vec![0.7; 30];
        let out = gaussian_blur(&f, 5, 6, 1.5);
        assert!(out.iter().all(|v| (v - 0.7).abs() < 1e-14));
    }

    #[test]
    fn zero_sigma_is_identity() {
        let f: Vec<f64> = (0..20).map(|i| i as f64).collect();
        assert_eq!(gaussian_blur(&f, 4, 5, 0.0), f);
    }

    #[test]
    fn impulse_mass_is_one() {
        // Impulse far from the border: the response sums to the kernel mass.
        let (h, w) = (31, 31);
        let mut f = vec![0.0; h * w];
        f[15 * w + 15] = 1.0;
        let out = gaussian_blur(&f, h, w, 2.0);
        assert!((out.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((kernel(2.0).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        // Symmetric about the impulse.
        assert!((out[15 * w + 12] - out[15 * w + 18]).abs() < 1e-15);
        assert!((out[12 * w + 15] - out[15 * w + 12]).abs() < 1e-15);
    }
}
