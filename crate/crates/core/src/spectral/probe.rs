use num_complex::Complex64;

use super::fft::{shell_count, shell_index, Fft2};
use crate::error::Result;
use crate::tensor::Tensor;

/// Unit mean-square field containing every Fourier bin of one shell with a
/// real, equal coefficient. Returns `None` for an empty shell.
pub fn shell_probe_field(shell: usize, h: usize, w: usize) -> Result<Option<Vec<f64>>> {
    let fft = Fft2::new(h, w)?;
    let mut spec = vec![Complex64::new(0.0, 0.0); h * w];
    let mut any = false;
    for r in 0..h {
        for c in 0..w {
            if shell_index(r, c, h, w) == shell {
                spec[r * w + c] = Complex64::new(1.0, 0.0);
                any = true;
            }
        }
    }
    if !any {
        return Ok(None);
    }
    let (mut field, _) = fft.inverse_real(spec);
    let rms = (field.iter().map(|v| v * v).sum::<f64>() / field.len() as f64).sqrt();
    for v in field.iter_mut() {
        *v /= rms;
    }
    Ok(Some(field))
}

/// Empirical per-shell energy gain of a latent block.
///
/// For each shell a unit single-shell field is replicated over all
/// `channels` of a `[1, channels, h, w]` input; the gain is output energy
/// over input energy. Empty shells report zero.
pub fn frequency_response_probe<F>(mut block: F, channels: usize, h: usize, w: usize) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> Result<Tensor>,
{
    let n_shells = shell_count(h, w);
    let mut gains = Vec::with_capacity(n_shells);
    for k in 0..n_shells {
        let Some(field) = shell_probe_field(k, h, w)? else {
            gains.push(0.0);
            continue;
        };
        let mut data = Vec::with_capacity(channels * h * w);
        for _ in 0..channels {
            data.extend_from_slice(&field);
        }
        let input = Tensor::from_vec(&[1, channels, h, w], data)?;
        let out = block(&input)?;
        gains.push(out.sum_sq() / input.sum_sq());
    }
    Ok(gains)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_has_unit_gain() {
        let g = frequency_response_probe(|x| Ok(x.clone()), 3, 8, 8).unwrap();
        assert_eq!(g.len(), shell_count(8, 8));
        for v in g {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_laplacian_gain_increases() {
        let (h, w) = (32, 32);
        let lap = |x: &Tensor| -> Result<Tensor> {
            let d = x.data();
            Ok(Tensor::from_fn(x.shape(), |i| {
                let (r, c) = (i / w, i % w);
                let at = |rr: usize, cc: usize| d[rr * w + cc];
                4.0 * at(r, c)
                    - at((r + 1) % h, c)
                    - at((r + h - 1) % h, c)
                    - at(r, (c + 1) % w)
                    - at(r, (c + w - 1) % w)
            }))
        };
        let g = frequency_response_probe(lap, 1, h, w).unwrap();
        assert!(g[0].abs() < 1e-20);
        for k in 1..8 {
            assert!(g[k + 1] > g[k], "gain not increasing at shell {k}: {:?}", &g[..10]);
        }
    }
}
