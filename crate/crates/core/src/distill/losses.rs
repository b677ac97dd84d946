use crate::error::{Error, Result};
use crate::spectral::{low_pass, SpectralConfig};
use crate::tensor::Tensor;

/// A scalar loss together with its gradient with respect to the first
/// argument (the prediction or student feature).
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Tensor,
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<usize> {
    a.expect_same_shape(b)?;
    if a.numel() == 0 {
        return Err(Error::Shape("loss over an empty tensor".into()));
    }
    Ok(a.numel())
}

/// Mean squared error.
pub fn task_loss(pred: &Tensor, target: &Tensor) -> Result<LossGrad> {
    let n = check_pair(pred, target)? as f64;
    let r = pred.sub(target)?;
    Ok(LossGrad {
        value: r.sum_sq() / n,
        grad: r.scale(2.0 / n),
    })
}

/// Frequency-aligned feature loss, split into its band terms.
#[derive(Clone, Debug, PartialEq)]
pub struct KdLoss {
    pub value: f64,
    /// Mean square of the high-band residual.
    pub high: f64,
    /// Mean square of the low-band residual.
    pub low: f64,
    pub grad: Tensor,
}

/// `(|P_h r|^2 + alpha |P_l r|^2) / n` with `r = student - teacher`, where
/// `P_l` keeps the Fourier shells up to the cutoff over the last two axes
/// and `P_h = 1 - P_l`. The teacher is treated as a constant.
pub fn kd_loss(student: &Tensor, teacher: &Tensor, alpha: f64, cfg: &SpectralConfig) -> Result<KdLoss> {
    let n = check_pair(student, teacher)? as f64;
    if !(alpha >= 0.0) {
        return Err(Error::Config(format!("alpha_kd must be non-negative, got {alpha}")));
    }
    let r = student.sub(teacher)?;
    let low_r = low_pass(&r, cfg)?;
    let high_r = r.sub(&low_r)?;
    let (high, low) = (high_r.sum_sq() / n, low_r.sum_sq() / n);
    // The projections are orthogonal and self-adjoint, so the gradient is
    // 2 (P_h r + alpha P_l r) / n.
    let grad = high_r.zip_map(&low_r, |h, l| 2.0 * (h + alpha * l) / n)?;
    Ok(KdLoss {
        value: high + alpha * low,
        high,
        low,
        grad,
    })
}

/// Activation-boundary hinge on pre-activations: where the teacher is
/// positive the student is pushed above `margin`, elsewhere below
/// `-margin`. Averaged over elements.
pub fn ab_loss(student: &Tensor, teacher: &Tensor, margin: f64) -> Result<LossGrad> {
    let n = check_pair(student, teacher)? as f64;
    if !(margin >= 0.0) {
        return Err(Error::Config(format!("margin must be non-negative, got {margin}")));
    }
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(student.numel());
    for (&s, &t) in student.data().iter().zip(teacher.data()) {
        let gap = if t > 0.0 {
            (s - margin).min(0.0)
        } else {
            (s + margin).max(0.0)
        };
        value += gap * gap;
        grad.push(2.0 * gap / n);
    }
    let grad = Tensor::from_vec(student.shape(), grad)?;
    Ok(LossGrad { value: value / n, grad })
}

/// Elementwise mean of the teacher outputs.
pub fn aver_mkd_target(outputs: &[Tensor]) -> Result<Tensor> {
    if outputs.len() < 2 {
        return Err(Error::Config(format!(
            "averaging needs at least two teachers, got {}",
            outputs.len()
        )));
    }
    let mut acc = outputs[0].clone();
    for o in &outputs[1..] {
        acc.add_assign(o)?;
    }
    Ok(acc.scale(1.0 / outputs.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::{plancherel_decompose_error, shell_probe_field};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn task_loss_examples() {
        let y = rand_tensor(&[2, 3, 4, 4], 0);
        assert_eq!(task_loss(&y, &y).unwrap().value, 0.0);
        let shifted = y.map(|v| v + 0.3);
        assert!((task_loss(&shifted, &y).unwrap().value - 0.09).abs() < 1e-12);
        let p = rand_tensor(&[2, 3, 4, 4], 1);
        let mut acc = 0.0;
        for i in 0..p.numel() {
            acc += (p.data()[i] - y.data()[i]).powi(2);
        }
        assert!((task_loss(&p, &y).unwrap().value - acc / 96.0).abs() < 1e-12);
        assert!(task_loss(&p, &Tensor::zeros(&[2, 3])).is_err());
    }

    #[test]
    fn kd_loss_vanishes_on_equal_features() {
        let cfg = SpectralConfig::new(2.0, 8, 8).unwrap();
        let f = rand_tensor(&[2, 3, 8, 8], 2);
        let k = kd_loss(&f, &f, 0.7, &cfg).unwrap();
        assert_eq!(k.value, 0.0);
        assert!(k.grad.data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn low_band_residual_is_ignored_without_alpha() {
        let cfg = SpectralConfig::new(3.0, 16, 16).unwrap();
        let teacher = rand_tensor(&[1, 1, 16, 16], 3);
        let mode = shell_probe_field(2, 16, 16).unwrap().unwrap();
        let student = teacher.add(&Tensor::from_vec(&[1, 1, 16, 16], mode).unwrap()).unwrap();
        let k = kd_loss(&student, &teacher, 0.0, &cfg).unwrap();
        assert!(k.value.abs() < 1e-25, "{}", k.value);
        assert!((k.low - 1.0).abs() < 1e-12);
    }

    #[test]
    fn high_band_residual_ignores_alpha() {
        let cfg = SpectralConfig::new(3.0, 16, 16).unwrap();
        let teacher = rand_tensor(&[1, 1, 16, 16], 4);
        let mode = Tensor::from_vec(&[1, 1, 16, 16], shell_probe_field(6, 16, 16).unwrap().unwrap()).unwrap();
        let student = teacher.add(&mode).unwrap();
        let energy = mode.sum_sq() / mode.numel() as f64;
        for alpha in [0.0, 0.5, 3.0] {
            let k = kd_loss(&student, &teacher, alpha, &cfg).unwrap();
            assert!((k.value - energy).abs() < 1e-12);
            assert!((k.value - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn kd_terms_match_band_error_decomposition() {
        let cfg = SpectralConfig::new(4.0, 32, 32).unwrap();
        let s = rand_tensor(&[2, 2, 32, 32], 5);
        let t = rand_tensor(&[2, 2, 32, 32], 6);
        let k = kd_loss(&s, &t, 0.4, &cfg).unwrap();
        let e = plancherel_decompose_error(&s, &t, &cfg).unwrap();
        let hw = 1024.0;
        assert!((k.high - e.high / hw).abs() <= 1e-9 * k.high);
        assert!((k.low - e.low / hw).abs() <= 1e-9 * k.low);
        assert!((k.value - (k.high + 0.4 * k.low)).abs() <= 1e-12 * k.value);
    }

    #[test]
    fn ab_loss_examples() {
        let t = Tensor::from_vec(&[4], vec![2.0, -3.0, 1.5, -1.2]).unwrap();
        let l = ab_loss(&t, &t, 1.0).unwrap();
        assert_eq!(l.value, 0.0);
        assert!(l.grad.data().iter().all(|&g| g == 0.0));

        let m = 0.8;
        let teacher = Tensor::full(&[3, 3], 1.0);
        let student = Tensor::full(&[3, 3], -m);
        assert!((ab_loss(&student, &teacher, m).unwrap().value - 4.0 * m * m).abs() < 1e-12);

        // Mixed tensor: only violating entries carry gradient.
        let s = Tensor::from_vec(&[4], vec![2.0, 0.5, -0.2, -2.0]).unwrap();
        let t = Tensor::from_vec(&[4], vec![1.0, 1.0, -1.0, -1.0]).unwrap();
        let l = ab_loss(&s, &t, 1.0).unwrap();
        assert!((l.value - (0.25 + 0.64) / 4.0).abs() < 1e-12);
        assert_eq!(l.grad.data()[0], 0.0);
        assert_eq!(l.grad.data()[3], 0.0);
    }

    #[test]
    fn aver_mkd_examples() {
        let o = rand_tensor(&[2, 4], 7);
        assert_eq!(aver_mkd_target(&[o.clone(), o.clone()]).unwrap(), o);
        let z = aver_mkd_target(&[o.clone(), o.scale(-1.0)]).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));
        let ts: Vec<Tensor> = (0..3).map(|i| rand_tensor(&[5], 10 + i)).collect();
        let m = aver_mkd_target(&ts).unwrap();
        for i in 0..5 {
            let want = (ts[0].data()[i] + ts[1].data()[i] + ts[2].data()[i]) / 3.0;
            assert!((m.data()[i] - want).abs() < 1e-15);
        }
        assert!(aver_mkd_target(&[o.clone()]).is_err());
        assert!(aver_mkd_target(&[o, Tensor::zeros(&[3])]).is_err());
    }

    fn fd_check(f: impl Fn(&Tensor) -> LossGrad, x: &Tensor) -> f64 {
        let g = f(x).grad;
        let mut worst: f64 = 0.0;
        for i in 0..x.numel() {
            let mut xp = x.clone();
            xp.data_mut()[i] += 1e-6;
            let mut xm = x.clone();
            xm.data_mut()[i] -= 1e-6;
            let fd = (f(&xp).value - f(&xm).value) / 2e-6;
            worst = worst.max((fd - g.data()[i]).abs() / fd.abs().max(g.data()[i].abs()).max(1e-4));
        }
        worst
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let t = rand_tensor(&[1, 2, 8, 8], 20);
        let s = rand_tensor(&[1, 2, 8, 8], 21);
        let cfg = SpectralConfig::new(2.0, 8, 8).unwrap();
        assert!(fd_check(|x| task_loss(x, &t).unwrap(), &s) < 1e-6);
        let kd = |x: &Tensor| {
            let k = kd_loss(x, &t, 0.3, &cfg).unwrap();
            LossGrad { value: k.value, grad: k.grad }
        };
        assert!(fd_check(kd, &s) < 1e-6);
        assert!(fd_check(|x| ab_loss(x, &t, 0.5).unwrap(), &s.scale(2.0)) < 1e-6);
    }
}
