use rand::RngCore;
use rand_distr::{Distribution, Exp};

use super::SimError;
use crate::time::SimDuration;

/// Exponential delay with mean `mu` seconds, rounded to whole microseconds.
pub fn sample_delay<R: RngCore + ?Sized>(rng: &mut R, mu: f64) -> Result<SimDuration, SimError> {
    if !(mu.is_finite() && mu > 0.0) {
        return Err(SimError::InvalidMean(mu));
    }
    let exp = Exp::new(1.0 / mu).map_err(|_| SimError::InvalidMean(mu))?;
    Ok(SimDuration::from_secs_f64(exp.sample(rng)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{DetPrg, Seed};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn monte_carlo_mean() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let n = 100_000;
        let total: f64 = (0..n).map(|_| sample_delay(&mut rng, 0.5).unwrap().as_secs_f64()).sum();
        let mean = total / n as f64;
        assert!((mean - 0.5).abs() / 0.5 < 0.02, "mean {mean}");
    }

    #[test]
    fn deterministic_under_prg() {
        let a: Vec<_> = {
            let mut p = DetPrg::new(&Seed([3; 32]));
            (0..50).map(|_| sample_delay(&mut p, 0.05).unwrap()).collect()
        };
        let mut p = DetPrg::new(&Seed([3; 32]));
        let b: Vec<_> = (0..50).map(|_| sample_delay(&mut p, 0.05).unwrap()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn rejects_degenerate_mean() {
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        assert!(sample_delay(&mut rng, 0.0).is_err());
        assert!(sample_delay(&mut rng, -1.0).is_err());
        assert!(sample_delay(&mut rng, f64::NAN).is_err());
    }
}
