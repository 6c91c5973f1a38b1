//! Normalize a noisy sinusoid-plus-ramp, split it into trend and season,
//! and measure how much of it neither part explains.

use onecast::data::synthetic::{sin_ramp, SinRampSpec};
use onecast::decomposition::{decompose_values, denormalize, residual_component_rate};
use onecast::seasonal::{default_bank, evaluate_basis, fit_weights};

fn main() -> onecast::Result<()> {
    let series = sin_ramp(&SinRampSpec { len: 96, channels: 1, ..SinRampSpec::default() });
    let dec = decompose_values(&series, 1e-5, 25)?;
    println!("mu {:.3}  sigma {:.3}", dec.stats.mu[0], dec.stats.sigma[0]);

    let back = denormalize(&dec.trend.zip_map(&dec.season, |a, b| a + b)?, &dec.stats)?;
    let gap = back.data().iter().zip(series.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("round trip max error {gap:.1e}");

    let basis = default_bank(&[24.0])?;
    let fitted = evaluate_basis(&basis, &fit_weights(&basis, &dec.season, 0)?, 0, 96)?;
    let residual = dec.season.zip_map(&fitted, |a, b| a - b)?;
    println!("residual component rate {:.3}", residual_component_rate(&dec.trend, &fitted, &residual)?);

    println!(" t   value   trend  season");
    for t in (0..96).step_by(12) {
        println!("{t:>2} {:>7.3} {:>7.3} {:>7.3}", series.get(t, 0), dec.trend.get(t, 0), dec.season.get(t, 0));
    }
    Ok(())
}
