use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use super::{BudisSpec, DesignData, FitResult, GibbsDraws};
use crate::error::{BudisError, Result};
use crate::pg::{pg_sample, PgParams};

/// Pólya-Gamma Gibbs sampler.
///
/// Each sweep draws
/// 1. `ω_i ~ PG(w̃_i n_i, x_i'β + g_i'η)`,
/// 2. `(β, η) ~ N(Q⁻¹Cᵀκ, Q⁻¹)` with `Q = CᵀΩC + D⁻¹`, `C = [X G]`,
/// 3. `σ²_η ~ IG(a + h/2, b + η'η/2)`,
///
/// and keeps every `thin`-th sweep after `burn_in`. With `h = 0` step 3 draws
/// from the prior.
pub fn gibbs_fit<R: Rng + ?Sized>(data: &DesignData, spec: &BudisSpec, rng: &mut R) -> Result<FitResult> {
    spec.validate()?;
    let settings = spec.gibbs;
    let (n, p, h) = (data.n(), data.p(), data.h());
    let d = p + h;
    let c = data.combined();
    let shapes = data.pg_shapes();
    let kappa = data.kappa();
    let ck = c.tr_mul(&kappa);
    let pg_params = shapes
        .iter()
        .map(|&b| PgParams::new(b, 0.0))
        .collect::<Result<Vec<_>>>()?;

    let kept = (settings.iterations - settings.burn_in) / settings.thin;
    let mut theta_draws = DMatrix::zeros(kept, d);
    let mut sigma2_draws = Vec::with_capacity(kept);

    let mut theta = DVector::zeros(d);
    let mut sigma2_eta = 1.0;
    let mut omega = DVector::zeros(n);
    let mut scaled = c.clone();

    for iter in 0..settings.iterations {
        let psi = &c * &theta;
        for i in 0..n {
            let params = PgParams::new(pg_params[i].shape(), psi[i])?;
            omega[i] = pg_sample(params, rng);
        }

        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            let s = omega[i].sqrt();
            row.copy_from(&(c.row(i) * s));
        }
        let mut precision = scaled.tr_mul(&scaled);
        for j in 0..d {
            precision[(j, j)] += if j < p {
                1.0 / spec.sigma2_beta
            } else {
                1.0 / sigma2_eta
            };
        }
        let chol = precision.cholesky().ok_or(BudisError::NotPositiveDefinite)?;
        let mean = chol.solve(&ck);
        let eps = DVector::from_fn(d, |_, _| StandardNormal.sample(rng));
        let offset = chol
            .l_dirty()
            .tr_solve_lower_triangular(&eps)
            .ok_or(BudisError::NotPositiveDefinite)?;
        theta = mean + offset;

        let eta_sq = theta.rows(p, h).norm_squared();
        sigma2_eta = draw_inverse_gamma(spec.a + 0.5 * h as f64, spec.b + 0.5 * eta_sq, rng)?;

        if iter >= settings.burn_in && (iter - settings.burn_in + 1) % settings.thin == 0 {
            let row = sigma2_draws.len();
            theta_draws.set_row(row, &theta.transpose());
            sigma2_draws.push(sigma2_eta);
        }
    }
    log::debug!(
        "gibbs: {} sweeps, {} retained, n={n} p={p} h={h}",
        settings.iterations,
        kept
    );
    Ok(FitResult::Gibbs(GibbsDraws {
        p,
        h,
        theta: theta_draws,
        sigma2_eta: sigma2_draws,
    }))
}

/// `IG(shape, rate)` as the reciprocal of a `Gamma(shape, 1/rate)` draw.
pub(crate) fn draw_inverse_gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> Result<f64> {
    let g = Gamma::new(shape, 1.0 / rate)
        .map_err(|e| BudisError::invalid(format!("inverse gamma ({shape}, {rate}): {e}")))?;
    let draw: f64 = g.sample(rng);
    if draw > 0.0 {
        Ok(1.0 / draw)
    } else {
        // Gamma underflow for tiny shapes; treat as an enormous variance.
        Ok(f64::MAX)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::GibbsSettings;
    use crate::rng::stream;

    #[test]
    fn draw_count_follows_thinning() {
        let data = DesignData::empty(1, 0);
        let spec = BudisSpec {
            gibbs: GibbsSettings {
                iterations: 50,
                burn_in: 10,
                thin: 4,
                seed: 0,
            },
            ..Default::default()
        };
        let fit = gibbs_fit(&data, &spec, &mut stream(3)).unwrap();
        assert_eq!(fit.draw_count(), Some(10));
    }

    #[test]
    fn empty_data_samples_the_prior() {
        let data = DesignData::empty(2, 0);
        let spec = BudisSpec {
            sigma2_beta: 4.0,
            gibbs: GibbsSettings {
                iterations: 10_001,
                burn_in: 1,
                thin: 1,
                seed: 0,
            },
            ..Default::default()
        };
        let fit = gibbs_fit(&data, &spec, &mut stream(8)).unwrap();
        let mean = fit.posterior_mean();
        let var = fit.posterior_variance();
        // SE of the mean is 2/100; SE of the variance ≈ 4·sqrt(2/10⁴)
        for j in 0..2 {
            assert!(mean[j].abs() < 3.0 * 0.02, "mean {}", mean[j]);
            assert!(
                (var[j] - 4.0).abs() < 3.0 * 4.0 * (2.0f64 / 1e4).sqrt(),
                "var {}",
                var[j]
            );
        }
    }

    #[test]
    fn inverse_gamma_closed_form_moments() {
        // IG(a, b) has mean b/(a-1); a = 6, b = 10 → mean 2, var 1
        let mut rng = stream(4);
        let n = 100_000;
        let draws: Vec<f64> = (0..n)
            .map(|_| draw_inverse_gamma(6.0, 10.0, &mut rng).unwrap())
            .collect();
        let mean = draws.iter().sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() < 3.0 * (1.0 / n as f64).sqrt() * 1.5);
        assert!(draws.iter().all(|v| *v > 0.0));
    }

    #[test]
    fn collinear_design_is_not_silently_ridged() {
        // Two identical columns are still PD thanks to the prior; a huge
        // prior variance eventually is not.
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, 1.0, 1.0, 1.0]);
        let data = DesignData::unweighted(x, DMatrix::zeros(3, 0), vec![0., 1., 1.], vec![1.; 3]).unwrap();
        let spec = BudisSpec {
            sigma2_beta: 1e300,
            gibbs: GibbsSettings {
                iterations: 5,
                burn_in: 0,
                thin: 1,
                seed: 0,
            },
            ..Default::default()
        };
        assert!(matches!(
            gibbs_fit(&data, &spec, &mut stream(1)),
            Err(BudisError::NotPositiveDefinite)
        ));
    }
}
