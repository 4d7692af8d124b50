//! Uniform fit/predict interface over the three models.

use hmtmf::baselines::{sk_fit, sk_predict, SkModel, SkOptions};
use hmtmf::{
    build_noise_matrix, fit_egmtl, fit_hmtmf, predict, predict_mean, Experiment, FittedModel, Location,
    ModelError, Prediction,
};
use serde::{Deserialize, Serialize};

use crate::config::{FitSettings, Method};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum FittedMethod {
    Hmtmf { model: FittedModel },
    Egmtl { model: FittedModel, sigma_sq: f64 },
    Sk { models: Vec<SkModel> },
}

pub fn fit_method(method: Method, experiment: &Experiment, settings: &FitSettings) -> Result<FittedMethod> {
    Ok(match method {
        Method::Hmtmf => {
            let (model, _) = fit_hmtmf(experiment, &settings.hyper, settings.regression, settings.policy)?;
            FittedMethod::Hmtmf { model }
        }
        Method::Egmtl => {
            let (model, _, sigma_sq) = fit_egmtl(experiment, &settings.hyper, settings.regression)?;
            FittedMethod::Egmtl { model, sigma_sq }
        }
        Method::Sk => {
            experiment.validate()?;
            let opts = SkOptions::default();
            let models = experiment
                .tasks
                .iter()
                .map(|t| {
                    let noise = build_noise_matrix(t, &experiment.fidelities, settings.policy)?;
                    sk_fit(t, &noise, &opts)
                })
                .collect::<hmtmf::Result<Vec<_>>>()?;
            FittedMethod::Sk { models }
        }
    })
}

impl FittedMethod {
    pub fn method(&self) -> Method {
        match self {
            FittedMethod::Hmtmf { .. } => Method::Hmtmf,
            FittedMethod::Egmtl { .. } => Method::Egmtl,
            FittedMethod::Sk { .. } => Method::Sk,
        }
    }

    /// Learned homoscedastic noise variance, for the baseline that has one.
    pub fn noise_variance(&self) -> Option<f64> {
        match self {
            FittedMethod::Egmtl { sigma_sq, .. } => Some(*sigma_sq),
            _ => None,
        }
    }

    fn sk_model(models: &[SkModel], task_id: usize) -> Result<&SkModel> {
        Ok(models
            .iter()
            .find(|m| m.task_id == task_id)
            .ok_or(ModelError::UnknownTask(task_id))?)
    }

    pub fn predict(&self, task_id: usize, x: &[Location], basis: &[Vec<f64>]) -> Result<Prediction> {
        Ok(match self {
            FittedMethod::Hmtmf { model } | FittedMethod::Egmtl { model, .. } => {
                predict(model, task_id, x, basis, false)?
            }
            FittedMethod::Sk { models } => sk_predict(Self::sk_model(models, task_id)?, x, basis)?,
        })
    }

    pub fn predict_mean(&self, task_id: usize, x: &[Location], basis: &[Vec<f64>]) -> Result<Vec<f64>> {
        Ok(match self {
            FittedMethod::Hmtmf { model } | FittedMethod::Egmtl { model, .. } => {
                predict_mean(model, task_id, x, basis)?
            }
            FittedMethod::Sk { models } => sk_predict(Self::sk_model(models, task_id)?, x, basis)?.mean,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use hmtmf::synth::{gen_1d_tasks, Bench1DConfig};

    #[test]
    fn every_method_fits_and_predicts_the_1d_benchmark() {
        let exp = gen_1d_tasks(&Bench1DConfig::with_seed(11)).unwrap().experiment;
        let settings = FitSettings::one_d();
        let x = vec![vec![2.5], vec![12.0]];
        let basis = vec![vec![1.0, 2.5], vec![1.0, 12.0]];
        for m in Method::ALL {
            let fitted = fit_method(m, &exp, &settings).unwrap();
            assert_eq!(fitted.method(), m);
            let p = fitted.predict(2, &x, &basis).unwrap();
            assert_eq!(p.mean.len(), 2);
            assert!(p.mean.iter().chain(&p.variance).all(|v| v.is_finite()));
            assert!(p.variance.iter().all(|&v| v >= 0.0));
            assert_eq!(fitted.predict_mean(2, &x, &basis).unwrap(), p.mean);
            assert_eq!(fitted.noise_variance().is_some(), m == Method::Egmtl);
        }
    }

    #[test]
    fn unknown_task_is_an_error() {
        let exp = gen_1d_tasks(&Bench1DConfig::with_seed(1)).unwrap().experiment;
        let fitted = fit_method(Method::Sk, &exp, &FitSettings::one_d()).unwrap();
        assert!(fitted.predict(9, &[vec![1.0]], &[vec![1.0, 1.0]]).is_err());
    }
}
