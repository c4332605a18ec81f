//! Exact filtering, smoothing and likelihood for the linear-Gaussian model.

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::numeric::normal_log_density;

/// Output of the scalar Kalman filter. Index `t` refers to stage `t`
/// (0-based).
#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState {
    /// `E(X_t | Y_{0..t-1})`
    pub pred_mean: Vec<f64>,
    pub pred_var: Vec<f64>,
    /// `E(X_t | Y_{0..=t})`
    pub filt_mean: Vec<f64>,
    pub filt_var: Vec<f64>,
    /// `ln p(Y_0, ..., Y_{U-1})`
    pub log_likelihood: f64,
}

impl KalmanState {
    pub fn len(&self) -> usize {
        self.filt_mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filt_mean.is_empty()
    }

    /// Mean and variance of the state one step past the last observation.
    pub fn next_predictive(&self, params: &ModelParams) -> (f64, f64) {
        let last = self.len() - 1;
        (params.a * self.filt_mean[last], params.a * params.a * self.filt_var[last] + params.innovation_var())
    }
}

/// Output of the Rauch-Tung-Striebel smoother.
#[derive(Debug, Clone, PartialEq)]
pub struct SmootherState {
    /// `E(X_u | Y_{0..U})`
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Run the Kalman filter from the stationary prior `N(0, sigma_x2)`.
pub fn kalman_filter(params: &ModelParams, observations: &[f64]) -> Result<KalmanState> {
    params.validate()?;
    if observations.is_empty() {
        return Err(Error::InvalidConfig("Kalman filter needs at least one observation".into()));
    }
    let n = observations.len();
    let q = params.innovation_var();
    let r = params.sigma_y2;
    let mut st = KalmanState {
        pred_mean: Vec::with_capacity(n),
        pred_var: Vec::with_capacity(n),
        filt_mean: Vec::with_capacity(n),
        filt_var: Vec::with_capacity(n),
        log_likelihood: 0.0,
    };
    let (mut m, mut p) = (0.0, params.sigma_x2);
    for (t, &y) in observations.iter().enumerate() {
        if t > 0 {
            m *= params.a;
            p = params.a * params.a * p + q;
        }
        st.pred_mean.push(m);
        st.pred_var.push(p);
        let s = p + r;
        st.log_likelihood += normal_log_density(y, m, s);
        let gain = p / s;
        m += gain * (y - m);
        p *= 1.0 - gain;
        st.filt_mean.push(m);
        st.filt_var.push(p);
    }
    Ok(st)
}

/// Backward RTS pass over a filter run on the same observations.
pub fn rts_smoother(params: &ModelParams, filter: &KalmanState) -> SmootherState {
    let n = filter.len();
    let mut mean = filter.filt_mean.clone();
    let mut var = filter.filt_var.clone();
    for t in (0..n.saturating_sub(1)).rev() {
        let j = filter.filt_var[t] * params.a / filter.pred_var[t + 1];
        mean[t] = filter.filt_mean[t] + j * (mean[t + 1] - filter.pred_mean[t + 1]);
        var[t] = filter.filt_var[t] + j * j * (var[t + 1] - filter.pred_var[t + 1]);
    }
    SmootherState { mean, var }
}
