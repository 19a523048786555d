use super::{check_dims, ClientConfig, ClientError};
use crate::svm::{dual_norm, hinge_at, DatasetView, GlobalModel, SvmError};

/// Local worst-case hinge risk over the Wasserstein ball, via its dual
///
/// ```text
/// min_{lambda >= ||w||_*}  eps * lambda + 1/N sum_n max{ l(w; x_n, y_n), l(w; x_n, -y_n) - kappa * lambda }
/// ```
///
/// which is piecewise linear and convex in `lambda`, so the minimum is found
/// exactly from the sorted breakpoints. Needs no support assumption.
pub fn worst_case_risk_dual(w: &GlobalModel, data: &DatasetView, cfg: &ClientConfig) -> Result<f64, ClientError> {
    worst_case_risk_dual_with_lambda(w, data, cfg).map(|(v, _)| v)
}

/// As [`worst_case_risk_dual`], also returning the minimizing `lambda`.
pub fn worst_case_risk_dual_with_lambda(
    w: &GlobalModel,
    data: &DatasetView,
    cfg: &ClientConfig,
) -> Result<(f64, f64), ClientError> {
    check_dims(w.dim(), data.dim())?;
    if data.is_empty() {
        return Err(SvmError::EmptyDataset.into());
    }
    let n = data.len() as f64;
    let lambda0 = dual_norm(&w.w, cfg.norm);
    let pieces: Vec<(f64, f64)> = data
        .samples()
        .iter()
        .map(|s| {
            let y = s.y.sign();
            (hinge_at(&w.w, &s.x, y), hinge_at(&w.w, &s.x, -y))
        })
        .collect();

    let lambda = if cfg.kappa > 0.0 {
        // right slope at lambda is eps - kappa/N * #{b_n > lambda}
        let mut breaks: Vec<f64> = pieces.iter().map(|(lp, lm)| (lm - lp) / cfg.kappa).collect();
        breaks.sort_by(|a, b| b.total_cmp(a));
        let allowed = (n * cfg.epsilon / cfg.kappa).floor();
        if allowed >= n {
            lambda0
        } else {
            breaks[allowed as usize].max(lambda0)
        }
    } else {
        lambda0
    };
    let value = cfg.epsilon * lambda
        + pieces.iter().map(|&(lp, lm)| lp.max(lm - cfg.kappa * lambda)).sum::<f64>() / n;
    Ok((value, lambda))
}
