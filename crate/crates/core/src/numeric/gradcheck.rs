use super::{Gradients, ParamId, ParamStore};
use crate::error::{Error, Result};

/// Worst-case agreement between analytic and central-difference gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Block name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub entries_checked: usize,
}

/// Relative error, falling back to absolute error when both magnitudes
/// are below `1e-8`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    let denom = analytic.abs().max(numeric.abs());
    if denom < 1e-8 {
        diff
    } else {
        diff / denom
    }
}

/// Compares `loss_fn`'s analytic gradient against `(f(θ+h) − f(θ−h)) / 2h`
/// for every entry of the listed blocks (all blocks when `blocks` is
/// empty). `loss_fn` returns the loss and its analytic gradient at the
/// store it is given.
pub fn grad_check<F>(
    loss_fn: F,
    params: &ParamStore,
    blocks: &[ParamId],
    h: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&ParamStore) -> Result<(f64, Gradients)>,
{
    if h <= 0.0 {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let (base, analytic) = loss_fn(params)?;
    if !base.is_finite() {
        return Err(Error::Numeric("loss is not finite at the base point".into()));
    }
    let ids: Vec<ParamId> = if blocks.is_empty() {
        params.ids().collect()
    } else {
        blocks.to_vec()
    };

    let mut probe = params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst: None,
        entries_checked: 0,
    };
    for id in ids {
        for flat in 0..params.get(id).data.len() {
            let original = params.get(id).data[flat];
            probe.get_mut(id).data[flat] = original + h;
            let (plus, _) = loss_fn(&probe)?;
            probe.get_mut(id).data[flat] = original - h;
            let (minus, _) = loss_fn(&probe)?;
            probe.get_mut(id).data[flat] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss is not finite when probing `{}`[{flat}]",
                    params.get(id).name
                )));
            }
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic.entry(params, id, flat), numeric);
            report.entries_checked += 1;
            if err > report.max_relative_error || report.worst.is_none() {
                report.max_relative_error = err;
                report.worst = Some((params.get(id).name.clone(), flat));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::Tape;

    fn quadratic(store: &ParamStore) -> Result<(f64, Gradients)> {
        let id = store.find("theta").unwrap();
        let mut tape = Tape::new(store);
        let root = tape.sum_squares(id);
        Ok((tape.scalar(root), tape.backward(root)))
    }

    #[test]
    fn quadratic_is_exact() {
        let mut store = ParamStore::new();
        store.add("theta", 2, 1, vec![1.0, 2.0], false).unwrap();
        let report = grad_check(quadratic, &store, &[], 1e-5).unwrap();
        assert_eq!(report.entries_checked, 2);
        assert!(report.max_relative_error <= 1e-8, "{report:?}");
    }

    #[test]
    fn constant_loss_has_zero_error() {
        let mut store = ParamStore::new();
        store.add("theta", 3, 1, vec![1.0, -2.0, 0.5], false).unwrap();
        let constant = |s: &ParamStore| Ok((3.0, Gradients::for_store(s)));
        let report = grad_check(constant, &store, &[], 1e-5).unwrap();
        assert_eq!(report.max_relative_error, 0.0);
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let mut store = ParamStore::new();
        store.add("theta", 1, 1, vec![0.0], false).unwrap();
        let blowup = |s: &ParamStore| {
            let v = s.get(ParamId(0)).data[0];
            Ok((if v > 0.0 { f64::INFINITY } else { 0.0 }, Gradients::for_store(s)))
        };
        assert!(matches!(grad_check(blowup, &store, &[], 1e-5), Err(Error::Numeric(_))));
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut store = ParamStore::new();
        store.add("theta", 1, 1, vec![1.5], false).unwrap();
        let wrong = |s: &ParamStore| {
            let (l, mut g) = quadratic(s)?;
            g.scale(2.0);
            Ok((l, g))
        };
        let report = grad_check(wrong, &store, &[], 1e-5).unwrap();
        assert!(report.max_relative_error > 0.4);
    }

    #[test]
    fn relative_error_falls_back_to_absolute() {
        assert_eq!(relative_error(0.0, 1e-9), 1e-9);
        assert!((relative_error(1.0, 1.1) - 0.1 / 1.1).abs() < 1e-15);
    }
}
