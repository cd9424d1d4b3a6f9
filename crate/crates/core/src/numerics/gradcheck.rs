use super::params::ParamStore;
use super::tape::{Tape, Var};
use super::NumericsError;

/// Denominator floor of the relative error, so gradients that are zero on
/// both sides compare by absolute difference.
pub const REL_ERR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    /// Elements sampled per parameter; `None` checks every element.
    pub per_param: Option<usize>,
    /// Only parameters whose name starts with one of these prefixes.
    pub prefixes: Vec<String>,
    /// When set, an element whose error exceeds this is re-examined for a
    /// kink (see [`grad_check`]).
    pub kink_tolerance: Option<f64>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            h: 1e-5,
            per_param: Some(8),
            prefixes: Vec::new(),
            kink_tolerance: None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and element index of the worst case.
    pub worst: Option<(String, usize)>,
    /// Tape and finite-difference gradients at the worst element.
    pub worst_pair: (f64, f64),
    pub checked: usize,
    /// Elements excluded because a kink lies within the step.
    pub kinks: usize,
}

/// `|a − n| / max(|a|, |n|, REL_ERR_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

/// Compares the tape gradient of `loss` against central differences
/// `(f(x+h) − f(x−h)) / 2h` on sampled parameter elements.
///
/// `loss` records a scalar on a fresh tape from the current parameter
/// values. Existing gradients in `store` are cleared.
///
/// With `kink_tolerance` set, an element that fails it is excluded and
/// counted in `kinks` when its one-sided slopes disagree beyond the
/// tolerance while a central difference at `h / 100` agrees with the tape
/// gradient: the loss is not differentiable within `±h` there. A wrong
/// gradient fails at every step size and is still reported.
pub fn grad_check<F>(
    store: &mut ParamStore,
    mut loss: F,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NumericsError>
where
    F: FnMut(&mut Tape, &ParamStore) -> Result<Var, NumericsError>,
{
    store.zero_grads();
    {
        let mut tape = Tape::new();
        let v = loss(&mut tape, store)?;
        let f = tape.scalar(v);
        if !f.is_finite() {
            return Err(NumericsError::NonFiniteLoss(f));
        }
        tape.backward(v, 1.0, store);
    }
    let mut eval = |store: &ParamStore| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let v = loss(&mut tape, store)?;
        let f = tape.scalar(v);
        if !f.is_finite() {
            return Err(NumericsError::NonFiniteLoss(f));
        }
        Ok(f)
    };

    let mut report = GradCheckReport::default();
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.get(id).name.clone();
        if !opts.prefixes.is_empty() && !opts.prefixes.iter().any(|p| name.starts_with(p)) {
            continue;
        }
        let n = store.value(id).len();
        let picks: Vec<usize> = match opts.per_param {
            Some(k) if k < n => (0..k)
                .map(|i| (i * n) / k + (i * 7919) % (n / k).max(1))
                .collect(),
            _ => (0..n).collect(),
        };
        for idx in picks {
            let analytic = store.grad(id).as_slice()[idx];
            let orig = store.value(id).as_slice()[idx];
            let mut at = |store: &mut ParamStore, x: f64| {
                store.value_mut(id).as_mut_slice()[idx] = x;
                let f = eval(store);
                store.value_mut(id).as_mut_slice()[idx] = orig;
                f
            };
            let up = at(store, orig + opts.h)?;
            let down = at(store, orig - opts.h)?;
            let numeric = (up - down) / (2.0 * opts.h);
            let err = relative_error(analytic, numeric);
            report.checked += 1;
            if let Some(tol) = opts.kink_tolerance.filter(|&t| err >= t) {
                let mid = at(store, orig)?;
                let (right, left) = ((up - mid) / opts.h, (mid - down) / opts.h);
                let fine = opts.h / 100.0;
                let fine_numeric =
                    (at(store, orig + fine)? - at(store, orig - fine)?) / (2.0 * fine);
                if relative_error(right, left) >= tol
                    && relative_error(analytic, fine_numeric) < tol
                {
                    report.kinks += 1;
                    continue;
                }
            }
            if report.worst.is_none() || err > report.max_rel_error {
                report.max_rel_error = err;
                report.worst = Some((name.clone(), idx));
                report.worst_pair = (analytic, numeric);
            }
        }
    }
    store.zero_grads();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;

    #[test]
    fn quadratic_is_exact() {
        let mut s = ParamStore::new();
        s.add("x", Matrix::column(&[0.5, -1.25, 3.0, 0.8]).unwrap())
            .unwrap();
        let id = s.id("x").unwrap();
        let report = grad_check(
            &mut s,
            |t, st| {
                let x = t.param(st, id);
                let sq = t.mul(x, x)?;
                let total = t.sum(sq);
                Ok(t.scale(total, 0.5))
            },
            &GradCheckOptions {
                per_param: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(report.checked, 4);
        assert!(report.max_rel_error < 1e-9, "{report:?}");
    }

    #[test]
    fn softmax_cross_entropy_composite() {
        let mut s = ParamStore::new();
        let id = s
            .add("z", Matrix::column(&[0.2, -1.0, 0.7, 1.5, -0.3]).unwrap())
            .unwrap();
        let report = grad_check(
            &mut s,
            |t, st| {
                let z = t.param(st, id);
                let p = t.softmax(z);
                // -ln p[2] written through the probability path
                let lp = t.log_softmax(z);
                let pick = t.pick(lp, 2)?;
                let pp = t.pick(p, 3)?;
                let both = t.add(pick, pp)?;
                Ok(t.scale(both, -1.0))
            },
            &GradCheckOptions {
                per_param: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{report:?}");
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut s = ParamStore::new();
        let id = s.add("x", Matrix::column(&[1.0]).unwrap()).unwrap();
        let err = grad_check(
            &mut s,
            |t, st| {
                let x = t.param(st, id);
                Ok(t.scale(x, f64::INFINITY))
            },
            &GradCheckOptions::default(),
        );
        assert!(matches!(err, Err(NumericsError::NonFiniteLoss(_))));
    }

    #[test]
    fn kinks_are_excluded_but_wrong_gradients_are_not() {
        let mut s = ParamStore::new();
        // 3e-6 sits inside ±h of the ReLU kink at zero.
        let id = s.add("x", Matrix::column(&[3e-6, 0.4]).unwrap()).unwrap();
        let relu = |t: &mut Tape, st: &ParamStore| {
            let x = t.param(st, id);
            let r = t.relu(x);
            Ok(t.sum(r))
        };
        let opts = GradCheckOptions {
            per_param: None,
            kink_tolerance: Some(1e-4),
            ..Default::default()
        };
        let report = grad_check(&mut s, relu, &opts).unwrap();
        assert_eq!((report.checked, report.kinks), (2, 1));
        assert!(report.max_rel_error < 1e-9);
        let plain = grad_check(
            &mut s,
            relu,
            &GradCheckOptions {
                per_param: None,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(plain.max_rel_error > 0.1);

        // relu(x)² with one factor detached: the tape gradient is half the
        // true one, which must never be excused as a kink.
        let wrong = |t: &mut Tape, st: &ParamStore| {
            let x = t.param(st, id);
            let r = t.relu(x);
            let detached = t.input(2, 1, t.value(r).to_vec())?;
            let sq = t.mul(r, detached)?;
            Ok(t.sum(sq))
        };
        let report = grad_check(&mut s, wrong, &opts).unwrap();
        assert_eq!(report.kinks, 0);
        assert!(report.max_rel_error > 0.1, "{report:?}");
    }
}
