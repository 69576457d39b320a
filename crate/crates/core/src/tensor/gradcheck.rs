//! Central-difference validation harness for the backward pass.

use super::{Graph, NodeId, Tensor};
use crate::error::{Error, Result};

/// Compare the analytic gradient of a scalar-valued function against central
/// finite differences at `point`.
///
/// `build` reconstructs the computation from scratch each call: it receives a
/// fresh graph and the leaf node holding the (possibly perturbed) point, and
/// returns the scalar loss node. Returns the maximum over coordinates of
/// `|analytic - numeric| / (|analytic| + |numeric| + 1e-12)`.
pub fn finite_difference_check<F>(build: F, point: &Tensor, step: f64) -> Result<f64>
where
    F: Fn(&mut Graph, NodeId) -> Result<NodeId>,
{
    assert!(step > 0.0, "finite difference step must be positive");

    let eval = |data: &[f64]| -> Result<f64> {
        let mut g = Graph::new();
        let leaf = g.leaf(Tensor::new(point.shape.clone(), data.to_vec()));
        let loss = build(&mut g, leaf)?;
        let t = g.value(loss);
        if !t.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: t.shape.clone(),
            });
        }
        let v = t.item();
        if v.is_nan() {
            return Err(Error::NonFinite {
                context: "finite_difference_check: function output".into(),
            });
        }
        Ok(v)
    };

    // Analytic gradient at the unperturbed point.
    let analytic = {
        let mut g = Graph::new();
        let leaf = g.leaf(point.clone().with_grad());
        let loss = build(&mut g, leaf)?;
        let t = g.value(loss);
        if !t.is_scalar() {
            return Err(Error::NonScalarLoss {
                shape: t.shape.clone(),
            });
        }
        if t.item().is_nan() {
            return Err(Error::NonFinite {
                context: "finite_difference_check: function output".into(),
            });
        }
        g.backward(loss)?;
        g.grad(leaf).expect("leaf gradient").to_vec()
    };

    let mut max_rel = 0.0f64;
    let mut data = point.data.clone();
    for i in 0..data.len() {
        let orig = data[i];
        data[i] = orig + step;
        let plus = eval(&data)?;
        data[i] = orig - step;
        let minus = eval(&data)?;
        data[i] = orig;
        let numeric = (plus - minus) / (2.0 * step);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + numeric.abs() + 1e-12);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
