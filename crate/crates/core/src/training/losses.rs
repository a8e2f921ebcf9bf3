use crate::error::{Error, Result};

/// One rendered color and its target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotoTerm {
    pub pred: [f64; 3],
    pub gt: [f64; 3],
}

impl PhotoTerm {
    pub fn squared_error(&self) -> f64 {
        (0..3)
            .map(|k| {
                let e = self.pred[k] - self.gt[k];
                e * e
            })
            .sum()
    }
}

/// Photometric terms of one dynamic ray at `t` and, where the neighbor frame
/// exists, at `t − 1` and `t + 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneFlowTerms {
    pub current: PhotoTerm,
    pub prev: Option<PhotoTerm>,
    pub next: Option<PhotoTerm>,
}

impl SceneFlowTerms {
    pub fn squared_error(&self) -> f64 {
        self.current.squared_error()
            + self.prev.map_or(0.0, |p| p.squared_error())
            + self.next.map_or(0.0, |p| p.squared_error())
    }
}

/// Mean over rays of `‖C − C_gt‖²`; zero for an empty set.
pub fn loss_static(pred: &[[f64; 3]], gt: &[[f64; 3]]) -> Result<f64> {
    if pred.len() != gt.len() {
        return Err(Error::Usage(format!(
            "{} predictions for {} targets",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Ok(0.0);
    }
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(&pred, &gt)| PhotoTerm { pred, gt }.squared_error())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean over dynamic rays of the summed present photometric terms.
pub fn loss_sceneflow(terms: &[SceneFlowTerms]) -> f64 {
    if terms.is_empty() {
        return 0.0;
    }
    terms.iter().map(SceneFlowTerms::squared_error).sum::<f64>() / terms.len() as f64
}

/// Unweighted sum of the two losses.
pub fn loss_total(l_static: f64, l_sceneflow: f64) -> f64 {
    l_static + l_sceneflow
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn term(pred: [f64; 3], gt: [f64; 3]) -> PhotoTerm {
        PhotoTerm { pred, gt }
    }

    #[test]
    fn static_examples() {
        assert_eq!(loss_static(&[[0.3; 3]], &[[0.3; 3]]).unwrap(), 0.0);
        let one = loss_static(&[[0.6, 0.5, 0.5]], &[[0.5; 3]]).unwrap();
        assert!((one - 0.01).abs() < 1e-12);
        // per-ray squared errors 0.01 and 0.03
        let s3 = 0.03f64.sqrt();
        let two = loss_static(&[[0.1, 0.0, 0.0], [s3, 0.0, 0.0]], &[[0.0; 3]; 2]).unwrap();
        assert!((two - 0.02).abs() < 1e-12);
        assert_eq!(loss_static(&[], &[]).unwrap(), 0.0);
        assert!(matches!(loss_static(&[[0.0; 3]], &[]), Err(Error::Usage(_))));
    }

    #[test]
    fn sceneflow_examples() {
        assert_eq!(loss_sceneflow(&[]), 0.0);
        let center_only = SceneFlowTerms {
            current: term([0.2, 0.0, 0.0], [0.0; 3]),
            prev: None,
            next: None,
        };
        assert!((loss_sceneflow(&[center_only]) - 0.04).abs() < 1e-12);
        let off = |e2: f64| term([e2.sqrt(), 0.0, 0.0], [0.0; 3]);
        let three = SceneFlowTerms {
            current: off(0.01),
            prev: Some(off(0.02)),
            next: Some(off(0.03)),
        };
        assert!((loss_sceneflow(&[three]) - 0.06).abs() < 1e-12);
        let exact = SceneFlowTerms {
            current: term([0.4; 3], [0.4; 3]),
            prev: Some(term([0.1; 3], [0.1; 3])),
            next: None,
        };
        assert_eq!(loss_sceneflow(&[exact]), 0.0);
    }

    #[test]
    fn total_is_plain_sum() {
        assert_eq!(loss_total(0.0, 0.0), 0.0);
        assert_eq!(loss_total(0.5, 0.25), 0.75);
    }

    fn color() -> impl Strategy<Value = [f64; 3]> {
        prop::array::uniform3(0.0f64..1.0)
    }

    proptest! {
        #[test]
        fn losses_are_nonnegative_and_zero_only_at_gt(
            pairs in prop::collection::vec((color(), color()), 1..20)
        ) {
            let (pred, gt): (Vec<_>, Vec<_>) = pairs.iter().copied().unzip();
            let l = loss_static(&pred, &gt).unwrap();
            prop_assert!(l >= 0.0);
            prop_assert_eq!(l == 0.0, pred == gt);
            let terms: Vec<SceneFlowTerms> = pairs
                .iter()
                .map(|&(p, g)| SceneFlowTerms { current: term(p, g), prev: Some(term(g, g)), next: None })
                .collect();
            let sf = loss_sceneflow(&terms);
            prop_assert!((sf - l).abs() < 1e-12);
            prop_assert!(loss_total(l, sf) >= 0.0);
        }
    }
}
